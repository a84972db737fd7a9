//! The work behind each subcommand. Every command writes into one output
//! directory:
//!
//! ```text
//! <out>/config.toml          effective config
//! <out>/manifest.json
//! <out>/tasks.jsonl          benchmark
//! <out>/initial.ckpt, stage1.ckpt, stage2.ckpt
//! <out>/episodes.jsonl       episodes behind the final eval-head fit
//! <out>/pairs.jsonl          preference pairs, all rounds
//! <out>/outcomes.jsonl       per-task greedy outcomes
//! <out>/metrics/<stage>.jsonl
//! <out>/ablation/...         ablate only
//! <out>/search_tree.jsonl    search-debug only
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scmcts_core::env::{generate_task, ReasoningState, Task};
use scmcts_core::pipeline::{
    accuracy_of, run_ablation, task_outcomes, turn_accuracies, AblationVariant, EvalReport, RunConfig, TaskOutcome,
};
use scmcts_core::policy::PolicyParams;
use scmcts_core::prefopt::run_stage2;
use scmcts_core::search::run_search;
use scmcts_core::selfcorrect::run_stage1;

use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::dump_config;
use crate::error::{io_error, Result};
use crate::formats::{
    read_tasks, tree_records, write_jsonl, write_tasks, EpisodeRecord, PairRecord,
};
use crate::manifest::Manifest;
use crate::metrics::{MetricsDir, MetricsRecord};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunPaths {
    pub root: PathBuf,
}

impl RunPaths {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.json")
    }

    pub fn tasks(&self) -> PathBuf {
        self.root.join("tasks.jsonl")
    }

    pub fn checkpoint(&self, name: &str) -> PathBuf {
        self.root.join(format!("{name}.ckpt"))
    }

    pub fn episodes(&self) -> PathBuf {
        self.root.join("episodes.jsonl")
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("pairs.jsonl")
    }

    pub fn outcomes(&self) -> PathBuf {
        self.root.join("outcomes.jsonl")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }

    pub fn ablation(&self) -> PathBuf {
        self.root.join("ablation")
    }

    pub fn search_tree(&self) -> PathBuf {
        self.root.join("search_tree.jsonl")
    }
}

/// Output directory, config and metrics sinks of one invocation.
pub struct Session {
    pub config: RunConfig,
    pub seed: u64,
    pub paths: RunPaths,
    pub metrics: MetricsDir,
}

impl Session {
    pub fn open(config: RunConfig, seed: u64, out: &Path) -> Result<Self> {
        config.validate()?;
        std::fs::create_dir_all(out).map_err(io_error(out))?;
        let paths = RunPaths::new(out);
        std::fs::write(paths.config(), dump_config(&config)).map_err(io_error(paths.config()))?;
        Ok(Self {
            metrics: MetricsDir::new(&paths.metrics()),
            config,
            seed,
            paths,
        })
    }

    pub fn write_manifest(&self, command: &str, variant: Option<AblationVariant>) -> Result<()> {
        Manifest::new(command, self.seed, variant.map(AblationVariant::name), &self.config).write(&self.paths.manifest())
    }

    /// The benchmark from `tasks.jsonl` when present, otherwise freshly
    /// generated and written there.
    pub fn benchmark(&self) -> Result<Vec<Task>> {
        let path = self.paths.tasks();
        if path.exists() {
            read_tasks(&path)
        } else {
            self.gen_tasks()
        }
    }

    pub fn gen_tasks(&self) -> Result<Vec<Task>> {
        let tasks = self.config.benchmark()?;
        write_tasks(&self.paths.tasks(), &tasks)?;
        Ok(tasks)
    }

    pub fn initial(&self) -> Result<PolicyParams> {
        let params = PolicyParams::initial(self.seed, &self.config.policy);
        save_checkpoint(&params, &self.paths.checkpoint("initial"))?;
        Ok(params)
    }

    pub fn stage1(&mut self, initial: &PolicyParams) -> Result<PolicyParams> {
        let out = run_stage1(initial, &self.config.selfcorrect, &self.config.env, self.seed)?;
        for m in &out.metrics {
            self.metrics.emit(
                MetricsRecord::new("stage1", m.iteration as u64, self.seed)
                    .with("turn1_reward", m.turn1_reward)
                    .with("final_turn_reward", m.final_turn_reward)
                    .with("kl", m.kl),
            )?;
        }
        self.metrics.finish_stage("stage1")?;
        write_jsonl(&self.paths.episodes(), out.fit_episodes.iter().map(EpisodeRecord::from))?;
        save_checkpoint(&out.params, &self.paths.checkpoint("stage1"))?;
        Ok(out.params)
    }

    /// Stage II from `start`; `start` is also the verifier when the config
    /// enables verification.
    pub fn stage2(&mut self, start: &PolicyParams, heldout: &[Task]) -> Result<PolicyParams> {
        let verifier = self.config.search.verify_enabled.then_some(start);
        let out = run_stage2(
            start,
            verifier,
            self.seed,
            &self.config.env,
            &self.config.prefopt,
            &self.config.search,
            heldout,
        )?;
        for m in &out.metrics {
            self.metrics.emit(
                MetricsRecord::new("stage2", m.round as u64, self.seed)
                    .with("trees", m.trees as f64)
                    .with("pairs", m.pairs as f64)
                    .with("mean_loss", m.mean_loss)
                    .with("accuracy", m.accuracy),
            )?;
        }
        self.metrics.finish_stage("stage2")?;
        write_jsonl(&self.paths.pairs(), out.pairs.iter().flatten().map(PairRecord::from))?;
        save_checkpoint(&out.params, &self.paths.checkpoint("stage2"))?;
        Ok(out.params)
    }

    /// Greedy evaluation; writes per-task outcomes and returns the accuracy.
    pub fn eval(&mut self, params: &PolicyParams, benchmark: &[Task]) -> Result<f64> {
        let k = self.config.env.branching;
        let outcomes = task_outcomes(params, benchmark, k)?;
        let accuracy = accuracy_of(&outcomes)?;
        write_jsonl(&self.paths.outcomes(), &outcomes)?;
        let turns = turn_accuracies(params, benchmark, self.config.selfcorrect.retries, k)?;
        let mut record = MetricsRecord::new("eval", 0, self.seed).with("accuracy", accuracy);
        for (i, t) in turns.iter().enumerate() {
            record = record.with(&format!("turn{}_accuracy", i + 1), *t);
        }
        self.metrics.emit(record)?;
        self.metrics.finish_stage("eval")?;
        Ok(accuracy)
    }

    /// Latest checkpoint in the output directory, else the initial policy.
    pub fn latest_checkpoint(&self) -> Result<PolicyParams> {
        for name in ["stage2", "stage1", "initial"] {
            let path = self.paths.checkpoint(name);
            if path.exists() {
                return load_checkpoint(&path);
            }
        }
        Ok(PolicyParams::initial(self.seed, &self.config.policy))
    }

    /// gen-tasks, then each enabled stage, then eval.
    pub fn run_full(&mut self, variant: Option<AblationVariant>) -> Result<f64> {
        self.write_manifest("run", variant)?;
        let benchmark = self.gen_tasks()?;
        let mut params = self.initial()?;
        if self.config.pipeline.stage1 {
            params = self.stage1(&params)?;
        }
        if self.config.pipeline.stage2 {
            params = self.stage2(&params, &benchmark)?;
        }
        let accuracy = self.eval(&params, &benchmark)?;
        self.metrics.flush_all()?;
        Ok(accuracy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub variant: AblationVariant,
    pub seeds: Vec<u64>,
    pub accuracies: Vec<f64>,
    pub median_accuracy: f64,
    pub turn_accuracies: Vec<Option<Vec<f64>>>,
    pub median_turn2_accuracy: Option<f64>,
}

impl From<&EvalReport> for ReportRecord {
    fn from(r: &EvalReport) -> Self {
        Self {
            variant: r.variant,
            seeds: r.per_seed.iter().map(|s| s.seed).collect(),
            accuracies: r.accuracies(),
            median_accuracy: r.median_accuracy,
            turn_accuracies: r.per_seed.iter().map(|s| s.turn_accuracy.clone()).collect(),
            median_turn2_accuracy: r.median_turn2_accuracy,
        }
    }
}

pub fn outcome_path(root: &Path, variant: AblationVariant, seed: u64) -> PathBuf {
    root.join(variant.name()).join(format!("seed-{seed}.jsonl"))
}

/// Runs the ablation over `variants`, writing per-seed outcome logs, one
/// report line per variant and the shared benchmark.
pub fn ablate(config: &RunConfig, variants: &[AblationVariant], base_seed: u64, out: &Path) -> Result<Vec<EvalReport>> {
    let mut session = Session::open(config.clone(), base_seed, out)?;
    session.write_manifest("ablate", None)?;
    let mut shared = config.clone();
    shared.pipeline.benchmark_seed = base_seed;
    write_tasks(&session.paths.tasks(), &shared.benchmark()?)?;
    let reports = run_ablation(config, variants, base_seed)?;
    let root = session.paths.ablation();
    for report in &reports {
        for s in &report.per_seed {
            write_jsonl(&outcome_path(&root, report.variant, s.seed), &s.outcomes)?;
        }
        let mut record = MetricsRecord::new("ablation", 0, base_seed).with("median_accuracy", report.median_accuracy);
        for s in &report.per_seed {
            record = record.with(&format!("{}_seed{}_accuracy", report.variant.name(), s.seed), s.accuracy);
        }
        if let Some(t) = report.median_turn2_accuracy {
            record = record.with("median_turn2_accuracy", t);
        }
        record.stage = format!("ablation-{}", report.variant.name());
        session.metrics.emit(record)?;
    }
    session.metrics.flush_all()?;
    write_jsonl(&root.join("reports.jsonl"), reports.iter().map(ReportRecord::from))?;
    Ok(reports)
}

/// Recomputes an accuracy from a persisted outcome log.
pub fn accuracy_from_log(path: &Path) -> Result<f64> {
    let outcomes: Vec<TaskOutcome> = crate::formats::read_jsonl(path)?;
    Ok(accuracy_of(&outcomes)?)
}

/// Searches one generated task and dumps the tree, one node per line.
pub fn search_debug(session: &Session, params: &PolicyParams, difficulty: usize) -> Result<PathBuf> {
    let task = generate_task(session.seed, difficulty)?;
    let verifier = session.config.search.verify_enabled.then_some(params);
    let mut search = session.config.search;
    search.branching = session.config.env.branching;
    let tree = run_search(&task, &ReasoningState::root(task.id()), params, verifier, &search)?;
    let path = session.paths.search_tree();
    write_jsonl(&path, tree_records(&tree))?;
    Ok(path)
}
