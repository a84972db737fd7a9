//! Evaluation, run configuration and the four-way ablation.

use alloc::vec::Vec;
use core::fmt;

use crate::env::{
    apply_step, candidate_actions, generate_task_set, oracle_reward, EnvConfig, ReasoningState, Task, TaskId,
};
use crate::error::{invalid_argument, Error, Result};
use crate::policy::{greedy_choice, AttemptContext, PolicyConfig, PolicyParams};
use crate::prefopt::{run_stage2, DpoConfig, Stage2Outcome};
use crate::rng::SeededRng;
use crate::search::SearchConfig;
use crate::selfcorrect::{greedy_episode, run_stage1, Stage1Config, Stage1Outcome};

/// Greedy first-attempt decoding: the most probable candidate at every step.
pub fn greedy_decode(params: &PolicyParams, task: &Task, branching: usize) -> Result<ReasoningState> {
    let mut state = ReasoningState::root(task.id());
    for _ in 0..task.num_steps() {
        let candidates = candidate_actions(task, &state, branching)?;
        let pick = greedy_choice(params, task, &state, &candidates, &AttemptContext::First)?;
        state = apply_step(task, &state, candidates[pick])?;
    }
    Ok(state)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct TaskOutcome {
    pub task_id: TaskId,
    pub answer: i64,
    pub correct: bool,
}

pub fn task_outcomes(params: &PolicyParams, benchmark: &[Task], branching: usize) -> Result<Vec<TaskOutcome>> {
    benchmark
        .iter()
        .map(|task| {
            let state = greedy_decode(params, task, branching)?;
            let answer = *state.claimed.last().expect("tasks have at least one step");
            Ok(TaskOutcome {
                task_id: task.id(),
                answer,
                correct: oracle_reward(answer, task) == 1,
            })
        })
        .collect()
}

/// Fraction of outcomes marked correct.
pub fn accuracy_of(outcomes: &[TaskOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(invalid_argument("empty outcome list"));
    }
    Ok(outcomes.iter().filter(|o| o.correct).count() as f64 / outcomes.len() as f64)
}

/// Greedy accuracy on `benchmark`.
pub fn evaluate(params: &PolicyParams, benchmark: &[Task], branching: usize) -> Result<f64> {
    if benchmark.is_empty() {
        return Err(invalid_argument("empty benchmark"));
    }
    accuracy_of(&task_outcomes(params, benchmark, branching)?)
}

/// Greedy accuracy of each turn of an `l + 1`-attempt episode.
pub fn turn_accuracies(params: &PolicyParams, benchmark: &[Task], retries: usize, branching: usize) -> Result<Vec<f64>> {
    if benchmark.is_empty() {
        return Err(invalid_argument("empty benchmark"));
    }
    let mut solved = alloc::vec![0usize; retries + 1];
    for task in benchmark {
        let episode = greedy_episode(params, task, retries, branching)?;
        for (count, attempt) in solved.iter_mut().zip(&episode.attempts) {
            *count += usize::from(attempt.reward);
        }
    }
    Ok(solved.into_iter().map(|c| c as f64 / benchmark.len() as f64).collect())
}

/// Median; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(invalid_argument("median of nothing"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mid = sorted.len() / 2;
    Ok(if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum AblationVariant {
    Baseline,
    IscOnly,
    MctsDpoOnly,
    Ours,
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 4] = [Self::Baseline, Self::IscOnly, Self::MctsDpoOnly, Self::Ours];

    pub fn name(self) -> &'static str {
        match self {
            Self::Baseline => "baseline",
            Self::IscOnly => "isc-only",
            Self::MctsDpoOnly => "mcts-dpo-only",
            Self::Ours => "ours",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    /// `(stage1, stage2, verify_enabled)`.
    pub fn toggles(self) -> (bool, bool, bool) {
        match self {
            Self::Baseline => (false, false, false),
            Self::IscOnly => (true, false, false),
            Self::MctsDpoOnly => (false, true, false),
            Self::Ours => (true, true, true),
        }
    }

    /// `config` with exactly this variant's toggles applied.
    pub fn apply(self, config: &RunConfig) -> RunConfig {
        let (stage1, stage2, verify) = self.toggles();
        let mut out = config.clone();
        out.pipeline.stage1 = stage1;
        out.pipeline.stage2 = stage2;
        out.search.verify_enabled = verify;
        out
    }
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PipelineConfig {
    pub seeds: Vec<u64>,
    pub benchmark_size: usize,
    /// Seed of the shared evaluation benchmark.
    pub benchmark_seed: u64,
    pub stage1: bool,
    pub stage2: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seeds: alloc::vec![1, 2, 3],
            benchmark_size: 500,
            benchmark_seed: 0,
            stage1: true,
            stage2: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub search: SearchConfig,
    pub prefopt: DpoConfig,
    pub selfcorrect: Stage1Config,
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.search.validate()?;
        self.prefopt.validate()?;
        self.selfcorrect.validate()?;
        if self.search.branching != self.env.branching {
            return Err(Error::Config(alloc::format!(
                "search.branching ({}) must equal env.branching ({})",
                self.search.branching, self.env.branching
            )));
        }
        if self.pipeline.seeds.is_empty() {
            return Err(Error::Config("pipeline.seeds must not be empty".into()));
        }
        if self.pipeline.benchmark_size == 0 {
            return Err(Error::Config("pipeline.benchmark_size must be > 0".into()));
        }
        Ok(())
    }

    /// The shared evaluation benchmark.
    pub fn benchmark(&self) -> Result<Vec<Task>> {
        generate_task_set(
            &SeededRng::new(self.pipeline.benchmark_seed).split("benchmark"),
            self.pipeline.benchmark_size,
            &self.env,
        )
    }
}

/// Everything one training run produces.
#[derive(Debug, Clone, PartialEq)]
pub struct VariantRun {
    pub seed: u64,
    pub initial: PolicyParams,
    pub stage1: Option<Stage1Outcome>,
    pub stage2: Option<Stage2Outcome>,
    pub params: PolicyParams,
}

/// Trains from `PolicyParams::initial(seed)` through whichever stages
/// `config.pipeline` enables. Stage II gets `heldout` for its per-round
/// accuracy metric only.
pub fn run_variant(config: &RunConfig, seed: u64, heldout: &[Task]) -> Result<VariantRun> {
    config.validate()?;
    let initial = PolicyParams::initial(seed, &config.policy);
    let stage1 = if config.pipeline.stage1 {
        Some(run_stage1(&initial, &config.selfcorrect, &config.env, seed)?)
    } else {
        None
    };
    let after1 = stage1.as_ref().map_or(&initial, |s| &s.params);
    let stage2 = if config.pipeline.stage2 {
        let verifier = config.search.verify_enabled.then_some(after1);
        Some(run_stage2(
            after1,
            verifier,
            seed,
            &config.env,
            &config.prefopt,
            &config.search,
            heldout,
        )?)
    } else {
        None
    };
    let params = match (&stage2, &stage1) {
        (Some(s), _) => s.params.clone(),
        (None, Some(s)) => s.params.clone(),
        (None, None) => initial.clone(),
    };
    Ok(VariantRun {
        seed,
        initial,
        stage1,
        stage2,
        params,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedReport {
    pub seed: u64,
    pub accuracy: f64,
    /// Greedy accuracy of each turn when Stage I ran.
    pub turn_accuracy: Option<Vec<f64>>,
    pub outcomes: Vec<TaskOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub variant: AblationVariant,
    pub per_seed: Vec<SeedReport>,
    pub median_accuracy: f64,
    pub median_turn2_accuracy: Option<f64>,
}

impl EvalReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.per_seed.iter().map(|s| s.accuracy).collect()
    }
}

pub fn evaluate_run(config: &RunConfig, run: &VariantRun, benchmark: &[Task]) -> Result<SeedReport> {
    let outcomes = task_outcomes(&run.params, benchmark, config.env.branching)?;
    let turn_accuracy = if run.stage1.is_some() {
        Some(turn_accuracies(
            &run.params,
            benchmark,
            config.selfcorrect.retries,
            config.env.branching,
        )?)
    } else {
        None
    };
    Ok(SeedReport {
        seed: run.seed,
        accuracy: accuracy_of(&outcomes)?,
        turn_accuracy,
        outcomes,
    })
}

pub fn report(variant: AblationVariant, per_seed: Vec<SeedReport>) -> Result<EvalReport> {
    let accuracies: Vec<f64> = per_seed.iter().map(|s| s.accuracy).collect();
    let turn2: Option<Vec<f64>> = per_seed
        .iter()
        .map(|s| s.turn_accuracy.as_ref().and_then(|t| t.get(1).copied()))
        .collect();
    Ok(EvalReport {
        variant,
        median_accuracy: median(&accuracies)?,
        median_turn2_accuracy: turn2.map(|t| median(&t)).transpose()?,
        per_seed,
    })
}

/// Runs every variant over `variants` for each configured seed and evaluates
/// all of them on one shared benchmark drawn from `base_seed`.
pub fn run_ablation(config: &RunConfig, variants: &[AblationVariant], base_seed: u64) -> Result<Vec<EvalReport>> {
    config.validate()?;
    let mut shared = config.clone();
    shared.pipeline.benchmark_seed = base_seed;
    let benchmark = shared.benchmark()?;
    variants
        .iter()
        .map(|&variant| {
            let effective = variant.apply(&shared);
            let per_seed = effective
                .pipeline
                .seeds
                .iter()
                .map(|&seed| {
                    let run = run_variant(&effective, seed, &benchmark)?;
                    evaluate_run(&effective, &run, &benchmark)
                })
                .collect::<Result<Vec<_>>>()?;
            report(variant, per_seed)
        })
        .collect()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_task;
    use crate::policy::{step_feature, CheckpointTag, Role};

    fn tag() -> CheckpointTag {
        CheckpointTag {
            role: Role::Initial,
            seed: 0,
            revision: 0,
        }
    }

    #[test]
    fn empty_benchmark_is_rejected() {
        assert!(evaluate(&PolicyParams::zeros(tag()), &[], 4).is_err());
    }

    #[test]
    fn uniform_policy_near_chance_on_two_operands() {
        let config = EnvConfig {
            min_difficulty: 2,
            max_difficulty: 2,
            ..EnvConfig::default()
        };
        let bench = generate_task_set(&SeededRng::new(9), 500, &config).unwrap();
        let acc = evaluate(&PolicyParams::zeros(tag()), &bench, 4).unwrap();
        // All logits tie, so greedy takes candidate 0, whose slot is shuffled.
        assert!((acc - 0.25).abs() < 0.04, "{acc}");
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median(&[0.3, 0.1, 0.2]).unwrap(), 0.2);
        assert_eq!(median(&[0.4, 0.1, 0.2, 0.3]).unwrap(), 0.25);
        assert!(median(&[]).is_err());
    }

    #[test]
    fn variants_touch_only_their_toggles() {
        let base = RunConfig::default();
        for v in AblationVariant::ALL {
            let mut e = v.apply(&base);
            let (s1, s2, verify) = v.toggles();
            assert_eq!((e.pipeline.stage1, e.pipeline.stage2, e.search.verify_enabled), (s1, s2, verify));
            e.pipeline.stage1 = base.pipeline.stage1;
            e.pipeline.stage2 = base.pipeline.stage2;
            e.search.verify_enabled = base.search.verify_enabled;
            assert_eq!(e, base);
            assert_eq!(AblationVariant::from_name(v.name()), Some(v));
        }
    }

    #[test]
    fn mismatched_branching_is_a_config_error() {
        let mut c = RunConfig::default();
        c.search.branching = 3;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(RunConfig::default().validate().is_ok());
    }

    #[test]
    fn turn_accuracies_have_one_entry_per_attempt() {
        let t: Vec<Task> = (0..20).map(|s| generate_task(s, 3).unwrap()).collect();
        let mut p = PolicyParams::zeros(tag());
        p.step_weights[step_feature::BIAS] = 1.0;
        let acc = turn_accuracies(&p, &t, 2, 4).unwrap();
        assert_eq!(acc.len(), 3);
        assert!(acc.iter().all(|a| (0.0..=1.0).contains(a)));
    }
}
