//! Stage I: intrinsic self-correction.
//!
//! An episode is `l + 1` attempts at the same task. The first attempt sees
//! only the task; each later attempt is instructed to find and fix its
//! mistake and sees a summary of the attempt before it (its steps, per-step
//! self-evaluation, final answer and overall confidence). Training maximizes
//! the summed answer-checker reward over all attempts with REINFORCE, a
//! batch-mean baseline, and a KL penalty toward the frozen initial policy.
//! The evaluation head is fitted by logistic regression on prefixes of the
//! policy's own episodes, labelled by the answer checker.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::{
    apply_step, candidate_actions, generate_task_set, is_prefix_correct, oracle_reward, EnvConfig,
    ReasoningState, StepAction, Task, TaskId, TaskIndex,
};
use crate::error::{invalid_argument, Error, Result};
use crate::math::{sigmoid, solve_spd};
use crate::optim::{Optimizer, OptimizerKind};
use crate::policy::{
    eval_features, kl_grad, log_prob_grad, self_eval, step_distribution, AttemptContext, EvalPrompt,
    EvalVector, PolicyParams, RetrySummary, Role, StepVector, EVAL_FEATURES, STEP_FEATURES,
};
use crate::rng::SeededRng;

/// Ridge penalty of the evaluation-head fit; keeps separable data finite.
pub const EVAL_RIDGE: f64 = 1e-2;
const EVAL_NEWTON_STEPS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Baseline {
    #[default]
    BatchMean,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Stage1Config {
    /// Number of correction turns `l`; an episode has `l + 1` attempts.
    #[cfg_attr(feature = "serde", serde(alias = "l"))]
    pub retries: usize,
    pub kl_coefficient: f64,
    pub learning_rate: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub baseline: Baseline,
    /// Refit the evaluation head every this many iterations (0: only before
    /// and after training).
    pub eval_refit_interval: usize,
    /// Episodes harvested for each evaluation-head fit.
    pub eval_fit_episodes: usize,
    pub optimizer: OptimizerKind,
}

impl Default for Stage1Config {
    fn default() -> Self {
        Self {
            retries: 1,
            kl_coefficient: 0.05,
            learning_rate: 0.05,
            iterations: 200,
            batch_size: 32,
            baseline: Baseline::BatchMean,
            eval_refit_interval: 50,
            eval_fit_episodes: 256,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl Stage1Config {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.retries == 0 {
            return fail("selfcorrect.retries must be >= 1");
        }
        if !(self.kl_coefficient.is_finite() && self.kl_coefficient >= 0.0) {
            return fail("selfcorrect.kl_coefficient must be finite and >= 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("selfcorrect.learning_rate must be finite and >= 0");
        }
        if self.batch_size == 0 {
            return fail("selfcorrect.batch_size must be > 0");
        }
        if self.eval_fit_episodes == 0 {
            return fail("selfcorrect.eval_fit_episodes must be > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Instruction {
    /// "There may be a mistake in the previous attempt; find it and improve."
    FindMistakeAndRetry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttemptRecord {
    /// 1-based turn number.
    pub turn_index: usize,
    pub steps: Vec<StepAction>,
    /// Candidate index of each step.
    pub chosen: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub final_answer: i64,
    pub reward: u8,
    /// What this attempt was conditioned on; `None` for the first attempt.
    pub context: Option<RetrySummary>,
}

impl AttemptRecord {
    pub fn final_state(&self, task_id: TaskId) -> ReasoningState {
        ReasoningState {
            task_id,
            claimed: self.steps.iter().map(|a| a.value).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeTrace {
    pub task_id: TaskId,
    pub branching: usize,
    pub attempts: Vec<AttemptRecord>,
    pub instructions: Vec<Instruction>,
    pub total_reward: u32,
}

fn run_attempt(
    params: &PolicyParams,
    task: &Task,
    branching: usize,
    turn_index: usize,
    context: Option<RetrySummary>,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<AttemptRecord> {
    let mut state = ReasoningState::root(task.id());
    let n = task.num_steps();
    let (mut steps, mut chosen, mut log_probs) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    let ctx = match &context {
        Some(summary) => AttemptContext::Retry(summary),
        None => AttemptContext::First,
    };
    for _ in 0..n {
        let candidates = candidate_actions(task, &state, branching)?;
        let probs = step_distribution(params, task, &state, &candidates, &ctx)?;
        let pick = choose(&probs);
        steps.push(candidates[pick]);
        chosen.push(pick);
        log_probs.push(libm::log(probs[pick]));
        state = apply_step(task, &state, candidates[pick])?;
    }
    let final_answer = *state.claimed.last().expect("tasks have at least one step");
    Ok(AttemptRecord {
        turn_index,
        steps,
        chosen,
        log_probs,
        final_answer,
        reward: oracle_reward(final_answer, task),
        context,
    })
}

/// The retry-context summary of a finished attempt, scored by `params`'s own
/// evaluation head.
pub fn summarize_attempt(params: &PolicyParams, task: &Task, attempt: &AttemptRecord) -> RetrySummary {
    let values: Vec<i64> = attempt.steps.iter().map(|a| a.value).collect();
    let step_confidence = (1..=values.len())
        .map(|d| {
            let prefix = ReasoningState {
                task_id: task.id(),
                claimed: values[..d].to_vec(),
            };
            self_eval(params, EvalPrompt::StepCheck, task, &prefix)
        })
        .collect();
    let confidence = self_eval(params, EvalPrompt::AttemptCheck, task, &attempt.final_state(task.id()));
    RetrySummary {
        values,
        step_confidence,
        answer: attempt.final_answer,
        confidence,
    }
}

fn run_episode(
    params: &PolicyParams,
    task: &Task,
    retries: usize,
    branching: usize,
    mut choose: impl FnMut(&[f64]) -> usize,
) -> Result<EpisodeTrace> {
    let mut attempts: Vec<AttemptRecord> = Vec::with_capacity(retries + 1);
    for turn in 1..=retries + 1 {
        let context = attempts.last().map(|prev| summarize_attempt(params, task, prev));
        attempts.push(run_attempt(params, task, branching, turn, context, &mut choose)?);
    }
    let total_reward = attempts.iter().map(|a| u32::from(a.reward)).sum();
    Ok(EpisodeTrace {
        task_id: task.id(),
        branching,
        attempts,
        instructions: vec![Instruction::FindMistakeAndRetry; retries],
        total_reward,
    })
}

/// Samples an episode of `config.retries + 1` attempts. Same seed, same trace.
pub fn generate_episode(
    params: &PolicyParams,
    task: &Task,
    config: &Stage1Config,
    branching: usize,
    seed: u64,
) -> Result<EpisodeTrace> {
    if config.retries == 0 {
        return Err(invalid_argument("need at least one retry"));
    }
    let mut rng = SeededRng::new(seed);
    run_episode(params, task, config.retries, branching, |p| rng.categorical(p))
}

/// Episode with every step decoded greedily.
pub fn greedy_episode(params: &PolicyParams, task: &Task, retries: usize, branching: usize) -> Result<EpisodeTrace> {
    run_episode(params, task, retries, branching, |p| {
        crate::math::argmax(p.iter().copied()).expect("non-empty")
    })
}

/// Summed answer-checker reward over all attempts.
pub fn stage1_objective(trace: &EpisodeTrace) -> f64 {
    f64::from(trace.total_reward)
}

fn for_each_step(
    task: &Task,
    trace: &EpisodeTrace,
    mut visit: impl FnMut(&ReasoningState, &[StepAction], &AttemptContext<'_>, usize) -> Result<()>,
) -> Result<()> {
    if trace.task_id != task.id() {
        return Err(invalid_argument("episode and task ids differ"));
    }
    for attempt in &trace.attempts {
        let ctx = match &attempt.context {
            Some(summary) => AttemptContext::Retry(summary),
            None => AttemptContext::First,
        };
        let mut state = ReasoningState::root(task.id());
        for (&action, &pick) in attempt.steps.iter().zip(&attempt.chosen) {
            let candidates = candidate_actions(task, &state, trace.branching)?;
            if candidates.get(pick) != Some(&action) {
                return Err(invalid_argument("episode step does not match its candidate index"));
            }
            visit(&state, &candidates, &ctx, pick)?;
            state = apply_step(task, &state, action)?;
        }
    }
    Ok(())
}

/// Score function of an episode: the sum of `grad log pi` over every step
/// of every attempt.
pub fn episode_score(params: &PolicyParams, task: &Task, trace: &EpisodeTrace) -> Result<StepVector> {
    let mut score = [0.0; STEP_FEATURES];
    for_each_step(task, trace, |state, candidates, ctx, pick| {
        let (_, g) = log_prob_grad(params, task, state, candidates, ctx, pick)?;
        for (s, x) in score.iter_mut().zip(&g) {
            *s += x;
        }
        Ok(())
    })?;
    Ok(score)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Gradient {
    /// Ascent direction for the penalized objective.
    pub gradient: StepVector,
    /// Mean KL to the fixed model over visited states.
    pub mean_kl: f64,
}

/// Mean KL to `fix` over every visited state of the batch, and its gradient.
pub fn batch_kl_grad(
    params: &PolicyParams,
    fix: &PolicyParams,
    episodes: &[EpisodeTrace],
    tasks: &TaskIndex,
) -> Result<(f64, StepVector)> {
    let mut kl_sum = 0.0;
    let mut grad = [0.0; STEP_FEATURES];
    let mut states = 0usize;
    for trace in episodes {
        let task = tasks.get(trace.task_id)?;
        for_each_step(task, trace, |state, candidates, ctx, _| {
            let (kl, g) = kl_grad(params, fix, task, state, candidates, ctx)?;
            kl_sum += kl;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
            states += 1;
            Ok(())
        })?;
    }
    let n = states.max(1) as f64;
    for g in grad.iter_mut() {
        *g /= n;
    }
    Ok((kl_sum / n, grad))
}

/// REINFORCE estimate with a batch-mean baseline minus the KL penalty
/// gradient:
/// `mean_e[(R_e - mean R) * score_e] - eta * grad mean KL(pi || pi_fix)`.
pub fn reinforce_kl_grad(
    params: &PolicyParams,
    fix: &PolicyParams,
    episodes: &[EpisodeTrace],
    tasks: &TaskIndex,
    config: &Stage1Config,
) -> Result<Stage1Gradient> {
    if episodes.is_empty() {
        return Err(invalid_argument("empty episode batch"));
    }
    let Baseline::BatchMean = config.baseline;
    let n = episodes.len() as f64;
    let baseline = episodes.iter().map(stage1_objective).sum::<f64>() / n;
    let mut gradient = [0.0; STEP_FEATURES];
    for trace in episodes {
        let advantage = stage1_objective(trace) - baseline;
        if advantage == 0.0 {
            continue;
        }
        let score = episode_score(params, tasks.get(trace.task_id)?, trace)?;
        for (g, s) in gradient.iter_mut().zip(&score) {
            *g += advantage * s / n;
        }
    }
    let (mean_kl, kl_gradient) = batch_kl_grad(params, fix, episodes, tasks)?;
    for (g, k) in gradient.iter_mut().zip(&kl_gradient) {
        *g -= config.kl_coefficient * k;
    }
    Ok(Stage1Gradient { gradient, mean_kl })
}

/// Evaluation-head training examples harvested from episodes: every prefix
/// under `StepCheck` and every finished attempt under `AttemptCheck`, each
/// labelled by whether it agrees with the oracle chain.
pub fn eval_examples(episodes: &[EpisodeTrace], tasks: &TaskIndex) -> Result<Vec<(EvalVector, bool)>> {
    let mut examples = Vec::new();
    for trace in episodes {
        let task = tasks.get(trace.task_id)?;
        for attempt in &trace.attempts {
            let full = attempt.final_state(task.id());
            for d in 1..=full.depth() {
                let prefix = ReasoningState {
                    task_id: task.id(),
                    claimed: full.claimed[..d].to_vec(),
                };
                examples.push((
                    eval_features(EvalPrompt::StepCheck, task, &prefix),
                    is_prefix_correct(task, &prefix),
                ));
            }
            examples.push((
                eval_features(EvalPrompt::AttemptCheck, task, &full),
                attempt.reward == 1,
            ));
        }
    }
    Ok(examples)
}

/// Ridge-regularized logistic regression by Newton's method.
pub fn fit_logistic(examples: &[(EvalVector, bool)], ridge: f64) -> Result<EvalVector> {
    let positives = examples.iter().filter(|(_, y)| *y).count();
    if positives == 0 || positives == examples.len() {
        return Err(Error::DegenerateData(
            "evaluation-head fit needs both correct and incorrect examples".into(),
        ));
    }
    let mut w = [0.0; EVAL_FEATURES];
    for _ in 0..EVAL_NEWTON_STEPS {
        let mut grad = [0.0; EVAL_FEATURES];
        let mut hess = [[0.0; EVAL_FEATURES]; EVAL_FEATURES];
        for (x, y) in examples {
            let p = sigmoid(crate::math::dot(&w, x));
            let err = p - f64::from(u8::from(*y));
            let curvature = p * (1.0 - p);
            for i in 0..EVAL_FEATURES {
                grad[i] += err * x[i];
                for j in 0..=i {
                    hess[i][j] += curvature * x[i] * x[j];
                }
            }
        }
        for i in 0..EVAL_FEATURES {
            grad[i] += ridge * w[i];
            hess[i][i] += ridge;
            for j in 0..i {
                hess[j][i] = hess[i][j];
            }
        }
        let step = solve_spd(&hess, &grad)
            .ok_or_else(|| Error::InvalidState("evaluation-head Hessian is not positive definite".into()))?;
        let mut size: f64 = 0.0;
        for (wi, si) in w.iter_mut().zip(&step) {
            *wi -= si;
            size = size.max(si.abs());
        }
        if size < 1e-10 {
            break;
        }
    }
    Ok(w)
}

/// Refits the evaluation head on the episodes' prefixes; step weights are
/// carried over untouched.
pub fn fit_eval_head(params: &PolicyParams, episodes: &[EpisodeTrace], tasks: &TaskIndex) -> Result<PolicyParams> {
    let examples = eval_examples(episodes, tasks)?;
    let mut fitted = params.clone();
    fitted.eval_weights = fit_logistic(&examples, EVAL_RIDGE)?;
    Ok(fitted)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Metrics {
    pub iteration: usize,
    pub turn1_reward: f64,
    /// Mean reward of the last attempt.
    pub final_turn_reward: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage1Outcome {
    pub params: PolicyParams,
    pub metrics: Vec<Stage1Metrics>,
    /// Episodes behind the final evaluation-head fit.
    pub fit_episodes: Vec<EpisodeTrace>,
    pub fit_tasks: Vec<Task>,
}

struct Stage1Run<'a> {
    config: &'a Stage1Config,
    env: &'a EnvConfig,
    stream: SeededRng,
}

impl Stage1Run<'_> {
    fn episodes(&self, params: &PolicyParams, label: &str, index: u64, count: usize) -> Result<(Vec<Task>, Vec<EpisodeTrace>)> {
        let family = self.stream.split(label).split_index(index);
        let tasks = generate_task_set(&family.split("tasks"), count, self.env)?;
        let seeds = family.split("episodes");
        let episodes = tasks
            .iter()
            .enumerate()
            .map(|(j, task)| {
                let seed = seeds.split_index(j as u64).next_u64();
                generate_episode(params, task, self.config, self.env.branching, seed)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((tasks, episodes))
    }

    fn refit(&self, params: &PolicyParams, index: u64) -> Result<(PolicyParams, Vec<Task>, Vec<EpisodeTrace>)> {
        let (tasks, episodes) = self.episodes(params, "eval-fit", index, self.config.eval_fit_episodes)?;
        let index: TaskIndex = tasks.iter().cloned().collect();
        let fitted = fit_eval_head(params, &episodes, &index)?;
        Ok((fitted, tasks, episodes))
    }
}

/// Trains the self-correcting policy. The fixed KL anchor is `initial`; all
/// randomness comes from the `"stage1"` stream of `task_seed`.
pub fn run_stage1(initial: &PolicyParams, config: &Stage1Config, env: &EnvConfig, task_seed: u64) -> Result<Stage1Outcome> {
    config.validate()?;
    env.validate()?;
    let run = Stage1Run {
        config,
        env,
        stream: SeededRng::new(task_seed).split("stage1"),
    };
    let fix = initial.clone().with_role(Role::Reference);
    let mut fits = 0u64;
    let (mut params, _, _) = run.refit(&initial.clone().with_role(Role::Stage1), fits)?;
    fits += 1;

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut metrics = Vec::with_capacity(config.iterations);
    for it in 0..config.iterations {
        let (tasks, episodes) = run.episodes(&params, "batch", it as u64, config.batch_size)?;
        let index: TaskIndex = tasks.into_iter().collect();
        let update = reinforce_kl_grad(&params, &fix, &episodes, &index, config)?;
        optimizer.descend(&mut params.step_weights, &update.gradient.map(|g| -g));
        params.tag.revision += 1;
        if !params.is_finite() {
            return Err(Error::InvalidState("stage-1 update produced non-finite weights".into()));
        }
        let n = episodes.len() as f64;
        let mean_reward = |turn: usize| episodes.iter().map(|e| f64::from(e.attempts[turn].reward)).sum::<f64>() / n;
        metrics.push(Stage1Metrics {
            iteration: it,
            turn1_reward: mean_reward(0),
            final_turn_reward: mean_reward(config.retries),
            kl: update.mean_kl,
        });
        let done = it + 1;
        if config.eval_refit_interval > 0 && done % config.eval_refit_interval == 0 && done < config.iterations {
            params = run.refit(&params, fits)?.0;
            fits += 1;
        }
    }
    let (params, fit_tasks, fit_episodes) = run.refit(&params, fits)?;
    Ok(Stage1Outcome {
        params,
        metrics,
        fit_episodes,
        fit_tasks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::generate_task;
    use crate::policy::PolicyConfig;

    fn params(seed: u64, scale: f64) -> PolicyParams {
        PolicyParams::initial(seed, &PolicyConfig { init_scale: scale })
    }

    #[test]
    fn episode_has_l_plus_one_attempts() {
        let t = generate_task(3, 4).unwrap();
        let p = params(1, 0.5);
        for retries in 1..=3 {
            let cfg = Stage1Config { retries, ..Stage1Config::default() };
            let e = generate_episode(&p, &t, &cfg, 4, 11).unwrap();
            assert_eq!(e.attempts.len(), retries + 1);
            assert_eq!(e.instructions.len(), retries);
            assert!(e.attempts[0].context.is_none());
            assert!(e.attempts[1..].iter().all(|a| a.context.is_some()));
            for a in &e.attempts {
                assert_eq!(a.steps.len(), t.num_steps());
                assert_eq!(a.reward, oracle_reward(a.final_answer, &t));
            }
            assert_eq!(e.total_reward, e.attempts.iter().map(|a| u32::from(a.reward)).sum::<u32>());
        }
    }

    #[test]
    fn same_seed_same_episode() {
        let t = generate_task(5, 5).unwrap();
        let p = params(2, 0.5);
        let cfg = Stage1Config::default();
        assert_eq!(
            generate_episode(&p, &t, &cfg, 4, 99).unwrap(),
            generate_episode(&p, &t, &cfg, 4, 99).unwrap()
        );
    }

    #[test]
    fn objective_sums_attempt_rewards() {
        let t = generate_task(5, 2).unwrap();
        let p = params(2, 0.5);
        let mut e = generate_episode(&p, &t, &Stage1Config::default(), 4, 1).unwrap();
        e.attempts[0].reward = 0;
        e.attempts[1].reward = 1;
        e.total_reward = 1;
        assert_eq!(stage1_objective(&e), 1.0);
        e.total_reward = 2;
        assert_eq!(stage1_objective(&e), 2.0);
        e.total_reward = 0;
        assert_eq!(stage1_objective(&e), 0.0);
    }

    #[test]
    fn constant_rewards_without_kl_give_zero_gradient() {
        let p = params(4, 0.5);
        let cfg = Stage1Config { kl_coefficient: 0.0, ..Stage1Config::default() };
        let tasks: Vec<Task> = (0..8).map(|s| generate_task(s, 3).unwrap()).collect();
        let mut episodes: Vec<EpisodeTrace> = tasks
            .iter()
            .map(|t| generate_episode(&p, t, &cfg, 4, t.id()).unwrap())
            .collect();
        for e in episodes.iter_mut() {
            e.total_reward = 1;
        }
        let index: TaskIndex = tasks.into_iter().collect();
        let g = reinforce_kl_grad(&p, &p, &episodes, &index, &cfg).unwrap();
        assert_eq!(g.gradient, [0.0; STEP_FEATURES]);
        assert!(reinforce_kl_grad(&p, &p, &[], &index, &cfg).is_err());
    }

    #[test]
    fn eval_fit_separates_and_leaves_step_weights() {
        // Separable by the ALL_DIGITS feature.
        let mut examples = Vec::new();
        for i in 0..40 {
            let mut x = [0.0; EVAL_FEATURES];
            x[0] = 1.0;
            x[1] = (i % 5) as f64 / 5.0;
            x[5] = f64::from(u8::from(i % 2 == 0));
            examples.push((x, i % 2 == 0));
        }
        let w = fit_logistic(&examples, EVAL_RIDGE).unwrap();
        let correct = examples
            .iter()
            .filter(|(x, y)| (crate::math::dot(&w, x) > 0.0) == *y)
            .count();
        assert_eq!(correct, examples.len());

        let one_class: Vec<_> = examples.iter().filter(|(_, y)| *y).cloned().collect();
        assert!(matches!(fit_logistic(&one_class, EVAL_RIDGE), Err(Error::DegenerateData(_))));
    }

    #[test]
    fn fit_eval_head_keeps_step_weights() {
        let p = params(6, 0.2);
        let cfg = Stage1Config::default();
        let tasks: Vec<Task> = (0..64).map(|s| generate_task(100 + s, 3).unwrap()).collect();
        let episodes: Vec<EpisodeTrace> = tasks
            .iter()
            .map(|t| generate_episode(&p, t, &cfg, 4, t.id() ^ 7).unwrap())
            .collect();
        let index: TaskIndex = tasks.into_iter().collect();
        let fitted = fit_eval_head(&p, &episodes, &index).unwrap();
        assert_eq!(
            fitted.step_weights.map(f64::to_bits),
            p.step_weights.map(f64::to_bits)
        );
        assert_ne!(fitted.eval_weights, p.eval_weights);
    }

    #[test]
    fn zero_iterations_only_fit_the_head() {
        let p = params(8, 0.05);
        let cfg = Stage1Config {
            iterations: 0,
            eval_fit_episodes: 64,
            ..Stage1Config::default()
        };
        let out = run_stage1(&p, &cfg, &EnvConfig::default(), 3).unwrap();
        assert_eq!(out.params.step_weights, p.step_weights);
        assert!(out.metrics.is_empty());
        assert_ne!(out.params.eval_weights, p.eval_weights);
    }

    #[test]
    fn metrics_per_iteration_and_fix_untouched() {
        let p = params(8, 0.05);
        let before = p.checksum();
        let cfg = Stage1Config {
            iterations: 5,
            batch_size: 8,
            eval_refit_interval: 2,
            eval_fit_episodes: 64,
            ..Stage1Config::default()
        };
        let out = run_stage1(&p, &cfg, &EnvConfig::default(), 3).unwrap();
        assert_eq!(out.metrics.len(), 5);
        assert_eq!(p.checksum(), before);
        assert!(out.metrics.iter().all(|m| m.kl >= 0.0 && m.kl.is_finite()));
        assert_eq!(out, run_stage1(&p, &cfg, &EnvConfig::default(), 3).unwrap());
    }
}
