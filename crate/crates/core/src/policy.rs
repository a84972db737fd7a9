//! Linear-softmax step policy with a logistic self-evaluation head.
//!
//! One [`PolicyParams`] value plays every model role: the stage-1
//! self-correcting policy, the stage-2 search policy, and any frozen reference.
//! Step scores are linear in a per-candidate feature vector; the evaluation
//! head is a logistic model over a per-state feature vector whose positive
//! class stands for "this reasoning is correct".
//!
//! Features only look at the task's operands and operators and at the claimed
//! values in the state. They never read the oracle chain, so whatever the
//! policy learns about correctness it learns from rewards.

use alloc::vec::Vec;

use crate::env::{Operator, ReasoningState, StepAction, Task};
use crate::error::{invalid_argument, Result};
use crate::math::{self, dot, log_softmax, sigmoid};
use crate::rng::SeededRng;

pub const STEP_FEATURES: usize = 14;
pub const EVAL_FEATURES: usize = 8;

pub type StepVector = [f64; STEP_FEATURES];
pub type EvalVector = [f64; EVAL_FEATURES];

/// Indices into [`StepVector`].
pub mod step_feature {
    pub const BIAS: usize = 0;
    pub const VALUE: usize = 1;
    pub const DELTA: usize = 2;
    pub const DEPTH: usize = 3;
    pub const OP_ADD: usize = 4;
    pub const OP_SUB: usize = 5;
    pub const OP_MUL: usize = 6;
    pub const LENGTH: usize = 7;
    pub const PARITY: usize = 8;
    pub const SIGN: usize = 9;
    pub const RETRY: usize = 10;
    pub const REPEAT: usize = 11;
    pub const REPEAT_DOUBT: usize = 12;
    pub const REPEAT_ANSWER_DOUBT: usize = 13;
}

/// Indices into [`EvalVector`].
pub mod eval_feature {
    pub const BIAS: usize = 0;
    pub const DEPTH: usize = 1;
    pub const LAST_DIGIT: usize = 2;
    pub const LAST_SIGN: usize = 3;
    pub const DIGIT_FRACTION: usize = 4;
    pub const ALL_DIGITS: usize = 5;
    pub const ATTEMPT_MODE: usize = 6;
    pub const ATTEMPT_ALL_DIGITS: usize = 7;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Initial,
    Stage1,
    Stage2,
    Reference,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Initial => 0,
            Role::Stage1 => 1,
            Role::Stage2 => 2,
            Role::Reference => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Role::Initial),
            1 => Some(Role::Stage1),
            2 => Some(Role::Stage2),
            3 => Some(Role::Reference),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Initial => "initial",
            Role::Stage1 => "stage1",
            Role::Stage2 => "stage2",
            Role::Reference => "reference",
        }
    }
}

/// Which checkpoint a parameter vector is and where it came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CheckpointTag {
    pub role: Role,
    pub seed: u64,
    /// Update counter within the producing stage.
    pub revision: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub step_weights: StepVector,
    pub eval_weights: EvalVector,
    pub tag: CheckpointTag,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct PolicyConfig {
    /// Initial step weights are uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self { init_scale: 0.05 }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(crate::Error::Config(
                "policy.init_scale must be finite and >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl PolicyParams {
    pub fn zeros(tag: CheckpointTag) -> Self {
        Self {
            step_weights: [0.0; STEP_FEATURES],
            eval_weights: [0.0; EVAL_FEATURES],
            tag,
        }
    }

    /// Small random step weights and an untrained (all-zero) evaluation head.
    pub fn initial(seed: u64, config: &PolicyConfig) -> Self {
        let mut rng = SeededRng::new(seed).split("policy-init");
        let mut params = Self::zeros(CheckpointTag {
            role: Role::Initial,
            seed,
            revision: 0,
        });
        for w in params.step_weights.iter_mut() {
            *w = config.init_scale * (2.0 * rng.next_f64() - 1.0);
        }
        params
    }

    pub fn is_finite(&self) -> bool {
        self.step_weights.iter().chain(&self.eval_weights).all(|w| w.is_finite())
    }

    pub fn with_role(mut self, role: Role) -> Self {
        self.tag.role = role;
        self
    }

    /// Order-sensitive digest of the weight bits, for "never changed" checks.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for w in self.step_weights.iter().chain(&self.eval_weights) {
            for b in w.to_bits().to_le_bytes() {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h
    }
}

/// What a retry attempt knows about the attempt before it.
#[derive(Debug, Clone, PartialEq)]
pub struct RetrySummary {
    /// Steps of the previous attempt.
    pub values: Vec<i64>,
    /// Self-evaluation of each prefix of the previous attempt
    /// (`step_confidence[d]` covers the first `d + 1` steps).
    pub step_confidence: Vec<f64>,
    pub answer: i64,
    /// Self-evaluation of the previous attempt as a whole.
    pub confidence: f64,
}

/// Conditioning for the step policy: a first attempt, or a retry instructed
/// to find its mistake given a summary of the previous attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttemptContext<'a> {
    First,
    Retry(&'a RetrySummary),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum EvalPrompt {
    /// Judge the newest step of a prefix.
    StepCheck,
    /// Judge a finished attempt.
    AttemptCheck,
}

fn expected_sign(op: Operator, lhs: i64, rhs: i64) -> Option<i64> {
    let combine = |a: i64, b: i64| {
        if a == 0 {
            Some(b)
        } else if b == 0 || a == b {
            Some(a)
        } else {
            None
        }
    };
    match op {
        Operator::Mul => Some(lhs.signum() * rhs.signum()),
        Operator::Add => combine(lhs.signum(), rhs.signum()),
        Operator::Sub => combine(lhs.signum(), -rhs.signum()),
    }
}

fn sign_agreement(value: i64, expected: Option<i64>) -> f64 {
    match expected {
        None => 0.5,
        Some(s) if value.signum() == s => 1.0,
        Some(_) => 0.0,
    }
}

struct StepCheck {
    digit_ok: bool,
    sign: f64,
}

/// Local checks of claim `j` against the claim before it.
fn check_claim(task: &Task, claimed: &[i64], j: usize) -> StepCheck {
    let lhs = if j == 0 { task.operands()[0] } else { claimed[j - 1] };
    let op = task.operators()[j];
    let rhs = task.operands()[j + 1];
    let local = op.apply(lhs, rhs);
    StepCheck {
        digit_ok: (claimed[j].wrapping_sub(local)).rem_euclid(10) == 0,
        sign: sign_agreement(claimed[j], expected_sign(op, lhs, rhs)),
    }
}

/// Feature vector of `candidate` as the next step from `state`.
pub fn step_features(
    task: &Task,
    state: &ReasoningState,
    candidate: StepAction,
    context: &AttemptContext<'_>,
) -> StepVector {
    use step_feature::*;
    let depth = state.depth();
    let acc = state.accumulator(task);
    let op = task.operators()[depth.min(task.num_steps() - 1)];
    let rhs = task.operands()[(depth + 1).min(task.difficulty() - 1)];
    let value = candidate.value;
    let local = op.apply(acc, rhs);

    let mut f = [0.0; STEP_FEATURES];
    f[BIAS] = 1.0;
    f[VALUE] = value as f64 / 100.0;
    f[DELTA] = (value.saturating_sub(acc)).unsigned_abs() as f64 / 100.0;
    f[DEPTH] = depth as f64 / task.difficulty() as f64;
    f[OP_ADD + op.index()] = 1.0;
    f[LENGTH] = candidate.length() as f64 / 4.0;
    f[PARITY] = f64::from(u8::from(value.wrapping_sub(local).rem_euclid(2) == 0));
    f[SIGN] = sign_agreement(value, expected_sign(op, acc, rhs));
    if let AttemptContext::Retry(prev) = context {
        f[RETRY] = 1.0;
        if prev.values.get(depth) == Some(&value) {
            f[REPEAT] = 1.0;
            f[REPEAT_DOUBT] = 1.0 - prev.step_confidence.get(depth).copied().unwrap_or(0.5);
        }
        if depth + 1 == task.num_steps() && value == prev.answer {
            f[REPEAT_ANSWER_DOUBT] = 1.0 - prev.confidence;
        }
    }
    f
}

/// Feature vector the evaluation head sees for `state` under `prompt`.
pub fn eval_features(prompt: EvalPrompt, task: &Task, state: &ReasoningState) -> EvalVector {
    use eval_feature::*;
    let claimed = &state.claimed[..state.depth().min(task.num_steps())];
    let mut digits_ok = 0usize;
    let mut last = StepCheck {
        digit_ok: true,
        sign: 1.0,
    };
    for j in 0..claimed.len() {
        last = check_claim(task, claimed, j);
        digits_ok += usize::from(last.digit_ok);
    }
    let all = digits_ok == claimed.len();
    let attempt = f64::from(u8::from(prompt == EvalPrompt::AttemptCheck));

    let mut f = [0.0; EVAL_FEATURES];
    f[BIAS] = 1.0;
    f[DEPTH] = claimed.len() as f64 / task.difficulty() as f64;
    f[LAST_DIGIT] = f64::from(u8::from(last.digit_ok));
    f[LAST_SIGN] = last.sign;
    f[DIGIT_FRACTION] = if claimed.is_empty() {
        1.0
    } else {
        digits_ok as f64 / claimed.len() as f64
    };
    f[ALL_DIGITS] = f64::from(u8::from(all));
    f[ATTEMPT_MODE] = attempt;
    f[ATTEMPT_ALL_DIGITS] = attempt * f[ALL_DIGITS];
    f
}

fn candidate_features(
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<Vec<StepVector>> {
    if candidates.is_empty() {
        return Err(invalid_argument("candidate list is empty"));
    }
    Ok(candidates
        .iter()
        .map(|&c| step_features(task, state, c, context))
        .collect())
}

pub fn step_logits(
    params: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<Vec<f64>> {
    Ok(candidate_features(task, state, candidates, context)?
        .iter()
        .map(|f| dot(&params.step_weights, f))
        .collect())
}

/// Softmax of the candidates' linear scores.
pub fn step_distribution(
    params: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<Vec<f64>> {
    let logits = step_logits(params, task, state, candidates, context)?;
    Ok(log_softmax(&logits).1)
}

/// `p / |a|^lambda`: the search prior with its length penalty.
pub fn length_penalized(probability: f64, action: StepAction, lambda: f64) -> f64 {
    probability / libm::pow(action.length() as f64, lambda)
}

/// Length-penalized prior of every candidate (not renormalized).
pub fn adjusted_priors(
    params: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    lambda: f64,
) -> Result<Vec<f64>> {
    if !(lambda >= 0.0) {
        return Err(invalid_argument("lambda must be >= 0"));
    }
    let probs = step_distribution(params, task, state, candidates, &AttemptContext::First)?;
    Ok(probs
        .iter()
        .zip(candidates)
        .map(|(&p, &a)| length_penalized(p, a, lambda))
        .collect())
}

pub fn eval_score(params: &PolicyParams, prompt: EvalPrompt, task: &Task, state: &ReasoningState) -> f64 {
    dot(&params.eval_weights, &eval_features(prompt, task, state))
}

/// Probability the evaluation head assigns to "correct"; always in (0, 1).
pub fn self_eval(params: &PolicyParams, prompt: EvalPrompt, task: &Task, state: &ReasoningState) -> f64 {
    sigmoid(eval_score(params, prompt, task, state))
}

/// `log pi(chosen)` and its gradient with respect to the step weights,
/// `phi(chosen) - sum_a pi(a) phi(a)`.
pub fn log_prob_grad(
    params: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
    chosen: usize,
) -> Result<(f64, StepVector)> {
    if chosen >= candidates.len() {
        return Err(invalid_argument("chosen index out of range"));
    }
    let feats = candidate_features(task, state, candidates, context)?;
    let logits: Vec<f64> = feats.iter().map(|f| dot(&params.step_weights, f)).collect();
    let (log_p, p) = log_softmax(&logits);
    let mut grad = feats[chosen];
    for (pa, fa) in p.iter().zip(&feats) {
        for (g, x) in grad.iter_mut().zip(fa) {
            *g -= pa * x;
        }
    }
    Ok((log_p[chosen], grad))
}

/// `KL(pi_params || pi_reference)` over the candidate set.
pub fn kl_to_reference(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<f64> {
    kl_grad(params, reference, task, state, candidates, context).map(|(kl, _)| kl)
}

/// KL divergence and its gradient with respect to `params.step_weights`:
/// `sum_a pi(a) (phi(a) - phi_bar) (log pi(a) - log q(a))`.
pub fn kl_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<(f64, StepVector)> {
    let feats = candidate_features(task, state, candidates, context)?;
    let logits: Vec<f64> = feats.iter().map(|f| dot(&params.step_weights, f)).collect();
    let ref_logits: Vec<f64> = feats.iter().map(|f| dot(&reference.step_weights, f)).collect();
    let (log_p, p) = log_softmax(&logits);
    let (log_q, _) = log_softmax(&ref_logits);

    let mut mean = [0.0; STEP_FEATURES];
    for (pa, fa) in p.iter().zip(&feats) {
        for (m, x) in mean.iter_mut().zip(fa) {
            *m += pa * x;
        }
    }
    let mut kl = 0.0;
    let mut grad = [0.0; STEP_FEATURES];
    for ((pa, fa), (lp, lq)) in p.iter().zip(&feats).zip(log_p.iter().zip(&log_q)) {
        let ratio = lp - lq;
        kl += pa * ratio;
        for ((g, x), m) in grad.iter_mut().zip(fa).zip(&mean) {
            *g += pa * (x - m) * ratio;
        }
    }
    // Rounding can leave a tiny negative sum for identical distributions.
    Ok((kl.max(0.0), grad))
}

/// Index of the most probable candidate, ties to the lowest index.
pub fn greedy_choice(
    params: &PolicyParams,
    task: &Task,
    state: &ReasoningState,
    candidates: &[StepAction],
    context: &AttemptContext<'_>,
) -> Result<usize> {
    let logits = step_logits(params, task, state, candidates, context)?;
    Ok(math::argmax(logits).expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{candidate_actions, generate_task, Operator};
    use alloc::vec;

    fn tag() -> CheckpointTag {
        CheckpointTag {
            role: Role::Initial,
            seed: 0,
            revision: 0,
        }
    }

    fn simple_task() -> Task {
        Task::new(1, vec![3, 4, 2], vec![Operator::Add, Operator::Mul]).unwrap()
    }

    #[test]
    fn zero_weights_give_uniform_distribution() {
        let t = simple_task();
        let s = ReasoningState::root(t.id());
        let c = candidate_actions(&t, &s, 4).unwrap();
        let p = step_distribution(&PolicyParams::zeros(tag()), &t, &s, &c, &AttemptContext::First).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let (lp, _) =
            log_prob_grad(&PolicyParams::zeros(tag()), &t, &s, &c, &AttemptContext::First, 2).unwrap();
        assert!((lp - libm::log(0.25)).abs() < 1e-15);
    }

    #[test]
    fn two_candidate_softmax_matches_closed_form() {
        // Steer one logit to 1 and the other to 0 through the bias-free
        // parity feature: 7 keeps the parity of 3+4, 8 does not.
        let t = Task::new(1, vec![3, 4], vec![Operator::Add]).unwrap();
        let s = ReasoningState::root(t.id());
        let c = [StepAction::new(7), StepAction::new(8)];
        let mut params = PolicyParams::zeros(tag());
        params.step_weights[step_feature::PARITY] = 1.0;
        let p = step_distribution(&params, &t, &s, &c, &AttemptContext::First).unwrap();
        let e = core::f64::consts::E;
        assert!((p[0] - e / (e + 1.0)).abs() < 1e-15);
        assert!((p[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
        assert!((p[0] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn empty_candidates_rejected() {
        let t = simple_task();
        let s = ReasoningState::root(t.id());
        let z = PolicyParams::zeros(tag());
        assert!(step_distribution(&z, &t, &s, &[], &AttemptContext::First).is_err());
        let c = candidate_actions(&t, &s, 3).unwrap();
        assert!(log_prob_grad(&z, &t, &s, &c, &AttemptContext::First, 3).is_err());
    }

    #[test]
    fn length_penalty() {
        assert_eq!(length_penalized(0.5, StepAction::new(-100), 0.5), 0.25);
        assert_eq!(length_penalized(0.3, StepAction::new(-100), 0.0), 0.3);
        assert_eq!(length_penalized(0.3, StepAction::new(7), 2.5), 0.3);
    }

    #[test]
    fn self_eval_zero_head_is_half() {
        let t = simple_task();
        let s = ReasoningState {
            task_id: t.id(),
            claimed: vec![7],
        };
        let z = PolicyParams::zeros(tag());
        assert_eq!(self_eval(&z, EvalPrompt::StepCheck, &t, &s), 0.5);
        assert_eq!(self_eval(&z, EvalPrompt::AttemptCheck, &t, &s), 0.5);
    }

    #[test]
    fn eval_features_check_local_consistency() {
        use eval_feature::*;
        let t = simple_task();
        let good = ReasoningState { task_id: t.id(), claimed: vec![7, 14] };
        let f = eval_features(EvalPrompt::StepCheck, &t, &good);
        assert_eq!(f[ALL_DIGITS], 1.0);
        assert_eq!(f[LAST_DIGIT], 1.0);
        assert_eq!(f[ATTEMPT_MODE], 0.0);
        // 8 is wrong, but 16 = 8 * 2 is locally consistent with it.
        let bad = ReasoningState { task_id: t.id(), claimed: vec![8, 16] };
        let f = eval_features(EvalPrompt::AttemptCheck, &t, &bad);
        assert_eq!(f[LAST_DIGIT], 1.0);
        assert_eq!(f[ALL_DIGITS], 0.0);
        assert_eq!(f[DIGIT_FRACTION], 0.5);
        assert_eq!(f[ATTEMPT_MODE], 1.0);
    }

    #[test]
    fn retry_features_mark_repeats() {
        use step_feature::*;
        let t = simple_task();
        let s = ReasoningState::root(t.id());
        let prev = RetrySummary {
            values: vec![8, 16],
            step_confidence: vec![0.2, 0.1],
            answer: 16,
            confidence: 0.15,
        };
        let ctx = AttemptContext::Retry(&prev);
        let f = step_features(&t, &s, StepAction::new(8), &ctx);
        assert_eq!((f[RETRY], f[REPEAT], f[REPEAT_DOUBT]), (1.0, 1.0, 0.8));
        let f = step_features(&t, &s, StepAction::new(7), &ctx);
        assert_eq!((f[RETRY], f[REPEAT], f[REPEAT_DOUBT]), (1.0, 0.0, 0.0));
        let last = ReasoningState { task_id: t.id(), claimed: vec![8] };
        let f = step_features(&t, &last, StepAction::new(16), &ctx);
        assert_eq!(f[REPEAT_ANSWER_DOUBT], 0.85);
        let f = step_features(&t, &last, StepAction::new(16), &AttemptContext::First);
        assert_eq!(f[RETRY..], [0.0; 4]);
    }

    #[test]
    fn kl_of_identical_policies_is_zero() {
        let t = generate_task(3, 4).unwrap();
        let s = ReasoningState::root(t.id());
        let c = candidate_actions(&t, &s, 4).unwrap();
        let p = PolicyParams::initial(9, &PolicyConfig { init_scale: 1.0 });
        let kl = kl_to_reference(&p, &p, &t, &s, &c, &AttemptContext::First).unwrap();
        assert!(kl.abs() < 1e-12);
    }

    #[test]
    fn kl_against_uniform_matches_hand_sum() {
        let t = Task::new(1, vec![3, 4], vec![Operator::Add]).unwrap();
        let s = ReasoningState::root(t.id());
        let c = [StepAction::new(7), StepAction::new(8)];
        let mut params = PolicyParams::zeros(tag());
        params.step_weights[step_feature::PARITY] = 1.0;
        let kl = kl_to_reference(&params, &PolicyParams::zeros(tag()), &t, &s, &c, &AttemptContext::First)
            .unwrap();
        // 0.73106 ln(0.73106/0.5) + 0.26894 ln(0.26894/0.5)
        let p = 0.731_058_578_630_004_9_f64;
        let q = 1.0 - p;
        let expected = p * libm::log(p / 0.5) + q * libm::log(q / 0.5);
        assert!((kl - expected).abs() < 1e-12);
        assert!((kl - 0.110_944_071_671_727).abs() < 1e-12);
    }

    #[test]
    fn initial_params_are_seeded() {
        let cfg = PolicyConfig::default();
        assert_eq!(PolicyParams::initial(4, &cfg), PolicyParams::initial(4, &cfg));
        assert_ne!(PolicyParams::initial(4, &cfg), PolicyParams::initial(5, &cfg));
        let p = PolicyParams::initial(4, &cfg);
        assert!(p.step_weights.iter().all(|w| w.abs() <= cfg.init_scale));
        assert!(p.eval_weights.iter().all(|&w| w == 0.0));
    }
}
