#![allow(dead_code)]

use scmcts_core::env::{apply_step, candidate_actions, generate_task, ReasoningState, StepAction, Task};
use scmcts_core::policy::{CheckpointTag, PolicyParams, RetrySummary, Role};
use scmcts_core::prefopt::PreferencePair;
use scmcts_core::rng::SeededRng;

pub fn uniform(rng: &mut SeededRng, scale: f64) -> f64 {
    scale * (2.0 * rng.next_f64() - 1.0)
}

pub fn random_params(rng: &mut SeededRng, scale: f64) -> PolicyParams {
    let mut p = PolicyParams::zeros(CheckpointTag {
        role: Role::Initial,
        seed: 0,
        revision: 0,
    });
    for w in p.step_weights.iter_mut().chain(p.eval_weights.iter_mut()) {
        *w = uniform(rng, scale);
    }
    p
}

pub fn random_task(rng: &mut SeededRng, min: usize, max: usize) -> Task {
    let difficulty = rng.range_inclusive(min as i64, max as i64) as usize;
    generate_task(rng.next_u64(), difficulty).unwrap()
}

/// A random non-terminal prefix reached through candidate steps.
pub fn random_state(rng: &mut SeededRng, task: &Task, k: usize) -> ReasoningState {
    let depth = rng.below(task.num_steps() as u64) as usize;
    let mut state = ReasoningState::root(task.id());
    for _ in 0..depth {
        let c = candidate_actions(task, &state, k).unwrap();
        let pick = c[rng.below(c.len() as u64) as usize];
        state = apply_step(task, &state, pick).unwrap();
    }
    state
}

pub fn random_summary(rng: &mut SeededRng, task: &Task, k: usize) -> RetrySummary {
    let mut state = ReasoningState::root(task.id());
    let mut values = Vec::new();
    for _ in 0..task.num_steps() {
        let c = candidate_actions(task, &state, k).unwrap();
        let pick: StepAction = c[rng.below(c.len() as u64) as usize];
        values.push(pick.value);
        state = apply_step(task, &state, pick).unwrap();
    }
    RetrySummary {
        step_confidence: values.iter().map(|_| rng.next_f64()).collect(),
        answer: *values.last().unwrap(),
        confidence: rng.next_f64(),
        values,
    }
}

/// Central differences of `f` around `w`.
pub fn central_diff<const N: usize>(w: &[f64; N], h: f64, mut f: impl FnMut(&[f64; N]) -> f64) -> [f64; N] {
    let mut g = [0.0; N];
    for i in 0..N {
        let (mut up, mut down) = (*w, *w);
        up[i] += h;
        down[i] -= h;
        g[i] = (f(&up) - f(&down)) / (2.0 * h);
    }
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `|a - b| / max(|a|, |b|)` in the Euclidean norm; zero when both vanish.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

pub fn random_pair(rng: &mut SeededRng, task: &Task, k: usize) -> PreferencePair {
    let prefix = random_state(rng, task, k);
    let cands = candidate_actions(task, &prefix, k).unwrap();
    let w = rng.below(k as u64) as usize;
    let l = (w + 1 + rng.below(k as u64 - 1) as usize) % k;
    PreferencePair {
        task_id: task.id(),
        depth: prefix.depth(),
        prefix,
        chosen: cands[w],
        rejected: cands[l],
        q_chosen: 1.0,
        q_rejected: 0.0,
        branching: k,
    }
}
