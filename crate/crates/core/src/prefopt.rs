//! Step-level preference learning from search trees.
//!
//! Every expanded node whose well-visited edges disagree by at least a margin
//! yields one pair (highest-Q step preferred over lowest-Q step). Pairs train
//! the step policy with the DPO objective
//!
//! ```text
//! loss = -log sigmoid(beta * [(log pi(w) - log ref(w)) - (log pi(l) - log ref(l))])
//! ```
//!
//! and the reference is refreshed to the current policy at the start of every
//! round.

use alloc::vec::Vec;

use crate::env::{candidate_actions, generate_task_set, EnvConfig, ReasoningState, StepAction, Task, TaskId, TaskIndex};
use crate::error::{invalid_argument, Error, Result};
use crate::math::{sigmoid, softplus};
use crate::optim::{Optimizer, OptimizerKind};
use crate::pipeline::evaluate;
use crate::policy::{log_prob_grad, AttemptContext, PolicyParams, Role, StepVector, STEP_FEATURES};
use crate::rng::SeededRng;
use crate::search::{run_search, SearchConfig, SearchTree};

/// Mini-batch size of the preference optimizer.
pub const BATCH_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub rounds: usize,
    pub trees_per_round: usize,
    /// Minimum child visits for an edge to take part in a pair.
    pub n_min: u32,
    /// Minimum Q gap between chosen and rejected.
    pub margin: f64,
    /// Snapshot the current policy as reference at every round; otherwise the
    /// initial policy stays the reference throughout.
    pub refresh_reference: bool,
    pub optimizer: OptimizerKind,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            learning_rate: 0.05,
            rounds: 8,
            trees_per_round: 64,
            n_min: 2,
            margin: 0.1,
            refresh_reference: true,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return fail("prefopt.beta must be finite and > 0");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return fail("prefopt.learning_rate must be finite and >= 0");
        }
        if self.trees_per_round == 0 {
            return fail("prefopt.trees_per_round must be > 0");
        }
        if self.n_min == 0 {
            return fail("prefopt.n_min must be > 0");
        }
        if !(self.margin.is_finite() && self.margin > 0.0) {
            return fail("prefopt.margin must be finite and > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreferencePair {
    pub task_id: TaskId,
    pub prefix: ReasoningState,
    pub chosen: StepAction,
    pub rejected: StepAction,
    pub q_chosen: f64,
    pub q_rejected: f64,
    pub depth: usize,
    /// Size of the candidate set both steps were drawn from.
    pub branching: usize,
}

/// Mines preference pairs from a finished tree, breadth-first.
pub fn extract_pairs(tree: &SearchTree, config: &DpoConfig) -> Vec<PreferencePair> {
    let mut pairs = Vec::new();
    for id in tree.breadth_first() {
        let node = tree.node(id);
        let eligible: Vec<usize> = (0..node.edges.len())
            .filter(|&e| tree.child_visits(id, e) >= config.n_min)
            .collect();
        if eligible.len() < 2 {
            continue;
        }
        let mut best = eligible[0];
        let mut worst = eligible[0];
        for &e in &eligible[1..] {
            if node.edges[e].q > node.edges[best].q {
                best = e;
            }
            if node.edges[e].q < node.edges[worst].q {
                worst = e;
            }
        }
        let (hi, lo) = (&node.edges[best], &node.edges[worst]);
        if hi.q - lo.q >= config.margin {
            pairs.push(PreferencePair {
                task_id: tree.task_id,
                prefix: node.state.clone(),
                chosen: hi.action,
                rejected: lo.action,
                q_chosen: hi.q,
                q_rejected: lo.q,
                depth: node.depth(),
                branching: tree.config.branching,
            });
        }
    }
    pairs
}

/// DPO loss for a given log-ratio margin.
pub fn dpo_loss(margin: f64, beta: f64) -> f64 {
    softplus(-beta * margin)
}

/// DPO loss of one pair and its gradient with respect to the step weights.
pub fn dpo_loss_grad(
    params: &PolicyParams,
    reference: &PolicyParams,
    pair: &PreferencePair,
    task: &Task,
    beta: f64,
) -> Result<(f64, StepVector)> {
    let candidates = candidate_actions(task, &pair.prefix, pair.branching)?;
    let position = |a: StepAction| {
        candidates
            .iter()
            .position(|&c| c == a)
            .ok_or_else(|| invalid_argument("preference step is not a candidate of its prefix"))
    };
    let (w, l) = (position(pair.chosen)?, position(pair.rejected)?);
    let ctx = AttemptContext::First;
    let (lp_w, g_w) = log_prob_grad(params, task, &pair.prefix, &candidates, &ctx, w)?;
    let (lp_l, g_l) = log_prob_grad(params, task, &pair.prefix, &candidates, &ctx, l)?;
    let (lr_w, _) = log_prob_grad(reference, task, &pair.prefix, &candidates, &ctx, w)?;
    let (lr_l, _) = log_prob_grad(reference, task, &pair.prefix, &candidates, &ctx, l)?;

    let margin = (lp_w - lr_w) - (lp_l - lr_l);
    let loss = dpo_loss(margin, beta);
    let scale = -beta * sigmoid(-beta * margin);
    let mut grad = [0.0; STEP_FEATURES];
    for ((g, a), b) in grad.iter_mut().zip(&g_w).zip(&g_l) {
        *g = scale * (a - b);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundUpdate {
    pub params: PolicyParams,
    /// Mean pair loss, each batch measured just before its step.
    pub mean_loss: f64,
}

/// One pass of mini-batch gradient descent over `pairs` in order.
pub fn train_round(
    params: &PolicyParams,
    reference: &PolicyParams,
    pairs: &[PreferencePair],
    tasks: &TaskIndex,
    config: &DpoConfig,
    optimizer: &mut Optimizer,
) -> Result<RoundUpdate> {
    if pairs.is_empty() {
        return Err(invalid_argument("no preference pairs to train on"));
    }
    let mut current = params.clone();
    let mut loss_sum = 0.0;
    for batch in pairs.chunks(BATCH_SIZE) {
        let mut grad = [0.0; STEP_FEATURES];
        for pair in batch {
            let task = tasks.get(pair.task_id)?;
            let (loss, g) = dpo_loss_grad(&current, reference, pair, task, config.beta)?;
            loss_sum += loss;
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x;
            }
        }
        let n = batch.len() as f64;
        optimizer.descend(&mut current.step_weights, &grad.map(|g| g / n));
        current.tag.revision += 1;
    }
    if !current.is_finite() {
        return Err(Error::InvalidState("preference update produced non-finite weights".into()));
    }
    Ok(RoundUpdate {
        params: current,
        mean_loss: loss_sum / pairs.len() as f64,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round: usize,
    pub trees: usize,
    pub pairs: usize,
    /// Zero when the round produced no pairs.
    pub mean_loss: f64,
    /// Greedy accuracy on the held-out tasks after the round.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Outcome {
    pub params: PolicyParams,
    pub metrics: Vec<RoundMetrics>,
    /// Pairs mined in each round, in training order.
    pub pairs: Vec<Vec<PreferencePair>>,
}

/// Iterated search-then-DPO. Round `r` searches `trees_per_round` fresh tasks
/// drawn from the `("stage2", r)` stream of `task_seed`, with the current
/// policy supplying priors and `C`, and `verifier` supplying `C_hat` when the
/// search config enables it.
pub fn run_stage2(
    initial: &PolicyParams,
    verifier: Option<&PolicyParams>,
    task_seed: u64,
    env: &EnvConfig,
    config: &DpoConfig,
    search: &SearchConfig,
    heldout: &[Task],
) -> Result<Stage2Outcome> {
    config.validate()?;
    search.validate()?;
    let search = SearchConfig {
        branching: env.branching,
        ..*search
    };
    let stream = SeededRng::new(task_seed).split("stage2");
    let mut params = initial.clone().with_role(Role::Stage2);
    let mut reference = initial.clone().with_role(Role::Reference);
    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut metrics = Vec::with_capacity(config.rounds);
    let mut all_pairs = Vec::with_capacity(config.rounds);

    for round in 0..config.rounds {
        if config.refresh_reference {
            reference = params.clone().with_role(Role::Reference);
        }
        let tasks = generate_task_set(&stream.split_index(round as u64), config.trees_per_round, env)?;
        let mut pairs = Vec::new();
        for task in &tasks {
            let root = ReasoningState::root(task.id());
            let tree = run_search(task, &root, &params, verifier, &search)?;
            pairs.extend(extract_pairs(&tree, config));
        }
        let index: TaskIndex = tasks.into_iter().collect();
        let mean_loss = if pairs.is_empty() {
            0.0
        } else {
            let update = train_round(&params, &reference, &pairs, &index, config, &mut optimizer)?;
            params = update.params;
            update.mean_loss
        };
        let accuracy = if heldout.is_empty() {
            0.0
        } else {
            evaluate(&params, heldout, env.branching)?
        };
        metrics.push(RoundMetrics {
            round,
            trees: config.trees_per_round,
            pairs: pairs.len(),
            mean_loss,
            accuracy,
        });
        all_pairs.push(pairs);
    }
    Ok(Stage2Outcome {
        params,
        metrics,
        pairs: all_pairs,
    })
}
