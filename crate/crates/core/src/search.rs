//! Step-level PUCT tree search over reasoning prefixes.
//!
//! Each simulation descends by PUCT to a node that is terminal or not yet
//! expanded, expands it (scoring every child with outcome correctness plus
//! self-evaluation, plus verifier confidence when enabled), rolls out greedily
//! from the most promising new child, and backs the result up to the root.
//!
//! State reward: `R = O + C (+ C_hat)`. Edge reward: `r = R(child) - R(parent)`.
//! Edge value: `Q = r + gamma * V(child)`, refreshed on every backup.

use alloc::vec;
use alloc::vec::Vec;

use crate::env::{apply_step, candidate_actions, terminal_status, ReasoningState, StepAction, Task, TaskId};
use crate::error::{invalid_argument, invalid_state, Error, Result};
use crate::math::argmax;
use crate::policy::{adjusted_priors, self_eval, EvalPrompt, PolicyParams};

pub type NodeId = usize;
pub const ROOT: NodeId = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum RolloutPolicy {
    /// Follow the highest length-penalized prior until terminal.
    #[default]
    GreedyPrior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct SearchConfig {
    pub c_puct: f64,
    /// Length-penalty exponent on the prior.
    pub lambda: f64,
    pub branching: usize,
    /// Simulations per search.
    pub budget: u32,
    pub gamma: f64,
    /// Add the stage-1 verifier's confidence to every state reward.
    pub verify_enabled: bool,
    pub rollout_policy: RolloutPolicy,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: 5.0,
            lambda: 0.5,
            branching: 4,
            budget: 64,
            gamma: 1.0,
            verify_enabled: true,
            rollout_policy: RolloutPolicy::GreedyPrior,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.c_puct.is_finite() && self.c_puct > 0.0) {
            return fail("search.c_puct must be finite and > 0");
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return fail("search.lambda must be finite and >= 0");
        }
        if self.branching < 2 {
            return fail("search.branching must be >= 2");
        }
        if self.budget == 0 {
            return fail("search.budget must be > 0");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("search.gamma must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub action: StepAction,
    pub child: NodeId,
    /// Length-penalized prior `p(a | s)`.
    pub prior: f64,
    /// `r(s, a) = R(child) - R(s)`.
    pub reward: f64,
    pub q: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub state: ReasoningState,
    pub parent: Option<NodeId>,
    pub visits: u32,
    /// Running mean of every value backed up through this node.
    pub value: f64,
    /// Composite state reward `R`.
    pub reward: f64,
    /// Outcome correctness `O`: 1, -1 or 0.
    pub outcome: i8,
    /// Self-evaluation `C` from the search policy.
    pub confidence: f64,
    /// Verifier confidence `C_hat`, present only with verification on.
    pub verified_confidence: Option<f64>,
    pub edges: Vec<Edge>,
}

impl TreeNode {
    pub fn is_terminal(&self) -> bool {
        self.outcome != 0
    }

    pub fn is_expanded(&self) -> bool {
        !self.edges.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.state.depth()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    pub task_id: TaskId,
    pub config: SearchConfig,
    pub total_simulations: u32,
    nodes: Vec<TreeNode>,
}

impl SearchTree {
    pub fn root(&self) -> &TreeNode {
        &self.nodes[ROOT]
    }

    pub fn node(&self, id: NodeId) -> &TreeNode {
        &self.nodes[id]
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node ids in breadth-first order, children in candidate order.
    pub fn breadth_first(&self) -> Vec<NodeId> {
        let mut order = vec![ROOT];
        let mut i = 0;
        while i < order.len() {
            let id = order[i];
            order.extend(self.nodes[id].edges.iter().map(|e| e.child));
            i += 1;
        }
        order
    }

    pub fn child_visits(&self, node: NodeId, edge: usize) -> u32 {
        self.nodes[self.nodes[node].edges[edge].child].visits
    }

    /// Root edge with the largest Q, ties to the lowest index.
    pub fn best_root_edge(&self) -> Option<&Edge> {
        let root = self.root();
        argmax(root.edges.iter().map(|e| e.q)).map(|i| &root.edges[i])
    }
}

/// `R(s) = O(s) + C(s)`.
pub fn state_reward(outcome: i8, confidence: f64) -> f64 {
    f64::from(outcome) + confidence
}

/// `r(s, a) = R(s') - R(s)`.
pub fn step_reward(parent_reward: f64, child_reward: f64) -> f64 {
    child_reward - parent_reward
}

/// Adds the stage-1 verifier's confidence to a state reward. Returns the
/// augmented reward and the confidence that was added.
pub fn verify_augment(
    reward: f64,
    verifier: Option<&PolicyParams>,
    task: &Task,
    state: &ReasoningState,
) -> Result<(f64, f64)> {
    let verifier = verifier.ok_or_else(|| {
        Error::Config("verification enabled but no stage-1 checkpoint was supplied".into())
    })?;
    let c_hat = self_eval(verifier, EvalPrompt::StepCheck, task, state);
    Ok((reward + c_hat, c_hat))
}

/// PUCT score `Q + c * p * sqrt(N_parent) / (1 + N_child)`.
pub fn puct_score(q: f64, prior: f64, parent_visits: u32, child_visits: u32, c_puct: f64) -> f64 {
    q + c_puct * prior * libm::sqrt(f64::from(parent_visits)) / (1.0 + f64::from(child_visits))
}

/// Visit-independent view of an edge for selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdgeStats {
    pub q: f64,
    pub prior: f64,
    pub visits: u32,
}

/// Index maximizing the PUCT score, ties to the lowest index.
pub fn puct_argmax(parent_visits: u32, edges: &[EdgeStats], c_puct: f64) -> Option<usize> {
    argmax(
        edges
            .iter()
            .map(|e| puct_score(e.q, e.prior, parent_visits, e.visits, c_puct)),
    )
}

/// Chooses which edge of `node` to descend.
pub fn puct_select(tree: &SearchTree, node: NodeId, config: &SearchConfig) -> Result<usize> {
    let n = &tree.nodes[node];
    if !n.is_expanded() {
        return Err(invalid_state("cannot select from an unexpanded node"));
    }
    let stats: Vec<EdgeStats> = n
        .edges
        .iter()
        .map(|e| EdgeStats {
            q: e.q,
            prior: e.prior,
            visits: tree.nodes[e.child].visits,
        })
        .collect();
    Ok(puct_argmax(n.visits, &stats, config.c_puct).expect("expanded node has edges"))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateScore {
    pub outcome: i8,
    pub confidence: f64,
    pub verified_confidence: Option<f64>,
    pub reward: f64,
}

/// Everything a search needs besides the tree: the task, the search policy,
/// the optional stage-1 verifier and the configuration.
#[derive(Debug, Clone, Copy)]
pub struct SearchContext<'a> {
    pub task: &'a Task,
    pub policy: &'a PolicyParams,
    pub verifier: Option<&'a PolicyParams>,
    pub config: &'a SearchConfig,
}

/// One hop of a simulation path; the final hop is the leaf and has no edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PathStep {
    pub node: NodeId,
    pub edge: Option<usize>,
}

impl<'a> SearchContext<'a> {
    pub fn new(
        task: &'a Task,
        policy: &'a PolicyParams,
        verifier: Option<&'a PolicyParams>,
        config: &'a SearchConfig,
    ) -> Result<Self> {
        if config.verify_enabled && verifier.is_none() {
            return Err(Error::Config(
                "verification enabled but no stage-1 checkpoint was supplied".into(),
            ));
        }
        Ok(Self {
            task,
            policy,
            verifier,
            config,
        })
    }

    pub fn score_state(&self, state: &ReasoningState) -> Result<StateScore> {
        let outcome = terminal_status(self.task, state)?.outcome();
        let confidence = self_eval(self.policy, EvalPrompt::StepCheck, self.task, state);
        let mut reward = state_reward(outcome, confidence);
        let mut verified_confidence = None;
        if self.config.verify_enabled {
            let (augmented, c_hat) = verify_augment(reward, self.verifier, self.task, state)?;
            reward = augmented;
            verified_confidence = Some(c_hat);
        }
        Ok(StateScore {
            outcome,
            confidence,
            verified_confidence,
            reward,
        })
    }

    fn new_node(&self, state: ReasoningState, parent: Option<NodeId>) -> Result<TreeNode> {
        let score = self.score_state(&state)?;
        Ok(TreeNode {
            state,
            parent,
            visits: 0,
            value: 0.0,
            reward: score.reward,
            outcome: score.outcome,
            confidence: score.confidence,
            verified_confidence: score.verified_confidence,
            edges: Vec::new(),
        })
    }

    /// A tree holding only the scored root.
    pub fn new_tree(&self, root_state: ReasoningState) -> Result<SearchTree> {
        let root = self.new_node(root_state, None)?;
        if root.is_terminal() {
            return Err(invalid_state("search root must be non-terminal"));
        }
        Ok(SearchTree {
            task_id: self.task.id(),
            config: *self.config,
            total_simulations: 0,
            nodes: vec![root],
        })
    }

    /// Creates one child per candidate step, each scored and linked by an
    /// edge with `Q = r`.
    pub fn expand(&self, tree: &mut SearchTree, node: NodeId) -> Result<()> {
        let parent = &tree.nodes[node];
        if parent.is_terminal() {
            return Err(invalid_state("cannot expand a terminal node"));
        }
        if parent.is_expanded() {
            return Err(invalid_state("node is already expanded"));
        }
        let state = parent.state.clone();
        let parent_reward = parent.reward;
        let candidates = candidate_actions(self.task, &state, self.config.branching)?;
        let priors = adjusted_priors(self.policy, self.task, &state, &candidates, self.config.lambda)?;
        let mut edges = Vec::with_capacity(candidates.len());
        for (&action, prior) in candidates.iter().zip(priors) {
            let child_state = apply_step(self.task, &state, action)?;
            let child = self.new_node(child_state, Some(node))?;
            let reward = step_reward(parent_reward, child.reward);
            edges.push(Edge {
                action,
                child: tree.nodes.len(),
                prior,
                reward,
                q: reward + self.config.gamma * child.value,
            });
            tree.nodes.push(child);
        }
        tree.nodes[node].edges = edges;
        Ok(())
    }

    /// Greedy continuation by adjusted prior from a non-terminal state; returns
    /// the reached terminal state's reward. Adds nothing to the tree.
    pub fn rollout(&self, state: &ReasoningState) -> Result<f64> {
        let RolloutPolicy::GreedyPrior = self.config.rollout_policy;
        if terminal_status(self.task, state)?.is_terminal() {
            return Err(invalid_state("rollout from a terminal state"));
        }
        let mut current = state.clone();
        loop {
            let candidates = candidate_actions(self.task, &current, self.config.branching)?;
            let priors = adjusted_priors(self.policy, self.task, &current, &candidates, self.config.lambda)?;
            let pick = argmax(priors).expect("non-empty");
            current = apply_step(self.task, &current, candidates[pick])?;
            let score = self.score_state(&current)?;
            if score.outcome != 0 {
                return Ok(score.reward);
            }
        }
    }

    /// Runs one select / expand / verify / rollout / backup cycle.
    pub fn simulate(&self, tree: &mut SearchTree) -> Result<()> {
        let mut path = Vec::new();
        let mut id = ROOT;
        let leaf_value = loop {
            let node = &tree.nodes[id];
            if node.is_terminal() {
                break node.reward;
            }
            if !node.is_expanded() {
                self.expand(tree, id)?;
                let edges = &tree.nodes[id].edges;
                let pick = argmax(edges.iter().map(|e| e.prior)).expect("expanded");
                let edge = &edges[pick];
                let child = &tree.nodes[edge.child];
                let below = if child.is_terminal() {
                    child.reward
                } else {
                    self.rollout(&child.state)?
                };
                break edge.reward + self.config.gamma * below;
            }
            let edge = puct_select(tree, id, self.config)?;
            path.push(PathStep {
                node: id,
                edge: Some(edge),
            });
            id = tree.nodes[id].edges[edge].child;
        };
        path.push(PathStep { node: id, edge: None });
        backup(tree, &path, leaf_value)?;
        tree.total_simulations += 1;
        Ok(())
    }
}

fn update_mean(node: &mut TreeNode, value: f64) {
    node.visits += 1;
    node.value += (value - node.value) / f64::from(node.visits);
}

/// Bottom-up update along `path` (root first, leaf last): every node gets a
/// visit and folds the propagated value into its mean; every traversed edge
/// refreshes `Q = r + gamma * V(child)`. The value passed to a parent is
/// `r + gamma * (value from below)`, starting from `leaf_value` at the leaf.
pub fn backup(tree: &mut SearchTree, path: &[PathStep], leaf_value: f64) -> Result<()> {
    let (leaf, inner) = path
        .split_last()
        .ok_or_else(|| invalid_argument("backup path is empty"))?;
    if path[0].node != ROOT {
        return Err(invalid_argument("backup path must start at the root"));
    }
    if leaf.edge.is_some() {
        return Err(invalid_argument("last path step must be the leaf"));
    }
    for (step, next) in inner.iter().zip(&path[1..]) {
        let edges = &tree.nodes[step.node].edges;
        match step.edge {
            Some(e) if e < edges.len() && edges[e].child == next.node => {}
            _ => return Err(invalid_argument("path edges do not link consecutive nodes")),
        }
    }

    let gamma = tree.config.gamma;
    update_mean(&mut tree.nodes[leaf.node], leaf_value);
    let mut value = leaf_value;
    for step in inner.iter().rev() {
        let e = step.edge.expect("checked above");
        let (reward, child) = {
            let edge = &tree.nodes[step.node].edges[e];
            (edge.reward, edge.child)
        };
        value = reward + gamma * value;
        let child_value = tree.nodes[child].value;
        let node = &mut tree.nodes[step.node];
        update_mean(node, value);
        node.edges[e].q = reward + gamma * child_value;
    }
    Ok(())
}

/// Runs `config.budget` simulations from `root_state`. The search is fully
/// deterministic: candidate order is fixed by the environment and every
/// tie breaks to the lowest index.
pub fn run_search(
    task: &Task,
    root_state: &ReasoningState,
    policy: &PolicyParams,
    verifier: Option<&PolicyParams>,
    config: &SearchConfig,
) -> Result<SearchTree> {
    if config.budget == 0 {
        return Err(invalid_argument("search budget must be > 0"));
    }
    let ctx = SearchContext::new(task, policy, verifier, config)?;
    let mut tree = ctx.new_tree(root_state.clone())?;
    for _ in 0..config.budget {
        ctx.simulate(&mut tree)?;
    }
    Ok(tree)
}
