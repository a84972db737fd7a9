//! Synthetic multi-step arithmetic tasks.
//!
//! A task is a left-to-right chain `o0 op0 o1 op1 ... o(m-1)` over small
//! integer operands. Solving it takes `m - 1` steps, each step claiming the
//! next partial result; the last claimed value is the final answer.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::error::{invalid_argument, invalid_state, Result};
use crate::rng::SeededRng;

pub const MIN_DIFFICULTY: usize = 2;
pub const MAX_DIFFICULTY: usize = 6;
pub const OPERAND_MIN: i64 = -9;
pub const OPERAND_MAX: i64 = 9;

pub type TaskId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum Operator {
    #[cfg_attr(feature = "serde", serde(rename = "+"))]
    Add,
    #[cfg_attr(feature = "serde", serde(rename = "-"))]
    Sub,
    #[cfg_attr(feature = "serde", serde(rename = "*"))]
    Mul,
}

impl Operator {
    pub const ALL: [Operator; 3] = [Operator::Add, Operator::Sub, Operator::Mul];

    pub fn apply(self, lhs: i64, rhs: i64) -> i64 {
        match self {
            Operator::Add => lhs.saturating_add(rhs),
            Operator::Sub => lhs.saturating_sub(rhs),
            Operator::Mul => lhs.saturating_mul(rhs),
        }
    }

    pub fn index(self) -> usize {
        match self {
            Operator::Add => 0,
            Operator::Sub => 1,
            Operator::Mul => 2,
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Operator::Add => '+',
            Operator::Sub => '-',
            Operator::Mul => '*',
        }
    }

    pub fn from_symbol(c: char) -> Option<Self> {
        match c {
            '+' => Some(Operator::Add),
            '-' => Some(Operator::Sub),
            '*' | 'x' | '×' => Some(Operator::Mul),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Task {
    id: TaskId,
    operands: Vec<i64>,
    operators: Vec<Operator>,
    oracle_chain: Vec<i64>,
}

impl Task {
    /// Builds a task and derives its oracle chain.
    pub fn new(id: TaskId, operands: Vec<i64>, operators: Vec<Operator>) -> Result<Self> {
        let m = operands.len();
        if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&m) {
            return Err(invalid_argument(format!(
                "task needs {MIN_DIFFICULTY}..={MAX_DIFFICULTY} operands, got {m}"
            )));
        }
        if operators.len() + 1 != m {
            return Err(invalid_argument(format!(
                "{m} operands need {} operators, got {}",
                m - 1,
                operators.len()
            )));
        }
        if let Some(bad) = operands
            .iter()
            .find(|v| !(OPERAND_MIN..=OPERAND_MAX).contains(*v))
        {
            return Err(invalid_argument(format!(
                "operand {bad} outside [{OPERAND_MIN}, {OPERAND_MAX}]"
            )));
        }
        let mut oracle_chain = Vec::with_capacity(m - 1);
        let mut acc = operands[0];
        for (op, &rhs) in operators.iter().zip(&operands[1..]) {
            acc = op.apply(acc, rhs);
            oracle_chain.push(acc);
        }
        Ok(Self {
            id,
            operands,
            operators,
            oracle_chain,
        })
    }

    pub fn id(&self) -> TaskId {
        self.id
    }

    pub fn operands(&self) -> &[i64] {
        &self.operands
    }

    pub fn operators(&self) -> &[Operator] {
        &self.operators
    }

    pub fn oracle_chain(&self) -> &[i64] {
        &self.oracle_chain
    }

    pub fn oracle_answer(&self) -> i64 {
        *self.oracle_chain.last().expect("chain has m-1 >= 1 entries")
    }

    /// Number of operands `m`.
    pub fn difficulty(&self) -> usize {
        self.operands.len()
    }

    /// Steps in a full solution, `m - 1`.
    pub fn num_steps(&self) -> usize {
        self.operators.len()
    }

    /// Renders the problem as text, e.g. `3 + -4 * 2`.
    pub fn prompt(&self) -> String {
        let mut s = self.operands[0].to_string();
        for (op, rhs) in self.operators.iter().zip(&self.operands[1..]) {
            s.push(' ');
            s.push(op.symbol());
            s.push(' ');
            s.push_str(&rhs.to_string());
        }
        s
    }
}

/// Generates a task with `difficulty` operands. Same arguments, same task.
pub fn generate_task(seed: u64, difficulty: usize) -> Result<Task> {
    if !(MIN_DIFFICULTY..=MAX_DIFFICULTY).contains(&difficulty) {
        return Err(invalid_argument(format!(
            "difficulty {difficulty} outside {MIN_DIFFICULTY}..={MAX_DIFFICULTY}"
        )));
    }
    let mut rng = SeededRng::new(seed).split("task");
    let operands = (0..difficulty)
        .map(|_| rng.range_inclusive(OPERAND_MIN, OPERAND_MAX))
        .collect();
    let operators = (0..difficulty - 1)
        .map(|_| Operator::ALL[rng.below(3) as usize])
        .collect();
    Task::new(seed, operands, operators)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct EnvConfig {
    /// Candidate steps offered at every state (K).
    pub branching: usize,
    pub min_difficulty: usize,
    pub max_difficulty: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            branching: 4,
            min_difficulty: 2,
            max_difficulty: 4,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.branching < 2 {
            return Err(crate::Error::Config(
                "env.branching must be >= 2".to_string(),
            ));
        }
        if self.min_difficulty < MIN_DIFFICULTY
            || self.max_difficulty > MAX_DIFFICULTY
            || self.min_difficulty > self.max_difficulty
        {
            return Err(crate::Error::Config(format!(
                "env.min_difficulty..=env.max_difficulty must lie in {MIN_DIFFICULTY}..={MAX_DIFFICULTY}"
            )));
        }
        Ok(())
    }
}

/// Draws `count` tasks from `rng`; task `i` depends only on `rng`'s key and `i`.
pub fn generate_task_set(rng: &SeededRng, count: usize, config: &EnvConfig) -> Result<Vec<Task>> {
    config.validate()?;
    let span = (config.max_difficulty - config.min_difficulty + 1) as u64;
    (0..count as u64)
        .map(|i| {
            let mut item = rng.split_index(i);
            let seed = item.next_u64();
            let difficulty = config.min_difficulty + item.below(span) as usize;
            generate_task(seed, difficulty)
        })
        .collect()
}

/// Tasks keyed by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskIndex(BTreeMap<TaskId, Task>);

impl TaskIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, task: Task) {
        self.0.insert(task.id, task);
    }

    pub fn get(&self, id: TaskId) -> Result<&Task> {
        self.0.get(&id).ok_or(crate::Error::UnknownTask(id))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl FromIterator<Task> for TaskIndex {
    fn from_iter<I: IntoIterator<Item = Task>>(iter: I) -> Self {
        Self(iter.into_iter().map(|t| (t.id, t)).collect())
    }
}

impl Extend<Task> for TaskIndex {
    fn extend<I: IntoIterator<Item = Task>>(&mut self, iter: I) {
        self.0.extend(iter.into_iter().map(|t| (t.id, t)));
    }
}

/// A prefix of a reasoning chain: the partial results claimed so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ReasoningState {
    pub task_id: TaskId,
    pub claimed: Vec<i64>,
}

impl ReasoningState {
    pub fn root(task_id: TaskId) -> Self {
        Self {
            task_id,
            claimed: Vec::new(),
        }
    }

    pub fn depth(&self) -> usize {
        self.claimed.len()
    }

    pub fn is_root(&self) -> bool {
        self.claimed.is_empty()
    }

    /// Value the next step operates on: the last claim, or the first operand
    /// at the root.
    pub fn accumulator(&self, task: &Task) -> i64 {
        self.claimed.last().copied().unwrap_or(task.operands[0])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StepAction {
    pub value: i64,
}

impl StepAction {
    pub fn new(value: i64) -> Self {
        Self { value }
    }

    pub fn rendering(&self) -> String {
        self.value.to_string()
    }

    /// Character count of the decimal rendering, sign included.
    pub fn length(&self) -> usize {
        let mut n = self.value.unsigned_abs();
        let mut digits = 1;
        while n >= 10 {
            n /= 10;
            digits += 1;
        }
        digits + usize::from(self.value < 0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum TerminalStatus {
    CorrectTerminal,
    IncorrectTerminal,
    Intermediate,
}

impl TerminalStatus {
    /// Outcome correctness: 1, -1 or 0.
    pub fn outcome(self) -> i8 {
        match self {
            TerminalStatus::CorrectTerminal => 1,
            TerminalStatus::IncorrectTerminal => -1,
            TerminalStatus::Intermediate => 0,
        }
    }

    pub fn is_terminal(self) -> bool {
        self != TerminalStatus::Intermediate
    }
}

fn check_owner(task: &Task, state: &ReasoningState) -> Result<()> {
    if state.task_id != task.id {
        return Err(invalid_argument(format!(
            "state belongs to task {} but task {} was given",
            state.task_id, task.id
        )));
    }
    if state.depth() > task.num_steps() {
        return Err(invalid_argument(format!(
            "state depth {} exceeds {} steps",
            state.depth(),
            task.num_steps()
        )));
    }
    Ok(())
}

pub fn terminal_status(task: &Task, state: &ReasoningState) -> Result<TerminalStatus> {
    check_owner(task, state)?;
    Ok(match state.claimed.last() {
        _ if state.depth() < task.num_steps() => TerminalStatus::Intermediate,
        Some(&v) if v == task.oracle_answer() => TerminalStatus::CorrectTerminal,
        _ => TerminalStatus::IncorrectTerminal,
    })
}

pub fn is_terminal(task: &Task, state: &ReasoningState) -> bool {
    state.depth() >= task.num_steps()
}

/// Whether every claim so far agrees with the oracle chain.
pub fn is_prefix_correct(task: &Task, state: &ReasoningState) -> bool {
    state.claimed.iter().zip(&task.oracle_chain).all(|(a, b)| a == b)
}

/// Answer checker: 1 iff `answer` equals the task's oracle answer.
pub fn oracle_reward(answer: i64, task: &Task) -> u8 {
    u8::from(answer == task.oracle_answer())
}

/// `s_{t+1} = s_t ++ [a]`.
pub fn apply_step(task: &Task, state: &ReasoningState, action: StepAction) -> Result<ReasoningState> {
    check_owner(task, state)?;
    if is_terminal(task, state) {
        return Err(invalid_state("cannot extend a terminal state"));
    }
    let mut claimed = Vec::with_capacity(state.depth() + 1);
    claimed.extend_from_slice(&state.claimed);
    claimed.push(action.value);
    Ok(ReasoningState {
        task_id: state.task_id,
        claimed,
    })
}

fn state_key(task: &Task, state: &ReasoningState) -> u64 {
    let mut rng = SeededRng::new(task.id).split("candidates");
    rng = rng.split_index(state.depth() as u64);
    for &v in &state.claimed {
        rng = rng.split_index(v as u64);
    }
    rng.next_u64()
}

/// Offers `k` distinct next steps: the oracle-correct partial result plus
/// near-miss distractors (off by one, sign flip, wrong operator), padded with
/// `correct ± j` when the pool runs short. Which distractors appear and the
/// final order are a deterministic function of `(task, state)`.
pub fn candidate_actions(task: &Task, state: &ReasoningState, k: usize) -> Result<Vec<StepAction>> {
    check_owner(task, state)?;
    if k < 2 {
        return Err(invalid_argument("need at least 2 candidates"));
    }
    if is_terminal(task, state) {
        return Err(invalid_state("terminal state has no next step"));
    }
    let step = state.depth();
    let correct = task.oracle_chain[step];
    let prev = if step == 0 {
        task.operands[0]
    } else {
        task.oracle_chain[step - 1]
    };
    let rhs = task.operands[step + 1];
    let op = task.operators[step];

    let mut pool: Vec<i64> = Vec::with_capacity(5);
    let push = |pool: &mut Vec<i64>, v: i64| {
        if v != correct && !pool.contains(&v) {
            pool.push(v);
        }
    };
    push(&mut pool, correct + 1);
    push(&mut pool, correct - 1);
    push(&mut pool, -correct);
    for other in Operator::ALL {
        if other != op {
            push(&mut pool, other.apply(prev, rhs));
        }
    }

    let mut rng = SeededRng::new(state_key(task, state));
    // Partial Fisher-Yates picks k-1 distractors from the pool.
    let take = (k - 1).min(pool.len());
    for i in 0..take {
        let j = i + rng.below((pool.len() - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(take);
    let mut offset = 2;
    while pool.len() < k - 1 {
        for v in [correct + offset, correct - offset] {
            if pool.len() < k - 1 {
                push(&mut pool, v);
            }
        }
        offset += 1;
    }

    let mut values = Vec::with_capacity(k);
    values.push(correct);
    values.extend(pool);
    for i in (1..values.len()).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        values.swap(i, j);
    }
    Ok(values.into_iter().map(StepAction::new).collect())
}
