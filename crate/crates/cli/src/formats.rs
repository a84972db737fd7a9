//! Line-delimited JSON data files: tasks, preference pairs, episodes,
//! search trees and per-task outcomes.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use scmcts_core::env::{Operator, Task, TaskId};
use scmcts_core::prefopt::PreferencePair;
use scmcts_core::search::SearchTree;
use scmcts_core::selfcorrect::{EpisodeTrace, Instruction};

use crate::error::{io_error, Error, Result};

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
    }
    let file = File::create(path).map_err(io_error(path))?;
    let mut w = BufWriter::new(file);
    for item in items {
        let line = serde_json::to_string(&item).expect("records always serialize");
        writeln!(w, "{line}").map_err(io_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = File::open(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_error(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: TaskId,
    pub operands: Vec<i64>,
    pub operators: Vec<Operator>,
    pub oracle_answer: i64,
}

impl From<&Task> for TaskRecord {
    fn from(task: &Task) -> Self {
        Self {
            id: task.id(),
            operands: task.operands().to_vec(),
            operators: task.operators().to_vec(),
            oracle_answer: task.oracle_answer(),
        }
    }
}

impl TaskRecord {
    /// Rebuilds the task, recomputing its oracle chain and checking the
    /// stored answer against it.
    pub fn into_task(self) -> Result<Task, String> {
        let task = Task::new(self.id, self.operands, self.operators).map_err(|e| e.to_string())?;
        if task.oracle_answer() != self.oracle_answer {
            return Err(format!(
                "task {}: stored oracle_answer {} but the operands give {}",
                self.id,
                self.oracle_answer,
                task.oracle_answer()
            ));
        }
        Ok(task)
    }
}

pub fn write_tasks(path: &Path, tasks: &[Task]) -> Result<()> {
    write_jsonl(path, tasks.iter().map(TaskRecord::from))
}

pub fn read_tasks(path: &Path) -> Result<Vec<Task>> {
    let records: Vec<TaskRecord> = read_jsonl(path)?;
    records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.into_task().map_err(|message| Error::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub task_id: TaskId,
    pub prefix: Vec<i64>,
    pub chosen: i64,
    pub rejected: i64,
    pub q_chosen: f64,
    pub q_rejected: f64,
    pub depth: usize,
}

impl From<&PreferencePair> for PairRecord {
    fn from(p: &PreferencePair) -> Self {
        Self {
            task_id: p.task_id,
            prefix: p.prefix.claimed.clone(),
            chosen: p.chosen.value,
            rejected: p.rejected.value,
            q_chosen: p.q_chosen,
            q_rejected: p.q_rejected,
            depth: p.depth,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptLine {
    pub turn: usize,
    pub steps: Vec<i64>,
    pub log_probs: Vec<f64>,
    pub final_answer: i64,
    pub reward: u8,
    /// Previous attempt's answer and confidence, for retries.
    pub previous_answer: Option<i64>,
    pub previous_confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task_id: TaskId,
    pub instructions: Vec<Instruction>,
    pub attempts: Vec<AttemptLine>,
    pub total_reward: u32,
}

impl From<&EpisodeTrace> for EpisodeRecord {
    fn from(e: &EpisodeTrace) -> Self {
        Self {
            task_id: e.task_id,
            instructions: e.instructions.clone(),
            attempts: e
                .attempts
                .iter()
                .map(|a| AttemptLine {
                    turn: a.turn_index,
                    steps: a.steps.iter().map(|s| s.value).collect(),
                    log_probs: a.log_probs.clone(),
                    final_answer: a.final_answer,
                    reward: a.reward,
                    previous_answer: a.context.as_ref().map(|c| c.answer),
                    previous_confidence: a.context.as_ref().map(|c| c.confidence),
                })
                .collect(),
            total_reward: e.total_reward,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeLine {
    pub action: i64,
    pub child: usize,
    pub prior: f64,
    pub r: f64,
    pub q: f64,
}

/// One search-tree node. Field order is fixed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub id: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub claimed: Vec<i64>,
    pub n: u32,
    pub v: f64,
    pub r: f64,
    pub o: i8,
    pub c: f64,
    pub c_hat: Option<f64>,
    pub edges: Vec<EdgeLine>,
}

/// Nodes in breadth-first order.
pub fn tree_records(tree: &SearchTree) -> Vec<NodeRecord> {
    tree.breadth_first()
        .into_iter()
        .map(|id| {
            let n = tree.node(id);
            NodeRecord {
                id,
                parent: n.parent,
                depth: n.depth(),
                claimed: n.state.claimed.clone(),
                n: n.visits,
                v: n.value,
                r: n.reward,
                o: n.outcome,
                c: n.confidence,
                c_hat: n.verified_confidence,
                edges: n
                    .edges
                    .iter()
                    .map(|e| EdgeLine {
                        action: e.action.value,
                        child: e.child,
                        prior: e.prior,
                        r: e.reward,
                        q: e.q,
                    })
                    .collect(),
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use scmcts_core::env::generate_task;

    #[test]
    fn tasks_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        let tasks: Vec<Task> = (0..10).map(|s| generate_task(s, 2 + (s as usize % 5)).unwrap()).collect();
        write_tasks(&path, &tasks).unwrap();
        assert_eq!(read_tasks(&path).unwrap(), tasks);
        let first = std::fs::read_to_string(&path).unwrap();
        assert!(first.lines().next().unwrap().starts_with("{\"id\":0,\"operands\":"));
    }

    #[test]
    fn tampered_answer_is_rejected_with_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tasks.jsonl");
        std::fs::write(
            &path,
            "{\"id\":1,\"operands\":[3,4],\"operators\":[\"+\"],\"oracle_answer\":7}\n\
             {\"id\":2,\"operands\":[2,3],\"operators\":[\"*\"],\"oracle_answer\":5}\n",
        )
        .unwrap();
        match read_tasks(&path) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
