//! Blueprint distillation from successful trajectories.

use std::collections::BTreeMap;

use serde_json::Value;
use thiserror::Error;

use crate::backend::{extract_json, BackendError, ChatBackend, ChatRequest, DistillContext, Message};
use crate::model::{Env, Trajectory, TrajectoryRecord, Validity};
use crate::par::Exec;
use crate::progress::{Blueprint, BlueprintAnchor, ChunkStep};
use crate::prompts::{render, template, Role};
use crate::rules::{parse_action, ActionTerm, TextcraftAction};
use crate::scene::parse_textcraft_instruction;

pub const DEFAULT_RETRIES: usize = 2;
pub const FALLBACK_ANCHOR: &str = "Complete the task";

#[derive(Debug, Error)]
pub enum SegmentationError {
    #[error("trajectory {0} is not a success")]
    NotSuccessful(String),
    #[error("malformed segmentation: {0}")]
    MalformedJson(String),
    #[error("action index {index} outside 1..={len}")]
    IndexOutOfRange { index: i64, len: usize },
    #[error("anchor {anchor} overlaps or precedes the previous anchor")]
    Overlapping { anchor: usize },
    #[error("segmentation has no usable anchors")]
    EmptyAnchors,
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Exactly the successful trajectories.
pub fn filter_successes(dataset: &[Trajectory]) -> Vec<Trajectory> {
    dataset.iter().filter(|t| t.success).cloned().collect()
}

/// Anchor text with its 1-based inclusive action range.
pub type Segment = (String, (usize, usize));

/// Parses a distiller reply into `(anchor text, 1-based inclusive range)`.
/// Index lists collapse to `min..=max`; ranges must increase strictly.
pub fn parse_segmentation(reply: &str, actions: usize) -> Result<Vec<Segment>, SegmentationError> {
    let Some(Value::Array(items)) = extract_json(reply, '[') else {
        return Err(SegmentationError::MalformedJson("no JSON array in reply".into()));
    };
    if items.is_empty() {
        return Err(SegmentationError::EmptyAnchors);
    }
    let mut out: Vec<Segment> = Vec::with_capacity(items.len());
    for (k, item) in items.iter().enumerate() {
        let text = item
            .get("blueprint")
            .and_then(Value::as_str)
            .filter(|t| !t.trim().is_empty())
            .ok_or_else(|| SegmentationError::MalformedJson(format!("anchor {} has no blueprint text", k + 1)))?;
        let idx = item
            .get("actions")
            .and_then(Value::as_array)
            .ok_or_else(|| SegmentationError::MalformedJson(format!("anchor {} has no action list", k + 1)))?;
        if idx.is_empty() {
            return Err(SegmentationError::EmptyAnchors);
        }
        let mut lo = usize::MAX;
        let mut hi = 0;
        for v in idx {
            let i = v.as_i64().ok_or_else(|| SegmentationError::MalformedJson(format!("bad index {v}")))?;
            if i < 1 || i as usize > actions {
                return Err(SegmentationError::IndexOutOfRange { index: i, len: actions });
            }
            lo = lo.min(i as usize);
            hi = hi.max(i as usize);
        }
        if out.last().is_some_and(|(_, (_, e))| lo <= *e) {
            return Err(SegmentationError::Overlapping { anchor: k + 1 });
        }
        out.push((text.trim().to_string(), (lo, hi)));
    }
    Ok(out)
}

/// `(o_{i-1}, a_i)` pairs for the 1-based inclusive range.
fn chunk(traj: &Trajectory, (b, e): (usize, usize)) -> Vec<ChunkStep> {
    (b..=e)
        .map(|i| ChunkStep {
            observation: if i == 1 { traj.initial_observation.clone() } else { traj.steps[i - 2].observation.clone() },
            action: traj.steps[i - 1].action.clone(),
        })
        .collect()
}

fn blueprint(traj: &Trajectory, segments: Vec<Segment>) -> Blueprint {
    Blueprint {
        task_id: traj.task.id.clone(),
        task_instruction: traj.task.instruction.clone(),
        anchors: segments
            .into_iter()
            .map(|(text, span)| BlueprintAnchor { text, span: Some(span), chunk: chunk(traj, span) })
            .collect(),
        degenerate: false,
    }
}

pub fn numbered_actions(traj: &Trajectory) -> String {
    traj.steps.iter().enumerate().map(|(i, s)| format!("{}. {}", i + 1, s.action)).collect::<Vec<_>>().join("\n")
}

/// One distiller call and strict validation of its answer.
pub fn segment_trajectory(traj: &Trajectory, backend: &dyn ChatBackend) -> Result<Blueprint, SegmentationError> {
    if !traj.success {
        return Err(SegmentationError::NotSuccessful(traj.task.id.clone()));
    }
    let env = traj.env();
    let prompt = render(
        template(Role::Distiller, env),
        &[("TASK", &traj.task.instruction), ("TRAJECTORY", &numbered_actions(traj))],
    );
    let request = ChatRequest::new(Role::Distiller, env, vec![Message::user(prompt)])
        .with_context(DistillContext { trajectory: TrajectoryRecord::from(traj) });
    let reply = backend.chat(&request)?;
    Ok(blueprint(traj, parse_segmentation(&reply, traj.steps.len())?))
}

/// Calls the distiller up to `1 + retries` times. The last error is returned
/// when every attempt fails.
pub fn segment_with_retries(
    traj: &Trajectory,
    backend: &dyn ChatBackend,
    retries: usize,
) -> Result<Blueprint, SegmentationError> {
    let mut last = None;
    for attempt in 0..=retries {
        match segment_trajectory(traj, backend) {
            Ok(bp) => return Ok(bp),
            Err(e @ SegmentationError::NotSuccessful(_)) => return Err(e),
            Err(e) => {
                tracing::debug!(task = %traj.task.id, attempt, error = %e, "segmentation attempt failed");
                last = Some(e);
            }
        }
    }
    Err(last.expect("at least one attempt"))
}

#[derive(Debug, Default)]
pub struct DistillOutcome {
    pub blueprints: Vec<Blueprint>,
    /// `(task id, error)` for dropped trajectories.
    pub dropped: Vec<(String, String)>,
}

/// Distils every success; trajectories that keep failing are dropped and
/// reported. Output is ordered by task id.
pub fn distill_all(exec: Exec, dataset: &[Trajectory], backend: &dyn ChatBackend, retries: usize) -> DistillOutcome {
    let mut successes = filter_successes(dataset);
    successes.sort_by(|a, b| a.task.id.cmp(&b.task.id));
    let results = exec.map(&successes, |t| segment_with_retries(t, backend, retries));
    let mut out = DistillOutcome::default();
    for (t, r) in successes.iter().zip(results) {
        match r {
            Ok(bp) => out.blueprints.push(bp),
            Err(e) => {
                tracing::warn!(task = %t.task.id, error = %e, "dropping trajectory after failed segmentation");
                out.dropped.push((t.task.id.clone(), e.to_string()));
            }
        }
    }
    out
}

/// Deterministic TextCraft segmenter. Cuts after each successful craft,
/// merging back-to-back crafts of the same item; steps after the last craft
/// are left out.
pub fn heuristic_segment_textcraft(traj: &Trajectory) -> Blueprint {
    let goal = parse_textcraft_instruction(&traj.task.instruction).ok().map(|(g, _)| g.item);
    let mut segments: Vec<Segment> = Vec::new();
    let mut start = 1;
    let mut gets: BTreeMap<String, u32> = BTreeMap::new();
    let mut open: Option<(String, u32, usize)> = None;

    let close = |segments: &mut Vec<_>,
                 gets: &mut BTreeMap<String, u32>,
                 (item, n, end): (String, u32, usize),
                 start: usize| {
        let text = if goal.as_deref() == Some(item.as_str()) {
            format!("Craft the {item}")
        } else if gets.is_empty() {
            format!("Craft {n} {item}")
        } else {
            let g: Vec<String> = gets.iter().map(|(k, c)| format!("{c} {k}")).collect();
            format!("Gather {} and craft {n} {item}", g.join(", "))
        };
        gets.clear();
        segments.push((text, (start, end)));
    };

    for (i, step) in traj.steps.iter().enumerate() {
        let idx = i + 1;
        if step.valid != Validity::Valid {
            continue;
        }
        match parse_action(Env::Textcraft, &step.action) {
            Ok(ActionTerm::Textcraft(TextcraftAction::Craft { count, item, .. }))
                if step.observation.starts_with("Crafted ") =>
            {
                match open.take() {
                    Some((cur, n, _)) if cur == item => open = Some((cur, n + count, idx)),
                    Some(prev) => {
                        let end = prev.2;
                        close(&mut segments, &mut gets, prev, start);
                        start = end + 1;
                        open = Some((item, count, idx));
                    }
                    None => open = Some((item, count, idx)),
                }
            }
            Ok(ActionTerm::Textcraft(TextcraftAction::Get { count, item })) if step.observation.starts_with("Got ") => {
                if let Some(prev) = open.take() {
                    let end = prev.2;
                    close(&mut segments, &mut gets, prev, start);
                    start = end + 1;
                }
                *gets.entry(item).or_default() += count;
            }
            _ => {}
        }
    }
    if let Some(prev) = open.take() {
        close(&mut segments, &mut gets, prev, start);
    }

    if traj.steps.is_empty() {
        return Blueprint {
            task_id: traj.task.id.clone(),
            task_instruction: traj.task.instruction.clone(),
            anchors: vec![BlueprintAnchor { text: FALLBACK_ANCHOR.into(), span: None, chunk: Vec::new() }],
            degenerate: true,
        };
    }
    if segments.is_empty() {
        segments.push((FALLBACK_ANCHOR.into(), (1, traj.steps.len())));
    }
    blueprint(traj, segments)
}
