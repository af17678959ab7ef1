//! The 2σ / 3σ / all fallback ladder as a pure function of the update
//! statistics stream.

use std::collections::VecDeque;

use crate::estimation::GateBound;
use crate::pipeline::{UpdateOutcome, UpdateStats};
use crate::types::Timestamp;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LadderRules {
    /// Consecutive would-be rejections at the current rung that trigger a descent.
    pub descend_after: usize,
    /// Consecutive would-be acceptances at a stricter rung that trigger a climb back.
    pub improve_after: usize,
}

/// Ladder position plus the decisions seen since it last moved.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LadderState {
    pub level: usize,
    window: VecDeque<UpdateStats>,
    pub last_accept: Option<Timestamp>,
    /// Time of the decision that last moved the ladder; each rung gets its
    /// own stale window from here.
    pub moved_at: Option<Timestamp>,
    /// Tick at which the state was last advanced.
    pub(crate) evaluated_tick: Option<u64>,
}

impl LadderState {
    pub fn bound(&self) -> GateBound {
        GateBound::from_rung(self.level)
    }
}

/// Outcome of feeding one batch of statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LadderStep {
    /// Innovation norm of the decision that moved the ladder onto ALL.
    pub entered_all: Option<f64>,
}

fn tail_all(window: &VecDeque<UpdateStats>, n: usize, pred: impl Fn(&UpdateStats) -> bool) -> bool {
    n > 0 && window.len() >= n && window.iter().rev().take(n).all(pred)
}

/// Advances `state` over `batch` (decision records only are considered).
/// Several rungs may be crossed by one record: every rung judges the same
/// record through its Mahalanobis distance.
pub fn ladder_step(state: &mut LadderState, batch: &[UpdateStats], rules: &LadderRules, hold_strict: bool) -> LadderStep {
    let mut step = LadderStep { entered_all: None };
    let keep = rules.descend_after.max(rules.improve_after);
    for s in batch.iter().filter(|s| s.is_decision()) {
        if s.outcome == UpdateOutcome::Accepted {
            state.last_accept = Some(s.timestamp);
        }
        state.window.push_back(s.clone());
        while state.window.len() > keep {
            state.window.pop_front();
        }
        let before = state.level;
        while state.level < 2
            && tail_all(&state.window, rules.descend_after, |w| {
                w.rejected_at(GateBound::from_rung(state.level)) == Some(true)
            })
        {
            state.level += 1;
        }
        if state.level == before && state.level > 0 {
            if let Some(k) = (0..state.level).find(|&k| {
                tail_all(&state.window, rules.improve_after, |w| {
                    w.rejected_at(GateBound::from_rung(k)) == Some(false)
                })
            }) {
                state.level = k;
            }
        }
        if hold_strict {
            state.level = 0;
        }
        if state.level != before {
            state.moved_at = Some(s.timestamp);
            if state.level == 2 {
                step.entered_all = Some(s.innovation_norm());
            }
            // a descent keeps its rejections: they count against the next rung too
            if state.level < before {
                state.window.clear();
            }
        }
    }
    step
}
