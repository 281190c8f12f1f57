//! Action-selection interface plus a few reference agents, including the
//! exhaustive oracle planner.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::env::{
    ActionMode, ActionVector, EnvState, Observation, ACTION_ARITIES, ANCHOR, MAX_OFFSET,
};
use crate::geometry::Point;

/// Anything that picks an action for the current state.
///
/// Learned policies only look at the observation; planners may read the
/// full state.
pub trait Agent {
    fn act(&mut self, state: &EnvState, obs: &Observation) -> ActionVector;
}

impl<A: Agent + ?Sized> Agent for &mut A {
    fn act(&mut self, state: &EnvState, obs: &Observation) -> ActionVector {
        (**self).act(state, obs)
    }
}

/// Plans a perfect alignment from the true state and walks straight to it.
#[derive(Debug, Clone, Copy, Default)]
pub struct OraclePlanner;

impl OraclePlanner {
    /// Frame offsets at which the current line exactly covers an undetected
    /// edge, found by trying all 31x31 offsets. Sorted by distance from the
    /// current offset (Chebyshev, then row-major).
    pub fn aligning_offsets(state: &EnvState) -> Vec<Point> {
        let mut probe = state.clone();
        let mut hits = Vec::new();
        for y in 0..=MAX_OFFSET {
            for x in 0..=MAX_OFFSET {
                let off = Point::new(x, y);
                probe = probe.with_offset(off);
                if probe
                    .eval_iou()
                    .map(|(iou, _)| iou.is_one())
                    .unwrap_or(false)
                {
                    hits.push(off);
                }
            }
        }
        let cur = state.frame_offset();
        hits.sort_by_key(|&p| (p.chebyshev(cur), p.y, p.x));
        hits
    }

    /// Target `(frame_offset, tip)` pair reachable with the fewest steps.
    pub fn plan(state: &EnvState) -> Option<(Point, Point)> {
        match state.mode() {
            ActionMode::Sat => Self::aligning_offsets(state)
                .first()
                .map(|&off| (off, state.tip())),
            ActionMode::Fat => {
                let (cur_off, cur_tip) = (state.frame_offset(), state.tip());
                let mut best: Option<(i32, Point, Point)> = None;
                for i in state.undetected() {
                    let e = state.frame().edges()[i];
                    for (a, b) in [(e.a, e.b), (e.b, e.a)] {
                        let off = ANCHOR - a;
                        if !(0..=MAX_OFFSET).contains(&off.x) || !(0..=MAX_OFFSET).contains(&off.y)
                        {
                            continue;
                        }
                        let tip = ANCHOR + (b - a);
                        let cost = off.chebyshev(cur_off).max(tip.chebyshev(cur_tip));
                        if best.is_none_or(|(c, _, _)| cost < c) {
                            best = Some((cost, off, tip));
                        }
                    }
                }
                best.map(|(_, off, tip)| (off, tip))
            }
        }
    }
}

impl Agent for OraclePlanner {
    fn act(&mut self, state: &EnvState, _obs: &Observation) -> ActionVector {
        let Some((off, tip)) = Self::plan(state) else {
            return ActionVector::FIXATE;
        };
        let d_off = off - state.frame_offset();
        let d_tip = tip - state.tip();
        if d_off == Point::default() && d_tip == Point::default() {
            return ActionVector::FIXATE;
        }
        let s = |v: i32| v.signum() as i8;
        ActionVector::moves(s(d_off.x), s(d_off.y), s(d_tip.x), s(d_tip.y))
    }
}

/// Uniformly random component indices.
#[derive(Debug, Clone)]
pub struct RandomAgent {
    rng: ChaCha8Rng,
}

impl RandomAgent {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Agent for RandomAgent {
    fn act(&mut self, _state: &EnvState, _obs: &Observation) -> ActionVector {
        let idx = ACTION_ARITIES.map(|n| self.rng.random_range(0..n));
        ActionVector::from_indices(&idx).expect("indices drawn within arity")
    }
}

/// Fixates on the first step.
#[derive(Debug, Clone, Copy, Default)]
pub struct FixateAgent;

impl Agent for FixateAgent {
    fn act(&mut self, _state: &EnvState, _obs: &Observation) -> ActionVector {
        ActionVector::FIXATE
    }
}
