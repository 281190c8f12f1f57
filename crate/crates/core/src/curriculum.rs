//! Two-phase training curricula: a fixed fraction of the step budget is
//! spent in an easier environment before switching to the target one.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{ActionMode, Detection, EnvConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurriculumError {
    #[error("step {step} outside the budget of {total} steps")]
    StepOutOfRange { step: u64, total: u64 },
    #[error("invalid curriculum: {0}")]
    Invalid(String),
    #[error("unknown curriculum `{0}` (expected none|action|difficulty)")]
    UnknownKind(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurriculumKind {
    /// Train on the target environment for the whole budget.
    None,
    /// SAT then FAT, both single detection.
    Action,
    /// Single then multi detection, both FAT.
    Difficulty,
}

impl FromStr for CurriculumKind {
    type Err = CurriculumError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(CurriculumKind::None),
            "action" => Ok(CurriculumKind::Action),
            "difficulty" => Ok(CurriculumKind::Difficulty),
            _ => Err(CurriculumError::UnknownKind(s.to_string())),
        }
    }
}

impl fmt::Display for CurriculumKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CurriculumKind::None => "none",
            CurriculumKind::Action => "action",
            CurriculumKind::Difficulty => "difficulty",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::One => 1,
            Phase::Two => 2,
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.number())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSpec {
    pub kind: CurriculumKind,
    pub split: f64,
    pub total_steps: u64,
    pub phase1: EnvConfig,
    pub phase2: EnvConfig,
}

pub const DEFAULT_SPLIT: f64 = 0.30;

impl CurriculumSpec {
    /// Derives both phase configs from `base` (edge count, step limit and so on),
    /// overriding mode and detection as the kind requires. For `None` both
    /// phases are `base`.
    pub fn new(
        kind: CurriculumKind,
        split: f64,
        total_steps: u64,
        base: &EnvConfig,
    ) -> Result<Self, CurriculumError> {
        let with = |mode, detection| EnvConfig {
            mode,
            detection,
            ..base.clone()
        };
        let (phase1, phase2) = match kind {
            CurriculumKind::None => (base.clone(), base.clone()),
            CurriculumKind::Action => (
                with(ActionMode::Sat, Detection::Single),
                with(ActionMode::Fat, Detection::Single),
            ),
            CurriculumKind::Difficulty => (
                with(ActionMode::Fat, Detection::Single),
                with(ActionMode::Fat, Detection::Multi),
            ),
        };
        let spec = Self {
            kind,
            split,
            total_steps,
            phase1,
            phase2,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), CurriculumError> {
        if self.total_steps == 0 {
            return Err(CurriculumError::Invalid(
                "total_steps must be positive".into(),
            ));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(CurriculumError::Invalid(format!(
                "split must lie in (0, 1), got {}",
                self.split
            )));
        }
        let modes = |c: &EnvConfig| (c.mode, c.detection);
        let ok = match self.kind {
            CurriculumKind::None => true,
            CurriculumKind::Action => {
                modes(&self.phase1) == (ActionMode::Sat, Detection::Single)
                    && modes(&self.phase2) == (ActionMode::Fat, Detection::Single)
            }
            CurriculumKind::Difficulty => {
                modes(&self.phase1) == (ActionMode::Fat, Detection::Single)
                    && modes(&self.phase2) == (ActionMode::Fat, Detection::Multi)
            }
        };
        if !ok {
            return Err(CurriculumError::Invalid(format!(
                "phase configs do not match the {} curriculum",
                self.kind
            )));
        }
        Ok(())
    }

    /// `floor(split * total_steps)`, or `None` when there is no switch.
    ///
    /// Products within 1e-9 relative of an integer snap to it, so decimal
    /// splits such as 0.3 give the intended boundary despite binary rounding.
    pub fn switch_step(&self) -> Option<u64> {
        if self.kind == CurriculumKind::None {
            return None;
        }
        let exact = self.split * self.total_steps as f64;
        let nearest = exact.round();
        let step = if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            nearest
        } else {
            exact.floor()
        };
        Some(step as u64)
    }

    pub fn phase_at(&self, step: u64) -> Result<(Phase, &EnvConfig), CurriculumError> {
        if step >= self.total_steps {
            return Err(CurriculumError::StepOutOfRange {
                step,
                total: self.total_steps,
            });
        }
        match self.switch_step() {
            Some(switch) if step < switch => Ok((Phase::One, &self.phase1)),
            _ => Ok((Phase::Two, &self.phase2)),
        }
    }
}
