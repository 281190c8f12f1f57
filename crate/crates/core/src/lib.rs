//! Iterative 2D wire-frame reconstruction as an episodic RL environment.
//!
//! An agent aligns a reconstruction line, anchored at the centre of a 60x60
//! image, with one edge of a wire-frame drawn on a 30x30 canvas. It can
//! translate the frame, move the free end of the line, or fixate to declare
//! the alignment final.

pub mod agent;
pub mod curriculum;
pub mod env;
pub mod geometry;
pub mod iou;
pub mod rewards;
pub mod scene;

pub use agent::{Agent, FixateAgent, OraclePlanner, RandomAgent};
pub use curriculum::{CurriculumError, CurriculumKind, CurriculumSpec, Phase};
pub use env::{
    ActionMode, ActionVector, Detection, Env, EnvConfig, EnvError, EnvState, Observation,
    PixelClass, StepInfo, StepResult, ACTION_ARITIES, ANCHOR, CANVAS_SIZE, STATE_SIZE,
};
pub use geometry::{
    generate_wireframe, generate_wireframe_with, matched_edge_distance, rasterize_segment,
    GeneratorParams, GeometryError, Point, Segment, WireFrame,
};
pub use iou::Iou;
pub use rewards::{
    episodic_reward, final_step_reward, step_reward, EpisodeAccumulator, RewardConfig, RewardError,
    RewardScheme,
};
