//! The episodic reconstruction environment.
//!
//! A 30x30 target canvas holding the wire-frame sits inside a 60x60 state
//! image at `frame_offset`. The reconstruction line runs from the fixed
//! anchor at the image midpoint to a movable tip. Each step can translate the
//! frame and the tip by one pixel per axis, or fixate to end the episode.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{
    generate_wireframe_with, matched_edge_distance, rasterize_segment, GeneratorParams,
    GeometryError, Point, Segment, WireFrame,
};
use crate::iou::Iou;
use crate::rewards::{episodic_reward, step_reward, EpisodeAccumulator, RewardConfig, RewardError};

pub const STATE_SIZE: i32 = 60;
pub const CANVAS_SIZE: i32 = 30;
pub const MAX_OFFSET: i32 = STATE_SIZE - CANVAS_SIZE;
pub const ANCHOR: Point = Point::new(STATE_SIZE / 2, STATE_SIZE / 2);
pub const INITIAL_OFFSET: Point = Point::new(MAX_OFFSET / 2, MAX_OFFSET / 2);
pub const N_PIXELS: usize = (STATE_SIZE * STATE_SIZE) as usize;
/// Number of choices per action component: four ternary moves and fixate.
pub const ACTION_ARITIES: [usize; 5] = [3, 3, 3, 3, 2];

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("invalid environment config: {0}")]
    InvalidConfig(String),
    #[error("episode already finished; call reset first")]
    EpisodeFinished,
    #[error("no undetected edges remain")]
    NoUndetectedEdges,
    #[error("bad action: {0}")]
    BadAction(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Reward(#[from] RewardError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum PixelClass {
    Background = 0,
    Target = 1,
    Line = 2,
    Overlap = 3,
    Detected = 4,
}

impl PixelClass {
    pub const ALL: [PixelClass; 5] = [
        PixelClass::Background,
        PixelClass::Target,
        PixelClass::Line,
        PixelClass::Overlap,
        PixelClass::Detected,
    ];

    pub fn from_index(i: u8) -> Option<Self> {
        Self::ALL.get(usize::from(i)).copied()
    }

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn rgb(self) -> [f32; 3] {
        match self {
            PixelClass::Background => [0.0, 0.0, 0.0],
            PixelClass::Target => [1.0, 1.0, 1.0],
            PixelClass::Line => [0.5, 0.5, 0.5],
            PixelClass::Overlap => [0.0, 1.0, 0.0],
            PixelClass::Detected => [1.0, 0.0, 0.0],
        }
    }

    pub fn rgb8(self) -> [u8; 3] {
        self.rgb().map(|c| (c * 255.0).round() as u8)
    }

    pub fn glyph(self) -> char {
        match self {
            PixelClass::Background => '.',
            PixelClass::Target => '#',
            PixelClass::Line => 'o',
            PixelClass::Overlap => '@',
            PixelClass::Detected => 'x',
        }
    }
}

/// Rendered 60x60 state image, row-major.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Observation {
    pixels: Box<[PixelClass]>,
}

impl Observation {
    pub fn get(&self, x: i32, y: i32) -> PixelClass {
        self.pixels[(y * STATE_SIZE + x) as usize]
    }

    pub fn pixels(&self) -> &[PixelClass] {
        &self.pixels
    }

    pub fn count(&self, class: PixelClass) -> usize {
        self.pixels.iter().filter(|&&p| p == class).count()
    }

    /// IoU of the line against every remaining target pixel; detected pixels
    /// are left out of both counts.
    pub fn env_iou(&self) -> Iou {
        let mut counts = [0u32; 5];
        for &p in self.pixels.iter() {
            counts[p as usize] += 1;
        }
        let overlap = counts[PixelClass::Overlap as usize];
        let union =
            overlap + counts[PixelClass::Line as usize] + counts[PixelClass::Target as usize];
        Iou::new(overlap, union).expect("overlap is part of the union")
    }

    pub fn palette_indices(&self) -> Vec<u8> {
        self.pixels.iter().map(|p| p.index()).collect()
    }

    pub fn from_palette_indices(bytes: &[u8]) -> Option<Self> {
        if bytes.len() != N_PIXELS {
            return None;
        }
        let pixels = bytes
            .iter()
            .map(|&b| PixelClass::from_index(b))
            .collect::<Option<Vec<_>>>()?;
        Some(Self {
            pixels: pixels.into_boxed_slice(),
        })
    }

    /// Row-major height x width x 3 bytes.
    pub fn rgb8(&self) -> Vec<u8> {
        self.pixels.iter().flat_map(|p| p.rgb8()).collect()
    }

    /// Row-major height x width x 3 unit-interval values.
    pub fn write_rgb_f32(&self, out: &mut [f32]) {
        for (chunk, p) in out.chunks_exact_mut(3).zip(self.pixels.iter()) {
            chunk.copy_from_slice(&p.rgb());
        }
    }

    pub fn to_ascii(&self) -> String {
        let mut s = String::with_capacity(N_PIXELS + STATE_SIZE as usize);
        for row in self.pixels.chunks(STATE_SIZE as usize) {
            s.extend(row.iter().map(|p| p.glyph()));
            s.push('\n');
        }
        s
    }
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observation(\n{})", self.to_ascii())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// Frame translation and fixate only.
    Sat,
    /// Frame translation, tip movement and fixate.
    Fat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Detection {
    /// A fresh scene every episode.
    Single,
    /// The scene persists and found edges accumulate until the frame is done.
    Multi,
}

impl FromStr for ActionMode {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sat" => Ok(ActionMode::Sat),
            "fat" => Ok(ActionMode::Fat),
            _ => Err(EnvError::InvalidConfig(format!(
                "unknown mode `{s}` (expected sat|fat)"
            ))),
        }
    }
}

impl FromStr for Detection {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "single" => Ok(Detection::Single),
            "multi" => Ok(Detection::Multi),
            _ => Err(EnvError::InvalidConfig(format!(
                "unknown detection `{s}` (expected single|multi)"
            ))),
        }
    }
}

impl fmt::Display for ActionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActionMode::Sat => "sat",
            ActionMode::Fat => "fat",
        })
    }
}

impl fmt::Display for Detection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Detection::Single => "single",
            Detection::Multi => "multi",
        })
    }
}

/// One step's move: each movement component is -1, 0 or +1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct ActionVector {
    pub frame_dx: i8,
    pub frame_dy: i8,
    pub tip_dx: i8,
    pub tip_dy: i8,
    pub fixate: bool,
}

impl ActionVector {
    pub const NOOP: ActionVector = ActionVector {
        frame_dx: 0,
        frame_dy: 0,
        tip_dx: 0,
        tip_dy: 0,
        fixate: false,
    };
    pub const FIXATE: ActionVector = ActionVector {
        frame_dx: 0,
        frame_dy: 0,
        tip_dx: 0,
        tip_dy: 0,
        fixate: true,
    };

    pub fn moves(frame_dx: i8, frame_dy: i8, tip_dx: i8, tip_dy: i8) -> Self {
        Self {
            frame_dx,
            frame_dy,
            tip_dx,
            tip_dy,
            fixate: false,
        }
    }

    /// Categorical indices: `{0,1,2}` map to `{-1,0,+1}`, fixate is `{0,1}`.
    pub fn from_indices(idx: &[usize]) -> Result<Self, EnvError> {
        if idx.len() != ACTION_ARITIES.len() {
            return Err(EnvError::BadAction(format!(
                "expected 5 components, got {}",
                idx.len()
            )));
        }
        for (k, (&i, &n)) in idx.iter().zip(ACTION_ARITIES.iter()).enumerate() {
            if i >= n {
                return Err(EnvError::BadAction(format!(
                    "component {k} = {i} out of range 0..{n}"
                )));
            }
        }
        let t = |i: usize| i as i8 - 1;
        Ok(Self {
            frame_dx: t(idx[0]),
            frame_dy: t(idx[1]),
            tip_dx: t(idx[2]),
            tip_dy: t(idx[3]),
            fixate: idx[4] == 1,
        })
    }

    pub fn to_indices(self) -> [usize; 5] {
        let t = |v: i8| (v.signum() + 1) as usize;
        [
            t(self.frame_dx),
            t(self.frame_dy),
            t(self.tip_dx),
            t(self.tip_dy),
            usize::from(self.fixate),
        ]
    }

    /// The action as the environment executes it under `mode`.
    pub fn masked(self, mode: ActionMode) -> Self {
        if self.fixate {
            return Self::FIXATE;
        }
        let mut a = Self::moves(
            self.frame_dx.signum(),
            self.frame_dy.signum(),
            self.tip_dx.signum(),
            self.tip_dy.signum(),
        );
        if mode == ActionMode::Sat {
            a.tip_dx = 0;
            a.tip_dy = 0;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub mode: ActionMode,
    pub detection: Detection,
    pub n_edges: usize,
    pub max_steps: u32,
    /// eval IoU needed for a fixated episode to count as a detection.
    pub success_threshold: f64,
    /// Multi mode: a scene is abandoned after this many failures in a row.
    pub max_failed_episodes: u32,
    pub generator: GeneratorParams,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            mode: ActionMode::Fat,
            detection: Detection::Single,
            n_edges: 3,
            max_steps: 200,
            success_threshold: 1.0,
            max_failed_episodes: 10,
            generator: GeneratorParams::default(),
        }
    }
}

impl EnvConfig {
    pub fn new(mode: ActionMode, detection: Detection, n_edges: usize) -> Self {
        Self {
            mode,
            detection,
            n_edges,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if self.n_edges < 1 {
            return Err(EnvError::InvalidConfig("n_edges must be at least 1".into()));
        }
        if self.max_steps < 1 {
            return Err(EnvError::InvalidConfig(
                "max_steps must be at least 1".into(),
            ));
        }
        if !(self.success_threshold > 0.0 && self.success_threshold <= 1.0) {
            return Err(EnvError::InvalidConfig(format!(
                "success_threshold must lie in (0, 1], got {}",
                self.success_threshold
            )));
        }
        if self.max_failed_episodes < 1 {
            return Err(EnvError::InvalidConfig(
                "max_failed_episodes must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Complete geometric state of an episode.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    frame: WireFrame,
    frame_offset: Point,
    tip: Point,
    detected: BTreeSet<usize>,
    step_count: u32,
    episode_count: u64,
    mode: ActionMode,
    detection: Detection,
    // canvas-coordinate pixels of every edge
    edge_pixels: Vec<Vec<Point>>,
}

impl EnvState {
    /// Assembles a state directly. Offsets outside `[0, 30]`, tips outside the
    /// image and out-of-range detected indices are rejected.
    pub fn from_parts(
        frame: WireFrame,
        frame_offset: Point,
        tip: Point,
        detected: BTreeSet<usize>,
        mode: ActionMode,
        detection: Detection,
    ) -> Result<Self, EnvError> {
        let in_range = |p: Point, hi: i32| (0..=hi).contains(&p.x) && (0..=hi).contains(&p.y);
        if !in_range(frame_offset, MAX_OFFSET) {
            return Err(EnvError::InvalidConfig(format!(
                "frame offset {frame_offset:?} outside [0,30]^2"
            )));
        }
        if !in_range(tip, STATE_SIZE - 1) {
            return Err(EnvError::InvalidConfig(format!(
                "tip {tip:?} outside the image"
            )));
        }
        if frame
            .edges()
            .iter()
            .any(|e| !in_range(e.a, CANVAS_SIZE - 1) || !in_range(e.b, CANVAS_SIZE - 1))
        {
            return Err(EnvError::InvalidConfig(
                "frame does not fit the 30x30 canvas".into(),
            ));
        }
        if let Some(&i) = detected.iter().find(|&&i| i >= frame.len()) {
            return Err(EnvError::InvalidConfig(format!(
                "detected edge {i} does not exist"
            )));
        }
        let edge_pixels = frame
            .edges()
            .iter()
            .map(|&e| rasterize_segment(e))
            .collect();
        Ok(Self {
            frame,
            frame_offset,
            tip,
            detected,
            step_count: 0,
            episode_count: 0,
            mode,
            detection,
            edge_pixels,
        })
    }

    /// The same state with the frame moved to `offset` (must lie in `[0, 30]^2`).
    pub fn with_offset(mut self, offset: Point) -> Self {
        assert!((0..=MAX_OFFSET).contains(&offset.x) && (0..=MAX_OFFSET).contains(&offset.y));
        self.frame_offset = offset;
        self
    }

    /// The same state with the line tip at `tip` (must lie inside the image).
    pub fn with_tip(mut self, tip: Point) -> Self {
        assert!((0..STATE_SIZE).contains(&tip.x) && (0..STATE_SIZE).contains(&tip.y));
        self.tip = tip;
        self
    }

    pub fn frame(&self) -> &WireFrame {
        &self.frame
    }

    pub fn frame_offset(&self) -> Point {
        self.frame_offset
    }

    pub fn tip(&self) -> Point {
        self.tip
    }

    pub fn anchor(&self) -> Point {
        ANCHOR
    }

    pub fn detected(&self) -> &BTreeSet<usize> {
        &self.detected
    }

    pub fn step_count(&self) -> u32 {
        self.step_count
    }

    pub fn episode_count(&self) -> u64 {
        self.episode_count
    }

    pub fn mode(&self) -> ActionMode {
        self.mode
    }

    pub fn detection(&self) -> Detection {
        self.detection
    }

    pub fn undetected(&self) -> BTreeSet<usize> {
        (0..self.frame.len())
            .filter(|i| !self.detected.contains(i))
            .collect()
    }

    pub fn line(&self) -> Segment {
        Segment::new(ANCHOR, self.tip)
    }

    /// Pixels of edge `i` in state coordinates.
    pub fn edge_pixels(&self, i: usize) -> impl Iterator<Item = Point> + '_ {
        let off = self.frame_offset;
        self.edge_pixels[i].iter().map(move |&p| p + off)
    }

    pub fn render(&self) -> Observation {
        const TARGET: u8 = 1;
        const LINE: u8 = 2;
        const DETECTED: u8 = 4;
        let mut bits = [0u8; N_PIXELS];
        let at = |p: Point| (p.y * STATE_SIZE + p.x) as usize;
        for i in 0..self.frame.len() {
            let flag = if self.detected.contains(&i) {
                DETECTED
            } else {
                TARGET
            };
            for p in self.edge_pixels(i) {
                bits[at(p)] |= flag;
            }
        }
        for p in rasterize_segment(self.line()) {
            bits[at(p)] |= LINE;
        }
        let pixels: Vec<PixelClass> = bits
            .iter()
            .map(|&b| {
                if b & DETECTED != 0 {
                    PixelClass::Detected
                } else if b == TARGET | LINE {
                    PixelClass::Overlap
                } else if b == TARGET {
                    PixelClass::Target
                } else if b == LINE {
                    PixelClass::Line
                } else {
                    PixelClass::Background
                }
            })
            .collect();
        Observation {
            pixels: pixels.into_boxed_slice(),
        }
    }

    pub fn env_iou(&self) -> Iou {
        self.render().env_iou()
    }

    /// Best pixel IoU of the line against any single undetected edge, with
    /// that edge's index (lowest index on ties).
    pub fn eval_iou(&self) -> Result<(Iou, usize), EnvError> {
        let mut line_mask = [false; N_PIXELS];
        let line = rasterize_segment(self.line());
        for p in &line {
            line_mask[(p.y * STATE_SIZE + p.x) as usize] = true;
        }
        let mut best: Option<(Iou, usize)> = None;
        for i in self.undetected() {
            let n = self.edge_pixels[i].len() as u32;
            let inter = self
                .edge_pixels(i)
                .filter(|p| line_mask[(p.y * STATE_SIZE + p.x) as usize])
                .count() as u32;
            let iou =
                Iou::new(inter, n + line.len() as u32 - inter).expect("intersection within union");
            if best.is_none_or(|(b, _)| iou > b) {
                best = Some((iou, i));
            }
        }
        best.ok_or(EnvError::NoUndetectedEdges)
    }

    /// Endpoint distance to the best-matching undetected edge, measured in
    /// target-canvas coordinates.
    pub fn matched_distance(&self) -> Result<(f64, usize), EnvError> {
        let p1 = ANCHOR - self.frame_offset;
        let p2 = self.tip - self.frame_offset;
        Ok(matched_edge_distance(
            p1,
            p2,
            &self.frame,
            &self.undetected(),
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub iou: f64,
    pub eval_iou: f64,
    pub matched_distance: f64,
    pub detected_count: usize,
    pub episode_success: bool,
}

#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    /// The episode ended by fixation.
    pub terminated: bool,
    /// The episode hit the step limit.
    pub truncated: bool,
    pub info: StepInfo,
    /// The action after masking, as actually executed.
    pub applied: ActionVector,
}

impl StepResult {
    pub fn done(&self) -> bool {
        self.terminated || self.truncated
    }
}

/// A seeded environment instance.
pub struct Env {
    config: EnvConfig,
    reward: RewardConfig,
    state: EnvState,
    rng: ChaCha8Rng,
    acc: EpisodeAccumulator,
    iou: Iou,
    done: bool,
    failed_in_scene: u32,
    force_new_scene: bool,
}

impl Env {
    /// Creates the environment and performs an initial `reset(Some(seed))`.
    pub fn new(config: EnvConfig, reward: RewardConfig, seed: u64) -> Result<Self, EnvError> {
        config.validate()?;
        reward.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frame = generate_wireframe_with(
            rng.next_u64(),
            config.n_edges,
            CANVAS_SIZE,
            &config.generator,
        )?;
        let state = EnvState::from_parts(
            frame,
            INITIAL_OFFSET,
            ANCHOR,
            BTreeSet::new(),
            config.mode,
            config.detection,
        )?;
        let mut env = Self {
            config,
            reward,
            state,
            rng,
            acc: EpisodeAccumulator::new(),
            iou: Iou::ZERO,
            done: true,
            failed_in_scene: 0,
            force_new_scene: true,
        };
        env.reset(Some(seed))?;
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn reward_config(&self) -> &RewardConfig {
        &self.reward
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn accumulator(&self) -> &EpisodeAccumulator {
        &self.acc
    }

    pub fn observation(&self) -> Observation {
        self.state.render()
    }

    /// Switches to a new configuration; the next reset starts a fresh scene.
    pub fn reconfigure(&mut self, config: EnvConfig) -> Result<(), EnvError> {
        config.validate()?;
        self.config = config;
        self.force_new_scene = true;
        self.done = true;
        Ok(())
    }

    /// Starts a new episode. A seed reseeds the instance RNG first.
    ///
    /// In multi mode the current scene carries over while it still has
    /// undetected edges; otherwise a new frame is generated at the centered
    /// offset.
    pub fn reset(&mut self, seed: Option<u64>) -> Result<Observation, EnvError> {
        if let Some(seed) = seed {
            self.rng = ChaCha8Rng::seed_from_u64(seed);
        }
        let new_scene = self.force_new_scene
            || self.config.detection == Detection::Single
            || self.state.detected.len() >= self.state.frame.len()
            || self.failed_in_scene >= self.config.max_failed_episodes;
        if new_scene {
            let frame = generate_wireframe_with(
                self.rng.next_u64(),
                self.config.n_edges,
                CANVAS_SIZE,
                &self.config.generator,
            )?;
            let episodes = self.state.episode_count;
            self.state = EnvState::from_parts(
                frame,
                INITIAL_OFFSET,
                ANCHOR,
                BTreeSet::new(),
                self.config.mode,
                self.config.detection,
            )?;
            self.state.episode_count = episodes;
            self.failed_in_scene = 0;
            self.force_new_scene = false;
        }

        self.state.tip = match self.config.mode {
            ActionMode::Sat => {
                let undetected: Vec<usize> = self.state.undetected().into_iter().collect();
                let pick = undetected[self.rng.random_range(0..undetected.len())];
                let e = self.state.frame.edges()[pick];
                ANCHOR + (e.b - e.a)
            }
            ActionMode::Fat => loop {
                let tip = Point::new(
                    self.rng.random_range(0..STATE_SIZE),
                    self.rng.random_range(0..STATE_SIZE),
                );
                if tip != ANCHOR {
                    break tip;
                }
            },
        };
        self.state.step_count = 0;
        self.state.episode_count += 1;
        self.acc.reset();
        self.done = false;
        let obs = self.state.render();
        self.iou = obs.env_iou();
        Ok(obs)
    }

    pub fn step(&mut self, action: ActionVector) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        let applied = action.masked(self.config.mode);
        let terminated = applied.fixate;
        if !terminated {
            let clamp = |v: i32, hi: i32| v.clamp(0, hi);
            let off = self.state.frame_offset;
            self.state.frame_offset = Point::new(
                clamp(off.x + i32::from(applied.frame_dx), MAX_OFFSET),
                clamp(off.y + i32::from(applied.frame_dy), MAX_OFFSET),
            );
            let tip = self.state.tip;
            self.state.tip = Point::new(
                clamp(tip.x + i32::from(applied.tip_dx), STATE_SIZE - 1),
                clamp(tip.y + i32::from(applied.tip_dy), STATE_SIZE - 1),
            );
            self.state.step_count += 1;
        }
        let truncated = !terminated && self.state.step_count >= self.config.max_steps;

        let prev = self.iou;
        let mut observation = self.state.render();
        let curr = observation.env_iou();
        self.iou = curr;
        let base = step_reward(prev, curr);
        let (eval, best_edge) = self.state.eval_iou()?;
        let (distance, _) = self.state.matched_distance()?;

        let mut success = false;
        let reward = if terminated || truncated {
            let e_t = episodic_reward(distance, &self.reward)?;
            let r = self.acc.emit_final(base, e_t, &self.reward)?;
            success = terminated && eval.value() >= self.config.success_threshold;
            if self.config.detection == Detection::Multi {
                if success {
                    self.state.detected.insert(best_edge);
                    self.failed_in_scene = 0;
                    observation = self.state.render();
                } else {
                    self.failed_in_scene += 1;
                }
            }
            self.done = true;
            r
        } else {
            self.acc.emit_step(base, &self.reward)?
        };

        Ok(StepResult {
            observation,
            reward,
            terminated,
            truncated,
            info: StepInfo {
                iou: curr.value(),
                eval_iou: eval.value(),
                matched_distance: distance,
                detected_count: self.state.detected.len(),
                episode_success: success,
            },
            applied,
        })
    }
}
