//! Browser bindings: step an environment by hand, let the oracle planner
//! take a step, and plot the terminal reward against endpoint distance.

use wasm_bindgen::prelude::*;
use wireframe_core::{
    episodic_reward, ActionMode, ActionVector, Agent, Detection, Env, EnvConfig, OraclePlanner,
    RewardConfig, RewardScheme, StepInfo, STATE_SIZE,
};

/// One environment plus the bookkeeping the page displays.
#[wasm_bindgen]
pub struct Demo {
    env: Env,
    episode_return: f64,
    last_reward: f64,
    info: Option<StepInfo>,
    done: bool,
    terminated: bool,
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| format!("bad {what} `{s}`: {e}"))
}

impl Demo {
    /// Builds a demo; `mode` is `sat` or `fat`, `detection` `single` or `multi`.
    pub fn create(
        seed: u32,
        mode: &str,
        detection: &str,
        edges: u32,
        scheme: &str,
    ) -> Result<Demo, String> {
        let cfg = EnvConfig::new(
            parse::<ActionMode>("mode", mode)?,
            parse::<Detection>("detection", detection)?,
            edges as usize,
        );
        cfg.validate().map_err(|e| e.to_string())?;
        let reward = RewardConfig {
            scheme: parse::<RewardScheme>("scheme", scheme)?,
            ..RewardConfig::default()
        };
        let env = Env::new(cfg, reward, u64::from(seed)).map_err(|e| e.to_string())?;
        Ok(Demo {
            env,
            episode_return: 0.0,
            last_reward: 0.0,
            info: None,
            done: false,
            terminated: false,
        })
    }

    /// Applies one action; a finished episode is reset first.
    pub fn apply(&mut self, action: ActionVector) -> Result<f64, String> {
        if self.done {
            self.new_episode(None)?;
        }
        let r = self.env.step(action).map_err(|e| e.to_string())?;
        self.episode_return += r.reward;
        self.last_reward = r.reward;
        self.done = r.done();
        self.terminated = r.terminated;
        self.info = Some(r.info);
        Ok(r.reward)
    }

    fn new_episode(&mut self, seed: Option<u64>) -> Result<(), String> {
        self.env.reset(seed).map_err(|e| e.to_string())?;
        self.episode_return = 0.0;
        self.last_reward = 0.0;
        self.info = None;
        self.done = false;
        self.terminated = false;
        Ok(())
    }
}

#[wasm_bindgen]
impl Demo {
    #[wasm_bindgen(constructor)]
    pub fn new(
        seed: u32,
        mode: &str,
        detection: &str,
        edges: u32,
        scheme: &str,
    ) -> Result<Demo, JsError> {
        Self::create(seed, mode, detection, edges, scheme).map_err(|e| JsError::new(&e))
    }

    /// Starts a new episode; in multi detection mode the scene persists
    /// until all edges are found.
    pub fn reset(&mut self, seed: u32) -> Result<(), JsError> {
        self.new_episode(Some(u64::from(seed)))
            .map_err(|e| JsError::new(&e))
    }

    /// Moves by one pixel per component (each in -1..=1), or fixates.
    /// Returns the reward.
    pub fn step(
        &mut self,
        frame_dx: i32,
        frame_dy: i32,
        tip_dx: i32,
        tip_dy: i32,
        fixate: bool,
    ) -> Result<f64, JsError> {
        let idx = [
            frame_dx + 1,
            frame_dy + 1,
            tip_dx + 1,
            tip_dy + 1,
            i32::from(fixate),
        ];
        let idx: Vec<usize> = idx
            .iter()
            .map(|&v| usize::try_from(v).unwrap_or(usize::MAX))
            .collect();
        let action = ActionVector::from_indices(&idx).map_err(|e| JsError::new(&e.to_string()))?;
        self.apply(action).map_err(|e| JsError::new(&e))
    }

    /// Lets the exhaustive-search planner choose the next action.
    pub fn oracle_step(&mut self) -> Result<f64, JsError> {
        if self.done {
            self.new_episode(None).map_err(|e| JsError::new(&e))?;
        }
        let action = OraclePlanner.act(self.env.state(), &self.env.observation());
        self.apply(action).map_err(|e| JsError::new(&e))
    }

    /// 60x60 RGBA pixels for `ImageData`.
    pub fn rgba(&self) -> Vec<u8> {
        self.env
            .observation()
            .rgb8()
            .chunks_exact(3)
            .flat_map(|c| [c[0], c[1], c[2], 255])
            .collect()
    }

    pub fn side(&self) -> u32 {
        STATE_SIZE as u32
    }

    pub fn episode_return(&self) -> f64 {
        self.episode_return
    }

    pub fn last_reward(&self) -> f64 {
        self.last_reward
    }

    pub fn done(&self) -> bool {
        self.done
    }

    pub fn terminated(&self) -> bool {
        self.terminated
    }

    pub fn step_count(&self) -> u32 {
        self.env.state().step_count()
    }

    pub fn env_iou(&self) -> f64 {
        self.env.state().env_iou().value()
    }

    /// Best IoU of the line against any single remaining edge.
    pub fn eval_iou(&self) -> f64 {
        self.env
            .state()
            .eval_iou()
            .map(|(iou, _)| iou.value())
            .unwrap_or(0.0)
    }

    pub fn detected(&self) -> u32 {
        self.env.state().detected().len() as u32
    }

    pub fn success(&self) -> bool {
        self.info.is_some_and(|i| i.episode_success)
    }
}

/// Terminal reward sampled at `n` evenly spaced distances in `[0, max_distance]`.
#[wasm_bindgen]
pub fn episodic_curve(mu: f64, d_t: f64, max_distance: f64, n: u32) -> Vec<f64> {
    let cfg = RewardConfig {
        mu,
        d_t,
        ..RewardConfig::default()
    };
    if cfg.validate().is_err() || n < 2 || max_distance.is_nan() || max_distance < 0.0 {
        return Vec::new();
    }
    (0..n)
        .map(|i| {
            let d = max_distance * f64::from(i) / f64::from(n - 1);
            episodic_reward(d, &cfg).unwrap_or(f64::NAN)
        })
        .collect()
}
