//! Evaluation, CSV training logs and episode rendering.

use std::borrow::Cow;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufWriter};
use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use wireframe_core::{
    ActionVector, Agent, Detection, Env, EnvConfig, EnvError, EnvState, Observation, PixelClass,
    RewardConfig, STATE_SIZE,
};

use crate::dist;
use crate::net::{Forward, PolicyNet};
use crate::rollout::encode_observations;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("GIF encoding failed: {0}")]
    Gif(#[from] gif::EncodingError),
    #[error("PNG encoding failed: {0}")]
    Png(#[from] png::EncodingError),
    #[error("environment fault: {0}")]
    Env(#[from] EnvError),
    #[error("existing log header does not match: {0:?}")]
    HeaderMismatch(Vec<String>),
    #[error("malformed log row {row}: {reason}")]
    BadRow { row: usize, reason: String },
    #[error("at least one evaluation episode is required")]
    NoEpisodes,
}

/// Chooses actions for several environments at once.
pub trait Policy {
    fn act_batch(
        &mut self,
        states: &[&EnvState],
        observations: &[&Observation],
    ) -> Vec<ActionVector>;
}

/// Adapts a per-environment [`Agent`] to [`Policy`].
#[derive(Debug, Clone)]
pub struct PerEnv<A>(pub A);

impl<A: Agent> Policy for PerEnv<A> {
    fn act_batch(
        &mut self,
        states: &[&EnvState],
        observations: &[&Observation],
    ) -> Vec<ActionVector> {
        states
            .iter()
            .zip(observations)
            .map(|(s, o)| self.0.act(s, o))
            .collect()
    }
}

/// Most likely action of every component under the network's policy.
pub struct GreedyPolicy<'a> {
    net: &'a PolicyNet<f32>,
    fwd: Forward<f32>,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(net: &'a PolicyNet<f32>) -> Self {
        Self {
            net,
            fwd: Forward::default(),
        }
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act_batch(
        &mut self,
        _states: &[&EnvState],
        observations: &[&Observation],
    ) -> Vec<ActionVector> {
        let arch = self.net.architecture();
        let input = encode_observations(observations, arch.input_len());
        self.net
            .forward_into(&input, observations.len(), &mut self.fwd);
        let n = arch.n_logits();
        self.fwd
            .logits
            .chunks_exact(n)
            .map(|l| {
                ActionVector::from_indices(&dist::argmax(l, &arch.arities))
                    .expect("argmax within arities")
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub step: u64,
    pub mean_eval_iou: f64,
    pub mean_env_iou: f64,
    pub mean_episode_length: f64,
    /// Fraction of episodes whose final eval IoU is exactly 1.
    pub success_rate: f64,
    pub episodes: usize,
}

/// Statistics of one finished episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeOutcome {
    pub eval_iou: f64,
    pub env_iou: f64,
    pub length: u32,
    pub terminated: bool,
}

/// Independent seeds for parallel streams derived from one base seed.
pub fn derive_seeds(seed: u64, n: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.next_u64()).collect()
}

/// Runs `n_episodes` episodes and returns their outcomes in a fixed order.
///
/// Single-detection episodes each get a freshly seeded environment. In
/// multi-detection mode one environment plays `n_edges` consecutive
/// episodes, so later episodes see the edges detected earlier in the scene.
pub fn run_episodes(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    reward: &RewardConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<Vec<EpisodeOutcome>, MetricsError> {
    if n_episodes == 0 {
        return Err(MetricsError::NoEpisodes);
    }
    let per_env = match env_config.detection {
        Detection::Single => 1,
        Detection::Multi => env_config.n_edges.max(1),
    };
    let n_envs = n_episodes.div_ceil(per_env);
    let mut envs = Vec::with_capacity(n_envs);
    let mut quota = Vec::with_capacity(n_envs);
    for (i, s) in derive_seeds(seed, n_envs).into_iter().enumerate() {
        envs.push(Env::new(env_config.clone(), *reward, s)?);
        quota.push(per_env.min(n_episodes - i * per_env));
    }
    let mut results: Vec<Vec<EpisodeOutcome>> = vec![Vec::new(); n_envs];
    let mut lengths = vec![0u32; n_envs];
    let mut observations: Vec<Observation> = envs.iter().map(Env::observation).collect();
    loop {
        let active: Vec<usize> = (0..n_envs)
            .filter(|&i| results[i].len() < quota[i])
            .collect();
        if active.is_empty() {
            break;
        }
        let states: Vec<&EnvState> = active.iter().map(|&i| envs[i].state()).collect();
        let obs: Vec<&Observation> = active.iter().map(|&i| &observations[i]).collect();
        let actions = policy.act_batch(&states, &obs);
        for (&i, action) in active.iter().zip(actions) {
            let r = envs[i].step(action)?;
            lengths[i] += 1;
            if r.done() {
                results[i].push(EpisodeOutcome {
                    eval_iou: r.info.eval_iou,
                    env_iou: r.info.iou,
                    length: lengths[i],
                    terminated: r.terminated,
                });
                lengths[i] = 0;
                if results[i].len() < quota[i] {
                    observations[i] = envs[i].reset(None)?;
                }
            } else {
                observations[i] = r.observation;
            }
        }
    }
    Ok(results.into_iter().flatten().collect())
}

/// Mean final IoUs, episode length and success rate over `n_episodes`
/// deterministic-policy episodes.
pub fn evaluate(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    reward: &RewardConfig,
    n_episodes: usize,
    seed: u64,
) -> Result<EvalReport, MetricsError> {
    let outcomes = run_episodes(policy, env_config, reward, n_episodes, seed)?;
    let n = outcomes.len() as f64;
    let mean = |f: fn(&EpisodeOutcome) -> f64| outcomes.iter().map(f).sum::<f64>() / n;
    Ok(EvalReport {
        step: 0,
        mean_eval_iou: mean(|o| o.eval_iou),
        mean_env_iou: mean(|o| o.env_iou),
        mean_episode_length: mean(|o| f64::from(o.length)),
        success_rate: mean(|o| if o.eval_iou == 1.0 { 1.0 } else { 0.0 }),
        episodes: outcomes.len(),
    })
}

/// Observations of one episode, starting with the reset observation.
pub fn episode_frames(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    reward: &RewardConfig,
    seed: u64,
) -> Result<Vec<Observation>, MetricsError> {
    let mut env = Env::new(env_config.clone(), *reward, seed)?;
    let mut frames = vec![env.observation()];
    loop {
        let action = policy.act_batch(&[env.state()], &[frames.last().expect("nonempty")])[0];
        let r = env.step(action)?;
        frames.push(r.observation.clone());
        if r.done() {
            return Ok(frames);
        }
    }
}

pub const UPSCALE: usize = 8;

fn upscale_indices(obs: &Observation, scale: usize) -> Vec<u8> {
    let n = STATE_SIZE as usize;
    let idx = obs.palette_indices();
    let mut out = Vec::with_capacity(n * n * scale * scale);
    for row in idx.chunks_exact(n) {
        let line: Vec<u8> = row
            .iter()
            .flat_map(|&p| std::iter::repeat_n(p, scale))
            .collect();
        for _ in 0..scale {
            out.extend_from_slice(&line);
        }
    }
    out
}

/// The five palette colors as a flat RGB table indexed by pixel class.
pub fn palette_rgb() -> Vec<u8> {
    PixelClass::ALL.iter().flat_map(|p| p.rgb8()).collect()
}

/// Writes frames as a looping GIF, upscaled `UPSCALE` times with nearest
/// neighbor sampling, one frame per 100 ms.
pub fn write_gif(frames: &[Observation], path: &Path) -> Result<(), MetricsError> {
    let side = STATE_SIZE as usize * UPSCALE;
    let mut enc = gif::Encoder::new(
        BufWriter::new(File::create(path)?),
        side as u16,
        side as u16,
        &palette_rgb(),
    )?;
    enc.set_repeat(gif::Repeat::Infinite)?;
    for obs in frames {
        let frame = gif::Frame {
            width: side as u16,
            height: side as u16,
            delay: 10,
            buffer: Cow::Owned(upscale_indices(obs, UPSCALE)),
            ..gif::Frame::default()
        };
        enc.write_frame(&frame)?;
    }
    enc.into_inner()?;
    Ok(())
}

/// Plays one greedy episode and saves it as an animation; returns the
/// number of frames written.
pub fn record_episode(
    policy: &mut dyn Policy,
    env_config: &EnvConfig,
    reward: &RewardConfig,
    seed: u64,
    out_path: &Path,
) -> Result<usize, MetricsError> {
    let frames = episode_frames(policy, env_config, reward, seed)?;
    write_gif(&frames, out_path)?;
    Ok(frames.len())
}

/// Saves one observation as an 8-bit RGB PNG, upscaled `scale` times.
pub fn write_png(obs: &Observation, scale: usize, path: &Path) -> Result<(), MetricsError> {
    let side = STATE_SIZE as usize * scale;
    let palette = palette_rgb();
    let data: Vec<u8> = upscale_indices(obs, scale)
        .iter()
        .flat_map(|&i| palette[3 * i as usize..3 * i as usize + 3].to_vec())
        .collect();
    let mut enc = png::Encoder::new(
        BufWriter::new(File::create(path)?),
        side as u32,
        side as u32,
    );
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc.write_header()?;
    writer.write_image_data(&data)?;
    writer.finish()?;
    Ok(())
}

pub const LOG_HEADER: [&str; 13] = [
    "step",
    "phase",
    "mean_eval_iou",
    "mean_env_iou",
    "success_rate",
    "mean_episode_length",
    "policy_loss",
    "value_loss",
    "entropy",
    "clip_fraction",
    "approx_kl",
    "learning_rate",
    "wallclock_s",
];

/// One row of `train_log.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub phase: u8,
    pub mean_eval_iou: f64,
    pub mean_env_iou: f64,
    pub success_rate: f64,
    pub mean_episode_length: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    pub approx_kl: f64,
    pub learning_rate: f64,
    pub wallclock_s: f64,
}

impl LogRow {
    fn fields(&self) -> [String; 13] {
        // `{}` on floats prints the shortest string that parses back equal.
        [
            self.step.to_string(),
            self.phase.to_string(),
            self.mean_eval_iou.to_string(),
            self.mean_env_iou.to_string(),
            self.success_rate.to_string(),
            self.mean_episode_length.to_string(),
            self.policy_loss.to_string(),
            self.value_loss.to_string(),
            self.entropy.to_string(),
            self.clip_fraction.to_string(),
            self.approx_kl.to_string(),
            self.learning_rate.to_string(),
            self.wallclock_s.to_string(),
        ]
    }
}

/// Appends a row, creating the file with the header first if needed. An
/// existing file must carry exactly the expected header.
pub fn append_log(path: &Path, row: &LogRow) -> Result<(), MetricsError> {
    let fresh = !path.exists() || fs::metadata(path)?.len() == 0;
    if !fresh {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != LOG_HEADER {
            return Err(MetricsError::HeaderMismatch(header));
        }
    }
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(LOG_HEADER)?;
    }
    w.write_record(row.fields())?;
    w.flush()?;
    Ok(())
}

pub fn read_log(path: &Path) -> Result<Vec<LogRow>, MetricsError> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != LOG_HEADER {
        return Err(MetricsError::HeaderMismatch(header));
    }
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let bad = |reason: String| MetricsError::BadRow { row: i + 1, reason };
        if rec.len() != LOG_HEADER.len() {
            return Err(bad(format!(
                "expected {} fields, got {}",
                LOG_HEADER.len(),
                rec.len()
            )));
        }
        let f = |k: usize| {
            rec[k]
                .parse::<f64>()
                .map_err(|e| bad(format!("{}: {e}", LOG_HEADER[k])))
        };
        rows.push(LogRow {
            step: rec[0].parse().map_err(|e| bad(format!("step: {e}")))?,
            phase: rec[1].parse().map_err(|e| bad(format!("phase: {e}")))?,
            mean_eval_iou: f(2)?,
            mean_env_iou: f(3)?,
            success_rate: f(4)?,
            mean_episode_length: f(5)?,
            policy_loss: f(6)?,
            value_loss: f(7)?,
            entropy: f(8)?,
            clip_fraction: f(9)?,
            approx_kl: f(10)?,
            learning_rate: f(11)?,
            wallclock_s: f(12)?,
        });
    }
    Ok(rows)
}

/// Trailing moving average with the given window, for plotting.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let window = window.max(1);
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            values[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64
        })
        .collect()
}
