//! `wireframe`: generate scenes, train, evaluate, record, play and serve.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime failure.

use std::fs;
use std::io::{self, BufRead, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;
use wireframe_core::scene::write_scene;
use wireframe_core::{
    generate_wireframe, ActionVector, Env, EnvConfig, FixateAgent, OraclePlanner, RandomAgent,
    CANVAS_SIZE,
};
use wireframe_train::metrics::{self, derive_seeds, write_png, PerEnv};
use wireframe_train::{
    evaluate, load_checkpoint, train, ConfigError, GreedyPolicy, Policy, TrainConfig,
};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "wireframe",
    version,
    about = "Iterative wire-frame reconstruction: environment, PPO training and tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write random wire-frame scene files.
    Generate(GenerateArgs),
    /// Train a policy with PPO.
    Train(TrainArgs),
    /// Evaluate a checkpoint or a reference agent.
    Eval(EvalArgs),
    /// Save one episode as an animated GIF (plus a PNG of the final frame).
    Record(RecordArgs),
    /// Step an environment by hand from stdin.
    Play(PlayArgs),
    /// Serve environments over newline-delimited JSON on TCP.
    Serve(ServeArgs),
}

/// Configuration file plus the flag overrides shared by every command.
#[derive(Debug, Args)]
struct ConfigArgs {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (ppo.seed for training, eval.seed otherwise).
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = ["sat", "fat"])]
    mode: Option<String>,
    #[arg(long, value_parser = ["single", "multi"])]
    detection: Option<String>,
    /// Number of wire-frame edges.
    #[arg(long)]
    edges: Option<usize>,
    /// Reward scheme: sparse, incremental, combined, clip or clip_plus.
    #[arg(long)]
    scheme: Option<String>,
    #[arg(long, value_parser = ["none", "action", "difficulty"])]
    curriculum: Option<String>,
    /// Fraction of the step budget spent in curriculum phase 1.
    #[arg(long)]
    split: Option<f64>,
    /// Total training steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Evaluation episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self, seed_key: &'static str) -> Result<TrainConfig, CliError> {
        let mut cfg = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let mut overrides: Vec<(&str, String)> = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                overrides.push((k, v));
            }
        };
        push(seed_key, self.seed.map(|s| s.to_string()));
        push("env.mode", self.mode.clone());
        push("env.detection", self.detection.clone());
        push("env.n_edges", self.edges.map(|n| n.to_string()));
        push("reward.scheme", self.scheme.clone());
        push("curriculum.kind", self.curriculum.clone());
        push("curriculum.split", self.split.map(|s| s.to_string()));
        push("curriculum.total_steps", self.steps.map(|s| s.to_string()));
        push("eval.episodes", self.episodes.map(|n| n.to_string()));
        for (k, v) in overrides {
            cfg.set(k, &v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3)]
    edges: usize,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = "scenes")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PolicyArgs {
    /// Checkpoint written by `train`.
    #[arg(long, conflicts_with_all = ["oracle", "agent"])]
    checkpoint: Option<PathBuf>,
    /// Use the exhaustive-search planner instead of a checkpoint.
    #[arg(long, conflicts_with = "agent")]
    oracle: bool,
    /// Reference agent: random or fixate.
    #[arg(long, value_parser = ["random", "fixate"])]
    agent: Option<String>,
}

impl PolicyArgs {
    fn describe(&self) -> String {
        match (&self.checkpoint, self.oracle, &self.agent) {
            (Some(p), _, _) => format!("checkpoint {}", p.display()),
            (None, true, _) => "oracle".into(),
            (None, false, Some(a)) => a.clone(),
            _ => "none".into(),
        }
    }

    fn with_policy<R>(
        &self,
        seed: u64,
        f: impl FnOnce(&mut dyn Policy) -> R,
    ) -> Result<R, CliError> {
        if let Some(path) = &self.checkpoint {
            if !path.exists() {
                return Err(CliError::Runtime(format!(
                    "checkpoint {} does not exist",
                    path.display()
                )));
            }
            let (net, meta) = load_checkpoint(path).map_err(runtime)?;
            println!(
                "loaded checkpoint step={} phase={} checksum={}",
                meta.step, meta.phase, meta.checksum
            );
            return Ok(f(&mut GreedyPolicy::new(&net)));
        }
        if self.oracle {
            return Ok(f(&mut PerEnv(OraclePlanner)));
        }
        match self.agent.as_deref() {
            Some("random") => Ok(f(&mut PerEnv(RandomAgent::new(seed)))),
            Some("fixate") => Ok(f(&mut PerEnv(FixateAgent))),
            _ => Err(CliError::Usage(
                "choose a policy with --checkpoint, --oracle or --agent".into(),
            )),
        }
    }
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    /// Append the report as a CSV row.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RecordArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    policy: PolicyArgs,
    #[arg(long, default_value = "episode.gif")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PlayArgs {
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Debug, Args)]
struct ServeArgs {
    #[arg(long, default_value_t = wireframe_server::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    bind: String,
    #[arg(long, default_value_t = 16)]
    max_sessions: usize,
}

fn print_config(cfg: &TrainConfig) {
    println!("# resolved configuration");
    print!("{}", cfg.to_text());
    println!();
}

fn target_env(cfg: &TrainConfig) -> Result<EnvConfig, CliError> {
    Ok(cfg.curriculum_spec()?.phase2)
}

fn cmd_generate(args: &GenerateArgs) -> Result<(), CliError> {
    println!("# resolved configuration");
    println!(
        "seed = {}\nedges = {}\ncount = {}\nout = {}\n",
        args.seed,
        args.edges,
        args.count,
        args.out.display()
    );
    if args.edges == 0 {
        return Err(CliError::Usage("--edges must be at least 1".into()));
    }
    fs::create_dir_all(&args.out).map_err(runtime)?;
    for (i, seed) in derive_seeds(args.seed, args.count).into_iter().enumerate() {
        let frame = generate_wireframe(seed, args.edges, CANVAS_SIZE).map_err(runtime)?;
        let path = args.out.join(format!("scene_{i:04}.txt"));
        fs::write(&path, write_scene(&frame)).map_err(runtime)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve("ppo.seed")?;
    print_config(&cfg);
    let (_, summary) = train(&cfg, &args.out).map_err(runtime)?;
    for r in &summary.evaluations {
        println!(
            "step {:>9}  eval_iou {:.4}  env_iou {:.4}  success {:.3}  length {:.1}",
            r.step, r.mean_eval_iou, r.mean_env_iou, r.success_rate, r.mean_episode_length
        );
    }
    println!(
        "scheme {}  curriculum {}  steps {}  updates {}",
        summary.scheme, summary.curriculum, summary.steps, summary.updates
    );
    println!("final checksum {}", summary.final_checksum);
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve("eval.seed")?;
    print_config(&cfg);
    println!("policy = {}\n", args.policy.describe());
    let env = target_env(&cfg)?;
    let reward = cfg.reward_config();
    let report = args
        .policy
        .with_policy(cfg.eval.seed, |p| {
            evaluate(p, &env, &reward, cfg.eval.episodes, cfg.eval.seed)
        })?
        .map_err(runtime)?;
    println!("episodes {}", report.episodes);
    println!("mean_eval_iou {}", report.mean_eval_iou);
    println!("mean_env_iou {}", report.mean_env_iou);
    println!("success_rate {}", report.success_rate);
    println!("mean_episode_length {}", report.mean_episode_length);
    if let Some(path) = &args.csv {
        let new = !path.exists();
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(runtime)?;
        if new {
            writeln!(
                f,
                "episodes,mean_eval_iou,mean_env_iou,success_rate,mean_episode_length"
            )
            .map_err(runtime)?;
        }
        writeln!(
            f,
            "{},{},{},{},{}",
            report.episodes,
            report.mean_eval_iou,
            report.mean_env_iou,
            report.success_rate,
            report.mean_episode_length
        )
        .map_err(runtime)?;
    }
    Ok(())
}

fn cmd_record(args: &RecordArgs) -> Result<(), CliError> {
    let cfg = args.config.resolve("eval.seed")?;
    print_config(&cfg);
    println!("policy = {}\n", args.policy.describe());
    let env = target_env(&cfg)?;
    let reward = cfg.reward_config();
    let frames = args
        .policy
        .with_policy(cfg.eval.seed, |p| {
            metrics::episode_frames(p, &env, &reward, cfg.eval.seed)
        })?
        .map_err(runtime)?;
    metrics::write_gif(&frames, &args.out).map_err(runtime)?;
    let png = args.out.with_extension("png");
    write_png(
        frames.last().expect("episode has frames"),
        metrics::UPSCALE,
        &png,
    )
    .map_err(runtime)?;
    println!(
        "wrote {} frames to {} and the final frame to {}",
        frames.len(),
        args.out.display(),
        png.display()
    );
    Ok(())
}

const PLAY_HELP: &str = "\
keys (several per line allowed):
  a / d   frame left / right      w / s   frame up / down
  j / l   tip left / right        i / k   tip up / down
  .       wait one step           f       fixate (ends the episode)
  r       reset                   h       this help
  q       quit";

fn play_action(key: char) -> Option<ActionVector> {
    Some(match key {
        'a' => ActionVector::moves(-1, 0, 0, 0),
        'd' => ActionVector::moves(1, 0, 0, 0),
        'w' => ActionVector::moves(0, -1, 0, 0),
        's' => ActionVector::moves(0, 1, 0, 0),
        'j' => ActionVector::moves(0, 0, -1, 0),
        'l' => ActionVector::moves(0, 0, 1, 0),
        'i' => ActionVector::moves(0, 0, 0, -1),
        'k' => ActionVector::moves(0, 0, 0, 1),
        '.' => ActionVector::moves(0, 0, 0, 0),
        'f' => ActionVector::FIXATE,
        _ => return None,
    })
}

fn cmd_play(args: &PlayArgs, input: impl BufRead, mut out: impl Write) -> Result<(), CliError> {
    let cfg = args.config.resolve("eval.seed")?;
    print_config(&cfg);
    let mut env =
        Env::new(target_env(&cfg)?, cfg.reward_config(), cfg.eval.seed).map_err(runtime)?;
    writeln!(out, "{PLAY_HELP}\n\n{}", env.observation().to_ascii()).map_err(runtime)?;
    let mut ret = 0.0;
    for line in input.lines() {
        let line = line.map_err(runtime)?;
        for key in line.chars().filter(|c| !c.is_whitespace()) {
            match key {
                'q' => return Ok(()),
                'h' => writeln!(out, "{PLAY_HELP}").map_err(runtime)?,
                'r' => {
                    let obs = env.reset(None).map_err(runtime)?;
                    ret = 0.0;
                    writeln!(out, "reset\n{}", obs.to_ascii()).map_err(runtime)?;
                }
                _ => {
                    let Some(action) = play_action(key) else {
                        writeln!(out, "unknown key `{key}`\n{PLAY_HELP}").map_err(runtime)?;
                        continue;
                    };
                    let r = env.step(action).map_err(runtime)?;
                    ret += r.reward;
                    writeln!(
                        out,
                        "{}step {}  reward {}  env_iou {:.4}  eval_iou {:.4}",
                        r.observation.to_ascii(),
                        env.state().step_count(),
                        r.reward,
                        r.info.iou,
                        r.info.eval_iou
                    )
                    .map_err(runtime)?;
                    if r.done() {
                        let how = if r.terminated {
                            "fixated"
                        } else {
                            "step limit reached (truncated)"
                        };
                        writeln!(
                            out,
                            "episode over: {how}; terminal reward {}  return {ret}  eval_iou {}  success {}",
                            r.reward, r.info.eval_iou, r.info.episode_success
                        )
                        .map_err(runtime)?;
                        return Ok(());
                    }
                }
            }
        }
    }
    Ok(())
}

fn cmd_serve(args: &ServeArgs) -> Result<(), CliError> {
    println!("# resolved configuration");
    println!(
        "bind = {}\nport = {}\nmax_sessions = {}\n",
        args.bind, args.port, args.max_sessions
    );
    if args.max_sessions == 0 {
        return Err(CliError::Usage("--max-sessions must be at least 1".into()));
    }
    let handle = wireframe_server::serve((args.bind.as_str(), args.port), args.max_sessions)
        .map_err(runtime)?;
    println!("listening on {}", handle.local_addr());
    io::stdout().flush().map_err(runtime)?;
    handle.wait();
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Record(a) => cmd_record(a),
        Command::Play(a) => cmd_play(a, io::stdin().lock(), io::stdout().lock()),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 1,
                CliError::Runtime(_) => 2,
            })
        }
    }
}
