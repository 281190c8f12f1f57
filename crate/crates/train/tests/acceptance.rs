//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test -p wireframe-train --test acceptance`. Extra
//! arguments that do not start with `-` select criteria by substring, e.g.
//! `-- curriculum determinism`.
//!
//! Exact and deterministic criteria gate the exit status. The three learning
//! criteria are stochastic, budget-bound stand-ins for long published runs;
//! their lines are printed like every other but a FAIL there does not fail
//! the process.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wireframe_core::env::MAX_OFFSET;
use wireframe_core::{
    episodic_reward, generate_wireframe, step_reward, ActionMode, Agent, CurriculumKind, Detection,
    Env, EnvConfig, EnvState, EpisodeAccumulator, Iou, OraclePlanner, Point, RewardConfig,
    RewardScheme, ANCHOR, STATE_SIZE,
};
use wireframe_train::dist;
use wireframe_train::net::ConvSpec;
use wireframe_train::ppo::{loss, loss_and_grad, Batch, LossCoefs, Workspace};
use wireframe_train::{
    evaluate, train, Architecture, PerEnv, PolicyNet, TrainConfig, TrainSummary,
};

type Verdict = Result<String, String>;

struct Criterion {
    name: &'static str,
    gating: bool,
    run: fn() -> Verdict,
}

fn check(ok: bool, detail: String) -> Verdict {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- rewards

fn fractions(max_den: u32) -> Vec<(u32, u32)> {
    let mut out = vec![(0, 0)];
    for u in 1..=max_den {
        for i in 0..=u {
            out.push((i, u));
        }
    }
    out
}

fn reward_branch_table() -> Verdict {
    let fr = fractions(50);
    let mut counts = [0u64; 4];
    for &(pi, pu) in &fr {
        let prev = Iou::new(pi, pu).unwrap();
        for &(ci, cu) in &fr {
            let curr = Iou::new(ci, cu).unwrap();
            // cross-multiplied comparison; 0/0 counts as zero overlap
            let (lhs, rhs) = (
                u64::from(ci) * u64::from(pu.max(1)),
                u64::from(pi) * u64::from(cu.max(1)),
            );
            let (expected, branch) = if lhs > rhs {
                (0.1, 0)
            } else if lhs < rhs {
                (-0.2, 1)
            } else if ci == 0 {
                (-0.01, 2)
            } else {
                (0.0, 3)
            };
            let got = step_reward(prev, curr);
            if got != expected {
                return Err(format!(
                    "{pi}/{pu} -> {ci}/{cu}: got {got}, expected {expected}"
                ));
            }
            counts[branch] += 1;
        }
    }
    check(
        counts.iter().all(|&c| c > 0),
        format!(
            "{} pairs; gain {} loss {} idle {} equal {}",
            fr.len().pow(2),
            counts[0],
            counts[1],
            counts[2],
            counts[3]
        ),
    )
}

fn episodic_reward_shape() -> Verdict {
    let cfg = RewardConfig {
        mu: 5.0,
        ..RewardConfig::default()
    };
    let d_t = cfg.d_t;
    let e = |d: f64| episodic_reward(d, &cfg).unwrap();
    let mut worst = 0.0f64;
    for (d, want) in [
        (0.0, 5.0),
        (d_t / 2.0, 0.0),
        (d_t, -5.0),
        (1.5 * d_t, -5.0),
        (10.0 * d_t, -5.0),
    ] {
        worst = worst.max((e(d) - want).abs());
    }
    let sweep: Vec<f64> = (0..1000)
        .map(|i| e(2.0 * d_t * f64::from(i) / 999.0))
        .collect();
    let monotone = sweep.windows(2).all(|w| w[1] <= w[0]);
    check(
        worst <= 1e-12 && monotone,
        format!("max anchor error {worst:.1e}; sweep monotone: {monotone}"),
    )
}

fn clip_laws() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let bases = [0.1, -0.2, -0.01, 0.0];
    let (mut clip_hits, mut plus_hits, mut worst) = (0u32, 0u32, 0.0f64);
    for ep in 0..10_000 {
        let len = rng.random_range(1..=200usize);
        let gamma = match ep % 3 {
            0 => 1.0,
            1 => 0.99,
            _ => rng.random_range(0.9..1.0),
        };
        // every other episode gains IoU on most steps so the caps actually bind
        let gain_bias = if ep % 2 == 0 { 0.8 } else { 0.0 };
        let steps: Vec<f64> = (0..len)
            .map(|_| {
                if rng.random_bool(gain_bias) {
                    0.1
                } else {
                    bases[rng.random_range(0..4)]
                }
            })
            .collect();
        let e_t = episodic_reward(rng.random_range(0.0..40.0), &RewardConfig::default()).unwrap();

        let realized = |scheme: RewardScheme| {
            let cfg = RewardConfig {
                scheme,
                gamma,
                ..RewardConfig::default()
            };
            let mut acc = EpisodeAccumulator::new();
            for &r in &steps[..len - 1] {
                acc.emit_step(r, &cfg).unwrap();
            }
            acc.emit_final(steps[len - 1], e_t, &cfg).unwrap();
            acc.discounted_sum()
        };
        // direct summation oracle: every reward weighted by gamma^(steps after it)
        let r_t: f64 = steps
            .iter()
            .enumerate()
            .map(|(k, r)| r * gamma.powi((len - 1 - k) as i32))
            .sum();

        let clip = realized(RewardScheme::Clip);
        if clip > 5.0 {
            return Err(format!("episode {ep}: clip return {clip} exceeds mu"));
        }
        if r_t + e_t > 5.0 {
            clip_hits += 1;
        }
        if e_t > 0.0 {
            let plus = realized(RewardScheme::ClipPlus);
            if plus > e_t {
                return Err(format!(
                    "episode {ep}: clip+ return {plus} exceeds E_t {e_t}"
                ));
            }
            if r_t + e_t > e_t {
                plus_hits += 1;
            }
        }
        worst = worst.max((realized(RewardScheme::Combined) - (r_t + e_t)).abs());
    }
    check(
        worst <= 1e-10 && clip_hits > 0 && plus_hits > 0,
        format!("combined max error {worst:.1e}; clip cap bound {clip_hits}x, clip+ cap bound {plus_hits}x"),
    )
}

// ------------------------------------------------------------ environment

fn brute_ious(state: &EnvState) -> ((u32, u32), f64) {
    let line: HashSet<Point> = state.line().pixels().into_iter().collect();
    let shift = |p: Point| Point::new(p.x + state.frame_offset().x, p.y + state.frame_offset().y);
    let edge = |i: usize| -> HashSet<Point> {
        state.frame().edges()[i]
            .pixels()
            .into_iter()
            .map(shift)
            .collect()
    };
    let mut target = HashSet::new();
    let mut detected = HashSet::new();
    for i in 0..state.frame().len() {
        if state.detected().contains(&i) {
            detected.extend(edge(i));
        } else {
            target.extend(edge(i));
        }
    }
    let live = |p: &&Point| !detected.contains(*p);
    let inter = line.intersection(&target).filter(live).count() as u32;
    let union = line.union(&target).filter(live).count() as u32;
    let best = (0..state.frame().len())
        .filter(|i| !state.detected().contains(i))
        .map(|i| {
            let e = edge(i);
            let n = line.intersection(&e).count() as f64;
            n / line.union(&e).count() as f64
        })
        .fold(f64::NEG_INFINITY, f64::max);
    ((inter, union), best)
}

fn env_oracle_equivalence() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut nonzero = 0;
    for k in 0..1000 {
        let n = rng.random_range(1..=4usize);
        let frame = generate_wireframe(rng.random(), n, 30).map_err(|e| e.to_string())?;
        let mut detected: BTreeSet<usize> = (0..n).filter(|_| rng.random_bool(0.3)).collect();
        if detected.len() == n {
            detected.remove(&0);
        }
        // a third of the states put the line on an edge so overlaps occur
        let offset = Point::new(
            rng.random_range(0..=MAX_OFFSET),
            rng.random_range(0..=MAX_OFFSET),
        );
        let tip = if k % 3 == 0 {
            let e = frame.edges()[rng.random_range(0..n)];
            let (near, far) = if rng.random_bool(0.5) {
                (e.a, e.b)
            } else {
                (e.b, e.a)
            };
            let off = Point::new(ANCHOR.x - near.x, ANCHOR.y - near.y);
            if (0..=MAX_OFFSET).contains(&off.x) && (0..=MAX_OFFSET).contains(&off.y) {
                let state = EnvState::from_parts(
                    frame.clone(),
                    off,
                    Point::new(far.x + off.x, far.y + off.y),
                    detected.clone(),
                    ActionMode::Fat,
                    Detection::Multi,
                )
                .map_err(|e| e.to_string())?;
                nonzero += compare_state(&state, k)?;
                continue;
            }
            Point::new(
                rng.random_range(0..STATE_SIZE),
                rng.random_range(0..STATE_SIZE),
            )
        } else {
            Point::new(
                rng.random_range(0..STATE_SIZE),
                rng.random_range(0..STATE_SIZE),
            )
        };
        let state = EnvState::from_parts(
            frame,
            offset,
            tip,
            detected,
            ActionMode::Fat,
            Detection::Multi,
        )
        .map_err(|e| e.to_string())?;
        nonzero += compare_state(&state, k)?;
    }
    check(
        nonzero > 100,
        format!("1000 states, {nonzero} with positive overlap"),
    )
}

fn compare_state(state: &EnvState, k: usize) -> Result<u32, String> {
    let ((inter, union), best) = brute_ious(state);
    let env = state.render().env_iou();
    if (env.intersection(), env.union()) != (inter, union) {
        return Err(format!(
            "state {k}: env_iou {}/{} vs brute {inter}/{union}",
            env.intersection(),
            env.union()
        ));
    }
    let (eval, _) = state.eval_iou().map_err(|e| e.to_string())?;
    if eval.value() != best {
        return Err(format!(
            "state {k}: eval_iou {} vs brute {best}",
            eval.value()
        ));
    }
    Ok(u32::from(inter > 0))
}

fn sat_solvability() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let reward = RewardConfig::default();
    for k in 0..500 {
        let cfg = EnvConfig::new(ActionMode::Sat, Detection::Single, rng.random_range(1..=4));
        let mut env = Env::new(cfg, reward, rng.random()).map_err(|e| e.to_string())?;
        loop {
            let action = OraclePlanner.act(env.state(), &env.observation());
            let r = env.step(action).map_err(|e| e.to_string())?;
            if r.done() {
                if !(r.terminated && r.info.eval_iou == 1.0) {
                    return Err(format!(
                        "reset {k}: eval_iou {} terminated {}",
                        r.info.eval_iou, r.terminated
                    ));
                }
                break;
            }
        }
    }
    let cfg = EnvConfig::new(ActionMode::Sat, Detection::Single, 3);
    let report =
        evaluate(&mut PerEnv(OraclePlanner), &cfg, &reward, 100, 5).map_err(|e| e.to_string())?;
    check(
        report.mean_eval_iou == 1.0 && report.success_rate == 1.0,
        format!(
            "500/500 solved; evaluate() mean IoU {} over {} episodes",
            report.mean_eval_iou, report.episodes
        ),
    )
}

// ---------------------------------------------------------------- network

fn reduced_arch() -> Architecture {
    Architecture {
        input: [8, 8, 3],
        convs: vec![
            ConvSpec {
                out_channels: 4,
                kernel: 4,
                stride: 2,
            },
            ConvSpec {
                out_channels: 6,
                kernel: 2,
                stride: 1,
            },
            ConvSpec {
                out_channels: 5,
                kernel: 2,
                stride: 1,
            },
        ],
        features: 12,
        head_hidden: vec![8, 8],
        arities: vec![3, 3, 3, 3, 2],
    }
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let coefs = LossCoefs {
        clip_epsilon: 0.2,
        value_coef: 0.5,
        entropy_coef: 0.01,
    };
    let mut worst = 0.0f64;
    for b in 0..20 {
        let mut net = PolicyNet::<f64>::new(reduced_arch(), 100 + b);
        // zero-initialized biases put some pre-activations exactly on the ReLU
        // kink, where the central difference averages both one-sided slopes
        for p in net.params_mut() {
            *p += rng.random_range(-0.1..0.1);
        }
        let n = rng.random_range(2..=6usize);
        let arch = net.architecture().clone();
        let obs: Vec<f64> = (0..n * arch.input_len())
            .map(|_| rng.random::<f64>())
            .collect();
        let fwd = net.forward(&obs, n);
        let k = arch.n_logits();
        let mut actions = Vec::new();
        let mut old = Vec::new();
        for i in 0..n {
            let logp = dist::log_softmax(&fwd.logits[i * k..(i + 1) * k], &arch.arities);
            let a: Vec<usize> = arch
                .arities
                .iter()
                .map(|&m| rng.random_range(0..m))
                .collect();
            // some ratios land outside the clip range
            old.push(dist::log_prob(&logp, &arch.arities, &a) + rng.random_range(-0.4..0.4));
            actions.extend(a);
        }
        let batch = Batch {
            obs,
            actions,
            old_log_probs: old,
            advantages: (0..n).map(|_| rng.random_range(-2.0..2.0)).collect(),
            returns: (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
        };
        let mut ws = Workspace::default();
        loss_and_grad(&net, &batch, coefs, &mut ws);
        let analytic = ws.grads().to_vec();
        let h = 1e-6;
        let mut num = vec![0.0; analytic.len()];
        for (i, g) in num.iter_mut().enumerate() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let up = loss(&net, &batch, coefs).total;
            net.params_mut()[i] = orig - h;
            let down = loss(&net, &batch, coefs).total;
            net.params_mut()[i] = orig;
            *g = (up - down) / (2.0 * h);
        }
        let diff = analytic
            .iter()
            .zip(&num)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let scale = analytic
            .iter()
            .map(|a| a * a)
            .sum::<f64>()
            .sqrt()
            .max(num.iter().map(|a| a * a).sum::<f64>().sqrt());
        worst = worst.max(diff / scale.max(1e-12));
    }
    check(
        worst < 1e-4,
        format!("max relative error {worst:.2e} over 20 batches"),
    )
}

// --------------------------------------------------------------- training

fn run_training(cfg: &TrainConfig) -> Result<TrainSummary, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (_, summary) = train(cfg, dir.path()).map_err(|e| e.to_string())?;
    Ok(summary)
}

fn final_iou(summary: &TrainSummary) -> f64 {
    summary.evaluations.last().map_or(0.0, |r| r.mean_eval_iou)
}

const SEEDS: [u64; 3] = [1, 2, 3];

/// Shared setup of the learning criteria.
fn learning_config(env: EnvConfig, scheme: RewardScheme, steps: u64, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig {
        env,
        total_steps: steps,
        ..TrainConfig::default()
    };
    cfg.reward.scheme = scheme;
    cfg.ppo.seed = seed;
    cfg.eval.interval = steps / 5;
    cfg.eval.episodes = 100;
    cfg.log.wallclock = false;
    cfg
}

fn smoke_runs(scheme: RewardScheme) -> Result<Vec<f64>, String> {
    SEEDS
        .iter()
        .map(|&seed| {
            let env = EnvConfig::new(ActionMode::Fat, Detection::Single, 1);
            let summary = run_training(&learning_config(env, scheme, 300_000, seed))?;
            let iou = final_iou(&summary);
            eprintln!("    {scheme} seed {seed}: final eval IoU {iou:.3}");
            Ok(iou)
        })
        .collect()
}

fn combined_runs() -> Result<Vec<f64>, String> {
    static RUNS: OnceLock<Result<Vec<f64>, String>> = OnceLock::new();
    RUNS.get_or_init(|| smoke_runs(RewardScheme::Combined))
        .clone()
}

fn fmt_list(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn smoke_learning() -> Verdict {
    let ious = combined_runs()?;
    let good = ious.iter().filter(|&&x| x >= 0.6).count();
    check(
        good >= 2,
        format!(
            "final eval IoU per seed [{}]; {good}/3 reach 0.6",
            fmt_list(&ious)
        ),
    )
}

fn scheme_ordering() -> Verdict {
    let combined = combined_runs()?;
    let incremental = smoke_runs(RewardScheme::Incremental)?;
    let (c, i) = (mean(&combined), mean(&incremental));
    check(
        i < 0.2 && c >= 0.6,
        format!(
            "incremental mean {i:.3} [{}]; combined mean {c:.3} [{}]",
            fmt_list(&incremental),
            fmt_list(&combined)
        ),
    )
}

fn curriculum_mechanics() -> Verdict {
    let total = 10_000u64;
    let expected_switch = total * 3 / 10;
    let env = EnvConfig::new(ActionMode::Fat, Detection::Single, 1);
    let mut cfg = learning_config(env, RewardScheme::Combined, total, 4);
    cfg.curriculum = CurriculumKind::Action;
    cfg.eval.episodes = 5;
    let summary = run_training(&cfg)?;
    let sw = summary.switch.clone().ok_or("no switch recorded")?;
    let phase1_evaluated = summary
        .evaluations
        .iter()
        .any(|r| r.step == expected_switch);
    check(
        sw.step == expected_switch
            && sw.checksum_before == sw.checksum_after
            && summary.phase1_transitions == expected_switch
            && summary.phase1_tip_moves == 0
            && summary.steps == total
            && phase1_evaluated,
        format!(
            "switch at {} (expected {expected_switch}); checksum kept: {}; phase-1 transitions {} with {} tip moves",
            sw.step,
            sw.checksum_before == sw.checksum_after,
            summary.phase1_transitions,
            summary.phase1_tip_moves
        ),
    )
}

fn difficulty_direction() -> Verdict {
    let mut arms = Vec::new();
    for kind in [CurriculumKind::Difficulty, CurriculumKind::None] {
        let mut ious = Vec::new();
        for &seed in &SEEDS {
            let env = EnvConfig::new(ActionMode::Fat, Detection::Multi, 2);
            let mut cfg = learning_config(env, RewardScheme::Combined, 500_000, seed);
            cfg.curriculum = kind;
            let summary = run_training(&cfg)?;
            let iou = final_iou(&summary);
            eprintln!("    curriculum {kind} seed {seed}: final multi-mode eval IoU {iou:.3}");
            ious.push(iou);
        }
        arms.push(ious);
    }
    let (with, without) = (mean(&arms[0]), mean(&arms[1]));
    check(
        with >= without,
        format!(
            "with curriculum {with:.3} [{}]; without {without:.3} [{}]",
            fmt_list(&arms[0]),
            fmt_list(&arms[1])
        ),
    )
}

fn determinism() -> Verdict {
    let env = EnvConfig::new(ActionMode::Fat, Detection::Single, 2);
    let mut cfg = learning_config(env, RewardScheme::Combined, 20_000, 11);
    cfg.eval.interval = 5_000;
    cfg.eval.episodes = 10;
    let run = |dir: &Path| -> Result<(Vec<u8>, String), String> {
        let (_, summary) = train(&cfg, dir).map_err(|e| e.to_string())?;
        let log = fs::read(dir.join("train_log.csv")).map_err(|e| e.to_string())?;
        Ok((log, summary.final_checksum))
    };
    let (a, b) = (
        tempfile::tempdir().map_err(|e| e.to_string())?,
        tempfile::tempdir().map_err(|e| e.to_string())?,
    );
    let (log_a, sum_a) = run(a.path())?;
    let (log_b, sum_b) = run(b.path())?;
    check(
        log_a == log_b && sum_a == sum_b && !log_a.is_empty(),
        format!(
            "log {} bytes identical: {}; checksum {}…identical: {}",
            log_a.len(),
            log_a == log_b,
            &sum_a[..12],
            sum_a == sum_b
        ),
    )
}

const CRITERIA: [Criterion; 11] = [
    Criterion {
        name: "reward_branch_table",
        gating: true,
        run: reward_branch_table,
    },
    Criterion {
        name: "episodic_reward",
        gating: true,
        run: episodic_reward_shape,
    },
    Criterion {
        name: "clip_laws",
        gating: true,
        run: clip_laws,
    },
    Criterion {
        name: "env_oracle_equivalence",
        gating: true,
        run: env_oracle_equivalence,
    },
    Criterion {
        name: "sat_solvability",
        gating: true,
        run: sat_solvability,
    },
    Criterion {
        name: "ppo_gradient_check",
        gating: true,
        run: gradient_check,
    },
    Criterion {
        name: "curriculum_mechanics",
        gating: true,
        run: curriculum_mechanics,
    },
    Criterion {
        name: "determinism",
        gating: true,
        run: determinism,
    },
    Criterion {
        name: "smoke_learning",
        gating: false,
        run: smoke_learning,
    },
    Criterion {
        name: "scheme_ordering",
        gating: false,
        run: scheme_ordering,
    },
    Criterion {
        name: "difficulty_direction",
        gating: false,
        run: difficulty_direction,
    },
];

fn main() -> ExitCode {
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut gating_failures = 0;
    let mut results = Vec::new();
    for c in CRITERIA
        .iter()
        .filter(|c| filters.is_empty() || filters.iter().any(|f| c.name.contains(f.as_str())))
    {
        let started = Instant::now();
        let verdict = (c.run)();
        let secs = started.elapsed().as_secs_f64();
        let (tag, detail) = match &verdict {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        let note = if c.gating { "" } else { " (non-gating)" };
        println!("{tag} {:<24} {secs:>8.1}s  {detail}{note}", c.name);
        if verdict.is_err() && c.gating {
            gating_failures += 1;
        }
        results.push(verdict.is_ok());
    }
    let passed = results.iter().filter(|&&ok| ok).count();
    println!(
        "acceptance: {passed}/{} passed, {gating_failures} gating failures",
        results.len()
    );
    if gating_failures > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
