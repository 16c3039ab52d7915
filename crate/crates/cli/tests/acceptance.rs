//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line per criterion and exits non-zero if any failed.
//!
//! Run alone with `cargo test -p sfdqn-cli --test acceptance`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use proptest::prelude::*;
use proptest::sample::subsequence;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use sfdqn_core::behavior_policy::{generate_dataset, split, Dataset};
use sfdqn_core::eval_harness::{
    nearest_point, precision, random_baseline, rollout, CurvePoint, EvalContext, GreedyPolicy, OraclePolicy,
    RolloutConfig,
};
use sfdqn_core::qnet::{ArchVariant, ConvSpec, NetInput, NetworkArch, QNetwork};
use sfdqn_core::rl_core::{reward, ContactBand, DEFAULT_CLASS_EPSILON, NUM_ACTIONS};
use sfdqn_core::sim_world::{render_tactile, Env, EnvConfig, SensorPose, Surface};
use sfdqn_core::tactile_image::{
    contact_rate, frame_contact_rate, preprocess, BinaryContactMask, ContactRate, TACTILE_PIXELS,
};
use sfdqn_core::trainer::{train_with_checkpoints, TrainConfig};

struct Verdict {
    id: &'static str,
    passed: bool,
    detail: String,
}

fn verdict(id: &'static str, passed: bool, detail: String) -> Verdict {
    let v = Verdict { id, passed, detail };
    println!("{} {}: {}", v.id, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    v
}

// ---------------------------------------------------------------- shared data

const N_UNITS: usize = 12_000;
const TRAIN_FRACTION: f64 = 0.9;
const SPLIT_SEED: u64 = 0;

struct Generated {
    env_config: EnvConfig,
    dataset: Dataset,
    ctx: EvalContext,
}

fn generate() -> Generated {
    let env_config = EnvConfig::default();
    let mut env = Env::new(env_config.clone()).expect("environment");
    let classes = env.classify_actions(DEFAULT_CLASS_EPSILON).expect("classification");
    let ctx = EvalContext::from_env(&env, classes.clone());
    let dataset = generate_dataset(&mut env, N_UNITS, &classes, env_config.seed).expect("dataset");
    Generated {
        env_config,
        dataset,
        ctx,
    }
}

struct Trained {
    net: QNetwork,
    curve: Vec<CurvePoint>,
    final_precision: f64,
    baseline: f64,
}

fn train_full(g: &Generated) -> Trained {
    let (train_set, test) = split(&g.dataset, TRAIN_FRACTION, SPLIT_SEED).expect("split");
    let mut cfg = TrainConfig::default();
    cfg.arch = cfg
        .arch
        .clone()
        .with_input_scales(g.env_config.limits.max.abs(), g.env_config.delta);
    let mut curve = Vec::new();
    let outcome = train_with_checkpoints(&train_set, &cfg, |rec, net| {
        curve.push(CurvePoint {
            checkpoint_id: rec.id,
            step: rec.step,
            precision: precision(net, &test, &g.ctx)?.precision,
        });
        Ok(())
    })
    .expect("training");
    let final_precision = precision(&outcome.net, &test, &g.ctx).expect("precision").precision;
    Trained {
        net: outcome.net,
        curve,
        final_precision,
        baseline: random_baseline(&test, &g.ctx).expect("baseline"),
    }
}

// ------------------------------------------------------------------ criteria

fn ac1(t: &Trained) -> Verdict {
    let best = t.curve.iter().map(|p| p.precision).fold(0.0, f64::max);
    let margin = t.final_precision - t.baseline;
    verdict(
        "AC1",
        best >= 0.75 && margin >= 0.20,
        format!(
            "good-action precision peaks at {best:.4} (need >= 0.75); final {:.4} vs random baseline {:.4}, margin {margin:.4} (need >= 0.20)",
            t.final_precision, t.baseline
        ),
    )
}

fn ac2(t: &Trained) -> Verdict {
    let best = t
        .curve
        .iter()
        .fold(None::<&CurvePoint>, |b, p| match b {
            Some(b) if b.precision >= p.precision => Some(b),
            _ => Some(p),
        })
        .expect("checkpoints");
    let near = nearest_point(&t.curve, 5000).expect("checkpoints");
    verdict(
        "AC2",
        best.precision - near.precision <= 0.05,
        format!(
            "precision {:.4} at step {} vs best {:.4} at step {} (gap {:.4}, need <= 0.05)",
            near.precision,
            near.step,
            best.precision,
            best.step,
            best.precision - near.precision
        ),
    )
}

fn ac3(g: &Generated) -> Verdict {
    let max = g
        .dataset
        .units
        .iter()
        .map(|u| g.ctx.contact_rate(&u.s_next).value())
        .fold(0.0, f64::max);
    verdict(
        "AC3",
        max <= 300.0,
        format!("max post-state ContactRate {max:.1} over {} units (need <= 300)", g.dataset.len()),
    )
}

fn ac4(g: &Generated) -> Verdict {
    let mut counts = [0usize; NUM_ACTIONS];
    for u in &g.dataset.units {
        counts[u.a.index()] += 1;
    }
    let freqs: Vec<f64> = counts.iter().map(|&c| c as f64 / g.dataset.len() as f64).collect();
    let min = freqs.iter().copied().fold(1.0, f64::min);
    let shown: Vec<String> = freqs.iter().map(|f| format!("{f:.3}")).collect();
    verdict(
        "AC4",
        min >= 0.05,
        format!("action frequencies [{}], min {min:.4} (need >= 0.05)", shown.join(", ")),
    )
}

const FD_STEP: f64 = 1e-6;

/// Central-difference check of `∂(y − Q_a)²/∂θ` on up to 100 evenly spaced
/// entries of every weight and bias tensor. Returns the worst relative error.
fn finite_difference_check(net: &QNetwork, input: &NetInput, a: usize, y: f64) -> (f64, usize) {
    let mut probe = net.clone();
    let mut ws = probe.workspace().unwrap();
    probe.gradient_input(&mut ws, input, a, y).unwrap();
    let grad = ws.gradient().clone();
    let layers = probe.layers().to_vec();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for spec in &layers {
        for range in [spec.weights(), spec.biases()] {
            let picks = range.len().min(100);
            for k in 0..picks {
                let idx = range.start + k * range.len() / picks;
                let analytic = grad.get(&layers, idx);
                let orig = probe.params()[idx];
                probe.params_mut()[idx] = orig + FD_STEP;
                let qp = probe.forward_input(&mut ws, input).unwrap()[a];
                probe.params_mut()[idx] = orig - FD_STEP;
                let qm = probe.forward_input(&mut ws, input).unwrap()[a];
                probe.params_mut()[idx] = orig;
                // (y − qp)² − (y − qm)², factored to avoid cancellation
                let numeric = (qm - qp) * (2.0 * y - qp - qm) / (2.0 * FD_STEP);
                // gradients below 1e-6 in magnitude are compared absolutely
                let denom = analytic.abs().max(numeric.abs()).max(1e-6);
                worst = worst.max((analytic - numeric).abs() / denom);
                checked += 1;
            }
        }
    }
    (worst, checked)
}

fn ac5(g: &Generated) -> Verdict {
    let start = Instant::now();
    // a frame with real contact so every conv filter sees signal
    let unit = g
        .dataset
        .units
        .iter()
        .find(|u| g.ctx.contact_rate(&u.s).value() > 25.0)
        .expect("contact state");
    let mut parts = Vec::new();
    let mut worst_all: f64 = 0.0;
    for arch in [NetworkArch::shallow(), NetworkArch::deep()] {
        let arch = arch.with_input_scales(g.env_config.limits.max.abs(), g.env_config.delta);
        let name = arch.variant.name();
        let net = QNetwork::build(arch.clone(), 17).unwrap();
        let input = NetInput::from_state(&arch, &unit.s).unwrap();
        let a = unit.a.index();
        let q = net.forward(&unit.s).unwrap().get(unit.a);
        let (worst, checked) = finite_difference_check(&net, &input, a, q + 3.0);
        worst_all = worst_all.max(worst);
        parts.push(format!("{name} {worst:.2e} over {checked} entries"));
    }
    verdict(
        "AC5",
        worst_all <= 1e-4,
        format!(
            "max relative gradient error: {} (need <= 1e-4), {:.1}s",
            parts.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

/// conv(1 filter, 2×2 kernel) on a 2×2 image, joint dense 4→1, dense 2→1,
/// output 1→2, ReLU everywhere except the output.
fn micro_arch() -> NetworkArch {
    NetworkArch {
        variant: ArchVariant::Custom,
        input_height: 2,
        input_width: 2,
        convs: vec![ConvSpec {
            filters: 1,
            kernel: 2,
            pool_after: false,
        }],
        joint_width: 1,
        hidden: vec![1],
        outputs: 2,
        angle_scale: 1.0,
        velocity_scale: 1.0,
    }
}

fn ac6() -> Verdict {
    // order: conv w[4], conv b, joint u[4], joint b, hidden v[2], hidden b,
    // output o[2], output b[2]
    let theta: [f64; 17] = [
        0.5, -0.25, 0.75, 1.0, 0.1, 0.2, -0.1, 0.3, 0.4, 0.05, 0.6, 0.9, -0.2, 1.5, -0.7, 0.25, 0.5,
    ];
    let x = [0.2, 0.4, 0.6, 0.8];
    let q_in = [1.0, -0.5, 2.0, 0.25];
    let (a, y, lr) = (0usize, 4.0, 0.01);

    // hand-computed forward and backward pass
    let relu = |v: f64| v.max(0.0);
    let (w, bc) = (&theta[0..4], theta[4]);
    let (u, bj) = (&theta[5..9], theta[9]);
    let (v, bh) = (&theta[10..12], theta[12]);
    let (o, bo) = (&theta[13..15], &theta[15..17]);
    let c = relu(w[0] * x[0] + w[1] * x[1] + w[2] * x[2] + w[3] * x[3] + bc);
    let j = relu(u[0] * q_in[0] + u[1] * q_in[1] + u[2] * q_in[2] + u[3] * q_in[3] + bj);
    let h = relu(v[0] * c + v[1] * j + bh);
    let q_a = o[a] * h + bo[a];
    let d_q = -2.0 * (y - q_a);
    let d_h = if h > 0.0 { d_q * o[a] } else { 0.0 };
    let d_c = if c > 0.0 { d_h * v[0] } else { 0.0 };
    let d_j = if j > 0.0 { d_h * v[1] } else { 0.0 };
    let mut grad = [0.0; 17];
    for i in 0..4 {
        grad[i] = d_c * x[i];
        grad[5 + i] = d_j * q_in[i];
    }
    grad[4] = d_c;
    grad[9] = d_j;
    grad[10] = d_h * c;
    grad[11] = d_h * j;
    grad[12] = d_h;
    grad[13 + a] = d_q * h;
    grad[15 + a] = d_q;
    let expected: Vec<f64> = theta.iter().zip(grad).map(|(t, g)| t - lr * g).collect();

    let mut net = QNetwork::from_params(micro_arch(), theta.to_vec()).unwrap();
    let mut ws = net.workspace().unwrap();
    let input = NetInput {
        image: x.to_vec(),
        joints: q_in,
    };
    let loss = net.step_with(&mut ws, &input, a, y, lr).unwrap();
    let worst = net
        .params()
        .iter()
        .zip(&expected)
        .map(|(p, e)| (p - e).abs())
        .fold(0.0, f64::max);
    let loss_err = (loss - (y - q_a).powi(2)).abs();
    verdict(
        "AC6",
        worst <= 1e-9 && loss_err <= 1e-9,
        format!("max |updated − pencil| = {worst:.2e}, loss error {loss_err:.2e} (need <= 1e-9)"),
    )
}

fn ac7() -> Verdict {
    let model = EnvConfig::default().sensor;
    let surface = Surface::flat(0.0, 0.0);
    // sensor facing straight down; tip height −d means penetration d
    let pose = |depth: f64| SensorPose {
        tip: [0.0, -depth],
        orientation: -std::f64::consts::FRAC_PI_2,
    };
    let full = model.crown_depth + model.depth_saturation;
    let mut ok = true;
    let mut parts = Vec::new();
    for seed in [1u64, 2, 3] {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let bg = preprocess(&render_tactile(&pose(-0.05), &surface, &model, &mut rng)).unwrap();
        let rates: Vec<f64> = (1..=20)
            .map(|k| {
                let frame = preprocess(&render_tactile(&pose(full * k as f64 / 20.0), &surface, &model, &mut rng)).unwrap();
                frame_contact_rate(&frame, &bg, 20).value()
            })
            .collect();
        let monotone = rates.windows(2).all(|w| w[1] >= w[0]);
        ok &= monotone && rates[0] > 0.0;
        parts.push(format!("seed {seed}: {:.1} .. {:.1}", rates[0], rates[19]));
    }
    verdict(
        "AC7",
        ok,
        format!("ContactRate nondecreasing over 20 depth increments ({})", parts.join("; ")),
    )
}

fn ac8() -> Verdict {
    let band = ContactBand::default();
    let all: Vec<usize> = (0..TACTILE_PIXELS).collect();
    // half the cases concentrate near the band edges (61.44 and 122.88 pixels)
    let strategy = prop_oneof![0usize..=TACTILE_PIXELS, 50usize..=135].prop_flat_map(move |n| subsequence(all.clone(), n));
    let mut runner = TestRunner::new(ProptestConfig {
        cases: 2000,
        ..ProptestConfig::default()
    });
    let outcome = runner.run(&strategy, |on| {
        let mut mask = BinaryContactMask::empty();
        for &i in &on {
            mask.set(i, true);
        }
        // 20 <= 1000·n/3072 <= 40 in exact integer arithmetic
        let n = on.len();
        let in_band = 1000 * n >= 20 * TACTILE_PIXELS && 1000 * n <= 40 * TACTILE_PIXELS;
        let r = reward(contact_rate(&mask), &band).value();
        prop_assert_eq!(r, if in_band { 10.0 } else { 0.0 });
        Ok(())
    });
    let edges = [(20.0, 10.0), (40.0, 10.0), (19.999_999_999, 0.0), (40.000_000_001, 0.0), (0.0, 0.0), (1000.0, 0.0)];
    let edges_ok = edges
        .iter()
        .all(|&(cr, r)| reward(ContactRate::new(cr), &band).value() == r);
    verdict(
        "AC8",
        outcome.is_ok() && edges_ok,
        match outcome {
            Ok(()) if edges_ok => "reward is 10 exactly on [20, 40] over 2000 random masks and the closed band edges".into(),
            Ok(()) => "band edge values wrong".into(),
            Err(e) => format!("counterexample: {e}"),
        },
    )
}

const DRIFTS: [f64; 3] = [2e-5, 2e-4, 1e-3];

fn ac9(g: &Generated, t: &Trained) -> Verdict {
    let mut net_fracs = Vec::new();
    let mut oracle_fracs = Vec::new();
    for drift in DRIFTS {
        let cfg = RolloutConfig {
            drift,
            ..RolloutConfig::default()
        };
        let mut env = Env::new(g.env_config.clone()).unwrap();
        let mut policy = GreedyPolicy::new(&t.net).unwrap();
        net_fracs.push(rollout(&mut policy, &mut env, &cfg, |_, _| Ok(())).unwrap().in_band_fraction);
        let mut env = Env::new(g.env_config.clone()).unwrap();
        oracle_fracs.push(rollout(&mut OraclePolicy, &mut env, &cfg, |_, _| Ok(())).unwrap().in_band_fraction);
    }
    let monotone = net_fracs.windows(2).all(|w| w[1] <= w[0]);
    verdict(
        "AC9",
        net_fracs[0] >= 0.6 && monotone && oracle_fracs[0] >= 0.6,
        format!(
            "in-band fraction over drifts {DRIFTS:?}: net {net_fracs:.3?}, look-ahead oracle {oracle_fracs:.3?} (need net >= 0.6 at the slowest drift, non-increasing)"
        ),
    )
}

/// Runs gen-data → train → eval inside `dir` with relative paths, so the
/// resolved-config snapshots are comparable across directories.
fn cli_run(dir: &Path) {
    let cfg = "steps = 300\nunits_per_step = 10\nsync_interval = 100\ncheckpoint_interval = 50\n";
    fs::write(dir.join("run.cfg"), cfg).unwrap();
    let steps: [&[&str]; 3] = [
        &["gen-data", "--seed", "21", "--n-units", "300", "--out", "data"],
        &["train", "--dataset", "data/dataset.sfds", "--config", "run.cfg", "--seed", "4", "--out", "run"],
        &["eval", "--checkpoints", "run/checkpoints", "--workers", "3"],
    ];
    for args in steps {
        let out = Command::new(env!("CARGO_BIN_EXE_sfdqn"))
            .args(args)
            .current_dir(dir)
            .output()
            .unwrap();
        assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    }
}

fn tree(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

fn ac10() -> Verdict {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    cli_run(a.path());
    cli_run(b.path());
    let files = tree(a.path());
    let same_listing = files == tree(b.path());
    let differing: Vec<String> = files
        .iter()
        .filter(|f| fs::read(a.path().join(f)).ok() != fs::read(b.path().join(f)).ok())
        .map(|f| f.display().to_string())
        .collect();
    let kinds = ["sfds", "sfck", "csv"];
    let covered = kinds
        .iter()
        .all(|k| files.iter().any(|f| f.extension().is_some_and(|e| e == *k)));
    verdict(
        "AC10",
        same_listing && differing.is_empty() && covered,
        if differing.is_empty() {
            format!("{} files (datasets, checkpoints, CSVs, snapshots) byte-identical across two seeded runs", files.len())
        } else {
            format!("differing files: {}", differing.join(", "))
        },
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut verdicts = vec![ac6(), ac7(), ac8(), ac10()];

    let g = generate();
    verdicts.push(ac3(&g));
    verdicts.push(ac4(&g));
    verdicts.push(ac5(&g));

    let t = train_full(&g);
    verdicts.push(ac1(&t));
    verdicts.push(ac2(&t));
    verdicts.push(ac9(&g, &t));

    verdicts.sort_by_key(|v| v.id.trim_start_matches("AC").parse::<u32>().unwrap_or(0));
    let failed: Vec<&str> = verdicts.iter().filter(|v| !v.passed).map(|v| v.id).collect();
    println!("\nacceptance summary ({:.0}s):", start.elapsed().as_secs_f64());
    for v in &verdicts {
        println!("  {:<5} {}  {}", v.id, if v.passed { "PASS" } else { "FAIL" }, v.detail);
    }
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("failed: {}", failed.join(", "));
        ExitCode::FAILURE
    }
}
