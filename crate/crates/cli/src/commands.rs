use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::thread;

use anyhow::{Context, Result};

use sfdqn_core::behavior_policy::{generate_dataset_with_progress, load_dataset, save_dataset, split, Dataset};
use sfdqn_core::eval_harness::{
    action_distribution, precision, random_baseline, rollout as run_rollout, write_learning_curve_csv, CurvePoint,
    EvalContext, GreedyPolicy, OraclePolicy, Policy, PrecisionReport,
};
use sfdqn_core::qnet::{load_checkpoint, save_checkpoint, NetworkArch};
use sfdqn_core::rl_core::{ActionId, ContactRegime, Reward};
use sfdqn_core::sim_world::Env;
use sfdqn_core::trainer::train_with_checkpoints;
use sfdqn_core::Error;

use crate::config::ExperimentConfig;
use crate::meta::{DatasetSidecar, BACKGROUND_NAME, SIDECAR_NAME};
use crate::{EvalArgs, GenDataArgs, InspectArgs, RolloutArgs, TrainArgs};

const CHECKPOINT_DIR: &str = "checkpoints";
const TEST_SET_NAME: &str = "test.sfds";
const FINAL_CHECKPOINT_NAME: &str = "final.sfck";

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig> {
    match path {
        None => Ok(ExperimentConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in config {}", p.display()))
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

fn checkpoint_name(step: u64) -> String {
    format!("ckpt-{step:06}.sfck")
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.env.seed = seed;
    }
    if let Some(n) = a.n_units {
        cfg.n_units = n;
    }
    if let Some(drift) = a.drift {
        cfg.env.drift = drift;
    }
    cfg.validate()?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    write_text(&a.out.join("gen-data.cfg"), &cfg.to_kv_string())?;

    let mut env = Env::new(cfg.env.clone())?;
    let classes = env.classify_actions(cfg.class_epsilon)?;
    let n = cfg.n_units;
    let dataset = generate_dataset_with_progress(&mut env, n, &classes, cfg.env.seed, |done| {
        if done % 1000 == 0 || done == n {
            eprintln!("generated {done}/{n} units");
        }
    })?;

    save_dataset(&dataset, a.out.join("dataset.sfds"))?;
    let mut bg = create(&a.out.join(BACKGROUND_NAME))?;
    env.background().write_pgm(&mut bg)?;
    bg.flush()?;
    DatasetSidecar::new(&cfg.env, n, cfg.env.seed, cfg.class_epsilon, &classes).write(&a.out.join(SIDECAR_NAME))?;

    let rewarded = dataset.units.iter().filter(|u| u.r == Reward::IN_BAND).count();
    println!("wrote {} units to {}", n, a.out.display());
    println!("action classes: {}", classes.to_table().trim_end().replace('\n', "; "));
    println!("reward rate: {:.4}", rewarded as f64 / n.max(1) as f64);
    Ok(())
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let meta_path = a.meta.clone().unwrap_or_else(|| sibling(&a.dataset, SIDECAR_NAME));
    let sidecar = DatasetSidecar::read(&meta_path)?;
    let mut cfg = load_config(a.config.as_deref())?;
    cfg.env = sidecar.env_config()?;
    cfg.class_epsilon = sidecar.class_epsilon;
    cfg.n_units = sidecar.n_units;
    if let Some(seed) = a.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    if let Some(arch) = &a.arch {
        cfg.train.arch = NetworkArch::from_name(arch)?;
    }
    if let Some(gamma) = a.gamma {
        cfg.train.gamma = gamma;
    }
    if let Some(lr) = a.lr {
        cfg.train.lr = lr;
    }
    cfg.validate()?;

    let data = load_dataset(&a.dataset)?;
    let stored_hash = format!("{:016x}", data.meta.env_hash);
    if stored_hash != sidecar.env_config_hash {
        return Err(Error::Config(format!(
            "dataset environment hash {stored_hash} does not match sidecar {}",
            sidecar.env_config_hash
        ))
        .into());
    }
    let (train_set, test_set) = split(&data, cfg.train_fraction, cfg.split_seed)?;
    drop(data);

    let ck_dir = a.out.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ck_dir).with_context(|| format!("creating {}", ck_dir.display()))?;
    write_text(&a.out.join("train.cfg"), &cfg.to_kv_string())?;
    save_dataset(&test_set, a.out.join(TEST_SET_NAME))?;
    sidecar.write(&a.out.join(SIDECAR_NAME))?;
    let bg_src = sidecar.background_path(&meta_path);
    fs::copy(&bg_src, a.out.join(BACKGROUND_NAME)).with_context(|| format!("copying {}", bg_src.display()))?;

    let mut tc = cfg.train.clone();
    tc.arch = cfg.resolved_arch();
    eprintln!(
        "training {} net on {} units ({} held out) for {} steps",
        tc.arch.variant.name(),
        train_set.len(),
        test_set.len(),
        tc.steps
    );
    let total_checkpoints = tc.steps / tc.checkpoint_interval;
    let outcome = train_with_checkpoints(&train_set, &tc, |rec, net| {
        save_checkpoint(net, rec.step, ck_dir.join(checkpoint_name(rec.step)))?;
        if rec.id % 10 == 0 || rec.id as usize == total_checkpoints {
            eprintln!("checkpoint {}/{} at step {}", rec.id, total_checkpoints, rec.step);
        }
        Ok(())
    })?;

    save_checkpoint(&outcome.net, tc.steps as u64, a.out.join(FINAL_CHECKPOINT_NAME))?;
    let mut log = create(&a.out.join("train_log.csv"))?;
    outcome.log.write_csv(&mut log)?;
    log.flush()?;

    let losses = &outcome.log.step_losses;
    let tail = &losses[losses.len().saturating_sub(100)..];
    if !tail.is_empty() {
        println!("mean loss over last {} steps: {}", tail.len(), tail.iter().sum::<f64>() / tail.len() as f64);
    }
    println!("wrote {} checkpoints to {}", outcome.log.checkpoints.len(), ck_dir.display());
    Ok(())
}

fn list_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.extension().is_some_and(|e| e == "sfck") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::Config(format!("no .sfck checkpoints in {}", dir.display())).into());
    }
    Ok(files)
}

/// Scores each checkpoint file, spreading files over `workers` threads.
/// Only one network per worker is resident at a time.
fn score_checkpoints(files: &[PathBuf], test: &Dataset, ctx: &EvalContext, workers: usize) -> Result<Vec<PrecisionReport>> {
    let workers = workers.clamp(1, files.len());
    let per_worker: Vec<Result<Vec<(usize, PrecisionReport)>>> = thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut out = Vec::new();
                    for i in (w..files.len()).step_by(workers) {
                        let ck = load_checkpoint(&files[i]).with_context(|| format!("loading {}", files[i].display()))?;
                        let mut report = precision(&ck.net, test, ctx)?;
                        report.step = Some(ck.step);
                        out.push((i, report));
                    }
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(anyhow::anyhow!("evaluation worker panicked"))))
            .collect()
    });
    let mut reports = Vec::with_capacity(files.len());
    for r in per_worker {
        reports.extend(r?);
    }
    reports.sort_by_key(|(i, r)| (r.step, *i));
    Ok(reports
        .into_iter()
        .enumerate()
        .map(|(rank, (_, mut r))| {
            r.checkpoint_id = Some(rank as u64 + 1);
            r
        })
        .collect())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let run_dir = match a.checkpoints.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let test_path = a.test.clone().unwrap_or_else(|| run_dir.join(TEST_SET_NAME));
    let meta_path = a.meta.clone().unwrap_or_else(|| run_dir.join(SIDECAR_NAME));
    let out = a.out.clone().unwrap_or_else(|| run_dir.clone());
    let workers = a
        .workers
        .unwrap_or_else(|| thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(Error::Config("workers must be positive".into()).into());
    }

    let sidecar = DatasetSidecar::read(&meta_path)?;
    let ctx = sidecar.eval_context(&meta_path)?;
    let test = load_dataset(&test_path)?;
    if test.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let files = list_checkpoints(&a.checkpoints)?;

    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut snapshot = String::new();
    let _ = writeln!(snapshot, "# checkpoints: {}", a.checkpoints.display());
    let _ = writeln!(snapshot, "# test: {}", test_path.display());
    let _ = writeln!(snapshot, "# meta: {}", meta_path.display());
    let _ = writeln!(snapshot, "# workers: {workers}");
    snapshot.push_str(&sidecar.env_config);
    write_text(&out.join("eval.cfg"), &snapshot)?;

    eprintln!("evaluating {} checkpoints on {} test units", files.len(), test.len());
    let reports = score_checkpoints(&files, &test, &ctx, workers)?;
    let baseline = random_baseline(&test, &ctx)?;

    let points: Vec<CurvePoint> = reports
        .iter()
        .map(|r| CurvePoint {
            checkpoint_id: r.checkpoint_id.unwrap_or(0),
            step: r.step.unwrap_or(0),
            precision: r.precision,
        })
        .collect();
    let mut w = create(&out.join("learning_curve.csv"))?;
    write_learning_curve_csv(&points, &mut w)?;
    w.flush()?;

    let mut w = create(&out.join("precision_report.csv"))?;
    writeln!(w, "{}", PrecisionReport::CSV_HEADER)?;
    for r in &reports {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;

    // earliest checkpoint wins ties
    let best = points
        .iter()
        .fold(None::<&CurvePoint>, |b, p| match b {
            Some(b) if b.precision >= p.precision => Some(b),
            _ => Some(p),
        })
        .expect("at least one checkpoint");
    let last = points.last().expect("at least one checkpoint");
    let mut w = create(&out.join("eval_summary.csv"))?;
    writeln!(w, "checkpoints,test_size,random_baseline,best_step,best_precision,final_step,final_precision")?;
    writeln!(
        w,
        "{},{},{},{},{},{},{}",
        points.len(),
        test.len(),
        baseline,
        best.step,
        best.precision,
        last.step,
        last.precision
    )?;
    w.flush()?;

    println!("random baseline: {baseline:.4}");
    println!("best: step {} precision {:.4}", best.step, best.precision);
    println!("final: step {} precision {:.4}", last.step, last.precision);
    Ok(())
}

pub fn rollout(a: &RolloutArgs) -> Result<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.env.seed = seed;
    }
    if let Some(steps) = a.steps {
        cfg.rollout.steps = steps;
    }
    if let Some(drift) = a.drift {
        cfg.rollout.drift = drift;
    }
    if let Some(k) = a.dump_every {
        cfg.dump_every = k;
    }
    cfg.validate()?;

    let checkpoint = a.checkpoint.as_ref().map(load_checkpoint).transpose()?;
    let mut env = Env::new(cfg.env.clone())?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut snapshot = String::new();
    match &a.checkpoint {
        Some(p) => {
            let _ = writeln!(snapshot, "# policy: greedy {}", p.display());
        }
        None => snapshot.push_str("# policy: oracle\n"),
    }
    snapshot.push_str(&cfg.to_kv_string());
    write_text(&a.out.join("rollout.cfg"), &snapshot)?;

    let frames = a.out.join("frames");
    if cfg.dump_every > 0 {
        fs::create_dir_all(&frames).with_context(|| format!("creating {}", frames.display()))?;
    }
    let dump_every = cfg.dump_every;
    let on_frame = |step: usize, img: &sfdqn_core::tactile_image::TactileImage| -> sfdqn_core::Result<()> {
        if dump_every > 0 && step % dump_every == 0 {
            let f = File::create(frames.join(format!("frame-{step:05}.pgm")))?;
            let mut w = BufWriter::new(f);
            img.write_pgm(&mut w)?;
            w.flush()?;
        }
        Ok(())
    };

    let mut policy: Box<dyn Policy + '_> = match &checkpoint {
        Some(ck) => Box::new(GreedyPolicy::new(&ck.net)?),
        None => Box::new(OraclePolicy),
    };
    let report = run_rollout(policy.as_mut(), &mut env, &cfg.rollout, on_frame)?;

    let mut w = create(&a.out.join("rollout_trace.csv"))?;
    report.write_trace_csv(&mut w)?;
    w.flush()?;
    let mut w = create(&a.out.join("rollout_summary.csv"))?;
    report.write_summary_csv(&mut w)?;
    w.flush()?;

    println!("in-band fraction: {:.4}", report.in_band_fraction);
    println!("lost-contact steps: {}", report.lost_contact_steps);
    Ok(())
}

/// Width of a ContactRate histogram bin (per mille).
const CR_BIN: f64 = 20.0;

pub fn inspect(a: &InspectArgs) -> Result<()> {
    let data = load_dataset(&a.dataset)?;
    let hist = action_distribution(&data)?;
    let n = data.len();
    println!("units: {n}");
    println!("seed: {}", data.meta.seed);
    println!("env hash: {:016x}", data.meta.env_hash);

    println!("\naction  d3  d4   count  frequency");
    let freqs = hist.frequencies();
    for a in ActionId::ALL {
        let (d3, d4) = a.deltas();
        println!("{:>6} {:>3} {:>3} {:>7}  {:.4}", a.index(), d3, d4, hist.counts[a.index()], freqs[a.index()]);
    }
    let rewarded = data.units.iter().filter(|u| u.r == Reward::IN_BAND).count();
    println!("\nreward rate: {:.4} ({rewarded} of {n})", rewarded as f64 / n as f64);

    let meta_path = match &a.meta {
        Some(p) => Some(p.clone()),
        None => Some(sibling(&a.dataset, SIDECAR_NAME)).filter(|p| p.exists()),
    };
    let Some(meta_path) = meta_path else {
        println!("no sidecar found; ContactRate summary skipped");
        return Ok(());
    };
    let sidecar = DatasetSidecar::read(&meta_path)?;
    let ctx = sidecar.eval_context(&meta_path)?;

    // every observed frame: the first pre-state plus all post-states
    let rates: Vec<f64> = data
        .units
        .first()
        .map(|u| &u.s)
        .into_iter()
        .chain(data.units.iter().map(|u| &u.s_next))
        .map(|s| ctx.contact_rate(s).value())
        .collect();
    let max = rates.iter().copied().fold(0.0, f64::max);
    let bins = (max / CR_BIN).floor() as usize + 1;
    let mut counts = vec![0usize; bins];
    for r in &rates {
        counts[(r / CR_BIN).floor() as usize] += 1;
    }
    println!("\nContactRate histogram ({} frames)", rates.len());
    for (i, c) in counts.iter().enumerate() {
        let lo = i as f64 * CR_BIN;
        println!("[{:>5.0}, {:>5.0})  {c}", lo, lo + CR_BIN);
    }
    println!("max ContactRate: {max:.1}");

    let (mut low, mut in_band, mut high) = (0, 0, 0);
    for u in &data.units {
        match ctx.band.regime(ctx.contact_rate(&u.s)) {
            ContactRegime::Low => low += 1,
            ContactRegime::InBand => in_band += 1,
            ContactRegime::High => high += 1,
        }
    }
    println!("pre-state regimes: low {low}, in band {in_band}, high {high}");
    Ok(())
}
