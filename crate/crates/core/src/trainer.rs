//! Offline deep Q-learning over a stored dataset with unit replay, a frozen
//! target network and periodic checkpoints.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::behavior_policy::{Dataset, TransitionUnit};
use crate::error::{Error, Result};
use crate::qnet::{sync_target, NetInput, NetworkArch, QNetwork, Workspace};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Training steps M.
    pub steps: usize,
    /// Units sampled per step T.
    pub units_per_step: usize,
    /// Target sync interval C.
    pub sync_interval: usize,
    /// Checkpoint interval E.
    pub checkpoint_interval: usize,
    pub gamma: f64,
    pub lr: f64,
    /// Seeds both the weight initialization and the unit sampler.
    pub seed: u64,
    pub arch: NetworkArch,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            units_per_step: 10,
            sync_interval: 500,
            checkpoint_interval: 100,
            gamma: 0.9,
            lr: 1e-4,
            seed: 0,
            arch: NetworkArch::shallow(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.units_per_step == 0 || self.sync_interval == 0 || self.checkpoint_interval == 0 {
            return bad("units per step, sync interval and checkpoint interval must be positive");
        }
        if self.steps > 0 && (self.sync_interval > self.steps || self.checkpoint_interval > self.steps) {
            return bad("sync and checkpoint intervals must not exceed the step count");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be finite and non-negative, got {}", self.lr)));
        }
        self.arch.validate()
    }

    /// Seed of the unit sampler, derived from `seed`.
    pub fn sampler_seed(&self) -> u64 {
        self.seed ^ 0x9E37_79B9_7F4A_7C15
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CheckpointRecord {
    /// 1-based, in emission order.
    pub id: u64,
    pub step: u64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    /// Mean loss of the T updates of each step; entry `k` is step `k + 1`.
    pub step_losses: Vec<f64>,
    pub checkpoints: Vec<CheckpointRecord>,
}

impl TrainLog {
    /// CSV with header `step,mean_loss,checkpoint_id`; one row per step,
    /// `checkpoint_id` empty on steps without a checkpoint.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,mean_loss,checkpoint_id")?;
        let mut ck = self.checkpoints.iter().peekable();
        for (i, loss) in self.step_losses.iter().enumerate() {
            let step = i as u64 + 1;
            write!(w, "{step},{loss},")?;
            if let Some(c) = ck.next_if(|c| c.step == step) {
                write!(w, "{}", c.id)?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub struct TrainOutcome {
    pub net: QNetwork,
    /// Target network as of the last sync.
    pub target: QNetwork,
    pub log: TrainLog,
}

/// Uniform sampling of unit indices with replacement.
pub struct UnitSampler {
    len: usize,
    rng: Xoshiro256PlusPlus,
}

impl UnitSampler {
    pub fn new(len: usize, seed: u64) -> Self {
        Self {
            len,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn next_index(&mut self) -> usize {
        self.rng.random_range(0..self.len)
    }
}

/// `y = r + γ·max_a' Q̂(s', a')`; the task is continuing, so there is no
/// terminal case.
pub fn compute_target(u: &TransitionUnit, target_net: &QNetwork, gamma: f64) -> Result<f64> {
    let q = target_net.forward(&u.s_next)?;
    finish_target(u, q.max(), gamma)
}

fn finish_target(u: &TransitionUnit, max_q: f64, gamma: f64) -> Result<f64> {
    let y = u.r.value() + gamma * max_q;
    if y.is_finite() {
        Ok(y)
    } else {
        Err(Error::numeric("target", format!("target value {y} is not finite")))
    }
}

/// Trains without keeping checkpoints.
pub fn train(train_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    train_with_checkpoints(train_set, cfg, |_, _| Ok(()))
}

/// Runs the training loop. Every E steps `on_checkpoint` receives the
/// checkpoint record and the current network; an error from it stops
/// training. On a numeric fault the checkpoints already handed out remain
/// valid and the error names the last one.
pub fn train_with_checkpoints(
    train_set: &Dataset,
    cfg: &TrainConfig,
    mut on_checkpoint: impl FnMut(CheckpointRecord, &QNetwork) -> Result<()>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut net = QNetwork::build(cfg.arch.clone(), cfg.seed)?;
    let mut target = net.clone();
    let mut ws: Workspace = net.workspace()?;
    let mut target_ws: Workspace = net.workspace()?;
    let mut input = NetInput::from_state(&cfg.arch, &train_set.units[0].s)?;
    let mut sampler = UnitSampler::new(train_set.len(), cfg.sampler_seed());
    // max Q̂(s') per unit; valid until the next sync
    let mut target_cache = vec![f64::NAN; train_set.len()];
    let mut log = TrainLog {
        step_losses: Vec::with_capacity(cfg.steps),
        checkpoints: Vec::with_capacity(cfg.steps / cfg.checkpoint_interval),
    };

    for step in 1..=cfg.steps {
        let result = (|| -> Result<f64> {
            let mut total = 0.0;
            for _ in 0..cfg.units_per_step {
                let idx = sampler.next_index();
                let u = &train_set.units[idx];
                if target_cache[idx].is_nan() {
                    input.encode(&cfg.arch, &u.s_next)?;
                    target_cache[idx] = target.forward_values(&mut target_ws, &input)?.max();
                }
                let y = finish_target(u, target_cache[idx], cfg.gamma)?;
                input.encode(&cfg.arch, &u.s)?;
                total += net.step_with(&mut ws, &input, u.a.index(), y, cfg.lr)?;
            }
            Ok(total / cfg.units_per_step as f64)
        })();
        let mean_loss = result.map_err(|cause| Error::TrainingAborted {
            step: step as u64,
            last_checkpoint: log.checkpoints.last().map(|c| c.id),
            cause: Box::new(cause),
        })?;
        log.step_losses.push(mean_loss);

        if step % cfg.sync_interval == 0 {
            sync_target(&net, &mut target)?;
            target_cache.fill(f64::NAN);
        }
        if step % cfg.checkpoint_interval == 0 {
            let record = CheckpointRecord {
                id: log.checkpoints.len() as u64 + 1,
                step: step as u64,
            };
            on_checkpoint(record, &net)?;
            log.checkpoints.push(record);
        }
    }
    Ok(TrainOutcome { net, target, log })
}
