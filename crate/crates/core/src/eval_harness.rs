//! Evaluation: good-action precision, learning curves, action-distribution
//! audit and closed-loop surface-following rollouts.

use std::io::Write;

use crate::behavior_policy::Dataset;
use crate::error::{Error, Result};
use crate::qnet::{Checkpoint, NetInput, QNetwork, Workspace};
use crate::rl_core::{good_actions, ActionClasses, ActionId, ContactBand, ContactRegime, State, NUM_ACTIONS};
use crate::sim_world::Env;
use crate::tactile_image::{frame_contact_rate, ContactRate, TactileImage};

/// Everything needed to judge an action from a stored state.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalContext {
    pub background: TactileImage,
    pub tau: u8,
    pub band: ContactBand,
    pub classes: ActionClasses,
}

impl EvalContext {
    pub fn from_env(env: &Env, classes: ActionClasses) -> Self {
        Self {
            background: env.background().clone(),
            tau: env.config().tau,
            band: env.config().band,
            classes,
        }
    }

    pub fn contact_rate(&self, s: &State) -> ContactRate {
        frame_contact_rate(&s.image, &self.background, self.tau)
    }

    /// Good actions judged from the ContactRate of the pre-action state.
    pub fn good_actions(&self, s: &State) -> Vec<ActionId> {
        good_actions(self.contact_rate(s), &self.band, &self.classes)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BandStats {
    pub states: usize,
    pub good: usize,
}

impl BandStats {
    pub fn precision(&self) -> Option<f64> {
        (self.states > 0).then(|| self.good as f64 / self.states as f64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PrecisionReport {
    pub checkpoint_id: Option<u64>,
    pub step: Option<u64>,
    pub test_size: usize,
    pub good: usize,
    pub precision: f64,
    pub low: BandStats,
    pub in_band: BandStats,
    pub high: BandStats,
}

impl PrecisionReport {
    pub const CSV_HEADER: &'static str = "checkpoint_id,step,test_size,good,precision,low_states,low_precision,in_band_states,in_band_precision,high_states,high_precision";

    /// One CSV row matching [`PrecisionReport::CSV_HEADER`]; absent values
    /// are empty fields.
    pub fn csv_row(&self) -> String {
        let opt = |v: Option<u64>| v.map_or(String::new(), |v| v.to_string());
        let prec = |b: &BandStats| b.precision().map_or(String::new(), |p| p.to_string());
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            opt(self.checkpoint_id),
            opt(self.step),
            self.test_size,
            self.good,
            self.precision,
            self.low.states,
            prec(&self.low),
            self.in_band.states,
            prec(&self.in_band),
            self.high.states,
            prec(&self.high)
        )
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        writeln!(w, "{}", self.csv_row())?;
        Ok(())
    }
}

/// Precision of an arbitrary state → action policy.
pub fn policy_precision(
    test: &Dataset,
    ctx: &EvalContext,
    mut policy: impl FnMut(&State) -> Result<ActionId>,
) -> Result<PrecisionReport> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut bands = [BandStats::default(); 3];
    for u in &test.units {
        let cr = ctx.contact_rate(&u.s);
        let b = match ctx.band.regime(cr) {
            ContactRegime::Low => 0,
            ContactRegime::InBand => 1,
            ContactRegime::High => 2,
        };
        let a = policy(&u.s)?;
        bands[b].states += 1;
        if good_actions(cr, &ctx.band, &ctx.classes).contains(&a) {
            bands[b].good += 1;
        }
    }
    let good = bands.iter().map(|b| b.good).sum();
    Ok(PrecisionReport {
        checkpoint_id: None,
        step: None,
        test_size: test.len(),
        good,
        precision: good as f64 / test.len() as f64,
        low: bands[0],
        in_band: bands[1],
        high: bands[2],
    })
}

/// Fraction of test states whose greedy action is a good action.
pub fn precision(net: &QNetwork, test: &Dataset, ctx: &EvalContext) -> Result<PrecisionReport> {
    let mut ws = net.workspace()?;
    let mut input = NetInput::from_state(net.arch(), &test.units.first().ok_or(Error::EmptyDataset)?.s)?;
    policy_precision(test, ctx, |s| {
        input.encode(net.arch(), s)?;
        Ok(net.forward_values(&mut ws, &input)?.argmax())
    })
}

/// Expected precision of a uniformly random action: mean of |good set|/9.
pub fn random_baseline(test: &Dataset, ctx: &EvalContext) -> Result<f64> {
    if test.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let total: f64 = test
        .units
        .iter()
        .map(|u| ctx.good_actions(&u.s).len() as f64 / NUM_ACTIONS as f64)
        .sum();
    Ok(total / test.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub checkpoint_id: u64,
    pub step: u64,
    pub precision: f64,
}

/// Precision per checkpoint in step order; ids are 1-based ranks by step.
pub fn learning_curve(checkpoints: &[Checkpoint], test: &Dataset, ctx: &EvalContext) -> Result<Vec<CurvePoint>> {
    if checkpoints.is_empty() {
        return Err(Error::Config("learning curve needs at least one checkpoint".into()));
    }
    let mut order: Vec<&Checkpoint> = checkpoints.iter().collect();
    order.sort_by_key(|c| c.step);
    order
        .iter()
        .enumerate()
        .map(|(i, c)| {
            Ok(CurvePoint {
                checkpoint_id: i as u64 + 1,
                step: c.step,
                precision: precision(&c.net, test, ctx)?.precision,
            })
        })
        .collect()
}

/// CSV with header `checkpoint_id,step,precision`.
pub fn write_learning_curve_csv<W: Write>(points: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "checkpoint_id,step,precision")?;
    for p in points {
        writeln!(w, "{},{},{}", p.checkpoint_id, p.step, p.precision)?;
    }
    Ok(())
}

/// Point whose step is closest to `step`; ties go to the earlier checkpoint.
pub fn nearest_point(points: &[CurvePoint], step: u64) -> Option<&CurvePoint> {
    points.iter().min_by_key(|p| (p.step.abs_diff(step), p.step))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionHistogram {
    pub counts: [u64; NUM_ACTIONS],
}

impl ActionHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn frequencies(&self) -> [f64; NUM_ACTIONS] {
        let total = self.total() as f64;
        self.counts.map(|c| c as f64 / total)
    }

    /// CSV with header `action,d3,d4,count,frequency`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "action,d3,d4,count,frequency")?;
        let freq = self.frequencies();
        for a in ActionId::ALL {
            let (d3, d4) = a.deltas();
            writeln!(w, "{},{},{},{},{}", a.index(), d3, d4, self.counts[a.index()], freq[a.index()])?;
        }
        Ok(())
    }
}

pub fn action_distribution(d: &Dataset) -> Result<ActionHistogram> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = [0u64; NUM_ACTIONS];
    for u in &d.units {
        counts[u.a.index()] += 1;
    }
    Ok(ActionHistogram { counts })
}

/// Chooses an action from the live environment.
pub trait Policy {
    fn act(&mut self, env: &Env) -> Result<ActionId>;
}

/// Greedy (argmax) policy of a frozen network.
pub struct GreedyPolicy<'a> {
    net: &'a QNetwork,
    ws: Workspace,
    input: NetInput,
}

impl<'a> GreedyPolicy<'a> {
    pub fn new(net: &'a QNetwork) -> Result<Self> {
        Ok(Self {
            net,
            ws: net.workspace()?,
            input: NetInput {
                image: Vec::new(),
                joints: [0.0; 4],
            },
        })
    }
}

impl Policy for GreedyPolicy<'_> {
    fn act(&mut self, env: &Env) -> Result<ActionId> {
        self.input.encode(self.net.arch(), env.state())?;
        Ok(self.net.forward_values(&mut self.ws, &self.input)?.argmax())
    }
}

/// Look-ahead oracle: tries every action on a copy of the environment
/// (including its noise stream) and takes the one whose resulting
/// ContactRate is closest to the band centre. Ties go to the lowest index.
pub struct OraclePolicy;

impl Policy for OraclePolicy {
    fn act(&mut self, env: &Env) -> Result<ActionId> {
        let ideal = env.config().band.ideal();
        let mut best = (f64::INFINITY, ActionId::NULL);
        for a in ActionId::ALL {
            let mut probe = env.clone();
            let (_, rec) = probe.step(a);
            let dist = (rec.contact_rate.value() - ideal).abs();
            if dist < best.0 {
                best = (dist, a);
            }
        }
        Ok(best.1)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutConfig {
    /// Measured steps after warm-up.
    pub steps: usize,
    pub warmup: usize,
    /// Lateral surface translation per step (m).
    pub drift: f64,
}

impl Default for RolloutConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            warmup: 50,
            drift: 2e-5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutStep {
    /// 1-based step number, warm-up included.
    pub step: usize,
    pub action: ActionId,
    /// ContactRate after the action.
    pub contact_rate: ContactRate,
    pub in_band: bool,
    pub warmup: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RolloutReport {
    pub config: RolloutConfig,
    /// Fraction of measured steps whose ContactRate lies in the band.
    pub in_band_fraction: f64,
    /// Measured steps with zero contact.
    pub lost_contact_steps: usize,
    pub trace: Vec<RolloutStep>,
}

impl RolloutReport {
    /// CSV with header `step,phase,action,contact_rate,in_band`; phase is
    /// `warmup` or `measure`, in_band is 0 or 1.
    pub fn write_trace_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,phase,action,contact_rate,in_band")?;
        for s in &self.trace {
            writeln!(
                w,
                "{},{},{},{},{}",
                s.step,
                if s.warmup { "warmup" } else { "measure" },
                s.action.index(),
                s.contact_rate.value(),
                s.in_band as u8
            )?;
        }
        Ok(())
    }

    /// CSV with header `steps,warmup,drift,in_band_fraction,lost_contact_steps`.
    pub fn write_summary_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "steps,warmup,drift,in_band_fraction,lost_contact_steps")?;
        writeln!(
            w,
            "{},{},{},{},{}",
            self.config.steps, self.config.warmup, self.config.drift, self.in_band_fraction, self.lost_contact_steps
        )?;
        Ok(())
    }
}

/// Closed-loop surface following. The surface translates by `drift` each
/// step and the environment's automatic reset is disabled, so lost contact
/// must be recovered by the policy. `on_frame` sees every post-action frame.
pub fn rollout<P: Policy + ?Sized>(
    policy: &mut P,
    env: &mut Env,
    cfg: &RolloutConfig,
    mut on_frame: impl FnMut(usize, &TactileImage) -> Result<()>,
) -> Result<RolloutReport> {
    if cfg.steps == 0 {
        return Err(Error::Config("rollout needs at least one measured step".into()));
    }
    env.set_drift(cfg.drift);
    env.set_reset_after(0);
    let band = env.config().band;
    let mut trace = Vec::with_capacity(cfg.warmup + cfg.steps);
    for step in 1..=cfg.warmup + cfg.steps {
        let action = policy.act(env)?;
        let (s, rec) = env.step(action);
        on_frame(step, &s.image)?;
        trace.push(RolloutStep {
            step,
            action,
            contact_rate: rec.contact_rate,
            in_band: band.contains(rec.contact_rate),
            warmup: step <= cfg.warmup,
        });
    }
    let measured = &trace[cfg.warmup..];
    let in_band = measured.iter().filter(|s| s.in_band).count();
    Ok(RolloutReport {
        config: *cfg,
        in_band_fraction: in_band as f64 / measured.len() as f64,
        lost_contact_steps: measured.iter().filter(|s| s.contact_rate.value() == 0.0).count(),
        trace,
    })
}
