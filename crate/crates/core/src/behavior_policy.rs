//! Dataset generation with the alternating complete-random / partial-random
//! behavior policy, train/test splitting, and the binary dataset format.
//!
//! # File layout
//!
//! All integers and floats are little-endian.
//!
//! | offset | size | field                                  |
//! |-------:|-----:|----------------------------------------|
//! | 0      | 9    | magic `SFDQN-DS\0`                     |
//! | 9      | 2    | version (u16, currently 1)             |
//! | 11     | 8    | unit count N (u64)                     |
//! | 19     | 2    | image width (u16, 64)                  |
//! | 21     | 2    | image height (u16, 48)                 |
//! | 23     | 8    | env-config hash (u64)                  |
//! | 31     | 8    | generation seed (u64)                  |
//! | 39     | N×6217 | records                              |
//!
//! Each record is `s.image` (3072 bytes, row-major), `s` joints as four f64
//! (`theta3, theta4, vel3, vel4`), the action (u8), the reward (f64), then
//! `s'.image` and `s'` joints in the same layout.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};
use crate::rl_core::{reward, ActionClasses, ActionEffectClass, ActionId, ContactBand, Reward, State};
use crate::sim_world::{Env, JointConfig};
use crate::tactile_image::{ContactRate, TactileImage, TACTILE_HEIGHT, TACTILE_PIXELS, TACTILE_WIDTH};

pub const DATASET_MAGIC: &[u8; 9] = b"SFDQN-DS\0";
pub const DATASET_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 39;
const STATE_LEN: usize = TACTILE_PIXELS + 4 * 8;
pub const RECORD_LEN: usize = 2 * STATE_LEN + 1 + 8;
// keeps the action stream independent of an environment seeded with the same value
const BEHAVIOR_SEED_SALT: u64 = 0xA5A5_0F0F_C3C3_5A5A;

/// One stored transition `<s, a, r, s'>`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionUnit {
    pub s: State,
    pub a: ActionId,
    pub r: Reward,
    pub s_next: State,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct DatasetMeta {
    pub seed: u64,
    pub env_hash: u64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Dataset {
    pub units: Vec<TransitionUnit>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

/// Which rule of the behavior policy applies to a (1-based) unit number.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BehaviorRule {
    CompleteRandom,
    PartialRandom,
}

pub fn behavior_rule(units_num: usize) -> BehaviorRule {
    if units_num % 10 >= 5 {
        BehaviorRule::CompleteRandom
    } else {
        BehaviorRule::PartialRandom
    }
}

/// Candidate set of the behavior policy for a unit number and current rate.
pub fn behavior_candidates(units_num: usize, cr: ContactRate, band: &ContactBand, classes: &ActionClasses) -> Vec<ActionId> {
    match behavior_rule(units_num) {
        BehaviorRule::CompleteRandom => ActionId::ALL.to_vec(),
        BehaviorRule::PartialRandom if cr.value() >= band.ideal() => classes.subset_excluding(ActionEffectClass::Increase),
        BehaviorRule::PartialRandom => classes.subset_excluding(ActionEffectClass::Decrease),
    }
}

pub fn select_behavior_action<R: Rng + ?Sized>(
    units_num: usize,
    cr: ContactRate,
    band: &ContactBand,
    classes: &ActionClasses,
    rng: &mut R,
) -> Result<ActionId> {
    if units_num == 0 {
        return Err(Error::Internal("unit numbers start at 1".into()));
    }
    let candidates = behavior_candidates(units_num, cr, band, classes);
    candidates
        .choose(rng)
        .copied()
        .ok_or_else(|| Error::Internal(format!("empty candidate set for unit {units_num} at ContactRate {cr}")))
}

/// Runs the behavior policy for `n` steps, storing every transition.
pub fn generate_dataset(env: &mut Env, n: usize, classes: &ActionClasses, seed: u64) -> Result<Dataset> {
    generate_dataset_with_progress(env, n, classes, seed, |_| {})
}

pub fn generate_dataset_with_progress(
    env: &mut Env,
    n: usize,
    classes: &ActionClasses,
    seed: u64,
    mut progress: impl FnMut(usize),
) -> Result<Dataset> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ BEHAVIOR_SEED_SALT);
    let band = env.config().band;
    let mut units = Vec::with_capacity(n);
    for units_num in 1..=n {
        let abort = |cause: Error, completed: usize| Error::GenerationAborted {
            completed,
            requested: n,
            cause: Box::new(cause),
        };
        let s = env.state().clone();
        let a = select_behavior_action(units_num, env.contact_rate(), &band, classes, &mut rng)
            .map_err(|e| abort(e, units_num - 1))?;
        let (s_next, record) = env.step(a);
        let j = &s_next.joints;
        if ![j.theta3, j.theta4, j.vel3, j.vel4].iter().all(|v| v.is_finite()) {
            return Err(abort(Error::numeric("environment", "non-finite joint state"), units_num - 1));
        }
        units.push(TransitionUnit {
            s,
            a,
            r: reward(record.contact_rate, &band),
            s_next,
        });
        progress(units_num);
    }
    Ok(Dataset {
        units,
        meta: DatasetMeta {
            seed,
            env_hash: env.config().hash(),
        },
    })
}

/// Seeded shuffle, then the first `round(N·train_fraction)` units train.
pub fn split(d: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Config(format!("train fraction must lie in (0, 1), got {train_fraction}")));
    }
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    let n_train = (d.len() as f64 * train_fraction).round() as usize;
    let pick = |idx: &[usize]| Dataset {
        units: idx.iter().map(|&i| d.units[i].clone()).collect(),
        meta: d.meta,
    };
    Ok((pick(&order[..n_train]), pick(&order[n_train..])))
}

pub fn save_dataset(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_header(d))?;
    let mut rec = Vec::with_capacity(RECORD_LEN);
    for u in &d.units {
        rec.clear();
        encode_unit(u, &mut rec);
        w.write_all(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_dataset(&fs::read(path)?)
}

pub fn encode_dataset(d: &Dataset) -> Vec<u8> {
    let mut out = encode_header(d);
    out.reserve(d.len() * RECORD_LEN);
    for u in &d.units {
        encode_unit(u, &mut out);
    }
    out
}

fn encode_header(d: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(d.len() as u64).to_le_bytes());
    out.extend_from_slice(&(TACTILE_WIDTH as u16).to_le_bytes());
    out.extend_from_slice(&(TACTILE_HEIGHT as u16).to_le_bytes());
    out.extend_from_slice(&d.meta.env_hash.to_le_bytes());
    out.extend_from_slice(&d.meta.seed.to_le_bytes());
    out
}

fn encode_state(s: &State, out: &mut Vec<u8>) {
    out.extend_from_slice(s.image.pixels());
    for v in [s.joints.theta3, s.joints.theta4, s.joints.vel3, s.joints.vel4] {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode_unit(u: &TransitionUnit, out: &mut Vec<u8>) {
    encode_state(&u.s, out);
    out.push(u.a.index() as u8);
    out.extend_from_slice(&u.r.value().to_le_bytes());
    encode_state(&u.s_next, out);
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.pos as u64, format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn state(&mut self) -> Result<State> {
        let image = TactileImage::from_pixels(self.take(TACTILE_PIXELS, "image")?)?;
        let joints = JointConfig {
            theta3: self.f64("theta3")?,
            theta4: self.f64("theta4")?,
            vel3: self.f64("vel3")?,
            vel4: self.f64("vel4")?,
        };
        Ok(State { image, joints })
    }
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(DATASET_MAGIC.len(), "magic")? != DATASET_MAGIC {
        return Err(Error::format(0, "bad magic, not an SFDQN dataset"));
    }
    let version = c.u16("version")?;
    if version != DATASET_VERSION {
        return Err(Error::format(9, format!("unsupported dataset version {version}")));
    }
    let n = c.u64("unit count")?;
    let (w, h) = (c.u16("image width")?, c.u16("image height")?);
    if (w as usize, h as usize) != (TACTILE_WIDTH, TACTILE_HEIGHT) {
        return Err(Error::format(19, format!("unsupported image dimensions {w}x{h}")));
    }
    let env_hash = c.u64("env hash")?;
    let seed = c.u64("seed")?;
    let body = (bytes.len() - HEADER_LEN) as u64;
    if body != n.saturating_mul(RECORD_LEN as u64) {
        return Err(Error::format(
            HEADER_LEN as u64 + body.min(n.saturating_mul(RECORD_LEN as u64)),
            format!("header declares {n} units but the body holds {body} bytes"),
        ));
    }
    let mut units = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let s = c.state()?;
        let at = c.pos as u64;
        let a = c.take(1, "action")?[0];
        let a = ActionId::new(a).ok_or_else(|| Error::format(at, format!("action {a} out of range")))?;
        let at = c.pos as u64;
        let r = c.f64("reward")?;
        let r = Reward::from_value(r).ok_or_else(|| Error::format(at, format!("reward {r} is neither 0 nor 10")))?;
        let s_next = c.state()?;
        units.push(TransitionUnit { s, a, r, s_next });
    }
    Ok(Dataset {
        units,
        meta: DatasetMeta { seed, env_hash },
    })
}
