use std::f64::consts::FRAC_PI_2;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rl_core::{classify_actions, ActionClasses, ActionId, ContactBand, ContactProbe, State};
use crate::tactile_image::{capture_background, frame_contact_rate, preprocess, ContactRate, RawImage, TactileImage, TactileSensor, DEFAULT_TAU};

use super::kinematics::{apply_action, forward_kinematics, ArmGeometry, JointConfig, JointLimits, SensorPose};
use super::render::{max_penetration, render_tactile, SensorModel};
use super::surface::{Surface, SurfaceKind};

/// Sensor face direction for the working pose: pointing straight down.
const FACE_DOWN: f64 = -FRAC_PI_2;
/// Half-width of the joint-3 interval searched when seeking a contact pose.
const SEEK_SPAN: f64 = 0.05;
const SEEK_ITERATIONS: usize = 48;

/// Everything needed to build a reproducible environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub geometry: ArmGeometry,
    pub limits: JointLimits,
    /// Joint-3 angle of the nominal working pose; joint 4 is chosen so the
    /// sensor faces straight down.
    pub home_theta3: f64,
    /// Joint-3 lift applied when capturing the background frame.
    pub retract_angle: f64,
    pub surface: Surface,
    /// Lateral surface translation per step (m).
    pub drift: f64,
    pub sensor: SensorModel,
    pub tau: u8,
    /// Angular shift of one action (rad).
    pub delta: f64,
    pub band: ContactBand,
    pub seed: u64,
    /// Consecutive zero-contact steps that trigger a reset (0 disables).
    pub reset_after: u32,
    /// Resets land within this many action steps of the band centre.
    pub reset_spread: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            geometry: ArmGeometry::default(),
            limits: JointLimits::default(),
            home_theta3: 0.3,
            retract_angle: 0.05,
            surface: Surface::new(SurfaceKind::Sinusoidal {
                amplitude: 0.002,
                wavelength: 0.1,
            })
            .expect("valid default surface"),
            drift: 2.0e-5,
            sensor: SensorModel::default(),
            tau: DEFAULT_TAU,
            delta: 1.35e-4,
            band: ContactBand::default(),
            seed: 0,
            reset_after: 50,
            reset_spread: 3,
        }
    }
}

impl EnvConfig {
    /// Parses a flat `key = value` file on top of the defaults. Blank lines
    /// and `#` comments are ignored; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Applies one `key = value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {value:?}")))
        };
        let int = || -> Result<u64> {
            value
                .parse::<u64>()
                .map_err(|_| Error::Config(format!("{key}: expected an integer, got {value:?}")))
        };
        match key {
            "link1" => self.geometry.l1 = num()?,
            "link2" => self.geometry.l2 = num()?,
            "base_x" => self.geometry.base[0] = num()?,
            "base_y" => self.geometry.base[1] = num()?,
            "joint_limit" => {
                let m = num()?;
                self.limits = JointLimits { min: -m, max: m };
            }
            "home_theta3" => self.home_theta3 = num()?,
            "retract_angle" => self.retract_angle = num()?,
            "surface" => {
                let kind = match value {
                    "flat" => SurfaceKind::FlatInclined {
                        slope: 0.0,
                        offset: 0.0,
                    },
                    "sinusoidal" => SurfaceKind::Sinusoidal {
                        amplitude: 0.002,
                        wavelength: 0.1,
                    },
                    "piecewise" => SurfaceKind::PiecewiseLinear {
                        points: vec![(0.0, 0.0)],
                    },
                    other => return Err(Error::Config(format!("unknown surface kind {other:?}"))),
                };
                let offset = self.surface.lateral_offset;
                self.surface = Surface::new(kind)?;
                self.surface.lateral_offset = offset;
            }
            "slope" | "offset" | "amplitude" | "wavelength" | "points" => self.set_surface_param(key, value)?,
            "lateral_offset" => self.surface.lateral_offset = num()?,
            "drift" => self.drift = num()?,
            "patch_size" => self.sensor.patch_size = num()?,
            "crown_depth" => self.sensor.crown_depth = num()?,
            "gain" => self.sensor.gain = num()?,
            "depth_saturation" => self.sensor.depth_saturation = num()?,
            "background_level" => self.sensor.background_level = num()?,
            "noise_sigma" => self.sensor.noise_sigma = num()?,
            "edge_falloff" => self.sensor.edge_falloff = num()?,
            "tau" => {
                self.tau = u8::try_from(int()?).map_err(|_| Error::Config(format!("tau out of range: {value}")))?
            }
            "delta" => self.delta = num()?,
            "cr_min" => self.band.cr_min = num()?,
            "cr_max" => self.band.cr_max = num()?,
            "seed" => self.seed = int()?,
            "reset_after" => {
                self.reset_after = u32::try_from(int()?).map_err(|_| Error::Config(format!("reset_after out of range: {value}")))?
            }
            "reset_spread" => {
                self.reset_spread = u32::try_from(int()?).map_err(|_| Error::Config(format!("reset_spread out of range: {value}")))?
            }
            other => return Err(Error::Config(format!("unknown env key {other:?}"))),
        }
        Ok(())
    }

    fn set_surface_param(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
        };
        let offset = self.surface.lateral_offset;
        let mut kind = self.surface.kind().clone();
        match (&mut kind, key) {
            (SurfaceKind::FlatInclined { slope, .. }, "slope") => *slope = num(value)?,
            (SurfaceKind::FlatInclined { offset, .. }, "offset") => *offset = num(value)?,
            (SurfaceKind::Sinusoidal { amplitude, .. }, "amplitude") => *amplitude = num(value)?,
            (SurfaceKind::Sinusoidal { wavelength, .. }, "wavelength") => *wavelength = num(value)?,
            (SurfaceKind::PiecewiseLinear { points }, "points") => {
                *points = value
                    .split(',')
                    .map(|pair| {
                        let (x, h) = pair
                            .split_once(':')
                            .ok_or_else(|| Error::Config(format!("points: expected x:h pairs, got {pair:?}")))?;
                        Ok((num(x)?, num(h)?))
                    })
                    .collect::<Result<_>>()?;
            }
            _ => {
                return Err(Error::Config(format!(
                    "{key} does not apply to the configured surface (set `surface` first)"
                )))
            }
        }
        self.surface = Surface::new(kind)?;
        self.surface.lateral_offset = offset;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("link1", self.geometry.l1),
            ("link2", self.geometry.l2),
            ("delta", self.delta),
            ("patch_size", self.sensor.patch_size),
            ("gain", self.sensor.gain),
            ("depth_saturation", self.sensor.depth_saturation),
            ("joint_limit", self.limits.max),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.sensor.crown_depth < 0.0 || self.sensor.noise_sigma < 0.0 {
            return Err(Error::Config("crown_depth and noise_sigma must be non-negative".into()));
        }
        if !self.drift.is_finite() || !self.home_theta3.is_finite() || !self.retract_angle.is_finite() {
            return Err(Error::Config("drift and arm angles must be finite".into()));
        }
        ContactBand::new(self.band.cr_min, self.band.cr_max)?;
        Ok(())
    }

    /// Resolved configuration in the same `key = value` syntax.
    pub fn to_kv_string(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put("link1", format!("{:?}", self.geometry.l1));
        put("link2", format!("{:?}", self.geometry.l2));
        put("base_x", format!("{:?}", self.geometry.base[0]));
        put("base_y", format!("{:?}", self.geometry.base[1]));
        put("joint_limit", format!("{:?}", self.limits.max));
        put("home_theta3", format!("{:?}", self.home_theta3));
        put("retract_angle", format!("{:?}", self.retract_angle));
        match self.surface.kind() {
            SurfaceKind::FlatInclined { slope, offset } => {
                put("surface", "flat".into());
                put("slope", format!("{slope:?}"));
                put("offset", format!("{offset:?}"));
            }
            SurfaceKind::Sinusoidal {
                amplitude,
                wavelength,
            } => {
                put("surface", "sinusoidal".into());
                put("amplitude", format!("{amplitude:?}"));
                put("wavelength", format!("{wavelength:?}"));
            }
            SurfaceKind::PiecewiseLinear { points } => {
                put("surface", "piecewise".into());
                let pts: Vec<String> = points.iter().map(|(x, h)| format!("{x:?}:{h:?}")).collect();
                put("points", pts.join(","));
            }
        }
        put("lateral_offset", format!("{:?}", self.surface.lateral_offset));
        put("drift", format!("{:?}", self.drift));
        put("patch_size", format!("{:?}", self.sensor.patch_size));
        put("crown_depth", format!("{:?}", self.sensor.crown_depth));
        put("gain", format!("{:?}", self.sensor.gain));
        put("depth_saturation", format!("{:?}", self.sensor.depth_saturation));
        put("background_level", format!("{:?}", self.sensor.background_level));
        put("noise_sigma", format!("{:?}", self.sensor.noise_sigma));
        put("edge_falloff", format!("{:?}", self.sensor.edge_falloff));
        put("tau", self.tau.to_string());
        put("delta", format!("{:?}", self.delta));
        put("cr_min", format!("{:?}", self.band.cr_min));
        put("cr_max", format!("{:?}", self.band.cr_max));
        put("seed", self.seed.to_string());
        put("reset_after", self.reset_after.to_string());
        put("reset_spread", self.reset_spread.to_string());
        s
    }

    /// First 8 bytes (little-endian) of the SHA-256 of the resolved config.
    pub fn hash(&self) -> u64 {
        let digest = Sha256::digest(self.to_kv_string().as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
    }
}

/// Splits `key = value` lines, dropping blanks and `#` comments.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key = value", lineno + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Side information produced by one environment step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub clamped3: bool,
    pub clamped4: bool,
    pub contact_rate: ContactRate,
    /// The environment relocated to a near-contact pose after this action.
    pub reset: bool,
}

/// Deterministic arm + surface + sensor simulation.
#[derive(Clone, Debug)]
pub struct Env {
    config: EnvConfig,
    joints: JointConfig,
    surface: Surface,
    background: TactileImage,
    rng: Xoshiro256PlusPlus,
    state: State,
    contact_rate: ContactRate,
    zero_streak: u32,
}

impl Env {
    /// Builds the environment, captures the background from the retracted
    /// pose and places the sensor near the contact band.
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        let rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
        let surface = config.surface.clone();
        let retract = level_joints(config.home_theta3 + config.retract_angle);
        let mut env = Self {
            joints: retract,
            surface,
            background: TactileImage::filled(0),
            rng,
            state: State {
                image: TactileImage::filled(0),
                joints: retract,
            },
            contact_rate: ContactRate::ZERO,
            zero_streak: 0,
            config,
        };
        env.background = capture_background(&mut env)?;
        env.joints = env.near_contact_joints()?;
        env.observe();
        Ok(env)
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &State {
        &self.state
    }

    pub fn contact_rate(&self) -> ContactRate {
        self.contact_rate
    }

    pub fn background(&self) -> &TactileImage {
        &self.background
    }

    pub fn joints(&self) -> &JointConfig {
        &self.joints
    }

    pub fn surface(&self) -> &Surface {
        &self.surface
    }

    pub fn pose(&self) -> SensorPose {
        forward_kinematics(&self.joints, &self.config.geometry)
    }

    pub fn set_drift(&mut self, drift: f64) {
        self.config.drift = drift;
    }

    pub fn set_reset_after(&mut self, steps: u32) {
        self.config.reset_after = steps;
        self.zero_streak = 0;
    }

    /// Moves the joints directly (no action semantics) and re-renders.
    pub fn set_joints(&mut self, joints: JointConfig) {
        self.joints = joints;
        self.zero_streak = 0;
        self.observe();
    }

    /// Pipeline ContactRate of an arbitrary preprocessed frame.
    pub fn rate_of(&self, image: &TactileImage) -> ContactRate {
        frame_contact_rate(image, &self.background, self.config.tau)
    }

    pub fn step(&mut self, a: ActionId) -> (State, StepRecord) {
        let outcome = apply_action(&self.joints, a, self.config.delta, &self.config.limits);
        self.joints = outcome.joints;
        self.surface.lateral_offset += self.config.drift;
        self.observe();

        if self.contact_rate.value() == 0.0 {
            self.zero_streak += 1;
        } else {
            self.zero_streak = 0;
        }
        let mut reset = false;
        if self.config.reset_after > 0 && self.zero_streak >= self.config.reset_after {
            // a failed seek leaves the arm where it is; the next streak retries
            if let Ok(joints) = self.near_contact_joints() {
                self.joints = joints;
                self.observe();
                reset = true;
            }
            self.zero_streak = 0;
        }
        let record = StepRecord {
            clamped3: outcome.clamped3,
            clamped4: outcome.clamped4,
            contact_rate: self.contact_rate,
            reset,
        };
        (self.state.clone(), record)
    }

    /// Probe for action classification: a frozen copy of this environment
    /// placed at the centre of the contact band with drift disabled.
    pub fn action_probe(&self) -> Result<EnvProbe> {
        let mut env = self.clone();
        env.config.drift = 0.0;
        env.config.reset_after = 0;
        let theta3 = env
            .seek_level_theta3(env.config.band.ideal())
            .map_err(|e| Error::Classification(format!("no in-contact probe pose: {e}")))?;
        env.set_joints(level_joints(theta3));
        let reference = env.contact_rate;
        Ok(EnvProbe { env, reference })
    }

    pub fn classify_actions(&self, epsilon: f64) -> Result<ActionClasses> {
        classify_actions(&mut self.action_probe()?, epsilon)
    }

    fn observe(&mut self) {
        let pose = self.pose();
        let raw = render_tactile(&pose, &self.surface, &self.config.sensor, &mut self.rng);
        let image = preprocess(&raw).expect("renderer emits sensor-sized frames");
        self.contact_rate = frame_contact_rate(&image, &self.background, self.config.tau);
        self.state = State {
            image,
            joints: self.joints,
        };
    }

    fn near_contact_joints(&mut self) -> Result<JointConfig> {
        let centre = self.seek_level_theta3(self.config.band.ideal())?;
        let spread = self.config.reset_spread as i64;
        let k = self.rng.random_range(-spread..=spread);
        let theta3 = centre + k as f64 * self.config.delta;
        Ok(level_joints(theta3))
    }

    fn clean_rate(&self, theta3: f64) -> ContactRate {
        let pose = forward_kinematics(&level_joints(theta3), &self.config.geometry);
        let model = self.config.sensor.noiseless();
        let mut unused = Xoshiro256PlusPlus::seed_from_u64(0);
        let image = preprocess(&render_tactile(&pose, &self.surface, &model, &mut unused)).expect("sensor-sized frame");
        let bg = TactileImage::filled(model.background_level.round().clamp(0.0, 255.0) as u8);
        frame_contact_rate(&image, &bg, self.config.tau)
    }

    /// Joint-3 angle (face level) whose noiseless ContactRate first reaches
    /// `target` when lowering the sensor.
    fn seek_level_theta3(&self, target: f64) -> Result<f64> {
        let home = self.config.home_theta3;
        // lowering joint 3 presses the sensor in only when link 1 points
        // away from the base; handle both senses
        let (mut deep, mut shallow) = if self.clean_rate(home - SEEK_SPAN).value() >= target {
            (home - SEEK_SPAN, home + SEEK_SPAN)
        } else {
            (home + SEEK_SPAN, home - SEEK_SPAN)
        };
        if self.clean_rate(deep).value() < target || self.clean_rate(shallow).value() >= target {
            return Err(Error::Config(format!(
                "surface not reachable around home_theta3 = {home} (target ContactRate {target})"
            )));
        }
        for _ in 0..SEEK_ITERATIONS {
            let mid = 0.5 * (deep + shallow);
            if self.clean_rate(mid).value() >= target {
                deep = mid;
            } else {
                shallow = mid;
            }
        }
        Ok(deep)
    }
}

fn level_joints(theta3: f64) -> JointConfig {
    JointConfig::at(theta3, FACE_DOWN - theta3)
}

impl TactileSensor for Env {
    fn read_frame(&mut self) -> RawImage {
        render_tactile(&self.pose(), &self.surface, &self.config.sensor, &mut self.rng)
    }

    fn in_contact(&self) -> bool {
        max_penetration(&self.pose(), &self.surface, &self.config.sensor) > 0.0
    }
}

/// Frozen in-band reference pose used to measure per-action ContactRate changes.
#[derive(Clone, Debug)]
pub struct EnvProbe {
    env: Env,
    reference: ContactRate,
}

impl EnvProbe {
    pub fn env(&self) -> &Env {
        &self.env
    }
}

impl ContactProbe for EnvProbe {
    fn reference_rate(&mut self) -> Result<ContactRate> {
        Ok(self.reference)
    }

    fn rate_after(&mut self, a: ActionId) -> Result<ContactRate> {
        let mut env = self.env.clone();
        Ok(env.step(a).1.contact_rate)
    }
}
