//! Synthetic tactile frames.
//!
//! The sensor face is a rectangular elastomer patch of `patch_size ×
//! patch_size·48/64` centred on the tip and perpendicular to the sensor
//! direction. The gel is slightly domed: a point at normalized patch
//! coordinates `(p, q) ∈ [-1, 1]²` sits `crown_depth·(p² + q²)/2` behind the
//! apex. Penetration at a pixel is the height of the surface above the gel
//! point; pixel brightness rises linearly with penetration up to
//! `depth_saturation`. Because the dome flattens progressively as it is
//! pressed, the contact region grows monotonically with depth.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::tactile_image::{RawImage, RAW_CHANNELS, RAW_HEIGHT, RAW_WIDTH, TACTILE_HEIGHT, TACTILE_WIDTH};

use super::kinematics::SensorPose;
use super::surface::Surface;

#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    /// Physical width of the patch (m).
    pub patch_size: f64,
    /// Recess of the patch corners behind the apex (m).
    pub crown_depth: f64,
    /// Intensity increase per meter of penetration.
    pub gain: f64,
    /// Penetration beyond which brightness stops rising (m).
    pub depth_saturation: f64,
    pub background_level: f64,
    /// Per-channel offsets added to the background; they average to zero so
    /// the grayscale background equals `background_level`.
    pub channel_tint: [f64; 3],
    /// Standard deviation of per-channel pixel noise.
    pub noise_sigma: f64,
    /// Relative gain loss at the patch corners (0 disables).
    pub edge_falloff: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            patch_size: 0.02,
            crown_depth: 0.002,
            gain: 3.0e6,
            depth_saturation: 5.0e-5,
            background_level: 40.0,
            channel_tint: [4.0, 0.0, -4.0],
            noise_sigma: 5.0,
            edge_falloff: 0.0,
        }
    }
}

impl SensorModel {
    pub fn patch_height(&self) -> f64 {
        self.patch_size * TACTILE_HEIGHT as f64 / TACTILE_WIDTH as f64
    }

    /// Same model without pixel noise.
    pub fn noiseless(&self) -> Self {
        Self {
            noise_sigma: 0.0,
            ..self.clone()
        }
    }
}

// Visits every raw pixel with its penetration depth (m) and squared normalized
// radius. When `exact` is false, pixels that provably do not touch the surface
// are reported as `None` without evaluating the surface there.
fn for_each_penetration(
    pose: &SensorPose,
    surface: &Surface,
    model: &SensorModel,
    exact: bool,
    mut f: impl FnMut(usize, Option<f64>, f64),
) {
    let (so, co) = pose.orientation.sin_cos();
    let normal = [co, so];
    let tangent = [-so, co];
    let lipschitz = surface.lipschitz();
    struct Column {
        u: f64,
        p2: f64,
        ceiling: f64,
    }
    let cols: Vec<Column> = (0..RAW_WIDTH)
        .map(|c| {
            let p = 2.0 * (c as f64 + 0.5) / RAW_WIDTH as f64 - 1.0;
            let u = 0.5 * p * model.patch_size;
            // the recess shifts gel points sideways by at most this much
            let max_shift = model.crown_depth * 0.5 * (p * p + 1.0) * normal[0].abs();
            let ceiling = surface.height(pose.tip[0] + u * tangent[0]) + lipschitz * max_shift;
            Column { u, p2: p * p, ceiling }
        })
        .collect();
    for r in 0..RAW_HEIGHT {
        let q = 2.0 * (r as f64 + 0.5) / RAW_HEIGHT as f64 - 1.0;
        for (c, col) in cols.iter().enumerate() {
            let rho2 = 0.5 * (col.p2 + q * q);
            let recess = model.crown_depth * rho2;
            let gy = pose.tip[1] + col.u * tangent[1] - recess * normal[1];
            let pen = if !exact && col.ceiling <= gy {
                None
            } else {
                let gx = pose.tip[0] + col.u * tangent[0] - recess * normal[0];
                Some(surface.height(gx) - gy)
            };
            f(r * RAW_WIDTH + c, pen, rho2);
        }
    }
}

/// Renders one raw RGB frame; noise is drawn from `rng`.
pub fn render_tactile<R: Rng + ?Sized>(pose: &SensorPose, surface: &Surface, model: &SensorModel, rng: &mut R) -> RawImage {
    let mut raw = RawImage::filled(0);
    let data = raw.data_mut();
    let sigma = model.noise_sigma;
    for_each_penetration(pose, surface, model, false, |i, pen, rho2| {
        let signal = match pen {
            Some(pen) if pen > 0.0 => {
                let sensitivity = (1.0 - model.edge_falloff * rho2).max(0.0);
                model.background_level + model.gain * sensitivity * pen.min(model.depth_saturation)
            }
            _ => model.background_level,
        };
        let px = &mut data[i * RAW_CHANNELS..(i + 1) * RAW_CHANNELS];
        for (ch, out) in px.iter_mut().enumerate() {
            let mut v = signal + model.channel_tint[ch];
            if sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                v += sigma * z;
            }
            // clamp first: for v >= 0, truncating v + 0.5 equals round()
            *out = (v.clamp(0.0, 255.0) + 0.5) as u8;
        }
    });
    raw
}

/// Deepest penetration over the patch (m); positive means contact.
pub fn max_penetration(pose: &SensorPose, surface: &Surface, model: &SensorModel) -> f64 {
    let mut max = f64::NEG_INFINITY;
    for_each_penetration(pose, surface, model, true, |_, pen, _| {
        if let Some(pen) = pen {
            max = max.max(pen);
        }
    });
    max
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tactile_image::{frame_contact_rate, preprocess, TactileImage};
    use rand::SeedableRng;
    use rand_xoshiro::Xoshiro256PlusPlus;
    use std::f64::consts::FRAC_PI_2;

    fn pose_at(height: f64) -> SensorPose {
        SensorPose {
            tip: [0.0, height],
            orientation: -FRAC_PI_2,
        }
    }

    fn background(model: &SensorModel, seed: u64) -> TactileImage {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        preprocess(&render_tactile(&pose_at(0.05), &Surface::flat(0.0, 0.0), model, &mut rng)).unwrap()
    }

    #[test]
    fn far_pose_is_background() {
        let model = SensorModel::default();
        let bg = background(&model, 1);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let frame = preprocess(&render_tactile(&pose_at(0.01), &Surface::flat(0.0, 0.0), &model, &mut rng)).unwrap();
        assert_eq!(frame_contact_rate(&frame, &bg, 20).value(), 0.0);
        assert!(frame.pixels().iter().all(|&p| p.abs_diff(40) <= 2));
    }

    #[test]
    fn saturating_parallel_contact_is_full() {
        let model = SensorModel::default();
        let bg = background(&model, 1);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(3);
        let depth = model.crown_depth + model.depth_saturation;
        let frame = preprocess(&render_tactile(&pose_at(-depth), &Surface::flat(0.0, 0.0), &model, &mut rng)).unwrap();
        assert_eq!(frame_contact_rate(&frame, &bg, 20).value(), 1000.0);
    }

    #[test]
    fn same_seed_same_frame() {
        let model = SensorModel::default();
        let render = |seed| {
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
            render_tactile(&pose_at(-1e-4), &Surface::flat(0.0, 0.0), &model, &mut rng)
        };
        assert_eq!(render(9), render(9));
        assert_ne!(render(9), render(10));
    }

    #[test]
    fn penetration_matches_geometry() {
        let model = SensorModel::default();
        let max = max_penetration(&pose_at(-3e-4), &Surface::flat(0.0, 0.0), &model);
        // apex pixel sits a fraction of a pixel off the patch centre
        assert!((max - 3e-4).abs() < 1e-7, "{max}");
    }

    #[test]
    fn skipping_far_pixels_does_not_change_frames() {
        // brute-force reference: evaluate every pixel exactly
        let model = SensorModel::default().noiseless();
        let surface = Surface::new(crate::sim_world::SurfaceKind::Sinusoidal {
            amplitude: 0.002,
            wavelength: 0.1,
        })
        .unwrap();
        for (h, tilt) in [(0.0005, 0.0), (-0.0003, 0.05), (-0.001, -0.2)] {
            let pose = SensorPose {
                tip: [0.013, h],
                orientation: -FRAC_PI_2 + tilt,
            };
            let mut reference = RawImage::filled(0);
            for_each_penetration(&pose, &surface, &model, true, |i, pen, _| {
                let pen = pen.unwrap();
                let v = model.background_level + model.gain * pen.clamp(0.0, model.depth_saturation);
                for ch in 0..3 {
                    reference.data_mut()[i * 3 + ch] = (v + model.channel_tint[ch]).round().clamp(0.0, 255.0) as u8;
                }
            });
            let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
            assert_eq!(render_tactile(&pose, &surface, &model, &mut rng), reference);
        }
    }

    #[test]
    fn edge_falloff_dims_corners() {
        let model = SensorModel {
            edge_falloff: 0.5,
            noise_sigma: 0.0,
            ..SensorModel::default()
        };
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(0);
        let depth = model.crown_depth + model.depth_saturation;
        let raw = render_tactile(&pose_at(-depth), &Surface::flat(0.0, 0.0), &model, &mut rng);
        let centre = raw.pixel(320, 240)[1];
        let corner = raw.pixel(0, 0)[1];
        assert!(corner < centre);
    }
}
