use std::f64::consts::TAU;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum SurfaceKind {
    /// `h = slope·x + offset`
    FlatInclined { slope: f64, offset: f64 },
    /// `h = amplitude·sin(2πx / wavelength)`
    Sinusoidal { amplitude: f64, wavelength: f64 },
    /// Linear interpolation through `(x, h)` points sorted by x, held
    /// constant beyond both ends.
    PiecewiseLinear { points: Vec<(f64, f64)> },
}

/// Height profile of the followed surface along the lateral axis. The whole
/// profile can be translated sideways by `lateral_offset`.
#[derive(Clone, Debug, PartialEq)]
pub struct Surface {
    kind: SurfaceKind,
    pub lateral_offset: f64,
}

impl Surface {
    pub fn new(kind: SurfaceKind) -> Result<Self> {
        match &kind {
            SurfaceKind::Sinusoidal { wavelength, .. } if !(*wavelength > 0.0) => {
                return Err(Error::Config(format!("wavelength must be positive, got {wavelength}")));
            }
            SurfaceKind::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return Err(Error::Config("piecewise surface needs at least one point".into()));
                }
                if points.windows(2).any(|w| !(w[0].0 < w[1].0)) {
                    return Err(Error::Config("piecewise surface points must be strictly sorted by x".into()));
                }
            }
            _ => {}
        }
        Ok(Self {
            kind,
            lateral_offset: 0.0,
        })
    }

    pub fn flat(slope: f64, offset: f64) -> Self {
        Self {
            kind: SurfaceKind::FlatInclined { slope, offset },
            lateral_offset: 0.0,
        }
    }

    pub fn kind(&self) -> &SurfaceKind {
        &self.kind
    }

    pub fn height(&self, x: f64) -> f64 {
        surface_height(self, x)
    }

    /// Upper bound on `|h(a) - h(b)| / |a - b|`.
    pub fn lipschitz(&self) -> f64 {
        match &self.kind {
            SurfaceKind::FlatInclined { slope, .. } => slope.abs(),
            SurfaceKind::Sinusoidal {
                amplitude,
                wavelength,
            } => TAU * amplitude.abs() / wavelength,
            SurfaceKind::PiecewiseLinear { points } => points
                .windows(2)
                .map(|w| ((w[1].1 - w[0].1) / (w[1].0 - w[0].0)).abs())
                .fold(0.0, f64::max),
        }
    }
}

pub fn surface_height(surface: &Surface, x: f64) -> f64 {
    let x = x - surface.lateral_offset;
    match &surface.kind {
        SurfaceKind::FlatInclined { slope, offset } => slope * x + offset,
        SurfaceKind::Sinusoidal {
            amplitude,
            wavelength,
        } => amplitude * (TAU * x / wavelength).sin(),
        SurfaceKind::PiecewiseLinear { points } => interpolate(points, x),
    }
}

fn interpolate(points: &[(f64, f64)], x: f64) -> f64 {
    let first = points[0];
    let last = points[points.len() - 1];
    if x <= first.0 {
        return first.1;
    }
    if x >= last.0 {
        return last.1;
    }
    // first index with p.x > x; guaranteed in 1..len by the checks above
    let i = points.partition_point(|p| p.0 <= x);
    let (x0, h0) = points[i - 1];
    let (x1, h1) = points[i];
    h0 + (h1 - h0) * (x - x0) / (x1 - x0)
}
