use rand::seq::index::sample;
use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::{NetInput, QNetwork};
use crate::error::Result;
use crate::rl_core::{ActionId, State};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-6;
/// Denominator floor of the relative error. Gradients below this size are
/// compared in absolute terms, since the finite-difference roundoff
/// (about `1e-16·|Q|/h`) would dominate a purely relative measure.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct TensorCheck {
    /// e.g. `conv1.weight`
    pub tensor: String,
    pub checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude among the checked entries.
    pub max_abs_gradient: f64,
}

pub fn gradient_check(
    net: &QNetwork,
    s: &State,
    a: ActionId,
    y: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let input = NetInput::from_state(net.arch(), s)?;
    gradient_check_input(net, &input, a.index(), y, samples_per_tensor, seed)
}

/// Compares the analytic gradient of `(y − Q(s,a))²` against central
/// differences on up to `samples_per_tensor` entries of every weight and
/// bias tensor.
pub fn gradient_check_input(
    net: &QNetwork,
    input: &NetInput,
    a: usize,
    y: f64,
    samples_per_tensor: usize,
    seed: u64,
) -> Result<GradCheckReport> {
    let mut probe = net.clone();
    let mut ws = probe.workspace()?;
    probe.gradient_input(&mut ws, input, a, y)?;
    let grad = ws.gradient().clone();
    let layers = probe.layers().to_vec();
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);

    let mut tensors = Vec::new();
    let mut max_abs_gradient: f64 = 0.0;
    for spec in &layers {
        for (suffix, range) in [("weight", spec.weights()), ("bias", spec.biases())] {
            let len = range.len();
            let picks: Vec<usize> = if len <= samples_per_tensor {
                (0..len).collect()
            } else {
                sample(&mut rng, len, samples_per_tensor).into_vec()
            };
            let mut worst: f64 = 0.0;
            for &k in &picks {
                let idx = range.start + k;
                let analytic = grad.get(&layers, idx);
                let orig = probe.params()[idx];
                probe.params_mut()[idx] = orig + FD_STEP;
                let q_plus = probe.forward_input(&mut ws, input)?[a];
                probe.params_mut()[idx] = orig - FD_STEP;
                let q_minus = probe.forward_input(&mut ws, input)?[a];
                probe.params_mut()[idx] = orig;
                // (L+ − L−)/2h with L± = (y − Q±)², factored so the squares
                // do not cancel
                let numeric = (q_minus - q_plus) * (2.0 * y - q_plus - q_minus) / (2.0 * FD_STEP);
                let denom = analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
                worst = worst.max((analytic - numeric).abs() / denom);
                max_abs_gradient = max_abs_gradient.max(analytic.abs());
            }
            tensors.push(TensorCheck {
                tensor: format!("{}.{}", spec.name, suffix),
                checked: picks.len(),
                max_rel_error: worst,
            });
        }
    }
    let max_rel_error = tensors.iter().map(|t| t.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        tensors,
        max_rel_error,
        max_abs_gradient,
    })
}
