//! Dense numeric kernels. Every reduction uses a fixed accumulation order so
//! results do not depend on how the compiler vectorizes the loops.

const LANES: usize = 8;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0; LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..LANES {
            acc[j] += x[j] * y[j];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

/// `y += alpha·x`
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub(crate) fn sum_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub(crate) fn relu_in_place(a: &mut [f64]) {
    for v in a {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries whose activation was clipped by ReLU.
pub(crate) fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, &a) in grad.iter_mut().zip(activation) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvDims {
    pub in_c: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub filters: usize,
    pub k: usize,
}

impl ConvDims {
    pub fn out_h(&self) -> usize {
        self.in_h + 1 - self.k
    }

    pub fn out_w(&self) -> usize {
        self.in_w + 1 - self.k
    }
}

/// Valid (unpadded) stride-1 convolution; `out` is `[filters][out_h][out_w]`.
pub(crate) fn conv_forward(d: ConvDims, input: &[f64], weights: &[f64], bias: &[f64], out: &mut [f64]) {
    let (oh, ow, k) = (d.out_h(), d.out_w(), d.k);
    let plane = oh * ow;
    for f in 0..d.filters {
        let out_f = &mut out[f * plane..(f + 1) * plane];
        out_f.fill(bias[f]);
        for c in 0..d.in_c {
            let in_c = &input[c * d.in_h * d.in_w..(c + 1) * d.in_h * d.in_w];
            for ky in 0..k {
                for kx in 0..k {
                    let w = weights[((f * d.in_c + c) * k + ky) * k + kx];
                    for y in 0..oh {
                        let src = &in_c[(y + ky) * d.in_w + kx..][..ow];
                        axpy(w, src, &mut out_f[y * ow..(y + 1) * ow]);
                    }
                }
            }
        }
    }
}

/// Accumulates weight and bias gradients from `grad_out`, and the input
/// gradient when `grad_in` is given (it must be zeroed by the caller).
pub(crate) fn conv_backward(
    d: ConvDims,
    input: &[f64],
    weights: &[f64],
    grad_out: &[f64],
    grad_w: &mut [f64],
    grad_b: &mut [f64],
    mut grad_in: Option<&mut [f64]>,
) {
    let (oh, ow, k) = (d.out_h(), d.out_w(), d.k);
    let plane = oh * ow;
    let in_plane = d.in_h * d.in_w;
    for f in 0..d.filters {
        let g_f = &grad_out[f * plane..(f + 1) * plane];
        grad_b[f] = g_f.iter().sum();
        for c in 0..d.in_c {
            let in_c = &input[c * in_plane..(c + 1) * in_plane];
            for ky in 0..k {
                for kx in 0..k {
                    let wi = ((f * d.in_c + c) * k + ky) * k + kx;
                    let mut acc = 0.0;
                    for y in 0..oh {
                        acc += dot(&g_f[y * ow..(y + 1) * ow], &in_c[(y + ky) * d.in_w + kx..][..ow]);
                    }
                    grad_w[wi] = acc;
                    if let Some(gi) = grad_in.as_deref_mut() {
                        let w = weights[wi];
                        let gi_c = &mut gi[c * in_plane..(c + 1) * in_plane];
                        for y in 0..oh {
                            axpy(w, &g_f[y * ow..(y + 1) * ow], &mut gi_c[(y + ky) * d.in_w + kx..][..ow]);
                        }
                    }
                }
            }
        }
    }
}

/// 2×2 stride-2 max pooling (odd trailing rows/columns are dropped). Ties
/// go to the first element in row-major window order.
pub(crate) fn pool_forward(c: usize, h: usize, w: usize, input: &[f64], out: &mut [f64], argmax: &mut [u32]) {
    let (ph, pw) = (h / 2, w / 2);
    for ch in 0..c {
        for y in 0..ph {
            for x in 0..pw {
                let base = ch * h * w + 2 * y * w + 2 * x;
                let mut best = base;
                for idx in [base + 1, base + w, base + w + 1] {
                    if input[idx] > input[best] {
                        best = idx;
                    }
                }
                let o = (ch * ph + y) * pw + x;
                out[o] = input[best];
                argmax[o] = best as u32;
            }
        }
    }
}

pub(crate) fn pool_backward(grad_out: &[f64], argmax: &[u32], grad_in: &mut [f64]) {
    grad_in.fill(0.0);
    for (g, &i) in grad_out.iter().zip(argmax) {
        grad_in[i as usize] += g;
    }
}

/// `out[o] = bias[o] + W[o]·x` with `W` row-major `[out][in]`.
pub(crate) fn dense_forward(weights: &[f64], bias: &[f64], x: &[f64], out: &mut [f64]) {
    let n_in = x.len();
    for (o, y) in out.iter_mut().enumerate() {
        *y = bias[o] + dot(&weights[o * n_in..(o + 1) * n_in], x);
    }
}

/// `grad_in = Wᵀ·grad_out`, skipping rows with zero gradient.
pub(crate) fn dense_backward_input(weights: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
    let n_in = grad_in.len();
    grad_in.fill(0.0);
    for (o, &g) in grad_out.iter().enumerate() {
        if g != 0.0 {
            axpy(g, &weights[o * n_in..(o + 1) * n_in], grad_in);
        }
    }
}
