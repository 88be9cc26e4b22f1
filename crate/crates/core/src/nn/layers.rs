//! Layer primitives with explicit forward and reverse passes.
//!
//! Parameters are stored as `f32` (the checkpoint format), all arithmetic
//! runs in `f64`. Convolutions gather input patches into a contiguous
//! im2col buffer once per output pixel and share it across filters, in both
//! directions; the dot-product kernel splits its accumulator four ways to
//! break the floating-point dependency chain while keeping a fixed,
//! deterministic summation order.

/// Variance epsilon of the non-learnable layer normalization.
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    /// Normalizes the whole activation vector of one sample to mean 0 and
    /// variance 1. Carries no learnable parameters.
    LayerNorm { size: usize },
    LeakyRelu { alpha: f64, size: usize },
    Dense { in_dim: usize, out_dim: usize },
    Abs { size: usize },
}

/// Per-layer scratch saved by the forward pass for the reverse pass.
#[derive(Debug, Clone, Default)]
pub struct LayerAux {
    /// Conv: im2col patch matrix, `out_h*out_w` rows of `in_ch*k*k`.
    pub patches: Vec<f64>,
    /// LayerNorm: (mean, inv_std) of the input.
    pub mean: f64,
    pub inv_std: f64,
}

impl Layer {
    pub fn in_len(&self) -> usize {
        match *self {
            Layer::Conv {
                in_ch, in_h, in_w, ..
            } => in_ch * in_h * in_w,
            Layer::LayerNorm { size } | Layer::LeakyRelu { size, .. } | Layer::Abs { size } => size,
            Layer::Dense { in_dim, .. } => in_dim,
        }
    }

    pub fn out_len(&self) -> usize {
        match *self {
            Layer::Conv {
                out_ch,
                out_h,
                out_w,
                ..
            } => out_ch * out_h * out_w,
            Layer::LayerNorm { size } | Layer::LeakyRelu { size, .. } | Layer::Abs { size } => size,
            Layer::Dense { out_dim, .. } => out_dim,
        }
    }

    /// Learnable parameter count: weights then biases for conv/dense, zero
    /// for normalization and activations.
    pub fn param_count(&self) -> usize {
        match *self {
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel + out_ch,
            Layer::Dense { in_dim, out_dim } => out_dim * in_dim + out_dim,
            _ => 0,
        }
    }

    /// Fan-in used for He-uniform weight initialization.
    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Conv {
                in_ch, kernel, ..
            } => in_ch * kernel * kernel,
            Layer::Dense { in_dim, .. } => in_dim,
            _ => 0,
        }
    }

    pub fn forward(&self, params: &[f32], input: &[f64], output: &mut [f64], aux: &mut LayerAux) {
        debug_assert_eq!(input.len(), self.in_len());
        debug_assert_eq!(output.len(), self.out_len());
        debug_assert_eq!(params.len(), self.param_count());
        match *self {
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_h,
                in_w,
                out_h,
                out_w,
            } => {
                let cols = in_ch * kernel * kernel;
                let pixels = out_h * out_w;
                aux.patches.clear();
                aux.patches.resize(pixels * cols, 0.0);
                gather_patches(
                    input,
                    &mut aux.patches,
                    in_ch,
                    kernel,
                    stride,
                    in_h,
                    in_w,
                    out_h,
                    out_w,
                );
                let biases = &params[out_ch * cols..];
                for oc in 0..out_ch {
                    let w_row = &params[oc * cols..(oc + 1) * cols];
                    let out_row = &mut output[oc * pixels..(oc + 1) * pixels];
                    for (pix, out) in out_row.iter_mut().enumerate() {
                        let patch = &aux.patches[pix * cols..(pix + 1) * cols];
                        *out = biases[oc] as f64 + dot(w_row, patch);
                    }
                }
            }
            Layer::LayerNorm { size } => {
                let n = size as f64;
                let mean = input.iter().sum::<f64>() / n;
                let var = input.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
                let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                aux.mean = mean;
                aux.inv_std = inv_std;
                for (out, x) in output.iter_mut().zip(input) {
                    *out = (x - mean) * inv_std;
                }
            }
            Layer::LeakyRelu { alpha, .. } => {
                for (out, &x) in output.iter_mut().zip(input) {
                    *out = if x >= 0.0 { x } else { alpha * x };
                }
            }
            Layer::Dense { in_dim, out_dim } => {
                let biases = &params[out_dim * in_dim..];
                for o in 0..out_dim {
                    let w_row = &params[o * in_dim..(o + 1) * in_dim];
                    output[o] = biases[o] as f64 + dot(w_row, input);
                }
            }
            Layer::Abs { .. } => {
                for (out, &x) in output.iter_mut().zip(input) {
                    *out = x.abs();
                }
            }
        }
    }

    /// Accumulates parameter gradients into `grad_params` and writes the
    /// input gradient into `grad_in` (overwritten).
    #[allow(clippy::too_many_arguments)]
    pub fn backward(
        &self,
        params: &[f32],
        input: &[f64],
        aux: &LayerAux,
        grad_out: &[f64],
        grad_in: &mut [f64],
        grad_params: &mut [f64],
    ) {
        debug_assert_eq!(grad_out.len(), self.out_len());
        debug_assert_eq!(grad_in.len(), self.in_len());
        match *self {
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
                in_h: _,
                in_w,
                out_h,
                out_w,
            } => {
                let cols = in_ch * kernel * kernel;
                let pixels = out_h * out_w;
                let (gw, gb) = grad_params.split_at_mut(out_ch * cols);
                grad_in.fill(0.0);
                let mut gpatch = vec![0.0f64; cols];
                for pix in 0..pixels {
                    let patch = &aux.patches[pix * cols..(pix + 1) * cols];
                    gpatch.fill(0.0);
                    for oc in 0..out_ch {
                        let g = grad_out[oc * pixels + pix];
                        if g == 0.0 {
                            continue;
                        }
                        gb[oc] += g;
                        let w_row = &params[oc * cols..(oc + 1) * cols];
                        let gw_row = &mut gw[oc * cols..(oc + 1) * cols];
                        for i in 0..cols {
                            gw_row[i] += g * patch[i];
                            gpatch[i] += g * w_row[i] as f64;
                        }
                    }
                    scatter_patch_grad(
                        &gpatch, grad_in, pix, in_ch, kernel, stride, in_w, out_w,
                    );
                }
            }
            Layer::LayerNorm { size } => {
                let n = size as f64;
                let inv_std = aux.inv_std;
                let mean = aux.mean;
                let mut g_mean = 0.0;
                let mut gx_mean = 0.0;
                for (&g, &x) in grad_out.iter().zip(input) {
                    let xhat = (x - mean) * inv_std;
                    g_mean += g;
                    gx_mean += g * xhat;
                }
                g_mean /= n;
                gx_mean /= n;
                for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(input) {
                    let xhat = (x - mean) * inv_std;
                    *gi = inv_std * (g - g_mean - xhat * gx_mean);
                }
            }
            Layer::LeakyRelu { alpha, .. } => {
                for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(input) {
                    *gi = if x >= 0.0 { g } else { alpha * g };
                }
            }
            Layer::Dense { in_dim, out_dim } => {
                let (gw, gb) = grad_params.split_at_mut(out_dim * in_dim);
                grad_in.fill(0.0);
                for o in 0..out_dim {
                    let g = grad_out[o];
                    gb[o] += g;
                    if g == 0.0 {
                        continue;
                    }
                    let w_row = &params[o * in_dim..(o + 1) * in_dim];
                    let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                    for i in 0..in_dim {
                        gw_row[i] += g * input[i];
                        grad_in[i] += g * w_row[i] as f64;
                    }
                }
            }
            Layer::Abs { .. } => {
                // right derivative at the kink: d|x|/dx = 1 at x = 0
                for ((gi, &g), &x) in grad_in.iter_mut().zip(grad_out).zip(input) {
                    *gi = if x >= 0.0 { g } else { -g };
                }
            }
        }
    }

    /// Inputs that feed a kinked nonlinearity, for finite-difference
    /// masking. Empty for smooth layers.
    pub fn has_kink(&self) -> bool {
        matches!(self, Layer::LeakyRelu { .. } | Layer::Abs { .. })
    }
}

/// f32-weight × f64-activation dot product, four split accumulators.
fn dot(w: &[f32], x: &[f64]) -> f64 {
    debug_assert_eq!(w.len(), x.len());
    let mut acc = [0.0f64; 4];
    let chunks = w.len() / 4;
    for i in 0..chunks {
        let b = i * 4;
        acc[0] += w[b] as f64 * x[b];
        acc[1] += w[b + 1] as f64 * x[b + 1];
        acc[2] += w[b + 2] as f64 * x[b + 2];
        acc[3] += w[b + 3] as f64 * x[b + 3];
    }
    let mut sum = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..w.len() {
        sum += w[i] as f64 * x[i];
    }
    sum
}

#[allow(clippy::too_many_arguments)]
fn gather_patches(
    input: &[f64],
    patches: &mut [f64],
    in_ch: usize,
    kernel: usize,
    stride: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
) {
    let cols = in_ch * kernel * kernel;
    for oy in 0..out_h {
        for ox in 0..out_w {
            let pix = oy * out_w + ox;
            let dst = &mut patches[pix * cols..(pix + 1) * cols];
            for ic in 0..in_ch {
                let plane = &input[ic * in_h * in_w..(ic + 1) * in_h * in_w];
                for ky in 0..kernel {
                    let src = (oy * stride + ky) * in_w + ox * stride;
                    let d = ic * kernel * kernel + ky * kernel;
                    dst[d..d + kernel].copy_from_slice(&plane[src..src + kernel]);
                }
            }
        }
    }
}

/// Adds a patch gradient back onto the input grid (inverse of the gather).
#[allow(clippy::too_many_arguments)]
fn scatter_patch_grad(
    gpatch: &[f64],
    grad_in: &mut [f64],
    pix: usize,
    in_ch: usize,
    kernel: usize,
    stride: usize,
    in_w: usize,
    out_w: usize,
) {
    let in_h_w = grad_in.len() / in_ch;
    let oy = pix / out_w;
    let ox = pix % out_w;
    for ic in 0..in_ch {
        let plane = &mut grad_in[ic * in_h_w..(ic + 1) * in_h_w];
        for ky in 0..kernel {
            let dst = (oy * stride + ky) * in_w + ox * stride;
            let s = ic * kernel * kernel + ky * kernel;
            for kx in 0..kernel {
                plane[dst + kx] += gpatch[s + kx];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar objective over a layer's output with fixed random weights;
    /// differentiable everywhere so only the layer under test contributes
    /// kinks.
    fn objective(output: &[f64], coefs: &[f64]) -> f64 {
        output.iter().zip(coefs).map(|(o, c)| o * c).sum()
    }

    fn check_layer_gradients(layer: Layer, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_in = layer.in_len();
        let n_out = layer.out_len();
        let n_par = layer.param_count();
        let params: Vec<f32> = (0..n_par).map(|_| rng.gen_range(-0.5f32..0.5)).collect();
        // keep inputs away from kinks so finite differences are clean
        let input: Vec<f64> = (0..n_in)
            .map(|_| {
                let v: f64 = rng.gen_range(0.05..1.0);
                if rng.gen::<bool>() {
                    v
                } else {
                    -v
                }
            })
            .collect();
        let coefs: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut out = vec![0.0; n_out];
        let mut aux = LayerAux::default();
        layer.forward(&params, &input, &mut out, &mut aux);

        let mut grad_in = vec![0.0; n_in];
        let mut grad_params = vec![0.0; n_par];
        layer.backward(&params, &input, &aux, &coefs, &mut grad_in, &mut grad_params);

        let eps = 1e-5;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-6);

        // input gradients
        for i in 0..n_in {
            let mut plus = input.clone();
            let mut minus = input.clone();
            plus[i] += eps;
            minus[i] -= eps;
            let mut o1 = vec![0.0; n_out];
            let mut o2 = vec![0.0; n_out];
            let mut a1 = LayerAux::default();
            layer.forward(&params, &plus, &mut o1, &mut a1);
            layer.forward(&params, &minus, &mut o2, &mut a1);
            let fd = (objective(&o1, &coefs) - objective(&o2, &coefs)) / (2.0 * eps);
            assert!(
                rel(fd, grad_in[i]) < 1e-4,
                "input grad {i}: fd {fd} vs analytic {}",
                grad_in[i]
            );
        }

        // parameter gradients (exact perturbation accounting for f32 rounding)
        for p in 0..n_par {
            let mut plus = params.clone();
            let mut minus = params.clone();
            plus[p] = (params[p] as f64 + eps) as f32;
            minus[p] = (params[p] as f64 - eps) as f32;
            let actual = (plus[p] as f64 - minus[p] as f64) / 2.0;
            let mut o1 = vec![0.0; n_out];
            let mut o2 = vec![0.0; n_out];
            let mut a1 = LayerAux::default();
            layer.forward(&plus, &input, &mut o1, &mut a1);
            layer.forward(&minus, &input, &mut o2, &mut a1);
            let fd = (objective(&o1, &coefs) - objective(&o2, &coefs)) / (2.0 * actual);
            assert!(
                rel(fd, grad_params[p]) < 1e-4,
                "param grad {p}: fd {fd} vs analytic {}",
                grad_params[p]
            );
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        check_layer_gradients(
            Layer::Conv {
                in_ch: 2,
                out_ch: 3,
                kernel: 3,
                stride: 2,
                in_h: 7,
                in_w: 7,
                out_h: 3,
                out_w: 3,
            },
            11,
        );
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        check_layer_gradients(
            Layer::Dense {
                in_dim: 12,
                out_dim: 5,
            },
            13,
        );
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        check_layer_gradients(Layer::LayerNorm { size: 16 }, 17);
    }

    #[test]
    fn leaky_relu_gradients_match_finite_differences() {
        check_layer_gradients(
            Layer::LeakyRelu {
                alpha: 0.3,
                size: 16,
            },
            19,
        );
    }

    #[test]
    fn abs_gradients_match_finite_differences() {
        check_layer_gradients(Layer::Abs { size: 16 }, 23);
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let layer = Layer::LayerNorm { size: 64 };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let input: Vec<f64> = (0..64).map(|_| rng.gen_range(-4.0..9.0)).collect();
        let mut out = vec![0.0; 64];
        let mut aux = LayerAux::default();
        layer.forward(&[], &input, &mut out, &mut aux);
        let mean = out.iter().sum::<f64>() / 64.0;
        let var = out.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 64.0;
        assert!(mean.abs() < 1e-5);
        assert!((var - 1.0).abs() < 1e-5);
    }

    #[test]
    fn conv_matches_naive_reference() {
        // direct nested-loop convolution as an independent oracle
        let layer = Layer::Conv {
            in_ch: 2,
            out_ch: 2,
            kernel: 2,
            stride: 1,
            in_h: 3,
            in_w: 3,
            out_h: 2,
            out_w: 2,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params: Vec<f32> = (0..layer.param_count())
            .map(|_| rng.gen_range(-1.0f32..1.0))
            .collect();
        let input: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut out = vec![0.0; 8];
        let mut aux = LayerAux::default();
        layer.forward(&params, &input, &mut out, &mut aux);

        for oc in 0..2 {
            for oy in 0..2 {
                for ox in 0..2 {
                    let mut acc = params[16 + oc] as f64;
                    for ic in 0..2 {
                        for ky in 0..2 {
                            for kx in 0..2 {
                                let w = params[oc * 8 + ic * 4 + ky * 2 + kx] as f64;
                                let x = input[ic * 9 + (oy + ky) * 3 + (ox + kx)];
                                acc += w * x;
                            }
                        }
                    }
                    let got = out[oc * 4 + oy * 2 + ox];
                    assert!((acc - got).abs() < 1e-12, "oc {oc} oy {oy} ox {ox}");
                }
            }
        }
    }

    #[test]
    fn abs_uses_right_derivative_at_zero() {
        let layer = Layer::Abs { size: 1 };
        let mut grad_in = vec![0.0];
        layer.backward(&[], &[0.0], &LayerAux::default(), &[1.0], &mut grad_in, &mut []);
        assert_eq!(grad_in[0], 1.0);
    }
}
