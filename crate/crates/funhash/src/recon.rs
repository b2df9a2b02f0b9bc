//! The small reconstruction network mapping ordered hashed values to one
//! virtual weight.
//!
//! A depth-`G` network has `G-1` affine layers with tanh between them and an
//! identity output; widths follow the input dimension `U`:
//! depth 2 is `U -> 1`, depth 3 is `U -> ceil(U/2) -> 1`, depth 4 is
//! `U -> U -> ceil(U/2) -> 1`. Parameters can be owned (the usual case) or
//! supplied per call (dual-space hashing fetches them per entry).

use crate::error::{Error, Result};
use rand::Rng;

/// Layer widths for a given input dimension and depth.
pub fn layer_widths(input_dim: usize, depth: usize) -> Result<Vec<usize>> {
    if input_dim == 0 {
        return Err(Error::Config("reconstruction input dimension must be >= 1".into()));
    }
    let half = input_dim.div_ceil(2);
    match depth {
        2 => Ok(vec![input_dim, 1]),
        3 => Ok(vec![input_dim, half, 1]),
        4 => Ok(vec![input_dim, input_dim, half, 1]),
        _ => Err(Error::Config(format!("reconstruction depth must be 2, 3 or 4, got {depth}"))),
    }
}

/// Gradients of one reconstruction evaluation, scaled by the upstream factor.
#[derive(Debug, Clone)]
pub struct ReconGrad {
    /// `upstream * dg/dx`, length `U`.
    pub d_input: Vec<f64>,
    /// `upstream * dg/dalpha`, length `param_count`.
    pub d_params: Vec<f64>,
}

/// Scratch buffers for one forward/backward evaluation; reuse across entries.
#[derive(Debug, Clone)]
pub struct ReconWorkspace {
    // acts[0] holds the input; acts[l+1] the post-activation output of layer l
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl ReconWorkspace {
    pub fn for_net(net: &ReconNet) -> Self {
        let acts = net.widths.iter().map(|&w| vec![0.0; w]).collect();
        let widest = *net.widths.iter().max().unwrap();
        Self {
            acts,
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }
}

/// Multilayer scalar-output network `g(x; alpha)` with tanh hidden units.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconNet {
    widths: Vec<usize>,
    depth: usize,
    params: Vec<f64>,
}

impl ReconNet {
    /// Zero-initialized network of the given input dimension and depth.
    pub fn new(input_dim: usize, depth: usize) -> Result<Self> {
        let widths = layer_widths(input_dim, depth)?;
        let count = param_count_for(&widths);
        Ok(Self { widths, depth, params: vec![0.0; count] })
    }

    /// Network initialized so that `g` starts out close to the mean of its
    /// inputs: tanh layers get uniform fan-scaled weights, the output layer
    /// averages (all weights `1/fan_in`), all biases zero.
    pub fn with_init<R: Rng + ?Sized>(input_dim: usize, depth: usize, rng: &mut R) -> Result<Self> {
        let mut net = Self::new(input_dim, depth)?;
        let n_layers = net.num_affine_layers();
        for l in 0..n_layers {
            let (fan_in, fan_out) = (net.widths[l], net.widths[l + 1]);
            let (w_off, b_off) = net.layer_offsets(l);
            if l + 1 == n_layers {
                let avg = 1.0 / fan_in as f64;
                for w in &mut net.params[w_off..w_off + fan_in * fan_out] {
                    *w = avg;
                }
            } else {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                for w in &mut net.params[w_off..w_off + fan_in * fan_out] {
                    *w = rng.gen_range(-bound..bound);
                }
            }
            for b in &mut net.params[b_off..b_off + fan_out] {
                *b = 0.0;
            }
        }
        Ok(net)
    }

    /// Depth-2 selector that returns its first input unchanged: weights
    /// `(1, 0, ..., 0)`, zero bias. Reproduces single-hash weight sharing.
    pub fn e1_selector(input_dim: usize) -> Result<Self> {
        let mut net = Self::new(input_dim, 2)?;
        net.params[0] = 1.0;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    fn num_affine_layers(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(Error::DimensionMismatch {
                what: "reconstruction parameters",
                expected: self.params.len(),
                got: params.len(),
            });
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    /// `(weights_offset, bias_offset)` of affine layer `l` in the flat
    /// parameter vector; weights are row-major `fan_out x fan_in`.
    fn layer_offsets(&self, layer: usize) -> (usize, usize) {
        let mut off = 0;
        for l in 0..layer {
            off += (self.widths[l] + 1) * self.widths[l + 1];
        }
        (off, off + self.widths[layer] * self.widths[layer + 1])
    }

    /// Evaluate `g(x; alpha)` with owned parameters.
    pub fn forward(&self, x: &[f64], ws: &mut ReconWorkspace) -> f64 {
        self.forward_with(&self.params, x, ws)
    }

    /// Evaluate `g(x; params)` with explicit parameters (dual-space hashing).
    pub fn forward_with(&self, params: &[f64], x: &[f64], ws: &mut ReconWorkspace) -> f64 {
        debug_assert_eq!(x.len(), self.widths[0]);
        debug_assert_eq!(params.len(), self.params.len());
        ws.acts[0].copy_from_slice(x);
        let n_layers = self.num_affine_layers();
        let mut off = 0;
        for l in 0..n_layers {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let w = &params[off..off + fan_in * fan_out];
            let b = &params[off + fan_in * fan_out..off + (fan_in + 1) * fan_out];
            off += (fan_in + 1) * fan_out;
            let (lo, hi) = ws.acts.split_at_mut(l + 1);
            let input = &lo[l];
            let out = &mut hi[0];
            for r in 0..fan_out {
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let mut z = b[r];
                for c in 0..fan_in {
                    z += row[c] * input[c];
                }
                out[r] = if l + 1 < n_layers { z.tanh() } else { z };
            }
        }
        ws.acts[n_layers][0]
    }

    /// Single-shot evaluation without an external workspace.
    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut ws = ReconWorkspace::for_net(self);
        self.forward(x, &mut ws)
    }

    /// Row-wise evaluation of `rows` inputs of length `U` each, flattened.
    /// Bit-identical to calling [`ReconNet::forward`] per row.
    pub fn batch_forward(&self, inputs: &[f64]) -> Vec<f64> {
        assert_eq!(inputs.len() % self.widths[0].max(1), 0);
        let u = self.widths[0];
        let mut ws = ReconWorkspace::for_net(self);
        inputs.chunks_exact(u).map(|row| self.forward(row, &mut ws)).collect()
    }

    /// Backpropagate `upstream` through the evaluation recorded in `ws`.
    ///
    /// `d_input` is overwritten with `upstream * dg/dx`; `d_params_acc`
    /// accumulates `upstream * dg/dparams` (callers sum over entries).
    pub fn backward_with(
        &self,
        params: &[f64],
        ws: &mut ReconWorkspace,
        upstream: f64,
        d_input: &mut [f64],
        d_params_acc: &mut [f64],
    ) {
        debug_assert_eq!(d_input.len(), self.widths[0]);
        debug_assert_eq!(d_params_acc.len(), self.params.len());
        let n_layers = self.num_affine_layers();
        ws.delta[0] = upstream;
        let mut delta_len = 1;
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let (w_off, b_off) = self.layer_offsets(l);
            let w = &params[w_off..w_off + fan_in * fan_out];
            let input = &ws.acts[l];
            debug_assert_eq!(delta_len, fan_out);
            for c in 0..fan_in {
                ws.delta_prev[c] = 0.0;
            }
            for r in 0..fan_out {
                let d = ws.delta[r];
                let row = &w[r * fan_in..(r + 1) * fan_in];
                let g_row = &mut d_params_acc[w_off + r * fan_in..w_off + (r + 1) * fan_in];
                for c in 0..fan_in {
                    g_row[c] += d * input[c];
                    ws.delta_prev[c] += d * row[c];
                }
                d_params_acc[b_off + r] += d;
            }
            if l > 0 {
                // tanh'(z) = 1 - tanh(z)^2, and acts[l] already holds tanh(z)
                for c in 0..fan_in {
                    let a = ws.acts[l][c];
                    ws.delta[c] = ws.delta_prev[c] * (1.0 - a * a);
                }
            } else {
                d_input[..fan_in].copy_from_slice(&ws.delta_prev[..fan_in]);
            }
            delta_len = fan_in;
        }
        let _ = delta_len;
    }

    /// Forward + backward in one call, allocating the result.
    pub fn backward(&self, x: &[f64], upstream: f64) -> ReconGrad {
        let mut ws = ReconWorkspace::for_net(self);
        self.forward(x, &mut ws);
        let mut grad = ReconGrad {
            d_input: vec![0.0; self.widths[0]],
            d_params: vec![0.0; self.params.len()],
        };
        self.backward_with(&self.params, &mut ws, upstream, &mut grad.d_input, &mut grad.d_params);
        grad
    }
}

fn param_count_for(widths: &[usize]) -> usize {
    widths.windows(2).map(|w| (w[0] + 1) * w[1]).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        let diff = (a - b).abs();
        if diff < 1e-10 {
            0.0
        } else {
            diff / a.abs().max(b.abs())
        }
    }

    #[test]
    fn widths_follow_depth() {
        assert_eq!(layer_widths(4, 2).unwrap(), vec![4, 1]);
        assert_eq!(layer_widths(4, 3).unwrap(), vec![4, 2, 1]);
        assert_eq!(layer_widths(4, 4).unwrap(), vec![4, 4, 2, 1]);
        // ceiling keeps at least one unit
        assert_eq!(layer_widths(1, 3).unwrap(), vec![1, 1, 1]);
        assert!(layer_widths(4, 5).is_err());
        assert!(layer_widths(0, 2).is_err());
    }

    #[test]
    fn param_count_matches_formula() {
        for (u, g) in [(2, 2), (4, 3), (8, 4)] {
            let net = ReconNet::new(u, g).unwrap();
            let expect: usize = net.widths().windows(2).map(|w| (w[0] + 1) * w[1]).sum();
            assert_eq!(net.param_count(), expect);
        }
        // U=4 G3: (4+1)*2 + (2+1)*1 = 13
        assert_eq!(ReconNet::new(4, 3).unwrap().param_count(), 13);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let net = ReconNet::new(4, 3).unwrap();
        assert_eq!(net.eval(&[1.0, -2.0, 3.0, 0.5]), 0.0);
    }

    #[test]
    fn e1_selector_returns_first_input() {
        let net = ReconNet::e1_selector(4).unwrap();
        for x in [[0.7, -1.0, 2.0, 9.9], [-3.5, 0.0, 0.0, 1.0]] {
            assert_eq!(net.eval(&x), x[0]);
        }
    }

    // Independent straight-line evaluation for a fixed U=2 depth-3 net.
    #[test]
    fn forward_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = ReconNet::new(2, 3).unwrap();
        for p in net.params_mut() {
            *p = rng.gen_range(-1.0..1.0);
        }
        let p = net.params().to_vec();
        // layout: W0 (1x2 rows? widths [2,1,1]) -> fan_out=1, fan_in=2
        // layer0: w00 w01 b0; layer1: w10 b1
        let x = [0.3, -0.8];
        let h = (p[0] * x[0] + p[1] * x[1] + p[2]).tanh();
        let expect = p[3] * h + p[4];
        assert_eq!(net.eval(&x), expect);
    }

    #[test]
    fn linear_depth2_gradient_is_weight_vector() {
        let mut net = ReconNet::new(3, 2).unwrap();
        net.params_mut()[..3].copy_from_slice(&[0.5, -1.5, 2.0]);
        let grad = net.backward(&[1.0, 2.0, 3.0], 1.0);
        assert_eq!(grad.d_input, vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn zero_upstream_zeroes_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = ReconNet::with_init(4, 3, &mut rng).unwrap();
        let grad = net.backward(&[0.1, 0.2, 0.3, 0.4], 0.0);
        assert!(grad.d_input.iter().all(|&v| v == 0.0));
        assert!(grad.d_params.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let step = 1e-5;
        for u in [2usize, 4, 8] {
            for g in [2usize, 3, 4] {
                let mut net = ReconNet::with_init(u, g, &mut rng).unwrap();
                for p in net.params_mut() {
                    *p += rng.gen_range(-0.3..0.3);
                }
                for point in 0..10 {
                    let x: Vec<f64> = (0..u).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let upstream = rng.gen_range(0.5..1.5);
                    let grad = net.backward(&x, upstream);

                    for k in 0..x.len() {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[k] += step;
                        xm[k] -= step;
                        let fd = upstream * (net.eval(&xp) - net.eval(&xm)) / (2.0 * step);
                        assert!(
                            rel_err(grad.d_input[k], fd) < 1e-6,
                            "U={u} G={g} pt={point} dx[{k}]: {} vs {fd}",
                            grad.d_input[k]
                        );
                    }
                    for k in 0..net.param_count() {
                        let mut np = net.clone();
                        let mut nm = net.clone();
                        np.params_mut()[k] += step;
                        nm.params_mut()[k] -= step;
                        let fd = upstream * (np.eval(&x) - nm.eval(&x)) / (2.0 * step);
                        assert!(
                            rel_err(grad.d_params[k], fd) < 1e-6,
                            "U={u} G={g} pt={point} dp[{k}]: {} vs {fd}",
                            grad.d_params[k]
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn batch_forward_equals_per_row() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = ReconNet::with_init(4, 3, &mut rng).unwrap();
        let rows = 64;
        let flat: Vec<f64> = (0..rows * 4).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let batch = net.batch_forward(&flat);
        assert_eq!(batch.len(), rows);
        for (r, row) in flat.chunks_exact(4).enumerate() {
            assert_eq!(batch[r], net.eval(row), "row {r}");
        }
        // degenerate and empty batches
        assert_eq!(net.batch_forward(&flat[..4]), vec![net.eval(&flat[..4])]);
        assert!(net.batch_forward(&[]).is_empty());
    }

    #[test]
    fn evaluation_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ReconNet::with_init(8, 4, &mut rng).unwrap();
        let x: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert_eq!(net.eval(&x).to_bits(), net.eval(&x).to_bits());
    }
}
