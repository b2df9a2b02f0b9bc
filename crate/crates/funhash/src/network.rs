//! Stacked feed-forward network mixing dense and virtual layers.
//!
//! Hidden activations are ReLU; the output head is either softmax with
//! cross-entropy or identity with squared error. The backward pass returns
//! per-layer gradients without touching parameters; updates are the
//! trainer's business.

use crate::error::{Error, Result};
use crate::vlayer::{LayerGrad, LayerScratch, VirtualLayer};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;

/// Log argument clamp for cross-entropy.
const LOG_EPS: f64 = 1e-12;

/// Plain fully-connected layer, the uncompressed baseline.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    w: Array2<f64>,
    b: Vec<f64>,
}

impl DenseLayer {
    pub fn new<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        Self {
            w: Array2::from_shape_fn((d_out, d_in), |_| rng.gen_range(-bound..bound)),
            b: vec![0.0; d_out],
        }
    }

    pub fn from_parts(w: Array2<f64>, b: Vec<f64>) -> Self {
        assert_eq!(w.nrows(), b.len());
        Self { w, b }
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.w
    }

    pub fn weights_mut(&mut self) -> &mut Array2<f64> {
        &mut self.w
    }

    pub fn bias(&self) -> &[f64] {
        &self.b
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.b
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.w.ncols(), self.w.nrows())
    }

    pub fn stored_params(&self) -> usize {
        self.w.len() + self.b.len()
    }

    fn forward(&self, a: &Array2<f64>) -> Array2<f64> {
        a.dot(&self.w.t()) + &Array1::from_vec(self.b.clone())
    }
}

/// Gradients of one dense layer.
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub d_w: Array2<f64>,
    pub d_b: Vec<f64>,
    pub d_input: Array2<f64>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(DenseLayer),
    Virtual(VirtualLayer),
}

impl Layer {
    pub fn dims(&self) -> (usize, usize) {
        match self {
            Layer::Dense(l) => l.dims(),
            Layer::Virtual(l) => l.dims(),
        }
    }

    pub fn stored_params(&self) -> usize {
        match self {
            Layer::Dense(l) => l.stored_params(),
            Layer::Virtual(l) => l.stored_params(),
        }
    }

    /// Dense size of the weight matrix, whether stored or virtual.
    pub fn virtual_params(&self) -> usize {
        let (d_in, d_out) = self.dims();
        d_in * d_out
    }
}

/// Per-layer gradients mirroring the layer list.
#[derive(Debug, Clone)]
pub enum LayerGradient {
    Dense(DenseGrad),
    Virtual(LayerGrad),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossHead {
    SoftmaxCrossEntropy,
    SquaredError,
}

/// Activations recorded by a forward pass, consumed by backward.
#[derive(Debug)]
pub struct ForwardTrace {
    /// `inputs[l]` is what layer `l` saw;一 entry per layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations per layer.
    zs: Vec<Array2<f64>>,
    scratch: Vec<Option<LayerScratch>>,
    /// Head output: class probabilities or raw values, batch x C.
    pub output: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<Layer>,
    head: LossHead,
}

impl Network {
    pub fn new(layers: Vec<Layer>, head: LossHead) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            let (_, d_out) = pair[0].dims();
            let (d_in, _) = pair[1].dims();
            if d_out != d_in {
                return Err(Error::DimensionMismatch {
                    what: "adjacent layer dims",
                    expected: d_out,
                    got: d_in,
                });
            }
        }
        Ok(Self { layers, head })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> LossHead {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].dims().0
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].dims().1
    }

    /// Total stored trainable scalars across all layers.
    pub fn stored_params(&self) -> usize {
        self.layers.iter().map(Layer::stored_params).sum()
    }

    /// Total dense-equivalent weight count across all layers.
    pub fn virtual_params(&self) -> usize {
        self.layers.iter().map(Layer::virtual_params).sum()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Result<ForwardTrace> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let n_layers = self.layers.len();
        let mut inputs = Vec::with_capacity(n_layers);
        let mut zs = Vec::with_capacity(n_layers);
        let mut scratch = Vec::with_capacity(n_layers);
        let mut a = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            inputs.push(a.clone());
            let z = match layer {
                Layer::Dense(dense) => {
                    scratch.push(None);
                    dense.forward(&a)
                }
                Layer::Virtual(v) => {
                    let (z, s) = v.forward(&a)?;
                    scratch.push(Some(s));
                    z
                }
            };
            a = if l + 1 < n_layers { z.mapv(|v| v.max(0.0)) } else { z.clone() };
            zs.push(z);
        }
        let output = match self.head {
            LossHead::SoftmaxCrossEntropy => softmax(&a),
            LossHead::SquaredError => a,
        };
        Ok(ForwardTrace { inputs, zs, scratch, output })
    }

    /// Mean loss of `output` against class labels.
    pub fn loss(&self, output: &Array2<f64>, targets: &[usize]) -> Result<f64> {
        let batch = output.nrows();
        if batch == 0 {
            return Err(Error::Config("loss of an empty batch".into()));
        }
        if batch != targets.len() {
            return Err(Error::DimensionMismatch {
                what: "loss targets",
                expected: batch,
                got: targets.len(),
            });
        }
        let classes = output.ncols();
        for (s, &t) in targets.iter().enumerate() {
            if t >= classes {
                return Err(Error::LabelOutOfRange { label: t, classes, sample: s });
            }
        }
        let total: f64 = match self.head {
            LossHead::SoftmaxCrossEntropy => targets
                .iter()
                .enumerate()
                .map(|(s, &t)| -output[[s, t]].max(LOG_EPS).ln())
                .sum(),
            LossHead::SquaredError => targets
                .iter()
                .enumerate()
                .map(|(s, &t)| {
                    (0..classes)
                        .map(|c| {
                            let y = if c == t { 1.0 } else { 0.0 };
                            let d = output[[s, c]] - y;
                            d * d
                        })
                        .sum::<f64>()
                })
                .sum(),
        };
        Ok(total / batch as f64)
    }

    /// Backpropagate from class labels; returns per-layer gradients and the
    /// batch mean loss.
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        targets: &[usize],
    ) -> Result<(Vec<LayerGradient>, f64)> {
        let loss = self.loss(&trace.output, targets)?;
        let batch = trace.output.nrows();
        let scale = 1.0 / batch as f64;

        // dL/dz at the output for both heads
        let mut delta = match self.head {
            LossHead::SoftmaxCrossEntropy => {
                let mut d = trace.output.clone();
                for (s, &t) in targets.iter().enumerate() {
                    d[[s, t]] -= 1.0;
                }
                d * scale
            }
            LossHead::SquaredError => {
                let mut d = trace.output.clone();
                for (s, &t) in targets.iter().enumerate() {
                    d[[s, t]] -= 1.0;
                }
                d * (2.0 * scale)
            }
        };

        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let a = &trace.inputs[l];
            let grad = match layer {
                Layer::Dense(dense) => {
                    let d_w = delta.t().dot(a);
                    let d_b = delta.sum_axis(Axis(0)).to_vec();
                    let d_input = delta.dot(&dense.w);
                    LayerGradient::Dense(DenseGrad { d_w, d_b, d_input })
                }
                Layer::Virtual(v) => {
                    let s = trace.scratch[l].as_ref().expect("virtual scratch recorded");
                    LayerGradient::Virtual(v.backward(a, &delta, s)?)
                }
            };
            if l > 0 {
                let d_input = match &grad {
                    LayerGradient::Dense(g) => &g.d_input,
                    LayerGradient::Virtual(g) => &g.d_input,
                };
                // gate by ReLU applied to the previous pre-activation
                let gate = trace.zs[l - 1].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
                delta = d_input * &gate;
            }
            grads.push(grad);
        }
        grads.reverse();
        Ok((grads, loss))
    }

    /// Class predictions by output argmax.
    pub fn predict(&self, x: &Array2<f64>) -> Result<Vec<usize>> {
        let trace = self.forward(x)?;
        Ok(argmax_rows(&trace.output))
    }
}

pub fn argmax_rows(m: &Array2<f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap()
        })
        .collect()
}

/// Row-wise softmax with max subtraction.
pub fn softmax(z: &Array2<f64>) -> Array2<f64> {
    let mut out = z.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
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
    fn relu_after_identity_dense_layer() {
        let eye = Array2::eye(2);
        let net = Network::new(
            vec![
                Layer::Dense(DenseLayer::from_parts(eye.clone(), vec![0.0; 2])),
                Layer::Dense(DenseLayer::from_parts(eye, vec![0.0; 2])),
            ],
            LossHead::SquaredError,
        )
        .unwrap();
        let trace = net.forward(&array![[1.0, -1.0]]).unwrap();
        // hidden ReLU clamps the negative coordinate before the second layer
        assert_eq!(trace.output, array![[1.0, 0.0]]);
    }

    #[test]
    fn zero_network_gives_uniform_softmax_and_ln_c_loss() {
        let net = Network::new(
            vec![Layer::Dense(DenseLayer::from_parts(
                Array2::zeros((10, 4)),
                vec![0.0; 10],
            ))],
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let trace = net.forward(&array![[0.2, -0.4, 1.0, 0.0]]).unwrap();
        for v in trace.output.iter() {
            assert!(rel_err(*v, 0.1) < 1e-12);
        }
        let loss = net.loss(&trace.output, &[3]).unwrap();
        assert!(rel_err(loss, 10.0_f64.ln()) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut r = ChaCha8Rng::seed_from_u64(40);
        let z = Array2::from_shape_fn((8, 10), |_| r.gen_range(-30.0..30.0));
        for row in softmax(&z).rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    // Straight-line oracle: independent evaluation with explicit loops.
    #[test]
    fn forward_matches_independent_evaluation() {
        let mut r = ChaCha8Rng::seed_from_u64(41);
        let l1 = DenseLayer::new(3, 4, &mut r);
        let l2 = DenseLayer::new(4, 2, &mut r);
        let net = Network::new(
            vec![Layer::Dense(l1.clone()), Layer::Dense(l2.clone())],
            LossHead::SquaredError,
        )
        .unwrap();
        let x = [0.5, -1.0, 2.0];
        let trace = net.forward(&array![[0.5, -1.0, 2.0]]).unwrap();

        let mut hidden = [0.0; 4];
        for i in 0..4 {
            let mut z = l1.bias()[i];
            for j in 0..3 {
                z += l1.weights()[[i, j]] * x[j];
            }
            hidden[i] = z.max(0.0);
        }
        for i in 0..2 {
            let mut z = l2.bias()[i];
            for j in 0..4 {
                z += l2.weights()[[i, j]] * hidden[j];
            }
            assert!(rel_err(trace.output[[0, i]], z) < 1e-12);
        }
    }

    #[test]
    fn perfect_prediction_yields_zero_delta_and_tiny_loss() {
        let net = Network::new(
            vec![Layer::Dense(DenseLayer::from_parts(
                Array2::zeros((3, 2)),
                vec![1000.0, 0.0, 0.0],
            ))],
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let trace = net.forward(&array![[0.0, 0.0]]).unwrap();
        assert_eq!(trace.output[[0, 0]], 1.0);
        let (grads, loss) = net.backward(&trace, &[0]).unwrap();
        assert!(loss.abs() < 1e-12);
        match &grads[0] {
            LayerGradient::Dense(g) => {
                assert!(g.d_w.iter().all(|&v| v == 0.0));
                assert!(g.d_b.iter().all(|&v| v == 0.0));
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn squared_head_delta_closed_form() {
        let net = Network::new(
            vec![Layer::Dense(DenseLayer::from_parts(
                Array2::eye(2),
                vec![0.0; 2],
            ))],
            LossHead::SquaredError,
        )
        .unwrap();
        let x = array![[0.7, 0.2], [0.1, 0.9]];
        let trace = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&trace, &[0, 1]).unwrap();
        // delta = 2 (out - onehot) / batch; with identity weights d_b == column sums of delta
        let expect_delta =
            array![[2.0 * (0.7 - 1.0) / 2.0, 2.0 * 0.2 / 2.0], [2.0 * 0.1 / 2.0, 2.0 * (0.9 - 1.0) / 2.0]];
        match &grads[0] {
            LayerGradient::Dense(g) => {
                for c in 0..2 {
                    let col_sum = expect_delta[[0, c]] + expect_delta[[1, c]];
                    assert!(rel_err(g.d_b[c], col_sum) < 1e-12);
                }
            }
            _ => unreachable!(),
        }
    }

    #[test]
    fn loss_matches_independent_scalar_computation() {
        let mut r = ChaCha8Rng::seed_from_u64(42);
        let net = Network::new(
            vec![Layer::Dense(DenseLayer::new(3, 4, &mut r))],
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let x = Array2::from_shape_fn((5, 3), |_| r.gen_range(-1.0..1.0));
        let targets = [0usize, 3, 1, 2, 0];
        let trace = net.forward(&x).unwrap();
        let loss = net.loss(&trace.output, &targets).unwrap();
        let mut expect = 0.0;
        for (s, &t) in targets.iter().enumerate() {
            expect -= trace.output[[s, t]].ln();
        }
        expect /= 5.0;
        assert!(rel_err(loss, expect) < 1e-12);
    }

    #[test]
    fn rejects_bad_targets_and_empty_batch() {
        let net = Network::new(
            vec![Layer::Dense(DenseLayer::from_parts(
                Array2::zeros((3, 2)),
                vec![0.0; 3],
            ))],
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let trace = net.forward(&array![[0.0, 0.0]]).unwrap();
        assert!(matches!(
            net.loss(&trace.output, &[7]),
            Err(Error::LabelOutOfRange { .. })
        ));
        assert!(net.loss(&Array2::zeros((0, 3)), &[]).is_err());
    }

    #[test]
    fn mismatched_adjacent_dims_rejected() {
        let mut r = ChaCha8Rng::seed_from_u64(43);
        let err = Network::new(
            vec![
                Layer::Dense(DenseLayer::new(3, 4, &mut r)),
                Layer::Dense(DenseLayer::new(5, 2, &mut r)),
            ],
            LossHead::SquaredError,
        );
        assert!(matches!(err, Err(Error::DimensionMismatch { .. })));
    }

    // End-to-end finite differences on a two-virtual-layer network: every
    // stored scalar of every layer.
    #[test]
    fn full_network_gradients_match_finite_differences() {
        let mut r = ChaCha8Rng::seed_from_u64(44);
        let v1 = VirtualLayer::funhash(4, 5, 6, 2, 3, 200, &mut r).unwrap();
        let v2 = VirtualLayer::funhash(5, 3, 4, 2, 2, 201, &mut r).unwrap();
        let net = Network::new(
            vec![Layer::Virtual(v1), Layer::Virtual(v2)],
            LossHead::SoftmaxCrossEntropy,
        )
        .unwrap();
        let x = Array2::from_shape_fn((3, 4), |_| r.gen_range(-1.0..1.0));
        let targets = [0usize, 2, 1];

        let trace = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&trace, &targets).unwrap();

        let loss_of = |n: &Network| {
            let t = n.forward(&x).unwrap();
            n.loss(&t.output, &targets).unwrap()
        };
        let h = 1e-5;
        for l in 0..2 {
            let g = match &grads[l] {
                LayerGradient::Virtual(g) => g,
                _ => unreachable!(),
            };
            let n_w = g.d_w.len();
            let n_alpha = g.d_alpha.len();
            let n_b = g.d_b.len();
            for (name, count) in [("w", n_w), ("alpha", n_alpha), ("b", n_b)] {
                for k in 0..count {
                    let perturb = |net: &Network, eps: f64| {
                        let mut n = net.clone();
                        match &mut n.layers_mut()[l] {
                            Layer::Virtual(v) => match name {
                                "w" => v.w_mut()[k] += eps,
                                "alpha" => v.recon_mut().unwrap().params_mut()[k] += eps,
                                _ => v.bias_mut()[k] += eps,
                            },
                            _ => unreachable!(),
                        }
                        n
                    };
                    let fd = (loss_of(&perturb(&net, h)) - loss_of(&perturb(&net, -h))) / (2.0 * h);
                    let analytic = match name {
                        "w" => g.d_w[k],
                        "alpha" => g.d_alpha[k],
                        _ => g.d_b[k],
                    };
                    assert!(
                        rel_err(analytic, fd) < 1e-5,
                        "layer {l} {name}[{k}]: {analytic} vs {fd}"
                    );
                }
            }
        }
    }
}
