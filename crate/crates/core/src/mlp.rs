//! Fully connected networks with hand-written reverse mode.
//!
//! Hidden layers use ReLU and the output layer uses tanh by default. Batches
//! are matrices whose columns are samples, so every layer is one GEMM.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{gemm, DenseMatrix};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's own output.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            // ReLU'(0) = 0; y > 0 exactly when the pre-activation is positive
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Weights and biases of a feed-forward network. The same shape doubles as
/// a gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    /// Layer weights, each `out × in`.
    pub weights: Vec<DenseMatrix>,
    pub biases: Vec<Vec<f64>>,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

/// Layer outputs recorded by a forward pass; `activations[0]` is the input.
#[derive(Debug, Clone)]
pub struct MlpTape {
    activations: Vec<DenseMatrix>,
}

impl MlpTape {
    pub fn num_layers(&self) -> usize {
        self.activations.len() - 1
    }

    pub fn output(&self) -> &DenseMatrix {
        self.activations.last().expect("tape holds at least the input")
    }

    /// Number of f64 values held by the tape.
    pub fn len_f64(&self) -> usize {
        self.activations.iter().map(|a| a.data().len()).sum()
    }
}

impl MlpParams {
    /// Gaussian weights with variance `2 / fan_in`, zero biases.
    ///
    /// `dims` lists the input size followed by every layer's output size.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::spec("an MLP needs an input and at least one layer"));
        }
        if dims.contains(&0) {
            return Err(Error::spec("layer sizes must be positive"));
        }
        let mut rng = rng_from_seed(seed);
        let mut weights = Vec::with_capacity(dims.len() - 1);
        let mut biases = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            weights.push(DenseMatrix::from_fn(fan_out, fan_in, |_, _| {
                normal.sample(&mut rng)
            }));
            biases.push(vec![0.0; fan_out]);
        }
        Ok(MlpParams {
            weights,
            biases,
            hidden_activation: Activation::Relu,
            output_activation: Activation::Tanh,
        })
    }

    /// Same architecture with every entry zero.
    pub fn zeros_like(&self) -> Self {
        MlpParams {
            weights: self
                .weights
                .iter()
                .map(|w| DenseMatrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
            hidden_activation: self.hidden_activation,
            output_activation: self.output_activation,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.weights.len()
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().map_or(0, |w| w.rows())
    }

    /// Input size followed by each layer's output size.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.weights.iter().map(|w| w.rows()))
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    /// Parameter storage in a fixed order: weights then bias, per layer.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.push(w.data());
            out.push(b.as_slice());
        }
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::with_capacity(2 * self.weights.len());
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            out.push(w.data_mut());
            out.push(b.as_mut_slice());
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.weights.is_empty() || self.weights.len() != self.biases.len() {
            return Err(Error::spec("layer count mismatch between weights and biases"));
        }
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            if w.rows() != b.len() {
                return Err(Error::dims(format!("layer {l}: bias length {}", b.len())));
            }
            if l > 0 && self.weights[l - 1].rows() != w.cols() {
                return Err(Error::dims(format!("layer {l} does not chain")));
            }
        }
        Ok(())
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.hidden_activation
        }
    }

    fn layer(&self, l: usize, input: &DenseMatrix) -> DenseMatrix {
        let w = &self.weights[l];
        let bias = &self.biases[l];
        let n = input.cols();
        let mut z = DenseMatrix::zeros(w.rows(), n);
        for j in 0..n {
            z.col_mut(j).copy_from_slice(bias);
        }
        gemm(1.0, w, false, input, false, 1.0, &mut z);
        let act = self.activation(l);
        z.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
        z
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::dims(format!(
                "input has {rows} features, network expects {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass over the columns of `x`, keeping a tape for backward.
    pub fn forward_batch(&self, x: &DenseMatrix) -> Result<(DenseMatrix, MlpTape)> {
        self.check_input(x.rows())?;
        let mut activations = Vec::with_capacity(self.weights.len() + 1);
        activations.push(x.clone());
        for l in 0..self.weights.len() {
            let next = self.layer(l, &activations[l]);
            activations.push(next);
        }
        let y = activations.last().unwrap().clone();
        Ok((y, MlpTape { activations }))
    }

    /// Forward pass without recording intermediates.
    pub fn predict_batch(&self, x: &DenseMatrix) -> Result<DenseMatrix> {
        self.check_input(x.rows())?;
        let mut a = self.layer(0, x);
        for l in 1..self.weights.len() {
            a = self.layer(l, &a);
        }
        Ok(a)
    }

    pub fn forward(&self, x: &[f64]) -> Result<(Vec<f64>, MlpTape)> {
        let xm = DenseMatrix::new(x.len(), 1, x.to_vec())?;
        let (y, tape) = self.forward_batch(&xm)?;
        Ok((y.into_data(), tape))
    }

    /// Reverse pass for the scalar `Σ ⟨dy_k, y_k⟩` over the batch columns.
    ///
    /// Parameter gradients are added into `grads`; the input gradient is
    /// returned.
    pub fn backward_accumulate(
        &self,
        tape: &MlpTape,
        dy: &DenseMatrix,
        grads: &mut MlpParams,
    ) -> Result<DenseMatrix> {
        if tape.num_layers() != self.num_layers() {
            return Err(Error::dims("tape does not match network depth"));
        }
        if dy.shape() != tape.output().shape() {
            return Err(Error::dims(format!(
                "output gradient is {}x{}, forward output was {}x{}",
                dy.rows(),
                dy.cols(),
                tape.output().rows(),
                tape.output().cols()
            )));
        }
        let mut delta = dy.clone();
        for l in (0..self.num_layers()).rev() {
            let act = self.activation(l);
            let out = &tape.activations[l + 1];
            delta
                .data_mut()
                .iter_mut()
                .zip(out.data())
                .for_each(|(d, &y)| *d *= act.derivative_from_output(y));
            let input = &tape.activations[l];
            gemm(1.0, &delta, false, input, true, 1.0, &mut grads.weights[l]);
            let gb = &mut grads.biases[l];
            for col in delta.columns() {
                gb.iter_mut().zip(col).for_each(|(g, d)| *g += d);
            }
            let mut below = DenseMatrix::zeros(input.rows(), input.cols());
            gemm(1.0, &self.weights[l], true, &delta, false, 0.0, &mut below);
            delta = below;
        }
        Ok(delta)
    }

    /// Reverse pass returning fresh parameter gradients and the input gradient.
    pub fn backward_batch(
        &self,
        tape: &MlpTape,
        dy: &DenseMatrix,
    ) -> Result<(MlpParams, DenseMatrix)> {
        let mut grads = self.zeros_like();
        let dx = self.backward_accumulate(tape, dy, &mut grads)?;
        Ok((grads, dx))
    }

    pub fn backward(&self, tape: &MlpTape, dy: &[f64]) -> Result<(MlpParams, Vec<f64>)> {
        let dym = DenseMatrix::new(dy.len(), 1, dy.to_vec())?;
        let (g, dx) = self.backward_batch(tape, &dym)?;
        Ok((g, dx.into_data()))
    }
}

/// Draws an MLP with the given dims and uniformly random biases; used by
/// tests that need nonzero biases.
#[doc(hidden)]
pub fn random_mlp(dims: &[usize], seed: u64) -> MlpParams {
    let mut p = MlpParams::init(dims, seed).expect("valid dims");
    let mut rng = rng_from_seed(seed ^ 0xB1A5);
    for b in &mut p.biases {
        b.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::StandardNormal;

    fn random_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = rng_from_seed(seed);
        (0..n).map(|_| rng.sample(StandardNormal)).collect()
    }

    // Plain nested-loop evaluation, independent of the GEMM path.
    fn straight_line(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut a = x.to_vec();
        for (l, (w, b)) in p.weights.iter().zip(&p.biases).enumerate() {
            let mut z = vec![0.0; w.rows()];
            for (i, zi) in z.iter_mut().enumerate() {
                let mut s = b[i];
                for (k, ak) in a.iter().enumerate() {
                    s += w.get(i, k) * ak;
                }
                *zi = if l + 1 == p.num_layers() { s.tanh() } else { s.max(0.0) };
            }
            a = z;
        }
        a
    }

    #[test]
    fn init_shapes() {
        let p = MlpParams::init(&[500, 1024, 1024, 1024, 1024], 0).unwrap();
        let shapes: Vec<_> = p.weights.iter().map(|w| w.shape()).collect();
        assert_eq!(
            shapes,
            vec![(1024, 500), (1024, 1024), (1024, 1024), (1024, 1024)]
        );
        let p = MlpParams::init(&[3, 2], 1).unwrap();
        assert_eq!(p.weights[0].shape(), (2, 3));
        assert_eq!(p.biases, vec![vec![0.0, 0.0]]);
        assert!(MlpParams::init(&[3], 1).is_err());
        assert!(MlpParams::init(&[], 1).is_err());
    }

    #[test]
    fn init_variance() {
        let fan_in = 1000;
        let p = MlpParams::init(&[fan_in, 1000], 42).unwrap();
        let w = p.weights[0].data();
        assert_eq!(w.len(), 1_000_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let want = 2.0 / fan_in as f64;
        assert!((var - want).abs() / want < 0.05, "{var} vs {want}");
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut p = MlpParams::init(&[4, 3, 2], 0).unwrap();
        p.weights.iter_mut().for_each(|w| w.fill(0.0));
        let (y, tape) = p.forward(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(y, vec![0.0, 0.0]);
        assert_eq!(tape.num_layers(), 2);
    }

    #[test]
    fn single_layer_tanh() {
        let mut p = MlpParams::init(&[1, 1], 0).unwrap();
        p.weights[0].set(0, 0, 1.0);
        let (y, _) = p.forward(&[0.5]).unwrap();
        assert_eq!(y[0], 0.5f64.tanh());
        assert!((y[0] - 0.4621).abs() < 1e-4);
    }

    #[test]
    fn matches_straight_line_evaluator() {
        let p = random_mlp(&[7, 16, 12, 5], 3);
        let x = random_vec(7, 4);
        let (y, _) = p.forward(&x).unwrap();
        let want = straight_line(&p, &x);
        for (a, b) in y.iter().zip(&want) {
            assert!((a - b).abs() < 1e-14);
        }
        // batch path agrees column by column
        let xs = DenseMatrix::from_fn(7, 3, |i, j| x[i] * (j as f64 + 1.0));
        let yb = p.predict_batch(&xs).unwrap();
        for j in 0..3 {
            let xj: Vec<f64> = xs.col(j).to_vec();
            let want = straight_line(&p, &xj);
            for (a, b) in yb.col(j).iter().zip(&want) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let p = random_mlp(&[5, 32, 32, 8], 9);
        // tanh rounds to exactly ±1 once |z| exceeds ~19, so keep inputs at data scale
        let x: Vec<f64> = random_vec(5, 1).iter().map(|v| v * 2.0).collect();
        let (a, _) = p.forward(&x).unwrap();
        let (b, _) = p.forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn zero_output_gradient() {
        let p = random_mlp(&[3, 4, 2], 1);
        let (_, tape) = p.forward(&[0.3, -0.1, 0.7]).unwrap();
        let (g, dx) = p.backward(&tape, &[0.0, 0.0]).unwrap();
        assert!(g.slices().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_layer_gradient() {
        let mut p = random_mlp(&[3, 2], 5);
        p.output_activation = Activation::Identity;
        let x = [0.2, -1.5, 4.0];
        let (_, tape) = p.forward(&x).unwrap();
        let (g, dx) = p.backward(&tape, &[1.0, 0.0]).unwrap();
        assert_eq!(g.weights[0].row(0), x.to_vec());
        assert_eq!(g.weights[0].row(1), vec![0.0; 3]);
        assert_eq!(g.biases[0], vec![1.0, 0.0]);
        assert_eq!(dx, p.weights[0].row(0));
    }

    #[test]
    fn dimension_errors() {
        let p = random_mlp(&[3, 2], 5);
        assert!(matches!(p.forward(&[1.0]), Err(Error::DimensionMismatch(_))));
        let (_, tape) = p.forward(&[1.0, 2.0, 3.0]).unwrap();
        assert!(p.backward(&tape, &[1.0]).is_err());
    }

    fn gradient_check(dims: &[usize], seed: u64) -> f64 {
        let mut p = random_mlp(dims, seed);
        let n = 3;
        let x = DenseMatrix::from_fn(dims[0], n, |i, j| ((i * 7 + j * 3) as f64).sin());
        let dy = DenseMatrix::from_fn(*dims.last().unwrap(), n, |i, j| {
            ((i * 5 + j * 11) as f64).cos()
        });
        let objective = |p: &MlpParams| -> f64 {
            let y = p.predict_batch(&x).unwrap();
            y.data().iter().zip(dy.data()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = p.forward_batch(&x).unwrap();
        let (g, _) = p.backward_batch(&tape, &dy).unwrap();
        let analytic: Vec<f64> = g.slices().concat();
        let h = 1e-6;
        let mut worst = 0.0f64;
        let total = analytic.len();
        for (k, &a) in analytic.iter().enumerate() {
            let bump = |p: &mut MlpParams, delta: f64| {
                let mut off = k;
                for s in p.slices_mut() {
                    if off < s.len() {
                        s[off] += delta;
                        return;
                    }
                    off -= s.len();
                }
                unreachable!("{total}");
            };
            bump(&mut p, h);
            let plus = objective(&p);
            bump(&mut p, -2.0 * h);
            let minus = objective(&p);
            bump(&mut p, h);
            let fd = (plus - minus) / (2.0 * h);
            worst = worst.max((a - fd).abs() / (a.abs() + 1e-8));
        }
        worst
    }

    #[test]
    fn gradients_match_finite_differences() {
        assert!(gradient_check(&[4, 6, 3], 1) < 1e-5);
        assert!(gradient_check(&[5, 16, 16, 16, 4], 2) < 1e-5);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let p = random_mlp(&[4, 8, 8, 3], 7);
        let x = random_vec(4, 8);
        let dy = random_vec(3, 9);
        let (_, tape) = p.forward(&x).unwrap();
        let (_, dx) = p.backward(&tape, &dy).unwrap();
        let f = |x: &[f64]| -> f64 {
            let (y, _) = p.forward(x).unwrap();
            y.iter().zip(&dy).map(|(a, b)| a * b).sum()
        };
        for k in 0..4 {
            let mut xp = x.clone();
            xp[k] += 1e-6;
            let mut xm = x.clone();
            xm[k] -= 1e-6;
            let fd = (f(&xp) - f(&xm)) / 2e-6;
            assert!((dx[k] - fd).abs() / (dx[k].abs() + 1e-8) < 1e-5);
        }
    }
}
