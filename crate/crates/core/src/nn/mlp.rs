//! Dense multilayer perceptrons with reverse-mode gradients.
//!
//! A layer computes `y = act(x · W + b)` with `W` stored row-major as
//! `in × out`. The final layer of every [`Mlp`] is linear.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{axpy, Matrix};
use super::params::{Gradients, Parameters};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative evaluated at pre-activation `z`. The relu kink takes 0.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Dense {
    pub fn new(weight: Matrix, bias: Vec<f64>, activation: Activation) -> Result<Self> {
        if bias.len() != weight.cols() {
            return Err(Error::Shape(format!(
                "bias of length {} for a {}x{} weight",
                bias.len(),
                weight.rows(),
                weight.cols()
            )));
        }
        Ok(Self {
            weight,
            bias,
            activation,
        })
    }

    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            weight: Matrix::zeros(in_dim, out_dim),
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let mut layer = Self::zeros(in_dim, out_dim, activation);
        for w in layer.weight.data_mut() {
            *w = rng.random_range(-limit..=limit);
        }
        layer
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    /// Pre-activation `x · W + b`.
    pub fn affine(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = x.matmul(&self.weight)?;
        for r in 0..z.rows() {
            for (v, b) in z.row_mut(r).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
}

/// Per-layer values kept from a forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    /// Input to each layer (`inputs[0]` is the network input).
    pub inputs: Vec<Matrix>,
    /// Pre-activation of each layer.
    pub pre: Vec<Matrix>,
    pub output: Matrix,
}

impl Mlp {
    pub fn new(layers: Vec<Dense>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::Size("an MLP needs at least one layer".into()));
        };
        if last.activation != Activation::Identity {
            return Err(Error::Input("the final MLP layer must be linear".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::Shape(format!(
                    "layer {k} outputs {} but layer {} expects {}",
                    pair[0].out_dim(),
                    k + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Self { layers })
    }

    /// Relu hidden layers of the given widths followed by a linear output layer.
    pub fn glorot<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Size("need at least input and output widths".into()));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|k| {
                let act = if k + 1 == n {
                    Activation::Identity
                } else {
                    Activation::Relu
                };
                Dense::glorot(dims[k], dims[k + 1], act, rng)
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward_trace(x)?.output)
    }

    pub fn forward_trace(&self, x: &Matrix) -> Result<MlpTrace> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "MLP expects {} input columns, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut a = x.clone();
        for layer in &self.layers {
            let z = layer.affine(&a)?;
            let mut next = z.clone();
            if layer.activation != Activation::Identity {
                for v in next.data_mut() {
                    *v = layer.activation.apply(*v);
                }
            }
            inputs.push(std::mem::replace(&mut a, next));
            pre.push(z);
        }
        Ok(MlpTrace {
            inputs,
            pre,
            output: a,
        })
    }

    /// Gradients of `sum(upstream ⊙ forward(x))` with respect to the
    /// parameters and to `x`.
    pub fn backprop(&self, x: &Matrix, upstream: &Matrix) -> Result<(Gradients, Matrix)> {
        let trace = self.forward_trace(x)?;
        let mut grads = Gradients::zeros_like(self);
        let dx = self.backprop_trace(&trace, upstream, &mut grads)?;
        Ok((grads, dx))
    }

    /// Backpropagates through a recorded forward pass, accumulating into `grads`.
    pub fn backprop_trace(
        &self,
        trace: &MlpTrace,
        upstream: &Matrix,
        grads: &mut Gradients,
    ) -> Result<Matrix> {
        if upstream.shape() != trace.output.shape() {
            return Err(Error::Shape(format!(
                "upstream is {}x{} but the output is {}x{}",
                upstream.rows(),
                upstream.cols(),
                trace.output.rows(),
                trace.output.cols()
            )));
        }
        if !grads.is_congruent(self) {
            return Err(Error::Shape("gradient set does not match the MLP".into()));
        }
        let mut delta = upstream.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation != Activation::Identity {
                for (d, z) in delta.data_mut().iter_mut().zip(trace.pre[k].data()) {
                    *d *= layer.activation.derivative(*z);
                }
            }
            let tensors = grads.tensors_mut();
            let (w_slot, b_slot) = tensors[2 * k..2 * k + 2].split_at_mut(1);
            let mut dw = Matrix::from_vec(layer.in_dim(), layer.out_dim(), std::mem::take(&mut w_slot[0]))?;
            trace.inputs[k].tr_matmul_acc(&delta, &mut dw)?;
            w_slot[0] = dw.into_vec();
            for r in 0..delta.rows() {
                axpy(&mut b_slot[0], 1.0, delta.row(r));
            }
            delta = delta.matmul_tr(&layer.weight)?;
        }
        Ok(delta)
    }
}

impl Parameters for Mlp {
    fn param_tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weight.data(), l.bias.as_slice()])
            .collect()
    }

    fn param_tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weight.data_mut(), l.bias.as_mut_slice()])
            .collect()
    }

    fn param_names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|k| [format!("layer{k}.weight"), format!("layer{k}.bias")])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    /// Scalar-loop forward pass, written against the raw layer fields.
    fn oracle_forward(mlp: &Mlp, x: &Matrix) -> Vec<Vec<f64>> {
        (0..x.rows())
            .map(|r| {
                let mut a = x.row(r).to_vec();
                for layer in mlp.layers() {
                    let mut next = vec![0.0; layer.out_dim()];
                    for (j, out) in next.iter_mut().enumerate() {
                        let mut s = layer.bias[j];
                        for (i, ai) in a.iter().enumerate() {
                            s += ai * layer.weight.get(i, j);
                        }
                        *out = match layer.activation {
                            Activation::Relu => {
                                if s > 0.0 {
                                    s
                                } else {
                                    0.0
                                }
                            }
                            Activation::Identity => s,
                        };
                    }
                    a = next;
                }
                a
            })
            .collect()
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mlp = Mlp::new(vec![Dense::new(Matrix::identity(3), vec![0.0; 3], Activation::Identity).unwrap()]).unwrap();
        let x = Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap();
        assert_eq!(mlp.forward(&x).unwrap(), x);
    }

    #[test]
    fn relu_clamps_negative_preactivation() {
        let relu = Dense::new(Matrix::from_vec(3, 1, vec![1.0; 3]).unwrap(), vec![-10.0], Activation::Relu).unwrap();
        let out = Dense::new(Matrix::identity(1), vec![0.0], Activation::Identity).unwrap();
        let mlp = Mlp::new(vec![relu, out]).unwrap();
        let y = mlp.forward(&Matrix::from_rows(&[[1.0, 2.0, 3.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn forward_matches_scalar_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut mlp = Mlp::glorot(&[3, 5, 2], &mut rng).unwrap();
        for b in &mut mlp.layers_mut()[0].bias {
            *b = rng.random_range(-0.5..0.5);
        }
        let x = random_matrix(4, 3, &mut rng);
        let y = mlp.forward(&x).unwrap();
        let expected = oracle_forward(&mlp, &x);
        for (r, row) in expected.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                assert!((y.get(r, c) - v).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::glorot(&[3, 2], &mut rng).unwrap();
        assert!(matches!(mlp.forward(&Matrix::zeros(1, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn final_layer_must_be_linear() {
        assert!(Mlp::new(vec![Dense::zeros(2, 2, Activation::Relu)]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::glorot(&[4, 6, 3], &mut rng).unwrap();
        let x = random_matrix(5, 4, &mut rng);
        let (g, dx) = mlp.backprop(&x, &Matrix::zeros(5, 3)).unwrap();
        assert!(g.is_zero());
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_linear_model_gradient_is_analytic() {
        let w = 1.75;
        let xv = -0.4;
        let mlp = Mlp::new(vec![Dense::new(Matrix::from_vec(1, 1, vec![w]).unwrap(), vec![0.0], Activation::Identity).unwrap()]).unwrap();
        let (g, dx) = mlp
            .backprop(&Matrix::from_vec(1, 1, vec![xv]).unwrap(), &Matrix::from_vec(1, 1, vec![1.0]).unwrap())
            .unwrap();
        assert_eq!(g.tensors()[0], vec![xv]);
        assert_eq!(g.tensors()[1], vec![1.0]);
        assert_eq!(dx.data(), &[w]);
    }

    #[test]
    fn upstream_shape_is_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mlp = Mlp::glorot(&[2, 2], &mut rng).unwrap();
        assert!(mlp.backprop(&Matrix::zeros(3, 2), &Matrix::zeros(2, 2)).is_err());
    }
}
