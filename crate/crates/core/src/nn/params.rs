use crate::error::{Error, Result};

/// A model whose learnable tensors can be enumerated in a fixed canonical order.
///
/// The order is the serialization order of checkpoints and the layout of
/// [`Gradients`].
pub trait Parameters {
    fn param_tensors(&self) -> Vec<&[f64]>;
    fn param_tensors_mut(&mut self) -> Vec<&mut [f64]>;
    /// Human-readable name of each tensor, aligned with [`Parameters::param_tensors`].
    fn param_names(&self) -> Vec<String>;

    fn param_count(&self) -> usize {
        self.param_tensors().iter().map(|t| t.len()).sum()
    }

    /// All parameters concatenated in canonical order.
    fn flat_params(&self) -> Vec<f64> {
        self.param_tensors().concat()
    }

    fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.param_count();
        if flat.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} parameters, got {}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in self.param_tensors_mut() {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}

/// Per-tensor gradient accumulators, congruent with a [`Parameters`] owner.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like<P: Parameters + ?Sized>(model: &P) -> Self {
        Self {
            tensors: model
                .param_tensors()
                .iter()
                .map(|t| vec![0.0; t.len()])
                .collect(),
        }
    }

    pub fn from_tensors(tensors: Vec<Vec<f64>>) -> Self {
        Self { tensors }
    }

    pub fn tensors(&self) -> &[Vec<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.tensors
    }

    pub fn flat(&self) -> Vec<f64> {
        self.tensors.concat()
    }

    pub fn is_congruent<P: Parameters + ?Sized>(&self, model: &P) -> bool {
        let shapes = model.param_tensors();
        shapes.len() == self.tensors.len()
            && shapes.iter().zip(&self.tensors).all(|(p, g)| p.len() == g.len())
    }

    pub fn add_assign(&mut self, other: &Gradients) -> Result<()> {
        if self.tensors.len() != other.tensors.len()
            || self
                .tensors
                .iter()
                .zip(&other.tensors)
                .any(|(a, b)| a.len() != b.len())
        {
            return Err(Error::Shape("gradient sets are not congruent".into()));
        }
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t.iter_mut() {
                *v *= s;
            }
        }
    }

    /// Index of the first tensor holding a non-finite value.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.tensors
            .iter()
            .position(|t| t.iter().any(|v| !v.is_finite()))
    }

    pub fn is_zero(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|&v| v == 0.0))
    }
}
