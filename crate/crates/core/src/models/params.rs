use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{contract, Result};
use crate::tensor::Tensor;
use crate::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named parameter buffers in a fixed order. Networks bind them into
/// tensors for each forward pass.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.params.push(Param {
            name: name.into(),
            shape,
            data,
        });
    }

    /// He-uniform weight `fan_in × fan_out` and a zero bias.
    pub fn push_dense(&mut self, prefix: &str, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
        let bound = (6.0 / fan_in as f64).sqrt();
        let w = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.push(format!("{prefix}.w"), vec![fan_in, fan_out], w);
        self.push(format!("{prefix}.b"), vec![fan_out], vec![0.0; fan_out]);
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn get(&self, i: usize) -> &Param {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param {
        &mut self.params[i]
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    /// Tensors holding a copy of every parameter. Trainable tensors are
    /// gradient-tracking leaves; the others are constants.
    pub fn bind<T: Scalar>(&self, trainable: bool) -> Vec<Tensor<T>> {
        self.params
            .iter()
            .map(|p| {
                let data = p.data.iter().map(|&v| T::lit(v)).collect();
                let t = if trainable {
                    Tensor::param(data, p.shape.clone())
                } else {
                    Tensor::new(data, p.shape.clone())
                };
                t.expect("parameter shape matches data")
            })
            .collect()
    }

    /// Overwrites every parameter with the values of `tensors`.
    pub fn assign<T: Scalar>(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        contract!(
            tensors.len() == self.params.len(),
            "assign: {} tensors for {} parameters",
            tensors.len(),
            self.params.len()
        );
        for (p, t) in self.params.iter_mut().zip(tensors) {
            contract!(
                t.shape() == p.shape.as_slice(),
                "assign: shape {:?} for parameter {} of shape {:?}",
                t.shape(),
                p.name,
                p.shape
            );
            p.data = t.data().iter().map(|v| v.as_f64()).collect();
        }
        Ok(())
    }

    /// Checks that `grads` has one buffer per parameter with matching length.
    pub fn check_grads(&self, grads: &[Vec<f64>]) -> Result<()> {
        contract!(
            grads.len() == self.params.len(),
            "{} gradients for {} parameters",
            grads.len(),
            self.params.len()
        );
        for (p, g) in self.params.iter().zip(grads) {
            contract!(
                g.len() == p.data.len(),
                "gradient of length {} for parameter {} of {} values",
                g.len(),
                p.name,
                p.data.len()
            );
        }
        Ok(())
    }

    /// All parameter values, concatenated in order.
    pub fn flat(&self) -> Vec<f64> {
        self.params.iter().flat_map(|p| p.data.iter().copied()).collect()
    }
}
