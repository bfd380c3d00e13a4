use rand::Rng;

use super::params::ParamSet;
use super::tape::Var;
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Fully connected network with SiLU between layers and a linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    layer_sizes: Vec<usize>,
    params: ParamSet<T>,
}

impl<T: Scalar> Mlp<T> {
    /// Fan-in scaled uniform init, `U(-1/√in, 1/√in)` for weights and biases.
    pub fn new(layer_sizes: &[usize], rng: &mut impl Rng) -> Self {
        assert!(layer_sizes.len() >= 2, "an MLP needs at least one layer");
        let mut params = ParamSet::new();
        for (i, w) in layer_sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = 1.0 / (fan_in as f64).sqrt();
            let mut draw = |n: usize| -> Vec<T> {
                (0..n)
                    .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                    .collect()
            };
            let weight = Tensor::new(fan_in, fan_out, draw(fan_in * fan_out));
            let bias = Tensor::new(1, fan_out, draw(fan_out));
            params.push(format!("layer{i}.weight"), weight);
            params.push(format!("layer{i}.bias"), bias);
        }
        Mlp {
            layer_sizes: layer_sizes.to_vec(),
            params,
        }
    }

    /// Builds a network around existing parameters (weights `in×out`, biases `1×out`).
    pub fn from_params(layer_sizes: &[usize], params: ParamSet<T>) -> Result<Self, NnError> {
        if params.len() != 2 * (layer_sizes.len().saturating_sub(1)) {
            return Err(NnError::Dimension {
                layer: "parameter list".into(),
                expected: 2 * (layer_sizes.len().saturating_sub(1)),
                got: params.len(),
            });
        }
        for (i, w) in layer_sizes.windows(2).enumerate() {
            let wt = &params.get(2 * i).value;
            let b = &params.get(2 * i + 1).value;
            if wt.shape() != (w[0], w[1]) || b.shape() != (1, w[1]) {
                return Err(NnError::Dimension {
                    layer: format!("layer{i}"),
                    expected: w[0] * w[1],
                    got: wt.len(),
                });
            }
        }
        Ok(Mlp {
            layer_sizes: layer_sizes.to_vec(),
            params,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("nonempty")
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet<T> {
        self.params
    }

    /// `Σ (in·out + out)` over layers.
    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Mlp<U> {
        Mlp {
            layer_sizes: self.layer_sizes.clone(),
            params: self.params.cast(),
        }
    }

    /// Forward pass over parameter vars produced by binding [`Self::params`].
    pub fn forward<'t>(&self, vars: &[Var<'t, T>], input: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        mlp_forward(&self.layer_sizes, vars, input)
    }
}

/// Forward pass of an MLP whose parameters are already on the tape.
pub fn mlp_forward<'t, T: Scalar>(
    layer_sizes: &[usize],
    vars: &[Var<'t, T>],
    input: Var<'t, T>,
) -> Result<Var<'t, T>, NnError> {
    assert_eq!(vars.len(), 2 * (layer_sizes.len() - 1), "parameter binding mismatch");
    let got = input.shape().1;
    if got != layer_sizes[0] {
        return Err(NnError::Dimension {
            layer: "layer0".into(),
            expected: layer_sizes[0],
            got,
        });
    }
    let last = layer_sizes.len() - 2;
    let mut h = input;
    for i in 0..=last {
        h = h.matmul(vars[2 * i]).add_bias(vars[2 * i + 1]);
        if i != last {
            h = h.silu();
        }
    }
    Ok(h)
}
