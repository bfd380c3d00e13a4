use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::flow::TeacherModel;
use crate::nn::{mlp_forward, Mlp, NnError, ParamSet, Scalar, Tape, Tensor, Var};

/// Trainable copy of the teacher that tracks the student's output distribution.
pub fn init_regularizer<T: Scalar>(teacher: &TeacherModel<T>) -> TeacherModel<T> {
    let mut reg = teacher.clone();
    reg.params.zero_grad();
    reg
}

/// Grid of the pooled patch features (per side).
pub const POOL_GRID: usize = 4;
/// Scale applied to pooled gradient energy so both feature groups have similar range.
pub const ENERGY_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscArch {
    pub input_dim: usize,
    /// Set for square patches; the network then sees pooled intensity and gradient energy.
    pub patch_side: Option<usize>,
    pub hidden: Vec<usize>,
}

impl DiscArch {
    pub fn feature_dim(&self) -> usize {
        match self.patch_side {
            Some(_) => 2 * POOL_GRID * POOL_GRID,
            None => self.input_dim,
        }
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.feature_dim()];
        sizes.extend(&self.hidden);
        sizes.push(1);
        sizes
    }
}

/// Fixed linear maps from a flattened patch to its pooled features.
struct PatchOps<T> {
    pool: Tensor<T>,
    grad_x: Tensor<T>,
    grad_y: Tensor<T>,
}

impl<T: Scalar> PatchOps<T> {
    fn new(side: usize) -> Self {
        assert!(
            side.is_multiple_of(POOL_GRID),
            "patch side must be a multiple of {POOL_GRID}"
        );
        let n = side * side;
        let cells = POOL_GRID * POOL_GRID;
        let block = side / POOL_GRID;
        let w = T::from_f64_lossy(1.0 / (block * block) as f64);
        let mut pool = Tensor::zeros(n, cells);
        let mut grad_x = Tensor::zeros(n, n);
        let mut grad_y = Tensor::zeros(n, n);
        for y in 0..side {
            for x in 0..side {
                let i = y * side + x;
                pool.data_mut()[i * cells + (y / block) * POOL_GRID + x / block] = w;
                if x + 1 < side {
                    grad_x.data_mut()[(i + 1) * n + i] = T::one();
                    grad_x.data_mut()[i * n + i] = -T::one();
                }
                if y + 1 < side {
                    grad_y.data_mut()[(i + side) * n + i] = T::one();
                    grad_y.data_mut()[i * n + i] = -T::one();
                }
            }
        }
        PatchOps { pool, grad_x, grad_y }
    }
}

/// Realness score network `D(x)`: one scalar per row.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator<T> {
    pub arch: DiscArch,
    pub params: ParamSet<T>,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(arch: DiscArch, rng: &mut impl Rng) -> Self {
        let params = Mlp::new(&arch.layer_sizes(), rng).into_params();
        Discriminator { arch, params }
    }

    pub fn from_params(arch: DiscArch, params: ParamSet<T>) -> Result<Self, NnError> {
        let params = Mlp::from_params(&arch.layer_sizes(), params)?.into_params();
        Ok(Discriminator { arch, params })
    }

    pub fn cast<U: Scalar>(&self) -> Discriminator<U> {
        Discriminator {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundDisc<'_, 't, T> {
        BoundDisc {
            arch: &self.arch,
            vars: self.params.bind(tape),
        }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> BoundDisc<'_, 't, T> {
        BoundDisc {
            arch: &self.arch,
            vars: self.params.bind_frozen(tape),
        }
    }

    pub fn score_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let tape = Tape::new();
        Ok(self.bind_frozen(&tape).score(tape.constant(x.clone()))?.value())
    }
}

pub struct BoundDisc<'m, 't, T> {
    pub arch: &'m DiscArch,
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundDisc<'_, 't, T> {
    /// Input features: the raw sample, or pooled intensity and gradient energy for patches.
    pub fn features(&self, x: Var<'t, T>) -> Var<'t, T> {
        let Some(side) = self.arch.patch_side else { return x };
        let tape = x.tape();
        let ops = PatchOps::<T>::new(side);
        let pool = tape.constant(ops.pool);
        let gx = x.matmul(tape.constant(ops.grad_x));
        let gy = x.matmul(tape.constant(ops.grad_y));
        let energy = (gx.square() + gy.square())
            .matmul(pool)
            .scale(T::from_f64_lossy(ENERGY_SCALE));
        tape.concat_cols(&[x.matmul(pool), energy])
    }

    /// `B×1` scores.
    pub fn score(&self, x: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        mlp_forward(&self.arch.layer_sizes(), &self.vars, self.features(x))
    }
}
