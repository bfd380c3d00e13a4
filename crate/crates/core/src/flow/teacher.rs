use rand::Rng;
use serde::{Deserialize, Serialize};

use super::embed::time_embedding;
use super::path::{instantaneous_velocity_batch, interpolate_batch};
use super::sampler::VelocityField;
use super::FlowError;
use crate::data::{encode_batch, ToyDataset, DEFAULT_CONDITION_DROPOUT};
use crate::nn::{mlp_forward, AdamW, AdamWConfig, Mlp, NnError, ParamSet, Scalar, Tape, Tensor, Var};
use crate::rng::{derive_seed, normal_vec, rng_from_seed, uniform};

/// Shape of a velocity network: state, condition and time-feature widths plus hidden layers.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VelocityArch {
    pub state_dim: usize,
    pub cond_dim: usize,
    pub embed_dim: usize,
    pub hidden: Vec<usize>,
}

impl VelocityArch {
    /// MLP layer sizes over `[z, time features, condition]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.state_dim + self.embed_dim + self.cond_dim];
        sizes.extend(&self.hidden);
        sizes.push(self.state_dim);
        sizes
    }
}

/// Instantaneous-velocity network `v(z, t; c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TeacherModel<T> {
    pub arch: VelocityArch,
    pub params: ParamSet<T>,
}

impl<T: Scalar> TeacherModel<T> {
    pub fn new(arch: VelocityArch, rng: &mut impl Rng) -> Self {
        let params = Mlp::new(&arch.layer_sizes(), rng).into_params();
        TeacherModel { arch, params }
    }

    pub fn from_params(arch: VelocityArch, params: ParamSet<T>) -> Result<Self, NnError> {
        let params = Mlp::from_params(&arch.layer_sizes(), params)?.into_params();
        Ok(TeacherModel { arch, params })
    }

    pub fn cast<U: Scalar>(&self) -> TeacherModel<U> {
        TeacherModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundTeacher<'_, 't, T> {
        BoundTeacher {
            arch: &self.arch,
            vars: self.params.bind(tape),
        }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> BoundTeacher<'_, 't, T> {
        BoundTeacher {
            arch: &self.arch,
            vars: self.params.bind_frozen(tape),
        }
    }

    /// Frozen evaluation of (optionally guided) velocity.
    pub fn velocity_eval(
        &self,
        z: &Tensor<T>,
        t: &[f64],
        cond: &Tensor<T>,
        guidance: Option<f64>,
    ) -> Result<Tensor<T>, NnError> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let v = cfg_velocity(
            &bound,
            tape.constant(z.clone()),
            t,
            tape.constant(cond.clone()),
            guidance,
        )?;
        Ok(v.value())
    }
}

/// Teacher parameters registered on a tape.
pub struct BoundTeacher<'m, 't, T> {
    pub arch: &'m VelocityArch,
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundTeacher<'_, 't, T> {
    pub fn velocity(&self, z: Var<'t, T>, t: &[f64], cond: Var<'t, T>) -> Result<Var<'t, T>, NnError> {
        let tape = z.tape();
        let emb = tape.constant(time_embedding(t, self.arch.embed_dim));
        let input = tape.concat_cols(&[z, emb, cond]);
        mlp_forward(&self.arch.layer_sizes(), &self.vars, input)
    }
}

/// `w·v(z,t;c) + (1−w)·v(z,t;∅)`; `None` evaluates only the conditional branch.
pub fn cfg_velocity<'t, T: Scalar>(
    teacher: &BoundTeacher<'_, 't, T>,
    z: Var<'t, T>,
    t: &[f64],
    cond: Var<'t, T>,
    guidance: Option<f64>,
) -> Result<Var<'t, T>, NnError> {
    let v_cond = teacher.velocity(z, t, cond)?;
    let Some(w) = guidance else { return Ok(v_cond) };
    let (rows, cols) = cond.shape();
    let null = z.tape().constant(Tensor::zeros(rows, cols));
    let v_uncond = teacher.velocity(z, t, null)?;
    Ok(v_cond.scale(T::from_f64_lossy(w)) + v_uncond.scale(T::from_f64_lossy(1.0 - w)))
}

/// Mean over the batch of `‖v(z_t, t) − (ε − x)‖²`.
pub fn fm_loss<'t, T: Scalar>(
    model: &BoundTeacher<'_, 't, T>,
    x: &Tensor<T>,
    eps: &Tensor<T>,
    t: &[f64],
    cond: Var<'t, T>,
) -> Result<Var<'t, T>, FlowError> {
    let tape = cond.tape();
    let z_t = tape.constant(interpolate_batch(x, eps, t)?);
    let target = tape.constant(instantaneous_velocity_batch(x, eps));
    let pred = model.velocity(z_t, t, cond)?;
    let n = T::from_usize(x.rows()).expect("batch size");
    Ok((pred - target).square().sum().scale(T::one() / n))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherTrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    #[serde(default = "default_dropout")]
    pub condition_dropout: f64,
}

fn default_dropout() -> f64 {
    DEFAULT_CONDITION_DROPOUT
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherRecord {
    pub iteration: u64,
    pub loss: f64,
}

/// Initial teacher weights for a training seed.
pub fn init_teacher(arch: VelocityArch, seed: u64) -> TeacherModel<f32> {
    TeacherModel::new(arch, &mut rng_from_seed(derive_seed(seed, "teacher-init")))
}

/// Flow-matching training with uniform times and condition dropout.
pub fn train_teacher(
    dataset: &ToyDataset,
    arch: VelocityArch,
    config: &TeacherTrainConfig,
    seed: u64,
) -> Result<(TeacherModel<f32>, Vec<TeacherRecord>), FlowError> {
    let mut model = init_teacher(arch, seed);
    let records = continue_teacher(&mut model, dataset, config, seed)?;
    Ok((model, records))
}

/// Runs `config.iterations` flow-matching steps on an existing model.
pub fn continue_teacher(
    model: &mut TeacherModel<f32>,
    dataset: &ToyDataset,
    config: &TeacherTrainConfig,
    seed: u64,
) -> Result<Vec<TeacherRecord>, FlowError> {
    if dataset.is_empty() {
        return Err(FlowError::EmptyDataset);
    }
    let mut rng = rng_from_seed(derive_seed(seed, "teacher-train"));
    let mut opt = AdamW::new(config.optimizer, &model.params);
    let mut records = Vec::with_capacity(config.iterations as usize);
    let (n, dim, obs) = (dataset.len(), dataset.hr_dim(), dataset.lr_dim());
    for iteration in 0..config.iterations {
        let idx: Vec<usize> = (0..config.batch_size).map(|_| rng.random_range(0..n)).collect();
        let (x, lr) = dataset.batch(&idx);
        let eps = Tensor::new(idx.len(), dim, normal_vec(&mut rng, idx.len() * dim));
        let t: Vec<f64> = (0..idx.len()).map(|_| uniform(&mut rng)).collect();
        let cond = encode_batch(lr.data(), obs, config.condition_dropout, &mut rng);

        let tape = Tape::new();
        let bound = model.bind(&tape);
        let loss = fm_loss(&bound, &x, &eps, &t, tape.constant(cond))?;
        let value = loss.value().item() as f64;
        if !value.is_finite() {
            return Err(FlowError::Divergence { iteration });
        }
        let grads = tape.backward(loss)?;
        let vars = bound.vars;
        model.params.accumulate(&grads, &vars);
        opt.step(&mut model.params)?;
        records.push(TeacherRecord { iteration, loss: value });
    }
    Ok(records)
}

/// Teacher velocity with a fixed condition batch, as an ODE field.
pub struct TeacherField<'a, T> {
    pub teacher: &'a TeacherModel<T>,
    pub cond: Tensor<T>,
    pub guidance: Option<f64>,
}

impl<T: Scalar> VelocityField<T> for TeacherField<'_, T> {
    fn velocity(&self, z: &Tensor<T>, t: f64) -> Tensor<T> {
        let times = vec![t; z.rows()];
        self.teacher
            .velocity_eval(z, &times, &self.cond, self.guidance)
            .expect("teacher shapes fixed at construction")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::condition_dim;
    use crate::flow::FlowSample;
    use crate::nn::grad_check;

    fn arch() -> VelocityArch {
        VelocityArch {
            state_dim: 2,
            cond_dim: condition_dim(1),
            embed_dim: 4,
            hidden: vec![8, 8],
        }
    }

    /// A teacher whose last layer is zero and whose bias is `b`: output ≡ b.
    fn constant_teacher(b: &[f64]) -> TeacherModel<f64> {
        let mut m = init_teacher(arch(), 1).cast::<f64>();
        let last = m.params.len() - 2;
        let w = &mut m.params.get_mut(last).value;
        w.data_mut().iter_mut().for_each(|x| *x = 0.0);
        m.params.get_mut(last + 1).value = Tensor::new(1, b.len(), b.to_vec());
        m
    }

    #[test]
    fn perfect_and_zero_predictors() {
        // Output ≡ 0 with x = (1, 0), ε = 0: loss = 1.
        let m = constant_teacher(&[0.0, 0.0]);
        let tape = Tape::new();
        let bound = m.bind(&tape);
        let x = Tensor::new(1, 2, vec![1.0, 0.0]);
        let e = Tensor::zeros(1, 2);
        let c = tape.constant(Tensor::zeros(1, 2));
        let l = fm_loss(&bound, &x, &e, &[0.4], c).unwrap();
        assert_eq!(l.value().item(), 1.0);

        // Output ≡ ε − x exactly.
        let x = Tensor::new(1, 2, vec![0.5, -0.5]);
        let e = Tensor::new(1, 2, vec![1.5, 0.25]);
        let m = constant_teacher(&[1.0, 0.75]);
        let tape = Tape::new();
        let bound = m.bind(&tape);
        let c = tape.constant(Tensor::zeros(1, 2));
        assert_eq!(fm_loss(&bound, &x, &e, &[0.7], c).unwrap().value().item(), 0.0);
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let m = init_teacher(arch(), 3).cast::<f64>();
        let s1 = FlowSample::new(vec![0.2, -0.1], vec![1.0, 0.3], 0.25).unwrap();
        let s2 = FlowSample::new(vec![-0.7, 0.4], vec![-0.2, 0.9], 0.8).unwrap();
        let single = |s: &FlowSample, c: &[f64]| {
            let tape = Tape::new();
            let b = m.bind(&tape);
            let x = Tensor::new(1, 2, s.x.iter().map(|&v| v as f64).collect());
            let e = Tensor::new(1, 2, s.eps.iter().map(|&v| v as f64).collect());
            let c = tape.constant(Tensor::new(1, 2, c.to_vec()));
            fm_loss(&b, &x, &e, &[s.t], c).unwrap().value().item()
        };
        let (l1, l2) = (single(&s1, &[0.1, 1.0]), single(&s2, &[0.0, 0.0]));
        let tape = Tape::new();
        let b = m.bind(&tape);
        let x = Tensor::new(2, 2, s1.x.iter().chain(&s2.x).map(|&v| v as f64).collect());
        let e = Tensor::new(2, 2, s1.eps.iter().chain(&s2.eps).map(|&v| v as f64).collect());
        let c = tape.constant(Tensor::new(2, 2, vec![0.1, 1.0, 0.0, 0.0]));
        let both = fm_loss(&b, &x, &e, &[s1.t, s2.t], c).unwrap().value().item();
        assert!((both - 0.5 * (l1 + l2)).abs() < 1e-12);
    }

    #[test]
    fn cfg_weights() {
        let m = init_teacher(arch(), 5).cast::<f64>();
        let z = Tensor::new(3, 2, vec![0.1, 0.2, -0.3, 0.4, 1.0, -1.0]);
        let c = Tensor::new(3, 2, vec![0.5, 1.0, -0.5, 1.0, 0.0, 1.0]);
        let t = [0.2, 0.5, 0.9];
        let cond = m.velocity_eval(&z, &t, &c, None).unwrap();
        let uncond = m.velocity_eval(&z, &t, &Tensor::zeros(3, 2), None).unwrap();
        assert_eq!(m.velocity_eval(&z, &t, &c, Some(1.0)).unwrap(), cond);
        assert_eq!(m.velocity_eval(&z, &t, &c, Some(0.0)).unwrap(), uncond);
        // Both branches agree when the condition is already null.
        for w in [-1.0, 0.0, 0.5, 1.0, 4.5, 7.5] {
            let g = m.velocity_eval(&z, &t, &Tensor::zeros(3, 2), Some(w)).unwrap();
            for (a, b) in g.data().iter().zip(uncond.data()) {
                assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()), "w={w}");
            }
        }
    }

    #[test]
    fn fm_loss_gradients_match_finite_differences() {
        let m = init_teacher(arch(), 9).cast::<f64>();
        let x = Tensor::new(2, 2, vec![0.3, -0.6, 1.1, 0.2]);
        let e = Tensor::new(2, 2, vec![-0.4, 0.8, 0.05, -1.3]);
        let c = Tensor::new(2, 2, vec![0.3, 1.0, 0.0, 0.0]);
        let params: Vec<Tensor<f64>> = m.params.iter().map(|p| p.value.clone()).collect();
        let a = m.arch.clone();
        let err = grad_check(
            |tape, vars| {
                let bound = BoundTeacher {
                    arch: &a,
                    vars: vars.to_vec(),
                };
                fm_loss(&bound, &x, &e, &[0.3, 0.65], tape.constant(c.clone())).unwrap()
            },
            &params,
        );
        assert!(err <= 1e-3, "{err}");
    }

    #[test]
    fn zero_iterations_returns_initialization() {
        let ds = crate::data::generate_dataset("two-moons-conditional", 16, 0, Default::default()).unwrap();
        let cfg = TeacherTrainConfig {
            iterations: 0,
            batch_size: 4,
            optimizer: AdamWConfig::with_lr(1e-3),
            condition_dropout: 0.2,
        };
        let (m, rec) = train_teacher(&ds, arch(), &cfg, 17).unwrap();
        assert!(rec.is_empty());
        assert!(m.params.values_eq(&init_teacher(arch(), 17).params));
    }
}
