use rand::Rng;

use crate::flow::{time_embedding, TeacherModel, VelocityArch};
use crate::nn::{mlp_forward, Mlp, NnError, ParamSet, Scalar, Tape, Tensor, Var};

/// Two-time average-velocity network `u(z, r, t; c)`.
///
/// The body has the teacher's layout over `[z, e_{r,t}, c]`, where
/// `e_{r,t} = emb(t)·P_t + emb(r)·P_r`. Parameters are the body layers
/// followed by `time.proj_t` and `time.proj_r`.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentModel<T> {
    pub arch: VelocityArch,
    pub params: ParamSet<T>,
}

impl<T: Scalar> StudentModel<T> {
    pub fn new(arch: VelocityArch, rng: &mut impl Rng) -> Self {
        let mut params = Mlp::new(&arch.layer_sizes(), rng).into_params();
        let e = arch.embed_dim;
        let bound = 1.0 / (e as f64).sqrt();
        for name in ["time.proj_t", "time.proj_r"] {
            let data = (0..e * e)
                .map(|_| T::from_f64_lossy(rng.random_range(-bound..bound)))
                .collect();
            params.push(name, Tensor::new(e, e, data));
        }
        StudentModel { arch, params }
    }

    /// Copies the teacher body, with `P_t = I` and `P_r = 0`, so that
    /// `u(z, t, t) = v(z, t)` exactly.
    pub fn init_from_teacher(teacher: &TeacherModel<T>) -> Self {
        let mut params = teacher.params.clone();
        let e = teacher.arch.embed_dim;
        let mut eye = Tensor::zeros(e, e);
        for i in 0..e {
            eye.data_mut()[i * e + i] = T::one();
        }
        params.push("time.proj_t", eye);
        params.push("time.proj_r", Tensor::zeros(e, e));
        params.zero_grad();
        StudentModel {
            arch: teacher.arch.clone(),
            params,
        }
    }

    pub fn from_params(arch: VelocityArch, params: ParamSet<T>) -> Result<Self, NnError> {
        let body_len = 2 * (arch.layer_sizes().len() - 1);
        if params.len() != body_len + 2 {
            return Err(NnError::Dimension {
                layer: "parameter list".into(),
                expected: body_len + 2,
                got: params.len(),
            });
        }
        let mut body = ParamSet::new();
        for p in params.iter().take(body_len) {
            body.push(p.name.clone(), p.value.clone());
        }
        Mlp::from_params(&arch.layer_sizes(), body)?;
        let e = arch.embed_dim;
        for p in params.iter().skip(body_len) {
            if p.value.shape() != (e, e) {
                return Err(NnError::Dimension {
                    layer: p.name.clone(),
                    expected: e * e,
                    got: p.value.len(),
                });
            }
        }
        Ok(StudentModel { arch, params })
    }

    pub fn cast<U: Scalar>(&self) -> StudentModel<U> {
        StudentModel {
            arch: self.arch.clone(),
            params: self.params.cast(),
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> BoundStudent<'_, 't, T> {
        BoundStudent {
            arch: &self.arch,
            vars: self.params.bind(tape),
        }
    }

    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> BoundStudent<'_, 't, T> {
        BoundStudent {
            arch: &self.arch,
            vars: self.params.bind_frozen(tape),
        }
    }

    /// Frozen evaluation of `u(z, r, t; c)`.
    pub fn average_velocity_eval(
        &self,
        z: &Tensor<T>,
        r: &[f64],
        t: &[f64],
        cond: &Tensor<T>,
    ) -> Result<Tensor<T>, NnError> {
        let tape = Tape::new();
        let bound = self.bind_frozen(&tape);
        let u = bound.average_velocity(tape.constant(z.clone()), r, t, tape.constant(cond.clone()))?;
        Ok(u.value())
    }
}

/// Student parameters registered on a tape.
pub struct BoundStudent<'m, 't, T> {
    pub arch: &'m VelocityArch,
    pub vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> BoundStudent<'_, 't, T> {
    pub fn average_velocity(
        &self,
        z: Var<'t, T>,
        r: &[f64],
        t: &[f64],
        cond: Var<'t, T>,
    ) -> Result<Var<'t, T>, NnError> {
        let tape = z.tape();
        let n = self.vars.len();
        let (proj_t, proj_r) = (self.vars[n - 2], self.vars[n - 1]);
        let et = tape.constant(time_embedding(t, self.arch.embed_dim));
        let er = tape.constant(time_embedding(r, self.arch.embed_dim));
        let emb = et.matmul(proj_t) + er.matmul(proj_r);
        let input = tape.concat_cols(&[z, emb, cond]);
        mlp_forward(&self.arch.layer_sizes(), &self.vars[..n - 2], input)
    }
}
