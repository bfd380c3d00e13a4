use super::*;
use crate::data::{condition_dim, generate_dataset, ToyDataset};
use crate::flow::{init_teacher, TeacherModel, VelocityArch};
use crate::isc::StudentModel;
use crate::metrics::FeatureNet;
use crate::nn::{grad_check, Mlp, Tape, Tensor};
use crate::rng::{derive_seed, rng_from_seed};

fn arch() -> VelocityArch {
    VelocityArch {
        state_dim: 2,
        cond_dim: condition_dim(1),
        embed_dim: 4,
        hidden: vec![8, 8],
    }
}

fn disc(arch: DiscArch, seed: u64) -> Discriminator<f64> {
    Discriminator::new(arch, &mut rng_from_seed(seed))
}

/// Discriminator with zero output weights and output bias `b`: `D ≡ b`.
fn constant_disc(b: f64) -> Discriminator<f64> {
    let mut d = disc(
        DiscArch {
            input_dim: 2,
            patch_side: None,
            hidden: vec![4, 4],
        },
        3,
    );
    let last = d.params.len() - 2;
    d.params
        .get_mut(last)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = 0.0);
    d.params.get_mut(last + 1).value = Tensor::scalar(b);
    d
}

#[test]
fn vsd_vanishes_when_regularizer_equals_teacher() {
    let teacher = init_teacher(arch(), 4);
    let reg = init_regularizer(&teacher);
    let z = Tensor::new(3, 2, vec![0.1, 0.2, -0.4, 0.9, 1.3, -0.7]);
    let c = Tensor::new(3, 2, vec![0.2, 1.0, 0.0, 0.0, -0.3, 1.0]);
    let mut rng = rng_from_seed(5);
    let sched = ConstantWeight(1.0);
    for _ in 0..100 {
        let g = vsd_gradient(&z, &teacher, &reg, &c, &sched, &VsdConfig::default(), &mut rng).unwrap();
        assert!(g.data().iter().all(|x| *x == 0.0));
    }
}

#[test]
fn vsd_hand_chain_rule() {
    // 1D fields v ≡ 1 (teacher) and v ≡ 0 (regularizer) at t = 0.5.
    let arch_1d = VelocityArch { state_dim: 1, ..arch() };
    let constant_1d = |b: f32| {
        let mut m = init_teacher(arch_1d.clone(), 2);
        let last = m.params.len() - 2;
        m.params
            .get_mut(last)
            .value
            .data_mut()
            .iter_mut()
            .for_each(|x| *x = 0.0);
        m.params.get_mut(last + 1).value = Tensor::scalar(b);
        m
    };
    let (one, zero) = (constant_1d(1.0), constant_1d(0.0));
    let z = Tensor::new(1, 1, vec![0.3]);
    let eps = Tensor::new(1, 1, vec![-0.8]);
    let c = Tensor::new(1, 2, vec![0.0, 1.0]);
    let g = vsd_gradient_at(&z, &eps, &[0.5], &one, &zero, &c, &ConstantWeight(1.0), None).unwrap();
    assert_eq!(g.item(), 0.5);
    let g0 = vsd_gradient_at(&z, &eps, &[0.5], &one, &zero, &c, &ConstantWeight(0.0), None).unwrap();
    assert_eq!(g0.item(), 0.0);
}

#[test]
fn schedules() {
    let reg = schedule_registry(&[(0.0, 2.0), (1.0, 0.0)]).unwrap();
    assert_eq!(reg.get("constant-1").unwrap().weight(0.3), 1.0);
    let table = reg.get("table").unwrap();
    assert!((table.weight(0.25) - 1.5).abs() < 1e-12);
    assert_eq!(table.weight(-1.0), 2.0);
    assert_eq!(table.weight(2.0), 0.0);
    assert!(schedule_registry(&[(0.5, -1.0)]).is_err());
    assert!(schedule_registry(&[]).unwrap().get("table").is_err());
}

#[test]
fn generator_loss_examples() {
    for (b, expected) in [(0.0, 0.0), (3.0, -3.0)] {
        let d = constant_disc(b);
        let tape = Tape::new();
        let bd = d.bind(&tape);
        let fake = tape.constant(Tensor::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]));
        assert_eq!(gan_generator_loss(&bd, fake).unwrap().value().item(), expected);
    }
}

/// Scores given directly: a 1-input linear discriminator `D(x) = x`.
fn identity_disc() -> Discriminator<f64> {
    let arch = DiscArch {
        input_dim: 1,
        patch_side: None,
        hidden: vec![],
    };
    let mut p = crate::nn::ParamSet::new();
    p.push("layer0.weight", Tensor::scalar(1.0));
    p.push("layer0.bias", Tensor::scalar(0.0));
    Discriminator::from_params(arch, p).unwrap()
}

fn hinge(real: &[f64], fake: &[f64]) -> f64 {
    let d = identity_disc();
    let tape = Tape::new();
    let bd = d.bind(&tape);
    let r = tape.constant(Tensor::column(real.to_vec()));
    let f = tape.constant(Tensor::column(fake.to_vec()));
    gan_discriminator_loss(&bd, r, f).unwrap().value().item()
}

#[test]
fn hinge_examples() {
    assert_eq!(hinge(&[2.0], &[-3.0]), 0.0);
    assert!((hinge(&[0.5], &[-0.2]) - 1.3).abs() < 1e-12);
    assert_eq!(hinge(&[0.0], &[0.0]), 2.0);
    let tape = Tape::new();
    let d = identity_disc();
    let bd = d.bind(&tape);
    let x = tape.constant(Tensor::column(vec![1.0, -1.0]));
    assert_eq!(gan_generator_loss(&bd, x).unwrap().value().item(), 0.0);
}

proptest::proptest! {
    #[test]
    fn hinge_is_nonnegative_and_zero_only_at_margins(
        real in proptest::collection::vec(-3.0f64..3.0, 1..6),
        fake in proptest::collection::vec(-3.0f64..3.0, 1..6),
    ) {
        let l = hinge(&real, &fake);
        proptest::prop_assert!(l >= 0.0);
        let satisfied = real.iter().all(|r| *r >= 1.0) && fake.iter().all(|f| *f <= -1.0);
        proptest::prop_assert_eq!(l == 0.0, satisfied);
    }
}

#[test]
fn reconstruction_examples() {
    let x = Tensor::new(2, 3, vec![0.1, 0.5, 0.9, 0.3, 0.2, 0.0]);
    let net = FeatureNet::<f64>::seeded(3);
    let tape = Tape::new();
    assert_eq!(
        reconstruction_loss(tape.constant(x.clone()), &x, &net)
            .unwrap()
            .value()
            .item(),
        0.0
    );

    // Linear feature map F (3 → 2): loss = ‖δ‖²/n + ‖Fδ‖²/m.
    let mut p = crate::nn::ParamSet::new();
    let f = Tensor::new(3, 2, vec![1.0, 0.5, -2.0, 0.0, 0.25, 3.0]);
    p.push("layer0.weight", f.clone());
    p.push("layer0.bias", Tensor::new(1, 2, vec![0.7, -0.1]));
    let lin = FeatureNet::from_mlp(Mlp::from_params(&[3, 2], p).unwrap());
    let delta = Tensor::new(2, 3, vec![0.1, -0.2, 0.05, 0.0, 0.3, -0.1]);
    let xh = x.zip_map(&delta, |a, b| a + b);
    let tape = Tape::new();
    let got = reconstruction_loss(tape.constant(xh), &x, &lin).unwrap().value().item();
    let fd = delta.matmul(&f);
    let expected = delta.sum_sq() / 6.0 + fd.sum_sq() / 4.0;
    assert!((got - expected).abs() < 1e-12, "{got} {expected}");

    // Zero feature map: pure pixel MSE.
    let mut p = crate::nn::ParamSet::new();
    p.push("layer0.weight", Tensor::zeros(3, 2));
    p.push("layer0.bias", Tensor::zeros(1, 2));
    let zero = FeatureNet::from_mlp(Mlp::from_params(&[3, 2], p).unwrap());
    let xh = x.zip_map(&delta, |a, b| a + b);
    let tape = Tape::new();
    let got = reconstruction_loss(tape.constant(xh), &x, &zero)
        .unwrap()
        .value()
        .item();
    assert!((got - delta.sum_sq() / 6.0).abs() < 1e-12);
}

#[test]
fn patch_discriminator_features() {
    let arch = DiscArch {
        input_dim: 256,
        patch_side: Some(16),
        hidden: vec![8, 8],
    };
    let d = disc(arch, 6);
    let flat = Tensor::full(1, 256, 0.5);
    let tape = Tape::new();
    let f = d.bind_frozen(&tape).features(tape.constant(flat)).value();
    assert_eq!(f.shape(), (1, 32));
    assert!(f.data()[..16].iter().all(|v| (v - 0.5).abs() < 1e-12));
    assert!(f.data()[16..].iter().all(|v| *v == 0.0));
    // A vertical edge shows up only in the cells that contain it.
    let edge = Tensor::new(1, 256, (0..256).map(|i| if i % 16 >= 8 { 1.0 } else { 0.0 }).collect());
    let tape = Tape::new();
    let f = d.bind_frozen(&tape).features(tape.constant(edge)).value();
    let energy = &f.data()[16..];
    for (cell, e) in energy.iter().enumerate() {
        let expected = if cell % 4 == 1 { ENERGY_SCALE * 4.0 / 16.0 } else { 0.0 };
        assert!((e - expected).abs() < 1e-12, "{cell} {e}");
    }
    assert_eq!(d.score_eval(&Tensor::zeros(3, 256)).unwrap().shape(), (3, 1));
}

#[test]
fn gan_and_reconstruction_gradients_match_finite_differences() {
    let arch = DiscArch {
        input_dim: 16,
        patch_side: Some(4),
        hidden: vec![6, 6],
    };
    let d = disc(arch, 7);
    let params: Vec<Tensor<f64>> = d.params.iter().map(|p| p.value.clone()).collect();
    let mut rng = rng_from_seed(8);
    let mut patch = |n| Tensor::new(n, 16, (0..n * 16).map(|_| crate::rng::uniform(&mut rng)).collect());
    let (real, fake) = (patch(3), patch(3));
    let a = d.arch.clone();
    let err = grad_check(
        |tape, vars| {
            let bd = BoundDisc {
                arch: &a,
                vars: vars.to_vec(),
            };
            gan_discriminator_loss(&bd, tape.constant(real.clone()), tape.constant(fake.clone())).unwrap()
        },
        &params,
    );
    assert!(err <= 1e-3, "disc {err}");
    // Generator side: gradient with respect to the generated samples.
    let err = grad_check(
        |_, vars| {
            let bd = d.bind_frozen(vars[0].tape());
            gan_generator_loss(&bd, vars[0]).unwrap()
        },
        std::slice::from_ref(&fake),
    );
    assert!(err <= 1e-3, "gen {err}");
    let net = FeatureNet::<f64>::seeded(16);
    let err = grad_check(
        |_, vars| reconstruction_loss(vars[0], &real, &net).unwrap(),
        std::slice::from_ref(&fake),
    );
    assert!(err <= 1e-3, "rec {err}");
}

fn setup() -> (ToyDataset, TeacherModel<f32>, Stage2Models, Stage2Config) {
    let ds = generate_dataset("two-moons-conditional", 64, 9, Default::default()).unwrap();
    let teacher = init_teacher(arch(), 10);
    let student = StudentModel::init_from_teacher(&teacher);
    let cfg = Stage2Config::new(3, 8, 1e-3);
    let models = Stage2Models::init(student, &teacher, cfg.disc_arch(&ds), 11);
    (ds, teacher, models, cfg)
}

#[test]
fn regularizer_starts_as_teacher_copy() {
    let (_, teacher, models, _) = setup();
    assert!(models.regularizer.params.values_eq(&teacher.params));
}

#[test]
fn refinement_is_deterministic_and_routes_gradients() {
    let (ds, teacher, models, cfg) = setup();
    let teacher_before = teacher.clone();
    let (a, ra) = refine_student(models.student.clone(), &teacher, &ds, &cfg, 12).unwrap();
    let (b, rb) = refine_student(models.student.clone(), &teacher, &ds, &cfg, 12).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(a, b);
    assert_eq!(teacher, teacher_before);
    assert!(teacher.params.grads_all_zero());
    assert!(ra.iter().all(|r| r.discriminator >= 0.0));
}

fn one_student_grad(
    models: &mut Stage2Models,
    teacher: &TeacherModel<f32>,
    ds: &ToyDataset,
    cfg: &Stage2Config,
) -> f64 {
    let (x, lr) = ds.batch(&[0, 1, 2, 3, 4, 5]);
    let cond = crate::data::encode_batch(lr.data(), 1, 0.0, &mut rng_from_seed(0));
    let batch = Stage2Batch { x: &x, cond: &cond };
    let net = FeatureNet::seeded(2);
    let mut rng = rng_from_seed(derive_seed(13, "grad"));
    models.student.params.zero_grad();
    student_gradients(models, teacher, &batch, cfg, &ConstantWeight(1.0), &net, 0, &mut rng).unwrap();
    models.student.params.grad_norm()
}

#[test]
fn student_substep_leaves_discriminator_untouched_and_scales_with_weights() {
    let (ds, teacher, mut models, mut cfg) = setup();
    // Make the distillation term nonzero.
    models.regularizer.params.get_mut(0).value.data_mut()[0] += 0.5;
    let base = one_student_grad(&mut models, &teacher, &ds, &cfg);
    assert!(models.discriminator.params.grads_all_zero());
    assert!(models.regularizer.params.grads_all_zero());
    assert!(base > 0.0);
    cfg.weights = cfg.weights.scaled(2.0);
    let doubled = one_student_grad(&mut models, &teacher, &ds, &cfg);
    assert!(
        (doubled - 2.0 * base).abs() <= 1e-5 * base.max(1.0),
        "{doubled} vs {base}"
    );
}

#[test]
fn zero_weights_leave_student_unchanged() {
    let (ds, teacher, models, mut cfg) = setup();
    cfg.weights = cfg.weights.scaled(0.0);
    let before = models.student.clone();
    let (after, _) = refine_student(models.student, &teacher, &ds, &cfg, 14).unwrap();
    assert!(after.student.params.values_eq(&before.params));
}

#[test]
fn invalid_settings_are_rejected() {
    let (ds, teacher, models, mut cfg) = setup();
    cfg.weights.vsd = -1.0;
    assert!(matches!(
        refine_student(models.student.clone(), &teacher, &ds, &cfg, 1),
        Err(RefineError::InvalidWeight { name: "vsd", .. })
    ));
    let mut cfg = Stage2Config::new(1, 4, 1e-3);
    cfg.schedule = "cosine".into();
    assert!(matches!(
        refine_student(models.student, &teacher, &ds, &cfg, 1),
        Err(RefineError::UnknownName(_))
    ));
}
