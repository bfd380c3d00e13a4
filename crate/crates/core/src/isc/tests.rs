use proptest::prelude::*;

use super::*;
use crate::data::{condition_dim, generate_dataset};
use crate::flow::{init_teacher, ExponentialField, LinearTimeField, PointMassField, VelocityArch, WrongQuadraticField};
use crate::nn::{grad_check, AdamWConfig, Tape, Tensor};
use crate::rng::rng_from_seed;

fn arch() -> VelocityArch {
    VelocityArch {
        state_dim: 2,
        cond_dim: condition_dim(1),
        embed_dim: 4,
        hidden: vec![8, 8],
    }
}

fn random_student(seed: u64) -> StudentModel<f64> {
    StudentModel::new(arch(), &mut rng_from_seed(seed))
}

/// Output ≡ `c` regardless of input.
fn constant_student(c: &[f64]) -> StudentModel<f64> {
    let mut m = random_student(1);
    let body = m.params.len() - 2;
    m.params
        .get_mut(body - 2)
        .value
        .data_mut()
        .iter_mut()
        .for_each(|x| *x = 0.0);
    m.params.get_mut(body - 1).value = Tensor::new(1, c.len(), c.to_vec());
    m
}

fn batch(n: usize, seed: u64) -> (Tensor<f64>, Tensor<f64>) {
    let mut rng = rng_from_seed(seed);
    let z = Tensor::new(n, 2, (0..2 * n).map(|_| crate::rng::normal(&mut rng)).collect());
    let c = Tensor::new(n, 2, (0..n).flat_map(|i| [0.1 * i as f64, 1.0]).collect());
    (z, c)
}

#[test]
fn interval_endpoints() {
    let a = Interval::from_lambda(0.2, 0.9, 0.0);
    assert_eq!(a.s, 0.9);
    let b = Interval::from_lambda(0.2, 0.9, 1.0);
    assert_eq!(b.s, 0.2);
    let p = Interval::point(0.4);
    assert_eq!((p.r, p.s, p.t), (0.4, 0.4, 0.4));
}

#[test]
fn sampled_intervals_are_ordered_and_lambda_uniform() {
    let mut rng = rng_from_seed(7);
    let mut lambda_sum = 0.0;
    let mut full = 0usize;
    for _ in 0..10_000 {
        let iv = sample_interval(&mut rng);
        assert!(0.0 <= iv.r && iv.r <= iv.s && iv.s <= iv.t && iv.t <= 1.0, "{iv:?}");
        assert!(((1.0 - iv.lambda) * iv.t + iv.lambda * iv.r - iv.s).abs() <= 1e-9);
        if iv.t > iv.r {
            assert!(((iv.t - iv.s) / (iv.t - iv.r) - iv.lambda).abs() <= 1e-9);
        }
        lambda_sum += iv.lambda;
        full += usize::from(iv.r == 0.0 && iv.t == 1.0);
    }
    let mean = lambda_sum / 10_000.0;
    assert!((0.49..=0.51).contains(&mean), "{mean}");
    let frac = full as f64 / 10_000.0;
    assert!((0.235..=0.265).contains(&frac), "{frac}");
}

#[test]
fn backward_integrate_examples() {
    let z = Tensor::new(1, 1, vec![1.0]);
    assert_eq!(
        backward_integrate(&z, &[0.5], &[1.0], &Tensor::new(1, 1, vec![2.0])).item(),
        0.0
    );
    assert_eq!(
        backward_integrate(&z, &[0.7], &[0.7], &Tensor::new(1, 1, vec![5.0])).item(),
        1.0
    );
    assert_eq!(
        backward_integrate(&z, &[0.1], &[0.9], &Tensor::new(1, 1, vec![0.0])).item(),
        1.0
    );
}

#[test]
fn isc_loss_vanishes_for_constant_student() {
    let m = constant_student(&[0.7, -1.3]);
    let (z, c) = batch(16, 3);
    let mut rng = rng_from_seed(4);
    for _ in 0..20 {
        let ivs: Vec<_> = (0..16).map(|_| sample_interval(&mut rng)).collect();
        let tape = Tape::new();
        let l = isc_loss(&m.bind(&tape), &z, &ivs, &c).unwrap().value().item();
        assert!(l <= 1e-28, "{l}");
    }
}

#[test]
fn isc_loss_vanishes_at_lambda_zero() {
    let m = random_student(5);
    let (z, c) = batch(8, 6);
    let ivs: Vec<_> = (0..8)
        .map(|i| Interval::from_lambda(0.05 * i as f64, 0.9, 0.0))
        .collect();
    let tape = Tape::new();
    assert_eq!(isc_loss(&m.bind(&tape), &z, &ivs, &c).unwrap().value().item(), 0.0);
}

/// The splitting loss evaluated on an analytic field instead of a network.
fn field_isc_loss(field: &dyn MeanVelocity, z: &[f64], iv: Interval) -> f64 {
    let u2 = field.mean_velocity(z, iv.s, iv.t);
    let z_s: Vec<f64> = z.iter().zip(&u2).map(|(x, u)| x - (iv.t - iv.s) * u).collect();
    let u1 = field.mean_velocity(&z_s, iv.r, iv.s);
    let pred = field.mean_velocity(z, iv.r, iv.t);
    (0..z.len())
        .map(|i| (pred[i] - ((1.0 - iv.lambda) * u1[i] + iv.lambda * u2[i])).powi(2))
        .sum()
}

#[test]
fn exact_average_of_linear_field_has_zero_isc_loss() {
    // u = t + r is the average of v = 2τ.
    let f = LinearTimeField { slope: 2.0 };
    let mut rng = rng_from_seed(8);
    for _ in 0..1000 {
        let iv = sample_interval(&mut rng);
        assert!(field_isc_loss(&f, &[0.3, -0.2], iv) <= 1e-10);
    }
    assert!(isc_residual_scan(&f, 1000, 2, &mut rng) <= 1e-10);
}

#[test]
fn residual_scan_examples() {
    let mut rng = rng_from_seed(9);
    let c = crate::flow::ConstantField { value: 1.5 };
    assert!(isc_residual_scan(&c, 200, 3, &mut rng) <= 1e-15);
    let wrong = isc_residual(&WrongQuadraticField, &[0.0], Interval::from_lambda(0.0, 1.0, 0.5));
    assert!((wrong - 0.375).abs() < 1e-12, "{wrong}");
    assert!(isc_residual_scan(&WrongQuadraticField, 1000, 1, &mut rng) > 0.01);
    assert!(isc_residual_scan(&ExponentialField { rate: 0.8 }, 1000, 2, &mut rng) <= 1e-12);
}

#[test]
fn one_step_sampling_examples() {
    let (eps, c) = batch(5, 10);
    let zero = constant_student(&[0.0, 0.0]);
    assert_eq!(one_step_sample(&zero, &eps, &c).unwrap(), eps);
    let k = constant_student(&[0.25, -0.5]);
    let one = one_step_sample(&k, &eps, &c).unwrap();
    assert_eq!(multi_step_sample(&k, &eps, &c, 1).unwrap(), one);
    for steps in [2, 3, 4, 8] {
        let many = multi_step_sample(&k, &eps, &c, steps).unwrap();
        for (a, b) in many.data().iter().zip(one.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let m = random_student(11);
    assert_eq!(
        multi_step_sample(&m, &eps, &c, 1).unwrap(),
        one_step_sample(&m, &eps, &c).unwrap()
    );
}

#[test]
fn point_mass_average_velocity_lands_on_target() {
    // Along the straight path to x₀ the average velocity at t = 1 is ε − x₀.
    let f = PointMassField { target: 0.4 };
    for eps in [-2.0, 0.0, 0.3, 1.7] {
        let u = f.mean_velocity(&[eps], 0.0, 1.0)[0];
        assert!((eps - u - 0.4).abs() < 1e-15);
    }
}

fn compose_two(field: &dyn MeanVelocity, eps: &[f64], s: f64) -> Vec<f64> {
    let u2 = field.mean_velocity(eps, s, 1.0);
    let z_s: Vec<f64> = eps.iter().zip(&u2).map(|(x, u)| x - (1.0 - s) * u).collect();
    let u1 = field.mean_velocity(&z_s, 0.0, s);
    z_s.iter().zip(&u1).map(|(x, u)| x - s * u).collect()
}

proptest! {
    #[test]
    fn one_step_equals_two_step_composition(eps in -3.0f64..3.0, s in 0.01f64..0.99, rate in -1.5f64..1.5) {
        let fields: [&dyn MeanVelocity; 3] = [
            &ExponentialField { rate },
            &LinearTimeField { slope: rate },
            &PointMassField { target: rate },
        ];
        for f in fields {
            let one = eps - f.mean_velocity(&[eps], 0.0, 1.0)[0];
            let two = compose_two(f, &[eps], s)[0];
            let resid = isc_residual(f, &[eps], Interval::from_lambda(0.0, 1.0, 1.0 - s));
            prop_assert!((one - two).abs() <= 2.0 * resid + 1e-6);
            prop_assert!((one - two).abs() <= 1e-6);
        }
    }
}

#[test]
fn student_from_teacher_matches_teacher_on_the_diagonal() {
    let teacher = init_teacher(arch(), 12).cast::<f64>();
    let student = StudentModel::init_from_teacher(&teacher);
    let (z, c) = batch(10, 13);
    let t: Vec<f64> = (0..10).map(|i| i as f64 / 9.0).collect();
    let tape = Tape::new();
    let l = boundary_loss(&student.bind(&tape), &teacher, &z, &t, &c, None).unwrap();
    assert_eq!(l.value().item(), 0.0);
    let tape = Tape::new();
    let l = boundary_loss(&student.bind(&tape), &teacher, &z, &t, &c, Some(4.5)).unwrap();
    assert!(l.value().item() > 0.0);
}

#[test]
fn isc_target_is_detached() {
    let m = random_student(14);
    let (z, c) = batch(6, 15);
    let mut rng = rng_from_seed(16);
    let ivs: Vec<_> = (0..6).map(|_| sample_interval(&mut rng)).collect();

    let tape = Tape::new();
    let bound = m.bind(&tape);
    let loss = isc_loss(&bound, &z, &ivs, &c).unwrap();
    let g_in_graph = tape.backward(loss).unwrap();

    let target = {
        let tape = Tape::new();
        let frozen = m.bind_frozen(&tape);
        isc_target(&frozen, tape.constant(z.clone()), &ivs, tape.constant(c.clone()))
            .unwrap()
            .value()
    };
    let tape2 = Tape::new();
    let bound2 = m.bind(&tape2);
    let loss2 = isc_loss_with_target(&bound2, &z, &ivs, &c, &target).unwrap();
    let g_external = tape2.backward(loss2).unwrap();
    for (a, b) in bound.vars.iter().zip(&bound2.vars) {
        assert_eq!(g_in_graph.wrt(*a), g_external.wrt(*b));
    }
}

#[test]
fn isc_and_boundary_gradients_match_finite_differences() {
    let m = random_student(17);
    let teacher = init_teacher(arch(), 18).cast::<f64>();
    let (z, c) = batch(3, 19);
    let mut rng = rng_from_seed(20);
    let ivs: Vec<_> = (0..3).map(|_| sample_interval(&mut rng)).collect();
    let target = {
        let tape = Tape::new();
        let frozen = m.bind_frozen(&tape);
        isc_target(&frozen, tape.constant(z.clone()), &ivs, tape.constant(c.clone()))
            .unwrap()
            .value()
    };
    let params: Vec<Tensor<f64>> = m.params.iter().map(|p| p.value.clone()).collect();
    let a = m.arch.clone();
    let err = grad_check(
        |_, vars| {
            let s = BoundStudent {
                arch: &a,
                vars: vars.to_vec(),
            };
            isc_loss_with_target(&s, &z, &ivs, &c, &target).unwrap()
        },
        &params,
    );
    assert!(err <= 1e-3, "isc {err}");
    let err = grad_check(
        |_, vars| {
            let s = BoundStudent {
                arch: &a,
                vars: vars.to_vec(),
            };
            boundary_loss(&s, &teacher, &z, &[0.2, 0.5, 0.95], &c, Some(4.5)).unwrap()
        },
        &params,
    );
    assert!(err <= 1e-3, "boundary {err}");
}

#[test]
fn branch_rules() {
    let reg = branch_rule_registry();
    let alg = reg.get("algorithm").unwrap();
    let prose = reg.get("prose").unwrap();
    assert_eq!(alg.choose(0.3, 0.6), Branch::Split);
    assert_eq!(prose.choose(0.3, 0.6), Branch::Boundary);
    let mut rng = rng_from_seed(21);
    assert!(simulate_branches(alg.as_ref(), 1.0, 500, &mut rng)
        .iter()
        .all(|b| *b == Branch::Split));
    assert!(simulate_branches(alg.as_ref(), 0.0, 500, &mut rng)
        .iter()
        .all(|b| *b == Branch::Boundary));
    assert!(reg.get("coin").is_err());
}

fn tiny_config(iterations: u64) -> Stage1Config {
    Stage1Config::new(iterations, 8, AdamWConfig::with_lr(1e-3))
}

#[test]
fn stage1_training_is_deterministic_and_follows_p() {
    let ds = generate_dataset("two-moons-conditional", 64, 3, Default::default()).unwrap();
    let teacher = init_teacher(arch(), 22);
    let (s1, r1) = train_student(&teacher, &ds, &tiny_config(30), 5).unwrap();
    let (s2, r2) = train_student(&teacher, &ds, &tiny_config(30), 5).unwrap();
    assert_eq!(r1, r2);
    assert!(s1.params.values_eq(&s2.params));

    let mut all_split = tiny_config(20);
    all_split.branch_probability = 1.0;
    let (_, r) = train_student(&teacher, &ds, &all_split, 5).unwrap();
    assert_eq!(split_fraction(&r), 1.0);
    all_split.branch_probability = 0.0;
    let (_, r) = train_student(&teacher, &ds, &all_split, 5).unwrap();
    assert_eq!(split_fraction(&r), 0.0);

    let mut bad = tiny_config(1);
    bad.branch_probability = 1.5;
    assert!(matches!(
        train_student(&teacher, &ds, &bad, 5),
        Err(IscError::InvalidProbability(_))
    ));
}

#[test]
fn boundary_steps_start_at_zero_loss() {
    let ds = generate_dataset("two-moons-conditional", 64, 3, Default::default()).unwrap();
    let teacher = init_teacher(arch(), 23);
    let mut cfg = tiny_config(1);
    cfg.branch_probability = 0.0;
    let (_, r) = train_student(&teacher, &ds, &cfg, 1).unwrap();
    assert_eq!(r[0].loss, 0.0);
}

#[test]
fn checkpoint_shapes_are_validated() {
    let m = random_student(24);
    assert!(StudentModel::from_params(arch(), m.params.clone()).is_ok());
    let mut wrong = arch();
    wrong.embed_dim = 6;
    assert!(StudentModel::from_params(wrong, m.params.clone()).is_err());
}
