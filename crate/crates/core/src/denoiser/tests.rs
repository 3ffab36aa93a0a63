use super::*;
use crate::diffusion::training_pair;
use crate::gaussian_field;
use crate::phantom::{phantom_dataset, PhantomSpec};
use crate::schedule::{alpha_schedule, build_bmap_stack, AlphaKind, BMapSpec};

fn noise(seed: u64, h: usize, w: usize) -> ImageGrid {
    gaussian_field(&mut RngStream::new(seed, &[7]), h, w).unwrap()
}

fn example(seed: u64, t: usize, h: usize, w: usize) -> TrainingExample {
    TrainingExample {
        t,
        x_t: noise(seed, h, w),
        target_eps: noise(seed + 1000, h, w),
    }
}

#[test]
fn init_is_deterministic_and_seed_sensitive() {
    let a = denoiser_init(16, 16, 8, 50, 3).unwrap();
    let b = denoiser_init(16, 16, 8, 50, 3).unwrap();
    let c = denoiser_init(16, 16, 8, 50, 4).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
}

#[test]
fn parameter_count_matches_layout() {
    let p = denoiser_init(16, 16, 8, 50, 0).unwrap();
    // 8*2*9+8, 8*8*9+8 twice, 8*9+1, 50*8
    assert_eq!(p.parameter_count(), 152 + 584 + 584 + 73 + 400);
    assert_eq!(p.parameter_count(), 1793);
    let names: Vec<&str> = p.tensors().iter().map(|t| t.name).collect();
    assert_eq!(names, TENSOR_NAMES);
}

#[test]
fn fresh_network_predicts_zero() {
    let p = denoiser_init(16, 16, 8, 50, 1).unwrap();
    for t in [1, 25, 50] {
        let out = denoiser_forward(&p, &noise(t as u64, 16, 16), t).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn forward_is_pure() {
    let mut p = denoiser_init(8, 8, 4, 5, 1).unwrap();
    randomize(&mut p, 0.3, &mut RngStream::new(2, &[]));
    let x = noise(5, 8, 8);
    let a = denoiser_forward(&p, &x, 3).unwrap();
    let b = denoiser_forward(&p, &x, 3).unwrap();
    assert_eq!(a, b);
    assert!(a.is_finite());
}

#[test]
fn forward_rejects_bad_inputs() {
    let p = denoiser_init(8, 8, 4, 5, 1).unwrap();
    assert!(matches!(
        denoiser_forward(&p, &noise(1, 8, 9), 1),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        denoiser_forward(&p, &noise(1, 8, 8), 0),
        Err(Error::Index { .. })
    ));
    assert!(matches!(
        denoiser_forward(&p, &noise(1, 8, 8), 6),
        Err(Error::Index { .. })
    ));
    assert!(DenoiserParams::zeros(4, 8, 4, 5).is_err());
    assert!(DenoiserParams::zeros(8, 8, 2, 5).is_err());
    assert!(DenoiserParams::zeros(8, 8, 4, 0).is_err());
}

#[test]
fn output_weight_perturbation_changes_output_linearly() {
    let mut p = denoiser_init(8, 8, 4, 5, 11).unwrap();
    let x = noise(3, 8, 8);
    let base = denoiser_forward(&p, &x, 2).unwrap();
    // the output bias is the last parameter
    let last = p.parameter_count() - 1;
    p.set_flat(last, 1e-4);
    let moved = denoiser_forward(&p, &x, 2).unwrap();
    for (a, b) in base.data().iter().zip(moved.data()) {
        assert!((b - a - 1e-4).abs() < 1e-15);
    }
}

#[test]
fn perfect_prediction_has_zero_loss_and_gradient() {
    let mut p = denoiser_init(8, 8, 4, 5, 2).unwrap();
    randomize(&mut p, 0.2, &mut RngStream::new(9, &[]));
    let x = noise(4, 8, 8);
    let target = denoiser_forward(&p, &x, 4).unwrap();
    let batch = [TrainingExample {
        t: 4,
        x_t: x,
        target_eps: target,
    }];
    let (loss, grads) = loss_and_grads(&p, &batch).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads
        .tensors()
        .iter()
        .all(|t| t.data.iter().all(|&g| g == 0.0)));
}

#[test]
fn zero_network_loss_is_target_power() {
    let p = denoiser_init(32, 32, 4, 5, 2).unwrap();
    let batch: Vec<_> = (0..8)
        .map(|i| example(i, 1 + i as usize % 5, 32, 32))
        .collect();
    let (loss, _) = loss_and_grads(&p, &batch).unwrap();
    // mean of 8192 squared standard normals: sd about sqrt(2 / 8192)
    assert!(
        (loss - 1.0).abs() < 5.0 * (2.0f64 / 8192.0).sqrt(),
        "loss {loss}"
    );
}

#[test]
fn empty_batch_is_rejected() {
    let p = denoiser_init(8, 8, 4, 5, 2).unwrap();
    assert!(matches!(loss_and_grads(&p, &[]), Err(Error::Empty(_))));
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut p = denoiser_init(8, 8, 4, 3, 5).unwrap();
    randomize(&mut p, 0.3, &mut RngStream::new(6, &[]));
    assert!(p.parameter_count() <= 2000);
    let batch = [example(1, 1, 8, 8), example(2, 3, 8, 8)];
    let report = gradient_check(&p, &batch, 1e-5).unwrap();
    assert_eq!(report.parameters, p.parameter_count());
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn gradients_match_at_initialization() {
    // zero output layer: only the output layer receives gradient
    let p = denoiser_init(8, 8, 4, 3, 5).unwrap();
    let batch = [example(1, 2, 8, 8)];
    let report = gradient_check(&p, &batch, 1e-5).unwrap();
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}

#[test]
fn adam_zero_gradient_is_a_no_op() {
    let p0 = denoiser_init(8, 8, 4, 3, 1).unwrap();
    let mut p = p0.clone();
    let mut state = OptimizerState::new(&p, DEFAULT_LR);
    for _ in 0..3 {
        adam_step(&mut p, &p0.zeros_like(), &mut state).unwrap();
    }
    assert_eq!(p, p0);
    assert_eq!(state.step(), 3);
}

#[test]
fn adam_first_step_moves_every_weight_by_lr() {
    let p0 = denoiser_init(8, 8, 4, 3, 1).unwrap();
    let mut p = p0.clone();
    let mut grads = p0.zeros_like();
    for t in grads.tensors_mut() {
        t.data.iter_mut().for_each(|g| *g = 0.5);
    }
    let mut state = OptimizerState::new(&p, 1e-3);
    adam_step(&mut p, &grads, &mut state).unwrap();
    for i in 0..p.parameter_count() {
        let step = p0.get_flat(i) - p.get_flat(i);
        assert!((step - 1e-3).abs() < 1e-10, "index {i}: {step}");
    }
}

#[test]
fn adam_rejects_mismatched_state() {
    let a = denoiser_init(8, 8, 4, 3, 1).unwrap();
    let mut b = denoiser_init(8, 8, 5, 3, 1).unwrap();
    let mut state = OptimizerState::new(&a, 1e-3);
    let grads = b.zeros_like();
    assert!(adam_step(&mut b, &grads, &mut state).is_err());
}

fn tiny_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        alpha_kind: AlphaKind::Cosine,
        steps: 10,
        bmap: BMapSpec::new(8, 8, 0.04),
        hidden: 4,
        batch_size: 2,
        iterations,
        lr: 1e-3,
        seed: 17,
    }
}

#[test]
fn zero_iterations_returns_initial_weights() {
    let cfg = tiny_config(0);
    let data = phantom_dataset(2, &PhantomSpec::new(8, 8, 0.05), 1).unwrap();
    let out = train(&cfg, &data).unwrap();
    assert_eq!(out.params, denoiser_init(8, 8, 4, 10, 17).unwrap());
    assert!(out.losses.is_empty());
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(5);
    let data = phantom_dataset(3, &PhantomSpec::new(8, 8, 0.05), 1).unwrap();
    let a = train(&cfg, &data).unwrap();
    let b = train(&cfg, &data).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.losses, b.losses);
    assert_eq!(a.losses.len(), 5);
    assert!(a.params.is_finite());
}

#[test]
fn training_errors() {
    let cfg = tiny_config(1);
    assert!(matches!(train(&cfg, &[]), Err(Error::Empty(_))));
    let wrong = phantom_dataset(1, &PhantomSpec::new(9, 8, 0.05), 1).unwrap();
    assert!(matches!(train(&cfg, &wrong), Err(Error::Dimension(_))));
    let mut zero_batch = cfg.clone();
    zero_batch.batch_size = 0;
    let data = phantom_dataset(1, &PhantomSpec::new(8, 8, 0.05), 1).unwrap();
    assert!(train(&zero_batch, &data).is_err());
}

#[test]
fn progress_sees_every_iteration() {
    let cfg = tiny_config(4);
    let data = phantom_dataset(2, &PhantomSpec::new(8, 8, 0.05), 1).unwrap();
    let mut seen = Vec::new();
    let out = train_with_progress(&cfg, &data, |i, l| seen.push((i, l))).unwrap();
    assert_eq!(seen.len(), 4);
    for (k, (i, l)) in seen.iter().enumerate() {
        assert_eq!(*i, k);
        assert_eq!(*l, out.losses[k]);
    }
}

#[test]
fn training_pairs_feed_the_loss() {
    let sched = alpha_schedule(AlphaKind::Cosine, 10).unwrap();
    let stack = build_bmap_stack(&sched, &BMapSpec::new(8, 8, 0.04)).unwrap();
    let x0 = phantom_dataset(1, &PhantomSpec::new(8, 8, 0.05), 1)
        .unwrap()
        .remove(0);
    let mut rng = RngStream::new(1, &[]);
    let (t, x_t, target_eps) = training_pair(&x0, &sched, &stack, &mut rng).unwrap();
    let p = denoiser_init(8, 8, 4, 10, 1).unwrap();
    let (loss, _) = loss_and_grads(&p, &[TrainingExample { t, x_t, target_eps }]).unwrap();
    assert!(loss.is_finite() && loss > 0.0);
}
