mod common;

use common::{tiny_encoder_config, tiny_instances};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use treadmatch::augment::AugmentConfig;
use treadmatch::encoder::Checkpoint;
use treadmatch::exec::Execution;
use treadmatch::training::{build_batch, train, TrainConfig, Trainer, TrainingSet, CHECKPOINT_FILE};
use treadmatch::Encoder;

fn config(steps: u64) -> TrainConfig {
    TrainConfig { steps, n_models_per_batch: 4, learning_rate: 1e-3, checkpoint_every: 0, seed: 11, ..TrainConfig::default() }
}

fn trainer(cfg: TrainConfig) -> Trainer {
    Trainer::new(Encoder::new(tiny_encoder_config(2)).unwrap(), cfg, Execution::Parallel).unwrap()
}

#[test]
fn resume_reproduces_the_next_step() {
    let set = TrainingSet::from_instances(tiny_instances(6, 1));
    let mut straight = trainer(config(6));
    for _ in 0..3 {
        straight.step(&set).unwrap();
    }
    let bytes = straight.checkpoint().to_bytes();
    let next: Vec<f64> = (0..3).map(|_| straight.step(&set).unwrap().loss).collect();

    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = Trainer::from_checkpoint(&ckpt, config(6), Execution::Parallel).unwrap();
    assert_eq!(resumed.step_count(), 3);
    let again: Vec<f64> = (0..3).map(|_| resumed.step(&set).unwrap().loss).collect();
    assert_eq!(next, again);
    assert_eq!(straight.encoder().params(), resumed.encoder().params());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let set = TrainingSet::from_instances(tiny_instances(4, 1));
    let mut t = trainer(TrainConfig { learning_rate: 0.0, ..config(3) });
    let before = t.encoder().params().to_vec();
    for _ in 0..3 {
        let r = t.step(&set).unwrap();
        assert!(r.grad_norm > 0.0);
    }
    assert_eq!(t.encoder().params(), &before[..]);
}

#[test]
fn zero_steps_writes_the_initial_weights() {
    let dir = tempfile::tempdir().unwrap();
    let set = TrainingSet::from_instances(tiny_instances(4, 1));
    let mut t = trainer(config(0));
    let init = t.encoder().params().to_vec();
    let out = train(&mut t, &set, dir.path()).unwrap();
    assert!(out.reports.is_empty());
    let loaded = Encoder::load(dir.path().join(CHECKPOINT_FILE), None).unwrap();
    assert_eq!(loaded.params(), &init[..]);
    let curve = std::fs::read_to_string(&out.loss_curve).unwrap();
    assert_eq!(curve.trim(), "step,loss,grad_norm");
}

#[test]
fn parallel_and_sequential_steps_agree() {
    let set = TrainingSet::from_instances(tiny_instances(4, 1));
    let mut a = trainer(config(2));
    let mut b = Trainer::new(Encoder::new(tiny_encoder_config(2)).unwrap(), config(2), Execution::Sequential).unwrap();
    for _ in 0..2 {
        assert_eq!(a.step(&set).unwrap().loss, b.step(&set).unwrap().loss);
    }
    assert_eq!(a.encoder().params(), b.encoder().params());
}

/// Repeating one fixed batch drives the loss towards its floor: each of the
/// 16 anchors has 3 positives, so the loss cannot go below 16 ln 3.
#[test]
fn fixed_batch_overfits_towards_the_floor() {
    let set = TrainingSet::from_instances(tiny_instances(4, 3));
    let cfg = TrainConfig { augment: AugmentConfig::disabled(), mask_area_fraction_range: [1.0, 1.0], ..config(0) };
    let batch = build_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut t = trainer(cfg);
    let floor = 16.0 * 3f64.ln();
    let mut losses = Vec::new();
    for _ in 0..150 {
        losses.push(t.train_step(&batch, &mut ChaCha8Rng::seed_from_u64(1)).unwrap().loss);
    }
    let first = losses[0];
    let last = *losses.last().unwrap();
    assert!(last >= floor - 1e-6, "loss {last} below floor {floor}");
    assert!(last - floor < 0.25 * (first - floor), "initial {first}, final {last}, floor {floor}");
}

/// Analytic parameter gradient against central differences of the batch loss.
#[test]
fn parameter_gradient_matches_finite_differences() {
    let set = TrainingSet::from_instances(tiny_instances(4, 5));
    let cfg = TrainConfig { mask_area_fraction_range: [0.5, 0.5], ..config(0) };
    let batch = build_batch(&set, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let mut t = trainer(cfg);
    let rng = || ChaCha8Rng::seed_from_u64(9);
    let (_, grads) = t.batch_gradient(&batch, &mut rng()).unwrap().expect("batch not skipped");
    let mut order: Vec<usize> = (0..grads.len()).collect();
    order.sort_by(|&a, &b| grads[b].abs().total_cmp(&grads[a].abs()));
    let mut worst = 0.0f64;
    for &i in order.iter().take(8) {
        let p0 = t.encoder().params()[i];
        let h = 1e-3f32.max(p0.abs() * 1e-3);
        t.encoder_mut().params_mut()[i] = p0 + h;
        let up = t.batch_gradient(&batch, &mut rng()).unwrap().unwrap().0;
        t.encoder_mut().params_mut()[i] = p0 - h;
        let down = t.batch_gradient(&batch, &mut rng()).unwrap().unwrap().0;
        t.encoder_mut().params_mut()[i] = p0;
        let fd = (up - down) / (2.0 * h as f64);
        let rel = (fd - grads[i] as f64).abs() / fd.abs().max(grads[i].abs() as f64).max(1e-3);
        worst = worst.max(rel);
    }
    // f32 forward passes bound the attainable agreement.
    assert!(worst < 0.05, "worst relative error {worst}");
}
