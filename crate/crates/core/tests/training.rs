use caae_core::data::Dataset;
use caae_core::losses::{check_gradients, discriminator_loss, discriminator_loss_grad, GradCheckConfig, LossReport, LossWeights};
use caae_core::networks::{Caae, NetworkConfig, PerceptualExtractor, NETWORK_NAMES};
use caae_core::nn::{Mode, Network, Slot};
use caae_core::training::{
    generator_objective, run, sample_prior, ObjectiveOptions, Phase, RunOptions, TrainConfig, Trainer, LOSS_LOG,
};
use caae_core::{EmotionLabel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probe_config(batch_size: usize) -> TrainConfig {
    TrainConfig {
        network: NetworkConfig::probe(),
        batch_size,
        identity_subset: batch_size.min(16),
        seed: 11,
        checkpoint_every: 0,
        ..Default::default()
    }
}

fn probe_data(n: usize) -> Dataset {
    Dataset::synthetic(n, 3).unwrap().resized(16).unwrap()
}

fn snapshot<T: caae_core::Real>(net: &mut dyn Network<T>) -> Vec<(String, Tensor<T>)> {
    net.export_state()
}

#[test]
fn init_weights_follow_configured_normal() {
    let mut m = Caae::<f32>::new(&NetworkConfig::default(), 0).unwrap();
    let mut checked = 0;
    m.visit_state(&mut |name, slot| {
        let Slot::Param(p) = slot else { return };
        let v = p.value.data();
        if name.ends_with(".bias") || name.ends_with(".beta") {
            assert!(v.iter().all(|&x| x == 0.0), "{name} not zero");
        } else if name.ends_with(".gamma") {
            assert!(v.iter().all(|&x| x == 1.0), "{name} not one");
        } else if v.len() >= 10_000 {
            let n = v.len() as f64;
            let mean = v.iter().map(|&x| x as f64).sum::<f64>() / n;
            let std = (v.iter().map(|&x| (x as f64 - mean).powi(2)).sum::<f64>() / n).sqrt();
            assert!(mean.abs() < 0.002, "{name}: mean {mean}");
            assert!((std - 0.02).abs() < 0.002, "{name}: std {std}");
            checked += 1;
        }
    });
    assert!(checked >= 10, "only {checked} large weight tensors");
}

#[test]
fn init_is_seed_deterministic() {
    let cfg = NetworkConfig::probe();
    let mut a = Caae::<f32>::new(&cfg, 5).unwrap();
    let mut b = Caae::<f32>::new(&cfg, 5).unwrap();
    let mut c = Caae::<f32>::new(&cfg, 6).unwrap();
    assert_eq!(a.export_state(), b.export_state());
    assert_ne!(a.export_state(), c.export_state());
}

#[test]
fn prior_is_uniform_on_the_cube() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let z = sample_prior::<f64>(&mut rng, 100_000, 50);
    assert!(z.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    for d in 0..50 {
        let mean = (0..100_000).map(|i| z.data()[i * 50 + d]).sum::<f64>() / 100_000.0;
        assert!(mean.abs() < 0.02, "coordinate {d}: mean {mean}");
    }

    // Kolmogorov-Smirnov against U(-1, 1) on coordinate 0 of 10k samples.
    let mut xs: Vec<f64> = (0..10_000).map(|i| z.data()[i * 50]).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let cdf = (x + 1.0) / 2.0;
            (cdf - i as f64 / n).abs().max(((i + 1) as f64 / n - cdf).abs())
        })
        .fold(0.0, f64::max);
    // Asymptotic critical value at alpha = 0.01.
    assert!(d < 1.628 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn each_sub_update_touches_only_its_network() {
    let data = probe_data(8);
    let mut t = Trainer::<f32>::new(probe_config(8)).unwrap();
    let (x, y) = data.batch::<f32>(&(0..8).collect::<Vec<_>>());
    let nets = |t: &mut Trainer<f32>| {
        let mut out: Vec<Vec<(String, Tensor<f32>)>> =
            NETWORK_NAMES.iter().map(|n| snapshot(t.model.network_mut(n).unwrap())).collect();
        out.push(t.extractor.export_state());
        out
    };
    let mut before = nets(&mut t);
    let mut phases = Vec::new();
    t.train_step_observed(&x, &y, |phase, t| {
        let after = nets(t);
        let changed: Vec<bool> = before.iter().zip(&after).map(|(a, b)| a != b).collect();
        phases.push((phase, changed));
        before = after;
    })
    .unwrap();
    // Columns: encoder, generator, dz, dimg, extractor.
    assert_eq!(
        phases,
        vec![
            (Phase::LatentDiscriminator, vec![false, false, true, false, false]),
            (Phase::ImageDiscriminator, vec![false, false, false, true, false]),
            (Phase::EncoderGenerator, vec![true, true, false, false, false]),
        ]
    );
    assert_eq!(t.optimizer_steps(), [1, 1, 1, 1]);
}

#[test]
fn wrong_batch_size_rejected() {
    let data = probe_data(8);
    let mut t = Trainer::<f32>::new(probe_config(8)).unwrap();
    let (x, y) = data.batch::<f32>(&[0, 1, 2]);
    assert!(t.train_step(&x, &y).is_err());
}

#[test]
fn smoke_training_reduces_reconstruction_loss() {
    let data = probe_data(49);
    let mut t = Trainer::<f32>::new(probe_config(49)).unwrap();
    let (x, y) = data.batch::<f32>(&(0..49).collect::<Vec<_>>());
    let reports: Vec<LossReport> = (0..50).map(|_| t.train_step(&x, &y).unwrap()).collect();
    assert!(reports.iter().all(LossReport::is_finite));
    let (first, last) = (reports[0].rec, reports[49].rec);
    assert!(last < first, "L_rec {first} -> {last}");
}

fn read_log(dir: &std::path::Path) -> String {
    std::fs::read_to_string(dir.join(LOSS_LOG)).unwrap()
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = probe_data(20);
    let config = TrainConfig {
        steps: 40,
        checkpoint_every: 15,
        ..probe_config(8)
    };

    let full = tempfile::tempdir().unwrap();
    let mut a = Trainer::<f32>::new(config.clone()).unwrap();
    let opts = RunOptions {
        out_dir: full.path().into(),
        stop_after: None,
    };
    let summary = run(&mut a, &data, &opts, |_| {}).unwrap();
    assert_eq!(summary.final_step, 40);
    // 20 records in batches of 8: two batches per epoch.
    assert_eq!(a.epoch, 19);

    let split = tempfile::tempdir().unwrap();
    let mut b = Trainer::<f32>::new(config).unwrap();
    let opts = RunOptions {
        out_dir: split.path().into(),
        stop_after: Some(23),
    };
    run(&mut b, &data, &opts, |_| {}).unwrap();
    // Simulate a crash after the step-15 checkpoint: restart from it.
    let (mut c, progress) = Trainer::<f32>::resume(&split.path().join("step-0000015.caae")).unwrap();
    assert_eq!(progress.step, 15);
    let opts = RunOptions {
        out_dir: split.path().into(),
        stop_after: None,
    };
    run(&mut c, &data, &opts, |_| {}).unwrap();

    assert_eq!(read_log(full.path()), read_log(split.path()));
    assert_eq!(a.model.export_state(), c.model.export_state());
    assert_eq!(read_log(full.path()).lines().count(), 40);
}

#[test]
fn resume_rejects_a_different_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let config = TrainConfig {
        steps: 2,
        ..probe_config(8)
    };
    let mut t = Trainer::<f32>::new(config).unwrap();
    let opts = RunOptions {
        out_dir: dir.path().into(),
        stop_after: None,
    };
    let summary = run(&mut t, &probe_data(8), &opts, |_| {}).unwrap();
    let (mut r, _) = Trainer::<f32>::resume(&summary.checkpoint).unwrap();
    assert!(run(&mut r, &probe_data(9), &opts, |_| {}).is_err());
}

#[test]
fn run_rejects_too_small_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::<f32>::new(probe_config(8)).unwrap();
    let opts = RunOptions {
        out_dir: dir.path().into(),
        stop_after: None,
    };
    assert!(run(&mut t, &probe_data(5), &opts, |_| {}).is_err());
}

struct GradFixture {
    model: Caae<f64>,
    extractor: PerceptualExtractor<f64>,
    x: Tensor<f64>,
    labels: Vec<EmotionLabel>,
}

fn grad_fixture() -> GradFixture {
    let cfg = NetworkConfig::probe();
    let data = probe_data(4);
    let (x, labels) = data.batch::<f64>(&[0, 1, 2, 3]);
    GradFixture {
        model: Caae::new(&cfg, 2).unwrap(),
        extractor: PerceptualExtractor::from_config(&cfg.extractor).unwrap(),
        x,
        labels,
    }
}

fn grad_config() -> GradCheckConfig {
    GradCheckConfig {
        samples: 200,
        ..Default::default()
    }
}

fn only(weights: LossWeights) -> ObjectiveOptions {
    ObjectiveOptions {
        weights,
        objective: Default::default(),
        identity_subset: 2,
    }
}

const ZERO: LossWeights = LossWeights {
    rec: 0.0,
    iden: 0.0,
    z_adv: 0.0,
    img_adv: 0.0,
};

fn check_generator_term(weights: LossWeights, select: fn(&str) -> bool) {
    let GradFixture {
        mut model,
        mut extractor,
        x,
        labels,
    } = grad_fixture();
    let opts = only(weights);
    let report = check_gradients(
        &mut model,
        select,
        |m, backward| {
            generator_objective(m, &mut extractor, &x, &labels, &opts, Mode::TrainFrozen, backward)
                .unwrap()
                .total
        },
        &grad_config(),
    );
    assert!(report.checked >= 200 && report.nonzero >= 100, "{report:?}");
    report.into_result().unwrap();
}

fn encoder_or_generator(name: &str) -> bool {
    name.starts_with("encoder.") || name.starts_with("generator.")
}

#[test]
fn gradcheck_reconstruction() {
    check_generator_term(LossWeights { rec: 1.0, ..ZERO }, encoder_or_generator);
}

#[test]
fn gradcheck_identity() {
    check_generator_term(LossWeights { iden: 1.0, ..ZERO }, encoder_or_generator);
}

#[test]
fn gradcheck_latent_generator_side() {
    check_generator_term(LossWeights { z_adv: 1.0, ..ZERO }, |n| n.starts_with("encoder."));
}

#[test]
fn gradcheck_image_generator_side() {
    check_generator_term(LossWeights { img_adv: 1.0, ..ZERO }, encoder_or_generator);
}

#[test]
fn gradcheck_latent_discriminator() {
    let GradFixture { mut model, x, .. } = grad_fixture();
    // Batch statistics, as in training; running statistics at init make the
    // codes nearly identical across the batch.
    let z = model.encoder.forward(&x, Mode::TrainFrozen);
    let prior = sample_prior::<f64>(&mut ChaCha8Rng::seed_from_u64(4), 4, 50);
    let report = check_gradients(
        &mut model,
        |n| n.starts_with("dz."),
        |m, backward| {
            let p_real = m.dz.forward(&prior, Mode::TrainFrozen);
            if backward {
                m.dz.backward(&discriminator_loss_grad(&p_real, &p_real).0);
            }
            let p_fake = m.dz.forward(&z, Mode::TrainFrozen);
            if backward {
                m.dz.backward(&discriminator_loss_grad(&p_real, &p_fake).1);
            }
            discriminator_loss(&p_real, &p_fake).unwrap()
        },
        &grad_config(),
    );
    assert!(report.checked >= 200, "{report:?}");
    report.into_result().unwrap();
}

#[test]
fn gradcheck_image_discriminator() {
    let GradFixture { mut model, x, labels, .. } = grad_fixture();
    let x_gen = model.edit(&x, &labels);
    // Shuffle labels for the fakes so real and fake conditions differ.
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let fake_labels: Vec<EmotionLabel> = labels
        .iter()
        .map(|_| EmotionLabel::new(rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)).unwrap())
        .collect();
    let report = check_gradients(
        &mut model,
        |n| n.starts_with("dimg."),
        |m, backward| {
            let p_real = m.dimg.forward(&x, &labels, Mode::TrainFrozen);
            if backward {
                m.dimg.backward(&discriminator_loss_grad(&p_real, &p_real).0);
            }
            let p_fake = m.dimg.forward(&x_gen, &fake_labels, Mode::TrainFrozen);
            if backward {
                m.dimg.backward(&discriminator_loss_grad(&p_real, &p_fake).1);
            }
            discriminator_loss(&p_real, &p_fake).unwrap()
        },
        &grad_config(),
    );
    assert!(report.checked >= 200, "{report:?}");
    report.into_result().unwrap();
}
