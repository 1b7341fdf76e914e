use std::collections::BTreeMap;

use proptest::prelude::*;

use super::*;
use crate::error::Error;
use crate::numerics::{check_gradients, derive_seed, eval_with_grad, RngStream, Tensor};
use crate::scenegen::{generate_dataset, generate_scenario, Family, SceneConfig, Scenario};
use crate::trajcore::{
    inertial_reference, perturb_references, NormStats, PerturbationCov, Scaler, Trajectory, HORIZON, STEP,
};

fn scenario(seed: u64) -> Scenario {
    generate_scenario(seed, &SceneConfig::default(), "diffusion-test").unwrap()
}

/// Stats under which a zero normalized residual decodes to exactly zero metres.
fn centered_scaler() -> Scaler {
    Scaler::PointWise(NormStats::new([-4.0, -4.0], [3.5, 3.5], 1.0, 0.5).unwrap())
}

fn tiny_arch() -> DenoiserArch {
    DenoiserArch {
        hidden: 8,
        cond_dim: 6,
        time_dim: 4,
        ref_octaves: 1,
        ..DenoiserArch::default()
    }
}

fn random_model(seed: u64) -> DiffusionModel {
    DiffusionModel::new(
        DenoiserArch::default(),
        NoiseSchedule::default(),
        centered_scaler(),
        TargetKind::Residual,
        seed,
    )
    .unwrap()
}

fn condition(s: &Scenario, k: usize, seed: u64) -> ClusterCondition {
    let mut rng = RngStream::new(seed);
    let cluster = perturb_references(&s.ego, PerturbationCov::default(), k, HORIZON, STEP, &mut rng).unwrap();
    ClusterCondition {
        features: s.features.clone(),
        references: cluster.references,
    }
}

#[test]
fn default_schedule_matches_its_product() {
    let s = NoiseSchedule::default();
    assert_eq!(s.steps, 1000);
    assert_eq!(s.alpha_bar(0), 1.0);
    assert_eq!(s.alpha_bar(1), 1.0 - s.beta(1));
    // Oracle: the product written as a sum of logs.
    let log_sum: f64 = (0..1000).map(|i| (1.0 - (1e-4 + (2e-2 - 1e-4) * i as f64 / 999.0)).ln()).sum();
    assert!((s.alpha_bar(1000) - log_sum.exp()).abs() < 1e-15);
    assert!(s.alpha_bar(1000) < 1e-4);
    for i in 1..=1000 {
        assert!(s.alpha_bar(i) < s.alpha_bar(i - 1));
        assert!(s.beta(i) > 0.0 && s.beta(i) < 1.0);
        if i > 1 {
            assert!(s.beta(i) > s.beta(i - 1));
        }
    }
}

#[test]
fn invalid_schedules_are_rejected() {
    assert!(make_schedule(0, 1e-4, 2e-2).is_err());
    assert!(make_schedule(10, 0.0, 2e-2).is_err());
    assert!(make_schedule(10, 0.3, 0.2).is_err());
    assert!(make_schedule(10, 0.1, 1.0).is_err());
    assert!(make_schedule(1, 0.5, 0.5).is_ok());
}

#[test]
fn two_step_ddim_uses_uniform_stride() {
    let s = NoiseSchedule::default();
    assert_eq!(s.ddim_steps(2), vec![1000, 500]);
    assert_eq!(s.ddim_steps(1), vec![1000]);
    assert_eq!(s.ddim_steps(4), vec![1000, 750, 500, 250]);
    assert_eq!(make_schedule(5, 0.1, 0.2).unwrap().ddim_steps(2), vec![5, 3]);
}

#[test]
fn noising_limits() {
    let x0 = [0.3, -1.2, 0.0];
    let eps = [1.5, 0.25, -2.0];
    assert_eq!(mix(1.0, &x0, &eps), x0.to_vec());
    assert_eq!(mix(0.0, &x0, &eps), eps.to_vec());
}

#[test]
fn forward_noise_checks_its_inputs() {
    let s = NoiseSchedule::default();
    let x = Tensor::zeros(&[2, PLAN_DIM]);
    assert!(forward_noise(&x, 0, &x, &s).is_err());
    assert!(forward_noise(&x, 1001, &x, &s).is_err());
    assert!(matches!(
        forward_noise(&x, 3, &Tensor::zeros(&[1, PLAN_DIM]), &s),
        Err(Error::Shape(_))
    ));
    let eps = Tensor::full(&[2, PLAN_DIM], 1.0);
    let z = forward_noise(&x, 1000, &eps, &s).unwrap();
    assert!((z.data()[0] - (1.0 - s.alpha_bar(1000)).sqrt()).abs() < 1e-15);
}

#[test]
fn noising_marginals_match_monte_carlo() {
    let s = NoiseSchedule::default();
    let n = 100_000;
    let x0 = 0.8;
    for (j, step) in [1usize, 250, 500, 750, 1000].into_iter().enumerate() {
        let a = s.alpha_bar(step);
        let mut rng = RngStream::new(derive_seed(&[17, j as u64]));
        let x = Tensor::full(&[n, 1], x0);
        let eps = rng.sample_gaussian(&[n, 1]);
        let z = forward_noise(&x, step, &eps, &s).unwrap();
        let mean = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let scale = (a.sqrt() * x0).abs().max((1.0 - a).sqrt());
        assert!((mean - a.sqrt() * x0).abs() <= 0.02 * scale, "step {step}: mean {mean}");
        assert!((var / (1.0 - a) - 1.0).abs() <= 0.02, "step {step}: var {var}");

        // Standard-normal clean samples give unit marginal variance.
        let x = rng.sample_gaussian(&[n, 1]);
        let eps = rng.sample_gaussian(&[n, 1]);
        let z = forward_noise(&x, step, &eps, &s).unwrap();
        let mean = z.data().iter().sum::<f64>() / n as f64;
        let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var - 1.0).abs() <= 0.02, "step {step}: var {var}");
    }
}

#[test]
fn zero_denoiser_returns_the_references() {
    let s = scenario(11);
    let schedule = NoiseSchedule::default();
    let plans = predict_with(
        &ZeroDenoiser,
        &schedule,
        &centered_scaler(),
        TargetKind::Residual,
        &s,
        12,
        PerturbationCov::default(),
        DDIM_STEPS,
        &mut RngStream::new(5),
    )
    .unwrap();
    let cluster = perturb_references(&s.ego, PerturbationCov::default(), 12, HORIZON, STEP, &mut RngStream::new(5)).unwrap();
    assert_eq!(plans, cluster.references);

    let still = predict_with(
        &ZeroDenoiser,
        &schedule,
        &centered_scaler(),
        TargetKind::Residual,
        &s,
        4,
        PerturbationCov::ZERO,
        DDIM_STEPS,
        &mut RngStream::new(6),
    )
    .unwrap();
    let reference = inertial_reference(&s.ego, HORIZON, STEP).unwrap();
    assert!(still.iter().all(|p| *p == reference));
}

#[test]
fn ddim_is_deterministic_per_seed() {
    let s = scenario(2);
    let model = random_model(1);
    let run = |seed| predict_trajectories(&model, &s, 8, PerturbationCov::default(), &mut RngStream::new(seed)).unwrap();
    assert_eq!(run(42), run(42));
    assert_ne!(run(42), run(43));
}

#[test]
fn ddim_rejects_empty_input() {
    let cond = ClusterCondition {
        features: vec![0.0; 55],
        references: vec![],
    };
    assert!(ddim_sample(&ZeroDenoiser, &NoiseSchedule::default(), &cond, 2, &mut RngStream::new(0)).is_err());
}

#[test]
fn feature_dimension_mismatch_is_an_error() {
    let mut s = scenario(4);
    s.features.pop();
    let model = random_model(1);
    assert!(matches!(
        predict_trajectories(&model, &s, 3, PerturbationCov::default(), &mut RngStream::new(0)),
        Err(Error::Shape(_))
    ));
}

#[test]
fn permuting_references_permutes_predictions() {
    let s = scenario(9);
    let model = random_model(3);
    let cond = condition(&s, 6, 1);
    let noisy = RngStream::new(8).sample_gaussian(&[6, PLAN_DIM]);
    let out = model.predict_x0(&noisy, 500, &cond).unwrap();

    let perm = [4usize, 0, 5, 2, 1, 3];
    let permuted = ClusterCondition {
        features: cond.features.clone(),
        references: perm.iter().map(|&i| cond.references[i].clone()).collect(),
    };
    let rows: Vec<f64> = perm.iter().flat_map(|&i| noisy.row(i).to_vec()).collect();
    let out_p = model.predict_x0(&Tensor::new(vec![6, PLAN_DIM], rows).unwrap(), 500, &permuted).unwrap();
    for (r, &i) in perm.iter().enumerate() {
        for (a, b) in out_p.row(r).iter().zip(out.row(i)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn reference_encoding_distinguishes_members() {
    let s = scenario(9);
    let model = random_model(3);
    let cond = condition(&s, 2, 1);
    let noisy = Tensor::zeros(&[2, PLAN_DIM]);
    let out = model.predict_x0(&noisy, 500, &cond).unwrap();
    assert_ne!(out.row(0), out.row(1));
}

fn batch_inputs(model: &DiffusionModel, scenes: &[Scenario], k: usize, seed: u64) -> (DenoiserInputs, Tensor) {
    let mut rng = RngStream::new(seed);
    let arch = model.net.arch;
    let mut features = Vec::new();
    let (mut time, mut reference, mut noisy) = (Vec::new(), Vec::new(), Vec::new());
    for s in scenes {
        features.extend(crate::scenegen::scaled_features(&s.features));
        let cond = condition(s, k, rng.int_in(0, 1 << 40));
        for r in &cond.references {
            time.extend(timestep_embedding(rng.int_in(1, 1000) as usize, arch.time_dim));
            reference.extend(reference_encoding(&r.to_flat(), arch.ref_octaves));
        }
    }
    let rows = scenes.len() * k;
    noisy.extend(rng.sample_gaussian(&[rows, PLAN_DIM]).into_data());
    let target = rng.sample_gaussian(&[rows, PLAN_DIM]);
    let inputs = DenoiserInputs {
        features: Tensor::new(vec![scenes.len(), arch.feature_dim], features).unwrap(),
        scene_of: (0..rows).map(|r| r / k).collect(),
        time: Tensor::new(vec![rows, arch.time_dim], time).unwrap(),
        reference: Tensor::new(vec![rows, arch.ref_encoding_dim()], reference).unwrap(),
        noisy: Tensor::new(vec![rows, PLAN_DIM], noisy).unwrap(),
    };
    (inputs, target)
}

#[test]
fn every_parameter_receives_gradient_at_init() {
    let scenes = vec![scenario(1), scenario(2), scenario(3)];
    let mut model = random_model(7);
    let (inputs, target) = batch_inputs(&model, &scenes, 4, 2);
    let net = model.net.clone();
    eval_with_grad(&mut model.net.params, |tape, p| {
        let pred = net.forward(tape, p, &inputs)?;
        let t = tape.constant(target.clone());
        let d = tape.l1_distance(pred, t);
        Ok(tape.sum(d))
    })
    .unwrap();
    for p in model.net.params.iter() {
        assert!(p.grad.data().iter().any(|g| *g != 0.0), "{} has no gradient", p.name);
    }
}

#[test]
fn denoiser_gradients_match_finite_differences() {
    let scenes = vec![scenario(5), scenario(6)];
    for seed in 0..3 {
        let mut model =
            DiffusionModel::new(tiny_arch(), NoiseSchedule::default(), centered_scaler(), TargetKind::Residual, seed)
                .unwrap();
        let (inputs, target) = batch_inputs(&model, &scenes, 3, seed);
        let net = model.net.clone();
        let report = check_gradients(
            &mut model.net.params,
            |tape, p| {
                let pred = net.forward(tape, p, &inputs)?;
                let t = tape.constant(target.clone());
                let d = tape.l2_distance(pred, t);
                Ok(tape.mean(d))
            },
            1e-5,
            20,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{:?}", report.per_param);
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut model = random_model(12);
    model.net.params.round_to_f32();
    let mut lineage = BTreeMap::new();
    lineage.insert("dataset".to_string(), "abc".to_string());
    let ckpt = model.to_checkpoint("hash", lineage).unwrap();
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let back = DiffusionModel::from_checkpoint(&loaded).unwrap();
    let s = scenario(8);
    let run = |m: &DiffusionModel| predict_trajectories(m, &s, 5, PerturbationCov::default(), &mut RngStream::new(3)).unwrap();
    assert_eq!(run(&model), run(&back));
    assert_eq!(back.net.num_parameters(), model.net.num_parameters());
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let ckpt = random_model(1).to_checkpoint("h", BTreeMap::new()).unwrap();
    let bytes = ckpt.to_bytes().unwrap();

    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 4], &path),
        Err(Error::Format { .. })
    ));
    let mut wrong_magic = bytes.clone();
    wrong_magic[0] = b'X';
    assert!(Checkpoint::from_bytes(&wrong_magic, &path).is_err());
    let mut wrong_version = bytes.clone();
    wrong_version[4] = 9;
    assert!(matches!(
        Checkpoint::from_bytes(&wrong_version, &path),
        Err(Error::Version { found: 9, .. })
    ));
    assert!(matches!(Checkpoint::load(&dir.path().join("none")), Err(Error::MissingArtifact(_))));
    let mut other = ckpt.clone();
    other.manifest.kind = "ranker".into();
    assert!(DiffusionModel::from_checkpoint(&other).is_err());
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 4,
        k_train: 4,
        arch: DenoiserArch {
            hidden: 32,
            cond_dim: 16,
            ..DenoiserArch::default()
        },
        seed: 5,
        ..TrainConfig::default()
    }
}

#[test]
fn training_is_deterministic_and_starts_finite() {
    let data = generate_dataset(1, 12, &SceneConfig::default(), "tr").unwrap();
    let cfg = small_config(2);
    let scaler = fit_scaler(&data, TargetKind::Residual, true, cfg.gamma, cfg.epsilon0).unwrap();
    let a = train_denoiser(&data, scaler.clone(), TargetKind::Residual, &cfg).unwrap();
    let b = train_denoiser(&data, scaler, TargetKind::Residual, &cfg).unwrap();
    assert_eq!(a.losses.len(), 6);
    assert!(a.losses[0].is_finite() && a.losses[0] > 0.0);
    assert_eq!(a.losses, b.losses);
    let (ca, cb) = (
        a.model.to_checkpoint("h", BTreeMap::new()).unwrap(),
        b.model.to_checkpoint("h", BTreeMap::new()).unwrap(),
    );
    assert_eq!(ca.to_bytes().unwrap(), cb.to_bytes().unwrap());
    assert!(loss_log_csv(&a.losses).starts_with("step,loss\n0,"));
}

#[test]
fn raw_space_and_mse_losses_train() {
    let data = generate_dataset(2, 8, &SceneConfig::default(), "tr").unwrap();
    for (loss, space) in [(LossKind::Mse, LossSpace::Normalized), (LossKind::L1, LossSpace::Raw)] {
        let cfg = TrainConfig {
            loss,
            loss_space: space,
            ..small_config(1)
        };
        let scaler = fit_scaler(&data, TargetKind::Trajectory, false, cfg.gamma, cfg.epsilon0).unwrap();
        let out = train_denoiser(&data, scaler, TargetKind::Trajectory, &cfg).unwrap();
        assert!(out.losses.iter().all(|l| l.is_finite()));
    }
}

#[test]
fn divergence_names_the_step() {
    let data = generate_dataset(2, 8, &SceneConfig::default(), "tr").unwrap();
    let cfg = TrainConfig {
        lr: 1e300,
        clip_norm: 0.0,
        ..small_config(3)
    };
    let scaler = fit_scaler(&data, TargetKind::Residual, true, cfg.gamma, cfg.epsilon0).unwrap();
    match train_denoiser(&data, scaler, TargetKind::Residual, &cfg) {
        Err(Error::Diverged { step, .. }) => assert!(step >= 1),
        other => panic!("expected divergence, got {:?}", other.map(|o| o.losses)),
    }
}

#[test]
fn empty_training_set_is_an_error() {
    let cfg = small_config(1);
    assert!(matches!(
        train_denoiser(&[], centered_scaler(), TargetKind::Residual, &cfg),
        Err(Error::EmptyDataset)
    ));
    assert!(fit_scaler(&[], TargetKind::Residual, true, 1.0, 0.5).is_err());
}

/// Best average displacement over the candidates.
fn min_ade(plans: &[Trajectory], gt: &Trajectory) -> f64 {
    plans.iter().map(|p| p.ade(gt)).fold(f64::INFINITY, f64::min)
}

#[test]
fn single_scene_overfits() {
    let s = generate_dataset(4, 40, &SceneConfig::default(), "of")
        .unwrap()
        .into_iter()
        .find(|s| s.family == Family::Obstacle)
        .unwrap();
    let data = vec![s.clone()];
    let cfg = TrainConfig {
        epochs: 2000,
        batch_size: 1,
        seed: 1,
        ..TrainConfig::default()
    };
    let scaler = fit_scaler(&data, TargetKind::Residual, true, cfg.gamma, cfg.epsilon0).unwrap();
    let out = train_denoiser(&data, scaler, TargetKind::Residual, &cfg).unwrap();
    assert_eq!(out.losses.len(), 2000);
    let plans = predict_trajectories(&out.model, &s, 20, cfg.cov(), &mut RngStream::new(9)).unwrap();
    let ade = min_ade(&plans, &s.expert);
    assert!(ade < 0.1, "minADE {ade}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn pipeline_preserves_layout(seed in 0u64..1000, k in 1usize..12, steps in 1usize..5, sl in 0.0f64..2.0, st in 0.0f64..1.0) {
        let s = scenario(seed);
        let model = DiffusionModel::new(tiny_arch(), NoiseSchedule::default(), centered_scaler(), TargetKind::Residual, seed).unwrap();
        let plans = predict_with(
            &model, &model.schedule, &model.scaler, model.target, &s, k,
            PerturbationCov::from_std(sl, st), steps, &mut RngStream::new(seed),
        ).unwrap();
        prop_assert_eq!(plans.len(), k);
        for p in &plans {
            prop_assert_eq!(p.len(), HORIZON);
            prop_assert_eq!(p.dt, STEP);
            prop_assert!(p.waypoints.iter().all(|w| w.is_finite()));
        }
    }
}
