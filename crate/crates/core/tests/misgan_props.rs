mod common;

use common::{ring_data, short_run, small_model};
use misgan_lab::imputer::{ImputerConfig, ImputerModel};
use misgan_lab::misgan::{loss_data, loss_mask, normal_tensor, train, TrainError, Trainer};
use misgan_lab::nn::Network;
use misgan_lab::rng::{stream, Stream};
use misgan_lab::tensor::Tensor;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn within(net: &Network, c: f64) -> bool {
    net.params().all(|p| p.data().iter().all(|v| v.abs() <= c))
}

fn permute_rows(t: &Tensor, order: &[usize]) -> Tensor {
    let rows: Vec<Vec<f64>> = order.iter().map(|&i| t.row(i).to_vec()).collect();
    Tensor::from_rows(&rows).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn critics_stay_clipped(seed in any::<u64>(), clip in 0.005f64..0.2, ambient in any::<bool>()) {
        let data = ring_data(seed, 64, 0.5);
        let mut cfg = short_run(seed, 3);
        cfg.clip_c = clip;
        cfg.ambientgan_mode = ambient;
        let mut t = Trainer::new(small_model(seed, 2), cfg).unwrap();
        for step in 1..=3 {
            t.run(&data, None, step).unwrap();
            prop_assert!(within(&t.model.d_x, clip));
            if !ambient {
                prop_assert!(within(&t.model.d_m, clip));
            }
        }
    }

    #[test]
    fn losses_ignore_batch_order(seed in any::<u64>()) {
        let mut rng = stream(seed, Stream::Batch);
        let model = small_model(seed, 2);
        let data = ring_data(seed, 12, 0.5);
        let idx: Vec<usize> = (0..12).collect();
        let (x, m) = data.batch(&idx);
        let z = normal_tensor(&mut rng, 12, 4);
        let eps = normal_tensor(&mut rng, 12, 4);
        let mut order = idx.clone();
        order.shuffle(&mut rng);
        let (xp, mp, zp, ep) = (
            permute_rows(&x, &order),
            permute_rows(&m, &order),
            permute_rows(&z, &order),
            permute_rows(&eps, &order),
        );
        let lm = loss_mask(&model.d_m, &model.g_m, &m, &eps).unwrap();
        let lm_p = loss_mask(&model.d_m, &model.g_m, &mp, &ep).unwrap();
        prop_assert!((lm - lm_p).abs() <= 1e-12 * lm.abs().max(1e-12));
        let lx = loss_data(&model.d_x, &model.g_x, &model.g_m, &x, &m, &z, &eps, 0.0).unwrap();
        let lx_p = loss_data(&model.d_x, &model.g_x, &model.g_m, &xp, &mp, &zp, &ep, 0.0).unwrap();
        prop_assert!((lx - lx_p).abs() <= 1e-12 * lx.abs().max(1e-12));
    }

    #[test]
    fn generated_masks_stay_in_unit_interval(seed in any::<u64>(), count in 0usize..50) {
        let model = small_model(seed, 3);
        let ms = model.sample_masks(&mut stream(seed, Stream::Epsilon), count).unwrap();
        prop_assert_eq!(ms.rows(), count);
        prop_assert!(ms.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }
}

#[test]
fn zero_alpha_removes_data_term_from_mask_generator() {
    let data = ring_data(5, 64, 0.5);
    let mut model = small_model(5, 2);
    model.alpha = 0.0;
    let mut t = Trainer::new(model, short_run(5, 2)).unwrap();
    t.run(&data, None, 2).unwrap();
    let g = t.mask_generator_gradient(&data).unwrap();
    assert!(g
        .from_loss_data
        .iter()
        .all(|p| p.data().iter().all(|&v| v == 0.0)));
    for (a, b) in g.total.iter().zip(&g.from_loss_mask) {
        assert_eq!(a, b);
    }
    assert!(g
        .from_loss_mask
        .iter()
        .any(|p| p.data().iter().any(|&v| v != 0.0)));
}

#[test]
fn zero_learning_rate_freezes_every_network() {
    let data = ring_data(2, 64, 0.5);
    let model = small_model(2, 2);
    let mut cfg = short_run(2, 4);
    cfg.learning_rate = 0.0;
    // Clipping alone could move critic weights, so start inside the box.
    cfg.clip_c = 10.0;
    let (after, log) = train(model.clone(), &data, &cfg, None).unwrap();
    assert_eq!(log.len(), 4);
    assert_eq!(after, model);
}

#[test]
fn same_seed_same_log() {
    let data = ring_data(8, 128, 0.5);
    let run = || train(small_model(8, 2), &data, &short_run(8, 5), None).unwrap();
    let (m1, l1) = run();
    let (m2, l2) = run();
    assert_eq!(l1, l2);
    assert_eq!(m1, m2);
    let (_, l3) = train(small_model(8, 2), &data, &short_run(9, 5), None).unwrap();
    assert_ne!(l1, l3);
}

#[test]
fn ambient_mode_never_touches_mask_critic() {
    let data = ring_data(4, 64, 0.5);
    let model = small_model(4, 2);
    let mut cfg = short_run(4, 4);
    cfg.ambientgan_mode = true;
    let (after, log) = train(model.clone(), &data, &cfg, None).unwrap();
    assert_eq!(after.d_m, model.d_m);
    assert_ne!(after.g_m, model.g_m);
    assert!(log
        .iter()
        .all(|r| r.loss_mask.is_none() && r.loss_data.is_some()));
}

#[test]
fn zero_beta_joint_run_matches_plain_run() {
    let data = ring_data(6, 64, 0.5);
    let (plain, _) = train(small_model(6, 2), &data, &short_run(6, 3), None).unwrap();
    let imp_cfg = ImputerConfig {
        hidden: vec![8],
        critic_hidden: vec![8],
        beta: 0.0,
        ..ImputerConfig::default()
    };
    let imp = ImputerModel::new(2, &imp_cfg, &mut stream(6, Stream::Init)).unwrap();
    let mut joint = Trainer::new(small_model(6, 2), short_run(6, 3))
        .unwrap()
        .with_imputer(imp.clone(), true)
        .unwrap();
    joint.run(&data, None, 3).unwrap();
    assert_eq!(joint.model, plain);
    assert_ne!(joint.imputer.unwrap().model.g_i_hat, imp.g_i_hat);
}

#[test]
fn without_mask_components_only_data_generator_and_imputer_move() {
    let data = ring_data(3, 64, 0.5);
    let model = small_model(3, 2);
    let imp_cfg = ImputerConfig {
        hidden: vec![8],
        critic_hidden: vec![8],
        ..ImputerConfig::default()
    };
    let imp = ImputerModel::new(2, &imp_cfg, &mut stream(3, Stream::Init)).unwrap();
    let mut t = Trainer::new(model.clone(), short_run(3, 3))
        .unwrap()
        .with_imputer(imp, false)
        .unwrap();
    let log = t.run(&data, None, 3).unwrap();
    assert_eq!(t.model.g_m, model.g_m);
    assert_eq!(t.model.d_m, model.d_m);
    assert_eq!(t.model.d_x, model.d_x);
    assert_ne!(t.model.g_x, model.g_x);
    assert!(log
        .iter()
        .all(|r| r.loss_data.is_none() && r.loss_imputer.is_some()));
}

#[test]
fn non_finite_loss_reports_step() {
    let data = ring_data(1, 64, 0.5);
    let mut cfg = short_run(1, 10);
    cfg.learning_rate = 1e300;
    cfg.clip_c = f64::MAX;
    match train(small_model(1, 2), &data, &cfg, None) {
        Err(TrainError::NonFinite { step, .. }) => assert!((1..=10).contains(&step)),
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}
