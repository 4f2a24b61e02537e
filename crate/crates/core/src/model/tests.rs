use super::*;
use approx::assert_abs_diff_eq;
use ndarray::{array, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn params(input: usize, hidden: usize, layers: usize, bi: bool, seed: u64) -> LstmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LstmParams::init(input, hidden, layers, bi, &mut rng)
}

#[test]
fn zero_params_give_zero_outputs() {
    let p = params(3, 4, 2, true, 0).zeros_like();
    let x = Array2::from_shape_fn((7, 3), |(i, j)| (i + j) as f64);
    let (preds, _) = forward(&p, &x).unwrap();
    assert_eq!(preds.len(), 7);
    assert!(preds.iter().all(|&v| v == 0.0));
}

#[test]
fn forward_rejects_bad_shapes() {
    let p = params(3, 4, 1, false, 0);
    let wrong = Array2::<f64>::zeros((5, 2));
    assert!(matches!(
        forward(&p, &wrong),
        Err(ModelError::DimensionMismatch { expected: 3, got: 2 })
    ));
    let empty = Array2::<f64>::zeros((0, 3));
    assert!(matches!(forward(&p, &empty), Err(ModelError::EmptyInput)));
}

/// One step, one unit, hand-evaluated gate equations.
#[test]
fn single_step_matches_hand_computation() {
    let mut p = params(1, 1, 1, false, 0).zeros_like();
    // z = [w_i, w_f, w_g, w_o] * x + b
    p.layers[0].fwd.w_ih = array![[0.5], [0.25], [-0.3], [0.8]];
    p.layers[0].fwd.b = array![0.1, -0.2, 0.05, 0.0];
    p.head_w = array![2.0];
    p.head_b = -0.5;

    let x = 1.4;
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(0.5 * x + 0.1);
    let f = sig(0.25 * x - 0.2);
    let g = (-0.3 * x + 0.05).tanh();
    let o = sig(0.8 * x);
    let c = i * g; // c_prev = 0, so f drops out
    let _ = f;
    let h = o * c.tanh();
    let expected = 2.0 * h - 0.5;

    let (preds, _) = forward(&p, &array![[x]]).unwrap();
    assert_abs_diff_eq!(preds[0], expected, epsilon = 1e-12);
}

/// With the backward-direction weights and the backward half of the head
/// zeroed, a bidirectional model must reproduce the unidirectional one.
#[test]
fn bidirectional_with_silent_backward_matches_unidirectional() {
    let uni = params(2, 3, 2, false, 9);
    let mut bi = params(2, 3, 2, true, 9).zeros_like();
    for (bl, ul) in bi.layers.iter_mut().zip(&uni.layers) {
        // Layer inputs differ in width above layer 0 (2h vs h); copy the
        // uni weights into the forward-input columns.
        let (rows, cols) = (ul.fwd.w_ih.nrows(), ul.fwd.w_ih.ncols());
        bl.fwd
            .w_ih
            .slice_mut(ndarray::s![0..rows, 0..cols])
            .assign(&ul.fwd.w_ih);
        bl.fwd.w_hh.assign(&ul.fwd.w_hh);
        bl.fwd.b.assign(&ul.fwd.b);
    }
    bi.head_w.slice_mut(ndarray::s![0..3]).assign(&uni.head_w);
    bi.head_b = uni.head_b;

    let x = Array2::from_shape_fn((11, 2), |(i, j)| ((i * 3 + j) as f64 * 0.37).sin());
    let (pu, _) = forward(&uni, &x).unwrap();
    let (pb, _) = forward(&bi, &x).unwrap();
    for (a, b) in pu.iter().zip(&pb) {
        assert_abs_diff_eq!(a, b, epsilon = 1e-12);
    }
}

fn toy_window(t: usize, d: usize, seed: u64) -> Window {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let features = Array2::from_shape_fn((t, d), |_| rng.gen_range(-1.0..1.0));
    let labels = (0..t).map(|k| (k as f64 * 0.4).sin()).collect();
    Window {
        subject_id: "s1".into(),
        start: 0,
        features,
        labels,
    }
}

#[test]
fn analytic_gradient_matches_central_differences() {
    for (bi, layers) in [(false, 1), (true, 1), (false, 2), (true, 2)] {
        let p = params(2, 3, layers, bi, 11);
        let w = toy_window(9, 2, 21);
        let windows = [&w];
        let (_, grads) = batch_loss_and_grads(&p, &windows).unwrap();
        let gflat = grads.to_flat();
        let flat = p.to_flat();
        let h = 1e-5;
        // Spot-check a spread of coordinates to keep the test fast.
        let stride = (flat.len() / 17).max(1);
        for k in (0..flat.len()).step_by(stride) {
            let mut plus = p.clone();
            let mut pf = flat.clone();
            pf[k] += h;
            plus.assign_from_flat(&pf);
            let mut minus = p.clone();
            pf[k] = flat[k] - h;
            minus.assign_from_flat(&pf);
            let fd = (batch_loss(&plus, &windows).unwrap()
                - batch_loss(&minus, &windows).unwrap())
                / (2.0 * h);
            let denom = fd.abs().max(gflat[k].abs()).max(1e-8);
            assert!(
                ((gflat[k] - fd) / denom).abs() < 1e-4,
                "bi={bi} layers={layers} k={k}: analytic {} vs fd {fd}",
                gflat[k]
            );
        }
    }
}

fn linear_subject(id: &str, t: usize, seed: u64) -> SubjectData {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::Rng;
    let latent: Vec<f64> = (0..t).map(|k| (k as f64 * 0.21).sin()).collect();
    let features = Array2::from_shape_fn((t, 3), |(i, j)| {
        latent[i] * (j as f64 + 1.0) * 0.5 + rng.gen_range(-0.01..0.01)
    });
    SubjectData {
        subject_id: id.into(),
        features,
        labels: latent,
    }
}

#[test]
fn training_overfits_a_linear_fixture() {
    let train = vec![linear_subject("t1", 120, 1), linear_subject("t2", 120, 2)];
    let devel = vec![linear_subject("d1", 120, 3)];
    let config = ModelConfig {
        hidden: 8,
        layers: 1,
        lr: 0.01,
        max_epochs: 60,
        patience: 60,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    let model = train_model(&config, &train, &devel);
    let best = model
        .history
        .iter()
        .map(|e| e.devel_ccc)
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(best > 0.9, "best devel ccc {best}");
}

fn train_model(
    config: &ModelConfig,
    train_subjects: &[SubjectData],
    devel_subjects: &[SubjectData],
) -> TrainedModel {
    train(config, train_subjects, devel_subjects, 60, 20).unwrap()
}

#[test]
fn training_is_deterministic() {
    let tr = vec![linear_subject("t1", 90, 5)];
    let dv = vec![linear_subject("d1", 90, 6)];
    let config = ModelConfig {
        hidden: 4,
        layers: 1,
        lr: 0.01,
        max_epochs: 5,
        patience: 5,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    let a = train_model(&config, &tr, &dv);
    let b = train_model(&config, &tr, &dv);
    assert_eq!(a.params.to_flat(), b.params.to_flat());
    assert_eq!(a.best_epoch, b.best_epoch);
    assert_eq!(a.history.len(), b.history.len());
}

#[test]
fn patience_zero_stops_after_first_non_improvement() {
    let tr = vec![linear_subject("t1", 90, 5)];
    let dv = vec![linear_subject("d1", 90, 6)];
    let config = ModelConfig {
        hidden: 4,
        layers: 1,
        lr: 0.01,
        max_epochs: 50,
        patience: 0,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    let m = train_model(&config, &tr, &dv);
    // The run ends one epoch after the best one (or at max_epochs).
    assert!(m.history.len() <= m.best_epoch + 1 || m.history.len() == 50);
}

#[test]
fn predict_full_merges_windows_of_a_constant_map() {
    // A model that always outputs head_b regardless of input makes every
    // window agree, so the merged output must be exactly constant.
    let mut p = params(2, 3, 1, false, 0).zeros_like();
    p.head_b = 0.75;
    let x = Array2::from_shape_fn((130, 2), |(i, j)| (i * 2 + j) as f64);
    let merged = predict_full(&p, &x, 60, 20).unwrap();
    assert_eq!(merged.len(), 130);
    assert!(merged.iter().all(|&v| (v - 0.75).abs() < 1e-12));
}

#[test]
fn config_grid_validation() {
    let ok = ModelConfig::default();
    assert!(ok.validate().is_ok());
    let bad = ModelConfig {
        hidden: 48,
        ..ModelConfig::default()
    };
    assert!(matches!(
        bad.validate(),
        Err(ModelError::OffGrid { name: "hidden", .. })
    ));
    let freed = ModelConfig {
        hidden: 48,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    assert!(freed.validate().is_ok());
}

#[test]
fn grid_spec_enumerates_54_configs() {
    let grid = GridSpec::full();
    let configs = grid.configs(&ModelConfig::default());
    assert_eq!(configs.len(), 54);
    // direction-major ordering: first half unidirectional.
    assert!(configs[..27].iter().all(|c| !c.bidirectional));
    assert!(configs[27..].iter().all(|c| c.bidirectional));
}

#[test]
fn model_roundtrips_through_json() {
    let tr = vec![linear_subject("t1", 80, 5)];
    let dv = vec![linear_subject("d1", 80, 6)];
    let config = ModelConfig {
        hidden: 4,
        layers: 1,
        lr: 0.01,
        max_epochs: 2,
        patience: 2,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    let m = train_model(&config, &tr, &dv);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    m.save(&path).unwrap();
    let loaded = TrainedModel::load(&path).unwrap();
    assert_eq!(m.params.to_flat(), loaded.params.to_flat());
    assert_eq!(m.best_epoch, loaded.best_epoch);
}

#[test]
fn evaluate_reports_per_subject_and_concatenated_ccc() {
    let tr = vec![linear_subject("t1", 90, 5)];
    let dv = vec![linear_subject("d1", 90, 6)];
    let config = ModelConfig {
        hidden: 8,
        layers: 1,
        lr: 0.01,
        max_epochs: 40,
        patience: 40,
        allow_off_grid: true,
        ..ModelConfig::default()
    };
    let m = train_model(&config, &tr, &dv);
    let (report, preds) = evaluate(&m, &dv).unwrap();
    assert_eq!(report.per_subject.len(), 1);
    assert!(preds.per_subject.contains_key("d1"));
    assert_eq!(preds.per_subject["d1"].len(), 90);
    assert!(report.concatenated_ccc > 0.5, "{}", report.concatenated_ccc);
}
