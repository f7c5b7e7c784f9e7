mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xrds::feature_map::FeatureMap;
use xrds::model::{AuxMask, ModelConfig, XrdsModel};
use xrds::nn::{Builder, ParamStore};
use xrds::rdst::Xdg;
use xrds::XrdsError;
use xrds_autodiff::{Graph, Tensor};

fn inputs(seed: u64, h: usize, w: usize, s: usize) -> (FeatureMap, FeatureMap) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lr: Tensor<f32> = common::random_tensor(&mut rng, vec![1, h, w, 3], 1.0);
    let aux: Tensor<f32> = common::random_tensor(&mut rng, vec![1, s * h, s * w, 6], 1.0);
    (FeatureMap::from_nhwc(&lr, 0).unwrap(), FeatureMap::from_nhwc(&aux, 0).unwrap())
}

fn randomized(cfg: ModelConfig, seed: u64) -> XrdsModel {
    let mut m = XrdsModel::new(cfg, seed).unwrap();
    common::randomize(&mut m.params, &mut ChaCha8Rng::seed_from_u64(seed + 1), 0.1);
    m
}

#[test]
fn output_is_scale_times_input_for_odd_sizes() {
    let model = XrdsModel::new(ModelConfig::micro(), 0).unwrap();
    let (lr, aux) = inputs(1, 7, 5, 2);
    let out = model.predict(&lr, &aux).unwrap();
    assert_eq!(out.dims(), (3, 14, 10));
    assert!(out.first_non_finite().is_none());
}

#[test]
fn mismatched_aux_is_a_dimension_error() {
    let model = XrdsModel::new(ModelConfig::micro(), 0).unwrap();
    let (lr, _) = inputs(1, 8, 8, 2);
    let (_, aux) = inputs(1, 8, 8, 4);
    let err = model.predict(&lr, &aux).unwrap_err();
    assert!(matches!(err, XrdsError::Dimension(_)), "{err}");
}

#[test]
fn aux_has_no_effect_at_initialization() {
    // Zero-initialized residual tails make every group an identity-like map
    // of its input, so the guidance cannot reach the output yet.
    let model = XrdsModel::new(ModelConfig::micro(), 3).unwrap();
    let (lr, aux) = inputs(2, 8, 8, 2);
    let zeros = FeatureMap::zeros(6, 16, 16);
    assert_eq!(model.predict(&lr, &aux).unwrap(), model.predict(&lr, &zeros).unwrap());
}

#[test]
fn masked_aux_is_ignored_and_full_aux_is_used() {
    let (lr, aux) = inputs(4, 8, 8, 2);
    let zeros = FeatureMap::zeros(6, 16, 16);
    let none = randomized(
        ModelConfig {
            aux_mask: AuxMask::None,
            ..ModelConfig::micro()
        },
        5,
    );
    assert_eq!(none.predict(&lr, &aux).unwrap(), none.predict(&lr, &zeros).unwrap());
    let both = randomized(ModelConfig::micro(), 5);
    assert_ne!(both.predict(&lr, &aux).unwrap(), both.predict(&lr, &zeros).unwrap());

    let normal_only = randomized(
        ModelConfig {
            aux_mask: AuxMask::NormalOnly,
            ..ModelConfig::micro()
        },
        5,
    );
    let mut no_albedo = aux.clone();
    for c in 0..3 {
        for y in 0..16 {
            for x in 0..16 {
                no_albedo.set(c, y, x, 0.0);
            }
        }
    }
    assert_eq!(normal_only.predict(&lr, &aux).unwrap(), normal_only.predict(&lr, &no_albedo).unwrap());
}

#[test]
fn group_with_zero_tails_doubles_its_input() {
    let cfg = ModelConfig::micro();
    let mut store = ParamStore::<f64>::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let xdg = Xdg::new(
        &mut Builder::new(&mut store, &mut rng),
        "g",
        cfg.channels,
        cfg.guide_channels,
        1,
        1,
        cfg.growth,
        cfg.growth_kernel,
        cfg.window_config(),
    )
    .unwrap();
    let mut data = ChaCha8Rng::seed_from_u64(1);
    let x: Tensor<f64> = common::random_tensor(&mut data, vec![1, 8, 8, cfg.channels], 1.0);
    let d: Tensor<f64> = common::random_tensor(&mut data, vec![1, 8, 8, cfg.guide_channels], 1.0);
    let mut g = Graph::new();
    let p = store.bind(&mut g, false);
    let (xv, dv) = (g.constant(x.clone()), g.constant(d));
    let out = xdg.forward(&mut g, &p, xv, dv).unwrap();
    for (a, b) in g.value(out).data().iter().zip(x.data()) {
        assert!((a - 2.0 * b).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = randomized(ModelConfig::micro(), 9);
    model.save(&path).unwrap();
    let back = XrdsModel::load(&path).unwrap();
    assert_eq!(back.config, model.config);
    assert_eq!(back.fingerprint().unwrap(), model.fingerprint().unwrap());
    let (lr, aux) = inputs(3, 8, 8, 2);
    assert_eq!(back.predict(&lr, &aux).unwrap(), model.predict(&lr, &aux).unwrap());
}

#[test]
fn damaged_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    XrdsModel::new(ModelConfig::micro(), 0).unwrap().save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();

    std::fs::write(&path, &bytes[..bytes.len() - 100]).unwrap();
    assert!(matches!(XrdsModel::load(&path), Err(XrdsError::Integrity(_))));

    let mut flipped = bytes.clone();
    let mid = flipped.len() / 2;
    flipped[mid] ^= 0x40;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(XrdsModel::load(&path), Err(XrdsError::Integrity(_))));

    std::fs::write(&path, b"not a checkpoint").unwrap();
    assert!(XrdsModel::load(&path).is_err());
}

#[test]
fn scale_mismatch_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    XrdsModel::new(ModelConfig::micro(), 0).unwrap().save(&path).unwrap();
    let err = XrdsModel::load_for_scale(&path, 4).unwrap_err();
    assert!(matches!(err, XrdsError::ConfigMismatch(_)));
    assert!(err.to_string().contains("scale 2"));
}

#[test]
fn warm_start_keeps_everything_but_scale_dependent_tensors() {
    let x2 = randomized(ModelConfig::micro(), 1);
    let mut x4 = XrdsModel::new(
        ModelConfig {
            scale: 4,
            ..ModelConfig::micro()
        },
        2,
    )
    .unwrap();
    let copied = x4.copy_matching(&x2);
    let differing: Vec<&str> = x4
        .params
        .iter()
        .filter(|(name, t)| x2.params.by_name(name).is_none_or(|s| s.shape() != t.shape()))
        .map(|(n, _)| n)
        .collect();
    assert_eq!(copied + differing.len(), x4.params.len());
    assert!(!differing.is_empty());
    // The head and the deshuffled aux projections change width with the scale.
    assert!(
        differing.iter().all(|n| n.starts_with("head.") || n.starts_with("aux.projections.")),
        "{differing:?}"
    );
}

#[test]
fn parameter_count_grows_with_every_dimension() {
    let base = ModelConfig::desk();
    let count = |cfg: ModelConfig| XrdsModel::new(cfg, 0).unwrap().count_parameters();
    let n0 = count(base.clone());
    assert!(count(ModelConfig { groups: 3, ..base.clone() }) > n0);
    assert!(count(ModelConfig { layers: 3, ..base.clone() }) > n0);
    assert!(count(ModelConfig { growth: 24, ..base.clone() }) > n0);
    assert!(count(ModelConfig { growth_kernel: 1, ..base }) < n0);
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        ModelConfig { heads: 3, ..ModelConfig::micro() },
        ModelConfig { scale: 3, ..ModelConfig::micro() },
        ModelConfig { blocks: 0, ..ModelConfig::micro() },
        ModelConfig { layers: 0, ..ModelConfig::micro() },
    ] {
        let err = XrdsModel::new(cfg, 0).expect_err("config must be rejected");
        assert!(err.is_validation(), "{err}");
    }
}
