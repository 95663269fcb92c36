use dawp_core::config::RunConfig;
use dawp_core::precipmap::*;
use dawp_core::GridSpec;
use dawp_nn::layers::patchify;
use dawp_nn::Graph;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn paper_transform() -> LogTransform {
    LogTransform::new(vec![1e-7, 1.0], vec![1e2, 1.0]).unwrap()
}

fn small_dims(input: usize) -> HeadDims {
    HeadDims {
        input,
        tokens: 4,
        patch: 4,
        out_channels: 2,
        dim: 32,
        blocks: 1,
        heads: 4,
    }
}

#[test]
fn closed_form_values() {
    let t = paper_transform();
    assert!((t.fwd(0, 0.0).unwrap() - 100f64.ln()).abs() < 1e-12);
    assert!((t.fwd(0, 0.0).unwrap() - 4.605170185988091).abs() < 1e-12);
    assert!(t.fwd(1, 0.0).unwrap().abs() < 1e-12);
    assert!(t.fwd(0, -1e-3).is_err());
    assert!(t.fwd(1, f64::NAN).unwrap().is_nan());
    assert!(t.inv(1, f64::NAN).is_nan());
    // Roundoff below the offset clamps to zero.
    assert_eq!(t.inv(0, 100f64.ln() - 1e-9), 0.0);
    assert!(LogTransform::new(vec![0.0], vec![1.0]).is_err());
}

#[test]
fn roundtrip_on_random_values() {
    let t = paper_transform();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..10_000 {
        let x: f64 = 10f64.powf(rng.random_range(-6.0..3.0));
        for ch in 0..2 {
            let back = t.inv(ch, t.fwd(ch, x).unwrap());
            assert!((back - x).abs() <= 1e-5 * x, "ch {ch}: {x} -> {back}");
        }
    }
}

proptest! {
    #[test]
    fn forward_is_strictly_increasing(a in 0.0f64..1e3, d in 1e-3f64..1e3, ch in 0usize..2) {
        let t = paper_transform();
        prop_assert!(t.fwd(ch, a + d).unwrap() > t.fwd(ch, a).unwrap());
    }

    #[test]
    fn thresholds_commute(x in 0.0f64..10.0, tau in prop::sample::select(vec![0.5, 1.0, 2.0, 10.0, 20.0, 30.0]), ch in 0usize..2) {
        let t = paper_transform();
        prop_assert_eq!(x >= tau, t.fwd(ch, x).unwrap() >= t.threshold(ch, tau));
    }
}

#[test]
fn loss_is_mae_over_present_targets() {
    let d = small_dims(8);
    let m = PrecipModel::init(d.clone(), paper_transform(), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let tokens: Vec<f32> = (0..2 * 4 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut targets: Vec<f32> = (0..2 * 2 * 64).map(|_| rng.random_range(-1.0..1.0)).collect();
    for k in (0..targets.len()).step_by(7) {
        targets[k] = f32::NAN;
    }
    let pred = m.predict_normalized(&tokens).unwrap();
    let (mut s, mut n) = (0.0f64, 0);
    for (p, t) in pred.iter().zip(&targets) {
        if !t.is_nan() {
            s += (p - t).abs() as f64;
            n += 1;
        }
    }
    let mut g = Graph::new(&m.params);
    let l = m.head.loss(&mut g, &tokens, &targets).unwrap();
    assert!((g.value(l).data()[0] as f64 - s / n as f64).abs() < 1e-6);
}

/// Smooth positive two-channel tiles, 8 x 8.
fn fields(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(n * 128);
    for _ in 0..n {
        let (a, b, ph) = (rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.0..6.28));
        for ch in 0..2 {
            for y in 0..8 {
                for x in 0..8 {
                    let v = 2.0 + a * ((x as f32 * 0.7 + ph).sin()) + b * ((y as f32 * 0.5 + ch as f32).cos());
                    out.push(v);
                }
            }
        }
    }
    out
}

fn tokens_of(tiles: &[f32]) -> Vec<f32> {
    tiles.chunks(128).flat_map(|t| patchify(t, 2, 8, 8, 4).unwrap()).collect()
}

#[test]
fn head_recovers_an_identity_mapping() {
    let mut cfg = RunConfig::desk();
    cfg.precip_steps = 1500;
    cfg.precip_batch = 16;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = fields(&mut rng, 400);
    let test = fields(&mut rng, 50);
    let t = LogTransform::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let pairs = PrecipPairs { tokens: tokens_of(&train), targets: train.clone(), n: 400 };
    let (m, log) = train_precip(&cfg, small_dims(32), t, &pairs, 4).unwrap();
    assert!(log.text().lines().count() > 2);
    let pred = m.predict(&tokens_of(&test)).unwrap();
    let good = pred.iter().zip(&test).filter(|(p, x)| ((*p - *x) / *x).abs() <= 0.1).count();
    assert!(good as f64 >= 0.9 * test.len() as f64, "{good} of {}", test.len());
    let held = PrecipPairs { tokens: tokens_of(&test), targets: test, n: 50 };
    assert!(eval_precip(&m, &held).unwrap() < 0.3);
}

#[test]
fn training_is_deterministic() {
    let mut cfg = RunConfig::desk();
    cfg.precip_steps = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train = fields(&mut rng, 20);
    let pairs = PrecipPairs { tokens: tokens_of(&train), targets: train, n: 20 };
    let t = LogTransform::new(vec![1.0, 1.0], vec![1.0, 1.0]).unwrap();
    let (a, la) = train_precip(&cfg, small_dims(32), t.clone(), &pairs, 6).unwrap();
    let (b, lb) = train_precip(&cfg, small_dims(32), t, &pairs, 6).unwrap();
    assert_eq!(la.text(), lb.text());
    assert_eq!(a.params.to_named(), b.params.to_named());
}

#[test]
fn mapping_is_nonnegative_with_field_shape() {
    let spec = GridSpec::new(16, 32, 8).unwrap();
    let d = small_dims(8);
    let m = PrecipModel::init(d, paper_transform(), 7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let windows: Vec<Vec<f32>> = (0..spec.n_tiles()).map(|_| (0..3 * 4 * 8).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
    let f = m.map_precip(&spec, &windows, &[0, 1, 2]).unwrap();
    assert_eq!((f.times(), f.channels, f.height, f.width), (3, 2, 16, 32));
    assert!(f.data.iter().all(|v| *v >= 0.0 && v.is_finite()));
    assert!(m.map_precip(&spec, &windows[1..], &[0, 1, 2]).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let d = small_dims(8);
    let mut m = PrecipModel::init(d.clone(), paper_transform(), 9).unwrap();
    m.mean = vec![4.5, 3.0];
    m.std = vec![2.0, 0.5];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("precip.ckpt");
    m.save(&p).unwrap();
    let back = PrecipModel::load(&p, d.clone()).unwrap();
    assert_eq!(back.mean, m.mean);
    assert_eq!(back.std, m.std);
    assert!((back.transform.a[0] - 1e-7).abs() < 1e-13);
    assert_eq!(back.params.to_named(), m.params.to_named());
    assert!(PrecipModel::load(&p, HeadDims { dim: 16, ..d }).is_err());
}
