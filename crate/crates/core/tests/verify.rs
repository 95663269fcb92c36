use dawp_core::obsio::GriddedField;
use dawp_core::precipmap::LogTransform;
use dawp_core::verify::*;
use dawp_core::GridSpec;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn field(c: usize, h: usize, w: usize, t: usize, data: Vec<f32>) -> GriddedField {
    GriddedField {
        modality: "m".into(),
        channels: c,
        height: h,
        width: w,
        timestamps: (0..t as i64).collect(),
        data,
    }
}

#[test]
fn mae_hand_counts() {
    let pred = field(1, 1, 3, 1, vec![1.0, 2.0, 3.0]);
    let obs = field(1, 1, 3, 1, vec![1.0, f32::NAN, 5.0]);
    assert_eq!(pointwise_mae(&pred, &obs).unwrap(), vec![vec![Some(1.0)]]);
    assert_eq!(pointwise_mae(&obs, &obs).unwrap(), vec![vec![Some(0.0)]]);
    let empty = field(1, 1, 3, 1, vec![f32::NAN; 3]);
    assert_eq!(pointwise_mae(&pred, &empty).unwrap(), vec![vec![None]]);
    let holey = field(1, 1, 3, 1, vec![1.0, 2.0, f32::NAN]);
    assert!(matches!(pointwise_mae(&holey, &obs), Err(dawp_core::CoreError::Contract(_))));
    assert!(pointwise_mae(&field(1, 1, 2, 1, vec![0.0; 2]), &obs).is_err());
}

#[test]
fn mae_matches_loop_oracle_bitwise() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (c, h, w, t) = (3, 17, 29, 4);
    let n = c * h * w * t;
    let pred: Vec<f32> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let obs: Vec<f32> = (0..n).map(|_| if rng.random_bool(0.3) { rng.random_range(-5.0..5.0) } else { f32::NAN }).collect();
    let got = pointwise_mae(&field(c, h, w, t, pred.clone()), &field(c, h, w, t, obs.clone())).unwrap();
    for ti in 0..t {
        for ci in 0..c {
            let mut s = 0.0f64;
            let mut k = 0usize;
            for y in 0..h {
                for x in 0..w {
                    let i = ((ti * c + ci) * h + y) * w + x;
                    if !obs[i].is_nan() {
                        s += (pred[i] as f64 - obs[i] as f64).abs();
                        k += 1;
                    }
                }
            }
            assert_eq!(got[ti][ci].unwrap().to_bits(), (s / k as f64).to_bits());
        }
    }
}

#[test]
fn csi_far_hand_counts() {
    let p = [Some(true), Some(true), Some(false), Some(true)];
    let t = [Some(true), Some(false), Some(true), Some(true)];
    let c = confusion(&p, &t);
    assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 });
    assert_eq!(csi(&c), Some(0.5));
    assert_eq!(far(&c), Some(1.0 / 3.0));
    let perfect = confusion(&t, &t);
    assert_eq!((csi(&perfect), far(&perfect)), (Some(1.0), Some(0.0)));
    let none = confusion(&[Some(false)], &[Some(false)]);
    assert_eq!((csi(&none), far(&none)), (None, None));
    // NaN cells drop out of the counts.
    let b = binarize(&[0.4, f32::NAN, 0.5], 0.5);
    assert_eq!(b, vec![Some(false), None, Some(true)]);
    assert_eq!(confusion(&b, &b).total(), 2);
}

#[test]
fn default_thresholds() {
    assert_eq!(SP_THRESHOLDS, [0.5, 1.0, 2.0]);
    assert_eq!(TCWV_THRESHOLDS, [10.0, 20.0, 30.0]);
}

proptest! {
    #[test]
    fn scores_commute_with_the_log_transform(seed in 0u64..1000, ti in 0usize..3) {
        let t = LogTransform::new(vec![1e-7], vec![1e2]).unwrap();
        let tau = SP_THRESHOLDS[ti];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f32> = (0..200).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f32> = (0..200).map(|_| rng.random_range(0.0..3.0)).collect();
        let phys = confusion(&binarize(&a, tau), &binarize(&b, tau));
        // Threshold in f64 log space, where the image of tau is exact.
        let bl = |src: &[f32]| -> Vec<Option<bool>> {
            src.iter().map(|x| Some(t.fwd(0, *x as f64).unwrap() >= t.threshold(0, tau))).collect()
        };
        let logc = confusion(&bl(&a), &bl(&b));
        prop_assert_eq!(phys, logc);
        prop_assert_eq!(csi(&phys), csi(&logc));
    }
}

#[test]
fn persistence_repeats_last_frame() {
    let w = field(1, 2, 2, 3, (0..12).map(|v| v as f32).collect());
    let p = persistence(&w, &[10, 11, 12, 13]).unwrap();
    assert_eq!(p.timestamps, vec![10, 11, 12, 13]);
    for t in 0..4 {
        assert_eq!(p.frame(t), &[8.0, 9.0, 10.0, 11.0]);
    }
    // Static truth: persistence is exact.
    let still = field(1, 2, 2, 2, vec![1.0; 8]);
    let mae = pointwise_mae(&persistence(&still, &[2, 3]).unwrap(), &still).unwrap();
    assert!(mae.iter().flatten().all(|v| *v == Some(0.0)));
}

#[test]
fn seam_metric_extremes() {
    let spec = GridSpec::new(8, 16, 4).unwrap();
    let flat = field(1, 8, 16, 1, vec![3.0; 128]);
    assert_eq!(seam_metric(&flat, &spec).unwrap(), 0.0);
    // Checkerboard by tile: every boundary pair has full contrast.
    let mut data = vec![0.0; 128];
    for y in 0..8 {
        for x in 0..16 {
            data[y * 16 + x] = ((y / 4 + x / 4) % 2) as f32 * 2.0;
        }
    }
    let board = field(1, 8, 16, 1, data);
    assert_eq!(seam_metric(&board, &spec).unwrap(), 2.0);
    // Pair count: 8 rows x 4 column edges (wrap included) + 1 row edge x 16.
    let mut ramp = vec![0.0; 128];
    ramp[15] = 48.0;
    let f = field(1, 8, 16, 1, ramp);
    assert_eq!(seam_metric(&f, &spec).unwrap(), 48.0 / 48.0);
}

#[test]
fn lead_window_means_skip_absent_hours() {
    let v = [Some(1.0), None, Some(3.0), None, None, None, Some(5.0)];
    assert_eq!(lead_windows(&v, 3), vec![Some(2.0), None, Some(5.0)]);
}

#[test]
fn ablation_self_ratio_is_one() {
    assert_eq!(ablation_ratio(Some(0.3), Some(0.3)), Some(1.0));
    assert_eq!(ablation_ratio(None, Some(0.3)), None);
    assert_eq!(ablation_ratio(Some(0.3), Some(0.0)), None);
}

#[test]
fn csv_layouts() {
    let m = mae_csv(&[MaeRow { source: "forecast".into(), lead_h: 4, modality: "a".into(), channel: 1, value: None }]);
    assert_eq!(m, "source,lead_h,modality,channel,value\nforecast,4,a,1,absent\n");
    let c = csi_far_csv(&[CsiRow { variable: "sp".into(), tau: 0.5, lead_window: 0, counts: ConfusionCounts { tp: 1, fp: 1, fn_: 0, tn: 3 } }]);
    assert_eq!(c.lines().nth(1).unwrap(), "sp,0.5,0,5.000000e-1,5.000000e-1");
    assert!(seam_csv(&[("cbc".into(), 0.25)]).ends_with("cbc,2.500000e-1\n"));
}

#[test]
fn rasters_have_valid_headers() {
    let plane = [0.0f32, 0.5, 1.0, f32::NAN];
    let g = pgm(&plane, 2, 2, 0.0, 1.0);
    assert!(g.starts_with(b"P5\n2 2\n255\n"));
    assert_eq!(&g[g.len() - 4..], &[0, 128, 255, 0]);
    let c = ppm(&plane, 2, 2, 0.0, 1.0);
    assert_eq!(c.len(), b"P6\n2 2\n255\n".len() + 12);
    let l = line_chart(&[(&[1.0, 2.0, 3.0], [255, 0, 0]), (&[3.0, 2.0, f64::NAN], [0, 0, 255])], 40, 20);
    assert!(l.starts_with(b"P6\n40 20\n255\n"));
    assert!(l.windows(3).any(|p| p == [255, 0, 0]));
}
