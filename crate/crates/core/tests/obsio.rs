use dawp_core::grid::{cell_of_latlon, GridSpec};
use dawp_core::obsio::*;
use dawp_core::CoreError;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_swath(n: usize, c: usize, seed: u64) -> SwathBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = SwathBatch::empty("m", c);
    for _ in 0..n {
        let vals: Vec<f32> = (0..c)
            .map(|_| if rng.random_bool(0.1) { f32::NAN } else { rng.random_range(-5.0..5.0) })
            .collect();
        s.push(rng.random_range(-90.0..=90.0), rng.random_range(-180.0..180.0), &vals);
    }
    s
}

/// For every cell, scan every point.
fn naive(s: &SwathBatch, spec: &GridSpec) -> Vec<f32> {
    let cells: Vec<(usize, usize)> = (0..s.len())
        .map(|p| cell_of_latlon(s.lat[p] as f64, s.lon[p] as f64, spec).unwrap())
        .collect();
    let mut out = Vec::new();
    for ch in 0..s.channels {
        for row in 0..spec.height {
            for col in 0..spec.width {
                let (mut sum, mut n) = (0.0f64, 0);
                for (p, cell) in cells.iter().enumerate() {
                    let v = s.values[p * s.channels + ch];
                    if *cell == (row, col) && !v.is_nan() {
                        sum += v as f64;
                        n += 1;
                    }
                }
                out.push(if n == 0 { f32::NAN } else { (sum / n as f64) as f32 });
            }
        }
    }
    out
}

fn close(a: f32, b: f32, rel: f32) -> bool {
    (a.is_nan() && b.is_nan()) || (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn remap_matches_scan_oracle() {
    let spec = GridSpec::new(24, 48, 24).unwrap();
    let s = random_swath(10_000, 2, 1);
    let r = remap(&s, &spec, 0).unwrap();
    let want = naive(&s, &spec);
    for (i, (a, b)) in r.field.data.iter().zip(&want).enumerate() {
        assert!(close(*a, *b, 1e-6), "cell {i}: {a} vs {b}");
    }
    for (v, n) in r.field.data.iter().zip(&r.counts) {
        assert_eq!(v.is_nan(), *n == 0);
    }
}

#[test]
fn remap_conserves_sums() {
    let spec = GridSpec::new(24, 48, 24).unwrap();
    let s = random_swath(5_000, 3, 2);
    let r = remap(&s, &spec, 0).unwrap();
    let plane = spec.cells();
    for ch in 0..3 {
        let grid: f64 = (0..plane)
            .filter(|i| r.counts[ch * plane + i] > 0)
            .map(|i| r.field.data[ch * plane + i] as f64 * r.counts[ch * plane + i] as f64)
            .sum();
        let direct: f64 = (0..s.len()).map(|p| s.values[p * 3 + ch]).filter(|v| !v.is_nan()).map(|v| v as f64).sum();
        assert!((grid - direct).abs() <= 1e-5 * direct.abs().max(1.0), "{grid} vs {direct}");
    }
}

#[test]
fn remap_is_order_invariant() {
    let spec = GridSpec::new(24, 48, 24).unwrap();
    let s = random_swath(3_000, 1, 3);
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(4));
    let mut t = SwathBatch::empty("m", 1);
    for p in order {
        t.push(s.lat[p], s.lon[p], &s.values[p..p + 1]);
    }
    let (a, b) = (remap(&s, &spec, 0).unwrap(), remap(&t, &spec, 0).unwrap());
    for (x, y) in a.field.data.iter().zip(&b.field.data) {
        assert!(close(*x, *y, 1e-6));
    }
}

#[test]
fn single_point_and_empty_swath() {
    let spec = GridSpec::new(24, 48, 24).unwrap();
    let mut s = SwathBatch::empty("m", 1);
    assert_eq!(remap(&s, &spec, 5).unwrap().field.nan_count(), spec.cells());
    s.push(-33.0, 100.0, &[7.5]);
    let f = remap(&s, &spec, 5).unwrap().field;
    let obs: Vec<f32> = f.data.iter().copied().filter(|v| !v.is_nan()).collect();
    assert_eq!(obs, vec![7.5]);
    assert_eq!(f.timestamps, vec![5]);
}

fn frame(hour: i64, fill: f32) -> GriddedField {
    GriddedField::filled("m", 2, 3, 4, vec![hour], fill)
}

#[test]
fn merge_sorts_and_rejects_duplicates() {
    let m = merge_time(&[frame(3, 3.0), frame(1, 1.0)]).unwrap();
    assert_eq!(m.timestamps, vec![1, 3]);
    assert!(m.frame(0).iter().all(|v| *v == 1.0));
    assert!(m.frame(1).iter().all(|v| *v == 3.0));
    assert_eq!(merge_time(&[frame(0, 2.0)]).unwrap(), frame(0, 2.0));
    assert!(matches!(merge_time(&[frame(2, 0.0), frame(2, 1.0)]), Err(CoreError::Argument(_))));

    let frames: Vec<GriddedField> = (0..12).map(|t| frame(t, t as f32)).collect();
    let m = merge_time(&frames).unwrap();
    for t in 0..12 {
        assert_eq!(m.slice_time(t, 1).unwrap(), frames[t]);
    }
}

fn random_field(seed: u64, nan_frac: f64) -> GriddedField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = GriddedField::filled("m", 3, 8, 16, vec![0, 1, 2, 3], 0.0);
    for (i, v) in f.data.iter_mut().enumerate() {
        let c = (i / 128) % 3;
        *v = if rng.random_bool(nan_frac) { f32::NAN } else { 10.0 * c as f32 + rng.random_range(-3.0..3.0) };
    }
    f
}

#[test]
fn stats_match_two_pass_oracle() {
    let f = random_field(5, 0.3);
    let s = fit_stats(&f).unwrap();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4)
            .flat_map(|t| f.frame(t)[c * 128..(c + 1) * 128].to_vec())
            .filter(|v| !v.is_nan())
            .map(|v| v as f64)
            .collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((s.mean[c] - m).abs() <= 1e-10 * m.abs().max(1.0));
        assert!((s.std[c] - sd).abs() <= 1e-10 * sd);
    }
    let n = normalize(&f, &s).unwrap();
    let s2 = fit_stats(&n).unwrap();
    for c in 0..3 {
        assert!(s2.mean[c].abs() < 1e-5 && (s2.std[c] - 1.0).abs() < 1e-5);
    }
    let back = denormalize(&n, &s).unwrap();
    for (a, b) in back.data.iter().zip(&f.data) {
        assert!(close(*a, *b, 1e-6), "{a} vs {b}");
    }
}

#[test]
fn all_nan_channel_is_a_statistics_error() {
    let mut f = random_field(6, 0.0);
    for t in 0..4 {
        f.frame_mut(t)[128..256].fill(f32::NAN);
    }
    match fit_stats(&f) {
        Err(CoreError::Statistics(m)) => assert!(m.contains("channel 1"), "{m}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn grid_file_roundtrip_is_bit_exact() {
    let f = random_field(7, 0.2);
    let bytes = encode_grid(&f).unwrap();
    assert_eq!(&bytes[..8], b"DAWPGRD1");
    let back = decode_grid(&bytes).unwrap();
    assert_eq!(encode_grid(&back).unwrap(), bytes);
    for (a, b) in back.data.iter().zip(&f.data) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("sub/f.grd");
    write_grid(&p, &f).unwrap();
    assert_eq!(std::fs::read(&p).unwrap(), bytes);
    assert_eq!(encode_grid(&read_grid(&p).unwrap()).unwrap(), bytes);
}

#[test]
fn corrupt_files_report_offsets() {
    let f = random_field(8, 0.0);
    let mut bytes = encode_grid(&f).unwrap();
    bytes[0] = b'X';
    assert!(matches!(decode_grid(&bytes), Err(CoreError::Format { offset: 0, .. })));
    let bytes = encode_grid(&f).unwrap();
    let cut = &bytes[..bytes.len() - 3];
    match decode_grid(cut) {
        Err(CoreError::Format { offset, .. }) => assert!(offset > 12),
        other => panic!("{other:?}"),
    }
    assert!(matches!(decode_grid(&bytes[..10]), Err(CoreError::Format { .. })));
    let mut long = bytes.clone();
    long.extend_from_slice(&[0; 4]);
    assert!(matches!(decode_grid(&long), Err(CoreError::Format { .. })));
    assert!(matches!(decode_swath(&bytes), Err(CoreError::Format { offset: 0, .. })));
}

#[test]
fn swath_file_roundtrip() {
    let s = random_swath(100, 3, 9);
    let bytes = encode_swath(&s).unwrap();
    let back = decode_swath(&bytes).unwrap();
    assert_eq!(encode_swath(&back).unwrap(), bytes);
    assert_eq!(back.len(), 100);
    assert_eq!(back.lat, s.lat);
}

#[test]
fn checkpoint_roundtrip() {
    let arrays = vec![
        NamedArray { name: "enc.w".into(), shape: vec![2, 3], data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0] },
        NamedArray { name: "enc.b".into(), shape: vec![3], data: vec![-1.0, 0.0, 1.0] },
        NamedArray { name: "scalar".into(), shape: vec![], data: vec![0.5] },
    ];
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    write_checkpoint(&p, &arrays).unwrap();
    assert_eq!(read_checkpoint(&p).unwrap(), arrays);
    let mut bytes = std::fs::read(&p).unwrap();
    bytes.pop();
    assert!(matches!(decode_checkpoint(&bytes), Err(CoreError::Format { .. })));
    assert!(matches!(read_checkpoint(&dir.path().join("none")), Err(CoreError::Io { .. })));
}
