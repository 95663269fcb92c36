use dawp_core::grid::GridSpec;
use dawp_core::obsio::{read_grid, remap};
use dawp_core::synthgen::*;

fn spec() -> GridSpec {
    GridSpec::new(96, 192, 24).unwrap()
}

fn field(adv: (i64, i64), diffusion: f64) -> FieldConfig {
    FieldConfig {
        n_blobs: 12,
        advection: adv,
        diffusion,
        channel_couplings: vec![(1.0, 0.0), (-0.5, 2.0)],
        seed: 3,
    }
}

fn orbit(phase: usize) -> OrbitConfig {
    OrbitConfig {
        swath_width: 10,
        period: 12,
        inclination_offset: 0.3,
        phase,
    }
}

#[test]
fn pure_advection_shifts_the_peak() {
    let f = gen_truth(&field((1, 0), 0.0), "m", &spec(), 2).unwrap();
    let w = 192;
    let (mut best, mut at) = (f32::MIN, 0);
    for (i, v) in f.frame(0)[..96 * w].iter().enumerate() {
        if *v > best {
            best = *v;
            at = i;
        }
    }
    let (y, x) = (at / w, at % w);
    assert_eq!(f.at(1, 0, y, (x + 1) % w), best);
    for y in 0..96 {
        for x in 0..w {
            assert_eq!(f.at(1, 0, y, (x + 1) % w), f.at(0, 0, y, x));
        }
    }
}

#[test]
fn static_field_is_a_fixed_point() {
    let f = gen_truth(&field((0, 0), 0.0), "m", &spec(), 5).unwrap();
    for t in 1..5 {
        assert_eq!(f.frame(t), f.frame(0));
    }
    // Channels are affine in one latent field.
    let plane = f.plane();
    for i in 0..plane {
        assert_eq!(f.data[plane + i], -0.5 * f.data[i] + 2.0);
    }
}

#[test]
fn generation_is_deterministic() {
    let a = gen_truth(&field((1, 1), 0.05), "m", &spec(), 6).unwrap();
    let b = gen_truth(&field((1, 1), 0.05), "m", &spec(), 6).unwrap();
    assert_eq!(a, b);
    let mut other = field((1, 1), 0.05);
    other.seed = 4;
    assert_ne!(gen_truth(&other, "m", &spec(), 6).unwrap(), a);
}

#[test]
fn noiseless_swath_reproduces_truth() {
    let s = spec();
    let f = gen_truth(&field((1, 0), 0.02), "m", &s, 3).unwrap();
    for t in 0..3 {
        let sw = sample_swath(&f, &s, &orbit(0), t, 0.0, 1).unwrap();
        let r = remap(&sw, &s, t as i64).unwrap();
        assert_eq!(r.counts.iter().filter(|c| **c > 1).count(), 0);
        let mut observed = 0;
        for c in 0..2 {
            for y in 0..96 {
                for x in 0..192 {
                    let v = r.field.at(0, c, y, x);
                    if !v.is_nan() {
                        observed += 1;
                        assert_eq!(v, f.at(t, c, y, x));
                    }
                }
            }
        }
        assert_eq!(observed, 2 * sw.len());
    }
}

#[test]
fn swath_footprint_is_periodic_and_covers_the_globe() {
    let s = spec();
    let o = orbit(5);
    let mut seen = vec![false; s.cells()];
    for t in 0..12 {
        let m = swath_mask(&o, &s, t).unwrap();
        assert_eq!(m, swath_mask(&o, &s, t + 12).unwrap());
        assert_eq!(m, swath_mask(&o, &s, t + 48).unwrap());
        seen.iter_mut().zip(&m).for_each(|(a, b)| *a |= *b);
    }
    let frac = seen.iter().filter(|v| **v).count() as f64 / s.cells() as f64;
    assert!(frac >= 0.99, "coverage {frac}");
}

#[test]
fn different_phases_give_different_masks() {
    let s = spec();
    assert_ne!(swath_mask(&orbit(0), &s, 0).unwrap(), swath_mask(&orbit(40), &s, 0).unwrap());
    assert!(swath_mask(&OrbitConfig { swath_width: 0, ..orbit(0) }, &s, 0).is_err());
}

fn small_dataset() -> DatasetConfig {
    DatasetConfig {
        spec: GridSpec::new(48, 96, 24).unwrap(),
        hours: 48,
        train_hours: 36,
        n_blobs: 6,
        advection: (1, 0),
        diffusion: 0.01,
        modalities: vec![
            ModalitySpec { name: "a".into(), couplings: vec![(1.0, 0.0), (0.5, 1.0), (-1.0, 0.0)], orbit: orbit(0), noise_std: 0.01 },
            ModalitySpec { name: "b".into(), couplings: vec![(2.0, 0.0), (1.0, -1.0)], orbit: orbit(30), noise_std: 0.01 },
        ],
        precip: PrecipSpec { sp_scale: 4.0, sp_threshold: 0.5, tcwv_offset: 25.0, tcwv_scale: 10.0 },
        seed: 9,
    }
}

fn files(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn dataset_layout_and_determinism() {
    let cfg = small_dataset();
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let m = gen_dataset(&cfg, a.path(), 1).unwrap();
    gen_dataset(&cfg, b.path(), 3).unwrap();
    let fa = files(a.path());
    assert_eq!(fa, files(b.path()));
    let grids = fa.iter().filter(|(n, _)| n.contains("obs_")).count();
    let truths = fa.iter().filter(|(n, _)| n.ends_with("truth.grd") && !n.starts_with(PRECIP)).count();
    assert_eq!((grids, truths), (2 * 48, 2));
    assert_eq!(Manifest::read(a.path()).unwrap(), m);
    assert_eq!((m.train, m.test), ((0, 36), (36, 48)));

    let d = Dataset::load(a.path()).unwrap();
    assert_eq!(d.obs[0].times(), 48);
    assert_eq!(d.precip.channels, 2);
    assert!(d.precip.data.iter().all(|v| *v >= 0.0));
    let na: Vec<bool> = d.obs[0].frame(0)[..48 * 96].iter().map(|v| v.is_nan()).collect();
    let nb: Vec<bool> = d.obs[1].frame(0)[..48 * 96].iter().map(|v| v.is_nan()).collect();
    assert_ne!(na, nb);
    let t = read_grid(&Manifest::truth_path(a.path(), "b")).unwrap();
    assert_eq!(t.nan_count(), 0);
}
