use dawp_core::aida::TokenWindow;
use dawp_core::aiwp::*;
use dawp_core::grid::{neighbours8, TileCoord};
use dawp_core::GridSpec;
use dawp_nn::layers::input_matrix;
use dawp_nn::{grad_check, GradCheckConfig, Graph, Init, NnError, ParamStore};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dims() -> AiwpDims {
    AiwpDims {
        latents: vec![3, 2],
        side: 2,
        time: 3,
        dim: 8,
        blocks: 1,
        heads: 2,
    }
}

fn spec() -> GridSpec {
    // 3 x 4 tiles of 4 x 4 cells.
    GridSpec::new(12, 16, 4).unwrap()
}

fn random_window(d: &AiwpDims, rng: &mut ChaCha8Rng) -> TokenWindow {
    let n = d.time * d.tokens();
    TokenWindow {
        latents: d.latents.iter().map(|lc| (0..n * lc).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        observed: d.latents.iter().map(|_| vec![true; n]).collect(),
    }
}

/// Token `p` of tile `i` carries `100 * i + p` in every channel and frame.
fn tagged_window(d: &AiwpDims, i: usize) -> TokenWindow {
    let p = d.tokens();
    TokenWindow {
        latents: d
            .latents
            .iter()
            .map(|lc| (0..d.time * p * lc).map(|k| (100 * i + (k / lc) % p) as f32).collect())
            .collect(),
        observed: d.latents.iter().map(|_| vec![true; d.time * p]).collect(),
    }
}

fn model(d: &AiwpDims, seed: u64) -> AiwpModel {
    AiwpModel::init(d.clone(), seed).unwrap()
}

fn bank(d: &AiwpDims, starts: usize, rng: &mut ChaCha8Rng) -> WindowBank {
    let s = spec();
    WindowBank {
        spec: s,
        first: 0,
        windows: (0..starts).map(|_| (0..s.n_tiles()).map(|_| random_window(d, rng)).collect()).collect(),
    }
}

#[test]
fn mosaic_shapes() {
    let d = AiwpDims { side: 3, time: 4, ..dims() };
    assert_eq!(CbcInput::shape(&d), [9, 9, 4, 5]);
    let paper = AiwpDims {
        latents: vec![60, 36, 80, 20],
        side: 9,
        time: 12,
        dim: 768,
        blocks: 12,
        heads: 8,
    };
    assert_eq!(&CbcInput::shape(&paper)[..3], &[27, 27, 12]);
    assert_eq!(paper.sites(), 729);
}

#[test]
fn mosaic_places_neighbours_in_grid_order() {
    let d = dims();
    let s = spec();
    let b = WindowBank {
        spec: s,
        first: 0,
        windows: vec![(0..s.n_tiles()).map(|i| tagged_window(&d, i)).collect()],
    };
    let n = d.mosaic_side();
    let tag_at = |x: &CbcInput, y: usize, xx: usize| x.data[(y * n + xx) * d.time * d.channels()];
    // Interior tile (1, 1).
    let at = TileCoord::new(1, 1);
    let m = b.mosaic(&d, 0, s.tile_index(at), false).unwrap();
    let nb = neighbours8(at, 3, 4).unwrap();
    let slots = [(0, 0), (0, 1), (0, 2), (1, 0), (1, 2), (2, 0), (2, 1), (2, 2)];
    for (k, (sr, sc)) in slots.iter().enumerate() {
        assert_eq!(tag_at(&m, sr * 2, sc * 2), (100 * s.tile_index(nb[k])) as f32);
    }
    assert_eq!(tag_at(&m, 2, 2), (100 * s.tile_index(at)) as f32);
    // Token order inside an ordinary slot is preserved.
    assert_eq!(tag_at(&m, 3, 3) - tag_at(&m, 2, 2), 3.0);

    // Top row: the slot above comes from across the pole, rotated half a turn.
    let top = TileCoord::new(0, 1);
    let m = b.mosaic(&d, 0, s.tile_index(top), false).unwrap();
    let up = neighbours8(top, 3, 4).unwrap()[1];
    assert_eq!(up, TileCoord::new(0, 3));
    let base = (100 * s.tile_index(up)) as f32;
    assert_eq!(tag_at(&m, 0, 2), base + 3.0);
    assert_eq!(tag_at(&m, 1, 3), base);

    // Without CBC every slot holds the centre.
    let m = b.mosaic(&d, 0, s.tile_index(at), true).unwrap();
    for (sr, sc) in slots {
        assert_eq!(tag_at(&m, sr * 2, sc * 2), (100 * s.tile_index(at)) as f32);
    }
}

#[test]
fn output_covers_the_centre_window() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let b = bank(&d, 1, &mut rng);
    let m = model(&d, 1);
    let x = b.mosaic(&d, 0, 5, false).unwrap();
    let y = m.predict(std::slice::from_ref(&x)).unwrap();
    assert_eq!(y.len(), 1);
    assert_eq!(y[0].latents[0].len(), d.time * d.tokens() * 3);
    assert_eq!(y[0].latents[1].len(), d.time * d.tokens() * 2);
}

#[test]
fn temporal_attention_is_site_local_without_spatial_mixing() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = bank(&d, 1, &mut rng);
    let m = model(&d, 2);
    let x = b.mosaic(&d, 0, 5, false).unwrap();
    let run = |x: &CbcInput, spatial: bool| {
        let mut g = Graph::new(&m.params);
        let y = m.aiwp.forward(&mut g, &[x], spatial).unwrap();
        g.value(y).data().to_vec()
    };
    let (t, c) = (d.time, d.channels());
    let probe = 13;
    let mut x2 = x.clone();
    for k in 0..t * c {
        x2.data[probe * t * c + k] += 0.5;
    }
    let (a, b2) = (run(&x, false), run(&x2, false));
    for site in 0..d.sites() {
        let changed = (0..t * c).any(|k| a[site * t * c + k] != b2[site * t * c + k]);
        assert_eq!(changed, site == probe, "site {site}");
    }
    // With spatial attention on, the perturbation spreads.
    let (a, b2) = (run(&x, true), run(&x2, true));
    assert!((0..t * c).any(|k| a[k] != b2[k]));
}

#[test]
fn ts_block_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let blk = TsBlock::new(&mut Init::new(&mut store, &mut rng), "ts", 16, 2).unwrap();
    let (b, s, t) = (2, 4, 3);
    let lay = TsLayout::new(b, s, t);
    let x: Vec<f64> = (0..b * s * t * 16).map(|_| rng.random_range(-1.0..1.0)).collect();
    // Mean-scaled probe keeps the loss O(1) so difference roundoff stays small;
    // the key bias has an exactly zero gradient and only sees that roundoff.
    let n = (b * s * t * 16) as f64;
    let w: Vec<f64> = (0..b * s * t * 16).map(|_| rng.random_range(-1.0..1.0) / n).collect();
    let rep = grad_check(&store, GradCheckConfig { eps: 1e-5, ..Default::default() }, |g| {
        let xi = input_matrix(g, b * s * t, 16, x.clone())?;
        let wi = input_matrix(g, b * s * t, 16, w.clone())?;
        let y = blk.forward(g, xi, &lay, true).map_err(|e| NnError::Argument(e.to_string()))?;
        let y = g.mul(y, wi)?;
        Ok(g.sum_all(y))
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-5, "{rep:?}");
}

#[test]
fn full_model_loss_gradients_match_finite_differences() {
    let d = AiwpDims { side: 1, ..dims() };
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let aiwp = Aiwp::new(&mut Init::new(&mut store, &mut rng), "aiwp", d.clone()).unwrap();
    let b = WindowBank {
        spec: spec(),
        first: 0,
        windows: (0..2).map(|_| (0..12).map(|_| random_window(&d, &mut rng)).collect()).collect(),
    };
    let x = b.mosaic(&d, 0, 5, false).unwrap();
    let y = b.mosaic(&d, 1, 5, false).unwrap();
    let rep = grad_check(&store, GradCheckConfig { eps: 1e-6, ..Default::default() }, |g| {
        let (l, _) = aiwp.loss(g, &[&x], &[&y], true).map_err(|e| NnError::Argument(e.to_string()))?.unwrap();
        Ok(l)
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-5, "{rep:?}");
}

#[test]
fn loss_ignores_border_targets() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = bank(&d, 2, &mut rng);
    let m = model(&d, 3);
    let x = b.mosaic(&d, 0, 5, false).unwrap();
    let y = b.mosaic(&d, 1, 5, false).unwrap();
    let loss = |y: &CbcInput| {
        let mut g = Graph::new(&m.params);
        let (l, border) = m.aiwp.loss(&mut g, &[&x], &[y], true).unwrap().unwrap();
        (g.value(l).data()[0].to_bits(), border)
    };
    let mut y2 = y.clone();
    let center = d.center_sites();
    let tc = d.time * d.channels();
    for site in 0..d.sites() {
        if !center.contains(&site) {
            y2.data[site * tc..(site + 1) * tc].fill(50.0);
        }
    }
    let (a, ba) = loss(&y);
    let (b2, bb) = loss(&y2);
    assert_eq!(a, b2);
    assert!(bb > ba);
}

#[test]
fn unobserved_targets_are_excluded() {
    let d = dims();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = bank(&d, 2, &mut rng);
    let m = model(&d, 4);
    let x = b.mosaic(&d, 0, 5, false).unwrap();
    let mut y = b.mosaic(&d, 1, 5, false).unwrap();
    y.observed.iter_mut().for_each(|o| *o = false);
    let mut g = Graph::new(&m.params);
    assert!(m.aiwp.loss(&mut g, &[&x], &[&y], true).unwrap().is_none());
}

#[test]
fn one_step_rollout_matches_stitched_tile_forecasts() {
    let d = dims();
    let s = spec();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let b = bank(&d, 1, &mut rng);
    let m = model(&d, 5);
    let out = rollout(&m, &s, &b.windows[0], 1, false, None).unwrap();
    for tile in 0..s.n_tiles() {
        // Oracle: mosaic built straight from the initial windows, no cache.
        let x = b.mosaic(&d, 0, tile, false).unwrap();
        let mut g = Graph::new(&m.params);
        let y = m.aiwp.forward(&mut g, &[&x], true).unwrap();
        let want = extract_center(&d, g.value(y).data(), 0);
        for (p, q) in out[0][tile].latents.iter().flatten().zip(want.latents.iter().flatten()) {
            assert!((p - q).abs() <= 1e-6 * (1.0 + q.abs()), "tile {tile}: {p} vs {q}");
        }
    }
}

#[test]
fn rollout_is_deterministic_order_free_and_complete() {
    let d = dims();
    let s = spec();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let b = bank(&d, 1, &mut rng);
    let m = model(&d, 6);
    let base = rollout(&m, &s, &b.windows[0], 3, false, None).unwrap();
    assert_eq!(base.len(), 3);
    assert!(base.iter().flatten().flat_map(|w| w.latents.iter().flatten()).all(|v| v.is_finite()));
    assert_eq!(base, rollout(&m, &s, &b.windows[0], 3, false, None).unwrap());
    let mut order: Vec<usize> = (0..s.n_tiles()).collect();
    for _ in 0..5 {
        order.shuffle(&mut rng);
        let other = rollout(&m, &s, &b.windows[0], 3, false, Some(&order)).unwrap();
        for (x, y) in base.iter().flatten().zip(other.iter().flatten()) {
            for (p, q) in x.latents.iter().flatten().zip(y.latents.iter().flatten()) {
                assert!((p - q).abs() <= 1e-6 * (1.0 + q.abs()));
            }
        }
    }
    assert!(rollout(&m, &s, &b.windows[0], 0, false, None).is_err());
    assert!(rollout(&m, &s, &b.windows[0], 1, false, Some(&[0, 0])).is_err());
}

#[test]
fn checkpoint_round_trip() {
    let d = dims();
    let m = model(&d, 9);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("aiwp.ckpt");
    m.save(&p).unwrap();
    let back = AiwpModel::load(&p, d.clone()).unwrap();
    assert_eq!(back.params.to_named(), m.params.to_named());
    assert!(AiwpModel::load(&p, AiwpDims { dim: 12, ..d }).is_err());
}
