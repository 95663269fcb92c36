use std::rc::Rc;

use dawp_nn::{
    grad_check, grad_check_with, patchify, AttnMask, GeluFfn, GradCheckConfig, Graph, Init,
    LayerNorm, Linear, PatchEmbed, ParamStore, SwigluFfn, Tensor, TransformerBlock,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(11)
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Fixed random projection of an arbitrary output to a scalar, so every output
/// element participates in the checked objective.
fn project(g: &mut Graph<'_, f64>, y: dawp_nn::Var, seed: u64) -> dawp_nn::Result<dawp_nn::Var> {
    let n = g.value(y).len();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w = Tensor::new(g.value(y).shape(), (0..n).map(|_| r.random_range(-1.0..1.0)).collect())?;
    let w = g.input(w);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

const TOL: f64 = 1e-5;

#[test]
fn linear_layer_gradients_are_nearly_exact() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut Init::new(&mut store, &mut r), "lin", 5, 4).unwrap();
    let x = random_tensor(&mut r, &[3, 5]);
    let rep = grad_check(&store, GradCheckConfig::default(), |g| {
        let xi = g.input(x.clone());
        let y = lin.forward(g, xi)?;
        project(g, y, 1)
    })
    .unwrap();
    assert!(rep.max_rel_err < 1e-8, "{rep:?}");
}

#[test]
fn layer_norm_gradients_including_input() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut Init::new(&mut store, &mut r), "ln", 6).unwrap();
    // Perturb gain/bias away from the identity so their gradients are generic.
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += r.random_range(-0.5..0.5);
        }
    }
    let xid = store.register("x", random_tensor(&mut r, &[4, 6])).unwrap();
    let rep = grad_check(&store, GradCheckConfig::default(), |g| {
        let x = g.param(xid);
        let y = ln.forward(g, x)?;
        project(g, y, 2)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "{rep:?}");
}

#[test]
fn masked_attention_gradients() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let q = store.register("q", random_tensor(&mut r, &[2 * 5, 16])).unwrap();
    let k = store.register("k", random_tensor(&mut r, &[2 * 5, 16])).unwrap();
    let v = store.register("v", random_tensor(&mut r, &[2 * 5, 16])).unwrap();
    let present = vec![
        true, false, true, true, false, //
        true, true, true, false, true,
    ];
    let mask = Rc::new(AttnMask::key_padding(2, 5, present).unwrap());
    let rep = grad_check(&store, GradCheckConfig::default(), |g| {
        let (qv, kv, vv) = (g.param(q), g.param(k), g.param(v));
        let y = g.attention(qv, kv, vv, 4, mask.clone())?;
        project(g, y, 3)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "{rep:?}");
}

#[test]
fn transformer_block_gradients_d16() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let blk = TransformerBlock::new(&mut Init::new(&mut store, &mut r), "blk", 16, 4).unwrap();
    let x = random_tensor(&mut r, &[6, 16]);
    let mask = Rc::new(AttnMask::key_padding(1, 6, vec![true, true, false, true, true, false]).unwrap());
    let rep = grad_check(&store, GradCheckConfig::default(), |g| {
        let xi = g.input(x.clone());
        let y = blk.forward(g, xi, mask.clone())?;
        project(g, y, 4)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "{rep:?}");

}

#[test]
fn ffn_gradients() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let (gelu, swiglu) = {
        let mut init = Init::new(&mut store, &mut r);
        (
            GeluFfn::new(&mut init, "gelu", 8, 32).unwrap(),
            SwigluFfn::new(&mut init, "swiglu", 8, 32).unwrap(),
        )
    };
    let x = random_tensor(&mut r, &[3, 8]);
    for which in 0..2 {
        let rep = grad_check(&store, GradCheckConfig::default(), |g| {
            let xi = g.input(x.clone());
            let y = if which == 0 {
                gelu.forward(g, xi)?
            } else {
                swiglu.forward(g, xi)?
            };
            project(g, y, 5)
        })
        .unwrap();
        assert!(rep.max_rel_err < TOL, "ffn {which}: {rep:?}");
    }
}

#[test]
fn patch_embed_and_conv_gradients() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let (pe, cw, cb) = {
        let mut init = Init::new(&mut store, &mut r);
        (
            PatchEmbed::new(&mut init, "pe", 2, 8, 4, 6).unwrap(),
            init.normal("conv.w", &[2, 2, 3, 3], 0.3).unwrap(),
            init.normal("conv.b", &[2], 0.3).unwrap(),
        )
    };
    let tile: Vec<f64> = (0..2 * 8 * 8).map(|_| r.random_range(-1.0..1.0)).collect();
    let patches = patchify(&tile, 2, 8, 8, 4).unwrap();
    let rep = grad_check(&store, GradCheckConfig::default(), |g| {
        let p = g.input(Tensor::new(&[4, 32], patches.clone())?);
        let tok = pe.forward(g, p)?;
        let a = project(g, tok, 6)?;
        let img = g.input(Tensor::new(&[1, 2, 8, 8], tile.clone())?);
        let (w, b) = (g.param(cw), g.param(cb));
        let c = g.conv3x3(img, w, b)?;
        let bsum = project(g, c, 7)?;
        g.add(a, bsum)
    })
    .unwrap();
    assert!(rep.max_rel_err < TOL, "{rep:?}");
}

#[test]
fn corrupted_gradient_is_caught() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let lin = Linear::new(&mut Init::new(&mut store, &mut r), "lin", 4, 3).unwrap();
    let x = random_tensor(&mut r, &[2, 4]);
    let rep = grad_check_with(
        &store,
        GradCheckConfig::default(),
        |g| {
            let xi = g.input(x.clone());
            let y = lin.forward(g, xi)?;
            project(g, y, 8)
        },
        |grads| grads[0].iter_mut().for_each(|v| *v *= 1.5),
    )
    .unwrap();
    assert!(rep.max_rel_err > 1e-2, "{rep:?}");
    assert_eq!(rep.worst_param, "lin.w");
}

#[test]
fn masked_losses_zero_grad_at_nan_targets() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let p = g.input_tracked(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
    let target: Rc<[f64]> = vec![1.0, f64::NAN, 5.0].into();
    let mae = g.masked_mae(p, target.clone()).unwrap();
    assert_eq!(g.value(mae).data()[0], 1.0);
    let mse = g.masked_mse(p, target).unwrap();
    let total = g.add(mae, mse).unwrap();
    g.backward(total).unwrap();
    assert_eq!(g.grad(p).unwrap()[1], 0.0);
}

#[test]
fn masked_mae_ignores_pred_at_nan_cells() {
    let store = ParamStore::<f64>::new();
    let target: Rc<[f64]> = vec![1.0, f64::NAN, 5.0].into();
    let mut vals = Vec::new();
    for junk in [2.0, -1e6, 42.0] {
        let mut g = Graph::new(&store);
        let p = g.input(Tensor::new(&[3], vec![1.0, junk, 3.0]).unwrap());
        let l = g.masked_mae(p, target.clone()).unwrap();
        vals.push(g.value(l).data()[0]);
    }
    assert!(vals.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn masked_loss_without_valid_cells_is_contract_error() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let p = g.input(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
    assert!(g.masked_mae(p, vec![f64::NAN, f64::NAN].into()).is_err());
}

#[test]
fn single_visible_key_returns_its_value_row() {
    let mut r = rng();
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let q = g.input(random_tensor(&mut r, &[3, 8]));
    let k = g.input(random_tensor(&mut r, &[3, 8]));
    let vt = random_tensor(&mut r, &[3, 8]);
    let v = g.input(vt.clone());
    let vis = vec![false, true, false].repeat(3);
    let mask = Rc::new(AttnMask::pairs(1, 3, 3, vis, vec![false; 3]).unwrap());
    let y = g.attention(q, k, v, 2, mask).unwrap();
    for i in 0..3 {
        assert_eq!(&g.value(y).data()[i * 8..(i + 1) * 8], &vt.data()[8..16]);
    }
}

#[test]
fn uniform_logits_average_the_values() {
    let mut r = rng();
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let q = g.input(Tensor::zeros(&[4, 6]));
    let k = g.input(random_tensor(&mut r, &[4, 6]));
    let vt = random_tensor(&mut r, &[4, 6]);
    let v = g.input(vt.clone());
    let y = g.attention(q, k, v, 3, Rc::new(AttnMask::all_visible(1, 4, 4))).unwrap();
    for c in 0..6 {
        let mean: f64 = (0..4).map(|j| vt.data()[j * 6 + c]).sum::<f64>() / 4.0;
        for i in 0..4 {
            assert!((g.value(y).data()[i * 6 + c] - mean).abs() < 1e-12);
        }
    }
}

#[test]
fn query_without_visible_keys_must_be_inert() {
    let vis = vec![false, false, true, true];
    assert!(AttnMask::pairs(1, 2, 2, vis.clone(), vec![false, false]).is_err());
    assert!(AttnMask::pairs(1, 2, 2, vis, vec![true, false]).is_ok());
}

#[test]
fn layer_norm_standardizes_and_handles_constants() {
    let mut r = rng();
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.input(random_tensor(&mut r, &[5, 32]));
    let y = g.layer_norm(x, None, None, 1e-5).unwrap();
    for row in g.value(y).data().chunks(32) {
        let m: f64 = row.iter().sum::<f64>() / 32.0;
        let v: f64 = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 32.0;
        assert!(m.abs() < 1e-6);
        assert!((v - 1.0).abs() < 1e-4);
    }
    let c = g.input(Tensor::full(&[1, 8], 3.25));
    let y = g.layer_norm(c, None, None, 1e-5).unwrap();
    assert!(g.value(y).data().iter().all(|v| *v == 0.0));
}

#[test]
fn gelu_fixed_point() {
    assert_eq!(dawp_nn::graph::gelu_scalar(0.0f64), 0.0);
}

#[test]
fn patch_embed_rejects_indivisible_tiles() {
    let mut store = ParamStore::<f32>::new();
    let mut r = rng();
    assert!(PatchEmbed::new(&mut Init::new(&mut store, &mut r), "pe", 1, 10, 4, 8).is_err());
}

#[test]
fn patch_embed_locality_and_zero_input() {
    let mut r = rng();
    let mut store = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut Init::new(&mut store, &mut r), "pe", 2, 8, 4, 6).unwrap();
    let run = |tile: &[f64]| {
        let mut g = Graph::new(&store);
        let p = g.input(Tensor::new(&[4, 32], patchify(tile, 2, 8, 8, 4).unwrap()).unwrap());
        let y = pe.forward(&mut g, p).unwrap();
        g.value(y).data().to_vec()
    };
    // Zero input with zero projection bias: tokens are the positional embeddings.
    let zero = run(&vec![0.0; 128]);
    assert_eq!(&zero[..], store.value(pe.pos.table).data());

    let tile: Vec<f64> = (0..128).map(|_| r.random_range(-1.0..1.0)).collect();
    let base = run(&tile);
    let mut bumped = tile.clone();
    bumped[8 + 5] += 1.0; // channel 0, row 1, col 5 -> patch (0, 1)
    let after = run(&bumped);
    let changed: Vec<usize> = (0..4)
        .filter(|t| base[t * 6..(t + 1) * 6] != after[t * 6..(t + 1) * 6])
        .collect();
    assert_eq!(changed, vec![1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hidden_keys_never_change_visible_outputs(seed in any::<u64>(), hidden_bits in 1u8..127) {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let len = 7;
        let present: Vec<bool> = (0..len).map(|i| hidden_bits & (1 << i) == 0).collect();
        prop_assume!(present.iter().any(|p| *p));
        let mask = Rc::new(AttnMask::key_padding(1, len, present.clone()).unwrap());
        let q = random_tensor(&mut r, &[len, 8]);
        let k = random_tensor(&mut r, &[len, 8]);
        let v = random_tensor(&mut r, &[len, 8]);
        let (mut k2, mut v2) = (k.clone(), v.clone());
        for j in 0..len {
            if !present[j] {
                for c in 0..8 {
                    k2.data_mut()[j * 8 + c] = r.random_range(-1e3..1e3);
                    v2.data_mut()[j * 8 + c] = f64::NAN;
                }
            }
        }
        let store = ParamStore::<f64>::new();
        let run = |k: &Tensor<f64>, v: &Tensor<f64>| {
            let mut g = Graph::new(&store);
            let (qi, ki, vi) = (g.input(q.clone()), g.input(k.clone()), g.input(v.clone()));
            let y = g.attention(qi, ki, vi, 2, mask.clone()).unwrap();
            g.value(y).data().to_vec()
        };
        let a = run(&k, &v);
        let b = run(&k2, &v2);
        for i in 0..len {
            if present[i] {
                for c in 0..8 {
                    prop_assert_eq!(a[i * 8 + c].to_bits(), b[i * 8 + c].to_bits());
                }
            }
        }
    }
}

#[test]
fn paper_scale_patch_embed_has_81_tokens() {
    let mut store = ParamStore::<f32>::new();
    let mut r = rng();
    let pe = PatchEmbed::new(&mut Init::new(&mut store, &mut r), "pe", 9, 144, 16, 8).unwrap();
    assert_eq!(pe.tokens, 81);
    let tile = vec![0.5f32; 9 * 144 * 144];
    let mut g = Graph::new(&store);
    let p = g.input(Tensor::new(&[81, 9 * 256], patchify(&tile, 9, 144, 144, 16).unwrap()).unwrap());
    let y = pe.forward(&mut g, p).unwrap();
    assert_eq!(g.value(y).shape(), &[81, 8]);
}

#[test]
fn matmul_rows_do_not_depend_on_batch_size() {
    let mut r = rng();
    let mut store = ParamStore::<f32>::new();
    let lin = Linear::new(&mut Init::new(&mut store, &mut r), "lin", 24, 40).unwrap();
    let rows: Vec<f32> = (0..37 * 24).map(|_| r.random_range(-1.0..1.0)).collect();
    let run = |n: usize| {
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::new(&[n, 24], rows[..n * 24].to_vec()).unwrap());
        let y = lin.forward(&mut g, x).unwrap();
        g.value(y).data()[..3 * 40].to_vec()
    };
    let base = run(3);
    for n in [4, 9, 16, 37] {
        assert!(run(n).iter().zip(&base).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}

#[test]
fn softmax_rows_sum_to_one_and_hidden_weight_is_zero() {
    let mut r = rng();
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let q = g.input(random_tensor(&mut r, &[5, 4]));
    let k = g.input(random_tensor(&mut r, &[5, 4]));
    let ones = Tensor::full(&[5, 4], 1.0);
    let v = g.input(ones);
    let present = vec![true, true, false, true, false];
    let mask = Rc::new(AttnMask::key_padding(1, 5, present.clone()).unwrap());
    // With all-ones values each output coordinate is the row sum of the weights.
    let y = g.attention(q, k, v, 1, mask.clone()).unwrap();
    for (i, row) in g.value(y).data().chunks(4).enumerate() {
        let want = if present[i] { 1.0 } else { 0.0 };
        assert!(row.iter().all(|s| (s - want).abs() < 1e-6));
    }
    // One-hot value at a hidden key contributes nothing.
    let mut onehot = Tensor::zeros(&[5, 4]);
    onehot.data_mut()[2 * 4] = 1.0;
    let v = g.input(onehot);
    let y = g.attention(q, k, v, 1, mask).unwrap();
    assert!(g.value(y).data().iter().all(|x| *x == 0.0));
}
