//! Finite-difference gradient checks of every trainable building block, in
//! f64, on small fixed random inputs.

use std::rc::Rc;

use dawp_nn::layers::{input_matrix, patchify};
use dawp_nn::{
    grad_check, AttnMask, GeluFfn, GradCheckConfig, GradCheckReport, Graph, Init, LayerNorm, NnError, ParamStore, PatchEmbed,
    SwigluFfn, Tensor, TransformerBlock, Var,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aiwp::{Aiwp, AiwpDims, TsBlock, TsLayout, WindowBank};
use crate::aida::{pack, Aida, AidaDims, PackMode, TokenWindow};
use crate::error::Result;
use crate::grid::GridSpec;
use crate::mvae::{Vae, VaeDims};

pub struct GradCase {
    pub name: &'static str,
    pub report: GradCheckReport,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn nn(e: crate::CoreError) -> NnError {
    NnError::Argument(e.to_string())
}

/// Weighted sum of `y` with fixed weights scaled by `1 / len`, so every output
/// element enters the objective and the objective stays O(1).
fn project(g: &mut Graph<'_, f64>, y: Var, seed: u64) -> dawp_nn::Result<Var> {
    let n = g.value(y).len();
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0) / n as f64).collect();
    let w = g.input(Tensor::new(g.value(y).shape(), w)?);
    let p = g.mul(y, w)?;
    Ok(g.sum_all(p))
}

fn case<F>(name: &'static str, store: &ParamStore<f64>, eps: f64, f: F) -> Result<GradCase>
where
    F: Fn(&mut Graph<'_, f64>) -> dawp_nn::Result<Var>,
{
    let report = grad_check(store, GradCheckConfig { eps, ..Default::default() }, f)?;
    Ok(GradCase { name, report })
}

pub fn layer_norm() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::<f64>::new();
    let ln = LayerNorm::new(&mut Init::new(&mut store, &mut r), "ln", 6)?;
    for id in store.ids().collect::<Vec<_>>() {
        for v in store.value_mut(id).data_mut() {
            *v += r.random_range(-0.5..0.5);
        }
    }
    let x = store.register("x", Tensor::new(&[4, 6], uniform(&mut r, 24))?)?;
    case("layer_norm", &store, 1e-4, |g| {
        let xv = g.param(x);
        let y = ln.forward(g, xv)?;
        project(g, y, 2)
    })
}

pub fn masked_attention() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::<f64>::new();
    let q = store.register("q", Tensor::new(&[10, 16], uniform(&mut r, 160))?)?;
    let k = store.register("k", Tensor::new(&[10, 16], uniform(&mut r, 160))?)?;
    let v = store.register("v", Tensor::new(&[10, 16], uniform(&mut r, 160))?)?;
    let present = vec![true, false, true, true, false, true, true, true, false, true];
    let mask = Rc::new(AttnMask::key_padding(2, 5, present)?);
    case("masked_attention", &store, 1e-4, |g| {
        let (qv, kv, vv) = (g.param(q), g.param(k), g.param(v));
        let y = g.attention(qv, kv, vv, 4, mask.clone())?;
        project(g, y, 3)
    })
}

pub fn gelu_ffn() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let ffn = GeluFfn::new(&mut Init::new(&mut store, &mut r), "gelu", 8, 32)?;
    let x = uniform(&mut r, 24);
    case("gelu_ffn", &store, 1e-4, |g| {
        let xi = input_matrix(g, 3, 8, x.clone())?;
        let y = ffn.forward(g, xi)?;
        project(g, y, 4)
    })
}

pub fn swiglu_ffn() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::<f64>::new();
    let ffn = SwigluFfn::new(&mut Init::new(&mut store, &mut r), "swiglu", 8, 32)?;
    let x = uniform(&mut r, 24);
    case("swiglu_ffn", &store, 1e-4, |g| {
        let xi = input_matrix(g, 3, 8, x.clone())?;
        let y = ffn.forward(g, xi)?;
        project(g, y, 5)
    })
}

pub fn patch_embed() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::<f64>::new();
    let pe = PatchEmbed::new(&mut Init::new(&mut store, &mut r), "pe", 2, 8, 4, 6)?;
    let tile = uniform(&mut r, 2 * 8 * 8);
    let patches = patchify(&tile, 2, 8, 8, 4)?;
    case("patch_embed", &store, 1e-4, |g| {
        let p = input_matrix(g, 4, 32, patches.clone())?;
        let y = pe.forward(g, p)?;
        project(g, y, 6)
    })
}

pub fn transformer_block() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(6);
    let mut store = ParamStore::<f64>::new();
    let blk = TransformerBlock::new(&mut Init::new(&mut store, &mut r), "blk", 16, 4)?;
    let x = uniform(&mut r, 6 * 16);
    let mask = Rc::new(AttnMask::key_padding(1, 6, vec![true, true, false, true, true, false])?);
    case("transformer_block_d16", &store, 1e-4, |g| {
        let xi = input_matrix(g, 6, 16, x.clone())?;
        let y = blk.forward(g, xi, mask.clone())?;
        project(g, y, 7)
    })
}

pub fn vae_loss() -> Result<GradCase> {
    let d = VaeDims {
        channels: 2,
        tile: 8,
        patch: 4,
        dim: 8,
        enc_blocks: 1,
        dec_blocks: 1,
        heads: 2,
    };
    let mut r = ChaCha8Rng::seed_from_u64(7);
    let mut store = ParamStore::<f64>::new();
    let vae = Vae::new(&mut Init::new(&mut store, &mut r), "vae", d)?;
    let mut tiles: Vec<f32> = (0..2 * d.tile_len()).map(|_| r.random_range(-1.0..1.0)).collect();
    // One patch of the first tile is missing.
    for c in 0..d.channels {
        for y in 4..8 {
            for x in 4..8 {
                tiles[(c * 8 + y) * 8 + x] = f32::NAN;
            }
        }
    }
    let noise = uniform(&mut r, 2 * d.tokens() * d.latent());
    case("vae_loss", &store, 1e-4, |g| {
        let (loss, _, _) = vae.loss(g, &tiles, 0.1, Some(noise.clone()), 0.5).map_err(nn)?;
        Ok(loss)
    })
}

pub fn ts_block() -> Result<GradCase> {
    let mut r = ChaCha8Rng::seed_from_u64(8);
    let mut store = ParamStore::<f64>::new();
    let blk = TsBlock::new(&mut Init::new(&mut store, &mut r), "ts", 16, 2)?;
    let (b, s, t) = (2, 4, 3);
    let lay = TsLayout::new(b, s, t);
    let x = uniform(&mut r, b * s * t * 16);
    // The key bias gradient is exactly zero (softmax shift invariance), so it
    // only ever sees difference roundoff; a smaller step keeps that low.
    case("ts_block_d16", &store, 1e-5, |g| {
        let xi = input_matrix(g, b * s * t, 16, x.clone())?;
        let y = blk.forward(g, xi, &lay, true).map_err(nn)?;
        project(g, y, 9)
    })
}

fn random_window(rng: &mut ChaCha8Rng, latents: &[usize], slots: usize, p_obs: f64) -> TokenWindow {
    TokenWindow {
        latents: latents.iter().map(|lc| (0..slots * lc).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
        observed: latents.iter().map(|_| (0..slots).map(|_| rng.random_bool(p_obs)).collect()).collect(),
    }
}

pub fn aida_loss() -> Result<GradCase> {
    let d = AidaDims {
        latents: vec![8, 4],
        tokens: 4,
        time: 2,
        enc_dim: 8,
        enc_blocks: 1,
        dec_dim: 8,
        dec_blocks: 1,
        heads: 2,
    };
    let mut r = ChaCha8Rng::seed_from_u64(10);
    let mut store = ParamStore::<f64>::new();
    let aida = Aida::new(&mut Init::new(&mut store, &mut r), "aida", d.clone())?;
    let ws: Vec<TokenWindow> = (0..2).map(|_| random_window(&mut r, &d.latents, d.slots_per_modality(), 0.7)).collect();
    let mut seqs = Vec::new();
    for w in &ws {
        match pack(w, 3, PackMode::Train, 5, &mut r)? {
            Some(s) => seqs.push(s),
            None => return Err(crate::CoreError::Contract("gradient suite window has too few observations".into())),
        }
    }
    let refs: Vec<&TokenWindow> = ws.iter().collect();
    // Embedding rows summed over many slots have large curvature.
    case("aida_loss", &store, 1e-6, |g| {
        aida.loss(g, &refs, &seqs).map_err(nn)?.ok_or_else(|| NnError::Argument("no targets".into()))
    })
}

pub fn aiwp_loss() -> Result<GradCase> {
    let d = AiwpDims {
        latents: vec![3, 2],
        side: 1,
        time: 3,
        dim: 8,
        blocks: 1,
        heads: 2,
    };
    let mut r = ChaCha8Rng::seed_from_u64(11);
    let mut store = ParamStore::<f64>::new();
    let aiwp = Aiwp::new(&mut Init::new(&mut store, &mut r), "aiwp", d.clone())?;
    let spec = GridSpec::new(6, 8, 2)?;
    let slots = d.time * d.tokens();
    let bank = WindowBank {
        spec,
        first: 0,
        windows: (0..2).map(|_| (0..spec.n_tiles()).map(|_| random_window(&mut r, &d.latents, slots, 0.6)).collect()).collect(),
    };
    let x = bank.mosaic(&d, 0, 5, false)?;
    let y = bank.mosaic(&d, 1, 5, false)?;
    case("aiwp_loss", &store, 1e-6, |g| {
        let (l, _) = aiwp.loss(g, &[&x], &[&y], true).map_err(nn)?.ok_or_else(|| NnError::Argument("no targets".into()))?;
        Ok(l)
    })
}

/// Every check, in a fixed order.
pub fn run_all() -> Result<Vec<GradCase>> {
    let cases: [fn() -> Result<GradCase>; 10] = [
        layer_norm,
        masked_attention,
        gelu_ffn,
        swiglu_ffn,
        patch_embed,
        transformer_block,
        vae_loss,
        ts_block,
        aida_loss,
        aiwp_loss,
    ];
    cases.iter().map(|f| f()).collect()
}
