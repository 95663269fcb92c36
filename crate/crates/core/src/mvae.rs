//! Masked ViT-VAE: one per sensor. Patches with too few observed cells are hidden
//! from every attention layer on the encoder side and replaced by a learned mask
//! embedding on the decoder side.

use std::path::Path;
use std::rc::Rc;

use dawp_nn::layers::{input_matrix, unpatchify_index};
use dawp_nn::{patchify, AttnMask, Embedding, Graph, Init, Linear, ParamId, ParamStore, PatchEmbed, Scalar, TransformerBlock, Var};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::RunConfig;
use crate::error::{arg, CoreError, Result};
use crate::grid::GridSpec;
use crate::obsio::{GriddedField, NamedArray, NormStats};
use crate::synthgen::rng_for;
use crate::train::{self, check_finite, fmt, CsvLog, Optim};

/// `logvar` is clamped to this range before `sigma = exp(logvar / 2)`.
const LOGVAR_RANGE: (f64, f64) = (-30.0, 20.0);
/// Tiles per forward pass at inference.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VaeDims {
    pub channels: usize,
    pub tile: usize,
    pub patch: usize,
    pub dim: usize,
    pub enc_blocks: usize,
    pub dec_blocks: usize,
    pub heads: usize,
}

impl VaeDims {
    pub fn from_config(cfg: &RunConfig, channels: usize) -> Self {
        Self {
            channels,
            tile: cfg.tile,
            patch: cfg.patch,
            dim: cfg.vae_dim,
            enc_blocks: cfg.vae_enc_blocks,
            dec_blocks: cfg.vae_dec_blocks,
            heads: cfg.vae_heads,
        }
    }

    pub fn side(&self) -> usize {
        self.tile / self.patch
    }

    pub fn tokens(&self) -> usize {
        self.side() * self.side()
    }

    /// Latent width per token, `4c`.
    pub fn latent(&self) -> usize {
        4 * self.channels
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.patch * self.patch
    }

    pub fn tile_len(&self) -> usize {
        self.channels * self.tile * self.tile
    }
}

/// Patch `k` of a `[C, tile, tile]` tile is observed when at least `threshold`
/// of its cells (over all channels) are not NaN.
pub fn patch_mask(tile: &[f32], dims: &VaeDims, threshold: f64) -> Vec<bool> {
    let (s, p, t) = (dims.side(), dims.patch, dims.tile);
    let mut out = Vec::with_capacity(dims.tokens());
    for i in 0..s {
        for j in 0..s {
            let mut n = 0;
            for c in 0..dims.channels {
                for y in 0..p {
                    let row = (c * t + i * p + y) * t + j * p;
                    n += tile[row..row + p].iter().filter(|v| !v.is_nan()).count();
                }
            }
            out.push(n as f64 >= threshold * dims.patch_len() as f64 && n > 0);
        }
    }
    out
}

/// Zero-filled patch rows `[B * P, c p²]` and the per-token observed flags.
pub fn prepare<T: Scalar>(tiles: &[f32], dims: &VaeDims, threshold: f64) -> Result<(Vec<T>, Vec<bool>)> {
    let n = dims.tile_len();
    if tiles.len() % n != 0 {
        return arg(format!("{} values is not a whole number of {n}-value tiles", tiles.len()));
    }
    let mut patches = Vec::with_capacity(tiles.len());
    let mut observed = Vec::with_capacity(tiles.len() / n * dims.tokens());
    for tile in tiles.chunks_exact(n) {
        observed.extend(patch_mask(tile, dims, threshold));
        let filled: Vec<T> = tile.iter().map(|v| if v.is_nan() { T::zero() } else { T::c(*v as f64) }).collect();
        patches.extend(patchify(&filled, dims.channels, dims.tile, dims.tile, dims.patch)?);
    }
    Ok((patches, observed))
}

pub struct Encoded {
    pub mu: Var,
    pub sigma: Var,
    pub z: Var,
}

#[derive(Clone, Debug)]
pub struct Vae {
    pub dims: VaeDims,
    embed: PatchEmbed,
    enc: Vec<TransformerBlock>,
    quant: [TransformerBlock; 2],
    moments: Linear,
    lift: Linear,
    mask_emb: Embedding,
    dec_pos: Embedding,
    dec: Vec<TransformerBlock>,
    out: Linear,
    conv_w: ParamId,
    conv_b: ParamId,
}

impl Vae {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dims: VaeDims) -> Result<Self> {
        let d = dims.dim;
        let c = dims.channels;
        let block = |init: &mut Init<'_, T, R>, n: String| TransformerBlock::new(init, &n, d, dims.heads);
        let embed = PatchEmbed::new(init, &format!("{name}.embed"), c, dims.tile, dims.patch, d)?;
        let enc = (0..dims.enc_blocks)
            .map(|i| block(init, format!("{name}.enc{i}")))
            .collect::<std::result::Result<_, _>>()?;
        let quant = [block(init, format!("{name}.quant0"))?, block(init, format!("{name}.quant1"))?];
        let moments = Linear::new(init, &format!("{name}.moments"), 2 * d, 8 * c)?;
        let lift = Linear::new(init, &format!("{name}.lift"), 4 * c, d)?;
        let mask_emb = Embedding::new(init, &format!("{name}.mask"), 1, d)?;
        let dec_pos = Embedding::new(init, &format!("{name}.dec_pos"), dims.tokens(), d)?;
        let dec = (0..dims.dec_blocks)
            .map(|i| block(init, format!("{name}.dec{i}")))
            .collect::<std::result::Result<_, _>>()?;
        let out = Linear::new(init, &format!("{name}.out"), d, dims.patch_len())?;
        let conv_w = init.normal(&format!("{name}.conv.w"), &[c, c, 3, 3], 0.02)?;
        let conv_b = init.zeros(&format!("{name}.conv.b"), &[c])?;
        Ok(Self {
            dims,
            embed,
            enc,
            quant,
            moments,
            lift,
            mask_emb,
            dec_pos,
            dec,
            out,
            conv_w,
            conv_b,
        })
    }

    /// `patches` is `[B * P, c p²]`. With `noise` (`[B * P, 4c]` standard normal
    /// draws) `z = mu + sigma * noise`, otherwise `z = mu`.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, patches: Var, observed: &[bool], noise: Option<Vec<T>>) -> Result<Encoded> {
        let p = self.dims.tokens();
        let b = observed.len() / p;
        let lc = self.dims.latent();
        let mask = Rc::new(AttnMask::key_padding(b, p, observed.to_vec())?);
        let mut x = self.embed.forward(g, patches)?;
        for blk in &self.enc {
            x = blk.forward(g, x, mask.clone())?;
        }
        let q0 = self.quant[0].forward(g, x, mask.clone())?;
        let q1 = self.quant[1].forward(g, x, mask)?;
        let q = g.concat_cols(&[q0, q1])?;
        let m = self.moments.forward(g, q)?;
        let mu = g.slice_cols(m, 0, lc)?;
        let logvar = g.slice_cols(m, lc, 2 * lc)?;
        let logvar = g.clamp(logvar, LOGVAR_RANGE.0, LOGVAR_RANGE.1);
        let half = g.scale(logvar, 0.5);
        let sigma = g.exp(half);
        let z = match noise {
            Some(eps) => {
                let eps = input_matrix(g, b * p, lc, eps)?;
                let s = g.mul(sigma, eps)?;
                g.add(mu, s)?
            }
            None => mu,
        };
        Ok(Encoded { mu, sigma, z })
    }

    /// Latent tokens `[B * P, 4c]` to tiles `[B, c, tile, tile]`; tokens not
    /// flagged in `observed` are replaced by the mask embedding.
    pub fn decode<T: Scalar>(&self, g: &mut Graph<'_, T>, z: Var, observed: &[bool]) -> Result<Var> {
        let d = self.dims;
        let p = d.tokens();
        let rows = observed.len();
        let b = rows / p;
        let h = self.lift.forward(g, z)?;
        let h = if observed.iter().all(|o| *o) {
            h
        } else {
            let m = self.mask_emb.lookup(g, Rc::from(vec![0usize]))?;
            let both = g.concat_rows(&[h, m])?;
            let idx: Rc<[usize]> = observed.iter().enumerate().map(|(r, o)| if *o { r } else { rows }).collect();
            g.gather_rows(both, idx)?
        };
        let pos = self.dec_pos.lookup(g, (0..rows).map(|r| r % p).collect())?;
        let mut x = g.add(h, pos)?;
        let mask = Rc::new(AttnMask::all_visible(b, p, p));
        for blk in &self.dec {
            x = blk.forward(g, x, mask.clone())?;
        }
        let x = self.out.forward(g, x)?;
        let idx: Rc<[usize]> = unpatchify_index(b, d.channels, d.tile, d.tile, d.patch).into();
        let up = g.gather(x, idx, &[b, d.channels, d.tile, d.tile])?;
        let (w, bias) = (g.param(self.conv_w), g.param(self.conv_b));
        let conv = g.conv3x3(up, w, bias)?;
        Ok(g.add(up, conv)?)
    }

    /// Masked reconstruction MAE plus `kl_weight` times the KL term (summed over
    /// observed tokens, averaged over tiles). Returns `(total, recon, kl)`.
    pub fn loss<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        tiles: &[f32],
        threshold: f64,
        noise: Option<Vec<T>>,
        kl_weight: f64,
    ) -> Result<(Var, Var, Var)> {
        let d = self.dims;
        let (patches, observed) = prepare::<T>(tiles, &d, threshold)?;
        let b = tiles.len() / d.tile_len();
        let x = input_matrix(g, b * d.tokens(), d.patch_len(), patches)?;
        let e = self.encode(g, x, &observed, noise)?;
        let recon = self.decode(g, e.z, &observed)?;
        let target: Rc<[T]> = tiles.iter().map(|v| T::c(*v as f64)).collect();
        let mae = g.masked_mae(recon, target)?;
        let w: Rc<[T]> = observed.iter().map(|o| if *o { T::one() } else { T::zero() }).collect();
        let kl = g.kl_normal(e.mu, e.sigma, w, 1.0 / b as f64)?;
        let klw = g.scale(kl, kl_weight);
        Ok((g.add(mae, klw)?, mae, kl))
    }
}

/// A trained VAE with its input normalization and latent normalization.
pub struct VaeModel {
    pub vae: Vae,
    pub params: ParamStore<f32>,
    pub stats: NormStats,
    pub latent_mean: Vec<f32>,
    pub latent_std: Vec<f32>,
    pub threshold: f64,
}

impl VaeModel {
    pub fn init(dims: VaeDims, stats: NormStats, threshold: f64, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, &[0x7AE]);
        let vae = Vae::new(&mut Init::new(&mut params, &mut rng), "vae", dims)?;
        let lc = dims.latent();
        Ok(Self {
            vae,
            params,
            stats,
            latent_mean: vec![0.0; lc],
            latent_std: vec![1.0; lc],
            threshold,
        })
    }

    pub fn dims(&self) -> VaeDims {
        self.vae.dims
    }

    /// Mean-mode latents of normalized tiles `[n, c, t, t]` (NaN = missing):
    /// `([n * P, 4c]` normalized latents, observed flags`)`. Latents of missing
    /// patches are zero.
    pub fn encode_tiles(&self, tiles: &[f32]) -> Result<(Vec<f32>, Vec<bool>)> {
        let (mut z, obs) = self.encode_raw(tiles)?;
        let lc = self.dims().latent();
        for (r, row) in z.chunks_exact_mut(lc).enumerate() {
            for (k, v) in row.iter_mut().enumerate() {
                *v = if obs[r] { (*v - self.latent_mean[k]) / self.latent_std[k] } else { 0.0 };
            }
        }
        Ok((z, obs))
    }

    /// Mean-mode latents before latent normalization.
    pub fn encode_raw(&self, tiles: &[f32]) -> Result<(Vec<f32>, Vec<bool>)> {
        let d = self.dims();
        let mut z = Vec::new();
        let mut obs = Vec::new();
        for chunk in tiles.chunks(INFER_CHUNK * d.tile_len()) {
            let (patches, observed) = prepare::<f32>(chunk, &d, self.threshold)?;
            let mut g = Graph::new(&self.params);
            let x = input_matrix(&mut g, observed.len(), d.patch_len(), patches)?;
            let e = self.vae.encode(&mut g, x, &observed, None)?;
            z.extend_from_slice(g.value(e.mu).data());
            obs.extend(observed);
        }
        Ok((z, obs))
    }

    /// Normalized latents `[n * P, 4c]` to normalized tiles `[n, c, t, t]`.
    pub fn decode_tiles(&self, latents: &[f32], observed: &[bool]) -> Result<Vec<f32>> {
        let d = self.dims();
        let (p, lc) = (d.tokens(), d.latent());
        if latents.len() != observed.len() * lc || observed.len() % p != 0 {
            return arg("decode_tiles: latent/flag shape mismatch");
        }
        let raw: Vec<f32> = latents
            .chunks_exact(lc)
            .flat_map(|row| row.iter().enumerate().map(|(k, v)| v * self.latent_std[k] + self.latent_mean[k]))
            .collect();
        let mut out = Vec::with_capacity(observed.len() / p * d.tile_len());
        for (zc, oc) in raw.chunks(INFER_CHUNK * p * lc).zip(observed.chunks(INFER_CHUNK * p)) {
            let mut g = Graph::new(&self.params);
            let z = input_matrix(&mut g, oc.len(), lc, zc.to_vec())?;
            let y = self.vae.decode(&mut g, z, oc)?;
            out.extend_from_slice(g.value(y).data());
        }
        Ok(out)
    }

    fn meta(&self) -> Vec<NamedArray> {
        let f = |v: &[f64]| v.iter().map(|x| *x as f32).collect::<Vec<_>>();
        let arr = |name: &str, data: Vec<f32>| NamedArray {
            name: name.into(),
            shape: vec![data.len()],
            data,
        };
        vec![
            arr("stats.mean", f(&self.stats.mean)),
            arr("stats.std", f(&self.stats.std)),
            arr("latent.mean", self.latent_mean.clone()),
            arr("latent.std", self.latent_std.clone()),
            arr("threshold", vec![self.threshold as f32]),
        ]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        train::save_params(path, &self.params, &self.meta())
    }

    pub fn load(path: &Path, dims: VaeDims, modality: &str) -> Result<Self> {
        let stats = NormStats {
            modality: modality.into(),
            mean: vec![0.0; dims.channels],
            std: vec![1.0; dims.channels],
        };
        let mut m = Self::init(dims, stats, 0.0, 0)?;
        let meta = train::load_params(path, &mut m.params)?;
        let get = |n: &str, len: usize| -> Result<Vec<f32>> {
            let a = train::meta(&meta, n)?;
            if a.data.len() != len {
                return Err(CoreError::Checkpoint(format!("`{n}` has {} values, expected {len}", a.data.len())));
            }
            Ok(a.data.clone())
        };
        let c = dims.channels;
        m.stats.mean = get("stats.mean", c)?.iter().map(|v| *v as f64).collect();
        m.stats.std = get("stats.std", c)?.iter().map(|v| *v as f64).collect();
        m.latent_mean = get("latent.mean", dims.latent())?;
        m.latent_std = get("latent.std", dims.latent())?;
        m.threshold = get("threshold", 1)?[0] as f64;
        Ok(m)
    }
}

/// Normalized training material for one sensor.
pub struct VaeData<'a> {
    pub spec: GridSpec,
    /// Normalized observations (NaN = missing).
    pub obs: &'a GriddedField,
    /// Normalized dense truth, used for the fully observed share of each batch.
    pub dense: Option<&'a GriddedField>,
    pub hours: (usize, usize),
}

impl VaeData<'_> {
    fn sample<R: Rng>(&self, rng: &mut R, dims: &VaeDims, dense_frac: f64, threshold: f64) -> Vec<f32> {
        let tiles: Vec<_> = self.spec.tiles().collect();
        loop {
            let t = rng.random_range(self.hours.0..self.hours.1);
            let at = tiles[rng.random_range(0..tiles.len())];
            if let Some(d) = self.dense.filter(|_| rng.random_bool(dense_frac)) {
                return d.tile(t, at, dims.tile);
            }
            let tile = self.obs.tile(t, at, dims.tile);
            if patch_mask(&tile, dims, threshold).iter().any(|o| *o) {
                return tile;
            }
        }
    }
}

/// Trains from scratch, fits the latent normalization on training tiles and
/// returns the model with its `step,lr,recon_mae,kl` log.
pub fn train_vae(cfg: &RunConfig, data: &VaeData<'_>, stats: NormStats, seed: u64) -> Result<(VaeModel, CsvLog)> {
    let dims = VaeDims::from_config(cfg, stats.mean.len());
    let mut model = VaeModel::init(dims, stats, cfg.obs_threshold, seed)?;
    let mut opt = Optim::new(cfg, cfg.vae_steps, &model.params);
    let mut rng = rng_for(seed, &[0x7AE, 1]);
    let mut log = CsvLog::new(&["step", "lr", "recon_mae", "kl"]);
    let (mut acc_mae, mut acc_kl, mut n) = (0.0, 0.0, 0);
    for step in 1..=cfg.vae_steps {
        let mut tiles = Vec::with_capacity(cfg.vae_batch * dims.tile_len());
        for _ in 0..cfg.vae_batch {
            tiles.extend(data.sample(&mut rng, &dims, cfg.vae_dense_frac, cfg.obs_threshold));
        }
        let noise: Vec<f32> = (0..cfg.vae_batch * dims.tokens() * dims.latent())
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mut g = Graph::new(&model.params);
        let (loss, mae, kl) = model.vae.loss(&mut g, &tiles, cfg.obs_threshold, Some(noise), cfg.kl_weight)?;
        let (mae, kl, total) = (g.value(mae).data()[0] as f64, g.value(kl).data()[0] as f64, g.value(loss).data()[0] as f64);
        check_finite("train-vae", step as u64, total)?;
        g.backward(loss)?;
        let grads = g.into_param_grads();
        let lr = opt.apply(&mut model.params, grads);
        acc_mae += mae;
        acc_kl += kl;
        n += 1;
        if step % cfg.log_every.max(1) == 0 || step == cfg.vae_steps {
            log.row(&[step.to_string(), fmt(lr), fmt(acc_mae / n as f64), fmt(acc_kl / n as f64)]);
            (acc_mae, acc_kl, n) = (0.0, 0.0, 0);
        }
    }
    fit_latent_stats(&mut model, data)?;
    Ok((model, log))
}

/// Per-latent-channel mean and std of mean-mode latents over observed training tokens.
pub fn fit_latent_stats(model: &mut VaeModel, data: &VaeData<'_>) -> Result<()> {
    let d = model.dims();
    let lc = d.latent();
    let mut tiles = Vec::new();
    for t in (data.hours.0..data.hours.1).step_by(3) {
        for at in data.spec.tiles() {
            tiles.extend(data.obs.tile(t, at, d.tile));
        }
    }
    let (z, obs) = model.encode_raw(&tiles)?;
    let mut sum = vec![0.0f64; lc];
    let mut sq = vec![0.0f64; lc];
    let mut n = 0usize;
    for (row, o) in z.chunks_exact(lc).zip(&obs) {
        if *o {
            n += 1;
            for k in 0..lc {
                sum[k] += row[k] as f64;
            }
        }
    }
    if n < 2 {
        return Err(CoreError::Statistics("no observed training tokens for latent statistics".into()));
    }
    let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
    for (row, o) in z.chunks_exact(lc).zip(&obs) {
        if *o {
            for k in 0..lc {
                sq[k] += (row[k] as f64 - mean[k]).powi(2);
            }
        }
    }
    model.latent_mean = mean.iter().map(|m| *m as f32).collect();
    model.latent_std = sq.iter().map(|s| ((s / n as f64).sqrt().max(1e-6)) as f32).collect();
    Ok(())
}

/// Masked MAE (normalized units) of mean-mode reconstructions over every tile
/// of `field` in `hours`, counting only non-NaN cells.
pub fn eval_recon(model: &VaeModel, spec: &GridSpec, field: &GriddedField, hours: (usize, usize), stride: usize) -> Result<f64> {
    let d = model.dims();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for t in (hours.0..hours.1).step_by(stride.max(1)) {
        let mut tiles = Vec::new();
        for at in spec.tiles() {
            tiles.extend(field.tile(t, at, d.tile));
        }
        let (z, obs) = model.encode_tiles(&tiles)?;
        let rec = model.decode_tiles(&z, &obs)?;
        for (r, x) in rec.iter().zip(&tiles) {
            if !x.is_nan() {
                sum += (r - x).abs() as f64;
                n += 1;
            }
        }
    }
    if n == 0 {
        return Err(CoreError::Contract("eval_recon: no observed cells".into()));
    }
    Ok(sum / n as f64)
}
