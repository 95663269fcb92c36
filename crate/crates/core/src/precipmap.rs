//! Precipitation retrieval head: latent tokens of one sensor to surface
//! precipitation (SP) and total column water vapour (TCWV), trained on
//! log-transformed, normalized targets.

use std::path::Path;
use std::rc::Rc;

use dawp_nn::layers::{input_matrix, patchify};
use dawp_nn::{AttnMask, Embedding, Graph, Init, Linear, ParamStore, Scalar, TransformerBlock, Var};
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{arg, CoreError, Result};
use crate::grid::GridSpec;
use crate::obsio::{GriddedField, NamedArray};
use crate::synthgen::{rng_for, PRECIP, PRECIP_CHANNELS};
use crate::train::{self, check_finite, fmt, meta, CsvLog, Optim};

/// `y = ln(x / a + b)` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct LogTransform {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl LogTransform {
    pub fn new(a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != b.len() || a.iter().chain(&b).any(|v| !(*v > 0.0)) {
            return arg("log transform needs matching positive a and b");
        }
        Ok(Self { a, b })
    }

    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            a: vec![cfg.sp_log_a, cfg.tcwv_log_a],
            b: vec![cfg.sp_log_b, cfg.tcwv_log_b],
        }
    }

    pub fn fwd(&self, ch: usize, x: f64) -> Result<f64> {
        if x.is_nan() {
            return Ok(x);
        }
        if x < 0.0 {
            return arg(format!("log transform of negative value {x}"));
        }
        Ok((x / self.a[ch] + self.b[ch]).ln())
    }

    /// Clamped at zero, so roundoff never yields negative precipitation.
    pub fn inv(&self, ch: usize, y: f64) -> f64 {
        if y.is_nan() {
            return y;
        }
        (self.a[ch] * (y.exp() - self.b[ch])).max(0.0)
    }

    /// Log-space image of a physical threshold.
    pub fn threshold(&self, ch: usize, tau: f64) -> f64 {
        (tau / self.a[ch] + self.b[ch]).ln()
    }

    /// Transforms a `[T, C, H, W]` field in place.
    pub fn apply(&self, f: &mut GriddedField) -> Result<()> {
        let plane = f.plane();
        let c = f.channels;
        for (i, v) in f.data.iter_mut().enumerate() {
            *v = self.fwd((i / plane) % c, *v as f64)? as f32;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HeadDims {
    /// Width of one input token.
    pub input: usize,
    pub tokens: usize,
    pub patch: usize,
    pub out_channels: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
}

impl HeadDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            input: 4 * cfg.channels()[cfg.precip_modality],
            tokens: cfg.tokens_per_tile(),
            patch: cfg.patch,
            out_channels: PRECIP_CHANNELS.len(),
            dim: cfg.precip_dim,
            blocks: cfg.precip_blocks,
            heads: cfg.precip_heads,
        }
    }

    pub fn side(&self) -> usize {
        (self.tokens as f64).sqrt().round() as usize
    }

    pub fn tile(&self) -> usize {
        self.side() * self.patch
    }

    pub fn patch_len(&self) -> usize {
        self.out_channels * self.patch * self.patch
    }
}

#[derive(Clone, Debug)]
pub struct PrecipHead {
    pub dims: HeadDims,
    proj: Linear,
    pos: Embedding,
    blocks: Vec<TransformerBlock>,
    out: Linear,
}

impl PrecipHead {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dims: HeadDims) -> Result<Self> {
        Ok(Self {
            proj: Linear::new(init, &format!("{name}.proj"), dims.input, dims.dim)?,
            pos: Embedding::new(init, &format!("{name}.pos"), dims.tokens, dims.dim)?,
            blocks: (0..dims.blocks)
                .map(|i| TransformerBlock::new(init, &format!("{name}.blk{i}"), dims.dim, dims.heads))
                .collect::<std::result::Result<_, _>>()?,
            out: Linear::new(init, &format!("{name}.out"), dims.dim, dims.patch_len())?,
            dims,
        })
    }

    /// Tokens `[B * P, input]` to patch rows `[B * P, C_out * p * p]`.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: Var, batch: usize) -> Result<Var> {
        let d = &self.dims;
        let h = self.proj.forward(g, tokens)?;
        let ids: Rc<[usize]> = (0..batch).flat_map(|_| 0..d.tokens).collect();
        let pe = self.pos.lookup(g, ids)?;
        let mut h = g.add(h, pe)?;
        let mask = Rc::new(AttnMask::all_visible(batch, d.tokens, d.tokens));
        for b in &self.blocks {
            h = b.forward(g, h, mask.clone())?;
        }
        Ok(self.out.forward(g, h)?)
    }

    /// Masked MAE against `[B, C_out, tile, tile]` targets; NaN cells are ignored.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, tokens: &[f32], targets: &[f32]) -> Result<Var> {
        let d = &self.dims;
        let batch = tokens.len() / (d.tokens * d.input);
        let x = input_matrix(g, batch * d.tokens, d.input, tokens.iter().map(|v| T::c(*v as f64)).collect())?;
        let y = self.forward(g, x, batch)?;
        let tl = d.out_channels * d.tile() * d.tile();
        let mut patches = Vec::with_capacity(targets.len());
        for t in targets.chunks(tl) {
            patches.extend(patchify(t, d.out_channels, d.tile(), d.tile(), d.patch)?);
        }
        let patches: Vec<T> = patches.into_iter().map(|v| T::c(v as f64)).collect();
        Ok(g.masked_mae(y, patches.into())?)
    }
}

/// Patch rows `[P, C * p * p]` back to a `[C, tile, tile]` image.
fn unpatch(d: &HeadDims, rows: &[f32]) -> Vec<f32> {
    let (s, p, c, tile) = (d.side(), d.patch, d.out_channels, d.tile());
    let mut out = vec![0.0; c * tile * tile];
    for py in 0..s {
        for px in 0..s {
            let row = &rows[(py * s + px) * d.patch_len()..][..d.patch_len()];
            for ch in 0..c {
                for y in 0..p {
                    for x in 0..p {
                        out[(ch * tile + py * p + y) * tile + px * p + x] = row[(ch * p + y) * p + x];
                    }
                }
            }
        }
    }
    out
}

pub struct PrecipModel {
    pub head: PrecipHead,
    pub params: ParamStore<f32>,
    pub transform: LogTransform,
    /// Per output channel, statistics of the log-space targets.
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl PrecipModel {
    pub fn init(dims: HeadDims, transform: LogTransform, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, &[0x9EC]);
        let c = dims.out_channels;
        let head = PrecipHead::new(&mut Init::new(&mut params, &mut rng), "precip", dims)?;
        Ok(Self {
            head,
            params,
            transform,
            mean: vec![0.0; c],
            std: vec![1.0; c],
        })
    }

    pub fn dims(&self) -> &HeadDims {
        &self.head.dims
    }

    /// Physical values to normalized log space, NaN preserved.
    pub fn encode_targets(&self, tiles: &mut [f32]) -> Result<()> {
        let d = self.dims();
        let plane = d.tile() * d.tile();
        for (i, v) in tiles.iter_mut().enumerate() {
            let ch = (i / plane) % d.out_channels;
            let y = self.transform.fwd(ch, *v as f64)?;
            *v = ((y - self.mean[ch]) / self.std[ch]) as f32;
        }
        Ok(())
    }

    /// Normalized log-space prediction per tile, `[n, C_out, tile, tile]`.
    pub fn predict_normalized(&self, tokens: &[f32]) -> Result<Vec<f32>> {
        let d = self.dims().clone();
        let per = d.tokens * d.input;
        if tokens.len() % per != 0 {
            return arg("token buffer is not a whole number of tiles");
        }
        let mut out = Vec::with_capacity(tokens.len() / per * d.out_channels * d.tile() * d.tile());
        for chunk in tokens.chunks(64 * per) {
            let batch = chunk.len() / per;
            let mut g = Graph::new(&self.params);
            let x = input_matrix(&mut g, batch * d.tokens, d.input, chunk.to_vec())?;
            let y = self.head.forward(&mut g, x, batch)?;
            for rows in g.value(y).data().chunks(d.tokens * d.patch_len()) {
                out.extend(unpatch(&d, rows));
            }
        }
        Ok(out)
    }

    /// Physical-unit, nonnegative prediction per tile.
    pub fn predict(&self, tokens: &[f32]) -> Result<Vec<f32>> {
        let d = self.dims();
        let plane = d.tile() * d.tile();
        let mut y = self.predict_normalized(tokens)?;
        for (i, v) in y.iter_mut().enumerate() {
            let ch = (i / plane) % d.out_channels;
            *v = self.transform.inv(ch, *v as f64 * self.std[ch] + self.mean[ch]) as f32;
        }
        Ok(y)
    }

    /// Maps per-tile token windows (tile-major, `[T, P, input]` each) to a
    /// `[T, 2, H, W]` precipitation field.
    pub fn map_precip(&self, spec: &GridSpec, windows: &[Vec<f32>], timestamps: &[i64]) -> Result<GriddedField> {
        let d = self.dims();
        let time = timestamps.len();
        if windows.len() != spec.n_tiles() || d.tile() != spec.tile {
            return arg("precipitation mapping needs one window per tile of the grid");
        }
        let mut tokens = Vec::with_capacity(windows.len() * time * d.tokens * d.input);
        for w in windows {
            if w.len() != time * d.tokens * d.input {
                return arg("token window does not match the precipitation head");
            }
            tokens.extend_from_slice(w);
        }
        let y = self.predict(&tokens)?;
        let tl = d.out_channels * d.tile() * d.tile();
        let mut f = GriddedField::filled(PRECIP, d.out_channels, spec.height, spec.width, timestamps.to_vec(), 0.0);
        for (i, at) in spec.tiles().enumerate() {
            for t in 0..time {
                let k = i * time + t;
                f.set_tile(t, at, d.tile(), &y[k * tl..(k + 1) * tl]);
            }
        }
        Ok(f)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let c = self.mean.len();
        let arr = |name: &str, v: &[f64]| NamedArray {
            name: name.to_string(),
            shape: vec![c],
            data: v.iter().map(|x| *x as f32).collect(),
        };
        train::save_params(
            path,
            &self.params,
            &[
                arr("log.a", &self.transform.a),
                arr("log.b", &self.transform.b),
                arr("target.mean", &self.mean),
                arr("target.std", &self.std),
            ],
        )
    }

    pub fn load(path: &Path, dims: HeadDims) -> Result<Self> {
        let c = dims.out_channels;
        let mut m = Self::init(dims, LogTransform { a: vec![1.0; c], b: vec![1.0; c] }, 0)?;
        let arrays = train::load_params(path, &mut m.params)?;
        let get = |name: &str| -> Result<Vec<f64>> {
            let a = meta(&arrays, name)?;
            if a.data.len() != c {
                return Err(CoreError::Checkpoint(format!("{name} has {} values, expected {c}", a.data.len())));
            }
            Ok(a.data.iter().map(|v| *v as f64).collect())
        };
        m.transform = LogTransform::new(get("log.a")?, get("log.b")?)?;
        m.mean = get("target.mean")?;
        m.std = get("target.std")?;
        Ok(m)
    }
}

/// Co-located training pairs: input tokens `[n, P, input]` and physical
/// targets `[n, C_out, tile, tile]`.
pub struct PrecipPairs {
    pub tokens: Vec<f32>,
    pub targets: Vec<f32>,
    pub n: usize,
}

/// Fits target statistics in log space, then trains with masked MAE.
/// Log columns: `step,lr,mae`.
pub fn train_precip(cfg: &RunConfig, dims: HeadDims, transform: LogTransform, pairs: &PrecipPairs, seed: u64) -> Result<(PrecipModel, CsvLog)> {
    let mut model = PrecipModel::init(dims.clone(), transform, seed)?;
    let (tl, pl) = (dims.out_channels * dims.tile() * dims.tile(), dims.tokens * dims.input);
    if pairs.n == 0 || pairs.tokens.len() != pairs.n * pl || pairs.targets.len() != pairs.n * tl {
        return arg("precipitation pairs have inconsistent shapes");
    }
    let plane = dims.tile() * dims.tile();
    for ch in 0..dims.out_channels {
        let mut sum = 0.0;
        let mut vals = Vec::new();
        for i in 0..pairs.n {
            for v in &pairs.targets[i * tl + ch * plane..i * tl + (ch + 1) * plane] {
                if !v.is_nan() {
                    let y = model.transform.fwd(ch, *v as f64)?;
                    sum += y;
                    vals.push(y);
                }
            }
        }
        if vals.len() < 2 {
            return Err(CoreError::Statistics(format!("precipitation channel {ch} has no targets")));
        }
        let mean = sum / vals.len() as f64;
        let var = vals.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / (vals.len() - 1) as f64;
        model.mean[ch] = mean;
        model.std[ch] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let mut targets = pairs.targets.clone();
    model.encode_targets(&mut targets)?;
    let mut opt = Optim::new(cfg, cfg.precip_steps, &model.params);
    let mut rng = rng_for(seed, &[0x9EC, 1]);
    let mut log = CsvLog::new(&["step", "lr", "mae"]);
    let (mut acc, mut n) = (0.0, 0);
    for step in 1..=cfg.precip_steps {
        let mut xb = Vec::with_capacity(cfg.precip_batch * pl);
        let mut yb = Vec::with_capacity(cfg.precip_batch * tl);
        for _ in 0..cfg.precip_batch {
            let i = rng.random_range(0..pairs.n);
            xb.extend_from_slice(&pairs.tokens[i * pl..(i + 1) * pl]);
            yb.extend_from_slice(&targets[i * tl..(i + 1) * tl]);
        }
        let mut g = Graph::new(&model.params);
        let loss = model.head.loss(&mut g, &xb, &yb)?;
        let v = g.value(loss).data()[0] as f64;
        check_finite("train-precip", step as u64, v)?;
        g.backward(loss)?;
        let grads = g.into_param_grads();
        let lr = opt.apply(&mut model.params, grads);
        acc += v;
        n += 1;
        if step % cfg.log_every.max(1) == 0 || step == cfg.precip_steps {
            log.row(&[step.to_string(), fmt(lr), fmt(acc / n as f64)]);
            (acc, n) = (0.0, 0);
        }
    }
    Ok((model, log))
}

/// Masked MAE of the normalized log-space prediction on held-out pairs.
pub fn eval_precip(model: &PrecipModel, pairs: &PrecipPairs) -> Result<f64> {
    let pred = model.predict_normalized(&pairs.tokens)?;
    let mut targets = pairs.targets.clone();
    model.encode_targets(&mut targets)?;
    let (mut s, mut n) = (0.0f64, 0usize);
    for (p, t) in pred.iter().zip(&targets) {
        if !t.is_nan() {
            s += (p - t).abs() as f64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(CoreError::Contract("eval_precip: no targets".into()));
    }
    Ok(s / n as f64)
}
