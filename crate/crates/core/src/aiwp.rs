//! Tile forecaster over a 3x3 neighbourhood of latent token windows, and the
//! cached global rollout.
//!
//! A mosaic has `S = (3 * side)^2` sites, site `Y * 3 * side + X`, each with
//! `T` frames of the modality-concatenated latent vector. Model rows are
//! site-major (`(b * S + site) * T + t`) so temporal attention runs over
//! contiguous rows; spatial attention works on a t-major permutation.

use std::path::Path;
use std::rc::Rc;

use dawp_nn::layers::input_matrix;
use dawp_nn::{AttnMask, Embedding, Graph, Init, LayerNorm, Linear, MultiHeadAttention, ParamStore, Scalar, SwigluFfn, Var};
use rand::Rng;

use crate::aida::TokenWindow;
use crate::config::RunConfig;
use crate::error::{arg, CoreError, Result};
use crate::grid::{neighbours8, GridSpec, TileCoord, NEIGHBOUR_OFFSETS};
use crate::statecache::StateCache;
use crate::synthgen::rng_for;
use crate::train::{self, check_finite, fmt, CsvLog, Optim};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AiwpDims {
    pub latents: Vec<usize>,
    /// Tokens per tile side.
    pub side: usize,
    pub time: usize,
    pub dim: usize,
    pub blocks: usize,
    pub heads: usize,
}

impl AiwpDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            latents: cfg.channels().iter().map(|c| 4 * c).collect(),
            side: cfg.tokens_per_side(),
            time: cfg.time_window,
            dim: cfg.aiwp_dim,
            blocks: cfg.aiwp_blocks,
            heads: cfg.aiwp_heads,
        }
    }

    pub fn channels(&self) -> usize {
        self.latents.iter().sum()
    }

    pub fn mosaic_side(&self) -> usize {
        3 * self.side
    }

    pub fn sites(&self) -> usize {
        self.mosaic_side() * self.mosaic_side()
    }

    pub fn tokens(&self) -> usize {
        self.side * self.side
    }

    pub fn center_sites(&self) -> Vec<usize> {
        let (s, n) = (self.side, self.mosaic_side());
        (0..s).flat_map(|y| (0..s).map(move |x| (s + y) * n + s + x)).collect()
    }
}

/// Mosaic of latent tokens around one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct CbcInput {
    /// `[S, T, C]`.
    pub data: Vec<f32>,
    /// `[S, T, M]`: whether a modality's token was observed.
    pub observed: Vec<bool>,
}

impl CbcInput {
    /// `[3 * side, 3 * side, T, C]`.
    pub fn shape(d: &AiwpDims) -> [usize; 4] {
        [d.mosaic_side(), d.mosaic_side(), d.time, d.channels()]
    }
}

/// Places `w` into tile slot `(sr, sc)` of the mosaic; `flip` rotates it by
/// half a turn, which is how a tile across a pole is seen.
fn place(d: &AiwpDims, out: &mut CbcInput, w: &TokenWindow, sr: usize, sc: usize, flip: bool) {
    let (s, n, t_len, c) = (d.side, d.mosaic_side(), d.time, d.channels());
    let m_len = d.latents.len();
    for y in 0..s {
        for x in 0..s {
            let (sy, sx) = if flip { (s - 1 - y, s - 1 - x) } else { (y, x) };
            let p = sy * s + sx;
            let site = (sr * s + y) * n + sc * s + x;
            for t in 0..t_len {
                let dst = (site * t_len + t) * c;
                let mut off = 0;
                for (m, &lc) in d.latents.iter().enumerate() {
                    let src = (t * s * s + p) * lc;
                    out.data[dst + off..dst + off + lc].copy_from_slice(&w.latents[m][src..src + lc]);
                    out.observed[(site * t_len + t) * m_len + m] = w.observed[m][t * s * s + p];
                    off += lc;
                }
            }
        }
    }
}

/// Centre at slot (1, 1), neighbours in `neighbours8` order around it. With
/// `no_cbc` the centre is replicated into every slot.
pub fn assemble_cbc(d: &AiwpDims, center: &TokenWindow, neighbours: &[(TileCoord, TokenWindow)], at: TileCoord, tiles_h: usize, no_cbc: bool) -> Result<CbcInput> {
    if neighbours.len() != 8 {
        return arg(format!("assemble_cbc needs 8 neighbours, got {}", neighbours.len()));
    }
    for w in std::iter::once(center).chain(neighbours.iter().map(|n| &n.1)) {
        let ok = w.latents.len() == d.latents.len()
            && w.latents.iter().zip(&d.latents).all(|(l, c)| l.len() == d.time * d.tokens() * c);
        if !ok {
            return arg("token window does not match the forecaster layout");
        }
    }
    let mut out = CbcInput {
        data: vec![0.0; d.sites() * d.time * d.channels()],
        observed: vec![false; d.sites() * d.time * d.latents.len()],
    };
    place(d, &mut out, center, 1, 1, false);
    for (k, (nb, w)) in neighbours.iter().enumerate() {
        let (sr, sc) = NEIGHBOUR_OFFSETS[k];
        if no_cbc {
            place(d, &mut out, center, sr, sc, false);
        } else {
            let polar = (sr == 0 && at.r == 0 && nb.r == 0) || (sr == 2 && at.r == tiles_h - 1 && nb.r == tiles_h - 1);
            place(d, &mut out, w, sr, sc, polar);
        }
    }
    Ok(out)
}

/// Mosaic for `at` from the cache's previous buffer.
pub fn assemble_from_cache(d: &AiwpDims, cache: &StateCache, spec: &GridSpec, at: TileCoord, no_cbc: bool) -> Result<CbcInput> {
    let center = cache.query(at)?;
    let nb = cache.query_neighbours(at)?;
    assemble_cbc(d, &center, &nb, at, spec.tiles_h(), no_cbc)
}

/// Centre tile of model output rows `[B * S * T, C]` for batch entry `b`.
pub fn extract_center(d: &AiwpDims, out: &[f32], b: usize) -> TokenWindow {
    let (t_len, c, p) = (d.time, d.channels(), d.tokens());
    let mut latents: Vec<Vec<f32>> = d.latents.iter().map(|lc| vec![0.0; t_len * p * lc]).collect();
    for (k, site) in d.center_sites().into_iter().enumerate() {
        for t in 0..t_len {
            let row = &out[((b * d.sites() + site) * t_len + t) * c..][..c];
            let mut off = 0;
            for (m, &lc) in d.latents.iter().enumerate() {
                latents[m][(t * p + k) * lc..(t * p + k + 1) * lc].copy_from_slice(&row[off..off + lc]);
                off += lc;
            }
        }
    }
    TokenWindow {
        observed: d.latents.iter().map(|_| vec![true; t_len * p]).collect(),
        latents,
    }
}

/// Temporal attention, FFN, spatial attention, FFN; each pre-normed and residual.
#[derive(Clone, Debug)]
pub struct TsBlock {
    ln1: LayerNorm,
    t_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn1: SwigluFfn,
    ln3: LayerNorm,
    s_attn: MultiHeadAttention,
    ln4: LayerNorm,
    ffn2: SwigluFfn,
}

fn swiglu_hidden(dim: usize) -> usize {
    (8 * dim / 3).div_ceil(4) * 4
}

/// Row permutations between site-major and t-major layouts.
#[derive(Clone, Debug)]
pub struct TsLayout {
    pub batch: usize,
    pub sites: usize,
    pub time: usize,
    to_t: Rc<[usize]>,
    to_s: Rc<[usize]>,
}

impl TsLayout {
    pub fn new(batch: usize, sites: usize, time: usize) -> Self {
        // t-major row (b, t, s) reads site-major row (b, s, t).
        let to_t: Rc<[usize]> = (0..batch)
            .flat_map(|b| (0..time).flat_map(move |t| (0..sites).map(move |s| (b * sites + s) * time + t)))
            .collect();
        let to_s: Rc<[usize]> = (0..batch)
            .flat_map(|b| (0..sites).flat_map(move |s| (0..time).map(move |t| (b * time + t) * sites + s)))
            .collect();
        Self { batch, sites, time, to_t, to_s }
    }
}

impl TsBlock {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dim: usize, heads: usize) -> Result<Self> {
        let h = swiglu_hidden(dim);
        Ok(Self {
            ln1: LayerNorm::new(init, &format!("{name}.ln1"), dim)?,
            t_attn: MultiHeadAttention::new(init, &format!("{name}.t_attn"), dim, heads)?,
            ln2: LayerNorm::new(init, &format!("{name}.ln2"), dim)?,
            ffn1: SwigluFfn::new(init, &format!("{name}.ffn1"), dim, h)?,
            ln3: LayerNorm::new(init, &format!("{name}.ln3"), dim)?,
            s_attn: MultiHeadAttention::new(init, &format!("{name}.s_attn"), dim, heads)?,
            ln4: LayerNorm::new(init, &format!("{name}.ln4"), dim)?,
            ffn2: SwigluFfn::new(init, &format!("{name}.ffn2"), dim, h)?,
        })
    }

    /// `x` is site-major. With `spatial == false` the spatial attention is
    /// skipped, leaving every site independent.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, lay: &TsLayout, spatial: bool) -> Result<Var> {
        let tmask = Rc::new(AttnMask::all_visible(lay.batch * lay.sites, lay.time, lay.time));
        let h = self.ln1.forward(g, x)?;
        let h = self.t_attn.forward(g, h, tmask)?;
        let x = g.add(x, h)?;
        let h = self.ln2.forward(g, x)?;
        let h = self.ffn1.forward(g, h)?;
        let mut x = g.add(x, h)?;
        if spatial {
            let smask = Rc::new(AttnMask::all_visible(lay.batch * lay.time, lay.sites, lay.sites));
            let xt = g.gather_rows(x, lay.to_t.clone())?;
            let h = self.ln3.forward(g, xt)?;
            let h = self.s_attn.forward(g, h, smask)?;
            let h = g.gather_rows(h, lay.to_s.clone())?;
            x = g.add(x, h)?;
        }
        let h = self.ln4.forward(g, x)?;
        let h = self.ffn2.forward(g, h)?;
        Ok(g.add(x, h)?)
    }
}

#[derive(Clone, Debug)]
pub struct Aiwp {
    pub dims: AiwpDims,
    proj: Linear,
    site_emb: Embedding,
    time_emb: Embedding,
    pub blocks: Vec<TsBlock>,
    head_ln: LayerNorm,
    head: Linear,
}

impl Aiwp {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dims: AiwpDims) -> Result<Self> {
        let (c, dm) = (dims.channels(), dims.dim);
        let blocks = (0..dims.blocks)
            .map(|i| TsBlock::new(init, &format!("{name}.ts{i}"), dm, dims.heads))
            .collect::<Result<_>>()?;
        Ok(Self {
            proj: Linear::new(init, &format!("{name}.proj"), c, dm)?,
            site_emb: Embedding::new(init, &format!("{name}.site"), dims.sites(), dm)?,
            time_emb: Embedding::new(init, &format!("{name}.time"), dims.time, dm)?,
            blocks,
            head_ln: LayerNorm::new(init, &format!("{name}.head_ln"), dm)?,
            head: Linear::new(init, &format!("{name}.head"), dm, c)?,
            dims,
        })
    }

    /// Next-window prediction for every site, rows `[B * S * T, C]`: the last
    /// input frame plus a learned increment.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[&CbcInput], spatial: bool) -> Result<Var> {
        let d = &self.dims;
        let (b, s, t, c) = (inputs.len(), d.sites(), d.time, d.channels());
        let mut data = Vec::with_capacity(b * s * t * c);
        for x in inputs {
            if x.data.len() != s * t * c {
                return arg("mosaic does not match the forecaster layout");
            }
            data.extend(x.data.iter().map(|v| T::c(*v as f64)));
        }
        let x_in = input_matrix(g, b * s * t, c, data)?;
        let h = self.proj.forward(g, x_in)?;
        let site_ids: Rc<[usize]> = (0..b).flat_map(|_| (0..s).flat_map(move |si| std::iter::repeat_n(si, t))).collect();
        let time_ids: Rc<[usize]> = (0..b * s).flat_map(|_| 0..t).collect();
        let se = self.site_emb.lookup(g, site_ids)?;
        let te = self.time_emb.lookup(g, time_ids)?;
        let h = g.add(h, se)?;
        let mut h = g.add(h, te)?;
        let lay = TsLayout::new(b, s, t);
        for blk in &self.blocks {
            h = blk.forward(g, h, &lay, spatial)?;
        }
        let h = self.head_ln.forward(g, h)?;
        let delta = self.head.forward(g, h)?;
        let last: Rc<[usize]> = (0..b * s).flat_map(|r| std::iter::repeat_n(r * t + t - 1, t)).collect();
        let base = g.gather_rows(x_in, last)?;
        Ok(g.add(base, delta)?)
    }

    /// MSE on the centre tile (differentiable) and on the border tiles
    /// (reported only). Target tokens that were not observed are excluded.
    /// `None` when the centre has no observed target.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, inputs: &[&CbcInput], targets: &[&CbcInput], spatial: bool) -> Result<Option<(Var, f64)>> {
        let d = &self.dims;
        let pred = self.forward(g, inputs, spatial)?;
        let (s, t, c, m_len) = (d.sites(), d.time, d.channels(), d.latents.len());
        let mut is_center = vec![false; s];
        d.center_sites().into_iter().for_each(|k| is_center[k] = true);
        let mut center = vec![T::nan(); targets.len() * s * t * c];
        let mut border = center.clone();
        let (mut nc, mut nb) = (0usize, 0usize);
        for (b, y) in targets.iter().enumerate() {
            for site in 0..s {
                for tt in 0..t {
                    let mut off = 0;
                    for (m, &lc) in d.latents.iter().enumerate() {
                        let row = (site * t + tt) * c;
                        if y.observed[(site * t + tt) * m_len + m] {
                            let dst = if is_center[site] { &mut center } else { &mut border };
                            for k in 0..lc {
                                dst[b * s * t * c + row + off + k] = T::c(y.data[row + off + k] as f64);
                            }
                            if is_center[site] {
                                nc += lc;
                            } else {
                                nb += lc;
                            }
                        }
                        off += lc;
                    }
                }
            }
        }
        if nc == 0 {
            return Ok(None);
        }
        let lc = g.masked_mse(pred, center.into())?;
        let lb = if nb == 0 {
            f64::NAN
        } else {
            let v = g.masked_mse(pred, border.into())?;
            g.value(v).data()[0].to_f64().unwrap_or(f64::NAN)
        };
        Ok(Some((lc, lb)))
    }
}

pub struct AiwpModel {
    pub aiwp: Aiwp,
    pub params: ParamStore<f32>,
}

impl AiwpModel {
    pub fn init(dims: AiwpDims, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, &[0xA1C]);
        let aiwp = Aiwp::new(&mut Init::new(&mut params, &mut rng), "aiwp", dims)?;
        Ok(Self { aiwp, params })
    }

    pub fn dims(&self) -> &AiwpDims {
        &self.aiwp.dims
    }

    /// Predicted centre windows, chunked to bound memory.
    pub fn predict(&self, inputs: &[CbcInput]) -> Result<Vec<TokenWindow>> {
        let mut out = Vec::with_capacity(inputs.len());
        for chunk in inputs.chunks(8) {
            let refs: Vec<&CbcInput> = chunk.iter().collect();
            let mut g = Graph::new(&self.params);
            let y = self.aiwp.forward(&mut g, &refs, true)?;
            let data = g.value(y).data();
            out.extend((0..chunk.len()).map(|b| extract_center(self.dims(), data, b)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        train::save_params(path, &self.params, &[])
    }

    pub fn load(path: &Path, dims: AiwpDims) -> Result<Self> {
        let mut m = Self::init(dims, 0)?;
        train::load_params(path, &mut m.params)?;
        Ok(m)
    }
}

/// Token windows of every tile for a run of consecutive start hours.
pub struct WindowBank {
    pub spec: GridSpec,
    pub first: usize,
    /// `[start - first][tile]`.
    pub windows: Vec<Vec<TokenWindow>>,
}

impl WindowBank {
    pub fn get(&self, start: usize, tile: usize) -> Result<&TokenWindow> {
        start
            .checked_sub(self.first)
            .and_then(|i| self.windows.get(i))
            .and_then(|w| w.get(tile))
            .ok_or_else(|| CoreError::Argument(format!("no window for start {start}, tile {tile}")))
    }

    pub fn last(&self) -> usize {
        self.first + self.windows.len() - 1
    }

    pub fn mosaic(&self, d: &AiwpDims, start: usize, tile: usize, no_cbc: bool) -> Result<CbcInput> {
        let at = self.spec.tiles().nth(tile).ok_or_else(|| CoreError::Argument(format!("tile {tile}")))?;
        let nb = neighbours8(at, self.spec.tiles_h(), self.spec.tiles_w())?
            .into_iter()
            .map(|n| Ok((n, self.get(start, self.spec.tile_index(n))?.clone())))
            .collect::<Result<Vec<_>>>()?;
        assemble_cbc(d, self.get(start, tile)?, &nb, at, self.spec.tiles_h(), no_cbc)
    }
}

/// Which pairs to draw: input windows start in `[lo, hi]`, targets `T` later.
fn pair_starts(bank: &WindowBank, d: &AiwpDims, hours: (usize, usize)) -> Result<(usize, usize)> {
    let lo = hours.0.max(bank.first);
    let hi = hours.1.saturating_sub(2 * d.time).min(bank.last().saturating_sub(d.time));
    if hi < lo {
        return arg(format!("no forecast pairs in hours {}..{}", hours.0, hours.1));
    }
    Ok((lo, hi))
}

/// Log columns: `step,lr,center_mse,border_mse`.
pub fn train_aiwp(cfg: &RunConfig, bank: &WindowBank, hours: (usize, usize), no_cbc: bool, seed: u64) -> Result<(AiwpModel, CsvLog)> {
    let dims = AiwpDims::from_config(cfg);
    let mut model = AiwpModel::init(dims.clone(), seed)?;
    let (lo, hi) = pair_starts(bank, &dims, hours)?;
    let n_tiles = bank.spec.n_tiles();
    let mut opt = Optim::new(cfg, cfg.aiwp_steps, &model.params);
    let mut rng = rng_for(seed, &[0xA1C, 1]);
    let mut log = CsvLog::new(&["step", "lr", "center_mse", "border_mse"]);
    let (mut acc_c, mut acc_b, mut n) = (0.0, 0.0, 0usize);
    for step in 1..=cfg.aiwp_steps {
        let mut xs = Vec::with_capacity(cfg.aiwp_batch);
        let mut ys = Vec::with_capacity(cfg.aiwp_batch);
        for _ in 0..cfg.aiwp_batch {
            let s = rng.random_range(lo..=hi);
            let tile = rng.random_range(0..n_tiles);
            xs.push(bank.mosaic(&dims, s, tile, no_cbc)?);
            ys.push(bank.mosaic(&dims, s + dims.time, tile, false)?);
        }
        let xr: Vec<&CbcInput> = xs.iter().collect();
        let yr: Vec<&CbcInput> = ys.iter().collect();
        let mut g = Graph::new(&model.params);
        let Some((loss, border)) = model.aiwp.loss(&mut g, &xr, &yr, true)? else { continue };
        let v = g.value(loss).data()[0] as f64;
        check_finite("train-aiwp", step as u64, v)?;
        g.backward(loss)?;
        let grads = g.into_param_grads();
        let lr = opt.apply(&mut model.params, grads);
        acc_c += v;
        acc_b += border;
        n += 1;
        if step % cfg.log_every.max(1) == 0 || step == cfg.aiwp_steps {
            let k = n.max(1) as f64;
            log.row(&[step.to_string(), fmt(lr), fmt(acc_c / k), fmt(acc_b / k)]);
            (acc_c, acc_b, n) = (0.0, 0.0, 0);
        }
    }
    Ok((model, log))
}

/// Centre and border MSE over every tile and every `T`-strided start in
/// `hours`, plus the MSE of repeating the last input frame (latent persistence).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AiwpEval {
    pub center: f64,
    pub border: f64,
    pub persistence: f64,
}

pub fn eval_aiwp(model: &AiwpModel, bank: &WindowBank, hours: (usize, usize), no_cbc: bool) -> Result<AiwpEval> {
    let d = model.dims().clone();
    let (lo, hi) = pair_starts(bank, &d, hours)?;
    let (s_len, t, c) = (d.sites(), d.time, d.channels());
    let center_sites = d.center_sites();
    let (mut se_c, mut se_b, mut se_p, mut wc, mut wb) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for s in (lo..=hi).step_by(d.time) {
        for tile in 0..bank.spec.n_tiles() {
            let x = bank.mosaic(&d, s, tile, no_cbc)?;
            let y = bank.mosaic(&d, s + t, tile, false)?;
            let mut g = Graph::new(&model.params);
            let mut c_loss = None;
            if let Some((l, b)) = model.aiwp.loss(&mut g, &[&x], &[&y], true)? {
                c_loss = Some((g.value(l).data()[0] as f64, b));
            }
            let Some((lc, lb)) = c_loss else { continue };
            // Every observed centre token counts once.
            let m_len = d.latents.len();
            let mut wc_here = 0.0;
            let mut sp = 0.0;
            let full = bank.mosaic(&d, s, tile, false)?;
            for &site in &center_sites {
                for tt in 0..t {
                    let mut off = 0;
                    for (m, &lc_m) in d.latents.iter().enumerate() {
                        if y.observed[(site * t + tt) * m_len + m] {
                            for k in 0..lc_m {
                                let last = full.data[(site * t + t - 1) * c + off + k] as f64;
                                sp += (last - y.data[(site * t + tt) * c + off + k] as f64).powi(2);
                            }
                            wc_here += lc_m as f64;
                        }
                        off += lc_m;
                    }
                }
            }
            let wb_here = (s_len - center_sites.len()) as f64;
            se_c += lc * wc_here;
            se_p += sp;
            wc += wc_here;
            if lb.is_finite() {
                se_b += lb * wb_here;
                wb += wb_here;
            }
        }
    }
    if wc == 0.0 {
        return Err(CoreError::Contract("eval_aiwp: no observed centre targets".into()));
    }
    Ok(AiwpEval {
        center: se_c / wc,
        border: if wb > 0.0 { se_b / wb } else { f64::NAN },
        persistence: se_p / wc,
    })
}

/// Rolls the forecast forward `steps` windows from complete initial windows
/// (tile-major). Tiles of a sweep are written in `order` (tile indices) or
/// in grid order. Returns the predicted windows of every step.
pub fn rollout(model: &AiwpModel, spec: &GridSpec, init: &[TokenWindow], steps: usize, no_cbc: bool, order: Option<&[usize]>) -> Result<Vec<Vec<TokenWindow>>> {
    let d = model.dims().clone();
    if steps == 0 {
        return arg("rollout needs at least one step");
    }
    let tiles: Vec<TileCoord> = spec.tiles().collect();
    let order: Vec<usize> = match order {
        Some(o) => {
            let mut seen = o.to_vec();
            seen.sort_unstable();
            if seen != (0..tiles.len()).collect::<Vec<_>>() {
                return arg("rollout order must be a permutation of the tiles");
            }
            o.to_vec()
        }
        None => (0..tiles.len()).collect(),
    };
    let mut cache = StateCache::new(spec, &d.latents, d.time, d.side);
    cache.seed_previous(init)?;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let inputs = order
            .iter()
            .map(|&i| assemble_from_cache(&d, &cache, spec, tiles[i], no_cbc))
            .collect::<Result<Vec<_>>>()?;
        let preds = model.predict(&inputs)?;
        let mut step = vec![None; tiles.len()];
        for (&i, p) in order.iter().zip(preds) {
            cache.update(tiles[i], &p)?;
            step[i] = Some(p);
        }
        out.push(step.into_iter().map(|w| w.expect("every tile predicted")).collect());
    }
    Ok(out)
}
