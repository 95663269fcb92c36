//! Multi-modal masked autoencoder over latent token windows.
//!
//! A tile window has `M * T * P` slots, slot `(m * T + t) * P + p`. Observed
//! slots are packed into a fixed-length sequence padded with [EOS] rows, which
//! are zero, hidden from every attention and inert as queries. The decoder
//! fills every slot from a learned mask token plus position, time and modality
//! embeddings and predicts each modality's latent.

use std::path::Path;
use std::rc::Rc;

use dawp_nn::layers::input_matrix;
use dawp_nn::{AttnMask, Embedding, Graph, Init, LayerNorm, Linear, ParamStore, Scalar, Tensor, TransformerBlock, Var};
use rand::seq::index::sample;
use rand::Rng;

use crate::config::RunConfig;
use crate::error::{arg, CoreError, Result};
use crate::grid::GridSpec;
use crate::mvae::VaeModel;
use crate::obsio::GriddedField;
use crate::synthgen::rng_for;
use crate::train::{self, check_finite, fmt, CsvLog, Optim};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AidaDims {
    /// Latent width `4c` of each modality.
    pub latents: Vec<usize>,
    pub tokens: usize,
    pub time: usize,
    pub enc_dim: usize,
    pub enc_blocks: usize,
    pub dec_dim: usize,
    pub dec_blocks: usize,
    pub heads: usize,
}

impl AidaDims {
    pub fn from_config(cfg: &RunConfig) -> Self {
        Self {
            latents: cfg.channels().iter().map(|c| 4 * c).collect(),
            tokens: cfg.tokens_per_tile(),
            time: cfg.time_window,
            enc_dim: cfg.aida_enc_dim,
            enc_blocks: cfg.aida_enc_blocks,
            dec_dim: cfg.aida_dec_dim,
            dec_blocks: cfg.aida_dec_blocks,
            heads: cfg.aida_heads,
        }
    }

    pub fn modalities(&self) -> usize {
        self.latents.len()
    }

    pub fn slots_per_modality(&self) -> usize {
        self.time * self.tokens
    }

    pub fn slots(&self) -> usize {
        self.modalities() * self.slots_per_modality()
    }

    pub fn slot(&self, m: usize, t: usize, p: usize) -> usize {
        (m * self.time + t) * self.tokens + p
    }

    /// `(m, t, p)` of a slot.
    pub fn split(&self, s: usize) -> (usize, usize, usize) {
        (s / self.slots_per_modality(), (s / self.tokens) % self.time, s % self.tokens)
    }
}

/// Latent tokens of one tile over one window.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenWindow {
    /// Per modality `[T, P, 4c]`.
    pub latents: Vec<Vec<f32>>,
    /// Per modality `[T, P]`.
    pub observed: Vec<Vec<bool>>,
}

impl TokenWindow {
    pub fn observed_slots(&self) -> Vec<usize> {
        let mut out = Vec::new();
        let mut base = 0;
        for o in &self.observed {
            out.extend(o.iter().enumerate().filter(|(_, v)| **v).map(|(i, _)| base + i));
            base += o.len();
        }
        out
    }

    fn check(&self, d: &AidaDims) -> Result<()> {
        if self.latents.len() != d.modalities() || self.observed.len() != d.modalities() {
            return arg("token window modality count does not match the model");
        }
        for m in 0..d.modalities() {
            if self.latents[m].len() != d.slots_per_modality() * d.latents[m] || self.observed[m].len() != d.slots_per_modality() {
                return arg(format!("token window modality {m} has the wrong shape"));
            }
        }
        Ok(())
    }

    fn latent(&self, d: &AidaDims, s: usize) -> &[f32] {
        let (m, _, _) = d.split(s);
        let local = s - m * d.slots_per_modality();
        let lc = d.latents[m];
        &self.latents[m][local * lc..(local + 1) * lc]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PackMode {
    Train,
    Infer,
}

/// Kept slots padded with [EOS] to `len`, plus the slots to reconstruct.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSequence {
    pub kept: Vec<usize>,
    pub len: usize,
    pub targets: Vec<usize>,
}

impl PackedSequence {
    pub fn eos_count(&self) -> usize {
        self.len - self.kept.len()
    }
}

/// Train mode keeps `keep` observed slots chosen uniformly and targets the rest
/// of the observed slots; it returns `None` (skip the sample) unless more than
/// `keep` slots are observed. Infer mode keeps every observed slot. Kept slots
/// are listed in increasing order.
pub fn pack<R: Rng>(w: &TokenWindow, keep: usize, mode: PackMode, len: usize, rng: &mut R) -> Result<Option<PackedSequence>> {
    let obs = w.observed_slots();
    match mode {
        PackMode::Train => {
            if keep > len {
                return arg(format!("keep {keep} exceeds sequence length {len}"));
            }
            if obs.len() <= keep {
                return Ok(None);
            }
            let mut pick: Vec<usize> = sample(rng, obs.len(), keep).into_iter().collect();
            pick.sort_unstable();
            let kept: Vec<usize> = pick.iter().map(|&i| obs[i]).collect();
            let targets = obs.iter().copied().filter(|s| kept.binary_search(s).is_err()).collect();
            Ok(Some(PackedSequence { kept, len, targets }))
        }
        PackMode::Infer => {
            if obs.len() > len {
                return arg(format!("{} observed slots exceed sequence length {len}", obs.len()));
            }
            Ok(Some(PackedSequence {
                kept: obs,
                len,
                targets: Vec::new(),
            }))
        }
    }
}

#[derive(Clone, Debug)]
pub struct Aida {
    pub dims: AidaDims,
    in_proj: Vec<Linear>,
    enc_pos: Embedding,
    enc_time: Embedding,
    enc_mod: Embedding,
    enc: Vec<TransformerBlock>,
    bridge: Linear,
    mask_token: Embedding,
    dec_pos: Embedding,
    dec_time: Embedding,
    dec_mod: Embedding,
    dec: Vec<TransformerBlock>,
    out_ln: Vec<LayerNorm>,
    out: Vec<Linear>,
}

impl Aida {
    pub fn new<T: Scalar, R: Rng>(init: &mut Init<'_, T, R>, name: &str, dims: AidaDims) -> Result<Self> {
        let (e, dd, m) = (dims.enc_dim, dims.dec_dim, dims.modalities());
        let in_proj = (0..m)
            .map(|i| Linear::new(init, &format!("{name}.in{i}"), dims.latents[i], e))
            .collect::<std::result::Result<_, _>>()?;
        let enc_pos = Embedding::new(init, &format!("{name}.enc_pos"), dims.tokens, e)?;
        let enc_time = Embedding::new(init, &format!("{name}.enc_time"), dims.time, e)?;
        let enc_mod = Embedding::new(init, &format!("{name}.enc_mod"), m, e)?;
        let enc = (0..dims.enc_blocks)
            .map(|i| TransformerBlock::new(init, &format!("{name}.enc{i}"), e, dims.heads))
            .collect::<std::result::Result<_, _>>()?;
        let bridge = Linear::new(init, &format!("{name}.bridge"), e, dd)?;
        let mask_token = Embedding::new(init, &format!("{name}.mask"), 1, dd)?;
        let dec_pos = Embedding::new(init, &format!("{name}.dec_pos"), dims.tokens, dd)?;
        let dec_time = Embedding::new(init, &format!("{name}.dec_time"), dims.time, dd)?;
        let dec_mod = Embedding::new(init, &format!("{name}.dec_mod"), m, dd)?;
        let dec = (0..dims.dec_blocks)
            .map(|i| TransformerBlock::new(init, &format!("{name}.dec{i}"), dd, dims.heads))
            .collect::<std::result::Result<_, _>>()?;
        let out_ln = (0..m)
            .map(|i| LayerNorm::new(init, &format!("{name}.out_ln{i}"), dd))
            .collect::<std::result::Result<_, _>>()?;
        let out = (0..m)
            .map(|i| Linear::new(init, &format!("{name}.out{i}"), dd, dims.latents[i]))
            .collect::<std::result::Result<_, _>>()?;
        Ok(Self {
            dims,
            in_proj,
            enc_pos,
            enc_time,
            enc_mod,
            enc,
            bridge,
            mask_token,
            dec_pos,
            dec_time,
            dec_mod,
            dec,
            out_ln,
            out,
        })
    }

    fn slot_embed<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        slots: &[usize],
        tables: [&Embedding; 3],
    ) -> Result<Var> {
        let d = &self.dims;
        let ids = |f: fn((usize, usize, usize)) -> usize| -> Rc<[usize]> { slots.iter().map(|s| f(d.split(*s))).collect() };
        let pos = tables[0].lookup(g, ids(|(_, _, p)| p))?;
        let time = tables[1].lookup(g, ids(|(_, t, _)| t))?;
        let modality = tables[2].lookup(g, ids(|(m, _, _)| m))?;
        let x = g.add(pos, time)?;
        Ok(g.add(x, modality)?)
    }

    /// Encoder input rows `[B * L, E]`: embedded kept tokens, zero at [EOS].
    pub fn embed<T: Scalar>(&self, g: &mut Graph<'_, T>, windows: &[&TokenWindow], seqs: &[PackedSequence]) -> Result<Var> {
        let d = &self.dims;
        let len = seqs.first().map(|s| s.len).unwrap_or(0);
        if seqs.iter().any(|s| s.len != len) || windows.len() != seqs.len() {
            return arg("embed: sequences must share one length and match the windows");
        }
        // Per modality, project every kept latent of the batch at once.
        let mut rows_of = vec![usize::MAX; seqs.len() * len];
        let mut parts = Vec::new();
        let mut offset = 0;
        for m in 0..d.modalities() {
            let lc = d.latents[m];
            let mut data = Vec::new();
            let mut n = 0;
            for (b, (w, s)) in windows.iter().zip(seqs).enumerate() {
                w.check(d)?;
                for (i, slot) in s.kept.iter().enumerate() {
                    if d.split(*slot).0 == m {
                        data.extend(w.latent(d, *slot).iter().map(|v| T::c(*v as f64)));
                        rows_of[b * len + i] = offset + n;
                        n += 1;
                    }
                }
            }
            if n > 0 {
                let x = input_matrix(g, n, lc, data)?;
                parts.push(self.in_proj[m].forward(g, x)?);
                offset += n;
            }
        }
        let zero = g.input(Tensor::zeros(&[1, d.enc_dim]));
        parts.push(zero);
        let all = g.concat_rows(&parts)?;
        let idx: Rc<[usize]> = rows_of.iter().map(|r| if *r == usize::MAX { offset } else { *r }).collect();
        let tokens = g.gather_rows(all, idx)?;
        let slots: Vec<usize> = seqs
            .iter()
            .flat_map(|s| (0..len).map(move |i| s.kept.get(i).copied().unwrap_or(0)))
            .collect();
        let emb = self.slot_embed(g, &slots, [&self.enc_pos, &self.enc_time, &self.enc_mod])?;
        let x = g.add(tokens, emb)?;
        let keep: Vec<T> = seqs
            .iter()
            .flat_map(|s| (0..len).flat_map(move |i| std::iter::repeat_n(if i < s.kept.len() { T::one() } else { T::zero() }, d.enc_dim)))
            .collect();
        let keep = input_matrix(g, seqs.len() * len, d.enc_dim, keep)?;
        Ok(g.mul(x, keep)?)
    }

    /// Predictions for every slot, per modality `[B * T * P, 4c]`, from encoder
    /// input rows produced by [`Aida::embed`].
    pub fn assimilate<T: Scalar>(&self, g: &mut Graph<'_, T>, rows: Var, seqs: &[PackedSequence]) -> Result<Vec<Var>> {
        let d = &self.dims;
        let (b, len, s) = (seqs.len(), seqs[0].len, d.slots());
        let present: Vec<bool> = seqs.iter().flat_map(|q| (0..len).map(move |i| i < q.kept.len())).collect();
        let mask = Rc::new(AttnMask::key_padding(b, len, present)?);
        let mut x = rows;
        for blk in &self.enc {
            x = blk.forward(g, x, mask.clone())?;
        }
        let x = self.bridge.forward(g, x)?;
        let mtok = self.mask_token.lookup(g, Rc::from(vec![0usize]))?;
        let both = g.concat_rows(&[x, mtok])?;
        let mut idx = vec![b * len; b * s];
        for (bi, q) in seqs.iter().enumerate() {
            for (i, slot) in q.kept.iter().enumerate() {
                idx[bi * s + slot] = bi * len + i;
            }
        }
        let filled = g.gather_rows(both, idx.into())?;
        let slots: Vec<usize> = (0..b).flat_map(|_| 0..s).collect();
        let emb = self.slot_embed(g, &slots, [&self.dec_pos, &self.dec_time, &self.dec_mod])?;
        let mut y = g.add(filled, emb)?;
        let all = Rc::new(AttnMask::all_visible(b, s, s));
        for blk in &self.dec {
            y = blk.forward(g, y, all.clone())?;
        }
        let sm = d.slots_per_modality();
        let mut outs = Vec::new();
        for m in 0..d.modalities() {
            let rows: Rc<[usize]> = (0..b).flat_map(|bi| (0..sm).map(move |k| bi * s + m * sm + k)).collect();
            let ym = g.gather_rows(y, rows)?;
            let ym = self.out_ln[m].forward(g, ym)?;
            outs.push(self.out[m].forward(g, ym)?);
        }
        Ok(outs)
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, windows: &[&TokenWindow], seqs: &[PackedSequence]) -> Result<Vec<Var>> {
        let rows = self.embed(g, windows, seqs)?;
        self.assimilate(g, rows, seqs)
    }

    /// Mean squared error over target slots only, pooled across modalities.
    /// `None` if the batch has no targets.
    pub fn loss<T: Scalar>(&self, g: &mut Graph<'_, T>, windows: &[&TokenWindow], seqs: &[PackedSequence]) -> Result<Option<Var>> {
        let d = &self.dims;
        let preds = self.forward(g, windows, seqs)?;
        let sm = d.slots_per_modality();
        let mut counts = vec![0usize; d.modalities()];
        let mut targets: Vec<Vec<T>> = d.latents.iter().map(|lc| vec![T::nan(); windows.len() * sm * lc]).collect();
        for (b, (w, q)) in windows.iter().zip(seqs).enumerate() {
            for slot in &q.targets {
                let (m, _, _) = d.split(*slot);
                let local = slot - m * sm;
                let lc = d.latents[m];
                let dst = &mut targets[m][(b * sm + local) * lc..(b * sm + local + 1) * lc];
                dst.iter_mut().zip(w.latent(d, *slot)).for_each(|(o, v)| *o = T::c(*v as f64));
                counts[m] += lc;
            }
        }
        let total: usize = counts.iter().sum();
        if total == 0 {
            return Ok(None);
        }
        let mut loss: Option<Var> = None;
        for m in 0..d.modalities() {
            if counts[m] == 0 {
                continue;
            }
            let l = g.masked_mse(preds[m], targets[m].clone().into())?;
            let l = g.scale(l, counts[m] as f64 / total as f64);
            loss = Some(match loss {
                Some(acc) => g.add(acc, l)?,
                None => l,
            });
        }
        Ok(loss)
    }
}

pub struct AidaModel {
    pub aida: Aida,
    pub params: ParamStore<f32>,
}

impl AidaModel {
    pub fn init(dims: AidaDims, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = rng_for(seed, &[0xA1DA]);
        let aida = Aida::new(&mut Init::new(&mut params, &mut rng), "aida", dims)?;
        Ok(Self { aida, params })
    }

    pub fn dims(&self) -> &AidaDims {
        &self.aida.dims
    }

    /// Completes windows: observed slots keep their latents, every other slot
    /// takes the model's prediction.
    pub fn impute(&self, windows: &[TokenWindow]) -> Result<Vec<TokenWindow>> {
        let d = self.dims().clone();
        let mut out = Vec::with_capacity(windows.len());
        let mut rng = rng_for(0, &[]);
        for chunk in windows.chunks(32) {
            let seqs = chunk
                .iter()
                .map(|w| pack(w, 0, PackMode::Infer, d.slots(), &mut rng).map(|s| s.expect("infer always packs")))
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&TokenWindow> = chunk.iter().collect();
            let mut g = Graph::new(&self.params);
            let preds = self.aida.forward(&mut g, &refs, &seqs)?;
            let sm = d.slots_per_modality();
            for (b, w) in chunk.iter().enumerate() {
                let mut done = w.clone();
                for m in 0..d.modalities() {
                    let lc = d.latents[m];
                    let p = &g.value(preds[m]).data()[b * sm * lc..(b + 1) * sm * lc];
                    for k in 0..sm {
                        if !w.observed[m][k] {
                            done.latents[m][k * lc..(k + 1) * lc].copy_from_slice(&p[k * lc..(k + 1) * lc]);
                        }
                    }
                    done.observed[m].fill(true);
                }
                out.push(done);
            }
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        train::save_params(path, &self.params, &[])
    }

    pub fn load(path: &Path, dims: AidaDims) -> Result<Self> {
        let mut m = Self::init(dims, 0)?;
        train::load_params(path, &mut m.params)?;
        Ok(m)
    }
}

/// Mean-mode latents of every tile at every hour, per modality.
#[derive(Clone, Debug)]
pub struct EncodedSeries {
    pub spec: GridSpec,
    pub hours: usize,
    pub tokens: usize,
    pub latents: Vec<usize>,
    /// Per modality `[hour, tile, P, 4c]`.
    pub z: Vec<Vec<f32>>,
    /// Per modality `[hour, tile, P]`.
    pub observed: Vec<Vec<bool>>,
}

impl EncodedSeries {
    /// Encodes hours `[0, hours)` of normalized fields with the matching VAEs.
    pub fn encode(vaes: &[VaeModel], fields: &[GriddedField], spec: &GridSpec, hours: usize) -> Result<Self> {
        if vaes.len() != fields.len() {
            return arg("one VAE per modality is required");
        }
        let mut z = Vec::new();
        let mut observed = Vec::new();
        for (v, f) in vaes.iter().zip(fields) {
            let size = v.dims().tile;
            let mut tiles = Vec::with_capacity(hours * spec.n_tiles() * v.dims().tile_len());
            for t in 0..hours {
                for at in spec.tiles() {
                    tiles.extend(f.tile(t, at, size));
                }
            }
            let (zm, om) = v.encode_tiles(&tiles)?;
            z.push(zm);
            observed.push(om);
        }
        Ok(Self {
            spec: *spec,
            hours,
            tokens: vaes[0].dims().tokens(),
            latents: vaes.iter().map(|v| v.dims().latent()).collect(),
            z,
            observed,
        })
    }

    /// Window of `time` hours starting at `start` for tile index `tile`.
    pub fn window(&self, start: usize, time: usize, tile: usize) -> Result<TokenWindow> {
        if start + time > self.hours {
            return arg(format!("window {start}+{time} beyond {} encoded hours", self.hours));
        }
        let (n, p) = (self.spec.n_tiles(), self.tokens);
        let mut latents = Vec::new();
        let mut observed = Vec::new();
        for m in 0..self.z.len() {
            let lc = self.latents[m];
            let mut l = Vec::with_capacity(time * p * lc);
            let mut o = Vec::with_capacity(time * p);
            for t in start..start + time {
                let row = (t * n + tile) * p;
                l.extend_from_slice(&self.z[m][row * lc..(row + p) * lc]);
                o.extend_from_slice(&self.observed[m][row..row + p]);
            }
            latents.push(l);
            observed.push(o);
        }
        Ok(TokenWindow { latents, observed })
    }

    /// Blanks one modality entirely (ablations).
    pub fn drop_modality(&mut self, m: usize) {
        self.z[m].fill(0.0);
        self.observed[m].fill(false);
    }
}

/// Trains on windows starting anywhere in `hours`, skipping windows with too
/// few observed slots. Log columns: `step,lr,mse`.
pub fn train_aida(cfg: &RunConfig, series: &EncodedSeries, hours: (usize, usize), seed: u64) -> Result<(AidaModel, CsvLog)> {
    let dims = AidaDims::from_config(cfg);
    let mut model = AidaModel::init(dims.clone(), seed)?;
    let t = dims.time;
    let n_tiles = series.spec.n_tiles();
    let mut pool = Vec::new();
    for s in hours.0..=hours.1.saturating_sub(t) {
        for tile in 0..n_tiles {
            let w = series.window(s, t, tile)?;
            if w.observed_slots().len() > cfg.aida_keep {
                pool.push(w);
            }
        }
    }
    if pool.is_empty() {
        return Err(CoreError::Statistics(format!(
            "no training window has more than {} observed slots",
            cfg.aida_keep
        )));
    }
    let mut opt = Optim::new(cfg, cfg.aida_steps, &model.params);
    let mut rng = rng_for(seed, &[0xA1DA, 1]);
    let mut log = CsvLog::new(&["step", "lr", "mse"]);
    let (mut acc, mut n) = (0.0, 0);
    for step in 1..=cfg.aida_steps {
        let mut ws = Vec::with_capacity(cfg.aida_batch);
        let mut seqs = Vec::with_capacity(cfg.aida_batch);
        for _ in 0..cfg.aida_batch {
            let w = &pool[rng.random_range(0..pool.len())];
            let s = pack(w, cfg.aida_keep, PackMode::Train, cfg.aida_keep, &mut rng)?.expect("pool windows pack");
            ws.push(w);
            seqs.push(s);
        }
        let mut g = Graph::new(&model.params);
        let Some(loss) = model.aida.loss(&mut g, &ws, &seqs)? else { continue };
        let v = g.value(loss).data()[0] as f64;
        check_finite("train-aida", step as u64, v)?;
        g.backward(loss)?;
        let grads = g.into_param_grads();
        let lr = opt.apply(&mut model.params, grads);
        acc += v;
        n += 1;
        if step % cfg.log_every.max(1) == 0 || step == cfg.aida_steps {
            log.row(&[step.to_string(), fmt(lr), fmt(acc / n.max(1) as f64)]);
            (acc, n) = (0.0, 0);
        }
    }
    Ok((model, log))
}

/// Held-out target-slot MSE and the variance of those targets (the MSE of the
/// best constant predictor), over `rounds` random packings per window.
pub fn eval_aida(model: &AidaModel, cfg: &RunConfig, series: &EncodedSeries, hours: (usize, usize), seed: u64) -> Result<(f64, f64)> {
    let d = model.dims().clone();
    let mut rng = rng_for(seed, &[0xA1DA, 2]);
    let (mut se, mut n) = (0.0f64, 0usize);
    let mut targets: Vec<f64> = Vec::new();
    for s in (hours.0..=hours.1.saturating_sub(d.time)).step_by(2) {
        let mut ws = Vec::new();
        let mut seqs = Vec::new();
        for tile in 0..series.spec.n_tiles() {
            let w = series.window(s, d.time, tile)?;
            if let Some(q) = pack(&w, cfg.aida_keep, PackMode::Train, cfg.aida_keep, &mut rng)? {
                ws.push(w);
                seqs.push(q);
            }
        }
        if ws.is_empty() {
            continue;
        }
        let refs: Vec<&TokenWindow> = ws.iter().collect();
        let mut g = Graph::new(&model.params);
        let preds = model.aida.forward(&mut g, &refs, &seqs)?;
        let sm = d.slots_per_modality();
        for (b, (w, q)) in ws.iter().zip(&seqs).enumerate() {
            for slot in &q.targets {
                let (m, _, _) = d.split(*slot);
                let lc = d.latents[m];
                let local = slot - m * sm;
                let p = &g.value(preds[m]).data()[(b * sm + local) * lc..(b * sm + local + 1) * lc];
                for (a, t) in p.iter().zip(w.latent(&d, *slot)) {
                    se += ((a - t) as f64).powi(2);
                    n += 1;
                    targets.push(*t as f64);
                }
            }
        }
    }
    if n == 0 {
        return Err(CoreError::Contract("eval_aida: no held-out targets".into()));
    }
    let mean = targets.iter().sum::<f64>() / n as f64;
    let var = targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n as f64;
    Ok((se / n as f64, var))
}

/// Decodes one complete window per tile (tile-major, `spec.tiles()` order) to
/// dense fields of `timestamps.len()` frames, one per modality.
pub fn decode_windows(vaes: &[VaeModel], windows: &[TokenWindow], spec: &GridSpec, timestamps: &[i64]) -> Result<Vec<GriddedField>> {
    if windows.len() != spec.n_tiles() {
        return arg(format!("{} windows for {} tiles", windows.len(), spec.n_tiles()));
    }
    let time = timestamps.len();
    let mut out = Vec::with_capacity(vaes.len());
    for (m, v) in vaes.iter().enumerate() {
        let d = v.dims();
        let (p, lc) = (d.tokens(), d.latent());
        let mut z = Vec::with_capacity(windows.len() * time * p * lc);
        for w in windows {
            if w.latents[m].len() != time * p * lc {
                return arg(format!("window of modality {m} does not hold {time} frames"));
            }
            z.extend_from_slice(&w.latents[m]);
        }
        let pixels = v.decode_tiles(&z, &vec![true; windows.len() * time * p])?;
        let mut f = GriddedField::filled(&v.stats.modality, d.channels, spec.height, spec.width, timestamps.to_vec(), f32::NAN);
        let tl = d.tile_len();
        for (i, at) in spec.tiles().enumerate() {
            for t in 0..time {
                let k = i * time + t;
                f.set_tile(t, at, d.tile, &pixels[k * tl..(k + 1) * tl]);
            }
        }
        out.push(f);
    }
    Ok(out)
}

/// Encodes a normalized multi-modal window, completes every tile with the
/// assimilation model and decodes it densely.
pub fn impute_window(vaes: &[VaeModel], model: &AidaModel, fields: &[GriddedField], spec: &GridSpec) -> Result<(Vec<TokenWindow>, Vec<GriddedField>)> {
    let time = model.dims().time;
    if fields.iter().any(|f| f.times() != time) {
        return arg(format!("impute_window expects {time} frames per modality"));
    }
    if vaes.len() != model.dims().modalities() {
        return arg("VAE count does not match the assimilation model");
    }
    let series = EncodedSeries::encode(vaes, fields, spec, time)?;
    let windows = (0..spec.n_tiles()).map(|i| series.window(0, time, i)).collect::<Result<Vec<_>>>()?;
    let done = model.impute(&windows)?;
    let decoded = decode_windows(vaes, &done, spec, &fields[0].timestamps)?;
    Ok((done, decoded))
}
