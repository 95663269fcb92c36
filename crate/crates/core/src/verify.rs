//! Forecast verification: pointwise MAE against gappy observations, event
//! scores, persistence, seam continuity, modality ablation tables and simple
//! raster plots.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{arg, CoreError, Result};
use crate::grid::GridSpec;
use crate::obsio::{write_bytes, write_text, GriddedField};

/// Default event thresholds: TCWV in mm, SP in mm/h.
pub const TCWV_THRESHOLDS: [f64; 3] = [10.0, 20.0, 30.0];
pub const SP_THRESHOLDS: [f64; 3] = [0.5, 1.0, 2.0];

fn aligned(a: &GriddedField, b: &GriddedField) -> Result<()> {
    if (a.channels, a.height, a.width, a.times()) != (b.channels, b.height, b.width, b.times()) {
        return arg(format!(
            "fields differ in shape: [{}, {}, {}, {}] vs [{}, {}, {}, {}]",
            a.times(),
            a.channels,
            a.height,
            a.width,
            b.times(),
            b.channels,
            b.height,
            b.width
        ));
    }
    Ok(())
}

/// Mean `|pred - obs|` per frame and channel over cells where `obs` is
/// present, summed in f64 in row-major cell order. `None` when a frame and
/// channel has no observation.
pub fn pointwise_mae(pred: &GriddedField, obs: &GriddedField) -> Result<Vec<Vec<Option<f64>>>> {
    aligned(pred, obs)?;
    let plane = obs.plane();
    let mut out = Vec::with_capacity(obs.times());
    for t in 0..obs.times() {
        let mut row = Vec::with_capacity(obs.channels);
        for c in 0..obs.channels {
            let base = (t * obs.channels + c) * plane;
            let (mut s, mut n) = (0.0f64, 0usize);
            for i in base..base + plane {
                let o = obs.data[i];
                if o.is_nan() {
                    continue;
                }
                let p = pred.data[i];
                if p.is_nan() {
                    return Err(CoreError::Contract(format!("forecast is NaN at an observed cell (frame {t}, channel {c})")));
                }
                s += (p as f64 - o as f64).abs();
                n += 1;
            }
            row.push((n > 0).then(|| s / n as f64));
        }
        out.push(row);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&mut self, o: &ConfusionCounts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.tn += o.tn;
    }
}

/// `v >= tau`, `None` for NaN.
pub fn binarize(values: &[f32], tau: f64) -> Vec<Option<bool>> {
    values.iter().map(|v| (!v.is_nan()).then(|| *v as f64 >= tau)).collect()
}

pub fn confusion(pred: &[Option<bool>], truth: &[Option<bool>]) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for (p, t) in pred.iter().zip(truth) {
        match (p, t) {
            (Some(true), Some(true)) => c.tp += 1,
            (Some(true), Some(false)) => c.fp += 1,
            (Some(false), Some(true)) => c.fn_ += 1,
            (Some(false), Some(false)) => c.tn += 1,
            _ => {}
        }
    }
    c
}

/// `TP / (TP + FN + FP)`, absent when nothing was forecast or observed.
pub fn csi(c: &ConfusionCounts) -> Option<f64> {
    let d = c.tp + c.fn_ + c.fp;
    (d > 0).then(|| c.tp as f64 / d as f64)
}

/// `FP / (FP + TP)`, absent when nothing was forecast.
pub fn far(c: &ConfusionCounts) -> Option<f64> {
    let d = c.fp + c.tp;
    (d > 0).then(|| c.fp as f64 / d as f64)
}

/// Repeats the last frame of `window` for every timestamp in `leads`.
pub fn persistence(window: &GriddedField, leads: &[i64]) -> Result<GriddedField> {
    if window.times() == 0 {
        return arg("persistence needs at least one frame");
    }
    let last = window.frame(window.times() - 1).to_vec();
    let mut f = GriddedField::filled(&window.modality, window.channels, window.height, window.width, leads.to_vec(), 0.0);
    for t in 0..leads.len() {
        f.frame_mut(t).copy_from_slice(&last);
    }
    Ok(f)
}

/// Mean absolute difference across tile boundaries: every horizontally
/// adjacent pair straddling a tile column edge (including the date-line wrap)
/// and every vertically adjacent pair straddling a tile row edge, over all
/// frames and channels.
pub fn seam_metric(f: &GriddedField, spec: &GridSpec) -> Result<f64> {
    if (f.height, f.width) != (spec.height, spec.width) {
        return arg("seam metric: field does not match the grid");
    }
    let (h, w, tile) = (f.height, f.width, spec.tile);
    let (mut s, mut n) = (0.0f64, 0usize);
    for t in 0..f.times() {
        for c in 0..f.channels {
            let at = |y: usize, x: usize| f.at(t, c, y, x) as f64;
            for y in 0..h {
                for k in 0..spec.tiles_w() {
                    let x = k * tile;
                    let left = (x + w - 1) % w;
                    s += (at(y, left) - at(y, x)).abs();
                    n += 1;
                }
            }
            for k in 1..spec.tiles_h() {
                let y = k * tile;
                for x in 0..w {
                    s += (at(y - 1, x) - at(y, x)).abs();
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        return arg("seam metric: no boundary pairs");
    }
    if s.is_nan() {
        return Err(CoreError::Contract("seam metric needs a dense field".into()));
    }
    Ok(s / n as f64)
}

/// Time-means of per-hour values over consecutive windows of `len` hours;
/// absent hours are skipped and an all-absent window is absent.
pub fn lead_windows(per_hour: &[Option<f64>], len: usize) -> Vec<Option<f64>> {
    per_hour
        .chunks(len.max(1))
        .map(|w| {
            let v: Vec<f64> = w.iter().flatten().copied().collect();
            (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect()
}

/// One manipulated-input row of an ablation table: the MAE of each evaluated
/// modality per lead window, and the ratio to the full-input run.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub mode: String,
    pub manipulated: String,
    pub evaluated: String,
    pub lead_window: usize,
    pub mae: Option<f64>,
    pub ratio: Option<f64>,
}

pub fn ablation_ratio(mae: Option<f64>, full: Option<f64>) -> Option<f64> {
    match (mae, full) {
        (Some(a), Some(b)) if b > 0.0 => Some(a / b),
        _ => None,
    }
}

pub fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6e}")).unwrap_or_else(|| "absent".into())
}

pub struct MaeRow {
    /// `forecast` or `persistence`.
    pub source: String,
    pub lead_h: i64,
    pub modality: String,
    pub channel: usize,
    pub value: Option<f64>,
}

pub fn mae_csv(rows: &[MaeRow]) -> String {
    let mut s = String::from("source,lead_h,modality,channel,value\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.source, r.lead_h, r.modality, r.channel, opt(r.value));
    }
    s
}

pub struct CsiRow {
    pub variable: String,
    pub tau: f64,
    pub lead_window: usize,
    pub counts: ConfusionCounts,
}

pub fn csi_far_csv(rows: &[CsiRow]) -> String {
    let mut s = String::from("variable,tau,lead_window,csi,far\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{}", r.variable, r.tau, r.lead_window, opt(csi(&r.counts)), opt(far(&r.counts)));
    }
    s
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("mode,manipulated,evaluated,lead_window,mae,ratio\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.mode, r.manipulated, r.evaluated, r.lead_window, opt(r.mae), opt(r.ratio));
    }
    s
}

pub fn seam_csv(rows: &[(String, f64)]) -> String {
    let mut s = String::from("variant,seam\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v:.6e}");
    }
    s
}

fn scale(v: f32, lo: f64, hi: f64) -> f64 {
    if v.is_nan() || hi <= lo {
        return 0.0;
    }
    ((v as f64 - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Binary PGM of one `h x w` plane, linearly scaled from `lo..hi`.
pub fn pgm(plane: &[f32], h: usize, w: usize, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(plane.iter().map(|v| (scale(*v, lo, hi) * 255.0).round() as u8));
    out
}

/// Binary PPM of one plane with a blue-white-red ramp; NaN cells are grey.
pub fn ppm(plane: &[f32], h: usize, w: usize, lo: f64, hi: f64) -> Vec<u8> {
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for v in plane {
        if v.is_nan() {
            out.extend([128, 128, 128]);
            continue;
        }
        let s = scale(*v, lo, hi);
        let (r, g, b) = if s < 0.5 {
            let k = s * 2.0;
            (k, k, 1.0)
        } else {
            let k = (1.0 - s) * 2.0;
            (1.0, k, k)
        };
        out.extend([(r * 255.0) as u8, (g * 255.0) as u8, (b * 255.0) as u8]);
    }
    out
}

/// Line chart of several series on shared axes, as a PPM.
pub fn line_chart(series: &[(&[f64], [u8; 3])], w: usize, h: usize) -> Vec<u8> {
    let mut px = vec![255u8; w * h * 3];
    let finite = series.iter().flat_map(|(s, _)| s.iter()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let n = series.iter().map(|(s, _)| s.len()).max().unwrap_or(0);
    let to_px = |i: usize, v: f64| -> (i64, i64) {
        let x = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
        let y = (v - lo) / span;
        ((x * (w - 1) as f64).round() as i64, ((1.0 - y) * (h - 1) as f64).round() as i64)
    };
    for (s, colour) in series {
        for i in 0..s.len().saturating_sub(1) {
            if !(s[i].is_finite() && s[i + 1].is_finite()) {
                continue;
            }
            let (a, b) = (to_px(i, s[i]), to_px(i + 1, s[i + 1]));
            let steps = (b.0 - a.0).abs().max((b.1 - a.1).abs()).max(1);
            for k in 0..=steps {
                let x = a.0 + (b.0 - a.0) * k / steps;
                let y = a.1 + (b.1 - a.1) * k / steps;
                if (0..w as i64).contains(&x) && (0..h as i64).contains(&y) {
                    let o = (y as usize * w + x as usize) * 3;
                    px[o..o + 3].copy_from_slice(colour);
                }
            }
        }
    }
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.extend(px);
    out
}

pub fn write_csv(path: &Path, text: &str) -> Result<()> {
    write_text(path, text)
}

pub fn write_raster(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}
