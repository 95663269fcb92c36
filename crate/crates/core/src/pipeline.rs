//! Stage drivers shared by the command line and the acceptance harness.

use crate::aida::{decode_windows, AidaModel, EncodedSeries, TokenWindow};
use crate::aiwp::{rollout, AiwpModel, WindowBank};
use crate::config::RunConfig;
use crate::error::Result;
use crate::mvae::{self, VaeData, VaeModel};
use crate::obsio::{fit_stats, normalize, GriddedField, NormStats};
use crate::precipmap::{PrecipModel, PrecipPairs};
use crate::grid::GridSpec;
use crate::synthgen::{derive_seed, Dataset, PRECIP_CHANNELS};
use crate::train::CsvLog;
use crate::verify::{
    self, ablation_ratio, binarize, confusion, pointwise_mae, seam_metric, AblationRow, ConfusionCounts, CsiRow, MaeRow, SP_THRESHOLDS,
    TCWV_THRESHOLDS,
};

/// A dataset with every sensor normalized by statistics of its training hours.
pub struct Prepared {
    pub data: Dataset,
    pub stats: Vec<NormStats>,
    pub obs: Vec<GriddedField>,
    pub truth: Vec<GriddedField>,
}

impl Prepared {
    pub fn new(data: Dataset) -> Result<Self> {
        let (t0, t1) = data.manifest.train;
        let mut stats = Vec::new();
        let mut obs = Vec::new();
        let mut truth = Vec::new();
        for (o, t) in data.obs.iter().zip(&data.truth) {
            let train = o.slice_time(t0 as usize, (t1 - t0) as usize)?;
            let s = fit_stats(&train)?;
            obs.push(normalize(o, &s)?);
            truth.push(normalize(t, &s)?);
            stats.push(s);
        }
        Ok(Self {
            data,
            stats,
            obs,
            truth,
        })
    }

    pub fn train_hours(&self) -> (usize, usize) {
        let (a, b) = self.data.manifest.train;
        (a as usize, b as usize)
    }

    pub fn test_hours(&self) -> (usize, usize) {
        let (a, b) = self.data.manifest.test;
        (a as usize, b as usize)
    }

    pub fn modalities(&self) -> usize {
        self.obs.len()
    }
}

/// One VAE per sensor, each with its own derived seed.
pub fn train_vaes(cfg: &RunConfig, p: &Prepared, seed: u64) -> Result<Vec<(VaeModel, CsvLog)>> {
    (0..p.modalities())
        .map(|m| {
            let data = VaeData {
                spec: p.data.manifest.spec,
                obs: &p.obs[m],
                dense: Some(&p.truth[m]),
                hours: p.train_hours(),
            };
            mvae::train_vae(cfg, &data, p.stats[m].clone(), derive_seed(seed, &[0x7AE, m as u64]))
        })
        .collect()
}

/// Mean-mode latents of the observations at every hour.
pub fn encode_obs(vaes: &[VaeModel], p: &Prepared) -> Result<EncodedSeries> {
    EncodedSeries::encode(vaes, &p.obs, &p.data.manifest.spec, p.data.manifest.hours)
}

/// Zero-filled raw windows for every start hour: missing latents are zero
/// and every slot is flagged observed, so a forecaster trains on them exactly
/// as it would on completed windows.
pub fn raw_bank(series: &EncodedSeries, time: usize) -> Result<WindowBank> {
    let windows = (0..=series.hours - time)
        .map(|s| {
            (0..series.spec.n_tiles())
                .map(|i| {
                    let mut w = series.window(s, time, i)?;
                    w.observed.iter_mut().for_each(|o| o.fill(true));
                    Ok(w)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WindowBank { spec: series.spec, first: 0, windows })
}

/// Completed windows of every tile for one start hour.
pub fn impute_start(model: &AidaModel, series: &EncodedSeries, start: usize) -> Result<Vec<TokenWindow>> {
    let time = model.dims().time;
    let raw = (0..series.spec.n_tiles()).map(|i| series.window(start, time, i)).collect::<Result<Vec<_>>>()?;
    model.impute(&raw)
}

/// Completed windows for every start hour.
pub fn imputed_bank(model: &AidaModel, series: &EncodedSeries) -> Result<WindowBank> {
    let time = model.dims().time;
    let windows = (0..=series.hours - time).map(|s| impute_start(model, series, s)).collect::<Result<Vec<_>>>()?;
    Ok(WindowBank { spec: series.spec, first: 0, windows })
}

/// Dense-truth latents of the precipitation-coupled sensor paired with the
/// precipitation truth tiles, every `stride` hours of `hours`.
pub fn precip_pairs(vaes: &[VaeModel], p: &Prepared, m: usize, hours: (usize, usize), stride: usize) -> Result<PrecipPairs> {
    let spec = p.data.manifest.spec;
    let v = vaes.get(m).ok_or_else(|| crate::CoreError::Argument(format!("no sensor {m}")))?;
    let mut tiles = Vec::new();
    let mut targets = Vec::new();
    let mut n = 0;
    for t in (hours.0..hours.1).step_by(stride.max(1)) {
        for at in spec.tiles() {
            tiles.extend(p.truth[m].tile(t, at, spec.tile));
            targets.extend(p.data.precip.tile(t, at, spec.tile));
            n += 1;
        }
    }
    let (tokens, _) = v.encode_tiles(&tiles)?;
    Ok(PrecipPairs { tokens, targets, n })
}

/// Forecast issue hours in the held-out range: `T`-strided starts whose
/// `steps` forecast windows all fall inside it.
pub fn forecast_starts(p: &Prepared, time: usize, steps: usize) -> Vec<usize> {
    let (a, b) = p.test_hours();
    let last = b.saturating_sub((steps + 1) * time);
    if last < a {
        return Vec::new();
    }
    (a..=last).step_by(time).collect()
}

/// Running per-frame MAE sums, indexed `[lead hour - 1][sensor][channel]`.
#[derive(Clone, Debug)]
pub struct MaeTable {
    sum: Vec<Vec<Vec<f64>>>,
    n: Vec<Vec<Vec<usize>>>,
}

impl MaeTable {
    pub fn new(leads: usize, channels: &[usize]) -> Self {
        Self {
            sum: vec![channels.iter().map(|c| vec![0.0; *c]).collect(); leads],
            n: vec![channels.iter().map(|c| vec![0; *c]).collect(); leads],
        }
    }

    fn add(&mut self, lead0: usize, m: usize, mae: &[Vec<Option<f64>>]) {
        for (t, row) in mae.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    self.sum[lead0 + t][m][c] += v;
                    self.n[lead0 + t][m][c] += 1;
                }
            }
        }
    }

    pub fn leads(&self) -> usize {
        self.sum.len()
    }

    pub fn get(&self, lead: usize, m: usize, c: usize) -> Option<f64> {
        let n = self.n[lead][m][c];
        (n > 0).then(|| self.sum[lead][m][c] / n as f64)
    }

    /// Mean over the hours of lead step `k` (`time` hours each) and the
    /// channels of the chosen sensors.
    pub fn step_mean(&self, k: usize, time: usize, sensors: &[usize]) -> Option<f64> {
        let mut v = Vec::new();
        for lead in k * time..((k + 1) * time).min(self.leads()) {
            for &m in sensors {
                for c in 0..self.sum[lead][m].len() {
                    v.extend(self.get(lead, m, c));
                }
            }
        }
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn rows(&self, names: &[String], source: &str) -> Vec<MaeRow> {
        let mut out = Vec::new();
        for lead in 0..self.leads() {
            for (m, name) in names.iter().enumerate() {
                for c in 0..self.sum[lead][m].len() {
                    out.push(MaeRow {
                        source: source.to_string(),
                        lead_h: lead as i64 + 1,
                        modality: name.clone(),
                        channel: c,
                        value: self.get(lead, m, c),
                    });
                }
            }
        }
        out
    }
}

/// One issued forecast: decoded normalized fields over the `steps * T` lead
/// hours, persistence of the decoded last initial frame over the same hours,
/// and optionally the mapped precipitation.
#[derive(Clone, Debug)]
pub struct ForecastRun {
    pub start: usize,
    pub time: usize,
    pub fields: Vec<GriddedField>,
    pub persistence: Vec<GriddedField>,
    pub precip: Option<GriddedField>,
}

fn hours_ts(a: usize, len: usize) -> Vec<i64> {
    (a..a + len).map(|h| h as i64).collect()
}

/// Joins per-step windows of one tile along time.
fn concat_steps(steps: &[Vec<TokenWindow>], tile: usize) -> TokenWindow {
    let mut w = steps[0][tile].clone();
    for s in &steps[1..] {
        for (m, l) in s[tile].latents.iter().enumerate() {
            w.latents[m].extend_from_slice(l);
            w.observed[m].extend_from_slice(&s[tile].observed[m]);
        }
    }
    w
}

/// Rolls out `steps` windows from each start's initial windows.
pub fn run_forecasts(
    vaes: &[VaeModel],
    aiwp: &AiwpModel,
    spec: &GridSpec,
    inits: &[(usize, Vec<TokenWindow>)],
    steps: usize,
    no_cbc: bool,
    precip: Option<(&PrecipModel, usize)>,
) -> Result<Vec<ForecastRun>> {
    let time = aiwp.dims().time;
    let mut runs = Vec::with_capacity(inits.len());
    for (start, init) in inits {
        let lead_ts = hours_ts(start + time, steps * time);
        let init_fields = decode_windows(vaes, init, spec, &hours_ts(*start, time))?;
        let persistence = init_fields.iter().map(|f| verify::persistence(f, &lead_ts)).collect::<Result<Vec<_>>>()?;
        let out = rollout(aiwp, spec, init, steps, no_cbc, None)?;
        let joined: Vec<TokenWindow> = (0..spec.n_tiles()).map(|i| concat_steps(&out, i)).collect();
        let fields = decode_windows(vaes, &joined, spec, &lead_ts)?;
        let precip = match precip {
            Some((model, pm)) => {
                let tokens: Vec<Vec<f32>> = joined.iter().map(|w| w.latents[pm].clone()).collect();
                Some(model.map_precip(spec, &tokens, &lead_ts)?)
            }
            None => None,
        };
        runs.push(ForecastRun {
            start: *start,
            time,
            fields,
            persistence,
            precip,
        });
    }
    Ok(runs)
}

/// Everything scored from one set of forecasts.
pub struct ForecastScores {
    pub forecast: MaeTable,
    pub persistence: MaeTable,
    /// Event counts per variable, threshold and lead step.
    pub events: Vec<CsiRow>,
    pub seam: f64,
}

fn lead_hours(runs: &[ForecastRun]) -> Result<(usize, usize)> {
    let first = runs.first().ok_or_else(|| crate::CoreError::Argument("no forecasts to score".into()))?;
    let leads = first.fields.first().map(|f| f.times()).unwrap_or(0);
    if first.time == 0 || leads == 0 || leads % first.time != 0 {
        return Err(crate::CoreError::Argument("forecast is not a whole number of windows".into()));
    }
    for r in runs {
        if r.time != first.time || r.fields.iter().chain(&r.persistence).any(|f| f.times() != leads) {
            return Err(crate::CoreError::Argument("forecasts differ in lead length".into()));
        }
    }
    Ok((first.time, leads))
}

/// Scores forecasts and persistence against the held-out observations (MAE in
/// normalized units), precipitation maps against the precipitation truth,
/// and the seam metric of the forecast fields.
pub fn score_forecasts(p: &Prepared, runs: &[ForecastRun]) -> Result<ForecastScores> {
    let spec = p.data.manifest.spec;
    let (time, leads) = lead_hours(runs)?;
    let steps = leads / time;
    let channels: Vec<usize> = p.obs.iter().map(|f| f.channels).collect();
    let mut forecast = MaeTable::new(leads, &channels);
    let mut persist = MaeTable::new(leads, &channels);
    let thresholds: Vec<(usize, f64)> = SP_THRESHOLDS.iter().map(|t| (0, *t)).chain(TCWV_THRESHOLDS.iter().map(|t| (1, *t))).collect();
    let mut counts = vec![vec![ConfusionCounts::default(); steps]; thresholds.len()];
    let mut with_precip = false;
    let (mut seam_sum, mut seam_n) = (0.0, 0usize);
    for r in runs {
        let h0 = r.start + time;
        if r.fields.len() != p.obs.len() {
            return Err(crate::CoreError::Argument("forecast does not cover every sensor".into()));
        }
        for m in 0..p.obs.len() {
            let truth = p.obs[m].slice_time(h0, leads)?;
            forecast.add(0, m, &pointwise_mae(&r.fields[m], &truth)?);
            persist.add(0, m, &pointwise_mae(&r.persistence[m], &truth)?);
            seam_sum += seam_metric(&r.fields[m], &spec)?;
            seam_n += 1;
        }
        if let Some(map) = &r.precip {
            with_precip = true;
            let truth = p.data.precip.slice_time(h0, leads)?;
            let plane = map.plane();
            for (i, (ch, tau)) in thresholds.iter().enumerate() {
                for t in 0..leads {
                    let at = (t * map.channels + ch) * plane;
                    let a = binarize(&map.data[at..at + plane], *tau);
                    let b = binarize(&truth.data[at..at + plane], *tau);
                    counts[i][t / time].add(&confusion(&a, &b));
                }
            }
        }
    }
    let mut events = Vec::new();
    if with_precip {
        for (i, (ch, tau)) in thresholds.iter().enumerate() {
            for (k, c) in counts[i].iter().enumerate() {
                events.push(CsiRow {
                    variable: PRECIP_CHANNELS[*ch].to_string(),
                    tau: *tau,
                    lead_window: k,
                    counts: *c,
                });
            }
        }
    }
    Ok(ForecastScores {
        forecast,
        persistence: persist,
        events,
        seam: if seam_n > 0 { seam_sum / seam_n as f64 } else { f64::NAN },
    })
}

/// Input manipulations of the sensor ablation: `(mode, manipulated, dropped)`.
pub fn ablation_cases(names: &[String]) -> Vec<(String, String, Vec<usize>)> {
    let n = names.len();
    let mut cases = Vec::new();
    for m in 0..n {
        cases.push(("drop".to_string(), names[m].clone(), vec![m]));
    }
    if n > 1 {
        for m in 0..n {
            cases.push(("keep".to_string(), names[m].clone(), (0..n).filter(|k| *k != m).collect()));
        }
    }
    cases
}

/// Ablation table rows: per manipulated run, evaluated sensor and lead step,
/// MAE and its ratio to the full-input run. The full run is listed first.
pub fn ablation_rows(names: &[String], time: usize, full: &MaeTable, cases: &[(String, String, MaeTable)]) -> Vec<AblationRow> {
    let steps = full.leads() / time.max(1);
    let mut rows = Vec::new();
    let all = std::iter::once(("full", "none", full)).chain(cases.iter().map(|(a, b, t)| (a.as_str(), b.as_str(), t)));
    for (mode, manipulated, table) in all {
        for (e, evaluated) in names.iter().enumerate() {
            for k in 0..steps {
                let mae = table.step_mean(k, time, &[e]);
                rows.push(AblationRow {
                    mode: mode.to_string(),
                    manipulated: manipulated.to_string(),
                    evaluated: evaluated.clone(),
                    lead_window: k,
                    mae,
                    ratio: ablation_ratio(mae, full.step_mean(k, time, &[e])),
                });
            }
        }
    }
    rows
}

/// Assimilates every start with the given sensors blanked out.
pub fn ablated_inits(aida: &AidaModel, series: &EncodedSeries, starts: &[usize], dropped: &[usize]) -> Result<Vec<(usize, Vec<TokenWindow>)>> {
    let mut s = series.clone();
    for &m in dropped {
        s.drop_modality(m);
    }
    starts.iter().map(|st| Ok((*st, impute_start(aida, &s, *st)?))).collect()
}

/// Drop-one and keep-one sensor ablation: each manipulated input set is
/// re-assimilated at every start, rolled out and scored against the full run.
pub fn ablation(
    vaes: &[VaeModel],
    aida: &AidaModel,
    aiwp: &AiwpModel,
    p: &Prepared,
    series: &EncodedSeries,
    starts: &[usize],
    steps: usize,
) -> Result<Vec<AblationRow>> {
    let names = p.data.modality_names();
    let spec = p.data.manifest.spec;
    let score = |dropped: &[usize]| -> Result<MaeTable> {
        let inits = ablated_inits(aida, series, starts, dropped)?;
        let runs = run_forecasts(vaes, aiwp, &spec, &inits, steps, false, None)?;
        Ok(score_forecasts(p, &runs)?.forecast)
    };
    let full = score(&[])?;
    let cases = ablation_cases(&names)
        .into_iter()
        .map(|(mode, m, dropped)| Ok((mode, m, score(&dropped)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ablation_rows(&names, aiwp.dims().time, &full, &cases))
}
