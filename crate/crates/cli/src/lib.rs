//! The `dawp` command: one subcommand per pipeline stage, each reading its
//! inputs from explicit paths and writing checkpoints, logs, fields and CSVs
//! beside a copy of the resolved config.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use dawp_core::aida::{train_aida, AidaDims, AidaModel, EncodedSeries};
use dawp_core::aiwp::{train_aiwp, AiwpDims, AiwpModel};
use dawp_core::config::RunConfig;
use dawp_core::mvae::{VaeDims, VaeModel};
use dawp_core::obsio::{self, denormalize, normalize, GriddedField};
use dawp_core::pipeline::{self, ForecastRun, MaeTable, Prepared};
use dawp_core::precipmap::{train_precip, HeadDims, LogTransform, PrecipModel};
use dawp_core::synthgen::{derive_seed, gen_dataset, Dataset};
use dawp_core::{gradsuite, verify, CoreError};

pub const CONFIG_ECHO: &str = "config.txt";
pub const FORECAST_INDEX: &str = "forecast.txt";
pub const ABLATION_INDEX: &str = "ablation.txt";
pub const GRAD_TOL: f64 = 1e-5;

#[derive(Parser, Debug)]
#[command(name = "dawp", version, about = "Satellite observation assimilation and forecasting pipeline")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// Config file of `key = value` lines; may start with `preset = ...`.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// `desk` or `paper`.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Override one config key, `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_parser = parse_kv)]
    pub set: Vec<(String, String)>,
    /// Worker threads for data generation.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Global seed; falls back to DAWP_SEED, then the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate the synthetic dataset.
    GenData {
        #[arg(long)]
        out: PathBuf,
    },
    /// Remap one swath file onto the grid.
    Remap {
        #[arg(long)]
        swath: PathBuf,
        #[arg(long)]
        hour: i64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one VAE per sensor.
    TrainVae {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the latent assimilation model.
    TrainAida {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the tiled forecaster.
    TrainAiwp {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        /// Required unless `--raw`.
        #[arg(long)]
        aida: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Train on raw windows (missing latents zero) instead of assimilated ones.
        #[arg(long)]
        raw: bool,
        /// Replace the eight neighbours with copies of the centre tile.
        #[arg(long)]
        no_cbc: bool,
    },
    /// Assimilate one window and write dense fields.
    Assimilate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        aida: PathBuf,
        /// First hour of the window; defaults to the first held-out hour.
        #[arg(long)]
        start: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Roll out forecasts from every held-out start.
    Forecast {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        aida: PathBuf,
        #[arg(long)]
        aiwp: PathBuf,
        /// Also map precipitation with this head.
        #[arg(long)]
        precip: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        steps: usize,
        #[arg(long)]
        no_cbc: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the precipitation head.
    Precip {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score forecasts and write the metric CSVs.
    Evaluate {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        csv: PathBuf,
        /// Further forecast directories for the seam table.
        #[arg(long)]
        compare: Vec<PathBuf>,
        /// Output of `ablate`.
        #[arg(long)]
        ablation: Option<PathBuf>,
    },
    /// Forecast with sensors dropped or kept one at a time.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        vae: PathBuf,
        #[arg(long)]
        aida: PathBuf,
        #[arg(long)]
        aiwp: PathBuf,
        #[arg(long, default_value_t = 2)]
        steps: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        #[arg(long)]
        all: bool,
    },
}

fn parse_kv(s: &str) -> Result<(String, String), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not key=value"))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

/// A failed run: exit status plus a one-line message.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub msg: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: 2,
            kind: "usage",
            msg: msg.into(),
        }
    }

    /// `error[kind]: message` on one line.
    pub fn line(&self) -> String {
        format!("error[{}]: {}", self.kind, self.msg.replace('\n', " "))
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let (code, kind) = match &e {
            CoreError::Argument(_) => (2, "usage"),
            CoreError::Config(_) => (3, "config"),
            CoreError::Format { .. } | CoreError::Io { .. } | CoreError::Checkpoint(_) | CoreError::Statistics(_) => (4, "format"),
            CoreError::Numeric(_) => (5, "numeric"),
            CoreError::Contract(_) => (1, "contract"),
        };
        Self {
            code,
            kind,
            msg: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

/// Preset or config file, then `--set` overrides, then the seed.
pub fn resolve_config(c: &Common) -> CliResult<RunConfig> {
    let mut cfg = match &c.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CoreError::Config(format!("{}: {e}", path.display())))?;
            let cfg = RunConfig::parse(&text)?;
            if let Some(p) = &c.preset {
                if *p != cfg.preset {
                    return Err(CoreError::Config(format!("--preset {p} conflicts with preset {} of {}", cfg.preset, path.display())).into());
                }
            }
            cfg
        }
        None => RunConfig::preset(c.preset.as_deref().unwrap_or("desk"))?,
    };
    cfg.apply_overrides(&c.set)?;
    let env_seed = match std::env::var("DAWP_SEED") {
        Ok(v) => Some(v.trim().parse::<u64>().map_err(|_| CoreError::Config(format!("DAWP_SEED `{v}` is not a number")))?),
        Err(_) => None,
    };
    if let Some(s) = c.seed.or(env_seed) {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> CliResult<()> {
    obsio::write_text(&dir.join(CONFIG_ECHO), &cfg.to_text())?;
    Ok(())
}

fn vae_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("vae_{name}.ckpt"))
}

fn load_data(cfg: &RunConfig, dir: &Path) -> CliResult<Prepared> {
    let data = Dataset::load(dir)?;
    let want: Vec<(String, usize)> = cfg.modalities.0.clone();
    if data.manifest.modalities != want || data.manifest.spec != cfg.grid() || data.manifest.hours != cfg.hours {
        return Err(CoreError::Config(format!("dataset in {} was generated with a different config", dir.display())).into());
    }
    Ok(Prepared::new(data)?)
}

fn load_vaes(cfg: &RunConfig, dir: &Path) -> CliResult<Vec<VaeModel>> {
    let mut out = Vec::new();
    for (name, c) in &cfg.modalities.0 {
        out.push(VaeModel::load(&vae_path(dir, name), VaeDims::from_config(cfg, *c), name)?);
    }
    Ok(out)
}

fn load_aida(cfg: &RunConfig, dir: &Path) -> CliResult<AidaModel> {
    Ok(AidaModel::load(&dir.join("aida.ckpt"), AidaDims::from_config(cfg))?)
}

fn load_aiwp(cfg: &RunConfig, dir: &Path) -> CliResult<AiwpModel> {
    Ok(AiwpModel::load(&dir.join("aiwp.ckpt"), AiwpDims::from_config(cfg))?)
}

fn load_precip(cfg: &RunConfig, dir: &Path) -> CliResult<PrecipModel> {
    Ok(PrecipModel::load(&dir.join("precip.ckpt"), HeadDims::from_config(cfg))?)
}

fn stage_seed(cfg: &RunConfig, stage: u64) -> u64 {
    derive_seed(cfg.seed, &[stage])
}

/// Writes forecasts in physical units under `dir`, one subdirectory per start.
pub fn write_forecasts(dir: &Path, p: &Prepared, runs: &[ForecastRun], steps: usize, no_cbc: bool) -> CliResult<()> {
    let names = p.data.modality_names();
    let starts: Vec<String> = runs.iter().map(|r| r.start.to_string()).collect();
    let time = runs.first().map(|r| r.time).unwrap_or(0);
    let index = format!(
        "variant:{}\ntime:{time}\nsteps:{steps}\nstarts:{}\nmodalities:{}\n",
        if no_cbc { "no-cbc" } else { "cbc" },
        starts.join(","),
        names.join(",")
    );
    for r in runs {
        let sub = dir.join(format!("h{:05}", r.start));
        for (m, name) in names.iter().enumerate() {
            obsio::write_grid(&sub.join(format!("{name}.grd")), &denormalize(&r.fields[m], &p.stats[m])?)?;
            obsio::write_grid(&sub.join(format!("persistence_{name}.grd")), &denormalize(&r.persistence[m], &p.stats[m])?)?;
        }
        if let Some(pr) = &r.precip {
            obsio::write_grid(&sub.join("precip.grd"), pr)?;
        }
    }
    obsio::write_text(&dir.join(FORECAST_INDEX), &index)?;
    Ok(())
}

fn index_value<'a>(text: &'a str, key: &str, dir: &Path) -> CliResult<&'a str> {
    text.lines()
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| *k == key)
        .map(|(_, v)| v.trim())
        .ok_or_else(|| CoreError::Format { offset: 0, msg: format!("{} lacks `{key}`", dir.join(FORECAST_INDEX).display()) }.into())
}

fn bad_index(dir: &Path, key: &str) -> CliError {
    CoreError::Format { offset: 0, msg: format!("{}: bad `{key}`", dir.join(FORECAST_INDEX).display()) }.into()
}

/// Reads what [`write_forecasts`] wrote, back in normalized units.
pub fn read_forecasts(dir: &Path, p: &Prepared) -> CliResult<(String, Vec<ForecastRun>)> {
    let path = dir.join(FORECAST_INDEX);
    let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Format { offset: 0, msg: format!("{}: {e}", path.display()) })?;
    let variant = index_value(&text, "variant", dir)?.to_string();
    let time: usize = index_value(&text, "time", dir)?.parse().map_err(|_| bad_index(dir, "time"))?;
    let names = p.data.modality_names();
    if index_value(&text, "modalities", dir)? != names.join(",") {
        return Err(bad_index(dir, "modalities"));
    }
    let mut runs = Vec::new();
    for s in index_value(&text, "starts", dir)?.split(',').filter(|s| !s.is_empty()) {
        let start: usize = s.parse().map_err(|_| bad_index(dir, "starts"))?;
        let sub = dir.join(format!("h{start:05}"));
        let mut fields = Vec::new();
        let mut persistence = Vec::new();
        for (m, name) in names.iter().enumerate() {
            fields.push(normalize(&obsio::read_grid(&sub.join(format!("{name}.grd")))?, &p.stats[m])?);
            persistence.push(normalize(&obsio::read_grid(&sub.join(format!("persistence_{name}.grd")))?, &p.stats[m])?);
        }
        let pp = sub.join("precip.grd");
        let precip = if pp.exists() { Some(obsio::read_grid(&pp)?) } else { None };
        runs.push(ForecastRun { start, time, fields, persistence, precip });
    }
    Ok((variant, runs))
}

fn initial_windows(aida: &AidaModel, series: &EncodedSeries, starts: &[usize]) -> CliResult<Vec<(usize, Vec<dawp_core::aida::TokenWindow>)>> {
    Ok(pipeline::ablated_inits(aida, series, starts, &[])?)
}

/// Runs one parsed command; returns what to print on success.
pub fn run(cli: &Cli) -> CliResult<String> {
    if let Cmd::Gradcheck { all } = &cli.cmd {
        return gradcheck(*all);
    }
    let cfg = resolve_config(&cli.common)?;
    let mut out = String::new();
    match &cli.cmd {
        Cmd::GenData { out: dir } => {
            let m = gen_dataset(&cfg.dataset_config(), dir, cli.common.jobs.max(1))?;
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "wrote {} hours x {} sensors to {}", m.hours, m.modalities.len(), dir.display());
        }
        Cmd::Remap { swath, hour, out: path } => {
            let s = obsio::read_swath(swath)?;
            let r = obsio::remap(&s, &cfg.grid(), *hour)?;
            obsio::write_grid(path, &r.field)?;
            let filled = r.counts.iter().filter(|c| **c > 0).count();
            let _ = writeln!(out, "remapped {} samples into {filled} cells", s.len());
        }
        Cmd::TrainVae { data, out: dir } => {
            let p = load_data(&cfg, data)?;
            let names = p.data.modality_names();
            for ((model, log), name) in pipeline::train_vaes(&cfg, &p, stage_seed(&cfg, 1))?.into_iter().zip(&names) {
                model.save(&vae_path(dir, name))?;
                log.write(&dir.join(format!("vae_{name}_log.csv")))?;
            }
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "trained {} VAEs into {}", names.len(), dir.display());
        }
        Cmd::TrainAida { data, vae, out: dir } => {
            let p = load_data(&cfg, data)?;
            let series = pipeline::encode_obs(&load_vaes(&cfg, vae)?, &p)?;
            let (model, log) = train_aida(&cfg, &series, p.train_hours(), stage_seed(&cfg, 2))?;
            model.save(&dir.join("aida.ckpt"))?;
            log.write(&dir.join("aida_log.csv"))?;
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "trained assimilation model into {}", dir.display());
        }
        Cmd::TrainAiwp { data, vae, aida, out: dir, raw, no_cbc } => {
            let p = load_data(&cfg, data)?;
            let series = pipeline::encode_obs(&load_vaes(&cfg, vae)?, &p)?;
            let bank = if *raw {
                pipeline::raw_bank(&series, cfg.time_window)?
            } else {
                let a = aida.as_deref().ok_or_else(|| CliError::usage("train-aiwp needs --aida unless --raw"))?;
                pipeline::imputed_bank(&load_aida(&cfg, a)?, &series)?
            };
            let (model, log) = train_aiwp(&cfg, &bank, p.train_hours(), *no_cbc, stage_seed(&cfg, 3))?;
            model.save(&dir.join("aiwp.ckpt"))?;
            log.write(&dir.join("aiwp_log.csv"))?;
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "trained forecaster into {}", dir.display());
        }
        Cmd::Assimilate { data, vae, aida, start, out: dir } => {
            let p = load_data(&cfg, data)?;
            let vaes = load_vaes(&cfg, vae)?;
            let model = load_aida(&cfg, aida)?;
            let s = start.unwrap_or(p.test_hours().0);
            let window = p.obs.iter().map(|f| f.slice_time(s, cfg.time_window)).collect::<Result<Vec<_>, _>>()?;
            let (_, fields) = dawp_core::aida::impute_window(&vaes, &model, &window, &p.data.manifest.spec)?;
            for (m, f) in fields.iter().enumerate() {
                obsio::write_grid(&dir.join(format!("assim_{}.grd", f.modality)), &denormalize(f, &p.stats[m])?)?;
            }
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "assimilated hours {s}..{} into {}", s + cfg.time_window, dir.display());
        }
        Cmd::Forecast { data, vae, aida, aiwp, precip, steps, no_cbc, out: dir } => {
            let p = load_data(&cfg, data)?;
            let vaes = load_vaes(&cfg, vae)?;
            let series = pipeline::encode_obs(&vaes, &p)?;
            let starts = pipeline::forecast_starts(&p, cfg.time_window, *steps);
            if starts.is_empty() {
                return Err(CliError::usage(format!("no held-out start fits {steps} forecast steps")));
            }
            let inits = initial_windows(&load_aida(&cfg, aida)?, &series, &starts)?;
            let head = precip.as_deref().map(|d| load_precip(&cfg, d)).transpose()?;
            let runs = pipeline::run_forecasts(
                &vaes,
                &load_aiwp(&cfg, aiwp)?,
                &p.data.manifest.spec,
                &inits,
                *steps,
                *no_cbc,
                head.as_ref().map(|h| (h, cfg.precip_modality)),
            )?;
            write_forecasts(dir, &p, &runs, *steps, *no_cbc)?;
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "wrote {} forecasts to {}", runs.len(), dir.display());
        }
        Cmd::Precip { data, vae, out: dir } => {
            let p = load_data(&cfg, data)?;
            let vaes = load_vaes(&cfg, vae)?;
            let pairs = pipeline::precip_pairs(&vaes, &p, cfg.precip_modality, p.train_hours(), 1)?;
            let held = pipeline::precip_pairs(&vaes, &p, cfg.precip_modality, p.test_hours(), cfg.time_window)?;
            let (model, log) = train_precip(&cfg, HeadDims::from_config(&cfg), LogTransform::from_config(&cfg), &pairs, stage_seed(&cfg, 4))?;
            model.save(&dir.join("precip.ckpt"))?;
            log.write(&dir.join("precip_log.csv"))?;
            echo_config(dir, &cfg)?;
            let mae = dawp_core::precipmap::eval_precip(&model, &held)?;
            let _ = writeln!(out, "trained precipitation head into {}; held-out log-space MAE {mae:.4}", dir.display());
        }
        Cmd::Evaluate { pred, truth, csv, compare, ablation } => {
            let p = load_data(&cfg, truth)?;
            evaluate(&p, pred, csv, compare, ablation.as_deref())?;
            echo_config(csv, &cfg)?;
            let _ = writeln!(out, "wrote metrics to {}", csv.display());
        }
        Cmd::Ablate { data, vae, aida, aiwp, steps, out: dir } => {
            let p = load_data(&cfg, data)?;
            let vaes = load_vaes(&cfg, vae)?;
            let series = pipeline::encode_obs(&vaes, &p)?;
            let starts = pipeline::forecast_starts(&p, cfg.time_window, *steps);
            if starts.is_empty() {
                return Err(CliError::usage(format!("no held-out start fits {steps} forecast steps")));
            }
            let a = load_aida(&cfg, aida)?;
            let f = load_aiwp(&cfg, aiwp)?;
            let mut index = String::new();
            let mut cases = vec![("full".to_string(), "none".to_string(), Vec::new())];
            cases.extend(pipeline::ablation_cases(&p.data.modality_names()));
            for (k, (mode, manipulated, dropped)) in cases.iter().enumerate() {
                let inits = pipeline::ablated_inits(&a, &series, &starts, dropped)?;
                let runs = pipeline::run_forecasts(&vaes, &f, &p.data.manifest.spec, &inits, *steps, false, None)?;
                let sub = format!("case{k:02}");
                write_forecasts(&dir.join(&sub), &p, &runs, *steps, false)?;
                let _ = writeln!(index, "{mode},{manipulated},{sub}");
            }
            obsio::write_text(&dir.join(ABLATION_INDEX), &index)?;
            echo_config(dir, &cfg)?;
            let _ = writeln!(out, "wrote {} ablation cases to {}", cases.len(), dir.display());
        }
        Cmd::Gradcheck { .. } => unreachable!(),
    }
    Ok(out)
}

fn gradcheck(all: bool) -> CliResult<String> {
    if !all {
        return Err(CliError::usage("gradcheck needs --all"));
    }
    let cases = gradsuite::run_all()?;
    let mut out = format!("{:<24} {:>12}  worst\n", "check", "max_rel_err");
    let mut failed = Vec::new();
    for c in &cases {
        let _ = writeln!(out, "{:<24} {:>12.3e}  {}", c.name, c.report.max_rel_err, c.report.worst_param);
        if !(c.report.max_rel_err < GRAD_TOL) {
            failed.push(c.name);
        }
    }
    if !failed.is_empty() {
        print!("{out}");
        return Err(CliError {
            code: 5,
            kind: "numeric",
            msg: format!("gradient check above {GRAD_TOL:e}: {}", failed.join(",")),
        });
    }
    Ok(out)
}

/// Writes `mae_by_lead.csv`, `csi_far.csv`, `seam.csv`, `ablation.csv` and
/// two plots into `csv`.
pub fn evaluate(p: &Prepared, pred: &Path, csv: &Path, compare: &[PathBuf], ablation: Option<&Path>) -> CliResult<()> {
    let names = p.data.modality_names();
    let (variant, runs) = read_forecasts(pred, p)?;
    let scores = pipeline::score_forecasts(p, &runs)?;
    let mut mae_rows = scores.forecast.rows(&names, "forecast");
    mae_rows.extend(scores.persistence.rows(&names, "persistence"));
    verify::write_csv(&csv.join("mae_by_lead.csv"), &verify::mae_csv(&mae_rows))?;
    verify::write_csv(&csv.join("csi_far.csv"), &verify::csi_far_csv(&scores.events))?;

    let mut seam = vec![(variant, scores.seam)];
    for dir in compare {
        let (v, r) = read_forecasts(dir, p)?;
        seam.push((v, pipeline::score_forecasts(p, &r)?.seam));
    }
    verify::write_csv(&csv.join("seam.csv"), &verify::seam_csv(&seam))?;

    let time = runs[0].time;
    let rows = match ablation {
        Some(dir) => {
            let path = dir.join(ABLATION_INDEX);
            let text = std::fs::read_to_string(&path).map_err(|e| CoreError::Format { offset: 0, msg: format!("{}: {e}", path.display()) })?;
            let mut full: Option<MaeTable> = None;
            let mut cases = Vec::new();
            for line in text.lines().filter(|l| !l.is_empty()) {
                let parts: Vec<&str> = line.split(',').collect();
                let [mode, manipulated, sub] = parts[..] else {
                    return Err(CoreError::Format { offset: 0, msg: format!("{}: bad line `{line}`", path.display()) }.into());
                };
                let (_, r) = read_forecasts(&dir.join(sub), p)?;
                let table = pipeline::score_forecasts(p, &r)?.forecast;
                if mode == "full" {
                    full = Some(table);
                } else {
                    cases.push((mode.to_string(), manipulated.to_string(), table));
                }
            }
            let full = full.ok_or_else(|| CoreError::Format { offset: 0, msg: format!("{} has no full run", path.display()) })?;
            pipeline::ablation_rows(&names, time, &full, &cases)
        }
        None => pipeline::ablation_rows(&names, time, &scores.forecast, &[]),
    };
    verify::write_csv(&csv.join("ablation.csv"), &verify::ablation_csv(&rows))?;

    let all: Vec<usize> = (0..names.len()).collect();
    let per_lead = |t: &MaeTable| -> Vec<f64> { (0..t.leads()).map(|l| t.step_mean(l, 1, &all).unwrap_or(f64::NAN)).collect() };
    let (f, q) = (per_lead(&scores.forecast), per_lead(&scores.persistence));
    verify::write_raster(&csv.join("mae_by_lead.ppm"), &verify::line_chart(&[(&f, [200, 30, 30]), (&q, [30, 30, 200])], 320, 160))?;
    let first: &GriddedField = &runs[0].fields[0];
    let (h, w) = (first.height, first.width);
    verify::write_raster(&csv.join("forecast_first_lead.ppm"), &verify::ppm(&first.data[..h * w], h, w, -3.0, 3.0))?;
    Ok(())
}
