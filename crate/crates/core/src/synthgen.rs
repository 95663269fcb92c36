//! Synthetic multi-sensor data: one smooth scalar field of Gaussian blobs that
//! advects and diffuses, seen by each sensor through its own affine channel
//! couplings and a moving polar-orbit swath mask.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{arg, io_err, CoreError, Result};
use crate::grid::{cell_center, GridSpec};
use crate::obsio::{self, remap, GriddedField, SwathBatch};

/// Mixes a base seed with a list of stream identifiers.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut x = seed ^ 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        x = splitmix(x ^ p.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_for(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, parts))
}

#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    pub n_blobs: usize,
    /// Cells per hour, `(du, dv)` = (eastward, southward).
    pub advection: (i64, i64),
    pub diffusion: f64,
    /// Per channel `(gain, offset)` applied to the shared base field.
    pub channel_couplings: Vec<(f32, f32)>,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OrbitConfig {
    pub swath_width: usize,
    pub period: usize,
    /// Column drift of the strip per grid row (strips run diagonally).
    pub inclination_offset: f64,
    pub phase: usize,
}

impl OrbitConfig {
    fn validate(&self, spec: &GridSpec) -> Result<()> {
        if self.swath_width == 0 || self.swath_width >= spec.width {
            return arg(format!("swath width {} outside (0, {})", self.swath_width, spec.width));
        }
        if self.period == 0 {
            return arg("orbit period must be positive");
        }
        Ok(())
    }

    /// Parallel strips needed so one period sweeps every column.
    pub fn strips(&self, width: usize) -> usize {
        width.div_ceil(self.swath_width * self.period)
    }
}

/// The latent scalar field every sensor observes: `[T, 1, H, W]`, zero mean and
/// unit variance at hour 0.
pub fn gen_base(cfg: &FieldConfig, spec: &GridSpec, hours: usize) -> Result<GriddedField> {
    if hours == 0 {
        return arg("need at least one hour");
    }
    if !(0.0..=0.25).contains(&cfg.diffusion) {
        return arg(format!("diffusion {} outside the stable range [0, 0.25]", cfg.diffusion));
    }
    let (h, w) = (spec.height, spec.width);
    let mut rng = rng_for(cfg.seed, &[0xB10B]);
    let mut frame = vec![0.0f64; h * w];
    for _ in 0..cfg.n_blobs {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let sigma = rng.random_range(5.0..14.0f64);
        let amp = rng.random_range(0.5..1.5f64) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        for y in 0..h {
            let dy = y as f64 + 0.5 - cy;
            for x in 0..w {
                let mut dx = (x as f64 + 0.5 - cx).abs();
                dx = dx.min(w as f64 - dx);
                frame[y * w + x] += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            }
        }
    }
    let n = frame.len() as f64;
    let mean = frame.iter().sum::<f64>() / n;
    let std = (frame.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-12);
    frame.iter_mut().for_each(|v| *v = (*v - mean) / std);

    let mut data = Vec::with_capacity(hours * h * w);
    data.extend(frame.iter().map(|v| *v as f32));
    let (du, dv) = cfg.advection;
    let mut next = vec![0.0f64; h * w];
    for _ in 1..hours {
        for y in 0..h {
            let sy = (y as i64 - dv).clamp(0, h as i64 - 1) as usize;
            for x in 0..w {
                let sx = (x as i64 - du).rem_euclid(w as i64) as usize;
                next[y * w + x] = frame[sy * w + sx];
            }
        }
        if cfg.diffusion > 0.0 {
            for y in 0..h {
                let (up, down) = (y.saturating_sub(1), (y + 1).min(h - 1));
                for x in 0..w {
                    let (l, r) = ((x + w - 1) % w, (x + 1) % w);
                    let c = next[y * w + x];
                    let lap = next[up * w + x] + next[down * w + x] + next[y * w + l] + next[y * w + r] - 4.0 * c;
                    frame[y * w + x] = c + cfg.diffusion * lap;
                }
            }
        } else {
            std::mem::swap(&mut frame, &mut next);
        }
        data.extend(frame.iter().map(|v| *v as f32));
    }
    Ok(GriddedField {
        modality: "base".into(),
        channels: 1,
        height: h,
        width: w,
        timestamps: (0..hours as i64).collect(),
        data,
    })
}

/// Applies per-channel affine couplings to a one-channel base field.
pub fn couple(base: &GriddedField, modality: &str, couplings: &[(f32, f32)]) -> GriddedField {
    let plane = base.plane();
    let c = couplings.len();
    let mut data = Vec::with_capacity(base.times() * c * plane);
    for t in 0..base.times() {
        let b = base.frame(t);
        for &(g, o) in couplings {
            data.extend(b.iter().map(|v| g * v + o));
        }
    }
    GriddedField {
        modality: modality.to_string(),
        channels: c,
        height: base.height,
        width: base.width,
        timestamps: base.timestamps.clone(),
        data,
    }
}

/// Dense ground truth for one sensor: the shared base field through `cfg`'s couplings.
pub fn gen_truth(cfg: &FieldConfig, modality: &str, spec: &GridSpec, hours: usize) -> Result<GriddedField> {
    if cfg.channel_couplings.is_empty() {
        return arg("field config has no channel couplings");
    }
    Ok(couple(&gen_base(cfg, spec, hours)?, modality, &cfg.channel_couplings))
}

/// Cells inside the swath at hour `t`, `[H * W]`.
pub fn swath_mask(orbit: &OrbitConfig, spec: &GridSpec, t: i64) -> Result<Vec<bool>> {
    orbit.validate(spec)?;
    let (h, w) = (spec.height, spec.width as i64);
    let k = orbit.strips(spec.width);
    let spacing = w as f64 / k as f64;
    let p = orbit.period as i64;
    let shift = ((t.rem_euclid(p)) as f64 * spacing / p as f64).floor() as i64;
    let mut mask = vec![false; h * spec.width];
    for y in 0..h {
        let drift = (orbit.inclination_offset * y as f64).round() as i64;
        for j in 0..k {
            let x0 = orbit.phase as i64 + (j as f64 * spacing).round() as i64 + shift + drift;
            for dx in 0..orbit.swath_width as i64 {
                mask[y * spec.width + (x0 + dx).rem_euclid(w) as usize] = true;
            }
        }
    }
    Ok(mask)
}

/// Observations of `truth` frame `t` inside the swath: one point per covered
/// cell, jittered inside the cell, with Gaussian noise on every channel.
pub fn sample_swath(
    truth: &GriddedField,
    spec: &GridSpec,
    orbit: &OrbitConfig,
    t: usize,
    noise_std: f64,
    seed: u64,
) -> Result<SwathBatch> {
    if t >= truth.times() {
        return arg(format!("hour index {t} outside {} frames", truth.times()));
    }
    if truth.height != spec.height || truth.width != spec.width {
        return arg("truth grid does not match spec");
    }
    let mask = swath_mask(orbit, spec, truth.timestamps[t])?;
    let mut rng = rng_for(seed, &[truth.timestamps[t] as u64]);
    let noise = Normal::new(0.0, noise_std.max(0.0)).map_err(|e| CoreError::Argument(e.to_string()))?;
    let (ls, os) = (spec.lat_step(), spec.lon_step());
    let mut s = SwathBatch::empty(&truth.modality, truth.channels);
    let mut vals = vec![0.0f32; truth.channels];
    for y in 0..spec.height {
        for x in 0..spec.width {
            if !mask[y * spec.width + x] {
                continue;
            }
            let (lat, lon) = cell_center(y, x, spec);
            let lat = lat + rng.random_range(-0.4..0.4) * ls;
            let lon = lon + rng.random_range(-0.4..0.4) * os;
            for (c, v) in vals.iter_mut().enumerate() {
                let e = if noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                *v = (truth.at(t, c, y, x) as f64 + e) as f32;
            }
            s.push(lat as f32, lon as f32, &vals);
        }
    }
    Ok(s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModalitySpec {
    pub name: String,
    pub couplings: Vec<(f32, f32)>,
    pub orbit: OrbitConfig,
    pub noise_std: f64,
}

impl ModalitySpec {
    pub fn channels(&self) -> usize {
        self.couplings.len()
    }
}

/// Synthetic precipitation products derived from the base field `b`:
/// `SP = sp_scale * relu(b - sp_threshold)^2` (mm/h), `TCWV = tcwv_offset + tcwv_scale * b` (mm).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrecipSpec {
    pub sp_scale: f32,
    pub sp_threshold: f32,
    pub tcwv_offset: f32,
    pub tcwv_scale: f32,
}

impl PrecipSpec {
    pub fn apply(&self, base: &GriddedField) -> GriddedField {
        let plane = base.plane();
        let mut data = Vec::with_capacity(base.times() * 2 * plane);
        for t in 0..base.times() {
            let b = base.frame(t);
            data.extend(b.iter().map(|v| self.sp_scale * (v - self.sp_threshold).max(0.0).powi(2)));
            data.extend(b.iter().map(|v| (self.tcwv_offset + self.tcwv_scale * v).max(0.0)));
        }
        GriddedField {
            modality: PRECIP.into(),
            channels: 2,
            height: base.height,
            width: base.width,
            timestamps: base.timestamps.clone(),
            data,
        }
    }
}

pub const PRECIP: &str = "precip";
pub const PRECIP_CHANNELS: [&str; 2] = ["sp", "tcwv"];

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetConfig {
    pub spec: GridSpec,
    pub hours: usize,
    pub train_hours: usize,
    pub n_blobs: usize,
    pub advection: (i64, i64),
    pub diffusion: f64,
    pub modalities: Vec<ModalitySpec>,
    pub precip: PrecipSpec,
    pub seed: u64,
}

impl DatasetConfig {
    pub fn field_config(&self, m: &ModalitySpec) -> FieldConfig {
        FieldConfig {
            n_blobs: self.n_blobs,
            advection: self.advection,
            diffusion: self.diffusion,
            channel_couplings: m.couplings.clone(),
            seed: self.seed,
        }
    }
}

/// What `gen_dataset` wrote, as recorded in `manifest.txt`.
#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub spec: GridSpec,
    pub hours: usize,
    pub train: (i64, i64),
    pub test: (i64, i64),
    pub modalities: Vec<(String, usize)>,
    pub seed: u64,
}

pub const MANIFEST: &str = "manifest.txt";

impl Manifest {
    pub fn obs_path(dir: &Path, modality: &str, hour: i64) -> PathBuf {
        dir.join(modality).join(format!("obs_{hour:05}.grd"))
    }

    pub fn truth_path(dir: &Path, modality: &str) -> PathBuf {
        dir.join(modality).join("truth.grd")
    }

    pub fn precip_path(dir: &Path) -> PathBuf {
        dir.join(PRECIP).join("truth.grd")
    }

    pub fn to_text(&self) -> String {
        let names: Vec<&str> = self.modalities.iter().map(|(n, _)| n.as_str()).collect();
        let mut s = format!(
            "dataset:dawp-synthetic\nheight:{}\nwidth:{}\ntile:{}\nhours:{}\ntrain:{}..{}\ntest:{}..{}\nseed:{}\nmodalities:{}\n",
            self.spec.height,
            self.spec.width,
            self.spec.tile,
            self.hours,
            self.train.0,
            self.train.1,
            self.test.0,
            self.test.1,
            self.seed,
            names.join(",")
        );
        for (n, c) in &self.modalities {
            s.push_str(&format!("{n}.channels:{c}\n"));
        }
        s.push_str(&format!("precip:{PRECIP}/truth.grd\n"));
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let get = |key: &str| -> Result<&str> {
            text.lines()
                .filter_map(|l| l.split_once(':'))
                .find(|(k, _)| k.trim() == key)
                .map(|(_, v)| v.trim())
                .ok_or_else(|| CoreError::Format {
                    offset: 0,
                    msg: format!("manifest is missing `{key}`"),
                })
        };
        let num = |key: &str| -> Result<u64> {
            get(key)?.parse().map_err(|_| CoreError::Format {
                offset: 0,
                msg: format!("manifest `{key}` is not a number"),
            })
        };
        let range = |key: &str| -> Result<(i64, i64)> {
            let v = get(key)?;
            v.split_once("..")
                .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                .ok_or_else(|| CoreError::Format {
                    offset: 0,
                    msg: format!("manifest `{key}` = `{v}` is not a range"),
                })
        };
        let spec = GridSpec::new(num("height")? as usize, num("width")? as usize, num("tile")? as usize)?;
        let mut modalities = Vec::new();
        for name in get("modalities")?.split(',').filter(|s| !s.is_empty()) {
            modalities.push((name.to_string(), num(&format!("{name}.channels"))? as usize));
        }
        Ok(Self {
            spec,
            hours: num("hours")? as usize,
            train: range("train")?,
            test: range("test")?,
            modalities,
            seed: num("seed")?,
        })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let p = dir.join(MANIFEST);
        Self::parse(&std::fs::read_to_string(&p).map_err(io_err(&p))?)
    }
}

/// Writes hourly remapped observations and dense truth for every modality,
/// the precipitation truth and the manifest. Hours are generated by up to
/// `jobs` workers; every hour has its own derived seed so output does not
/// depend on `jobs`.
pub fn gen_dataset(cfg: &DatasetConfig, out: &Path, jobs: usize) -> Result<Manifest> {
    if cfg.train_hours == 0 || cfg.train_hours >= cfg.hours {
        return arg(format!("train hours {} must split {} hours", cfg.train_hours, cfg.hours));
    }
    let spec = cfg.spec;
    let base = gen_base(&cfg.field_config(&cfg.modalities[0]), &spec, cfg.hours)?;
    for (mi, m) in cfg.modalities.iter().enumerate() {
        let truth = couple(&base, &m.name, &m.couplings);
        obsio::write_grid(&Manifest::truth_path(out, &m.name), &truth)?;
        let seed = derive_seed(cfg.seed, &[0x0B5, mi as u64]);
        let hours: Vec<usize> = (0..cfg.hours).collect();
        let chunk = cfg.hours.div_ceil(jobs.max(1));
        std::thread::scope(|s| -> Result<()> {
            let handles: Vec<_> = hours
                .chunks(chunk)
                .map(|part| {
                    let truth = &truth;
                    s.spawn(move || -> Result<()> {
                        for &t in part {
                            let sw = sample_swath(truth, &spec, &m.orbit, t, m.noise_std, seed)?;
                            let r = remap(&sw, &spec, t as i64)?;
                            obsio::write_grid(&Manifest::obs_path(out, &m.name, t as i64), &r.field)?;
                        }
                        Ok(())
                    })
                })
                .collect();
            for h in handles {
                h.join().expect("generator thread panicked")?;
            }
            Ok(())
        })?;
    }
    obsio::write_grid(&Manifest::precip_path(out), &cfg.precip.apply(&base))?;
    let manifest = Manifest {
        spec,
        hours: cfg.hours,
        train: (0, cfg.train_hours as i64),
        test: (cfg.train_hours as i64, cfg.hours as i64),
        modalities: cfg.modalities.iter().map(|m| (m.name.clone(), m.channels())).collect(),
        seed: cfg.seed,
    };
    obsio::write_text(&out.join(MANIFEST), &manifest.to_text())?;
    Ok(manifest)
}

/// Everything `gen_dataset` wrote, loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: Manifest,
    /// Per modality, all hours merged.
    pub obs: Vec<GriddedField>,
    pub truth: Vec<GriddedField>,
    pub precip: GriddedField,
}

impl Dataset {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = Manifest::read(dir)?;
        let mut obs = Vec::new();
        let mut truth = Vec::new();
        for (name, _) in &manifest.modalities {
            let frames = (0..manifest.hours as i64)
                .map(|t| obsio::read_grid(&Manifest::obs_path(dir, name, t)))
                .collect::<Result<Vec<_>>>()?;
            obs.push(obsio::merge_time(&frames)?);
            truth.push(obsio::read_grid(&Manifest::truth_path(dir, name))?);
        }
        let precip = obsio::read_grid(&Manifest::precip_path(dir))?;
        Ok(Self {
            manifest,
            obs,
            truth,
            precip,
        })
    }

    pub fn modality_names(&self) -> Vec<String> {
        self.manifest.modalities.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.manifest.modalities.iter().map(|(_, c)| *c).collect()
    }
}
