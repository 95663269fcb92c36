//! Flat `key = value` run configuration with named presets.
//!
//! A config file may start with `preset = desk` (or `paper`); every other line
//! overrides one key of that preset. `#` starts a comment.

use std::fmt;
use std::path::Path;

use crate::error::{io_err, CoreError, Result};
use crate::grid::GridSpec;
use crate::synthgen::{DatasetConfig, ModalitySpec, OrbitConfig, PrecipSpec};

/// `name:channels` pairs, written `alpha:3,beta:2`.
#[derive(Clone, Debug, PartialEq)]
pub struct Modalities(pub Vec<(String, usize)>);

impl fmt::Display for Modalities {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|(n, c)| format!("{n}:{c}")).collect();
        f.write_str(&parts.join(","))
    }
}

trait Value: Sized {
    fn parse_value(s: &str) -> std::result::Result<Self, String>;
    fn show(&self) -> String;
}

macro_rules! plain_value {
    ($($t:ty),*) => {$(
        impl Value for $t {
            fn parse_value(s: &str) -> std::result::Result<Self, String> {
                s.parse().map_err(|e| format!("{e}"))
            }
            fn show(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

plain_value!(usize, u64, i64, f64, bool, String);

impl Value for Modalities {
    fn parse_value(s: &str) -> std::result::Result<Self, String> {
        let mut out = Vec::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (n, c) = part.split_once(':').ok_or("expected name:channels")?;
            let n = n.trim();
            if n.is_empty() || !n.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '_') {
                return Err(format!("bad modality name `{n}`"));
            }
            let c: usize = c.trim().parse().map_err(|e| format!("{e}"))?;
            if c == 0 {
                return Err(format!("modality `{n}` has zero channels"));
            }
            out.push((n.to_string(), c));
        }
        if out.is_empty() {
            return Err("no modalities".into());
        }
        Ok(Modalities(out))
    }
    fn show(&self) -> String {
        self.to_string()
    }
}

macro_rules! run_config {
    ($($field:ident : $ty:ty),* $(,)?) => {
        #[derive(Clone, Debug, PartialEq)]
        pub struct RunConfig {
            pub preset: String,
            $(pub $field: $ty,)*
        }

        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &[$(stringify!($field)),*];

            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                match key {
                    $(stringify!($field) => {
                        self.$field = <$ty as Value>::parse_value(value).map_err(|e| {
                            CoreError::Config(format!("`{key}` = `{value}`: {e}"))
                        })?;
                    })*
                    _ => return Err(CoreError::Config(format!("unknown key `{key}`"))),
                }
                Ok(())
            }

            pub fn get(&self, key: &str) -> Option<String> {
                match key {
                    "preset" => Some(self.preset.clone()),
                    $(stringify!($field) => Some(self.$field.show()),)*
                    _ => None,
                }
            }

            /// Every key with its resolved value, one `key = value` per line.
            pub fn to_text(&self) -> String {
                let mut s = format!("preset = {}\n", self.preset);
                $(s.push_str(&format!("{} = {}\n", stringify!($field), self.$field.show()));)*
                s
            }
        }
    };
}

run_config! {
    seed: u64,
    height: usize,
    width: usize,
    tile: usize,
    patch: usize,
    time_window: usize,
    modalities: Modalities,
    hours: usize,
    train_hours: usize,
    n_blobs: usize,
    advection_u: i64,
    advection_v: i64,
    diffusion: f64,
    swath_width: usize,
    orbit_period: usize,
    inclination: f64,
    noise_std: f64,
    sp_scale: f64,
    sp_threshold: f64,
    tcwv_offset: f64,
    tcwv_scale: f64,
    sp_log_a: f64,
    sp_log_b: f64,
    tcwv_log_a: f64,
    tcwv_log_b: f64,
    precip_modality: usize,
    lr: f64,
    warmup_lr: f64,
    min_lr: f64,
    warmup_frac: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    log_every: usize,
    vae_dim: usize,
    vae_enc_blocks: usize,
    vae_dec_blocks: usize,
    vae_heads: usize,
    vae_batch: usize,
    vae_steps: usize,
    vae_dense_frac: f64,
    kl_weight: f64,
    obs_threshold: f64,
    aida_enc_dim: usize,
    aida_enc_blocks: usize,
    aida_dec_dim: usize,
    aida_dec_blocks: usize,
    aida_heads: usize,
    aida_keep: usize,
    aida_batch: usize,
    aida_steps: usize,
    aiwp_dim: usize,
    aiwp_blocks: usize,
    aiwp_heads: usize,
    aiwp_batch: usize,
    aiwp_steps: usize,
    precip_dim: usize,
    precip_blocks: usize,
    precip_heads: usize,
    precip_batch: usize,
    precip_steps: usize,
}

impl RunConfig {
    /// Scaled-down settings that train in minutes on one core.
    pub fn desk() -> Self {
        Self {
            preset: "desk".into(),
            seed: 7,
            height: 96,
            width: 192,
            tile: 24,
            patch: 8,
            time_window: 4,
            modalities: Modalities(vec![("alpha".into(), 3), ("beta".into(), 2)]),
            hours: 192,
            train_hours: 144,
            n_blobs: 40,
            advection_u: 1,
            advection_v: 0,
            diffusion: 0.02,
            swath_width: 10,
            orbit_period: 12,
            inclination: 0.3,
            noise_std: 0.02,
            sp_scale: 4.0,
            sp_threshold: 0.5,
            tcwv_offset: 25.0,
            tcwv_scale: 10.0,
            sp_log_a: 1e-7,
            sp_log_b: 1e2,
            tcwv_log_a: 1.0,
            tcwv_log_b: 1.0,
            precip_modality: 0,
            lr: 1e-3,
            warmup_lr: 1e-6,
            min_lr: 1e-6,
            warmup_frac: 0.1,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            log_every: 50,
            vae_dim: 64,
            vae_enc_blocks: 4,
            vae_dec_blocks: 4,
            vae_heads: 4,
            vae_batch: 16,
            vae_steps: 2000,
            vae_dense_frac: 0.5,
            kl_weight: 1e-6,
            obs_threshold: 0.10,
            aida_enc_dim: 64,
            aida_enc_blocks: 4,
            aida_dec_dim: 48,
            aida_dec_blocks: 3,
            aida_heads: 4,
            aida_keep: 16,
            aida_batch: 16,
            aida_steps: 1000,
            aiwp_dim: 32,
            aiwp_blocks: 2,
            aiwp_heads: 4,
            aiwp_batch: 4,
            aiwp_steps: 5000,
            precip_dim: 32,
            precip_blocks: 1,
            precip_heads: 4,
            precip_batch: 16,
            precip_steps: 2000,
        }
    }

    /// Full-scale architecture and optimizer settings.
    pub fn paper() -> Self {
        Self {
            preset: "paper".into(),
            height: 1152,
            width: 2304,
            tile: 144,
            patch: 16,
            time_window: 12,
            modalities: Modalities(vec![
                ("amsua".into(), 15),
                ("atms".into(), 9),
                ("hirs".into(), 20),
                ("mhs".into(), 5),
            ]),
            hours: 24 * 365,
            train_hours: 24 * 300,
            swath_width: 120,
            precip_modality: 1,
            lr: 1e-4,
            vae_dim: 768,
            vae_enc_blocks: 10,
            vae_dec_blocks: 12,
            vae_heads: 8,
            vae_batch: 200,
            vae_steps: 200_000,
            aida_enc_dim: 768,
            aida_enc_blocks: 12,
            aida_dec_dim: 512,
            aida_dec_blocks: 8,
            aida_heads: 8,
            aida_keep: 128,
            aida_batch: 48,
            aida_steps: 200_000,
            aiwp_dim: 768,
            aiwp_blocks: 12,
            aiwp_heads: 8,
            aiwp_batch: 8,
            aiwp_steps: 200_000,
            precip_dim: 768,
            precip_blocks: 4,
            precip_heads: 8,
            ..Self::desk()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(CoreError::Config(format!("unknown preset `{other}`"))),
        }
    }

    /// Parses config text; `preset` (if present) must be the first key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: Option<Self> = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CoreError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                if cfg.is_some() {
                    return Err(CoreError::Config(format!("line {}: preset must come first", no + 1)));
                }
                cfg = Some(Self::preset(v)?);
                continue;
            }
            cfg.get_or_insert_with(Self::desk).set(k, v)?;
        }
        let cfg = cfg.unwrap_or_else(Self::desk);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(io_err(path))?)
    }

    pub fn apply_overrides(&mut self, pairs: &[(String, String)]) -> Result<()> {
        for (k, v) in pairs {
            if k == "preset" {
                return Err(CoreError::Config("preset cannot be overridden".into()));
            }
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        GridSpec::new(self.height, self.width, self.tile).map_err(|e| CoreError::Config(e.to_string()))?;
        if self.patch == 0 || self.tile % self.patch != 0 {
            return bad(format!("tile {} not divisible by patch {}", self.tile, self.patch));
        }
        if self.time_window == 0 {
            return bad("time_window must be positive".into());
        }
        if self.train_hours == 0 || self.train_hours >= self.hours {
            return bad(format!("train_hours {} must split hours {}", self.train_hours, self.hours));
        }
        if self.precip_modality >= self.modalities.0.len() {
            return bad(format!("precip_modality {} out of range", self.precip_modality));
        }
        for (name, dim, heads) in [
            ("vae", self.vae_dim, self.vae_heads),
            ("aida_enc", self.aida_enc_dim, self.aida_heads),
            ("aida_dec", self.aida_dec_dim, self.aida_heads),
            ("aiwp", self.aiwp_dim, self.aiwp_heads),
            ("precip", self.precip_dim, self.precip_heads),
        ] {
            if heads == 0 || dim % heads != 0 {
                return bad(format!("{name} dim {dim} not divisible by {heads} heads"));
            }
        }
        if !(self.sp_log_a > 0.0 && self.sp_log_b > 0.0 && self.tcwv_log_a > 0.0 && self.tcwv_log_b > 0.0) {
            return bad("log transform constants must be positive".into());
        }
        Ok(())
    }

    pub fn grid(&self) -> GridSpec {
        GridSpec::new(self.height, self.width, self.tile).expect("validated grid")
    }

    pub fn tokens_per_side(&self) -> usize {
        self.tile / self.patch
    }

    pub fn tokens_per_tile(&self) -> usize {
        self.tokens_per_side() * self.tokens_per_side()
    }

    pub fn channels(&self) -> Vec<usize> {
        self.modalities.0.iter().map(|(_, c)| *c).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.modalities.0.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Per-channel `(gain, offset)` couplings of modality `m` to the base field.
    pub fn couplings(m: usize, channels: usize) -> Vec<(f32, f32)> {
        const GAINS: [f32; 6] = [1.0, -0.8, 0.6, 1.2, -0.9, 0.7];
        (0..channels)
            .map(|k| {
                let g = GAINS[(k + m) % GAINS.len()];
                (g, 0.1 * (k as f32 + 1.0) * (m as f32 + 1.0))
            })
            .collect()
    }

    pub fn dataset_config(&self) -> DatasetConfig {
        let n = self.modalities.0.len();
        DatasetConfig {
            spec: self.grid(),
            hours: self.hours,
            train_hours: self.train_hours,
            n_blobs: self.n_blobs,
            advection: (self.advection_u, self.advection_v),
            diffusion: self.diffusion,
            modalities: self
                .modalities
                .0
                .iter()
                .enumerate()
                .map(|(m, (name, c))| ModalitySpec {
                    name: name.clone(),
                    couplings: Self::couplings(m, *c),
                    orbit: OrbitConfig {
                        swath_width: self.swath_width,
                        period: self.orbit_period,
                        inclination_offset: self.inclination,
                        phase: m * self.width / (2 * n),
                    },
                    noise_std: self.noise_std,
                })
                .collect(),
            precip: PrecipSpec {
                sp_scale: self.sp_scale as f32,
                sp_threshold: self.sp_threshold as f32,
                tcwv_offset: self.tcwv_offset as f32,
                tcwv_scale: self.tcwv_scale as f32,
            },
            seed: self.seed,
        }
    }
}
