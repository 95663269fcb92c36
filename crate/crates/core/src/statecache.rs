//! Double-buffered global latent state for tiled rollout.
//!
//! Queries read the previous buffer only, updates write the current buffer
//! only, and the buffers swap once every tile of a sweep has been written.
//! Per modality a buffer is `[tiles_h, tiles_w, T, C_lat, side, side]`; the
//! token windows exchanged with callers use the `[T, side * side, C_lat]`
//! layout of [`TokenWindow`].

use std::path::Path;

use crate::aida::TokenWindow;
use crate::error::{arg, CoreError, Result};
use crate::grid::{neighbours8, GridSpec, TileCoord};
use crate::obsio::{read_checkpoint, write_checkpoint, NamedArray};

#[derive(Clone, Debug, PartialEq)]
pub struct StateCache {
    spec: GridSpec,
    time: usize,
    side: usize,
    latents: Vec<usize>,
    prev: Vec<Vec<f32>>,
    cur: Vec<Vec<f32>>,
    written: Vec<bool>,
    n_written: usize,
    generation: u64,
}

impl StateCache {
    /// Zero-filled buffers for tiles of `side x side` tokens with `latents[m]`
    /// channels per modality.
    pub fn new(spec: &GridSpec, latents: &[usize], time: usize, side: usize) -> Self {
        let n = spec.n_tiles();
        let bufs: Vec<Vec<f32>> = latents.iter().map(|c| vec![0.0; n * time * c * side * side]).collect();
        Self {
            spec: *spec,
            time,
            side,
            latents: latents.to_vec(),
            prev: bufs.clone(),
            cur: bufs,
            written: vec![false; n],
            n_written: 0,
            generation: 0,
        }
    }

    pub fn shape(&self, m: usize) -> [usize; 6] {
        [self.spec.tiles_h(), self.spec.tiles_w(), self.time, self.latents[m], self.side, self.side]
    }

    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn pending(&self) -> usize {
        self.n_written
    }

    pub fn previous(&self, m: usize) -> &[f32] {
        &self.prev[m]
    }

    fn entry_len(&self, m: usize) -> usize {
        self.time * self.latents[m] * self.side * self.side
    }

    fn index(&self, at: TileCoord) -> Result<usize> {
        if at.r >= self.spec.tiles_h() || at.c >= self.spec.tiles_w() {
            return arg(format!(
                "tile ({}, {}) outside a {}x{} tile grid",
                at.r,
                at.c,
                self.spec.tiles_h(),
                self.spec.tiles_w()
            ));
        }
        Ok(self.spec.tile_index(at))
    }

    fn check(&self, w: &TokenWindow) -> Result<()> {
        let p = self.side * self.side;
        let ok = w.latents.len() == self.latents.len()
            && w.latents.iter().zip(&self.latents).all(|(l, c)| l.len() == self.time * p * c);
        if ok {
            Ok(())
        } else {
            arg("token window does not match the cache layout")
        }
    }

    fn read(&self, buf: &[Vec<f32>], i: usize) -> TokenWindow {
        let p = self.side * self.side;
        let latents = self
            .latents
            .iter()
            .enumerate()
            .map(|(m, &c)| {
                let e = &buf[m][i * self.entry_len(m)..(i + 1) * self.entry_len(m)];
                let mut out = vec![0.0; e.len()];
                for t in 0..self.time {
                    for k in 0..c {
                        for q in 0..p {
                            out[(t * p + q) * c + k] = e[(t * c + k) * p + q];
                        }
                    }
                }
                out
            })
            .collect();
        TokenWindow {
            latents,
            observed: self.latents.iter().map(|_| vec![true; self.time * p]).collect(),
        }
    }

    fn write(buf: &mut [Vec<f32>], latents: &[usize], time: usize, p: usize, i: usize, w: &TokenWindow) {
        for (m, &c) in latents.iter().enumerate() {
            let n = time * c * p;
            let e = &mut buf[m][i * n..(i + 1) * n];
            for t in 0..time {
                for k in 0..c {
                    for q in 0..p {
                        e[(t * c + k) * p + q] = w.latents[m][(t * p + q) * c + k];
                    }
                }
            }
        }
    }

    /// Loads the previous buffer for every tile (tile-major order) ahead of
    /// the first sweep. Only allowed between sweeps.
    pub fn seed_previous(&mut self, windows: &[TokenWindow]) -> Result<()> {
        if self.n_written != 0 {
            return Err(CoreError::Contract("cannot seed the cache in the middle of a sweep".into()));
        }
        if windows.len() != self.spec.n_tiles() {
            return arg(format!("{} windows for {} tiles", windows.len(), self.spec.n_tiles()));
        }
        let p = self.side * self.side;
        for (i, w) in windows.iter().enumerate() {
            self.check(w)?;
            Self::write(&mut self.prev, &self.latents, self.time, p, i, w);
        }
        Ok(())
    }

    /// Previous-buffer window of one tile.
    pub fn query(&self, at: TileCoord) -> Result<TokenWindow> {
        Ok(self.read(&self.prev, self.index(at)?))
    }

    /// Previous-buffer windows of the eight neighbours, in `neighbours8` order.
    pub fn query_neighbours(&self, at: TileCoord) -> Result<Vec<(TileCoord, TokenWindow)>> {
        self.index(at)?;
        Ok(neighbours8(at, self.spec.tiles_h(), self.spec.tiles_w())?
            .into_iter()
            .map(|n| (n, self.read(&self.prev, self.spec.tile_index(n))))
            .collect())
    }

    /// Writes one tile's prediction into the current buffer. Returns true when
    /// this write completed the sweep and the buffers were swapped.
    pub fn update(&mut self, at: TileCoord, w: &TokenWindow) -> Result<bool> {
        let i = self.index(at)?;
        self.check(w)?;
        if self.written[i] {
            return Err(CoreError::Contract(format!(
                "tile ({}, {}) written twice in generation {}",
                at.r, at.c, self.generation
            )));
        }
        let p = self.side * self.side;
        Self::write(&mut self.cur, &self.latents, self.time, p, i, w);
        self.written[i] = true;
        self.n_written += 1;
        if self.n_written < self.written.len() {
            return Ok(false);
        }
        std::mem::swap(&mut self.prev, &mut self.cur);
        self.cur.iter_mut().for_each(|b| b.fill(0.0));
        self.written.fill(false);
        self.n_written = 0;
        self.generation += 1;
        Ok(true)
    }

    /// Writes both buffers, flags and generation in checkpoint format.
    pub fn dump(&self, path: &Path) -> Result<()> {
        let mut arrays = Vec::new();
        for m in 0..self.latents.len() {
            let shape = self.shape(m).to_vec();
            arrays.push(NamedArray { name: format!("prev.{m}"), shape: shape.clone(), data: self.prev[m].clone() });
            arrays.push(NamedArray { name: format!("cur.{m}"), shape, data: self.cur[m].clone() });
        }
        arrays.push(NamedArray {
            name: "written".into(),
            shape: vec![self.written.len()],
            data: self.written.iter().map(|w| f32::from(u8::from(*w))).collect(),
        });
        // Split so generations beyond 2^24 survive the f32 round trip.
        arrays.push(NamedArray {
            name: "generation".into(),
            shape: vec![2],
            data: vec![(self.generation >> 20) as f32, (self.generation & 0xF_FFFF) as f32],
        });
        write_checkpoint(path, &arrays)
    }

    /// Restores a dump into a cache of the same layout.
    pub fn load(&mut self, path: &Path) -> Result<()> {
        let arrays = read_checkpoint(path)?;
        let get = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let a = arrays
                .iter()
                .find(|a| a.name == name)
                .ok_or_else(|| CoreError::Checkpoint(format!("cache dump lacks {name}")))?;
            if a.shape != shape {
                return Err(CoreError::Checkpoint(format!("cache array {name} has shape {:?}, expected {shape:?}", a.shape)));
            }
            Ok(a.data.clone())
        };
        let mut next = self.clone();
        for m in 0..self.latents.len() {
            next.prev[m] = get(&format!("prev.{m}"), &self.shape(m))?;
            next.cur[m] = get(&format!("cur.{m}"), &self.shape(m))?;
        }
        next.written = get("written", &[self.written.len()])?.iter().map(|v| *v != 0.0).collect();
        next.n_written = next.written.iter().filter(|w| **w).count();
        let g = get("generation", &[2])?;
        next.generation = ((g[0] as u64) << 20) | g[1] as u64;
        *self = next;
        Ok(())
    }
}
