//! Swath remapping onto the grid, per-modality normalization, and the on-disk
//! formats for swaths, gridded fields and checkpoints.

use std::path::Path;

use crate::error::{arg, io_err, CoreError, Result};
use crate::grid::{cell_of_latlon, GridSpec, TileCoord};

/// Irregular observations from one sensor pass. `values` is `[n_points, channels]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SwathBatch {
    pub modality: String,
    pub channels: usize,
    pub lat: Vec<f32>,
    pub lon: Vec<f32>,
    pub values: Vec<f32>,
}

impl SwathBatch {
    pub fn empty(modality: &str, channels: usize) -> Self {
        Self {
            modality: modality.to_string(),
            channels,
            lat: Vec::new(),
            lon: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.lat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lat.is_empty()
    }

    pub fn push(&mut self, lat: f32, lon: f32, values: &[f32]) {
        debug_assert_eq!(values.len(), self.channels);
        self.lat.push(lat);
        self.lon.push(lon);
        self.values.extend_from_slice(values);
    }

    fn validate(&self) -> Result<()> {
        if self.channels == 0 {
            return arg("swath has zero channels");
        }
        let n = self.lat.len();
        if self.lon.len() != n || self.values.len() != n * self.channels {
            return arg(format!(
                "swath arrays disagree: {} lat, {} lon, {} values for {} channels",
                n,
                self.lon.len(),
                self.values.len(),
                self.channels
            ));
        }
        Ok(())
    }
}

/// `[T, C, H, W]` observations, NaN where nothing was observed.
#[derive(Clone, Debug, PartialEq)]
pub struct GriddedField {
    pub modality: String,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Integer hours, strictly increasing.
    pub timestamps: Vec<i64>,
    pub data: Vec<f32>,
}

impl GriddedField {
    pub fn filled(
        modality: &str,
        channels: usize,
        height: usize,
        width: usize,
        timestamps: Vec<i64>,
        value: f32,
    ) -> Self {
        let n = timestamps.len() * channels * height * width;
        Self {
            modality: modality.to_string(),
            channels,
            height,
            width,
            timestamps,
            data: vec![value; n],
        }
    }

    pub fn times(&self) -> usize {
        self.timestamps.len()
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.plane()
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.data[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    pub fn frame_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.frame_len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn at(&self, t: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[((t * self.channels + c) * self.height + y) * self.width + x]
    }

    /// Frames `[start, start + len)` as a new field.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<GriddedField> {
        if start + len > self.times() {
            return arg(format!(
                "time slice {start}..{} outside {} frames",
                start + len,
                self.times()
            ));
        }
        let n = self.frame_len();
        Ok(GriddedField {
            modality: self.modality.clone(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            timestamps: self.timestamps[start..start + len].to_vec(),
            data: self.data[start * n..(start + len) * n].to_vec(),
        })
    }

    /// Copy of one `size x size` tile of frame `t`, laid out `[C, size, size]`.
    pub fn tile(&self, t: usize, at: TileCoord, size: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(self.channels * size * size);
        for c in 0..self.channels {
            for y in 0..size {
                let base = ((t * self.channels + c) * self.height + at.r * size + y) * self.width + at.c * size;
                out.extend_from_slice(&self.data[base..base + size]);
            }
        }
        out
    }

    pub fn set_tile(&mut self, t: usize, at: TileCoord, size: usize, tile: &[f32]) {
        debug_assert_eq!(tile.len(), self.channels * size * size);
        for c in 0..self.channels {
            for y in 0..size {
                let base = ((t * self.channels + c) * self.height + at.r * size + y) * self.width + at.c * size;
                let src = (c * size + y) * size;
                self.data[base..base + size].copy_from_slice(&tile[src..src + size]);
            }
        }
    }

    pub fn nan_count(&self) -> usize {
        self.data.iter().filter(|v| v.is_nan()).count()
    }

    fn validate(&self) -> Result<()> {
        if self.data.len() != self.times() * self.frame_len() {
            return arg(format!(
                "field `{}` has {} values, expected {}",
                self.modality,
                self.data.len(),
                self.times() * self.frame_len()
            ));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return arg(format!("field `{}` timestamps not strictly increasing", self.modality));
        }
        Ok(())
    }
}

/// A remapped single-hour field together with the per-channel cell counts.
#[derive(Clone, Debug)]
pub struct Remapped {
    pub field: GriddedField,
    /// `[C, H, W]` number of observations averaged into each cell.
    pub counts: Vec<u32>,
}

/// Averages every observation into the grid cell containing it. Channels are
/// independent: a NaN value only drops that channel's contribution.
pub fn remap(swath: &SwathBatch, spec: &GridSpec, hour: i64) -> Result<Remapped> {
    swath.validate()?;
    let c = swath.channels;
    let plane = spec.cells();
    let mut sum = vec![0.0f64; c * plane];
    let mut count = vec![0u32; c * plane];
    for p in 0..swath.len() {
        let (row, col) = cell_of_latlon(swath.lat[p] as f64, swath.lon[p] as f64, spec)?;
        let cell = row * spec.width + col;
        for ch in 0..c {
            let v = swath.values[p * c + ch];
            if v.is_nan() {
                continue;
            }
            sum[ch * plane + cell] += v as f64;
            count[ch * plane + cell] += 1;
        }
    }
    let data = sum
        .iter()
        .zip(&count)
        .map(|(s, &n)| if n == 0 { f32::NAN } else { (s / n as f64) as f32 })
        .collect();
    Ok(Remapped {
        field: GriddedField {
            modality: swath.modality.clone(),
            channels: c,
            height: spec.height,
            width: spec.width,
            timestamps: vec![hour],
            data,
        },
        counts: count,
    })
}

/// Concatenates fields along time, sorted by timestamp.
pub fn merge_time(fields: &[GriddedField]) -> Result<GriddedField> {
    let Some(first) = fields.first() else {
        return arg("merge_time: no fields");
    };
    for f in fields {
        f.validate()?;
        if f.modality != first.modality
            || f.channels != first.channels
            || f.height != first.height
            || f.width != first.width
        {
            return arg(format!(
                "merge_time: `{}` {}x{}x{} does not match `{}` {}x{}x{}",
                f.modality, f.channels, f.height, f.width, first.modality, first.channels, first.height, first.width
            ));
        }
    }
    let mut frames: Vec<(i64, &[f32])> = fields
        .iter()
        .flat_map(|f| (0..f.times()).map(move |t| (f.timestamps[t], f.frame(t))))
        .collect();
    frames.sort_by_key(|(t, _)| *t);
    if let Some(w) = frames.windows(2).find(|w| w[0].0 == w[1].0) {
        return arg(format!("merge_time: duplicate timestamp {}", w[0].0));
    }
    let mut data = Vec::with_capacity(frames.len() * first.frame_len());
    for (_, f) in &frames {
        data.extend_from_slice(f);
    }
    Ok(GriddedField {
        modality: first.modality.clone(),
        channels: first.channels,
        height: first.height,
        width: first.width,
        timestamps: frames.iter().map(|(t, _)| *t).collect(),
        data,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub modality: String,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Per-channel mean and population std over non-NaN cells.
pub fn fit_stats(field: &GriddedField) -> Result<NormStats> {
    field.validate()?;
    let plane = field.plane();
    let mut mean = Vec::with_capacity(field.channels);
    let mut std = Vec::with_capacity(field.channels);
    for c in 0..field.channels {
        let values = (0..field.times())
            .flat_map(|t| field.frame(t)[c * plane..(c + 1) * plane].iter())
            .filter(|v| !v.is_nan());
        let (mut n, mut s) = (0usize, 0.0f64);
        for v in values.clone() {
            n += 1;
            s += *v as f64;
        }
        if n < 2 {
            return Err(CoreError::Statistics(format!(
                "`{}` channel {c}: {n} observed cells, need at least 2",
                field.modality
            )));
        }
        let m = s / n as f64;
        let var = values.map(|v| (*v as f64 - m).powi(2)).sum::<f64>() / n as f64;
        if var <= 0.0 {
            return Err(CoreError::Statistics(format!(
                "`{}` channel {c}: zero standard deviation",
                field.modality
            )));
        }
        mean.push(m);
        std.push(var.sqrt());
    }
    Ok(NormStats {
        modality: field.modality.clone(),
        mean,
        std,
    })
}

fn check_stats(field: &GriddedField, stats: &NormStats) -> Result<()> {
    if field.modality != stats.modality || field.channels != stats.mean.len() {
        return arg(format!(
            "stats for `{}` ({} channels) applied to `{}` ({} channels)",
            stats.modality,
            stats.mean.len(),
            field.modality,
            field.channels
        ));
    }
    Ok(())
}

pub fn normalize(field: &GriddedField, stats: &NormStats) -> Result<GriddedField> {
    check_stats(field, stats)?;
    let mut out = field.clone();
    let plane = field.plane();
    for (i, v) in out.data.iter_mut().enumerate() {
        let c = (i / plane) % field.channels;
        *v = ((*v as f64 - stats.mean[c]) / stats.std[c]) as f32;
    }
    Ok(out)
}

pub fn denormalize(field: &GriddedField, stats: &NormStats) -> Result<GriddedField> {
    check_stats(field, stats)?;
    let mut out = field.clone();
    let plane = field.plane();
    for (i, v) in out.data.iter_mut().enumerate() {
        let c = (i / plane) % field.channels;
        *v = (*v as f64 * stats.std[c] + stats.mean[c]) as f32;
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// File formats: 8-byte magic | u32 LE header length | header text | payload.

pub const GRID_MAGIC: &[u8; 8] = b"DAWPGRD1";
pub const SWATH_MAGIC: &[u8; 8] = b"DAWPSWT1";
pub const CKPT_MAGIC: &[u8; 8] = b"DAWPCKPT";

fn frame_bytes(magic: &[u8; 8], header: &str, payload_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + header.len() + payload_len);
    out.extend_from_slice(magic);
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    out
}

fn push_f32s(out: &mut Vec<u8>, v: &[f32]) {
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn fmt_err<T>(offset: usize, msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Format {
        offset,
        msg: msg.into(),
    })
}

/// Splits a file into its header text and payload, checking the magic.
fn split<'a>(bytes: &'a [u8], magic: &[u8; 8]) -> Result<(&'a str, &'a [u8], usize)> {
    if bytes.len() < 8 {
        return fmt_err(bytes.len(), "file shorter than magic");
    }
    if &bytes[..8] != magic {
        return fmt_err(
            0,
            format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&bytes[..8]),
                String::from_utf8_lossy(magic)
            ),
        );
    }
    if bytes.len() < 12 {
        return fmt_err(bytes.len(), "truncated header length");
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + hlen {
        return fmt_err(bytes.len(), format!("header of {hlen} bytes is truncated"));
    }
    let header = std::str::from_utf8(&bytes[12..12 + hlen])
        .map_err(|e| CoreError::Format {
            offset: 12 + e.valid_up_to(),
            msg: "header is not UTF-8".into(),
        })?;
    Ok((header, &bytes[12 + hlen..], 12 + hlen))
}

struct Header<'a> {
    pairs: Vec<(&'a str, &'a str)>,
}

impl<'a> Header<'a> {
    fn parse(text: &'a str) -> Result<Self> {
        let mut pairs = Vec::new();
        let mut offset = 12;
        for line in text.lines() {
            if !line.is_empty() {
                let Some((k, v)) = line.split_once(':') else {
                    return fmt_err(offset, format!("header line `{line}` has no `:`"));
                };
                pairs.push((k.trim(), v.trim()));
            }
            offset += line.len() + 1;
        }
        Ok(Self { pairs })
    }

    fn get(&self, key: &str) -> Result<&'a str> {
        self.pairs
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| *v)
            .ok_or_else(|| CoreError::Format {
                offset: 12,
                msg: format!("header is missing `{key}`"),
            })
    }

    fn num(&self, key: &str) -> Result<usize> {
        let v = self.get(key)?;
        v.parse().map_err(|_| CoreError::Format {
            offset: 12,
            msg: format!("header `{key}` = `{v}` is not a count"),
        })
    }
}

fn read_f32s(payload: &[u8], n: usize, base: usize) -> Result<Vec<f32>> {
    if payload.len() != n * 4 {
        return fmt_err(
            base + payload.len().min(n * 4),
            format!("payload has {} bytes, header implies {}", payload.len(), n * 4),
        );
    }
    Ok(payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

pub fn encode_grid(f: &GriddedField) -> Result<Vec<u8>> {
    f.validate()?;
    let ts: Vec<String> = f.timestamps.iter().map(|t| t.to_string()).collect();
    let header = format!(
        "modality:{}\nchannels:{}\nheight:{}\nwidth:{}\ntime:{}\ntimestamps:{}\ndtype:f32le\nmissing:nan\n",
        f.modality,
        f.channels,
        f.height,
        f.width,
        f.times(),
        ts.join(",")
    );
    let mut out = frame_bytes(GRID_MAGIC, &header, f.data.len() * 4);
    push_f32s(&mut out, &f.data);
    Ok(out)
}

pub fn decode_grid(bytes: &[u8]) -> Result<GriddedField> {
    let (text, payload, base) = split(bytes, GRID_MAGIC)?;
    let h = Header::parse(text)?;
    let (channels, height, width, time) = (h.num("channels")?, h.num("height")?, h.num("width")?, h.num("time")?);
    let ts_text = h.get("timestamps")?;
    let timestamps: Vec<i64> = if ts_text.is_empty() {
        Vec::new()
    } else {
        ts_text
            .split(',')
            .map(|s| s.trim().parse::<i64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::Format {
                offset: 12,
                msg: format!("bad timestamps `{ts_text}`"),
            })?
    };
    if timestamps.len() != time {
        return fmt_err(12, format!("{} timestamps for time = {time}", timestamps.len()));
    }
    if h.get("dtype")? != "f32le" {
        return fmt_err(12, "unsupported dtype");
    }
    let data = read_f32s(payload, time * channels * height * width, base)?;
    Ok(GriddedField {
        modality: h.get("modality")?.to_string(),
        channels,
        height,
        width,
        timestamps,
        data,
    })
}

pub fn encode_swath(s: &SwathBatch) -> Result<Vec<u8>> {
    s.validate()?;
    let header = format!(
        "modality:{}\nchannels:{}\nn_points:{}\n",
        s.modality,
        s.channels,
        s.len()
    );
    let mut out = frame_bytes(SWATH_MAGIC, &header, s.len() * (2 + s.channels) * 4);
    for p in 0..s.len() {
        push_f32s(&mut out, &[s.lat[p], s.lon[p]]);
        push_f32s(&mut out, &s.values[p * s.channels..(p + 1) * s.channels]);
    }
    Ok(out)
}

pub fn decode_swath(bytes: &[u8]) -> Result<SwathBatch> {
    let (text, payload, base) = split(bytes, SWATH_MAGIC)?;
    let h = Header::parse(text)?;
    let (channels, n) = (h.num("channels")?, h.num("n_points")?);
    let flat = read_f32s(payload, n * (2 + channels), base)?;
    let mut s = SwathBatch::empty(h.get("modality")?, channels);
    for rec in flat.chunks_exact(2 + channels) {
        s.push(rec[0], rec[1], &rec[2..]);
    }
    Ok(s)
}

/// Named arrays as stored in a checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

pub fn encode_checkpoint(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut header = String::new();
    let mut total = 0;
    for a in arrays {
        if a.name.is_empty() || a.name.contains(char::is_whitespace) || a.name.contains(':') {
            return arg(format!("checkpoint array name `{}` is not a bare word", a.name));
        }
        if a.shape.iter().product::<usize>() != a.data.len() {
            return arg(format!("checkpoint array `{}` shape/data mismatch", a.name));
        }
        let dims: Vec<String> = a.shape.iter().map(|d| d.to_string()).collect();
        header.push_str(&format!("{}:{} {}\n", a.name, a.shape.len(), dims.join(" ")));
        total += a.data.len();
    }
    let mut out = frame_bytes(CKPT_MAGIC, &header, total * 4);
    for a in arrays {
        push_f32s(&mut out, &a.data);
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let (text, payload, base) = split(bytes, CKPT_MAGIC)?;
    let h = Header::parse(text)?;
    let mut shapes = Vec::new();
    for (name, spec) in &h.pairs {
        let nums: Vec<usize> = spec
            .split_whitespace()
            .map(|s| s.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| CoreError::Format {
                offset: 12,
                msg: format!("bad manifest entry for `{name}`"),
            })?;
        match nums.split_first() {
            Some((&rank, dims)) if dims.len() == rank => shapes.push((name.to_string(), dims.to_vec())),
            _ => return fmt_err(12, format!("manifest entry for `{name}` has wrong rank")),
        }
    }
    let total: usize = shapes.iter().map(|(_, s)| s.iter().product::<usize>()).sum();
    let flat = read_f32s(payload, total, base)?;
    let mut off = 0;
    Ok(shapes
        .into_iter()
        .map(|(name, shape)| {
            let n: usize = shape.iter().product();
            let data = flat[off..off + n].to_vec();
            off += n;
            NamedArray { name, shape, data }
        })
        .collect())
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, bytes).map_err(io_err(path))
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn write_grid(path: &Path, f: &GriddedField) -> Result<()> {
    write_bytes(path, &encode_grid(f)?)
}

pub fn read_grid(path: &Path) -> Result<GriddedField> {
    decode_grid(&read_bytes(path)?)
}

pub fn write_swath(path: &Path, s: &SwathBatch) -> Result<()> {
    write_bytes(path, &encode_swath(s)?)
}

pub fn read_swath(path: &Path) -> Result<SwathBatch> {
    decode_swath(&read_bytes(path)?)
}

pub fn write_checkpoint(path: &Path, arrays: &[NamedArray]) -> Result<()> {
    write_bytes(path, &encode_checkpoint(arrays)?)
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<NamedArray>> {
    decode_checkpoint(&read_bytes(path)?)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write_bytes(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_points_same_cell_average() {
        let spec = GridSpec::new(24, 48, 24).unwrap();
        let mut s = SwathBatch::empty("m", 1);
        s.push(10.1, 20.1, &[1.0]);
        s.push(10.2, 20.2, &[3.0]);
        let r = remap(&s, &spec, 0).unwrap();
        let (row, col) = cell_of_latlon(10.1, 20.1, &spec).unwrap();
        assert_eq!(r.field.at(0, 0, row, col), 2.0);
        assert_eq!(r.field.nan_count(), spec.cells() - 1);
    }

    #[test]
    fn stats_of_two_points() {
        let mut f = GriddedField::filled("m", 1, 2, 2, vec![0], f32::NAN);
        f.data[0] = 4.0;
        f.data[3] = 6.0;
        let s = fit_stats(&f).unwrap();
        assert_eq!((s.mean[0], s.std[0]), (5.0, 1.0));
        f.data[3] = 4.0;
        assert!(matches!(fit_stats(&f), Err(CoreError::Statistics(_))));
    }

    #[test]
    fn centered_value_normalizes_to_zero() {
        let f = GriddedField {
            modality: "m".into(),
            channels: 1,
            height: 1,
            width: 2,
            timestamps: vec![0],
            data: vec![5.0, f32::NAN],
        };
        let st = NormStats {
            modality: "m".into(),
            mean: vec![5.0],
            std: vec![2.0],
        };
        let n = normalize(&f, &st).unwrap();
        assert_eq!(n.data[0], 0.0);
        assert!(n.data[1].is_nan());
        let other = NormStats {
            modality: "x".into(),
            ..st
        };
        assert!(normalize(&f, &other).is_err());
    }
}
