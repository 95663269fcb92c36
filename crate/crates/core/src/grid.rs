//! Equirectangular global grid, its tiling, and the spherical 8-neighbourhood.

use crate::error::{arg, Result};

/// Global grid of `height x width` cells cut into square `tile x tile` sub-images.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    pub tile: usize,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, tile: usize) -> Result<Self> {
        if height == 0 || width == 0 || tile == 0 {
            return arg(format!("grid {height}x{width} tile {tile}: dimensions must be positive"));
        }
        if height % tile != 0 || width % tile != 0 {
            return arg(format!("grid {height}x{width} is not divisible by tile {tile}"));
        }
        if (width / tile) % 2 != 0 {
            return arg(format!(
                "grid {height}x{width} tile {tile}: tile columns must be even for the polar wrap"
            ));
        }
        Ok(Self {
            height,
            width,
            tile,
        })
    }

    pub fn lat_step(&self) -> f64 {
        180.0 / self.height as f64
    }

    pub fn lon_step(&self) -> f64 {
        360.0 / self.width as f64
    }

    pub fn tiles_h(&self) -> usize {
        self.height / self.tile
    }

    pub fn tiles_w(&self) -> usize {
        self.width / self.tile
    }

    pub fn n_tiles(&self) -> usize {
        self.tiles_h() * self.tiles_w()
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    /// Tiles in row-major order.
    pub fn tiles(&self) -> impl Iterator<Item = TileCoord> + '_ {
        let w = self.tiles_w();
        (0..self.n_tiles()).map(move |i| TileCoord { r: i / w, c: i % w })
    }

    pub fn tile_index(&self, t: TileCoord) -> usize {
        t.r * self.tiles_w() + t.c
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TileCoord {
    pub r: usize,
    pub c: usize,
}

impl TileCoord {
    pub fn new(r: usize, c: usize) -> Self {
        Self { r, c }
    }
}

/// Names of the eight neighbour slots, in the order [`neighbours8`] returns them.
pub const NEIGHBOUR_ORDER: [&str; 8] = [
    "up_left",
    "up",
    "up_right",
    "left",
    "right",
    "down_left",
    "down",
    "down_right",
];

/// Offsets `(dr, dc)` of each neighbour slot inside a 3x3 mosaic centred on the tile.
pub const NEIGHBOUR_OFFSETS: [(usize, usize); 8] = [
    (0, 0),
    (0, 1),
    (0, 2),
    (1, 0),
    (1, 2),
    (2, 0),
    (2, 1),
    (2, 2),
];

/// The 8 neighbours of a tile, ordered `[up_left, up, up_right, left, right,
/// down_left, down, down_right]`.
///
/// Columns wrap around the globe. Across a pole the neighbour is the tile in
/// the same row on the opposite meridian, so "up" of the top row is
/// `(0, c + w/2)` and its left/right slots are mirrored.
pub fn neighbours8(coord: TileCoord, tiles_h: usize, tiles_w: usize) -> Result<[TileCoord; 8]> {
    if tiles_h < 2 {
        return arg(format!("neighbours8 needs at least 2 tile rows, got {tiles_h}"));
    }
    if tiles_w == 0 || tiles_w % 2 != 0 {
        return arg(format!("neighbours8 needs an even tile column count, got {tiles_w}"));
    }
    let TileCoord { r, c } = coord;
    if r >= tiles_h || c >= tiles_w {
        return arg(format!("tile ({r},{c}) outside {tiles_h}x{tiles_w}"));
    }
    let w = tiles_w;
    let left = (c + w - 1) % w;
    let right = (c + 1) % w;
    let half = w / 2;
    // Across a pole the view is mirrored: the left slot lies east of the opposite meridian.
    let [pa, pb, pd] = [(c + 1 + half) % w, (c + half) % w, (c + w - 1 + half) % w];
    let up = if r == 0 {
        [TileCoord::new(0, pa), TileCoord::new(0, pb), TileCoord::new(0, pd)]
    } else {
        [
            TileCoord::new(r - 1, left),
            TileCoord::new(r - 1, c),
            TileCoord::new(r - 1, right),
        ]
    };
    let down = if r == tiles_h - 1 {
        [TileCoord::new(r, pa), TileCoord::new(r, pb), TileCoord::new(r, pd)]
    } else {
        [
            TileCoord::new(r + 1, left),
            TileCoord::new(r + 1, c),
            TileCoord::new(r + 1, right),
        ]
    };
    Ok([
        up[0],
        up[1],
        up[2],
        TileCoord::new(r, left),
        TileCoord::new(r, right),
        down[0],
        down[1],
        down[2],
    ])
}

pub fn tile_of_cell(row: usize, col: usize, spec: &GridSpec) -> Result<TileCoord> {
    if row >= spec.height || col >= spec.width {
        return arg(format!(
            "cell ({row},{col}) outside {}x{} grid",
            spec.height, spec.width
        ));
    }
    Ok(TileCoord::new(row / spec.tile, col / spec.tile))
}

/// Grid cell holding a point. Row 0 starts at lat 90, column 0 at lon -180;
/// intervals are half-open towards the larger index and latitude is clamped at
/// the poles.
pub fn cell_of_latlon(lat: f64, lon: f64, spec: &GridSpec) -> Result<(usize, usize)> {
    if !lat.is_finite() || !lon.is_finite() {
        return arg(format!("non-finite coordinate ({lat}, {lon})"));
    }
    let row = ((90.0 - lat) / spec.lat_step()).floor();
    let row = row.clamp(0.0, (spec.height - 1) as f64) as usize;
    let col = ((lon + 180.0).rem_euclid(360.0) / spec.lon_step()).floor();
    let col = col.clamp(0.0, (spec.width - 1) as f64) as usize;
    Ok((row, col))
}

/// Centre of a cell in degrees `(lat, lon)`.
pub fn cell_center(row: usize, col: usize, spec: &GridSpec) -> (f64, f64) {
    (
        90.0 - (row as f64 + 0.5) * spec.lat_step(),
        -180.0 + (col as f64 + 0.5) * spec.lon_step(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tc(v: &[(usize, usize)]) -> Vec<TileCoord> {
        v.iter().map(|&(r, c)| TileCoord::new(r, c)).collect()
    }

    #[test]
    fn worked_examples() {
        let n = neighbours8(TileCoord::new(3, 5), 8, 16).unwrap();
        assert_eq!(n.to_vec(), tc(&[(2, 4), (2, 5), (2, 6), (3, 4), (3, 6), (4, 4), (4, 5), (4, 6)]));
        let n = neighbours8(TileCoord::new(0, 0), 8, 16).unwrap();
        assert_eq!(n.to_vec(), tc(&[(0, 9), (0, 8), (0, 7), (0, 15), (0, 1), (1, 15), (1, 0), (1, 1)]));
        let n = neighbours8(TileCoord::new(7, 15), 8, 16).unwrap();
        assert_eq!(n.to_vec(), tc(&[(6, 14), (6, 15), (6, 0), (7, 14), (7, 0), (7, 8), (7, 7), (7, 6)]));
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(neighbours8(TileCoord::new(0, 0), 1, 4).is_err());
        assert!(neighbours8(TileCoord::new(0, 0), 4, 5).is_err());
        assert!(neighbours8(TileCoord::new(4, 0), 4, 8).is_err());
        assert!(GridSpec::new(96, 192, 25).is_err());
        assert!(GridSpec::new(96, 72, 24).is_err());
    }

    #[test]
    fn tile_of_cell_examples() {
        let s = GridSpec::new(1152, 2304, 144).unwrap();
        assert_eq!(tile_of_cell(0, 0, &s).unwrap(), TileCoord::new(0, 0));
        assert_eq!(tile_of_cell(143, 143, &s).unwrap(), TileCoord::new(0, 0));
        assert_eq!(tile_of_cell(144, 2303, &s).unwrap(), TileCoord::new(1, 15));
        assert!(tile_of_cell(1152, 0, &s).is_err());
    }

    #[test]
    fn cell_of_latlon_examples() {
        let s = GridSpec::new(1152, 2304, 144).unwrap();
        assert_eq!(cell_of_latlon(90.0, -180.0, &s).unwrap(), (0, 0));
        assert_eq!(cell_of_latlon(0.0, 0.0, &s).unwrap(), (576, 1152));
        assert_eq!(cell_of_latlon(-90.0, 179.999, &s).unwrap(), (1151, 2303));
        assert!(cell_of_latlon(f64::NAN, 0.0, &s).is_err());
    }
}
