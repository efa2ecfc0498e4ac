//! Crossbar mapping and analog vector-matrix multiplication.
//!
//! A logical weight matrix has one row per layer input and one column per layer
//! output. It is split into fixed-size tiles; each cell of a tile owns its own
//! sampled device. Inputs are encoded as read voltages, column currents are
//! accumulated per tile and rescaled digitally by the layer factor `K`.
//!
//! Weight-to-conductance maps, with `Δ = g_on − g_off` and `w_max = max|W|`:
//!
//! * double column: `g_pos = g_off + (w⁺/w_max)·Δ`, `g_neg = g_off + (w⁻/w_max)·Δ`,
//!   `K = w_max/Δ`;
//! * single column: cells are centred on the mirror conductance `c = −g_m`,
//!   `g = c + (w/w_max)·h` with `h = min(g_on − c, c − g_off)`, the effective
//!   conductance is `g + g_m`, and `K = w_max/h`.
//!
//! Both maps invert exactly under ideal devices.

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::device::{
    self, build_states, cell_rng, sample_device, DeviceError, DeviceInstance, DeviceParameters, StateCount,
};
use crate::tensor::Matrix;

/// Maps a weight to its (positive, negative) conductance pair; the single
/// column scheme leaves the second slot unused.
type TargetFn = Box<dyn Fn(f64) -> (f64, f64) + Sync>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossbarError {
    #[error("weight matrix contains a non-finite value at ({row}, {col})")]
    NonFiniteWeight { row: usize, col: usize },
    #[error("weight matrix must be at least 1x1")]
    EmptyMatrix,
    #[error("input length {got} does not match crossbar rows {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid tile configuration {0}x{1}")]
    InvalidTile(usize, usize),
    #[error(transparent)]
    Device(#[from] DeviceError),
}

/// How signed weights are represented in conductance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightScheme {
    /// Separate positive and negative crossbars; output is the current difference.
    DoubleColumn,
    /// One crossbar whose cells are offset by a current mirror.
    SingleColumn,
}

impl std::str::FromStr for WeightScheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "double" | "double-column" => Ok(WeightScheme::DoubleColumn),
            "single" | "single-column" => Ok(WeightScheme::SingleColumn),
            other => Err(format!("unknown weight scheme {other:?} (expected double or single)")),
        }
    }
}

impl std::fmt::Display for WeightScheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            WeightScheme::DoubleColumn => "double",
            WeightScheme::SingleColumn => "single",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TileConfig {
    pub tile_rows: usize,
    pub tile_cols: usize,
}

impl Default for TileConfig {
    fn default() -> Self {
        Self {
            tile_rows: 128,
            tile_cols: 128,
        }
    }
}

impl TileConfig {
    pub fn square(n: usize) -> Self {
        Self {
            tile_rows: n,
            tile_cols: n,
        }
    }

    pub fn validate(&self) -> Result<(), CrossbarError> {
        if self.tile_rows == 0 || self.tile_cols == 0 {
            return Err(CrossbarError::InvalidTile(self.tile_rows, self.tile_cols));
        }
        Ok(())
    }
}

/// Tile grid needed for a `rows × cols` matrix: `(ceil(rows/tr), ceil(cols/tc))`.
pub fn partition(rows: usize, cols: usize, tile: TileConfig) -> (usize, usize) {
    (rows.div_ceil(tile.tile_rows), cols.div_ceil(tile.tile_cols))
}

/// One programmed crossbar cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub target: f64,
    pub programmed: f64,
    pub r_on: f64,
    pub r_off: f64,
}

/// A physical tile covering `rows × cols` logical cells starting at `(row0, col0)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tile {
    pub row0: usize,
    pub col0: usize,
    pub rows: usize,
    pub cols: usize,
    /// Row-major cells; for the single-column scheme this is the only array.
    pub pos: Vec<Cell>,
    /// Negative-weight array, same shape as `pos`; empty for single column.
    pub neg: Vec<Cell>,
}

/// A weight matrix realised as tiled crossbar conductances.
#[derive(Debug, Clone, PartialEq)]
pub struct MappedLayer {
    pub logical_rows: usize,
    pub logical_cols: usize,
    pub scheme: WeightScheme,
    pub k_scale: f64,
    /// Mirror offset conductance (single column only).
    pub g_m: Option<f64>,
    pub read_voltage: f64,
    pub tile: TileConfig,
    pub n_states: StateCount,
    /// Tile grid dimensions.
    pub grid: (usize, usize),
    /// Tiles in row-major grid order.
    pub tiles: Vec<Tile>,
}

pub const DEFAULT_READ_VOLTAGE: f64 = 0.3;

/// Maps `weights` (fan-in × fan-out) onto crossbar tiles. Each logical cell samples
/// its device from stream `2·(row·cols + col) + {0 pos, 1 neg}` of `seed`.
pub fn map_weights(
    weights: &Matrix,
    scheme: WeightScheme,
    params: &DeviceParameters,
    tile: TileConfig,
    seed: u64,
) -> Result<MappedLayer, CrossbarError> {
    map_weights_with_voltage(weights, scheme, params, tile, seed, DEFAULT_READ_VOLTAGE)
}

pub fn map_weights_with_voltage(
    weights: &Matrix,
    scheme: WeightScheme,
    params: &DeviceParameters,
    tile: TileConfig,
    seed: u64,
    read_voltage: f64,
) -> Result<MappedLayer, CrossbarError> {
    params.validate()?;
    tile.validate()?;
    if weights.rows == 0 || weights.cols == 0 {
        return Err(CrossbarError::EmptyMatrix);
    }
    if let Some(i) = weights.data.iter().position(|w| !w.is_finite()) {
        return Err(CrossbarError::NonFiniteWeight {
            row: i / weights.cols,
            col: i % weights.cols,
        });
    }

    let g_on = params.g_on();
    let g_off = params.g_off();
    let w_max = weights.max_abs();
    let (k_scale, g_m, targets): (f64, Option<f64>, TargetFn) = match scheme {
        WeightScheme::DoubleColumn => {
            let span = g_on - g_off;
            let k = if w_max == 0.0 { 1.0 } else { w_max / span };
            let to_g = move |w: f64| {
                if w_max == 0.0 {
                    return (g_off, g_off);
                }
                let frac = w.abs() / w_max;
                let g = g_off + frac * span;
                if w >= 0.0 {
                    (g, g_off)
                } else {
                    (g_off, g)
                }
            };
            (k, None, Box::new(to_g))
        }
        WeightScheme::SingleColumn => {
            let g_m = device::mirror_offset(params.r_on_mean, params.r_off_mean)?;
            let centre = -g_m;
            let half = (g_on - centre).min(centre - g_off);
            let k = if w_max == 0.0 { 1.0 } else { w_max / half };
            let to_g = move |w: f64| {
                if w_max == 0.0 {
                    return (centre, 0.0);
                }
                (centre + (w / w_max) * half, 0.0)
            };
            (k, Some(g_m), Box::new(to_g))
        }
    };

    let (grid_rows, grid_cols) = partition(weights.rows, weights.cols, tile);
    let cols = weights.cols;
    let program = |index: u64, target: f64| -> Cell {
        let dev = sample_device(params, &mut cell_rng(seed, index));
        Cell {
            target,
            programmed: dev.program(target),
            r_on: dev.r_on,
            r_off: dev.r_off,
        }
    };

    let tiles: Vec<Tile> = (0..grid_rows * grid_cols)
        .into_par_iter()
        .map(|t| {
            let (tr, tc) = (t / grid_cols, t % grid_cols);
            let row0 = tr * tile.tile_rows;
            let col0 = tc * tile.tile_cols;
            let rows = tile.tile_rows.min(weights.rows - row0);
            let tcols = tile.tile_cols.min(cols - col0);
            let mut pos = Vec::with_capacity(rows * tcols);
            let mut neg = Vec::new();
            if scheme == WeightScheme::DoubleColumn {
                neg.reserve(rows * tcols);
            }
            for r in 0..rows {
                for c in 0..tcols {
                    let (i, j) = (row0 + r, col0 + c);
                    let idx = 2 * (i * cols + j) as u64;
                    let (gp, gn) = targets(weights.get(i, j));
                    pos.push(program(idx, gp));
                    if scheme == WeightScheme::DoubleColumn {
                        neg.push(program(idx + 1, gn));
                    }
                }
            }
            Tile {
                row0,
                col0,
                rows,
                cols: tcols,
                pos,
                neg,
            }
        })
        .collect();

    Ok(MappedLayer {
        logical_rows: weights.rows,
        logical_cols: weights.cols,
        scheme,
        k_scale,
        g_m,
        read_voltage,
        tile,
        n_states: params.n_states,
        grid: (grid_rows, grid_cols),
        tiles,
    })
}

impl MappedLayer {
    /// Total number of physical cells (both arrays for double column).
    pub fn cell_count(&self) -> usize {
        self.tiles.iter().map(|t| t.pos.len() + t.neg.len()).sum()
    }

    /// Vector-matrix product through the programmed conductances.
    pub fn vmm(&self, x: &[f64]) -> Result<Vec<f64>, CrossbarError> {
        let mut out = vec![0.0; self.logical_cols];
        self.vmm_into(x, &mut out)?;
        Ok(out)
    }

    /// Like [`vmm`](Self::vmm) but writes into `out` (overwritten).
    pub fn vmm_into(&self, x: &[f64], out: &mut [f64]) -> Result<(), CrossbarError> {
        if x.len() != self.logical_rows {
            return Err(CrossbarError::DimensionMismatch {
                expected: self.logical_rows,
                got: x.len(),
            });
        }
        if out.len() != self.logical_cols {
            return Err(CrossbarError::DimensionMismatch {
                expected: self.logical_cols,
                got: out.len(),
            });
        }
        out.fill(0.0);
        let x_max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if x_max == 0.0 {
            return Ok(());
        }
        let to_volts = self.read_voltage / x_max;
        let rescale = self.k_scale * (x_max / self.read_voltage);
        let g_m = self.g_m.unwrap_or(0.0);
        let mut currents = vec![0.0; self.tile.tile_cols];
        for tile in &self.tiles {
            let currents = &mut currents[..tile.cols];
            currents.fill(0.0);
            for r in 0..tile.rows {
                let v = x[tile.row0 + r] * to_volts;
                if v == 0.0 {
                    continue;
                }
                let pos = &tile.pos[r * tile.cols..(r + 1) * tile.cols];
                match self.scheme {
                    WeightScheme::DoubleColumn => {
                        let neg = &tile.neg[r * tile.cols..(r + 1) * tile.cols];
                        for ((i, p), n) in currents.iter_mut().zip(pos).zip(neg) {
                            *i += (p.programmed - n.programmed) * v;
                        }
                    }
                    WeightScheme::SingleColumn => {
                        for (i, p) in currents.iter_mut().zip(pos) {
                            *i += (p.programmed + g_m) * v;
                        }
                    }
                }
            }
            for (c, i) in currents.iter().enumerate() {
                out[tile.col0 + c] += rescale * i;
            }
        }
        Ok(())
    }

    /// Re-derives the device for one cell of `tile`, for invariant checks.
    pub fn cell_device(&self, cell: &Cell) -> DeviceInstance {
        let mut d = DeviceInstance {
            r_on: cell.r_on,
            r_off: cell.r_off,
            states: Vec::new(),
        };
        d.states = build_states(&d, self.n_states);
        d
    }

    /// Dumps every cell as `array,row,col,g_target,g_programmed`.
    pub fn write_conductance_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "array,row,col,g_target,g_programmed")?;
        for tile in &self.tiles {
            for (name, cells) in [("pos", &tile.pos), ("neg", &tile.neg)] {
                for (k, cell) in cells.iter().enumerate() {
                    let (r, c) = (tile.row0 + k / tile.cols, tile.col0 + k % tile.cols);
                    writeln!(w, "{name},{r},{c},{:e},{:e}", cell.target, cell.programmed)?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ideal() -> DeviceParameters {
        DeviceParameters::default()
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_vec(
            rows,
            cols,
            (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
    }

    /// Direct `Σ_i W_ij x_i` and the matching magnitude scale `Σ_i |W_ij x_i|`.
    fn reference(w: &Matrix, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut y = vec![0.0; w.cols];
        let mut s = vec![0.0; w.cols];
        for i in 0..w.rows {
            for j in 0..w.cols {
                y[j] += w.get(i, j) * x[i];
                s[j] += (w.get(i, j) * x[i]).abs();
            }
        }
        (y, s)
    }

    #[test]
    fn single_weight_double_column() {
        let w = Matrix::from_vec(1, 1, vec![1.0]);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        let cell_p = m.tiles[0].pos[0].programmed;
        let cell_n = m.tiles[0].neg[0].programmed;
        assert_eq!(cell_p, 1.0e-2);
        assert_eq!(cell_n, 4.0e-4);
        assert!((m.k_scale * (cell_p - cell_n) - 1.0).abs() < 1e-12);

        let w = Matrix::from_vec(1, 1, vec![-1.0]);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        assert_eq!(m.tiles[0].pos[0].programmed, 4.0e-4);
        assert_eq!(m.tiles[0].neg[0].programmed, 1.0e-2);
        assert!((m.vmm(&[1.0]).unwrap()[0] + 1.0).abs() < 1e-12);
    }

    #[test]
    fn recovered_weights_invert_map() {
        let w = Matrix::from_vec(2, 1, vec![0.5, -0.25]);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        let t = &m.tiles[0];
        for (r, expect) in [0.5, -0.25].into_iter().enumerate() {
            let rec = m.k_scale * (t.pos[r].programmed - t.neg[r].programmed);
            assert!((rec - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_vmm() {
        let w = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        for scheme in [WeightScheme::DoubleColumn, WeightScheme::SingleColumn] {
            let m = map_weights(&w, scheme, &ideal(), TileConfig::default(), 0).unwrap();
            let y = m.vmm(&[3.0, -4.0]).unwrap();
            assert!(
                (y[0] - 3.0).abs() < 1e-9 && (y[1] + 4.0).abs() < 1e-9,
                "{scheme}: {y:?}"
            );
        }
    }

    #[test]
    fn zero_input_and_zero_weights() {
        let w = Matrix::zeros(3, 2);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        assert_eq!(m.k_scale, 1.0);
        assert!(m.tiles[0].pos.iter().all(|c| c.programmed == 4.0e-4));
        assert_eq!(m.vmm(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        let w = Matrix::from_vec(1, 1, vec![2.0]);
        let m = map_weights(&w, WeightScheme::SingleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        assert_eq!(m.vmm(&[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn errors() {
        let w = Matrix::from_vec(1, 2, vec![1.0, f64::NAN]);
        assert_eq!(
            map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0),
            Err(CrossbarError::NonFiniteWeight { row: 0, col: 1 })
        );
        let w = Matrix::from_vec(2, 1, vec![1.0, 2.0]);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        assert!(matches!(
            m.vmm(&[1.0]),
            Err(CrossbarError::DimensionMismatch { expected: 2, got: 1 })
        ));
        assert!(map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::square(0), 0).is_err());
    }

    #[test]
    fn partition_examples() {
        let t = TileConfig::default();
        assert_eq!(partition(550, 16, t), (5, 1));
        assert_eq!(partition(128, 128, t), (1, 1));
        assert_eq!(partition(640, 256, t), (5, 2));
        let w = Matrix::zeros(550, 16);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), t, 0).unwrap();
        assert_eq!(m.grid, (5, 1));
        assert_eq!(m.tiles.len(), 5);
        assert_eq!(m.tiles[4].rows, 550 - 4 * 128);
    }

    #[test]
    fn random_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_matrix(&mut rng, 4, 3);
        let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        let y = m.vmm(&x).unwrap();
        let (want, scale) = reference(&w, &x);
        for j in 0..3 {
            assert!((y[j] - want[j]).abs() <= 1e-9 * scale[j], "{} vs {}", y[j], want[j]);
        }
    }

    #[test]
    fn two_state_error_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = ideal().with_variability(0.0, StateCount::Discrete(2));
        for _ in 0..50 {
            let w = random_matrix(&mut rng, 4, 3);
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let m = map_weights(&w, WeightScheme::DoubleColumn, &p, TileConfig::default(), 0).unwrap();
            let y = m.vmm(&x).unwrap();
            let (want, _) = reference(&w, &x);
            let x_sum: f64 = x.iter().map(|v| v.abs()).sum();
            let bound = m.k_scale * x_sum * (p.g_on() - p.g_off()) / 2.0;
            for j in 0..3 {
                assert!((y[j] - want[j]).abs() <= bound * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn programmed_conductances_are_states() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = random_matrix(&mut rng, 20, 10);
        for n_states in [StateCount::Discrete(2), StateCount::Discrete(5), StateCount::Continuous] {
            let p = ideal().with_variability(300.0, n_states);
            for scheme in [WeightScheme::DoubleColumn, WeightScheme::SingleColumn] {
                let m = map_weights(&w, scheme, &p, TileConfig::square(8), 17).unwrap();
                assert_eq!(m.grid, (3, 2));
                for t in &m.tiles {
                    if scheme == WeightScheme::DoubleColumn {
                        assert_eq!(t.pos.len(), t.neg.len());
                    } else {
                        assert!(t.neg.is_empty());
                    }
                    for cell in t.pos.iter().chain(&t.neg) {
                        let d = m.cell_device(cell);
                        if d.states.is_empty() {
                            let (lo, hi) = d.range();
                            assert!(cell.programmed >= lo && cell.programmed <= hi);
                        } else {
                            assert!(d.states.contains(&cell.programmed));
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mapping_is_deterministic_and_seed_sensitive() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let w = random_matrix(&mut rng, 30, 7);
        let p = ideal().with_variability(200.0, StateCount::Discrete(4));
        let a = map_weights(&w, WeightScheme::DoubleColumn, &p, TileConfig::square(16), 5).unwrap();
        let b = map_weights(&w, WeightScheme::DoubleColumn, &p, TileConfig::square(16), 5).unwrap();
        let c = map_weights(&w, WeightScheme::DoubleColumn, &p, TileConfig::square(16), 6).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn conductance_export() {
        let w = Matrix::from_vec(2, 2, vec![1.0, -0.5, 0.25, 0.0]);
        let m = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), 0).unwrap();
        let mut buf = Vec::new();
        m.write_conductance_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 8);
        assert!(text.starts_with("array,row,col,g_target,g_programmed\npos,0,0,1e-2,1e-2"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn ideal_schemes_agree(seed in 0u64..10_000, rows in 1usize..40, cols in 1usize..20) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, rows, cols);
            let x: Vec<f64> = (0..rows).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (want, scale) = reference(&w, &x);
            let d = map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::default(), seed).unwrap().vmm(&x).unwrap();
            let s = map_weights(&w, WeightScheme::SingleColumn, &ideal(), TileConfig::default(), seed).unwrap().vmm(&x).unwrap();
            for j in 0..cols {
                prop_assert!((d[j] - want[j]).abs() <= 1e-9 * scale[j].max(1e-300));
                prop_assert!((s[j] - d[j]).abs() <= 1e-6 * scale[j].max(1e-300));
            }
        }

        #[test]
        fn tiling_invariance(seed in 0u64..10_000, rows in 1usize..300, cols in 1usize..150) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = random_matrix(&mut rng, rows, cols);
            let x: Vec<f64> = (0..rows).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, scale) = reference(&w, &x);
            let outs: Vec<Vec<f64>> = [16, 64, 128]
                .into_iter()
                .map(|t| map_weights(&w, WeightScheme::DoubleColumn, &ideal(), TileConfig::square(t), 0).unwrap().vmm(&x).unwrap())
                .collect();
            for j in 0..cols {
                prop_assert!((outs[0][j] - outs[2][j]).abs() <= 1e-12 * scale[j].max(1e-300));
                prop_assert!((outs[1][j] - outs[2][j]).abs() <= 1e-12 * scale[j].max(1e-300));
            }
        }
    }
}
