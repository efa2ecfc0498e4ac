//! Analytical power / area / latency / energy of a network on crossbar tiles.
//!
//! Every conv/dense layer occupies `ceil(fan_in/R)·ceil(fan_out/C)` tiles.
//! Conv layers are pipelined by duplicating their tiles once per output row, so
//! each layer needs as many sequential VMM steps as it has output columns and
//! the slowest layer sets the latency.
//!
//! Per step, TDM readout converts the 128 columns of a tile through one ADC
//! (`128/f_adc`), with one column's cells active; parallel readout gives every
//! column its own ADC (`1/f_adc`) with the whole tile active.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::crossbar::TileConfig;
use crate::network::{LinearShape, NetworkError, NetworkSpec};

#[derive(Debug, Error)]
pub enum CostError {
    #[error("invalid hardware parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HardwareParams {
    /// mm² per ADC.
    pub adc_area: f64,
    /// W per ADC.
    pub adc_power: f64,
    /// Conversions per second.
    pub adc_rate: f64,
    /// mm² per crossbar cell.
    pub cell_area: f64,
    /// V across an active cell.
    pub read_voltage: f64,
    /// Ω, average device resistance.
    pub r_avg: f64,
    pub tile: TileConfig,
}

impl Default for HardwareParams {
    fn default() -> Self {
        Self {
            adc_area: 3e-3,
            adc_power: 2e-4,
            adc_rate: 5e6,
            cell_area: 1.69e-7,
            read_voltage: 0.3,
            r_avg: 1300.0,
            tile: TileConfig::default(),
        }
    }
}

impl HardwareParams {
    pub fn validate(&self) -> Result<(), CostError> {
        let fields = [
            ("adc_area", self.adc_area),
            ("adc_power", self.adc_power),
            ("adc_rate", self.adc_rate),
            ("cell_area", self.cell_area),
            ("read_voltage", self.read_voltage),
            ("r_avg", self.r_avg),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(CostError::InvalidParameter(format!("{name} = {v} must be positive")));
            }
        }
        if self.tile.tile_rows == 0 || self.tile.tile_cols == 0 {
            return Err(CostError::InvalidParameter("tile dimensions must be positive".into()));
        }
        Ok(())
    }

    fn cells_per_tile(&self) -> f64 {
        (self.tile.tile_rows * self.tile.tile_cols) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReadoutMode {
    /// One ADC per tile, time-multiplexed over its columns.
    Tdm,
    /// One ADC per column.
    Parallelized,
}

impl ReadoutMode {
    pub fn label(self) -> &'static str {
        match self {
            Self::Tdm => "TDM",
            Self::Parallelized => "Parallelized",
        }
    }
}

impl fmt::Display for ReadoutMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ReadoutMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "tdm" => Ok(Self::Tdm),
            "parallel" | "parallelized" => Ok(Self::Parallelized),
            other => Err(format!("unknown readout mode {other:?} (expected tdm or parallel)")),
        }
    }
}

/// Tiles, duplication and pipeline steps of one layer.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LayerCost {
    pub name: String,
    pub tiles: usize,
    pub duplicates: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub mode: ReadoutMode,
    /// W
    pub power: f64,
    /// mm²
    pub area: f64,
    /// ms
    pub latency: f64,
    /// mJ
    pub energy: f64,
    pub tile_count: usize,
    pub layers: Vec<LayerCost>,
    /// Tile count doubled for separate positive/negative columns.
    pub strict_double_column: bool,
}

fn layer_tiles(l: &LinearShape, tile: TileConfig, double_columns: bool) -> usize {
    let cols = if double_columns { 2 * l.fan_out } else { l.fan_out };
    l.fan_in.div_ceil(tile.tile_rows) * cols.div_ceil(tile.tile_cols)
}

/// Tiles needed for a layer list (one column per weight).
pub fn tile_count_layers(layers: &[LinearShape], tile: TileConfig) -> usize {
    layers.iter().map(|l| layer_tiles(l, tile, false)).sum()
}

/// Tiles needed for the network of `spec` on 128×128 tiles.
pub fn tile_count(spec: &NetworkSpec) -> Result<usize, CostError> {
    Ok(tile_count_layers(&spec.linear_layers()?, TileConfig::default()))
}

/// Per-layer `(duplicates, steps)` and the bottleneck step count.
pub fn duplication_plan_layers(layers: &[LinearShape]) -> (Vec<(usize, usize)>, usize) {
    let plan: Vec<(usize, usize)> = layers.iter().map(|l| (l.out_rows.max(1), l.out_cols.max(1))).collect();
    let bottleneck = plan.iter().map(|&(_, s)| s).max().unwrap_or(0);
    (plan, bottleneck)
}

pub fn duplication_plan(spec: &NetworkSpec) -> Result<(Vec<(usize, usize)>, usize), CostError> {
    Ok(duplication_plan_layers(&spec.linear_layers()?))
}

/// Cost of an arbitrary layer list.
pub fn estimate_layers(
    layers: &[LinearShape],
    hw: &HardwareParams,
    mode: ReadoutMode,
    strict_double_column: bool,
) -> Result<CostReport, CostError> {
    hw.validate()?;
    let (plan, steps) = duplication_plan_layers(layers);
    let per_layer: Vec<LayerCost> = layers
        .iter()
        .zip(&plan)
        .map(|(l, &(duplicates, steps))| LayerCost {
            name: l.name.to_string(),
            tiles: layer_tiles(l, hw.tile, strict_double_column),
            duplicates,
            steps,
        })
        .collect();
    let tiles: usize = per_layer.iter().map(|l| l.tiles).sum();
    let cols = hw.tile.tile_cols as f64;
    let (adcs_per_tile, t_vmm, active_cells) = match mode {
        ReadoutMode::Tdm => (1.0, cols / hw.adc_rate, hw.tile.tile_rows as f64),
        ReadoutMode::Parallelized => (cols, 1.0 / hw.adc_rate, hw.cells_per_tile()),
    };
    let tiles_f = tiles as f64;
    let area = tiles_f * (hw.cells_per_tile() * hw.cell_area + adcs_per_tile * hw.adc_area);
    let power = tiles_f * adcs_per_tile * hw.adc_power + active_cells * hw.read_voltage.powi(2) / hw.r_avg;
    let latency_s = steps as f64 * t_vmm;
    Ok(CostReport {
        mode,
        power,
        area,
        latency: latency_s * 1e3,
        energy: power * latency_s * 1e3,
        tile_count: tiles,
        layers: per_layer,
        strict_double_column,
    })
}

/// Cost of the network of `spec`.
pub fn estimate(spec: &NetworkSpec, hw: &HardwareParams, mode: ReadoutMode) -> Result<CostReport, CostError> {
    estimate_layers(&spec.linear_layers()?, hw, mode, false)
}

pub const COST_CSV_HEADER: &str = "mode,power_w,area_mm2,latency_ms,energy_mj,tile_count,duplicates";

/// Caveat appended to every report.
pub const COST_FOOTNOTE: &str = "note: area counts each layer's tile set once, \
while the latency assumes conv tiles duplicated once per output row";

/// `cost_report.csv` text: one row per report, then `#`-prefixed notes.
pub fn cost_csv(reports: &[CostReport]) -> String {
    let mut out = format!("{COST_CSV_HEADER}\n");
    for r in reports {
        let dups: Vec<String> = r
            .layers
            .iter()
            .map(|l| format!("{}={}", l.name, l.duplicates))
            .collect();
        let _ = writeln!(
            out,
            "{},{:.6e},{:.6e},{:.6e},{:.6e},{},{}",
            r.mode,
            r.power,
            r.area,
            r.latency,
            r.energy,
            r.tile_count,
            dups.join(";")
        );
    }
    let _ = writeln!(out, "# {COST_FOOTNOTE}");
    if reports.iter().any(|r| r.strict_double_column) {
        let _ = writeln!(
            out,
            "# strict double-column variant: tile count doubles fan-out columns"
        );
    }
    out
}

/// Aligned human-readable table.
pub fn cost_table(reports: &[CostReport]) -> String {
    let mut out = format!(
        "{:<14}{:>12}{:>14}{:>14}{:>14}{:>8}\n",
        "Mode", "Power (W)", "Area (mm^2)", "Latency (ms)", "Energy (mJ)", "Tiles"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<14}{:>12.4}{:>14.4}{:>14.4}{:>14.4}{:>8}",
            r.mode.label(),
            r.power,
            r.area,
            r.latency,
            r.energy,
            r.tile_count
        );
    }
    let _ = writeln!(out, "{COST_FOOTNOTE}");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_spec() -> NetworkSpec {
        NetworkSpec::for_window(22, 30).unwrap()
    }

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    fn fc(fan_in: usize, fan_out: usize) -> LinearShape {
        LinearShape {
            name: "fc",
            fan_in,
            fan_out,
            out_rows: 1,
            out_cols: 1,
        }
    }

    #[test]
    fn tile_counts() {
        let spec = paper_spec();
        let per: Vec<usize> = spec
            .linear_layers()
            .unwrap()
            .iter()
            .map(|l| layer_tiles(l, TileConfig::default(), false))
            .collect();
        assert_eq!(per, vec![5, 2, 3, 10, 2]);
        assert_eq!(tile_count(&spec).unwrap(), 22);
        assert_eq!(tile_count_layers(&[fc(128, 128)], TileConfig::default()), 1);
        assert_eq!(tile_count_layers(&[fc(640, 256)], TileConfig::default()), 10);
    }

    #[test]
    fn duplication() {
        let (plan, bottleneck) = duplication_plan(&paper_spec()).unwrap();
        assert_eq!(plan, vec![(28, 55), (12, 25), (4, 10), (1, 1), (1, 1)]);
        assert_eq!(bottleneck, 55);
        let (plan, b) = duplication_plan_layers(&[fc(10, 4), fc(4, 2)]);
        assert_eq!((plan, b), (vec![(1, 1), (1, 1)], 1));
        let flat_conv = LinearShape {
            name: "c",
            fan_in: 9,
            fan_out: 4,
            out_rows: 1,
            out_cols: 7,
        };
        assert_eq!(duplication_plan_layers(&[flat_conv]).0, vec![(1, 7)]);
    }

    #[test]
    fn reproduces_reference_rows() {
        let hw = HardwareParams::default();
        let tdm = estimate(&paper_spec(), &hw, ReadoutMode::Tdm).unwrap();
        assert!(rel(tdm.power, 0.0133) < 0.01, "{}", tdm.power);
        assert!(rel(tdm.area, 0.1269) < 0.01);
        assert!(rel(tdm.latency, 1.408) < 0.01);
        assert!(rel(tdm.energy, 0.0187) < 0.01);
        let par = estimate(&paper_spec(), &hw, ReadoutMode::Parallelized).unwrap();
        assert!(rel(par.power, 1.7) < 0.01);
        assert!(rel(par.area, 8.5089) < 0.01);
        assert!(rel(par.latency, 0.011) < 0.01);
        assert!(rel(par.energy, 0.0187) < 0.01);
    }

    #[test]
    fn single_tile_substitution() {
        let r = estimate_layers(&[fc(128, 128)], &HardwareParams::default(), ReadoutMode::Tdm, false).unwrap();
        assert!(rel(r.area, 5.7689e-3) < 1e-4);
        assert!(rel(r.latency, 25.6e-3) < 1e-9);
        assert!(rel(r.power, 9.0615e-3) < 1e-4);
        let cells = 128.0 * 128.0;
        assert!(rel(r.area, cells * 1.69e-7 + 3e-3) < 1e-12);
        assert!(rel(r.power, 2e-4 + 128.0 * 0.3 * 0.3 / 1300.0) < 1e-12);
    }

    #[test]
    fn strict_variant_doubles_columns() {
        let layers = paper_spec().linear_layers().unwrap();
        let r = estimate_layers(&layers, &HardwareParams::default(), ReadoutMode::Tdm, true).unwrap();
        assert_eq!(r.tile_count, 5 + 2 + 3 + 20 + 2);
        assert!(cost_csv(&[r]).contains("strict double-column"));
    }

    #[test]
    fn csv_and_table() {
        let hw = HardwareParams::default();
        let reports: Vec<CostReport> = [ReadoutMode::Tdm, ReadoutMode::Parallelized]
            .iter()
            .map(|&m| estimate(&paper_spec(), &hw, m).unwrap())
            .collect();
        let csv = cost_csv(&reports);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], COST_CSV_HEADER);
        assert!(lines[1].starts_with("TDM,"));
        assert!(lines[2].starts_with("Parallelized,"));
        assert!(lines[3].starts_with("# note"));
        assert!(cost_table(&reports).contains("Parallelized"));
        assert_eq!("parallel".parse::<ReadoutMode>().unwrap(), ReadoutMode::Parallelized);
        assert!("fast".parse::<ReadoutMode>().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mode_relations(n in 1usize..40, t in 22usize..60) {
                let spec = NetworkSpec::for_window(n, t).unwrap();
                let hw = HardwareParams::default();
                let a = estimate(&spec, &hw, ReadoutMode::Tdm).unwrap();
                let b = estimate(&spec, &hw, ReadoutMode::Parallelized).unwrap();
                prop_assert!(rel(a.energy, b.energy) < 1e-6);
                prop_assert!(((b.area - a.area) - a.tile_count as f64 * 127.0 * hw.adc_area).abs() < 1e-12 * b.area);
                prop_assert!(rel(a.latency / b.latency, 128.0) < 1e-12);
                prop_assert!(rel(a.energy, a.power * a.latency) < 1e-9);
            }

            #[test]
            fn monotone_in_channels_and_window(n in 1usize..40, t in 22usize..60) {
                let hw = HardwareParams::default();
                let base = estimate(&NetworkSpec::for_window(n, t).unwrap(), &hw, ReadoutMode::Tdm).unwrap();
                let more_n = estimate(&NetworkSpec::for_window(n + 1, t).unwrap(), &hw, ReadoutMode::Tdm).unwrap();
                let more_t = estimate(&NetworkSpec::for_window(n, t + 1).unwrap(), &hw, ReadoutMode::Tdm).unwrap();
                prop_assert!(more_n.tile_count >= base.tile_count && more_n.area >= base.area);
                prop_assert!(more_t.tile_count >= base.tile_count && more_t.area >= base.area);
            }
        }
    }
}
