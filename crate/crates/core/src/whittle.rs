//! Decoupled single-device problem and Whittle index tables.
//!
//! Each monitoring device is treated on its own: it may transmit in any slot
//! by paying an extra cost `C`, and pays `w * x` per slot of AoII `x`. Under a
//! threshold policy (transmit iff `x >= x0`) the AoII chain has a closed-form
//! stationary law, which gives the average cost `f(x0, C)` in closed form.
//! The Whittle index at `x` is the cost `C` at which thresholds `x` and `x+1`
//! are equally good.

use std::ops::RangeInclusive;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ProcessModel;
use crate::error::{Error, Result};

/// Tail mass above which a truncated stationary law is rejected.
pub const TRUNCATION_TOL: f64 = 1e-9;

pub const TABLE_FORMAT_VERSION: u32 = 1;

/// Single-device MDP parameters: reset probability when transmitting (or at
/// `x = 0`) `p`, reset probability when idle at `x > 0` `q`, AoII weight `w`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubProblem {
    pub p: f64,
    pub q: f64,
    pub w: f64,
}

impl SubProblem {
    pub fn new(p: f64, q: f64, w: f64) -> Self {
        Self { p, q, w }
    }

    pub fn from_process(model: &ProcessModel) -> Self {
        Self::new(model.self_prob, model.cross_prob(), model.weight)
    }

    fn mu0(&self, x0: u32) -> f64 {
        let (p, q) = (self.p, self.q);
        let decay = (1.0 - q).powi(x0 as i32 - 1);
        1.0 / (1.0 + (1.0 - p) / q - (1.0 - p) * (1.0 / q - 1.0 / p) * decay)
    }
}

/// Transmit iff `x >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ThresholdPolicy {
    pub threshold: u32,
}

impl ThresholdPolicy {
    pub fn new(threshold: u32) -> Self {
        assert!(threshold >= 1, "threshold must be >= 1");
        Self { threshold }
    }

    pub fn transmits(&self, x: u64) -> bool {
        x >= u64::from(self.threshold)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    /// `μ_x` for `x = 0..=x_max`.
    pub probs: Vec<f64>,
    /// Mass beyond `x_max`.
    pub tail: f64,
}

/// Stationary AoII law under threshold `x0`, truncated at `x_max`.
pub fn stationary_distribution(sp: &SubProblem, x0: u32, x_max: usize) -> Result<StationaryDistribution> {
    assert!(x0 >= 1, "threshold must be >= 1");
    let tail = mass_beyond(sp, x0, x_max);
    if tail > TRUNCATION_TOL {
        return Err(Error::Truncation { x_max, tail });
    }
    Ok(StationaryDistribution {
        probs: stationary_probs(sp, x0, x_max),
        tail,
    })
}

fn stationary_probs(sp: &SubProblem, x0: u32, x_max: usize) -> Vec<f64> {
    let (p, q) = (sp.p, sp.q);
    let mu0 = sp.mu0(x0);
    let x0 = x0 as usize;
    let mut probs = Vec::with_capacity(x_max + 1);
    probs.push(mu0);
    let mut mu = mu0;
    for x in 1..=x_max {
        // μ_1 = (1-p) μ_0, then decay by (1-q) up to x0 and by (1-p) above it
        mu *= if x == 1 || x > x0 { 1.0 - p } else { 1.0 - q };
        probs.push(mu);
    }
    probs
}

/// `Σ_{x > x_max} μ_x`, closed form.
fn mass_beyond(sp: &SubProblem, x0: u32, x_max: usize) -> f64 {
    let (p, q) = (sp.p, sp.q);
    let mu0 = sp.mu0(x0);
    let at_threshold = (1.0 - q).powi(x0 as i32 - 1) * mu0;
    if x_max >= x0 as usize {
        at_threshold * (1.0 - p).powi((x_max - x0 as usize + 2) as i32) / p
    } else {
        let below = (1.0 - p) * mu0 * ((1.0 - q).powi(x_max as i32) - (1.0 - q).powi(x0 as i32)) / q;
        below + at_threshold * (1.0 - p).powi(2) / p
    }
}

/// `Σ_{x >= x0} μ_x` under threshold `x0`: the long-run fraction of slots
/// spent transmitting.
pub fn tail_mass(sp: &SubProblem, x0: u32) -> f64 {
    let (p, q) = (sp.p, sp.q);
    let beta4 = 1.0 + (1.0 - p) / q;
    let beta5 = (1.0 - p) * (1.0 / q - 1.0 / p);
    (1.0 - p) / (p * (beta4 / (1.0 - q).powi(x0 as i32 - 1) - beta5))
}

/// Closed-form average cost `f(x0, C)` of threshold `x0` with per-transmission
/// cost `c`.
pub fn average_cost(sp: &SubProblem, x0: u32, c: f64) -> f64 {
    let SubProblem { p, q, w } = *sp;
    let beta1 = w * (1.0 - p) / (q * q);
    let beta2 = w * (1.0 - p).powi(2) / (p * p * (1.0 - q)) - w * (1.0 - p) / (q * q)
        + (1.0 - p) / (p * (1.0 - q)) * c;
    let beta3 = w * (1.0 - p) / (1.0 - q) * (1.0 / p - 1.0 / q);
    let beta4 = 1.0 + (1.0 - p) / q;
    let beta5 = (1.0 - p) * (1.0 / q - 1.0 / p);
    let x0f = f64::from(x0);
    (beta1 + (beta2 + beta3 * x0f) * (1.0 - q).powi(x0 as i32))
        / (beta4 - beta5 * (1.0 - q).powi(x0 as i32 - 1))
}

/// Average cost by summing `(w x + C 1[x >= x0]) μ_x` over the stationary law,
/// carried far enough that the omitted tail is below `1e-18`.
pub fn average_cost_by_summation(sp: &SubProblem, x0: u32, c: f64) -> f64 {
    let extra = ((1e-18f64).ln() / (1.0 - sp.p).ln()).ceil() as usize + 2;
    let x_max = x0 as usize + extra;
    let probs = stationary_probs(sp, x0, x_max);
    probs
        .iter()
        .enumerate()
        .map(|(x, mu)| {
            let transmit = if x >= x0 as usize { c } else { 0.0 };
            (sp.w * x as f64 + transmit) * mu
        })
        .sum()
}

/// `argmin_{x0 in 1..=cap} f(x0, c)`, ties toward the smaller threshold. An
/// argmin at the cap means the search range was too small.
pub fn optimal_threshold(sp: &SubProblem, c: f64, cap: u32) -> Result<u32> {
    let mut best = (1, average_cost(sp, 1, c));
    for x0 in 2..=cap {
        let f = average_cost(sp, x0, c);
        if f < best.1 {
            best = (x0, f);
        }
    }
    if best.0 == cap {
        return Err(Error::ThresholdCap { cap });
    }
    Ok(best.0)
}

/// Exhaustive-search grid `{c_low, c_low + delta_c, ..., c_high}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexGrid {
    pub delta_c: f64,
    pub c_low: f64,
    pub c_high: f64,
    /// When no crossing exists below `c_high`, record `c_high` instead of
    /// failing.
    #[serde(default = "default_saturate")]
    pub saturate: bool,
}

fn default_saturate() -> bool {
    true
}

impl Default for IndexGrid {
    fn default() -> Self {
        Self {
            delta_c: 0.1,
            c_low: 0.1,
            c_high: 4000.0,
            saturate: true,
        }
    }
}

impl IndexGrid {
    pub fn point(&self, k: usize) -> f64 {
        self.c_low + k as f64 * self.delta_c
    }

    pub fn last_point(&self) -> usize {
        ((self.c_high - self.c_low) / self.delta_c + 1e-9).floor() as usize
    }

    pub fn check(&self) -> Result<()> {
        if !(self.delta_c > 0.0 && self.c_low < self.c_high) {
            return Err(Error::InvalidConfig(format!(
                "index grid needs delta_c > 0 and c_low < c_high, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// First grid point at which idling at `x` is at least as good as
/// transmitting there, i.e. `f(x+1, C) - f(x, C) <= 0`. `I(0) = 0`.
pub fn whittle_index(sp: &SubProblem, x: u64, grid: &IndexGrid) -> Result<f64> {
    grid.check()?;
    if x == 0 {
        return Ok(0.0);
    }
    let k = crossing_from(sp, x, grid, 0)?;
    Ok(grid.point(k))
}

fn crossing_from(sp: &SubProblem, x: u64, grid: &IndexGrid, start: usize) -> Result<usize> {
    let x0 = u32::try_from(x).expect("AoII too large for index search");
    for k in start..=grid.last_point() {
        let c = grid.point(k);
        if average_cost(sp, x0 + 1, c) - average_cost(sp, x0, c) <= 0.0 {
            return Ok(k);
        }
    }
    Err(Error::IndexOutOfSearchRange {
        x,
        low: grid.c_low,
        high: grid.c_high,
    })
}

/// Indices for `x = 0..=x_max`, searching each `x + 1` from the crossing of
/// `x`.
pub fn index_column(sp: &SubProblem, x_max: u64, grid: &IndexGrid) -> Result<WhittleColumn> {
    grid.check()?;
    let mut indices = Vec::with_capacity(x_max as usize + 1);
    indices.push(0.0);
    let mut start = 0;
    let mut saturated_from = None;
    for x in 1..=x_max {
        if saturated_from.is_some() {
            indices.push(grid.c_high);
            continue;
        }
        match crossing_from(sp, x, grid, start) {
            Ok(k) => {
                start = k;
                indices.push(grid.point(k));
            }
            Err(e @ Error::IndexOutOfSearchRange { .. }) => {
                if !grid.saturate {
                    return Err(e);
                }
                saturated_from = Some(x);
                indices.push(grid.c_high);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(WhittleColumn {
        p: sp.p,
        q: sp.q,
        w: sp.w,
        indices,
        saturated_from,
    })
}

/// True iff the transmitting fraction `Σ_{x >= x0} μ_x` strictly decreases
/// over `range` (sufficient for indexability).
pub fn verify_indexability(sp: &SubProblem, range: RangeInclusive<u32>) -> bool {
    let start = (*range.start()).max(1);
    let end = *range.end();
    let mut prev = tail_mass(sp, start);
    for x0 in start + 1..=end {
        let cur = tail_mass(sp, x0);
        if !(cur < prev) {
            return false;
        }
        prev = cur;
    }
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittleColumn {
    pub p: f64,
    pub q: f64,
    pub w: f64,
    /// `I(x)` for `x = 0..=x_max`.
    pub indices: Vec<f64>,
    /// First `x` whose crossing lies above the grid; entries from here on
    /// hold `c_high`.
    pub saturated_from: Option<u64>,
}

/// Whittle indices per device type, with a device -> column map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhittleTable {
    pub format_version: u32,
    pub x_max: u64,
    pub grid: IndexGrid,
    pub columns: Vec<WhittleColumn>,
    pub device_column: Vec<usize>,
}

impl WhittleTable {
    /// `I_i(x)`; AoII above the table clamps to the last entry.
    pub fn index(&self, device: usize, x: u64) -> f64 {
        let col = &self.columns[self.device_column[device]];
        col.indices[x.min(self.x_max) as usize]
    }

    pub fn column_for(&self, device: usize) -> &WhittleColumn {
        &self.columns[self.device_column[device]]
    }

    pub fn num_devices(&self) -> usize {
        self.device_column.len()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let table: Self = serde_json::from_str(&text)?;
        if table.format_version != TABLE_FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "whittle table",
                found: table.format_version,
            });
        }
        Ok(table)
    }
}

/// Builds one column per distinct `(p, q, w)`; devices sharing parameters
/// share a column. Columns are computed in parallel.
pub fn build_table(models: &[ProcessModel], x_max: u64, grid: &IndexGrid) -> Result<WhittleTable> {
    grid.check()?;
    let mut distinct: Vec<SubProblem> = Vec::new();
    let mut device_column = Vec::with_capacity(models.len());
    for model in models {
        let sp = SubProblem::from_process(model);
        let pos = match distinct.iter().position(|d| d == &sp) {
            Some(pos) => pos,
            None => {
                distinct.push(sp);
                distinct.len() - 1
            }
        };
        device_column.push(pos);
    }
    let columns = distinct
        .par_iter()
        .map(|sp| index_column(sp, x_max, grid))
        .collect::<Result<Vec<_>>>()?;
    Ok(WhittleTable {
        format_version: TABLE_FORMAT_VERSION,
        x_max,
        grid: *grid,
        columns,
        device_column,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn paper_sp(p: f64, w: f64) -> SubProblem {
        SubProblem::from_process(&ProcessModel::new(10, p, w))
    }

    #[test]
    fn always_transmit_has_mu0_equal_p() {
        for &p in &[0.3, 0.6, 0.9] {
            let d = stationary_distribution(&paper_sp(p, 1.0), 1, 200).unwrap();
            assert!((d.probs[0] - p).abs() < 1e-15);
        }
    }

    #[test]
    fn large_threshold_approaches_idle_law() {
        let sp = paper_sp(0.6, 1.0);
        let mu0 = sp.mu0(2000);
        let idle = sp.q / (1.0 + sp.q - sp.p);
        assert!((idle - 0.1).abs() < 1e-12);
        assert!((mu0 - idle).abs() < 1e-12);
    }

    #[test]
    fn distribution_sums_to_one() {
        for &(p, x0) in &[(0.6, 1), (0.6, 7), (0.9, 30), (0.35, 3)] {
            let sp = paper_sp(p, 1.0);
            let d = stationary_distribution(&sp, x0, 3000).unwrap();
            let s: f64 = d.probs.iter().sum();
            assert!((s + d.tail - 1.0).abs() < 1e-9);
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn truncation_error_when_cap_is_small() {
        let sp = paper_sp(0.6, 1.0);
        assert!(matches!(
            stationary_distribution(&sp, 50, 60),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn always_transmit_cost_is_geometric_mean() {
        let sp = paper_sp(0.6, 1.0);
        let f = average_cost(&sp, 1, 0.0);
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
        assert!((average_cost_by_summation(&sp, 1, 0.0) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn free_transmission_means_threshold_one() {
        for &p in &[0.6, 0.9] {
            assert_eq!(optimal_threshold(&paper_sp(p, 1.0), 0.0, 200).unwrap(), 1);
        }
    }

    #[test]
    fn huge_cost_hits_threshold_cap() {
        let sp = paper_sp(0.6, 1.0);
        assert!(matches!(
            optimal_threshold(&sp, 1e7, 200),
            Err(Error::ThresholdCap { cap: 200 })
        ));
    }

    #[test]
    fn index_at_zero_is_zero() {
        assert_eq!(whittle_index(&paper_sp(0.6, 1.0), 0, &IndexGrid::default()).unwrap(), 0.0);
    }

    #[test]
    fn index_search_reports_out_of_range() {
        let grid = IndexGrid {
            c_high: 5.0,
            saturate: false,
            ..IndexGrid::default()
        };
        assert!(matches!(
            whittle_index(&paper_sp(0.9, 2.0), 10, &grid),
            Err(Error::IndexOutOfSearchRange { .. })
        ));
        assert!(index_column(&paper_sp(0.9, 2.0), 10, &grid).is_err());
    }

    #[test]
    fn saturated_column_is_flat_above_grid() {
        let grid = IndexGrid {
            c_high: 50.0,
            ..IndexGrid::default()
        };
        let col = index_column(&paper_sp(0.6, 1.0), 40, &grid).unwrap();
        let from = col.saturated_from.unwrap() as usize;
        assert!(col.indices[from..].iter().all(|&v| v == 50.0));
        assert!(col.indices[..from].iter().all(|&v| v < 50.0));
    }

    #[test]
    fn tail_mass_at_one_is_one_minus_p() {
        let sp = paper_sp(0.6, 1.0);
        assert!((tail_mass(&sp, 1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn paper_device_types_are_indexable() {
        assert!(verify_indexability(&paper_sp(0.6, 1.0), 1..=200));
        assert!(verify_indexability(&paper_sp(0.9, 1.0), 1..=200));
    }

    #[test]
    fn shared_parameters_share_columns() {
        let models = vec![
            ProcessModel::new(10, 0.6, 1.0),
            ProcessModel::new(10, 0.9, 2.0),
            ProcessModel::new(10, 0.6, 1.0),
        ];
        let grid = IndexGrid {
            c_high: 300.0,
            ..IndexGrid::default()
        };
        let t = build_table(&models, 30, &grid).unwrap();
        assert_eq!(t.columns.len(), 2);
        assert_eq!(t.device_column, vec![0, 1, 0]);
        let a: Vec<f64> = (0..=30).map(|x| t.index(0, x)).collect();
        let b: Vec<f64> = (0..=30).map(|x| t.index(2, x)).collect();
        assert_eq!(a, b);
        assert_eq!(t.index(0, 1000), t.index(0, 30));
    }

    #[test]
    fn table_round_trips_through_file() {
        let models = vec![ProcessModel::new(10, 0.6, 1.0)];
        let grid = IndexGrid {
            c_high: 100.0,
            ..IndexGrid::default()
        };
        let t = build_table(&models, 20, &grid).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wit");
        t.save(&path).unwrap();
        assert_eq!(WhittleTable::load(&path).unwrap(), t);
    }
}
