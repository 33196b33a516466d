//! Coincidence-entropy quantizer design and symbol/bit mapping.
//!
//! Thresholds are searched only on histogram edges. Both coordinates share
//! one lattice (multiples of the grid resolution), so an edge value means the
//! same thing on the x and y axes.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ipi::PairedIpis;

#[derive(Debug, Error)]
pub enum QuantizerError {
    #[error("no input pairs")]
    EmptyInput,
    #[error("grid resolution must be positive and finite, got {0}")]
    InvalidResolution(f64),
    #[error("histogram grid too large: {cells} cells (limit {limit})")]
    GridTooLarge { cells: usize, limit: usize },
    #[error("invalid histogram: {0}")]
    InvalidHistogram(String),
    #[error("invalid thresholds: {0}")]
    InvalidThresholds(String),
    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("bits per symbol must be in 1..=8, got {0}")]
    InvalidBits(u32),
    #[error("symbol {symbol} outside 1..={levels}")]
    SymbolOutOfRange { symbol: u16, levels: u32 },
    #[error("bit vector length {len} is not a multiple of {bits}")]
    BitLengthMismatch { len: usize, bits: u32 },
    #[error("only {distinct} distinct values, need {needed}")]
    TooFewDistinctValues { distinct: usize, needed: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub const MAX_BITS: u32 = 8;
/// Upper bound on `x_cells * y_cells`.
pub const MAX_GRID_CELLS: usize = 1 << 24;

/// Strict-improvement margin used by every threshold search.
const IMPROVE_EPS: f64 = 1e-12;
const MAX_REFINE_SWEEPS: usize = 1000;

fn check_bits(b: u32) -> Result<u32, QuantizerError> {
    if (1..=MAX_BITS).contains(&b) {
        Ok(1 << b)
    } else {
        Err(QuantizerError::InvalidBits(b))
    }
}

/// Empirical joint distribution of paired IPIs on a regular grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "HistogramRepr", into = "HistogramRepr")]
pub struct JointHistogram {
    x_edges: Vec<f64>,
    y_edges: Vec<f64>,
    /// Row-major, `x_cells` rows by `y_cells` columns.
    counts: Vec<u32>,
    n_total: u64,
    /// `(x_cells + 1) * (y_cells + 1)` inclusive-exclusive 2D prefix sums.
    prefix: Vec<u64>,
}

#[derive(Serialize, Deserialize)]
struct HistogramRepr {
    x_edges: Vec<f64>,
    y_edges: Vec<f64>,
    counts: Vec<Vec<u32>>,
}

impl TryFrom<HistogramRepr> for JointHistogram {
    type Error = QuantizerError;
    fn try_from(r: HistogramRepr) -> Result<Self, Self::Error> {
        let flat = r.counts.concat();
        JointHistogram::from_counts(r.x_edges, r.y_edges, flat)
    }
}

impl From<JointHistogram> for HistogramRepr {
    fn from(h: JointHistogram) -> Self {
        let ny = h.y_cells();
        HistogramRepr {
            counts: h.counts.chunks(ny.max(1)).map(<[u32]>::to_vec).collect(),
            x_edges: h.x_edges,
            y_edges: h.y_edges,
        }
    }
}

fn lattice_edges(min: f64, max: f64, res: f64) -> Vec<f64> {
    let k0 = ((min - res) / res).floor() as i64;
    let k1 = ((max + res) / res).ceil() as i64;
    (k0..=k1).map(|k| k as f64 * res).collect()
}

fn cell_of(edges: &[f64], v: f64) -> usize {
    edges.partition_point(|&e| e <= v) - 1
}

impl JointHistogram {
    pub fn from_counts(
        x_edges: Vec<f64>,
        y_edges: Vec<f64>,
        counts: Vec<u32>,
    ) -> Result<Self, QuantizerError> {
        let increasing = |e: &[f64]| e.len() >= 2 && e.windows(2).all(|w| w[0] < w[1]) && e.iter().all(|v| v.is_finite());
        if !increasing(&x_edges) || !increasing(&y_edges) {
            return Err(QuantizerError::InvalidHistogram(
                "edges must be finite, strictly increasing, at least two".into(),
            ));
        }
        let (nx, ny) = (x_edges.len() - 1, y_edges.len() - 1);
        if nx.saturating_mul(ny) > MAX_GRID_CELLS {
            return Err(QuantizerError::GridTooLarge {
                cells: nx.saturating_mul(ny),
                limit: MAX_GRID_CELLS,
            });
        }
        if counts.len() != nx * ny {
            return Err(QuantizerError::InvalidHistogram(format!(
                "expected {} counts, got {}",
                nx * ny,
                counts.len()
            )));
        }
        let n_total: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if n_total == 0 {
            return Err(QuantizerError::EmptyInput);
        }
        let w = ny + 1;
        let mut prefix = vec![0u64; (nx + 1) * w];
        for i in 0..nx {
            let mut row = 0u64;
            for j in 0..ny {
                row += u64::from(counts[i * ny + j]);
                prefix[(i + 1) * w + j + 1] = prefix[i * w + j + 1] + row;
            }
        }
        Ok(Self {
            x_edges,
            y_edges,
            counts,
            n_total,
            prefix,
        })
    }

    pub fn x_edges(&self) -> &[f64] {
        &self.x_edges
    }

    pub fn y_edges(&self) -> &[f64] {
        &self.y_edges
    }

    pub fn x_cells(&self) -> usize {
        self.x_edges.len() - 1
    }

    pub fn y_cells(&self) -> usize {
        self.y_edges.len() - 1
    }

    pub fn count(&self, i: usize, j: usize) -> u32 {
        self.counts[i * self.y_cells() + j]
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn n_total(&self) -> u64 {
        self.n_total
    }

    pub fn nonzero_cells(&self) -> usize {
        self.counts.iter().filter(|&&c| c > 0).count()
    }

    /// Pairs in x-cells `[x0, x1)` and y-cells `[y0, y1)`.
    fn rect(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> u64 {
        let w = self.y_cells() + 1;
        let p = |i: usize, j: usize| self.prefix[i * w + j];
        p(x1, y1) + p(x0, y0) - p(x0, y1) - p(x1, y0)
    }

    /// Edge index of the first edge at or above `tau`, clamped to the grid.
    fn edge_index(edges: &[f64], tau: f64) -> usize {
        edges.partition_point(|&e| e < tau).min(edges.len() - 1)
    }

    /// Objective for thresholds given as edge indices.
    fn objective_idx(&self, tx: &[usize], ty: &[usize]) -> f64 {
        let (nx, ny) = (self.x_cells(), self.y_cells());
        let mut total = 0u64;
        let mut s = 0.0;
        for l in 0..=tx.len() {
            let x0 = if l == 0 { 0 } else { tx[l - 1] };
            let x1 = tx.get(l).copied().unwrap_or(nx);
            let y0 = if l == 0 { 0 } else { ty[l - 1] };
            let y1 = ty.get(l).copied().unwrap_or(ny);
            if x1 <= x0 || y1 <= y0 {
                continue;
            }
            let c = self.rect(x0, x1, y0, y1);
            if c > 0 {
                total += c;
                s += c as f64 * (c as f64).log2();
            }
        }
        if total == 0 {
            return 0.0;
        }
        let t = total as f64;
        ((t * t.log2() - s) / self.n_total as f64).max(0.0)
    }
}

/// Bins the pairs on a lattice of step `grid_resolution_ms` spanning
/// `[min - res, max + res]` in each coordinate.
pub fn build_joint_histogram(
    pairs: &PairedIpis,
    grid_resolution_ms: f64,
) -> Result<JointHistogram, QuantizerError> {
    let res = grid_resolution_ms;
    if !(res > 0.0 && res.is_finite()) {
        return Err(QuantizerError::InvalidResolution(res));
    }
    if pairs.is_empty() {
        return Err(QuantizerError::EmptyInput);
    }
    let bounds = |v: &[f64]| {
        v.iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
    };
    let (xmin, xmax) = bounds(&pairs.x_ms);
    let (ymin, ymax) = bounds(&pairs.y_ms);
    if ![xmin, xmax, ymin, ymax].iter().all(|v| v.is_finite()) {
        return Err(QuantizerError::InvalidHistogram("non-finite IPI".into()));
    }
    let x_edges = lattice_edges(xmin, xmax, res);
    let y_edges = lattice_edges(ymin, ymax, res);
    let (nx, ny) = (x_edges.len() - 1, y_edges.len() - 1);
    if nx.saturating_mul(ny) > MAX_GRID_CELLS {
        return Err(QuantizerError::GridTooLarge {
            cells: nx.saturating_mul(ny),
            limit: MAX_GRID_CELLS,
        });
    }
    let mut counts = vec![0u32; nx * ny];
    for (x, y) in pairs.iter() {
        counts[cell_of(&x_edges, x) * ny + cell_of(&y_edges, y)] += 1;
    }
    JointHistogram::from_counts(x_edges, y_edges, counts)
}

fn check_thresholds(tau_x: &[f64], tau_y: &[f64]) -> Result<(), QuantizerError> {
    if tau_x.len() != tau_y.len() {
        return Err(QuantizerError::InvalidThresholds(format!(
            "lengths differ: {} vs {}",
            tau_x.len(),
            tau_y.len()
        )));
    }
    for t in [tau_x, tau_y] {
        if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
            return Err(QuantizerError::InvalidThresholds(
                "thresholds must be finite and strictly increasing".into(),
            ));
        }
    }
    Ok(())
}

/// `sum_l p_l * log2(P_c / p_l)` where `p_l` is the mass of level `l` on both axes.
pub fn coincidence_objective(
    hist: &JointHistogram,
    tau_x: &[f64],
    tau_y: &[f64],
) -> Result<f64, QuantizerError> {
    check_thresholds(tau_x, tau_y)?;
    let tx: Vec<usize> = tau_x.iter().map(|&t| JointHistogram::edge_index(&hist.x_edges, t)).collect();
    let ty: Vec<usize> = tau_y.iter().map(|&t| JointHistogram::edge_index(&hist.y_edges, t)).collect();
    Ok(hist.objective_idx(&tx, &ty))
}

/// The same objective computed straight from the pairs, without a histogram.
pub fn pairs_objective(
    pairs: &PairedIpis,
    tau_x: &[f64],
    tau_y: &[f64],
) -> Result<f64, QuantizerError> {
    check_thresholds(tau_x, tau_y)?;
    if pairs.is_empty() {
        return Err(QuantizerError::EmptyInput);
    }
    let mut per_level = vec![0u64; tau_x.len() + 1];
    for (a, b) in quantize(&pairs.x_ms, tau_x).into_iter().zip(quantize(&pairs.y_ms, tau_y)) {
        if a == b {
            per_level[usize::from(a) - 1] += 1;
        }
    }
    let n = pairs.len() as f64;
    let pc: f64 = per_level.iter().sum::<u64>() as f64 / n;
    Ok(per_level
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            p * (pc / p).log2()
        })
        .sum())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BitMapping {
    Natural,
    #[default]
    Gray,
}

impl std::str::FromStr for BitMapping {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "natural" => Ok(Self::Natural),
            "gray" => Ok(Self::Gray),
            other => Err(format!("unknown bit mapping {other:?} (natural|gray)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpecRepr")]
pub struct QuantizerSpec {
    pub levels: u32,
    pub bits: u32,
    pub tau_x: Vec<f64>,
    pub tau_y: Vec<f64>,
    pub bit_mapping: BitMapping,
}

#[derive(Deserialize)]
struct SpecRepr {
    levels: u32,
    bits: u32,
    tau_x: Vec<f64>,
    tau_y: Vec<f64>,
    bit_mapping: BitMapping,
}

impl TryFrom<SpecRepr> for QuantizerSpec {
    type Error = QuantizerError;
    fn try_from(r: SpecRepr) -> Result<Self, Self::Error> {
        let spec = QuantizerSpec::new(r.bits, r.tau_x, r.tau_y, r.bit_mapping)?;
        if spec.levels != r.levels {
            return Err(QuantizerError::InvalidThresholds(format!(
                "levels {} inconsistent with bits {}",
                r.levels, r.bits
            )));
        }
        Ok(spec)
    }
}

impl QuantizerSpec {
    pub fn new(
        bits: u32,
        tau_x: Vec<f64>,
        tau_y: Vec<f64>,
        bit_mapping: BitMapping,
    ) -> Result<Self, QuantizerError> {
        let levels = check_bits(bits)?;
        check_thresholds(&tau_x, &tau_y)?;
        if tau_x.len() != levels as usize - 1 {
            return Err(QuantizerError::InvalidThresholds(format!(
                "{} levels need {} thresholds, got {}",
                levels,
                levels - 1,
                tau_x.len()
            )));
        }
        Ok(Self {
            levels,
            bits,
            tau_x,
            tau_y,
            bit_mapping,
        })
    }

    pub fn quantize_x(&self, values: &[f64]) -> Vec<u16> {
        quantize(values, &self.tau_x)
    }

    pub fn quantize_y(&self, values: &[f64]) -> Vec<u16> {
        quantize(values, &self.tau_y)
    }

    pub fn objective(&self, hist: &JointHistogram) -> f64 {
        coincidence_objective(hist, &self.tau_x, &self.tau_y).expect("validated thresholds")
    }

    pub fn load(path: &Path) -> Result<Self, QuantizerError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), QuantizerError> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

/// Thresholds at one level count of the recursive design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignStage {
    pub levels: u32,
    /// Thresholds right after the new ones were inserted.
    pub inserted_x: Vec<f64>,
    pub inserted_y: Vec<f64>,
    pub tau_x: Vec<f64>,
    pub tau_y: Vec<f64>,
    pub objective: f64,
    pub refine_sweeps: usize,
}

pub fn optimize_thresholds(hist: &JointHistogram, b: u32) -> Result<QuantizerSpec, QuantizerError> {
    optimize_thresholds_traced(hist, b, BitMapping::default()).map(|(s, _)| s)
}

/// Recursive doubling design. Returns the final quantizer and one stage per level count.
pub fn optimize_thresholds_traced(
    hist: &JointHistogram,
    b: u32,
    mapping: BitMapping,
) -> Result<(QuantizerSpec, Vec<DesignStage>), QuantizerError> {
    check_bits(b)?;
    if hist.nonzero_cells() < 2 {
        return Err(QuantizerError::DegenerateHistogram(
            "all mass lies in a single cell".into(),
        ));
    }
    let mut search = Search::new(hist);
    let (tx, ty) = search.joint_pair(0, hist.x_cells(), 0, hist.y_cells())?;
    search.tx = vec![tx];
    search.ty = vec![ty];
    let mut stages = vec![search.stage(2, vec![tx], vec![ty])];

    for level_bits in 2..=b {
        let levels = 1u32 << level_bits;
        search.insert_midpoints()?;
        let inserted = (search.tx.clone(), search.ty.clone());
        stages.push(search.stage(levels, inserted.0, inserted.1));
    }
    let last = stages.last().expect("at least one stage");
    let spec = QuantizerSpec::new(b, last.tau_x.clone(), last.tau_y.clone(), mapping)?;
    Ok((spec, stages))
}

/// Mutable search state over edge indices.
struct Search<'a> {
    hist: &'a JointHistogram,
    tx: Vec<usize>,
    ty: Vec<usize>,
    /// Lattice offset of edge 0, in steps of the shared resolution.
    x_origin: i64,
    y_origin: i64,
    aligned: bool,
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

impl<'a> Search<'a> {
    fn new(hist: &'a JointHistogram) -> Self {
        let step = |e: &[f64]| e[1] - e[0];
        let (sx, sy) = (step(&hist.x_edges), step(&hist.y_edges));
        let on_lattice = |e: &[f64], s: f64| {
            e.iter().enumerate().all(|(i, &v)| {
                let k = (e[0] / s).round() + i as f64;
                (k * s - v).abs() <= 1e-9 * s.max(v.abs())
            })
        };
        let aligned = (sx - sy).abs() <= 1e-12 * sx
            && on_lattice(&hist.x_edges, sx)
            && on_lattice(&hist.y_edges, sx);
        Self {
            hist,
            tx: Vec::new(),
            ty: Vec::new(),
            x_origin: (hist.x_edges[0] / sx).round() as i64,
            y_origin: (hist.y_edges[0] / sx).round() as i64,
            aligned,
        }
    }

    fn objective(&self) -> f64 {
        self.hist.objective_idx(&self.tx, &self.ty)
    }

    fn stage(&mut self, levels: u32, inserted_x: Vec<usize>, inserted_y: Vec<usize>) -> DesignStage {
        let sweeps = self.refine();
        let xe = &self.hist.x_edges;
        let ye = &self.hist.y_edges;
        DesignStage {
            levels,
            inserted_x: inserted_x.iter().map(|&i| xe[i]).collect(),
            inserted_y: inserted_y.iter().map(|&i| ye[i]).collect(),
            tau_x: self.tx.iter().map(|&i| xe[i]).collect(),
            tau_y: self.ty.iter().map(|&i| ye[i]).collect(),
            objective: self.objective(),
            refine_sweeps: sweeps,
        }
    }

    /// Best single threshold pair splitting x-cells `[x0, x1)` and y-cells
    /// `[y0, y1)`, given the other thresholds. Ties go to the smallest (x, y).
    fn joint_pair(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Result<(usize, usize), QuantizerError> {
        if x1 < x0 + 2 || y1 < y0 + 2 {
            return Err(QuantizerError::DegenerateHistogram(
                "interval too narrow to insert a threshold".into(),
            ));
        }
        let pos = self.tx.partition_point(|&t| t < x0 + 1);
        let best = (x0 + 1..x1)
            .into_par_iter()
            .map(|i| {
                let mut tx = self.tx.clone();
                let mut ty = self.ty.clone();
                tx.insert(pos, i);
                ty.insert(pos, y0 + 1);
                let mut row_best = (f64::NEG_INFINITY, i, y0 + 1);
                for j in y0 + 1..y1 {
                    ty[pos] = j;
                    let v = self.hist.objective_idx(&tx, &ty);
                    if v > row_best.0 + IMPROVE_EPS {
                        row_best = (v, i, j);
                    }
                }
                row_best
            })
            .reduce(
                || (f64::NEG_INFINITY, usize::MAX, usize::MAX),
                |a, b| {
                    if b.0 > a.0 + IMPROVE_EPS || (b.0 >= a.0 - IMPROVE_EPS && (b.1, b.2) < (a.1, a.2)) {
                        b
                    } else {
                        a
                    }
                },
            );
        Ok((best.1, best.2))
    }

    /// Inserts one threshold in each existing interval, x and y together.
    fn insert_midpoints(&mut self) -> Result<(), QuantizerError> {
        let (nx, ny) = (self.hist.x_cells(), self.hist.y_cells());
        let old_x = std::mem::take(&mut self.tx);
        let old_y = std::mem::take(&mut self.ty);
        // Start from the old thresholds, then split intervals left to right.
        self.tx = old_x.clone();
        self.ty = old_y.clone();
        for k in 0..=old_x.len() {
            let x0 = if k == 0 { 0 } else { old_x[k - 1] };
            let x1 = old_x.get(k).copied().unwrap_or(nx);
            let y0 = if k == 0 { 0 } else { old_y[k - 1] };
            let y1 = old_y.get(k).copied().unwrap_or(ny);
            let narrow = x1 < x0 + 2 || y1 < y0 + 2;
            let (i, j) = match self.lockstep(x0, x1, y0, y1) {
                Some(p) => p,
                None if narrow => self.anywhere()?,
                None => self.joint_pair(x0, x1, y0, y1)?,
            };
            let pos = self.tx.partition_point(|&t| t < i);
            self.tx.insert(pos, i);
            self.ty.insert(pos, j);
        }
        Ok(())
    }

    /// Searches a shared lattice value for the new threshold on both axes.
    fn lockstep(&self, x0: usize, x1: usize, y0: usize, y1: usize) -> Option<(usize, usize)> {
        if !self.aligned {
            return None;
        }
        let lo = (self.x_origin + x0 as i64 + 1).max(self.y_origin + y0 as i64 + 1);
        let hi = (self.x_origin + x1 as i64).min(self.y_origin + y1 as i64);
        if lo >= hi {
            return None;
        }
        let pos = self.tx.partition_point(|&t| t < x0 + 1);
        let mut tx = self.tx.clone();
        let mut ty = self.ty.clone();
        tx.insert(pos, 0);
        ty.insert(pos, 0);
        let mut best: Option<(f64, usize, usize)> = None;
        for g in lo..hi {
            let i = (g - self.x_origin) as usize;
            let j = (g - self.y_origin) as usize;
            tx[pos] = i;
            ty[pos] = j;
            let v = self.hist.objective_idx(&tx, &ty);
            if best.is_none_or(|b| v > b.0 + IMPROVE_EPS) {
                best = Some((v, i, j));
            }
        }
        best.map(|(_, i, j)| (i, j))
    }

    /// Fallback for an interval with no interior edge: best unused edge pair
    /// anywhere that keeps x and y thresholds in matching order.
    fn anywhere(&self) -> Result<(usize, usize), QuantizerError> {
        let (nx, ny) = (self.hist.x_cells(), self.hist.y_cells());
        let free = |t: &[usize], v: usize| t.binary_search(&v).is_err();
        let candidates: Vec<(usize, usize)> = if self.aligned {
            (1..nx)
                .filter_map(|i| {
                    let g = self.x_origin + i as i64;
                    let j = g - self.y_origin;
                    (j >= 1 && (j as usize) < ny).then_some((i, j as usize))
                })
                .collect()
        } else {
            (1..nx).flat_map(|i| (1..ny).map(move |j| (i, j))).collect()
        };
        let mut best: Option<(f64, usize, usize)> = None;
        for (i, j) in candidates {
            if !free(&self.tx, i) || !free(&self.ty, j) {
                continue;
            }
            let pos = self.tx.partition_point(|&t| t < i);
            if pos != self.ty.partition_point(|&t| t < j) {
                continue;
            }
            let mut tx = self.tx.clone();
            let mut ty = self.ty.clone();
            tx.insert(pos, i);
            ty.insert(pos, j);
            let v = self.hist.objective_idx(&tx, &ty);
            if best.is_none_or(|b| v > b.0 + IMPROVE_EPS) {
                best = Some((v, i, j));
            }
        }
        best.map(|(_, i, j)| (i, j)).ok_or_else(|| {
            QuantizerError::DegenerateHistogram("no free grid edge left for another threshold".into())
        })
    }

    /// Coordinate descent until no single threshold can strictly improve.
    fn refine(&mut self) -> usize {
        for sweep in 1..=MAX_REFINE_SWEEPS {
            let mut moved = false;
            for k in 0..self.tx.len() {
                moved |= self.refine_one(Axis::X, k);
                moved |= self.refine_one(Axis::Y, k);
            }
            if !moved {
                return sweep;
            }
        }
        MAX_REFINE_SWEEPS
    }

    fn refine_one(&mut self, axis: Axis, k: usize) -> bool {
        let cells = match axis {
            Axis::X => self.hist.x_cells(),
            Axis::Y => self.hist.y_cells(),
        };
        let t = match axis {
            Axis::X => &self.tx,
            Axis::Y => &self.ty,
        };
        let lo = if k == 0 { 1 } else { t[k - 1] + 1 };
        let hi = t.get(k + 1).copied().unwrap_or(cells);
        let current = t[k];
        let base = self.objective();
        let mut best = (base, current);
        for cand in lo..hi {
            if cand == current {
                continue;
            }
            self.set(axis, k, cand);
            let v = self.objective();
            if v > best.0 + IMPROVE_EPS {
                best = (v, cand);
            }
        }
        self.set(axis, k, best.1);
        best.1 != current
    }

    fn set(&mut self, axis: Axis, k: usize, v: usize) {
        match axis {
            Axis::X => self.tx[k] = v,
            Axis::Y => self.ty[k] = v,
        }
    }
}

/// Symbol in `1..=L`: one plus the number of thresholds at or below the value.
pub fn quantize(values: &[f64], tau: &[f64]) -> Vec<u16> {
    values
        .iter()
        .map(|&v| 1 + tau.partition_point(|&t| t <= v) as u16)
        .collect()
}

fn to_gray(v: u32) -> u32 {
    v ^ (v >> 1)
}

fn from_gray(mut g: u32) -> u32 {
    let mut shift = g >> 1;
    while shift != 0 {
        g ^= shift;
        shift >>= 1;
    }
    g
}

/// Encodes `symbol - 1` in `b` bits, MSB first.
pub fn symbols_to_bits(symbols: &[u16], b: u32, mapping: BitMapping) -> Result<Vec<u8>, QuantizerError> {
    let levels = check_bits(b)?;
    let mut bits = Vec::with_capacity(symbols.len() * b as usize);
    for &s in symbols {
        if s == 0 || u32::from(s) > levels {
            return Err(QuantizerError::SymbolOutOfRange { symbol: s, levels });
        }
        let v = u32::from(s) - 1;
        let code = match mapping {
            BitMapping::Natural => v,
            BitMapping::Gray => to_gray(v),
        };
        bits.extend((0..b).rev().map(|i| ((code >> i) & 1) as u8));
    }
    Ok(bits)
}

pub fn bits_to_symbols(bits: &[u8], b: u32, mapping: BitMapping) -> Result<Vec<u16>, QuantizerError> {
    check_bits(b)?;
    if bits.len() % b as usize != 0 {
        return Err(QuantizerError::BitLengthMismatch { len: bits.len(), bits: b });
    }
    Ok(bits
        .chunks(b as usize)
        .map(|c| {
            let code = c.iter().fold(0u32, |acc, &bit| (acc << 1) | u32::from(bit & 1));
            let v = match mapping {
                BitMapping::Natural => code,
                BitMapping::Gray => from_gray(code),
            };
            (v + 1) as u16
        })
        .collect())
}

/// Equal-occupancy thresholds at the empirical `k/L` quantiles, placed midway
/// between neighbouring order statistics.
pub fn uniform_quantizer(values: &[f64], b: u32) -> Result<Vec<f64>, QuantizerError> {
    let levels = check_bits(b)? as usize;
    let mut s: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    s.sort_by(f64::total_cmp);
    // Positions j where s[j-1] < s[j]: the only places a threshold can split.
    let cuts: Vec<usize> = (1..s.len()).filter(|&j| s[j - 1] < s[j]).collect();
    if cuts.len() + 1 < levels {
        return Err(QuantizerError::TooFewDistinctValues {
            distinct: cuts.len() + usize::from(!s.is_empty()),
            needed: levels,
        });
    }
    let n = s.len() as f64;
    let mut tau = Vec::with_capacity(levels - 1);
    let mut from = 0;
    for k in 1..levels {
        let target = (k as f64 * n / levels as f64).round() as usize;
        let remaining = levels - 1 - k;
        let last_allowed = cuts.len() - 1 - remaining;
        let idx = (from..=last_allowed)
            .min_by_key(|&c| cuts[c].abs_diff(target))
            .expect("enough cuts");
        let j = cuts[idx];
        tau.push((s[j - 1] + s[j]) / 2.0);
        from = idx + 1;
    }
    Ok(tau)
}
