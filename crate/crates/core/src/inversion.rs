//! Per-pixel lookup-table inversion with n-best ensemble statistics.
//!
//! Costs are RMSE over the sensor bands, accumulated in `f64` over the
//! table's `f32` band values. Ranking is by `(cost, index)`, so results do
//! not depend on scan order or thread count.

use crate::error::{Error, Result};
use crate::exec;
use crate::lut::LookupTable;
use crate::raster::{RasterCube, RasterData};
use crate::rtm::ForwardModel;
use crate::spectral::{ParameterRanges, ParameterVector, Trait, TRAIT_COUNT};

/// Marks invalid pixels in every trait output.
pub const SENTINEL: f32 = -9999.0;

/// Relative slack for trait values that went through `f32` storage.
pub const STORED_TRAIT_TOLERANCE: f64 = 1e-6;

/// Search strategy for the n-best scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SearchKernel {
    /// Cost every entry, full sort, take the head.
    Naive,
    /// Bounded insertion list with early abandonment of hopeless entries.
    Pruned,
    /// Entries sorted on the highest-variance band, scanned outward from the
    /// observation and cut off once that band alone rules entries out.
    #[default]
    Indexed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub n_best: usize,
    pub low_percentile: f64,
    pub high_percentile: f64,
    pub kernel: SearchKernel,
}

impl Default for InversionConfig {
    fn default() -> Self {
        InversionConfig {
            n_best: 10,
            low_percentile: 0.05,
            high_percentile: 0.95,
            kernel: SearchKernel::Indexed,
        }
    }
}

impl InversionConfig {
    pub fn validate(&self, lut_size: usize) -> Result<()> {
        if self.n_best == 0 || self.n_best > lut_size {
            return Err(Error::Config(format!(
                "n_best = {} must be in 1..={lut_size}",
                self.n_best
            )));
        }
        let (lo, hi) = (self.low_percentile, self.high_percentile);
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!(
                "percentiles must satisfy 0 <= low < high <= 1, got {lo} and {hi}"
            )));
        }
        Ok(())
    }
}

/// Root mean square difference of two equal-length vectors.
pub fn rmse(obs: &[f64], sim: &[f64]) -> Result<f64> {
    if obs.len() != sim.len() || obs.is_empty() {
        return Err(Error::Shape(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            obs.len(),
            sim.len()
        )));
    }
    let sse: f64 = obs.iter().zip(sim).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sse / obs.len() as f64).sqrt())
}

#[inline]
fn sse_row(obs: &[f64], row: &[f32]) -> f64 {
    let mut sse = 0.0;
    for (o, &s) in obs.iter().zip(row) {
        let d = o - s as f64;
        sse += d * d;
    }
    sse
}

#[inline]
fn cost_of(sse: f64, bands: usize) -> f64 {
    (sse / bands as f64).sqrt()
}

fn check_search(obs: &[f64], matrix: &[f32], bands: usize, n: usize) -> Result<usize> {
    if bands == 0 || obs.len() != bands {
        return Err(Error::Shape(format!(
            "observation has {} bands, table has {bands}",
            obs.len()
        )));
    }
    if matrix.len() % bands != 0 {
        return Err(Error::Shape(format!(
            "band matrix of {} values is not a multiple of {bands}",
            matrix.len()
        )));
    }
    let m = matrix.len() / bands;
    if n == 0 || n > m {
        return Err(Error::Config(format!("n_best = {n} must be in 1..={m}")));
    }
    if let Some(b) = obs.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("observation band {b} is not finite")));
    }
    Ok(m)
}

/// Reference kernel: all costs, sorted by `(cost, index)`, first `n`.
pub fn n_best_naive(obs: &[f64], matrix: &[f32], bands: usize, n: usize) -> Result<Vec<(usize, f64)>> {
    let m = check_search(obs, matrix, bands, n)?;
    let mut all: Vec<(usize, f64)> = (0..m)
        .map(|j| (j, cost_of(sse_row(obs, &matrix[j * bands..(j + 1) * bands]), bands)))
        .collect();
    let order = |a: &(usize, f64), b: &(usize, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
    if n < m {
        all.select_nth_unstable_by(n - 1, order);
        all.truncate(n);
    }
    all.sort_by(order);
    Ok(all)
}

/// Early-abandoning kernel; returns exactly what [`n_best_naive`] returns.
pub fn n_best_pruned(obs: &[f64], matrix: &[f32], bands: usize, n: usize) -> Result<Vec<(usize, f64)>> {
    let m = check_search(obs, matrix, bands, n)?;
    // (sse, cost, index), ascending by (cost, index)
    let mut kept: Vec<(f64, f64, usize)> = Vec::with_capacity(n + 1);
    let insert = |kept: &mut Vec<(f64, f64, usize)>, item: (f64, f64, usize)| {
        let pos = kept
            .iter()
            .position(|k| item.1 < k.1)
            .unwrap_or(kept.len());
        kept.insert(pos, item);
    };
    for j in 0..n {
        let sse = sse_row(obs, &matrix[j * bands..(j + 1) * bands]);
        insert(&mut kept, (sse, cost_of(sse, bands), j));
    }
    let mut worst_sse = kept[n - 1].0;
    let mut worst_cost = kept[n - 1].1;
    for (j, row) in matrix.chunks_exact(bands).enumerate().skip(n) {
        let mut sse = 0.0;
        let mut abandoned = false;
        for (o, &s) in obs.iter().zip(row) {
            let d = o - s as f64;
            sse += d * d;
            if sse > worst_sse {
                abandoned = true;
                break;
            }
        }
        if abandoned {
            continue;
        }
        // later index loses ties, so only a strictly smaller cost enters
        let cost = cost_of(sse, bands);
        if cost < worst_cost {
            kept.pop();
            insert(&mut kept, (sse, cost, j));
            worst_sse = kept[n - 1].0;
            worst_cost = kept[n - 1].1;
        }
    }
    debug_assert_eq!(kept.len(), n.min(m));
    Ok(kept.into_iter().map(|(_, c, j)| (j, c)).collect())
}

/// Sum of squares above which an entry's cost is strictly worse than `worst_sse`'s.
#[inline]
fn abandon_cut(worst_sse: f64, bands: usize) -> f64 {
    (worst_sse * (1.0 + 1e-9)).max(bands as f64 * 4.0 * f64::MIN_POSITIVE)
}

/// Band matrix reordered by one key band for bounded outward scans.
#[derive(Debug, Clone, PartialEq)]
pub struct SortedIndex {
    bands: usize,
    key_band: usize,
    keys: Vec<f32>,
    order: Vec<usize>,
    rows: Vec<f32>,
}

impl SortedIndex {
    /// Keys on the band with the largest variance (lowest index on ties).
    pub fn new(matrix: &[f32], bands: usize) -> Result<Self> {
        if bands == 0 || matrix.is_empty() || matrix.len() % bands != 0 {
            return Err(Error::Shape(format!(
                "band matrix of {} values does not hold rows of {bands}",
                matrix.len()
            )));
        }
        let m = matrix.len() / bands;
        let mut key_band = 0;
        let mut best_var = f64::NEG_INFINITY;
        for b in 0..bands {
            let mean = matrix.iter().skip(b).step_by(bands).map(|&v| v as f64).sum::<f64>() / m as f64;
            let var = matrix
                .iter()
                .skip(b)
                .step_by(bands)
                .map(|&v| (v as f64 - mean).powi(2))
                .sum::<f64>();
            if var > best_var {
                best_var = var;
                key_band = b;
            }
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&i, &j| matrix[i * bands + key_band].total_cmp(&matrix[j * bands + key_band]).then(i.cmp(&j)));
        let keys = order.iter().map(|&j| matrix[j * bands + key_band]).collect();
        let rows = order
            .iter()
            .flat_map(|&j| matrix[j * bands..(j + 1) * bands].iter().copied())
            .collect();
        Ok(SortedIndex {
            bands,
            key_band,
            keys,
            order,
            rows,
        })
    }

    pub fn key_band(&self) -> usize {
        self.key_band
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Same result as [`n_best_naive`] on the original matrix.
    pub fn n_best(&self, obs: &[f64], n: usize) -> Result<Vec<(usize, f64)>> {
        let bands = self.bands;
        let m = check_search(obs, &self.rows, bands, n)?;
        let ko = obs[self.key_band];
        let key_term = |pos: usize| {
            let d = ko - self.keys[pos] as f64;
            d * d
        };
        let start = self.keys.partition_point(|&k| (k as f64) < ko);
        let (mut left, mut right) = (start, start);
        // (sse, cost, original index), ascending by (cost, index)
        let mut kept: Vec<(f64, f64, usize)> = Vec::with_capacity(n + 1);
        let mut cut = f64::INFINITY;
        loop {
            let l = (left > 0).then(|| key_term(left - 1));
            let r = (right < m).then(|| key_term(right));
            let pos = match (l, r) {
                (None, None) => break,
                (Some(dl), Some(dr)) if dl <= dr => {
                    if dl > cut {
                        break;
                    }
                    left -= 1;
                    left
                }
                (Some(dl), None) => {
                    if dl > cut {
                        break;
                    }
                    left -= 1;
                    left
                }
                (_, Some(dr)) => {
                    if dr > cut {
                        break;
                    }
                    right += 1;
                    right - 1
                }
            };
            let row = &self.rows[pos * bands..(pos + 1) * bands];
            let mut sse = 0.0;
            let mut abandoned = false;
            for (o, &s) in obs.iter().zip(row) {
                let d = o - s as f64;
                sse += d * d;
                if sse > cut {
                    abandoned = true;
                    break;
                }
            }
            if abandoned {
                continue;
            }
            let item = (sse, cost_of(sse, bands), self.order[pos]);
            let before = |a: &(f64, f64, usize), b: &(f64, f64, usize)| a.1 < b.1 || (a.1 == b.1 && a.2 < b.2);
            if kept.len() == n {
                if !before(&item, &kept[n - 1]) {
                    continue;
                }
                kept.pop();
            }
            let at = kept.iter().position(|k| before(&item, k)).unwrap_or(kept.len());
            kept.insert(at, item);
            if kept.len() == n {
                cut = abandon_cut(kept[n - 1].0, bands);
            }
        }
        Ok(kept.into_iter().map(|(_, c, j)| (j, c)).collect())
    }
}

/// A kernel bound to one band matrix, with any precomputed index.
#[derive(Debug, Clone)]
pub struct Searcher<'a> {
    kernel: SearchKernel,
    matrix: &'a [f32],
    bands: usize,
    index: Option<SortedIndex>,
}

impl<'a> Searcher<'a> {
    pub fn new(kernel: SearchKernel, matrix: &'a [f32], bands: usize) -> Result<Self> {
        let index = match kernel {
            SearchKernel::Indexed => Some(SortedIndex::new(matrix, bands)?),
            _ => None,
        };
        Ok(Searcher {
            kernel,
            matrix,
            bands,
            index,
        })
    }

    pub fn for_lut(kernel: SearchKernel, lut: &'a LookupTable) -> Result<Self> {
        Searcher::new(kernel, lut.band_matrix(), lut.band_count())
    }

    pub fn kernel(&self) -> SearchKernel {
        self.kernel
    }

    pub fn n_best(&self, obs: &[f64], n: usize) -> Result<Vec<(usize, f64)>> {
        match (&self.index, self.kernel) {
            (Some(ix), _) => ix.n_best(obs, n),
            (None, SearchKernel::Naive) => n_best_naive(obs, self.matrix, self.bands, n),
            (None, _) => n_best_pruned(obs, self.matrix, self.bands, n),
        }
    }
}

/// n lowest-cost entries of a row-major band matrix with the chosen kernel.
pub fn n_best_with(
    kernel: SearchKernel,
    obs: &[f64],
    matrix: &[f32],
    bands: usize,
    n: usize,
) -> Result<Vec<(usize, f64)>> {
    Searcher::new(kernel, matrix, bands)?.n_best(obs, n)
}

/// n lowest-cost LUT entries as `(index, cost)`, ascending; ties by index.
pub fn n_best(obs: &[f64], lut: &LookupTable, n: usize) -> Result<Vec<(usize, f64)>> {
    n_best_pruned(obs, lut.band_matrix(), lut.band_count(), n)
}

/// Linear-interpolation order statistic of ascending `sorted` at `q`.
pub fn percentile(sorted: &[f64], q: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::Domain("percentile of an empty sample".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!("percentile level {q} outside [0, 1]")));
    }
    let h = (sorted.len() - 1) as f64 * q;
    let f = h.floor() as usize;
    if f + 1 >= sorted.len() {
        return Ok(sorted[sorted.len() - 1]);
    }
    let (lo, hi) = (sorted[f], sorted[f + 1]);
    Ok((lo + (h - f as f64) * (hi - lo)).clamp(lo, hi))
}

/// Per-trait median and low/high percentiles of an ensemble.
pub fn ensemble_stats(
    entries: &[ParameterVector],
    cfg: &InversionConfig,
) -> Result<(ParameterVector, ParameterVector, ParameterVector)> {
    if entries.is_empty() {
        return Err(Error::Domain("ensemble is empty".into()));
    }
    let mut med = [0.0; TRAIT_COUNT];
    let mut lo = [0.0; TRAIT_COUNT];
    let mut hi = [0.0; TRAIT_COUNT];
    let mut col = Vec::with_capacity(entries.len());
    for t in 0..TRAIT_COUNT {
        col.clear();
        col.extend(entries.iter().map(|e| e.0[t]));
        col.sort_by(f64::total_cmp);
        med[t] = percentile(&col, 0.5)?;
        lo[t] = percentile(&col, cfg.low_percentile)?;
        hi[t] = percentile(&col, cfg.high_percentile)?;
    }
    Ok((ParameterVector(med), ParameterVector(lo), ParameterVector(hi)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PixelResult {
    pub median: ParameterVector,
    pub p5: ParameterVector,
    pub p95: ParameterVector,
    pub best_cost: f64,
    pub best_index: usize,
}

/// Inverts one observation; `None` when any band is non-finite.
pub fn invert_pixel(
    obs: &[f64],
    lut: &LookupTable,
    searcher: &Searcher<'_>,
    cfg: &InversionConfig,
) -> Result<Option<PixelResult>> {
    if obs.iter().any(|v| !v.is_finite()) {
        if obs.len() != lut.band_count() {
            return Err(Error::Shape(format!(
                "observation has {} bands, table has {}",
                obs.len(),
                lut.band_count()
            )));
        }
        return Ok(None);
    }
    let best = searcher.n_best(obs, cfg.n_best)?;
    let ensemble: Vec<ParameterVector> = best.iter().map(|&(j, _)| *lut.params(j)).collect();
    let (median, p5, p95) = ensemble_stats(&ensemble, cfg)?;
    Ok(Some(PixelResult {
        median,
        p5,
        p95,
        best_cost: best[0].1,
        best_index: best[0].0,
    }))
}

/// Per-pixel inversion outputs of one tile, pixel-major (`row * cols + col`).
#[derive(Debug, Clone, PartialEq)]
pub struct TraitMaps {
    pub rows: usize,
    pub cols: usize,
    pub median: Vec<ParameterVector>,
    pub p5: Vec<ParameterVector>,
    pub p95: Vec<ParameterVector>,
    /// Best RMSE; `+inf` for invalid pixels.
    pub cost: Vec<f64>,
    pub best_index: Vec<Option<usize>>,
}

impl TraitMaps {
    pub fn from_pixels(rows: usize, cols: usize, pixels: Vec<Option<PixelResult>>) -> Result<Self> {
        if pixels.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{} pixel results for a {rows}x{cols} tile",
                pixels.len()
            )));
        }
        let invalid = ParameterVector([SENTINEL as f64; TRAIT_COUNT]);
        let mut maps = TraitMaps {
            rows,
            cols,
            median: Vec::with_capacity(pixels.len()),
            p5: Vec::with_capacity(pixels.len()),
            p95: Vec::with_capacity(pixels.len()),
            cost: Vec::with_capacity(pixels.len()),
            best_index: Vec::with_capacity(pixels.len()),
        };
        for px in pixels {
            match px {
                Some(r) => {
                    maps.median.push(r.median);
                    maps.p5.push(r.p5);
                    maps.p95.push(r.p95);
                    maps.cost.push(r.best_cost);
                    maps.best_index.push(Some(r.best_index));
                }
                None => {
                    maps.median.push(invalid);
                    maps.p5.push(invalid);
                    maps.p95.push(invalid);
                    maps.cost.push(f64::INFINITY);
                    maps.best_index.push(None);
                }
            }
        }
        Ok(maps)
    }

    pub fn is_valid(&self, pixel: usize) -> bool {
        self.best_index[pixel].is_some()
    }

    pub fn invalid_count(&self) -> usize {
        self.best_index.iter().filter(|b| b.is_none()).count()
    }

    /// Mean best cost over valid pixels; NaN when there are none.
    pub fn mean_cost(&self) -> f64 {
        let valid: Vec<f64> = self.cost.iter().copied().filter(|c| c.is_finite()).collect();
        if valid.is_empty() {
            return f64::NAN;
        }
        valid.iter().sum::<f64>() / valid.len() as f64
    }

    fn raster_of(&self, values: &[ParameterVector]) -> Result<RasterCube> {
        let plane = self.rows * self.cols;
        let mut data = vec![0f32; plane * TRAIT_COUNT];
        for (p, v) in values.iter().enumerate() {
            for t in 0..TRAIT_COUNT {
                data[t * plane + p] = v.0[t] as f32;
            }
        }
        RasterCube::new(self.rows, self.cols, TRAIT_COUNT, RasterData::F32(data))?.with_band_names(Trait::names())
    }

    /// `(median, p5, p95)` as 16-band float32 rasters in canonical trait order.
    pub fn to_rasters(&self) -> Result<(RasterCube, RasterCube, RasterCube)> {
        Ok((
            self.raster_of(&self.median)?,
            self.raster_of(&self.p5)?,
            self.raster_of(&self.p95)?,
        ))
    }
}

/// Pixel-major parameter vectors from a 16-band trait raster.
pub fn params_from_raster(cube: &RasterCube) -> Result<Vec<ParameterVector>> {
    if cube.bands() != TRAIT_COUNT {
        return Err(Error::Shape(format!(
            "trait raster has {} bands, expected {TRAIT_COUNT}",
            cube.bands()
        )));
    }
    if let Some(names) = cube.band_names() {
        if names != Trait::names().as_slice() {
            return Err(Error::Shape("trait raster band names are not in canonical order".into()));
        }
    }
    let mut out = Vec::with_capacity(cube.rows() * cube.cols());
    for r in 0..cube.rows() {
        for c in 0..cube.cols() {
            out.push(ParameterVector::from_slice(&cube.pixel_f64(r, c))?);
        }
    }
    Ok(out)
}

/// Inverts every pixel of a sensor cube against `lut` on `workers` threads.
pub fn invert_image(cube: &RasterCube, lut: &LookupTable, cfg: &InversionConfig, workers: usize) -> Result<TraitMaps> {
    if cube.bands() != lut.band_count() {
        return Err(Error::Shape(format!(
            "cube has {} bands, table has {}",
            cube.bands(),
            lut.band_count()
        )));
    }
    if let Some(names) = cube.band_names() {
        if names != lut.band_names() {
            return Err(Error::Shape(format!(
                "cube bands {names:?} do not match table bands {:?}",
                lut.band_names()
            )));
        }
    }
    if lut.is_empty() {
        return Err(Error::Config("lookup table is empty".into()));
    }
    cfg.validate(lut.len())?;
    let searcher = Searcher::for_lut(cfg.kernel, lut)?;
    let cols = cube.cols();
    let pixels = exec::try_map_indexed(cube.rows() * cols, workers, |p| {
        invert_pixel(&cube.pixel_f64(p / cols, p % cols), lut, &searcher, cfg)
    })?;
    TraitMaps::from_pixels(cube.rows(), cols, pixels)
}

fn is_sentinel(p: &ParameterVector) -> bool {
    p.0.iter().all(|&v| v == SENTINEL as f64)
}

/// Forward-simulates pixel-major `params`; sentinel pixels give zero spectra.
///
/// Values within [`STORED_TRAIT_TOLERANCE`] of a range bound are clamped
/// onto it before simulation.
pub fn simulate_from_traits(
    params: &[ParameterVector],
    rows: usize,
    cols: usize,
    model: &dyn ForwardModel,
    ranges: &ParameterRanges,
    workers: usize,
) -> Result<RasterCube> {
    if params.len() != rows * cols {
        return Err(Error::Shape(format!(
            "{} trait vectors for a {rows}x{cols} tile",
            params.len()
        )));
    }
    let grid = *model.grid();
    let nw = grid.count();
    let spectra = exec::try_map_indexed(params.len(), workers, |p| {
        let v = &params[p];
        if is_sentinel(v) {
            return Ok(vec![0f32; nw]);
        }
        if let Some(t) = ranges.first_violation_tol(v, STORED_TRAIT_TOLERANCE) {
            let (lo, hi) = ranges.get(t);
            return Err(Error::Parameter(format!(
                "pixel (row {}, col {}): {} = {} outside [{lo}, {hi}]",
                p / cols,
                p % cols,
                t.name(),
                v.get(t)
            )));
        }
        let s = model.simulate(&ranges.clamp(v)).map_err(|e| {
            Error::Parameter(format!("pixel (row {}, col {}): {e}", p / cols, p % cols))
        })?;
        Ok(s.values().iter().map(|&x| x as f32).collect())
    })?;
    let plane = rows * cols;
    let mut data = vec![0f32; plane * nw];
    for (p, s) in spectra.iter().enumerate() {
        for (b, &x) in s.iter().enumerate() {
            data[b * plane + p] = x;
        }
    }
    RasterCube::new(rows, cols, nw, RasterData::F32(data))?.with_wavelengths(grid.wavelengths().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, m: usize, b: usize) -> Vec<f32> {
        (0..m * b).map(|_| rng.random_range(0.0f32..0.6)).collect()
    }

    /// Independent oracle: plain costs, stable sort on cost only.
    fn full_sort_oracle(obs: &[f64], matrix: &[f32], b: usize, n: usize) -> Vec<(usize, f64)> {
        let mut c: Vec<(usize, f64)> = matrix
            .chunks(b)
            .enumerate()
            .map(|(j, row)| {
                let sim: Vec<f64> = row.iter().map(|&x| x as f64).collect();
                (j, rmse(obs, &sim).unwrap())
            })
            .collect();
        c.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap());
        c.truncate(n);
        c
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[0.2, 0.4], &[0.2, 0.4]).unwrap(), 0.0);
        let a = [0.1, 0.5, 0.3, 0.9];
        let b: Vec<f64> = a.iter().map(|x| x + 0.1).collect();
        assert!((rmse(&a, &b).unwrap() - 0.1).abs() < 1e-12);
        assert!((rmse(&[0.1, 0.3], &[0.2, 0.1]).unwrap() - 0.025f64.sqrt()).abs() < 1e-15);
        assert!((rmse(&[0.1, 0.3], &[0.2, 0.1]).unwrap() - 0.158114).abs() < 1e-6);
        assert!(matches!(rmse(&[0.1], &[0.1, 0.2]), Err(Error::Shape(_))));
    }

    #[test]
    fn exact_match_ranks_first() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_matrix(&mut rng, 200, 12);
        let obs: Vec<f64> = m[57 * 12..58 * 12].iter().map(|&x| x as f64).collect();
        for k in [SearchKernel::Naive, SearchKernel::Pruned, SearchKernel::Indexed] {
            assert_eq!(n_best_with(k, &obs, &m, 12, 5).unwrap()[0], (57, 0.0));
        }
    }

    #[test]
    fn ties_break_by_index() {
        let row = [0.1f32, 0.2, 0.3];
        let m: Vec<f32> = row.iter().cycle().take(9).copied().collect();
        let obs = [0.15, 0.2, 0.3];
        for k in [SearchKernel::Naive, SearchKernel::Pruned, SearchKernel::Indexed] {
            let r = n_best_with(k, &obs, &m, 3, 2).unwrap();
            assert_eq!(r.iter().map(|x| x.0).collect::<Vec<_>>(), [0, 1]);
        }
    }

    #[test]
    fn n_best_errors() {
        let m = vec![0.1f32; 12 * 3];
        let obs = [0.1; 12];
        assert!(matches!(n_best_pruned(&obs, &m, 12, 4), Err(Error::Config(_))));
        assert!(matches!(n_best_naive(&obs, &m, 12, 0), Err(Error::Config(_))));
        assert!(matches!(n_best_pruned(&obs[..11], &m, 12, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn thousand_entry_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_matrix(&mut rng, 1000, 12);
        let obs: Vec<f64> = (0..12).map(|_| rng.random_range(0.0..0.6)).collect();
        let oracle = full_sort_oracle(&obs, &m, 12, 10);
        assert_eq!(n_best_pruned(&obs, &m, 12, 10).unwrap(), oracle);
        assert_eq!(n_best_naive(&obs, &m, 12, 10).unwrap(), oracle);
    }

    #[test]
    fn percentile_examples() {
        let v: Vec<f64> = (1..=10).map(|x| x as f64).collect();
        assert!((percentile(&v, 0.05).unwrap() - 1.45).abs() < 1e-12);
        assert_eq!(percentile(&v, 0.5).unwrap(), 5.5);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&v, 1.0).unwrap(), 10.0);
        for q in [0.0, 0.05, 0.37, 1.0] {
            assert_eq!(percentile(&[7.0; 6], q).unwrap(), 7.0);
        }
        assert!(matches!(percentile(&[], 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn ensemble_examples() {
        let cfg = InversionConfig::default();
        let base = ParameterRanges::standard(0).midpoint();
        let (m, lo, hi) = ensemble_stats(&[base; 4], &cfg).unwrap();
        assert_eq!((m, lo, hi), (base, base, base));
        let entries: Vec<ParameterVector> = (1..=10).rev().map(|c| base.with(Trait::Cab, c as f64)).collect();
        let (m, lo, hi) = ensemble_stats(&entries, &cfg).unwrap();
        assert!((m.cab() - 5.5).abs() < 1e-12);
        assert!((lo.cab() - 1.45).abs() < 1e-12);
        assert!((hi.cab() - 9.55).abs() < 1e-12);
    }

    fn tiny_lut(rng: &mut ChaCha8Rng, m: usize) -> LookupTable {
        let grid = crate::spectral::SpectralGrid::canonical();
        let ranges = ParameterRanges::standard(0);
        let params = crate::lut::lhs_sample(&ranges, m, 9);
        let bands = random_matrix(rng, m, 12);
        let spectra = random_matrix(rng, m, grid.count());
        let names = crate::spectral::default_sensor_bands().names();
        LookupTable::from_parts(grid, names, params, spectra, bands, 9, [0; 32]).unwrap()
    }

    fn cube_from_entries(lut: &LookupTable, idx: &[usize], rows: usize, cols: usize) -> RasterCube {
        let b = lut.band_count();
        let plane = rows * cols;
        let mut data = vec![0f32; plane * b];
        for (p, &j) in idx.iter().enumerate() {
            for (k, &v) in lut.band_values(j).iter().enumerate() {
                data[k * plane + p] = v;
            }
        }
        RasterCube::new(rows, cols, b, RasterData::F32(data)).unwrap()
    }

    #[test]
    fn self_inversion_of_a_small_cube() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let lut = tiny_lut(&mut rng, 50);
        let cube = cube_from_entries(&lut, &[3, 7, 7, 1], 2, 2);
        let maps = invert_image(&cube, &lut, &InversionConfig::default(), 2).unwrap();
        assert_eq!(maps.best_index, [Some(3), Some(7), Some(7), Some(1)]);
        assert!(maps.cost.iter().all(|&c| c == 0.0));
        for p in 0..4 {
            for t in 0..TRAIT_COUNT {
                assert!(maps.p5[p].0[t] <= maps.median[p].0[t] && maps.median[p].0[t] <= maps.p95[p].0[t]);
            }
        }
    }

    #[test]
    fn nan_pixel_is_marked_invalid() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let lut = tiny_lut(&mut rng, 30);
        let mut cube = cube_from_entries(&lut, &[0, 1, 2, 3], 2, 2);
        let i = cube.index(1, 0, 4);
        cube.as_f32_mut().unwrap()[i] = f32::NAN;
        let maps = invert_image(&cube, &lut, &InversionConfig::default(), 1).unwrap();
        assert_eq!(maps.best_index[2], None);
        assert_eq!(maps.cost[2], f64::INFINITY);
        assert!(maps.median[2].0.iter().all(|&v| v == -9999.0));
        assert_eq!(maps.invalid_count(), 1);
        let (med, _, _) = maps.to_rasters().unwrap();
        assert_eq!(med.as_f32().unwrap()[med.index(1, 0, 0)], SENTINEL);
    }

    #[test]
    fn band_mismatch_is_a_shape_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let lut = tiny_lut(&mut rng, 20);
        let cube = RasterCube::zeros(2, 2, 11, crate::raster::DataType::F32).unwrap();
        assert!(matches!(invert_image(&cube, &lut, &InversionConfig::default(), 1), Err(Error::Shape(_))));
        let renamed = cube_from_entries(&lut, &[0, 1, 2, 3], 2, 2)
            .with_band_names((0..12).map(|i| format!("X{i}")).collect())
            .unwrap();
        assert!(matches!(invert_image(&renamed, &lut, &InversionConfig::default(), 1), Err(Error::Shape(_))));
    }

    #[test]
    fn scheduling_independence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let lut = tiny_lut(&mut rng, 300);
        let n = 16 * 16 * 12;
        let data: Vec<f32> = (0..n).map(|_| rng.random_range(0.0f32..0.6)).collect();
        let cube = RasterCube::new(16, 16, 12, RasterData::F32(data)).unwrap();
        let cfg = InversionConfig::default();
        let seq = invert_image(&cube, &lut, &cfg, 1).unwrap();
        for w in [2, 8] {
            assert_eq!(invert_image(&cube, &lut, &cfg, w).unwrap(), seq);
        }
        for kernel in [SearchKernel::Naive, SearchKernel::Pruned] {
            assert_eq!(invert_image(&cube, &lut, &InversionConfig { kernel, ..cfg }, 3).unwrap(), seq);
        }
    }

    #[test]
    fn simulate_reproduces_lut_spectra() {
        let model = crate::rtm::ReferenceRtm::reference(&["france"]).unwrap();
        let ranges = ParameterRanges::standard(0);
        let (lut, _) = crate::lut::build_lut(
            &crate::lut::LhsConfig::new(40, 2, ranges),
            &crate::lut::ConstraintConfig::default(),
            &model,
            &crate::spectral::default_sensor_bands(),
            1,
        )
        .unwrap();
        let idx = [5, 0, 17, 39];
        let cube = cube_from_entries(&lut, &idx, 2, 2);
        let cfg = InversionConfig { n_best: 1, ..Default::default() };
        let mut maps = invert_image(&cube, &lut, &cfg, 1).unwrap();
        maps.median[3] = ParameterVector([SENTINEL as f64; TRAIT_COUNT]);
        let sim = simulate_from_traits(&maps.median, 2, 2, &model, &ranges, 2).unwrap();
        let v = sim.as_f32().unwrap();
        for (p, &j) in idx.iter().enumerate().take(3) {
            let got: Vec<f32> = (0..211).map(|b| v[sim.index(p / 2, p % 2, b)]).collect();
            assert_eq!(got.as_slice(), lut.spectrum(j));
        }
        assert!((0..211).all(|b| v[sim.index(1, 1, b)] == 0.0));
        let again = simulate_from_traits(&maps.median, 2, 2, &model, &ranges, 1).unwrap();
        assert_eq!(again, sim);
    }

    #[test]
    fn simulate_names_the_offending_pixel() {
        let model = crate::rtm::ReferenceRtm::reference(&["france"]).unwrap();
        let ranges = ParameterRanges::standard(0);
        let mut params = vec![ranges.midpoint(); 6];
        params[4].set(Trait::Cab, 500.0);
        match simulate_from_traits(&params, 2, 3, &model, &ranges, 1) {
            Err(Error::Parameter(m)) => assert!(m.contains("row 1, col 1") && m.contains("Cab"), "{m}"),
            other => panic!("{other:?}"),
        }
        // float32 round-off on a bound is tolerated
        params[4].set(Trait::Cab, 160.0 * (1.0 + 1e-8));
        assert!(simulate_from_traits(&params, 2, 3, &model, &ranges, 1).is_ok());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kernels_agree_with_oracle(seed in any::<u64>(), m in 1usize..400, b in 1usize..14, n_frac in 0.0f64..1.0, dup in any::<bool>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut matrix = random_matrix(&mut rng, m, b);
            if dup && m > 4 {
                // plant ties
                let row: Vec<f32> = matrix[..b].to_vec();
                for j in (1..m).step_by(3) {
                    matrix[j * b..(j + 1) * b].copy_from_slice(&row);
                }
            }
            let n = 1 + ((m - 1) as f64 * n_frac) as usize;
            let obs: Vec<f64> = (0..b).map(|_| rng.random_range(0.0..0.6)).collect();
            let oracle = full_sort_oracle(&obs, &matrix, b, n);
            prop_assert_eq!(n_best_naive(&obs, &matrix, b, n).unwrap(), oracle.clone());
            prop_assert_eq!(n_best_pruned(&obs, &matrix, b, n).unwrap(), oracle.clone());
            prop_assert_eq!(SortedIndex::new(&matrix, b).unwrap().n_best(&obs, n).unwrap(), oracle);
        }

        #[test]
        fn indexed_kernel_on_coarse_values(seed in any::<u64>(), m in 1usize..300, n_frac in 0.0f64..1.0) {
            // few distinct values: many exact key and cost ties
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = 4;
            let matrix: Vec<f32> = (0..m * b).map(|_| rng.random_range(0..4) as f32 * 0.125).collect();
            let obs: Vec<f64> = (0..b).map(|_| rng.random_range(0..4) as f64 * 0.125).collect();
            let n = 1 + ((m - 1) as f64 * n_frac) as usize;
            let oracle = full_sort_oracle(&obs, &matrix, b, n);
            prop_assert_eq!(SortedIndex::new(&matrix, b).unwrap().n_best(&obs, n).unwrap(), oracle);
        }

        #[test]
        fn rmse_symmetric_nonnegative(a in prop::collection::vec(-1.0f64..1.0, 1..30), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            let ab = rmse(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, rmse(&b, &a).unwrap());
            prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        }

        #[test]
        fn ensemble_is_ordered(vals in prop::collection::vec(prop::collection::vec(-1e3f64..1e3, TRAIT_COUNT), 1..25)) {
            let entries: Vec<ParameterVector> = vals.iter().map(|v| ParameterVector::from_slice(v).unwrap()).collect();
            let (m, lo, hi) = ensemble_stats(&entries, &InversionConfig::default()).unwrap();
            for t in 0..TRAIT_COUNT {
                prop_assert!(lo.0[t] <= m.0[t] && m.0[t] <= hi.0[t]);
            }
        }
    }
}
