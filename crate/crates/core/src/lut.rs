//! Lookup-table construction: Latin hypercube sampling, plausibility filters,
//! forward simulation, band resampling and the binary `HSLUT` file format.

use std::fmt::Write as _;
use std::io::{Cursor, Read};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::distr::Open01;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec;
use crate::rtm::ForwardModel;
use crate::spectral::{BandSet, ParameterRanges, ParameterVector, SpectralGrid, Trait, TRAIT_COUNT};

pub const LUT_MAGIC: &[u8; 6] = b"HSLUT\0";
pub const LUT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LhsConfig {
    /// Number of entries M.
    pub target_size: usize,
    pub seed: u64,
    pub ranges: ParameterRanges,
    /// Extra sampling rounds allowed after the first when filters reject entries.
    pub max_refill_rounds: usize,
    /// When false, a single round is run and rejected entries are simply dropped.
    pub refill: bool,
}

impl LhsConfig {
    pub fn new(target_size: usize, seed: u64, ranges: ParameterRanges) -> Self {
        LhsConfig {
            target_size,
            seed,
            ranges,
            max_refill_rounds: 20,
            refill: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintConfig {
    pub coupling_enabled: bool,
    pub coupling_intercept: f64,
    pub coupling_slope: f64,
    pub coupling_halfwidth: f64,
    pub green_peak_enabled: bool,
    pub green_window: (f64, f64),
    pub green_threshold: f64,
}

impl Default for ConstraintConfig {
    fn default() -> Self {
        ConstraintConfig {
            coupling_enabled: true,
            coupling_intercept: 10.0,
            coupling_slope: 15.0,
            coupling_halfwidth: 40.0,
            green_peak_enabled: true,
            green_window: (500.0, 600.0),
            green_threshold: 547.0,
        }
    }
}

impl ConstraintConfig {
    pub fn disabled() -> Self {
        ConstraintConfig {
            coupling_enabled: false,
            green_peak_enabled: false,
            ..Default::default()
        }
    }

    pub fn validate(&self, grid: &SpectralGrid) -> Result<()> {
        if !(self.coupling_halfwidth > 0.0) {
            return Err(Error::Config(format!(
                "coupling half-width must be positive, got {}",
                self.coupling_halfwidth
            )));
        }
        let (lo, hi) = self.green_window;
        if self.green_peak_enabled
            && (lo > hi || lo < grid.start_nm() || hi > grid.end_nm() || grid.samples_within(lo, hi).is_empty())
        {
            return Err(Error::Config(format!(
                "green window [{lo}, {hi}] nm not within {grid}"
            )));
        }
        Ok(())
    }
}

/// Latin hypercube sample of `m` vectors.
///
/// Each non-degenerate dimension gets its own seeded permutation of `1..=m`
/// and open-interval jitter, so every one of the `m` equal strata holds
/// exactly one sample. Dimensions with `min == max` emit the fixed value.
pub fn lhs_sample(ranges: &ParameterRanges, m: usize, seed: u64) -> Vec<ParameterVector> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![ParameterVector([0.0; TRAIT_COUNT]); m];
    let mf = m as f64;
    let mut perm: Vec<usize> = Vec::with_capacity(m);
    for t in Trait::ALL {
        let (lo, hi) = ranges.get(t);
        if lo == hi {
            for p in out.iter_mut() {
                p.set(t, lo);
            }
            continue;
        }
        perm.clear();
        perm.extend(1..=m);
        perm.shuffle(&mut rng);
        for (p, &pi) in out.iter_mut().zip(&perm) {
            let u: f64 = rng.sample(Open01);
            p.set(t, lo + (pi as f64 - u) / mf * (hi - lo));
        }
    }
    out
}

/// Chlorophyll/LAI envelope test, boundary inclusive.
pub fn cab_lai_accept(params: &ParameterVector, c: &ConstraintConfig) -> bool {
    !c.coupling_enabled
        || (params.cab() - (c.coupling_intercept + c.coupling_slope * params.lai())).abs()
            <= c.coupling_halfwidth
}

/// Wavelength of the maximum inside the green window; ties go to the longest wavelength.
pub fn green_peak_wavelength(values: &[f64], grid: &SpectralGrid, window: (f64, f64)) -> Option<f64> {
    let r = grid.samples_within(window.0, window.1);
    let mut best: Option<usize> = None;
    for i in r {
        if best.is_none_or(|b| values[i] >= values[b]) {
            best = Some(i);
        }
    }
    best.map(|i| grid.wavelength(i))
}

/// Rejects spectra whose green peak sits below the threshold wavelength.
pub fn green_peak_accept(values: &[f64], grid: &SpectralGrid, c: &ConstraintConfig) -> bool {
    !c.green_peak_enabled
        || green_peak_wavelength(values, grid, c.green_window).is_some_and(|w| w >= c.green_threshold)
}

/// Simulated parameter/spectrum pairs with their sensor-band reflectances.
///
/// Spectra and band values are stored as `f32`, which is also the on-disk
/// precision, so a saved table reloads bit-identically.
#[derive(Debug, Clone, PartialEq)]
pub struct LookupTable {
    grid: SpectralGrid,
    band_names: Vec<String>,
    params: Vec<ParameterVector>,
    spectra: Vec<f32>,
    bands: Vec<f32>,
    seed: u64,
    digest: [u8; 32],
}

impl LookupTable {
    /// Assembles a table from flat row-major spectrum and band arrays.
    pub fn from_parts(
        grid: SpectralGrid,
        band_names: Vec<String>,
        params: Vec<ParameterVector>,
        spectra: Vec<f32>,
        bands: Vec<f32>,
        seed: u64,
        digest: [u8; 32],
    ) -> Result<Self> {
        let m = params.len();
        if spectra.len() != m * grid.count() || bands.len() != m * band_names.len() || band_names.is_empty() {
            return Err(Error::Shape(format!(
                "LUT arrays inconsistent: {m} entries, {} spectrum values, {} band values, {} bands",
                spectra.len(),
                bands.len(),
                band_names.len()
            )));
        }
        Ok(LookupTable {
            grid,
            band_names,
            params,
            spectra,
            bands,
            seed,
            digest,
        })
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn band_names(&self) -> &[String] {
        &self.band_names
    }

    pub fn band_count(&self) -> usize {
        self.band_names.len()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn digest(&self) -> &[u8; 32] {
        &self.digest
    }

    pub fn params(&self, i: usize) -> &ParameterVector {
        &self.params[i]
    }

    pub fn all_params(&self) -> &[ParameterVector] {
        &self.params
    }

    pub fn spectrum(&self, i: usize) -> &[f32] {
        let n = self.grid.count();
        &self.spectra[i * n..(i + 1) * n]
    }

    pub fn band_values(&self, i: usize) -> &[f32] {
        let b = self.band_count();
        &self.bands[i * b..(i + 1) * b]
    }

    /// Row-major `len × band_count` matrix of band reflectances.
    pub fn band_matrix(&self) -> &[f32] {
        &self.bands
    }

    /// Keeps only the first `n` entries.
    pub fn truncate(&mut self, n: usize) {
        if n < self.len() {
            self.params.truncate(n);
            self.spectra.truncate(n * self.grid.count());
            self.bands.truncate(n * self.band_count());
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.grid.count();
        let b = self.band_count();
        let mut out = Vec::with_capacity(64 + self.len() * (TRAIT_COUNT * 8 + (n + b) * 4));
        out.extend_from_slice(LUT_MAGIC);
        out.write_u16::<LittleEndian>(LUT_VERSION).unwrap();
        out.write_u64::<LittleEndian>(self.len() as u64).unwrap();
        out.write_f64::<LittleEndian>(self.grid.start_nm()).unwrap();
        out.write_f64::<LittleEndian>(self.grid.step_nm()).unwrap();
        out.write_u32::<LittleEndian>(n as u32).unwrap();
        out.write_u32::<LittleEndian>(b as u32).unwrap();
        for name in &self.band_names {
            out.write_u32::<LittleEndian>(name.len() as u32).unwrap();
            out.extend_from_slice(name.as_bytes());
        }
        out.write_u64::<LittleEndian>(self.seed).unwrap();
        out.extend_from_slice(&self.digest);
        for i in 0..self.len() {
            for v in self.params[i].as_array() {
                out.write_f64::<LittleEndian>(*v).unwrap();
            }
            for v in self.spectrum(i) {
                out.write_f32::<LittleEndian>(*v).unwrap();
            }
            for v in self.band_values(i) {
                out.write_f32::<LittleEndian>(*v).unwrap();
            }
        }
        let crc = crc32fast::hash(&out);
        out.write_u32::<LittleEndian>(crc).unwrap();
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let trunc = |what: &str| Error::Format(format!("LUT truncated while reading {what}"));
        if bytes.len() < LUT_MAGIC.len() || &bytes[..LUT_MAGIC.len()] != LUT_MAGIC {
            return Err(Error::Format("not a LUT file (bad magic)".into()));
        }
        let mut cur = Cursor::new(&bytes[LUT_MAGIC.len()..]);
        let version = cur.read_u16::<LittleEndian>().map_err(|_| trunc("version"))?;
        if version != LUT_VERSION {
            return Err(Error::Format(format!(
                "unsupported LUT version {version} (expected {LUT_VERSION})"
            )));
        }
        let m = cur.read_u64::<LittleEndian>().map_err(|_| trunc("header"))? as usize;
        let start = cur.read_f64::<LittleEndian>().map_err(|_| trunc("header"))?;
        let step = cur.read_f64::<LittleEndian>().map_err(|_| trunc("header"))?;
        let count = cur.read_u32::<LittleEndian>().map_err(|_| trunc("header"))? as usize;
        let nb = cur.read_u32::<LittleEndian>().map_err(|_| trunc("header"))? as usize;
        let mut band_names = Vec::with_capacity(nb.min(1024));
        for _ in 0..nb {
            let len = cur.read_u32::<LittleEndian>().map_err(|_| trunc("band names"))? as usize;
            if len > bytes.len() {
                return Err(trunc("band names"));
            }
            let mut buf = vec![0u8; len];
            cur.read_exact(&mut buf).map_err(|_| trunc("band names"))?;
            band_names.push(
                String::from_utf8(buf).map_err(|_| Error::Format("band name is not UTF-8".into()))?,
            );
        }
        let seed = cur.read_u64::<LittleEndian>().map_err(|_| trunc("header"))?;
        let mut digest = [0u8; 32];
        cur.read_exact(&mut digest).map_err(|_| trunc("header"))?;

        let header_len = LUT_MAGIC.len() + cur.position() as usize;
        let record = TRAIT_COUNT * 8 + (count + nb) * 4;
        let expected = m
            .checked_mul(record)
            .and_then(|p| p.checked_add(header_len + 4))
            .ok_or_else(|| Error::Format("LUT header sizes overflow".into()))?;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "LUT size {} bytes does not match header ({} bytes expected)",
                bytes.len(),
                expected
            )));
        }
        let body_end = expected - 4;
        let stored_crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored_crc {
            return Err(Error::Format("LUT checksum mismatch".into()));
        }
        let grid = SpectralGrid::from_parts(start, step, count)
            .map_err(|e| Error::Format(format!("LUT grid: {e}")))?;

        let mut params = Vec::with_capacity(m);
        let mut spectra = Vec::with_capacity(m * count);
        let mut bands = Vec::with_capacity(m * nb);
        let mut rec = Cursor::new(&bytes[header_len..body_end]);
        for _ in 0..m {
            let mut p = [0.0; TRAIT_COUNT];
            rec.read_f64_into::<LittleEndian>(&mut p).map_err(|_| trunc("records"))?;
            params.push(ParameterVector(p));
            let s0 = spectra.len();
            spectra.resize(s0 + count, 0.0);
            rec.read_f32_into::<LittleEndian>(&mut spectra[s0..]).map_err(|_| trunc("records"))?;
            let b0 = bands.len();
            bands.resize(b0 + nb, 0.0);
            rec.read_f32_into::<LittleEndian>(&mut bands[b0..]).map_err(|_| trunc("records"))?;
        }
        LookupTable::from_parts(grid, band_names, params, spectra, bands, seed, digest)
    }
}

pub fn save_lut(lut: &LookupTable, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, lut.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_lut(path: impl AsRef<Path>) -> Result<LookupTable> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    LookupTable::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Loads a LUT and checks that it lives on `grid`.
pub fn load_lut_for_grid(path: impl AsRef<Path>, grid: &SpectralGrid) -> Result<LookupTable> {
    let lut = load_lut(path)?;
    if lut.grid() != grid {
        return Err(Error::GridMismatch {
            expected: grid.to_string(),
            found: lut.grid().to_string(),
        });
    }
    Ok(lut)
}

/// Counters from one [`build_lut`] run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildReport {
    pub rounds: usize,
    pub candidates: usize,
    pub rejected_coupling: usize,
    pub rejected_green: usize,
    pub accepted: usize,
}

impl BuildReport {
    pub fn acceptance_rate(&self) -> f64 {
        if self.candidates == 0 {
            0.0
        } else {
            self.accepted as f64 / self.candidates as f64
        }
    }
}

/// Seed for refill round `round`; round 0 uses the configured seed.
pub fn round_seed(seed: u64, round: usize) -> u64 {
    if round == 0 {
        return seed;
    }
    // splitmix64 finaliser
    let mut z = seed.wrapping_add((round as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// SHA-256 over every input that determines the table's contents.
pub fn config_digest(
    lhs: &LhsConfig,
    constraints: &ConstraintConfig,
    model: &dyn ForwardModel,
    band_set: &BandSet,
) -> [u8; 32] {
    let mut desc = String::new();
    let g = model.grid();
    let _ = write!(desc, "grid={:?},{:?},{};", g.start_nm().to_bits(), g.step_nm().to_bits(), g.count());
    let _ = write!(
        desc,
        "m={};seed={};rounds={};refill={};",
        lhs.target_size, lhs.seed, lhs.max_refill_rounds, lhs.refill
    );
    for (lo, hi) in lhs.ranges.0 {
        let _ = write!(desc, "[{},{}]", lo.to_bits(), hi.to_bits());
    }
    let _ = write!(desc, ";{constraints:?};");
    for b in band_set.bands() {
        let _ = write!(desc, "{}:{}:{};", b.name, b.center_nm.to_bits(), b.width_nm.to_bits());
    }
    let mut h = Sha256::new();
    h.update(desc.as_bytes());
    h.update(model.fingerprint());
    h.finalize().into()
}

/// Samples, simulates and filters until the table holds `lhs.target_size` entries.
///
/// Sampling and acceptance are sequential and seeded; only the forward
/// simulation of a round's candidates is spread over `workers` threads, so
/// the result is identical for any worker count.
pub fn build_lut(
    lhs: &LhsConfig,
    constraints: &ConstraintConfig,
    model: &dyn ForwardModel,
    band_set: &BandSet,
    workers: usize,
) -> Result<(LookupTable, BuildReport)> {
    let m = lhs.target_size;
    if m == 0 {
        return Err(Error::Config("LUT size must be at least 1".into()));
    }
    let grid = *model.grid();
    constraints.validate(&grid)?;
    let resampler = band_set.resampler(&grid)?;
    let n = grid.count();
    let nb = band_set.len();

    let mut params = Vec::with_capacity(m);
    let mut spectra = Vec::with_capacity(m * n);
    let mut bands = Vec::with_capacity(m * nb);
    let mut report = BuildReport::default();
    let max_rounds = if lhs.refill { lhs.max_refill_rounds + 1 } else { 1 };

    for round in 0..max_rounds {
        report.rounds += 1;
        let candidates = lhs_sample(&lhs.ranges, m, round_seed(lhs.seed, round));
        report.candidates += candidates.len();
        let coupled: Vec<ParameterVector> = candidates
            .into_iter()
            .filter(|p| cab_lai_accept(p, constraints))
            .collect();
        report.rejected_coupling += m - coupled.len();

        let simulated = exec::try_map_indexed(coupled.len(), workers, |i| {
            model.simulate(&coupled[i]).map(|s| s.into_values())
        })?;
        for (p, s) in coupled.iter().zip(simulated) {
            if !green_peak_accept(&s, &grid, constraints) {
                report.rejected_green += 1;
                continue;
            }
            report.accepted += 1;
            if params.len() < m {
                bands.extend(resampler.resample(&s).into_iter().map(|v| v as f32));
                spectra.extend(s.into_iter().map(|v| v as f32));
                params.push(*p);
            }
        }
        if params.len() == m {
            break;
        }
    }
    if lhs.refill && params.len() < m {
        return Err(Error::Infeasible {
            accepted: params.len(),
            target: m,
            rounds: report.rounds,
            rate: report.acceptance_rate(),
        });
    }
    let digest = config_digest(lhs, constraints, model, band_set);
    let lut = LookupTable::from_parts(grid, band_set.names(), params, spectra, bands, lhs.seed, digest)?;
    Ok((lut, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rtm::ReferenceRtm;
    use crate::spectral::{default_sensor_bands, make_grid, Spectrum};

    /// Brute-force stratum counts: one sample per `1/m` slice of the range.
    fn assert_stratified(samples: &[ParameterVector], ranges: &ParameterRanges) {
        let m = samples.len();
        for t in Trait::ALL {
            let (lo, hi) = ranges.get(t);
            if lo == hi {
                assert!(samples.iter().all(|p| p.get(t) == lo));
                continue;
            }
            let mut counts = vec![0usize; m];
            for p in samples {
                let v = p.get(t);
                assert!(v > lo && v < hi, "{} = {v}", t.name());
                let k = ((v - lo) / (hi - lo) * m as f64).floor() as usize;
                counts[k.min(m - 1)] += 1;
            }
            assert!(counts.iter().all(|&c| c == 1), "{}: {counts:?}", t.name());
        }
    }

    #[test]
    fn lhs_is_stratified() {
        let r = ParameterRanges::standard(0);
        for m in [1, 2, 10, 256, 1000] {
            assert_stratified(&lhs_sample(&r, m, 42 + m as u64), &r);
        }
    }

    #[test]
    fn lhs_fixed_dimensions_and_determinism() {
        let r = ParameterRanges::standard(3);
        let a = lhs_sample(&r, 50, 9);
        assert!(a.iter().all(|p| p.get(Trait::LidfB) == 0.0 && p.get(Trait::TypeLidf) == 1.0));
        assert!(a.iter().all(|p| p.soil_index() == 3.0));
        assert_eq!(a, lhs_sample(&r, 50, 9));
        assert_ne!(a, lhs_sample(&r, 50, 10));
    }

    #[test]
    fn coupling_envelope() {
        let c = ConstraintConfig::default();
        let p = ParameterRanges::standard(0).midpoint();
        assert!(cab_lai_accept(&p.with(Trait::Lai, 3.0).with(Trait::Cab, 55.0), &c));
        assert!(!cab_lai_accept(&p.with(Trait::Lai, 0.0).with(Trait::Cab, 160.0), &c));
        assert!(cab_lai_accept(&p.with(Trait::Lai, 2.0).with(Trait::Cab, 80.0), &c));
        assert!(!cab_lai_accept(&p.with(Trait::Lai, 2.0).with(Trait::Cab, 80.000001), &c));
        let off = ConstraintConfig::disabled();
        assert!(cab_lai_accept(&p.with(Trait::Lai, 0.0).with(Trait::Cab, 160.0), &off));
    }

    fn peaked(at: f64) -> Vec<f64> {
        SpectralGrid::canonical()
            .wavelengths()
            .map(|w| 0.5 - ((w - at) / 100.0).powi(2).min(0.4))
            .collect()
    }

    #[test]
    fn green_peak_filter() {
        let g = SpectralGrid::canonical();
        let c = ConstraintConfig::default();
        assert!(!green_peak_accept(&peaked(530.0), &g, &c));
        assert!(green_peak_accept(&peaked(550.0), &g, &c));
        let rising: Vec<f64> = g.wavelengths().map(|w| w / 3000.0).collect();
        assert_eq!(green_peak_wavelength(&rising, &g, c.green_window), Some(600.0));
        assert!(green_peak_accept(&rising, &g, &c));
        let flat = vec![0.2; g.count()];
        assert_eq!(green_peak_wavelength(&flat, &g, c.green_window), Some(600.0));
        assert!(green_peak_accept(&peaked(530.0), &g, &ConstraintConfig::disabled()));
    }

    fn small_rtm() -> ReferenceRtm {
        ReferenceRtm::reference(&["france"]).unwrap()
    }

    #[test]
    fn build_without_filters_keeps_everything() {
        let rtm = small_rtm();
        let lhs = LhsConfig::new(100, 1, ParameterRanges::standard(0));
        let (lut, rep) = build_lut(&lhs, &ConstraintConfig::disabled(), &rtm, &default_sensor_bands(), 1).unwrap();
        assert_eq!(lut.len(), 100);
        assert_eq!(rep.rounds, 1);
        assert_eq!(rep.rejected_coupling + rep.rejected_green, 0);
        assert_stratified(lut.all_params(), &lhs.ranges);
        // stored spectra are the forward model output rounded to f32
        let s = rtm.simulate(lut.params(17)).unwrap();
        let as_f32: Vec<f32> = s.values().iter().map(|&v| v as f32).collect();
        assert_eq!(lut.spectrum(17), as_f32.as_slice());
        let sp = Spectrum::new(*rtm.grid(), s.values().to_vec()).unwrap();
        let b4 = crate::spectral::band_average(&sp, &default_sensor_bands().bands()[3]).unwrap();
        assert_eq!(lut.band_values(17)[3], b4 as f32);
    }

    #[test]
    fn build_with_filters_respects_them() {
        let rtm = small_rtm();
        let lhs = LhsConfig::new(100, 5, ParameterRanges::standard(0));
        let c = ConstraintConfig::default();
        let (lut, rep) = build_lut(&lhs, &c, &rtm, &default_sensor_bands(), 2).unwrap();
        assert_eq!(lut.len(), 100);
        assert!(rep.rejected_coupling > 0);
        assert!(lut.all_params().iter().all(|p| cab_lai_accept(p, &c)));
        for i in 0..lut.len() {
            let s: Vec<f64> = lut.spectrum(i).iter().map(|&v| v as f64).collect();
            let full = rtm.simulate(lut.params(i)).unwrap();
            assert!(green_peak_accept(full.values(), rtm.grid(), &c));
            assert_eq!(s.len(), 211);
        }
    }

    #[test]
    fn no_refill_only_removes() {
        let rtm = small_rtm();
        let mut lhs = LhsConfig::new(200, 5, ParameterRanges::standard(0));
        lhs.refill = false;
        let (lut, rep) = build_lut(&lhs, &ConstraintConfig::default(), &rtm, &default_sensor_bands(), 1).unwrap();
        assert_eq!(rep.rounds, 1);
        assert_eq!(lut.len(), rep.accepted);
        assert!(lut.len() < 200);
    }

    #[test]
    fn infeasible_constraints_report_rate() {
        let rtm = small_rtm();
        let mut lhs = LhsConfig::new(50, 5, ParameterRanges::standard(0));
        lhs.max_refill_rounds = 2;
        let c = ConstraintConfig {
            coupling_intercept: 1000.0,
            ..Default::default()
        };
        match build_lut(&lhs, &c, &rtm, &default_sensor_bands(), 1) {
            Err(Error::Infeasible { accepted, target, rounds, rate }) => {
                assert_eq!((accepted, target, rounds), (0, 50, 3));
                assert_eq!(rate, 0.0);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn build_is_deterministic_across_workers() {
        let rtm = small_rtm();
        let lhs = LhsConfig::new(120, 77, ParameterRanges::standard(0));
        let c = ConstraintConfig::default();
        let bs = default_sensor_bands();
        let a = build_lut(&lhs, &c, &rtm, &bs, 1).unwrap().0.to_bytes();
        let b = build_lut(&lhs, &c, &rtm, &bs, 1).unwrap().0.to_bytes();
        let c8 = build_lut(&lhs, &c, &rtm, &bs, 8).unwrap().0.to_bytes();
        assert_eq!(a, b);
        assert_eq!(a, c8);
    }

    fn tiny_lut(grid: SpectralGrid) -> LookupTable {
        let params = vec![ParameterRanges::standard(0).midpoint(); 3];
        let spectra = (0..3 * grid.count()).map(|i| i as f32 * 0.001).collect();
        let bands = (0..3 * 2).map(|i| i as f32 * 0.1).collect();
        LookupTable::from_parts(grid, vec!["R".into(), "NIR".into()], params, spectra, bands, 9, [7; 32]).unwrap()
    }

    #[test]
    fn file_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.lut");
        let lut = tiny_lut(SpectralGrid::canonical());
        save_lut(&lut, &p).unwrap();
        let back = load_lut(&p).unwrap();
        assert_eq!(back, lut);
        assert_eq!(back.to_bytes(), lut.to_bytes());
    }

    #[test]
    fn file_errors() {
        let lut = tiny_lut(SpectralGrid::canonical());
        let bytes = lut.to_bytes();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LookupTable::from_bytes(&bad), Err(Error::Format(m)) if m.contains("magic")));

        let mut bad = bytes.clone();
        bad[6] = 2;
        assert!(matches!(LookupTable::from_bytes(&bad), Err(Error::Format(m)) if m.contains("version")));

        assert!(matches!(LookupTable::from_bytes(&bytes[..bytes.len() - 9]), Err(Error::Format(_))));
        assert!(matches!(LookupTable::from_bytes(&bytes[..20]), Err(Error::Format(_))));

        let mut bad = bytes.clone();
        let mid = bad.len() / 2;
        bad[mid] ^= 0x40;
        assert!(matches!(LookupTable::from_bytes(&bad), Err(Error::Format(m)) if m.contains("checksum")));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("short.lut");
        save_lut(&tiny_lut(make_grid(400.0, 2490.0, 10.0).unwrap()), &p).unwrap();
        assert!(load_lut(&p).is_ok());
        assert!(matches!(
            load_lut_for_grid(&p, &SpectralGrid::canonical()),
            Err(Error::GridMismatch { .. })
        ));
    }

    #[test]
    fn round_seeds_differ() {
        assert_eq!(round_seed(5, 0), 5);
        let s: std::collections::HashSet<u64> = (0..50).map(|r| round_seed(5, r)).collect();
        assert_eq!(s.len(), 50);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn lhs_stratified_for_any_seed(seed in any::<u64>(), m in 1usize..300) {
                let r = ParameterRanges::standard(1);
                assert_stratified(&lhs_sample(&r, m, seed), &r);
            }

            #[test]
            fn lut_bytes_round_trip(params in proptest::collection::vec(proptest::array::uniform16(-1e3f64..1e3), 1..8),
                                    seed in any::<u64>()) {
                let g = make_grid(400.0, 450.0, 10.0).unwrap();
                let m = params.len();
                let spectra: Vec<f32> = (0..m * g.count()).map(|i| (i as f32).sin()).collect();
                let bands: Vec<f32> = (0..m).map(|i| i as f32 / 7.0).collect();
                let lut = LookupTable::from_parts(
                    g, vec!["only".into()], params.into_iter().map(ParameterVector).collect(),
                    spectra, bands, seed, [1; 32]).unwrap();
                prop_assert_eq!(LookupTable::from_bytes(&lut.to_bytes()).unwrap(), lut);
            }
        }
    }
}
