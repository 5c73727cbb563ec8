//! Wavelength grid, spectra, sensor bands and the 16-trait parameter model.

use std::fmt;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};

/// Regular wavelength axis: `wavelength(i) = start_nm + i * step_nm`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralGrid {
    start_nm: f64,
    step_nm: f64,
    count: usize,
}

impl SpectralGrid {
    /// 400 to 2500 nm at 10 nm, 211 samples.
    pub fn canonical() -> Self {
        SpectralGrid {
            start_nm: 400.0,
            step_nm: 10.0,
            count: 211,
        }
    }

    /// Builds a grid from explicit start, step and sample count.
    pub fn from_parts(start_nm: f64, step_nm: f64, count: usize) -> Result<Self> {
        if !(start_nm.is_finite() && step_nm.is_finite()) || step_nm <= 0.0 || count == 0 {
            return Err(Error::Grid(format!(
                "invalid grid start={start_nm} step={step_nm} count={count}"
            )));
        }
        Ok(SpectralGrid {
            start_nm,
            step_nm,
            count,
        })
    }

    pub fn start_nm(&self) -> f64 {
        self.start_nm
    }

    pub fn step_nm(&self) -> f64 {
        self.step_nm
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn wavelength(&self, i: usize) -> f64 {
        self.start_nm + i as f64 * self.step_nm
    }

    pub fn end_nm(&self) -> f64 {
        self.wavelength(self.count - 1)
    }

    pub fn wavelengths(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.count).map(|i| self.wavelength(i))
    }

    /// Indices of grid samples inside `[lo, hi]`, endpoints inclusive.
    pub fn samples_within(&self, lo: f64, hi: f64) -> Range<usize> {
        let mut first = None;
        let mut last = 0;
        for i in 0..self.count {
            let w = self.wavelength(i);
            if w >= lo && w <= hi {
                first.get_or_insert(i);
                last = i + 1;
            }
        }
        match first {
            Some(f) => f..last,
            None => 0..0,
        }
    }
}

impl fmt::Display for SpectralGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "grid(start={} nm, step={} nm, count={})",
            self.start_nm, self.step_nm, self.count
        )
    }
}

/// Builds the grid spanning `[start_nm, end_nm]` at `step_nm`.
pub fn make_grid(start_nm: f64, end_nm: f64, step_nm: f64) -> Result<SpectralGrid> {
    if !(step_nm > 0.0) || !start_nm.is_finite() || !end_nm.is_finite() {
        return Err(Error::Grid(format!("step must be positive, got {step_nm}")));
    }
    if end_nm < start_nm {
        return Err(Error::Grid(format!(
            "end {end_nm} nm precedes start {start_nm} nm"
        )));
    }
    let intervals = (end_nm - start_nm) / step_nm;
    let rounded = intervals.round();
    if (intervals - rounded).abs() > 1e-9 {
        return Err(Error::Grid(format!(
            "range {start_nm}..{end_nm} nm is not divisible by step {step_nm} nm"
        )));
    }
    SpectralGrid::from_parts(start_nm, step_nm, rounded as usize + 1)
}

/// Reflectance values on a [`SpectralGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    grid: SpectralGrid,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(grid: SpectralGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.count() {
            return Err(Error::Shape(format!(
                "spectrum has {} values for a {}-sample grid",
                values.len(),
                grid.count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "non-finite reflectance at {} nm",
                grid.wavelength(i)
            )));
        }
        Ok(Spectrum { grid, values })
    }

    pub fn constant(grid: SpectralGrid, value: f64) -> Self {
        Spectrum {
            grid,
            values: vec![value; grid.count()],
        }
    }

    pub fn from_fn(grid: SpectralGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Spectrum::new(grid, grid.wavelengths().map(f).collect())
    }

    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Value at the grid sample closest to `nm`.
    pub fn at_nm(&self, nm: f64) -> f64 {
        let i = ((nm - self.grid.start_nm) / self.grid.step_nm).round();
        let i = (i.max(0.0) as usize).min(self.grid.count - 1);
        self.values[i]
    }
}

/// Boxcar sensor band: flat response over `[center - width/2, center + width/2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorBand {
    pub name: String,
    pub center_nm: f64,
    pub width_nm: f64,
}

impl SensorBand {
    pub fn new(name: impl Into<String>, center_nm: f64, width_nm: f64) -> Self {
        SensorBand {
            name: name.into(),
            center_nm,
            width_nm,
        }
    }

    pub fn lower_nm(&self) -> f64 {
        self.center_nm - self.width_nm / 2.0
    }

    pub fn upper_nm(&self) -> f64 {
        self.center_nm + self.width_nm / 2.0
    }

    /// Grid samples the band averages over; errors if none.
    pub fn covered_samples(&self, grid: &SpectralGrid) -> Result<Range<usize>> {
        let r = grid.samples_within(self.lower_nm(), self.upper_nm());
        if r.is_empty() {
            return Err(Error::BandCoverage(format!(
                "band {} [{}, {}] nm covers no sample of {grid}",
                self.name,
                self.lower_nm(),
                self.upper_nm()
            )));
        }
        Ok(r)
    }
}

/// Unweighted mean of the grid samples inside the band interval.
pub fn band_average(spectrum: &Spectrum, band: &SensorBand) -> Result<f64> {
    let r = band.covered_samples(spectrum.grid())?;
    let n = r.len() as f64;
    Ok(spectrum.values[r].iter().sum::<f64>() / n)
}

/// Ordered set of uniquely named sensor bands.
#[derive(Debug, Clone, PartialEq)]
pub struct BandSet {
    bands: Vec<SensorBand>,
}

impl BandSet {
    pub fn new(bands: Vec<SensorBand>) -> Result<Self> {
        if bands.is_empty() {
            return Err(Error::Config("band set is empty".into()));
        }
        for (i, b) in bands.iter().enumerate() {
            if !(b.width_nm >= 0.0) || !b.center_nm.is_finite() {
                return Err(Error::Config(format!("band {} has invalid geometry", b.name)));
            }
            if bands[..i].iter().any(|o| o.name == b.name) {
                return Err(Error::Config(format!("duplicate band name {}", b.name)));
            }
        }
        Ok(BandSet { bands })
    }

    /// Parses `name,center_nm,width_nm` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut bands = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            let bad = || Error::Config(format!("band file line {}: expected name,center_nm,width_nm", lineno + 1));
            if fields.len() != 3 || fields[0].is_empty() {
                return Err(bad());
            }
            let center = fields[1].parse::<f64>().map_err(|_| bad())?;
            let width = fields[2].parse::<f64>().map_err(|_| bad())?;
            bands.push(SensorBand::new(fields[0], center, width));
        }
        BandSet::new(bands)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BandSet::parse(&text)
    }

    pub fn bands(&self) -> &[SensorBand] {
        &self.bands
    }

    pub fn len(&self) -> usize {
        self.bands.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bands.is_empty()
    }

    pub fn names(&self) -> Vec<String> {
        self.bands.iter().map(|b| b.name.clone()).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.bands.iter().position(|b| b.name == name)
    }

    /// Precomputes the sample ranges for repeated resampling on `grid`.
    pub fn resampler(&self, grid: &SpectralGrid) -> Result<BandResampler> {
        let ranges = self
            .bands
            .iter()
            .map(|b| b.covered_samples(grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(BandResampler {
            grid: *grid,
            ranges,
        })
    }
}

/// Band averaging with sample ranges resolved once.
#[derive(Debug, Clone)]
pub struct BandResampler {
    grid: SpectralGrid,
    ranges: Vec<Range<usize>>,
}

impl BandResampler {
    pub fn grid(&self) -> &SpectralGrid {
        &self.grid
    }

    pub fn resample(&self, values: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.grid.count());
        self.ranges
            .iter()
            .map(|r| values[r.clone()].iter().sum::<f64>() / r.len() as f64)
            .collect()
    }
}

/// The twelve Sentinel-2 bands B1..B12 (B10 excluded) as boxcars.
pub fn default_sensor_bands() -> BandSet {
    const DEFAULTS: [(&str, f64, f64); 12] = [
        ("B1", 443.0, 21.0),
        ("B2", 490.0, 66.0),
        ("B3", 560.0, 36.0),
        ("B4", 665.0, 31.0),
        ("B5", 705.0, 15.0),
        ("B6", 740.0, 15.0),
        ("B7", 783.0, 20.0),
        ("B8", 842.0, 115.0),
        ("B8A", 865.0, 21.0),
        ("B9", 945.0, 20.0),
        ("B11", 1610.0, 90.0),
        ("B12", 2190.0, 180.0),
    ];
    BandSet {
        bands: DEFAULTS
            .iter()
            .map(|&(n, c, w)| SensorBand::new(n, c, w))
            .collect(),
    }
}

/// Number of scalars in a [`ParameterVector`].
pub const TRAIT_COUNT: usize = 16;

/// Canonical trait order of parameter vectors and trait rasters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Trait {
    NStruct = 0,
    Cab,
    Car,
    Cant,
    Cbrown,
    Cw,
    Cm,
    Lai,
    LidfA,
    LidfB,
    TypeLidf,
    Hspot,
    SoilIndex,
    ThetaS,
    ThetaV,
    PhiRel,
}

impl Trait {
    pub const ALL: [Trait; TRAIT_COUNT] = [
        Trait::NStruct,
        Trait::Cab,
        Trait::Car,
        Trait::Cant,
        Trait::Cbrown,
        Trait::Cw,
        Trait::Cm,
        Trait::Lai,
        Trait::LidfA,
        Trait::LidfB,
        Trait::TypeLidf,
        Trait::Hspot,
        Trait::SoilIndex,
        Trait::ThetaS,
        Trait::ThetaV,
        Trait::PhiRel,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Band name used in trait rasters.
    pub fn name(self) -> &'static str {
        match self {
            Trait::NStruct => "N",
            Trait::Cab => "Cab",
            Trait::Car => "Car",
            Trait::Cant => "Cant",
            Trait::Cbrown => "Cbrown",
            Trait::Cw => "Cw",
            Trait::Cm => "Cm",
            Trait::Lai => "LAI",
            Trait::LidfA => "LIDFa",
            Trait::LidfB => "LIDFb",
            Trait::TypeLidf => "TypeLIDF",
            Trait::Hspot => "hspot",
            Trait::SoilIndex => "soil_index",
            Trait::ThetaS => "tts",
            Trait::ThetaV => "tto",
            Trait::PhiRel => "psi",
        }
    }

    pub fn from_name(name: &str) -> Option<Trait> {
        Trait::ALL.iter().copied().find(|t| t.name().eq_ignore_ascii_case(name))
    }

    pub fn names() -> Vec<String> {
        Trait::ALL.iter().map(|t| t.name().to_string()).collect()
    }
}

/// One pixel's trait state in canonical [`Trait`] order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterVector(pub [f64; TRAIT_COUNT]);

impl ParameterVector {
    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; TRAIT_COUNT] = values.try_into().map_err(|_| {
            Error::Shape(format!(
                "parameter vector needs {TRAIT_COUNT} values, got {}",
                values.len()
            ))
        })?;
        Ok(ParameterVector(arr))
    }

    pub fn as_array(&self) -> &[f64; TRAIT_COUNT] {
        &self.0
    }

    pub fn get(&self, t: Trait) -> f64 {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Trait, v: f64) {
        self.0[t.index()] = v;
    }

    pub fn with(mut self, t: Trait, v: f64) -> Self {
        self.set(t, v);
        self
    }

    pub fn n_struct(&self) -> f64 {
        self.get(Trait::NStruct)
    }
    pub fn cab(&self) -> f64 {
        self.get(Trait::Cab)
    }
    pub fn car(&self) -> f64 {
        self.get(Trait::Car)
    }
    pub fn cant(&self) -> f64 {
        self.get(Trait::Cant)
    }
    pub fn cbrown(&self) -> f64 {
        self.get(Trait::Cbrown)
    }
    pub fn cw(&self) -> f64 {
        self.get(Trait::Cw)
    }
    pub fn cm(&self) -> f64 {
        self.get(Trait::Cm)
    }
    pub fn lai(&self) -> f64 {
        self.get(Trait::Lai)
    }
    pub fn lidfa(&self) -> f64 {
        self.get(Trait::LidfA)
    }
    pub fn hspot(&self) -> f64 {
        self.get(Trait::Hspot)
    }
    pub fn soil_index(&self) -> f64 {
        self.get(Trait::SoilIndex)
    }
    pub fn theta_s(&self) -> f64 {
        self.get(Trait::ThetaS)
    }
    pub fn theta_v(&self) -> f64 {
        self.get(Trait::ThetaV)
    }
    pub fn phi_rel(&self) -> f64 {
        self.get(Trait::PhiRel)
    }
}

/// Per-trait `[min, max]` intervals; `min == max` marks a fixed parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParameterRanges(pub [(f64, f64); TRAIT_COUNT]);

impl ParameterRanges {
    /// Combined leaf/canopy ranges with the soil selector fixed at `soil_index`.
    pub fn standard(soil_index: usize) -> Self {
        let s = soil_index as f64;
        ParameterRanges([
            (1.0, 2.5),
            (0.0, 160.0),
            (0.0, 60.0),
            (0.0, 5.0),
            (0.0, 1.0),
            (0.0, 0.07),
            (0.0, 0.1),
            (0.0, 10.0),
            (30.0, 70.0),
            (0.0, 0.0),
            (1.0, 1.0),
            (0.01, 0.5),
            (s, s),
            (15.0, 80.0),
            (0.0, 35.0),
            (100.0, 150.0),
        ])
    }

    pub fn new(ranges: [(f64, f64); TRAIT_COUNT]) -> Result<Self> {
        for (t, &(lo, hi)) in Trait::ALL.iter().zip(ranges.iter()) {
            if !(lo.is_finite() && hi.is_finite()) || lo > hi {
                return Err(Error::Config(format!(
                    "range for {} is invalid: [{lo}, {hi}]",
                    t.name()
                )));
            }
        }
        Ok(ParameterRanges(ranges))
    }

    pub fn get(&self, t: Trait) -> (f64, f64) {
        self.0[t.index()]
    }

    pub fn set(&mut self, t: Trait, lo: f64, hi: f64) -> Result<()> {
        let mut r = self.0;
        r[t.index()] = (lo, hi);
        *self = ParameterRanges::new(r)?;
        Ok(())
    }

    pub fn is_degenerate(&self, t: Trait) -> bool {
        let (lo, hi) = self.get(t);
        lo == hi
    }

    /// First trait outside its interval, if any.
    pub fn first_violation(&self, p: &ParameterVector) -> Option<Trait> {
        self.first_violation_tol(p, 0.0)
    }

    /// As [`first_violation`](Self::first_violation) with a relative slack,
    /// used for values that went through float32 storage.
    pub fn first_violation_tol(&self, p: &ParameterVector, rel_tol: f64) -> Option<Trait> {
        Trait::ALL.iter().copied().find(|&t| {
            let (lo, hi) = self.get(t);
            let v = p.get(t);
            let slack = rel_tol * lo.abs().max(hi.abs()).max(1.0);
            !(v >= lo - slack && v <= hi + slack)
        })
    }

    pub fn contains(&self, p: &ParameterVector) -> bool {
        self.first_violation(p).is_none()
    }

    pub fn clamp(&self, p: &ParameterVector) -> ParameterVector {
        let mut out = *p;
        for t in Trait::ALL {
            let (lo, hi) = self.get(t);
            out.set(t, p.get(t).clamp(lo, hi));
        }
        out
    }

    pub fn midpoint(&self) -> ParameterVector {
        let mut v = [0.0; TRAIT_COUNT];
        for (o, &(lo, hi)) in v.iter_mut().zip(self.0.iter()) {
            *o = 0.5 * (lo + hi);
        }
        ParameterVector(v)
    }
}
