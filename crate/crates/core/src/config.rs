//! Pipeline settings from `key = value` files, with programmatic overrides.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inversion::{InversionConfig, SearchKernel};
use crate::lut::{ConstraintConfig, LhsConfig};
use crate::rtm::{
    generate_reference_coefficients, generate_reference_soils, CoefficientTable, ReferenceRtm, RtmConfig, SoilLibrary,
};
use crate::spectral::{default_sensor_bands, make_grid, BandSet, ParameterRanges, SpectralGrid};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub grid_start_nm: f64,
    pub grid_end_nm: f64,
    pub grid_step_nm: f64,
    pub band_file: Option<PathBuf>,
    pub coeff_file: Option<PathBuf>,
    pub soil_file: Option<PathBuf>,
    pub region: String,
    pub lut_size: usize,
    pub max_refill_rounds: usize,
    pub refill: bool,
    pub constraints: ConstraintConfig,
    pub inversion: InversionConfig,
    pub rtm: RtmConfig,
    pub workers: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            grid_start_nm: 400.0,
            grid_end_nm: 2500.0,
            grid_step_nm: 10.0,
            band_file: None,
            coeff_file: None,
            soil_file: None,
            region: "france".into(),
            lut_size: 50_000,
            max_refill_rounds: 20,
            refill: true,
            constraints: ConstraintConfig::default(),
            inversion: InversionConfig::default(),
            rtm: RtmConfig::default(),
            workers: crate::exec::available_workers(),
            seed: 42,
        }
    }
}

/// Keys accepted by [`PipelineConfig::set`].
pub const CONFIG_KEYS: &[&str] = &[
    "grid_start_nm",
    "grid_end_nm",
    "grid_step_nm",
    "band_file",
    "coeff_file",
    "soil_file",
    "region",
    "lut_size",
    "max_refill_rounds",
    "refill",
    "coupling",
    "coupling_intercept",
    "coupling_slope",
    "coupling_halfwidth",
    "green_filter",
    "green_window_start_nm",
    "green_window_end_nm",
    "green_threshold_nm",
    "n_best",
    "low_percentile",
    "high_percentile",
    "search_kernel",
    "k_d",
    "max_zenith_deg",
    "workers",
    "seed",
];

fn parse_val<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected a boolean, got {value:?}"))),
    }
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl PipelineConfig {
    /// Applies one setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "grid_start_nm" => self.grid_start_nm = parse_val(key, v)?,
            "grid_end_nm" => self.grid_end_nm = parse_val(key, v)?,
            "grid_step_nm" => self.grid_step_nm = parse_val(key, v)?,
            "band_file" => self.band_file = opt_path(v),
            "coeff_file" => self.coeff_file = opt_path(v),
            "soil_file" => self.soil_file = opt_path(v),
            "region" => self.region = v.to_string(),
            "lut_size" => self.lut_size = parse_val(key, v)?,
            "max_refill_rounds" => self.max_refill_rounds = parse_val(key, v)?,
            "refill" => self.refill = parse_bool(key, v)?,
            "coupling" => self.constraints.coupling_enabled = parse_bool(key, v)?,
            "coupling_intercept" => self.constraints.coupling_intercept = parse_val(key, v)?,
            "coupling_slope" => self.constraints.coupling_slope = parse_val(key, v)?,
            "coupling_halfwidth" => self.constraints.coupling_halfwidth = parse_val(key, v)?,
            "green_filter" => self.constraints.green_peak_enabled = parse_bool(key, v)?,
            "green_window_start_nm" => self.constraints.green_window.0 = parse_val(key, v)?,
            "green_window_end_nm" => self.constraints.green_window.1 = parse_val(key, v)?,
            "green_threshold_nm" => self.constraints.green_threshold = parse_val(key, v)?,
            "n_best" => self.inversion.n_best = parse_val(key, v)?,
            "low_percentile" => self.inversion.low_percentile = parse_val(key, v)?,
            "high_percentile" => self.inversion.high_percentile = parse_val(key, v)?,
            "search_kernel" => {
                self.inversion.kernel = match v {
                    "naive" => SearchKernel::Naive,
                    "pruned" => SearchKernel::Pruned,
                    "indexed" => SearchKernel::Indexed,
                    _ => {
                        return Err(Error::Config(format!(
                            "`search_kernel`: expected naive, pruned or indexed, got {v:?}"
                        )))
                    }
                }
            }
            "k_d" => self.rtm.k_d = parse_val(key, v)?,
            "max_zenith_deg" => self.rtm.max_zenith_deg = parse_val(key, v)?,
            "workers" => self.workers = parse_val(key, v)?,
            "seed" => self.seed = parse_val(key, v)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` and `;` start comments, `[section]` lines are ignored.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split(['#', ';']).next().unwrap_or("").trim();
            if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = PipelineConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        PipelineConfig::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Settings in the file format, one key per line.
    pub fn to_text(&self) -> String {
        let p = |o: &Option<PathBuf>| o.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let kernel = match self.inversion.kernel {
            SearchKernel::Naive => "naive",
            SearchKernel::Pruned => "pruned",
            SearchKernel::Indexed => "indexed",
        };
        let c = &self.constraints;
        let i = &self.inversion;
        format!(
            "grid_start_nm = {}\ngrid_end_nm = {}\ngrid_step_nm = {}\nband_file = {}\ncoeff_file = {}\nsoil_file = {}\n\
             region = {}\nlut_size = {}\nmax_refill_rounds = {}\nrefill = {}\ncoupling = {}\ncoupling_intercept = {}\n\
             coupling_slope = {}\ncoupling_halfwidth = {}\ngreen_filter = {}\ngreen_window_start_nm = {}\n\
             green_window_end_nm = {}\ngreen_threshold_nm = {}\nn_best = {}\nlow_percentile = {}\nhigh_percentile = {}\n\
             search_kernel = {kernel}\nk_d = {}\nmax_zenith_deg = {}\nworkers = {}\nseed = {}\n",
            self.grid_start_nm,
            self.grid_end_nm,
            self.grid_step_nm,
            p(&self.band_file),
            p(&self.coeff_file),
            p(&self.soil_file),
            self.region,
            self.lut_size,
            self.max_refill_rounds,
            self.refill,
            c.coupling_enabled,
            c.coupling_intercept,
            c.coupling_slope,
            c.coupling_halfwidth,
            c.green_peak_enabled,
            c.green_window.0,
            c.green_window.1,
            c.green_threshold,
            i.n_best,
            i.low_percentile,
            i.high_percentile,
            self.rtm.k_d,
            self.rtm.max_zenith_deg,
            self.workers,
            self.seed,
        )
    }

    pub fn grid(&self) -> Result<SpectralGrid> {
        make_grid(self.grid_start_nm, self.grid_end_nm, self.grid_step_nm)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.lut_size == 0 {
            return Err(Error::Config("lut_size must be at least 1".into()));
        }
        if self.region.trim().is_empty() {
            return Err(Error::Config("region must not be empty".into()));
        }
        self.constraints.validate(&grid)?;
        self.rtm.validate()?;
        self.inversion.validate(self.lut_size)
    }

    pub fn band_set(&self) -> Result<BandSet> {
        match &self.band_file {
            Some(p) => BandSet::from_file(p),
            None => Ok(default_sensor_bands()),
        }
    }

    pub fn coefficients(&self) -> Result<CoefficientTable> {
        let grid = self.grid()?;
        match &self.coeff_file {
            Some(p) => CoefficientTable::read_csv(p, &grid),
            None => Ok(generate_reference_coefficients(&grid)),
        }
    }

    pub fn soils(&self) -> Result<SoilLibrary> {
        let grid = self.grid()?;
        match &self.soil_file {
            Some(p) => SoilLibrary::read_csv(p, &grid),
            None => generate_reference_soils(&grid, &[self.region.as_str()]),
        }
    }

    /// Forward model and the library index of the region's soil.
    pub fn model(&self) -> Result<(ReferenceRtm, usize)> {
        let soils = self.soils()?;
        let idx = soils
            .index_of(&self.region)
            .ok_or_else(|| Error::Lookup(format!("region {:?} not in soil library {:?}", self.region, soils.names())))?;
        Ok((ReferenceRtm::new(self.coefficients()?, soils, self.rtm)?, idx))
    }

    pub fn ranges(&self, soil_index: usize) -> ParameterRanges {
        ParameterRanges::standard(soil_index)
    }

    pub fn lhs(&self, soil_index: usize) -> LhsConfig {
        LhsConfig {
            target_size: self.lut_size,
            seed: self.seed,
            ranges: self.ranges(soil_index),
            max_refill_rounds: self.max_refill_rounds,
            refill: self.refill,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_override() {
        let text = "# run\n[lut]\nlut_size = 2000 ; small\nregion = spain\ncoupling = off\nsearch_kernel = naive\n\nn_best=5\n";
        let mut c = PipelineConfig::parse(text).unwrap();
        assert_eq!(c.lut_size, 2000);
        assert_eq!(c.region, "spain");
        assert!(!c.constraints.coupling_enabled);
        assert_eq!(c.inversion.kernel, SearchKernel::Naive);
        assert_eq!(c.inversion.n_best, 5);
        c.set("lut_size", "30").unwrap();
        assert_eq!(c.lut_size, 30);
    }

    #[test]
    fn errors_name_line_and_key() {
        match PipelineConfig::parse("seed = 1\nbogus = 3\n") {
            Err(Error::Config(m)) => assert!(m.contains("line 2") && m.contains("bogus"), "{m}"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(PipelineConfig::parse("workers = many"), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::parse("just text"), Err(Error::Config(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut c = PipelineConfig::default();
        c.set("soil_file", "soils.csv").unwrap();
        c.set("green_threshold_nm", "545.5").unwrap();
        let back = PipelineConfig::parse(&c.to_text()).unwrap();
        assert_eq!(back, c);
        for k in CONFIG_KEYS {
            assert!(c.to_text().contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn validate_catches_bad_values() {
        let mut c = PipelineConfig::default();
        assert!(c.validate().is_ok());
        c.workers = 0;
        assert!(c.validate().is_err());
        c.workers = 1;
        c.set("n_best", "0").unwrap();
        assert!(c.validate().is_err());
        c.set("n_best", "10").unwrap();
        c.set("grid_end_nm", "2505").unwrap();
        assert!(matches!(c.validate(), Err(Error::Grid(_))));
    }

    #[test]
    fn region_selects_soil() {
        let c = PipelineConfig::parse("region = india").unwrap();
        let (m, idx) = c.model().unwrap();
        assert_eq!(m.soils.names()[idx], "india");
    }
}
