//! End-to-end commands: synthetic inputs, dataset assembly, spectrum export
//! and the search benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::exec;
use crate::inversion::{invert_image, simulate_from_traits, SearchKernel, Searcher, TraitMaps};
use crate::lut::{load_lut_for_grid, round_seed, LookupTable};
use crate::raster::{read_raster, write_raster, write_tile_bundle, RasterCube, RasterData, TileBundle, TILE_SIZE};
use crate::rtm::ForwardModel;
use crate::spectral::{BandSet, ParameterRanges, ParameterVector, Trait, TRAIT_COUNT};

/// Stems inside one synthetic input tile directory.
pub const SENSOR_STEM: &str = "sensor";
pub const TRUTH_STEM: &str = "truth";
pub const SCENE_STEM: &str = "quality_scene_classification";
pub const MANIFEST_NAME: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSceneSpec {
    pub tiles: usize,
    pub rows: usize,
    pub cols: usize,
    /// Correlation length of the trait fields in pixels.
    pub smoothness: f64,
    /// Standard deviation of additive per-band noise.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticSceneSpec {
    fn default() -> Self {
        SyntheticSceneSpec {
            tiles: 4,
            rows: TILE_SIZE,
            cols: TILE_SIZE,
            smoothness: 8.0,
            noise_sigma: 0.0,
            seed: 42,
        }
    }
}

impl SyntheticSceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.tiles == 0 || self.rows == 0 || self.cols == 0 {
            return Err(Error::Config("tile count and tile size must be positive".into()));
        }
        if !(self.smoothness > 0.0 && self.smoothness.is_finite()) {
            return Err(Error::Config(format!("smoothness must be positive, got {}", self.smoothness)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config(format!("noise_sigma must be >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Smooth field in `[0, 1]`: uniform lattice values every `spacing` pixels,
/// blended with a smoothstep-weighted bilinear interpolant.
pub fn value_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, spacing: f64) -> Vec<f64> {
    let ny = ((rows.saturating_sub(1)) as f64 / spacing).floor() as usize + 2;
    let nx = ((cols.saturating_sub(1)) as f64 / spacing).floor() as usize + 2;
    let lattice: Vec<f64> = (0..nx * ny).map(|_| rng.random::<f64>()).collect();
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let gy = r as f64 / spacing;
        let (iy, ty) = (gy.floor() as usize, smooth(gy.fract()));
        for c in 0..cols {
            let gx = c as f64 / spacing;
            let (ix, tx) = (gx.floor() as usize, smooth(gx.fract()));
            let at = |y: usize, x: usize| lattice[y * nx + x];
            let top = at(iy, ix) + tx * (at(iy, ix + 1) - at(iy, ix));
            let bottom = at(iy + 1, ix) + tx * (at(iy + 1, ix + 1) - at(iy + 1, ix));
            out.push((top + ty * (bottom - top)).clamp(0.0, 1.0));
        }
    }
    out
}

pub fn tile_id(index: usize) -> String {
    format!("SYN_{index:04}")
}

/// One generated tile, with the exact `f64` truth kept in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTile {
    pub tile_id: String,
    pub truth: Vec<ParameterVector>,
    pub sensor: RasterCube,
    pub scene_class: RasterCube,
}

/// Trait vectors for one tile; cab is drawn inside the coupling envelope when that filter is on.
pub fn synthetic_traits(
    spec: &SyntheticSceneSpec,
    config: &PipelineConfig,
    ranges: &ParameterRanges,
    rng: &mut ChaCha8Rng,
) -> Vec<ParameterVector> {
    let n = spec.rows * spec.cols;
    let mut out = vec![ParameterVector([0.0; TRAIT_COUNT]); n];
    let mut cab_u = Vec::new();
    for t in Trait::ALL {
        let (lo, hi) = ranges.get(t);
        if lo == hi {
            out.iter_mut().for_each(|p| p.set(t, lo));
            continue;
        }
        let field = value_noise(rng, spec.rows, spec.cols, spec.smoothness);
        if t == Trait::Cab {
            cab_u = field;
            continue;
        }
        for (p, u) in out.iter_mut().zip(&field) {
            p.set(t, lo + u * (hi - lo));
        }
    }
    let (cab_lo, cab_hi) = ranges.get(Trait::Cab);
    let c = &config.constraints;
    for (p, u) in out.iter_mut().zip(&cab_u) {
        let (mut lo, mut hi) = (cab_lo, cab_hi);
        if c.coupling_enabled {
            let centre = c.coupling_intercept + c.coupling_slope * p.lai();
            lo = lo.max(centre - c.coupling_halfwidth);
            hi = hi.min(centre + c.coupling_halfwidth);
            if lo > hi {
                (lo, hi) = (cab_lo, cab_hi);
            }
        }
        p.set(Trait::Cab, lo + u * (hi - lo));
    }
    out
}

/// Generates tile `index`: smooth traits, forward simulation, band averaging, noise.
pub fn synthesize_tile(
    spec: &SyntheticSceneSpec,
    config: &PipelineConfig,
    model: &dyn ForwardModel,
    ranges: &ParameterRanges,
    band_set: &BandSet,
    index: usize,
) -> Result<SyntheticTile> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(spec.seed ^ 0x5359_4e54_4845_5449, index + 1));
    let truth = synthetic_traits(spec, config, ranges, &mut rng);
    let resampler = band_set.resampler(model.grid())?;
    let sensor_px = exec::try_map_indexed(truth.len(), config.workers, |p| {
        let s = model.simulate(&truth[p]).map_err(|e| {
            Error::Parameter(format!("synthetic pixel (row {}, col {}): {e}", p / spec.cols, p % spec.cols))
        })?;
        Ok(resampler.resample(s.values()))
    })?;

    let plane = truth.len();
    let nb = band_set.len();
    let mut data = vec![0f32; plane * nb];
    let noise = (spec.noise_sigma > 0.0)
        .then(|| Normal::new(0.0, spec.noise_sigma))
        .transpose()
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    for (p, values) in sensor_px.iter().enumerate() {
        for (b, &v) in values.iter().enumerate() {
            let noisy = match &noise {
                Some(d) => (v + d.sample(&mut rng)).max(0.0),
                None => v,
            };
            data[b * plane + p] = noisy as f32;
        }
    }
    let sensor = RasterCube::new(spec.rows, spec.cols, nb, RasterData::F32(data))?.with_band_names(band_set.names())?;
    let classes: Vec<u8> = truth.iter().map(|p| if p.lai() >= 0.5 { 4 } else { 5 }).collect();
    let scene_class = RasterCube::new(spec.rows, spec.cols, 1, RasterData::U8(classes))?;
    Ok(SyntheticTile {
        tile_id: tile_id(index),
        truth,
        sensor,
        scene_class,
    })
}

fn traits_raster(rows: usize, cols: usize, params: &[ParameterVector]) -> Result<RasterCube> {
    let plane = rows * cols;
    let mut data = vec![0f32; plane * TRAIT_COUNT];
    for (p, v) in params.iter().enumerate() {
        for t in 0..TRAIT_COUNT {
            data[t * plane + p] = v.0[t] as f32;
        }
    }
    RasterCube::new(rows, cols, TRAIT_COUNT, RasterData::F32(data))?.with_band_names(Trait::names())
}

/// Writes `<out>/<tile_id>/{sensor, truth, quality_scene_classification}` for every tile.
pub fn cmd_synth_input(spec: &SyntheticSceneSpec, config: &PipelineConfig, out_dir: impl AsRef<Path>) -> Result<Vec<SyntheticTile>> {
    spec.validate()?;
    config.validate()?;
    let (model, soil) = config.model()?;
    let ranges = config.ranges(soil);
    let band_set = config.band_set()?;
    let out_dir = out_dir.as_ref();
    let mut tiles = Vec::with_capacity(spec.tiles);
    for i in 0..spec.tiles {
        let tile = synthesize_tile(spec, config, &model, &ranges, &band_set, i)?;
        let dir = out_dir.join(&tile.tile_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_raster(&tile.sensor, dir.join(SENSOR_STEM))?;
        write_raster(&traits_raster(spec.rows, spec.cols, &tile.truth)?, dir.join(TRUTH_STEM))?;
        write_raster(&tile.scene_class, dir.join(SCENE_STEM))?;
        tiles.push(tile);
    }
    Ok(tiles)
}

/// Tile directories under `input_dir` that hold a sensor cube, sorted by name.
pub fn list_input_tiles(input_dir: impl AsRef<Path>) -> Result<Vec<(String, PathBuf)>> {
    let input_dir = input_dir.as_ref();
    let entries = fs::read_dir(input_dir).map_err(|e| Error::io(input_dir, e))?;
    let mut out = Vec::new();
    for e in entries {
        let e = e.map_err(|err| Error::io(input_dir, err))?;
        let path = e.path();
        if path.join(format!("{SENSOR_STEM}.hdr")).is_file() {
            out.push((e.file_name().to_string_lossy().into_owned(), path));
        }
    }
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub tile_id: String,
    pub mean_cost: Option<f64>,
    pub invalid_pixels: Option<usize>,
    /// `ok`, or `error: <message>`.
    pub status: String,
}

impl ManifestRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub manifest: PathBuf,
    pub rows: Vec<ManifestRow>,
}

impl DatasetReport {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

/// Everything needed to turn sensor tiles into bundles.
pub struct DatasetContext<'a> {
    pub lut: &'a LookupTable,
    pub model: &'a dyn ForwardModel,
    pub ranges: ParameterRanges,
    pub config: &'a PipelineConfig,
}

/// Inverts one tile, simulates the median traits forward and assembles the bundle.
pub fn build_tile_bundle(
    ctx: &DatasetContext<'_>,
    tile_id: &str,
    sensor: &RasterCube,
    scene_class: Option<RasterCube>,
) -> Result<(TileBundle, TraitMaps)> {
    if sensor.rows() != TILE_SIZE || sensor.cols() != TILE_SIZE {
        return Err(Error::Shape(format!(
            "tile {tile_id}: sensor cube is {}x{}, expected {TILE_SIZE}x{TILE_SIZE}",
            sensor.rows(),
            sensor.cols()
        )));
    }
    let workers = ctx.config.workers;
    let maps = invert_image(sensor, ctx.lut, &ctx.config.inversion, workers)?;
    let surf = simulate_from_traits(&maps.median, maps.rows, maps.cols, ctx.model, &ctx.ranges, workers)?;
    let (traits, p5, p95) = maps.to_rasters()?;
    let scene_class = match scene_class {
        Some(c) => {
            if c.rows() != TILE_SIZE || c.cols() != TILE_SIZE || c.bands() != 1 || c.as_u8().is_err() {
                return Err(Error::Shape(format!("tile {tile_id}: scene classification must be {TILE_SIZE}x{TILE_SIZE}x1 uint8")));
            }
            c
        }
        None => RasterCube::new(TILE_SIZE, TILE_SIZE, 1, RasterData::U8(vec![0; TILE_SIZE * TILE_SIZE]))?,
    };
    let bundle = TileBundle {
        region: ctx.config.region.clone(),
        tile_id: tile_id.to_string(),
        surf_refl: surf,
        traits,
        p5,
        p95,
        scene_class,
    };
    Ok((bundle, maps))
}

fn process_input_tile(ctx: &DatasetContext<'_>, tile_id: &str, dir: &Path, root: &Path, overwrite: bool) -> Result<TraitMaps> {
    let sensor = read_raster(dir.join(SENSOR_STEM))?;
    let scene = if dir.join(format!("{SCENE_STEM}.hdr")).is_file() {
        Some(read_raster(dir.join(SCENE_STEM))?)
    } else {
        None
    };
    let (bundle, maps) = build_tile_bundle(ctx, tile_id, &sensor, scene)?;
    write_tile_bundle(&bundle, root, overwrite)?;
    Ok(maps)
}

pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let path = path.as_ref();
    let io = |e: csv::Error| Error::Format(format!("{}: {e}", path.display()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(["tile_id", "mean_cost", "invalid_pixels", "status"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.tile_id.clone(),
            r.mean_cost.map(|c| c.to_string()).unwrap_or_default(),
            r.invalid_pixels.map(|c| c.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Inverts and re-simulates every input tile into `dataset_root/<region>/<tile_id>/`.
///
/// Per-tile failures are recorded in the manifest rather than aborting the run.
pub fn cmd_make_dataset(
    input_dir: impl AsRef<Path>,
    lut_path: impl AsRef<Path>,
    dataset_root: impl AsRef<Path>,
    config: &PipelineConfig,
    overwrite: bool,
) -> Result<DatasetReport> {
    config.validate()?;
    let lut = load_lut_for_grid(lut_path, &config.grid()?)?;
    let (model, soil) = config.model()?;
    let ctx = DatasetContext {
        lut: &lut,
        model: &model,
        ranges: config.ranges(soil),
        config,
    };
    let root = dataset_root.as_ref();
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut rows = Vec::new();
    for (id, dir) in list_input_tiles(input_dir)? {
        let row = match process_input_tile(&ctx, &id, &dir, root, overwrite) {
            Ok(maps) => ManifestRow {
                tile_id: id,
                mean_cost: Some(maps.mean_cost()),
                invalid_pixels: Some(maps.invalid_count()),
                status: "ok".into(),
            },
            Err(e) => ManifestRow {
                tile_id: id,
                mean_cost: None,
                invalid_pixels: None,
                status: format!("error: {e}"),
            },
        };
        rows.push(row);
    }
    let manifest = root.join(MANIFEST_NAME);
    write_manifest(&manifest, &rows)?;
    Ok(DatasetReport { manifest, rows })
}

/// CSV with one row per band: `wavelength_nm,r<row>_c<col>,...`.
pub fn cmd_export_spectra(cube: &RasterCube, pixels: &[(usize, usize)]) -> Result<String> {
    if pixels.is_empty() {
        return Err(Error::Argument("pixel list is empty".into()));
    }
    if let Some(&(r, c)) = pixels.iter().find(|&&(r, c)| r >= cube.rows() || c >= cube.cols()) {
        return Err(Error::Argument(format!(
            "pixel (row {r}, col {c}) outside {}x{} cube",
            cube.rows(),
            cube.cols()
        )));
    }
    let wl = cube
        .wavelengths()
        .ok_or_else(|| Error::Format("cube header carries no wavelength axis".into()))?;
    let values = cube.as_f32()?;
    let mut out = String::from("wavelength_nm");
    for (r, c) in pixels {
        out.push_str(&format!(",r{r}_c{c}"));
    }
    out.push('\n');
    for (b, w) in wl.iter().enumerate() {
        out.push_str(&w.to_string());
        for &(r, c) in pixels {
            out.push(',');
            out.push_str(&values[cube.index(r, c, b)].to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchTiming {
    pub kernel: SearchKernel,
    pub workers: usize,
    pub seconds: f64,
    /// Pixel-entry comparisons per second.
    pub throughput: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub pixels: usize,
    pub lut_size: usize,
    pub bands: usize,
    pub n_best: usize,
    pub timings: Vec<BenchTiming>,
}

impl BenchReport {
    pub fn timing(&self, kernel: SearchKernel, workers: usize) -> Option<&BenchTiming> {
        self.timings.iter().find(|t| t.kernel == kernel && t.workers == workers)
    }

    pub fn render(&self) -> String {
        let mut s = format!(
            "pixels={} lut={} bands={} n_best={}\n",
            self.pixels, self.lut_size, self.bands, self.n_best
        );
        for t in &self.timings {
            s.push_str(&format!(
                "{:?} workers={} time={:.3}s throughput={:.3e} comparisons/s\n",
                t.kernel, t.workers, t.seconds, t.throughput
            ));
        }
        s
    }
}

/// Observations near random LUT entries: band values plus N(0, 0.01), floored at 0.
pub fn bench_observations(lut: &LookupTable, pixels: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    (0..pixels)
        .map(|_| {
            let j = rng.random_range(0..lut.len());
            lut.band_values(j)
                .iter()
                .map(|&v| (v as f64 + noise.sample(&mut rng)).max(0.0))
                .collect()
        })
        .collect()
}

pub type SearchResults = Vec<Vec<(usize, f64)>>;

/// n-best for every observation with one kernel and worker count.
pub fn search_all(
    kernel: SearchKernel,
    lut: &LookupTable,
    obs: &[Vec<f64>],
    n: usize,
    workers: usize,
) -> Result<SearchResults> {
    let searcher = Searcher::for_lut(kernel, lut)?;
    exec::try_map_indexed(obs.len(), workers, |p| searcher.n_best(&obs[p], n))
}

/// Times every kernel at 1 and `workers` threads; fails if any result differs
/// from the naive single-thread run.
pub fn cmd_bench(lut: &LookupTable, pixels: usize, workers: usize, n_best: usize, seed: u64) -> Result<BenchReport> {
    if pixels == 0 {
        return Err(Error::Argument("pixel count must be positive".into()));
    }
    let obs = bench_observations(lut, pixels, seed);
    let mut thread_counts = vec![1];
    if workers > 1 {
        thread_counts.push(workers);
    }
    let mut timings = Vec::new();
    let mut reference: Option<SearchResults> = None;
    for kernel in [SearchKernel::Naive, SearchKernel::Pruned, SearchKernel::Indexed] {
        for &w in &thread_counts {
            let t0 = Instant::now();
            let res = search_all(kernel, lut, &obs, n_best, w)?;
            let seconds = t0.elapsed().as_secs_f64();
            match &reference {
                None => reference = Some(res),
                Some(r) => {
                    if let Some(p) = (0..pixels).find(|&p| r[p] != res[p]) {
                        return Err(Error::KernelMismatch(format!(
                            "{kernel:?} at {w} workers differs from the naive single-thread result at pixel {p}"
                        )));
                    }
                }
            }
            timings.push(BenchTiming {
                kernel,
                workers: w,
                seconds,
                throughput: (pixels * lut.len()) as f64 / seconds.max(1e-12),
            });
        }
    }
    Ok(BenchReport {
        pixels,
        lut_size: lut.len(),
        bands: lut.band_count(),
        n_best,
        timings,
    })
}
