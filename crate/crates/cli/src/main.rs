use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use hsforge_core::config::PipelineConfig;
use hsforge_core::inversion::{invert_image, params_from_raster, simulate_from_traits};
use hsforge_core::lut::{build_lut, load_lut_for_grid, save_lut};
use hsforge_core::pipeline::{
    cmd_bench, cmd_export_spectra, cmd_make_dataset, cmd_synth_input, SyntheticSceneSpec,
};
use hsforge_core::raster::{header_path, read_raster, validate_bundle, write_raster};
use hsforge_core::rtm::generate_reference_soils;

/// Synthetic hyperspectral dataset generation from multispectral tiles.
#[derive(Parser, Debug)]
#[command(name = "hsforge", version)]
struct Cli {
    #[command(flatten)]
    global: Global,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Settings file with `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override any setting, e.g. `--set lut_size=20000`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Output file, stem or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the reference absorption coefficient table as CSV.
    GenCoeffs,
    /// Write a soil library CSV.
    GenSoil {
        /// Comma-separated region names; defaults to the configured region.
        #[arg(long, value_delimiter = ',')]
        regions: Vec<String>,
    },
    /// Sample, simulate and filter a lookup table.
    BuildLut,
    /// Generate synthetic sensor tiles with ground-truth traits.
    SynthInput {
        #[arg(long, default_value_t = 4)]
        tiles: usize,
        #[arg(long, default_value_t = 8.0)]
        smoothness: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
    },
    /// Invert one sensor cube into median, p5 and p95 trait rasters.
    Invert {
        /// Sensor cube stem (without .img/.hdr).
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lut: PathBuf,
    },
    /// Forward-simulate a trait raster into a full-spectrum cube.
    Simulate {
        /// Trait raster stem.
        #[arg(long)]
        traits: PathBuf,
    },
    /// Invert and re-simulate every input tile into a dataset tree.
    MakeDataset {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        lut: PathBuf,
        /// Replace existing tile directories.
        #[arg(long)]
        overwrite: bool,
    },
    /// Check tile bundles under a tile, region or dataset directory.
    Validate { path: PathBuf },
    /// Export pixel spectra of a cube as CSV.
    ExportSpectra {
        #[arg(long)]
        cube: PathBuf,
        /// Pixel as `row,col`; repeatable.
        #[arg(long = "pixel", value_name = "ROW,COL")]
        pixels: Vec<String>,
    },
    /// Time the search kernels and check they agree.
    Bench {
        #[arg(long)]
        lut: PathBuf,
        #[arg(long, default_value_t = 4096)]
        pixels: usize,
    },
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut c = match &g.config {
        Some(p) => PipelineConfig::from_file(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &g.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| anyhow!("--set expects KEY=VALUE, got {kv:?}"))?;
        c.set(k, v)?;
    }
    if let Some(s) = g.seed {
        c.seed = s;
    }
    if let Some(w) = g.workers {
        c.workers = w;
    }
    c.validate()?;
    Ok(c)
}

fn out_or(g: &Global, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn parse_pixel(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| anyhow!("pixel must be ROW,COL, got {s:?}"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

/// Tile directories at or below `path` (tile, region or dataset level).
fn tile_dirs(path: &Path) -> Result<Vec<PathBuf>> {
    if header_path(path.join("surf_refl")).is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .with_context(|| path.display().to_string())?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    entries.sort();
    for d in entries {
        if header_path(d.join("surf_refl")).is_file() {
            out.push(d);
        } else {
            let mut sub: Vec<PathBuf> = fs::read_dir(&d)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.is_dir())
                .collect();
            sub.sort();
            out.extend(sub);
        }
    }
    Ok(out)
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    let cfg = load_config(g)?;
    match cli.command {
        Command::GenCoeffs => {
            let out = out_or(g, "coefficients.csv");
            cfg.coefficients()?.write_csv(&out)?;
            println!("wrote {}", out.display());
        }
        Command::GenSoil { regions } => {
            let out = out_or(g, "soils.csv");
            let names: Vec<&str> = if regions.is_empty() {
                vec![cfg.region.as_str()]
            } else {
                regions.iter().map(String::as_str).collect()
            };
            generate_reference_soils(&cfg.grid()?, &names)?.write_csv(&out)?;
            println!("wrote {} ({} soils)", out.display(), names.len());
        }
        Command::BuildLut => {
            let out = out_or(g, "lut.bin");
            let (model, soil) = cfg.model()?;
            let (lut, report) = build_lut(&cfg.lhs(soil), &cfg.constraints, &model, &cfg.band_set()?, cfg.workers)?;
            save_lut(&lut, &out)?;
            println!(
                "wrote {}: {} entries, {} rounds, {} candidates, rejected {} by coupling and {} by green peak",
                out.display(),
                lut.len(),
                report.rounds,
                report.candidates,
                report.rejected_coupling,
                report.rejected_green
            );
        }
        Command::SynthInput {
            tiles,
            smoothness,
            noise_sigma,
        } => {
            let out = out_or(g, "input");
            let spec = SyntheticSceneSpec {
                tiles,
                smoothness,
                noise_sigma,
                seed: cfg.seed,
                ..Default::default()
            };
            let made = cmd_synth_input(&spec, &cfg, &out)?;
            println!("wrote {} tiles under {}", made.len(), out.display());
        }
        Command::Invert { input, lut } => {
            let out = out_or(g, "inversion");
            let lut = load_lut_for_grid(&lut, &cfg.grid()?)?;
            let cube = read_raster(&input)?;
            let maps = invert_image(&cube, &lut, &cfg.inversion, cfg.workers)?;
            let (traits, p5, p95) = maps.to_rasters()?;
            fs::create_dir_all(&out).with_context(|| out.display().to_string())?;
            write_raster(&traits, out.join("traits"))?;
            write_raster(&p5, out.join("p5"))?;
            write_raster(&p95, out.join("p95"))?;
            println!(
                "inverted {}x{} pixels: mean cost {:.6}, {} invalid",
                maps.rows,
                maps.cols,
                maps.mean_cost(),
                maps.invalid_count()
            );
        }
        Command::Simulate { traits } => {
            let out = out_or(g, "surf_refl");
            let cube = read_raster(&traits)?;
            let params = params_from_raster(&cube)?;
            let (model, soil) = cfg.model()?;
            let sim = simulate_from_traits(&params, cube.rows(), cube.cols(), &model, &cfg.ranges(soil), cfg.workers)?;
            write_raster(&sim, &out)?;
            println!("wrote {}", out.display());
        }
        Command::MakeDataset { input, lut, overwrite } => {
            let out = out_or(g, "dataset");
            let report = cmd_make_dataset(&input, &lut, &out, &cfg, overwrite)?;
            for r in report.rows.iter().filter(|r| !r.is_ok()) {
                eprintln!("{}: {}", r.tile_id, r.status);
            }
            println!(
                "{} tiles, {} failed; manifest {}",
                report.rows.len(),
                report.failures(),
                report.manifest.display()
            );
            if report.failures() > 0 {
                bail!("{} tile(s) failed", report.failures());
            }
        }
        Command::Validate { path } => {
            let dirs = tile_dirs(&path)?;
            if dirs.is_empty() {
                bail!("no tile directories under {}", path.display());
            }
            let mut total = 0;
            for d in &dirs {
                let rep = validate_bundle(d);
                for v in &rep.violations {
                    println!("{}: {v}", d.display());
                }
                total += rep.violations.len();
            }
            println!("{} tiles checked, {total} violations", dirs.len());
            if total > 0 {
                bail!("{total} violation(s)");
            }
        }
        Command::ExportSpectra { cube, pixels } => {
            let pixels = pixels.iter().map(|p| parse_pixel(p)).collect::<Result<Vec<_>>>()?;
            let csv = cmd_export_spectra(&read_raster(&cube)?, &pixels)?;
            match &g.out {
                Some(p) => fs::write(p, csv).with_context(|| p.display().to_string())?,
                None => print!("{csv}"),
            }
        }
        Command::Bench { lut, pixels } => {
            let lut = load_lut_for_grid(&lut, &cfg.grid()?)?;
            let report = cmd_bench(&lut, pixels, cfg.workers, cfg.inversion.n_best, cfg.seed)?;
            print!("{}", report.render());
            println!("all kernels agree");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
