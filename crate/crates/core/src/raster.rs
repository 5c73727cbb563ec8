//! Flat-binary rasters with ASCII headers, patch extraction, 2x upsampling
//! and per-tile dataset bundles.
//!
//! A raster `<stem>` is stored as `<stem>.img` (raw little-endian,
//! band-sequential, row-major within band) and `<stem>.hdr` (`key = value`
//! lines; `data type` 4 = float32, 1 = uint8, 12 = uint16).

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::inversion::SENTINEL;
use crate::spectral::{Trait, TRAIT_COUNT};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataType {
    F32,
    U8,
    U16,
}

impl DataType {
    pub fn code(self) -> u32 {
        match self {
            DataType::F32 => 4,
            DataType::U8 => 1,
            DataType::U16 => 12,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            4 => Some(DataType::F32),
            1 => Some(DataType::U8),
            12 => Some(DataType::U16),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            DataType::F32 => 4,
            DataType::U8 => 1,
            DataType::U16 => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RasterData {
    F32(Vec<f32>),
    U8(Vec<u8>),
    U16(Vec<u16>),
}

impl RasterData {
    pub fn dtype(&self) -> DataType {
        match self {
            RasterData::F32(_) => DataType::F32,
            RasterData::U8(_) => DataType::U8,
            RasterData::U16(_) => DataType::U16,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            RasterData::F32(v) => v.len(),
            RasterData::U8(v) => v.len(),
            RasterData::U16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn gather(&self, idx: impl Iterator<Item = usize>) -> RasterData {
        match self {
            RasterData::F32(v) => RasterData::F32(idx.map(|i| v[i]).collect()),
            RasterData::U8(v) => RasterData::U8(idx.map(|i| v[i]).collect()),
            RasterData::U16(v) => RasterData::U16(idx.map(|i| v[i]).collect()),
        }
    }

    fn to_le_bytes(&self) -> Vec<u8> {
        match self {
            RasterData::F32(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
            RasterData::U8(v) => v.clone(),
            RasterData::U16(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }

    fn from_le_bytes(dtype: DataType, bytes: &[u8]) -> RasterData {
        match dtype {
            DataType::F32 => RasterData::F32(
                bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
            DataType::U8 => RasterData::U8(bytes.to_vec()),
            DataType::U16 => RasterData::U16(
                bytes
                    .chunks_exact(2)
                    .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            ),
        }
    }
}

/// Band-sequential raster cube.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterCube {
    rows: usize,
    cols: usize,
    bands: usize,
    data: RasterData,
    band_names: Option<Vec<String>>,
    wavelengths: Option<Vec<f64>>,
}

impl RasterCube {
    pub fn new(rows: usize, cols: usize, bands: usize, data: RasterData) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::Shape(format!("raster dimensions must be positive: {rows}x{cols}x{bands}")));
        }
        if data.len() != rows * cols * bands {
            return Err(Error::Shape(format!(
                "raster {rows}x{cols}x{bands} needs {} values, got {}",
                rows * cols * bands,
                data.len()
            )));
        }
        Ok(RasterCube {
            rows,
            cols,
            bands,
            data,
            band_names: None,
            wavelengths: None,
        })
    }

    pub fn zeros(rows: usize, cols: usize, bands: usize, dtype: DataType) -> Result<Self> {
        let n = rows * cols * bands;
        let data = match dtype {
            DataType::F32 => RasterData::F32(vec![0.0; n]),
            DataType::U8 => RasterData::U8(vec![0; n]),
            DataType::U16 => RasterData::U16(vec![0; n]),
        };
        RasterCube::new(rows, cols, bands, data)
    }

    pub fn with_band_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} band names for {} bands",
                names.len(),
                self.bands
            )));
        }
        self.band_names = Some(names);
        Ok(self)
    }

    pub fn with_wavelengths(mut self, wl: Vec<f64>) -> Result<Self> {
        if wl.len() != self.bands {
            return Err(Error::Shape(format!(
                "{} wavelengths for {} bands",
                wl.len(),
                self.bands
            )));
        }
        self.wavelengths = Some(wl);
        Ok(self)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn dtype(&self) -> DataType {
        self.data.dtype()
    }

    pub fn data(&self) -> &RasterData {
        &self.data
    }

    pub fn band_names(&self) -> Option<&[String]> {
        self.band_names.as_deref()
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn index(&self, row: usize, col: usize, band: usize) -> usize {
        (band * self.rows + row) * self.cols + col
    }

    pub fn as_f32(&self) -> Result<&[f32]> {
        match &self.data {
            RasterData::F32(v) => Ok(v),
            other => Err(Error::Format(format!("expected float32 raster, found {:?}", other.dtype()))),
        }
    }

    pub fn as_f32_mut(&mut self) -> Result<&mut [f32]> {
        match &mut self.data {
            RasterData::F32(v) => Ok(v),
            other => Err(Error::Format(format!("expected float32 raster, found {:?}", other.dtype()))),
        }
    }

    pub fn as_u8(&self) -> Result<&[u8]> {
        match &self.data {
            RasterData::U8(v) => Ok(v),
            other => Err(Error::Format(format!("expected uint8 raster, found {:?}", other.dtype()))),
        }
    }

    /// All band values of one pixel, as `f64`.
    pub fn pixel_f64(&self, row: usize, col: usize) -> Vec<f64> {
        let plane = self.rows * self.cols;
        let base = row * self.cols + col;
        (0..self.bands)
            .map(|b| {
                let i = b * plane + base;
                match &self.data {
                    RasterData::F32(v) => v[i] as f64,
                    RasterData::U8(v) => v[i] as f64,
                    RasterData::U16(v) => v[i] as f64,
                }
            })
            .collect()
    }

    /// Copy of the window `[row0, row0+rows) x [col0, col0+cols)` over all bands.
    pub fn window(&self, row0: usize, col0: usize, rows: usize, cols: usize) -> Result<RasterCube> {
        if row0 + rows > self.rows || col0 + cols > self.cols {
            return Err(Error::Shape(format!(
                "window {rows}x{cols} at ({row0}, {col0}) exceeds {}x{} raster",
                self.rows, self.cols
            )));
        }
        let idx = (0..self.bands).flat_map(|b| {
            (0..rows).flat_map(move |r| (0..cols).map(move |c| (b, r, c)))
        });
        let data = self
            .data
            .gather(idx.map(|(b, r, c)| self.index(row0 + r, col0 + c, b)));
        let mut out = RasterCube::new(rows, cols, self.bands, data)?;
        out.band_names = self.band_names.clone();
        out.wavelengths = self.wavelengths.clone();
        Ok(out)
    }

    fn header_text(&self) -> Result<String> {
        let mut h = String::from("ENVI\n");
        h.push_str(&format!("samples = {}\n", self.cols));
        h.push_str(&format!("lines = {}\n", self.rows));
        h.push_str(&format!("bands = {}\n", self.bands));
        h.push_str("header offset = 0\n");
        h.push_str("file type = ENVI Standard\n");
        h.push_str(&format!("data type = {}\n", self.dtype().code()));
        h.push_str("interleave = bsq\n");
        h.push_str("byte order = 0\n");
        if let Some(names) = &self.band_names {
            if let Some(bad) = names.iter().find(|n| n.contains([',', '{', '}', '\n'])) {
                return Err(Error::Format(format!("band name {bad:?} contains a reserved character")));
            }
            h.push_str(&format!("band names = {{{}}}\n", names.join(", ")));
        }
        if let Some(wl) = &self.wavelengths {
            let list: Vec<String> = wl.iter().map(|w| w.to_string()).collect();
            h.push_str("wavelength units = Nanometers\n");
            h.push_str(&format!("wavelength = {{{}}}\n", list.join(", ")));
        }
        Ok(h)
    }
}

fn with_ext(stem: &Path, ext: &str) -> PathBuf {
    let mut s = stem.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

pub fn header_path(stem: impl AsRef<Path>) -> PathBuf {
    with_ext(stem.as_ref(), "hdr")
}

pub fn payload_path(stem: impl AsRef<Path>) -> PathBuf {
    with_ext(stem.as_ref(), "img")
}

/// Writes `<stem>.img` and `<stem>.hdr`.
pub fn write_raster(cube: &RasterCube, stem: impl AsRef<Path>) -> Result<()> {
    let stem = stem.as_ref();
    let header = cube.header_text()?;
    let hdr = header_path(stem);
    let img = payload_path(stem);
    fs::write(&img, cube.data.to_le_bytes()).map_err(|e| Error::io(&img, e))?;
    fs::write(&hdr, header).map_err(|e| Error::io(&hdr, e))
}

/// Parses `key = value` header lines; `{...}` values may span lines.
fn parse_header(text: &str, path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    let mut lines = text.lines();
    while let Some(line) = lines.next() {
        let Some((k, v)) = line.split_once('=') else {
            continue;
        };
        let key = k.trim().to_ascii_lowercase();
        let mut value = v.trim().to_string();
        if value.starts_with('{') {
            while !value.contains('}') {
                let Some(more) = lines.next() else {
                    return Err(Error::Format(format!(
                        "{}: unterminated list for {key}",
                        path.display()
                    )));
                };
                value.push(' ');
                value.push_str(more.trim());
            }
        }
        out.insert(key, value);
    }
    Ok(out)
}

fn parse_list(v: &str) -> Vec<String> {
    v.trim()
        .trim_start_matches('{')
        .trim_end_matches('}')
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect()
}

/// Reads a raster written by [`write_raster`] (or any compatible bsq header/payload pair).
pub fn read_raster(stem: impl AsRef<Path>) -> Result<RasterCube> {
    let stem = stem.as_ref();
    let hdr = header_path(stem);
    let img = payload_path(stem);
    let text = fs::read_to_string(&hdr).map_err(|e| Error::io(&hdr, e))?;
    let keys = parse_header(&text, &hdr)?;
    let req = |k: &str| {
        keys.get(k)
            .ok_or_else(|| Error::Format(format!("{}: missing required key `{k}`", hdr.display())))
    };
    let num = |k: &str| -> Result<usize> {
        req(k)?
            .parse::<usize>()
            .map_err(|_| Error::Format(format!("{}: `{k}` is not a non-negative integer", hdr.display())))
    };
    let cols = num("samples")?;
    let rows = num("lines")?;
    let bands = num("bands")?;
    let code = num("data type")? as u32;
    let dtype = DataType::from_code(code)
        .ok_or_else(|| Error::Format(format!("{}: unknown data type code {code}", hdr.display())))?;
    if !req("interleave")?.eq_ignore_ascii_case("bsq") {
        return Err(Error::Format(format!("{}: only bsq interleave is supported", hdr.display())));
    }
    if num("byte order")? != 0 {
        return Err(Error::Format(format!("{}: only little-endian payloads are supported", hdr.display())));
    }
    let offset = keys
        .get("header offset")
        .map(|v| v.parse::<usize>())
        .transpose()
        .map_err(|_| Error::Format(format!("{}: bad header offset", hdr.display())))?
        .unwrap_or(0);

    let bytes = fs::read(&img).map_err(|e| Error::io(&img, e))?;
    let expected = rows * cols * bands * dtype.size();
    if bytes.len() != offset + expected {
        return Err(Error::Format(format!(
            "{}: payload is {} bytes, header implies {}",
            img.display(),
            bytes.len(),
            offset + expected
        )));
    }
    let data = RasterData::from_le_bytes(dtype, &bytes[offset..]);
    let mut cube = RasterCube::new(rows, cols, bands, data)?;
    if let Some(v) = keys.get("band names") {
        cube = cube.with_band_names(parse_list(v)).map_err(|e| {
            Error::Format(format!("{}: {e}", hdr.display()))
        })?;
    }
    if let Some(v) = keys.get("wavelength") {
        let wl = parse_list(v)
            .iter()
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("{}: bad wavelength list", hdr.display())))?;
        cube = cube
            .with_wavelengths(wl)
            .map_err(|e| Error::Format(format!("{}: {e}", hdr.display())))?;
    }
    Ok(cube)
}

/// Non-overlapping full patches in row-major order; partial edge patches are dropped.
pub fn crop_patches(raster: &RasterCube, patch_rows: usize, patch_cols: usize) -> Result<Vec<RasterCube>> {
    if patch_rows == 0 || patch_cols == 0 || patch_rows > raster.rows || patch_cols > raster.cols {
        return Err(Error::Shape(format!(
            "patch {patch_rows}x{patch_cols} does not fit a {}x{} raster",
            raster.rows, raster.cols
        )));
    }
    let mut out = Vec::new();
    for pr in 0..raster.rows / patch_rows {
        for pc in 0..raster.cols / patch_cols {
            out.push(raster.window(pr * patch_rows, pc * patch_cols, patch_rows, patch_cols)?);
        }
    }
    Ok(out)
}

/// Nearest-neighbour 32x32 -> 64x64: `out(i, j) = in(i / 2, j / 2)`.
pub fn nn_upsample_2x(patch: &RasterCube) -> Result<RasterCube> {
    if patch.rows != 32 || patch.cols != 32 {
        return Err(Error::Shape(format!(
            "upsampling expects a 32x32 patch, got {}x{}",
            patch.rows, patch.cols
        )));
    }
    let (rows, cols) = (64, 64);
    let idx = (0..patch.bands).flat_map(|b| (0..rows).flat_map(move |i| (0..cols).map(move |j| (b, i, j))));
    let data = patch.data.gather(idx.map(|(b, i, j)| patch.index(i / 2, j / 2, b)));
    let mut out = RasterCube::new(rows, cols, patch.bands, data)?;
    out.band_names = patch.band_names.clone();
    out.wavelengths = patch.wavelengths.clone();
    Ok(out)
}

/// Tile edge length of every bundle raster.
pub const TILE_SIZE: usize = 64;

/// File stems of a tile bundle.
pub const BUNDLE_STEMS: [&str; 5] = ["surf_refl", "traits", "p5", "p95", "quality_scene_classification"];

/// One output tile: hyperspectral cube, trait maps and scene classes.
#[derive(Debug, Clone, PartialEq)]
pub struct TileBundle {
    pub region: String,
    pub tile_id: String,
    pub surf_refl: RasterCube,
    pub traits: RasterCube,
    pub p5: RasterCube,
    pub p95: RasterCube,
    pub scene_class: RasterCube,
}

impl TileBundle {
    fn check_shapes(&self) -> Result<()> {
        let expect = [
            ("surf_refl", &self.surf_refl, None, DataType::F32),
            ("traits", &self.traits, Some(TRAIT_COUNT), DataType::F32),
            ("p5", &self.p5, Some(TRAIT_COUNT), DataType::F32),
            ("p95", &self.p95, Some(TRAIT_COUNT), DataType::F32),
            ("quality_scene_classification", &self.scene_class, Some(1), DataType::U8),
        ];
        for (name, cube, bands, dtype) in expect {
            if cube.rows != TILE_SIZE
                || cube.cols != TILE_SIZE
                || bands.is_some_and(|b| b != cube.bands)
                || cube.dtype() != dtype
            {
                return Err(Error::Shape(format!(
                    "{name}: {}x{}x{} {:?} does not match the bundle layout",
                    cube.rows,
                    cube.cols,
                    cube.bands,
                    cube.dtype()
                )));
            }
        }
        for name in [&self.region, &self.tile_id] {
            if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
                return Err(Error::Argument(format!("invalid region or tile id {name:?}")));
            }
        }
        Ok(())
    }
}

/// Writes the bundle under `dataset_root/<region>/<tile_id>/`.
pub fn write_tile_bundle(bundle: &TileBundle, dataset_root: impl AsRef<Path>, overwrite: bool) -> Result<Vec<PathBuf>> {
    bundle.check_shapes()?;
    let dir = dataset_root.as_ref().join(&bundle.region).join(&bundle.tile_id);
    if dir.exists() {
        if !overwrite {
            return Err(Error::Exists { path: dir });
        }
        fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cubes = [
        &bundle.surf_refl,
        &bundle.traits,
        &bundle.p5,
        &bundle.p95,
        &bundle.scene_class,
    ];
    let mut written = Vec::with_capacity(2 * cubes.len());
    for (stem, cube) in BUNDLE_STEMS.iter().zip(cubes) {
        let stem = dir.join(stem);
        write_raster(cube, &stem)?;
        written.push(payload_path(&stem));
        written.push(header_path(&stem));
    }
    Ok(written)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub file: String,
    pub pixel: Option<(usize, usize)>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.pixel {
            Some((r, c)) => write!(f, "{} (row {r}, col {c}): {}", self.file, self.message),
            None => write!(f, "{}: {}", self.file, self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, file: &str, pixel: Option<(usize, usize)>, message: impl Into<String>) {
        self.violations.push(Violation {
            file: file.to_string(),
            pixel,
            message: message.into(),
        });
    }
}

/// Checks a tile directory against the bundle layout; never fails, only reports.
pub fn validate_bundle(tile_dir: impl AsRef<Path>) -> ValidationReport {
    let dir = tile_dir.as_ref();
    let mut report = ValidationReport::default();
    let expected: [(&str, usize, DataType); 5] = [
        ("surf_refl", 0, DataType::F32),
        ("traits", TRAIT_COUNT, DataType::F32),
        ("p5", TRAIT_COUNT, DataType::F32),
        ("p95", TRAIT_COUNT, DataType::F32),
        ("quality_scene_classification", 1, DataType::U8),
    ];
    let mut cubes: HashMap<&str, RasterCube> = HashMap::new();
    for (stem, bands, dtype) in expected {
        let path = dir.join(stem);
        for p in [header_path(&path), payload_path(&path)] {
            if !p.is_file() {
                report.push(&p.file_name().unwrap().to_string_lossy(), None, "missing file");
            }
        }
        let cube = match read_raster(&path) {
            Ok(c) => c,
            Err(e) => {
                report.push(stem, None, format!("unreadable: {e}"));
                continue;
            }
        };
        let bands_ok = if stem == "surf_refl" { cube.bands > 0 } else { cube.bands == bands };
        if cube.rows != TILE_SIZE || cube.cols != TILE_SIZE || !bands_ok {
            report.push(
                stem,
                None,
                format!("shape {}x{}x{} does not match the layout", cube.rows, cube.cols, cube.bands),
            );
            continue;
        }
        if cube.dtype() != dtype {
            report.push(stem, None, format!("dtype {:?}, expected {:?}", cube.dtype(), dtype));
            continue;
        }
        cubes.insert(stem, cube);
    }

    if let Some(refl) = cubes.get("surf_refl") {
        if refl.bands != 211 {
            report.push("surf_refl", None, format!("{} bands, expected 211", refl.bands));
        }
        let v = refl.as_f32().unwrap();
        for r in 0..refl.rows {
            for c in 0..refl.cols {
                let bad = (0..refl.bands)
                    .map(|b| v[refl.index(r, c, b)])
                    .find(|&x| !(x.is_finite() && ((0.0..=1.0).contains(&x) || x == SENTINEL)));
                if let Some(x) = bad {
                    report.push("surf_refl", Some((r, c)), format!("reflectance {x} outside [0, 1]"));
                }
            }
        }
    }

    let trait_names = Trait::names();
    for stem in ["traits", "p5", "p95"] {
        if let Some(cube) = cubes.get(stem) {
            if cube.band_names() != Some(trait_names.as_slice()) {
                report.push(stem, None, "band names missing or not in canonical trait order");
            }
        }
    }
    if let (Some(med), Some(lo), Some(hi)) = (cubes.get("traits"), cubes.get("p5"), cubes.get("p95")) {
        let (m, l, h) = (med.as_f32().unwrap(), lo.as_f32().unwrap(), hi.as_f32().unwrap());
        for r in 0..TILE_SIZE {
            for c in 0..TILE_SIZE {
                for t in Trait::ALL {
                    let i = med.index(r, c, t.index());
                    if !(m[i].is_finite() && l[i].is_finite() && h[i].is_finite()) {
                        report.push("traits", Some((r, c)), format!("non-finite {}", t.name()));
                        break;
                    }
                    if !(l[i] <= m[i] && m[i] <= h[i]) {
                        report.push(
                            "traits",
                            Some((r, c)),
                            format!("{}: p5 {} <= median {} <= p95 {} violated", t.name(), l[i], m[i], h[i]),
                        );
                        break;
                    }
                }
            }
        }
    }
    report
}
