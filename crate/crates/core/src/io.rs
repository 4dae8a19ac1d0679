//! Binary containers and raster images.
//!
//! Every array is stored in one little-endian container:
//!
//! ```text
//! magic      8 bytes   "CSIDCUBE"
//! version    u16       1
//! dims       3 × u32   (S, N_x, N_y)
//! pitch      f64       pixel pitch in metres
//! wavelengths S × f64  strictly increasing, metres
//! payload    S·N_x·N_y × f32, band-major then row-major
//! metadata   u32 byte length, then UTF-8 JSON object
//! ```
//!
//! Cubes, measurement frames, masks and PSF rows all use this layout; the
//! `kind` metadata key records which one a file holds. Grayscale images are
//! binary PGM (P5) with maxval 65535.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, FormatError, Result};
use crate::model::{CodedApertureSet, MeasurementSet, SpectralCube};
use crate::optics::{LensDesign, PsfKernel, PsfStack};

pub const MAGIC: &[u8; 8] = b"CSIDCUBE";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 8 + 2 + 3 * 4 + 8;

pub const KIND_CUBE: &str = "cube";
pub const KIND_MEASUREMENTS: &str = "measurements";
pub const KIND_MASKS: &str = "masks";
pub const KIND_PSF: &str = "psf";

/// Decoded container contents at storage precision.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub values: Array3<f32>,
    pub wavelengths_m: Vec<f64>,
    pub pixel_pitch_m: f64,
    pub metadata: Map<String, Value>,
}

impl Container {
    pub fn from_f64(values: &Array3<f64>, wavelengths_m: &[f64], pixel_pitch_m: f64, metadata: Map<String, Value>) -> Self {
        Self {
            values: values.mapv(|v| v as f32),
            wavelengths_m: wavelengths_m.to_vec(),
            pixel_pitch_m,
            metadata,
        }
    }

    pub fn values_f64(&self) -> Array3<f64> {
        self.values.mapv(f64::from)
    }

    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").and_then(Value::as_str)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let (s, nx, ny) = self.values.dim();
        if s != self.wavelengths_m.len() {
            return Err(Error::shape(format!("{s} bands for {} wavelengths", self.wavelengths_m.len())));
        }
        check_wavelengths(&self.wavelengths_m)?;
        let dim = |n: usize| u32::try_from(n).map_err(|_| FormatError::DimensionOverflow(format!("{n} exceeds u32")));
        let (s32, nx32, ny32) = (dim(s)?, dim(nx)?, dim(ny)?);
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| FormatError::Metadata(e.to_string()))?;
        let meta_len = u32::try_from(meta.len()).map_err(|_| FormatError::Metadata("metadata too long".into()))?;

        let mut out = Vec::with_capacity(HEADER_LEN + 8 * s + 4 * self.values.len() + 4 + meta.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        for d in [s32, nx32, ny32] {
            out.extend_from_slice(&d.to_le_bytes());
        }
        out.extend_from_slice(&self.pixel_pitch_m.to_le_bytes());
        for w in &self.wavelengths_m {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for v in self.values.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&meta_len.to_le_bytes());
        out.extend_from_slice(&meta);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(FormatError::BadMagic.into());
        }
        if bytes.len() < HEADER_LEN {
            return Err(FormatError::TruncatedPayload {
                expected: HEADER_LEN,
                found: bytes.len(),
            }
            .into());
        }
        let mut cur = Cursor { bytes, pos: MAGIC.len() };
        let version = u16::from_le_bytes(cur.take::<2>()?);
        if version != VERSION {
            return Err(FormatError::UnsupportedVersion(version).into());
        }
        let s = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let nx = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let ny = u32::from_le_bytes(cur.take::<4>()?) as usize;
        if s == 0 || nx == 0 || ny == 0 {
            return Err(FormatError::DimensionOverflow(format!("zero-sized dimension {s}x{nx}x{ny}")).into());
        }
        let count = s
            .checked_mul(nx)
            .and_then(|n| n.checked_mul(ny))
            .filter(|n| n.checked_mul(4).is_some())
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{s}x{nx}x{ny} voxels")))?;
        let body = s
            .checked_mul(8)
            .and_then(|w| w.checked_add(count * 4))
            .and_then(|b| b.checked_add(HEADER_LEN + 4))
            .ok_or_else(|| FormatError::DimensionOverflow(format!("{s}x{nx}x{ny} voxels")))?;
        if bytes.len() < body {
            return Err(FormatError::TruncatedPayload {
                expected: body,
                found: bytes.len(),
            }
            .into());
        }

        let pixel_pitch_m = f64::from_le_bytes(cur.take::<8>()?);
        let wavelengths_m = (0..s)
            .map(|_| cur.take::<8>().map(f64::from_le_bytes))
            .collect::<Result<Vec<f64>>>()?;
        check_wavelengths(&wavelengths_m)?;
        let payload = (0..count)
            .map(|_| cur.take::<4>().map(f32::from_le_bytes))
            .collect::<Result<Vec<f32>>>()?;
        let values = Array3::from_shape_vec((s, nx, ny), payload).map_err(|e| Error::shape(e.to_string()))?;

        let meta_len = u32::from_le_bytes(cur.take::<4>()?) as usize;
        let meta_end = cur.pos.checked_add(meta_len).filter(|&e| e <= bytes.len()).ok_or(
            FormatError::TruncatedPayload {
                expected: cur.pos.saturating_add(meta_len),
                found: bytes.len(),
            },
        )?;
        let metadata = match serde_json::from_slice::<Value>(&bytes[cur.pos..meta_end]) {
            Ok(Value::Object(map)) => map,
            Ok(_) => return Err(FormatError::Metadata("metadata must be a JSON object".into()).into()),
            Err(e) => return Err(FormatError::Metadata(e.to_string()).into()),
        };
        if meta_end != bytes.len() {
            return Err(FormatError::Metadata(format!("{} trailing bytes", bytes.len() - meta_end)).into());
        }
        Ok(Self {
            values,
            wavelengths_m,
            pixel_pitch_m,
            metadata,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let end = self.pos + N;
        let chunk = self.bytes.get(self.pos..end).ok_or(FormatError::TruncatedPayload {
            expected: end,
            found: self.bytes.len(),
        })?;
        self.pos = end;
        Ok(chunk.try_into().expect("slice length matches"))
    }
}

fn check_wavelengths(w: &[f64]) -> Result<()> {
    if w.windows(2).any(|p| !(p[1] > p[0])) || w.iter().any(|v| !v.is_finite()) {
        return Err(FormatError::NonIncreasingWavelengths.into());
    }
    Ok(())
}

pub fn write_container(container: &Container, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = container.to_bytes()?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Container::from_bytes(&bytes)
}

fn with_kind(kind: &str, mut extra: Map<String, Value>) -> Map<String, Value> {
    extra.insert("kind".into(), Value::from(kind));
    extra
}

fn expect_kind(c: &Container, kind: &str) -> Result<()> {
    match c.kind() {
        Some(k) if k == kind => Ok(()),
        other => Err(FormatError::Metadata(format!("expected a {kind} container, found {other:?}")).into()),
    }
}

fn meta_field<T: for<'de> Deserialize<'de>>(c: &Container, key: &str) -> Result<T> {
    let v = c
        .metadata
        .get(key)
        .ok_or_else(|| FormatError::Metadata(format!("missing key {key:?}")))?;
    serde_json::from_value(v.clone()).map_err(|e| FormatError::Metadata(format!("{key}: {e}")).into())
}

pub fn write_cube(cube: &SpectralCube, path: impl AsRef<Path>) -> Result<()> {
    write_cube_with_metadata(cube, Map::new(), path)
}

/// Writes a cube; `metadata` is stored alongside the `kind` key.
pub fn write_cube_with_metadata(cube: &SpectralCube, metadata: Map<String, Value>, path: impl AsRef<Path>) -> Result<()> {
    let c = Container::from_f64(cube.values(), cube.wavelengths_m(), cube.pixel_pitch_m(), with_kind(KIND_CUBE, metadata));
    write_container(&c, path)
}

pub fn read_cube(path: impl AsRef<Path>) -> Result<SpectralCube> {
    read_cube_with_metadata(path).map(|(cube, _)| cube)
}

/// Reads any container as a cube, whatever its `kind`.
pub fn read_cube_with_metadata(path: impl AsRef<Path>) -> Result<(SpectralCube, Map<String, Value>)> {
    let c = read_container(path)?;
    let cube = SpectralCube::new(c.values_f64(), c.wavelengths_m.clone(), c.pixel_pitch_m)?;
    Ok((cube, c.metadata))
}

/// Frames are stored as bands indexed by the focused wavelengths, which must
/// therefore be strictly increasing.
pub fn write_measurements(meas: &MeasurementSet, path: impl AsRef<Path>) -> Result<()> {
    let mut meta = Map::new();
    meta.insert("noise_sigma".into(), Value::from(meas.noise_sigma));
    meta.insert("snr_db".into(), Value::from(meas.snr_db));
    meta.insert("seed".into(), Value::from(meas.seed));
    let c = Container::from_f64(
        &meas.frames,
        &meas.focused_wavelengths_m,
        meas.pixel_pitch_m,
        with_kind(KIND_MEASUREMENTS, meta),
    );
    write_container(&c, path)
}

pub fn read_measurements(path: impl AsRef<Path>) -> Result<MeasurementSet> {
    let c = read_container(path)?;
    expect_kind(&c, KIND_MEASUREMENTS)?;
    Ok(MeasurementSet {
        frames: c.values_f64(),
        noise_sigma: meta_field(&c, "noise_sigma")?,
        snr_db: meta_field(&c, "snr_db")?,
        seed: meta_field(&c, "seed")?,
        focused_wavelengths_m: c.wavelengths_m,
        pixel_pitch_m: c.pixel_pitch_m,
    })
}

pub fn write_masks(masks: &CodedApertureSet, wavelengths_m: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let mut meta = Map::new();
    meta.insert("seed".into(), Value::from(masks.seed()));
    let c = Container::from_f64(masks.masks(), wavelengths_m, masks.pixel_pitch_m(), with_kind(KIND_MASKS, meta));
    write_container(&c, path)
}

/// Returns the masks and the band wavelengths they were written with.
pub fn read_masks(path: impl AsRef<Path>) -> Result<(CodedApertureSet, Vec<f64>)> {
    let c = read_container(path)?;
    expect_kind(&c, KIND_MASKS)?;
    let seed = meta_field(&c, "seed")?;
    let masks = CodedApertureSet::from_masks(c.values_f64(), c.pixel_pitch_m, seed)?;
    Ok((masks, c.wavelengths_m))
}

pub fn psf_row_path(dir: impl AsRef<Path>, k: usize) -> PathBuf {
    dir.as_ref().join(format!("psf_k{k}.csid"))
}

#[derive(Serialize, Deserialize)]
struct PsfRowMeta {
    k: usize,
    design: LensDesign,
}

/// One container per measurement `k` with the `S` kernels as bands.
pub fn write_psf_stack(stack: &PsfStack, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::with_capacity(stack.num_measurements());
    for (k, design) in stack.designs().iter().enumerate() {
        let row = stack.row(k);
        let side = row[0].side();
        let mut values = Array3::zeros((row.len(), side, side));
        for (s, kernel) in row.iter().enumerate() {
            values.index_axis_mut(Axis(0), s).assign(kernel.samples());
        }
        let meta = serde_json::to_value(PsfRowMeta { k, design: *design }).map_err(|e| FormatError::Metadata(e.to_string()))?;
        let Value::Object(meta) = meta else { unreachable!() };
        let c = Container::from_f64(&values, stack.wavelengths_m(), stack.pixel_pitch_m(), with_kind(KIND_PSF, meta));
        let path = psf_row_path(dir, k);
        write_container(&c, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

/// Reads `psf_k0.csid`, `psf_k1.csid`, ... until the first missing index.
pub fn read_psf_stack(dir: impl AsRef<Path>) -> Result<PsfStack> {
    let dir = dir.as_ref();
    let mut rows = Vec::new();
    let mut designs = Vec::new();
    let mut wavelengths: Option<Vec<f64>> = None;
    loop {
        let path = psf_row_path(dir, rows.len());
        if !path.exists() {
            break;
        }
        let c = read_container(&path)?;
        expect_kind(&c, KIND_PSF)?;
        let design: LensDesign = meta_field(&c, "design")?;
        match &wavelengths {
            Some(w) if *w != c.wavelengths_m => {
                return Err(Error::shape(format!("{}: wavelength grid differs from row 0", path.display())));
            }
            Some(_) => {}
            None => wavelengths = Some(c.wavelengths_m.clone()),
        }
        let k = rows.len();
        let row = c
            .values
            .axis_iter(Axis(0))
            .zip(&c.wavelengths_m)
            .map(|(band, &w)| PsfKernel::from_stored(band.mapv(f64::from), c.pixel_pitch_m, w, k))
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
        designs.push(design);
    }
    let wavelengths = wavelengths.ok_or_else(|| {
        Error::io(
            psf_row_path(dir, 0),
            std::io::Error::new(std::io::ErrorKind::NotFound, "no psf containers"),
        )
    })?;
    PsfStack::new(rows, wavelengths, designs)
}

/// Scales `image / max` to the full 16-bit range, clamping to `[0, 65535]`.
pub fn to_gray16(image: ArrayView2<f64>, max: f64) -> Array2<u16> {
    let scale = if max > 0.0 { 65535.0 / max } else { 0.0 };
    image.mapv(|v| (v * scale).round().clamp(0.0, 65535.0) as u16)
}

/// Binary PGM (P5) with maxval 65535, samples big-endian as the format requires.
pub fn write_pgm(image: &Array2<u16>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let (rows, cols) = image.dim();
    let mut out = format!("P5\n{cols} {rows}\n65535\n").into_bytes();
    out.reserve(2 * image.len());
    for v in image.iter() {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a binary PGM; 8-bit samples are returned unscaled.
pub fn read_pgm(path: impl AsRef<Path>) -> Result<Array2<u16>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|msg| FormatError::Image(format!("{}: {msg}", path.display())).into())
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Array2<u16>, String> {
    if !bytes.starts_with(b"P5") {
        return Err("not a binary PGM (P5) file".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|t| t.parse().ok())
            .ok_or("malformed header")?;
    }
    let [cols, rows, maxval] = fields;
    if !(1..=65535).contains(&maxval) || cols == 0 || rows == 0 {
        return Err(format!("unsupported header {cols}x{rows} maxval {maxval}"));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err("malformed header".into());
    }
    pos += 1;
    let width = if maxval < 256 { 1 } else { 2 };
    let need = rows
        .checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or("image too large")?;
    let data = bytes
        .get(pos..pos + need)
        .ok_or_else(|| format!("expected {need} sample bytes, found {}", bytes.len() - pos))?;
    let samples: Vec<u16> = if width == 1 {
        data.iter().map(|&b| u16::from(b)).collect()
    } else {
        data.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    };
    Array2::from_shape_vec((rows, cols), samples).map_err(|e| e.to_string())
}

/// Lowers the `count` largest voxels to `value` when they exceed it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipOutliers {
    pub count: usize,
    pub value: f64,
}

pub fn clip_outliers(values: &mut Array3<f64>, clip: ClipOutliers) {
    if clip.count == 0 {
        return;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let flat = values.as_slice_mut().expect("standard layout");
    let n = clip.count.min(flat.len());
    order.select_nth_unstable_by(n - 1, |&a, &b| flat[b].total_cmp(&flat[a]));
    for &i in &order[..n] {
        if flat[i] > clip.value {
            flat[i] = clip.value;
        }
    }
}

/// Loads one PGM per band from `dir` (sorted by file name), scales the stack
/// by its maximum, then applies optional outlier clipping.
pub fn import_raster_stack(
    dir: impl AsRef<Path>,
    wavelengths_m: &[f64],
    pixel_pitch_m: f64,
    clip: Option<ClipOutliers>,
) -> Result<SpectralCube> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")))
        .collect();
    files.sort();
    if files.len() != wavelengths_m.len() {
        return Err(Error::shape(format!(
            "{}: {} band images for {} wavelengths",
            dir.display(),
            files.len(),
            wavelengths_m.len()
        )));
    }
    let mut values: Option<Array3<f64>> = None;
    for (s, path) in files.iter().enumerate() {
        let band = read_pgm(path)?;
        let cube = values.get_or_insert_with(|| Array3::zeros((files.len(), band.nrows(), band.ncols())));
        if band.dim() != (cube.len_of(Axis(1)), cube.len_of(Axis(2))) {
            return Err(Error::shape(format!(
                "{}: {:?} differs from the first band",
                path.display(),
                band.dim()
            )));
        }
        cube.index_axis_mut(Axis(0), s).assign(&band.mapv(f64::from));
    }
    let values = values.ok_or_else(|| Error::shape("empty raster stack"))?;
    let cube = SpectralCube::new(values, wavelengths_m.to_vec(), pixel_pitch_m)?.normalized();
    match clip {
        Some(clip) => {
            let mut v = cube.values().clone();
            clip_outliers(&mut v, clip);
            cube.with_values(v)
        }
        None => Ok(cube),
    }
}
