//! On-disk formats: PNG images and masks, calibration patch tables, color
//! matrix files, simulated datasets and network weights.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibrate::{CalibrationFit, ColorMatrix, PatchSet};
use crate::error::{ensure, Error, Result};
use crate::histnet::{ArchConfig, NetworkWeights};
use crate::image::{Image, Mask};
use crate::pipesim::{PairedSample, PipelineSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

struct Decoded {
    width: usize,
    height: usize,
    channels: usize,
    /// Samples scaled to `[0, 1]`.
    samples: Vec<f32>,
}

fn decode_png(path: &Path) -> Result<Decoded> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::EXPAND);
    let bad = |e: png::DecodingError| Error::format("PNG", format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let bytes = &buf[..info.buffer_size()];
    let channels = info.color_type.samples();
    let samples = match info.bit_depth {
        png::BitDepth::Eight => bytes.iter().map(|&b| b as f32 / 255.0).collect(),
        png::BitDepth::Sixteen => {
            bytes.chunks_exact(2).map(|b| u16::from_be_bytes([b[0], b[1]]) as f32 / 65535.0).collect()
        }
        other => return Err(Error::format("PNG", format!("{}: unsupported bit depth {other:?}", path.display()))),
    };
    Ok(Decoded { width: info.width as usize, height: info.height as usize, channels, samples })
}

/// Reads an 8- or 16-bit PNG as RGB in `[0, 1]`. Gray images are expanded
/// and alpha is dropped.
pub fn read_image(path: &Path) -> Result<Image> {
    let d = decode_png(path)?;
    let data = match d.channels {
        1 | 2 => d.samples.chunks_exact(d.channels).flat_map(|p| [p[0]; 3]).collect(),
        3 => d.samples,
        4 => d.samples.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
        n => return Err(Error::format("PNG", format!("{}: {n} channels", path.display()))),
    };
    Image::new(d.width, d.height, data)
}

/// Reads a grayscale mask; 255 (or 65535) is full coverage. Color masks use
/// their first channel.
pub fn read_mask(path: &Path) -> Result<Mask> {
    let d = decode_png(path)?;
    let data = d.samples.chunks_exact(d.channels).map(|p| p[0]).collect();
    Mask::new(d.width, d.height, data)
}

fn encode_png(path: &Path, width: usize, height: usize, color: png::ColorType, depth: BitDepth, bytes: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(color);
    encoder.set_depth(match depth {
        BitDepth::Eight => png::BitDepth::Eight,
        BitDepth::Sixteen => png::BitDepth::Sixteen,
    });
    let bad = |e: png::EncodingError| Error::format("PNG", format!("{}: {e}", path.display()));
    let mut writer = encoder.write_header().map_err(bad)?;
    writer.write_image_data(bytes).map_err(bad)?;
    writer.finish().map_err(bad)
}

fn quantize(values: &[f32], depth: BitDepth) -> Vec<u8> {
    match depth {
        BitDepth::Eight => values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect(),
        BitDepth::Sixteen => values
            .iter()
            .flat_map(|v| ((v.clamp(0.0, 1.0) * 65535.0).round() as u16).to_be_bytes())
            .collect(),
    }
}

/// Writes an RGB PNG, clamping to `[0, 1]` and rounding to the bit depth.
pub fn write_image(path: &Path, image: &Image, depth: BitDepth) -> Result<()> {
    let bytes = quantize(image.data(), depth);
    encode_png(path, image.width(), image.height(), png::ColorType::Rgb, depth, &bytes)
}

pub fn write_mask(path: &Path, mask: &Mask) -> Result<()> {
    let bytes = quantize(mask.data(), BitDepth::Eight);
    encode_png(path, mask.width(), mask.height(), png::ColorType::Grayscale, BitDepth::Eight, &bytes)
}

/// Patch table: one patch per line as `raw_r raw_g raw_b ref_r ref_g ref_b`
/// (whitespace or commas); `#` starts a comment.
pub fn parse_patches(text: &str, black_level: [f64; 3]) -> Result<PatchSet> {
    let (mut raw, mut reference) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let values: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format("patch table", format!("line {}: {e}", n + 1)))?;
        if values.len() != 6 || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::format("patch table", format!("line {}: expected 6 finite numbers", n + 1)));
        }
        raw.push([values[0], values[1], values[2]]);
        reference.push([values[3], values[4], values[5]]);
    }
    Ok(PatchSet { raw_colors: raw, reference_colors: reference, black_level })
}

pub fn read_patches(path: &Path, black_level: [f64; 3]) -> Result<PatchSet> {
    parse_patches(&read_text(path)?, black_level)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixFile {
    /// Rows of `[T | offset]` applied to `rgb - black`.
    matrix: [[f64; 4]; 3],
    black_level: [f64; 3],
    rms_residual: f64,
}

pub fn color_matrix_to_string(fit: &CalibrationFit, black_level: [f64; 3]) -> String {
    let file = MatrixFile { matrix: fit.matrix.rows, black_level, rms_residual: fit.rms_residual };
    toml::to_string(&file).expect("matrix serializes")
}

/// Parses a color matrix file into the fit and its black level.
pub fn parse_color_matrix(text: &str) -> Result<(CalibrationFit, [f64; 3])> {
    let file: MatrixFile = toml::from_str(text).map_err(|e| Error::format("color matrix", e.to_string()))?;
    Ok((CalibrationFit { matrix: ColorMatrix { rows: file.matrix }, rms_residual: file.rms_residual }, file.black_level))
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// PNG files of a directory in name order.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetIndex {
    seed: u64,
    images: usize,
    pipelines: Vec<PipelineSpec>,
}

pub fn raw_file_name(scene: usize) -> String {
    format!("{scene:04}.png")
}

pub fn jpeg_file_name(scene: usize, pipeline: u32) -> String {
    format!("{scene:04}_{pipeline:03}.png")
}

/// Writes `raw/NNNN.png` (16-bit), `jpeg/NNNN_PPP.png` (8-bit) and
/// `specs.json`.
pub fn write_dataset(dir: &Path, samples: &[PairedSample], specs: &[PipelineSpec], seed: u64) -> Result<()> {
    let (raw_dir, jpeg_dir) = (dir.join("raw"), dir.join("jpeg"));
    create_dir(&raw_dir)?;
    create_dir(&jpeg_dir)?;
    let mut images = 0;
    for s in samples {
        if s.scene >= images {
            write_image(&raw_dir.join(raw_file_name(s.scene)), &s.raw, BitDepth::Sixteen)?;
            images = s.scene + 1;
        }
        write_image(&jpeg_dir.join(jpeg_file_name(s.scene, s.spec.id)), &s.jpeg, BitDepth::Eight)?;
    }
    let index = DatasetIndex { seed, images, pipelines: specs.to_vec() };
    let json = serde_json::to_string_pretty(&index).expect("index serializes");
    write_text(&dir.join("specs.json"), &(json + "\n"))
}

/// Loads a dataset written by [`write_dataset`].
pub fn read_dataset(dir: &Path) -> Result<Vec<PairedSample>> {
    let index: DatasetIndex = serde_json::from_str(&read_text(&dir.join("specs.json"))?)
        .map_err(|e| Error::format("specs.json", e.to_string()))?;
    ensure!(index.images > 0 && !index.pipelines.is_empty(), Contract, "dataset at {} is empty", dir.display());
    let mut samples = Vec::new();
    for scene in 0..index.images {
        let raw = read_image(&dir.join("raw").join(raw_file_name(scene)))?;
        for spec in &index.pipelines {
            let jpeg = read_image(&dir.join("jpeg").join(jpeg_file_name(scene, spec.id)))?;
            raw.check_same_size(&jpeg, "dataset pair")?;
            samples.push(PairedSample { raw: raw.clone(), jpeg, spec: *spec, scene, source: 0 });
        }
    }
    Ok(samples)
}

const WEIGHTS_FORMAT: &str = "camcomp-weights";
pub const WEIGHTS_VERSION: u32 = 1;
const PAYLOAD_MARKER: &str = "--- payload ---\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsHeader {
    format: String,
    version: u32,
    arch: ArchConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

/// Serialized weights: a text header with the architecture and tensor
/// manifest, a marker line, then little-endian `f32` values in manifest
/// order.
pub fn weights_to_bytes(weights: &NetworkWeights) -> Vec<u8> {
    let mut offset = 0;
    let mut tensors = Vec::new();
    for (name, t) in weights.named_params() {
        tensors.push(ManifestEntry { name, shape: t.shape().to_vec(), offset });
        offset += 4 * t.len();
    }
    let header = WeightsHeader { format: WEIGHTS_FORMAT.into(), version: WEIGHTS_VERSION, arch: weights.arch, tensors };
    let mut out = toml::to_string(&header).expect("header serializes").into_bytes();
    out.extend_from_slice(PAYLOAD_MARKER.as_bytes());
    for (_, t) in weights.named_params() {
        for v in t.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses weights, rejecting other format versions, malformed manifests and
/// (when given) a different architecture.
pub fn weights_from_bytes(bytes: &[u8], expected: Option<&ArchConfig>) -> Result<NetworkWeights> {
    let bad = |d: String| Error::format("weights file", d);
    let marker = PAYLOAD_MARKER.as_bytes();
    let split = bytes.windows(marker.len()).position(|w| w == marker).ok_or_else(|| bad("no payload marker".into()))?;
    let text = std::str::from_utf8(&bytes[..split]).map_err(|e| bad(e.to_string()))?;
    let payload = &bytes[split + marker.len()..];
    let header: WeightsHeader = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
    ensure!(header.format == WEIGHTS_FORMAT, Config, "not a weights file (format {:?})", header.format);
    ensure!(
        header.version == WEIGHTS_VERSION,
        Config,
        "weights file version {} is not supported (expected {WEIGHTS_VERSION})",
        header.version
    );
    if let Some(arch) = expected {
        ensure!(
            *arch == header.arch,
            Config,
            "architecture mismatch: file has {:?}, expected {:?}",
            header.arch,
            arch
        );
    }
    let expected_shapes = NetworkWeights::<f32>::expected_shapes(&header.arch);
    if expected_shapes.len() != header.tensors.len() {
        return Err(bad(format!("{} tensors listed, architecture has {}", header.tensors.len(), expected_shapes.len())));
    }
    let mut weights = NetworkWeights::init(header.arch, 0)?;
    let mut offset = 0;
    for ((entry, (name, shape)), param) in header.tensors.iter().zip(&expected_shapes).zip(weights.params_mut()) {
        if entry.name != *name || entry.shape != *shape || entry.offset != offset {
            return Err(bad(format!("manifest entry {} {:?} at {} does not match {name} {shape:?}", entry.name, entry.shape, entry.offset)));
        }
        let len: usize = shape.iter().product();
        let chunk = payload.get(offset..offset + 4 * len).ok_or_else(|| bad(format!("payload too short for {name}")))?;
        for (v, b) in param.values_mut().iter_mut().zip(chunk.chunks_exact(4)) {
            *v = f32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        offset += 4 * len;
    }
    if payload.len() != offset {
        return Err(bad(format!("payload has {} bytes, manifest describes {offset}", payload.len())));
    }
    weights.validate()?;
    Ok(weights)
}

pub fn save_weights(path: &Path, weights: &NetworkWeights) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&weights_to_bytes(weights)).map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: &Path, expected: Option<&ArchConfig>) -> Result<NetworkWeights> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(&bytes, expected)
}
