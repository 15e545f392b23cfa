//! Raster and keypoint file formats.
//!
//! * `.f32` single channel: little-endian header `H:u32, W:u32`, then `H·W`
//!   row-major `f32` values.
//! * `.f32` channel stack: header `H:u32, W:u32, C:u32`, then `C` planes.
//! * PNG: 16-bit grayscale, value `v` stored as `round(v · 65535 / 1.5)`
//!   clamped to `[0, 65535]`.
//! * Keypoints JSON: `{"root": index | null, "points": [[x, y], ...]}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{ImageBuffer, Luma};
use serde_json::Value;
use thiserror::Error;

use crate::render::MAX_INTENSITY;
use crate::tree::format_g17;
use crate::types::{ChannelTag, CoreError, ImageGrid, KeypointSet, WorldPoint};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs {
        path: path.display().to_string(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

/// Writes via a temporary file in the same directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(fs_err(dir))?;
    tmp.write_all(bytes).map_err(fs_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Fs {
        path: path.display().to_string(),
        source: e.error,
    })?;
    Ok(())
}

pub fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(fs_err(path))
}

fn u32_at(bytes: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(bytes[i..i + 4].try_into().expect("4 bytes"))
}

pub fn encode_f32(grid: &ImageGrid) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * grid.data().len());
    out.extend_from_slice(&(grid.height() as u32).to_le_bytes());
    out.extend_from_slice(&(grid.width() as u32).to_le_bytes());
    for v in grid.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_f32(bytes: &[u8], tag: ChannelTag) -> Result<ImageGrid, String> {
    if bytes.len() < 8 {
        return Err("truncated header".into());
    }
    let (h, w) = (u32_at(bytes, 0) as usize, u32_at(bytes, 4) as usize);
    let body = &bytes[8..];
    if body.len() != 4 * h * w {
        return Err(format!(
            "expected {} data bytes for {h}x{w}, found {}",
            4 * h * w,
            body.len()
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    ImageGrid::from_vec(h, w, data, tag).map_err(|e| e.to_string())
}

pub fn write_f32(grid: &ImageGrid, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_f32(grid))
}

pub fn read_f32(path: &Path) -> Result<ImageGrid, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    decode_f32(&bytes, ChannelTag::Intensity).map_err(|m| format_err(path, m))
}

pub fn encode_f32_stack(channels: &[ImageGrid]) -> Result<Vec<u8>, CoreError> {
    let (h, w) = channels.first().map_or((0, 0), ImageGrid::shape);
    let mut out = Vec::with_capacity(12 + channels.len() * 4 * h * w);
    out.extend_from_slice(&(h as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    out.extend_from_slice(&(channels.len() as u32).to_le_bytes());
    for c in channels {
        if c.shape() != (h, w) {
            return Err(CoreError::ShapeMismatch(c.shape(), (h, w)));
        }
        for v in c.data() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    Ok(out)
}

/// Decodes a channel stack; channels are tagged in `tags` order when
/// provided, otherwise all as [`ChannelTag::Intensity`].
pub fn decode_f32_stack(bytes: &[u8], tags: &[ChannelTag]) -> Result<Vec<ImageGrid>, String> {
    if bytes.len() < 12 {
        return Err("truncated header".into());
    }
    let (h, w, c) = (
        u32_at(bytes, 0) as usize,
        u32_at(bytes, 4) as usize,
        u32_at(bytes, 8) as usize,
    );
    let body = &bytes[12..];
    if body.len() != 4 * h * w * c {
        return Err(format!(
            "expected {} data bytes, found {}",
            4 * h * w * c,
            body.len()
        ));
    }
    body.chunks_exact(4 * h * w.max(1))
        .take(c)
        .enumerate()
        .map(|(i, plane)| {
            let data = plane
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")) as f64)
                .collect();
            let tag = tags.get(i).copied().unwrap_or(ChannelTag::Intensity);
            ImageGrid::from_vec(h, w, data, tag).map_err(|e| e.to_string())
        })
        .collect()
}

pub fn write_f32_stack(channels: &[ImageGrid], path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_f32_stack(channels)?)
}

pub fn encode_png16(grid: &ImageGrid) -> Result<Vec<u8>, IoError> {
    let scale = 65535.0 / MAX_INTENSITY;
    let pixels: Vec<u16> = grid
        .data()
        .iter()
        .map(|v| (v * scale).round().clamp(0.0, 65535.0) as u16)
        .collect();
    let img: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(grid.width() as u32, grid.height() as u32, pixels)
            .expect("buffer matches dimensions");
    let mut bytes = Vec::new();
    img.write_to(
        &mut std::io::Cursor::new(&mut bytes),
        image::ImageFormat::Png,
    )
    .map_err(|e| format_err(Path::new("<png>"), e.to_string()))?;
    Ok(bytes)
}

pub fn write_png16(grid: &ImageGrid, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &encode_png16(grid)?)
}

/// Reads any grayscale PNG back into intensity units.
pub fn read_png(path: &Path) -> Result<ImageGrid, IoError> {
    let img = image::open(path).map_err(|e| format_err(path, e.to_string()))?;
    let gray = img.to_luma16();
    let (w, h) = gray.dimensions();
    let scale = MAX_INTENSITY / 65535.0;
    let data = gray
        .into_raw()
        .into_iter()
        .map(|v| v as f64 * scale)
        .collect();
    Ok(ImageGrid::from_vec(
        h as usize,
        w as usize,
        data,
        ChannelTag::Intensity,
    )?)
}

/// Reads `.png` or `.f32` by extension.
pub fn read_image(path: &Path) -> Result<ImageGrid, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("png") => read_png(path),
        _ => read_f32(path),
    }
}

/// Keypoints plus the index of the root keypoint, when known.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointFile {
    pub keypoints: KeypointSet,
    pub root: Option<usize>,
}

pub fn keypoints_to_json(file: &KeypointFile) -> String {
    let mut s = String::from("{\"root\": ");
    match file.root {
        Some(r) => s.push_str(&r.to_string()),
        None => s.push_str("null"),
    }
    s.push_str(", \"points\": [");
    for (i, p) in file.keypoints.points().iter().enumerate() {
        if i > 0 {
            s.push_str(", ");
        }
        s.push_str(&format!("[{}, {}]", format_g17(p.x), format_g17(p.y)));
    }
    s.push_str("]}\n");
    s
}

/// Parses keypoints, keeping the file's order verbatim.
pub fn keypoints_from_json(text: &str) -> Result<KeypointFile, CoreError> {
    let doc: Value =
        serde_json::from_str(text).map_err(|e| CoreError::Parse(format!("invalid JSON: {e}")))?;
    let root = match doc.get("root") {
        None | Some(Value::Null) => None,
        Some(v) => Some(
            v.as_u64()
                .ok_or_else(|| CoreError::Parse("root: expected index".into()))?
                as usize,
        ),
    };
    let pts = doc
        .get("points")
        .and_then(Value::as_array)
        .ok_or_else(|| CoreError::Parse("points: missing or not an array".into()))?;
    let points = pts
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let xy = p
                .as_array()
                .filter(|a| a.len() == 2)
                .and_then(|a| Some((a[0].as_f64()?, a[1].as_f64()?)))
                .ok_or_else(|| CoreError::Parse(format!("points[{i}]: expected [x, y]")))?;
            WorldPoint::new(xy.0, xy.1)
        })
        .collect::<Result<Vec<_>, _>>()?;
    if let Some(r) = root {
        if r >= points.len() {
            return Err(CoreError::Parse(format!("root: index {r} out of range")));
        }
    }
    Ok(KeypointFile {
        keypoints: KeypointSet::from_ordered(points),
        root,
    })
}
