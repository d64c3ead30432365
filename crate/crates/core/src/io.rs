//! On-disk formats.
//!
//! Binary artifacts are a single file: one line of compact JSON header, a
//! newline, then the little-endian payload. Scenes are the exception: a JSON
//! header naming a sidecar file of raw `f32` radiance.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{to_micros, Event, EventStream, TIME_RESOLUTION};
use crate::params::SensorParams;
use crate::scene::Trajectory;
use crate::spad::{SpadAggregateFrame, SpadBinaryFrame};

const EVENT_RECORD_BYTES: usize = 16;

/// Writes `bytes` to a temporary sibling and renames it over `path`.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path
        .file_name()
        .ok_or_else(|| Error::Format(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Header line + payload.
pub fn encode_with_header<H: Serialize>(header: &H, payload: &[u8]) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec(header)?;
    out.push(b'\n');
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode_with_header<H: DeserializeOwned>(bytes: &[u8]) -> Result<(H, &[u8])> {
    let nl = bytes
        .iter()
        .position(|b| *b == b'\n')
        .ok_or_else(|| Error::Format("missing header line".into()))?;
    let header = serde_json::from_slice(&bytes[..nl])?;
    Ok((header, &bytes[nl + 1..]))
}

fn check_kind(found: &str, expected: &str) -> Result<()> {
    if found != expected {
        return Err(Error::Format(format!("expected a {expected} file, found {found}")));
    }
    Ok(())
}

// ---------------------------------------------------------------- scenes

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadianceHeader {
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    /// Sidecar payload, relative to the header's directory.
    pub data: String,
}

/// Writes `<path>` (JSON header) and `<path>.raw` (row-major f32 LE).
pub fn write_radiance(path: impl AsRef<Path>, radiance: &Array2<f64>) -> Result<()> {
    let path = path.as_ref();
    let (h, w) = radiance.dim();
    let raw_name = format!(
        "{}.raw",
        path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
    );
    let header = RadianceHeader {
        width: w,
        height: h,
        dtype: "f32".into(),
        data: raw_name.clone(),
    };
    let raw: Vec<u8> = radiance.iter().flat_map(|v| (*v as f32).to_le_bytes()).collect();
    write_atomic(path.with_file_name(&raw_name), &raw)?;
    write_atomic(path, &serde_json::to_vec_pretty(&header)?)
}

pub fn read_radiance(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let header: RadianceHeader = serde_json::from_slice(&fs::read(path)?)?;
    if header.dtype != "f32" {
        return Err(Error::Format(format!("unsupported radiance dtype {}", header.dtype)));
    }
    let data_path: PathBuf = path.parent().unwrap_or(Path::new(".")).join(&header.data);
    let raw = fs::read(&data_path)?;
    let values = f32_from_le(&raw, header.width * header.height)?;
    Ok(Array2::from_shape_vec((header.height, header.width), values).expect("length checked"))
}

pub fn write_trajectory(path: impl AsRef<Path>, traj: &Trajectory) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(traj)?)
}

pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    let traj: Trajectory = serde_json::from_slice(&fs::read(path)?)?;
    Trajectory::new(traj.keyframes().to_vec())
}

fn f32_from_le(raw: &[u8], n: usize) -> Result<Vec<f64>> {
    if raw.len() != 4 * n {
        return Err(Error::Format(format!("expected {} f32 bytes, got {}", 4 * n, raw.len())));
    }
    Ok(raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

// ---------------------------------------------------------------- events

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventFileHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub t_span: (f64, f64),
    pub params_hash: String,
    pub params: SensorParams,
    pub count: usize,
}

pub fn encode_events(stream: &EventStream) -> Result<Vec<u8>> {
    let header = EventFileHeader {
        kind: "events".into(),
        width: stream.width,
        height: stream.height,
        t_span: stream.t_span,
        params_hash: stream.params.digest(),
        params: stream.params,
        count: stream.events.len(),
    };
    let mut payload = Vec::with_capacity(stream.events.len() * EVENT_RECORD_BYTES);
    for e in &stream.events {
        payload.extend_from_slice(&to_micros(e.t).to_le_bytes());
        payload.extend_from_slice(&e.x.to_le_bytes());
        payload.extend_from_slice(&e.y.to_le_bytes());
        payload.push(e.polarity as u8);
        payload.extend_from_slice(&[0u8; 3]);
    }
    encode_with_header(&header, &payload)
}

pub fn decode_events(bytes: &[u8]) -> Result<EventStream> {
    let (header, payload): (EventFileHeader, _) = decode_with_header(bytes)?;
    check_kind(&header.kind, "events")?;
    if payload.len() != header.count * EVENT_RECORD_BYTES {
        return Err(Error::Format(format!(
            "event payload has {} bytes for {} records",
            payload.len(),
            header.count
        )));
    }
    let events = payload
        .chunks_exact(EVENT_RECORD_BYTES)
        .map(|r| Event {
            t: u64::from_le_bytes(r[0..8].try_into().unwrap()) as f64 * TIME_RESOLUTION,
            x: u16::from_le_bytes([r[8], r[9]]),
            y: u16::from_le_bytes([r[10], r[11]]),
            polarity: r[12] as i8,
        })
        .collect();
    let stream = EventStream {
        events,
        t_span: header.t_span,
        width: header.width,
        height: header.height,
        params: header.params,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn write_events(path: impl AsRef<Path>, stream: &EventStream) -> Result<()> {
    write_atomic(path, &encode_events(stream)?)
}

pub fn read_events(path: impl AsRef<Path>) -> Result<EventStream> {
    decode_events(&fs::read(path)?)
}

/// CSV with header `t,x,y,polarity`; `t` in seconds.
pub fn events_to_csv(stream: &EventStream) -> String {
    let mut s = String::from("t,x,y,polarity\n");
    for e in &stream.events {
        s.push_str(&format!("{:.6},{},{},{}\n", e.t, e.x, e.y, e.polarity));
    }
    s
}

pub fn events_from_csv(
    text: &str,
    width: usize,
    height: usize,
    t_span: (f64, f64),
    params: SensorParams,
) -> Result<EventStream> {
    let mut lines = text.lines();
    match lines.next().map(str::trim) {
        Some("t,x,y,polarity") => {}
        other => return Err(Error::Format(format!("bad event CSV header {other:?}"))),
    }
    let mut events = Vec::new();
    for (n, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let bad = || Error::Format(format!("bad event CSV row {}: {line}", n + 2));
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 {
            return Err(bad());
        }
        events.push(Event {
            t: f[0].parse::<f64>().map_err(|_| bad())?,
            x: f[1].parse().map_err(|_| bad())?,
            y: f[2].parse().map_err(|_| bad())?,
            polarity: f[3].parse().map_err(|_| bad())?,
        });
    }
    let stream = EventStream {
        events,
        t_span,
        width,
        height,
        params,
    };
    stream.validate()?;
    Ok(stream)
}

// ---------------------------------------------------------------- SPAD

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinaryFramesHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub t_bin: f64,
    /// Start of the first frame; frame `k` starts at `t_start + k * t_bin`.
    pub t_start: f64,
    pub n_frames: usize,
}

/// Consecutive binary frames as one file.
pub fn encode_binary_frames(frames: &[SpadBinaryFrame]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Format("no binary frames to write".into()))?;
    let header = BinaryFramesHeader {
        kind: "spad_binary".into(),
        width: first.width,
        height: first.height,
        t_bin: first.t_bin,
        t_start: first.t_start,
        n_frames: frames.len(),
    };
    let mut payload = Vec::with_capacity(frames.len() * (first.width * first.height).div_ceil(8));
    for f in frames {
        if f.width != first.width || f.height != first.height {
            return Err(Error::ShapeMismatch {
                expected: (first.height, first.width),
                got: (f.height, f.width),
            });
        }
        payload.extend_from_slice(&f.to_bytes());
    }
    encode_with_header(&header, &payload)
}

pub fn decode_binary_frames(bytes: &[u8]) -> Result<Vec<SpadBinaryFrame>> {
    let (h, payload): (BinaryFramesHeader, _) = decode_with_header(bytes)?;
    check_kind(&h.kind, "spad_binary")?;
    let per = (h.width * h.height).div_ceil(8);
    if payload.len() != per * h.n_frames {
        return Err(Error::Format(format!(
            "binary payload has {} bytes, expected {}",
            payload.len(),
            per * h.n_frames
        )));
    }
    if h.n_frames == 0 {
        return Ok(Vec::new());
    }
    payload
        .chunks_exact(per)
        .enumerate()
        .map(|(k, c)| SpadBinaryFrame::from_bytes(h.t_start + k as f64 * h.t_bin, h.t_bin, h.width, h.height, c))
        .collect()
}

pub fn write_binary_frames(path: impl AsRef<Path>, frames: &[SpadBinaryFrame]) -> Result<()> {
    write_atomic(path, &encode_binary_frames(frames)?)
}

pub fn read_binary_frames(path: impl AsRef<Path>) -> Result<Vec<SpadBinaryFrame>> {
    decode_binary_frames(&fs::read(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub n_bins: usize,
    pub exposure: f64,
    pub t_centers: Vec<f64>,
}

pub fn encode_aggregates(frames: &[SpadAggregateFrame]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Format("no aggregate frames to write".into()))?;
    let (h, w) = first.dim();
    let header = AggregateHeader {
        kind: "spad_aggregate".into(),
        width: w,
        height: h,
        n_bins: first.n_bins,
        exposure: first.exposure,
        t_centers: frames.iter().map(|f| f.t_center).collect(),
    };
    let mut payload = Vec::with_capacity(frames.len() * w * h * 2);
    for f in frames {
        if f.dim() != (h, w) || f.n_bins != first.n_bins {
            return Err(Error::ShapeMismatch {
                expected: (h, w),
                got: f.dim(),
            });
        }
        payload.extend(f.counts.iter().flat_map(|c| c.to_le_bytes()));
    }
    encode_with_header(&header, &payload)
}

pub fn decode_aggregates(bytes: &[u8]) -> Result<Vec<SpadAggregateFrame>> {
    let (h, payload): (AggregateHeader, _) = decode_with_header(bytes)?;
    check_kind(&h.kind, "spad_aggregate")?;
    let per = h.width * h.height * 2;
    if payload.len() != per * h.t_centers.len() {
        return Err(Error::Format("aggregate payload length mismatch".into()));
    }
    let frames = h
        .t_centers
        .iter()
        .zip(payload.chunks_exact(per.max(1)))
        .map(|(t, c)| {
            let counts: Vec<u16> = c.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect();
            if counts.iter().any(|&k| k as usize > h.n_bins) {
                return Err(Error::Format("aggregate count exceeds n_bins".into()));
            }
            Ok(SpadAggregateFrame {
                t_center: *t,
                exposure: h.exposure,
                n_bins: h.n_bins,
                counts: Array2::from_shape_vec((h.height, h.width), counts).expect("length checked"),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(frames)
}

pub fn write_aggregates(path: impl AsRef<Path>, frames: &[SpadAggregateFrame]) -> Result<()> {
    write_atomic(path, &encode_aggregates(frames)?)
}

pub fn read_aggregates(path: impl AsRef<Path>) -> Result<Vec<SpadAggregateFrame>> {
    decode_aggregates(&fs::read(path)?)
}

// ---------------------------------------------------------------- float images

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageStackHeader {
    pub kind: String,
    pub width: usize,
    pub height: usize,
    pub dtype: String,
    /// Per-image timestamps; the payload holds `times.len() * planes` images.
    pub times: Vec<f64>,
    /// Images stored per timestamp (e.g. value and variance).
    pub planes: usize,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Stack of same-shape images, each timestamp contributing `planes.len()`
/// consecutive f32 images.
pub fn encode_image_stack(
    kind: &str,
    times: &[f64],
    images: &[Vec<&Array2<f64>>],
    meta: serde_json::Value,
) -> Result<Vec<u8>> {
    let (h, w) = images
        .first()
        .and_then(|p| p.first())
        .map(|a| a.dim())
        .unwrap_or((0, 0));
    let planes = images.first().map_or(0, Vec::len);
    if images.len() != times.len() || images.iter().any(|p| p.len() != planes) {
        return Err(Error::Format("image stack layout mismatch".into()));
    }
    let header = ImageStackHeader {
        kind: kind.into(),
        width: w,
        height: h,
        dtype: "f32".into(),
        times: times.to_vec(),
        planes,
        meta,
    };
    let mut payload = Vec::with_capacity(times.len() * planes * w * h * 4);
    for img in images.iter().flatten() {
        if img.dim() != (h, w) {
            return Err(Error::ShapeMismatch {
                expected: (h, w),
                got: img.dim(),
            });
        }
        payload.extend(img.iter().flat_map(|v| (*v as f32).to_le_bytes()));
    }
    encode_with_header(&header, &payload)
}

pub type ImageStack = (ImageStackHeader, Vec<Vec<Array2<f64>>>);

pub fn decode_image_stack(bytes: &[u8]) -> Result<ImageStack> {
    let (h, payload): (ImageStackHeader, _) = decode_with_header(bytes)?;
    let n = h.width * h.height;
    let values = f32_from_le(payload, n * h.planes * h.times.len())?;
    let mut chunks = values.chunks_exact(n.max(1));
    let images = (0..h.times.len())
        .map(|_| {
            (0..h.planes)
                .map(|_| {
                    let c = chunks.next().expect("length checked");
                    Array2::from_shape_vec((h.height, h.width), c.to_vec()).expect("shape")
                })
                .collect()
        })
        .collect();
    Ok((h, images))
}
