//! File formats: PLY point clouds, CSV tables, JSON configs and model
//! checkpoints.
//!
//! PLY vertices carry `x y z` as `float`, optional `red green blue` as
//! `uchar` and an optional `udf` as `float`. The writer emits binary
//! little-endian by default and ASCII on request; the reader accepts both and
//! skips unknown scalar properties.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::autodiff::checkpoint;
use crate::decoder::{ModelConfig, NeighborhoodDecoder};
use crate::error::{Error, Result};
use crate::extraction::ExtractionConfig;
use crate::geometry::{ColoredPointCloud, NormalizationTransform, Point3};
use crate::training::{LossReport, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PlyFormat {
    #[default]
    BinaryLittleEndian,
    Ascii,
}

impl PlyFormat {
    pub fn from_ascii_flag(ascii: bool) -> Self {
        if ascii {
            PlyFormat::Ascii
        } else {
            PlyFormat::BinaryLittleEndian
        }
    }
}

fn color_byte(c: f64) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn write_ply_to(mut w: impl Write, cloud: &ColoredPointCloud, format: PlyFormat) -> Result<()> {
    cloud.validate()?;
    let fmt = match format {
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
        PlyFormat::Ascii => "ascii",
    };
    writeln!(w, "ply")?;
    writeln!(w, "format {fmt} 1.0")?;
    writeln!(w, "element vertex {}", cloud.len())?;
    for axis in ["x", "y", "z"] {
        writeln!(w, "property float {axis}")?;
    }
    if cloud.colors.is_some() {
        for ch in ["red", "green", "blue"] {
            writeln!(w, "property uchar {ch}")?;
        }
    }
    if cloud.udf.is_some() {
        writeln!(w, "property float udf")?;
    }
    writeln!(w, "end_header")?;
    for (i, p) in cloud.positions.iter().enumerate() {
        let xyz = [p.x as f32, p.y as f32, p.z as f32];
        let rgb = cloud.colors.as_ref().map(|c| c[i].map(color_byte));
        let udf = cloud.udf.as_ref().map(|u| u[i] as f32);
        match format {
            PlyFormat::BinaryLittleEndian => {
                for v in xyz {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(rgb) = rgb {
                    w.write_all(&rgb)?;
                }
                if let Some(u) = udf {
                    w.write_all(&u.to_le_bytes())?;
                }
            }
            PlyFormat::Ascii => {
                write!(w, "{} {} {}", xyz[0], xyz[1], xyz[2])?;
                if let Some([r, g, b]) = rgb {
                    write!(w, " {r} {g} {b}")?;
                }
                if let Some(u) = udf {
                    write!(w, " {u}")?;
                }
                writeln!(w)?;
            }
        }
    }
    Ok(())
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &ColoredPointCloud, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply_to(&mut w, cloud, format)?;
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => ScalarType::I8,
            "uchar" | "uint8" => ScalarType::U8,
            "short" | "int16" => ScalarType::I16,
            "ushort" | "uint16" => ScalarType::U16,
            "int" | "int32" => ScalarType::I32,
            "uint" | "uint32" => ScalarType::U32,
            "float" | "float32" => ScalarType::F32,
            "double" | "float64" => ScalarType::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            ScalarType::I8 | ScalarType::U8 => 1,
            ScalarType::I16 | ScalarType::U16 => 2,
            ScalarType::I32 | ScalarType::U32 | ScalarType::F32 => 4,
            ScalarType::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            ScalarType::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }

    /// ASCII tokens are parsed at the declared precision so both encodings
    /// read back the same values.
    fn parse_ascii(self, tok: &str) -> Option<f64> {
        match self {
            ScalarType::F32 => tok.parse::<f32>().ok().map(f64::from),
            ScalarType::F64 => tok.parse::<f64>().ok(),
            _ => tok.parse::<i64>().ok().map(|v| v as f64),
        }
    }
}

#[derive(Debug)]
struct Property {
    name: String,
    ty: ScalarType,
}

#[derive(Debug)]
struct Header {
    ascii: bool,
    vertices: usize,
    /// Properties of the vertex element.
    props: Vec<Property>,
    /// Bytes per record of elements declared before `vertex`, with counts.
    before: Vec<(usize, usize)>,
    body_start: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| parse_err(start, "unterminated PLY header"))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| parse_err(start, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(parse_err(off, "missing 'ply' magic"));
    }
    let mut ascii = None;
    let mut vertices = None;
    let mut props = Vec::new();
    let mut before = Vec::new();
    // (name, count, record size or None for list-bearing elements)
    let mut current: Option<(String, usize, Option<usize>)> = None;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", f, v] => {
                if *v != "1.0" {
                    return Err(parse_err(off, format!("unsupported PLY version {v}")));
                }
                ascii = Some(match *f {
                    "ascii" => true,
                    "binary_little_endian" => false,
                    other => return Err(parse_err(off, format!("unsupported PLY format {other}"))),
                });
            }
            ["element", name, count] => {
                let count: usize = count
                    .parse()
                    .map_err(|_| parse_err(off, format!("bad element count {count:?}")))?;
                if let Some((prev, n, size)) = current.take() {
                    if prev != "vertex" && vertices.is_none() {
                        let size = size.ok_or_else(|| parse_err(off, "list properties before vertex are unsupported"))?;
                        before.push((size, n));
                    }
                }
                if *name == "vertex" {
                    if vertices.is_some() {
                        return Err(parse_err(off, "duplicate vertex element"));
                    }
                    vertices = Some(count);
                }
                current = Some((name.to_string(), count, Some(0)));
            }
            ["property", "list", ..] => {
                let Some((name, _, size)) = current.as_mut() else {
                    return Err(parse_err(off, "property outside an element"));
                };
                if name == "vertex" {
                    return Err(parse_err(off, "list properties on vertices are unsupported"));
                }
                *size = None;
            }
            ["property", ty, pname] => {
                let Some((name, _, size)) = current.as_mut() else {
                    return Err(parse_err(off, "property outside an element"));
                };
                let ty = ScalarType::parse(ty).ok_or_else(|| parse_err(off, format!("unknown property type {ty:?}")))?;
                if let Some(s) = size {
                    *s += ty.size();
                }
                if name == "vertex" {
                    props.push(Property {
                        name: pname.to_string(),
                        ty,
                    });
                }
            }
            ["end_header"] => break,
            _ => return Err(parse_err(off, format!("unrecognized header line {line:?}"))),
        }
    }
    let ascii = ascii.ok_or_else(|| parse_err(0, "missing format line"))?;
    let vertices = vertices.ok_or_else(|| parse_err(0, "missing vertex element"))?;
    for axis in ["x", "y", "z"] {
        if !props.iter().any(|p| p.name == axis) {
            return Err(parse_err(0, format!("vertex element lacks property {axis}")));
        }
    }
    Ok(Header {
        ascii,
        vertices,
        props,
        before,
        body_start: pos,
    })
}

fn assemble(header: &Header, records: Vec<Vec<f64>>) -> Result<ColoredPointCloud> {
    let col = |n: &str| header.props.iter().position(|p| p.name == n);
    let (x, y, z) = (col("x").unwrap(), col("y").unwrap(), col("z").unwrap());
    let rgb = match (col("red"), col("green"), col("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let udf = col("udf");
    let positions = records.iter().map(|r| Point3::new(r[x], r[y], r[z])).collect();
    let colors = rgb.map(|ids| {
        records
            .iter()
            .map(|r| ids.map(|i| r[i] / 255.0))
            .collect::<Vec<_>>()
    });
    let mut cloud = ColoredPointCloud::new(positions, colors)?;
    if let Some(u) = udf {
        cloud = cloud.with_udf(records.iter().map(|r| r[u]).collect())?;
    }
    Ok(cloud)
}

/// Parses a PLY file held in memory. Errors carry the byte offset of the
/// offending header line or vertex record.
pub fn read_ply_bytes(bytes: &[u8]) -> Result<ColoredPointCloud> {
    let header = parse_header(bytes)?;
    let mut records = Vec::with_capacity(header.vertices);
    if header.ascii {
        let mut pos = header.body_start;
        let mut skip = header.before.iter().map(|&(_, n)| n).sum::<usize>();
        while records.len() < header.vertices {
            if pos >= bytes.len() {
                return Err(parse_err(pos, format!(
                    "expected {} vertices, found {}",
                    header.vertices,
                    records.len()
                )));
            }
            let end = bytes[pos..].iter().position(|&b| b == b'\n').map_or(bytes.len(), |i| pos + i);
            let line = std::str::from_utf8(&bytes[pos..end]).map_err(|_| parse_err(pos, "invalid UTF-8"))?;
            let line_start = pos;
            pos = end + 1;
            if line.trim().is_empty() {
                continue;
            }
            if skip > 0 {
                skip -= 1;
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks.len() < header.props.len() {
                return Err(parse_err(line_start, format!(
                    "vertex record has {} values, expected {}",
                    toks.len(),
                    header.props.len()
                )));
            }
            let rec = header
                .props
                .iter()
                .zip(&toks)
                .map(|(p, t)| p.ty.parse_ascii(t).ok_or_else(|| parse_err(line_start, format!("bad value {t:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            records.push(rec);
        }
    } else {
        let record: usize = header.props.iter().map(|p| p.ty.size()).sum();
        let mut pos = header.body_start + header.before.iter().map(|&(s, n)| s * n).sum::<usize>();
        for i in 0..header.vertices {
            if pos + record > bytes.len() {
                return Err(parse_err(pos.min(bytes.len()), format!(
                    "truncated body: vertex {i} of {} incomplete",
                    header.vertices
                )));
            }
            let mut rec = Vec::with_capacity(header.props.len());
            let mut at = pos;
            for p in &header.props {
                rec.push(p.ty.read_le(&bytes[at..at + p.ty.size()]));
                at += p.ty.size();
            }
            records.push(rec);
            pos += record;
        }
    }
    if let Some((i, _)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(parse_err(header.body_start, format!("vertex {i} holds a non-finite value")));
    }
    assemble(&header, records)
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<ColoredPointCloud> {
    read_ply_bytes(&fs::read(path)?)
}

/// One row per step: `step,anchor,udf,rgb,total,lr`.
pub fn write_loss_log(path: impl AsRef<Path>, history: &[LossReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in history {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_loss_log(path: impl AsRef<Path>) -> Result<Vec<LossReport>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Writes serializable rows with a header line.
pub fn write_csv_rows<T: Serialize>(path: impl AsRef<Path>, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointRow {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

pub fn write_points_csv(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    let rows: Vec<PointRow> = points.iter().map(|p| PointRow { x: p.x, y: p.y, z: p.z }).collect();
    write_csv_rows(path, &rows)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Everything the command-line front end reads from `--config`. Every section
/// is optional and falls back to its defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub shape: Option<String>,
    pub out: Option<PathBuf>,
    /// Path to a model-config JSON; `train.model` is used when absent.
    pub model_config: Option<PathBuf>,
    pub train: TrainConfig,
    pub extraction: ExtractionConfig,
}

/// Metadata stored alongside the parameters of a fitted model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub model: ModelConfig,
    pub normalization: NormalizationTransform,
    pub shape: Option<String>,
    pub steps: usize,
    /// Normalized seen cloud used at inference.
    pub seen: ColoredPointCloud,
}

pub fn save_model(path: impl AsRef<Path>, model: &NeighborhoodDecoder, meta: &CheckpointMeta) -> Result<()> {
    checkpoint::save(path, &model.params, serde_json::to_value(meta)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(NeighborhoodDecoder, CheckpointMeta)> {
    let (params, meta) = checkpoint::load(path)?;
    let meta: CheckpointMeta = serde_json::from_value(meta)?;
    let model = NeighborhoodDecoder::from_params(meta.model, &params)?;
    Ok((model, meta))
}
