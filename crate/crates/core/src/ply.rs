//! PLY reading and writing.
//!
//! Supports `ascii` and `binary_little_endian` bodies. Vertices carry
//! `x y z` plus optional `nx ny nz` and `red green blue`; faces are read from
//! a `vertex_indices`/`vertex_index` list (polygons are fan-triangulated) and
//! edges from `vertex1 vertex2`. Other elements and properties are parsed and
//! discarded.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub points: Vec<Point3<f64>>,
    pub normals: Option<Vec<Vector3<f64>>>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub faces: Vec<[usize; 3]>,
    pub edges: Vec<[usize; 2]>,
}

impl PlyData {
    pub fn from_points(points: Vec<Point3<f64>>) -> Self {
        Self { points, ..Default::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(Error::Ply(format!("unknown scalar type `{other}`"))),
        })
    }

    fn read_le<R: Read>(self, r: &mut R) -> Result<f64> {
        macro_rules! rd {
            ($t:ty) => {{
                let mut b = [0u8; std::mem::size_of::<$t>()];
                r.read_exact(&mut b).map_err(|e| Error::Ply(format!("truncated binary body: {e}")))?;
                <$t>::from_le_bytes(b) as f64
            }};
        }
        Ok(match self {
            Scalar::I8 => rd!(i8),
            Scalar::U8 => rd!(u8),
            Scalar::I16 => rd!(i16),
            Scalar::U16 => rd!(u16),
            Scalar::I32 => rd!(i32),
            Scalar::U32 => rd!(u32),
            Scalar::F32 => rd!(f32),
            Scalar::F64 => rd!(f64),
        })
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { name: String, count: Scalar, item: Scalar },
}

impl Property {
    fn name(&self) -> &str {
        match self {
            Property::Scalar { name, .. } | Property::List { name, .. } => name,
        }
    }
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

pub fn read_ply_file(path: &Path) -> Result<PlyData> {
    read_ply(BufReader::new(File::open(path)?))
}

pub fn write_ply_file(path: &Path, data: &PlyData, format: PlyFormat) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ply(&mut w, data, format)?;
    w.flush()?;
    Ok(())
}

pub fn read_ply<R: BufRead>(mut r: R) -> Result<PlyData> {
    let (format, elements) = read_header(&mut r)?;
    let mut data = PlyData::default();
    let mut ascii_tokens: Option<AsciiTokens<R>> = None;
    let mut binary: Option<R> = None;
    match format {
        PlyFormat::Ascii => ascii_tokens = Some(AsciiTokens::new(r)),
        PlyFormat::BinaryLittleEndian => binary = Some(r),
    }

    for el in &elements {
        let mut rows: Vec<Vec<Value>> = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let mut row = Vec::with_capacity(el.props.len());
            for prop in &el.props {
                let v = match (&mut ascii_tokens, &mut binary, prop) {
                    (Some(tok), _, Property::Scalar { .. }) => Value::Scalar(tok.next_f64()?),
                    (Some(tok), _, Property::List { .. }) => {
                        let n = tok.next_f64()?;
                        let n = list_len(n)?;
                        Value::List((0..n).map(|_| tok.next_f64()).collect::<Result<_>>()?)
                    }
                    (None, Some(br), Property::Scalar { ty, .. }) => Value::Scalar(ty.read_le(br)?),
                    (None, Some(br), Property::List { count, item, .. }) => {
                        let n = list_len(count.read_le(br)?)?;
                        Value::List((0..n).map(|_| item.read_le(br)).collect::<Result<_>>()?)
                    }
                    _ => unreachable!("exactly one body reader is active"),
                };
                row.push(v);
            }
            rows.push(row);
        }
        match el.name.as_str() {
            "vertex" => decode_vertices(el, &rows, &mut data)?,
            "face" => decode_faces(el, &rows, &mut data)?,
            "edge" => decode_edges(el, &rows, &mut data)?,
            _ => {}
        }
    }

    let n = data.points.len();
    if data.faces.iter().flatten().chain(data.edges.iter().flatten()).any(|&i| i >= n) {
        return Err(Error::Ply("face or edge references a missing vertex".into()));
    }
    Ok(data)
}

fn list_len(n: f64) -> Result<usize> {
    if n < 0.0 || n.fract() != 0.0 {
        return Err(Error::Ply(format!("invalid list length {n}")));
    }
    Ok(n as usize)
}

fn read_header<R: BufRead>(r: &mut R) -> Result<(PlyFormat, Vec<Element>)> {
    let mut line = String::new();
    let next_line = |r: &mut R, line: &mut String| -> Result<()> {
        line.clear();
        if r.read_line(line)? == 0 {
            return Err(Error::Ply("unexpected end of header".into()));
        }
        Ok(())
    };
    next_line(r, &mut line)?;
    if line.trim_end() != "ply" {
        return Err(Error::Ply("missing `ply` magic".into()));
    }
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        next_line(r, &mut line)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", f, _version] => {
                format = Some(match *f {
                    "ascii" => PlyFormat::Ascii,
                    "binary_little_endian" => PlyFormat::BinaryLittleEndian,
                    other => return Err(Error::Ply(format!("unsupported format `{other}`"))),
                })
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| Error::Ply(format!("bad element count `{count}`")))?,
                props: Vec::new(),
            }),
            ["property", "list", count, item, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Ply("property before element".into()))?;
                el.props.push(Property::List {
                    name: name.to_string(),
                    count: Scalar::parse(count)?,
                    item: Scalar::parse(item)?,
                });
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| Error::Ply("property before element".into()))?;
                el.props.push(Property::Scalar { name: name.to_string(), ty: Scalar::parse(ty)? });
            }
            ["end_header"] => break,
            _ => return Err(Error::Ply(format!("unrecognized header line `{}`", line.trim_end()))),
        }
    }
    let format = format.ok_or_else(|| Error::Ply("missing format line".into()))?;
    Ok((format, elements))
}

struct AsciiTokens<R> {
    reader: R,
    buf: Vec<String>,
    pos: usize,
}

impl<R: BufRead> AsciiTokens<R> {
    fn new(reader: R) -> Self {
        Self { reader, buf: Vec::new(), pos: 0 }
    }

    fn next_f64(&mut self) -> Result<f64> {
        while self.pos >= self.buf.len() {
            let mut line = String::new();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(Error::Ply("unexpected end of ascii body".into()));
            }
            self.buf = line.split_whitespace().map(str::to_owned).collect();
            self.pos = 0;
        }
        let tok = &self.buf[self.pos];
        self.pos += 1;
        tok.parse::<f64>().map_err(|_| Error::Ply(format!("bad number `{tok}`")))
    }
}

fn prop_index(el: &Element, name: &str) -> Option<usize> {
    el.props.iter().position(|p| p.name() == name)
}

fn scalar_at(row: &[Value], i: usize) -> Result<f64> {
    match &row[i] {
        Value::Scalar(v) => Ok(*v),
        Value::List(_) => Err(Error::Ply("expected scalar property, found list".into())),
    }
}

fn decode_vertices(el: &Element, rows: &[Vec<Value>], data: &mut PlyData) -> Result<()> {
    let idx = |n: &str| prop_index(el, n);
    let (x, y, z) = match (idx("x"), idx("y"), idx("z")) {
        (Some(x), Some(y), Some(z)) => (x, y, z),
        _ => return Err(Error::Ply("vertex element lacks x/y/z".into())),
    };
    let normal_idx = match (idx("nx"), idx("ny"), idx("nz")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let color_idx = match (idx("red"), idx("green"), idx("blue")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let mut normals = normal_idx.map(|_| Vec::with_capacity(rows.len()));
    let mut colors = color_idx.map(|_| Vec::with_capacity(rows.len()));
    for row in rows {
        data.points.push(Point3::new(scalar_at(row, x)?, scalar_at(row, y)?, scalar_at(row, z)?));
        if let (Some((a, b, c)), Some(out)) = (normal_idx, normals.as_mut()) {
            out.push(Vector3::new(scalar_at(row, a)?, scalar_at(row, b)?, scalar_at(row, c)?));
        }
        if let (Some((a, b, c)), Some(out)) = (color_idx, colors.as_mut()) {
            let ch = |v: f64| v.clamp(0.0, 255.0) as u8;
            out.push([ch(scalar_at(row, a)?), ch(scalar_at(row, b)?), ch(scalar_at(row, c)?)]);
        }
    }
    data.normals = normals;
    data.colors = colors;
    Ok(())
}

fn decode_faces(el: &Element, rows: &[Vec<Value>], data: &mut PlyData) -> Result<()> {
    let Some(i) = prop_index(el, "vertex_indices").or_else(|| prop_index(el, "vertex_index")) else {
        return Ok(());
    };
    for row in rows {
        let Value::List(ids) = &row[i] else {
            return Err(Error::Ply("face indices must be a list".into()));
        };
        for t in 1..ids.len().saturating_sub(1) {
            data.faces.push([ids[0] as usize, ids[t] as usize, ids[t + 1] as usize]);
        }
    }
    Ok(())
}

fn decode_edges(el: &Element, rows: &[Vec<Value>], data: &mut PlyData) -> Result<()> {
    let (Some(a), Some(b)) = (prop_index(el, "vertex1"), prop_index(el, "vertex2")) else {
        return Ok(());
    };
    for row in rows {
        data.edges.push([scalar_at(row, a)? as usize, scalar_at(row, b)? as usize]);
    }
    Ok(())
}

/// Coordinates and normals are written as `double` so files round-trip exactly.
pub fn write_ply<W: Write>(w: &mut W, data: &PlyData, format: PlyFormat) -> Result<()> {
    let n = data.points.len();
    if data.normals.as_ref().is_some_and(|v| v.len() != n) || data.colors.as_ref().is_some_and(|v| v.len() != n) {
        return Err(Error::Ply("per-vertex attribute length differs from vertex count".into()));
    }
    let fmt = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(w, "ply\nformat {fmt} 1.0\nelement vertex {n}")?;
    writeln!(w, "property double x\nproperty double y\nproperty double z")?;
    if data.normals.is_some() {
        writeln!(w, "property double nx\nproperty double ny\nproperty double nz")?;
    }
    if data.colors.is_some() {
        writeln!(w, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    if !data.faces.is_empty() {
        writeln!(w, "element face {}\nproperty list uchar int vertex_indices", data.faces.len())?;
    }
    if !data.edges.is_empty() {
        writeln!(w, "element edge {}\nproperty int vertex1\nproperty int vertex2", data.edges.len())?;
    }
    writeln!(w, "end_header")?;

    match format {
        PlyFormat::Ascii => {
            for i in 0..n {
                let p = &data.points[i];
                write!(w, "{} {} {}", p.x, p.y, p.z)?;
                if let Some(ns) = &data.normals {
                    write!(w, " {} {} {}", ns[i].x, ns[i].y, ns[i].z)?;
                }
                if let Some(cs) = &data.colors {
                    write!(w, " {} {} {}", cs[i][0], cs[i][1], cs[i][2])?;
                }
                writeln!(w)?;
            }
            for f in &data.faces {
                writeln!(w, "3 {} {} {}", f[0], f[1], f[2])?;
            }
            for e in &data.edges {
                writeln!(w, "{} {}", e[0], e[1])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for i in 0..n {
                let p = &data.points[i];
                for v in [p.x, p.y, p.z] {
                    w.write_all(&v.to_le_bytes())?;
                }
                if let Some(ns) = &data.normals {
                    for v in [ns[i].x, ns[i].y, ns[i].z] {
                        w.write_all(&v.to_le_bytes())?;
                    }
                }
                if let Some(cs) = &data.colors {
                    w.write_all(&cs[i])?;
                }
            }
            for f in &data.faces {
                w.write_all(&[3u8])?;
                for &v in f {
                    w.write_all(&index_i32(v)?.to_le_bytes())?;
                }
            }
            for e in &data.edges {
                for &v in e {
                    w.write_all(&index_i32(v)?.to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

fn index_i32(v: usize) -> Result<i32> {
    i32::try_from(v).map_err(|_| Error::Ply(format!("vertex index {v} exceeds int range")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_data() -> PlyData {
        PlyData {
            points: vec![Point3::new(0.1, -2.5, 3.0), Point3::new(1e-17, 5.0, 6.25), Point3::new(7.0, 8.0, -9.5)],
            normals: Some(vec![Vector3::x(), Vector3::y(), Vector3::z()]),
            colors: Some(vec![[255, 0, 0], [0, 255, 0], [128, 128, 128]]),
            faces: vec![[0, 1, 2]],
            edges: vec![[0, 2], [1, 2]],
        }
    }

    #[test]
    fn round_trip_both_formats() {
        for fmt in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply(&mut buf, &sample_data(), fmt).unwrap();
            assert_eq!(read_ply(&buf[..]).unwrap(), sample_data());
        }
    }

    #[test]
    fn reads_float_vertices_and_quad_faces() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nproperty float confidence\nelement face 1\nproperty list uchar uint vertex_index\nend_header\n0 0 0 1\n1 0 0 1\n1 1 0 1\n0 1 0 1\n4 0 1 2 3\n";
        let d = read_ply(text.as_bytes()).unwrap();
        assert_eq!(d.points.len(), 4);
        assert_eq!(d.faces, vec![[0, 1, 2], [0, 2, 3]]);
        assert!(d.normals.is_none() && d.colors.is_none());
    }

    #[test]
    fn reads_binary_float32() {
        let mut buf = b"ply\nformat binary_little_endian 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n".to_vec();
        for v in [1.5f32, 2.0, 3.0, -1.0, 0.25, 8.0] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        let d = read_ply(&buf[..]).unwrap();
        assert_eq!(d.points[1], Point3::new(-1.0, 0.25, 8.0));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_ply(&b"plx\n"[..]).is_err());
        assert!(read_ply(&b"ply\nformat binary_big_endian 1.0\nend_header\n"[..]).is_err());
        let dangling = "ply\nformat ascii 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n0 0 0\n3 0 1 2\n";
        assert!(read_ply(dangling.as_bytes()).is_err());
        let truncated = "ply\nformat ascii 1.0\nelement vertex 2\nproperty double x\nproperty double y\nproperty double z\nend_header\n0 0 0\n";
        assert!(read_ply(truncated.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn points_round_trip_bit_exact(coords in prop::collection::vec(prop::array::uniform3(-1e6f64..1e6), 1..50), ascii in any::<bool>()) {
            let data = PlyData::from_points(coords.iter().map(|c| Point3::new(c[0], c[1], c[2])).collect());
            let fmt = if ascii { PlyFormat::Ascii } else { PlyFormat::BinaryLittleEndian };
            let mut buf = Vec::new();
            write_ply(&mut buf, &data, fmt).unwrap();
            prop_assert_eq!(read_ply(&buf[..]).unwrap(), data);
        }
    }
}
