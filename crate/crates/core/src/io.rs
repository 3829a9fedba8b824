//! Point cloud and mesh file formats: XYZ, PLY (ascii and binary
//! little-endian) and OFF.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cloud::{Point3, PointCloud};
use crate::error::{Error, Result};
use crate::mesh::TriangleMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FileFormat {
    XyzAscii,
    PlyAscii,
    PlyBinaryLe,
    Off,
}

impl FileFormat {
    /// Guesses from the extension; `.ply` defaults to binary for writing.
    pub fn from_path(path: &Path) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        match ext.as_str() {
            "xyz" | "txt" | "pts" => Ok(FileFormat::XyzAscii),
            "ply" => Ok(FileFormat::PlyBinaryLe),
            "off" => Ok(FileFormat::Off),
            _ => Err(Error::UnsupportedFormat(format!("unrecognized extension {:?}", path.display().to_string()))),
        }
    }

    pub fn parse_name(name: &str) -> Result<Self> {
        match name {
            "xyz" => Ok(FileFormat::XyzAscii),
            "ply" | "ply-binary" | "ply_binary" => Ok(FileFormat::PlyBinaryLe),
            "ply-ascii" | "ply_ascii" => Ok(FileFormat::PlyAscii),
            "off" => Ok(FileFormat::Off),
            other => Err(Error::UnsupportedFormat(other.to_string())),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        location: location.into(),
        message: message.into(),
    }
}

pub fn read_cloud(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let points = match FileFormat::from_path(path)? {
        FileFormat::XyzAscii => parse_xyz(path, &bytes)?,
        FileFormat::PlyAscii | FileFormat::PlyBinaryLe => parse_ply(path, &bytes)?.vertices,
        FileFormat::Off => parse_off(path, &bytes)?.0,
    };
    if points.is_empty() {
        return Err(Error::EmptyInput("file contains no points"));
    }
    PointCloud::new(points)
}

/// Reads an OFF or PLY mesh. Polygons are fanned from their first vertex.
pub fn read_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    let (vertices, faces) = match FileFormat::from_path(path)? {
        FileFormat::Off => parse_off(path, &bytes)?,
        FileFormat::PlyAscii | FileFormat::PlyBinaryLe => {
            let ply = parse_ply(path, &bytes)?;
            let faces = ply
                .faces
                .ok_or_else(|| parse_err(path, "header", "PLY file has no face element"))?;
            (ply.vertices, faces)
        }
        FileFormat::XyzAscii => return Err(Error::UnsupportedFormat("XYZ files carry no faces".into())),
    };
    let mut triangles = Vec::new();
    for (fi, f) in faces.iter().enumerate() {
        if f.len() < 3 {
            return Err(parse_err(path, format!("face {fi}"), format!("face has {} vertices", f.len())));
        }
        for i in 1..f.len() - 1 {
            triangles.push([f[0], f[i], f[i + 1]]);
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| parse_err(path, "faces", e.to_string()))
}

/// Formats with 9 significant digits, trimming trailing mantissa zeros.
fn fmt_sig9(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let s = format!("{v:.8e}");
    let (mantissa, exp) = s.split_once('e').unwrap();
    let mantissa = if mantissa.contains('.') {
        mantissa.trim_end_matches('0').trim_end_matches('.')
    } else {
        mantissa
    };
    if exp == "0" {
        mantissa.to_string()
    } else {
        format!("{mantissa}e{exp}")
    }
}

pub fn ply_header(format: FileFormat, vertex_count: usize) -> String {
    let (fmt, ty) = match format {
        FileFormat::PlyAscii => ("ascii", "double"),
        _ => ("binary_little_endian", "float"),
    };
    format!(
        "ply\nformat {fmt} 1.0\nelement vertex {vertex_count}\nproperty {ty} x\nproperty {ty} y\nproperty {ty} z\nend_header\n"
    )
}

pub fn encode_cloud(cloud: &PointCloud, format: FileFormat) -> Vec<u8> {
    let mut out = Vec::new();
    match format {
        FileFormat::XyzAscii => {
            for p in cloud.points() {
                writeln!(out, "{} {} {}", fmt_sig9(p.x), fmt_sig9(p.y), fmt_sig9(p.z)).unwrap();
            }
        }
        FileFormat::PlyAscii => {
            out.extend(ply_header(format, cloud.len()).as_bytes());
            for p in cloud.points() {
                writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
            }
        }
        FileFormat::PlyBinaryLe => {
            out.extend(ply_header(format, cloud.len()).as_bytes());
            for p in cloud.points() {
                for c in [p.x, p.y, p.z] {
                    out.extend((c as f32).to_le_bytes());
                }
            }
        }
        FileFormat::Off => {
            writeln!(out, "OFF\n{} 0 0", cloud.len()).unwrap();
            for p in cloud.points() {
                writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
            }
        }
    }
    out
}

pub fn write_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: FileFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_cloud(cloud, format)).map_err(io_err(path))
}

pub fn write_mesh_off(mesh: &TriangleMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    writeln!(out, "OFF\n{} {} 0", mesh.vertices().len(), mesh.triangles().len()).unwrap();
    for p in mesh.vertices() {
        writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z).unwrap();
    }
    for t in mesh.triangles() {
        writeln!(out, "3 {} {} {}", t[0], t[1], t[2]).unwrap();
    }
    fs::write(path, out).map_err(io_err(path))
}

fn parse_xyz(path: &Path, bytes: &[u8]) -> Result<Vec<Point3>> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
    let mut points = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split_whitespace();
        let mut c = [0.0; 3];
        for (axis, slot) in c.iter_mut().enumerate() {
            let tok = fields
                .next()
                .ok_or_else(|| parse_err(path, format!("line {}", ln + 1), format!("expected 3 coordinates, found {axis}")))?;
            *slot = tok
                .parse()
                .map_err(|_| parse_err(path, format!("line {}", ln + 1), format!("not a number: {tok:?}")))?;
        }
        points.push(Point3::new(c[0], c[1], c[2]));
    }
    Ok(points)
}

type Faces = Vec<Vec<usize>>;

fn parse_off(path: &Path, bytes: &[u8]) -> Result<(Vec<Point3>, Faces)> {
    let text = std::str::from_utf8(bytes).map_err(|e| parse_err(path, format!("byte {}", e.valid_up_to()), "invalid UTF-8"))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, first) = lines.next().ok_or_else(|| parse_err(path, "line 1", "empty file"))?;
    let counts_inline = first.strip_prefix("OFF").ok_or_else(|| parse_err(path, format!("line {ln}"), "missing OFF magic"))?.trim().to_string();
    let (ln, counts) = if counts_inline.is_empty() {
        let (l, c) = lines.next().ok_or_else(|| parse_err(path, format!("line {ln}"), "missing counts"))?;
        (l, c.to_string())
    } else {
        (ln, counts_inline)
    };
    let nums: Vec<usize> = counts
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| parse_err(path, format!("line {ln}"), format!("bad count {t:?}"))))
        .collect::<Result<_>>()?;
    if nums.len() < 2 {
        return Err(parse_err(path, format!("line {ln}"), "expected vertex and face counts"));
    }
    let (nv, nf) = (nums[0], nums[1]);
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(path, "eof", "truncated vertex list"))?;
        let c: Vec<f64> = l
            .split_whitespace()
            .take(3)
            .map(|t| t.parse().map_err(|_| parse_err(path, format!("line {ln}"), format!("not a number: {t:?}"))))
            .collect::<Result<_>>()?;
        if c.len() < 3 {
            return Err(parse_err(path, format!("line {ln}"), "vertex needs 3 coordinates"));
        }
        vertices.push(Point3::new(c[0], c[1], c[2]));
    }
    let mut faces = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, l) = lines.next().ok_or_else(|| parse_err(path, "eof", "truncated face list"))?;
        let mut toks = l.split_whitespace();
        let bad = |t: &str| parse_err(path, format!("line {ln}"), format!("bad face index {t:?}"));
        let k: usize = toks.next().map(|t| t.parse().map_err(|_| bad(t))).transpose()?.unwrap_or(0);
        let idx: Vec<usize> = toks
            .take(k)
            .map(|t| t.parse::<usize>().map_err(|_| bad(t)))
            .collect::<Result<_>>()?;
        if idx.len() != k {
            return Err(parse_err(path, format!("line {ln}"), format!("face declares {k} vertices, found {}", idx.len())));
        }
        if let Some(&i) = idx.iter().find(|&&i| i >= nv) {
            return Err(parse_err(path, format!("line {ln}"), format!("vertex index {i} out of range")));
        }
        faces.push(idx);
    }
    Ok((vertices, faces))
}

#[derive(Debug, Clone, Copy, PartialEq)]
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
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

struct Ply {
    vertices: Vec<Point3>,
    faces: Option<Faces>,
}

enum Body {
    Ascii,
    BinaryLe,
}

fn parse_ply(path: &Path, bytes: &[u8]) -> Result<Ply> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let rest = &bytes[*pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_err(path, format!("byte {}", *pos), "unterminated header"))?;
        let line = std::str::from_utf8(&rest[..end])
            .map_err(|_| parse_err(path, format!("byte {}", *pos), "header is not UTF-8"))?
            .trim_end_matches('\r')
            .to_string();
        *pos += end + 1;
        line_no += 1;
        Ok((line_no, line))
    };

    let (ln, magic) = next_line(&mut pos)?;
    if magic.trim() != "ply" {
        return Err(parse_err(path, format!("line {ln}"), "missing ply magic"));
    }
    let mut body = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (ln, line) = next_line(&mut pos)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        let loc = format!("line {ln}");
        match toks.as_slice() {
            ["format", fmt, _ver] => {
                body = Some(match *fmt {
                    "ascii" => Body::Ascii,
                    "binary_little_endian" => Body::BinaryLe,
                    "binary_big_endian" => {
                        return Err(Error::UnsupportedFormat("big-endian PLY is not supported".into()))
                    }
                    other => return Err(parse_err(path, loc, format!("unknown format {other:?}"))),
                })
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(path, &*loc, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, &*loc, "property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| parse_err(path, &*loc, format!("unknown type {ct:?}")))?;
                let it = Scalar::parse(it).ok_or_else(|| parse_err(path, &*loc, format!("unknown type {it:?}")))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, &*loc, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, &*loc, format!("unknown type {ty:?}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            ["end_header"] => break,
            _ => return Err(parse_err(path, loc, format!("unrecognized header line {line:?}"))),
        }
    }
    let body = body.ok_or_else(|| parse_err(path, "header", "missing format line"))?;
    let vertex = elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(path, "header", "no vertex element"))?;
    let axis_slot = |axis: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar(n, _) if n == axis))
            .ok_or_else(|| parse_err(path, "header", format!("vertex element lacks property {axis}")))
    };
    let slots = [axis_slot("x")?, axis_slot("y")?, axis_slot("z")?];

    let mut reader: Box<dyn RecordReader> = match body {
        Body::Ascii => Box::new(AsciiReader::new(path, &bytes[pos..], line_no)?),
        Body::BinaryLe => Box::new(BinaryReader {
            path,
            bytes,
            pos,
        }),
    };

    let mut vertices = Vec::new();
    let mut faces = None;
    for el in &elements {
        let is_face = el.name == "face";
        let face_slot = el
            .props
            .iter()
            .position(|p| matches!(p, Property::List(n, _, _) if n == "vertex_indices" || n == "vertex_index"));
        let mut el_faces = Vec::new();
        for _ in 0..el.count {
            let record = reader.record(&el.props)?;
            if el.name == "vertex" {
                let c = slots.map(|s| record[s][0]);
                vertices.push(Point3::new(c[0], c[1], c[2]));
            } else if is_face {
                if let Some(slot) = face_slot {
                    let loc = reader.location();
                    let idx: Vec<usize> = record[slot]
                        .iter()
                        .map(|&v| {
                            if v >= 0.0 && v.fract() == 0.0 && (v as usize) < vertex.count {
                                Ok(v as usize)
                            } else {
                                Err(parse_err(path, &*loc, format!("bad vertex index {v}")))
                            }
                        })
                        .collect::<Result<_>>()?;
                    el_faces.push(idx);
                }
            }
            reader.end_record()?;
        }
        if is_face && face_slot.is_some() {
            faces = Some(el_faces);
        }
    }
    Ok(Ply { vertices, faces })
}

trait RecordReader {
    /// Values of every property of one record; scalars are length-1 vectors.
    fn record(&mut self, props: &[Property]) -> Result<Vec<Vec<f64>>>;
    fn end_record(&mut self) -> Result<()>;
    fn location(&self) -> String;
}

struct BinaryReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl BinaryReader<'_> {
    fn take(&mut self, ty: Scalar) -> Result<f64> {
        let n = ty.size();
        if self.pos + n > self.bytes.len() {
            return Err(parse_err(self.path, format!("byte {}", self.pos), "unexpected end of binary data"));
        }
        let v = ty.read_le(&self.bytes[self.pos..self.pos + n]);
        self.pos += n;
        Ok(v)
    }
}

impl RecordReader for BinaryReader<'_> {
    fn record(&mut self, props: &[Property]) -> Result<Vec<Vec<f64>>> {
        props
            .iter()
            .map(|p| match p {
                Property::Scalar(_, ty) => Ok(vec![self.take(*ty)?]),
                Property::List(_, ct, it) => {
                    let at = self.pos;
                    let n = self.take(*ct)?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(parse_err(self.path, format!("byte {at}"), format!("bad list length {n}")));
                    }
                    (0..n as usize).map(|_| self.take(*it)).collect()
                }
            })
            .collect()
    }

    fn end_record(&mut self) -> Result<()> {
        Ok(())
    }

    fn location(&self) -> String {
        format!("byte {}", self.pos)
    }
}

struct AsciiReader {
    path: PathBuf,
    lines: Vec<(usize, Vec<String>)>,
    cursor: usize,
    tok: usize,
}

impl AsciiReader {
    fn new(path: &Path, body: &[u8], header_lines: usize) -> Result<Self> {
        let text = std::str::from_utf8(body).map_err(|e| parse_err(path, format!("body byte {}", e.valid_up_to()), "invalid UTF-8"))?;
        let lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (header_lines + i + 1, l.split_whitespace().map(str::to_string).collect::<Vec<_>>()))
            .filter(|(_, t)| !t.is_empty())
            .collect();
        Ok(Self {
            path: path.to_path_buf(),
            lines,
            cursor: 0,
            tok: 0,
        })
    }

    fn take(&mut self) -> Result<f64> {
        let (ln, toks) = self
            .lines
            .get(self.cursor)
            .ok_or_else(|| parse_err(&self.path, "eof", "fewer records than declared"))?;
        let t = toks
            .get(self.tok)
            .ok_or_else(|| parse_err(&self.path, format!("line {ln}"), "too few values in row"))?;
        let v = t
            .parse::<f64>()
            .map_err(|_| parse_err(&self.path, format!("line {ln}"), format!("not a number: {t:?}")))?;
        self.tok += 1;
        Ok(v)
    }
}

impl RecordReader for AsciiReader {
    fn record(&mut self, props: &[Property]) -> Result<Vec<Vec<f64>>> {
        props
            .iter()
            .map(|p| match p {
                Property::Scalar(..) => Ok(vec![self.take()?]),
                Property::List(..) => {
                    let n = self.take()?;
                    if n < 0.0 || n.fract() != 0.0 {
                        return Err(parse_err(&self.path, self.location(), format!("bad list length {n}")));
                    }
                    (0..n as usize).map(|_| self.take()).collect()
                }
            })
            .collect()
    }

    fn end_record(&mut self) -> Result<()> {
        if let Some((ln, toks)) = self.lines.get(self.cursor) {
            if self.tok != toks.len() {
                return Err(parse_err(&self.path, format!("line {ln}"), format!("expected {} values, found {}", self.tok, toks.len())));
            }
        }
        self.cursor += 1;
        self.tok = 0;
        Ok(())
    }

    fn location(&self) -> String {
        match self.lines.get(self.cursor) {
            Some((ln, _)) => format!("line {ln}"),
            None => "eof".into(),
        }
    }
}
