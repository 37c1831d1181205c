//! Binary little-endian PLY for point clouds and triangle meshes.
//!
//! Writes `float x, y, z`, optional `uchar red, green, blue` per vertex and,
//! for meshes, `list uchar int vertex_indices` per face. The reader accepts
//! any binary little-endian file whose vertex element carries x/y/z and whose
//! faces (if any) are triangles; other elements and properties are skipped.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub positions: Vec<[f32; 3]>,
    pub colors: Option<Vec<[u8; 3]>>,
    pub faces: Vec<[u32; 3]>,
}

pub fn to_color_bytes(rgb: [f32; 3]) -> [u8; 3] {
    rgb.map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
}

pub fn from_color_bytes(rgb: [u8; 3]) -> [f32; 3] {
    rgb.map(|v| v as f32 / 255.0)
}

impl PlyData {
    /// Serializes to bytes. `with_faces` controls whether a face element is
    /// declared even when there are no faces (meshes always declare one).
    pub fn to_bytes(&self, with_faces: bool) -> Vec<u8> {
        let mut out = Vec::new();
        writeln!(out, "ply").unwrap();
        writeln!(out, "format binary_little_endian 1.0").unwrap();
        writeln!(out, "element vertex {}", self.positions.len()).unwrap();
        for axis in ["x", "y", "z"] {
            writeln!(out, "property float {axis}").unwrap();
        }
        if self.colors.is_some() {
            for c in ["red", "green", "blue"] {
                writeln!(out, "property uchar {c}").unwrap();
            }
        }
        if with_faces || !self.faces.is_empty() {
            writeln!(out, "element face {}", self.faces.len()).unwrap();
            writeln!(out, "property list uchar int vertex_indices").unwrap();
        }
        writeln!(out, "end_header").unwrap();
        for (i, p) in self.positions.iter().enumerate() {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
            if let Some(c) = &self.colors {
                out.extend_from_slice(&c[i]);
            }
        }
        for f in &self.faces {
            out.push(3);
            for &i in f {
                out.extend_from_slice(&(i as i32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (header, body_start) = parse_header(bytes)?;
        let mut cursor = Cursor {
            bytes,
            pos: body_start,
        };
        let mut data = PlyData::default();
        for element in &header {
            match element.name.as_str() {
                "vertex" => read_vertices(element, &mut cursor, &mut data)?,
                "face" => read_faces(element, &mut cursor, &mut data)?,
                _ => {
                    for _ in 0..element.count {
                        for prop in &element.props {
                            cursor.read_prop(prop)?;
                        }
                    }
                }
            }
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Corruption(format!(
                "{} trailing bytes after PLY body",
                bytes.len() - cursor.pos
            )));
        }
        let n = data.positions.len() as u32;
        if let Some(bad) = data.faces.iter().flatten().find(|&&i| i >= n) {
            return Err(Error::Corruption(format!(
                "face index {bad} out of range for {n} vertices"
            )));
        }
        Ok(data)
    }

    pub fn write(&self, path: impl AsRef<Path>, with_faces: bool) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes(with_faces)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
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
            other => return Err(Error::Format(format!("unknown PLY type {other:?}"))),
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
}

#[derive(Debug)]
enum Prop {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

#[derive(Debug)]
struct Element {
    name: String,
    count: usize,
    props: Vec<Prop>,
}

fn parse_header(bytes: &[u8]) -> Result<(Vec<Element>, usize)> {
    const END: &[u8] = b"end_header\n";
    let end = bytes
        .windows(END.len())
        .position(|w| w == END)
        .ok_or_else(|| Error::Format("PLY header has no end_header".into()))?;
    let text = std::str::from_utf8(&bytes[..end])
        .map_err(|_| Error::Format("PLY header is not UTF-8".into()))?;
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(Error::Format("missing PLY magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    let mut saw_format = false;
    for line in lines {
        let tok: Vec<&str> = line.split_whitespace().collect();
        match tok.as_slice() {
            [] | ["comment", ..] | ["obj_info", ..] => {}
            ["format", "binary_little_endian", _] => saw_format = true,
            ["format", other, ..] => {
                return Err(Error::Format(format!("unsupported PLY format {other}")))
            }
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| Error::Format(format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", len, item, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(Prop::List(name.to_string(), Scalar::parse(len)?, Scalar::parse(item)?)),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| Error::Format("property before element".into()))?
                .props
                .push(Prop::Scalar(name.to_string(), Scalar::parse(ty)?)),
            _ => return Err(Error::Format(format!("unrecognized PLY header line {line:?}"))),
        }
    }
    if !saw_format {
        return Err(Error::Format("PLY header has no format line".into()));
    }
    Ok((elements, end + END.len()))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos + n;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or_else(|| Error::Corruption("PLY body is truncated".into()))?;
        self.pos = end;
        Ok(s)
    }

    fn read(&mut self, ty: Scalar) -> Result<f64> {
        let b = self.take(ty.size())?;
        Ok(match ty {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b.try_into().unwrap()),
        })
    }

    fn read_prop(&mut self, prop: &Prop) -> Result<Vec<f64>> {
        match prop {
            Prop::Scalar(_, ty) => Ok(vec![self.read(*ty)?]),
            Prop::List(_, len, item) => {
                let n = self.read(*len)?;
                if !(n >= 0.0) {
                    return Err(Error::Corruption(format!("negative list length {n}")));
                }
                (0..n as usize).map(|_| self.read(*item)).collect()
            }
        }
    }
}

fn read_vertices(element: &Element, cursor: &mut Cursor, data: &mut PlyData) -> Result<()> {
    let names: Vec<&str> = element
        .props
        .iter()
        .map(|p| match p {
            Prop::Scalar(n, _) | Prop::List(n, _, _) => n.as_str(),
        })
        .collect();
    let find = |n: &str| names.iter().position(|&x| x == n);
    let (Some(x), Some(y), Some(z)) = (find("x"), find("y"), find("z")) else {
        return Err(Error::Format("vertex element lacks x/y/z".into()));
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let mut colors = rgb.map(|_| Vec::with_capacity(element.count));
    for _ in 0..element.count {
        let mut vals = Vec::with_capacity(element.props.len());
        for prop in &element.props {
            vals.push(cursor.read_prop(prop)?.first().copied().unwrap_or(0.0));
        }
        data.positions
            .push([vals[x] as f32, vals[y] as f32, vals[z] as f32]);
        if let (Some(idx), Some(out)) = (rgb, colors.as_mut()) {
            out.push(idx.map(|i| vals[i].clamp(0.0, 255.0) as u8));
        }
    }
    data.colors = colors;
    Ok(())
}

fn read_faces(element: &Element, cursor: &mut Cursor, data: &mut PlyData) -> Result<()> {
    for _ in 0..element.count {
        for prop in &element.props {
            let vals = cursor.read_prop(prop)?;
            if let Prop::List(name, _, _) = prop {
                if name == "vertex_indices" || name == "vertex_index" {
                    let [a, b, c] = vals.as_slice() else {
                        return Err(Error::Format(format!(
                            "only triangles are supported, got a {}-gon",
                            vals.len()
                        )));
                    };
                    if [a, b, c].iter().any(|&&v| v < 0.0) {
                        return Err(Error::Corruption("negative face index".into()));
                    }
                    data.faces.push([*a as u32, *b as u32, *c as u32]);
                }
            }
        }
    }
    Ok(())
}
