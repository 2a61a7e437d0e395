//! PLY point clouds: ASCII and binary little-endian, vertex positions with
//! optional `red`/`green`/`blue` colors.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geom::{Rgb, Vec3};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub colors: Option<Vec<Rgb>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
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
    fn parse(name: &str) -> Option<Self> {
        Some(match name {
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

    fn decode(self, b: &[u8]) -> f64 {
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
    Scalar { name: String, ty: Scalar },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

impl Element {
    fn find(&self, name: &str) -> Option<usize> {
        self.properties
            .iter()
            .position(|p| matches!(p, Property::Scalar { name: n, .. } if n == name))
    }
}

struct Header {
    format: PlyFormat,
    elements: Vec<Element>,
    /// Byte offset of the body.
    body: usize,
    /// Number of header lines, so ASCII body lines can be reported.
    lines: usize,
}

fn parse_error(location: String, message: impl Into<String>) -> Error {
    Error::Parse { location, message: message.into() }
}

fn parse_header(data: &[u8]) -> Result<Header> {
    let mut pos = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let end = data[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| parse_error(format!("line {}", line_no + 1), "header is not terminated by end_header"))?;
        let raw = &data[pos..pos + end];
        pos += end + 1;
        line_no += 1;
        let loc = || format!("line {line_no}");
        let line = std::str::from_utf8(raw).map_err(|_| parse_error(loc(), "header is not valid text"))?.trim();
        let tokens: Vec<&str> = line.split_whitespace().collect();
        if line_no == 1 {
            if line != "ply" {
                return Err(parse_error(loc(), "missing 'ply' magic"));
            }
            continue;
        }
        match tokens.first().copied() {
            None | Some("comment") | Some("obj_info") => {}
            Some("format") => {
                format = Some(match tokens.get(1).copied() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some("binary_big_endian") => {
                        return Err(Error::UnsupportedFormat("binary_big_endian PLY".into()))
                    }
                    other => return Err(parse_error(loc(), format!("unknown format {other:?}"))),
                })
            }
            Some("element") => {
                let (Some(name), Some(count)) = (tokens.get(1), tokens.get(2)) else {
                    return Err(parse_error(loc(), "element needs a name and a count"));
                };
                let count = count.parse().map_err(|_| parse_error(loc(), format!("bad element count {count:?}")))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let element = elements.last_mut().ok_or_else(|| parse_error(loc(), "property before any element"))?;
                let scalar = |s: Option<&&str>| {
                    s.and_then(|t| Scalar::parse(t))
                        .ok_or_else(|| parse_error(loc(), format!("unknown property type {s:?}")))
                };
                let prop = if tokens.get(1) == Some(&"list") {
                    if tokens.len() != 5 {
                        return Err(parse_error(loc(), "list property needs count type, item type and name"));
                    }
                    Property::List { count: scalar(tokens.get(2))?, item: scalar(tokens.get(3))? }
                } else {
                    if tokens.len() != 3 {
                        return Err(parse_error(loc(), "property needs a type and a name"));
                    }
                    Property::Scalar { name: tokens[2].to_string(), ty: scalar(tokens.get(1))? }
                };
                element.properties.push(prop);
            }
            Some("end_header") => break,
            Some(other) => return Err(parse_error(loc(), format!("unexpected header keyword {other:?}"))),
        }
    }
    let format = format.ok_or_else(|| parse_error(format!("line {line_no}"), "missing format line"))?;
    Ok(Header { format, elements, body: pos, lines: line_no })
}

/// Column indices of the vertex element.
struct VertexLayout {
    xyz: [usize; 3],
    rgb: Option<[usize; 3]>,
}

fn vertex_layout(e: &Element) -> Result<VertexLayout> {
    let find = |n: &str| {
        e.find(n).ok_or_else(|| parse_error("header".into(), format!("vertex element has no '{n}' property")))
    };
    let xyz = [find("x")?, find("y")?, find("z")?];
    let rgb = match (e.find("red"), e.find("green"), e.find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    Ok(VertexLayout { xyz, rgb })
}

fn to_color(v: f64) -> u8 {
    v.clamp(0.0, 255.0) as u8
}

pub fn parse_ply(data: &[u8]) -> Result<PointCloud> {
    let header = parse_header(data)?;
    let vertex = header.elements.iter().find(|e| e.name == "vertex");
    let layout = vertex.map(vertex_layout).transpose()?;
    let mut cloud = PointCloud {
        points: Vec::new(),
        colors: layout.as_ref().and_then(|l| l.rgb).map(|_| Vec::new()),
    };
    match header.format {
        PlyFormat::Ascii => read_ascii(data, &header, layout.as_ref(), &mut cloud)?,
        PlyFormat::BinaryLittleEndian => read_binary(data, &header, layout.as_ref(), &mut cloud)?,
    }
    Ok(cloud)
}

fn push_vertex(values: &[f64], layout: &VertexLayout, cloud: &mut PointCloud) {
    cloud.points.push(Vec3::new(values[layout.xyz[0]], values[layout.xyz[1]], values[layout.xyz[2]]));
    if let (Some(rgb), Some(colors)) = (layout.rgb, cloud.colors.as_mut()) {
        colors.push(rgb.map(|i| to_color(values[i])));
    }
}

fn read_ascii(data: &[u8], header: &Header, layout: Option<&VertexLayout>, cloud: &mut PointCloud) -> Result<()> {
    let body = std::str::from_utf8(&data[header.body..])
        .map_err(|_| parse_error(format!("line {}", header.lines + 1), "body is not valid text"))?;
    let mut lines = body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        for _ in 0..element.count {
            let (i, line) = lines
                .next()
                .ok_or_else(|| parse_error(format!("line {}", header.lines + body.lines().count() + 1), "unexpected end of file"))?;
            let loc = || format!("line {}", header.lines + i + 1);
            let mut tokens = line.split_whitespace();
            let mut next = || -> Result<f64> {
                let t = tokens.next().ok_or_else(|| parse_error(loc(), "too few values"))?;
                t.parse::<f64>().map_err(|_| parse_error(loc(), format!("bad number {t:?}")))
            };
            let mut values = Vec::with_capacity(element.properties.len());
            for prop in &element.properties {
                match prop {
                    Property::Scalar { .. } => values.push(next()?),
                    Property::List { .. } => {
                        let n = next()?;
                        if !(n >= 0.0 && n.fract() == 0.0) {
                            return Err(parse_error(loc(), format!("bad list length {n}")));
                        }
                        for _ in 0..n as usize {
                            next()?;
                        }
                        values.push(f64::NAN);
                    }
                }
            }
            if let (true, Some(l)) = (is_vertex, layout) {
                push_vertex(&values, l, cloud);
            }
        }
    }
    Ok(())
}

fn read_binary(data: &[u8], header: &Header, layout: Option<&VertexLayout>, cloud: &mut PointCloud) -> Result<()> {
    let mut pos = header.body;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        let bytes = data
            .get(*pos..*pos + n)
            .ok_or_else(|| parse_error(format!("byte offset {}", *pos), "unexpected end of file"))?;
        *pos += n;
        Ok(bytes)
    };
    for element in &header.elements {
        let is_vertex = element.name == "vertex";
        let mut values = Vec::with_capacity(element.properties.len());
        for _ in 0..element.count {
            values.clear();
            for prop in &element.properties {
                match *prop {
                    Property::Scalar { ty, .. } => values.push(ty.decode(take(&mut pos, ty.size())?)),
                    Property::List { count, item } => {
                        let at = pos;
                        let n = count.decode(take(&mut pos, count.size())?);
                        if n < 0.0 {
                            return Err(parse_error(format!("byte offset {at}"), format!("negative list length {n}")));
                        }
                        take(&mut pos, n as usize * item.size())?;
                        values.push(f64::NAN);
                    }
                }
            }
            if let (true, Some(l)) = (is_vertex, layout) {
                push_vertex(&values, l, cloud);
            }
        }
    }
    Ok(())
}

pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let data = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&data)
}

/// Writes positions as `double` and colors as `uchar`.
pub fn write_ply_to<W: Write>(cloud: &PointCloud, format: PlyFormat, mut out: W) -> std::io::Result<()> {
    let name = match format {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    };
    writeln!(out, "ply\nformat {name} 1.0\nelement vertex {}", cloud.points.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if cloud.colors.is_some() {
        writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    }
    writeln!(out, "end_header")?;
    for (i, p) in cloud.points.iter().enumerate() {
        let color = cloud.colors.as_ref().map(|c| c[i]);
        match format {
            PlyFormat::Ascii => {
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if let Some([r, g, b]) = color {
                    write!(out, " {r} {g} {b}")?;
                }
                writeln!(out)?;
            }
            PlyFormat::BinaryLittleEndian => {
                for v in p.iter() {
                    out.write_all(&v.to_le_bytes())?;
                }
                if let Some(c) = color {
                    out.write_all(&c)?;
                }
            }
        }
    }
    out.flush()
}

pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud, format: PlyFormat) -> Result<()> {
    let path = path.as_ref();
    if cloud.colors.as_ref().is_some_and(|c| c.len() != cloud.points.len()) {
        return Err(Error::DegenerateInput("color count does not match point count".into()));
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_ply_to(cloud, format, std::io::BufWriter::new(file)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "ply\nformat ascii 1.0\nelement vertex 3\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n1 0 0\n0 1.5 -2\n";

    #[test]
    fn ascii_positions_only() {
        let c = parse_ply(THREE.as_bytes()).unwrap();
        assert_eq!(c.points, vec![Vec3::zeros(), Vec3::x(), Vec3::new(0.0, 1.5, -2.0)]);
        assert!(c.colors.is_none());
    }

    #[test]
    fn binary_round_trip_is_bit_exact() {
        let cloud = PointCloud {
            points: vec![Vec3::new(0.1, -1.0 / 3.0, 2e-300), Vec3::new(f64::MAX, 1e-17, -0.0)],
            colors: Some(vec![[1, 2, 3], [250, 0, 128]]),
        };
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let mut buf = Vec::new();
            write_ply_to(&cloud, format, &mut buf).unwrap();
            let back = parse_ply(&buf).unwrap();
            assert_eq!(back.colors, cloud.colors);
            for (a, b) in back.points.iter().zip(&cloud.points) {
                assert!(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
            }
        }
    }

    #[test]
    fn unknown_properties_and_elements_are_skipped() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 2\nproperty float x\nproperty float confidence\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face 1\nproperty list uchar int vertex_indices\nend_header\n1 0.9 2 3 10 20 30\n4 0.1 5 6 40 50 60\n3 0 1 1\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
        assert_eq!(c.colors, Some(vec![[10, 20, 30], [40, 50, 60]]));
    }

    #[test]
    fn binary_with_list_and_float32() {
        let mut data = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty list uchar float extra\nproperty float x\nproperty float y\nproperty float z\nproperty ushort flags\nend_header\n".to_vec();
        data.push(2);
        for v in [9.0f32, 9.0, 1.5, -2.0, 0.25] {
            data.extend_from_slice(&v.to_le_bytes());
        }
        data.extend_from_slice(&7u16.to_le_bytes());
        let c = parse_ply(&data).unwrap();
        assert_eq!(c.points, vec![Vec3::new(1.5, -2.0, 0.25)]);
    }

    #[test]
    fn errors_carry_locations() {
        let bad = THREE.replace("1.5", "abc");
        match parse_ply(bad.as_bytes()) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, "line 10"),
            other => panic!("{other:?}"),
        }
        let big = THREE.replace("ascii", "binary_big_endian");
        assert!(matches!(parse_ply(big.as_bytes()), Err(Error::UnsupportedFormat(_))));
        let mut short = b"ply\nformat binary_little_endian 1.0\nelement vertex 1\nproperty double x\nproperty double y\nproperty double z\nend_header\n".to_vec();
        let body = short.len();
        short.extend_from_slice(&[0u8; 12]);
        match parse_ply(&short) {
            Err(Error::Parse { location, .. }) => assert_eq!(location, format!("byte offset {}", body + 8)),
            other => panic!("{other:?}"),
        }
        let truncated = "ply\nformat ascii 1.0\nelement vertex 4\nproperty float x\nproperty float y\nproperty float z\nend_header\n0 0 0\n";
        assert!(matches!(parse_ply(truncated.as_bytes()), Err(Error::Parse { .. })));
        assert!(matches!(parse_ply(b"plx\n"), Err(Error::Parse { .. })));
    }
}
