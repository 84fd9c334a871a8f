//! PLY ingestion (ASCII and binary little-endian) and Gaussian scene dumps.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::scene::{GaussianSet, APP_DIM, GEO_DIM, OPACITY, SH, SH_COEFFS};

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<[f32; 3]>,
    /// Colors in `[0, 1]`; 0.5 gray when the file carries none.
    pub colors: Vec<[f32; 3]>,
    pub has_colors: bool,
}

impl PointCloud {
    pub fn new(positions: Vec<[f32; 3]>, colors: Option<Vec<[f32; 3]>>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::PlyData("point cloud has no vertices".into()));
        }
        if let Some(i) = positions.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(Error::NonFinite { index: i });
        }
        let has_colors = colors.is_some();
        let colors = colors.unwrap_or_else(|| vec![[0.5; 3]; positions.len()]);
        if colors.len() != positions.len() {
            return Err(Error::PlyData("color count differs from position count".into()));
        }
        Ok(Self {
            positions,
            colors,
            has_colors,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
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
            Scalar::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { ty: Scalar, name: String },
    List { count: Scalar, item: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    line: usize,
    props: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLe,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    body_offset: usize,
    body_line: usize,
}

fn parse_err(line: usize, message: impl Into<String>) -> Error {
    Error::PlyParse {
        line,
        message: message.into(),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let mut offset = 0;
    let mut line_no = 0;
    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let Some(end) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            return Err(parse_err(line_no + 1, "header is not terminated by end_header"));
        };
        line_no += 1;
        let raw = &bytes[offset..offset + end];
        offset += end + 1;
        let line = std::str::from_utf8(raw)
            .map_err(|_| parse_err(line_no, "header line is not valid utf-8"))?
            .trim_end_matches('\r')
            .trim();
        let mut tok = line.split_whitespace();
        let keyword = tok.next().unwrap_or("");
        if line_no == 1 {
            if line != "ply" {
                return Err(parse_err(line_no, format!("expected magic 'ply', found '{line}'")));
            }
            continue;
        }
        match keyword {
            "" | "comment" | "obj_info" => {}
            "format" => {
                format = Some(match tok.next() {
                    Some("ascii") => Format::Ascii,
                    Some("binary_little_endian") => Format::BinaryLe,
                    Some(other) => return Err(parse_err(line_no, format!("unsupported format '{other}'"))),
                    None => return Err(parse_err(line_no, "format line is missing the format name")),
                });
            }
            "element" => {
                let name = tok.next().ok_or_else(|| parse_err(line_no, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(line_no, "element count is missing or not an integer"))?;
                elements.push(Element {
                    name: name.to_string(),
                    count,
                    line: line_no,
                    props: Vec::new(),
                });
            }
            "property" => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(line_no, "property declared before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(line_no, "property without a type"))?;
                if ty == "list" {
                    let count = tok.next().and_then(Scalar::parse);
                    let item = tok.next().and_then(Scalar::parse);
                    let name = tok.next();
                    match (count, item, name) {
                        (Some(count), Some(item), Some(_)) => elem.props.push(Property::List { count, item }),
                        _ => return Err(parse_err(line_no, "malformed list property")),
                    }
                } else {
                    let ty = Scalar::parse(ty).ok_or_else(|| parse_err(line_no, format!("unknown property type '{ty}'")))?;
                    let name = tok.next().ok_or_else(|| parse_err(line_no, "property without a name"))?;
                    elem.props.push(Property::Scalar {
                        ty,
                        name: name.to_string(),
                    });
                }
            }
            "end_header" => break,
            other => return Err(parse_err(line_no, format!("unexpected header keyword '{other}'"))),
        }
    }
    let format = format.ok_or_else(|| parse_err(2, "missing format line"))?;
    Ok(Header {
        format,
        elements,
        body_offset: offset,
        body_line: line_no + 1,
    })
}

/// Parses an in-memory PLY file and returns its vertex element.
pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud> {
    let header = parse_header(bytes)?;
    let vi = header
        .elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| parse_err(header.body_line - 1, "no vertex element declared"))?;
    let vertex = &header.elements[vi];
    let find = |n: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
    };
    let mut xyz = [0usize; 3];
    for (slot, n) in xyz.iter_mut().zip(["x", "y", "z"]) {
        *slot = find(n).ok_or_else(|| parse_err(vertex.line, format!("vertex element has no '{n}' property")))?;
    }
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(r), Some(g), Some(b)) => Some([r, g, b]),
        _ => None,
    };
    let color_scale = |p: usize| match vertex.props[p] {
        Property::Scalar { ty: Scalar::U8, .. } => 1.0 / 255.0,
        Property::Scalar { ty: Scalar::U16, .. } => 1.0 / 65535.0,
        _ => 1.0,
    };

    let mut values = vec![0f64; vertex.props.len()];
    let mut positions = Vec::with_capacity(vertex.count);
    let mut colors = rgb.map(|_| Vec::with_capacity(vertex.count));
    let mut push_vertex = |values: &[f64], positions: &mut Vec<[f32; 3]>| {
        positions.push(xyz.map(|p| values[p] as f32));
        if let (Some(colors), Some(rgb)) = (colors.as_mut(), rgb) {
            colors.push(rgb.map(|p| (values[p] * color_scale(p)) as f32));
        }
    };

    match header.format {
        Format::Ascii => {
            let body = std::str::from_utf8(&bytes[header.body_offset..])
                .map_err(|_| parse_err(header.body_line, "ascii body is not valid utf-8"))?;
            let mut lines = body.lines().enumerate().map(|(i, l)| (header.body_line + i, l));
            for elem in &header.elements[..=vi] {
                for _ in 0..elem.count {
                    let (line_no, line) = loop {
                        match lines.next() {
                            Some((n, l)) if !l.trim().is_empty() => break (n, l),
                            Some(_) => continue,
                            None => return Err(parse_err(header.body_line, format!("file ends before all '{}' rows", elem.name))),
                        }
                    };
                    if elem.name != "vertex" {
                        continue;
                    }
                    let mut tok = line.split_whitespace();
                    for (slot, prop) in values.iter_mut().zip(&elem.props) {
                        let t = tok.next().ok_or_else(|| parse_err(line_no, "vertex row has too few values"))?;
                        match prop {
                            Property::Scalar { .. } => {
                                *slot = t.parse::<f64>().map_err(|_| parse_err(line_no, format!("'{t}' is not a number")))?;
                            }
                            Property::List { .. } => {
                                let n = t.parse::<usize>().map_err(|_| parse_err(line_no, "bad list length"))?;
                                for _ in 0..n {
                                    tok.next().ok_or_else(|| parse_err(line_no, "list is truncated"))?;
                                }
                            }
                        }
                    }
                    push_vertex(&values, &mut positions);
                }
            }
        }
        Format::BinaryLe => {
            let mut cursor = header.body_offset;
            let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
                let s = bytes
                    .get(*cursor..*cursor + n)
                    .ok_or_else(|| Error::PlyData("binary body is truncated".into()))?;
                *cursor += n;
                Ok(s)
            };
            for elem in &header.elements[..=vi] {
                for _ in 0..elem.count {
                    for (slot, prop) in values.iter_mut().zip(&elem.props) {
                        match *prop {
                            Property::Scalar { ty, .. } => *slot = ty.read_le(take(&mut cursor, ty.size())?),
                            Property::List { count, item } => {
                                let n = count.read_le(take(&mut cursor, count.size())?) as usize;
                                take(&mut cursor, n * item.size())?;
                            }
                        }
                    }
                    if elem.name == "vertex" {
                        push_vertex(&values, &mut positions);
                    }
                }
            }
        }
    }
    PointCloud::new(positions, colors)
}

/// Writes an ASCII point cloud; used for fixtures and inspection.
pub fn write_points_ascii(path: impl AsRef<Path>, pc: &PointCloud) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str("ply\nformat ascii 1.0\n");
    out.push_str(&format!("element vertex {}\n", pc.len()));
    out.push_str("property float x\nproperty float y\nproperty float z\n");
    out.push_str("property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n");
    for (p, c) in pc.positions.iter().zip(&pc.colors) {
        let c = c.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8);
        out.push_str(&format!("{} {} {} {} {} {}\n", p[0], p[1], p[2], c[0], c[1], c[2]));
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Property names of the conventional 3DGS scene layout, in file order.
fn gaussian_property_names() -> Vec<String> {
    let mut names: Vec<String> = ["x", "y", "z", "nx", "ny", "nz"].iter().map(|s| s.to_string()).collect();
    names.extend((0..3).map(|i| format!("f_dc_{i}")));
    names.extend((0..3 * (SH_COEFFS - 1)).map(|i| format!("f_rest_{i}")));
    names.push("opacity".into());
    names.extend((0..3).map(|i| format!("scale_{i}")));
    names.extend((0..4).map(|i| format!("rot_{i}")));
    names
}

/// Dumps a Gaussian set as a binary PLY in the conventional 3DGS layout
/// (`f_rest` stored channel-major).
pub fn save_gaussians_ply<T: Real>(path: impl AsRef<Path>, gs: &GaussianSet<T>) -> Result<()> {
    let path = path.as_ref();
    let names = gaussian_property_names();
    let mut buf = Vec::new();
    let mut header = format!("ply\nformat binary_little_endian 1.0\ncomment sh_degree {}\nelement vertex {}\n", gs.sh_degree, gs.len());
    for n in &names {
        header.push_str(&format!("property float {n}\n"));
    }
    header.push_str("end_header\n");
    buf.extend_from_slice(header.as_bytes());
    for i in 0..gs.len() {
        let geo = gs.geo_row(i);
        let app = gs.app_row(i);
        let sh = &app[SH];
        let mut row: Vec<f32> = Vec::with_capacity(names.len());
        row.extend(geo[0..3].iter().map(|x| x.f64() as f32));
        row.extend([0.0; 3]);
        row.extend((0..3).map(|c| sh[c].f64() as f32));
        for c in 0..3 {
            for k in 1..SH_COEFFS {
                row.push(sh[k * 3 + c].f64() as f32);
            }
        }
        row.push(app[OPACITY].f64() as f32);
        row.extend(geo[3..10].iter().map(|x| x.f64() as f32));
        for v in row {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads back a scene written by [`save_gaussians_ply`].
pub fn load_gaussians_ply<T: Real>(path: impl AsRef<Path>) -> Result<GaussianSet<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_header(&bytes)?;
    let text = String::from_utf8_lossy(&bytes[..header.body_offset]);
    let sh_degree = text
        .lines()
        .find_map(|l| l.strip_prefix("comment sh_degree ").and_then(|d| d.trim().parse::<u8>().ok()))
        .unwrap_or(3);
    let vertex = header
        .elements
        .iter()
        .find(|e| e.name == "vertex")
        .ok_or_else(|| Error::PlyData("no vertex element".into()))?;
    let names = gaussian_property_names();
    let declared: Vec<&str> = vertex
        .props
        .iter()
        .filter_map(|p| match p {
            Property::Scalar { ty: Scalar::F32, name } => Some(name.as_str()),
            _ => None,
        })
        .collect();
    if header.format != Format::BinaryLe || declared.len() != vertex.props.len() || declared != names {
        return Err(Error::PlyData("file is not a gaussian scene dump".into()));
    }
    let stride = names.len() * 4;
    let body = &bytes[header.body_offset..];
    if body.len() < vertex.count * stride {
        return Err(Error::PlyData("binary body is truncated".into()));
    }
    let mut gs = GaussianSet::with_capacity(vertex.count, sh_degree);
    for i in 0..vertex.count {
        let f = |j: usize| {
            let o = i * stride + j * 4;
            T::c(f32::from_le_bytes(body[o..o + 4].try_into().unwrap()) as f64)
        };
        let mut sh = [T::zero(); 48];
        for c in 0..3 {
            sh[c] = f(6 + c);
            for k in 1..SH_COEFFS {
                sh[k * 3 + c] = f(9 + c * (SH_COEFFS - 1) + (k - 1));
            }
        }
        let o = 9 + 3 * (SH_COEFFS - 1);
        gs.push([f(0), f(1), f(2)], [f(o + 1), f(o + 2), f(o + 3)], [f(o + 4), f(o + 5), f(o + 6), f(o + 7)], f(o), &sh);
    }
    debug_assert_eq!(gs.geometric.len(), vertex.count * GEO_DIM);
    debug_assert_eq!(gs.appearance.len(), vertex.count * APP_DIM);
    Ok(gs)
}
