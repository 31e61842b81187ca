//! Point-cloud files: whitespace-separated `.xyz` text and the vertex-only
//! subset of PLY (ASCII and binary little-endian).

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use foldpack_core::{Dataset, Point3, PointCloud};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Xyz,
    PlyAscii,
    PlyBinary,
}

impl CloudFormat {
    /// `.ply` maps to binary PLY, anything else to xyz.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("ply") => Self::PlyBinary,
            _ => Self::Xyz,
        }
    }
}

fn core_err(path: &Path, line: usize, e: foldpack_core::Error) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: e.to_string(),
    }
}

/// Load by extension; PLY files declare their own encoding.
pub fn load_cloud(path: &Path) -> Result<PointCloud> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if CloudFormat::from_path(path) == CloudFormat::Xyz {
        let text = String::from_utf8(bytes).map_err(|e| Error::Binary {
            path: path.to_path_buf(),
            offset: e.utf8_error().valid_up_to(),
            msg: "invalid UTF-8".into(),
        })?;
        parse_xyz(&text, path)
    } else {
        parse_ply(&bytes, path)
    }
}

/// One point per line, three reals; `#` comment lines and blank lines are skipped.
pub fn parse_xyz(text: &str, path: &Path) -> Result<PointCloud> {
    let mut pts = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line_no = n + 1;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = t.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0; 3];
        for (c, f) in fields.iter().enumerate() {
            p[c] = f.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                msg: format!("not a number: {f:?}"),
            })?;
            if !p[c].is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: line_no,
                    msg: format!("non-finite coordinate {f:?}"),
                });
            }
        }
        pts.push(p);
    }
    if pts.is_empty() {
        return Err(core_err(path, 0, foldpack_core::Error::EmptyCloud));
    }
    PointCloud::new(pts).map_err(|e| core_err(path, 0, e))
}

/// Shortest round-trip decimal per coordinate, so reading back is bit-exact.
pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::with_capacity(cloud.len() * 24);
    for p in cloud.points() {
        let _ = writeln!(s, "{:?} {:?} {:?}", p[0], p[1], p[2]);
    }
    s
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let bytes = match format {
        CloudFormat::Xyz => format_xyz(cloud).into_bytes(),
        CloudFormat::PlyAscii => encode_ply(cloud, false),
        CloudFormat::PlyBinary => encode_ply(cloud, true),
    };
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn encode_ply(cloud: &PointCloud, binary: bool) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 24 + 128);
    let enc = if binary { "binary_little_endian" } else { "ascii" };
    let header = format!(
        "ply\nformat {enc} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nend_header\n",
        cloud.len()
    );
    out.extend_from_slice(header.as_bytes());
    if binary {
        for p in cloud.points() {
            for c in p {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    } else {
        out.extend_from_slice(format_xyz(cloud).as_bytes());
    }
    out
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
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Self::I8 => b[0] as i8 as f64,
            Self::U8 => b[0] as f64,
            Self::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Self::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Self::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            Self::F64 => f64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]),
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
    props: Vec<Property>,
}

/// Vertex `x`/`y`/`z` only. Elements before the vertex block are skipped with
/// a warning; everything after it is ignored.
pub fn parse_ply(bytes: &[u8], path: &Path) -> Result<PointCloud> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let berr = |offset: usize, msg: String| Error::Binary {
        path: path.to_path_buf(),
        offset,
        msg,
    };

    let mut pos = 0usize;
    let mut line_no = 0usize;
    let next_line = |pos: &mut usize| -> Option<String> {
        let rest = &bytes[*pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        let s = String::from_utf8_lossy(&rest[..end]).trim_end_matches('\r').to_string();
        *pos += end + 1;
        Some(s)
    };

    let mut binary = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        line_no += 1;
        let line = next_line(&mut pos).ok_or_else(|| perr(line_no, "header ends before end_header".into()))?;
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["ply"] if line_no == 1 => {}
            _ if line_no == 1 => return Err(perr(1, "missing ply magic".into())),
            ["format", "ascii", _] => binary = Some(false),
            ["format", "binary_little_endian", _] => binary = Some(true),
            ["format", other, _] => return Err(perr(line_no, format!("unsupported PLY encoding {other}"))),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| perr(line_no, format!("bad element count {count:?}")))?,
                props: Vec::new(),
            }),
            ["property", "list", c, i, _name] => {
                let el = elements.last_mut().ok_or_else(|| perr(line_no, "property before element".into()))?;
                let count = Scalar::parse(c).ok_or_else(|| perr(line_no, format!("unknown type {c}")))?;
                let item = Scalar::parse(i).ok_or_else(|| perr(line_no, format!("unknown type {i}")))?;
                el.props.push(Property::List { count, item });
            }
            ["property", t, name] => {
                let el = elements.last_mut().ok_or_else(|| perr(line_no, "property before element".into()))?;
                let ty = Scalar::parse(t).ok_or_else(|| perr(line_no, format!("unknown type {t}")))?;
                el.props.push(Property::Scalar {
                    name: name.to_string(),
                    ty,
                });
            }
            ["end_header"] => break,
            _ => return Err(perr(line_no, format!("unrecognized header line {line:?}"))),
        }
    }
    let binary = binary.ok_or_else(|| perr(line_no, "missing format line".into()))?;
    let vi = elements
        .iter()
        .position(|e| e.name == "vertex")
        .ok_or_else(|| perr(line_no, "no vertex element".into()))?;
    let vertex = &elements[vi];
    let axis = |n: &str| {
        vertex
            .props
            .iter()
            .position(|p| matches!(p, Property::Scalar { name, .. } if name == n))
            .ok_or_else(|| perr(line_no, format!("vertex element has no {n} property")))
    };
    let xyz = [axis("x")?, axis("y")?, axis("z")?];
    for e in &elements[..vi] {
        log::warn!("{}: skipping PLY element {:?} ({} entries)", path.display(), e.name, e.count);
    }

    let mut pts: Vec<Point3> = Vec::with_capacity(vertex.count);
    if binary {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
            if *pos + n > bytes.len() {
                return Err(berr(*pos, "unexpected end of data".into()));
            }
            let s = &bytes[*pos..*pos + n];
            *pos += n;
            Ok(s)
        };
        for (ei, e) in elements[..=vi].iter().enumerate() {
            for _ in 0..e.count {
                let start = pos;
                let mut p = [0.0; 3];
                for (pi, prop) in e.props.iter().enumerate() {
                    match prop {
                        Property::Scalar { ty, .. } => {
                            let v = ty.read_le(take(&mut pos, ty.size())?);
                            if ei == vi {
                                if let Some(c) = xyz.iter().position(|&a| a == pi) {
                                    p[c] = v;
                                }
                            }
                        }
                        Property::List { count, item } => {
                            let n = count.read_le(take(&mut pos, count.size())?) as usize;
                            take(&mut pos, n * item.size())?;
                        }
                    }
                }
                if ei == vi {
                    if !p.iter().all(|v| v.is_finite()) {
                        return Err(berr(start, "non-finite coordinate".into()));
                    }
                    pts.push(p);
                }
            }
        }
    } else {
        let text = String::from_utf8_lossy(&bytes[pos..]);
        let mut lines = text.lines().enumerate().map(|(i, l)| (line_no + 1 + i, l));
        for (ei, e) in elements[..=vi].iter().enumerate() {
            for _ in 0..e.count {
                let (ln, l) = lines.next().ok_or_else(|| perr(line_no, "unexpected end of data".into()))?;
                if ei != vi {
                    continue;
                }
                let words: Vec<&str> = l.split_whitespace().collect();
                let mut p: Point3 = [0.0; 3];
                for (c, &a) in xyz.iter().enumerate() {
                    let w = words
                        .get(a)
                        .ok_or_else(|| perr(ln, format!("expected {} values", vertex.props.len())))?;
                    p[c] = w.parse().map_err(|_| perr(ln, format!("not a number: {w:?}")))?;
                    if !p[c].is_finite() {
                        return Err(perr(ln, format!("non-finite coordinate {w:?}")));
                    }
                }
                pts.push(p);
            }
        }
    }
    PointCloud::new(pts).map_err(|e| perr(line_no, e.to_string()))
}

/// Every `.xyz`/`.ply` file in `dir`, sorted by file name. Clouds must share
/// their point count; the first offending file is named in the error.
pub fn load_dataset_dir(dir: &Path, normalize: bool) -> Result<Dataset> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            matches!(
                p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()).as_deref(),
                Some("xyz" | "ply")
            )
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Dataset {
            path: dir.to_path_buf(),
            msg: "no .xyz or .ply files".into(),
        });
    }
    let mut clouds = Vec::with_capacity(files.len());
    let mut names = Vec::with_capacity(files.len());
    for f in &files {
        let c = load_cloud(f)?;
        if let Some(first) = clouds.first().map(PointCloud::len) {
            if c.len() != first {
                return Err(Error::Dataset {
                    path: f.clone(),
                    msg: format!("has {} points, expected {first} like {}", c.len(), files[0].display()),
                });
            }
        }
        clouds.push(if normalize { c.normalized_unit_sphere() } else { c });
        names.push(f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default());
    }
    Ok(Dataset::new(clouds, names)?)
}

/// Write each instance as `<dir>/<name>.xyz`.
pub fn save_dataset_dir(dataset: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (c, name) in dataset.clouds().iter().zip(dataset.names()) {
        save_cloud(c, &dir.join(format!("{name}.xyz")), CloudFormat::Xyz)?;
    }
    Ok(())
}
