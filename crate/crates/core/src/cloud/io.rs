use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use super::PointCloud;
use crate::error::{Error, Result};

/// On-disk pointcloud formats. Both are plain text.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    /// `x,y,z[,nx,ny,nz]` per line, no header. Lines starting with `#` are comments.
    XyzCsv,
    /// ASCII PLY with a `vertex` element carrying `x y z [nx ny nz]`.
    PlyAscii,
}

impl CloudFormat {
    /// Guess from the file extension (`.ply` or `.csv`/`.xyz`).
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "ply" => Some(Self::PlyAscii),
            "csv" | "xyz" | "txt" => Some(Self::XyzCsv),
            _ => None,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "xyz_csv" | "csv" => Ok(Self::XyzCsv),
            "ply_ascii" | "ply" => Ok(Self::PlyAscii),
            other => Err(Error::InvalidParameter(format!("unknown cloud format '{other}'"))),
        }
    }
}

/// Non-fatal issues found while reading a cloud.
#[derive(Debug, Clone, PartialEq)]
pub enum LoadWarning {
    /// A normal was not unit length and has been rescaled.
    RenormalizedNormal { line: usize, norm: f64 },
    /// A zero or non-finite normal; the point is kept with an invalid normal.
    InvalidNormal { line: usize },
}

pub fn load_cloud(path: impl AsRef<Path>, format: CloudFormat) -> Result<PointCloud> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let (cloud, warnings) = read_cloud(BufReader::new(file), format)?;
    for w in &warnings {
        log::warn!("{}: {:?}", path.display(), w);
    }
    Ok(cloud)
}

pub fn read_cloud<R: Read>(reader: R, format: CloudFormat) -> Result<(PointCloud, Vec<LoadWarning>)> {
    let reader = BufReader::new(reader);
    match format {
        CloudFormat::XyzCsv => read_csv(reader),
        CloudFormat::PlyAscii => read_ply(reader),
    }
}

/// Writes the cloud. Refuses empty clouds without touching the filesystem.
pub fn save_cloud(cloud: &PointCloud, path: impl AsRef<Path>, format: CloudFormat) -> Result<()> {
    save_cloud_with_comments(cloud, path, format, &[])
}

pub(crate) fn save_cloud_with_comments(
    cloud: &PointCloud,
    path: impl AsRef<Path>,
    format: CloudFormat,
    comments: &[String],
) -> Result<()> {
    if cloud.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    write_cloud(cloud, &mut out, format, comments)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Serializes `cloud`; `comments` become `#` lines (CSV) or `comment` header
/// lines (PLY).
pub fn write_cloud<W: Write>(
    cloud: &PointCloud,
    out: &mut W,
    format: CloudFormat,
    comments: &[String],
) -> std::io::Result<()> {
    let normal_of = |i: usize| cloud.normal(i).copied().unwrap_or_else(Vector3::zeros);
    match format {
        CloudFormat::XyzCsv => {
            for c in comments {
                writeln!(out, "# {c}")?;
            }
            for (i, p) in cloud.points.iter().enumerate() {
                write!(out, "{},{},{}", p.x, p.y, p.z)?;
                if cloud.has_normals() {
                    let n = normal_of(i);
                    write!(out, ",{},{},{}", n.x, n.y, n.z)?;
                }
                writeln!(out)?;
            }
        }
        CloudFormat::PlyAscii => {
            writeln!(out, "ply")?;
            writeln!(out, "format ascii 1.0")?;
            for c in comments {
                writeln!(out, "comment {c}")?;
            }
            writeln!(out, "element vertex {}", cloud.len())?;
            for axis in ["x", "y", "z"] {
                writeln!(out, "property double {axis}")?;
            }
            if cloud.has_normals() {
                for axis in ["nx", "ny", "nz"] {
                    writeln!(out, "property double {axis}")?;
                }
            }
            writeln!(out, "end_header")?;
            for (i, p) in cloud.points.iter().enumerate() {
                write!(out, "{} {} {}", p.x, p.y, p.z)?;
                if cloud.has_normals() {
                    let n = normal_of(i);
                    write!(out, " {} {} {}", n.x, n.y, n.z)?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

fn parse_f64(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("expected a number, found '{}'", tok.trim()),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            message: format!("non-finite value '{}'", tok.trim()),
        });
    }
    Ok(v)
}

fn checked_normal(n: Vector3<f64>, line: usize, warnings: &mut Vec<LoadWarning>) -> Option<Vector3<f64>> {
    let norm = n.norm();
    if norm == 0.0 || !norm.is_finite() {
        warnings.push(LoadWarning::InvalidNormal { line });
        return None;
    }
    if (norm - 1.0).abs() > 1e-9 {
        warnings.push(LoadWarning::RenormalizedNormal { line, norm });
    }
    Some(n / norm)
}

struct Builder {
    points: Vec<Vector3<f64>>,
    normals: Vec<Option<Vector3<f64>>>,
    has_normals: Option<bool>,
    warnings: Vec<LoadWarning>,
}

impl Builder {
    fn new(has_normals: Option<bool>) -> Self {
        Self {
            points: Vec::new(),
            normals: Vec::new(),
            has_normals,
            warnings: Vec::new(),
        }
    }

    fn push(&mut self, values: &[f64], line: usize) -> Result<()> {
        let with_normal = match values.len() {
            3 => false,
            6 => true,
            n => {
                return Err(Error::Parse {
                    line,
                    message: format!("expected 3 or 6 values, found {n}"),
                })
            }
        };
        match self.has_normals {
            None => self.has_normals = Some(with_normal),
            Some(h) if h != with_normal => {
                return Err(Error::Parse {
                    line,
                    message: "inconsistent column count".into(),
                })
            }
            _ => {}
        }
        self.points.push(Vector3::new(values[0], values[1], values[2]));
        if with_normal {
            let n = Vector3::new(values[3], values[4], values[5]);
            let n = checked_normal(n, line, &mut self.warnings);
            self.normals.push(n);
        }
        Ok(())
    }

    fn finish(self) -> (PointCloud, Vec<LoadWarning>) {
        let normals = (self.has_normals == Some(true)).then_some(self.normals);
        (
            PointCloud {
                points: self.points,
                normals,
            },
            self.warnings,
        )
    }
}

fn read_csv<R: BufRead>(reader: R) -> Result<(PointCloud, Vec<LoadWarning>)> {
    let mut builder = Builder::new(None);
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: lineno,
            message: e.to_string(),
        })?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let values = trimmed
            .split(',')
            .map(|t| parse_f64(t, lineno))
            .collect::<Result<Vec<_>>>()?;
        builder.push(&values, lineno)?;
    }
    Ok(builder.finish())
}

fn read_ply<R: BufRead>(reader: R) -> Result<(PointCloud, Vec<LoadWarning>)> {
    let mut lines = reader.lines().enumerate();
    let next_line = |lines: &mut std::iter::Enumerate<std::io::Lines<R>>| -> Result<Option<(usize, String)>> {
        match lines.next() {
            None => Ok(None),
            Some((i, Ok(l))) => Ok(Some((i + 1, l))),
            Some((i, Err(e))) => Err(Error::Parse {
                line: i + 1,
                message: e.to_string(),
            }),
        }
    };

    let header_err = |line: usize, message: &str| Error::Parse {
        line,
        message: message.to_string(),
    };

    match next_line(&mut lines)? {
        Some((_, l)) if l.trim() == "ply" => {}
        Some((n, _)) => return Err(header_err(n, "missing 'ply' magic")),
        None => return Err(header_err(1, "empty file")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut vertex_props: Vec<String> = Vec::new();
    // Elements declared before `vertex` whose rows precede the vertex rows.
    let mut rows_before = 0usize;
    let mut last_line = 1;
    loop {
        let Some((n, l)) = next_line(&mut lines)? else {
            return Err(header_err(last_line, "unterminated header"));
        };
        last_line = n;
        let toks: Vec<&str> = l.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", _] => {}
            ["format", ..] => return Err(header_err(n, "only ASCII PLY is supported")),
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => {
                let count: usize = count.parse().map_err(|_| header_err(n, "bad element count"))?;
                if *name == "vertex" {
                    vertex_count = Some(count);
                    in_vertex = true;
                } else {
                    if vertex_count.is_none() {
                        rows_before += count;
                    }
                    in_vertex = false;
                }
            }
            ["property", "list", ..] if in_vertex => {
                return Err(header_err(n, "list properties on vertex are not supported"))
            }
            ["property", _ty, name] => {
                if in_vertex {
                    vertex_props.push(name.to_string());
                }
            }
            ["property", ..] => {}
            ["end_header"] => break,
            _ => return Err(header_err(n, &format!("unrecognized header line '{l}'"))),
        }
    }

    let count = vertex_count.ok_or_else(|| header_err(last_line, "no vertex element"))?;
    let pos = |name: &str| vertex_props.iter().position(|p| p == name);
    let (Some(ix), Some(iy), Some(iz)) = (pos("x"), pos("y"), pos("z")) else {
        return Err(header_err(last_line, "vertex element lacks x/y/z"));
    };
    let normal_idx = match (pos("nx"), pos("ny"), pos("nz")) {
        (Some(a), Some(b), Some(c)) => Some([a, b, c]),
        (None, None, None) => None,
        _ => return Err(header_err(last_line, "partial normal properties")),
    };

    for _ in 0..rows_before {
        if next_line(&mut lines)?.is_none() {
            return Err(header_err(last_line, "truncated body"));
        }
    }

    let mut builder = Builder::new(Some(normal_idx.is_some()));
    for _ in 0..count {
        let Some((n, l)) = next_line(&mut lines)? else {
            return Err(header_err(last_line + 1, "fewer vertices than declared"));
        };
        last_line = n;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.len() != vertex_props.len() {
            return Err(header_err(
                n,
                &format!("expected {} values, found {}", vertex_props.len(), toks.len()),
            ));
        }
        let get = |i: usize| parse_f64(toks[i], n);
        let mut values = vec![get(ix)?, get(iy)?, get(iz)?];
        if let Some([a, b, c]) = normal_idx {
            values.extend([get(a)?, get(b)?, get(c)?]);
        }
        builder.push(&values, n)?;
    }
    Ok(builder.finish())
}
