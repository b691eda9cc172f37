//! ASCII PLY and CSV point-list readers/writers.
//!
//! PLY vertices carry `x y z` and optionally `nx ny nz`; any further scalar
//! vertex properties are preserved by name. An optional `edge` element
//! (`vertex1 vertex2`) is supported for line-segment plots.

use super::{Point3, PointCloud, Vector3};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed {what}: {detail}")]
    Malformed { what: &'static str, detail: String },
}

fn bad(what: &'static str, detail: impl Into<String>) -> IoError {
    IoError::Malformed {
        what,
        detail: detail.into(),
    }
}

/// Point cloud plus optional extra per-vertex scalars and edges.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlyData {
    pub cloud: PointCloud<f64>,
    pub extra: BTreeMap<String, Vec<f64>>,
    pub edges: Vec<(usize, usize)>,
}

impl PlyData {
    pub fn from_cloud(cloud: PointCloud<f64>) -> Self {
        Self {
            cloud,
            ..Default::default()
        }
    }
}

pub fn write_ply(path: &Path, data: &PlyData) -> Result<(), IoError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(ply_string(data).as_bytes())?;
    f.flush()?;
    Ok(())
}

pub fn ply_string(data: &PlyData) -> String {
    let c = &data.cloud;
    let mut s = String::new();
    s.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(s, "element vertex {}", c.len());
    for p in ["x", "y", "z"] {
        let _ = writeln!(s, "property double {p}");
    }
    if c.normals.is_some() {
        for p in ["nx", "ny", "nz"] {
            let _ = writeln!(s, "property double {p}");
        }
    }
    for name in data.extra.keys() {
        let _ = writeln!(s, "property double {name}");
    }
    if !data.edges.is_empty() {
        let _ = writeln!(s, "element edge {}", data.edges.len());
        s.push_str("property int vertex1\nproperty int vertex2\n");
    }
    s.push_str("end_header\n");
    for (i, p) in c.points.iter().enumerate() {
        let _ = write!(s, "{} {} {}", p.x, p.y, p.z);
        if let Some(n) = &c.normals {
            let _ = write!(s, " {} {} {}", n[i].x, n[i].y, n[i].z);
        }
        for vals in data.extra.values() {
            let _ = write!(s, " {}", vals[i]);
        }
        s.push('\n');
    }
    for (a, b) in &data.edges {
        let _ = writeln!(s, "{a} {b}");
    }
    s
}

struct ElementSpec {
    name: String,
    count: usize,
    props: Vec<String>,
}

pub fn read_ply(path: &Path) -> Result<PlyData, IoError> {
    let f = std::io::BufReader::new(std::fs::File::open(path)?);
    parse_ply(f)
}

pub fn parse_ply<R: BufRead>(reader: R) -> Result<PlyData, IoError> {
    let mut lines = reader.lines();
    let first = lines.next().ok_or_else(|| bad("ply", "empty file"))??;
    if first.trim() != "ply" {
        return Err(bad("ply", "missing magic"));
    }
    let mut elements: Vec<ElementSpec> = Vec::new();
    loop {
        let line = lines.next().ok_or_else(|| bad("ply", "unterminated header"))??;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] => {
                if *fmt != "ascii" {
                    return Err(bad("ply", format!("unsupported format {fmt}")));
                }
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", name, count] => elements.push(ElementSpec {
                name: name.to_string(),
                count: count.parse().map_err(|_| bad("ply", "element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ..] => {
                return Err(bad("ply", "list properties are not supported"));
            }
            ["property", _ty, name] => elements
                .last_mut()
                .ok_or_else(|| bad("ply", "property before element"))?
                .props
                .push(name.to_string()),
            ["end_header"] => break,
            _ => return Err(bad("ply", format!("unexpected header line `{line}`"))),
        }
    }

    let mut out = PlyData::default();
    for el in &elements {
        let mut rows = Vec::with_capacity(el.count);
        for _ in 0..el.count {
            let line = lines.next().ok_or_else(|| bad("ply", "truncated body"))??;
            let vals: Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
            let vals = vals.map_err(|e| bad("ply", e.to_string()))?;
            if vals.len() != el.props.len() {
                return Err(bad("ply", format!("expected {} values, got {}", el.props.len(), vals.len())));
            }
            rows.push(vals);
        }
        match el.name.as_str() {
            "vertex" => {
                let col = |n: &str| el.props.iter().position(|p| p == n);
                let (x, y, z) = match (col("x"), col("y"), col("z")) {
                    (Some(x), Some(y), Some(z)) => (x, y, z),
                    _ => return Err(bad("ply", "vertex element lacks x/y/z")),
                };
                out.cloud.points = rows.iter().map(|r| Point3::new(r[x], r[y], r[z])).collect();
                if let (Some(a), Some(b), Some(c)) = (col("nx"), col("ny"), col("nz")) {
                    out.cloud.normals = Some(rows.iter().map(|r| Vector3::new(r[a], r[b], r[c])).collect());
                }
                for (j, name) in el.props.iter().enumerate() {
                    if !["x", "y", "z", "nx", "ny", "nz"].contains(&name.as_str()) {
                        out.extra.insert(name.clone(), rows.iter().map(|r| r[j]).collect());
                    }
                }
            }
            "edge" => {
                let a = el.props.iter().position(|p| p == "vertex1");
                let b = el.props.iter().position(|p| p == "vertex2");
                if let (Some(a), Some(b)) = (a, b) {
                    out.edges = rows.iter().map(|r| (r[a] as usize, r[b] as usize)).collect();
                }
            }
            _ => {}
        }
    }
    Ok(out)
}

/// Reads `x,y,z` rows; a non-numeric first row is treated as a header.
/// Rows may carry further columns, which are ignored.
pub fn read_points_csv(path: &Path) -> Result<PointCloud<f64>, IoError> {
    let rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    parse_points_csv(rdr)
}

pub fn parse_points_csv<R: std::io::Read>(mut rdr: csv::Reader<R>) -> Result<PointCloud<f64>, IoError> {
    let mut pts = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 3 {
            return Err(bad("csv", format!("row {i} has {} columns", rec.len())));
        }
        let parsed: Result<Vec<f64>, _> = (0..3).map(|j| rec[j].parse::<f64>()).collect();
        match parsed {
            Ok(v) => pts.push(Point3::new(v[0], v[1], v[2])),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(bad("csv", format!("row {i}: {e}"))),
        }
    }
    Ok(PointCloud::new(pts))
}

pub fn write_points_csv(path: &Path, cloud: &PointCloud<f64>) -> Result<(), IoError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y", "z"])?;
    for p in &cloud.points {
        w.write_record([p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
