use super::{BinaryMask, FlowError, FlowField};
use crate::Real;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

fn io_err(e: std::io::Error) -> FlowError {
    FlowError::Malformed(e.to_string())
}

/// 8-bit binary PGM with foreground 255.
pub fn write_mask_pgm(mask: &BinaryMask, path: &Path) -> Result<(), FlowError> {
    let mut bytes = format!("P5\n{} {}\n255\n", mask.width, mask.height).into_bytes();
    bytes.extend(mask.values().iter().map(|&v| v * 255));
    std::fs::write(path, bytes).map_err(io_err)
}

/// Reads an 8-bit P5 image, thresholding at half the maximum value.
pub fn read_mask_pgm(path: &Path) -> Result<BinaryMask, FlowError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(io_err)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(FlowError::Malformed("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(FlowError::Malformed(format!("unsupported magic {}", fields[0])));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| FlowError::Malformed(format!("bad header field {s}")));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(FlowError::Malformed("mask PGM must be 8-bit".into()));
    }
    let data = bytes.get(pos..pos + w * h).ok_or_else(|| FlowError::Malformed("truncated PGM data".into()))?;
    let values = data.iter().map(|&b| (b as usize * 2 > max) as u8).collect();
    BinaryMask::from_values(w, h, values)
}

/// One row of comma-separated 0/1 values per image row.
pub fn write_mask_csv(mask: &BinaryMask, path: &Path) -> Result<(), FlowError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for row in mask.values().chunks(mask.width.max(1)) {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(",")).map_err(io_err)?;
    }
    out.flush().map_err(io_err)
}

fn read_rows(path: &Path) -> Result<Vec<Vec<String>>, FlowError> {
    let f = std::fs::File::open(path).map_err(io_err)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line.map_err(io_err)?;
        out.push(line.trim().split(',').map(|s| s.trim().to_string()).collect::<Vec<_>>());
    }
    Ok(out)
}

pub fn read_mask_csv(path: &Path) -> Result<BinaryMask, FlowError> {
    let rows: Vec<_> = read_rows(path)?.into_iter().filter(|r| r.iter().any(|s| !s.is_empty())).collect();
    let height = rows.len();
    let width = rows.first().map_or(0, |r| r.len());
    let mut values = Vec::with_capacity(width * height);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != width {
            return Err(FlowError::Malformed(format!("row {i} has {} columns, expected {width}", r.len())));
        }
        for s in r {
            values.push(s.parse::<u8>().map_err(|_| FlowError::Malformed(format!("bad mask value {s}")))?);
        }
    }
    BinaryMask::from_values(width, height, values)
}

/// The u plane's rows, a blank separator line, then the v plane's rows.
pub fn write_flow_csv<T: Real>(flow: &FlowField<T>, path: &Path) -> Result<(), FlowError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
    for (k, plane) in [&flow.u, &flow.v].into_iter().enumerate() {
        if k == 1 {
            writeln!(out).map_err(io_err)?;
        }
        for row in plane.chunks(flow.width.max(1)) {
            let line: Vec<String> = row.iter().map(|v| format!("{}", v.as_f64())).collect();
            writeln!(out, "{}", line.join(",")).map_err(io_err)?;
        }
    }
    out.flush().map_err(io_err)
}

pub fn read_flow_csv<T: Real>(path: &Path) -> Result<FlowField<T>, FlowError> {
    let rows = read_rows(path)?;
    let mut planes: Vec<Vec<Vec<T>>> = vec![Vec::new()];
    for r in rows {
        if r.iter().all(|s| s.is_empty()) {
            if !planes.last().unwrap().is_empty() {
                planes.push(Vec::new());
            }
            continue;
        }
        let vals = r
            .iter()
            .map(|s| s.parse::<f64>().map(T::lit).map_err(|_| FlowError::Malformed(format!("bad flow value {s}"))))
            .collect::<Result<Vec<_>, _>>()?;
        planes.last_mut().unwrap().push(vals);
    }
    planes.retain(|p| !p.is_empty());
    if planes.len() != 2 {
        return Err(FlowError::Malformed(format!("expected 2 planes, found {}", planes.len())));
    }
    let height = planes[0].len();
    let width = planes[0].first().map_or(0, |r| r.len());
    if planes[1].len() != height || planes.iter().flatten().any(|r| r.len() != width) {
        return Err(FlowError::DimensionMismatch("flow planes differ in shape".into()));
    }
    let mut it = planes.into_iter().map(|p| p.into_iter().flatten().collect::<Vec<T>>());
    let (u, v) = (it.next().unwrap(), it.next().unwrap());
    FlowField::new(width, height, u, v)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mask_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = BinaryMask::from_fn(7, 5, |x, y| (x + 2 * y) % 3 == 0);
        let p = dir.path().join("m.pgm");
        write_mask_pgm(&m, &p).unwrap();
        assert_eq!(read_mask_pgm(&p).unwrap(), m);
        let c = dir.path().join("m.csv");
        write_mask_csv(&m, &c).unwrap();
        assert_eq!(read_mask_csv(&c).unwrap(), m);
    }

    #[test]
    fn flow_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let f = FlowField::<f64>::from_fn(4, 3, |x, y| (x as f64 * 0.25, -(y as f64) * 1.5));
        let p = dir.path().join("f.csv");
        write_flow_csv(&f, &p).unwrap();
        assert_eq!(read_flow_csv::<f64>(&p).unwrap(), f);
    }
}
