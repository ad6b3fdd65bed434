//! Text and binary formats: covariance and density tables, the `FLP1` path
//! block, flat `key = value` configs and inline atom lists.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gaussian_processes::StationaryCovariance;
use crate::levy::LevyMeasure;

/// 17 significant digits, enough to round-trip any `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_error(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { line, msg: msg.into() }
}

fn parse_f64(field: &str, line: usize, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| parse_error(line, format!("{what}: not a number: {field:?}")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(parse_error(line, format!("{what}: non-finite value {field:?}")))
    }
}

/// Two-column numeric table with a required header.
fn read_pairs(text: &str, header: [&str; 2]) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let found = reader.headers().map_err(|e| parse_error(1, e.to_string()))?.clone();
    let names: Vec<String> = found.iter().map(|h| h.to_ascii_lowercase()).collect();
    if names.len() != 2 || names[0] != header[0] || names[1] != header[1] {
        return Err(parse_error(1, format!("expected header `{},{}`, got {:?}", header[0], header[1], names)));
    }
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_error(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 2 {
            return Err(parse_error(line, format!("expected 2 fields, got {}", record.len())));
        }
        a.push(parse_f64(&record[0], line, header[0])?);
        b.push(parse_f64(&record[1], line, header[1])?);
    }
    if a.is_empty() {
        return Err(parse_error(1, "table has no rows"));
    }
    Ok((a, b))
}

/// Tabulated covariance from `lag,value` CSV.
pub fn parse_covariance_csv(text: &str) -> Result<StationaryCovariance> {
    let (lags, values) = read_pairs(text, ["lag", "value"])?;
    StationaryCovariance::tabulated(lags, values)
}

/// Piecewise-linear Lévy density from `x,density` CSV.
pub fn parse_density_csv(text: &str) -> Result<LevyMeasure> {
    let (xs, densities) = read_pairs(text, ["x", "density"])?;
    LevyMeasure::tabulated(xs, densities)
}

/// Atom list `x1:w1,x2:w2,...`.
pub fn parse_atoms(s: &str) -> Result<LevyMeasure> {
    let mut atoms = Vec::new();
    for item in s.split(',') {
        let (x, w) = item
            .split_once(':')
            .ok_or_else(|| parse_error(1, format!("atom {item:?} is not of the form x:w")))?;
        atoms.push((parse_f64(x, 1, "atom location")?, parse_f64(w, 1, "atom weight")?));
    }
    LevyMeasure::atoms(atoms)
}

pub fn format_atoms(atoms: &[(f64, f64)]) -> String {
    atoms.iter().map(|(x, w)| format!("{}:{}", format_float(*x), format_float(*w))).collect::<Vec<_>>().join(",")
}

/// Flat `key = value` file; `#` starts a comment, blank lines are skipped.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) =
            line.split_once('=').ok_or_else(|| parse_error(i + 1, format!("expected key = value, got {line:?}")))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return Err(parse_error(i + 1, format!("invalid key {key:?}")));
        }
        if out.insert(key.to_string(), value.to_string()).is_some() {
            return Err(parse_error(i + 1, format!("duplicate key {key:?}")));
        }
    }
    Ok(out)
}

pub const FLP1_MAGIC: &[u8; 4] = b"FLP1";
pub const FLP1_HEADER_LEN: usize = 36;

/// `n` replicate paths of `n_points` values, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FlpBlock {
    pub n: u64,
    pub n_points: u64,
    pub hurst: f64,
    pub seed: u64,
    pub values: Vec<f64>,
}

/// Magic, then little-endian `n`, `n_points`, `H`, `seed`, then the values.
pub fn encode_flp1(block: &FlpBlock) -> Result<Vec<u8>> {
    let expected = block.n.checked_mul(block.n_points).and_then(|c| usize::try_from(c).ok());
    if expected != Some(block.values.len()) {
        return Err(Error::Usage(format!(
            "{} values do not fill {} x {} paths",
            block.values.len(),
            block.n,
            block.n_points
        )));
    }
    let mut out = Vec::with_capacity(FLP1_HEADER_LEN + 8 * block.values.len());
    out.extend_from_slice(FLP1_MAGIC);
    out.extend_from_slice(&block.n.to_le_bytes());
    out.extend_from_slice(&block.n_points.to_le_bytes());
    out.extend_from_slice(&block.hurst.to_le_bytes());
    out.extend_from_slice(&block.seed.to_le_bytes());
    for v in &block.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

fn word(bytes: &[u8], at: usize) -> [u8; 8] {
    bytes[at..at + 8].try_into().expect("slice of length 8")
}

/// Inverse of [`encode_flp1`]; parse errors report the byte offset as the line.
pub fn decode_flp1(bytes: &[u8]) -> Result<FlpBlock> {
    if bytes.len() < FLP1_HEADER_LEN {
        return Err(parse_error(0, format!("truncated header: {} bytes", bytes.len())));
    }
    if &bytes[..4] != FLP1_MAGIC {
        return Err(parse_error(0, "bad magic, expected FLP1"));
    }
    let n = u64::from_le_bytes(word(bytes, 4));
    let n_points = u64::from_le_bytes(word(bytes, 12));
    let hurst = f64::from_le_bytes(word(bytes, 20));
    let seed = u64::from_le_bytes(word(bytes, 28));
    if !hurst.is_finite() {
        return Err(parse_error(20, "non-finite Hurst index"));
    }
    let body = bytes.len() - FLP1_HEADER_LEN;
    let expected = n.checked_mul(n_points).and_then(|c| c.checked_mul(8));
    if expected != Some(body as u64) {
        return Err(parse_error(FLP1_HEADER_LEN, format!("body has {body} bytes, header announces {n} x {n_points} values")));
    }
    let values = bytes[FLP1_HEADER_LEN..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of length 8")))
        .collect();
    Ok(FlpBlock { n, n_points, hurst, seed, values })
}

/// CSV text with a header row; numbers are written with [`format_float`].
pub fn write_csv(header: &[&str], rows: &[Vec<String>]) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e.to_string()));
    writer.write_record(header).map_err(csv_err)?;
    for row in rows {
        writer.write_record(row).map_err(csv_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(std::io::Error::other(e.to_string())))
}
