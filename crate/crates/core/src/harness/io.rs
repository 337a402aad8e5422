//! Plain-text cloud, field and boundary files.
//!
//! ```text
//! PC2 3          FIELD complex 2      BOUNDARY 2
//! 0 0            0.1 -0.2             0 0 0
//! 1 0            0 0                  5 1 0.5
//! 0 1
//! ```
//!
//! Floats are written in shortest round-trip form, so reading a written file
//! reproduces every value bit for bit.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::pointcloud::PointCloud;
use crate::{Complex64, Error, Result};

fn fmt(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn format_err(line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        line,
        message: message.into(),
    }
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    number: usize,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Lines {
            inner: reader.lines(),
            number: 0,
        }
    }

    /// Next non-empty line with its 1-based number.
    fn next(&mut self) -> Result<Option<(usize, String)>> {
        for line in self.inner.by_ref() {
            self.number += 1;
            let line = line?;
            if !line.trim().is_empty() {
                return Ok(Some((self.number, line)));
            }
        }
        Ok(None)
    }

    fn expect(&mut self, what: &str) -> Result<(usize, String)> {
        self.next()?.ok_or_else(|| {
            format_err(
                self.number + 1,
                format!("unexpected end of file, expected {what}"),
            )
        })
    }

    fn finish(&mut self) -> Result<()> {
        match self.next()? {
            Some((n, _)) => Err(format_err(n, "trailing data after the declared rows")),
            None => Ok(()),
        }
    }
}

fn parse_row(line: usize, text: &str, width: usize) -> Result<Vec<f64>> {
    let vals: Vec<f64> = text
        .split_whitespace()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| format_err(line, format!("`{t}` is not a number")))
        })
        .collect::<Result<_>>()?;
    if vals.len() != width {
        return Err(format_err(
            line,
            format!("expected {width} values, found {}", vals.len()),
        ));
    }
    Ok(vals)
}

fn parse_count(line: usize, text: Option<&str>) -> Result<usize> {
    text.and_then(|t| t.parse().ok())
        .ok_or_else(|| format_err(line, "missing or invalid row count"))
}

pub fn write_cloud<W: Write>(mut out: W, pc: &PointCloud) -> Result<()> {
    writeln!(out, "PC{} {}", pc.dim(), pc.len())?;
    for p in pc.iter() {
        let row: Vec<String> = p.iter().map(|&v| fmt(v)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_cloud<R: BufRead>(reader: R) -> Result<PointCloud> {
    let mut lines = Lines::new(reader);
    let (n0, header) = lines.expect("a `PC2 N` or `PC3 N` header")?;
    let mut parts = header.split_whitespace();
    let dim = match parts.next() {
        Some("PC2") => 2,
        Some("PC3") => 3,
        other => {
            return Err(format_err(
                n0,
                format!("unknown header `{}`", other.unwrap_or("")),
            ))
        }
    };
    let count = parse_count(n0, parts.next())?;
    let mut coords = Vec::with_capacity(count * dim);
    for _ in 0..count {
        let (n, text) = lines.expect("a point row")?;
        coords.extend(parse_row(n, &text, dim)?);
    }
    lines.finish()?;
    PointCloud::from_flat(dim, coords)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Scalar,
    Vec2,
    Vec3,
    Complex,
}

impl FieldKind {
    pub fn width(self) -> usize {
        match self {
            FieldKind::Scalar => 1,
            FieldKind::Vec2 | FieldKind::Complex => 2,
            FieldKind::Vec3 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Scalar => "scalar",
            FieldKind::Vec2 => "vec2",
            FieldKind::Vec3 => "vec3",
            FieldKind::Complex => "complex",
        }
    }
}

impl std::str::FromStr for FieldKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "scalar" => FieldKind::Scalar,
            "vec2" => FieldKind::Vec2,
            "vec3" => FieldKind::Vec3,
            "complex" => FieldKind::Complex,
            _ => {
                return Err(Error::Catalog {
                    name: s.into(),
                    valid: vec!["scalar", "vec2", "vec3", "complex"],
                });
            }
        })
    }
}

/// Per-point values stored row by row.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub kind: FieldKind,
    pub rows: Vec<Vec<f64>>,
}

impl Field {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn from_complex(values: &[Complex64]) -> Self {
        Field {
            kind: FieldKind::Complex,
            rows: values.iter().map(|z| vec![z.re, z.im]).collect(),
        }
    }

    pub fn from_vec2(values: &[[f64; 2]]) -> Self {
        Field {
            kind: FieldKind::Vec2,
            rows: values.iter().map(|v| v.to_vec()).collect(),
        }
    }

    pub fn from_vec3(values: &[[f64; 3]]) -> Self {
        Field {
            kind: FieldKind::Vec3,
            rows: values.iter().map(|v| v.to_vec()).collect(),
        }
    }

    /// Complex values; vec2 rows are read as `re im` too.
    pub fn complex(&self) -> Result<Vec<Complex64>> {
        match self.kind {
            FieldKind::Complex | FieldKind::Vec2 => Ok(self
                .rows
                .iter()
                .map(|r| Complex64::new(r[0], r[1]))
                .collect()),
            k => Err(Error::Interface(format!(
                "expected a complex field, got {}",
                k.name()
            ))),
        }
    }

    pub fn vec2(&self) -> Result<Vec<[f64; 2]>> {
        match self.kind {
            FieldKind::Complex | FieldKind::Vec2 => {
                Ok(self.rows.iter().map(|r| [r[0], r[1]]).collect())
            }
            k => Err(Error::Interface(format!(
                "expected a vec2 field, got {}",
                k.name()
            ))),
        }
    }

    pub fn vec3(&self) -> Result<Vec<[f64; 3]>> {
        match self.kind {
            FieldKind::Vec3 => Ok(self.rows.iter().map(|r| [r[0], r[1], r[2]]).collect()),
            k => Err(Error::Interface(format!(
                "expected a vec3 field, got {}",
                k.name()
            ))),
        }
    }
}

pub fn write_field<W: Write>(mut out: W, field: &Field) -> Result<()> {
    writeln!(out, "FIELD {} {}", field.kind.name(), field.len())?;
    for r in &field.rows {
        let row: Vec<String> = r.iter().map(|&v| fmt(v)).collect();
        writeln!(out, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_field<R: BufRead>(reader: R) -> Result<Field> {
    let mut lines = Lines::new(reader);
    let (n0, header) = lines.expect("a `FIELD <kind> N` header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("FIELD") {
        return Err(format_err(n0, "expected a `FIELD <kind> N` header"));
    }
    let kind: FieldKind = parts
        .next()
        .ok_or_else(|| format_err(n0, "missing field kind"))?
        .parse()
        .map_err(|_| format_err(n0, "unknown field kind"))?;
    let count = parse_count(n0, parts.next())?;
    let mut rows = Vec::with_capacity(count);
    for _ in 0..count {
        let (n, text) = lines.expect("a field row")?;
        rows.push(parse_row(n, &text, kind.width())?);
    }
    lines.finish()?;
    Ok(Field { kind, rows })
}

/// Dirichlet data: point indices with prescribed planar values.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BoundaryData {
    pub indices: Vec<usize>,
    pub values: Vec<[f64; 2]>,
}

pub fn write_boundary<W: Write>(mut out: W, data: &BoundaryData) -> Result<()> {
    writeln!(out, "BOUNDARY {}", data.indices.len())?;
    for (i, v) in data.indices.iter().zip(&data.values) {
        writeln!(out, "{i} {} {}", fmt(v[0]), fmt(v[1]))?;
    }
    Ok(())
}

pub fn read_boundary<R: BufRead>(reader: R) -> Result<BoundaryData> {
    let mut lines = Lines::new(reader);
    let (n0, header) = lines.expect("a `BOUNDARY N` header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some("BOUNDARY") {
        return Err(format_err(n0, "expected a `BOUNDARY N` header"));
    }
    let count = parse_count(n0, parts.next())?;
    let mut data = BoundaryData::default();
    for _ in 0..count {
        let (n, text) = lines.expect("a boundary row")?;
        let mut it = text.split_whitespace();
        let idx = it
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| format_err(n, "boundary rows start with a point index"))?;
        let rest: Vec<&str> = it.collect();
        let vals = parse_row(n, &rest.join(" "), 2)?;
        data.indices.push(idx);
        data.values.push([vals[0], vals[1]]);
    }
    lines.finish()?;
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cloud_round_trip_is_bit_exact() {
        let pts = [
            [0.1, 1.0 / 3.0],
            [1e-300, -2.5e17],
            [std::f64::consts::PI, 0.0],
        ];
        let pc = PointCloud::from_points2(&pts).unwrap();
        let mut buf = Vec::new();
        write_cloud(&mut buf, &pc).unwrap();
        let back = read_cloud(&buf[..]).unwrap();
        assert_eq!(back.coords(), pc.coords());
    }

    #[test]
    fn field_and_boundary_round_trip() {
        let f = Field::from_complex(&[Complex64::new(0.25, -1e-9), Complex64::new(0.0, 7.0)]);
        let mut buf = Vec::new();
        write_field(&mut buf, &f).unwrap();
        assert_eq!(read_field(&buf[..]).unwrap(), f);
        let b = BoundaryData {
            indices: vec![3, 9],
            values: vec![[0.5, 1.0], [-0.1, 2.0]],
        };
        let mut buf = Vec::new();
        write_boundary(&mut buf, &b).unwrap();
        assert_eq!(read_boundary(&buf[..]).unwrap(), b);
    }

    #[test]
    fn format_errors_carry_line_numbers() {
        let err = read_cloud("PC2 2\n0 0\n1 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Format { line: 3, .. }), "{err}");
        assert!(matches!(
            read_cloud("PC4 1\n0\n".as_bytes()),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(matches!(
            read_field("FIELD vec2 1\n1 2\n3 4\n".as_bytes()),
            Err(Error::Format { line: 3, .. })
        ));
    }
}
