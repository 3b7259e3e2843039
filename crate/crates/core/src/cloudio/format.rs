//! CSV and ASCII PLY readers and writers.
//!
//! Coordinates are written with Rust's shortest round-trip float formatting,
//! so `load(save(c)) == c` bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::{Point3, PointCloud};
use crate::{AscnError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFormat {
    Csv,
    PlyAscii,
}

impl CloudFormat {
    /// Guesses the format from a file extension (`.ply` or anything else as CSV).
    pub fn from_path(path: &Path) -> CloudFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("ply") => CloudFormat::PlyAscii,
            _ => CloudFormat::Csv,
        }
    }
}

impl FromStr for CloudFormat {
    type Err = AscnError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(CloudFormat::Csv),
            "ply" | "ply-ascii" => Ok(CloudFormat::PlyAscii),
            other => Err(AscnError::InvalidParam(format!("unknown cloud format '{other}'"))),
        }
    }
}

pub fn load_cloud(path: &Path, format: CloudFormat) -> Result<PointCloud> {
    let text = fs::read_to_string(path).map_err(|e| AscnError::io(path, e))?;
    match format {
        CloudFormat::Csv => parse_csv(&text),
        CloudFormat::PlyAscii => parse_ply(&text),
    }
}

pub fn save_cloud(cloud: &PointCloud, path: &Path, format: CloudFormat) -> Result<()> {
    let text = match format {
        CloudFormat::Csv => write_csv(cloud),
        CloudFormat::PlyAscii => write_ply(cloud),
    };
    fs::write(path, text).map_err(|e| AscnError::io(path, e))
}

fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.split('\n')
        .enumerate()
        .map(|(i, l)| (i + 1, l.strip_suffix('\r').unwrap_or(l)))
}

fn parse_coord(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .trim()
        .parse()
        .map_err(|_| AscnError::parse(line, format!("'{}' is not a number", tok.trim())))?;
    if !v.is_finite() {
        return Err(AscnError::parse(line, format!("non-finite coordinate '{}'", tok.trim())));
    }
    Ok(v)
}

fn parse_ring(tok: &str, line: usize) -> Result<u32> {
    tok.trim()
        .parse()
        .map_err(|_| AscnError::parse(line, format!("'{}' is not a ring index", tok.trim())))
}

/// Parses `x,y,z` or `x,y,z,ring` rows. A first line whose first field is
/// not numeric is taken as a header.
pub fn parse_csv(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    let mut rings = Vec::new();
    let mut arity: Option<usize> = None;
    let mut seen_first = false;

    for (no, line) in lines(text) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if !seen_first {
            seen_first = true;
            if fields[0].trim().parse::<f64>().is_err() {
                if fields.len() != 3 && fields.len() != 4 {
                    return Err(AscnError::parse(no, "header must name 3 or 4 columns"));
                }
                arity = Some(fields.len());
                continue;
            }
        }
        let expected = *arity.get_or_insert(fields.len());
        if fields.len() != expected || !(expected == 3 || expected == 4) {
            return Err(AscnError::parse(
                no,
                format!("expected {expected} fields (x,y,z[,ring]), found {}", fields.len()),
            ));
        }
        points.push(Point3::new(
            parse_coord(fields[0], no)?,
            parse_coord(fields[1], no)?,
            parse_coord(fields[2], no)?,
        ));
        if expected == 4 {
            rings.push(parse_ring(fields[3], no)?);
        }
    }
    if points.is_empty() {
        return Err(AscnError::parse(0, "no points in input"));
    }
    if arity == Some(4) {
        PointCloud::with_rings(points, rings)
    } else {
        PointCloud::new(points)
    }
}

pub fn write_csv(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.rings() {
            Some(r) => writeln!(out, "{:?},{:?},{:?},{}", p.x, p.y, p.z, r[i]),
            None => writeln!(out, "{:?},{:?},{:?}", p.x, p.y, p.z),
        }
        .expect("writing to a String");
    }
    out
}

const FLOAT_TYPES: &[&str] = &["float", "double", "float32", "float64"];
const INT_TYPES: &[&str] = &[
    "char", "uchar", "short", "ushort", "int", "uint", "int8", "uint8", "int16", "uint16", "int32",
    "uint32",
];

/// Parses the ASCII PLY subset: one `vertex` element with `x y z` float
/// properties and an optional integer `ring`.
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let mut it = lines(text).peekable();
    match it.next() {
        Some((_, l)) if l.trim() == "ply" => {}
        _ => {
            if text.trim().is_empty() {
                return Err(AscnError::parse(0, "empty file"));
            }
            return Err(AscnError::parse(1, "missing 'ply' magic line"));
        }
    }

    let mut vertex_count: Option<usize> = None;
    let mut props: Vec<String> = Vec::new();
    let mut saw_format = false;
    let mut header_done = false;
    for (no, line) in it.by_ref() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            [] => continue,
            ["comment", ..] | ["obj_info", ..] => continue,
            ["format", "ascii", "1.0"] => saw_format = true,
            ["format", ..] => return Err(AscnError::parse(no, "only 'format ascii 1.0' is supported")),
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(AscnError::parse(no, "duplicate vertex element"));
                }
                vertex_count = Some(n.parse().map_err(|_| AscnError::parse(no, "bad vertex count"))?);
            }
            ["element", other, ..] => {
                return Err(AscnError::parse(no, format!("unsupported element '{other}'")))
            }
            ["property", ty, name] => {
                if vertex_count.is_none() {
                    return Err(AscnError::parse(no, "property before element"));
                }
                let want = ["x", "y", "z", "ring"];
                let slot = props.len();
                if slot >= want.len() || *name != want[slot] {
                    return Err(AscnError::parse(no, format!("unsupported property '{name}'")));
                }
                let ok = if slot < 3 { FLOAT_TYPES.contains(ty) } else { INT_TYPES.contains(ty) };
                if !ok {
                    return Err(AscnError::parse(no, format!("unsupported type '{ty}' for '{name}'")));
                }
                props.push(name.to_string());
            }
            ["property", ..] => return Err(AscnError::parse(no, "unsupported property declaration")),
            ["end_header"] => {
                header_done = true;
                break;
            }
            _ => return Err(AscnError::parse(no, format!("unexpected header line '{line}'"))),
        }
    }
    if !header_done {
        return Err(AscnError::parse(0, "header has no end_header"));
    }
    if !saw_format {
        return Err(AscnError::parse(0, "header has no format line"));
    }
    let count = vertex_count.ok_or_else(|| AscnError::parse(0, "header declares no vertices"))?;
    if props.len() < 3 {
        return Err(AscnError::parse(0, "vertex element must declare x, y and z"));
    }
    let has_ring = props.len() == 4;

    let mut points = Vec::with_capacity(count);
    let mut rings = Vec::new();
    let mut last_line = 0;
    for (no, line) in it {
        last_line = no;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if points.len() == count {
            return Err(AscnError::parse(no, "data after the declared vertex count"));
        }
        if toks.len() != props.len() {
            return Err(AscnError::parse(
                no,
                format!("expected {} values, found {}", props.len(), toks.len()),
            ));
        }
        points.push(Point3::new(
            parse_coord(toks[0], no)?,
            parse_coord(toks[1], no)?,
            parse_coord(toks[2], no)?,
        ));
        if has_ring {
            rings.push(parse_ring(toks[3], no)?);
        }
    }
    if points.len() != count {
        return Err(AscnError::parse(
            last_line,
            format!("expected {count} vertices, found {}", points.len()),
        ));
    }
    if count == 0 {
        return Err(AscnError::parse(0, "no points in input"));
    }
    if has_ring {
        PointCloud::with_rings(points, rings)
    } else {
        PointCloud::new(points)
    }
}

pub fn write_ply(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48 + 128);
    out.push_str("ply\nformat ascii 1.0\n");
    writeln!(out, "element vertex {}", cloud.len()).unwrap();
    out.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.rings().is_some() {
        out.push_str("property int ring\n");
    }
    out.push_str("end_header\n");
    for (i, p) in cloud.points().iter().enumerate() {
        match cloud.rings() {
            Some(r) => writeln!(out, "{:?} {:?} {:?} {}", p.x, p.y, p.z, r[i]),
            None => writeln!(out, "{:?} {:?} {:?}", p.x, p.y, p.z),
        }
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line_of(err: AscnError) -> usize {
        match err {
            AscnError::Parse { line, .. } => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn csv_basic_and_header() {
        let c = parse_csv("0,0,0\n1,0,0").unwrap();
        assert_eq!(c.points(), &[Point3::ZERO, Point3::new(1.0, 0.0, 0.0)]);
        assert!(c.rings().is_none());

        let c = parse_csv("x,y,z,ring\r\n1e-3,2.5,-3,7\r\n0,0,0,0\r\n").unwrap();
        assert_eq!(c.point(0), Point3::new(1e-3, 2.5, -3.0));
        assert_eq!(c.rings().unwrap(), &[7, 0]);
    }

    #[test]
    fn csv_errors_carry_line_numbers() {
        assert_eq!(line_of(parse_csv("").unwrap_err()), 0);
        assert_eq!(line_of(parse_csv("x,y,z\n").unwrap_err()), 0);
        assert_eq!(line_of(parse_csv("0,0,0\n1,0\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_csv("0,0,0\n1,a,0\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_csv("0,0,0,1\n1,0,0,-2\n").unwrap_err()), 2);
        assert_eq!(line_of(parse_csv("0,0,0\n0,0,inf\n").unwrap_err()), 2);
    }

    #[test]
    fn ply_with_ring() {
        let text = "ply\nformat ascii 1.0\ncomment made by hand\nelement vertex 3\n\
                    property float x\nproperty float y\nproperty float z\nproperty uchar ring\n\
                    end_header\n0 0 0 1\n1 0 0 2\n0 1 0 3\n";
        let c = parse_ply(text).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.rings().unwrap(), &[1, 2, 3]);
        assert_eq!(parse_ply(&write_ply(&c)).unwrap(), c);
    }

    #[test]
    fn ply_rejects_unsupported_content() {
        let base = "ply\nformat ascii 1.0\nelement vertex 1\nproperty float x\nproperty float y\nproperty float z\n";
        assert!(parse_ply(&format!("{base}property uchar red\nend_header\n0 0 0 1\n")).is_err());
        assert!(parse_ply(&format!("{base}element face 0\nend_header\n0 0 0\n")).is_err());
        assert!(parse_ply("ply\nformat binary_little_endian 1.0\nend_header\n").is_err());
        assert_eq!(line_of(parse_ply(&format!("{base}end_header\n0 0\n")).unwrap_err()), 8);
        assert!(parse_ply(&format!("{base}end_header\n")).is_err());
        assert!(parse_ply(&format!("{base}end_header\n0 0 0\n1 1 1\n")).is_err());
        assert_eq!(line_of(parse_ply("").unwrap_err()), 0);
    }

    #[test]
    fn save_and_load_files() {
        let dir = tempfile::tempdir().unwrap();
        let c = PointCloud::with_rings(vec![Point3::new(0.1, -2.0, 3.5e-12)], vec![4]).unwrap();
        for (name, fmt) in [("a.csv", CloudFormat::Csv), ("a.ply", CloudFormat::PlyAscii)] {
            let path = dir.path().join(name);
            save_cloud(&c, &path, fmt).unwrap();
            assert_eq!(CloudFormat::from_path(&path), fmt);
            assert_eq!(load_cloud(&path, fmt).unwrap(), c);
        }
        assert!(matches!(
            load_cloud(&dir.path().join("missing.csv"), CloudFormat::Csv),
            Err(AscnError::Io { .. })
        ));
    }

    fn arb_cloud() -> impl Strategy<Value = PointCloud> {
        let coord = prop_oneof![
            any::<f64>().prop_filter("finite", |v| v.is_finite()),
            -1e3f64..1e3,
        ];
        prop::collection::vec((prop::array::uniform3(coord), 0u32..128), 1..200).prop_flat_map(
            |rows| {
                any::<bool>().prop_map(move |with_ring| {
                    let pts = rows.iter().map(|(p, _)| Point3::from_array(*p)).collect();
                    if with_ring {
                        PointCloud::with_rings(pts, rows.iter().map(|r| r.1).collect()).unwrap()
                    } else {
                        PointCloud::new(pts).unwrap()
                    }
                })
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip_is_bitwise(c in arb_cloud()) {
            let csv = parse_csv(&write_csv(&c)).unwrap();
            let ply = parse_ply(&write_ply(&c)).unwrap();
            for other in [&csv, &ply] {
                prop_assert_eq!(other.rings(), c.rings());
                for (a, b) in other.points().iter().zip(c.points()) {
                    prop_assert_eq!(a.x.to_bits(), b.x.to_bits());
                    prop_assert_eq!(a.y.to_bits(), b.y.to_bits());
                    prop_assert_eq!(a.z.to_bits(), b.z.to_bits());
                }
            }
        }
    }
}
