//! Landmark CSV files, heatmap containers and atomic file output.
//!
//! Landmark files hold one row per landmark, `id,x,y` for 2D or `id,x,y,z`
//! for 3D. An optional header row and `#` comment lines are accepted.

use std::io::Write;
use std::path::Path;

use nalgebra::{Point2, Point3};

use crate::error::{Error, Result};
use crate::geometry::{LandmarkSet2D, LandmarkSet3D};
use crate::heatmap::{read_heatmaps, write_heatmaps, Heatmap};

fn parse_rows(text: &str, path: &Path, columns: usize) -> Result<Vec<(u64, Vec<f64>)>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    let mut ids = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let parse_err = |line: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if i == 0 && record.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if record.len() != columns {
            return Err(parse_err(
                line,
                format!("expected {columns} fields, found {}", record.len()),
            ));
        }
        let id: u64 = record[0]
            .parse()
            .map_err(|_| parse_err(line, format!("field `id`: invalid integer `{}`", &record[0])))?;
        if ids.contains(&id) {
            return Err(parse_err(line, format!("duplicate landmark id {id}")));
        }
        ids.push(id);
        let names = ["x", "y", "z"];
        let mut values = Vec::with_capacity(columns - 1);
        for (field, name) in record.iter().skip(1).zip(names) {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(line, format!("field `{name}`: invalid number `{field}`")))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("field `{name}`: not finite")));
            }
            values.push(v);
        }
        rows.push((id, values));
    }
    Ok(rows)
}

pub fn parse_landmarks_3d(text: &str, path: &Path) -> Result<LandmarkSet3D> {
    let rows = parse_rows(text, path, 4)?;
    LandmarkSet3D::new(
        rows.into_iter()
            .map(|(_, v)| Point3::new(v[0], v[1], v[2]))
            .collect(),
    )
}

pub fn parse_landmarks_2d(text: &str, path: &Path) -> Result<LandmarkSet2D> {
    let rows = parse_rows(text, path, 3)?;
    LandmarkSet2D::new(
        rows.into_iter()
            .map(|(_, v)| Point2::new(v[0], v[1]))
            .collect(),
    )
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn read_landmarks_3d(path: &Path) -> Result<LandmarkSet3D> {
    parse_landmarks_3d(&read_text(path)?, path)
}

pub fn read_landmarks_2d(path: &Path) -> Result<LandmarkSet2D> {
    parse_landmarks_2d(&read_text(path)?, path)
}

/// CSV text for a 2D set, ids starting at 1.
pub fn format_landmarks_2d(set: &LandmarkSet2D) -> String {
    let mut out = String::from("id,x,y\n");
    for (i, p) in set.points().iter().enumerate() {
        out.push_str(&format!("{},{},{}\n", i + 1, p.x, p.y));
    }
    out
}

/// CSV text for a 3D set, ids starting at 1.
pub fn format_landmarks_3d(set: &LandmarkSet3D) -> String {
    let mut out = String::from("id,x,y,z\n");
    for (i, p) in set.points().iter().enumerate() {
        out.push_str(&format!("{},{},{},{}\n", i + 1, p.x, p.y, p.z));
    }
    out
}

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_heatmap_file(path: &Path, maps: &[Heatmap]) -> Result<()> {
    let mut buf = Vec::new();
    write_heatmaps(&mut buf, maps).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &buf)
}

pub fn read_heatmap_file(path: &Path) -> Result<Vec<Heatmap>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_heatmaps(bytes.as_slice()).map_err(|message| Error::Format {
        path: path.to_path_buf(),
        message,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_with_header_and_comments() {
        let text = "# pelvis\nid,x,y,z\n1, 1.5,2,3\n2,-4,5e1,6\n\n3,0,0,1\n";
        let set = parse_landmarks_3d(text, Path::new("a.csv")).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.points()[1], Point3::new(-4.0, 50.0, 6.0));
    }

    #[test]
    fn reports_line_and_field() {
        let text = "id,x,y\n1,0,0\n2,abc,1\n";
        let err = parse_landmarks_2d(text, Path::new("b.csv")).unwrap_err();
        match err {
            Error::Parse { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("`x`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        let err = parse_landmarks_2d("1,0,0\n2,1\n", Path::new("c.csv")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
        let err = parse_landmarks_2d("1,0,0\n1,1,1\n", Path::new("d.csv")).unwrap_err();
        assert!(err.to_string().contains("duplicate"));
        assert!(parse_landmarks_3d("1,0,0\n", Path::new("e.csv")).is_err());
    }

    #[test]
    fn format_parse_round_trip() {
        let set = LandmarkSet2D::new(vec![Point2::new(0.1, -384.0), Point2::new(1e-17, 3.25)]).unwrap();
        let text = format_landmarks_2d(&set);
        assert_eq!(parse_landmarks_2d(&text, Path::new("x")).unwrap(), set);
        let set3 = LandmarkSet3D::new(vec![Point3::new(1.0 / 3.0, 2.0, -7.5)]).unwrap();
        let text = format_landmarks_3d(&set3);
        assert_eq!(parse_landmarks_3d(&text, Path::new("x")).unwrap(), set3);
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
