//! Point-cloud ingestion and artifact writers (CSV, JSON).
//!
//! Every CSV carries a header naming columns and units. Floats are written in
//! the shortest form that reads back to the same value.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::decomposition::{DeviationField, ModalSignature};
use crate::error::{Error, Result};
use crate::geometry::{distance, dot, sub, Geometry, Point3, SampleSet};
use crate::interpolation::SweepResult;
use crate::modal_basis::ModalBasis;

/// A deviation field read from disk and how many rows overwrote earlier ones.
#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub field: DeviationField,
    pub duplicates: usize,
}

pub fn ingest_point_cloud(path: impl AsRef<Path>, geometry: &Geometry) -> Result<Ingested> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_point_cloud(BufReader::new(file), geometry).map_err(|e| match e {
        Error::InvalidInput(msg) => Error::InvalidInput(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parses `node_index,deviation` or `x,y,z` rows; a non-numeric first row is a header.
pub fn read_point_cloud<R: Read>(reader: R, geometry: &Geometry) -> Result<Ingested> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut width = None;
    for (k, rec) in rdr.records().enumerate() {
        let line = k + 1;
        let rec = rec.map_err(|e| Error::Ingestion {
            rows: vec![line],
            reason: e.to_string(),
        })?;
        let parsed: std::result::Result<Vec<f64>, _> = rec.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(vals) => {
                let w = *width.get_or_insert(vals.len());
                if vals.len() != w {
                    return Err(Error::Ingestion {
                        rows: vec![line],
                        reason: format!("expected {w} columns, found {}", vals.len()),
                    });
                }
                rows.push((line, vals));
            }
            Err(_) if k == 0 => continue,
            Err(e) => {
                return Err(Error::Ingestion {
                    rows: vec![line],
                    reason: e.to_string(),
                })
            }
        }
    }
    if rows.is_empty() {
        return Err(Error::InvalidInput("point cloud has no data rows".into()));
    }
    let p = geometry.node_count();
    let mut values: Vec<Option<f64>> = vec![None; p];
    let mut duplicates = 0;
    let mut bad = Vec::new();
    let mut assign = |node: usize, value: f64, values: &mut Vec<Option<f64>>| {
        if values[node].replace(value).is_some() {
            duplicates += 1;
        }
    };
    match width {
        Some(2) => {
            for (line, r) in &rows {
                let idx = r[0];
                if !(idx >= 0.0 && idx.fract() == 0.0 && (idx as usize) < p) || !r[1].is_finite() {
                    bad.push(*line);
                    continue;
                }
                assign(idx as usize, r[1], &mut values);
            }
        }
        Some(3) => {
            let spacing = local_spacing(geometry.nodes());
            for (line, r) in &rows {
                let pt: Point3 = [r[0], r[1], r[2]];
                if !pt.iter().all(|v| v.is_finite()) {
                    bad.push(*line);
                    continue;
                }
                let (node, d) = nearest_node(geometry.nodes(), &pt);
                if d > 0.5 * spacing[node] {
                    bad.push(*line);
                    continue;
                }
                let dev = dot(&sub(&pt, &geometry.nodes()[node]), &geometry.normals()[node]);
                assign(node, dev, &mut values);
            }
        }
        Some(w) => {
            return Err(Error::InvalidInput(format!(
                "expected 2 (node_index, deviation) or 3 (x, y, z) columns, found {w}"
            )))
        }
        None => unreachable!(),
    }
    if !bad.is_empty() {
        return Err(Error::Ingestion {
            rows: bad,
            reason: "no geometry node within half the local node spacing, or invalid value".into(),
        });
    }
    if duplicates > 0 {
        log::warn!("{duplicates} rows repeated a node; the last occurrence was kept");
    }
    let (indices, vals): (Vec<usize>, Vec<f64>) = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|v| (i, v)))
        .unzip();
    let sample = SampleSet::new(geometry.id(), p, indices)?;
    Ok(Ingested {
        field: DeviationField::new(sample, vals)?,
        duplicates,
    })
}

fn nearest_node(nodes: &[Point3], pt: &Point3) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, n) in nodes.iter().enumerate() {
        let d = distance(n, pt);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Distance from each node to its nearest other node.
fn local_spacing(nodes: &[Point3]) -> Vec<f64> {
    nodes
        .iter()
        .enumerate()
        .map(|(i, a)| {
            nodes
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| distance(a, b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    let wrap = |e: csv::Error| match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::io(path, e),
        other => Error::InvalidInput(format!("{other:?}")),
    };
    w.write_record(header).map_err(wrap)?;
    for r in rows {
        w.write_record(&r).map_err(wrap)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// `node_index,deviation_mm`
pub fn write_field_csv(path: impl AsRef<Path>, field: &DeviationField) -> Result<()> {
    let rows = field
        .sample()
        .indices()
        .iter()
        .zip(field.values())
        .map(|(i, v)| vec![i.to_string(), num(*v)]);
    write_csv(path.as_ref(), &["node_index", "deviation_mm"], rows)
}

/// Dense reconstruction with a flag marking the measured nodes.
pub fn write_interpolation_csv(
    path: impl AsRef<Path>,
    field: &DeviationField,
    measured: &SampleSet,
) -> Result<()> {
    let rows = field
        .sample()
        .indices()
        .iter()
        .zip(field.values())
        .map(|(i, v)| {
            let flag = measured.indices().binary_search(i).is_ok() as u8;
            vec![i.to_string(), flag.to_string(), num(*v)]
        });
    write_csv(path.as_ref(), &["node_index", "measured", "deviation_mm"], rows)
}

/// One row per mode, 1-based: `mode_index,class,eigenvalue,lambda_mm`.
pub fn write_signature_csv(
    path: impl AsRef<Path>,
    sig: &ModalSignature,
    basis: &ModalBasis,
) -> Result<()> {
    if sig.len() != basis.mode_count() {
        return Err(Error::InvalidInput(format!(
            "signature has {} coefficients, basis has {} modes",
            sig.len(),
            basis.mode_count()
        )));
    }
    let rows = sig.coefficients.iter().enumerate().map(|(i, c)| {
        vec![
            (i + 1).to_string(),
            basis.mode_class()[i].as_str().to_string(),
            num(basis.eigenvalues()[i]),
            num(*c),
        ]
    });
    write_csv(
        path.as_ref(),
        &["mode_index", "class", "eigenvalue", "lambda_mm"],
        rows,
    )
}

/// Residual RMS after fitting the first `m` modes.
pub fn write_e_curve_csv(path: impl AsRef<Path>, e_curve: &[f64]) -> Result<()> {
    let rows = e_curve
        .iter()
        .enumerate()
        .map(|(m, e)| vec![(m + 1).to_string(), num(*e)]);
    write_csv(path.as_ref(), &["mode_count", "residual_rms_mm"], rows)
}

/// One row per cell, complexity-major. Failed cells have empty RMS fields.
pub fn write_sweep_csv(path: impl AsRef<Path>, sweep: &SweepResult) -> Result<()> {
    let mut rows = Vec::new();
    for (ci, c) in sweep.complexities.iter().enumerate() {
        for (qi, q) in sweep.sample_counts.iter().enumerate() {
            let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
            rows.push(vec![
                c.to_string(),
                q.to_string(),
                opt(sweep.rms_grid[ci][qi]),
                opt(sweep.stderr_grid[ci][qi]),
                sweep.trials_per_cell.to_string(),
            ]);
        }
    }
    write_csv(
        path.as_ref(),
        &["complexity", "sample_count", "rms_mm", "stderr_mm", "trials"],
        rows.into_iter(),
    )
}

pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<()> {
    let path = path.as_ref();
    let mut w = create(path)?;
    w.write_all(text.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::json(path, e))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn read_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::json(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{add, build_spherical_cap};
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn cap() -> Geometry {
        build_spherical_cap(1.0, FRAC_PI_2, 321).unwrap()
    }

    fn xyz_csv(points: &[Point3]) -> String {
        let mut s = String::from("x_mm,y_mm,z_mm\n");
        for p in points {
            s.push_str(&format!("{:?},{:?},{:?}\n", p[0], p[1], p[2]));
        }
        s
    }

    #[test]
    fn nominal_points_have_zero_deviation() {
        let g = cap();
        let got = read_point_cloud(xyz_csv(g.nodes()).as_bytes(), &g).unwrap();
        assert!(got.field.sample().is_full());
        assert!(got.field.values().iter().all(|v| v.abs() <= 1e-12));
    }

    #[test]
    fn radial_offset_is_positive_deviation() {
        let g = cap();
        let n = g.normals()[17];
        let pt = add(&g.nodes()[17], &n.map(|c| 0.005 * c));
        let got = read_point_cloud(xyz_csv(&[pt]).as_bytes(), &g).unwrap();
        assert_eq!(got.field.sample().indices(), &[17]);
        assert!((got.field.values()[0] - 0.005).abs() < 1e-12);
    }

    #[test]
    fn shuffled_displaced_cloud_round_trips() {
        let g = cap();
        let truth: Vec<f64> = g.nodes().iter().map(|p| 0.01 * (3.0 * p[0]).sin() * p[2]).collect();
        let mut pts: Vec<Point3> = g
            .nodes()
            .iter()
            .zip(g.normals())
            .zip(&truth)
            .map(|((p, n), t)| add(p, &n.map(|c| t * c)))
            .collect();
        pts.shuffle(&mut ChaCha8Rng::seed_from_u64(8));
        let got = read_point_cloud(xyz_csv(&pts).as_bytes(), &g).unwrap();
        assert_eq!(got.duplicates, 0);
        for (a, b) in got.field.values().iter().zip(&truth) {
            assert!((a - b).abs() <= 1e-10);
        }
    }

    #[test]
    fn far_points_are_reported_by_row() {
        let g = cap();
        let pts = [g.nodes()[0], [5.0, 5.0, 5.0], g.nodes()[3], [0.0, 0.0, -3.0]];
        match read_point_cloud(xyz_csv(&pts).as_bytes(), &g) {
            Err(Error::Ingestion { rows, .. }) => assert_eq!(rows, vec![3, 5]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn index_rows_with_duplicates() {
        let g = cap();
        let text = "node_index,deviation_mm\n4,0.1\n2,0.2\n4,0.3\n";
        let got = read_point_cloud(text.as_bytes(), &g).unwrap();
        assert_eq!(got.duplicates, 1);
        assert_eq!(got.field.sample().indices(), &[2, 4]);
        assert_eq!(got.field.values(), &[0.2, 0.3]);
        let headerless = read_point_cloud("0,1.5\n".as_bytes(), &g).unwrap();
        assert_eq!(headerless.field.values(), &[1.5]);
    }

    #[test]
    fn malformed_inputs() {
        let g = cap();
        assert!(matches!(
            read_point_cloud("node_index,deviation_mm\n".as_bytes(), &g),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(read_point_cloud("".as_bytes(), &g), Err(Error::InvalidInput(_))));
        assert!(matches!(
            read_point_cloud("1,2,3,4\n".as_bytes(), &g),
            Err(Error::InvalidInput(_))
        ));
        assert!(matches!(
            read_point_cloud("999,0.1\n".as_bytes(), &g),
            Err(Error::Ingestion { .. })
        ));
        assert!(matches!(
            read_point_cloud("1,0.1\n2,abc\n".as_bytes(), &g),
            Err(Error::Ingestion { .. })
        ));
    }

    #[test]
    fn field_csv_round_trip() {
        let g = cap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("sub/field.csv");
        let vals: Vec<f64> = (0..321).map(|i| (i as f64 * 0.37).cos() / 3.0).collect();
        let field = DeviationField::full(&g.id(), vals).unwrap();
        write_field_csv(&path, &field).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("node_index,deviation_mm\n"));
        let back = ingest_point_cloud(&path, &g).unwrap();
        assert_eq!(back.field, field);
    }

    #[test]
    fn missing_file_is_io_error() {
        let g = cap();
        let err = ingest_point_cloud("/nonexistent/cloud.csv", &g).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        let err = read_json::<Geometry>("/nonexistent/g.json").unwrap_err();
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn json_round_trip_and_malformed() {
        let g = cap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.json");
        write_json(&path, &g).unwrap();
        assert_eq!(read_json::<Geometry>(&path).unwrap(), g);
        std::fs::write(&path, "{").unwrap();
        assert_eq!(read_json::<Geometry>(&path).unwrap_err().exit_code(), 2);
    }
}
