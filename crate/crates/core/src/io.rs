//! CSV import/export for coefficients, data sets, fields, traces and ensembles.
//!
//! Files open with `# key=value` comment lines (provenance and metadata) followed by a
//! header row. Floats are written in shortest round-trip form, so reading a file back
//! reproduces the values bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::field::CoefficientVector;
use crate::model::Dataset;
use crate::smc::{Ensemble, RunTrace};

/// Ordered `key=value` pairs written as leading comment lines.
pub type Metadata = Vec<(String, String)>;

pub fn meta(pairs: &[(&str, String)]) -> Metadata {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
}

pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        ryu::Buffer::new().format_finite(x).to_string()
    } else if x.is_nan() {
        "NaN".into()
    } else if x > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// A parsed numeric CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Metadata,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some(self.rows.iter().map(|r| r[j]).collect())
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.display().to_string(),
        source,
    }
}

fn csv_err(path: &Path, message: impl std::fmt::Display) -> Error {
    Error::Csv {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

/// Writes metadata comments, a header and string rows.
pub fn write_rows<I, R>(
    path: &Path,
    meta: &[(String, String)],
    header: &[String],
    rows: I,
) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for (k, v) in meta {
        if k.contains(['=', '\n']) || v.contains('\n') {
            return Err(csv_err(
                path,
                format!("metadata entry {k:?} cannot be written"),
            ));
        }
        writeln!(out, "# {k}={v}").map_err(io_err(path))?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(header).map_err(|e| csv_err(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        if row.len() != header.len() {
            return Err(csv_err(
                path,
                format!("row of {} fields under {} columns", row.len(), header.len()),
            ));
        }
        w.write_record(&row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn write_table(
    path: &Path,
    meta: &[(String, String)],
    header: &[String],
    rows: &[Vec<f64>],
) -> Result<()> {
    write_rows(
        path,
        meta,
        header,
        rows.iter().map(|r| r.iter().map(|v| fmt_f64(*v))),
    )
}

pub fn read_table(path: &Path) -> Result<Table> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut meta = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim_start().split_once('=') {
                meta.push((k.to_string(), v.to_string()));
            }
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut reader = csv::Reader::from_reader(body.as_bytes());
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_err(path, e))?;
        let row = record
            .iter()
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| csv_err(path, format!("row {}: {s:?} is not a number", i + 1)))
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    Ok(Table { meta, header, rows })
}

fn coefficient_header(len: usize) -> Vec<String> {
    (0..len).map(|j| format!("c{j}")).collect()
}

/// One row holding the coefficients in layout order.
pub fn write_coefficients(
    path: &Path,
    meta: &[(String, String)],
    coeffs: &CoefficientVector,
) -> Result<()> {
    write_table(
        path,
        meta,
        &coefficient_header(coeffs.len()),
        &[coeffs.as_slice().to_vec()],
    )
}

pub fn read_coefficients(path: &Path) -> Result<CoefficientVector> {
    let table = read_table(path)?;
    match table.rows.as_slice() {
        [row] => CoefficientVector::new(row.clone()),
        rows => Err(csv_err(
            path,
            format!("expected one coefficient row, found {}", rows.len()),
        )),
    }
}

fn coordinate_header(dim: usize) -> Vec<String> {
    (1..=dim).map(|i| format!("x{i}")).collect()
}

/// One row per observation, `x1, x2[, x3], y`; `σ²` and the layout travel as metadata.
pub fn write_dataset(path: &Path, meta: &[(String, String)], data: &Dataset) -> Result<()> {
    let dim = data.dim().unwrap_or(0);
    let mut all = meta.to_vec();
    all.push(("sigma2".into(), fmt_f64(data.sigma2)));
    all.push(("dim".into(), dim.to_string()));
    if let Some(s) = data.layout {
        all.push(("layout".into(), s.to_string()));
    }
    let mut header = coordinate_header(dim);
    header.push("y".into());
    let rows: Vec<Vec<f64>> = data
        .obs_points
        .iter()
        .zip(&data.y)
        .map(|(p, y)| p.iter().copied().chain([*y]).collect())
        .collect();
    write_table(path, &all, &header, &rows)
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let table = read_table(path)?;
    let sigma2 = table
        .meta_value("sigma2")
        .and_then(|v| v.parse::<f64>().ok())
        .ok_or_else(|| csv_err(path, "missing sigma2 metadata"))?;
    let y_col = table
        .column_index("y")
        .ok_or_else(|| csv_err(path, "missing y column"))?;
    let coords: Vec<usize> = (1..)
        .map_while(|i| table.column_index(&format!("x{i}")))
        .collect();
    let obs_points = table
        .rows
        .iter()
        .map(|r| coords.iter().map(|&j| r[j]).collect())
        .collect();
    let y = table.rows.iter().map(|r| r[y_col]).collect();
    let mut data = Dataset::new(obs_points, y, sigma2)?;
    data.layout = table.meta_value("layout").and_then(|v| v.parse().ok());
    Ok(data)
}

/// Field values on the tensor grid spanned by `axes` (row-major, axis 0 slowest), one row
/// per point: `x1, x2[, x3], value`.
pub fn write_grid_field(
    path: &Path,
    meta: &[(String, String)],
    axes: &[Vec<f64>],
    values: &[f64],
) -> Result<()> {
    let total: usize = axes.iter().map(Vec::len).product();
    if values.len() != total {
        return Err(Error::arg(format!(
            "{} values for a grid of {total} points",
            values.len()
        )));
    }
    let mut header = coordinate_header(axes.len());
    header.push("value".into());
    let rows = values.iter().enumerate().map(|(mut flat, v)| {
        let mut row = vec![String::new(); axes.len() + 1];
        for (a, axis) in axes.iter().enumerate().rev() {
            row[a] = fmt_f64(axis[flat % axis.len()]);
            flat /= axis.len();
        }
        row[axes.len()] = fmt_f64(*v);
        row
    });
    write_rows(path, meta, &header, rows)
}

/// Per-round diagnostics. Wall time is left out so that equal seeds give equal bytes;
/// see [`write_timing`].
pub fn write_trace(path: &Path, meta: &[(String, String)], trace: &RunTrace) -> Result<()> {
    let header: Vec<String> = [
        "n",
        "phi",
        "delta_phi",
        "ess",
        "resampled",
        "acc",
        "rho",
        "M_n",
        "max_misfit",
    ]
    .map(String::from)
    .to_vec();
    let rows = trace.rounds.iter().map(|r| {
        vec![
            r.round.to_string(),
            fmt_f64(r.phi),
            fmt_f64(r.delta_phi),
            fmt_f64(r.ess),
            u8::from(r.resampled).to_string(),
            fmt_f64(r.acc_rate),
            fmt_f64(r.rho),
            r.steps.to_string(),
            fmt_f64(r.max_misfit),
        ]
    });
    write_rows(path, meta, &header, rows)
}

pub fn write_timing(path: &Path, meta: &[(String, String)], trace: &RunTrace) -> Result<()> {
    let header = vec!["n".to_string(), "seconds".to_string()];
    let rows = trace
        .rounds
        .iter()
        .map(|r| vec![r.round.to_string(), fmt_f64(r.seconds)]);
    write_rows(path, meta, &header, rows)
}

/// One row per particle: normalized weight, then coefficients.
pub fn write_ensemble(path: &Path, meta: &[(String, String)], ensemble: &Ensemble) -> Result<()> {
    let w = ensemble.normalized_weights()?;
    let mut header = vec!["weight".to_string()];
    header.extend(coefficient_header(ensemble.dim()));
    let rows = ensemble.particles().zip(&w).map(|(p, w)| {
        std::iter::once(fmt_f64(*w))
            .chain(p.iter().map(|v| fmt_f64(*v)))
            .collect::<Vec<_>>()
    });
    write_rows(path, meta, &header, rows)
}

pub fn read_ensemble(path: &Path) -> Result<Ensemble> {
    let table = read_table(path)?;
    if table.header.first().map(String::as_str) != Some("weight") {
        return Err(csv_err(path, "first column must be the weight"));
    }
    let dim = table.header.len() - 1;
    let weights: Vec<f64> = table.rows.iter().map(|r| r[0]).collect();
    let particles = table
        .rows
        .iter()
        .flat_map(|r| r[1..].iter().copied())
        .collect();
    Ensemble::with_weights(dim, particles, &weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{sample_prior, FieldConfig};
    use crate::rng::{stream, Purpose};

    fn dir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn floats_round_trip_exactly() {
        for x in [0.1, -1.0 / 3.0, 5e-7, 1e-300, 123456.789, 0.0, -0.0] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap().to_bits(), x.to_bits());
        }
        assert_eq!(fmt_f64(0.25), "0.25");
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn table_keeps_metadata_and_rows() {
        let d = dir();
        let path = d.path().join("t.csv");
        let m = meta(&[("config_hash", "abc".into()), ("seed", "7".into())]);
        let header = vec!["a".to_string(), "b".to_string()];
        write_table(&path, &m, &header, &[vec![1.5, -2.0], vec![3.0, 1e-9]]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("# config_hash=abc\n# seed=7\na,b\n"));
        let t = read_table(&path).unwrap();
        assert_eq!(t.meta_value("seed"), Some("7"));
        assert_eq!(t.rows, vec![vec![1.5, -2.0], vec![3.0, 1e-9]]);
        assert_eq!(t.column("b").unwrap(), vec![-2.0, 1e-9]);
        assert!(write_table(&path, &m, &header, &[vec![1.0]]).is_err());
    }

    #[test]
    fn coefficients_and_dataset_round_trip() {
        let d = dir();
        let config = FieldConfig {
            cutoff: 3,
            ..FieldConfig::planar_default()
        };
        let c = sample_prior(&config, &mut stream(1, Purpose::Truth, 0, 0));
        let path = d.path().join("truth.csv");
        write_coefficients(&path, &[], &c).unwrap();
        assert_eq!(read_coefficients(&path).unwrap(), c);

        let mut data = Dataset::new(
            vec![vec![0.1, -0.2], vec![0.3, 0.4]],
            vec![1e-3, -2e-4],
            5e-7,
        )
        .unwrap();
        data.layout = Some(2);
        let path = d.path().join("data.csv");
        write_dataset(&path, &meta(&[("seed", "3".into())]), &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn ensemble_round_trip_preserves_normalized_weights() {
        let d = dir();
        let ens = Ensemble::with_weights(2, vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6], &[1.0, 3.0, 0.0])
            .unwrap();
        let path = d.path().join("ens.csv");
        write_ensemble(&path, &[], &ens).unwrap();
        let back = read_ensemble(&path).unwrap();
        assert_eq!(back.flat_particles(), ens.flat_particles());
        for (a, b) in back
            .normalized_weights()
            .unwrap()
            .iter()
            .zip(ens.normalized_weights().unwrap())
        {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_field_rows_follow_axis_order() {
        let d = dir();
        let path = d.path().join("f.csv");
        let axes = vec![vec![0.0, 1.0], vec![10.0, 20.0, 30.0]];
        write_grid_field(&path, &[], &axes, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let t = read_table(&path).unwrap();
        assert_eq!(t.header, ["x1", "x2", "value"]);
        assert_eq!(t.rows[4], vec![1.0, 20.0, 5.0]);
    }
}
