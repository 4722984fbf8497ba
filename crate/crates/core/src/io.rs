//! CSV ingestion and emission.
//!
//! Input files have a header row, comma separators and float64 cells. A
//! time column is optional; without one the row index is used. Row and
//! column numbers in errors are 1-based file positions (the header is
//! row 1).

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::syslin::Trajectory;

/// Which CSV columns feed the outputs, the inputs and the time axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub outputs: Vec<String>,
    pub inputs: Vec<String>,
    #[serde(default)]
    pub time: Option<String>,
    /// Optional integer regime labels (as written by `gen`).
    #[serde(default)]
    pub labels: Option<String>,
}

impl ColumnMapping {
    /// `y*` columns are outputs, `u*` columns inputs, `t`/`time` the time
    /// axis and `regime` the labels.
    pub fn infer(headers: &[String]) -> Self {
        let pick = |prefix: char| -> Vec<String> {
            headers
                .iter()
                .filter(|h| h.starts_with(prefix) && h[1..].chars().all(|c| c.is_ascii_digit()) && h.len() > 1)
                .cloned()
                .collect()
        };
        Self {
            outputs: pick('y'),
            inputs: pick('u'),
            time: headers.iter().find(|h| *h == "t" || *h == "time").cloned(),
            labels: headers.iter().find(|h| *h == "regime").cloned(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.outputs.is_empty() {
            return Err(Error::Mapping("no output columns".into()));
        }
        if self.inputs.is_empty() {
            return Err(Error::Mapping("no input columns".into()));
        }
        if let Some(shared) = self.outputs.iter().find(|c| self.inputs.contains(c)) {
            return Err(Error::Mapping(format!(
                "column {shared:?} is both an output and an input"
            )));
        }
        Ok(())
    }
}

/// A trajectory plus its time stamps.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub trajectory: Trajectory,
    pub times: Vec<f64>,
}

impl Dataset {
    pub fn from_trajectory(trajectory: Trajectory) -> Self {
        let times = (0..trajectory.len()).map(|i| i as f64).collect();
        Self { trajectory, times }
    }

    pub fn len(&self) -> usize {
        self.trajectory.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectory.is_empty()
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self {
            trajectory: self.trajectory.slice(0, len),
            times: self.times[..len].to_vec(),
        }
    }
}

fn column_index(headers: &[String], name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Mapping(format!("column {name:?} not found in header {headers:?}")))
}

fn parse_cell(text: &str, row: usize, column: usize) -> Result<f64> {
    let v: f64 = text.trim().parse().map_err(|_| Error::Parse {
        row,
        column,
        message: format!("not a number: {text:?}"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Parse {
            row,
            column,
            message: format!("non-finite value {text:?}"),
        })
    }
}

/// Reads a dataset; `mapping = None` infers it from the header.
pub fn read_csv<R: Read>(reader: R, mapping: Option<&ColumnMapping>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(e) => {
            return Err(Error::Parse {
                row: 1,
                column: 1,
                message: e.to_string(),
            })
        }
    };
    if headers.iter().all(|h| h.is_empty()) {
        return Err(Error::Parse {
            row: 1,
            column: 1,
            message: "empty file: missing header row".into(),
        });
    }
    let mapping = match mapping {
        Some(m) => m.clone(),
        None => ColumnMapping::infer(&headers),
    };
    mapping.validate()?;
    let out_idx: Vec<usize> = mapping
        .outputs
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let in_idx: Vec<usize> = mapping
        .inputs
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<_>>()?;
    let time_idx = mapping.time.as_deref().map(|c| column_index(&headers, c)).transpose()?;
    let label_idx = mapping
        .labels
        .as_deref()
        .map(|c| column_index(&headers, c))
        .transpose()?;

    let mut outputs = Vec::new();
    let mut inputs = Vec::new();
    let mut times = Vec::new();
    let mut labels = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 2;
        let record = record.map_err(|e| Error::Parse {
            row,
            column: 1,
            message: e.to_string(),
        })?;
        let cell = |idx: usize| -> Result<f64> {
            let text = record.get(idx).ok_or_else(|| Error::Parse {
                row,
                column: idx + 1,
                message: "missing cell".into(),
            })?;
            parse_cell(text, row, idx + 1)
        };
        let y: Vec<f64> = out_idx.iter().map(|&j| cell(j)).collect::<Result<_>>()?;
        let u: Vec<f64> = in_idx.iter().map(|&j| cell(j)).collect::<Result<_>>()?;
        outputs.push(DVector::from_vec(y));
        inputs.push(DVector::from_vec(u));
        times.push(match time_idx {
            Some(j) => cell(j)?,
            None => i as f64,
        });
        if let Some(j) = label_idx {
            let v = cell(j)?;
            if v < 0.0 || v.fract() != 0.0 {
                return Err(Error::Parse {
                    row,
                    column: j + 1,
                    message: format!("regime label must be a non-negative integer, got {v}"),
                });
            }
            labels.push(v as usize);
        }
    }
    if outputs.is_empty() {
        return Err(Error::Parse {
            row: 2,
            column: 1,
            message: "no data rows".into(),
        });
    }
    let mut trajectory = Trajectory::new(outputs, inputs)?;
    if label_idx.is_some() {
        trajectory = trajectory.with_labels(labels)?;
    }
    Ok(Dataset { trajectory, times })
}

pub fn read_csv_file(path: &Path, mapping: Option<&ColumnMapping>) -> Result<Dataset> {
    read_csv(File::open(path).map_err(Error::at_path(path))?, mapping)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Writes `t, y0.., u0.., [regime]`. Values use the shortest round-trip
/// decimal form.
pub fn write_csv<W: Write>(writer: W, data: &Dataset) -> Result<()> {
    let traj = &data.trajectory;
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["t".to_string()];
    header.extend((0..traj.output_dim()).map(|i| format!("y{i}")));
    header.extend((0..traj.input_dim()).map(|i| format!("u{i}")));
    if traj.regime_labels.is_some() {
        header.push("regime".into());
    }
    w.write_record(&header).map_err(csv_error)?;
    for t in 0..traj.len() {
        let mut row = vec![data.times[t].to_string()];
        row.extend(traj.outputs[t].iter().map(|v| v.to_string()));
        row.extend(traj.inputs[t].iter().map(|v| v.to_string()));
        if let Some(labels) = &traj.regime_labels {
            row.push(labels[t].to_string());
        }
        w.write_record(&row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_csv_file(path: &Path, data: &Dataset) -> Result<()> {
    write_csv(File::create(path).map_err(Error::at_path(path))?, data)
}

/// Writes a header and rows of already formatted cells.
pub fn write_table<W: Write>(writer: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(header).map_err(csv_error)?;
    for row in rows {
        w.write_record(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = "t,y0,u0,u1\n0,1.5,0.1,-1\n1,2.5,0.2,1\n";

    #[test]
    fn infers_mapping_and_reads_values() {
        let data = read_csv(SAMPLE.as_bytes(), None).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.trajectory.output_dim(), 1);
        assert_eq!(data.trajectory.input_dim(), 2);
        assert_eq!(data.trajectory.outputs[1][0], 2.5);
        assert_eq!(data.trajectory.inputs[0][1], -1.0);
        assert_eq!(data.times, vec![0.0, 1.0]);
    }

    #[test]
    fn explicit_mapping_and_row_index_time() {
        let mapping = ColumnMapping {
            outputs: vec!["u0".into()],
            inputs: vec!["y0".into()],
            time: None,
            labels: None,
        };
        let data = read_csv(SAMPLE.as_bytes(), Some(&mapping)).unwrap();
        assert_eq!(data.trajectory.outputs[0][0], 0.1);
        assert_eq!(data.times, vec![0.0, 1.0]);
    }

    #[test]
    fn empty_input_is_a_parse_error() {
        assert!(matches!(read_csv("".as_bytes(), None), Err(Error::Parse { .. })));
        assert!(matches!(
            read_csv("y0,u0\n".as_bytes(), None),
            Err(Error::Parse { row: 2, .. })
        ));
    }

    #[test]
    fn bad_cell_reports_position() {
        let text = "y0,u0\n1,2\n3,abc\n";
        match read_csv(text.as_bytes(), None) {
            Err(Error::Parse { row, column, .. }) => assert_eq!((row, column), (3, 2)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mapping_errors() {
        let missing = ColumnMapping {
            outputs: vec!["y9".into()],
            inputs: vec!["u0".into()],
            ..Default::default()
        };
        assert!(matches!(
            read_csv(SAMPLE.as_bytes(), Some(&missing)),
            Err(Error::Mapping(_))
        ));
        let overlap = ColumnMapping {
            outputs: vec!["u0".into()],
            inputs: vec!["u0".into()],
            ..Default::default()
        };
        assert!(matches!(overlap.validate(), Err(Error::Mapping(_))));
        assert!(matches!(
            read_csv("a,b\n1,2\n".as_bytes(), None),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn round_trip_is_exact() {
        let outputs = vec![
            DVector::from_vec(vec![0.1 + 0.2, -1e-300]),
            DVector::from_vec(vec![1.0 / 3.0, 7.0]),
        ];
        let inputs = vec![
            DVector::from_vec(vec![std::f64::consts::PI]),
            DVector::from_vec(vec![-2.5]),
        ];
        let traj = Trajectory::new(outputs, inputs)
            .unwrap()
            .with_labels(vec![0, 1])
            .unwrap();
        let data = Dataset::from_trajectory(traj);
        let mut buf = Vec::new();
        write_csv(&mut buf, &data).unwrap();
        let back = read_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, data);
    }
}
