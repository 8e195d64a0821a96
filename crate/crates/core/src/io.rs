//! Plain-file persistence: CSV datasets with JSON manifests and write-once outputs.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phase_space::StateModel;
use crate::sampler::{CutSamples, QuadratureDataset};

/// Version string recorded in manifests.
pub const GENERATOR_VERSION: &str = concat!("quadwit-core ", env!("CARGO_PKG_VERSION"));

/// Sidecar manifest of a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub model: StateModel,
    pub cuts: Vec<f64>,
    pub counts: Vec<usize>,
    pub seed: u64,
    pub generator_version: String,
}

impl DatasetManifest {
    pub fn for_dataset(dataset: &QuadratureDataset) -> Self {
        Self {
            model: dataset.model,
            cuts: dataset.cuts(),
            counts: dataset.counts(),
            seed: dataset.seed,
            generator_version: GENERATOR_VERSION.to_string(),
        }
    }
}

/// Formats a number with 17 significant digits.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Creates a file that must not exist yet.
pub fn create_new(path: &Path) -> Result<File> {
    OpenOptions::new()
        .write(true)
        .create_new(true)
        .open(path)
        .map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::invalid(format!("refusing to overwrite existing file {}", path.display()))
            } else {
                Error::Io(e)
            }
        })
}

/// Formats a table cell: integral values without exponent, others as [`format_f64`].
pub fn format_cell(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 9.0e15 {
        format!("{}", x as i64)
    } else {
        format_f64(x)
    }
}

/// Writes a CSV table with the given header, refusing to overwrite.
pub fn write_csv_table(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(create_new(path)?));
    writer.write_record(header)?;
    for row in rows {
        writer.write_record(row.iter().map(|v| format_cell(*v)))?;
    }
    writer.flush()?;
    Ok(())
}

/// Writes a pretty-printed JSON document, refusing to overwrite.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut writer = BufWriter::new(create_new(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

/// Writes the dataset as `theta,s` rows.
pub fn write_dataset_csv(path: &Path, dataset: &QuadratureDataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(BufWriter::new(create_new(path)?));
    writer.write_record(["theta", "s"])?;
    for entry in &dataset.entries {
        let theta = format_f64(entry.theta);
        for &s in &entry.samples {
            writer.write_record([theta.as_str(), format_f64(s).as_str()])?;
        }
    }
    writer.flush()?;
    Ok(())
}

/// Writes the dataset CSV and its manifest.
pub fn write_dataset(csv_path: &Path, manifest_path: &Path, dataset: &QuadratureDataset) -> Result<()> {
    write_dataset_csv(csv_path, dataset)?;
    write_json(manifest_path, &DatasetManifest::for_dataset(dataset))
}

/// Reads `theta,s` rows, grouping samples by angle in order of first appearance.
pub fn read_dataset_csv(path: &Path) -> Result<Vec<CutSamples>> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.len() != 2 || &headers[0] != "theta" || &headers[1] != "s" {
        return Err(Error::invalid(format!(
            "{}: expected header `theta,s`",
            path.display()
        )));
    }
    let mut entries: Vec<CutSamples> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let parse = |field: &str| {
            field.trim().parse::<f64>().map_err(|_| {
                Error::invalid(format!("{}: row {}: `{field}` is not a number", path.display(), line + 2))
            })
        };
        let theta = parse(&record[0])?;
        let s = parse(&record[1])?;
        match entries.iter_mut().find(|e| e.theta == theta) {
            Some(entry) => entry.samples.push(s),
            None => entries.push(CutSamples {
                theta,
                samples: vec![s],
            }),
        }
    }
    Ok(entries)
}

/// Reads a manifest.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
}

/// Reads a dataset and checks it against its manifest.
pub fn read_dataset(csv_path: &Path, manifest_path: &Path) -> Result<QuadratureDataset> {
    let manifest = read_manifest(manifest_path)?;
    let entries = read_dataset_csv(csv_path)?;
    let cuts: Vec<f64> = entries.iter().map(|e| e.theta).collect();
    let counts: Vec<usize> = entries.iter().map(|e| e.samples.len()).collect();
    if cuts != manifest.cuts || counts != manifest.counts {
        return Err(Error::invalid(format!(
            "{} does not match its manifest {}: cuts {:?} with counts {:?}, expected cuts {:?} with counts {:?}",
            csv_path.display(),
            manifest_path.display(),
            cuts,
            counts,
            manifest.cuts,
            manifest.counts
        )));
    }
    Ok(QuadratureDataset {
        entries,
        seed: manifest.seed,
        model: manifest.model,
    })
}
