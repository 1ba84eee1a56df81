//! Dataset CSV and noise JSON sidecar.
//!
//! CSV layout: header `feat_0,..,feat_{S-1},clean_label,noisy_label`, one row
//! per sample. Floats are written in shortest round-trip form, so a written
//! file reloads bit-identically.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LabeledDataset, NoiseSpec};
use crate::{Error, Result};

pub fn write_dataset_csv<W: Write>(data: &LabeledDataset, writer: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = (0..data.dim()).map(|d| format!("feat_{d}")).collect();
    header.push("clean_label".into());
    header.push("noisy_label".into());
    out.write_record(&header)?;
    for n in 0..data.len() {
        let mut record: Vec<String> = data.row(n).iter().map(|v| v.to_string()).collect();
        record.push(data.clean_labels()[n].to_string());
        record.push(data.noisy_labels()[n].to_string());
        out.write_record(&record)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset CSV. When `num_classes` is `None` it is inferred as one
/// more than the largest label (at least 2).
pub fn read_dataset_csv<R: Read>(reader: R, num_classes: Option<usize>, seed: u64) -> Result<LabeledDataset> {
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = header.len();
    if cols < 3 || &header[cols - 2] != "clean_label" || &header[cols - 1] != "noisy_label" {
        return Err(Error::Parse("header must end with clean_label,noisy_label after at least one feature".into()));
    }
    for (d, name) in header.iter().take(cols - 2).enumerate() {
        if name != format!("feat_{d}") {
            return Err(Error::Parse(format!("column {d} should be feat_{d}, found `{name}`")));
        }
    }
    let dim = cols - 2;
    let mut features = Vec::new();
    let mut clean = Vec::new();
    let mut noisy = Vec::new();
    for (line, record) in rdr.records().enumerate() {
        let record = record?;
        let row = line + 2;
        for field in record.iter().take(dim) {
            let v: f64 = field.parse().map_err(|_| Error::Parse(format!("row {row}: bad feature `{field}`")))?;
            features.push(v);
        }
        let label = |field: &str| -> Result<usize> {
            field.parse().map_err(|_| Error::Parse(format!("row {row}: bad label `{field}`")))
        };
        clean.push(label(&record[dim])?);
        noisy.push(label(&record[dim + 1])?);
    }
    let k = num_classes.unwrap_or_else(|| clean.iter().chain(&noisy).max().map_or(2, |m| (m + 1).max(2)));
    LabeledDataset::from_flat(features, dim, clean, noisy, k, seed)
}

/// JSON sidecar stored next to a generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSidecar {
    pub num_samples: usize,
    pub num_classes: usize,
    pub dim: usize,
    pub data_seed: u64,
    pub noise_seed: u64,
    pub noise: NoiseSpec,
    /// How features were preprocessed before the instance projection.
    pub feature_standardization: String,
}

pub fn write_noise_json<W: Write>(sidecar: &NoiseSidecar, writer: W) -> Result<()> {
    let mut w = BufWriter::new(writer);
    serde_json::to_writer_pretty(&mut w, sidecar)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_noise_json<R: Read>(reader: R) -> Result<NoiseSidecar> {
    let sidecar: NoiseSidecar = serde_json::from_reader(BufReader::new(reader))?;
    sidecar.noise.validate()?;
    Ok(sidecar)
}

impl LabeledDataset {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_dataset_csv(self, BufWriter::new(File::create(path)?))
    }

    pub fn load_csv(path: impl AsRef<Path>, num_classes: Option<usize>) -> Result<Self> {
        read_dataset_csv(BufReader::new(File::open(path)?), num_classes, 0)
    }
}
