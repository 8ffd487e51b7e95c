//! Sidecar files accompanying a stored graph: a binary float-32 feature
//! matrix and line-oriented integer label / mask files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::TrainError;
use crate::tensor::DenseTensor;

/// Writes features as `rows: u32, cols: u32` followed by row-major
/// little-endian float-32 values.
pub fn write_features(path: &Path, t: &DenseTensor) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    let rows = t.rows() as u32;
    let cols = t.row_width() as u32;
    w.write_all(&rows.to_le_bytes())?;
    w.write_all(&cols.to_le_bytes())?;
    for &v in t.data() {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<DenseTensor, TrainError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut head = [0u8; 8];
    r.read_exact(&mut head)
        .map_err(|_| TrainError::Sidecar("feature file shorter than its 8-byte header".into()))?;
    let rows = u32::from_le_bytes(head[..4].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(head[4..].try_into().unwrap()) as usize;
    let mut body = vec![0u8; rows * cols * 4];
    r.read_exact(&mut body).map_err(|_| {
        TrainError::Sidecar(format!("feature file truncated: expected {rows}x{cols} float32"))
    })?;
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    DenseTensor::from_vec(&[rows, cols], data).map_err(TrainError::Kernel)
}

/// One class index per line.
pub fn write_labels(path: &Path, labels: &[usize]) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    for &l in labels {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path) -> Result<Vec<usize>, TrainError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        out.push(t.parse().map_err(|_| {
            TrainError::Sidecar(format!("label line {}: '{t}' is not an integer", i + 1))
        })?);
    }
    Ok(out)
}

/// One `0` or `1` per line.
pub fn write_mask(path: &Path, mask: &[bool]) -> Result<(), TrainError> {
    let mut w = BufWriter::new(File::create(path)?);
    for &m in mask {
        writeln!(w, "{}", u8::from(m))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_mask(path: &Path) -> Result<Vec<bool>, TrainError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        match line.trim() {
            "" => continue,
            "0" => out.push(false),
            "1" => out.push(true),
            other => {
                return Err(TrainError::Sidecar(format!(
                    "mask line {}: '{other}' is not 0 or 1",
                    i + 1
                )))
            }
        }
    }
    Ok(out)
}
