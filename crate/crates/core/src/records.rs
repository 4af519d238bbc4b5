//! Line-delimited evaluation records.
//!
//! Each scoring event is one JSON object per line with the keys
//! `method, seed, config_hash, filter_j, stage_i, candidate_id, theta,
//! p_i, cumulative_units, score, final_stage, wall_ms`, in that order.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub method: String,
    pub seed: u64,
    #[serde(default)]
    pub config_hash: String,
    pub filter_j: u32,
    pub stage_i: u32,
    pub candidate_id: u64,
    pub theta: Vec<f64>,
    pub p_i: u64,
    pub cumulative_units: u64,
    pub score: f64,
    /// Score comes from the last stage of its filter, so it competes in
    /// final selection.
    pub final_stage: bool,
    /// Wall-clock time of the scoring event; 0 unless timing is enabled.
    pub wall_ms: u64,
}

pub fn write_records<W: Write>(out: &mut W, records: &[EvaluationRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_records(path: &Path, records: &[EvaluationRecord]) -> Result<()> {
    let mut file = std::io::BufWriter::new(fs::File::create(path)?);
    write_records(&mut file, records)?;
    file.flush()?;
    Ok(())
}

pub fn read_records<R: std::io::Read>(input: R) -> Result<Vec<EvaluationRecord>> {
    let mut out = Vec::new();
    for (n, line) in BufReader::new(input).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Format(format!("record line {}: {e}", n + 1)))?,
        );
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<EvaluationRecord>> {
    read_records(fs::File::open(path)?)
}

/// Every `*.jsonl` file directly inside `dir`, sorted by name.
pub fn record_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    Ok(files)
}
