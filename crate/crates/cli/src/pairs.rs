//! Augmented training pairs on disk: one JSON header line, then one JSON
//! object per supervised pair. Floats round-trip bit for bit.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use permlabel::permnet::{Dataset, TrainItem};
use permlabel::{Error, MarkerFrame, Permutation, Result};
use serde::{Deserialize, Serialize};

#[derive(Serialize, Deserialize)]
struct PairsHeader {
    n_markers: usize,
    pairs: usize,
    subjects: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PairRow {
    frame_index: usize,
    positions: Vec<[f64; 3]>,
    occluded: Vec<bool>,
    target: Vec<usize>,
}

pub fn write(path: &Path, data: &Dataset) -> Result<()> {
    let n_markers = data.items().first().map_or(0, |i| i.frame.n_markers());
    let header = PairsHeader {
        n_markers,
        pairs: data.len(),
        subjects: data.subjects().iter().cloned().collect(),
    };
    let mut out = BufWriter::new(fs::File::create(path)?);
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for item in data.items() {
        let row = PairRow {
            frame_index: item.frame.frame_index,
            positions: item.frame.positions.clone(),
            occluded: item.frame.occluded.clone(),
            target: item.target.mapping().to_vec(),
        };
        serde_json::to_writer(&mut out, &row)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header: PairsHeader = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty pairs file", path.display())))
        .and_then(|l| {
            serde_json::from_str(l)
                .map_err(|e| Error::Format(format!("{}: header: {e}", path.display())))
        })?;
    let mut items = Vec::with_capacity(header.pairs);
    for (k, line) in lines.enumerate() {
        let row: PairRow = serde_json::from_str(line)
            .map_err(|e| Error::Format(format!("{}: pair {}: {e}", path.display(), k + 1)))?;
        if row.positions.len() != header.n_markers || row.target.len() != header.n_markers {
            return Err(Error::Format(format!(
                "{}: pair {}: {} positions and {} targets, header says {}",
                path.display(),
                k + 1,
                row.positions.len(),
                row.target.len(),
                header.n_markers
            )));
        }
        items.push(TrainItem {
            frame: MarkerFrame::new(row.positions, row.occluded, row.frame_index)?,
            target: Permutation::from_mapping(row.target)?,
        });
    }
    if items.len() != header.pairs {
        return Err(Error::Format(format!(
            "{}: header promises {} pairs, file holds {}",
            path.display(),
            header.pairs,
            items.len()
        )));
    }
    Ok(Dataset::new(items, header.subjects))
}
