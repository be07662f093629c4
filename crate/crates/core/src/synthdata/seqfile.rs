//! On-disk sequence format: a JSON header line, then one CSV row per frame
//! (frame index followed by x,y,z triples). Occluded samples are written as
//! the literal token `NaN,NaN,NaN`; finite values use 17 significant digits
//! so they round-trip bit for bit. Ground-truth labels live in an optional
//! `<name>.labels` sidecar holding a JSON array (track k carries label
//! `labels[k]`).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{MarkerFrame, OCCLUSION_PLACEHOLDER};

pub const DEFAULT_FPS: f64 = 120.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceHeader {
    pub n_markers: usize,
    pub fps: f64,
    pub subject: String,
    pub action: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceFile {
    pub header: SequenceHeader,
    pub frames: Vec<MarkerFrame>,
    pub labels: Option<Vec<usize>>,
}

/// Sidecar path: the sequence path with `.labels` appended.
pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels");
    PathBuf::from(s)
}

impl SequenceFile {
    pub fn to_csv(&self) -> String {
        let mut out =
            serde_json::to_string(&self.header).expect("header cannot fail to serialize");
        out.push('\n');
        for frame in &self.frames {
            write!(out, "{}", frame.frame_index).unwrap();
            for (pos, &occ) in frame.positions.iter().zip(&frame.occluded) {
                if occ {
                    out.push_str(",NaN,NaN,NaN");
                } else {
                    write!(out, ",{:.16e},{:.16e},{:.16e}", pos[0], pos[1], pos[2]).unwrap();
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<SequenceFile> {
        let mut lines = text.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::Format("empty file, expected a JSON header line".into()))?;
        let header: SequenceHeader = serde_json::from_str(header_line)
            .map_err(|e| Error::Format(format!("bad header line: {e}")))?;
        if header.n_markers == 0 {
            return Err(Error::Format("header declares zero markers".into()));
        }
        if !(header.fps.is_finite() && header.fps > 0.0) {
            return Err(Error::Format(format!("bad frame rate {}", header.fps)));
        }

        let n = header.n_markers;
        let mut frames: Vec<MarkerFrame> = Vec::new();
        for (k, line) in lines.enumerate() {
            let row = k + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 1 + 3 * n {
                return Err(Error::Format(format!(
                    "line {row}: expected {} fields for {n} markers, found {}",
                    1 + 3 * n,
                    fields.len()
                )));
            }
            let frame_index: usize = fields[0].parse().map_err(|_| {
                Error::Format(format!("line {row}: bad frame index {:?}", fields[0]))
            })?;
            if let Some(prev) = frames.last() {
                if frame_index != prev.frame_index + 1 {
                    return Err(Error::Format(format!(
                        "line {row}: frame index {frame_index} after {}, rows must be contiguous",
                        prev.frame_index
                    )));
                }
            }
            let mut positions = Vec::with_capacity(n);
            let mut occluded = Vec::with_capacity(n);
            for m in 0..n {
                let triple = &fields[1 + 3 * m..4 + 3 * m];
                let values: Vec<f64> = triple
                    .iter()
                    .map(|f| {
                        f.trim().parse::<f64>().map_err(|_| {
                            Error::Format(format!("line {row}: bad coordinate {f:?}"))
                        })
                    })
                    .collect::<Result<_>>()?;
                let nans = values.iter().filter(|v| v.is_nan()).count();
                match nans {
                    0 => {
                        positions.push([values[0], values[1], values[2]]);
                        occluded.push(false);
                    }
                    3 => {
                        positions.push(OCCLUSION_PLACEHOLDER);
                        occluded.push(true);
                    }
                    _ => {
                        return Err(Error::Format(format!(
                            "line {row}: marker {m} mixes NaN with finite coordinates"
                        )));
                    }
                }
            }
            frames.push(MarkerFrame::new(positions, occluded, frame_index)?);
        }
        Ok(SequenceFile { header, frames, labels: None })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(labels) = &self.labels {
            self.check_labels(labels)?;
            std::fs::write(labels_path(path), serde_json::to_string(labels)?)?;
        }
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<SequenceFile> {
        let mut seq = Self::from_csv(&std::fs::read_to_string(path)?)?;
        let sidecar = labels_path(path);
        if sidecar.exists() {
            let labels: Vec<usize> = serde_json::from_str(&std::fs::read_to_string(sidecar)?)
                .map_err(|e| Error::Format(format!("bad labels sidecar: {e}")))?;
            seq.check_labels(&labels)?;
            seq.labels = Some(labels);
        }
        Ok(seq)
    }

    /// The label mapping must be a bijection on the marker set.
    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        let n = self.header.n_markers;
        if labels.len() != n {
            return Err(Error::Format(format!(
                "labels list has {} entries for {n} markers",
                labels.len()
            )));
        }
        let mut seen = vec![false; n];
        for &l in labels {
            if l >= n || seen[l] {
                return Err(Error::Format(format!(
                    "labels list is not a permutation of 0..{n}"
                )));
            }
            seen[l] = true;
        }
        Ok(())
    }
}
