//! On-disk dataset format: JSON lines with a self-describing header.
//!
//! Line 1 is a header object carrying the format tag, the tree topology as
//! parent links and the sequence count. Every following line is one labeled
//! sequence with its coordinate frames flattened in (time, dimension, axis)
//! order. Writes go through a temp file and rename, so a crash never leaves
//! a truncated dataset behind.

use crate::error::{Result, StsError};
use crate::io_util::write_atomic;
use crate::repr::StsSequence;
use crate::topology::SkeletonTopology;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DATASET_FORMAT: &str = "sts-v1";

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    num_dims: usize,
    coord_dim: usize,
    parent: Vec<Option<usize>>,
    n_sequences: usize,
}

#[derive(Serialize, Deserialize)]
struct Record {
    label: usize,
    num_frames: usize,
    frames: Vec<f64>,
}

/// Serializes a dataset. Byte-identical for identical inputs.
pub fn save_dataset(
    path: &Path,
    topology: &SkeletonTopology,
    sequences: &[StsSequence],
) -> Result<()> {
    let mut buf = String::new();
    let header = Header {
        format: DATASET_FORMAT.to_string(),
        num_dims: topology.num_dims(),
        coord_dim: topology.coord_dim(),
        parent: topology.parent_links().to_vec(),
        n_sequences: sequences.len(),
    };
    buf.push_str(&serde_json::to_string(&header).map_err(|e| StsError::Parse(format!("serialize: {e}")))?);
    buf.push('\n');
    for seq in sequences {
        if seq.num_dims() != topology.num_dims() || seq.coord_dim() != topology.coord_dim() {
            return Err(StsError::Input(format!(
                "sequence shape ({} dims, {} coords) does not match topology",
                seq.num_dims(),
                seq.coord_dim()
            )));
        }
        let rec = Record {
            label: seq.label,
            num_frames: seq.num_frames(),
            frames: seq.frames().to_vec(),
        };
        buf.push_str(&serde_json::to_string(&rec).map_err(|e| StsError::Parse(format!("serialize: {e}")))?);
        buf.push('\n');
    }
    write_atomic(path, buf.as_bytes())
}

/// Reads a dataset back. Errors name the offending line.
pub fn load_dataset(path: &Path) -> Result<(SkeletonTopology, Vec<StsSequence>)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| StsError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    let mut lines = text.lines();
    let header_line = lines
        .next()
        .ok_or_else(|| StsError::Parse(format!("{}: empty file", path.display())))?;
    let header: Header = serde_json::from_str(header_line)
        .map_err(|e| StsError::Parse(format!("{} line 1: {e}", path.display())))?;
    if header.format != DATASET_FORMAT {
        return Err(StsError::Parse(format!(
            "{}: unsupported format {:?}, expected {:?}",
            path.display(),
            header.format,
            DATASET_FORMAT
        )));
    }
    if header.parent.len() != header.num_dims {
        return Err(StsError::Parse(format!(
            "{} line 1: {} parent links for {} dimensions",
            path.display(),
            header.parent.len(),
            header.num_dims
        )));
    }
    let topology = SkeletonTopology::new(header.parent, header.coord_dim)?;
    let mut sequences = Vec::with_capacity(header.n_sequences);
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let rec: Record = serde_json::from_str(line)
            .map_err(|e| StsError::Parse(format!("{} line {line_no}: {e}", path.display())))?;
        let seq = StsSequence::new(
            rec.label,
            rec.num_frames,
            header.num_dims,
            header.coord_dim,
            rec.frames,
        )
        .map_err(|e| StsError::Parse(format!("{} line {line_no}: {e}", path.display())))?;
        sequences.push(seq);
    }
    if sequences.len() != header.n_sequences {
        return Err(StsError::Parse(format!(
            "{}: header promises {} sequences, found {}",
            path.display(),
            header.n_sequences,
            sequences.len()
        )));
    }
    Ok((topology, sequences))
}
