use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Camera, Dataset, PoseSample};
use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// One line of the dataset file.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    j2d: Vec<[f64; 2]>,
    j3d: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    action: Option<String>,
    cam: Camera,
}

impl From<&PoseSample> for Record {
    fn from(s: &PoseSample) -> Self {
        Record {
            j2d: (0..s.n_joints())
                .map(|i| [s.joints_2d.get(i, 0), s.joints_2d.get(i, 1)])
                .collect(),
            j3d: (0..s.n_joints())
                .map(|i| {
                    [
                        s.joints_3d.get(i, 0),
                        s.joints_3d.get(i, 1),
                        s.joints_3d.get(i, 2),
                    ]
                })
                .collect(),
            action: s.action.clone(),
            cam: s.camera,
        }
    }
}

impl TryFrom<Record> for PoseSample {
    type Error = Error;

    fn try_from(r: Record) -> Result<Self> {
        let j2d = Matrix::from_rows(&r.j2d)?;
        let j3d = Matrix::from_rows(&r.j3d)?;
        PoseSample::new(j2d, j3d, r.action, r.cam)
    }
}

/// Writes one JSON object per line. Floats use shortest round-trip
/// formatting, so [`parse_jsonl`] restores them bit for bit.
pub fn write_jsonl<W: Write>(dataset: &Dataset, mut w: W) -> Result<()> {
    for s in &dataset.samples {
        let line = serde_json::to_string(&Record::from(s))?;
        writeln!(w, "{line}").map_err(|e| Error::io("<dataset>", e))?;
    }
    Ok(())
}

/// Parses a JSON-lines dataset. Blank lines are skipped; the first malformed
/// line is reported with its 1-based line number.
pub fn parse_jsonl<R: BufRead>(r: R) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut n_joints = None;
    for (idx, line) in r.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record: Record = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let sample = PoseSample::try_from(record).map_err(|e| parse_err(e.to_string()))?;
        match n_joints {
            None => n_joints = Some(sample.n_joints()),
            Some(n) if n != sample.n_joints() => {
                return Err(parse_err(format!(
                    "expected {n} joints, found {}",
                    sample.n_joints()
                )));
            }
            Some(_) => {}
        }
        samples.push(sample);
    }
    Ok(Dataset::new(samples))
}

pub fn save(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_jsonl(dataset, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(BufReader::new(file))
}
