use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{ImageRecord, Pool, ProbabilityVector, Region};
use crate::error::{Error, Result};

pub const POOL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolFormat {
    /// Header object followed by one image object per line.
    #[default]
    Jsonl,
}

impl FromStr for PoolFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(PoolFormat::Jsonl),
            other => Err(Error::Config(format!("unknown pool format `{other}`"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    n_classes: usize,
    version: u32,
}

#[derive(Serialize, Deserialize)]
struct RegionLine {
    region_id: String,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ImageLine {
    image_id: String,
    #[serde(default)]
    feature: Option<Vec<f64>>,
    regions: Vec<RegionLine>,
}

pub fn load_pool(path: impl AsRef<Path>, format: PoolFormat) -> Result<Pool> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        PoolFormat::Jsonl => read_jsonl(BufReader::new(file), path),
    }
}

fn read_jsonl(reader: impl BufRead, path: &Path) -> Result<Pool> {
    let mut header: Option<Header> = None;
    let mut images = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line_no = k + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let Some(h) = &header else {
            let h: Header = serde_json::from_str(&line)
                .map_err(|e| Error::format(line_no, format!("bad header: {e}")))?;
            if h.version != POOL_FORMAT_VERSION {
                return Err(Error::format(line_no, format!("unsupported version {}", h.version)));
            }
            if h.n_classes == 0 {
                return Err(Error::Dimension("n_classes must be positive".into()));
            }
            header = Some(h);
            continue;
        };
        let rec: ImageLine = serde_json::from_str(&line)
            .map_err(|e| Error::format(line_no, e.to_string()))?;
        let mut regions = Vec::with_capacity(rec.regions.len());
        for r in rec.regions {
            if r.probs.len() != h.n_classes {
                return Err(Error::Dimension(format!(
                    "line {line_no}: region `{}` has {} probabilities, expected {}",
                    r.region_id,
                    r.probs.len(),
                    h.n_classes
                )));
            }
            let probs = ProbabilityVector::normalized(r.probs).map_err(|e| match e {
                Error::Normalization { sum, tolerance, .. } => Error::Normalization {
                    line: line_no,
                    sum,
                    tolerance,
                },
                Error::Format { message, .. } => Error::format(line_no, message),
                other => other,
            })?;
            regions.push(Region {
                region_id: r.region_id,
                probs,
            });
        }
        images.push(ImageRecord {
            image_id: rec.image_id,
            regions,
            feature: rec.feature,
        });
    }
    let header = header.ok_or_else(|| Error::format(1, "missing header line"))?;
    Pool::new(header.n_classes, images)
}

pub fn write_pool(pool: &Pool, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    let header = Header {
        n_classes: pool.n_classes(),
        version: POOL_FORMAT_VERSION,
    };
    writeln!(out, "{}", serde_json::to_string(&header).expect("header serializes")).map_err(io)?;
    for img in pool.images() {
        let line = ImageLine {
            image_id: img.image_id.clone(),
            feature: img.feature.clone(),
            regions: img
                .regions
                .iter()
                .map(|r| RegionLine {
                    region_id: r.region_id.clone(),
                    probs: r.probs.as_slice().to_vec(),
                })
                .collect(),
        };
        writeln!(out, "{}", serde_json::to_string(&line).expect("record serializes")).map_err(io)?;
    }
    out.flush().map_err(io)
}
