use std::collections::HashSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["image_id", "score", "strategy", "seed"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Strategy {
    Cs,
    Rl,
    Random,
    Entropy,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Cs => "cs",
            Strategy::Rl => "rl",
            Strategy::Random => "random",
            Strategy::Entropy => "entropy",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cs" => Ok(Strategy::Cs),
            "rl" => Ok(Strategy::Rl),
            "random" => Ok(Strategy::Random),
            "entropy" => Ok(Strategy::Entropy),
            other => Err(Error::Config(format!("unknown strategy `{other}`"))),
        }
    }
}

/// An ordered batch of images chosen for annotation.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    image_ids: Vec<String>,
    scores: Option<Vec<f64>>,
    strategy: Strategy,
    seed: u64,
}

impl Selection {
    pub fn new(
        image_ids: Vec<String>,
        scores: Option<Vec<f64>>,
        strategy: Strategy,
        seed: u64,
    ) -> Result<Self> {
        let mut seen = HashSet::with_capacity(image_ids.len());
        for id in &image_ids {
            if !seen.insert(id.as_str()) {
                return Err(Error::Config(format!("image id `{id}` selected twice")));
            }
        }
        if let Some(scores) = &scores {
            if scores.len() != image_ids.len() {
                return Err(Error::Dimension(format!(
                    "{} scores for {} ids",
                    scores.len(),
                    image_ids.len()
                )));
            }
            if scores.iter().any(|s| !s.is_finite()) {
                return Err(Error::Config("selection scores must be finite".into()));
            }
        }
        Ok(Self {
            image_ids,
            scores,
            strategy,
            seed,
        })
    }

    pub fn image_ids(&self) -> &[String] {
        &self.image_ids
    }

    pub fn scores(&self) -> Option<&[f64]> {
        self.scores.as_deref()
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.image_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.image_ids.is_empty()
    }
}

pub fn write_selection(sel: &Selection, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_selection_to(sel, file).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Writes the selection CSV to any sink (used for stdout output).
pub fn write_selection_to(sel: &Selection, sink: impl std::io::Write) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    let csv_err = |e: csv::Error| Error::io("<selection>", std::io::Error::other(e));
    w.write_record(HEADER).map_err(csv_err)?;
    let strategy = sel.strategy.as_str();
    let seed = sel.seed.to_string();
    for (k, id) in sel.image_ids.iter().enumerate() {
        let score = sel
            .scores
            .as_ref()
            .map(|s| s[k].to_string())
            .unwrap_or_default();
        w.write_record([id.as_str(), score.as_str(), strategy, seed.as_str()])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<selection>", e))
}

pub fn read_selection(path: impl AsRef<Path>) -> Result<Selection> {
    let path = path.as_ref();
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    let mut records = r.records();
    let header = records
        .next()
        .ok_or_else(|| Error::format(1, "missing header"))?
        .map_err(|e| Error::format(1, e.to_string()))?;
    if header.iter().ne(HEADER) {
        return Err(Error::format(1, "expected header image_id,score,strategy,seed"));
    }

    let mut ids = Vec::new();
    let mut scores = Vec::new();
    let mut strategy = None;
    let mut seed = None;
    for (k, rec) in records.enumerate() {
        let line = k + 2;
        let rec = rec.map_err(|e| Error::format(line, e.to_string()))?;
        if rec.len() != 4 {
            return Err(Error::format(line, "expected 4 fields"));
        }
        ids.push(rec[0].to_string());
        scores.push(if rec[1].is_empty() {
            None
        } else {
            Some(
                rec[1]
                    .parse::<f64>()
                    .map_err(|e| Error::format(line, format!("bad score: {e}")))?,
            )
        });
        let s: Strategy = rec[2].parse().map_err(|_| Error::format(line, "bad strategy"))?;
        let sd: u64 = rec[3].parse().map_err(|_| Error::format(line, "bad seed"))?;
        if strategy.is_some_and(|prev| prev != s) || seed.is_some_and(|prev| prev != sd) {
            return Err(Error::format(line, "strategy and seed must be constant"));
        }
        strategy = Some(s);
        seed = Some(sd);
    }

    let scores = if scores.iter().all(Option::is_some) && !scores.is_empty() {
        Some(scores.into_iter().flatten().collect())
    } else if scores.iter().all(Option::is_none) {
        None
    } else {
        return Err(Error::format(0, "scores must be present for all rows or none"));
    };
    // An empty file carries no strategy/seed; default to random/0.
    Selection::new(ids, scores, strategy.unwrap_or(Strategy::Random), seed.unwrap_or(0))
}
