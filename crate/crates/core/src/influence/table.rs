use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::diffcore::MaskSelector;
use crate::error::{Error, Result};

use super::MethodKind;

/// One finite self-influence score per example id.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    method: MethodKind,
    mask: MaskSelector,
    entries: BTreeMap<u64, f64>,
    provenance: String,
}

impl ScoreTable {
    pub fn new(
        method: MethodKind,
        mask: MaskSelector,
        entries: BTreeMap<u64, f64>,
        provenance: String,
    ) -> Result<Self> {
        if let Some((id, s)) = entries.iter().find(|(_, s)| !s.is_finite()) {
            return Err(Error::arg(format!("score for id {id} is not finite: {s}")));
        }
        Ok(ScoreTable {
            method,
            mask,
            entries,
            provenance,
        })
    }

    /// Table from bare `(id, score)` pairs, for callers outside a scoring run.
    pub fn from_scores(scores: impl IntoIterator<Item = (u64, f64)>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (id, s) in scores {
            if entries.insert(id, s).is_some() {
                return Err(Error::arg(format!("duplicate score for id {id}")));
            }
        }
        Self::new(MethodKind::Abif, MaskSelector::All, entries, String::new())
    }

    pub fn method(&self) -> MethodKind {
        self.method
    }

    pub fn mask(&self) -> MaskSelector {
        self.mask
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn entries(&self) -> &BTreeMap<u64, f64> {
        &self.entries
    }

    pub fn get(&self, id: u64) -> Option<f64> {
        self.entries.get(&id).copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// `id,score,method,mask,config_hash`, scores in round-trip scientific notation.
pub fn write_scores_csv(table: &ScoreTable, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "id,score,method,mask,config_hash").map_err(io)?;
    for (id, score) in &table.entries {
        writeln!(
            w,
            "{id},{score:e},{},{},{}",
            table.method, table.mask, table.provenance
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_scores_csv(path: &Path) -> Result<ScoreTable> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = BufReader::new(file).lines();
    match lines.next() {
        Some(Ok(h)) if h.trim() == "id,score,method,mask,config_hash" => {}
        Some(Err(e)) => return Err(Error::io(path, e)),
        _ => {
            return Err(parse_err(
                1,
                "missing or unexpected score CSV header".into(),
            ))
        }
    }
    let mut entries = BTreeMap::new();
    let mut meta: Option<(MethodKind, MaskSelector, String)> = None;
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(parse_err(
                lineno,
                format!("expected 5 fields, got {}", fields.len()),
            ));
        }
        let id: u64 = fields[0]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad id: {e}")))?;
        let score: f64 = fields[1]
            .parse()
            .map_err(|e| parse_err(lineno, format!("bad score: {e}")))?;
        let method: MethodKind = fields[2]
            .parse()
            .map_err(|e: Error| parse_err(lineno, e.to_string()))?;
        let mask: MaskSelector = fields[3]
            .parse()
            .map_err(|e: Error| parse_err(lineno, e.to_string()))?;
        let row_meta = (method, mask, fields[4].to_string());
        match &meta {
            None => meta = Some(row_meta),
            Some(m) if *m != row_meta => {
                return Err(parse_err(
                    lineno,
                    "method/mask/config_hash differ between rows".into(),
                ))
            }
            Some(_) => {}
        }
        if entries.insert(id, score).is_some() {
            return Err(parse_err(lineno, format!("duplicate id {id}")));
        }
    }
    let (method, mask, provenance) =
        meta.ok_or_else(|| parse_err(1, "score file has no rows".into()))?;
    ScoreTable::new(method, mask, entries, provenance)
}
