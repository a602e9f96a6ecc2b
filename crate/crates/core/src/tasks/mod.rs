//! Datasets, synthetic task generators, label-noise injection and
//! difficulty signals.

mod signals;

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Batch;
use crate::error::{Error, Result};

pub use signals::{
    default_stopwords, load_stopwords, signal_length, signal_lexical_overlap, signal_word_rarity,
    CorpusStats,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: u64,
    pub features: Vec<f64>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy: Option<bool>,
    #[serde(default, rename = "tokens", skip_serializing_if = "Option::is_none")]
    pub text_tokens: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Examples in ascending-id order with homogeneous feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    examples: Vec<Example>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(mut examples: Vec<Example>, num_classes: usize, split: Split) -> Result<Self> {
        examples.sort_by_key(|e| e.id);
        if let Some(w) = examples.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::arg(format!("duplicate example id {}", w[0].id)));
        }
        if let Some(first) = examples.first() {
            let dim = first.features.len();
            if let Some(e) = examples.iter().find(|e| e.features.len() != dim) {
                return Err(Error::shape(format!(
                    "example {} has {} features, expected {dim}",
                    e.id,
                    e.features.len()
                )));
            }
        }
        if let Some(e) = examples.iter().find(|e| e.label >= num_classes) {
            return Err(Error::arg(format!(
                "example {} has label {} but only {num_classes} classes",
                e.id, e.label
            )));
        }
        Ok(Dataset {
            examples,
            num_classes,
            split,
        })
    }

    pub fn examples(&self) -> &[Example] {
        &self.examples
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.examples.first().map_or(0, |e| e.features.len())
    }

    pub fn ids(&self) -> Vec<u64> {
        self.examples.iter().map(|e| e.id).collect()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn get(&self, id: u64) -> Option<&Example> {
        self.examples
            .binary_search_by_key(&id, |e| e.id)
            .ok()
            .map(|i| &self.examples[i])
    }

    /// Ids flagged `noisy == Some(true)`.
    pub fn noisy_ids(&self) -> BTreeSet<u64> {
        self.examples
            .iter()
            .filter(|e| e.noisy == Some(true))
            .map(|e| e.id)
            .collect()
    }

    /// Keeps only the listed ids, preserving canonical order.
    pub fn subset(&self, ids: &BTreeSet<u64>) -> Dataset {
        Dataset {
            examples: self
                .examples
                .iter()
                .filter(|e| ids.contains(&e.id))
                .cloned()
                .collect(),
            num_classes: self.num_classes,
            split: self.split,
        }
    }

    pub fn with_split(mut self, split: Split) -> Dataset {
        self.split = split;
        self
    }

    pub fn to_batch(&self) -> Result<Batch> {
        self.batch_of(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Batch built from positions (not ids) into the example list.
    pub fn batch_of(&self, positions: &[usize]) -> Result<Batch> {
        let dim = self.dim();
        let mut ids = Vec::with_capacity(positions.len());
        let mut features = Vec::with_capacity(positions.len() * dim);
        let mut labels = Vec::with_capacity(positions.len());
        for &p in positions {
            let e = &self.examples[p];
            ids.push(e.id);
            features.extend_from_slice(&e.features);
            labels.push(e.label);
        }
        Batch::new(ids, features, dim, labels)
    }
}

/// Balanced isotropic Gaussian clusters whose means are pairwise `separation` apart.
///
/// Two classes sit at `±separation/2` along the first axis; more classes use
/// the scaled simplex `separation/√2 · e_c`, which needs `dim ≥ num_classes`.
pub fn gen_gaussian_clusters(
    n: usize,
    num_classes: usize,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 {
        return Err(Error::arg("num_classes must be at least 2"));
    }
    if n < num_classes {
        return Err(Error::arg(format!(
            "n = {n} is smaller than num_classes = {num_classes}"
        )));
    }
    if dim == 0 {
        return Err(Error::arg("dim must be positive"));
    }
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(Error::arg("separation must be positive and finite"));
    }
    if num_classes > 2 && dim < num_classes {
        return Err(Error::arg(format!(
            "{num_classes} equidistant cluster means need dim >= {num_classes}, got {dim}"
        )));
    }
    let means: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            let mut m = vec![0.0; dim];
            if num_classes == 2 {
                m[0] = if c == 0 {
                    -separation / 2.0
                } else {
                    separation / 2.0
                };
            } else {
                m[c] = separation / std::f64::consts::SQRT_2;
            }
            m
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % num_classes;
            let features = means[label]
                .iter()
                .map(|&mu| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    mu + z
                })
                .collect();
            Example {
                id: i as u64,
                features,
                label,
                noisy: None,
                text_tokens: None,
            }
        })
        .collect();
    Dataset::new(examples, num_classes, Split::Train)
}

/// Class-conditional unigram model used by [`gen_bow_text`].
///
/// Class `c` follows a Zipf law over the vocabulary rotated by
/// `c · vocab_size / num_classes`, so every class has a distinct top token.
#[derive(Debug, Clone)]
pub struct BowGenerator {
    vocab_size: usize,
    num_classes: usize,
}

impl BowGenerator {
    pub fn new(vocab_size: usize, num_classes: usize) -> Result<Self> {
        if vocab_size < 10 {
            return Err(Error::arg("vocab_size must be at least 10"));
        }
        if num_classes < 2 || num_classes > vocab_size {
            return Err(Error::arg(format!(
                "num_classes must be in [2, vocab_size], got {num_classes}"
            )));
        }
        Ok(BowGenerator {
            vocab_size,
            num_classes,
        })
    }

    pub fn token(&self, index: usize) -> String {
        format!("w{index}")
    }

    pub fn token_index(&self, token: &str) -> Option<usize> {
        token
            .strip_prefix('w')
            .and_then(|s| s.parse().ok())
            .filter(|&i| i < self.vocab_size)
    }

    /// Probability of each vocabulary index under class `class`.
    pub fn class_distribution(&self, class: usize) -> Vec<f64> {
        let shift = class * self.vocab_size / self.num_classes;
        let mut p = vec![0.0; self.vocab_size];
        for rank in 0..self.vocab_size {
            p[(rank + shift) % self.vocab_size] = 1.0 / (rank + 1) as f64;
        }
        let z: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= z);
        p
    }

    /// Raw bag-of-words counts over the vocabulary.
    pub fn counts(&self, tokens: &[String]) -> Vec<f64> {
        let mut c = vec![0.0; self.vocab_size];
        for t in tokens {
            if let Some(i) = self.token_index(t) {
                c[i] += 1.0;
            }
        }
        c
    }
}

/// Bag-of-words classification task; features are L1-normalised token counts.
pub fn gen_bow_text(n: usize, vocab_size: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    let generator = BowGenerator::new(vocab_size, num_classes)?;
    if n < num_classes {
        return Err(Error::arg(format!(
            "n = {n} is smaller than num_classes = {num_classes}"
        )));
    }
    let cdfs: Vec<Vec<f64>> = (0..num_classes)
        .map(|c| {
            let mut acc = 0.0;
            generator
                .class_distribution(c)
                .into_iter()
                .map(|p| {
                    acc += p;
                    acc
                })
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let examples = (0..n)
        .map(|i| {
            let label = i % num_classes;
            let len = rng.random_range(4..=24);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    let u: f64 = rng.random();
                    let idx = cdfs[label].partition_point(|&c| c < u).min(vocab_size - 1);
                    generator.token(idx)
                })
                .collect();
            let counts = generator.counts(&tokens);
            let features = counts.iter().map(|c| c / len as f64).collect();
            Example {
                id: i as u64,
                features,
                label,
                noisy: None,
                text_tokens: Some(tokens),
            }
        })
        .collect();
    Dataset::new(examples, num_classes, Split::Train)
}

/// Which labels were flipped by [`inject_label_noise`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub flipped_ids: BTreeSet<u64>,
    pub fraction: f64,
}

impl NoiseReport {
    /// Recovers the report from `noisy` flags, e.g. after loading JSONL.
    pub fn from_flags(ds: &Dataset) -> NoiseReport {
        let flipped_ids = ds.noisy_ids();
        let fraction = if ds.is_empty() {
            0.0
        } else {
            flipped_ids.len() as f64 / ds.len() as f64
        };
        NoiseReport {
            flipped_ids,
            fraction,
        }
    }
}

/// Relabels `round(fraction · n)` uniformly chosen examples with a label drawn
/// uniformly from the other classes, and marks them `noisy`.
pub fn inject_label_noise(
    ds: &Dataset,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, NoiseReport)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::arg(format!(
            "noise fraction must lie in (0, 1), got {fraction}"
        )));
    }
    if ds.num_classes < 2 {
        return Err(Error::arg("label noise needs at least two classes"));
    }
    let n = ds.len();
    let k = (fraction * n as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut positions = index::sample(&mut rng, n, k).into_vec();
    positions.sort_unstable();

    let mut examples = ds.examples.clone();
    let mut flipped_ids = BTreeSet::new();
    for p in positions {
        let e = &mut examples[p];
        let r = rng.random_range(0..ds.num_classes - 1);
        e.label = if r >= e.label { r + 1 } else { r };
        e.noisy = Some(true);
        flipped_ids.insert(e.id);
    }
    let noisy = Dataset {
        examples,
        num_classes: ds.num_classes,
        split: ds.split,
    };
    Ok((
        noisy,
        NoiseReport {
            flipped_ids,
            fraction,
        },
    ))
}

/// Writes one JSON object per example, LF-terminated.
pub fn save_jsonl(ds: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in &ds.examples {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads a JSONL dataset; the class count is `max label + 1`.
pub fn load_jsonl(path: &Path) -> Result<Dataset> {
    load_jsonl_with(path, Split::Train, None)
}

pub fn load_jsonl_with(path: &Path, split: Split, num_classes: Option<usize>) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut examples = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: Example = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        examples.push(ex);
    }
    let inferred = examples.iter().map(|e| e.label + 1).max().unwrap_or(0);
    let num_classes = num_classes.unwrap_or(inferred.max(2));
    Dataset::new(examples, num_classes, split)
}
