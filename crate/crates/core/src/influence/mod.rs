//! Self-influence scores: Arnoldi-subspace influence functions (ABIF) and
//! TracIn, over a chosen layer mask.
//!
//! ABIF approximates `⟨g, H⁻¹ g⟩` inside the span of the dominant Ritz
//! vectors of the loss Hessian; TracIn averages `‖g‖²` over training
//! checkpoints, optionally after a Gaussian random projection.

mod arnoldi;
mod table;

use std::collections::BTreeMap;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::{self, LayerMask, MaskSelector, ModelSpec, ParamVector};
use crate::error::{Error, Result};
use crate::hashing::config_hash;
use crate::tasks::{Dataset, Example};

pub use arnoldi::{arnoldi, distill, Krylov, RitzPairs, RITZ_REL_TOL};
pub use table::{read_scores_csv, write_scores_csv, ScoreTable};

pub const DEFAULT_TOP_K: usize = 30;
pub const DEFAULT_ARNOLDI_ITERS: usize = 60;
pub const DEFAULT_HVP_EXAMPLES: usize = 512;
pub const DEFAULT_TRACIN_PROJECTION: usize = 1024;
pub const DEFAULT_TRACIN_CHECKPOINTS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSource {
    pub n_iters: usize,
    pub iterations_run: usize,
    pub breakdown: bool,
    pub seed: u64,
    pub requested_k: usize,
    pub checkpoint_step: Option<usize>,
}

/// Dominant eigenpairs of the masked Hessian, used to apply `H⁻¹` in their span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionOperator {
    eigenvalues: Vec<f64>,
    eigen_rows: Vec<Vec<f64>>,
    mask: MaskSelector,
    source: ProjectionSource,
}

impl ProjectionOperator {
    pub fn new(
        eigenvalues: Vec<f64>,
        eigen_rows: Vec<Vec<f64>>,
        mask: MaskSelector,
        source: ProjectionSource,
    ) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::arg("projection needs at least one eigenpair"));
        }
        if eigenvalues.len() != eigen_rows.len() {
            return Err(Error::shape(format!(
                "{} eigenvalues but {} eigenvector rows",
                eigenvalues.len(),
                eigen_rows.len()
            )));
        }
        if eigenvalues.iter().any(|l| *l == 0.0 || !l.is_finite()) {
            return Err(Error::arg("eigenvalues must be finite and nonzero"));
        }
        let dim = eigen_rows[0].len();
        if eigen_rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("eigenvector rows differ in length"));
        }
        Ok(ProjectionOperator {
            eigenvalues,
            eigen_rows,
            mask,
            source,
        })
    }

    pub fn from_ritz(
        pairs: RitzPairs,
        mask: MaskSelector,
        source: ProjectionSource,
    ) -> Result<Self> {
        Self::new(pairs.values, pairs.vectors, mask, source)
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigen_rows(&self) -> &[Vec<f64>] {
        &self.eigen_rows
    }

    pub fn mask(&self) -> MaskSelector {
        self.mask
    }

    pub fn source(&self) -> &ProjectionSource {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.eigen_rows[0].len()
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }
}

/// `Σ_i (r_i · g)² / λ_i` for a gradient `g` in masked coordinates.
///
/// Eigenvalues keep their sign, so the score can be negative when the
/// Hessian is indefinite.
pub fn abif_self_influence(proj: &ProjectionOperator, g: &[f64]) -> Result<f64> {
    if g.len() != proj.dim() {
        return Err(Error::shape(format!(
            "gradient has {} coordinates but projection expects {}",
            g.len(),
            proj.dim()
        )));
    }
    Ok(proj
        .eigen_rows
        .iter()
        .zip(&proj.eigenvalues)
        .map(|(r, &lambda)| {
            let c = arnoldi::dot(r, g);
            c * c / lambda
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AbifConfig {
    pub top_k: usize,
    pub n_iters: usize,
    /// Size of the fixed subsample whose Hessian the iteration probes.
    pub hvp_examples: usize,
    pub seed: u64,
}

impl Default for AbifConfig {
    fn default() -> Self {
        AbifConfig {
            top_k: DEFAULT_TOP_K,
            n_iters: DEFAULT_ARNOLDI_ITERS,
            hvp_examples: DEFAULT_HVP_EXAMPLES,
            seed: 0,
        }
    }
}

/// Runs Arnoldi on the masked Hessian of `params` over a seed-chosen
/// subsample of `data`, then keeps the top Ritz pairs.
pub fn fit_projection(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
    mask: &LayerMask,
    cfg: &AbifConfig,
) -> Result<ProjectionOperator> {
    if data.is_empty() {
        return Err(Error::arg("cannot fit a projection on an empty dataset"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let take = cfg.hvp_examples.min(data.len()).max(1);
    let mut positions = index::sample(&mut rng, data.len(), take).into_vec();
    positions.sort_unstable();
    let batch = data.batch_of(&positions)?;

    let dim = mask.masked_dim();
    let krylov = arnoldi(
        |v| {
            let full = mask.scatter(v);
            let hv = diffcore::hvp(spec, params, &batch, &full, mask)?;
            Ok(mask.gather(&hv))
        },
        dim,
        cfg.n_iters,
        cfg.seed,
    )?;
    let pairs = distill(&krylov, cfg.top_k)?;
    ProjectionOperator::from_ritz(
        pairs,
        mask.selector(),
        ProjectionSource {
            n_iters: cfg.n_iters,
            iterations_run: krylov.iterations,
            breakdown: krylov.breakdown,
            seed: cfg.seed,
            requested_k: cfg.top_k,
            checkpoint_step: None,
        },
    )
}

/// Seeded Gaussian sketch `ℝ^dim_in → ℝ^dim_out` with entries `N(0, 1/dim_out)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GaussianProjection {
    pub dim_in: usize,
    pub dim_out: usize,
    pub seed: u64,
}

impl GaussianProjection {
    pub fn new(dim_in: usize, dim_out: usize, seed: u64) -> Result<Self> {
        if dim_out == 0 || dim_out > dim_in {
            return Err(Error::arg(format!(
                "projection dim {dim_out} must be in [1, {dim_in}]"
            )));
        }
        Ok(GaussianProjection {
            dim_in,
            dim_out,
            seed,
        })
    }

    /// Regenerates the matrix from the seed.
    pub fn matrix(&self) -> GaussianMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let normal = Normal::new(0.0, (1.0 / self.dim_out as f64).sqrt())
            .expect("positive standard deviation");
        GaussianMatrix {
            rows: (0..self.dim_out)
                .map(|_| (0..self.dim_in).map(|_| normal.sample(&mut rng)).collect())
                .collect(),
        }
    }
}

/// Materialised [`GaussianProjection`], built once per scoring pass.
#[derive(Debug, Clone)]
pub struct GaussianMatrix {
    rows: Vec<Vec<f64>>,
}

impl GaussianMatrix {
    pub fn dim_in(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn apply(&self, g: &[f64]) -> Vec<f64> {
        self.rows.iter().map(|r| arnoldi::dot(r, g)).collect()
    }
}

/// `(1/C) Σ_c ‖P ∇_c L(ex)‖²` over the given checkpoints.
pub fn tracin_self_influence(
    checkpoints: &[ParamVector],
    spec: &ModelSpec,
    ex: &Example,
    mask: &LayerMask,
    proj: Option<&GaussianMatrix>,
) -> Result<f64> {
    if checkpoints.is_empty() {
        return Err(Error::arg("TracIn needs at least one checkpoint"));
    }
    let batch = diffcore::Batch::new(
        vec![ex.id],
        ex.features.clone(),
        ex.features.len(),
        vec![ex.label],
    )?;
    if let Some(p) = proj {
        if p.dim_in() != mask.masked_dim() {
            return Err(Error::shape(format!(
                "projection expects {} inputs but mask has {} coordinates",
                p.dim_in(),
                mask.masked_dim()
            )));
        }
    }
    let mut total = 0.0;
    for params in checkpoints {
        let g = mask.gather(&diffcore::grad(spec, params, &batch, mask)?);
        total += match proj {
            Some(p) => squared_norm(&p.apply(&g)),
            None => squared_norm(&g),
        };
    }
    Ok(total / checkpoints.len() as f64)
}

fn squared_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TracinConfig {
    pub checkpoints: usize,
    /// `None` disables projection; a dimension at or above the masked
    /// dimension also falls back to exact gradients.
    pub projection_dim: Option<usize>,
    pub seed: u64,
}

impl Default for TracinConfig {
    fn default() -> Self {
        TracinConfig {
            checkpoints: DEFAULT_TRACIN_CHECKPOINTS,
            projection_dim: Some(DEFAULT_TRACIN_PROJECTION),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodKind {
    Abif,
    Tracin,
}

impl std::fmt::Display for MethodKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MethodKind::Abif => "abif",
            MethodKind::Tracin => "tracin",
        })
    }
}

impl std::str::FromStr for MethodKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "abif" => Ok(MethodKind::Abif),
            "tracin" => Ok(MethodKind::Tracin),
            other => Err(Error::arg(format!("unknown influence method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ScoreMethod {
    Abif(AbifConfig),
    Tracin(TracinConfig),
}

impl ScoreMethod {
    pub fn kind(&self) -> MethodKind {
        match self {
            ScoreMethod::Abif(_) => MethodKind::Abif,
            ScoreMethod::Tracin(_) => MethodKind::Tracin,
        }
    }
}

/// Picks `c` checkpoints spread evenly from the earliest to the final one.
pub fn select_checkpoints<T: Clone>(saved: &[T], c: usize) -> Vec<T> {
    if saved.is_empty() || c == 0 {
        return Vec::new();
    }
    if c >= saved.len() {
        return saved.to_vec();
    }
    if c == 1 {
        return vec![saved[saved.len() - 1].clone()];
    }
    let last = saved.len() - 1;
    let mut picks: Vec<usize> = (0..c).map(|i| (i * last + (c - 1) / 2) / (c - 1)).collect();
    picks.dedup();
    picks.into_iter().map(|i| saved[i].clone()).collect()
}

/// Scores every example of `ds`.
///
/// `checkpoints` are ordered by training step. ABIF uses the final one and
/// fits its projection on `ds` itself; TracIn uses up to
/// `cfg.checkpoints` of them chosen by [`select_checkpoints`].
pub fn score_dataset(
    method: &ScoreMethod,
    spec: &ModelSpec,
    checkpoints: &[ParamVector],
    ds: &Dataset,
    mask: MaskSelector,
) -> Result<ScoreTable> {
    let final_params = checkpoints
        .last()
        .ok_or_else(|| Error::MissingInput("no checkpoints to score with".to_string()))?;
    let layer_mask = LayerMask::for_spec(mask, spec)?;
    match method {
        ScoreMethod::Abif(cfg) => {
            let proj = fit_projection(spec, final_params, ds, &layer_mask, cfg)?;
            score_with_projection(&proj, spec, final_params, ds, method)
        }
        ScoreMethod::Tracin(cfg) => {
            let chosen = select_checkpoints(checkpoints, cfg.checkpoints.max(1));
            let dim = layer_mask.masked_dim();
            let matrix = match cfg.projection_dim {
                Some(k) if k < dim => Some(GaussianProjection::new(dim, k, cfg.seed)?.matrix()),
                _ => None,
            };
            let scores: Vec<Result<f64>> = ds
                .examples()
                .par_iter()
                .map(|ex| tracin_self_influence(&chosen, spec, ex, &layer_mask, matrix.as_ref()))
                .collect();
            collect_table(
                ds,
                scores,
                MethodKind::Tracin,
                mask,
                provenance(method, mask, spec),
            )
        }
    }
}

/// ABIF scores of `ds` under an already fitted projection.
pub fn score_with_projection(
    proj: &ProjectionOperator,
    spec: &ModelSpec,
    params: &ParamVector,
    ds: &Dataset,
    method: &ScoreMethod,
) -> Result<ScoreTable> {
    let layer_mask = LayerMask::for_spec(proj.mask(), spec)?;
    let scores: Vec<Result<f64>> = (0..ds.len())
        .into_par_iter()
        .map(|i| {
            let batch = ds.batch_of(&[i])?;
            let g = diffcore::grad(spec, params, &batch, &layer_mask)?;
            abif_self_influence(proj, &layer_mask.gather(&g))
        })
        .collect();
    collect_table(
        ds,
        scores,
        MethodKind::Abif,
        proj.mask(),
        provenance(method, proj.mask(), spec),
    )
}

fn provenance(method: &ScoreMethod, mask: MaskSelector, spec: &ModelSpec) -> String {
    config_hash(&serde_json::json!({ "method": method, "mask": mask, "spec": spec }))
}

fn collect_table(
    ds: &Dataset,
    scores: Vec<Result<f64>>,
    method: MethodKind,
    mask: MaskSelector,
    provenance: String,
) -> Result<ScoreTable> {
    let mut entries = BTreeMap::new();
    for (ex, s) in ds.examples().iter().zip(scores) {
        let s = s?;
        if !s.is_finite() {
            return Err(Error::arg(format!(
                "non-finite score for example {}",
                ex.id
            )));
        }
        entries.insert(ex.id, s);
    }
    ScoreTable::new(method, mask, entries, provenance)
}
