//! Bandit curriculum: EXP3/EXP3S over data buckets, training-progress
//! rewards, reward rescaling and the per-step policy log.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_GAMMA: f64 = 0.01;
pub const DEFAULT_ETA: f64 = 0.001;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Exp3,
    Exp3s,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Variant::Exp3 => "exp3",
            Variant::Exp3s => "exp3s",
        })
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp3" => Ok(Variant::Exp3),
            "exp3s" => Ok(Variant::Exp3s),
            other => Err(Error::arg(format!("unknown bandit variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditState {
    k: usize,
    weights: Vec<f64>,
    gamma: f64,
    eta: f64,
    variant: Variant,
    alpha: f64,
    step: u64,
}

impl BanditState {
    /// Uniform weights. `alpha` is ignored by [`Variant::Exp3`].
    pub fn new(k: usize, gamma: f64, eta: f64, variant: Variant, alpha: f64) -> Result<Self> {
        if k == 0 {
            return Err(Error::arg("bandit needs at least one arm"));
        }
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::arg(format!("gamma {gamma} outside [0, 1]")));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::arg(format!(
                "eta {eta} must be finite and non-negative"
            )));
        }
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::arg(format!("alpha {alpha} outside [0, 1]")));
        }
        Ok(BanditState {
            k,
            weights: vec![1.0; k],
            gamma,
            eta,
            variant,
            alpha,
            step: 0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// `p_a = (1 − γ) w_a / Σ w + γ / K`.
    pub fn policy(&self) -> Vec<f64> {
        let total: f64 = self.weights.iter().sum();
        let k = self.k as f64;
        self.weights
            .iter()
            .map(|w| (1.0 - self.gamma) * w / total + self.gamma / k)
            .collect()
    }

    /// Draws an arm from the current policy.
    pub fn sample_arm<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let p = self.policy();
        for (a, pa) in p.iter().enumerate() {
            acc += pa;
            if u < acc {
                return a;
            }
        }
        self.k - 1
    }

    /// Importance-weighted exponential update of the played arm, then EXP3S
    /// mixing, then renormalisation of the weights to mean 1.
    pub fn update(&mut self, arm: usize, reward: f64) -> Result<()> {
        if arm >= self.k {
            return Err(Error::arg(format!(
                "arm {arm} out of range for {} arms",
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::arg(format!("reward {reward} outside [0, 1]")));
        }
        let k = self.k as f64;
        let p = self.policy()[arm];
        let estimate = reward / p;
        self.weights[arm] *= (self.eta * estimate / k).exp();

        if self.variant == Variant::Exp3s && self.alpha > 0.0 && self.k > 1 {
            let total: f64 = self.weights.iter().sum();
            let share = self.alpha / (k - 1.0);
            self.weights = self
                .weights
                .iter()
                .map(|&w| (1.0 - self.alpha) * w + share * (total - w))
                .collect();
        }

        let mean = self.weights.iter().sum::<f64>() / k;
        self.weights.iter_mut().for_each(|w| *w /= mean);
        self.step += 1;
        Ok(())
    }
}

/// `1 − L_after / L_before`, both measured on the same batch.
pub fn pgnorm_reward(loss_before: f64, loss_after: f64) -> Result<f64> {
    if loss_before.is_nan() || loss_before <= 0.0 {
        return Err(Error::arg(format!(
            "loss before the step must be positive, got {loss_before}"
        )));
    }
    Ok(1.0 - loss_after / loss_before)
}

/// Cosine similarity; a zero vector yields 0.
pub fn cosine_reward(train_grad: &[f64], reward_grad: &[f64]) -> f64 {
    let dot: f64 = train_grad.iter().zip(reward_grad).map(|(a, b)| a * b).sum();
    let na = train_grad.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nb = reward_grad.iter().map(|b| b * b).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewardKind {
    Pgnorm,
    Cosine,
}

impl std::fmt::Display for RewardKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RewardKind::Pgnorm => "pgnorm",
            RewardKind::Cosine => "cosine",
        })
    }
}

impl std::str::FromStr for RewardKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pgnorm" => Ok(RewardKind::Pgnorm),
            "cosine" => Ok(RewardKind::Cosine),
            other => Err(Error::arg(format!("unknown reward `{other}`"))),
        }
    }
}

const MIN_WINDOW: usize = 20;

/// Maps raw rewards to `[0, 1]` through quantiles of a sliding window.
#[derive(Debug, Clone)]
pub struct RewardScaler {
    window: VecDeque<f64>,
    capacity: usize,
    lo_q: f64,
    hi_q: f64,
}

impl Default for RewardScaler {
    fn default() -> Self {
        RewardScaler::new(1000, 0.10, 0.90).expect("valid defaults")
    }
}

impl RewardScaler {
    pub fn new(capacity: usize, lo_q: f64, hi_q: f64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::arg("reward window capacity must be positive"));
        }
        if !(0.0 <= lo_q && lo_q < hi_q && hi_q <= 1.0) {
            return Err(Error::arg(format!(
                "need 0 <= lo_q < hi_q <= 1, got {lo_q}, {hi_q}"
            )));
        }
        Ok(RewardScaler {
            window: VecDeque::with_capacity(capacity),
            capacity,
            lo_q,
            hi_q,
        })
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    /// Current `(q_lo, q_hi)` of the window, if it holds enough samples.
    pub fn bounds(&self) -> Option<(f64, f64)> {
        if self.window.len() < MIN_WINDOW {
            return None;
        }
        let mut sorted: Vec<f64> = self.window.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        Some((quantile(&sorted, self.lo_q), quantile(&sorted, self.hi_q)))
    }

    /// Scales `raw` against the window as it stands, then records `raw`.
    pub fn scale(&mut self, raw: f64) -> f64 {
        let scaled = match self.bounds() {
            None => ((raw + 1.0) / 2.0).clamp(0.0, 1.0),
            Some((lo, hi)) if hi <= lo => 0.5,
            Some((lo, hi)) => ((raw - lo) / (hi - lo)).clamp(0.0, 1.0),
        };
        if self.window.len() == self.capacity {
            self.window.pop_front();
        }
        self.window.push_back(raw);
        scaled
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyRow {
    pub step: u64,
    pub arm: usize,
    /// Policy the arm was drawn from.
    pub policy: Vec<f64>,
    pub reward_raw: f64,
    pub reward_scaled: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyLog {
    pub rows: Vec<PolicyRow>,
}

impl PolicyLog {
    pub fn push(&mut self, row: PolicyRow) {
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Mean policy over the last `window` rows.
    pub fn mean_policy_tail(&self, window: usize) -> Vec<f64> {
        let Some(first) = self.rows.first() else {
            return Vec::new();
        };
        let start = self.rows.len().saturating_sub(window);
        let tail = &self.rows[start..];
        let mut mean = vec![0.0; first.policy.len()];
        for r in tail {
            for (m, p) in mean.iter_mut().zip(&r.policy) {
                *m += p / tail.len() as f64;
            }
        }
        mean
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        let k = self.rows.first().map_or(0, |r| r.policy.len());
        let mut header = String::from("step,arm,reward_raw,reward_scaled");
        for a in 0..k {
            header.push_str(&format!(",p{a}"));
        }
        writeln!(w, "{header}").map_err(io)?;
        for r in &self.rows {
            write!(
                w,
                "{},{},{:e},{:e}",
                r.step, r.arm, r.reward_raw, r.reward_scaled
            )
            .map_err(io)?;
            for p in &r.policy {
                write!(w, ",{p:e}").map_err(io)?;
            }
            writeln!(w).map_err(io)?;
        }
        w.flush().map_err(io)
    }
}

/// Reads a log written by [`PolicyLog::write_csv`].
pub fn read_policy_csv(path: &Path) -> Result<PolicyLog> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let header = lines
        .next()
        .map(|(_, h)| h)
        .ok_or_else(|| parse_err(1, "empty policy log".to_string()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..4] != ["step", "arm", "reward_raw", "reward_scaled"] {
        return Err(parse_err(1, format!("unexpected header {header:?}")));
    }
    let k = cols.len() - 4;
    let mut log = PolicyLog::default();
    for (i, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 + k {
            return Err(parse_err(
                i + 1,
                format!("expected {} fields, found {}", 4 + k, fields.len()),
            ));
        }
        let num = |s: &str| {
            s.parse::<f64>()
                .map_err(|e| parse_err(i + 1, format!("{s:?}: {e}")))
        };
        let int = |s: &str| {
            s.parse::<u64>()
                .map_err(|e| parse_err(i + 1, format!("{s:?}: {e}")))
        };
        log.push(PolicyRow {
            step: int(fields[0])?,
            arm: int(fields[1])? as usize,
            reward_raw: num(fields[2])?,
            reward_scaled: num(fields[3])?,
            policy: fields[4..].iter().map(|f| num(f)).collect::<Result<_>>()?,
        });
    }
    Ok(log)
}

/// Best fixed arm's cumulative reward minus the reward actually collected.
///
/// `per_arm_rewards[t][a]` is the reward arm `a` would have paid at step `t`.
pub fn regret_estimate(log: &PolicyLog, per_arm_rewards: &[Vec<f64>]) -> Result<f64> {
    if per_arm_rewards.len() < log.len() {
        return Err(Error::shape(format!(
            "reward matrix has {} rows for {} logged steps",
            per_arm_rewards.len(),
            log.len()
        )));
    }
    let rows = &per_arm_rewards[..log.len()];
    let k = rows.first().map_or(0, Vec::len);
    let mut totals = vec![0.0; k];
    let mut obtained = 0.0;
    for (row, entry) in rows.iter().zip(&log.rows) {
        if row.len() != k || entry.arm >= k {
            return Err(Error::shape("ragged reward matrix or arm out of range"));
        }
        for (t, r) in totals.iter_mut().zip(row) {
            *t += r;
        }
        obtained += row[entry.arm];
    }
    let best = totals.iter().copied().fold(0.0, f64::max);
    Ok(best - obtained)
}

/// Runs a bandit against Bernoulli arms with the given means.
///
/// Returns the log and the full realised reward matrix (every arm's draw at
/// every step), which makes the run replayable and the regret exact.
pub fn simulate_bernoulli(
    state: &mut BanditState,
    means: &[f64],
    steps: usize,
    seed: u64,
) -> Result<(PolicyLog, Vec<Vec<f64>>)> {
    if means.len() != state.k() {
        return Err(Error::shape(format!(
            "{} arm means for a {}-arm bandit",
            means.len(),
            state.k()
        )));
    }
    let mut env = ChaCha8Rng::seed_from_u64(seed);
    let mut agent = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut log = PolicyLog::default();
    let mut matrix = Vec::with_capacity(steps);
    for t in 0..steps {
        let rewards: Vec<f64> = means
            .iter()
            .map(|&m| if env.random::<f64>() < m { 1.0 } else { 0.0 })
            .collect();
        let policy = state.policy();
        let arm = state.sample_arm(&mut agent);
        let r = rewards[arm];
        state.update(arm, r)?;
        log.push(PolicyRow {
            step: t as u64,
            arm,
            policy,
            reward_raw: r,
            reward_scaled: r,
        });
        matrix.push(rewards);
    }
    Ok((log, matrix))
}
