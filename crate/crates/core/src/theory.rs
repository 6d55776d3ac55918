//! Closed-form optimal query embeddings for a single query with noisy
//! positives, and the orderings they imply between full finetuning (FT),
//! static pruning (SP) and dynamic pruning (DP).
//!
//! True positives have mean direction `mu_true`, false positives
//! `mu_noise`. Each strategy's optimal query embedding is the normalized
//! mixture `k * mu_true + (1 - k) * mu_noise` for a strategy-specific
//! correct fraction `k`:
//!
//! | strategy | correct fraction |
//! |----------|------------------|
//! | FT | `m_plus / m` |
//! | SP | `gamma` |
//! | DP | `(rho * s * (beta - 1) + m_plus) / (s * (beta - 1) + m)` |
//!
//! The alignment `f(k) = cos(mixture(k), mu_true)` has derivative
//! `(1 - c^2)(1 - k) / |k u + (1 - k) v|^3` with `c = mu_true . mu_noise`, so
//! it is strictly increasing on `(0, 1)` and every comparison of alignments
//! reduces to a comparison of correct fractions.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::embedding;
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Band within which two alignments count as equal.
pub const EQUALITY_BAND: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Ft,
    Sp,
    Dp,
}

/// One query's world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremInstance {
    pub mu_true: Vec<f64>,
    pub mu_noise: Vec<f64>,
    /// Labeled positives.
    pub m: usize,
    /// Correctly labeled positives.
    pub m_plus: usize,
    /// Pairs kept by SP, and how many of them are correct.
    pub sp_selected: usize,
    pub sp_correct: usize,
    /// Pairs boosted by DP, and how many of them are correct.
    pub dp_selected: usize,
    pub dp_correct: usize,
    /// DP sampling strength.
    pub beta: f64,
}

impl TheoremInstance {
    pub fn validate(&self) -> Result<()> {
        if self.mu_true.len() != self.mu_noise.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mu_true.len(),
                found: self.mu_noise.len(),
            });
        }
        if self.mu_true == self.mu_noise {
            return Err(Error::Degenerate("mean directions must differ".into()));
        }
        if self.m == 0 || self.m_plus > self.m {
            return Err(Error::config("need 0 <= m_plus <= m and m >= 1"));
        }
        if self.sp_selected == 0 || self.sp_correct > self.sp_selected {
            return Err(Error::config(
                "need 0 <= sp_correct <= sp_selected, sp_selected >= 1",
            ));
        }
        if self.dp_selected == 0 || self.dp_correct > self.dp_selected {
            return Err(Error::config(
                "need 0 <= dp_correct <= dp_selected, dp_selected >= 1",
            ));
        }
        if !(self.beta > 1.0) {
            return Err(Error::config("beta must exceed 1"));
        }
        Ok(())
    }

    /// `gamma`: correct fraction of SP's selection.
    pub fn gamma(&self) -> f64 {
        self.sp_correct as f64 / self.sp_selected as f64
    }

    /// `rho`: correct fraction of DP's boosted set.
    pub fn rho(&self) -> f64 {
        self.dp_correct as f64 / self.dp_selected as f64
    }

    /// Correct fraction of the labeled positives, the noise baseline.
    pub fn clean_fraction(&self) -> f64 {
        self.m_plus as f64 / self.m as f64
    }

    pub fn direction_cosine(&self) -> f64 {
        embedding::dot(&self.mu_true, &self.mu_noise)
    }

    /// Mixture coefficients `(a, b)` of `a * mu_true + b * mu_noise`.
    pub fn coefficients(&self, kind: Strategy) -> (f64, f64) {
        match kind {
            Strategy::Ft => {
                let k = self.clean_fraction();
                (k, 1.0 - k)
            }
            Strategy::Sp => {
                let g = self.gamma();
                (g, 1.0 - g)
            }
            Strategy::Dp => {
                let boost = self.dp_selected as f64 * (self.beta - 1.0);
                let rho = self.rho();
                (
                    rho * boost + self.m_plus as f64,
                    (1.0 - rho) * boost + (self.m - self.m_plus) as f64,
                )
            }
        }
    }

    /// Correct fraction of the strategy's effective training distribution.
    pub fn effective_fraction(&self, kind: Strategy) -> f64 {
        let (a, b) = self.coefficients(kind);
        a / (a + b)
    }
}

/// Unit-norm optimal query embedding under `kind`.
pub fn optimal_embedding(kind: Strategy, inst: &TheoremInstance) -> Result<Vec<f64>> {
    let (a, b) = inst.coefficients(kind);
    let raw: Vec<f64> = inst
        .mu_true
        .iter()
        .zip(&inst.mu_noise)
        .map(|(u, v)| a * u + b * v)
        .collect();
    embedding::normalized(&raw)
        .map_err(|_| Error::Degenerate(format!("{kind:?} mixture of the mean directions is zero")))
}

/// Cosine of `e` to the true-positive direction.
pub fn alignment(e: &[f64], inst: &TheoremInstance) -> f64 {
    embedding::dot(e, &inst.mu_true)
}

/// Alignment of `a u + b v` with `u`, for unit `u, v` with `u . v = c`,
/// computed in the plane the two directions span.
pub fn planar_alignment(a: f64, b: f64, c: f64) -> Result<f64> {
    let norm_sq = a * a + b * b + 2.0 * a * b * c;
    if !(norm_sq > 0.0) {
        return Err(Error::Degenerate("zero mixture".into()));
    }
    Ok((a + b * c) / norm_sq.sqrt())
}

fn strategy_alignment(kind: Strategy, inst: &TheoremInstance) -> Result<f64> {
    let (a, b) = inst.coefficients(kind);
    planar_alignment(a, b, inst.direction_cosine())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoremCheck {
    pub e_ft: f64,
    pub e_sp: f64,
    pub e_dp: f64,
    pub sp_beats_ft: bool,
    pub dp_beats_ft: bool,
    /// `Some(E_SP > E_DP)` when `gamma == rho`, otherwise `None`.
    pub sp_beats_dp_when_equal: Option<bool>,
    /// `sp_beats_ft` agrees with `gamma > m_plus / m`, and the two are equal
    /// when the fractions are equal.
    pub sp_equivalence_holds: bool,
    /// Same for DP against its effective correct fraction.
    pub dp_equivalence_holds: bool,
    /// When `gamma == rho`: `E_SP > E_DP` iff `gamma > m_plus / m`.
    pub equal_quality_ordering_holds: Option<bool>,
}

impl TheoremCheck {
    pub fn all_hold(&self) -> bool {
        self.sp_equivalence_holds
            && self.dp_equivalence_holds
            && self.equal_quality_ordering_holds.unwrap_or(true)
    }
}

fn compare(x: f64, y: f64) -> std::cmp::Ordering {
    if (x - y).abs() <= EQUALITY_BAND {
        std::cmp::Ordering::Equal
    } else {
        x.total_cmp(&y)
    }
}

/// Evaluate the alignments of all three strategies and check each claimed
/// equivalence in both directions.
///
/// Fraction comparisons are exact (cross-multiplied integer counts);
/// alignment comparisons use [`EQUALITY_BAND`].
pub fn verify_theorem(inst: &TheoremInstance) -> Result<TheoremCheck> {
    inst.validate()?;
    let e_ft = strategy_alignment(Strategy::Ft, inst)?;
    let e_sp = strategy_alignment(Strategy::Sp, inst)?;
    let e_dp = strategy_alignment(Strategy::Dp, inst)?;

    // gamma vs m_plus / m, exactly
    let gamma_vs_clean = (inst.sp_correct * inst.m).cmp(&(inst.m_plus * inst.sp_selected));
    let sp_vs_ft = compare(e_sp, e_ft);
    // DP's effective fraction exceeds m_plus / m exactly when rho does
    let rho_vs_clean = (inst.dp_correct * inst.m).cmp(&(inst.m_plus * inst.dp_selected));
    let dp_vs_ft = compare(e_dp, e_ft);

    let equal_quality = inst.sp_correct * inst.dp_selected == inst.dp_correct * inst.sp_selected;
    let sp_vs_dp = compare(e_sp, e_dp);

    Ok(TheoremCheck {
        e_ft,
        e_sp,
        e_dp,
        sp_beats_ft: sp_vs_ft.is_gt(),
        dp_beats_ft: dp_vs_ft.is_gt(),
        sp_beats_dp_when_equal: equal_quality.then(|| sp_vs_dp.is_gt()),
        sp_equivalence_holds: sp_vs_ft == gamma_vs_clean,
        dp_equivalence_holds: dp_vs_ft == rho_vs_clean,
        equal_quality_ordering_holds: equal_quality.then(|| sp_vs_dp == gamma_vs_clean),
    })
}

/// `f(k) = cos(k u + (1 - k) v, u)`.
pub fn lemma_f(u: &[f64], v: &[f64], k: f64) -> f64 {
    let w: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(a, b)| k * a + (1.0 - k) * b)
        .collect();
    embedding::dot(&w, u) / embedding::norm(&w)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeCheck {
    pub analytic: f64,
    pub numeric: f64,
}

impl DerivativeCheck {
    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.numeric).abs() / self.analytic.abs()
    }
}

/// Finite-difference step used by [`lemma_derivative_check`].
pub const FD_STEP: f64 = 1e-6;

/// Closed-form `f'(k)` next to a central finite difference of `f`.
pub fn lemma_derivative_check(u: &[f64], v: &[f64], k: f64) -> Result<DerivativeCheck> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    if u == v {
        return Err(Error::Degenerate("the lemma requires u != v".into()));
    }
    if !(k > 0.0 && k < 1.0) {
        return Err(Error::config(format!("k = {k} outside (0, 1)")));
    }
    let c = embedding::dot(u, v);
    let w: Vec<f64> = u
        .iter()
        .zip(v)
        .map(|(a, b)| k * a + (1.0 - k) * b)
        .collect();
    let analytic = (1.0 - c * c) * (1.0 - k) / embedding::norm(&w).powi(3);
    let h = FD_STEP.min(k / 2.0).min((1.0 - k) / 2.0);
    let numeric = (lemma_f(u, v, k + h) - lemma_f(u, v, k - h)) / (2.0 * h);
    Ok(DerivativeCheck { analytic, numeric })
}

/// Bounds for random instances drawn by [`random_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstanceBounds {
    pub max_dim: usize,
    pub max_positives: usize,
    pub max_beta: f64,
    /// Largest `|mu_true . mu_noise|`.
    pub max_direction_cosine: f64,
}

impl Default for InstanceBounds {
    fn default() -> Self {
        InstanceBounds {
            max_dim: 16,
            max_positives: 100,
            max_beta: 10.0,
            max_direction_cosine: 0.9,
        }
    }
}

/// A unit vector at cosine `c` to `u`.
fn at_cosine(u: &[f64], c: f64, rng: &mut Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..u.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let proj = embedding::dot(&raw, u);
        let perp: Vec<f64> = raw.iter().zip(u).map(|(r, a)| r - proj * a).collect();
        if let Ok(perp) = embedding::normalized(&perp) {
            let s = (1.0 - c * c).sqrt();
            return u.iter().zip(&perp).map(|(a, p)| c * a + s * p).collect();
        }
    }
}

pub fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(u) = embedding::normalized(&raw) {
            return u;
        }
    }
}

/// A random valid instance; with probability 1/2 SP and DP get equal
/// selection quality (`gamma == rho`).
pub fn random_instance(bounds: &InstanceBounds, rng: &mut Rng) -> TheoremInstance {
    let dim = rng.random_range(2..=bounds.max_dim.max(2));
    let mu_true = random_unit(dim, rng);
    let c = rng.random_range(-bounds.max_direction_cosine..=bounds.max_direction_cosine);
    let mu_noise = at_cosine(&mu_true, c, rng);
    let m = rng.random_range(1..=bounds.max_positives);
    let m_plus = rng.random_range(0..=m);
    let sp_selected = rng.random_range(1..=m);
    let sp_correct = rng.random_range(0..=sp_selected);
    let (dp_selected, dp_correct) = if rng.random_bool(0.5) {
        (sp_selected, sp_correct)
    } else {
        let s = rng.random_range(1..=m);
        (s, rng.random_range(0..=s))
    };
    let beta = rng.random_range(1.01..bounds.max_beta);
    TheoremInstance {
        mu_true,
        mu_noise,
        m,
        m_plus,
        sp_selected,
        sp_correct,
        dp_selected,
        dp_correct,
        beta,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub instances: usize,
    pub counterexamples: usize,
    pub equal_quality_instances: usize,
    /// Smallest `|E_SP - E_FT|` over instances with `gamma != m_plus / m`.
    pub min_sp_margin: f64,
    pub min_dp_margin: f64,
    pub lemma_checks: usize,
    pub lemma_max_relative_error: f64,
    /// Smallest analytic `f'(k)` observed; strictly positive if the lemma holds.
    pub lemma_min_derivative: f64,
}

impl SweepSummary {
    pub fn passed(&self, lemma_tolerance: f64) -> bool {
        self.counterexamples == 0
            && self.lemma_max_relative_error < lemma_tolerance
            && self.lemma_min_derivative > 0.0
    }
}

/// Check the theorem on `instances` random instances and the lemma's
/// derivative on as many random `(u, v, k)`.
pub fn sweep(instances: usize, bounds: &InstanceBounds, rng: &mut Rng) -> Result<SweepSummary> {
    let mut summary = SweepSummary {
        instances,
        counterexamples: 0,
        equal_quality_instances: 0,
        min_sp_margin: f64::INFINITY,
        min_dp_margin: f64::INFINITY,
        lemma_checks: 0,
        lemma_max_relative_error: 0.0,
        lemma_min_derivative: f64::INFINITY,
    };
    for _ in 0..instances {
        let inst = random_instance(bounds, rng);
        let check = verify_theorem(&inst)?;
        if !check.all_hold() {
            summary.counterexamples += 1;
        }
        if check.sp_beats_dp_when_equal.is_some() {
            summary.equal_quality_instances += 1;
        }
        if inst.sp_correct * inst.m != inst.m_plus * inst.sp_selected {
            summary.min_sp_margin = summary.min_sp_margin.min((check.e_sp - check.e_ft).abs());
        }
        if inst.dp_correct * inst.m != inst.m_plus * inst.dp_selected {
            summary.min_dp_margin = summary.min_dp_margin.min((check.e_dp - check.e_ft).abs());
        }

        let k = rng.random_range(0.01..0.99);
        let d = lemma_derivative_check(&inst.mu_true, &inst.mu_noise, k)?;
        summary.lemma_checks += 1;
        summary.lemma_max_relative_error = summary.lemma_max_relative_error.max(d.relative_error());
        summary.lemma_min_derivative = summary.lemma_min_derivative.min(d.analytic);
    }
    Ok(summary)
}
