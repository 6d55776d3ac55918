//! Cosine-annealed sampling strengths and the virtual dataset size used by
//! dynamic pruning.

use std::f64::consts::PI;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Constants of the dynamic-pruning schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleParams {
    /// Query sampling strength at the first step.
    pub alpha_start: f64,
    /// Query sampling strength at `t_max`.
    pub alpha_end: f64,
    /// Fraction of queries treated as high quality at the first step.
    pub query_ratio_start: f64,
    pub beta_start: f64,
    pub beta_end: f64,
    /// Fraction of a query's positives treated as high quality at the first step.
    pub doc_ratio_start: f64,
    pub doc_ratio_end: f64,
    pub t_max: usize,
    /// Steps between query-score refreshes.
    pub update_interval: usize,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        ScheduleParams {
            alpha_start: 2.0,
            alpha_end: 5.0,
            query_ratio_start: 0.25,
            beta_start: 5.0,
            beta_end: 5.0,
            doc_ratio_start: 0.25,
            doc_ratio_end: 0.5,
            t_max: 1000,
            update_interval: 100,
        }
    }
}

impl ScheduleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m.to_string()));
        if !(self.alpha_start > 1.0 && self.alpha_end > 1.0) {
            return bad("query strengths must exceed 1");
        }
        if !(self.beta_start >= 1.0 && self.beta_end >= 1.0) {
            return bad("document strengths must be at least 1");
        }
        if !(self.query_ratio_start > 0.0 && self.query_ratio_start <= 1.0) {
            return bad("query_ratio_start must lie in (0, 1]");
        }
        for v in [self.doc_ratio_start, self.doc_ratio_end] {
            if !(0.0..=1.0).contains(&v) {
                return bad("document ratios must lie in [0, 1]");
            }
        }
        if self.t_max == 0 {
            return bad("t_max must be at least 1");
        }
        if self.update_interval == 0 {
            return bad("update_interval must be at least 1");
        }
        Ok(())
    }

    pub fn alpha(&self, t: usize) -> f64 {
        cosine_schedule(self.alpha_start, self.alpha_end, t, self.t_max)
    }

    pub fn beta(&self, t: usize) -> f64 {
        cosine_schedule(self.beta_start, self.beta_end, t, self.t_max)
    }

    pub fn doc_ratio(&self, t: usize) -> f64 {
        cosine_schedule(self.doc_ratio_start, self.doc_ratio_end, t, self.t_max)
    }
}

/// `end + (1 + cos(pi * t / t_max)) * (start - end) / 2`.
///
/// Steps past `t_max` are clamped to `t_max`.
pub fn cosine_schedule(start: f64, end: f64, t: usize, t_max: usize) -> f64 {
    let t = if t > t_max {
        warn!("schedule step {t} past t_max {t_max}; clamping");
        t_max
    } else {
        t
    };
    let progress = if t_max == 0 {
        1.0
    } else {
        t as f64 / t_max as f64
    };
    end + (1.0 + (PI * progress).cos()) * (start - end) / 2.0
}

/// `floor(n * (1 - r_s) / alpha_s + r_s * n)`.
pub fn virtual_size(n: usize, query_ratio_start: f64, alpha_start: f64) -> Result<usize> {
    if n == 0 {
        return Err(Error::Degenerate("virtual size of an empty dataset".into()));
    }
    let n_f = n as f64;
    let raw = n_f * (1.0 - query_ratio_start) / alpha_start + query_ratio_start * n_f;
    // guard the floor against representation error just under an integer
    let n0 = ((raw + 1e-9).floor() as usize).min(n);
    if n0 == 0 {
        return Err(Error::Degenerate(format!(
            "virtual dataset size is 0 for n = {n}, r_s = {query_ratio_start}, alpha_s = {alpha_start}"
        )));
    }
    Ok(n0)
}

/// Unclamped `(alpha * n0 - n) / ((alpha - 1) * n)`.
pub fn top_ratio_raw(alpha: f64, n0: f64, n: f64) -> f64 {
    (alpha * n0 - n) / ((alpha - 1.0) * n)
}

/// Fraction of queries sampled as high quality at strength `alpha`, clamped
/// into `[0, n0 / n]`.
pub fn top_ratio(alpha: f64, n0: usize, n: usize) -> f64 {
    let r = top_ratio_raw(alpha, n0 as f64, n as f64);
    r.clamp(0.0, n0 as f64 / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_schedule(2.0, 5.0, 0, 100), 2.0);
        assert_relative_eq!(cosine_schedule(2.0, 5.0, 100, 100), 5.0, epsilon = 1e-12);
        assert_relative_eq!(cosine_schedule(2.0, 5.0, 50, 100), 3.5, epsilon = 1e-12);
        assert_relative_eq!(cosine_schedule(2.0, 5.0, 500, 100), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn virtual_size_examples() {
        assert_eq!(virtual_size(100, 0.25, 2.0).unwrap(), 62);
        assert_eq!(virtual_size(100, 1.0, 3.7).unwrap(), 100);
        assert_eq!(virtual_size(1000, 0.25, 2.0).unwrap(), 625);
        assert!(virtual_size(0, 0.25, 2.0).is_err());
        assert!(virtual_size(1, 0.01, 100.0).is_err());
    }

    #[test]
    fn top_ratio_examples() {
        assert_relative_eq!(top_ratio(2.0, 62, 100), 0.24, epsilon = 1e-12);
        for a in [1.5, 2.0, 5.0, 40.0] {
            assert_relative_eq!(top_ratio(a, 100, 100), 1.0, epsilon = 1e-12);
        }
        // clamps
        assert_eq!(top_ratio(1.1, 10, 100), 0.0);
    }

    #[test]
    fn defaults_validate() {
        ScheduleParams::default().validate().unwrap();
        let mut p = ScheduleParams::default();
        p.alpha_start = 1.0;
        assert!(p.validate().is_err());
        let mut p = ScheduleParams::default();
        p.update_interval = 0;
        assert!(p.validate().is_err());
    }

    proptest! {
        #[test]
        fn top_ratio_recovers_start_ratio_without_floor(
            n in 1usize..100_000, rs in 0.01f64..=1.0, a in 1.01f64..20.0,
        ) {
            let n_f = n as f64;
            let n0 = n_f * (1.0 - rs) / a + rs * n_f;
            prop_assert!((top_ratio_raw(a, n0, n_f) - rs).abs() < 1e-9);
        }

        #[test]
        fn floored_top_ratio_within_one_item(
            n in 10usize..100_000, rs in 0.01f64..=1.0, a in 1.01f64..20.0,
        ) {
            if let Ok(n0) = virtual_size(n, rs, a) {
                prop_assert!(n0 <= n);
                let r = top_ratio(a, n0, n);
                // floor slack of at most one query, amplified by a / (a - 1)
                let slack = a / (a - 1.0) / n as f64;
                prop_assert!((r - rs).abs() <= slack + 1e-12, "r = {}, rs = {}", r, rs);
            }
        }

        #[test]
        fn schedule_is_monotone(start in 0.0f64..10.0, end in 0.0f64..10.0, t_max in 1usize..500) {
            let values: Vec<f64> = (0..=t_max).map(|t| cosine_schedule(start, end, t, t_max)).collect();
            for w in values.windows(2) {
                if start > end {
                    prop_assert!(w[1] <= w[0] + 1e-12);
                } else {
                    prop_assert!(w[1] >= w[0] - 1e-12);
                }
            }
        }
    }
}
