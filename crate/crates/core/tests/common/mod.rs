//! Oracles shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use opera_prune::encoder::info_nce_single;
use opera_prune::pruning_dynamic::BatchSampler;
use opera_prune::rng::Rng;
use rand::{Rng as _, SeedableRng};
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// A random direction with norm in [0.5, 2]; rows live near the unit sphere.
pub fn random_vec(rng: &mut Rng, dim: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-3);
    let target = rng.random_range(0.5..2.0);
    raw.iter().map(|x| x * target / norm).collect()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

/// InfoNCE written as `ln(1 + sum_j exp((s_j - s_0) / tau))`, which keeps
/// full relative precision when the softmax saturates.
pub fn loss_of(query: &[f64], cands: &[Vec<f64>], tau: f64) -> f64 {
    let s0 = cosine(query, &cands[0]);
    let tail: f64 = cands[1..]
        .iter()
        .map(|c| ((cosine(query, c) - s0) / tau).exp())
        .sum();
    tail.ln_1p()
}

/// Largest entrywise gap between the analytic gradient and central
/// differences, relative to the gradient's largest entry. Also asserts the
/// library loss matches [`loss_of`].
pub fn worst_relative_error(query: &[f64], cands: &[Vec<f64>], tau: f64) -> f64 {
    let refs: Vec<&[f64]> = cands.iter().map(|c| c.as_slice()).collect();
    let out = info_nce_single(query, &refs, tau).unwrap();
    approx::assert_relative_eq!(
        out.loss,
        loss_of(query, cands, tau),
        max_relative = 1e-12,
        epsilon = 1e-300
    );
    let h = 1e-6;
    let mut max_gap: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for i in 0..query.len() {
        let (mut up, mut down) = (query.to_vec(), query.to_vec());
        up[i] += h;
        down[i] -= h;
        let numeric = (loss_of(&up, cands, tau) - loss_of(&down, cands, tau)) / (2.0 * h);
        max_gap = max_gap.max((numeric - out.grad_query[i]).abs());
        scale = scale.max(out.grad_query[i].abs());
    }
    for (c, grad) in out.grad_candidates.iter().enumerate() {
        for i in 0..query.len() {
            let (mut up, mut down) = (cands.to_vec(), cands.to_vec());
            up[c][i] += h;
            down[c][i] -= h;
            let numeric = (loss_of(query, &up, tau) - loss_of(query, &down, tau)) / (2.0 * h);
            max_gap = max_gap.max((numeric - grad[i]).abs());
            scale = scale.max(grad[i].abs());
        }
    }
    max_gap / scale.max(1e-12)
}

/// Worst gradient error over `instances` random small problems.
pub fn gradient_sweep(instances: usize, seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let dim = rng.random_range(2..8);
        let n = rng.random_range(2..6);
        let tau = rng.random_range(0.02..1.0);
        let q = random_vec(&mut rng, dim);
        let cands: Vec<Vec<f64>> = (0..n).map(|_| random_vec(&mut rng, dim)).collect();
        worst = worst.max(worst_relative_error(&q, &cands, tau));
    }
    worst
}

/// Position of `doc` when every document is placed by counting the ones
/// that beat it: higher score, or equal score and lower index.
pub fn brute_rank(scores: &[f64]) -> Vec<usize> {
    let mut ranking = vec![usize::MAX; scores.len()];
    for d in 0..scores.len() {
        let beaten_by = (0..scores.len())
            .filter(|&o| scores[o] > scores[d] || (scores[o] == scores[d] && o < d))
            .count();
        ranking[beaten_by] = d;
    }
    ranking
}

/// NDCG, Recall, Success and MRR at `k` straight from their definitions.
pub fn brute_metrics(ranking: &[usize], relevant: &[usize], k: usize) -> [f64; 4] {
    let is_rel = |d: usize| relevant.iter().any(|&r| r == d);
    let mut dcg = 0.0;
    let mut hits = 0usize;
    let mut first = None;
    for (i, &d) in ranking.iter().enumerate().take(k) {
        if is_rel(d) {
            dcg += 1.0 / ((i + 2) as f64).log2();
            hits += 1;
            first.get_or_insert(i + 1);
        }
    }
    let mut ideal = 0.0;
    for i in 0..relevant.len().min(k) {
        ideal += 1.0 / ((i + 2) as f64).log2();
    }
    let ndcg = if relevant.is_empty() {
        0.0
    } else {
        dcg / ideal
    };
    let recall = if relevant.is_empty() {
        0.0
    } else {
        hits as f64 / relevant.len() as f64
    };
    let success = if hits > 0 { 1.0 } else { 0.0 };
    let mrr = first.map_or(0.0, |r| 1.0 / r as f64);
    [ndcg, recall, success, mrr]
}

/// Pair counts over `draws` draws taken `batch` at a time.
pub fn pair_counts(
    sampler: &mut dyn BatchSampler,
    pairs: usize,
    step: usize,
    draws: usize,
    batch: usize,
    seed: u64,
) -> Vec<u64> {
    let mut rng = Rng::seed_from_u64(seed);
    let mut counts = vec![0u64; pairs];
    for _ in 0..draws / batch {
        for d in sampler.sample(step, batch, &mut rng).unwrap() {
            counts[d.pair] += 1;
        }
    }
    counts
}

/// Upper tail probability of Pearson's statistic.
pub fn chi_square_p(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut stat = 0.0;
    let mut cells = 0;
    for (&c, &p) in counts.iter().zip(probs) {
        if p == 0.0 {
            assert_eq!(c, 0, "drew a zero-probability cell");
            continue;
        }
        let e = p * n as f64;
        stat += (c as f64 - e).powi(2) / e;
        cells += 1;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}
