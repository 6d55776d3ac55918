//! The toy trainable retriever: cosine similarity over embedding-table rows,
//! the InfoNCE contrastive loss with analytic gradients, and plain SGD.
//!
//! Gradients are taken with respect to the raw rows and pass through the
//! normalization `e = x / |x|`, so for a unit row they are the Euclidean
//! gradient projected onto the sphere's tangent space.

use std::collections::BTreeMap;

use crate::embedding::{self, EmbeddingTable};
use crate::error::{Error, Result};

pub fn cosine_sim(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    Ok(embedding::dot(a, b))
}

/// One training example: a query, one positive, and its negatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Triple {
    pub query: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    /// Multiplier on this example's loss (InfoBatch rescaling); 1 otherwise.
    pub weight: f64,
}

impl Triple {
    pub fn new(query: usize, positive: usize, negative: usize) -> Self {
        Triple {
            query,
            positive,
            negatives: vec![negative],
            weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ContrastiveBatch {
    pub triples: Vec<Triple>,
    pub in_batch_negatives: bool,
    /// Divisor of the summed weighted loss; the triple count when unset.
    pub nominal_size: Option<usize>,
}

impl ContrastiveBatch {
    pub fn new(triples: Vec<Triple>) -> Self {
        ContrastiveBatch {
            triples,
            in_batch_negatives: false,
            nominal_size: None,
        }
    }

    /// Average over `size` slots even if fewer triples survived sampling,
    /// so rescaled survivors stand in for the dropped ones.
    pub fn with_nominal_size(mut self, size: usize) -> Self {
        self.nominal_size = Some(size);
        self
    }

    /// Add every other triple's positive as an extra negative, skipping
    /// documents for which `is_positive(query, doc)` holds.
    pub fn with_in_batch_negatives(mut self, is_positive: impl Fn(usize, usize) -> bool) -> Self {
        let positives: Vec<usize> = self.triples.iter().map(|t| t.positive).collect();
        for (i, t) in self.triples.iter_mut().enumerate() {
            for (j, &d) in positives.iter().enumerate() {
                if i != j
                    && d != t.positive
                    && !t.negatives.contains(&d)
                    && !is_positive(t.query, d)
                {
                    t.negatives.push(d);
                }
            }
        }
        self.in_batch_negatives = true;
        self
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Loss and raw-row gradients for one query against its candidates.
#[derive(Debug, Clone)]
pub struct SingleLoss {
    pub loss: f64,
    /// Cosine between the query and each candidate; the positive is first.
    pub sims: Vec<f64>,
    pub grad_query: Vec<f64>,
    /// Gradients for each candidate, in input order.
    pub grad_candidates: Vec<Vec<f64>>,
}

/// InfoNCE for a single query. `candidates[0]` is the positive. Inputs are
/// raw rows; they are normalized internally.
pub fn info_nce_single(
    query: &[f64],
    candidates: &[&[f64]],
    temperature: f64,
) -> Result<SingleLoss> {
    if !(temperature > 0.0) {
        return Err(Error::config("temperature must be positive"));
    }
    if candidates.len() < 2 {
        return Err(Error::Empty(
            "InfoNCE needs a positive and at least one negative".into(),
        ));
    }
    let dim = query.len();
    for c in candidates {
        if c.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: c.len(),
            });
        }
    }

    let q_norm = embedding::norm(query);
    let eq = embedding::normalized(query)?;
    let mut norms = Vec::with_capacity(candidates.len());
    let mut units = Vec::with_capacity(candidates.len());
    for c in candidates {
        norms.push(embedding::norm(c));
        units.push(embedding::normalized(c)?);
    }
    let sims: Vec<f64> = units.iter().map(|u| embedding::dot(&eq, u)).collect();

    let logits: Vec<f64> = sims.iter().map(|s| s / temperature).collect();
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let denom: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + denom.ln();
    let loss = if logits[0] == max {
        logits[1..]
            .iter()
            .map(|l| (l - max).exp())
            .sum::<f64>()
            .ln_1p()
    } else {
        log_z - logits[0]
    };

    // dL/ds_j = (softmax_j - [j == 0]) / tau, with 1 - softmax_0 written as
    // the negatives' total mass.
    let mut coef: Vec<f64> = logits
        .iter()
        .map(|l| (l - log_z).exp() / temperature)
        .collect();
    coef[0] = -coef[1..].iter().sum::<f64>();

    let mut grad_eq = vec![0.0; dim];
    for (c, u) in coef.iter().zip(&units) {
        for (g, x) in grad_eq.iter_mut().zip(u) {
            *g += c * x;
        }
    }
    let grad_query = project(&eq, &grad_eq, q_norm);
    let grad_candidates = coef
        .iter()
        .zip(&units)
        .zip(&norms)
        .map(|((c, u), &n)| {
            let g: Vec<f64> = eq.iter().map(|x| c * x).collect();
            project(u, &g, n)
        })
        .collect();

    Ok(SingleLoss {
        loss,
        sims,
        grad_query,
        grad_candidates,
    })
}

// Chain rule through x -> x/|x|: (I - e e^T) g / |x|.
fn project(unit: &[f64], grad: &[f64], norm: f64) -> Vec<f64> {
    let along = embedding::dot(unit, grad);
    unit.iter()
        .zip(grad)
        .map(|(e, g)| (g - along * e) / norm)
        .collect()
}

/// Accumulated per-row gradients.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    pub queries: BTreeMap<usize, Vec<f64>>,
    pub docs: BTreeMap<usize, Vec<f64>>,
}

impl Gradients {
    fn accumulate(map: &mut BTreeMap<usize, Vec<f64>>, row: usize, grad: &[f64], scale: f64) {
        let entry = map.entry(row).or_insert_with(|| vec![0.0; grad.len()]);
        for (e, g) in entry.iter_mut().zip(grad) {
            *e += scale * g;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.queries
            .values()
            .chain(self.docs.values())
            .all(|g| g.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct TripleOutcome {
    /// Unweighted per-example loss.
    pub loss: f64,
    /// Cosine between query and positive before the update.
    pub positive_sim: f64,
}

#[derive(Debug, Clone)]
pub struct BatchLoss {
    /// Weighted mean loss over the batch.
    pub loss: f64,
    pub outcomes: Vec<TripleOutcome>,
    pub gradients: Gradients,
}

/// Mean InfoNCE loss over a batch, with gradients for every touched row.
pub fn info_nce(
    batch: &ContrastiveBatch,
    queries: &EmbeddingTable,
    docs: &EmbeddingTable,
    temperature: f64,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::Empty("contrastive batch".into()));
    }
    let scale = 1.0 / batch.nominal_size.unwrap_or(batch.len()).max(1) as f64;
    let mut gradients = Gradients::default();
    let mut outcomes = Vec::with_capacity(batch.len());
    let mut total = 0.0;
    for t in &batch.triples {
        if t.negatives.is_empty() {
            return Err(Error::Empty(format!("no negatives for query {}", t.query)));
        }
        if t.negatives.contains(&t.positive) {
            return Err(Error::Degenerate(format!(
                "positive {} of query {} listed as a negative",
                t.positive, t.query
            )));
        }
        let q = queries.row_f64(t.query);
        let mut rows = Vec::with_capacity(1 + t.negatives.len());
        rows.push(docs.row_f64(t.positive));
        for &n in &t.negatives {
            rows.push(docs.row_f64(n));
        }
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let single = info_nce_single(&q, &refs, temperature)?;
        let w = scale * t.weight;
        total += w * single.loss;
        Gradients::accumulate(&mut gradients.queries, t.query, &single.grad_query, w);
        let ids = std::iter::once(t.positive).chain(t.negatives.iter().copied());
        for (d, g) in ids.zip(&single.grad_candidates) {
            Gradients::accumulate(&mut gradients.docs, d, g, w);
        }
        outcomes.push(TripleOutcome {
            loss: single.loss,
            positive_sim: single.sims[0],
        });
    }
    Ok(BatchLoss {
        loss: total,
        outcomes,
        gradients,
    })
}

/// Move every touched row against its gradient and re-normalize.
///
/// Nothing is written if any gradient entry is non-finite.
pub fn sgd_step(
    queries: &mut EmbeddingTable,
    docs: &mut EmbeddingTable,
    gradients: &Gradients,
    learning_rate: f64,
) -> Result<()> {
    if !gradients.is_finite() {
        return Err(Error::NonFinite {
            what: "gradient".into(),
            step: 0,
        });
    }
    if learning_rate == 0.0 {
        return Ok(());
    }
    for (table, grads) in [(queries, &gradients.queries), (docs, &gradients.docs)] {
        for (&row, g) in grads {
            if g.iter().all(|&x| x == 0.0) {
                continue;
            }
            let updated: Vec<f64> = table
                .row(row)
                .iter()
                .zip(g)
                .map(|(&x, gi)| x as f64 - learning_rate * gi)
                .collect();
            table.set_row(row, &updated)?;
        }
    }
    Ok(())
}
