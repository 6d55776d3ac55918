use opera_prune::embedding::EmbeddingTable;
mod common;

use common::{gradient_sweep, random_vec};
use opera_prune::encoder::{info_nce, info_nce_single, sgd_step, ContrastiveBatch, Triple};
use opera_prune::rng::Rng;
use rand::SeedableRng;

#[test]
fn analytic_gradients_match_central_differences() {
    let err = gradient_sweep(1000, 11);
    assert!(err < 1e-6, "relative error {err}");
}

#[test]
fn batch_gradients_sum_the_per_triple_terms() {
    let mut rng = Rng::seed_from_u64(3);
    let rows =
        |rng: &mut Rng, n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| random_vec(rng, 4)).collect() };
    let queries = EmbeddingTable::from_rows(4, &rows(&mut rng, 3)).unwrap();
    let docs = EmbeddingTable::from_rows(4, &rows(&mut rng, 6)).unwrap();
    let batch = ContrastiveBatch::new(vec![
        Triple::new(0, 1, 2),
        Triple::new(0, 3, 2),
        Triple::new(2, 4, 5),
    ]);
    let out = info_nce(&batch, &queries, &docs, 0.1).unwrap();

    let single = |q: usize, p: usize, n: usize| {
        let (qv, pv, nv) = (queries.row_f64(q), docs.row_f64(p), docs.row_f64(n));
        info_nce_single(&qv, &[&pv, &nv], 0.1).unwrap()
    };
    let (a, b, c) = (single(0, 1, 2), single(0, 3, 2), single(2, 4, 5));
    approx::assert_relative_eq!(
        out.loss,
        (a.loss + b.loss + c.loss) / 3.0,
        max_relative = 1e-12
    );
    let expect_q0: Vec<f64> = a
        .grad_query
        .iter()
        .zip(&b.grad_query)
        .map(|(x, y)| (x + y) / 3.0)
        .collect();
    for (x, y) in out.gradients.queries[&0].iter().zip(&expect_q0) {
        approx::assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-15);
    }
    let expect_d2: Vec<f64> = a.grad_candidates[1]
        .iter()
        .zip(&b.grad_candidates[1])
        .map(|(x, y)| (x + y) / 3.0)
        .collect();
    for (x, y) in out.gradients.docs[&2].iter().zip(&expect_d2) {
        approx::assert_relative_eq!(x, y, max_relative = 1e-12, epsilon = 1e-15);
    }
}

#[test]
fn small_steps_descend_the_batch_loss() {
    let mut rng = Rng::seed_from_u64(8);
    for _ in 0..50 {
        let rows = |rng: &mut Rng, n: usize| -> Vec<Vec<f64>> {
            (0..n).map(|_| random_vec(rng, 6)).collect()
        };
        let mut queries = EmbeddingTable::from_rows(6, &rows(&mut rng, 2)).unwrap();
        let mut docs = EmbeddingTable::from_rows(6, &rows(&mut rng, 4)).unwrap();
        let batch = ContrastiveBatch::new(vec![Triple::new(0, 0, 1), Triple::new(1, 2, 3)]);
        let before = info_nce(&batch, &queries, &docs, 0.5).unwrap();
        sgd_step(&mut queries, &mut docs, &before.gradients, 1e-3).unwrap();
        let after = info_nce(&batch, &queries, &docs, 0.5).unwrap();
        assert!(after.loss < before.loss);
    }
}
