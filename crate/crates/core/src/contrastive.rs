//! NT-Xent contrastive objective and pretraining-step semantics.
//!
//! For `2N` projected embeddings where row `i`'s positive is `pairing[i]`,
//! the per-anchor term is
//!
//! ```text
//! ℓ_i = −log( exp(sim(z_i, z_p(i))/τ) / Σ_{k≠i} exp(sim(z_i, z_k)/τ) )
//! ```
//!
//! with cosine `sim`. The denominator holds the positive and all `2N − 2`
//! in-batch negatives. The reported loss is the mean over all `2N` anchors.

use serde::{Deserialize, Serialize};

use crate::augment::{make_view_pair, AugmentPolicy, Image};
use crate::autodiff::{Graph, Tensor, Var};
use crate::data::Record;
use crate::error::{Error, Result};
use crate::models::{Encoder, ProjectionHead};
use crate::optim::OptimizerState;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ContrastiveConfig {
    /// Temperature τ > 0.
    pub temperature: f64,
    /// Number of source records per step; each yields two views.
    pub batch_size: usize,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig { temperature: 0.1, batch_size: 32 }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("contrastive batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Output of [`nt_xent_loss`].
#[derive(Debug, Clone)]
pub struct NtXent {
    /// Scalar node: mean over anchors.
    pub loss: Var,
    pub per_anchor: Vec<f64>,
}

/// `[1, 0, 3, 2, ...]`: views `2k` and `2k + 1` form a pair.
pub fn interleaved_pairing(pairs: usize) -> Vec<usize> {
    (0..2 * pairs).map(|i| i ^ 1).collect()
}

/// Checks that `pairing` is a fixed-point-free involution on `0..n`.
pub fn validate_pairing(pairing: &[usize], n: usize) -> Result<()> {
    if pairing.len() != n || n % 2 != 0 || n == 0 {
        return Err(Error::invalid(format!("pairing of length {} for {n} rows", pairing.len())));
    }
    for (i, &p) in pairing.iter().enumerate() {
        if p >= n || p == i || pairing[p] != i {
            return Err(Error::invalid(format!("pairing is not a fixed-point-free involution at row {i}")));
        }
    }
    Ok(())
}

/// Tensorized NT-Xent over `z[2N, P]`, differentiable through the graph.
pub fn nt_xent_loss(graph: &mut Graph, z: Var, pairing: &[usize], temperature: f64) -> Result<NtXent> {
    if !(temperature > 0.0) {
        return Err(Error::invalid(format!("temperature must be > 0, got {temperature}")));
    }
    let shape = graph.value(z).shape().to_vec();
    if shape.len() != 2 {
        return Err(Error::shape("nt_xent", format!("expected [2N, P], got {shape:?}")));
    }
    let rows = shape[0];
    validate_pairing(pairing, rows)?;

    let zn = graph.l2_normalize(z)?;
    let znt = graph.transpose(zn)?;
    let sim = graph.matmul(zn, znt)?;
    let logits = graph.scale(sim, 1.0 / temperature)?;

    // Drop the diagonal: row i keeps columns k != i, in order.
    let k = rows - 1;
    let mut idx = Vec::with_capacity(rows * k);
    let mut targets = Tensor::zeros(&[rows, k]);
    for i in 0..rows {
        for j in (0..rows).filter(|&j| j != i) {
            if j == pairing[i] {
                targets.data_mut()[i * k + idx.len() % k] = 1.0;
            }
            idx.push(j);
        }
    }
    let off_diag = graph.gather(logits, idx, k)?;

    let per_anchor = {
        let v = graph.value(off_diag);
        (0..rows)
            .map(|i| {
                let row = v.row(i);
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
                let pos = row.iter().zip(targets.row(i)).find(|(_, t)| **t == 1.0).map(|(x, _)| *x).unwrap();
                lse - pos
            })
            .collect()
    };
    let loss = graph.softmax_cross_entropy(off_diag, targets)?;
    Ok(NtXent { loss, per_anchor })
}

/// Views for one contrastive step, interleaved so `views[2k]` and
/// `views[2k+1]` come from the same record.
#[derive(Debug, Clone)]
pub struct PairBatch {
    pub views: Vec<Image>,
    pub pairing: Vec<usize>,
}

/// Builds the two-view batch for `records`. Each record's augmentation
/// stream is keyed by `(seed, record id, step)`, so results do not depend
/// on how the work is scheduled.
pub fn build_pair_batch(records: &[&Record], policy: &AugmentPolicy, seed_key: u64, step: u64) -> Result<PairBatch> {
    if records.is_empty() {
        return Err(Error::Empty("contrastive batch has no records".into()));
    }
    let mut views = Vec::with_capacity(2 * records.len());
    for r in records {
        let mut rng = seed::rng_for(&[seed_key, r.id, step]);
        let (a, b) = make_view_pair(&r.views, policy, &mut rng)?;
        views.push(a);
        views.push(b);
    }
    Ok(PairBatch { views, pairing: interleaved_pairing(records.len()) })
}

/// One forward/backward/update over a pair batch. Returns the loss value
/// computed before the update.
pub fn pretrain_step(
    encoder: &mut Encoder,
    head: &mut ProjectionHead,
    batch: &PairBatch,
    cfg: &ContrastiveConfig,
    enc_opt: &mut OptimizerState,
    head_opt: &mut OptimizerState,
    lr: f64,
) -> Result<f64> {
    let mut g = Graph::new();
    let eb = encoder.params.bind(&mut g, true);
    let hb = head.params.bind(&mut g, true);
    let x = g.constant(crate::models::stack_images(&batch.views)?);
    let emb = encoder.forward(&mut g, &eb, x)?;
    let z = head.forward(&mut g, &hb, emb)?;
    let out = nt_xent_loss(&mut g, z, &batch.pairing, cfg.temperature)?;
    let loss = g.value(out.loss).item();
    let grads = g.backward(out.loss)?;
    let eg = eb.collect(&grads, &encoder.params);
    let hg = hb.collect(&grads, &head.params);
    enc_opt.step(&mut encoder.params, &eg, lr)?;
    head_opt.step(&mut head.params, &hg, lr)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::finite_difference_check;
    use crate::autodiff::cosine_similarity;
    use crate::seed::rng_for;
    use rand::seq::SliceRandom;
    use rand::Rng;

    /// Independent double-loop evaluation of the per-anchor terms.
    fn oracle(z: &[Vec<f64>], pairing: &[usize], tau: f64) -> (f64, Vec<f64>) {
        let n = z.len();
        let mut terms = Vec::with_capacity(n);
        for i in 0..n {
            let num = (cosine_similarity(&z[i], &z[pairing[i]]).unwrap() / tau).exp();
            let mut den = 0.0;
            for k in 0..n {
                if k != i {
                    den += (cosine_similarity(&z[i], &z[k]).unwrap() / tau).exp();
                }
            }
            terms.push(-(num / den).ln());
        }
        (terms.iter().sum::<f64>() / n as f64, terms)
    }

    fn loss_of(rows: &[Vec<f64>], pairing: &[usize], tau: f64) -> (f64, Vec<f64>) {
        let p = rows[0].len();
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(vec![rows.len(), p], rows.concat()).unwrap());
        let out = nt_xent_loss(&mut g, z, pairing, tau).unwrap();
        (g.value(out.loss).item(), out.per_anchor)
    }

    fn random_rows(rng: &mut impl Rng, n: usize, p: usize) -> Vec<Vec<f64>> {
        (0..n).map(|_| (0..p).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn single_pair_has_zero_loss() {
        let (l, _) = loss_of(&[vec![1.0, 2.0], vec![-0.5, 3.0]], &[1, 0], 0.1);
        assert_eq!(l, 0.0);
    }

    #[test]
    fn orthogonal_pairs() {
        let rows = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0], vec![0.0, 1.0]];
        let (l, terms) = loss_of(&rows, &interleaved_pairing(2), 1.0);
        let expect = (1.0 + 2.0 / std::f64::consts::E).ln();
        assert!((l - expect).abs() < 1e-12);
        assert!((l - 0.55144).abs() < 1e-5);
        assert!(terms.iter().all(|t| (t - expect).abs() < 1e-12));
    }

    #[test]
    fn identical_rows_give_ln_2n_minus_1() {
        for tau in [0.1, 0.5, 2.0] {
            let rows = vec![vec![0.3, -0.2, 0.9]; 4];
            let (l, _) = loss_of(&rows, &interleaved_pairing(2), tau);
            assert!((l - 3f64.ln()).abs() < 1e-9, "tau {tau}: {l}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut g = Graph::new();
        let z = g.constant(Tensor::new(vec![2, 2], vec![0.0, 0.0, 1.0, 0.0]).unwrap());
        assert!(matches!(nt_xent_loss(&mut g, z, &[1, 0], 0.1), Err(Error::DegenerateEmbedding(_))));
        let z = g.constant(Tensor::ones(&[2, 2]));
        assert!(nt_xent_loss(&mut g, z, &[1, 0], 0.0).is_err());
        assert!(nt_xent_loss(&mut g, z, &[0, 1], 0.1).is_err());
    }

    #[test]
    fn matches_double_loop_oracle() {
        let mut rng = rng_for(&[100]);
        for trial in 0..100 {
            let n = rng.gen_range(1..=8);
            let tau = [0.1, 0.2, 1.0][trial % 3];
            let rows = random_rows(&mut rng, 2 * n, 5);
            let pairing = interleaved_pairing(n);
            let (got, terms) = loss_of(&rows, &pairing, tau);
            let (want, want_terms) = oracle(&rows, &pairing, tau);
            assert!((got - want).abs() < 1e-9, "trial {trial}: {got} vs {want}");
            for (a, b) in terms.iter().zip(&want_terms) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn pair_permutation_leaves_mean_unchanged() {
        let mut rng = rng_for(&[101]);
        let rows = random_rows(&mut rng, 10, 4);
        let (base, _) = loss_of(&rows, &interleaved_pairing(5), 0.2);
        let mut order: Vec<usize> = (0..5).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = order.iter().flat_map(|&k| [rows[2 * k].clone(), rows[2 * k + 1].clone()]).collect();
        let (l, _) = loss_of(&permuted, &interleaved_pairing(5), 0.2);
        assert!((l - base).abs() < 1e-12);
    }

    #[test]
    fn closer_negative_never_lowers_anchor_term() {
        let mut rng = rng_for(&[102]);
        for _ in 0..50 {
            let mut rows = random_rows(&mut rng, 6, 3);
            let pairing = interleaved_pairing(3);
            let (_, before) = loss_of(&rows, &pairing, 0.5);
            // Move negative row 3 toward anchor 0.
            let t = rng.gen_range(0.1..0.9);
            let moved: Vec<f64> = rows[3].iter().zip(&rows[0]).map(|(n, a)| (1.0 - t) * n + t * a).collect();
            let s_old = cosine_similarity(&rows[0], &rows[3]).unwrap();
            let s_new = cosine_similarity(&rows[0], &moved).unwrap();
            if s_new <= s_old {
                continue;
            }
            rows[3] = moved;
            let (_, after) = loss_of(&rows, &pairing, 0.5);
            assert!(after[0] >= before[0] - 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rng_for(&[103]);
        for trial in 0..5 {
            let n = 2 + trial % 3;
            let z = Tensor::from_fn(&[2 * n, 4], |_| rng.gen_range(-1.0..1.0));
            let pairing = interleaved_pairing(n);
            let err = finite_difference_check(
                |g, x| Ok(nt_xent_loss(g, x, &pairing, 0.2)?.loss),
                &z,
                1e-5,
            );
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn pairing_is_fixed_point_free_involution() {
        let p = interleaved_pairing(3);
        assert_eq!(p, vec![1, 0, 3, 2, 5, 4]);
        validate_pairing(&p, 6).unwrap();
    }
}
