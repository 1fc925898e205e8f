//! Similarity and training losses: cosine, BCE on a temperature-scaled logit,
//! InfoNCE over pooled negatives, and the nested-prefix (Matryoshka) loss that
//! averages InfoNCE over leading slices of the embedding.
//!
//! Every loss exists twice: a plain value-level function here, and a tape
//! builder in [`graph`] used by the trainer. Tests hold the two routes
//! against each other.

use crate::matrix::{dot, norm};
use crate::tape::{softplus, Tape, TapeError, Var};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("embedding norm {0:.3e} below {NORM_FLOOR:e}; cosine undefined")]
    NormTooSmall(f64),
    #[error("embedding dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("at least one negative is required")]
    NoNegatives,
    #[error("prefix {prefix} exceeds embedding dimension {dim}")]
    PrefixTooLong { prefix: usize, dim: usize },
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
}

impl From<TapeError> for LossError {
    fn from(e: TapeError) -> Self {
        match e {
            TapeError::NormTooSmall(n) => LossError::NormTooSmall(n),
            TapeError::ShapeMismatch { .. } => LossError::DimMismatch(0, 0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    #[default]
    Infonce,
    InfonceMrl,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossConfig {
    pub loss_kind: LossKind,
    /// Softmax temperature for InfoNCE / logit scale for BCE.
    pub temperature: f64,
    /// Strictly increasing prefix sizes; the last one is the full dimension.
    pub mrl_dims: Vec<usize>,
    /// One positive weight per prefix; defaults to uniform 1/K.
    pub mrl_weights: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            loss_kind: LossKind::Infonce,
            temperature: 0.05,
            mrl_dims: vec![8, 16, 32, 64],
            mrl_weights: vec![0.25; 4],
        }
    }
}

impl LossConfig {
    pub fn bce(temperature: f64) -> Self {
        LossConfig {
            loss_kind: LossKind::Bce,
            temperature,
            ..LossConfig::default()
        }
    }

    pub fn infonce(temperature: f64) -> Self {
        LossConfig {
            loss_kind: LossKind::Infonce,
            temperature,
            ..LossConfig::default()
        }
    }

    pub fn infonce_mrl(temperature: f64, dims: Vec<usize>) -> Self {
        let k = dims.len();
        LossConfig {
            loss_kind: LossKind::InfonceMrl,
            temperature,
            mrl_dims: dims,
            mrl_weights: vec![1.0 / k as f64; k],
        }
    }

    pub fn validate(&self, embedding_dim: usize) -> Result<(), LossError> {
        if self.temperature <= 0.0 {
            return Err(LossError::InvalidConfig("temperature must be > 0".into()));
        }
        if self.loss_kind == LossKind::InfonceMrl {
            if self.mrl_dims.is_empty() {
                return Err(LossError::InvalidConfig("mrl_dims is empty".into()));
            }
            if !self.mrl_dims.windows(2).all(|w| w[0] < w[1]) {
                return Err(LossError::InvalidConfig(
                    "mrl_dims must be strictly increasing".into(),
                ));
            }
            let max = *self.mrl_dims.last().unwrap();
            if max > embedding_dim {
                return Err(LossError::PrefixTooLong {
                    prefix: max,
                    dim: embedding_dim,
                });
            }
            if self.mrl_weights.len() != self.mrl_dims.len() {
                return Err(LossError::InvalidConfig(
                    "mrl_weights length must match mrl_dims".into(),
                ));
            }
            if self.mrl_weights.iter().any(|&w| w <= 0.0) {
                return Err(LossError::InvalidConfig(
                    "mrl_weights must be positive".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Cosine similarity with a numerical guard on both norms.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, LossError> {
    if a.len() != b.len() {
        return Err(LossError::DimMismatch(a.len(), b.len()));
    }
    let (na, nb) = (norm(a), norm(b));
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return Err(LossError::NormTooSmall(na.min(nb)));
    }
    Ok(dot(a, b) / (na * nb))
}

/// Stabilized binary cross-entropy on logit s/tau against label y ∈ {0, 1}.
pub fn bce_loss(s: f64, y: u8, tau: f64) -> f64 {
    debug_assert!(y <= 1);
    let z = s / tau;
    softplus(z) - f64::from(y) * z
}

/// Stabilized InfoNCE: -log softmax weight of the positive similarity.
pub fn infonce_loss(s_pos: f64, s_negs: &[f64], tau: f64) -> Result<f64, LossError> {
    if s_negs.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let zp = s_pos / tau;
    let max = s_negs
        .iter()
        .map(|s| s / tau)
        .fold(zp, f64::max);
    let sum: f64 = (zp - max).exp()
        + s_negs.iter().map(|s| (s / tau - max).exp()).sum::<f64>();
    Ok(max + sum.ln() - zp)
}

/// Matryoshka loss: Σ λ_k · InfoNCE over cosines of the first-k slices, each
/// prefix normalized by its own norms.
pub fn mrl_loss(
    e_m: &[f64],
    e_pos: &[f64],
    e_negs: &[Vec<f64>],
    config: &LossConfig,
) -> Result<f64, LossError> {
    config.validate(e_m.len())?;
    if e_negs.is_empty() {
        return Err(LossError::NoNegatives);
    }
    let mut total = 0.0;
    for (&k, &w) in config.mrl_dims.iter().zip(&config.mrl_weights) {
        if k > e_m.len() || k > e_pos.len() {
            return Err(LossError::PrefixTooLong {
                prefix: k,
                dim: e_m.len().min(e_pos.len()),
            });
        }
        let s_pos = cosine(&e_m[..k], &e_pos[..k])?;
        let s_negs: Vec<f64> = e_negs
            .iter()
            .map(|n| cosine(&e_m[..k], &n[..k]))
            .collect::<Result<_, _>>()?;
        total += w * infonce_loss(s_pos, &s_negs, config.temperature)?;
    }
    Ok(total)
}

/// Tape builders mirroring the value-level losses, used during training.
pub mod graph {
    use super::*;

    /// Per-example loss over already-encoded embeddings living on `tape`.
    /// `member`, `positive` and each negative are 1×d nodes.
    pub fn example_loss(
        tape: &mut Tape,
        config: &LossConfig,
        member: Var,
        positive: Var,
        negatives: &[Var],
    ) -> Result<Var, LossError> {
        match config.loss_kind {
            LossKind::Bce => {
                // Positive pair labelled 1, each negative pair labelled 0,
                // averaged over all pairs.
                let mut terms = Vec::with_capacity(1 + negatives.len());
                let sp = tape.cosine(member, positive)?;
                terms.push(tape.bce_with_logit(sp, 1.0, config.temperature));
                for &n in negatives {
                    let sn = tape.cosine(member, n)?;
                    terms.push(tape.bce_with_logit(sn, 0.0, config.temperature));
                }
                let w = 1.0 / terms.len() as f64;
                let weighted: Vec<(Var, f64)> = terms.into_iter().map(|t| (t, w)).collect();
                Ok(tape.affine_combination(&weighted))
            }
            LossKind::Infonce => {
                if negatives.is_empty() {
                    return Err(LossError::NoNegatives);
                }
                let sp = tape.cosine(member, positive)?;
                let sns: Vec<Var> = negatives
                    .iter()
                    .map(|&n| tape.cosine(member, n))
                    .collect::<Result<_, _>>()?;
                Ok(tape.infonce(sp, &sns, config.temperature))
            }
            LossKind::InfonceMrl => {
                if negatives.is_empty() {
                    return Err(LossError::NoNegatives);
                }
                let dim = tape.value(member).cols;
                config.validate(dim)?;
                let mut terms = Vec::with_capacity(config.mrl_dims.len());
                for (&k, &w) in config.mrl_dims.iter().zip(&config.mrl_weights) {
                    let m_k = tape.slice_cols(member, 0, k);
                    let p_k = tape.slice_cols(positive, 0, k);
                    let sp = tape.cosine(m_k, p_k)?;
                    let sns: Vec<Var> = negatives
                        .iter()
                        .map(|&n| {
                            let n_k = tape.slice_cols(n, 0, k);
                            tape.cosine(m_k, n_k)
                        })
                        .collect::<Result<_, _>>()?;
                    let l_k = tape.infonce(sp, &sns, config.temperature);
                    terms.push((l_k, w));
                }
                Ok(tape.affine_combination(&terms))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    const LN_2: f64 = std::f64::consts::LN_2;

    #[test]
    fn cosine_basics() {
        let v = vec![0.3, -0.4, 0.5];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-12);
        assert!((cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap()).abs() < 1e-12);
        // hand arithmetic: 1/√2
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - 0.70710678).abs() < 1e-4);
        assert!(matches!(
            cosine(&[0.0, 0.0], &[1.0, 0.0]),
            Err(LossError::NormTooSmall(_))
        ));
    }

    #[test]
    fn cosine_scale_invariant() {
        let a = vec![0.2, -0.7, 1.1];
        let b = vec![-0.5, 0.4, 0.9];
        let base = cosine(&a, &b).unwrap();
        for &(alpha, beta) in &[(2.0, 3.0), (0.01, 5.0), (123.0, 0.25)] {
            let sa: Vec<f64> = a.iter().map(|x| x * alpha).collect();
            let sb: Vec<f64> = b.iter().map(|x| x * beta).collect();
            assert!((cosine(&sa, &sb).unwrap() - base).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_loss_known_values() {
        assert!((bce_loss(0.0, 1, 1.0) - LN_2).abs() < 1e-12);
        assert!((bce_loss(0.0, 0, 1.0) - LN_2).abs() < 1e-12);
        // softplus(-5) by hand
        let expect = (1.0 + (-5.0f64).exp()).ln();
        assert!((bce_loss(0.5, 1, 0.1) - expect).abs() < 1e-12);
        assert!((expect - 0.006715).abs() < 1e-6);
    }

    #[test]
    fn infonce_known_values() {
        // Equal similarities: uniform softmax over N+1 entries.
        assert!((infonce_loss(0.4, &[0.4], 0.3).unwrap() - LN_2).abs() < 1e-12);
        for n in 1..=8 {
            let negs = vec![0.1; n];
            let l = infonce_loss(0.1, &negs, 0.05).unwrap();
            assert!((l - ((n + 1) as f64).ln()).abs() < 1e-10, "n = {n}");
        }
        // hand softmax: ln(1 + e^{-1})
        let l = infonce_loss(1.0, &[0.0], 1.0).unwrap();
        assert!((l - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((l - 0.3133).abs() < 1e-4);
        assert!(matches!(
            infonce_loss(1.0, &[], 1.0),
            Err(LossError::NoNegatives)
        ));
    }

    #[test]
    fn mrl_reduces_to_infonce_on_full_dim() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let d = 6;
        let gen = |rng: &mut ChaCha20Rng| -> Vec<f64> {
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        let m = gen(&mut rng);
        let p = gen(&mut rng);
        let negs: Vec<Vec<f64>> = (0..4).map(|_| gen(&mut rng)).collect();
        let cfg = LossConfig {
            loss_kind: LossKind::InfonceMrl,
            temperature: 0.1,
            mrl_dims: vec![d],
            mrl_weights: vec![1.0],
        };
        let direct = {
            let sp = cosine(&m, &p).unwrap();
            let sn: Vec<f64> = negs.iter().map(|n| cosine(&m, n).unwrap()).collect();
            infonce_loss(sp, &sn, 0.1).unwrap()
        };
        let nested = mrl_loss(&m, &p, &negs, &cfg).unwrap();
        assert!((nested - direct).abs() < 1e-14);
    }

    #[test]
    fn mrl_equal_terms_when_tail_dims_zero() {
        // Entries beyond the first prefix are zero, so every prefix sees the
        // same vectors and all K terms are equal.
        let m = vec![0.7, 0.0, 0.0, 0.0];
        let p = vec![-0.4, 0.0, 0.0, 0.0];
        let negs = vec![vec![0.9, 0.0, 0.0, 0.0]];
        let cfg = LossConfig {
            loss_kind: LossKind::InfonceMrl,
            temperature: 0.2,
            mrl_dims: vec![1, 2, 4],
            mrl_weights: vec![0.5, 0.25, 0.25],
        };
        let sp = cosine(&m[..1], &p[..1]).unwrap();
        let sn = cosine(&m[..1], &negs[0][..1]).unwrap();
        let term = infonce_loss(sp, &[sn], 0.2).unwrap();
        let total = mrl_loss(&m, &p, &negs, &cfg).unwrap();
        assert!((total - term).abs() < 1e-12); // weights sum to 1
    }

    #[test]
    fn mrl_matches_independent_two_pass_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let d = 4;
        let gen = |rng: &mut ChaCha20Rng| -> Vec<f64> {
            (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
        };
        for _ in 0..20 {
            let m = gen(&mut rng);
            let p = gen(&mut rng);
            let negs: Vec<Vec<f64>> = (0..3).map(|_| gen(&mut rng)).collect();
            let cfg = LossConfig {
                loss_kind: LossKind::InfonceMrl,
                temperature: 0.15,
                mrl_dims: vec![2, 4],
                mrl_weights: vec![0.5, 0.5],
            };
            // Independent second pass: recompute each prefix loss separately
            // with fresh slices and plain arithmetic.
            let mut expect = 0.0;
            for (&k, &w) in cfg.mrl_dims.iter().zip(&cfg.mrl_weights) {
                let mp: Vec<f64> = m[..k].to_vec();
                let pp: Vec<f64> = p[..k].to_vec();
                let sp = dot(&mp, &pp) / (norm(&mp) * norm(&pp));
                let sns: Vec<f64> = negs
                    .iter()
                    .map(|n| dot(&mp, &n[..k]) / (norm(&mp) * norm(&n[..k])))
                    .collect();
                let zp = sp / cfg.temperature;
                let denom: f64 = (zp).exp()
                    + sns
                        .iter()
                        .map(|s| (s / cfg.temperature).exp())
                        .sum::<f64>();
                expect += w * (-((zp).exp() / denom).ln());
            }
            let got = mrl_loss(&m, &p, &negs, &cfg).unwrap();
            assert!((got - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn prefix_longer_than_embedding_errors() {
        let cfg = LossConfig {
            loss_kind: LossKind::InfonceMrl,
            temperature: 0.1,
            mrl_dims: vec![2, 8],
            mrl_weights: vec![0.5, 0.5],
        };
        let v = vec![0.5; 4];
        assert!(matches!(
            mrl_loss(&v, &v, &[v.clone()], &cfg),
            Err(LossError::PrefixTooLong { .. })
        ));
    }

    #[test]
    fn infonce_monotone_in_similarities() {
        // Analytic gradient signs: decreasing in s_pos, increasing in s_neg.
        let tau = 0.07;
        let eps = 1e-6;
        let base = infonce_loss(0.3, &[0.1, -0.2], tau).unwrap();
        let up_pos = infonce_loss(0.3 + eps, &[0.1, -0.2], tau).unwrap();
        assert!(up_pos < base);
        let up_neg = infonce_loss(0.3, &[0.1 + eps, -0.2], tau).unwrap();
        assert!(up_neg > base);
        let up_neg2 = infonce_loss(0.3, &[0.1, -0.2 + eps], tau).unwrap();
        assert!(up_neg2 > base);
    }

    #[test]
    fn infonce_vanishes_as_gap_grows() {
        let l = infonce_loss(1.0, &[-1.0], 0.01).unwrap();
        assert!(l >= 0.0 && l < 1e-9);
    }

    #[test]
    fn graph_losses_match_value_functions() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let d = 8;
        for kind in [LossKind::Bce, LossKind::Infonce, LossKind::InfonceMrl] {
            let cfg = LossConfig {
                loss_kind: kind,
                temperature: 0.3,
                mrl_dims: vec![2, 4, 8],
                mrl_weights: vec![1.0 / 3.0; 3],
            };
            let gen = |rng: &mut ChaCha20Rng| -> Vec<f64> {
                (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()
            };
            let m = gen(&mut rng);
            let p = gen(&mut rng);
            let negs: Vec<Vec<f64>> = (0..3).map(|_| gen(&mut rng)).collect();

            let mut tape = Tape::new();
            let mv = tape.leaf(Matrix::row_vector(m.clone()));
            let pv = tape.leaf(Matrix::row_vector(p.clone()));
            let nvs: Vec<Var> = negs
                .iter()
                .map(|n| tape.leaf(Matrix::row_vector(n.clone())))
                .collect();
            let loss = graph::example_loss(&mut tape, &cfg, mv, pv, &nvs).unwrap();
            let tape_val = tape.scalar(loss);

            let value_val = match kind {
                LossKind::Bce => {
                    let mut acc = bce_loss(cosine(&m, &p).unwrap(), 1, cfg.temperature);
                    for n in &negs {
                        acc += bce_loss(cosine(&m, n).unwrap(), 0, cfg.temperature);
                    }
                    acc / (1 + negs.len()) as f64
                }
                LossKind::Infonce => {
                    let sp = cosine(&m, &p).unwrap();
                    let sn: Vec<f64> = negs.iter().map(|n| cosine(&m, n).unwrap()).collect();
                    infonce_loss(sp, &sn, cfg.temperature).unwrap()
                }
                LossKind::InfonceMrl => mrl_loss(&m, &p, &negs, &cfg).unwrap(),
            };
            assert!(
                (tape_val - value_val).abs() < 1e-12,
                "{kind:?}: {tape_val} vs {value_val}"
            );
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn stabilized_bce_matches_naive_where_safe(s in -20.0f64..20.0, y in 0u8..2, tau in 0.05f64..2.0) {
            let z: f64 = s / tau;
            let sigma = 1.0 / (1.0 + (-z).exp());
            // Naive form only evaluated where it cannot hit log(0).
            if sigma > 1e-12 && sigma < 1.0 - 1e-12 {
                let naive = -(f64::from(y) * sigma.ln() + (1.0 - f64::from(y)) * (1.0 - sigma).ln());
                let stable = bce_loss(s, y, tau);
                prop_assert!((naive - stable).abs() < 1e-10);
            }
        }

        #[test]
        fn stabilized_infonce_matches_naive_where_safe(
            sp in -1.0f64..1.0,
            negs in proptest::collection::vec(-1.0f64..1.0, 1..6),
            tau in 0.05f64..2.0,
        ) {
            let naive = {
                let num = (sp / tau).exp();
                let den: f64 = num + negs.iter().map(|s| (s / tau).exp()).sum::<f64>();
                -(num / den).ln()
            };
            if naive.is_finite() {
                let stable = infonce_loss(sp, &negs, tau).unwrap();
                prop_assert!((naive - stable).abs() < 1e-10);
            }
        }

        #[test]
        fn losses_are_nonnegative(
            sp in -1.0f64..1.0,
            negs in proptest::collection::vec(-1.0f64..1.0, 1..6),
            tau in 0.02f64..2.0,
        ) {
            prop_assert!(infonce_loss(sp, &negs, tau).unwrap() >= 0.0);
            prop_assert!(bce_loss(sp, 1, tau) >= 0.0);
            prop_assert!(bce_loss(sp, 0, tau) >= 0.0);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        // d loss / d embeddings via the tape vs central differences.
        let mut rng = ChaCha20Rng::seed_from_u64(33);
        let d = 6;
        for kind in [LossKind::Bce, LossKind::Infonce, LossKind::InfonceMrl] {
            let cfg = LossConfig {
                loss_kind: kind,
                temperature: 0.25,
                mrl_dims: vec![3, 6],
                mrl_weights: vec![0.5, 0.5],
            };
            let m: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();

            let eval = |m: &[f64], p: &[f64], n: &[f64]| -> f64 {
                let mut t = Tape::new();
                let mv = t.leaf(Matrix::row_vector(m.to_vec()));
                let pv = t.leaf(Matrix::row_vector(p.to_vec()));
                let nv = t.leaf(Matrix::row_vector(n.to_vec()));
                let l = graph::example_loss(&mut t, &cfg, mv, pv, &[nv]).unwrap();
                t.scalar(l)
            };

            let mut t = Tape::new();
            let mv = t.leaf(Matrix::row_vector(m.clone()));
            let pv = t.leaf(Matrix::row_vector(p.clone()));
            let nv = t.leaf(Matrix::row_vector(n.clone()));
            let l = graph::example_loss(&mut t, &cfg, mv, pv, &[nv]).unwrap();
            let grads = t.backward(l);

            let eps = 1e-5;
            for (which, var) in [(0, mv), (1, pv), (2, nv)] {
                let g = grads.wrt(var).unwrap();
                for j in 0..d {
                    let mut lo = [m.clone(), p.clone(), n.clone()];
                    let mut hi = lo.clone();
                    lo[which][j] -= eps;
                    hi[which][j] += eps;
                    let fd = (eval(&hi[0], &hi[1], &hi[2]) - eval(&lo[0], &lo[1], &lo[2]))
                        / (2.0 * eps);
                    let an = g.data[j];
                    let denom = an.abs().max(fd.abs()).max(1e-4);
                    assert!(
                        (an - fd).abs() / denom < 1e-3,
                        "{kind:?} input {which} dim {j}: {an} vs {fd}"
                    );
                }
            }
        }
    }
}
