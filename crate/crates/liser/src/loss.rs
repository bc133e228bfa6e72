//! Loss terms for joint supervised and distillation training, as plain
//! functions over probability vectors and logits. The training loop builds
//! the same expressions on the autodiff tape; these serve evaluation,
//! reporting, and as the reference the tape composition is tested against.

use crate::tensor::logsumexp_row;
use std::error::Error;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum LossError {
    /// Two vectors that must align have different lengths.
    LengthMismatch { what: &'static str, left: usize, right: usize },
    LabelOutOfRange { label: usize, classes: usize },
    /// A probability vector failed validation.
    BadDistribution { detail: String },
    BadWeights { detail: String },
    EmptyBatch,
}

impl fmt::Display for LossError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LossError::LengthMismatch { what, left, right } => {
                write!(f, "length mismatch in {what}: {left} vs {right}")
            }
            LossError::LabelOutOfRange { label, classes } => {
                write!(f, "label {label} out of range for {classes} classes")
            }
            LossError::BadDistribution { detail } => write!(f, "bad distribution: {detail}"),
            LossError::BadWeights { detail } => write!(f, "bad loss weights: {detail}"),
            LossError::EmptyBatch => write!(f, "batch loss needs at least one item"),
        }
    }
}

impl Error for LossError {}

pub type Result<T> = std::result::Result<T, LossError>;

/// How far a probability vector's sum may stray from 1 before it is
/// rejected rather than renormalized.
pub const DIST_SUM_TOL: f64 = 1e-5;

/// A probability distribution over emotion classes, e.g. one teacher output.
/// Construction validates and renormalizes, so the stored values sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EmotionDistribution {
    probs: Vec<f64>,
}

impl EmotionDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(LossError::BadDistribution { detail: "no classes".into() });
        }
        if let Some(v) = probs.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(LossError::BadDistribution { detail: format!("entry {v} is not a probability") });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > DIST_SUM_TOL {
            return Err(LossError::BadDistribution { detail: format!("sums to {sum}, expected 1") });
        }
        // Dividing by the sum cannot make it bitwise 1.0 anyway, so leave
        // rounding-level deviations untouched instead of perturbing every
        // entry by an ulp.
        let mut probs = probs;
        if (sum - 1.0).abs() > 1e-12 {
            for v in &mut probs {
                *v /= sum;
            }
        }
        Ok(EmotionDistribution { probs })
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Scale factors for the two distillation terms in the batch loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_sd: f64,
    pub lambda_vd: f64,
}

impl LossWeights {
    pub fn new(lambda_sd: f64, lambda_vd: f64) -> Result<Self> {
        for (name, v) in [("lambda_sd", lambda_sd), ("lambda_vd", lambda_vd)] {
            if !v.is_finite() || v < 0.0 {
                return Err(LossError::BadWeights { detail: format!("{name} = {v} (must be finite and >= 0)") });
            }
        }
        Ok(LossWeights { lambda_sd, lambda_vd })
    }
}

/// Cross-entropy of a label under softmax(logits): logsumexp(z) - z[label].
pub fn ce_loss(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(LossError::LabelOutOfRange { label, classes: logits.len() });
    }
    Ok(logsumexp_row(logits) - logits[label])
}

/// Mean absolute error between two probability vectors: (1/K) sum |p - q|.
pub fn mae_loss(student_probs: &[f64], teacher_probs: &[f64]) -> Result<f64> {
    if student_probs.len() != teacher_probs.len() || student_probs.is_empty() {
        return Err(LossError::LengthMismatch {
            what: "mae_loss",
            left: student_probs.len(),
            right: teacher_probs.len(),
        });
    }
    let total: f64 = student_probs.iter().zip(teacher_probs).map(|(p, q)| (p - q).abs()).sum();
    Ok(total / student_probs.len() as f64)
}

/// Soft-target cross-entropy: -sum_k q_k log softmax(logits)_k. Used by the
/// ablation that swaps MAE out of the distillation terms.
pub fn distill_ce_loss(student_logits: &[f64], teacher_probs: &[f64]) -> Result<f64> {
    if student_logits.len() != teacher_probs.len() || student_logits.is_empty() {
        return Err(LossError::LengthMismatch {
            what: "distill_ce_loss",
            left: student_logits.len(),
            right: teacher_probs.len(),
        });
    }
    let lse = logsumexp_row(student_logits);
    Ok(student_logits.iter().zip(teacher_probs).map(|(z, q)| q * (lse - z)).sum())
}

/// Average the per-segment teacher outputs for one utterance into a single
/// distribution per class.
pub fn aggregate_teacher_segments(segments: &[EmotionDistribution]) -> Result<EmotionDistribution> {
    let first = segments.first().ok_or(LossError::BadDistribution { detail: "no segments to aggregate".into() })?;
    let k = first.len();
    let mut mean = vec![0.0; k];
    for seg in segments {
        if seg.len() != k {
            return Err(LossError::LengthMismatch { what: "aggregate_teacher_segments", left: k, right: seg.len() });
        }
        for (m, p) in mean.iter_mut().zip(seg.probs()) {
            *m += p;
        }
    }
    for m in &mut mean {
        *m /= segments.len() as f64;
    }
    EmotionDistribution::new(mean)
}

/// Instance confidence: the teacher's maximum class probability.
pub fn confidence_weight(teacher_dist: &EmotionDistribution) -> f64 {
    teacher_dist.probs.iter().cloned().fold(f64::MIN, f64::max)
}

/// Mini-batch loss: supervised terms plus lambda-scaled distillation terms,
/// averaged over all labeled and unlabeled items together.
pub fn batch_loss(sup_terms: &[f64], sd_terms: &[f64], vd_terms: &[f64], w: &LossWeights) -> Result<f64> {
    if sd_terms.len() != vd_terms.len() {
        return Err(LossError::LengthMismatch { what: "batch_loss", left: sd_terms.len(), right: vd_terms.len() });
    }
    let n = sup_terms.len() + sd_terms.len();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let mut total: f64 = sup_terms.iter().sum();
    for (sd, vd) in sd_terms.iter().zip(vd_terms) {
        total += w.lambda_sd * sd + w.lambda_vd * vd;
    }
    Ok(total / n as f64)
}

/// Batch loss with per-instance confidence weights on the distillation
/// terms, one (speech, video) pair per unlabeled item. With every weight at
/// 1 this reproduces `batch_loss` bit for bit.
pub fn conf_batch_loss(
    sup_terms: &[f64],
    sd_terms: &[f64],
    vd_terms: &[f64],
    w: &LossWeights,
    conf: &[(f64, f64)],
) -> Result<f64> {
    if sd_terms.len() != vd_terms.len() {
        return Err(LossError::LengthMismatch { what: "conf_batch_loss", left: sd_terms.len(), right: vd_terms.len() });
    }
    if conf.len() != sd_terms.len() {
        return Err(LossError::LengthMismatch { what: "conf_batch_loss weights", left: conf.len(), right: sd_terms.len() });
    }
    let n = sup_terms.len() + sd_terms.len();
    if n == 0 {
        return Err(LossError::EmptyBatch);
    }
    let mut total: f64 = sup_terms.iter().sum();
    for ((sd, vd), (w_sd, w_vd)) in sd_terms.iter().zip(vd_terms).zip(conf) {
        total += w.lambda_sd * (w_sd * sd) + w.lambda_vd * (w_vd * vd);
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_dist(rng: &mut ChaCha8Rng, k: usize) -> EmotionDistribution {
        let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
        let sum: f64 = raw.iter().sum();
        EmotionDistribution::new(raw.into_iter().map(|v| v / sum).collect()).unwrap()
    }

    #[test]
    fn ce_of_uniform_logits_is_log_k() {
        let loss = ce_loss(&[0.3; 8], 5).unwrap();
        assert!((loss - (8f64).ln()).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn ce_with_huge_margin_is_nearly_zero() {
        let mut z = vec![0.0; 8];
        z[2] = 100.0;
        let loss = ce_loss(&z, 2).unwrap();
        assert!(loss >= 0.0 && loss < 1e-12, "{loss}");
    }

    #[test]
    fn ce_matches_direct_negative_log_probability() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let k = rng.random_range(2..10);
            let z: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 8.0 - 4.0).collect();
            let label = rng.random_range(0..k);
            let direct = -softmax(&z).unwrap()[label].ln();
            let got = ce_loss(&z, label).unwrap();
            assert!((got - direct).abs() < 1e-12, "{got} vs {direct}");
        }
    }

    #[test]
    fn ce_rejects_out_of_range_label() {
        assert_eq!(ce_loss(&[0.0, 1.0], 2), Err(LossError::LabelOutOfRange { label: 2, classes: 2 }));
    }

    #[test]
    fn mae_basics() {
        assert_eq!(mae_loss(&[0.25, 0.75], &[0.25, 0.75]).unwrap(), 0.0);
        assert_eq!(mae_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert!(mae_loss(&[0.5, 0.5], &[1.0]).is_err());
        assert!(mae_loss(&[], &[]).is_err());
    }

    #[test]
    fn mae_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let k = rng.random_range(2..9);
            let p = rand_dist(&mut rng, k);
            let q = rand_dist(&mut rng, k);
            let mut acc = 0.0;
            for i in 0..k {
                acc += (p.probs()[i] - q.probs()[i]).abs();
            }
            let want = acc / k as f64;
            let got = mae_loss(p.probs(), q.probs()).unwrap();
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn distill_ce_degenerates_to_hard_ce_on_one_hot_teacher() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let k = rng.random_range(2..9);
            let z: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let label = rng.random_range(0..k);
            let mut q = vec![0.0; k];
            q[label] = 1.0;
            let soft = distill_ce_loss(&z, &q).unwrap();
            let hard = ce_loss(&z, label).unwrap();
            assert!((soft - hard).abs() < 1e-12, "{soft} vs {hard}");
        }
    }

    #[test]
    fn distill_ce_uniform_case_is_log_k() {
        let loss = distill_ce_loss(&[1.5; 7], &[1.0 / 7.0; 7]).unwrap();
        assert!((loss - (7f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn distill_ce_matches_direct_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let k = rng.random_range(2..9);
            let z: Vec<f64> = (0..k).map(|_| rng.random::<f64>() * 6.0 - 3.0).collect();
            let q = rand_dist(&mut rng, k);
            let p = softmax(&z).unwrap();
            let want: f64 = q.probs().iter().zip(&p).map(|(qk, pk)| -qk * pk.ln()).sum();
            let got = distill_ce_loss(&z, q.probs()).unwrap();
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn aggregation_averages_and_stays_normalized() {
        let single = rand_dist(&mut ChaCha8Rng::seed_from_u64(19), 5);
        let back = aggregate_teacher_segments(std::slice::from_ref(&single)).unwrap();
        for (a, b) in back.probs().iter().zip(single.probs()) {
            assert!((a - b).abs() < 1e-12);
        }

        let opposite = [
            EmotionDistribution::new(vec![1.0, 0.0]).unwrap(),
            EmotionDistribution::new(vec![0.0, 1.0]).unwrap(),
        ];
        assert_eq!(aggregate_teacher_segments(&opposite).unwrap().probs(), &[0.5, 0.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let segs: Vec<_> = (0..6).map(|_| rand_dist(&mut rng, 7)).collect();
        let got = aggregate_teacher_segments(&segs).unwrap();
        for k in 0..7 {
            let want: f64 = segs.iter().map(|s| s.probs()[k]).sum::<f64>() / 6.0;
            assert!((got.probs()[k] - want).abs() < 1e-12);
        }
        assert!((got.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);

        assert!(aggregate_teacher_segments(&[]).is_err());
        let ragged = [
            EmotionDistribution::new(vec![0.5, 0.5]).unwrap(),
            EmotionDistribution::new(vec![0.4, 0.3, 0.3]).unwrap(),
        ];
        assert!(aggregate_teacher_segments(&ragged).is_err());
    }

    #[test]
    fn confidence_is_the_max_probability() {
        let d = EmotionDistribution::new(vec![0.7, 0.2, 0.1]).unwrap();
        assert_eq!(confidence_weight(&d), 0.7);
        let u = EmotionDistribution::new(vec![0.25; 4]).unwrap();
        assert_eq!(confidence_weight(&u), 0.25);
        let hot = EmotionDistribution::new(vec![0.0, 0.0, 1.0]).unwrap();
        assert_eq!(confidence_weight(&hot), 1.0);
    }

    #[test]
    fn batch_loss_worked_examples() {
        let unit = LossWeights::new(1.0, 1.0).unwrap();
        // Supervised only: plain mean.
        assert_eq!(batch_loss(&[2.0, 4.0], &[], &[], &unit).unwrap(), 3.0);
        assert!((batch_loss(&[1.0], &[0.2], &[0.4], &unit).unwrap() - 0.8).abs() < 1e-15);
        let heavy = LossWeights::new(5.0, 1.0).unwrap();
        assert!((batch_loss(&[1.0], &[0.2], &[0.4], &heavy).unwrap() - 1.2).abs() < 1e-15);
        assert_eq!(batch_loss(&[], &[], &[], &unit), Err(LossError::EmptyBatch));
        assert!(batch_loss(&[1.0], &[0.2], &[], &unit).is_err());
    }

    #[test]
    fn conf_batch_loss_worked_examples() {
        let unit = LossWeights::new(1.0, 1.0).unwrap();
        let got = conf_batch_loss(&[1.0], &[0.2], &[0.4], &unit, &[(0.5, 0.25)]).unwrap();
        assert!((got - 0.6).abs() < 1e-15, "{got}");
        // Zero confidence removes the distillation terms but keeps the
        // denominator at N_l + N_u.
        let zeroed = conf_batch_loss(&[1.0], &[0.2], &[0.4], &unit, &[(0.0, 0.0)]).unwrap();
        assert_eq!(zeroed, 0.5);
        assert!(conf_batch_loss(&[1.0], &[0.2], &[0.4], &unit, &[]).is_err());
    }

    #[test]
    fn lambda_scaling_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        for _ in 0..30 {
            let n_l = rng.random_range(1..5);
            let n_u = rng.random_range(1..5);
            let sup: Vec<f64> = (0..n_l).map(|_| rng.random::<f64>() * 3.0).collect();
            let sd: Vec<f64> = (0..n_u).map(|_| rng.random::<f64>()).collect();
            let vd: Vec<f64> = (0..n_u).map(|_| rng.random::<f64>()).collect();
            let lam = rng.random::<f64>() * 4.0;
            let base = batch_loss(&sup, &sd, &vd, &LossWeights::new(0.0, 0.7).unwrap()).unwrap();
            let one = batch_loss(&sup, &sd, &vd, &LossWeights::new(lam, 0.7).unwrap()).unwrap();
            let two = batch_loss(&sup, &sd, &vd, &LossWeights::new(2.0 * lam, 0.7).unwrap()).unwrap();
            assert!(((two - base) - 2.0 * (one - base)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_must_be_finite_and_nonnegative() {
        assert!(LossWeights::new(-0.1, 1.0).is_err());
        assert!(LossWeights::new(1.0, f64::NAN).is_err());
        assert!(LossWeights::new(0.0, 0.0).is_ok());
    }

    #[test]
    fn distribution_validation_and_renormalization() {
        assert!(EmotionDistribution::new(vec![]).is_err());
        assert!(EmotionDistribution::new(vec![0.5, -0.1, 0.6]).is_err());
        assert!(EmotionDistribution::new(vec![0.5, f64::NAN]).is_err());
        assert!(EmotionDistribution::new(vec![0.5, 0.4]).is_err());
        let d = EmotionDistribution::new(vec![0.500004, 0.5]).unwrap();
        assert!((d.probs().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn unit_confidence_equals_plain_batch_loss_bitwise(
            sup in proptest::collection::vec(0.0f64..5.0, 0..6),
            pairs in proptest::collection::vec((0.0f64..2.0, 0.0f64..2.0), 0..6),
            lam_sd in 0.0f64..10.0,
            lam_vd in 0.0f64..10.0,
        ) {
            prop_assume!(!sup.is_empty() || !pairs.is_empty());
            let sd: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let vd: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let w = LossWeights::new(lam_sd, lam_vd).unwrap();
            let plain = batch_loss(&sup, &sd, &vd, &w).unwrap();
            let unit = conf_batch_loss(&sup, &sd, &vd, &w, &vec![(1.0, 1.0); sd.len()]).unwrap();
            prop_assert_eq!(plain.to_bits(), unit.to_bits());
        }

        #[test]
        fn mae_is_a_symmetric_nonnegative_distance(
            pairs in proptest::collection::vec((1e-6f64..1.0, 1e-6f64..1.0), 2..9),
        ) {
            let psum: f64 = pairs.iter().map(|p| p.0).sum();
            let qsum: f64 = pairs.iter().map(|p| p.1).sum();
            let p: Vec<f64> = pairs.iter().map(|v| v.0 / psum).collect();
            let q: Vec<f64> = pairs.iter().map(|v| v.1 / qsum).collect();
            let pq = mae_loss(&p, &q).unwrap();
            let qp = mae_loss(&q, &p).unwrap();
            prop_assert_eq!(pq.to_bits(), qp.to_bits());
            prop_assert!(pq >= 0.0 && pq <= 2.0 / p.len() as f64 * p.len() as f64);
            prop_assert_eq!(mae_loss(&p, &p).unwrap(), 0.0);
        }
    }
}
