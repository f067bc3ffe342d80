//! Reference implementation of masked DPO/RPO preference losses.
//!
//! Inputs are per-token log-probabilities of the chosen (`y+`) and rejected
//! (`y-`) samples under the policy and the frozen reference model. With
//!
//! ```text
//! K+' = sum_j  a+_j (pi_j - ref_j)        over chosen tokens
//! K-' = sum_i  a-_i (pi_i - ref_i)        over rejected tokens
//! L   = -ln sigmoid(beta (K+' - K-'))  [+ alpha * L_sft for RPO]
//! ```
//!
//! where the activity weights `a` are 1 everywhere for vanilla objectives and
//! follow the token mask for the masked ones. Gradients are analytic and taken
//! with respect to the policy log-probabilities only.
//!
//! Everything is `f64`. Masked-out tokens are skipped rather than multiplied
//! by zero so that their values can never leak into the result.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_BETA: f64 = 0.1;
pub const DEFAULT_ALPHA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
pub enum Variant {
    VanillaDPO,
    #[default]
    IterPrefDPO,
    IterPrefRPO,
    VanillaRPO,
    Symmetric,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::VanillaDPO,
        Variant::IterPrefDPO,
        Variant::IterPrefRPO,
        Variant::VanillaRPO,
        Variant::Symmetric,
    ];

    pub fn has_sft(self) -> bool {
        matches!(self, Variant::IterPrefRPO | Variant::VanillaRPO)
    }

    pub fn masks_rejected(self) -> bool {
        matches!(
            self,
            Variant::IterPrefDPO | Variant::IterPrefRPO | Variant::Symmetric
        )
    }

    pub fn masks_chosen(self) -> bool {
        self == Variant::Symmetric
    }

    /// Full-sequence counterpart used for the vanilla half of a hybrid batch.
    pub fn vanilla_counterpart(self) -> Variant {
        if self.has_sft() {
            Variant::VanillaRPO
        } else {
            Variant::VanillaDPO
        }
    }
}

/// How the supervised term on `y+` is normalized over its tokens.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SftNorm {
    #[default]
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub beta: f64,
    pub alpha: f64,
    pub variant: Variant,
    pub sft_norm: SftNorm,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: DEFAULT_BETA,
            alpha: DEFAULT_ALPHA,
            variant: Variant::default(),
            sft_norm: SftNorm::default(),
        }
    }
}

impl LossConfig {
    pub fn with_variant(variant: Variant) -> Self {
        Self {
            variant,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LossError::BadConfig(format!(
                "beta must be > 0, got {}",
                self.beta
            )));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::BadConfig(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairLogProbs {
    pub chosen_policy: Vec<f64>,
    pub chosen_ref: Vec<f64>,
    pub rejected_policy: Vec<f64>,
    pub rejected_ref: Vec<f64>,
    pub rejected_mask: Vec<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chosen_mask: Option<Vec<bool>>,
}

impl PairLogProbs {
    fn check_shapes(&self, variant: Variant) -> Result<(), LossError> {
        let n = self.chosen_policy.len();
        if self.chosen_ref.len() != n {
            return Err(LossError::LengthMismatch {
                what: "chosen_ref",
                expected: n,
                got: self.chosen_ref.len(),
            });
        }
        if let Some(m) = &self.chosen_mask {
            if m.len() != n {
                return Err(LossError::LengthMismatch {
                    what: "chosen_mask",
                    expected: n,
                    got: m.len(),
                });
            }
        } else if variant.masks_chosen() {
            return Err(LossError::MissingChosenMask);
        }
        let l = self.rejected_policy.len();
        for (what, got) in [
            ("rejected_ref", self.rejected_ref.len()),
            ("rejected_mask", self.rejected_mask.len()),
        ] {
            if got != l {
                return Err(LossError::LengthMismatch {
                    what,
                    expected: l,
                    got,
                });
            }
        }
        Ok(())
    }

    fn check_values(&self) -> Result<(), LossError> {
        let all = [
            ("chosen_policy", &self.chosen_policy),
            ("chosen_ref", &self.chosen_ref),
            ("rejected_policy", &self.rejected_policy),
            ("rejected_ref", &self.rejected_ref),
        ];
        for (what, xs) in all {
            for (index, &x) in xs.iter().enumerate() {
                if !x.is_finite() {
                    return Err(LossError::NonFinite { what, index });
                }
                if x > 0.0 {
                    return Err(LossError::PositiveLogProb { what, index });
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub k_plus: f64,
    pub k_minus: f64,
    pub dpo: f64,
    pub sft: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub loss: f64,
    pub grad_chosen: Vec<f64>,
    pub grad_rejected: Vec<f64>,
    pub delta: f64,
    pub components: LossComponents,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LossError {
    #[error("{what} has length {got}, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("Symmetric variant needs a chosen_mask")]
    MissingChosenMask,
    #[error("{what}[{index}] is not finite")]
    NonFinite { what: &'static str, index: usize },
    #[error("{what}[{index}] is a positive log-probability")]
    PositiveLogProb { what: &'static str, index: usize },
    #[error("invalid loss configuration: {0}")]
    BadConfig(String),
    #[error("batch is empty")]
    EmptyBatch,
}

/// `ln sigmoid(z)` without overflow for large `|z|`.
pub fn log_sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        -(-z).exp().ln_1p()
    } else {
        z - z.exp().ln_1p()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Sequence log-ratio `sum_i (policy_i - ref_i)`.
pub fn seq_log_ratio(policy: &[f64], reference: &[f64]) -> Result<f64, LossError> {
    if policy.len() != reference.len() {
        return Err(LossError::LengthMismatch {
            what: "ref",
            expected: policy.len(),
            got: reference.len(),
        });
    }
    let mut acc = 0.0;
    for (p, r) in policy.iter().zip(reference) {
        acc += p - r;
    }
    Ok(acc)
}

/// Sequence log-ratio restricted to tokens where `mask` is set.
pub fn masked_log_ratio(
    policy: &[f64],
    reference: &[f64],
    mask: &[bool],
) -> Result<f64, LossError> {
    if policy.len() != reference.len() || policy.len() != mask.len() {
        return Err(LossError::LengthMismatch {
            what: if policy.len() != reference.len() {
                "ref"
            } else {
                "mask"
            },
            expected: policy.len(),
            got: if policy.len() != reference.len() {
                reference.len()
            } else {
                mask.len()
            },
        });
    }
    let mut acc = 0.0;
    for ((p, r), &m) in policy.iter().zip(reference).zip(mask) {
        if m {
            acc += p - r;
        }
    }
    Ok(acc)
}

/// Loss and gradients for one pair; shapes must already be checked.
fn evaluate(
    lp: &PairLogProbs,
    cfg: &LossConfig,
    variant: Variant,
) -> Result<LossResult, LossError> {
    let chosen_mask = if variant.masks_chosen() {
        Some(
            lp.chosen_mask
                .as_deref()
                .ok_or(LossError::MissingChosenMask)?,
        )
    } else {
        None
    };
    let rejected_mask = variant
        .masks_rejected()
        .then_some(lp.rejected_mask.as_slice());

    let k_plus = match chosen_mask {
        Some(m) => masked_log_ratio(&lp.chosen_policy, &lp.chosen_ref, m)?,
        None => seq_log_ratio(&lp.chosen_policy, &lp.chosen_ref)?,
    };
    let k_minus = match rejected_mask {
        Some(m) => masked_log_ratio(&lp.rejected_policy, &lp.rejected_ref, m)?,
        None => seq_log_ratio(&lp.rejected_policy, &lp.rejected_ref)?,
    };
    let delta = k_plus - k_minus;
    let z = cfg.beta * delta;
    let dpo = -log_sigmoid(z);
    // d(dpo)/d(delta) = -beta * sigmoid(-z)
    let g = cfg.beta * sigmoid(-z);

    let n_plus = lp.chosen_policy.len();
    let (sft, sft_weight) = if variant.has_sft() && n_plus > 0 {
        let sum: f64 = lp.chosen_policy.iter().sum();
        match cfg.sft_norm {
            SftNorm::Mean => (-sum / n_plus as f64, 1.0 / n_plus as f64),
            SftNorm::Sum => (-sum, 1.0),
        }
    } else {
        (0.0, 0.0)
    };

    let grad_chosen = (0..n_plus)
        .map(|j| {
            let active = chosen_mask.is_none_or(|m| m[j]);
            let dpo_part = if active { -g } else { 0.0 };
            if variant.has_sft() {
                dpo_part - cfg.alpha * sft_weight
            } else {
                dpo_part
            }
        })
        .collect();
    let grad_rejected = (0..lp.rejected_policy.len())
        .map(|i| {
            if rejected_mask.is_none_or(|m| m[i]) {
                g
            } else {
                0.0
            }
        })
        .collect();

    let loss = if variant.has_sft() {
        dpo + cfg.alpha * sft
    } else {
        dpo
    };
    Ok(LossResult {
        loss,
        grad_chosen,
        grad_rejected,
        delta,
        components: LossComponents {
            k_plus,
            k_minus,
            dpo,
            sft,
        },
    })
}

/// Loss of one preference pair under `cfg.variant`.
pub fn pair_loss(lp: &PairLogProbs, cfg: &LossConfig) -> Result<LossResult, LossError> {
    pair_loss_as(lp, cfg, cfg.variant)
}

fn pair_loss_as(
    lp: &PairLogProbs,
    cfg: &LossConfig,
    variant: Variant,
) -> Result<LossResult, LossError> {
    cfg.validate()?;
    lp.check_shapes(variant)?;
    lp.check_values()?;
    evaluate(lp, cfg, variant)
}

/// Hybrid batches train a fixed share of pairs with the full-sequence
/// objective; which pairs is drawn from `seed`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub vanilla_fraction: f64,
    pub seed: u64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            vanilla_fraction: 0.5,
            seed: 0,
        }
    }
}

/// Indices of pairs assigned the vanilla objective in a hybrid batch.
pub fn hybrid_assignment(batch_len: usize, hybrid: &HybridConfig) -> Result<Vec<bool>, LossError> {
    if !(0.0..=1.0).contains(&hybrid.vanilla_fraction) {
        return Err(LossError::BadConfig(format!(
            "vanilla_fraction must lie in [0, 1], got {}",
            hybrid.vanilla_fraction
        )));
    }
    let k = (hybrid.vanilla_fraction * batch_len as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(hybrid.seed);
    let mut flags = vec![false; batch_len];
    for i in sample(&mut rng, batch_len, k.min(batch_len)) {
        flags[i] = true;
    }
    Ok(flags)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchLossResult {
    /// Mean of the per-pair losses.
    pub loss: f64,
    /// Per-pair results; gradients of the mean are these divided by the batch size.
    pub pairs: Vec<LossResult>,
    pub variants: Vec<Variant>,
}

/// Mean loss over a batch. A per-pair override wins over the hybrid
/// assignment, which in turn wins over `cfg.variant`.
pub fn batch_loss(
    pairs: &[(PairLogProbs, Option<Variant>)],
    cfg: &LossConfig,
    hybrid: Option<&HybridConfig>,
) -> Result<BatchLossResult, LossError> {
    if pairs.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let vanilla = match hybrid {
        Some(h) => hybrid_assignment(pairs.len(), h)?,
        None => vec![false; pairs.len()],
    };
    let mut results = Vec::with_capacity(pairs.len());
    let mut variants = Vec::with_capacity(pairs.len());
    for ((lp, over), flag) in pairs.iter().zip(vanilla) {
        let variant = over.unwrap_or(if flag {
            cfg.variant.vanilla_counterpart()
        } else {
            cfg.variant
        });
        results.push(pair_loss_as(lp, cfg, variant)?);
        variants.push(variant);
    }
    let loss = results.iter().map(|r| r.loss).sum::<f64>() / results.len() as f64;
    Ok(BatchLossResult {
        loss,
        pairs: results,
        variants,
    })
}

/// Largest relative disagreement between the analytic policy gradient and a
/// central finite difference, `|a - n| / max(1, |n|)`, over every policy
/// coordinate of both samples.
pub fn finite_difference_check(
    lp: &PairLogProbs,
    cfg: &LossConfig,
    epsilon: f64,
) -> Result<f64, LossError> {
    if !(1e-8..=1e-3).contains(&epsilon) {
        return Err(LossError::BadConfig(format!(
            "epsilon must lie in [1e-8, 1e-3], got {epsilon}"
        )));
    }
    let analytic = pair_loss(lp, cfg)?;
    let variant = cfg.variant;
    let f = |probe: &PairLogProbs| evaluate(probe, cfg, variant).map(|r| r.loss);

    let mut probe = lp.clone();
    let mut worst: f64 = 0.0;
    let mut record = |a: f64, n: f64| {
        let err = (a - n).abs() / n.abs().max(1.0);
        worst = worst.max(err);
    };
    for j in 0..lp.chosen_policy.len() {
        let x = lp.chosen_policy[j];
        probe.chosen_policy[j] = x + epsilon;
        let up = f(&probe)?;
        probe.chosen_policy[j] = x - epsilon;
        let down = f(&probe)?;
        probe.chosen_policy[j] = x;
        record(analytic.grad_chosen[j], (up - down) / (2.0 * epsilon));
    }
    for i in 0..lp.rejected_policy.len() {
        let x = lp.rejected_policy[i];
        probe.rejected_policy[i] = x + epsilon;
        let up = f(&probe)?;
        probe.rejected_policy[i] = x - epsilon;
        let down = f(&probe)?;
        probe.rejected_policy[i] = x;
        record(analytic.grad_rejected[i], (up - down) / (2.0 * epsilon));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // ln(1 + e^-0.15) evaluated with 40-digit arithmetic (mpmath).
    const LOSS_AT_0_15: f64 = 0.620_957_047_789_532_1;

    fn simple(chosen: (&[f64], &[f64]), rejected: (&[f64], &[f64]), mask: &[bool]) -> PairLogProbs {
        PairLogProbs {
            chosen_policy: chosen.0.to_vec(),
            chosen_ref: chosen.1.to_vec(),
            rejected_policy: rejected.0.to_vec(),
            rejected_ref: rejected.1.to_vec(),
            rejected_mask: mask.to_vec(),
            chosen_mask: None,
        }
    }

    #[test]
    fn log_ratio_examples() {
        assert_eq!(seq_log_ratio(&[-1.0, -2.0], &[-1.0, -2.0]).unwrap(), 0.0);
        assert_eq!(seq_log_ratio(&[-1.0, -2.0], &[-1.5, -2.5]).unwrap(), 1.0);
        assert_eq!(seq_log_ratio(&[], &[]).unwrap(), 0.0);
        assert!(seq_log_ratio(&[-1.0], &[]).is_err());

        let p = [-1.0, -2.0, -3.0];
        let r = [-1.0, -1.0, -1.0];
        assert_eq!(masked_log_ratio(&p, &r, &[false; 3]).unwrap(), 0.0);
        assert_eq!(
            masked_log_ratio(&p, &r, &[false, true, true]).unwrap(),
            -3.0
        );
        assert_eq!(
            masked_log_ratio(&p, &r, &[true; 3]).unwrap(),
            seq_log_ratio(&p, &r).unwrap()
        );
        assert!(masked_log_ratio(&p, &r, &[true]).is_err());
    }

    #[test]
    fn identity_is_ln2() {
        let lp = simple((&[-0.5, -1.0], &[-0.5, -1.0]), (&[-2.0], &[-2.0]), &[true]);
        let r = pair_loss(&lp, &LossConfig::default()).unwrap();
        assert_eq!(r.delta, 0.0);
        assert!((r.loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn hand_worked_value() {
        // K+ = 1.0 from one chosen token, K- = -0.5 from one masked-in rejected token
        let lp = simple(
            (&[-1.0], &[-2.0]),
            (&[-1.5, -3.0], &[-1.0, -0.2]),
            &[true, false],
        );
        let r = pair_loss(&lp, &LossConfig::default()).unwrap();
        assert_eq!(r.components.k_plus, 1.0);
        assert_eq!(r.components.k_minus, -0.5);
        assert!((r.delta - 1.5).abs() < 1e-15);
        assert!((r.loss - LOSS_AT_0_15).abs() < 1e-12);
    }

    #[test]
    fn reduction_to_vanilla() {
        let lp = simple(
            (&[-0.3, -1.1], &[-0.7, -0.9]),
            (&[-2.0, -0.4], &[-1.0, -0.6]),
            &[true, true],
        );
        let a = pair_loss(&lp, &LossConfig::with_variant(Variant::IterPrefDPO)).unwrap();
        let b = pair_loss(&lp, &LossConfig::with_variant(Variant::VanillaDPO)).unwrap();
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        assert_eq!(a.grad_rejected, b.grad_rejected);
    }

    #[test]
    fn rpo_adds_mean_sft() {
        let lp = simple((&[-1.0, -3.0], &[-1.0, -3.0]), (&[-1.0], &[-1.0]), &[true]);
        let r = pair_loss(&lp, &LossConfig::with_variant(Variant::IterPrefRPO)).unwrap();
        assert_eq!(r.components.sft, 2.0);
        assert!((r.loss - (std::f64::consts::LN_2 + 2.0)).abs() < 1e-12);
        // -g - alpha / n with g = 0.1 * 0.5
        assert!((r.grad_chosen[0] - (-0.05 - 0.5)).abs() < 1e-15);

        let sum_cfg = LossConfig {
            sft_norm: SftNorm::Sum,
            ..LossConfig::with_variant(Variant::VanillaRPO)
        };
        let s = pair_loss(&lp, &sum_cfg).unwrap();
        assert_eq!(s.components.sft, 4.0);
    }

    #[test]
    fn symmetric_requires_chosen_mask() {
        let lp = simple((&[-1.0], &[-1.0]), (&[-1.0], &[-1.0]), &[true]);
        assert_eq!(
            pair_loss(&lp, &LossConfig::with_variant(Variant::Symmetric)),
            Err(LossError::MissingChosenMask)
        );
    }

    #[test]
    fn input_errors() {
        let mut lp = simple((&[-1.0], &[-1.0]), (&[-1.0], &[-1.0]), &[true]);
        lp.rejected_policy[0] = f64::NAN;
        assert!(matches!(
            pair_loss(&lp, &LossConfig::default()),
            Err(LossError::NonFinite { .. })
        ));
        lp.rejected_policy[0] = 0.5;
        assert!(matches!(
            pair_loss(&lp, &LossConfig::default()),
            Err(LossError::PositiveLogProb { .. })
        ));
        lp.rejected_policy[0] = -1.0;
        lp.rejected_mask.push(true);
        assert!(matches!(
            pair_loss(&lp, &LossConfig::default()),
            Err(LossError::LengthMismatch { .. })
        ));
        let bad = LossConfig {
            beta: 0.0,
            ..LossConfig::default()
        };
        assert!(matches!(bad.validate(), Err(LossError::BadConfig(_))));
    }

    #[test]
    fn empty_mask_is_legal() {
        let lp = simple(
            (&[-1.0], &[-2.0]),
            (&[-1.0, -2.0], &[-3.0, -3.0]),
            &[false, false],
        );
        let r = pair_loss(&lp, &LossConfig::default()).unwrap();
        assert_eq!(r.components.k_minus, 0.0);
        assert!(r.grad_rejected.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn batch_rules() {
        let lp = simple((&[-1.0], &[-2.0]), (&[-1.5], &[-1.0]), &[true]);
        let cfg = LossConfig::default();
        let single = pair_loss(&lp, &cfg).unwrap();
        let one = batch_loss(&[(lp.clone(), None)], &cfg, None).unwrap();
        assert_eq!(one.loss, single.loss);
        let two = batch_loss(&[(lp.clone(), None), (lp.clone(), None)], &cfg, None).unwrap();
        assert_eq!(two.loss, single.loss);
        assert_eq!(batch_loss(&[], &cfg, None), Err(LossError::EmptyBatch));
    }

    #[test]
    fn hybrid_assignment_is_reproducible() {
        let h = HybridConfig {
            vanilla_fraction: 0.5,
            seed: 17,
        };
        let a = hybrid_assignment(4, &h).unwrap();
        let b = hybrid_assignment(4, &h).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.iter().filter(|f| **f).count(), 2);

        let lp = simple((&[-1.0], &[-2.0]), (&[-1.5], &[-1.0]), &[true]);
        let batch: Vec<_> = (0..4).map(|_| (lp.clone(), None)).collect();
        let r = batch_loss(&batch, &LossConfig::default(), Some(&h)).unwrap();
        let vanilla = r
            .variants
            .iter()
            .filter(|v| **v == Variant::VanillaDPO)
            .count();
        assert_eq!(vanilla, 2);
    }

    #[test]
    fn masked_out_coordinates_have_zero_gradient() {
        let lp = simple(
            (&[-1.0], &[-2.0]),
            (&[-1.5, -0.1], &[-1.0, -2.0]),
            &[true, false],
        );
        let r = pair_loss(&lp, &LossConfig::default()).unwrap();
        assert_eq!(r.grad_rejected[1], 0.0);
        assert!(finite_difference_check(&lp, &LossConfig::default(), 1e-6).unwrap() < 1e-9);
    }

    #[test]
    fn fd_epsilon_bounds() {
        let lp = simple((&[-1.0], &[-2.0]), (&[-1.5], &[-1.0]), &[true]);
        assert!(finite_difference_check(&lp, &LossConfig::default(), 1e-2).is_err());
    }

    proptest! {
        #[test]
        fn dpo_term_decreases_in_k_plus(kp in -20.0f64..20.0, step in 0.01f64..5.0, km in -20.0f64..20.0) {
            let at = |k: f64| pair_loss(
                &simple((&[-30.0 + k], &[-30.0]), (&[-30.0 + km], &[-30.0]), &[true]),
                &LossConfig::default(),
            ).unwrap();
            let lo = at(kp);
            let hi = at(kp + step);
            prop_assert!(hi.components.dpo < lo.components.dpo);
            prop_assert!(lo.grad_chosen.iter().all(|g| *g <= 0.0));
            prop_assert!(lo.grad_rejected.iter().all(|g| *g >= 0.0));
        }
    }
}
