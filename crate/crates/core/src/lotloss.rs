//! The contrastive objective: cross-entropy on the gold response, minus a
//! divergence from the frozen toxic reference, plus a divergence to the frozen
//! safe reference. All three terms are per-position means over the
//! teacher-forced response.

use serde::{Deserialize, Serialize};

use crate::corpus::DialoguePair;
use crate::divergence::{clamp, divergence, divergence_grad_p, DivergenceKind};
use crate::error::{LotError, Result};
use crate::lm::{backward, sequence_forward, CategoricalDist, Gradients, ModelParams, SequenceLoss};
use crate::vocab::TokenId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    Full,
    ContrastorOnly,
    ReinforcerOnly,
    MleOnly,
}

impl LossMode {
    pub fn as_str(self) -> &'static str {
        match self {
            LossMode::Full => "full",
            LossMode::ContrastorOnly => "contrastor_only",
            LossMode::ReinforcerOnly => "reinforcer_only",
            LossMode::MleOnly => "mle_only",
        }
    }
}

impl std::str::FromStr for LossMode {
    type Err = LotError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.replace('-', "_").as_str() {
            "full" => LossMode::Full,
            "contrastor_only" | "contrastor" => LossMode::ContrastorOnly,
            "reinforcer_only" | "reinforcer" => LossMode::ReinforcerOnly,
            "mle_only" | "mle" => LossMode::MleOnly,
            _ => return Err(LotError::config(format!("unknown loss mode `{s}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LotConfig {
    pub xi: f64,
    pub gamma: f64,
    pub lambda_: f64,
    pub div_kind: DivergenceKind,
    pub mode: LossMode,
    pub kl_cap: f64,
    pub eps_smooth: f64,
}

impl Default for LotConfig {
    fn default() -> Self {
        LotConfig {
            xi: 1.0,
            gamma: 0.5,
            lambda_: 0.5,
            div_kind: DivergenceKind::Js,
            mode: LossMode::Full,
            kl_cap: 10.0,
            eps_smooth: crate::lm::DEFAULT_EPS_SMOOTH,
        }
    }
}

impl LotConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.xi > 0.0 && self.xi.is_finite()) {
            return Err(LotError::config("xi must be positive"));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(LotError::config("gamma must be nonnegative"));
        }
        if !(self.lambda_ >= 0.0 && self.lambda_.is_finite()) {
            return Err(LotError::config("lambda_ must be nonnegative"));
        }
        if !(self.kl_cap > 0.0) {
            return Err(LotError::config("kl_cap must be positive"));
        }
        if !(self.eps_smooth > 0.0 && self.eps_smooth < 1.0) {
            return Err(LotError::config("eps_smooth must lie in (0, 1)"));
        }
        Ok(())
    }

    /// `(xi, gamma, lambda)` after the mode switches terms off.
    pub fn effective(&self) -> (f64, f64, f64) {
        match self.mode {
            LossMode::Full => (self.xi, self.gamma, self.lambda_),
            LossMode::ContrastorOnly => (self.xi, self.gamma, 0.0),
            LossMode::ReinforcerOnly => (self.xi, 0.0, self.lambda_),
            LossMode::MleOnly => (self.xi, 0.0, 0.0),
        }
    }
}

/// Values of the three addends. `total = xi*mle - gamma*contrast + lambda*reinforce`
/// with the effective coefficients of the config that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub mle_term: f64,
    pub contrast_term: f64,
    pub reinforce_term: f64,
    pub n_positions: usize,
    /// Positions whose divergence hit `kl_cap`.
    pub clamped_positions: usize,
}

impl LossBreakdown {
    /// Example-weighted mean of per-example breakdowns; positions add up.
    pub fn mean(items: &[LossBreakdown]) -> LossBreakdown {
        let k = items.len().max(1) as f64;
        let mut out = LossBreakdown::default();
        for b in items {
            out.total += b.total;
            out.mle_term += b.mle_term;
            out.contrast_term += b.contrast_term;
            out.reinforce_term += b.reinforce_term;
            out.n_positions += b.n_positions;
            out.clamped_positions += b.clamped_positions;
        }
        out.total /= k;
        out.mle_term /= k;
        out.contrast_term /= k;
        out.reinforce_term /= k;
        out
    }
}

/// Mean negative log-likelihood of `gold` under `dists`, in nats.
pub fn mle_loss(dists: &[CategoricalDist], gold: &[TokenId]) -> Result<f64> {
    if dists.is_empty() || dists.len() != gold.len() {
        return Err(LotError::argument(format!(
            "need one distribution per gold token, got {} for {}",
            dists.len(),
            gold.len()
        )));
    }
    let mut sum = 0.0;
    for (d, &g) in dists.iter().zip(gold) {
        let p = *d
            .probs()
            .get(g as usize)
            .ok_or_else(|| LotError::argument(format!("gold token {g} out of range")))?;
        sum -= p.ln();
    }
    Ok(sum / gold.len() as f64)
}

/// dL/dp of `scale * mean(-ln p_gold)`; shared by every objective so the
/// plain and contrastive paths produce identical bits when the divergence
/// terms are off.
fn mle_grad(dists: &[CategoricalDist], gold: &[TokenId], scale: f64) -> Vec<Vec<f64>> {
    let n = gold.len() as f64;
    dists
        .iter()
        .zip(gold)
        .map(|(d, &g)| {
            let mut row = vec![0.0; d.len()];
            row[g as usize] = -scale / (d.probs()[g as usize] * n);
            row
        })
        .collect()
}

fn check_lengths(
    beta: &[CategoricalDist],
    tau: &[CategoricalDist],
    safe: &[CategoricalDist],
    gold: &[TokenId],
) -> Result<()> {
    if gold.is_empty() || beta.len() != gold.len() || tau.len() != gold.len() || safe.len() != gold.len() {
        return Err(LotError::argument(format!(
            "distribution lists must match the gold length {} (beta {}, tau {}, safe {})",
            gold.len(),
            beta.len(),
            tau.len(),
            safe.len()
        )));
    }
    Ok(())
}

/// Loss value and dL/d(beta probabilities) per position. The frozen
/// distributions are constants.
pub fn lot_loss_with_grad(
    beta: &[CategoricalDist],
    tau: &[CategoricalDist],
    safe: &[CategoricalDist],
    gold: &[TokenId],
    cfg: &LotConfig,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    check_lengths(beta, tau, safe, gold)?;
    let (xi, gamma, lambda) = cfg.effective();
    let n = gold.len() as f64;
    let mle = mle_loss(beta, gold)?;
    let mut grad = mle_grad(beta, gold, xi);

    let mut contrast = 0.0;
    let mut reinforce = 0.0;
    let mut clamped_positions = 0;
    for t in 0..gold.len() {
        for (reference, coef, acc) in [(&tau[t], -gamma, &mut contrast), (&safe[t], lambda, &mut reinforce)] {
            let mut d = divergence(cfg.div_kind, &beta[t], reference)?;
            if cfg.div_kind == DivergenceKind::Kl {
                d = clamp(d, cfg.kl_cap);
            }
            *acc += d.value_nats;
            if d.clamped {
                clamped_positions += 1;
                continue;
            }
            if coef != 0.0 {
                let g = divergence_grad_p(cfg.div_kind, &beta[t], reference)?;
                for (row, gi) in grad[t].iter_mut().zip(g) {
                    *row += coef * gi / n;
                }
            }
        }
    }
    let contrast_term = contrast / n;
    let reinforce_term = reinforce / n;
    let total = xi * mle - gamma * contrast_term + lambda * reinforce_term;
    if !total.is_finite() {
        return Err(LotError::numerical(0, format!("loss is {total}")));
    }
    Ok((
        LossBreakdown {
            total,
            mle_term: mle,
            contrast_term,
            reinforce_term,
            n_positions: gold.len(),
            clamped_positions,
        },
        grad,
    ))
}

pub fn lot_loss(
    beta: &[CategoricalDist],
    tau: &[CategoricalDist],
    safe: &[CategoricalDist],
    gold: &[TokenId],
    cfg: &LotConfig,
) -> Result<LossBreakdown> {
    lot_loss_with_grad(beta, tau, safe, gold, cfg).map(|(b, _)| b)
}

/// Plain cross-entropy objective.
#[derive(Debug, Clone, Copy, Default)]
pub struct MleObjective;

impl SequenceLoss for MleObjective {
    type Stats = ();

    fn evaluate(
        &self,
        _pair: &DialoguePair,
        target: &[TokenId],
        dists: &[CategoricalDist],
    ) -> Result<(f64, Vec<Vec<f64>>, ())> {
        let l = mle_loss(dists, target)?;
        Ok((l, mle_grad(dists, target, 1.0), ()))
    }
}

/// Contrastive objective against two frozen references.
#[derive(Debug, Clone, Copy)]
pub struct LotObjective<'a> {
    pub tau: &'a ModelParams,
    pub safe: &'a ModelParams,
    pub cfg: LotConfig,
}

impl<'a> LotObjective<'a> {
    pub fn new(learner: &ModelParams, tau: &'a ModelParams, safe: &'a ModelParams, cfg: LotConfig) -> Result<Self> {
        cfg.validate()?;
        for (name, m) in [("toxic", tau), ("safe", safe)] {
            if m.arch.vocab != learner.arch.vocab {
                return Err(LotError::config(format!(
                    "{name} reference has vocabulary {}, learner has {}",
                    m.arch.vocab, learner.arch.vocab
                )));
            }
        }
        Ok(LotObjective { tau, safe, cfg })
    }
}

impl SequenceLoss for LotObjective<'_> {
    type Stats = LossBreakdown;

    fn evaluate(
        &self,
        pair: &DialoguePair,
        target: &[TokenId],
        dists: &[CategoricalDist],
    ) -> Result<(f64, Vec<Vec<f64>>, LossBreakdown)> {
        let tau = sequence_forward(self.tau, &pair.context, target)?;
        let safe = sequence_forward(self.safe, &pair.context, target)?;
        let (b, g) = lot_loss_with_grad(dists, &tau, &safe, target, &self.cfg)?;
        Ok((b.total, g, b))
    }
}

/// Breakdown and parameter gradient of the contrastive loss on one pair.
/// Only `model` receives gradients.
pub fn lot_grad(
    model: &ModelParams,
    pair: &DialoguePair,
    tau: &ModelParams,
    safe: &ModelParams,
    cfg: &LotConfig,
) -> Result<(LossBreakdown, Gradients)> {
    let obj = LotObjective::new(model, tau, safe, *cfg)?;
    let out = backward(model, std::slice::from_ref(pair), &obj)?;
    Ok((out.stats[0], out.grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::CategoricalDist as D;

    fn d(v: &[f64]) -> D {
        D::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mle_examples() {
        let one = D::smoothed(&[0.0, 1.0, 0.0], 1e-15).unwrap();
        assert!(mle_loss(&[one.clone(), one], &[1, 1]).unwrap() < 1e-12);
        let u = D::uniform(16);
        let l = mle_loss(&[u.clone(), u.clone(), u], &[0, 5, 9]).unwrap();
        assert!((l - 16f64.ln()).abs() < 1e-12);
        let l = mle_loss(&[d(&[0.5, 0.5]), d(&[0.25, 0.75])], &[0, 0]).unwrap();
        assert!((l - 1.039721).abs() < 1e-6);
        assert!(mle_loss(&[d(&[0.5, 0.5])], &[0, 1]).is_err());
    }

    #[test]
    fn lot_hand_example() {
        let beta = [d(&[0.5, 0.5])];
        let tau = [D::smoothed(&[1.0, 0.0], 1e-8).unwrap()];
        let safe = [d(&[0.5, 0.5])];
        let cfg = LotConfig {
            xi: 1.0,
            gamma: 1.0,
            lambda_: 1.0,
            ..LotConfig::default()
        };
        let b = lot_loss(&beta, &tau, &safe, &[0], &cfg).unwrap();
        assert!((b.total - 0.477386).abs() < 1e-6, "{b:?}");
        assert!((b.contrast_term - 0.215761).abs() < 1e-6);
        assert!(b.reinforce_term.abs() < 1e-12);
    }

    #[test]
    fn coefficients_off_reduce_to_mle() {
        let beta = [d(&[0.2, 0.3, 0.5]), d(&[0.6, 0.3, 0.1])];
        let tau = [d(&[0.7, 0.2, 0.1]), d(&[0.1, 0.1, 0.8])];
        let safe = [d(&[0.1, 0.8, 0.1]), d(&[0.3, 0.3, 0.4])];
        let gold = [2, 0];
        let cfg = LotConfig {
            xi: 1.7,
            gamma: 0.0,
            lambda_: 0.0,
            ..LotConfig::default()
        };
        let b = lot_loss(&beta, &tau, &safe, &gold, &cfg).unwrap();
        let mle = mle_loss(&beta, &gold).unwrap();
        assert!((b.total - 1.7 * mle).abs() < 1e-12);

        let same = lot_loss(&beta, &beta, &beta, &gold, &LotConfig::default()).unwrap();
        assert!((same.total - mle).abs() < 1e-9);
        assert_eq!(same.contrast_term, 0.0);
    }

    #[test]
    fn modes_zero_their_coefficients() {
        let base = LotConfig::default();
        let m = |mode| LotConfig { mode, ..base }.effective();
        assert_eq!(m(LossMode::Full), (1.0, 0.5, 0.5));
        assert_eq!(m(LossMode::ContrastorOnly), (1.0, 0.5, 0.0));
        assert_eq!(m(LossMode::ReinforcerOnly), (1.0, 0.0, 0.5));
        assert_eq!(m(LossMode::MleOnly), (1.0, 0.0, 0.0));
    }

    #[test]
    fn kl_terms_are_clamped() {
        let e = 1e-12;
        let beta = [d(&[1.0 - e, e])];
        let far = [d(&[e, 1.0 - e])];
        let cfg = LotConfig {
            div_kind: DivergenceKind::Kl,
            ..LotConfig::default()
        };
        let (b, g) = lot_loss_with_grad(&beta, &far, &far, &[0], &cfg).unwrap();
        assert_eq!(b.contrast_term, 10.0);
        assert_eq!(b.reinforce_term, 10.0);
        assert_eq!(b.clamped_positions, 2);
        // only the cross-entropy gradient survives
        assert_eq!(g[0][1], 0.0);
    }

    #[test]
    fn length_mismatch_is_an_argument_error() {
        let a = [d(&[0.5, 0.5])];
        assert!(matches!(
            lot_loss(&a, &[], &a, &[0], &LotConfig::default()),
            Err(LotError::Argument(_))
        ));
    }

    #[test]
    fn config_validation() {
        let bad = LotConfig {
            xi: 0.0,
            ..LotConfig::default()
        };
        assert!(bad.validate().is_err());
        assert!("contrastor".parse::<LossMode>().is_ok());
        assert!("bogus".parse::<LossMode>().is_err());
    }
}
