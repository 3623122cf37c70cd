//! KL and Jensen-Shannon divergences between categorical distributions, in
//! nats, with gradients in the first argument.
//!
//! Inputs are expected to be strictly positive (the model smooths its
//! outputs); these functions check rather than repair.

use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{LotError, Result};
use crate::lm::CategoricalDist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DivergenceKind {
    #[serde(alias = "kl")]
    Kl,
    #[serde(alias = "js")]
    Js,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceValue {
    pub value_nats: f64,
    pub kind: DivergenceKind,
    pub clamped: bool,
}

impl DivergenceValue {
    pub fn bits(&self) -> f64 {
        self.value_nats / LN_2
    }
}

fn check(p: &[f64], q: &[f64]) -> Result<()> {
    if p.len() != q.len() {
        return Err(LotError::argument(format!(
            "distribution sizes differ: {} vs {}",
            p.len(),
            q.len()
        )));
    }
    if p.iter().chain(q).any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(LotError::numerical(0, "divergence input not finite and positive"));
    }
    Ok(())
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| a * (a / b).ln()).sum::<f64>().max(0.0)
}

/// Midpoint mixture `(p + q) / 2`.
pub fn mixture(p: &CategoricalDist, q: &CategoricalDist) -> Result<Vec<f64>> {
    check(p.probs(), q.probs())?;
    Ok(p.probs().iter().zip(q.probs()).map(|(a, b)| 0.5 * (a + b)).collect())
}

pub fn kl(p: &CategoricalDist, q: &CategoricalDist) -> Result<DivergenceValue> {
    check(p.probs(), q.probs())?;
    Ok(DivergenceValue {
        value_nats: kl_raw(p.probs(), q.probs()),
        kind: DivergenceKind::Kl,
        clamped: false,
    })
}

pub fn js(p: &CategoricalDist, q: &CategoricalDist) -> Result<DivergenceValue> {
    let m = mixture(p, q)?;
    // accumulate both halves termwise so js(p, q) and js(q, p) add the same
    // numbers in the same order
    let v: f64 = p
        .probs()
        .iter()
        .zip(q.probs())
        .zip(&m)
        .map(|((a, b), mi)| 0.5 * (a * (a / mi).ln() + b * (b / mi).ln()))
        .sum();
    Ok(DivergenceValue {
        value_nats: v.clamp(0.0, LN_2),
        kind: DivergenceKind::Js,
        clamped: false,
    })
}

/// d js(p, q) / d p_i = ½ ln(p_i / m_i).
pub fn js_grad_p(p: &CategoricalDist, q: &CategoricalDist) -> Result<Vec<f64>> {
    let m = mixture(p, q)?;
    Ok(p.probs().iter().zip(&m).map(|(a, mi)| 0.5 * (a / mi).ln()).collect())
}

/// d kl(p, q) / d p_i = ln(p_i / q_i) + 1.
pub fn kl_grad_p(p: &CategoricalDist, q: &CategoricalDist) -> Result<Vec<f64>> {
    check(p.probs(), q.probs())?;
    Ok(p.probs()
        .iter()
        .zip(q.probs())
        .map(|(a, b)| (a / b).ln() + 1.0)
        .collect())
}

pub fn divergence(kind: DivergenceKind, p: &CategoricalDist, q: &CategoricalDist) -> Result<DivergenceValue> {
    match kind {
        DivergenceKind::Kl => kl(p, q),
        DivergenceKind::Js => js(p, q),
    }
}

pub fn divergence_grad_p(kind: DivergenceKind, p: &CategoricalDist, q: &CategoricalDist) -> Result<Vec<f64>> {
    match kind {
        DivergenceKind::Kl => kl_grad_p(p, q),
        DivergenceKind::Js => js_grad_p(p, q),
    }
}

/// Caps the value. A clamped value contributes no gradient.
pub fn clamp(d: DivergenceValue, cap: f64) -> DivergenceValue {
    if d.value_nats > cap {
        DivergenceValue {
            value_nats: cap,
            clamped: true,
            ..d
        }
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dist(v: &[f64]) -> CategoricalDist {
        CategoricalDist::new(v.to_vec()).unwrap()
    }

    fn smoothed(v: &[f64]) -> CategoricalDist {
        CategoricalDist::smoothed(v, 1e-8).unwrap()
    }

    #[test]
    fn kl_hand_value() {
        let d = kl(&dist(&[0.5, 0.5]), &dist(&[0.25, 0.75])).unwrap();
        assert!((d.value_nats - 0.143841).abs() < 1e-6);
        assert!((d.bits() - 0.207519).abs() < 1e-6);
    }

    #[test]
    fn kl_self_is_zero_and_asymmetric() {
        let p = dist(&[0.2, 0.3, 0.5]);
        assert!(kl(&p, &p).unwrap().value_nats <= 1e-12);
        let a = dist(&[0.9, 0.1]);
        let b = dist(&[0.1, 0.9]);
        let ab = kl(&a, &b).unwrap().value_nats;
        let ba = kl(&b, &a).unwrap().value_nats;
        assert!(ab > 0.0);
        // equal here by the symmetry of this pair; skew it to witness asymmetry
        let c = dist(&[0.6, 0.4]);
        assert!((kl(&a, &c).unwrap().value_nats - kl(&c, &a).unwrap().value_nats).abs() > 1e-3);
        assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn js_hand_value() {
        let d = js(&smoothed(&[1.0, 0.0]), &dist(&[0.5, 0.5])).unwrap();
        assert!((d.value_nats - 0.215761).abs() < 1e-6);
        assert!((d.bits() - 0.311278).abs() < 1e-6);
    }

    #[test]
    fn js_disjoint_support_reaches_ln2() {
        let e = 1e-8;
        let d = js(&dist(&[1.0 - e, e]), &dist(&[e, 1.0 - e])).unwrap();
        assert!((d.value_nats - LN_2).abs() < 1e-6);
        assert!((d.bits() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn js_grad_hand_values() {
        let g = js_grad_p(&dist(&[0.5, 0.5]), &smoothed(&[1.0, 0.0])).unwrap();
        assert!((g[0] + 0.202733).abs() < 1e-6);
        assert!((g[1] - 0.346574).abs() < 1e-6);
        let p = dist(&[0.1, 0.2, 0.7]);
        assert!(js_grad_p(&p, &p).unwrap().iter().all(|x| x.abs() < 1e-15));
    }

    #[test]
    fn mixture_is_midpoint() {
        let m = mixture(&dist(&[0.2, 0.8]), &dist(&[0.6, 0.4])).unwrap();
        assert!((m[0] - 0.4).abs() < 1e-15 && (m[1] - 0.6).abs() < 1e-15);
    }

    #[test]
    fn clamp_behaviour() {
        let v = |x| DivergenceValue {
            value_nats: x,
            kind: DivergenceKind::Kl,
            clamped: false,
        };
        let a = clamp(v(0.3), 10.0);
        assert_eq!((a.value_nats, a.clamped), (0.3, false));
        let b = clamp(v(14.2), 10.0);
        assert_eq!((b.value_nats, b.clamped), (10.0, true));
        let j = js(&dist(&[1.0 - 1e-9, 1e-9]), &dist(&[1e-9, 1.0 - 1e-9])).unwrap();
        assert!(!clamp(j, 10.0).clamped);
    }

    #[test]
    fn rejects_mismatched_or_nonpositive() {
        assert!(kl(&dist(&[0.5, 0.5]), &dist(&[0.2, 0.3, 0.5])).is_err());
        let bad = CategoricalDist::new(vec![1.0, 0.0]);
        assert!(bad.is_err());
    }
}
