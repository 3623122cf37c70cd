//! Reference implementations used as oracles by the integration tests. They
//! recompute everything from the raw parameter tensors with the plainest
//! possible loops and share no code with the library paths they check.
#![allow(dead_code)]

use lot_core::corpus::{DialoguePair, Label};
use lot_core::divergence::DivergenceKind;
use lot_core::lm::{Arch, ModelParams};
use lot_core::lotloss::LotConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Next-token probabilities, including the uniform smoothing.
pub fn ref_probs(m: &ModelParams, context: &[u32], prefix: &[u32]) -> Vec<f64> {
    let Arch {
        vocab,
        embed,
        hidden,
        window,
    } = m.arch;
    let mut stream: Vec<u32> = context.to_vec();
    stream.push(BOS);
    stream.extend_from_slice(prefix);
    let mut win = vec![PAD; window];
    for (k, slot) in win.iter_mut().rev().enumerate() {
        if k < stream.len() {
            *slot = stream[stream.len() - 1 - k];
        }
    }
    let t = &m.params;
    let mut x = Vec::new();
    for &tok in &win {
        for j in 0..embed {
            x.push(t.embed[tok as usize * embed + j]);
        }
    }
    let mut h = vec![0.0; hidden];
    for i in 0..hidden {
        let mut a = t.hidden_b[i];
        for (k, xk) in x.iter().enumerate() {
            a += xk * t.hidden_w[k * hidden + i];
        }
        h[i] = a.tanh();
    }
    let mut z = vec![0.0; vocab];
    for j in 0..vocab {
        let mut a = t.out_b[j];
        for i in 0..hidden {
            a += h[i] * t.out_w[i * vocab + j];
        }
        z[j] = a;
    }
    let zmax = z.iter().cloned().fold(f64::MIN, f64::max);
    let denom: f64 = z.iter().map(|v| (v - zmax).exp()).sum();
    let eps = m.eps_smooth;
    z.iter()
        .map(|v| (1.0 - eps) * (v - zmax).exp() / denom + eps / vocab as f64)
        .collect()
}

pub fn ref_target(pair: &DialoguePair) -> Vec<u32> {
    let mut t = pair.response.clone();
    t.push(EOS);
    t
}

pub fn ref_kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i] / q[i]).ln();
        }
    }
    s
}

pub fn ref_js(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * ref_kl(p, &m) + 0.5 * ref_kl(q, &m)
}

fn ref_div(kind: DivergenceKind, p: &[f64], q: &[f64], cap: f64) -> f64 {
    match kind {
        DivergenceKind::Js => ref_js(p, q),
        DivergenceKind::Kl => ref_kl(p, q).min(cap),
    }
}

/// Mean over the batch of the per-position mean loss.
pub fn ref_lot_batch(
    m: &ModelParams,
    tau: &ModelParams,
    safe: &ModelParams,
    batch: &[DialoguePair],
    cfg: &LotConfig,
) -> f64 {
    let (xi, gamma, lambda) = cfg.effective();
    let mut total = 0.0;
    for pair in batch {
        let gold = ref_target(pair);
        let mut acc = 0.0;
        for t in 0..gold.len() {
            let p = ref_probs(m, &pair.context, &gold[..t]);
            let pt = ref_probs(tau, &pair.context, &gold[..t]);
            let ps = ref_probs(safe, &pair.context, &gold[..t]);
            acc += -xi * p[gold[t] as usize].ln();
            acc += -gamma * ref_div(cfg.div_kind, &p, &pt, cfg.kl_cap);
            acc += lambda * ref_div(cfg.div_kind, &p, &ps, cfg.kl_cap);
        }
        total += acc / gold.len() as f64;
    }
    total / batch.len() as f64
}

pub fn ref_mle_batch(m: &ModelParams, batch: &[DialoguePair]) -> f64 {
    let mut total = 0.0;
    for pair in batch {
        let gold = ref_target(pair);
        let mut acc = 0.0;
        for t in 0..gold.len() {
            acc -= ref_probs(m, &pair.context, &gold[..t])[gold[t] as usize].ln();
        }
        total += acc / gold.len() as f64;
    }
    total / batch.len() as f64
}

/// Fourth-order central difference.
pub fn fd5(f: &mut dyn FnMut(f64) -> f64, x: f64, h: f64) -> f64 {
    (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
}

pub fn random_dist(r: &mut impl Rng, n: usize) -> Vec<f64> {
    // a spread of sharp and flat shapes
    let sharp: f64 = r.gen_range(0.2..4.0);
    let w: Vec<f64> = (0..n).map(|_| r.gen_range(0.0f64..1.0).powf(sharp) + 1e-6).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

pub fn random_pair(r: &mut impl Rng, vocab: usize, max_resp: usize) -> DialoguePair {
    let tok = |r: &mut ChaCha8Rng| r.gen_range(3..vocab as u32);
    let mut rr = ChaCha8Rng::seed_from_u64(r.gen());
    let n_ctx = rr.gen_range(1..5);
    let n_resp = rr.gen_range(1..=max_resp);
    DialoguePair {
        context: (0..n_ctx).map(|_| tok(&mut rr)).collect(),
        response: (0..n_resp).map(|_| tok(&mut rr)).collect(),
        label: if rr.gen_bool(0.5) { Label::Safe } else { Label::Unsafe },
    }
}

pub fn brute_div1(gens: &[Vec<u32>]) -> Option<(f64, f64)> {
    let mut counts = Vec::new();
    for g in gens {
        if g.is_empty() {
            continue;
        }
        let mut distinct = 0;
        for i in 0..g.len() {
            if !g[..i].contains(&g[i]) {
                distinct += 1;
            }
        }
        counts.push(distinct as f64);
    }
    if counts.is_empty() {
        return None;
    }
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean) * (c - mean)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

pub fn brute_canned(gens: &[Vec<u32>], templates: &[Vec<u32>]) -> f64 {
    if gens.is_empty() {
        return 0.0;
    }
    let mut hits = 0;
    for g in gens {
        if templates.iter().any(|t| t == g) {
            hits += 1;
        }
    }
    100.0 * hits as f64 / gens.len() as f64
}

pub fn brute_ppl(m: &ModelParams, pairs: &[DialoguePair]) -> f64 {
    let mut nll = 0.0;
    let mut n = 0usize;
    for pair in pairs {
        let gold = ref_target(pair);
        for t in 0..gold.len() {
            nll -= ref_probs(m, &pair.context, &gold[..t])[gold[t] as usize].ln();
            n += 1;
        }
    }
    (nll / n as f64).exp()
}

pub struct GradReport {
    pub checked: usize,
    pub worst_rel: f64,
    pub failures: Vec<String>,
}

fn random_model(r: &mut ChaCha8Rng, arch: Arch) -> ModelParams {
    let mut m = lot_core::lm::init_model(arch, r.gen()).unwrap();
    // larger output weights give peaked, less uniform distributions
    for w in m.params.out_w.iter_mut() {
        *w *= 3.0;
    }
    m
}

/// Compares library gradients of the MLE and full contrastive losses with
/// finite differences of the reference losses over `instances` random
/// (model, batch) draws.
pub fn gradient_check(instances: usize, seed: u64, kind: DivergenceKind, rtol: f64) -> GradReport {
    use lot_core::lm::backward;
    use lot_core::lotloss::{LotObjective, MleObjective};

    let mut r = rng(seed);
    let mut rep = GradReport {
        checked: 0,
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    for inst in 0..instances {
        let arch = Arch {
            vocab: r.gen_range(8..=32),
            embed: r.gen_range(2..=4),
            hidden: r.gen_range(3..=6),
            window: r.gen_range(2..=4),
        };
        let model = random_model(&mut r, arch);
        let tau = random_model(&mut r, arch);
        let safe = random_model(&mut r, arch);
        let batch: Vec<DialoguePair> = (0..r.gen_range(1..=3))
            .map(|_| random_pair(&mut r, arch.vocab, 6))
            .collect();
        let cfg = LotConfig {
            div_kind: kind,
            gamma: r.gen_range(0.2..1.0),
            lambda_: r.gen_range(0.2..1.0),
            xi: r.gen_range(0.5..1.5),
            ..LotConfig::default()
        };

        let mle = backward(&model, &batch, &MleObjective).unwrap().grads.grads;
        let obj = LotObjective::new(&model, &tau, &safe, cfg).unwrap();
        let lot = backward(&model, &batch, &obj).unwrap().grads.grads;

        let n = model.params.len();
        for k in 0..n {
            for (name, analytic) in [("mle", mle.get(k)), ("lot", lot.get(k))] {
                let mut probe = model.clone();
                let x0 = probe.params.get(k);
                let mut f = |x: f64| {
                    *probe.params.get_mut(k) = x;
                    if name == "mle" {
                        ref_mle_batch(&probe, &batch)
                    } else {
                        ref_lot_batch(&probe, &tau, &safe, &batch, &cfg)
                    }
                };
                let numeric = fd5(&mut f, x0, 1e-4);
                if analytic.abs() <= 1e-8 {
                    continue;
                }
                rep.checked += 1;
                let rel = (analytic - numeric).abs() / analytic.abs();
                rep.worst_rel = rep.worst_rel.max(rel);
                if rel > rtol {
                    rep.failures.push(format!(
                        "instance {inst} {name} param {k}: analytic {analytic:e} numeric {numeric:e}"
                    ));
                }
            }
        }
    }
    rep
}

/// Checks js_grad_p along random directions that keep the total mass fixed.
pub fn js_tangent_check(trials: usize, seed: u64, rtol: f64) -> GradReport {
    use lot_core::divergence::js_grad_p;
    use lot_core::lm::CategoricalDist;

    let mut r = rng(seed);
    let mut rep = GradReport {
        checked: 0,
        worst_rel: 0.0,
        failures: Vec::new(),
    };
    for trial in 0..trials {
        let n = [2, 8, 50][trial % 3];
        let p = random_dist(&mut r, n);
        let q = random_dist(&mut r, n);
        let mut v: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
        let mean = v.iter().sum::<f64>() / n as f64;
        for x in v.iter_mut() {
            *x -= mean;
        }
        let g = js_grad_p(
            &CategoricalDist::new(p.clone()).unwrap(),
            &CategoricalDist::new(q.clone()).unwrap(),
        )
        .unwrap();
        let analytic: f64 = g.iter().zip(&v).map(|(a, b)| a * b).sum();
        let pmin = p.iter().cloned().fold(f64::MAX, f64::min);
        let vmax = v.iter().map(|x| x.abs()).fold(0.0, f64::max);
        // stay inside the simplex for every stencil point
        let h = (pmin / vmax * 0.1).min(1e-4);
        let mut f = |t: f64| {
            let pt: Vec<f64> = p.iter().zip(&v).map(|(a, b)| a + t * b).collect();
            ref_js(&pt, &q)
        };
        let numeric = fd5(&mut f, 0.0, h);
        if analytic.abs() <= 1e-8 {
            continue;
        }
        rep.checked += 1;
        let rel = (analytic - numeric).abs() / analytic.abs();
        rep.worst_rel = rep.worst_rel.max(rel);
        if rel > rtol {
            rep.failures
                .push(format!("trial {trial}: analytic {analytic:e} numeric {numeric:e}"));
        }
    }
    rep
}
