mod common;

use common::*;
use lot_core::divergence::{js, js_grad_p, kl};
use lot_core::lm::{
    checkpoint_from_json, checkpoint_to_json, init_model, load_checkpoint, save_checkpoint, Arch, CategoricalDist,
};
use lot_core::lotloss::{lot_loss, mle_loss, LotConfig};
use proptest::prelude::*;

fn dist_pair() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::sample::select(vec![2usize, 3, 8, 50]).prop_flat_map(|n| {
        (
            prop::collection::vec(1e-6f64..1.0, n),
            prop::collection::vec(1e-6f64..1.0, n),
        )
    })
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn cd(v: &[f64]) -> CategoricalDist {
    CategoricalDist::new(v.to_vec()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn divergence_bounds((a, b) in dist_pair()) {
        let (p, q) = (normalize(&a), normalize(&b));
        let (p, q) = (cd(&p), cd(&q));
        let k = kl(&p, &q).unwrap().value_nats;
        let j = js(&p, &q).unwrap().value_nats;
        prop_assert!(k >= 0.0);
        prop_assert!(j >= 0.0);
        prop_assert!(j <= std::f64::consts::LN_2 + 1e-9);
        prop_assert!((j - js(&q, &p).unwrap().value_nats).abs() <= 1e-12);
        prop_assert!(js(&p, &p).unwrap().value_nats <= 1e-12);
        prop_assert!((j - ref_js(p.probs(), q.probs())).abs() <= 1e-12);
        prop_assert!((k - ref_kl(p.probs(), q.probs())).abs() <= 1e-9 * k.max(1.0));
    }

    #[test]
    fn js_step_moves_the_right_way((a, b) in dist_pair()) {
        // a small step against the gradient lowers JS, along it raises JS
        let (p, q) = (normalize(&a), normalize(&b));
        let g = js_grad_p(&cd(&p), &cd(&q)).unwrap();
        let mean = g.iter().sum::<f64>() / g.len() as f64;
        let dir: Vec<f64> = g.iter().map(|x| x - mean).collect();
        let pmin = p.iter().cloned().fold(f64::MAX, f64::min);
        let dmax = dir.iter().map(|x| x.abs()).fold(0.0, f64::max);
        prop_assume!(dmax > 1e-9);
        let h = (0.01 * pmin / dmax).min(0.1);
        // first-order change; skip cases lost in rounding
        prop_assume!(h * dir.iter().map(|d| d * d).sum::<f64>() > 1e-12);
        let step = |s: f64| -> f64 {
            let pt: Vec<f64> = p.iter().zip(&dir).map(|(x, d)| x + s * h * d).collect();
            ref_js(&pt, &q)
        };
        let j0 = ref_js(&p, &q);
        prop_assert!(step(-1.0) < j0);
        prop_assert!(step(1.0) > j0);
    }

    #[test]
    fn loss_degenerates_to_mle(seed in 0u64..10_000, len in 1usize..7) {
        let mut r = rng(seed);
        let n = 8;
        let beta: Vec<CategoricalDist> = (0..len).map(|_| cd(&random_dist(&mut r, n))).collect();
        let tau: Vec<CategoricalDist> = (0..len).map(|_| cd(&random_dist(&mut r, n))).collect();
        let safe: Vec<CategoricalDist> = (0..len).map(|_| cd(&random_dist(&mut r, n))).collect();
        let gold: Vec<u32> = (0..len).map(|i| (i % n) as u32).collect();
        let mle = mle_loss(&beta, &gold).unwrap();
        let zero = LotConfig { gamma: 0.0, lambda_: 0.0, xi: 1.7, ..LotConfig::default() };
        prop_assert!((lot_loss(&beta, &tau, &safe, &gold, &zero).unwrap().total - 1.7 * mle).abs() <= 1e-12);
        let same = LotConfig { xi: 0.9, ..LotConfig::default() };
        prop_assert!((lot_loss(&beta, &beta, &beta, &gold, &same).unwrap().total - 0.9 * mle).abs() <= 1e-9);
    }

    #[test]
    fn checkpoints_roundtrip(seed in 0u64..1000, v in 8usize..40, e in 2usize..5, h in 2usize..6, w in 1usize..5) {
        let m = init_model(Arch { vocab: v, embed: e, hidden: h, window: w }, seed).unwrap();
        let bytes = save_checkpoint(&m);
        prop_assert_eq!(&load_checkpoint(&bytes).unwrap(), &m);
        prop_assert_eq!(&checkpoint_from_json(&checkpoint_to_json(&m)).unwrap(), &m);
        for cut in [0, 7, bytes.len() / 2, bytes.len() - 1] {
            prop_assert!(load_checkpoint(&bytes[..cut]).is_err());
        }
    }
}
