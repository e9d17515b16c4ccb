use std::collections::HashMap;

use vran_core::model::SplitOption;
use vran_core::nn::{
    critic_forward, lstm_step, policy_forward, CriticParams, Decode, Linear, LstmCellParams,
    PolicyConfig, PolicyParams, Tensor,
};
use vran_core::rng::SplitRng;

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn affine(w: &Tensor, b: &Tensor, x: &[f64]) -> Vec<f64> {
    (0..w.rows())
        .map(|r| w.row(r).iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b.data()[r])
        .collect()
}

fn linear(l: &Linear, x: &[f64]) -> Vec<f64> {
    affine(&l.w, &l.b, x)
}

/// Plain-loop LSTM step over `[h; s]`.
fn reference_lstm(p: &LstmCellParams, h: &[f64], c: &[f64], s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hs: Vec<f64> = h.iter().chain(s).copied().collect();
    let f = affine(&p.w_f, &p.b_f, &hs);
    let r = affine(&p.w_r, &p.b_r, &hs);
    let g = affine(&p.w_c, &p.b_c, &hs);
    let o = affine(&p.w_o, &p.b_o, &hs);
    let mut h2 = Vec::new();
    let mut c2 = Vec::new();
    for i in 0..h.len() {
        let ci = sig(f[i]) * c[i] + sig(r[i]) * g[i].tanh();
        c2.push(ci);
        h2.push(sig(o[i]) * ci.tanh());
    }
    (h2, c2)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

#[test]
fn lstm_step_matches_plain_loops() {
    let mut rng = SplitRng::new(5);
    for (hid, inp) in [(1, 1), (4, 3), (7, 5)] {
        let p = LstmCellParams::init(&mut rng, hid, inp);
        let h: Vec<f64> = (0..hid).map(|_| rng.range(-1.0, 1.0)).collect();
        let c: Vec<f64> = (0..hid).map(|_| rng.range(-2.0, 2.0)).collect();
        let s: Vec<f64> = (0..inp).map(|_| rng.range(-1.0, 1.0)).collect();
        let (h2, c2) = lstm_step(&p, &h, &c, &s).unwrap();
        let (rh, rc) = reference_lstm(&p, &h, &c, &s);
        assert!(close(&h2, &rh, 1e-13), "{h2:?} vs {rh:?}");
        assert!(close(&c2, &rc, 1e-13), "{c2:?} vs {rc:?}");
    }
}

#[test]
fn critic_matches_plain_loops() {
    let mut rng = SplitRng::new(6);
    let cfg = PolicyConfig { embed: 3, hidden: 5, ..PolicyConfig::default() };
    let p = CriticParams::init(cfg, &mut rng);
    for n in [1, 2, 6] {
        let feats: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| rng.uniform()).collect()).collect();
        let mut h = vec![0.0; 5];
        let mut c = vec![0.0; 5];
        for x in &feats {
            let s = linear(&p.input, x);
            (h, c) = reference_lstm(&p.encoder, &h, &c, &s);
        }
        let a: Vec<f64> = linear(&p.hidden, &h).into_iter().map(|v| v.max(0.0)).collect();
        let want = linear(&p.head, &a)[0];
        let got = critic_forward(&p, &feats).unwrap();
        assert!((got - want).abs() <= 1e-13 * (1.0 + want.abs()), "{got} vs {want}");
    }
}

/// Sampled joint frequencies of a three-BS policy against the product of its
/// per-step conditionals.
#[test]
fn sampling_follows_chain_rule() {
    let mut rng = SplitRng::new(8);
    let params = PolicyParams::init(PolicyConfig { embed: 4, hidden: 4, ..PolicyConfig::default() }, &mut rng);
    let feats: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| rng.uniform()).collect()).collect();
    let t = 2.0;
    let draws = 60_000;
    let mut counts: HashMap<Vec<SplitOption>, usize> = HashMap::new();
    let mut srng = SplitRng::new(9);
    for _ in 0..draws {
        let r = policy_forward(&params, &feats, Decode::Sample(&mut srng), t).unwrap();
        *counts.entry(r.actions).or_default() += 1;
    }
    let mut total = 0.0;
    for a in SplitOption::ALL {
        for b in SplitOption::ALL {
            for c in SplitOption::ALL {
                let seq = [a, b, c];
                let p = policy_forward(&params, &feats, Decode::Forced(&seq), t).unwrap().log_prob.exp();
                total += p;
                let freq = *counts.get(seq.as_slice()).unwrap_or(&0) as f64 / draws as f64;
                let sd = (p * (1.0 - p) / draws as f64).sqrt();
                assert!((freq - p).abs() <= 5.0 * sd + 1e-4, "{seq:?}: {freq} vs {p}");
            }
        }
    }
    assert!((total - 1.0).abs() < 1e-12, "probabilities sum to {total}");
}
