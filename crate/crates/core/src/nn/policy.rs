//! Encoder-decoder split policy.
//!
//! The encoder LSTM reads the embedded BS features left to right. The
//! decoder starts from the encoder's final state; at step `t` its input is
//! the embedding of the split chosen at step `t - 1` (a learned start row at
//! `t = 0`) plus the embedding of BS `t`. The decoder state attends over the
//! encoder states, and `[h_t; context_t]` is projected to four logits. The
//! joint probability of a placement is the product of the per-step
//! probabilities.

use serde::{Deserialize, Serialize};

use super::graph::{softmax, Graph, Var};
use super::layers::{name, AttentionParams, Linear, LstmCellParams, ParamSet};
use super::{NnError, Tensor};
use crate::model::SplitOption;
use crate::rng::SplitRng;

const SPLITS: usize = SplitOption::COUNT;
/// Row of the split embedding table used before the first decision.
const START: usize = SPLITS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyConfig {
    pub features: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            features: crate::features::FEATURE_DIM,
            embed: 32,
            hidden: 32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    /// Feature embedding, `E x F`.
    pub input: Linear,
    pub encoder: LstmCellParams,
    pub decoder: LstmCellParams,
    pub attention: AttentionParams,
    /// Rows 0..4 embed the splits, row 4 is the start token; `5 x E`.
    pub split_embed: Tensor,
    /// `[h; context] -> logits`, `4 x 2H`.
    pub output: Linear,
}

impl ParamSet for PolicyParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.input.visit(&name(prefix, "input"), f);
        self.encoder.visit(&name(prefix, "encoder"), f);
        self.decoder.visit(&name(prefix, "decoder"), f);
        self.attention.visit(&name(prefix, "attention"), f);
        f(name(prefix, "split_embed"), &self.split_embed);
        self.output.visit(&name(prefix, "output"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input.visit_mut(&name(prefix, "input"), f);
        self.encoder.visit_mut(&name(prefix, "encoder"), f);
        self.decoder.visit_mut(&name(prefix, "decoder"), f);
        self.attention.visit_mut(&name(prefix, "attention"), f);
        f(name(prefix, "split_embed"), &mut self.split_embed);
        self.output.visit_mut(&name(prefix, "output"), f);
    }
}

impl PolicyParams {
    pub fn init(config: PolicyConfig, rng: &mut SplitRng) -> Self {
        let PolicyConfig { features, embed, hidden } = config;
        Self {
            input: Linear::init(rng, embed, features),
            encoder: LstmCellParams::init(rng, hidden, embed),
            decoder: LstmCellParams::init(rng, hidden, embed),
            attention: AttentionParams::init(rng, hidden),
            split_embed: super::layers::init_uniform(rng, &[SPLITS + 1, embed], embed),
            output: Linear::init(rng, SPLITS, 2 * hidden),
        }
    }

    pub fn zeros(config: PolicyConfig) -> Self {
        let PolicyConfig { features, embed, hidden } = config;
        Self {
            input: Linear::zeros(embed, features),
            encoder: LstmCellParams::zeros(hidden, embed),
            decoder: LstmCellParams::zeros(hidden, embed),
            attention: AttentionParams::zeros(hidden),
            split_embed: Tensor::zeros(&[SPLITS + 1, embed]),
            output: Linear::zeros(SPLITS, 2 * hidden),
        }
    }

    pub fn config(&self) -> PolicyConfig {
        PolicyConfig {
            features: self.input.w.cols(),
            embed: self.input.w.rows(),
            hidden: self.encoder.hidden(),
        }
    }

    /// Checks every tensor against the shapes implied by [`Self::config`].
    pub fn check(&self) -> Result<(), NnError> {
        let expected = Self::zeros(self.config());
        let mut shapes = Vec::new();
        expected.visit("", &mut |n, t| shapes.push((n, t.shape().to_vec())));
        for ((n, want), got) in shapes.iter().zip(self.tensors()) {
            if got.shape() != want.as_slice() {
                return Err(NnError::ShapeMismatch(format!(
                    "policy tensor {n} has shape {:?}, expected {want:?}",
                    got.shape()
                )));
            }
        }
        Ok(())
    }

    fn bind(&self, g: &mut Graph) -> PolicyVars {
        let input = self.input.bind(g);
        let encoder = self.encoder.bind(g);
        let decoder = self.decoder.bind(g);
        let attention = self.attention.bind(g);
        let split_embed = g.param(&self.split_embed);
        let output = self.output.bind(g);
        PolicyVars {
            input,
            encoder,
            decoder,
            attention,
            split_embed,
            output,
        }
    }
}

struct PolicyVars {
    input: super::layers::LinearVars,
    encoder: super::layers::LstmVars,
    decoder: super::layers::LstmVars,
    attention: super::layers::AttentionVars,
    split_embed: Var,
    output: super::layers::LinearVars,
}

/// How each step's split is chosen.
pub enum Decode<'a> {
    /// Draw from the step distribution.
    Sample(&'a mut SplitRng),
    /// Largest logit, lowest index on ties.
    Greedy,
    /// Replay the given splits.
    Forced(&'a [SplitOption]),
}

/// Result of one decode, in presentation order.
#[derive(Clone, Debug, PartialEq)]
pub struct Rollout {
    pub actions: Vec<SplitOption>,
    /// Sum of per-step log-probabilities of the chosen splits.
    pub log_prob: f64,
    /// Step distributions at the decoding temperature.
    pub step_probs: Vec<[f64; SPLITS]>,
    pub step_logits: Vec<[f64; SPLITS]>,
}

/// A recorded forward pass whose `log_prob` can be differentiated.
pub struct PolicyTrace {
    pub graph: Graph,
    pub log_prob: Var,
    pub rollout: Rollout,
}

fn check_inputs(params: &PolicyParams, features: &[Vec<f64>], t: f64) -> Result<(), NnError> {
    params.check()?;
    if features.is_empty() {
        return Err(NnError::ShapeMismatch("at least one BS is required".into()));
    }
    let f = params.config().features;
    if let Some(row) = features.iter().find(|r| r.len() != f) {
        return Err(NnError::ShapeMismatch(format!(
            "feature vector of length {}, expected {f}",
            row.len()
        )));
    }
    if !(t > 0.0) {
        return Err(NnError::InvalidTemperature(t));
    }
    Ok(())
}

fn argmax(logits: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate().skip(1) {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Runs the policy on a recorded graph.
///
/// `t` is the temperature of the output softmax; attention always uses
/// temperature 1.
pub fn policy_trace(
    params: &PolicyParams,
    features: &[Vec<f64>],
    mut mode: Decode<'_>,
    t: f64,
) -> Result<PolicyTrace, NnError> {
    check_inputs(params, features, t)?;
    if let Decode::Forced(actions) = &mode {
        if actions.len() != features.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} forced actions for {} steps",
                actions.len(),
                features.len()
            )));
        }
    }
    let hidden = params.config().hidden;
    let mut g = Graph::new();
    let v = params.bind(&mut g);

    let embedded: Vec<Var> = features
        .iter()
        .map(|x| {
            let x = g.input(Tensor::vector(x.clone()));
            v.input.apply(&mut g, x)
        })
        .collect();

    let mut h = g.input(Tensor::zeros(&[hidden]));
    let mut c = g.input(Tensor::zeros(&[hidden]));
    let mut states = Vec::with_capacity(features.len());
    for &s in &embedded {
        (h, c) = v.encoder.step(&mut g, h, c, s);
        states.push(h);
    }
    let enc = g.stack_rows(&states);
    let keys = v.attention.project_keys(&mut g, enc);

    let mut prev = START;
    let mut chosen_lp = Vec::with_capacity(features.len());
    let mut rollout = Rollout {
        actions: Vec::with_capacity(features.len()),
        log_prob: 0.0,
        step_probs: Vec::with_capacity(features.len()),
        step_logits: Vec::with_capacity(features.len()),
    };
    for (step, &s) in embedded.iter().enumerate() {
        let e = g.row(v.split_embed, prev);
        let x = g.add(e, s);
        (h, c) = v.decoder.step(&mut g, h, c, x);
        let (ctx, _) = v.attention.attend(&mut g, h, enc, keys, 1.0);
        let z = g.concat(&[h, ctx]);
        let logits = v.output.apply(&mut g, z);
        let lv: [f64; SPLITS] = g.value(logits).data().try_into().expect("four logits");
        let probs: [f64; SPLITS] = softmax(&lv, t).try_into().expect("four probabilities");
        let o = match &mut mode {
            Decode::Sample(rng) => rng.categorical(&probs),
            Decode::Greedy => argmax(&lv),
            Decode::Forced(actions) => actions[step].index(),
        };
        let logp = g.log_softmax(logits, t);
        let lp = g.index(logp, o);
        chosen_lp.push(lp);
        rollout.actions.push(SplitOption::ALL[o]);
        rollout.step_probs.push(probs);
        rollout.step_logits.push(lv);
        prev = o;
    }
    let all = g.concat(&chosen_lp);
    let log_prob = g.sum(all);
    rollout.log_prob = g.scalar(log_prob);
    Ok(PolicyTrace {
        graph: g,
        log_prob,
        rollout,
    })
}

/// Decodes one placement for the BS sequence `features`.
pub fn policy_forward(
    params: &PolicyParams,
    features: &[Vec<f64>],
    mode: Decode<'_>,
    t: f64,
) -> Result<Rollout, NnError> {
    policy_trace(params, features, mode, t).map(|tr| tr.rollout)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> (PolicyParams, Vec<Vec<f64>>) {
        let cfg = PolicyConfig { features: 5, embed: 4, hidden: 4 };
        let mut rng = SplitRng::new(11);
        let p = PolicyParams::init(cfg, &mut rng);
        let feats = (0..3)
            .map(|i| (0..5).map(|j| ((i * 5 + j) as f64 * 0.37).sin()).collect())
            .collect();
        (p, feats)
    }

    #[test]
    fn zero_projection_is_uniform() {
        let (mut p, f) = small();
        p.output = Linear::zeros(4, 8);
        let r = policy_forward(&p, &f, Decode::Greedy, 1.0).unwrap();
        for probs in &r.step_probs {
            assert!(probs.iter().all(|&x| x == 0.25));
        }
        assert!((r.log_prob - 3.0 * 0.25f64.ln()).abs() < 1e-12);
        assert_eq!(r.actions, vec![SplitOption::S0; 3]);
    }

    #[test]
    fn greedy_deterministic_and_temperature_free() {
        let (p, f) = small();
        let a = policy_forward(&p, &f, Decode::Greedy, 1.0).unwrap();
        let b = policy_forward(&p, &f, Decode::Greedy, 1.0).unwrap();
        assert_eq!(a, b);
        for t in [1e-3, 0.5, 15.0, 1e4] {
            let c = policy_forward(&p, &f, Decode::Greedy, t).unwrap();
            assert_eq!(a.actions, c.actions);
        }
    }

    #[test]
    fn log_prob_is_sum_of_chosen_logs() {
        let (p, f) = small();
        let mut rng = SplitRng::new(3);
        let r = policy_forward(&p, &f, Decode::Sample(&mut rng), 2.0).unwrap();
        let sum: f64 = r
            .actions
            .iter()
            .zip(&r.step_probs)
            .map(|(a, probs)| probs[a.index()].ln())
            .sum();
        assert!((sum - r.log_prob).abs() < 1e-12);
        for probs in &r.step_probs {
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_count_matches_params() {
        let (p, f) = small();
        let mut tr = policy_trace(&p, &f, Decode::Greedy, 1.0).unwrap();
        let grads = tr.graph.backward(tr.log_prob).unwrap();
        let tensors = p.tensors();
        assert_eq!(grads.len(), tensors.len());
        for (g, t) in grads.iter().zip(tensors) {
            assert_eq!(g.shape(), t.shape());
        }
    }

    #[test]
    fn bad_inputs() {
        let (p, f) = small();
        assert!(policy_forward(&p, &[], Decode::Greedy, 1.0).is_err());
        assert!(policy_forward(&p, &[vec![0.0; 4]], Decode::Greedy, 1.0).is_err());
        assert!(policy_forward(&p, &f, Decode::Greedy, 0.0).is_err());
        assert!(policy_forward(&p, &f, Decode::Forced(&[SplitOption::S1]), 1.0).is_err());
    }
}
