//! Baseline critic: its own feature embedding and LSTM encoder, then a
//! two-layer perceptron on the final hidden state.
//!
//! The critic reads the BS sequence in presentation order, so permuting the
//! BSs generally changes its output.

use serde::{Deserialize, Serialize};

use super::graph::{Graph, Var};
use super::layers::{name, Linear, LstmCellParams, ParamSet};
use super::policy::PolicyConfig;
use super::{NnError, Tensor};
use crate::rng::SplitRng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticParams {
    pub input: Linear,
    pub encoder: LstmCellParams,
    /// `H -> H`, followed by ReLU.
    pub hidden: Linear,
    /// `H -> 1`.
    pub head: Linear,
}

impl ParamSet for CriticParams {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor)) {
        self.input.visit(&name(prefix, "input"), f);
        self.encoder.visit(&name(prefix, "encoder"), f);
        self.hidden.visit(&name(prefix, "hidden"), f);
        self.head.visit(&name(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Tensor)) {
        self.input.visit_mut(&name(prefix, "input"), f);
        self.encoder.visit_mut(&name(prefix, "encoder"), f);
        self.hidden.visit_mut(&name(prefix, "hidden"), f);
        self.head.visit_mut(&name(prefix, "head"), f);
    }
}

impl CriticParams {
    pub fn init(config: PolicyConfig, rng: &mut SplitRng) -> Self {
        let PolicyConfig { features, embed, hidden } = config;
        Self {
            input: Linear::init(rng, embed, features),
            encoder: LstmCellParams::init(rng, hidden, embed),
            hidden: Linear::init(rng, hidden, hidden),
            head: Linear::init(rng, 1, hidden),
        }
    }

    pub fn zeros(config: PolicyConfig) -> Self {
        let PolicyConfig { features, embed, hidden } = config;
        Self {
            input: Linear::zeros(embed, features),
            encoder: LstmCellParams::zeros(hidden, embed),
            hidden: Linear::zeros(hidden, hidden),
            head: Linear::zeros(1, hidden),
        }
    }

    pub fn config(&self) -> PolicyConfig {
        PolicyConfig {
            features: self.input.w.cols(),
            embed: self.input.w.rows(),
            hidden: self.encoder.hidden(),
        }
    }

    pub fn check(&self) -> Result<(), NnError> {
        let expected = Self::zeros(self.config());
        for (want, got) in expected.tensors().into_iter().zip(self.tensors()) {
            if want.shape() != got.shape() {
                return Err(NnError::ShapeMismatch(format!(
                    "critic tensor has shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(())
    }

    /// Registers the parameters on `g` and records the forward pass. Returns
    /// the scalar output.
    pub fn record(&self, g: &mut Graph, features: &[Vec<f64>]) -> Result<Var, NnError> {
        self.check()?;
        let cfg = self.config();
        if features.is_empty() {
            return Err(NnError::ShapeMismatch("at least one BS is required".into()));
        }
        if let Some(r) = features.iter().find(|r| r.len() != cfg.features) {
            return Err(NnError::ShapeMismatch(format!(
                "feature vector of length {}, expected {}",
                r.len(),
                cfg.features
            )));
        }
        let input = self.input.bind(g);
        let encoder = self.encoder.bind(g);
        let hidden = self.hidden.bind(g);
        let head = self.head.bind(g);
        let mut h = g.input(Tensor::zeros(&[cfg.hidden]));
        let mut c = g.input(Tensor::zeros(&[cfg.hidden]));
        for x in features {
            let x = g.input(Tensor::vector(x.clone()));
            let s = input.apply(g, x);
            (h, c) = encoder.step(g, h, c, s);
        }
        let z = hidden.apply(g, h);
        let a = g.relu(z);
        Ok(head.apply(g, a))
    }
}

pub fn critic_forward(params: &CriticParams, features: &[Vec<f64>]) -> Result<f64, NnError> {
    let mut g = Graph::new();
    let out = params.record(&mut g, features)?;
    Ok(g.scalar(out))
}
