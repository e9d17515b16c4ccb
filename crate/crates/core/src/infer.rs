//! Test-time search over pretrained policies.
//!
//! Candidates are pooled over all models. The cheapest feasible candidate
//! wins, ties going to the lexicographically smallest split vector. When no
//! candidate is feasible, the one with the lowest penalized cost (all
//! coefficients 1) is returned and flagged infeasible.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{scaled_features, sequence};
use crate::model::{evaluate, EvalReport, ModelError, Scenario, SplitAssignment, SplitOption};
use crate::nn::{policy_forward, Decode, NnError, PolicyParams};
use crate::rng::{derive_seed, SplitRng};
use crate::train::{cost_scale, TrainedModel};

/// Sampling temperature used at test time.
pub const DEFAULT_TEMPERATURE: f64 = 15.0;
/// Samples per model at test time.
pub const DEFAULT_SAMPLES: usize = 16;

#[derive(Debug, Error)]
pub enum InferError {
    #[error("at least one model is required")]
    NoModels,
    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),
    #[error("sample count must be at least 1")]
    NoSamples,
    #[error("presentation order is not a permutation of the {0} DUs")]
    BadOrder(usize),
    #[error("negative optimality gap: candidate {candidate} below reference {reference}")]
    NegativeGap { candidate: f64, reference: f64 },
    #[error("reference is not a feasible solution")]
    InfeasibleReference,
    #[error("gap undefined: reference cost is zero and candidate cost is {0}")]
    ZeroReference(f64),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = InferError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Greedy,
    Temperature { t: f64, samples: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub assignment: SplitAssignment,
    pub report: EvalReport,
    pub feasible: bool,
    /// Penalized cost with unit coefficients; equals `J` when feasible.
    pub penalized: f64,
    pub candidates: usize,
}

struct Pool<'a> {
    scenario: &'a Scenario,
    scale: f64,
    best: Option<Inference>,
    count: usize,
}

impl Pool<'_> {
    fn offer(&mut self, assignment: SplitAssignment) -> Result<()> {
        self.count += 1;
        let report = evaluate(self.scenario, &assignment)?;
        let feasible = report.feasible;
        let penalized =
            report.total_cost + self.scale * crate::model::penalization(&report, &[1.0; 4])?;
        let cand = Inference {
            assignment,
            report,
            feasible,
            penalized,
            candidates: 0,
        };
        let better = match &self.best {
            None => true,
            Some(b) => {
                let key = |c: &Inference| {
                    if c.feasible {
                        (0u8, c.report.total_cost)
                    } else {
                        (1u8, c.penalized)
                    }
                };
                let (ka, kb) = (key(&cand), key(b));
                ka.0 < kb.0
                    || (ka.0 == kb.0
                        && (ka.1 < kb.1 || (ka.1 == kb.1 && cand.assignment < b.assignment)))
            }
        };
        if better {
            self.best = Some(cand);
        }
        Ok(())
    }

    fn finish(self) -> Inference {
        let mut best = self.best.expect("at least one candidate");
        best.candidates = self.count;
        best
    }
}

fn check_order(n: usize, order: &[usize]) -> Result<()> {
    let mut seen = vec![false; n];
    if order.len() != n {
        return Err(InferError::BadOrder(n));
    }
    for &k in order {
        if k >= n || seen[k] {
            return Err(InferError::BadOrder(n));
        }
        seen[k] = true;
    }
    Ok(())
}

/// Decodes one placement in presentation order `order` and maps it back to
/// DU order.
pub fn decode(
    policy: &PolicyParams,
    scenario: &Scenario,
    order: &[usize],
    mode: Decode<'_>,
    t: f64,
) -> Result<SplitAssignment> {
    let feats = sequence(&scaled_features(scenario), order, None);
    let rollout = policy_forward(policy, &feats, mode, t)?;
    let mut splits = vec![SplitOption::S0; order.len()];
    for (pos, &k) in order.iter().enumerate() {
        splits[k] = rollout.actions[pos];
    }
    Ok(SplitAssignment(splits))
}

/// Best candidate over the models' decodes.
///
/// `order` is the BS presentation order (identity when `None`). For the
/// temperature strategy each model contributes its greedy decode plus
/// `samples` draws at temperature `t`; the draws of model `m`, sample `s`
/// use a stream derived from `(seed, m, s)`.
pub fn infer(
    models: &[TrainedModel],
    scenario: &Scenario,
    strategy: Strategy,
    seed: u64,
    order: Option<&[usize]>,
) -> Result<Inference> {
    if models.is_empty() {
        return Err(InferError::NoModels);
    }
    if let Strategy::Temperature { t, samples } = strategy {
        if !(t > 0.0) {
            return Err(InferError::InvalidTemperature(t));
        }
        if samples == 0 {
            return Err(InferError::NoSamples);
        }
    }
    scenario.validate()?;
    let n = scenario.du_count();
    let identity: Vec<usize> = (0..n).collect();
    let order = order.unwrap_or(&identity);
    check_order(n, order)?;
    if n == 0 {
        let assignment = SplitAssignment(Vec::new());
        let report = evaluate(scenario, &assignment)?;
        return Ok(Inference {
            penalized: report.total_cost,
            feasible: report.feasible,
            assignment,
            report,
            candidates: 1,
        });
    }

    let mut pool = Pool {
        scenario,
        scale: cost_scale(scenario),
        best: None,
        count: 0,
    };
    for (m, model) in models.iter().enumerate() {
        pool.offer(decode(&model.policy, scenario, order, Decode::Greedy, 1.0)?)?;
        if let Strategy::Temperature { t, samples } = strategy {
            for s in 0..samples {
                let mut rng = SplitRng::new(derive_seed(seed, &[m as u64, s as u64]));
                pool.offer(decode(&model.policy, scenario, order, Decode::Sample(&mut rng), t)?)?;
            }
        }
    }
    Ok(pool.finish())
}

pub fn infer_greedy(
    models: &[TrainedModel],
    scenario: &Scenario,
    order: Option<&[usize]>,
) -> Result<Inference> {
    infer(models, scenario, Strategy::Greedy, 0, order)
}

pub fn infer_temperature(
    models: &[TrainedModel],
    scenario: &Scenario,
    t: f64,
    samples: usize,
    seed: u64,
    order: Option<&[usize]>,
) -> Result<Inference> {
    infer(models, scenario, Strategy::Temperature { t, samples }, seed, order)
}

/// `100 (J_candidate - J_reference) / J_reference`.
pub fn optimality_gap(candidate: &EvalReport, reference: &EvalReport) -> Result<f64> {
    if !reference.feasible {
        return Err(InferError::InfeasibleReference);
    }
    let (c, r) = (candidate.total_cost, reference.total_cost);
    if c < r {
        return Err(InferError::NegativeGap {
            candidate: c,
            reference: r,
        });
    }
    if r == 0.0 {
        return if c == 0.0 {
            Ok(0.0)
        } else {
            Err(InferError::ZeroReference(c))
        };
    }
    Ok(100.0 * (c - r) / r)
}
