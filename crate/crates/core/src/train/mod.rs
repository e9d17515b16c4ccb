//! Constrained policy-gradient training with a learned baseline.
//!
//! Each epoch draws `B` presentations of the training scenario (a random BS
//! order and, with augmentation on, random scales of the load and routing
//! feature columns), samples a placement from the policy for each, and
//! scores it with the penalized cost `L = J + xi`. The agent follows
//! `(1/B) sum (L - b) grad log pi`, the critic regresses `b` onto `L`, and in
//! adaptive mode every penalty coefficient moves by `eta_d` times the
//! batch-mean dissatisfaction of its constraint family, clipped at zero.
//!
//! The penalty is `xi = J_DRAN * sum_i mu_i C_i`, where `J_DRAN` is the
//! all-S0 cost of the scenario. Costs fed to the agent and critic are divided
//! by `J_DRAN`.
//!
//! All randomness of epoch `e`, sample `i` comes from a stream derived from
//! `(seed, e, i)`, so a resumed run continues exactly where the original
//! would have.

pub mod adam;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{scaled_features, sequence, Features};
use crate::model::{
    evaluate, fixed_baseline_cost, BaselineMode, ModelError, Scenario, SplitAssignment,
    SplitOption, FAMILIES,
};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::policy::policy_trace;
use crate::nn::{CriticParams, Decode, Graph, NnError, ParamSet, PolicyConfig, PolicyParams, Tensor};
use crate::rng::{derive_seed, SplitRng};
pub use adam::{clip_global_norm, Adam};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("non-finite value during training: {0}")]
    NonFiniteLoss(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum PenaltyMode {
    /// Constant coefficients.
    Fixed { mu: [f64; FAMILIES] },
    /// Dual ascent from `mu0` with step `lr`.
    Adaptive { mu0: [f64; FAMILIES], lr: f64 },
}

impl PenaltyMode {
    pub fn initial(&self) -> [f64; FAMILIES] {
        match self {
            Self::Fixed { mu } => *mu,
            Self::Adaptive { mu0, .. } => *mu0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr_agent: f64,
    pub lr_critic: f64,
    pub penalty: PenaltyMode,
    pub seed: u64,
    /// Save a checkpoint every this many epochs (0 disables).
    pub checkpoint_every: usize,
    /// Randomly rescale the load and routing features of every episode.
    pub augment: bool,
    /// Global gradient-norm clip for the agent and critic.
    pub clip_norm: Option<f64>,
    pub network: PolicyConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch: 128,
            lr_agent: 1e-4,
            lr_critic: 5e-3,
            penalty: PenaltyMode::Fixed { mu: [1.0; FAMILIES] },
            seed: 0,
            checkpoint_every: 0,
            augment: true,
            clip_norm: None,
            network: PolicyConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adaptive() -> Self {
        Self {
            penalty: PenaltyMode::Adaptive { mu0: [1.0; FAMILIES], lr: 1e-3 },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.batch == 0 {
            return bad("batch must be at least 1".into());
        }
        if !(self.lr_agent > 0.0 && self.lr_critic > 0.0) {
            return bad("learning rates must be positive".into());
        }
        let mu = self.penalty.initial();
        if mu.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return bad(format!("penalty coefficients {mu:?}"));
        }
        if let PenaltyMode::Adaptive { lr, .. } = self.penalty {
            if !(lr >= 0.0 && lr.is_finite()) {
                return bad(format!("dual step {lr}"));
            }
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return bad(format!("clip norm {c}"));
            }
        }
        let n = self.network;
        if n.embed == 0 || n.hidden == 0 || n.features != crate::features::FEATURE_DIM {
            return bad(format!("network {n:?}"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of `(L - b) log pi` in normalized units.
    pub loss: f64,
    /// Mean total cost `J`.
    pub cost: f64,
    /// Mean penalization `xi`.
    pub penalty: f64,
    /// Mean `L = J + xi`.
    pub lagrangian: f64,
    /// Coefficients used during the epoch.
    pub mu: [f64; FAMILIES],
    pub critic_loss: f64,
    /// Batch variance of normalized `L`.
    pub var_l: f64,
    /// Batch variance of the advantage `L - b`.
    pub var_adv: f64,
    /// Fraction of sampled placements that were feasible.
    pub feasible_rate: f64,
}

#[derive(Serialize)]
struct CsvRow {
    epoch: usize,
    loss: f64,
    #[serde(rename = "J")]
    cost: f64,
    xi: f64,
    #[serde(rename = "L")]
    lagrangian: f64,
    mu_cu: f64,
    mu_du: f64,
    mu_link: f64,
    mu_delay: f64,
    critic_loss: f64,
}

impl EpochLog {
    fn csv_row(&self) -> CsvRow {
        CsvRow {
            epoch: self.epoch,
            loss: self.loss,
            cost: self.cost,
            xi: self.penalty,
            lagrangian: self.lagrangian,
            mu_cu: self.mu[0],
            mu_du: self.mu[1],
            mu_link: self.mu[2],
            mu_delay: self.mu[3],
            critic_loss: self.critic_loss,
        }
    }
}

/// Streams epoch records as CSV with the header
/// `epoch,loss,J,xi,L,mu_cu,mu_du,mu_link,mu_delay,critic_loss`.
pub struct LogWriter<W: std::io::Write> {
    inner: csv::Writer<W>,
}

impl<W: std::io::Write> LogWriter<W> {
    pub fn new(w: W) -> Self {
        Self {
            inner: csv::Writer::from_writer(w),
        }
    }

    pub fn write(&mut self, e: &EpochLog) -> Result<()> {
        self.inner.serialize(e.csv_row())?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    let mut w = LogWriter::new(std::fs::File::create(path)?);
    for e in log {
        w.write(e)?;
    }
    Ok(())
}

/// Everything needed to continue a run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub policy: PolicyParams,
    pub critic: CriticParams,
    pub policy_opt: Adam,
    pub critic_opt: Adam,
    pub mu: [f64; FAMILIES],
    /// Next epoch to run.
    pub epoch: usize,
    pub seed: u64,
}

const INIT_TAG: u64 = 0x1417;

impl TrainState {
    pub fn new(config: &TrainConfig) -> Self {
        let mut rng = SplitRng::derive(config.seed, &[INIT_TAG]);
        let policy = PolicyParams::init(config.network, &mut rng);
        let critic = CriticParams::init(config.network, &mut rng);
        Self {
            policy_opt: Adam::new(config.lr_agent, &policy),
            critic_opt: Adam::new(config.lr_critic, &critic),
            policy,
            critic,
            mu: config.penalty.initial(),
            epoch: 0,
            seed: config.seed,
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::default();
        ck.push_set("policy", &self.policy);
        ck.push_set("critic", &self.critic);
        for (name, opt) in [("adam.policy", &self.policy_opt), ("adam.critic", &self.critic_opt)] {
            for (i, (m, v)) in opt.m.iter().zip(&opt.v).enumerate() {
                ck.push_tensor(format!("{name}.m.{i}"), m.clone());
                ck.push_tensor(format!("{name}.v.{i}"), v.clone());
            }
        }
        ck.push_tensor("mu", Tensor::vector(self.mu.to_vec()));
        ck.push_meta("epoch", self.epoch as u64);
        ck.push_meta("seed", self.seed);
        ck.push_meta("adam.policy.step", self.policy_opt.step);
        ck.push_meta("adam.critic.step", self.critic_opt.step);
        ck.push_meta("lr_agent_bits", self.policy_opt.lr.to_bits());
        ck.push_meta("lr_critic_bits", self.critic_opt.lr.to_bits());
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let missing = |n: &str| NnError::Checkpoint(format!("missing {n}"));
        let shape = |n: &str| ck.tensor(n).map(|t| t.shape().to_vec()).ok_or_else(|| missing(n));
        let input = shape("policy.input.w")?;
        let enc = shape("policy.encoder.w_f")?;
        if input.len() != 2 || enc.len() != 2 {
            return Err(NnError::Checkpoint("bad network shapes".into()).into());
        }
        let network = PolicyConfig {
            features: input[1],
            embed: input[0],
            hidden: enc[0],
        };
        let mut policy = PolicyParams::zeros(network);
        ck.fill_set("policy", &mut policy)?;
        let mut critic = CriticParams::zeros(network);
        ck.fill_set("critic", &mut critic)?;
        let meta = |n: &str| ck.meta(n).ok_or_else(|| missing(n));
        let load_opt = |name: &str, lr_bits: u64, step: u64, set: &dyn Fn() -> Vec<Vec<usize>>| {
            let mut m = Vec::new();
            let mut v = Vec::new();
            for (i, s) in set().iter().enumerate() {
                let mt = ck.tensor(&format!("{name}.m.{i}")).ok_or_else(|| missing(name))?;
                let vt = ck.tensor(&format!("{name}.v.{i}")).ok_or_else(|| missing(name))?;
                if mt.shape() != s.as_slice() || vt.shape() != s.as_slice() {
                    return Err(NnError::Checkpoint(format!("{name} moment shape")));
                }
                m.push(mt.clone());
                v.push(vt.clone());
            }
            Ok(Adam {
                lr: f64::from_bits(lr_bits),
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                step,
                m,
                v,
            })
        };
        let pshapes = || policy.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let cshapes = || critic.tensors().iter().map(|t| t.shape().to_vec()).collect();
        let policy_opt = load_opt(
            "adam.policy",
            meta("lr_agent_bits")?,
            meta("adam.policy.step")?,
            &pshapes,
        )?;
        let critic_opt = load_opt(
            "adam.critic",
            meta("lr_critic_bits")?,
            meta("adam.critic.step")?,
            &cshapes,
        )?;
        let mu_t = ck.tensor("mu").ok_or_else(|| missing("mu"))?;
        let mu: [f64; FAMILIES] = mu_t
            .data()
            .try_into()
            .map_err(|_| NnError::Checkpoint("mu must have four entries".into()))?;
        Ok(Self {
            policy,
            critic,
            policy_opt,
            critic_opt,
            mu,
            epoch: meta("epoch")? as usize,
            seed: meta("seed")?,
        })
    }
}

/// A trained policy/critic pair, as used at inference time.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainedModel {
    pub policy: PolicyParams,
    pub critic: CriticParams,
    pub mu: [f64; FAMILIES],
}

impl TrainedModel {
    pub fn load(path: &Path) -> Result<Self> {
        let s = TrainState::from_checkpoint(&Checkpoint::load(path)?)?;
        Ok(s.into())
    }
}

impl From<TrainState> for TrainedModel {
    fn from(s: TrainState) -> Self {
        Self {
            policy: s.policy,
            critic: s.critic,
            mu: s.mu,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub log: Vec<EpochLog>,
}

/// Penalized cost of an assignment, `(J, xi, family aggregates, feasible)`.
pub fn penalized_cost(
    scenario: &Scenario,
    assignment: &SplitAssignment,
    mu: &[f64; FAMILIES],
    scale: f64,
) -> Result<(f64, f64, [f64; FAMILIES], bool)> {
    let report = evaluate(scenario, assignment)?;
    let xi = scale * crate::model::penalization(&report, mu)?;
    Ok((
        report.total_cost,
        xi,
        report.violations.family_aggregates(),
        report.feasible,
    ))
}

/// Cost scale `J_DRAN` used for the penalty and the normalized returns.
pub fn cost_scale(scenario: &Scenario) -> f64 {
    let j = fixed_baseline_cost(scenario, BaselineMode::Dran).total_cost;
    if j > 0.0 {
        j
    } else {
        1.0
    }
}

fn variance(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n
}

const EPISODE_TAG: u64 = 0xE915;

fn add_scaled(acc: &mut [Tensor], grads: &[Tensor], s: f64) {
    for (a, g) in acc.iter_mut().zip(grads) {
        a.data_mut().iter_mut().zip(g.data()).for_each(|(x, y)| *x += s * y);
    }
}

fn zeros_like(set: &impl ParamSet) -> Vec<Tensor> {
    set.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect()
}

/// Runs one epoch on `state`, advancing it.
pub fn train_epoch(
    config: &TrainConfig,
    scenario: &Scenario,
    features: &[Features],
    scale: f64,
    state: &mut TrainState,
) -> Result<EpochLog> {
    let n = scenario.du_count();
    let b = config.batch;
    let epoch = state.epoch;
    let mu = state.mu;

    let mut g_policy = zeros_like(&state.policy);
    let mut g_critic = zeros_like(&state.critic);
    let mut costs = Vec::with_capacity(b);
    let mut penalties = Vec::with_capacity(b);
    let mut norm_l = Vec::with_capacity(b);
    let mut advs = Vec::with_capacity(b);
    let mut surrogate = 0.0;
    let mut critic_loss = 0.0;
    let mut family_sum = [0.0; FAMILIES];
    let mut feasible = 0usize;

    for i in 0..b {
        let mut rng = SplitRng::new(derive_seed(state.seed, &[EPISODE_TAG, epoch as u64, i as u64]));
        let order = rng.permutation(n);
        let aug = if config.augment {
            Some((rng.uniform(), rng.uniform()))
        } else {
            None
        };
        let seq = sequence(features, &order, aug);

        let mut trace = policy_trace(&state.policy, &seq, Decode::Sample(&mut rng), 1.0)?;
        let mut splits = vec![SplitOption::S0; n];
        for (pos, &k) in order.iter().enumerate() {
            splits[k] = trace.rollout.actions[pos];
        }
        let assignment = SplitAssignment(splits);
        let (j, xi, fam, ok) = penalized_cost(scenario, &assignment, &mu, scale)?;
        let l = (j + xi) / scale;

        let mut cg = Graph::new();
        let out = state.critic.record(&mut cg, &seq)?;
        let baseline = cg.scalar(out);
        let adv = l - baseline;
        let log_prob = trace.rollout.log_prob;
        if !(l.is_finite() && baseline.is_finite() && log_prob.is_finite()) {
            return Err(TrainError::NonFiniteLoss(format!(
                "epoch {epoch}, sample {i}: order {order:?}, assignment {}, J = {j}, xi = {xi}, \
                 baseline = {baseline}, log_prob = {log_prob}",
                assignment.to_digits()
            )));
        }

        let gp = trace.graph.backward(trace.log_prob)?;
        add_scaled(&mut g_policy, &gp, adv / b as f64);
        let gc = cg.backward(out)?;
        add_scaled(&mut g_critic, &gc, 2.0 * (baseline - l) / b as f64);

        surrogate += adv * log_prob;
        critic_loss += (baseline - l) * (baseline - l);
        for (s, c) in family_sum.iter_mut().zip(fam) {
            *s += c;
        }
        feasible += usize::from(ok);
        costs.push(j);
        penalties.push(xi);
        norm_l.push(l);
        advs.push(adv);
    }

    if let Some(c) = config.clip_norm {
        clip_global_norm(&mut g_policy, c);
        clip_global_norm(&mut g_critic, c);
    }
    for (name, grads) in [("policy", &g_policy), ("critic", &g_critic)] {
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteLoss(format!(
                "epoch {epoch}: {name} gradient is not finite"
            )));
        }
    }
    state.policy_opt.update(&mut state.policy, &g_policy);
    state.critic_opt.update(&mut state.critic, &g_critic);

    if let PenaltyMode::Adaptive { lr, .. } = config.penalty {
        for (m, s) in state.mu.iter_mut().zip(family_sum) {
            *m = (*m + lr * s / b as f64).max(0.0);
        }
    }
    state.epoch += 1;

    let bf = b as f64;
    let cost = costs.iter().sum::<f64>() / bf;
    let penalty = penalties.iter().sum::<f64>() / bf;
    let lagrangian = costs.iter().zip(&penalties).map(|(j, x)| j + x).sum::<f64>() / bf;
    Ok(EpochLog {
        epoch,
        loss: surrogate / bf,
        cost,
        penalty,
        lagrangian,
        mu,
        critic_loss: critic_loss / bf,
        var_l: variance(&norm_l),
        var_adv: variance(&advs),
        feasible_rate: feasible as f64 / bf,
    })
}

/// Where and how often a run persists itself.
#[derive(Clone, Debug, Default)]
pub struct TrainOutput {
    /// Directory for `checkpoint_<epoch>.ckpt` files.
    pub checkpoint_dir: Option<PathBuf>,
    /// CSV log path, written as epochs finish.
    pub log_csv: Option<PathBuf>,
}

/// Continues `state` until `config.epochs` epochs have run.
pub fn train_from(
    config: &TrainConfig,
    scenario: &Scenario,
    mut state: TrainState,
    output: &TrainOutput,
) -> Result<TrainOutcome> {
    config.validate()?;
    scenario.validate()?;
    if scenario.du_count() == 0 {
        return Err(TrainError::InvalidConfig("scenario has no DUs".into()));
    }
    let features = scaled_features(scenario);
    let scale = cost_scale(scenario);
    let mut writer = match &output.log_csv {
        Some(p) => Some(LogWriter::new(std::fs::File::create(p)?)),
        None => None,
    };
    let mut log = Vec::with_capacity(config.epochs.saturating_sub(state.epoch));
    while state.epoch < config.epochs {
        let entry = train_epoch(config, scenario, &features, scale, &mut state)?;
        if let Some(w) = writer.as_mut() {
            w.write(&entry)?;
        }
        if entry.epoch % 100 == 0 {
            log::info!(
                "epoch {}: J {:.4} xi {:.4} feasible {:.2} mu {:?}",
                entry.epoch,
                entry.cost,
                entry.penalty,
                entry.feasible_rate,
                entry.mu
            );
        }
        log.push(entry);
        if config.checkpoint_every > 0 && state.epoch % config.checkpoint_every == 0 {
            if let Some(dir) = &output.checkpoint_dir {
                state
                    .to_checkpoint()
                    .save(&dir.join(format!("checkpoint_{:06}.ckpt", state.epoch)))?;
            }
        }
    }
    Ok(TrainOutcome { state, log })
}

pub fn train(config: &TrainConfig, scenario: &Scenario) -> Result<TrainOutcome> {
    train_from(config, scenario, TrainState::new(config), &TrainOutput::default())
}

/// Trains `m` models; model `k` uses seed `config.seed + k`. With a
/// directory, each final state is saved as `model_<k>.ckpt`.
pub fn pretrain_ensemble(
    config: &TrainConfig,
    scenario: &Scenario,
    m: usize,
    dir: Option<&Path>,
) -> Result<Vec<TrainOutcome>> {
    if m == 0 {
        return Err(TrainError::InvalidConfig("model count must be at least 1".into()));
    }
    (0..m)
        .map(|k| {
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(k as u64),
                ..config.clone()
            };
            let out = train(&cfg, scenario)?;
            if let Some(d) = dir {
                out.state.to_checkpoint().save(&d.join(format!("model_{k}.ckpt")))?;
            }
            Ok(out)
        })
        .collect()
}
