//! Evaluation protocol: gap histograms over permuted BS orders, routing and
//! traffic sweeps, and solver timing.
//!
//! Every experiment writes one CSV plus a JSON manifest into the output
//! directory. Rows carry the assignment as a digit string so that they can be
//! re-evaluated later with [`revalidate_histogram`] or [`revalidate_sweep`].

pub mod benchmark;

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exact::{solve_bruteforce, solve_exact, ExactError};
use crate::infer::{infer, optimality_gap, InferError, Strategy, DEFAULT_SAMPLES, DEFAULT_TEMPERATURE};
use crate::model::{
    evaluate, fixed_baseline_cost, BaselineMode, EvalReport, ModelError, Scenario, SplitAssignment,
    SplitOption,
};
use crate::rng::{derive_seed, SplitRng};
use crate::train::{TrainError, TrainedModel};
use benchmark::GeneratedScenario;

const ORDER_TAG: u64 = 0x0DE5;
const SAMPLE_TAG: u64 = 0x5A3F;

/// Relative tolerance when a logged cost is recomputed.
pub const REVALIDATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("solver {solver} needs checkpoints: {detail}")]
    MissingCheckpoint { solver: SolverKind, detail: String },
    #[error("the reference scenario has no feasible assignment")]
    InfeasibleReference,
    #[error("row {row}: {message}")]
    Revalidation { row: usize, message: String },
    #[error(transparent)]
    Exact(#[from] ExactError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SolverKind {
    Exact,
    BruteForce,
    #[serde(rename = "CDRS-Fixed-G")]
    CdrsFixedG,
    #[serde(rename = "CDRS-Fixed-T")]
    CdrsFixedT,
    #[serde(rename = "CDRS-Ada-G")]
    CdrsAdaG,
    #[serde(rename = "CDRS-Ada-T")]
    CdrsAdaT,
    #[serde(rename = "DRAN")]
    Dran,
    #[serde(rename = "CRAN")]
    Cran,
}

impl SolverKind {
    pub const ALL: [SolverKind; 8] = [
        Self::Exact,
        Self::BruteForce,
        Self::CdrsFixedG,
        Self::CdrsFixedT,
        Self::CdrsAdaG,
        Self::CdrsAdaT,
        Self::Dran,
        Self::Cran,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::Exact => "Exact",
            Self::BruteForce => "BruteForce",
            Self::CdrsFixedG => "CDRS-Fixed-G",
            Self::CdrsFixedT => "CDRS-Fixed-T",
            Self::CdrsAdaG => "CDRS-Ada-G",
            Self::CdrsAdaT => "CDRS-Ada-T",
            Self::Dran => "DRAN",
            Self::Cran => "CRAN",
        }
    }

    /// Whether the result depends on the BS presentation order.
    pub fn order_sensitive(self) -> bool {
        matches!(self, Self::CdrsFixedG | Self::CdrsFixedT | Self::CdrsAdaG | Self::CdrsAdaT)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        Self::ALL
            .into_iter()
            .find(|k| k.name().to_ascii_lowercase() == key)
            .ok_or_else(|| ExperimentError::InvalidSpec(format!("unknown solver {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioSource {
    /// A scenario JSON file.
    File(PathBuf),
    Generated(GeneratedScenario),
    /// [`benchmark::standard`].
    Standard,
    /// [`benchmark::large`].
    Large,
}

impl ScenarioSource {
    pub fn load(&self) -> Result<Scenario> {
        Ok(match self {
            Self::File(p) => crate::io::load_scenario(p)?,
            Self::Generated(g) => g.build()?,
            Self::Standard => benchmark::standard(),
            Self::Large => benchmark::large(),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Scale every link's routing cost by the value.
    Routing,
    /// Set every BS load to the value, in Mbps.
    Traffic,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Routing => "routing",
            Self::Traffic => "traffic",
        }
    }

    pub fn apply(self, scenario: &Scenario, value: f64) -> Scenario {
        match self {
            Self::Routing => scenario.with_routing_scale(value),
            Self::Traffic => scenario.with_uniform_traffic(value),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSet {
    /// Checkpoints trained with fixed penalty coefficients.
    pub fixed: Vec<PathBuf>,
    /// Checkpoints trained with adaptive coefficients.
    pub ada: Vec<PathBuf>,
    pub temperature: f64,
    pub samples: usize,
}

impl Default for ModelSet {
    fn default() -> Self {
        Self {
            fixed: Vec::new(),
            ada: Vec::new(),
            temperature: DEFAULT_TEMPERATURE,
            samples: DEFAULT_SAMPLES,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSource,
    pub solvers: Vec<SolverKind>,
    #[serde(default)]
    pub sweep: Option<Sweep>,
    /// Permuted-order tests per point.
    #[serde(default = "default_tests")]
    pub tests: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub models: ModelSet,
    /// Timed runs per solver in [`run_timing`].
    #[serde(default = "default_tests")]
    pub repetitions: usize,
    /// Wall-clock limit for each exact solve, in seconds.
    #[serde(default)]
    pub exact_time_budget_s: Option<f64>,
    pub output_dir: PathBuf,
}

fn default_tests() -> usize {
    128
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioSource, solvers: Vec<SolverKind>, output_dir: PathBuf) -> Self {
        Self {
            scenario,
            solvers,
            sweep: None,
            tests: default_tests(),
            seed: 0,
            models: ModelSet::default(),
            repetitions: default_tests(),
            exact_time_budget_s: None,
            output_dir,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::InvalidSpec(m));
        if self.solvers.is_empty() {
            return bad("at least one solver is required".into());
        }
        if self.tests == 0 {
            return bad("tests per point must be at least 1".into());
        }
        if let Some(s) = &self.sweep {
            if s.values.is_empty() {
                return bad("sweep has no values".into());
            }
            if let Some(v) = s.values.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
                return bad(format!("sweep value {v} is not positive"));
            }
        }
        if self.solvers.iter().any(|k| matches!(k, SolverKind::CdrsFixedT | SolverKind::CdrsAdaT)) {
            let m = &self.models;
            if !(m.temperature > 0.0 && m.temperature.is_finite()) {
                return bad(format!("temperature {}", m.temperature));
            }
            if m.samples == 0 {
                return bad("sample count must be at least 1".into());
            }
        }
        if let Some(b) = self.exact_time_budget_s {
            if !(b >= 0.0 && b.is_finite()) {
                return bad(format!("exact time budget {b}"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("spec serializes");
        hex::encode(Sha256::digest(json))
    }

    fn exact_budget(&self) -> Option<Duration> {
        self.exact_time_budget_s.map(Duration::from_secs_f64)
    }
}

/// Checkpoints loaded for the CDRS solvers of a spec.
#[derive(Clone, Debug, Default)]
pub struct Models {
    pub fixed: Vec<TrainedModel>,
    pub ada: Vec<TrainedModel>,
}

impl Models {
    /// Loads the checkpoints the spec's solvers need.
    pub fn load(spec: &ExperimentSpec) -> Result<Self> {
        let mut out = Models::default();
        let needs = |a, b| spec.solvers.contains(&a) || spec.solvers.contains(&b);
        let groups = [
            (needs(SolverKind::CdrsFixedG, SolverKind::CdrsFixedT), &spec.models.fixed, SolverKind::CdrsFixedG),
            (needs(SolverKind::CdrsAdaG, SolverKind::CdrsAdaT), &spec.models.ada, SolverKind::CdrsAdaG),
        ];
        for (needed, paths, solver) in groups {
            if !needed {
                continue;
            }
            if paths.is_empty() {
                return Err(ExperimentError::MissingCheckpoint {
                    solver,
                    detail: "no checkpoint paths given".into(),
                });
            }
            let mut loaded = Vec::with_capacity(paths.len());
            for p in paths {
                if !p.is_file() {
                    return Err(ExperimentError::MissingCheckpoint {
                        solver,
                        detail: format!("{} does not exist", p.display()),
                    });
                }
                loaded.push(TrainedModel::load(p)?);
            }
            if solver == SolverKind::CdrsFixedG {
                out.fixed = loaded;
            } else {
                out.ada = loaded;
            }
        }
        Ok(out)
    }

    fn for_solver(&self, kind: SolverKind) -> Result<&[TrainedModel]> {
        let set = match kind {
            SolverKind::CdrsFixedG | SolverKind::CdrsFixedT => &self.fixed,
            _ => &self.ada,
        };
        if set.is_empty() {
            return Err(ExperimentError::MissingCheckpoint {
                solver: kind,
                detail: "no models loaded".into(),
            });
        }
        Ok(set)
    }
}

/// Result of one solver on one instance. `assignment` is `None` when the
/// solver proves or reports that nothing feasible exists.
#[derive(Clone, Debug, PartialEq)]
pub struct SolverOutcome {
    pub assignment: Option<SplitAssignment>,
    pub report: Option<EvalReport>,
    pub feasible: bool,
}

impl SolverOutcome {
    fn from_report(assignment: SplitAssignment, report: EvalReport) -> Self {
        Self {
            feasible: report.feasible,
            assignment: Some(assignment),
            report: Some(report),
        }
    }

    fn none() -> Self {
        Self {
            assignment: None,
            report: None,
            feasible: false,
        }
    }

    pub fn cost(&self) -> Option<f64> {
        self.report.as_ref().map(|r| r.total_cost)
    }
}

/// Permutation used for test `test` of an experiment seeded with `seed`.
pub fn test_order(seed: u64, test: usize, n: usize) -> Vec<usize> {
    SplitRng::derive(seed, &[ORDER_TAG, test as u64]).permutation(n)
}

/// Sampling seed of test `test`.
pub fn test_sample_seed(seed: u64, test: usize) -> u64 {
    derive_seed(seed, &[SAMPLE_TAG, test as u64])
}

/// Runs one solver on `scenario`. `order` and `seed` only affect the CDRS
/// solvers.
pub fn run_solver(
    kind: SolverKind,
    scenario: &Scenario,
    spec: &ExperimentSpec,
    models: &Models,
    order: &[usize],
    seed: u64,
) -> Result<SolverOutcome> {
    let n = scenario.du_count();
    match kind {
        SolverKind::Exact => match solve_exact(scenario, spec.exact_budget()) {
            Ok(sol) => Ok(SolverOutcome::from_report(sol.assignment, sol.report)),
            Err(ExactError::Infeasible | ExactError::Timeout) => Ok(SolverOutcome::none()),
            Err(e) => Err(e.into()),
        },
        SolverKind::BruteForce => match solve_bruteforce(scenario) {
            Ok((a, r)) => Ok(SolverOutcome::from_report(a, r)),
            Err(ExactError::Infeasible) => Ok(SolverOutcome::none()),
            Err(e) => Err(e.into()),
        },
        SolverKind::Dran | SolverKind::Cran => {
            let split = if kind == SolverKind::Dran { SplitOption::S0 } else { SplitOption::S3 };
            let a = SplitAssignment::uniform(split, n);
            let r = evaluate(scenario, &a)?;
            Ok(SolverOutcome::from_report(a, r))
        }
        SolverKind::CdrsFixedG | SolverKind::CdrsAdaG | SolverKind::CdrsFixedT | SolverKind::CdrsAdaT => {
            let strategy = if matches!(kind, SolverKind::CdrsFixedG | SolverKind::CdrsAdaG) {
                Strategy::Greedy
            } else {
                Strategy::Temperature {
                    t: spec.models.temperature,
                    samples: spec.models.samples,
                }
            };
            let res = infer(models.for_solver(kind)?, scenario, strategy, seed, Some(order))?;
            Ok(SolverOutcome::from_report(res.assignment, res.report))
        }
    }
}

/// Gap histogram bins, in percent.
pub const BIN_LABELS: [&str; 8] = [
    "0",
    "(0,0.05]",
    "(0.05,0.1]",
    "(0.1,0.5]",
    "(0.5,1]",
    "(1,5]",
    "(5,inf)",
    "infeasible",
];

pub fn gap_bin(gap: Option<f64>) -> usize {
    match gap {
        None => 7,
        Some(g) if g <= 0.0 => 0,
        Some(g) if g <= 0.05 => 1,
        Some(g) if g <= 0.1 => 2,
        Some(g) if g <= 0.5 => 3,
        Some(g) if g <= 1.0 => 4,
        Some(g) if g <= 5.0 => 5,
        Some(_) => 6,
    }
}

fn order_string(order: &[usize]) -> String {
    order.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("-")
}

fn digits(a: &Option<SplitAssignment>) -> String {
    a.as_ref().map(|a| a.to_digits()).unwrap_or_default()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub test: usize,
    pub solver: SolverKind,
    pub order: String,
    pub assignment: String,
    #[serde(rename = "J")]
    pub cost: Option<f64>,
    pub feasible: bool,
    /// Percent above the exact optimum; empty when infeasible.
    pub gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BinRow {
    solver: SolverKind,
    bin: String,
    count: usize,
}

#[derive(Clone, Debug)]
pub struct HistogramReport {
    pub reference: EvalReport,
    pub rows: Vec<HistogramRow>,
    pub bins: BTreeMap<SolverKind, [usize; 8]>,
    pub tests_csv: PathBuf,
    pub bins_csv: PathBuf,
    pub manifest: PathBuf,
}

impl HistogramReport {
    /// Gaps of `solver`, one per test; `None` marks an infeasible result.
    pub fn gaps(&self, solver: SolverKind) -> Vec<Option<f64>> {
        self.rows.iter().filter(|r| r.solver == solver).map(|r| r.gap).collect()
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    experiment: &'a str,
    version: &'a str,
    spec_sha256: String,
    seed: u64,
    spec: &'a ExperimentSpec,
    checkpoints: Vec<(String, String)>,
    outputs: Vec<String>,
}

fn checkpoint_hashes(spec: &ExperimentSpec) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for p in spec.models.fixed.iter().chain(&spec.models.ada) {
        if p.is_file() {
            let bytes = std::fs::read(p)?;
            out.push((p.display().to_string(), hex::encode(Sha256::digest(bytes))));
        }
    }
    Ok(out)
}

fn write_manifest(spec: &ExperimentSpec, experiment: &str, outputs: &[&Path]) -> Result<PathBuf> {
    let manifest = Manifest {
        experiment,
        version: env!("CARGO_PKG_VERSION"),
        spec_sha256: spec.hash(),
        seed: spec.seed,
        spec,
        checkpoints: checkpoint_hashes(spec)?,
        outputs: outputs
            .iter()
            .map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default())
            .collect(),
    };
    let path = spec.output_dir.join(format!("{experiment}_manifest.json"));
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(&path, text)?;
    Ok(path)
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<std::result::Result<Vec<T>, _>>()?;
    Ok(rows)
}

fn prepare(spec: &ExperimentSpec) -> Result<(Scenario, Models)> {
    spec.validate()?;
    let scenario = spec.scenario.load()?;
    let models = Models::load(spec)?;
    std::fs::create_dir_all(&spec.output_dir)?;
    Ok((scenario, models))
}

/// Runs every solver on `spec.tests` presentation orders of the scenario and
/// compares each result with the exact optimum.
pub fn run_gap_histogram(spec: &ExperimentSpec) -> Result<HistogramReport> {
    let (scenario, models) = prepare(spec)?;
    let n = scenario.du_count();
    let reference = match solve_exact(&scenario, spec.exact_budget()) {
        Ok(sol) => sol.report,
        Err(ExactError::Infeasible | ExactError::Timeout) => {
            return Err(ExperimentError::InfeasibleReference)
        }
        Err(e) => return Err(e.into()),
    };

    let mut fixed: BTreeMap<SolverKind, SolverOutcome> = BTreeMap::new();
    let mut rows = Vec::with_capacity(spec.tests * spec.solvers.len());
    let mut bins: BTreeMap<SolverKind, [usize; 8]> = BTreeMap::new();
    for test in 0..spec.tests {
        let order = test_order(spec.seed, test, n);
        let seed = test_sample_seed(spec.seed, test);
        for &kind in &spec.solvers {
            let outcome = if kind.order_sensitive() {
                run_solver(kind, &scenario, spec, &models, &order, seed)?
            } else {
                match fixed.get(&kind) {
                    Some(o) => o.clone(),
                    None => {
                        let o = run_solver(kind, &scenario, spec, &models, &order, seed)?;
                        fixed.insert(kind, o.clone());
                        o
                    }
                }
            };
            let gap = match (&outcome.report, outcome.feasible) {
                (Some(r), true) => Some(optimality_gap(r, &reference)?),
                _ => None,
            };
            bins.entry(kind).or_insert([0; 8])[gap_bin(gap)] += 1;
            rows.push(HistogramRow {
                test,
                solver: kind,
                order: order_string(&order),
                assignment: digits(&outcome.assignment),
                cost: outcome.cost(),
                feasible: outcome.feasible,
                gap,
            });
        }
    }

    let tests_csv = spec.output_dir.join("histogram_tests.csv");
    let bins_csv = spec.output_dir.join("histogram_bins.csv");
    write_csv(&tests_csv, &rows)?;
    let bin_rows: Vec<BinRow> = bins
        .iter()
        .flat_map(|(&solver, counts)| {
            BIN_LABELS.iter().zip(counts).map(move |(label, &count)| BinRow {
                solver,
                bin: label.to_string(),
                count,
            })
        })
        .collect();
    write_csv(&bins_csv, &bin_rows)?;
    let manifest = write_manifest(spec, "histogram", &[&tests_csv, &bins_csv])?;
    Ok(HistogramReport {
        reference,
        rows,
        bins,
        tests_csv,
        bins_csv,
        manifest,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    pub value: f64,
    pub test: usize,
    pub solver: SolverKind,
    pub assignment: String,
    #[serde(rename = "J")]
    pub cost: Option<f64>,
    pub feasible: bool,
    /// Cost of the all-S3 placement at this point.
    #[serde(rename = "J_cran")]
    pub cran_cost: f64,
    /// `J / J_cran`.
    #[serde(rename = "J_norm")]
    pub normalized: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

impl SweepReport {
    /// `(value, J)` of `solver` in test 0 at every sweep point.
    pub fn series(&self, solver: SolverKind) -> Vec<(f64, Option<f64>)> {
        self.rows
            .iter()
            .filter(|r| r.solver == solver && r.test == 0)
            .map(|r| (r.value, r.cost))
            .collect()
    }
}

/// Reruns every solver at each sweep point. Paths stay those of the base
/// scenario; only routing weights or loads change.
pub fn run_sweep(spec: &ExperimentSpec) -> Result<SweepReport> {
    let sweep = spec
        .sweep
        .clone()
        .ok_or_else(|| ExperimentError::InvalidSpec("no sweep axis given".into()))?;
    let (base, models) = prepare(spec)?;
    let n = base.du_count();
    let mut rows = Vec::new();
    for &value in &sweep.values {
        let scenario = sweep.axis.apply(&base, value);
        let cran = fixed_baseline_cost(&scenario, BaselineMode::Cran).total_cost;
        for &kind in &spec.solvers {
            let tests = if kind.order_sensitive() { spec.tests } else { 1 };
            for test in 0..tests {
                let order = test_order(spec.seed, test, n);
                let seed = test_sample_seed(spec.seed, test);
                let outcome = run_solver(kind, &scenario, spec, &models, &order, seed)?;
                let cost = outcome.cost();
                rows.push(SweepRow {
                    axis: sweep.axis,
                    value,
                    test,
                    solver: kind,
                    assignment: digits(&outcome.assignment),
                    cost,
                    feasible: outcome.feasible,
                    cran_cost: cran,
                    normalized: cost.map(|c| c / cran),
                });
            }
        }
    }
    let csv = spec.output_dir.join(format!("sweep_{}.csv", sweep.axis.name()));
    write_csv(&csv, &rows)?;
    let manifest = write_manifest(spec, &format!("sweep_{}", sweep.axis.name()), &[&csv])?;
    Ok(SweepReport { rows, csv, manifest })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub solver: SolverKind,
    pub repetitions: usize,
    pub mean_s: f64,
    /// Mean exact time over this solver's mean; empty without an exact run.
    pub speedup_vs_exact: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

impl TimingReport {
    pub fn mean(&self, solver: SolverKind) -> Option<f64> {
        self.rows.iter().find(|r| r.solver == solver).map(|r| r.mean_s)
    }
}

/// Mean wall-clock time of a single solve per solver, after one untimed
/// warm-up run.
pub fn run_timing(spec: &ExperimentSpec) -> Result<TimingReport> {
    if spec.repetitions == 0 {
        return Err(ExperimentError::InvalidSpec("repetitions must be at least 1".into()));
    }
    let (scenario, models) = prepare(spec)?;
    let order: Vec<usize> = (0..scenario.du_count()).collect();
    let seed = test_sample_seed(spec.seed, 0);
    let mut means = Vec::with_capacity(spec.solvers.len());
    for &kind in &spec.solvers {
        run_solver(kind, &scenario, spec, &models, &order, seed)?;
        let start = Instant::now();
        for _ in 0..spec.repetitions {
            std::hint::black_box(run_solver(kind, &scenario, spec, &models, &order, seed)?);
        }
        means.push((kind, start.elapsed().as_secs_f64() / spec.repetitions as f64));
        log::info!("{kind}: {:.6} s per solve", means.last().unwrap().1);
    }
    let exact = means.iter().find(|(k, _)| *k == SolverKind::Exact).map(|(_, m)| *m);
    let rows: Vec<TimingRow> = means
        .into_iter()
        .map(|(solver, mean_s)| TimingRow {
            solver,
            repetitions: spec.repetitions,
            mean_s,
            speedup_vs_exact: exact.map(|e| e / mean_s),
        })
        .collect();
    let csv = spec.output_dir.join("timing.csv");
    write_csv(&csv, &rows)?;
    let manifest = write_manifest(spec, "timing", &[&csv])?;
    Ok(TimingReport { rows, csv, manifest })
}

fn check_cost(row: usize, scenario: &Scenario, assignment: &str, logged: Option<f64>, feasible: bool) -> Result<()> {
    let fail = |message: String| Err(ExperimentError::Revalidation { row, message });
    match (assignment.is_empty(), logged) {
        (true, None) => return Ok(()),
        (true, Some(_)) | (false, None) => return fail("assignment and cost disagree".into()),
        _ => {}
    }
    let Some(a) = SplitAssignment::from_digits(assignment) else {
        return fail(format!("unparsable assignment {assignment:?}"));
    };
    if a.len() != scenario.du_count() {
        return fail(format!("assignment has {} entries, scenario has {} DUs", a.len(), scenario.du_count()));
    }
    let report = evaluate(scenario, &a)?;
    let logged = logged.unwrap_or(f64::NAN);
    let scale = report.total_cost.abs().max(logged.abs()).max(f64::MIN_POSITIVE);
    if !((report.total_cost - logged).abs() <= REVALIDATION_TOL * scale) {
        return fail(format!("logged J {logged} but evaluation gives {}", report.total_cost));
    }
    if report.feasible != feasible {
        return fail(format!("logged feasible = {feasible}, evaluation says {}", report.feasible));
    }
    Ok(())
}

/// Re-reads a histogram CSV and re-evaluates every logged assignment.
/// Returns the number of rows checked.
pub fn revalidate_histogram(path: &Path, scenario: &Scenario) -> Result<usize> {
    let rows: Vec<HistogramRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        check_cost(i, scenario, &r.assignment, r.cost, r.feasible)?;
    }
    Ok(rows.len())
}

/// Like [`revalidate_histogram`] for sweep CSVs; each row is evaluated on
/// the base scenario moved to the row's sweep point.
pub fn revalidate_sweep(path: &Path, base: &Scenario) -> Result<usize> {
    let rows: Vec<SweepRow> = read_csv(path)?;
    for (i, r) in rows.iter().enumerate() {
        let s = r.axis.apply(base, r.value);
        check_cost(i, &s, &r.assignment, r.cost, r.feasible)?;
        if let Some(norm) = r.normalized {
            let want = r.cost.unwrap_or(f64::NAN) / r.cran_cost;
            if !((norm - want).abs() <= REVALIDATION_TOL * want.abs().max(f64::MIN_POSITIVE)) {
                return Err(ExperimentError::Revalidation {
                    row: i,
                    message: format!("J_norm {norm} but J / J_cran = {want}"),
                });
            }
        }
    }
    Ok(rows.len())
}
