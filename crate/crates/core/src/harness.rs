//! Experiment driver: configuration documents, fidelity sweeps with bound checks,
//! scaling-exponent fits and result files.

use std::path::{Path, PathBuf};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::circuit::{
    build_doubled_circuit, build_query_circuit, ideal_oracle_output, plus_bus_input, QueryCircuit, RouterInit, ScheduleKind,
};
use crate::error::{Error, Result};
use crate::noise::{
    bound_coherent_doubled, bound_coherent_two_level, bound_lemma_two_level, bound_theorem1, bound_theorem3, bound_theorem4,
    bound_theorem5_classical, bound_theorem5_insitu, trial_rng, trajectory_fidelity, ChannelKind, FidelityEstimate, NoiseDecl,
    NoiseModel, C64, DEFAULT_A,
};
use crate::sparse_state::{RegisterLayout, SparseState};
use crate::topology::{build_tree, RouterModel, TreeTopology};
use crate::twirl::{build_edge_twirled_circuit, dress_circuit, sample_edge_frame, sample_twirl_frame};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    AllWait,
    AllZero,
    RandomBasis,
    RandomPhase,
    Supplied,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwirlMode {
    #[default]
    None,
    InSitu,
    EdgeClassical,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AddressState {
    /// Equal superposition of all addresses.
    #[default]
    Uniform,
    /// `(|0...0> + |1...1>) / sqrt 2`.
    Ghz,
    /// Normalized complex Gaussian amplitudes, drawn per grid cell.
    Random,
    Basis(usize),
}

fn default_schedule() -> ScheduleKind {
    ScheduleKind::Serial
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub variant: RouterModel,
    pub init: InitMode,
    pub n_min: usize,
    pub n_max: usize,
    #[serde(default = "default_schedule")]
    pub schedule: ScheduleKind,
    #[serde(default)]
    pub address: AddressState,
    pub noise: Vec<NoiseDecl>,
    /// Strength grid; each value replaces the strength of every declaration.
    #[serde(default)]
    pub eps: Vec<f64>,
    #[serde(default)]
    pub twirl: TwirlMode,
    #[serde(default)]
    pub doubling: bool,
    pub trials: usize,
    pub seed: u64,
    /// Router initializations per grid point for the random modes.
    #[serde(default = "one")]
    pub init_samples: usize,
    #[serde(default)]
    pub router_digits: Option<Vec<u8>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |name: &str, what: &str| Err(Error::Config(format!("{name}: {what}")));
        if self.n_min == 0 || self.n_min > self.n_max {
            return fail("n-range", "need 1 <= n_min <= n_max");
        }
        if self.trials == 0 || self.init_samples == 0 {
            return fail("positive-counts", "trials and init_samples must be positive");
        }
        let two = self.variant == RouterModel::TwoLevel;
        if two && self.init == InitMode::AllWait {
            return fail("wait-needs-three-level", "two-level routers have no wait state");
        }
        if !self.doubling {
            if !two && self.init != InitMode::AllWait {
                return fail("doubling-required", "three-level routers not initialized to all-wait need query doubling");
            }
            if two && self.init != InitMode::AllZero {
                return fail("doubling-required", "two-level routers with arbitrary initialization need query doubling");
            }
        }
        match self.twirl {
            TwirlMode::InSitu if !two => return fail("in-situ-two-level", "in-situ twirling needs two-level routers"),
            TwirlMode::InSitu if !self.doubling => return fail("in-situ-doubling", "in-situ twirling needs query doubling"),
            TwirlMode::EdgeClassical if two && !self.doubling => {
                return fail("edge-doubling", "edge twirling of two-level routers needs query doubling")
            }
            _ => {}
        }
        if self.init == InitMode::Supplied && self.router_digits.is_none() {
            return fail("supplied-digits", "supplied initialization needs router_digits");
        }
        if self.eps.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return fail("eps-range", "strengths must lie in [0, 1]");
        }
        if !self.eps.is_empty() && self.noise.iter().any(|d| matches!(d, NoiseDecl::Kraus { .. })) {
            return fail("eps-scalable", "explicit Kraus declarations cannot be rescaled by an eps grid");
        }
        if let AddressState::Basis(i) = self.address {
            if i >= 1 << self.n_min {
                return fail("address-range", "basis address exceeds the smallest tree");
            }
        }
        Ok(())
    }
}

/// Replaces the strength of a declaration: `p = eps`, or `sin^2 kappa = eps`.
pub fn with_strength(decl: &NoiseDecl, eps: f64) -> NoiseDecl {
    let mut d = decl.clone();
    match &mut d {
        NoiseDecl::Depolarizing { p, .. } | NoiseDecl::PauliSite { p, .. } | NoiseDecl::ClusterPauli { p, .. } => *p = eps,
        NoiseDecl::Coherent { kappa, .. } => *kappa = eps.sqrt().asin(),
        NoiseDecl::Kraus { .. } => {}
    }
    d
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundKind {
    Theorem1,
    LemmaTwoLevel,
    Theorem3,
    Theorem4,
    CoherentTwoLevel,
    CoherentDoubled,
    Theorem5InSitu,
    Theorem5Classical,
}

impl BoundKind {
    pub fn eval(self, eps: f64, tau: usize, n: usize) -> f64 {
        match self {
            BoundKind::Theorem1 => bound_theorem1(eps, tau, n),
            BoundKind::LemmaTwoLevel => bound_lemma_two_level(eps, tau, n),
            BoundKind::Theorem3 => bound_theorem3(eps, tau, n),
            BoundKind::Theorem4 => bound_theorem4(eps, tau, n, DEFAULT_A),
            BoundKind::CoherentTwoLevel => bound_coherent_two_level(eps, tau, n, DEFAULT_A),
            BoundKind::CoherentDoubled => bound_coherent_doubled(eps, tau, n, DEFAULT_A),
            BoundKind::Theorem5InSitu => bound_theorem5_insitu(eps, tau, n),
            BoundKind::Theorem5Classical => bound_theorem5_classical(eps, tau, n),
        }
    }

    /// Polynomial degree in `n` when `tau` grows linearly with `n`.
    pub fn degree(self) -> u32 {
        match self {
            BoundKind::Theorem1 | BoundKind::Theorem5InSitu => 2,
            BoundKind::LemmaTwoLevel | BoundKind::Theorem3 | BoundKind::Theorem5Classical => 3,
            BoundKind::Theorem4 => 4,
            BoundKind::CoherentTwoLevel | BoundKind::CoherentDoubled => 6,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundKind::Theorem1 => "theorem1",
            BoundKind::LemmaTwoLevel => "lemma-two-level",
            BoundKind::Theorem3 => "theorem3",
            BoundKind::Theorem4 => "theorem4",
            BoundKind::CoherentTwoLevel => "coherent-two-level",
            BoundKind::CoherentDoubled => "coherent-doubled",
            BoundKind::Theorem5InSitu => "theorem5-in-situ",
            BoundKind::Theorem5Classical => "theorem5-classical",
        }
    }
}

/// Bound applying to a setting. `fixed_init` means all-wait for three-level routers and
/// all-zero for two-level routers; `bernoulli` means every channel mixes identity with
/// an error sub-channel.
pub fn select_bound(variant: RouterModel, fixed_init: bool, twirl: TwirlMode, doubled: bool, bernoulli: bool) -> BoundKind {
    match twirl {
        TwirlMode::InSitu => return BoundKind::Theorem5InSitu,
        TwirlMode::EdgeClassical => return BoundKind::Theorem5Classical,
        TwirlMode::None => {}
    }
    let three = variant == RouterModel::ThreeLevel;
    match (doubled || !fixed_init, three, bernoulli) {
        (true, _, true) => BoundKind::Theorem3,
        (true, _, false) => BoundKind::CoherentDoubled,
        (false, true, true) => BoundKind::Theorem1,
        (false, true, false) => BoundKind::Theorem4,
        (false, false, true) => BoundKind::LemmaTwoLevel,
        (false, false, false) => BoundKind::CoherentTwoLevel,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub n: usize,
    pub tau: usize,
    pub strength: f64,
    pub eps: f64,
    pub variant: RouterModel,
    pub init: InitMode,
    pub twirl: TwirlMode,
    pub doubled: bool,
    pub init_index: usize,
    pub mean_f: f64,
    pub stderr: f64,
    pub trials: usize,
    pub bound: BoundKind,
    pub bound_value: f64,
    pub satisfied: bool,
}

impl SweepRow {
    pub fn infidelity(&self) -> f64 {
        1.0 - self.mean_f
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// `(n, hash)` of the untwirled circuit text of each tree size.
    pub circuit_hashes: Vec<(usize, String)>,
}

impl SweepResult {
    pub fn all_satisfied(&self) -> bool {
        self.rows.iter().all(|r| r.satisfied)
    }
}

/// Independent seed of grid cell `cell` under `seed`.
pub fn cell_seed(seed: u64, cell: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(cell);
    rng.next_u64()
}

/// Content hash with the same header convention as a version-control blob, over SHA-256.
pub fn content_hash(text: &str) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", text.len()).as_bytes());
    h.update(text.as_bytes());
    hex::encode(h.finalize())
}

/// Monte Carlo mean over `trials` trajectories fanned out to the worker pool.
pub fn estimate_parallel(trials: usize, seed: u64, f: impl Fn(u64, &mut ChaCha8Rng) -> Result<f64> + Sync) -> Result<FidelityEstimate> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let samples = (0..trials as u64)
        .into_par_iter()
        .map(|t| f(t, &mut trial_rng(seed, t)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(FidelityEstimate::from_samples(&samples, seed))
}

pub fn address_state(address: &AddressState, layout: &RegisterLayout, rng: &mut ChaCha8Rng) -> Result<SparseState<f64>> {
    let data = std::sync::Arc::new(layout.data_layout());
    let n = layout.address_len();
    let amps: Vec<(usize, C64)> = match address {
        AddressState::Uniform => {
            let a = (1.0 / (1u64 << n) as f64).sqrt();
            (0..1 << n).map(|i| (i, C64::new(a, 0.0))).collect()
        }
        AddressState::Ghz => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            vec![(0, C64::new(h, 0.0)), ((1 << n) - 1, C64::new(h, 0.0))]
        }
        AddressState::Random => {
            let raw: Vec<C64> =
                (0..1 << n).map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))).collect();
            let norm = raw.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            raw.into_iter().enumerate().map(|(i, a)| (i, a / norm)).collect()
        }
        AddressState::Basis(i) => vec![(*i, C64::new(1.0, 0.0))],
    };
    plus_bus_input(data, &amps)
}

/// Router state of one initialization as `(digits, amplitude)` terms.
pub fn router_state(cfg: &ExperimentConfig, tree: &TreeTopology, layout: &RegisterLayout, rng: &mut ChaCha8Rng) -> Result<Vec<(Vec<u8>, C64)>> {
    let count = layout.len() - layout.data_len();
    let levels = tree.model().local_dim();
    let basis = |rng: &mut ChaCha8Rng| (0..count).map(|_| rng.random_range(0..levels)).collect::<Vec<u8>>();
    let unit = C64::new(1.0, 0.0);
    Ok(match cfg.init {
        InitMode::AllWait => vec![(RouterInit::AllWait.digits(tree, layout)?, unit)],
        InitMode::AllZero => vec![(RouterInit::AllZero.digits(tree, layout)?, unit)],
        InitMode::Supplied => vec![(RouterInit::Digits(cfg.router_digits.clone().unwrap_or_default()).digits(tree, layout)?, unit)],
        InitMode::RandomBasis => vec![(basis(rng), unit)],
        InitMode::RandomPhase => {
            let mut ws: Vec<Vec<u8>> = Vec::new();
            while ws.len() < 4 {
                let w = basis(rng);
                if !ws.contains(&w) {
                    ws.push(w);
                }
            }
            let weights: Vec<f64> = ws.iter().map(|_| rng.random::<f64>() + 0.1).collect();
            let total: f64 = weights.iter().sum();
            ws.into_iter()
                .zip(weights)
                .map(|(w, p)| (w, C64::from_polar((p / total).sqrt(), rng.random::<f64>() * std::f64::consts::TAU)))
                .collect()
        }
    })
}

fn random_memory(n: usize, rng: &mut ChaCha8Rng) -> Vec<u8> {
    (0..1 << n).map(|_| rng.random_range(0..2u8)).collect()
}

fn base_circuit(cfg: &ExperimentConfig, tree: &TreeTopology, memory: &[u8]) -> Result<QueryCircuit> {
    if cfg.doubling {
        build_doubled_circuit(tree, memory, cfg.schedule)
    } else {
        build_query_circuit(tree, memory, cfg.schedule)
    }
}

/// Circuit of trajectory `trial`: a fresh twirl frame per trajectory when twirling.
pub fn trial_circuit(base: &QueryCircuit, twirl: TwirlMode, frame_seed: u64, trial: u64) -> Result<QueryCircuit> {
    let s = cell_seed(frame_seed, trial);
    match twirl {
        TwirlMode::None => Ok(base.clone()),
        TwirlMode::InSitu => dress_circuit(base, &sample_twirl_frame(base, s)?),
        TwirlMode::EdgeClassical => build_edge_twirled_circuit(base, &sample_edge_frame(base.layout(), base.queries() == 2, s)),
    }
}

fn is_bernoulli(model: &NoiseModel) -> bool {
    model.locations().iter().all(|l| l.channel.bernoulli_p().is_some())
}

fn is_deterministic(model: &NoiseModel, twirl: TwirlMode) -> bool {
    twirl == TwirlMode::None && model.locations().iter().all(|l| matches!(l.channel.kind, ChannelKind::Coherent { .. }))
}

/// One row per `(n, strength, initialization)`; reproducible from the configuration.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    let strengths: Vec<Option<f64>> = if cfg.eps.is_empty() { vec![None] } else { cfg.eps.iter().copied().map(Some).collect() };
    let mut rows = Vec::new();
    let mut circuit_hashes = Vec::new();
    let mut cell = 0u64;
    for n in cfg.n_min..=cfg.n_max {
        let tree = build_tree(n, cfg.variant)?;
        let mut setup = ChaCha8Rng::seed_from_u64(cell_seed(cfg.seed, 1 << 32 | n as u64));
        let memory = random_memory(n, &mut setup);
        let base = base_circuit(cfg, &tree, &memory)?;
        let layout = base.layout().clone();
        circuit_hashes.push((n, content_hash(&base.to_text())));
        let psi = address_state(&cfg.address, &layout, &mut setup)?;
        let target = ideal_oracle_output(&psi, &memory)?;
        let fixed_init = matches!(cfg.init, InitMode::AllWait)
            || (cfg.init == InitMode::AllZero && cfg.variant == RouterModel::TwoLevel);
        let tau = trial_circuit(&base, cfg.twirl, cfg.seed, 0)?.tau();
        for strength in &strengths {
            let decls: Vec<NoiseDecl> = match strength {
                Some(e) => cfg.noise.iter().map(|d| with_strength(d, *e)).collect(),
                None => cfg.noise.clone(),
            };
            let model = NoiseModel::from_decls(&tree, &layout, &decls)?;
            let eps = model.bound_epsilon(&tree)?;
            let bound = select_bound(cfg.variant, fixed_init, cfg.twirl, cfg.doubling, is_bernoulli(&model));
            let shown = strength.unwrap_or_else(|| decls.first().map_or(0.0, |d| d.strength()));
            for init_index in 0..cfg.init_samples {
                let this = cell_seed(cfg.seed, cell);
                cell += 1;
                let mut rng = ChaCha8Rng::seed_from_u64(this);
                let routers = router_state(cfg, &tree, &layout, &mut rng)?;
                let input = SparseState::product(layout.clone(), &psi, &routers)?;
                let trials = if is_deterministic(&model, cfg.twirl) { 1 } else { cfg.trials };
                let est = estimate_parallel(trials, this, |t, rng| {
                    let c = trial_circuit(&base, cfg.twirl, this, t)?;
                    trajectory_fidelity(&c, &model, &input, &target, rng)
                })?;
                let bound_value = bound.eval(eps, tau, n);
                rows.push(SweepRow {
                    n,
                    tau,
                    strength: shown,
                    eps,
                    variant: cfg.variant,
                    init: cfg.init,
                    twirl: cfg.twirl,
                    doubled: cfg.doubling,
                    init_index,
                    mean_f: est.mean,
                    stderr: est.stderr,
                    trials: est.trials,
                    bound,
                    bound_value,
                    satisfied: 1.0 - est.mean <= bound_value + 3.0 * est.stderr,
                });
            }
        }
    }
    Ok(SweepResult { rows, circuit_hashes })
}

#[derive(Clone, Debug, Serialize)]
struct Sidecar<'a> {
    config: &'a ExperimentConfig,
    seed: u64,
    circuit_hashes: &'a [(usize, String)],
    all_satisfied: bool,
}

/// Writes the rows as CSV at `path` and the configuration, seed and circuit hashes as
/// JSON next to it.
pub fn write_outputs(result: &SweepResult, cfg: &ExperimentConfig, path: &Path) -> Result<PathBuf> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Io(e.to_string()))?;
    for row in &result.rows {
        w.serialize(row).map_err(|e| Error::Io(e.to_string()))?;
    }
    w.flush()?;
    let sidecar_path = path.with_extension("json");
    let sidecar = Sidecar { config: cfg, seed: cfg.seed, circuit_hashes: &result.circuit_hashes, all_satisfied: result.all_satisfied() };
    std::fs::write(&sidecar_path, serde_json::to_string_pretty(&sidecar).map_err(|e| Error::Io(e.to_string()))?)?;
    Ok(sidecar_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExponentFit {
    pub exponent: f64,
    pub prefactor: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

fn slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

/// Least-squares slope of `ln(1 - F)` against `ln(n + 1)` with a 95% parametric
/// bootstrap interval (rows resampled as `1 - F + stderr * z`).
pub fn fit_scaling_exponent(rows: &[SweepRow], resamples: usize, seed: u64) -> Result<ExponentFit> {
    let mut ns: Vec<usize> = rows.iter().map(|r| r.n).collect();
    ns.sort_unstable();
    ns.dedup();
    if ns.len() != rows.len() {
        return Err(Error::Fit("one row per tree size".into()));
    }
    if ns.len() < 3 {
        return Err(Error::Fit("at least three tree sizes".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.infidelity() <= 0.0 || r.stderr >= 0.1 * r.infidelity()) {
        return Err(Error::Fit(format!("a resolved infidelity at n = {} (stderr below a tenth of 1 - F)", r.n)));
    }
    let xs: Vec<f64> = rows.iter().map(|r| ((r.n + 1) as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.infidelity().ln()).collect();
    let (exponent, intercept) = slope(&xs, &ys);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boot: Vec<f64> = (0..resamples)
        .map(|_| {
            let y: Vec<f64> = rows
                .iter()
                .map(|r| {
                    let z: f64 = rng.sample(StandardNormal);
                    (r.infidelity() + r.stderr * z).max(f64::MIN_POSITIVE).ln()
                })
                .collect();
            slope(&xs, &y).0
        })
        .collect();
    boot.sort_by(f64::total_cmp);
    let (ci_low, ci_high) = if boot.is_empty() {
        (exponent, exponent)
    } else {
        let at = |q: f64| boot[((boot.len() - 1) as f64 * q).round() as usize];
        (at(0.025), at(0.975))
    };
    Ok(ExponentFit { exponent, prefactor: intercept.exp(), ci_low, ci_high })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GhzSeries {
    pub coherent: SweepResult,
    pub stochastic: SweepResult,
}

/// GHZ address through three-level all-wait queries under `e^{i kappa Z}` on every router
/// site, and under site Pauli-Z with `p = sin^2 kappa`.
pub fn ghz_coherent_experiment(n_min: usize, n_max: usize, kappa: f64, trials: usize, seed: u64) -> Result<GhzSeries> {
    let p = kappa.sin().powi(2);
    if p > 1e-2 {
        return Err(Error::Config("ghz experiment needs sin^2 kappa <= 1e-2".into()));
    }
    let cfg = |noise: NoiseDecl| ExperimentConfig {
        variant: RouterModel::ThreeLevel,
        init: InitMode::AllWait,
        n_min,
        n_max,
        schedule: ScheduleKind::Serial,
        address: AddressState::Ghz,
        noise: vec![noise],
        eps: vec![],
        twirl: TwirlMode::None,
        doubling: false,
        trials,
        seed,
        init_samples: 1,
        router_digits: None,
        out: None,
    };
    Ok(GhzSeries {
        coherent: run_sweep(&cfg(NoiseDecl::Coherent { kappa, routers: None, steps: None }))?,
        stochastic: run_sweep(&cfg(NoiseDecl::PauliSite { p, label: 'Z', routers: None, steps: None }))?,
    })
}
