//! Channel descriptions, error rates, trajectory sampling and closed-form fidelity bounds.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{ideal_oracle_output, query_input, run_circuit_with_rng, QueryCircuit, RouterInit};
use crate::error::{Error, Result};
use crate::pauli::{self, Pauli};
use crate::scalar::Real;
use crate::sparse_state::{LocalMatrix, RegisterLayout, SparseState};
use crate::topology::{all_grainings, effective_error_rates, GrainReport, RouterId, TreeTopology};

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

pub(crate) fn to_dmatrix(m: &LocalMatrix<f64>) -> CMatrix {
    CMatrix::from_row_slice(m.dim, m.dim, &m.data)
}

pub(crate) fn from_dmatrix(m: &CMatrix) -> LocalMatrix<f64> {
    let n = m.nrows();
    LocalMatrix::new(n, (0..n * n).map(|k| m[(k / n, k % n)]).collect())
}

/// Tensor product of single-site Paulis, first site most significant.
pub fn pauli_string_matrix(ps: &[Pauli], radices: &[u8]) -> LocalMatrix<f64> {
    let mut m = CMatrix::from_element(1, 1, C64::new(1.0, 0.0));
    for (p, &r) in ps.iter().zip(radices) {
        let d = r as usize;
        m = m.kronecker(&CMatrix::from_row_slice(d, d, &p.matrix::<f64>(d)));
    }
    from_dmatrix(&m)
}

/// `e^{i kappa Z}` on every site, fixing the wait level.
pub fn coherent_matrix(kappa: f64, radices: &[u8]) -> LocalMatrix<f64> {
    let mut diag = vec![C64::new(1.0, 0.0)];
    for &r in radices {
        let phases: Vec<C64> = (0..r)
            .map(|d| match d {
                0 => C64::from_polar(1.0, kappa),
                1 => C64::from_polar(1.0, -kappa),
                _ => C64::new(1.0, 0.0),
            })
            .collect();
        diag = diag.iter().flat_map(|a| phases.iter().map(move |b| a * b)).collect();
    }
    LocalMatrix::diagonal(&diag)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChannelKind {
    /// Identity with probability `1 - p`, otherwise a Pauli string drawn by weight.
    Pauli { p: f64, terms: Vec<(Vec<Pauli>, f64)> },
    /// Identity with probability `1 - p`, otherwise the Kraus sub-channel.
    Bernoulli { p: f64, sub: Vec<LocalMatrix<f64>> },
    /// `e^{i kappa Z}` on every site.
    Coherent { kappa: f64 },
    General { kraus: Vec<LocalMatrix<f64>> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelTag {
    Pauli,
    Bernoulli,
    Coherent,
    General,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSpec {
    pub kind: ChannelKind,
    /// Radices of the sites the channel acts on.
    pub radices: Vec<u8>,
}

impl ChannelSpec {
    pub fn new(kind: ChannelKind, radices: Vec<u8>) -> Result<Self> {
        let spec = ChannelSpec { kind, radices };
        spec.validate()?;
        Ok(spec)
    }

    /// Uniform mixture of the non-identity Pauli strings with total probability `p`.
    pub fn depolarizing(p: f64, radices: Vec<u8>) -> Result<Self> {
        let k = radices.len();
        let count = (1usize << (2 * k)) - 1;
        let terms = (1..=count)
            .map(|code| ((0..k).map(|s| Pauli::from_index(code >> (2 * (k - 1 - s)))).collect(), 1.0 / count as f64))
            .collect();
        Self::new(ChannelKind::Pauli { p, terms }, radices)
    }

    pub fn single_pauli(p: f64, label: Pauli, radix: u8) -> Result<Self> {
        Self::new(ChannelKind::Pauli { p, terms: vec![(vec![label], 1.0)] }, vec![radix])
    }

    pub fn coherent(kappa: f64, radices: Vec<u8>) -> Result<Self> {
        Self::new(ChannelKind::Coherent { kappa }, radices)
    }

    pub fn dim(&self) -> usize {
        self.radices.iter().map(|&r| r as usize).product()
    }

    pub fn tag(&self) -> ChannelTag {
        match self.kind {
            ChannelKind::Pauli { .. } => ChannelTag::Pauli,
            ChannelKind::Bernoulli { .. } => ChannelTag::Bernoulli,
            ChannelKind::Coherent { .. } => ChannelTag::Coherent,
            ChannelKind::General { .. } => ChannelTag::General,
        }
    }

    /// Firing probability of a Bernoulli-type channel.
    pub fn bernoulli_p(&self) -> Option<f64> {
        match self.kind {
            ChannelKind::Pauli { p, .. } | ChannelKind::Bernoulli { p, .. } => Some(p),
            _ => None,
        }
    }

    /// Full Kraus list; for Bernoulli types the identity branch comes first.
    pub fn kraus(&self) -> Vec<LocalMatrix<f64>> {
        let dim = self.dim();
        let scaled = |m: &LocalMatrix<f64>, s: f64| LocalMatrix::new(m.dim, m.data.iter().map(|z| z * s).collect());
        match &self.kind {
            ChannelKind::Pauli { p, terms } => {
                let mut out = vec![scaled(&LocalMatrix::identity(dim), (1.0 - p).sqrt())];
                out.extend(terms.iter().map(|(s, w)| scaled(&pauli_string_matrix(s, &self.radices), (p * w).sqrt())));
                out
            }
            ChannelKind::Bernoulli { p, sub } => {
                let mut out = vec![scaled(&LocalMatrix::identity(dim), (1.0 - p).sqrt())];
                out.extend(sub.iter().map(|k| scaled(k, p.sqrt())));
                out
            }
            ChannelKind::Coherent { kappa } => vec![coherent_matrix(*kappa, &self.radices)],
            ChannelKind::General { kraus } => kraus.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dim = self.dim();
        let prob = |p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::Channel(format!("probability {p} outside [0, 1]")))
            }
        };
        match &self.kind {
            ChannelKind::Pauli { p, terms } => {
                prob(*p)?;
                if terms.iter().any(|(s, w)| s.len() != self.radices.len() || *w < 0.0) {
                    return Err(Error::Channel("Pauli term does not match the sites".into()));
                }
                let total: f64 = terms.iter().map(|t| t.1).sum();
                if (total - 1.0).abs() > 1e-10 {
                    return Err(Error::Channel(format!("Pauli weights sum to {total}")));
                }
                return Ok(());
            }
            ChannelKind::Bernoulli { p, sub } => {
                prob(*p)?;
                check_completeness(sub, dim)?;
            }
            ChannelKind::Coherent { .. } => return Ok(()),
            ChannelKind::General { kraus } => {
                if kraus.is_empty() {
                    return Err(Error::Channel("empty Kraus list".into()));
                }
            }
        }
        check_completeness(&self.kraus(), dim)
    }

    /// Kraus element of largest `Tr(K^dagger K)`.
    pub fn principal_kraus(&self) -> LocalMatrix<f64> {
        let ks = self.kraus();
        let weight = |k: &LocalMatrix<f64>| k.data.iter().map(|z| z.norm_sqr()).sum::<f64>();
        ks.into_iter().max_by(|a, b| weight(a).total_cmp(&weight(b))).expect("non-empty Kraus list")
    }

    /// `1 - min_psi |Re <psi|K0|psi>|^2` for the principal Kraus element.
    pub fn error_rate(&self) -> f64 {
        if let ChannelKind::Pauli { p, terms } = &self.kind {
            let w_id: f64 = terms.iter().filter(|(s, _)| s.iter().all(|&q| q == Pauli::I)).map(|t| t.1).sum();
            if 1.0 - p + p * w_id >= p * terms.iter().map(|t| t.1).fold(0.0, f64::max) {
                return p * (1.0 - w_id);
            }
        }
        error_rate_of(&self.principal_kraus())
    }
}

fn check_completeness(kraus: &[LocalMatrix<f64>], dim: usize) -> Result<()> {
    let mut sum = CMatrix::zeros(dim, dim);
    for k in kraus {
        if k.dim != dim {
            return Err(Error::Channel(format!("Kraus element of dimension {} on a {dim}-dimensional space", k.dim)));
        }
        let m = to_dmatrix(k);
        sum += m.adjoint() * &m;
    }
    let dev = (sum - CMatrix::identity(dim, dim)).iter().map(|z| z.norm()).fold(0.0, f64::max);
    if dev > 1e-10 {
        return Err(Error::Channel(format!("sum of K^dagger K deviates from identity by {dev:e}")));
    }
    Ok(())
}

/// The numerical range of `Re K` is the interval spanned by the eigenvalues of its Hermitian part.
pub fn error_rate_of(k0: &LocalMatrix<f64>) -> f64 {
    let m = to_dmatrix(k0);
    let h = (&m + m.adjoint()) * C64::new(0.5, 0.0);
    let eig = h.symmetric_eigen().eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo <= 0.0 && hi >= 0.0 {
        return 1.0;
    }
    let m = lo.abs().min(hi.abs());
    (1.0 - m * m).clamp(0.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct PolarSplit {
    pub v: CMatrix,
    pub p: CMatrix,
    /// Largest eigenphase magnitude of `v`.
    pub kappa: f64,
}

/// `K0 = V P` with `P = (K0^dagger K0)^{1/2}`.
pub fn polar_split(k0: &CMatrix) -> Result<PolarSplit> {
    let n = k0.nrows();
    let gram = k0.adjoint() * k0;
    let eig = gram.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l <= 1e-14) {
        return Err(Error::Singular);
    }
    let u = &eig.eigenvectors;
    let sqrt = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(l.sqrt(), 0.0)));
    let inv = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::new(1.0 / l.sqrt(), 0.0)));
    let p = u * sqrt * u.adjoint();
    let v = k0 * (u * inv * u.adjoint());
    let herm = (&v + v.adjoint()) * C64::new(0.5, 0.0);
    let lo = herm.symmetric_eigen().eigenvalues.iter().copied().fold(1.0f64, f64::min);
    let _ = n;
    Ok(PolarSplit { v, p, kappa: lo.clamp(-1.0, 1.0).acos() })
}

/// Combines per-part infidelities through the triangle inequality of the purified
/// distance `sqrt(1 - F)`.
pub fn combine_infidelities_fvg(deltas: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for &d in deltas {
        if !(0.0..=1.0).contains(&d) {
            return Err(Error::Infidelity(d));
        }
        total += d.sqrt();
    }
    Ok((total * total).min(1.0))
}

pub fn bound_theorem1(eps: f64, tau: usize, n: usize) -> f64 {
    4.0 * eps * (tau + 1) as f64 * (n + 1) as f64
}

pub fn bound_lemma_two_level(eps: f64, tau: usize, n: usize) -> f64 {
    2.0 * eps * (tau + 1) as f64 * ((n + 1) * (n + 1)) as f64
}

/// Uses `(n + 2)^2`; see [`bound_theorem3_stated`] for the `(n + 1)^2` form.
pub fn bound_theorem3(eps: f64, tau: usize, n: usize) -> f64 {
    4.0 * eps * (tau + 1) as f64 * ((n + 2) * (n + 2)) as f64
}

pub fn bound_theorem3_stated(eps: f64, tau: usize, n: usize) -> f64 {
    4.0 * eps * (tau + 1) as f64 * ((n + 1) * (n + 1)) as f64
}

pub const DEFAULT_A: f64 = 4.0;

pub fn bound_theorem4(eps: f64, tau: usize, n: usize, a: f64) -> f64 {
    a * eps * ((tau + 1) * (tau + 1)) as f64 * ((n + 1) * (n + 1)) as f64
}

/// Coherent analogue of the two-level fixed-initialization bound.
pub fn bound_coherent_two_level(eps: f64, tau: usize, n: usize, a: f64) -> f64 {
    a * eps * ((tau + 1) * (tau + 1)) as f64 * ((n + 1) as f64).powi(4)
}

/// Coherent analogue of the doubled-query bound.
pub fn bound_coherent_doubled(eps: f64, tau: usize, n: usize, a: f64) -> f64 {
    a * eps * ((tau + 1) * (tau + 1)) as f64 * ((n + 2) as f64).powi(4)
}

pub fn bound_theorem5_insitu(eps: f64, tau: usize, n: usize) -> f64 {
    8.0 * eps * (tau + 1) as f64 * (n + 1) as f64
}

pub fn bound_theorem5_classical(eps: f64, tau: usize, n: usize) -> f64 {
    8.0 * eps * ((tau + 1) * (tau + 1)) as f64 * (n + 1) as f64
}

/// A channel on a fixed set of router sites, optionally active only at some steps.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseLocation {
    pub support: BTreeSet<RouterId>,
    pub sites: Vec<usize>,
    pub channel: ChannelSpec,
    pub active: Option<BTreeSet<usize>>,
}

impl NoiseLocation {
    pub fn is_active(&self, step: usize) -> bool {
        self.active.as_ref().is_none_or(|s| s.contains(&step))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NoiseModel {
    locations: Vec<NoiseLocation>,
}

fn sample_kraus<T: Real>(
    state: &mut SparseState<T>,
    sites: &[usize],
    kraus: &[LocalMatrix<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let before = state.norm_sqr().to_f64_lossy();
    let mut u = rng.random::<f64>() * before;
    let mut fallback = None;
    for k in kraus {
        let mut branch = state.clone();
        branch.apply_matrix(sites, &k.convert())?;
        let w = branch.norm_sqr().to_f64_lossy();
        if w > 0.0 {
            fallback = Some(branch.clone());
            if u < w {
                branch.normalize();
                *state = branch;
                return Ok(());
            }
        }
        u -= w;
    }
    // Rounding left `u` just past the last positive weight.
    let mut branch = fallback.ok_or(Error::Channel("every Kraus branch has zero weight".into()))?;
    branch.normalize();
    *state = branch;
    Ok(())
}

fn pick_weighted<'a, X>(items: &'a [(X, f64)], rng: &mut ChaCha8Rng) -> &'a X {
    let mut u = rng.random::<f64>();
    for (x, w) in items {
        if u < *w {
            return x;
        }
        u -= w;
    }
    &items.iter().rev().find(|(_, w)| *w > 0.0).expect("positive weight").0
}

impl NoiseModel {
    /// Sorts locations canonically: by smallest router, then support size.
    pub fn new(mut locations: Vec<NoiseLocation>) -> Self {
        locations.sort_by_key(|l| (l.support.iter().next().copied(), l.support.len()));
        NoiseModel { locations }
    }

    pub fn noiseless() -> Self {
        NoiseModel::default()
    }

    pub fn locations(&self) -> &[NoiseLocation] {
        &self.locations
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn depolarizing(tree: &TreeTopology, layout: &RegisterLayout, p: f64) -> Result<Self> {
        let mut locs = Vec::new();
        for r in tree.routers() {
            let sites = layout.router_sites(r);
            let radices = sites.iter().map(|&s| layout.radix(s)).collect();
            let channel = ChannelSpec::depolarizing(p, radices)?;
            locs.push(NoiseLocation { support: BTreeSet::from([r]), sites, channel, active: None });
        }
        Ok(Self::new(locs))
    }

    /// Independent single-site channels on every router site.
    pub fn per_site(tree: &TreeTopology, layout: &RegisterLayout, make: impl Fn(u8) -> Result<ChannelSpec>) -> Result<Self> {
        let mut locs = Vec::new();
        for r in tree.routers() {
            for s in layout.router_sites(r) {
                let channel = make(layout.radix(s))?;
                locs.push(NoiseLocation { support: BTreeSet::from([r]), sites: vec![s], channel, active: None });
            }
        }
        Ok(Self::new(locs))
    }

    pub fn pauli_per_site(tree: &TreeTopology, layout: &RegisterLayout, label: Pauli, p: f64) -> Result<Self> {
        Self::per_site(tree, layout, |radix| ChannelSpec::single_pauli(p, label, radix))
    }

    pub fn coherent_per_site(tree: &TreeTopology, layout: &RegisterLayout, kappa: f64) -> Result<Self> {
        Self::per_site(tree, layout, |radix| ChannelSpec::coherent(kappa, vec![radix]))
    }

    /// Builds the model from declarations, checking supports against the tree.
    pub fn from_decls(tree: &TreeTopology, layout: &RegisterLayout, decls: &[NoiseDecl]) -> Result<Self> {
        let mut locs = Vec::new();
        for decl in decls {
            locs.extend(decl.locations(tree, layout)?);
        }
        Ok(Self::new(locs))
    }

    pub fn with_active_steps(mut self, steps: &BTreeSet<usize>) -> Self {
        for l in &mut self.locations {
            l.active = Some(steps.clone());
        }
        self
    }

    /// Applies one sampled action per active location.
    pub fn apply_step<T: Real>(&self, state: &mut SparseState<T>, step: usize, rng: &mut ChaCha8Rng) -> Result<()> {
        for loc in &self.locations {
            if !loc.is_active(step) {
                continue;
            }
            match &loc.channel.kind {
                ChannelKind::Pauli { p, terms } => {
                    if rng.random::<f64>() < *p {
                        let string = pick_weighted(terms, rng);
                        for (&s, &q) in loc.sites.iter().zip(string) {
                            state.apply_pauli(s, q)?;
                        }
                    }
                }
                ChannelKind::Bernoulli { p, sub } => {
                    if rng.random::<f64>() < *p {
                        sample_kraus(state, &loc.sites, sub, rng)?;
                    }
                }
                ChannelKind::Coherent { kappa } => {
                    for &s in &loc.sites {
                        state.apply_phase_z(s, T::lit(*kappa))?;
                    }
                }
                ChannelKind::General { kraus } => sample_kraus(state, &loc.sites, kraus, rng)?,
            }
        }
        Ok(())
    }

    /// `(support, error rate)` for every location.
    pub fn channel_rates(&self) -> Vec<(BTreeSet<RouterId>, f64)> {
        self.locations.iter().map(|l| (l.support.clone(), l.channel.error_rate())).collect()
    }

    pub fn grain_report(&self, tree: &TreeTopology) -> Result<GrainReport> {
        let max_d = self.locations.iter().map(|l| support_span(tree, &l.support)).max().unwrap_or(1);
        effective_error_rates(&all_grainings(tree, max_d.max(1))?, &self.channel_rates())
    }

    /// Per-router rate entering the bounds: the summed rates of the single-router channels on the worst router.
    pub fn bound_epsilon(&self, tree: &TreeTopology) -> Result<f64> {
        Ok(self.grain_report(tree)?.eps.get(&1).copied().unwrap_or(0.0))
    }

    pub fn sample_config(&self, steps: usize, seed: u64) -> Result<ErrorConfig> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut chi = Vec::with_capacity(self.locations.len());
        for (k, loc) in self.locations.iter().enumerate() {
            let p = loc.channel.bernoulli_p().ok_or(Error::NotBernoulli(k))?;
            chi.push((0..steps).map(|t| loc.is_active(t) && rng.random::<f64>() < p).collect());
        }
        Ok(ErrorConfig { chi })
    }
}

/// Number of tree levels a support spans.
pub fn support_span(tree: &TreeTopology, support: &BTreeSet<RouterId>) -> usize {
    let levels: Vec<usize> = support.iter().map(|&r| tree.level(r)).collect();
    match (levels.iter().min(), levels.iter().max()) {
        (Some(lo), Some(hi)) => hi - lo + 1,
        _ => 1,
    }
}

/// Fired `(location, step)` pairs.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ErrorConfig {
    pub chi: Vec<Vec<bool>>,
}

impl ErrorConfig {
    pub fn zeros(locations: usize, steps: usize) -> Self {
        ErrorConfig { chi: vec![vec![false; steps]; locations] }
    }

    pub fn faulted_routers(&self, model: &NoiseModel) -> BTreeSet<RouterId> {
        self.chi
            .iter()
            .zip(model.locations())
            .filter(|(row, _)| row.iter().any(|&b| b))
            .flat_map(|(_, l)| l.support.iter().copied())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GoodSubspace {
    /// Addresses whose branch meets no faulted router.
    pub v: BTreeSet<usize>,
    /// Addresses whose branch also avoids every propagation envelope of a faulted router.
    pub v_prime: BTreeSet<usize>,
}

pub fn good_subspace(config: &ErrorConfig, model: &NoiseModel, tree: &TreeTopology) -> Result<GoodSubspace> {
    if config.chi.len() != model.locations().len() {
        return Err(Error::Config("configuration rows do not match the noise model".into()));
    }
    let faulted = config.faulted_routers(model);
    let mut envelope = BTreeSet::new();
    for &r in &faulted {
        envelope.extend(tree.propagation_envelope(r)?);
    }
    let mut v = BTreeSet::new();
    let mut v_prime = BTreeSet::new();
    for i in 0..tree.memory_size() {
        let branch = tree.branch_of(i);
        if branch.iter().all(|r| !faulted.contains(r)) {
            v.insert(i);
            if branch.iter().all(|r| !envelope.contains(r)) {
                v_prime.insert(i);
            }
        }
    }
    Ok(GoodSubspace { v, v_prime })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidelityEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub seed: u64,
}

impl FidelityEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Self {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = if n > 1 { samples.iter().map(|f| (f - mean).powi(2)).sum::<f64>() / (n - 1) as f64 } else { 0.0 };
        FidelityEstimate { mean: mean.clamp(0.0, 1.0), stderr: (var / n as f64).sqrt(), trials: n, seed }
    }

    pub fn infidelity(&self) -> f64 {
        1.0 - self.mean
    }
}

/// Random stream of trajectory `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    rng
}

/// Fidelity of one trajectory.
pub fn trajectory_fidelity<T: Real>(
    circuit: &QueryCircuit,
    model: &NoiseModel,
    input: &SparseState<T>,
    target: &SparseState<T>,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut s = input.clone();
    run_circuit_with_rng(&mut s, circuit, Some(model), rng)?;
    Ok(s.fidelity_against_target_over_routers(target)?.to_f64_lossy())
}

/// Monte Carlo query fidelity with one independent stream per trajectory.
pub fn estimate_query_fidelity<T: Real>(
    circuit: &QueryCircuit,
    model: &NoiseModel,
    psi_in: &SparseState<T>,
    init: &RouterInit,
    trials: usize,
    seed: u64,
) -> Result<FidelityEstimate> {
    if trials == 0 {
        return Err(Error::Config("at least one trial is required".into()));
    }
    let target = ideal_oracle_output(psi_in, circuit.memory())?;
    let input = query_input(circuit, psi_in, init)?;
    let mut samples = Vec::with_capacity(trials);
    for trial in 0..trials {
        let mut rng = trial_rng(seed, trial as u64);
        samples.push(trajectory_fidelity(circuit, model, &input, &target, &mut rng)?);
    }
    Ok(FidelityEstimate::from_samples(&samples, seed))
}

/// Declarative noise entry of a configuration document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum NoiseDecl {
    /// Depolarizing channel on the sites of each listed router (all routers when omitted).
    Depolarizing {
        p: f64,
        #[serde(default)]
        routers: Option<Vec<RouterId>>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
    /// With probability `p`, `label` on a single router site; one location per site.
    PauliSite {
        p: f64,
        label: char,
        #[serde(default)]
        routers: Option<Vec<RouterId>>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
    /// `e^{i kappa Z}` on every site of the listed routers; one location per site.
    Coherent {
        kappa: f64,
        #[serde(default)]
        routers: Option<Vec<RouterId>>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
    /// Pauli strings over the concatenated sites of a connected router cluster.
    ClusterPauli {
        support: Vec<RouterId>,
        p: f64,
        terms: Vec<(String, f64)>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
    /// Explicit Kraus elements on the concatenated sites of a router cluster, entries as `[re, im]`.
    Kraus {
        support: Vec<RouterId>,
        kraus: Vec<Vec<Vec<[f64; 2]>>>,
        #[serde(default)]
        steps: Option<Vec<usize>>,
    },
}

impl NoiseDecl {
    fn steps(&self) -> Option<BTreeSet<usize>> {
        let s = match self {
            NoiseDecl::Depolarizing { steps, .. }
            | NoiseDecl::PauliSite { steps, .. }
            | NoiseDecl::Coherent { steps, .. }
            | NoiseDecl::ClusterPauli { steps, .. }
            | NoiseDecl::Kraus { steps, .. } => steps,
        };
        s.as_ref().map(|v| v.iter().copied().collect())
    }

    /// Rate scale of the declaration.
    pub fn strength(&self) -> f64 {
        match self {
            NoiseDecl::Depolarizing { p, .. } | NoiseDecl::PauliSite { p, .. } | NoiseDecl::ClusterPauli { p, .. } => *p,
            NoiseDecl::Coherent { kappa, .. } => kappa.sin().powi(2),
            NoiseDecl::Kraus { .. } => f64::NAN,
        }
    }

    pub fn locations(&self, tree: &TreeTopology, layout: &RegisterLayout) -> Result<Vec<NoiseLocation>> {
        let pick = |routers: &Option<Vec<RouterId>>| -> Result<Vec<RouterId>> {
            let rs = routers.clone().unwrap_or_else(|| tree.routers().collect());
            rs.iter().try_for_each(|&r| if r < tree.router_count() { Ok(()) } else { Err(Error::NoSuchRouter(r)) })?;
            Ok(rs)
        };
        let cluster = |support: &[RouterId]| -> Result<(BTreeSet<RouterId>, Vec<usize>)> {
            let set: BTreeSet<RouterId> = support.iter().copied().collect();
            if let Some(&bad) = set.iter().find(|&&r| r >= tree.router_count()) {
                return Err(Error::NoSuchRouter(bad));
            }
            if !tree.is_connected(&set) {
                return Err(Error::Channel("cluster support is not connected".into()));
            }
            Ok((set.clone(), set.iter().flat_map(|&r| layout.router_sites(r)).collect()))
        };
        let radices = |sites: &[usize]| sites.iter().map(|&s| layout.radix(s)).collect::<Vec<u8>>();
        let active = self.steps();
        let mut out = Vec::new();
        match self {
            NoiseDecl::Depolarizing { p, routers, .. } => {
                for r in pick(routers)? {
                    let sites = layout.router_sites(r);
                    let channel = ChannelSpec::depolarizing(*p, radices(&sites))?;
                    out.push(NoiseLocation { support: BTreeSet::from([r]), sites, channel, active: active.clone() });
                }
            }
            NoiseDecl::PauliSite { p, label, routers, .. } => {
                let q = Pauli::from_char(*label).ok_or(Error::Channel(format!("unknown Pauli label {label}")))?;
                for r in pick(routers)? {
                    for s in layout.router_sites(r) {
                        let channel = ChannelSpec::single_pauli(*p, q, layout.radix(s))?;
                        out.push(NoiseLocation { support: BTreeSet::from([r]), sites: vec![s], channel, active: active.clone() });
                    }
                }
            }
            NoiseDecl::Coherent { kappa, routers, .. } => {
                for r in pick(routers)? {
                    for s in layout.router_sites(r) {
                        let channel = ChannelSpec::coherent(*kappa, vec![layout.radix(s)])?;
                        out.push(NoiseLocation { support: BTreeSet::from([r]), sites: vec![s], channel, active: active.clone() });
                    }
                }
            }
            NoiseDecl::ClusterPauli { support, p, terms, .. } => {
                let (set, sites) = cluster(support)?;
                let terms = terms
                    .iter()
                    .map(|(s, w)| {
                        pauli::parse_string(s).map(|ps| (ps, *w)).ok_or(Error::Channel(format!("bad Pauli string {s}")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let channel = ChannelSpec::new(ChannelKind::Pauli { p: *p, terms }, radices(&sites))?;
                out.push(NoiseLocation { support: set, sites, channel, active });
            }
            NoiseDecl::Kraus { support, kraus, .. } => {
                let (set, sites) = cluster(support)?;
                let ks = kraus
                    .iter()
                    .map(|rows| {
                        let dim = rows.len();
                        if rows.iter().any(|r| r.len() != dim) {
                            return Err(Error::Channel("Kraus element is not square".into()));
                        }
                        Ok(LocalMatrix::new(dim, rows.iter().flatten().map(|&[re, im]| C64::new(re, im)).collect()))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let channel = ChannelSpec::new(ChannelKind::General { kraus: ks }, radices(&sites))?;
                out.push(NoiseLocation { support: set, sites, channel, active });
            }
        }
        Ok(out)
    }
}
