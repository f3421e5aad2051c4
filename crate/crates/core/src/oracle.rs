//! Exact references for small instances: density-matrix evolution and enumeration of
//! error configurations.
//!
//! Gates are rebuilt here from their definitions as local matrices rather than going
//! through the sparse-state gate routines, so agreement between the two is a real check.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::circuit::{ideal_oracle_output, query_input, GateEvent, QueryCircuit, RouterInit};
use crate::error::{Error, Result};
use crate::noise::{ChannelKind, NoiseModel, C64};
use crate::pauli::Pauli;
use crate::sparse_state::{DetMap, LocalMatrix, RegisterLayout, SparseState};
use crate::topology::RouterModel;

/// Full dimension allowed for unrestricted evolution.
pub const DENSE_DIM_CAP: f64 = 16384.0;
/// Stored entries allowed at any point of an evolution.
pub const DENSE_NNZ_CAP: usize = 1 << 23;
/// Error configurations allowed in one enumeration.
pub const CHI_CONFIG_CAP: f64 = 16_777_216.0;

/// Density matrix stored as exact `(row, col) -> value` entries over mixed-radix indices.
#[derive(Clone, Debug)]
pub struct DenseState {
    layout: Arc<RegisterLayout>,
    strides: Vec<u64>,
    entries: DetMap<(u64, u64), C64>,
}

fn strides_for(layout: &RegisterLayout) -> Vec<u64> {
    let mut strides = vec![1u64; layout.len()];
    for s in (0..layout.len().saturating_sub(1)).rev() {
        strides[s] = strides[s + 1] * layout.radix(s + 1) as u64;
    }
    strides
}

impl DenseState {
    pub fn from_pure(state: &SparseState<f64>) -> Self {
        Self::from_mixture(&[(1.0, state.clone())])
    }

    /// `sum_k w_k |psi_k><psi_k|`.
    pub fn from_mixture(parts: &[(f64, SparseState<f64>)]) -> Self {
        let layout = parts[0].1.layout().clone();
        let strides = strides_for(&layout);
        let mut rho = DenseState { layout, strides, entries: DetMap::default() };
        for (w, psi) in parts {
            let amps: Vec<(u64, C64)> = psi.entries().iter().map(|(d, a)| (rho.encode(&d.0), *a)).collect();
            for &(r, a) in &amps {
                for &(c, b) in &amps {
                    *rho.entries.entry((r, c)).or_default() += a * b.conj() * w;
                }
            }
        }
        rho
    }

    fn encode(&self, digits: &[u8]) -> u64 {
        digits.iter().zip(&self.strides).map(|(&d, &s)| d as u64 * s).sum()
    }

    fn digit(&self, index: u64, site: usize) -> u64 {
        (index / self.strides[site]) % self.layout.radix(site) as u64
    }

    pub fn layout(&self) -> &Arc<RegisterLayout> {
        &self.layout
    }

    pub fn dim(&self) -> f64 {
        self.layout.radices().iter().map(|&r| r as f64).product()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn get(&self, row: &[u8], col: &[u8]) -> C64 {
        self.entries.get(&(self.encode(row), self.encode(col))).copied().unwrap_or_default()
    }

    pub fn trace(&self) -> C64 {
        self.entries.iter().filter(|((r, c), _)| r == c).map(|(_, v)| *v).sum()
    }

    pub fn hermiticity_deviation(&self) -> f64 {
        self.entries
            .iter()
            .map(|(&(r, c), v)| (v - self.entries.get(&(c, r)).copied().unwrap_or_default().conj()).norm())
            .fold(0.0, f64::max)
    }

    /// Smallest eigenvalue of the block spanned by the stored indices.
    pub fn min_eigenvalue(&self) -> Result<f64> {
        let mut idx: Vec<u64> = self.entries.keys().flat_map(|&(r, c)| [r, c]).collect();
        idx.sort_unstable();
        idx.dedup();
        if idx.len() > 2048 {
            return Err(Error::Cap { what: "support for an eigenvalue check", got: idx.len() as f64, cap: 2048.0 });
        }
        let pos: DetMap<u64, usize> = idx.iter().enumerate().map(|(k, &i)| (i, k)).collect();
        let mut m = nalgebra::DMatrix::<C64>::zeros(idx.len(), idx.len());
        for (&(r, c), v) in &self.entries {
            m[(pos[&r], pos[&c])] = *v;
        }
        Ok(m.symmetric_eigen().eigenvalues.iter().copied().fold(f64::INFINITY, f64::min))
    }

    /// `rho -> sum_K K rho K^dagger` with each `K` on `sites`.
    fn apply_kraus(&mut self, sites: &[usize], kraus: &[LocalMatrix<f64>]) -> Result<()> {
        let radices: Vec<u64> = sites.iter().map(|&s| self.layout.radix(s) as u64).collect();
        let local = |me: &Self, x: u64| sites.iter().zip(&radices).fold(0u64, |acc, (&s, &r)| acc * r + me.digit(x, s));
        let rebase = |me: &Self, x: u64, mut y: u64| {
            let mut out = x;
            for (&s, &r) in sites.iter().zip(&radices).rev() {
                out = out - me.digit(x, s) * me.strides[s] + (y % r) * me.strides[s];
                y /= r;
            }
            out
        };
        let columns: Vec<Vec<Vec<(u64, C64)>>> = kraus
            .iter()
            .map(|k| {
                (0..k.dim)
                    .map(|c| (0..k.dim).filter_map(|r| { let v = k.get(r, c); (v.norm() > 0.0).then_some((r as u64, v)) }).collect())
                    .collect()
            })
            .collect();
        let mut out: DetMap<(u64, u64), C64> = DetMap::with_capacity_and_hasher(self.entries.len(), Default::default());
        for (&(r, c), &v) in &self.entries {
            let (lr, lc) = (local(self, r) as usize, local(self, c) as usize);
            for cols in &columns {
                for &(ra, a) in &cols[lr] {
                    let nr = rebase(self, r, ra);
                    for &(cb, b) in &cols[lc] {
                        *out.entry((nr, rebase(self, c, cb))).or_default() += a * v * b.conj();
                    }
                }
            }
        }
        out.retain(|_, v| v.norm_sqr() > 0.0);
        if out.len() > DENSE_NNZ_CAP {
            return Err(Error::Cap { what: "density entries", got: out.len() as f64, cap: DENSE_NNZ_CAP as f64 });
        }
        self.entries = out;
        Ok(())
    }

    /// `sum_w <target, w| rho |target, w>` over router basis states `w`.
    pub fn fidelity_against_target_over_routers(&self, target: &SparseState<f64>) -> Result<f64> {
        let k = self.layout.data_len();
        if target.layout().radices() != &self.layout.radices()[..k] {
            return Err(Error::LayoutMismatch);
        }
        let router_dim: u64 = self.layout.radices()[k..].iter().map(|&r| r as u64).product();
        let data_strides = strides_for(target.layout());
        let psi: DetMap<u64, C64> = target
            .entries()
            .iter()
            .map(|(d, a)| (d.0.iter().zip(&data_strides).map(|(&x, &s)| x as u64 * s).sum(), *a))
            .collect();
        let mut f = C64::new(0.0, 0.0);
        for (&(r, c), v) in &self.entries {
            if r % router_dim != c % router_dim {
                continue;
            }
            if let (Some(a), Some(b)) = (psi.get(&(r / router_dim)), psi.get(&(c / router_dim))) {
                f += a.conj() * v * b;
            }
        }
        Ok(f.re)
    }
}

/// Image of a local basis state under an exchange of two contents; a qubit meeting a
/// qutrit in its wait level moves in and leaves `|0>` behind.
fn exchange_local(x: u8, rx: u8, y: u8, ry: u8) -> (u8, u8) {
    const W: u8 = 2;
    match (rx, ry) {
        (a, b) if a == b => (y, x),
        (2, 3) if y == W => (0, x),
        (2, 3) if x == 0 && y < 2 => (y, W),
        (3, 2) if x == W => (y, 0),
        (3, 2) if y == 0 && x < 2 => (W, x),
        _ => (x, y),
    }
}

/// Permutation matrix defined by a map on local digit tuples.
fn permutation_matrix(radices: &[u8], map: impl Fn(&mut [u8])) -> LocalMatrix<f64> {
    let dim: usize = radices.iter().map(|&r| r as usize).product();
    let mut data = vec![C64::new(0.0, 0.0); dim * dim];
    let mut digits = vec![0u8; radices.len()];
    for col in 0..dim {
        let mut x = col;
        for (d, &r) in digits.iter_mut().zip(radices).rev() {
            *d = (x % r as usize) as u8;
            x /= r as usize;
        }
        map(&mut digits);
        let row = digits.iter().zip(radices).fold(0usize, |acc, (&d, &r)| acc * r as usize + d as usize);
        data[row * dim + col] = C64::new(1.0, 0.0);
    }
    LocalMatrix::new(dim, data)
}

/// Local matrix of a gate event on its own sites.
fn event_matrix(event: &GateEvent, layout: &RegisterLayout) -> LocalMatrix<f64> {
    let sites = event.sites();
    let radices: Vec<u8> = sites.iter().map(|&s| layout.radix(s)).collect();
    match event {
        GateEvent::Routing { .. } => permutation_matrix(&radices, |d| {
            // d = [control, hold, left, right]
            let target = match d[0] {
                0 => 2,
                1 => 3,
                _ => return,
            };
            let (h, t) = exchange_local(d[1], radices[1], d[target], radices[target]);
            d[1] = h;
            d[target] = t;
        }),
        GateEvent::Swap { .. } | GateEvent::Dress { .. } | GateEvent::Absorb { .. } => permutation_matrix(&radices, |d| {
            let (a, b) = exchange_local(d[0], radices[0], d[1], radices[1]);
            d[0] = a;
            d[1] = b;
        }),
        GateEvent::Cx { .. } => permutation_matrix(&radices, |d| {
            if d[0] == 1 && d[1] < 2 {
                d[1] = 1 - d[1];
            }
        }),
        GateEvent::Copy { x, .. } => pauli_local(if *x == 1 { Pauli::Z } else { Pauli::I }, radices[0]),
        GateEvent::Pauli { p, .. } => pauli_local(*p, radices[0]),
        GateEvent::Unitary { matrix, .. } => matrix.clone(),
    }
}

fn pauli_local(p: Pauli, radix: u8) -> LocalMatrix<f64> {
    let m = match p {
        Pauli::I => [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [1.0, 0.0]],
        Pauli::X => [[0.0, 0.0], [1.0, 0.0], [1.0, 0.0], [0.0, 0.0]],
        Pauli::Y => [[0.0, 0.0], [0.0, -1.0], [0.0, 1.0], [0.0, 0.0]],
        Pauli::Z => [[1.0, 0.0], [0.0, 0.0], [0.0, 0.0], [-1.0, 0.0]],
    };
    let q = LocalMatrix::new(2, m.iter().map(|&[re, im]| C64::new(re, im)).collect());
    if radix == 3 {
        q.lift_to_qutrit()
    } else {
        q
    }
}

fn check_density_caps(circuit: &QueryCircuit, model: Option<&NoiseModel>) -> Result<()> {
    let dim: f64 = circuit.layout().radices().iter().map(|&r| r as f64).product();
    if dim <= DENSE_DIM_CAP {
        return Ok(());
    }
    let separable = model.is_none_or(|m| m.locations().iter().all(|l| l.support.len() == 1));
    if circuit.tree().model() == RouterModel::ThreeLevel && circuit.tree().depth() <= 2 && separable {
        return Ok(());
    }
    Err(Error::Cap { what: "register dimension", got: dim, cap: DENSE_DIM_CAP })
}

/// Exact channel composition of the circuit with noise after every noisy layer.
pub fn run_density(circuit: &QueryCircuit, model: Option<&NoiseModel>, rho_in: &DenseState) -> Result<DenseState> {
    if rho_in.layout().as_ref() != circuit.layout().as_ref() {
        return Err(Error::LayoutMismatch);
    }
    check_density_caps(circuit, model)?;
    let layout = circuit.layout().clone();
    let mut rho = rho_in.clone();
    let mut step = 0;
    for layer in circuit.layers() {
        for e in &layer.events {
            rho.apply_kraus(&e.sites(), &[event_matrix(e, &layout)])?;
        }
        if layer.noisy {
            if let Some(m) = model {
                for loc in m.locations().iter().filter(|l| l.is_active(step)) {
                    rho.apply_kraus(&loc.sites, &loc.channel.kraus())?;
                }
            }
            step += 1;
        }
    }
    Ok(rho)
}

/// Query fidelity from the density oracle for a data input and router initialization.
pub fn density_fidelity(circuit: &QueryCircuit, model: Option<&NoiseModel>, psi_in: &SparseState<f64>, init: &RouterInit) -> Result<f64> {
    let rho = DenseState::from_pure(&query_input(circuit, psi_in, init)?);
    run_density(circuit, model, &rho)?.fidelity_against_target_over_routers(&ideal_oracle_output(psi_in, circuit.memory())?)
}

enum Op {
    Layer(usize),
    Noise(usize),
}

/// Exact fidelity as the probability-weighted sum over every error configuration and
/// every Pauli choice, each branch simulated as a pure state.
pub fn exhaustive_chi_fidelity(circuit: &QueryCircuit, model: &NoiseModel, psi_in: &SparseState<f64>, init: &RouterInit) -> Result<f64> {
    for (k, loc) in model.locations().iter().enumerate() {
        if !matches!(loc.channel.kind, ChannelKind::Pauli { .. }) {
            return Err(Error::NotPauli(k));
        }
    }
    let mut ops = Vec::new();
    let mut configs = 1.0f64;
    let mut step = 0;
    for (li, layer) in circuit.layers().iter().enumerate() {
        ops.push(Op::Layer(li));
        if layer.noisy {
            for (k, loc) in model.locations().iter().enumerate() {
                if loc.is_active(step) && loc.channel.bernoulli_p().is_some_and(|p| p > 0.0) {
                    ops.push(Op::Noise(k));
                    if let ChannelKind::Pauli { terms, .. } = &loc.channel.kind {
                        configs *= 1.0 + terms.len() as f64;
                    }
                }
            }
            step += 1;
        }
    }
    if configs > CHI_CONFIG_CAP {
        return Err(Error::Cap { what: "error configurations", got: configs, cap: CHI_CONFIG_CAP });
    }
    let target = ideal_oracle_output(psi_in, circuit.memory())?;
    let input = query_input(circuit, psi_in, init)?;
    let mut total = 0.0;
    descend(circuit, model, &ops, 0, input, 1.0, &target, &mut total)?;
    Ok(total)
}

#[allow(clippy::too_many_arguments)]
fn descend(
    circuit: &QueryCircuit,
    model: &NoiseModel,
    ops: &[Op],
    mut pos: usize,
    mut state: SparseState<f64>,
    prob: f64,
    target: &SparseState<f64>,
    total: &mut f64,
) -> Result<()> {
    while let Some(Op::Layer(li)) = ops.get(pos) {
        for e in &circuit.layers()[*li].events {
            e.apply(&mut state)?;
        }
        pos += 1;
    }
    let Some(Op::Noise(k)) = ops.get(pos) else {
        *total += prob * state.fidelity_against_target_over_routers(target)?;
        return Ok(());
    };
    let loc = &model.locations()[*k];
    let ChannelKind::Pauli { p, terms } = &loc.channel.kind else { unreachable!("checked above") };
    if *p < 1.0 {
        descend(circuit, model, ops, pos + 1, state.clone(), prob * (1.0 - p), target, total)?;
    }
    for (string, w) in terms {
        if *w == 0.0 {
            continue;
        }
        let mut branch = state.clone();
        for (&s, &q) in loc.sites.iter().zip(string) {
            branch.apply_pauli(s, q)?;
        }
        descend(circuit, model, ops, pos + 1, branch, prob * p * w, target, total)?;
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhaseInvarianceReport {
    pub fidelities: Vec<f64>,
    pub max_deviation: f64,
}

/// Exact fidelities for router initializations `sum_w sqrt(p_w) e^{i theta_w} |w>` with
/// random phases `theta_w`; the first trial uses zero phases.
pub fn phase_invariance_check(
    circuit: &QueryCircuit,
    model: Option<&NoiseModel>,
    psi_in: &SparseState<f64>,
    p_w: &[(Vec<u8>, f64)],
    trials: usize,
    seed: u64,
) -> Result<PhaseInvarianceReport> {
    if circuit.tree().model() != RouterModel::TwoLevel || circuit.queries() != 2 {
        return Err(Error::Config("phase invariance applies to doubled two-level queries".into()));
    }
    let target = ideal_oracle_output(psi_in, circuit.memory())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fidelities = Vec::with_capacity(trials);
    for trial in 0..trials {
        let routers: Vec<(Vec<u8>, C64)> = p_w
            .iter()
            .map(|(w, p)| {
                let theta = if trial == 0 { 0.0 } else { rng.random::<f64>() * std::f64::consts::TAU };
                (w.clone(), C64::from_polar(p.sqrt(), theta))
            })
            .collect();
        let input = SparseState::product(circuit.layout().clone(), psi_in, &routers)?;
        let rho = run_density(circuit, model, &DenseState::from_pure(&input))?;
        fidelities.push(rho.fidelity_against_target_over_routers(&target)?);
    }
    let hi = fidelities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lo = fidelities.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(PhaseInvarianceReport { max_deviation: hi - lo, fidelities })
}
