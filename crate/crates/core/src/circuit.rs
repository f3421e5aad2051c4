//! Layered query circuits and their execution on sparse states.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::pauli::Pauli;
use crate::scalar::Real;
use crate::sparse_state::{LocalMatrix, RegisterLayout, SparseState};
use crate::topology::{RouterId, RouterModel, TreeTopology, WAIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Serial,
    Pipelined,
}

#[derive(Clone, Debug, PartialEq)]
pub enum GateEvent {
    /// Routing gate of `router` on `[control, hold, left, right]`.
    Routing { router: RouterId, sites: [usize; 4] },
    /// Exchange across the data/router boundary (injection).
    Swap { a: usize, b: usize },
    /// Moves the hold content of `router` into its control.
    Absorb { router: RouterId, hold: usize, control: usize },
    /// `Z^x` on a leaf leg.
    Copy { leg: usize, x: u8 },
    Cx { control: usize, target: usize },
    Pauli { site: usize, p: Pauli },
    /// Swap of the two child holds of `router`.
    Dress { router: RouterId, a: usize, b: usize },
    Unitary { sites: Vec<usize>, matrix: LocalMatrix<f64> },
}

impl GateEvent {
    pub fn sites(&self) -> Vec<usize> {
        match self {
            GateEvent::Routing { sites, .. } => sites.to_vec(),
            GateEvent::Swap { a, b } | GateEvent::Dress { a, b, .. } => vec![*a, *b],
            GateEvent::Absorb { hold, control, .. } => vec![*hold, *control],
            GateEvent::Copy { leg, .. } => vec![*leg],
            GateEvent::Cx { control, target } => vec![*control, *target],
            GateEvent::Pauli { site, .. } => vec![*site],
            GateEvent::Unitary { sites, .. } => sites.clone(),
        }
    }

    pub fn token(&self) -> String {
        let join = |s: &[usize]| s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            GateEvent::Routing { sites, .. } => format!("route({})", join(sites)),
            GateEvent::Swap { a, b } => format!("swap({a},{b})"),
            GateEvent::Absorb { hold, control, .. } => format!("absorb({hold},{control})"),
            GateEvent::Copy { leg, x } => format!("copy({leg},{x})"),
            GateEvent::Cx { control, target } => format!("cx({control},{target})"),
            GateEvent::Pauli { site, p } => format!("pauli({site},{p})"),
            GateEvent::Dress { a, b, .. } => format!("dress({a},{b})"),
            GateEvent::Unitary { sites, .. } => format!("unitary({})", join(sites)),
        }
    }

    pub fn apply<T: Real>(&self, state: &mut SparseState<T>) -> Result<()> {
        match self {
            GateEvent::Routing { sites, .. } => state.apply_routing_sites(*sites),
            GateEvent::Swap { a, b } | GateEvent::Dress { a, b, .. } => state.apply_swap(*a, *b),
            GateEvent::Absorb { hold, control, .. } => state.apply_swap(*hold, *control),
            GateEvent::Copy { leg, x } => state.apply_pauli(*leg, if *x == 1 { Pauli::Z } else { Pauli::I }),
            GateEvent::Cx { control, target } => state.apply_cx(*control, *target),
            GateEvent::Pauli { site, p } => state.apply_pauli(*site, *p),
            GateEvent::Unitary { sites, matrix } => state.apply_matrix(sites, &matrix.convert()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerRole {
    Downstream,
    Copy,
    Upstream,
    /// Between the two queries of a doubled circuit.
    Middle,
    /// Twirling Paulis; compiled into neighbouring gates, so noiseless.
    Frame,
    /// Slot for dressing swaps after a routing layer.
    Dressing,
}

impl LayerRole {
    fn tag(self) -> &'static str {
        match self {
            LayerRole::Downstream => "down",
            LayerRole::Copy => "copy",
            LayerRole::Upstream => "up",
            LayerRole::Middle => "mid",
            LayerRole::Frame => "frame",
            LayerRole::Dressing => "dress",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub events: Vec<GateEvent>,
    /// Followed by a noise step.
    pub noisy: bool,
    pub role: LayerRole,
}

impl Layer {
    pub fn new(role: LayerRole, noisy: bool, events: Vec<GateEvent>) -> Self {
        Layer { events, noisy, role }
    }

    pub fn support(&self) -> BTreeSet<usize> {
        self.events.iter().flat_map(|e| e.sites()).collect()
    }

    pub fn has_routing(&self) -> bool {
        self.events.iter().any(|e| matches!(e, GateEvent::Routing { .. }))
    }

    fn sorted_tokens(&self) -> Vec<String> {
        let mut t: Vec<String> = self.events.iter().map(|e| e.token()).collect();
        t.sort();
        t
    }
}

#[derive(Clone, Debug)]
pub struct QueryCircuit {
    tree: TreeTopology,
    layout: Arc<RegisterLayout>,
    layers: Vec<Layer>,
    memory: Vec<u8>,
    schedule: ScheduleKind,
    queries: usize,
}

impl QueryCircuit {
    /// Assembles a circuit from explicit layers, checking site ranges and per-layer disjointness.
    pub fn from_layers(
        tree: TreeTopology,
        layout: Arc<RegisterLayout>,
        layers: Vec<Layer>,
        memory: Vec<u8>,
        schedule: ScheduleKind,
        queries: usize,
    ) -> Result<Self> {
        for layer in &layers {
            let mut seen = BTreeSet::new();
            for e in &layer.events {
                for s in e.sites() {
                    layout.check_site(s)?;
                    if !seen.insert(s) {
                        return Err(Error::RepeatedSite);
                    }
                }
            }
        }
        Ok(QueryCircuit { tree, layout, layers, memory, schedule, queries })
    }

    pub fn tree(&self) -> &TreeTopology {
        &self.tree
    }

    pub fn layout(&self) -> &Arc<RegisterLayout> {
        &self.layout
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn memory(&self) -> &[u8] {
        &self.memory
    }

    pub fn schedule(&self) -> ScheduleKind {
        self.schedule
    }

    /// 1 for a single query, 2 for a doubled one.
    pub fn queries(&self) -> usize {
        self.queries
    }

    /// Number of layers followed by noise.
    pub fn noisy_steps(&self) -> usize {
        self.layers.iter().filter(|l| l.noisy).count()
    }

    /// Noisy layers of one query excluding the copy layer.
    pub fn tau(&self) -> usize {
        self.noisy_steps() / self.queries - 1
    }

    pub fn copy_layer_indices(&self) -> Vec<usize> {
        (0..self.layers.len()).filter(|&k| self.layers[k].role == LayerRole::Copy).collect()
    }

    /// Each single query reads the same gate events forwards and backwards.
    pub fn is_mirror_symmetric(&self) -> bool {
        let per = (self.layers.len() + 1 - self.queries) / self.queries;
        (0..self.queries).all(|q| {
            let chunk = &self.layers[q * (per + 1)..q * (per + 1) + per];
            (0..per).all(|k| chunk[k].sorted_tokens() == chunk[per - 1 - k].sorted_tokens())
        })
    }

    /// One line per layer: role tag (with `*` when noisy) followed by event tokens.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for layer in &self.layers {
            let _ = write!(out, "{}{}", layer.role.tag(), if layer.noisy { "*" } else { "" });
            for e in &layer.events {
                let _ = write!(out, " {}", e.token());
            }
            out.push('\n');
        }
        out
    }
}

/// Downstream gate program in serial order: one level of gates per layer.
fn downstream_serial(tree: &TreeTopology, layout: &RegisterLayout) -> Vec<Vec<GateEvent>> {
    let n = tree.depth();
    let routing = |l: usize| -> Vec<GateEvent> {
        tree.routers_at_level(l)
            .map(|r| {
                let (a, b) = layout.child_holds(r);
                GateEvent::Routing { router: r, sites: [layout.control_site(r), layout.hold_site(r), a, b] }
            })
            .collect()
    };
    let mut layers = Vec::new();
    for m in 1..=n {
        layers.push(vec![GateEvent::Swap { a: layout.address_site(m - 1), b: layout.hold_site(0) }]);
        for l in 1..m {
            layers.push(routing(l));
        }
        layers.push(
            tree.routers_at_level(m)
                .map(|r| GateEvent::Absorb { router: r, hold: layout.hold_site(r), control: layout.control_site(r) })
                .collect(),
        );
    }
    layers.push(vec![GateEvent::Swap { a: layout.bus_site(), b: layout.hold_site(0) }]);
    for l in 1..=n {
        layers.push(routing(l));
    }
    layers
}

/// Packs events as early as their sites allow, keeping program order on every site.
fn pack_asap(program: Vec<Vec<GateEvent>>, sites: usize) -> Vec<Vec<GateEvent>> {
    let mut free_at = vec![0usize; sites];
    let mut layers: Vec<Vec<GateEvent>> = Vec::new();
    for e in program.into_iter().flatten() {
        let s = e.sites();
        let slot = s.iter().map(|&x| free_at[x]).max().unwrap_or(0);
        if slot == layers.len() {
            layers.push(Vec::new());
        }
        layers[slot].push(e);
        for x in s {
            free_at[x] = slot + 1;
        }
    }
    layers
}

pub fn downstream_layers(tree: &TreeTopology, layout: &RegisterLayout, schedule: ScheduleKind) -> Vec<Vec<GateEvent>> {
    let serial = downstream_serial(tree, layout);
    match schedule {
        ScheduleKind::Serial => serial,
        ScheduleKind::Pipelined => pack_asap(serial, layout.len()),
    }
}

pub fn copy_layer(layout: &RegisterLayout, memory: &[u8]) -> Layer {
    let events = memory.iter().enumerate().map(|(i, &x)| GateEvent::Copy { leg: layout.leg_site(i), x }).collect();
    Layer::new(LayerRole::Copy, true, events)
}

fn check_memory(tree: &TreeTopology, memory: &[u8]) -> Result<()> {
    if memory.len() != tree.memory_size() {
        return Err(Error::MemoryLength { expected: tree.memory_size(), got: memory.len() });
    }
    if let Some((site, &digit)) = memory.iter().enumerate().find(|(_, &x)| x > 1) {
        return Err(Error::Radix { site, digit, radix: 2 });
    }
    Ok(())
}

fn single_query_layers(tree: &TreeTopology, layout: &RegisterLayout, memory: &[u8], schedule: ScheduleKind) -> Vec<Layer> {
    let down = downstream_layers(tree, layout, schedule);
    let mut layers: Vec<Layer> = down.iter().map(|e| Layer::new(LayerRole::Downstream, true, e.clone())).collect();
    layers.push(copy_layer(layout, memory));
    layers.extend(down.into_iter().rev().map(|e| Layer::new(LayerRole::Upstream, true, e)));
    layers
}

pub fn build_query_circuit(tree: &TreeTopology, memory: &[u8], schedule: ScheduleKind) -> Result<QueryCircuit> {
    check_memory(tree, memory)?;
    let layout = Arc::new(RegisterLayout::for_tree(tree, false));
    let layers = single_query_layers(tree, &layout, memory, schedule);
    QueryCircuit::from_layers(tree.clone(), layout, layers, memory.to_vec(), schedule, 1)
}

/// The middle layer of a doubled query: `CX` with the second bus as control.
pub fn middle_cx(layout: &RegisterLayout) -> Result<GateEvent> {
    let bp = layout.bus_prime_site().ok_or(Error::NoBusPrime)?;
    Ok(GateEvent::Cx { control: bp, target: layout.bus_site() })
}

/// `Q CX Q`; the retrieved bit ends on the second bus.
pub fn build_doubled_circuit(tree: &TreeTopology, memory: &[u8], schedule: ScheduleKind) -> Result<QueryCircuit> {
    check_memory(tree, memory)?;
    let layout = Arc::new(RegisterLayout::for_tree(tree, true));
    let q = single_query_layers(tree, &layout, memory, schedule);
    let mut layers = q.clone();
    layers.push(Layer::new(LayerRole::Middle, false, vec![middle_cx(&layout)?]));
    layers.extend(q);
    QueryCircuit::from_layers(tree.clone(), layout, layers, memory.to_vec(), schedule, 2)
}

/// The same circuit with every gate that couples data and router sites removed.
pub fn build_empty_address_circuit(circuit: &QueryCircuit) -> QueryCircuit {
    let k = circuit.layout.data_len();
    let mut out = circuit.clone();
    for layer in &mut out.layers {
        layer.events.retain(|e| {
            let s = e.sites();
            s.iter().all(|&x| x < k) || s.iter().all(|&x| x >= k)
        });
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RouterInit {
    AllWait,
    AllZero,
    /// Explicit digits for every router site, legs included.
    Digits(Vec<u8>),
}

impl RouterInit {
    pub fn digits(&self, tree: &TreeTopology, layout: &RegisterLayout) -> Result<Vec<u8>> {
        let count = layout.len() - layout.data_len();
        match self {
            RouterInit::AllWait => match tree.model() {
                RouterModel::ThreeLevel => Ok(vec![WAIT; count]),
                RouterModel::TwoLevel => Err(Error::Config("two-level routers have no wait state".into())),
            },
            RouterInit::AllZero => Ok(vec![0; count]),
            RouterInit::Digits(d) => {
                if d.len() != count {
                    return Err(Error::DigitCount { expected: count, got: d.len() });
                }
                Ok(d.clone())
            }
        }
    }
}

/// `sum_i alpha_i |i>|+>` on a data layout (every bus in `|+>`).
pub fn plus_bus_input<T: Real>(layout: Arc<RegisterLayout>, address_amps: &[(usize, Complex<T>)]) -> Result<SparseState<T>> {
    let n = layout.address_len();
    let buses = layout.data_len() - n;
    let h = T::lit(0.5f64.powi(buses as i32).sqrt());
    let mut amps = Vec::new();
    for &(i, a) in address_amps {
        if i >= 1 << n {
            return Err(Error::AddressLength { expected: n, got: usize::BITS as usize - i.leading_zeros() as usize });
        }
        for b in 0..1usize << buses {
            let mut digits = crate::topology::address_bits(i, n);
            digits.extend((0..buses).rev().map(|k| ((b >> k) & 1) as u8));
            amps.push((digits, a * h));
        }
    }
    SparseState::from_amplitudes(layout, amps)
}

/// Full input: a data state tensored with a router basis state.
pub fn query_input<T: Real>(circuit: &QueryCircuit, data: &SparseState<T>, init: &RouterInit) -> Result<SparseState<T>> {
    let w = init.digits(&circuit.tree, &circuit.layout)?;
    SparseState::product(circuit.layout.clone(), data, &[(w, Complex::new(T::one(), T::zero()))])
}

/// `sum_i alpha_i |i> Z^{x_i} |+>` on the output bus (the second bus when present).
pub fn ideal_oracle_output<T: Real>(psi_in: &SparseState<T>, memory: &[u8]) -> Result<SparseState<T>> {
    let layout = psi_in.layout();
    let n = layout.address_len();
    if memory.len() != 1 << n {
        return Err(Error::MemoryLength { expected: 1 << n, got: memory.len() });
    }
    let out_bus = layout.bus_prime_site().unwrap_or(layout.bus_site());
    for (idx, a) in psi_in.entries() {
        let mut partner = idx.0.clone();
        partner[out_bus] ^= 1;
        let b = psi_in.amplitude(&partner);
        if (*a - b).norm().to_f64_lossy() > T::TOL.sqrt() {
            return Err(Error::BusNotPlus);
        }
    }
    let amps = psi_in.entries().iter().map(|(idx, a)| {
        let i = idx.0[..n].iter().fold(0usize, |acc, &b| 2 * acc + b as usize);
        let sign = if idx.0[out_bus] == 1 && memory[i] == 1 { -T::one() } else { T::one() };
        (idx.0.clone(), *a * sign)
    });
    SparseState::from_amplitudes(layout.clone(), amps)
}

pub fn run_circuit_with_rng<T: Real>(
    state: &mut SparseState<T>,
    circuit: &QueryCircuit,
    noise: Option<&NoiseModel>,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    if state.layout().as_ref() != circuit.layout.as_ref() {
        return Err(Error::LayoutMismatch);
    }
    let mut step = 0;
    for layer in &circuit.layers {
        for e in &layer.events {
            e.apply(state)?;
        }
        if layer.noisy {
            if let Some(model) = noise {
                model.apply_step(state, step, rng)?;
            }
            step += 1;
        }
    }
    Ok(())
}

/// Executes the circuit; with noise, one sampled action per location after each noisy layer.
pub fn run_circuit<T: Real>(
    state: &mut SparseState<T>,
    circuit: &QueryCircuit,
    noise: Option<&NoiseModel>,
    seed: u64,
) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    run_circuit_with_rng(state, circuit, noise, &mut rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::build_tree;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    fn fidelity_for(circuit: &QueryCircuit, amps: &[(usize, Complex<f64>)], init: &RouterInit) -> f64 {
        let data = plus_bus_input(Arc::new(circuit.layout().data_layout()), amps).unwrap();
        let mut s = query_input(circuit, &data, init).unwrap();
        run_circuit(&mut s, circuit, None, 0).unwrap();
        let target = ideal_oracle_output(&data, circuit.memory()).unwrap();
        s.fidelity_against_target_over_routers(&target).unwrap()
    }

    #[test]
    fn depth_one_query_retrieves_and_restores() {
        let tree = build_tree(1, RouterModel::ThreeLevel).unwrap();
        let q = build_query_circuit(&tree, &[0, 1], ScheduleKind::Serial).unwrap();
        assert_eq!(q.tau(), 8);
        for i in 0..2 {
            let data = plus_bus_input(Arc::new(q.layout().data_layout()), &[(i, c(1.0))]).unwrap();
            let mut s = query_input(&q, &data, &RouterInit::AllWait).unwrap();
            run_circuit(&mut s, &q, None, 0).unwrap();
            let (out, w) = s.data_part_if_product().unwrap();
            assert!(w.iter().all(|&d| d == WAIT));
            assert!(out.max_difference(&ideal_oracle_output(&data, q.memory()).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn serial_tau_by_depth() {
        for (n, tau) in [(1, 8), (2, 16), (3, 26), (4, 38)] {
            let tree = build_tree(n, RouterModel::TwoLevel).unwrap();
            let q = build_query_circuit(&tree, &vec![0; 1 << n], ScheduleKind::Serial).unwrap();
            assert_eq!(q.tau(), tau);
            assert_eq!(q.noisy_steps(), tau + 1);
            assert!(q.is_mirror_symmetric());
        }
    }

    #[test]
    fn pipelining_shortens_deep_trees() {
        let tree = build_tree(4, RouterModel::ThreeLevel).unwrap();
        let s = build_query_circuit(&tree, &[0; 16], ScheduleKind::Serial).unwrap();
        let p = build_query_circuit(&tree, &[0; 16], ScheduleKind::Pipelined).unwrap();
        assert!(p.tau() < s.tau());
        assert!(p.is_mirror_symmetric());
        let mut x = [0u8; 16];
        x[5] = 1;
        x[12] = 1;
        let p = build_query_circuit(&tree, &x, ScheduleKind::Pipelined).unwrap();
        let amps: Vec<_> = (0..16).map(|i| (i, c(0.25))).collect();
        assert!((fidelity_for(&p, &amps, &RouterInit::AllWait) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_memory_is_identity() {
        let tree = build_tree(2, RouterModel::TwoLevel).unwrap();
        let q = build_query_circuit(&tree, &[0; 4], ScheduleKind::Serial).unwrap();
        let data = plus_bus_input(Arc::new(q.layout().data_layout()), &[(1, c(0.6)), (2, c(0.8))]).unwrap();
        let s0 = query_input(&q, &data, &RouterInit::AllZero).unwrap();
        let mut s = s0.clone();
        run_circuit(&mut s, &q, None, 0).unwrap();
        assert!(s.max_difference(&s0) < 1e-15);
    }

    #[test]
    fn query_twice_is_identity() {
        let tree = build_tree(2, RouterModel::ThreeLevel).unwrap();
        let q = build_query_circuit(&tree, &[1, 0, 1, 1], ScheduleKind::Pipelined).unwrap();
        let data = plus_bus_input(Arc::new(q.layout().data_layout()), &[(0, c(0.6)), (3, c(0.8))]).unwrap();
        let s0 = query_input(&q, &data, &RouterInit::AllWait).unwrap();
        let mut s = s0.clone();
        run_circuit(&mut s, &q, None, 0).unwrap();
        run_circuit(&mut s, &q, None, 0).unwrap();
        assert!(s.max_difference(&s0) < 1e-15);
    }

    #[test]
    fn doubled_query_from_arbitrary_routers() {
        let tree = build_tree(2, RouterModel::TwoLevel).unwrap();
        let x = [0, 1, 1, 0];
        let q = build_doubled_circuit(&tree, &x, ScheduleKind::Serial).unwrap();
        assert_eq!(q.tau(), 16);
        let count = q.layout().len() - q.layout().data_len();
        let w: Vec<u8> = (0..count).map(|k| ((k * 7 + 3) % 5 % 2) as u8).collect();
        let init = RouterInit::Digits(w.clone());
        for i in 0..4 {
            let data = plus_bus_input(Arc::new(q.layout().data_layout()), &[(i, c(1.0))]).unwrap();
            let mut s = query_input(&q, &data, &init).unwrap();
            run_circuit(&mut s, &q, None, 0).unwrap();
            let (out, w_out) = s.data_part_if_product().unwrap();
            assert_eq!(w_out, w);
            assert!(out.max_difference(&ideal_oracle_output(&data, &x).unwrap()) < 1e-15);
        }
    }

    #[test]
    fn single_query_fails_from_arbitrary_two_level_routers() {
        let tree = build_tree(2, RouterModel::TwoLevel).unwrap();
        let q = build_query_circuit(&tree, &[0, 1, 1, 0], ScheduleKind::Serial).unwrap();
        let count = q.layout().len() - q.layout().data_len();
        // Junk 1 on the leg of cell 1 picks up x_1 only for addresses other than 1.
        let mut w = vec![0u8; count];
        w[7] = 1;
        let amps = [(0, c(0.5)), (1, c(0.5)), (2, c(0.5)), (3, c(0.5))];
        assert!(fidelity_for(&q, &amps, &RouterInit::Digits(w)) < 1.0 - 1e-6);
        assert!((fidelity_for(&q, &amps, &RouterInit::AllZero) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_address_circuit_leaves_wait_routers_alone() {
        let tree = build_tree(3, RouterModel::ThreeLevel).unwrap();
        let q = build_query_circuit(&tree, &[1; 8], ScheduleKind::Serial).unwrap();
        let e = build_empty_address_circuit(&q);
        assert_eq!(e.tau(), q.tau());
        let data = plus_bus_input(Arc::new(q.layout().data_layout()), &[(5, c(1.0))]).unwrap();
        let s0 = query_input(&e, &data, &RouterInit::AllWait).unwrap();
        let mut s = s0.clone();
        run_circuit(&mut s, &e, None, 0).unwrap();
        assert!(s.max_difference(&s0) < 1e-15);
    }

    #[test]
    fn oracle_output_rejects_non_plus_bus() {
        let layout = Arc::new(RegisterLayout::data(1, false));
        let psi = SparseState::<f64>::basis_state(layout, &[0, 0]).unwrap();
        assert_eq!(ideal_oracle_output(&psi, &[0, 1]).unwrap_err(), Error::BusNotPlus);
    }

    #[test]
    fn memory_length_checked() {
        let tree = build_tree(2, RouterModel::ThreeLevel).unwrap();
        assert!(matches!(
            build_query_circuit(&tree, &[0; 3], ScheduleKind::Serial),
            Err(Error::MemoryLength { expected: 4, got: 3 })
        ));
    }

    #[test]
    fn text_format_lists_layers() {
        let tree = build_tree(1, RouterModel::ThreeLevel).unwrap();
        let q = build_query_circuit(&tree, &[0, 1], ScheduleKind::Serial).unwrap();
        let text = q.to_text();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 9);
        assert_eq!(lines[0], "down* swap(0,3)");
        assert_eq!(lines[1], "down* absorb(3,2)");
        assert_eq!(lines[3], "down* route(2,3,4,5)");
        assert_eq!(lines[4], "copy* copy(4,0) copy(5,1)");
        assert_eq!(lines[8], "up* swap(0,3)");
    }
}
