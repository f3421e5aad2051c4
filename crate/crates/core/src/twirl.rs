//! Group twirls of channels, and delayed Pauli twirling of query circuits.
//!
//! In-situ twirling places a random Pauli before every downstream layer and undoes it at
//! the mirrored upstream layer. Bit flips that would misroute a query are repaired by
//! swapping the two child holds right after the affected routing gate. Edge twirling only
//! conjugates whole queries and repairs address flips by permuting the memory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::circuit::{copy_layer, middle_cx, GateEvent, Layer, LayerRole, QueryCircuit};
use crate::error::{Error, Result};
use crate::noise::{from_dmatrix, pauli_string_matrix, to_dmatrix, ChannelKind, ChannelSpec, CMatrix, C64};
use crate::pauli::Pauli;
use crate::sparse_state::RegisterLayout;
use crate::topology::{address_bits, RouterId, RouterModel};

/// Finite group of unitaries with labels.
#[derive(Clone, Debug)]
pub struct TwirlGroup {
    pub elements: Vec<(String, CMatrix)>,
}

fn equal_up_to_phase(a: &CMatrix, b: &CMatrix) -> bool {
    let overlap = (a.adjoint() * b).trace();
    (overlap.norm() - a.nrows() as f64).abs() < 1e-9
}

impl TwirlGroup {
    /// All Pauli strings on `k` qubits.
    pub fn pauli(k: usize) -> Self {
        let elements = (0..1usize << (2 * k))
            .map(|code| {
                let ps: Vec<Pauli> = (0..k).map(|s| Pauli::from_index(code >> (2 * (k - 1 - s)))).collect();
                (crate::pauli::format_string(&ps), to_dmatrix(&pauli_string_matrix(&ps, &vec![2; k])))
            })
            .collect();
        TwirlGroup { elements }
    }

    /// `<IZ, ZI, XX>` modulo phases.
    pub fn embedding() -> Self {
        let labels = ["II", "IZ", "ZI", "ZZ", "XX", "XY", "YX", "YY"];
        let elements = labels
            .iter()
            .map(|l| {
                let ps = crate::pauli::parse_string(l).expect("valid label");
                (l.to_string(), to_dmatrix(&pauli_string_matrix(&ps, &[2, 2])))
            })
            .collect();
        TwirlGroup { elements }
    }

    pub fn dim(&self) -> usize {
        self.elements.first().map_or(0, |e| e.1.nrows())
    }

    pub fn contains_identity(&self) -> bool {
        let id = CMatrix::identity(self.dim(), self.dim());
        self.elements.iter().any(|(_, g)| equal_up_to_phase(g, &id))
    }

    /// Closed under multiplication up to a global phase.
    pub fn is_closed(&self) -> bool {
        self.elements.iter().all(|(_, a)| {
            self.elements.iter().all(|(_, b)| {
                let prod = a * b;
                self.elements.iter().any(|(_, c)| equal_up_to_phase(&prod, c))
            })
        })
    }
}

/// `sum_K K (x) conj(K)`, the channel acting on row-major vectorized matrices.
pub fn superoperator(kraus: &[CMatrix]) -> CMatrix {
    let d = kraus[0].nrows();
    let mut s = CMatrix::zeros(d * d, d * d);
    for k in kraus {
        s += k.kronecker(&k.conjugate());
    }
    s
}

/// Minimal Kraus list from the Choi matrix eigendecomposition.
pub fn compact_kraus(kraus: &[CMatrix]) -> Vec<CMatrix> {
    let d = kraus[0].nrows();
    let mut choi = CMatrix::zeros(d * d, d * d);
    for k in kraus {
        let v = CMatrix::from_iterator(d * d, 1, (0..d * d).map(|i| k[(i / d, i % d)]));
        choi += &v * v.adjoint();
    }
    let eig = choi.symmetric_eigen();
    let mut out = Vec::new();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > 1e-14 {
            let col = eig.eigenvectors.column(j);
            out.push(CMatrix::from_fn(d, d, |r, c| col[r * d + c] * lambda.sqrt()));
        }
    }
    out
}

/// Uniform average of `g^dagger E(g . g^dagger) g` over the group.
pub fn twirl_channel(spec: &ChannelSpec, group: &TwirlGroup) -> Result<ChannelSpec> {
    if group.dim() != spec.dim() {
        return Err(Error::Dimension(group.dim()));
    }
    let scale = C64::new(1.0 / (group.elements.len() as f64).sqrt(), 0.0);
    let mut kraus = Vec::new();
    for k in spec.kraus().iter().map(to_dmatrix) {
        for (_, g) in &group.elements {
            kraus.push(g.adjoint() * &k * g * scale);
        }
    }
    let compact = compact_kraus(&kraus).iter().map(from_dmatrix).collect();
    ChannelSpec::new(ChannelKind::General { kraus: compact }, spec.radices.clone())
}

/// Process matrix in the Pauli basis with coefficients `Tr(P_a K) / d`; its trace is 1
/// for a trace-preserving channel.
pub fn chi_matrix(spec: &ChannelSpec) -> Result<CMatrix> {
    let d = spec.dim();
    let k = match d {
        2 => 1,
        4 if spec.radices.iter().all(|&r| r == 2) => 2,
        _ => return Err(Error::Dimension(d)),
    };
    let basis = TwirlGroup::pauli(k).elements;
    let mut chi = CMatrix::zeros(basis.len(), basis.len());
    for kr in spec.kraus().iter().map(to_dmatrix) {
        let c: Vec<C64> = basis.iter().map(|(_, p)| (p * &kr).trace() / d as f64).collect();
        for a in 0..c.len() {
            for b in 0..c.len() {
                chi[(a, b)] += c[a] * c[b].conj();
            }
        }
    }
    Ok(chi)
}

pub fn max_off_diagonal(m: &CMatrix) -> f64 {
    let mut worst = 0.0f64;
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if r != c {
                worst = worst.max(m[(r, c)].norm());
            }
        }
    }
    worst
}

/// Random channel from a Haar-like unitary dilation, used by tests and the embedding analysis.
pub fn random_channel(dim: usize, kraus_count: usize, rng: &mut ChaCha8Rng) -> ChannelSpec {
    let rows = dim * kraus_count;
    let g = CMatrix::from_fn(rows, dim, |_, _| C64::new(gauss(rng), gauss(rng)));
    // Orthonormal columns of the QR factor form an isometry, sliced into Kraus blocks.
    let q = g.qr().q();
    let kraus = (0..kraus_count)
        .map(|k| from_dmatrix(&q.view((k * dim, 0), (dim, dim)).into_owned()))
        .collect();
    let radices = if dim == 4 { vec![2, 2] } else { vec![dim as u8] };
    ChannelSpec::new(ChannelKind::General { kraus }, radices).expect("isometry gives a channel")
}

/// Random mixture of random unitaries, hence unital.
pub fn random_unital_channel(dim: usize, terms: usize, rng: &mut ChaCha8Rng) -> ChannelSpec {
    let weights: Vec<f64> = (0..terms).map(|_| rng.random::<f64>() + 0.05).collect();
    let total: f64 = weights.iter().sum();
    let kraus = weights
        .iter()
        .map(|w| {
            let g = CMatrix::from_fn(dim, dim, |_, _| C64::new(gauss(rng), gauss(rng)));
            from_dmatrix(&(g.qr().q() * C64::new((w / total).sqrt(), 0.0)))
        })
        .collect();
    let radices = if dim == 4 { vec![2, 2] } else { vec![dim as u8] };
    ChannelSpec::new(ChannelKind::General { kraus }, radices).expect("mixture of unitaries")
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingReport {
    /// Pauli-basis index pairs allowed to survive the embedding twirl.
    pub predicted_support: BTreeSet<(usize, usize)>,
    /// Largest chi entry outside the predicted support over the random channels.
    pub max_outside: f64,
    /// Superoperator change when twirling a channel already in the predicted span.
    pub fixed_point_deviation: f64,
    pub qutrit_elements_checked: usize,
    /// Qutrit Pauli elements exchanging `|0>` and `|1>` while fixing `|2>`.
    pub qutrit_qualifying: usize,
}

/// Twirls random unital two-qubit channels over the embedding group and checks the
/// qutrit Pauli group for an active-subspace flip.
pub fn analyze_embedding_twirl(channels: usize, seed: u64) -> Result<EmbeddingReport> {
    let group = TwirlGroup::embedding();
    let basis = TwirlGroup::pauli(2).elements;
    let zz = to_dmatrix(&pauli_string_matrix(&[Pauli::Z, Pauli::Z], &[2, 2]));
    let id = CMatrix::identity(4, 4);
    let mut predicted = BTreeSet::new();
    for a in 0..16 {
        for b in 0..16 {
            let prod = &basis[a].1 * &basis[b].1;
            if equal_up_to_phase(&prod, &id) || equal_up_to_phase(&prod, &zz) {
                predicted.insert((a, b));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_outside = 0.0f64;
    for _ in 0..channels {
        let e = random_unital_channel(4, 3, &mut rng);
        let chi = chi_matrix(&twirl_channel(&e, &group)?)?;
        for a in 0..16 {
            for b in 0..16 {
                if !predicted.contains(&(a, b)) {
                    max_outside = max_outside.max(chi[(a, b)].norm());
                }
            }
        }
    }
    let kappa: f64 = 0.3;
    let rot = &id * C64::new(kappa.cos(), 0.0) + &zz * C64::new(0.0, kappa.sin());
    let xx = to_dmatrix(&pauli_string_matrix(&[Pauli::X, Pauli::X], &[2, 2]));
    let inside = ChannelSpec::new(
        ChannelKind::General { kraus: vec![from_dmatrix(&(rot * C64::new(0.8f64.sqrt(), 0.0))), from_dmatrix(&(xx * C64::new(0.2f64.sqrt(), 0.0)))] },
        vec![2, 2],
    )?;
    let twirled = twirl_channel(&inside, &group)?;
    let before = superoperator(&inside.kraus().iter().map(to_dmatrix).collect::<Vec<_>>());
    let after = superoperator(&twirled.kraus().iter().map(to_dmatrix).collect::<Vec<_>>());
    let fixed_point_deviation = (before - after).iter().map(|z| z.norm()).fold(0.0, f64::max);
    let (checked, qualifying) = qutrit_obstruction();
    Ok(EmbeddingReport {
        predicted_support: predicted,
        max_outside,
        fixed_point_deviation,
        qutrit_elements_checked: checked,
        qutrit_qualifying: qualifying,
    })
}

/// Enumerates `w^c X^a Z^b` on a qutrit and counts elements mapping `|0> <-> |1>` up to phase with `|2>` fixed.
pub fn qutrit_obstruction() -> (usize, usize) {
    let omega = C64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0);
    let shift = DMatrix::from_fn(3, 3, |r, c| if r == (c + 1) % 3 { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) });
    let clock = DMatrix::from_fn(3, 3, |r, c| if r == c { omega.powu(r as u32) } else { C64::new(0.0, 0.0) });
    let mut checked = 0;
    let mut qualifying = 0;
    for a in 0..3u32 {
        for b in 0..3u32 {
            for c in 0..3u32 {
                let g = shift.pow(a) * clock.pow(b) * omega.powu(c);
                checked += 1;
                let maps = |from: usize, to: usize| g[(to, from)].norm() > 1.0 - 1e-12;
                if maps(0, 1) && maps(1, 0) && (g[(2, 2)] - C64::new(1.0, 0.0)).norm() < 1e-12 {
                    qualifying += 1;
                }
            }
        }
    }
    (checked, qualifying)
}

/// Content of a site during symbolic routing of one address.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Content {
    Addr(usize),
    Bus,
    Junk,
}

/// An X-type label on address content outside a control, consumed when that content is absorbed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FlipRecord {
    pub layer: usize,
    pub site: usize,
    /// Address qubit (0-based) carried by the flipped content.
    pub address_qubit: usize,
    /// Tree level where the flip happened; 0 for the address register.
    pub origin_level: usize,
    /// Level of the router that absorbs the content.
    pub destination_level: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TwirlFrame {
    /// Label before downstream layer `t` on `site`; missing entries are identity.
    pub layer_paulis: BTreeMap<(usize, usize), Pauli>,
    /// Routers whose child holds are swapped right after routing layer `t`.
    pub dressing: BTreeMap<usize, BTreeSet<RouterId>>,
    pub ledger: Vec<FlipRecord>,
    /// Pauli on (bus, second bus) before the middle CX.
    pub outer_t: [Pauli; 2],
    /// `CX T^dagger CX` up to phase, after the middle CX.
    pub correction_m: [Pauli; 2],
}

impl TwirlFrame {
    /// Lines of `layer site label` for non-identity labels.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for ((t, s), p) in &self.layer_paulis {
            if *p != Pauli::I {
                let _ = writeln!(out, "{t} {s} {p}");
            }
        }
        let _ = writeln!(out, "outer {}{} {}{}", self.outer_t[0], self.outer_t[1], self.correction_m[0], self.correction_m[1]);
        out
    }

    pub fn is_identity(&self) -> bool {
        self.layer_paulis.values().all(|&p| p == Pauli::I) && self.outer_t == [Pauli::I, Pauli::I]
    }
}

/// Layers of the first downstream half of `circuit`.
fn base_downstream(circuit: &QueryCircuit) -> Result<Vec<Layer>> {
    let layers: Vec<Layer> = circuit.layers().iter().take_while(|l| l.role == LayerRole::Downstream).cloned().collect();
    if layers.is_empty() || circuit.layers().get(layers.len()).map(|l| l.role) != Some(LayerRole::Copy) {
        return Err(Error::Frame("circuit does not start with a plain downstream half".into()));
    }
    Ok(layers)
}

fn cx_matrix() -> CMatrix {
    // Sites ordered (bus, second bus); the second bus controls.
    let mut m = CMatrix::zeros(4, 4);
    for (r, c) in [(0, 0), (3, 1), (2, 2), (1, 3)] {
        m[(r, c)] = C64::new(1.0, 0.0);
    }
    m
}

/// `CX T^dagger CX` as a Pauli pair on (bus, second bus).
pub fn correction_for(t: [Pauli; 2]) -> [Pauli; 2] {
    let tm = to_dmatrix(&pauli_string_matrix(&t, &[2, 2]));
    let cx = cx_matrix();
    let m = &cx * tm.adjoint() * &cx;
    for a in Pauli::ALL {
        for b in Pauli::ALL {
            if equal_up_to_phase(&m, &to_dmatrix(&pauli_string_matrix(&[a, b], &[2, 2]))) {
                return [a, b];
            }
        }
    }
    unreachable!("Clifford conjugation maps Paulis to Paulis")
}

/// Symbolically routes every basis address through the twirled downstream half and
/// derives the dressing swaps and the flip ledger.
fn derive_dressing(
    circuit: &QueryCircuit,
    down: &[Layer],
    paulis: &BTreeMap<(usize, usize), Pauli>,
) -> Result<(BTreeMap<usize, BTreeSet<RouterId>>, Vec<FlipRecord>)> {
    let tree = circuit.tree();
    let layout = circuit.layout();
    let n = tree.depth();
    let level_of = |site: usize| layout.owner(site).map_or(0, |r| tree.level(r));
    // Required dressing per (layer, router): Some(bool) once any branch constrains it.
    let mut required: BTreeMap<(usize, RouterId), bool> = BTreeMap::new();
    let mut ledger: Vec<FlipRecord> = Vec::new();
    for addr in 0..tree.memory_size() {
        let bits = address_bits(addr, n);
        let mut content = vec![Content::Junk; layout.len()];
        let mut parity = vec![false; layout.len()];
        for m in 0..n {
            content[layout.address_site(m)] = Content::Addr(m);
        }
        content[layout.bus_site()] = Content::Bus;
        // Pending flips keyed by address qubit: (layer, site, origin level).
        let mut pending: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n];
        for (t, layer) in down.iter().enumerate() {
            for s in layer.support() {
                let p = paulis.get(&(t, s)).copied().unwrap_or(Pauli::I);
                if p.flips() {
                    parity[s] ^= true;
                    if let (Content::Addr(m), false) = (content[s], matches!(layout.role(s), crate::sparse_state::SiteRole::Control(_))) {
                        pending[m].push((t, s, level_of(s)));
                    }
                }
            }
            let mut dressed = BTreeSet::new();
            for e in &layer.events {
                match e {
                    GateEvent::Swap { a, b } => {
                        content.swap(*a, *b);
                        parity.swap(*a, *b);
                    }
                    GateEvent::Absorb { router, hold, control } => {
                        content.swap(*hold, *control);
                        parity.swap(*hold, *control);
                        if let Content::Addr(m) = content[*control] {
                            for (lt, site, origin) in pending[m].drain(..) {
                                ledger.push(FlipRecord {
                                    layer: lt,
                                    site,
                                    address_qubit: m,
                                    origin_level: origin,
                                    destination_level: tree.level(*router),
                                });
                            }
                        }
                    }
                    GateEvent::Routing { router, sites: [c, h, l, r] } => {
                        let Content::Addr(m) = content[*c] else {
                            if [*h, *l, *r].iter().any(|&s| content[s] != Content::Junk) {
                                return Err(Error::Frame(format!("router {router} idles while holding query content")));
                            }
                            continue;
                        };
                        if m != tree.level(*router) - 1 {
                            return Err(Error::Frame(format!("router {router} controlled by address qubit {m}")));
                        }
                        let physical = bits[m] ^ u8::from(parity[*c]);
                        let target = if physical == 0 { *l } else { *r };
                        content.swap(*h, target);
                        parity.swap(*h, target);
                        let dress = parity[*c];
                        match required.insert((t, *router), dress) {
                            Some(prev) if prev != dress => {
                                return Err(Error::Frame(format!("router {router} needs inconsistent dressing at layer {t}")));
                            }
                            _ => {}
                        }
                        if dress {
                            dressed.insert((*l, *r));
                        }
                    }
                    other => return Err(Error::Frame(format!("unexpected downstream event {}", other.token()))),
                }
            }
            for (l, r) in dressed {
                content.swap(l, r);
                parity.swap(l, r);
            }
        }
        if let Some(&(layer, site, _)) = pending.iter().flatten().next() {
            return Err(Error::UnconsumedFlip { layer, site });
        }
        let leg = layout.leg_site(addr);
        if content[leg] != Content::Bus {
            return Err(Error::Frame(format!("bus misses cell {addr}")));
        }
    }
    let mut dressing: BTreeMap<usize, BTreeSet<RouterId>> = BTreeMap::new();
    for ((t, r), d) in required {
        if d {
            dressing.entry(t).or_default().insert(r);
        }
    }
    ledger.sort_by_key(|f| (f.layer, f.site));
    ledger.dedup();
    Ok((dressing, ledger))
}

/// Dressing and ledger for an explicit set of labels.
pub fn frame_from_labels(
    circuit: &QueryCircuit,
    layer_paulis: BTreeMap<(usize, usize), Pauli>,
    outer_t: [Pauli; 2],
) -> Result<TwirlFrame> {
    if circuit.tree().model() != RouterModel::TwoLevel {
        return Err(Error::Frame("circuit-level twirling needs two-level routers".into()));
    }
    let down = base_downstream(circuit)?;
    let (dressing, ledger) = derive_dressing(circuit, &down, &layer_paulis)?;
    Ok(TwirlFrame { layer_paulis, dressing, ledger, outer_t, correction_m: correction_for(outer_t) })
}

/// Uniform labels on the support of every downstream layer and a uniform outer pair.
pub fn sample_twirl_frame(circuit: &QueryCircuit, seed: u64) -> Result<TwirlFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let down = base_downstream(circuit)?;
    let mut labels = BTreeMap::new();
    for (t, layer) in down.iter().enumerate() {
        for s in layer.support() {
            labels.insert((t, s), Pauli::from_index(rng.random_range(0..4)));
        }
    }
    let outer = [Pauli::from_index(rng.random_range(0..4)), Pauli::from_index(rng.random_range(0..4))];
    frame_from_labels(circuit, labels, outer)
}

fn pauli_layer(labels: impl IntoIterator<Item = (usize, Pauli)>) -> Option<Layer> {
    let events: Vec<GateEvent> =
        labels.into_iter().filter(|(_, p)| *p != Pauli::I).map(|(site, p)| GateEvent::Pauli { site, p }).collect();
    (!events.is_empty()).then(|| Layer::new(LayerRole::Frame, false, events))
}

/// `Q_tw M CX T Q_tw` with `Q_tw` the dressed, Pauli-framed single query.
pub fn dress_circuit(circuit: &QueryCircuit, frame: &TwirlFrame) -> Result<QueryCircuit> {
    let layout = circuit.layout();
    let bus_prime = layout.bus_prime_site().ok_or(Error::NoBusPrime)?;
    let down = base_downstream(circuit)?;
    let mut half: Vec<Layer> = Vec::new();
    for (t, layer) in down.iter().enumerate() {
        let labels = layer.support().into_iter().map(|s| (s, frame.layer_paulis.get(&(t, s)).copied().unwrap_or(Pauli::I)));
        half.extend(pauli_layer(labels));
        half.push(layer.clone());
        if layer.has_routing() {
            let swaps = frame
                .dressing
                .get(&t)
                .into_iter()
                .flatten()
                .map(|&r| {
                    let (a, b) = layout.child_holds(r);
                    GateEvent::Dress { router: r, a, b }
                })
                .collect();
            half.push(Layer::new(LayerRole::Dressing, true, swaps));
        }
    }
    let mut single = half.clone();
    single.push(copy_layer(layout, circuit.memory()));
    single.extend(half.into_iter().rev().map(|mut l| {
        if l.role == LayerRole::Downstream {
            l.role = LayerRole::Upstream;
        }
        l
    }));
    let bus = layout.bus_site();
    let mut layers = single.clone();
    layers.extend(pauli_layer([(bus, frame.outer_t[0]), (bus_prime, frame.outer_t[1])]));
    layers.push(Layer::new(LayerRole::Middle, false, vec![middle_cx(layout)?]));
    layers.extend(pauli_layer([(bus, frame.correction_m[0]), (bus_prime, frame.correction_m[1])]));
    layers.extend(single);
    QueryCircuit::from_layers(circuit.tree().clone(), layout.clone(), layers, circuit.memory().to_vec(), circuit.schedule(), 2)
}

/// Exchanges `x_i` with `x_{NOT_m(i)}` for every address qubit `m` whose label flips.
pub fn memory_reshuffle(memory: &[u8], paulis: &[Pauli]) -> Result<Vec<u8>> {
    let n = paulis.len();
    if memory.len() != 1 << n {
        return Err(Error::MemoryLength { expected: 1 << n, got: memory.len() });
    }
    let mut x = memory.to_vec();
    for (m, p) in paulis.iter().enumerate() {
        if p.flips() {
            let bit = 1 << (n - 1 - m);
            x = (0..x.len()).map(|i| x[i ^ bit]).collect();
        }
    }
    Ok(x)
}

/// One Pauli per site applied at both ends of every query.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EdgeFrame {
    pub paulis: Vec<Pauli>,
}

impl EdgeFrame {
    pub fn identity(layout: &RegisterLayout) -> Self {
        EdgeFrame { paulis: vec![Pauli::I; layout.len()] }
    }

    pub fn address_paulis(&self, layout: &RegisterLayout) -> Vec<Pauli> {
        (0..layout.address_len()).map(|m| self.paulis[layout.address_site(m)]).collect()
    }
}

/// Uniform labels on all sites; without doubling the bus label is restricted to `{I, Z}`.
pub fn sample_edge_frame(layout: &RegisterLayout, doubled: bool, seed: u64) -> EdgeFrame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut paulis: Vec<Pauli> = (0..layout.len()).map(|_| Pauli::from_index(rng.random_range(0..4))).collect();
    if !doubled {
        paulis[layout.bus_site()] = if rng.random::<bool>() { Pauli::Z } else { Pauli::I };
    }
    EdgeFrame { paulis }
}

/// Conjugates each query by the frame Paulis with the memory permuted to match the
/// address flips. Adjacent frame layers are compiled into one Pauli per site.
pub fn build_edge_twirled_circuit(circuit: &QueryCircuit, frame: &EdgeFrame) -> Result<QueryCircuit> {
    let layout = circuit.layout();
    if frame.paulis.len() != layout.len() {
        return Err(Error::Frame("edge frame does not cover the register".into()));
    }
    let doubled = circuit.queries() == 2;
    if !doubled {
        if circuit.tree().model() != RouterModel::ThreeLevel {
            return Err(Error::Config("edge twirling without doubling needs three-level routers".into()));
        }
        if frame.paulis[layout.bus_site()].flips() {
            return Err(Error::Frame("bus label must be I or Z without doubling".into()));
        }
    }
    let memory = memory_reshuffle(circuit.memory(), &frame.address_paulis(layout))?;
    let per = if doubled { (circuit.layers().len() - 1) / 2 } else { circuit.layers().len() };
    let query: Vec<Layer> = circuit.layers()[..per]
        .iter()
        .map(|l| if l.role == LayerRole::Copy { copy_layer(layout, &memory) } else { l.clone() })
        .collect();
    let all = || frame.paulis.iter().copied().enumerate();
    let mut layers: Vec<Layer> = pauli_layer(all()).into_iter().collect();
    layers.extend(query.iter().cloned());
    if doubled {
        let bp = layout.bus_prime_site().ok_or(Error::NoBusPrime)?;
        let bus = layout.bus_site();
        let on_cx = |s: usize| s == bus || s == bp;
        // Off the CX sites the closing and reopening labels cancel.
        layers.extend(pauli_layer(all().filter(|(s, _)| on_cx(*s))));
        layers.push(Layer::new(LayerRole::Middle, false, vec![middle_cx(layout)?]));
        layers.extend(pauli_layer(all().filter(|(s, _)| on_cx(*s))));
        layers.extend(query);
    }
    layers.extend(pauli_layer(all()));
    QueryCircuit::from_layers(circuit.tree().clone(), layout.clone(), layers, memory, circuit.schedule(), circuit.queries())
}
