//! Sparse pure states over the mixed-radix register of a routing tree.
//!
//! Site order is fixed: address qubits (most significant first), bus, optional second
//! bus, then each router's control and hold in breadth-first order, then the leaf legs
//! in cell order. The address and bus sites form the data prefix of every layout.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::{BuildHasherDefault, DefaultHasher};
use std::sync::Arc;

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::pauli::{i_pow, Pauli};
use crate::scalar::Real;
use crate::topology::{RouterId, TreeTopology};

pub const DEFAULT_PRUNE_TOL: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SiteRole {
    Address(usize),
    Bus,
    BusPrime,
    Control(RouterId),
    Hold(RouterId),
    Leg(usize),
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegisterLayout {
    radices: Vec<u8>,
    roles: Vec<SiteRole>,
    data_len: usize,
    n_address: usize,
    bus_prime: bool,
    routers: usize,
    cells: usize,
}

impl RegisterLayout {
    pub fn for_tree(tree: &TreeTopology, with_bus_prime: bool) -> Self {
        let mut layout = Self::data(tree.depth(), with_bus_prime);
        let q = tree.model().local_dim();
        for r in tree.routers() {
            layout.radices.extend([q, q]);
            layout.roles.extend([SiteRole::Control(r), SiteRole::Hold(r)]);
        }
        for cell in 0..tree.memory_size() {
            layout.radices.push(q);
            layout.roles.push(SiteRole::Leg(cell));
        }
        layout.routers = tree.router_count();
        layout.cells = tree.memory_size();
        layout
    }

    /// Address and bus registers only.
    pub fn data(n: usize, with_bus_prime: bool) -> Self {
        let mut roles: Vec<SiteRole> = (0..n).map(SiteRole::Address).collect();
        roles.push(SiteRole::Bus);
        if with_bus_prime {
            roles.push(SiteRole::BusPrime);
        }
        RegisterLayout {
            radices: vec![2; roles.len()],
            data_len: roles.len(),
            roles,
            n_address: n,
            bus_prime: with_bus_prime,
            routers: 0,
            cells: 0,
        }
    }

    /// Arbitrary radices; the first `data_len` sites count as the data register.
    pub fn custom(radices: Vec<u8>, data_len: usize) -> Self {
        RegisterLayout {
            roles: vec![SiteRole::Other; radices.len()],
            radices,
            data_len,
            n_address: 0,
            bus_prime: false,
            routers: 0,
            cells: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.radices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.radices.is_empty()
    }

    pub fn radices(&self) -> &[u8] {
        &self.radices
    }

    pub fn radix(&self, site: usize) -> u8 {
        self.radices[site]
    }

    pub fn role(&self, site: usize) -> SiteRole {
        self.roles[site]
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn address_len(&self) -> usize {
        self.n_address
    }

    pub fn has_bus_prime(&self) -> bool {
        self.bus_prime
    }

    pub fn router_count(&self) -> usize {
        self.routers
    }

    pub fn cell_count(&self) -> usize {
        self.cells
    }

    /// Site of address qubit `m` (0-based, most significant first).
    pub fn address_site(&self, m: usize) -> usize {
        m
    }

    pub fn bus_site(&self) -> usize {
        self.n_address
    }

    pub fn bus_prime_site(&self) -> Option<usize> {
        self.bus_prime.then_some(self.n_address + 1)
    }

    pub fn control_site(&self, r: RouterId) -> usize {
        self.data_len + 2 * r
    }

    pub fn hold_site(&self, r: RouterId) -> usize {
        self.data_len + 2 * r + 1
    }

    pub fn leg_site(&self, cell: usize) -> usize {
        self.data_len + 2 * self.routers + cell
    }

    fn first_leaf(&self) -> usize {
        self.routers.div_ceil(2) - 1
    }

    /// Hold sites (or legs) receiving the routed content of `r` for control 0 and 1.
    pub fn child_holds(&self, r: RouterId) -> (usize, usize) {
        if 2 * r + 1 < self.routers {
            (self.hold_site(2 * r + 1), self.hold_site(2 * r + 2))
        } else {
            let j = r - self.first_leaf();
            (self.leg_site(2 * j), self.leg_site(2 * j + 1))
        }
    }

    /// Sites owned by router `r`: control, hold, and its legs when `r` is a leaf.
    pub fn router_sites(&self, r: RouterId) -> Vec<usize> {
        let mut out = vec![self.control_site(r), self.hold_site(r)];
        if 2 * r + 1 >= self.routers {
            let (a, b) = self.child_holds(r);
            out.extend([a, b]);
        }
        out
    }

    /// Router owning `site`, if any.
    pub fn owner(&self, site: usize) -> Option<RouterId> {
        match self.roles[site] {
            SiteRole::Control(r) | SiteRole::Hold(r) => Some(r),
            SiteRole::Leg(cell) => Some(self.first_leaf() + cell / 2),
            _ => None,
        }
    }

    pub fn log2_dimension(&self) -> f64 {
        self.radices.iter().map(|&r| (r as f64).log2()).sum()
    }

    pub fn data_layout(&self) -> RegisterLayout {
        RegisterLayout {
            radices: self.radices[..self.data_len].to_vec(),
            roles: self.roles[..self.data_len].to_vec(),
            data_len: self.data_len,
            n_address: self.n_address,
            bus_prime: self.bus_prime,
            routers: 0,
            cells: 0,
        }
    }

    pub fn check_site(&self, site: usize) -> Result<()> {
        if site < self.len() {
            Ok(())
        } else {
            Err(Error::Site(site))
        }
    }

    pub fn check_digits(&self, digits: &[u8]) -> Result<()> {
        if digits.len() != self.len() {
            return Err(Error::DigitCount { expected: self.len(), got: digits.len() });
        }
        for (site, (&digit, &radix)) in digits.iter().zip(&self.radices).enumerate() {
            if digit >= radix {
                return Err(Error::Radix { site, digit, radix });
            }
        }
        Ok(())
    }
}

/// Hash map whose iteration order depends only on the insertion sequence.
pub(crate) type DetMap<K, V> = HashMap<K, V, BuildHasherDefault<DefaultHasher>>;

/// Digits of one basis state, one per site.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisIndex(pub Vec<u8>);

impl BasisIndex {
    pub fn digits(&self) -> &[u8] {
        &self.0
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|d| char::from(b'0' + d)).collect()
    }
}

/// Exchange of two site contents. Between a qubit and a qutrit the wait level of the
/// qutrit stands for an empty slot: `|a, W> <-> |0, a>`, other states fixed.
pub fn exchange(da: u8, ra: u8, db: u8, rb: u8) -> (u8, u8) {
    if ra == rb {
        return (db, da);
    }
    let (q, w, flipped) = if ra < rb { (da, db, false) } else { (db, da, true) };
    let (q2, w2) = match (q, w) {
        (a, 2) => (0, a),
        (0, a) => (a, 2),
        other => other,
    };
    if flipped {
        (w2, q2)
    } else {
        (q2, w2)
    }
}

fn czero<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::zero())
}

/// Row-major square matrix acting on one or more sites.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalMatrix<T: Real = f64> {
    pub dim: usize,
    pub data: Vec<Complex<T>>,
}

impl<T: Real> LocalMatrix<T> {
    pub fn new(dim: usize, data: Vec<Complex<T>>) -> Self {
        assert_eq!(data.len(), dim * dim, "matrix data length");
        LocalMatrix { dim, data }
    }

    pub fn identity(dim: usize) -> Self {
        let mut data = vec![czero(); dim * dim];
        for k in 0..dim {
            data[k * dim + k] = Complex::new(T::one(), T::zero());
        }
        LocalMatrix { dim, data }
    }

    pub fn diagonal(entries: &[Complex<T>]) -> Self {
        let mut m = Self::identity(entries.len());
        for (k, &e) in entries.iter().enumerate() {
            m.data[k * entries.len() + k] = e;
        }
        m
    }

    pub fn get(&self, row: usize, col: usize) -> Complex<T> {
        self.data[row * self.dim + col]
    }

    /// A qubit gate extended by the identity on the wait level.
    pub fn lift_to_qutrit(&self) -> Self {
        assert_eq!(self.dim, 2);
        let mut m = Self::identity(3);
        for r in 0..2 {
            for c in 0..2 {
                m.data[r * 3 + c] = self.get(r, c);
            }
        }
        m
    }

    pub fn convert<U: Real>(&self) -> LocalMatrix<U> {
        LocalMatrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.to_f64_lossy()), U::lit(z.im.to_f64_lossy())))
                .collect(),
        }
    }

    /// Largest entry of `|M^dagger M - 1|`.
    pub fn unitarity_deviation(&self) -> f64 {
        let n = self.dim;
        let mut worst = 0.0f64;
        for a in 0..n {
            for b in 0..n {
                let mut s = czero::<T>();
                for k in 0..n {
                    s += self.get(k, a).conj() * self.get(k, b);
                }
                if a == b {
                    s -= Complex::new(T::one(), T::zero());
                }
                worst = worst.max(s.norm().to_f64_lossy());
            }
        }
        worst
    }

    /// Operator norm, by power iteration on `M^dagger M`.
    pub fn operator_norm(&self) -> f64 {
        let n = self.dim;
        let m: Vec<Complex<f64>> = self
            .data
            .iter()
            .map(|z| Complex::new(z.re.to_f64_lossy(), z.im.to_f64_lossy()))
            .collect();
        let mut gram = vec![Complex::new(0.0, 0.0); n * n];
        for a in 0..n {
            for b in 0..n {
                for k in 0..n {
                    gram[a * n + b] += m[k * n + a].conj() * m[k * n + b];
                }
            }
        }
        let mut v: Vec<Complex<f64>> =
            (0..n).map(|k| Complex::new(1.0 + 0.1 * k as f64, 0.05 * k as f64)).collect();
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w: Vec<Complex<f64>> =
                (0..n).map(|a| (0..n).map(|b| gram[a * n + b] * v[b]).sum()).collect();
            let norm = w.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return 0.0;
            }
            lambda = norm;
            v = w.into_iter().map(|z| z / norm).collect();
        }
        lambda.sqrt()
    }

    /// For each column, the nonzero `(row, value)` pairs.
    fn columns(&self) -> Vec<Vec<(usize, Complex<T>)>> {
        (0..self.dim)
            .map(|c| {
                (0..self.dim)
                    .filter_map(|r| {
                        let v = self.get(r, c);
                        (v != czero()).then_some((r, v))
                    })
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct SparseState<T: Real = f64> {
    layout: Arc<RegisterLayout>,
    entries: Vec<(BasisIndex, Complex<T>)>,
    prune_tol: T,
}

impl<T: Real> SparseState<T> {
    pub fn empty(layout: Arc<RegisterLayout>) -> Self {
        SparseState { layout, entries: Vec::new(), prune_tol: T::lit(DEFAULT_PRUNE_TOL) }
    }

    pub fn basis_state(layout: Arc<RegisterLayout>, digits: &[u8]) -> Result<Self> {
        layout.check_digits(digits)?;
        let mut s = Self::empty(layout);
        s.entries.push((BasisIndex(digits.to_vec()), Complex::new(T::one(), T::zero())));
        Ok(s)
    }

    /// Builds a state from `(digits, amplitude)` pairs, summing repeated digits.
    pub fn from_amplitudes(
        layout: Arc<RegisterLayout>,
        amps: impl IntoIterator<Item = (Vec<u8>, Complex<T>)>,
    ) -> Result<Self> {
        let mut acc: DetMap<BasisIndex, Complex<T>> = DetMap::default();
        for (digits, a) in amps {
            layout.check_digits(&digits)?;
            *acc.entry(BasisIndex(digits)).or_insert_with(czero) += a;
        }
        let mut s = Self::empty(layout);
        s.entries = acc.into_iter().collect();
        s.prune();
        Ok(s)
    }

    /// Product of a data-register state and a router-register state.
    pub fn product(
        layout: Arc<RegisterLayout>,
        data: &SparseState<T>,
        routers: &[(Vec<u8>, Complex<T>)],
    ) -> Result<Self> {
        if data.layout.radices() != &layout.radices()[..layout.data_len()] {
            return Err(Error::LayoutMismatch);
        }
        let mut amps = Vec::with_capacity(data.len() * routers.len());
        for (d, a) in &data.entries {
            for (w, b) in routers {
                let mut digits = d.0.clone();
                digits.extend_from_slice(w);
                amps.push((digits, *a * *b));
            }
        }
        Self::from_amplitudes(layout, amps)
    }

    pub fn with_prune_tol(mut self, tol: T) -> Self {
        self.prune_tol = tol;
        self.prune();
        self
    }

    pub fn layout(&self) -> &Arc<RegisterLayout> {
        &self.layout
    }

    pub fn prune_tol(&self) -> T {
        self.prune_tol
    }

    /// Number of stored amplitudes.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(BasisIndex, Complex<T>)] {
        &self.entries
    }

    pub fn amplitude(&self, digits: &[u8]) -> Complex<T> {
        self.entries.iter().find(|(k, _)| k.0 == digits).map(|e| e.1).unwrap_or_else(czero)
    }

    pub fn norm_sqr(&self) -> T {
        self.entries.iter().fold(T::zero(), |acc, (_, a)| acc + a.norm_sqr())
    }

    pub fn scale(&mut self, factor: Complex<T>) {
        for (_, a) in &mut self.entries {
            *a *= factor;
        }
        self.prune();
    }

    pub fn normalize(&mut self) {
        let norm = self.norm_sqr().sqrt();
        if norm > T::zero() {
            for (_, a) in &mut self.entries {
                *a /= norm;
            }
        }
        self.prune();
    }

    fn prune(&mut self) {
        let tol = self.prune_tol;
        self.entries.retain(|(_, a)| a.norm() >= tol);
    }

    fn check_distinct(&self, sites: &[usize]) -> Result<()> {
        for (k, &s) in sites.iter().enumerate() {
            self.layout.check_site(s)?;
            if sites[..k].contains(&s) {
                return Err(Error::RepeatedSite);
            }
        }
        Ok(())
    }

    /// Exchanges the contents of `a` and `b` on every entry whose control digit equals `value`.
    pub fn apply_cswap(&mut self, control: usize, a: usize, b: usize, value: u8) -> Result<()> {
        self.check_distinct(&[control, a, b])?;
        let radix = self.layout.radix(control);
        if value >= radix {
            return Err(Error::Radix { site: control, digit: value, radix });
        }
        let (ra, rb) = (self.layout.radix(a), self.layout.radix(b));
        for (idx, _) in &mut self.entries {
            let d = &mut idx.0;
            if d[control] == value {
                let (x, y) = exchange(d[a], ra, d[b], rb);
                d[a] = x;
                d[b] = y;
            }
        }
        Ok(())
    }

    pub fn apply_swap(&mut self, a: usize, b: usize) -> Result<()> {
        self.check_distinct(&[a, b])?;
        let (ra, rb) = (self.layout.radix(a), self.layout.radix(b));
        for (idx, _) in &mut self.entries {
            let d = &mut idx.0;
            let (x, y) = exchange(d[a], ra, d[b], rb);
            d[a] = x;
            d[b] = y;
        }
        Ok(())
    }

    /// Routing gate on `[control, hold, left, right]`: two controlled swaps.
    pub fn apply_routing_sites(&mut self, sites: [usize; 4]) -> Result<()> {
        let [c, h, l, r] = sites;
        self.apply_cswap(c, h, l, 0)?;
        self.apply_cswap(c, h, r, 1)
    }

    pub fn apply_routing_unitary(&mut self, tree: &TreeTopology, r: RouterId) -> Result<()> {
        if r >= tree.router_count() || self.layout.router_count() != tree.router_count() {
            return Err(Error::NoSuchRouter(r));
        }
        let (l, rr) = self.layout.child_holds(r);
        self.apply_routing_sites([self.layout.control_site(r), self.layout.hold_site(r), l, rr])
    }

    pub fn apply_pauli(&mut self, site: usize, p: Pauli) -> Result<()> {
        self.layout.check_site(site)?;
        if p == Pauli::I {
            return Ok(());
        }
        for (idx, a) in &mut self.entries {
            let (d, k) = p.act(idx.0[site]);
            idx.0[site] = d;
            if k != 0 {
                *a *= i_pow::<T>(k);
            }
        }
        Ok(())
    }

    /// `e^{i kappa Z}` on the active levels of `site`.
    pub fn apply_phase_z(&mut self, site: usize, kappa: T) -> Result<()> {
        self.layout.check_site(site)?;
        let plus = Complex::new(kappa.cos(), kappa.sin());
        let minus = plus.conj();
        for (idx, a) in &mut self.entries {
            match idx.0[site] {
                0 => *a *= plus,
                1 => *a *= minus,
                _ => {}
            }
        }
        Ok(())
    }

    /// `X` on `target` when `control` holds 1 (qubit sites).
    pub fn apply_cx(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_distinct(&[control, target])?;
        for (idx, _) in &mut self.entries {
            if idx.0[control] == 1 && idx.0[target] < 2 {
                idx.0[target] ^= 1;
            }
        }
        Ok(())
    }

    fn sized_for(&self, site: usize, m: &LocalMatrix<T>) -> Result<LocalMatrix<T>> {
        let radix = self.layout.radix(site);
        match (m.dim, radix) {
            (d, r) if d == r as usize => Ok(m.clone()),
            (2, 3) => Ok(m.lift_to_qutrit()),
            (got, radix) => Err(Error::MatrixShape { got, radix }),
        }
    }

    pub fn apply_local_unitary(&mut self, site: usize, m: &LocalMatrix<T>) -> Result<()> {
        self.layout.check_site(site)?;
        let dev = m.unitarity_deviation();
        if dev > T::TOL {
            return Err(Error::NotUnitary(dev));
        }
        let m = self.sized_for(site, m)?;
        self.apply_matrix_unchecked(&[site], &m);
        Ok(())
    }

    /// Applies one Kraus element; returns the squared norm of the un-normalized result.
    /// A zero weight means the branch cannot occur from this state.
    pub fn apply_local_kraus(&mut self, site: usize, k: &LocalMatrix<T>) -> Result<T> {
        self.layout.check_site(site)?;
        let norm = k.operator_norm();
        if norm > 1.0 + T::TOL {
            return Err(Error::KrausNorm(norm));
        }
        let k = self.sized_for(site, k)?;
        self.apply_matrix_unchecked(&[site], &k);
        Ok(self.norm_sqr())
    }

    /// Matrix on the joint space of `sites` (first site most significant).
    pub fn apply_matrix(&mut self, sites: &[usize], m: &LocalMatrix<T>) -> Result<()> {
        self.check_distinct(sites)?;
        let dim: usize = sites.iter().map(|&s| self.layout.radix(s) as usize).product();
        if dim != m.dim {
            return Err(Error::MatrixShape { got: m.dim, radix: dim as u8 });
        }
        self.apply_matrix_unchecked(sites, m);
        Ok(())
    }

    pub(crate) fn apply_matrix_unchecked(&mut self, sites: &[usize], m: &LocalMatrix<T>) {
        let radices: Vec<u8> = sites.iter().map(|&s| self.layout.radix(s)).collect();
        let cols = m.columns();
        let local = |d: &[u8]| sites.iter().zip(&radices).fold(0usize, |acc, (&s, &r)| acc * r as usize + d[s] as usize);
        let write = |d: &mut [u8], mut x: usize| {
            for (&s, &r) in sites.iter().zip(&radices).rev() {
                d[s] = (x % r as usize) as u8;
                x /= r as usize;
            }
        };
        let injective_monomial = cols.iter().all(|c| c.len() == 1) && {
            let mut seen = vec![false; m.dim];
            cols.iter().all(|c| !std::mem::replace(&mut seen[c[0].0], true))
        };
        if injective_monomial {
            for (idx, a) in &mut self.entries {
                let (row, v) = cols[local(&idx.0)][0];
                write(&mut idx.0, row);
                *a *= v;
            }
        } else {
            let mut acc: DetMap<BasisIndex, Complex<T>> = DetMap::with_capacity_and_hasher(self.entries.len(), Default::default());
            for (idx, a) in self.entries.drain(..) {
                let col = local(&idx.0);
                for &(row, v) in &cols[col] {
                    let mut d = idx.0.clone();
                    write(&mut d, row);
                    *acc.entry(BasisIndex(d)).or_insert_with(czero) += a * v;
                }
            }
            self.entries = acc.into_iter().collect();
        }
        self.prune();
    }

    /// `<target| Tr_R(|self><self|) |target>` for a target on the data register.
    pub fn fidelity_against_target_over_routers(&self, target: &SparseState<T>) -> Result<T> {
        let k = self.layout.data_len();
        if target.layout.radices() != &self.layout.radices()[..k] {
            return Err(Error::LayoutMismatch);
        }
        let tmap: DetMap<&[u8], Complex<T>> =
            target.entries.iter().map(|(d, a)| (d.0.as_slice(), *a)).collect();
        let mut acc: DetMap<&[u8], Complex<T>> = DetMap::default();
        for (idx, a) in &self.entries {
            if let Some(t) = tmap.get(&idx.0[..k]) {
                *acc.entry(&idx.0[k..]).or_insert_with(czero) += t.conj() * *a;
            }
        }
        Ok(acc.values().fold(T::zero(), |s, z| s + z.norm_sqr()))
    }

    /// Reduced state on the data register when the router register is in a single basis state.
    pub fn data_part_if_product(&self) -> Option<(SparseState<T>, Vec<u8>)> {
        let k = self.layout.data_len();
        let w = self.entries.first()?.0 .0[k..].to_vec();
        if self.entries.iter().any(|(d, _)| d.0[k..] != w[..]) {
            return None;
        }
        let layout = Arc::new(self.layout.data_layout());
        let amps = self.entries.iter().map(|(d, a)| (d.0[..k].to_vec(), *a));
        Some((SparseState::from_amplitudes(layout, amps).ok()?, w))
    }

    /// Largest `|a - b|` over the union of supports.
    pub fn max_difference(&self, other: &SparseState<T>) -> f64 {
        let mine: DetMap<&[u8], Complex<T>> =
            self.entries.iter().map(|(d, a)| (d.0.as_slice(), *a)).collect();
        let theirs: DetMap<&[u8], Complex<T>> =
            other.entries.iter().map(|(d, a)| (d.0.as_slice(), *a)).collect();
        let mut worst = 0.0f64;
        for (d, a) in &mine {
            let b = theirs.get(d).copied().unwrap_or_else(czero);
            worst = worst.max((*a - b).norm().to_f64_lossy());
        }
        for (d, b) in &theirs {
            if !mine.contains_key(d) {
                worst = worst.max(b.norm().to_f64_lossy());
            }
        }
        worst
    }

    /// Lines of `digits re im`, sorted by digit string.
    pub fn debug_dump(&self) -> String {
        let mut rows: Vec<(String, Complex<T>)> =
            self.entries.iter().map(|(d, a)| (d.render(), *a)).collect();
        rows.sort_by(|x, y| x.0.cmp(&y.0));
        let mut out = String::new();
        for (d, a) in rows {
            let _ = writeln!(out, "{d} {:+.17e} {:+.17e}", a.re.to_f64_lossy(), a.im.to_f64_lossy());
        }
        out
    }

    pub fn convert<U: Real>(&self) -> SparseState<U> {
        SparseState {
            layout: self.layout.clone(),
            entries: self
                .entries
                .iter()
                .map(|(d, a)| (d.clone(), Complex::new(U::lit(a.re.to_f64_lossy()), U::lit(a.im.to_f64_lossy()))))
                .collect(),
            prune_tol: U::lit(self.prune_tol.to_f64_lossy()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{build_tree, RouterModel, WAIT};

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn qutrit_layout(n: usize) -> Arc<RegisterLayout> {
        Arc::new(RegisterLayout::custom(vec![3; n], 0))
    }

    #[test]
    fn layout_order_is_canonical() {
        let t = build_tree(2, RouterModel::ThreeLevel).unwrap();
        let l = RegisterLayout::for_tree(&t, true);
        assert_eq!(l.len(), 2 + 1 + 1 + 6 + 4);
        assert_eq!(l.role(3), SiteRole::BusPrime);
        assert_eq!(l.role(l.control_site(1)), SiteRole::Control(1));
        assert_eq!(l.control_site(0), 4);
        assert_eq!(l.hold_site(2), 9);
        assert_eq!(l.child_holds(0), (7, 9));
        assert_eq!(l.child_holds(2), (12, 13));
        assert_eq!(l.router_sites(1), vec![6, 7, 10, 11]);
        assert_eq!(l.owner(13), Some(2));
    }

    #[test]
    fn plus_bus_over_all_wait_has_two_entries() {
        let t = build_tree(3, RouterModel::ThreeLevel).unwrap();
        let layout = Arc::new(RegisterLayout::for_tree(&t, false));
        let h = 1.0 / 2f64.sqrt();
        let wait = vec![WAIT; layout.len() - layout.data_len()];
        let data = SparseState::from_amplitudes(
            Arc::new(layout.data_layout()),
            [(vec![0, 0, 0, 0], c(h, 0.0)), (vec![0, 0, 0, 1], c(h, 0.0))],
        )
        .unwrap();
        let s = SparseState::product(layout.clone(), &data, &[(wait.clone(), c(1.0, 0.0))]).unwrap();
        assert_eq!(s.len(), 2);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-15);
        let mut all = vec![0u8; layout.data_len()];
        all.extend(wait);
        assert_eq!(SparseState::<f64>::basis_state(layout.clone(), &all).unwrap().len(), 1);
        all[0] = 3;
        assert!(matches!(SparseState::<f64>::basis_state(layout, &all), Err(Error::Radix { .. })));
    }

    #[test]
    fn cswap_semantics() {
        let l = qutrit_layout(3);
        let mut s = SparseState::<f64>::basis_state(l.clone(), &[1, 0, 2]).unwrap();
        s.apply_cswap(0, 1, 2, 1).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![1, 2, 0]);
        let mut w = SparseState::<f64>::basis_state(l.clone(), &[WAIT, 0, 1]).unwrap();
        w.apply_cswap(0, 1, 2, 0).unwrap();
        w.apply_cswap(0, 1, 2, 1).unwrap();
        assert_eq!(w.entries()[0].0 .0, vec![WAIT, 0, 1]);
        assert!(matches!(s.apply_cswap(0, 0, 1, 1), Err(Error::RepeatedSite)));
        assert!(matches!(s.apply_cswap(0, 1, 7, 1), Err(Error::Site(7))));
    }

    #[test]
    fn routing_examples() {
        let l = qutrit_layout(4);
        // (c, h, r0, r1) with psi = |1>, W elsewhere
        let mut s = SparseState::<f64>::basis_state(l.clone(), &[0, 1, WAIT, WAIT]).unwrap();
        s.apply_routing_sites([0, 1, 2, 3]).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![0, WAIT, 1, WAIT]);
        let mut s = SparseState::<f64>::basis_state(l.clone(), &[1, 1, 0, WAIT]).unwrap();
        s.apply_routing_sites([0, 1, 2, 3]).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![1, WAIT, 0, 1]);
        let mut s = SparseState::<f64>::basis_state(l, &[WAIT, 1, 0, 1]).unwrap();
        s.apply_routing_sites([0, 1, 2, 3]).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![WAIT, 1, 0, 1]);
    }

    #[test]
    fn mixed_exchange_is_an_involution() {
        for q in 0..2 {
            for w in 0..3 {
                let (a, b) = exchange(q, 2, w, 3);
                assert!(a < 2 && b < 3);
                assert_eq!(exchange(a, 2, b, 3), (q, w));
                assert_eq!(exchange(w, 3, q, 2), (b, a));
            }
        }
        assert_eq!(exchange(1, 2, WAIT, 3), (0, 1));
    }

    #[test]
    fn lifted_x_fixes_wait_and_phase_gate_is_diagonal() {
        let l = qutrit_layout(1);
        let x = LocalMatrix::new(2, Pauli::X.matrix::<f64>(2));
        let mut s = SparseState::<f64>::basis_state(l.clone(), &[WAIT]).unwrap();
        s.apply_local_unitary(0, &x).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![WAIT]);
        let q = Arc::new(RegisterLayout::custom(vec![2], 0));
        let h = 1.0 / 2f64.sqrt();
        let mut p = SparseState::from_amplitudes(q, [(vec![0], c(h, 0.0)), (vec![1], c(h, 0.0))]).unwrap();
        p.apply_phase_z(0, 0.3).unwrap();
        assert!((p.amplitude(&[0]) - c(h * 0.3f64.cos(), h * 0.3f64.sin())).norm() < 1e-15);
        assert!((p.amplitude(&[1]) - c(h * 0.3f64.cos(), -h * 0.3f64.sin())).norm() < 1e-15);
        let bad = LocalMatrix::new(2, vec![c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]);
        assert!(matches!(p.apply_local_unitary(0, &bad), Err(Error::NotUnitary(_))));
    }

    #[test]
    fn kraus_weights() {
        let q = Arc::new(RegisterLayout::custom(vec![2], 0));
        let p = 0.2;
        let id = LocalMatrix::diagonal(&[c((1.0f64 - p).sqrt(), 0.0), c((1.0f64 - p).sqrt(), 0.0)]);
        let mut s = SparseState::<f64>::basis_state(q.clone(), &[1]).unwrap();
        assert!((s.apply_local_kraus(0, &id).unwrap() - 0.8).abs() < 1e-15);
        let gamma: f64 = 0.3;
        let k1 = LocalMatrix::new(2, vec![c(0.0, 0.0), c(gamma.sqrt(), 0.0), c(0.0, 0.0), c(0.0, 0.0)]);
        let mut z = SparseState::<f64>::basis_state(q.clone(), &[0]).unwrap();
        assert_eq!(z.apply_local_kraus(0, &k1).unwrap(), 0.0);
        // K0 = diag(1, sqrt(1-gamma)) on |+>: weight (1 + 1 - gamma) / 2
        let k0 = LocalMatrix::diagonal(&[c(1.0, 0.0), c((1.0 - gamma).sqrt(), 0.0)]);
        let h = 1.0 / 2f64.sqrt();
        let mut plus = SparseState::from_amplitudes(q.clone(), [(vec![0], c(h, 0.0)), (vec![1], c(h, 0.0))]).unwrap();
        assert!((plus.apply_local_kraus(0, &k0).unwrap() - (2.0 - gamma) / 2.0).abs() < 1e-15);
        let big = LocalMatrix::diagonal(&[c(1.1, 0.0), c(1.0, 0.0)]);
        assert!(matches!(plus.apply_local_kraus(0, &big), Err(Error::KrausNorm(_))));
    }

    #[test]
    fn fidelity_examples() {
        let full = Arc::new(RegisterLayout::custom(vec![2, 3, 3], 1));
        let data = Arc::new(RegisterLayout::custom(vec![2], 1));
        let target = SparseState::<f64>::basis_state(data.clone(), &[0]).unwrap();
        let s = SparseState::<f64>::basis_state(full.clone(), &[0, WAIT, WAIT]).unwrap();
        assert!((s.fidelity_against_target_over_routers(&target).unwrap() - 1.0).abs() < 1e-15);
        let o = SparseState::<f64>::basis_state(full.clone(), &[1, WAIT, WAIT]).unwrap();
        assert_eq!(o.fidelity_against_target_over_routers(&target).unwrap(), 0.0);
        let h = 1.0 / 2f64.sqrt();
        let mixed = SparseState::from_amplitudes(full.clone(), [(vec![0, 0, 1], c(h, 0.0)), (vec![1, 1, 0], c(h, 0.0))]).unwrap();
        assert!((mixed.fidelity_against_target_over_routers(&target).unwrap() - 0.5).abs() < 1e-15);
        let wrong = SparseState::<f64>::basis_state(Arc::new(RegisterLayout::custom(vec![3], 1)), &[0]).unwrap();
        assert_eq!(s.fidelity_against_target_over_routers(&wrong), Err(Error::LayoutMismatch));
    }

    #[test]
    fn dump_is_sorted() {
        let l = qutrit_layout(2);
        let s = SparseState::from_amplitudes(l, [(vec![2, 1], c(0.6, 0.0)), (vec![0, 2], c(0.0, 0.8))]).unwrap();
        let dump = s.debug_dump();
        let lines: Vec<&str> = dump.lines().collect();
        assert!(lines[0].starts_with("02 "));
        assert!(lines[1].starts_with("21 "));
    }

    #[test]
    fn prune_drops_numerical_zeros() {
        let l = qutrit_layout(1);
        let s = SparseState::from_amplitudes(l, [(vec![0], c(1.0, 0.0)), (vec![1], c(1e-17, 0.0))]).unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn f32_state_routes_the_same_way() {
        let l = qutrit_layout(4);
        let mut s = SparseState::<f32>::basis_state(l, &[1, 1, 0, WAIT]).unwrap();
        s.apply_routing_sites([0, 1, 2, 3]).unwrap();
        assert_eq!(s.entries()[0].0 .0, vec![1, WAIT, 0, 1]);
        assert!((s.norm_sqr() - 1.0).abs() < 1e-6);
    }
}
