//! Excitation-sector bases for an open qubit chain and sparse construction of
//! the operators acting on them.
//!
//! Basis states are occupation bitmasks over `N` qubits (bit `j-1` set means
//! site `j` is excited). A [`SectorBasis`] covers the contiguous excitation
//! sectors `0..=kmax`, ordered by sector and by increasing bitmask within each
//! sector; that ordering is the serialization contract for every vector and
//! matrix in this crate. The XX Hamiltonian never couples different sectors
//! and amplitude damping only lowers the excitation number, so a basis sized
//! from the initial state's excitation support stays closed under the
//! dynamics.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bitmasks are stored in a u32; chains longer than this cannot be enumerated.
pub const MAX_SITES: usize = 31;

/// Hard cap on the dimension of an enumerated basis.
pub const MAX_DIM: usize = 1 << 22;

/// Chain length and XX-model parameters (qubit frequency omega, hopping J).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainSpec {
    pub n: usize,
    pub omega: f64,
    pub j: f64,
}

impl ChainSpec {
    pub fn new(n: usize, omega: f64, j: f64) -> Result<Self> {
        let spec = Self { n, omega, j };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidChain("need at least two qubits".into()));
        }
        if self.n > MAX_SITES {
            return Err(Error::InvalidChain(format!(
                "chain length {} exceeds supported maximum {MAX_SITES}",
                self.n
            )));
        }
        if !self.omega.is_finite() || !self.j.is_finite() {
            return Err(Error::InvalidChain("omega and J must be finite".into()));
        }
        Ok(())
    }
}

/// Occupation bitmask; bit `j-1` set means site `j` carries an excitation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BasisState(pub u32);

impl BasisState {
    pub const VACUUM: BasisState = BasisState(0);

    pub fn excitation(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_excited(self, site: usize) -> bool {
        self.0 >> (site - 1) & 1 == 1
    }

    /// Mask with the excitation at `site` removed.
    pub fn lowered(self, site: usize) -> BasisState {
        BasisState(self.0 & !(1 << (site - 1)))
    }

    /// Mask with an excitation added at `site`.
    pub fn raised(self, site: usize) -> BasisState {
        BasisState(self.0 | 1 << (site - 1))
    }

    /// Single excitation at `site`.
    pub fn single(site: usize) -> BasisState {
        BasisState(1 << (site - 1))
    }

    /// Sites carrying an excitation, ascending.
    pub fn occupied_sites(self) -> Vec<usize> {
        (1..=32).filter(|&s| self.0 >> (s - 1) & 1 == 1).collect()
    }
}

/// Binomial coefficient, exact in u64 for the sizes used here.
pub fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u64 / (i + 1) as u64;
    }
    acc
}

/// Ordered basis for the excitation sectors `0..=kmax` of an `n`-qubit chain.
#[derive(Debug)]
pub struct SectorBasis {
    pub n: usize,
    /// Included excitation numbers, ascending (contiguous from 0).
    pub sectors: Vec<usize>,
    /// All basis states, grouped by sector, bitmask-ascending within a sector.
    pub states: Vec<BasisState>,
    index_of: HashMap<BasisState, usize>,
    /// offsets[i] is the start of sectors[i]'s block; a sentinel closes the last.
    offsets: Vec<usize>,
}

/// Next-larger mask with the same popcount (Gosper's hack).
fn next_same_popcount(mask: u32) -> u32 {
    let u = mask & mask.wrapping_neg();
    let v = mask + u;
    v | ((mask ^ v) / u) >> 2
}

pub fn enumerate_sector(n: usize, kmax: usize) -> Result<SectorBasis> {
    if n < 1 || n > MAX_SITES {
        return Err(Error::InvalidChain(format!("unsupported chain length {n}")));
    }
    if kmax > n {
        return Err(Error::Config(format!("kmax {kmax} out of range 0..={n}")));
    }
    let dim: u64 = (0..=kmax).map(|k| binomial(n, k)).sum();
    if dim > MAX_DIM as u64 {
        return Err(Error::TooLarge(format!("basis dimension {dim} exceeds {MAX_DIM}")));
    }
    let mut states = Vec::with_capacity(dim as usize);
    let mut offsets = Vec::with_capacity(kmax + 2);
    for k in 0..=kmax {
        offsets.push(states.len());
        if k == 0 {
            states.push(BasisState::VACUUM);
            continue;
        }
        let mut mask: u32 = (1 << k) - 1;
        let limit: u32 = 1 << n;
        while mask < limit {
            states.push(BasisState(mask));
            if mask == 0 {
                break;
            }
            mask = next_same_popcount(mask);
        }
    }
    offsets.push(states.len());
    let index_of = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
    Ok(SectorBasis {
        n,
        sectors: (0..=kmax).collect(),
        states,
        index_of,
        offsets,
    })
}

impl SectorBasis {
    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn kmax(&self) -> usize {
        *self.sectors.last().unwrap()
    }

    pub fn has_sector(&self, k: usize) -> bool {
        k <= self.kmax()
    }

    pub fn index_of(&self, state: BasisState) -> Option<usize> {
        self.index_of.get(&state).copied()
    }

    /// Dense index range of sector `k`.
    pub fn sector_range(&self, k: usize) -> Option<std::ops::Range<usize>> {
        if !self.has_sector(k) {
            return None;
        }
        Some(self.offsets[k]..self.offsets[k + 1])
    }

    pub fn sector_states(&self, k: usize) -> Option<&[BasisState]> {
        self.sector_range(k).map(|r| &self.states[r])
    }

    /// Structural identity: same chain and same sector span.
    pub fn same_span(&self, other: &SectorBasis) -> bool {
        self.n == other.n && self.sectors == other.sectors
    }
}

/// Density matrix on the span of a [`SectorBasis`].
#[derive(Clone, Debug)]
pub struct DensityMatrix {
    pub basis: Arc<SectorBasis>,
    pub entries: Array2<C64>,
}

impl DensityMatrix {
    pub fn zeros(basis: &Arc<SectorBasis>) -> Self {
        let d = basis.dim();
        Self {
            basis: Arc::clone(basis),
            entries: Array2::zeros((d, d)),
        }
    }

    /// |psi><psi| for a normalized dense vector on the basis.
    pub fn from_pure(basis: &Arc<SectorBasis>, psi: &Array1<C64>) -> Result<Self> {
        if psi.len() != basis.dim() {
            return Err(Error::BasisMismatch(format!(
                "vector length {} vs basis dimension {}",
                psi.len(),
                basis.dim()
            )));
        }
        let d = basis.dim();
        let mut entries = Array2::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                entries[(i, j)] = psi[i] * psi[j].conj();
            }
        }
        Ok(Self {
            basis: Arc::clone(basis),
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn trace(&self) -> C64 {
        self.entries.diag().sum()
    }

    /// Re Tr rho^2.
    pub fn purity(&self) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                acc += self.entries[(i, j)] * self.entries[(j, i)];
            }
        }
        acc.re
    }

    /// max_ij |rho_ij - conj(rho_ji)|.
    pub fn hermiticity_residual(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.dim() {
            for j in i..self.dim() {
                let r = (self.entries[(i, j)] - self.entries[(j, i)].conj()).norm();
                worst = worst.max(r);
            }
        }
        worst
    }
}

/// Excitation-number selection rule an operator's entries obey.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DeltaExcitation {
    /// Every entry changes the excitation number by exactly this amount.
    Fixed(i32),
    /// Entries change it by +1 or -1 (sigma_x).
    PlusMinusOne,
}

/// Sparse operator in coordinate form, sorted by (row, col) and deduplicated.
#[derive(Clone, Debug)]
pub struct SparseOperator {
    pub domain_basis: Arc<SectorBasis>,
    pub codomain_basis: Arc<SectorBasis>,
    pub delta_excitation: DeltaExcitation,
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseOperator {
    pub(crate) fn from_triplets(
        domain: &Arc<SectorBasis>,
        codomain: &Arc<SectorBasis>,
        delta: DeltaExcitation,
        mut trips: Vec<(usize, usize, C64)>,
    ) -> Self {
        trips.sort_by_key(|&(r, c, _)| (r, c));
        let mut rows = Vec::with_capacity(trips.len());
        let mut cols = Vec::with_capacity(trips.len());
        let mut vals: Vec<C64> = Vec::with_capacity(trips.len());
        for (r, c, v) in trips {
            if let (Some(&lr), Some(&lc)) = (rows.last(), cols.last()) {
                if lr == r && lc == c {
                    *vals.last_mut().unwrap() += v;
                    continue;
                }
            }
            rows.push(r);
            cols.push(c);
            vals.push(v);
        }
        // Entries that cancelled exactly are dropped.
        let keep: Vec<bool> = vals.iter().map(|v| v.norm_sqr() > 0.0).collect();
        let filter = |xs: Vec<usize>| -> Vec<usize> {
            xs.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(x, _)| x).collect()
        };
        let rows = filter(rows);
        let cols = filter(cols);
        let vals = vals.into_iter().zip(&keep).filter(|(_, &k)| k).map(|(v, _)| v).collect();
        SparseOperator {
            domain_basis: Arc::clone(domain),
            codomain_basis: Arc::clone(codomain),
            delta_excitation: delta,
            rows,
            cols,
            vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.vals.len()).map(move |i| (self.rows[i], self.cols[i], self.vals[i]))
    }

    pub fn to_dense(&self) -> Array2<C64> {
        let mut m = Array2::zeros((self.codomain_basis.dim(), self.domain_basis.dim()));
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    /// Adjoint operator (swaps domain and codomain).
    pub fn dagger(&self) -> SparseOperator {
        let delta = match self.delta_excitation {
            DeltaExcitation::Fixed(d) => DeltaExcitation::Fixed(-d),
            DeltaExcitation::PlusMinusOne => DeltaExcitation::PlusMinusOne,
        };
        let trips = self.iter().map(|(r, c, v)| (c, r, v.conj())).collect();
        SparseOperator::from_triplets(&self.codomain_basis, &self.domain_basis, delta, trips)
    }

    /// A^dagger A, diagonal-free general form on the domain basis.
    pub fn gram(&self) -> SparseOperator {
        // Jump operators here have at most one entry per column, so the
        // column-grouped product never needs a full sparse-sparse multiply.
        let mut acc: HashMap<(usize, usize), C64> = HashMap::new();
        let mut by_col: HashMap<usize, Vec<(usize, C64)>> = HashMap::new();
        for (r, c, v) in self.iter() {
            by_col.entry(c).or_default().push((r, v));
        }
        for (&c, col_entries) in &by_col {
            for &(r1, v1) in col_entries {
                // (A^H A)_{c c'} = sum_r conj(A_{r c}) A_{r c'}
                for (&c2, col2) in &by_col {
                    for &(r2, v2) in col2 {
                        if r1 == r2 {
                            *acc.entry((c, c2)).or_insert(C64::new(0.0, 0.0)) += v1.conj() * v2;
                        }
                    }
                }
            }
        }
        let trips = acc.into_iter().map(|((r, c), v)| (r, c, v)).collect();
        SparseOperator::from_triplets(
            &self.domain_basis,
            &self.domain_basis,
            DeltaExcitation::Fixed(0),
            trips,
        )
    }

    pub fn apply(&self, v: &Array1<C64>) -> Array1<C64> {
        let mut out = Array1::zeros(self.codomain_basis.dim());
        for (r, c, val) in self.iter() {
            out[r] += val * v[c];
        }
        out
    }

    /// out = A * m, accumulating row-wise.
    pub fn mul_dense_left(&self, m: &Array2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::new(0.0, 0.0));
        for (r, c, v) in self.iter() {
            let src = m.row(c);
            let mut dst = out.row_mut(r);
            dst.scaled_add(v, &src);
        }
    }

    /// out = m * A.
    pub fn mul_dense_right(&self, m: &Array2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::new(0.0, 0.0));
        for (r, c, v) in self.iter() {
            let src = m.column(r);
            let mut dst = out.column_mut(c);
            dst.scaled_add(v, &src);
        }
    }

    /// out = m * A^dagger.
    pub fn mul_dense_right_dagger(&self, m: &Array2<C64>, out: &mut Array2<C64>) {
        out.fill(C64::new(0.0, 0.0));
        for (r, c, v) in self.iter() {
            let src = m.column(c);
            let mut dst = out.column_mut(r);
            dst.scaled_add(v.conj(), &src);
        }
    }

    /// Tr[rho A].
    pub fn expectation(&self, rho: &DensityMatrix) -> C64 {
        self.expectation_entries(&rho.entries)
    }

    /// Tr[rho A] on raw entries.
    pub fn expectation_entries(&self, rho: &Array2<C64>) -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for (r, c, v) in self.iter() {
            acc += v * rho[(c, r)];
        }
        acc
    }
}

fn check_site(site: usize, n: usize) -> Result<()> {
    if site < 1 || site > n {
        return Err(Error::SiteOutOfRange { site, n });
    }
    Ok(())
}

/// XX Hamiltonian on the basis span: omega * (excitation count) on the
/// diagonal plus hopping J between adjacent-site occupations. The global
/// -N*omega/2 offset is dropped; only energy differences are ever used, so
/// sector k carries diagonal omega*k.
pub fn build_hamiltonian(chain: &ChainSpec, basis: &Arc<SectorBasis>) -> Result<SparseOperator> {
    chain.validate()?;
    if basis.n != chain.n {
        return Err(Error::BasisMismatch(format!(
            "basis is for {} sites, chain has {}",
            basis.n, chain.n
        )));
    }
    let mut trips = Vec::new();
    for (idx, &s) in basis.states.iter().enumerate() {
        let k = s.excitation();
        if k > 0 && chain.omega != 0.0 {
            trips.push((idx, idx, C64::new(chain.omega * k as f64, 0.0)));
        }
        if chain.j == 0.0 {
            continue;
        }
        for site in 1..chain.n {
            // Hop right: excitation at `site`, hole at `site+1`.
            if s.is_excited(site) && !s.is_excited(site + 1) {
                let t = s.lowered(site).raised(site + 1);
                let tidx = basis.index_of(t).expect("hop stays within the sector");
                let j = C64::new(chain.j, 0.0);
                trips.push((tidx, idx, j));
                trips.push((idx, tidx, j));
            }
        }
    }
    Ok(SparseOperator::from_triplets(
        basis,
        basis,
        DeltaExcitation::Fixed(0),
        trips,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JumpKind {
    Lowering,
    Raising,
}

/// sigma_- or sigma_+ at `site`. Lowering maps each basis state with the site
/// excited to the same mask with the excitation removed (amplitude 1).
/// Raising is only representable when no included sector lacks its target, in
/// practice on the full space.
pub fn build_jump_operator(
    site: usize,
    basis: &Arc<SectorBasis>,
    kind: JumpKind,
) -> Result<SparseOperator> {
    check_site(site, basis.n)?;
    let mut trips = Vec::new();
    match kind {
        JumpKind::Lowering => {
            for (idx, &s) in basis.states.iter().enumerate() {
                if s.is_excited(site) {
                    let k = s.excitation();
                    if !basis.has_sector(k - 1) {
                        return Err(Error::SectorMissing { k: k - 1 });
                    }
                    let t = basis.index_of(s.lowered(site)).unwrap();
                    trips.push((t, idx, C64::new(1.0, 0.0)));
                }
            }
        }
        JumpKind::Raising => {
            for (idx, &s) in basis.states.iter().enumerate() {
                if !s.is_excited(site) {
                    let k = s.excitation();
                    if !basis.has_sector(k + 1) {
                        return Err(Error::SectorMissing { k: k + 1 });
                    }
                    let t = basis.index_of(s.raised(site)).unwrap();
                    trips.push((t, idx, C64::new(1.0, 0.0)));
                }
            }
        }
    }
    let delta = match kind {
        JumpKind::Lowering => DeltaExcitation::Fixed(-1),
        JumpKind::Raising => DeltaExcitation::Fixed(1),
    };
    Ok(SparseOperator::from_triplets(basis, basis, delta, trips))
}

/// sigma_x at `site`, projected onto the basis span: the lowering part plus
/// every raising entry whose target sector is included. The projection is
/// exact for expectation values of states supported inside the span; rows at
/// the truncation boundary do not square to the identity.
pub fn build_sigma_x(site: usize, basis: &Arc<SectorBasis>) -> Result<SparseOperator> {
    check_site(site, basis.n)?;
    let mut trips = Vec::new();
    for (idx, &s) in basis.states.iter().enumerate() {
        if s.is_excited(site) {
            let t = basis.index_of(s.lowered(site)).ok_or(Error::SectorMissing {
                k: s.excitation() - 1,
            })?;
            trips.push((t, idx, C64::new(1.0, 0.0)));
            trips.push((idx, t, C64::new(1.0, 0.0)));
        }
    }
    Ok(SparseOperator::from_triplets(
        basis,
        basis,
        DeltaExcitation::PlusMinusOne,
        trips,
    ))
}

/// Pure product state embedded on the basis span as a density matrix.
/// `qubit_states[j]` holds the (ground, excited) amplitudes of site j+1.
/// Rejects states whose excitation support exceeds the truncation: silent
/// truncation is forbidden.
pub fn embed_product_state(
    qubit_states: &[[C64; 2]],
    basis: &Arc<SectorBasis>,
) -> Result<DensityMatrix> {
    if qubit_states.len() != basis.n {
        return Err(Error::InvalidState(format!(
            "{} single-qubit states for a chain of {}",
            qubit_states.len(),
            basis.n
        )));
    }
    for (j, q) in qubit_states.iter().enumerate() {
        let norm = q[0].norm_sqr() + q[1].norm_sqr();
        if (norm - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidState(format!(
                "qubit {} is not normalized (norm^2 = {norm})",
                j + 1
            )));
        }
    }
    let support = qubit_states.iter().filter(|q| q[1].norm_sqr() > 0.0).count();
    if support > basis.kmax() {
        return Err(Error::TruncationExceeded {
            support,
            kmax: basis.kmax(),
        });
    }
    let mut psi = Array1::zeros(basis.dim());
    for (idx, &s) in basis.states.iter().enumerate() {
        let mut amp = C64::new(1.0, 0.0);
        for site in 1..=basis.n {
            let q = &qubit_states[site - 1];
            amp *= if s.is_excited(site) { q[1] } else { q[0] };
            if amp.norm_sqr() == 0.0 {
                break;
            }
        }
        psi[idx] = amp;
    }
    DensityMatrix::from_pure(basis, &psi)
}
