//! Enumeration and explicit construction of the decoherence-free subspace of
//! an XX chain damped at a set of sites.
//!
//! A single-excitation mode `n` is annihilated by every lowering operator at
//! the noise sites iff its wave function vanishes there, which reduces to the
//! divisibility condition `n * m_a = 0 mod (N+1)` for every noise site `m_a`.
//! The surviving labels are multiples of `(N+1)/g` with
//! `g = gcd(m_1, ..., m_q, N+1)`, and antisymmetrized products (Slater
//! determinants) of the surviving modes span the full dark space: `C(g-1, k)`
//! states in the k-excitation sector, `2^(g-1)` in total.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hilbert::{binomial, ChainSpec, SectorBasis, SparseOperator};

/// Largest dark-space dimension build_dfs_basis will materialize.
pub const MAX_DFS_DIM: u64 = 4096;

/// Residual threshold for a state to count as annihilated by a jump operator.
pub const DARKNESS_JUMP_TOL: f64 = 1e-10;

/// Residual threshold for the eigenvalue check H|D> = E|D>.
pub const DARKNESS_ENERGY_TOL: f64 = 1e-9;

/// Amplitude-damping noise acting on a set of sites, optionally with thermal
/// (raising) components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Damped sites, distinct, each in 1..=N.
    pub sites: Vec<usize>,
    /// Lowering rates, one per site, strictly positive.
    pub rates: Vec<f64>,
    /// Optional raising rates, one per site, non-negative.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal_rates: Option<Vec<f64>>,
}

impl NoiseSpec {
    pub fn new(sites: Vec<usize>, rates: Vec<f64>) -> Self {
        Self {
            sites,
            rates,
            thermal_rates: None,
        }
    }

    /// Uniform rate at every listed site.
    pub fn uniform(sites: Vec<usize>, rate: f64) -> Self {
        let rates = vec![rate; sites.len()];
        Self::new(sites, rates)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.rates.len() != self.sites.len() {
            return Err(Error::InvalidNoise(format!(
                "{} sites but {} rates",
                self.sites.len(),
                self.rates.len()
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for &m in &self.sites {
            if m < 1 || m > n {
                return Err(Error::SiteOutOfRange { site: m, n });
            }
            if !seen.insert(m) {
                return Err(Error::InvalidNoise(format!("duplicate noise site {m}")));
            }
        }
        for &g in &self.rates {
            if !(g.is_finite() && g > 0.0) {
                return Err(Error::InvalidNoise(format!(
                    "rates must be positive and finite, got {g}"
                )));
            }
        }
        if let Some(tr) = &self.thermal_rates {
            if tr.len() != self.sites.len() {
                return Err(Error::InvalidNoise(format!(
                    "{} sites but {} thermal rates",
                    self.sites.len(),
                    tr.len()
                )));
            }
            for &g in tr {
                if !(g.is_finite() && g >= 0.0) {
                    return Err(Error::InvalidNoise(format!(
                        "thermal rates must be non-negative and finite, got {g}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when any raising component is active.
    pub fn has_thermal(&self) -> bool {
        self.thermal_rates
            .as_ref()
            .is_some_and(|tr| tr.iter().any(|&g| g > 0.0))
    }
}

/// Arithmetic census of the dark space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DfsReport {
    /// gcd of the noise sites and N+1.
    pub g: usize,
    /// Number of dark single-excitation modes.
    pub r: usize,
    /// Surviving mode labels, ascending.
    pub labels: Vec<usize>,
    /// Dark dimension per excitation sector k = 0..=r.
    pub sector_dims: Vec<u64>,
    /// Total dark dimension, 2^r.
    pub total_dim: u64,
    /// True iff every dark pair shares the one surviving mode (g = 2).
    pub generic_sync: bool,
    /// Relative sign of the edge-site oscillations when generic_sync.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync_sign: Option<i32>,
    /// Raising noise present: the dark space collapses to the trivial one.
    #[serde(default)]
    pub thermal: bool,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Census of the dark space for a chain of `n` qubits under `noise`.
///
/// With raising noise present no excited dark state survives; the report then
/// keeps the arithmetic `g` but collapses the census to the ground state and
/// sets `thermal`.
pub fn gcd_analysis(noise: &NoiseSpec, n: usize) -> Result<DfsReport> {
    noise.validate(n)?;
    let g = noise.sites.iter().fold(n + 1, |acc, &m| gcd(acc, m));
    if noise.has_thermal() {
        return Ok(DfsReport {
            g,
            r: 0,
            labels: vec![],
            sector_dims: vec![1],
            total_dim: 1,
            generic_sync: false,
            sync_sign: None,
            thermal: true,
        });
    }
    let r = g - 1;
    let labels: Vec<usize> = (1..g).map(|l| l * (n + 1) / g).collect();
    let sector_dims: Vec<u64> = (0..=r).map(|k| binomial(r, k)).collect();
    let generic_sync = g == 2;
    let sync_sign = if generic_sync {
        let alpha = (n + 1) / 2;
        Some(if alpha % 2 == 0 { -1 } else { 1 })
    } else {
        None
    };
    Ok(DfsReport {
        g,
        r,
        labels,
        sector_dims,
        total_dim: 1 << r,
        generic_sync,
        sync_sign,
        thermal: false,
    })
}

/// Standing-wave mode of the single-excitation block: amplitudes over sites
/// 1..=N and the mode energy.
///
/// phi_n(j) = sqrt(2/(N+1)) sin(n j pi / (N+1)), E_n = omega + 2J cos(n pi / (N+1)).
pub fn single_excitation_mode(n: usize, chain: &ChainSpec) -> Result<(Array1<f64>, f64)> {
    chain.validate()?;
    if n < 1 || n > chain.n {
        return Err(Error::Config(format!(
            "mode label {n} out of range 1..={}",
            chain.n
        )));
    }
    let np1 = (chain.n + 1) as f64;
    let norm = (2.0 / np1).sqrt();
    let phi = Array1::from_iter(
        (1..=chain.n).map(|j| norm * (n as f64 * j as f64 * PI / np1).sin()),
    );
    let energy = chain.omega + 2.0 * chain.j * (n as f64 * PI / np1).cos();
    Ok((phi, energy))
}

/// Determinant by partial-pivot elimination; matrices here are at most r x r.
fn det(mut m: Array2<f64>) -> f64 {
    let k = m.nrows();
    let mut sign = 1.0f64;
    let mut acc = 1.0f64;
    for col in 0..k {
        let mut pivot = col;
        for row in col + 1..k {
            if m[(row, col)].abs() > m[(pivot, col)].abs() {
                pivot = row;
            }
        }
        if m[(pivot, col)] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for j in 0..k {
                m.swap((pivot, j), (col, j));
            }
            sign = -sign;
        }
        acc *= m[(col, col)];
        for row in col + 1..k {
            let f = m[(row, col)] / m[(col, col)];
            for j in col..k {
                m[(row, j)] -= f * m[(col, j)];
            }
        }
    }
    sign * acc
}

/// Antisymmetrized product of the modes in `labels` (ascending), expressed on
/// the `k = labels.len()` excitation sector of `basis`; returns the
/// unit-normalized sector vector and the additive energy.
///
/// The amplitude on the occupation |i_1 < ... < i_k> is the determinant of
/// the k x k matrix phi_{labels[a]}(i_b); the empty set gives the ground
/// state.
pub fn slater_state(
    labels: &[usize],
    chain: &ChainSpec,
    basis: &Arc<SectorBasis>,
) -> Result<(Array1<C64>, f64)> {
    let k = labels.len();
    for w in labels.windows(2) {
        if w[0] >= w[1] {
            return Err(Error::Config(format!(
                "labels must be strictly ascending, got {labels:?}"
            )));
        }
    }
    if basis.n != chain.n {
        return Err(Error::BasisMismatch(format!(
            "basis is for {} sites, chain has {}",
            basis.n, chain.n
        )));
    }
    let sector = basis
        .sector_states(k)
        .ok_or(Error::SectorMissing { k })?;
    let mut modes = Vec::with_capacity(k);
    let mut energy = 0.0;
    for &label in labels {
        let (phi, e) = single_excitation_mode(label, chain)?;
        modes.push(phi);
        energy += e;
    }
    let mut vec = Array1::zeros(sector.len());
    for (idx, &s) in sector.iter().enumerate() {
        let sites = s.occupied_sites();
        let mut m = Array2::zeros((k, k));
        for (a, phi) in modes.iter().enumerate() {
            for (b, &site) in sites.iter().enumerate() {
                m[(a, b)] = phi[site - 1];
            }
        }
        vec[idx] = C64::new(det(m), 0.0);
    }
    if k == 0 {
        vec[0] = C64::new(1.0, 0.0);
    }
    let norm = vec.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    vec.mapv_inplace(|a| a / norm);
    Ok((vec, energy))
}

/// One dark state: its mode labels, sector-block amplitudes, and energy.
#[derive(Clone, Debug)]
pub struct DarkState {
    /// Mode labels, ascending; the excitation number is labels.len().
    pub labels: Vec<usize>,
    /// Amplitudes over the labels.len()-excitation sector of the host basis.
    pub vector: Array1<C64>,
    pub energy: f64,
}

impl DarkState {
    pub fn excitation(&self) -> usize {
        self.labels.len()
    }
}

/// All dark states, ordered by excitation number and then by label set.
#[derive(Clone, Debug)]
pub struct DfsBasis {
    pub basis: Arc<SectorBasis>,
    pub states: Vec<DarkState>,
}

impl DfsBasis {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn find(&self, labels: &[usize]) -> Option<usize> {
        self.states.iter().position(|s| s.labels == labels)
    }

    /// Dark state scattered onto the full basis span.
    pub fn full_vector(&self, i: usize) -> Array1<C64> {
        let state = &self.states[i];
        let mut out = Array1::zeros(self.basis.dim());
        let range = self
            .basis
            .sector_range(state.excitation())
            .expect("dark state sector present in host basis");
        out.slice_mut(ndarray::s![range]).assign(&state.vector);
        out
    }
}

/// All subsets of `labels`, ordered by size then lexicographically.
fn subsets_by_size(labels: &[usize]) -> Vec<Vec<usize>> {
    let r = labels.len();
    let mut out: Vec<Vec<usize>> = (0u64..1 << r)
        .map(|mask| {
            (0..r)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| labels[i])
                .collect()
        })
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn build_states(
    subsets: &[Vec<usize>],
    chain: &ChainSpec,
    basis: &Arc<SectorBasis>,
) -> Result<Vec<DarkState>> {
    let mut states = Vec::with_capacity(subsets.len());
    for labels in subsets {
        let (vector, energy) = slater_state(labels, chain, basis)?;
        states.push(DarkState {
            labels: labels.clone(),
            vector,
            energy,
        });
    }
    Ok(states)
}

/// Materialize every dark state of the census (all 2^r label subsets).
///
/// Requires `basis` to include sectors up to r; errors otherwise rather than
/// silently dropping states.
pub fn build_dfs_basis(
    report: &DfsReport,
    chain: &ChainSpec,
    basis: &Arc<SectorBasis>,
) -> Result<DfsBasis> {
    if report.total_dim > MAX_DFS_DIM {
        return Err(Error::TooLarge(format!(
            "dark space dimension {} exceeds {MAX_DFS_DIM}",
            report.total_dim
        )));
    }
    if !basis.has_sector(report.r) {
        return Err(Error::SectorMissing { k: report.r });
    }
    let subsets = subsets_by_size(&report.labels);
    let states = build_states(&subsets, chain, basis)?;
    Ok(DfsBasis {
        basis: Arc::clone(basis),
        states,
    })
}

/// The dark states that fit inside `basis`: label subsets of size at most
/// kmax. Exact for dynamics started inside the basis span, since the missing
/// higher sectors are never populated.
pub fn build_dfs_basis_within(
    report: &DfsReport,
    chain: &ChainSpec,
    basis: &Arc<SectorBasis>,
) -> Result<DfsBasis> {
    let kmax = basis.kmax();
    let subsets: Vec<Vec<usize>> = subsets_by_size(&report.labels)
        .into_iter()
        .filter(|s| s.len() <= kmax)
        .collect();
    if subsets.len() as u64 > MAX_DFS_DIM {
        return Err(Error::TooLarge(format!(
            "dark space dimension {} exceeds {MAX_DFS_DIM}",
            subsets.len()
        )));
    }
    let states = build_states(&subsets, chain, basis)?;
    Ok(DfsBasis {
        basis: Arc::clone(basis),
        states,
    })
}

/// Residual report from [`verify_darkness`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct DarknessReport {
    /// Largest ||L |D>|| over all dark states and noise operators (raising
    /// included when thermal rates are active).
    pub max_jump_residual: f64,
    /// Largest ||H|D> - E|D>||.
    pub max_energy_residual: f64,
    pub pass: bool,
}

/// Norm of sigma_- at `site` applied to a sector vector. Lowering at a fixed
/// site is injective on occupations, so the image norm is read off directly.
fn lowering_residual(state: &DarkState, basis: &SectorBasis, site: usize) -> f64 {
    let sector = basis
        .sector_states(state.excitation())
        .expect("state sector present");
    let mut acc = 0.0;
    for (idx, &s) in sector.iter().enumerate() {
        if s.is_excited(site) {
            acc += state.vector[idx].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Norm of sigma_+ at `site` applied to a sector vector; the image lives one
/// sector up but its norm only needs the source amplitudes.
fn raising_residual(state: &DarkState, basis: &SectorBasis, site: usize) -> f64 {
    let sector = basis
        .sector_states(state.excitation())
        .expect("state sector present");
    let mut acc = 0.0;
    for (idx, &s) in sector.iter().enumerate() {
        if !s.is_excited(site) {
            acc += state.vector[idx].norm_sqr();
        }
    }
    acc.sqrt()
}

/// Check every dark state against every noise operator and against the
/// Hamiltonian eigenvalue equation. Reporting only; never errors.
pub fn verify_darkness(dfs: &DfsBasis, noise: &NoiseSpec, h: &SparseOperator) -> DarknessReport {
    let mut max_jump = 0.0f64;
    let mut max_energy = 0.0f64;
    for (i, state) in dfs.states.iter().enumerate() {
        for (a, &site) in noise.sites.iter().enumerate() {
            max_jump = max_jump.max(lowering_residual(state, &dfs.basis, site));
            let thermal_active = noise
                .thermal_rates
                .as_ref()
                .is_some_and(|tr| tr[a] > 0.0);
            if thermal_active {
                max_jump = max_jump.max(raising_residual(state, &dfs.basis, site));
            }
        }
        let full = dfs.full_vector(i);
        let mut resid = h.apply(&full);
        resid.scaled_add(C64::new(-state.energy, 0.0), &full);
        let norm = resid.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        max_energy = max_energy.max(norm);
    }
    DarknessReport {
        max_jump_residual: max_jump,
        max_energy_residual: max_energy,
        pass: max_jump <= DARKNESS_JUMP_TOL && max_energy <= DARKNESS_ENERGY_TOL,
    }
}
