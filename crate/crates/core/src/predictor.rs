//! Closed-form asymptotic dynamics on the dark subspace: transition matrix
//! elements, asymptotic density operators, the synchronization classifier,
//! asymptotic edge entanglement, and a dense Liouvillian spectrum oracle.

use std::io::Write;

use ndarray::{Array1, Array2};
use ndarray_linalg::Eig;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dfs::{DfsBasis, DfsReport, NoiseSpec};
use crate::dynamics::build_lindblad_ops;
use crate::error::{Error, Result};
use crate::hilbert::{enumerate_sector, ChainSpec, DensityMatrix};

/// Transitions whose matrix elements all fall below this are omitted.
pub const X_OMIT_TOL: f64 = 1e-12;

/// Frequencies closer than this are grouped at reporting time.
pub const FREQ_GROUP_TOL: f64 = 1e-10;

/// A reported frequency with amplitude below this is flagged degenerate.
pub const DEGENERATE_AMP_TOL: f64 = 1e-8;

/// Threshold on |Re lambda| for the peripheral (non-decaying) spectrum.
pub const PERIPHERAL_RE_TOL: f64 = 1e-9;

/// Dense superoperators are limited to 4^6 = 4096 rows.
pub const MAX_LIOUVILLE_SITES: usize = 6;

/// One allowed transition: `nu` has one excitation more than `mu`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionEntry {
    /// Index of the lower dark state in the DfsBasis ordering.
    pub mu: usize,
    /// Index of the upper dark state.
    pub nu: usize,
    pub mu_labels: Vec<usize>,
    pub nu_labels: Vec<usize>,
    /// E_nu - E_mu.
    pub frequency: f64,
    /// <mu| sigma_minus at site |nu>, one value per requested site.
    pub x_elements: Vec<f64>,
}

/// All excitation-raising transitions between dark states with at least one
/// matrix element above 1e-12.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TransitionTable {
    /// Sites the x_elements columns refer to, in column order.
    pub sites: Vec<usize>,
    pub entries: Vec<TransitionEntry>,
}

impl TransitionTable {
    /// Column index of a site in x_elements.
    pub fn site_column(&self, site: usize) -> Option<usize> {
        self.sites.iter().position(|&s| s == site)
    }

    /// Entry for a specific (mu_labels, nu_labels) pair.
    pub fn find(&self, mu_labels: &[usize], nu_labels: &[usize]) -> Option<&TransitionEntry> {
        self.entries
            .iter()
            .find(|e| e.mu_labels == mu_labels && e.nu_labels == nu_labels)
    }

    /// Distinct frequencies (grouped at 1e-10) with the largest |X| over any
    /// site as the amplitude of each group.
    pub fn grouped_frequencies(&self) -> (Vec<f64>, Vec<f64>) {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| {
            self.entries[a]
                .frequency
                .partial_cmp(&self.entries[b].frequency)
                .unwrap()
        });
        let mut freqs = Vec::new();
        let mut amps = Vec::new();
        for &i in &order {
            let e = &self.entries[i];
            let amp = e.x_elements.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
            match freqs.last() {
                Some(&f) if (e.frequency - f as f64).abs() <= FREQ_GROUP_TOL => {
                    let last = amps.len() - 1;
                    if amp > amps[last] {
                        amps[last] = amp;
                    }
                }
                _ => {
                    freqs.push(e.frequency);
                    amps.push(amp);
                }
            }
        }
        (freqs, amps)
    }
}

/// Matrix elements <mu| sigma_minus^(site) |nu> between all dark-state pairs
/// differing by one excitation, at the requested sites.
///
/// Amplitudes of the dark states are real, so the elements are real; entries
/// where every site element is below 1e-12 are dropped.
pub fn transition_table(dfs: &DfsBasis, sites: &[usize]) -> Result<TransitionTable> {
    let basis = &dfs.basis;
    for &s in sites {
        if s < 1 || s > basis.n {
            return Err(Error::SiteOutOfRange { site: s, n: basis.n });
        }
    }
    let mut entries = Vec::new();
    for (i_mu, mu) in dfs.states.iter().enumerate() {
        for (i_nu, nu) in dfs.states.iter().enumerate() {
            if nu.excitation() != mu.excitation() + 1 {
                continue;
            }
            let q = mu.excitation();
            let lo_start = basis.sector_range(q).expect("dark sector present").start;
            let hi_states = basis.sector_states(q + 1).expect("dark sector present");
            let mut x = vec![0.0f64; sites.len()];
            for (c, &site) in sites.iter().enumerate() {
                let mut acc = C64::new(0.0, 0.0);
                for (j, &st) in hi_states.iter().enumerate() {
                    if st.is_excited(site) {
                        let li = basis
                            .index_of(st.lowered(site))
                            .expect("lowered state stays in span")
                            - lo_start;
                        acc += mu.vector[li].conj() * nu.vector[j];
                    }
                }
                assert!(
                    acc.im.abs() <= 1e-12,
                    "matrix element must be real, got imaginary part {:e}",
                    acc.im
                );
                x[c] = acc.re;
            }
            if x.iter().all(|v| v.abs() < X_OMIT_TOL) {
                continue;
            }
            entries.push(TransitionEntry {
                mu: i_mu,
                nu: i_nu,
                mu_labels: mu.labels.clone(),
                nu_labels: nu.labels.clone(),
                frequency: nu.energy - mu.energy,
                x_elements: x,
            });
        }
    }
    Ok(TransitionTable {
        sites: sites.to_vec(),
        entries,
    })
}

/// How an asymptotic state was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Analytic,
    Empirical,
}

/// Asymptotic density operator restricted to the dark subspace, indexed in
/// the DfsBasis state order.
#[derive(Clone, Debug)]
pub struct AsymptoticState {
    pub coherences: Array2<C64>,
    pub source: Source,
    /// Chain length the dark states belong to.
    pub n: usize,
    /// Clock origin of the closed-form phases (T* for empirical states).
    pub t0: f64,
}

impl AsymptoticState {
    pub fn trace(&self) -> f64 {
        self.coherences.diag().sum().re
    }
}

/// Input for [`asymptotic_state`].
pub enum AsymptoticMode<'a> {
    /// Project the initial state directly; all bright population must decay
    /// into the vacuum, which holds when the support sits in the zero- and
    /// one-excitation sectors.
    Analytic(&'a DensityMatrix),
    /// Project a converged snapshot taken at `t_star`; the closed-form clock
    /// starts there.
    Empirical {
        snapshot: &'a DensityMatrix,
        t_star: f64,
    },
}

/// Asymptotic state rho_inf = P rho P over the dark basis.
///
/// In analytic mode the population lost from bright single-excitation
/// amplitudes is added to the vacuum diagonal so the trace is exactly 1;
/// initial states with bright support above one excitation are rejected
/// (project a converged snapshot instead).
pub fn asymptotic_state(mode: AsymptoticMode, dfs: &DfsBasis) -> Result<AsymptoticState> {
    let (rho, source, t0) = match mode {
        AsymptoticMode::Analytic(rho) => (rho, Source::Analytic, 0.0),
        AsymptoticMode::Empirical { snapshot, t_star } => (snapshot, Source::Empirical, t_star),
    };
    if !rho.basis.same_span(&dfs.basis) {
        return Err(Error::BasisMismatch(
            "state and dark basis span different sectors".into(),
        ));
    }
    if source == Source::Analytic {
        let mut high = 0.0f64;
        for k in 2..=rho.basis.kmax() {
            if let Some(r) = rho.basis.sector_range(k) {
                for i in r {
                    high += rho.entries[(i, i)].re;
                }
            }
        }
        if high > 1e-12 {
            return Err(Error::InvalidState(format!(
                "initial state has population {high:e} above one excitation; \
                 the analytic form does not apply, use an empirical snapshot"
            )));
        }
    }
    let m = dfs.len();
    let vectors: Vec<Array1<C64>> = (0..m).map(|i| dfs.full_vector(i)).collect();
    let mut coh = Array2::zeros((m, m));
    for b in 0..m {
        let w = rho.entries.dot(&vectors[b]);
        for a in 0..m {
            coh[(a, b)] = vectors[a]
                .iter()
                .zip(w.iter())
                .map(|(x, y)| x.conj() * y)
                .sum::<C64>();
        }
    }
    if source == Source::Analytic && m > 0 {
        let dark_above: f64 = (1..m).map(|i| coh[(i, i)].re).sum();
        coh[(0, 0)] = C64::new(1.0 - dark_above, 0.0);
    }
    Ok(AsymptoticState {
        coherences: coh,
        source,
        n: dfs.basis.n,
        t0,
    })
}

/// Closed-form asymptotic expectation of sigma_x at one site:
/// 2 Re sum over transitions of rho_inf(nu, mu) X e^{-i w (t - t0)}.
pub fn closed_form_series(
    state: &AsymptoticState,
    table: &TransitionTable,
    site: usize,
    times: &[f64],
) -> Result<Vec<f64>> {
    let col = table
        .site_column(site)
        .ok_or(Error::SiteOutOfRange { site, n: state.n })?;
    let dim = state.coherences.nrows();
    let mut terms = Vec::with_capacity(table.entries.len());
    for e in &table.entries {
        if e.mu >= dim || e.nu >= dim {
            return Err(Error::BasisMismatch(
                "transition table indexes states outside the asymptotic basis".into(),
            ));
        }
        let c = state.coherences[(e.nu, e.mu)] * e.x_elements[col];
        terms.push((c, e.frequency));
    }
    Ok(times
        .iter()
        .map(|&t| {
            let tau = t - state.t0;
            2.0 * terms
                .iter()
                .map(|&(c, w)| c.re * (w * tau).cos() + c.im * (w * tau).sin())
                .sum::<f64>()
        })
        .collect())
}

/// Why a chain does or does not synchronize generically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncReason {
    UniqueDarkMode,
    ConflictingMatrixElements,
    EmptyDfs,
}

/// Outcome of the synchronization classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SyncVerdict {
    pub generic: bool,
    /// Edge-to-edge sign when generic: +1 in-phase, -1 anti-phase.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub constant_c: Option<i32>,
    /// Participating transition frequencies, ascending, grouped at 1e-10.
    pub frequencies: Vec<f64>,
    /// Largest |X| per frequency group.
    pub amplitudes: Vec<f64>,
    /// Frequencies whose amplitude falls below 1e-8 are reported, not judged.
    pub degenerate: Vec<bool>,
    /// Label pairs (alpha, beta) whose two-excitation transitions contradict
    /// the sign required by the vacuum transition of alpha.
    pub conflicting_pairs: Vec<(usize, usize)>,
    pub reason: SyncReason,
}

/// Generic synchronization holds exactly when the dark subspace contains one
/// single-excitation mode (g = 2); otherwise the matrix elements of distinct
/// transitions demand contradictory phase relations between the edges.
pub fn classify_synchronization(report: &DfsReport, table: &TransitionTable) -> Result<SyncVerdict> {
    if report.r == 0 {
        return Ok(SyncVerdict {
            generic: false,
            constant_c: None,
            frequencies: Vec::new(),
            amplitudes: Vec::new(),
            degenerate: Vec::new(),
            conflicting_pairs: Vec::new(),
            reason: SyncReason::EmptyDfs,
        });
    }
    // labels[0] = (N+1)/g fixes the chain length.
    let n = report.g * report.labels[0] - 1;
    if table.site_column(1).is_none() || table.site_column(n).is_none() {
        return Err(Error::Config(format!(
            "classifier needs matrix elements at sites 1 and {n}"
        )));
    }
    let (frequencies, amplitudes) = table.grouped_frequencies();
    let degenerate: Vec<bool> = amplitudes.iter().map(|&a| a < DEGENERATE_AMP_TOL).collect();
    if report.generic_sync {
        if frequencies.len() != 1 {
            return Err(Error::Config(format!(
                "transition table has {} distinct frequencies, expected the single edge transition",
                frequencies.len()
            )));
        }
        return Ok(SyncVerdict {
            generic: true,
            constant_c: report.sync_sign,
            frequencies,
            amplitudes,
            degenerate,
            conflicting_pairs: Vec::new(),
            reason: SyncReason::UniqueDarkMode,
        });
    }
    // A pair (alpha, beta) conflicts when the vacuum transition to D_alpha
    // and the D_beta -> D_{alpha beta} transition both survive: the latter
    // flips the relative sign of the edge matrix elements.
    let mut with_ground: Vec<usize> = table
        .entries
        .iter()
        .filter(|e| e.mu_labels.is_empty() && e.nu_labels.len() == 1)
        .map(|e| e.nu_labels[0])
        .collect();
    with_ground.sort_unstable();
    let mut conflicting_pairs = Vec::new();
    for e in &table.entries {
        if e.mu_labels.len() == 1 && e.nu_labels.len() == 2 {
            let beta = e.mu_labels[0];
            let alpha = if e.nu_labels[0] == beta {
                e.nu_labels[1]
            } else {
                e.nu_labels[0]
            };
            if with_ground.binary_search(&alpha).is_ok() {
                conflicting_pairs.push((alpha, beta));
            }
        }
    }
    conflicting_pairs.sort_unstable();
    conflicting_pairs.dedup();
    Ok(SyncVerdict {
        generic: false,
        constant_c: None,
        frequencies,
        amplitudes,
        degenerate,
        conflicting_pairs,
        reason: SyncReason::ConflictingMatrixElements,
    })
}

/// Asymptotic edge concurrence 4 |rho_inf_DD| / (N+1), valid only for the
/// two-state dark space of a generic chain.
pub fn asymptotic_concurrence(state: &AsymptoticState, report: &DfsReport) -> Result<f64> {
    if !report.generic_sync {
        return Err(Error::Config(
            "asymptotic concurrence is derived for the g = 2 dark space only".into(),
        ));
    }
    if state.coherences.nrows() != 2 {
        return Err(Error::BasisMismatch(format!(
            "expected the 2-state dark basis, got {} states",
            state.coherences.nrows()
        )));
    }
    let dd = state.coherences[(1, 1)].norm();
    Ok(4.0 * dd / (state.n as f64 + 1.0))
}

fn kron(a: &Array2<C64>, b: &Array2<C64>) -> Array2<C64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let av = a[(i, j)];
            if av != C64::new(0.0, 0.0) {
                let mut block = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
                block.zip_mut_with(b, |o, &bv| *o = av * bv);
            }
        }
    }
    out
}

/// Dense GKLS superoperator over the full 2^N space, acting on row-major
/// vec(rho): L = -i (H (x) I - I (x) H^T)
///             + sum_a gamma_a (L_a (x) conj(L_a)
///                              - 1/2 (L_a^+ L_a) (x) I
///                              - 1/2 I (x) (L_a^+ L_a)^T).
pub fn liouvillian_superoperator(chain: &ChainSpec, noise: &NoiseSpec) -> Result<Array2<C64>> {
    chain.validate()?;
    noise.validate(chain.n)?;
    if chain.n > MAX_LIOUVILLE_SITES {
        return Err(Error::TooLarge(format!(
            "dense superoperator needs 4^{} rows; limit is N = {MAX_LIOUVILLE_SITES}",
            chain.n
        )));
    }
    let basis = std::sync::Arc::new(enumerate_sector(chain.n, chain.n)?);
    let (h, jumps) = build_lindblad_ops(chain, noise, &basis)?;
    let d = basis.dim();
    let eye = Array2::<C64>::eye(d);
    let hd = h.to_dense();
    let minus_i = C64::new(0.0, -1.0);
    let mut sup = (kron(&hd, &eye) - kron(&eye, &hd.t().to_owned())) * minus_i;
    for (l, gamma) in &jumps {
        let ld = l.to_dense();
        let lconj = ld.mapv(|z| z.conj());
        let gram = ld.t().mapv(|z| z.conj()).dot(&ld);
        let half = C64::new(0.5 * gamma, 0.0);
        sup = sup + kron(&ld, &lconj) * C64::new(*gamma, 0.0)
            - kron(&gram, &eye) * half
            - kron(&eye, &gram.t().to_owned()) * half;
    }
    Ok(sup)
}

/// Non-decaying part of the Liouvillian spectrum.
#[derive(Clone, Debug)]
pub struct PeripheralSpectrum {
    /// Eigenvalues with |Re| < 1e-9, sorted by (Im, Re).
    pub eigenvalues: Vec<C64>,
    pub count: usize,
}

impl PeripheralSpectrum {
    /// CSV with header `re, im`, one row per peripheral eigenvalue.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "re, im")?;
        for e in &self.eigenvalues {
            writeln!(w, "{}, {}", e.re, e.im)?;
        }
        Ok(())
    }
}

/// Dense diagonalization of the full superoperator, keeping eigenvalues on
/// the imaginary axis. Their count must equal (2^r)^2 and their imaginary
/// parts the dark-state energy differences; this is the independent check
/// of the arithmetic dark-space census.
pub fn liouvillian_peripheral_spectrum(
    chain: &ChainSpec,
    noise: &NoiseSpec,
) -> Result<PeripheralSpectrum> {
    let sup = liouvillian_superoperator(chain, noise)?;
    let (eigs, _) = sup.eig()?;
    let mut eigenvalues: Vec<C64> = eigs
        .iter()
        .copied()
        .filter(|l| l.re.abs() < PERIPHERAL_RE_TOL)
        .collect();
    eigenvalues.sort_by(|a, b| (a.im, a.re).partial_cmp(&(b.im, b.re)).unwrap());
    let count = eigenvalues.len();
    Ok(PeripheralSpectrum { eigenvalues, count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dfs::{build_dfs_basis_within, gcd_analysis, single_excitation_mode};
    use crate::hilbert::embed_product_state;
    use approx::assert_abs_diff_eq;
    use std::sync::Arc;

    fn ground() -> [C64; 2] {
        [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]
    }

    fn plus() -> [C64; 2] {
        let a = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        [a, a]
    }

    fn minus() -> [C64; 2] {
        let a = std::f64::consts::FRAC_1_SQRT_2;
        [C64::new(a, 0.0), C64::new(-a, 0.0)]
    }

    fn fig1a_dfs(kmax: usize) -> (ChainSpec, crate::dfs::DfsBasis, DfsReport) {
        let chain = ChainSpec::new(11, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![6], 0.05);
        let report = gcd_analysis(&noise, 11).unwrap();
        let basis = Arc::new(enumerate_sector(11, kmax).unwrap());
        let dfs = build_dfs_basis_within(&report, &chain, &basis).unwrap();
        (chain, dfs, report)
    }

    fn fig1b_dfs() -> (ChainSpec, crate::dfs::DfsBasis, DfsReport) {
        let chain = ChainSpec::new(11, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![2, 4, 6, 8, 10], 0.05);
        let report = gcd_analysis(&noise, 11).unwrap();
        let basis = Arc::new(enumerate_sector(11, 1).unwrap());
        let dfs = build_dfs_basis_within(&report, &chain, &basis).unwrap();
        (chain, dfs, report)
    }

    #[test]
    fn ground_transitions_carry_mode_amplitudes() {
        let (chain, dfs, _) = fig1a_dfs(1);
        let table = transition_table(&dfs, &[1, 6, 11]).unwrap();
        assert_eq!(table.entries.len(), 5);
        let mut seen = Vec::new();
        for e in &table.entries {
            assert!(e.mu_labels.is_empty());
            assert_eq!(e.nu_labels.len(), 1);
            let alpha = e.nu_labels[0];
            let (phi, energy) = single_excitation_mode(alpha, &chain).unwrap();
            assert_abs_diff_eq!(e.frequency, energy, epsilon = 1e-12);
            assert_abs_diff_eq!(e.x_elements[0], phi[0], epsilon = 1e-12);
            // Dark modes vanish at the noise site.
            assert!(e.x_elements[1].abs() <= 1e-14);
            // Parity: X at site 1 = (-1)^(alpha+1) X at site N.
            let sign = if alpha % 2 == 0 { -1.0 } else { 1.0 };
            assert_abs_diff_eq!(e.x_elements[0], sign * e.x_elements[2], epsilon = 1e-12);
            seen.push(e.frequency);
        }
        seen.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let (w, j) = (0.4, 0.15);
        let r3 = 3.0f64.sqrt();
        let expect = [w - r3 * j, w - j, w, w + j, w + r3 * j];
        for (got, want) in seen.iter().zip(expect) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-10);
        }
    }

    #[test]
    fn table_omits_transitions_invisible_at_noise_site() {
        let (_, dfs, _) = fig1a_dfs(2);
        let table = transition_table(&dfs, &[6]).unwrap();
        assert!(table.entries.is_empty(), "all dark modes vanish at site 6");
    }

    #[test]
    fn conflict_law_for_two_excitation_transitions() {
        let (chain, dfs, report) = fig1a_dfs(2);
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        for &alpha in &report.labels {
            let (phi, _) = single_excitation_mode(alpha, &chain).unwrap();
            for &beta in &report.labels {
                if alpha == beta {
                    continue;
                }
                let mut pair = vec![alpha, beta];
                pair.sort_unstable();
                let e = table.find(&[beta], &pair).expect("transition present");
                // With ascending-label determinant rows the element is
                // +phi_alpha(1), -phi_alpha(N) for alpha < beta and flips
                // overall sign for alpha > beta; the edge ratio conflicts
                // with the vacuum transition either way.
                let sigma = if alpha < beta { 1.0 } else { -1.0 };
                assert_abs_diff_eq!(e.x_elements[0], sigma * phi[0], epsilon = 1e-10);
                assert_abs_diff_eq!(e.x_elements[1], -sigma * phi[10], epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn frequency_closure_over_all_transitions() {
        let (chain, dfs, report) = fig1a_dfs(2);
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let energies: Vec<f64> = report
            .labels
            .iter()
            .map(|&a| single_excitation_mode(a, &chain).unwrap().1)
            .collect();
        for e in &table.entries {
            assert!(
                energies.iter().any(|&en| (e.frequency - en).abs() <= 1e-10),
                "frequency {} is not a single-mode energy",
                e.frequency
            );
        }
    }

    #[test]
    fn analytic_state_from_edge_plus() {
        let (_, dfs, _) = fig1b_dfs();
        let mut qubits = vec![ground(); 11];
        qubits[0] = plus();
        let rho0 = embed_product_state(&qubits, &dfs.basis).unwrap();
        let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap();
        assert_eq!(state.coherences.dim(), (2, 2));
        assert_abs_diff_eq!(state.coherences[(1, 1)].re, 1.0 / 12.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.coherences[(0, 0)].re, 11.0 / 12.0, epsilon = 1e-12);
        let phi1 = (1.0f64 / 6.0).sqrt();
        assert_abs_diff_eq!(state.coherences[(0, 1)].re, phi1 / 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.trace(), 1.0, epsilon = 1e-12);
        assert_eq!(state.n, 11);
        assert_abs_diff_eq!(state.t0, 0.0);
    }

    #[test]
    fn analytic_vacuum_is_fixed() {
        let (_, dfs, _) = fig1b_dfs();
        let rho0 = embed_product_state(&vec![ground(); 11], &dfs.basis).unwrap();
        let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap();
        assert_abs_diff_eq!(state.coherences[(0, 0)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(state.coherences[(1, 1)].norm(), 0.0, epsilon = 1e-14);
    }

    #[test]
    fn analytic_rejects_multi_excitation_support() {
        let chain = ChainSpec::new(11, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![6], 0.05);
        let report = gcd_analysis(&noise, 11).unwrap();
        let basis = Arc::new(enumerate_sector(11, 2).unwrap());
        let dfs = build_dfs_basis_within(&report, &chain, &basis).unwrap();
        let mut qubits = vec![ground(); 11];
        qubits[0] = plus();
        qubits[1] = minus();
        let rho0 = embed_product_state(&qubits, &basis).unwrap();
        let err = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap_err();
        assert!(err.to_string().contains("empirical"));
    }

    #[test]
    fn empirical_keeps_dark_weight_only() {
        let (chain, dfs, _) = fig1b_dfs();
        // Mix the dark state with an orthogonal bright mode.
        let dark = dfs.full_vector(1);
        let (phi, _) = single_excitation_mode(1, &chain).unwrap();
        let mut bright = Array1::<C64>::zeros(dfs.basis.dim());
        let range = dfs.basis.sector_range(1).unwrap();
        for (i, idx) in range.enumerate() {
            bright[idx] = C64::new(phi[i], 0.0);
        }
        let mut entries = Array2::<C64>::zeros((dfs.basis.dim(), dfs.basis.dim()));
        for i in 0..dfs.basis.dim() {
            for j in 0..dfs.basis.dim() {
                entries[(i, j)] =
                    dark[i] * dark[j].conj() * 0.6 + bright[i] * bright[j].conj() * 0.4;
            }
        }
        let rho = DensityMatrix {
            basis: Arc::clone(&dfs.basis),
            entries,
        };
        let state = asymptotic_state(
            AsymptoticMode::Empirical {
                snapshot: &rho,
                t_star: 700.0,
            },
            &dfs,
        )
        .unwrap();
        assert_abs_diff_eq!(state.trace(), 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(state.coherences[(1, 1)].re, 0.6, epsilon = 1e-12);
        assert_abs_diff_eq!(state.coherences[(0, 0)].norm(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(state.t0, 700.0);
        assert_eq!(state.source, Source::Empirical);
    }

    #[test]
    fn closed_form_vacuum_is_silent() {
        let (_, dfs, _) = fig1b_dfs();
        let rho0 = embed_product_state(&vec![ground(); 11], &dfs.basis).unwrap();
        let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap();
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.3).collect();
        let series = closed_form_series(&state, &table, 1, &times).unwrap();
        for v in series {
            assert_abs_diff_eq!(v, 0.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn closed_form_single_tone_antiphase() {
        let (_, dfs, _) = fig1b_dfs();
        let mut qubits = vec![ground(); 11];
        qubits[0] = plus();
        let rho0 = embed_product_state(&qubits, &dfs.basis).unwrap();
        let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap();
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let times: Vec<f64> = (0..200).map(|i| i as f64 * 0.25).collect();
        let head = closed_form_series(&state, &table, 1, &times).unwrap();
        let tail = closed_form_series(&state, &table, 11, &times).unwrap();
        // <sx_1(t)> = phi(1)^2 cos(E t) with phi(1)^2 = 1/6 and E = omega.
        for (i, &t) in times.iter().enumerate() {
            assert_abs_diff_eq!(head[i], (0.4 * t).cos() / 6.0, epsilon = 1e-12);
            assert_abs_diff_eq!(tail[i], -head[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn classify_generic_chain() {
        let (_, dfs, report) = fig1b_dfs();
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let verdict = classify_synchronization(&report, &table).unwrap();
        assert!(verdict.generic);
        assert_eq!(verdict.constant_c, Some(-1));
        assert_eq!(verdict.reason, SyncReason::UniqueDarkMode);
        assert_eq!(verdict.frequencies.len(), 1);
        assert_abs_diff_eq!(verdict.frequencies[0], 0.4, epsilon = 1e-10);
        assert!(!verdict.degenerate[0]);
        assert!(verdict.conflicting_pairs.is_empty());
    }

    #[test]
    fn classify_conflicting_chain() {
        let (_, dfs, report) = fig1a_dfs(2);
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let verdict = classify_synchronization(&report, &table).unwrap();
        assert!(!verdict.generic);
        assert_eq!(verdict.reason, SyncReason::ConflictingMatrixElements);
        assert_eq!(verdict.constant_c, None);
        assert_eq!(verdict.frequencies.len(), 5);
        for w in verdict.frequencies.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!(verdict.amplitudes.iter().all(|&a| a > DEGENERATE_AMP_TOL));
        // Every ordered label pair conflicts: 5 * 4 of them.
        assert_eq!(verdict.conflicting_pairs.len(), 20);
        assert!(verdict.conflicting_pairs.contains(&(2, 4)));
        assert!(verdict.conflicting_pairs.contains(&(4, 2)));
    }

    #[test]
    fn classify_trivial_dark_space() {
        let chain = ChainSpec::new(11, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![1], 0.05);
        let report = gcd_analysis(&noise, 11).unwrap();
        let basis = Arc::new(enumerate_sector(11, 1).unwrap());
        let dfs = build_dfs_basis_within(&report, &chain, &basis).unwrap();
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        assert!(table.entries.is_empty());
        let verdict = classify_synchronization(&report, &table).unwrap();
        assert!(!verdict.generic);
        assert_eq!(verdict.reason, SyncReason::EmptyDfs);
        assert!(verdict.frequencies.is_empty());
    }

    #[test]
    fn verdict_and_table_round_trip_json() {
        let (_, dfs, report) = fig1b_dfs();
        let table = transition_table(&dfs, &[1, 11]).unwrap();
        let verdict = classify_synchronization(&report, &table).unwrap();
        let tj = serde_json::to_string(&table).unwrap();
        let vj = serde_json::to_string(&verdict).unwrap();
        assert!(vj.contains("\"unique_dark_mode\""));
        let t2: TransitionTable = serde_json::from_str(&tj).unwrap();
        let v2: SyncVerdict = serde_json::from_str(&vj).unwrap();
        assert_eq!(t2.entries.len(), table.entries.len());
        assert_eq!(v2.constant_c, Some(-1));
        assert_eq!(v2.reason, SyncReason::UniqueDarkMode);
    }

    #[test]
    fn concurrence_formula_and_guard() {
        let (_, dfs, report) = fig1b_dfs();
        let mut qubits = vec![ground(); 11];
        qubits[0] = plus();
        let rho0 = embed_product_state(&qubits, &dfs.basis).unwrap();
        let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs).unwrap();
        let c = asymptotic_concurrence(&state, &report).unwrap();
        assert_abs_diff_eq!(c, 4.0 / 144.0, epsilon = 1e-12);

        let vac = embed_product_state(&vec![ground(); 11], &dfs.basis).unwrap();
        let silent = asymptotic_state(AsymptoticMode::Analytic(&vac), &dfs).unwrap();
        assert_abs_diff_eq!(
            asymptotic_concurrence(&silent, &report).unwrap(),
            0.0,
            epsilon = 1e-14
        );

        let (_, dfs_a, report_a) = fig1a_dfs(1);
        let rho_a = embed_product_state(&vec![ground(); 11], &dfs_a.basis).unwrap();
        let state_a = asymptotic_state(AsymptoticMode::Analytic(&rho_a), &dfs_a).unwrap();
        assert!(asymptotic_concurrence(&state_a, &report_a).is_err());
    }

    #[test]
    fn superoperator_matches_equation_of_motion() {
        let chain = ChainSpec::new(3, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![2], 0.05);
        let basis = Arc::new(enumerate_sector(3, 3).unwrap());
        let d = basis.dim();
        let mut entries = Array2::<C64>::zeros((d, d));
        for i in 0..d {
            for j in 0..d {
                entries[(i, j)] = C64::new(
                    ((i * 7 + j) as f64 * 0.31).sin(),
                    ((i as f64) - (j as f64)) * 0.17,
                );
            }
        }
        let herm = {
            let mut h = Array2::<C64>::zeros((d, d));
            for i in 0..d {
                for j in 0..d {
                    h[(i, j)] = 0.5 * (entries[(i, j)] + entries[(j, i)].conj());
                }
            }
            let tr = h.diag().sum().re;
            h.mapv(|z| z / tr)
        };
        let rho = DensityMatrix {
            basis: Arc::clone(&basis),
            entries: herm.clone(),
        };
        let (h, jumps) = build_lindblad_ops(&chain, &noise, &basis).unwrap();
        let rhs = crate::dynamics::lindblad_rhs(&rho, &h, &jumps).unwrap();
        let sup = liouvillian_superoperator(&chain, &noise).unwrap();
        let vec_rho: Array1<C64> = Array1::from_iter(herm.iter().copied());
        let out = sup.dot(&vec_rho);
        for i in 0..d {
            for j in 0..d {
                let got = out[i * d + j];
                let want = rhs.entries[(i, j)];
                assert_abs_diff_eq!(got.re, want.re, epsilon = 1e-12);
                assert_abs_diff_eq!(got.im, want.im, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn peripheral_spectrum_examples() {
        let chain = ChainSpec::new(3, 0.4, 0.15).unwrap();
        // g = 2: dark space {vacuum, D_2} with E = omega, so the peripheral
        // eigenvalues are {0, 0, +/- i omega}.
        let spec = liouvillian_peripheral_spectrum(&chain, &NoiseSpec::uniform(vec![2], 0.05))
            .unwrap();
        assert_eq!(spec.count, 4);
        let mut ims: Vec<f64> = spec.eigenvalues.iter().map(|l| l.im).collect();
        ims.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expect = [-0.4, 0.0, 0.0, 0.4];
        for (got, want) in ims.iter().zip(expect) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-9);
        }
        for l in &spec.eigenvalues {
            assert!(l.re.abs() < PERIPHERAL_RE_TOL);
        }

        // Edge noise kills every mode: only the steady state survives.
        let spec = liouvillian_peripheral_spectrum(&chain, &NoiseSpec::uniform(vec![1], 0.05))
            .unwrap();
        assert_eq!(spec.count, 1);

        // A thermal rate leaves no dark state, and off-center placement
        // leaves a unique steady state.
        let mut noise = NoiseSpec::uniform(vec![1], 0.05);
        noise.thermal_rates = Some(vec![0.02]);
        let spec = liouvillian_peripheral_spectrum(&chain, &noise).unwrap();
        assert_eq!(spec.count, 1);

        // Thermal noise at the reflection-fixed center site commutes with
        // the site reversal 1 <-> 3, so each parity block keeps its own
        // steady state: the kernel is 2-dimensional although no dark state
        // exists (the second stationary state is mixed).
        let mut noise = NoiseSpec::uniform(vec![2], 0.05);
        noise.thermal_rates = Some(vec![0.02]);
        let spec = liouvillian_peripheral_spectrum(&chain, &noise).unwrap();
        assert_eq!(spec.count, 2);
        for l in &spec.eigenvalues {
            assert!(l.im.abs() < 1e-9, "both kernel states are stationary");
        }
    }

    #[test]
    fn superoperator_size_guard() {
        let chain = ChainSpec::new(8, 0.4, 0.15).unwrap();
        let noise = NoiseSpec::uniform(vec![3], 0.05);
        assert!(liouvillian_superoperator(&chain, &noise).is_err());
    }

    #[test]
    fn peripheral_csv_layout() {
        let chain = ChainSpec::new(3, 0.4, 0.15).unwrap();
        let spec = liouvillian_peripheral_spectrum(&chain, &NoiseSpec::uniform(vec![2], 0.05))
            .unwrap();
        let mut buf = Vec::new();
        spec.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "re, im");
        assert_eq!(lines.count(), 4);
    }
}
