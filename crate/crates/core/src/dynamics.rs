//! Time integration of the GKLS master equation on the sector-truncated
//! density matrix, with trace and positivity monitoring.
//!
//! The generator is
//!
//! ```text
//! d rho/dt = -i[H, rho] + sum_a gamma_a (L_a rho L_a^+ - 1/2 {L_a^+ L_a, rho})
//! ```
//!
//! evaluated in the production path as `-i(A - A^+) + sum_a gamma_a L_a rho
//! L_a^+` with `A = H_eff rho`, `H_eff = H - (i/2) sum_a gamma_a L_a^+ L_a`.
//! The two forms agree exactly for Hermitian `rho`, and every Runge-Kutta
//! stage of a Hermitian state is Hermitian, so the cheap form is safe inside
//! the steppers; [`lindblad_rhs`] keeps the literal form as the reference.
//!
//! Positivity is monitored, never enforced: a projection back to the
//! positive cone would mask integrator bugs.
//!
//! Snapshot files use a fixed little-endian layout: the magic bytes
//! `XXSNAP01`, then u64 chain length, u64 sector count, the u64 sector
//! excitation numbers, u64 matrix dimension, f64 capture time, and the
//! row-major density-matrix entries as (re, im) f64 pairs.

use std::io::{Read, Write};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dfs::{build_dfs_basis_within, gcd_analysis, DfsBasis, NoiseSpec};
use crate::error::{Error, Result};
use crate::hilbert::{
    build_hamiltonian, build_jump_operator, build_sigma_x, enumerate_sector, ChainSpec,
    DensityMatrix, DeltaExcitation, JumpKind, SectorBasis, SparseOperator,
};
use crate::observables::{EdgePairState, EdgeReductionPlan};

/// Default fixed step: the fastest relevant period at the reference
/// parameters is ~9.5 time units, giving ~190 steps per period.
pub const DEFAULT_DT: f64 = 0.05;

/// Integration aborts when |Tr rho - 1| exceeds this.
pub const TRACE_ABORT_TOL: f64 = 1e-6;

/// Bright-population threshold defining the transient cutoff T*.
pub const BRIGHT_TOL: f64 = 1e-6;

/// Hard cap on fixed-step counts (guards against absurd dt/t_max ratios).
const MAX_STEPS: usize = 100_000_000;

/// Number of positivity samples taken across a run.
const EIG_SAMPLES: usize = 16;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    #[default]
    Rk4,
    AdaptiveRk45,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    /// Fixed step for rk4; record-grid spacing and initial step for rk45.
    pub dt: f64,
    pub t_max: f64,
    /// Observables are recorded every this many steps.
    #[serde(default = "one")]
    pub record_stride: usize,
    #[serde(default)]
    pub method: Method,
    /// Per-entry relative tolerance (adaptive method only).
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    /// Per-entry absolute tolerance; also scales the positivity threshold.
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    /// Times at which to capture the full density matrix (each is matched to
    /// the first record point at or after it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_times: Option<Vec<f64>>,
}

fn one() -> usize {
    1
}
fn default_rel_tol() -> f64 {
    1e-8
}
fn default_abs_tol() -> f64 {
    1e-10
}

impl IntegratorConfig {
    pub fn new(dt: f64, t_max: f64) -> Self {
        Self {
            dt,
            t_max,
            record_stride: 1,
            method: Method::Rk4,
            rel_tol: default_rel_tol(),
            abs_tol: default_abs_tol(),
            snapshot_times: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.t_max.is_finite() && self.t_max > 0.0) {
            return Err(Error::Config(format!(
                "t_max must be positive, got {}",
                self.t_max
            )));
        }
        if self.dt >= self.t_max {
            return Err(Error::Config(format!(
                "dt = {} must be smaller than t_max = {}",
                self.dt, self.t_max
            )));
        }
        if self.record_stride == 0 {
            return Err(Error::Config("record_stride must be at least 1".into()));
        }
        if !(self.rel_tol.is_finite() && self.rel_tol > 0.0)
            || !(self.abs_tol.is_finite() && self.abs_tol > 0.0)
        {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if self.t_max / self.dt > MAX_STEPS as f64 {
            return Err(Error::TooLarge(format!(
                "t_max/dt = {:.1} steps exceeds {MAX_STEPS}",
                self.t_max / self.dt
            )));
        }
        if let Some(ts) = &self.snapshot_times {
            for &t in ts {
                if !t.is_finite() || t < 0.0 || t > self.t_max + 1e-9 {
                    return Err(Error::Config(format!(
                        "snapshot time {t} outside [0, t_max]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Recorded observables of one integration run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// Sites the sigma_x columns refer to, in column order.
    pub sites: Vec<usize>,
    /// Row per recorded time, column per site in `sites`.
    pub sigma_x: Array2<f64>,
    /// Tr rho - 1 at each recorded time.
    pub trace_drift: Vec<f64>,
    /// Population inside the dark subspace at each recorded time.
    pub dfs_population: Vec<f64>,
    /// Reduced edge-pair state (4x4, ordered basis |q1 qN>) at each recorded
    /// time; empty when the chain has fewer than 3 sites.
    pub edge_pairs: Vec<Array2<C64>>,
    pub snapshots: Vec<(f64, DensityMatrix)>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// sigma_x series for one site (by site index, not column).
    pub fn site_series(&self, site: usize) -> Option<Array1<f64>> {
        let col = self.sites.iter().position(|&s| s == site)?;
        Some(self.sigma_x.column(col).to_owned())
    }

    /// Population outside the dark subspace at record point i.
    pub fn bright_population(&self, i: usize) -> f64 {
        (1.0 + self.trace_drift[i]) - self.dfs_population[i]
    }

    /// Edge-pair state at record point i (None when not recorded).
    pub fn edge_state(&self, i: usize) -> Option<EdgePairState> {
        self.edge_pairs.get(i).map(|m| EdgePairState { rho4: m.clone() })
    }

    /// Earliest recorded time at which the bright population has dropped
    /// below `bright_tol` (the transient cutoff T*).
    pub fn settling_time(&self, bright_tol: f64) -> Option<f64> {
        (0..self.len())
            .find(|&i| self.bright_population(i) < bright_tol)
            .map(|i| self.times[i])
    }

    /// CSV with header `t, sx_1, ..., sx_N, trace_drift` (site columns named
    /// by the actual site indices recorded).
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "t")?;
        for &s in &self.sites {
            write!(w, ", sx_{s}")?;
        }
        writeln!(w, ", trace_drift")?;
        for (i, &t) in self.times.iter().enumerate() {
            write!(w, "{t}")?;
            for c in 0..self.sites.len() {
                write!(w, ", {}", self.sigma_x[(i, c)])?;
            }
            writeln!(w, ", {}", self.trace_drift[i])?;
        }
        Ok(())
    }

    /// Companion diagnostics: dark/bright population split per record point.
    pub fn write_diagnostics_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "t, dfs_population, bright_population")?;
        for (i, &t) in self.times.iter().enumerate() {
            writeln!(
                w,
                "{t}, {}, {}",
                self.dfs_population[i],
                self.bright_population(i)
            )?;
        }
        Ok(())
    }
}

const SNAPSHOT_MAGIC: &[u8; 8] = b"XXSNAP01";

/// Serialize one captured density matrix in the documented binary layout.
pub fn write_snapshot<W: Write>(w: &mut W, time: f64, rho: &DensityMatrix) -> Result<()> {
    w.write_all(SNAPSHOT_MAGIC)?;
    w.write_all(&(rho.basis.n as u64).to_le_bytes())?;
    w.write_all(&(rho.basis.sectors.len() as u64).to_le_bytes())?;
    for &k in &rho.basis.sectors {
        w.write_all(&(k as u64).to_le_bytes())?;
    }
    w.write_all(&(rho.dim() as u64).to_le_bytes())?;
    w.write_all(&time.to_le_bytes())?;
    for row in rho.entries.rows() {
        for v in row {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_f64<R: Read>(r: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Read back a snapshot written by [`write_snapshot`], rebuilding its basis.
pub fn read_snapshot<R: Read>(r: &mut R) -> Result<(f64, DensityMatrix)> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Config("not a snapshot file (bad magic)".into()));
    }
    let n = read_u64(r)? as usize;
    let n_sectors = read_u64(r)? as usize;
    let mut sectors = Vec::with_capacity(n_sectors);
    for _ in 0..n_sectors {
        sectors.push(read_u64(r)? as usize);
    }
    let expect: Vec<usize> = (0..n_sectors).collect();
    if sectors != expect || n_sectors == 0 {
        return Err(Error::Config(format!(
            "snapshot sectors {sectors:?} are not contiguous from 0"
        )));
    }
    let dim = read_u64(r)? as usize;
    let time = read_f64(r)?;
    let basis = Arc::new(enumerate_sector(n, n_sectors - 1)?);
    if basis.dim() != dim {
        return Err(Error::Config(format!(
            "snapshot dimension {dim} does not match basis dimension {}",
            basis.dim()
        )));
    }
    let mut entries = Array2::zeros((dim, dim));
    for i in 0..dim {
        for j in 0..dim {
            let re = read_f64(r)?;
            let im = read_f64(r)?;
            entries[(i, j)] = C64::new(re, im);
        }
    }
    Ok((time, DensityMatrix { basis, entries }))
}

/// Hamiltonian and rate-weighted jump operators for a chain under `noise`.
pub fn build_lindblad_ops(
    chain: &ChainSpec,
    noise: &NoiseSpec,
    basis: &Arc<SectorBasis>,
) -> Result<(SparseOperator, Vec<(SparseOperator, f64)>)> {
    noise.validate(chain.n)?;
    let h = build_hamiltonian(chain, basis)?;
    let mut jumps = Vec::new();
    for (a, &site) in noise.sites.iter().enumerate() {
        jumps.push((
            build_jump_operator(site, basis, JumpKind::Lowering)?,
            noise.rates[a],
        ));
        if let Some(tr) = &noise.thermal_rates {
            if tr[a] > 0.0 {
                jumps.push((build_jump_operator(site, basis, JumpKind::Raising)?, tr[a]));
            }
        }
    }
    Ok((h, jumps))
}

/// Literal GKLS right-hand side; the reference implementation used to
/// cross-check the optimized stepper path.
pub fn lindblad_rhs(
    rho: &DensityMatrix,
    h: &SparseOperator,
    jumps: &[(SparseOperator, f64)],
) -> Result<DensityMatrix> {
    if !h.domain_basis.same_span(&rho.basis) {
        return Err(Error::BasisMismatch(
            "Hamiltonian and state bases differ".into(),
        ));
    }
    for (l, _) in jumps {
        if !l.domain_basis.same_span(&rho.basis) {
            return Err(Error::BasisMismatch(
                "jump operator and state bases differ".into(),
            ));
        }
    }
    let d = rho.dim();
    let mut out = DensityMatrix::zeros(&rho.basis);
    let mut a = Array2::zeros((d, d));
    let mut b = Array2::zeros((d, d));
    // -i(H rho - rho H)
    h.mul_dense_left(&rho.entries, &mut a);
    h.mul_dense_right(&rho.entries, &mut b);
    let mi = C64::new(0.0, -1.0);
    for i in 0..d {
        for j in 0..d {
            out.entries[(i, j)] = mi * (a[(i, j)] - b[(i, j)]);
        }
    }
    let mut c = Array2::zeros((d, d));
    for (l, rate) in jumps {
        let g = C64::new(*rate, 0.0);
        // + gamma L rho L^+
        l.mul_dense_left(&rho.entries, &mut a);
        l.mul_dense_right_dagger(&a, &mut b);
        out.entries.scaled_add(g, &b);
        // - gamma/2 {L^+ L, rho}
        let gram = l.gram();
        gram.mul_dense_left(&rho.entries, &mut a);
        gram.mul_dense_right(&rho.entries, &mut c);
        let half = C64::new(-rate * 0.5, 0.0);
        out.entries.scaled_add(half, &a);
        out.entries.scaled_add(half, &c);
    }
    Ok(out)
}

/// Optimized generator evaluation with preallocated scratch.
struct Rhs {
    /// H - (i/2) sum_a gamma_a L_a^+ L_a.
    heff: SparseOperator,
    jumps: Vec<(SparseOperator, f64)>,
    a: Array2<C64>,
    b: Array2<C64>,
    c: Array2<C64>,
}

impl Rhs {
    fn new(h: &SparseOperator, jumps: Vec<(SparseOperator, f64)>) -> Self {
        let basis = Arc::clone(&h.domain_basis);
        let d = basis.dim();
        let mut trips: Vec<(usize, usize, C64)> = h.iter().collect();
        for (l, rate) in &jumps {
            let scale = C64::new(0.0, -rate * 0.5);
            for (r, c, v) in l.gram().iter() {
                trips.push((r, c, scale * v));
            }
        }
        let heff =
            SparseOperator::from_triplets(&basis, &basis, DeltaExcitation::Fixed(0), trips);
        Rhs {
            heff,
            jumps,
            a: Array2::zeros((d, d)),
            b: Array2::zeros((d, d)),
            c: Array2::zeros((d, d)),
        }
    }

    /// out = -i(A - A^+) + sum_a gamma_a L_a x L_a^+ with A = H_eff x.
    /// Valid for Hermitian x, which every Runge-Kutta stage is.
    fn eval(&mut self, x: &Array2<C64>, out: &mut Array2<C64>) {
        let d = x.nrows();
        self.heff.mul_dense_left(x, &mut self.a);
        for i in 0..d {
            for j in 0..d {
                let v = self.a[(i, j)] - self.a[(j, i)].conj();
                out[(i, j)] = C64::new(v.im, -v.re);
            }
        }
        for (l, rate) in &self.jumps {
            l.mul_dense_left(x, &mut self.b);
            l.mul_dense_right_dagger(&self.b, &mut self.c);
            out.scaled_add(C64::new(*rate, 0.0), &self.c);
        }
    }
}

/// Block-diagonal projector onto the dark subspace, used for cheap
/// per-record population tracking.
struct DfsProjector {
    /// (dense index range of the sector, projector block on it)
    blocks: Vec<(std::ops::Range<usize>, Array2<C64>)>,
}

impl DfsProjector {
    fn new(dfs: &DfsBasis) -> Self {
        let mut blocks: Vec<(std::ops::Range<usize>, Array2<C64>)> = Vec::new();
        for state in &dfs.states {
            let range = dfs
                .basis
                .sector_range(state.excitation())
                .expect("dark state sector present");
            let idx = match blocks.iter().position(|(r, _)| *r == range) {
                Some(i) => i,
                None => {
                    let d = range.len();
                    blocks.push((range.clone(), Array2::zeros((d, d))));
                    blocks.len() - 1
                }
            };
            let block = &mut blocks[idx].1;
            let v = &state.vector;
            for i in 0..v.len() {
                for j in 0..v.len() {
                    block[(i, j)] += v[i] * v[j].conj();
                }
            }
        }
        DfsProjector { blocks }
    }

    /// Tr[P rho].
    fn population(&self, rho: &Array2<C64>) -> f64 {
        let mut acc = C64::new(0.0, 0.0);
        for (range, block) in &self.blocks {
            let d = range.len();
            let o = range.start;
            for i in 0..d {
                for j in 0..d {
                    acc += block[(i, j)] * rho[(o + j, o + i)];
                }
            }
        }
        acc.re
    }
}

/// Physicality summary of a density matrix.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct PhysicalityReport {
    pub trace: f64,
    pub hermiticity_residual: f64,
    pub min_eigenvalue: f64,
    pub pass: bool,
}

/// Trace, Hermiticity residual, and smallest eigenvalue of `rho`, judged
/// against `tol` (trace deviation and Hermiticity at most tol, smallest
/// eigenvalue at least -tol).
pub fn physicality_check(rho: &DensityMatrix, tol: f64) -> Result<PhysicalityReport> {
    let trace = rho.trace().re;
    let herm = rho.hermiticity_residual();
    let min_eig = min_eigenvalue(&rho.entries)?;
    Ok(PhysicalityReport {
        trace,
        hermiticity_residual: herm,
        min_eigenvalue: min_eig,
        pass: (trace - 1.0).abs() <= tol && herm <= tol && min_eig >= -tol,
    })
}

fn min_eigenvalue(entries: &Array2<C64>) -> Result<f64> {
    let d = entries.nrows();
    let mut sym = Array2::zeros((d, d));
    for i in 0..d {
        for j in 0..d {
            sym[(i, j)] = 0.5 * (entries[(i, j)] + entries[(j, i)].conj());
        }
    }
    let (evals, _) = sym.eigh(UPLO::Lower)?;
    Ok(evals.iter().cloned().fold(f64::INFINITY, f64::min))
}

fn rk4_step(
    rhs: &mut Rhs,
    rho: &mut Array2<C64>,
    dt: f64,
    k: &mut Array2<C64>,
    tmp: &mut Array2<C64>,
    acc: &mut Array2<C64>,
) {
    let h6 = C64::new(dt / 6.0, 0.0);
    let h3 = C64::new(dt / 3.0, 0.0);
    let h2 = C64::new(dt / 2.0, 0.0);
    let h1 = C64::new(dt, 0.0);
    rhs.eval(rho, k);
    acc.assign(rho);
    acc.scaled_add(h6, k);
    tmp.assign(rho);
    tmp.scaled_add(h2, k);
    rhs.eval(tmp, k);
    acc.scaled_add(h3, k);
    tmp.assign(rho);
    tmp.scaled_add(h2, k);
    rhs.eval(tmp, k);
    acc.scaled_add(h3, k);
    tmp.assign(rho);
    tmp.scaled_add(h1, k);
    rhs.eval(tmp, k);
    acc.scaled_add(h6, k);
    std::mem::swap(rho, acc);
}

/// Dormand-Prince 5(4) stage coefficients (the generator is
/// time-independent, so the c abscissae never enter).
const DP_A: [&[f64]; 6] = [
    &[0.2],
    &[3.0 / 40.0, 9.0 / 40.0],
    &[44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0],
    &[19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0],
    &[9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0],
    &[35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
/// Difference between the 5th- and 4th-order weights.
const DP_E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Rk45State {
    k: Vec<Array2<C64>>,
    ytmp: Array2<C64>,
    ynew: Array2<C64>,
    h: f64,
}

impl Rk45State {
    fn new(d: usize, h0: f64) -> Self {
        Rk45State {
            k: (0..7).map(|_| Array2::zeros((d, d))).collect(),
            ytmp: Array2::zeros((d, d)),
            ynew: Array2::zeros((d, d)),
            h: h0,
        }
    }

    /// Advance `y` from `t` to exactly `t_target`.
    fn advance_to(
        &mut self,
        rhs: &mut Rhs,
        y: &mut Array2<C64>,
        mut t: f64,
        t_target: f64,
        rel_tol: f64,
        abs_tol: f64,
    ) -> Result<()> {
        let mut first = true;
        while t < t_target - 1e-12 * t_target.max(1.0) {
            let h = self.h.min(t_target - t);
            if h < 1e-14 * t_target.max(1.0) {
                return Err(Error::Physicality {
                    t,
                    what: "adaptive step underflow".into(),
                    value: h,
                });
            }
            if first {
                rhs.eval(y, &mut self.k[0]);
                first = false;
            }
            // Stages 2..=7 (k[6] is the FSAL stage at the trial endpoint).
            for s in 0..6 {
                self.ytmp.assign(y);
                for (j, &aij) in DP_A[s].iter().enumerate() {
                    if aij != 0.0 {
                        self.ytmp.scaled_add(C64::new(h * aij, 0.0), &self.k[j]);
                    }
                }
                let (_, tail) = self.k.split_at_mut(s + 1);
                rhs.eval(&self.ytmp, &mut tail[0]);
            }
            // The final stage's argument is the 5th-order solution itself.
            self.ynew.assign(&self.ytmp);
            // Scaled RMS error over entries.
            let d = y.nrows();
            let mut err_acc = 0.0f64;
            for i in 0..d {
                for j in 0..d {
                    let mut e = C64::new(0.0, 0.0);
                    for (s, &es) in DP_E.iter().enumerate() {
                        if es != 0.0 {
                            e += C64::new(es, 0.0) * self.k[s][(i, j)];
                        }
                    }
                    let e = (e * C64::new(h, 0.0)).norm();
                    let sc = abs_tol + rel_tol * y[(i, j)].norm().max(self.ynew[(i, j)].norm());
                    err_acc += (e / sc) * (e / sc);
                }
            }
            let err = (err_acc / (d * d) as f64).sqrt();
            if err <= 1.0 {
                t += h;
                std::mem::swap(y, &mut self.ynew);
                // FSAL: the last stage was evaluated at the accepted state.
                self.k.swap(0, 6);
                let grow = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                self.h = h * grow;
            } else {
                // Rejected: k[0] at the unchanged state stays valid.
                self.h = h * (0.9 * err.powf(-0.2)).clamp(0.2, 1.0);
            }
        }
        Ok(())
    }
}

/// Integrate the master equation from `rho0` and record site sigma_x
/// expectations, trace drift, and dark-subspace population.
///
/// Aborts (never silently continues) when the trace drifts beyond 1e-6 or a
/// sampled eigenvalue check finds min eig < -100 * abs_tol.
pub fn evolve(
    rho0: &DensityMatrix,
    chain: &ChainSpec,
    noise: &NoiseSpec,
    config: &IntegratorConfig,
    observables: &[usize],
) -> Result<Trajectory> {
    chain.validate()?;
    noise.validate(chain.n)?;
    config.validate()?;
    let basis = &rho0.basis;
    if basis.n != chain.n {
        return Err(Error::BasisMismatch(format!(
            "state basis is for {} sites, chain has {}",
            basis.n, chain.n
        )));
    }
    if noise.has_thermal() && basis.kmax() < chain.n {
        return Err(Error::InvalidNoise(
            "raising noise leaves the truncated span; use the full space".into(),
        ));
    }
    for &s in observables {
        if s < 1 || s > chain.n {
            return Err(Error::SiteOutOfRange { site: s, n: chain.n });
        }
    }

    let (h, jumps) = build_lindblad_ops(chain, noise, basis)?;
    let sx_ops: Vec<SparseOperator> = observables
        .iter()
        .map(|&s| build_sigma_x(s, basis))
        .collect::<Result<_>>()?;
    let report = gcd_analysis(noise, chain.n)?;
    let dfs = build_dfs_basis_within(&report, chain, basis)?;
    let projector = DfsProjector::new(&dfs);
    let edge_plan = if chain.n >= 3 {
        Some(EdgeReductionPlan::new(basis)?)
    } else {
        None
    };
    let mut rhs = Rhs::new(&h, jumps);

    let dt = config.dt;
    let total_steps = ((config.t_max / dt).round() as usize).max(1);
    let stride = config.record_stride;
    let n_records = total_steps / stride + 1 + usize::from(total_steps % stride != 0);
    let eig_every = (n_records / EIG_SAMPLES).max(1);
    let mut snapshot_times = config.snapshot_times.clone().unwrap_or_default();
    snapshot_times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut snap_ptr = 0usize;

    let mut times = Vec::with_capacity(n_records);
    let mut sx_flat = Vec::with_capacity(n_records * sx_ops.len());
    let mut drift = Vec::with_capacity(n_records);
    let mut dfs_pop = Vec::with_capacity(n_records);
    let mut edge_pairs = Vec::with_capacity(if edge_plan.is_some() { n_records } else { 0 });
    let mut snapshots = Vec::new();

    let d = basis.dim();
    let mut rho = rho0.entries.clone();
    let mut k = Array2::zeros((d, d));
    let mut tmp = Array2::zeros((d, d));
    let mut acc = Array2::zeros((d, d));
    let mut rk45 = match config.method {
        Method::AdaptiveRk45 => Some(Rk45State::new(d, dt)),
        Method::Rk4 => None,
    };

    let mut record = |t: f64,
                      rho: &Array2<C64>,
                      rec_idx: usize,
                      force_eig: bool,
                      times: &mut Vec<f64>,
                      sx_flat: &mut Vec<f64>,
                      drift: &mut Vec<f64>,
                      dfs_pop: &mut Vec<f64>,
                      edge_pairs: &mut Vec<Array2<C64>>,
                      snapshots: &mut Vec<(f64, DensityMatrix)>|
     -> Result<()> {
        times.push(t);
        for op in &sx_ops {
            sx_flat.push(op.expectation_entries(rho).re);
        }
        let tr = rho.diag().sum().re - 1.0;
        drift.push(tr);
        dfs_pop.push(projector.population(rho));
        if let Some(plan) = &edge_plan {
            edge_pairs.push(plan.reduce(rho));
        }
        if tr.abs() > TRACE_ABORT_TOL {
            return Err(Error::Physicality {
                t,
                what: "trace drift".into(),
                value: tr,
            });
        }
        if force_eig || rec_idx % eig_every == 0 {
            let min_eig = min_eigenvalue(rho)?;
            if min_eig < -100.0 * config.abs_tol {
                return Err(Error::Physicality {
                    t,
                    what: "negative eigenvalue".into(),
                    value: min_eig,
                });
            }
        }
        while snap_ptr < snapshot_times.len() && t + 1e-9 >= snapshot_times[snap_ptr] {
            snapshots.push((
                t,
                DensityMatrix {
                    basis: Arc::clone(basis),
                    entries: rho.clone(),
                },
            ));
            snap_ptr += 1;
        }
        Ok(())
    };

    let mut rec_idx = 0usize;
    record(
        0.0, &rho, rec_idx, true, &mut times, &mut sx_flat, &mut drift, &mut dfs_pop,
        &mut edge_pairs, &mut snapshots,
    )?;
    rec_idx += 1;

    match config.method {
        Method::Rk4 => {
            for step in 1..=total_steps {
                rk4_step(&mut rhs, &mut rho, dt, &mut k, &mut tmp, &mut acc);
                if step % stride == 0 || step == total_steps {
                    let t = step as f64 * dt;
                    record(
                        t, &rho, rec_idx, step == total_steps, &mut times, &mut sx_flat,
                        &mut drift, &mut dfs_pop, &mut edge_pairs, &mut snapshots,
                    )?;
                    rec_idx += 1;
                }
            }
        }
        Method::AdaptiveRk45 => {
            let st = rk45.as_mut().unwrap();
            let mut step = 0usize;
            let mut t_prev = 0.0f64;
            while step < total_steps {
                step = (step + stride).min(total_steps);
                let t = step as f64 * dt;
                st.advance_to(&mut rhs, &mut rho, t_prev, t, config.rel_tol, config.abs_tol)?;
                t_prev = t;
                record(
                    t, &rho, rec_idx, step == total_steps, &mut times, &mut sx_flat,
                    &mut drift, &mut dfs_pop, &mut edge_pairs, &mut snapshots,
                )?;
                rec_idx += 1;
            }
        }
    }

    let n_rec = times.len();
    let sigma_x = Array2::from_shape_vec((n_rec, sx_ops.len()), sx_flat)
        .expect("row-major record layout");
    Ok(Trajectory {
        times,
        sites: observables.to_vec(),
        sigma_x,
        trace_drift: drift,
        dfs_population: dfs_pop,
        edge_pairs,
        snapshots,
    })
}
