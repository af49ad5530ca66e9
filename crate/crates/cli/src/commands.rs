//! Command implementations: each computes a result structure, and a
//! matching writer lays artifacts into an output directory. File writers
//! are deterministic (no timestamps), so identical configs produce
//! byte-identical outputs.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde_json::json;

use xxchain::dfs::{build_dfs_basis, build_dfs_basis_within, gcd_analysis, DfsReport};
use xxchain::dynamics::{evolve, Trajectory, BRIGHT_TOL};
use xxchain::error::{Error, Result};
use xxchain::hilbert::{build_hamiltonian, enumerate_sector, DensityMatrix, SectorBasis};
use xxchain::observables::{concurrence, fft_spectrum, pearson, PearsonSeries, SpectrumPeaks};
use xxchain::predictor::{
    asymptotic_concurrence, asymptotic_state, classify_synchronization, closed_form_series,
    liouvillian_peripheral_spectrum, transition_table, AsymptoticMode, PeripheralSpectrum,
    Source, SyncVerdict, TransitionTable,
};

use crate::config::ExperimentConfig;

/// Bright-population threshold below which a snapshot is considered
/// converged for closed-form comparison. Tighter than the reporting
/// threshold so projection error stays under the comparison tolerance.
pub const COMPARE_BRIGHT_TOL: f64 = 1e-9;

/// Time span after the transient cutoff over which residuals are measured.
pub const COMPARE_WINDOW: f64 = 500.0;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| Error::Config(format!("serialize {}: {e}", path.display())))?;
    writeln!(w)?;
    Ok(())
}

/// Dark-space census plus a numerical darkness check of every enumerated
/// state.
pub struct DfsOutput {
    pub report: DfsReport,
    pub dark_dim: usize,
    pub max_jump_residual: f64,
    pub max_energy_residual: f64,
    pub pass: bool,
}

pub fn run_dfs(config: &ExperimentConfig) -> Result<DfsOutput> {
    let report = gcd_analysis(&config.noise, config.chain.n)?;
    let basis = Arc::new(enumerate_sector(config.chain.n, report.r)?);
    let dfs = build_dfs_basis(&report, &config.chain, &basis)?;
    let h = build_hamiltonian(&config.chain, &basis)?;
    let darkness = xxchain::dfs::verify_darkness(&dfs, &config.noise, &h);
    Ok(DfsOutput {
        report,
        dark_dim: dfs.len(),
        max_jump_residual: darkness.max_jump_residual,
        max_energy_residual: darkness.max_energy_residual,
        pass: darkness.pass,
    })
}

pub fn dfs_json(out: &DfsOutput) -> serde_json::Value {
    json!({
        "report": out.report,
        "dark_dim": out.dark_dim,
        "darkness": {
            "max_jump_residual": out.max_jump_residual,
            "max_energy_residual": out.max_energy_residual,
            "pass": out.pass,
        },
    })
}

pub fn write_dfs(out: &DfsOutput, dir: &Path) -> Result<PathBuf> {
    create_dir(dir)?;
    let path = dir.join("dfs.json");
    write_json(&path, &dfs_json(out))?;
    Ok(path)
}

/// An integrated run plus everything needed to analyze it.
pub struct SimulationOutput {
    pub basis: Arc<SectorBasis>,
    pub rho0: DensityMatrix,
    pub trajectory: Trajectory,
}

pub fn run_simulate(config: &ExperimentConfig) -> Result<SimulationOutput> {
    if config.analyses.concurrence && config.chain.n < 3 {
        return Err(Error::Config(
            "concurrence analysis needs a chain of at least 3 sites".into(),
        ));
    }
    let basis = config.basis()?;
    let rho0 = config.initial_density_matrix(&basis)?;
    let sites = vec![1, config.chain.n];
    let trajectory = evolve(&rho0, &config.chain, &config.noise, &config.integrator, &sites)?;
    Ok(SimulationOutput {
        basis,
        rho0,
        trajectory,
    })
}

pub fn pearson_series(config: &ExperimentConfig, sim: &SimulationOutput) -> Result<PearsonSeries> {
    let traj = &sim.trajectory;
    let x = traj.site_series(1).expect("site 1 recorded");
    let y = traj.site_series(config.chain.n).expect("site N recorded");
    pearson(
        &traj.times,
        x.as_slice().unwrap(),
        y.as_slice().unwrap(),
        config.analyses.pearson_window,
    )
}

/// FFT start time: the configured value, else the operational transient
/// cutoff, else the start of the run.
pub fn spectrum_start(config: &ExperimentConfig, sim: &SimulationOutput) -> f64 {
    config
        .analyses
        .spectrum_t_start
        .or_else(|| sim.trajectory.settling_time(BRIGHT_TOL))
        .unwrap_or(0.0)
}

pub fn spectrum_peaks(config: &ExperimentConfig, sim: &SimulationOutput) -> Result<SpectrumPeaks> {
    let traj = &sim.trajectory;
    let x = traj.site_series(1).expect("site 1 recorded");
    fft_spectrum(&traj.times, x.as_slice().unwrap(), spectrum_start(config, sim))
}

pub fn concurrence_series(sim: &SimulationOutput) -> Result<Vec<f64>> {
    let traj = &sim.trajectory;
    (0..traj.len())
        .map(|i| {
            let pair = traj
                .edge_state(i)
                .ok_or_else(|| Error::Config("edge pairs were not recorded".into()))?;
            concurrence(&pair)
        })
        .collect()
}

pub fn write_simulation(
    config: &ExperimentConfig,
    sim: &SimulationOutput,
    dir: &Path,
    seed: Option<u64>,
) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();
    let traj = &sim.trajectory;

    let path = dir.join("trajectory.csv");
    traj.write_csv(&mut BufWriter::new(File::create(&path)?))?;
    written.push(path);

    let path = dir.join("diagnostics.csv");
    traj.write_diagnostics_csv(&mut BufWriter::new(File::create(&path)?))?;
    written.push(path);

    if config.analyses.pearson {
        let series = pearson_series(config, sim)?;
        let path = dir.join("pearson.csv");
        series.write_csv(&mut BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    if config.analyses.spectrum {
        let peaks = spectrum_peaks(config, sim)?;
        let path = dir.join("spectrum.csv");
        peaks.write_csv(&mut BufWriter::new(File::create(&path)?))?;
        written.push(path);
    }
    if config.analyses.concurrence {
        let series = concurrence_series(sim)?;
        let path = dir.join("concurrence.csv");
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "t, concurrence")?;
        for (t, c) in traj.times.iter().zip(&series) {
            writeln!(w, "{t}, {c}")?;
        }
        written.push(path);
    }

    let path = dir.join("run.json");
    write_json(
        &path,
        &json!({
            "config": config,
            "seed": seed,
            "seed_note": "reserved; the dynamics is deterministic",
            "records": traj.len(),
            "transient_cutoff": traj.settling_time(BRIGHT_TOL),
            "max_trace_drift": traj
                .trace_drift
                .iter()
                .fold(0.0f64, |a, &d| a.max(d.abs())),
        }),
    )?;
    written.push(path);
    Ok(written)
}

/// Closed-form prediction: verdict over the full dark census, and the
/// asymptotic edge series for the configured initial state.
pub struct PredictOutput {
    pub verdict: SyncVerdict,
    pub table: TransitionTable,
    pub times: Vec<f64>,
    pub series_site1: Vec<f64>,
    pub series_siten: Vec<f64>,
    pub asymptotic_concurrence: Option<f64>,
}

pub fn run_predict(config: &ExperimentConfig) -> Result<PredictOutput> {
    let n = config.chain.n;
    let report = gcd_analysis(&config.noise, n)?;

    // Verdict and transition table over the complete census.
    let census_basis = Arc::new(enumerate_sector(n, report.r)?);
    let census = build_dfs_basis(&report, &config.chain, &census_basis)?;
    let table = transition_table(&census, &[1, n])?;
    let verdict = classify_synchronization(&report, &table)?;

    // Series for the configured initial state, within its own truncation.
    let basis = config.basis()?;
    let rho0 = config.initial_density_matrix(&basis)?;
    let dfs = build_dfs_basis_within(&report, &config.chain, &basis)?;
    let state = asymptotic_state(AsymptoticMode::Analytic(&rho0), &dfs)?;
    let sim_table = transition_table(&dfs, &[1, n])?;

    let step = config.integrator.dt * config.integrator.record_stride as f64;
    let count = (config.integrator.t_max / step).floor() as usize + 1;
    let times: Vec<f64> = (0..count).map(|i| i as f64 * step).collect();
    let series_site1 = closed_form_series(&state, &sim_table, 1, &times)?;
    let series_siten = closed_form_series(&state, &sim_table, n, &times)?;

    let asymptotic_concurrence = if report.generic_sync && n >= 3 {
        Some(asymptotic_concurrence(&state, &report)?)
    } else {
        None
    };
    Ok(PredictOutput {
        verdict,
        table,
        times,
        series_site1,
        series_siten,
        asymptotic_concurrence,
    })
}

pub fn write_predict(out: &PredictOutput, n: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();

    let path = dir.join("verdict.json");
    write_json(
        &path,
        &json!({
            "verdict": out.verdict,
            "asymptotic_concurrence": out.asymptotic_concurrence,
        }),
    )?;
    written.push(path);

    let path = dir.join("transitions.json");
    write_json(&path, &serde_json::to_value(&out.table).unwrap())?;
    written.push(path);

    let path = dir.join("predicted.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "t, sx_1, sx_{n}")?;
    for ((t, a), b) in out.times.iter().zip(&out.series_site1).zip(&out.series_siten) {
        writeln!(w, "{t}, {a}, {b}")?;
    }
    written.push(path);
    Ok(written)
}

/// Simulation-vs-closed-form residuals past the transient cutoff.
pub struct CompareOutput {
    pub t_star: f64,
    pub window_end: f64,
    pub source: Source,
    pub times: Vec<f64>,
    pub sim_site1: Vec<f64>,
    pub pred_site1: Vec<f64>,
    pub sim_siten: Vec<f64>,
    pub pred_siten: Vec<f64>,
    pub max_residual_site1: f64,
    pub max_residual_siten: f64,
}

impl CompareOutput {
    pub fn max_residual(&self) -> f64 {
        self.max_residual_site1.max(self.max_residual_siten)
    }
}

pub fn run_compare(config: &ExperimentConfig, sim: &SimulationOutput) -> Result<CompareOutput> {
    let n = config.chain.n;
    let traj = &sim.trajectory;
    let t_star = traj.settling_time(COMPARE_BRIGHT_TOL).ok_or_else(|| {
        Error::Config(format!(
            "bright population never fell below {COMPARE_BRIGHT_TOL:e}; extend t_max"
        ))
    })?;

    let report = gcd_analysis(&config.noise, n)?;
    let dfs = build_dfs_basis_within(&report, &config.chain, &sim.rho0.basis)?;
    let table = transition_table(&dfs, &[1, n])?;

    // The analytic projection applies when all bright population decays
    // into the vacuum; otherwise project the converged snapshot instead.
    let state = match asymptotic_state(AsymptoticMode::Analytic(&sim.rho0), &dfs) {
        Ok(s) => s,
        Err(Error::InvalidState(_)) => {
            let mut second = config.integrator.clone();
            second.t_max = t_star;
            second.snapshot_times = Some(vec![t_star]);
            let pass2 = evolve(&sim.rho0, &config.chain, &config.noise, &second, &[1, n])?;
            let (t_snap, snapshot) = &pass2.snapshots[0];
            asymptotic_state(
                AsymptoticMode::Empirical {
                    snapshot,
                    t_star: *t_snap,
                },
                &dfs,
            )?
        }
        Err(e) => return Err(e),
    };

    let window_end = (t_star + COMPARE_WINDOW).min(config.integrator.t_max);
    let lo = traj.times.partition_point(|&t| t < t_star - 1e-9);
    let hi = traj.times.partition_point(|&t| t <= window_end + 1e-9);
    if hi <= lo {
        return Err(Error::Config(
            "comparison window is empty; extend t_max past the transient".into(),
        ));
    }
    let times: Vec<f64> = traj.times[lo..hi].to_vec();
    let sim1 = traj.site_series(1).expect("site 1 recorded");
    let simn = traj.site_series(n).expect("site N recorded");
    let sim_site1: Vec<f64> = sim1.as_slice().unwrap()[lo..hi].to_vec();
    let sim_siten: Vec<f64> = simn.as_slice().unwrap()[lo..hi].to_vec();
    let pred_site1 = closed_form_series(&state, &table, 1, &times)?;
    let pred_siten = closed_form_series(&state, &table, n, &times)?;

    let max_abs = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .fold(0.0f64, |acc, (x, y)| acc.max((x - y).abs()))
    };
    let max_residual_site1 = max_abs(&sim_site1, &pred_site1);
    let max_residual_siten = max_abs(&sim_siten, &pred_siten);
    Ok(CompareOutput {
        t_star,
        window_end,
        source: state.source,
        times,
        sim_site1,
        pred_site1,
        sim_siten,
        pred_siten,
        max_residual_site1,
        max_residual_siten,
    })
}

pub fn write_compare(out: &CompareOutput, n: usize, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();

    let path = dir.join("compare.json");
    write_json(
        &path,
        &json!({
            "t_star": out.t_star,
            "window_end": out.window_end,
            "source": out.source,
            "max_residual_site1": out.max_residual_site1,
            "max_residual_siten": out.max_residual_siten,
            "max_residual": out.max_residual(),
        }),
    )?;
    written.push(path);

    let path = dir.join("residuals.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "t, sim_sx_1, pred_sx_1, sim_sx_{n}, pred_sx_{n}")?;
    for i in 0..out.times.len() {
        writeln!(
            w,
            "{}, {}, {}, {}, {}",
            out.times[i], out.sim_site1[i], out.pred_site1[i], out.sim_siten[i], out.pred_siten[i]
        )?;
    }
    written.push(path);
    Ok(written)
}

/// Dense-Liouvillian kernel census for small chains.
pub struct OracleOutput {
    pub report: DfsReport,
    pub spectrum: PeripheralSpectrum,
    /// (2^r)^2 from the gcd census; meaningful for pure lowering noise.
    pub expected_count: Option<u64>,
}

pub fn run_oracle(config: &ExperimentConfig) -> Result<OracleOutput> {
    let report = gcd_analysis(&config.noise, config.chain.n)?;
    let spectrum = liouvillian_peripheral_spectrum(&config.chain, &config.noise)?;
    let expected_count = if config.noise.has_thermal() {
        None
    } else {
        Some(report.total_dim * report.total_dim)
    };
    Ok(OracleOutput {
        report,
        spectrum,
        expected_count,
    })
}

pub fn write_oracle(out: &OracleOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let mut written = Vec::new();

    let path = dir.join("peripheral.csv");
    out.spectrum
        .write_csv(&mut BufWriter::new(File::create(&path)?))?;
    written.push(path.clone());

    let path = dir.join("oracle.json");
    write_json(
        &path,
        &json!({
            "report": out.report,
            "peripheral_count": out.spectrum.count,
            "expected_count": out.expected_count,
        }),
    )?;
    written.push(path);
    Ok(written)
}
