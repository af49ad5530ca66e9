//! JSON experiment configuration: schema-versioned, strictly validated
//! before any computation, with named single-qubit initial states.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use xxchain::dfs::NoiseSpec;
use xxchain::dynamics::IntegratorConfig;
use xxchain::error::{Error, Result};
use xxchain::hilbert::{
    embed_product_state, enumerate_sector, ChainSpec, DensityMatrix, SectorBasis,
};

/// Config files must declare exactly this schema version.
pub const SCHEMA_VERSION: u32 = 1;

/// Default Pearson sliding-window length (time units). Long enough to cover
/// several periods of every dark-transition frequency at the paper-scale
/// parameters, so windowed correlations measure phase locking, not the
/// trivial +-1 of two locally linear arcs.
pub const DEFAULT_PEARSON_WINDOW: f64 = 60.0;

/// One qubit's initial state: a named axis state, or explicit
/// (ground, excited) amplitudes given as `[re, im]` pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QubitState {
    Named(NamedState),
    Amplitudes([[f64; 2]; 2]),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NamedState {
    Zero,
    One,
    Plus,
    Minus,
}

impl QubitState {
    /// (ground, excited) amplitudes.
    pub fn amplitudes(&self) -> [C64; 2] {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        match self {
            QubitState::Named(NamedState::Zero) => [C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
            QubitState::Named(NamedState::One) => [C64::new(0.0, 0.0), C64::new(1.0, 0.0)],
            QubitState::Named(NamedState::Plus) => [C64::new(h, 0.0), C64::new(h, 0.0)],
            QubitState::Named(NamedState::Minus) => [C64::new(h, 0.0), C64::new(-h, 0.0)],
            QubitState::Amplitudes(a) => [C64::new(a[0][0], a[0][1]), C64::new(a[1][0], a[1][1])],
        }
    }

    /// True when the excited component vanishes exactly.
    pub fn is_ground(&self) -> bool {
        self.amplitudes()[1].norm_sqr() == 0.0
    }
}

/// Which analyses run after integration, plus their knobs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Analyses {
    pub pearson: bool,
    pub spectrum: bool,
    pub concurrence: bool,
    pub predict: bool,
    pub compare: bool,
    /// Sliding-window length for the Pearson coefficient (time units).
    pub pearson_window: f64,
    /// FFT analysis start; defaults to the operational transient cutoff.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub spectrum_t_start: Option<f64>,
}

impl Default for Analyses {
    fn default() -> Self {
        Self {
            pearson: false,
            spectrum: false,
            concurrence: false,
            predict: false,
            compare: false,
            pearson_window: DEFAULT_PEARSON_WINDOW,
            spectrum_t_start: None,
        }
    }
}

/// A full experiment: chain, noise, initial product state, integration
/// grid, and requested analyses. Unknown keys are rejected at every level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub chain: ChainSpec,
    pub noise: NoiseSpec,
    /// One entry per site, site 1 first.
    pub initial_state: Vec<QubitState>,
    pub integrator: IntegratorConfig,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("config parse: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema version, chain, noise, state list, and integrator checks; runs
    /// before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema version {} not supported (expected {SCHEMA_VERSION})",
                self.schema
            )));
        }
        self.chain.validate()?;
        self.noise.validate(self.chain.n)?;
        self.integrator.validate()?;
        if self.initial_state.len() != self.chain.n {
            return Err(Error::Config(format!(
                "initial_state lists {} qubits for a chain of {}",
                self.initial_state.len(),
                self.chain.n
            )));
        }
        for (j, q) in self.initial_state.iter().enumerate() {
            let a = q.amplitudes();
            let norm = a[0].norm_sqr() + a[1].norm_sqr();
            if (norm - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!(
                    "initial_state[{j}] is not normalized (norm^2 = {norm})"
                )));
            }
        }
        if !(self.analyses.pearson_window > 0.0 && self.analyses.pearson_window.is_finite()) {
            return Err(Error::Config(format!(
                "pearson_window must be positive, got {}",
                self.analyses.pearson_window
            )));
        }
        Ok(())
    }

    /// Number of qubits with any excited amplitude; the excitation content
    /// of the product state never exceeds it, so it fixes the sector cut.
    pub fn excitation_support(&self) -> usize {
        self.initial_state.iter().filter(|q| !q.is_ground()).count()
    }

    /// Basis truncated at the excitation support of the initial state.
    pub fn basis(&self) -> Result<Arc<SectorBasis>> {
        Ok(Arc::new(enumerate_sector(
            self.chain.n,
            self.excitation_support(),
        )?))
    }

    pub fn initial_density_matrix(&self, basis: &Arc<SectorBasis>) -> Result<DensityMatrix> {
        let qubits: Vec<[C64; 2]> = self.initial_state.iter().map(|q| q.amplitudes()).collect();
        embed_product_state(&qubits, basis)
    }

    /// Point a sweep variant at its parameter value. Supported keys:
    /// `gamma` (every lowering rate), `omega`, `j`, `dt`, `t_max`,
    /// `pearson_window`.
    pub fn apply_parameter(&mut self, key: &str, value: f64) -> Result<()> {
        match key {
            "gamma" => {
                if !(value > 0.0) {
                    return Err(Error::Config(format!("gamma must be positive, got {value}")));
                }
                for r in self.noise.rates.iter_mut() {
                    *r = value;
                }
            }
            "omega" => self.chain.omega = value,
            "j" => self.chain.j = value,
            "dt" => self.integrator.dt = value,
            "t_max" => self.integrator.t_max = value,
            "pearson_window" => self.analyses.pearson_window = value,
            other => {
                return Err(Error::Config(format!(
                    "unknown sweep parameter {other:?} (expected gamma, omega, j, dt, t_max, or pearson_window)"
                )))
            }
        }
        self.validate()
    }
}

/// Locate a named preset file. Search order: `XXCHAIN_PRESETS` env dir,
/// `presets/` under the current directory, then the copies shipped in the
/// source tree.
pub fn preset_path(name: &str) -> Result<PathBuf> {
    if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(Error::Config(format!("invalid preset name {name:?}")));
    }
    let file = format!("{name}.json");
    let mut candidates = Vec::new();
    if let Ok(dir) = std::env::var("XXCHAIN_PRESETS") {
        candidates.push(PathBuf::from(dir).join(&file));
    }
    candidates.push(PathBuf::from("presets").join(&file));
    candidates.push(
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("presets")
            .join(&file),
    );
    for c in &candidates {
        if c.is_file() {
            return Ok(c.clone());
        }
    }
    Err(Error::Config(format!(
        "preset {name:?} not found (searched {})",
        candidates
            .iter()
            .map(|c| c.display().to_string())
            .collect::<Vec<_>>()
            .join(", ")
    )))
}
