//! Experiment configuration: a JSON document with a fixed schema.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::chain::{validate_generator, GeneratorMatrix, ProbVector};
use crate::error::{Error, Result};
use crate::estimate::InfConvSettings;
use crate::ratefun::{FluxMatrix, PairMeasure};
use crate::simulate::LawMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    /// Generator matrix, row-major, diagonal included.
    pub rates: Vec<Vec<f64>>,
}

/// One evaluation point of the `rates` subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatePoint {
    pub rho: Vec<f64>,
    /// Flux matrix for `I_BFG`.
    #[serde(default)]
    pub j: Option<Vec<Vec<f64>>>,
    /// Pair measure for the pair-empirical rate at `P(T0)`.
    #[serde(default)]
    pub theta: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RatesTask {
    pub points: Vec<RatePoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfConvTask {
    pub rho: Vec<f64>,
    /// Required in flux mode.
    #[serde(default)]
    pub j: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractTask {
    pub rho: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McVerifyTask {
    pub rho: Vec<f64>,
    pub epsilon: f64,
    pub n_grid: Vec<usize>,
    pub paths_per_n: u64,
    #[serde(default = "default_min_hits")]
    pub min_hits: u64,
    /// Lattice resolution of the inf-over-ball reference.
    #[serde(default = "default_resolution")]
    pub reference_resolution: usize,
}

fn default_min_hits() -> u64 {
    30
}

fn default_resolution() -> usize {
    2000
}

fn default_samples() -> usize {
    100_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Free-form experiment id copied into every output.
    #[serde(default)]
    pub name: String,
    pub chain: ChainConfig,
    pub t0: f64,
    #[serde(default = "LawMode::default")]
    pub mode: LawMode,
    /// Master seed; there is no wall-clock fallback.
    pub seed: u64,
    /// Bridge samples per endpoint pair.
    #[serde(default = "default_samples")]
    pub samples_per_pair: usize,
    #[serde(default)]
    pub solver: InfConvSettings,
    #[serde(default)]
    pub rates: Option<RatesTask>,
    #[serde(default)]
    pub infconv: Option<InfConvTask>,
    #[serde(default)]
    pub contract: Option<ContractTask>,
    #[serde(default)]
    pub mc_verify: Option<McVerifyTask>,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let q = self.generator()?;
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::Config(format!("t0 must be positive, got {}", self.t0)));
        }
        if self.samples_per_pair == 0 {
            return Err(Error::Config("samples_per_pair must be positive".into()));
        }
        let n = q.n_states();
        let check_len = |v: &[f64], what: &str| {
            if v.len() == n {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} has {} entries, chain has {n} states", v.len())))
            }
        };
        if let Some(t) = &self.rates {
            t.points.iter().try_for_each(|p| check_len(&p.rho, "rates.rho"))?;
        }
        if let Some(t) = &self.infconv {
            check_len(&t.rho, "infconv.rho")?;
            if self.mode == LawMode::Flux && t.j.is_none() {
                return Err(Error::Config("infconv.j is required in flux mode".into()));
            }
        }
        if let Some(t) = &self.contract {
            t.rho.iter().try_for_each(|r| check_len(r, "contract.rho"))?;
        }
        if let Some(t) = &self.mc_verify {
            check_len(&t.rho, "mc_verify.rho")?;
            if !(t.epsilon > 0.0) || t.n_grid.is_empty() || t.paths_per_n == 0 {
                return Err(Error::Config("mc_verify needs epsilon > 0, a non-empty n_grid and paths_per_n > 0".into()));
            }
        }
        Ok(())
    }

    pub fn generator(&self) -> Result<GeneratorMatrix> {
        validate_generator(&self.chain.rates)
    }

    /// SHA-256 of the canonical serialization (after seed overrides).
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(bytes))
    }

    /// Short hash of the generator alone, naming the sample-cache directory.
    pub fn chain_hash(&self) -> String {
        let bytes = serde_json::to_vec(&self.chain).expect("chain serializes");
        hex(&Sha256::digest(bytes))[..16].to_string()
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn prob_vector(v: &[f64]) -> Result<ProbVector> {
    ProbVector::new(v.to_vec())
}

pub(crate) fn flux_matrix(rows: &[Vec<f64>]) -> Result<FluxMatrix> {
    FluxMatrix::new(rows)
}

pub(crate) fn pair_measure(rows: &[Vec<f64>]) -> Result<PairMeasure> {
    PairMeasure::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"chain": {"rates": [[-1, 1], [1, -1]]}, "t0": 1.0, "seed": 3}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        assert_eq!(c.mode, LawMode::Occupation);
        assert_eq!(c.samples_per_pair, 100_000);
        assert_eq!(c.solver, InfConvSettings::default());
    }

    #[test]
    fn seed_is_mandatory() {
        let e = ExperimentConfig::from_json(r#"{"chain": {"rates": [[-1, 1], [1, -1]]}, "t0": 1.0}"#).unwrap_err();
        assert!(matches!(e, Error::Config(m) if m.contains("seed")));
    }

    #[test]
    fn invalid_chain_rejected_on_load() {
        let e = ExperimentConfig::from_json(r#"{"chain": {"rates": [[-1, 2], [1, -1]]}, "t0": 1.0, "seed": 1}"#).unwrap_err();
        assert!(matches!(e, Error::NonZeroRowSum { .. }));
    }

    #[test]
    fn hash_tracks_seed_override() {
        let c = ExperimentConfig::from_json(MINIMAL).unwrap();
        let h = c.hash();
        assert_eq!(h.len(), 64);
        assert_eq!(c.clone().with_seed(None).hash(), h);
        assert_ne!(c.clone().with_seed(Some(4)).hash(), h);
        assert_eq!(c.chain_hash(), c.with_seed(Some(4)).chain_hash());
    }
}
