//! TOML run configuration. Every section is optional; unknown keys are errors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DataConfig;
use crate::detect_eval::{DetectionConfig, EvalConfig};
use crate::edges::CannyConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::network::{DataTerm, HyperParams, NetworkConfig, WeightedMseConfig};
use crate::shapes::{CwSsimConfig, SsimConfig};
use crate::synth::SynthConfig;

/// Training objective, from the plain data term up to shape learning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Squared error only.
    Np,
    /// Squared error split into false-positive and false-negative regions.
    Wnp,
    /// Squared error plus a fixed shape prior.
    Sp,
    /// Squared error, learnable shape prior and the SSIM anchor.
    Tsp,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Np => "np",
            Mode::Wnp => "wnp",
            Mode::Sp => "sp",
            Mode::Tsp => "tsp",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub pool: usize,
    pub t_p: f64,
    pub eta: f64,
    pub weight_decay: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let h = HyperParams::default();
        Self {
            pool: h.pool,
            t_p: h.t_p,
            eta: h.eta,
            weight_decay: h.weight_decay,
            lr_decay: h.lr_decay,
            decay_every: h.decay_every,
            epochs: h.epochs,
            batch_size: h.batch_size,
        }
    }
}

/// Regularization weights applied by each training mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModeSection {
    pub sp_lambda: f64,
    pub tsp_lambda: f64,
    pub tsp_gamma: f64,
    pub w_fp: f64,
    pub w_fn: f64,
}

impl Default for ModeSection {
    fn default() -> Self {
        Self {
            sp_lambda: 5e-7,
            tsp_lambda: 1e-10,
            tsp_gamma: 2.0,
            w_fp: 0.7,
            w_fn: 0.3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneSection {
    pub threshold: f64,
}

impl Default for PruneSection {
    fn default() -> Self {
        Self { threshold: 0.8 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrSection {
    pub step: f64,
}

impl Default for PrSection {
    fn default() -> Self {
        Self { step: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds network initialization and minibatch order.
    pub seed: u64,
    pub canny: CannyConfig,
    pub data: DataConfig,
    /// Absent means the default architecture; `detect` only checks it when given.
    pub network: Option<NetworkConfig>,
    pub train: TrainSection,
    pub modes: ModeSection,
    pub ssim: SsimConfig,
    pub cw_ssim: CwSsimConfig,
    pub prune: PruneSection,
    pub detection: DetectionConfig,
    pub eval: EvalConfig,
    pub pr: PrSection,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))?;
        cfg.validate().map_err(|e| Error::parse(path, e.to_string()))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::invalid(e.to_string()))
    }

    pub fn network(&self) -> NetworkConfig {
        self.network.unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        self.canny.validate()?;
        self.data.validate()?;
        self.network().validate()?;
        self.ssim.validate()?;
        self.cw_ssim.validate()?;
        self.detection.validate()?;
        self.eval.validate()?;
        self.synth.validate()?;
        if !(0.0..=1.0).contains(&self.prune.threshold) {
            return Err(Error::invalid("prune threshold must lie in [0, 1]"));
        }
        if !(self.pr.step > 0.0 && self.pr.step <= 1.0) {
            return Err(Error::invalid("pr step must lie in (0, 1]"));
        }
        for mode in [Mode::Np, Mode::Wnp, Mode::Sp, Mode::Tsp] {
            self.hyper(mode).validate()?;
        }
        Ok(())
    }

    /// Hyperparameters for a training mode.
    pub fn hyper(&self, mode: Mode) -> HyperParams {
        let t = &self.train;
        let (lambda, gamma) = match mode {
            Mode::Np | Mode::Wnp => (0.0, 0.0),
            Mode::Sp => (self.modes.sp_lambda, 0.0),
            Mode::Tsp => (self.modes.tsp_lambda, self.modes.tsp_gamma),
        };
        HyperParams {
            lambda,
            gamma,
            pool: t.pool,
            t_p: t.t_p,
            eta: t.eta,
            weight_decay: t.weight_decay,
            lr_decay: t.lr_decay,
            decay_every: t.decay_every,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: self.seed,
            data_term: if mode == Mode::Wnp {
                DataTerm::Weighted
            } else {
                DataTerm::Mse
            },
            weighted: WeightedMseConfig {
                w_fp: self.modes.w_fp,
                w_fn: self.modes.w_fn,
                detection: self.detection,
                eval: self.eval,
            },
            ssim: self.ssim,
        }
    }
}
