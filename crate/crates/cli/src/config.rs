use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use topicmine::corpus::DEFAULT_MIN_COUNT;
use topicmine::encoder::{
    EncoderConfig, MaskStrategy, TrainConfig, DEFAULT_BATCH_SIZE, DEFAULT_LEARNING_RATE, DEFAULT_MASK_RATE,
    DEFAULT_STEPS,
};
use topicmine::evalmetrics::{CoherenceWindows, WindowMode, DEFAULT_SLIDING_WIDTH, DEFAULT_TOP_T};
use topicmine::lda::{
    HeldOutEstimator, LdaConfig, SweepSettings, DEFAULT_BETA, DEFAULT_BURN_IN, DEFAULT_FOLD_IN_ITERATIONS,
    DEFAULT_ITERATIONS, DEFAULT_K_MAX, DEFAULT_K_MIN,
};
use topicmine::projection::TsneSettings;
use topicmine::Error;

use crate::CliError;

/// Which token stream the topic model consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LdaTokens {
    #[default]
    Words,
    /// Sense ids from clustering contextual token vectors.
    Senses,
}

/// Every knob of a run. Serialized verbatim into the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out: PathBuf,
    pub seed: u64,

    pub input: Option<PathBuf>,
    pub stopwords: Option<PathBuf>,
    pub min_count: usize,

    pub dim: usize,
    pub heads: usize,
    pub layers: usize,
    pub max_len: usize,
    pub mask_rate: f64,
    pub strategy: MaskStrategy,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub from_file: Option<PathBuf>,
    pub from_file_tokens: Option<PathBuf>,
    pub senses: Option<usize>,
    pub lda_tokens: LdaTokens,

    pub k: Option<usize>,
    pub kmin: usize,
    pub kmax: usize,
    pub alpha: Option<f64>,
    pub beta: f64,
    pub iters: usize,
    pub burn_in: usize,
    pub average_samples: bool,
    pub split_ratio: f64,
    pub fold_in_iters: usize,
    pub held_out_estimator: HeldOutEstimator,
    pub jobs: usize,

    pub top_t: usize,
    pub u_mass_window: String,
    pub c_v_window: String,

    pub lambda: f64,
    pub tsne_perplexity: f64,
    pub tsne_iters: usize,
    pub tsne_learning_rate: f64,
    pub svg: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        let enc = EncoderConfig::default();
        let sweep = SweepSettings::default();
        let tsne = TsneSettings::default();
        RunConfig {
            out: PathBuf::from("run"),
            seed: 0,
            input: None,
            stopwords: None,
            min_count: DEFAULT_MIN_COUNT,
            dim: enc.dim,
            heads: enc.heads,
            layers: enc.layers,
            max_len: enc.max_len,
            mask_rate: DEFAULT_MASK_RATE,
            strategy: MaskStrategy::PureMask,
            steps: DEFAULT_STEPS,
            batch_size: DEFAULT_BATCH_SIZE,
            learning_rate: DEFAULT_LEARNING_RATE,
            from_file: None,
            from_file_tokens: None,
            senses: None,
            lda_tokens: LdaTokens::Words,
            k: None,
            kmin: DEFAULT_K_MIN,
            kmax: DEFAULT_K_MAX,
            alpha: None,
            beta: DEFAULT_BETA,
            iters: DEFAULT_ITERATIONS,
            burn_in: DEFAULT_BURN_IN,
            average_samples: false,
            split_ratio: sweep.split_ratio,
            fold_in_iters: DEFAULT_FOLD_IN_ITERATIONS,
            held_out_estimator: sweep.estimator,
            jobs: 1,
            top_t: DEFAULT_TOP_T,
            u_mass_window: WindowMode::Document.to_string(),
            c_v_window: WindowMode::Sliding(DEFAULT_SLIDING_WIDTH).to_string(),
            lambda: 1.0,
            tsne_perplexity: tsne.perplexity,
            tsne_iters: tsne.iterations,
            tsne_learning_rate: tsne.learning_rate,
            svg: false,
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str, source: &Path) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| {
            CliError::Core(Error::parse(source.display().to_string(), e.line(), e.to_string()))
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Checks every field before any work starts.
    pub fn validate(&self) -> Result<(), CliError> {
        self.encoder_config().validate()?;
        self.train_config().validate()?;
        if self.min_count < 1 {
            return Err(Error::config("min_count must be >= 1").into());
        }
        if self.max_len < 1 {
            return Err(Error::config("max_len must be >= 1").into());
        }
        if let Some(k) = self.k {
            self.lda_config(k).validate()?;
        } else {
            self.lda_config(self.kmin.max(1)).validate()?;
        }
        if self.kmin < 1 || self.kmin > self.kmax {
            return Err(Error::config(format!("need 1 <= kmin <= kmax, got {}..{}", self.kmin, self.kmax)).into());
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(Error::config(format!("split_ratio {} outside (0, 1)", self.split_ratio)).into());
        }
        if self.jobs < 1 {
            return Err(Error::config("jobs must be >= 1").into());
        }
        if self.top_t < 1 {
            return Err(Error::config("top_t must be >= 1").into());
        }
        self.windows()?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::config(format!("lambda {} must be >= 0", self.lambda)).into());
        }
        if !(self.tsne_perplexity > 0.0 && self.tsne_learning_rate > 0.0) {
            return Err(Error::config("t-SNE perplexity and learning rate must be > 0").into());
        }
        if self.senses == Some(0) {
            return Err(Error::config("senses must be >= 1").into());
        }
        if self.lda_tokens == LdaTokens::Senses && self.senses.is_none() {
            return Err(Error::config("lda_tokens = senses requires senses to be set").into());
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            dim: self.dim,
            heads: self.heads,
            layers: self.layers,
            max_len: self.max_len,
            seed: self.seed,
            ..EncoderConfig::default()
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            mask_rate: self.mask_rate,
            strategy: self.strategy,
            steps: self.steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: self.seed,
        }
    }

    pub fn lda_config(&self, k: usize) -> LdaConfig {
        LdaConfig {
            num_topics: k,
            alpha: self.alpha,
            beta: self.beta,
            iterations: self.iters,
            burn_in: self.burn_in,
            seed: self.seed,
            average_samples: self.average_samples,
        }
    }

    pub fn sweep_settings(&self) -> SweepSettings {
        SweepSettings {
            k_min: self.kmin,
            k_max: self.kmax,
            split_ratio: self.split_ratio,
            fold_in_iterations: self.fold_in_iters,
            estimator: self.held_out_estimator,
            jobs: self.jobs,
        }
    }

    pub fn windows(&self) -> Result<CoherenceWindows, CliError> {
        Ok(CoherenceWindows {
            u_mass: self.u_mass_window.parse()?,
            c_v: self.c_v_window.parse()?,
        })
    }

    pub fn tsne_settings(&self) -> TsneSettings {
        TsneSettings {
            perplexity: self.tsne_perplexity,
            iterations: self.tsne_iters,
            learning_rate: self.tsne_learning_rate,
            seed: self.seed,
            ..TsneSettings::default()
        }
    }
}
