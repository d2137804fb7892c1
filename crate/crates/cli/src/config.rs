//! Run configuration: a TOML file merged with command-line flags (flags win).
//!
//! ```toml
//! seed = 1
//! threads = 4
//! deterministic = false
//!
//! [data]
//! dataset = "cifar10-subset"   # registered name or a path
//! format = "cifar-binary"      # optional; inferred from the path otherwise
//!
//! [network]
//! conv_blocks = [[32, 32], [64, 64]]
//! hidden_units = 256
//!
//! [train]
//! learning_rate = 0.01
//! momentum = 0.9
//! batch_size = 128
//! epochs = 40
//! dropout = "adaptive"         # or a fixed probability such as 0.5
//! augment = "dct"              # or "none"
//! threshold_min = 0
//! threshold_max = 50
//!
//! [eval]
//! profile = "small"
//! families = ["gaussian-noise", "salt-pepper", "speckle", "gaussian-blur", "motion-blur"]
//! seed = 1                     # distortion seed; defaults to the top-level seed
//!
//! [output]
//! dir = "runs/dct-seed1"
//! ```

use std::path::{Path, PathBuf};

use dctaug::distortions::{DatasetProfile, DistortionKind, ProfileName};
use dctaug::nn::NetworkConfig;
use dctaug::{AugmentConfig, DropoutPolicy, EvalConfig, ThresholdDistribution, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Worker threads; forced to 1 by `deterministic`.
    pub threads: usize,
    pub deterministic: bool,
    pub data: DataSection,
    pub network: NetworkSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub output: OutputSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            threads: std::thread::available_parallelism().map_or(1, |n| n.get()),
            deterministic: false,
            data: DataSection::default(),
            network: NetworkSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            output: OutputSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub dataset: String,
    pub format: Option<String>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            dataset: "cifar10-subset".into(),
            format: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkSection {
    pub conv_blocks: Vec<Vec<usize>>,
    pub hidden_units: usize,
}

impl Default for NetworkSection {
    fn default() -> Self {
        let desk = NetworkConfig::desk_scale(3, 32, 32, 10);
        Self {
            conv_blocks: desk.conv_blocks,
            hidden_units: desk.hidden_units,
        }
    }
}

/// `"adaptive"` or a fixed probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DropoutSetting {
    Fixed(f64),
    Named(String),
}

impl DropoutSetting {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "adaptive" => Ok(DropoutSetting::Named(s.into())),
            _ => s
                .parse::<f64>()
                .map(DropoutSetting::Fixed)
                .map_err(|_| CliError::usage(format!("--dropout expects 'adaptive' or a probability, got '{s}'"))),
        }
    }

    pub fn policy(&self) -> CliResult<DropoutPolicy> {
        let policy = match self {
            DropoutSetting::Fixed(p) => DropoutPolicy::Fixed(*p),
            DropoutSetting::Named(n) if n == "adaptive" => DropoutPolicy::Adaptive,
            DropoutSetting::Named(n) => return Err(CliError::usage(format!("unknown dropout setting '{n}'"))),
        };
        policy.validate()?;
        Ok(policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub dropout: DropoutSetting,
    pub augment: String,
    pub threshold_min: u32,
    pub threshold_max: u32,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let d = ThresholdDistribution::default();
        Self {
            learning_rate: t.learning_rate,
            momentum: t.momentum,
            batch_size: t.batch_size,
            epochs: t.epochs,
            dropout: DropoutSetting::Named("adaptive".into()),
            augment: "dct".into(),
            threshold_min: d.low,
            threshold_max: d.high,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub profile: String,
    pub families: Vec<String>,
    pub seed: Option<u64>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            profile: "small".into(),
            families: DistortionKind::ALL.iter().map(|k| k.name().to_string()).collect(),
            seed: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn effective_threads(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }

    pub fn augmentation(&self) -> CliResult<Option<AugmentConfig>> {
        match self.train.augment.as_str() {
            "none" => Ok(None),
            "dct" => {
                let distribution = ThresholdDistribution::new(self.train.threshold_min, self.train.threshold_max)?;
                Ok(Some(AugmentConfig {
                    distribution,
                    seed: self.seed,
                    ..AugmentConfig::default()
                }))
            }
            other => Err(CliError::usage(format!(
                "--augment expects 'dct' or 'none', got '{other}'"
            ))),
        }
    }

    pub fn train_config(&self) -> CliResult<TrainConfig> {
        let cfg = TrainConfig {
            learning_rate: self.train.learning_rate,
            momentum: self.train.momentum,
            batch_size: self.train.batch_size,
            epochs: self.train.epochs,
            seed: self.seed,
            augmentation: self.augmentation()?,
            dropout: self.train.dropout.policy()?,
            threads: self.effective_threads(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn network(&self, geometry: (usize, usize, usize), num_classes: usize) -> CliResult<NetworkConfig> {
        let (c, h, w) = geometry;
        let net = NetworkConfig {
            conv_blocks: self.network.conv_blocks.clone(),
            hidden_units: self.network.hidden_units,
            ..NetworkConfig::desk_scale(c, h, w, num_classes)
        };
        net.validate()?;
        Ok(net)
    }

    pub fn profile(&self) -> CliResult<DatasetProfile> {
        let name: ProfileName = self.eval.profile.parse()?;
        Ok(DatasetProfile::named(name))
    }

    pub fn families(&self) -> CliResult<Vec<DistortionKind>> {
        self.eval
            .families
            .iter()
            .map(|f| f.parse::<DistortionKind>().map_err(CliError::from))
            .collect()
    }

    pub fn eval_seed(&self) -> u64 {
        self.eval.seed.unwrap_or(self.seed)
    }

    pub fn eval_config(&self) -> CliResult<EvalConfig> {
        Ok(EvalConfig {
            profile: self.profile()?,
            families: self.families()?,
            seed: self.eval_seed(),
            threads: self.effective_threads(),
        })
    }
}

/// `"32,32/64,64"` -> `[[32, 32], [64, 64]]`
pub fn parse_blocks(s: &str) -> CliResult<Vec<Vec<usize>>> {
    s.split('/')
        .map(|block| {
            block
                .split(',')
                .map(|f| f.trim().parse::<usize>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|_| CliError::usage(format!("bad --conv-blocks '{s}'; expected e.g. 32,32/64,64")))
        })
        .collect()
}
