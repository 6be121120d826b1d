//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags. Every resolved value is echoed to the run log.

use std::path::{Path, PathBuf};

use methylgraph::gnn::BagAggregation;
use methylgraph::training::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub margin: Option<f64>,
    pub folds: Option<usize>,
    pub aggregation: Option<BagAggregation>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelSection {
    pub k: Option<usize>,
    pub linkage: Option<String>,
    /// Names given to groups 0..k; defaults to `group_<i>`.
    pub group_names: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub patients: Option<usize>,
    pub slides_min: Option<usize>,
    pub slides_max: Option<usize>,
    pub patches_min: Option<usize>,
    pub patches_max: Option<usize>,
    pub grid_spacing_px: Option<f64>,
    pub feature_dim: Option<usize>,
    pub signal_fraction: Option<f64>,
    pub signal_shift: Option<f64>,
    pub positive_fraction: Option<f64>,
    pub groups: Option<usize>,
    pub genes_per_group: Option<usize>,
    pub signal_group: Option<usize>,
}

/// Contents of a `--config` TOML file. All keys are optional.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub strict_deterministic: Option<bool>,
    pub out: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub max_edge_px: Option<f64>,
    pub downsample: Option<f64>,
    pub bootstrap_runs: Option<usize>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub labels: LabelSection,
    #[serde(default)]
    pub synth: SynthSection,
}

impl RunConfigFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }
}

/// Records where each resolved value came from.
#[derive(Debug, Default)]
pub struct Resolver {
    pub log: Vec<String>,
}

impl Resolver {
    pub fn pick<T: std::fmt::Debug + Clone>(&mut self, name: &str, cli: Option<T>, file: Option<T>, default: T) -> T {
        let (value, source) = match (cli, file) {
            (Some(v), _) => (v, "flag"),
            (None, Some(v)) => (v, "config"),
            (None, None) => (default, "default"),
        };
        self.log.push(format!("{name} = {value:?} ({source})"));
        value
    }

    pub fn echo(&self) {
        for line in &self.log {
            eprintln!("config: {line}");
        }
    }
}

/// Flags shared by every subcommand after resolution.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Globals {
    pub seed: u64,
    /// Does not affect results, so it is left out of run records.
    #[serde(skip)]
    pub threads: usize,
    pub strict_deterministic: bool,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOverrides {
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub layers: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub margin: Option<f64>,
    pub folds: Option<usize>,
    pub aggregation: Option<BagAggregation>,
}

pub fn resolve_train(r: &mut Resolver, cli: &TrainOverrides, file: &TrainSection, globals: &Globals) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        epochs: r.pick("train.epochs", cli.epochs, file.epochs, d.epochs),
        batch_size: r.pick("train.batch_size", cli.batch_size, file.batch_size, d.batch_size),
        layers: r.pick("train.layers", cli.layers, file.layers, d.layers),
        hidden_dim: r.pick("train.hidden_dim", cli.hidden_dim, file.hidden_dim, d.hidden_dim),
        lr: r.pick("train.lr", cli.lr, file.lr, d.lr),
        weight_decay: r.pick("train.weight_decay", cli.weight_decay, file.weight_decay, d.weight_decay),
        margin: r.pick("train.margin", cli.margin, file.margin, d.margin),
        folds: r.pick("train.folds", cli.folds, file.folds, d.folds),
        aggregation: r.pick("train.aggregation", cli.aggregation, file.aggregation, d.aggregation),
        seed: globals.seed,
        strict_deterministic: globals.strict_deterministic,
    }
}

#[derive(Debug, Clone, Default)]
pub struct SynthOverrides {
    pub patients: Option<usize>,
    pub slides_min: Option<usize>,
    pub slides_max: Option<usize>,
    pub patches_min: Option<usize>,
    pub patches_max: Option<usize>,
    pub grid_spacing_px: Option<f64>,
    pub feature_dim: Option<usize>,
    pub signal_fraction: Option<f64>,
    pub signal_shift: Option<f64>,
    pub positive_fraction: Option<f64>,
    pub groups: Option<usize>,
    pub genes_per_group: Option<usize>,
    pub signal_group: Option<usize>,
}

pub fn resolve_synth(r: &mut Resolver, cli: &SynthOverrides, file: &SynthSection, seed: u64) -> SynthSpec {
    let d = SynthSpec::default();
    SynthSpec {
        patients: r.pick("synth.patients", cli.patients, file.patients, d.patients),
        slides_min: r.pick("synth.slides_min", cli.slides_min, file.slides_min, d.slides_min),
        slides_max: r.pick("synth.slides_max", cli.slides_max, file.slides_max, d.slides_max),
        patches_min: r.pick("synth.patches_min", cli.patches_min, file.patches_min, d.patches_min),
        patches_max: r.pick("synth.patches_max", cli.patches_max, file.patches_max, d.patches_max),
        grid_spacing_px: r.pick("synth.grid_spacing_px", cli.grid_spacing_px, file.grid_spacing_px, d.grid_spacing_px),
        feature_dim: r.pick("synth.feature_dim", cli.feature_dim, file.feature_dim, d.feature_dim),
        signal_fraction: r.pick("synth.signal_fraction", cli.signal_fraction, file.signal_fraction, d.signal_fraction),
        signal_shift: r.pick("synth.signal_shift", cli.signal_shift, file.signal_shift, d.signal_shift),
        positive_fraction: r.pick("synth.positive_fraction", cli.positive_fraction, file.positive_fraction, d.positive_fraction),
        groups: r.pick("synth.groups", cli.groups, file.groups, d.groups),
        genes_per_group: r.pick("synth.genes_per_group", cli.genes_per_group, file.genes_per_group, d.genes_per_group),
        signal_group: r.pick("synth.signal_group", cli.signal_group, file.signal_group, d.signal_group),
        seed,
    }
}
