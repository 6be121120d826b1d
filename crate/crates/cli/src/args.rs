use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use methylgraph::gnn::BagAggregation;
use methylgraph::metrics::Metric;

use crate::config::{SynthOverrides, TrainOverrides};

#[derive(Debug, Parser)]
#[command(name = "methylgraph", version, about = "Gene-group methylation status from spatial patch graphs")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to available cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Single-threaded numerics.
    #[arg(long, global = true)]
    pub strict_deterministic: bool,
    /// Run directory all outputs are written under.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic cohort: feature files, manifest and DM matrix.
    Synth(SynthArgs),
    /// Cluster genes, binarize group means and write the label table.
    GroupLabels(GroupLabelsArgs),
    /// Build one spatial graph per slide listed in a manifest.
    BuildGraphs(BuildGraphsArgs),
    /// Cross-validate a model for one gene group (or all).
    Train(TrainArgs),
    /// Per-fold AUROC/AP tables from training predictions.
    Eval(EvalArgs),
    /// Paired bootstrap comparison of two prediction files.
    Compare(CompareArgs),
    /// Node-score heatmap of one slide.
    Heatmap(HeatmapArgs),
}

#[derive(Debug, Args, Default)]
pub struct SynthArgs {
    #[arg(long)]
    pub patients: Option<usize>,
    #[arg(long)]
    pub slides_min: Option<usize>,
    #[arg(long)]
    pub slides_max: Option<usize>,
    #[arg(long)]
    pub patches_min: Option<usize>,
    #[arg(long)]
    pub patches_max: Option<usize>,
    #[arg(long)]
    pub grid_spacing_px: Option<f64>,
    #[arg(long)]
    pub feature_dim: Option<usize>,
    /// Fraction ρ of a positive patient's patches carrying the signal.
    #[arg(long, alias = "rho")]
    pub signal_fraction: Option<f64>,
    #[arg(long, alias = "shift")]
    pub signal_shift: Option<f64>,
    #[arg(long)]
    pub positive_fraction: Option<f64>,
    #[arg(long)]
    pub groups: Option<usize>,
    #[arg(long)]
    pub genes_per_group: Option<usize>,
    #[arg(long)]
    pub signal_group: Option<usize>,
}

impl SynthArgs {
    pub fn overrides(&self) -> SynthOverrides {
        SynthOverrides {
            patients: self.patients,
            slides_min: self.slides_min,
            slides_max: self.slides_max,
            patches_min: self.patches_min,
            patches_max: self.patches_max,
            grid_spacing_px: self.grid_spacing_px,
            feature_dim: self.feature_dim,
            signal_fraction: self.signal_fraction,
            signal_shift: self.signal_shift,
            positive_fraction: self.positive_fraction,
            groups: self.groups,
            genes_per_group: self.genes_per_group,
            signal_group: self.signal_group,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct GroupLabelsArgs {
    /// DM matrix CSV (default: <out>/dm_matrix.csv).
    #[arg(long)]
    pub dm: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// ward, single, complete or average.
    #[arg(long)]
    pub linkage: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct BuildGraphsArgs {
    /// Cohort manifest (default: <out>/manifest.json).
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub max_edge_px: Option<f64>,
}

#[derive(Debug, Args, Default)]
pub struct TrainArgs {
    /// Graph index written by build-graphs (default: <out>/graphs/index.json).
    #[arg(long)]
    pub graphs: Option<PathBuf>,
    /// Label table written by group-labels (default: <out>/labels/labels.csv
    /// when present, else the manifest labels).
    #[arg(long)]
    pub labels: Option<PathBuf>,
    /// Gene group to train on (default: the first one).
    #[arg(long)]
    pub group: Option<String>,
    /// Train one model set per gene group.
    #[arg(long, conflicts_with = "group")]
    pub all_groups: bool,
    /// Reuse a saved fold assignment.
    #[arg(long)]
    pub folds_file: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub aggregation: Option<BagAggregation>,
}

impl TrainArgs {
    pub fn overrides(&self) -> TrainOverrides {
        TrainOverrides {
            epochs: self.epochs,
            batch_size: self.batch_size,
            layers: self.layers,
            hidden_dim: self.hidden_dim,
            lr: self.lr,
            weight_decay: self.weight_decay,
            margin: self.margin,
            folds: self.folds,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Debug, Args, Default)]
pub struct EvalArgs {
    /// Directory written by train (default: <out>/train).
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Predictions CSV, or a train directory containing predictions.csv.
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value = "auroc")]
    pub metric: Metric,
    #[arg(long)]
    pub runs: Option<usize>,
}

#[derive(Debug, Args)]
pub struct HeatmapArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Graph file written by build-graphs.
    #[arg(long)]
    pub graph: PathBuf,
    /// Pixels per raster pixel; 0 skips the PNG.
    #[arg(long)]
    pub downsample: Option<f64>,
    #[arg(long)]
    pub patch_size_px: Option<f64>,
}
