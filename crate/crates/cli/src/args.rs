use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tscc::spectral::{PipelineVariant, RowNorm, TsccOptions};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "tscc", version, about = "Spectral curvature clustering of points near affine flats")]
pub struct Cli {
    /// Directory that receives output files.
    #[arg(long, global = true, env = "TSCC_OUTPUT_DIR", default_value = ".")]
    pub out_dir: PathBuf,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a dataset from a named model or a model file.
    Generate(GenerateArgs),
    /// Run the clustering pipeline and write labels and metrics.
    Cluster(ClusterArgs),
    /// Cluster labelled data and report embedding diagnostics against the truth.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo incidence constants and curvature moments.
    Incidence(IncidenceArgs),
    /// Rerun a fixed-seed reference scenario.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Named model: three_lines or two_lines_80_20.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    pub model: Option<String>,
    /// TOML model file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Noise level as a fraction of the support diameter (overrides the file).
    #[arg(long, allow_negative_numbers = true)]
    pub noise: Option<f64>,
    /// Seed (overrides the file).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output CSV; defaults to `<out-dir>/<model>.csv`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Affine,
    Linear,
    Power,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RowNormArg {
    None,
    T,
    V,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    /// Input dataset CSV (`x1,..,xD[,label]`).
    #[arg(long)]
    pub input: PathBuf,
    /// Flat dimension.
    #[arg(long)]
    pub d: usize,
    /// Number of clusters.
    #[arg(long = "K", value_name = "K")]
    pub k: usize,
    /// Affinity scale.
    #[arg(long, allow_negative_numbers = true)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = VariantArg::Affine)]
    pub variant: VariantArg,
    /// Exponent of the power variant.
    #[arg(long, default_value_t = 1.0)]
    pub power: f64,
    #[arg(long, value_enum, default_value_t = RowNormArg::None)]
    pub row_norm: RowNormArg,
    /// Embed W directly instead of the normalized matrix.
    #[arg(long)]
    pub unnormalized: bool,
    /// K-means restarts.
    #[arg(long, default_value_t = 20)]
    pub restarts: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Stem of the output files; defaults to the input file stem.
    #[arg(long)]
    pub name: Option<String>,
}

impl PipelineArgs {
    pub fn validate(&self) -> CliResult<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(invalid(format!("--sigma must be positive and finite, got {}", self.sigma)));
        }
        if self.k == 0 {
            return Err(invalid("--K must be at least 1"));
        }
        if self.restarts == 0 {
            return Err(invalid("--restarts must be at least 1"));
        }
        if self.variant == VariantArg::Power && !(self.power > 0.0 && self.power.is_finite()) {
            return Err(invalid("--power must be positive"));
        }
        Ok(())
    }

    pub fn variant(&self) -> PipelineVariant {
        match self.variant {
            VariantArg::Affine => PipelineVariant::Affine,
            VariantArg::Linear => PipelineVariant::Linear,
            VariantArg::Power => PipelineVariant::Power(self.power),
        }
    }

    pub fn options(&self) -> TsccOptions {
        TsccOptions {
            variant: self.variant(),
            row_norm: match self.row_norm {
                RowNormArg::None => RowNorm::None,
                RowNormArg::T => RowNorm::T,
                RowNormArg::V => RowNorm::V,
            },
            unnormalized: self.unnormalized,
            restarts: self.restarts,
            seed: self.seed,
            cluster_sizes_from: None,
        }
    }

    pub fn stem(&self) -> String {
        self.name.clone().unwrap_or_else(|| {
            self.input
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "run".into())
        })
    }
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Parameter sweep `key=v1,v2,..` over sigma, seed or restarts;
    /// repeated flags form a grid. Runs execute in parallel.
    #[arg(long)]
    pub sweep: Vec<String>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExampleArg {
    OrthogonalLinesTscc,
    AngledLinesTlscc,
    RectanglesTlscc,
    HalfDisksTlscc,
}

#[derive(Debug, Args)]
pub struct IncidenceArgs {
    /// Configuration with a closed-form bound.
    #[arg(long, value_enum, conflicts_with = "measure", required_unless_present = "measure")]
    pub example: Option<ExampleArg>,
    /// Arbitrary measures `name[:key=value,..]`; one gives curvature
    /// moments, two or more give the alpha decomposition.
    #[arg(long)]
    pub measure: Vec<String>,
    /// Flat dimension for `--measure`.
    #[arg(long, default_value_t = 1)]
    pub d: usize,
    /// Use the linear-subspace curvature for `--measure`.
    #[arg(long)]
    pub linear: bool,
    #[arg(long = "L", value_name = "L", default_value_t = 1.0)]
    pub length: f64,
    /// Angle between the lines, in radians.
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    pub theta: f64,
    /// Strip width.
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    /// One or more affinity scales (not needed for a single `--measure`).
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub sigma: Vec<f64>,
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON; defaults to `<out-dir>/incidence-<name>.json`.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scenario {
    Fig1,
    Fig2,
    Utv,
    Ex51,
    Ex52,
    Ex53,
    Ex54,
    Spectra,
    All,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(value_enum)]
    pub scenario: Scenario,
    /// Monte Carlo sample count for the incidence scenarios.
    #[arg(long, default_value_t = 100_000)]
    pub samples: usize,
}

pub fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Core(tscc::Error::InvalidArgument(msg.into()))
}
