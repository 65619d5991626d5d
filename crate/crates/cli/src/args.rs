use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use voxelforge::controller::PpoConfig;
use voxelforge::mapelites::MapElitesConfig;
use voxelforge::morphometrics::SymmetryAxis;
use voxelforge::tasks::TaskKind;

#[derive(Debug, Parser)]
#[command(name = "voxelforge", version, about = "Morphology/control complexity exploration for voxel soft robots")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Master seed; every stochastic stage derives its seed from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Output directory.
    #[arg(long, global = true, env = "VOXELFORGE_OUT", default_value = "voxelforge-out")]
    pub out: PathBuf,

    /// Parallel training/evaluation workers.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u32).range(1..))]
    pub workers: u32,

    /// Genome grid size.
    #[arg(long, global = true, default_value = "5x5")]
    pub grid: Grid,

    /// Comma-separated tasks: walker, biwalker, obstacle.
    #[arg(long, global = true, value_delimiter = ',', default_value = "walker")]
    pub task: Vec<TaskKind>,

    #[arg(long, global = true, default_value = "vertical")]
    pub symmetry_axis: SymmetryAxis,

    /// 256-unit hidden layers and 1e6 training steps.
    #[arg(long, global = true)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl FromStr for Grid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (w, h) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| format!("grid `{s}` must look like WxH"))?;
        let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("grid `{s}`: {e}"));
        let (width, height) = (parse(w)?, parse(h)?);
        if width == 0 || height == 0 {
            return Err(format!("grid `{s}` must have positive dimensions"));
        }
        Ok(Grid { width, height })
    }
}

impl std::fmt::Display for Grid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the morphology archive.
    Generate(GenerateArgs),
    /// Train one controller per archived genome and task.
    Train(TrainArgs),
    /// Evaluate trained controllers into results.csv.
    Evaluate(EvaluateArgs),
    /// Regression and sensitivity report from results.csv.
    Analyze(AnalyzeArgs),
    /// generate, train, evaluate and analyze in sequence.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 100)]
    pub init_pop: usize,
    #[arg(long, default_value_t = 1000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 3)]
    pub bins: usize,
    /// Per-voxel mutation probability.
    #[arg(long, default_value_t = 0.1)]
    pub mutation_rate: f64,
}

impl GenerateArgs {
    pub fn config(&self, g: &GlobalArgs) -> MapElitesConfig {
        MapElitesConfig {
            width: g.grid.width,
            height: g.grid.height,
            init_pop: self.init_pop,
            iterations: self.iterations,
            bins_per_metric: self.bins,
            mutation_rate: self.mutation_rate,
            symmetry_axis: g.symmetry_axis,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    /// Control steps per episode.
    #[arg(long, default_value_t = 500)]
    pub episode_length: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PpoArgs {
    /// Environment steps per controller (default 2e5, 1e6 with --paper-scale).
    #[arg(long)]
    pub timesteps: Option<usize>,
    /// Hidden units per layer (default 64, 256 with --paper-scale).
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub eval_interval: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub steps_per_update: Option<usize>,
    /// Minibatch size.
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub gae_lambda: Option<f64>,
    #[arg(long)]
    pub clip_range: Option<f64>,
    #[arg(long)]
    pub entropy_coef: Option<f64>,
    #[arg(long)]
    pub vf_coef: Option<f64>,
    #[arg(long)]
    pub max_grad_norm: Option<f64>,
}

impl PpoArgs {
    pub fn config(&self, paper_scale: bool) -> PpoConfig {
        let mut c = if paper_scale {
            PpoConfig::paper_scale()
        } else {
            PpoConfig::default()
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        apply!(
            learning_rate, steps_per_update, batch_size, epochs, gamma, gae_lambda, clip_range,
            entropy_coef, vf_coef, max_grad_norm, eval_interval
        );
        if let Some(t) = self.timesteps {
            c.total_timesteps = t;
        }
        if let Some(h) = self.hidden {
            c.hidden = [h, h];
        }
        c
    }
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Archive to train on (default: the one recorded in the manifest).
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[command(flatten)]
    pub ppo: PpoArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub archive: Option<PathBuf>,
    #[command(flatten)]
    pub episode: EpisodeArgs,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Results file (default: the one recorded in the manifest).
    #[arg(long)]
    pub results: Option<PathBuf>,
    /// Regress on raw FLOPs instead of log10 FLOPs.
    #[arg(long)]
    pub raw_flops: bool,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
}

#[derive(Debug, Clone, Args)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub generate: GenerateArgs,
    #[command(flatten)]
    pub ppo: PpoArgs,
    #[command(flatten)]
    pub episode: EpisodeArgs,
    #[arg(long)]
    pub raw_flops: bool,
    #[arg(long, default_value_t = 3)]
    pub levels: usize,
}
