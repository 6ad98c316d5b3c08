//! Run configuration: command-line flags layered over an optional JSON file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use g3_core::geometry::{DerivMode, Signature};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum AuxSource {
    V,
    Ccv,
    Pair,
    PairSum,
}

impl AuxSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            AuxSource::V => "v",
            AuxSource::Ccv => "ccv",
            AuxSource::Pair => "pair",
            AuxSource::PairSum => "pair-sum",
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "g3", version, about = "Generalized 3D Yang-Mills: algebra checks, field identities and lattice solves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Auxiliary-bracket suites: H condition, Jacobi, nullspace, classification, obstruction.
    VerifyAlgebra(RunArgs),
    /// Field identity suite on random lattice configurations.
    VerifyIdentities(RunArgs),
    /// Gauss-Newton solve of the field equations, optionally with continuation in the coupling.
    Solve(RunArgs),
    /// Merge JSON reports into a pass/fail matrix.
    Report(ReportArgs),
}

#[derive(Args, Debug, Default, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub alg: Option<String>,
    #[arg(long, value_enum)]
    pub aux: Option<AuxSource>,
    #[arg(long = "N")]
    pub n: Option<usize>,
    #[arg(long)]
    pub signature: Option<String>,
    #[arg(long)]
    pub deriv: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Number of consecutive seeds starting at --seed.
    #[arg(long)]
    pub seeds: Option<usize>,
    /// Field amplitude as a fraction of the amplitude that keeps det(Y) away from zero.
    #[arg(long)]
    pub amp: Option<f64>,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub json: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Snapshot written by `solve`.
    #[arg(long)]
    pub snapshot: Option<PathBuf>,
    /// Snapshot used as the starting field of `solve`.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub continuation: Option<usize>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    /// Richardson study of the finite-difference stencils.
    #[arg(long)]
    pub convergence: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    pub paths: Vec<PathBuf>,
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(alias = "algebra")]
    pub alg: Option<String>,
    pub aux: Option<AuxSource>,
    #[serde(rename = "N")]
    pub n: Option<usize>,
    pub signature: Option<String>,
    #[serde(alias = "deriv_mode")]
    pub deriv: Option<String>,
    pub seed: Option<u64>,
    pub seeds: Option<usize>,
    pub amp: Option<f64>,
    pub tol: Option<f64>,
    pub json: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub continuation: Option<usize>,
    pub max_iters: Option<usize>,
    pub convergence: Option<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub algebra: String,
    pub aux: AuxSource,
    #[serde(rename = "N")]
    pub n: usize,
    pub signature: Signature,
    pub deriv_mode: DerivMode,
    pub seed: u64,
    pub seeds: usize,
    pub amp: f64,
    pub tol: f64,
    pub json: Option<PathBuf>,
    pub snapshot: Option<PathBuf>,
    pub init: Option<PathBuf>,
    pub continuation: Option<usize>,
    pub max_iters: usize,
    pub convergence: bool,
}

pub fn load_file(path: &Path) -> Result<FileConfig, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

impl RunConfig {
    /// Flags win over file values, which win over defaults.
    pub fn resolve(command: &str, args: &RunArgs) -> Result<Self, CliError> {
        let file = match &args.config {
            Some(p) => load_file(p)?,
            None => FileConfig::default(),
        };
        let algebra = args.alg.clone().or(file.alg).unwrap_or_else(|| "su2".into());
        let default_aux = if algebra == "su2" {
            AuxSource::V
        } else if algebra.starts_with("abelian") {
            AuxSource::Ccv
        } else {
            AuxSource::Pair
        };
        let sig = args.signature.clone().or(file.signature).unwrap_or_else(|| "euclid".into());
        let signature = Signature::parse(&sig).ok_or_else(|| CliError::Config(format!("unknown signature `{sig}`")))?;
        let deriv = args.deriv.clone().or(file.deriv).unwrap_or_else(|| "spectral".into());
        let deriv_mode = DerivMode::parse(&deriv).ok_or_else(|| CliError::Config(format!("unknown derivative mode `{deriv}`")))?;
        let cfg = Self {
            command: command.to_string(),
            aux: args.aux.or(file.aux).unwrap_or(default_aux),
            algebra,
            n: args.n.or(file.n).unwrap_or(16),
            signature,
            deriv_mode,
            seed: args.seed.or(file.seed).unwrap_or(0),
            seeds: args.seeds.or(file.seeds).unwrap_or(1),
            amp: args.amp.or(file.amp).unwrap_or(0.1),
            tol: args.tol.or(file.tol).unwrap_or(1e-8),
            json: args.json.clone().or(file.json),
            snapshot: args.snapshot.clone().or(file.snapshot),
            init: args.init.clone().or(file.init),
            continuation: args.continuation.or(file.continuation),
            max_iters: args.max_iters.or(file.max_iters).unwrap_or(50),
            convergence: args.convergence || file.convergence.unwrap_or(false),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !(self.tol > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tol));
        }
        if !(self.amp >= 0.0 && self.amp.is_finite()) {
            return bad(format!("amplitude must be finite and non-negative, got {}", self.amp));
        }
        if self.seeds == 0 {
            return bad("at least one seed is needed".into());
        }
        if self.continuation == Some(0) {
            return bad("continuation needs at least one step".into());
        }
        Ok(())
    }

    pub fn seed_list(&self) -> impl Iterator<Item = u64> + '_ {
        (0..self.seeds as u64).map(move |i| self.seed + i)
    }
}
