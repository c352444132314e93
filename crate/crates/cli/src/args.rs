use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(name = "tempering", version, about = "Likelihood-tempering continuation: deviance curves, transition densities and samplers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Prior ensemble and expected-deviance curve.
    Deviance(RunArgs),
    /// Transition densities on a grid.
    Density(RunArgs),
    /// Direct samples from a transition density.
    Sample(RunArgs),
    /// Kernel traces and the trace ODE.
    Spectral(RunArgs),
    /// Moment generating function and higher moments.
    Mgf(RunArgs),
    /// Linear-Gaussian case study with analytic oracles.
    Example1(RunArgs),
    /// Wave-equation source inversion.
    Example2(RunArgs),
    /// Bivariate multimodal problem.
    Example3(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Deviance(_) => "deviance",
            Command::Density(_) => "density",
            Command::Sample(_) => "sample",
            Command::Spectral(_) => "spectral",
            Command::Mgf(_) => "mgf",
            Command::Example1(_) => "example1",
            Command::Example2(_) => "example2",
            Command::Example3(_) => "example3",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Deviance(a)
            | Command::Density(a)
            | Command::Sample(a)
            | Command::Spectral(a)
            | Command::Mgf(a)
            | Command::Example1(a)
            | Command::Example2(a)
            | Command::Example3(a) => a,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    Example1,
    Example2,
    Example3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Three,
    Twenty,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Prior ensemble size N (number of forward solves).
    #[arg(long, default_value_t = 1000)]
    pub n_samples: usize,
    /// Number of tempering intervals.
    #[arg(long, default_value_t = 10)]
    pub n_alpha: usize,
    /// Simpson nodes per tempering interval (odd).
    #[arg(long, default_value_t = 11)]
    pub sub_quad: usize,
    /// Tempering value for density, sample and mgf.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Grid box and resolution, `lo,hi[,lo,hi]:resolution`.
    #[arg(long)]
    pub grid: Option<GridSpec>,
    /// JSON file overriding the problem configuration defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "./out")]
    pub out: PathBuf,
    /// Problem for the generic commands.
    #[arg(long, value_enum)]
    pub problem: Option<ProblemKind>,
    /// Use the closed-form tractile function (example1 only).
    #[arg(long)]
    pub analytic: bool,
    /// Mode set for example3.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Number of draws written by `sample`.
    #[arg(long, default_value_t = 1000)]
    pub n_out: usize,
    /// Rescale the density column of field CSVs to unit mass.
    #[arg(long)]
    pub renormalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
}

impl FromStr for GridSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (b, r) = s.rsplit_once(':').ok_or("expected lo,hi[,lo,hi]:resolution")?;
        let resolution = r.trim().parse::<usize>().map_err(|e| format!("bad resolution: {e}"))?;
        let vals = b
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|e| format!("bad bound {v:?}: {e}")))
            .collect::<Result<Vec<_>, _>>()?;
        if vals.is_empty() || vals.len() % 2 != 0 {
            return Err("bounds come in lo,hi pairs".into());
        }
        Ok(Self { bounds: vals.chunks(2).map(|c| (c[0], c[1])).collect(), resolution })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_spec_parsing() {
        let g: GridSpec = "0.5,1.5:512".parse().unwrap();
        assert_eq!(g, GridSpec { bounds: vec![(0.5, 1.5)], resolution: 512 });
        let g: GridSpec = "0,10,-1,1:64".parse().unwrap();
        assert_eq!(g.bounds, vec![(0.0, 10.0), (-1.0, 1.0)]);
        assert!("0,1,2:10".parse::<GridSpec>().is_err());
        assert!("0,1".parse::<GridSpec>().is_err());
        assert!("0,1:x".parse::<GridSpec>().is_err());
    }
}
