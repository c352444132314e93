use std::fs;
use std::sync::Arc;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use tempering_core::cases::{
    conditioned_ensemble, example1, example2, example3, ex2_generate_data, ex3_generate_data,
    posterior_mean_s, AnalyticTractile, Example1Config, Example2Config, Example2Model, Example3Config,
    Example3Model,
};
use tempering_core::deviance::{deviance_curve, DevianceCurve, PriorEnsemble};
use tempering_core::likelihood::{Dataset, LikelihoodModel};
use tempering_core::numerics::{RandomStream, TemperingGrid};
use tempering_core::prior::Prior;

use crate::args::{GridSpec, Preset, ProblemKind, RunArgs};
use crate::error::{config, CliError, CliResult};

pub enum Case {
    One { cfg: Example1Config, y: f64 },
    Two { cfg: Example2Config, data: Dataset },
    Three { cfg: Example3Config, data: Dataset },
}

/// Configured problem with its synthetic data, prior and likelihood.
pub struct Problem {
    pub case: Case,
    pub prior: Prior,
    pub model: Arc<dyn LikelihoodModel>,
    pub config_echo: Value,
}

/// Defaults overlaid with the keys of the `--config` file.
fn load_config<T: Serialize + DeserializeOwned>(base: T, args: &RunArgs) -> CliResult<(T, Value)> {
    let mut value = serde_json::to_value(base).expect("config serializes");
    if let Some(path) = &args.config {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let overlay: Value =
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let Value::Object(keys) = overlay else {
            return config("config file must hold a JSON object");
        };
        let target = value.as_object_mut().expect("config is an object");
        for (k, v) in keys {
            target.insert(k, v);
        }
    }
    let cfg = serde_json::from_value(value.clone()).map_err(|e| CliError::Config(e.to_string()))?;
    Ok((cfg, value))
}

impl Problem {
    pub fn load(kind: ProblemKind, args: &RunArgs, stream: &mut RandomStream) -> CliResult<Self> {
        if args.analytic && kind != ProblemKind::Example1 {
            return config("--analytic is only available for example1");
        }
        if args.preset.is_some() && kind != ProblemKind::Example3 {
            return config("--preset is only available for example3");
        }
        Ok(match kind {
            ProblemKind::Example1 => {
                let (cfg, echo) = load_config(Example1Config::default(), args)?;
                cfg.validate()?;
                let y = cfg.generate_data(stream);
                Self {
                    prior: cfg.prior()?,
                    model: Arc::new(cfg.model(y)?),
                    case: Case::One { cfg, y },
                    config_echo: echo,
                }
            }
            ProblemKind::Example2 => {
                let (cfg, echo) = load_config(Example2Config::default(), args)?;
                let data = ex2_generate_data(&cfg, cfg.theta_t, stream)?;
                Self {
                    prior: cfg.prior()?,
                    model: Arc::new(Example2Model::new(&cfg, data.clone())?),
                    case: Case::Two { cfg, data },
                    config_echo: echo,
                }
            }
            ProblemKind::Example3 => {
                let base = match args.preset {
                    Some(Preset::Twenty) => Example3Config::twenty_modes(),
                    _ => Example3Config::default(),
                };
                let (cfg, echo) = load_config(base, args)?;
                let data = ex3_generate_data(&cfg, stream)?;
                Self {
                    prior: cfg.prior()?,
                    model: Arc::new(Example3Model::new(&cfg, data.clone())?),
                    case: Case::Three { cfg, data },
                    config_echo: echo,
                }
            }
        })
    }

    pub fn dataset_csv(&self) -> String {
        match &self.case {
            Case::One { y, .. } => example1::dataset_csv(&[*y]),
            Case::Two { cfg, data } => example2::dataset_csv(cfg, data),
            Case::Three { data, .. } => example3::dataset_csv(data),
        }
    }

    pub fn analytic(&self) -> Option<AnalyticTractile> {
        match &self.case {
            Case::One { cfg, y } => Some(AnalyticTractile { cfg: *cfg, y: *y }),
            _ => None,
        }
    }

    /// Dispersion and `log C` for problems with a Euclidean misfit.
    pub fn spectral_constants(&self) -> Option<(f64, f64)> {
        match &self.case {
            Case::One { cfg, .. } => Some((cfg.dispersion(), cfg.log_c())),
            _ => None,
        }
    }

    fn default_grid(&self) -> (Vec<(f64, f64)>, usize) {
        match &self.case {
            Case::One { cfg, .. } => {
                let sd = cfg.sigma_p2.sqrt();
                (vec![(cfg.mu_p - 5.0 * sd, cfg.mu_p + 5.0 * sd)], 512)
            }
            Case::Two { cfg, .. } => {
                (vec![(cfg.x0_range[0], cfg.x0_range[1]), (cfg.a_range[0], cfg.a_range[1])], 41)
            }
            Case::Three { cfg, .. } => (vec![(cfg.low, cfg.high); 2], 401),
        }
    }
}

/// What a grid field is evaluated against. Example 2 grids live on
/// `(x₀, a)` with `s` fixed at its posterior mean.
pub struct GridTarget {
    pub model: Arc<dyn LikelihoodModel>,
    pub prior: Prior,
    pub curve: DevianceCurve,
    pub bounds: Vec<(f64, f64)>,
    pub resolution: usize,
    /// Conditioning value of `s` and the matching curve (Example 2 only).
    pub conditioned: Option<(f64, DevianceCurve)>,
}

impl GridTarget {
    pub fn new(
        problem: &Problem,
        ens: &PriorEnsemble,
        curve: &DevianceCurve,
        grid: &TemperingGrid,
        spec: Option<&GridSpec>,
    ) -> CliResult<Self> {
        let (bounds, resolution) = match spec {
            Some(g) => (g.bounds.clone(), g.resolution),
            None => problem.default_grid(),
        };
        Ok(match &problem.case {
            Case::Two { cfg, data } => {
                let s = posterior_mean_s(ens);
                let cond = conditioned_ensemble(cfg, ens, s)?;
                let cond_curve = deviance_curve(&cond, grid)?;
                Self {
                    model: Arc::new(cfg.conditioned_model(data, s)?),
                    prior: problem.prior.leading(2)?,
                    curve: cond_curve.clone(),
                    bounds,
                    resolution,
                    conditioned: Some((s, cond_curve)),
                }
            }
            _ => Self {
                model: problem.model.clone(),
                prior: problem.prior.clone(),
                curve: curve.clone(),
                bounds,
                resolution,
                conditioned: None,
            },
        })
    }
}
