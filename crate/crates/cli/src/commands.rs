use std::fmt::Write as _;
use std::time::Instant;

use log::info;
use serde::Serialize;

use tempering_core::cases::{ex1_analytic_deviance, ex1_analytic_tractile, ex1_conjugate_transition, ex1_log_evidence, CapturedModes};
use tempering_core::deviance::{
    bernoulli_residual, build_ensemble, deviance_curve, fmt_f64, mgf, moment_phi_n, DevianceCurve, PriorEnsemble,
    Tractile,
};
use tempering_core::numerics::{make_grid, RandomStream, TemperingGrid};
use tempering_core::posterior::{
    field_inverse_cdf_sample, grid_density, marginal, sir_sample, PowerPosteriorField,
};
use tempering_core::spectral::{
    nystrom_traces, skewness_gap, trace_closed_form, trace_ode_integrate, KernelTraceState,
};

use crate::args::{Command, ProblemKind, RunArgs};
use crate::error::{config, CliResult};
use crate::output::{Output, RunManifest};
use crate::problem::{Case, GridTarget, Problem};

const TEST_ALPHAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];

struct Run<'a> {
    args: &'a RunArgs,
    problem: Problem,
    grid: TemperingGrid,
    ens: PriorEnsemble,
    curve: DevianceCurve,
    root: RandomStream,
    out: Output,
    forward_evals_grid: u64,
}

pub fn run(command: &Command) -> CliResult<()> {
    let start = Instant::now();
    let args = command.args();
    let grid = make_grid(args.n_alpha, args.sub_quad)?;
    if let Some(a) = args.alpha {
        if !(0.0..=1.0).contains(&a) {
            return config(format!("--alpha must lie in [0, 1], got {a}"));
        }
    }
    let implied = match command {
        Command::Example1(_) => Some(ProblemKind::Example1),
        Command::Example2(_) => Some(ProblemKind::Example2),
        Command::Example3(_) => Some(ProblemKind::Example3),
        _ => None,
    };
    let kind = match (implied, args.problem) {
        (Some(k), Some(p)) if k != p => {
            return config(format!("{} cannot run problem {p:?}", command.name()))
        }
        (Some(k), _) => k,
        (None, p) => p.unwrap_or(ProblemKind::Example1),
    };

    let root = RandomStream::new(args.seed);
    let problem = Problem::load(kind, args, &mut root.substream(0))?;
    let ens = build_ensemble(&problem.prior, problem.model.as_ref(), args.n_samples, &mut root.substream(1))?;
    let curve = match problem.analytic().filter(|_| args.analytic) {
        Some(a) => deviance_curve(&a, &grid)?,
        None => deviance_curve(&ens, &grid)?,
    };
    info!("ensemble of {} draws, {} forward solves", ens.len(), ens.forward_evals());

    let mut run = Run {
        args,
        problem,
        grid,
        ens,
        curve,
        root,
        out: Output::create(&args.out)?,
        forward_evals_grid: 0,
    };
    run.out.write("dataset.csv", &run.problem.dataset_csv())?;
    run.out.write("deviance.csv", &run.curve.to_csv())?;

    match command {
        Command::Deviance(_) => {}
        Command::Density(_) => {
            run.densities(&args.alpha.map_or(TEST_ALPHAS.to_vec(), |a| vec![a]))?;
        }
        Command::Sample(_) => run.sample()?,
        Command::Spectral(_) => run.spectral()?,
        Command::Mgf(_) => run.mgf()?,
        Command::Example1(_) => run.example1()?,
        Command::Example2(_) => run.example2()?,
        Command::Example3(_) => run.example3()?,
    }

    let mut outputs = run.out.files().to_vec();
    outputs.push("run.json".into());
    let manifest = RunManifest {
        command: command.name().into(),
        problem: kind,
        config: run.problem.config_echo.clone(),
        seed: args.seed,
        n_samples: args.n_samples,
        n_alpha: args.n_alpha,
        sub_quad: args.sub_quad,
        forward_evals_ensemble: run.ens.forward_evals(),
        forward_evals_grid: run.forward_evals_grid,
        wall_ms: start.elapsed().as_millis(),
        outputs,
        version: env!("CARGO_PKG_VERSION").into(),
    };
    run.out.write_json("run.json", &manifest)
}

fn alpha_tag(alpha: f64) -> String {
    format!("a{alpha}")
}

#[derive(Serialize)]
struct SampleSummary {
    alpha: f64,
    n_out: usize,
    ess: f64,
    degenerate: bool,
    sir_mean: Vec<f64>,
    grid_mean: Option<Vec<f64>>,
}

fn mean_of(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples.first().map_or(0, Vec::len);
    (0..d).map(|k| samples.iter().map(|s| s[k]).sum::<f64>() / samples.len() as f64).collect()
}

fn samples_csv(samples: &[Vec<f64>]) -> String {
    let d = samples.first().map_or(0, Vec::len);
    let mut out = (1..=d).map(|k| format!("theta{k}")).collect::<Vec<_>>().join(",");
    out.push('\n');
    for s in samples {
        let row: Vec<String> = s.iter().map(|v| fmt_f64(*v)).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct SpectralSummary {
    s: f64,
    log_c: f64,
    l1_0: f64,
    l2_0: f64,
    l3_0: f64,
    c: f64,
    min_eigenvalue: f64,
    max_eigenvalue: f64,
    skewness_gap_0: f64,
    closed_form_l1: Vec<f64>,
}

#[derive(Serialize)]
struct Example2Summary {
    s_hat: f64,
    mean_x0: f64,
    mean_a: f64,
    sir_mean: Vec<f64>,
    theta_t: [f64; 2],
}

#[derive(Serialize)]
struct ModesSummary {
    alpha: f64,
    rel_height: f64,
    radius: f64,
    maxima: Vec<[f64; 2]>,
    captured: Vec<bool>,
    count: usize,
    n_modes: usize,
}

impl Run<'_> {
    fn target(&mut self) -> CliResult<GridTarget> {
        let t = GridTarget::new(&self.problem, &self.ens, &self.curve, &self.grid, self.args.grid.as_ref())?;
        if let Some((s, c)) = &t.conditioned {
            info!("grid conditioned on s = {s}");
            self.out.write("deviance_conditioned.csv", &c.to_csv())?;
        }
        Ok(t)
    }

    fn field(&mut self, target: &GridTarget, alpha: f64) -> CliResult<PowerPosteriorField> {
        let f = grid_density(
            target.model.as_ref(),
            &target.prior,
            &target.curve,
            &target.bounds,
            target.resolution,
            alpha,
        )?;
        self.forward_evals_grid += f.forward_evals();
        let tag = alpha_tag(alpha);
        self.out.write(&format!("density_{tag}.csv"), &f.to_csv(self.args.renormalize))?;
        self.out.write_json(&format!("density_{tag}.json"), &f.metadata())?;
        if f.axes().len() == 2 {
            for axis in 0..2 {
                let m = marginal(&f, axis)?;
                self.out.write(&format!("marginal_{tag}_theta{}.csv", axis + 1), &m.to_csv())?;
            }
        }
        Ok(f)
    }

    fn densities(&mut self, alphas: &[f64]) -> CliResult<Vec<PowerPosteriorField>> {
        let target = self.target()?;
        alphas.iter().map(|&a| self.field(&target, a)).collect()
    }

    fn sample(&mut self) -> CliResult<()> {
        let alpha = self.args.alpha.unwrap_or(1.0);
        let sir = sir_sample(&self.ens, alpha, self.args.n_out, &mut self.root.substream(2))?;
        self.out.write("samples_sir.csv", &samples_csv(&sir.samples))?;
        let target = self.target()?;
        let field = self.field(&target, alpha)?;
        let grid_samples = field_inverse_cdf_sample(&field, self.args.n_out, &mut self.root.substream(3))?;
        self.out.write("samples_grid.csv", &samples_csv(&grid_samples))?;
        let summary = SampleSummary {
            alpha,
            n_out: self.args.n_out,
            ess: sir.ess,
            degenerate: sir.degenerate,
            sir_mean: mean_of(&sir.samples),
            grid_mean: Some(mean_of(&grid_samples)),
        };
        self.out.write_json("samples.json", &summary)
    }

    fn spectral(&mut self) -> CliResult<()> {
        let Some((s, log_c)) = self.problem.spectral_constants() else {
            return config("spectral traces need a Euclidean misfit (example1)");
        };
        let t = nystrom_traces(&self.ens)?;
        let state = KernelTraceState::from_nystrom(s, log_c, &t)?;
        let curve = trace_ode_integrate(&state, &self.grid)?;
        self.out.write("spectral.csv", &curve.to_csv())?;
        let closed_form_l1 =
            self.grid.points().iter().map(|&a| trace_closed_form(&state, a)).collect::<Result<Vec<_>, _>>()?;
        let summary = SpectralSummary {
            s,
            log_c,
            l1_0: t.l1,
            l2_0: t.l2,
            l3_0: t.l3,
            c: state.conserved(),
            min_eigenvalue: t.min_eigenvalue,
            max_eigenvalue: t.max_eigenvalue,
            skewness_gap_0: skewness_gap(t.l1, t.l2, t.l3),
            closed_form_l1,
        };
        self.out.write_json("spectral.json", &summary)
    }

    fn mgf(&mut self) -> CliResult<()> {
        let analytic = self.problem.analytic().filter(|_| self.args.analytic);
        let source: &dyn Tractile = match &analytic {
            Some(a) => a,
            None => &self.ens,
        };
        let points = self.grid.points().to_vec();
        let alphas = self.args.alpha.map_or(points.clone(), |a| vec![a]);
        let mut table = String::from("alpha,beta,m\n");
        for &a in &alphas {
            for &b in &points {
                let m = mgf(source, &self.curve, a, b)?;
                let _ = writeln!(table, "{},{},{}", fmt_f64(a), fmt_f64(b), fmt_f64(m));
            }
        }
        self.out.write("mgf.csv", &table)?;

        let mut moments = String::from("alpha,phi1,phi2,phi3,phi4\n");
        for &a in &points {
            let row: Vec<String> = (1..=4).map(|n| fmt_f64(moment_phi_n(&self.ens, a, n))).collect();
            let _ = writeln!(moments, "{},{}", fmt_f64(a), row.join(","));
        }
        self.out.write("moments.csv", &moments)?;

        let mut residual = String::from("alpha,residual\n");
        for (k, r) in bernoulli_residual(&self.curve).iter().enumerate() {
            let value = r.map(fmt_f64).unwrap_or_default();
            let _ = writeln!(residual, "{},{}", fmt_f64(points[k + 1]), value);
        }
        self.out.write("bernoulli.csv", &residual)
    }

    fn example1(&mut self) -> CliResult<()> {
        let Case::One { cfg, y } = self.problem.case else { unreachable!("example1 problem") };
        let mut table = String::from("alpha,phi1_analytic,h_analytic,log_z_analytic,post_mean,post_var\n");
        for &a in self.grid.points() {
            let (m, v) = ex1_conjugate_transition(&cfg, y, a);
            let cols = [
                ex1_analytic_deviance(&cfg, y, a),
                ex1_analytic_tractile(&cfg, y, a),
                ex1_log_evidence(&cfg, y, a),
                m,
                v,
            ];
            let cols: Vec<String> = cols.iter().map(|c| fmt_f64(*c)).collect();
            let _ = writeln!(table, "{},{}", fmt_f64(a), cols.join(","));
        }
        self.out.write("analytic.csv", &table)?;
        self.densities(&self.args.alpha.map_or(TEST_ALPHAS.to_vec(), |a| vec![a]))?;
        Ok(())
    }

    fn example2(&mut self) -> CliResult<()> {
        let Case::Two { cfg, .. } = &self.problem.case else { unreachable!("example2 problem") };
        let theta_t = cfg.theta_t;
        let alphas = self.args.alpha.map_or(vec![0.0, 0.5, 1.0], |a| vec![a]);
        let target = self.target()?;
        let s_hat = target.conditioned.as_ref().map(|(s, _)| *s).expect("conditioned target");
        let mut last = None;
        for &a in &alphas {
            last = Some(self.field(&target, a)?);
        }
        let field = last.expect("at least one alpha");
        let sir = sir_sample(&self.ens, 1.0, self.args.n_out, &mut self.root.substream(2))?;
        let summary = Example2Summary {
            s_hat,
            mean_x0: marginal(&field, 0)?.mean(0),
            mean_a: marginal(&field, 1)?.mean(0),
            sir_mean: mean_of(&sir.samples),
            theta_t,
        };
        self.out.write_json("summary.json", &summary)
    }

    fn example3(&mut self) -> CliResult<()> {
        let Case::Three { cfg, .. } = &self.problem.case else { unreachable!("example3 problem") };
        let modes = cfg.modes.clone();
        let alpha = self.args.alpha.unwrap_or(1.0);
        let field = self.densities(&[alpha])?.pop().expect("one field");
        let (rel_height, radius) = (0.1, 0.15);
        let found = CapturedModes::detect(&field.to_density()?, &modes, rel_height, radius);
        let summary = ModesSummary {
            alpha,
            rel_height,
            radius,
            count: found.count(),
            n_modes: modes.len(),
            maxima: found.maxima,
            captured: found.captured,
        };
        self.out.write_json("modes.json", &summary)
    }
}
