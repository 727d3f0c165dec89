//! Command dispatch: load a config, run the experiment, persist CSVs and
//! build the stdout report.

use std::path::PathBuf;

use ipla_core::diagnostics::RateFit;
use ipla_core::sampler::Algorithm;
use ipla_core::LatentModel;

use crate::config::{Experiment, ExperimentConfig, ModelConfig};
use crate::experiments::{self, SweepResult};
use crate::output::{fmt_f64, fmt_opt, gnuplot_script, OutputSet, Series, Table};
use crate::LabError;

type Result<T> = std::result::Result<T, LabError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    /// Run the sampler and summarise the final iterates
    Run,
    /// Sweep N, the step size or the iteration count and fit rates
    Sweep,
    /// Run IPLA and PGD side by side with shared particle noise
    Compare,
    /// Measure the distance to the mean-field limit on the Gaussian model
    Chaos,
    /// Compare analytic gradients with central differences
    Gradcheck,
    /// Evaluate the three-term error bound
    Bound,
}

impl Command {
    fn experiment(self) -> Experiment {
        match self {
            Command::Run => Experiment::Run,
            Command::Sweep => Experiment::Sweep,
            Command::Compare => Experiment::Compare,
            Command::Chaos => Experiment::Chaos,
            Command::Gradcheck => Experiment::Gradcheck,
            Command::Bound => Experiment::Bound,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Options {
    pub config: PathBuf,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub gnuplot: bool,
}

/// What a command produced. `failure` is set when a check did not pass.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub stdout: Vec<String>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
    pub failure: Option<String>,
}

impl Report {
    fn line(&mut self, s: impl Into<String>) {
        self.stdout.push(s.into());
    }

    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            1
        } else {
            0
        }
    }
}

/// Loads `opts.config`, applies command-line overrides and runs `cmd`.
pub fn execute(cmd: Command, opts: &Options) -> Result<Report> {
    let mut cfg = ExperimentConfig::load(&opts.config)?;
    if let Some(dir) = &opts.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = opts.seed {
        cfg.run.seed = seed;
    }
    run_config(cmd, &cfg, opts.gnuplot)
}

/// Runs `cmd` on an already-parsed configuration.
pub fn run_config(cmd: Command, cfg: &ExperimentConfig, gnuplot: bool) -> Result<Report> {
    if let Some(e) = cfg.experiment {
        if e != cmd.experiment() {
            return Err(LabError::config(
                "experiment",
                format!(
                    "config is for `{}`, not `{}`",
                    experiment_name(e),
                    experiment_name(cmd.experiment())
                ),
            ));
        }
    }
    cfg.validate()?;
    let built = cfg.build_model()?;
    let model: &dyn LatentModel = &*built.model;
    if cmd != Command::Gradcheck {
        cfg.run.validate(model)?;
    }

    std::fs::create_dir_all(&cfg.output_dir)?;
    let mut out = OutputSet::default();
    out.text(cfg.output_dir.join("config.json"), echo_config(cfg).to_json());
    let mut report = Report::default();
    report.line(format!(
        "ipla-lab {} | model {} (d_theta={}, d_x={}) | seed {}",
        env!("CARGO_PKG_VERSION"),
        model.name(),
        model.d_theta(),
        model.d_x(),
        cfg.run.seed
    ));

    let plot = match cmd {
        Command::Run => cmd_run(cfg, model, &mut out, &mut report)?,
        Command::Sweep => cmd_sweep(cfg, model, &mut out, &mut report)?,
        Command::Compare => cmd_compare(cfg, model, &mut out, &mut report)?,
        Command::Chaos => {
            let ModelConfig::Gaussian(p) = &cfg.model else {
                return Err(ipla_core::Error::UnsupportedModel(
                    "the chaos experiment needs the Gaussian model's mean-field oracle".into(),
                )
                .into());
            };
            cmd_chaos(cfg, p, &mut out, &mut report)?
        }
        Command::Gradcheck => {
            cmd_gradcheck(cfg, model, &mut report)?;
            None
        }
        Command::Bound => cmd_bound(cfg, model, &mut out, &mut report)?,
    };
    if gnuplot {
        match plot {
            Some(script) => out.text(cfg.output_dir.join("plot.gp"), script),
            None => report.warnings.push("no plot is defined for this command".into()),
        }
    }
    report.files = out.commit()?;
    Ok(report)
}

fn experiment_name(e: Experiment) -> &'static str {
    match e {
        Experiment::Run => "run",
        Experiment::Sweep => "sweep",
        Experiment::Compare => "compare",
        Experiment::Chaos => "chaos",
        Experiment::Gradcheck => "gradcheck",
        Experiment::Bound => "bound",
    }
}

/// The effective configuration, with dataset paths made absolute so the echo
/// can be re-run from any directory.
fn echo_config(cfg: &ExperimentConfig) -> ExperimentConfig {
    let mut echo = cfg.clone();
    if let ModelConfig::Logistic(l) = &mut echo.model {
        if let Some(path) = &l.dataset {
            let joined = cfg.base_dir.join(path);
            l.dataset = Some(std::fs::canonicalize(&joined).unwrap_or(joined));
        }
    }
    echo
}

fn alg_name(a: Algorithm) -> &'static str {
    match a {
        Algorithm::Ipla => "ipla",
        Algorithm::Pgd => "pgd",
    }
}

fn s<T: ToString>(v: T) -> String {
    v.to_string()
}

fn fit_line(what: &str, fit: &RateFit, expected: &str) -> String {
    format!("{what}: slope {:.4} (expected {expected}), r2 {:.4}", fit.slope, fit.r2)
}

fn path(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    cfg.output_dir.join(name)
}

fn cmd_run(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    out: &mut OutputSet,
    report: &mut Report,
) -> Result<Option<String>> {
    let outcome = experiments::run(cfg, model)?;

    let mut traj = Table::new(&["algorithm", "replicate", "step", "time", "coord", "theta"]);
    let mut summary = Table::new(&["algorithm", "replicate", "coord", "statistic", "value"]);
    for (name, value) in [
        ("library_version", s(env!("CARGO_PKG_VERSION"))),
        ("seed", s(cfg.run.seed)),
        ("n_particles", s(cfg.run.n_particles)),
        ("gamma", fmt_f64(cfg.run.gamma)),
        ("n_steps", s(cfg.run.n_steps)),
        ("replicates", s(cfg.run.replicates)),
    ] {
        summary.push(vec![String::new(), String::new(), String::new(), name.into(), value]);
    }

    for run in &outcome.runs {
        let alg = alg_name(run.record.algorithm);
        for rep in &run.record.replicates {
            for p in &rep.trajectory {
                for (k, t) in p.theta.iter().enumerate() {
                    traj.push(vec![
                        alg.into(),
                        s(rep.replicate),
                        s(p.step),
                        fmt_f64(p.time),
                        s(k),
                        fmt_f64(*t),
                    ]);
                }
            }
            let per_rep = [
                ("initial_theta", &rep.initial_theta),
                ("final_theta", &rep.final_theta),
                ("cloud_mean", &rep.cloud_mean),
                ("cloud_var", &rep.cloud_var),
            ];
            for (stat, values) in per_rep {
                for (k, v) in values.iter().enumerate() {
                    summary.push(vec![alg.into(), s(rep.replicate), s(k), stat.into(), fmt_f64(*v)]);
                }
            }
        }
        let finals = run.record.final_thetas();
        let d = finals[0].len();
        let mut means = Vec::with_capacity(d);
        for k in 0..d {
            let col: Vec<f64> = finals.iter().map(|f| f[k]).collect();
            let (mean, se) = experiments::mean_se(&col);
            summary.push(vec![
                alg.into(),
                String::new(),
                s(k),
                "final_theta_mean".into(),
                fmt_f64(mean),
            ]);
            summary.push(vec![
                alg.into(),
                String::new(),
                s(k),
                "final_theta_se".into(),
                fmt_f64(se),
            ]);
            means.push(mean);
        }
        report.line(format!(
            "{alg}: final theta (mean over {} replicate(s)) = [{}]",
            finals.len(),
            means.iter().map(|m| format!("{m:.6}")).collect::<Vec<_>>().join(", ")
        ));
        if let Some(r) = run.rmse {
            summary.push(vec![
                alg.into(),
                String::new(),
                String::new(),
                "rmse".into(),
                fmt_f64(r.rmse),
            ]);
            summary.push(vec![
                alg.into(),
                String::new(),
                String::new(),
                "rmse_se".into(),
                fmt_f64(r.se),
            ]);
            report.line(format!("{alg}: RMSE to theta* = {:.6} (SE {:.6})", r.rmse, r.se));
        }
    }

    if let Some(cal) = &outcome.discretization.calibration {
        for p in &cal.points {
            let row =
                |stat: &str, v: f64| vec![String::new(), String::new(), fmt_f64(p.gamma), stat.into(), fmt_f64(v)];
            summary.push(row("calibration_rmse", p.rmse));
            summary.push(row("calibration_implied_c1", p.implied_c1));
        }
    }
    if let Some(c1) = outcome.discretization.c1 {
        summary.push(vec![
            "ipla".into(),
            String::new(),
            String::new(),
            "c1".into(),
            fmt_f64(c1),
        ]);
    }
    if let Some(b) = outcome.bound {
        let without = b.concentration + b.ergodic;
        for (stat, v) in [
            ("bound_concentration", Some(b.concentration)),
            ("bound_ergodic", Some(b.ergodic)),
            ("bound_discretization", b.discretization),
            ("bound_total_without_discretization", Some(without)),
            ("bound_total", Some(b.total)),
        ] {
            summary.push(vec![
                "ipla".into(),
                String::new(),
                String::new(),
                stat.into(),
                fmt_opt(v),
            ]);
        }
        report.line(format!(
            "bound terms: concentration {:.6}, ergodic {:.6}, discretization {}, total {:.6}",
            b.concentration,
            b.ergodic,
            b.discretization
                .map_or("n/a (no c1)".to_string(), |d| format!("{d:.6}")),
            b.total
        ));
        if let Some(r) = outcome
            .runs
            .iter()
            .find(|r| r.record.algorithm == Algorithm::Ipla)
            .and_then(|r| r.rmse)
        {
            let ok = r.rmse <= b.total + 3.0 * r.se;
            report.line(format!(
                "check RMSE <= bound total + 3 SE: {} ({:.6} vs {:.6})",
                if ok { "PASS" } else { "FAIL" },
                r.rmse,
                b.total + 3.0 * r.se
            ));
            if b.discretization.is_none() {
                report
                    .warnings
                    .push("bound reported without the discretisation term; set `c1` or `calibration`".into());
            }
        }
    }

    out.table(path(cfg, "run.csv"), &traj)?;
    out.table(path(cfg, "summary.csv"), &summary)?;
    let series = cfg
        .algorithm
        .algorithms()
        .into_iter()
        .map(|a| Series {
            file: "run.csv",
            x: 4,
            y: 6,
            filters: vec![(1, alg_name(a).into()), (5, "0".into())],
            title: format!("{} theta_0", alg_name(a)),
        })
        .collect::<Vec<_>>();
    Ok(Some(gnuplot_script(
        "theta trajectories",
        "time n*gamma",
        "theta",
        false,
        false,
        &series,
    )))
}

fn cmd_sweep(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    out: &mut OutputSet,
    report: &mut Report,
) -> Result<Option<String>> {
    let outcome = experiments::sweep(cfg, model)?;
    report.warnings.extend(outcome.warnings);
    let mut sweep = Table::new(&["sweep", "algorithm", "scale", "replicate", "statistic", "value"]);
    let mut rates = Table::new(&[
        "sweep",
        "algorithm",
        "slope",
        "intercept",
        "r2",
        "points",
        "expected_slope",
    ]);
    let mu = model.analytic().and_then(|a| a.mu);
    let mut plot = None;

    for (alg, result) in &outcome.results {
        let a = alg_name(*alg);
        let agg = |kind: &str, scale: String, stat: &str, v: f64| {
            vec![kind.into(), a.into(), scale, String::new(), stat.into(), fmt_f64(v)]
        };
        match result {
            SweepResult::NParticles { points, fit } => {
                for p in points {
                    for (r, sq) in p.squares.iter().enumerate() {
                        sweep.push(vec![
                            "n_particles".into(),
                            a.into(),
                            s(p.n_particles),
                            s(r),
                            "stationary_sq_error".into(),
                            fmt_f64(*sq),
                        ]);
                    }
                    sweep.push(agg("n_particles", s(p.n_particles), "rmse", p.estimate.rmse));
                    sweep.push(agg("n_particles", s(p.n_particles), "rmse_se", p.estimate.se));
                    if let Some(c) = p.concentration {
                        sweep.push(agg("n_particles", s(p.n_particles), "concentration", c));
                    }
                    report.line(format!(
                        "{a} N={}: stationary RMSE {:.6} (SE {:.6}){}",
                        p.n_particles,
                        p.estimate.rmse,
                        p.estimate.se,
                        p.concentration
                            .map_or(String::new(), |c| format!(", concentration term {c:.6}"))
                    ));
                }
                if let Some(f) = fit {
                    rates.push(rate_row("n_particles", a, f, points.len(), "-0.5".into()));
                    report.line(fit_line(&format!("{a} RMSE vs N"), f, "-0.5"));
                }
                plot.get_or_insert_with(|| {
                    sweep_plot("stationary RMSE vs N", "N", &cfg.algorithm.algorithms(), true, true)
                });
            }
            SweepResult::Iterations {
                points,
                floor,
                prefix,
                fit,
            } => {
                for (i, p) in points.iter().enumerate() {
                    for (r, sq) in p.squares.iter().enumerate() {
                        sweep.push(vec![
                            "iterations".into(),
                            a.into(),
                            s(p.n),
                            s(r),
                            "sq_error".into(),
                            fmt_f64(*sq),
                        ]);
                    }
                    sweep.push(agg("iterations", s(p.n), "time", p.time));
                    sweep.push(agg("iterations", s(p.n), "rmse", p.estimate.rmse));
                    sweep.push(agg("iterations", s(p.n), "rmse_se", p.estimate.se));
                    sweep.push(agg(
                        "iterations",
                        s(p.n),
                        "in_fit_prefix",
                        if i < *prefix { 1.0 } else { 0.0 },
                    ));
                }
                sweep.push(agg("iterations", String::new(), "error_floor", *floor));
                report.line(format!(
                    "{a}: error floor {floor:.6}; {prefix} of {} checkpoints lie above 3x floor",
                    points.len()
                ));
                if let Some(f) = fit {
                    let expected = mu.map_or("-mu".to_string(), |m| fmt_f64(-m));
                    rates.push(rate_row("iterations", a, f, *prefix, expected.clone()));
                    report.line(fit_line(&format!("{a} log RMSE vs time"), f, &expected));
                }
                plot.get_or_insert_with(|| {
                    sweep_plot("RMSE vs iteration", "n", &cfg.algorithm.algorithms(), false, true)
                });
            }
            SweepResult::Gamma { estimate, fit } => {
                for p in &estimate.points {
                    sweep.push(agg("gamma", fmt_f64(p.gamma), "rmse", p.rmse));
                    sweep.push(agg("gamma", fmt_f64(p.gamma), "rmse_se", p.se));
                    sweep.push(agg("gamma", fmt_f64(p.gamma), "implied_c1", p.implied_c1));
                    report.line(format!(
                        "gamma={}: strong error {:.6} (SE {:.6}), implied c1 {:.6}",
                        fmt_f64(p.gamma),
                        p.rmse,
                        p.se,
                        p.implied_c1
                    ));
                }
                sweep.push(agg("gamma", String::new(), "reference_gamma", estimate.reference_gamma));
                sweep.push(agg("gamma", String::new(), "c1", estimate.c1));
                sweep.push(agg("gamma", String::new(), "c1_spread", estimate.spread()));
                report.line(format!(
                    "calibrated c1 {:.6}, max/min implied c1 {:.4}",
                    estimate.c1,
                    estimate.spread()
                ));
                if let Some(f) = fit {
                    rates.push(rate_row("gamma", a, f, estimate.points.len(), "0.5".into()));
                    report.line(fit_line("strong error vs gamma", f, ">= 0.5"));
                }
                plot.get_or_insert_with(|| {
                    sweep_plot("strong error vs gamma", "gamma", &[Algorithm::Ipla], true, true)
                });
            }
        }
    }
    out.table(path(cfg, "sweep.csv"), &sweep)?;
    out.table(path(cfg, "rates.csv"), &rates)?;
    Ok(plot)
}

fn rate_row(kind: &str, alg: &str, f: &RateFit, points: usize, expected: String) -> Vec<String> {
    vec![
        kind.into(),
        alg.into(),
        fmt_f64(f.slope),
        fmt_f64(f.intercept),
        fmt_f64(f.r2),
        s(points),
        expected,
    ]
}

fn sweep_plot(title: &str, xlabel: &str, algs: &[Algorithm], logx: bool, logy: bool) -> String {
    let series: Vec<Series> = algs
        .iter()
        .map(|a| Series {
            file: "sweep.csv",
            x: 3,
            y: 6,
            filters: vec![(2, alg_name(*a).into()), (5, "rmse".into())],
            title: alg_name(*a).to_uppercase(),
        })
        .collect();
    gnuplot_script(title, xlabel, "RMSE", logx, logy, &series)
}

fn cmd_compare(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    out: &mut OutputSet,
    report: &mut Report,
) -> Result<Option<String>> {
    if cfg.algorithm != crate::config::AlgorithmChoice::Both {
        report
            .warnings
            .push("compare always runs both algorithms; `algorithm` is ignored".into());
    }
    let outcome = experiments::compare(cfg, model)?;
    let mut table = Table::new(&["step", "time", "coord", "statistic", "value"]);
    for row in &outcome.rows {
        let mut push = |stat: &str, v: f64| {
            table.push(vec![
                s(row.step),
                fmt_f64(row.time),
                String::new(),
                stat.into(),
                fmt_f64(v),
            ]);
        };
        if let (Some(a), Some(b)) = (row.rmse_ipla, row.rmse_pgd) {
            push("rmse_ipla", a.rmse);
            push("rmse_ipla_se", a.se);
            push("rmse_pgd", b.rmse);
            push("rmse_pgd_se", b.se);
        }
        push("theta_gap_rms", row.gap.rmse);
        push("theta_gap_se", row.gap.se);
    }
    let blank = |stat: &str, coord: String, v: f64| vec![String::new(), String::new(), coord, stat.into(), fmt_f64(v)];
    if let Some((a, b)) = outcome.stationary {
        for (stat, v) in [
            ("stationary_rmse_ipla", a.rmse),
            ("stationary_rmse_ipla_se", a.se),
            ("stationary_rmse_pgd", b.rmse),
            ("stationary_rmse_pgd_se", b.se),
        ] {
            table.push(blank(stat, String::new(), v));
        }
        report.line(format!(
            "stationary RMSE: IPLA {:.6} (SE {:.6}), PGD {:.6} (SE {:.6})",
            a.rmse, a.se, b.rmse, b.se
        ));
    }
    if let Some(last) = outcome.rows.last() {
        report.line(format!("final theta gap (RMS over replicates) {:.6}", last.gap.rmse));
    }
    if let Some(rf) = &outcome.reference {
        for k in 0..rf.mean.len() {
            table.push(blank("reference_mean", s(k), rf.mean[k]));
            table.push(blank("reference_se", s(k), rf.se[k]));
        }
        for c in &rf.checks {
            let a = alg_name(c.algorithm);
            for k in 0..c.mean.len() {
                table.push(blank(&format!("final_mean_{a}"), s(k), c.mean[k]));
                table.push(blank(&format!("final_se_{a}"), s(k), c.se[k]));
                table.push(blank(&format!("z_vs_reference_{a}"), s(k), c.z[k]));
            }
            report.line(format!(
                "{a}: final theta {} vs reference {}: z = {}",
                fmt_list(&c.mean),
                fmt_list(&rf.mean),
                fmt_list(&c.z)
            ));
        }
        report.line(format!(
            "check both algorithms within 3 SE of the reference: {}",
            if rf.passed() { "PASS" } else { "FAIL" }
        ));
    }
    out.table(path(cfg, "compare.csv"), &table)?;
    let series = ["rmse_ipla", "rmse_pgd", "theta_gap_rms"]
        .iter()
        .map(|stat| Series {
            file: "compare.csv",
            x: 2,
            y: 5,
            filters: vec![(4, (*stat).into())],
            title: (*stat).into(),
        })
        .collect::<Vec<_>>();
    Ok(Some(gnuplot_script(
        "IPLA vs PGD",
        "time n*gamma",
        "error",
        false,
        true,
        &series,
    )))
}

fn fmt_list(v: &[f64]) -> String {
    format!(
        "[{}]",
        v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(", ")
    )
}

fn cmd_chaos(
    cfg: &ExperimentConfig,
    params: &ipla_core::toy::GaussianHierarchicalParams,
    out: &mut OutputSet,
    report: &mut Report,
) -> Result<Option<String>> {
    let outcome = experiments::chaos(cfg, params)?;
    report.warnings.extend(outcome.warnings);
    let mut table = Table::new(&["n_particles", "replicate", "statistic", "value"]);
    for rec in &outcome.records {
        for (r, (t, p)) in rec.theta_sup.iter().zip(&rec.particle_sup).enumerate() {
            table.push(vec![s(rec.n_particles), s(r), "theta_sup".into(), fmt_f64(*t)]);
            table.push(vec![s(rec.n_particles), s(r), "particle_sup".into(), fmt_f64(*p)]);
        }
        let mean_p = rec.particle_sup.iter().sum::<f64>() / rec.particle_sup.len() as f64;
        table.push(vec![
            s(rec.n_particles),
            String::new(),
            "mean_theta_sup".into(),
            fmt_f64(rec.mean_theta_sup()),
        ]);
        table.push(vec![
            s(rec.n_particles),
            String::new(),
            "se_theta_sup".into(),
            fmt_f64(rec.se_theta_sup()),
        ]);
        table.push(vec![
            s(rec.n_particles),
            String::new(),
            "mean_particle_sup".into(),
            fmt_f64(mean_p),
        ]);
        report.line(format!(
            "N={}: mean sup |theta - theta_MF| {:.6} (SE {:.6})",
            rec.n_particles,
            rec.mean_theta_sup(),
            rec.se_theta_sup()
        ));
    }
    match &outcome.fit {
        Some(f) => {
            for (stat, v) in [("fit_slope", f.slope), ("fit_intercept", f.intercept), ("fit_r2", f.r2)] {
                table.push(vec![String::new(), String::new(), stat.into(), fmt_f64(v)]);
            }
            report.line(fit_line("sup distance vs N", f, "-0.5"));
        }
        None => report.line("no slope fitted (fewer than three particle counts)"),
    }
    out.table(path(cfg, "chaos.csv"), &table)?;
    let series = [Series {
        file: "chaos.csv",
        x: 1,
        y: 4,
        filters: vec![(3, "mean_theta_sup".into())],
        title: "mean sup distance".into(),
    }];
    Ok(Some(gnuplot_script(
        "propagation of chaos",
        "N",
        "sup |theta - theta_MF|",
        true,
        true,
        &series,
    )))
}

fn cmd_gradcheck(cfg: &ExperimentConfig, model: &dyn LatentModel, report: &mut Report) -> Result<()> {
    let g = experiments::gradcheck(model, &cfg.gradcheck)?;
    report.line(format!(
        "gradcheck over {} points (tolerance {}): max relative error theta {:.3e}, x {:.3e}",
        g.points,
        fmt_f64(g.tolerance),
        g.theta_max,
        g.x_max
    ));
    report.line(format!(
        "worst point #{} in the {} block (coordinate {}): theta = {}, x = {}",
        g.worst_point,
        g.worst_block(),
        match g.worst_block() {
            "theta" => g.worst.theta_worst_coord,
            _ => g.worst.x_worst_coord,
        },
        fmt_list(&g.worst_theta),
        fmt_list(&g.worst_x)
    ));
    if g.passed() {
        report.line("gradcheck PASS");
    } else {
        report.line("gradcheck FAIL");
        report.failure = Some(format!(
            "gradient check failed in the {} block: relative error {:.3e} at point #{}",
            g.worst_block(),
            g.worst.max_rel_err(),
            g.worst_point
        ));
    }
    Ok(())
}

fn cmd_bound(
    cfg: &ExperimentConfig,
    model: &dyn LatentModel,
    out: &mut OutputSet,
    report: &mut Report,
) -> Result<Option<String>> {
    let disc = experiments::resolve_c1(cfg, model)?;
    if disc.c1.is_none() {
        report
            .warnings
            .push("no discretisation constant; the bound omits that term".into());
    }
    let rows = experiments::bound_table(cfg, model, disc.c1)?;
    let mut table = Table::new(&[
        "n_particles",
        "gamma",
        "n",
        "z0_dist",
        "concentration",
        "ergodic",
        "discretization",
        "total",
    ]);
    for r in &rows {
        table.push(vec![
            s(r.n_particles),
            fmt_f64(r.gamma),
            s(r.n),
            fmt_f64(r.z0_dist),
            fmt_f64(r.terms.concentration),
            fmt_f64(r.terms.ergodic),
            fmt_opt(r.terms.discretization),
            fmt_f64(r.terms.total),
        ]);
        report.line(format!(
            "N={} gamma={} n={}: concentration {:.6}, ergodic {:.6}, discretization {}, total {:.6}",
            r.n_particles,
            fmt_f64(r.gamma),
            r.n,
            r.terms.concentration,
            r.terms.ergodic,
            r.terms.discretization.map_or("n/a".into(), |d| format!("{d:.6}")),
            r.terms.total
        ));
    }
    if let Some(c1) = disc.c1 {
        report.line(format!("c1 = {c1:.6}"));
    }
    out.table(path(cfg, "bound.csv"), &table)?;
    let series = [Series {
        file: "bound.csv",
        x: 1,
        y: 8,
        filters: vec![],
        title: "total".into(),
    }];
    Ok(Some(gnuplot_script("error bound", "N", "bound", true, true, &series)))
}
