//! Command-line front end.
//!
//! One thin binary dispatches to these handlers; all heavy lifting lives in
//! the library modules. Every subcommand takes `--seed` and is fully
//! deterministic given its options, including output file bytes. Option
//! precedence is flags, then `--config` file entries (flat `key=value`
//! lines), then built-in defaults. `--threads` caps the worker pool without
//! affecting results; the `STABLE_DML_THREADS` environment variable is the
//! fallback when the flag is absent.

mod io;
mod resolve;

use clap::{Arg, ArgMatches, Command};

use crate::diagnostics::{
    counterexample_run, exp_rate2_ks, loo_stability, ols_slope, regime_check, RegimeRule,
    StabilityOptions,
};
use crate::error::{Error, Result};
use crate::estimator::{estimate, EstimateOptions, FitMode, NuisanceMode};
use crate::learners::{BRule, BaseKind, LearnerConfig, MRule};
use crate::moments::MomentKind;
use crate::seed::SeedSpec;
use crate::simulation::{qq_points, run_monte_carlo, DgpConfig, McConfig, XDist};

use resolve::Resolver;

fn arg(name: &'static str, help: &'static str) -> Arg {
    Arg::new(name).long(name).help(help)
}

fn darg(name: &'static str, help: &'static str, default: &'static str) -> Arg {
    arg(name, help).default_value(default)
}

fn common_args() -> Vec<Arg> {
    vec![
        darg("seed", "master seed; all randomness derives from it", "42"),
        darg(
            "threads",
            "worker thread cap (0 = all cores); results never depend on it",
            "0",
        ),
        arg("config", "flat key=value config file (flags take precedence)"),
    ]
}

fn learner_args() -> Vec<Arg> {
    vec![
        darg("base", "base learner: one_nn or tree", "one_nn"),
        darg(
            "m-rule",
            "subsample size rule: n, n^<alpha>, n^<p>/<q>, or an integer",
            "n^0.49",
        ),
        darg("b-rule", "bag count rule: auto, exact, or an integer", "auto"),
    ]
}

fn dgp_args() -> Vec<Arg> {
    vec![
        darg("theta0", "true treatment effect of the synthetic design", "0.5"),
        darg("coef", "confounder coefficient of the synthetic design", "1.0"),
        darg("nx", "number of covariates", "1"),
        darg("sparse-index", "which covariate actually confounds", "0"),
        darg("x-dist", "covariate marginal: std_normal or uniform", "std_normal"),
    ]
}

fn build_cli() -> Command {
    Command::new("stable-dml")
        .about(
            "Debiased moment estimation without sample splitting, with \
             subsample-bagged nuisance learners and stability diagnostics",
        )
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(
            Command::new("simulate")
                .about("Monte Carlo coverage experiment on synthetic partially linear data")
                .args(common_args())
                .args(learner_args())
                .args(dgp_args())
                .arg(arg(
                    "preset",
                    "experiment grid preset: paper-1nn-049, paper-1nn-1011, paper-1nn-n, \
                     paper-rf-049, paper-rf-1011, or paper-full (overrides n/nx/base/m-rule/cv)",
                ))
                .arg(darg("n", "sample size per replication", "500"))
                .arg(darg(
                    "cv",
                    "comma list of fitting modes: 1 = no split, k >= 2 = k-fold cross-fit",
                    "1,2",
                ))
                .arg(darg("reps", "Monte Carlo replications per config", "1000"))
                .arg(darg("level", "two-sided confidence level", "0.95"))
                .arg(darg("out", "summary CSV path (- for stdout)", "summary.csv"))
                .arg(arg("raw-out", "optional per-replication CSV path")),
        )
        .subcommand(
            Command::new("estimate")
                .about("Estimate a debiased moment on a user CSV (columns y, t..., x..., w...)")
                .args(common_args())
                .args(learner_args())
                .arg(arg("data", "input CSV path").required(true))
                .arg(darg("moment", "moment model: plr, pliv, or ate", "plr"))
                .arg(darg(
                    "cv",
                    "fitting mode: 1 = no split, k >= 2 = k-fold cross-fit",
                    "1",
                ))
                .arg(darg("level", "two-sided confidence level", "0.95"))
                .arg(darg(
                    "nuisance",
                    "nuisance source: learner, or zero (debug: plain least squares)",
                    "learner",
                ))
                .arg(darg("k", "moment order for the regime advisory", "4"))
                .arg(darg("out", "output path (- for stdout)", "-"))
                .arg(darg("format", "output format: json or csv", "json")),
        )
        .subcommand(
            Command::new("stability")
                .about("Leave-one-out stability norms of the fitted moment pieces across n")
                .args(common_args())
                .args(learner_args())
                .args(dgp_args())
                .arg(darg("n", "comma list of sample sizes", "100,200,400"))
                .arg(darg("probes", "positions probed per replication (0 = min(n, 20))", "0"))
                .arg(darg("mc-reps", "Monte Carlo replications per n", "3"))
                .arg(darg("sup-points", "fresh points approximating the sup norm", "200"))
                .arg(darg(
                    "coupled",
                    "reuse ensemble randomness in the refit (true/false)",
                    "true",
                ))
                .arg(darg("norm-r", "report the sup statistic in the L^(2r) norm", "1"))
                .arg(darg("out", "stability CSV path (- for stdout)", "stability.csv")),
        )
        .subcommand(
            Command::new("counterexample")
                .about(
                    "Verify the nearest-neighbor construction where full-sample reuse fails: \
                     interval-width law, offset instability rate, equicontinuity drift",
                )
                .args(common_args())
                .arg(darg("n", "comma list of sample sizes", "10000"))
                .arg(darg("reps", "replications per sample size", "2000"))
                .arg(darg("out", "summary CSV path (- for stdout)", "counterexample.csv"))
                .arg(arg("samples-out", "optional per-replication sample CSV path")),
        )
        .subcommand(
            Command::new("regime")
                .about("Advisory check: is a subsample/bag configuration in the stable regime?")
                .args(common_args())
                .arg(darg("n", "sample size", "1000"))
                .arg(darg("m", "subsample size", "30"))
                .arg(darg("B", "bag count", "100"))
                .arg(darg("rule", "bag-count threshold rule: moment or relaxed", "moment"))
                .arg(darg("k", "moment order (moment rule)", "4"))
                .arg(darg("r", "norm order (relaxed rule)", "2"))
                .arg(darg("out", "optional CSV path (- prints the verdict only)", "-")),
        )
        .subcommand(
            Command::new("qq")
                .about("Q-Q pairs of standardized estimates from a raw replication CSV")
                .args(common_args())
                .arg(arg("input", "raw replication CSV (from simulate --raw-out)").required(true))
                .arg(arg("filter-config", "keep rows whose config id contains this substring"))
                .arg(arg("filter-cv", "keep rows with this cv value"))
                .arg(darg("out", "Q-Q CSV path (- for stdout)", "qq.csv")),
        )
}

/// Entry point used by the binary; returns the process exit code.
pub fn run() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .try_init();
    let matches = match build_cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&matches) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Io(_) => 3,
                _ => 2,
            }
        }
    }
}

fn known_keys(name: &str) -> Vec<String> {
    build_cli()
        .find_subcommand(name)
        .expect("known subcommand")
        .get_arguments()
        .map(|a| a.get_id().to_string())
        .filter(|id| id != "help")
        .collect()
}

fn dispatch(matches: &ArgMatches) -> Result<()> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let r = Resolver::new(sub, &known_keys(name))?;
    configure_threads(&r)?;
    match name {
        "simulate" => cmd_simulate(&r),
        "estimate" => cmd_estimate(&r),
        "stability" => cmd_stability(&r),
        "counterexample" => cmd_counterexample(&r),
        "regime" => cmd_regime(&r),
        "qq" => cmd_qq(&r),
        other => Err(Error::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn configure_threads(r: &Resolver) -> Result<()> {
    let mut threads: usize = r.get("threads")?;
    if threads == 0 {
        if let Ok(env) = std::env::var("STABLE_DML_THREADS") {
            threads = env.parse().map_err(|_| {
                Error::Config(format!("invalid STABLE_DML_THREADS value '{env}'"))
            })?;
        }
    }
    if threads > 0 {
        // build_global fails when a pool already exists (tests); the worker
        // cap only affects scheduling, never results
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    Ok(())
}

fn parse_base(r: &Resolver) -> Result<BaseKind> {
    r.get::<BaseKind>("base")
}

fn parse_learner(r: &Resolver) -> Result<LearnerConfig> {
    Ok(LearnerConfig::new(
        parse_base(r)?,
        r.get::<MRule>("m-rule")?,
        r.get::<BRule>("b-rule")?,
    ))
}

fn parse_x_dist(raw: &str) -> Result<XDist> {
    match raw {
        "std_normal" => Ok(XDist::StdNormal),
        "uniform" => Ok(XDist::UniformUnitVar),
        other => Err(Error::Config(format!(
            "unknown x-dist '{other}' (expected std_normal or uniform)"
        ))),
    }
}

fn parse_dgp(r: &Resolver) -> Result<DgpConfig> {
    Ok(DgpConfig {
        theta0: r.get("theta0")?,
        n_x: r.get("nx")?,
        sparse_index: r.get("sparse-index")?,
        coef: r.get("coef")?,
        x_dist: parse_x_dist(&r.get_string("x-dist")?)?,
    })
}

fn parse_modes(raw: &[usize]) -> Result<Vec<FitMode>> {
    raw.iter()
        .map(|&cv| match cv {
            0 => Err(Error::Config("cv must be at least 1".to_string())),
            1 => Ok(FitMode::NoSplit),
            k => Ok(FitMode::CrossFit(k)),
        })
        .collect()
}

struct GridCell {
    n: usize,
    n_x: usize,
    base: BaseKind,
    m_rule: MRule,
}

fn preset_grid(preset: &str) -> Result<Vec<GridCell>> {
    let one_nn_grid = |m_rule: MRule| -> Vec<GridCell> {
        let mut cells = Vec::new();
        for &n in &[50usize, 100, 500, 1000] {
            for &n_x in &[1usize, 2] {
                cells.push(GridCell {
                    n,
                    n_x,
                    base: BaseKind::OneNn,
                    m_rule,
                });
            }
        }
        cells
    };
    let rf_grid = |m_rule: MRule| -> Vec<GridCell> {
        let mut cells = Vec::new();
        for &n in &[50usize, 100, 500, 1000] {
            for &n_x in &[5usize, 10] {
                cells.push(GridCell {
                    n,
                    n_x,
                    base: BaseKind::Tree,
                    m_rule,
                });
            }
        }
        cells
    };
    Ok(match preset {
        "paper-1nn-049" => one_nn_grid(MRule::Power(0.49)),
        "paper-1nn-1011" => one_nn_grid(MRule::Power(10.0 / 11.0)),
        "paper-1nn-n" => one_nn_grid(MRule::Power(1.0)),
        "paper-rf-049" => rf_grid(MRule::Power(0.49)),
        "paper-rf-1011" => rf_grid(MRule::Power(10.0 / 11.0)),
        "paper-full" => {
            let mut all = Vec::new();
            for p in [
                "paper-1nn-049",
                "paper-1nn-1011",
                "paper-1nn-n",
                "paper-rf-049",
                "paper-rf-1011",
            ] {
                all.extend(preset_grid(p)?);
            }
            all
        }
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}' (see --help for the list)"
            )))
        }
    })
}

fn cmd_simulate(r: &Resolver) -> Result<()> {
    let seed_value: u64 = r.get("seed")?;
    let seed = SeedSpec::new(seed_value);
    let modes = parse_modes(&r.get_list::<usize>("cv")?)?;
    let reps: usize = r.get("reps")?;
    let level: f64 = r.get("level")?;
    let base_dgp = parse_dgp(r)?;
    let b_rule: BRule = r.get("b-rule")?;

    let cells = match r.get_string_opt("preset") {
        Some(preset) => preset_grid(&preset)?,
        None => vec![GridCell {
            n: r.get("n")?,
            n_x: r.get("nx")?,
            base: parse_base(r)?,
            m_rule: r.get::<MRule>("m-rule")?,
        }],
    };

    let mut all_rows = Vec::new();
    let mut all_raws = Vec::new();
    for (idx, cell) in cells.iter().enumerate() {
        let mc = McConfig {
            dgp: DgpConfig {
                n_x: cell.n_x,
                ..base_dgp.clone()
            },
            n: cell.n,
            learner: LearnerConfig::new(cell.base, cell.m_rule, b_rule),
            modes: modes.clone(),
            replications: reps,
            level,
        };
        let (rows, raws) = run_monte_carlo(&mc, &seed.child("cell", idx as u64))?;
        for row in &rows {
            eprintln!(
                "{}: bias={:.4} std={:.4} std_est={:.4} cov95={:.3}",
                row.config, row.bias, row.std, row.std_est, row.cov95
            );
        }
        let chunked: Vec<Vec<_>> = raws.chunks_exact(reps).map(|c| c.to_vec()).collect();
        all_raws.extend(chunked);
        all_rows.extend(rows);
    }

    io::write_output(&r.get_string("out")?, &io::summary_csv(&all_rows))?;
    if let Some(raw_path) = r.get_string_opt("raw-out") {
        io::write_output(&raw_path, &io::raw_csv(&all_rows, &all_raws))?;
    }
    Ok(())
}

fn cmd_estimate(r: &Resolver) -> Result<()> {
    let data = io::read_dataset_csv(&r.get_string("data")?)?;
    let kind = match r.get_string("moment")?.as_str() {
        "plr" => MomentKind::Plr,
        "pliv" => MomentKind::Pliv,
        "ate" => MomentKind::Ate,
        other => {
            return Err(Error::Config(format!(
                "unknown moment '{other}' (expected plr, pliv, or ate)"
            )))
        }
    };
    let learner = parse_learner(r)?;
    let mode = match r.get::<usize>("cv")? {
        0 => return Err(Error::Config("cv must be at least 1".to_string())),
        1 => FitMode::NoSplit,
        k => FitMode::CrossFit(k),
    };
    let nuisance = match r.get_string("nuisance")?.as_str() {
        "learner" => NuisanceMode::Learner,
        "zero" => NuisanceMode::Zero,
        other => {
            return Err(Error::Config(format!(
                "unknown nuisance mode '{other}' (expected learner or zero)"
            )))
        }
    };
    let opts = EstimateOptions {
        learner: learner.clone(),
        mode,
        level: r.get("level")?,
        nuisance,
    };
    let seed = SeedSpec::new(r.get("seed")?);
    let result = estimate(&data, &kind, &opts, &seed)?;

    let (m, b) = learner.resolve(data.n())?;
    let advisory = regime_check(data.n(), m, b, RegimeRule::MomentBound { k: r.get("k")? })?;
    let out = match r.get_string("format")?.as_str() {
        "json" => io::estimate_json(&result, &advisory, m, b),
        "csv" => io::estimate_csv(&result),
        other => {
            return Err(Error::Config(format!(
                "unknown format '{other}' (expected json or csv)"
            )))
        }
    };
    io::write_output(&r.get_string("out")?, &out)
}

fn cmd_stability(r: &Resolver) -> Result<()> {
    let ns = r.get_list::<usize>("n")?;
    let learner = parse_learner(r)?;
    let dgp = parse_dgp(r)?;
    let opts = StabilityOptions {
        probes: r.get("probes")?,
        replications: r.get("mc-reps")?,
        sup_points: r.get("sup-points")?,
        coupled: r.get("coupled")?,
        norm_order_r: r.get("norm-r")?,
    };
    let seed = SeedSpec::new(r.get("seed")?);
    let mut reports = Vec::with_capacity(ns.len());
    for &n in &ns {
        let report = loo_stability(
            &dgp,
            n,
            &learner,
            &MomentKind::Plr,
            &opts,
            &seed.child("n", n as u64),
        )?;
        eprintln!(
            "n={}: sup_loo={:.6} nu_fresh_l2={:.6}",
            report.n, report.sup_loo, report.nu_fresh_l2
        );
        reports.push(report);
    }
    if ns.len() >= 3 && reports.iter().all(|r| r.sup_loo > 0.0) {
        let pts: Vec<(f64, f64)> = reports
            .iter()
            .map(|r| ((r.n as f64).ln(), r.sup_loo.ln()))
            .collect();
        let (slope, se) = ols_slope(&pts);
        eprintln!(
            "log-log slope of sup_loo vs n: {:.4} (se {})",
            slope,
            se.map_or("n/a".to_string(), |s| format!("{s:.4}"))
        );
    }
    io::write_output(&r.get_string("out")?, &io::stability_csv(&reports))
}

fn cmd_counterexample(r: &Resolver) -> Result<()> {
    let ns = r.get_list::<usize>("n")?;
    let reps: usize = r.get("reps")?;
    let seed = SeedSpec::new(r.get("seed")?);
    let mut reports = Vec::with_capacity(ns.len());
    for &n in &ns {
        let report = counterexample_run(n, reps, &seed.child("n", n as u64))?;
        let ks = exp_rate2_ks(&report.lambda)?;
        let mean_lambda = report.lambda.iter().sum::<f64>() / report.lambda.len() as f64;
        eprintln!(
            "n={n}: mean(lambda)={mean_lambda:.4} ks_exp2={ks:.4} nu_loo_l2={:.6}",
            report.nu_loo_l2
        );
        reports.push((report, ks));
    }
    if reports.len() >= 3 {
        let pts: Vec<(f64, f64)> = reports
            .iter()
            .map(|(rep, _)| ((rep.n as f64).ln(), rep.nu_loo_l2.ln()))
            .collect();
        let (slope, _) = ols_slope(&pts);
        eprintln!("log-log slope of nu_loo_l2 vs n: {slope:.4}");
    }
    io::write_output(&r.get_string("out")?, &io::counterexample_summary_csv(&reports))?;
    if let Some(path) = r.get_string_opt("samples-out") {
        io::write_output(&path, &io::counterexample_samples_csv(&reports))?;
    }
    Ok(())
}

fn cmd_regime(r: &Resolver) -> Result<()> {
    let n: usize = r.get("n")?;
    let m: usize = r.get("m")?;
    let b: usize = r.get("B")?;
    let rule_name = r.get_string("rule")?;
    let (rule, param) = match rule_name.as_str() {
        "moment" => {
            let k: f64 = r.get("k")?;
            (RegimeRule::MomentBound { k }, k)
        }
        "relaxed" => {
            let rr: f64 = r.get("r")?;
            (RegimeRule::RelaxedBound { r: rr }, rr)
        }
        other => {
            return Err(Error::Config(format!(
                "unknown rule '{other}' (expected moment or relaxed)"
            )))
        }
    };
    let report = regime_check(n, m, b, rule)?;
    println!("verdict: {} ({})", report.verdict, report.explanation);
    let out = r.get_string("out")?;
    if out != "-" {
        io::write_output(&out, &io::regime_csv(n, m, b, &rule_name, param, &report))?;
    }
    Ok(())
}

fn cmd_qq(r: &Resolver) -> Result<()> {
    let thetas = io::read_raw_estimates(
        &r.get_string("input")?,
        r.get_string_opt("filter-config").as_deref(),
        r.get_opt::<usize>("filter-cv")?,
    )?;
    let qq = qq_points(&thetas)?;
    if qq.zero_variance {
        eprintln!("estimates have zero variance; emitting an empty table");
    }
    io::write_output(&r.get_string("out")?, &io::qq_csv(&qq))
}

impl std::str::FromStr for XDist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        parse_x_dist(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn command_tree_is_well_formed() {
        build_cli().debug_assert();
    }

    #[test]
    fn presets_have_the_documented_grid_sizes() {
        assert_eq!(preset_grid("paper-1nn-049").unwrap().len(), 8);
        assert_eq!(preset_grid("paper-rf-049").unwrap().len(), 8);
        assert_eq!(preset_grid("paper-full").unwrap().len(), 40);
        assert!(preset_grid("paper-nonsense").is_err());
    }

    #[test]
    fn every_subcommand_documents_every_option() {
        for name in [
            "simulate",
            "estimate",
            "stability",
            "counterexample",
            "regime",
            "qq",
        ] {
            let cli = build_cli();
            let sub = cli.find_subcommand(name).unwrap();
            for a in sub.get_arguments() {
                if a.get_id() == "help" {
                    continue;
                }
                assert!(
                    a.get_help().is_some(),
                    "option --{} of {name} lacks help text",
                    a.get_id()
                );
            }
        }
    }
}
