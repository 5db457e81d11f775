//! Command-line front end: parse an experiment config, dispatch one
//! subcommand, write reports and tables into the output directory.
//!
//! Every run is a pure function of (config file, --seed override): reports
//! carry no timestamps, randomness flows from the single master seed through
//! counter-derived streams, and --workers only caps the thread pool, never
//! the results.  Exit codes: 0 success, 2 configuration or I/O error, 3
//! numerical failure, 4 when --strict is set and a report came back flagged
//! invalid.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{BarrierSource, ExperimentConfig};
use crate::controls::Control;
use crate::dynamics::{simulate_sde, SdeOpts};
use crate::exitlab::{
    cycle_diagnostic, exit_location_stats, importance_sampled_exit, run_exit_mc, BarrierRef,
    ExitExperiment,
};
use crate::quasipotential::{barrier_height, quasipotential_point};
use crate::report;
use crate::stream::rng_for;
use crate::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "kramers",
    version,
    about = "First-exit laboratory for dynamical systems under small accelerated jump noise"
)]
pub struct Cli {
    /// Experiment configuration file.
    #[arg(long)]
    pub config: PathBuf,
    /// Master seed, overriding run.seed from the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker-thread cap; results never depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    /// Output directory for reports and tables.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Exit nonzero when a report is flagged invalid.
    #[arg(long)]
    pub strict: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Clone, Copy, Debug)]
pub enum Command {
    /// Simulate perturbed paths and dump one trajectory file each.
    Simulate,
    /// Draw marks from the configured jump measure.
    SampleMeasure,
    /// Variational quasi-potential: barrier search, or point mode with
    /// qp.target set.
    Quasipotential,
    /// Exit-location concentration statistics.
    ExitStats,
    /// Full Kramers exit-time study across the eps schedule.
    Kramers,
    /// Cycle (renewal) ladder diagnostic.
    CycleDiag,
    /// Importance-sampled exit probabilities.
    IsExit,
}

/// Run a parsed invocation, mapping errors onto the documented exit codes.
pub fn run(cli: &Cli) -> u8 {
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Invalid(_) | Error::Io(_) => 2,
                Error::Numerical(_) | Error::Unsupported(_) => 3,
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let text = std::fs::read_to_string(&cli.config)?;
    let mut cfg = ExperimentConfig::from_text(&text)?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.qp.seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers > 0 {
        // First caller wins; a pre-existing global pool is fine because no
        // result depends on the thread count.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global();
    }
    match cli.command {
        Command::Simulate => cmd_simulate(&cfg, &cli.out),
        Command::SampleMeasure => cmd_sample_measure(&cfg, &cli.out),
        Command::Quasipotential => cmd_quasipotential(&cfg, &cli.out),
        Command::ExitStats => cmd_exit_stats(&cfg, &cli.out),
        Command::Kramers => cmd_kramers(&cfg, &cli.out, cli.strict),
        Command::CycleDiag => cmd_cycle_diag(&cfg, &cli.out),
        Command::IsExit => cmd_is_exit(&cfg, &cli.out),
    }
}

fn sde_opts(cfg: &ExperimentConfig) -> SdeOpts {
    let mut opts = SdeOpts::for_system(&cfg.system);
    if let Some(dt) = cfg.dt {
        opts.dt = dt;
    }
    opts
}

fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let eps = cfg.eps[0];
    let opts = sde_opts(cfg);
    let mut files: Vec<(String, String)> = Vec::new();
    for i in 0..cfg.sim_paths {
        let mut rng = rng_for(cfg.seed, "simulate", i as u64);
        let traj = simulate_sde(
            &cfg.system,
            &cfg.measure,
            &cfg.start,
            eps,
            cfg.sim_horizon,
            &mut rng,
            &opts,
        )?;
        files.push((format!("trajectory-{i:04}.csv"), report::trajectory_csv(&traj)));
    }
    let context = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("eps".to_string(), eps.to_string()),
        ("horizon".to_string(), cfg.sim_horizon.to_string()),
        ("paths".to_string(), cfg.sim_paths.to_string()),
    ];
    let refs: Vec<(String, &str)> =
        files.iter().map(|(n, c)| (n.clone(), c.as_str())).collect();
    let mani = report::manifest(&context, &refs);
    for (name, content) in &files {
        report::write_file(&out.join(name), content)?;
    }
    report::write_file(&out.join("simulate-manifest.txt"), &mani)?;
    Ok(0)
}

fn cmd_sample_measure(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let mut rng = rng_for(cfg.seed, "sample-measure", 0);
    let d = cfg.measure.dim();
    let mut csv = String::from("index");
    for k in 0..d {
        csv.push_str(&format!(",z{k}"));
    }
    csv.push('\n');
    let mut m2 = 0.0;
    for i in 0..cfg.n {
        let z = cfg.measure.sample_jump(&mut rng)?;
        csv.push_str(&format!("{i}"));
        for v in &z {
            csv.push_str(&format!(",{v}"));
        }
        csv.push('\n');
        m2 += z.iter().map(|v| v * v).sum::<f64>();
    }
    let context = vec![
        ("seed".to_string(), cfg.seed.to_string()),
        ("marks".to_string(), cfg.n.to_string()),
        ("effective_mass".to_string(), cfg.measure.effective_mass().to_string()),
        ("empirical_second_moment".to_string(), (m2 / cfg.n as f64).to_string()),
    ];
    let mani = report::manifest(&context, &[("marks.csv".to_string(), csv.as_str())]);
    report::write_file(&out.join("marks.csv"), &csv)?;
    report::write_file(&out.join("sample-manifest.txt"), &mani)?;
    Ok(0)
}

fn cmd_quasipotential(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let result = match &cfg.qp_target {
        Some(z) => quasipotential_point(&cfg.start, z, &cfg.system, &cfg.measure, &cfg.qp)?,
        None => barrier_height(&cfg.system, &cfg.measure, &cfg.qp)?,
    };
    // Certificate round-trip: re-evaluate the entropy of the embedded
    // control so the report carries its own verification.
    let recheck = result.control.entropy(&cfg.measure)?;
    let mut body = result.describe();
    body.push_str(&format!("qp.value.recheck = {recheck}\n"));
    body.push_str(&format!("qp.recheck_gap = {:e}\n", (recheck - result.value).abs()));
    let text = report::finalize("quasipotential", &body);
    report::write_file(&out.join("qp-report.txt"), &text)?;
    Ok(0)
}

/// Obtain barrier data per the config: compute it (writing the qp report
/// alongside), read a prior report (verifying its hash), or run without.
/// Returns the barrier and the provenance hash of the report it came from.
fn resolve_barrier(
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<(Option<BarrierRef>, Option<u64>)> {
    match &cfg.barrier {
        BarrierSource::None => Ok((None, None)),
        BarrierSource::Auto => {
            let result = barrier_height(&cfg.system, &cfg.measure, &cfg.qp)?;
            let bref = BarrierRef::from_result(&result)?;
            let text = report::finalize("quasipotential", &result.describe());
            report::write_file(&out.join("qp-report.txt"), &text)?;
            Ok((Some(bref), report::embedded_hash(&text)))
        }
        BarrierSource::Report(path) => {
            let text = std::fs::read_to_string(path)?;
            let parsed = report::parse(&text)?;
            let bref = barrier_from_report(&parsed)?;
            Ok((Some(bref), Some(parsed.hash)))
        }
    }
}

fn parse_point(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|c| {
            c.trim()
                .parse::<f64>()
                .map_err(|_| Error::Invalid(format!("bad point component `{}`", c.trim())))
        })
        .collect()
}

fn barrier_from_report(r: &report::ParsedReport) -> Result<BarrierRef> {
    let vbar = r.get_f64("qp.value")?;
    let z_star = parse_point(r.get("qp.z_star").ok_or_else(|| {
        Error::Invalid("report has no qp.z_star line (point query instead of a barrier run?)".into())
    })?)?;
    let mut argmins = vec![z_star];
    let gap = match r.get("qp.runner_up_gap") {
        Some(s) => Some(s.parse::<f64>().map_err(|_| {
            Error::Invalid(format!("bad qp.runner_up_gap value `{s}`"))
        })?),
        None => None,
    };
    let runner = r.get("qp.runner_up").map(parse_point).transpose()?;
    let mut kept_gap = gap;
    if let (Some(g), Some(p)) = (gap, runner) {
        if g <= 2e-4 * (1.0 + vbar.abs()) {
            argmins.push(p);
            kept_gap = None;
        }
    }
    Ok(BarrierRef { vbar, argmins, gap: kept_gap })
}

fn build_experiment(cfg: &ExperimentConfig, barrier: Option<BarrierRef>) -> Result<ExitExperiment> {
    let mut exp = ExitExperiment::new(
        cfg.system.clone(),
        cfg.measure.clone(),
        cfg.start.clone(),
        cfg.eps.clone(),
        cfg.n,
        cfg.t_cap.clone(),
        cfg.seed,
        barrier,
    )?;
    exp.window_frac = cfg.window_frac;
    exp.loc_delta = cfg.loc_delta;
    exp.sde = sde_opts(cfg);
    Ok(exp)
}

fn hash_line(prefix: &str, hash: Option<u64>) -> String {
    match hash {
        Some(h) => format!("{prefix}.qp_report_hash = {h:016x}\n"),
        None => format!("{prefix}.qp_report_hash = none\n"),
    }
}

fn cmd_kramers(cfg: &ExperimentConfig, out: &Path, strict: bool) -> Result<u8> {
    let (barrier, hash) = resolve_barrier(cfg, out)?;
    let exp = build_experiment(cfg, barrier)?;
    let rep = run_exit_mc(&exp)?;
    let mut body = rep.describe();
    body.push_str(&hash_line("kramers", hash));
    let text = report::finalize("kramers", &body);
    report::write_file(&out.join("kramers-report.txt"), &text)?;
    report::write_file(&out.join("kramers-table.csv"), &rep.table())?;
    if strict && rep.flags.iter().any(|f| f.starts_with("INVALID-FOR-MEAN")) {
        eprintln!("strict: report flagged INVALID-FOR-MEAN");
        return Ok(4);
    }
    Ok(0)
}

fn cmd_exit_stats(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let (barrier, hash) = resolve_barrier(cfg, out)?;
    let exp = build_experiment(cfg, barrier)?;
    let rep = exit_location_stats(&exp, cfg.loc_delta)?;
    let mut body = rep.describe();
    body.push_str(&hash_line("location", hash));
    let text = report::finalize("exit-location", &body);
    report::write_file(&out.join("location-report.txt"), &text)?;
    report::write_file(&out.join("location-table.csv"), &rep.table())?;
    Ok(0)
}

fn cmd_cycle_diag(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let (barrier, _) = resolve_barrier(cfg, out)?;
    let exp = build_experiment(cfg, barrier)?;
    let rep = cycle_diagnostic(&exp, cfg.cycle_rho, cfg.cycle_rho_prime)?;
    let text = report::finalize("cycle", &rep.describe());
    report::write_file(&out.join("cycle-report.txt"), &text)?;
    report::write_file(&out.join("cycle-table.csv"), &rep.table())?;
    Ok(0)
}

fn cmd_is_exit(cfg: &ExperimentConfig, out: &Path) -> Result<u8> {
    let (tilt, barrier, hash) = match cfg.is_tilt.as_str() {
        "identity" => {
            let (b, h) = resolve_barrier(cfg, out)?;
            (Control::Identity { horizon: cfg.is_horizon }, b, h)
        }
        "constant" => {
            let (b, h) = resolve_barrier(cfg, out)?;
            (Control::ConstantTilt { level: cfg.is_level, horizon: cfg.is_horizon }, b, h)
        }
        "certificate" => {
            // The escape-aligned tilt is the optimizer's certificate control;
            // it only exists in-process, so this mode computes the barrier
            // itself regardless of run.barrier.
            let result = barrier_height(&cfg.system, &cfg.measure, &cfg.qp)?;
            let bref = BarrierRef::from_result(&result)?;
            let text = report::finalize("quasipotential", &result.describe());
            report::write_file(&out.join("qp-report.txt"), &text)?;
            let h = report::embedded_hash(&text);
            (result.control, Some(bref), h)
        }
        other => unreachable!("config validated is.tilt, got {other}"),
    };
    let exp = build_experiment(cfg, barrier)?;
    let rep = importance_sampled_exit(&exp, &tilt)?;
    let mut body = rep.describe();
    body.push_str(&hash_line("is", hash));
    let text = report::finalize("importance-sampling", &body);
    report::write_file(&out.join("is-report.txt"), &text)?;
    report::write_file(&out.join("is-table.csv"), &rep.table())?;
    Ok(0)
}
