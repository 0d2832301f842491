//! `hjbd`: build and validate spaces, run the solvers, and execute studies.
//!
//! Exit codes: 0 all checks pass, 1 a check failed, 2 usage or i/o error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hjbd_cli::config::{DriftDoc, ExperimentConfig, FourierMode};
use hjbd_cli::study::{emit_plots, hjb_report_csv, run_study, value_csv};
use hjbd_core::error::{CoreError, Result};
use hjbd_core::fokkerplanck::{verify_value_inequality, Drift};
use hjbd_core::hjb::{hjb_residual, hopf_cole};
use hjbd_core::io;
use hjbd_core::montecarlo::feynman_kac_estimate;
use hjbd_core::schroedinger::{solve_schrodinger_duhamel, solve_schrodinger_ode, SolveOptions};
use hjbd_core::space::{build_space, validate_space, Field, Space, SpaceKind, SpaceSpec};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "hjbd", version, about = "Dirichlet-form value-function toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Space construction and validation
    Space {
        #[command(subcommand)]
        command: SpaceCommand,
    },
    /// Heat kernels
    Heat {
        #[command(subcommand)]
        command: HeatCommand,
    },
    /// Solve the backward equation
    Solve(SolveArgs),
    /// Path-expectation estimate against the backward solve
    Fk(FkArgs),
    /// Residual report for the logarithmic transform
    Hjb(HjbArgs),
    /// Value-inequality report for a family of drifts
    Value(ValueArgs),
    /// Run a configured study
    Study { config: PathBuf },
}

#[derive(Subcommand)]
enum SpaceCommand {
    /// Check a space file against the invariants
    Validate { file: PathBuf },
    /// Build one of the standard families and write it out
    Build {
        #[arg(long)]
        kind: String,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        scaling: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum HeatCommand {
    /// Dense transition kernel as CSV
    Kernel {
        space: PathBuf,
        #[arg(long)]
        h: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SolveArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long)]
    w0: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long, default_value = "ode")]
    method: String,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FkArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long)]
    w0: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long)]
    x: usize,
    #[arg(long, default_value_t = 100_000)]
    n: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long)]
    paths_out: Option<PathBuf>,
}

#[derive(Args)]
struct HjbArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct ValueArgs {
    #[arg(long)]
    space: PathBuf,
    #[arg(long)]
    potential: PathBuf,
    #[arg(long)]
    w0: PathBuf,
    #[arg(long, allow_hyphen_values = true)]
    t: f64,
    #[arg(long)]
    rho0: PathBuf,
    #[arg(long)]
    drifts: PathBuf,
    #[arg(long, default_value_t = 400)]
    steps: usize,
    #[arg(long)]
    report: PathBuf,
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("HJBD_THREADS") {
        if let Ok(k) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(k.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(all_passed) => {
            if all_passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Space { command } => space_command(command),
        Command::Heat { command } => heat_command(command),
        Command::Solve(args) => solve_command(args),
        Command::Fk(args) => fk_command(args),
        Command::Hjb(args) => hjb_command(args),
        Command::Value(args) => value_command(args),
        Command::Study { config } => study_command(&config),
    }
}

fn load_valid_space(path: &Path) -> Result<Space> {
    let space = io::load_space(path)?;
    let report = validate_space(&space);
    if report.is_valid() {
        Ok(space)
    } else {
        Err(CoreError::InvalidSpace(report.violations.join("; ")))
    }
}

fn space_command(command: SpaceCommand) -> Result<bool> {
    match command {
        SpaceCommand::Validate { file } => {
            let space = io::load_space(&file)?;
            let report = validate_space(&space);
            if report.is_valid() {
                println!("ok: {} points, {} edges", space.n(), space.edges().len());
                Ok(true)
            } else {
                for v in &report.violations {
                    println!("violation: {v}");
                }
                Ok(false)
            }
        }
        SpaceCommand::Build { kind, n, level, scaling, out } => {
            let kind = match kind.as_str() {
                "cycle" => SpaceKind::Cycle {
                    n: n.ok_or_else(|| CoreError::InvalidArgument("cycle needs --n".into()))?,
                },
                "torus2d" => SpaceKind::Torus2d {
                    n: n.ok_or_else(|| CoreError::InvalidArgument("torus2d needs --n".into()))?,
                },
                "gasket" => SpaceKind::Gasket {
                    level: level
                        .ok_or_else(|| CoreError::InvalidArgument("gasket needs --level".into()))?,
                },
                other => {
                    return Err(CoreError::InvalidArgument(format!(
                        "unknown kind {other}; expected cycle, torus2d or gasket"
                    )))
                }
            };
            let space = build_space(&SpaceSpec { kind, scaling })?;
            io::save_space(&space, &out)?;
            println!("wrote {} ({} points)", out.display(), space.n());
            Ok(true)
        }
    }
}

fn heat_command(command: HeatCommand) -> Result<bool> {
    match command {
        HeatCommand::Kernel { space, h, out } => {
            let space = load_valid_space(&space)?;
            let kernel = hjbd_core::heat::heat_kernel(&space, h)?;
            io::write_kernel_csv(&kernel, space.points(), &out)?;
            println!("wrote {}", out.display());
            Ok(true)
        }
    }
}

fn solve_command(args: SolveArgs) -> Result<bool> {
    let space = load_valid_space(&args.space)?;
    let potential = io::load_potential(&args.potential, &space, args.t)?;
    let w0 = io::load_field(&args.w0, space.n())?;
    let field = match args.method.as_str() {
        "ode" => solve_schrodinger_ode(
            &space,
            &potential,
            &w0,
            args.t,
            args.steps,
            &SolveOptions::default(),
        )?,
        "duhamel" => {
            let solve =
                solve_schrodinger_duhamel(&space, &potential, &w0, args.t, args.steps, args.tol)?;
            println!(
                "windows: {} (length {}), contraction factor {}",
                solve.windows, solve.window_length, solve.max_contraction_factor
            );
            solve.field
        }
        other => {
            return Err(CoreError::InvalidArgument(format!(
                "unknown method {other}; expected ode or duhamel"
            )))
        }
    };
    io::write_timefield_csv(&field, space.points(), &args.out)?;
    println!("wrote {}", args.out.display());
    Ok(true)
}

fn fk_command(args: FkArgs) -> Result<bool> {
    let space = load_valid_space(&args.space)?;
    let potential = io::load_potential(&args.potential, &space, args.t)?;
    let w0 = io::load_field(&args.w0, space.n())?;
    if args.x >= space.n() {
        return Err(CoreError::InvalidArgument(format!("point {} out of range", args.x)));
    }
    let est = feynman_kac_estimate(&space, &potential, &w0, args.t, args.x, args.n, args.seed)?;
    let reference = solve_schrodinger_ode(
        &space,
        &potential,
        &w0,
        args.t,
        args.steps,
        &SolveOptions::default(),
    )?;
    let target = reference.frame(0).get(args.x);
    println!("mean,stderr,reference");
    println!("{},{},{}", est.mean, est.stderr, target);

    if let Some(paths_out) = &args.paths_out {
        let mut out = String::from("# hjbd-schema v1\npath_id,entry_time,point\n");
        for i in 0..args.n.min(100) {
            let path = hjbd_core::montecarlo::sample_ctmc_path(
                &space,
                args.t,
                args.x,
                args.seed + i as u64,
            )?;
            for &(entry, point) in &path.segments {
                out.push_str(&format!("{i},{entry},{}\n", space.points()[point]));
            }
        }
        std::fs::write(paths_out, out)?;
        println!("wrote {}", paths_out.display());
    }
    let within = (est.mean - target).abs() <= 4.0 * est.stderr.max(1e-14);
    Ok(within)
}

fn hjb_command(args: HjbArgs) -> Result<bool> {
    let space = load_valid_space(&args.space)?;
    let (w, points) = io::read_timefield_csv(&args.run)?;
    if points != space.points() {
        return Err(CoreError::Parse("run file points do not match the space".into()));
    }
    let potential = io::load_potential(&args.potential, &space, w.grid().t_start())?;
    let u = hopf_cole(&w)?;
    let report = hjb_residual(&space, &potential, &u)?;
    std::fs::write(&args.report, hjb_report_csv(&report))?;
    println!(
        "wrote {} (residual sup {}, nonlinear-generator sup {})",
        args.report.display(),
        report.residual_sup(),
        report.exact_residual_sup()
    );
    if let Some(dir) = &args.svg {
        std::fs::create_dir_all(dir)?;
        let series: Vec<hjbd_cli::plot::Series> = vec![
            hjbd_cli::plot::Series {
                label: "quadratic-gradient residual (sup)".into(),
                points: report.norms.iter().map(|f| (f.time, f.residual_sup)).collect(),
            },
            hjbd_cli::plot::Series {
                label: "nonlinear-generator residual (sup)".into(),
                points: report.norms.iter().map(|f| (f.time, f.exact_sup)).collect(),
            },
        ];
        let path = dir.join("residual_vs_time.svg");
        std::fs::write(
            &path,
            hjbd_cli::plot::line_plot("residual vs time", "time", "sup residual", &series),
        )?;
        println!("wrote {}", path.display());
    }
    Ok(true)
}

fn load_drift_family(
    dir: &Path,
    space: &Space,
    u: &hjbd_core::timefield::TimeField,
) -> Result<Vec<(String, Drift)>> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "json").unwrap_or(false))
        .collect();
    entries.sort();
    if entries.is_empty() {
        return Err(CoreError::InvalidArgument(format!(
            "no drift documents (*.json) in {}",
            dir.display()
        )));
    }
    let grid = *u.grid();
    let n = space.n();
    let mut family = Vec::new();
    for path in entries {
        let text = std::fs::read_to_string(&path)?;
        let doc: DriftDoc =
            serde_json::from_str(&text).map_err(|e| CoreError::Parse(e.to_string()))?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let drift = match doc {
            DriftDoc::Zero => Drift::zero(grid, n),
            DriftDoc::NegU => Drift::negated(u),
            DriftDoc::NegUPerturbed { delta, seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let heat = hjbd_core::heat::SpectralHeat::new(space);
                let mut z = Field::zeros(n);
                for k in 1..5.min(n) {
                    z = z.add(&heat.eigenfield(k).scale(rng.gen_range(-1.0..1.0)));
                }
                Drift::new(Drift::negated(u).field().map_frames(|fr| fr.add(&z.scale(delta))))
            }
            DriftDoc::Profile { values } => {
                if values.len() != n {
                    return Err(CoreError::FieldLength { expected: n, found: values.len() });
                }
                Drift::time_constant(grid, Field::new(values)?)
            }
            DriftDoc::Fourier { mean, modes } => {
                let profile = Field::from_fn(n, |x| {
                    let theta = 2.0 * std::f64::consts::PI * x as f64 / n as f64;
                    let mut acc = mean;
                    for FourierMode::Explicit { freq, sin, cos } in &modes {
                        acc += sin * (freq * theta).sin() + cos * (freq * theta).cos();
                    }
                    acc
                });
                Drift::time_constant(grid, profile)
            }
        };
        family.push((id, drift));
    }
    Ok(family)
}

fn value_command(args: ValueArgs) -> Result<bool> {
    let space = load_valid_space(&args.space)?;
    let potential = io::load_potential(&args.potential, &space, args.t)?;
    let w0 = io::load_field(&args.w0, space.n())?;
    let rho0 = io::load_field(&args.rho0, space.n())?;
    let w = solve_schrodinger_ode(
        &space,
        &potential,
        &w0,
        args.t,
        args.steps,
        &SolveOptions::default(),
    )?;
    let u = hopf_cole(&w)?;
    let family = load_drift_family(&args.drifts, &space, &u)?;
    let report = verify_value_inequality(&space, &potential, &u, &family, &rho0)?;
    std::fs::write(&args.report, value_csv(&report))?;
    println!(
        "wrote {} (lhs {}, optimal J {}, allowance {})",
        args.report.display(),
        report.lhs,
        report.j_optimal,
        report.allowance
    );
    Ok(report.all_bounds_hold())
}

fn study_command(config_path: &Path) -> Result<bool> {
    let config = ExperimentConfig::load(config_path)?;
    let out_dir = config.out_dir();
    std::fs::create_dir_all(&out_dir)?;

    let report = run_study(&config);
    std::fs::write(out_dir.join("study_report.csv"), report.to_csv())?;
    if config.svg {
        emit_plots(&report, &out_dir)?;
    }

    // environment stamp lives outside the deterministic CSV bodies
    let meta = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "study": config.study.as_str(),
        "seed": config.seed,
        "threads": rayon::current_num_threads(),
        "unix_time": std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    });
    std::fs::write(
        out_dir.join("study_meta.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| CoreError::Parse(e.to_string()))?,
    )?;

    let passed = report.records.iter().filter(|r| r.pass).count();
    println!(
        "{}/{} checks passed; report in {}",
        passed,
        report.records.len(),
        out_dir.display()
    );
    for record in report.records.iter().filter(|r| !r.pass) {
        println!(
            "failed: {} (measured {}, threshold {})",
            record.name, record.measured, record.threshold
        );
    }
    Ok(report.overall_pass())
}
