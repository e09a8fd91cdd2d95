//! Command-line front end: presets, run orchestration, CSV/JSON/SVG outputs
//! and a reproducibility manifest per run.

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pincell::atlas;
use pincell::config::{self, FromSpec};
use pincell::continuation::{self, Branch, ContinuationConfig, EventKind, System};
use pincell::error::{Error, Result};
use pincell::integrate;
use pincell::io;
use pincell::model::{self, CellRow, ParamId, ParameterSet};
use pincell::numerics::{self, NumericsConfig};

#[derive(Parser)]
#[command(name = "pincell", version, about = "PIN-mediated auxin transport on a file of cells: simulation, continuation and stability atlases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Report the homogeneous steady state and its stability.
    Trivial(TrivialArgs),
    /// Integrate the dynamic model forward in time.
    Simulate(SimulateArgs),
    /// Trace a steady branch through a parameter window.
    Continue(ContinueArgs),
    /// Scan trivial-state stability over a two-parameter grid.
    Atlas(AtlasArgs),
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Parameter preset: M1, M2 or M3.
    #[arg(long, conflicts_with = "params")]
    preset: Option<String>,
    /// Parameter file (JSON) instead of a preset.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Number of interior cells.
    #[arg(long, default_value_t = 20)]
    cells: usize,
    /// Parameter override, `key=value`; repeatable, applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory (default: $PINCELL_OUT or the current directory).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Probe cell for diagrams and phase plots (1-based).
    #[arg(long, default_value_t = 6)]
    probe: usize,
    /// Also emit SVG plots.
    #[arg(long)]
    svg: bool,
}

#[derive(Args)]
struct TrivialArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Also dump the Jacobian (row-major) and spectrum as JSON.
    #[arg(long)]
    dump: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Integration end time.
    #[arg(long = "t-end", default_value_t = 200.0)]
    t_end: f64,
    /// Fixed RK4 step size.
    #[arg(long, default_value_t = 0.01)]
    dt: f64,
    /// Store every k-th step in the trajectory.
    #[arg(long, default_value_t = 100)]
    stride: usize,
    /// Initial state: `trivial` (perturbed), a state file, or `tile:<file>:<copies>`.
    #[arg(long, default_value = "trivial")]
    from: String,
    /// Amplitude of the symmetry-breaking perturbation on `trivial` starts.
    #[arg(long, default_value_t = 0.2)]
    amplitude: f64,
    /// Spatial frequency of the perturbation.
    #[arg(long, default_value_t = 5)]
    frequency: u32,
    /// Analyze the post-transient part for a periodic orbit.
    #[arg(long)]
    orbit: bool,
    /// Fraction of the run discarded as transient for orbit analysis.
    #[arg(long, default_value_t = 0.5)]
    transient: f64,
}

#[derive(Args)]
struct ContinueArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Continuation parameter name.
    #[arg(long, default_value = "t")]
    param: String,
    /// Parameter window `lo:hi`.
    #[arg(long)]
    window: String,
    /// Start: `trivial`, a state file, or `tile:<file>:<copies>`.
    #[arg(long, default_value = "trivial")]
    from: String,
    /// Initial arclength step size.
    #[arg(long, default_value_t = 0.01)]
    ds: f64,
    /// Maximum arclength step size.
    #[arg(long = "ds-max", default_value_t = 0.1)]
    ds_max: f64,
    /// Maximum number of points per branch direction.
    #[arg(long = "max-points", default_value_t = 5000)]
    max_points: usize,
    /// Continue branches emerging from detected branch points.
    #[arg(long)]
    switch: bool,
    /// Settling time integration before refining tiled starts.
    #[arg(long, default_value_t = 100.0)]
    settle: f64,
}

#[derive(Args)]
struct AtlasArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Horizontal axis, `param:lo:hi:count[:log]`.
    #[arg(long)]
    x: String,
    /// Vertical axis, `param:lo:hi:count[:log]`.
    #[arg(long)]
    y: String,
    /// Refine and classify the stability boundary (BP vs Hopf).
    #[arg(long = "boundary-types")]
    boundary_types: bool,
    /// Worker threads (default: logical cores).
    #[arg(long)]
    jobs: Option<usize>,
}

fn resolve_params(common: &CommonArgs) -> Result<ParameterSet> {
    let mut params = match (&common.preset, &common.params) {
        (Some(name), None) => ParameterSet::preset(name)?,
        (None, Some(path)) => config::load_params(path)?,
        (None, None) => ParameterSet::preset("M2")?,
        (Some(_), Some(_)) => unreachable!("clap conflicts_with"),
    };
    for spec in &common.set {
        let (id, value) = config::parse_set(spec)?;
        params = id.with(&params, value);
    }
    params.validate()?;
    Ok(params)
}

fn out_dir(common: &CommonArgs) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| std::env::var_os("PINCELL_OUT").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::BlowUp { .. } => ExitCode::from(3),
        Error::NonConvergence { .. }
        | Error::SingularJacobian
        | Error::EigenFailure
        | Error::TangentAtBranchPoint
        | Error::StepRejected
        | Error::StepSizeUnderflow { .. }
        | Error::SwitchFailed(_) => ExitCode::from(4),
        _ => ExitCode::from(2),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let started = Instant::now();
    let result = match cli.command {
        Command::Trivial(args) => cmd_trivial(args, started),
        Command::Simulate(args) => cmd_simulate(args, started),
        Command::Continue(args) => cmd_continue(args, started),
        Command::Atlas(args) => cmd_atlas(args, started),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_for(&err)
        }
    }
}

fn base_manifest(common: &CommonArgs, params: &ParameterSet, extra: serde_json::Value) -> io::RunManifest {
    let mut config = json!({
        "cells": common.cells,
        "probe": common.probe,
        "parameters": params,
    });
    if let serde_json::Value::Object(map) = extra {
        config.as_object_mut().unwrap().extend(map);
    }
    io::RunManifest::new(std::env::args().collect(), config)
}

fn cmd_trivial(args: TrivialArgs, started: Instant) -> Result<()> {
    let params = resolve_params(&args.common)?;
    let row = CellRow::new(args.common.cells)?;
    let dir = out_dir(&args.common)?;
    let cfg = NumericsConfig::default();
    let (p_star, a_star) = model::trivial_values(&params)?;
    let (tag, spectrum) = atlas::classify_trivial(&row, &params, &cfg)?;
    let verdict = if tag.is_stable() { "Stable" } else { "Unstable" };
    println!("a* = {a_star:.6}");
    println!("p* = {p_star:.6}");
    println!(
        "stability: {verdict} ({} eigenvalue(s) with positive real part, leading = {:.6} {:+.6}i)",
        tag.unstable_count,
        spectrum.leading().re,
        spectrum.leading().im
    );

    let mut manifest = base_manifest(&args.common, &params, json!({"command": "trivial"}));
    let report = json!({
        "a_star": a_star,
        "p_star": p_star,
        "stable": tag.is_stable(),
        "unstable_count": tag.unstable_count,
        "leading_eigenvalue": [spectrum.leading().re, spectrum.leading().im],
        "leading_pair_complex": tag.leading_pair_complex,
    });
    io::emit(
        &mut manifest,
        &dir.join("trivial.json"),
        serde_json::to_string_pretty(&report)?.as_bytes(),
    )?;
    if args.dump {
        let u = model::trivial_solution(&row, &params)?;
        let jac = numerics::fd_jacobian(
            |v| model::steady_residual(v, &row, &params),
            &u,
            &cfg,
        )?;
        let dump = json!({
            "jacobian": {
                "rows": jac.nrows(),
                "cols": jac.ncols(),
                "data_row_major": jac.transpose().as_slice(),
            },
            "eigenvalues": spectrum
                .eigenvalues
                .iter()
                .map(|z| [z.re, z.im])
                .collect::<Vec<_>>(),
            "leading_residual": spectrum.leading_residual,
        });
        io::emit(
            &mut manifest,
            &dir.join("debug.json"),
            serde_json::to_string_pretty(&dump)?.as_bytes(),
        )?;
    }
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))
}

fn initial_state(
    spec: &str,
    row: &CellRow,
    params: &ParameterSet,
    amplitude: f64,
    frequency: u32,
) -> Result<model::DynamicState> {
    match config::parse_from_spec(spec)? {
        FromSpec::Trivial => integrate::perturbed_trivial(row, params, amplitude, frequency),
        FromSpec::File(path) => {
            let u = config::load_state(&path)?;
            if u.len() != 2 * row.n {
                return Err(Error::Config(format!(
                    "state file holds {} cells, run wants {}",
                    u.len() / 2,
                    row.n
                )));
            }
            integrate::tile_pattern(&u, 1, params)
        }
        FromSpec::Tile { path, copies } => {
            let u = config::load_state(&path)?;
            if (u.len() / 2) * copies != row.n {
                return Err(Error::Config(format!(
                    "{} cells tiled {} times != {} run cells",
                    u.len() / 2,
                    copies,
                    row.n
                )));
            }
            integrate::tile_pattern(&u, copies, params)
        }
    }
}

fn cmd_simulate(args: SimulateArgs, started: Instant) -> Result<()> {
    let params = resolve_params(&args.common)?;
    let row = CellRow::new(args.common.cells)?;
    let dir = out_dir(&args.common)?;
    let probe = args.common.probe.clamp(1, row.n);
    let state0 = initial_state(&args.from, &row, &params, args.amplitude, args.frequency)?;
    let mut manifest = base_manifest(
        &args.common,
        &params,
        json!({
            "command": "simulate",
            "t_end": args.t_end,
            "dt": args.dt,
            "stride": args.stride,
            "from": args.from,
        }),
    );

    let (traj, failure) = match integrate::simulate(&state0, &row, &params, args.t_end, args.dt, args.stride) {
        Ok(t) => (t, None),
        Err((e, partial)) => (partial, Some(e)),
    };
    io::emit(
        &mut manifest,
        &dir.join("trajectory.csv"),
        io::trajectory_csv(&traj).as_bytes(),
    )?;
    io::emit(
        &mut manifest,
        &dir.join("phase.csv"),
        io::phase_csv(&traj, &row, &params, probe)?.as_bytes(),
    )?;
    config::save_state(&dir.join("final_state.json"), &traj.last().to_steady())?;
    manifest.record(&dir.join("final_state.json"))?;
    if args.orbit && failure.is_none() {
        let orbit = integrate::analyze_orbit(&traj, probe, args.transient);
        io::emit(
            &mut manifest,
            &dir.join("orbit.json"),
            io::orbit_json(&orbit)?.as_bytes(),
        )?;
        println!(
            "orbit: converged={} period={:.4}",
            orbit.converged, orbit.period
        );
    }
    if args.common.svg {
        io::emit(
            &mut manifest,
            &dir.join("trajectory.svg"),
            io::svg_spacetime(&traj).as_bytes(),
        )?;
        let points: Vec<(f64, f64)> = traj
            .states
            .iter()
            .map(|s| {
                let rhs = model::dynamic_rhs(s, &row, &params)?;
                Ok((s.a[probe - 1], rhs.a[probe - 1]))
            })
            .collect::<Result<_>>()?;
        io::emit(
            &mut manifest,
            &dir.join("phase.svg"),
            io::svg_phase(&points).as_bytes(),
        )?;
    }
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))?;
    match failure {
        Some(e) => {
            let t_last = *traj.times.last().unwrap();
            eprintln!("partial trajectory written up to t = {t_last:.4}");
            // Any mid-integration failure means the state left the model
            // domain: report it as a blow-up.
            eprintln!("cause: {e}");
            Err(Error::BlowUp { time: t_last })
        }
        None => {
            let last = traj.last();
            println!(
                "t_end = {}, {} peaks in the final profile",
                traj.times.last().unwrap(),
                model::count_peaks(last.a.as_slice())
            );
            Ok(())
        }
    }
}

fn continuation_start(
    args: &ContinueArgs,
    system: &System,
    window: (f64, f64),
    cfg: &ContinuationConfig,
) -> Result<(model::SteadyVector, f64)> {
    let lambda0 = system
        .param
        .get(&system.base)
        .clamp(window.0, window.1);
    let params0 = system.params_at(lambda0);
    match config::parse_from_spec(&args.from)? {
        FromSpec::Trivial => Ok((model::trivial_solution(&system.row, &params0)?, lambda0)),
        FromSpec::File(path) => {
            let u = config::load_state(&path)?;
            if u.len() != 2 * system.row.n {
                return Err(Error::Config(format!(
                    "state file holds {} cells, run wants {}",
                    u.len() / 2,
                    system.row.n
                )));
            }
            Ok((u, lambda0))
        }
        FromSpec::Tile { path, copies } => {
            let pattern = config::load_state(&path)?;
            if (pattern.len() / 2) * copies != system.row.n {
                return Err(Error::Config(format!(
                    "{} cells tiled {} times != {} run cells",
                    pattern.len() / 2,
                    copies,
                    system.row.n
                )));
            }
            let tiled = integrate::tile_pattern(&pattern, copies, &params0)?;
            // Let the concatenated profile settle before Newton refinement.
            let traj = integrate::simulate(&tiled, &system.row, &params0, args.settle, 0.01, 1000)
                .map_err(|(e, _)| e)?;
            let (u, _) = numerics::newton_solve(
                |v| model::steady_residual(v, &system.row, &params0),
                &traj.last().to_steady(),
                &cfg.numerics,
            )?;
            Ok((u, lambda0))
        }
    }
}

fn cmd_continue(args: ContinueArgs, started: Instant) -> Result<()> {
    let params = resolve_params(&args.common)?;
    let row = CellRow::new(args.common.cells)?;
    let dir = out_dir(&args.common)?;
    let probe = args.common.probe.clamp(1, row.n);
    let param = ParamId::parse(&args.param)?;
    let window = config::parse_window(&args.window)?;
    let mut cfg = ContinuationConfig::default();
    cfg.ds0 = args.ds;
    cfg.ds_max = args.ds_max;
    cfg.max_points = args.max_points;

    let system = System::new(row, params, param);
    let mut manifest = base_manifest(
        &args.common,
        &params,
        json!({
            "command": "continue",
            "param": param.name(),
            "window": [window.0, window.1],
            "from": args.from,
            "ds": args.ds,
            "switch": args.switch,
        }),
    );

    let (u0, lambda0) = continuation_start(&args, &system, window, &cfg)?;
    // Settle the start state onto the branch up front so that a seed the
    // solver cannot handle is reported as a convergence failure rather than
    // a configuration problem.
    let u0 = match numerics::newton_solve(|v| system.residual(v, lambda0), &u0, &cfg.numerics) {
        Ok((u, _)) => u,
        Err(e @ Error::NonConvergence { .. }) => return Err(e),
        Err(other) => {
            eprintln!("start state rejected: {other}");
            return Err(Error::NonConvergence {
                iterations: 0,
                residual: f64::INFINITY,
            });
        }
    };
    let primary = continuation::continue_branch(&system, &u0, lambda0, window, &cfg, None)?;
    let mut branches = vec![primary];

    if args.switch {
        let bps: Vec<_> = branches[0]
            .events
            .iter()
            .filter(|e| e.kind == EventKind::BranchPoint)
            .cloned()
            .collect();
        for event in bps {
            match continuation::switch_branch(&system, &event, &cfg) {
                Ok(starters) => {
                    // One starter suffices: marching both ways from it covers
                    // the whole crossing branch.
                    match continuation::continue_from_point(&system, &starters[0], window, &cfg) {
                        Ok(branch) => branches.push(branch),
                        Err(e) => eprintln!(
                            "switched branch at {} = {:.4} not continued: {e}",
                            param.name(),
                            event.lambda
                        ),
                    }
                }
                Err(e) => eprintln!(
                    "branch switch at {} = {:.4} failed: {e}",
                    param.name(),
                    event.lambda
                ),
            }
        }
    }

    let mut all_events = Vec::new();
    for (i, branch) in branches.iter().enumerate() {
        io::emit(
            &mut manifest,
            &dir.join(format!("branch-{i}.csv")),
            io::branch_csv(branch, probe).as_bytes(),
        )?;
        let ev = io::events_json(branch, &system, &cfg.numerics)?;
        for item in ev["events"].as_array().unwrap() {
            let mut item = item.clone();
            item["branch"] = json!(i);
            all_events.push(item);
        }
        for e in &branch.events {
            println!(
                "branch {i}: {:?} at {} = {:.6}{}",
                e.kind,
                param.name(),
                e.lambda,
                e.beta.map(|b| format!(" (beta = {b:.6})")).unwrap_or_default()
            );
        }
    }
    io::emit(
        &mut manifest,
        &dir.join("events.json"),
        serde_json::to_string_pretty(&json!({ "events": all_events }))?.as_bytes(),
    )?;
    if args.common.svg {
        let refs: Vec<&Branch> = branches.iter().collect();
        io::emit(
            &mut manifest,
            &dir.join("diagram.svg"),
            io::svg_branch(&refs, probe).as_bytes(),
        )?;
    }
    println!(
        "{} branch(es), {} point(s), {} event(s)",
        branches.len(),
        branches.iter().map(|b| b.points.len()).sum::<usize>(),
        all_events.len()
    );
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))
}

fn cmd_atlas(args: AtlasArgs, started: Instant) -> Result<()> {
    let params = resolve_params(&args.common)?;
    let row = CellRow::new(args.common.cells)?;
    let dir = out_dir(&args.common)?;
    let x = config::parse_grid_spec(&args.x)?;
    let y = config::parse_grid_spec(&args.y)?;
    if x.param == y.param {
        return Err(Error::Config("grid axes must use distinct parameters".into()));
    }
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    }
    let cfg = NumericsConfig::default();
    let mut manifest = base_manifest(
        &args.common,
        &params,
        json!({
            "command": "atlas",
            "x": args.x,
            "y": args.y,
            "boundary_types": args.boundary_types,
        }),
    );

    let grid = atlas::stability_map(&x, &y, &params, &row, &cfg, true);
    io::emit(&mut manifest, &dir.join("grid.csv"), io::grid_csv(&grid).as_bytes())?;
    let boundary = if args.boundary_types {
        let curve = atlas::boundary_type_map(&grid, &row, &cfg);
        io::emit(
            &mut manifest,
            &dir.join("boundary.csv"),
            io::boundary_csv(&curve).as_bytes(),
        )?;
        Some(curve)
    } else {
        None
    };
    if args.common.svg {
        io::emit(
            &mut manifest,
            &dir.join("atlas.svg"),
            io::svg_grid(&grid, boundary.as_ref()).as_bytes(),
        )?;
    }
    println!(
        "{}x{} grid: {} stable, {} unstable, {} invalid",
        x.count,
        y.count,
        grid.stable_count(),
        grid.cells
            .iter()
            .filter(|c| **c == atlas::CellClass::Unstable)
            .count(),
        grid.cells
            .iter()
            .filter(|c| **c == atlas::CellClass::Invalid)
            .count()
    );
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    manifest.write(&dir.join("manifest.json"))
}
