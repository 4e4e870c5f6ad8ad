//! `permuton`: solve, sample, verify, and render limit shapes of restricted
//! inversion-weighted permutation ensembles.
//!
//! Exit codes: 0 success, 2 input or solver failure, 3 verification failure.

mod render;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use permuton::boundary::{self, BoundaryValues};
use permuton::density::{build_field, DensityField, FieldSource};
use permuton::error::Error;
use permuton::region::{self, RegionConfig, RegionSpec};
use permuton::sampler;
use permuton::verify::{run_battery, BatteryConfig, BatteryReport};

#[derive(Parser)]
#[command(name = "permuton", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Auto,
    Ipf,
    Simple,
    Continuation,
    Quad3x3,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ColorScale {
    Linear,
    Log,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a region spec and export boundary values, field, and grid.
    Solve {
        /// Region spec JSON: {"x": [...], "y": [...], "I": [[...]], "r": ...}
        /// with I rows listed top to bottom.
        #[arg(long)]
        config: PathBuf,
        /// Override the rate from the config.
        #[arg(long)]
        r: Option<f64>,
        #[arg(long, value_enum, default_value_t = Method::Auto)]
        method: Method,
        /// Grid resolution of the exported field samples.
        #[arg(long, default_value_t = 100)]
        grid: usize,
        /// Output path prefix (writes PREFIX.bv.json, PREFIX.field.json,
        /// PREFIX.grid.csv, PREFIX.verify.json).
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Continuation step and Newton tolerance.
        #[arg(long, default_value_t = 1e-3)]
        dr: f64,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
        /// Seed of the verification battery sampling.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Sample a restricted permutation and export it with its vertex grid
    /// and empirical height function.
    Sample {
        #[arg(long)]
        config: PathBuf,
        /// System size.
        #[arg(long)]
        n: usize,
        /// Post-burn-in Metropolis proposals.
        #[arg(long, default_value_t = 100_000)]
        steps: u64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Resolution of the empirical height export.
        #[arg(long, default_value_t = 50)]
        grid: usize,
        #[arg(long, default_value = "sample")]
        out: PathBuf,
    },
    /// Re-run the verification battery on a serialized field.
    Verify {
        #[arg(long)]
        field: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Render a grid CSV as a heat-map PNG.
    Render {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ColorScale::Linear)]
        color_scale: ColorScale,
        /// Which column to map: g or h.
        #[arg(long, default_value = "g")]
        column: String,
    },
}

const EXIT_INPUT: u8 = 2;
const EXIT_VERIFY: u8 = 3;

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("PERMUTON_THREADS") {
        if let Ok(t) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
        }
    }
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Solve {
            config,
            r,
            method,
            grid,
            out,
            dr,
            tol,
            seed,
        } => cmd_solve(&config, r, method, grid, &out, dr, tol, seed),
        Command::Sample {
            config,
            n,
            steps,
            seed,
            grid,
            out,
        } => cmd_sample(&config, n, steps, seed, grid, &out),
        Command::Verify { field, seed, tol } => cmd_verify(&field, seed, tol),
        Command::Render {
            grid,
            out,
            color_scale,
            column,
        } => cmd_render(&grid, &out, color_scale, &column),
    };
    match code {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(CliError::Verification(msg)) => {
            eprintln!("verification failed: {msg}");
            ExitCode::from(EXIT_VERIFY)
        }
    }
}

enum CliError {
    Input(String),
    Verification(String),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn load_spec(path: &PathBuf, r_override: Option<f64>) -> Result<RegionSpec, CliError> {
    let text = fs::read_to_string(path)?;
    let cfg = RegionConfig::parse(&text)?;
    let mut spec = cfg.into_spec()?;
    if let Some(r) = r_override {
        spec = spec.with_r(r);
    }
    Ok(spec)
}

fn pick_method(spec: &RegionSpec) -> Result<Method, CliError> {
    if spec.r == 0.0 {
        return Ok(Method::Ipf);
    }
    if !region::is_convex(&spec.support)? {
        return Err(CliError::Input(
            "no solver for non-convex supports at nonzero rate".into(),
        ));
    }
    if region::is_simple(&spec.support).is_some() {
        Ok(Method::Simple)
    } else if spec.k() == 3 && spec.ell() == 3 && boundary::solve_3x3_nonsimple(spec).is_ok() {
        Ok(Method::Quad3x3)
    } else {
        Ok(Method::Continuation)
    }
}

#[allow(clippy::too_many_arguments)]
fn cmd_solve(
    config: &PathBuf,
    r: Option<f64>,
    method: Method,
    grid_n: usize,
    out: &PathBuf,
    dr: f64,
    tol: f64,
    seed: u64,
) -> Result<(), CliError> {
    let spec = load_spec(config, r)?;
    region::check_nondegenerate(&spec)?;
    let method = if method == Method::Auto {
        pick_method(&spec)?
    } else {
        method
    };
    let (bv, source): (BoundaryValues, FieldSource) = match method {
        Method::Ipf => {
            if spec.r != 0.0 {
                return Err(CliError::Input(
                    "the scaling solver applies only at r = 0".into(),
                ));
            }
            (boundary::solve_continuation(&spec, 0.0, dr, tol)?, FieldSource::Ipf)
        }
        Method::Simple => (boundary::solve_simple(&spec)?, FieldSource::Simple),
        Method::Continuation => (
            boundary::solve_continuation(&spec, spec.r, dr, tol)?,
            FieldSource::Continuation,
        ),
        Method::Quad3x3 => (
            boundary::solve_3x3_nonsimple(&spec)?,
            FieldSource::Quadratic3x3,
        ),
        Method::Auto => unreachable!(),
    };
    let field = build_field(&spec, &bv, source)?;
    let report = run_battery(
        &field,
        &BatteryConfig {
            seed,
            ..Default::default()
        },
    );
    let grid = field.grid(grid_n.max(2));

    let write = |ext: &str, data: String| -> Result<(), CliError> {
        let mut path = out.clone();
        path.set_extension(ext);
        fs::write(&path, data)?;
        Ok(())
    };
    write("bv.json", to_json(&bv)?)?;
    write("field.json", to_json(&field)?)?;
    write("grid.csv", grid.to_csv(&field))?;
    write("verify.json", to_json(&report)?)?;
    print_report(&report);
    let worst = boundary::residual(&spec, &bv)
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    println!("boundary residual: {worst:.3e}");
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification(format!(
            "{} of {} checks failed",
            report.checks.iter().filter(|c| !c.pass).count(),
            report.checks.len()
        )))
    }
}

fn cmd_sample(
    config: &PathBuf,
    n: usize,
    steps: u64,
    seed: u64,
    grid: usize,
    out: &PathBuf,
) -> Result<(), CliError> {
    let spec = load_spec(config, None)?;
    let sample = sampler::sample(&spec, n, steps, seed)?;
    let grid_n = grid.max(2).min(n);
    let heights = sampler::empirical_height(&sample, grid_n);
    let six = sampler::to_six_vertex(&sample);

    let mut height_csv = String::from("x,y,h\n");
    for j in 0..=grid_n {
        for i in 0..=grid_n {
            height_csv.push_str(&format!(
                "{:.16e},{:.16e},{:.16e}\n",
                i as f64 / grid_n as f64,
                j as f64 / grid_n as f64,
                heights[j * (grid_n + 1) + i]
            ));
        }
    }
    let write = |ext: &str, data: String| -> Result<(), CliError> {
        let mut path = out.clone();
        path.set_extension(ext);
        fs::write(&path, data)?;
        Ok(())
    };
    write("sample.json", to_json(&sample)?)?;
    write("sixvertex.csv", six.to_csv())?;
    write("height.csv", height_csv)?;
    println!(
        "n = {}, inversions = {}, sweeps = {}",
        sample.n, sample.inversions, sample.sweeps
    );
    Ok(())
}

fn cmd_verify(field_path: &PathBuf, seed: u64, tol: f64) -> Result<(), CliError> {
    let text = fs::read_to_string(field_path)?;
    let field: DensityField =
        serde_json::from_str(&text).map_err(|e| CliError::Input(e.to_string()))?;
    field.spec.validate()?;
    let report = run_battery(
        &field,
        &BatteryConfig {
            seed,
            tol_four_point: tol,
            tol_jumps: tol,
            ..Default::default()
        },
    );
    print_report(&report);
    println!("{}", to_json(&report)?);
    if report.pass {
        Ok(())
    } else {
        Err(CliError::Verification("battery rejected the field".into()))
    }
}

fn cmd_render(
    grid: &PathBuf,
    out: &PathBuf,
    color_scale: ColorScale,
    column: &str,
) -> Result<(), CliError> {
    let text = fs::read_to_string(grid)?;
    let col = match column {
        "g" => 2,
        "h" => 3,
        other => {
            return Err(CliError::Input(format!(
                "unknown column '{other}' (expected g or h)"
            )))
        }
    };
    let values = render::parse_grid_csv(&text, col).map_err(CliError::Input)?;
    let log = color_scale == ColorScale::Log;
    let image = render::heatmap(&values, log).map_err(CliError::Input)?;
    image
        .save(out)
        .map_err(|e| CliError::Input(e.to_string()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))
}

fn print_report(report: &BatteryReport) {
    for check in &report.checks {
        println!(
            "[{}] {:<12} max residual {:.3e} (tol {:.1e}, {} samples)",
            if check.pass { "pass" } else { "FAIL" },
            check.name,
            check.max_residual,
            check.tol,
            check.n_checked,
        );
    }
}
