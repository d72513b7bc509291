use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use brownmap_core::constructions::{construct_even, construct_odd, f_axis_derivatives, make_example, MomentSolution};
use brownmap_core::density::{density_grid, laplacian_check, sigma_at, support_diameter, DensityOptions, PotentialOptions, Window};
use brownmap_core::geometry::{
    classify_singularity, double_contours, newton_critical, singularities, symmetric_classify, trace_boundary, trace_level,
    ClassifyOptions, Polyline, SearchOptions,
};
use brownmap_core::model::{AtomMeasure, AtomicProfile};
use brownmap_core::rmt::{compare, sample_spectra, CompareOptions, SampleOptions};
use brownmap_core::spectral::beta_eval;
use brownmap_core::{Complex64, Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "brownmap", version, about = "Brown measure of deformed operator-valued circular elements")]
struct Cli {
    /// Worker threads; BROWNMAP_THREADS is used when absent.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Source {
    /// Catalog example.
    #[arg(long, conflicts_with = "model")]
    example: Option<String>,
    /// Model JSON file.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct Grid {
    /// re_min,re_max,im_min,im_max
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    /// Nodes per axis.
    #[arg(long, default_value_t = 200)]
    res: usize,
}

#[derive(Copy, Clone, ValueEnum)]
enum Parity {
    Even,
    Odd,
}

#[derive(Subcommand)]
enum Command {
    /// σ and β on a grid: grid.csv, summary.json.
    Density {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        grid: Grid,
    },
    /// Boundary polylines of the support: boundary.csv, boundary.json.
    Boundary {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        grid: Grid,
        /// Level ε of the shifted contours used to find curves where β touches 0 from below.
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
    },
    /// Singular points with kinds: singularities.json.
    Singularities {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        grid: Grid,
        /// Extra Newton seeds, re,im.
        #[arg(long = "seed-point", allow_hyphen_values = true)]
        seed_points: Vec<String>,
    },
    /// β, its gradient and σ at points: beta.json.
    Beta {
        #[command(flatten)]
        source: Source,
        /// re,im; repeatable.
        #[arg(long = "at", required = true, allow_hyphen_values = true)]
        at: Vec<String>,
    },
    /// Deformation with a prescribed singularity at 0: construct.json, model.json.
    Construct {
        #[arg(long, value_enum)]
        kind: Parity,
        #[arg(long)]
        n: usize,
        /// Sign of the leading term (even case).
        #[arg(long, default_value_t = 1, allow_hyphen_values = true)]
        tau: i8,
    },
    /// Random-matrix eigenvalues against the support: rmt.json, eigenvalues_<seed>.csv.
    Rmt {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        #[arg(long)]
        complex: bool,
    },
    /// σ against −ΔL/2π at bulk points: potential.csv.
    PotentialCheck {
        #[command(flatten)]
        source: Source,
        #[command(flatten)]
        grid: Grid,
        #[arg(long, default_value_t = 8)]
        points: usize,
        /// Laplacian stencil step; defaults to 1e-2 × support diameter.
        #[arg(long)]
        h: Option<f64>,
    },
}

fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_list(s: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let v: std::result::Result<Vec<f64>, _> = s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match v {
        Ok(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => Ok(v),
        _ => Err(Error::Argument(format!("{what} needs {n} comma-separated numbers, got '{s}'"))),
    }
}

fn parse_point(s: &str) -> Result<Complex64> {
    let v = parse_list(s, 2, "point")?;
    Ok(Complex64::new(v[0], v[1]))
}

fn load(source: &Source) -> Result<(AtomicProfile, String)> {
    match (&source.example, &source.model) {
        (Some(name), None) => Ok((make_example(name)?.0, name.clone())),
        (None, Some(path)) => Ok((AtomicProfile::load_json(path)?, path.display().to_string())),
        _ => Err(Error::Argument("give exactly one of --example or --model".into())),
    }
}

fn window_for(profile: &AtomicProfile, grid: &Grid) -> Result<Window> {
    if grid.res < 8 {
        return Err(Error::Argument("--res must be at least 8".into()));
    }
    match &grid.window {
        Some(s) => {
            let v = parse_list(s, 4, "--window")?;
            Window::new(v[0], v[1], v[2], v[3])
        }
        None => {
            let half = 0.55 * support_diameter(profile) + 0.1;
            let c = profile.deformation().iter().zip(profile.weights()).map(|(a, w)| a * w).sum::<Complex64>();
            Window::new(c.re - half, c.re + half, c.im - half, c.im + half)
        }
    }
}

fn write_file(dir: &Path, name: &str, content: &str) -> Result<PathBuf> {
    let io = |e, p: &Path| Error::Io { path: p.display().to_string(), source: e };
    fs::create_dir_all(dir).map_err(|e| io(e, dir))?;
    let path = dir.join(name);
    let mut f = fs::File::create(&path).map_err(|e| io(e, &path))?;
    f.write_all(content.as_bytes()).map_err(|e| io(e, &path))?;
    Ok(path)
}

fn write_json(dir: &Path, name: &str, mut v: Value) -> Result<PathBuf> {
    if let Value::Object(m) = &mut v {
        m.insert("schema".into(), json!(1));
    }
    write_file(dir, name, &(serde_json::to_string_pretty(&v)? + "\n"))
}

fn polylines_csv(polys: &[Polyline]) -> String {
    let mut s = String::from("polyline,closed,re,im\n");
    for (k, p) in polys.iter().enumerate() {
        for z in &p.points {
            s += &format!("{k},{},{},{}\n", p.closed, fmt(z.re), fmt(z.im));
        }
    }
    s
}

fn polyline_summary(polys: &[Polyline], center: Complex64) -> Value {
    polys
        .iter()
        .map(|p| {
            let (rmin, rmax) = p.radii(center);
            json!({"points": p.points.len(), "closed": p.closed, "signed_area": p.signed_area(), "radius_min": rmin, "radius_max": rmax})
        })
        .collect()
}

fn run(cli: Cli) -> Result<()> {
    let out = cli.out.clone();
    match cli.command {
        Command::Density { source, grid } => {
            let (p, name) = load(&source)?;
            let w = window_for(&p, &grid)?;
            let g = density_grid(&p, w, grid.res, grid.res, &DensityOptions::default())?;
            let mut csv = String::from("re,im,sigma,beta,inside\n");
            for j in 0..g.ny {
                for i in 0..g.nx {
                    let z = g.point(i, j);
                    let k = g.idx(i, j);
                    csv += &format!("{},{},{},{},{}\n", fmt(z.re), fmt(z.im), fmt(g.sigma[k]), fmt(g.beta_field[k]), g.mask[k] as u8);
                }
            }
            write_file(&out, "grid.csv", &csv)?;
            let mass = g.mass();
            write_json(
                &out,
                "summary.json",
                json!({"command": "density", "model": name, "window": w, "nx": g.nx, "ny": g.ny, "mass": mass,
                       "max_sigma": g.max_sigma(), "clamp_count": g.clamp_count, "edge_cells": g.edge_cells}),
            )?;
            println!("mass {mass:.6}");
        }
        Command::Boundary { source, grid, eps } => {
            let (p, name) = load(&source)?;
            let w = window_for(&p, &grid)?;
            let g = density_grid(&p, w, grid.res, grid.res, &DensityOptions::default())?;
            let contours = trace_boundary(&g)?;
            let shifted = trace_level(&w, g.nx, g.ny, &g.beta_field, -eps.abs())?;
            let gap = 4.0 * g.dx().max(g.dy()) + 4.0 * eps.abs().sqrt();
            let doubles = double_contours(&shifted, gap);
            write_file(&out, "boundary.csv", &polylines_csv(&contours.polylines))?;
            if !doubles.is_empty() {
                write_file(&out, "double_contours.csv", &polylines_csv(&doubles))?;
            }
            let center = Complex64::new(0.0, 0.0);
            write_json(
                &out,
                "boundary.json",
                json!({"command": "boundary", "model": name, "window": w, "res": grid.res, "saddle_cells": contours.saddle_cells,
                       "polylines": polyline_summary(&contours.polylines, center),
                       "double_contour_level": -eps.abs(), "double_contours": polyline_summary(&doubles, center)}),
            )?;
            println!("{} boundary polylines, {} double contours", contours.polylines.len(), doubles.len());
        }
        Command::Singularities { source, grid, seed_points } => {
            let (p, name) = load(&source)?;
            let w = window_for(&p, &grid)?;
            let seeds: Vec<Complex64> = seed_points.iter().map(|s| parse_point(s)).collect::<Result<_>>()?;
            let search = SearchOptions { seed_grid: grid.res.min(128), ..Default::default() };
            let report = singularities(&p, &w, &seeds, &search, &ClassifyOptions::default())?;
            let unresolved = report.points.iter().filter(|s| s.tentative).count();
            let mut v = serde_json::to_value(&report)?;
            v["command"] = json!("singularities");
            v["model"] = json!(name);
            v["unresolved"] = json!(unresolved);
            write_json(&out, "singularities.json", v)?;
            for s in &report.points {
                println!("{} at ({:.10}, {:.10}){}", s.kind, s.location.re, s.location.im, if s.tentative { " tentative" } else { "" });
            }
        }
        Command::Beta { source, at } => {
            let (p, name) = load(&source)?;
            let mut rows = Vec::new();
            for s in &at {
                let z = parse_point(s)?;
                let e = beta_eval(&p, z)?;
                let sigma = sigma_at(&p, z, &DensityOptions::default())?;
                println!("beta({}, {}) = {}", z.re, z.im, fmt(e.beta));
                rows.push(json!({"zeta": z, "beta": e.beta, "grad": e.grad, "sigma": sigma.value, "far_field": e.far_field}));
            }
            write_json(&out, "beta.json", json!({"command": "beta", "model": name, "points": rows}))?;
        }
        Command::Construct { kind, n, tau } => {
            let (sol, nu, expected_k, expected_tau): (MomentSolution, AtomMeasure, usize, i8) = match kind {
                Parity::Even => {
                    let (s, nu) = construct_even(n, tau)?;
                    (s, nu, 2 * n, tau)
                }
                Parity::Odd => {
                    let (s, nu) = construct_odd(n)?;
                    (s, nu, 2 * n + 1, -1)
                }
            };
            let derivs = f_axis_derivatives(&nu, expected_k)?;
            let sym = symmetric_classify(&nu, 1.0)?;
            let profile = AtomicProfile::from_measure(&nu, 1.0)?;
            let located = newton_critical(&profile, Complex64::new(0.0, 0.0), &SearchOptions::default())?;
            let point = classify_singularity(&profile, &located, &ClassifyOptions::default())?;
            let passed = sol.residual <= 1e-8 && sym == (Some(expected_k), expected_tau) && point.k == Some(expected_k) && point.tau == expected_tau;
            write_file(&out, "model.json", &(serde_json::to_string_pretty(&profile.to_model_file())? + "\n"))?;
            write_json(
                &out,
                "construct.json",
                json!({"command": "construct", "parity": match kind { Parity::Even => "even", Parity::Odd => "odd" },
                       "n": n, "tau": expected_tau, "moments": sol, "nu": nu, "t": 1.0,
                       "verification": {"passed": passed, "moment_residual": sol.residual, "axis_derivatives": derivs,
                                        "symmetric": {"K": sym.0, "tau": sym.1}, "classified": point}}),
            )?;
            println!("{} K={:?} tau={} residual {:.2e} {}", point.kind, point.k, point.tau, sol.residual, if passed { "passed" } else { "FAILED" });
            if !passed {
                return Err(Error::Numerical("constructed measure failed its verification".into()));
            }
        }
        Command::Rmt { source, grid, n, seeds, first_seed, complex } => {
            let (p, name) = load(&source)?;
            let w = window_for(&p, &grid)?;
            let g = density_grid(&p, w, grid.res, grid.res, &DensityOptions::default())?;
            let seed_list: Vec<u64> = (first_seed..first_seed + seeds).collect();
            let samples = sample_spectra(&p, &name, n, &seed_list, &SampleOptions { complex_entries: complex })?;
            let mut reports = Vec::new();
            for s in &samples {
                let r = compare(&p, &s.eigenvalues, &g, &CompareOptions::default())?;
                let mut csv = String::from("re,im\n");
                for l in &s.eigenvalues {
                    csv += &format!("{},{}\n", fmt(l.re), fmt(l.im));
                }
                write_file(&out, &format!("eigenvalues_{}.csv", s.seed), &csv)?;
                println!("seed {} inside-fraction {:.4} bulk cells within 3 sigma {}/{}", s.seed, r.inside_fraction, r.bulk_within_3sigma, r.bulk_cells);
                reports.push(json!({"seed": s.seed, "trace_defect": s.trace_defect, "max_residual": s.max_residual, "report": r}));
            }
            write_json(&out, "rmt.json", json!({"command": "rmt", "model": name, "n": n, "complex_entries": complex, "samples": reports}))?;
        }
        Command::PotentialCheck { source, grid, points, h } => {
            let (p, name) = load(&source)?;
            let w = window_for(&p, &grid)?;
            let g = density_grid(&p, w, grid.res.min(64), grid.res.min(64), &DensityOptions::default())?;
            let inside: Vec<Complex64> = (0..g.ny)
                .flat_map(|j| (0..g.nx).map(move |i| (i, j)))
                .filter(|&(i, j)| g.mask[g.idx(i, j)] && g.beta_field[g.idx(i, j)] < -0.05)
                .map(|(i, j)| g.point(i, j))
                .collect();
            if inside.is_empty() {
                return Err(Error::Numerical("no bulk points in the window".into()));
            }
            let h = h.unwrap_or(1e-3 * support_diameter(&p));
            let step = (inside.len() / points.max(1)).max(1);
            let mut csv = String::from("re,im,sigma,minus_laplacian_over_2pi,relative_gap\n");
            let mut worst: f64 = 0.0;
            for z in inside.iter().step_by(step).take(points) {
                let s = sigma_at(&p, *z, &DensityOptions::default())?.value;
                let l = laplacian_check(&p, *z, h, &PotentialOptions::default())?;
                let gap = (l - s).abs() / s.abs().max(1e-300);
                worst = worst.max(gap);
                csv += &format!("{},{},{},{},{}\n", fmt(z.re), fmt(z.im), fmt(s), fmt(l), fmt(gap));
            }
            write_file(&out, "potential.csv", &csv)?;
            println!("{name}: largest relative gap {worst:.3e}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| std::env::var("BROWNMAP_THREADS").ok().and_then(|s| s.parse().ok()));
    if let Some(t) = threads {
        if rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("warning: thread pool already initialized");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
