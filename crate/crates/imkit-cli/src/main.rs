//! Command-line front end: catalog models, plausibility curves and regions,
//! validity diagnostics, characteristic solving, and regularity
//! classification, emitting CSV/JSON artifacts.
//!
//! Exit codes: 0 success (including negative diagnostics), 2 configuration
//! error, 3 numerical failure.

mod modelfile;

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use imkit::association::AuxiliaryDistribution;
use imkit::catalog::{
    brownian_conditioning, brownian_q_association, brownian_ratio_conditional_fast,
    brownian_simulate_path, brownian_statistics, brownian_v_field, classify_corpus,
    gaussian_location_scale_model, gaussian_mean_model,
};
use imkit::characteristics::{
    build_field, certify_rectangle, picard_solve, trace_invariants_unchecked,
    verify_local_conditioning, PicardConfig,
};
use imkit::engine::{conditional_plausibility, plausibility_curve, validity_diagnostic};
use imkit::prs::PredictiveRandomSet;
use imkit::regular::{
    degeneracy_rank_test, extract_location_transform, n_sample_separability, separability_test,
    two_parameter_test, DetectorGrid, TransformFlavor,
};
use imkit::stats::{fmt_f64, stream_rng};
use rand::Rng;
use serde_json::json;

#[derive(Parser)]
#[command(name = "imkit", version, about = "Prior-free probabilistic inference toolkit")]
struct Cli {
    /// Worker thread cap (IMKIT_THREADS as fallback). Outputs are identical
    /// for any thread count.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from a catalog model and write it as CSV.
    Simulate(SimulateArgs),
    /// Plausibility curve over a parameter grid, with the region at alpha.
    Plausibility(PlausibilityArgs),
    /// Frequency-calibration diagnostic of a predictive random set.
    Validity(ValidityArgs),
    /// Trace characteristic invariants and certify conditioning variables,
    /// or solve a user field file.
    Characteristics(CharacteristicsArgs),
    /// Classify a model as regular / not regular / degenerate.
    Classify(ClassifyArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Catalog model: gaussian-mean | gaussian-ls | brownian
    #[arg(long)]
    model: String,
    /// Observation count (increments for brownian).
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Noise variance (brownian).
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Signal-to-noise ratio psi; the internal scale parameter is phi = psi/n.
    #[arg(long, default_value_t = 5.0)]
    psi: f64,
    /// What to emit for brownian: path | q
    #[arg(long, default_value = "path")]
    emit: String,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlausibilityArgs {
    /// gaussian-mean | brownian-ratio, or use --model-file
    #[arg(long)]
    model: Option<String>,
    /// TOML expression-grammar model file (one-parameter models).
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Inline data values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Option<Vec<f64>>,
    /// Single-column CSV data file.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Interpret --data as: auto | path | q (brownian-ratio only).
    #[arg(long, default_value = "auto")]
    data_kind: String,
    /// Simulate data instead of reading it: gaussian-mean takes `mu`,
    /// brownian-ratio takes `n,sigma2,psi`.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    simulate: Option<Vec<f64>>,
    /// Known sigma for gaussian-mean.
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Parameter grid lo:hi:count.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Conditional-law grid resolution (brownian-ratio).
    #[arg(long, default_value_t = 161)]
    resolution: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidityArgs {
    /// gaussian-mean (with --sigma) | gaussian-ls
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1)]
    n: usize,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// True parameter values, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta: Vec<f64>,
    #[arg(long)]
    n_sim: usize,
    #[arg(long)]
    seed: u64,
    /// Deliberately scale the realized set radii (diagnostic).
    #[arg(long)]
    shrink: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CharacteristicsArgs {
    /// brownian | gaussian-mean, or use --field-file
    #[arg(long)]
    model: Option<String>,
    /// TOML characteristic-field file; solves and writes the trajectory.
    #[arg(long)]
    field_file: Option<PathBuf>,
    #[arg(long, default_value_t = 6)]
    n: usize,
    /// Anchor parameter values, comma separated (brownian: ln_sigma2,phi).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    theta0: Vec<f64>,
    /// Number of auxiliary draws to trace.
    #[arg(long, default_value_t = 25)]
    trace_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Invariants CSV (catalog models) or trajectory CSV (field files).
    #[arg(long)]
    out: PathBuf,
    /// Conditioning certificate JSON.
    #[arg(long)]
    certificate: Option<PathBuf>,
}

#[derive(Args)]
struct ClassifyArgs {
    /// location | scale | nonseparable | affine2 | dup3 | vandermonde3,
    /// or use --model-file
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Observation count for coordinate-wise tests.
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Auxiliary window lo:hi.
    #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
    u_range: String,
    /// Parameter window lo:hi.
    #[arg(long, default_value = "-1:1", allow_hyphen_values = true)]
    theta_range: String,
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    Config(String),
    Numerical(String),
}

impl From<imkit::ImError> for CliError {
    fn from(e: imkit::ImError) -> Self {
        use imkit::ImError::*;
        match e {
            OutOfBounds { .. } | InvalidInput(..) | Precondition(..) | Parse(..)
            | MissingMarginalCdf => CliError::Config(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        match e.downcast::<imkit::ImError>() {
            Ok(ie) => ie.into(),
            Err(e) => CliError::Config(format!("{e:#}")),
        }
    }
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("IMKIT_THREADS")
            .ok()
            .and_then(|s| s.parse().ok())
    });
    if let Some(t) = threads {
        if t == 0 {
            eprintln!("error: --threads must be positive");
            std::process::exit(2);
        }
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Plausibility(a) => cmd_plausibility(a),
        Command::Validity(a) => cmd_validity(a),
        Command::Characteristics(a) => cmd_characteristics(a),
        Command::Classify(a) => cmd_classify(a),
    };
    match result {
        Ok(()) => {}
        Err(CliError::Config(msg)) => {
            eprintln!("error: {msg}");
            std::process::exit(2);
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            std::process::exit(3);
        }
    }
}

fn parse_grid(spec: &str) -> Result<Vec<f64>, CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 3 {
        return Err(CliError::Config(format!("grid '{spec}' must be lo:hi:count")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid lo '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid hi '{}'", parts[1])))?;
    let count: usize = parts[2]
        .parse()
        .map_err(|_| CliError::Config(format!("bad grid count '{}'", parts[2])))?;
    if !(lo < hi) || count < 2 {
        return Err(CliError::Config(format!(
            "grid '{spec}' needs lo < hi and count >= 2"
        )));
    }
    Ok((0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect())
}

fn parse_range(spec: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = spec.split(':').collect();
    if parts.len() != 2 {
        return Err(CliError::Config(format!("range '{spec}' must be lo:hi")));
    }
    let lo: f64 = parts[0]
        .parse()
        .map_err(|_| CliError::Config(format!("bad range lo '{}'", parts[0])))?;
    let hi: f64 = parts[1]
        .parse()
        .map_err(|_| CliError::Config(format!("bad range hi '{}'", parts[1])))?;
    if !(lo < hi) {
        return Err(CliError::Config(format!("range '{spec}' needs lo < hi")));
    }
    Ok((lo, hi))
}

fn read_column_csv(path: &PathBuf) -> Result<Vec<f64>, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => out.push(v),
            Err(_) if out.is_empty() => continue, // header line
            Err(_) => {
                return Err(CliError::Config(format!(
                    "{}:{}: not a number: '{line}'",
                    path.display(),
                    lineno + 1
                )))
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::Config(format!("{}: no numeric rows", path.display())));
    }
    Ok(out)
}

fn write_file(path: &PathBuf, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn std_prs(dim: usize) -> Result<PredictiveRandomSet, CliError> {
    Ok(PredictiveRandomSet::symmetric(
        AuxiliaryDistribution::standard_normal(dim),
        &vec![0.0; dim],
    )?)
}

fn cmd_simulate(a: SimulateArgs) -> Result<(), CliError> {
    let mut csv = String::new();
    match a.model.as_str() {
        "gaussian-mean" => {
            let assoc = gaussian_mean_model(a.n, a.sigma)?;
            let x = assoc.sample_data(&[a.mu], a.seed)?;
            let _ = writeln!(
                csv,
                "# imkit simulate model=gaussian-mean n={} mu={} sigma={} seed={}",
                a.n, a.mu, a.sigma, a.seed
            );
            csv.push_str("x\n");
            for v in x {
                csv.push_str(&fmt_f64(v));
                csv.push('\n');
            }
        }
        "gaussian-ls" => {
            let assoc = gaussian_location_scale_model(a.n)?;
            let x = assoc.sample_data(&[a.mu, a.sigma], a.seed)?;
            let _ = writeln!(
                csv,
                "# imkit simulate model=gaussian-ls n={} mu={} sigma={} seed={}",
                a.n, a.mu, a.sigma, a.seed
            );
            csv.push_str("x\n");
            for v in x {
                csv.push_str(&fmt_f64(v));
                csv.push('\n');
            }
        }
        "brownian" => {
            let y = brownian_simulate_path(a.n, a.sigma2, a.psi, a.seed)?;
            let _ = writeln!(
                csv,
                "# imkit simulate model=brownian n={} sigma2={} psi={} seed={} emit={}",
                a.n, a.sigma2, a.psi, a.seed, a.emit
            );
            match a.emit.as_str() {
                "path" => {
                    csv.push_str("y\n");
                    for v in y {
                        csv.push_str(&fmt_f64(v));
                        csv.push('\n');
                    }
                }
                "q" => {
                    let q = brownian_statistics(&y)?;
                    csv.push_str("q\n");
                    for v in q {
                        csv.push_str(&fmt_f64(v));
                        csv.push('\n');
                    }
                }
                other => {
                    return Err(CliError::Config(format!(
                        "--emit must be path or q, got '{other}'"
                    )))
                }
            }
        }
        other => return Err(CliError::Config(format!("unknown model '{other}'"))),
    }
    write_file(&a.out, &csv)
}

fn cmd_plausibility(a: PlausibilityArgs) -> Result<(), CliError> {
    let grid = parse_grid(&a.grid)?;
    if !(0.0 < a.alpha && a.alpha < 1.0) {
        return Err(CliError::Config("alpha must be in (0,1)".into()));
    }

    let (curve, model_label) = match (&a.model, &a.model_file) {
        (Some(m), None) if m == "gaussian-mean" => {
            let data = gather_data(&a)?;
            let assoc = gaussian_mean_model(data.len(), a.sigma)?;
            let prs = std_prs(data.len())?;
            (
                plausibility_curve(&assoc, &prs, &data, vec![grid.clone()])?,
                format!("gaussian-mean(n={},sigma={})", data.len(), a.sigma),
            )
        }
        (Some(m), None) if m == "brownian-ratio" => {
            let q = brownian_data(&a)?;
            let mut pl = Vec::with_capacity(grid.len());
            for &phi0 in &grid {
                let (cond, prs) =
                    brownian_ratio_conditional_fast(&q, &[0.0, phi0], a.resolution)?;
                pl.push(conditional_plausibility(&cond, &prs, &q, &[phi0])?);
            }
            (
                imkit::PlausibilityCurve {
                    axes: vec![grid.clone()],
                    pl,
                    assoc_id: format!("brownian-ratio(n={})", q.len()),
                    prs_id: "brownian-ratio-depth".into(),
                },
                format!("brownian-ratio(n={})", q.len()),
            )
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mf = modelfile::ModelFile::parse(&text)?;
            let assoc = mf.association()?;
            let data = gather_data_n(&a, assoc.n_data())?;
            if !assoc.aux().has_marginal_cdf() {
                return Err(CliError::Config(
                    "model-file aux has no marginal CDF; cannot build the symmetric set".into(),
                ));
            }
            let center = vec![median_of(assoc.aux(), 0); assoc.n_data()];
            let prs = PredictiveRandomSet::symmetric(assoc.aux().clone(), &center)?;
            (
                plausibility_curve(&assoc, &prs, &data, vec![grid.clone()])?,
                "expression-model".to_string(),
            )
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --model or --model-file is required".into(),
            ))
        }
    };

    let region = curve.region(a.alpha)?;
    write_file(&a.out, &curve.to_csv())?;
    let sidecar = a.out.with_extension("json");
    let js = json!({
        "model": model_label,
        "seed": a.seed,
        "alpha": a.alpha,
        "region": region.iter().map(|(lo, hi)| vec![lo, hi]).collect::<Vec<_>>(),
        "empty": region.is_empty(),
        "grid": a.grid,
        "curve_csv": a.out.display().to_string(),
    });
    write_file(&sidecar, &serde_json::to_string_pretty(&js).unwrap())
}

fn median_of(aux: &AuxiliaryDistribution, coord: usize) -> f64 {
    // bisection on the marginal CDF
    let (mut lo, mut hi) = (-60.0, 60.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if aux.marginal_cdf(coord, mid).unwrap_or(0.5) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn gather_data(a: &PlausibilityArgs) -> Result<Vec<f64>, CliError> {
    if let Some(x) = &a.x {
        return Ok(x.clone());
    }
    if let Some(path) = &a.data {
        return read_column_csv(path);
    }
    if let Some(theta) = &a.simulate {
        let assoc = gaussian_mean_model(1, a.sigma)?;
        return Ok(assoc.sample_data(theta, a.seed)?);
    }
    Err(CliError::Config(
        "no data: provide --x, --data, or --simulate".into(),
    ))
}

fn gather_data_n(a: &PlausibilityArgs, n: usize) -> Result<Vec<f64>, CliError> {
    let data = if let Some(x) = &a.x {
        x.clone()
    } else if let Some(path) = &a.data {
        read_column_csv(path)?
    } else {
        return Err(CliError::Config(
            "no data: provide --x or --data for model-file runs".into(),
        ));
    };
    if data.len() != n {
        return Err(CliError::Config(format!(
            "model expects {n} observations, data has {}",
            data.len()
        )));
    }
    Ok(data)
}

fn brownian_data(a: &PlausibilityArgs) -> Result<Vec<f64>, CliError> {
    if let Some(theta) = &a.simulate {
        if theta.len() != 3 {
            return Err(CliError::Config(
                "brownian-ratio --simulate needs n,sigma2,psi".into(),
            ));
        }
        let y = brownian_simulate_path(theta[0] as usize, theta[1], theta[2], a.seed)?;
        return Ok(brownian_statistics(&y)?);
    }
    let Some(path) = &a.data else {
        return Err(CliError::Config(
            "no data: provide --data or --simulate for brownian-ratio".into(),
        ));
    };
    let raw = read_column_csv(path)?;
    match a.data_kind.as_str() {
        "q" => Ok(raw),
        "path" => Ok(brownian_statistics(&raw)?),
        // a path can carry negative or zero entries; statistics never do
        "auto" => {
            if raw.iter().all(|v| *v > 0.0) {
                Ok(raw)
            } else {
                Ok(brownian_statistics(&raw)?)
            }
        }
        other => Err(CliError::Config(format!(
            "--data-kind must be auto | path | q, got '{other}'"
        ))),
    }
}

fn cmd_validity(a: ValidityArgs) -> Result<(), CliError> {
    if a.n_sim == 0 {
        return Err(CliError::Config("--n-sim must be >= 1".into()));
    }
    let assoc = match a.model.as_str() {
        "gaussian-mean" => gaussian_mean_model(a.n, a.sigma)?,
        "gaussian-ls" => gaussian_location_scale_model(a.n.max(3))?,
        other => return Err(CliError::Config(format!("unknown model '{other}'"))),
    };
    if a.theta.len() != assoc.params().dim() {
        return Err(CliError::Config(format!(
            "model has {} parameters, --theta gave {}",
            assoc.params().dim(),
            a.theta.len()
        )));
    }
    let mut prs = std_prs(assoc.n_data())?;
    if let Some(s) = a.shrink {
        if !(s > 0.0) {
            return Err(CliError::Config("--shrink must be positive".into()));
        }
        prs = prs.with_radius_scale(s);
    }
    let report = validity_diagnostic(&assoc, &prs, &a.theta, a.n_sim, a.seed)?;
    let js = json!({
        "model": assoc.label(),
        "theta": a.theta,
        "seed": a.seed,
        "shrink": a.shrink,
        "n_sim": report.n_sim,
        "ks_one_sided": report.ks_one_sided,
        "pass": report.pass,
    });
    write_file(&a.out, &serde_json::to_string_pretty(&js).unwrap())?;
    println!(
        "validity: ks_one_sided = {:.5}, pass = {}",
        report.ks_one_sided, report.pass
    );
    Ok(())
}

fn cmd_characteristics(a: CharacteristicsArgs) -> Result<(), CliError> {
    if let Some(path) = &a.field_file {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let ff = modelfile::FieldFile::parse(&text)?;
        let field = ff.field()?;
        let cfg =
            PicardConfig::new(ff.half_widths.clone(), ff.radius)?.with_tol(ff.tol.unwrap_or(1e-10));
        let traj = picard_solve(&field, &ff.u0, &vec![0.0; ff.p], &cfg)?;
        write_file(&a.out, &traj.to_csv(33))?;
        println!(
            "solved: {} iterations, final residual {:.3e}",
            traj.iterations_used, traj.final_residual
        );
        return Ok(());
    }

    match a.model.as_deref() {
        Some("brownian") => {
            if a.theta0.len() != 2 {
                return Err(CliError::Config("brownian needs --theta0 ln_sigma2,phi".into()));
            }
            let n = a.n;
            let field = brownian_v_field(n, &a.theta0)?;
            let (m, l, cert_a) = certify_rectangle(&field, &vec![0.0; n], &[0.0, 0.0], 8.0)?;
            let cfg = PicardConfig::new(vec![cert_a, cert_a], 8.0)?
                .with_degree(3)
                .with_tol(1e-11);
            let mut rng = stream_rng(a.seed, 0x7ace);
            let mut csv = String::new();
            for i in 0..n {
                let _ = write!(csv, "u_{},", i + 1);
            }
            for i in 0..(n - 2) {
                let _ = write!(csv, "inv_{}", i + 1);
                csv.push(if i + 1 == n - 2 { '\n' } else { ',' });
            }
            for _ in 0..a.trace_samples {
                let v: Vec<f64> = (0..n)
                    .map(|_| {
                        let z: f64 = rng.sample(rand_distr::StandardNormal);
                        (z * z).ln()
                    })
                    .collect();
                let inv = trace_invariants_unchecked(&field, &v, &[0.0, 0.0], &cfg)?;
                for x in &v {
                    csv.push_str(&fmt_f64(*x));
                    csv.push(',');
                }
                for (i, x) in inv.iter().enumerate() {
                    csv.push_str(&fmt_f64(*x));
                    csv.push(if i + 1 == inv.len() { '\n' } else { ',' });
                }
            }
            write_file(&a.out, &csv)?;

            // conditioning certificate through the statistics model
            let assoc = brownian_q_association(n)?;
            let mut rng = stream_rng(a.seed, 0xce27);
            let u0: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..3.0)).collect();
            let q = assoc.forward(&u0, &a.theta0)?;
            let cond = brownian_conditioning(&q, &a.theta0)?;
            let mut worst: f64 = 0.0;
            for pos in 0..cond.coeffs.len() {
                let c = cond.clone();
                let eta = move |u: &[f64]| c.h(pos, u);
                worst = worst
                    .max(verify_local_conditioning(&eta, &assoc, &a.theta0, 10, 1e-6, a.seed)?);
            }
            if let Some(cert) = &a.certificate {
                let js = json!({
                    "model": format!("brownian(n={n})"),
                    "theta0": a.theta0,
                    "seed": a.seed,
                    "n_conditioning_variables": cond.coeffs.len(),
                    "max_theta_derivative": worst,
                    "tolerance": 1e-6,
                    "pass": worst <= 1e-6,
                    "rectangle": {"field_sup": m, "lipschitz": l, "half_width": cert_a},
                });
                write_file(cert, &serde_json::to_string_pretty(&js).unwrap())?;
            }
            println!(
                "traced {} samples; certificate max derivative {worst:.3e}",
                a.trace_samples
            );
            Ok(())
        }
        Some("gaussian-mean") => {
            let n = a.n.max(2);
            let assoc = gaussian_mean_model(n, 1.0)?;
            let theta0 = if a.theta0.is_empty() { vec![0.0] } else { a.theta0.clone() };
            let field = build_field(&assoc, &theta0)?;
            let cfg = PicardConfig::new(vec![1.0], 16.0)?.with_degree(3).with_tol(1e-11);
            let mut rng = stream_rng(a.seed, 0x9a);
            let mut csv = String::new();
            for i in 0..n {
                let _ = write!(csv, "u_{},", i + 1);
            }
            for i in 0..(n - 1) {
                let _ = write!(csv, "inv_{}", i + 1);
                csv.push(if i + 2 == n { '\n' } else { ',' });
            }
            for _ in 0..a.trace_samples {
                let u: Vec<f64> = (0..n)
                    .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
                    .collect();
                let inv = trace_invariants_unchecked(&field, &u, &[0.0], &cfg)?;
                for x in &u {
                    csv.push_str(&fmt_f64(*x));
                    csv.push(',');
                }
                for (i, x) in inv.iter().enumerate() {
                    csv.push_str(&fmt_f64(*x));
                    csv.push(if i + 1 == inv.len() { '\n' } else { ',' });
                }
            }
            write_file(&a.out, &csv)?;
            if let Some(cert) = &a.certificate {
                // the difference contrasts are the catalog conditioning
                // variables; certify the first one
                let eta = |u: &[f64]| u[0] - u[1];
                let worst = verify_local_conditioning(&eta, &assoc, &theta0, 20, 1e-6, a.seed)?;
                let js = json!({
                    "model": assoc.label(),
                    "theta0": theta0,
                    "seed": a.seed,
                    "max_theta_derivative": worst,
                    "tolerance": 1e-6,
                    "pass": worst <= 1e-6,
                });
                write_file(cert, &serde_json::to_string_pretty(&js).unwrap())?;
            }
            Ok(())
        }
        Some(other) => Err(CliError::Config(format!("unknown model '{other}'"))),
        None => Err(CliError::Config("provide --model or --field-file".into())),
    }
}

fn cmd_classify(a: ClassifyArgs) -> Result<(), CliError> {
    let mut u_range = parse_range(&a.u_range)?;
    let mut theta_range = parse_range(&a.theta_range)?;

    enum Input {
        Coord(imkit::regular::CoordinateModel),
        Common(imkit::regular::CommonFormModel),
    }

    // named corpus models carry natural evaluation windows; explicit
    // --u-range / --theta-range flags still win
    let defaults_in_use = a.u_range == "-1:1" && a.theta_range == "-1:1";
    let mut prefer = |u: (f64, f64), th: (f64, f64)| {
        if defaults_in_use {
            u_range = u;
            theta_range = th;
        }
    };

    let (input, label) = match (&a.model, &a.model_file) {
        (Some(name), None) => match name.as_str() {
            "location" => (
                Input::Coord(classify_corpus::location_model(a.n.max(2))),
                name.clone(),
            ),
            "scale" => {
                prefer((0.5, 2.5), (1.0, 3.0));
                (Input::Coord(classify_corpus::scale_model(a.n.max(2))), name.clone())
            }
            "nonseparable" => {
                prefer((0.5, 2.5), (0.5, 1.5));
                (Input::Coord(classify_corpus::nonseparable_model()), name.clone())
            }
            "affine2" => (
                Input::Common(classify_corpus::affine_two_parameter_model()),
                name.clone(),
            ),
            "dup3" => (
                Input::Common(classify_corpus::duplicated_three_parameter_model()),
                name.clone(),
            ),
            "vandermonde3" => (
                Input::Common(classify_corpus::vandermonde_three_parameter_model()),
                name.clone(),
            ),
            other => return Err(CliError::Config(format!("unknown model '{other}'"))),
        },
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
            let mf = modelfile::ModelFile::parse(&text)?;
            // ranges declared in the file take precedence over flag defaults
            if let Some(r) = mf.u_range {
                u_range = r;
            }
            if let Some(r) = mf.theta_range {
                theta_range = r;
            }
            let label = format!("model-file:{}", path.display());
            if mf.is_common_form() {
                (Input::Common(mf.common_form_model()?), label)
            } else {
                (Input::Coord(mf.coordinate_model()?), label)
            }
        }
        _ => {
            return Err(CliError::Config(
                "exactly one of --model or --model-file is required".into(),
            ))
        }
    };

    let grid = DetectorGrid::new(vec![u_range], vec![theta_range]);
    let js = match input {
        Input::Coord(model) => {
            let report = if model.n_obs() == 2 {
                separability_test(&model, &grid)?
            } else {
                n_sample_separability(&model, &grid)?
            };
            let verdict = if report.regular {
                let tr = extract_location_transform(&model, &report, &grid)?;
                match tr.flavor() {
                    TransformFlavor::Location => "regular: location".to_string(),
                    TransformFlavor::LocationAfterLog => {
                        "regular: location after log transform".to_string()
                    }
                    TransformFlavor::General => "regular: generalized location".to_string(),
                }
            } else {
                "not regular".to_string()
            };
            println!("{verdict}");
            json!({"model": label, "verdict": verdict, "report": report})
        }
        Input::Common(model) => {
            if model.p() == 2 {
                let grid2 = DetectorGrid::new(
                    vec![u_range, u_range, u_range],
                    vec![theta_range, theta_range],
                );
                let report = two_parameter_test(&model, &grid2)?;
                let verdict = if report.regular {
                    "regular: generalized location-scale (2 parameters)".to_string()
                } else {
                    "not regular".to_string()
                };
                println!("{verdict}");
                json!({"model": label, "verdict": verdict, "report": report})
            } else if model.p() == 3 {
                let thetas: Vec<Vec<f64>> = (0..3)
                    .map(|i| {
                        let t = theta_range.0
                            + (theta_range.1 - theta_range.0) * (i as f64 + 0.5) / 3.0;
                        vec![t, t * 0.7 + 0.1, t * 0.3 - 0.2]
                    })
                    .collect();
                let upts: Vec<f64> = (0..6)
                    .map(|i| u_range.0 + (u_range.1 - u_range.0) * (i as f64 + 0.5) / 6.0)
                    .collect();
                let report = degeneracy_rank_test(&model, &thetas, &upts)?;
                let verdict = if report.degenerate {
                    format!("degenerate, rank {}", report.numerical_rank)
                } else {
                    format!("not degenerate, rank {}", report.numerical_rank)
                };
                println!("{verdict}");
                json!({"model": label, "verdict": verdict, "report": report})
            } else {
                return Err(CliError::Config(format!(
                    "common-form classification supports p = 2 or 3, got {}",
                    model.p()
                )));
            }
        }
    };
    write_file(&a.out, &serde_json::to_string_pretty(&js).unwrap())
}
