use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use momsq_cli::commands::*;
use momsq_cli::report::{self, Envelope};
use momsq_cli::svg::{line_plot, Series};
use momsq_cli::{CliError, CliResult};

#[derive(Parser)]
#[command(name = "momsq", version, about = "Square-function experiments on the moment curve")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Report path; defaults to $MOMSQ_OUT_DIR/<command>.json.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct FieldArgs {
    #[arg(long, default_value_t = 2)]
    n: usize,
    /// Lattice refinement (power of two).
    #[arg(long, default_value_t = 1)]
    q: u32,
    /// random | focusing | single[:i] | packets[:m]
    #[arg(long, default_value = "random")]
    profile: String,
}

impl FieldArgs {
    fn config(&self, normalize: bool) -> FieldConfig {
        FieldConfig { n: self.n, q: self.q, profile: self.profile.clone(), normalize }
    }
}

fn seed_list(count: usize, base: u64) -> Vec<u64> {
    (0..count as u64).map(|i| base + i).collect()
}

#[derive(Subcommand)]
enum Command {
    /// Exponent table and its four properties.
    Exponents {
        #[arg(long, default_value_t = 12)]
        n_max: u32,
    },
    /// Block geometry checks.
    Geometry {
        #[arg(value_enum)]
        check: GeometryArg,
        #[arg(long, value_delimiter = ',', default_value = "2")]
        n: Vec<usize>,
        #[arg(long = "R-list", alias = "r-list", value_delimiter = ',', default_value = "16,64,256")]
        r_list: Vec<u64>,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long, default_value_t = 2000)]
        samples: usize,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 100_000_000)]
        cap: usize,
    },
    /// Weight calculus checks.
    Weights {
        #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
        n: Vec<usize>,
        #[arg(long)]
        kappa: Option<f64>,
    },
    /// Square-function ratio over a ladder of scales.
    RatioScan {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long = "R-list", alias = "r-list", value_delimiter = ',', default_value = "16,64,256")]
        r_list: Vec<u64>,
        /// Number of seeds per scale.
        #[arg(long, default_value_t = 16)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// CSV path; defaults next to the report.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Plot of log ratio against log R.
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        min_slope: Option<f64>,
        #[arg(long)]
        max_slope: Option<f64>,
    },
    /// Gradient ascent on the ratio from several starts.
    Optimize {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long, default_value_t = 4.0)]
        p: f64,
        #[arg(long = "R-list", alias = "r-list", value_delimiter = ',', default_value = "16,64")]
        r_list: Vec<u64>,
        #[arg(long, default_value_t = 4)]
        starts: usize,
        #[arg(long, default_value_t = 200)]
        budget: usize,
        #[arg(long)]
        amplitudes: bool,
        #[arg(long)]
        max_slope: Option<f64>,
    },
    /// High/low decomposition diagnostics and the cascade.
    Highlow {
        #[command(flatten)]
        field: FieldArgs,
        #[arg(long = "R", alias = "r", default_value_t = 256)]
        r: u64,
        #[arg(long, default_value_t = 0.5)]
        epsilon: f64,
        #[arg(long, value_delimiter = ',', default_value = "2,3.5,4")]
        p: Vec<f64>,
        #[arg(long, default_value_t = 4)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        #[arg(long, default_value_t = 2)]
        k_exp: u32,
        #[arg(long, default_value_t = 12)]
        level_pairs: usize,
        #[arg(long)]
        d_tilde: Option<f64>,
    },
    /// Closure arithmetic certificates.
    Certify {
        #[arg(value_enum)]
        check: CertifyArg,
        #[arg(long, default_value_t = 3)]
        n: u32,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.25,0.1")]
        epsilon: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,0.5,0.1")]
        eta: Vec<f64>,
        /// Fixed-point exponents as multiples of the growth threshold.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1.5")]
        delta_factor: Vec<f64>,
        #[arg(long = "log2-R", alias = "log2-r", value_delimiter = ',', default_value = "64,256,512")]
        log2_big_r: Vec<f64>,
        #[arg(long, default_value_t = 0.0)]
        log_power: f64,
        #[arg(long, default_value_t = 2.0)]
        ab: f64,
    },
    /// Re-verify a report: hashes, a sample of entries and the summary.
    Replay { report: PathBuf },
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum GeometryArg {
    Census,
    Nesting,
    L2tech,
}

#[derive(clap::ValueEnum, Clone, Copy)]
enum CertifyArg {
    Snmm,
    S1bd,
    FixedPoint,
    Ingredients,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("momsq: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<bool> {
    let threads = cli.threads;
    let out = cli.out.as_deref();
    let mut extras: Option<(Option<PathBuf>, Option<PathBuf>)> = None;
    let config = match cli.command {
        Command::Replay { report: path } => return replay(&path, threads),
        Command::Exponents { n_max } => Config::Exponents(ExponentsConfig { n_max }),
        Command::Geometry { check, n, r_list, seeds, samples, lambda, cap } => Config::Geometry(GeometryConfig {
            check: match check {
                GeometryArg::Census => GeometryCheck::Census,
                GeometryArg::Nesting => GeometryCheck::Nesting,
                GeometryArg::L2tech => GeometryCheck::L2tech,
            },
            n,
            r_list,
            seeds: seed_list(seeds, 0),
            samples,
            lambda,
            cap,
        }),
        Command::Weights { n, kappa } => Config::Weights(WeightsConfig { n, kappa }),
        Command::RatioScan { field, p, r_list, seeds, seed_base, csv, svg, min_slope, max_slope } => {
            extras = Some((csv, svg));
            Config::RatioScan(RatioScanConfig {
                field: field.config(false),
                p,
                r_list,
                seeds: seed_list(seeds, seed_base),
                min_slope,
                max_slope,
            })
        }
        Command::Optimize { field, p, r_list, starts, budget, amplitudes, max_slope } => Config::Optimize(OptimizeConfig {
            field: field.config(false),
            p,
            r_list,
            starts: seed_list(starts, 0),
            budget,
            amplitudes,
            max_slope,
        }),
        Command::Highlow { field, r, epsilon, p, seeds, seed_base, k_exp, level_pairs, d_tilde } => {
            Config::Highlow(HighlowConfig {
                field: field.config(true),
                r,
                epsilon,
                p,
                seeds: seed_list(seeds, seed_base),
                k_exp,
                level_pairs,
                d_tilde,
            })
        }
        Command::Certify { check, n, epsilon, eta, delta_factor, log2_big_r, log_power, ab } => Config::Certify(CertifyConfig {
            check: match check {
                CertifyArg::Snmm => CertifyCheck::Snmm,
                CertifyArg::S1bd => CertifyCheck::S1bd,
                CertifyArg::FixedPoint => CertifyCheck::FixedPoint,
                CertifyArg::Ingredients => CertifyCheck::Ingredients,
            },
            n,
            epsilon,
            eta,
            delta_factor,
            log2_big_r,
            log_power,
            ab,
        }),
    };
    let env = report::run(&config, threads)?;
    let path = report::output_path(out, &format!("{}.json", config.name()));
    report::write_json(&path, &env)?;
    if let (Config::RatioScan(c), Some((csv, svg))) = (&config, extras) {
        let csv = csv.unwrap_or_else(|| path.with_extension("csv"));
        write_ratio_csv(&csv, c, &env)?;
        println!("csv: {}", csv.display());
        if let Some(svg) = svg {
            write_ratio_svg(&svg, c, &env)?;
            println!("svg: {}", svg.display());
        }
    }
    println!("{} entries, summary {}", env.entries.len(), env.summary);
    println!("report: {}", path.display());
    println!("{}", if env.pass { "PASS" } else { "FAIL" });
    Ok(env.pass)
}

fn write_ratio_csv(path: &Path, c: &RatioScanConfig, env: &Envelope) -> CliResult<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Failed(format!("csv: {e}")))?;
    let io = |e: csv::Error| CliError::Failed(format!("csv: {e}"));
    w.write_record(["n", "p", "R", "seed", "numerator", "denominator", "ratio"]).map_err(io)?;
    for e in &env.entries {
        let f = |v: &Value, k: &str| v.get(k).map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            c.field.n.to_string(),
            c.p.to_string(),
            f(&e.key, "R"),
            f(&e.key, "seed"),
            f(&e.value, "numerator"),
            f(&e.value, "denominator"),
            f(&e.value, "ratio"),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn write_ratio_svg(path: &Path, c: &RatioScanConfig, env: &Envelope) -> CliResult<()> {
    let mut series = Vec::new();
    for (label, pick) in [("max", f64::max as fn(f64, f64) -> f64), ("min", f64::min)] {
        let points = c
            .r_list
            .iter()
            .map(|&r| {
                let v = env
                    .entries
                    .iter()
                    .filter(|e| e.key["R"].as_u64() == Some(r))
                    .filter_map(|e| e.value["ratio"].as_f64())
                    .reduce(pick)
                    .unwrap_or(f64::NAN);
                ((r as f64).ln(), v.ln())
            })
            .collect();
        series.push(Series { name: format!("{label} over seeds"), points });
    }
    let title = format!("ratio, n = {}, p = {}", c.field.n, c.p);
    std::fs::write(path, line_plot(&title, "log R", "log ratio", &series))?;
    Ok(())
}

fn replay(path: &Path, threads: Option<usize>) -> CliResult<bool> {
    let env = report::read_json(path)?;
    let rep = report::replay(&env, threads)?;
    if !rep.config_ok {
        println!("config hash mismatch: the config block was edited");
    }
    for i in &rep.tampered {
        println!("hash mismatch at entries[{i}] key {}", env.entries[*i].key);
    }
    for m in &rep.mismatches {
        println!("mismatch at {} (key {}): stored {} recomputed {}", m.location, m.key, m.stored, m.recomputed);
    }
    println!("recomputed {} of {} entries", rep.recomputed.len(), env.entries.len());
    println!("{}", if rep.pass { "REPLAY PASS" } else { "REPLAY FAIL" });
    Ok(rep.pass)
}
