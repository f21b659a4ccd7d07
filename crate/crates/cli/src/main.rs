use std::fs::{self, File};
use std::io::{BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;

use opinfer::complexity::{
    evaluate_conditions, max_network_size_scan, min_dwell, PacConfig, DEFAULT_N_MAX, DEFAULT_P_MAX,
};
use opinfer::estimator::{estimate, segments_from_trajectory};
use opinfer::harness::{
    fit_models, ingest_ideology, pac_experiment, predict, round_trip_experiment, sanity_checks, MemberFormat,
};
use opinfer::inference::{infer, DEFAULT_TOL_S};
use opinfer::io;
use opinfer::model::{feasibility_check, seeded_random_state, simulate, Schedule};

const EXIT_VALIDATION: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "opinfer", version, about = "Biased opinion dynamics: simulate, estimate, bound, infer")]
struct Cli {
    /// Seed for every random draw; commands without randomness ignore it.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a system under a regime schedule and write a trajectory CSV.
    Simulate {
        #[arg(long)]
        system: PathBuf,
        /// Blocks such as `-1:20,+1:30`.
        #[arg(long, allow_hyphen_values = true)]
        schedule: String,
        /// Comma-separated initial state; uniform on [-1, 1] when omitted.
        #[arg(long, allow_hyphen_values = true)]
        x1: Option<String>,
        #[arg(long)]
        out: PathBuf,
        /// Leave the latent column out of the CSV.
        #[arg(long)]
        observed_only: bool,
    },
    /// Fit both regimes from a labelled trajectory CSV.
    Estimate {
        #[arg(long)]
        trajectory: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the sample-complexity conditions, a dwell time or the largest certified network.
    Dwell(DwellArgs),
    /// Recover weights, biases and gains from an estimation file.
    Infer {
        #[arg(long)]
        estimation: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL_S)]
        tol_s: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit switching and fixed models on an ideology panel and compare held-out errors.
    Predict(PredictArgs),
    /// Sanity checks on an estimation file, or feasibility of a system file.
    Validate {
        #[arg(long, conflicts_with = "system", required_unless_present = "system")]
        estimation: Option<PathBuf>,
        #[arg(long)]
        system: Option<PathBuf>,
        /// Schedule for the boundedness check.
        #[arg(long, allow_hyphen_values = true, default_value = "-1:50,+1:50")]
        schedule: String,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
    },
    /// Synthetic estimate-then-infer round trip.
    Roundtrip {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.0)]
        sigma_o: f64,
    },
    /// Monte Carlo check of the dwell-time bound.
    Pac {
        #[arg(long)]
        n: usize,
        #[command(flatten)]
        cfg: PacArgs,
        /// Process-noise bound of the sampled system.
        #[arg(long, default_value_t = 0.1)]
        chi: f64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
}

#[derive(Args, Default)]
struct PacArgs {
    /// JSON file with every PacConfig field; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    delta: Option<f64>,
    #[arg(long)]
    eps_net: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    varrho1: Option<f64>,
    #[arg(long)]
    varrho2: Option<f64>,
    #[arg(long)]
    c_univ: Option<f64>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    s_upper: Option<f64>,
    #[arg(long)]
    s_lower: Option<f64>,
    #[arg(long)]
    sigma_o: Option<f64>,
    #[arg(long)]
    sigma_p: Option<f64>,
}

impl PacArgs {
    fn resolve(&self) -> Result<PacConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
            }
            None => PacConfig::default(),
        };
        let overrides = [
            (self.phi, &mut cfg.phi),
            (self.delta, &mut cfg.delta),
            (self.eps_net, &mut cfg.eps_net),
            (self.rho, &mut cfg.rho),
            (self.varrho1, &mut cfg.varrho1),
            (self.varrho2, &mut cfg.varrho2),
            (self.c_univ, &mut cfg.c_univ),
            (self.kappa, &mut cfg.kappa),
            (self.gamma, &mut cfg.gamma),
            (self.s_upper, &mut cfg.s_upper),
            (self.s_lower, &mut cfg.s_lower),
            (self.sigma_o, &mut cfg.sigma_o),
            (self.sigma_p, &mut cfg.sigma_p),
        ];
        for (v, slot) in overrides {
            if let Some(v) = v {
                *slot = v;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct DwellArgs {
    #[command(flatten)]
    cfg: PacArgs,
    /// Network size; without it the largest certified size is reported.
    #[arg(long)]
    n: Option<usize>,
    /// Evaluate the conditions on one window `K:P` instead of searching.
    #[arg(long, value_parser = parse_window)]
    window: Option<(usize, usize)>,
    /// First index of the dwell search.
    #[arg(long, default_value_t = 1)]
    k_start: usize,
    #[arg(long, default_value_t = DEFAULT_P_MAX)]
    p_max: usize,
    /// `-1` window `K:P` for the network-size scan.
    #[arg(long, value_parser = parse_window, requires = "plus")]
    minus: Option<(usize, usize)>,
    /// `+1` window `K:P` for the network-size scan.
    #[arg(long, value_parser = parse_window, requires = "minus")]
    plus: Option<(usize, usize)>,
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    n_cap: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Tidy,
    Voteview,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    members: PathBuf,
    #[arg(long)]
    presidents: PathBuf,
    #[arg(long, value_enum, default_value = "voteview")]
    format: Format,
    /// Chamber kept from a Voteview file; `any` keeps every row.
    #[arg(long, default_value = "Senate")]
    chamber: String,
    /// Training congresses `FIRST:LAST`.
    #[arg(long, value_parser = parse_range, default_value = "40:106")]
    fit: (i64, i64),
    /// Held-out congresses `FIRST:LAST`.
    #[arg(long, value_parser = parse_range, default_value = "107:116")]
    horizon: (i64, i64),
    /// Comma-separated units to keep, in order.
    #[arg(long, value_delimiter = ',')]
    units: Vec<String>,
    /// Directory for the estimation, report and plot CSVs.
    #[arg(long)]
    out_dir: PathBuf,
}

fn parse_window(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s.split_once(':').ok_or("expected K:P")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

fn parse_range(s: &str) -> std::result::Result<(i64, i64), String> {
    let (a, b) = s.split_once(':').ok_or("expected FIRST:LAST")?;
    Ok((a.trim().parse().map_err(|e| format!("{e}"))?, b.trim().parse().map_err(|e| format!("{e}"))?))
}

/// Exit status of a command that ran to completion.
enum Status {
    Ok,
    Invalid,
}

fn emit(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<Status> {
    match cli.command {
        Command::Simulate {
            system,
            schedule,
            x1,
            out,
            observed_only,
        } => {
            let mut sys = io::load_system(&system)?;
            sys.noise.seed = cli.seed;
            let feas = feasibility_check(&sys);
            if !feas.passed() {
                emit(None, &serde_json::to_value(&feas)?)?;
                return Ok(Status::Invalid);
            }
            let schedule: Schedule = schedule.parse()?;
            let x1 = match x1 {
                Some(text) => {
                    let vals = text
                        .split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .context("parsing --x1")?;
                    DVector::from_vec(vals)
                }
                None => seeded_random_state(sys.n(), cli.seed.wrapping_add(1)),
            };
            let mut traj = simulate(&sys, &schedule, &x1)?;
            if observed_only {
                traj.x.clear();
            }
            io::save_trajectory(&out, &traj, None)?;
            Ok(Status::Ok)
        }
        Command::Estimate { trajectory, out } => {
            let (traj, _) = io::load_trajectory(&trajectory)?;
            let est = estimate(&segments_from_trajectory(&traj))?;
            let file = io::EstimationFile::from(&est);
            emit(out.as_deref(), &serde_json::to_value(file)?)?;
            Ok(Status::Ok)
        }
        Command::Dwell(args) => dwell(args),
        Command::Infer { estimation, tol_s, out } => {
            let est = io::load_estimation(&estimation)?;
            let sol = infer(&est, tol_s)?;
            match &out {
                Some(path) => io::save_inference(path, &sol)?,
                None => emit(
                    None,
                    &serde_json::to_value(io::InferenceFile {
                        format_version: io::FORMAT_VERSION,
                        solution: sol.clone(),
                    })?,
                )?,
            }
            Ok(if sol.has_errors() { Status::Invalid } else { Status::Ok })
        }
        Command::Predict(args) => predict_cmd(args),
        Command::Validate {
            estimation,
            system,
            schedule,
            trials,
        } => {
            if let Some(path) = system {
                let report = feasibility_check(&io::load_system(&path)?);
                emit(None, &serde_json::to_value(&report)?)?;
                return Ok(if report.passed() { Status::Ok } else { Status::Invalid });
            }
            let est = io::load_estimation(estimation.as_deref().expect("clap enforces one input"))?;
            let report = sanity_checks(&est, &schedule.parse()?, trials, cli.seed);
            let mut value = serde_json::to_value(&report)?;
            value["entries_ok"] = report.entries_ok().into();
            value["mass_ok"] = report.mass_ok().into();
            value["bounded_ok"] = report.bounded_ok().into();
            emit(None, &value)?;
            Ok(if report.passed() { Status::Ok } else { Status::Invalid })
        }
        Command::Roundtrip { n, sigma_o } => {
            let report = round_trip_experiment(n, cli.seed, sigma_o)?;
            emit(None, &serde_json::to_value(&report)?)?;
            Ok(Status::Ok)
        }
        Command::Pac { n, cfg, chi, trials } => {
            let cfg = cfg.resolve()?;
            let report = pac_experiment(n, &cfg, chi, trials, cli.seed)?;
            let mut value = serde_json::to_value(&report)?;
            value["certified"] = report.certified().into();
            emit(None, &value)?;
            Ok(if report.certified() { Status::Ok } else { Status::Invalid })
        }
    }
}

fn dwell(args: DwellArgs) -> Result<Status> {
    let cfg = args.cfg.resolve()?;
    if let (Some(minus), Some(plus)) = (args.minus, args.plus) {
        let scan = max_network_size_scan(minus, plus, &cfg, args.n_cap)?;
        emit(None, &serde_json::to_value(&scan)?)?;
        return Ok(if scan.n_max > 0 { Status::Ok } else { Status::Invalid });
    }
    let Some(n) = args.n else {
        bail!("--n is required unless --minus and --plus are given");
    };
    if let Some((k, p)) = args.window {
        let report = evaluate_conditions(k, p, n, &cfg)?;
        let mut value = serde_json::to_value(report)?;
        value["margin33"] = report.margin33().into();
        value["margin34"] = report.margin34().into();
        emit(None, &value)?;
        return Ok(if report.both() { Status::Ok } else { Status::Invalid });
    }
    match min_dwell(n, &cfg, args.k_start, args.p_max) {
        Ok(d) => {
            emit(None, &serde_json::to_value(d)?)?;
            Ok(Status::Ok)
        }
        Err(e @ opinfer::Error::DwellNotReachable { .. }) => {
            emit(None, &serde_json::json!({ "reachable": false, "reason": e.to_string() }))?;
            Ok(Status::Invalid)
        }
        Err(e) => Err(e.into()),
    }
}

fn predict_cmd(args: PredictArgs) -> Result<Status> {
    let format = match args.format {
        Format::Tidy => MemberFormat::Tidy,
        Format::Voteview => MemberFormat::Voteview {
            chamber: (!args.chamber.eq_ignore_ascii_case("any")).then(|| args.chamber.clone()),
        },
    };
    let open = |p: &Path| File::open(p).map(BufReader::new).with_context(|| format!("opening {}", p.display()));
    let span = (args.fit.0.min(args.horizon.0), args.fit.1.max(args.horizon.1));
    let (mut panel, ingest) = ingest_ideology(open(&args.members)?, open(&args.presidents)?, &format, span)?;
    if !args.units.is_empty() {
        panel = panel.select_units(&args.units)?;
    }
    let (switching, fixed) = fit_models(&panel, args.fit)?;
    let report = predict(&panel, &switching, &fixed, args.horizon)?;

    fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    io::save_estimation(&dir.join("switching.json"), &switching)?;
    report.write_paths(File::create(dir.join("prediction_paths.csv"))?)?;
    report.write_errors(File::create(dir.join("prediction_errors.csv"))?)?;
    panel.export(File::create(dir.join("panel.csv"))?)?;
    emit(
        None,
        &serde_json::json!({
            "units": report.units,
            "dropped_units": ingest.dropped_units,
            "clamped": ingest.clamped,
            "mean_switching": report.mean_switching,
            "mean_fixed": report.mean_fixed,
            "switching_wins": report.switching_wins,
        }),
    )?;
    Ok(Status::Ok)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Status::Ok) => ExitCode::SUCCESS,
        Ok(Status::Invalid) => ExitCode::from(EXIT_VALIDATION),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
