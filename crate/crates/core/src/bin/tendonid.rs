use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use serde::Serialize;

use tendonid::config::{AutoOrder, OrderSetting, ReferenceSpec, RunConfig};
use tendonid::dataset::{fmt_f64, load_csv, save_csv, Dataset};
use tendonid::kinematics::mean_euclidean_error;
use tendonid::model::{load_model, save_model, FitReport};
use tendonid::mpc::reference::Reference;
use tendonid::pipeline::{self, Method, MpcSummary};
use tendonid::sindyc::identify_sindyc;
use tendonid::{Error, Result};

/// System identification and MPC for a two-joint tendon-driven snake robot.
///
/// Exit codes: 0 ok, 2 configuration or usage error, 3 data or I/O error,
/// 4 numerical failure, 5 infeasible control. Errors print one line
/// `error[<kind>]: <message>` on stderr.
#[derive(Parser)]
#[command(name = "tendonid", version)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    N4sid,
    Arx,
    Sindyc,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::N4sid => Method::N4sid,
            MethodArg::Arx => Method::Arx,
            MethodArg::Sindyc => Method::Sindyc,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the plant under the configured excitation and write train.csv, val.csv and provenance.toml.
    GenData {
        #[arg(long)]
        config: PathBuf,
        /// Output directory (default: output_dir from the config).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Low-pass cutoff for the measured angles, rad/sample.
        #[arg(long)]
        filter_cutoff: Option<f64>,
        /// Filter train and validation parts separately, after splitting.
        #[arg(long)]
        filter_after_split: bool,
    },
    /// Identify a model from a training CSV.
    Identify {
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        train: PathBuf,
        /// Hyperparameters from this config file (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// SINDy sparsity threshold.
        #[arg(long)]
        lambda: Option<f64>,
        /// N4SID order: an integer or "auto".
        #[arg(long)]
        order: Option<String>,
        #[arg(long)]
        na: Option<usize>,
        #[arg(long)]
        nb: Option<usize>,
        #[arg(long)]
        nk: Option<usize>,
        /// Model file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Free-run a model on validation data; writes <prefix>_fit.json and <prefix>_sim.csv.
    Validate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Rebuild six joint angles and end-effector positions from a simulated q1/q2 CSV.
    Reconstruct {
        /// Dataset-format CSV whose y1, y2 columns are joint angles.
        #[arg(long)]
        sim: PathBuf,
        /// Measured dataset to compare end-effector positions against.
        #[arg(long)]
        measured: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out_prefix: PathBuf,
    },
    /// Closed-loop MPC against the synthetic plant; writes the log CSV and a summary JSON.
    Mpc {
        #[arg(long)]
        model: PathBuf,
        /// Plant and controller settings (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        /// petal, step, equilibrium, or a t,q1,q2 CSV file (default: config reference).
        #[arg(long)]
        reference: Option<String>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate validation fits found in a run directory.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
    /// gen-data, identify ×3, validate ×3, reconstruct, mpc and report in one go.
    RunAll {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validation fit and sparsity of SINDy models over a range of thresholds.
    SindySweep {
        #[arg(long)]
        train: PathBuf,
        #[arg(long)]
        val: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated thresholds.
        #[arg(long, value_delimiter = ',', default_value = "0.0005,0.001,0.002,0.0035,0.005,0.01,0.02")]
        lambdas: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.tag(), e.to_string().replace('\n', " "));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData { config, out, filter_cutoff, filter_after_split } => {
            let mut cfg = RunConfig::load(&config)?;
            if filter_cutoff.is_some() {
                cfg.excitation.filter_cutoff_rad_per_sample = filter_cutoff;
            }
            cfg.excitation.filter_after_split |= filter_after_split;
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            gen_data(&cfg, &dir)
        }
        Command::Identify { method, train, config, lambda, order, na, nb, nk, out } => {
            let mut ident = match config {
                Some(p) => RunConfig::load(p)?.identification,
                None => Default::default(),
            };
            if let Some(l) = lambda {
                if !(l >= 0.0) {
                    return Err(Error::Config(format!("lambda must be non-negative, got {l}")));
                }
                ident.sindyc.lambda = l;
            }
            if let Some(o) = order {
                ident.n4sid.order = parse_order(&o)?;
            }
            ident.arx.na = na.unwrap_or(ident.arx.na);
            ident.arx.nb = nb.unwrap_or(ident.arx.nb);
            ident.arx.nk = nk.unwrap_or(ident.arx.nk);
            let ds = load_csv(&train)?;
            let model = pipeline::identify(method.into(), &ds, &ident)?;
            save_model(&model, &out)
        }
        Command::Validate { model, data, out_prefix } => {
            let model = load_model(&model)?;
            let val = load_csv(&data)?;
            let v = pipeline::validate(&model, &val)?;
            write_json(&suffixed(&out_prefix, "_fit.json"), &v.report)?;
            save_csv(&v.simulated, suffixed(&out_prefix, "_sim.csv"))?;
            println!("mean fit {:.2}% (per channel {})", v.report.mean_fit, join_fits(&v.report.per_channel_fit));
            Ok(())
        }
        Command::Reconstruct { sim, measured, config, out_prefix } => {
            let kin = match config {
                Some(p) => RunConfig::load(p)?.kinematics,
                None => Default::default(),
            };
            let sim = load_csv(&sim)?;
            let measured = measured.map(load_csv).transpose()?;
            let err = reconstruct(&sim, measured.as_ref(), &kin, &out_prefix)?;
            if let Some(e) = err {
                println!("mean end-effector error {:.4} m", e);
            }
            Ok(())
        }
        Command::Mpc { model, config, reference, horizon, duration, out } => {
            let (mut cfg, base) = match config {
                Some(p) => {
                    let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                    (RunConfig::load(&p)?, base)
                }
                None => (RunConfig::from_toml_str("seed = 0\n[plant]\n")?, PathBuf::new()),
            };
            if let Some(h) = horizon {
                cfg.mpc.horizon = h;
            }
            if let Some(d) = duration {
                cfg.mpc.duration_s = d;
            }
            if let Some(r) = reference {
                cfg.reference = match r.as_str() {
                    "petal" => ReferenceSpec::default(),
                    "step" => ReferenceSpec::Step { q1: 0.3, q2: -0.2, at_s: 1.0 },
                    "equilibrium" => ReferenceSpec::Equilibrium,
                    file => ReferenceSpec::File { path: PathBuf::from(file) },
                };
            }
            cfg.validate()?;
            let reference = cfg.reference.build(&cfg.kinematics, &base)?;
            let model = load_model(&model)?;
            let summary = mpc(&model, model.kind_name(), &cfg, &reference, &out)?;
            println!(
                "rms error {:.4} rad, max solve {:.2} ms, forces in [{:.1}, {:.1}] N",
                summary.rms_error_rad, summary.max_solve_ms, summary.min_force_n, summary.max_force_n
            );
            Ok(())
        }
        Command::Report { dir } => report(&dir).map(|table| print!("{table}")),
        Command::RunAll { config, out } => {
            let cfg = RunConfig::load(&config)?;
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
            run_all(&cfg, &dir, &base)
        }
        Command::SindySweep { train, val, config, lambdas, out } => {
            let ident = match config {
                Some(p) => RunConfig::load(p)?.identification,
                None => Default::default(),
            };
            let train = load_csv(&train)?;
            let val = load_csv(&val)?;
            sindy_sweep(&train, &val, &ident.sindyc.library, &lambdas, &out)
        }
    }
}

fn parse_order(s: &str) -> Result<OrderSetting> {
    if s == "auto" {
        return Ok(OrderSetting::Named(AutoOrder::Auto));
    }
    s.parse::<usize>()
        .ok()
        .filter(|n| *n > 0)
        .map(OrderSetting::Fixed)
        .ok_or_else(|| Error::Config(format!("order must be a positive integer or 'auto', got '{s}'")))
}

fn suffixed(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn join_fits(f: &[f64]) -> String {
    f.iter().map(|v| format!("{v:.2}")).collect::<Vec<_>>().join(", ")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path.display().to_string(), e)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("json: {e}")))?;
    write_text(path, &(text + "\n"))
}

/// Writes `t` plus the matrix columns under `names`.
fn write_table(path: &Path, names: &[&str], dt: f64, values: &DMatrix<f64>) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "t,{}", names.join(","))?;
        for k in 0..values.nrows() {
            write!(w, "{}", fmt_f64(k as f64 * dt))?;
            for v in values.row(k).iter() {
                write!(w, ",{}", fmt_f64(*v))?;
            }
            writeln!(w)?;
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

fn gen_data(cfg: &RunConfig, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let data = pipeline::generate_data(cfg)?;
    save_csv(&data.train, dir.join("train.csv"))?;
    save_csv(&data.val, dir.join("val.csv"))?;
    let echo = format!(
        "# configuration and seed that produced train.csv and val.csv\n{}",
        cfg.to_toml_string()?
    );
    write_text(&dir.join("provenance.toml"), &echo)?;
    info!("wrote {} train and {} validation samples to {}", data.train.len(), data.val.len(), dir.display());
    Ok(())
}

#[derive(Serialize)]
struct ReconstructionSummary {
    samples: usize,
    mean_euclidean_error_m: Option<f64>,
}

fn q12(ds: &Dataset) -> Result<DMatrix<f64>> {
    if ds.num_outputs() != 2 {
        return Err(Error::Dimension(format!("expected 2 joint-angle outputs, got {}", ds.num_outputs())));
    }
    Ok(ds.y().clone())
}

fn reconstruct(
    sim: &Dataset,
    measured: Option<&Dataset>,
    kin: &tendonid::config::KinematicsConfig,
    prefix: &Path,
) -> Result<Option<f64>> {
    let dt = sim.sample_time_s();
    let rec = pipeline::reconstruct(&q12(sim)?, kin)?;
    write_table(&suffixed(prefix, "_joints.csv"), &["q1", "q2", "q3", "q4", "q5", "q6"], dt, &rec.joints)?;
    write_table(&suffixed(prefix, "_ee.csv"), &["x", "y", "z"], dt, &rec.end_effector)?;
    let err = match measured {
        Some(m) => {
            let meas = pipeline::reconstruct(&q12(m)?, kin)?;
            write_table(&suffixed(prefix, "_measured_ee.csv"), &["x", "y", "z"], dt, &meas.end_effector)?;
            Some(mean_euclidean_error(&rec.end_effector, &meas.end_effector)?)
        }
        None => None,
    };
    let summary = ReconstructionSummary { samples: sim.len(), mean_euclidean_error_m: err };
    write_json(&suffixed(prefix, "_summary.json"), &summary)?;
    Ok(err)
}

fn mpc(
    model: &tendonid::model::ModelKind,
    name: &str,
    cfg: &RunConfig,
    reference: &Reference,
    out: &Path,
) -> Result<MpcSummary> {
    let log = pipeline::run_mpc(model, cfg, reference)?;
    log.save_csv(out)?;
    let summary = MpcSummary::from_log(name, &log);
    write_json(&out.with_extension("summary.json"), &summary)?;
    if summary.infeasible_steps == log.records.len() {
        return Err(Error::Infeasible("the controller found no feasible input at any step".into()));
    }
    Ok(summary)
}

/// Fit table from `fit_<method>.json` files; missing ones are listed as absent.
fn report(dir: &Path) -> Result<String> {
    let mut rows = Vec::new();
    for m in Method::ALL {
        let path = dir.join(format!("fit_{m}.json"));
        let fit: Option<FitReport> = match fs::read_to_string(&path) {
            Ok(text) => Some(
                serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?,
            ),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(path.display().to_string(), e)),
        };
        rows.push((m, fit));
    }
    let mut csv = String::from("method,mean_fit,fit_y1,fit_y2\n");
    let mut text = format!("{:<8} {:>9} {:>9} {:>9}\n", "method", "mean fit", "y1", "y2");
    for (m, fit) in &rows {
        match fit {
            Some(f) => {
                let ch = |i: usize| f.per_channel_fit.get(i).map(|v| format!("{v:.2}")).unwrap_or_default();
                csv += &format!("{m},{:.2},{},{}\n", f.mean_fit, ch(0), ch(1));
                text += &format!("{:<8} {:>9.2} {:>9} {:>9}\n", m.name(), f.mean_fit, ch(0), ch(1));
            }
            None => {
                csv += &format!("{m},absent,absent,absent\n");
                text += &format!("{:<8} {:>9}\n", m.name(), "absent");
            }
        }
    }
    write_text(&dir.join("report.csv"), &csv)?;
    write_text(&dir.join("report.txt"), &text)?;
    write_traces(dir)?;
    Ok(text)
}

/// Long-format `series,t,value` file with measured and simulated validation outputs.
fn write_traces(dir: &Path) -> Result<()> {
    let mut sources = Vec::new();
    let val = dir.join("val.csv");
    if val.exists() {
        sources.push(("measured".to_string(), load_csv(&val)?));
    }
    for m in Method::ALL {
        let p = dir.join(format!("sim_{m}.csv"));
        if p.exists() {
            sources.push((m.name().to_string(), load_csv(&p)?));
        }
    }
    if sources.is_empty() {
        return Ok(());
    }
    let path = dir.join("traces.csv");
    let file = fs::File::create(&path).map_err(io_err(&path))?;
    let mut w = std::io::BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "series,t,value")?;
        for (name, ds) in &sources {
            for c in 0..ds.num_outputs() {
                for k in 0..ds.len() {
                    let t = k as f64 * ds.sample_time_s();
                    writeln!(w, "{name}_y{},{},{}", c + 1, fmt_f64(t), fmt_f64(ds.y()[(k, c)]))?;
                }
            }
        }
        w.flush()
    };
    body().map_err(io_err(&path))
}

fn run_all(cfg: &RunConfig, dir: &Path, base: &Path) -> Result<()> {
    gen_data(cfg, dir)?;
    let train = load_csv(dir.join("train.csv"))?;
    let val = load_csv(dir.join("val.csv"))?;

    let models: Vec<(Method, Result<tendonid::model::ModelKind>)> = std::thread::scope(|s| {
        let handles: Vec<_> = Method::ALL
            .into_iter()
            .map(|m| {
                let train = &train;
                (m, s.spawn(move || pipeline::identify(m, train, &cfg.identification)))
            })
            .collect();
        handles
            .into_iter()
            .map(|(m, h)| (m, h.join().unwrap_or_else(|_| Err(Error::Numeric(format!("{m} identification panicked"))))))
            .collect()
    });
    let mut identified = Vec::new();
    for (m, model) in models {
        let model = model?;
        save_model(&model, dir.join(format!("model_{m}.json")))?;
        let v = pipeline::validate(&model, &val)?;
        write_json(&dir.join(format!("fit_{m}.json")), &v.report)?;
        save_csv(&v.simulated, dir.join(format!("sim_{m}.csv")))?;
        info!("{m}: mean validation fit {:.2}%", v.report.mean_fit);
        reconstruct(&v.simulated, Some(&val), &cfg.kinematics, &dir.join(format!("recon_{m}")))?;
        identified.push((m, model));
    }

    let reference = cfg.reference.build(&cfg.kinematics, base)?;
    for (m, model) in &identified {
        if *m == Method::Arx {
            continue;
        }
        let s = mpc(model, m.name(), cfg, &reference, &dir.join(format!("mpc_{m}.csv")))?;
        info!("{m} MPC: rms {:.4} rad, max solve {:.2} ms", s.rms_error_rad, s.max_solve_ms);
    }
    print!("{}", report(dir)?);
    Ok(())
}

fn sindy_sweep(
    train: &Dataset,
    val: &Dataset,
    library: &tendonid::sindyc::LibrarySpec,
    lambdas: &[f64],
    out: &Path,
) -> Result<()> {
    let mut csv = String::from("lambda,nonzeros,mean_fit\n");
    for &l in lambdas {
        if !(l >= 0.0) {
            return Err(Error::Config(format!("lambda must be non-negative, got {l}")));
        }
        let model = identify_sindyc(train, library, l)?;
        let nz = model.nonzeros();
        let fit = match pipeline::validate(&model.into(), val) {
            Ok(v) => format!("{:.4}", v.report.mean_fit),
            Err(Error::Divergence { .. }) => "diverged".into(),
            Err(e) => return Err(e),
        };
        println!("lambda {l}: {nz} nonzeros, fit {fit}");
        csv += &format!("{l},{nz},{fit}\n");
    }
    write_text(out, &csv)
}
