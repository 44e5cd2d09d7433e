//! `hecpw`: condensation runs, trace synthesis, noise analysis and fits.
//!
//! Exit status is 0 on success, 1 for convergence or internal failures and
//! 2 for bad input (arguments, files, scenarios).

use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use helium_cpw::config::{resolve_config_path, ScenarioConfig, CONFIG_DIR_ENV};
use helium_cpw::estimation::{
    calibrate_geophone, fit_kinetic, fit_resonance, geophone, FitResult, KineticFitOptions,
};
use helium_cpw::formats::{
    format_trace, format_trajectory, read_columns, read_trace, write_columns, write_json, write_spectrum,
    ColumnTable, FitReport, TraceFile, REPORT_SCHEMA_VERSION, TOOLKIT_VERSION,
};
use helium_cpw::pipeline::{analyze_geophone, analyze_resonator, build_report, simulate_condensation, synthesize};
use helium_cpw::resonator::KineticModel;
use helium_cpw::spectral::Spectrum;
use helium_cpw::synthesis::GeophoneModel;
use helium_cpw::{Error, TimeTrace, Unit};

#[derive(Debug, Parser)]
#[command(name = "hecpw", version, about = "Helium-loaded CPW resonator toolkit")]
struct Cli {
    /// Directory searched for scenario files given by relative path.
    #[arg(long, global = true, env = CONFIG_DIR_ENV)]
    config_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Resonance shift while the cell fills, as a trajectory CSV.
    SimulateCondensation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Displacement, dB and (if configured) geophone traces.
    Synthesize(SynthesizeArgs),
    /// Spectra, band RMS and PT harmonics of a dB or geophone trace.
    Analyze(AnalyzeArgs),
    /// Least-squares fit of a data table.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
struct SynthesizeArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, conflicts_with = "pt_off")]
    pt_on: bool,
    /// Pulse-tube comb removed; the default is the scenario setting.
    #[arg(long)]
    pt_off: bool,
    /// Overrides the scenario seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[arg(long)]
    trace: PathBuf,
    #[arg(long)]
    config: PathBuf,
    /// Geophone model JSON, either a `fit geophone` report or a bare model.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Integration band `f1:f2` in Hz.
    #[arg(long, value_parser = parse_band)]
    band: Option<(f64, f64)>,
    /// PT-off trace analyzed the same way and compared.
    #[arg(long)]
    compare: Option<PathBuf>,
    /// Report JSON; spectra and plot data are written beside it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FitMode {
    Resonance,
    Kinetic,
    Geophone,
}

impl FitMode {
    fn name(self) -> &'static str {
        match self {
            FitMode::Resonance => "resonance",
            FitMode::Kinetic => "kinetic",
            FitMode::Geophone => "geophone",
        }
    }

    fn columns(self) -> &'static [&'static str] {
        match self {
            FitMode::Resonance => &["frequency_hz", "s11_db"],
            FitMode::Kinetic => &["temperature_k", "f_r_hz"],
            FitMode::Geophone => &["time_s", "velocity_m_s", "voltage_v"],
        }
    }
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(value_enum)]
    mode: FitMode,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Exit 0 and keep the result even if the fit did not converge.
    #[arg(long)]
    allow_nonconverged: bool,
    /// Kinetic: hold Tc at this value.
    #[arg(long)]
    freeze_tc_k: Option<f64>,
    /// Kinetic: starting Tc; 1.25 times the highest temperature by default.
    #[arg(long)]
    tc_guess_k: Option<f64>,
    /// Geophone: known preamplifier gain.
    #[arg(long, default_value_t = 100.0)]
    preamp_gain: f64,
}

fn parse_band(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(':').ok_or_else(|| format!("expected f1:f2, got '{s}'"))?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("'{v}' is not a number"));
    Ok((num(a)?, num(b)?))
}

#[derive(Debug)]
enum Failure {
    Input(String),
    Internal(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Internal(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Input(m) | Failure::Internal(m) => f.write_str(m),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Calibration(_) => Failure::Internal(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

type Outcome = Result<(), Failure>;

fn context(path: &Path) -> impl Fn(Error) -> Failure + '_ {
    move |e| match e {
        Error::Io(io) => Failure::Input(format!("{}: {io}", path.display())),
        Error::Json(j) => Failure::Input(format!("{}: {j}", path.display())),
        other => other.into(),
    }
}

fn load_config(path: &Path, dir: Option<&Path>) -> Result<ScenarioConfig, Failure> {
    let resolved = resolve_config_path(path, dir);
    ScenarioConfig::load(&resolved).map_err(context(&resolved))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn simulate_condensation_cmd(config: &Path, out: &Path, dir: Option<&Path>) -> Outcome {
    let cfg = load_config(config, dir)?;
    let traj = simulate_condensation(&cfg)?;
    write_text(out, &format_trajectory(&traj))?;
    if let Some(last) = traj.last() {
        eprintln!(
            "{} points, final region {}, shift {:.4e} Hz",
            traj.len(),
            last.state.region,
            last.shift_hz
        );
    }
    Ok(())
}

fn synthesize_cmd(args: &SynthesizeArgs, dir: Option<&Path>) -> Outcome {
    let cfg = load_config(&args.config, dir)?;
    let pt_on = if args.pt_off {
        false
    } else {
        args.pt_on || cfg.fluctuation.pt_on
    };
    let bundle = synthesize(&cfg, pt_on, args.seed)?;
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| Failure::Input(format!("{}: {e}", args.out_dir.display())))?;
    let mut written = vec![
        ("displacement.csv", &bundle.displacement),
        ("s11_db.csv", &bundle.s11_db),
    ];
    if let Some(g) = &bundle.geophone {
        written.push(("geophone.csv", g));
    }
    for (name, tf) in written {
        write_text(&args.out_dir.join(name), &format_trace(tf)?)?;
    }
    // the scenario travels with its traces so a run can be repeated from the output alone
    write_text(&args.out_dir.join("scenario.toml"), &cfg.to_toml_string()?)?;
    Ok(())
}

fn load_geophone_model(path: &Path) -> Result<GeophoneModel, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    if let Ok(report) = serde_json::from_str::<FitReport>(&text) {
        return geophone::model_from_fit(&report.fit).ok_or_else(|| {
            Failure::Input(format!("{}: fit report does not hold a geophone model", path.display()))
        });
    }
    serde_json::from_str::<GeophoneModel>(&text)
        .map_err(|e| Failure::Input(format!("{}: not a geophone model or fit report: {e}", path.display())))
}

fn with_suffix(out: &Path, suffix: &str) -> PathBuf {
    let stem = out.file_stem().map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
    out.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn write_plot(path: PathBuf, s: &Spectrum, value: &str) -> Outcome {
    let table = ColumnTable::new(&["frequency_hz", value], vec![s.frequencies_hz.clone(), s.asd.clone()]);
    write_columns(&path, &table).map_err(context(&path))
}

struct Analyzed {
    report: helium_cpw::spectral::AnalysisReport,
    /// Spectra for plot data with their column names.
    plots: Vec<(&'static str, &'static str, Spectrum)>,
}

fn analyze_one(tf: &TraceFile, cfg: &ScenarioConfig, args: &AnalyzeArgs) -> Result<Analyzed, Failure> {
    match tf.trace.unit {
        Unit::Decibels => {
            let band = args.band.unwrap_or((cfg.analysis.band_lo_hz, cfg.analysis.band_hi_hz));
            let a = analyze_resonator(tf, cfg, band)?;
            Ok(Analyzed {
                report: a.report,
                plots: vec![
                    ("displacement_asd", "asd_m_per_rthz", a.s_h),
                    ("frequency_asd", "asd_hz_per_rthz", a.s_f),
                    ("db_asd", "asd_db_per_rthz", a.s_db),
                ],
            })
        }
        Unit::Volts => {
            let Some(cal) = &args.calibration else {
                return Err(Failure::Input(
                    "geophone (V) traces need --calibration with a geophone model".into(),
                ));
            };
            let model = load_geophone_model(cal)?;
            let a = analyze_geophone(tf, cfg, &model, args.band)?;
            Ok(Analyzed {
                report: a.report,
                plots: vec![("displacement_asd", "asd_m_per_rthz", a.spectrum)],
            })
        }
        other => Err(Failure::Input(format!(
            "cannot analyze a trace in {other}; expected dB or V"
        ))),
    }
}

fn analyze_cmd(args: &AnalyzeArgs, dir: Option<&Path>) -> Outcome {
    let cfg = load_config(&args.config, dir)?;
    let tf = read_trace(&args.trace).map_err(context(&args.trace))?;
    let on = analyze_one(&tf, &cfg, args)?;
    let source = if tf.trace.unit == Unit::Volts { "geophone" } else { "resonator" };
    let seed = tf.get_parsed::<u64>("seed")?;
    let mut warnings = tf.trace.warnings.clone();

    let off = match &args.compare {
        Some(path) => {
            let other = read_trace(path).map_err(context(path))?;
            if other.trace.unit != tf.trace.unit {
                return Err(Failure::Input(format!(
                    "--compare trace is in {}, primary trace in {}",
                    other.trace.unit, tf.trace.unit
                )));
            }
            warnings.extend(other.trace.warnings.iter().cloned());
            Some(analyze_one(&other, &cfg, args)?)
        }
        None => None,
    };

    for (name, column, s) in &on.plots {
        write_plot(with_suffix(&args.out, name), s, column)?;
    }
    let spectrum_path = with_suffix(&args.out, "spectrum");
    write_spectrum(&spectrum_path, &on.plots[0].2).map_err(context(&spectrum_path))?;
    if let Some(o) = &off {
        for (name, column, s) in &o.plots {
            write_plot(with_suffix(&args.out, &format!("compare_{name}")), s, column)?;
        }
    }

    let report = build_report(&cfg, source, seed, on.report, off.map(|o| o.report), warnings)?;
    write_json(&args.out, &report).map_err(context(&args.out))?;
    eprintln!("delta_h_rms = {:.4e} m", report.analysis.delta_h_rms);
    if let Some(c) = &report.comparison {
        eprintln!("reduction with PT off = {:.2}%", 100.0 * c.reduction);
    }
    Ok(())
}

fn kinetic_start(temps: &[f64], freqs: &[f64], tc_guess: Option<f64>) -> Result<KineticModel, Failure> {
    let coldest = temps
        .iter()
        .zip(freqs)
        .min_by(|a, b| a.0.total_cmp(b.0))
        .ok_or_else(|| Failure::Input("kinetic data is empty".into()))?;
    let t_max = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(KineticModel {
        tc_k: tc_guess.unwrap_or(1.25 * t_max),
        lk_over_lm: 0.1,
        f_r0_hz: *coldest.1,
    })
}

fn run_fit(args: &FitArgs, table: &ColumnTable) -> Result<FitResult, Failure> {
    let col = |name: &str| table.column(name).expect("columns checked on read");
    let fit = match args.mode {
        FitMode::Resonance => fit_resonance(col("frequency_hz"), col("s11_db"), None)?,
        FitMode::Kinetic => {
            let (t, f) = (col("temperature_k"), col("f_r_hz"));
            let start = kinetic_start(t, f, args.tc_guess_k.or(args.freeze_tc_k))?;
            let options = KineticFitOptions { freeze_tc_k: args.freeze_tc_k, ..Default::default() };
            fit_kinetic(t, f, &start, &options)?
        }
        FitMode::Geophone => {
            let time = col("time_s");
            if time.len() < 2 {
                return Err(Failure::Input("geophone record needs at least two rows".into()));
            }
            let fs = (time.len() - 1) as f64 / (time[time.len() - 1] - time[0]);
            if !(fs.is_finite() && fs > 0.0) {
                return Err(Failure::Input("time_s must be increasing".into()));
            }
            let drive = TimeTrace::new(fs, col("velocity_m_s").to_vec(), Unit::MetersPerSecond)?;
            let volts = TimeTrace::new(fs, col("voltage_v").to_vec(), Unit::Volts)?;
            // generic moving-coil sensor; the fit only needs the right order of magnitude
            let start = GeophoneModel {
                natural_frequency_hz: 5.0,
                damping_ratio: 0.5,
                sensitivity_v_s_per_m: 25.0,
                preamp_gain: args.preamp_gain,
            };
            calibrate_geophone(&drive, &volts, &start)?
        }
    };
    Ok(fit)
}

fn fit_cmd(args: &FitArgs) -> Outcome {
    let table = read_columns(&args.data, args.mode.columns()).map_err(context(&args.data))?;
    let fit = run_fit(args, &table)?;
    let report = FitReport {
        schema_version: REPORT_SCHEMA_VERSION,
        toolkit_version: TOOLKIT_VERSION.to_string(),
        mode: args.mode.name().to_string(),
        fit,
    };
    write_json(&args.out, &report).map_err(context(&args.out))?;
    for p in &report.fit.parameters {
        eprintln!("{} = {:.9e} +- {:.3e}", p.name, p.value, p.uncertainty);
    }
    if !report.fit.converged && !args.allow_nonconverged {
        return Err(Failure::Internal(format!(
            "fit did not converge (scaled gradient {:.3e}); result kept in {}",
            report.fit.gradient_norm,
            args.out.display()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let dir = cli.config_dir.as_deref();
    let result = match &cli.command {
        Command::SimulateCondensation { config, out } => simulate_condensation_cmd(config, out, dir),
        Command::Synthesize(a) => synthesize_cmd(a, dir),
        Command::Analyze(a) => analyze_cmd(a, dir),
        Command::Fit(a) => fit_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
