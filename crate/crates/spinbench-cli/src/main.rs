//! Command-line front end for the spinbench workbench: field-swept spectra,
//! rotation patterns, pulse-sequence simulation, decay-trace fitting and
//! relaxation-model curves, written as deterministic CSV plus SVG plots.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spinbench::dynamics::{flipflop_sweep, slr_sweep, FlipFlopModel, SlrModel};
use spinbench::fitting::{
    fit_exponential_recovery, fit_flipflop_model, fit_mims, fit_slr_model, EchoDecayTrace,
    TemperatureSeries,
};
use spinbench::output::{
    atomic_write, line_svg, rotation_csv, rotation_svg, spectrum_csv, spectrum_svg, sweep_csv,
    trace_csv,
};
use spinbench::pulsesim::{load_sequence, OffResonancePolicy, RelaxationSpec, SequenceEngine};
use spinbench::spectra::{resonance_fields, rotation_pattern, ResonanceOptions, StickSpectrum};
use spinbench::spin_core::{Orientation, RotationPlane};

use config::WorkbenchConfig;

#[derive(Parser)]
#[command(
    name = "spinbench",
    version,
    about = "Spin-dynamics workbench for coupled electron-nuclear spin systems"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PlaneArg {
    #[value(name = "bD1")]
    Bd1,
    #[value(name = "D1D2")]
    D1d2,
    #[value(name = "bD2")]
    Bd2,
}

impl From<PlaneArg> for RotationPlane {
    fn from(p: PlaneArg) -> Self {
        match p {
            PlaneArg::Bd1 => RotationPlane::BD1,
            PlaneArg::D1d2 => RotationPlane::D1D2,
            PlaneArg::Bd2 => RotationPlane::BD2,
        }
    }
}

#[derive(Args)]
struct CommonArgs {
    /// Workbench configuration file.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Microwave frequency in GHz (overrides the config).
    #[arg(long, value_name = "F")]
    mw_ghz: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Field-swept stick spectrum at a fixed orientation.
    Spectrum {
        #[command(flatten)]
        common: CommonArgs,
        /// Rotation plane of the field orientation.
        #[arg(long, value_enum, default_value = "bD1")]
        plane: PlaneArg,
        /// Orientation angle within the plane, degrees.
        #[arg(long, value_name = "F", default_value_t = 0.0)]
        angle_deg: f64,
        /// Lower edge of the searched field range, mT.
        #[arg(long, value_name = "F")]
        field_min: f64,
        /// Upper edge of the searched field range, mT.
        #[arg(long, value_name = "F")]
        field_max: f64,
        /// Field grid step, mT.
        #[arg(long, value_name = "F", default_value_t = 0.5)]
        grid_step: f64,
        /// Drop lines weaker than this moment (muB).
        #[arg(long, value_name = "F", default_value_t = 1e-4)]
        moment_floor: f64,
    },
    /// Angular rotation pattern of the stick spectrum within a plane.
    Rotate {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum, default_value = "bD1")]
        plane: PlaneArg,
        #[arg(long, value_name = "F", default_value_t = 0.0)]
        angle_start: f64,
        /// Last angle (below 180), degrees.
        #[arg(long, value_name = "F", default_value_t = 175.0)]
        angle_stop: f64,
        #[arg(long, value_name = "F", default_value_t = 5.0)]
        angle_step: f64,
        #[arg(long, value_name = "F")]
        field_min: f64,
        #[arg(long, value_name = "F")]
        field_max: f64,
        #[arg(long, value_name = "F", default_value_t = 0.5)]
        grid_step: f64,
        #[arg(long, value_name = "F", default_value_t = 1e-4)]
        moment_floor: f64,
    },
    /// Run a pulse-sequence file and write the signal trace.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
        /// Pulse-sequence JSON file.
        #[arg(long, value_name = "PATH")]
        sequence: PathBuf,
        /// Static field magnitude in mT (overrides the config).
        #[arg(long, value_name = "F")]
        field_mt: Option<f64>,
        /// Field orientation plane.
        #[arg(long, value_enum, default_value = "bD1")]
        plane: PlaneArg,
        #[arg(long, value_name = "F", default_value_t = 0.0)]
        angle_deg: f64,
        /// Sample temperature in K.
        #[arg(long, value_name = "F", default_value_t = 0.1)]
        temp_k: f64,
        /// Which system of the config to simulate (0-based).
        #[arg(long, value_name = "N", default_value_t = 0)]
        subsite: usize,
        /// Electron population lifetime, s.
        #[arg(long, value_name = "F")]
        t1e_s: Option<f64>,
        /// Electron coherence time, µs.
        #[arg(long, value_name = "F")]
        t2e_us: Option<f64>,
        /// Nuclear coherence time, µs.
        #[arg(long, value_name = "F")]
        t2n_us: Option<f64>,
        /// Mims stretch exponent.
        #[arg(long, value_name = "F", default_value_t = 1.0)]
        stretch_m: f64,
        /// Disable all relaxation (unitary evolution).
        #[arg(long)]
        no_relaxation: bool,
        /// Treat pulses that match no transition as identity instead of
        /// failing; needed for ENDOR-style frequency sweeps.
        #[arg(long)]
        skip_off_resonant: bool,
    },
    /// Fit a decay trace or temperature series.
    Fit {
        /// What to fit.
        #[arg(long, value_enum)]
        kind: FitKind,
        /// Input CSV file.
        #[arg(long, value_name = "PATH")]
        data: PathBuf,
        /// Output directory.
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// Electron transition energy in GHz (slr fits).
        #[arg(long, value_name = "F")]
        transition_energy_ghz: Option<f64>,
        /// Four comma-separated Zeeman temperatures in K (flipflop fits).
        #[arg(long, value_name = "T1,T2,T3,T4")]
        zeeman_temps_k: Option<String>,
    },
    /// Evaluate a relaxation/decoherence model on a temperature grid.
    Models {
        #[arg(long, value_enum)]
        kind: ModelKind,
        #[arg(long, value_name = "DIR", default_value = "out")]
        out: PathBuf,
        /// SLR prefactor A in 1/s.
        #[arg(long, value_name = "F")]
        slr_a: Option<f64>,
        /// Electron transition energy in GHz.
        #[arg(long, value_name = "F")]
        transition_energy_ghz: Option<f64>,
        /// Flip-flop coupling C in 1/ms.
        #[arg(long, value_name = "F")]
        coupling_c: Option<f64>,
        /// Flip-flop residual D in 1/ms.
        #[arg(long, value_name = "F")]
        residual_d: Option<f64>,
        #[arg(long, value_name = "T1,T2,T3,T4")]
        zeeman_temps_k: Option<String>,
        #[arg(long, value_name = "F", default_value_t = 0.1)]
        t_min: f64,
        #[arg(long, value_name = "F", default_value_t = 0.9)]
        t_max: f64,
        #[arg(long, value_name = "N", default_value_t = 81)]
        t_points: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum FitKind {
    Recovery,
    Mims,
    Slr,
    Flipflop,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Slr,
    Flipflop,
}

fn main() -> ExitCode {
    configure_threads();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

/// SPINBENCH_THREADS caps the rayon pool used for sweeps.
fn configure_threads() {
    if let Ok(v) = std::env::var("SPINBENCH_THREADS") {
        if let Ok(n) = v.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Spectrum {
            common,
            plane,
            angle_deg,
            field_min,
            field_max,
            grid_step,
            moment_floor,
        } => cmd_spectrum(
            common,
            plane.into(),
            angle_deg,
            (field_min, field_max),
            grid_step,
            moment_floor,
        ),
        Command::Rotate {
            common,
            plane,
            angle_start,
            angle_stop,
            angle_step,
            field_min,
            field_max,
            grid_step,
            moment_floor,
        } => cmd_rotate(
            common,
            plane.into(),
            (angle_start, angle_stop, angle_step),
            (field_min, field_max),
            grid_step,
            moment_floor,
        ),
        Command::Simulate {
            common,
            sequence,
            field_mt,
            plane,
            angle_deg,
            temp_k,
            subsite,
            t1e_s,
            t2e_us,
            t2n_us,
            stretch_m,
            no_relaxation,
            skip_off_resonant,
        } => cmd_simulate(SimulateArgs {
            common,
            sequence,
            field_mt,
            plane: plane.into(),
            angle_deg,
            temp_k,
            subsite,
            t1e_s,
            t2e_us,
            t2n_us,
            stretch_m,
            no_relaxation,
            skip_off_resonant,
        }),
        Command::Fit { kind, data, out, transition_energy_ghz, zeeman_temps_k } => {
            cmd_fit(kind, &data, &out, transition_energy_ghz, zeeman_temps_k.as_deref())
        }
        Command::Models {
            kind,
            out,
            slr_a,
            transition_energy_ghz,
            coupling_c,
            residual_d,
            zeeman_temps_k,
            t_min,
            t_max,
            t_points,
        } => cmd_models(
            kind,
            &out,
            ModelParams { slr_a, transition_energy_ghz, coupling_c, residual_d },
            zeeman_temps_k.as_deref(),
            (t_min, t_max, t_points),
        ),
    }
}

fn out_dir(common: &CommonArgs, config: &WorkbenchConfig) -> PathBuf {
    common.out.clone().unwrap_or_else(|| config.out_dir.clone())
}

fn report_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn cmd_spectrum(
    common: CommonArgs,
    plane: RotationPlane,
    angle_deg: f64,
    field_range: (f64, f64),
    grid_step: f64,
    moment_floor: f64,
) -> Result<()> {
    let config = WorkbenchConfig::load(&common.config)?;
    if field_range.1 <= field_range.0 {
        bail!("empty field range: ({}, {}) mT", field_range.0, field_range.1);
    }
    let mw = common.mw_ghz.unwrap_or(config.mw_ghz);
    let orientation = Orientation::in_plane(plane, angle_deg);
    let options = ResonanceOptions { grid_step_mt: grid_step, moment_floor, e_perp: None };
    let parts: spinbench::Result<Vec<StickSpectrum>> = config
        .systems
        .iter()
        .map(|sys| {
            resonance_fields(sys, &orientation, mw, field_range, &options, &config.constants)
        })
        .collect();
    let spectrum = StickSpectrum::merge(parts?);
    report_warnings(&spectrum.warnings);
    let dir = out_dir(&common, &config);
    atomic_write(dir.join("spectrum.csv"), spectrum_csv(&spectrum)?.as_bytes())?;
    let title = format!("ESE spectrum, {mw} GHz, {angle_deg} deg in {plane}");
    atomic_write(dir.join("spectrum.svg"), spectrum_svg(&spectrum, &title).as_bytes())?;
    println!(
        "{} lines in [{}, {}] mT -> {}",
        spectrum.entries.len(),
        field_range.0,
        field_range.1,
        dir.join("spectrum.csv").display()
    );
    Ok(())
}

fn cmd_rotate(
    common: CommonArgs,
    plane: RotationPlane,
    angles: (f64, f64, f64),
    field_range: (f64, f64),
    grid_step: f64,
    moment_floor: f64,
) -> Result<()> {
    let config = WorkbenchConfig::load(&common.config)?;
    if field_range.1 <= field_range.0 {
        bail!("empty field range: ({}, {}) mT", field_range.0, field_range.1);
    }
    let (start, stop, step) = angles;
    if step <= 0.0 || stop < start {
        bail!("bad angle grid: start {start}, stop {stop}, step {step}");
    }
    let mut grid = Vec::new();
    let mut a = start;
    while a <= stop + 1e-9 {
        grid.push(a);
        a += step;
    }
    let mw = common.mw_ghz.unwrap_or(config.mw_ghz);
    let options = ResonanceOptions { grid_step_mt: grid_step, moment_floor, e_perp: None };
    let pattern = rotation_pattern(
        &config.systems,
        plane,
        &grid,
        mw,
        field_range,
        &options,
        &config.constants,
    )?;
    for spec in &pattern.spectra {
        report_warnings(&spec.warnings);
    }
    let dir = out_dir(&common, &config);
    atomic_write(dir.join("rotation.csv"), rotation_csv(&pattern)?.as_bytes())?;
    let title = format!("rotation pattern in {plane}, {mw} GHz");
    atomic_write(dir.join("rotation.svg"), rotation_svg(&pattern, &title).as_bytes())?;
    println!(
        "{} angles, {} lines -> {}",
        pattern.angles_deg.len(),
        pattern.entries().count(),
        dir.join("rotation.csv").display()
    );
    Ok(())
}

struct SimulateArgs {
    common: CommonArgs,
    sequence: PathBuf,
    field_mt: Option<f64>,
    plane: RotationPlane,
    angle_deg: f64,
    temp_k: f64,
    subsite: usize,
    t1e_s: Option<f64>,
    t2e_us: Option<f64>,
    t2n_us: Option<f64>,
    stretch_m: f64,
    no_relaxation: bool,
    skip_off_resonant: bool,
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let config = WorkbenchConfig::load(&args.common.config)?;
    let system = config
        .systems
        .get(args.subsite)
        .with_context(|| format!("config has no subsite index {}", args.subsite))?;
    let sequence = load_sequence(&args.sequence)
        .with_context(|| format!("loading sequence {}", args.sequence.display()))?;
    let field = args.field_mt.unwrap_or(config.field_mt);
    let b = Orientation::in_plane(args.plane, args.angle_deg).direction() * field;

    let relaxation = if args.no_relaxation {
        None
    } else {
        match (args.t1e_s, args.t2e_us, args.t2n_us) {
            (Some(t1e_s), Some(t2e_us), t2n) => Some(RelaxationSpec {
                t1e_s,
                t2e_us,
                t2n_us: t2n.unwrap_or(t2e_us),
                stretch_m: args.stretch_m,
            }),
            (None, None, None) => None,
            _ => bail!("give both --t1e-s and --t2e-us (and optionally --t2n-us), or neither"),
        }
    };

    let mut engine = SequenceEngine::new(system, &b, relaxation, args.temp_k, &config.constants)?;
    if args.skip_off_resonant {
        engine = engine.with_off_resonance_policy(OffResonancePolicy::Identity);
    }
    let trace = engine.run_sequence(&sequence)?;

    let dir = out_dir(&args.common, &config);
    atomic_write(dir.join("trace.csv"), trace_csv(&trace)?.as_bytes())?;
    atomic_write(
        dir.join("trace.svg"),
        line_svg(
            &trace.swept_values,
            &trace.signals,
            "swept value",
            "signal",
            &format!("{}", args.sequence.display()),
        )
        .as_bytes(),
    )?;
    println!(
        "{} points, readout pair ({}, {}) -> {}",
        trace.swept_values.len(),
        trace.readout_pair.0,
        trace.readout_pair.1,
        dir.join("trace.csv").display()
    );
    Ok(())
}

fn parse_zeeman(list: Option<&str>) -> Result<[f64; 4]> {
    let text = list.context("flip-flop models need --zeeman-temps-k T1,T2,T3,T4")?;
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("parsing Zeeman temperatures {text:?}"))?;
    let arr: [f64; 4] = parts
        .try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("need exactly 4 temperatures, got {}", v.len()))?;
    Ok(arr)
}

fn cmd_fit(
    kind: FitKind,
    data: &Path,
    out: &Path,
    transition_energy_ghz: Option<f64>,
    zeeman_temps_k: Option<&str>,
) -> Result<()> {
    let constants = spinbench::constants::PhysicalConstants::default();
    let result = match kind {
        FitKind::Recovery => {
            let trace = EchoDecayTrace::from_csv_file(data)?;
            fit_exponential_recovery(&trace)?
        }
        FitKind::Mims => {
            let trace = EchoDecayTrace::from_csv_file(data)?;
            fit_mims(&trace)?
        }
        FitKind::Slr => {
            let series = TemperatureSeries::from_csv_file(data)?;
            let de = transition_energy_ghz.context("slr fits need --transition-energy-ghz")?;
            fit_slr_model(&series, de, &constants)?
        }
        FitKind::Flipflop => {
            let series = TemperatureSeries::from_csv_file(data)?;
            let temps = parse_zeeman(zeeman_temps_k)?;
            fit_flipflop_model(&series, &temps)?
        }
    };
    let path = out.join("fit.json");
    atomic_write(&path, result.to_json().as_bytes())?;
    for p in &result.parameters {
        println!(
            "{} = {} ± {} {}{}",
            p.name,
            p.value,
            p.sigma,
            p.unit,
            if p.at_bound { " (at bound)" } else { "" }
        );
    }
    println!("-> {}", path.display());
    Ok(())
}

struct ModelParams {
    slr_a: Option<f64>,
    transition_energy_ghz: Option<f64>,
    coupling_c: Option<f64>,
    residual_d: Option<f64>,
}

fn cmd_models(
    kind: ModelKind,
    out: &Path,
    params: ModelParams,
    zeeman_temps_k: Option<&str>,
    grid: (f64, f64, usize),
) -> Result<()> {
    let constants = spinbench::constants::PhysicalConstants::default();
    let (t_min, t_max, t_points) = grid;
    if t_points < 2 || t_max <= t_min || t_min <= 0.0 {
        bail!("bad temperature grid: [{t_min}, {t_max}] with {t_points} points");
    }
    let temps: Vec<f64> = (0..t_points)
        .map(|k| t_min + (t_max - t_min) * k as f64 / (t_points - 1) as f64)
        .collect();
    let (sweep, label) = match kind {
        ModelKind::Slr => {
            let a = params.slr_a.context("slr models need --slr-a")?;
            let de = params
                .transition_energy_ghz
                .context("slr models need --transition-energy-ghz")?;
            let model = SlrModel::new(a, de)?;
            (slr_sweep(&model, &temps, &constants)?, "T1e model")
        }
        ModelKind::Flipflop => {
            let c = params.coupling_c.context("flip-flop models need --coupling-c")?;
            let d = params.residual_d.context("flip-flop models need --residual-d")?;
            let zt = parse_zeeman(zeeman_temps_k)?;
            let model = FlipFlopModel::new(c, d, zt)?;
            (flipflop_sweep(&model, &temps)?, "T2 model")
        }
    };
    let csv_path = out.join("model.csv");
    atomic_write(&csv_path, sweep_csv(&sweep)?.as_bytes())?;
    atomic_write(
        out.join("model.svg"),
        line_svg(&sweep.temperatures_k, &sweep.times_us, "T (K)", "time (us)", label).as_bytes(),
    )?;
    println!(
        "{} points on [{t_min}, {t_max}] K -> {}",
        sweep.temperatures_k.len(),
        csv_path.display()
    );
    Ok(())
}
