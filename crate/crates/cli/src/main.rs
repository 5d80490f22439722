//! `cqed-sim`: command-line front end for the cavity-QED magnetometer model.

mod table;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use cqed_core::config::DeviceConfig;
use cqed_core::design::{
    optimal_diamond_config, regions_nested, sensitivity_map_cavity, sensitivity_map_diamond, DesignMap,
    DesignOptions, GsCalibration, MapKind,
};
use cqed_core::dynamics::{ensemble_bins, hysteresis_sweep, integrate, up_then_down, EnsembleState, IntegratorConfig};
use cqed_core::linear::reflection_map;
use cqed_core::measurement::{
    recover_field, synthesize_trace, welch_psd, FieldWaveform, NoiseShape, WelchConfig, DEFAULT_SAMPLE_RATE,
    DEFAULT_SEGMENT_LEN,
};
use cqed_core::model::{dbm_to_watts, hz, watts_to_dbm, Device, DriveParams, TWO_PI};
use cqed_core::noise::{cooling_depth, noise_spectrum, NoiseEnvironment, PhaseNoiseSpectrum};
use cqed_core::nonlinear::{BranchSelection, SaturationModel, SteadyStateSolver};
use cqed_core::sensitivity::{
    broadband_spectrum, default_gamma_p_bounds, evaluate_operating_point, optimize_operating_point,
    AmbientFieldSpectrum, OperatingPoint, OptimizerOptions,
};
use cqed_core::Error;

use table::{Format, Table, Value};

#[derive(Parser, Debug)]
#[command(name = "cqed-sim", version, about = "Cavity-QED spin-ensemble magnetometer simulator")]
struct Cli {
    /// Built-in device parameter set.
    #[arg(long, value_enum, default_value_t = Preset::PaperDevice, global = true)]
    preset: Preset,
    /// JSON device configuration; overrides --preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output file (stdout if omitted).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv, global = true)]
    format: Format,
    /// Worker threads (default: all cores).
    #[arg(long, env = "CQED_SIM_THREADS", global = true)]
    threads: Option<usize>,
    /// Print the resolved device configuration and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum Preset {
    PaperDevice,
    OptimalDiamond,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Linear reflection map over drive and spin detuning.
    Spectrum(SpectrumArgs),
    /// Steady-state roots across a resonant power sweep.
    NonlinearMap(NonlinearArgs),
    /// Time integration of the mean-field equations.
    Simulate(SimulateArgs),
    /// Output noise budget and cooling depth.
    Noise(NoiseArgs),
    /// Operating point and broadband sensitivity.
    Sensitivity(SensitivityArgs),
    /// Design-space sensitivity maps.
    DesignMap(DesignMapArgs),
    /// Synthesize a detector trace and recover the applied field.
    Measure(MeasureArgs),
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    /// Grid preset; only `default` is defined.
    #[arg(long, default_value = "default")]
    grid: String,
    #[arg(long, default_value_t = 8.0)]
    delta_span_mhz: f64,
    #[arg(long, default_value_t = 8.0)]
    delta_s_span_mhz: f64,
    #[arg(long, default_value_t = 401)]
    n_delta: usize,
    #[arg(long, default_value_t = 161)]
    n_delta_s: usize,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum ModelArg {
    Effective,
    Bloch,
}

#[derive(Args, Debug)]
struct PowerSweep {
    #[arg(long, default_value_t = -50.0, allow_negative_numbers = true)]
    p_min_dbm: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    p_max_dbm: f64,
    #[arg(long, default_value_t = 51)]
    n_power: usize,
}

impl PowerSweep {
    fn grid(&self) -> Result<Vec<f64>> {
        if self.n_power == 0 || !(self.p_max_dbm >= self.p_min_dbm) {
            return Err(Error::invalid("p_max_dbm", "need p_max_dbm ≥ p_min_dbm and n_power ≥ 1").into());
        }
        let n = self.n_power;
        Ok((0..n)
            .map(|i| {
                let t = if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
                self.p_min_dbm + t * (self.p_max_dbm - self.p_min_dbm)
            })
            .collect())
    }
}

#[derive(Args, Debug)]
struct NonlinearArgs {
    #[command(flatten)]
    sweep: PowerSweep,
    #[arg(long, value_enum, default_value_t = ModelArg::Effective)]
    model: ModelArg,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Drive power; defaults to the configured drive.
    #[arg(long, allow_negative_numbers = true)]
    power_dbm: Option<f64>,
    /// Equal-mass bins per hyperfine line (odd).
    #[arg(long, default_value_t = 201)]
    bins: usize,
    #[arg(long, default_value_t = 200.0)]
    t_end_us: f64,
    /// Run an up/down resonant power sweep instead of one trajectory.
    #[arg(long)]
    sweep: bool,
    #[command(flatten)]
    powers: PowerSweep,
}

#[derive(Args, Debug)]
struct NoiseArgs {
    #[command(flatten)]
    sweep: PowerSweep,
    /// Carrier offsets in Hz, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "15000")]
    offsets: Vec<f64>,
    /// Bare model: cold spins, no amplifier or phase noise.
    #[arg(long)]
    bare: bool,
    /// Flat source phase noise in dBc/Hz.
    #[arg(long, allow_negative_numbers = true)]
    phase_noise_dbc: Option<f64>,
    /// Report double-sided densities (half the single-sided values).
    #[arg(long)]
    double_sided: bool,
}

#[derive(Args, Debug)]
struct SensitivityArgs {
    /// Optimize power and pump rate; otherwise use the configured drive.
    #[arg(long)]
    optimize: bool,
    #[arg(long, default_value_t = 1.0)]
    f_min_hz: f64,
    #[arg(long, default_value_t = 1e5)]
    f_max_hz: f64,
    #[arg(long, default_value_t = 200)]
    n_f: usize,
    /// Include the laboratory ambient-field background.
    #[arg(long)]
    ambient: bool,
    /// Pump-rate ceiling for the optimizer, Hz.
    #[arg(long, default_value_t = 30e3)]
    gamma_p_cap_hz: f64,
    /// Where to write the JSON summary (stderr if omitted).
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct DesignMapArgs {
    #[arg(value_enum)]
    kind: MapKindArg,
    /// Contour levels in fT/√Hz.
    #[arg(long, value_delimiter = ',')]
    contours: Option<Vec<f64>>,
    /// Contour polyline JSON file (stderr if omitted).
    #[arg(long)]
    contours_out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01)]
    rho_min_ppm: f64,
    #[arg(long, default_value_t = 100.0)]
    rho_max_ppm: f64,
    #[arg(long, default_value_t = 21)]
    n_rho: usize,
    #[arg(long, default_value_t = 1e-3)]
    vd_min_cm3: f64,
    /// Defaults to the mode volume.
    #[arg(long)]
    vd_max_cm3: Option<f64>,
    #[arg(long, default_value_t = 21)]
    n_vd: usize,
    #[arg(long, default_value_t = 1e3)]
    q_min: f64,
    #[arg(long, default_value_t = 1e6)]
    q_max: f64,
    #[arg(long, default_value_t = 7)]
    n_q: usize,
    /// Single-spin coupling range in Hz (defaults around the calibrated value).
    #[arg(long)]
    gs_min_hz: Option<f64>,
    #[arg(long)]
    gs_max_hz: Option<f64>,
    #[arg(long, default_value_t = 5)]
    n_gs: usize,
    #[arg(long, default_value_t = 30e3)]
    gamma_p_cap_hz: f64,
    #[arg(long, default_value_t = 2.2)]
    aspect_ratio: f64,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
enum MapKindArg {
    Diamond,
    Cavity,
}

#[derive(Args, Debug)]
struct MeasureArgs {
    /// Scenario JSON: waveform, duration, seed.
    #[arg(long)]
    scenario: PathBuf,
    /// Optional CSV of the synthesized trace.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Scenario {
    waveform: FieldWaveform,
    duration_s: f64,
    #[serde(default = "default_fs")]
    fs_hz: f64,
    #[serde(default)]
    seed: u64,
    /// Tone frequency to recover; defaults to the waveform's highest tone.
    #[serde(default)]
    recover_hz: Option<f64>,
    #[serde(default)]
    references_t: Vec<f64>,
    #[serde(default = "default_segment")]
    segment_len: usize,
    /// Operating power; the optimizer is used when omitted.
    #[serde(default)]
    power_dbm: Option<f64>,
}

fn default_fs() -> f64 {
    DEFAULT_SAMPLE_RATE
}

fn default_segment() -> usize {
    DEFAULT_SEGMENT_LEN
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Io(_) => 3,
                e if e.is_validation() => 2,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("threads", "must be ≥ 1").into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().ok();
    }
    let cfg = load_config(&cli)?;
    let device = cfg.to_device()?;
    if cli.dump_config {
        return emit_text(cli.out.as_deref(), &(cfg.to_json() + "\n"));
    }
    let Some(cmd) = &cli.command else {
        return Err(Error::invalid("command", "no subcommand given (see --help)").into());
    };
    let ctx = Ctx {
        cfg: &cfg,
        device: &device,
        out: cli.out.as_deref(),
        format: cli.format,
    };
    match cmd {
        Command::Spectrum(a) => spectrum(&ctx, a),
        Command::NonlinearMap(a) => nonlinear_map(&ctx, a),
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Noise(a) => noise(&ctx, a),
        Command::Sensitivity(a) => sensitivity(&ctx, a),
        Command::DesignMap(a) => design_map(&ctx, a),
        Command::Measure(a) => measure(&ctx, a),
    }
}

struct Ctx<'a> {
    cfg: &'a DeviceConfig,
    device: &'a Device,
    out: Option<&'a Path>,
    format: Format,
}

impl Ctx<'_> {
    fn write(&self, t: &Table) -> Result<()> {
        t.write(self.out, self.format)
    }

    fn drive_power_w(&self) -> f64 {
        dbm_to_watts(self.cfg.drive.as_ref().map(|d| d.power_dbm).unwrap_or(-30.0))
    }
}

fn load_config(cli: &Cli) -> Result<DeviceConfig> {
    if let Some(path) = &cli.config {
        let text = fs::read_to_string(path)
            .map_err(Error::Io)
            .with_context(|| format!("reading {}", path.display()))?;
        return Ok(DeviceConfig::from_json(&text)?);
    }
    Ok(match cli.preset {
        Preset::PaperDevice => DeviceConfig::paper_device(),
        Preset::OptimalDiamond => optimal_diamond_config(&DesignOptions::default())?,
    })
}

fn emit_text(out: Option<&Path>, s: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, s)
            .map_err(Error::Io)
            .with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{s}");
            Ok(())
        }
    }
}

fn emit_side(path: Option<&Path>, s: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, s)
            .map_err(Error::Io)
            .with_context(|| format!("writing {}", p.display())),
        None => {
            eprintln!("{s}");
            Ok(())
        }
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

fn logspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    linspace(a.ln(), b.ln(), n).into_iter().map(f64::exp).collect()
}

fn spectrum(ctx: &Ctx, a: &SpectrumArgs) -> Result<()> {
    if a.grid != "default" {
        return Err(Error::invalid("grid", format!("unknown grid `{}`", a.grid)).into());
    }
    let dg: Vec<f64> = linspace(-a.delta_span_mhz, a.delta_span_mhz, a.n_delta).into_iter().map(|f| hz(f * 1e6)).collect();
    let sg: Vec<f64> = linspace(-a.delta_s_span_mhz, a.delta_s_span_mhz, a.n_delta_s)
        .into_iter()
        .map(|f| hz(f * 1e6))
        .collect();
    let map = reflection_map(ctx.device, &dg, &sg)?;
    let mut t = Table::new(&["delta_hz", "delta_s_hz", "re_r", "im_r", "abs_r2"]);
    for (i, &ds) in sg.iter().enumerate() {
        for (j, &d) in dg.iter().enumerate() {
            let r = map.at(i, j);
            t.push(vec![
                Value::F(d / TWO_PI),
                Value::F(ds / TWO_PI),
                Value::F(r.re),
                Value::F(r.im),
                Value::F(r.norm_sqr()),
            ]);
        }
    }
    ctx.write(&t)
}

fn nonlinear_map(ctx: &Ctx, a: &NonlinearArgs) -> Result<()> {
    let model = match a.model {
        ModelArg::Effective => SaturationModel::Effective,
        ModelArg::Bloch => SaturationModel::Bloch,
    };
    let solver = SteadyStateSolver::for_device(ctx.device, model);
    let mut t = Table::new(&[
        "power_dbm", "root", "alpha_sq", "branch", "stable", "n_stable", "chi", "re_r", "im_r",
    ]);
    for p in a.sweep.grid()? {
        let drive = DriveParams::resonant(&ctx.device.cavity, dbm_to_watts(p))?;
        let sols = solver.solve(ctx.device, &drive)?;
        let n_stable = sols.iter().filter(|s| s.stable).count();
        for (k, s) in sols.iter().enumerate() {
            t.push(vec![
                Value::F(p),
                Value::I(k as i64),
                Value::F(s.alpha_sq),
                Value::S(s.branch.label().into()),
                Value::B(s.stable),
                Value::I(n_stable as i64),
                Value::F(s.chi),
                Value::F(s.r.re),
                Value::F(s.r.im),
            ]);
        }
    }
    ctx.write(&t)
}

fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<()> {
    let bins = ensemble_bins(ctx.device, a.bins)?;
    let cfg = IntegratorConfig::default();
    if a.sweep {
        let powers: Vec<f64> = a.powers.grid()?.into_iter().map(dbm_to_watts).collect();
        let seq = up_then_down(&powers);
        let pts = hysteresis_sweep(ctx.device, &bins, &seq, &cfg, a.t_end_us * 1e-6)?;
        let mut t = Table::new(&["step", "direction", "power_dbm", "alpha_sq", "mean_inversion", "converged"]);
        for (i, p) in pts.iter().enumerate() {
            t.push(vec![
                Value::I(i as i64),
                Value::S(if i < powers.len() { "up" } else { "down" }.into()),
                Value::F(watts_to_dbm(p.power_w)),
                Value::F(p.alpha_sq),
                Value::F(p.mean_inversion),
                Value::B(p.converged),
            ]);
        }
        return ctx.write(&t);
    }
    let p = a.power_dbm.map(dbm_to_watts).unwrap_or_else(|| ctx.drive_power_w());
    let drive = match (&ctx.cfg.to_drive(ctx.device)?, a.power_dbm) {
        (Some(d), None) => *d,
        (Some(d), Some(_)) => DriveParams::from_power(&ctx.device.cavity, p, d.delta, d.delta_s)?,
        (None, _) => DriveParams::resonant(&ctx.device.cavity, p)?,
    };
    let cfg = IntegratorConfig {
        steady_state_tol: None,
        sample_interval: Some(a.t_end_us * 1e-6 / 1000.0),
        ..cfg
    };
    let tr = integrate(&EnsembleState::polarized(&bins), ctx.device, &drive, &cfg, a.t_end_us * 1e-6)?;
    let mut t = Table::new(&["t_s", "re_alpha", "im_alpha", "alpha_sq", "mean_inversion"]);
    for s in &tr.samples {
        t.push(vec![
            Value::F(s.t),
            Value::F(s.alpha.re),
            Value::F(s.alpha.im),
            Value::F(s.alpha.norm_sqr()),
            Value::F(s.mean_inversion),
        ]);
    }
    ctx.write(&t)
}

fn noise_env(bare: bool, phase_noise_dbc: Option<f64>) -> Result<NoiseEnvironment> {
    let mut env = if bare { NoiseEnvironment::bare() } else { NoiseEnvironment::reference() };
    if let Some(l) = phase_noise_dbc {
        env.phase_noise = Some(PhaseNoiseSpectrum::flat(l)?);
    }
    env.validate()?;
    Ok(env)
}

fn noise(ctx: &Ctx, a: &NoiseArgs) -> Result<()> {
    let env = noise_env(a.bare, a.phase_noise_dbc)?;
    let k = if a.double_sided { 0.5 } else { 1.0 };
    let mut t = Table::new(&[
        "power_dbm",
        "offset_hz",
        "psd_v2hz_total",
        "thermal_port",
        "thermal_cavity",
        "thermal_spin",
        "phase",
        "amplifier",
        "f_port",
        "f_cavity",
        "f_spin",
        "cooling_db",
    ]);
    for p in a.sweep.grid()? {
        let pw = dbm_to_watts(p);
        let drive = DriveParams::resonant(&ctx.device.cavity, pw)?;
        let budgets = noise_spectrum(ctx.device, &drive, &env, &a.offsets, BranchSelection::FollowFromBelow)?;
        let cool = cooling_depth(ctx.device, pw, &env)?;
        for b in budgets {
            t.push(vec![
                Value::F(p),
                Value::F(b.offset_hz),
                Value::F(k * b.total),
                Value::F(k * b.thermal_port),
                Value::F(k * b.thermal_cavity),
                Value::F(k * b.thermal_spin),
                Value::F(k * b.phase),
                Value::F(k * b.amplifier),
                Value::F(b.fractions.port),
                Value::F(b.fractions.cavity),
                Value::F(b.fractions.spin),
                Value::F(cool),
            ]);
        }
    }
    ctx.write(&t)
}

#[derive(Serialize)]
struct SensitivitySummary {
    optimal_power_dbm: f64,
    gamma_p_hz: f64,
    eta_ft_sqrthz: f64,
    cooling_db: f64,
    signal_v_per_hz: f64,
    noise_v2hz: f64,
    bistable: bool,
    on_boundary: bool,
}

fn operating_point(ctx: &Ctx, optimize: bool, gamma_p_cap_hz: f64) -> Result<OperatingPoint> {
    let env = NoiseEnvironment::reference();
    if optimize {
        let (lo, _) = default_gamma_p_bounds();
        Ok(optimize_operating_point(
            ctx.device,
            &env,
            (dbm_to_watts(-60.0), dbm_to_watts(20.0)),
            (lo.min(hz(gamma_p_cap_hz)), hz(gamma_p_cap_hz)),
            &OptimizerOptions::default(),
        )?)
    } else {
        Ok(evaluate_operating_point(
            ctx.device,
            &env,
            ctx.drive_power_w(),
            ctx.device.spins.gamma_p,
            BranchSelection::FollowFromBelow,
        )?)
    }
}

fn sensitivity(ctx: &Ctx, a: &SensitivityArgs) -> Result<()> {
    let env = NoiseEnvironment::reference();
    let op = operating_point(ctx, a.optimize, a.gamma_p_cap_hz)?;
    let ambient = a.ambient.then(AmbientFieldSpectrum::laboratory);
    let fs = logspace(a.f_min_hz, a.f_max_hz, a.n_f);
    let spec = broadband_spectrum(ctx.device, &op, &env, ambient.as_ref(), &fs, BranchSelection::FollowFromBelow)?;
    let dev = ctx.device.with_gamma_p(op.gamma_p);
    let summary = SensitivitySummary {
        optimal_power_dbm: watts_to_dbm(op.power_w),
        gamma_p_hz: op.gamma_p / TWO_PI,
        eta_ft_sqrthz: op.eta * 1e15,
        cooling_db: cooling_depth(&dev, op.power_w, &env)?,
        signal_v_per_hz: op.s,
        noise_v2hz: op.l,
        bistable: op.bistable,
        on_boundary: op.on_boundary,
    };
    let summary_json = serde_json::to_string_pretty(&summary)?;
    if ctx.format == Format::Json {
        let rows: Vec<_> = spec
            .iter()
            .map(|p| serde_json::json!({"f_hz": p.f_hz, "eta_t_sqrthz": p.eta}))
            .collect();
        let doc = serde_json::json!({"summary": summary, "spectrum": rows});
        emit_text(ctx.out, &(serde_json::to_string_pretty(&doc)? + "\n"))?;
        if let Some(p) = &a.summary {
            emit_side(Some(p), &summary_json)?;
        }
        return Ok(());
    }
    let mut t = Table::new(&["f_hz", "eta_t_sqrthz"]);
    for p in &spec {
        t.push(vec![Value::F(p.f_hz), Value::F(p.eta)]);
    }
    ctx.write(&t)?;
    emit_side(a.summary.as_deref(), &summary_json)
}

#[derive(Serialize)]
struct ContourJson {
    level_ft_sqrthz: f64,
    polylines: Vec<Vec<[f64; 2]>>,
}

fn design_map(ctx: &Ctx, a: &DesignMapArgs) -> Result<()> {
    let opts = DesignOptions {
        aspect_ratio: a.aspect_ratio,
        gamma_p_cap: hz(a.gamma_p_cap_hz),
        gamma_p_min: hz(1e3).min(hz(a.gamma_p_cap_hz)),
        ..Default::default()
    };
    let map: DesignMap = match a.kind {
        MapKindArg::Diamond => {
            let cav = ctx.device.cavity;
            let vd_max = a.vd_max_cm3.unwrap_or(cav.mode_volume * 1e6);
            let rho = logspace(a.rho_min_ppm, a.rho_max_ppm, a.n_rho);
            let vd: Vec<f64> = logspace(a.vd_min_cm3, vd_max, a.n_vd).into_iter().map(|v| v * 1e-6).collect();
            sensitivity_map_diamond(ctx.device, &cav, &rho, &vd, &opts)?
        }
        MapKindArg::Cavity => {
            let g0 = GsCalibration::reference().g_s0 / TWO_PI;
            let gs: Vec<f64> = logspace(a.gs_min_hz.unwrap_or(g0 / 10.0), a.gs_max_hz.unwrap_or(g0 * 10.0), a.n_gs)
                .into_iter()
                .map(hz)
                .collect();
            let q = logspace(a.q_min, a.q_max, a.n_q);
            sensitivity_map_cavity(ctx.device, &q, &gs, &opts)?
        }
    };
    let mut t = match map.kind {
        MapKind::Diamond => Table::new(&["rho_ppm", "vd_cm3", "eta_t_sqrthz", "feasible", "bistable", "rho_used_ppm"]),
        MapKind::Cavity => Table::new(&["q", "gs_hz", "eta_t_sqrthz", "feasible", "bistable", "rho_used_ppm"]),
    };
    for c in &map.cells {
        let (x, y) = match map.kind {
            MapKind::Diamond => (c.y, c.x * 1e6),
            MapKind::Cavity => (c.x, c.y / TWO_PI),
        };
        t.push(vec![
            Value::F(x),
            Value::F(y),
            Value::F(c.eta),
            Value::B(c.feasible),
            Value::B(c.bistable),
            Value::F(c.rho_used_ppm),
        ]);
    }
    ctx.write(&t)?;
    if let Some(levels_ft) = &a.contours {
        let levels: Vec<f64> = levels_ft.iter().map(|l| l * 1e-15).collect();
        if !regions_nested(&map, &levels) {
            log::warn!("contour regions are not nested");
        }
        let out: Vec<ContourJson> = map
            .contours(&levels)
            .into_iter()
            .map(|c| ContourJson {
                level_ft_sqrthz: c.level * 1e15,
                polylines: c
                    .polylines
                    .into_iter()
                    .map(|pl| {
                        pl.into_iter()
                            .map(|(x, y)| match map.kind {
                                MapKind::Diamond => [x * 1e6, y],
                                MapKind::Cavity => [x, y / TWO_PI],
                            })
                            .collect()
                    })
                    .collect(),
            })
            .collect();
        emit_side(a.contours_out.as_deref(), &serde_json::to_string_pretty(&out)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct MeasureSummary {
    recovered_t: f64,
    snr: f64,
    low_snr: bool,
    noise_floor_v2hz: f64,
    comparisons: Vec<cqed_core::measurement::ReferenceComparison>,
}

fn measure(ctx: &Ctx, a: &MeasureArgs) -> Result<()> {
    let text = fs::read_to_string(&a.scenario)
        .map_err(Error::Io)
        .with_context(|| format!("reading {}", a.scenario.display()))?;
    let sc: Scenario = serde_json::from_str(&text)
        .map_err(|e| Error::invalid(cqed_core::config::json_error_key(&e), e.to_string()))?;
    let env = NoiseEnvironment::reference();
    let op = match sc.power_dbm {
        Some(p) => evaluate_operating_point(
            ctx.device,
            &env,
            dbm_to_watts(p),
            ctx.device.spins.gamma_p,
            BranchSelection::FollowFromBelow,
        )?,
        None => operating_point(ctx, true, ctx.device.spins.gamma_p / TWO_PI)?,
    };
    let trace = synthesize_trace(op.s, &NoiseShape::Flat(op.l), &sc.waveform, sc.fs_hz, sc.duration_s, sc.seed)?;
    let psd = welch_psd(
        &trace,
        &WelchConfig {
            segment_len: sc.segment_len,
            ..Default::default()
        },
    )?;
    let mut t = Table::new(&["f_hz", "psd_v2hz"]);
    for (f, p) in psd.freqs.iter().zip(&psd.psd) {
        t.push(vec![Value::F(*f), Value::F(*p)]);
    }
    ctx.write(&t)?;
    if let Some(path) = &a.trace_out {
        let mut tt = Table::new(&["t_s", "v"]);
        for (j, v) in trace.samples.iter().enumerate() {
            tt.push(vec![Value::F(j as f64 / trace.fs), Value::F(*v)]);
        }
        tt.write(Some(path), Format::Csv)?;
    }
    let f = sc.recover_hz.unwrap_or_else(|| sc.waveform.max_frequency());
    if f > 0.0 {
        let est = recover_field(&trace, op.s, f, &sc.references_t)?;
        let s = MeasureSummary {
            recovered_t: est.amplitude_t,
            snr: est.snr,
            low_snr: est.low_snr,
            noise_floor_v2hz: est.noise_floor_v2hz,
            comparisons: est.comparisons,
        };
        eprintln!("{}", serde_json::to_string_pretty(&s)?);
    }
    Ok(())
}
