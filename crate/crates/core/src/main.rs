use clap::{Parser, Subcommand};
use oam_memory::bench::{log_grid, threshold_curve, verdict, BenchmarkInput};
use oam_memory::config::{ExperimentConfig, StateSpec};
use oam_memory::eit::{group_delay, simulate_storage, ControlTimeline};
use oam_memory::experiment::{self as exp, Calibration, ExperimentError, MatrixReport};
use oam_memory::holo::{self, analyze, fork_pattern, project_arm_physical, Arm, ForkOptics, ForkSpec};
use oam_memory::io::{write_atomic, write_csv, write_json};
use oam_memory::mode::qubit_field;
use oam_memory::phaseref::phase_difference;
use oam_memory::tomo::{background_subtract, estimate_fidelity, CountsTable};
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "oam-memory", version, about = "OAM qubit quantum memory simulator")]
struct Cli {
    /// TOML configuration file; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (results do not depend on this).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// SLM preparation patterns, fork holograms and a projector check.
    Hologram,
    /// Slow-light and storage simulation at the calibrated control field.
    Storage,
    /// Phase scan of a retrieved |A> state.
    Fringe {
        /// Also write every click as (trial, detector, bin, t).
        #[arg(long)]
        clicks: bool,
    },
    /// Phase-reference camera timeline and sample images.
    Phasecal {
        /// Number of sample frames written as PGM.
        #[arg(long, default_value_t = 8)]
        images: usize,
    },
    /// Six-state tomography, or reconstruction of a measured counts table.
    Tomography {
        /// Counts CSV (outcome,counts,background,pulses) to reconstruct instead of simulating.
        #[arg(long)]
        counts: Option<PathBuf>,
        /// Input states (cardinal name or "theta,phi"); overrides the config list.
        #[arg(long = "state")]
        states: Vec<StateSpec>,
    },
    /// Average fidelity against n̄ with the classical threshold.
    FidelitySweep,
    /// Classical threshold curve, plus a verdict when a fidelity is given.
    Benchmark {
        /// Measured average fidelity to test against the threshold
        #[arg(long)]
        fidelity: Option<f64>,
        /// Its standard deviation
        #[arg(long, default_value_t = 0.0)]
        fidelity_sigma: f64,
    },
    /// Fit the memory and analyzer to the calibration anchors.
    Calibrate,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    body: &'a T,
}

fn tagged<T: Serialize>(cfg: &ExperimentConfig, body: &T) -> serde_json::Value {
    serde_json::to_value(Envelope {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        body,
    })
    .expect("report serializes")
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn file_label(s: &StateSpec) -> String {
    s.label().replace(',', "_")
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), ExperimentError> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out_dir = o;
    }
    cfg.validate()?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| ExperimentError::Simulation(e.to_string()))?;
    }
    let out = cfg.out_dir.clone();
    match cli.command {
        Command::Hologram => hologram(&cfg, &out),
        Command::Storage => storage(&cfg, &out),
        Command::Fringe { clicks } => fringe(&cfg, &out, clicks),
        Command::Phasecal { images } => phasecal(&cfg, &out, images),
        Command::Tomography { counts, states } => {
            if !states.is_empty() {
                cfg.states = states;
            }
            match counts {
                Some(path) => reconstruct_file(&cfg, &out, &path),
                None => tomography(&cfg, &out),
            }
        }
        Command::FidelitySweep => sweep(&cfg, &out),
        Command::Benchmark {
            fidelity,
            fidelity_sigma,
        } => benchmark(&cfg, &out, fidelity, fidelity_sigma),
        Command::Calibrate => {
            let (cal, _) = exp::calibrate(&cfg)?;
            write_json(&out.join("calibration.json"), &tagged(&cfg, &cal))?;
            Ok(())
        }
    }
}

fn hologram(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct StateCheck {
        state: String,
        mode_space: [[f64; 2]; 2],
        physical: [[f64; 2]; 2],
        first_order_efficiency: [f64; 2],
    }
    #[derive(Serialize)]
    struct HologramReport {
        fiber_waist: f64,
        mode_match: f64,
        blaze_period: f64,
        states: Vec<StateCheck>,
    }
    for s in &cfg.states {
        let p = holo::slm_qubit_pattern(&s.qubit(), cfg.slm_nx, cfg.slm_ny, cfg.slm_pitch);
        write_atomic(&out.join(format!("slm_{}.pgm", file_label(s))), |w| p.write_pgm(w))?;
    }
    let blaze_period = 12.0 * cfg.slm_pitch;
    for arm in [Arm::Right, Arm::Left] {
        let spec = ForkSpec {
            delta_l: arm.oam_shift(),
            blaze_period,
            center: ((cfg.slm_nx / 2) as f64, (cfg.slm_ny / 2) as f64),
        };
        let p = fork_pattern(&spec, cfg.slm_nx, cfg.slm_ny, cfg.slm_pitch)?;
        let name = match arm {
            Arm::Right => "fork_right.pgm",
            Arm::Left => "fork_left.pgm",
        };
        write_atomic(&out.join(name), |w| p.write_pgm(w))?;
    }
    let grid = exp::projector_grid(cfg)?;
    let (fiber_waist, mode_match) = holo::optimal_fiber_waist(cfg.signal_waist, &grid)?;
    let optics = ForkOptics::default_for(&grid);
    let mut states = Vec::new();
    for s in &cfg.states {
        let f = qubit_field(&s.qubit(), cfg.signal_waist, &grid)?;
        let (a, b) = analyze(&f, fiber_waist)?;
        let r = project_arm_physical(&f, Arm::Right, fiber_waist, &optics)?;
        let l = project_arm_physical(&f, Arm::Left, fiber_waist, &optics)?;
        states.push(StateCheck {
            state: s.label(),
            mode_space: [[a.re, a.im], [b.re, b.im]],
            physical: [[r.amplitude.re, r.amplitude.im], [l.amplitude.re, l.amplitude.im]],
            first_order_efficiency: [r.first_order_efficiency, l.first_order_efficiency],
        });
    }
    let report = HologramReport {
        fiber_waist,
        mode_match,
        blaze_period: optics.blaze_period,
        states,
    };
    write_json(&out.join("hologram.json"), &tagged(cfg, &report))?;
    Ok(())
}

fn storage(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct StorageReport<'a> {
        calibration: &'a oam_memory::eit::MemoryCalibration,
        input_energy: f64,
        leaked: f64,
        retrieved: f64,
        absorbed: f64,
        remaining: f64,
        balance_error: f64,
        slow_light_delay: f64,
        slow_light_transmission: f64,
        model_group_delay: f64,
    }
    let (cal, run) = exp::calibrate(cfg)?;
    let p = exp::lambda_params(cfg).with_control(cal.memory.omega_c);
    let slow = simulate_storage(&exp::pulse_shape(cfg), &ControlTimeline::slow_light(), &p)?;
    let rows = (0..run.times.len()).map(|k| {
        [
            num(run.times[k]),
            num(run.input[k].norm_sqr()),
            num(run.output[k].norm_sqr()),
            num(run.control[k]),
        ]
    });
    write_csv(&out.join("storage.csv"), &["t", "input_intensity", "output_intensity", "control"], rows)?;
    let report = StorageReport {
        calibration: &cal.memory,
        input_energy: run.input_energy,
        leaked: run.leaked,
        retrieved: run.retrieved,
        absorbed: run.absorbed,
        remaining: run.remaining,
        balance_error: run.balance_error(),
        slow_light_delay: slow.channel.delay,
        slow_light_transmission: slow.transmitted() / slow.input_energy,
        model_group_delay: group_delay(&p),
    };
    write_json(&out.join("storage.json"), &tagged(cfg, &report))?;
    Ok(())
}

fn fringe(cfg: &ExperimentConfig, out: &Path, clicks: bool) -> Result<(), ExperimentError> {
    let (cal, _) = exp::calibrate(cfg)?;
    let run = exp::run_fringe(cfg, &cal)?;
    let k = if cfg.rescale_apd2 { 2.0 } else { 1.0 };
    let rows = run.scan.bins.iter().enumerate().map(|(i, b)| {
        let p = b.pulses.max(1) as f64;
        [
            i.to_string(),
            num(oam_memory::detect::bin_center(i)),
            b.pulses.to_string(),
            b.apd1.to_string(),
            b.apd2.to_string(),
            num(b.apd1 as f64 / p),
            num(k * b.apd2 as f64 / p),
        ]
    });
    write_csv(
        &out.join("fringe.csv"),
        &["bin", "phi", "pulses", "counts1", "counts2", "rate1", "rate2"],
        rows,
    )?;
    write_json(&out.join("fringe.json"), &run.report)?;
    if clicks {
        let rec = exp::click_record(cfg, &run.frames, &run.counts, "fringe/clicks");
        write_atomic(&out.join("clicks.csv"), |w| rec.write_csv(w).map_err(std::io::Error::other))?;
    }
    Ok(())
}

fn phasecal(cfg: &ExperimentConfig, out: &Path, images: usize) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct PhaseReport {
        frames: usize,
        phase_rms: f64,
        within_one_bin: f64,
        max_error: f64,
    }
    let cam = exp::camera(cfg)?;
    let label = "fringe/camera";
    let frames = exp::phase_timeline(cfg, &cam, cfg.fringe_pulses_per_bin, label)?;
    let rows = frames.iter().map(|f| [num(f.time), num(f.measured_phase), f.bin.to_string(), num(f.true_phase)]);
    write_csv(&out.join("phase_timeline.csv"), &["t", "phi", "bin", "true_phi"], rows)?;
    let errors: Vec<f64> = frames
        .iter()
        .map(|f| phase_difference(f.measured_phase, f.true_phase).abs())
        .collect();
    let one_bin = std::f64::consts::TAU / oam_memory::detect::PHASE_BINS as f64;
    let report = PhaseReport {
        frames: frames.len(),
        phase_rms: exp::phase_rms(&frames),
        within_one_bin: errors.iter().filter(|e| **e < one_bin).count() as f64 / frames.len() as f64,
        max_error: errors.iter().copied().fold(0.0, f64::max),
    };
    write_json(&out.join("phasecal.json"), &tagged(cfg, &report))?;
    let n = images.min(frames.len());
    for j in 0..n {
        let f = &frames[j * frames.len() / n];
        let img = exp::render_frame(cfg, &cam, f, label);
        write_atomic(&out.join(format!("frame_{:05}.pgm", f.index)), |w| img.write_pgm(w))?;
    }
    Ok(())
}

fn tomography(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let (cal, _) = exp::calibrate(cfg)?;
    let report = exp::run_tomography(cfg, &cal)?;
    for (s, r) in cfg.states.iter().zip(&report.states) {
        write_atomic(&out.join(format!("counts_{}.csv", file_label(s))), |w| {
            r.counts.write_csv(w).map_err(std::io::Error::other)
        })?;
    }
    write_json(&out.join("tomography.json"), &report)?;
    Ok(())
}

fn reconstruct_file(cfg: &ExperimentConfig, out: &Path, path: &Path) -> Result<(), ExperimentError> {
    #[derive(Serialize)]
    struct FileReport {
        counts_file: String,
        state: String,
        raw: oam_memory::tomo::FidelityEstimate,
        corrected: oam_memory::tomo::FidelityEstimate,
        rho_raw: MatrixReport,
        rho_corrected: MatrixReport,
        clamped: Vec<oam_memory::mode::Cardinal>,
    }
    let file = std::fs::File::open(path)?;
    let table = CountsTable::read_csv(file)
        .map_err(|e| ExperimentError::Config(oam_memory::config::ConfigError::Invalid(e.to_string())))?;
    let state = cfg.states.first().expect("validated non-empty");
    let q = state.qubit();
    let (rho_raw, raw) = estimate_fidelity(&table, &q, 0.0)?;
    let sub = background_subtract(&table);
    let (rho_corrected, corrected) = estimate_fidelity(&sub, &q, 0.0)?;
    let report = FileReport {
        counts_file: path.display().to_string(),
        state: state.label(),
        raw,
        corrected,
        rho_raw: (&rho_raw).into(),
        rho_corrected: (&rho_corrected).into(),
        clamped: sub.clamped,
    };
    write_json(&out.join("reconstruction.json"), &tagged(cfg, &report))?;
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<(), ExperimentError> {
    let (cal, _) = exp::calibrate(cfg)?;
    let rows = exp::run_fidelity_sweep(cfg, &cal)?;
    let csv_rows = rows.iter().map(|r| {
        [
            r.mean_photon_number,
            r.fidelity_raw,
            r.sigma_raw,
            r.fidelity_corrected,
            r.sigma_corrected,
            r.threshold,
            r.threshold_lo,
            r.threshold_hi,
        ]
        .map(num)
    });
    write_csv(
        &out.join("fidelity_sweep.csv"),
        &[
            "n", "f_raw", "sigma_raw", "f_corrected", "sigma_corrected", "f_classical", "f_classical_lo", "f_classical_hi",
        ],
        csv_rows,
    )?;
    write_json(&out.join("fidelity_sweep.json"), &tagged(cfg, &SweepMeta { calibration: &cal }))?;
    Ok(())
}

#[derive(Serialize)]
struct SweepMeta<'a> {
    calibration: &'a Calibration,
}

fn benchmark(cfg: &ExperimentConfig, out: &Path, fidelity: Option<f64>, fidelity_sigma: f64) -> Result<(), ExperimentError> {
    let eta = cfg.efficiency_target;
    let means = log_grid(cfg.sweep_min, cfg.sweep_max, cfg.sweep_points);
    let curve = threshold_curve(&means, eta, cfg.efficiency_sigma, cfg.vacuum);
    let rows = curve.iter().map(|r| [num(r[0]), num(r[2]), num(r[3]), num(r[4]), num(r[1])]);
    write_csv(
        &out.join("threshold_curve.csv"),
        &["n", "f_classical", "f_classical_eta_lo", "f_classical_eta_hi", "f_classical_unit_eta"],
        rows,
    )?;
    if let Some(f) = fidelity {
        let v = verdict(&BenchmarkInput {
            mean_photon_number: cfg.mean_photon_number,
            eta,
            eta_sigma: cfg.efficiency_sigma,
            fidelity: f,
            fidelity_sigma,
            vacuum: cfg.vacuum,
        })?;
        write_json(&out.join("verdict.json"), &tagged(cfg, &v))?;
    }
    Ok(())
}
