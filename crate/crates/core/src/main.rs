use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use semcom::harness::{sweep, ExperimentConfig, Framework, Prepared, OUT_DIR_ENV};
use semcom::io::save_ppm;
use semcom::render::render_image;
use semcom::scene::animate_with;
use semcom::Error;

#[derive(Parser)]
#[command(name = "semcom", version, about = "Image vs. semantic transmission for remote 3D scene reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an SNR × seed sweep and write CSV, PLY and PPM outputs.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Restrict to these frameworks (imagecom, m-gscm, s-gscm).
        #[arg(long = "framework")]
        frameworks: Vec<Framework>,
        /// Comma-separated SNR values in dB.
        #[arg(long, value_delimiter = ',')]
        snr_list: Vec<f64>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the base-knowledge preamble for a configuration.
    Baseknow {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render one ground-truth frame from one camera as PPM.
    Render {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        frame: u32,
        #[arg(long)]
        camera: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    match cli.command {
        Command::Run { config, frameworks, snr_list, seeds, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if !frameworks.is_empty() {
                cfg.frameworks = frameworks;
            }
            if !snr_list.is_empty() {
                cfg.snr_db = snr_list;
            }
            if !seeds.is_empty() {
                cfg.seeds = seeds;
            }
            if let Some(dir) = std::env::var_os(OUT_DIR_ENV) {
                cfg.output_dir = dir.into();
            }
            if let Some(dir) = out {
                cfg.output_dir = dir;
            }
            cfg.validate()?;
            let outcome = sweep(&cfg)?;
            println!(
                "{} rows written to {} ({} failed)",
                outcome.rows.len(),
                outcome.output_dir.display(),
                outcome.failures
            );
            for s in &outcome.summary {
                println!(
                    "{:>9} snr={:>5} kpe={:.3}px pck={:.3} p2p={:.4}m td={:.4}s",
                    s.framework, s.snr_db, s.kpe_median, s.pck_median, s.p2p_median, s.td_median
                );
            }
            Ok(if outcome.failures > 0 { ExitCode::from(3) } else { ExitCode::SUCCESS })
        }
        Command::Baseknow { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            cfg.frames = 1;
            cfg.frameworks = vec![Framework::MGscm];
            let prep = Prepared::new(&cfg)?;
            std::fs::write(&out, prep.base.to_bytes())?;
            println!("{} bits written to {}", prep.base_bits, out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Render { config, frame, camera, out } => {
            let cfg = ExperimentConfig::load(&config)?;
            let scenario = cfg.load_scenario()?;
            let cameras = cfg.rig.build()?;
            let cam = cameras.get(camera).ok_or_else(|| {
                Error::Config(format!("camera {camera} out of range (rig has {})", cameras.len()))
            })?;
            let state = animate_with(&scenario, &std::sync::Arc::new(scenario.layout()), frame)?;
            save_ppm(&render_image(&state, cam, cfg.render.steps)?, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("semcom: {e}");
            match e {
                Error::Config(_) | Error::Toml(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
