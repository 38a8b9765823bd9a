//! Command-line harness around the simfair optimizers.
//!
//! Verbs: `sweep` reproduces the parameter studies as CSV (optional JSON
//! mirror), `converge` dumps per-iteration objective traces, `verify`
//! replays the built-in oracle suites and reports pass/fail per check.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use simfair_core::config::ScenarioConfig;
use simfair_core::experiments::{run_convergence_with, run_sweep, Mode, SweepSpec, SweepVar};
use simfair_core::icsi::{OptReport, Outcome};
use std::path::PathBuf;

mod verify;

/// JSON view of the final policies: powers, quantized phases, and the
/// objective pair of whichever pipeline produced the report.
#[derive(serde::Serialize)]
struct FinalReport {
    converged: bool,
    outer_iterations: usize,
    power_watts: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_rate_continuous: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate_bound: Option<f64>,
    phases_quantized: Vec<Vec<f64>>,
}

fn final_report_json(report: &OptReport) -> String {
    let phases = (0..report.phases_quantized.layers())
        .map(|l| {
            (0..report.phases_quantized.elements())
                .map(|m| report.phases_quantized.theta[(l, m)])
                .collect()
        })
        .collect();
    let mut view = FinalReport {
        converged: report.converged,
        outer_iterations: report.objective_trace.len(),
        power_watts: report.power.watts.iter().copied().collect(),
        min_rate: None,
        min_rate_continuous: None,
        zeta: None,
        rate_bound: None,
        phases_quantized: phases,
    };
    match &report.outcome {
        Outcome::Instantaneous {
            report: quantized,
            report_continuous,
        } => {
            view.min_rate = Some(quantized.min_rate);
            view.min_rate_continuous = Some(report_continuous.min_rate);
        }
        Outcome::Statistical {
            zeta, rate_bound, ..
        } => {
            view.zeta = Some(*zeta);
            view.rate_bound = Some(*rate_bound);
        }
    }
    serde_json::to_string_pretty(&view).expect("report serializes")
}

#[derive(Parser)]
#[command(name = "simfair", version, about = "Max-min fairness optimization for stacked-metasurface downlinks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArgs {
    /// TOML scenario file; explicit flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of users (and BS antennas).
    #[arg(long)]
    users: Option<usize>,
    /// Scattering elements per layer (perfect square).
    #[arg(long)]
    elements: Option<usize>,
    /// Number of metasurface layers.
    #[arg(long)]
    layers: Option<usize>,
    /// Total transmit power, dBm.
    #[arg(long)]
    power_dbm: Option<f64>,
    /// Phase quantization bits.
    #[arg(long)]
    bits: Option<u32>,
    /// Base seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ScenarioArgs {
    fn build(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(path) => ScenarioConfig::from_toml_path(path)
                .with_context(|| format!("loading {}", path.display()))?,
            None => ScenarioConfig::default(),
        };
        if let Some(k) = self.users {
            cfg = cfg.with_users(k);
        }
        if let Some(m) = self.elements {
            cfg.elements_per_layer = m;
        }
        if let Some(l) = self.layers {
            cfg.num_layers = l;
        }
        if let Some(p) = self.power_dbm {
            cfg.power_budget = simfair_core::dbm_to_watts(p);
        }
        if let Some(b) = self.bits {
            cfg.quant_bits = b;
        }
        if let Some(s) = self.seed {
            cfg.rng_seed = s;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one scheme across a swept scenario knob and emit CSV rows.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// icsi, scsi, or benchmark:{continuous,equal+gda,gp+random,equal+random,exhaustive}.
        #[arg(long)]
        mode: String,
        /// Swept variable: L, M, P_dBm, b, or K.
        #[arg(long = "var")]
        sweep_var: String,
        /// Comma-separated sweep values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        /// Fading draws (instantaneous) or Monte Carlo rows (statistical) per value.
        #[arg(long, default_value_t = 100)]
        trials: usize,
        /// Monte Carlo channel draws per statistical trial row.
        #[arg(long, default_value_t = 1000)]
        mc_draws: usize,
        /// Output CSV path.
        #[arg(long, default_value = "sweep.csv")]
        out: PathBuf,
        /// Optional JSON mirror of the result table.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run one optimization and emit its objective trace.
    Converge {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// icsi or scsi.
        #[arg(long)]
        mode: String,
        /// Output CSV path for the outer trace.
        #[arg(long, default_value = "trace.csv")]
        out: PathBuf,
        /// Optional CSV path for the inner per-iteration rows.
        #[arg(long)]
        detail: Option<PathBuf>,
        /// Optional binary channel archive to run on instead of building
        /// channels from the scenario (see the `channels` verb).
        #[arg(long)]
        channels: Option<PathBuf>,
        /// Optional path for the final quantized phase profile (text, one
        /// row of radians per layer).
        #[arg(long)]
        phases_out: Option<PathBuf>,
        /// Optional JSON report of the final policies and objectives.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Build the deterministic channel set (optionally with one fading
    /// draw) and export it as an archive for replay.
    Channels {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Output path.
        #[arg(long, default_value = "channels.bin")]
        out: PathBuf,
        /// Write the text layout instead of the binary one.
        #[arg(long)]
        text: bool,
        /// Include one seeded fading draw.
        #[arg(long)]
        with_fading: bool,
    },
    /// Replay the oracle suites (gradients, projections, power control,
    /// special functions, cascade identities) and report each result.
    Verify {
        /// Base seed for the randomized checks.
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Sweep {
            scenario,
            mode,
            sweep_var,
            values,
            trials,
            mc_draws,
            out,
            json,
        } => {
            let cfg = scenario.build()?;
            let mode: Mode = mode.parse().map_err(anyhow::Error::msg)?;
            let sweep_var: SweepVar = sweep_var.parse().map_err(anyhow::Error::msg)?;
            let spec = SweepSpec {
                mode,
                sweep_var,
                values,
                trials,
                seed: scenario.seed.unwrap_or(cfg.rng_seed),
                mc_draws,
                quant_bits: scenario.bits,
            };
            let result = run_sweep(&spec, &cfg)?;
            std::fs::write(&out, result.to_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "wrote {} trial rows + {} aggregates to {}",
                result.rows.len(),
                result.aggregates.len(),
                out.display()
            );
            if let Some(path) = json {
                std::fs::write(&path, result.to_json())
                    .with_context(|| format!("writing {}", path.display()))?;
                eprintln!("mirrored to {}", path.display());
            }
            Ok(())
        }
        Command::Converge {
            scenario,
            mode,
            out,
            detail,
            channels,
            phases_out,
            report,
        } => {
            let mut cfg = scenario.build()?;
            let mode: Mode = mode.parse().map_err(anyhow::Error::msg)?;
            if matches!(mode, Mode::Benchmark(_)) {
                bail!("convergence traces exist for the icsi and scsi modes only");
            }
            if matches!(mode, Mode::Scsi) && scenario.bits.is_none() {
                cfg.quant_bits = simfair_core::experiments::SCSI_DEFAULT_BITS;
            }
            let preloaded = match &channels {
                Some(path) => {
                    let mut file = std::fs::File::open(path)
                        .with_context(|| format!("opening {}", path.display()))?;
                    Some(simfair_core::archive::read_channels_binary(&mut file)?)
                }
                None => None,
            };
            let (trace, final_report) =
                run_convergence_with(mode, &cfg, cfg.rng_seed, preloaded)?;
            std::fs::write(&out, trace.outer_csv())
                .with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "wrote {} outer iterations (converged: {}) to {}",
                trace.outer.len(),
                trace.converged,
                out.display()
            );
            if let Some(path) = detail {
                std::fs::write(&path, trace.inner_csv())
                    .with_context(|| format!("writing {}", path.display()))?;
                eprintln!("inner trace mirrored to {}", path.display());
            }
            if let Some(path) = phases_out {
                let mut buf = Vec::new();
                simfair_core::archive::write_phases_text(&final_report.phases_quantized, &mut buf)?;
                std::fs::write(&path, buf)
                    .with_context(|| format!("writing {}", path.display()))?;
                eprintln!("quantized phases written to {}", path.display());
            }
            if let Some(path) = report {
                std::fs::write(&path, final_report_json(&final_report))
                    .with_context(|| format!("writing {}", path.display()))?;
                eprintln!("final report written to {}", path.display());
            }
            Ok(())
        }
        Command::Channels {
            scenario,
            out,
            text,
            with_fading,
        } => {
            let cfg = scenario.build()?;
            let layout = simfair_core::geometry::build_layout(&cfg)?;
            let mut channels = simfair_core::channel::ChannelSet::build(&cfg, &layout)?;
            if with_fading {
                use rand::SeedableRng;
                let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(cfg.rng_seed);
                channels.sample_fading(&mut rng);
            }
            let mut buf = Vec::new();
            if text {
                simfair_core::archive::write_channels_text(&channels, &mut buf)?;
            } else {
                simfair_core::archive::write_channels_binary(&channels, &mut buf)?;
            }
            std::fs::write(&out, buf).with_context(|| format!("writing {}", out.display()))?;
            eprintln!(
                "wrote {} channel archive ({} elements, {} users, {} layers, fading: {}) to {}",
                if text { "text" } else { "binary" },
                channels.elements(),
                channels.users(),
                channels.layers(),
                channels.h.is_some(),
                out.display()
            );
            Ok(())
        }
        Command::Verify { seed } => {
            let failures = verify::run_all(seed);
            if failures == 0 {
                eprintln!("all checks passed");
                Ok(())
            } else {
                bail!("{failures} check(s) failed");
            }
        }
    }
}
