//! `yana`: compile SNN graphs to accelerator memory images, execute samples
//! on the cycle-level system model, sweep sparsity levels, check the cycle
//! simulator against the golden reference, and generate synthetic samples.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use yana_cli::commands::{
    self, ChannelDist, CheckOptions, CliError, CompileOptions, RunOptions, SweepOptions, SynthSpec,
};
use yana_core::coresim::CycleParams;
use yana_core::numerics::{DEFAULT_LUT_FRAC, DEFAULT_N_MAX};

#[derive(Parser)]
#[command(
    name = "yana",
    version,
    about = "Cycle-level model and deployment compiler for an event-driven SNN accelerator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a .graph file into a .memcfg memory configuration.
    Compile {
        /// Network description (.graph with .wcsv sidecars).
        graph: PathBuf,
        /// Output .memcfg path.
        #[arg(short, long)]
        out: PathBuf,
        /// Magnitude-prune this fraction of weights per matrix.
        #[arg(long, default_value_t = 0.0)]
        prune: f64,
        #[command(flatten)]
        opts: CompileFlags,
    },
    /// Execute one sample on the cycle simulator and report cycles.
    Run {
        /// Memory configuration (.memcfg).
        memcfg: PathBuf,
        /// Input sample (.events).
        events: PathBuf,
        /// Timestep bin width in microseconds.
        #[arg(long, default_value_t = 2000)]
        dt_us: u64,
        /// Uniform event-drop rate in [0, 1].
        #[arg(long, default_value_t = 0.0)]
        drop: f64,
        /// Seed for event dropping (YANA_SEED overrides the default).
        #[arg(long)]
        seed: Option<u64>,
        /// Append one CSV row per invocation to this file.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        cycle: CycleFlags,
    },
    /// Sweep prune fractions and drop rates over a set of samples.
    Sweep {
        graph: PathBuf,
        /// Comma-separated prune fractions in [0, 1).
        #[arg(long, value_delimiter = ',', default_value = "0.0")]
        prune: Vec<f64>,
        /// Comma-separated drop rates in [0, 1].
        #[arg(long, value_delimiter = ',', default_value = "0.0")]
        drop: Vec<f64>,
        /// Explicit sample files.
        #[arg(long, value_delimiter = ',')]
        samples: Vec<PathBuf>,
        /// Directory of pre-converted .events files.
        #[arg(long)]
        shd_dir: Option<PathBuf>,
        /// Generate this many synthetic samples instead.
        #[arg(long)]
        synth_samples: Option<u32>,
        /// Events per synthetic sample.
        #[arg(long, default_value_t = 8000)]
        synth_events: u64,
        /// Input channels of synthetic samples.
        #[arg(long, default_value_t = 700)]
        synth_input_size: u32,
        /// Duration of synthetic samples in microseconds.
        #[arg(long, default_value_t = 800_000)]
        synth_duration_us: u64,
        #[arg(long, default_value_t = 2000)]
        dt_us: u64,
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV path.
        #[arg(long)]
        report: PathBuf,
        /// Cross-check every cell against the golden event count.
        #[arg(long)]
        verify_counts: bool,
        #[command(flatten)]
        opts: CompileFlags,
        #[command(flatten)]
        cycle: CycleFlags,
    },
    /// Run randomized golden-vs-cycle equivalence cases.
    Check {
        /// Number of randomized cases.
        #[arg(long, default_value_t = 100)]
        cases: u32,
        #[arg(long)]
        seed: Option<u64>,
        /// Include recurrent hidden connectivity in generated nets.
        #[arg(long)]
        recurrent: bool,
        /// Path prefix for the repro dump written on divergence.
        #[arg(long, default_value = "yana-check-fail")]
        dump_prefix: PathBuf,
    },
    /// Generate a deterministic synthetic .events sample.
    Synth {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 700)]
        input_size: u32,
        #[arg(long, default_value_t = 800_000)]
        duration_us: u64,
        #[arg(long, default_value_t = 8000)]
        events: u64,
        /// Channel distribution: uniform or bump.
        #[arg(long, default_value = "uniform")]
        dist: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        label: Option<u32>,
    },
}

#[derive(Args)]
struct CompileFlags {
    /// Weight format as <int>.<frac> (signed, decimal).
    #[arg(long, default_value = "7.8")]
    weight_fmt: String,
    /// Membrane format as <int>.<frac> (signed, decimal).
    #[arg(long, default_value = "23.8")]
    membrane_fmt: String,
    /// Leak LUT depth.
    #[arg(long, default_value_t = DEFAULT_N_MAX)]
    n_max: u32,
    /// Leak LUT fraction bits.
    #[arg(long, default_value_t = DEFAULT_LUT_FRAC)]
    lut_frac: u32,
    /// Share synapse addresses between equal weight values.
    #[arg(long)]
    dedup: bool,
}

impl CompileFlags {
    fn to_options(&self, prune: f64) -> Result<CompileOptions, CliError> {
        if !(0.0..1.0).contains(&prune) {
            return Err(CliError::Usage(format!("prune fraction {prune} outside [0, 1)")));
        }
        Ok(CompileOptions {
            prune,
            weight_fmt: commands::parse_format(&self.weight_fmt).map_err(CliError::Usage)?,
            membrane_fmt: commands::parse_format(&self.membrane_fmt).map_err(CliError::Usage)?,
            n_max: self.n_max,
            lut_frac: self.lut_frac,
            dedup: self.dedup,
        })
    }
}

#[derive(Args)]
struct CycleFlags {
    #[arg(long)]
    syn_cost: Option<u32>,
    #[arg(long)]
    neuron_cost: Option<u32>,
    #[arg(long)]
    neuron_pipe_fill: Option<u32>,
    #[arg(long)]
    axon_lookup_cost: Option<u32>,
    #[arg(long)]
    axon_emit_cost: Option<u32>,
    #[arg(long)]
    tx_cost: Option<u32>,
    #[arg(long)]
    timestep_overhead: Option<u32>,
    #[arg(long)]
    clock_hz: Option<u64>,
}

impl CycleFlags {
    fn to_params(&self) -> Result<CycleParams, CliError> {
        let mut p = CycleParams::default();
        if let Some(v) = self.syn_cost {
            p.syn_cost = v;
        }
        if let Some(v) = self.neuron_cost {
            p.neuron_cost = v;
        }
        if let Some(v) = self.neuron_pipe_fill {
            p.neuron_pipe_fill = v;
        }
        if let Some(v) = self.axon_lookup_cost {
            p.axon_lookup_cost = v;
        }
        if let Some(v) = self.axon_emit_cost {
            p.axon_emit_cost = v;
        }
        if let Some(v) = self.tx_cost {
            p.tx_cost = v;
        }
        if let Some(v) = self.timestep_overhead {
            p.timestep_overhead = v;
        }
        if let Some(v) = self.clock_hz {
            p.clock_hz = v;
        }
        p.validate().map_err(CliError::Usage)?;
        Ok(p)
    }
}

/// --seed flag, else YANA_SEED, else 42.
fn resolve_seed(flag: Option<u64>) -> Result<u64, CliError> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match std::env::var("YANA_SEED") {
        Ok(v) => v
            .parse()
            .map_err(|_| CliError::Usage(format!("YANA_SEED='{v}' is not an integer"))),
        Err(_) => Ok(42),
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Command::Compile { graph, out, prune, opts } => {
            commands::cmd_compile(&graph, &out, &opts.to_options(prune)?)
        }
        Command::Run { memcfg, events, dt_us, drop, seed, report, cycle } => {
            if !(0.0..=1.0).contains(&drop) {
                return Err(CliError::Usage(format!("drop rate {drop} outside [0, 1]")));
            }
            if dt_us == 0 {
                return Err(CliError::Usage("dt-us must be >= 1".into()));
            }
            let opts = RunOptions {
                dt_us,
                drop_rate: drop,
                seed: resolve_seed(seed)?,
                report,
                params: cycle.to_params()?,
            };
            commands::cmd_run(&memcfg, &events, &opts)
        }
        Command::Sweep {
            graph,
            prune,
            drop,
            samples,
            shd_dir,
            synth_samples,
            synth_events,
            synth_input_size,
            synth_duration_us,
            dt_us,
            seed,
            report,
            verify_counts,
            opts,
            cycle,
        } => {
            let seed = resolve_seed(seed)?;
            if let Some(bad) = prune.iter().find(|p| !(0.0..1.0).contains(*p)) {
                return Err(CliError::Usage(format!("prune fraction {bad} outside [0, 1)")));
            }
            if let Some(bad) = drop.iter().find(|q| !(0.0..=1.0).contains(*q)) {
                return Err(CliError::Usage(format!("drop rate {bad} outside [0, 1]")));
            }
            let synth_spec = SynthSpec {
                input_size: synth_input_size,
                duration_us: synth_duration_us,
                event_count: synth_events,
                dist: ChannelDist::Uniform,
                seed,
                label: None,
            };
            let collected = commands::collect_samples(
                &samples,
                shd_dir.as_deref(),
                synth_samples.map(|n| (n, &synth_spec)),
            )?;
            let sweep = SweepOptions {
                prune_fractions: prune,
                drop_rates: drop,
                seed,
                dt_us,
                compile: opts.to_options(0.0)?,
                params: cycle.to_params()?,
                report,
                verify_counts,
            };
            commands::cmd_sweep(&graph, &collected, &sweep).map(|_| ())
        }
        Command::Check { cases, seed, recurrent, dump_prefix } => {
            let opts = CheckOptions {
                cases,
                seed: resolve_seed(seed)?,
                recurrent,
                dump_prefix,
            };
            commands::cmd_check(&opts)
        }
        Command::Synth { out, input_size, duration_us, events, dist, seed, label } => {
            let dist = match dist.as_str() {
                "uniform" => ChannelDist::Uniform,
                "bump" => ChannelDist::GaussianBump,
                other => {
                    return Err(CliError::Usage(format!(
                        "unknown distribution '{other}' (expected uniform or bump)"
                    )))
                }
            };
            if input_size == 0 {
                return Err(CliError::Usage("input-size must be >= 1".into()));
            }
            let spec = SynthSpec {
                input_size,
                duration_us,
                event_count: events,
                dist,
                seed: resolve_seed(seed)?,
                label,
            };
            commands::cmd_synth(&spec, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
