//! Command implementations behind the `yana` binary. Each returns a
//! [`CliError`] whose variant fixes the process exit code:
//! 1 usage, 2 capacity/validation, 3 equivalence failure, 4 runtime fault.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use yana_core::compiler::{
    format_memcfg, map_graph, read_memcfg, write_memcfg, CompileError, MemCfg,
};
use yana_core::coresim::CycleParams;
use yana_core::events::{bin_timesteps, drop_events, load_sample, write_sample, SampleStream, SourceEvent};
use yana_core::netgraph::{parse_graph, quantize_graph, CapacityLimits, Graph};
use yana_core::numerics::FxFormat;
use yana_core::refsim::count_synaptic_events;
use yana_core::rng::Rng64;
use yana_core::socsim::{csv_row, run_sample, RunReport, CSV_HEADER};

use crate::checker;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Validation(String),
    Equivalence(String),
    Fault(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Validation(_) => 2,
            CliError::Equivalence(_) => 3,
            CliError::Fault(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m)
            | CliError::Validation(m)
            | CliError::Equivalence(m)
            | CliError::Fault(m) => m,
        }
    }
}

fn validation<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Validation(e.to_string())
}

/// Parses "int.frac" (decimal) into a signed fixed-point format.
pub fn parse_format(s: &str) -> Result<FxFormat, String> {
    let (i, f) = s
        .split_once('.')
        .ok_or_else(|| format!("expected <int>.<frac>, got '{s}'"))?;
    let int_bits: u32 = i.parse().map_err(|_| format!("bad integer bits '{i}'"))?;
    let frac_bits: u32 = f.parse().map_err(|_| format!("bad fraction bits '{f}'"))?;
    if int_bits + frac_bits + 1 > 64 {
        return Err(format!("format {s} wider than 64 bits"));
    }
    Ok(FxFormat::q(int_bits, frac_bits))
}

pub struct CompileOptions {
    pub prune: f64,
    pub weight_fmt: FxFormat,
    pub membrane_fmt: FxFormat,
    pub n_max: u32,
    pub lut_frac: u32,
    pub dedup: bool,
}

/// Graph file -> pruned, quantized, mapped memory configuration.
pub fn compile_graph(graph: &Graph, opts: &CompileOptions) -> Result<MemCfg, CliError> {
    let pruned = if opts.prune > 0.0 { graph.prune_magnitude(opts.prune) } else { graph.clone() };
    let q = quantize_graph(&pruned, opts.weight_fmt, opts.membrane_fmt, opts.n_max, opts.lut_frac)
        .map_err(validation)?;
    map_graph(&q, opts.dedup).map_err(|e| match e {
        CompileError::Capacity { .. } => CliError::Validation(e.to_string()),
    })
}

pub fn capacity_summary(m: &MemCfg) -> String {
    let limits = CapacityLimits::default();
    let mut out = String::new();
    for core in &m.cores {
        let _ = writeln!(
            out,
            "core {} {:<9} synapses {:>6}/{}  axon entries {:>6}  neurons {:>4}/{}",
            core.core_id,
            core.kind.name(),
            core.synapse_table.len(),
            limits.syn_per_core,
            core.axon_table.len(),
            core.neurons,
            limits.neur_per_core,
        );
    }
    let _ = writeln!(
        out,
        "total synapse words {} (nnz), axon entries {}",
        m.total_synapse_words(),
        m.total_axon_entries()
    );
    out
}

pub fn cmd_compile(graph_path: &Path, out_path: &Path, opts: &CompileOptions) -> Result<(), CliError> {
    let graph = parse_graph(graph_path).map_err(validation)?;
    let m = compile_graph(&graph, opts)?;
    write_memcfg(&m, out_path).map_err(validation)?;
    print!("{}", capacity_summary(&m));
    println!("wrote {}", out_path.display());
    Ok(())
}

pub struct RunOptions {
    pub dt_us: u64,
    pub drop_rate: f64,
    pub seed: u64,
    pub report: Option<PathBuf>,
    pub params: CycleParams,
}

pub fn cmd_run(memcfg_path: &Path, events_path: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let m = read_memcfg(memcfg_path).map_err(validation)?;
    let sample = load_sample(events_path).map_err(validation)?;
    let sample = if opts.drop_rate > 0.0 {
        drop_events(&sample, opts.drop_rate, opts.seed)
    } else {
        sample
    };
    let label = sample.label;
    let b = bin_timesteps(&sample, opts.dt_us);
    let report = run_sample(&m, &b, opts.params).map_err(|e| CliError::Fault(e.to_string()))?;

    println!(
        "cycles {}  wall {:.3} ms at {} MHz  timesteps {}  input events {}  synaptic events {}  hidden spikes {}  predicted {}",
        report.total_cycles,
        report.wall_time_us / 1000.0,
        opts.params.clock_hz / 1_000_000,
        report.timesteps_visited,
        report.injected_input_events,
        report.synaptic_events_processed,
        report.hidden_spikes,
        report.predicted_label,
    );

    if let Some(path) = &opts.report {
        let id = events_path.file_stem().map_or_else(|| "sample".into(), |s| s.to_string_lossy().into_owned());
        append_csv(path, CSV_HEADER, &csv_row(&id, label, &report)).map_err(validation)?;
    }
    Ok(())
}

fn append_csv(path: &Path, header: &str, row: &str) -> Result<(), std::io::Error> {
    use std::io::Write;
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{header}")?;
    }
    writeln!(f, "{row}")?;
    Ok(())
}

pub const SWEEP_CSV_HEADER: &str = "prune,drop,sample_id,label,predicted,cycles,wall_us,timesteps_visited,input_events,synaptic_events,hidden_spikes";

pub struct SweepOptions {
    pub prune_fractions: Vec<f64>,
    pub drop_rates: Vec<f64>,
    pub seed: u64,
    pub dt_us: u64,
    pub compile: CompileOptions,
    pub params: CycleParams,
    pub report: PathBuf,
    /// Cross-check every cell's synaptic event count against the golden
    /// simulator.
    pub verify_counts: bool,
}

/// One sweep cell result, kept for tests and aggregation.
pub struct SweepCell {
    pub prune: f64,
    pub drop: f64,
    pub reports: Vec<(String, Option<u32>, RunReport)>,
}

pub fn cmd_sweep(
    graph_path: &Path,
    samples: &[(String, SampleStream)],
    opts: &SweepOptions,
) -> Result<Vec<SweepCell>, CliError> {
    if samples.is_empty() {
        return Err(CliError::Usage("sweep needs at least one sample".into()));
    }
    if opts.prune_fractions.is_empty() || opts.drop_rates.is_empty() {
        return Err(CliError::Usage("sweep needs non-empty prune and drop lists".into()));
    }
    let graph = parse_graph(graph_path).map_err(validation)?;

    let mut rows = vec![SWEEP_CSV_HEADER.to_string()];
    let mut cells = Vec::new();
    let mut cell_failures = Vec::new();

    for &p in &opts.prune_fractions {
        let compile_opts = CompileOptions { prune: p, ..clone_compile(&opts.compile) };
        let m = compile_graph(&graph, &compile_opts)?;
        for &q in &opts.drop_rates {
            let mut cell = SweepCell { prune: p, drop: q, reports: Vec::new() };
            for (id, sample) in samples {
                let dropped = drop_events(sample, q, opts.seed);
                let b = bin_timesteps(&dropped, opts.dt_us);
                let report = match run_sample(&m, &b, opts.params) {
                    Ok(r) => r,
                    Err(e) => {
                        cell_failures.push(format!("cell p={p} q={q} sample {id}: {e}"));
                        continue;
                    }
                };
                if opts.verify_counts {
                    let golden = count_synaptic_events(&m, &b)
                        .map_err(|e| CliError::Fault(e.to_string()))?;
                    if golden != report.synaptic_events_processed {
                        return Err(CliError::Equivalence(format!(
                            "cell p={p} q={q} sample {id}: cycle counted {} synaptic events, golden {golden}",
                            report.synaptic_events_processed
                        )));
                    }
                }
                rows.push(format!("{p},{q},{}", csv_row(id, sample.label, &report)));
                cell.reports.push((id.clone(), sample.label, report));
            }
            if !cell.reports.is_empty() {
                let n = cell.reports.len() as f64;
                let mean = |f: &dyn Fn(&RunReport) -> f64| {
                    cell.reports.iter().map(|(_, _, r)| f(r)).sum::<f64>() / n
                };
                rows.push(format!(
                    "{p},{q},mean,-,-,{:.1},{:.3},{:.1},{:.1},{:.1},{:.1}",
                    mean(&|r| r.total_cycles as f64),
                    mean(&|r| r.wall_time_us),
                    mean(&|r| r.timesteps_visited as f64),
                    mean(&|r| r.injected_input_events as f64),
                    mean(&|r| r.synaptic_events_processed as f64),
                    mean(&|r| r.hidden_spikes as f64),
                ));
            }
            cells.push(cell);
        }
    }

    std::fs::write(&opts.report, rows.join("\n") + "\n").map_err(validation)?;
    println!("wrote {} ({} rows)", opts.report.display(), rows.len() - 1);

    if !cell_failures.is_empty() {
        return Err(CliError::Fault(format!(
            "{} sweep cell(s) failed:\n{}",
            cell_failures.len(),
            cell_failures.join("\n")
        )));
    }
    Ok(cells)
}

fn clone_compile(c: &CompileOptions) -> CompileOptions {
    CompileOptions {
        prune: c.prune,
        weight_fmt: c.weight_fmt,
        membrane_fmt: c.membrane_fmt,
        n_max: c.n_max,
        lut_frac: c.lut_frac,
        dedup: c.dedup,
    }
}

pub struct CheckOptions {
    pub cases: u32,
    pub seed: u64,
    pub recurrent: bool,
    pub dump_prefix: PathBuf,
}

pub fn cmd_check(opts: &CheckOptions) -> Result<(), CliError> {
    let (outcome, failing_case) = checker::run_suite(opts.cases, opts.seed, opts.recurrent);
    println!(
        "checked {} case(s): {} passed ({} recurrent, {} saturating, {} long-gap, {} spiking, {} spikes total)",
        outcome.cases,
        outcome.passed,
        outcome.recurrent_cases,
        outcome.saturating_cases,
        outcome.long_gap_cases,
        outcome.cases_with_spikes,
        outcome.total_spikes,
    );
    if let (Some((index, detail)), Some(case)) = (&outcome.failure, failing_case) {
        // Repro dump: the exact memory image and event stream that diverged.
        let memcfg_path = opts.dump_prefix.with_extension("memcfg");
        let events_path = opts.dump_prefix.with_extension("events");
        let _ = std::fs::write(&memcfg_path, format_memcfg(&case.memcfg()));
        let _ = write_sample(&case.sample, &events_path);
        return Err(CliError::Equivalence(format!(
            "case {index} diverged: {detail}\nrepro dumped to {} and {}",
            memcfg_path.display(),
            events_path.display()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelDist {
    Uniform,
    GaussianBump,
}

pub struct SynthSpec {
    pub input_size: u32,
    pub duration_us: u64,
    pub event_count: u64,
    pub dist: ChannelDist,
    pub seed: u64,
    pub label: Option<u32>,
}

/// Deterministic synthetic sample with SHD-like dimensions.
pub fn synthesize(spec: &SynthSpec) -> SampleStream {
    let mut rng = Rng64::new(spec.seed);
    let center = spec.input_size as f64 / 2.0;
    let sigma = (spec.input_size as f64 / 8.0).max(1.0);
    let events = (0..spec.event_count)
        .map(|_| {
            let channel = match spec.dist {
                ChannelDist::Uniform => rng.below(spec.input_size as u64) as u32,
                ChannelDist::GaussianBump => {
                    let c = (center + sigma * rng.normal()).round();
                    c.clamp(0.0, (spec.input_size - 1) as f64) as u32
                }
            };
            SourceEvent { timestamp_us: rng.below(spec.duration_us + 1), channel }
        })
        .collect();
    SampleStream::new(events, spec.input_size, spec.duration_us, spec.label)
}

pub fn cmd_synth(spec: &SynthSpec, out_path: &Path) -> Result<(), CliError> {
    let sample = synthesize(spec);
    write_sample(&sample, out_path).map_err(validation)?;
    println!(
        "wrote {} ({} events, {} channels, {} us)",
        out_path.display(),
        sample.events.len(),
        spec.input_size,
        spec.duration_us
    );
    Ok(())
}

/// Gathers sweep samples from explicit paths, a directory of `.events`
/// files, or a synthetic spec.
pub fn collect_samples(
    paths: &[PathBuf],
    shd_dir: Option<&Path>,
    synth: Option<(u32, &SynthSpec)>,
) -> Result<Vec<(String, SampleStream)>, CliError> {
    let mut samples = Vec::new();
    for p in paths {
        let id = p.file_stem().map_or_else(|| "sample".into(), |s| s.to_string_lossy().into_owned());
        samples.push((id, load_sample(p).map_err(validation)?));
    }
    if let Some(dir) = shd_dir {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(validation)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "events"))
            .collect();
        entries.sort();
        for p in entries {
            let id = p.file_stem().map_or_else(|| "sample".into(), |s| s.to_string_lossy().into_owned());
            samples.push((id, load_sample(&p).map_err(validation)?));
        }
    }
    if let Some((count, spec)) = synth {
        for i in 0..count {
            let per_sample = SynthSpec {
                seed: spec.seed.wrapping_add(i as u64),
                input_size: spec.input_size,
                duration_us: spec.duration_us,
                event_count: spec.event_count,
                dist: spec.dist,
                label: spec.label,
            };
            samples.push((format!("synth{i}"), synthesize(&per_sample)));
        }
    }
    Ok(samples)
}
