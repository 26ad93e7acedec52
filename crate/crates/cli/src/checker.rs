//! Randomized golden-vs-cycle equivalence checking: generates (net, stream)
//! cases within capacity, runs both simulators and compares spikes, membrane
//! updates, readout and event counts bit for bit.
//!
//! Cases deliberately cover the awkward corners: recurrent hidden
//! connections, near-saturation weights on narrow membrane formats, sub-LSb
//! weights that quantize to zero, tiny LUTs with inter-event gaps beyond
//! `n_max`, and deduplicated synapse tables.

use yana_core::compiler::{map_graph, MemCfg};
use yana_core::events::{bin_timesteps, BinnedStream, SampleStream, SourceEvent};
use yana_core::netgraph::{quantize_graph, Graph, LayerSpec, WeightMatrix};
use yana_core::numerics::FxFormat;
use yana_core::refsim::{run_reference, ReferenceRun, TraceRecord};
use yana_core::rng::{splitmix64, Rng64};
use yana_core::socsim::{run_sample_traced, RunReport};

const DT_US: u64 = 1000;

/// One generated equivalence case.
pub struct GeneratedCase {
    pub graph: Graph,
    pub sample: SampleStream,
    pub weight_fmt: FxFormat,
    pub membrane_fmt: FxFormat,
    pub n_max: u32,
    pub lut_frac: u32,
    pub dedup: bool,
    /// Construction flags, for reporting suite coverage.
    pub recurrent: bool,
    pub saturating: bool,
    pub has_long_gap: bool,
}

impl GeneratedCase {
    pub fn memcfg(&self) -> MemCfg {
        let q = quantize_graph(
            &self.graph,
            self.weight_fmt,
            self.membrane_fmt,
            self.n_max,
            self.lut_frac,
        )
        .expect("generated taus are valid");
        map_graph(&q, self.dedup).expect("generated nets fit capacity")
    }

    pub fn binned(&self) -> BinnedStream {
        bin_timesteps(&self.sample, DT_US)
    }
}

fn pick<T: Copy>(rng: &mut Rng64, options: &[T]) -> T {
    options[rng.below(options.len() as u64) as usize]
}

fn random_matrix(
    rng: &mut Rng64,
    rows: usize,
    cols: usize,
    density: f64,
    lo: f64,
    hi: f64,
) -> WeightMatrix {
    let values = (0..rows * cols)
        .map(|_| {
            if rng.next_f64() < density {
                let mag = rng.range_f64(lo, hi);
                if rng.next_f64() < 0.5 {
                    -mag
                } else {
                    mag
                }
            } else {
                0.0
            }
        })
        .collect();
    WeightMatrix::from_dense(rows, cols, values)
}

/// Deterministically generates the `index`-th case of a seeded suite.
pub fn generate_case(seed: u64, index: u32, allow_recurrent: bool) -> GeneratedCase {
    let mut rng = Rng64::new(splitmix64(seed ^ (index as u64).wrapping_mul(0x9e37_79b9)));

    let input_size = 1 + rng.below(10) as usize;
    let hidden_size = 1 + rng.below(12) as usize;
    let output_size = 1 + rng.below(4) as usize;

    // Weight regimes: ordinary magnitudes, near-saturation on a narrow
    // membrane format, and sub-LSb values that quantize to zero.
    let regime = rng.below(4);
    let saturating = regime == 1;
    let (weight_fmt, membrane_fmt, w_lo, w_hi, u_th) = match regime {
        1 => (
            FxFormat::q(7, 8),
            FxFormat::q(7, 8),
            30.0,
            127.0,
            rng.range_f64(2.0, 60.0),
        ),
        2 => (
            FxFormat::q(7, 8),
            FxFormat::q(23, 8),
            0.001,
            0.05,
            rng.range_f64(0.005, 0.05),
        ),
        _ => (
            FxFormat::q(7, 8),
            FxFormat::q(23, 8),
            0.05,
            1.2,
            rng.range_f64(0.2, 1.5),
        ),
    };

    let tau_options = [1.5, 2.0, 3.0, 4.0, 10.0, 20.0];
    let hidden_tau = pick(&mut rng, &tau_options);
    let output_tau = pick(&mut rng, &tau_options);
    let n_max = pick(&mut rng, &[1u32, 2, 4, 8, 64]);
    let lut_frac = pick(&mut rng, &[8u32, 16]);

    let recurrent = allow_recurrent && rng.next_f64() < 0.5;
    let w_rec = recurrent.then(|| {
        // Mild recurrency, inhibition-leaning, so activity always dies out.
        let scale = (u_th / 3.0).min(w_hi);
        let mut m = random_matrix(&mut rng, hidden_size, hidden_size, 0.3, scale * 0.1, scale);
        for j in 0..hidden_size {
            for k in 0..hidden_size {
                let v = m.get(j, k);
                if v > 0.0 && rng.next_f64() < 0.6 {
                    m.set(j, k, -v);
                }
            }
        }
        m
    });

    let graph = Graph {
        input_size,
        hidden: LayerSpec { size: hidden_size, tau_mem: hidden_tau, threshold: u_th },
        output: LayerSpec { size: output_size, tau_mem: output_tau, threshold: 0.0 },
        w_in: random_matrix(&mut rng, input_size, hidden_size, 0.7, w_lo, w_hi),
        w_out: random_matrix(&mut rng, hidden_size, output_size, 0.7, w_lo.abs(), w_hi),
        w_rec,
    };

    // Streams: uniform scatter, or bursts separated by gaps larger than
    // n_max timesteps (exercising the round-to-zero leak path).
    let bursty = rng.next_f64() < 0.5;
    let num_bins = 10 + rng.below(40);
    let duration_us = num_bins * DT_US;
    let mut events = Vec::new();
    if bursty {
        let gap_bins = (n_max as u64 + 2).max(3);
        let mut bin = rng.below(3);
        while bin < num_bins {
            for _ in 0..rng.below(25) {
                events.push(SourceEvent {
                    timestamp_us: bin * DT_US + rng.below(DT_US),
                    channel: rng.below(input_size as u64) as u32,
                });
            }
            bin += gap_bins + rng.below(4);
        }
    } else {
        for _ in 0..rng.below(120) {
            events.push(SourceEvent {
                timestamp_us: rng.below(duration_us),
                channel: rng.below(input_size as u64) as u32,
            });
        }
    }
    let has_long_gap = bursty;
    let sample = SampleStream::new(events, input_size as u32, duration_us, None);

    GeneratedCase {
        graph,
        sample,
        weight_fmt,
        membrane_fmt,
        n_max,
        lut_frac,
        dedup: rng.next_f64() < 0.3,
        recurrent,
        saturating,
        has_long_gap,
    }
}

/// Compares a cycle-simulator run against the golden reference. Spike and
/// membrane sets are compared order-insensitively per timestep (drain order
/// legitimately differs between the two schedulers); values, counts and
/// readout must match exactly.
pub fn compare_runs(
    golden: &ReferenceRun,
    report: &RunReport,
    trace: &TraceRecord,
) -> Result<(), String> {
    if golden.trace.steps.len() != trace.steps.len() {
        return Err(format!(
            "visited timestep counts differ: golden {} vs cycle {}",
            golden.trace.steps.len(),
            trace.steps.len()
        ));
    }
    for (gs, ss) in golden.trace.steps.iter().zip(&trace.steps) {
        if gs.timestep != ss.timestep {
            return Err(format!(
                "visited timesteps diverge: golden t={} vs cycle t={}",
                gs.timestep, ss.timestep
            ));
        }
        let mut g_spikes = gs.spikes.clone();
        let mut s_spikes = ss.spikes.clone();
        g_spikes.sort_unstable();
        s_spikes.sort_unstable();
        if g_spikes != s_spikes {
            let diff = first_diff(&g_spikes, &s_spikes);
            return Err(format!(
                "spike sets diverge at timestep {}: first differing neuron {:?}",
                gs.timestep, diff
            ));
        }
        let mut g_mem = gs.membranes.clone();
        let mut s_mem = ss.membranes.clone();
        g_mem.sort_unstable();
        s_mem.sort_unstable();
        if g_mem != s_mem {
            let diff = first_diff(&g_mem, &s_mem);
            return Err(format!(
                "membrane updates diverge at timestep {}: first difference {:?}",
                gs.timestep, diff
            ));
        }
        if gs.synaptic_events != ss.synaptic_events {
            return Err(format!(
                "synaptic event counts diverge at timestep {}: golden {} vs cycle {}",
                gs.timestep, gs.synaptic_events, ss.synaptic_events
            ));
        }
    }
    if golden.readout.membranes != report.output_membranes {
        return Err("readout membranes diverge".into());
    }
    if golden.readout.predicted_label != report.predicted_label {
        return Err(format!(
            "predicted labels diverge: golden {} vs cycle {}",
            golden.readout.predicted_label, report.predicted_label
        ));
    }
    if golden.trace.total_synaptic_events() != report.synaptic_events_processed {
        return Err(format!(
            "total synaptic events diverge: golden {} vs cycle {}",
            golden.trace.total_synaptic_events(),
            report.synaptic_events_processed
        ));
    }
    if golden.injected_input_events != report.injected_input_events {
        return Err("injected event counts diverge".into());
    }
    Ok(())
}

fn first_diff<T: PartialEq + std::fmt::Debug + Clone>(a: &[T], b: &[T]) -> String {
    for i in 0..a.len().max(b.len()) {
        match (a.get(i), b.get(i)) {
            (Some(x), Some(y)) if x == y => continue,
            (x, y) => return format!("golden {x:?} vs cycle {y:?}"),
        }
    }
    "none".into()
}

/// Runs one case through both simulators and compares.
pub fn check_case(case: &GeneratedCase) -> Result<CaseStats, String> {
    let m = case.memcfg();
    let b = case.binned();
    let golden = run_reference(&m, &b).map_err(|e| format!("golden fault: {e}"))?;
    let (report, trace) =
        run_sample_traced(&m, &b, Default::default(), yana_core::refsim::DEFAULT_MAX_DRAIN)
            .map_err(|e| format!("cycle fault: {e}"))?;
    compare_runs(&golden, &report, &trace)?;
    Ok(CaseStats {
        spikes: golden.trace.total_spikes(),
        synaptic_events: golden.trace.total_synaptic_events(),
    })
}

pub struct CaseStats {
    pub spikes: u64,
    pub synaptic_events: u64,
}

/// Totals reported by a finished suite.
#[derive(Debug, Default)]
pub struct SuiteOutcome {
    pub cases: u32,
    pub passed: u32,
    pub recurrent_cases: u32,
    pub saturating_cases: u32,
    pub long_gap_cases: u32,
    pub cases_with_spikes: u32,
    pub total_spikes: u64,
    /// (case index, description) of the first divergence, if any.
    pub failure: Option<(u32, String)>,
}

/// Runs `cases` generated cases; stops at the first mismatch.
pub fn run_suite(cases: u32, seed: u64, recurrent: bool) -> (SuiteOutcome, Option<GeneratedCase>) {
    let mut outcome = SuiteOutcome { cases, ..Default::default() };
    for i in 0..cases {
        let case = generate_case(seed, i, recurrent);
        outcome.recurrent_cases += case.recurrent as u32;
        outcome.saturating_cases += case.saturating as u32;
        outcome.long_gap_cases += case.has_long_gap as u32;
        match check_case(&case) {
            Ok(stats) => {
                outcome.passed += 1;
                outcome.cases_with_spikes += (stats.spikes > 0) as u32;
                outcome.total_spikes += stats.spikes;
            }
            Err(detail) => {
                outcome.failure = Some((i, detail));
                return (outcome, Some(case));
            }
        }
    }
    (outcome, None)
}
