//! Golden functional simulator: timestep-synchronous, event-driven-equivalent
//! execution of a memory configuration. This module defines the bit-exact
//! behavior the cycle simulator must reproduce.
//!
//! Semantics (one-hop next-timestep delay): packets delivered during timestep
//! `t` accumulate into per-neuron weight sums and mark their targets hot; at
//! `t + 1` every hot neuron is updated exactly once with `n` = elapsed
//! timesteps since its last update; spikes at `t + 1` deliver their axon
//! packets, which accumulate for `t + 2`. The multicast core forwards input
//! events within the same timestep (it has no synapse stage). Timesteps with
//! no pending work are skipped entirely; the deferred leak makes that
//! observationally equivalent to visiting them.
//!
//! Weight sums accumulate in a wide two's-complement accumulator and are
//! saturated to the membrane format when consumed. Per-event saturation would
//! make the result depend on packet arrival order, which cycle-level
//! interleaving does not preserve.

use std::collections::VecDeque;

use thiserror::Error;

use crate::compiler::{CoreImage, CoreKind, MemCfg, HIDDEN_CORE, MULTICAST_CORE, OUTPUT_CORE};
use crate::events::{decode_packet, BinnedStream};
use crate::numerics::{clamp_raw, lif_update, li_update, FxValue};

/// Visited timesteps a run may extend past the end of input before the
/// drain-cap diagnostic fires (runaway recurrence guard).
pub const DEFAULT_MAX_DRAIN: u64 = 1024;

#[derive(Debug, Error)]
pub enum SimFault {
    #[error("core {core}: packet addresses absent synapse {synapse:#x} (neuron {neuron})")]
    MissingSynapse { core: u8, neuron: u16, synapse: u32 },
    #[error("drain cap exceeded at timestep {timestep}: runaway recurrent activity")]
    DrainCapExceeded { timestep: u64 },
    #[error("configuration not runnable: {0}")]
    BadConfig(String),
    #[error("input channel {channel} out of range for the multicast core ({size} channels)")]
    ChannelOutOfRange { channel: u32, size: u32 },
}

/// Everything observable about one visited timestep.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StepTrace {
    pub timestep: u64,
    /// (core, neuron) of every spike, in processing order.
    pub spikes: Vec<(u8, u16)>,
    /// (core, neuron, new membrane raw) for every neuron update.
    pub membranes: Vec<(u8, u16, i64)>,
    /// Packets delivered to synapse stages during this timestep.
    pub synaptic_events: u64,
}

/// Per-run observability record for equivalence testing.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct TraceRecord {
    pub steps: Vec<StepTrace>,
}

impl TraceRecord {
    pub fn total_synaptic_events(&self) -> u64 {
        self.steps.iter().map(|s| s.synaptic_events).sum()
    }

    pub fn total_spikes(&self) -> u64 {
        self.steps.iter().map(|s| s.spikes.len() as u64).sum()
    }
}

/// Output-core membranes with remaining leak applied to the final visited
/// timestep, plus the argmax label (ties resolve to the lowest index).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReadoutResult {
    pub membranes: Vec<FxValue>,
    pub predicted_label: u32,
}

pub fn argmax_label(membranes: &[FxValue]) -> u32 {
    let mut best = 0usize;
    for (i, m) in membranes.iter().enumerate() {
        if m.raw > membranes[best].raw {
            best = i;
        }
    }
    best as u32
}

struct RefCore {
    membranes: Vec<i64>,
    last_update: Vec<u64>,
    /// Accumulating sums for the next update (wide, unsaturated).
    pending: Vec<i64>,
    /// Sums snapshotted for the current drain.
    active: Vec<i64>,
    hot_bits: Vec<bool>,
    hot_fifo: VecDeque<u16>,
}

impl RefCore {
    fn new(image: &CoreImage) -> Self {
        let n = image.neurons as usize;
        Self {
            membranes: vec![0; n],
            last_update: vec![0; n],
            pending: vec![0; n],
            active: vec![0; n],
            hot_bits: vec![false; n],
            hot_fifo: VecDeque::new(),
        }
    }

    fn deliver(&mut self, neuron: u16, weight_raw_mem: i64) {
        self.pending[neuron as usize] += weight_raw_mem;
        if !self.hot_bits[neuron as usize] {
            self.hot_bits[neuron as usize] = true;
            self.hot_fifo.push_back(neuron);
        }
    }

    /// Snapshots the hot set for this timestep's drain: hot bits clear and
    /// pending sums move to the active bank, so packets arriving during the
    /// drain accumulate for the next timestep.
    fn snapshot(&mut self) -> Vec<u16> {
        let drain: Vec<u16> = self.hot_fifo.drain(..).collect();
        for &j in &drain {
            self.hot_bits[j as usize] = false;
            self.active[j as usize] = std::mem::take(&mut self.pending[j as usize]);
        }
        drain
    }

    fn is_hot(&self) -> bool {
        !self.hot_fifo.is_empty()
    }
}

pub struct ReferenceRun {
    pub trace: TraceRecord,
    pub readout: ReadoutResult,
    pub injected_input_events: u64,
    pub timesteps_visited: u64,
}

/// Runs the golden simulator over a binned stream.
pub fn run_reference(m: &MemCfg, b: &BinnedStream) -> Result<ReferenceRun, SimFault> {
    run_reference_capped(m, b, DEFAULT_MAX_DRAIN)
}

pub fn run_reference_capped(
    m: &MemCfg,
    b: &BinnedStream,
    max_drain: u64,
) -> Result<ReferenceRun, SimFault> {
    let mc = require_kind(m, MULTICAST_CORE, CoreKind::Multicast)?;
    let hidden_img = require_kind(m, HIDDEN_CORE, CoreKind::Lif)?;
    let output_img = require_kind(m, OUTPUT_CORE, CoreKind::Li)?;

    // Weight raws re-scale into the membrane format on delivery.
    let frac_shift = m.membrane_format.frac_bits as i32 - m.weight_format.frac_bits as i32;
    let to_mem = move |w: i64| -> i64 {
        if frac_shift >= 0 {
            w << frac_shift
        } else {
            w >> -frac_shift
        }
    };

    let mut hidden = RefCore::new(hidden_img);
    let mut output = RefCore::new(output_img);
    let u_th = FxValue::new(hidden_img.u_th_raw.unwrap_or(0), m.membrane_format);
    let hidden_lut = hidden_img.leak.as_ref().expect("lif core has a lut");
    let output_lut = output_img.leak.as_ref().expect("li core has a lut");

    let mut trace = TraceRecord::default();
    let mut injected = 0u64;
    let cap = (b.num_timesteps - 1).saturating_add(max_drain);

    // No input at all: visit timestep 0 once so the run has a defined
    // readout point, then stop.
    let mut t = b.next_bin(None).unwrap_or(0);

    loop {
        if t > cap {
            return Err(SimFault::DrainCapExceeded { timestep: t });
        }
        let mut step = StepTrace {
            timestep: t,
            spikes: Vec::new(),
            membranes: Vec::new(),
            synaptic_events: 0,
        };

        // Snapshot all drains before updating anything: spikes fired during
        // this timestep must accumulate for the next one.
        let hidden_drain = hidden.snapshot();
        let output_drain = output.snapshot();

        // Hidden LIF updates, spike fan-out delivered immediately.
        for j in hidden_drain {
            let idx = j as usize;
            let n = t - hidden.last_update[idx];
            let u = FxValue::new(hidden.membranes[idx], m.membrane_format);
            let i = FxValue::new(
                clamp_raw(hidden.active[idx] as i128, m.membrane_format),
                m.membrane_format,
            );
            let r = lif_update(u, n, i, hidden_lut, u_th);
            hidden.membranes[idx] = r.new_u.raw;
            hidden.last_update[idx] = t;
            hidden.active[idx] = 0;
            step.membranes.push((HIDDEN_CORE, j, r.new_u.raw));
            if r.spiked {
                step.spikes.push((HIDDEN_CORE, j));
                for &word in hidden_img.axon_slice(j) {
                    let p = decode_packet(word).expect("validated at load");
                    let w = match p.dest_core {
                        HIDDEN_CORE => hidden_img.synapse_table.get(&p.dest_synapse),
                        OUTPUT_CORE => output_img.synapse_table.get(&p.dest_synapse),
                        other => {
                            return Err(SimFault::BadConfig(format!(
                                "spike packet targets core {other}"
                            )))
                        }
                    };
                    let w = *w.ok_or(SimFault::MissingSynapse {
                        core: p.dest_core,
                        neuron: p.dest_neuron,
                        synapse: p.dest_synapse,
                    })?;
                    match p.dest_core {
                        HIDDEN_CORE => hidden.deliver(p.dest_neuron, to_mem(w)),
                        _ => output.deliver(p.dest_neuron, to_mem(w)),
                    }
                    step.synaptic_events += 1;
                }
            }
        }

        // Output LI updates: integrate only, never spike.
        for k in output_drain {
            let idx = k as usize;
            let n = t - output.last_update[idx];
            let u = FxValue::new(output.membranes[idx], m.membrane_format);
            let i = FxValue::new(
                clamp_raw(output.active[idx] as i128, m.membrane_format),
                m.membrane_format,
            );
            let v = li_update(u, n, i, output_lut);
            output.membranes[idx] = v.raw;
            output.last_update[idx] = t;
            output.active[idx] = 0;
            step.membranes.push((OUTPUT_CORE, k, v.raw));
        }

        // Input events for this timestep: multicast pass-through.
        if let Some(channels) = b.bins.get(&t) {
            for &channel in channels {
                if channel >= mc.neurons {
                    return Err(SimFault::ChannelOutOfRange { channel, size: mc.neurons });
                }
                injected += 1;
                for &word in mc.axon_slice(channel as u16) {
                    let p = decode_packet(word).expect("validated at load");
                    if p.dest_core != HIDDEN_CORE {
                        return Err(SimFault::BadConfig(format!(
                            "multicast packet targets core {}",
                            p.dest_core
                        )));
                    }
                    let w = *hidden_img.synapse_table.get(&p.dest_synapse).ok_or(
                        SimFault::MissingSynapse {
                            core: p.dest_core,
                            neuron: p.dest_neuron,
                            synapse: p.dest_synapse,
                        },
                    )?;
                    hidden.deliver(p.dest_neuron, to_mem(w));
                    step.synaptic_events += 1;
                }
            }
        }

        trace.steps.push(step);

        // Advance to the next timestep with pending work. Hot neurons force
        // t + 1; otherwise jump straight to the next non-empty input bin.
        let any_hot = hidden.is_hot() || output.is_hot();
        let next_bin = b.next_bin(Some(t));
        t = match (any_hot, next_bin) {
            (true, _) => t + 1,
            (false, Some(bin)) => bin,
            (false, None) => break,
        };
    }

    let final_t = trace.steps.last().map(|s| s.timestep).unwrap_or(0);
    let membranes = (0..output_img.neurons as usize)
        .map(|k| {
            let mut u = FxValue::new(output.membranes[k], m.membrane_format);
            let n = final_t - output.last_update[k];
            if n >= 1 {
                u = li_update(u, n, FxValue::zero(m.membrane_format), output_lut);
            }
            u
        })
        .collect::<Vec<_>>();
    let predicted_label = argmax_label(&membranes);

    let timesteps_visited = trace.steps.len() as u64;
    Ok(ReferenceRun {
        trace,
        readout: ReadoutResult { membranes, predicted_label },
        injected_input_events: injected,
        timesteps_visited,
    })
}

/// Total fan-out packets delivered to synapse stages over a run: input events
/// plus spike emissions, each weighted by its fan-out count.
pub fn count_synaptic_events(m: &MemCfg, b: &BinnedStream) -> Result<u64, SimFault> {
    Ok(run_reference(m, b)?.trace.total_synaptic_events())
}

fn require_kind(m: &MemCfg, id: u8, kind: CoreKind) -> Result<&CoreImage, SimFault> {
    let core = m
        .core(id)
        .ok_or_else(|| SimFault::BadConfig(format!("core {id} missing")))?;
    if core.kind != kind {
        return Err(SimFault::BadConfig(format!(
            "core {id} is {}, expected {}",
            core.kind.name(),
            kind.name()
        )));
    }
    Ok(core)
}
