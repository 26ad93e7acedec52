//! Cycle-stepped model of one core's five-stage pipeline: RX, synapse,
//! neuron, axon and TX stages progress concurrently, one tick per clock
//! cycle. This is the latency model; its functional results must match the
//! golden simulator bit for bit.
//!
//! Stage handoffs take one cycle: each tick processes stages downstream-first
//! (TX, axon, neuron, synapse, RX), so work produced by an upstream stage is
//! seen by its consumer on the following tick. A stage that starts a job with
//! cost `c` finishes it `c` ticks later, which makes cost-1 stages sustain
//! one item per cycle.
//!
//! Timestep protocol: events accumulate weight sums and hot marks while the
//! pipeline runs freely; `begin_timestep` snapshots the hot FIFO as the drain
//! set, clears the hot bits and moves each drained neuron's pending weight
//! sum into an active bank. Events arriving during the drain therefore
//! accumulate strictly for the next timestep.

use std::collections::VecDeque;

use crate::compiler::{CoreImage, CoreKind};
use crate::events::decode_packet;
use crate::numerics::{clamp_raw, lif_update, li_update, FxFormat, FxValue};
use crate::refsim::SimFault;

/// Per-stage cycle costs. The RX/synapse input rate of one event per cycle is
/// fixed by the architecture; everything else is a model parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleParams {
    /// Events consumed per cycle by RX; the architecture fixes this at 1.
    pub rx_throughput: u32,
    pub syn_cost: u32,
    pub neuron_cost: u32,
    pub neuron_pipe_fill: u32,
    pub axon_lookup_cost: u32,
    pub axon_emit_cost: u32,
    pub tx_cost: u32,
    pub timestep_overhead: u32,
    pub clock_hz: u64,
}

impl Default for CycleParams {
    fn default() -> Self {
        Self {
            rx_throughput: 1,
            syn_cost: 1,
            neuron_cost: 1,
            neuron_pipe_fill: 4,
            axon_lookup_cost: 2,
            axon_emit_cost: 1,
            tx_cost: 1,
            timestep_overhead: 8,
            clock_hz: 100_000_000,
        }
    }
}

impl CycleParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.rx_throughput != 1 {
            return Err("rx_throughput is fixed at 1 event/cycle".into());
        }
        for (name, v) in [
            ("syn_cost", self.syn_cost),
            ("neuron_cost", self.neuron_cost),
            ("axon_lookup_cost", self.axon_lookup_cost),
            ("axon_emit_cost", self.axon_emit_cost),
            ("tx_cost", self.tx_cost),
        ] {
            if v < 1 {
                return Err(format!("{name} must be >= 1"));
            }
        }
        if self.clock_hz == 0 {
            return Err("clock_hz must be positive".into());
        }
        Ok(())
    }
}

/// Which stages did work during a tick.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TickActivity {
    pub rx_busy: bool,
    pub syn_busy: bool,
    pub neuron_busy: bool,
    pub axon_busy: bool,
    pub tx_busy: bool,
}

impl TickActivity {
    pub fn any(&self) -> bool {
        self.rx_busy || self.syn_busy || self.neuron_busy || self.axon_busy || self.tx_busy
    }
}

/// Busy-cycle and event counters, cleared by [`CoreState::reset`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CoreStats {
    pub rx_busy: u64,
    pub syn_busy: u64,
    pub neuron_busy: u64,
    pub axon_busy: u64,
    pub tx_busy: u64,
    /// Packets consumed by the synapse stage (multicast pass-throughs are
    /// not synaptic events and are counted separately).
    pub synaptic_events: u64,
    pub multicast_events: u64,
    pub spikes: u64,
    pub packets_emitted: u64,
    pub rx_high_water: u32,
}

/// One neuron update applied by the neuron stage, for trace comparison
/// against the golden simulator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpdateEvent {
    pub neuron: u16,
    pub new_u_raw: i64,
    pub spiked: bool,
}

struct DrainJob {
    queue: VecDeque<u16>,
    fill_remaining: u32,
    current: Option<(u16, u32)>,
}

struct AxonJob {
    lookup_remaining: u32,
    next_slot: u32,
    end_slot: u32,
    emit_remaining: u32,
}

/// Full state of one simulated core.
pub struct CoreState<'a> {
    pub image: &'a CoreImage,
    params: CycleParams,
    membrane_format: FxFormat,
    /// Left shift from weight raw to membrane raw (negative shifts right).
    frac_shift: i32,
    u_th: FxValue,

    membranes: Vec<i64>,
    last_update: Vec<u64>,
    pending: Vec<i64>,
    active: Vec<i64>,
    hot_bits: Vec<bool>,
    hot_fifo: VecDeque<u16>,
    current_timestep: u64,

    rx_q: VecDeque<u32>,
    rx_latch: Option<u32>,
    syn_job: Option<(u32, u32)>,
    drain: Option<DrainJob>,
    spike_q: VecDeque<u16>,
    axon_job: Option<AxonJob>,
    tx_q: VecDeque<u32>,
    tx_job: Option<(u32, u32)>,
    feedback: Vec<u32>,

    pub stats: CoreStats,
    /// Updates applied since the last [`CoreState::take_updates`] call.
    updates: Vec<UpdateEvent>,
}

impl<'a> CoreState<'a> {
    pub fn new(
        image: &'a CoreImage,
        params: CycleParams,
        weight_format: FxFormat,
        membrane_format: FxFormat,
    ) -> Self {
        let n = image.neurons as usize;
        Self {
            image,
            params,
            membrane_format,
            frac_shift: membrane_format.frac_bits as i32 - weight_format.frac_bits as i32,
            u_th: FxValue::new(image.u_th_raw.unwrap_or(0), membrane_format),
            membranes: vec![0; n],
            last_update: vec![0; n],
            pending: vec![0; n],
            active: vec![0; n],
            hot_bits: vec![false; n],
            hot_fifo: VecDeque::new(),
            current_timestep: 0,
            rx_q: VecDeque::new(),
            rx_latch: None,
            syn_job: None,
            drain: None,
            spike_q: VecDeque::new(),
            axon_job: None,
            tx_q: VecDeque::new(),
            tx_job: None,
            feedback: Vec::new(),
            stats: CoreStats::default(),
            updates: Vec::new(),
        }
    }

    /// Enqueues a packet on RX. The queue is unbounded; the recorded
    /// high-water mark lets tests confirm boundedness under 1/cycle arrival.
    pub fn inject(&mut self, word: u32) {
        debug_assert_eq!(
            decode_packet(word).map(|p| p.dest_core).unwrap_or(u8::MAX),
            self.image.core_id,
            "packet routed to the wrong core"
        );
        self.rx_q.push_back(word);
        self.stats.rx_high_water = self.stats.rx_high_water.max(self.rx_q.len() as u32);
    }

    /// True iff all stage queues are empty and no stage is mid-operation.
    pub fn is_idle(&self) -> bool {
        self.rx_q.is_empty()
            && self.rx_latch.is_none()
            && self.syn_job.is_none()
            && self.drain.is_none()
            && self.spike_q.is_empty()
            && self.axon_job.is_none()
            && self.tx_q.is_empty()
            && self.tx_job.is_none()
            && self.feedback.is_empty()
    }

    /// Starts a timestep: snapshots the hot FIFO as this timestep's drain
    /// set. Calling while the previous drain is still running is a protocol
    /// fault.
    pub fn begin_timestep(&mut self, timestep: u64) -> Result<(), SimFault> {
        if self.drain.is_some() {
            return Err(SimFault::BadConfig(format!(
                "core {}: begin_timestep({timestep}) while the neuron stage is draining",
                self.image.core_id
            )));
        }
        self.current_timestep = timestep;
        if self.image.kind == CoreKind::Multicast {
            return Ok(()); // no neurons to update
        }
        let queue: VecDeque<u16> = self.hot_fifo.drain(..).collect();
        for &j in &queue {
            self.hot_bits[j as usize] = false;
            self.active[j as usize] = std::mem::take(&mut self.pending[j as usize]);
        }
        let job = DrainJob { queue, fill_remaining: self.params.neuron_pipe_fill, current: None };
        // A zero-fill empty drain completes immediately.
        if job.fill_remaining > 0 || !job.queue.is_empty() {
            self.drain = Some(job);
        }
        Ok(())
    }

    /// Clears all run state (membranes, weight sums, hot structures, queues,
    /// counters); the memory image is untouched.
    pub fn reset(&mut self) {
        let n = self.image.neurons as usize;
        self.membranes = vec![0; n];
        self.last_update = vec![0; n];
        self.pending = vec![0; n];
        self.active = vec![0; n];
        self.hot_bits = vec![false; n];
        self.hot_fifo.clear();
        self.current_timestep = 0;
        self.rx_q.clear();
        self.rx_latch = None;
        self.syn_job = None;
        self.drain = None;
        self.spike_q.clear();
        self.axon_job = None;
        self.tx_q.clear();
        self.tx_job = None;
        self.feedback.clear();
        self.stats = CoreStats::default();
        self.updates.clear();
    }

    pub fn has_hot_neurons(&self) -> bool {
        !self.hot_fifo.is_empty()
    }

    pub fn take_updates(&mut self) -> Vec<UpdateEvent> {
        std::mem::take(&mut self.updates)
    }

    /// Pending (next-timestep) weight sum of a neuron, saturated to the
    /// membrane format as the neuron stage would read it.
    pub fn pending_sum(&self, neuron: u16) -> i64 {
        clamp_raw(self.pending[neuron as usize] as i128, self.membrane_format)
    }

    pub fn membrane(&self, neuron: u16) -> i64 {
        self.membranes[neuron as usize]
    }

    pub fn last_update_of(&self, neuron: u16) -> u64 {
        self.last_update[neuron as usize]
    }

    pub fn hot_count(&self) -> usize {
        self.hot_fifo.len()
    }

    /// Advances one clock cycle. Packets leaving for other cores are pushed
    /// to `external_out`; feedback to this core re-enters RX next cycle.
    pub fn tick(&mut self, external_out: &mut Vec<u32>) -> Result<TickActivity, SimFault> {
        let mut act = TickActivity::default();

        // TX stage.
        if self.tx_job.is_none() {
            if let Some(word) = self.tx_q.pop_front() {
                self.tx_job = Some((word, self.params.tx_cost));
            }
        }
        if let Some((word, rem)) = &mut self.tx_job {
            act.tx_busy = true;
            self.stats.tx_busy += 1;
            *rem -= 1;
            if *rem == 0 {
                let word = *word;
                let dest = decode_packet(word).expect("validated at load").dest_core;
                if dest == self.image.core_id {
                    self.feedback.push(word);
                } else {
                    external_out.push(word);
                }
                self.tx_job = None;
            }
        }

        // Axon stage: per spiking neuron (or multicast event), one lookup
        // then one emission per packet in its fan-out slice.
        if self.axon_job.is_none() {
            if let Some(neuron) = self.spike_q.pop_front() {
                let (base, count) = self.image.axon_map.get(&neuron).copied().unwrap_or((0, 0));
                self.axon_job = Some(AxonJob {
                    lookup_remaining: self.params.axon_lookup_cost,
                    next_slot: base,
                    end_slot: base + count,
                    emit_remaining: 0,
                });
            }
        }
        if let Some(job) = &mut self.axon_job {
            act.axon_busy = true;
            self.stats.axon_busy += 1;
            let mut done = false;
            if job.lookup_remaining > 0 {
                job.lookup_remaining -= 1;
                if job.lookup_remaining == 0 {
                    if job.next_slot < job.end_slot {
                        job.emit_remaining = self.params.axon_emit_cost;
                    } else {
                        done = true;
                    }
                }
            } else {
                job.emit_remaining -= 1;
                if job.emit_remaining == 0 {
                    let word = self.image.axon_table[job.next_slot as usize];
                    self.tx_q.push_back(word);
                    self.stats.packets_emitted += 1;
                    job.next_slot += 1;
                    if job.next_slot < job.end_slot {
                        job.emit_remaining = self.params.axon_emit_cost;
                    } else {
                        done = true;
                    }
                }
            }
            if done {
                self.axon_job = None;
            }
        }

        // Neuron stage: active only while draining.
        if let Some(d) = &mut self.drain {
            act.neuron_busy = true;
            self.stats.neuron_busy += 1;
            if d.fill_remaining > 0 {
                d.fill_remaining -= 1;
                if d.fill_remaining == 0 && d.queue.is_empty() && d.current.is_none() {
                    self.drain = None;
                }
            } else {
                if d.current.is_none() {
                    if let Some(j) = d.queue.pop_front() {
                        d.current = Some((j, self.params.neuron_cost));
                    }
                }
                if let Some((j, rem)) = &mut d.current {
                    *rem -= 1;
                    if *rem == 0 {
                        let j = *j;
                        d.current = None;
                        let queue_empty = d.queue.is_empty();
                        self.apply_update(j);
                        if queue_empty {
                            self.drain = None;
                        }
                    }
                }
            }
        }

        // Synapse stage.
        if self.syn_job.is_none() {
            if let Some(word) = self.rx_latch.take() {
                self.syn_job = Some((word, self.params.syn_cost));
            }
        }
        if let Some((word, rem)) = &mut self.syn_job {
            act.syn_busy = true;
            self.stats.syn_busy += 1;
            *rem -= 1;
            if *rem == 0 {
                let word = *word;
                self.syn_job = None;
                self.apply_synapse(word)?;
            }
        }

        // RX stage: moves at most one packet per cycle to the synapse stage.
        if self.rx_latch.is_none() {
            if let Some(word) = self.rx_q.pop_front() {
                self.rx_latch = Some(word);
                act.rx_busy = true;
                self.stats.rx_busy += 1;
            }
        }

        // Feedback packets become visible to RX on the next tick.
        if !self.feedback.is_empty() {
            for word in self.feedback.drain(..) {
                self.rx_q.push_back(word);
            }
            self.stats.rx_high_water = self.stats.rx_high_water.max(self.rx_q.len() as u32);
        }

        Ok(act)
    }

    fn apply_update(&mut self, neuron: u16) {
        let idx = neuron as usize;
        let n = self.current_timestep - self.last_update[idx];
        debug_assert!(n >= 1, "neuron {neuron} drained twice in one timestep");
        let u = FxValue::new(self.membranes[idx], self.membrane_format);
        let i = FxValue::new(
            clamp_raw(self.active[idx] as i128, self.membrane_format),
            self.membrane_format,
        );
        let lut = self.image.leak.as_ref().expect("lif/li core has a lut");
        let (new_u, spiked) = match self.image.kind {
            CoreKind::Lif => {
                let r = lif_update(u, n, i, lut, self.u_th);
                (r.new_u, r.spiked)
            }
            CoreKind::Li => (li_update(u, n, i, lut), false),
            CoreKind::Multicast => unreachable!("multicast cores have no neuron stage"),
        };
        self.membranes[idx] = new_u.raw;
        self.last_update[idx] = self.current_timestep;
        self.active[idx] = 0;
        self.updates.push(UpdateEvent { neuron, new_u_raw: new_u.raw, spiked });
        if spiked {
            self.stats.spikes += 1;
            self.spike_q.push_back(neuron);
        }
    }

    fn apply_synapse(&mut self, word: u32) -> Result<(), SimFault> {
        let p = decode_packet(word).expect("validated at load");
        if self.image.kind == CoreKind::Multicast {
            // Pass-through: the packet's neuron field is the input channel,
            // which triggers the axon fan-out directly.
            self.stats.multicast_events += 1;
            self.spike_q.push_back(p.dest_neuron);
            return Ok(());
        }
        let w = *self
            .image
            .synapse_table
            .get(&p.dest_synapse)
            .ok_or(SimFault::MissingSynapse {
                core: self.image.core_id,
                neuron: p.dest_neuron,
                synapse: p.dest_synapse,
            })?;
        let w_mem = if self.frac_shift >= 0 {
            w << self.frac_shift
        } else {
            w >> -self.frac_shift
        };
        let idx = p.dest_neuron as usize;
        self.pending[idx] += w_mem;
        if !self.hot_bits[idx] {
            self.hot_bits[idx] = true;
            self.hot_fifo.push_back(p.dest_neuron);
        }
        self.stats.synaptic_events += 1;
        Ok(())
    }
}
