//! Deployment compiler: maps a quantized graph onto per-core memory images
//! (synapse table, axon map, axon table, neuron parameters, leak LUT) and
//! serializes them in the human-readable memory-configuration format.
//!
//! Core-id convention: core 0 is the weightless input multicast core, core 1
//! the hidden LIF core, core 2 the output LI core. The 2-bit core field
//! leaves room for a fourth core, reserved.

mod text;

pub use text::{format_memcfg, parse_memcfg, read_memcfg, write_memcfg, MemCfgError};

use std::collections::BTreeMap;

use thiserror::Error;

use crate::events::{encode_packet, DestPacket, MAX_NEURONS, MAX_SYNAPSES};
use crate::netgraph::{validate_capacity, CapacityLimits, CapacityViolation, QGraph, QMatrix};
use crate::numerics::{FxFormat, LeakLut};

pub const MULTICAST_CORE: u8 = 0;
pub const HIDDEN_CORE: u8 = 1;
pub const OUTPUT_CORE: u8 = 2;

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("graph exceeds accelerator capacity:\n{}", format_violations(violations))]
    Capacity { violations: Vec<CapacityViolation> },
}

fn format_violations(violations: &[CapacityViolation]) -> String {
    violations.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CoreKind {
    Multicast,
    Lif,
    Li,
}

impl CoreKind {
    pub fn name(self) -> &'static str {
        match self {
            CoreKind::Multicast => "multicast",
            CoreKind::Lif => "lif",
            CoreKind::Li => "li",
        }
    }
}

/// Memory contents of one core.
///
/// `axon_map` gives each neuron a `(base, count)` slice of `axon_table`;
/// slices are disjoint and in bounds. For the multicast core the "neurons"
/// are input channels and the table fans each channel out to its synapses.
#[derive(Debug, Clone, PartialEq)]
pub struct CoreImage {
    pub core_id: u8,
    pub kind: CoreKind,
    pub neurons: u32,
    pub synapse_table: BTreeMap<u32, i64>,
    pub axon_map: BTreeMap<u16, (u32, u32)>,
    pub axon_table: Vec<u32>,
    /// Spike threshold raw pattern (LIF cores only).
    pub u_th_raw: Option<i64>,
    /// Leak LUT (LIF and LI cores).
    pub leak: Option<LeakLut>,
}

impl CoreImage {
    pub fn axon_slice(&self, neuron: u16) -> &[u32] {
        match self.axon_map.get(&neuron) {
            Some(&(base, count)) => &self.axon_table[base as usize..(base + count) as usize],
            None => &[],
        }
    }

    pub fn fan_out(&self, neuron: u16) -> u32 {
        self.axon_map.get(&neuron).map_or(0, |&(_, count)| count)
    }
}

/// Full memory configuration: the three core images plus the numeric formats
/// they were quantized with.
#[derive(Debug, Clone, PartialEq)]
pub struct MemCfg {
    pub input_size: u32,
    pub output_size: u32,
    pub n_max: u32,
    pub weight_format: FxFormat,
    pub membrane_format: FxFormat,
    pub lut_frac: u32,
    pub cores: Vec<CoreImage>,
}

impl MemCfg {
    pub fn core(&self, id: u8) -> Option<&CoreImage> {
        self.cores.iter().find(|c| c.core_id == id)
    }

    pub fn total_synapse_words(&self) -> usize {
        self.cores.iter().map(|c| c.synapse_table.len()).sum()
    }

    pub fn total_axon_entries(&self) -> usize {
        self.cores.iter().map(|c| c.axon_table.len()).sum()
    }
}

/// Assigns synapse addresses for one weight matrix in row-major
/// (source, destination) order; with `dedup`, equal raw weight values share
/// one address.
struct AddrAllocator<'a> {
    table: &'a mut BTreeMap<u32, i64>,
    next: u32,
    dedup: Option<BTreeMap<i64, u32>>,
}

impl<'a> AddrAllocator<'a> {
    fn new(table: &'a mut BTreeMap<u32, i64>, dedup: bool) -> Self {
        Self { table, next: 0, dedup: dedup.then(BTreeMap::new) }
    }

    fn assign(&mut self, raw: i64) -> u32 {
        if let Some(seen) = &mut self.dedup {
            if let Some(&addr) = seen.get(&raw) {
                return addr;
            }
            let addr = self.next;
            self.next += 1;
            self.table.insert(addr, raw);
            seen.insert(raw, addr);
            addr
        } else {
            let addr = self.next;
            self.next += 1;
            self.table.insert(addr, raw);
            addr
        }
    }

    /// Address map for a whole matrix, entry per present weight.
    fn assign_matrix(&mut self, m: &QMatrix) -> Vec<Option<u32>> {
        let mut addrs = vec![None; m.rows * m.cols];
        for r in 0..m.rows {
            for (c, raw) in m.row_nonzeros(r) {
                addrs[r * m.cols + c] = Some(self.assign(raw));
            }
        }
        addrs
    }
}

/// Maps a quantized graph onto the three-core memory layout.
///
/// Capacity is validated first; violations abort the mapping. Synapse
/// addresses are assigned densely in row-major order per core (input weights
/// before recurrent weights on the hidden core), so equal graphs always
/// produce byte-identical configurations.
pub fn map_graph(q: &QGraph, dedup: bool) -> Result<MemCfg, CompileError> {
    let violations = validate_capacity(q, CapacityLimits::default());
    if !violations.is_empty() {
        return Err(CompileError::Capacity { violations });
    }

    // Hidden core synapse table: w_in block then w_rec block.
    let mut hidden_syn = BTreeMap::new();
    let mut alloc = AddrAllocator::new(&mut hidden_syn, dedup);
    let in_addrs = alloc.assign_matrix(&q.w_in);
    let rec_addrs = q.w_rec.as_ref().map(|m| alloc.assign_matrix(m));

    // Output core synapse table: w_out.
    let mut out_syn = BTreeMap::new();
    let out_addrs = AddrAllocator::new(&mut out_syn, dedup).assign_matrix(&q.w_out);

    // Core 0: per input channel, one packet per nonzero input weight.
    let mut mc_map = BTreeMap::new();
    let mut mc_table = Vec::with_capacity(q.w_in.nnz());
    for channel in 0..q.input_size {
        let base = mc_table.len() as u32;
        for (j, _) in q.w_in.row_nonzeros(channel) {
            let addr = in_addrs[channel * q.hidden_size + j].unwrap();
            mc_table.push(pack(HIDDEN_CORE, j as u16, addr));
        }
        mc_map.insert(channel as u16, (base, mc_table.len() as u32 - base));
    }

    // Core 1: per hidden neuron, output packets then recurrent packets.
    let mut hid_map = BTreeMap::new();
    let mut hid_table = Vec::new();
    for j in 0..q.hidden_size {
        let base = hid_table.len() as u32;
        for (k, _) in q.w_out.row_nonzeros(j) {
            let addr = out_addrs[j * q.output_size + k].unwrap();
            hid_table.push(pack(OUTPUT_CORE, k as u16, addr));
        }
        if let (Some(w_rec), Some(rec_addrs)) = (&q.w_rec, &rec_addrs) {
            for (j2, _) in w_rec.row_nonzeros(j) {
                let addr = rec_addrs[j * q.hidden_size + j2].unwrap();
                hid_table.push(pack(HIDDEN_CORE, j2 as u16, addr));
            }
        }
        hid_map.insert(j as u16, (base, hid_table.len() as u32 - base));
    }

    let cores = vec![
        CoreImage {
            core_id: MULTICAST_CORE,
            kind: CoreKind::Multicast,
            neurons: q.input_size as u32,
            synapse_table: BTreeMap::new(),
            axon_map: mc_map,
            axon_table: mc_table,
            u_th_raw: None,
            leak: None,
        },
        CoreImage {
            core_id: HIDDEN_CORE,
            kind: CoreKind::Lif,
            neurons: q.hidden_size as u32,
            synapse_table: hidden_syn,
            axon_map: hid_map,
            axon_table: hid_table,
            u_th_raw: Some(q.u_th.raw),
            leak: Some(q.hidden_lut.clone()),
        },
        CoreImage {
            core_id: OUTPUT_CORE,
            kind: CoreKind::Li,
            neurons: q.output_size as u32,
            synapse_table: out_syn,
            axon_map: BTreeMap::new(),
            axon_table: Vec::new(),
            u_th_raw: None,
            leak: Some(q.output_lut.clone()),
        },
    ];

    Ok(MemCfg {
        input_size: q.input_size as u32,
        output_size: q.output_size as u32,
        n_max: q.n_max,
        weight_format: q.weight_format,
        membrane_format: q.membrane_format,
        lut_frac: q.lut_frac,
        cores,
    })
}

fn pack(core: u8, neuron: u16, synapse: u32) -> u32 {
    debug_assert!((neuron as u32) < MAX_NEURONS && synapse < MAX_SYNAPSES);
    encode_packet(DestPacket { dest_core: core, dest_neuron: neuron, dest_synapse: synapse })
        .expect("mapper produced out-of-range packet")
}
