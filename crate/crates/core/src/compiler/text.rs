//! The `.memcfg` text format: human-readable per-core memory images, all
//! numbers lowercase hex without prefix. Writing is canonical (sorted,
//! deterministic bytes); parsing validates every structural invariant and
//! reports errors with line numbers.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::events::{decode_packet, MAX_NEURONS, MAX_SYNAPSES, PACKET_BITS};
use crate::numerics::{FxFormat, LeakLut};

use super::{CoreImage, CoreKind, MemCfg};

#[derive(Debug, Error)]
pub enum MemCfgError {
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn mask_bits(raw: i64, bits: u32) -> u64 {
    if bits >= 64 {
        raw as u64
    } else {
        (raw as u64) & ((1u64 << bits) - 1)
    }
}

fn sign_extend(value: u64, bits: u32) -> i64 {
    if bits >= 64 {
        value as i64
    } else if value >= 1u64 << (bits - 1) {
        value as i64 - (1i64 << bits)
    } else {
        value as i64
    }
}

/// Serializes a memory configuration to its canonical text form.
pub fn format_memcfg(m: &MemCfg) -> String {
    let mut out = String::new();
    out.push_str("# yana-memcfg v1\n");
    let _ = writeln!(
        out,
        "meta input_size={:x} output_size={:x} n_max={:x} weight_fmt={:x}.{:x} membrane_fmt={:x}.{:x} lut_frac={:x}",
        m.input_size,
        m.output_size,
        m.n_max,
        m.weight_format.int_bits(),
        m.weight_format.frac_bits,
        m.membrane_format.int_bits(),
        m.membrane_format.frac_bits,
        m.lut_frac,
    );
    for core in &m.cores {
        let _ = writeln!(out, "core {:x} kind={} neurons={:x}", core.core_id, core.kind.name(), core.neurons);
        if let Some(th) = core.u_th_raw {
            let _ = writeln!(out, "  threshold {:x}", mask_bits(th, m.membrane_format.total_bits));
        }
        if let Some(lut) = &core.leak {
            let _ = writeln!(out, "  inv_tau {:x}", lut.inv_tau);
            let entries: Vec<String> = lut.entries.iter().map(|e| format!("{e:x}")).collect();
            let _ = writeln!(out, "  lut {}", entries.join(" "));
        }
        out.push_str("  synapses\n");
        for (addr, weight) in &core.synapse_table {
            let _ = writeln!(out, "  {:x} {:x}", addr, mask_bits(*weight, m.weight_format.total_bits));
        }
        out.push_str("  axon_map\n");
        for (neuron, (base, count)) in &core.axon_map {
            let _ = writeln!(out, "  {neuron:x} {base:x} {count:x}");
        }
        out.push_str("  axon_table\n");
        for (index, packet) in core.axon_table.iter().enumerate() {
            let _ = writeln!(out, "  {index:x} {packet:x}");
        }
    }
    out
}

pub fn write_memcfg(m: &MemCfg, path: impl AsRef<Path>) -> Result<(), MemCfgError> {
    let path = path.as_ref();
    std::fs::write(path, format_memcfg(m)).map_err(|source| MemCfgError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read_memcfg(path: impl AsRef<Path>) -> Result<MemCfg, MemCfgError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| MemCfgError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_memcfg(&text, &path.display().to_string())
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    None,
    Synapses,
    AxonMap,
    AxonTable,
}

/// Parses and validates the `.memcfg` text format.
pub fn parse_memcfg(text: &str, path: &str) -> Result<MemCfg, MemCfgError> {
    let err = |line: usize, reason: String| MemCfgError::Parse {
        path: path.to_string(),
        line,
        reason,
    };
    let hex_u64 = |line: usize, tok: &str, what: &str| {
        u64::from_str_radix(tok, 16).map_err(|_| err(line, format!("bad hex {what} '{tok}'")))
    };

    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, l)) if l.trim() == "# yana-memcfg v1" => {}
        Some((n, l)) => return Err(err(n, format!("expected '# yana-memcfg v1', got '{l}'"))),
        None => return Err(err(1, "empty file".into())),
    }

    // Meta line.
    let (meta_line_no, meta_line) = lines.next().ok_or_else(|| err(2, "missing meta line".into()))?;
    let meta_line = meta_line.trim();
    let mut meta: BTreeMap<&str, &str> = BTreeMap::new();
    let mut meta_toks = meta_line.split_whitespace();
    if meta_toks.next() != Some("meta") {
        return Err(err(meta_line_no, "expected meta line".into()));
    }
    for tok in meta_toks {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| err(meta_line_no, format!("expected key=value, got '{tok}'")))?;
        meta.insert(k, v);
    }
    let meta_field = |k: &str| {
        meta.get(k)
            .copied()
            .ok_or_else(|| err(meta_line_no, format!("meta missing {k}")))
    };
    let input_size = hex_u64(meta_line_no, meta_field("input_size")?, "input_size")? as u32;
    let output_size = hex_u64(meta_line_no, meta_field("output_size")?, "output_size")? as u32;
    let n_max = hex_u64(meta_line_no, meta_field("n_max")?, "n_max")? as u32;
    let lut_frac = hex_u64(meta_line_no, meta_field("lut_frac")?, "lut_frac")? as u32;
    let parse_fmt = |k: &str| -> Result<FxFormat, MemCfgError> {
        let v = meta_field(k)?;
        let (i, f) = v
            .split_once('.')
            .ok_or_else(|| err(meta_line_no, format!("bad format '{v}' for {k}")))?;
        let int_bits = hex_u64(meta_line_no, i, k)? as u32;
        let frac_bits = hex_u64(meta_line_no, f, k)? as u32;
        if int_bits + frac_bits + 1 > 64 {
            return Err(err(meta_line_no, format!("format {k}={v} wider than 64 bits")));
        }
        Ok(FxFormat::q(int_bits, frac_bits))
    };
    let weight_format = parse_fmt("weight_fmt")?;
    let membrane_format = parse_fmt("membrane_fmt")?;

    // Core blocks.
    struct PartialCore {
        line: usize,
        image: CoreImage,
        inv_tau: Option<u32>,
        lut_entries: Option<Vec<u32>>,
        next_axon_index: u32,
    }
    let mut cores: Vec<PartialCore> = Vec::new();
    let mut section = Section::None;

    for (line_no, raw_line) in lines {
        let line = raw_line.trim();
        if line.is_empty() {
            continue;
        }
        let mut toks = line.split_whitespace();
        let head = toks.next().unwrap();
        match head {
            "core" => {
                let id_tok = toks.next().ok_or_else(|| err(line_no, "missing core id".into()))?;
                let core_id = hex_u64(line_no, id_tok, "core id")? as u8;
                if core_id >= 4 {
                    return Err(err(line_no, format!("core id {core_id} exceeds the 2-bit field")));
                }
                if cores.iter().any(|c| c.image.core_id == core_id) {
                    return Err(err(line_no, format!("duplicate core id {core_id}")));
                }
                let mut kind: Option<CoreKind> = None;
                let mut neurons: Option<u32> = None;
                for tok in toks {
                    let (k, v) = tok
                        .split_once('=')
                        .ok_or_else(|| err(line_no, format!("expected key=value, got '{tok}'")))?;
                    match k {
                        "kind" => {
                            kind = Some(match v {
                                "multicast" => CoreKind::Multicast,
                                "lif" => CoreKind::Lif,
                                "li" => CoreKind::Li,
                                _ => return Err(err(line_no, format!("unknown core kind '{v}'"))),
                            })
                        }
                        "neurons" => neurons = Some(hex_u64(line_no, v, "neurons")? as u32),
                        _ => return Err(err(line_no, format!("unknown core attribute '{k}'"))),
                    }
                }
                let kind = kind.ok_or_else(|| err(line_no, "core missing kind".into()))?;
                let neurons = neurons.ok_or_else(|| err(line_no, "core missing neurons".into()))?;
                if neurons > MAX_NEURONS {
                    return Err(err(line_no, format!("neurons {neurons} exceeds {MAX_NEURONS}")));
                }
                cores.push(PartialCore {
                    line: line_no,
                    image: CoreImage {
                        core_id,
                        kind,
                        neurons,
                        synapse_table: BTreeMap::new(),
                        axon_map: BTreeMap::new(),
                        axon_table: Vec::new(),
                        u_th_raw: None,
                        leak: None,
                    },
                    inv_tau: None,
                    lut_entries: None,
                    next_axon_index: 0,
                });
                section = Section::None;
            }
            "threshold" => {
                let core = cores.last_mut().ok_or_else(|| err(line_no, "threshold outside core".into()))?;
                if core.image.kind != CoreKind::Lif {
                    return Err(err(line_no, "threshold only applies to lif cores".into()));
                }
                let tok = toks.next().ok_or_else(|| err(line_no, "missing threshold value".into()))?;
                let v = hex_u64(line_no, tok, "threshold")?;
                if membrane_format.total_bits < 64 && v >> membrane_format.total_bits != 0 {
                    return Err(err(line_no, format!("threshold {tok} wider than the membrane format")));
                }
                core.image.u_th_raw = Some(sign_extend(v, membrane_format.total_bits));
                section = Section::None;
            }
            "inv_tau" => {
                let core = cores.last_mut().ok_or_else(|| err(line_no, "inv_tau outside core".into()))?;
                if core.image.kind == CoreKind::Multicast {
                    return Err(err(line_no, "multicast cores have no leak".into()));
                }
                let tok = toks.next().ok_or_else(|| err(line_no, "missing inv_tau value".into()))?;
                core.inv_tau = Some(hex_u64(line_no, tok, "inv_tau")? as u32);
                section = Section::None;
            }
            "lut" => {
                let core = cores.last_mut().ok_or_else(|| err(line_no, "lut outside core".into()))?;
                if core.image.kind == CoreKind::Multicast {
                    return Err(err(line_no, "multicast cores have no leak".into()));
                }
                let entries: Result<Vec<u32>, _> =
                    toks.map(|t| hex_u64(line_no, t, "lut entry").map(|v| v as u32)).collect();
                let entries = entries?;
                if entries.len() != n_max as usize {
                    return Err(err(
                        line_no,
                        format!("lut has {} entries, meta n_max is {}", entries.len(), n_max),
                    ));
                }
                core.lut_entries = Some(entries);
                section = Section::None;
            }
            "synapses" => section = Section::Synapses,
            "axon_map" => section = Section::AxonMap,
            "axon_table" => section = Section::AxonTable,
            _ => {
                // Data line for the current section.
                let core = cores.last_mut().ok_or_else(|| err(line_no, format!("unexpected line '{line}'")))?;
                let fields: Vec<&str> = std::iter::once(head).chain(toks).collect();
                match section {
                    Section::Synapses => {
                        if fields.len() != 2 {
                            return Err(err(line_no, "synapse line needs '<addr> <weight>'".into()));
                        }
                        let addr = hex_u64(line_no, fields[0], "synapse address")? as u32;
                        if addr >= MAX_SYNAPSES {
                            return Err(err(line_no, format!("synapse address {addr:x} exceeds 17 bits")));
                        }
                        let w = hex_u64(line_no, fields[1], "weight")?;
                        if weight_format.total_bits < 64 && w >> weight_format.total_bits != 0 {
                            return Err(err(line_no, format!("weight {} wider than the weight format", fields[1])));
                        }
                        if core.image.synapse_table.insert(addr, sign_extend(w, weight_format.total_bits)).is_some() {
                            return Err(err(line_no, format!("duplicate synapse address {addr:x}")));
                        }
                    }
                    Section::AxonMap => {
                        if fields.len() != 3 {
                            return Err(err(line_no, "axon_map line needs '<neuron> <base> <count>'".into()));
                        }
                        let neuron = hex_u64(line_no, fields[0], "neuron id")? as u32;
                        if neuron >= core.image.neurons.max(1) || neuron >= MAX_NEURONS {
                            return Err(err(line_no, format!("neuron id {neuron:x} out of range")));
                        }
                        let base = hex_u64(line_no, fields[1], "base")? as u32;
                        let count = hex_u64(line_no, fields[2], "count")? as u32;
                        if core.image.axon_map.insert(neuron as u16, (base, count)).is_some() {
                            return Err(err(line_no, format!("duplicate axon_map entry for neuron {neuron:x}")));
                        }
                    }
                    Section::AxonTable => {
                        if fields.len() != 2 {
                            return Err(err(line_no, "axon_table line needs '<index> <packet>'".into()));
                        }
                        let index = hex_u64(line_no, fields[0], "index")? as u32;
                        if index != core.next_axon_index {
                            return Err(err(
                                line_no,
                                format!("axon_table index {index:x}, expected {:x}", core.next_axon_index),
                            ));
                        }
                        let word = hex_u64(line_no, fields[1], "packet")?;
                        if word >> PACKET_BITS != 0 {
                            return Err(err(line_no, format!("packet {word:x} has bits above bit 28 set")));
                        }
                        core.image.axon_table.push(word as u32);
                        core.next_axon_index += 1;
                    }
                    Section::None => return Err(err(line_no, format!("unexpected line '{line}'"))),
                }
            }
        }
    }

    // Assemble and validate per-core invariants.
    let mut images = Vec::with_capacity(cores.len());
    for mut core in cores {
        let line = core.line;
        match core.image.kind {
            CoreKind::Multicast => {
                if core.inv_tau.is_some() || core.lut_entries.is_some() {
                    return Err(err(line, "multicast core carries leak parameters".into()));
                }
                if !core.image.synapse_table.is_empty() {
                    return Err(err(line, "multicast core carries a synapse table".into()));
                }
            }
            CoreKind::Lif | CoreKind::Li => {
                let inv_tau = core
                    .inv_tau
                    .ok_or_else(|| err(line, format!("core {} missing inv_tau", core.image.core_id)))?;
                let entries = core
                    .lut_entries
                    .take()
                    .ok_or_else(|| err(line, format!("core {} missing lut", core.image.core_id)))?;
                core.image.leak = Some(LeakLut::from_parts(entries, inv_tau, lut_frac));
                if core.image.kind == CoreKind::Lif && core.image.u_th_raw.is_none() {
                    return Err(err(line, format!("lif core {} missing threshold", core.image.core_id)));
                }
            }
        }
        if core.image.synapse_table.len() > MAX_SYNAPSES as usize {
            return Err(err(line, "synapse table larger than 2^17".into()));
        }
        // Axon ranges: in bounds and pairwise disjoint.
        let table_len = core.image.axon_table.len() as u64;
        let mut ranges: Vec<(u64, u64, u16)> = core
            .image
            .axon_map
            .iter()
            .map(|(&n, &(base, count))| (base as u64, base as u64 + count as u64, n))
            .collect();
        for &(start, end, neuron) in &ranges {
            if end > table_len {
                return Err(err(
                    line,
                    format!("axon range of neuron {neuron:x} ([{start}, {end})) exceeds table length {table_len}"),
                ));
            }
        }
        ranges.sort();
        for w in ranges.windows(2) {
            let (_, end_a, n_a) = w[0];
            let (start_b, end_b, n_b) = w[1];
            // Zero-length ranges may share a base with anything.
            if start_b < end_a && start_b != end_b {
                return Err(err(
                    line,
                    format!("axon ranges of neurons {n_a:x} and {n_b:x} overlap"),
                ));
            }
        }
        images.push(core.image);
    }

    let cfg = MemCfg {
        input_size,
        output_size,
        n_max,
        weight_format,
        membrane_format,
        lut_frac,
        cores: images,
    };

    // Cross-core packet validation.
    for core in &cfg.cores {
        for (idx, &word) in core.axon_table.iter().enumerate() {
            let p = decode_packet(word).map_err(|e| err(0, format!("core {} axon {idx}: {e}", core.core_id)))?;
            let dest = cfg.core(p.dest_core).ok_or_else(|| {
                err(0, format!("core {} axon {idx}: dest core {} does not exist", core.core_id, p.dest_core))
            })?;
            if dest.kind == CoreKind::Multicast {
                return Err(err(
                    0,
                    format!("core {} axon {idx}: packets may not target the multicast core", core.core_id),
                ));
            }
            if p.dest_neuron as u32 >= dest.neurons {
                return Err(err(
                    0,
                    format!(
                        "core {} axon {idx}: dest neuron {} out of range for core {}",
                        core.core_id, p.dest_neuron, p.dest_core
                    ),
                ));
            }
        }
    }
    Ok(cfg)
}
