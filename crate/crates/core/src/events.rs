//! Event representations and transforms: source-encoded input events, the
//! 29-bit destination-encoded packet, the `.events` text format, timestep
//! binning and deterministic event dropping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use thiserror::Error;

use crate::rng::unit_draw;

pub const CORE_BITS: u32 = 2;
pub const NEURON_BITS: u32 = 10;
pub const SYNAPSE_BITS: u32 = 17;
pub const PACKET_BITS: u32 = CORE_BITS + NEURON_BITS + SYNAPSE_BITS;

pub const MAX_CORES: u32 = 1 << CORE_BITS;
pub const MAX_NEURONS: u32 = 1 << NEURON_BITS;
pub const MAX_SYNAPSES: u32 = 1 << SYNAPSE_BITS;

#[derive(Debug, Error)]
pub enum EventError {
    #[error("packet field out of range: core {core} neuron {neuron} synapse {synapse}")]
    FieldOutOfRange { core: u8, neuron: u16, synapse: u32 },
    #[error("packet word {0:#x} has bits above bit 28 set")]
    HighBitsSet(u32),
    #[error("{path}:{line}: {reason}")]
    Malformed { path: String, line: usize, reason: String },
    #[error("i/o error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Source-encoded event: a spike on one input channel at one microsecond
/// timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SourceEvent {
    pub timestamp_us: u64,
    pub channel: u32,
}

/// Destination-encoded event packet addressing (core, neuron, synapse).
/// Packs into 29 bits: core in [28:27], neuron in [26:17], synapse in [16:0].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct DestPacket {
    pub dest_core: u8,
    pub dest_neuron: u16,
    pub dest_synapse: u32,
}

impl DestPacket {
    pub fn new(dest_core: u8, dest_neuron: u16, dest_synapse: u32) -> Result<Self, EventError> {
        let p = Self { dest_core, dest_neuron, dest_synapse };
        if (dest_core as u32) < MAX_CORES
            && (dest_neuron as u32) < MAX_NEURONS
            && dest_synapse < MAX_SYNAPSES
        {
            Ok(p)
        } else {
            Err(EventError::FieldOutOfRange {
                core: dest_core,
                neuron: dest_neuron,
                synapse: dest_synapse,
            })
        }
    }
}

/// Packs a destination packet into a 32-bit word (bits [31:29] zero).
pub fn encode_packet(p: DestPacket) -> Result<u32, EventError> {
    // Re-validate so hand-built packets cannot smuggle out-of-range fields.
    let p = DestPacket::new(p.dest_core, p.dest_neuron, p.dest_synapse)?;
    Ok(((p.dest_core as u32) << (NEURON_BITS + SYNAPSE_BITS))
        | ((p.dest_neuron as u32) << SYNAPSE_BITS)
        | p.dest_synapse)
}

/// Exact inverse of [`encode_packet`]; rejects words with bits 29..32 set.
pub fn decode_packet(word: u32) -> Result<DestPacket, EventError> {
    if word >> PACKET_BITS != 0 {
        return Err(EventError::HighBitsSet(word));
    }
    Ok(DestPacket {
        dest_core: (word >> (NEURON_BITS + SYNAPSE_BITS)) as u8,
        dest_neuron: ((word >> SYNAPSE_BITS) & (MAX_NEURONS - 1)) as u16,
        dest_synapse: word & (MAX_SYNAPSES - 1),
    })
}

/// A timestamped input sample: events sorted by timestamp (stable), plus the
/// manifest fields from the `.events` header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleStream {
    pub events: Vec<SourceEvent>,
    pub input_size: u32,
    pub duration_us: u64,
    pub label: Option<u32>,
}

impl SampleStream {
    /// Builds a stream from unsorted events, sorting stably by timestamp.
    pub fn new(
        mut events: Vec<SourceEvent>,
        input_size: u32,
        duration_us: u64,
        label: Option<u32>,
    ) -> Self {
        events.sort_by_key(|e| e.timestamp_us);
        Self { events, input_size, duration_us, label }
    }
}

/// Events discretized into timesteps of `dt_us`: bin index is
/// `floor(timestamp / dt)`, one entry per event, within-bin order preserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinnedStream {
    pub dt_us: u64,
    pub bins: BTreeMap<u64, Vec<u32>>,
    pub num_timesteps: u64,
    pub input_size: u32,
    pub label: Option<u32>,
}

impl BinnedStream {
    pub fn total_events(&self) -> u64 {
        self.bins.values().map(|b| b.len() as u64).sum()
    }

    /// First bin containing events at an index strictly greater than `after`,
    /// or from 0 when `after` is None.
    pub fn next_bin(&self, after: Option<u64>) -> Option<u64> {
        let lo = match after {
            Some(t) => t + 1,
            None => 0,
        };
        self.bins.range(lo..).next().map(|(&t, _)| t)
    }
}

pub fn bin_timesteps(s: &SampleStream, dt_us: u64) -> BinnedStream {
    assert!(dt_us >= 1, "bin width must be at least 1 us");
    let mut bins: BTreeMap<u64, Vec<u32>> = BTreeMap::new();
    for e in &s.events {
        bins.entry(e.timestamp_us / dt_us).or_default().push(e.channel);
    }
    BinnedStream {
        dt_us,
        bins,
        num_timesteps: s.duration_us / dt_us + 1,
        input_size: s.input_size,
        label: s.label,
    }
}

/// Uniform event dropping with nested keep-sets.
///
/// Each event draws `r = hash(seed, index)` in [0, 1) and is kept iff
/// `r >= drop_rate`. Because the draw depends only on (seed, index), the kept
/// set at a higher rate is a subset of the kept set at any lower rate.
pub fn drop_events(s: &SampleStream, drop_rate: f64, seed: u64) -> SampleStream {
    let events = s
        .events
        .iter()
        .enumerate()
        .filter(|(idx, _)| unit_draw(seed, *idx as u64) >= drop_rate)
        .map(|(_, e)| *e)
        .collect();
    SampleStream {
        events,
        input_size: s.input_size,
        duration_us: s.duration_us,
        label: s.label,
    }
}

/// Parses a `.events` file. Events are sorted stably on load; on-disk order
/// is not required to be ascending.
pub fn load_sample(path: impl AsRef<Path>) -> Result<SampleStream, EventError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })?;
    read_sample(BufReader::new(file), &path.display().to_string())
}

pub fn read_sample(reader: impl Read, path: &str) -> Result<SampleStream, EventError> {
    let malformed = |line: usize, reason: String| EventError::Malformed {
        path: path.to_string(),
        line,
        reason,
    };
    let mut lines = BufReader::new(reader).lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| malformed(1, "empty file".into()))?;
    let header = header.map_err(|e| malformed(1, e.to_string()))?;
    if header.trim() != "# yana-events v1" {
        return Err(malformed(1, format!("expected '# yana-events v1', got '{header}'")));
    }

    let (_, manifest) = lines
        .next()
        .ok_or_else(|| malformed(2, "missing manifest line".into()))?;
    let manifest = manifest.map_err(|e| malformed(2, e.to_string()))?;
    let mut input_size: Option<u32> = None;
    let mut duration_us: Option<u64> = None;
    let mut label: Option<Option<u32>> = None;
    for tok in manifest.split_whitespace() {
        let (key, value) = tok
            .split_once('=')
            .ok_or_else(|| malformed(2, format!("expected key=value, got '{tok}'")))?;
        match key {
            "input_size" => {
                input_size =
                    Some(value.parse().map_err(|_| malformed(2, format!("bad input_size '{value}'")))?)
            }
            "duration_us" => {
                duration_us =
                    Some(value.parse().map_err(|_| malformed(2, format!("bad duration_us '{value}'")))?)
            }
            "label" => {
                label = Some(if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| malformed(2, format!("bad label '{value}'")))?)
                })
            }
            _ => return Err(malformed(2, format!("unknown manifest key '{key}'"))),
        }
    }
    let input_size = input_size.ok_or_else(|| malformed(2, "missing input_size".into()))?;
    let duration_us = duration_us.ok_or_else(|| malformed(2, "missing duration_us".into()))?;
    let label = label.ok_or_else(|| malformed(2, "missing label".into()))?;

    let mut events = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let line = line.map_err(|e| malformed(lineno, e.to_string()))?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let (ts, ch) = trimmed
            .split_once(',')
            .ok_or_else(|| malformed(lineno, format!("expected '<timestamp>,<channel>', got '{trimmed}'")))?;
        let timestamp_us: u64 = ts
            .trim()
            .parse()
            .map_err(|_| malformed(lineno, format!("bad timestamp '{ts}'")))?;
        let channel: u32 = ch
            .trim()
            .parse()
            .map_err(|_| malformed(lineno, format!("bad channel '{ch}'")))?;
        if channel >= input_size {
            return Err(malformed(lineno, format!("channel {channel} >= input_size {input_size}")));
        }
        if timestamp_us > duration_us {
            return Err(malformed(lineno, format!("timestamp {timestamp_us} > duration_us {duration_us}")));
        }
        events.push(SourceEvent { timestamp_us, channel });
    }
    Ok(SampleStream::new(events, input_size, duration_us, label))
}

/// Serializes a stream to the `.events` text format. Byte-deterministic for
/// equal streams; the inverse of [`load_sample`] on valid files.
pub fn format_sample(s: &SampleStream) -> String {
    let mut out = String::new();
    out.push_str("# yana-events v1\n");
    let label = match s.label {
        Some(l) => l.to_string(),
        None => "none".to_string(),
    };
    let _ = writeln!(out, "input_size={} duration_us={} label={}", s.input_size, s.duration_us, label);
    for e in &s.events {
        let _ = writeln!(out, "{},{}", e.timestamp_us, e.channel);
    }
    out
}

pub fn write_sample(s: &SampleStream, path: impl AsRef<Path>) -> Result<(), EventError> {
    let path = path.as_ref();
    std::fs::write(path, format_sample(s)).map_err(|source| EventError::Io {
        path: path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn packet_encode_examples() {
        let zero = DestPacket::new(0, 0, 0).unwrap();
        assert_eq!(encode_packet(zero).unwrap(), 0);
        // 2*2^27 + 1023*2^17 + 131071
        let all = DestPacket::new(2, 1023, 131071).unwrap();
        assert_eq!(encode_packet(all).unwrap(), 402_653_183);
        // 2^27 + 1
        let p = DestPacket::new(1, 0, 1).unwrap();
        assert_eq!(encode_packet(p).unwrap(), 134_217_729);
    }

    #[test]
    fn packet_decode_examples() {
        assert_eq!(decode_packet(0).unwrap(), DestPacket { dest_core: 0, dest_neuron: 0, dest_synapse: 0 });
        assert_eq!(
            decode_packet(402_653_183).unwrap(),
            DestPacket { dest_core: 2, dest_neuron: 1023, dest_synapse: 131071 }
        );
        assert!(matches!(decode_packet(1 << 29), Err(EventError::HighBitsSet(_))));
        assert!(matches!(decode_packet(u32::MAX), Err(EventError::HighBitsSet(_))));
    }

    #[test]
    fn packet_rejects_out_of_range_fields() {
        assert!(DestPacket::new(4, 0, 0).is_err());
        assert!(DestPacket::new(0, 1024, 0).is_err());
        assert!(DestPacket::new(0, 0, 131072).is_err());
    }

    #[test]
    fn packet_roundtrip_on_field_boundaries() {
        for core in [0u8, 1, 2, 3] {
            for neuron in [0u16, 1, 1022, 1023] {
                for synapse in [0u32, 1, 131070, 131071] {
                    let p = DestPacket::new(core, neuron, synapse).unwrap();
                    assert_eq!(decode_packet(encode_packet(p).unwrap()).unwrap(), p);
                }
            }
        }
    }

    #[test]
    fn load_sample_basic() {
        let text = "# yana-events v1\ninput_size=700 duration_us=800000 label=none\n1000,5\n2000,3\n";
        let s = read_sample(text.as_bytes(), "mem").unwrap();
        assert_eq!(s.events.len(), 2);
        assert_eq!(s.input_size, 700);
        assert_eq!(s.duration_us, 800_000);
        assert_eq!(s.label, None);
    }

    #[test]
    fn load_sample_empty_event_list_is_valid() {
        let text = "# yana-events v1\ninput_size=10 duration_us=1000 label=3\n";
        let s = read_sample(text.as_bytes(), "mem").unwrap();
        assert!(s.events.is_empty());
        assert_eq!(s.label, Some(3));
    }

    #[test]
    fn load_sample_errors_carry_line_numbers() {
        let text = "# yana-events v1\ninput_size=10 duration_us=1000 label=none\nabc,5\n";
        match read_sample(text.as_bytes(), "mem") {
            Err(EventError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed-line error, got {other:?}"),
        }
        let text = "# yana-events v1\ninput_size=10 duration_us=1000 label=none\n5,11\n";
        match read_sample(text.as_bytes(), "mem") {
            Err(EventError::Malformed { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("input_size"));
            }
            other => panic!("expected channel-range error, got {other:?}"),
        }
        let text = "# yana-events v1\ninput_size=10 duration_us=1000 label=none\n2000,5\n";
        match read_sample(text.as_bytes(), "mem") {
            Err(EventError::Malformed { line, reason, .. }) => {
                assert_eq!(line, 3);
                assert!(reason.contains("duration"));
            }
            other => panic!("expected timestamp-range error, got {other:?}"),
        }
    }

    #[test]
    fn load_sample_sorts_stably() {
        let text = "# yana-events v1\ninput_size=10 duration_us=1000 label=none\n500,1\n100,2\n500,3\n";
        let s = read_sample(text.as_bytes(), "mem").unwrap();
        let chans: Vec<u32> = s.events.iter().map(|e| e.channel).collect();
        assert_eq!(chans, vec![2, 1, 3]);
    }

    #[test]
    fn binning_boundaries() {
        let s = SampleStream::new(
            vec![
                SourceEvent { timestamp_us: 0, channel: 0 },
                SourceEvent { timestamp_us: 999, channel: 1 },
                SourceEvent { timestamp_us: 1000, channel: 2 },
            ],
            10,
            2000,
            None,
        );
        let b = bin_timesteps(&s, 1000);
        assert_eq!(b.bins.len(), 2);
        assert_eq!(b.bins[&0], vec![0, 1]);
        assert_eq!(b.bins[&1], vec![2]);
        assert_eq!(b.num_timesteps, 3);
    }

    #[test]
    fn binning_empty_and_single_bin() {
        let empty = SampleStream::new(vec![], 10, 4000, None);
        let b = bin_timesteps(&empty, 1000);
        assert!(b.bins.is_empty());
        assert_eq!(b.num_timesteps, 5);

        let s = SampleStream::new(
            vec![
                SourceEvent { timestamp_us: 0, channel: 0 },
                SourceEvent { timestamp_us: 4000, channel: 1 },
            ],
            10,
            4000,
            None,
        );
        let b = bin_timesteps(&s, 4001);
        assert_eq!(b.bins.len(), 1);
        assert_eq!(b.bins[&0].len(), 2);
    }

    #[test]
    fn drop_rate_zero_and_one() {
        let s = synthetic(1000, 99);
        assert_eq!(drop_events(&s, 0.0, 7), s);
        assert!(drop_events(&s, 1.0, 7).events.is_empty());
    }

    #[test]
    fn drop_rate_half_matches_binomial_statistics() {
        // N = 10000, p = 0.5: kept count within 3 sigma (sigma = 50) of 5000.
        let s = synthetic(10_000, 42);
        let kept = drop_events(&s, 0.5, 42).events.len();
        assert!((4850..=5150).contains(&kept), "kept {kept} outside 5000 +/- 150");
    }

    fn synthetic(n: usize, seed: u64) -> SampleStream {
        let mut rng = crate::rng::Rng64::new(seed);
        let events = (0..n)
            .map(|_| SourceEvent {
                timestamp_us: rng.below(800_000),
                channel: rng.below(700) as u32,
            })
            .collect();
        SampleStream::new(events, 700, 800_000, Some(1))
    }

    proptest! {
        #[test]
        fn packet_roundtrip_random(core in 0u8..4, neuron in 0u16..1024, synapse in 0u32..131072) {
            let p = DestPacket::new(core, neuron, synapse).unwrap();
            prop_assert_eq!(decode_packet(encode_packet(p).unwrap()).unwrap(), p);
        }

        #[test]
        fn binning_conserves_event_count(n in 0usize..400, dt in 1u64..5000, seed in any::<u64>()) {
            let s = synthetic(n, seed);
            let b = bin_timesteps(&s, dt);
            prop_assert_eq!(b.total_events(), n as u64);
        }

        #[test]
        fn dropping_is_nested(p1 in 0.0f64..1.0, p2 in 0.0f64..1.0, seed in any::<u64>()) {
            let (lo, hi) = if p1 <= p2 { (p1, p2) } else { (p2, p1) };
            let s = synthetic(300, seed);
            let kept_hi = drop_events(&s, hi, seed);
            let kept_lo = drop_events(&s, lo, seed);
            prop_assert!(kept_hi.events.len() <= kept_lo.events.len());
            // Subset: every event kept at the higher rate survives the lower.
            let mut it = kept_lo.events.iter();
            for e in &kept_hi.events {
                prop_assert!(it.any(|x| x == e), "kept set not nested");
            }
        }

        #[test]
        fn sample_text_roundtrip(n in 0usize..50, seed in any::<u64>(), label in proptest::option::of(0u32..20)) {
            let mut s = synthetic(n, seed);
            s.label = label;
            let text = format_sample(&s);
            let back = read_sample(text.as_bytes(), "mem").unwrap();
            prop_assert_eq!(&back, &s);
            prop_assert_eq!(format_sample(&back), text);
        }
    }
}
