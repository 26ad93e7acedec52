//! Bit-exact fixed-point arithmetic and the event-driven LIF/LI update kernels.
//!
//! All neuron state lives in signed two's-complement fixed point. The leak
//! factor `(1 - 1/tau)^n` is never computed at runtime; it is read from a
//! precalculated lookup table indexed by the number of elapsed timesteps,
//! which is what makes deferred (event-driven) neuron updates cheap. The
//! deferred path *defines* correctness: applying `n` timesteps of leak in one
//! LUT lookup is the reference behavior, not an approximation of per-step
//! iteration.
//!
//! Rounding conventions (fixed here so the cycle simulator can match the
//! golden simulator bit for bit):
//! - quantization from reals: round to nearest, ties away from zero, clamp;
//! - multiply-then-shift (leak and input terms): arithmetic floor toward
//!   negative infinity;
//! - additions: saturating at the format bounds.

use thiserror::Error;

/// Default weight format: signed Q7.8 (16 bits).
pub const WEIGHT_FORMAT: FxFormat = FxFormat::q(7, 8);
/// Default membrane/current/threshold format: signed Q23.8 (32 bits).
pub const MEMBRANE_FORMAT: FxFormat = FxFormat::q(23, 8);
/// Default fraction bits for leak LUT entries (Q0.16).
pub const DEFAULT_LUT_FRAC: u32 = 16;
/// Default leak LUT depth.
pub const DEFAULT_N_MAX: u32 = 64;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("tau_mem must be > 1 (got {0}), leak factor would leave (0, 1)")]
    TauOutOfRange(f64),
    #[error("tau_mem {tau} too large for {lut_frac} LUT fraction bits")]
    TauUnrepresentable { tau: f64, lut_frac: u32 },
    #[error("n_max must be >= 1")]
    EmptyLut,
    #[error("lut_frac must be in 1..=31 (got {0})")]
    LutFracOutOfRange(u32),
}

/// Signed/unsigned fixed-point format: `total_bits` wide with `frac_bits`
/// fraction bits. Real value of a raw pattern is `raw / 2^frac_bits`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FxFormat {
    pub total_bits: u32,
    pub frac_bits: u32,
    pub signed: bool,
}

impl FxFormat {
    pub const fn new(total_bits: u32, frac_bits: u32, signed: bool) -> Self {
        assert!(total_bits >= 1 && total_bits <= 64);
        assert!(frac_bits < total_bits);
        Self { total_bits, frac_bits, signed }
    }

    /// Signed Qi.f shorthand: `int_bits + frac_bits + 1` sign bit.
    pub const fn q(int_bits: u32, frac_bits: u32) -> Self {
        Self::new(int_bits + frac_bits + 1, frac_bits, true)
    }

    /// Integer bits excluding the sign bit (the `i` in Qi.f).
    pub const fn int_bits(&self) -> u32 {
        if self.signed {
            self.total_bits - self.frac_bits - 1
        } else {
            self.total_bits - self.frac_bits
        }
    }

    pub const fn max_raw(&self) -> i64 {
        if self.signed {
            ((1i128 << (self.total_bits - 1)) - 1) as i64
        } else {
            ((1i128 << self.total_bits) - 1) as i64
        }
    }

    pub const fn min_raw(&self) -> i64 {
        if self.signed {
            -(1i64 << (self.total_bits - 1))
        } else {
            0
        }
    }

    pub fn scale(&self) -> f64 {
        (1u64 << self.frac_bits) as f64
    }

    pub const fn contains(&self, raw: i64) -> bool {
        raw >= self.min_raw() && raw <= self.max_raw()
    }
}

/// A fixed-point scalar: raw two's-complement pattern plus its format.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FxValue {
    pub raw: i64,
    pub format: FxFormat,
}

impl FxValue {
    /// Wraps a raw pattern. The pattern must already fit the format.
    pub fn new(raw: i64, format: FxFormat) -> Self {
        debug_assert!(format.contains(raw), "raw {raw} out of range for {format:?}");
        Self { raw, format }
    }

    pub const fn zero(format: FxFormat) -> Self {
        Self { raw: 0, format }
    }

    pub fn to_f64(self) -> f64 {
        self.raw as f64 / self.format.scale()
    }

    /// Saturating addition; both operands must share a format.
    pub fn sat_add(self, other: FxValue) -> FxValue {
        assert_eq!(self.format, other.format, "sat_add across formats");
        FxValue {
            raw: sat_add_raw(self.raw, other.raw, self.format),
            format: self.format,
        }
    }

    /// Re-scales the raw pattern into another format: fraction bits are
    /// shifted (floor on narrowing) and the result clamped.
    pub fn convert(self, to: FxFormat) -> FxValue {
        let shifted = if to.frac_bits >= self.format.frac_bits {
            let sh = to.frac_bits - self.format.frac_bits;
            (self.raw as i128) << sh
        } else {
            let sh = self.format.frac_bits - to.frac_bits;
            (self.raw as i128) >> sh
        };
        FxValue { raw: clamp_raw(shifted, to), format: to }
    }
}

/// Round-to-nearest quantization (ties away from zero), clamped to the
/// representable range.
pub fn quantize(value: f64, format: FxFormat) -> FxValue {
    let scaled = value * format.scale();
    // f64::round ties away from zero, which is the hardware convention here.
    let rounded = scaled.round();
    let raw = if rounded.is_nan() {
        0
    } else if rounded >= format.max_raw() as f64 {
        format.max_raw()
    } else if rounded <= format.min_raw() as f64 {
        format.min_raw()
    } else {
        rounded as i64
    };
    FxValue { raw, format }
}

pub(crate) fn sat_add_raw(a: i64, b: i64, format: FxFormat) -> i64 {
    clamp_raw(a as i128 + b as i128, format)
}

pub(crate) fn clamp_raw(v: i128, format: FxFormat) -> i64 {
    let max = format.max_raw() as i128;
    let min = format.min_raw() as i128;
    if v > max {
        format.max_raw()
    } else if v < min {
        format.min_raw()
    } else {
        v as i64
    }
}

/// `floor(a * entry / 2^frac)` with floor toward negative infinity, the
/// multiply-then-truncate the synapse and neuron datapaths use.
#[inline]
pub(crate) fn mul_frac_floor(a: i64, entry: u32, frac: u32) -> i64 {
    ((a as i128 * entry as i128) >> frac) as i64
}

/// Precalculated leak factors: `entries[k]` quantizes `(1 - 1/tau)^(k+1)`
/// in Q0.lut_frac, and `inv_tau` quantizes `1/tau` for the input-current
/// term. Beyond `n_max` elapsed timesteps the leaked membrane is defined
/// as exactly zero.
#[derive(Debug, Clone)]
pub struct LeakLut {
    /// Construction-time constant, kept for reporting; not part of equality.
    pub tau_mem: f64,
    pub lut_frac: u32,
    pub entries: Vec<u32>,
    pub inv_tau: u32,
}

impl PartialEq for LeakLut {
    /// Equality is on quantized content only; `tau_mem` is provenance and is
    /// reconstructed approximately when a LUT is parsed back from a file.
    fn eq(&self, other: &Self) -> bool {
        self.lut_frac == other.lut_frac
            && self.entries == other.entries
            && self.inv_tau == other.inv_tau
    }
}

impl LeakLut {
    pub fn n_max(&self) -> u32 {
        self.entries.len() as u32
    }

    /// Rebuilds a LUT wrapper from already-quantized parts (memcfg loading).
    pub fn from_parts(entries: Vec<u32>, inv_tau: u32, lut_frac: u32) -> Self {
        let tau_mem = if inv_tau == 0 {
            f64::INFINITY
        } else {
            (1u64 << lut_frac) as f64 / inv_tau as f64
        };
        Self { tau_mem, lut_frac, entries, inv_tau }
    }
}

/// Builds the leak LUT for a membrane time constant.
///
/// `entries[k] = round((1 - 1/tau)^(k+1) * 2^lut_frac)` and
/// `inv_tau = round(2^lut_frac / tau)`, both rounding ties away from zero.
/// The power is evaluated by repeated multiplication in f64, which carries
/// ~2^-52 relative error against the 2^-lut_frac quantization step.
pub fn build_leak_lut(tau_mem: f64, n_max: u32, lut_frac: u32) -> Result<LeakLut, NumericsError> {
    if tau_mem.is_nan() || tau_mem <= 1.0 || !tau_mem.is_finite() {
        return Err(NumericsError::TauOutOfRange(tau_mem));
    }
    if n_max == 0 {
        return Err(NumericsError::EmptyLut);
    }
    if lut_frac == 0 || lut_frac > 31 {
        return Err(NumericsError::LutFracOutOfRange(lut_frac));
    }
    let scale = (1u64 << lut_frac) as f64;
    let factor = 1.0 - 1.0 / tau_mem;
    let mut entries = Vec::with_capacity(n_max as usize);
    let mut acc = 1.0f64;
    for _ in 0..n_max {
        acc *= factor;
        let e = (acc * scale).round();
        if e >= scale {
            // (1 - 1/tau) rounds up to 1.0 in Q0.lut_frac: unrepresentable.
            return Err(NumericsError::TauUnrepresentable { tau: tau_mem, lut_frac });
        }
        entries.push(e as u32);
    }
    let inv_tau = (scale / tau_mem).round() as u32;
    Ok(LeakLut { tau_mem, lut_frac, entries, inv_tau })
}

/// Outcome of one LIF update: new membrane and whether a spike fired.
/// A spike always resets the membrane to exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NeuronUpdateResult {
    pub new_u: FxValue,
    pub spiked: bool,
}

/// One deferred LIF update after `n >= 1` elapsed timesteps.
///
/// The leaked membrane term is `floor(u * entries[n-1] / 2^lut_frac)`, or
/// exactly zero when `n > n_max`; the input term is
/// `floor(i * inv_tau / 2^lut_frac)`; the two are combined with a saturating
/// add. A spike fires on strict threshold crossing (`u~ > u_th`) and resets
/// the membrane to zero; equality retains the membrane.
pub fn lif_update(
    u: FxValue,
    n: u64,
    i: FxValue,
    lut: &LeakLut,
    u_th: FxValue,
) -> NeuronUpdateResult {
    let tilde = integrate(u, n, i, lut);
    if tilde.raw > u_th.raw {
        NeuronUpdateResult { new_u: FxValue::zero(u.format), spiked: true }
    } else {
        NeuronUpdateResult { new_u: tilde, spiked: false }
    }
}

/// Leaky-integrate update: identical arithmetic to [`lif_update`] but with no
/// threshold, no spike and no reset.
pub fn li_update(u: FxValue, n: u64, i: FxValue, lut: &LeakLut) -> FxValue {
    integrate(u, n, i, lut)
}

fn integrate(u: FxValue, n: u64, i: FxValue, lut: &LeakLut) -> FxValue {
    assert!(n >= 1, "neuron updated twice in one timestep (n = 0)");
    assert_eq!(u.format, i.format, "membrane/current format mismatch");
    let leaked = if n > lut.n_max() as u64 {
        0
    } else {
        mul_frac_floor(u.raw, lut.entries[(n - 1) as usize], lut.lut_frac)
    };
    let input = mul_frac_floor(i.raw, lut.inv_tau, lut.lut_frac);
    FxValue { raw: sat_add_raw(leaked, input, u.format), format: u.format }
}
