//! Integer arithmetic kernel shared by the datapath and the functional reference.
//!
//! Everything here models hardware registers: 32-bit values wrap modulo 2^32,
//! 8-bit outputs are produced by shift, round-half-up and clip.

use crate::error::{Error, Result};

/// Per-layer right-shift amount `S`, giving a power-of-two scale `2^-S`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Shift(u8);

impl Shift {
    pub const MAX: u8 = 31;

    pub fn new(s: u32) -> Result<Self> {
        if s > Self::MAX as u32 {
            return Err(Error::Model(format!("shift {s} outside 0..={}", Self::MAX)));
        }
        Ok(Shift(s as u8))
    }

    pub fn get(self) -> u32 {
        self.0 as u32
    }
}

/// Multiply-accumulate with two's-complement wraparound.
#[inline]
pub fn mac(a: i8, w: i8, acc: i32) -> i32 {
    acc.wrapping_add((a as i32).wrapping_mul(w as i32))
}

#[inline]
pub fn clip_i8(x: i32) -> i8 {
    x.clamp(i8::MIN as i32, i8::MAX as i32) as i8
}

/// Rescale a 32-bit accumulator to int8: add `2^(S-1)`, arithmetic shift
/// right by `S`, clip to `[-128, 127]`.
///
/// The rounding offset is added in wrapping 32-bit arithmetic, as a single
/// adder in front of the shifter would.
#[inline]
pub fn requantize(acc: i32, shift: Shift) -> i8 {
    let s = shift.get();
    if s == 0 {
        return clip_i8(acc);
    }
    let rounded = acc.wrapping_add(1i32 << (s - 1)) >> s;
    clip_i8(rounded)
}

/// 256-entry lookup table indexed by the unsigned reinterpretation of an int8.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Lut {
    table: [i8; 256],
}

impl Lut {
    pub fn from_table(table: [i8; 256]) -> Self {
        Lut { table }
    }

    pub fn from_slice(values: &[i8]) -> Result<Self> {
        let table: [i8; 256] = values
            .try_into()
            .map_err(|_| Error::shape(format!("LUT needs 256 entries, got {}", values.len())))?;
        Ok(Lut { table })
    }

    /// Builds a table by evaluating `f` on every int8 input.
    pub fn from_fn(f: impl Fn(i8) -> i8) -> Self {
        let mut table = [0i8; 256];
        for x in i8::MIN..=i8::MAX {
            table[x as u8 as usize] = f(x);
        }
        Lut { table }
    }

    pub fn identity() -> Self {
        Self::from_fn(|x| x)
    }

    pub fn relu() -> Self {
        make_relu_lut()
    }

    pub fn table(&self) -> &[i8; 256] {
        &self.table
    }

    #[inline]
    pub fn apply(&self, x: i8) -> i8 {
        self.table[x as u8 as usize]
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

impl std::fmt::Debug for Lut {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.is_identity() {
            f.write_str("Lut(identity)")
        } else if *self == Self::relu() {
            f.write_str("Lut(relu)")
        } else {
            f.debug_struct("Lut").finish_non_exhaustive()
        }
    }
}

#[inline]
pub fn nlf_apply(lut: &Lut, x: i8) -> i8 {
    lut.apply(x)
}

pub fn make_relu_lut() -> Lut {
    Lut::from_fn(|x| x.max(0))
}

#[inline]
pub fn max2(a: i8, b: i8) -> i8 {
    a.max(b)
}
