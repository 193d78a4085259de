//! Register-level model of the weight-stationary systolic-array pipeline.
//!
//! Every flip-flop group of the accelerator is an explicit, addressable
//! array. [`PipelineState::step`] applies one synchronous clock edge: all
//! next-state values are computed from the pre-edge register contents.
//!
//! Register groups for an `R x C` array:
//!
//! | group              | count            | width |
//! |--------------------|------------------|-------|
//! | `w-reg`            | `R*C`            | 8     |
//! | `sa-ffchain-h-reg` | `R*(R+1)/2`      | 8     |
//! | `sa-h-reg`         | `R*(C-1)`        | 8     |
//! | `sa-v-reg`         | `(R-1)*C`        | 32    |
//! | `sa-ffchain-v-reg` | `C*(C+1)/2`      | 32    |
//! | `accum-reg`        | `C`              | 32    |
//! | `round-reg`        | `C`              | 8     |
//! | `nlf-reg`          | `C`              | 8     |
//! | `pool-reg`         | `C`              | 8     |
//!
//! Input row `r` passes through `r+1` skew registers before MAC column 0;
//! MAC row `R-1` of column `c` feeds a deskew chain of `C-c` registers that
//! ends at the column accumulator. A value injected at cycle `t` therefore
//! reaches the accumulators at cycle `t + R + C` for every column.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::{mac, requantize, Lut, Shift};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SaConfig {
    pub rows: usize,
    pub cols: usize,
}

impl SaConfig {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!("array size {rows}x{cols} must be at least 1x1")));
        }
        Ok(SaConfig { rows, cols })
    }

    pub fn square(n: usize) -> Result<Self> {
        Self::new(n, n)
    }
}

impl fmt::Display for SaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for SaConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Config(format!("array size '{s}' is not of the form RxC")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("bad array dimension '{v}' in '{s}'")))
        };
        SaConfig::new(parse(r)?, parse(c)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegisterGroup {
    #[serde(rename = "w-reg")]
    WReg,
    #[serde(rename = "sa-ffchain-h-reg")]
    SaFfchainH,
    #[serde(rename = "sa-h-reg")]
    SaHReg,
    #[serde(rename = "sa-v-reg")]
    SaVReg,
    #[serde(rename = "sa-ffchain-v-reg")]
    SaFfchainV,
    #[serde(rename = "accum-reg")]
    AccumReg,
    #[serde(rename = "round-reg")]
    RoundReg,
    #[serde(rename = "nlf-reg")]
    NlfReg,
    #[serde(rename = "pool-reg")]
    PoolReg,
}

/// Four-way rollup used when discussing results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum GroupClass {
    #[serde(rename = "8bit-sa-regs")]
    Sa8,
    #[serde(rename = "32bit-sa-regs")]
    Sa32,
    #[serde(rename = "accumulator-regs")]
    Accumulator,
    #[serde(rename = "post-processing-regs")]
    PostProcessing,
}

impl GroupClass {
    pub const ALL: [GroupClass; 4] = [
        GroupClass::Sa8,
        GroupClass::Sa32,
        GroupClass::Accumulator,
        GroupClass::PostProcessing,
    ];

    pub fn name(self) -> &'static str {
        match self {
            GroupClass::Sa8 => "8bit-sa-regs",
            GroupClass::Sa32 => "32bit-sa-regs",
            GroupClass::Accumulator => "accumulator-regs",
            GroupClass::PostProcessing => "post-processing-regs",
        }
    }

    pub fn members(self) -> impl Iterator<Item = RegisterGroup> {
        RegisterGroup::ALL.into_iter().filter(move |g| g.class() == self)
    }
}

impl RegisterGroup {
    pub const ALL: [RegisterGroup; 9] = [
        RegisterGroup::WReg,
        RegisterGroup::SaFfchainH,
        RegisterGroup::SaHReg,
        RegisterGroup::SaVReg,
        RegisterGroup::SaFfchainV,
        RegisterGroup::AccumReg,
        RegisterGroup::RoundReg,
        RegisterGroup::NlfReg,
        RegisterGroup::PoolReg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegisterGroup::WReg => "w-reg",
            RegisterGroup::SaFfchainH => "sa-ffchain-h-reg",
            RegisterGroup::SaHReg => "sa-h-reg",
            RegisterGroup::SaVReg => "sa-v-reg",
            RegisterGroup::SaFfchainV => "sa-ffchain-v-reg",
            RegisterGroup::AccumReg => "accum-reg",
            RegisterGroup::RoundReg => "round-reg",
            RegisterGroup::NlfReg => "nlf-reg",
            RegisterGroup::PoolReg => "pool-reg",
        }
    }

    pub fn width(self) -> u32 {
        match self {
            RegisterGroup::SaVReg | RegisterGroup::SaFfchainV | RegisterGroup::AccumReg => 32,
            _ => 8,
        }
    }

    pub fn count(self, sa: SaConfig) -> usize {
        let (r, c) = (sa.rows, sa.cols);
        match self {
            RegisterGroup::WReg => r * c,
            RegisterGroup::SaFfchainH => r * (r + 1) / 2,
            RegisterGroup::SaHReg => r * (c - 1),
            RegisterGroup::SaVReg => (r - 1) * c,
            RegisterGroup::SaFfchainV => c * (c + 1) / 2,
            RegisterGroup::AccumReg
            | RegisterGroup::RoundReg
            | RegisterGroup::NlfReg
            | RegisterGroup::PoolReg => c,
        }
    }

    /// Flip-flop bits of this group in an `sa` array.
    pub fn bits(self, sa: SaConfig) -> usize {
        self.count(sa) * self.width() as usize
    }

    pub fn class(self) -> GroupClass {
        match self {
            RegisterGroup::WReg | RegisterGroup::SaFfchainH | RegisterGroup::SaHReg => {
                GroupClass::Sa8
            }
            RegisterGroup::SaVReg | RegisterGroup::SaFfchainV => GroupClass::Sa32,
            RegisterGroup::AccumReg => GroupClass::Accumulator,
            RegisterGroup::RoundReg | RegisterGroup::NlfReg | RegisterGroup::PoolReg => {
                GroupClass::PostProcessing
            }
        }
    }
}

impl fmt::Display for RegisterGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegisterGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegisterGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown register group '{s}'")))
    }
}

/// Accumulator control for one edge, applied to every column.
#[derive(Debug, Clone, Copy, Default)]
pub enum AccumCtrl<'a> {
    #[default]
    Hold,
    /// Load one bias per column.
    LoadBias(&'a [i32]),
    /// Add the deskewed column sums.
    Accumulate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PoolStrobe {
    #[default]
    Idle,
    /// Start a new window: `pool := nlf`.
    Restart,
    /// `pool := max(pool, nlf)`.
    Max,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct PostCtrl<'a> {
    pub round: Option<Shift>,
    pub nlf: Option<&'a Lut>,
    pub pool: PoolStrobe,
}

/// Everything driven into the pipeline for a single clock edge.
#[derive(Debug, Clone, Copy, Default)]
pub struct StepInput<'a> {
    /// New `R x C` weight tile, row-major; latched at this edge.
    pub weights: Option<&'a [i8]>,
    /// One activation per array row; `None` drives zeros.
    pub row_inputs: Option<&'a [i8]>,
    pub accum: AccumCtrl<'a>,
    pub post: PostCtrl<'a>,
}

/// Which register the output mux forwards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputSelect {
    Bypass,
    Pool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PipelineState {
    sa: SaConfig,
    w_reg: Vec<i8>,
    /// Row `r` occupies `[r(r+1)/2, r(r+1)/2 + r]`; position 0 is the entry.
    ffchain_h: Vec<i8>,
    sa_h: Vec<i8>,
    sa_v: Vec<i32>,
    /// Column `c` starts at `c*C - c(c-1)/2` with `C-c` entries; position 0
    /// is fed by the last MAC row, the final one by the accumulator side.
    ffchain_v: Vec<i32>,
    accum: Vec<i32>,
    round: Vec<i8>,
    nlf: Vec<i8>,
    pool: Vec<i8>,
    cycle: u64,
    nlf_valid: bool,
    pool_valid: bool,
}

#[inline]
fn h_chain_start(r: usize) -> usize {
    r * (r + 1) / 2
}

#[inline]
fn v_chain_start(c: usize, cols: usize) -> usize {
    c * cols - c * c.saturating_sub(1) / 2
}

impl PipelineState {
    pub fn new(sa: SaConfig) -> Self {
        let n = |g: RegisterGroup| g.count(sa);
        PipelineState {
            sa,
            w_reg: vec![0; n(RegisterGroup::WReg)],
            ffchain_h: vec![0; n(RegisterGroup::SaFfchainH)],
            sa_h: vec![0; n(RegisterGroup::SaHReg)],
            sa_v: vec![0; n(RegisterGroup::SaVReg)],
            ffchain_v: vec![0; n(RegisterGroup::SaFfchainV)],
            accum: vec![0; sa.cols],
            round: vec![0; sa.cols],
            nlf: vec![0; sa.cols],
            pool: vec![0; sa.cols],
            cycle: 0,
            nlf_valid: false,
            pool_valid: false,
        }
    }

    pub fn config(&self) -> SaConfig {
        self.sa
    }

    /// Number of clock edges applied so far.
    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    pub fn weights(&self) -> &[i8] {
        &self.w_reg
    }

    pub fn accumulators(&self) -> &[i32] {
        &self.accum
    }

    pub fn round_regs(&self) -> &[i8] {
        &self.round
    }

    pub fn nlf_regs(&self) -> &[i8] {
        &self.nlf
    }

    pub fn pool_regs(&self) -> &[i8] {
        &self.pool
    }

    /// One clock edge that only latches a new weight tile.
    pub fn load_weights(&mut self, tile: &[i8]) -> Result<()> {
        if tile.len() != self.w_reg.len() {
            return Err(Error::shape(format!(
                "weight tile of {} values for a {} array",
                tile.len(),
                self.sa
            )));
        }
        self.step(&StepInput {
            weights: Some(tile),
            ..Default::default()
        });
        Ok(())
    }

    /// Applies one synchronous clock edge.
    ///
    /// Stages are evaluated back to front so each register is read before it
    /// is overwritten; the result equals a two-phase next-state update.
    pub fn step(&mut self, input: &StepInput<'_>) {
        let (rows, cols) = (self.sa.rows, self.sa.cols);

        match input.post.pool {
            PoolStrobe::Idle => {}
            PoolStrobe::Restart => {
                self.pool.copy_from_slice(&self.nlf);
                self.pool_valid = true;
            }
            PoolStrobe::Max => {
                for (p, &n) in self.pool.iter_mut().zip(&self.nlf) {
                    *p = (*p).max(n);
                }
                self.pool_valid = true;
            }
        }
        if let Some(lut) = input.post.nlf {
            for (n, &r) in self.nlf.iter_mut().zip(&self.round) {
                *n = lut.apply(r);
            }
            self.nlf_valid = true;
        }
        if let Some(shift) = input.post.round {
            for (r, &a) in self.round.iter_mut().zip(&self.accum) {
                *r = requantize(a, shift);
            }
        }

        match input.accum {
            AccumCtrl::Hold => {}
            AccumCtrl::LoadBias(bias) => {
                assert_eq!(bias.len(), cols, "bias vector width");
                self.accum.copy_from_slice(bias);
            }
            AccumCtrl::Accumulate => {
                for c in 0..cols {
                    let tail = v_chain_start(c, cols) + (cols - c - 1);
                    self.accum[c] = self.accum[c].wrapping_add(self.ffchain_v[tail]);
                }
            }
        }

        for c in 0..cols {
            let start = v_chain_start(c, cols);
            self.ffchain_v
                .copy_within(start..start + (cols - c - 1), start + 1);
        }

        for r in (0..rows).rev() {
            let a_col0 = self.ffchain_h[h_chain_start(r) + r];
            for c in (0..cols).rev() {
                let a = if c == 0 {
                    a_col0
                } else {
                    self.sa_h[r * (cols - 1) + c - 1]
                };
                let psum = if r == 0 { 0 } else { self.sa_v[(r - 1) * cols + c] };
                let u = mac(a, self.w_reg[r * cols + c], psum);
                if c + 1 < cols {
                    self.sa_h[r * (cols - 1) + c] = a;
                }
                if r + 1 < rows {
                    self.sa_v[r * cols + c] = u;
                } else {
                    self.ffchain_v[v_chain_start(c, cols)] = u;
                }
            }
        }

        if let Some(x) = input.row_inputs {
            assert_eq!(x.len(), rows, "row input width");
        }
        for r in 0..rows {
            let start = h_chain_start(r);
            self.ffchain_h.copy_within(start..start + r, start + 1);
            self.ffchain_h[start] = input.row_inputs.map_or(0, |x| x[r]);
        }

        if let Some(tile) = input.weights {
            assert_eq!(tile.len(), self.w_reg.len(), "weight tile size");
            self.w_reg.copy_from_slice(tile);
        }

        self.cycle += 1;
    }

    /// Values at the output mux for the row just completed.
    pub fn drain(&self, select: OutputSelect) -> Result<&[i8]> {
        match select {
            OutputSelect::Bypass if self.nlf_valid => Ok(&self.nlf),
            OutputSelect::Pool if self.pool_valid => Ok(&self.pool),
            OutputSelect::Bypass => Err(Error::IncompletePipeline("nlf stage not yet strobed")),
            OutputSelect::Pool => Err(Error::IncompletePipeline("pool stage not yet strobed")),
        }
    }

    fn check_instance(&self, group: RegisterGroup, instance: usize) -> Result<()> {
        let count = group.count(self.sa);
        if instance >= count {
            return Err(Error::AddressOutOfRange(format!(
                "{group}[{instance}] but a {} array has {count}",
                self.sa
            )));
        }
        Ok(())
    }

    /// Raw register contents, zero-extended to 32 bits.
    pub fn read(&self, group: RegisterGroup, instance: usize) -> Result<u32> {
        self.check_instance(group, instance)?;
        let i = instance;
        Ok(match group {
            RegisterGroup::WReg => self.w_reg[i] as u8 as u32,
            RegisterGroup::SaFfchainH => self.ffchain_h[i] as u8 as u32,
            RegisterGroup::SaHReg => self.sa_h[i] as u8 as u32,
            RegisterGroup::SaVReg => self.sa_v[i] as u32,
            RegisterGroup::SaFfchainV => self.ffchain_v[i] as u32,
            RegisterGroup::AccumReg => self.accum[i] as u32,
            RegisterGroup::RoundReg => self.round[i] as u8 as u32,
            RegisterGroup::NlfReg => self.nlf[i] as u8 as u32,
            RegisterGroup::PoolReg => self.pool[i] as u8 as u32,
        })
    }

    /// XOR one bit of one register. The value persists until the register's
    /// next ordinary write.
    pub fn flip_bit(&mut self, group: RegisterGroup, instance: usize, bit: u32) -> Result<()> {
        self.check_instance(group, instance)?;
        if bit >= group.width() {
            return Err(Error::AddressOutOfRange(format!(
                "bit {bit} of {}-bit {group}",
                group.width()
            )));
        }
        let i = instance;
        let m8 = (1u8 << (bit & 7)) as i8;
        let m32 = (1u32 << bit) as i32;
        match group {
            RegisterGroup::WReg => self.w_reg[i] ^= m8,
            RegisterGroup::SaFfchainH => self.ffchain_h[i] ^= m8,
            RegisterGroup::SaHReg => self.sa_h[i] ^= m8,
            RegisterGroup::SaVReg => self.sa_v[i] ^= m32,
            RegisterGroup::SaFfchainV => self.ffchain_v[i] ^= m32,
            RegisterGroup::AccumReg => self.accum[i] ^= m32,
            RegisterGroup::RoundReg => self.round[i] ^= m8,
            RegisterGroup::NlfReg => self.nlf[i] ^= m8,
            RegisterGroup::PoolReg => self.pool[i] ^= m8,
        }
        Ok(())
    }

    /// Register contents only (cycle counter and valid flags excluded).
    pub fn same_registers(&self, other: &PipelineState) -> bool {
        self.sa == other.sa
            && self.w_reg == other.w_reg
            && self.ffchain_h == other.ffchain_h
            && self.sa_h == other.sa_h
            && self.sa_v == other.sa_v
            && self.ffchain_v == other.ffchain_v
            && self.accum == other.accum
            && self.round == other.round
            && self.nlf == other.nlf
            && self.pool == other.pool
    }

    /// Visits every register as `(group, instance, raw value)` in canonical
    /// order.
    pub fn for_each_register(&self, mut f: impl FnMut(RegisterGroup, usize, u32)) {
        for group in RegisterGroup::ALL {
            for i in 0..group.count(self.sa) {
                f(group, i, self.read(group, i).expect("in range"));
            }
        }
    }

    /// One trace line: `<cycle> <group>[<i>]=<hex> ...`.
    pub fn trace_line(&self) -> String {
        let mut line = self.cycle.to_string();
        self.for_each_register(|group, i, v| {
            let digits = group.width() as usize / 4;
            let _ = write!(line, " {group}[{i}]=0x{v:0digits$x}");
        });
        line
    }
}
