//! Single-bit upset injection into pipeline flip-flops and outcome
//! classification against the fault-free run.
//!
//! Fault model: after the clock edge of cycle `t` updates every register,
//! one bit of one register is inverted. Downstream logic sees the corrupted
//! value from cycle `t+1` on; it disappears at the register's next ordinary
//! write.

use serde::{Deserialize, Serialize};

use crate::datapath::{PipelineState, RegisterGroup, SaConfig};
use crate::error::{Error, Result};
use crate::model::ModelSpec;
use crate::scheduler::{compile, CycleProgram, Machine};
use crate::tensor::TensorI8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RegisterAddress {
    pub group: RegisterGroup,
    pub instance: usize,
    pub bit: u32,
}

impl RegisterAddress {
    pub fn new(group: RegisterGroup, instance: usize, bit: u32) -> Self {
        RegisterAddress {
            group,
            instance,
            bit,
        }
    }

    pub fn validate(&self, sa: SaConfig) -> Result<()> {
        let count = self.group.count(sa);
        if self.instance >= count || self.bit >= self.group.width() {
            return Err(Error::AddressOutOfRange(format!(
                "{}[{}] bit {} (array {sa} has {count} x {}-bit)",
                self.group,
                self.instance,
                self.bit,
                self.group.width()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub address: RegisterAddress,
    pub cycle: u64,
}

/// Total flip-flop bits of an array.
pub fn ff_count(sa: SaConfig) -> usize {
    RegisterGroup::ALL.iter().map(|g| g.bits(sa)).sum()
}

/// Every flip-flop bit, ordered by group (pipeline order), then instance
/// (row-major, then chain position), then bit (LSB first).
pub fn enumerate_ffs(sa: SaConfig) -> Vec<RegisterAddress> {
    let mut out = Vec::with_capacity(ff_count(sa));
    for group in RegisterGroup::ALL {
        for instance in 0..group.count(sa) {
            for bit in 0..group.width() {
                out.push(RegisterAddress::new(group, instance, bit));
            }
        }
    }
    out
}

/// Apply `fault` to a state that has just completed the edge of
/// `fault.cycle`.
pub fn inject(state: &mut PipelineState, fault: &FaultSpec) -> Result<()> {
    fault.address.validate(state.config())?;
    if state.cycle() != fault.cycle + 1 {
        return Err(Error::InjectionTiming {
            fault_cycle: fault.cycle,
            state_cycle: state.cycle(),
        });
    }
    let a = fault.address;
    state.flip_bit(a.group, a.instance, a.bit)
}

fn check_fault(program: &CycleProgram, fault: &FaultSpec) -> Result<()> {
    fault.address.validate(program.sa())?;
    if fault.cycle >= program.total_cycles() {
        return Err(Error::FaultCycle {
            cycle: fault.cycle,
            total_cycles: program.total_cycles(),
        });
    }
    Ok(())
}

/// Full run of a compiled program with one injection.
pub fn run_program_faulty(program: &CycleProgram, image: &[i8], fault: &FaultSpec) -> Result<Vec<i8>> {
    check_fault(program, fault)?;
    let mut machine = Machine::new(program, image)?;
    machine.run_until(fault.cycle + 1)?;
    inject(machine.state_mut(), fault)?;
    machine.run_to_end()?;
    Ok(machine.logits().to_vec())
}

pub fn run_faulty(model: &ModelSpec, image: &TensorI8, sa: SaConfig, fault: &FaultSpec) -> Result<Vec<i8>> {
    let program = compile(model, sa)?;
    run_program_faulty(&program, image.data(), fault)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum OutcomeKind {
    #[serde(rename = "masked")]
    Masked,
    #[serde(rename = "noncrit")]
    NonCritical,
    #[serde(rename = "crit")]
    Critical,
}

impl OutcomeKind {
    pub fn name(self) -> &'static str {
        match self {
            OutcomeKind::Masked => "masked",
            OutcomeKind::NonCritical => "noncrit",
            OutcomeKind::Critical => "crit",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Outcome {
    pub kind: OutcomeKind,
    /// Largest absolute per-logit difference from the golden output.
    pub logit_delta: i32,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[i8]) -> Option<usize> {
    let mut best: Option<(usize, i8)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

pub fn classify(golden: &[i8], faulty: &[i8]) -> Result<Outcome> {
    if golden.len() != faulty.len() {
        return Err(Error::shape(format!(
            "golden has {} logits, faulty {}",
            golden.len(),
            faulty.len()
        )));
    }
    let logit_delta = golden
        .iter()
        .zip(faulty)
        .map(|(&g, &f)| (g as i32 - f as i32).abs())
        .max()
        .unwrap_or(0);
    let kind = if logit_delta == 0 {
        OutcomeKind::Masked
    } else if argmax(golden) == argmax(faulty) {
        OutcomeKind::NonCritical
    } else {
        OutcomeKind::Critical
    };
    Ok(Outcome { kind, logit_delta })
}

/// Default spacing of golden snapshots, in cycles.
pub const DEFAULT_CHECKPOINT_INTERVAL: u64 = 256;

/// Golden run of one image with periodic `(registers, AMEM)` snapshots.
///
/// Faulty runs restart from the last snapshot before the fault and stop as
/// soon as their state matches a later snapshot, since the rest of the run
/// is then identical to the golden one.
#[derive(Debug, Clone)]
pub struct GoldenReference<'p> {
    program: &'p CycleProgram,
    logits: Vec<i8>,
    interval: u64,
    /// Snapshot `i` holds the state after `i * interval` edges.
    checkpoints: Vec<(PipelineState, Vec<i8>)>,
}

impl<'p> GoldenReference<'p> {
    pub fn record(program: &'p CycleProgram, image: &[i8], interval: u64) -> Result<Self> {
        if interval == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        let mut machine = Machine::new(program, image)?;
        let mut checkpoints = vec![(machine.state().clone(), machine.amem().to_vec())];
        while !machine.is_done() {
            let next = machine.cycle() + interval;
            machine.run_until(next)?;
            if machine.cycle() == next {
                checkpoints.push((machine.state().clone(), machine.amem().to_vec()));
            }
        }
        Ok(GoldenReference {
            program,
            logits: machine.logits().to_vec(),
            interval,
            checkpoints,
        })
    }

    pub fn program(&self) -> &'p CycleProgram {
        self.program
    }

    pub fn logits(&self) -> &[i8] {
        &self.logits
    }

    pub fn model_cycles(&self) -> u64 {
        self.program.total_cycles()
    }

    /// Equivalent to [`run_program_faulty`] on the same image.
    pub fn run_faulty(&self, fault: &FaultSpec) -> Result<Vec<i8>> {
        check_fault(self.program, fault)?;
        let after_edge = fault.cycle + 1;
        let k = (after_edge / self.interval) as usize;
        let (state, amem) = self.checkpoints[k].clone();
        let mut machine = Machine::from_snapshot(self.program, state, amem);
        machine.run_until(after_edge)?;
        inject(machine.state_mut(), fault)?;

        let mut k = k + 1;
        while !machine.is_done() {
            machine.run_until(k as u64 * self.interval)?;
            if let Some((state, amem)) = self.checkpoints.get(k) {
                if machine.state().same_registers(state) && machine.amem() == amem.as_slice() {
                    return Ok(self.logits.clone());
                }
            }
            k += 1;
        }
        Ok(machine.logits().to_vec())
    }

    pub fn classify_fault(&self, fault: &FaultSpec) -> Result<Outcome> {
        let faulty = self.run_faulty(fault)?;
        classify(&self.logits, &faulty)
    }
}
