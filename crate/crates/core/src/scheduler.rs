//! Compiles a model into a per-cycle control program and executes it on a
//! [`PipelineState`].
//!
//! # Schedule
//!
//! Each layer is lowered to an `M x K x N` matmul and tiled onto the `R x C`
//! array with `KT = ceil(K/R)` row tiles and `NT = ceil(N/C)` column tiles.
//! Column tiles are the outer loop, output rows next, row tiles innermost, so
//! one accumulator group lives from its bias load until rounding. With
//! `P = R + C + 1`, the `j`-th row tile of group `g = nt*M + q` uses:
//!
//! * `w = start + (g*KT + j)*P`: weight tile load,
//! * `w + 1`: activation fetch (and bias load when `j == 0`),
//! * `w + P`: accumulate (same edge as the next weight load).
//!
//! With `A = start + (g+1)*KT*P` the post-processing strobes follow at
//! `A+1` (round), `A+2` (NLF), `A+3` (pool, or write-back when bypassed) and
//! `A+4` (pooled write-back after the fourth window member). A layer takes
//! `NT*M*KT*P + 5` cycles; the next layer starts immediately after.
//!
//! Memories: WMEM holds zero-padded `R x C` weight tiles in issue order, BMEM
//! zero-padded `C`-wide bias vectors per column tile, AMEM the input image
//! followed by one write-back region per layer. Layer outputs are stored
//! channel-major (`[N, H', W']`), matching the container layout.

use std::io::Write;
use std::ops::Range;

use crate::datapath::{AccumCtrl, OutputSelect, PipelineState, PoolStrobe, PostCtrl, SaConfig, StepInput};
use crate::error::{Error, Result};
use crate::lowering::{im2col_indices, lower_layer, pool_plan, weight_matrix, MatmulProblem, PoolGeometry};
use crate::model::{LayerKind, ModelSpec};
use crate::quant::{Lut, Shift};
use crate::tensor::TensorI8;

/// Address that reads as zero (padding) or is never written (padded column).
const NO_ADDR: u32 = u32::MAX;

/// Cycles after the last accumulate of a layer until the next layer may start.
pub const LAYER_TAIL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AccumOp {
    #[default]
    Hold,
    /// Load the `C`-wide bias vector at this BMEM offset.
    LoadBias(u32),
    Accumulate,
}

/// Control signals for one clock edge. Offsets index the program's address
/// arenas and memories; see [`CycleProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControlBundle {
    pub layer: u16,
    /// WMEM tile index (`R*C` words each).
    pub weight_tile: Option<u32>,
    /// Offset of `R` AMEM read addresses in the fetch arena.
    pub fetch: Option<u32>,
    pub accum: AccumOp,
    pub round: bool,
    pub nlf: bool,
    pub pool: PoolStrobe,
    /// Output mux select plus offset of `C` AMEM write addresses in the
    /// write-back arena.
    pub writeback: Option<(OutputSelect, u32)>,
}

/// Static per-layer parameters of a compiled program.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    pub start: u64,
    pub cycles: u64,
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub k_tiles: usize,
    pub n_tiles: usize,
    pub pooled: bool,
    pub shift: Shift,
    pub nlf: Lut,
    pub input: Range<usize>,
    pub output: Range<usize>,
}

impl LayerPlan {
    /// Closed-form cycle whose edge writes output group `g = n_tile*M + q`
    /// back to AMEM, where `q` is the position in issue order (for pooled
    /// layers, the last member of a window).
    pub fn writeback_cycle(&self, sa: SaConfig, group: usize) -> u64 {
        let period = (sa.rows + sa.cols + 1) as u64;
        let a = self.start + (group as u64 + 1) * self.k_tiles as u64 * period;
        a + if self.pooled { 4 } else { 3 }
    }
}

#[derive(Debug, Clone)]
pub struct CycleProgram {
    sa: SaConfig,
    bundles: Vec<ControlBundle>,
    layers: Vec<LayerPlan>,
    fetch_arena: Vec<u32>,
    wb_arena: Vec<u32>,
    wmem: Vec<i8>,
    bmem: Vec<i32>,
    amem_len: usize,
}

/// Activation / weight / bias storage. Only AMEM changes during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Memories {
    pub amem: Vec<i8>,
    pub wmem: Vec<i8>,
    pub bmem: Vec<i32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutLayout {
    /// `[N, rows]`, the container activation layout.
    ChannelMajor,
    /// `[rows, N]`, used for bare matmul problems.
    RowMajor,
}

struct LoweredOp {
    m: usize,
    k: usize,
    n: usize,
    /// `M x K` input offsets relative to the op's input region.
    a_index: Vec<Option<usize>>,
    /// `K x N`.
    w: TensorI8,
    bias: Vec<i32>,
    shift: Shift,
    nlf: Lut,
    pool: Option<PoolGeometry>,
    layout: OutLayout,
    in_len: usize,
}

impl LoweredOp {
    fn out_rows(&self) -> usize {
        if self.pool.is_some() {
            self.m / 4
        } else {
            self.m
        }
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

fn arena_addr(a: Option<usize>) -> u32 {
    a.map_or(NO_ADDR, |v| u32::try_from(v).expect("AMEM address fits in u32"))
}

pub fn compile(model: &ModelSpec, sa: SaConfig) -> Result<CycleProgram> {
    model.validate()?;
    let mut ops = Vec::with_capacity(model.layers.len());
    for layer in &model.layers {
        let w = weight_matrix(layer)?;
        let (m, a_index, pool) = match layer.kind {
            LayerKind::Fc => (1, (0..layer.in_len()).map(Some).collect(), None),
            LayerKind::Conv2d(_) => {
                let geom = layer
                    .conv_geometry()
                    .ok_or_else(|| Error::shape("conv2d layer without geometry"))?;
                let pool = layer.pool.map(|_| PoolGeometry {
                    out_h: geom.out_h(),
                    out_w: geom.out_w(),
                });
                (geom.patches(), im2col_indices(&geom)?, pool)
            }
        };
        ops.push(LoweredOp {
            m,
            k: w.shape()[0],
            n: w.shape()[1],
            a_index,
            w,
            bias: layer.bias.data().to_vec(),
            shift: layer.shift,
            nlf: layer.nlf.clone(),
            pool,
            layout: OutLayout::ChannelMajor,
            in_len: layer.in_len(),
        });
    }
    compile_ops(&ops, sa)
}

/// Compiles a bare matmul problem: `A` is placed row-major at AMEM 0 and the
/// result is written back row-major (`out_rows x N`).
pub fn compile_problem(problem: &MatmulProblem, sa: SaConfig) -> Result<CycleProgram> {
    problem.validate()?;
    let (m, k) = (problem.m(), problem.k());
    let op = LoweredOp {
        m,
        k,
        n: problem.n(),
        a_index: (0..m * k).map(Some).collect(),
        w: problem.w.clone(),
        bias: problem.bias.data().to_vec(),
        shift: problem.shift,
        nlf: problem.nlf.clone(),
        pool: problem.pool,
        layout: OutLayout::RowMajor,
        in_len: m * k,
    };
    compile_ops(&[op], sa)
}

fn compile_ops(ops: &[LoweredOp], sa: SaConfig) -> Result<CycleProgram> {
    let (rows, cols) = (sa.rows, sa.cols);
    let period = (rows + cols + 1) as u64;

    let mut total = 0u64;
    for op in ops {
        let groups = div_ceil(op.n, cols) * op.m;
        total += (groups * div_ceil(op.k, rows)) as u64 * period + LAYER_TAIL;
    }
    let total = usize::try_from(total).map_err(|_| Error::Config("program too long".into()))?;
    if ops.len() > u16::MAX as usize {
        return Err(Error::Config("too many layers".into()));
    }

    let mut bundles = vec![ControlBundle::default(); total];
    let mut layers = Vec::with_capacity(ops.len());
    let mut fetch_arena = Vec::new();
    let mut wb_arena = Vec::new();
    let mut wmem = Vec::new();
    let mut bmem = Vec::new();

    let mut in_base = 0usize;
    let mut amem_len = ops.first().map_or(0, |op| op.in_len);
    let mut start = 0u64;

    for (li, op) in ops.iter().enumerate() {
        if op.a_index.len() != op.m * op.k || op.w.shape() != [op.k, op.n] || op.bias.len() != op.n {
            return Err(Error::shape(format!("layer {li}: inconsistent lowered shapes")));
        }
        if li > 0 && op.in_len != ops[li - 1].out_rows() * ops[li - 1].n {
            return Err(Error::shape(format!("layer {li}: input does not chain")));
        }
        let k_tiles = div_ceil(op.k, rows);
        let n_tiles = div_ceil(op.n, cols);
        let out_rows = op.out_rows();
        let out_base = amem_len;
        amem_len += out_rows * op.n;

        let tile_base = (wmem.len() / (rows * cols)) as u32;
        for nt in 0..n_tiles {
            for j in 0..k_tiles {
                for r in 0..rows {
                    for c in 0..cols {
                        let (kk, nn) = (j * rows + r, nt * cols + c);
                        let v = if kk < op.k && nn < op.n { op.w.at2(kk, nn) } else { 0 };
                        wmem.push(v);
                    }
                }
            }
        }
        let bias_base = bmem.len() as u32;
        for nt in 0..n_tiles {
            for c in 0..cols {
                bmem.push(op.bias.get(nt * cols + c).copied().unwrap_or(0));
            }
        }

        // fetch arena: (m, j) -> R addresses
        let fetch_base = fetch_arena.len() as u32;
        for m in 0..op.m {
            for j in 0..k_tiles {
                for r in 0..rows {
                    let kk = j * rows + r;
                    let addr = if kk < op.k {
                        op.a_index[m * op.k + kk].map(|a| in_base + a)
                    } else {
                        None
                    };
                    fetch_arena.push(arena_addr(addr));
                }
            }
        }

        // write-back arena: (out row, n tile) -> C addresses
        let wb_base = wb_arena.len() as u32;
        for q in 0..out_rows {
            for nt in 0..n_tiles {
                for c in 0..cols {
                    let nn = nt * cols + c;
                    let addr = (nn < op.n).then(|| match op.layout {
                        OutLayout::ChannelMajor => out_base + nn * out_rows + q,
                        OutLayout::RowMajor => out_base + q * op.n + nn,
                    });
                    wb_arena.push(arena_addr(addr));
                }
            }
        }

        let order: Vec<usize> = match op.pool {
            Some(p) => pool_plan(p.out_h, p.out_w)?,
            None => (0..op.m).collect(),
        };
        let layer_idx = li as u16;
        let layer_cycles = (n_tiles * op.m * k_tiles) as u64 * period + LAYER_TAIL;
        for b in &mut bundles[start as usize..(start + layer_cycles) as usize] {
            b.layer = layer_idx;
        }
        for nt in 0..n_tiles {
            for (q, &m) in order.iter().enumerate() {
                let g = (nt * op.m + q) as u64;
                for j in 0..k_tiles {
                    let w = (start + (g * k_tiles as u64 + j as u64) * period) as usize;
                    bundles[w].weight_tile = Some(tile_base + (nt * k_tiles + j) as u32);
                    bundles[w + 1].fetch =
                        Some(fetch_base + ((m * k_tiles + j) * rows) as u32);
                    if j == 0 {
                        bundles[w + 1].accum =
                            AccumOp::LoadBias(bias_base + (nt * cols) as u32);
                    }
                    bundles[w + period as usize].accum = AccumOp::Accumulate;
                }
                let a = (start + (g + 1) * k_tiles as u64 * period) as usize;
                bundles[a + 1].round = true;
                bundles[a + 2].nlf = true;
                if op.pool.is_some() {
                    bundles[a + 3].pool = if q % 4 == 0 {
                        PoolStrobe::Restart
                    } else {
                        PoolStrobe::Max
                    };
                    if q % 4 == 3 {
                        let off = wb_base + (((q / 4) * n_tiles + nt) * cols) as u32;
                        bundles[a + 4].writeback = Some((OutputSelect::Pool, off));
                    }
                } else {
                    let off = wb_base + ((m * n_tiles + nt) * cols) as u32;
                    bundles[a + 3].writeback = Some((OutputSelect::Bypass, off));
                }
            }
        }

        layers.push(LayerPlan {
            start,
            cycles: layer_cycles,
            m: op.m,
            k: op.k,
            n: op.n,
            k_tiles,
            n_tiles,
            pooled: op.pool.is_some(),
            shift: op.shift,
            nlf: op.nlf.clone(),
            input: in_base..in_base + op.in_len,
            output: out_base..out_base + out_rows * op.n,
        });
        in_base = out_base;
        start += layer_cycles;
    }
    debug_assert_eq!(start as usize, bundles.len());

    Ok(CycleProgram {
        sa,
        bundles,
        layers,
        fetch_arena,
        wb_arena,
        wmem,
        bmem,
        amem_len,
    })
}

impl CycleProgram {
    pub fn sa(&self) -> SaConfig {
        self.sa
    }

    pub fn total_cycles(&self) -> u64 {
        self.bundles.len() as u64
    }

    pub fn bundles(&self) -> &[ControlBundle] {
        &self.bundles
    }

    pub fn layers(&self) -> &[LayerPlan] {
        &self.layers
    }

    pub fn input_range(&self) -> Range<usize> {
        self.layers.first().map_or(0..0, |l| l.input.clone())
    }

    pub fn output_range(&self) -> Range<usize> {
        self.layers.last().map_or(0..0, |l| l.output.clone())
    }

    /// AMEM addresses written by a bundle, padded columns excluded.
    pub fn writeback_addresses(&self, bundle: &ControlBundle) -> Vec<usize> {
        let cols = self.sa.cols;
        bundle.writeback.map_or_else(Vec::new, |(_, off)| {
            self.wb_arena[off as usize..off as usize + cols]
                .iter()
                .filter(|&&a| a != NO_ADDR)
                .map(|&a| a as usize)
                .collect()
        })
    }

    /// Fresh memories with `image` in the input region.
    pub fn memories(&self, image: &[i8]) -> Result<Memories> {
        let input = self.input_range();
        if image.len() != input.len() {
            return Err(Error::shape(format!(
                "image has {} values, model input needs {}",
                image.len(),
                input.len()
            )));
        }
        let mut amem = vec![0i8; self.amem_len];
        amem[input].copy_from_slice(image);
        Ok(Memories {
            amem,
            wmem: self.wmem.clone(),
            bmem: self.bmem.clone(),
        })
    }
}

/// A pipeline executing a [`CycleProgram`] against its own AMEM.
#[derive(Debug, Clone)]
pub struct Machine<'p> {
    program: &'p CycleProgram,
    state: PipelineState,
    amem: Vec<i8>,
    row_buf: Vec<i8>,
}

impl<'p> Machine<'p> {
    pub fn new(program: &'p CycleProgram, image: &[i8]) -> Result<Self> {
        let input = program.input_range();
        if image.len() != input.len() {
            return Err(Error::shape(format!(
                "image has {} values, model input needs {}",
                image.len(),
                input.len()
            )));
        }
        let mut amem = vec![0i8; program.amem_len];
        amem[input].copy_from_slice(image);
        Ok(Machine {
            program,
            state: PipelineState::new(program.sa),
            amem,
            row_buf: vec![0; program.sa.rows],
        })
    }

    /// Resume from a saved `(state, amem)` snapshot.
    pub fn from_snapshot(program: &'p CycleProgram, state: PipelineState, amem: Vec<i8>) -> Self {
        Machine {
            program,
            row_buf: vec![0; program.sa.rows],
            state,
            amem,
        }
    }

    pub fn program(&self) -> &'p CycleProgram {
        self.program
    }

    pub fn state(&self) -> &PipelineState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PipelineState {
        &mut self.state
    }

    pub fn amem(&self) -> &[i8] {
        &self.amem
    }

    pub fn cycle(&self) -> u64 {
        self.state.cycle()
    }

    pub fn is_done(&self) -> bool {
        self.state.cycle() >= self.program.total_cycles()
    }

    /// Executes the bundle for the current cycle (one clock edge).
    pub fn step(&mut self) -> Result<()> {
        let p = self.program;
        let idx = self.state.cycle() as usize;
        let bundle = p
            .bundles
            .get(idx)
            .ok_or(Error::IncompletePipeline("program already finished"))?;
        let plan = &p.layers[bundle.layer as usize];
        let (rows, cols) = (p.sa.rows, p.sa.cols);

        if let Some(off) = bundle.fetch {
            let addrs = &p.fetch_arena[off as usize..off as usize + rows];
            for (dst, &a) in self.row_buf.iter_mut().zip(addrs) {
                *dst = if a == NO_ADDR { 0 } else { self.amem[a as usize] };
            }
        }
        if let Some((select, off)) = bundle.writeback {
            let values = self.state.drain(select)?;
            let addrs = &p.wb_arena[off as usize..off as usize + cols];
            for (&a, &v) in addrs.iter().zip(values) {
                if a != NO_ADDR {
                    self.amem[a as usize] = v;
                }
            }
        }
        let tile_len = rows * cols;
        let input = StepInput {
            weights: bundle
                .weight_tile
                .map(|t| &p.wmem[t as usize * tile_len..(t as usize + 1) * tile_len]),
            row_inputs: bundle.fetch.map(|_| self.row_buf.as_slice()),
            accum: match bundle.accum {
                AccumOp::Hold => AccumCtrl::Hold,
                AccumOp::LoadBias(off) => {
                    AccumCtrl::LoadBias(&p.bmem[off as usize..off as usize + cols])
                }
                AccumOp::Accumulate => AccumCtrl::Accumulate,
            },
            post: PostCtrl {
                round: bundle.round.then_some(plan.shift),
                nlf: bundle.nlf.then_some(&plan.nlf),
                pool: bundle.pool,
            },
        };
        self.state.step(&input);
        Ok(())
    }

    /// Steps until `cycle` edges have been applied.
    pub fn run_until(&mut self, cycle: u64) -> Result<()> {
        let end = cycle.min(self.program.total_cycles());
        while self.state.cycle() < end {
            self.step()?;
        }
        Ok(())
    }

    pub fn run_to_end(&mut self) -> Result<()> {
        self.run_until(self.program.total_cycles())
    }

    pub fn logits(&self) -> &[i8] {
        &self.amem[self.program.output_range()]
    }

    pub fn into_parts(self) -> (PipelineState, Vec<i8>) {
        (self.state, self.amem)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenRun {
    pub logits: Vec<i8>,
    pub model_cycles: u64,
}

/// Fault-free execution of the whole program.
pub fn run_program(program: &CycleProgram, image: &[i8]) -> Result<GoldenRun> {
    let mut machine = Machine::new(program, image)?;
    machine.run_to_end()?;
    Ok(GoldenRun {
        logits: machine.logits().to_vec(),
        model_cycles: program.total_cycles(),
    })
}

pub fn run_golden(model: &ModelSpec, image: &TensorI8, sa: SaConfig) -> Result<GoldenRun> {
    let program = compile(model, sa)?;
    run_program(&program, image.data())
}

/// Like [`run_golden`], writing one register-trace line per cycle.
pub fn run_golden_traced(
    model: &ModelSpec,
    image: &TensorI8,
    sa: SaConfig,
    trace: &mut dyn Write,
) -> Result<GoldenRun> {
    let program = compile(model, sa)?;
    let mut machine = Machine::new(&program, image.data())?;
    while !machine.is_done() {
        machine.step()?;
        writeln!(trace, "{}", machine.state().trace_line())?;
    }
    Ok(GoldenRun {
        logits: machine.logits().to_vec(),
        model_cycles: program.total_cycles(),
    })
}

/// Pure layer-by-layer evaluation with no pipeline.
pub fn reference_inference(model: &ModelSpec, image: &TensorI8) -> Result<TensorI8> {
    model.validate()?;
    let mut x = image.clone();
    for layer in &model.layers {
        let problem = lower_layer(layer, &x)?;
        let y = problem.reference()?;
        let (rows, n) = (y.shape()[0], y.shape()[1]);
        let mut out = vec![0i8; rows * n];
        for q in 0..rows {
            for c in 0..n {
                out[c * rows + q] = y.at2(q, c);
            }
        }
        x = TensorI8::new(layer.out_shape.clone(), out)?;
    }
    Ok(x)
}
