//! Scalable-vector virtual machine.
//!
//! The ISA mirrors the handful of SVE intrinsics the microkernels need.
//! Programs are structured (counted loops, no raw branches) and all loop
//! bounds and address offsets are integer expressions over loop variables
//! and the symbolic vector length, so a single program runs unmodified at
//! any admissible VL. The lane count is fixed only when a [`Machine`] is
//! constructed.

use crate::error::{Error, Result};
use crate::layout::VectorLength;
use std::collections::BTreeMap;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BufferId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VReg(pub u16);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PReg(pub u8);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SReg(pub u8);

/// Integer expression over loop variables and the vector length.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum ScalarExpr {
    Const(i64),
    /// Lane count of the executing machine.
    Vl,
    Var(VarId),
    Add(Box<ScalarExpr>, Box<ScalarExpr>),
    Sub(Box<ScalarExpr>, Box<ScalarExpr>),
    Mul(Box<ScalarExpr>, Box<ScalarExpr>),
    CeilDiv(Box<ScalarExpr>, Box<ScalarExpr>),
    Min(Box<ScalarExpr>, Box<ScalarExpr>),
}

impl ScalarExpr {
    pub fn eval(&self, env: &[i64], lanes: usize) -> i64 {
        match self {
            ScalarExpr::Const(c) => *c,
            ScalarExpr::Vl => lanes as i64,
            ScalarExpr::Var(v) => env[v.0],
            ScalarExpr::Add(a, b) => a.eval(env, lanes) + b.eval(env, lanes),
            ScalarExpr::Sub(a, b) => a.eval(env, lanes) - b.eval(env, lanes),
            ScalarExpr::Mul(a, b) => a.eval(env, lanes) * b.eval(env, lanes),
            ScalarExpr::CeilDiv(a, b) => {
                let (a, b) = (a.eval(env, lanes), b.eval(env, lanes));
                debug_assert!(b > 0);
                a.div_euclid(b) + i64::from(a.rem_euclid(b) != 0)
            }
            ScalarExpr::Min(a, b) => a.eval(env, lanes).min(b.eval(env, lanes)),
        }
    }

    pub fn mentions_var(&self, var: VarId) -> bool {
        match self {
            ScalarExpr::Const(_) | ScalarExpr::Vl => false,
            ScalarExpr::Var(v) => *v == var,
            ScalarExpr::Add(a, b)
            | ScalarExpr::Sub(a, b)
            | ScalarExpr::Mul(a, b)
            | ScalarExpr::CeilDiv(a, b)
            | ScalarExpr::Min(a, b) => a.mentions_var(var) || b.mentions_var(var),
        }
    }
}

impl fmt::Display for ScalarExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScalarExpr::Const(c) => write!(f, "{c}"),
            ScalarExpr::Vl => write!(f, "VL"),
            ScalarExpr::Var(v) => write!(f, "i{}", v.0),
            ScalarExpr::Add(a, b) => write!(f, "({a} + {b})"),
            ScalarExpr::Sub(a, b) => write!(f, "({a} - {b})"),
            ScalarExpr::Mul(a, b) => write!(f, "({a} * {b})"),
            ScalarExpr::CeilDiv(a, b) => write!(f, "ceildiv({a}, {b})"),
            ScalarExpr::Min(a, b) => write!(f, "min({a}, {b})"),
        }
    }
}

// Expression constructors; `mul`/`add` fold constants so emitted programs
// stay readable in traces.
pub fn cnst(v: i64) -> ScalarExpr {
    ScalarExpr::Const(v)
}

pub fn vl() -> ScalarExpr {
    ScalarExpr::Vl
}

pub fn var(v: VarId) -> ScalarExpr {
    ScalarExpr::Var(v)
}

pub fn add(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match (a, b) {
        (ScalarExpr::Const(x), ScalarExpr::Const(y)) => ScalarExpr::Const(x + y),
        (ScalarExpr::Const(0), b) => b,
        (a, ScalarExpr::Const(0)) => a,
        (a, b) => ScalarExpr::Add(Box::new(a), Box::new(b)),
    }
}

pub fn sub(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match (a, b) {
        (ScalarExpr::Const(x), ScalarExpr::Const(y)) => ScalarExpr::Const(x - y),
        (a, ScalarExpr::Const(0)) => a,
        (a, b) => ScalarExpr::Sub(Box::new(a), Box::new(b)),
    }
}

pub fn mul(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match (a, b) {
        (ScalarExpr::Const(x), ScalarExpr::Const(y)) => ScalarExpr::Const(x * y),
        (ScalarExpr::Const(0), _) | (_, ScalarExpr::Const(0)) => ScalarExpr::Const(0),
        (ScalarExpr::Const(1), b) => b,
        (a, ScalarExpr::Const(1)) => a,
        (a, b) => ScalarExpr::Mul(Box::new(a), Box::new(b)),
    }
}

pub fn ceil_div(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match (a, b) {
        (ScalarExpr::Const(x), ScalarExpr::Const(y)) if y > 0 => {
            ScalarExpr::Const(x.div_euclid(y) + i64::from(x.rem_euclid(y) != 0))
        }
        (a, ScalarExpr::Const(1)) => a,
        (a, b) => ScalarExpr::CeilDiv(Box::new(a), Box::new(b)),
    }
}

pub fn min_expr(a: ScalarExpr, b: ScalarExpr) -> ScalarExpr {
    match (a, b) {
        (ScalarExpr::Const(x), ScalarExpr::Const(y)) => ScalarExpr::Const(x.min(y)),
        (a, b) => ScalarExpr::Min(Box::new(a), Box::new(b)),
    }
}

/// Buffer element offset, in FP32 elements.
#[derive(Debug, Clone, PartialEq)]
pub struct Addr {
    pub buf: BufferId,
    pub offset: ScalarExpr,
}

pub fn addr(buf: BufferId, offset: ScalarExpr) -> Addr {
    Addr { buf, offset }
}

/// Source of a broadcast: an immediate or a single memory element
/// replicated to every lane.
#[derive(Debug, Clone, PartialEq)]
pub enum DupSrc {
    Imm(f32),
    Mem(Addr),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Instr {
    /// Write the machine's lane count to a scalar register.
    CntLanes {
        dst: SReg,
    },
    Dup {
        dst: VReg,
        src: DupSrc,
    },
    /// Contiguous load; inactive lanes read as 0 and never fault.
    Ld1 {
        dst: VReg,
        pred: PReg,
        addr: Addr,
    },
    /// Load 4 consecutive elements, replicated across every quadword
    /// segment of the vector. All 4 elements must be in bounds.
    Ld1rq {
        dst: VReg,
        addr: Addr,
    },
    /// Contiguous store of active lanes.
    St1 {
        src: VReg,
        pred: PReg,
        addr: Addr,
    },
    /// `acc[l] += mul[l] * quad[4*(l/4) + lane]`, fused.
    FmlaLane {
        acc: VReg,
        mul: VReg,
        quad: VReg,
        lane: u8,
    },
    Fadd {
        dst: VReg,
        a: VReg,
        b: VReg,
    },
    Fmul {
        dst: VReg,
        a: VReg,
        b: VReg,
    },
    /// Lane-wise max(x, 0).
    FmaxZero {
        dst: VReg,
        src: VReg,
    },
    /// Scalar sum of active lanes in ascending lane order.
    ReduceAdd {
        dst: SReg,
        pred: PReg,
        src: VReg,
    },
    /// `p[l] = (index + l < limit)`.
    Whilelt {
        dst: PReg,
        index: ScalarExpr,
        limit: ScalarExpr,
    },
    Ptrue {
        dst: PReg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Opcode {
    CntLanes,
    Dup,
    Ld1,
    Ld1rq,
    St1,
    FmlaLane,
    Fadd,
    Fmul,
    FmaxZero,
    ReduceAdd,
    Whilelt,
    Ptrue,
}

pub const OPCODE_COUNT: usize = 12;

pub const ALL_OPCODES: [Opcode; OPCODE_COUNT] = [
    Opcode::CntLanes,
    Opcode::Dup,
    Opcode::Ld1,
    Opcode::Ld1rq,
    Opcode::St1,
    Opcode::FmlaLane,
    Opcode::Fadd,
    Opcode::Fmul,
    Opcode::FmaxZero,
    Opcode::ReduceAdd,
    Opcode::Whilelt,
    Opcode::Ptrue,
];

impl Opcode {
    pub fn name(self) -> &'static str {
        match self {
            Opcode::CntLanes => "cnt_lanes",
            Opcode::Dup => "dup",
            Opcode::Ld1 => "ld1",
            Opcode::Ld1rq => "ld1rq",
            Opcode::St1 => "st1",
            Opcode::FmlaLane => "fmla_lane",
            Opcode::Fadd => "fadd",
            Opcode::Fmul => "fmul",
            Opcode::FmaxZero => "fmax_zero",
            Opcode::ReduceAdd => "reduce_add",
            Opcode::Whilelt => "whilelt",
            Opcode::Ptrue => "ptrue",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl Instr {
    pub fn opcode(&self) -> Opcode {
        match self {
            Instr::CntLanes { .. } => Opcode::CntLanes,
            Instr::Dup { .. } => Opcode::Dup,
            Instr::Ld1 { .. } => Opcode::Ld1,
            Instr::Ld1rq { .. } => Opcode::Ld1rq,
            Instr::St1 { .. } => Opcode::St1,
            Instr::FmlaLane { .. } => Opcode::FmlaLane,
            Instr::Fadd { .. } => Opcode::Fadd,
            Instr::Fmul { .. } => Opcode::Fmul,
            Instr::FmaxZero { .. } => Opcode::FmaxZero,
            Instr::ReduceAdd { .. } => Opcode::ReduceAdd,
            Instr::Whilelt { .. } => Opcode::Whilelt,
            Instr::Ptrue { .. } => Opcode::Ptrue,
        }
    }
}

/// Per-opcode retired-instruction counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Histogram {
    counts: [u64; OPCODE_COUNT],
}

impl Histogram {
    pub fn bump(&mut self, op: Opcode, n: u64) {
        self.counts[op.index()] += n;
    }

    pub fn get(&self, op: Opcode) -> u64 {
        self.counts[op.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &Histogram) {
        for i in 0..OPCODE_COUNT {
            self.counts[i] += other.counts[i];
        }
    }

    pub fn scaled(&self, factor: u64) -> Histogram {
        let mut out = *self;
        for c in &mut out.counts {
            *c *= factor;
        }
        out
    }

    /// CSV rows `opcode,count` in opcode declaration order, zero rows
    /// omitted.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("opcode,count\n");
        for op in ALL_OPCODES {
            let c = self.get(op);
            if c > 0 {
                out.push_str(&format!("{},{}\n", op.name(), c));
            }
        }
        out
    }
}

impl fmt::Display for Histogram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut first = true;
        for op in ALL_OPCODES {
            let c = self.get(op);
            if c > 0 {
                if !first {
                    write!(f, " ")?;
                }
                write!(f, "{}={}", op.name(), c)?;
                first = false;
            }
        }
        Ok(())
    }
}

/// Program item: a single instruction or a counted loop whose bound is
/// evaluated once at loop entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Item {
    Instr(Instr),
    Loop {
        var: VarId,
        bound: ScalarExpr,
        body: Vec<Item>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BufferDecl {
    pub name: String,
    /// Required length in elements, possibly VL-dependent.
    pub len: ScalarExpr,
}

/// Structured scalable-vector program over declared external buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct VvmProgram {
    pub buffers: Vec<BufferDecl>,
    pub body: Vec<Item>,
    pub vreg_count: usize,
    pub preg_count: usize,
    pub sreg_count: usize,
    pub var_count: usize,
}

impl VvmProgram {
    /// Number of distinct vector registers the program names.
    pub fn vector_registers_used(&self) -> usize {
        self.vreg_count
    }

    /// True if any instruction in the program is the given opcode.
    pub fn contains_opcode(&self, op: Opcode) -> bool {
        fn walk(items: &[Item], op: Opcode) -> bool {
            items.iter().any(|it| match it {
                Item::Instr(i) => i.opcode() == op,
                Item::Loop { body, .. } => walk(body, op),
            })
        }
        walk(&self.body, op)
    }
}

/// Outcome of interpreting a program: retired-instruction counts plus the
/// optional trace.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    pub histogram: Histogram,
    pub trace: Vec<String>,
    /// (buffer, element) pairs written, recorded when tracing.
    pub stores_touched: Vec<(usize, usize)>,
    /// Contiguous spans touched by memory instructions when tracing:
    /// (opcode, buffer, first element, span length covering active lanes).
    pub mem_accesses: Vec<(Opcode, usize, usize, usize)>,
}

/// Interpreter state. The vector length is fixed for the machine lifetime.
pub struct Machine {
    vl: VectorLength,
    memory: Vec<Vec<f32>>,
    buffer_names: Vec<String>,
    vregs: Vec<Vec<f32>>,
    pregs: Vec<Vec<bool>>,
    sregs: Vec<f32>,
    collect_trace: bool,
}

impl Machine {
    pub fn new(vl: VectorLength) -> Self {
        Self {
            vl,
            memory: Vec::new(),
            buffer_names: Vec::new(),
            vregs: Vec::new(),
            pregs: Vec::new(),
            sregs: Vec::new(),
            collect_trace: false,
        }
    }

    pub fn vl(&self) -> VectorLength {
        self.vl
    }

    pub fn set_trace(&mut self, on: bool) {
        self.collect_trace = on;
    }

    /// Bind one buffer per program declaration, in declaration order.
    /// Lengths are checked against the declared requirement at this VL.
    pub fn bind_buffers(&mut self, program: &VvmProgram, buffers: Vec<Vec<f32>>) -> Result<()> {
        if buffers.len() != program.buffers.len() {
            return Err(Error::InvalidArgument(format!(
                "program declares {} buffers, {} bound",
                program.buffers.len(),
                buffers.len()
            )));
        }
        for (decl, buf) in program.buffers.iter().zip(&buffers) {
            let need = decl.len.eval(&[], self.vl.lanes());
            if (buf.len() as i64) < need {
                return Err(Error::InvalidArgument(format!(
                    "buffer '{}' needs {} elements at VL={}, got {}",
                    decl.name,
                    need,
                    self.vl.lanes(),
                    buf.len()
                )));
            }
        }
        self.memory = buffers;
        self.buffer_names = program.buffers.iter().map(|b| b.name.clone()).collect();
        Ok(())
    }

    pub fn buffer(&self, id: BufferId) -> &[f32] {
        &self.memory[id.0]
    }

    pub fn take_buffer(&mut self, id: BufferId) -> Vec<f32> {
        std::mem::take(&mut self.memory[id.0])
    }

    /// Interpret the program. Execution is deterministic; any out-of-bounds
    /// access under an active lane aborts with a trap naming the buffer.
    pub fn run(&mut self, program: &VvmProgram) -> Result<RunOutcome> {
        let lanes = self.vl.lanes();
        self.vregs = vec![vec![0.0; lanes]; program.vreg_count];
        self.pregs = vec![vec![false; lanes]; program.preg_count];
        self.sregs = vec![0.0; program.sreg_count];
        let mut env = vec![0i64; program.var_count];
        let mut out = RunOutcome::default();
        self.run_items(&program.body, &mut env, &mut out)?;
        Ok(out)
    }

    fn run_items(
        &mut self,
        items: &[Item],
        env: &mut Vec<i64>,
        out: &mut RunOutcome,
    ) -> Result<()> {
        for item in items {
            match item {
                Item::Instr(instr) => self.step(instr, env, out)?,
                Item::Loop { var, bound, body } => {
                    let n = bound.eval(env, self.vl.lanes());
                    for i in 0..n {
                        env[var.0] = i;
                        self.run_items(body, env, out)?;
                    }
                }
            }
        }
        Ok(())
    }

    fn resolve(&self, a: &Addr, env: &[i64]) -> (usize, i64) {
        (a.buf.0, a.offset.eval(env, self.vl.lanes()))
    }

    fn load_elem(&self, buf: usize, off: i64) -> Result<f32> {
        if off < 0 || off as usize >= self.memory[buf].len() {
            return Err(self.trap(buf, off));
        }
        Ok(self.memory[buf][off as usize])
    }

    fn trap(&self, buf: usize, offset: i64) -> Error {
        Error::Trap {
            buffer: self.buffer_names[buf].clone(),
            offset,
        }
    }

    // Lane loops index several register files at once; keep them indexed.
    #[allow(clippy::needless_range_loop)]
    fn step(&mut self, instr: &Instr, env: &[i64], out: &mut RunOutcome) -> Result<()> {
        let lanes = self.vl.lanes();
        out.histogram.bump(instr.opcode(), 1);
        let mut active_for_trace = lanes;
        match instr {
            Instr::CntLanes { dst } => {
                self.sregs[dst.0 as usize] = lanes as f32;
            }
            Instr::Dup { dst, src } => {
                let v = match src {
                    DupSrc::Imm(x) => *x,
                    DupSrc::Mem(a) => {
                        let (buf, off) = self.resolve(a, env);
                        self.load_elem(buf, off)?
                    }
                };
                self.vregs[dst.0 as usize].fill(v);
            }
            Instr::Ld1 { dst, pred, addr } => {
                let (buf, off) = self.resolve(addr, env);
                let p_idx = pred.0 as usize;
                let mut oob = None;
                {
                    let pred = &self.pregs[p_idx];
                    let dst = &mut self.vregs[dst.0 as usize];
                    let mem = &self.memory[buf];
                    for l in 0..lanes {
                        // Inactive lanes read as zero and never fault.
                        if !pred[l] {
                            dst[l] = 0.0;
                            continue;
                        }
                        let o = off + l as i64;
                        if o < 0 || o as usize >= mem.len() {
                            oob = Some(o);
                            break;
                        }
                        dst[l] = mem[o as usize];
                    }
                }
                if let Some(offset) = oob {
                    return Err(self.trap(buf, offset));
                }
                if self.collect_trace {
                    let pred = &self.pregs[p_idx];
                    active_for_trace = pred.iter().filter(|p| **p).count();
                    if let Some(span) = active_span(pred) {
                        out.mem_accesses
                            .push((Opcode::Ld1, buf, off as usize, span));
                    }
                }
            }
            Instr::Ld1rq { dst, addr } => {
                let (buf, off) = self.resolve(addr, env);
                let mut quad = [0.0f32; 4];
                for (i, q) in quad.iter_mut().enumerate() {
                    *q = self.load_elem(buf, off + i as i64)?;
                }
                for l in 0..lanes {
                    self.vregs[dst.0 as usize][l] = quad[l % 4];
                }
                if self.collect_trace {
                    out.mem_accesses.push((Opcode::Ld1rq, buf, off as usize, 4));
                }
            }
            Instr::St1 { src, pred, addr } => {
                let (buf, off) = self.resolve(addr, env);
                let p_idx = pred.0 as usize;
                let mut oob = None;
                {
                    let pred = &self.pregs[p_idx];
                    let src = &self.vregs[src.0 as usize];
                    let mem = &mut self.memory[buf];
                    for l in 0..lanes {
                        if !pred[l] {
                            continue;
                        }
                        let o = off + l as i64;
                        if o < 0 || o as usize >= mem.len() {
                            oob = Some(o);
                            break;
                        }
                        mem[o as usize] = src[l];
                        if self.collect_trace {
                            out.stores_touched.push((buf, o as usize));
                        }
                    }
                }
                if let Some(offset) = oob {
                    return Err(self.trap(buf, offset));
                }
                if self.collect_trace {
                    let pred = &self.pregs[p_idx];
                    active_for_trace = pred.iter().filter(|p| **p).count();
                    if let Some(span) = active_span(pred) {
                        out.mem_accesses
                            .push((Opcode::St1, buf, off as usize, span));
                    }
                }
            }
            Instr::FmlaLane {
                acc,
                mul,
                quad,
                lane,
            } => {
                debug_assert!(*lane < 4);
                // SIMD semantics: the indexed quadword operand is read in
                // full before any lane of the accumulator is written.
                let mut q = [0.0f32; 64];
                q[..lanes].copy_from_slice(&self.vregs[quad.0 as usize]);
                let m_idx = mul.0 as usize;
                let a_idx = acc.0 as usize;
                for l in 0..lanes {
                    let qv = q[4 * (l / 4) + *lane as usize];
                    let m = self.vregs[m_idx][l];
                    let a = self.vregs[a_idx][l];
                    self.vregs[a_idx][l] = m.mul_add(qv, a);
                }
            }
            Instr::Fadd { dst, a, b } => {
                for l in 0..lanes {
                    self.vregs[dst.0 as usize][l] =
                        self.vregs[a.0 as usize][l] + self.vregs[b.0 as usize][l];
                }
            }
            Instr::Fmul { dst, a, b } => {
                for l in 0..lanes {
                    self.vregs[dst.0 as usize][l] =
                        self.vregs[a.0 as usize][l] * self.vregs[b.0 as usize][l];
                }
            }
            Instr::FmaxZero { dst, src } => {
                for l in 0..lanes {
                    self.vregs[dst.0 as usize][l] = self.vregs[src.0 as usize][l].max(0.0);
                }
            }
            Instr::ReduceAdd { dst, pred, src } => {
                let pred = &self.pregs[pred.0 as usize];
                active_for_trace = pred.iter().filter(|p| **p).count();
                let mut acc = 0.0f32;
                for l in 0..lanes {
                    if pred[l] {
                        acc += self.vregs[src.0 as usize][l];
                    }
                }
                self.sregs[dst.0 as usize] = acc;
            }
            Instr::Whilelt { dst, index, limit } => {
                let i = index.eval(env, lanes);
                let n = limit.eval(env, lanes);
                for l in 0..lanes {
                    self.pregs[dst.0 as usize][l] = i + (l as i64) < n;
                }
                active_for_trace = self.pregs[dst.0 as usize].iter().filter(|p| **p).count();
            }
            Instr::Ptrue { dst } => {
                self.pregs[dst.0 as usize].fill(true);
            }
        }
        if self.collect_trace {
            out.trace.push(format!(
                "{} {} active={active_for_trace}",
                instr.opcode().name(),
                self.describe_operands(instr, env)
            ));
        }
        Ok(())
    }

    fn describe_operands(&self, instr: &Instr, env: &[i64]) -> String {
        let adr = |a: &Addr| {
            format!(
                "[{}+{}]",
                self.buffer_names[a.buf.0],
                a.offset.eval(env, self.vl.lanes())
            )
        };
        match instr {
            Instr::CntLanes { dst } => format!("s{}", dst.0),
            Instr::Dup { dst, src } => match src {
                DupSrc::Imm(x) => format!("v{}, #{x}", dst.0),
                DupSrc::Mem(a) => format!("v{}, {}", dst.0, adr(a)),
            },
            Instr::Ld1 { dst, pred, addr } => format!("v{}, p{}, {}", dst.0, pred.0, adr(addr)),
            Instr::Ld1rq { dst, addr } => format!("v{}, {}", dst.0, adr(addr)),
            Instr::St1 { src, pred, addr } => format!("{}, p{}, v{}", adr(addr), pred.0, src.0),
            Instr::FmlaLane {
                acc,
                mul,
                quad,
                lane,
            } => {
                format!("v{}, v{}, v{}[{}]", acc.0, mul.0, quad.0, lane)
            }
            Instr::Fadd { dst, a, b } | Instr::Fmul { dst, a, b } => {
                format!("v{}, v{}, v{}", dst.0, a.0, b.0)
            }
            Instr::FmaxZero { dst, src } => format!("v{}, v{}", dst.0, src.0),
            Instr::ReduceAdd { dst, pred, src } => format!("s{}, p{}, v{}", dst.0, pred.0, src.0),
            Instr::Whilelt { dst, index, limit } => {
                let lanes = self.vl.lanes();
                format!(
                    "p{}, {}, {}",
                    dst.0,
                    index.eval(env, lanes),
                    limit.eval(env, lanes)
                )
            }
            Instr::Ptrue { dst } => format!("p{}", dst.0),
        }
    }
}

/// Span from lane 0 through the highest active lane, or None when every
/// lane is inactive.
fn active_span(pred: &[bool]) -> Option<usize> {
    pred.iter().rposition(|p| *p).map(|hi| hi + 1)
}

/// Static well-formedness check: register indices are within the declared
/// counts, FMLA lane indices are in 0..4, and every register read is
/// dominated by a write. Definitions inside a loop body do not escape it,
/// since the loop may run zero times.
pub fn validate(program: &VvmProgram) -> Result<()> {
    #[derive(Clone, Default)]
    struct Defined {
        v: Vec<bool>,
        p: Vec<bool>,
        s: Vec<bool>,
    }

    fn use_v(d: &Defined, r: VReg) -> Result<()> {
        if !d.v.get(r.0 as usize).copied().unwrap_or(false) {
            return Err(Error::InternalConsistency(format!(
                "v{} read before write",
                r.0
            )));
        }
        Ok(())
    }

    fn use_p(d: &Defined, r: PReg) -> Result<()> {
        if !d.p.get(r.0 as usize).copied().unwrap_or(false) {
            return Err(Error::InternalConsistency(format!(
                "p{} read before write",
                r.0
            )));
        }
        Ok(())
    }

    fn def(slots: &mut [bool], idx: usize) -> Result<()> {
        match slots.get_mut(idx) {
            Some(s) => {
                *s = true;
                Ok(())
            }
            None => Err(Error::InternalConsistency(format!(
                "register index {idx} exceeds the declared count"
            ))),
        }
    }

    fn walk(items: &[Item], d: &mut Defined, buffers: usize, vars: usize) -> Result<()> {
        for item in items {
            match item {
                Item::Loop { var, bound, body } => {
                    if var.0 >= vars {
                        return Err(Error::InternalConsistency(format!(
                            "loop variable i{} undeclared",
                            var.0
                        )));
                    }
                    let _ = bound;
                    // defs inside may not execute; check the body against a
                    // copy so they don't leak out
                    let mut inner = d.clone();
                    walk(body, &mut inner, buffers, vars)?;
                }
                Item::Instr(i) => {
                    let check_buf = |a: &Addr| {
                        if a.buf.0 >= buffers {
                            Err(Error::InternalConsistency(format!(
                                "buffer {} undeclared",
                                a.buf.0
                            )))
                        } else {
                            Ok(())
                        }
                    };
                    match i {
                        Instr::CntLanes { dst } => def(&mut d.s, dst.0 as usize)?,
                        Instr::Dup { dst, src } => {
                            if let DupSrc::Mem(a) = src {
                                check_buf(a)?;
                            }
                            def(&mut d.v, dst.0 as usize)?;
                        }
                        Instr::Ld1 { dst, pred, addr } => {
                            use_p(d, *pred)?;
                            check_buf(addr)?;
                            def(&mut d.v, dst.0 as usize)?;
                        }
                        Instr::Ld1rq { dst, addr } => {
                            check_buf(addr)?;
                            def(&mut d.v, dst.0 as usize)?;
                        }
                        Instr::St1 { src, pred, addr } => {
                            use_v(d, *src)?;
                            use_p(d, *pred)?;
                            check_buf(addr)?;
                        }
                        Instr::FmlaLane {
                            acc,
                            mul,
                            quad,
                            lane,
                        } => {
                            if *lane >= 4 {
                                return Err(Error::InternalConsistency(format!(
                                    "fmla lane index {lane} out of range"
                                )));
                            }
                            use_v(d, *acc)?;
                            use_v(d, *mul)?;
                            use_v(d, *quad)?;
                            def(&mut d.v, acc.0 as usize)?;
                        }
                        Instr::Fadd { dst, a, b } | Instr::Fmul { dst, a, b } => {
                            use_v(d, *a)?;
                            use_v(d, *b)?;
                            def(&mut d.v, dst.0 as usize)?;
                        }
                        Instr::FmaxZero { dst, src } => {
                            use_v(d, *src)?;
                            def(&mut d.v, dst.0 as usize)?;
                        }
                        Instr::ReduceAdd { dst, pred, src } => {
                            use_p(d, *pred)?;
                            use_v(d, *src)?;
                            def(&mut d.s, dst.0 as usize)?;
                        }
                        Instr::Whilelt { dst, .. } => def(&mut d.p, dst.0 as usize)?,
                        Instr::Ptrue { dst } => def(&mut d.p, dst.0 as usize)?,
                    }
                }
            }
        }
        Ok(())
    }

    let mut defined = Defined {
        v: vec![false; program.vreg_count],
        p: vec![false; program.preg_count],
        s: vec![false; program.sreg_count],
    };
    walk(
        &program.body,
        &mut defined,
        program.buffers.len(),
        program.var_count,
    )
}

/// Retired-instruction counts computed from program structure alone, by
/// multiplying loop trip counts instead of executing lanes. Exactly equal
/// to the histogram `Machine::run` would produce.
pub fn static_histogram(program: &VvmProgram, vl: VectorLength) -> Histogram {
    fn bounds_mention(items: &[Item], var: VarId) -> bool {
        items.iter().any(|it| match it {
            Item::Instr(_) => false,
            Item::Loop { bound, body, .. } => bound.mentions_var(var) || bounds_mention(body, var),
        })
    }

    fn walk(items: &[Item], env: &mut Vec<i64>, lanes: usize, hist: &mut Histogram, mult: u64) {
        for item in items {
            match item {
                Item::Instr(i) => hist.bump(i.opcode(), mult),
                Item::Loop { var, bound, body } => {
                    let n = bound.eval(env, lanes).max(0) as u64;
                    if n == 0 {
                        continue;
                    }
                    if bounds_mention(body, *var) {
                        // Inner trip counts depend on this variable: iterate it.
                        for i in 0..n {
                            env[var.0] = i as i64;
                            walk(body, env, lanes, hist, mult);
                        }
                    } else {
                        walk(body, env, lanes, hist, mult * n);
                    }
                }
            }
        }
    }

    let mut hist = Histogram::default();
    let mut env = vec![0i64; program.var_count];
    walk(&program.body, &mut env, vl.lanes(), &mut hist, 1);
    hist
}

/// Per-opcode cycle costs plus the memory-side roofline parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CostModel {
    base: [u64; OPCODE_COUNT],
    /// Extra cycles per ReduceAdd per doubling of VL above 4 lanes.
    pub reduce_extra: u64,
    pub cache_capacity_bytes: u64,
    /// Sustainable memory bandwidth in bytes per cycle.
    pub bytes_per_cycle: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            // Throughput model: one cycle per vector instruction. Absolute
            // cycles are unitless; only ratios across VLs are meaningful.
            base: [1; OPCODE_COUNT],
            reduce_extra: 2,
            cache_capacity_bytes: 16 * 1024 * 1024,
            bytes_per_cycle: 20,
        }
    }
}

impl CostModel {
    pub fn with_cache_bytes(mut self, bytes: u64) -> Self {
        self.cache_capacity_bytes = bytes;
        self
    }

    pub fn with_bandwidth(mut self, bytes_per_cycle: u64) -> Self {
        self.bytes_per_cycle = bytes_per_cycle.max(1);
        self
    }

    pub fn base_cost(&self, op: Opcode) -> u64 {
        self.base[op as usize]
    }

    pub fn set_base_cost(&mut self, op: Opcode, cycles: u64) {
        self.base[op as usize] = cycles;
    }
}

/// Memory footprint of one executed program, used by the cache-capacity
/// heuristic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WorkingSet {
    /// Bytes streamed once through the memory system (reads + writes).
    pub compulsory_bytes: u64,
    /// Bytes that must stay cache-resident for reuse across outer passes
    /// to be free. Zero for pure streaming work.
    pub reuse_bytes: u64,
    /// Re-stream multiplier applied to the compulsory traffic when the
    /// reuse set does not fit: one full pass per k-tile step.
    pub refetch_factor: u64,
}

impl WorkingSet {
    pub fn streaming(bytes: u64) -> Self {
        Self {
            compulsory_bytes: bytes,
            reuse_bytes: 0,
            refetch_factor: 1,
        }
    }
}

/// Cycle estimate under the roofline model.
#[derive(Debug, Clone, PartialEq)]
pub struct ExecResult {
    pub cycles_compute: u64,
    pub cycles_memory: u64,
    pub cycles_total: u64,
    pub dram_bytes: u64,
    pub histogram: Histogram,
}

impl ExecResult {
    pub fn zero() -> Self {
        Self {
            cycles_compute: 0,
            cycles_memory: 0,
            cycles_total: 0,
            dram_bytes: 0,
            histogram: Histogram::default(),
        }
    }
}

/// Combine an instruction histogram with the memory footprint into a
/// roofline cycle count: compute cycles from per-opcode costs, memory
/// cycles from modeled DRAM traffic, total as the max of the two.
pub fn cost(
    histogram: &Histogram,
    vl: VectorLength,
    model: &CostModel,
    ws: &WorkingSet,
) -> ExecResult {
    let mut compute = 0u64;
    for op in ALL_OPCODES {
        compute += histogram.get(op) * model.base_cost(op);
    }
    // The only width-dependent compute cost: horizontal reductions get
    // slower as the vector widens.
    let doublings = (vl.lanes() / 4).ilog2() as u64;
    compute += histogram.get(Opcode::ReduceAdd) * model.reduce_extra * doublings;

    let dram_bytes = if ws.reuse_bytes <= model.cache_capacity_bytes {
        ws.compulsory_bytes
    } else {
        ws.compulsory_bytes * ws.refetch_factor.max(1)
    };
    let cycles_memory = dram_bytes.div_ceil(model.bytes_per_cycle.max(1));
    ExecResult {
        cycles_compute: compute,
        cycles_memory,
        cycles_total: compute.max(cycles_memory),
        dram_bytes,
        histogram: *histogram,
    }
}

/// Run a program on a machine and cost the retired instructions.
pub fn execute(
    program: &VvmProgram,
    machine: &mut Machine,
    model: &CostModel,
    ws: &WorkingSet,
) -> Result<ExecResult> {
    let outcome = machine.run(program)?;
    Ok(cost(&outcome.histogram, machine.vl(), model, ws))
}

/// Builder used by the kernel emitters: allocates registers, variables and
/// buffers, and assembles the structured body.
#[derive(Default)]
pub struct ProgramBuilder {
    buffers: Vec<BufferDecl>,
    vregs: usize,
    pregs: usize,
    sregs: usize,
    vars: usize,
}

impl ProgramBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn buffer(&mut self, name: &str, len: ScalarExpr) -> BufferId {
        self.buffers.push(BufferDecl {
            name: name.to_string(),
            len,
        });
        BufferId(self.buffers.len() - 1)
    }

    pub fn vreg(&mut self) -> VReg {
        self.vregs += 1;
        VReg((self.vregs - 1) as u16)
    }

    pub fn preg(&mut self) -> PReg {
        self.pregs += 1;
        PReg((self.pregs - 1) as u8)
    }

    pub fn sreg(&mut self) -> SReg {
        self.sregs += 1;
        SReg((self.sregs - 1) as u8)
    }

    pub fn fresh_var(&mut self) -> VarId {
        self.vars += 1;
        VarId(self.vars - 1)
    }

    pub fn finish(self, body: Vec<Item>) -> VvmProgram {
        VvmProgram {
            buffers: self.buffers,
            body,
            vreg_count: self.vregs,
            preg_count: self.pregs,
            sreg_count: self.sregs,
            var_count: self.vars,
        }
    }
}

/// Map of buffer name to contents, convenience for tests.
pub fn bind_named(
    machine: &mut Machine,
    program: &VvmProgram,
    named: BTreeMap<&str, Vec<f32>>,
) -> Result<()> {
    let mut bufs = Vec::with_capacity(program.buffers.len());
    let mut named = named;
    for decl in &program.buffers {
        let buf = named
            .remove(decl.name.as_str())
            .ok_or_else(|| Error::InvalidArgument(format!("missing buffer '{}'", decl.name)))?;
        bufs.push(buf);
    }
    machine.bind_buffers(program, bufs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::validate_vl;

    fn vl4() -> VectorLength {
        validate_vl(4).unwrap()
    }

    fn vl8() -> VectorLength {
        validate_vl(8).unwrap()
    }

    #[test]
    fn ld1rq_replicates_quadword() {
        let mut b = ProgramBuilder::new();
        let src = b.buffer("src", cnst(4));
        let dst = b.buffer("dst", vl());
        let v = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Instr(Instr::Ld1rq {
                dst: v,
                addr: addr(src, cnst(0)),
            }),
            Item::Instr(Instr::St1 {
                src: v,
                pred: p,
                addr: addr(dst, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl8());
        m.bind_buffers(&prog, vec![vec![1.0, 2.0, 3.0, 4.0], vec![0.0; 8]])
            .unwrap();
        m.run(&prog).unwrap();
        assert_eq!(
            m.buffer(BufferId(1)),
            &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]
        );
    }

    #[test]
    fn whilelt_predicate_and_partial_store() {
        let mut b = ProgramBuilder::new();
        let dst = b.buffer("dst", cnst(8));
        let v = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Dup {
                dst: v,
                src: DupSrc::Imm(9.0),
            }),
            Item::Instr(Instr::Whilelt {
                dst: p,
                index: cnst(6),
                limit: cnst(7),
            }),
            Item::Instr(Instr::St1 {
                src: v,
                pred: p,
                addr: addr(dst, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl4());
        m.bind_buffers(&prog, vec![vec![0.0; 8]]).unwrap();
        m.run(&prog).unwrap();
        // Whilelt(6,7) at VL=4 -> [T,F,F,F]: exactly one element written.
        assert_eq!(m.buffer(BufferId(0))[..4], [9.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn fmla_lane_semantics() {
        let mut b = ProgramBuilder::new();
        let src = b.buffer("src", cnst(4));
        let dst = b.buffer("dst", vl());
        let q = b.vreg();
        let ones = b.vreg();
        let acc = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Instr(Instr::Ld1rq {
                dst: q,
                addr: addr(src, cnst(0)),
            }),
            Item::Instr(Instr::Dup {
                dst: ones,
                src: DupSrc::Imm(1.0),
            }),
            Item::Instr(Instr::Dup {
                dst: acc,
                src: DupSrc::Imm(0.0),
            }),
            Item::Instr(Instr::FmlaLane {
                acc,
                mul: ones,
                quad: q,
                lane: 2,
            }),
            Item::Instr(Instr::St1 {
                src: acc,
                pred: p,
                addr: addr(dst, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl8());
        m.bind_buffers(&prog, vec![vec![2.0, 3.0, 5.0, 7.0], vec![0.0; 8]])
            .unwrap();
        m.run(&prog).unwrap();
        assert_eq!(m.buffer(BufferId(1)), &[5.0; 8]);
    }

    #[test]
    fn inactive_lanes_never_fault() {
        // Buffer of 2 elements; whilelt masks lanes 2..4, so the load and
        // store stay in bounds even though lane 2 would be off the end.
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("buf", cnst(2));
        let v = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Whilelt {
                dst: p,
                index: cnst(0),
                limit: cnst(2),
            }),
            Item::Instr(Instr::Ld1 {
                dst: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
            Item::Instr(Instr::St1 {
                src: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl4());
        m.bind_buffers(&prog, vec![vec![1.5, 2.5]]).unwrap();
        assert!(m.run(&prog).is_ok());
    }

    #[test]
    fn active_oob_traps_with_buffer_name() {
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("small", cnst(2));
        let v = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Instr(Instr::Ld1 {
                dst: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl4());
        // Bypass the length check by declaring len 2 and binding len 2; the
        // all-true load of 4 lanes must trap at offset 2.
        m.bind_buffers(&prog, vec![vec![0.0; 2]]).unwrap();
        match m.run(&prog) {
            Err(Error::Trap { buffer, offset }) => {
                assert_eq!(buffer, "small");
                assert_eq!(offset, 2);
            }
            other => panic!("expected trap, got {other:?}"),
        }
    }

    #[test]
    fn reduce_add_sums_active_lanes() {
        let mut b = ProgramBuilder::new();
        let src = b.buffer("src", vl());
        let v = b.vreg();
        let p = b.preg();
        let s = b.sreg();
        let body = vec![
            Item::Instr(Instr::Whilelt {
                dst: p,
                index: cnst(0),
                limit: cnst(3),
            }),
            Item::Instr(Instr::Ld1 {
                dst: v,
                pred: p,
                addr: addr(src, cnst(0)),
            }),
            Item::Instr(Instr::ReduceAdd {
                dst: s,
                pred: p,
                src: v,
            }),
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl4());
        m.bind_buffers(&prog, vec![vec![1.0, 2.0, 3.0, 100.0]])
            .unwrap();
        m.run(&prog).unwrap();
        assert_eq!(m.sregs[0], 6.0);
    }

    #[test]
    fn counted_loop_and_static_histogram_agree() {
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("buf", mul(cnst(3), vl()));
        let v = b.vreg();
        let p = b.preg();
        let i = b.fresh_var();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Loop {
                var: i,
                bound: cnst(3),
                body: vec![
                    Item::Instr(Instr::Dup {
                        dst: v,
                        src: DupSrc::Imm(1.0),
                    }),
                    Item::Instr(Instr::St1 {
                        src: v,
                        pred: p,
                        addr: addr(buf, mul(var(i), vl())),
                    }),
                ],
            },
        ];
        let prog = b.finish(body);
        let mut m = Machine::new(vl4());
        m.bind_buffers(&prog, vec![vec![0.0; 12]]).unwrap();
        let outcome = m.run(&prog).unwrap();
        assert_eq!(outcome.histogram.get(Opcode::Dup), 3);
        assert_eq!(outcome.histogram.get(Opcode::St1), 3);
        assert_eq!(outcome.histogram, static_histogram(&prog, vl4()));
        assert_eq!(m.buffer(BufferId(0)), &[1.0; 12]);
    }

    #[test]
    fn determinism() {
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("buf", vl());
        let v = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Instr(Instr::Ld1 {
                dst: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
            Item::Instr(Instr::FmaxZero { dst: v, src: v }),
            Item::Instr(Instr::St1 {
                src: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        let data = vec![-1.0, 2.0, -0.5, 3.5];
        let run = |data: Vec<f32>| {
            let mut m = Machine::new(vl4());
            m.bind_buffers(&prog, vec![data]).unwrap();
            let h = m.run(&prog).unwrap().histogram;
            (m.take_buffer(BufferId(0)), h)
        };
        assert_eq!(run(data.clone()), run(data));
    }

    #[test]
    fn cost_roofline_identity_and_reduce_scaling() {
        let mut hist = Histogram::default();
        hist.bump(Opcode::FmlaLane, 100);
        hist.bump(Opcode::ReduceAdd, 10);
        let model = CostModel::default();
        let r4 = cost(&hist, vl4(), &model, &WorkingSet::streaming(10_000));
        assert_eq!(r4.cycles_compute, 110);
        assert_eq!(r4.cycles_memory, 500);
        assert_eq!(r4.cycles_total, 500);
        let r8 = cost(&hist, vl8(), &model, &WorkingSet::streaming(0));
        // one doubling above 4 lanes: +2 cycles per ReduceAdd
        assert_eq!(r8.cycles_compute, 110 + 20);
        assert_eq!(r8.cycles_total, r8.cycles_compute.max(r8.cycles_memory));
    }

    #[test]
    fn cost_refetch_regime() {
        let hist = Histogram::default();
        let model = CostModel::default().with_cache_bytes(8 * 1024 * 1024);
        let ws = WorkingSet {
            compulsory_bytes: 1000,
            reuse_bytes: 16 * 1024 * 1024,
            refetch_factor: 7,
        };
        let r = cost(&hist, vl4(), &model, &ws);
        assert_eq!(r.dram_bytes, 7000);
        let fits = cost(
            &hist,
            vl4(),
            &model.clone().with_cache_bytes(16 * 1024 * 1024),
            &ws,
        );
        assert_eq!(fits.dram_bytes, 1000);
    }

    #[test]
    fn empty_program_costs_zero() {
        let prog = ProgramBuilder::new().finish(vec![]);
        let mut m = Machine::new(vl4());
        m.bind_buffers(&prog, vec![]).unwrap();
        let outcome = m.run(&prog).unwrap();
        let r = cost(
            &outcome.histogram,
            vl4(),
            &CostModel::default(),
            &WorkingSet::default(),
        );
        assert_eq!(r.cycles_total, 0);
        assert_eq!(r.dram_bytes, 0);
    }

    #[test]
    fn histogram_csv_format() {
        let mut h = Histogram::default();
        h.bump(Opcode::FmlaLane, 16);
        h.bump(Opcode::Ld1, 2);
        assert_eq!(h.to_csv(), "opcode,count\nld1,2\nfmla_lane,16\n");
    }

    #[test]
    fn validate_rejects_use_before_def() {
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("buf", vl());
        let v = b.vreg();
        let p = b.preg();
        // store before the predicate is ever written
        let bad = b.finish(vec![Item::Instr(Instr::St1 {
            src: v,
            pred: p,
            addr: addr(buf, cnst(0)),
        })]);
        assert!(matches!(validate(&bad), Err(Error::InternalConsistency(_))));
    }

    #[test]
    fn validate_loop_defs_do_not_escape() {
        let mut b = ProgramBuilder::new();
        let buf = b.buffer("buf", vl());
        let v = b.vreg();
        let p = b.preg();
        let i = b.fresh_var();
        // p is only defined inside a loop that may run zero times
        let bad = b.finish(vec![
            Item::Loop {
                var: i,
                bound: cnst(0),
                body: vec![Item::Instr(Instr::Ptrue { dst: p })],
            },
            Item::Instr(Instr::Ld1 {
                dst: v,
                pred: p,
                addr: addr(buf, cnst(0)),
            }),
        ]);
        assert!(validate(&bad).is_err());
    }

    #[test]
    fn fmla_lane_reads_quad_before_writing_aliased_acc() {
        // acc == quad: all quadword values must be read before any lane is
        // written, so lane 5 sees the original q[4], not an updated one.
        let mut b = ProgramBuilder::new();
        let src = b.buffer("src", cnst(8));
        let dst = b.buffer("dst", vl());
        let q = b.vreg();
        let ones = b.vreg();
        let p = b.preg();
        let body = vec![
            Item::Instr(Instr::Ptrue { dst: p }),
            Item::Instr(Instr::Ld1 {
                dst: q,
                pred: p,
                addr: addr(src, cnst(0)),
            }),
            Item::Instr(Instr::Dup {
                dst: ones,
                src: DupSrc::Imm(1.0),
            }),
            Item::Instr(Instr::FmlaLane {
                acc: q,
                mul: ones,
                quad: q,
                lane: 0,
            }),
            Item::Instr(Instr::St1 {
                src: q,
                pred: p,
                addr: addr(dst, cnst(0)),
            }),
        ];
        let prog = b.finish(body);
        validate(&prog).unwrap();
        let mut m = Machine::new(vl8());
        m.bind_buffers(
            &prog,
            vec![
                vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0],
                vec![0.0; 8],
            ],
        )
        .unwrap();
        m.run(&prog).unwrap();
        // lane l reads original q[4*(l/4)]: +1 for lanes 0..4, +10 for 4..8
        assert_eq!(
            m.buffer(BufferId(1)),
            &[2.0, 3.0, 4.0, 5.0, 20.0, 30.0, 40.0, 50.0]
        );
    }
}
