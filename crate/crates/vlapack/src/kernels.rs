//! Microkernel emitters.
//!
//! The production kernel computes an outer-product update of an 8 x 2VL
//! output tile for each step along K: an 8x1 slice of A is loaded as two
//! replicated quadwords, a 1 x 2VL slice of B as two contiguous vectors,
//! and sixteen lane-indexed FMAs update the register-resident accumulators.
//! All predicates are all-true; packed layouts make edge masking
//! unnecessary. A whilelt-governed generic kernel covers arbitrary
//! unpacked operands.

use crate::error::{Error, Result};
use crate::vvm::{
    add, addr, ceil_div, cnst, mul, var, vl, Addr, BufferId, DupSrc, Instr, Item, PReg,
    ProgramBuilder, ScalarExpr, VReg, VarId, VvmProgram,
};

/// How the sixteen accumulators start a tile visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccInit {
    /// Fresh reduction: accumulators are zeroed.
    Zero,
    /// Continuation of a split reduction: accumulators reload the C tile.
    LoadC,
}

/// Register set of the 8 x 2VL kernel: 16 accumulators plus two A
/// quadword registers and two B row registers. 20 vector registers total,
/// comfortably under the architectural 32.
pub struct KernelRegs {
    pub acc: [VReg; 16],
    pub a_col: [VReg; 2],
    pub b_row: [VReg; 2],
}

impl KernelRegs {
    pub fn allocate(b: &mut ProgramBuilder) -> Self {
        let acc = std::array::from_fn(|_| b.vreg());
        let a_col = [b.vreg(), b.vreg()];
        let b_row = [b.vreg(), b.vreg()];
        Self { acc, a_col, b_row }
    }
}

/// Operand placement for one emitted tile visit. Offsets are element
/// offsets of the visit's A row-panel, B column-panel and C tile; the
/// kernel's internal k counter is relative to these bases.
pub struct TileVisit {
    pub a: BufferId,
    pub b: BufferId,
    pub c: BufferId,
    pub a_base: ScalarExpr,
    pub b_base: ScalarExpr,
    pub c_base: ScalarExpr,
    pub k_extent: ScalarExpr,
    pub init: AccInit,
}

/// Emit the kernel body for one tile visit: accumulator init, the K loop
/// of Listing-style loads and lane FMAs, and the sixteen stores.
pub fn emit_tile_kernel(
    regs: &KernelRegs,
    visit: &TileVisit,
    ptrue: PReg,
    k_var: VarId,
) -> Vec<Item> {
    let mut items = Vec::with_capacity(16 + 1 + 16);
    let c_addr = |j: usize| -> Addr {
        addr(
            visit.c,
            add(visit.c_base.clone(), mul(cnst(j as i64), vl())),
        )
    };
    for (j, acc) in regs.acc.iter().enumerate() {
        items.push(Item::Instr(match visit.init {
            AccInit::Zero => Instr::Dup {
                dst: *acc,
                src: DupSrc::Imm(0.0),
            },
            AccInit::LoadC => Instr::Ld1 {
                dst: *acc,
                pred: ptrue,
                addr: c_addr(j),
            },
        }));
    }

    let k = var(k_var);
    let mut body = Vec::with_capacity(4 + 16);
    // A column k: eight elements at a_base + 8k, as two quadwords.
    let a_off = add(visit.a_base.clone(), mul(cnst(8), k.clone()));
    body.push(Item::Instr(Instr::Ld1rq {
        dst: regs.a_col[0],
        addr: addr(visit.a, a_off.clone()),
    }));
    body.push(Item::Instr(Instr::Ld1rq {
        dst: regs.a_col[1],
        addr: addr(visit.a, add(a_off, cnst(4))),
    }));
    // B row k: 2VL elements at b_base + 2*VL*k, as two vectors.
    let b_off = add(visit.b_base.clone(), mul(mul(cnst(2), vl()), k));
    body.push(Item::Instr(Instr::Ld1 {
        dst: regs.b_row[0],
        pred: ptrue,
        addr: addr(visit.b, b_off.clone()),
    }));
    body.push(Item::Instr(Instr::Ld1 {
        dst: regs.b_row[1],
        pred: ptrue,
        addr: addr(visit.b, add(b_off, vl())),
    }));
    // Accumulator C(2r+s) pairs B segment s with A quadword r/4, lane r%4.
    for r in 0..8 {
        for s in 0..2 {
            body.push(Item::Instr(Instr::FmlaLane {
                acc: regs.acc[2 * r + s],
                mul: regs.b_row[s],
                quad: regs.a_col[r / 4],
                lane: (r % 4) as u8,
            }));
        }
    }
    items.push(Item::Loop {
        var: k_var,
        bound: visit.k_extent.clone(),
        body,
    });

    for (j, acc) in regs.acc.iter().enumerate() {
        items.push(Item::Instr(Instr::St1 {
            src: *acc,
            pred: ptrue,
            addr: c_addr(j),
        }));
    }
    items
}

/// Standalone 8 x 2VL outer-product kernel over one A row-panel
/// (8*K elements), one B column-panel (2*VL*K) and one C tile (16*VL).
pub fn emit_outer_product_8x2vl(k: usize) -> Result<VvmProgram> {
    if k == 0 {
        return Err(Error::InvalidArgument(
            "kernel K extent must be >= 1".into(),
        ));
    }
    let mut b = ProgramBuilder::new();
    let a_buf = b.buffer("a", cnst(8 * k as i64));
    let b_buf = b.buffer("b", mul(mul(cnst(2), vl()), cnst(k as i64)));
    let c_buf = b.buffer("c", mul(cnst(16), vl()));
    let ptrue = b.preg();
    let regs = KernelRegs::allocate(&mut b);
    let k_var = b.fresh_var();
    let visit = TileVisit {
        a: a_buf,
        b: b_buf,
        c: c_buf,
        a_base: cnst(0),
        b_base: cnst(0),
        c_base: cnst(0),
        k_extent: cnst(k as i64),
        init: AccInit::Zero,
    };
    let mut body = vec![Item::Instr(Instr::Ptrue { dst: ptrue })];
    body.extend(emit_tile_kernel(&regs, &visit, ptrue, k_var));
    Ok(b.finish(body))
}

/// Whilelt-governed kernel on unpacked row-major operands: vectorizes over
/// N with per-lane predication, broadcasting one A element per k step. No
/// scalar remainder loop exists; partial vectors are handled entirely by
/// the predicate.
pub fn emit_generic_predicated(
    m_r: usize,
    n_r: usize,
    k_r: usize,
    m: usize,
    n: usize,
    k: usize,
) -> Result<VvmProgram> {
    if [m_r, n_r, k_r, m, n, k].contains(&0) {
        return Err(Error::InvalidArgument(
            "generic kernel dims must be >= 1".into(),
        ));
    }
    let mut b = ProgramBuilder::new();
    let a_buf = b.buffer("a", cnst((m * k) as i64));
    let b_buf = b.buffer("b", cnst((k * n) as i64));
    let c_buf = b.buffer("c", cnst((m * n) as i64));
    let p = b.preg();
    let acc = b.vreg();
    let a_v = b.vreg();
    let b_v = b.vreg();
    let i_var = b.fresh_var();
    let jv_var = b.fresh_var();
    let k_var = b.fresh_var();

    let col0 = mul(var(jv_var), vl());
    let k_body = vec![
        Item::Instr(Instr::Dup {
            dst: a_v,
            src: DupSrc::Mem(addr(
                a_buf,
                add(mul(var(i_var), cnst(k as i64)), var(k_var)),
            )),
        }),
        Item::Instr(Instr::Ld1 {
            dst: b_v,
            pred: p,
            addr: addr(b_buf, add(mul(var(k_var), cnst(n as i64)), col0.clone())),
        }),
        // a_v holds one broadcast value, so lane index 0 selects it in
        // every quadword segment.
        Item::Instr(Instr::FmlaLane {
            acc,
            mul: b_v,
            quad: a_v,
            lane: 0,
        }),
    ];
    let jv_body = vec![
        Item::Instr(Instr::Whilelt {
            dst: p,
            index: col0.clone(),
            limit: cnst(n as i64),
        }),
        Item::Instr(Instr::Dup {
            dst: acc,
            src: DupSrc::Imm(0.0),
        }),
        Item::Loop {
            var: k_var,
            bound: cnst(k as i64),
            body: k_body,
        },
        Item::Instr(Instr::St1 {
            src: acc,
            pred: p,
            addr: addr(c_buf, add(mul(var(i_var), cnst(n as i64)), col0)),
        }),
    ];
    let body = vec![Item::Loop {
        var: i_var,
        bound: cnst(m as i64),
        body: vec![Item::Loop {
            var: jv_var,
            bound: ceil_div(cnst(n as i64), vl()),
            body: jv_body,
        }],
    }];
    Ok(b.finish(body))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layout::validate_vl;
    use crate::tensor::{matmul_oracle, pack, DenseTensor, OuterPerm};
    use crate::vvm::{Machine, Opcode};

    fn run_kernel(a_panel: Vec<f32>, b_panel: Vec<f32>, k: usize, lanes: usize) -> Vec<f32> {
        let prog = emit_outer_product_8x2vl(k).unwrap();
        let mut m = Machine::new(validate_vl(lanes).unwrap());
        m.bind_buffers(&prog, vec![a_panel, b_panel, vec![0.0; 16 * lanes]])
            .unwrap();
        m.run(&prog).unwrap();
        m.take_buffer(crate::vvm::BufferId(2))
    }

    #[test]
    fn histogram_k1() {
        let prog = emit_outer_product_8x2vl(1).unwrap();
        for lanes in [4, 8, 16] {
            let h = crate::vvm::static_histogram(&prog, validate_vl(lanes).unwrap());
            assert_eq!(h.get(Opcode::Dup), 16);
            assert_eq!(h.get(Opcode::Ld1rq), 2);
            assert_eq!(h.get(Opcode::Ld1), 2);
            assert_eq!(h.get(Opcode::FmlaLane), 16);
            assert_eq!(h.get(Opcode::St1), 16);
            assert_eq!(h.get(Opcode::Whilelt), 0);
        }
    }

    #[test]
    fn k_zero_rejected() {
        assert!(emit_outer_product_8x2vl(0).is_err());
    }

    #[test]
    fn outer_product_identity_row() {
        // A column = e0, one k step: C row 0 equals the B row, rows 1..8 zero.
        let lanes = 4;
        let a_panel = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let b_panel: Vec<f32> = (0..2 * lanes).map(|i| (i + 1) as f32).collect();
        let c = run_kernel(a_panel, b_panel.clone(), 1, lanes);
        assert_eq!(&c[..2 * lanes], &b_panel[..]);
        assert!(c[2 * lanes..].iter().all(|v| *v == 0.0));
    }

    #[test]
    fn random_tiles_match_oracle() {
        let lanes = 4;
        let k = 6;
        let a = DenseTensor::from_fn(8, k, |i, j| ((i * 13 + j * 7) % 9) as f32 - 4.0).unwrap();
        let b =
            DenseTensor::from_fn(k, 2 * lanes, |i, j| ((i * 3 + j * 5) % 11) as f32 - 5.0).unwrap();
        // Pack A into the 8x1-tile panel the kernel expects; a dense
        // row-major K x 2VL block already is the B panel layout.
        let a_panel = pack(&a, 8, 1, OuterPerm::Identity, 0.0)
            .unwrap()
            .into_data();
        let c = run_kernel(a_panel, b.data().to_vec(), k, lanes);
        let expect = matmul_oracle(&a, &b).unwrap();
        assert_eq!(c, expect.data());
    }

    #[test]
    fn register_economy() {
        let prog = emit_outer_product_8x2vl(7).unwrap();
        assert!(prog.vector_registers_used() <= 20);
    }

    #[test]
    fn generic_predicated_1x7x1() {
        let prog = emit_generic_predicated(8, 8, 1, 1, 7, 1).unwrap();
        let a = DenseTensor::from_fn(1, 1, |_, _| 3.0).unwrap();
        let b = DenseTensor::from_fn(1, 7, |_, j| j as f32 - 2.5).unwrap();
        let mut m = Machine::new(validate_vl(4).unwrap());
        m.set_trace(true);
        m.bind_buffers(
            &prog,
            vec![a.data().to_vec(), b.data().to_vec(), vec![0.0; 7]],
        )
        .unwrap();
        let outcome = m.run(&prog).unwrap();
        // Two N iterations; the second is governed by whilelt(4,7) = 3 lanes.
        assert_eq!(outcome.histogram.get(Opcode::Whilelt), 2);
        let whilelt_lines: Vec<&String> = outcome
            .trace
            .iter()
            .filter(|l| l.starts_with("whilelt"))
            .collect();
        assert!(
            whilelt_lines[0].ends_with("active=4"),
            "{}",
            whilelt_lines[0]
        );
        assert!(
            whilelt_lines[1].ends_with("active=3"),
            "{}",
            whilelt_lines[1]
        );
        let expect = matmul_oracle(&a, &b).unwrap();
        assert_eq!(m.buffer(crate::vvm::BufferId(2)), expect.data());
    }

    #[test]
    fn generic_all_true_on_multiples() {
        let prog = emit_generic_predicated(8, 8, 1, 2, 8, 3).unwrap();
        let a = DenseTensor::from_fn(2, 3, |i, j| (i + j) as f32).unwrap();
        let b = DenseTensor::from_fn(3, 8, |i, j| (i * 8 + j) as f32 * 0.5).unwrap();
        let mut m = Machine::new(validate_vl(4).unwrap());
        m.set_trace(true);
        m.bind_buffers(
            &prog,
            vec![a.data().to_vec(), b.data().to_vec(), vec![0.0; 16]],
        )
        .unwrap();
        let outcome = m.run(&prog).unwrap();
        for line in outcome.trace.iter().filter(|l| l.starts_with("whilelt")) {
            assert!(line.ends_with("active=4"), "{line}");
        }
        let expect = matmul_oracle(&a, &b).unwrap();
        assert_eq!(m.buffer(crate::vvm::BufferId(2)), expect.data());
    }

    #[test]
    fn generic_single_element() {
        let prog = emit_generic_predicated(8, 8, 1, 1, 1, 1).unwrap();
        let mut m = Machine::new(validate_vl(4).unwrap());
        m.bind_buffers(&prog, vec![vec![-2.5], vec![4.0], vec![0.0]])
            .unwrap();
        m.run(&prog).unwrap();
        assert_eq!(m.buffer(crate::vvm::BufferId(2)), &[-10.0]);
    }

    #[test]
    fn generic_rejects_zero_dims() {
        assert!(emit_generic_predicated(8, 8, 1, 0, 1, 1).is_err());
    }
}
