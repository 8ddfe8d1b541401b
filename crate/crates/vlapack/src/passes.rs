//! Compilation pipeline: data-tiling decomposition, packing propagation,
//! loop tiling and vectorization to VVM programs.

use crate::error::{Error, Result};
use crate::ir::{DimExpr, EwKind, Graph, NodeId, OpKind, OpNode, SymDim};
use crate::kernels::{emit_generic_predicated, emit_tile_kernel, AccInit, KernelRegs, TileVisit};
use crate::layout::{KernelId, LayoutConfig, VectorLength};
use crate::tensor::OuterPerm;
use crate::vvm::{
    add, addr, ceil_div, cnst, min_expr, mul, sub, var, vl, Instr, Item, ProgramBuilder,
    ScalarExpr, VarId, VvmProgram,
};

/// Tiles per block for the three blocked outer loops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockingFactors {
    pub t_m: usize,
    pub t_n: usize,
    pub t_k: usize,
}

impl BlockingFactors {
    pub fn new(t_m: usize, t_n: usize, t_k: usize) -> Result<Self> {
        if t_m == 0 || t_n == 0 || t_k == 0 {
            return Err(Error::InvalidArgument(
                "blocking factors must be >= 1".into(),
            ));
        }
        Ok(Self { t_m, t_n, t_k })
    }
}

/// Default blocking: full K per block (C tiles stay register-resident
/// across the reduction), and at most 4 tiles per block in M and N.
pub fn default_blocking(m_o: usize, n_o: usize, k_o: usize) -> BlockingFactors {
    BlockingFactors {
        t_m: m_o.min(4),
        t_n: n_o.min(4),
        t_k: k_o,
    }
}

fn sym_expr(d: SymDim) -> ScalarExpr {
    add(mul(cnst(d.vl_coeff as i64), vl()), cnst(d.constant as i64))
}

/// Lower a shape dimension to a VL-parametric integer expression.
pub fn dim_expr(d: DimExpr) -> ScalarExpr {
    match d {
        DimExpr::Affine(s) => sym_expr(s),
        DimExpr::TileCount { extent, tile } => ceil_div(cnst(extent as i64), sym_expr(tile)),
    }
}

fn as_affine(d: DimExpr) -> Result<SymDim> {
    match d {
        DimExpr::Affine(s) => Ok(s),
        other => Err(Error::InternalConsistency(format!(
            "expected an affine dim, got {other:?}"
        ))),
    }
}

fn static_extent(d: DimExpr) -> Result<u32> {
    match d {
        DimExpr::Affine(s) if s.is_static() => Ok(s.constant),
        other => Err(Error::InternalConsistency(format!(
            "expected a static dim, got {other:?}"
        ))),
    }
}

/// Replace every `Matmul(A, B)` with
/// `Unpack(PackedMatmul(Pack(A), Pack(B)))` using the tile-size functions
/// of `config`. A is packed `f_m x f_k` with identity outer order; B is
/// packed `f_k x f_n` with swapped outer order so the kernel's K loop
/// reads contiguous memory.
pub fn data_tile(graph: &Graph, config: &LayoutConfig) -> Result<Graph> {
    graph.verify()?;
    if !graph.nodes.iter().any(|n| n.kind == OpKind::Matmul) {
        return Err(Error::InvalidArgument("graph contains no matmul".into()));
    }
    let (f_m, f_n, f_k): (SymDim, SymDim, SymDim) =
        (config.f_m.into(), config.f_n.into(), config.f_k.into());
    let mut out = Graph::new();
    let mut map: Vec<NodeId> = Vec::with_capacity(graph.nodes.len());
    for node in &graph.nodes {
        let ops: Vec<NodeId> = node.operands.iter().map(|o| map[o.0]).collect();
        let new_id = match &node.kind {
            OpKind::Matmul => {
                let m = static_extent(node.result_shape[0])?;
                let n = static_extent(node.result_shape[1])?;
                let a_pack = out.add_pack(ops[0], vec![f_m, f_k], OuterPerm::Identity, 0.0);
                let b_pack = out.add_pack(ops[1], vec![f_k, f_n], OuterPerm::Swapped, 0.0);
                let pm = out.add_packed_matmul(a_pack, b_pack);
                out.add_unpack(pm, m, n)
            }
            _ => out.add_node(OpNode {
                kind: node.kind.clone(),
                operands: ops,
                result_shape: node.result_shape.clone(),
            }),
        };
        map.push(new_id);
    }
    out.verify()?;
    Ok(out)
}

/// Move unpacks past eligible elementwise consumers, to fixpoint.
///
/// An `Unpack` whose sole consumer is a lane-wise `Add`/`Mul`/`ReLU`, or a
/// `BiasAddRow` applied to it, is pushed below that op: the elementwise op
/// is rewritten to operate on the packed buffer and any dense secondary
/// operand gains a `Pack` node (bias packs along n_r; Add/Mul operands
/// pack with the full C-tile layout). Pads stay consistent because every
/// eligible op maps 0 to 0 and the inserted packs pad with 0. Anything
/// else, including unpacks with several consumers, is left untouched.
pub fn propagate_packing(graph: &Graph) -> Result<Graph> {
    graph.verify()?;
    let mut g = graph.clone();
    while let Some((unpack, consumer)) = find_candidate(&g) {
        g = push_unpack_down(&g, unpack, consumer)?;
        g.verify()?;
    }
    Ok(g)
}

fn find_candidate(g: &Graph) -> Option<(NodeId, NodeId)> {
    for idx in 0..g.nodes.len() {
        let uid = NodeId(idx);
        if !matches!(g.node(uid).kind, OpKind::Unpack { .. }) {
            continue;
        }
        if g.use_count(uid) != 1 {
            continue; // profitability guard: single-consumer unpacks only
        }
        let consumer = g.consumers(uid)[0];
        if is_eligible(g, uid, consumer) {
            return Some((uid, consumer));
        }
    }
    None
}

fn is_eligible(g: &Graph, unpack: NodeId, consumer: NodeId) -> bool {
    let node = g.node(consumer);
    match node.kind {
        OpKind::Elementwise { op, packed: false } => match op {
            EwKind::Relu => true,
            EwKind::BiasAddRow => node.operands[0] == unpack,
            EwKind::Add | EwKind::Mul => {
                let other = if node.operands[0] == unpack {
                    node.operands[1]
                } else {
                    node.operands[0]
                };
                g.node(other).result_shape.len() == 2
            }
        },
        _ => false,
    }
}

fn push_unpack_down(g: &Graph, unpack: NodeId, consumer: NodeId) -> Result<Graph> {
    let (rows, cols) = match g.node(unpack).kind {
        OpKind::Unpack { rows, cols } => (rows, cols),
        _ => unreachable!("candidate is an unpack"),
    };
    let packed_src_old = g.node(unpack).operands[0];
    let mut out = Graph::new();
    let mut map: Vec<NodeId> = Vec::with_capacity(g.nodes.len());
    for (idx, node) in g.nodes.iter().enumerate() {
        let id = NodeId(idx);
        if id == unpack {
            // Dropped here; reinserted below its consumer. The slot maps to
            // the packed producer, which nothing else references.
            map.push(map[packed_src_old.0]);
            continue;
        }
        if id != consumer {
            let ops: Vec<NodeId> = node.operands.iter().map(|o| map[o.0]).collect();
            map.push(out.add_node(OpNode {
                kind: node.kind.clone(),
                operands: ops,
                result_shape: node.result_shape.clone(),
            }));
            continue;
        }
        let op = match node.kind {
            OpKind::Elementwise { op, .. } => op,
            _ => unreachable!("candidate consumer is elementwise"),
        };
        let packed_src = map[packed_src_old.0];
        let packed_shape = out.node(packed_src).result_shape.clone();
        let m_r = as_affine(packed_shape[2])?;
        let n_r = as_affine(packed_shape[3])?;
        let operands = match op {
            EwKind::Relu => vec![packed_src],
            EwKind::BiasAddRow => {
                let bias = map[node.operands[1].0];
                let bias_pack = out.add_pack(bias, vec![n_r], OuterPerm::Identity, 0.0);
                vec![packed_src, bias_pack]
            }
            EwKind::Add | EwKind::Mul => {
                let other_old = if node.operands[0] == unpack {
                    node.operands[1]
                } else {
                    node.operands[0]
                };
                let other_pack =
                    out.add_pack(map[other_old.0], vec![m_r, n_r], OuterPerm::Identity, 0.0);
                if node.operands[0] == unpack {
                    vec![packed_src, other_pack]
                } else {
                    vec![other_pack, packed_src]
                }
            }
        };
        let packed_ew = out.add_node(OpNode {
            kind: OpKind::Elementwise { op, packed: true },
            operands,
            result_shape: packed_shape,
        });
        // Downstream users of the elementwise op now consume the moved unpack.
        map.push(out.add_unpack(packed_ew, rows, cols));
    }
    Ok(out)
}

// Loop variable layout shared by tile_loops and vectorize.
const V_IT: VarId = VarId(0);
const V_JT: VarId = VarId(1);
const V_KT: VarId = VarId(2);
const V_IO: VarId = VarId(3);
const V_JO: VarId = VarId(4);
const V_K: VarId = VarId(5);
const NEST_VARS: usize = 6;

/// Concretized view of one packed-matmul node: logical dims, tile sizes
/// (both as numbers at `vl` and as VL-symbolic dims), and tile counts.
#[derive(Debug, Clone)]
pub struct PackedMatmulInfo {
    pub m: usize,
    pub n: usize,
    pub k: usize,
    pub m_r: usize,
    pub n_r: usize,
    pub k_r: usize,
    pub m_o: usize,
    pub n_o: usize,
    pub k_o: usize,
    pub m_r_dim: SymDim,
    pub n_r_dim: SymDim,
    pub k_r_dim: SymDim,
    pub vl: VectorLength,
}

impl PackedMatmulInfo {
    pub fn from_node(graph: &Graph, id: NodeId, vl: VectorLength) -> Result<Self> {
        let node = graph.node(id);
        if node.kind != OpKind::PackedMatmul {
            return Err(Error::InvalidArgument(format!(
                "%{} is not a packed_matmul",
                id.0
            )));
        }
        let a = &graph.node(node.operands[0]).result_shape;
        let b = &graph.node(node.operands[1]).result_shape;
        let m_r_dim = as_affine(a[2])?;
        let k_r_dim = as_affine(a[3])?;
        let n_r_dim = as_affine(b[3])?;
        // Logical dims come from the pack producers when present; for
        // hand-built graphs fall back to the padded extents.
        let logical = |pack_id: NodeId, which: usize| -> Result<usize> {
            let p = graph.node(pack_id);
            if matches!(p.kind, OpKind::Pack { .. }) {
                Ok(static_extent(graph.node(p.operands[0]).result_shape[which])? as usize)
            } else {
                Ok(p.result_shape[which].concretize(vl)
                    * as_affine(p.result_shape[which + 2])?.concretize(vl))
            }
        };
        let m = logical(node.operands[0], 0)?;
        let k = logical(node.operands[0], 1)?;
        let n = logical(node.operands[1], 1)?;
        let (m_r, n_r, k_r) = (
            m_r_dim.concretize(vl),
            n_r_dim.concretize(vl),
            k_r_dim.concretize(vl),
        );
        Ok(Self {
            m,
            n,
            k,
            m_r,
            n_r,
            k_r,
            m_o: m.div_ceil(m_r),
            n_o: n.div_ceil(n_r),
            k_o: k.div_ceil(k_r),
            m_r_dim,
            n_r_dim,
            k_r_dim,
            vl,
        })
    }

    /// Tile count along N as a VL-parametric expression, so emitted
    /// programs stay valid at other vector lengths.
    fn n_o_expr(&self) -> ScalarExpr {
        ceil_div(cnst(self.n as i64), sym_expr(self.n_r_dim))
    }
}

#[derive(Debug, Clone)]
pub struct LoopDesc {
    pub name: &'static str,
    pub bound: ScalarExpr,
}

/// Base offsets and reduction extent of one microkernel invocation, in
/// terms of the six loop variables.
#[derive(Debug, Clone)]
pub struct KernelCall {
    pub a_base: ScalarExpr,
    pub b_base: ScalarExpr,
    pub c_base: ScalarExpr,
    pub k_extent: ScalarExpr,
}

/// The six-loop structure around one microkernel call: three blocked
/// outer loops and three intra-block loops, in the order
/// i_t, j_t, k_t, i_o, j_o, k.
#[derive(Debug, Clone)]
pub struct LoopNest {
    pub info: PackedMatmulInfo,
    pub blocking: BlockingFactors,
    pub loops: Vec<LoopDesc>,
    pub call: KernelCall,
}

/// Kernel call operand expressions for a given k_t expression. Shared by
/// the canonical nest description and the peeled emission in `vectorize`.
fn call_exprs(info: &PackedMatmulInfo, blocking: &BlockingFactors, k_t: ScalarExpr) -> KernelCall {
    let n_o = info.n_o_expr();
    let n_r = sym_expr(info.n_r_dim);
    let k_r = info.k_r as i64;
    let ia = add(mul(var(V_IT), cnst(blocking.t_m as i64)), var(V_IO));
    let ja = add(mul(var(V_JT), cnst(blocking.t_n as i64)), var(V_JO));
    let k_start_tiles = mul(k_t.clone(), cnst(blocking.t_k as i64));
    let a_tile = cnst((info.m_r * info.k_r) as i64);
    let b_tile = mul(cnst(k_r), n_r.clone());
    let c_tile = mul(cnst(info.m_r as i64), n_r);
    KernelCall {
        a_base: mul(
            add(
                mul(ia.clone(), cnst(info.k_o as i64)),
                k_start_tiles.clone(),
            ),
            a_tile,
        ),
        b_base: mul(
            add(
                mul(ja.clone(), cnst(info.k_o as i64)),
                k_start_tiles.clone(),
            ),
            b_tile,
        ),
        c_base: mul(add(mul(ia, n_o), ja), c_tile),
        k_extent: mul(
            min_expr(
                cnst(blocking.t_k as i64),
                sub(cnst(info.k_o as i64), k_start_tiles),
            ),
            cnst(k_r),
        ),
    }
}

/// Build the blocked loop nest for one packed matmul. The last block in
/// each dimension may be partial in tile units; partial tiles themselves
/// never occur because packing already padded them.
pub fn tile_loops(info: &PackedMatmulInfo, blocking: &BlockingFactors) -> LoopNest {
    let n_o = info.n_o_expr();
    let loops = vec![
        LoopDesc {
            name: "i_t",
            bound: cnst(info.m_o.div_ceil(blocking.t_m) as i64),
        },
        LoopDesc {
            name: "j_t",
            bound: ceil_div(n_o.clone(), cnst(blocking.t_n as i64)),
        },
        LoopDesc {
            name: "k_t",
            bound: cnst(info.k_o.div_ceil(blocking.t_k) as i64),
        },
        LoopDesc {
            name: "i_o",
            bound: min_expr(
                cnst(blocking.t_m as i64),
                sub(
                    cnst(info.m_o as i64),
                    mul(var(V_IT), cnst(blocking.t_m as i64)),
                ),
            ),
        },
        LoopDesc {
            name: "j_o",
            bound: min_expr(
                cnst(blocking.t_n as i64),
                sub(n_o, mul(var(V_JT), cnst(blocking.t_n as i64))),
            ),
        },
        LoopDesc {
            name: "k",
            bound: call_exprs(info, blocking, var(V_KT)).k_extent,
        },
    ];
    LoopNest {
        info: info.clone(),
        blocking: *blocking,
        loops,
        call: call_exprs(info, blocking, var(V_KT)),
    }
}

/// Lower a loop nest to a VVM program for the configured kernel.
///
/// For the 8 x 2VL outer-product kernel the emitted body is mask-free:
/// operand layouts match the kernel tile shape exactly after data tiling,
/// so every predicate is all-true and the program contains no whilelt.
/// The k_t = 0 block pass is peeled so that accumulator initialization
/// (zeroing vs. reloading C) needs no runtime branch.
pub fn vectorize(nest: &LoopNest, config: &LayoutConfig) -> Result<VvmProgram> {
    let info = &nest.info;
    if config.eval_tiles(info.vl) != (info.m_r, info.n_r, info.k_r) {
        return Err(Error::InternalConsistency(format!(
            "config tiles {:?} do not match nest tiles {:?}",
            config.eval_tiles(info.vl),
            (info.m_r, info.n_r, info.k_r)
        )));
    }
    match config.kernel_id {
        KernelId::GenericPredicated => {
            emit_generic_predicated(info.m_r, info.n_r, info.k_r, info.m, info.n, info.k)
        }
        KernelId::OuterProduct8x2Vl => {
            let mut b = ProgramBuilder::new();
            let n_o = info.n_o_expr();
            let n_r = sym_expr(info.n_r_dim);
            let a_len = cnst((info.m_o * info.k_o * info.m_r * info.k_r) as i64);
            let b_len = mul(
                mul(n_o.clone(), cnst((info.k_o * info.k_r) as i64)),
                n_r.clone(),
            );
            let c_len = mul(mul(cnst((info.m_o * info.m_r) as i64), n_o), n_r);
            let a_buf = b.buffer("a", a_len);
            let b_buf = b.buffer("b", b_len);
            let c_buf = b.buffer("c", c_len);
            let ptrue = b.preg();
            let regs = KernelRegs::allocate(&mut b);
            for i in 0..NEST_VARS {
                let v = b.fresh_var();
                debug_assert_eq!(v.0, i);
            }

            let visit = |k_t: ScalarExpr, init: AccInit, b: &VvmBounds| -> Item {
                let call = call_exprs(info, &nest.blocking, k_t);
                let kernel = emit_tile_kernel(
                    &regs,
                    &TileVisit {
                        a: a_buf,
                        b: b_buf,
                        c: c_buf,
                        a_base: call.a_base,
                        b_base: call.b_base,
                        c_base: call.c_base,
                        k_extent: call.k_extent,
                        init,
                    },
                    ptrue,
                    V_K,
                );
                Item::Loop {
                    var: V_IO,
                    bound: b.i_o.clone(),
                    body: vec![Item::Loop {
                        var: V_JO,
                        bound: b.j_o.clone(),
                        body: kernel,
                    }],
                }
            };

            let bounds = VvmBounds {
                i_t: nest.loops[0].bound.clone(),
                j_t: nest.loops[1].bound.clone(),
                i_o: nest.loops[3].bound.clone(),
                j_o: nest.loops[4].bound.clone(),
            };
            let n_kt = info.k_o.div_ceil(nest.blocking.t_k);
            let mut jt_body = vec![visit(cnst(0), AccInit::Zero, &bounds)];
            if n_kt > 1 {
                jt_body.push(Item::Loop {
                    var: V_KT,
                    bound: cnst(n_kt as i64 - 1),
                    body: vec![visit(add(var(V_KT), cnst(1)), AccInit::LoadC, &bounds)],
                });
            }
            let body = vec![
                Item::Instr(Instr::Ptrue { dst: ptrue }),
                Item::Loop {
                    var: V_IT,
                    bound: bounds.i_t.clone(),
                    body: vec![Item::Loop {
                        var: V_JT,
                        bound: bounds.j_t.clone(),
                        body: jt_body,
                    }],
                },
            ];
            Ok(b.finish(body))
        }
    }
}

struct VvmBounds {
    i_t: ScalarExpr,
    j_t: ScalarExpr,
    i_o: ScalarExpr,
    j_o: ScalarExpr,
}

/// Flat all-true-predicated map over a packed buffer: `chunk_count` VL-wide
/// chunks. For Add/Mul a second input buffer is declared.
pub fn emit_packed_elementwise(op: EwKind, chunk_count: ScalarExpr) -> Result<VvmProgram> {
    if op == EwKind::BiasAddRow {
        return Err(Error::InternalConsistency(
            "bias uses emit_packed_bias_add".into(),
        ));
    }
    let mut b = ProgramBuilder::new();
    let len = mul(chunk_count.clone(), vl());
    let x = b.buffer("x", len.clone());
    let z = if op.operand_count() == 2 {
        Some(b.buffer("z", len.clone()))
    } else {
        None
    };
    let y = b.buffer("y", len);
    let p = b.preg();
    let vx = b.vreg();
    let c = b.fresh_var();
    let off = mul(var(c), vl());
    let mut chunk = vec![Item::Instr(Instr::Ld1 {
        dst: vx,
        pred: p,
        addr: addr(x, off.clone()),
    })];
    let result = match op {
        EwKind::Relu => {
            chunk.push(Item::Instr(Instr::FmaxZero { dst: vx, src: vx }));
            vx
        }
        EwKind::Add | EwKind::Mul => {
            let vz = b.vreg();
            chunk.push(Item::Instr(Instr::Ld1 {
                dst: vz,
                pred: p,
                addr: addr(z.unwrap(), off.clone()),
            }));
            chunk.push(Item::Instr(if op == EwKind::Add {
                Instr::Fadd {
                    dst: vx,
                    a: vx,
                    b: vz,
                }
            } else {
                Instr::Fmul {
                    dst: vx,
                    a: vx,
                    b: vz,
                }
            }));
            vx
        }
        EwKind::BiasAddRow => unreachable!(),
    };
    chunk.push(Item::Instr(Instr::St1 {
        src: result,
        pred: p,
        addr: addr(y, off),
    }));
    let body = vec![
        Item::Instr(Instr::Ptrue { dst: p }),
        Item::Loop {
            var: c,
            bound: chunk_count,
            body: chunk,
        },
    ];
    Ok(b.finish(body))
}

/// Packed bias add over C-layout tiles: the bias is packed along n_r, so
/// segment s of tile column j_o adds `bias_pack[(j_o*segments + s)*VL..]`.
/// Padding lanes add the bias pad (zero) onto the C pad (zero).
pub fn emit_packed_bias_add(
    m_o: ScalarExpr,
    n_o: ScalarExpr,
    m_r: i64,
    segments: i64,
) -> VvmProgram {
    let mut b = ProgramBuilder::new();
    let tile_len = mul(cnst(m_r * segments), vl());
    let x_len = mul(mul(m_o.clone(), n_o.clone()), tile_len.clone());
    let x = b.buffer("x", x_len.clone());
    let bias = b.buffer("bias", mul(n_o.clone(), mul(cnst(segments), vl())));
    let y = b.buffer("y", x_len);
    let p = b.preg();
    let vx = b.vreg();
    let vb = b.vreg();
    let io = b.fresh_var();
    let jo = b.fresh_var();
    let r = b.fresh_var();
    let s = b.fresh_var();
    let tile_idx = add(mul(var(io), n_o.clone()), var(jo));
    let chunk = add(
        mul(add(mul(tile_idx, cnst(m_r)), var(r)), cnst(segments)),
        var(s),
    );
    let x_off = mul(chunk, vl());
    let bias_off = mul(add(mul(var(jo), cnst(segments)), var(s)), vl());
    let s_body = vec![
        Item::Instr(Instr::Ld1 {
            dst: vx,
            pred: p,
            addr: addr(x, x_off.clone()),
        }),
        Item::Instr(Instr::Ld1 {
            dst: vb,
            pred: p,
            addr: addr(bias, bias_off),
        }),
        Item::Instr(Instr::Fadd {
            dst: vx,
            a: vx,
            b: vb,
        }),
        Item::Instr(Instr::St1 {
            src: vx,
            pred: p,
            addr: addr(y, x_off),
        }),
    ];
    let body = vec![
        Item::Instr(Instr::Ptrue { dst: p }),
        Item::Loop {
            var: io,
            bound: m_o,
            body: vec![Item::Loop {
                var: jo,
                bound: n_o,
                body: vec![Item::Loop {
                    var: r,
                    bound: cnst(m_r),
                    body: vec![Item::Loop {
                        var: s,
                        bound: cnst(segments),
                        body: s_body,
                    }],
                }],
            }],
        },
    ];
    b.finish(body)
}

/// Whilelt-governed flat map over a dense buffer of `len` elements.
pub fn emit_dense_elementwise(op: EwKind, len: usize) -> Result<VvmProgram> {
    if op == EwKind::BiasAddRow {
        return Err(Error::InternalConsistency(
            "bias uses emit_dense_bias_add".into(),
        ));
    }
    let mut b = ProgramBuilder::new();
    let x = b.buffer("x", cnst(len as i64));
    let z = if op.operand_count() == 2 {
        Some(b.buffer("z", cnst(len as i64)))
    } else {
        None
    };
    let y = b.buffer("y", cnst(len as i64));
    let p = b.preg();
    let vx = b.vreg();
    let c = b.fresh_var();
    let off = mul(var(c), vl());
    let mut chunk = vec![
        Item::Instr(Instr::Whilelt {
            dst: p,
            index: off.clone(),
            limit: cnst(len as i64),
        }),
        Item::Instr(Instr::Ld1 {
            dst: vx,
            pred: p,
            addr: addr(x, off.clone()),
        }),
    ];
    match op {
        EwKind::Relu => chunk.push(Item::Instr(Instr::FmaxZero { dst: vx, src: vx })),
        EwKind::Add | EwKind::Mul => {
            let vz = b.vreg();
            chunk.push(Item::Instr(Instr::Ld1 {
                dst: vz,
                pred: p,
                addr: addr(z.unwrap(), off.clone()),
            }));
            chunk.push(Item::Instr(if op == EwKind::Add {
                Instr::Fadd {
                    dst: vx,
                    a: vx,
                    b: vz,
                }
            } else {
                Instr::Fmul {
                    dst: vx,
                    a: vx,
                    b: vz,
                }
            }));
        }
        EwKind::BiasAddRow => unreachable!(),
    }
    chunk.push(Item::Instr(Instr::St1 {
        src: vx,
        pred: p,
        addr: addr(y, off),
    }));
    let body = vec![Item::Loop {
        var: c,
        bound: ceil_div(cnst(len as i64), vl()),
        body: chunk,
    }];
    Ok(b.finish(body))
}

/// Row-wise whilelt bias add over a dense m x n matrix.
pub fn emit_dense_bias_add(m: usize, n: usize) -> VvmProgram {
    let mut b = ProgramBuilder::new();
    let x = b.buffer("x", cnst((m * n) as i64));
    let bias = b.buffer("bias", cnst(n as i64));
    let y = b.buffer("y", cnst((m * n) as i64));
    let p = b.preg();
    let vx = b.vreg();
    let vb = b.vreg();
    let i = b.fresh_var();
    let jv = b.fresh_var();
    let col = mul(var(jv), vl());
    let off = add(mul(var(i), cnst(n as i64)), col.clone());
    let jv_body = vec![
        Item::Instr(Instr::Whilelt {
            dst: p,
            index: col.clone(),
            limit: cnst(n as i64),
        }),
        Item::Instr(Instr::Ld1 {
            dst: vx,
            pred: p,
            addr: addr(x, off.clone()),
        }),
        Item::Instr(Instr::Ld1 {
            dst: vb,
            pred: p,
            addr: addr(bias, col.clone()),
        }),
        Item::Instr(Instr::Fadd {
            dst: vx,
            a: vx,
            b: vb,
        }),
        Item::Instr(Instr::St1 {
            src: vx,
            pred: p,
            addr: addr(y, off),
        }),
    ];
    let body = vec![Item::Loop {
        var: i,
        bound: cnst(m as i64),
        body: vec![Item::Loop {
            var: jv,
            bound: ceil_div(cnst(n as i64), vl()),
            body: jv_body,
        }],
    }];
    b.finish(body)
}
