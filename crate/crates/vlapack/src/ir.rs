//! Structured-op graph IR with vector-length-symbolic shapes.
//!
//! Graph boundaries are static (M, N, K are concrete); only packed inner
//! dims and tile counts derived from them depend on VL. Shapes therefore
//! carry [`DimExpr`]s: either an affine form `a*VL+b` or a tile count
//! `ceildiv(extent, tile)` whose tile is affine in VL.

use crate::error::{Error, Result};
use crate::layout::{TileSizeExpr, VectorLength};
use crate::tensor::OuterPerm;
use std::fmt::Write as _;

/// Affine-in-VL dimension: `vl_coeff*VL + constant`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymDim {
    pub vl_coeff: u32,
    pub constant: u32,
}

impl SymDim {
    pub fn fixed(constant: u32) -> Self {
        Self {
            vl_coeff: 0,
            constant,
        }
    }

    pub fn concretize(self, vl: VectorLength) -> usize {
        self.vl_coeff as usize * vl.lanes() + self.constant as usize
    }

    pub fn is_static(self) -> bool {
        self.vl_coeff == 0
    }

    /// Rendered with both coefficients, e.g. `0*VL+8`, matching the tile
    /// attribute syntax.
    pub fn render_affine(self) -> String {
        format!("{}*VL+{}", self.vl_coeff, self.constant)
    }
}

impl From<TileSizeExpr> for SymDim {
    fn from(t: TileSizeExpr) -> Self {
        Self {
            vl_coeff: t.vl_coeff(),
            constant: t.constant_term(),
        }
    }
}

/// Shape dimension: affine in VL, or a tile count that only becomes a
/// number once VL is bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DimExpr {
    Affine(SymDim),
    /// `ceildiv(extent, tile(VL))` for a VL-dependent tile.
    TileCount {
        extent: u32,
        tile: SymDim,
    },
}

impl DimExpr {
    pub fn fixed(constant: u32) -> Self {
        DimExpr::Affine(SymDim::fixed(constant))
    }

    /// Tile count `ceil(extent / tile)`; folds to a constant when the tile
    /// size does not depend on VL.
    pub fn tile_count(extent: u32, tile: SymDim) -> Self {
        if tile.is_static() {
            DimExpr::fixed(extent.div_ceil(tile.constant))
        } else {
            DimExpr::TileCount { extent, tile }
        }
    }

    pub fn concretize(self, vl: VectorLength) -> usize {
        match self {
            DimExpr::Affine(d) => d.concretize(vl),
            DimExpr::TileCount { extent, tile } => (extent as usize).div_ceil(tile.concretize(vl)),
        }
    }

    /// Static dims print as plain numbers; VL-dependent dims keep their
    /// symbolic form.
    fn render(self) -> String {
        match self {
            DimExpr::Affine(d) if d.is_static() => d.constant.to_string(),
            DimExpr::Affine(d) => d.render_affine(),
            DimExpr::TileCount { extent, tile } => {
                format!("ceildiv({extent}, {})", tile.render_affine())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EwKind {
    Add,
    Mul,
    Relu,
    /// Adds a length-N row vector to every row of the first operand.
    BiasAddRow,
}

impl EwKind {
    pub fn name(self) -> &'static str {
        match self {
            EwKind::Add => "add",
            EwKind::Mul => "mul",
            EwKind::Relu => "relu",
            EwKind::BiasAddRow => "bias_add_row",
        }
    }

    pub fn operand_count(self) -> usize {
        match self {
            EwKind::Relu => 1,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OpKind {
    Input,
    Matmul,
    Pack {
        /// One tile size per operand dimension (two for matrices, one for
        /// row vectors), in logical order.
        tiles: Vec<SymDim>,
        outer_perm: OuterPerm,
        pad: f32,
    },
    PackedMatmul,
    Unpack {
        /// Logical shape to restore; padding slots are discarded.
        rows: u32,
        cols: u32,
    },
    Elementwise {
        op: EwKind,
        /// True once packing has been propagated across this op: operands
        /// and result live in the packed domain.
        packed: bool,
    },
    Output,
}

impl OpKind {
    fn name(&self) -> String {
        match self {
            OpKind::Input => "input".into(),
            OpKind::Matmul => "matmul".into(),
            OpKind::Pack { .. } => "pack".into(),
            OpKind::PackedMatmul => "packed_matmul".into(),
            OpKind::Unpack { .. } => "unpack".into(),
            OpKind::Elementwise { op, packed: false } => op.name().into(),
            OpKind::Elementwise { op, packed: true } => format!("packed_{}", op.name()),
            OpKind::Output => "output".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub kind: OpKind,
    pub operands: Vec<NodeId>,
    pub result_shape: Vec<DimExpr>,
}

/// Acyclic op graph in topological order: every operand reference precedes
/// its user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Graph {
    pub nodes: Vec<OpNode>,
    pub inputs: Vec<NodeId>,
    pub outputs: Vec<NodeId>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn node(&self, id: NodeId) -> &OpNode {
        &self.nodes[id.0]
    }

    fn push(&mut self, node: OpNode) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(node);
        id
    }

    /// Append a fully specified node. Input/Output bookkeeping is kept in
    /// sync; all other invariants are the caller's to maintain (and
    /// [`Graph::verify`] to check). Pass rewrites and tests that perform
    /// graph surgery use this.
    pub fn add_node(&mut self, node: OpNode) -> NodeId {
        let is_input = matches!(node.kind, OpKind::Input);
        let is_output = matches!(node.kind, OpKind::Output);
        let id = self.push(node);
        if is_input {
            self.inputs.push(id);
        }
        if is_output {
            self.outputs.push(id);
        }
        id
    }

    pub fn add_input(&mut self, shape: Vec<DimExpr>) -> NodeId {
        let id = self.push(OpNode {
            kind: OpKind::Input,
            operands: vec![],
            result_shape: shape,
        });
        self.inputs.push(id);
        id
    }

    pub fn add_matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let shape = vec![self.node(a).result_shape[0], self.node(b).result_shape[1]];
        self.push(OpNode {
            kind: OpKind::Matmul,
            operands: vec![a, b],
            result_shape: shape,
        })
    }

    pub fn add_pack(
        &mut self,
        src: NodeId,
        tiles: Vec<SymDim>,
        outer_perm: OuterPerm,
        pad: f32,
    ) -> NodeId {
        let src_shape = self.node(src).result_shape.clone();
        let mut shape = Vec::with_capacity(2 * tiles.len());
        for (dim, tile) in src_shape.iter().zip(&tiles) {
            let extent = match dim {
                DimExpr::Affine(d) if d.is_static() => d.constant,
                _ => 0, // non-static logical extents are rejected by verify
            };
            shape.push(DimExpr::tile_count(extent, *tile));
        }
        for tile in &tiles {
            shape.push(DimExpr::Affine(*tile));
        }
        self.push(OpNode {
            kind: OpKind::Pack {
                tiles,
                outer_perm,
                pad,
            },
            operands: vec![src],
            result_shape: shape,
        })
    }

    pub fn add_packed_matmul(&mut self, a_pack: NodeId, b_pack: NodeId) -> NodeId {
        let a = &self.node(a_pack).result_shape;
        let b = &self.node(b_pack).result_shape;
        let shape = vec![a[0], b[1], a[2], b[3]];
        self.push(OpNode {
            kind: OpKind::PackedMatmul,
            operands: vec![a_pack, b_pack],
            result_shape: shape,
        })
    }

    pub fn add_unpack(&mut self, src: NodeId, rows: u32, cols: u32) -> NodeId {
        self.push(OpNode {
            kind: OpKind::Unpack { rows, cols },
            operands: vec![src],
            result_shape: vec![DimExpr::fixed(rows), DimExpr::fixed(cols)],
        })
    }

    pub fn add_elementwise(&mut self, op: EwKind, operands: Vec<NodeId>) -> NodeId {
        let shape = self.node(operands[0]).result_shape.clone();
        self.push(OpNode {
            kind: OpKind::Elementwise { op, packed: false },
            operands,
            result_shape: shape,
        })
    }

    pub fn add_output(&mut self, src: NodeId) -> NodeId {
        let shape = self.node(src).result_shape.clone();
        let id = self.push(OpNode {
            kind: OpKind::Output,
            operands: vec![src],
            result_shape: shape,
        });
        self.outputs.push(id);
        id
    }

    /// Ids of nodes that reference `id` as an operand.
    pub fn consumers(&self, id: NodeId) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.operands.contains(&id))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Total number of operand slots referencing `id` (an op using the same
    /// value twice counts twice).
    pub fn use_count(&self, id: NodeId) -> usize {
        self.nodes
            .iter()
            .map(|n| n.operands.iter().filter(|o| **o == id).count())
            .sum()
    }

    pub fn verify(&self) -> Result<()> {
        for (idx, node) in self.nodes.iter().enumerate() {
            let fail = |message: String| Err(Error::Verify { node: idx, message });
            for op in &node.operands {
                if op.0 >= idx {
                    return fail(format!("operand %{} does not precede its user", op.0));
                }
            }
            let shape_of = |id: &NodeId| &self.nodes[id.0].result_shape;
            match &node.kind {
                OpKind::Input => {
                    if !node.operands.is_empty() {
                        return fail("input takes no operands".into());
                    }
                }
                OpKind::Matmul => {
                    if node.operands.len() != 2 {
                        return fail("matmul takes exactly 2 operands".into());
                    }
                    let (a, b) = (shape_of(&node.operands[0]), shape_of(&node.operands[1]));
                    if a.len() != 2 || b.len() != 2 {
                        return fail("matmul operands must be rank 2".into());
                    }
                    if a[1] != b[0] {
                        return fail(format!(
                            "inner dims disagree: {} vs {}",
                            a[1].render(),
                            b[0].render()
                        ));
                    }
                    if node.result_shape != vec![a[0], b[1]] {
                        return fail("matmul result shape mismatch".into());
                    }
                }
                OpKind::Pack { tiles, .. } => {
                    if node.operands.len() != 1 {
                        return fail("pack takes exactly 1 operand".into());
                    }
                    let src = shape_of(&node.operands[0]);
                    if src.len() != tiles.len() {
                        return fail(format!(
                            "pack has {} tile sizes for a rank-{} operand",
                            tiles.len(),
                            src.len()
                        ));
                    }
                    for dim in src {
                        match dim {
                            DimExpr::Affine(d) if d.is_static() => {}
                            _ => return fail("pack requires static logical extents".into()),
                        }
                    }
                    if node.result_shape.len() != 2 * tiles.len() {
                        return fail("pack result must double the rank".into());
                    }
                }
                OpKind::PackedMatmul => {
                    if node.operands.len() != 2 {
                        return fail("packed_matmul takes exactly 2 operands".into());
                    }
                    let (a, b) = (shape_of(&node.operands[0]), shape_of(&node.operands[1]));
                    if a.len() != 4 || b.len() != 4 {
                        return fail("packed_matmul operands must be rank 4".into());
                    }
                    if a[1] != b[0] {
                        return fail(format!(
                            "k tile counts disagree: {} vs {}",
                            a[1].render(),
                            b[0].render()
                        ));
                    }
                    if a[3] != b[2] {
                        return fail(format!(
                            "k tile sizes disagree: {} vs {}",
                            a[3].render(),
                            b[2].render()
                        ));
                    }
                    if node.result_shape != vec![a[0], b[1], a[2], b[3]] {
                        return fail("packed_matmul result shape mismatch".into());
                    }
                }
                OpKind::Unpack { rows, cols } => {
                    if node.operands.len() != 1 {
                        return fail("unpack takes exactly 1 operand".into());
                    }
                    if shape_of(&node.operands[0]).len() != 4 {
                        return fail("unpack operand must be rank 4".into());
                    }
                    if node.result_shape != vec![DimExpr::fixed(*rows), DimExpr::fixed(*cols)] {
                        return fail("unpack result shape mismatch".into());
                    }
                }
                OpKind::Elementwise { op, packed } => {
                    if node.operands.len() != op.operand_count() {
                        return fail(format!(
                            "{} takes {} operands",
                            op.name(),
                            op.operand_count()
                        ));
                    }
                    let first = shape_of(&node.operands[0]);
                    let want_rank = if *packed { 4 } else { 2 };
                    if first.len() != want_rank {
                        return fail(format!(
                            "{} operand must be rank {want_rank}",
                            node.kind.name()
                        ));
                    }
                    match op {
                        EwKind::BiasAddRow => {
                            let bias = shape_of(&node.operands[1]);
                            if *packed {
                                // bias packed along n_r: [N_o, n_r]
                                if bias.len() != 2 || bias[0] != first[1] || bias[1] != first[3] {
                                    return fail("packed bias must have shape [N_o, n_r]".into());
                                }
                            } else if bias.len() != 1 || bias[0] != first[1] {
                                return fail("bias must be a length-N row".into());
                            }
                        }
                        EwKind::Add | EwKind::Mul => {
                            if shape_of(&node.operands[1]) != first {
                                return fail(format!("{} operands must share a shape", op.name()));
                            }
                        }
                        EwKind::Relu => {}
                    }
                    if &node.result_shape != first {
                        return fail("elementwise result shape mismatch".into());
                    }
                }
                OpKind::Output => {
                    if node.operands.len() != 1 {
                        return fail("output takes exactly 1 operand".into());
                    }
                }
            }
        }
        if self.outputs.is_empty() {
            return Err(Error::Verify {
                node: 0,
                message: "graph declares no outputs".into(),
            });
        }
        Ok(())
    }

    /// Deterministic line-per-op rendering. With `vl` given, every
    /// VL-symbolic dimension and tile attribute is concretized.
    pub fn print(&self, vl: Option<VectorLength>) -> String {
        let mut out = String::new();
        for (idx, node) in self.nodes.iter().enumerate() {
            let _ = write!(out, "%{idx} = {}", node.kind.name());
            if !node.operands.is_empty() {
                let args: Vec<String> = node.operands.iter().map(|o| format!("%{}", o.0)).collect();
                let _ = write!(out, "({})", args.join(", "));
            }
            match &node.kind {
                OpKind::Pack {
                    tiles,
                    outer_perm,
                    pad,
                } => {
                    let rendered: Vec<String> = tiles
                        .iter()
                        .map(|t| match vl {
                            Some(vl) => t.concretize(vl).to_string(),
                            None => t.render_affine(),
                        })
                        .collect();
                    let _ = write!(out, " tiles=[{}]", rendered.join(", "));
                    if tiles.len() > 1 {
                        let _ = write!(out, " perm={}", outer_perm.name());
                    }
                    let _ = write!(out, " pad={pad}");
                }
                OpKind::Unpack { rows, cols } => {
                    let _ = write!(out, " dims=[{rows}, {cols}]");
                }
                _ => {}
            }
            let dims: Vec<String> = node
                .result_shape
                .iter()
                .map(|d| match vl {
                    Some(vl) => d.concretize(vl).to_string(),
                    None => d.render(),
                })
                .collect();
            let _ = writeln!(out, " : [{}]", dims.join("x"));
        }
        out
    }
}

/// Build `Input(A), Input(B) -> Matmul -> epilogue -> Output`. BiasAddRow
/// epilogue entries add a length-N row input; Add/Mul entries add a full
/// M x N input.
pub fn build_matmul_graph(m: u32, n: u32, k: u32, epilogue: &[EwKind]) -> Result<Graph> {
    if m == 0 || n == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!(
            "matmul dims must be >= 1, got {m}x{n}x{k}"
        )));
    }
    let mut g = Graph::new();
    let a = g.add_input(vec![DimExpr::fixed(m), DimExpr::fixed(k)]);
    let b = g.add_input(vec![DimExpr::fixed(k), DimExpr::fixed(n)]);
    let mut cur = g.add_matmul(a, b);
    for &ew in epilogue {
        cur = match ew {
            EwKind::Relu => g.add_elementwise(EwKind::Relu, vec![cur]),
            EwKind::BiasAddRow => {
                let bias = g.add_input(vec![DimExpr::fixed(n)]);
                g.add_elementwise(EwKind::BiasAddRow, vec![cur, bias])
            }
            EwKind::Add | EwKind::Mul => {
                let rhs = g.add_input(vec![DimExpr::fixed(m), DimExpr::fixed(n)]);
                g.add_elementwise(ew, vec![cur, rhs])
            }
        };
    }
    g.add_output(cur);
    g.verify()?;
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_matmul_graph_is_four_nodes() {
        let g = build_matmul_graph(64, 64, 64, &[]).unwrap();
        assert_eq!(g.nodes.len(), 4);
        assert!(g.verify().is_ok());
    }

    #[test]
    fn epilogue_graph_adds_bias_input() {
        // 2 inputs + matmul + bias input + bias_add_row + relu + output
        let g = build_matmul_graph(64, 64, 64, &[EwKind::BiasAddRow, EwKind::Relu]).unwrap();
        assert_eq!(g.nodes.len(), 7);
        assert_eq!(g.inputs.len(), 3);
    }

    #[test]
    fn degenerate_dims_rejected() {
        assert!(matches!(
            build_matmul_graph(0, 4, 4, &[]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn verify_catches_inner_dim_mismatch() {
        let mut g = Graph::new();
        let a = g.add_input(vec![DimExpr::fixed(4), DimExpr::fixed(5)]);
        let b = g.add_input(vec![DimExpr::fixed(6), DimExpr::fixed(4)]);
        let c = g.add_matmul(a, b);
        g.add_output(c);
        match g.verify() {
            Err(Error::Verify { node, message }) => {
                assert_eq!(node, 2);
                assert!(message.contains("inner dims"), "{message}");
            }
            other => panic!("expected diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn verify_catches_tile_count_mismatch() {
        // Manual graph surgery: packed matmul whose operands disagree on K_o.
        let mut g = Graph::new();
        let a = g.add_input(vec![DimExpr::fixed(16), DimExpr::fixed(16)]);
        let b = g.add_input(vec![DimExpr::fixed(24), DimExpr::fixed(16)]);
        let ap = g.add_pack(
            a,
            vec![SymDim::fixed(8), SymDim::fixed(1)],
            OuterPerm::Identity,
            0.0,
        );
        let bp = g.add_pack(
            b,
            vec![
                SymDim::fixed(1),
                SymDim {
                    vl_coeff: 2,
                    constant: 0,
                },
            ],
            OuterPerm::Swapped,
            0.0,
        );
        let pm = g.add_packed_matmul(ap, bp);
        let up = g.add_unpack(pm, 16, 16);
        g.add_output(up);
        match g.verify() {
            Err(Error::Verify { node, message }) => {
                assert_eq!(node, pm.0);
                assert!(message.contains("k tile counts"), "{message}");
            }
            other => panic!("expected diagnostic, got {other:?}"),
        }
    }

    #[test]
    fn print_matches_expected_form() {
        let g = build_matmul_graph(64, 64, 64, &[]).unwrap();
        let text = g.print(None);
        assert!(text.contains("%2 = matmul(%0, %1) : [64x64]"), "{text}");
    }

    #[test]
    fn print_is_idempotent() {
        let g = build_matmul_graph(17, 9, 33, &[EwKind::Relu]).unwrap();
        assert_eq!(g.print(None), g.print(None));
    }

    #[test]
    fn tile_count_folds_static_tiles() {
        assert_eq!(DimExpr::tile_count(64, SymDim::fixed(8)), DimExpr::fixed(8));
        let sym = DimExpr::tile_count(
            64,
            SymDim {
                vl_coeff: 2,
                constant: 0,
            },
        );
        assert!(matches!(sym, DimExpr::TileCount { .. }));
        assert_eq!(sym.concretize(crate::layout::validate_vl(4).unwrap()), 8);
        assert_eq!(sym.concretize(crate::layout::validate_vl(16).unwrap()), 2);
    }
}
