//! Graph execution and cost estimation.
//!
//! Each graph node becomes one stage: pack/unpack stages move data on the
//! host and are costed as pure memory streaming, while packed matmuls and
//! elementwise ops are lowered to VVM programs and run (or statically
//! costed) at the machine's vector length. Every stage gets its own
//! roofline; a pipeline's total is the sum of its stage totals.

use crate::error::{Error, Result};
use crate::ir::{DimExpr, EwKind, Graph, NodeId, OpKind};
use crate::layout::{LayoutConfig, VectorLength};
use crate::passes::{
    default_blocking, dim_expr, emit_dense_bias_add, emit_dense_elementwise, emit_packed_bias_add,
    emit_packed_elementwise, tile_loops, BlockingFactors, PackedMatmulInfo,
};
use crate::tensor::{pack, unpack, DenseTensor, PackedTensor};
use crate::vvm::{
    cost, static_histogram, CostModel, ExecResult, Histogram, Machine, RunOutcome, VvmProgram,
    WorkingSet,
};

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub vl: VectorLength,
    pub config: LayoutConfig,
    /// Blocking override; by default each matmul picks
    /// `default_blocking` for its tile counts.
    pub blocking: Option<BlockingFactors>,
    pub cost_model: CostModel,
    pub collect_trace: bool,
}

impl PipelineOptions {
    pub fn new(vl: VectorLength) -> Self {
        Self {
            vl,
            config: LayoutConfig::outer_product_8x2vl(),
            blocking: None,
            cost_model: CostModel::default(),
            collect_trace: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub name: String,
    pub result: ExecResult,
}

/// Per-stage roofline results. The roofline identity holds within each
/// stage; pipeline totals are sums over stages.
#[derive(Debug, Clone, Default)]
pub struct PipelineReport {
    pub stages: Vec<StageReport>,
}

impl PipelineReport {
    fn push(&mut self, name: String, result: ExecResult) {
        self.stages.push(StageReport { name, result });
    }

    pub fn cycles_total(&self) -> u64 {
        self.stages.iter().map(|s| s.result.cycles_total).sum()
    }

    pub fn cycles_compute(&self) -> u64 {
        self.stages.iter().map(|s| s.result.cycles_compute).sum()
    }

    pub fn cycles_memory(&self) -> u64 {
        self.stages.iter().map(|s| s.result.cycles_memory).sum()
    }

    pub fn dram_bytes(&self) -> u64 {
        self.stages.iter().map(|s| s.result.dram_bytes).sum()
    }

    pub fn histogram(&self) -> Histogram {
        let mut h = Histogram::default();
        for s in &self.stages {
            h.merge(&s.result.histogram);
        }
        h
    }
}

/// Result of running a graph on concrete inputs.
#[derive(Debug)]
pub struct Execution {
    pub outputs: Vec<DenseTensor>,
    pub report: PipelineReport,
    /// Per-program run details (trace lines, touched addresses), collected
    /// only when `collect_trace` is set. One entry per VVM stage.
    pub run_details: Vec<(String, RunOutcome)>,
}

enum Value {
    Dense(DenseTensor),
    Packed(PackedTensor),
    Unit,
}

impl Value {
    fn dense(&self) -> Result<&DenseTensor> {
        match self {
            Value::Dense(t) => Ok(t),
            _ => Err(Error::InternalConsistency("expected a dense value".into())),
        }
    }

    fn packed(&self) -> Result<&PackedTensor> {
        match self {
            Value::Packed(t) => Ok(t),
            _ => Err(Error::InternalConsistency("expected a packed value".into())),
        }
    }
}

fn elem_bytes(elems: usize) -> u64 {
    elems as u64 * 4
}

/// Concrete element count of a node's result at `vl`.
fn concrete_len(shape: &[DimExpr], vl: VectorLength) -> usize {
    shape.iter().map(|d| d.concretize(vl)).product()
}

struct MatmulLowering {
    program: VvmProgram,
    ws: WorkingSet,
}

fn lower_matmul(
    graph: &Graph,
    id: NodeId,
    opts: &PipelineOptions,
) -> Result<(MatmulLowering, PackedMatmulInfo)> {
    let info = PackedMatmulInfo::from_node(graph, id, opts.vl)?;
    let blocking = opts
        .blocking
        .unwrap_or(default_blocking(info.m_o, info.n_o, info.k_o));
    let nest = tile_loops(&info, &blocking);
    let program = crate::passes::vectorize(&nest, &opts.config)?;
    let node = graph.node(id);
    let a_len = concrete_len(&graph.node(node.operands[0]).result_shape, opts.vl);
    let b_len = concrete_len(&graph.node(node.operands[1]).result_shape, opts.vl);
    let c_len = concrete_len(&node.result_shape, opts.vl);
    // B's column panels are re-swept once per outer block pass; they stay
    // resident when B_pack fits in cache. If it does not, the reduction
    // thrashes and every k-tile pass re-streams the operands.
    let ws = WorkingSet {
        compulsory_bytes: elem_bytes(a_len + b_len + c_len),
        reuse_bytes: elem_bytes(b_len),
        refetch_factor: info.k_o as u64,
    };
    Ok((MatmulLowering { program, ws }, info))
}

struct ElementwiseLowering {
    program: VvmProgram,
    ws: WorkingSet,
}

fn lower_elementwise(
    graph: &Graph,
    id: NodeId,
    opts: &PipelineOptions,
) -> Result<ElementwiseLowering> {
    let node = graph.node(id);
    let (op, packed) = match node.kind {
        OpKind::Elementwise { op, packed } => (op, packed),
        _ => unreachable!(),
    };
    let out_len = concrete_len(&node.result_shape, opts.vl);
    let mut bytes = elem_bytes(out_len) * 2; // read x, write y
    if op.operand_count() == 2 {
        bytes += elem_bytes(concrete_len(
            &graph.node(node.operands[1]).result_shape,
            opts.vl,
        ));
    }
    let program = if packed {
        let shape = &node.result_shape;
        let lanes = opts.vl.lanes();
        let m_r = shape[2].concretize(opts.vl);
        let n_r = shape[3].concretize(opts.vl);
        if !n_r.is_multiple_of(lanes) {
            return Err(Error::InternalConsistency(format!(
                "packed elementwise needs VL-multiple n_r, got {n_r}"
            )));
        }
        let segments = (n_r / lanes) as i64;
        let m_o = dim_expr(shape[0]);
        let n_o = dim_expr(shape[1]);
        match op {
            EwKind::BiasAddRow => emit_packed_bias_add(m_o, n_o, m_r as i64, segments),
            _ => {
                let chunks = crate::vvm::mul(
                    crate::vvm::mul(m_o, n_o),
                    crate::vvm::cnst(m_r as i64 * segments),
                );
                emit_packed_elementwise(op, chunks)?
            }
        }
    } else {
        let rows = node.result_shape[0].concretize(opts.vl);
        let cols = node.result_shape[1].concretize(opts.vl);
        match op {
            EwKind::BiasAddRow => emit_dense_bias_add(rows, cols),
            _ => emit_dense_elementwise(op, rows * cols)?,
        }
    };
    Ok(ElementwiseLowering {
        program,
        ws: WorkingSet::streaming(bytes),
    })
}

fn run_program(
    program: &VvmProgram,
    buffers: Vec<Vec<f32>>,
    opts: &PipelineOptions,
    ws: &WorkingSet,
) -> Result<(Vec<f32>, ExecResult, RunOutcome)> {
    let mut machine = Machine::new(opts.vl);
    machine.set_trace(opts.collect_trace);
    machine.bind_buffers(program, buffers)?;
    let outcome = machine.run(program)?;
    let result = cost(&outcome.histogram, opts.vl, &opts.cost_model, ws);
    // Output buffer is declared last by every emitter in this crate.
    let out = machine.take_buffer(crate::vvm::BufferId(program.buffers.len() - 1));
    Ok((out, result, outcome))
}

/// Execute a lowered graph on concrete inputs, binding them to the graph's
/// input nodes in declaration order.
pub fn execute_graph(
    graph: &Graph,
    inputs: &[DenseTensor],
    opts: &PipelineOptions,
) -> Result<Execution> {
    graph.verify()?;
    if inputs.len() != graph.inputs.len() {
        return Err(Error::InvalidArgument(format!(
            "graph declares {} inputs, {} given",
            graph.inputs.len(),
            inputs.len()
        )));
    }
    let mut values: Vec<Value> = Vec::with_capacity(graph.nodes.len());
    let mut report = PipelineReport::default();
    let mut run_details = Vec::new();
    let mut outputs = Vec::new();
    let mut next_input = 0usize;

    for (idx, node) in graph.nodes.iter().enumerate() {
        let id = NodeId(idx);
        let stage = format!("%{idx} {}", stage_name(&node.kind));
        let value = match &node.kind {
            OpKind::Input => {
                let given = &inputs[next_input];
                next_input += 1;
                check_input_shape(node, given, opts.vl)?;
                Value::Dense(given.clone())
            }
            OpKind::Matmul => {
                return Err(Error::InvalidArgument(
                    "graph contains an unlowered matmul; run data_tile first".into(),
                ))
            }
            OpKind::Pack {
                tiles,
                outer_perm,
                pad,
            } => {
                let src = values[node.operands[0].0].dense()?;
                let (tr, tc) = match tiles.len() {
                    1 => (1, tiles[0].concretize(opts.vl)),
                    2 => (tiles[0].concretize(opts.vl), tiles[1].concretize(opts.vl)),
                    n => {
                        return Err(Error::InternalConsistency(format!(
                            "pack of rank-{n} values is not supported"
                        )))
                    }
                };
                let packed = pack(src, tr, tc, *outer_perm, *pad)?;
                let bytes = elem_bytes(src.data().len() + packed.data().len());
                report.push(stage, streaming_result(bytes, &opts.cost_model));
                values.push(Value::Packed(packed));
                continue;
            }
            OpKind::PackedMatmul => {
                let (lowering, info) = lower_matmul(graph, id, opts)?;
                let a = values[node.operands[0].0].packed()?;
                let b = values[node.operands[1].0].packed()?;
                let c = PackedTensor::new_filled(
                    info.m,
                    info.n,
                    info.m_r,
                    info.n_r,
                    crate::tensor::OuterPerm::Identity,
                    0.0,
                )?;
                let bufs = vec![a.data().to_vec(), b.data().to_vec(), c.data().to_vec()];
                let (out, result, outcome) =
                    run_program(&lowering.program, bufs, opts, &lowering.ws)?;
                if opts.collect_trace {
                    run_details.push((stage.clone(), outcome));
                }
                report.push(stage, result);
                values.push(Value::Packed(c.with_data(out)?));
                continue;
            }
            OpKind::Unpack { .. } => {
                let src = values[node.operands[0].0].packed()?;
                let dense = unpack(src);
                let bytes = elem_bytes(src.data().len() + dense.data().len());
                report.push(stage, streaming_result(bytes, &opts.cost_model));
                values.push(Value::Dense(dense));
                continue;
            }
            OpKind::Elementwise { op, packed } => {
                let lowering = lower_elementwise(graph, id, opts)?;
                let mut bufs = Vec::new();
                if *packed {
                    let x = values[node.operands[0].0].packed()?;
                    bufs.push(x.data().to_vec());
                    if op.operand_count() == 2 {
                        bufs.push(values[node.operands[1].0].packed()?.data().to_vec());
                    }
                    bufs.push(vec![0.0; x.data().len()]);
                    let geometry = x.clone();
                    let (out, result, outcome) =
                        run_program(&lowering.program, bufs, opts, &lowering.ws)?;
                    if opts.collect_trace {
                        run_details.push((stage.clone(), outcome));
                    }
                    report.push(stage, result);
                    values.push(Value::Packed(geometry.with_data(out)?));
                } else {
                    let x = values[node.operands[0].0].dense()?;
                    bufs.push(x.data().to_vec());
                    if op.operand_count() == 2 {
                        bufs.push(values[node.operands[1].0].dense()?.data().to_vec());
                    }
                    bufs.push(vec![0.0; x.data().len()]);
                    let (rows, cols) = (x.rows(), x.cols());
                    let (out, result, outcome) =
                        run_program(&lowering.program, bufs, opts, &lowering.ws)?;
                    if opts.collect_trace {
                        run_details.push((stage.clone(), outcome));
                    }
                    report.push(stage, result);
                    values.push(Value::Dense(DenseTensor::new(rows, cols, out)?));
                }
                continue;
            }
            OpKind::Output => {
                let src = values[node.operands[0].0].dense()?;
                outputs.push(src.clone());
                Value::Unit
            }
        };
        values.push(value);
    }
    Ok(Execution {
        outputs,
        report,
        run_details,
    })
}

/// Cost a lowered graph without executing it: instruction histograms come
/// from program structure, memory traffic from buffer geometry. Produces
/// exactly the cycle counts `execute_graph` would report.
pub fn estimate_graph(graph: &Graph, opts: &PipelineOptions) -> Result<PipelineReport> {
    graph.verify()?;
    let mut report = PipelineReport::default();
    for (idx, node) in graph.nodes.iter().enumerate() {
        let id = NodeId(idx);
        let stage = format!("%{idx} {}", stage_name(&node.kind));
        match &node.kind {
            OpKind::Input | OpKind::Output => {}
            OpKind::Matmul => {
                return Err(Error::InvalidArgument(
                    "graph contains an unlowered matmul; run data_tile first".into(),
                ))
            }
            OpKind::Pack { .. } | OpKind::Unpack { .. } => {
                let src_len = concrete_len(&graph.node(node.operands[0]).result_shape, opts.vl);
                let dst_len = concrete_len(&node.result_shape, opts.vl);
                let bytes = elem_bytes(src_len + dst_len);
                report.push(stage, streaming_result(bytes, &opts.cost_model));
            }
            OpKind::PackedMatmul => {
                let (lowering, _) = lower_matmul(graph, id, opts)?;
                let hist = static_histogram(&lowering.program, opts.vl);
                report.push(stage, cost(&hist, opts.vl, &opts.cost_model, &lowering.ws));
            }
            OpKind::Elementwise { .. } => {
                let lowering = lower_elementwise(graph, id, opts)?;
                let hist = static_histogram(&lowering.program, opts.vl);
                report.push(stage, cost(&hist, opts.vl, &opts.cost_model, &lowering.ws));
            }
        }
    }
    Ok(report)
}

fn stage_name(kind: &OpKind) -> String {
    match kind {
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

fn streaming_result(bytes: u64, model: &CostModel) -> ExecResult {
    cost(
        &Histogram::default(),
        crate::layout::validate_vl(4).unwrap(),
        model,
        &WorkingSet::streaming(bytes),
    )
}

fn check_input_shape(
    node: &crate::ir::OpNode,
    given: &DenseTensor,
    vl: VectorLength,
) -> Result<()> {
    let shape = &node.result_shape;
    let ok = match shape.len() {
        1 => given.rows() == 1 && given.cols() == shape[0].concretize(vl),
        2 => given.rows() == shape[0].concretize(vl) && given.cols() == shape[1].concretize(vl),
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "input tensor {}x{} does not match declared shape",
            given.rows(),
            given.cols()
        )))
    }
}
