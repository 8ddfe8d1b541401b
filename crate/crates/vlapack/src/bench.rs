//! Vector-length scaling study.
//!
//! Evaluates a set of workloads across vector lengths and cache sizes
//! under the cost model, reporting cycle counts and the speedup of each
//! vector length relative to the 128-bit baseline. Cycle counts come from
//! static histogram costing, so they are independent of input data and
//! identical to what a full run would report.

use crate::error::{Error, Result};
use crate::ir::{build_matmul_graph, DimExpr, EwKind, Graph};
use crate::layout::{validate_vl, LayoutConfig};
use crate::passes::{data_tile, propagate_packing};
use crate::pipeline::{estimate_graph, PipelineOptions};
use crate::vvm::CostModel;

pub const MLP_M: u32 = 32;
pub const MLP_HIDDEN: u32 = 576;
pub const MLP_OUT: u32 = 576;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    /// Square n x n x n FP32 matmul.
    Square(u32),
    /// Skinny-K matmul 2048 x 2048 x 512, LLM-layer aspect ratio.
    SkinnyK,
    /// Two-layer feed-forward block: X*W1 -> bias -> ReLU -> *W2.
    Mlp,
}

impl Workload {
    pub fn all() -> Vec<Workload> {
        let mut v: Vec<Workload> = [64, 128, 256, 512, 1024, 2048]
            .iter()
            .map(|n| Workload::Square(*n))
            .collect();
        v.push(Workload::SkinnyK);
        v.push(Workload::Mlp);
        v
    }

    pub fn name(&self) -> String {
        match self {
            Workload::Square(n) => format!("square{n}"),
            Workload::SkinnyK => "skinny_k".into(),
            Workload::Mlp => "mlp".into(),
        }
    }

    /// (m, n, k) as reported in the CSV. For the mlp this is the shape of
    /// each of its two matmuls.
    pub fn dims(&self) -> (u32, u32, u32) {
        match self {
            Workload::Square(n) => (*n, *n, *n),
            Workload::SkinnyK => (2048, 2048, 512),
            Workload::Mlp => (MLP_M, MLP_HIDDEN, MLP_OUT),
        }
    }

    pub fn graph(&self) -> Result<Graph> {
        match self {
            Workload::Square(n) => build_matmul_graph(*n, *n, *n, &[]),
            Workload::SkinnyK => build_matmul_graph(2048, 2048, 512, &[]),
            Workload::Mlp => build_mlp_graph(MLP_M, MLP_HIDDEN, MLP_OUT),
        }
    }
}

/// X (m x hidden) * W1 (hidden x hidden) -> BiasAddRow -> ReLU ->
/// * W2 (hidden x out). Inputs in order: X, W1, bias, W2.
pub fn build_mlp_graph(m: u32, hidden: u32, out: u32) -> Result<Graph> {
    if m == 0 || hidden == 0 || out == 0 {
        return Err(Error::InvalidArgument("mlp dims must be >= 1".into()));
    }
    let mut g = Graph::new();
    let x = g.add_input(vec![DimExpr::fixed(m), DimExpr::fixed(hidden)]);
    let w1 = g.add_input(vec![DimExpr::fixed(hidden), DimExpr::fixed(hidden)]);
    let h = g.add_matmul(x, w1);
    let bias = g.add_input(vec![DimExpr::fixed(hidden)]);
    let hb = g.add_elementwise(EwKind::BiasAddRow, vec![h, bias]);
    let hr = g.add_elementwise(EwKind::Relu, vec![hb]);
    let w2 = g.add_input(vec![DimExpr::fixed(hidden), DimExpr::fixed(out)]);
    let y = g.add_matmul(hr, w2);
    g.add_output(y);
    g.verify()?;
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub workloads: Vec<Workload>,
    /// Lane counts to evaluate; must include 4, the speedup baseline.
    pub vl_lanes: Vec<usize>,
    pub cache_mib: Vec<u64>,
    /// Recorded for input reproducibility; cycle counts are data-independent.
    pub seed: u64,
    pub bytes_per_cycle: u64,
    pub max_threads: usize,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            workloads: Workload::all(),
            vl_lanes: vec![4, 8, 16],
            cache_mib: vec![8, 16],
            seed: 0,
            bytes_per_cycle: 20,
            max_threads: std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub workload: String,
    pub m: u32,
    pub n: u32,
    pub k: u32,
    pub vl_bits: usize,
    pub cache_mib: u64,
    pub cycles_compute: u64,
    pub cycles_memory: u64,
    pub cycles_total: u64,
    pub speedup_vs_128: f64,
}

/// Total pipeline cycles for one workload cell.
pub fn estimate_workload(
    workload: Workload,
    lanes: usize,
    cache_mib: u64,
    bytes_per_cycle: u64,
) -> Result<(u64, u64, u64)> {
    let vl = validate_vl(lanes)?;
    let graph = workload.graph()?;
    let graph = data_tile(&graph, &LayoutConfig::outer_product_8x2vl())?;
    let graph = propagate_packing(&graph)?;
    let mut opts = PipelineOptions::new(vl);
    opts.cost_model = CostModel::default()
        .with_cache_bytes(cache_mib * 1024 * 1024)
        .with_bandwidth(bytes_per_cycle);
    let report = estimate_graph(&graph, &opts)?;
    Ok((
        report.cycles_compute(),
        report.cycles_memory(),
        report.cycles_total(),
    ))
}

/// Run the scaling study. Rows come back ordered by (workload, cache, vl);
/// cells are evaluated on up to `max_threads` threads, each cell owning
/// its own graphs and machine state.
pub fn run_scaling(spec: &BenchSpec) -> Result<Vec<BenchRow>> {
    if spec.workloads.is_empty() || spec.cache_mib.is_empty() {
        return Err(Error::InvalidArgument(
            "bench spec must be non-empty".into(),
        ));
    }
    if !spec.vl_lanes.contains(&4) {
        return Err(Error::InvalidArgument(
            "vl set must include 4 lanes, the 128-bit speedup baseline".into(),
        ));
    }
    let mut lanes = spec.vl_lanes.clone();
    lanes.sort_unstable();
    lanes.dedup();
    for l in &lanes {
        validate_vl(*l)?;
    }
    let mut caches = spec.cache_mib.clone();
    caches.sort_unstable();
    caches.dedup();

    let mut cells = Vec::new();
    for w in &spec.workloads {
        for c in &caches {
            for l in &lanes {
                cells.push((*w, *c, *l));
            }
        }
    }

    let threads = spec.max_threads.max(1).min(cells.len().max(1));
    let mut results: Vec<Option<Result<(u64, u64, u64)>>> = vec![None; cells.len()];
    let chunk = cells.len().div_ceil(threads);
    std::thread::scope(|s| {
        for (cell_chunk, out_chunk) in cells.chunks(chunk).zip(results.chunks_mut(chunk)) {
            let bpc = spec.bytes_per_cycle;
            s.spawn(move || {
                for ((w, c, l), slot) in cell_chunk.iter().zip(out_chunk.iter_mut()) {
                    *slot = Some(estimate_workload(*w, *l, *c, bpc));
                }
            });
        }
    });

    let mut cycles = Vec::with_capacity(cells.len());
    for r in results {
        cycles.push(r.expect("all cells evaluated")?);
    }

    let mut rows = Vec::with_capacity(cells.len());
    for (i, (w, cache, l)) in cells.iter().enumerate() {
        let (compute, memory, total) = cycles[i];
        // the vl=4 row of the same (workload, cache)
        let base_idx = cells
            .iter()
            .position(|(bw, bc, bl)| bw == w && bc == cache && *bl == 4)
            .expect("baseline present");
        let base_total = cycles[base_idx].2;
        let (m, n, k) = w.dims();
        rows.push(BenchRow {
            workload: w.name(),
            m,
            n,
            k,
            vl_bits: l * 32,
            cache_mib: *cache,
            cycles_compute: compute,
            cycles_memory: memory,
            cycles_total: total,
            speedup_vs_128: base_total as f64 / total as f64,
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(
        "workload,m,n,k,vl_bits,cache_mib,cycles_compute,cycles_memory,cycles_total,speedup_vs_128\n",
    );
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{:.4}\n",
            r.workload,
            r.m,
            r.n,
            r.k,
            r.vl_bits,
            r.cache_mib,
            r.cycles_compute,
            r.cycles_memory,
            r.cycles_total,
            r.speedup_vs_128
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mlp_graph_shape() {
        let g = build_mlp_graph(32, 576, 576).unwrap();
        // 4 inputs, 2 matmuls, bias, relu, output
        assert_eq!(g.nodes.len(), 9);
        assert_eq!(g.inputs.len(), 4);
    }

    #[test]
    fn scaling_rows_ordered_and_baselined() {
        let spec = BenchSpec {
            workloads: vec![Workload::Square(64), Workload::Mlp],
            vl_lanes: vec![4, 8],
            cache_mib: vec![8, 16],
            max_threads: 2,
            ..BenchSpec::default()
        };
        let rows = run_scaling(&spec).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        assert_eq!(rows[0].workload, "square64");
        assert_eq!(rows[0].vl_bits, 128);
        assert_eq!(rows[0].cache_mib, 8);
        assert_eq!(rows[1].vl_bits, 256);
        assert_eq!(rows[2].cache_mib, 16);
        for r in &rows {
            if r.vl_bits == 128 {
                assert!((r.speedup_vs_128 - 1.0).abs() < 1e-12);
            } else {
                assert!(r.speedup_vs_128 > 1.0, "{r:?}");
            }
        }
    }

    #[test]
    fn scaling_requires_baseline() {
        let spec = BenchSpec {
            vl_lanes: vec![8, 16],
            ..BenchSpec::default()
        };
        assert!(run_scaling(&spec).is_err());
    }

    #[test]
    fn skinny_k_scales_like_compute_bound() {
        let base = estimate_workload(Workload::SkinnyK, 4, 16, 20).unwrap().2;
        let wide = estimate_workload(Workload::SkinnyK, 16, 16, 20).unwrap().2;
        let speedup = base as f64 / wide as f64;
        assert!((3.0..=4.0).contains(&speedup), "{speedup:.4}");
    }

    #[test]
    fn matmul_stage_regimes() {
        use crate::layout::validate_vl;
        use crate::passes::data_tile;
        use crate::pipeline::estimate_graph;

        let stage_result = |n: u32, lanes: usize, cache_mib: u64| {
            let g = Workload::Square(n).graph().unwrap();
            let g = data_tile(&g, &LayoutConfig::outer_product_8x2vl()).unwrap();
            let mut opts = PipelineOptions::new(validate_vl(lanes).unwrap());
            opts.cost_model = CostModel::default().with_cache_bytes(cache_mib * 1024 * 1024);
            let report = estimate_graph(&g, &opts).unwrap();
            report
                .stages
                .iter()
                .find(|s| s.name.contains("packed_matmul"))
                .unwrap()
                .result
                .clone()
        };
        // 12 MiB of operands against a 16 MiB cache: the reduction's reuse
        // set stays resident and the matmul is compute-bound.
        let fits = stage_result(1024, 16, 16);
        assert_eq!(fits.cycles_total, fits.cycles_compute);
        assert!(fits.cycles_memory < fits.cycles_compute);
        // 48 MiB of operands against 8 MiB: refetch regime, the memory
        // term dominates even at VL=16.
        let thrash = stage_result(2048, 16, 8);
        assert_eq!(thrash.cycles_total, thrash.cycles_memory);
        assert!(thrash.cycles_memory > thrash.cycles_compute);
    }

    #[test]
    fn csv_header_stable() {
        let rows = run_scaling(&BenchSpec {
            workloads: vec![Workload::Square(64)],
            vl_lanes: vec![4],
            cache_mib: vec![16],
            max_threads: 1,
            ..BenchSpec::default()
        })
        .unwrap();
        let csv = rows_to_csv(&rows);
        assert!(csv.starts_with(
            "workload,m,n,k,vl_bits,cache_mib,cycles_compute,cycles_memory,cycles_total,speedup_vs_128\n"
        ));
        assert_eq!(csv.lines().count(), 2);
    }
}
