//! vlapack command line: compile and run matmuls on the scalable-vector
//! VM, dump IR, trace instructions, and run the vector-length scaling
//! study.

use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

use vlapack::bench::{rows_to_csv, run_scaling, BenchSpec};
use vlapack::ir::{build_matmul_graph, Graph};
use vlapack::layout::{select_layout, validate_vl, DType, LayoutConfig, VectorLength};
use vlapack::passes::{data_tile, propagate_packing};
use vlapack::pipeline::{execute_graph, PipelineOptions, PipelineReport};
use vlapack::rng::{random_tensor, SplitMix64};
use vlapack::tensor::{matmul_oracle, pack, DenseTensor, OuterPerm};
use vlapack::vvm::CostModel;
use vlapack::Error;

fn parse_vl(s: &str) -> Result<usize, String> {
    let lanes: usize = s
        .parse()
        .map_err(|_| format!("invalid vector length: {s}"))?;
    validate_vl(lanes).map_err(|_| format!("invalid vector length: {lanes} lanes"))?;
    Ok(lanes)
}

#[derive(Parser)]
#[command(
    name = "vlapack",
    version,
    about = "vector-length-agnostic packed GEMM toolkit"
)]
struct Cli {
    /// Vector length in FP32 lanes (power of two in [4, 64]); defaults
    /// to 4. For dump-ir, passing it concretizes VL-symbolic dims.
    #[arg(long, global = true, value_parser = parse_vl)]
    vl: Option<usize>,
    /// Seed for generated inputs
    #[arg(long, global = true, default_value = "0")]
    seed: u64,
    /// Modeled last-level cache capacity in MiB
    #[arg(long, global = true, default_value = "16")]
    cache_mib: u64,
    /// Modeled memory bandwidth in bytes per cycle
    #[arg(long, global = true, default_value = "20")]
    bandwidth: u64,
    /// CSV output path (bench scaling)
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Verify results against the scalar oracle (matmul)
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pack a matrix into the vector-length-dependent tiled layout
    Pack(PackArgs),
    /// Compile a matmul, run it on the VM, and report cycles
    Matmul(MatmulArgs),
    /// Benchmarks under the cost model
    Bench {
        #[command(subcommand)]
        which: BenchCommand,
    },
    /// Print the op graph after a chosen pass
    DumpIr(DumpIrArgs),
    /// Run a matmul with per-instruction tracing
    Trace(TraceArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Vector-length scaling study; writes one CSV row per
    /// (workload, cache, vl) cell to the --csv path
    Scaling,
}

#[derive(Args)]
struct PackArgs {
    /// Input tensor (VLT1); generated from the seed when omitted
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(short = 'm', long, default_value = "8")]
    rows: u32,
    #[arg(short = 'n', long, default_value = "8")]
    cols: u32,
    /// Which matmul operand this matrix is: a (m_r x k_r tiles),
    /// b (k_r x n_r, swapped outer order) or c (m_r x n_r)
    #[arg(long, default_value = "a")]
    role: PackRole,
    /// Write the packed buffer as a 1 x len VLT1 tensor
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PackRole {
    A,
    B,
    C,
}

#[derive(Args)]
struct MatmulArgs {
    #[arg(short = 'm', long)]
    m: u32,
    #[arg(short = 'n', long)]
    n: u32,
    #[arg(short = 'k', long)]
    k: u32,
    /// Left operand file (VLT1); generated from the seed when omitted
    #[arg(long)]
    a: Option<PathBuf>,
    /// Right operand file (VLT1)
    #[arg(long)]
    b: Option<PathBuf>,
    /// Where to write the result (VLT1)
    #[arg(long, short = 'o')]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PassName {
    /// Initial graph
    None,
    /// After the pack/packed-matmul/unpack decomposition
    DataTile,
    /// After packing propagation across elementwise ops
    Propagate,
}

#[derive(Args)]
struct DumpIrArgs {
    #[arg(short = 'm', long, default_value = "64")]
    m: u32,
    #[arg(short = 'n', long, default_value = "64")]
    n: u32,
    #[arg(short = 'k', long, default_value = "64")]
    k: u32,
    /// Append bias_add_row and relu to the matmul
    #[arg(long)]
    epilogue: bool,
    /// Print the graph after this pass
    #[arg(long, value_enum, default_value = "none")]
    after: PassName,
}

#[derive(Args)]
struct TraceArgs {
    #[arg(short = 'm', long)]
    m: u32,
    #[arg(short = 'n', long)]
    n: u32,
    #[arg(short = 'k', long)]
    k: u32,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode, Error> {
    let vl = validate_vl(cli.vl.unwrap_or(4))?;
    match &cli.command {
        Command::Pack(args) => cmd_pack(cli, args, vl),
        Command::Matmul(args) => cmd_matmul(cli, args, vl),
        Command::Bench {
            which: BenchCommand::Scaling,
        } => cmd_bench_scaling(cli),
        Command::DumpIr(args) => cmd_dump_ir(args, cli.vl.map(|_| vl)),
        Command::Trace(args) => cmd_trace(cli, args, vl),
    }
}

fn production_config() -> LayoutConfig {
    select_layout(DType::F32, validate_vl(4).unwrap()).expect("f32 layout is registered")
}

fn cost_model(cli: &Cli) -> CostModel {
    CostModel::default()
        .with_cache_bytes(cli.cache_mib * 1024 * 1024)
        .with_bandwidth(cli.bandwidth)
}

fn load_or_random(
    path: &Option<PathBuf>,
    rows: usize,
    cols: usize,
    rng: &mut SplitMix64,
) -> Result<DenseTensor, Error> {
    match path {
        Some(p) => {
            let t = vlapack::io::read_tensor_file(p)?;
            if t.rows() != rows || t.cols() != cols {
                return Err(Error::InvalidArgument(format!(
                    "{} is {}x{}, expected {rows}x{cols}",
                    p.display(),
                    t.rows(),
                    t.cols()
                )));
            }
            Ok(t)
        }
        None => Ok(random_tensor(rows, cols, rng)),
    }
}

fn cmd_pack(cli: &Cli, args: &PackArgs, vl: VectorLength) -> Result<ExitCode, Error> {
    let src = match &args.input {
        Some(p) => vlapack::io::read_tensor_file(p)?,
        None => {
            let mut rng = SplitMix64::new(cli.seed);
            random_tensor(args.rows as usize, args.cols as usize, &mut rng)
        }
    };
    let (m_r, n_r, k_r) = production_config().eval_tiles(vl);
    let (tr, tc, perm) = match args.role {
        PackRole::A => (m_r, k_r, OuterPerm::Identity),
        PackRole::B => (k_r, n_r, OuterPerm::Swapped),
        PackRole::C => (m_r, n_r, OuterPerm::Identity),
    };
    let packed = pack(&src, tr, tc, perm, 0.0)?;
    let logical = src.rows() * src.cols();
    let total = packed.data().len();
    println!(
        "packed {}x{} as {}x{} tiles ({}), outer {}x{}, {} elements ({} padding)",
        src.rows(),
        src.cols(),
        tr,
        tc,
        packed.outer_perm().name(),
        packed.outer_rows(),
        packed.outer_cols(),
        total,
        total - logical
    );
    if let Some(out) = &args.output {
        let flat = DenseTensor::new(1, total, packed.into_data())?;
        vlapack::io::write_tensor_file(out, &flat)?;
        println!("wrote {}", out.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn lowered_graph(m: u32, n: u32, k: u32) -> Result<Graph, Error> {
    let g = build_matmul_graph(m, n, k, &[])?;
    let g = data_tile(&g, &production_config())?;
    propagate_packing(&g)
}

fn print_report(report: &PipelineReport) {
    println!(
        "{:<24} {:>14} {:>14} {:>14}",
        "stage", "compute", "memory", "total"
    );
    for s in &report.stages {
        println!(
            "{:<24} {:>14} {:>14} {:>14}",
            s.name, s.result.cycles_compute, s.result.cycles_memory, s.result.cycles_total
        );
    }
    println!(
        "{:<24} {:>14} {:>14} {:>14}",
        "pipeline",
        report.cycles_compute(),
        report.cycles_memory(),
        report.cycles_total()
    );
    println!("histogram: {}", report.histogram());
}

fn cmd_matmul(cli: &Cli, args: &MatmulArgs, vl: VectorLength) -> Result<ExitCode, Error> {
    let g = lowered_graph(args.m, args.n, args.k)?;
    let mut rng = SplitMix64::new(cli.seed);
    let a = load_or_random(&args.a, args.m as usize, args.k as usize, &mut rng)?;
    let b = load_or_random(&args.b, args.k as usize, args.n as usize, &mut rng)?;
    let mut opts = PipelineOptions::new(vl);
    opts.cost_model = cost_model(cli);
    let exec = execute_graph(&g, &[a.clone(), b.clone()], &opts)?;
    println!(
        "matmul {}x{}x{} at VL={} ({}-bit)",
        args.m,
        args.n,
        args.k,
        vl.lanes(),
        vl.bits()
    );
    print_report(&exec.report);
    if let Some(out) = &args.out {
        vlapack::io::write_tensor_file(out, &exec.outputs[0])?;
        println!("wrote {}", out.display());
    }
    if cli.check {
        let expect = matmul_oracle(&a, &b)?;
        if exec.outputs[0].bit_eq(&expect) {
            println!("check: PASS (bit-exact)");
        } else {
            println!("check: FAIL");
            return Ok(ExitCode::FAILURE);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench_scaling(cli: &Cli) -> Result<ExitCode, Error> {
    let csv_path = cli
        .csv
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("bench scaling needs --csv <path>".into()))?;
    let max_threads = std::env::var("VLAPACK_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|v| *v >= 1)
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        });
    let spec = BenchSpec {
        seed: cli.seed,
        bytes_per_cycle: cli.bandwidth,
        max_threads,
        ..BenchSpec::default()
    };
    let rows = run_scaling(&spec)?;
    let csv = rows_to_csv(&rows);
    std::fs::write(csv_path, &csv)?;
    println!("wrote {} rows to {}", rows.len(), csv_path.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_dump_ir(args: &DumpIrArgs, vl: Option<VectorLength>) -> Result<ExitCode, Error> {
    let epilogue: &[vlapack::ir::EwKind] = if args.epilogue {
        &[vlapack::ir::EwKind::BiasAddRow, vlapack::ir::EwKind::Relu]
    } else {
        &[]
    };
    let g = build_matmul_graph(args.m, args.n, args.k, epilogue)?;
    let g = match args.after {
        PassName::None => g,
        PassName::DataTile => data_tile(&g, &production_config())?,
        PassName::Propagate => propagate_packing(&data_tile(&g, &production_config())?)?,
    };
    print!("{}", g.print(vl));
    Ok(ExitCode::SUCCESS)
}

fn cmd_trace(cli: &Cli, args: &TraceArgs, vl: VectorLength) -> Result<ExitCode, Error> {
    let g = lowered_graph(args.m, args.n, args.k)?;
    let mut rng = SplitMix64::new(cli.seed);
    let a = random_tensor(args.m as usize, args.k as usize, &mut rng);
    let b = random_tensor(args.k as usize, args.n as usize, &mut rng);
    let mut opts = PipelineOptions::new(vl);
    opts.cost_model = cost_model(cli);
    opts.collect_trace = true;
    let exec = execute_graph(&g, &[a, b], &opts)?;
    use std::io::Write;
    let stdout = std::io::stdout();
    let mut w = std::io::BufWriter::new(stdout.lock());
    for (stage, outcome) in &exec.run_details {
        writeln!(w, "# {stage}")?;
        for line in &outcome.trace {
            writeln!(w, "{line}")?;
        }
    }
    write!(w, "{}", exec.report.histogram().to_csv())?;
    w.flush()?;
    Ok(ExitCode::SUCCESS)
}
