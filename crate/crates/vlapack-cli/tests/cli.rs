//! End-to-end tests of the vlapack binary.

use std::process::{Command, Output};

fn vlapack(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_vlapack"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn matmul_check_passes() {
    let out = vlapack(&[
        "matmul", "-m", "64", "-n", "64", "-k", "64", "--vl", "4", "--seed", "7", "--check",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("check: PASS (bit-exact)"), "{text}");
    assert!(text.contains("histogram:"), "{text}");
}

#[test]
fn invalid_vector_length_exits_2() {
    let out = vlapack(&["matmul", "-m", "8", "-n", "8", "-k", "8", "--vl", "6"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("invalid vector length"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn degenerate_dims_exit_nonzero() {
    let out = vlapack(&["matmul", "-m", "0", "-n", "8", "-k", "8"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("invalid argument"),
        "{}",
        stderr(&out)
    );
}

#[test]
fn outputs_identical_across_vl() {
    let dir = tempfile::tempdir().unwrap();
    let run = |vl: &str, name: &str| -> Vec<u8> {
        let path = dir.path().join(name);
        let out = vlapack(&[
            "matmul",
            "-m",
            "33",
            "-n",
            "29",
            "-k",
            "17",
            "--vl",
            vl,
            "--seed",
            "11",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert!(out.status.success(), "{}", stderr(&out));
        std::fs::read(path).unwrap()
    };
    let c4 = run("4", "c4.vlt");
    let c16 = run("16", "c16.vlt");
    assert_eq!(c4, c16, "result files must be byte-identical across VL");
}

#[test]
fn matmul_reads_vlt1_files() {
    let dir = tempfile::tempdir().unwrap();
    let a_path = dir.path().join("a.vlt");
    let b_path = dir.path().join("b.vlt");
    let a = vlapack::tensor::DenseTensor::from_fn(5, 7, |i, j| (i * 7 + j) as f32 * 0.5).unwrap();
    let b = vlapack::tensor::DenseTensor::from_fn(7, 3, |i, j| 1.0 - (i * 3 + j) as f32 * 0.25)
        .unwrap();
    vlapack::io::write_tensor_file(&a_path, &a).unwrap();
    vlapack::io::write_tensor_file(&b_path, &b).unwrap();
    let out_path = dir.path().join("c.vlt");
    let out = vlapack(&[
        "matmul",
        "-m",
        "5",
        "-n",
        "3",
        "-k",
        "7",
        "--a",
        a_path.to_str().unwrap(),
        "--b",
        b_path.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
        "--check",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("check: PASS"));
    let c = vlapack::io::read_tensor_file(&out_path).unwrap();
    let expect = vlapack::tensor::matmul_oracle(&a, &b).unwrap();
    assert!(c.bit_eq(&expect));
}

#[test]
fn dump_ir_structure() {
    let out = vlapack(&[
        "dump-ir",
        "--after",
        "data-tile",
        "-m",
        "64",
        "-n",
        "64",
        "-k",
        "64",
    ]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert_eq!(text.matches(" pack(").count(), 2, "{text}");
    assert!(text.contains("tiles=[0*VL+8, 0*VL+1]"), "{text}");

    // passing --vl concretizes symbolic dims: n_r renders as 8
    let out = vlapack(&[
        "dump-ir",
        "--after",
        "propagate",
        "--epilogue",
        "--vl",
        "4",
        "-m",
        "64",
        "-n",
        "64",
        "-k",
        "64",
    ]);
    let text = stdout(&out);
    assert!(text.contains("tiles=[1, 8]"), "{text}");
    assert!(text.contains("packed_relu"), "{text}");

    let out = vlapack(&["dump-ir", "--after", "no-such-pass"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn dump_ir_golden() {
    let out = vlapack(&["dump-ir", "--after", "data-tile", "-m", "64", "-n", "64", "-k", "64"]);
    assert!(out.status.success());
    let golden = "\
%0 = input : [64x64]
%1 = input : [64x64]
%2 = pack(%0) tiles=[0*VL+8, 0*VL+1] perm=identity pad=0 : [8x64x8x1]
%3 = pack(%1) tiles=[0*VL+1, 2*VL+0] perm=swapped pad=0 : [64xceildiv(64, 2*VL+0)x1x2*VL+0]
%4 = packed_matmul(%2, %3) : [8xceildiv(64, 2*VL+0)x8x2*VL+0]
%5 = unpack(%4) dims=[64, 64] : [64x64]
%6 = output(%5) : [64x64]
";
    assert_eq!(stdout(&out), golden);
}

#[test]
fn trace_histogram() {
    let out = vlapack(&["trace", "--vl", "4", "-m", "8", "-n", "8", "-k", "1"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("fmla_lane,16"), "{text}");
    assert!(text.contains("opcode,count"), "{text}");
    // one line per retired instruction with active lane counts
    assert!(
        text.lines()
            .any(|l| l.starts_with("ld1rq") && l.ends_with("active=4")),
        "{text}"
    );
}

#[test]
fn bench_scaling_csv() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("scaling.csv");
    let out = Command::new(env!("CARGO_BIN_EXE_vlapack"))
        .args(["bench", "scaling", "--csv", csv_path.to_str().unwrap()])
        .env("VLAPACK_THREADS", "2")
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "workload,m,n,k,vl_bits,cache_mib,cycles_compute,cycles_memory,cycles_total,speedup_vs_128"
    );
    // 8 workloads x 2 caches x 3 vector lengths
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 48);
    // rows ordered by (workload, cache, vl)
    let first: Vec<&str> = rows[0].split(',').collect();
    assert_eq!((first[0], first[5], first[4]), ("square64", "8", "128"));
    let second: Vec<&str> = rows[1].split(',').collect();
    assert_eq!((second[5], second[4]), ("8", "256"));
    // baseline rows carry speedup 1.0
    for r in rows.iter().filter(|r| r.split(',').nth(4) == Some("128")) {
        assert!(r.ends_with(",1.0000"), "{r}");
    }
}

#[test]
fn pack_summary() {
    let out = vlapack(&["pack", "-m", "3", "-n", "5", "--role", "a", "--vl", "4"]);
    assert!(out.status.success());
    let text = stdout(&out);
    assert!(text.contains("packed 3x5 as 8x1 tiles"), "{text}");
}

#[test]
fn pack_writes_flat_vlt1() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("packed.vlt");
    let out = vlapack(&[
        "pack",
        "-m",
        "4",
        "-n",
        "4",
        "--role",
        "b",
        "--vl",
        "4",
        "--output",
        path.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let t = vlapack::io::read_tensor_file(&path).unwrap();
    assert_eq!(t.rows(), 1);
    assert_eq!(t.cols(), 4 * 8); // 4 k-rows padded to one 8-wide tile column
}
