//! Command-line entry point binding the simulator modules into runnable
//! scenarios. All outputs are plain CSV/JSON files; with a fixed `--seed`
//! every subcommand is byte-identical across runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use qnncluster::abb;
use qnncluster::calib::Calibration;
use qnncluster::cluster;
use qnncluster::isa;
use qnncluster::kernels::{self, KernelSpec, KernelStats};
use qnncluster::quant::{reference_conv, QTensor};
use qnncluster::rbe::{self, RbeJob};
use qnncluster::tiler;

#[derive(Parser)]
#[command(name = "qnncluster", about = "Heterogeneous QNN cluster simulator")]
struct Cli {
    /// Calibration JSON overriding the built-in constants.
    #[arg(long, global = true)]
    calibration: Option<PathBuf>,
    /// Output directory for report files.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Seed for any randomized inputs.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convolution-engine jobs and throughput tables.
    Rbe {
        #[command(subcommand)]
        cmd: RbeCmd,
    },
    /// Assemble and run a core program.
    Isa {
        #[command(subcommand)]
        cmd: IsaCmd,
    },
    /// Software kernel benchmarks.
    Kernels {
        #[command(subcommand)]
        cmd: KernelsCmd,
    },
    /// Network tiling and scheduling.
    Net {
        #[command(subcommand)]
        cmd: NetCmd,
    },
    /// Multi-core cluster scenarios.
    Cluster {
        #[command(subcommand)]
        cmd: ClusterCmd,
    },
    /// Adaptive body-biasing loop.
    Abb {
        #[command(subcommand)]
        cmd: AbbCmd,
    },
}

#[derive(Subcommand)]
enum RbeCmd {
    /// Execute one job functionally and report its cycle breakdown.
    Run {
        job: PathBuf,
        /// Cross-check the output against the reference convolution.
        #[arg(long)]
        check: bool,
    },
    /// Emit the W x I throughput table over both filter modes.
    Sweep,
}

#[derive(Subcommand)]
enum IsaCmd {
    Run {
        prog: PathBuf,
        #[arg(long, default_value_t = 100_000_000)]
        max_cycles: u64,
    },
}

#[derive(Subcommand)]
enum KernelsCmd {
    /// Run the matmul/vecadd benchmark suite and dump per-kernel stats.
    Bench,
}

#[derive(Args)]
struct OpPoint {
    #[arg(long, default_value_t = 0.8)]
    vdd: f64,
    #[arg(long, default_value_t = 420.0e6)]
    freq_hz: f64,
    #[arg(long, default_value_t = 0.0)]
    vbb: f64,
}

#[derive(Subcommand)]
enum NetCmd {
    /// Tile every layer and emit the per-layer cost table.
    Schedule {
        network: PathBuf,
        /// Override the L1 tile budget in bytes.
        #[arg(long)]
        l1_budget: Option<u64>,
        #[command(flatten)]
        op: OpPoint,
    },
}

#[derive(Subcommand)]
enum ClusterCmd {
    Run { scenario: PathBuf },
}

#[derive(Subcommand)]
enum AbbCmd {
    /// Simulate a closed-loop scenario and dump the decimated trace.
    Run { scenario: PathBuf },
    /// Minimum error-free supply voltage with and without the bias loop.
    Minvdd {
        #[arg(long, default_value_t = 400.0e6)]
        freq_hz: f64,
    },
}

/// Exit codes: 0 success, 1 runtime error, 2 validation error.
enum CliError {
    Runtime(String),
    Validation(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Runtime(_) => ExitCode::from(1),
            CliError::Validation(_) => ExitCode::from(2),
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Runtime(m) | CliError::Validation(m) => m,
        }
    }
}

fn validation(e: impl std::fmt::Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("invalid {}: {e}", path.display())))
}

fn write_out(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, contents)
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(path)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<PathBuf, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(runtime)?;
    text.push('\n');
    write_out(dir, name, &text)
}

/// Job file: the job itself plus optional explicit input tensors; absent
/// tensors are filled pseudo-randomly from the CLI seed.
#[derive(Serialize, Deserialize)]
struct JobFile {
    job: RbeJob,
    #[serde(default)]
    acts: Option<Vec<i32>>,
    #[serde(default)]
    wgts: Option<Vec<i32>>,
}

fn load_calibration(cli: &Cli) -> Result<Calibration, CliError> {
    match &cli.calibration {
        Some(p) => Calibration::load(p).map_err(validation),
        None => Ok(Calibration::default()),
    }
}

fn rbe_run(cli: &Cli, path: &Path, check: bool) -> Result<(), CliError> {
    let calib = load_calibration(cli)?;
    let jf: JobFile = read_json(path)?;
    let job = jf.job;
    job.validate().map_err(|errs| {
        CliError::Validation(
            errs.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "),
        )
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let (hin, win) = job.input_extent();
    let fill = |rng: &mut ChaCha8Rng, n: usize, bits: u8| -> Vec<i32> {
        (0..n).map(|_| rng.random_range(0..1i32 << bits)).collect()
    };
    let acts_data = jf
        .acts
        .unwrap_or_else(|| fill(&mut rng, hin * win * job.kin, job.i_bits.bits()));
    let taps = job.mode.filter_taps();
    let wgts_data = jf
        .wgts
        .unwrap_or_else(|| fill(&mut rng, job.kout * job.kin * taps, job.w_bits.bits()));
    let side = job.mode.filter_side();
    let acts =
        QTensor::new(vec![hin, win, job.kin], acts_data, job.i_bits, false).map_err(validation)?;
    let wgts = QTensor::new(vec![job.kout, job.kin, side, side], wgts_data, job.w_bits, false)
        .map_err(validation)?;

    let mut mem = isa::FlatMem::default();
    rbe::place_inputs(&job, &mut mem, &acts, &wgts).map_err(validation)?;
    rbe::execute_functional(&job, &mut mem)
        .map_err(|errs| CliError::Runtime(format!("{errs:?}")))?;
    let out = rbe::read_output(&job, &mut mem);
    let report = rbe::execute_timed(&job, &calib.rbe);

    write_json(&cli.out, "rbe_output.json", &out.data)?;
    let rp = write_json(&cli.out, "rbe_report.json", &report)?;
    println!(
        "job done: {} cycles, {:.1} ops/cycle ({})",
        report.total,
        report.ops_per_cycle,
        rp.display()
    );
    if check {
        let want = reference_conv(
            &acts,
            &wgts,
            &job.norm,
            job.mode,
            job.padding,
            job.o_bits,
        )
        .map_err(runtime)?;
        if out.data == want.data {
            println!("MATCH");
        } else {
            println!("MISMATCH");
            return Err(CliError::Runtime("output differs from reference".into()));
        }
    }
    Ok(())
}

fn rbe_sweep(cli: &Cli) -> Result<(), CliError> {
    let calib = load_calibration(cli)?;
    let mut csv = String::from("mode,w_bits,i_bits,total_cycles,ops_per_cycle,gops,binary_gops\n");
    for row in rbe::throughput_sweep(&calib.rbe) {
        csv.push_str(&format!(
            "{:?},{},{},{},{:.2},{:.2},{:.2}\n",
            row.mode,
            row.w_bits,
            row.i_bits,
            row.report.total,
            row.report.ops_per_cycle,
            row.report.gops(calib.rbe.nominal_freq_hz),
            row.report.binary_gops(calib.rbe.nominal_freq_hz),
        ));
    }
    let p = write_out(&cli.out, "rbe_sweep.csv", &csv)?;
    println!("{}", p.display());
    Ok(())
}

fn isa_run(cli: &Cli, path: &Path, max_cycles: u64) -> Result<(), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
    let prog = isa::assemble(&text).map_err(validation)?;
    let mut mem = isa::FlatMem::default();
    let (trace, _) = isa::run(&prog, &mut mem, max_cycles).map_err(runtime)?;
    let p = write_json(&cli.out, "isa_trace.json", &trace)?;
    println!(
        "{} cycles, {} instructions retired ({})",
        trace.cycles,
        trace.retired,
        p.display()
    );
    Ok(())
}

fn kernels_bench(cli: &Cli) -> Result<(), CliError> {
    let (m, n, k) = (64, 64, 64);
    let macs = (m * n * k) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(cli.seed);
    let mut stats: BTreeMap<String, KernelStats> = BTreeMap::new();

    let mut bench_matmul = |name: &str, spec: &KernelSpec, baseline: bool| -> Result<(), CliError> {
        let kernel = if baseline {
            kernels::gen_matmul_baseline_subbyte(spec).map_err(validation)?
        } else {
            kernels::gen_matmul(spec).map_err(validation)?
        };
        let mask = (1u32 << spec.precision) - 1;
        let a: Vec<u32> = (0..m * k).map(|_| rng.random::<u32>() & mask).collect();
        let b: Vec<u32> = (0..k * n).map(|_| rng.random::<u32>() & mask).collect();
        let mut mem = isa::FlatMem::default();
        kernel.load_inputs(&mut mem, &a, &b);
        let s = kernels::measure(&kernel.prog, &mut mem, macs).map_err(runtime)?;
        stats.insert(name.to_string(), s);
        Ok(())
    };

    for prec in [8u8, 4, 2] {
        bench_matmul(
            &format!("matmul{prec}_macload"),
            &KernelSpec::matmul(m, n, k, prec, true),
            false,
        )?;
    }
    bench_matmul("matmul8_plain", &KernelSpec::matmul(m, n, k, 8, false), false)?;
    for prec in [4u8, 2] {
        bench_matmul(
            &format!("matmul{prec}_baseline"),
            &KernelSpec::matmul(m, n, k, prec, false),
            true,
        )?;
    }

    let vk = kernels::gen_vecadd(4096);
    let mut mem = isa::FlatMem::default();
    let a: Vec<u8> = (0..4096).map(|_| rng.random::<u8>() >> 1).collect();
    let b: Vec<u8> = (0..4096).map(|_| rng.random::<u8>() >> 1).collect();
    vk.load_inputs(&mut mem, &a, &b);
    stats.insert(
        "vecadd".into(),
        kernels::measure(&vk.prog, &mut mem, 0).map_err(runtime)?,
    );

    let p = write_json(&cli.out, "kernels_bench.json", &stats)?;
    let ml8 = &stats["matmul8_macload"];
    println!(
        "matmul8 macload: {} cycles, steady utilization {:.3}",
        ml8.cycles, ml8.steady_utilization
    );
    println!(
        "cycle ratio plain/macload (8-bit): {:.3}",
        stats["matmul8_plain"].cycles as f64 / ml8.cycles as f64
    );
    for prec in [4u8, 2] {
        println!(
            "inner instr ratio baseline/extended ({prec}-bit): {:.2}",
            stats[&format!("matmul{prec}_baseline")].inner_instr_per_mac
                / stats[&format!("matmul{prec}_macload")].inner_instr_per_mac
        );
    }
    println!("{}", p.display());
    Ok(())
}

fn net_schedule(cli: &Cli, path: &Path, l1_budget: Option<u64>, op: &OpPoint) -> Result<(), CliError> {
    let mut calib = load_calibration(cli)?;
    if let Some(b) = l1_budget {
        calib.memory.l1_bytes = b;
    }
    let layers = tiler::load_network(path).map_err(validation)?;
    // surface every infeasible layer, not just the first
    let infeasible: Vec<String> = layers
        .iter()
        .filter_map(|l| tiler::tile_layer(l, calib.memory.l1_bytes).err())
        .map(|e| e.to_string())
        .collect();
    if !infeasible.is_empty() {
        return Err(CliError::Validation(infeasible.join("\n")));
    }
    let point = tiler::OperatingPoint { vdd: op.vdd, freq_hz: op.freq_hz, vbb: op.vbb };
    let schedule = tiler::schedule_network(&layers, &point, &calib).map_err(runtime)?;
    let p = write_out(&cli.out, "net_schedule.csv", &tiler::schedule_csv(&schedule))?;
    println!(
        "{} layers, {} cycles, {:.3} mJ ({})",
        schedule.layers.len(),
        schedule.total_cycles,
        schedule.total_energy_mj,
        p.display()
    );
    Ok(())
}

fn cluster_run(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let calib = load_calibration(cli)?;
    let sc: cluster::Scenario = read_json(path)?;
    let trace = cluster::run_scenario(&sc, &calib).map_err(|e| match e {
        cluster::ClusterError::Asm(..)
        | cluster::ClusterError::TooManyCores(..)
        | cluster::ClusterError::Dma(..)
        | cluster::ClusterError::RbeJob(..) => validation(e),
        other => runtime(other),
    })?;
    let p = write_json(&cli.out, "cluster_trace.json", &trace)?;
    println!("{} cycles ({})", trace.cycles, p.display());
    Ok(())
}

fn abb_run(cli: &Cli, path: &Path) -> Result<(), CliError> {
    let calib = load_calibration(cli)?;
    let mut sc: abb::AbbScenario = read_json(path)?;
    if cli.seed != 0 {
        sc.seed = cli.seed;
    }
    let model = abb::DelayModel::calibrate(&calib.delay, &calib.abb).map_err(validation)?;
    let pop = abb::PathPopulation::generate(&calib.abb);
    let trace = abb::simulate(&sc, &model, &pop, &calib);
    let mut csv = String::from("t,vdd,vbb,pre_error,error,power_mw\n");
    for s in &trace.samples {
        csv.push_str(&format!(
            "{},{:.5},{:.5},{},{},{:.3}\n",
            s.t, s.vdd, s.vbb, s.pre_error as u8, s.error as u8, s.power_mw
        ));
    }
    let p = write_out(&cli.out, "abb_trace.csv", &csv)?;
    write_json(
        &cli.out,
        "abb_summary.json",
        &serde_json::json!({
            "pre_errors": trace.pre_errors,
            "real_errors": trace.real_errors,
            "final_vbb": trace.final_vbb,
            "max_vbb": trace.max_vbb,
        }),
    )?;
    println!(
        "{} pre-errors, {} errors, final vbb {:.3} V ({})",
        trace.pre_errors,
        trace.real_errors,
        trace.final_vbb,
        p.display()
    );
    Ok(())
}

fn abb_minvdd(cli: &Cli, freq_hz: f64) -> Result<(), CliError> {
    let calib = load_calibration(cli)?;
    let model = abb::DelayModel::calibrate(&calib.delay, &calib.abb).map_err(validation)?;
    let pop = abb::PathPopulation::generate(&calib.abb);
    let off = abb::find_min_vdd(freq_hz, false, &model, &pop, &calib).map_err(runtime)?;
    let on = abb::find_min_vdd(freq_hz, true, &model, &pop, &calib).map_err(runtime)?;
    write_json(
        &cli.out,
        "abb_minvdd.json",
        &serde_json::json!({ "freq_hz": freq_hz, "min_vdd_no_bias": off, "min_vdd_bias": on }),
    )?;
    println!("min vdd @ {:.0} MHz: {off:.3} V without bias, {on:.3} V with bias", freq_hz / 1e6);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Rbe { cmd: RbeCmd::Run { job, check } } => rbe_run(&cli, job, *check),
        Command::Rbe { cmd: RbeCmd::Sweep } => rbe_sweep(&cli),
        Command::Isa { cmd: IsaCmd::Run { prog, max_cycles } } => isa_run(&cli, prog, *max_cycles),
        Command::Kernels { cmd: KernelsCmd::Bench } => kernels_bench(&cli),
        Command::Net { cmd: NetCmd::Schedule { network, l1_budget, op } } => {
            net_schedule(&cli, network, *l1_budget, op)
        }
        Command::Cluster { cmd: ClusterCmd::Run { scenario } } => cluster_run(&cli, scenario),
        Command::Abb { cmd: AbbCmd::Run { scenario } } => abb_run(&cli, scenario),
        Command::Abb { cmd: AbbCmd::Minvdd { freq_hz } } => abb_minvdd(&cli, *freq_hz),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}
