//! Acceptance suite: one test per acceptance criterion, with the tolerance
//! for every anchored number pinned in the assertion itself. Each test prints
//! a `CRITERION n: ...` line (visible with `--nocapture`); the harness result
//! line per test is the machine-readable pass/fail record.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use qnncluster::abb;
use qnncluster::calib::Calibration;
use qnncluster::cluster::{self, run_cluster, Branch, Request, TcdmArbiter};
use qnncluster::isa::{self, run_on, CoreState, FlatMem, Instr, Program, Shape, Sign, SrcReg, Target, Width};
use qnncluster::kernels::{self, KernelSpec};
use qnncluster::quant::{
    normquant, reference_conv, BitWidth, ConvMode, NormParams, Padding, QTensor,
};
use qnncluster::rbe::{self, RbeJob};
use qnncluster::tiler;

fn rand_tensor(rng: &mut impl Rng, shape: Vec<usize>, bits: u8) -> QTensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(0..1i32 << bits)).collect();
    QTensor::new(shape, data, BitWidth(bits), false).unwrap()
}

fn rand_norm(rng: &mut impl Rng, kout: usize) -> NormParams {
    NormParams {
        scale: (0..kout).map(|_| rng.random_range(1..8)).collect(),
        bias: (0..kout).map(|_| rng.random_range(-1024..1024)).collect(),
        shift: rng.random_range(4..12),
        relu: true,
    }
}

/// Convolution by a third, index-naive loop — independent of both the
/// engine model and `reference_conv`.
fn naive_conv(
    acts: &QTensor,
    wgts: &QTensor,
    norm: &NormParams,
    mode: ConvMode,
    padding: Padding,
    o_bits: BitWidth,
) -> Vec<i32> {
    let (h, w, kin) = (acts.shape[0], acts.shape[1], acts.shape[2]);
    let kout = wgts.shape[0];
    let side = if mode == ConvMode::Conv3x3 { 3isize } else { 1 };
    let (oh, ow, pad) = match (mode, padding) {
        (ConvMode::Conv1x1, _) => (h, w, 0isize),
        (ConvMode::Conv3x3, Padding::Same) => (h, w, 1),
        (ConvMode::Conv3x3, Padding::Valid) => (h - 2, w - 2, 0),
    };
    let mut out = vec![0i32; oh * ow * kout];
    for oy in 0..oh as isize {
        for ox in 0..ow as isize {
            for ko in 0..kout {
                let mut acc: i64 = 0;
                for fy in 0..side {
                    for fx in 0..side {
                        let (iy, ix) = (oy + fy - pad, ox + fx - pad);
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                            continue;
                        }
                        for ki in 0..kin {
                            let a = acts.data[((iy as usize) * w + ix as usize) * kin + ki];
                            let g = wgts.data
                                [((ko * kin + ki) * side as usize + fy as usize) * side as usize
                                    + fx as usize];
                            acc += a as i64 * g as i64;
                        }
                    }
                }
                out[((oy as usize) * ow + ox as usize) * kout + ko] = normquant(
                    acc as i32,
                    norm.scale[ko],
                    norm.bias[ko],
                    norm.shift,
                    norm.relu,
                    o_bits.bits(),
                );
            }
        }
    }
    out
}

#[test]
fn criterion_01_rbe_functional_bit_exact_on_1000_random_jobs() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for case in 0..1000 {
        let mode = if rng.random() { ConvMode::Conv3x3 } else { ConvMode::Conv1x1 };
        let padding = if rng.random() { Padding::Same } else { Padding::Valid };
        let (wb, ib, ob) = (
            rng.random_range(2..=8u8),
            rng.random_range(2..=8u8),
            rng.random_range(2..=8u8),
        );
        let (kin, kout) = (rng.random_range(1..=128), rng.random_range(1..=128));
        let (hout, wout) = (rng.random_range(1..=16), rng.random_range(1..=16));
        let norm = rand_norm(&mut rng, kout);
        let job = RbeJob::new(
            mode,
            BitWidth(wb),
            BitWidth(ib),
            BitWidth(ob),
            kin,
            kout,
            hout,
            wout,
            padding,
            norm.clone(),
        );
        let (hin, win) = job.input_extent();
        let acts = rand_tensor(&mut rng, vec![hin, win, kin], ib);
        let side = mode.filter_side();
        let wgts = rand_tensor(&mut rng, vec![kout, kin, side, side], wb);

        let mut mem = FlatMem::default();
        rbe::place_inputs(&job, &mut mem, &acts, &wgts).unwrap();
        rbe::execute_functional(&job, &mut mem).unwrap();
        let got = rbe::read_output(&job, &mut mem);
        let want = reference_conv(&acts, &wgts, &norm, mode, padding, BitWidth(ob)).unwrap();
        assert_eq!(got.data, want.data, "case {case}: engine vs reference");
        // the reference itself is cross-checked against an independent loop
        let naive = naive_conv(&acts, &wgts, &norm, mode, padding, BitWidth(ob));
        assert_eq!(want.data, naive, "case {case}: reference vs naive");
    }
    println!("CRITERION 1: PASS — 1000 random jobs bit-exact (engine == reference == naive)");
}

fn anchor_job(w: u8, i: u8) -> RbeJob {
    RbeJob::new(
        ConvMode::Conv3x3,
        BitWidth(w),
        BitWidth(i),
        BitWidth(4),
        64,
        64,
        3,
        3,
        Padding::Same,
        NormParams::unit(64, true),
    )
}

#[test]
fn criterion_02_peak_compute_throughput_1610_ops_per_cycle() {
    let calib = Calibration::default();
    let r = rbe::execute_timed(&anchor_job(2, 4), &calib.rbe);
    let rel = (r.compute_ops_per_cycle - 1610.0).abs() / 1610.0;
    assert!(rel < 0.02, "compute throughput {} ops/cycle, want 1610 +/- 2%", r.compute_ops_per_cycle);
    println!(
        "CRITERION 2: PASS — peak COMPUTE throughput {:.1} ops/cycle (1610 +/- 2%)",
        r.compute_ops_per_cycle
    );
}

#[test]
fn criterion_03_end_to_end_571_gops_at_model_clock() {
    let calib = Calibration::default();
    let r = rbe::execute_timed(&anchor_job(2, 4), &calib.rbe);
    let gops = r.gops(calib.rbe.nominal_freq_hz);
    assert!((gops - 571.0).abs() / 571.0 < 0.05, "end-to-end {gops} Gop/s, want 571 +/- 5%");
    println!("CRITERION 3: PASS — end-to-end {gops:.1} Gop/s at 420 MHz (571 +/- 5%)");
}

#[test]
fn criterion_04_throughput_table_trends() {
    let calib = Calibration::default();
    let rows = rbe::throughput_sweep(&calib.rbe);
    let get = |mode: ConvMode, w: u8, i: u8| {
        rows.iter()
            .find(|r| r.mode == mode && r.w_bits == w && r.i_bits == i)
            .unwrap()
            .report
            .clone()
    };

    // (a) 1x1 throughput is W-invariant within 1%
    for i in [2u8, 4, 8] {
        let t2 = get(ConvMode::Conv1x1, 2, i).ops_per_cycle;
        for w in [4u8, 8] {
            let t = get(ConvMode::Conv1x1, w, i).ops_per_cycle;
            assert!((t - t2).abs() / t2 < 0.01, "1x1 I={i}: W={w} {} vs W=2 {}", t, t2);
        }
    }
    println!("CRITERION 4a: PASS — 1x1 throughput W-invariant within 1%");

    // (c) halving-activation trend: I=8 runs at 50% +/- 10% of I=4
    let ic = get(ConvMode::Conv3x3, 2, 8).ops_per_cycle / get(ConvMode::Conv3x3, 2, 4).ops_per_cycle;
    assert!((ic - 0.5).abs() / 0.5 < 0.10, "I8/I4 ratio {ic}, want 0.5 +/- 10%");
    println!("CRITERION 4c: PASS — I=8/I=4 throughput ratio {ic:.3} (0.5 +/- 10%)");

    // (d) binary throughput at W=8, I=4 is about 7100 binary Gop/s
    let bg = get(ConvMode::Conv3x3, 8, 4).binary_gops(calib.rbe.nominal_freq_hz);
    assert!((bg - 7100.0).abs() / 7100.0 < 0.10, "binary throughput {bg}, want 7100 +/- 10%");
    println!("CRITERION 4d: PASS — binary throughput {bg:.0} Gop/s (7100 +/- 10%)");

    // (b) weight-serialization trend: expected window [0.22, 0.28].
    // The calibrated model (which reproduces the 488/948/1256-cycle job
    // anchors exactly) yields ~0.39: the W-independent LOAD/NORMQUANT/
    // STREAMOUT phases and the fixed per-tile COMPUTE overhead dilute the 4x
    // weight serialization at this job size. Reported honestly as a failure
    // rather than weakening the model.
    let wr = get(ConvMode::Conv3x3, 8, 4).ops_per_cycle / get(ConvMode::Conv3x3, 2, 4).ops_per_cycle;
    if (0.22..=0.28).contains(&wr) {
        println!("CRITERION 4b: PASS — 3x3 W=8/W=2 throughput ratio {wr:.3}");
    } else {
        println!("CRITERION 4b: FAIL — 3x3 W=8/W=2 throughput ratio {wr:.3}, expected [0.22, 0.28]");
    }
    assert!(
        (0.22..=0.28).contains(&wr),
        "3x3 W=8/W=2 total-throughput ratio {wr:.4} outside [0.22, 0.28] \
         (model pinned by exact per-job cycle anchors; compute-only ratio {:.4})",
        get(ConvMode::Conv3x3, 8, 4).compute_ops_per_cycle
            / get(ConvMode::Conv3x3, 2, 4).compute_ops_per_cycle,
    );
}

#[test]
fn criterion_05_macload_fused_equals_sequence_100k() {
    let linked = |instrs: Vec<Instr>| -> Program {
        let mut p = Program { instrs, labels: Default::default() };
        p.link().unwrap();
        p
    };
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..100_000 {
        let (na, nb, nd) = (
            rng.random_range(0..6u8),
            rng.random_range(0..6u8),
            rng.random_range(0..6u8),
        );
        let (rd, rs) = (rng.random_range(1..10u8), rng.random_range(10..20u8));
        let width = [Width::W16, Width::W8, Width::W4, Width::W2][rng.random_range(0..4)];
        let sign = [Sign::SS, Sign::UU, Sign::US, Sign::SU][rng.random_range(0..4)];
        let addr = rng.random_range(0..256u32) * 4;

        let mut init = CoreState::default();
        for r in 1..32 {
            init.gprf[r] = rng.random();
        }
        init.gprf[rs as usize] = addr;
        for r in 0..6 {
            init.nnrf[r] = rng.random();
        }
        let memval: u32 = rng.random();

        let fused = linked(vec![Instr::MacLoad { rd, na, nb, width, sign, rs, refresh: Some(nd) }]);
        let defused = linked(vec![
            Instr::Dotp {
                rd,
                rs1: SrcReg::Nn(na),
                rs2: SrcReg::Nn(nb),
                width,
                sign,
                shape: Shape::VV,
                accumulate: true,
            },
            Instr::NnLw { nd, rs },
        ]);
        let run_with = |prog: &Program| {
            let mut core = init.clone();
            let mut mem = FlatMem::default();
            mem.words.insert(addr, memval);
            run_on(&mut core, prog, &mut mem, 100).unwrap();
            (core.gprf, core.nnrf)
        };
        assert_eq!(run_with(&fused), run_with(&defused));

        // at most one NN-RF register changes per retired MAC&LOAD, and none
        // without the refresh field
        let before = init.nnrf;
        let mut core = init.clone();
        let mut mem = FlatMem::default();
        mem.words.insert(addr, memval);
        run_on(&mut core, &fused, &mut mem, 100).unwrap();
        let changed = (0..6).filter(|&i| core.nnrf[i] != before[i]).count();
        assert!(changed <= 1);
        let bare = linked(vec![Instr::MacLoad { rd, na, nb, width, sign, rs, refresh: None }]);
        let mut core = init.clone();
        run_on(&mut core, &bare, &mut mem, 100).unwrap();
        assert_eq!(core.nnrf, before);
    }
    println!("CRITERION 5: PASS — 100000 fused-vs-sequence checks exact, <=1 NN-RF write per retire");
}

#[test]
fn criterion_06_macload_kernel_utilization_and_speedup() {
    let (m, n, k) = (64, 64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let mut measure = |spec: &KernelSpec| {
        let kernel = kernels::gen_matmul(spec).unwrap();
        let mask = (1u32 << spec.precision) - 1;
        let a: Vec<u32> = (0..m * k).map(|_| rng.random::<u32>() & mask).collect();
        let b: Vec<u32> = (0..k * n).map(|_| rng.random::<u32>() & mask).collect();
        let mut mem = FlatMem::default();
        kernel.load_inputs(&mut mem, &a, &b);
        (kernels::measure(&kernel.prog, &mut mem, (m * n * k) as u64).unwrap(), kernel)
    };
    let (ml, kernel) = measure(&KernelSpec::matmul(m, n, k, 8, true));
    let (plain, _) = measure(&KernelSpec::matmul(m, n, k, 8, false));

    assert!(ml.steady_utilization >= 0.94, "steady utilization {}", ml.steady_utilization);
    let ratio = plain.cycles as f64 / ml.cycles as f64;
    assert!((1.5..=1.8).contains(&ratio), "cycle improvement {ratio}");

    // inner loop: 16 distinct accumulators fed by exactly one explicit load
    let (start, end) = kernel
        .prog
        .instrs
        .iter()
        .find_map(|ins| match ins {
            Instr::LoopSetup { l: 0, start: Target::Resolved(s), end: Target::Resolved(e), .. } => {
                Some((*s, *e))
            }
            _ => None,
        })
        .unwrap();
    let body = &kernel.prog.instrs[start..=end];
    let explicit_loads =
        body.iter().filter(|i| matches!(i, Instr::NnLw { .. } | Instr::Lw { .. })).count();
    let mut accs: Vec<u8> = body
        .iter()
        .filter_map(|i| match i {
            Instr::MacLoad { rd, .. } => Some(*rd),
            _ => None,
        })
        .collect();
    accs.sort_unstable();
    accs.dedup();
    assert_eq!((explicit_loads, accs.len()), (1, 16));
    println!(
        "CRITERION 6: PASS — steady utilization {:.3} >= 0.94, speedup {ratio:.2} in [1.5, 1.8], 16 accumulators / 1 load",
        ml.steady_utilization
    );
}

#[test]
fn criterion_07_baseline_instruction_ratios_6x_9x() {
    let (m, n, k) = (64, 64, 64);
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    let mut ratios = vec![];
    for prec in [4u8, 2] {
        let ml = kernels::gen_matmul(&KernelSpec::matmul(m, n, k, prec, true)).unwrap();
        let base =
            kernels::gen_matmul_baseline_subbyte(&KernelSpec::matmul(m, n, k, prec, false)).unwrap();
        let mask = (1u32 << prec) - 1;
        let a: Vec<u32> = (0..m * k).map(|_| rng.random::<u32>() & mask).collect();
        let b: Vec<u32> = (0..k * n).map(|_| rng.random::<u32>() & mask).collect();
        let mut run = |kernel: &kernels::MatmulKernel| {
            let mut mem = FlatMem::default();
            kernel.load_inputs(&mut mem, &a, &b);
            kernels::measure(&kernel.prog, &mut mem, (m * n * k) as u64).unwrap()
        };
        ratios.push(run(&base).inner_instr_per_mac / run(&ml).inner_instr_per_mac);
    }
    let (r4, r2) = (ratios[0], ratios[1]);
    let (lo, hi) = (r4.min(r2), r4.max(r2));
    assert!((lo - 6.0).abs() / 6.0 < 0.15, "smaller ratio {lo}, want 6 +/- 15%");
    assert!((hi - 9.0).abs() / 9.0 < 0.15, "larger ratio {hi}, want 9 +/- 15%");
    println!("CRITERION 7: PASS — baseline/extended instruction ratios {{{lo:.2}, {hi:.2}}} vs {{6, 9}} +/- 15%");
}

#[test]
fn criterion_08_memory_system_fairness_and_conservation() {
    // round-robin fairness: sustained single-bank contention, grant counts
    // across 16 masters differ by at most one
    let mut arb = TcdmArbiter::default();
    let mut grants = [0u64; 16];
    let mut reqs: Vec<Request> = (0..16)
        .map(|m| Request { master: m, addr: 0x40, write: false, branch: Branch::Lic })
        .collect();
    for _ in 0..500 {
        let a = arb.arbitrate(&reqs);
        let winners: Vec<usize> = (0..16).filter(|&i| a.granted[i]).collect();
        assert_eq!(winners.len(), 1, "single bank serves one word per cycle");
        grants[winners[0]] += 1;
        reqs.rotate_left(0); // requests persist
    }
    let (min, max) = (grants.iter().min().unwrap(), grants.iter().max().unwrap());
    assert!(max - min <= 1, "fairness: {grants:?}");

    let calib = Calibration::default();
    // conservation under full contention: every issued load is granted once
    let contend = "li x1, 0x1000\nlp.setupi 0, 32, body, body\nbody: lw x8, 0(x1)\nhalt\n";
    let progs: Vec<_> = (0..16).map(|_| isa::assemble(contend).unwrap()).collect();
    let (trace, _) = run_cluster(progs, &[], &[], &[], None, &calib).unwrap();
    for i in 0..16 {
        assert_eq!(trace.master_grants[i], 32, "core {i} grant conservation");
    }
    assert!(trace.max_grants_per_cycle <= 32);

    // disjoint banks: each of 16 cores within 1% of a standalone core
    let loads = "li x1, 0x1000\nlp.setupi 0, 256, body, body\nbody: p.lw x8, 4(x1!)\nhalt\n";
    let solo_prog = isa::assemble(loads).unwrap();
    let mut fm = FlatMem::default();
    let (solo, _) = isa::run(&solo_prog, &mut fm, 1_000_000).unwrap();
    let progs: Vec<_> = (0..16)
        .map(|i| isa::assemble(&loads.replace("0x1000", &format!("{}", 0x1000 + 4 * i))).unwrap())
        .collect();
    let (trace, _) = run_cluster(progs, &[], &[], &[], None, &calib).unwrap();
    for (i, t) in trace.core_traces.iter().enumerate() {
        assert!(
            t.cycles as f64 <= solo.cycles as f64 * 1.01,
            "core {i}: {} vs standalone {}",
            t.cycles,
            solo.cycles
        );
    }
    assert!(trace.max_grants_per_cycle <= 32);
    println!("CRITERION 8: PASS — fairness <=1, conservation exact, disjoint banks within 1%, <=32 grants/cycle");
}

#[test]
fn criterion_09_tiler_footprints_stitching_and_schedules() {
    let calib = Calibration::default();
    let budget = calib.memory.l1_bytes;
    assert_eq!(budget, 128 * 1024);
    let nets = Path::new(env!("CARGO_MANIFEST_DIR")).join("networks");

    // footprint bound re-derived arithmetically for every layer of every
    // shipped network
    for net in ["resnet20.json", "resnet20_mixed.json", "resnet18.json", "resnet18_mixed.json"] {
        for layer in tiler::load_network(&nets.join(net)).unwrap() {
            let s = tiler::tile_layer(&layer, budget).unwrap();
            let kin32 = s.tkin.div_ceil(32) as u64;
            let kout32 = s.tkout.div_ceil(32) as u64;
            let spatial_in = match layer.kind {
                tiler::LayerKind::Conv3x3 | tiler::LayerKind::DwConv3x3 => {
                    ((s.th + 2) * (s.tw + 2)) as u64
                }
                _ => (s.th * s.tw) as u64,
            };
            let input = match layer.kind {
                tiler::LayerKind::Add => {
                    2 * (s.th * s.tw) as u64 * kout32 * layer.i_bits as u64 * 4
                }
                _ => spatial_in * kin32 * layer.i_bits as u64 * 4,
            };
            let weights = match layer.kind {
                tiler::LayerKind::Conv3x3 => s.tkout as u64 * kin32 * layer.w_bits as u64 * 36,
                tiler::LayerKind::Conv1x1 | tiler::LayerKind::Linear => {
                    s.tkout as u64 * kin32 * layer.w_bits as u64 * 4
                }
                tiler::LayerKind::DwConv3x3 => kout32 * layer.w_bits as u64 * 36,
                tiler::LayerKind::Add => 0,
            };
            let output = (s.th * s.tw) as u64 * kout32 * layer.o_bits as u64 * 4;
            let mult = if s.tiles > 1 { 2 } else { 1 };
            let independent = mult * (input + weights + output);
            assert_eq!(independent, s.footprint(), "{net}/{}", layer.name);
            assert!(independent <= budget, "{net}/{}", layer.name);
        }
    }

    // tiled execution stitches to the untiled oracle on 50 random layers
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for case in 0..50 {
        let kin = 32;
        let kout = *[32usize, 64, 96].choose(&mut rng).unwrap();
        let (h, w) = (rng.random_range(3..=6), rng.random_range(3..=6));
        let (wb, ib, ob) = (rng.random_range(2..=4u8), rng.random_range(2..=8u8), 8u8);
        let mode =
            if rng.random() { ConvMode::Conv3x3 } else { ConvMode::Conv1x1 };
        let layer = tiler::LayerDescriptor {
            name: format!("rand{case}"),
            kind: if mode == ConvMode::Conv3x3 {
                tiler::LayerKind::Conv3x3
            } else {
                tiler::LayerKind::Conv1x1
            },
            h,
            w,
            kin,
            kout,
            w_bits: wb,
            i_bits: ib,
            o_bits: ob,
            input_residency: tiler::Residency::L2,
            output_residency: tiler::Residency::L2,
        };
        let s = tiler::tile_layer(&layer, 24_576).unwrap();
        assert_eq!(s.tkin, kin);

        let acts = rand_tensor(&mut rng, vec![h, w, kin], ib);
        let side = mode.filter_side();
        let wgts = rand_tensor(&mut rng, vec![kout, kin, side, side], wb);
        let norm = NormParams::unit(kout, true);
        let want =
            reference_conv(&acts, &wgts, &norm, mode, Padding::Same, BitWidth(ob)).unwrap();

        let halo = if mode == ConvMode::Conv3x3 { 1isize } else { 0 };
        let mut got = vec![0i32; h * w * kout];
        for y0 in (0..h).step_by(s.th) {
            for x0 in (0..w).step_by(s.tw) {
                for ko0 in (0..kout).step_by(s.tkout) {
                    let th = s.th.min(h - y0);
                    let tw = s.tw.min(w - x0);
                    let tko = s.tkout.min(kout - ko0);
                    let (hin, win) = (th + 2 * halo as usize, tw + 2 * halo as usize);
                    let mut tile_in = vec![0i32; hin * win * kin];
                    for ty in 0..hin {
                        for tx in 0..win {
                            let iy = y0 as isize + ty as isize - halo;
                            let ix = x0 as isize + tx as isize - halo;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ki in 0..kin {
                                tile_in[(ty * win + tx) * kin + ki] =
                                    acts.data[(iy as usize * w + ix as usize) * kin + ki];
                            }
                        }
                    }
                    let tile_acts =
                        QTensor::new(vec![hin, win, kin], tile_in, BitWidth(ib), false).unwrap();
                    let tile_wgts = QTensor::new(
                        vec![tko, kin, side, side],
                        wgts.data[ko0 * kin * side * side..(ko0 + tko) * kin * side * side]
                            .to_vec(),
                        BitWidth(wb),
                        false,
                    )
                    .unwrap();
                    let job = RbeJob::new(
                        mode,
                        BitWidth(wb),
                        BitWidth(ib),
                        BitWidth(ob),
                        kin,
                        tko,
                        th,
                        tw,
                        if mode == ConvMode::Conv3x3 { Padding::Valid } else { Padding::Same },
                        NormParams::unit(tko, true),
                    );
                    let mut mem = FlatMem::default();
                    rbe::place_inputs(&job, &mut mem, &tile_acts, &tile_wgts).unwrap();
                    rbe::execute_functional(&job, &mut mem).unwrap();
                    let out = rbe::read_output(&job, &mut mem);
                    for ty in 0..th {
                        for tx in 0..tw {
                            for ko in 0..tko {
                                got[((y0 + ty) * w + x0 + tx) * kout + ko0 + ko] =
                                    out.data[(ty * tw + tx) * tko + ko];
                            }
                        }
                    }
                }
            }
        }
        assert_eq!(got, want.data, "case {case}: stitched vs untiled");
    }

    // schedule-level claims on the shipped files
    let op = tiler::OperatingPoint::default();
    let full =
        tiler::schedule_network(&tiler::load_network(&nets.join("resnet20.json")).unwrap(), &op, &calib)
            .unwrap();
    let classes = tiler::classify(&full);
    assert!(classes.contains(&tiler::Boundedness::Offchip));
    assert!(classes.contains(&tiler::Boundedness::Onchip));
    assert!(classes.contains(&tiler::Boundedness::Compute));
    let mixed = tiler::schedule_network(
        &tiler::load_network(&nets.join("resnet20_mixed.json")).unwrap(),
        &op,
        &calib,
    )
    .unwrap();
    assert!(mixed.total_energy_mj < full.total_energy_mj);
    println!(
        "CRITERION 9: PASS — footprints <= 128 KiB, 50 stitched layers exact, 3 boundedness classes, mixed energy {:.3} < {:.3} mJ",
        mixed.total_energy_mj, full.total_energy_mj
    );
}

#[test]
fn criterion_10_abb_anchors_and_minimum_voltages() {
    let calib = Calibration::default();
    let model = abb::DelayModel::calibrate(&calib.delay, &calib.abb).unwrap();
    let pop = abb::PathPopulation::generate(&calib.abb);

    let rel = |a: f64, b: f64| (a - b).abs() / b;
    assert!(rel(model.fmax(0.8, 0.0), 420.0e6) < 1e-9);
    assert!(rel(model.fmax(0.5, 0.0), 100.0e6) < 1e-9);
    assert!(rel(abb::power(&calib.power, 0.8, 420.0e6, 0.0, 1.0), 123.0) < 1e-9);
    let dyn_at = |v: f64, f: f64| {
        abb::power(&calib.power, v, f, 0.0, 1.0) - abb::power(&calib.power, v, 0.0, 0.0, 1.0)
    };
    let dr = dyn_at(0.8, 420.0e6) / dyn_at(0.5, 100.0e6);
    assert!(rel(dr, 10.7) < 0.01, "dynamic power ratio {dr}, want 10.7 +/- 1%");

    let off = abb::find_min_vdd(400.0e6, false, &model, &pop, &calib).unwrap();
    let on = abb::find_min_vdd(400.0e6, true, &model, &pop, &calib).unwrap();
    assert!((off - 0.74).abs() <= 0.01, "min vdd without bias {off}");
    assert!((on - 0.65).abs() <= 0.01, "min vdd with bias {on}");
    let pr = abb::power(&calib.power, on, 400.0e6, calib.abb.vbb_max, 1.0)
        / abb::power(&calib.power, 0.8, 400.0e6, 0.0, 1.0);
    assert!((pr - 0.70).abs() <= 0.05, "power ratio {pr}, want 0.70 +/- 0.05");

    // bias settles exactly `settle_cycles` after a pre-error
    let mut ctl = abb::Controller::new(0.0);
    ctl.step(true, &calib.abb);
    for _ in 1..calib.abb.settle_cycles {
        ctl.step(false, &calib.abb);
        assert!(ctl.vbb(&calib.abb) < calib.abb.vbb_step);
    }
    ctl.step(false, &calib.abb);
    assert!((ctl.vbb(&calib.abb) - calib.abb.vbb_step).abs() < 1e-12);
    assert_eq!(calib.abb.settle_cycles, 310);

    for f in [100.0e6, 200.0e6, 300.0e6, 350.0e6, 420.0e6] {
        let off = abb::find_min_vdd(f, false, &model, &pop, &calib).unwrap();
        let on = abb::find_min_vdd(f, true, &model, &pop, &calib).unwrap();
        assert!(on <= off + 1e-9, "f={f}: on={on} off={off}");
    }
    println!(
        "CRITERION 10: PASS — anchors exact, min vdd {off:.3}/{on:.3} V, power ratio {pr:.3}, 310-cycle settle, monotone over 5 frequencies"
    );
}

#[test]
fn criterion_11_cli_subcommands_are_deterministic() {
    let bin = env!("CARGO_BIN_EXE_qnncluster");
    let root = std::env::temp_dir().join(format!("qnn-acceptance-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&root);
    std::fs::create_dir_all(&root).unwrap();

    let job = RbeJob::new(
        ConvMode::Conv1x1,
        BitWidth(4),
        BitWidth(4),
        BitWidth(8),
        32,
        32,
        2,
        2,
        Padding::Same,
        NormParams::unit(32, true),
    );
    let job_path = root.join("job.json");
    std::fs::write(&job_path, serde_json::json!({ "job": job }).to_string()).unwrap();
    let prog_path = root.join("prog.asm");
    std::fs::write(&prog_path, "li x1, 0x1000\nlp.setupi 0, 16, body, body\nbody: p.lw x8, 4(x1!)\nhalt\n")
        .unwrap();
    let scenario = cluster::Scenario {
        programs: vec!["wfe\nhalt".into()],
        mem: vec![cluster::MemImage { base: 0x1000_0000, words: (0..16).collect() }],
        dma: vec![serde_json::from_value(serde_json::json!({
            "direction": "L2ToL1", "src": 0x1000_0000u32, "dst": 0, "len": 64, "dims": []
        }))
        .unwrap()],
        rbe_jobs: vec![],
        max_cycles: None,
    };
    let cluster_path = root.join("scenario.json");
    std::fs::write(&cluster_path, serde_json::to_string(&scenario).unwrap()).unwrap();
    let abb_path = root.join("abb.json");
    std::fs::write(
        &abb_path,
        serde_json::json!({
            "freq_hz": 300.0e6, "vdd_start": 0.8, "vdd_end": 0.72, "ramp_cycles": 1000,
            "abb_on": true, "duration": 4000, "seed": 3
        })
        .to_string(),
    )
    .unwrap();
    let network = Path::new(env!("CARGO_MANIFEST_DIR")).join("networks/resnet20.json");

    let subcommands: Vec<Vec<String>> = vec![
        vec!["rbe".into(), "run".into(), job_path.display().to_string(), "--check".into()],
        vec!["rbe".into(), "sweep".into()],
        vec!["isa".into(), "run".into(), prog_path.display().to_string()],
        vec!["kernels".into(), "bench".into()],
        vec!["net".into(), "schedule".into(), network.display().to_string()],
        vec!["cluster".into(), "run".into(), cluster_path.display().to_string()],
        vec!["abb".into(), "run".into(), abb_path.display().to_string()],
        vec!["abb".into(), "minvdd".into()],
    ];

    let snapshot = |dir: &PathBuf| -> BTreeMap<String, Vec<u8>> {
        std::fs::read_dir(dir)
            .unwrap()
            .map(|e| {
                let e = e.unwrap();
                (e.file_name().into_string().unwrap(), std::fs::read(e.path()).unwrap())
            })
            .collect()
    };

    for (i, args) in subcommands.iter().enumerate() {
        let mut outputs = vec![];
        for pass in 0..2 {
            let out_dir = root.join(format!("cmd{i}-pass{pass}"));
            std::fs::create_dir_all(&out_dir).unwrap();
            let output = Command::new(bin)
                .args(["--seed", "42", "--out", &out_dir.display().to_string()])
                .args(args)
                .output()
                .unwrap();
            assert!(
                output.status.success(),
                "subcommand {args:?} failed: {}",
                String::from_utf8_lossy(&output.stderr)
            );
            outputs.push((output.stdout.clone(), snapshot(&out_dir)));
        }
        let stdout_equal = {
            // output paths differ between passes; compare stdout with the
            // per-pass directory name stripped
            let norm = |s: &[u8], pass: usize| {
                String::from_utf8_lossy(s).replace(&format!("cmd{i}-pass{pass}"), "OUT")
            };
            norm(&outputs[0].0, 0) == norm(&outputs[1].0, 1)
        };
        assert!(stdout_equal, "subcommand {args:?}: stdout differs between runs");
        assert_eq!(outputs[0].1, outputs[1].1, "subcommand {args:?}: files differ between runs");
        assert!(!outputs[0].1.is_empty(), "subcommand {args:?} wrote no files");
    }
    let _ = std::fs::remove_dir_all(&root);
    println!("CRITERION 11: PASS — 8 subcommands byte-identical across seeded re-runs");
}
