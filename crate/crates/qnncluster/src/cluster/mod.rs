//! Memory-system and orchestration model: word-interleaved multi-banked L1
//! with round-robin arbitration over two interconnect branches (cores/DMA vs
//! the convolution engine), a descriptor-based cluster DMA, and lockstep
//! co-simulation of 16 cores, the engine and the DMA with an event unit.


use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::calib::Calibration;
use crate::isa::{self, CoreState, Mem, Program, StepEvent, Trace};
use crate::rbe::{self, CycleReport, JobDone, RbeJob};

pub const NUM_CORES: usize = 16;
pub const NUM_BANKS: usize = 32;
/// LIC branch masters: 16 cores plus the DMA.
pub const MASTER_DMA: usize = NUM_CORES;
pub const MASTER_RBE: usize = NUM_CORES + 1;
const NUM_LIC_MASTERS: usize = NUM_CORES + 1;

/// L1 scratchpad occupies the bottom of the address map so that standalone
/// kernel images (based at 0x1000) land inside it unchanged.
pub const TCDM_BASE: u32 = 0x0000_0000;
pub const L2_BASE: u32 = 0x1000_0000;

pub fn bank_of(addr: u32) -> usize {
    (addr as usize / 4) % NUM_BANKS
}

/// Flat backing store for L1 + L2. Contention is modeled by the arbiter, not
/// here; reads outside both regions return zero.
#[derive(Debug, Clone)]
pub struct ClusterMem {
    pub tcdm: Vec<u32>,
    pub l2: Vec<u32>,
}

impl ClusterMem {
    pub fn new(calib: &Calibration) -> Self {
        ClusterMem {
            tcdm: vec![0; calib.memory.l1_bytes as usize / 4],
            l2: vec![0; calib.memory.l2_bytes as usize / 4],
        }
    }

    pub fn in_tcdm(&self, addr: u32) -> bool {
        let off = addr.wrapping_sub(TCDM_BASE) as usize;
        addr >= TCDM_BASE && off < self.tcdm.len() * 4
    }

    fn slot(&mut self, addr: u32) -> Option<&mut u32> {
        let t_off = addr.wrapping_sub(TCDM_BASE) as usize / 4;
        let l_off = addr.wrapping_sub(L2_BASE) as usize / 4;
        if addr >= TCDM_BASE && t_off < self.tcdm.len() {
            Some(&mut self.tcdm[t_off])
        } else if addr >= L2_BASE && l_off < self.l2.len() {
            Some(&mut self.l2[l_off])
        } else {
            None
        }
    }
}

impl Mem for ClusterMem {
    fn read32(&mut self, addr: u32) -> u32 {
        self.slot(addr).map(|s| *s).unwrap_or(0)
    }

    fn write32(&mut self, addr: u32, val: u32) {
        if let Some(s) = self.slot(addr) {
            *s = val;
        }
    }
}

/// Which interconnect branch a request travels on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Lic,
    Rbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Request {
    pub master: usize,
    pub addr: u32,
    pub write: bool,
    pub branch: Branch,
}

/// Per-bank round-robin arbitration state. The engine branch is conflict-free
/// among its own (always contiguous) accesses; when both branches hit the
/// same bank the bank mux alternates between them.
#[derive(Debug, Clone)]
pub struct TcdmArbiter {
    rr: [usize; NUM_BANKS],
    prefer_rbe: [bool; NUM_BANKS],
}

impl Default for TcdmArbiter {
    fn default() -> Self {
        TcdmArbiter {
            rr: [0; NUM_BANKS],
            prefer_rbe: [false; NUM_BANKS],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Arbitration {
    /// Parallel to the request slice: granted this cycle?
    pub granted: Vec<bool>,
    /// Denied requests per bank this cycle.
    pub conflicts: [u64; NUM_BANKS],
    pub grants: u64,
}

impl TcdmArbiter {
    pub fn arbitrate(&mut self, reqs: &[Request]) -> Arbitration {
        let mut granted = vec![false; reqs.len()];
        let mut conflicts = [0u64; NUM_BANKS];
        let mut grants = 0u64;
        let mut by_bank: Vec<(Vec<usize>, Vec<usize>)> = vec![(vec![], vec![]); NUM_BANKS];
        for (i, r) in reqs.iter().enumerate() {
            let slot = &mut by_bank[bank_of(r.addr)];
            match r.branch {
                Branch::Lic => slot.0.push(i),
                Branch::Rbe => slot.1.push(i),
            }
        }
        for (bank, (lic, rbe)) in by_bank.iter().enumerate() {
            let give_rbe = match (lic.is_empty(), rbe.is_empty()) {
                (true, true) => continue,
                (false, true) => false,
                (true, false) => true,
                (false, false) => {
                    // both branches contend: alternate the bank mux
                    let g = self.prefer_rbe[bank];
                    self.prefer_rbe[bank] = !g;
                    g
                }
            };
            if give_rbe {
                // contiguous engine accesses never self-conflict, so at most
                // one request lands per bank and it is granted outright
                granted[rbe[0]] = true;
                grants += 1;
                conflicts[bank] += (rbe.len() - 1 + lic.len()) as u64;
            } else {
                // round-robin among LIC masters from the bank pointer
                let winner = *lic
                    .iter()
                    .min_by_key(|&&i| {
                        (reqs[i].master + NUM_LIC_MASTERS - self.rr[bank]) % NUM_LIC_MASTERS
                    })
                    .unwrap();
                granted[winner] = true;
                grants += 1;
                self.rr[bank] = (reqs[winner].master + 1) % NUM_LIC_MASTERS;
                conflicts[bank] += (lic.len() - 1 + rbe.len()) as u64;
            }
        }
        Arbitration { granted, conflicts, grants }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DmaDirection {
    L2ToL1,
    L1ToL2,
}

/// One strided dimension of a transfer: `count` lines, advancing each base by
/// its stride between lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaDim {
    pub count: u32,
    pub src_stride: u32,
    pub dst_stride: u32,
}

/// 1D/2D/3D copy descriptor: `len` contiguous bytes per innermost line, up to
/// two outer strided dimensions. All byte quantities must be word-aligned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DmaDescriptor {
    pub direction: DmaDirection,
    pub src: u32,
    pub dst: u32,
    pub len: u32,
    #[serde(default)]
    pub dims: Vec<DmaDim>,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DmaError {
    #[error("transfer moves zero bytes")]
    ZeroBytes,
    #[error("descriptor has {0} outer dimensions, at most 2 supported")]
    TooManyDims(usize),
    #[error("unaligned field {0}: {1} is not a multiple of 4")]
    Unaligned(&'static str, u32),
    #[error("{0} region [0x{1:08x}, 0x{2:08x}) outside its memory")]
    OutOfRange(&'static str, u32, u64),
}

impl DmaDescriptor {
    pub fn total_bytes(&self) -> u64 {
        self.dims
            .iter()
            .fold(self.len as u64, |b, d| b * d.count as u64)
    }

    pub fn validate(&self, calib: &Calibration) -> Result<(), DmaError> {
        if self.total_bytes() == 0 {
            return Err(DmaError::ZeroBytes);
        }
        if self.dims.len() > 2 {
            return Err(DmaError::TooManyDims(self.dims.len()));
        }
        for (name, v) in [("src", self.src), ("dst", self.dst), ("len", self.len)] {
            if v % 4 != 0 {
                return Err(DmaError::Unaligned(name, v));
            }
        }
        for d in &self.dims {
            for (name, v) in [("src_stride", d.src_stride), ("dst_stride", d.dst_stride)] {
                if v % 4 != 0 {
                    return Err(DmaError::Unaligned(name, v));
                }
            }
        }
        let span = |base: u32, src_side: bool| -> u64 {
            let mut end = base as u64 + self.len as u64;
            for d in &self.dims {
                let stride = if src_side { d.src_stride } else { d.dst_stride };
                end += (d.count.max(1) as u64 - 1) * stride as u64;
            }
            end
        };
        let (l1, l1_end, l2, l2_end) = match self.direction {
            DmaDirection::L2ToL1 => {
                (self.dst, span(self.dst, false), self.src, span(self.src, true))
            }
            DmaDirection::L1ToL2 => {
                (self.src, span(self.src, true), self.dst, span(self.dst, false))
            }
        };
        if (l1 as u64) < TCDM_BASE as u64
            || l1_end > TCDM_BASE as u64 + calib.memory.l1_bytes
        {
            return Err(DmaError::OutOfRange("L1", l1, l1_end));
        }
        if (l2 as u64) < L2_BASE as u64 || l2_end > L2_BASE as u64 + calib.memory.l2_bytes {
            return Err(DmaError::OutOfRange("L2", l2, l2_end));
        }
        Ok(())
    }

    /// Word-aligned (src, dst) address pairs in stream order.
    fn word_pairs(&self) -> Vec<(u32, u32)> {
        let mut pairs = vec![];
        let mut dims = self.dims.clone();
        while dims.len() < 2 {
            dims.push(DmaDim { count: 1, src_stride: 0, dst_stride: 0 });
        }
        for o in 0..dims[1].count {
            for m in 0..dims[0].count {
                let s = self.src + o * dims[1].src_stride + m * dims[0].src_stride;
                let d = self.dst + o * dims[1].dst_stride + m * dims[0].dst_stride;
                for w in 0..self.len / 4 {
                    pairs.push((s + 4 * w, d + 4 * w));
                }
            }
        }
        pairs
    }
}

/// Closed-form transfer time: bandwidth-limited streaming plus fixed setup.
pub fn dma_cycles(desc: &DmaDescriptor, calib: &Calibration) -> Result<u64, DmaError> {
    desc.validate(calib)?;
    Ok(desc.total_bytes().div_ceil(calib.memory.dma_bytes_per_cycle)
        + calib.memory.dma_setup_cycles)
}

/// Sticky done-event flags plus barrier bookkeeping over the core set.
#[derive(Debug, Default, Clone)]
pub struct EventUnit {
    pub dma_done: bool,
    pub rbe_done: bool,
}

impl EventUnit {
    fn any(&self) -> bool {
        self.dma_done || self.rbe_done
    }

    fn clear(&mut self) {
        self.dma_done = false;
        self.rbe_done = false;
    }
}

/// Input bundle for one cluster run. Programs are assembly text, one string
/// per active core (up to 16); `mem` entries are preloaded word images.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Scenario {
    pub programs: Vec<String>,
    #[serde(default)]
    pub mem: Vec<MemImage>,
    #[serde(default)]
    pub dma: Vec<DmaDescriptor>,
    #[serde(default)]
    pub rbe_jobs: Vec<RbeJob>,
    #[serde(default)]
    pub max_cycles: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MemImage {
    pub base: u32,
    pub words: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseInterval {
    pub job_index: u64,
    pub phase: String,
    /// First cycle of the phase.
    pub start: u64,
    /// One past the last cycle of the phase.
    pub end: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterTrace {
    pub cycles: u64,
    pub core_traces: Vec<Trace>,
    /// Arbitration stalls per master (16 cores, DMA, RBE).
    pub master_stalls: Vec<u64>,
    /// Denied requests per bank over the whole run.
    pub bank_conflicts: Vec<u64>,
    /// Words granted per master over the whole run.
    pub master_grants: Vec<u64>,
    pub dma_busy_cycles: u64,
    pub rbe_timeline: Vec<PhaseInterval>,
    /// (job index, completion cycle) per finished engine job.
    pub rbe_completions: Vec<(u64, u64)>,
    /// (core, cycle) each time a core woke from an event wait.
    pub resume_cycles: Vec<(usize, u64)>,
    pub grants_total: u64,
    pub max_grants_per_cycle: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("assembly error in core {0} program: {1}")]
    Asm(usize, isa::AsmError),
    #[error("more than {NUM_CORES} core programs ({0})")]
    TooManyCores(usize),
    #[error("core {0} trapped: {1}")]
    Trap(usize, isa::Trap),
    #[error("invalid DMA descriptor {0}: {1}")]
    Dma(usize, DmaError),
    #[error("invalid engine job {0}: {1:?}")]
    RbeJob(usize, Vec<rbe::JobError>),
    #[error("engine job {0} failed: {1:?}")]
    RbeRun(u64, Vec<rbe::JobError>),
    #[error("deadlock at cycle {cycle}: {diagnostic}")]
    Deadlock { cycle: u64, diagnostic: String },
    #[error("exceeded {0} cycles")]
    Timeout(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    Runnable,
    Barrier,
    Wfe,
    Halted,
}

struct CoreCtx {
    state: CoreState,
    prog: Program,
    block: Block,
    pending_stalls: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RbePhase {
    Overhead,
    Load,
    Compute,
    Normquant,
    Streamout,
}

impl RbePhase {
    fn name(self) -> &'static str {
        match self {
            RbePhase::Overhead => "overhead",
            RbePhase::Load => "load",
            RbePhase::Compute => "compute",
            RbePhase::Normquant => "normquant",
            RbePhase::Streamout => "streamout",
        }
    }
}

struct ActiveJob {
    job: RbeJob,
    index: u64,
    report: CycleReport,
    phase: RbePhase,
    phase_left: u64,
    phase_start: u64,
    load_progress: u64,
}

impl ActiveJob {
    fn phase_len(&self, p: RbePhase) -> u64 {
        match p {
            RbePhase::Overhead => self.report.overhead,
            RbePhase::Load => self.report.load,
            RbePhase::Compute => self.report.compute,
            RbePhase::Normquant => self.report.normquant,
            RbePhase::Streamout => self.report.streamout,
        }
    }
}

struct DmaState {
    plan: VecDeque<DmaDescriptor>,
    setup_left: u64,
    pairs: VecDeque<(u32, u32)>,
    dir: DmaDirection,
    busy_cycles: u64,
}

/// Assembles the scenario's programs and runs the cluster to completion.
pub fn run_scenario(sc: &Scenario, calib: &Calibration) -> Result<ClusterTrace, ClusterError> {
    if sc.programs.len() > NUM_CORES {
        return Err(ClusterError::TooManyCores(sc.programs.len()));
    }
    let progs = sc
        .programs
        .iter()
        .enumerate()
        .map(|(i, text)| isa::assemble(text).map_err(|e| ClusterError::Asm(i, e)))
        .collect::<Result<Vec<_>, _>>()?;
    run_cluster(progs, &sc.mem, &sc.dma, &sc.rbe_jobs, sc.max_cycles, calib).map(|(t, _)| t)
}

/// Cycle-lockstep co-simulation of up to 16 cores, the convolution engine
/// and the DMA against shared banked-L1 arbitration. Deterministic for fixed
/// inputs; returns a diagnostic error if no component can make progress.
pub fn run_cluster(
    programs: Vec<Program>,
    images: &[MemImage],
    dma_plan: &[DmaDescriptor],
    rbe_jobs: &[RbeJob],
    max_cycles: Option<u64>,
    calib: &Calibration,
) -> Result<(ClusterTrace, ClusterMem), ClusterError> {
    if programs.len() > NUM_CORES {
        return Err(ClusterError::TooManyCores(programs.len()));
    }
    for (i, d) in dma_plan.iter().enumerate() {
        d.validate(calib).map_err(|e| ClusterError::Dma(i, e))?;
    }
    for (i, j) in rbe_jobs.iter().enumerate() {
        j.validate().map_err(|e| ClusterError::RbeJob(i, e))?;
    }

    let mut mem = ClusterMem::new(calib);
    for img in images {
        for (i, &w) in img.words.iter().enumerate() {
            mem.write32(img.base + 4 * i as u32, w);
        }
    }

    let mut cores: Vec<CoreCtx> = programs
        .into_iter()
        .map(|prog| CoreCtx {
            state: CoreState::default(),
            prog,
            block: Block::Runnable,
            pending_stalls: 0,
        })
        .collect();

    let mut arbiter = TcdmArbiter::default();
    let mut events = EventUnit::default();
    let mut dma = DmaState {
        plan: dma_plan.iter().cloned().collect(),
        setup_left: 0,
        pairs: VecDeque::new(),
        dir: DmaDirection::L2ToL1,
        busy_cycles: 0,
    };
    // the engine's dual-context queue: one running + one pending slot,
    // refilled from the scenario's job list as slots free up
    let mut rbe_pending: VecDeque<(u64, RbeJob)> =
        rbe_jobs.iter().cloned().enumerate().map(|(i, j)| (i as u64, j)).collect();
    let mut rbe_queue: VecDeque<(u64, RbeJob)> = VecDeque::new();
    let mut rbe_current: Option<ActiveJob> = None;
    let mut rbe_done_jobs: Vec<JobDone> = vec![];

    let mut master_stalls = vec![0u64; NUM_CORES + 2];
    let mut master_grants = vec![0u64; NUM_CORES + 2];
    let mut bank_conflicts = vec![0u64; NUM_BANKS];
    let mut timeline: Vec<PhaseInterval> = vec![];
    let mut completions: Vec<(u64, u64)> = vec![];
    let mut resumes: Vec<(usize, u64)> = vec![];
    let mut grants_total = 0u64;
    let mut max_grants = 0u64;
    let mut stagnant = 0u64;
    let deadlock_window = 1000u64;
    let cap = max_cycles.unwrap_or(100_000_000);

    let mut cycle = 0u64;
    loop {
        // termination: everything drained
        let cores_done = cores.iter().all(|c| c.block == Block::Halted);
        let dma_done_all = dma.plan.is_empty() && dma.pairs.is_empty();
        let rbe_done_all =
            rbe_current.is_none() && rbe_queue.is_empty() && rbe_pending.is_empty();
        if cores_done && dma_done_all && rbe_done_all {
            break;
        }
        if cycle >= cap {
            return Err(ClusterError::Timeout(cap));
        }

        // 1. wake event-blocked cores on sticky flags
        if events.any() && cores.iter().any(|c| c.block == Block::Wfe) {
            for (i, c) in cores.iter_mut().enumerate() {
                if c.block == Block::Wfe {
                    c.block = Block::Runnable;
                    resumes.push((i, cycle));
                }
            }
            events.clear();
        }

        // 2. gather this cycle's L1 requests
        let mut reqs: Vec<Request> = vec![];
        let mut core_req: Vec<Option<usize>> = vec![None; cores.len()];
        for (i, c) in cores.iter().enumerate() {
            if c.block != Block::Runnable {
                continue;
            }
            if let Some(r) = c.state.peek_mem_request(&c.prog)
                && mem.in_tcdm(r.addr)
            {
                core_req[i] = Some(reqs.len());
                reqs.push(Request {
                    master: i,
                    addr: r.addr,
                    write: r.write,
                    branch: Branch::Lic,
                });
            }
        }
        // DMA: start the next descriptor if idle
        if dma.pairs.is_empty() && dma.setup_left == 0
            && let Some(d) = dma.plan.pop_front()
        {
            dma.setup_left = calib.memory.dma_setup_cycles;
            dma.dir = d.direction;
            dma.pairs = d.word_pairs().into();
        }
        let words_per_cycle = (calib.memory.dma_bytes_per_cycle / 4).max(1) as usize;
        let mut dma_req_range = 0usize..0;
        if dma.setup_left == 0 && !dma.pairs.is_empty() {
            let start = reqs.len();
            for &(s, d) in dma.pairs.iter().take(words_per_cycle) {
                let (addr, write) = match dma.dir {
                    DmaDirection::L2ToL1 => (d, true),
                    DmaDirection::L1ToL2 => (s, false),
                };
                reqs.push(Request { master: MASTER_DMA, addr, write, branch: Branch::Lic });
            }
            dma_req_range = start..reqs.len();
        }
        // engine: start the next queued job if idle
        while rbe_queue.len() < 2
            && let Some(j) = rbe_pending.pop_front()
        {
            rbe_queue.push_back(j);
        }
        if rbe_current.is_none()
            && let Some((index, job)) = rbe_queue.pop_front()
        {
            let report = rbe::execute_timed(&job, &calib.rbe);
            let overhead = report.overhead;
            rbe_current = Some(ActiveJob {
                job,
                index,
                report,
                phase: RbePhase::Overhead,
                phase_left: overhead,
                phase_start: cycle,
                load_progress: 0,
            });
        }
        let mut rbe_req_range = 0usize..0;
        if let Some(a) = &rbe_current
            && matches!(a.phase, RbePhase::Load | RbePhase::Streamout)
        {
            // model the engine's contiguous wide-port traffic: 9 words per
            // cycle rolling through the relevant operand region
            let (base, words) = match a.phase {
                RbePhase::Load => {
                    let w = (a.job.input_extent().0 * a.job.input_extent().1
                        * a.job.act_pixel_stride) as u64;
                    (a.job.act_base, w)
                }
                _ => {
                    let w = (a.job.hout * a.job.wout * a.job.out_pixel_stride) as u64;
                    (a.job.out_base, w)
                }
            };
            let start = reqs.len();
            let wpc = calib.rbe.streamer_words_per_cycle;
            for lane in 0..wpc {
                let off = (a.load_progress * wpc + lane) % words.max(wpc);
                reqs.push(Request {
                    master: MASTER_RBE,
                    addr: base + 4 * off as u32,
                    write: a.phase == RbePhase::Streamout,
                    branch: Branch::Rbe,
                });
            }
            rbe_req_range = start..reqs.len();
        }

        // 3. arbitrate
        let arb = arbiter.arbitrate(&reqs);
        grants_total += arb.grants;
        max_grants = max_grants.max(arb.grants);
        for (b, n) in arb.conflicts.iter().enumerate() {
            bank_conflicts[b] += n;
        }
        for (i, r) in reqs.iter().enumerate() {
            if arb.granted[i] {
                master_grants[r.master] += 1;
            }
        }

        // 4. step cores
        let mut progressed = false;
        let mut wfe_consumed_event = false;
        for (i, c) in cores.iter_mut().enumerate() {
            if c.block != Block::Runnable {
                continue;
            }
            if let Some(ri) = core_req[i]
                && !arb.granted[ri]
            {
                c.pending_stalls += 1;
                master_stalls[i] += 1;
                continue;
            }
            let stalls = std::mem::take(&mut c.pending_stalls);
            let ev = c
                .state
                .step(&c.prog, &mut mem, stalls)
                .map_err(|e| ClusterError::Trap(i, e))?;
            progressed = true;
            match ev {
                StepEvent::Barrier => c.block = Block::Barrier,
                StepEvent::Wfe => {
                    // a sticky pending event makes wfe fall straight through
                    if events.any() {
                        wfe_consumed_event = true;
                    } else {
                        c.block = Block::Wfe;
                    }
                }
                StepEvent::Halted => c.block = Block::Halted,
                StepEvent::None => {}
            }
        }
        if wfe_consumed_event {
            events.clear();
        }

        // 5. DMA commit: copy the granted prefix, in stream order
        if dma.setup_left > 0 {
            dma.setup_left -= 1;
            dma.busy_cycles += 1;
            progressed = true;
        } else if !dma.pairs.is_empty() {
            let mut moved = 0usize;
            for ri in dma_req_range.clone() {
                if !arb.granted[ri] {
                    break;
                }
                moved += 1;
            }
            if moved == 0 && !dma_req_range.is_empty() {
                master_stalls[MASTER_DMA] += 1;
            }
            for _ in 0..moved {
                let (s, d) = dma.pairs.pop_front().unwrap();
                let w = mem.read32(s);
                mem.write32(d, w);
                progressed = true;
            }
            dma.busy_cycles += 1;
            if dma.pairs.is_empty() {
                events.dma_done = true;
            }
        }

        // 6. engine commit
        if let Some(a) = &mut rbe_current {
            let advance = match a.phase {
                RbePhase::Load | RbePhase::Streamout => {
                    let all = rbe_req_range.clone().all(|ri| arb.granted[ri]);
                    if all {
                        a.load_progress += 1;
                    } else {
                        master_stalls[MASTER_RBE] += 1;
                    }
                    all
                }
                _ => true,
            };
            if advance && a.phase_left > 0 {
                a.phase_left -= 1;
                progressed = true;
            }
            if a.phase_left == 0 {
                if a.phase_start <= cycle {
                    timeline.push(PhaseInterval {
                        job_index: a.index,
                        phase: a.phase.name().to_string(),
                        start: a.phase_start,
                        end: cycle + 1,
                    });
                }
                let next = match a.phase {
                    RbePhase::Overhead => Some(RbePhase::Load),
                    RbePhase::Load => Some(RbePhase::Compute),
                    RbePhase::Compute => Some(RbePhase::Normquant),
                    RbePhase::Normquant => Some(RbePhase::Streamout),
                    RbePhase::Streamout => None,
                };
                match next {
                    Some(p) => {
                        a.phase = p;
                        a.phase_left = a.phase_len(p);
                        a.phase_start = cycle + 1;
                        a.load_progress = 0;
                    }
                    None => {
                        rbe::execute_functional(&a.job, &mut mem)
                            .map_err(|e| ClusterError::RbeRun(a.index, e))?;
                        rbe_done_jobs.push(JobDone {
                            job_index: a.index,
                            report: a.report.clone(),
                        });
                        completions.push((a.index, cycle));
                        events.rbe_done = true;
                        rbe_current = None;
                    }
                }
            }
        }

        // 7. barrier release: all live cores arrived
        let any_barrier = cores.iter().any(|c| c.block == Block::Barrier);
        if any_barrier
            && cores
                .iter()
                .all(|c| matches!(c.block, Block::Barrier | Block::Halted))
        {
            for c in cores.iter_mut() {
                if c.block == Block::Barrier {
                    c.block = Block::Runnable;
                }
            }
            progressed = true;
        }

        stagnant = if progressed { 0 } else { stagnant + 1 };
        if stagnant > deadlock_window {
            let diag: Vec<String> = cores
                .iter()
                .enumerate()
                .map(|(i, c)| format!("core{i}={:?}", c.block))
                .collect();
            return Err(ClusterError::Deadlock {
                cycle,
                diagnostic: format!(
                    "{}; dma pending={}, rbe pending={}",
                    diag.join(", "),
                    dma.plan.len() + usize::from(!dma.pairs.is_empty()),
                    rbe_queue.len() + rbe_pending.len() + usize::from(rbe_current.is_some())
                ),
            });
        }
        cycle += 1;
    }

    let trace = ClusterTrace {
        cycles: cycle,
        core_traces: cores.iter().map(|c| Trace::from_core(&c.state)).collect(),
        master_stalls,
        bank_conflicts,
        master_grants,
        dma_busy_cycles: dma.busy_cycles,
        rbe_timeline: timeline,
        rbe_completions: completions,
        resume_cycles: resumes,
        grants_total,
        max_grants_per_cycle: max_grants,
    };
    Ok((trace, mem))
}
