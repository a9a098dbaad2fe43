//! Layer tiling and network scheduling: choose L1 tiles under the on-chip
//! memory budget with double buffering, cost each layer as the maximum of
//! its overlapped off-chip, on-chip and compute streams, classify which
//! stream dominates, and report energy through the power model.


use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abb;
use crate::calib::Calibration;
use crate::kernels::{self, KernelSpec};
use crate::quant::{BitWidth, ConvMode, NormParams, Padding};
use crate::rbe::{self, RbeJob};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv3x3,
    Conv1x1,
    DwConv3x3,
    Linear,
    Add,
}

impl LayerKind {
    /// Layers executed on the convolution engine; the rest run in software
    /// on the cores.
    pub fn on_engine(self) -> bool {
        matches!(self, LayerKind::Conv3x3 | LayerKind::Conv1x1 | LayerKind::Linear)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Residency {
    L2,
    L3,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub name: String,
    pub kind: LayerKind,
    /// Output spatial extents.
    pub h: usize,
    pub w: usize,
    pub kin: usize,
    pub kout: usize,
    pub w_bits: u8,
    pub i_bits: u8,
    pub o_bits: u8,
    pub input_residency: Residency,
    pub output_residency: Residency,
}

impl LayerDescriptor {
    pub fn validate(&self) -> Result<(), TilerError> {
        for (what, v) in [("h", self.h), ("w", self.w), ("kin", self.kin), ("kout", self.kout)] {
            if v == 0 {
                return Err(TilerError::InvalidLayer {
                    layer: self.name.clone(),
                    what: format!("{what} is zero"),
                });
            }
        }
        for (what, b) in [("w_bits", self.w_bits), ("i_bits", self.i_bits), ("o_bits", self.o_bits)] {
            if !(2..=8).contains(&b) {
                return Err(TilerError::InvalidLayer {
                    layer: self.name.clone(),
                    what: format!("{what} = {b} outside [2, 8]"),
                });
            }
        }
        if self.kind == LayerKind::Add && self.kin != self.kout {
            return Err(TilerError::InvalidLayer {
                layer: self.name.clone(),
                what: "add layer needs kin == kout".into(),
            });
        }
        Ok(())
    }

    pub fn macs(&self) -> u64 {
        let taps = match self.kind {
            LayerKind::Conv3x3 => 9,
            LayerKind::Conv1x1 | LayerKind::Linear => 1,
            LayerKind::DwConv3x3 => 9,
            LayerKind::Add => 1,
        };
        let kin = if matches!(self.kind, LayerKind::DwConv3x3 | LayerKind::Add) {
            1
        } else {
            self.kin
        };
        (self.h * self.w * self.kout * kin * taps) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TileSolution {
    pub th: usize,
    pub tw: usize,
    pub tkin: usize,
    pub tkout: usize,
    pub in_bytes: u64,
    pub out_bytes: u64,
    pub wgt_bytes: u64,
    pub double_buffered: bool,
    pub tiles: u64,
}

impl TileSolution {
    pub fn footprint(&self) -> u64 {
        let f = self.in_bytes + self.out_bytes + self.wgt_bytes;
        if self.double_buffered { 2 * f } else { f }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TilerError {
    #[error("layer {layer}: {what}")]
    InvalidLayer { layer: String, what: String },
    #[error(
        "layer {layer}: infeasible under {budget} B budget — minimal tile's {buffer} buffer alone needs {bytes} B"
    )]
    Infeasible { layer: String, buffer: &'static str, bytes: u64, budget: u64 },
    #[error("kernel generation failed: {0}")]
    Kernel(#[from] kernels::KernelError),
    #[error("cannot read network file {0}: {1}")]
    Io(String, std::io::Error),
    #[error("invalid network file: {0}")]
    Parse(serde_json::Error),
}

/// Packed-format buffer bytes for one tile of the layer.
fn tile_bytes(layer: &LayerDescriptor, th: usize, tw: usize, tkin: usize, tkout: usize) -> (u64, u64, u64) {
    let kin32 = tkin.div_ceil(32) as u64;
    let kout32 = tkout.div_ceil(32) as u64;
    let (ib, wb, ob) = (layer.i_bits as u64, layer.w_bits as u64, layer.o_bits as u64);
    let spatial_in = match layer.kind {
        LayerKind::Conv3x3 | LayerKind::DwConv3x3 => ((th + 2) * (tw + 2)) as u64,
        _ => (th * tw) as u64,
    };
    let input = match layer.kind {
        // residual add reads two operands of the output channel depth
        LayerKind::Add => 2 * (th * tw) as u64 * kout32 * ib * 4,
        _ => spatial_in * kin32 * ib * 4,
    };
    let weights = match layer.kind {
        LayerKind::Conv3x3 => tkout as u64 * kin32 * wb * 9 * 4,
        LayerKind::Conv1x1 | LayerKind::Linear => tkout as u64 * kin32 * wb * 4,
        LayerKind::DwConv3x3 => kout32 * wb * 9 * 4,
        LayerKind::Add => 0,
    };
    let output = (th * tw) as u64 * kout32 * ob * 4;
    (input, output, weights)
}

fn channel_candidates(full: usize) -> Vec<usize> {
    let mut c = vec![full];
    let mut m = full / 32;
    if full % 32 == 0 {
        m -= 1;
    }
    while m >= 1 {
        c.push(32 * m);
        m -= 1;
    }
    c
}

/// Greedy maximize-volume tiling under the (double-buffered) footprint
/// constraint. Full-depth input tiles are preferred outright — splitting the
/// accumulation dimension forces partial-sum spills — and ties break toward
/// the largest kout, then h, then w, deterministically.
pub fn tile_layer(layer: &LayerDescriptor, budget: u64) -> Result<TileSolution, TilerError> {
    layer.validate()?;
    let kin_tiers: Vec<usize> = if matches!(layer.kind, LayerKind::DwConv3x3 | LayerKind::Add) {
        vec![layer.kin]
    } else {
        channel_candidates(layer.kin)
    };
    let kout_cands = channel_candidates(layer.kout);

    let solution_for = |th: usize, tw: usize, tkin: usize, tkout: usize| -> TileSolution {
        let (i, o, wgt) = tile_bytes(layer, th, tw, tkin, tkout);
        let tiles = (layer.h.div_ceil(th)
            * layer.w.div_ceil(tw)
            * layer.kin.div_ceil(tkin)
            * layer.kout.div_ceil(tkout)) as u64;
        TileSolution {
            th,
            tw,
            tkin,
            tkout,
            in_bytes: i,
            out_bytes: o,
            wgt_bytes: wgt,
            double_buffered: tiles > 1,
            tiles,
        }
    };

    // full-kin tier first; only fall back to accumulator-splitting tiers
    // when no full-depth tile fits at all
    for &tkin in &kin_tiers {
        let mut best: Option<(u128, TileSolution)> = None;
        for &tkout in &kout_cands {
            for th in (1..=layer.h).rev() {
                for tw in (1..=layer.w).rev() {
                    let s = solution_for(th, tw, tkin, tkout);
                    if s.footprint() > budget {
                        continue;
                    }
                    // lexicographic key: volume, then kout, h, w
                    let key = (((th * tw * tkin * tkout) as u128) << 48)
                        | ((tkout as u128) << 32)
                        | ((th as u128) << 16)
                        | tw as u128;
                    if best.as_ref().is_none_or(|(k, _)| key > *k) {
                        best = Some((key, s));
                    }
                }
            }
        }
        if let Some((_, s)) = best {
            return Ok(s);
        }
    }

    let min_kin = *kin_tiers.last().unwrap();
    let min_kout = *kout_cands.last().unwrap();
    let (i, o, w) = tile_bytes(layer, 1, 1, min_kin, min_kout);
    let buffer = if w >= i && w >= o {
        "weights"
    } else if i >= o {
        "in"
    } else {
        "out"
    };
    Err(TilerError::Infeasible {
        layer: layer.name.clone(),
        buffer,
        bytes: i.max(o).max(w),
        budget,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundedness {
    Offchip,
    Onchip,
    Compute,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub vdd: f64,
    pub freq_hz: f64,
    pub vbb: f64,
}

impl Default for OperatingPoint {
    fn default() -> Self {
        OperatingPoint { vdd: 0.8, freq_hz: 420.0e6, vbb: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub kind: LayerKind,
    pub tile: TileSolution,
    pub offchip_cycles: u64,
    pub onchip_cycles: u64,
    pub compute_cycles: u64,
    /// max(offchip, onchip, compute) + non-overlappable prologue/epilogue.
    pub latency_cycles: u64,
    pub bound: Boundedness,
    pub energy_mj: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkSchedule {
    pub layers: Vec<LayerCost>,
    pub total_cycles: u64,
    pub total_energy_mj: f64,
}

/// Software-kernel cost cache: cycle-per-MAC and cycle-per-element figures
/// measured once per precision on the core emulator.
#[derive(Debug, Default)]
struct SoftwareCosts {
    per_mac: HashMap<u8, f64>,
    per_elem: Option<f64>,
}

impl SoftwareCosts {
    fn cycles_per_mac(&mut self, bits: u8) -> Result<f64, TilerError> {
        // the SIMD datapath supports 2/4/8-bit lanes; odd widths run at the
        // next wider lane
        let lane = if bits <= 2 {
            2
        } else if bits <= 4 {
            4
        } else {
            8
        };
        if let Some(&c) = self.per_mac.get(&lane) {
            return Ok(c);
        }
        let (m, n, k) = (16, 16, 64);
        let kernel = kernels::gen_matmul(&KernelSpec::matmul(m, n, k, lane, true))?;
        let mut mem = crate::isa::FlatMem::default();
        kernel.load_inputs(&mut mem, &vec![1u32; m * k], &vec![1u32; k * n]);
        let stats = kernels::measure(&kernel.prog, &mut mem, (m * n * k) as u64)
            .expect("cost-probe kernel terminates");
        let c = stats.cycles as f64 / (m * n * k) as f64;
        self.per_mac.insert(lane, c);
        Ok(c)
    }

    fn cycles_per_elem(&mut self) -> f64 {
        if let Some(c) = self.per_elem {
            return c;
        }
        let n = 4096;
        let kernel = kernels::gen_vecadd(n);
        let mut mem = crate::isa::FlatMem::default();
        kernel.load_inputs(&mut mem, &vec![1u8; n], &vec![2u8; n]);
        let stats = kernels::measure(&kernel.prog, &mut mem, 0)
            .expect("cost-probe kernel terminates");
        let c = stats.cycles as f64 / n as f64;
        self.per_elem = Some(c);
        c
    }
}

fn engine_tile_cycles(layer: &LayerDescriptor, t: &TileSolution, calib: &Calibration) -> u64 {
    let mode = match layer.kind {
        LayerKind::Conv3x3 => ConvMode::Conv3x3,
        _ => ConvMode::Conv1x1,
    };
    let job = RbeJob::new(
        mode,
        BitWidth(layer.w_bits),
        BitWidth(layer.i_bits),
        BitWidth(layer.o_bits),
        t.tkin,
        t.tkout,
        t.th,
        t.tw,
        Padding::Same,
        NormParams::unit(t.tkout, true),
    );
    rbe::execute_timed(&job, &calib.rbe).total
}

const WORKER_CORES: u64 = 16;

/// Per-layer latency/energy model over a tiled schedule. Off-chip, on-chip
/// and compute streams are fully overlapped except for the first tile's load
/// and the last tile's store.
pub fn schedule_network(
    layers: &[LayerDescriptor],
    op: &OperatingPoint,
    calib: &Calibration,
) -> Result<NetworkSchedule, TilerError> {
    let budget = calib.memory.l1_bytes;
    let mut sw = SoftwareCosts::default();
    let mut out = vec![];
    for layer in layers {
        let tile = tile_layer(layer, budget)?;
        let compute_cycles = if layer.kind.on_engine() {
            engine_tile_cycles(layer, &tile, calib) * tile.tiles
        } else if layer.kind == LayerKind::DwConv3x3 {
            let macs = (layer.h * layer.w * layer.kout * 9) as u64;
            (macs as f64 * sw.cycles_per_mac(layer.w_bits)? / WORKER_CORES as f64).ceil() as u64
        } else {
            let elems = (layer.h * layer.w * layer.kout) as u64;
            (elems as f64 * sw.cycles_per_elem() / WORKER_CORES as f64).ceil() as u64
        };

        let tile_total = tile.in_bytes + tile.out_bytes + tile.wgt_bytes;
        let onchip_cycles = tile.tiles
            * (tile_total.div_ceil(calib.memory.dma_bytes_per_cycle)
                + calib.memory.dma_setup_cycles);

        let mut l3_bytes = 0u64;
        if layer.input_residency == Residency::L3 {
            l3_bytes += tile.in_bytes * tile.tiles;
        }
        if layer.output_residency == Residency::L3 {
            l3_bytes += tile.out_bytes * tile.tiles;
        }
        let offchip_cycles = if l3_bytes == 0 {
            0
        } else {
            (l3_bytes as f64 / calib.memory.l3_bytes_per_cycle).ceil() as u64
                + calib.memory.l3_latency_cycles
        };

        let prologue = (tile.in_bytes + tile.wgt_bytes).div_ceil(calib.memory.dma_bytes_per_cycle)
            + calib.memory.dma_setup_cycles;
        let epilogue =
            tile.out_bytes.div_ceil(calib.memory.dma_bytes_per_cycle) + calib.memory.dma_setup_cycles;
        let latency_cycles =
            offchip_cycles.max(onchip_cycles).max(compute_cycles) + prologue + epilogue;

        let bound = if compute_cycles >= onchip_cycles && compute_cycles >= offchip_cycles {
            Boundedness::Compute
        } else if onchip_cycles >= offchip_cycles {
            Boundedness::Onchip
        } else {
            Boundedness::Offchip
        };

        let activity = if layer.kind.on_engine() {
            calib.power.activity_rbe
        } else {
            calib.power.activity_cores
        };
        let power_mw = abb::power(&calib.power, op.vdd, op.freq_hz, op.vbb, activity);
        let energy_mj = power_mw * latency_cycles as f64 / op.freq_hz;

        out.push(LayerCost {
            name: layer.name.clone(),
            kind: layer.kind,
            tile,
            offchip_cycles,
            onchip_cycles,
            compute_cycles,
            latency_cycles,
            bound,
            energy_mj,
        });
    }
    let total_cycles = out.iter().map(|l| l.latency_cycles).sum();
    let total_energy_mj = out.iter().map(|l| l.energy_mj).sum();
    Ok(NetworkSchedule { layers: out, total_cycles, total_energy_mj })
}

pub fn classify(schedule: &NetworkSchedule) -> Vec<Boundedness> {
    schedule.layers.iter().map(|l| l.bound).collect()
}

/// One row per layer: cycle counts by stream, dominant stream, energy.
pub fn schedule_csv(s: &NetworkSchedule) -> String {
    let mut out = String::from(
        "layer,kind,tiles,offchip_cycles,onchip_cycles,compute_cycles,latency_cycles,bound,energy_mj\n",
    );
    for l in &s.layers {
        out.push_str(&format!(
            "{},{:?},{},{},{},{},{},{:?},{:.6}\n",
            l.name,
            l.kind,
            l.tile.tiles,
            l.offchip_cycles,
            l.onchip_cycles,
            l.compute_cycles,
            l.latency_cycles,
            l.bound,
            l.energy_mj
        ));
    }
    out.push_str(&format!(
        "total,,,,,,{},,{:.6}\n",
        s.total_cycles, s.total_energy_mj
    ));
    out
}

pub fn load_network(path: &Path) -> Result<Vec<LayerDescriptor>, TilerError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| TilerError::Io(path.display().to_string(), e))?;
    let layers: Vec<LayerDescriptor> = serde_json::from_str(&text).map_err(TilerError::Parse)?;
    for l in &layers {
        l.validate()?;
    }
    Ok(layers)
}
