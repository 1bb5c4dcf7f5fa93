//! Recurrent events-to-grayscale reconstruction.
//!
//! A U-Net over voxel grids: strided conv encoders with a recurrent cell at
//! each stage (the carried temporal state), residual blocks at the bottleneck,
//! nearest-up decoders with additive skips, and a sigmoid head that bounds
//! the output frame to `[0,1]`. Five presets (B0..B4) scale the width, depth,
//! and cell type.

mod cell;
mod ckpt;
mod ssim;
pub mod train;

pub use cell::{cell_step, CellKind};
pub use ckpt::{load_checkpoint, save_checkpoint};
pub use ssim::{gaussian_kernel, ssim, ssim_on, SSIM_C1, SSIM_C2, SSIM_RADIUS, SSIM_SIGMA};

use crate::events::VoxelGrid;
use crate::layers::conv;
use crate::params::{Bound, Ctx, ParamStore};
use crate::tape::{Tape, Var};
use crate::{Error, Result};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    B0,
    B1,
    B2,
    B3,
    B4,
}

impl Preset {
    pub fn all() -> [Preset; 5] {
        [Preset::B0, Preset::B1, Preset::B2, Preset::B3, Preset::B4]
    }

    pub fn name(&self) -> &'static str {
        match self {
            Preset::B0 => "b0",
            Preset::B1 => "b1",
            Preset::B2 => "b2",
            Preset::B3 => "b3",
            Preset::B4 => "b4",
        }
    }

    pub fn from_name(s: &str) -> Result<Preset> {
        match s.to_ascii_lowercase().as_str() {
            "b0" => Ok(Preset::B0),
            "b1" => Ok(Preset::B1),
            "b2" => Ok(Preset::B2),
            "b3" => Ok(Preset::B3),
            "b4" => Ok(Preset::B4),
            other => Err(Error::config(format!("unknown preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct E2vidConfig {
    pub cell: CellKind,
    pub base_channels: usize,
    pub encoder_channels: Vec<usize>,
    pub n_residual_blocks: usize,
    pub input_bins: usize,
}

impl E2vidConfig {
    pub fn preset(p: Preset) -> E2vidConfig {
        let (cell, base, enc, res): (CellKind, usize, Vec<usize>, usize) = match p {
            Preset::B0 => (CellKind::ConvGru, 12, vec![24, 48], 1),
            Preset::B1 => (CellKind::ConvGru, 16, vec![32, 64, 128], 1),
            Preset::B2 => (CellKind::ConvLstm, 20, vec![40, 80, 160], 2),
            Preset::B3 => (CellKind::ConvLstm, 32, vec![64, 100, 200], 2),
            Preset::B4 => (CellKind::ConvLstm, 32, vec![64, 150, 300, 512], 3),
        };
        E2vidConfig {
            cell,
            base_channels: base,
            encoder_channels: enc,
            n_residual_blocks: res,
            input_bins: crate::events::DEFAULT_BINS,
        }
    }

    pub fn n_stages(&self) -> usize {
        self.encoder_channels.len()
    }

    /// Spatial divisor imposed by the strided encoders.
    pub fn downsample(&self) -> usize {
        1 << self.n_stages()
    }
}

/// Per-stage hidden tensors (`[C,H,W]`), plus cell tensors for LSTM presets.
#[derive(Clone, Debug, PartialEq)]
pub struct StageState {
    pub h: ArrayD<f64>,
    pub c: Option<ArrayD<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecurrentState {
    pub stages: Vec<StageState>,
}

impl RecurrentState {
    /// Puts the state on a tape as constants — the entry into each unroll
    /// window, which also truncates backpropagation at the window boundary.
    pub fn to_vars(&self, tape: &mut Tape) -> StateVars {
        let stages = self
            .stages
            .iter()
            .map(|s| {
                let h = tape.constant(s.h.clone());
                let c = s.c.as_ref().map(|c| tape.constant(c.clone()));
                (h, c)
            })
            .collect();
        StateVars { stages }
    }
}

/// Tape-resident recurrent state used while a window is being recorded.
#[derive(Clone)]
pub struct StateVars {
    pub stages: Vec<(Var, Option<Var>)>,
}

impl StateVars {
    pub fn to_values(&self, tape: &Tape) -> RecurrentState {
        let stages = self
            .stages
            .iter()
            .map(|(h, c)| StageState {
                h: tape.value(*h).clone(),
                c: c.map(|c| tape.value(c).clone()),
            })
            .collect();
        RecurrentState { stages }
    }
}

pub struct E2vid {
    pub config: E2vidConfig,
    pub store: ParamStore,
}

impl E2vid {
    pub fn new(config: E2vidConfig, seed: u64) -> E2vid {
        let mut model = E2vid { config, store: ParamStore::new(seed) };
        model.register_all();
        model
    }

    /// Runs one throwaway forward at the smallest legal resolution so every
    /// parameter tensor exists up front (exact counts, complete checkpoints).
    fn register_all(&mut self) {
        let side = self.config.downsample();
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let voxel = tape.constant(ArrayD::zeros(IxDyn(&[self.config.input_bins, side, side])));
        let state = self.init_state(side, side).expect("registration resolution is divisible");
        let sv = state.to_vars(&mut tape);
        let config = self.config.clone();
        let mut ctx = Ctx::frozen(&mut tape, &mut self.store, &mut bound);
        let _ = forward_on(&mut ctx, &config, voxel, &sv);
    }

    pub fn param_count(&self) -> usize {
        self.store.n_scalars()
    }

    /// All-zero state for an `h`x`w` input.
    pub fn init_state(&self, h: usize, w: usize) -> Result<RecurrentState> {
        let d = self.config.downsample();
        if h == 0 || w == 0 || h % d != 0 || w % d != 0 {
            return Err(Error::config(format!(
                "resolution {h}x{w} not divisible by the encoder downsampling factor {d}"
            )));
        }
        let stages = self
            .config
            .encoder_channels
            .iter()
            .enumerate()
            .map(|(i, &ch)| {
                let shape = IxDyn(&[ch, h >> (i + 1), w >> (i + 1)]);
                StageState {
                    h: ArrayD::zeros(shape.clone()),
                    c: matches!(self.config.cell, CellKind::ConvLstm)
                        .then(|| ArrayD::zeros(shape)),
                }
            })
            .collect();
        Ok(RecurrentState { stages })
    }

    /// Inference step: reconstructs one frame and advances the state.
    pub fn reconstruct_step(
        &mut self,
        voxel: &VoxelGrid,
        state: &RecurrentState,
    ) -> Result<(Array2<f64>, RecurrentState)> {
        if voxel.n_bins() != self.config.input_bins {
            return Err(Error::contract(format!(
                "voxel has {} bins, model expects {}",
                voxel.n_bins(),
                self.config.input_bins
            )));
        }
        let (h, w) = (voxel.height(), voxel.width());
        let expected = self.init_state(h, w)?;
        for (i, (got, want)) in state.stages.iter().zip(&expected.stages).enumerate() {
            if got.h.shape() != want.h.shape() || got.c.is_some() != want.c.is_some() {
                return Err(Error::contract(format!(
                    "stage {i} state shape {:?} does not match input {h}x{w}",
                    got.h.shape()
                )));
            }
        }
        let mut tape = Tape::new();
        let mut bound = Bound::new();
        let voxel_var = tape.constant(voxel.to_chw().into_dyn());
        let sv = state.to_vars(&mut tape);
        let config = self.config.clone();
        let mut ctx = Ctx::frozen(&mut tape, &mut self.store, &mut bound);
        let (frame, next) = forward_on(&mut ctx, &config, voxel_var, &sv);
        let out = tape
            .value(frame)
            .clone()
            .into_dimensionality::<ndarray::Ix2>()
            .expect("frame is 2-d");
        Ok((out, next.to_values(&tape)))
    }

    /// Reconstructs a whole window sequence from a zero initial state.
    pub fn reconstruct_sequence(
        &mut self,
        grids: &[VoxelGrid],
    ) -> Result<(Vec<Array2<f64>>, RecurrentState)> {
        let first = grids.first().ok_or_else(|| Error::contract("empty grid sequence"))?;
        let mut state = self.init_state(first.height(), first.width())?;
        let mut frames = Vec::with_capacity(grids.len());
        for g in grids {
            let (frame, next) = self.reconstruct_step(g, &state)?;
            frames.push(frame);
            state = next;
        }
        Ok((frames, state))
    }
}

/// One recurrent U-Net step on the tape. `voxel` is `[bins,H,W]`; returns the
/// `[H,W]` frame (sigmoid-bounded) and the successor state.
pub fn forward_on(
    ctx: &mut Ctx,
    config: &E2vidConfig,
    voxel: Var,
    state: &StateVars,
) -> (Var, StateVars) {
    let enc = &config.encoder_channels;
    assert_eq!(state.stages.len(), enc.len(), "state must have one entry per encoder stage");
    let head = conv(ctx, "e2vid.head", voxel, config.input_bins, config.base_channels, 3, 1, 1);
    let mut f = ctx.tape.silu(head);
    let mut skips = vec![f];
    let mut next = Vec::with_capacity(enc.len());
    let mut ch_prev = config.base_channels;
    for (i, &ch) in enc.iter().enumerate() {
        let d = conv(ctx, &format!("e2vid.enc{i}.down"), f, ch_prev, ch, 3, 2, 1);
        let d = ctx.tape.silu(d);
        let (h, c) = cell_step(ctx, &format!("e2vid.enc{i}.cell"), config.cell, d, state.stages[i], ch);
        f = h;
        next.push((h, c));
        skips.push(f);
        ch_prev = ch;
    }
    let deep = *enc.last().unwrap();
    for j in 0..config.n_residual_blocks {
        let r = conv(ctx, &format!("e2vid.res{j}.a"), f, deep, deep, 3, 1, 1);
        let r = ctx.tape.silu(r);
        let r = conv(ctx, &format!("e2vid.res{j}.b"), r, deep, deep, 3, 1, 1);
        f = ctx.tape.add(f, r);
    }
    for i in (0..enc.len()).rev() {
        let cout = if i == 0 { config.base_channels } else { enc[i - 1] };
        let up = ctx.tape.nearest_up2(f);
        let d = conv(ctx, &format!("e2vid.dec{i}.conv"), up, enc[i], cout, 3, 1, 1);
        let d = ctx.tape.silu(d);
        f = ctx.tape.add(d, skips[i]);
    }
    let out = conv(ctx, "e2vid.out", f, config.base_channels, 1, 3, 1, 1);
    let out = ctx.tape.sigmoid(out);
    let shape = ctx.tape.value(out).shape().to_vec();
    let frame = ctx.tape.reshape(out, &[shape[1], shape[2]]);
    (frame, StateVars { stages: next })
}

/// Training objective: mean absolute error plus `0.5 * (1 - SSIM)`.
pub fn reconstruction_loss(tape: &mut Tape, frame: Var, target: Var) -> Var {
    let diff = tape.sub(frame, target);
    let absdiff = tape.abs(diff);
    let l1 = tape.mean_all(absdiff);
    let s = ssim_on(tape, frame, target);
    let neg = tape.scale(s, -1.0);
    let dissim = tape.add_scalar(neg, 1.0);
    let weighted = tape.scale(dissim, 0.5);
    tape.add(l1, weighted)
}
