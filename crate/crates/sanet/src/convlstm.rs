//! 2-D convolutional LSTM: gates, memory cell and hidden state are computed
//! with spatial convolutions, so the recurrence preserves the grid.
//!
//! One cell is shared across all timesteps. Padding is fixed to
//! `dilation * (kernel - 1) / 2`, which keeps spatial extents unchanged for
//! every kernel-size/dilation combination.

use crate::error::{arg_err, shape_err, Result};
use crate::layers::ParamSet;
use crate::ops::conv::ConvParams;
use crate::tape::{Tape, Var};
use crate::tensor::{SeededRng, Shape, Tensor};

pub struct ConvLstmCell {
    pub name: String,
    pub w_ix: Tensor,
    pub w_ih: Tensor,
    pub w_fx: Tensor,
    pub w_fh: Tensor,
    pub w_ox: Tensor,
    pub w_oh: Tensor,
    pub w_gx: Tensor,
    pub w_gh: Tensor,
    /// One bias value per hidden channel, broadcast spatially.
    pub b_i: Tensor,
    pub b_f: Tensor,
    pub b_o: Tensor,
    pub b_g: Tensor,
    pub kernel_size: usize,
    pub dilation: usize,
    pub hidden_channels: usize,
}

/// Hidden state and memory cell; always the same shape.
#[derive(Clone, Copy)]
pub struct CellState {
    pub h: Var,
    pub c: Var,
}

impl ConvLstmCell {
    pub fn new(
        name: impl Into<String>,
        hidden_channels: usize,
        kernel_size: usize,
        dilation: usize,
        rng: &mut SeededRng,
    ) -> Result<ConvLstmCell> {
        if kernel_size % 2 == 0 || kernel_size == 0 {
            return arg_err("convlstm: kernel size must be odd");
        }
        if dilation < 1 {
            return arg_err("convlstm: dilation must be >= 1");
        }
        let name = name.into();
        let kshape = Shape::new(hidden_channels, hidden_channels, kernel_size, kernel_size);
        let fan_in = hidden_channels * kernel_size * kernel_size;
        let mut kernel = || Tensor::he_init(kshape, fan_in, rng);
        let (w_ix, w_ih, w_fx, w_fh) = (kernel()?, kernel()?, kernel()?, kernel()?);
        let (w_ox, w_oh, w_gx, w_gh) = (kernel()?, kernel()?, kernel()?, kernel()?);
        let bias = || Tensor::zeros(Shape::new(1, hidden_channels, 1, 1));
        Ok(ConvLstmCell {
            name,
            w_ix,
            w_ih,
            w_fx,
            w_fh,
            w_ox,
            w_oh,
            w_gx,
            w_gh,
            b_i: bias(),
            b_f: bias(),
            b_o: bias(),
            b_g: bias(),
            kernel_size,
            dilation,
            hidden_channels,
        })
    }

    /// Padding that preserves spatial extents.
    pub fn padding(&self) -> usize {
        self.dilation * (self.kernel_size - 1) / 2
    }

    fn conv_params(&self) -> ConvParams {
        ConvParams { stride: 1, padding: self.padding(), dilation: self.dilation, groups: 1 }
    }

    /// Zero state matching an input shape.
    pub fn zero_state(&self, tape: &mut Tape, like: Shape) -> CellState {
        let zeros = Tensor::zeros(Shape::new(like.n, self.hidden_channels, like.h, like.w));
        CellState { h: tape.leaf(zeros.clone()), c: tape.leaf(zeros) }
    }

    /// One recurrence step:
    /// `i = sig(w_ix*x + w_ih*h + b_i)`, `f`, `o` likewise,
    /// `g = tanh(w_gx*x + w_gh*h + b_g)`,
    /// `c_t = f o c_{t-1} + i o g`, `h_t = o o tanh(c_t)`.
    pub fn step(&self, tape: &mut Tape, x: Var, prev: &CellState) -> Result<CellState> {
        let xs = tape.shape(x);
        let hs = tape.shape(prev.h);
        if xs != hs {
            return shape_err(format!("convlstm step: input {xs} does not match state {hs}"));
        }
        let p = self.conv_params();
        let n = &self.name;
        let gate = |tape: &mut Tape,
                        wx: (&str, &Tensor),
                        wh: (&str, &Tensor),
                        b: (&str, &Tensor)|
         -> Result<Var> {
            let wx_v = tape.param(&format!("{n}.{}", wx.0), wx.1);
            let wh_v = tape.param(&format!("{n}.{}", wh.0), wh.1);
            let b_v = tape.param(&format!("{n}.{}", b.0), b.1);
            let from_x = tape.conv2d(x, wx_v, Some(b_v), p)?;
            let from_h = tape.conv2d(prev.h, wh_v, None, p)?;
            tape.add(from_x, from_h)
        };
        let i_pre = gate(tape, ("w_ix", &self.w_ix), ("w_ih", &self.w_ih), ("b_i", &self.b_i))?;
        let f_pre = gate(tape, ("w_fx", &self.w_fx), ("w_fh", &self.w_fh), ("b_f", &self.b_f))?;
        let o_pre = gate(tape, ("w_ox", &self.w_ox), ("w_oh", &self.w_oh), ("b_o", &self.b_o))?;
        let g_pre = gate(tape, ("w_gx", &self.w_gx), ("w_gh", &self.w_gh), ("b_g", &self.b_g))?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let o = tape.sigmoid(o_pre);
        let g = tape.tanh(g_pre);
        let keep = tape.hadamard(f, prev.c)?;
        let write = tape.hadamard(i, g)?;
        let c = tape.add(keep, write)?;
        let c_act = tape.tanh(c);
        let h = tape.hadamard(o, c_act)?;
        Ok(CellState { h, c })
    }

    /// Unroll from a zero state; returns every hidden state in order.
    pub fn run_sequence(&self, tape: &mut Tape, xs: &[Var]) -> Result<Vec<Var>> {
        let first = match xs.first() {
            Some(&v) => v,
            None => return arg_err("convlstm run_sequence: empty input sequence"),
        };
        let mut state = self.zero_state(tape, tape.shape(first));
        let mut hidden = Vec::with_capacity(xs.len());
        for &x in xs {
            state = self.step(tape, x, &state)?;
            hidden.push(state.h);
        }
        Ok(hidden)
    }
}

impl ParamSet for ConvLstmCell {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let n = &self.name;
        for (suffix, t) in [
            ("w_ix", &self.w_ix),
            ("w_ih", &self.w_ih),
            ("w_fx", &self.w_fx),
            ("w_fh", &self.w_fh),
            ("w_ox", &self.w_ox),
            ("w_oh", &self.w_oh),
            ("w_gx", &self.w_gx),
            ("w_gh", &self.w_gh),
            ("b_i", &self.b_i),
            ("b_f", &self.b_f),
            ("b_o", &self.b_o),
            ("b_g", &self.b_g),
        ] {
            f(&format!("{n}.{suffix}"), t);
        }
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let n = self.name.clone();
        for (suffix, t) in [
            ("w_ix", &mut self.w_ix),
            ("w_ih", &mut self.w_ih),
            ("w_fx", &mut self.w_fx),
            ("w_fh", &mut self.w_fh),
            ("w_ox", &mut self.w_ox),
            ("w_oh", &mut self.w_oh),
            ("w_gx", &mut self.w_gx),
            ("w_gh", &mut self.w_gh),
            ("b_i", &mut self.b_i),
            ("b_f", &mut self.b_f),
            ("b_o", &mut self.b_o),
            ("b_g", &mut self.b_g),
        ] {
            f(&format!("{n}.{suffix}"), t);
        }
    }
}
