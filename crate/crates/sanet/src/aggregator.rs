//! Multi-layer feature aggregation: every tap is shape-matched by bilinear
//! resize and a 1x1 bias-free channel conversion, the converted sequence
//! runs through the convolutional LSTM shallow to deep, and the output is
//! the mean of the hidden states.

use crate::convlstm::ConvLstmCell;
use crate::error::{arg_err, shape_err, Result};
use crate::layers::{ConvLayer, ParamSet};
use crate::tape::{Tape, Var};
use crate::tensor::{SeededRng, Tensor};

/// One tap's conversion: resize happens first (inside), the 1x1 convolution
/// second (outside). The kernel has unit spatial extent and no bias.
pub struct TapSpec {
    pub source: String,
    pub conv: ConvLayer,
}

impl TapSpec {
    pub fn new(
        prefix: &str,
        source: impl Into<String>,
        c_in: usize,
        c_out: usize,
        rng: &mut SeededRng,
    ) -> Result<TapSpec> {
        let source = source.into();
        let conv = ConvLayer::pointwise(format!("{prefix}.convert_{source}"), c_in, c_out, rng)?;
        Ok(TapSpec { source, conv })
    }

    pub fn conversion_kernel(&self) -> &Tensor {
        &self.conv.weight
    }
}

pub struct Aggregator {
    pub taps: Vec<TapSpec>,
    pub cell: ConvLstmCell,
    pub target_channels: usize,
}

impl Aggregator {
    pub fn new(
        name: &str,
        tap_channels: &[usize],
        target_channels: usize,
        lstm_kernel: usize,
        lstm_dilation: usize,
        rng: &mut SeededRng,
    ) -> Result<Aggregator> {
        if tap_channels.is_empty() {
            return arg_err("aggregator: need at least one tap");
        }
        let taps = tap_channels
            .iter()
            .enumerate()
            .map(|(i, &c)| TapSpec::new(name, format!("s{i}"), c, target_channels, rng))
            .collect::<Result<Vec<_>>>()?;
        let cell = ConvLstmCell::new(
            format!("{name}.cell"),
            target_channels,
            lstm_kernel,
            lstm_dilation,
            rng,
        )?;
        Ok(Aggregator { taps, cell, target_channels })
    }

    /// Resize to the target grid, then convert channels: identity when the
    /// tap already has the target shape and the kernel is a channel identity.
    pub fn convert_tap(
        &self,
        tape: &mut Tape,
        x: Var,
        tap_index: usize,
        target_hw: (usize, usize),
    ) -> Result<Var> {
        let resized = tape.bilinear_resize(x, target_hw.0, target_hw.1)?;
        self.taps[tap_index].conv.forward(tape, resized)
    }

    /// Mean of the ConvLSTM hidden states over the converted tap sequence,
    /// ordered shallow to deep.
    pub fn aggregate(&self, tape: &mut Tape, taps: &[Var], target_hw: (usize, usize)) -> Result<Var> {
        if taps.is_empty() {
            return arg_err("aggregate: empty tap list");
        }
        if taps.len() != self.taps.len() {
            return shape_err(format!(
                "aggregate: {} taps supplied, {} configured",
                taps.len(),
                self.taps.len()
            ));
        }
        let converted = taps
            .iter()
            .enumerate()
            .map(|(i, &t)| self.convert_tap(tape, t, i, target_hw))
            .collect::<Result<Vec<_>>>()?;
        let hidden = self.cell.run_sequence(tape, &converted)?;
        tape.mean_of(&hidden)
    }
}

impl ParamSet for Aggregator {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for t in &self.taps {
            t.conv.visit(f);
        }
        self.cell.visit(f);
    }

    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for t in &mut self.taps {
            t.conv.visit_mut(f);
        }
        self.cell.visit_mut(f);
    }
}
