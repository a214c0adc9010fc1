//! Losses, metrics, optimizer, schedule, augmentation and the inference
//! protocol.

pub mod augment;
pub mod infer;
pub mod loss;
pub mod metrics;
pub mod optim;

use crate::error::{shape_err, Result};

pub use augment::{augment, AugmentConfig};
pub use infer::multi_scale_infer;
pub use loss::{cross_entropy, lovasz_softmax, LossValue};
pub use metrics::{argmax_channels, metrics, MetricReport};
pub use optim::{adamw_step, poly_lr, AdamW, AdamWParams};

/// Per-pixel class map. 255 is the reserved ignore value.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Labels {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<u8>,
}

impl Labels {
    pub fn new(n: usize, h: usize, w: usize, data: Vec<u8>) -> Result<Labels> {
        if data.len() != n * h * w {
            return shape_err(format!(
                "labels: {} values for {n}x{h}x{w}",
                data.len()
            ));
        }
        Ok(Labels { n, h, w, data })
    }

    pub fn filled(n: usize, h: usize, w: usize, value: u8) -> Labels {
        Labels { n, h, w, data: vec![value; n * h * w] }
    }

    #[inline]
    pub fn at(&self, n: usize, y: usize, x: usize) -> u8 {
        self.data[(n * self.h + y) * self.w + x]
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    /// Stack single-sample maps into one batch.
    pub fn stack(items: &[&Labels]) -> Result<Labels> {
        let (h, w) = (items[0].h, items[0].w);
        let mut data = Vec::new();
        let mut n = 0;
        for l in items {
            if l.h != h || l.w != w {
                return shape_err("labels stack: extent mismatch");
            }
            data.extend_from_slice(&l.data);
            n += l.n;
        }
        Labels::new(n, h, w, data)
    }
}
