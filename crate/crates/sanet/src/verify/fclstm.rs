//! Fully-connected LSTM reference: the same gate structure as the
//! convolutional cell, with matrix products in place of convolutions.

use crate::tensor::{sigmoid, Elem};

/// Row-major gate matrices: `w_*x` is hidden x input, `w_*h` hidden x hidden.
pub struct FcLstmWeights {
    pub w_ix: Vec<Vec<Elem>>,
    pub w_ih: Vec<Vec<Elem>>,
    pub w_fx: Vec<Vec<Elem>>,
    pub w_fh: Vec<Vec<Elem>>,
    pub w_ox: Vec<Vec<Elem>>,
    pub w_oh: Vec<Vec<Elem>>,
    pub w_gx: Vec<Vec<Elem>>,
    pub w_gh: Vec<Vec<Elem>>,
    pub b_i: Vec<Elem>,
    pub b_f: Vec<Elem>,
    pub b_o: Vec<Elem>,
    pub b_g: Vec<Elem>,
}

fn matvec(m: &[Vec<Elem>], v: &[Elem]) -> Vec<Elem> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Run the recurrence from zero state; returns every hidden state in order.
pub fn fclstm_reference(w: &FcLstmWeights, inputs: &[Vec<Elem>]) -> Vec<Vec<Elem>> {
    let hidden = w.b_i.len();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    let mut outputs = Vec::with_capacity(inputs.len());
    for x in inputs {
        let pre = |wx: &[Vec<Elem>], wh: &[Vec<Elem>], b: &[Elem]| -> Vec<Elem> {
            let a = matvec(wx, x);
            let r = matvec(wh, &h);
            (0..hidden).map(|k| a[k] + r[k] + b[k]).collect()
        };
        let i: Vec<Elem> = pre(&w.w_ix, &w.w_ih, &w.b_i).iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<Elem> = pre(&w.w_fx, &w.w_fh, &w.b_f).iter().map(|&v| sigmoid(v)).collect();
        let o: Vec<Elem> = pre(&w.w_ox, &w.w_oh, &w.b_o).iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<Elem> = pre(&w.w_gx, &w.w_gh, &w.b_g).iter().map(|&v| v.tanh()).collect();
        for k in 0..hidden {
            c[k] = f[k] * c[k] + i[k] * g[k];
            h[k] = o[k] * c[k].tanh();
        }
        outputs.push(h.clone());
    }
    outputs
}
