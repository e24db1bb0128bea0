use crate::error::Result;
use crate::numcore::{Tape, Tensor, Var};
use crate::seeds::derive_seed;

use super::config::ModelConfig;
use super::params::{Bound, ParamStore};

pub fn init_conv_encoder(store: &mut ParamStore, seed: u64, prefix: &str, cfg: &ModelConfig) {
    let mut cin = 2 * cfg.channels;
    let k = cfg.conv_kernel;
    for (i, &cout) in cfg.conv_channels.iter().enumerate() {
        let bound = 1.0 / ((cin * k * k) as f64).sqrt();
        store.insert_uniform(seed, &format!("{prefix}.conv{i}.w"), &[cout, cin, k, k], bound);
        store.insert_uniform(seed, &format!("{prefix}.conv{i}.b"), &[cout], bound);
        cin = cout;
    }
}

/// Stacked frame pairs `[n, 2c, h, w]` to features `[n, d]`.
pub fn conv_encoder(tape: &mut Tape, p: &Bound, prefix: &str, cfg: &ModelConfig, x: Var) -> Result<Var> {
    let mut h = x;
    for i in 0..cfg.conv_channels.len() {
        let w = p.get(&format!("{prefix}.conv{i}.w"))?;
        let b = p.get(&format!("{prefix}.conv{i}.b"))?;
        h = tape.conv2d(h, w, b, cfg.conv_stride, cfg.conv_pad())?;
        h = tape.leaky_relu(h, cfg.leaky_slope);
    }
    let n = tape.shape(h)[0];
    let flat: usize = tape.shape(h)[1..].iter().product();
    let h = tape.reshape(h, &[n, flat])?;
    tape.avg_pool(h, cfg.feature_pool)
}

/// Gate order along the `4H` axis: input, forget, cell, output.
pub fn init_lstm(store: &mut ParamStore, seed: u64, prefix: &str, input: usize, hidden: usize) {
    store.insert_uniform(seed, &format!("{prefix}.wx"), &[input, 4 * hidden], 1.0 / (input as f64).sqrt());
    store.insert_uniform(seed, &format!("{prefix}.wh"), &[hidden, 4 * hidden], 1.0 / (hidden as f64).sqrt());
    let mut b = vec![0.0; 4 * hidden];
    b[hidden..2 * hidden].fill(1.0);
    store.insert(format!("{prefix}.b"), Tensor::vector(&b));
}

#[derive(Clone, Copy, Debug)]
pub struct LstmState {
    pub h: Var,
    pub c: Var,
}

impl LstmState {
    pub fn zeros(tape: &mut Tape, batch: usize, hidden: usize) -> LstmState {
        LstmState {
            h: tape.constant(Tensor::zeros(&[batch, hidden])),
            c: tape.constant(Tensor::zeros(&[batch, hidden])),
        }
    }
}

pub fn lstm_step(tape: &mut Tape, p: &Bound, prefix: &str, x: Var, state: LstmState) -> Result<LstmState> {
    let wx = p.get(&format!("{prefix}.wx"))?;
    let wh = p.get(&format!("{prefix}.wh"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let hidden = tape.shape(wh)[0];
    let zx = tape.matmul(x, wx)?;
    let zh = tape.matmul(state.h, wh)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, b)?;
    let gi = tape.slice(z, 1, 0, hidden)?;
    let gf = tape.slice(z, 1, hidden, hidden)?;
    let gg = tape.slice(z, 1, 2 * hidden, hidden)?;
    let go = tape.slice(z, 1, 3 * hidden, hidden)?;
    let i = tape.sigmoid(gi);
    let f = tape.sigmoid(gf);
    let g = tape.tanh(gg);
    let o = tape.sigmoid(go);
    let keep = tape.mul(f, state.c)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok(LstmState { h, c })
}

pub fn init_fc(store: &mut ParamStore, seed: u64, prefix: &str, input: usize, widths: &[usize]) {
    let mut fan_in = input;
    for (i, &w) in widths.iter().enumerate() {
        let bound = 1.0 / (fan_in as f64).sqrt();
        store.insert_uniform(seed, &format!("{prefix}.fc{i}.w"), &[fan_in, w], bound);
        store.insert_uniform(seed, &format!("{prefix}.fc{i}.b"), &[w], bound);
        fan_in = w;
    }
}

/// Dense layers with LeakyReLU and dropout between them; the last layer is
/// linear.
#[allow(clippy::too_many_arguments)]
pub fn fc_stack(
    tape: &mut Tape,
    p: &Bound,
    prefix: &str,
    layers: usize,
    x: Var,
    slope: f64,
    dropout: f64,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let mut h = x;
    for i in 0..layers {
        let w = p.get(&format!("{prefix}.fc{i}.w"))?;
        let b = p.get(&format!("{prefix}.fc{i}.b"))?;
        h = tape.matmul(h, w)?;
        h = tape.add_bias(h, b)?;
        if i + 1 < layers {
            h = tape.leaky_relu(h, slope);
            h = tape.dropout(h, dropout, training, derive_seed(seed, &[i as u64]))?;
        }
    }
    Ok(h)
}
