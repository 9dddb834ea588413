//! Single-layer GRU with an explicit backward pass.
//!
//! Gates follow the usual stacked layout:
//! `r = σ(W_ir x + b_ir + W_hr h + b_hr)`,
//! `z = σ(W_iz x + b_iz + W_hz h + b_hz)`,
//! `n = tanh(W_in x + b_in + r ⊙ (W_hn h + b_hn))`,
//! `h' = (1 - z) ⊙ n + z ⊙ h`, with `h_0 = 0`.

use super::params::GruParams;
use super::tensor::{affine, matvec_t_acc, outer_acc, sigmoid};

#[derive(Debug, Clone)]
pub struct GruStep {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    /// `W_hn h + b_hn`.
    gh_n: Vec<f64>,
}

/// Per-step activations in processing order.
#[derive(Debug, Clone)]
pub struct GruCache {
    steps: Vec<GruStep>,
    reverse: bool,
}

/// Runs the GRU over `inputs` (back to front when `reverse`) and returns the
/// hidden state emitted at each input position, in input order.
pub fn forward(p: &GruParams, inputs: &[&[f64]], reverse: bool) -> (Vec<Vec<f64>>, GruCache) {
    let h = p.hidden();
    let t_len = inputs.len();
    let mut outputs = vec![Vec::new(); t_len];
    let mut steps = Vec::with_capacity(t_len);
    let mut state = vec![0.0; h];
    let mut gi = vec![0.0; 3 * h];
    let mut gh = vec![0.0; 3 * h];
    for k in 0..t_len {
        let pos = if reverse { t_len - 1 - k } else { k };
        affine(&p.w_ih, p.b_ih.data(), inputs[pos], &mut gi);
        affine(&p.w_hh, p.b_hh.data(), &state, &mut gh);
        let mut r = vec![0.0; h];
        let mut z = vec![0.0; h];
        let mut n = vec![0.0; h];
        let mut next = vec![0.0; h];
        for i in 0..h {
            r[i] = sigmoid(gi[i] + gh[i]);
            z[i] = sigmoid(gi[h + i] + gh[h + i]);
            n[i] = (gi[2 * h + i] + r[i] * gh[2 * h + i]).tanh();
            next[i] = (1.0 - z[i]) * n[i] + z[i] * state[i];
        }
        steps.push(GruStep {
            h_prev: std::mem::replace(&mut state, next.clone()),
            r,
            z,
            n,
            gh_n: gh[2 * h..].to_vec(),
        });
        outputs[pos] = next;
    }
    (outputs, GruCache { steps, reverse })
}

/// Accumulates parameter gradients into `grad` and input gradients into
/// `d_inputs`, given `d_outputs` aligned with input positions.
pub fn backward(
    p: &GruParams,
    inputs: &[&[f64]],
    cache: &GruCache,
    d_outputs: &[Vec<f64>],
    grad: &mut GruParams,
    d_inputs: &mut [Vec<f64>],
) {
    let h = p.hidden();
    let t_len = inputs.len();
    let mut dh_next = vec![0.0; h];
    let mut da_i = vec![0.0; 3 * h];
    let mut da_h = vec![0.0; 3 * h];
    for k in (0..t_len).rev() {
        let pos = if cache.reverse { t_len - 1 - k } else { k };
        let s = &cache.steps[k];
        let mut dh_prev = vec![0.0; h];
        for i in 0..h {
            let dh = dh_next[i] + d_outputs[pos][i];
            let dn = dh * (1.0 - s.z[i]);
            let dz = dh * (s.h_prev[i] - s.n[i]);
            dh_prev[i] = dh * s.z[i];
            let dan = dn * (1.0 - s.n[i] * s.n[i]);
            let dr = dan * s.gh_n[i];
            let dar = dr * s.r[i] * (1.0 - s.r[i]);
            let daz = dz * s.z[i] * (1.0 - s.z[i]);
            da_i[i] = dar;
            da_i[h + i] = daz;
            da_i[2 * h + i] = dan;
            da_h[i] = dar;
            da_h[h + i] = daz;
            da_h[2 * h + i] = dan * s.r[i];
        }
        outer_acc(&mut grad.w_ih, &da_i, inputs[pos]);
        outer_acc(&mut grad.w_hh, &da_h, &s.h_prev);
        for (g, d) in grad.b_ih.data_mut().iter_mut().zip(&da_i) {
            *g += d;
        }
        for (g, d) in grad.b_hh.data_mut().iter_mut().zip(&da_h) {
            *g += d;
        }
        matvec_t_acc(&p.w_ih, &da_i, &mut d_inputs[pos]);
        matvec_t_acc(&p.w_hh, &da_h, &mut dh_prev);
        dh_next = dh_prev;
    }
}
