//! Forward and backward passes through the recurrent stack.

use rand::Rng;

use super::params::{LayerParams, LstmParams};
use super::{CellKind, LmError};
use crate::model::ProbVector;
use crate::tokenizer::TokenId;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

/// Hidden and cell vectors for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub layers: Vec<LayerState>,
}

impl LstmState {
    pub fn zeros(num_layers: usize, hidden_dim: usize) -> Self {
        LstmState {
            layers: (0..num_layers)
                .map(|_| LayerState {
                    h: vec![0.0; hidden_dim],
                    c: vec![0.0; hidden_dim],
                })
                .collect(),
        }
    }

    pub fn for_params(params: &LstmParams) -> Self {
        Self::zeros(params.layers.len(), params.hidden_dim())
    }

    fn reset(&mut self) {
        for l in &mut self.layers {
            l.h.fill(0.0);
            l.c.fill(0.0);
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything one layer computed at one step.
#[derive(Debug, Clone)]
pub(crate) struct LayerTrace {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    /// Post-activation gate values, `G*H`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

fn layer_forward(
    cell: CellKind,
    p: &LayerParams,
    input: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> LayerTrace {
    let hd = h_prev.len();
    let mut gates = p.bias.data().to_vec();
    p.w_input.mul_vec_add(input, &mut gates);
    p.w_hidden.mul_vec_add(h_prev, &mut gates);
    let (c, tanh_c, h) = match cell {
        CellKind::Lstm => {
            let mut c = vec![0.0; hd];
            let mut tanh_c = vec![0.0; hd];
            let mut h = vec![0.0; hd];
            for j in 0..hd {
                let i = sigmoid(gates[j]);
                let f = sigmoid(gates[hd + j]);
                let g = gates[2 * hd + j].tanh();
                let o = sigmoid(gates[3 * hd + j]);
                gates[j] = i;
                gates[hd + j] = f;
                gates[2 * hd + j] = g;
                gates[3 * hd + j] = o;
                c[j] = f * c_prev[j] + i * g;
                tanh_c[j] = c[j].tanh();
                h[j] = o * tanh_c[j];
            }
            (c, tanh_c, h)
        }
        CellKind::Rnn => {
            for z in &mut gates {
                *z = z.tanh();
            }
            (vec![0.0; hd], Vec::new(), gates.clone())
        }
    };
    LayerTrace {
        input: input.to_vec(),
        h_prev: h_prev.to_vec(),
        c_prev: c_prev.to_vec(),
        gates,
        c,
        tanh_c,
        h,
    }
}

/// Returns `(d input, d h_prev, d c_prev)` and accumulates parameter grads.
fn layer_backward(
    cell: CellKind,
    p: &LayerParams,
    trace: &LayerTrace,
    dh: &[f64],
    dc: &[f64],
    grads: &mut LayerParams,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let hd = dh.len();
    let mut dz = vec![0.0; trace.gates.len()];
    let mut dc_prev = vec![0.0; hd];
    match cell {
        CellKind::Lstm => {
            let gt = &trace.gates;
            for j in 0..hd {
                let (i, f, g, o) = (gt[j], gt[hd + j], gt[2 * hd + j], gt[3 * hd + j]);
                let tc = trace.tanh_c[j];
                let d_o = dh[j] * tc;
                let dcj = dc[j] + dh[j] * o * (1.0 - tc * tc);
                let d_i = dcj * g;
                let d_g = dcj * i;
                let d_f = dcj * trace.c_prev[j];
                dc_prev[j] = dcj * f;
                dz[j] = d_i * i * (1.0 - i);
                dz[hd + j] = d_f * f * (1.0 - f);
                dz[2 * hd + j] = d_g * (1.0 - g * g);
                dz[3 * hd + j] = d_o * o * (1.0 - o);
            }
        }
        CellKind::Rnn => {
            for j in 0..hd {
                let h = trace.h[j];
                dz[j] = dh[j] * (1.0 - h * h);
            }
        }
    }
    grads.w_input.add_outer(&dz, &trace.input);
    grads.w_hidden.add_outer(&dz, &trace.h_prev);
    for (b, d) in grads.bias.data_mut().iter_mut().zip(&dz) {
        *b += d;
    }
    let mut dx = vec![0.0; trace.input.len()];
    p.w_input.tmul_vec_add(&dz, &mut dx);
    let mut dh_prev = vec![0.0; hd];
    p.w_hidden.tmul_vec_add(&dz, &mut dh_prev);
    (dx, dh_prev, dc_prev)
}

/// One inference step: embedding in, new state and output logits out.
pub fn lstm_step(
    params: &LstmParams,
    x_emb: &[f64],
    state: &LstmState,
) -> Result<(LstmState, Vec<f64>), LmError> {
    let mut next = state.clone();
    let mut x = x_emb.to_vec();
    for (p, s) in params.layers.iter().zip(&mut next.layers) {
        let t = layer_forward(params.cell, p, &x, &s.h, &s.c);
        s.h = t.h;
        s.c = t.c;
        x = s.h.clone();
    }
    let mut logits = params.output_bias.data().to_vec();
    params.output_weight.mul_vec_add(&x, &mut logits);
    if logits.iter().any(|v| !v.is_finite())
        || next.layers.iter().any(|l| l.h.iter().chain(&l.c).any(|v| !v.is_finite()))
    {
        return Err(LmError::NonFiniteActivation);
    }
    Ok((next, logits))
}

#[derive(Debug, Clone)]
struct StepTrace {
    input_id: TokenId,
    reset: bool,
    /// `masks[0]` scales the embedding, `masks[l]` the input to layer `l`,
    /// `masks[L]` the top hidden state before projection.
    masks: Option<Vec<Vec<f64>>>,
    layers: Vec<LayerTrace>,
    top: Vec<f64>,
    probs: ProbVector,
}

/// Activations retained by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    steps: Vec<StepTrace>,
}

impl ForwardCache {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn probs(&self) -> impl Iterator<Item = &ProbVector> {
        self.steps.iter().map(|s| &s.probs)
    }
}

pub(crate) struct Dropout<'a, R: Rng> {
    pub rng: &'a mut R,
    pub rate: f64,
}

fn dropout_mask<R: Rng>(d: &mut Dropout<'_, R>, n: usize) -> Vec<f64> {
    let keep = 1.0 - d.rate;
    (0..n)
        .map(|_| if d.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
        .collect()
}

fn apply_mask(v: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        for (x, s) in v.iter_mut().zip(m) {
            *x *= s;
        }
    }
}

/// Runs `inputs` through the network starting from `state`, leaving the final
/// state in `state`. When `reset_on` matches an input the state is zeroed
/// before that step.
pub(crate) fn forward_window<R: Rng>(
    params: &LstmParams,
    inputs: &[TokenId],
    state: &mut LstmState,
    reset_on: Option<TokenId>,
    mut dropout: Option<Dropout<'_, R>>,
) -> Result<ForwardCache, LmError> {
    let n_layers = params.layers.len();
    let mut steps = Vec::with_capacity(inputs.len());
    for &id in inputs {
        let reset = reset_on == Some(id);
        if reset {
            state.reset();
        }
        let masks = dropout.as_mut().filter(|d| d.rate > 0.0).map(|d| {
            let mut m = vec![dropout_mask(d, params.embed_dim())];
            for _ in 0..n_layers {
                m.push(dropout_mask(d, params.hidden_dim()));
            }
            m
        });
        let mut x = params.embedding.row(id.index()).to_vec();
        apply_mask(&mut x, masks.as_ref().map(|m| &m[0]));
        let mut layers = Vec::with_capacity(n_layers);
        for (l, (p, s)) in params.layers.iter().zip(&mut state.layers).enumerate() {
            let t = layer_forward(params.cell, p, &x, &s.h, &s.c);
            s.h.clone_from(&t.h);
            s.c.clone_from(&t.c);
            x = t.h.clone();
            apply_mask(&mut x, masks.as_ref().map(|m| &m[l + 1]));
            layers.push(t);
        }
        let mut logits = params.output_bias.data().to_vec();
        params.output_weight.mul_vec_add(&x, &mut logits);
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(LmError::NonFiniteActivation);
        }
        steps.push(StepTrace {
            input_id: id,
            reset,
            masks,
            layers,
            top: x,
            probs: ProbVector::softmax(&logits),
        });
    }
    Ok(ForwardCache { steps })
}

/// Sum of `-ln p(target)` over the cached steps.
pub(crate) fn window_nll(cache: &ForwardCache, targets: &[TokenId]) -> f64 {
    cache
        .steps
        .iter()
        .zip(targets)
        .map(|(s, &t)| -s.probs.log_prob(t))
        .sum()
}

/// Accumulates `scale * d(sum of NLL)/d(params)` into `grads`. Gradients do not
/// flow into the state the window started from.
pub(crate) fn backward_window(
    params: &LstmParams,
    cache: &ForwardCache,
    targets: &[TokenId],
    scale: f64,
    grads: &mut LstmParams,
) {
    let hd = params.hidden_dim();
    let n_layers = params.layers.len();
    let mut dh_next = vec![vec![0.0; hd]; n_layers];
    let mut dc_next = vec![vec![0.0; hd]; n_layers];
    for (step, &target) in cache.steps.iter().zip(targets).rev() {
        let mut dlogits: Vec<f64> = step.probs.iter().map(|p| p * scale).collect();
        dlogits[target.index()] -= scale;
        grads.output_weight.add_outer(&dlogits, &step.top);
        for (b, d) in grads.output_bias.data_mut().iter_mut().zip(&dlogits) {
            *b += d;
        }
        let mut dx = vec![0.0; hd];
        params.output_weight.tmul_vec_add(&dlogits, &mut dx);
        apply_mask(&mut dx, step.masks.as_ref().map(|m| &m[n_layers]));
        for l in (0..n_layers).rev() {
            for (a, b) in dx.iter_mut().zip(&dh_next[l]) {
                *a += b;
            }
            let (dinput, dh_prev, dc_prev) = layer_backward(
                params.cell,
                &params.layers[l],
                &step.layers[l],
                &dx,
                &dc_next[l],
                &mut grads.layers[l],
            );
            dh_next[l] = dh_prev;
            dc_next[l] = dc_prev;
            dx = dinput;
            apply_mask(&mut dx, step.masks.as_ref().map(|m| &m[l]));
        }
        grads.embedding.add_to_row(step.input_id.index(), &dx);
        if step.reset {
            for v in dh_next.iter_mut().chain(dc_next.iter_mut()) {
                v.fill(0.0);
            }
        }
    }
}
