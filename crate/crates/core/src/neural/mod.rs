//! Stacked LSTM Q-network with hand-written backpropagation through time.
//!
//! Parameters live in one flat vector. Per layer the block is `W` (4h x in),
//! `U` (4h x h) and `b` (4h) with gate rows ordered input, forget, cell,
//! output; the linear head `Wq` (A x h), `bq` (A) follows the last layer.

mod adam;
mod checkpoint;
mod encode;
mod loss;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::scalar::Scalar;

pub use adam::AdamState;
pub use checkpoint::{decode_network, encode_network, load_network, save_network, Decoder, Encoder, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use encode::{encode_tuple, FeatureScale, INPUT_DIM};
pub use loss::{huber, huber_loss};

#[derive(Debug, Error, PartialEq)]
pub enum NeuralError {
    #[error("network dimensions must be positive (input {input}, hidden {hidden}, layers {layers}, actions {actions})")]
    BadDims {
        input: usize,
        hidden: usize,
        layers: usize,
        actions: usize,
    },
    #[error("input width mismatch: expected rows of {expected}, got {got} values")]
    Width { expected: usize, got: usize },
    #[error("empty input sequence")]
    EmptySequence,
    #[error("action index {0} out of range")]
    Action(usize),
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("io: {0}")]
    Io(String),
}

impl From<std::io::Error> for NeuralError {
    fn from(e: std::io::Error) -> Self {
        NeuralError::Io(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerView {
    pub w: Range<usize>,
    pub u: Range<usize>,
    pub b: Range<usize>,
    pub input: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmNetwork<T> {
    input_dim: usize,
    hidden_dim: usize,
    layers: usize,
    action_count: usize,
    params: Vec<T>,
}

/// `sum_l 4h(in_l + h + 1) + A(h + 1)` with `in_0 = input`, `in_l = h` above.
pub fn parameter_count(input: usize, hidden: usize, layers: usize, actions: usize) -> usize {
    let first = 4 * hidden * (input + hidden + 1);
    let rest = (layers.saturating_sub(1)) * 4 * hidden * (2 * hidden + 1);
    first + rest + actions * (hidden + 1)
}

/// Q rows plus the final hidden and cell state of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<T> {
    pub q: Vec<Vec<T>>,
    pub hidden: Vec<Vec<T>>,
    pub cell: Vec<Vec<T>>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache<T> {
    len: usize,
    gates: Vec<Vec<T>>,
    c: Vec<Vec<T>>,
    tc: Vec<Vec<T>>,
    h: Vec<Vec<T>>,
    q: Vec<T>,
    z: Vec<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Q values at step `t`.
    pub fn q_row(&self, t: usize) -> &[T] {
        let a = self.q.len() / self.len.max(1);
        &self.q[t * a..(t + 1) * a]
    }

    pub fn last_q(&self) -> &[T] {
        self.q_row(self.len - 1)
    }
}

/// Scratch buffers for [`LstmNetwork::accumulate_gradient`].
#[derive(Debug, Clone, Default)]
pub struct Workspace<T> {
    dh_above: Vec<T>,
    dx: Vec<T>,
    dh_rec: Vec<T>,
    dc_rec: Vec<T>,
    dz: Vec<T>,
}

fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::zero();
    for (x, y) in a.iter().zip(b) {
        s += *x * *y;
    }
    s
}

impl<T: Scalar> LstmNetwork<T> {
    /// Uniform weights in `[-1/sqrt(h), 1/sqrt(h)]`, forget-gate bias shifted by +1.
    pub fn init(
        seed: u64,
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        action_count: usize,
    ) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(input_dim, hidden_dim, layers, action_count)?;
        let k = 1.0 / (hidden_dim as f64).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in net.params.iter_mut() {
            *p = T::lit(rng.random_range(-k..=k));
        }
        for l in 0..layers {
            let b = net.layer(l).b;
            for r in hidden_dim..2 * hidden_dim {
                net.params[b.start + r] += T::one();
            }
        }
        Ok(net)
    }

    pub fn zeros(
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        action_count: usize,
    ) -> Result<Self, NeuralError> {
        if input_dim == 0 || hidden_dim == 0 || layers == 0 || action_count == 0 {
            return Err(NeuralError::BadDims {
                input: input_dim,
                hidden: hidden_dim,
                layers,
                actions: action_count,
            });
        }
        let n = parameter_count(input_dim, hidden_dim, layers, action_count);
        Ok(LstmNetwork {
            input_dim,
            hidden_dim,
            layers,
            action_count,
            params: vec![T::zero(); n],
        })
    }

    pub fn from_params(
        input_dim: usize,
        hidden_dim: usize,
        layers: usize,
        action_count: usize,
        params: Vec<T>,
    ) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(input_dim, hidden_dim, layers, action_count)?;
        if params.len() != net.params.len() {
            return Err(NeuralError::Shape {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn layers(&self) -> usize {
        self.layers
    }

    pub fn action_count(&self) -> usize {
        self.action_count
    }

    pub fn params(&self) -> &[T] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [T] {
        &mut self.params
    }

    pub fn layer(&self, l: usize) -> LayerView {
        let h = self.hidden_dim;
        let mut start = 0;
        for k in 0..l {
            let input = if k == 0 { self.input_dim } else { h };
            start += 4 * h * (input + h + 1);
        }
        let input = if l == 0 { self.input_dim } else { h };
        let w = start..start + 4 * h * input;
        let u = w.end..w.end + 4 * h * h;
        let b = u.end..u.end + 4 * h;
        LayerView { w, u, b, input }
    }

    pub fn head_w(&self) -> Range<usize> {
        let start = self.layer(self.layers - 1).b.end;
        start..start + self.action_count * self.hidden_dim
    }

    pub fn head_b(&self) -> Range<usize> {
        let w = self.head_w();
        w.end..w.end + self.action_count
    }

    pub fn forward(&self, rows: &[Vec<T>]) -> Result<ForwardOutput<T>, NeuralError> {
        let flat: Vec<T> = rows.iter().flatten().copied().collect();
        for r in rows {
            if r.len() != self.input_dim {
                return Err(NeuralError::Width {
                    expected: self.input_dim,
                    got: r.len(),
                });
            }
        }
        let mut cache = ForwardCache::default();
        self.forward_cached(&flat, &mut cache)?;
        let h = self.hidden_dim;
        let last = cache.len - 1;
        Ok(ForwardOutput {
            q: (0..cache.len).map(|t| cache.q_row(t).to_vec()).collect(),
            hidden: cache.h.iter().map(|v| v[last * h..].to_vec()).collect(),
            cell: cache.c.iter().map(|v| v[last * h..].to_vec()).collect(),
        })
    }

    /// Q values of the final step only.
    pub fn q_last(&self, flat: &[T], cache: &mut ForwardCache<T>) -> Result<Vec<T>, NeuralError> {
        self.forward_cached(flat, cache)?;
        Ok(cache.last_q().to_vec())
    }

    /// Forward pass over a row-major sequence, starting from zero state.
    pub fn forward_cached(&self, flat: &[T], cache: &mut ForwardCache<T>) -> Result<(), NeuralError> {
        if flat.is_empty() {
            return Err(NeuralError::EmptySequence);
        }
        if !flat.len().is_multiple_of(self.input_dim) {
            return Err(NeuralError::Width {
                expected: self.input_dim,
                got: flat.len(),
            });
        }
        let len = flat.len() / self.input_dim;
        let h = self.hidden_dim;
        let a = self.action_count;
        cache.len = len;
        cache.gates.resize(self.layers, Vec::new());
        cache.c.resize(self.layers, Vec::new());
        cache.tc.resize(self.layers, Vec::new());
        cache.h.resize(self.layers, Vec::new());
        cache.z.resize(4 * h, T::zero());
        let zero_state = vec![T::zero(); h];
        for l in 0..self.layers {
            let view = self.layer(l);
            let w = &self.params[view.w.clone()];
            let u = &self.params[view.u.clone()];
            let b = &self.params[view.b.clone()];
            let (below, rest) = cache.h.split_at_mut(l);
            let hs = &mut rest[0];
            hs.resize(len * h, T::zero());
            let gates = &mut cache.gates[l];
            gates.resize(len * 4 * h, T::zero());
            let cs = &mut cache.c[l];
            cs.resize(len * h, T::zero());
            let tcs = &mut cache.tc[l];
            tcs.resize(len * h, T::zero());
            for t in 0..len {
                let x = if l == 0 {
                    &flat[t * view.input..(t + 1) * view.input]
                } else {
                    &below[l - 1][t * h..(t + 1) * h]
                };
                let z = &mut cache.z;
                {
                    let h_prev: &[T] = if t == 0 { &zero_state } else { &hs[(t - 1) * h..t * h] };
                    for r in 0..4 * h {
                        z[r] = b[r]
                            + dot(&w[r * view.input..(r + 1) * view.input], x)
                            + dot(&u[r * h..(r + 1) * h], h_prev);
                    }
                }
                let g = &mut gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    g[j] = sigmoid(z[j]);
                    g[h + j] = sigmoid(z[h + j]);
                    g[2 * h + j] = z[2 * h + j].tanh();
                    g[3 * h + j] = sigmoid(z[3 * h + j]);
                }
                for j in 0..h {
                    let c_prev = if t == 0 { T::zero() } else { cs[(t - 1) * h + j] };
                    let c = g[h + j] * c_prev + g[j] * g[2 * h + j];
                    let tc = c.tanh();
                    cs[t * h + j] = c;
                    tcs[t * h + j] = tc;
                    hs[t * h + j] = g[3 * h + j] * tc;
                }
            }
        }
        let hw = &self.params[self.head_w()];
        let hb = &self.params[self.head_b()];
        let top = &cache.h[self.layers - 1];
        cache.q.resize(len * a, T::zero());
        for t in 0..len {
            let ht = &top[t * h..(t + 1) * h];
            for k in 0..a {
                cache.q[t * a + k] = hb[k] + dot(&hw[k * h..(k + 1) * h], ht);
            }
        }
        Ok(())
    }

    /// Adds `dq * dQ_last[action]/dθ` into `grad` by backpropagation through time.
    /// `cache` must come from `forward_cached` on the same `flat` input.
    pub fn accumulate_gradient(
        &self,
        flat: &[T],
        cache: &ForwardCache<T>,
        action: usize,
        dq: T,
        grad: &mut [T],
        ws: &mut Workspace<T>,
    ) -> Result<(), NeuralError> {
        if action >= self.action_count {
            return Err(NeuralError::Action(action));
        }
        if grad.len() != self.params.len() {
            return Err(NeuralError::Shape {
                expected: self.params.len(),
                got: grad.len(),
            });
        }
        let len = cache.len;
        let h = self.hidden_dim;
        let last = len - 1;

        let hw = self.head_w();
        let hb = self.head_b();
        let top = &cache.h[self.layers - 1];
        for j in 0..h {
            grad[hw.start + action * h + j] += dq * top[last * h + j];
        }
        grad[hb.start + action] += dq;

        ws.dh_above.clear();
        ws.dh_above.resize(len * h, T::zero());
        for j in 0..h {
            ws.dh_above[last * h + j] = dq * self.params[hw.start + action * h + j];
        }
        ws.dz.resize(4 * h, T::zero());

        for l in (0..self.layers).rev() {
            let view = self.layer(l);
            let inp = view.input;
            ws.dh_rec.clear();
            ws.dh_rec.resize(h, T::zero());
            ws.dc_rec.clear();
            ws.dc_rec.resize(h, T::zero());
            ws.dx.clear();
            if l > 0 {
                ws.dx.resize(len * h, T::zero());
            }
            let gates = &cache.gates[l];
            let cs = &cache.c[l];
            let tcs = &cache.tc[l];
            let hs = &cache.h[l];
            for t in (0..len).rev() {
                let g = &gates[t * 4 * h..(t + 1) * 4 * h];
                for j in 0..h {
                    let dh = ws.dh_above[t * h + j] + ws.dh_rec[j];
                    let (i, f, gg, o) = (g[j], g[h + j], g[2 * h + j], g[3 * h + j]);
                    let tc = tcs[t * h + j];
                    let c_prev = if t == 0 { T::zero() } else { cs[(t - 1) * h + j] };
                    let dc = ws.dc_rec[j] + dh * o * (T::one() - tc * tc);
                    let d_o = dh * tc;
                    ws.dz[j] = dc * gg * i * (T::one() - i);
                    ws.dz[h + j] = dc * c_prev * f * (T::one() - f);
                    ws.dz[2 * h + j] = dc * i * (T::one() - gg * gg);
                    ws.dz[3 * h + j] = d_o * o * (T::one() - o);
                    ws.dc_rec[j] = dc * f;
                }
                let x: &[T] = if l == 0 {
                    &flat[t * inp..(t + 1) * inp]
                } else {
                    &cache.h[l - 1][t * h..(t + 1) * h]
                };
                for v in ws.dh_rec.iter_mut() {
                    *v = T::zero();
                }
                for r in 0..4 * h {
                    let dz = ws.dz[r];
                    if dz == T::zero() {
                        continue;
                    }
                    grad[view.b.start + r] += dz;
                    let wrow = view.w.start + r * inp;
                    for j in 0..inp {
                        grad[wrow + j] += dz * x[j];
                    }
                    let urow = view.u.start + r * h;
                    if t > 0 {
                        let h_prev = &hs[(t - 1) * h..t * h];
                        for j in 0..h {
                            grad[urow + j] += dz * h_prev[j];
                        }
                    }
                    for j in 0..h {
                        ws.dh_rec[j] += self.params[urow + j] * dz;
                    }
                    if l > 0 {
                        for j in 0..inp {
                            ws.dx[t * h + j] += self.params[wrow + j] * dz;
                        }
                    }
                }
            }
            if l > 0 {
                std::mem::swap(&mut ws.dh_above, &mut ws.dx);
            }
        }
        Ok(())
    }

    /// Huber loss of `Q(s, action)` at the final step against `target`, and its
    /// gradient with respect to every parameter.
    pub fn backward(
        &self,
        flat: &[T],
        action: usize,
        target: T,
    ) -> Result<(T, Vec<T>), NeuralError> {
        let mut cache = ForwardCache::default();
        self.forward_cached(flat, &mut cache)?;
        if action >= self.action_count {
            return Err(NeuralError::Action(action));
        }
        let (loss, dq) = huber(cache.last_q()[action] - target);
        let mut grad = vec![T::zero(); self.params.len()];
        let mut ws = Workspace::default();
        self.accumulate_gradient(flat, &cache, action, dq, &mut grad, &mut ws)?;
        Ok((loss, grad))
    }

    pub fn argmax(q: &[T]) -> usize {
        let mut best = 0;
        for (k, v) in q.iter().enumerate() {
            if *v > q[best] {
                best = k;
            }
        }
        best
    }

    pub fn cast<U: Scalar>(&self) -> LstmNetwork<U> {
        LstmNetwork {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            layers: self.layers,
            action_count: self.action_count,
            params: self.params.iter().map(|p| U::lit(p.as_f64())).collect(),
        }
    }
}
