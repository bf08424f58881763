//! Forward and backward passes over a flat parameter vector.
//!
//! Token vectors are projected, run through a stack of bidirectional GRU
//! layers, and the last forward state joined with the first backward state of
//! the top layer is the query encoding. A two-layer tanh head maps the
//! encoding to one logit.
//!
//! GRU gates follow the usual (reset, update, new) layout:
//!
//! ```text
//! r = sig(W_ir x + b_ir + W_hr h + b_hr)
//! z = sig(W_iz x + b_iz + W_hz h + b_hz)
//! n = tanh(W_in x + b_in + r * (W_hn h + b_hn))
//! h' = (1 - z) * n + z * h
//! ```

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    /// Token vector width from the embedding provider.
    pub input: usize,
    pub proj: usize,
    pub hidden: usize,
    pub layers: usize,
    pub ffn1: usize,
    pub ffn2: usize,
}

impl ModelDims {
    pub fn desk(input: usize) -> Self {
        Self {
            input,
            proj: 32,
            hidden: 32,
            layers: 1,
            ffn1: 32,
            ffn2: 16,
        }
    }

    pub fn paper_scale(input: usize) -> Self {
        Self {
            input,
            proj: 128,
            hidden: 128,
            layers: 2,
            ffn1: 128,
            ffn2: 64,
        }
    }

    pub fn encoding_dim(&self) -> usize {
        2 * self.hidden
    }

    pub fn is_valid(&self) -> bool {
        [self.input, self.proj, self.hidden, self.layers, self.ffn1, self.ffn2]
            .iter()
            .all(|&d| d > 0)
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct DirLayout {
    pub input: usize,
    pub w_ih: usize,
    pub w_hh: usize,
    pub b_ih: usize,
    pub b_hh: usize,
}

/// Offsets of every tensor inside the flat parameter vector.
#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub dims: ModelDims,
    pub proj_w: usize,
    pub proj_b: usize,
    pub gru: Vec<[DirLayout; 2]>,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
    pub w3: usize,
    pub b3: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(dims: ModelDims) -> Self {
        let mut at = 0;
        let mut take = |n: usize| {
            let o = at;
            at += n;
            o
        };
        let h = dims.hidden;
        let proj_w = take(dims.proj * dims.input);
        let proj_b = take(dims.proj);
        let mut gru = Vec::new();
        for l in 0..dims.layers {
            let input = if l == 0 { dims.proj } else { 2 * h };
            let mut dir = || DirLayout {
                input,
                w_ih: take(3 * h * input),
                w_hh: take(3 * h * h),
                b_ih: take(3 * h),
                b_hh: take(3 * h),
            };
            let f = dir();
            let b = dir();
            gru.push([f, b]);
        }
        let enc = 2 * h;
        let w1 = take(dims.ffn1 * enc);
        let b1 = take(dims.ffn1);
        let w2 = take(dims.ffn2 * dims.ffn1);
        let b2 = take(dims.ffn2);
        let w3 = take(dims.ffn2);
        let b3 = take(1);
        Self {
            dims,
            proj_w,
            proj_b,
            gru,
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
            total: at,
        }
    }

    /// Fan-in of the tensor starting at each offset, for initialization.
    pub fn init_ranges(&self) -> Vec<(usize, usize, f64)> {
        let d = &self.dims;
        let mut out = vec![
            (self.proj_w, d.proj * d.input, 1.0 / (d.input as f64).sqrt()),
            (self.proj_b, d.proj, 1.0 / (d.input as f64).sqrt()),
        ];
        let k = 1.0 / (d.hidden as f64).sqrt();
        for layer in &self.gru {
            for dir in layer {
                out.push((dir.w_ih, 3 * d.hidden * dir.input, k));
                out.push((dir.w_hh, 3 * d.hidden * d.hidden, k));
                out.push((dir.b_ih, 3 * d.hidden, k));
                out.push((dir.b_hh, 3 * d.hidden, k));
            }
        }
        let e = 1.0 / ((2 * d.hidden) as f64).sqrt();
        let f1 = 1.0 / (d.ffn1 as f64).sqrt();
        let f2 = 1.0 / (d.ffn2 as f64).sqrt();
        out.extend([
            (self.w1, d.ffn1 * 2 * d.hidden, e),
            (self.b1, d.ffn1, e),
            (self.w2, d.ffn2 * d.ffn1, f1),
            (self.b2, d.ffn2, f1),
            (self.w3, d.ffn2, f2),
            (self.b3, 1, f2),
        ]);
        out
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn logistic(x: f64) -> f64 {
    sigmoid(x)
}

/// out += W x, W row-major `rows x cols`.
fn matvec_add(out: &mut [f64], w: &[f64], cols: usize, x: &[f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o += row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// out += W^T v.
fn matvec_t_add(out: &mut [f64], w: &[f64], cols: usize, v: &[f64]) {
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &w[i * cols..(i + 1) * cols];
        for (o, a) in out.iter_mut().zip(row) {
            *o += a * vi;
        }
    }
}

/// dW += v x^T.
fn outer_add(dw: &mut [f64], cols: usize, v: &[f64], x: &[f64]) {
    for (i, &vi) in v.iter().enumerate() {
        if vi == 0.0 {
            continue;
        }
        let row = &mut dw[i * cols..(i + 1) * cols];
        for (g, a) in row.iter_mut().zip(x) {
            *g += vi * a;
        }
    }
}

#[derive(Debug, Clone, Default)]
struct StepCache {
    h_prev: Vec<f64>,
    r: Vec<f64>,
    z: Vec<f64>,
    n: Vec<f64>,
    gh_n: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
struct DirCache {
    /// Indexed by sequence position.
    steps: Vec<StepCache>,
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    input: Vec<Vec<f64>>,
    dirs: [DirCache; 2],
    output: Vec<Vec<f64>>,
}

/// Everything the backward pass needs for one sequence.
#[derive(Debug, Clone, Default)]
pub(crate) struct EncoderCache {
    tokens: Vec<Vec<f64>>,
    mask: Option<Vec<Vec<f64>>>,
    layers: Vec<LayerCache>,
    pub encoding: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub(crate) struct HeadCache {
    enc: Vec<f64>,
    u1: Vec<f64>,
    u1d: Vec<f64>,
    m1: Option<Vec<f64>>,
    u2: Vec<f64>,
    u2d: Vec<f64>,
    m2: Option<Vec<f64>>,
    pub logit: f64,
}

/// Dropout masks for one triplet member: one row per token plus the head.
pub(crate) struct Masks {
    pub tokens: Vec<Vec<f64>>,
    pub head1: Vec<f64>,
    pub head2: Vec<f64>,
}

fn gru_direction(
    p: &[f64],
    dir: &DirLayout,
    hidden: usize,
    inputs: &[Vec<f64>],
    reverse: bool,
) -> (Vec<Vec<f64>>, DirCache) {
    let t_len = inputs.len();
    let mut out = vec![Vec::new(); t_len];
    let mut cache = DirCache {
        steps: vec![StepCache::default(); t_len],
    };
    let mut h = vec![0.0; hidden];
    let order: Vec<usize> = if reverse { (0..t_len).rev().collect() } else { (0..t_len).collect() };
    let w_ih = &p[dir.w_ih..dir.w_ih + 3 * hidden * dir.input];
    let w_hh = &p[dir.w_hh..dir.w_hh + 3 * hidden * hidden];
    let b_ih = &p[dir.b_ih..dir.b_ih + 3 * hidden];
    let b_hh = &p[dir.b_hh..dir.b_hh + 3 * hidden];
    for t in order {
        let mut gi = b_ih.to_vec();
        matvec_add(&mut gi, w_ih, dir.input, &inputs[t]);
        let mut gh = b_hh.to_vec();
        matvec_add(&mut gh, w_hh, hidden, &h);
        let mut r = vec![0.0; hidden];
        let mut z = vec![0.0; hidden];
        let mut n = vec![0.0; hidden];
        let mut next = vec![0.0; hidden];
        for k in 0..hidden {
            r[k] = sigmoid(gi[k] + gh[k]);
            z[k] = sigmoid(gi[hidden + k] + gh[hidden + k]);
            n[k] = (gi[2 * hidden + k] + r[k] * gh[2 * hidden + k]).tanh();
            next[k] = (1.0 - z[k]) * n[k] + z[k] * h[k];
        }
        cache.steps[t] = StepCache {
            h_prev: std::mem::replace(&mut h, next),
            r,
            z,
            n,
            gh_n: gh[2 * hidden..].to_vec(),
        };
        out[t] = h.clone();
    }
    (out, cache)
}

/// Returns the gradient with respect to each input vector.
#[allow(clippy::too_many_arguments)]
fn gru_direction_backward(
    p: &[f64],
    grad: &mut [f64],
    dir: &DirLayout,
    hidden: usize,
    inputs: &[Vec<f64>],
    cache: &DirCache,
    d_out: &[Vec<f64>],
    reverse: bool,
) -> Vec<Vec<f64>> {
    let t_len = inputs.len();
    let mut dx = vec![vec![0.0; dir.input]; t_len];
    let mut carry = vec![0.0; hidden];
    // Walk the processing order backwards.
    let order: Vec<usize> = if reverse { (0..t_len).collect() } else { (0..t_len).rev().collect() };
    let (ih_len, hh_len) = (3 * hidden * dir.input, 3 * hidden * hidden);
    for t in order {
        let s = &cache.steps[t];
        let dh: Vec<f64> = d_out[t].iter().zip(&carry).map(|(a, b)| a + b).collect();
        let mut dgi = vec![0.0; 3 * hidden];
        let mut dgh = vec![0.0; 3 * hidden];
        let mut dh_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let dn = dh[k] * (1.0 - s.z[k]);
            let dz = dh[k] * (s.h_prev[k] - s.n[k]);
            dh_prev[k] = dh[k] * s.z[k];
            let da_n = dn * (1.0 - s.n[k] * s.n[k]);
            let dr = da_n * s.gh_n[k];
            let da_r = dr * s.r[k] * (1.0 - s.r[k]);
            let da_z = dz * s.z[k] * (1.0 - s.z[k]);
            dgi[k] = da_r;
            dgi[hidden + k] = da_z;
            dgi[2 * hidden + k] = da_n;
            dgh[k] = da_r;
            dgh[hidden + k] = da_z;
            dgh[2 * hidden + k] = da_n * s.r[k];
        }
        outer_add(&mut grad[dir.w_ih..dir.w_ih + ih_len], dir.input, &dgi, &inputs[t]);
        outer_add(&mut grad[dir.w_hh..dir.w_hh + hh_len], hidden, &dgh, &s.h_prev);
        for k in 0..3 * hidden {
            grad[dir.b_ih + k] += dgi[k];
            grad[dir.b_hh + k] += dgh[k];
        }
        matvec_t_add(&mut dx[t], &p[dir.w_ih..dir.w_ih + ih_len], dir.input, &dgi);
        matvec_t_add(&mut dh_prev, &p[dir.w_hh..dir.w_hh + hh_len], hidden, &dgh);
        carry = dh_prev;
    }
    dx
}

pub(crate) fn encode_forward(
    layout: &Layout,
    p: &[f64],
    tokens: &[Vec<f64>],
    token_masks: Option<&[Vec<f64>]>,
) -> EncoderCache {
    let d = &layout.dims;
    let mut seq: Vec<Vec<f64>> = tokens
        .iter()
        .enumerate()
        .map(|(t, e)| {
            let mut x = p[layout.proj_b..layout.proj_b + d.proj].to_vec();
            matvec_add(&mut x, &p[layout.proj_w..layout.proj_w + d.proj * d.input], d.input, e);
            if let Some(m) = token_masks {
                x.iter_mut().zip(&m[t]).for_each(|(v, k)| *v *= k);
            }
            x
        })
        .collect();
    let mut layers = Vec::with_capacity(d.layers);
    for dirs in &layout.gru {
        let (fwd, fc) = gru_direction(p, &dirs[0], d.hidden, &seq, false);
        let (bwd, bc) = gru_direction(p, &dirs[1], d.hidden, &seq, true);
        let output: Vec<Vec<f64>> = fwd.into_iter().zip(bwd).map(|(mut f, b)| {
            f.extend(b);
            f
        }).collect();
        let input = std::mem::replace(&mut seq, output.clone());
        layers.push(LayerCache {
            input,
            dirs: [fc, bc],
            output,
        });
    }
    let top = &layers.last().expect("at least one layer").output;
    let h = d.hidden;
    let mut encoding = top[top.len() - 1][..h].to_vec();
    encoding.extend_from_slice(&top[0][h..]);
    EncoderCache {
        tokens: tokens.to_vec(),
        mask: token_masks.map(|m| m.to_vec()),
        layers,
        encoding,
    }
}

pub(crate) fn encode_backward(layout: &Layout, p: &[f64], grad: &mut [f64], cache: &EncoderCache, d_enc: &[f64]) {
    let d = &layout.dims;
    let h = d.hidden;
    let t_len = cache.tokens.len();
    let mut d_out = vec![vec![0.0; 2 * h]; t_len];
    d_out[t_len - 1][..h].copy_from_slice(&d_enc[..h]);
    for k in 0..h {
        d_out[0][h + k] += d_enc[h + k];
    }
    for (l, dirs) in layout.gru.iter().enumerate().rev() {
        let lc = &cache.layers[l];
        let df: Vec<Vec<f64>> = d_out.iter().map(|v| v[..h].to_vec()).collect();
        let db: Vec<Vec<f64>> = d_out.iter().map(|v| v[h..].to_vec()).collect();
        let dx_f = gru_direction_backward(p, grad, &dirs[0], h, &lc.input, &lc.dirs[0], &df, false);
        let dx_b = gru_direction_backward(p, grad, &dirs[1], h, &lc.input, &lc.dirs[1], &db, true);
        d_out = dx_f
            .into_iter()
            .zip(dx_b)
            .map(|(a, b)| a.iter().zip(&b).map(|(x, y)| x + y).collect())
            .collect();
    }
    // d_out now holds gradients for the projected (masked) token inputs.
    for (t, dx) in d_out.iter().enumerate() {
        let dx: Vec<f64> = match &cache.mask {
            Some(m) => dx.iter().zip(&m[t]).map(|(a, k)| a * k).collect(),
            None => dx.clone(),
        };
        outer_add(&mut grad[layout.proj_w..layout.proj_w + d.proj * d.input], d.input, &dx, &cache.tokens[t]);
        for k in 0..d.proj {
            grad[layout.proj_b + k] += dx[k];
        }
    }
}

pub(crate) fn head_forward(layout: &Layout, p: &[f64], enc: &[f64], masks: Option<(&[f64], &[f64])>) -> HeadCache {
    let d = &layout.dims;
    let e = 2 * d.hidden;
    let mut a1 = p[layout.b1..layout.b1 + d.ffn1].to_vec();
    matvec_add(&mut a1, &p[layout.w1..layout.w1 + d.ffn1 * e], e, enc);
    let u1: Vec<f64> = a1.iter().map(|x| x.tanh()).collect();
    let u1d: Vec<f64> = match masks {
        Some((m1, _)) => u1.iter().zip(m1).map(|(a, b)| a * b).collect(),
        None => u1.clone(),
    };
    let mut a2 = p[layout.b2..layout.b2 + d.ffn2].to_vec();
    matvec_add(&mut a2, &p[layout.w2..layout.w2 + d.ffn2 * d.ffn1], d.ffn1, &u1d);
    let u2: Vec<f64> = a2.iter().map(|x| x.tanh()).collect();
    let u2d: Vec<f64> = match masks {
        Some((_, m2)) => u2.iter().zip(m2).map(|(a, b)| a * b).collect(),
        None => u2.clone(),
    };
    let logit = p[layout.b3] + p[layout.w3..layout.w3 + d.ffn2].iter().zip(&u2d).map(|(a, b)| a * b).sum::<f64>();
    HeadCache {
        enc: enc.to_vec(),
        u1,
        u1d,
        m1: masks.map(|m| m.0.to_vec()),
        u2,
        u2d,
        m2: masks.map(|m| m.1.to_vec()),
        logit,
    }
}

/// Accumulates head gradients and returns the gradient for the encoding.
pub(crate) fn head_backward(layout: &Layout, p: &[f64], grad: &mut [f64], cache: &HeadCache, d_logit: f64) -> Vec<f64> {
    let d = &layout.dims;
    let e = 2 * d.hidden;
    grad[layout.b3] += d_logit;
    let mut du2 = vec![0.0; d.ffn2];
    for k in 0..d.ffn2 {
        grad[layout.w3 + k] += d_logit * cache.u2d[k];
        du2[k] = d_logit * p[layout.w3 + k] * cache.m2.as_ref().map_or(1.0, |m| m[k]);
    }
    let da2: Vec<f64> = du2.iter().zip(&cache.u2).map(|(g, u)| g * (1.0 - u * u)).collect();
    outer_add(&mut grad[layout.w2..layout.w2 + d.ffn2 * d.ffn1], d.ffn1, &da2, &cache.u1d);
    for k in 0..d.ffn2 {
        grad[layout.b2 + k] += da2[k];
    }
    let mut du1 = vec![0.0; d.ffn1];
    matvec_t_add(&mut du1, &p[layout.w2..layout.w2 + d.ffn2 * d.ffn1], d.ffn1, &da2);
    if let Some(m) = &cache.m1 {
        du1.iter_mut().zip(m).for_each(|(g, k)| *g *= k);
    }
    let da1: Vec<f64> = du1.iter().zip(&cache.u1).map(|(g, u)| g * (1.0 - u * u)).collect();
    outer_add(&mut grad[layout.w1..layout.w1 + d.ffn1 * e], e, &da1, &cache.enc);
    for k in 0..d.ffn1 {
        grad[layout.b1 + k] += da1[k];
    }
    let mut denc = vec![0.0; e];
    matvec_t_add(&mut denc, &p[layout.w1..layout.w1 + d.ffn1 * e], e, &da1);
    denc
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_counts() {
        let dims = ModelDims {
            input: 4,
            proj: 3,
            hidden: 2,
            layers: 2,
            ffn1: 5,
            ffn2: 3,
        };
        let l = Layout::new(dims);
        let proj = 3 * 4 + 3;
        let layer0 = 2 * (3 * 2 * 3 + 3 * 2 * 2 + 6 + 6);
        let layer1 = 2 * (3 * 2 * 4 + 3 * 2 * 2 + 6 + 6);
        let head = 5 * 4 + 5 + 3 * 5 + 3 + 3 + 1;
        assert_eq!(l.total, proj + layer0 + layer1 + head);
        let covered: usize = l.init_ranges().iter().map(|r| r.1).sum();
        assert_eq!(covered, l.total);
    }

    #[test]
    fn single_step_matches_hand_recurrence() {
        // One token, hidden 2, every weight set by hand.
        let dims = ModelDims {
            input: 2,
            proj: 2,
            hidden: 2,
            layers: 1,
            ffn1: 1,
            ffn2: 1,
        };
        let l = Layout::new(dims);
        let mut p = vec![0.0; l.total];
        // Identity projection.
        p[l.proj_w] = 1.0;
        p[l.proj_w + 3] = 1.0;
        for (di, dir) in l.gru[0].iter().enumerate() {
            let s = if di == 0 { 1.0 } else { -1.0 };
            for (k, w) in p[dir.w_ih..dir.w_ih + 12].iter_mut().enumerate() {
                *w = s * 0.1 * (k as f64 + 1.0);
            }
            for b in &mut p[dir.b_ih..dir.b_ih + 6] {
                *b = 0.05;
            }
        }
        let x = [0.3, -0.7];
        let cache = encode_forward(&l, &p, &[x.to_vec()], None);
        for (di, s) in [(0usize, 1.0), (1, -1.0)] {
            // h_prev = 0 so the W_hh terms vanish and r multiplies b_hh = 0.
            let row = |k: usize| s * 0.1 * (k as f64 + 1.0);
            let gate = |g: usize, j: usize| row(g * 4 + j * 2) * x[0] + row(g * 4 + j * 2 + 1) * x[1] + 0.05;
            for j in 0..2 {
                let z = 1.0 / (1.0 + (-gate(1, j)).exp());
                let n = gate(2, j).tanh();
                let h = (1.0 - z) * n;
                assert!((cache.encoding[di * 2 + j] - h).abs() < 1e-15);
            }
        }
    }
}
