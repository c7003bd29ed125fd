//! Tiny multi-head self-attention classifier with hand-written backprop.
//!
//! ```text
//! X   = embed[s] + pos                       (L x D)
//! Q,K,V = X Wq^T, X Wk^T, X Wv^T
//! O_h = softmax(Q_h K_h^T / sqrt(D/H)) V_h   per head h
//! H   = X + O Wp^T
//! z   = mean_l H[l]
//! y   = Wout z + bout                        (one logit per token)
//! ```
//!
//! Weight matrices are stored row-major as `[out, in]`, so each head of
//! `Wq`/`Wk` and each output neuron of `Wv`/`Wp` is a contiguous range.

use rand_chacha::ChaCha8Rng;

use super::data::{gaussian_init, softmax_xent_in_place, Model};
use crate::error::{Error, Result};
use crate::partition::{TensorKind, TensorMeta};

#[derive(Debug, Clone)]
pub struct AttentionModel {
    tokens: usize,
    seq_len: usize,
    embed: usize,
    heads: usize,
}

#[derive(Clone, Copy)]
struct Offsets {
    embed: usize,
    pos: usize,
    query: usize,
    key: usize,
    value: usize,
    proj: usize,
    out_w: usize,
    out_b: usize,
    end: usize,
}

impl AttentionModel {
    pub fn new(tokens: usize, seq_len: usize, embed: usize, heads: usize) -> Result<Self> {
        if tokens < 2 || seq_len == 0 || embed == 0 {
            return Err(Error::Config("attention needs tokens >= 2, seq_len >= 1, embed_dim >= 1".into()));
        }
        if !(1..=4).contains(&heads) || !embed.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "heads must be in 1..=4 and divide embed_dim (heads = {heads}, embed_dim = {embed})"
            )));
        }
        Ok(AttentionModel {
            tokens,
            seq_len,
            embed,
            heads,
        })
    }

    fn offsets(&self) -> Offsets {
        let (v, l, d) = (self.tokens, self.seq_len, self.embed);
        let embed = 0;
        let pos = embed + v * d;
        let query = pos + l * d;
        let key = query + d * d;
        let value = key + d * d;
        let proj = value + d * d;
        let out_w = proj + d * d;
        let out_b = out_w + v * d;
        Offsets {
            embed,
            pos,
            query,
            key,
            value,
            proj,
            out_w,
            out_b,
            end: out_b + v,
        }
    }
}

/// `out[l, i] = sum_j w[i, j] x[l, j]` for an `[n, n]` matrix `w`.
fn apply_rows(w: &[f64], x: &[f64], rows: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * n];
    for l in 0..rows {
        let xl = &x[l * n..(l + 1) * n];
        for i in 0..n {
            out[l * n + i] = w[i * n..(i + 1) * n].iter().zip(xl).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// Backprop through `out = x W^T`: accumulates `dW += dout^T x` and
/// `dx += dout W`.
fn back_rows(w: &[f64], x: &[f64], dout: &[f64], rows: usize, n: usize, dw: &mut [f64], dx: &mut [f64]) {
    for l in 0..rows {
        for i in 0..n {
            let g = dout[l * n + i];
            if g == 0.0 {
                continue;
            }
            for j in 0..n {
                dw[i * n + j] += g * x[l * n + j];
                dx[l * n + j] += g * w[i * n + j];
            }
        }
    }
}

impl Model for AttentionModel {
    type Input = Vec<usize>;

    fn dim(&self) -> usize {
        self.offsets().end
    }

    fn num_classes(&self) -> usize {
        self.tokens
    }

    fn layout(&self) -> Vec<TensorMeta> {
        let (v, l, d, h) = (self.tokens, self.seq_len, self.embed, self.heads);
        vec![
            TensorMeta::new("embed.weight", TensorKind::Embed, &[v, d]).with_tokens(v),
            TensorMeta::new("pos_embed", TensorKind::Other, &[l, d]),
            TensorMeta::new("attn.query.weight", TensorKind::Query, &[d, d]).with_heads(h),
            TensorMeta::new("attn.key.weight", TensorKind::Key, &[d, d]).with_heads(h),
            TensorMeta::new("attn.value.weight", TensorKind::Value, &[d, d])
                .with_heads(h)
                .with_out_neurons(d),
            TensorMeta::new("attn.proj.weight", TensorKind::AttnProj, &[d, d]).with_out_neurons(d),
            TensorMeta::new("output.weight", TensorKind::Output, &[v, d]).with_tokens(v),
            TensorMeta::new("output.bias", TensorKind::Other, &[v]),
        ]
    }

    fn init(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let (v, l, d) = (self.tokens, self.seq_len, self.embed);
        let s = 1.0 / (d as f64).sqrt();
        let mut p = gaussian_init(v * d, 1.0, rng);
        p.extend(gaussian_init(l * d, 0.1, rng));
        for _ in 0..4 {
            p.extend(gaussian_init(d * d, s, rng));
        }
        p.extend(gaussian_init(v * d, s, rng));
        p.extend(std::iter::repeat_n(0.0, v));
        p
    }

    fn check_input(&self, input: &Vec<usize>) -> Result<()> {
        if input.len() != self.seq_len {
            return Err(Error::LengthMismatch {
                expected: self.seq_len,
                found: input.len(),
            });
        }
        if let Some(&t) = input.iter().find(|&&t| t >= self.tokens) {
            return Err(Error::Config(format!("token {t} outside vocabulary of {}", self.tokens)));
        }
        Ok(())
    }

    fn accumulate(&self, params: &[f64], seq: &Vec<usize>, label: usize, grad: &mut [f64]) -> f64 {
        let (v, l, d, nh) = (self.tokens, self.seq_len, self.embed, self.heads);
        let dh = d / nh;
        let scale = 1.0 / (dh as f64).sqrt();
        let o = self.offsets();
        let embed = &params[o.embed..o.pos];
        let pos = &params[o.pos..o.query];
        let wq = &params[o.query..o.key];
        let wk = &params[o.key..o.value];
        let wv = &params[o.value..o.proj];
        let wp = &params[o.proj..o.out_w];
        let wo = &params[o.out_w..o.out_b];
        let bo = &params[o.out_b..o.end];

        // forward
        let mut x = vec![0.0; l * d];
        for (t, &tok) in seq.iter().enumerate() {
            for j in 0..d {
                x[t * d + j] = embed[tok * d + j] + pos[t * d + j];
            }
        }
        let q = apply_rows(wq, &x, l, d);
        let k = apply_rows(wk, &x, l, d);
        let val = apply_rows(wv, &x, l, d);
        let mut attn = vec![0.0; nh * l * l];
        let mut heads_out = vec![0.0; l * d];
        for h in 0..nh {
            let cols = h * dh..(h + 1) * dh;
            for a in 0..l {
                let row = &mut attn[(h * l + a) * l..(h * l + a + 1) * l];
                for (b, r) in row.iter_mut().enumerate() {
                    *r = scale * cols.clone().map(|c| q[a * d + c] * k[b * d + c]).sum::<f64>();
                }
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for r in row.iter_mut() {
                    *r = (*r - max).exp();
                    z += *r;
                }
                row.iter_mut().for_each(|r| *r /= z);
                for c in cols.clone() {
                    heads_out[a * d + c] = (0..l).map(|b| row[b] * val[b * d + c]).sum();
                }
            }
        }
        let projected = apply_rows(wp, &heads_out, l, d);
        let mut pooled = vec![0.0; d];
        for t in 0..l {
            for i in 0..d {
                pooled[i] += (x[t * d + i] + projected[t * d + i]) / l as f64;
            }
        }
        let mut dlogits: Vec<f64> = (0..v)
            .map(|c| bo[c] + wo[c * d..(c + 1) * d].iter().zip(&pooled).map(|(w, z)| w * z).sum::<f64>())
            .collect();
        let loss = softmax_xent_in_place(&mut dlogits, label);

        // backward
        let mut dpooled = vec![0.0; d];
        for c in 0..v {
            let g = dlogits[c];
            for i in 0..d {
                grad[o.out_w + c * d + i] += g * pooled[i];
                dpooled[i] += wo[c * d + i] * g;
            }
            grad[o.out_b + c] += g;
        }
        let mut dx = vec![0.0; l * d];
        let mut dproj = vec![0.0; l * d];
        for t in 0..l {
            for i in 0..d {
                let g = dpooled[i] / l as f64;
                dx[t * d + i] += g;
                dproj[t * d + i] = g;
            }
        }
        let mut dheads = vec![0.0; l * d];
        back_rows(wp, &heads_out, &dproj, l, d, &mut grad[o.proj..o.out_w], &mut dheads);

        let mut dq = vec![0.0; l * d];
        let mut dk = vec![0.0; l * d];
        let mut dval = vec![0.0; l * d];
        let mut dscore = vec![0.0; l];
        for h in 0..nh {
            let cols = h * dh..(h + 1) * dh;
            for a in 0..l {
                let row = &attn[(h * l + a) * l..(h * l + a + 1) * l];
                let mut weighted = 0.0;
                for b in 0..l {
                    let da: f64 = cols.clone().map(|c| dheads[a * d + c] * val[b * d + c]).sum();
                    dscore[b] = da;
                    weighted += row[b] * da;
                    for c in cols.clone() {
                        dval[b * d + c] += row[b] * dheads[a * d + c];
                    }
                }
                for b in 0..l {
                    let ds = row[b] * (dscore[b] - weighted) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for c in cols.clone() {
                        dq[a * d + c] += ds * k[b * d + c];
                        dk[b * d + c] += ds * q[a * d + c];
                    }
                }
            }
        }
        back_rows(wq, &x, &dq, l, d, &mut grad[o.query..o.key], &mut dx);
        back_rows(wk, &x, &dk, l, d, &mut grad[o.key..o.value], &mut dx);
        back_rows(wv, &x, &dval, l, d, &mut grad[o.value..o.proj], &mut dx);
        for (t, &tok) in seq.iter().enumerate() {
            for j in 0..d {
                grad[o.embed + tok * d + j] += dx[t * d + j];
                grad[o.pos + t * d + j] += dx[t * d + j];
            }
        }
        loss
    }
}
