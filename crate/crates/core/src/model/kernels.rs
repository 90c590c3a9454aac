//! Dense f64 kernels with hand-written backward passes. All matrices are
//! row-major.

use crate::encoding::UnilmMask;

pub const LN_EPS: f64 = 1e-5;

/// `out[L×O] = inp[L×I] · w[I×O] + b`
pub fn matmul_forward(out: &mut [f64], inp: &[f64], w: &[f64], b: &[f64], rows: usize, in_dim: usize, out_dim: usize) {
    for r in 0..rows {
        let o_row = &mut out[r * out_dim..(r + 1) * out_dim];
        o_row.copy_from_slice(b);
        let i_row = &inp[r * in_dim..(r + 1) * in_dim];
        for (k, &a) in i_row.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let w_row = &w[k * out_dim..(k + 1) * out_dim];
            for (o, &wv) in o_row.iter_mut().zip(w_row) {
                *o += a * wv;
            }
        }
    }
}

/// Accumulates `dinp`, `dw`, `db` from `dout`.
#[allow(clippy::too_many_arguments)]
pub fn matmul_backward(
    dinp: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
    dout: &[f64],
    inp: &[f64],
    w: &[f64],
    rows: usize,
    in_dim: usize,
    out_dim: usize,
) {
    for r in 0..rows {
        let d_row = &dout[r * out_dim..(r + 1) * out_dim];
        if d_row.iter().all(|&v| v == 0.0) {
            continue;
        }
        for (g, &d) in db.iter_mut().zip(d_row) {
            *g += d;
        }
        let i_row = &inp[r * in_dim..(r + 1) * in_dim];
        let di_row = &mut dinp[r * in_dim..(r + 1) * in_dim];
        for k in 0..in_dim {
            let w_row = &w[k * out_dim..(k + 1) * out_dim];
            let mut acc = 0.0;
            for (&wv, &d) in w_row.iter().zip(d_row) {
                acc += wv * d;
            }
            di_row[k] += acc;
            let a = i_row[k];
            let dw_row = &mut dw[k * out_dim..(k + 1) * out_dim];
            for (g, &d) in dw_row.iter_mut().zip(d_row) {
                *g += a * d;
            }
        }
    }
}

/// Layer normalization over rows of width `dim`. Stores the normalized
/// input and reciprocal std for the backward pass.
pub fn layernorm_forward(out: &mut [f64], xhat: &mut [f64], rstd: &mut [f64], inp: &[f64], gain: &[f64], bias: &[f64], dim: usize) {
    for (r, row) in inp.chunks_exact(dim).enumerate() {
        let mean = row.iter().sum::<f64>() / dim as f64;
        let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / dim as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        let xh = &mut xhat[r * dim..(r + 1) * dim];
        let o = &mut out[r * dim..(r + 1) * dim];
        for i in 0..dim {
            xh[i] = (row[i] - mean) * rs;
            o[i] = xh[i] * gain[i] + bias[i];
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn layernorm_backward(
    dinp: &mut [f64],
    dgain: &mut [f64],
    dbias: &mut [f64],
    dout: &[f64],
    xhat: &[f64],
    rstd: &[f64],
    gain: &[f64],
    dim: usize,
) {
    for (r, d_row) in dout.chunks_exact(dim).enumerate() {
        if d_row.iter().all(|&v| v == 0.0) {
            continue;
        }
        let xh = &xhat[r * dim..(r + 1) * dim];
        let mut mean_dxh = 0.0;
        let mut mean_dxh_xh = 0.0;
        for i in 0..dim {
            let dxh = d_row[i] * gain[i];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh[i];
            dgain[i] += d_row[i] * xh[i];
            dbias[i] += d_row[i];
        }
        mean_dxh /= dim as f64;
        mean_dxh_xh /= dim as f64;
        let di = &mut dinp[r * dim..(r + 1) * dim];
        for i in 0..dim {
            let dxh = d_row[i] * gain[i];
            di[i] += rstd[r] * (dxh - mean_dxh - xh[i] * mean_dxh_xh);
        }
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub fn gelu_forward(out: &mut [f64], inp: &[f64]) {
    for (o, &x) in out.iter_mut().zip(inp) {
        let t = (GELU_K * (x + 0.044715 * x * x * x)).tanh();
        *o = 0.5 * x * (1.0 + t);
    }
}

pub fn gelu_backward(dinp: &mut [f64], inp: &[f64], dout: &[f64]) {
    for ((di, &x), &d) in dinp.iter_mut().zip(inp).zip(dout) {
        let u = GELU_K * (x + 0.044715 * x * x * x);
        let t = u.tanh();
        let du = GELU_K * (1.0 + 3.0 * 0.044715 * x * x);
        let grad = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        *di += grad * d;
    }
}

/// In-place softmax over a slice.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

/// Multi-head attention over `qkv` rows laid out as `[q | k | v]`, each of
/// width `dim`. `att` holds `heads × L × L` weights; entries outside the
/// mask stay zero.
pub fn attention_forward(ctx: &mut [f64], att: &mut [f64], qkv: &[f64], mask: &UnilmMask, heads: usize, dim: usize) {
    let len = mask.size();
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let stride = 3 * dim;
    ctx.fill(0.0);
    att.fill(0.0);
    for h in 0..heads {
        for i in 0..len {
            let end = mask.row_end(i);
            let q = &qkv[i * stride + h * hd..i * stride + (h + 1) * hd];
            let row = &mut att[(h * len + i) * len..(h * len + i) * len + end];
            for (j, s) in row.iter_mut().enumerate() {
                let k = &qkv[j * stride + dim + h * hd..j * stride + dim + (h + 1) * hd];
                *s = q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            softmax_in_place(row);
            let c = &mut ctx[i * dim + h * hd..i * dim + (h + 1) * hd];
            for (j, &a) in row.iter().enumerate() {
                let v = &qkv[j * stride + 2 * dim + h * hd..j * stride + 2 * dim + (h + 1) * hd];
                for (cv, &vv) in c.iter_mut().zip(v) {
                    *cv += a * vv;
                }
            }
        }
    }
}

pub fn attention_backward(dqkv: &mut [f64], dctx: &[f64], att: &[f64], qkv: &[f64], mask: &UnilmMask, heads: usize, dim: usize) {
    let len = mask.size();
    let hd = dim / heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let stride = 3 * dim;
    let mut datt = vec![0.0; len];
    for h in 0..heads {
        for i in 0..len {
            let dc = &dctx[i * dim + h * hd..i * dim + (h + 1) * hd];
            if dc.iter().all(|&v| v == 0.0) {
                continue;
            }
            let end = mask.row_end(i);
            let row = &att[(h * len + i) * len..(h * len + i) * len + end];
            for j in 0..end {
                let voff = j * stride + 2 * dim + h * hd;
                datt[j] = dc.iter().zip(&qkv[voff..voff + hd]).map(|(a, b)| a * b).sum();
                for (dv, &g) in dqkv[voff..voff + hd].iter_mut().zip(dc) {
                    *dv += row[j] * g;
                }
            }
            let dot: f64 = row.iter().zip(&datt[..end]).map(|(a, d)| a * d).sum();
            let qoff = i * stride + h * hd;
            for j in 0..end {
                let ds = row[j] * (datt[j] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let koff = j * stride + dim + h * hd;
                for t in 0..hd {
                    dqkv[qoff + t] += ds * qkv[koff + t];
                    dqkv[koff + t] += ds * qkv[qoff + t];
                }
            }
        }
    }
}
