//! Forward and backward kernels for the differentiable operations.
//!
//! Everything here is a pure function of its arguments. The tape in
//! [`crate::autograd`] records which kernel produced each value and calls
//! the matching backward kernel during the reverse sweep. Volumetric
//! kernels take `N×C×D×H×W` inputs and parallelize over the batch axis;
//! partial reductions are summed in batch order so results do not depend on
//! thread scheduling.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Spatial layout of a `N×C×D×H×W` tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Vol5 {
    pub n: usize,
    pub c: usize,
    pub d: usize,
    pub h: usize,
    pub w: usize,
}

impl Vol5 {
    pub fn of(t: &Tensor, what: &str) -> Result<Self> {
        match *t.shape() {
            [n, c, d, h, w] => Ok(Self { n, c, d, h, w }),
            ref s => Err(Error::dim(format!("{what} expects N×C×D×H×W, got {s:?}"))),
        }
    }

    pub fn spatial(&self) -> usize {
        self.d * self.h * self.w
    }

    pub fn sample(&self) -> usize {
        self.c * self.spatial()
    }

    pub fn dims(&self) -> [usize; 5] {
        [self.n, self.c, self.d, self.h, self.w]
    }
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k, n) = match (a.shape(), b.shape()) {
        ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
        (sa, sb) => {
            return Err(Error::dim(format!(
                "matmul of {sa:?} by {sb:?}: inner dimensions disagree"
            )))
        }
    };
    let mut out = vec![0.0; m * n];
    matmul_into(a.data(), b.data(), &mut out, m, k, n);
    Tensor::new(&[m, n], out)
}

/// `out += a[m×k] · b[k×n]`
fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

/// Gradients of `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let (ad, bd) = (a.data(), b.data());
    let mut ga = vec![0.0; m * k];
    for i in 0..m {
        for p in 0..k {
            let mut s = 0.0;
            for j in 0..n {
                s += g[i * n + j] * bd[p * n + j];
            }
            ga[i * k + p] = s;
        }
    }
    let mut gb = vec![0.0; k * n];
    for i in 0..m {
        for p in 0..k {
            let av = ad[i * k + p];
            for j in 0..n {
                gb[p * n + j] += av * g[i * n + j];
            }
        }
    }
    (ga, gb)
}

/// Batched affine map `x[N×in] · Wᵀ + b` with `W` stored `out×in`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, din, dout) = match (x.shape(), w.shape()) {
        ([n, din], [dout, din2]) if din == din2 => (*n, *din, *dout),
        (sx, sw) => {
            return Err(Error::dim(format!(
                "linear: input {sx:?} does not match weight {sw:?}"
            )))
        }
    };
    if let Some(b) = b {
        if b.shape() != [dout] {
            return Err(Error::dim(format!(
                "linear: bias {:?} does not match output width {dout}",
                b.shape()
            )));
        }
    }
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; n * dout];
    for i in 0..n {
        let xr = &xd[i * din..(i + 1) * din];
        for o in 0..dout {
            let wr = &wd[o * din..(o + 1) * din];
            let mut s = b.map_or(0.0, |b| b.data()[o]);
            for (a, c) in xr.iter().zip(wr) {
                s += a * c;
            }
            out[i * dout + o] = s;
        }
    }
    Tensor::new(&[n, dout], out)
}

/// Returns `(dx, dW, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, g: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (n, din) = (x.shape()[0], x.shape()[1]);
    let dout = w.shape()[0];
    let (xd, wd) = (x.data(), w.data());
    let mut gx = vec![0.0; n * din];
    let mut gw = vec![0.0; dout * din];
    let mut gb = vec![0.0; dout];
    for i in 0..n {
        for o in 0..dout {
            let go = g[i * dout + o];
            if go == 0.0 {
                continue;
            }
            gb[o] += go;
            let wr = &wd[o * din..(o + 1) * din];
            let xr = &xd[i * din..(i + 1) * din];
            let gxr = &mut gx[i * din..(i + 1) * din];
            for (gxv, &wv) in gxr.iter_mut().zip(wr) {
                *gxv += go * wv;
            }
            let gwr = &mut gw[o * din..(o + 1) * din];
            for (gwv, &xv) in gwr.iter_mut().zip(xr) {
                *gwv += go * xv;
            }
        }
    }
    (gx, gw, gb)
}

fn conv_shapes(x: &Tensor, k: &Tensor, padding: usize) -> Result<(Vol5, usize, usize, Vol5)> {
    let v = Vol5::of(x, "conv3d input")?;
    let (cout, ks) = match *k.shape() {
        [co, ci, a, b, c] if ci == v.c && a == b && b == c => (co, a),
        ref s => {
            return Err(Error::dim(format!(
                "conv3d kernels {s:?} do not match input {:?}",
                x.shape()
            )))
        }
    };
    if ks % 2 == 0 {
        return Err(Error::dim(format!("conv3d kernel size {ks} must be odd")));
    }
    let fits = |s: usize| s + 2 * padding >= ks;
    if !(fits(v.d) && fits(v.h) && fits(v.w)) {
        return Err(Error::dim(format!(
            "conv3d kernel {ks} larger than padded input {:?} (padding {padding})",
            x.shape()
        )));
    }
    let o = Vol5 {
        n: v.n,
        c: cout,
        d: v.d + 2 * padding + 1 - ks,
        h: v.h + 2 * padding + 1 - ks,
        w: v.w + 2 * padding + 1 - ks,
    };
    Ok((v, cout, ks, o))
}

/// Valid output range along one axis for kernel offset `kk`:
/// `o` such that `0 <= o + kk - p < len`.
#[inline]
fn valid_range(kk: usize, p: usize, len: usize, out_len: usize) -> (usize, usize) {
    let lo = p.saturating_sub(kk);
    let hi = (len + p).saturating_sub(kk).min(out_len);
    (lo, hi.max(lo))
}

/// Stride-1 cross-correlation with zero padding.
pub fn conv3d(x: &Tensor, k: &Tensor, padding: usize) -> Result<Tensor> {
    let (v, _cout, ks, o) = conv_shapes(x, k, padding)?;
    let (xd, kd) = (x.data(), k.data());
    let mut out = vec![0.0; o.n * o.sample()];
    out.par_chunks_mut(o.sample())
        .enumerate()
        .for_each(|(n, out_n)| {
            let x_n = &xd[n * v.sample()..(n + 1) * v.sample()];
            conv_sample(x_n, kd, out_n, v, o, ks, padding);
        });
    Tensor::new(&o.dims(), out)
}

fn conv_sample(x: &[f64], k: &[f64], out: &mut [f64], v: Vol5, o: Vol5, ks: usize, p: usize) {
    let k3 = ks * ks * ks;
    for co in 0..o.c {
        let out_c = &mut out[co * o.spatial()..(co + 1) * o.spatial()];
        for ci in 0..v.c {
            let x_c = &x[ci * v.spatial()..(ci + 1) * v.spatial()];
            let kbase = (co * v.c + ci) * k3;
            for kd in 0..ks {
                let (d0, d1) = valid_range(kd, p, v.d, o.d);
                for kh in 0..ks {
                    let (h0, h1) = valid_range(kh, p, v.h, o.h);
                    for kw in 0..ks {
                        let wv = k[kbase + (kd * ks + kh) * ks + kw];
                        if wv == 0.0 {
                            continue;
                        }
                        let (w0, w1) = valid_range(kw, p, v.w, o.w);
                        for od in d0..d1 {
                            let id = od + kd - p;
                            for oh in h0..h1 {
                                let ih = oh + kh - p;
                                let orow = &mut out_c[(od * o.h + oh) * o.w..][w0..w1];
                                let irow = &x_c[(id * v.h + ih) * v.w + w0 + kw - p..][..w1 - w0];
                                for (ov, &iv) in orow.iter_mut().zip(irow) {
                                    *ov += wv * iv;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Returns `(d input, d kernels)`; the input gradient is skipped when
/// `need_input` is false.
pub fn conv3d_backward(
    x: &Tensor,
    k: &Tensor,
    padding: usize,
    g: &[f64],
    need_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>) {
    let (v, _cout, ks, o) = conv_shapes(x, k, padding).expect("shapes checked in forward");
    let (xd, kd) = (x.data(), k.data());
    let k3 = ks * ks * ks;
    let p = padding;

    let per_sample: Vec<(Option<Vec<f64>>, Vec<f64>)> = (0..v.n)
        .into_par_iter()
        .map(|n| {
            let x_n = &xd[n * v.sample()..(n + 1) * v.sample()];
            let g_n = &g[n * o.sample()..(n + 1) * o.sample()];
            let mut gx = need_input.then(|| vec![0.0; v.sample()]);
            let mut gk = vec![0.0; k.numel()];
            for co in 0..o.c {
                let g_c = &g_n[co * o.spatial()..(co + 1) * o.spatial()];
                for ci in 0..v.c {
                    let xoff = ci * v.spatial();
                    let kbase = (co * v.c + ci) * k3;
                    for kdd in 0..ks {
                        let (d0, d1) = valid_range(kdd, p, v.d, o.d);
                        for kh in 0..ks {
                            let (h0, h1) = valid_range(kh, p, v.h, o.h);
                            for kw in 0..ks {
                                let (w0, w1) = valid_range(kw, p, v.w, o.w);
                                let kidx = kbase + (kdd * ks + kh) * ks + kw;
                                let wv = kd[kidx];
                                let mut acc = 0.0;
                                for od in d0..d1 {
                                    let id = od + kdd - p;
                                    for oh in h0..h1 {
                                        let ih = oh + kh - p;
                                        let grow = &g_c[(od * o.h + oh) * o.w..][w0..w1];
                                        let istart = xoff + (id * v.h + ih) * v.w + w0 + kw - p;
                                        let irow = &x_n[istart..istart + (w1 - w0)];
                                        for (&gv, &iv) in grow.iter().zip(irow) {
                                            acc += gv * iv;
                                        }
                                        if let Some(gx) = gx.as_mut() {
                                            let gxrow = &mut gx[istart..istart + (w1 - w0)];
                                            for (gxv, &gv) in gxrow.iter_mut().zip(grow) {
                                                *gxv += wv * gv;
                                            }
                                        }
                                    }
                                }
                                gk[kidx] += acc;
                            }
                        }
                    }
                }
            }
            (gx, gk)
        })
        .collect();

    let mut gk_total = vec![0.0; k.numel()];
    let mut gx_total = need_input.then(|| Vec::with_capacity(x.numel()));
    for (gx, gk) in per_sample {
        for (t, v) in gk_total.iter_mut().zip(&gk) {
            *t += v;
        }
        if let (Some(total), Some(gx)) = (gx_total.as_mut(), gx) {
            total.extend_from_slice(&gx);
        }
    }
    (gx_total, gk_total)
}

/// Non-overlapping max pooling with cubic window. Returns the pooled tensor
/// and, for each output voxel, the flat input index of its maximum (first
/// occurrence in scan order on ties).
pub fn maxpool3d(x: &Tensor, window: usize) -> Result<(Tensor, Vec<usize>)> {
    let v = Vol5::of(x, "maxpool3d input")?;
    if window == 0 {
        return Err(Error::dim("maxpool3d window must be at least 1"));
    }
    if v.d < window || v.h < window || v.w < window {
        return Err(Error::dim(format!(
            "maxpool3d window {window} exceeds spatial dims of {:?}",
            x.shape()
        )));
    }
    let o = Vol5 {
        n: v.n,
        c: v.c,
        d: v.d / window,
        h: v.h / window,
        w: v.w / window,
    };
    let xd = x.data();
    let mut out = Vec::with_capacity(o.n * o.sample());
    let mut arg = Vec::with_capacity(o.n * o.sample());
    for nc in 0..v.n * v.c {
        let base = nc * v.spatial();
        for od in 0..o.d {
            for oh in 0..o.h {
                for ow in 0..o.w {
                    let mut best = f64::NEG_INFINITY;
                    let mut best_i = usize::MAX;
                    for a in 0..window {
                        for b in 0..window {
                            for c in 0..window {
                                let i = base
                                    + ((od * window + a) * v.h + oh * window + b) * v.w
                                    + ow * window
                                    + c;
                                if best_i == usize::MAX || xd[i] > best {
                                    best = xd[i];
                                    best_i = i;
                                }
                            }
                        }
                    }
                    out.push(best);
                    arg.push(best_i);
                }
            }
        }
    }
    Ok((Tensor::new(&o.dims(), out)?, arg))
}

pub fn maxpool3d_backward(input_len: usize, argmax: &[usize], g: &[f64]) -> Vec<f64> {
    let mut gx = vec![0.0; input_len];
    for (&i, &gv) in argmax.iter().zip(g) {
        gx[i] += gv;
    }
    gx
}

/// Nearest-neighbour upsampling by an integer factor along D, H, W.
pub fn upsample3d(x: &Tensor, factor: usize) -> Result<Tensor> {
    let v = Vol5::of(x, "upsample3d input")?;
    if factor == 0 {
        return Err(Error::dim("upsample factor must be at least 1"));
    }
    let o = Vol5 {
        d: v.d * factor,
        h: v.h * factor,
        w: v.w * factor,
        ..v
    };
    let xd = x.data();
    let mut out = Vec::with_capacity(o.n * o.sample());
    for nc in 0..v.n * v.c {
        let base = nc * v.spatial();
        for od in 0..o.d {
            for oh in 0..o.h {
                let row = base + ((od / factor) * v.h + oh / factor) * v.w;
                out.extend((0..o.w).map(|ow| xd[row + ow / factor]));
            }
        }
    }
    Tensor::new(&o.dims(), out)
}

pub fn upsample3d_backward(x_shape: &[usize], factor: usize, g: &[f64]) -> Vec<f64> {
    let (nc, d, h, w) = (x_shape[0] * x_shape[1], x_shape[2], x_shape[3], x_shape[4]);
    let (od, oh, ow) = (d * factor, h * factor, w * factor);
    let mut gx = vec![0.0; nc * d * h * w];
    for c in 0..nc {
        let obase = c * od * oh * ow;
        let ibase = c * d * h * w;
        for zd in 0..od {
            for zh in 0..oh {
                let irow = ibase + ((zd / factor) * h + zh / factor) * w;
                let orow = obase + (zd * oh + zh) * ow;
                for zw in 0..ow {
                    gx[irow + zw / factor] += g[orow + zw];
                }
            }
        }
    }
    gx
}

/// Adds a per-channel bias to a `N×C×D×H×W` tensor.
pub fn channel_bias(x: &Tensor, b: &Tensor) -> Result<Tensor> {
    let v = Vol5::of(x, "channel bias input")?;
    if b.shape() != [v.c] {
        return Err(Error::dim(format!(
            "channel bias {:?} does not match {} channels",
            b.shape(),
            v.c
        )));
    }
    let mut out = x.data().to_vec();
    for (i, chunk) in out.chunks_mut(v.spatial()).enumerate() {
        let bv = b.data()[i % v.c];
        chunk.iter_mut().for_each(|o| *o += bv);
    }
    Tensor::new(x.shape(), out)
}

pub fn channel_bias_backward(v: Vol5, g: &[f64]) -> Vec<f64> {
    let mut gb = vec![0.0; v.c];
    for (i, chunk) in g.chunks(v.spatial()).enumerate() {
        gb[i % v.c] += chunk.iter().sum::<f64>();
    }
    gb
}

/// Running statistics carried by a batch-norm layer between calls.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Saved intermediates of a batch-norm forward pass.
#[derive(Clone, Debug)]
pub struct BnCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
    pub mode: BnMode,
}

pub fn batchnorm3d(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mode: BnMode,
    running: &mut RunningStats,
) -> Result<(Tensor, BnCache)> {
    let v = Vol5::of(x, "batchnorm3d input")?;
    if gamma.shape() != [v.c] || beta.shape() != [v.c] {
        return Err(Error::dim(format!(
            "batchnorm3d affine params {:?}/{:?} do not match {} channels",
            gamma.shape(),
            beta.shape(),
            v.c
        )));
    }
    if running.mean.len() != v.c || running.var.len() != v.c {
        return Err(Error::dim(
            "batchnorm3d running stats channel count mismatch",
        ));
    }
    let xd = x.data();
    let s = v.spatial();
    let m = (v.n * s) as f64;
    let (mean, var) = match mode {
        BnMode::Train => {
            let mut mean = vec![0.0; v.c];
            let mut var = vec![0.0; v.c];
            for c in 0..v.c {
                let mut acc = 0.0;
                for n in 0..v.n {
                    acc += xd[(n * v.c + c) * s..][..s].iter().sum::<f64>();
                }
                let mu = acc / m;
                let mut sq = 0.0;
                for n in 0..v.n {
                    sq += xd[(n * v.c + c) * s..][..s]
                        .iter()
                        .map(|&a| (a - mu) * (a - mu))
                        .sum::<f64>();
                }
                mean[c] = mu;
                var[c] = sq / m;
            }
            for c in 0..v.c {
                running.mean[c] = (1.0 - BN_MOMENTUM) * running.mean[c] + BN_MOMENTUM * mean[c];
                running.var[c] = (1.0 - BN_MOMENTUM) * running.var[c] + BN_MOMENTUM * var[c];
            }
            (mean, var)
        }
        BnMode::Eval => (running.mean.clone(), running.var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|&vv| 1.0 / (vv + BN_EPS).sqrt()).collect();
    let mut xhat = vec![0.0; xd.len()];
    let mut out = vec![0.0; xd.len()];
    for (i, (xc, (hc, oc))) in xd
        .chunks(s)
        .zip(xhat.chunks_mut(s).zip(out.chunks_mut(s)))
        .enumerate()
    {
        let c = i % v.c;
        let (g, b) = (gamma.data()[c], beta.data()[c]);
        for ((&a, h), o) in xc.iter().zip(hc.iter_mut()).zip(oc.iter_mut()) {
            *h = (a - mean[c]) * inv_std[c];
            *o = g * *h + b;
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        BnCache {
            xhat,
            inv_std,
            mode,
        },
    ))
}

/// Returns `(dx, dγ, dβ)`.
pub fn batchnorm3d_backward(
    v: Vol5,
    gamma: &Tensor,
    cache: &BnCache,
    g: &[f64],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let s = v.spatial();
    let m = (v.n * s) as f64;
    let mut dgamma = vec![0.0; v.c];
    let mut dbeta = vec![0.0; v.c];
    for (i, (gc, hc)) in g.chunks(s).zip(cache.xhat.chunks(s)).enumerate() {
        let c = i % v.c;
        for (&gv, &hv) in gc.iter().zip(hc) {
            dgamma[c] += gv * hv;
            dbeta[c] += gv;
        }
    }
    let mut dx = vec![0.0; g.len()];
    for (i, ((gc, hc), dc)) in g
        .chunks(s)
        .zip(cache.xhat.chunks(s))
        .zip(dx.chunks_mut(s))
        .enumerate()
    {
        let c = i % v.c;
        let scale = gamma.data()[c] * cache.inv_std[c];
        match cache.mode {
            BnMode::Train => {
                for ((&gv, &hv), d) in gc.iter().zip(hc).zip(dc.iter_mut()) {
                    *d = scale / m * (m * gv - dbeta[c] - hv * dgamma[c]);
                }
            }
            BnMode::Eval => {
                for (&gv, d) in gc.iter().zip(dc.iter_mut()) {
                    *d = scale * gv;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}
