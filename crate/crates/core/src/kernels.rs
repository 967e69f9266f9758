//! Batched forward/backward kernels for the convolution family.
//!
//! Layouts are channel-first with a leading batch axis: 2D inputs are
//! `(B, C, H, W)`, 3D inputs `(B, C, D, H, W)`. All kernels use the
//! cross-correlation convention (no kernel flip) and stride 1, except the
//! transposed convolution which uses stride equal to its kernel size.
//!
//! Standard 2D/3D convolutions go through im2col + GEMM. Depthwise and
//! transposed convolutions are direct loops.

use crate::error::{Error, Result};
use crate::tensor::{gemm_nn, gemm_nt, gemm_tn, Tensor};

fn dims4(t: &Tensor, what: &str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::shape(format!("{what} must be rank 4, got {s:?}"))),
    }
}

fn dims5(t: &Tensor, what: &str) -> Result<[usize; 5]> {
    match *t.shape() {
        [a, b, c, d, e] => Ok([a, b, c, d, e]),
        ref s => Err(Error::shape(format!("{what} must be rank 5, got {s:?}"))),
    }
}

/// Output extent of a stride-1 convolution, or an error if the kernel does
/// not fit the padded input.
pub fn conv_out_extent(input: usize, k: usize, pad: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if k == 0 || k > padded {
        return Err(Error::shape(format!(
            "kernel {k} larger than padded extent {padded}"
        )));
    }
    Ok(padded - k + 1)
}

struct Geom2 {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl Geom2 {
    fn patch_len(&self) -> usize {
        self.c * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (column row, output position, source offset) triple
    /// whose source lies inside the unpadded input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.positions();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    for oy in 0..self.oh {
                        let iy = (oy + ki) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for ox in 0..self.ow {
                            let ix = (ox + kj) as isize - self.pad as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let src = (c * self.h + iy as usize) * self.w + ix as usize;
                            f(row * p, oy * self.ow + ox, src);
                        }
                    }
                }
            }
        }
    }
}

fn im2col2(g: &Geom2, x: &[f64], cols: &mut [f64]) {
    cols.iter_mut().for_each(|v| *v = 0.0);
    g.for_each_tap(|row, pos, src| cols[row + pos] = x[src]);
}

fn col2im2(g: &Geom2, cols: &[f64], dx: &mut [f64]) {
    g.for_each_tap(|row, pos, src| dx[src] += cols[row + pos]);
}

fn geom2(x: &Tensor, w: &Tensor, pad: usize) -> Result<(usize, usize, Geom2)> {
    let [b, c, h, wd] = dims4(x, "conv2d input")?;
    let [o, wc, kh, kw] = dims4(w, "conv2d kernel")?;
    if wc != c {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, kernel expects {wc}"
        )));
    }
    if kh != kw {
        return Err(Error::shape("conv2d: only square kernels are supported"));
    }
    let oh = conv_out_extent(h, kh, pad)?;
    let ow = conv_out_extent(wd, kw, pad)?;
    Ok((
        b,
        o,
        Geom2 {
            c,
            h,
            w: wd,
            k: kh,
            pad,
            oh,
            ow,
        },
    ))
}

/// `x: (B, C, H, W)`, `w: (O, C, k, k)` → `(B, O, H', W')`.
pub fn conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Result<Tensor> {
    let (b, o, g) = geom2(x, w, pad)?;
    let (pl, p) = (g.patch_len(), g.positions());
    let in_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; pl * p];
    let mut out = vec![0.0; b * o * p];
    for n in 0..b {
        im2col2(&g, &x.data()[n * in_len..(n + 1) * in_len], &mut cols);
        gemm_nn(
            o,
            pl,
            p,
            w.data(),
            &cols,
            &mut out[n * o * p..(n + 1) * o * p],
        );
    }
    Ok(Tensor::from_parts(vec![b, o, g.oh, g.ow], out))
}

/// Gradients of [`conv2d`] with respect to input and kernel.
pub fn conv2d_backward(
    x: &Tensor,
    w: &Tensor,
    pad: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let (b, o, g) = geom2(x, w, pad)?;
    let (pl, p) = (g.patch_len(), g.positions());
    let in_len = g.c * g.h * g.w;
    let mut cols = vec![0.0; pl * p];
    let mut dcols = vec![0.0; pl * p];
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    for n in 0..b {
        let xs = &x.data()[n * in_len..(n + 1) * in_len];
        let dys = &dy.data()[n * o * p..(n + 1) * o * p];
        im2col2(&g, xs, &mut cols);
        gemm_nt(o, p, pl, dys, &cols, &mut dw);
        dcols.iter_mut().for_each(|v| *v = 0.0);
        gemm_tn(pl, o, p, w.data(), dys, &mut dcols);
        col2im2(&g, &dcols, &mut dx[n * in_len..(n + 1) * in_len]);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
    ))
}

struct Geom3 {
    c: usize,
    d: usize,
    h: usize,
    w: usize,
    k: usize,
    od: usize,
    oh: usize,
    ow: usize,
}

impl Geom3 {
    fn patch_len(&self) -> usize {
        self.c * self.k * self.k * self.k
    }

    fn positions(&self) -> usize {
        self.od * self.oh * self.ow
    }

    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let p = self.positions();
        let k = self.k;
        for c in 0..self.c {
            for kd in 0..k {
                for ki in 0..k {
                    for kj in 0..k {
                        let row = ((c * k + kd) * k + ki) * k + kj;
                        for oz in 0..self.od {
                            for oy in 0..self.oh {
                                let base =
                                    ((c * self.d + oz + kd) * self.h + oy + ki) * self.w + kj;
                                let pos = (oz * self.oh + oy) * self.ow;
                                for ox in 0..self.ow {
                                    f(row * p, pos + ox, base + ox);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

fn geom3(x: &Tensor, w: &Tensor) -> Result<(usize, usize, Geom3)> {
    let [b, c, d, h, wd] = dims5(x, "conv3d input")?;
    let [o, wc, k, k2, k3] = dims5(w, "conv3d kernel")?;
    if wc != c {
        return Err(Error::shape(format!(
            "conv3d: input has {c} channels, kernel expects {wc}"
        )));
    }
    if k != k2 || k != k3 {
        return Err(Error::shape("conv3d: only cubic kernels are supported"));
    }
    Ok((
        b,
        o,
        Geom3 {
            c,
            d,
            h,
            w: wd,
            k,
            od: conv_out_extent(d, k, 0)?,
            oh: conv_out_extent(h, k, 0)?,
            ow: conv_out_extent(wd, k, 0)?,
        },
    ))
}

/// Valid 3D cross-correlation: `x: (B, C, D, H, W)`, `w: (O, C, k, k, k)`.
pub fn conv3d(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let (b, o, g) = geom3(x, w)?;
    let (pl, p) = (g.patch_len(), g.positions());
    let in_len = g.c * g.d * g.h * g.w;
    let mut cols = vec![0.0; pl * p];
    let mut out = vec![0.0; b * o * p];
    for n in 0..b {
        let xs = &x.data()[n * in_len..(n + 1) * in_len];
        g.for_each_tap(|row, pos, src| cols[row + pos] = xs[src]);
        gemm_nn(
            o,
            pl,
            p,
            w.data(),
            &cols,
            &mut out[n * o * p..(n + 1) * o * p],
        );
    }
    Ok(Tensor::from_parts(vec![b, o, g.od, g.oh, g.ow], out))
}

pub fn conv3d_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (b, o, g) = geom3(x, w)?;
    let (pl, p) = (g.patch_len(), g.positions());
    let in_len = g.c * g.d * g.h * g.w;
    let mut cols = vec![0.0; pl * p];
    let mut dcols = vec![0.0; pl * p];
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    for n in 0..b {
        let xs = &x.data()[n * in_len..(n + 1) * in_len];
        let dys = &dy.data()[n * o * p..(n + 1) * o * p];
        g.for_each_tap(|row, pos, src| cols[row + pos] = xs[src]);
        gemm_nt(o, p, pl, dys, &cols, &mut dw);
        dcols.iter_mut().for_each(|v| *v = 0.0);
        gemm_tn(pl, o, p, w.data(), dys, &mut dcols);
        let dxs = &mut dx[n * in_len..(n + 1) * in_len];
        g.for_each_tap(|row, pos, src| dxs[src] += dcols[row + pos]);
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
    ))
}

fn depthwise_geom(x: &Tensor, w: &Tensor, pad: usize) -> Result<([usize; 4], usize, usize, usize)> {
    let dims = dims4(x, "depthwise input")?;
    let (c, k) = match *w.shape() {
        [c, k, k2] if k == k2 => (c, k),
        ref s => {
            return Err(Error::shape(format!(
                "depthwise kernel must be (C, k, k), got {s:?}"
            )))
        }
    };
    if c != dims[1] {
        return Err(Error::shape(format!(
            "depthwise: input has {} channels, kernel has {c}",
            dims[1]
        )));
    }
    let oh = conv_out_extent(dims[2], k, pad)?;
    let ow = conv_out_extent(dims[3], k, pad)?;
    Ok((dims, k, oh, ow))
}

/// Per-channel cross-correlation: `x: (B, C, H, W)`, `w: (C, k, k)`.
pub fn depthwise2d(x: &Tensor, w: &Tensor, pad: usize) -> Result<Tensor> {
    let ([b, c, h, wd], k, oh, ow) = depthwise_geom(x, w, pad)?;
    let mut out = vec![0.0; b * c * oh * ow];
    let xd = x.data();
    let wdat = w.data();
    for n in 0..b {
        for ch in 0..c {
            let xs = &xd[(n * c + ch) * h * wd..(n * c + ch + 1) * h * wd];
            let ks = &wdat[ch * k * k..(ch + 1) * k * k];
            let os = &mut out[(n * c + ch) * oh * ow..(n * c + ch + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ki in 0..k {
                        let iy = (oy + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox + kj) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            acc += ks[ki * k + kj] * xs[iy as usize * wd + ix as usize];
                        }
                    }
                    os[oy * ow + ox] = acc;
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, c, oh, ow], out))
}

pub fn depthwise2d_backward(
    x: &Tensor,
    w: &Tensor,
    pad: usize,
    dy: &Tensor,
) -> Result<(Tensor, Tensor)> {
    let ([b, c, h, wd], k, oh, ow) = depthwise_geom(x, w, pad)?;
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    for n in 0..b {
        for ch in 0..c {
            let plane = (n * c + ch) * h * wd;
            let oplane = (n * c + ch) * oh * ow;
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = dyd[oplane + oy * ow + ox];
                    if g == 0.0 {
                        continue;
                    }
                    for ki in 0..k {
                        let iy = (oy + ki) as isize - pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox + kj) as isize - pad as isize;
                            if ix < 0 || ix >= wd as isize {
                                continue;
                            }
                            let src = plane + iy as usize * wd + ix as usize;
                            dw[(ch * k + ki) * k + kj] += g * xd[src];
                            dx[src] += g * wdat[(ch * k + ki) * k + kj];
                        }
                    }
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
    ))
}

fn transposed_geom(x: &Tensor, w: &Tensor) -> Result<([usize; 4], usize, usize)> {
    let dims = dims4(x, "transposed conv input")?;
    let [ci, co, k, k2] = dims4(w, "transposed conv kernel")?;
    if k != k2 {
        return Err(Error::shape(
            "transposed conv: only square kernels are supported",
        ));
    }
    if ci != dims[1] {
        return Err(Error::shape(format!(
            "transposed conv: input has {} channels, kernel expects {ci}",
            dims[1]
        )));
    }
    Ok((dims, co, k))
}

/// Transposed convolution with stride equal to the kernel size, so every
/// input pixel scatters into its own non-overlapping `k × k` block.
/// `x: (B, Ci, H, W)`, `w: (Ci, Co, k, k)` → `(B, Co, kH, kW)`.
pub fn conv_transpose2d(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    let ([b, ci, h, wd], co, k) = transposed_geom(x, w)?;
    let (oh, ow) = (h * k, wd * k);
    let mut out = vec![0.0; b * co * oh * ow];
    let xd = x.data();
    let wdat = w.data();
    for n in 0..b {
        for i in 0..ci {
            for y in 0..h {
                for xx in 0..wd {
                    let v = xd[((n * ci + i) * h + y) * wd + xx];
                    for o in 0..co {
                        let ker = &wdat[(i * co + o) * k * k..(i * co + o + 1) * k * k];
                        let oplane = (n * co + o) * oh * ow;
                        for a in 0..k {
                            for bb in 0..k {
                                out[oplane + (y * k + a) * ow + xx * k + bb] += v * ker[a * k + bb];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_parts(vec![b, co, oh, ow], out))
}

pub fn conv_transpose2d_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let ([b, ci, h, wd], co, k) = transposed_geom(x, w)?;
    let (oh, ow) = (h * k, wd * k);
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    let xd = x.data();
    let wdat = w.data();
    let dyd = dy.data();
    for n in 0..b {
        for i in 0..ci {
            for y in 0..h {
                for xx in 0..wd {
                    let xi = ((n * ci + i) * h + y) * wd + xx;
                    let v = xd[xi];
                    let mut acc = 0.0;
                    for o in 0..co {
                        let kbase = (i * co + o) * k * k;
                        let oplane = (n * co + o) * oh * ow;
                        for a in 0..k {
                            for bb in 0..k {
                                let g = dyd[oplane + (y * k + a) * ow + xx * k + bb];
                                acc += g * wdat[kbase + a * k + bb];
                                dw[kbase + a * k + bb] += g * v;
                            }
                        }
                    }
                    dx[xi] = acc;
                }
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
    ))
}

/// Adds `bias[c]` to every element of channel `c` (axis 1).
pub fn add_channel_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (b, c, inner) = channel_layout(x)?;
    if bias.shape() != [c] {
        return Err(Error::shape(format!(
            "bias {:?} does not match {c} channels",
            bias.shape()
        )));
    }
    let mut out = x.data().to_vec();
    for n in 0..b {
        for ch in 0..c {
            let bv = bias.data()[ch];
            let base = (n * c + ch) * inner;
            out[base..base + inner].iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Sums `dy` over every axis except 1.
pub fn channel_sums(dy: &Tensor) -> Result<Tensor> {
    let (b, c, inner) = channel_layout(dy)?;
    let mut out = vec![0.0; c];
    for n in 0..b {
        for (ch, o) in out.iter_mut().enumerate() {
            let base = (n * c + ch) * inner;
            *o += dy.data()[base..base + inner].iter().sum::<f64>();
        }
    }
    Ok(Tensor::vector(out))
}

/// `(batch, channels, elements per channel per sample)`.
pub(crate) fn channel_layout(x: &Tensor) -> Result<(usize, usize, usize)> {
    if x.rank() < 2 {
        return Err(Error::shape(format!(
            "expected (B, C, ...), got {:?}",
            x.shape()
        )));
    }
    let s = x.shape();
    Ok((s[0], s[1], s[2..].iter().product()))
}

/// Per-channel statistics and normalized values from a training-mode batch
/// norm pass.
pub struct BatchNormForward {
    pub output: Tensor,
    pub normalized: Tensor,
    pub inv_std: Vec<f64>,
    pub mean: Vec<f64>,
    /// Biased (population) variance over batch and spatial positions.
    pub var: Vec<f64>,
}

fn check_affine(c: usize, gamma: &Tensor, beta: &Tensor) -> Result<()> {
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::shape(format!(
            "batch norm affine {:?}/{:?} does not match {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    Ok(())
}

/// Normalizes with statistics over batch and spatial positions.
pub fn batch_norm_train(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<BatchNormForward> {
    let (b, c, inner) = channel_layout(x)?;
    check_affine(c, gamma, beta)?;
    let count = (b * inner) as f64;
    let xd = x.data();
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for n in 0..b {
        for (ch, m) in mean.iter_mut().enumerate() {
            let base = (n * c + ch) * inner;
            *m += xd[base..base + inner].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * inner;
            var[ch] += xd[base..base + inner]
                .iter()
                .map(|v| (v - mean[ch]).powi(2))
                .sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * inner;
            let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
            for i in base..base + inner {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = g * h + bt;
            }
        }
    }
    Ok(BatchNormForward {
        output: Tensor::from_parts(x.shape().to_vec(), out),
        normalized: Tensor::from_parts(x.shape().to_vec(), xhat),
        inv_std,
        mean,
        var,
    })
}

/// Gradients of training-mode batch norm with respect to `(x, gamma, beta)`.
pub fn batch_norm_train_backward(
    normalized: &Tensor,
    inv_std: &[f64],
    gamma: &Tensor,
    dy: &Tensor,
) -> Result<(Tensor, Tensor, Tensor)> {
    let (b, c, inner) = channel_layout(normalized)?;
    let count = (b * inner) as f64;
    let xh = normalized.data();
    let dyd = dy.data();
    let mut dgamma = vec![0.0; c];
    let mut dbeta = vec![0.0; c];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * inner;
            for i in base..base + inner {
                dgamma[ch] += dyd[i] * xh[i];
                dbeta[ch] += dyd[i];
            }
        }
    }
    let mut dx = vec![0.0; normalized.numel()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * inner;
            let g = gamma.data()[ch];
            // dxhat = dy * gamma; sums of dxhat and dxhat*xhat are g*dbeta and g*dgamma
            let (sum_d, sum_dx) = (g * dbeta[ch], g * dgamma[ch]);
            for i in base..base + inner {
                let dxh = dyd[i] * g;
                dx[i] = inv_std[ch] / count * (count * dxh - sum_d - xh[i] * sum_dx);
            }
        }
    }
    Ok((
        Tensor::from_parts(normalized.shape().to_vec(), dx),
        Tensor::vector(dgamma),
        Tensor::vector(dbeta),
    ))
}

/// Inference-mode batch norm from fixed statistics. Returns the output and
/// the normalized input (needed for the gamma gradient).
pub fn batch_norm_eval(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<(Tensor, Tensor, Vec<f64>)> {
    let (b, c, inner) = channel_layout(x)?;
    check_affine(c, gamma, beta)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape(
            "batch norm running statistics do not match channels",
        ));
    }
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
    let xd = x.data();
    let mut xhat = vec![0.0; x.numel()];
    let mut out = vec![0.0; x.numel()];
    for n in 0..b {
        for ch in 0..c {
            let base = (n * c + ch) * inner;
            for i in base..base + inner {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gamma.data()[ch] * h + beta.data()[ch];
            }
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), out),
        Tensor::from_parts(x.shape().to_vec(), xhat),
        inv_std,
    ))
}

/// Softmax over the last axis.
pub fn softmax_last(x: &Tensor) -> Result<Tensor> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::shape("softmax of a scalar"))?;
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(n) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

pub fn softmax_last_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let n = *y.shape().last().expect("softmax output has rank >= 1");
    let mut dx = vec![0.0; y.numel()];
    for ((yr, dyr), dxr) in y
        .data()
        .chunks(n)
        .zip(dy.data().chunks(n))
        .zip(dx.chunks_mut(n))
    {
        let dot: f64 = yr.iter().zip(dyr).map(|(a, b)| a * b).sum();
        for ((d, &yv), &g) in dxr.iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - dot);
        }
    }
    Tensor::from_parts(y.shape().to_vec(), dx)
}

/// `(B, m, k) x (B, k, n) -> (B, m, n)`.
pub fn batch_matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (bs, m, k, n) = bmm_dims(a, b)?;
    let mut out = vec![0.0; bs * m * n];
    for i in 0..bs {
        gemm_nn(
            m,
            k,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
        );
    }
    Ok(Tensor::from_parts(vec![bs, m, n], out))
}

pub fn batch_matmul_backward(a: &Tensor, b: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor)> {
    let (bs, m, k, n) = bmm_dims(a, b)?;
    let mut da = vec![0.0; a.numel()];
    let mut db = vec![0.0; b.numel()];
    for i in 0..bs {
        let dys = &dy.data()[i * m * n..(i + 1) * m * n];
        gemm_nt(
            m,
            n,
            k,
            dys,
            &b.data()[i * k * n..(i + 1) * k * n],
            &mut da[i * m * k..(i + 1) * m * k],
        );
        gemm_tn(
            k,
            m,
            n,
            &a.data()[i * m * k..(i + 1) * m * k],
            dys,
            &mut db[i * k * n..(i + 1) * k * n],
        );
    }
    Ok((
        Tensor::from_parts(a.shape().to_vec(), da),
        Tensor::from_parts(b.shape().to_vec(), db),
    ))
}

fn bmm_dims(a: &Tensor, b: &Tensor) -> Result<(usize, usize, usize, usize)> {
    match (a.shape(), b.shape()) {
        (&[ba, m, k], &[bb, k2, n]) if ba == bb && k == k2 => Ok((ba, m, k, n)),
        (sa, sb) => Err(Error::shape(format!(
            "batch matmul: incompatible shapes {sa:?} and {sb:?}"
        ))),
    }
}

/// `y = x · wᵀ + b` with `x: (N, in)`, `w: (out, in)`.
pub fn linear(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<Tensor> {
    let (n, fan_in, out) = linear_dims(x, w, b)?;
    let mut y = vec![0.0; n * out];
    if let Some(b) = b {
        for row in y.chunks_mut(out) {
            row.copy_from_slice(b.data());
        }
    }
    gemm_nt(n, fan_in, out, x.data(), w.data(), &mut y);
    Ok(Tensor::from_parts(vec![n, out], y))
}

/// Returns `(dx, dw, db)`.
pub fn linear_backward(x: &Tensor, w: &Tensor, dy: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (n, fan_in, out) = linear_dims(x, w, None)?;
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    gemm_nn(n, out, fan_in, dy.data(), w.data(), &mut dx);
    gemm_tn(out, n, fan_in, dy.data(), x.data(), &mut dw);
    let mut db = vec![0.0; out];
    for row in dy.data().chunks(out) {
        for (d, g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok((
        Tensor::from_parts(x.shape().to_vec(), dx),
        Tensor::from_parts(w.shape().to_vec(), dw),
        Tensor::vector(db),
    ))
}

fn linear_dims(x: &Tensor, w: &Tensor, b: Option<&Tensor>) -> Result<(usize, usize, usize)> {
    let (n, fan_in) = match *x.shape() {
        [n, i] => (n, i),
        ref s => {
            return Err(Error::shape(format!(
                "linear input must be (N, in), got {s:?}"
            )))
        }
    };
    let out = match *w.shape() {
        [o, i] if i == fan_in => o,
        ref s => {
            return Err(Error::shape(format!(
                "linear weight {s:?} does not accept {fan_in} inputs"
            )))
        }
    };
    if let Some(b) = b {
        if b.shape() != [out] {
            return Err(Error::shape(format!(
                "linear bias {:?} expected [{out}]",
                b.shape()
            )));
        }
    }
    Ok((n, fan_in, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_extents() {
        let x = Tensor::zeros([1, 5, 4, 4]);
        let w = Tensor::zeros([32, 5, 3, 3]);
        assert_eq!(conv2d(&x, &w, 0).unwrap().shape(), &[1, 32, 2, 2]);
        assert_eq!(conv2d(&x, &w, 1).unwrap().shape(), &[1, 32, 4, 4]);
        let x3 = Tensor::zeros([2, 1, 5, 4, 4]);
        let w3 = Tensor::zeros([10, 1, 3, 3, 3]);
        assert_eq!(conv3d(&x3, &w3).unwrap().shape(), &[2, 10, 3, 2, 2]);
        let xt = Tensor::zeros([1, 7, 6, 6]);
        let wt = Tensor::zeros([7, 7, 2, 2]);
        assert_eq!(conv_transpose2d(&xt, &wt).unwrap().shape(), &[1, 7, 12, 12]);
        let dw = Tensor::zeros([5, 3, 3]);
        assert_eq!(depthwise2d(&x, &dw, 0).unwrap().shape(), &[1, 5, 2, 2]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros([1, 5, 2, 4]);
        assert!(matches!(
            conv2d(&x, &Tensor::zeros([3, 5, 3, 3]), 0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv2d(&x, &Tensor::zeros([3, 4, 1, 1]), 0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            depthwise2d(&x, &Tensor::zeros([4, 1, 1]), 0),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv3d(
                &Tensor::zeros([1, 1, 2, 3, 3]),
                &Tensor::zeros([1, 1, 3, 3, 3])
            ),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            conv_transpose2d(&x, &Tensor::zeros([4, 4, 2, 2])),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn single_pixel_scatter() {
        let x = Tensor::new([1, 1, 1, 1], vec![2.5]).unwrap();
        let w = Tensor::ones([1, 1, 2, 2]);
        assert_eq!(conv_transpose2d(&x, &w).unwrap().data(), &[2.5; 4]);
    }

    #[test]
    fn bias_and_channel_sums() {
        let x = Tensor::zeros([2, 3, 2]);
        let b = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let y = add_channel_bias(&x, &b).unwrap();
        assert_eq!(y.get(&[1, 2, 1]), 3.0);
        assert_eq!(channel_sums(&y).unwrap().data(), &[4.0, 8.0, 12.0]);
    }
}
