//! Naive nested-loop references for the convolution kernels, compared on
//! randomized small shapes, plus the adjoint identities that tie forward
//! and backward.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windcast::gradcheck::random_tensor;
use windcast::kernels::{
    conv2d, conv2d_backward, conv3d, conv3d_backward, conv_transpose2d, conv_transpose2d_backward,
    depthwise2d, depthwise2d_backward,
};
use windcast::Tensor;

pub const CASES: u64 = 100;
pub const FORWARD_TOL: f64 = 1e-12;
pub const ADJOINT_TOL: f64 = 1e-10;

/// Worst deviations over all cases of one kernel. `adjoint` is relative to
/// `max(1, |⟨Ax, y⟩|)`.
#[derive(Clone, Copy, Debug, Default)]
pub struct Deviation {
    pub forward: f64,
    pub adjoint: f64,
}

impl Deviation {
    pub fn passed(&self) -> bool {
        self.forward <= FORWARD_TOL && self.adjoint <= ADJOINT_TOL
    }

    fn forward(&mut self, got: &Tensor, want: &Tensor) {
        assert_eq!(got.shape(), want.shape());
        let worst = got
            .data()
            .iter()
            .zip(want.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        self.forward = self.forward.max(worst);
    }

    fn adjoint(&mut self, lhs: f64, rhs: f64) {
        self.adjoint = self.adjoint.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Reads `x[n][c][i][j]` with zero padding outside the input.
fn padded(x: &Tensor, n: usize, c: usize, i: isize, j: isize) -> f64 {
    let s = x.shape();
    if i < 0 || j < 0 || i >= s[2] as isize || j >= s[3] as isize {
        0.0
    } else {
        x.get(&[n, c, i as usize, j as usize])
    }
}

fn naive_conv2d(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (oh, ow) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
    let mut y = Tensor::zeros([b, o, oh, ow]);
    for n in 0..b {
        for f in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for a in 0..k {
                            for bb in 0..k {
                                let (si, sj) = (
                                    (i + a) as isize - pad as isize,
                                    (j + bb) as isize - pad as isize,
                                );
                                acc += padded(x, n, ch, si, sj) * w.get(&[f, ch, a, bb]);
                            }
                        }
                    }
                    y.set(&[n, f, i, j], acc);
                }
            }
        }
    }
    y
}

fn naive_depthwise(x: &Tensor, w: &Tensor, pad: usize) -> Tensor {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k = w.shape()[1];
    let (oh, ow) = (h + 2 * pad + 1 - k, wd + 2 * pad + 1 - k);
    let mut y = Tensor::zeros([b, c, oh, ow]);
    for n in 0..b {
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = 0.0;
                    for a in 0..k {
                        for bb in 0..k {
                            let (si, sj) = (
                                (i + a) as isize - pad as isize,
                                (j + bb) as isize - pad as isize,
                            );
                            acc += padded(x, n, ch, si, sj) * w.get(&[ch, a, bb]);
                        }
                    }
                    y.set(&[n, ch, i, j], acc);
                }
            }
        }
    }
    y
}

fn naive_pointwise(x: &Tensor, w: &Tensor) -> Tensor {
    let (b, c, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let o = w.shape()[0];
    let mut y = Tensor::zeros([b, o, h, wd]);
    for n in 0..b {
        for f in 0..o {
            for i in 0..h {
                for j in 0..wd {
                    let acc = (0..c)
                        .map(|ch| x.get(&[n, ch, i, j]) * w.get(&[f, ch, 0, 0]))
                        .sum();
                    y.set(&[n, f, i, j], acc);
                }
            }
        }
    }
    y
}

fn naive_conv3d(x: &Tensor, w: &Tensor) -> Tensor {
    let s = x.shape();
    let (b, c, d, h, wd) = (s[0], s[1], s[2], s[3], s[4]);
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let (od, oh, ow) = (d + 1 - k, h + 1 - k, wd + 1 - k);
    let mut y = Tensor::zeros([b, o, od, oh, ow]);
    for n in 0..b {
        for f in 0..o {
            for p in 0..od {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = 0.0;
                        for ch in 0..c {
                            for a in 0..k {
                                for bb in 0..k {
                                    for cc in 0..k {
                                        acc += x.get(&[n, ch, p + a, i + bb, j + cc])
                                            * w.get(&[f, ch, a, bb, cc]);
                                    }
                                }
                            }
                        }
                        y.set(&[n, f, p, i, j], acc);
                    }
                }
            }
        }
    }
    y
}

/// Scatter form: every input pixel adds `x · w[i, o]` into its own `k × k`
/// output block.
fn naive_transposed(x: &Tensor, w: &Tensor) -> Tensor {
    let (b, ci, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (co, k) = (w.shape()[1], w.shape()[2]);
    let mut y = Tensor::zeros([b, co, h * k, wd * k]);
    for n in 0..b {
        for i in 0..ci {
            for r in 0..h {
                for c in 0..wd {
                    for o in 0..co {
                        for a in 0..k {
                            for bb in 0..k {
                                let idx = [n, o, r * k + a, c * k + bb];
                                let v = y.get(&idx) + x.get(&[n, i, r, c]) * w.get(&[i, o, a, bb]);
                                y.set(&idx, v);
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

/// Stride-`k` convolution with the kernel read as `(Ci, Co, k, k)`: maps
/// `(B, Co, kH, kW)` back to `(B, Ci, H, W)`. This is the adjoint of the
/// transposed convolution, written independently of it.
fn naive_strided_conv(y: &Tensor, w: &Tensor) -> Tensor {
    let (b, co, oh, ow) = (y.shape()[0], y.shape()[1], y.shape()[2], y.shape()[3]);
    let (ci, k) = (w.shape()[0], w.shape()[2]);
    let (h, wd) = (oh / k, ow / k);
    let mut x = Tensor::zeros([b, ci, h, wd]);
    for n in 0..b {
        for i in 0..ci {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = 0.0;
                    for o in 0..co {
                        for a in 0..k {
                            for bb in 0..k {
                                acc +=
                                    y.get(&[n, o, r * k + a, c * k + bb]) * w.get(&[i, o, a, bb]);
                            }
                        }
                    }
                    x.set(&[n, i, r, c], acc);
                }
            }
        }
    }
    x
}

fn rng(salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xC0FFEE ^ salt)
}

pub fn conv2d_cases() -> Deviation {
    let mut r = rng(1);
    let mut dev = Deviation::default();
    for case in 0..CASES {
        let (b, c, o, k) = (
            r.random_range(1..=3),
            r.random_range(1..=4),
            r.random_range(1..=4),
            r.random_range(1..=3),
        );
        let pad = r.random_range(0..=1);
        let (h, w) = (r.random_range(k..=7), r.random_range(k..=7));
        let x = random_tensor(&[b, c, h, w], case, 1.0);
        let wt = random_tensor(&[o, c, k, k], 1000 + case, 1.0);
        let y = conv2d(&x, &wt, pad).unwrap();
        dev.forward(&y, &naive_conv2d(&x, &wt, pad));

        // the backward pass is the adjoint of the forward map
        let dy = random_tensor(y.shape(), 2000 + case, 1.0);
        let (dx, dw) = conv2d_backward(&x, &wt, pad, &dy).unwrap();
        let lhs = dot(&y, &dy);
        dev.adjoint(lhs, dot(&x, &dx));
        dev.adjoint(lhs, dot(&wt, &dw));
    }
    dev
}

pub fn depthwise_cases() -> Deviation {
    let mut r = rng(2);
    let mut dev = Deviation::default();
    for case in 0..CASES {
        let (b, c, k) = (
            r.random_range(1..=3),
            r.random_range(1..=5),
            r.random_range(1..=3),
        );
        let pad = r.random_range(0..=1);
        let (h, w) = (r.random_range(k..=7), r.random_range(k..=7));
        let x = random_tensor(&[b, c, h, w], case, 1.0);
        let wt = random_tensor(&[c, k, k], 1000 + case, 1.0);
        let y = depthwise2d(&x, &wt, pad).unwrap();
        dev.forward(&y, &naive_depthwise(&x, &wt, pad));

        let dy = random_tensor(y.shape(), 2000 + case, 1.0);
        let (dx, dw) = depthwise2d_backward(&x, &wt, pad, &dy).unwrap();
        let lhs = dot(&y, &dy);
        dev.adjoint(lhs, dot(&x, &dx));
        dev.adjoint(lhs, dot(&wt, &dw));
    }
    dev
}

pub fn pointwise_cases() -> Deviation {
    let mut r = rng(3);
    let mut dev = Deviation::default();
    for case in 0..CASES {
        let (b, c, o) = (
            r.random_range(1..=3),
            r.random_range(1..=6),
            r.random_range(1..=6),
        );
        let (h, w) = (r.random_range(1..=6), r.random_range(1..=6));
        let x = random_tensor(&[b, c, h, w], case, 1.0);
        let wt = random_tensor(&[o, c, 1, 1], 1000 + case, 1.0);
        dev.forward(&conv2d(&x, &wt, 0).unwrap(), &naive_pointwise(&x, &wt));
    }
    dev
}

pub fn conv3d_cases() -> Deviation {
    let mut r = rng(4);
    let mut dev = Deviation::default();
    for case in 0..CASES {
        let (b, c, o, k) = (
            r.random_range(1..=2),
            r.random_range(1..=3),
            r.random_range(1..=3),
            r.random_range(1..=3),
        );
        let (d, h, w) = (
            r.random_range(k..=5),
            r.random_range(k..=5),
            r.random_range(k..=5),
        );
        let x = random_tensor(&[b, c, d, h, w], case, 1.0);
        let wt = random_tensor(&[o, c, k, k, k], 1000 + case, 1.0);
        let y = conv3d(&x, &wt).unwrap();
        dev.forward(&y, &naive_conv3d(&x, &wt));

        let dy = random_tensor(y.shape(), 2000 + case, 1.0);
        let (dx, dw) = conv3d_backward(&x, &wt, &dy).unwrap();
        let lhs = dot(&y, &dy);
        dev.adjoint(lhs, dot(&x, &dx));
        dev.adjoint(lhs, dot(&wt, &dw));
    }
    dev
}

/// Forward against the scatter reference; `⟨Tx, y⟩ = ⟨x, T*y⟩` with `T*`
/// the independent strided convolution; the input gradient against `T*`.
pub fn transposed_cases() -> Deviation {
    let mut r = rng(5);
    let mut dev = Deviation::default();
    for case in 0..CASES {
        let (b, ci, co, k) = (
            r.random_range(1..=3),
            r.random_range(1..=4),
            r.random_range(1..=4),
            r.random_range(1..=3),
        );
        let (h, w) = (r.random_range(1..=5), r.random_range(1..=5));
        let x = random_tensor(&[b, ci, h, w], case, 1.0);
        let wt = random_tensor(&[ci, co, k, k], 1000 + case, 1.0);
        let tx = conv_transpose2d(&x, &wt).unwrap();
        dev.forward(&tx, &naive_transposed(&x, &wt));

        let y = random_tensor(tx.shape(), 2000 + case, 1.0);
        let adj = naive_strided_conv(&y, &wt);
        dev.adjoint(dot(&tx, &y), dot(&x, &adj));
        let (dx, _) = conv_transpose2d_backward(&x, &wt, &y).unwrap();
        dev.forward(&dx, &adj);
    }
    dev
}
