//! Dense CHW tensors and the handful of layers the refiner needs, each with
//! an explicit backward pass. Convolutions use zero "same" padding.

use polypaug_core::resample::axis_weights;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), c * h * w, "tensor data length");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn plane(&self, k: usize) -> &[f64] {
        &self.data[k * self.hw()..(k + 1) * self.hw()]
    }

    pub fn plane_mut(&mut self, k: usize) -> &mut [f64] {
        let hw = self.hw();
        &mut self.data[k * hw..(k + 1) * hw]
    }

    pub fn get(&self, k: usize, r: usize, c: usize) -> f64 {
        self.data[(k * self.h + r) * self.w + c]
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!((self.c, self.h, self.w), (other.c, other.h, other.w));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    /// Stacks the channels of `a` then `b`.
    pub fn concat(a: &Tensor, b: &Tensor) -> Tensor {
        assert_eq!((a.h, a.w), (b.h, b.w));
        let mut data = a.data.clone();
        data.extend_from_slice(&b.data);
        Tensor::from_vec(a.c + b.c, a.h, a.w, data)
    }

    pub fn split_channels(&self, first: usize) -> (Tensor, Tensor) {
        let cut = first * self.hw();
        (
            Tensor::from_vec(first, self.h, self.w, self.data[..cut].to_vec()),
            Tensor::from_vec(self.c - first, self.h, self.w, self.data[cut..].to_vec()),
        )
    }
}

/// Row and column ranges for a kernel tap at offset `d` over an axis of length `n`.
fn tap_range(n: usize, d: i64) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (n as i64 - d.max(0)).max(0) as usize;
    (lo.min(n), hi.max(lo.min(n)))
}

/// `weight` is `[cout, cin, k, k]`, `bias` is `[cout]`.
pub fn conv2d(x: &Tensor, weight: &[f64], bias: &[f64], cout: usize, k: usize) -> Tensor {
    let cin = x.c;
    debug_assert_eq!(weight.len(), cout * cin * k * k);
    let (h, w) = (x.h, x.w);
    let p = (k / 2) as i64;
    let mut out = Tensor::zeros(cout, h, w);
    for co in 0..cout {
        let o = out.plane_mut(co);
        o.fill(bias[co]);
        for ci in 0..cin {
            let src = x.plane(ci);
            for ky in 0..k {
                let dy = ky as i64 - p;
                let (r0, r1) = tap_range(h, dy);
                for kx in 0..k {
                    let dx = kx as i64 - p;
                    let (c0, c1) = tap_range(w, dx);
                    let wv = weight[((co * cin + ci) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for r in r0..r1 {
                        let sr = (r as i64 + dy) as usize;
                        let orow = &mut o[r * w + c0..r * w + c1];
                        let srow = &src[sr * w + (c0 as i64 + dx) as usize..sr * w + (c1 as i64 + dx) as usize];
                        for (a, b) in orow.iter_mut().zip(srow) {
                            *a += wv * b;
                        }
                    }
                }
            }
        }
    }
    out
}

/// Accumulates weight and bias gradients; returns the input gradient when asked.
pub fn conv2d_backward(
    x: &Tensor,
    weight: &[f64],
    k: usize,
    dy: &Tensor,
    dweight: &mut [f64],
    dbias: &mut [f64],
    need_dx: bool,
) -> Option<Tensor> {
    let (cin, cout) = (x.c, dy.c);
    let (h, w) = (x.h, x.w);
    let p = (k / 2) as i64;
    let mut dx_t = need_dx.then(|| Tensor::zeros(cin, h, w));
    for co in 0..cout {
        let g = dy.plane(co);
        dbias[co] += g.iter().sum::<f64>();
        for ci in 0..cin {
            let src = x.plane(ci);
            for ky in 0..k {
                let dyo = ky as i64 - p;
                let (r0, r1) = tap_range(h, dyo);
                for kx in 0..k {
                    let dxo = kx as i64 - p;
                    let (c0, c1) = tap_range(w, dxo);
                    let wi = ((co * cin + ci) * k + ky) * k + kx;
                    let wv = weight[wi];
                    let mut acc = 0.0;
                    for r in r0..r1 {
                        let sr = (r as i64 + dyo) as usize;
                        let s0 = sr * w + (c0 as i64 + dxo) as usize;
                        let grow = &g[r * w + c0..r * w + c1];
                        let srow = &src[s0..s0 + (c1 - c0)];
                        for (a, b) in grow.iter().zip(srow) {
                            acc += a * b;
                        }
                        if let Some(dx) = dx_t.as_mut() {
                            let drow = &mut dx.plane_mut(ci)[s0..s0 + (c1 - c0)];
                            for (d, a) in drow.iter_mut().zip(grow) {
                                *d += wv * a;
                            }
                        }
                    }
                    dweight[wi] += acc;
                }
            }
        }
    }
    dx_t
}

pub fn relu(x: &Tensor) -> Tensor {
    Tensor::from_vec(x.c, x.h, x.w, x.data.iter().map(|&v| v.max(0.0)).collect())
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(y: &Tensor, dy: &Tensor) -> Tensor {
    let data = y.data.iter().zip(&dy.data).map(|(&o, &g)| if o > 0.0 { g } else { 0.0 }).collect();
    Tensor::from_vec(y.c, y.h, y.w, data)
}

/// Non-overlapping mean pooling by `f`; dimensions must be divisible.
pub fn avg_pool(x: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return x.clone();
    }
    let (h, w) = (x.h / f, x.w / f);
    let mut out = Tensor::zeros(x.c, h, w);
    let norm = 1.0 / (f * f) as f64;
    for k in 0..x.c {
        let src = x.plane(k);
        let dst = out.plane_mut(k);
        for r in 0..x.h {
            for c in 0..x.w {
                dst[(r / f) * w + c / f] += src[r * x.w + c];
            }
        }
        dst.iter_mut().for_each(|v| *v *= norm);
    }
    out
}

pub fn avg_pool_backward(dy: &Tensor, f: usize) -> Tensor {
    if f == 1 {
        return dy.clone();
    }
    let (h, w) = (dy.h * f, dy.w * f);
    let norm = 1.0 / (f * f) as f64;
    let mut out = Tensor::zeros(dy.c, h, w);
    for k in 0..dy.c {
        let g = dy.plane(k);
        let dst = out.plane_mut(k);
        for r in 0..h {
            for c in 0..w {
                dst[r * w + c] = g[(r / f) * dy.w + c / f] * norm;
            }
        }
    }
    out
}

/// Separable bilinear resize with half-pixel centers.
pub fn upsample(x: &Tensor, h: usize, w: usize) -> Tensor {
    if (x.h, x.w) == (h, w) {
        return x.clone();
    }
    let rows = axis_weights(x.h, h);
    let cols = axis_weights(x.w, w);
    let mut out = Tensor::zeros(x.c, h, w);
    let mut tmp = vec![0.0; h * x.w];
    for k in 0..x.c {
        let src = x.plane(k);
        tmp.fill(0.0);
        for (r, taps) in rows.iter().enumerate() {
            for &(sr, wt) in taps {
                for c in 0..x.w {
                    tmp[r * x.w + c] += wt * src[sr * x.w + c];
                }
            }
        }
        let dst = out.plane_mut(k);
        for r in 0..h {
            for (c, taps) in cols.iter().enumerate() {
                dst[r * w + c] = taps.iter().map(|&(sc, wt)| wt * tmp[r * x.w + sc]).sum();
            }
        }
    }
    out
}

/// Transpose of [`upsample`] from `(h, w)` back to the source grid.
pub fn upsample_backward(dy: &Tensor, h: usize, w: usize) -> Tensor {
    if (dy.h, dy.w) == (h, w) {
        return dy.clone();
    }
    let rows = axis_weights(h, dy.h);
    let cols = axis_weights(w, dy.w);
    let mut out = Tensor::zeros(dy.c, h, w);
    let mut tmp = vec![0.0; dy.h * w];
    for k in 0..dy.c {
        let g = dy.plane(k);
        tmp.fill(0.0);
        for r in 0..dy.h {
            for (c, taps) in cols.iter().enumerate() {
                let v = g[r * dy.w + c];
                for &(sc, wt) in taps {
                    tmp[r * w + sc] += wt * v;
                }
            }
        }
        let dst = out.plane_mut(k);
        for (r, taps) in rows.iter().enumerate() {
            for &(sr, wt) in taps {
                for c in 0..w {
                    dst[sr * w + c] += wt * tmp[r * w + c];
                }
            }
        }
    }
    out
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}
