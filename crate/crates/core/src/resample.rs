//! Separable bilinear resampling with half-pixel centers.
//!
//! The weight tables are exposed so callers that need the adjoint (the
//! refiner's backward pass) can reuse exactly the same interpolation.

/// Per output index, the contributing `(source index, weight)` pairs. Weights sum to 1.
pub fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let x = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let x0 = (x.floor() as usize).min(src - 1);
            let x1 = (x0 + 1).min(src - 1);
            let t = x - x0 as f64;
            if x1 == x0 || t == 0.0 {
                vec![(x0, 1.0)]
            } else {
                vec![(x0, 1.0 - t), (x1, t)]
            }
        })
        .collect()
}

/// Resizes a single row-major plane.
pub fn resize_plane(src: &[f64], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f64> {
    if (sh, sw) == (dh, dw) {
        return src.to_vec();
    }
    let rows = axis_weights(sh, dh);
    let cols = axis_weights(sw, dw);
    let mut out = Vec::with_capacity(dh * dw);
    for rw in &rows {
        for cw in &cols {
            let mut acc = 0.0;
            for &(r, wr) in rw {
                for &(c, wc) in cw {
                    acc += wr * wc * src[r * sw + c];
                }
            }
            out.push(acc);
        }
    }
    out
}
