//! Dense kernels on row-major slices.

/// Four-lane dot product; the fixed lane split keeps results bit-reproducible.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let cb = b.chunks_exact(4);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `out = W x + b` with `W` of shape (out.len(), x.len()).
pub fn affine(w: &[f64], b: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, (row, bias)) in out.iter_mut().zip(w.chunks_exact(cols).zip(b)) {
        *o = dot(row, x) + bias;
    }
}

/// `dW += dy x^T`, `db += dy`.
pub fn accumulate_outer(dy: &[f64], x: &[f64], dw: &mut [f64], db: &mut [f64]) {
    let cols = x.len();
    for ((g, row), bg) in dy.iter().zip(dw.chunks_exact_mut(cols)).zip(db.iter_mut()) {
        if *g != 0.0 {
            axpy(*g, x, row);
            *bg += g;
        }
    }
}

/// `dx += W^T dy`.
pub fn accumulate_transpose(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (g, row) in dy.iter().zip(w.chunks_exact(cols)) {
        if *g != 0.0 {
            axpy(*g, row, dx);
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_and_transpose_agree_with_naive() {
        let w: Vec<f64> = (0..15).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b = [1.0, -1.0, 0.5];
        let x = [0.3, -0.2, 1.0, 2.0, -1.5];
        let mut out = [0.0; 3];
        affine(&w, &b, &x, &mut out);
        for r in 0..3 {
            let naive: f64 = (0..5).map(|c| w[r * 5 + c] * x[c]).sum::<f64>() + b[r];
            assert!((out[r] - naive).abs() < 1e-12);
        }
        let dy = [0.1, -0.4, 2.0];
        let mut dx = [0.0; 5];
        accumulate_transpose(&w, &dy, &mut dx);
        for c in 0..5 {
            let naive: f64 = (0..3).map(|r| w[r * 5 + c] * dy[r]).sum();
            assert!((dx[c] - naive).abs() < 1e-12);
        }
    }
}
