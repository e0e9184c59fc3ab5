//! Small dense-vector helpers shared across the crate.
//!
//! Every reduction here runs in ascending index order so that results are
//! bit-reproducible across runs and thread counts.

/// Inner product.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "dot: length mismatch");
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Squared Euclidean norm.
pub fn l2_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

/// Infinity norm; 0 for the empty slice.
pub fn linf(a: &[f64]) -> f64 {
    a.iter().fold(0.0_f64, |m, &x| m.max(x.abs()))
}

/// `y += alpha * x`.
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    assert_eq!(x.len(), y.len(), "axpy: length mismatch");
    for i in 0..x.len() {
        y[i] += alpha * x[i];
    }
}

/// `a *= s` elementwise.
pub fn scale(a: &mut [f64], s: f64) {
    for v in a {
        *v *= s;
    }
}

/// Moving-average / momentum update: `dst = keep * dst + mix * src`.
///
/// At `keep = 0.0` the old value is discarded exactly, so a unit mixing
/// coefficient reproduces `src` bit-for-bit (modulo the sign of zero).
pub fn lerp_into(dst: &mut [f64], keep: f64, mix: f64, src: &[f64]) {
    assert_eq!(dst.len(), src.len(), "lerp_into: length mismatch");
    for i in 0..dst.len() {
        dst[i] = keep * dst[i] + mix * src[i];
    }
}

/// Dense symmetric matrix-vector product; `a` is `n x n` row-major.
pub fn matvec(a: &[f64], n: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), n * n, "matvec: matrix shape mismatch");
    assert_eq!(x.len(), n, "matvec: vector length mismatch");
    let mut out = vec![0.0; n];
    for i in 0..n {
        out[i] = dot(&a[i * n..(i + 1) * n], x);
    }
    out
}
