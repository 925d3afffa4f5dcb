//! Dense symmetric-positive-definite kernels on row-major `n x n` buffers.

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s: f64 = acc.iter().sum();
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

/// Overwrites the lower triangle of `a` with its Cholesky factor `L`.
/// Only the lower triangle of `a` is read. Returns the failing pivot on
/// loss of positive definiteness.
pub(crate) fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<(), usize> {
    debug_assert_eq!(a.len(), n * n);
    let mut pivot_row = vec![0.0; n];
    for j in 0..n {
        let row = &a[j * n..j * n + j];
        let d = a[j * n + j] - dot(row, row);
        if !(d > 0.0) || !d.is_finite() {
            return Err(j);
        }
        let d = d.sqrt();
        a[j * n + j] = d;
        pivot_row[..j].copy_from_slice(&a[j * n..j * n + j]);
        let lj = &pivot_row[..j];
        let inv = 1.0 / d;
        for i in j + 1..n {
            let ri = &mut a[i * n..i * n + j + 1];
            ri[j] = (ri[j] - dot(&ri[..j], lj)) * inv;
        }
    }
    Ok(())
}

/// Solves `L x = b` in place for lower-triangular `L`.
pub(crate) fn solve_lower_in_place(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = (b[i] - s) / l[i * n + i];
    }
}

/// `sum(log(diag(L)))`, i.e. half the log-determinant of `L L^T`.
pub(crate) fn half_log_det(l: &[f64], n: usize) -> f64 {
    (0..n).map(|i| l[i * n + i].ln()).sum()
}
