// Row-major dense kernels. Shapes are checked by callers.

/// `out += a (m x k) * b (k x n)`.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    // row strides: a is k, b is n; b^T / a^T variants below only swap strides
    gemm_acc(a, (k, 1), b, (n, 1), out, m, k, n);
}

pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    matmul_acc(a, b, &mut out, m, k, n);
    out
}

/// `out += a (m x k) * b^T` where `b` is `n x k`.
pub fn matmul_nt_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(a, (k, 1), b, (1, k), out, m, k, n);
}

/// `out += a^T * b` where `a` is `m x k` and `b` is `m x n`; `out` is `k x n`.
pub fn matmul_tn_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    gemm_acc(a, (1, k), b, (n, 1), out, k, m, n);
}

/// Direct loops for vector-shaped products, where packing for the blocked kernel costs more than the arithmetic.
#[allow(clippy::too_many_arguments)]
fn thin_acc(a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), out: &mut [f64], m: usize, k: usize, n: usize) {
    let at = |i: usize, p: usize| a[i * sa.0 + p * sa.1];
    let bt = |p: usize, j: usize| b[p * sb.0 + j * sb.1];
    if sb.1 == 1 {
        // rows of B are contiguous: accumulate scaled rows
        for i in 0..m {
            let o = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let s = at(i, p);
                let row = &b[p * sb.0..p * sb.0 + n];
                for (x, &y) in o.iter_mut().zip(row) {
                    *x += s * y;
                }
            }
        }
    } else if sa.1 == 1 && sb.0 == 1 {
        for i in 0..m {
            let ar = &a[i * sa.0..i * sa.0 + k];
            for j in 0..n {
                out[i * n + j] += dot(ar, &b[j * sb.1..j * sb.1 + k]);
            }
        }
    } else {
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += at(i, p) * bt(p, j);
                }
                out[i * n + j] += s;
            }
        }
    }
}

/// `out (m x n) += A (m x k) * B (k x n)` with `(row, col)` element strides for A and B.
#[allow(clippy::too_many_arguments)]
fn gemm_acc(a: &[f64], sa: (usize, usize), b: &[f64], sb: (usize, usize), out: &mut [f64], m: usize, k: usize, n: usize) {
    if m == 0 || k == 0 || n == 0 {
        return;
    }
    assert!(a.len() >= (m - 1) * sa.0 + (k - 1) * sa.1 + 1);
    assert!(b.len() >= (k - 1) * sb.0 + (n - 1) * sb.1 + 1);
    assert!(out.len() >= m * n);
    if m == 1 || n == 1 || k == 1 {
        return thin_acc(a, sa, b, sb, out, m, k, n);
    }
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            1.0,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorize without reassociation flags
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Column sums of an `m x n` matrix added into `out` (length `n`).
pub fn col_sum_acc(a: &[f64], out: &mut [f64], m: usize, n: usize) {
    for i in 0..m {
        add_assign(out, &a[i * n..(i + 1) * n]);
    }
}

pub fn transpose(a: &[f64], m: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a[i * n + j];
        }
    }
    out
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_variants_agree() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [1.0, 0.0, -1.0, 2.0, 0.5, 1.0]; // 3x2
        let ab = matmul(&a, &b, 2, 3, 2);
        assert_eq!(ab, vec![0.5, 7.0, 2.0, 16.0]);

        let bt = transpose(&b, 3, 2);
        let mut ab2 = vec![0.0; 4];
        matmul_nt_acc(&a, &bt, &mut ab2, 2, 3, 2);
        assert_eq!(ab, ab2);

        let at = transpose(&a, 2, 3);
        let mut ab3 = vec![0.0; 4];
        matmul_tn_acc(&at, &b, &mut ab3, 3, 2, 2);
        assert_eq!(ab, ab3);
    }

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        out
    }

    #[test]
    fn all_layouts_match_naive_product_on_thin_and_blocked_shapes() {
        let val = |i: usize| ((i * 37 % 101) as f64 - 50.0) / 25.0;
        for &(m, k, n) in &[(1, 7, 5), (6, 1, 4), (5, 9, 1), (1, 1, 1), (13, 17, 11), (64, 32, 32)] {
            let a: Vec<f64> = (0..m * k).map(val).collect();
            let b: Vec<f64> = (0..k * n).map(|i| val(i + 3)).collect();
            let want = naive(&a, &b, m, k, n);
            let close = |got: &[f64]| got.iter().zip(&want).all(|(x, y)| (x - y).abs() < 1e-12);
            assert!(close(&matmul(&a, &b, m, k, n)), "nn {m}x{k}x{n}");
            let mut nt = vec![0.0; m * n];
            matmul_nt_acc(&a, &transpose(&b, k, n), &mut nt, m, k, n);
            assert!(close(&nt), "nt {m}x{k}x{n}");
            let mut tn = vec![0.0; m * n];
            matmul_tn_acc(&transpose(&a, m, k), &b, &mut tn, k, m, n);
            assert!(close(&tn), "tn {m}x{k}x{n}");
        }
    }

    #[test]
    fn softplus_is_stable() {
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((softplus(800.0) - 800.0).abs() < 1e-12);
        assert!(softplus(-800.0) >= 0.0);
    }
}
