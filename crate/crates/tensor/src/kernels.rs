//! Raw numeric kernels over row-major slices.

/// `c = beta * c + op(a) * op(b)` where `op(a)` is `m x k` and `op(b)` is `k x n`.
///
/// With `trans_a` the slice `a` holds a row-major `k x m` matrix, and likewise
/// `trans_b` means `b` holds `n x k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    let (rsa, csa) = if trans_a { (1, m) } else { (k, 1) };
    let (rsb, csb) = if trans_b { (1, k) } else { (n, 1) };
    // SAFETY: the asserted slice lengths cover every index reachable from the
    // given extents and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds a `t_in x c_in` signal into `t_out x (k * c_in)` patches.
pub(crate) fn im2col(
    x: &[f64],
    t_in: usize,
    c_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) -> Vec<f64> {
    let width = kernel * c_in;
    let mut cols = vec![0.0; t_out * width];
    for t in 0..t_out {
        for k in 0..kernel {
            let src = (t * stride + k) as isize - padding as isize;
            if src < 0 || src as usize >= t_in {
                continue;
            }
            let src = src as usize;
            let dst = t * width + k * c_in;
            cols[dst..dst + c_in].copy_from_slice(&x[src * c_in..(src + 1) * c_in]);
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters patch gradients back onto the signal.
#[allow(clippy::too_many_arguments)]
pub(crate) fn col2im_add(
    dcols: &[f64],
    dx: &mut [f64],
    t_in: usize,
    c_in: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    t_out: usize,
) {
    let width = kernel * c_in;
    for t in 0..t_out {
        for k in 0..kernel {
            let src = (t * stride + k) as isize - padding as isize;
            if src < 0 || src as usize >= t_in {
                continue;
            }
            let src = src as usize;
            let row = &dcols[t * width + k * c_in..t * width + (k + 1) * c_in];
            for (d, g) in dx[src * c_in..(src + 1) * c_in].iter_mut().zip(row) {
                *d += g;
            }
        }
    }
}
