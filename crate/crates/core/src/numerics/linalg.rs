//! Dense kernels backing the tape: GEMM and 3×3 "same" im2col/col2im.

/// `c = a' · b' + beta · c` on row-major buffers, where `a'` is `a` ([m,k])
/// or its transpose (stored [k,m]) and likewise for `b'` ([k,n] or stored [n,k]).
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    trans_a: bool,
    b: &[f64],
    trans_b: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index the kernel touches given
    // these strides; `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Unfolds `x` laid out as [channels, plane, h, w] into [channels·9, plane·h·w].
pub fn im2col(x: &[f64], channels: usize, planes: usize, h: usize, w: usize) -> Vec<f64> {
    let p = planes * h * w;
    let mut cols = vec![0.0; channels * 9 * p];
    for c in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * p..][..p];
                for b in 0..planes {
                    let src = &x[(c * planes + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let dst = &mut row[(b * h + y) * w..][..w];
                        let srow = &src[sy as usize * w..][..w];
                        match kx {
                            0 => dst[1..].copy_from_slice(&srow[..w - 1]),
                            1 => dst.copy_from_slice(srow),
                            _ => dst[..w - 1].copy_from_slice(&srow[1..]),
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx`.
pub fn col2im(cols: &[f64], dx: &mut [f64], channels: usize, planes: usize, h: usize, w: usize) {
    let p = planes * h * w;
    for c in 0..channels {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * p..][..p];
                for b in 0..planes {
                    let dst = &mut dx[(c * planes + b) * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src = &row[(b * h + y) * w..][..w];
                        let drow = &mut dst[sy as usize * w..][..w];
                        let (d, s) = match kx {
                            0 => (&mut drow[..w - 1], &src[1..]),
                            1 => (&mut drow[..], &src[..]),
                            _ => (&mut drow[1..], &src[..w - 1]),
                        };
                        for (a, b) in d.iter_mut().zip(s) {
                            *a += b;
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposes() {
        // a = [[1,2],[3,4]], b = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 0.0, &mut c);
        assert_eq!(c, [17.0, 23.0, 39.0, 53.0]);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, b, h, w) = (2, 2, 3, 4);
        let x: Vec<f64> = (0..c * b * h * w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..c * 9 * b * h * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, c, b, h, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut dx = vec![0.0; x.len()];
        col2im(&y, &mut dx, c, b, h, w);
        let rhs: f64 = dx.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }
}
