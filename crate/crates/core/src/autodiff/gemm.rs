//! Thin safe wrapper over `matrixmultiply::dgemm` for row-major slices.

/// Row-major matrix view: `rows x cols` with row stride `ld`, optionally
/// read transposed.
#[derive(Clone, Copy)]
pub(crate) struct Mat<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub ld: usize,
    pub trans: bool,
}

impl<'a> Mat<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, ld: usize) -> Self {
        assert!(ld >= cols && (rows == 0 || data.len() >= (rows - 1) * ld + cols));
        Self {
            data,
            rows,
            cols,
            ld,
            trans: false,
        }
    }

    pub fn t(self) -> Self {
        Self {
            trans: !self.trans,
            ..self
        }
    }

    /// Logical `(rows, cols)` after the optional transpose.
    fn dims(&self) -> (usize, usize) {
        if self.trans {
            (self.cols, self.rows)
        } else {
            (self.rows, self.cols)
        }
    }

    fn strides(&self) -> (isize, isize) {
        if self.trans {
            (1, self.ld as isize)
        } else {
            (self.ld as isize, 1)
        }
    }
}

/// `c = beta * c + a * b` where `c` is row-major `m x n`.
pub(crate) fn gemm(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], beta: f64) {
    let n = b.dims().1;
    gemm_ld(a, b, c, n, beta);
}

/// As [`gemm`] with row stride `ldc` for `c`.
pub(crate) fn gemm_ld(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], ldc: usize, beta: f64) {
    gemm_strided(a, b, c, (ldc as isize, 1), beta);
}

/// `c = beta * c + (a * b)^T`, i.e. the product is stored column-major.
pub(crate) fn gemm_ct(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], beta: f64) {
    let m = a.dims().0;
    gemm_strided(a, b, c, (1, m as isize), beta);
}

fn gemm_strided(a: Mat<'_>, b: Mat<'_>, c: &mut [f64], (rsc, csc): (isize, isize), beta: f64) {
    let (m, k) = a.dims();
    let (k2, n) = b.dims();
    assert_eq!(k, k2, "gemm inner dimensions");
    if m == 0 || n == 0 {
        return;
    }
    let at = |i: usize, j: usize| i as isize * rsc + j as isize * csc;
    let (rsc_ok, csc_ok) = (rsc >= n as isize || rsc == 1, csc >= 1);
    assert!(rsc_ok && csc_ok && c.len() as isize > at(m - 1, n - 1));
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[at(i, j) as usize] *= beta;
            }
        }
        return;
    }
    let (rsa, csa) = a.strides();
    let (rsb, csb) = b.strides();
    // SAFETY: the asserts above and the `Mat` constructors guarantee every
    // index reached through these strides lies inside the borrowed slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                c[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
            }
        }
        c
    }

    #[test]
    fn transposes() {
        let a: Vec<f64> = (0..6).map(f64::from).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| f64::from(v) * 0.5).collect(); // 3x4
        let mut c = vec![0.0; 8];
        gemm(Mat::new(&a, 2, 3), Mat::new(&b, 3, 4), &mut c, 0.0);
        assert_eq!(c, naive(&a, &b, 2, 3, 4));

        // (aT)T b with a stored as 3x2
        let at: Vec<f64> = vec![0.0, 3.0, 1.0, 4.0, 2.0, 5.0];
        let mut c2 = vec![1.0; 8];
        gemm(Mat::new(&at, 3, 2).t(), Mat::new(&b, 3, 4), &mut c2, 1.0);
        let want: Vec<f64> = naive(&a, &b, 2, 3, 4).iter().map(|v| v + 1.0).collect();
        assert_eq!(c2, want);
    }

    #[test]
    fn strided_output_and_operands() {
        // a is the left 2x3 block of a 2x5 buffer, c the left 2x4 block of 2x6
        let buf: Vec<f64> = (0..10).map(f64::from).collect();
        let a: Vec<f64> = vec![0.0, 1.0, 2.0, 5.0, 6.0, 7.0];
        let b: Vec<f64> = (0..12).map(|v| f64::from(v) * 0.25).collect();
        let mut c = vec![-1.0; 12];
        gemm_ld(
            Mat::strided(&buf, 2, 3, 5),
            Mat::new(&b, 3, 4),
            &mut c,
            6,
            0.0,
        );
        let want = naive(&a, &b, 2, 3, 4);
        assert_eq!(&c[..4], &want[..4]);
        assert_eq!(&c[6..10], &want[4..]);
        assert_eq!(&c[4..6], &[-1.0, -1.0]);

        let mut ct = vec![0.0; 8];
        gemm_ct(Mat::new(&a, 2, 3), Mat::new(&b, 3, 4), &mut ct, 0.0);
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(ct[j * 2 + i], want[i * 4 + j]);
            }
        }
    }
}
