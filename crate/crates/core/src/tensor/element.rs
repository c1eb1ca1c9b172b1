use std::fmt;

/// Scalar element type for tensors. Implemented for `f32` (training default)
/// and `f64` (gradient-check precision).
pub trait Element:
    num_traits::Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Default + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn from_f32(v: f32) -> Self;
    fn as_f32(self) -> f32;

    /// Strided dense matrix product `c = a*b + beta*c` with row strides
    /// `rs*` and column strides `cs*`. Dimensions: `a` is m x k, `b` is
    /// k x n, `c` is m x n.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );
}

impl Element for f32 {
    const NAME: &'static str = "f32";

    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn from_f32(v: f32) -> Self {
        v
    }
    fn as_f32(self) -> f32 {
        self
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds(m, k, n, a.len(), b.len(), c.len(), rsa, csa, rsb, csb, rsc, csc);
        unsafe {
            matrixmultiply::sgemm(
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
                rsc,
                csc,
            );
        }
    }
}

impl Element for f64 {
    const NAME: &'static str = "f64";

    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn from_f32(v: f32) -> Self {
        v as f64
    }
    fn as_f32(self) -> f32 {
        self as f32
    }

    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    ) {
        check_gemm_bounds(m, k, n, a.len(), b.len(), c.len(), rsa, csa, rsb, csb, rsc, csc);
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
                rsc,
                csc,
            );
        }
    }
}

/// Every (row, col) index reachable by the gemm kernel must land inside the
/// corresponding slice; checked up front so the unsafe call cannot go out of
/// bounds.
#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    b_len: usize,
    c_len: usize,
    rsa: isize,
    csa: isize,
    rsb: isize,
    csb: isize,
    rsc: isize,
    csc: isize,
) {
    let max_index = |rows: usize, cols: usize, rs: isize, cs: isize| -> usize {
        if rows == 0 || cols == 0 {
            return 0;
        }
        let r = (rows - 1) as isize * rs;
        let c = (cols - 1) as isize * cs;
        assert!(r >= 0 && c >= 0, "negative gemm strides are not supported");
        (r + c) as usize + 1
    };
    assert!(max_index(m, k, rsa, csa) <= a_len, "gemm: a out of bounds");
    assert!(max_index(k, n, rsb, csb) <= b_len, "gemm: b out of bounds");
    assert!(max_index(m, n, rsc, csc) <= c_len, "gemm: c out of bounds");
}
