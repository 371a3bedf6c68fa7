//! Row-major dense matrix products used by the network kernels.

use crate::scalar::Real;

/// Whether an operand is read as stored or transposed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Op {
    N,
    T,
}

/// Row-major matrix view: `rows x cols`, contiguous.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a, T> {
    pub data: &'a [T],
    pub rows: usize,
    pub cols: usize,
}

impl<'a, T> MatRef<'a, T> {
    pub fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { data, rows, cols }
    }

    fn shape(&self, op: Op) -> (usize, usize, isize, isize) {
        let c = self.cols as isize;
        match op {
            Op::N => (self.rows, self.cols, c, 1),
            Op::T => (self.cols, self.rows, 1, c),
        }
    }
}

/// `out = alpha * op(a) * op(b) + beta * out`; `out` is row-major `m x n`.
pub fn gemm<T: Real>(
    alpha: T,
    a: MatRef<'_, T>,
    op_a: Op,
    b: MatRef<'_, T>,
    op_b: Op,
    beta: T,
    out: &mut [T],
) {
    let (m, k, rsa, csa) = a.shape(op_a);
    let (k2, n, rsb, csb) = b.shape(op_b);
    assert_eq!(k, k2, "inner dimensions differ");
    assert_eq!(out.len(), m * n, "output buffer length");
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: shapes and strides are derived from contiguous buffers whose
    // lengths were checked above and in `MatRef::new`.
    unsafe {
        T::gemm_strided(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            rsa,
            csa,
            b.data.as_ptr(),
            rsb,
            csb,
            beta,
            out.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
