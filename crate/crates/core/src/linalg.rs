//! Thin strided GEMM wrapper shared by the tensor ops and the spherical
//! transforms.

/// Row-major matrix view: `data[r * row_stride + c * col_stride]`.
#[derive(Clone, Copy)]
pub(crate) struct View<'a> {
    pub data: &'a [f64],
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl<'a> View<'a> {
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        debug_assert_eq!(data.len(), rows * cols);
        View {
            data,
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    pub fn t(self) -> Self {
        View {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }
}

/// `out = a·b + beta·out`, `out` row-major `a.rows × b.cols`.
pub(crate) fn gemm(a: View<'_>, b: View<'_>, out: &mut [f64], beta: f64) {
    assert_eq!(a.cols, b.rows, "gemm inner dimensions");
    assert_eq!(out.len(), a.rows * b.cols, "gemm output size");
    if a.rows == 0 || b.cols == 0 {
        return;
    }
    if a.cols == 0 {
        out.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    // SAFETY: strides and extents describe in-bounds elements of the slices,
    // which the asserts above and the View constructors guarantee.
    unsafe {
        matrixmultiply::dgemm(
            a.rows,
            a.cols,
            b.cols,
            1.0,
            a.data.as_ptr(),
            a.row_stride,
            a.col_stride,
            b.data.as_ptr(),
            b.row_stride,
            b.col_stride,
            beta,
            out.as_mut_ptr(),
            b.cols as isize,
            1,
        );
    }
}

pub(crate) fn matmul(a: View<'_>, b: View<'_>) -> Vec<f64> {
    let mut out = vec![0.0; a.rows * b.cols];
    gemm(a, b, &mut out, 0.0);
    out
}
