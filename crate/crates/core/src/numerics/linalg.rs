//! Strided matrix views and a checked wrapper around `matrixmultiply::dgemm`.

/// Read-only strided view of a row-major buffer.
#[derive(Debug, Clone, Copy)]
pub struct MatRef<'a> {
    data: &'a [f64],
    rows: usize,
    cols: usize,
    row_stride: usize,
    col_stride: usize,
}

impl<'a> MatRef<'a> {
    /// Contiguous `rows × cols` row-major matrix.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        Self::strided(data, rows, cols, cols, 1)
    }

    pub fn strided(data: &'a [f64], rows: usize, cols: usize, row_stride: usize, col_stride: usize) -> Self {
        if rows > 0 && cols > 0 {
            let last = (rows - 1) * row_stride + (cols - 1) * col_stride;
            assert!(last < data.len(), "matrix view out of bounds: {last} >= {}", data.len());
        }
        Self {
            data,
            rows,
            cols,
            row_stride,
            col_stride,
        }
    }

    pub fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            row_stride: self.col_stride,
            col_stride: self.row_stride,
        }
    }

    /// Columns `start..end` of this view.
    pub fn cols(self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.cols);
        let offset = if end > start { start * self.col_stride } else { 0 };
        Self {
            data: &self.data[offset..],
            rows: self.rows,
            cols: end - start,
            row_stride: self.row_stride,
            col_stride: self.col_stride,
        }
    }

    /// Rows `start..end` of this view.
    pub fn rows(self, start: usize, end: usize) -> Self {
        assert!(start <= end && end <= self.rows);
        let offset = if end > start { start * self.row_stride } else { 0 };
        Self {
            data: &self.data[offset..],
            rows: end - start,
            cols: self.cols,
            row_stride: self.row_stride,
            col_stride: self.col_stride,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.row_stride + c * self.col_stride]
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }
}

/// `c = alpha * a * b + beta * c`, where `c` is a contiguous row-major
/// `a.rows × b.cols` block starting at `c[0]` with row stride `c_row_stride`.
pub fn gemm(alpha: f64, a: MatRef<'_>, b: MatRef<'_>, beta: f64, c: &mut [f64], c_row_stride: usize) {
    assert_eq!(a.cols, b.rows, "gemm inner dimension");
    let (m, k, n) = (a.rows, a.cols, b.cols);
    if m == 0 || n == 0 {
        return;
    }
    assert!(c_row_stride >= n);
    assert!((m - 1) * c_row_stride + n <= c.len(), "gemm output out of bounds");
    if k == 0 {
        for r in 0..m {
            for v in &mut c[r * c_row_stride..r * c_row_stride + n] {
                *v *= beta;
            }
        }
        return;
    }
    // SAFETY: every index touched by dgemm lies within the slices, as
    // checked by the MatRef constructors and the assertion above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.data.as_ptr(),
            a.row_stride as isize,
            a.col_stride as isize,
            b.data.as_ptr(),
            b.row_stride as isize,
            b.col_stride as isize,
            beta,
            c.as_mut_ptr(),
            c_row_stride as isize,
            1,
        );
    }
}
