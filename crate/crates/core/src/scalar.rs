//! Floating-point element types.
//!
//! Training and inference run in `f32`; the gradient-check harness
//! instantiates the same code at `f64`.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Row/column strides of a matrix operand stored in a flat slice.
#[derive(Clone, Copy, Debug)]
pub struct MatLayout {
    pub rows: usize,
    pub cols: usize,
    pub row_stride: isize,
    pub col_stride: isize,
}

impl MatLayout {
    /// Row-major `rows x cols`.
    pub fn row_major(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            row_stride: cols as isize,
            col_stride: 1,
        }
    }

    /// The transpose of a row-major `rows x cols` matrix, i.e. a
    /// `cols x rows` view.
    pub fn transposed(rows: usize, cols: usize) -> Self {
        Self {
            rows: cols,
            cols: rows,
            row_stride: 1,
            col_stride: cols as isize,
        }
    }

    fn max_offset(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            return 0;
        }
        (self.rows - 1) * self.row_stride as usize + (self.cols - 1) * self.col_stride as usize
    }
}

pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// `c = a * b + beta * c`, with `c` row-major.
    fn gemm(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, c: &mut [Self], beta: Self);

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable")
    }
}

fn check_gemm<T>(a: &[T], la: MatLayout, b: &[T], lb: MatLayout, c: &[T]) {
    assert_eq!(la.cols, lb.rows, "gemm inner dimension");
    assert!(la.rows * la.cols == 0 || la.max_offset() < a.len(), "gemm lhs out of bounds");
    assert!(lb.rows * lb.cols == 0 || lb.max_offset() < b.len(), "gemm rhs out of bounds");
    assert!(c.len() >= la.rows * lb.cols, "gemm output out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $kernel:ident) => {
        impl Scalar for $t {
            fn gemm(a: &[Self], la: MatLayout, b: &[Self], lb: MatLayout, c: &mut [Self], beta: Self) {
                check_gemm(a, la, b, lb, c);
                let (m, k, n) = (la.rows, la.cols, lb.cols);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above against
                // its stride layout, and `c` is exclusively borrowed.
                unsafe {
                    matrixmultiply::$kernel(
                        m,
                        k,
                        n,
                        1.0,
                        a.as_ptr(),
                        la.row_stride,
                        la.col_stride,
                        b.as_ptr(),
                        lb.row_stride,
                        lb.col_stride,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    );
                }
            }
        }
    };
}

impl_scalar!(f32, sgemm);
impl_scalar!(f64, dgemm);

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive_with_transposed_operand() {
        // a: 2x3 row-major, b stored as 2x3 row-major and used transposed (3x2).
        let a = [1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [1.0f64, 0.0, -1.0, 2.0, 1.0, 0.5];
        let mut c = [10.0f64; 4];
        f64::gemm(
            &a,
            MatLayout::row_major(2, 3),
            &b,
            MatLayout::transposed(2, 3),
            &mut c,
            1.0,
        );
        // row0·b0 = 1-3 = -2 ; row0·b1 = 2+2+1.5 = 5.5
        // row1·b0 = 4-6 = -2 ; row1·b1 = 8+5+3 = 16
        assert_eq!(c, [8.0, 15.5, 8.0, 26.0]);
    }
}
