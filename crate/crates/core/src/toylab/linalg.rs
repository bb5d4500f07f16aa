//! Strided matrix views over `f64` slices and a checked GEMM wrapper.

use matrixmultiply::dgemm;

#[derive(Clone, Copy, Debug)]
pub struct View<'a> {
    data: &'a [f64],
    offset: usize,
    pub rows: usize,
    pub cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> View<'a> {
    /// Row-major `rows x cols` matrix.
    pub fn new(data: &'a [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view larger than buffer");
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
            ..self
        }
    }

    /// Columns `start..start + n` of a row-major matrix.
    pub fn cols(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: n,
            ..self
        }
    }

    /// First `n` rows.
    pub fn top(self, n: usize) -> Self {
        assert!(n <= self.rows);
        Self { rows: n, ..self }
    }

    /// Rows `start..start + n`.
    pub fn rows(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.rows);
        Self {
            offset: self.offset + start * self.rs,
            rows: n,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

pub struct ViewMut<'a> {
    data: &'a mut [f64],
    offset: usize,
    pub rows: usize,
    pub cols: usize,
    rs: usize,
    cs: usize,
}

impl<'a> ViewMut<'a> {
    pub fn new(data: &'a mut [f64], rows: usize, cols: usize) -> Self {
        assert!(data.len() >= rows * cols, "view larger than buffer");
        Self {
            data,
            offset: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    pub fn cols(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.cols);
        Self {
            offset: self.offset + start * self.cs,
            cols: n,
            ..self
        }
    }

    pub fn top(self, n: usize) -> Self {
        assert!(n <= self.rows);
        Self { rows: n, ..self }
    }

    pub fn rows(self, start: usize, n: usize) -> Self {
        assert!(start + n <= self.rows);
        Self {
            offset: self.offset + start * self.rs,
            rows: n,
            ..self
        }
    }

    fn check(&self) {
        if self.rows > 0 && self.cols > 0 {
            let last = self.offset + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs;
            assert!(last < self.data.len(), "view out of bounds");
        }
    }
}

/// `c = alpha * a @ b + beta * c`.
pub fn gemm(alpha: f64, a: View<'_>, b: View<'_>, beta: f64, c: ViewMut<'_>) {
    assert_eq!(a.cols, b.rows, "inner dimensions differ");
    assert_eq!(a.rows, c.rows, "output rows differ");
    assert_eq!(b.cols, c.cols, "output cols differ");
    a.check();
    b.check();
    c.check();
    if c.rows == 0 || c.cols == 0 {
        return;
    }
    // SAFETY: every view was bounds-checked above, strides are non-negative,
    // and `c` is uniquely borrowed so it cannot alias `a` or `b`.
    unsafe {
        dgemm(
            a.rows,
            a.cols,
            b.cols,
            alpha,
            a.data.as_ptr().add(a.offset),
            a.rs as isize,
            a.cs as isize,
            b.data.as_ptr().add(b.offset),
            b.rs as isize,
            b.cs as isize,
            beta,
            c.data.as_mut_ptr().add(c.offset),
            c.rs as isize,
            c.cs as isize,
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
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn gemm_matches_naive_with_transpose_and_slices() {
        let a: Vec<f64> = (0..12).map(|x| x as f64 * 0.5 - 2.0).collect(); // 3x4
        let b: Vec<f64> = (0..8).map(|x| (x as f64).sin()).collect(); // 4x2
        let mut c = vec![1.0; 6];
        gemm(1.0, View::new(&a, 3, 4), View::new(&b, 4, 2), 0.0, ViewMut::new(&mut c, 3, 2));
        let want = naive(&a, &b, 3, 4, 2);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - y).abs() < 1e-12);
        }

        // (a^T)^T @ b through a transposed view.
        let at: Vec<f64> = (0..4).flat_map(|j| (0..3).map(move |i| (i, j))).map(|(i, j)| a[i * 4 + j]).collect();
        let mut c2 = vec![0.0; 6];
        gemm(1.0, View::new(&at, 4, 3).t(), View::new(&b, 4, 2), 0.0, ViewMut::new(&mut c2, 3, 2));
        assert_eq!(c, c2);

        // Column block of a wider matrix, accumulating.
        let mut c3 = vec![0.0; 3 * 5];
        gemm(1.0, View::new(&a, 3, 4), View::new(&b, 4, 2), 0.0, ViewMut::new(&mut c3, 3, 5).cols(2, 2));
        gemm(1.0, View::new(&a, 3, 4), View::new(&b, 4, 2), 1.0, ViewMut::new(&mut c3, 3, 5).cols(2, 2));
        for i in 0..3 {
            for j in 0..2 {
                assert!((c3[i * 5 + 2 + j] - 2.0 * want[i * 2 + j]).abs() < 1e-12);
            }
            assert_eq!(c3[i * 5], 0.0);
        }
    }
}
