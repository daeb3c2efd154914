//! Natural cubic spline on a sorted, strictly increasing abscissa.

#[derive(Debug, Clone, PartialEq)]
pub struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    /// Second derivatives at the knots.
    m: Vec<f64>,
}

/// Cubic on one knot interval, in powers of `(t - x0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Piece {
    pub x0: f64,
    pub x1: f64,
    pub c: [f64; 4],
}

impl Piece {
    pub fn eval(&self, t: f64) -> f64 {
        let u = t - self.x0;
        self.c[0] + u * (self.c[1] + u * (self.c[2] + u * self.c[3]))
    }
}

impl CubicSpline {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Self {
        let n = x.len();
        assert_eq!(n, y.len());
        assert!(n >= 2, "spline needs two knots");
        debug_assert!(x.windows(2).all(|w| w[0] < w[1]));
        let mut m = vec![0.0; n];
        if n > 2 {
            // Tridiagonal solve (Thomas) for the interior second derivatives.
            let mut diag = vec![0.0; n];
            let mut rhs = vec![0.0; n];
            let mut upper = vec![0.0; n];
            for i in 1..n - 1 {
                let h0 = x[i] - x[i - 1];
                let h1 = x[i + 1] - x[i];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 1] - y[i]) / h1 - (y[i] - y[i - 1]) / h0);
            }
            for i in 2..n - 1 {
                let lower = x[i] - x[i - 1];
                let w = lower / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            for i in (1..n - 1).rev() {
                let next = if i + 1 < n - 1 { upper[i] * m[i + 1] } else { 0.0 };
                m[i] = (rhs[i] - next) / diag[i];
            }
        }
        Self { x, y, m }
    }

    pub fn knots(&self) -> &[f64] {
        &self.x
    }

    pub fn values(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    pub fn hi(&self) -> f64 {
        self.x[self.x.len() - 1]
    }

    /// Index `i` of the interval `[x_i, x_{i+1}]` containing `t` (clamped).
    pub fn interval(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        }
    }

    pub fn piece(&self, i: usize) -> Piece {
        let (x0, x1) = (self.x[i], self.x[i + 1]);
        let h = x1 - x0;
        let (y0, y1) = (self.y[i], self.y[i + 1]);
        let (m0, m1) = (self.m[i], self.m[i + 1]);
        Piece { x0, x1, c: [y0, (y1 - y0) / h - h * (2.0 * m0 + m1) / 6.0, m0 / 2.0, (m1 - m0) / (6.0 * h)] }
    }

    pub fn pieces(&self) -> impl Iterator<Item = Piece> + '_ {
        (0..self.x.len() - 1).map(|i| self.piece(i))
    }

    pub fn eval(&self, t: f64) -> f64 {
        self.piece(self.interval(t)).eval(t)
    }

    /// Exact integral of the interpolant over its full range, summed left to right.
    pub fn integral(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.x.len() - 1 {
            let h = self.x[i + 1] - self.x[i];
            total += 0.5 * h * (self.y[i] + self.y[i + 1]) - h * h * h * (self.m[i] + self.m[i + 1]) / 24.0;
        }
        total
    }
}
