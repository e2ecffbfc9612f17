//! Small dense-vector kernels and compensated accumulators.
//!
//! Everything that reduces over the `n` components of a finite sum goes
//! through [`KahanSum`] or [`KahanVec`] so that averages over very large
//! datasets keep a relative accumulation error near machine precision.

/// Scalar Kahan (compensated) accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    compensation: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, value: f64) {
        let y = value - self.compensation;
        let t = self.sum + y;
        self.compensation = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = KahanSum::new();
        for v in iter {
            acc.add(v);
        }
        acc
    }
}

/// Coordinate-wise Kahan accumulator for dense vectors.
#[derive(Debug, Clone)]
pub struct KahanVec {
    sum: Vec<f64>,
    compensation: Vec<f64>,
}

impl KahanVec {
    pub fn zeros(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            compensation: vec![0.0; dim],
        }
    }

    #[inline]
    pub fn add_coord(&mut self, j: usize, value: f64) {
        let y = value - self.compensation[j];
        let t = self.sum[j] + y;
        self.compensation[j] = (t - self.sum[j]) - y;
        self.sum[j] = t;
    }

    pub fn add_scaled(&mut self, scale: f64, v: &[f64]) {
        debug_assert_eq!(v.len(), self.sum.len());
        for (j, &x) in v.iter().enumerate() {
            self.add_coord(j, scale * x);
        }
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.sum
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

#[inline]
pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `y += alpha * x`
#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Mean and standard error of the mean of a sample. The standard error is 0
/// for fewer than two observations.
pub fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().copied().collect::<KahanSum>().value() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs
        .iter()
        .map(|x| (x - mean) * (x - mean))
        .collect::<KahanSum>()
        .value()
        / (n - 1.0);
    (mean, (var / n).sqrt())
}
