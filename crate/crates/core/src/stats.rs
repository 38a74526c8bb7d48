//! Mergeable first- and second-moment accumulators.
//!
//! Merging is plain summation, so per-chunk partial results can be combined
//! in any grouping; drivers merge in chunk order to stay bitwise stable.

use serde::{Deserialize, Serialize};

/// Running sums for a single real statistic.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub sum: f64,
    pub sum_sq: f64,
}

impl Moments {
    #[inline]
    pub fn push(&mut self, v: f64) {
        self.count += 1;
        self.sum += v;
        self.sum_sq += v * v;
    }

    pub fn merge(&mut self, other: &Moments) {
        self.count += other.count;
        self.sum += other.sum;
        self.sum_sq += other.sum_sq;
    }

    pub fn mean(&self) -> f64 {
        self.sum / self.count as f64
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        let m = self.mean();
        ((self.sum_sq - n * m * m) / (n - 1.0)).max(0.0)
    }

    pub fn stderr(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for Moments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = Moments::default();
        for v in iter {
            m.push(v);
        }
        m
    }
}

/// Running sums for a pair of statistics, including the cross moment.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub count: u64,
    pub sum_a: f64,
    pub sum_b: f64,
    pub sum_aa: f64,
    pub sum_bb: f64,
    pub sum_ab: f64,
}

impl PairMoments {
    #[inline]
    pub fn push(&mut self, a: f64, b: f64) {
        self.count += 1;
        self.sum_a += a;
        self.sum_b += b;
        self.sum_aa += a * a;
        self.sum_bb += b * b;
        self.sum_ab += a * b;
    }

    pub fn merge(&mut self, o: &PairMoments) {
        self.count += o.count;
        self.sum_a += o.sum_a;
        self.sum_b += o.sum_b;
        self.sum_aa += o.sum_aa;
        self.sum_bb += o.sum_bb;
        self.sum_ab += o.sum_ab;
    }

    pub fn mean_a(&self) -> f64 {
        self.sum_a / self.count as f64
    }

    pub fn mean_b(&self) -> f64 {
        self.sum_b / self.count as f64
    }

    fn centered(&self, s_xy: f64, s_x: f64, s_y: f64) -> f64 {
        if self.count < 2 {
            return 0.0;
        }
        let n = self.count as f64;
        (s_xy - s_x * s_y / n) / (n - 1.0)
    }

    pub fn var_a(&self) -> f64 {
        self.centered(self.sum_aa, self.sum_a, self.sum_a).max(0.0)
    }

    pub fn var_b(&self) -> f64 {
        self.centered(self.sum_bb, self.sum_b, self.sum_b).max(0.0)
    }

    pub fn cov(&self) -> f64 {
        self.centered(self.sum_ab, self.sum_a, self.sum_b)
    }

    /// Ratio-of-means estimate `ā / b̄` with its delta-method standard error.
    pub fn ratio(&self) -> (f64, f64) {
        let (ma, mb) = (self.mean_a(), self.mean_b());
        let r = ma / mb;
        let n = self.count as f64;
        let v = (self.var_a() - 2.0 * r * self.cov() + r * r * self.var_b()).max(0.0) / (n * mb * mb);
        (r, v.sqrt())
    }

    /// `ln ā − ln b̄` with its delta-method standard error.
    pub fn log_ratio(&self) -> (f64, f64) {
        let (ma, mb) = (self.mean_a(), self.mean_b());
        let n = self.count as f64;
        let v = (self.var_a() / (ma * ma) + self.var_b() / (mb * mb) - 2.0 * self.cov() / (ma * mb)).max(0.0) / n;
        (ma.ln() - mb.ln(), v.sqrt())
    }
}
