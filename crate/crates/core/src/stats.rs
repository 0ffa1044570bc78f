//! Small statistical helpers shared by the probes.

/// A point estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub stderr: f64,
}

impl Estimate {
    pub fn new(mean: f64, stderr: f64) -> Self {
        Self { mean, stderr }
    }

    /// Binomial frequency `k / n` with its standard error.
    pub fn proportion(k: u64, n: u64) -> Self {
        if n == 0 {
            return Self::new(0.0, 0.0);
        }
        let p = k as f64 / n as f64;
        Self::new(p, (p * (1.0 - p) / n as f64).sqrt())
    }

    pub fn scale(self, c: f64) -> Self {
        Self::new(self.mean * c, self.stderr * c.abs())
    }

    /// Lower and upper end of the normal-approximation 95% interval.
    pub fn ci95(&self) -> (f64, f64) {
        (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)
    }
}

/// z-score of the difference of two independent estimates. Returns 0 when both
/// are exact and equal, and infinity when they are exact and differ.
pub fn z_score(a: Estimate, b: Estimate) -> f64 {
    let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
    let d = a.mean - b.mean;
    if se == 0.0 {
        if d.abs() <= 1e-12 {
            0.0
        } else {
            f64::INFINITY * d.signum()
        }
    } else {
        d / se
    }
}

/// Welford running mean/variance.
#[derive(Debug, Clone, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn estimate(&self) -> Estimate {
        if self.n < 2 {
            return Estimate::new(self.mean, 0.0);
        }
        let var = self.m2 / (self.n - 1) as f64;
        Estimate::new(self.mean, (var / self.n as f64).sqrt())
    }
}
