//! Deterministic low-discrepancy sampling (additive recurrence `R_d`).
//!
//! Point `k` of the `d`-dimensional sequence is `frac(½ + (seed + k)·α)` with
//! `α_j = φ_d^{-(j+1)}` and `φ_d` the positive root of `x^{d+1} = x + 1`.

#[derive(Clone, Debug)]
pub struct QuasiRandom {
    alpha: Vec<f64>,
    index: u64,
}

impl QuasiRandom {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim > 0, "sequence dimension must be positive");
        let phi = generalized_golden_ratio(dim);
        let alpha = (1..=dim).map(|j| phi.powi(-(j as i32)).fract()).collect();
        Self { alpha, index: seed }
    }

    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    /// Next point of the unit cube `[0, 1)^d`.
    pub fn next_point(&mut self) -> Vec<f64> {
        self.index += 1;
        let k = self.index as f64;
        self.alpha.iter().map(|a| (0.5 + k * a).fract()).collect()
    }

    pub fn take_points(&mut self, count: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| self.next_point()).collect()
    }
}

fn generalized_golden_ratio(dim: usize) -> f64 {
    let mut x: f64 = 2.0;
    for _ in 0..64 {
        x = (1.0 + x).powf(1.0 / (dim as f64 + 1.0));
    }
    x
}
