use crate::C64;

/// Target metric data on the Riemann sphere (or, with `epsilon != +1`, a
/// formal constant-curvature target carried through the same formulas).
///
/// The Fubini-Study normalization is fixed by the curvature convention
/// `-d_w d_wbar log h = epsilon * h`, which for `epsilon = +1` forces
/// `h = 2 / (1 + |w|^2)^2`. The curvature form is `K_wwbar = epsilon * h`
/// and `K_P1 = epsilon` is carried symbolically through all assembled
/// integrands.
#[derive(Debug, Clone, Copy)]
pub struct TargetMetric {
    pub epsilon: f64,
}

impl TargetMetric {
    pub fn sphere() -> Self {
        TargetMetric { epsilon: 1.0 }
    }

    /// Metric density `h_wwbar` at a finite point of the `w` chart.
    ///
    /// The same formula is valid in the chart at infinity `what = 1/w`
    /// because the Fubini-Study metric is symmetric under `w -> 1/w`.
    pub fn h(&self, w: C64) -> f64 {
        2.0 / (1.0 + w.norm_sqr()).powi(2)
    }

    /// `Gamma_w = d_w log h = -2 wbar / (1 + |w|^2)`.
    pub fn gamma(&self, w: C64) -> C64 {
        -2.0 * w.conj() / (1.0 + w.norm_sqr())
    }

    /// `K_wwbar = epsilon * h_wwbar`.
    pub fn k(&self, w: C64) -> f64 {
        self.epsilon * self.h(w)
    }

    /// Residual of the defining equation `-d_w d_wbar log h - epsilon h`,
    /// evaluated from the closed form (`d_wbar Gamma_w = -K`).
    pub fn curvature_residual(&self, w: C64) -> f64 {
        // d_w d_wbar log h for h = 2/(1+|w|^2)^2 equals -2/(1+|w|^2)^2 = -h.
        let ddbar_log_h = -2.0 / (1.0 + w.norm_sqr()).powi(2);
        (-ddbar_log_h - self.epsilon * self.h(w)).abs()
    }
}

/// `fubini_study(w) -> (h, Gamma_w, K)` for the `epsilon = +1` sphere.
pub fn fubini_study(w: C64) -> (f64, C64, f64) {
    let t = TargetMetric::sphere();
    (t.h(w), t.gamma(w), t.k(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::c64;

    #[test]
    fn normalization_values() {
        let (h0, _, _) = fubini_study(c64(0.0, 0.0));
        assert!((h0 - 2.0).abs() < 1e-15);
        let (h1, _, _) = fubini_study(c64(1.0, 0.0));
        assert!((h1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn curvature_equation_holds_at_random_points() {
        let t = TargetMetric::sphere();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut rand = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 * 4.0 - 2.0
        };
        for _ in 0..100 {
            let w = c64(rand(), rand());
            assert!(t.curvature_residual(w) < 1e-12);
        }
    }
}
