//! Square Wave (SW) mechanism.
//!
//! SW maps an input `x ∈ [0, 1]` to an output in `[-b, 1 + b]` whose density is
//! `p` on the band `[x - b, x + b]` and `q` everywhere else, with `p / q = e^ε`.

use rand::Rng;

use crate::error::{domain, Result};

/// Below this budget `b` is evaluated from its Maclaurin series; the closed
/// form loses about `1e-16 / ε²` relative accuracy to cancellation.
const SERIES_CUTOFF: f64 = 1e-2;

/// Derived SW constants for one per-value budget.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MechanismParams {
    pub epsilon: f64,
    /// Half-width of the high-density band.
    pub b: f64,
    /// Density on the band (may exceed 1).
    pub p: f64,
    /// Density off the band.
    pub q: f64,
}

/// Closed-form moments of `SW(1)`, the maximum-variance input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwMoments {
    /// `E[SW(1)]`.
    pub mu: f64,
    /// `Var[SW(1)]`.
    pub sigma2: f64,
    /// Fourth central moment of `SW(1)`.
    pub mu4: f64,
    /// `Var(1 - SW(1))`, the deviation variance at the worst-case input.
    pub var_dx: f64,
}

/// A perturbed report together with the budget it consumed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbedValue {
    pub value: f64,
    pub input_budget: f64,
}

fn half_width(epsilon: f64) -> f64 {
    if epsilon < SERIES_CUTOFF {
        // 1/2 - ε/3 + ε²/9 - 7ε³/270 + 2ε⁴/405 - 11ε⁵/13608
        let e = epsilon;
        0.5 + e * (-1.0 / 3.0
            + e * (1.0 / 9.0 + e * (-7.0 / 270.0 + e * (2.0 / 405.0 + e * (-11.0 / 13608.0)))))
    } else {
        // (εe^ε − e^ε + 1) / (2e^ε(e^ε − ε − 1)), divided through by e^ε.
        (epsilon + (-epsilon).exp_m1()) / (2.0 * (epsilon.exp_m1() - epsilon))
    }
}

/// Computes the SW constants for budget `epsilon`.
pub fn sw_params(epsilon: f64) -> Result<MechanismParams> {
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return domain(format!("epsilon must be positive and finite, got {epsilon}"));
    }
    let b = half_width(epsilon);
    if !(b > 0.0 && b <= 0.5) {
        return domain(format!("epsilon {epsilon} is too large: band half-width underflows"));
    }
    let tail = (-epsilon).exp();
    let norm = 2.0 * b + tail;
    Ok(MechanismParams {
        epsilon,
        b,
        p: 1.0 / norm,
        q: tail / norm,
    })
}

impl MechanismParams {
    /// Output support `[-b, 1 + b]`.
    pub fn support(&self) -> (f64, f64) {
        (-self.b, 1.0 + self.b)
    }

    /// Output density at `v` given input `x`.
    pub fn density(&self, x: f64, v: f64) -> f64 {
        let (lo, hi) = self.support();
        if v < lo || v > hi {
            0.0
        } else if (v - x).abs() <= self.b {
            self.p
        } else {
            self.q
        }
    }

    /// Probability mass of the high-density band, `2bp`.
    pub fn band_mass(&self) -> f64 {
        2.0 * self.b * self.p
    }

    /// `E[SW(x)] = 2b(p - q)x + qb + q/2`.
    pub fn expected_output(&self, x: f64) -> f64 {
        let MechanismParams { b, p, q, .. } = *self;
        2.0 * b * (p - q) * x + q * b + q / 2.0
    }

    /// `E[x - SW(x)]`.
    pub fn deviation_mean(&self, x: f64) -> f64 {
        let MechanismParams { b, q, .. } = *self;
        q * ((1.0 + 2.0 * b) * x - (b + 0.5))
    }

    /// `E[(x - SW(x))²]`.
    pub fn deviation_second_moment(&self, x: f64) -> f64 {
        let MechanismParams { b, p, q, .. } = *self;
        q * (3.0 * b * b + 6.0 * b * x * x - 6.0 * b * x + 3.0 * b + 3.0 * x * x - 3.0 * x + 1.0)
            / 3.0
            + 2.0 * p * b.powi(3) / 3.0
    }

    /// Maps a pair of uniforms in `[0, 1)` to an SW output for input `x`.
    ///
    /// `u_band` selects the band with probability `2bp`; `u_pos` places the
    /// output uniformly inside the chosen region. Off the band the remainder
    /// `[-b, x - b) ∪ (x + b, 1 + b]` has total length 1, so `u_pos` maps onto
    /// it directly.
    pub fn sample_with(&self, x: f64, u_band: f64, u_pos: f64) -> f64 {
        let b = self.b;
        if u_band < self.band_mass() {
            x - b + 2.0 * b * u_pos
        } else if u_pos < x {
            u_pos - b
        } else {
            u_pos + b
        }
    }

    pub fn moments(&self) -> SwMoments {
        sw_moments(self)
    }
}

/// Draws one SW report for `x ∈ [0, 1]`.
pub fn sw_perturb<R: Rng + ?Sized>(
    x: f64,
    params: &MechanismParams,
    rng: &mut R,
) -> Result<PerturbedValue> {
    if !(0.0..=1.0).contains(&x) {
        return domain(format!("SW input must lie in [0, 1], got {x}"));
    }
    let u_band: f64 = rng.gen();
    let u_pos: f64 = rng.gen();
    Ok(PerturbedValue {
        value: params.sample_with(x, u_band, u_pos),
        input_budget: params.epsilon,
    })
}

/// Closed-form moments of `SW(1)`.
pub fn sw_moments(params: &MechanismParams) -> SwMoments {
    let MechanismParams { b, p, q, .. } = *params;
    let mu = 2.0 * b * p - b * q + q / 2.0;

    // E[SW(1)²]: band [1-b, 1+b] at density p, remainder [-b, 1-b] at density q.
    let second = 2.0 * p * b + 2.0 * p * b.powi(3) / 3.0 + q * (1.0 - 3.0 * b + 3.0 * b * b) / 3.0;
    let sigma2 = second - mu * mu;

    let m = mu;
    let (b2, b3, b4, b5) = (b * b, b.powi(3), b.powi(4), b.powi(5));
    let (m2, m3, m4) = (m * m, m.powi(3), m.powi(4));
    let mu4 = q / 5.0 + 2.0 * b * p - b * q - q * m + 4.0 * b3 * p + 2.0 * b5 * p / 5.0
        + 2.0 * b2 * q
        - 2.0 * b3 * q
        + b4 * q
        + 2.0 * q * m2
        - 2.0 * q * m3
        + q * m4
        + 12.0 * b * p * m2
        - 8.0 * b * p * m3
        - 8.0 * b3 * p * m
        + 2.0 * b * p * m4
        - 6.0 * b * q * m2
        - 6.0 * b2 * q * m
        + 4.0 * b * q * m3
        + 4.0 * b3 * q * m
        + 4.0 * b3 * p * m2
        + 6.0 * b2 * q * m2
        - 8.0 * b * p * m
        + 4.0 * b * q * m;

    let var_dx = 2.0 * b3 * p / 3.0 - b2 * q * q + b2 * q - b * q * q + b * q - q * q / 4.0
        + q / 3.0;

    SwMoments {
        mu,
        sigma2,
        mu4,
        var_dx,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Composite Gauss-Legendre (5 nodes) over each piece of the density.
    fn integrate(f: impl Fn(f64) -> f64, breaks: &[f64]) -> f64 {
        const NODES: [f64; 5] = [
            0.0,
            -0.538_469_310_105_683_1,
            0.538_469_310_105_683_1,
            -0.906_179_845_938_664,
            0.906_179_845_938_664,
        ];
        const WEIGHTS: [f64; 5] = [
            0.568_888_888_888_888_9,
            0.478_628_670_499_366_5,
            0.478_628_670_499_366_5,
            0.236_926_885_056_189_1,
            0.236_926_885_056_189_1,
        ];
        let mut total = 0.0;
        for w in breaks.windows(2) {
            let (a, c) = (w[0], w[1]);
            let steps = 64;
            let h = (c - a) / steps as f64;
            for k in 0..steps {
                let lo = a + k as f64 * h;
                let mid = lo + h / 2.0;
                for (n, wt) in NODES.iter().zip(WEIGHTS) {
                    total += wt * f(mid + n * h / 2.0) * h / 2.0;
                }
            }
        }
        total
    }

    // mpmath, 40 digits
    const REFERENCE_B: [(f64, f64); 6] = [
        (1e-6, 0.499_999_666_666_777_8),
        (1e-3, 0.499_666_777_751_856_8),
        (0.002, 0.499_333_777_570_449_4),
        (0.05, 0.483_607_900_983_724_25),
        (1.0, 0.256_082_937_501_472_6),
        (4.0, 0.030_427_703_824_353_61),
    ];

    #[test]
    fn half_width_matches_high_precision_reference() {
        for (eps, b) in REFERENCE_B {
            let got = sw_params(eps).unwrap().b;
            assert!((got / b - 1.0).abs() < 1e-14, "eps={eps}: {got} vs {b}");
        }
    }

    #[test]
    fn series_and_closed_form_agree_at_cutoff() {
        let e = SERIES_CUTOFF * 0.999_999;
        let closed = (e + (-e).exp_m1()) / (2.0 * (e.exp_m1() - e));
        assert!((half_width(e) - closed).abs() < 1e-13);
    }

    #[test]
    fn anchors() {
        assert!((sw_params(0.05).unwrap().b - 0.4836).abs() < 5e-4);
        let p1 = sw_params(1.0).unwrap();
        assert!((p1.b - 0.2561).abs() < 5e-4);
        assert!((p1.p - 1.1362).abs() < 5e-4);
        assert!((p1.q - 0.4180).abs() < 5e-4);
        assert!((p1.moments().mu - 0.6839).abs() < 5e-4);
        assert!((sw_params(1e-9).unwrap().b - 0.5).abs() < 1e-9);
    }

    #[test]
    fn rejects_bad_budgets() {
        for eps in [0.0, -1.0, f64::NAN, f64::INFINITY, 1e4] {
            assert!(sw_params(eps).is_err(), "{eps}");
        }
    }

    #[test]
    fn identities_on_grid() {
        for eps in [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 4.0] {
            let m = sw_params(eps).unwrap();
            assert!((m.p / m.q - eps.exp()).abs() < 1e-12);
            assert!((2.0 * m.b * m.p + m.q - 1.0).abs() < 1e-12);
            assert!(m.b > 0.0 && m.b < 0.5);
        }
    }

    #[test]
    fn moments_match_quadrature() {
        for eps in [0.002, 0.05, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let m = sw_params(eps).unwrap();
            let breaks = [-m.b, 1.0 - m.b, 1.0 + m.b];
            let f = |v: f64| m.density(1.0, v);
            let mass = integrate(f, &breaks);
            let mu = integrate(|v| v * f(v), &breaks);
            let s2 = integrate(|v| (v - mu).powi(2) * f(v), &breaks);
            let c4 = integrate(|v| (v - mu).powi(4) * f(v), &breaks);
            let mo = m.moments();
            assert!((mass - 1.0).abs() < 1e-12);
            assert!((mo.mu - mu).abs() < 1e-8, "mu eps={eps}");
            assert!((mo.sigma2 - s2).abs() < 1e-8, "sigma2 eps={eps}");
            assert!((mo.mu4 - c4).abs() < 1e-8, "mu4 eps={eps}");
            assert!(mo.mu4 >= mo.sigma2 * mo.sigma2);
            let (lo, hi) = m.support();
            assert!(mo.mu >= lo && mo.mu <= hi);
        }
    }

    #[test]
    fn deviation_variance_two_routes() {
        for eps in [0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 4.0] {
            let m = sw_params(eps).unwrap();
            let mo = m.moments();
            let via_moments = m.deviation_second_moment(1.0) - m.deviation_mean(1.0).powi(2);
            assert!((mo.var_dx - via_moments).abs() < 1e-10, "eps={eps}");
            // Var(1 - SW(1)) = Var(SW(1))
            assert!((mo.var_dx - mo.sigma2).abs() < 1e-10);
            assert!((m.deviation_mean(1.0) - (1.0 - mo.mu)).abs() < 1e-12);
        }
    }

    #[test]
    fn general_x_expectation_matches_quadrature() {
        let m = sw_params(0.7).unwrap();
        for x in [0.0, 0.3, 0.5, 0.9] {
            let breaks = [-m.b, x - m.b, x + m.b, 1.0 + m.b];
            let e = integrate(|v| v * m.density(x, v), &breaks);
            assert!((m.expected_output(x) - e).abs() < 1e-10);
            let d2 = integrate(|v| (x - v).powi(2) * m.density(x, v), &breaks);
            assert!((m.deviation_second_moment(x) - d2).abs() < 1e-10);
        }
    }

    #[test]
    fn support_and_band_frequency() {
        let m = sw_params(0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 200_000;
        let mut inside = 0usize;
        for _ in 0..n {
            let v = sw_perturb(0.5, &m, &mut rng).unwrap().value;
            assert!(v >= -m.b && v <= 1.0 + m.b);
            if (v - 0.5).abs() <= m.b {
                inside += 1;
            }
        }
        let pr = m.band_mass();
        let sd = (pr * (1.0 - pr) / n as f64).sqrt();
        assert!((inside as f64 / n as f64 - pr).abs() < 3.0 * sd);
    }

    #[test]
    fn rejects_out_of_range_input() {
        let m = sw_params(1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sw_perturb(1.01, &m, &mut rng).is_err());
        assert!(sw_perturb(-0.01, &m, &mut rng).is_err());
    }

    #[test]
    fn large_budget_is_nearly_noiseless() {
        let m = sw_params(60.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for x in [0.0, 0.25, 1.0] {
            let v = sw_perturb(x, &m, &mut rng).unwrap().value;
            assert!((v - x).abs() < 1e-9);
        }
    }
}
