use serde::{Deserialize, Serialize};

/// Matern smoothness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothness {
    #[serde(rename = "1/2")]
    Half,
    #[serde(rename = "3/2")]
    ThreeHalves,
    #[default]
    #[serde(rename = "5/2")]
    FiveHalves,
}

impl Smoothness {
    /// Unit-variance Matern correlation at squared scaled distance `r2`, and
    /// its derivative with respect to `r2`.
    #[inline]
    pub fn eval(self, r2: f64) -> (f64, f64) {
        let r = libm::sqrt(r2);
        match self {
            Smoothness::Half => {
                let e = libm::exp(-r);
                // The derivative is unbounded at r = 0, but every use multiplies
                // it by a coordinate difference that is zero there.
                (e, if r > 0.0 { -e / (2.0 * r) } else { 0.0 })
            }
            Smoothness::ThreeHalves => {
                let s = libm::sqrt(3.0) * r;
                let e = libm::exp(-s);
                ((1.0 + s) * e, -1.5 * e)
            }
            Smoothness::FiveHalves => {
                let s = libm::sqrt(5.0) * r;
                let e = libm::exp(-s);
                ((1.0 + s + 5.0 * r2 / 3.0) * e, -(5.0 / 6.0) * (1.0 + s) * e)
            }
        }
    }

    #[inline]
    pub fn value(self, r2: f64) -> f64 {
        self.eval(r2).0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_at_zero_and_decaying() {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            assert_eq!(nu.value(0.0), 1.0);
            assert!(nu.value(1.0) < 1.0 && nu.value(4.0) < nu.value(1.0));
            assert!(nu.value(1e4) < 1e-20);
        }
    }

    #[test]
    fn derivative_matches_finite_difference() {
        for nu in [Smoothness::Half, Smoothness::ThreeHalves, Smoothness::FiveHalves] {
            for r2 in [0.01, 0.3, 2.0, 7.5] {
                let h = 1e-7;
                let fd = (nu.value(r2 + h) - nu.value(r2 - h)) / (2.0 * h);
                assert!((fd - nu.eval(r2).1).abs() < 1e-7, "{nu:?} {r2}");
            }
        }
    }

    #[test]
    fn five_halves_closed_form() {
        let r: f64 = 0.8;
        let s5 = 5f64.sqrt();
        let expected = (1.0 + s5 * r + 5.0 * r * r / 3.0) * (-s5 * r).exp();
        assert!((Smoothness::FiveHalves.value(r * r) - expected).abs() < 1e-15);
    }
}
