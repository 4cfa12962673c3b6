//! The fixed bank of distance-shaping functions used by the distance-mixture loss.
//!
//! Increasing functions penalize large anchor-positive distances, decreasing
//! functions penalize small anchor-negative distances.

/// Floor applied to distances before any decreasing (singular at 0) function.
pub const DISTANCE_FLOOR: f64 = 1e-4;

pub const BANK_SIZE: usize = 5;

/// Mixture weights that select `d²` and `0.5·d⁻¹`.
pub const DEFAULT_MIXTURE: [f64; 10] = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0];

pub const INCREASING_NAMES: [&str; BANK_SIZE] =
    ["d^2", "d^2.5", "d^1.5", "0.5exp(0.6d^2)-0.5", "0.5exp(0.6d)-0.5"];
pub const DECREASING_NAMES: [&str; BANK_SIZE] =
    ["0.5/d", "0.2/d", "0.1/d^2", "log(1/d)", "log(1/d^2)"];

#[derive(Clone, Copy, Debug, Default)]
pub struct DistanceBank;

impl DistanceBank {
    pub fn increasing(i: usize, d: f64) -> f64 {
        match i {
            0 => d * d,
            1 => d.powf(2.5),
            2 => d.powf(1.5),
            3 => 0.5 * (0.6 * d * d).exp() - 0.5,
            4 => 0.5 * (0.6 * d).exp() - 0.5,
            _ => panic!("increasing bank index {i} out of range"),
        }
    }

    pub fn increasing_grad(i: usize, d: f64) -> f64 {
        match i {
            0 => 2.0 * d,
            1 => 2.5 * d.powf(1.5),
            2 => 1.5 * d.max(0.0).sqrt(),
            3 => 0.6 * d * (0.6 * d * d).exp(),
            4 => 0.3 * (0.6 * d).exp(),
            _ => panic!("increasing bank index {i} out of range"),
        }
    }

    /// Decreasing function `i` at `max(d, DISTANCE_FLOOR)`.
    pub fn decreasing(i: usize, d: f64) -> f64 {
        let d = d.max(DISTANCE_FLOOR);
        match i {
            0 => 0.5 / d,
            1 => 0.2 / d,
            2 => 0.1 / (d * d),
            3 => -d.ln(),
            4 => -2.0 * d.ln(),
            _ => panic!("decreasing bank index {i} out of range"),
        }
    }

    /// Derivative of [`Self::decreasing`] for `d` above the floor.
    pub fn decreasing_grad(i: usize, d: f64) -> f64 {
        let d = d.max(DISTANCE_FLOOR);
        match i {
            0 => -0.5 / (d * d),
            1 => -0.2 / (d * d),
            2 => -0.2 / (d * d * d),
            3 => -1.0 / d,
            4 => -2.0 / d,
            _ => panic!("decreasing bank index {i} out of range"),
        }
    }

    /// `Σ w_i F_i⁺(d⁺) + Σ w_{i+5} F_i⁻(d⁻)`.
    pub fn mixture(weights: &[f64; 10], plus: f64, minus: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..BANK_SIZE {
            acc += weights[i] * Self::increasing(i, plus);
        }
        for i in 0..BANK_SIZE {
            acc += weights[i + BANK_SIZE] * Self::decreasing(i, minus);
        }
        acc
    }

    /// Partial derivatives of [`Self::mixture`] with respect to `(d⁺, d⁻)`.
    pub fn mixture_grad(weights: &[f64; 10], plus: f64, minus: f64) -> (f64, f64) {
        let mut gp = 0.0;
        let mut gm = 0.0;
        for i in 0..BANK_SIZE {
            gp += weights[i] * Self::increasing_grad(i, plus);
        }
        for i in 0..BANK_SIZE {
            gm += weights[i + BANK_SIZE] * Self::decreasing_grad(i, minus);
        }
        (gp, gm)
    }

    /// The ten bank values at `(d⁺, d⁻)`, increasing functions first.
    pub fn evaluate_all(plus: f64, minus: f64) -> [f64; 10] {
        let mut out = [0.0; 10];
        for i in 0..BANK_SIZE {
            out[i] = Self::increasing(i, plus);
            out[i + BANK_SIZE] = Self::decreasing(i, minus);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn monotone_on_domain() {
        let grid: Vec<f64> = (1..=400).map(|k| k as f64 * 0.01).collect();
        for i in 0..BANK_SIZE {
            for w in grid.windows(2) {
                assert!(DistanceBank::increasing(i, w[1]) >= DistanceBank::increasing(i, w[0]));
                assert!(DistanceBank::decreasing(i, w[1]) <= DistanceBank::decreasing(i, w[0]));
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-6;
        for &d in &[0.3, 0.9, 1.7, 3.2] {
            for i in 0..BANK_SIZE {
                let fd = (DistanceBank::increasing(i, d + h) - DistanceBank::increasing(i, d - h)) / (2.0 * h);
                assert!((fd - DistanceBank::increasing_grad(i, d)).abs() < 1e-6 * (1.0 + fd.abs()));
                let fd = (DistanceBank::decreasing(i, d + h) - DistanceBank::decreasing(i, d - h)) / (2.0 * h);
                assert!((fd - DistanceBank::decreasing_grad(i, d)).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn floor_guards_singularity() {
        assert!(DistanceBank::decreasing(2, 0.0).is_finite());
        assert_eq!(DistanceBank::decreasing(0, 0.0), 0.5 / DISTANCE_FLOOR);
    }
}
