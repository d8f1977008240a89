//! Points of the probability simplex and limiting sample directions.

use thiserror::Error;

use crate::lattice::SampleConfig;

pub const SIMPLEX_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimplexError {
    #[error("simplex point needs at least one coordinate")]
    Empty,
    #[error("coordinate {index} = {value} outside [0, 1]")]
    OutOfRange { index: usize, value: f64 },
    #[error("coordinates sum to {0}, not 1")]
    BadSum(f64),
    #[error("direction component y[{index}] = {value} is not strictly positive")]
    NonPositiveDirection { index: usize, value: f64 },
}

/// Allele frequencies `x ∈ S = {x ∈ [0,1]^d : Σ x_i = 1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    pub fn new(x: Vec<f64>) -> Result<Self, SimplexError> {
        if x.is_empty() {
            return Err(SimplexError::Empty);
        }
        for (index, &value) in x.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SimplexError::OutOfRange { index, value });
            }
        }
        let sum: f64 = x.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(SimplexError::BadSum(sum));
        }
        Ok(Self(x))
    }

    /// Completes chart coordinates `(x_1..x_{d−1})` with `x_d = 1 − Σ x_i`.
    pub fn from_chart(chart: &[f64]) -> Result<Self, SimplexError> {
        let mut x = chart.to_vec();
        x.push(1.0 - chart.iter().sum::<f64>());
        Self::new(x)
    }

    /// Normalizes a non-negative vector onto the simplex.
    pub fn normalized(v: &[f64]) -> Result<Self, SimplexError> {
        let total: f64 = v.iter().sum();
        Self::new(v.iter().map(|x| x / total).collect())
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// The first `d − 1` coordinates.
    pub fn chart(&self) -> &[f64] {
        &self.0[..self.0.len() - 1]
    }

    pub fn is_interior(&self, eps: f64) -> bool {
        self.0.iter().all(|&x| x >= eps)
    }
}

/// How `y^(n) ∈ (1/n)ℕ^d` is chosen from the limit `y`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SequenceRule {
    /// `n y^(n)_i = ⌈n y_i⌉`
    #[default]
    Ceiling,
    /// `n y^(n)_i = round(n y_i)`
    Nearest,
}

/// A limiting direction `y ∈ ℝ^d_{>0}` with the rule producing the lattice
/// points `n·y^(n)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionY {
    y: Vec<f64>,
    rule: SequenceRule,
}

impl DirectionY {
    pub fn new(y: Vec<f64>) -> Result<Self, SimplexError> {
        Self::with_rule(y, SequenceRule::Ceiling)
    }

    pub fn with_rule(y: Vec<f64>, rule: SequenceRule) -> Result<Self, SimplexError> {
        if y.is_empty() {
            return Err(SimplexError::Empty);
        }
        for (index, &value) in y.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(SimplexError::NonPositiveDirection { index, value });
            }
        }
        Ok(Self { y, rule })
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    pub fn rule(&self) -> SequenceRule {
        self.rule
    }

    /// `‖y‖ = Σ |y_i|`.
    pub fn norm(&self) -> f64 {
        self.y.iter().sum()
    }

    /// `y / ‖y‖`.
    pub fn direction(&self) -> SimplexPoint {
        SimplexPoint::normalized(&self.y).expect("positive direction normalizes")
    }

    /// Lattice state `n·y^(n)`.
    pub fn lattice(&self, n: u64) -> SampleConfig {
        let counts = self
            .y
            .iter()
            .map(|&yi| {
                let t = n as f64 * yi;
                let nearest = t.round();
                // absorb floating noise in products like 3000·(1/3)
                if (t - nearest).abs() <= 1e-9 * t.max(1.0) {
                    return nearest as u32;
                }
                match self.rule {
                    SequenceRule::Ceiling => t.ceil() as u32,
                    SequenceRule::Nearest => nearest as u32,
                }
            })
            .collect();
        SampleConfig::new(counts).expect("positive direction gives a non-empty sample")
    }

    /// `y^(n) = lattice(n) / n`.
    pub fn scaled(&self, n: u64) -> Vec<f64> {
        self.lattice(n).counts().iter().map(|&c| f64::from(c) / n as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simplex_validation() {
        assert!(SimplexPoint::new(vec![0.25, 0.75]).is_ok());
        assert_eq!(SimplexPoint::new(vec![0.5, 0.6]), Err(SimplexError::BadSum(1.1)));
        assert!(matches!(SimplexPoint::new(vec![1.5, -0.5]), Err(SimplexError::OutOfRange { .. })));
        let x = SimplexPoint::from_chart(&[0.2, 0.3]).unwrap();
        assert!((x.coords()[2] - 0.5).abs() < 1e-15);
        assert!(x.is_interior(0.1));
        assert!(!x.is_interior(0.25));
    }

    #[test]
    fn lattice_rule_snaps_exact_products() {
        let y = DirectionY::new(vec![1.0 / 3.0; 3]).unwrap();
        assert_eq!(y.lattice(3000).counts(), &[1000, 1000, 1000]);
        let y = DirectionY::new(vec![0.25, 0.6]).unwrap();
        assert_eq!(y.lattice(3).counts(), &[1, 2]);
        let y = DirectionY::with_rule(vec![0.25, 0.6], SequenceRule::Nearest).unwrap();
        assert_eq!(y.lattice(3).counts(), &[1, 2]);
        assert_eq!(y.lattice(10).counts(), &[3, 6]);
    }

    #[test]
    fn direction_requires_positive_components() {
        assert!(matches!(
            DirectionY::new(vec![1.0, 0.0]),
            Err(SimplexError::NonPositiveDirection { index: 1, .. })
        ));
    }

    #[test]
    fn scaled_sequence_converges() {
        let y = DirectionY::new(vec![0.3, 0.7]).unwrap();
        let err = |n| {
            y.scaled(n).iter().zip(y.y()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        assert!(err(10_000) <= 1e-4);
        assert!(err(10_000) <= err(7));
    }
}
