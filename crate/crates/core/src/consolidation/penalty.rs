use serde::{Deserialize, Serialize};

use super::FisherDiagonal;
use crate::error::{Error, Result};
use crate::network::{ParamVector, Penalty};

/// Fisher multiplier used for the Atari agents; MNIST runs search over lambda.
pub const ATARI_FISHER_MULTIPLIER: f64 = 400.0;

/// `sum_i (c_i / 2) (theta_i - a_i)^2` with `c_i >= 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticPenalty {
    anchor: Vec<f64>,
    coefficients: Vec<f64>,
}

impl QuadraticPenalty {
    pub fn new(anchor: Vec<f64>, coefficients: Vec<f64>) -> Result<Self> {
        if anchor.len() != coefficients.len() {
            return Err(Error::DimensionMismatch {
                what: "penalty coefficients",
                expected: anchor.len(),
                found: coefficients.len(),
            });
        }
        if let Some(i) = coefficients.iter().position(|c| *c < 0.0 || !c.is_finite()) {
            return Err(Error::invalid(format!(
                "penalty coefficient {i} is {}",
                coefficients[i]
            )));
        }
        if anchor.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("penalty anchor".into()));
        }
        Ok(QuadraticPenalty {
            anchor,
            coefficients,
        })
    }

    /// Same coefficient on every parameter (the L2 baseline).
    pub fn uniform(anchor: &ParamVector, coefficient: f64) -> Result<Self> {
        Self::new(anchor.values().to_vec(), vec![coefficient; anchor.len()])
    }

    pub fn anchor(&self) -> &[f64] {
        &self.anchor
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn len(&self) -> usize {
        self.anchor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchor.is_empty()
    }

    fn check(&self, n: usize) -> Result<()> {
        if n != self.len() {
            return Err(Error::DimensionMismatch {
                what: "penalty vs parameters",
                expected: self.len(),
                found: n,
            });
        }
        Ok(())
    }

    pub fn value(&self, params: &[f64]) -> Result<f64> {
        self.check(params.len())?;
        Ok(self
            .coefficients
            .iter()
            .zip(&self.anchor)
            .zip(params)
            .map(|((c, a), t)| 0.5 * c * (t - a) * (t - a))
            .sum())
    }
}

impl Penalty for QuadraticPenalty {
    fn value_and_grad_into(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        self.check(params.len())?;
        self.check(grad.len())?;
        let mut value = 0.0;
        for i in 0..params.len() {
            let d = params[i] - self.anchor[i];
            let cd = self.coefficients[i] * d;
            value += 0.5 * cd * d;
            grad[i] += cd;
        }
        Ok(value)
    }
}

/// Penalties from every consolidated task, kept separately or merged into one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PenaltySet {
    penalties: Vec<QuadraticPenalty>,
}

impl PenaltySet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, p: QuadraticPenalty) -> Result<()> {
        if let Some(first) = self.penalties.first() {
            first.check(p.len())?;
        }
        self.penalties.push(p);
        Ok(())
    }

    /// Replaces the whole set with a single penalty.
    pub fn replace(&mut self, p: QuadraticPenalty) {
        self.penalties.clear();
        self.penalties.push(p);
    }

    pub fn penalties(&self) -> &[QuadraticPenalty] {
        &self.penalties
    }

    pub fn len(&self) -> usize {
        self.penalties.len()
    }

    pub fn is_empty(&self) -> bool {
        self.penalties.is_empty()
    }

    /// Collapses the set into one gradient-equivalent penalty.
    pub fn merged(&self) -> Result<Option<QuadraticPenalty>> {
        let mut it = self.penalties.iter();
        let Some(first) = it.next() else {
            return Ok(None);
        };
        let mut acc = first.clone();
        for p in it {
            acc = merge_penalties(&acc, p)?;
        }
        Ok(Some(acc))
    }

    pub fn into_merged(self) -> Result<PenaltySet> {
        Ok(PenaltySet {
            penalties: self.merged()?.into_iter().collect(),
        })
    }
}

impl Penalty for PenaltySet {
    fn value_and_grad_into(&self, params: &[f64], grad: &mut [f64]) -> Result<f64> {
        let mut total = 0.0;
        for p in &self.penalties {
            total += p.value_and_grad_into(params, grad)?;
        }
        Ok(total)
    }
}

/// `lambda * F_i` coefficients anchored at a snapshot of `anchor`.
pub fn build_penalty(
    anchor: &ParamVector,
    fisher: &FisherDiagonal,
    lambda: f64,
) -> Result<QuadraticPenalty> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be >= 0, got {lambda}")));
    }
    if anchor.len() != fisher.len() {
        return Err(Error::DimensionMismatch {
            what: "fisher vs anchor",
            expected: anchor.len(),
            found: fisher.len(),
        });
    }
    let coefficients = fisher.values().iter().map(|f| lambda * f).collect();
    QuadraticPenalty::new(anchor.values().to_vec(), coefficients)
}

pub fn penalty_value_and_grad(pset: &PenaltySet, params: &[f64]) -> Result<(f64, Vec<f64>)> {
    let mut grad = vec![0.0; params.len()];
    let value = pset.value_and_grad_into(params, &mut grad)?;
    Ok((value, grad))
}

/// Sum of two quadratics as a single quadratic.
///
/// The merged anchor is the coefficient-weighted mean of the two anchors, so
/// the gradient matches the pair everywhere; the value differs by a constant.
pub fn merge_penalties(p1: &QuadraticPenalty, p2: &QuadraticPenalty) -> Result<QuadraticPenalty> {
    p1.check(p2.len())?;
    let n = p1.len();
    let mut anchor = Vec::with_capacity(n);
    let mut coefficients = Vec::with_capacity(n);
    for i in 0..n {
        let (c1, c2) = (p1.coefficients[i], p2.coefficients[i]);
        let c = c1 + c2;
        coefficients.push(c);
        anchor.push(if c > 0.0 {
            (c1 * p1.anchor[i] + c2 * p2.anchor[i]) / c
        } else {
            p1.anchor[i]
        });
    }
    QuadraticPenalty::new(anchor, coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkSpec;

    fn p(anchor: &[f64], coeff: &[f64]) -> QuadraticPenalty {
        QuadraticPenalty::new(anchor.to_vec(), coeff.to_vec()).unwrap()
    }

    #[test]
    fn zero_lambda_gives_zero_penalty() {
        let spec = NetworkSpec::mlp(2, &[], 2);
        let anchor = ParamVector::new(vec![1.0; 6], spec.block_map()).unwrap();
        let f = FisherDiagonal::new(vec![3.0; 6], 10).unwrap();
        let q = build_penalty(&anchor, &f, 0.0).unwrap();
        assert!(q.coefficients().iter().all(|&c| c == 0.0));
        assert_eq!(q.value(&[5.0; 6]).unwrap(), 0.0);
    }

    #[test]
    fn single_parameter_value() {
        let spec = NetworkSpec::mlp(1, &[], 1);
        let anchor = ParamVector::new(vec![0.0, 0.0], spec.block_map()).unwrap();
        let f = FisherDiagonal::new(vec![2.0, 0.0], 1).unwrap();
        let q = build_penalty(&anchor, &f, 4.0).unwrap();
        assert_eq!(q.value(&[0.5, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn negative_lambda_rejected() {
        let spec = NetworkSpec::mlp(1, &[], 1);
        let anchor = ParamVector::zeros(spec.block_map());
        let f = FisherDiagonal::new(vec![1.0, 1.0], 1).unwrap();
        assert!(build_penalty(&anchor, &f, -1.0).is_err());
    }

    #[test]
    fn value_and_grad_by_hand() {
        let mut set = PenaltySet::new();
        set.push(p(&[1.0], &[2.0])).unwrap();
        assert_eq!(penalty_value_and_grad(&set, &[3.0]).unwrap(), (4.0, vec![4.0]));
        assert_eq!(penalty_value_and_grad(&set, &[1.0]).unwrap(), (0.0, vec![0.0]));
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let mut set = PenaltySet::new();
        set.push(p(&[1.0, 2.0], &[1.0, 1.0])).unwrap();
        assert!(penalty_value_and_grad(&set, &[1.0]).is_err());
        assert!(set.push(p(&[1.0], &[1.0])).is_err());
        assert!(merge_penalties(&p(&[0.0], &[1.0]), &p(&[0.0, 1.0], &[1.0, 1.0])).is_err());
    }

    #[test]
    fn merge_of_equal_weights_is_midpoint() {
        let m = merge_penalties(&p(&[0.0], &[1.0]), &p(&[2.0], &[1.0])).unwrap();
        assert_eq!(m.coefficients(), &[2.0]);
        assert_eq!(m.anchor(), &[1.0]);
    }

    #[test]
    fn merge_with_zero_penalty_keeps_first() {
        let p1 = p(&[0.5, -1.0, 2.0], &[1.0, 0.0, 3.0]);
        let p2 = p(&[9.0, 9.0, 9.0], &[0.0, 0.0, 0.0]);
        let m = merge_penalties(&p1, &p2).unwrap();
        assert_eq!(m, p1);
    }

    #[test]
    fn negative_coefficients_rejected() {
        assert!(QuadraticPenalty::new(vec![0.0], vec![-1.0]).is_err());
        assert!(QuadraticPenalty::new(vec![0.0], vec![f64::NAN]).is_err());
    }
}
