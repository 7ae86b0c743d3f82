/*
Copyright 2026 The msgan Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/
//! Cost terms with analytic gradients.
//!
//! All terms are non-negative quadratics or quadratic barriers. A
//! [`CostBundle`] sums weighted terms and records whether every term's raw
//! (unweighted) value is below its own threshold; the optimizer stops on that.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::kinematics::{Configuration, PlanarChain};

pub const DEFAULT_EE_WEIGHT: f64 = 1.0;
pub const DEFAULT_POSTURE_WEIGHT: f64 = 0.01;
pub const DEFAULT_LIMIT_WEIGHT: f64 = 10.0;
pub const DEFAULT_STABILITY_WEIGHT: f64 = 10.0;
pub const DEFAULT_EE_THRESHOLD: f64 = 1e-4;
pub const DEFAULT_LIMIT_THRESHOLD: f64 = 1e-6;
pub const DEFAULT_STABILITY_THRESHOLD: f64 = 1e-6;

/// Quadratic barrier `0.5 (|min(x - lb, 0)|^2 + |max(x - ub, 0)|^2)` and its gradient.
pub fn barrier(x: &[f64], lower: &[f64], upper: &[f64]) -> Result<(f64, Vec<f64>)> {
    if lower.len() != x.len() {
        return Err(Error::dim(x.len(), lower.len()));
    }
    if upper.len() != x.len() {
        return Err(Error::dim(x.len(), upper.len()));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(x.len());
    for ((xi, lb), ub) in x.iter().zip(lower).zip(upper) {
        if lb > ub {
            return Err(Error::InvalidArgument(format!(
                "barrier bounds inverted: {lb} > {ub}"
            )));
        }
        let rb = (xi - lb).min(0.0);
        let ru = (xi - ub).max(0.0);
        value += 0.5 * (rb * rb + ru * ru);
        grad.push(rb + ru);
    }
    Ok((value, grad))
}

/// `(p(q) - p_ref)^T W (p(q) - p_ref)` over `(x, y, theta)` with diagonal `W`.
pub fn ee_pose_cost(
    chain: &PlanarChain,
    q: &Configuration,
    p_ref: &[f64; 3],
    weights: &[f64; 3],
) -> Result<(f64, DVector<f64>)> {
    let pose = chain.forward_kinematics(q)?.to_array();
    let jac = chain.jacobian(q)?;
    let mut value = 0.0;
    let mut grad = DVector::zeros(chain.dof());
    for r in 0..3 {
        let e = pose[r] - p_ref[r];
        value += weights[r] * e * e;
        if weights[r] != 0.0 {
            grad.axpy(2.0 * weights[r] * e, &jac.row(r).transpose(), 1.0);
        }
    }
    Ok((value, grad))
}

/// `(q - q_nom)^T W (q - q_nom)` with diagonal `W`.
pub fn posture_cost(
    q: &Configuration,
    q_nom: &Configuration,
    weights: &[f64],
) -> Result<(f64, DVector<f64>)> {
    if q_nom.len() != q.len() {
        return Err(Error::dim(q.len(), q_nom.len()));
    }
    if weights.len() != q.len() {
        return Err(Error::dim(q.len(), weights.len()));
    }
    let diff = q - q_nom;
    let value = diff.iter().zip(weights).map(|(d, w)| w * d * d).sum();
    let grad = DVector::from_iterator(q.len(), diff.iter().zip(weights).map(|(d, w)| 2.0 * w * d));
    Ok((value, grad))
}

pub fn joint_limit_cost(chain: &PlanarChain, q: &Configuration) -> Result<(f64, DVector<f64>)> {
    chain.check_dim(q)?;
    let (v, g) = barrier(q.as_slice(), chain.joint_lower(), chain.joint_upper())?;
    Ok((v, DVector::from_vec(g)))
}

/// Barrier on the horizontal center-of-mass coordinate.
pub fn static_stability_cost(
    chain: &PlanarChain,
    q: &Configuration,
    lower: f64,
    upper: f64,
) -> Result<(f64, DVector<f64>)> {
    let com = chain.center_of_mass(q)?;
    let (v, g) = barrier(&[com.x], &[lower], &[upper])?;
    let jac = chain.com_jacobian(q)?;
    Ok((v, jac.row(0).transpose() * g[0]))
}

#[derive(Debug, Clone, PartialEq)]
pub enum CostKind {
    /// End-effector pose error. `task` marks the term whose reference is
    /// replaced by the IK target.
    EePose {
        target: [f64; 3],
        weights: [f64; 3],
        task: bool,
    },
    Posture {
        nominal: Configuration,
        weights: Vec<f64>,
    },
    JointLimit,
    StaticStability {
        lower: f64,
        upper: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostTerm {
    pub kind: CostKind,
    pub weight: f64,
    /// Satisfaction level on the raw value; `None` exempts the term.
    pub threshold: Option<f64>,
}

impl CostTerm {
    pub fn new(kind: CostKind, weight: f64, threshold: Option<f64>) -> Result<Self> {
        let term = CostTerm {
            kind,
            weight,
            threshold,
        };
        term.validate()?;
        Ok(term)
    }

    pub fn ee_pose(target: [f64; 3], weights: [f64; 3]) -> Self {
        CostTerm {
            kind: CostKind::EePose {
                target,
                weights,
                task: false,
            },
            weight: DEFAULT_EE_WEIGHT,
            threshold: Some(DEFAULT_EE_THRESHOLD),
        }
    }

    /// Position task on `(x, y)`; the reference is filled in per query.
    pub fn position_task() -> Self {
        CostTerm {
            kind: CostKind::EePose {
                target: [0.0; 3],
                weights: [1.0, 1.0, 0.0],
                task: true,
            },
            weight: DEFAULT_EE_WEIGHT,
            threshold: Some(DEFAULT_EE_THRESHOLD),
        }
    }

    pub fn posture(nominal: Configuration, weights: Vec<f64>) -> Self {
        CostTerm {
            kind: CostKind::Posture { nominal, weights },
            weight: DEFAULT_POSTURE_WEIGHT,
            threshold: None,
        }
    }

    pub fn joint_limit() -> Self {
        CostTerm {
            kind: CostKind::JointLimit,
            weight: DEFAULT_LIMIT_WEIGHT,
            threshold: Some(DEFAULT_LIMIT_THRESHOLD),
        }
    }

    pub fn static_stability(lower: f64, upper: f64) -> Self {
        CostTerm {
            kind: CostKind::StaticStability { lower, upper },
            weight: DEFAULT_STABILITY_WEIGHT,
            threshold: Some(DEFAULT_STABILITY_THRESHOLD),
        }
    }

    pub fn with_weight(mut self, weight: f64) -> Self {
        self.weight = weight;
        self
    }

    pub fn with_threshold(mut self, threshold: Option<f64>) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn is_task(&self) -> bool {
        matches!(self.kind, CostKind::EePose { task: true, .. })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.weight >= 0.0 && self.weight.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "cost weight {} must be >= 0",
                self.weight
            )));
        }
        if let Some(t) = self.threshold {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "cost threshold {t} must be > 0"
                )));
            }
        }
        match &self.kind {
            CostKind::EePose { weights, .. } if weights.iter().any(|w| *w < 0.0) => {
                Err(Error::InvalidArgument("pose weights must be >= 0".into()))
            }
            CostKind::Posture { weights, .. } if weights.iter().any(|w| *w < 0.0) => Err(
                Error::InvalidArgument("posture weights must be >= 0".into()),
            ),
            CostKind::StaticStability { lower, upper } if lower > upper => Err(
                Error::InvalidArgument(format!("stability band inverted: {lower} > {upper}")),
            ),
            _ => Ok(()),
        }
    }

    /// Raw (unweighted) value and gradient.
    pub fn raw(&self, chain: &PlanarChain, q: &Configuration) -> Result<(f64, DVector<f64>)> {
        match &self.kind {
            CostKind::EePose {
                target, weights, ..
            } => ee_pose_cost(chain, q, target, weights),
            CostKind::Posture { nominal, weights } => posture_cost(q, nominal, weights),
            CostKind::JointLimit => joint_limit_cost(chain, q),
            CostKind::StaticStability { lower, upper } => {
                static_stability_cost(chain, q, *lower, *upper)
            }
        }
    }
}

/// IK target: end-effector position or full pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Position([f64; 2]),
    Pose([f64; 3]),
}

impl Target {
    pub fn as_slice(&self) -> &[f64] {
        match self {
            Target::Position(p) => p,
            Target::Pose(p) => p,
        }
    }

    pub fn from_slice(v: &[f64]) -> Result<Self> {
        match v.len() {
            2 => Ok(Target::Position([v[0], v[1]])),
            3 => Ok(Target::Pose([v[0], v[1], v[2]])),
            n => Err(Error::InvalidArgument(format!(
                "target must have 2 or 3 entries, got {n}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub raw: Vec<f64>,
    pub total: f64,
    pub gradient: DVector<f64>,
    pub all_below_threshold: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostBundle {
    chain: Arc<PlanarChain>,
    terms: Vec<CostTerm>,
}

impl CostBundle {
    pub fn new(chain: Arc<PlanarChain>, terms: Vec<CostTerm>) -> Result<Self> {
        let n = chain.dof();
        for t in &terms {
            t.validate()?;
            if let CostKind::Posture { nominal, weights } = &t.kind {
                if nominal.len() != n {
                    return Err(Error::dim(n, nominal.len()));
                }
                if weights.len() != n {
                    return Err(Error::dim(n, weights.len()));
                }
            }
        }
        Ok(CostBundle { chain, terms })
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    pub fn chain_arc(&self) -> &Arc<PlanarChain> {
        &self.chain
    }

    pub fn terms(&self) -> &[CostTerm] {
        &self.terms
    }

    pub fn has_task(&self) -> bool {
        self.terms.iter().any(CostTerm::is_task)
    }

    /// Copy with every posture term's nominal replaced by `q_nom`.
    pub fn with_nominal(&self, q_nom: &Configuration) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            if let CostKind::Posture { nominal, .. } = &mut t.kind {
                nominal.copy_from(q_nom);
            }
        }
        out
    }

    /// Copy with every task term's reference set from `target`. A position
    /// target leaves the reference orientation untouched.
    pub fn with_task_target(&self, target: &Target) -> Result<Self> {
        if !self.has_task() {
            return Err(Error::InvalidArgument("bundle has no task term".into()));
        }
        let mut out = self.clone();
        for t in &mut out.terms {
            if let CostKind::EePose {
                target: p_ref,
                task: true,
                ..
            } = &mut t.kind
            {
                let v = target.as_slice();
                p_ref[..v.len()].copy_from_slice(v);
            }
        }
        Ok(out)
    }

    /// Copy without task terms.
    pub fn without_tasks(&self) -> Self {
        CostBundle {
            chain: self.chain.clone(),
            terms: self
                .terms
                .iter()
                .filter(|t| !t.is_task())
                .cloned()
                .collect(),
        }
    }

    pub fn with_term(&self, term: CostTerm) -> Result<Self> {
        let mut terms = self.terms.clone();
        terms.push(term);
        CostBundle::new(self.chain.clone(), terms)
    }

    /// Same terms with every weight multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.weight *= factor;
        }
        out
    }

    pub fn evaluate(&self, q: &Configuration) -> Result<CostReport> {
        self.chain.check_dim(q)?;
        let mut raw = Vec::with_capacity(self.terms.len());
        let mut total = 0.0;
        let mut gradient = DVector::zeros(q.len());
        let mut all_below = true;
        for t in &self.terms {
            let (v, g) = t.raw(&self.chain, q)?;
            total += t.weight * v;
            gradient.axpy(t.weight, &g, 1.0);
            if let Some(th) = t.threshold {
                all_below &= v <= th;
            }
            raw.push(v);
        }
        Ok(CostReport {
            raw,
            total,
            gradient,
            all_below_threshold: all_below,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use std::f64::consts::PI;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }

    #[test]
    fn barrier_values() {
        let (v, g) = barrier(&[0.5], &[0.0], &[1.0]).unwrap();
        close(v, 0.0);
        close(g[0], 0.0);
        let (v, g) = barrier(&[-0.2], &[0.0], &[1.0]).unwrap();
        close(v, 0.02);
        close(g[0], -0.2);
        let (v, g) = barrier(&[1.3], &[0.0], &[1.0]).unwrap();
        close(v, 0.045);
        close(g[0], 0.3);
        assert!(matches!(
            barrier(&[0.0], &[1.0], &[0.0]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn posture_values() {
        let q = dvector![1.0, -1.0];
        let (v, g) = posture_cost(&q, &q, &[1.0, 1.0]).unwrap();
        close(v, 0.0);
        assert_eq!(g, dvector![0.0, 0.0]);
        let (v, g) = posture_cost(&q, &dvector![0.0, 0.0], &[1.0, 1.0]).unwrap();
        close(v, 2.0);
        assert_eq!(g, dvector![2.0, -2.0]);
        assert!(posture_cost(&q, &dvector![0.0], &[1.0, 1.0]).is_err());
    }

    #[test]
    fn ee_pose_values() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let q = dvector![0.0, 0.0];
        let (v, g) = ee_pose_cost(&chain, &q, &[2.0, 0.0, 0.0], &[1.0; 3]).unwrap();
        close(v, 0.0);
        assert_eq!(g, dvector![0.0, 0.0]);
        let (v, _) = ee_pose_cost(&chain, &q, &[1.9, 0.0, 0.0], &[1.0; 3]).unwrap();
        close(v, 0.01);
    }

    #[test]
    fn joint_limit_values() {
        let chain = PlanarChain::uniform(2, 1.0, 1.0).unwrap();
        let (v, g) = joint_limit_cost(&chain, &dvector![0.5, -0.5]).unwrap();
        close(v, 0.0);
        assert_eq!(g, dvector![0.0, 0.0]);
        let (v, g) = joint_limit_cost(&chain, &dvector![0.0, 1.1]).unwrap();
        close(v, 0.005);
        close(g[0], 0.0);
        close(g[1], 0.1);
    }

    #[test]
    fn stability_values() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let (v, g) = static_stability_cost(&chain, &dvector![0.0, 0.0], -0.5, 0.5).unwrap();
        close(v, 0.125);
        // CoM x is stationary at the stretched pose
        assert!(g.norm() == 0.0);
        let (_, g) = static_stability_cost(&chain, &dvector![0.3, 0.0], -0.5, 0.5).unwrap();
        assert!(g.norm() > 0.0);
        let (v, g) = static_stability_cost(&chain, &dvector![PI / 2.0, 0.0], -0.5, 0.5).unwrap();
        close(v, 0.0);
        assert!(g.norm() == 0.0);
    }

    #[test]
    fn evaluate_zero_and_linear() {
        let chain = Arc::new(PlanarChain::uniform(2, 1.0, PI).unwrap());
        let q = dvector![0.3, -0.2];
        let bundle = CostBundle::new(
            chain.clone(),
            vec![
                CostTerm::joint_limit(),
                CostTerm::posture(q.clone(), vec![1.0, 1.0]),
            ],
        )
        .unwrap();
        let r = bundle.evaluate(&q).unwrap();
        close(r.total, 0.0);
        assert!(r.all_below_threshold);

        let term = CostTerm::ee_pose([1.0, 1.0, 0.0], [1.0, 1.0, 0.5]).with_weight(3.0);
        let single = CostBundle::new(chain.clone(), vec![term.clone()]).unwrap();
        let r = single.evaluate(&q).unwrap();
        let (raw, g) = term.raw(&chain, &q).unwrap();
        close(r.total, 3.0 * raw);
        assert!((r.gradient - g * 3.0).norm() < 1e-12);
    }

    #[test]
    fn posture_is_exempt_from_thresholds() {
        let chain = Arc::new(PlanarChain::uniform(2, 1.0, PI).unwrap());
        let bundle = CostBundle::new(
            chain,
            vec![CostTerm::posture(dvector![0.0, 0.0], vec![1.0, 1.0])],
        )
        .unwrap();
        let r = bundle.evaluate(&dvector![2.0, 2.0]).unwrap();
        assert!(r.total > 0.0);
        assert!(r.all_below_threshold);
    }

    #[test]
    fn task_target_is_applied() {
        let chain = Arc::new(PlanarChain::uniform(2, 1.0, PI).unwrap());
        let bundle = CostBundle::new(
            chain,
            vec![CostTerm::joint_limit(), CostTerm::position_task()],
        )
        .unwrap();
        let b = bundle
            .with_task_target(&Target::Position([2.0, 0.0]))
            .unwrap();
        let r = b.evaluate(&dvector![0.0, 0.0]).unwrap();
        close(r.total, 0.0);
        assert_eq!(b.without_tasks().terms().len(), 1);
        assert!(b
            .without_tasks()
            .with_task_target(&Target::Position([0.0, 0.0]))
            .is_err());
    }

    #[test]
    fn invalid_terms_rejected() {
        assert!(CostTerm::joint_limit()
            .with_weight(-1.0)
            .validate()
            .is_err());
        assert!(CostTerm::joint_limit()
            .with_threshold(Some(0.0))
            .validate()
            .is_err());
        assert!(CostTerm::static_stability(1.0, -1.0).validate().is_err());
    }
}
