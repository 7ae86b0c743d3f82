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
//! Solvers: L-BFGS with per-term threshold stopping, a damped
//! Newton-Raphson IK baseline, and the projection / IK entry points built on
//! top of them.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::costs::{CostBundle, CostReport, CostTerm, Target};
use crate::error::{Error, Result};
use crate::kinematics::{Configuration, PlanarChain};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub min_step: f64,
    pub grad_tol: f64,
    /// Stop as soon as every thresholded term is satisfied. Disabling this
    /// leaves only gradient-based convergence.
    pub use_thresholds: bool,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iters: 200,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            min_step: 1e-10,
            grad_tol: 1e-8,
            use_thresholds: true,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::InvalidArgument("L-BFGS memory must be >= 1".into()));
        }
        if !(self.backtrack_factor > 0.0 && self.backtrack_factor < 1.0) {
            return Err(Error::InvalidArgument(
                "backtrack factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return Err(Error::InvalidArgument(
                "Armijo constant must lie in (0, 1)".into(),
            ));
        }
        if !(self.min_step > 0.0) || self.grad_tol < 0.0 {
            return Err(Error::InvalidArgument(
                "min_step must be > 0 and grad_tol >= 0".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ThresholdMet,
    GradTol,
    MaxIter,
    LineSearchFail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptResult {
    pub q_final: Configuration,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    pub final_report: CostReport,
}

impl OptResult {
    pub fn success(&self) -> bool {
        self.termination == Termination::ThresholdMet
    }
}

// Two-loop recursion: returns -H g.
fn lbfgs_direction(
    grad: &DVector<f64>,
    pairs: &VecDeque<(DVector<f64>, DVector<f64>, f64)>,
) -> DVector<f64> {
    let mut d = grad.clone();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * s.dot(&d);
        d.axpy(-a, y, 1.0);
        alphas.push(a);
    }
    if let Some((s, y, _)) = pairs.back() {
        d *= s.dot(y) / y.dot(y);
    }
    for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
        let b = rho * y.dot(&d);
        d.axpy(a - b, s, 1.0);
    }
    -d
}

pub fn minimize(bundle: &CostBundle, q0: &Configuration, opts: &LbfgsOptions) -> Result<OptResult> {
    minimize_with(|q| bundle.evaluate(q), q0, opts)
}

/// L-BFGS on an arbitrary objective. Threshold stopping uses the report's
/// `all_below_threshold` flag.
pub fn minimize_with<F>(mut objective: F, q0: &Configuration, opts: &LbfgsOptions) -> Result<OptResult>
where
    F: FnMut(&Configuration) -> Result<CostReport>,
{
    opts.validate()?;
    let mut q = q0.clone();
    let mut report = objective(&q)?;
    if !report.total.is_finite() || report.gradient.iter().any(|g| !g.is_finite()) {
        return Err(Error::InvalidStart(format!(
            "non-finite cost {} at start",
            report.total
        )));
    }
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut pairs: VecDeque<(DVector<f64>, DVector<f64>, f64)> =
        VecDeque::with_capacity(opts.memory);

    let finish = |q, iterations, evaluations, termination, report| OptResult {
        q_final: q,
        iterations,
        evaluations,
        termination,
        final_report: report,
    };

    if opts.use_thresholds && report.all_below_threshold {
        return Ok(finish(q, 0, evaluations, Termination::ThresholdMet, report));
    }

    while iterations < opts.max_iters {
        let g = report.gradient.clone();
        if g.amax() <= opts.grad_tol {
            return Ok(finish(
                q,
                iterations,
                evaluations,
                Termination::GradTol,
                report,
            ));
        }
        let mut dir = lbfgs_direction(&g, &pairs);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            pairs.clear();
            dir = -&g;
            slope = -g.norm_squared();
        }
        let mut step = if pairs.is_empty() {
            (1.0 / g.norm()).min(1.0)
        } else {
            1.0
        };
        let accepted = loop {
            let trial = &q + &dir * step;
            let r = objective(&trial)?;
            evaluations += 1;
            if r.total.is_finite() && r.total <= report.total + opts.armijo_c1 * step * slope {
                break Some((trial, r));
            }
            step *= opts.backtrack_factor;
            if step < opts.min_step {
                break None;
            }
        };
        let Some((q_new, r_new)) = accepted else {
            return Ok(finish(
                q,
                iterations,
                evaluations,
                Termination::LineSearchFail,
                report,
            ));
        };
        let s = &q_new - &q;
        let y = &r_new.gradient - &g;
        let sy = s.dot(&y);
        if sy > 1e-10 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        q = q_new;
        report = r_new;
        iterations += 1;
        if opts.use_thresholds && report.all_below_threshold {
            return Ok(finish(
                q,
                iterations,
                evaluations,
                Termination::ThresholdMet,
                report,
            ));
        }
    }
    Ok(finish(
        q,
        iterations,
        evaluations,
        Termination::MaxIter,
        report,
    ))
}

/// Projects `q0` onto the manifold described by a constraint-only bundle.
/// Posture terms are regularized around `q0`.
pub fn project(
    constraints: &CostBundle,
    q0: &Configuration,
    opts: &LbfgsOptions,
) -> Result<OptResult> {
    project_near(constraints, q0, q0, opts)
}

/// Like [`project`] but regularizes posture terms around `q_nom` instead of the seed.
pub fn project_near(
    constraints: &CostBundle,
    q0: &Configuration,
    q_nom: &Configuration,
    opts: &LbfgsOptions,
) -> Result<OptResult> {
    if constraints.has_task() {
        return Err(Error::InvalidArgument(
            "projection bundle must not contain a task term".into(),
        ));
    }
    minimize(&constraints.with_nominal(q_nom), q0, opts)
}

/// Numerical IK: the bundle's task terms are pointed at `target`, posture
/// terms regularize around `q0`.
pub fn solve_ik(
    bundle: &CostBundle,
    q0: &Configuration,
    target: &Target,
    opts: &LbfgsOptions,
) -> Result<OptResult> {
    let b = bundle.with_task_target(target)?.with_nominal(q0);
    minimize(&b, q0, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NrOptions {
    pub alpha: f64,
    pub damping: f64,
    pub max_iters: usize,
    pub position_tol: f64,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions {
            alpha: 0.5,
            damping: 1e-6,
            max_iters: 200,
            position_tol: 1e-6,
        }
    }
}

/// Damped pseudoinverse iteration `q <- q - alpha J^T (J J^T + lambda I)^-1 (f(q) - x)`.
///
/// A zero damping is accepted so the undamped variant can be compared, in
/// which case a rank-deficient `J J^T` is a [`Error::NumericalFailure`].
pub fn newton_raphson_ik(
    chain: &PlanarChain,
    q0: &Configuration,
    target: &Target,
    opts: &NrOptions,
) -> Result<OptResult> {
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha {} outside (0, 1]",
            opts.alpha
        )));
    }
    if opts.damping < 0.0 {
        return Err(Error::InvalidArgument("damping must be >= 0".into()));
    }
    chain.check_dim(q0)?;
    let x = target.as_slice();
    let m = x.len();
    let weights = if m == 2 {
        [1.0, 1.0, 0.0]
    } else {
        [1.0, 1.0, 1.0]
    };
    let mut reference = [0.0; 3];
    reference[..m].copy_from_slice(x);
    let tol = opts.position_tol;
    let bundle = CostBundle::new(
        std::sync::Arc::new(chain.clone()),
        vec![CostTerm::ee_pose(reference, weights)
            .with_weight(1.0)
            .with_threshold(Some((tol * tol).max(f64::MIN_POSITIVE)))],
    )?;

    let residual = |q: &Configuration| -> Result<DVector<f64>> {
        let p = chain.forward_kinematics(q)?.to_array();
        Ok(DVector::from_iterator(m, (0..m).map(|i| p[i] - x[i])))
    };

    let mut q = q0.clone();
    let mut err = residual(&q)?;
    let mut iterations = 0;
    let mut evaluations = 1;
    while err.norm() > tol && iterations < opts.max_iters {
        let jac = chain.jacobian(&q)?.rows(0, m).into_owned();
        let jjt = &jac * jac.transpose() + DMatrix::identity(m, m) * opts.damping;
        let sv = jjt.clone().svd(false, false).singular_values;
        if sv.min() <= 1e-12 * sv.max().max(1e-300) {
            return Err(Error::NumericalFailure("damped system is singular".into()));
        }
        let w = jjt
            .lu()
            .solve(&err)
            .ok_or_else(|| Error::NumericalFailure("damped system is singular".into()))?;
        q -= jac.transpose() * w * opts.alpha;
        err = residual(&q)?;
        iterations += 1;
        evaluations += 1;
    }
    let final_report = bundle.evaluate(&q)?;
    let termination = if err.norm() <= tol {
        Termination::ThresholdMet
    } else {
        Termination::MaxIter
    };
    Ok(OptResult {
        q_final: q,
        iterations,
        evaluations,
        termination,
        final_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostTerm;
    use nalgebra::dvector;
    use std::f64::consts::PI;
    use std::sync::Arc;

    fn quadratic(a: &Configuration, weights: Vec<f64>, threshold: Option<f64>) -> CostBundle {
        let chain = Arc::new(PlanarChain::uniform(a.len(), 1.0, 10.0).unwrap());
        CostBundle::new(
            chain,
            vec![CostTerm::posture(a.clone(), weights)
                .with_weight(1.0)
                .with_threshold(threshold)],
        )
        .unwrap()
    }

    #[test]
    fn converges_on_quadratic() {
        let a = dvector![0.7, -1.3, 2.1];
        let b = quadratic(&a, vec![1.0; 3], None);
        let opts = LbfgsOptions {
            use_thresholds: false,
            ..Default::default()
        };
        let r = minimize(&b, &DVector::zeros(3), &opts).unwrap();
        assert!((r.q_final - a).norm() <= 1e-8, "{:?}", r.termination);
    }

    #[test]
    fn threshold_stops_earlier_than_convergence() {
        let a = dvector![3.0, -2.0, 1.0];
        let w = vec![1.0, 10.0, 100.0];
        let off = LbfgsOptions {
            use_thresholds: false,
            ..Default::default()
        };
        let conv = minimize(
            &quadratic(&a, w.clone(), Some(1e-2)),
            &DVector::zeros(3),
            &off,
        )
        .unwrap();
        let thr = minimize(
            &quadratic(&a, w, Some(1e-2)),
            &DVector::zeros(3),
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(thr.termination, Termination::ThresholdMet);
        assert!(thr.final_report.raw[0] <= 1e-2);
        assert!(
            thr.iterations < conv.iterations,
            "{} vs {}",
            thr.iterations,
            conv.iterations
        );
    }

    #[test]
    fn already_satisfied_start_takes_zero_iterations() {
        let a = dvector![0.1, 0.2];
        let r = minimize(
            &quadratic(&a, vec![1.0; 2], Some(1e-3)),
            &a,
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::ThresholdMet);
    }

    #[test]
    fn options_are_validated() {
        let b = quadratic(&dvector![0.0], vec![1.0], None);
        let bad = LbfgsOptions {
            memory: 0,
            ..Default::default()
        };
        assert!(minimize(&b, &dvector![1.0], &bad).is_err());
        let bad = LbfgsOptions {
            backtrack_factor: 1.0,
            ..Default::default()
        };
        assert!(minimize(&b, &dvector![1.0], &bad).is_err());
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let b = quadratic(&dvector![0.0], vec![1.0], None);
        assert!(matches!(
            minimize(&b, &dvector![f64::NAN], &LbfgsOptions::default()),
            Err(Error::InvalidStart(_))
        ));
    }

    #[test]
    fn nr_zero_iterations_at_target() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let q0 = dvector![0.3, 0.4];
        let p = chain.forward_kinematics(&q0).unwrap();
        let r = newton_raphson_ik(
            &chain,
            &q0,
            &Target::Position([p.x, p.y]),
            &NrOptions::default(),
        )
        .unwrap();
        assert_eq!(r.iterations, 0);
        assert!(r.success());
    }

    #[test]
    fn nr_reaches_one_one() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let r = newton_raphson_ik(
            &chain,
            &dvector![0.2, 0.5],
            &Target::Position([1.0, 1.0]),
            &NrOptions::default(),
        )
        .unwrap();
        assert!(r.success());
        let p = chain.forward_kinematics(&r.q_final).unwrap();
        assert!(((p.x - 1.0).powi(2) + (p.y - 1.0).powi(2)).sqrt() <= 1e-6);
    }

    #[test]
    fn nr_unreachable_runs_out_of_iterations() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let r = newton_raphson_ik(
            &chain,
            &dvector![0.2, 0.5],
            &Target::Position([10.0, 0.0]),
            &NrOptions::default(),
        )
        .unwrap();
        assert_eq!(r.termination, Termination::MaxIter);
        assert!(r.final_report.raw[0] > 0.0);
    }

    #[test]
    fn nr_undamped_singular_fails() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let opts = NrOptions {
            damping: 0.0,
            ..Default::default()
        };
        let r = newton_raphson_ik(
            &chain,
            &dvector![0.0, 0.0],
            &Target::Pose([1.0, 1.0, 0.3]),
            &opts,
        );
        assert!(matches!(r, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn nr_residual_non_increasing_for_small_alpha() {
        let chain = PlanarChain::uniform(2, 1.0, PI).unwrap();
        let target = [1.0, 1.0];
        let opts = NrOptions {
            alpha: 0.1,
            max_iters: 1,
            ..Default::default()
        };
        let mut q = dvector![1.2, -1.2];
        let res = |q: &Configuration| {
            let p = chain.forward_kinematics(q).unwrap();
            ((p.x - target[0]).powi(2) + (p.y - target[1]).powi(2)).sqrt()
        };
        let mut prev = res(&q);
        for _ in 0..50 {
            q = newton_raphson_ik(&chain, &q, &Target::Position(target), &opts)
                .unwrap()
                .q_final;
            let r = res(&q);
            assert!(r <= prev + 1e-15);
            prev = r;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn projection_fixes_joint_limits() {
        let chain = Arc::new(PlanarChain::uniform(2, 1.0, 1.0).unwrap());
        let b = CostBundle::new(
            chain.clone(),
            vec![
                CostTerm::joint_limit(),
                CostTerm::posture(DVector::zeros(2), vec![1.0; 2]),
            ],
        )
        .unwrap();
        let q0 = dvector![1.5, -1.4];
        let r = project(&b, &q0, &LbfgsOptions::default()).unwrap();
        assert!(r.success());
        let lim = 1.0 + (2.0 * crate::costs::DEFAULT_LIMIT_THRESHOLD).sqrt();
        assert!(r.q_final.iter().all(|v| v.abs() <= lim));
        let again = project(&b, &r.q_final, &LbfgsOptions::default()).unwrap();
        assert_eq!(again.iterations, 0);
        assert!((again.q_final - r.q_final).norm() <= 1e-12);
    }

    #[test]
    fn projection_rejects_task_bundles() {
        let chain = Arc::new(PlanarChain::uniform(2, 1.0, 1.0).unwrap());
        let b = CostBundle::new(chain, vec![CostTerm::position_task()]).unwrap();
        assert!(project(&b, &dvector![0.0, 0.0], &LbfgsOptions::default()).is_err());
    }

    #[test]
    fn solve_ik_immediate_success_at_own_pose() {
        let chain = Arc::new(PlanarChain::uniform(3, 1.0, PI).unwrap());
        let b = CostBundle::new(
            chain.clone(),
            vec![
                CostTerm::joint_limit(),
                CostTerm::posture(DVector::zeros(3), vec![1.0; 3]),
                CostTerm::position_task(),
            ],
        )
        .unwrap();
        let q0 = dvector![0.2, 0.3, -0.4];
        let p = chain.forward_kinematics(&q0).unwrap();
        let r = solve_ik(
            &b,
            &q0,
            &Target::Position([p.x, p.y]),
            &LbfgsOptions::default(),
        )
        .unwrap();
        assert!(r.success());
        assert_eq!(r.iterations, 0);
    }
}
