//! Closed-form flows used as oracles.

use crate::error::{Error, Result};
use crate::measures::GaussianMeasure;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClosedFormFlow {
    /// Sinkhorn flow from `N(theta, 1)` towards `N(0, 1)`: `N(theta e^{-t}, 1)`.
    SinkhornLocation { theta: f64 },
    /// Sinkhorn flow from `N(0, eta^2)` towards `N(0, 1)`.
    SinkhornScale { eta: f64 },
    /// Fokker-Planck flow from `N(theta, 1)` towards `N(0, 1)`.
    FokkerPlanckLocation { theta: f64 },
    /// Fokker-Planck flow from `N(0, eta^2)` towards `N(0, 1)`.
    FokkerPlanckScale { eta: f64 },
    /// Entropy mirror flow with standard normal `e^{-g}`: `N(0, (1+t)^2)`.
    MirrorEntropy,
    /// Potential-energy mirror flow with standard normal `e^{-g}`:
    /// `N(0, 1/(1+t)^2)`.
    MirrorPotentialEnergy,
    /// `x' = -x`.
    EuclidQuadratic,
    /// `x' = -1/(12 x)`, singular at `t = 6`.
    EuclidQuartic,
    /// `x' = -x^4 / 2`.
    EuclidInverse,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FlowValue {
    Gaussian(GaussianMeasure),
    Scalar(f64),
}

impl FlowValue {
    /// Mean for location flows, variance for the other Gaussian flows, the
    /// position for the ODE examples.
    pub fn headline(&self, flow: &ClosedFormFlow) -> f64 {
        match (self, flow) {
            (FlowValue::Scalar(x), _) => *x,
            (
                FlowValue::Gaussian(g),
                ClosedFormFlow::SinkhornLocation { .. } | ClosedFormFlow::FokkerPlanckLocation { .. },
            ) => g.mean,
            (FlowValue::Gaussian(g), _) => g.variance,
        }
    }
}

impl ClosedFormFlow {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ClosedFormFlow::SinkhornLocation { theta } | ClosedFormFlow::FokkerPlanckLocation { theta } => {
                if theta == 0.0 || !theta.is_finite() {
                    return Err(Error::Domain("location flows need theta != 0".into()));
                }
            }
            ClosedFormFlow::SinkhornScale { eta } | ClosedFormFlow::FokkerPlanckScale { eta } => {
                check_eta(eta)?;
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ClosedFormFlow::SinkhornLocation { .. } => "sinkhorn_location",
            ClosedFormFlow::SinkhornScale { .. } => "sinkhorn_scale",
            ClosedFormFlow::FokkerPlanckLocation { .. } => "fokker_planck_location",
            ClosedFormFlow::FokkerPlanckScale { .. } => "fokker_planck_scale",
            ClosedFormFlow::MirrorEntropy => "mirror_entropy",
            ClosedFormFlow::MirrorPotentialEnergy => "mirror_potential_energy",
            ClosedFormFlow::EuclidQuadratic => "euclid_quadratic",
            ClosedFormFlow::EuclidQuartic => "euclid_quartic",
            ClosedFormFlow::EuclidInverse => "euclid_inverse",
        }
    }

    /// Latest time at which the flow is defined.
    pub fn horizon(&self) -> f64 {
        match self {
            ClosedFormFlow::EuclidQuartic => 6.0,
            _ => f64::INFINITY,
        }
    }
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Domain(format!("eta = {eta} must lie in (0, 1)")));
    }
    Ok(())
}

/// Variance of the Sinkhorn scale flow:
/// `(1 - 2(1-eta) / (e^{2t/eta}(1+eta) + 1 - eta))^2`.
pub fn sinkhorn_scale_variance(eta: f64, t: f64) -> f64 {
    let s = 1.0 - 2.0 * (1.0 - eta) / ((2.0 * t / eta).exp() * (eta + 1.0) + (1.0 - eta));
    s * s
}

/// Variance of the Fokker-Planck scale flow: `1 - (1 - eta^2) e^{-2t}`.
pub fn fokker_planck_scale_variance(eta: f64, t: f64) -> f64 {
    1.0 - (1.0 - eta * eta) * (-2.0 * t).exp()
}

pub fn evaluate(flow: &ClosedFormFlow, t: f64) -> Result<FlowValue> {
    flow.validate()?;
    if !(t >= 0.0) {
        return Err(Error::Domain(format!("t = {t} must be nonnegative")));
    }
    if t > flow.horizon() {
        return Err(Error::Domain(format!(
            "{} is not defined beyond t = {}",
            flow.name(),
            flow.horizon()
        )));
    }
    let gauss = |m: f64, v: f64| GaussianMeasure::new(m, v).map(FlowValue::Gaussian);
    match *flow {
        ClosedFormFlow::SinkhornLocation { theta } | ClosedFormFlow::FokkerPlanckLocation { theta } => {
            gauss(theta * (-t).exp(), 1.0)
        }
        ClosedFormFlow::SinkhornScale { eta } => gauss(0.0, sinkhorn_scale_variance(eta, t)),
        ClosedFormFlow::FokkerPlanckScale { eta } => gauss(0.0, fokker_planck_scale_variance(eta, t)),
        ClosedFormFlow::MirrorEntropy => gauss(0.0, (1.0 + t).powi(2)),
        ClosedFormFlow::MirrorPotentialEnergy => gauss(0.0, (1.0 + t).powi(-2)),
        ClosedFormFlow::EuclidQuadratic => Ok(FlowValue::Scalar((-t).exp())),
        ClosedFormFlow::EuclidQuartic => Ok(FlowValue::Scalar((1.0 - t / 6.0).max(0.0).sqrt())),
        ClosedFormFlow::EuclidInverse => Ok(FlowValue::Scalar((1.0 + 1.5 * t).powf(-1.0 / 3.0))),
    }
}

/// `(lhs, rhs)` of the deficit comparison between the two scale flows:
/// `lhs = (1 - sigma_F^2) / (1 - sigma_S^2)`,
/// `rhs = ((1 + eta)^2 / 4) e^{2t(1/eta - 1)}`; the contract is `lhs >= rhs`.
pub fn deficit_ratio(eta: f64, t: f64) -> Result<(f64, f64)> {
    check_eta(eta)?;
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t = {t} must be positive")));
    }
    let lhs = (1.0 - fokker_planck_scale_variance(eta, t)) / (1.0 - sinkhorn_scale_variance(eta, t));
    let rhs = 0.25 * (1.0 + eta).powi(2) * (2.0 * t * (1.0 / eta - 1.0)).exp();
    Ok((lhs, rhs))
}

/// Mirror potentials of the Euclidean mirror-flow examples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EuclidMirror {
    /// `u = x^2 / 2`.
    Quadratic,
    /// `u = x^4`.
    Quartic,
    /// `u = 1 / x` on `x > 0`.
    Inverse,
}

impl EuclidMirror {
    pub fn d2u(&self, x: f64) -> f64 {
        match self {
            EuclidMirror::Quadratic => 1.0,
            EuclidMirror::Quartic => 12.0 * x * x,
            EuclidMirror::Inverse => 2.0 / (x * x * x),
        }
    }

    pub fn flow(&self) -> ClosedFormFlow {
        match self {
            EuclidMirror::Quadratic => ClosedFormFlow::EuclidQuadratic,
            EuclidMirror::Quartic => ClosedFormFlow::EuclidQuartic,
            EuclidMirror::Inverse => ClosedFormFlow::EuclidInverse,
        }
    }
}

/// One explicit Euler step of `x' = -F'(x) / u''(x)` with `F = x^2 / 2`.
pub fn euclid_mirror_ode_step(kind: EuclidMirror, x: f64, dt: f64) -> Result<f64> {
    let ok = match kind {
        EuclidMirror::Quadratic => x.is_finite(),
        EuclidMirror::Quartic | EuclidMirror::Inverse => x > 0.0 && x.is_finite(),
    };
    if !ok {
        return Err(Error::Domain(format!("x = {x} outside the domain of {kind:?}")));
    }
    Ok(x - dt * x / kind.d2u(x))
}

/// Integrates the Euclidean mirror ODE from `x0` to `t_end` with steps `dt`.
pub fn euclid_mirror_integrate(kind: EuclidMirror, x0: f64, t_end: f64, dt: f64) -> Result<f64> {
    let steps = (t_end / dt).round() as usize;
    let mut x = x0;
    for _ in 0..steps {
        x = euclid_mirror_ode_step(kind, x, dt)?;
    }
    Ok(x)
}

/// LSI constant from a uniform lower bound on `f''` (Bakry-Emery).
pub fn lsi_constant_quadratic(f_hess_min: f64) -> Result<f64> {
    if !(f_hess_min > 0.0) {
        return Err(Error::Domain(format!("f'' bound {f_hess_min} must be positive")));
    }
    Ok(f_hess_min)
}
