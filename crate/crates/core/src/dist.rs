//! Observation families `f(ξ; x, θ) = f(ξ; g(x, θ))`.
//!
//! Every supported decision map moves the family's location by an offset
//! that depends on the decision only, `g(x, θ) = θ_loc + o(x)`, while scale
//! parameters (normal σ, multivariate covariance) never depend on `x`. The
//! grid kernels rely on this split: scale factorizations are cached per
//! parameter point and the decision enters through one offset vector.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

use crate::error::{Error, Result};

/// A point of the parameter space Θ.
///
/// Scalar families use one component. The multivariate normal of dimension
/// `d` uses `d` location components, then `d` variances, then the
/// `d(d-1)/2` correlations of the strict upper triangle in row-major order
/// (`ρ12, ρ13, ρ23` for `d = 3`).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamPoint(pub Vec<f64>);

impl ParamPoint {
    pub fn new(components: Vec<f64>) -> Self {
        ParamPoint(components)
    }

    pub fn scalar(value: f64) -> Self {
        ParamPoint(vec![value])
    }

    pub fn components(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<f64>> for ParamPoint {
    fn from(v: Vec<f64>) -> Self {
        ParamPoint(v)
    }
}

/// How the decision enters the observation location.
#[derive(Debug, Clone, PartialEq)]
pub enum DecisionMap {
    /// `g = θ`; the decision is ignored.
    Identity,
    /// `g = x + θ`.
    AdditiveShift,
    /// `g = (x1 - x2)² + θ` for a scalar location.
    QuadraticGap,
    /// `g = θ_μ + α·x^β` elementwise.
    PowerDemand { alpha: Vec<f64>, beta: Vec<f64> },
}

impl DecisionMap {
    pub fn is_identity(&self) -> bool {
        matches!(self, DecisionMap::Identity)
    }

    fn validate(&self, obs_dim: usize) -> Result<()> {
        match self {
            DecisionMap::Identity | DecisionMap::AdditiveShift => Ok(()),
            DecisionMap::QuadraticGap => expect_len("quadratic-gap location", 1, obs_dim),
            DecisionMap::PowerDemand { alpha, beta } => {
                expect_len("power-demand alpha", obs_dim, alpha.len())?;
                expect_len("power-demand beta", obs_dim, beta.len())?;
                if let Some(a) = alpha.iter().find(|a| !(**a > 0.0 && a.is_finite())) {
                    return Err(Error::InvalidParameter(format!(
                        "power-demand alpha must be positive, got {a}"
                    )));
                }
                if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
                    return Err(Error::InvalidParameter(format!(
                        "power-demand beta must lie in (0, 1), got {b}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Location offset `o(x)` so that `g(x, θ) = θ_loc + o(x)`.
    pub fn offset(&self, x: &[f64], obs_dim: usize) -> Result<Vec<f64>> {
        match self {
            DecisionMap::Identity => Ok(vec![0.0; obs_dim]),
            DecisionMap::AdditiveShift => {
                expect_len("decision", obs_dim, x.len())?;
                Ok(x.to_vec())
            }
            DecisionMap::QuadraticGap => {
                expect_len("decision", 2, x.len())?;
                let gap = x[0] - x[1];
                Ok(vec![gap * gap])
            }
            DecisionMap::PowerDemand { alpha, beta } => {
                expect_len("decision", obs_dim, x.len())?;
                x.iter()
                    .enumerate()
                    .map(|(i, &xi)| {
                        if xi < 0.0 || !xi.is_finite() {
                            Err(Error::OutOfDomain { index: i, value: xi })
                        } else {
                            Ok(alpha[i] * xi.powf(beta[i]))
                        }
                    })
                    .collect()
            }
        }
    }

    /// `J^T g` where `J = ∂o/∂x`; maps a location gradient to a decision gradient.
    pub fn pullback(&self, x: &[f64], grad_loc: &[f64]) -> Result<Vec<f64>> {
        match self {
            DecisionMap::Identity => Ok(vec![0.0; x.len()]),
            DecisionMap::AdditiveShift => {
                expect_len("decision", grad_loc.len(), x.len())?;
                Ok(grad_loc.to_vec())
            }
            DecisionMap::QuadraticGap => {
                expect_len("decision", 2, x.len())?;
                let d = 2.0 * (x[0] - x[1]) * grad_loc[0];
                Ok(vec![d, -d])
            }
            DecisionMap::PowerDemand { alpha, beta } => {
                expect_len("decision", grad_loc.len(), x.len())?;
                x.iter()
                    .enumerate()
                    .map(|(i, &xi)| {
                        if xi <= 0.0 || !xi.is_finite() {
                            Err(Error::NotDifferentiable { index: i, value: xi })
                        } else {
                            Ok(grad_loc[i] * alpha[i] * beta[i] * xi.powf(beta[i] - 1.0))
                        }
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FamilyKind {
    NormalKnownVar { sigma: f64 },
    /// Exponential parameterized by its mean, not its rate.
    ExponentialByMean,
    MultivariateNormal { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityFamily {
    kind: FamilyKind,
    map: DecisionMap,
}

impl DensityFamily {
    pub fn normal_known_var(sigma: f64, map: DecisionMap) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::NonPositiveScale { what: "sigma", value: sigma });
        }
        Self::build(FamilyKind::NormalKnownVar { sigma }, map)
    }

    pub fn exponential_by_mean(map: DecisionMap) -> Result<Self> {
        Self::build(FamilyKind::ExponentialByMean, map)
    }

    pub fn multivariate_normal(dim: usize, map: DecisionMap) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("multivariate normal needs dim >= 1".into()));
        }
        Self::build(FamilyKind::MultivariateNormal { dim }, map)
    }

    fn build(kind: FamilyKind, map: DecisionMap) -> Result<Self> {
        let family = DensityFamily { kind, map };
        family.map.validate(family.obs_dim())?;
        Ok(family)
    }

    pub fn kind(&self) -> FamilyKind {
        self.kind
    }

    pub fn map(&self) -> &DecisionMap {
        &self.map
    }

    pub fn is_decision_dependent(&self) -> bool {
        !self.map.is_identity()
    }

    pub fn obs_dim(&self) -> usize {
        match self.kind {
            FamilyKind::NormalKnownVar { .. } | FamilyKind::ExponentialByMean => 1,
            FamilyKind::MultivariateNormal { dim } => dim,
        }
    }

    /// Number of components in a [`ParamPoint`] for this family.
    pub fn param_dim(&self) -> usize {
        match self.kind {
            FamilyKind::NormalKnownVar { .. } | FamilyKind::ExponentialByMean => 1,
            FamilyKind::MultivariateNormal { dim } => 2 * dim + dim * (dim - 1) / 2,
        }
    }

    /// Validates `theta` and caches its scale factorization.
    pub fn prepare(&self, theta: &ParamPoint) -> Result<PreparedDensity> {
        let c = theta.components();
        expect_len("parameter point", self.param_dim(), c.len())?;
        if let Some(v) = c.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!("non-finite component {v}")));
        }
        let d = self.obs_dim();
        let shape = match self.kind {
            FamilyKind::NormalKnownVar { sigma } => Shape::Normal {
                sigma,
                log_norm: normal_log_norm(sigma),
            },
            FamilyKind::ExponentialByMean => Shape::Exponential,
            FamilyKind::MultivariateNormal { dim } => {
                let cov = covariance_from_params(&c[dim..2 * dim], &c[2 * dim..], dim)?;
                let white = Whitening::from_covariance(&cov, dim)?;
                let mut wloc = vec![0.0; dim];
                white.whiten(&c[..dim], &mut wloc);
                Shape::Mvn { white, wloc }
            }
        };
        Ok(PreparedDensity {
            location: c[..d].to_vec(),
            shape,
        })
    }

    /// `log f(ξ; g(x, θ))`.
    pub fn log_density(&self, xi: &[f64], x: &[f64], theta: &ParamPoint) -> Result<f64> {
        let offset = self.map.offset(x, self.obs_dim())?;
        self.prepare(theta)?.log_density(xi, &offset)
    }

    pub fn sample<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        theta: &ParamPoint,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        let offset = self.map.offset(x, self.obs_dim())?;
        self.prepare(theta)?.sample(&offset, rng)
    }

    /// `∇_x log f(ξ; g(x, θ))`.
    pub fn decision_score(&self, xi: &[f64], x: &[f64], theta: &ParamPoint) -> Result<Vec<f64>> {
        if self.map.is_identity() {
            return Ok(vec![0.0; x.len()]);
        }
        let offset = self.map.offset(x, self.obs_dim())?;
        let loc_grad = self.prepare(theta)?.location_score(xi, &offset)?;
        self.map.pullback(x, &loc_grad)
    }
}

/// A parameter point with its scale factorization cached.
#[derive(Debug, Clone)]
pub struct PreparedDensity {
    location: Vec<f64>,
    shape: Shape,
}

#[derive(Debug, Clone)]
enum Shape {
    Normal { sigma: f64, log_norm: f64 },
    Exponential,
    /// Whitening of the covariance and the whitened location `L^{-1} μ`.
    Mvn { white: Whitening, wloc: Vec<f64> },
}

impl PreparedDensity {
    pub fn location(&self) -> &[f64] {
        &self.location
    }

    fn mean_with(&self, offset: &[f64]) -> Result<Vec<f64>> {
        expect_len("offset", self.location.len(), offset.len())?;
        Ok(self
            .location
            .iter()
            .zip(offset)
            .map(|(l, o)| l + o)
            .collect())
    }

    pub fn log_density(&self, xi: &[f64], offset: &[f64]) -> Result<f64> {
        expect_len("observation", self.location.len(), xi.len())?;
        let mean = self.mean_with(offset)?;
        match &self.shape {
            Shape::Normal { sigma, log_norm } => Ok(normal_loglik(xi[0], mean[0], *sigma, *log_norm)),
            Shape::Exponential => {
                check_exp_mean(mean[0])?;
                Ok(exp_loglik(xi[0], mean[0]))
            }
            Shape::Mvn { white, wloc } => {
                let u = white.whiten_residual(xi, offset);
                Ok(white.log_norm - 0.5 * sq_dist(&u, wloc))
            }
        }
    }

    /// Gradient of the log-density with respect to the location `g`.
    pub fn location_score(&self, xi: &[f64], offset: &[f64]) -> Result<Vec<f64>> {
        expect_len("observation", self.location.len(), xi.len())?;
        let mean = self.mean_with(offset)?;
        match &self.shape {
            Shape::Normal { sigma, .. } => Ok(vec![normal_loc_score(xi[0], mean[0], *sigma)]),
            Shape::Exponential => {
                check_exp_mean(mean[0])?;
                Ok(vec![exp_loc_score(xi[0], mean[0])])
            }
            Shape::Mvn { white, wloc } => {
                let u = white.whiten_residual(xi, offset);
                let z: Vec<f64> = u.iter().zip(wloc).map(|(a, b)| a - b).collect();
                let mut out = vec![0.0; z.len()];
                white.unwhiten_transpose(&z, &mut out);
                Ok(out)
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, offset: &[f64], rng: &mut R) -> Result<Vec<f64>> {
        let mean = self.mean_with(offset)?;
        match &self.shape {
            Shape::Normal { sigma, .. } => {
                let e: f64 = rng.sample(StandardNormal);
                Ok(vec![mean[0] + sigma * e])
            }
            Shape::Exponential => {
                check_exp_mean(mean[0])?;
                let e: f64 = rng.sample(Exp1);
                Ok(vec![mean[0] * e])
            }
            Shape::Mvn { white: w, .. } => {
                let e: Vec<f64> = (0..mean.len()).map(|_| rng.sample(StandardNormal)).collect();
                let mut out = mean;
                w.color_add(&e, &mut out);
                Ok(out)
            }
        }
    }
}

/// Cholesky factor `L` of a covariance together with `L^{-1}`.
#[derive(Debug, Clone)]
pub(crate) struct Whitening {
    pub(crate) dim: usize,
    /// Lower-triangular `L`, row-major `dim × dim`.
    chol: Vec<f64>,
    /// Lower-triangular `L^{-1}`, row-major `dim × dim`.
    pub(crate) inv: Vec<f64>,
    /// `-d/2·log(2π) - log|L|`.
    pub(crate) log_norm: f64,
}

impl Whitening {
    pub(crate) fn from_covariance(cov: &[f64], d: usize) -> Result<Self> {
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = cov[i * d + j];
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::InvalidParameter(
                            "covariance is not positive definite".into(),
                        ));
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        // L^{-1} by forward substitution, column by column.
        let mut inv = vec![0.0; d * d];
        for col in 0..d {
            for i in col..d {
                let mut s = if i == col { 1.0 } else { 0.0 };
                for k in col..i {
                    s -= l[i * d + k] * inv[k * d + col];
                }
                inv[i * d + col] = s / l[i * d + i];
            }
        }
        let log_det_l: f64 = (0..d).map(|i| l[i * d + i].ln()).sum();
        Ok(Whitening {
            dim: d,
            chol: l,
            inv,
            log_norm: -0.5 * d as f64 * (2.0 * PI).ln() - log_det_l,
        })
    }

    /// `z = L^{-1} r`.
    #[inline]
    pub(crate) fn whiten(&self, r: &[f64], z: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let row = &self.inv[i * d..i * d + i + 1];
            let mut s = 0.0;
            for k in 0..=i {
                s += row[k] * r[k];
            }
            z[i] = s;
        }
    }

    /// `L^{-1} (ξ - offset)`.
    pub(crate) fn whiten_residual(&self, xi: &[f64], offset: &[f64]) -> Vec<f64> {
        let r: Vec<f64> = xi.iter().zip(offset).map(|(a, o)| a - o).collect();
        let mut u = vec![0.0; self.dim];
        self.whiten(&r, &mut u);
        u
    }

    /// `out = L^{-T} z`, so that `L^{-T} L^{-1} r = Σ^{-1} r`.
    #[inline]
    pub(crate) fn unwhiten_transpose(&self, z: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for j in 0..d {
            let mut s = 0.0;
            for i in j..d {
                s += self.inv[i * d + j] * z[i];
            }
            out[j] = s;
        }
    }

    /// `out += L e`.
    fn color_add(&self, e: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for i in 0..d {
            let mut s = 0.0;
            for k in 0..=i {
                s += self.chol[i * d + k] * e[k];
            }
            out[i] += s;
        }
    }
}

/// Covariance from variances and upper-triangle correlations (row-major order).
pub fn covariance_from_params(var: &[f64], corr: &[f64], d: usize) -> Result<Vec<f64>> {
    expect_len("variances", d, var.len())?;
    expect_len("correlations", d * (d - 1) / 2, corr.len())?;
    if let Some(v) = var.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::NonPositiveScale { what: "variance", value: *v });
    }
    let mut cov = vec![0.0; d * d];
    let mut k = 0;
    for i in 0..d {
        cov[i * d + i] = var[i];
        for j in i + 1..d {
            let rho = corr[k];
            if !(rho.abs() < 1.0) {
                return Err(Error::InvalidParameter(format!("correlation {rho} outside (-1, 1)")));
            }
            let c = rho * (var[i] * var[j]).sqrt();
            cov[i * d + j] = c;
            cov[j * d + i] = c;
            k += 1;
        }
    }
    Ok(cov)
}

#[inline]
pub(crate) fn normal_log_norm(sigma: f64) -> f64 {
    -sigma.ln() - 0.5 * (2.0 * PI).ln()
}

#[inline]
pub(crate) fn normal_loglik(xi: f64, mean: f64, sigma: f64, log_norm: f64) -> f64 {
    let z = (xi - mean) / sigma;
    log_norm - 0.5 * z * z
}

#[inline]
pub(crate) fn normal_loc_score(xi: f64, mean: f64, sigma: f64) -> f64 {
    (xi - mean) / (sigma * sigma)
}

#[inline]
pub(crate) fn exp_loglik(xi: f64, mean: f64) -> f64 {
    if xi < 0.0 {
        f64::NEG_INFINITY
    } else {
        -mean.ln() - xi / mean
    }
}

#[inline]
pub(crate) fn exp_loc_score(xi: f64, mean: f64) -> f64 {
    (xi - mean) / (mean * mean)
}

#[inline]
pub(crate) fn check_exp_mean(mean: f64) -> Result<()> {
    if mean > 0.0 && mean.is_finite() {
        Ok(())
    } else {
        Err(Error::NonPositiveScale { what: "exponential mean", value: mean })
    }
}

#[inline]
pub(crate) fn sq_dist(u: &[f64], w: &[f64]) -> f64 {
    let mut q = 0.0;
    for (a, b) in u.iter().zip(w) {
        let z = a - b;
        q += z * z;
    }
    q
}

pub(crate) fn expect_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { what, expected, got })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal4(map: DecisionMap) -> DensityFamily {
        DensityFamily::normal_known_var(4.0, map).unwrap()
    }

    fn newsvendor_theta() -> ParamPoint {
        ParamPoint::new(vec![10.0, 15.0, 20.0, 3.0, 6.0, 9.0, 0.1, 0.3, 0.5])
    }

    fn power_family() -> DensityFamily {
        DensityFamily::multivariate_normal(
            3,
            DecisionMap::PowerDemand { alpha: vec![1.0; 3], beta: vec![0.5; 3] },
        )
        .unwrap()
    }

    #[test]
    fn normal_density_at_mean() {
        let f = normal4(DecisionMap::Identity);
        let v = f.log_density(&[9.0], &[0.0], &ParamPoint::scalar(9.0)).unwrap();
        let expected = (1.0 / (4.0 * (2.0 * PI).sqrt())).ln();
        assert!((v - expected).abs() < 1e-14);
    }

    #[test]
    fn normal_density_symmetric() {
        let f = normal4(DecisionMap::Identity);
        let t = ParamPoint::scalar(9.0);
        let a = f.log_density(&[8.0], &[0.0], &t).unwrap();
        let b = f.log_density(&[10.0], &[0.0], &t).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn exponential_density_at_zero() {
        let f = DensityFamily::exponential_by_mean(DecisionMap::Identity).unwrap();
        let v = f.log_density(&[0.0], &[0.0], &ParamPoint::scalar(4.0)).unwrap();
        assert!((v - 0.25f64.ln()).abs() < 1e-15);
        let outside = f.log_density(&[-1.0], &[0.0], &ParamPoint::scalar(4.0)).unwrap();
        assert_eq!(outside, f64::NEG_INFINITY);
    }

    #[test]
    fn rejects_bad_scales() {
        assert!(matches!(
            DensityFamily::normal_known_var(0.0, DecisionMap::Identity),
            Err(Error::NonPositiveScale { .. })
        ));
        let f = DensityFamily::exponential_by_mean(DecisionMap::Identity).unwrap();
        assert!(matches!(
            f.log_density(&[1.0], &[0.0], &ParamPoint::scalar(-2.0)),
            Err(Error::NonPositiveScale { .. })
        ));
        assert!(matches!(
            f.log_density(&[1.0, 2.0], &[0.0], &ParamPoint::scalar(2.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn newsvendor_covariance_matches_printed_matrix() {
        let c = newsvendor_theta();
        let cov = covariance_from_params(&c.0[3..6], &c.0[6..9], 3).unwrap();
        let printed = [3.0, 0.42, 1.56, 0.42, 6.0, 3.67, 1.56, 3.67, 9.0];
        for (a, b) in cov.iter().zip(printed) {
            assert!((a - b).abs() < 0.005, "{a} vs {b}");
        }
    }

    #[test]
    fn whitening_inverts_covariance() {
        let c = newsvendor_theta();
        let cov = covariance_from_params(&c.0[3..6], &c.0[6..9], 3).unwrap();
        let w = Whitening::from_covariance(&cov, 3).unwrap();
        // Σ · (Σ^{-1} e_j) = e_j
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            let mut z = [0.0; 3];
            w.whiten(&e, &mut z);
            let mut p = [0.0; 3];
            w.unwhiten_transpose(&z, &mut p);
            for i in 0..3 {
                let v: f64 = (0..3).map(|k| cov[i * 3 + k] * p[k]).sum();
                assert!((v - e[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_pd_covariance_rejected() {
        let f = DensityFamily::multivariate_normal(3, DecisionMap::Identity).unwrap();
        // ρ12 = ρ13 = 0.9, ρ23 = -0.9 is not positive definite.
        let theta = ParamPoint::new(vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.9, 0.9, -0.9]);
        assert!(matches!(f.prepare(&theta), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn identity_score_is_zero() {
        let f = normal4(DecisionMap::Identity);
        let s = f.decision_score(&[3.0], &[1.5], &ParamPoint::scalar(9.0)).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn additive_score_vanishes_at_mean() {
        let f = normal4(DecisionMap::AdditiveShift);
        let s = f.decision_score(&[6.5], &[2.5], &ParamPoint::scalar(4.0)).unwrap();
        assert_eq!(s, vec![0.0]);
        let s = f.decision_score(&[7.0], &[1.0], &ParamPoint::scalar(4.0)).unwrap();
        assert!((s[0] - 2.0 / 16.0).abs() < 1e-15);
    }

    #[test]
    fn power_demand_boundary_not_differentiable() {
        let f = power_family();
        let r = f.decision_score(&[10.0, 15.0, 20.0], &[0.0, 1.0, 1.0], &newsvendor_theta());
        assert!(matches!(r, Err(Error::NotDifferentiable { index: 0, .. })));
        let r = f.log_density(&[10.0, 15.0, 20.0], &[-1.0, 1.0, 1.0], &newsvendor_theta());
        assert!(matches!(r, Err(Error::OutOfDomain { index: 0, .. })));
    }

    #[test]
    fn power_demand_score_matches_closed_form() {
        let f = power_family();
        let theta = newsvendor_theta();
        let x = [4.0, 9.0, 16.0];
        let xi = [13.0, 16.0, 27.0];
        let s = f.decision_score(&xi, &x, &theta).unwrap();
        // Σ^{-1}(ξ - (μ + √x)) scaled by 0.5/√x, elementwise.
        let cov = covariance_from_params(&theta.0[3..6], &theta.0[6..9], 3).unwrap();
        let r = [13.0 - 12.0, 16.0 - 18.0, 27.0 - 24.0];
        // Solve Σ p = r by Cramer's rule as an independent route.
        let det3 = |m: &[f64; 9]| {
            m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
                + m[2] * (m[3] * m[7] - m[4] * m[6])
        };
        let mut a = [0.0; 9];
        a.copy_from_slice(&cov);
        let det = det3(&a);
        for j in 0..3 {
            let mut m = a;
            for i in 0..3 {
                m[i * 3 + j] = r[i];
            }
            let p = det3(&m) / det;
            let expected = p * 0.5 / x[j].sqrt();
            assert!((s[j] - expected).abs() < 1e-12, "{} vs {}", s[j], expected);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let f = power_family();
        let theta = newsvendor_theta();
        let mut a = ChaCha8Rng::seed_from_u64(11);
        let mut b = ChaCha8Rng::seed_from_u64(11);
        let x = [15.0; 3];
        assert_eq!(f.sample(&x, &theta, &mut a).unwrap(), f.sample(&x, &theta, &mut b).unwrap());
    }

    #[test]
    fn mvn_log_density_matches_direct_formula() {
        let f = DensityFamily::multivariate_normal(3, DecisionMap::Identity).unwrap();
        let theta = newsvendor_theta();
        let xi = [11.0, 13.0, 22.0];
        let v = f.log_density(&xi, &[0.0; 3], &theta).unwrap();
        let cov = covariance_from_params(&theta.0[3..6], &theta.0[6..9], 3).unwrap();
        let w = Whitening::from_covariance(&cov, 3).unwrap();
        let r = [1.0, -2.0, 2.0];
        let mut z = [0.0; 3];
        w.whiten(&r, &mut z);
        let mut p = [0.0; 3];
        w.unwhiten_transpose(&z, &mut p);
        let quad: f64 = r.iter().zip(p).map(|(a, b)| a * b).sum();
        let c = &cov;
        let det = c[0] * (c[4] * c[8] - c[5] * c[7]) - c[1] * (c[3] * c[8] - c[5] * c[6])
            + c[2] * (c[3] * c[7] - c[4] * c[6]);
        let expected = -0.5 * quad - 0.5 * ((2.0 * PI).powi(3) * det).ln();
        assert!((v - expected).abs() < 1e-12);
    }
}
