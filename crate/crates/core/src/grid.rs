//! Log-space Bayesian posterior over a finite parameter grid.
//!
//! Weights are kept as max-shifted, renormalized log-probabilities; raw
//! likelihood products underflow after a few hundred observations. The
//! normalized probabilities are cached alongside so that sampling does not
//! pay for a second pass of exponentials.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::dist::{
    check_exp_mean, covariance_from_params, exp_loc_score, exp_loglik, normal_loc_score,
    normal_log_norm, normal_loglik, sq_dist, DensityFamily, FamilyKind, ParamPoint, Whitening,
};
use crate::error::{Error, Result};
use crate::quad;

/// Largest observation dimension handled by the multivariate kernel.
pub const MAX_MVN_DIM: usize = 16;

/// `exp(d)` underflows to zero below this.
const EXP_UNDERFLOW: f64 = -745.2;

/// Grid construction recipe.
#[derive(Debug, Clone, PartialEq)]
pub enum GridSpec {
    Points(Vec<ParamPoint>),
    /// Cartesian product of per-component value sets. The first component
    /// varies fastest, so points sharing every later component are contiguous.
    Cartesian(Vec<Vec<f64>>),
}

impl GridSpec {
    /// `{lo, lo+1, ..., hi}` on a single component.
    pub fn integer_range(lo: i64, hi: i64) -> Self {
        GridSpec::Cartesian(vec![(lo..=hi).map(|v| v as f64).collect()])
    }

    pub fn param_dim(&self) -> usize {
        match self {
            GridSpec::Points(p) => p.first().map_or(0, ParamPoint::len),
            GridSpec::Cartesian(axes) => axes.len(),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridSpec::Points(p) => p.len(),
            GridSpec::Cartesian(axes) => axes.iter().map(Vec::len).product(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major `len × param_dim` coordinates.
    pub fn flat_coords(&self) -> Result<Vec<f64>> {
        let dim = self.param_dim();
        match self {
            GridSpec::Points(points) => {
                let mut out = Vec::with_capacity(points.len() * dim);
                for p in points {
                    if p.len() != dim {
                        return Err(Error::DimensionMismatch {
                            what: "grid point",
                            expected: dim,
                            got: p.len(),
                        });
                    }
                    out.extend_from_slice(p.components());
                }
                Ok(out)
            }
            GridSpec::Cartesian(axes) => {
                let n = self.len();
                let mut out = Vec::with_capacity(n * dim);
                let mut idx = vec![0usize; dim];
                for _ in 0..n {
                    out.extend(idx.iter().zip(axes).map(|(&i, axis)| axis[i]));
                    for (k, axis) in axes.iter().enumerate() {
                        idx[k] += 1;
                        if idx[k] < axis.len() {
                            break;
                        }
                        idx[k] = 0;
                    }
                }
                Ok(out)
            }
        }
    }
}

/// KL or L1 divergence estimate; `stderr` is set for Monte Carlo estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergence {
    pub value: f64,
    pub stderr: Option<f64>,
}

#[derive(Debug)]
struct CovGroup {
    start: usize,
    end: usize,
    white: Whitening,
}

/// Slack beyond the underflow cutoff so rounding in a bound never prunes a live term.
const PRUNE_MARGIN: f64 = 746.0;

/// Per-point likelihood evaluation with cached scale factorizations.
#[derive(Debug)]
enum Kernel {
    Normal { sigma: f64, log_norm: f64, loc: Vec<f64> },
    Exponential { loc: Vec<f64> },
    /// Points in runs sharing a covariance; `wloc` holds each point's `L^{-1} μ`.
    Mvn { dim: usize, wloc: Vec<f64>, groups: Vec<CovGroup> },
}

/// Calls `f(j, |u - w_j|²)` for each `dim`-sized row `w_j` of `wloc`.
#[inline(always)]
fn for_each_sq_dist(dim: usize, u: &[f64], wloc: &[f64], f: impl FnMut(usize, f64)) {
    match dim {
        1 => sq_dist_fixed::<1>(u, wloc, f),
        2 => sq_dist_fixed::<2>(u, wloc, f),
        3 => sq_dist_fixed::<3>(u, wloc, f),
        4 => sq_dist_fixed::<4>(u, wloc, f),
        _ => {
            let mut f = f;
            for (j, w) in wloc.chunks_exact(dim).enumerate() {
                f(j, sq_dist(u, w));
            }
        }
    }
}

#[inline(always)]
fn sq_dist_fixed<const D: usize>(u: &[f64], wloc: &[f64], mut f: impl FnMut(usize, f64)) {
    let u: [f64; D] = u[..D].try_into().expect("whitened residual has the kernel dimension");
    for (j, w) in wloc.chunks_exact(D).enumerate() {
        let mut q = 0.0;
        for k in 0..D {
            let z = u[k] - w[k];
            q += z * z;
        }
        f(j, q);
    }
}

/// Joint terms `log π(θ_i) + log f(ξ; θ_i)` over the blocks that can carry weight.
struct Terms {
    max: f64,
    /// `(start, end, group)` ranges of `buf` that were evaluated.
    active: Vec<(usize, usize, usize)>,
}

impl Kernel {
    fn groups(&self) -> &[CovGroup] {
        match self {
            Kernel::Mvn { groups, .. } => groups,
            _ => &[],
        }
    }

    /// `out[i] += log f(ξ; θ_i + offset)`.
    fn add_loglik(&self, xi: &[f64], offset: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            Kernel::Normal { sigma, log_norm, loc } => {
                let (y, o) = (xi[0], offset[0]);
                for (acc, l) in out.iter_mut().zip(loc) {
                    *acc += normal_loglik(y, l + o, *sigma, *log_norm);
                }
            }
            Kernel::Exponential { loc } => {
                let (y, o) = (xi[0], offset[0]);
                for (acc, l) in out.iter_mut().zip(loc) {
                    let m = l + o;
                    check_exp_mean(m)?;
                    *acc += exp_loglik(y, m);
                }
            }
            Kernel::Mvn { dim, wloc, groups } => {
                let d = *dim;
                for g in groups {
                    let u = g.white.whiten_residual(xi, offset);
                    let log_norm = g.white.log_norm;
                    let block = &mut out[g.start..g.end];
                    for_each_sq_dist(d, &u, &wloc[g.start * d..g.end * d], |j, q| {
                        block[j] += log_norm - 0.5 * q;
                    });
                }
            }
        }
        Ok(())
    }

    /// Fills `buf` with joint terms. For grouped kernels, a group whose
    /// upper bound `max_i log π_i + log_norm` sits more than the underflow
    /// cutoff below an attained term is skipped; its weights would be exactly 0.
    fn joint_terms(
        &self,
        xi: &[f64],
        offset: &[f64],
        log_post: &[f64],
        group_max: &[f64],
        buf: &mut Vec<f64>,
    ) -> Result<Terms> {
        buf.resize(log_post.len(), f64::NEG_INFINITY);
        match self {
            Kernel::Normal { .. } | Kernel::Exponential { .. } => {
                buf.copy_from_slice(log_post);
                self.add_loglik(xi, offset, buf)?;
                let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                Ok(Terms { max, active: vec![(0, buf.len(), 0)] })
            }
            Kernel::Mvn { dim, wloc, groups } => {
                let d = *dim;
                let eval = |gi: usize, buf: &mut [f64]| -> f64 {
                    let g = &groups[gi];
                    let u = g.white.whiten_residual(xi, offset);
                    let log_norm = g.white.log_norm;
                    let mut m = f64::NEG_INFINITY;
                    let lp = &log_post[g.start..g.end];
                    let block = &mut buf[g.start..g.end];
                    for_each_sq_dist(d, &u, &wloc[g.start * d..g.end * d], |j, q| {
                        let t = lp[j] + (log_norm - 0.5 * q);
                        block[j] = t;
                        m = m.max(t);
                    });
                    m
                };
                let bound = |gi: usize| group_max[gi] + groups[gi].white.log_norm;
                let seed = (0..groups.len())
                    .max_by(|a, b| bound(*a).total_cmp(&bound(*b)))
                    .ok_or(Error::EmptyGrid)?;
                let floor = eval(seed, buf) - PRUNE_MARGIN;
                let mut max = f64::NEG_INFINITY;
                let mut active = Vec::new();
                for gi in 0..groups.len() {
                    if !(bound(gi) >= floor) {
                        continue;
                    }
                    let m = if gi == seed {
                        buf[groups[gi].start..groups[gi].end]
                            .iter()
                            .copied()
                            .fold(f64::NEG_INFINITY, f64::max)
                    } else {
                        eval(gi, buf)
                    };
                    max = max.max(m);
                    active.push((groups[gi].start, groups[gi].end, gi));
                }
                Ok(Terms { max, active })
            }
        }
    }

    /// Returns `(Σ_i w_i ∇_loc log f_i, Σ_i w_i)` with `w_i = exp(term_i - max)`
    /// over the active ranges of `buf`.
    fn weighted_location_score(&self, xi: &[f64], offset: &[f64], buf: &[f64], terms: &Terms) -> (Vec<f64>, f64) {
        let max = terms.max;
        let mut total_w = 0.0;
        match self {
            Kernel::Normal { sigma, loc, .. } => {
                let (y, o) = (xi[0], offset[0]);
                let mut acc = 0.0;
                for (t, l) in buf.iter().zip(loc) {
                    let d = t - max;
                    if d < EXP_UNDERFLOW {
                        continue;
                    }
                    let w = d.exp();
                    total_w += w;
                    acc += w * normal_loc_score(y, l + o, *sigma);
                }
                (vec![acc], total_w)
            }
            Kernel::Exponential { loc } => {
                let (y, o) = (xi[0], offset[0]);
                let mut acc = 0.0;
                for (t, l) in buf.iter().zip(loc) {
                    let d = t - max;
                    if d < EXP_UNDERFLOW {
                        continue;
                    }
                    let w = d.exp();
                    total_w += w;
                    acc += w * exp_loc_score(y, l + o);
                }
                (vec![acc], total_w)
            }
            Kernel::Mvn { dim, wloc, groups } => {
                let d = *dim;
                let mut zsum = vec![0.0; d];
                let mut g_out = vec![0.0; d];
                let mut total = vec![0.0; d];
                for &(start, end, gi) in &terms.active {
                    let white = &groups[gi].white;
                    let u = white.whiten_residual(xi, offset);
                    let mut touched = false;
                    zsum.fill(0.0);
                    for i in start..end {
                        let diff = buf[i] - max;
                        if diff < EXP_UNDERFLOW {
                            continue;
                        }
                        let wt = diff.exp();
                        total_w += wt;
                        touched = true;
                        let w = &wloc[i * d..(i + 1) * d];
                        for k in 0..d {
                            zsum[k] += wt * (u[k] - w[k]);
                        }
                    }
                    if touched {
                        white.unwhiten_transpose(&zsum, &mut g_out);
                        for k in 0..d {
                            total[k] += g_out[k];
                        }
                    }
                }
                (total, total_w)
            }
        }
    }
}

/// Immutable part of a grid, shared between replications.
#[derive(Debug)]
pub struct GridSupport {
    family: DensityFamily,
    param_dim: usize,
    coords: Vec<f64>,
    log_prior: Vec<f64>,
    true_index: Option<usize>,
    excluded: usize,
    kernel: Kernel,
}

impl GridSupport {
    pub fn len(&self) -> usize {
        self.log_prior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_prior.is_empty()
    }

    pub fn family(&self) -> &DensityFamily {
        &self.family
    }

    pub fn true_index(&self) -> Option<usize> {
        self.true_index
    }

    /// Number of input points dropped as invalid for the family.
    pub fn excluded(&self) -> usize {
        self.excluded
    }

    pub fn point(&self, i: usize) -> ParamPoint {
        ParamPoint(self.coords[i * self.param_dim..(i + 1) * self.param_dim].to_vec())
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.log_prior
    }

    fn build(
        family: &DensityFamily,
        param_dim: usize,
        coords: &[f64],
        theta_true: Option<&ParamPoint>,
    ) -> Result<Self> {
        if param_dim != family.param_dim() {
            return Err(Error::DimensionMismatch {
                what: "grid parameter dimension",
                expected: family.param_dim(),
                got: param_dim,
            });
        }
        let n_in = coords.len() / param_dim.max(1);
        let mut kept: Vec<f64> = Vec::with_capacity(coords.len());
        let kernel = match family.kind() {
            FamilyKind::NormalKnownVar { sigma } => {
                for c in coords.chunks_exact(param_dim) {
                    if c[0].is_finite() {
                        kept.push(c[0]);
                    }
                }
                Kernel::Normal { sigma, log_norm: normal_log_norm(sigma), loc: kept.clone() }
            }
            FamilyKind::ExponentialByMean => {
                for c in coords.chunks_exact(param_dim) {
                    if c[0].is_finite() && c[0] > 0.0 {
                        kept.push(c[0]);
                    }
                }
                Kernel::Exponential { loc: kept.clone() }
            }
            FamilyKind::MultivariateNormal { dim } => {
                if dim > MAX_MVN_DIM {
                    return Err(Error::InvalidParameter(format!(
                        "multivariate grids support dim <= {MAX_MVN_DIM}"
                    )));
                }
                let mut wloc = Vec::with_capacity(n_in * dim);
                let mut w = vec![0.0; dim];
                let mut groups: Vec<CovGroup> = Vec::new();
                let mut cache: HashMap<Vec<u64>, Option<Whitening>> = HashMap::new();
                let mut n_kept = 0;
                for c in coords.chunks_exact(param_dim) {
                    if c.iter().any(|v| !v.is_finite()) {
                        continue;
                    }
                    let scale = &c[dim..];
                    let extends_last = groups.last().is_some_and(|g| {
                        let prev = &kept[(g.end - 1) * param_dim + dim..g.end * param_dim];
                        prev == scale
                    });
                    if !extends_last {
                        let key: Vec<u64> = scale.iter().map(|v| v.to_bits()).collect();
                        let white = cache
                            .entry(key)
                            .or_insert_with(|| {
                                covariance_from_params(&scale[..dim], &scale[dim..], dim)
                                    .and_then(|cov| Whitening::from_covariance(&cov, dim))
                                    .ok()
                            })
                            .clone();
                        let Some(white) = white else { continue };
                        groups.push(CovGroup { start: n_kept, end: n_kept, white });
                    }
                    kept.extend_from_slice(c);
                    let g = groups.last().expect("group pushed above");
                    g.white.whiten(&c[..dim], &mut w);
                    wloc.extend_from_slice(&w);
                    n_kept += 1;
                    groups.last_mut().expect("group pushed above").end = n_kept;
                }
                Kernel::Mvn { dim, wloc, groups }
            }
        };
        let coords_kept = kept;
        let n = coords_kept.len() / param_dim;
        if n == 0 {
            return Err(Error::EmptyGrid);
        }
        let excluded = n_in - n;
        if excluded > 0 {
            log::warn!("excluded {excluded} of {n_in} grid points invalid for the family");
        }
        let true_index = match theta_true {
            Some(t) => {
                let found = coords_kept
                    .chunks_exact(param_dim)
                    .position(|c| c == t.components());
                if found.is_none() {
                    return Err(Error::InvalidParameter(
                        "true parameter is not a grid point".into(),
                    ));
                }
                found
            }
            None => None,
        };
        let log_prior = vec![-(n as f64).ln(); n];
        Ok(GridSupport {
            family: family.clone(),
            param_dim,
            coords: coords_kept,
            log_prior,
            true_index,
            excluded,
            kernel,
        })
    }
}

/// Posterior state over a shared [`GridSupport`].
#[derive(Debug, Clone)]
pub struct ParameterGrid {
    support: Arc<GridSupport>,
    log_posterior: Vec<f64>,
    probs: Vec<f64>,
    cum_loglik: Vec<f64>,
    absorbed: usize,
    /// Largest log-posterior value within each covariance group.
    group_max: Vec<f64>,
    scratch: Vec<f64>,
}

impl ParameterGrid {
    /// Uniform prior over the valid points of `points`.
    pub fn uniform(points: &[ParamPoint], family: &DensityFamily) -> Result<Self> {
        let spec = GridSpec::Points(points.to_vec());
        Self::from_spec(&spec, family, None)
    }

    /// Uniform prior over the grid described by `spec`, marking `theta_true` if given.
    pub fn from_spec(
        spec: &GridSpec,
        family: &DensityFamily,
        theta_true: Option<&ParamPoint>,
    ) -> Result<Self> {
        if spec.is_empty() {
            return Err(Error::EmptyGrid);
        }
        let coords = spec.flat_coords()?;
        let support = GridSupport::build(family, spec.param_dim(), &coords, theta_true)?;
        Ok(Self::fresh(Arc::new(support)))
    }

    /// A prior-state grid over an existing support.
    pub fn fresh(support: Arc<GridSupport>) -> Self {
        let n = support.len();
        let log_posterior = support.log_prior.clone();
        let probs = log_posterior.iter().map(|v| v.exp()).collect();
        let mut grid = ParameterGrid {
            support,
            log_posterior,
            probs,
            cum_loglik: vec![0.0; n],
            absorbed: 0,
            group_max: Vec::new(),
            scratch: Vec::new(),
        };
        grid.refresh_group_max();
        grid
    }

    fn refresh_group_max(&mut self) {
        let lp = &self.log_posterior;
        self.group_max.clear();
        self.group_max.extend(
            self.support
                .kernel
                .groups()
                .iter()
                .map(|g| lp[g.start..g.end].iter().copied().fold(f64::NEG_INFINITY, f64::max)),
        );
    }

    /// Same support and likelihood history, posterior replaced by normalized `log_weights`.
    pub fn with_log_posterior(&self, log_weights: &[f64]) -> Result<Self> {
        if log_weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                what: "log weights",
                expected: self.len(),
                got: log_weights.len(),
            });
        }
        let mut out = self.clone();
        out.log_posterior.copy_from_slice(log_weights);
        out.normalize()?;
        Ok(out)
    }

    pub fn support(&self) -> &Arc<GridSupport> {
        &self.support
    }

    pub fn family(&self) -> &DensityFamily {
        &self.support.family
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn point(&self, i: usize) -> ParamPoint {
        self.support.point(i)
    }

    pub fn true_index(&self) -> Option<usize> {
        self.support.true_index
    }

    pub fn log_prior(&self) -> &[f64] {
        &self.support.log_prior
    }

    pub fn log_posterior(&self) -> &[f64] {
        &self.log_posterior
    }

    /// Normalized posterior probabilities.
    pub fn probabilities(&self) -> &[f64] {
        &self.probs
    }

    pub fn cum_loglik(&self) -> &[f64] {
        &self.cum_loglik
    }

    /// Observations absorbed so far.
    pub fn absorbed(&self) -> usize {
        self.absorbed
    }

    fn offset(&self, x: &[f64]) -> Result<Vec<f64>> {
        let family = &self.support.family;
        family.map().offset(x, family.obs_dim())
    }

    fn check_obs(&self, xi: &[f64]) -> Result<()> {
        let d = self.support.family.obs_dim();
        if xi.len() != d {
            return Err(Error::DimensionMismatch { what: "observation", expected: d, got: xi.len() });
        }
        Ok(())
    }

    /// Absorbs a batch observed under decision `x` (ignored by identity maps).
    pub fn update(&mut self, batch: &[Vec<f64>], x: &[f64]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::InvalidParameter("empty observation batch".into()));
        }
        let offset = self.offset(x)?;
        let n = self.len();
        let mut ll = std::mem::take(&mut self.scratch);
        ll.clear();
        ll.resize(n, 0.0);
        for y in batch {
            self.check_obs(y)?;
            self.support.kernel.add_loglik(y, &offset, &mut ll)?;
        }
        let mut max = f64::NEG_INFINITY;
        let mut nan = false;
        for (a, b) in self.log_posterior.iter().zip(&ll) {
            max = max.max(a + b);
            nan |= b.is_nan();
        }
        if max == f64::NEG_INFINITY {
            self.scratch = ll;
            return Err(Error::LikelihoodUnderflowEverywhere);
        }
        if !max.is_finite() || nan {
            self.scratch = ll;
            return Err(Error::InvalidParameter("non-finite log-likelihood".into()));
        }
        for ((lp, cl), l) in self.log_posterior.iter_mut().zip(&mut self.cum_loglik).zip(&ll) {
            *lp += l;
            *cl += l;
        }
        self.scratch = ll;
        self.absorbed += batch.len();
        self.normalize_with_max(max)
    }

    fn normalize(&mut self) -> Result<()> {
        let max = self.log_posterior.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.normalize_with_max(max)
    }

    fn normalize_with_max(&mut self, max: f64) -> Result<()> {
        if max == f64::NEG_INFINITY {
            return Err(Error::LikelihoodUnderflowEverywhere);
        }
        if !max.is_finite() {
            return Err(Error::InvalidParameter("non-finite log weight".into()));
        }
        // Neumaier-compensated sum keeps the 2·10^6-point normalization at ~1 ulp.
        let mut sum = 0.0;
        let mut comp = 0.0;
        for (p, lp) in self.probs.iter_mut().zip(&self.log_posterior) {
            let d = lp - max;
            let e = if d < EXP_UNDERFLOW { 0.0 } else { d.exp() };
            *p = e;
            let t = sum + e;
            if sum.abs() >= e.abs() {
                comp += (sum - t) + e;
            } else {
                comp += (e - t) + sum;
            }
            sum = t;
        }
        let sum = sum + comp;
        let ln_sum = sum.ln();
        let inv = 1.0 / sum;
        let groups = self.support.kernel.groups();
        self.group_max.clear();
        if groups.is_empty() {
            for (p, lp) in self.probs.iter_mut().zip(&mut self.log_posterior) {
                *lp = (*lp - max) - ln_sum;
                *p *= inv;
            }
        } else {
            for g in groups {
                let mut m = f64::NEG_INFINITY;
                let lps = &mut self.log_posterior[g.start..g.end];
                for (p, lp) in self.probs[g.start..g.end].iter_mut().zip(lps) {
                    *lp = (*lp - max) - ln_sum;
                    *p *= inv;
                    m = m.max(*lp);
                }
                self.group_max.push(m);
            }
        }
        Ok(())
    }

    /// Index drawn with probability `π_t(θ_i)`.
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, p) in self.probs.iter().enumerate() {
            if *p > 0.0 {
                acc += p;
                last_positive = i;
                if u < acc {
                    return i;
                }
            }
        }
        last_positive
    }

    pub fn sample_theta<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamPoint {
        self.point(self.sample_index(rng))
    }

    fn joint_terms(&self, xi: &[f64], offset: &[f64], buf: &mut Vec<f64>) -> Result<Terms> {
        self.check_obs(xi)?;
        self.support
            .kernel
            .joint_terms(xi, offset, &self.log_posterior, &self.group_max, buf)
    }

    /// `log f̂_t(ξ; x)` with `f̂_t = E_{π_t} f(·; x, θ)`.
    pub fn mixture_log_density(&self, xi: &[f64], x: &[f64]) -> Result<f64> {
        let offset = self.offset(x)?;
        let mut buf = Vec::new();
        self.mixture_log_density_at(xi, &offset, &mut buf)
    }

    fn mixture_log_density_at(&self, xi: &[f64], offset: &[f64], buf: &mut Vec<f64>) -> Result<f64> {
        let terms = self.joint_terms(xi, offset, buf)?;
        let max = terms.max;
        if max == f64::NEG_INFINITY {
            return Ok(f64::NEG_INFINITY);
        }
        let s: f64 = terms
            .active
            .iter()
            .flat_map(|&(a, b, _)| &buf[a..b])
            .map(|t| t - max)
            .filter(|d| *d >= EXP_UNDERFLOW)
            .map(f64::exp)
            .sum();
        Ok(max + s.ln())
    }

    /// `∇_x f̂_t(ξ; x) / f̂_t(ξ; x)` as a posterior-predictive weighted average of
    /// per-point scores.
    pub fn mixture_score(&self, xi: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        let mut buf = Vec::new();
        self.mixture_score_with(xi, x, &mut buf)
    }

    /// [`Self::mixture_score`] reusing a caller-owned scratch buffer.
    pub fn mixture_score_with(&self, xi: &[f64], x: &[f64], buf: &mut Vec<f64>) -> Result<Vec<f64>> {
        let map = self.support.family.map();
        if map.is_identity() {
            return Ok(vec![0.0; x.len()]);
        }
        let offset = self.offset(x)?;
        let terms = self.joint_terms(xi, &offset, buf)?;
        if terms.max == f64::NEG_INFINITY {
            return Err(Error::LikelihoodUnderflowEverywhere);
        }
        let (acc, total_w) = self.support.kernel.weighted_location_score(xi, &offset, buf, &terms);
        let loc_grad: Vec<f64> = acc.iter().map(|a| a / total_w).collect();
        map.pullback(x, &loc_grad)
    }

    pub fn posterior_mass_true(&self) -> Result<f64> {
        let i = self.support.true_index.ok_or(Error::TrueIndexUnset)?;
        Ok(self.probs[i])
    }

    /// Grid point with the largest accumulated log-likelihood, lowest index on ties.
    pub fn mle_index(&self) -> Result<usize> {
        if self.absorbed == 0 {
            return Err(Error::NoDataYet);
        }
        let mut best = 0;
        for (i, v) in self.cum_loglik.iter().enumerate() {
            if *v > self.cum_loglik[best] {
                best = i;
            }
        }
        Ok(best)
    }

    pub fn mle_point(&self) -> Result<ParamPoint> {
        Ok(self.point(self.mle_index()?))
    }

    /// `d_t`: KL divergence from `f(·; x, θ^c)` to the posterior mixture at `x`.
    pub fn kl_true_to_mixture<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Divergence> {
        self.divergence(x, rng, DivergenceKind::Kl)
    }

    /// `∫ |f(·; x, θ^c) - f̂_t(·; x)|`, in `[0, 2]`.
    pub fn l1_true_to_mixture<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<Divergence> {
        self.divergence(x, rng, DivergenceKind::L1)
    }

    fn divergence<R: Rng + ?Sized>(
        &self,
        x: &[f64],
        rng: &mut R,
        kind: DivergenceKind,
    ) -> Result<Divergence> {
        let ti = self.support.true_index.ok_or(Error::TrueIndexUnset)?;
        let family = &self.support.family;
        let truth = family.prepare(&self.point(ti))?;
        let offset = self.offset(x)?;
        let mut buf = Vec::new();
        match family.kind() {
            FamilyKind::NormalKnownVar { .. } | FamilyKind::ExponentialByMean => {
                let mean = truth.location()[0] + offset[0];
                let (lo, hi) = match family.kind() {
                    FamilyKind::NormalKnownVar { sigma } => (mean - 12.0 * sigma, mean + 12.0 * sigma),
                    _ => (0.0, 40.0 * mean),
                };
                let mut failure = None;
                let mut integrand = |y: f64| -> f64 {
                    let lf = truth.log_density(&[y], &offset);
                    let lm = self.mixture_log_density_at(&[y], &offset, &mut buf);
                    match (lf, lm) {
                        (Ok(lf), Ok(lm)) => {
                            if lf == f64::NEG_INFINITY {
                                return 0.0;
                            }
                            let f = lf.exp();
                            match kind {
                                DivergenceKind::Kl => f * (lf - lm),
                                DivergenceKind::L1 => f.min(lm.exp()),
                            }
                        }
                        (Err(e), _) | (_, Err(e)) => {
                            failure.get_or_insert(e);
                            0.0
                        }
                    }
                };
                let v = quad::integrate(&mut integrand, lo, hi, 48, 1e-12);
                if let Some(e) = failure {
                    return Err(e);
                }
                let value = match kind {
                    // Rounding can leave a vanishing KL a hair below zero.
                    DivergenceKind::Kl => v.max(0.0),
                    DivergenceKind::L1 => (2.0 - 2.0 * v).clamp(0.0, 2.0),
                };
                Ok(Divergence { value, stderr: None })
            }
            FamilyKind::MultivariateNormal { .. } => {
                const DRAWS: usize = 10_000;
                let mut vals = Vec::with_capacity(DRAWS);
                for _ in 0..DRAWS {
                    let y = truth.sample(&offset, rng)?;
                    let lf = truth.log_density(&y, &offset)?;
                    let lm = self.mixture_log_density_at(&y, &offset, &mut buf)?;
                    vals.push(match kind {
                        DivergenceKind::Kl => lf - lm,
                        DivergenceKind::L1 => (1.0 - (lm - lf).exp()).abs(),
                    });
                }
                let n = DRAWS as f64;
                let mean = vals.iter().sum::<f64>() / n;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
                Ok(Divergence { value: mean, stderr: Some((var / n).sqrt()) })
            }
        }
    }
}

#[derive(Clone, Copy)]
enum DivergenceKind {
    Kl,
    L1,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::DecisionMap;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normal_grid(map: DecisionMap, hi: i64, truth: f64) -> ParameterGrid {
        let family = DensityFamily::normal_known_var(4.0, map).unwrap();
        ParameterGrid::from_spec(
            &GridSpec::integer_range(1, hi),
            &family,
            Some(&ParamPoint::scalar(truth)),
        )
        .unwrap()
    }

    fn degenerate(grid: &ParameterGrid, k: usize) -> ParameterGrid {
        let mut w = vec![f64::NEG_INFINITY; grid.len()];
        w[k] = 0.0;
        grid.with_log_posterior(&w).unwrap()
    }

    #[test]
    fn uniform_prior_weights() {
        let g = normal_grid(DecisionMap::Identity, 20, 9.0);
        assert_eq!(g.len(), 20);
        for p in g.probabilities() {
            assert!((p - 0.05).abs() < 1e-15);
        }
        assert_eq!(g.log_prior(), g.log_posterior());
        assert!((g.posterior_mass_true().unwrap() - 0.05).abs() < 1e-15);
    }

    #[test]
    fn single_point_grid_stays_degenerate() {
        let family = DensityFamily::normal_known_var(4.0, DecisionMap::Identity).unwrap();
        let mut g = ParameterGrid::uniform(&[ParamPoint::scalar(9.0)], &family).unwrap();
        g.update(&[vec![100.0], vec![-30.0]], &[0.0]).unwrap();
        assert_eq!(g.probabilities(), &[1.0]);
        assert_eq!(g.mle_point().unwrap(), ParamPoint::scalar(9.0));
    }

    #[test]
    fn empty_grid_rejected() {
        let family = DensityFamily::exponential_by_mean(DecisionMap::Identity).unwrap();
        let r = ParameterGrid::uniform(&[ParamPoint::scalar(-1.0)], &family);
        assert!(matches!(r, Err(Error::EmptyGrid)));
    }

    #[test]
    fn one_observation_posterior_symmetric() {
        let mut g = normal_grid(DecisionMap::Identity, 20, 9.0);
        g.update(&[vec![9.0]], &[0.0]).unwrap();
        let p = g.probabilities();
        assert!((p[7] - p[9]).abs() < 1e-16);
        let argmax = (0..20).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(argmax, 8);
        assert_eq!(g.mle_point().unwrap(), ParamPoint::scalar(9.0));
    }

    #[test]
    fn two_batches_equal_union() {
        let mut a = normal_grid(DecisionMap::AdditiveShift, 20, 9.0);
        let mut b = a.clone();
        let b1 = vec![vec![3.0], vec![12.5]];
        let b2 = vec![vec![7.25], vec![-1.0], vec![9.0]];
        a.update(&b1, &[1.5]).unwrap();
        a.update(&b2, &[1.5]).unwrap();
        let all: Vec<_> = b1.iter().chain(&b2).cloned().collect();
        b.update(&all, &[1.5]).unwrap();
        for (x, y) in a.log_posterior().iter().zip(b.log_posterior()) {
            assert!(((x - y) / y).abs() < 1e-10);
        }
    }

    #[test]
    fn underflow_everywhere_is_an_error() {
        let family = DensityFamily::exponential_by_mean(DecisionMap::Identity).unwrap();
        let mut g = ParameterGrid::from_spec(&GridSpec::integer_range(1, 5), &family, None).unwrap();
        let before = g.log_posterior().to_vec();
        assert!(matches!(
            g.update(&[vec![-1.0]], &[0.0]),
            Err(Error::LikelihoodUnderflowEverywhere)
        ));
        assert_eq!(g.log_posterior(), &before[..]);
    }

    #[test]
    fn degenerate_sampling_and_mixture() {
        let g = normal_grid(DecisionMap::AdditiveShift, 20, 9.0);
        let d = degenerate(&g, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..100 {
            assert_eq!(d.sample_index(&mut rng), 4);
        }
        let family = g.family().clone();
        let theta = g.point(4);
        let lm = d.mixture_log_density(&[2.0], &[0.5]).unwrap();
        let lf = family.log_density(&[2.0], &[0.5], &theta).unwrap();
        assert!((lm - lf).abs() < 1e-14);
        let ms = d.mixture_score(&[2.0], &[0.5]).unwrap();
        let ds = family.decision_score(&[2.0], &[0.5], &theta).unwrap();
        assert_eq!(ms, ds);
    }

    #[test]
    fn duplicate_points_mixture_equals_component() {
        let family = DensityFamily::exponential_by_mean(DecisionMap::QuadraticGap).unwrap();
        let p = ParamPoint::scalar(3.0);
        let g = ParameterGrid::uniform(&[p.clone(), p.clone()], &family).unwrap();
        let lm = g.mixture_log_density(&[1.7], &[1.0, 0.5]).unwrap();
        let lf = family.log_density(&[1.7], &[1.0, 0.5], &p).unwrap();
        assert!((lm - lf).abs() < 1e-14);
    }

    #[test]
    fn identity_mixture_score_is_zero() {
        let g = normal_grid(DecisionMap::Identity, 20, 9.0);
        assert_eq!(g.mixture_score(&[4.0], &[1.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn true_index_required() {
        let family = DensityFamily::normal_known_var(4.0, DecisionMap::Identity).unwrap();
        let g = ParameterGrid::from_spec(&GridSpec::integer_range(1, 3), &family, None).unwrap();
        assert!(matches!(g.posterior_mass_true(), Err(Error::TrueIndexUnset)));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(g.kl_true_to_mixture(&[0.0], &mut rng), Err(Error::TrueIndexUnset)));
    }

    #[test]
    fn mle_requires_data() {
        let g = normal_grid(DecisionMap::Identity, 5, 2.0);
        assert!(matches!(g.mle_point(), Err(Error::NoDataYet)));
    }

    #[test]
    fn cartesian_first_axis_fastest() {
        let spec = GridSpec::Cartesian(vec![vec![1.0, 2.0], vec![10.0, 20.0, 30.0]]);
        let c = spec.flat_coords().unwrap();
        assert_eq!(c, vec![1.0, 10.0, 2.0, 10.0, 1.0, 20.0, 2.0, 20.0, 1.0, 30.0, 2.0, 30.0]);
    }

    #[test]
    fn degenerate_divergences_vanish() {
        let g = normal_grid(DecisionMap::AdditiveShift, 20, 9.0);
        let d = degenerate(&g, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let kl = d.kl_true_to_mixture(&[1.0], &mut rng).unwrap();
        let l1 = d.l1_true_to_mixture(&[1.0], &mut rng).unwrap();
        assert!(kl.value.abs() < 1e-10, "{kl:?}");
        assert!(l1.value.abs() < 1e-10, "{l1:?}");
    }

    #[test]
    fn mvn_grid_excludes_non_pd_points() {
        let family = DensityFamily::multivariate_normal(3, DecisionMap::Identity).unwrap();
        let spec = GridSpec::Cartesian(vec![
            vec![0.0, 1.0],
            vec![0.0],
            vec![0.0],
            vec![1.0],
            vec![1.0],
            vec![1.0],
            vec![0.5],
            vec![0.5],
            vec![-0.9, 0.5],
        ]);
        let g = ParameterGrid::from_spec(&spec, &family, None).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(g.support().excluded(), 2);
        assert_eq!(g.point(0).components()[8], 0.5);
    }

    #[test]
    fn pruned_mvn_mixture_matches_brute_force() {
        let map = DecisionMap::PowerDemand { alpha: vec![1.0, 1.0], beta: vec![0.5, 0.5] };
        let family = DensityFamily::multivariate_normal(2, map).unwrap();
        let spec = GridSpec::Cartesian(vec![
            (0..8).map(|v| 4.0 + v as f64).collect(),
            (0..8).map(|v| 6.0 + v as f64).collect(),
            vec![0.5, 1.0, 2.0, 4.0],
            vec![0.5, 1.5, 3.0],
            vec![-0.4, 0.0, 0.3, 0.6],
        ]);
        let truth = ParamPoint::new(vec![7.0, 10.0, 1.0, 1.5, 0.3]);
        let mut g = ParameterGrid::from_spec(&spec, &family, Some(&truth)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = [4.0, 9.0];
        for _ in 0..4000 {
            let y = family.sample(&x, &truth, &mut rng).unwrap();
            g.update(&[y], &x).unwrap();
        }
        for probe in 0..20 {
            let x = [1.0 + probe as f64 * 0.7, 3.0 + probe as f64 * 0.3];
            let y = family.sample(&x, &truth, &mut rng).unwrap();
            let offset = g.offset(&x).unwrap();
            let mut buf = Vec::new();
            let terms = g.joint_terms(&y, &offset, &mut buf).unwrap();
            if probe == 0 {
                assert!(terms.active.len() < g.support.kernel.groups().len());
            }
            // Brute force over every point.
            let full: Vec<f64> = (0..g.len())
                .map(|i| g.log_posterior()[i] + family.log_density(&y, &x, &g.point(i)).unwrap())
                .collect();
            let m = full.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s: f64 = full.iter().map(|t| (t - m).exp()).sum();
            let expected = m + s.ln();
            let got = g.mixture_log_density(&y, &x).unwrap();
            assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0), "{got} vs {expected}");
            let mut score = vec![0.0; 2];
            for (i, t) in full.iter().enumerate() {
                let w = (t - m).exp() / s;
                let si = family.decision_score(&y, &x, &g.point(i)).unwrap();
                for k in 0..2 {
                    score[k] += w * si[k];
                }
            }
            let got = g.mixture_score(&y, &x).unwrap();
            for k in 0..2 {
                assert!((got[k] - score[k]).abs() <= 1e-10 * score[k].abs().max(1.0), "{got:?} vs {score:?}");
            }
        }
    }
}
