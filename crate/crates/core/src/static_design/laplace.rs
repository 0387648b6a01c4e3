use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{ModelSpec, Observation, Params};
use crate::smc::{log_det_spd, log_target};

/// Eigenvalue floor used to repair a finite-difference Hessian that is not
/// positive definite.
pub const HESSIAN_FLOOR: f64 = 1e-6;
/// Prior draws used as extra optimizer starts, besides the prior mean.
pub const EXTRA_STARTS: usize = 4;
const MAX_ITERS: usize = 200;
const MAX_HALVINGS: usize = 50;
const GRAD_TOL: f64 = 1e-8;
const POLISH_STEPS: usize = 6;

/// A log joint density over unconstrained coordinates; the seam through which
/// synthetic targets reach the Laplace machinery.
pub trait LogJoint: Sync {
    fn dim(&self) -> usize;
    /// `-inf` where the density cannot be evaluated.
    fn log_joint(&self, theta: &[f64]) -> f64;
}

/// Log prior plus log-likelihood of a model on a set of observations.
pub struct ModelLogJoint<'a> {
    pub model: &'a ModelSpec<f64>,
    pub observations: &'a [Observation<f64>],
}

impl LogJoint for ModelLogJoint<'_> {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn log_joint(&self, theta: &[f64]) -> f64 {
        log_target(self.model, &Params::from_coords(theta), self.observations)
    }
}

/// Normal approximation at the posterior mode.
#[derive(Clone, Debug, PartialEq)]
pub struct LaplaceFit {
    pub mode: Vec<f64>,
    /// Inverse of the negative Hessian of the log joint at the mode.
    pub cov: DMatrix<f64>,
    pub log_marginal: f64,
    pub log_joint_at_mode: f64,
    /// Set when the Hessian needed eigenvalue flooring.
    pub repaired: bool,
}

impl LaplaceFit {
    pub fn dim(&self) -> usize {
        self.mode.len()
    }

    pub fn params(&self) -> Params<f64> {
        Params::from_coords(&self.mode)
    }
}

fn fd_step(x: f64, scale: f64) -> f64 {
    scale * (1.0 + x.abs())
}

/// Central-difference gradient of the log joint.
pub fn gradient<L: LogJoint + ?Sized>(target: &L, x: &[f64]) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = fd_step(x[i], 1e-6);
            probe[i] = x[i] + h;
            let up = target.log_joint(&probe);
            probe[i] = x[i] - h;
            let down = target.log_joint(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// Central-difference Hessian of the log joint with per-coordinate step
/// `1e-4 · (1 + |x_i|)`.
pub fn hessian<L: LogJoint + ?Sized>(target: &L, x: &[f64]) -> DMatrix<f64> {
    let p = x.len();
    let h: Vec<f64> = x.iter().map(|&v| fd_step(v, 1e-4)).collect();
    let f0 = target.log_joint(x);
    let mut probe = x.to_vec();
    let mut eval = |shifts: &[(usize, f64)]| {
        probe.copy_from_slice(x);
        for &(i, s) in shifts {
            probe[i] += s;
        }
        target.log_joint(&probe)
    };
    let mut out = DMatrix::zeros(p, p);
    for i in 0..p {
        let up = eval(&[(i, h[i])]);
        let down = eval(&[(i, -h[i])]);
        out[(i, i)] = (up - 2.0 * f0 + down) / (h[i] * h[i]);
        for j in 0..i {
            let pp = eval(&[(i, h[i]), (j, h[j])]);
            let pm = eval(&[(i, h[i]), (j, -h[j])]);
            let mp = eval(&[(i, -h[i]), (j, h[j])]);
            let mm = eval(&[(i, -h[i]), (j, -h[j])]);
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    out
}

/// Quasi-Newton (BFGS) ascent with Armijo backtracking. Stops on a small
/// gradient, a stalled line search or `MAX_ITERS`; the best point so far is
/// returned in every case.
fn bfgs<L: LogJoint + ?Sized>(target: &L, start: &[f64]) -> Option<(Vec<f64>, f64)> {
    let p = start.len();
    let neg = |x: &DVector<f64>| -target.log_joint(x.as_slice());
    let neg_grad = |x: &DVector<f64>| -DVector::from_vec(gradient(target, x.as_slice()));
    let mut x = DVector::from_column_slice(start);
    let mut f = neg(&x);
    if !f.is_finite() {
        return None;
    }
    let mut g = neg_grad(&x);
    let mut h_inv = DMatrix::<f64>::identity(p, p);
    for iter in 0..MAX_ITERS {
        if g.amax() < GRAD_TOL {
            break;
        }
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(p, p);
            dir = -g.clone();
            slope = -g.norm_squared();
        }
        let mut t = 1.0;
        let mut next = None;
        for _ in 0..MAX_HALVINGS {
            let xn = &x + &dir * t;
            let fn_ = neg(&xn);
            if fn_.is_finite() && fn_ <= f + 1e-4 * t * slope {
                next = Some((xn, fn_));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_)) = next else { break };
        let gn = neg_grad(&xn);
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if iter == 0 {
                h_inv *= sy / y.norm_squared();
            }
            let rho = 1.0 / sy;
            let eye = DMatrix::<f64>::identity(p, p);
            let left = &eye - &s * y.transpose() * rho;
            let right = &eye - &y * s.transpose() * rho;
            h_inv = &left * &h_inv * &right + &s * s.transpose() * rho;
        }
        let stalled = (f - fn_).abs() <= 1e-15 * (1.0 + f.abs());
        x = xn;
        f = fn_;
        g = gn;
        if stalled {
            break;
        }
    }
    Some((x.as_slice().to_vec(), -f))
}

/// A few Newton steps on the finite-difference derivatives, kept only while
/// they improve the log joint.
fn polish<L: LogJoint + ?Sized>(target: &L, mut x: Vec<f64>, mut f: f64) -> (Vec<f64>, f64) {
    for _ in 0..POLISH_STEPS {
        let g = DVector::from_vec(gradient(target, &x));
        let neg_h = -hessian(target, &x);
        let Some(chol) = neg_h.cholesky() else { break };
        let step = chol.solve(&g);
        let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + s).collect();
        let fc = target.log_joint(&cand);
        if !(fc >= f) {
            break;
        }
        let done = step.norm() < 1e-12 * (1.0 + DVector::from_vec(x.clone()).norm());
        x = cand;
        f = fc;
        if done {
            break;
        }
    }
    (x, f)
}

/// Floors the eigenvalues of a symmetric matrix at `floor`.
pub fn floor_eigenvalues(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig
        .eigenvalues
        .map(|v| if v.is_finite() { v.max(floor) } else { floor });
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// Laplace approximation of `target`: multi-start quasi-Newton ascent from
/// `starts` (best mode retained), then a finite-difference Hessian.
pub fn laplace_fit_target<L: LogJoint + ?Sized>(
    target: &L,
    starts: &[Vec<f64>],
) -> Result<LaplaceFit> {
    let p = target.dim();
    if starts.is_empty() || starts.iter().any(|s| s.len() != p) {
        return Err(Error::InvalidParameter(format!(
            "need starting points of dimension {p}"
        )));
    }
    let (x, f) = starts
        .iter()
        .filter_map(|s| bfgs(target, s))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| Error::FitFailure("optimizer failed from every starting point".into()))?;
    let (mode, f) = polish(target, x, f);
    let mut neg_h = -hessian(target, &mode);
    neg_h = (&neg_h + neg_h.transpose()) * 0.5;
    if neg_h.iter().any(|v| !v.is_finite()) {
        return Err(Error::FitFailure(
            "Hessian is not finite at the mode".into(),
        ));
    }
    let spd = neg_h.clone().cholesky().is_some()
        && SymmetricEigen::new(neg_h.clone()).eigenvalues.min() >= HESSIAN_FLOOR;
    let repaired = !spd;
    if repaired {
        neg_h = floor_eigenvalues(&neg_h, HESSIAN_FLOOR);
    }
    let cov = neg_h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::FitFailure("Hessian repair failed".into()))?
        .inverse();
    let log_det_cov =
        -log_det_spd(&neg_h).ok_or_else(|| Error::FitFailure("Hessian repair failed".into()))?;
    let log_marginal = 0.5 * p as f64 * (2.0 * std::f64::consts::PI).ln() + 0.5 * log_det_cov + f;
    if !log_marginal.is_finite() {
        return Err(Error::FitFailure(format!("log marginal is {log_marginal}")));
    }
    Ok(LaplaceFit {
        mode,
        cov,
        log_marginal,
        log_joint_at_mode: f,
        repaired,
    })
}

/// Starting points: the prior mean plus `EXTRA_STARTS` prior draws.
pub fn default_starts<R: Rng + ?Sized>(model: &ModelSpec<f64>, rng: &mut R) -> Vec<Vec<f64>> {
    let mean: Vec<f64> = model.prior.coordinates().iter().map(|c| c.mean).collect();
    let mut starts = vec![mean];
    starts.extend((0..EXTRA_STARTS).map(|_| model.prior_sample(rng).coords()));
    starts
}

/// Laplace fit of model `model` to `observations`.
pub fn laplace_fit<R: Rng + ?Sized>(
    model: &ModelSpec<f64>,
    observations: &[Observation<f64>],
    rng: &mut R,
) -> Result<LaplaceFit> {
    let starts = default_starts(model, rng);
    laplace_fit_target(
        &ModelLogJoint {
            model,
            observations,
        },
        &starts,
    )
}
