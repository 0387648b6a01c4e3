use std::ops::Range;

use rand::Rng;
use rand_distr::{Beta, Binomial, Distribution};

use crate::error::{Error, Result};
use crate::model::{expected_proportion, ModelSpec, Observation, ObservationFamily, Params};
use crate::scalar::{ln_choose, ln_rising, Scalar};

/// `(α, β)` of the beta-binomial with mean proportion `p` and over-dispersion
/// `λ = 1/(α + β)`.
#[inline]
pub fn beta_binomial_shapes<T: Scalar>(p: T, lambda: T) -> (T, T) {
    (p / lambda, (T::one() - p) / lambda)
}

/// Log pmf of `n` successes out of `n0` with mean proportion `p`;
/// `lambda` selects the beta-binomial.
pub fn log_pmf<T: Scalar>(n0: u32, n: u32, p: T, lambda: Option<T>) -> T {
    debug_assert!(n <= n0);
    let lc: T = ln_choose(n0, n);
    match lambda {
        None => lc + T::lit(f64::from(n)) * p.ln() + T::lit(f64::from(n0 - n)) * (-p).ln_1p(),
        Some(lambda) => {
            let (alpha, beta) = beta_binomial_shapes(p, lambda);
            lc + ln_rising(alpha, n) + ln_rising(beta, n0 - n) - ln_rising(alpha + beta, n0)
        }
    }
}

/// Fills `out[z] = log f(z)` for `z = 0..=d`, where `d = ln_choose.len() - 1`
/// and `ln_choose` is the row from [`crate::scalar::ln_choose_row`].
///
/// The beta-binomial row walks the pmf ratio
/// `f(z+1)/f(z) = (d−z)(z+α) / ((z+1)(d−z−1+β))`, one logarithm per outcome.
pub fn log_pmf_row<T: Scalar>(p: T, lambda: Option<T>, ln_choose: &[T], out: &mut [T]) {
    let d = ln_choose.len() - 1;
    debug_assert_eq!(out.len(), d + 1);
    match lambda {
        None => {
            let lp = p.ln();
            let lq = (-p).ln_1p();
            let df = T::of_usize(d);
            for (z, (o, &lc)) in out.iter_mut().zip(ln_choose).enumerate() {
                let zf = T::of_usize(z);
                *o = lc + zf * lp + (df - zf) * lq;
            }
        }
        Some(lambda) => {
            let (alpha, beta) = beta_binomial_shapes(p, lambda);
            let d32 = d as u32;
            let mut acc = ln_rising(beta, d32) - ln_rising(alpha + beta, d32);
            out[0] = acc;
            for z in 0..d {
                let zf = T::of_usize(z);
                let rem = T::of_usize(d - z);
                let num = rem * (zf + alpha);
                let den = (zf + T::one()) * (rem - T::one() + beta);
                acc = acc + (num / den).ln();
                out[z + 1] = acc;
            }
        }
    }
}

/// Exponentiated [`log_pmf_row`].
pub fn pmf_row_into<T: Scalar>(p: T, lambda: Option<T>, ln_choose: &[T], out: &mut [T]) {
    log_pmf_row(p, lambda, ln_choose, out);
    for v in out.iter_mut() {
        *v = v.exp();
    }
}

/// Pmf values below this are treated as exact zeros by [`pmf_row_linear`].
/// The mass dropped per row is at most `(d + 1) · 1e-40`.
pub const PMF_CUTOFF: f64 = 1e-40;

/// Fills `out[z] = f(z)` for `z = 0..=d` (`d = out.len() - 1`) and returns the
/// (at most two) index ranges holding values at or above [`PMF_CUTOFF`].
/// Entries outside those ranges are left untouched; treat them as zero.
///
/// Both families have `f(z+1)/f(z) ≥ 1` exactly when a linear function of `z`
/// is non-negative, so a row is either unimodal or U-shaped. Unimodal rows are
/// anchored at the mode, U-shaped ones at both ends, and values are produced
/// by multiplying successive ratios while walking away from the anchor until
/// they drop below the cutoff. `ln_choose` is the row from
/// [`crate::scalar::ln_choose_row`] for the same `d`.
pub fn pmf_row_linear<T: Scalar>(
    p: T,
    lambda: Option<T>,
    ln_choose: &[T],
    out: &mut [T],
) -> [Range<usize>; 2] {
    let d = out.len() - 1;
    debug_assert_eq!(ln_choose.len(), d + 1);
    let cutoff = T::lit(PMF_CUTOFF).max(T::min_positive_value() * T::lit(1e4));
    let one = T::one();
    let df = T::of_usize(d);
    match lambda {
        None => {
            let odds = p / (one - p);
            let ratio = |zf: T| (df - zf) / (zf + one) * odds;
            let mode = ((df + one) * p).floor().to_usize().unwrap_or(0).min(d);
            let zf = T::of_usize(mode);
            let log_anchor = ln_choose[mode] + zf * p.ln() + (df - zf) * (-p).ln_1p();
            let r = walk_from(out, mode, log_anchor.exp(), cutoff, ratio, 0, d);
            [r, 0..0]
        }
        Some(lambda) => {
            let (alpha, beta) = beta_binomial_shapes(p, lambda);
            let ratio = |zf: T| {
                let rem = df - zf;
                rem * (zf + alpha) / ((zf + one) * (rem - one + beta))
            };
            let log_at = |z: usize| {
                let z32 = z as u32;
                let d32 = d as u32;
                ln_choose[z] + ln_rising(alpha, z32) + ln_rising(beta, d32 - z32)
                    - ln_rising(alpha + beta, d32)
            };
            let slope = T::lit(2.0) - alpha - beta;
            if slope < T::zero() {
                // f increases while (d−z)(α−1) + (z+1)(1−β) ≥ 0.
                let z0 = (df * (alpha - one) + one - beta) / (alpha + beta - T::lit(2.0));
                let mode = if z0 < T::zero() {
                    0
                } else {
                    (z0.floor().to_usize().unwrap_or(d))
                        .saturating_add(1)
                        .min(d)
                };
                let r = walk_from(out, mode, log_at(mode).exp(), cutoff, ratio, 0, d);
                [r, 0..0]
            } else {
                let left = walk_from(out, 0, log_at(0).exp(), cutoff, ratio, 0, d);
                if left.end > d {
                    return [left, 0..0];
                }
                let right = walk_from(out, d, log_at(d).exp(), cutoff, ratio, left.end, d);
                [left, right]
            }
        }
    }
}

/// Writes `f` at `anchor` and extends left and right by the ratio recurrence
/// while values stay at or above `cutoff`, never leaving `[lo, hi]`. Returns
/// the filled range (empty if the anchor itself is below the cutoff).
fn walk_from<T: Scalar>(
    out: &mut [T],
    anchor: usize,
    f: T,
    cutoff: T,
    ratio: impl Fn(T) -> T,
    lo: usize,
    hi: usize,
) -> Range<usize> {
    if !(f >= cutoff) || anchor < lo {
        return anchor..anchor;
    }
    out[anchor] = f;
    // The float index walks alongside the integer one: `ratio(zf)` is f(z+1)/f(z).
    let anchor_f = T::of_usize(anchor);
    let mut end = anchor + 1;
    let mut zf = anchor_f;
    let mut v = f;
    while end <= hi {
        v = v * ratio(zf);
        if !(v >= cutoff) {
            break;
        }
        out[end] = v;
        end += 1;
        zf = zf + T::one();
    }
    let mut start = anchor;
    let mut zf = anchor_f - T::one();
    let mut v = f;
    while start > lo {
        v = v / ratio(zf);
        if !(v >= cutoff) {
            break;
        }
        out[start - 1] = v;
        start -= 1;
        zf = zf - T::one();
    }
    start..end
}

/// Scratch space for repeated pmf rows of one design.
#[derive(Clone, Debug)]
pub struct PmfRowCache<T> {
    pub ln_choose: Vec<T>,
    pub row: Vec<T>,
}

impl<T: Scalar> PmfRowCache<T> {
    pub fn new(d: u32) -> Self {
        Self {
            ln_choose: crate::scalar::ln_choose_row(d),
            row: vec![T::zero(); d as usize + 1],
        }
    }

    pub fn fill_log(&mut self, p: T, lambda: Option<T>) -> &[T] {
        log_pmf_row(p, lambda, &self.ln_choose, &mut self.row);
        &self.row
    }
}

/// `log f(n | model, θ, n0, τ)`.
pub fn log_likelihood<T: Scalar>(
    model: &ModelSpec<T>,
    params: &Params<T>,
    obs: &Observation<T>,
) -> Result<T> {
    model.check_params(params)?;
    obs.validate()?;
    let p = expected_proportion(model.mech, params, obs.n0, obs.tau)?;
    Ok(log_pmf(obs.n0, obs.n, p, family_lambda(model, params)?))
}

pub(crate) fn family_lambda<T: Scalar>(
    model: &ModelSpec<T>,
    params: &Params<T>,
) -> Result<Option<T>> {
    match (model.obs, params.log_lambda) {
        (ObservationFamily::Binomial, None) => Ok(None),
        (ObservationFamily::BetaBinomial, Some(l)) => Ok(Some(l.exp())),
        _ => Err(Error::InvalidParameter(format!(
            "parameters do not match the {:?} family of model {}",
            model.obs, model.id
        ))),
    }
}

/// Draws one trial outcome at initial density `n0`.
///
/// Beta-binomial draws go through `q ~ Beta(α, β)`, `n ~ Binom(n0, q)`. When
/// the shapes are so extreme that the beta sampler cannot produce a finite
/// proportion, the outcome is drawn by inverting the pmf instead.
pub fn sample_observation<T: Scalar, R: Rng + ?Sized>(
    model: &ModelSpec<T>,
    params: &Params<T>,
    n0: u32,
    tau: T,
    rng: &mut R,
) -> Result<Observation<T>> {
    model.check_params(params)?;
    let p = expected_proportion(model.mech, params, n0, tau)?;
    let n = match family_lambda(model, params)? {
        None => binomial_draw(n0, p.as_f64(), rng)?,
        Some(lambda) => {
            let (alpha, beta) = beta_binomial_shapes(p.as_f64(), lambda.as_f64());
            let q = Beta::new(alpha, beta).ok().map(|b| b.sample(rng));
            match q {
                Some(q) if q.is_finite() => binomial_draw(n0, q.clamp(0.0, 1.0), rng)?,
                _ => invert_pmf(n0, p, Some(lambda), rng),
            }
        }
    };
    Observation::new(n0, n, tau)
}

fn binomial_draw<R: Rng + ?Sized>(n0: u32, p: f64, rng: &mut R) -> Result<u32> {
    let b = Binomial::new(u64::from(n0), p)
        .map_err(|e| Error::InvalidParameter(format!("binomial({n0}, {p}): {e}")))?;
    Ok(b.sample(rng) as u32)
}

fn invert_pmf<T: Scalar, R: Rng + ?Sized>(n0: u32, p: T, lambda: Option<T>, rng: &mut R) -> u32 {
    let mut cache = PmfRowCache::<T>::new(n0);
    let row = cache.fill_log(p, lambda);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (z, lf) in row.iter().enumerate() {
        acc += lf.as_f64().exp();
        if u < acc {
            return z as u32;
        }
    }
    n0
}
