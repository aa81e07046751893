//! Environment families: offspring laws with exact tails, moments and limit
//! quantities.
//!
//! The environment draws an offspring law whose logarithmic mean X is built
//! from a Pareto jump variable T with index `beta` and scale `x_m`, shifted by
//! `shift_c` so the walk drifts down: X = log(1-gamma) + T - shift_c (the
//! gamma term is present only for the fractional-atom family).

use crate::numeric::integrate;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Gamma, Normal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest count the exact integer samplers are trusted for; above this the
/// simulation switches to the flagged log-space branch (see `process_core`).
pub const EXACT_COUNT_LIMIT: f64 = 1e15;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
}

/// One generation's reproduction law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OffspringLaw {
    /// pgf q/(1-ps) on {0,1,...} with p = 1-q; mean p/q. Parameterised by
    /// q so that laws with enormous means keep full precision.
    Geometric { q: f64 },
    /// pgf exp(lambda(s-1)).
    Poisson { lambda: f64 },
    /// pgf gamma + (1-gamma) q/(1-ps); an atom of mass at zero offspring in
    /// front of a geometric component.
    FractionalAtom { gamma: f64, q: f64 },
    /// Exactly one offspring per particle. Test support only.
    Single,
}

impl OffspringLaw {
    /// f'(1), the mean offspring number.
    pub fn mean(&self) -> f64 {
        match *self {
            OffspringLaw::Geometric { q } => (1.0 - q) / q,
            OffspringLaw::Poisson { lambda } => lambda,
            OffspringLaw::FractionalAtom { gamma, q } => (1.0 - gamma) * (1.0 - q) / q,
            OffspringLaw::Single => 1.0,
        }
    }

    /// X = log f'(1).
    pub fn log_mean(&self) -> f64 {
        match *self {
            OffspringLaw::Geometric { q } => (-q).ln_1p() - q.ln(),
            OffspringLaw::Poisson { lambda } => lambda.ln(),
            OffspringLaw::FractionalAtom { gamma, q } => {
                (1.0 - gamma).ln() + (-q).ln_1p() - q.ln()
            }
            OffspringLaw::Single => 0.0,
        }
    }

    /// f''(1), the second factorial moment.
    pub fn second_factorial(&self) -> f64 {
        match *self {
            OffspringLaw::Geometric { q } => {
                let m = (1.0 - q) / q;
                2.0 * m * m
            }
            OffspringLaw::Poisson { lambda } => lambda * lambda,
            OffspringLaw::FractionalAtom { gamma, q } => {
                let m = (1.0 - q) / q;
                2.0 * (1.0 - gamma) * m * m
            }
            OffspringLaw::Single => 0.0,
        }
    }

    /// Offspring variance f''(1) + f'(1) - f'(1)^2.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.second_factorial() + m - m * m
    }

    /// eta = f''(1) / (2 f'(1)^2).
    pub fn eta(&self) -> f64 {
        match *self {
            OffspringLaw::Geometric { .. } => 1.0,
            OffspringLaw::Poisson { .. } => 0.5,
            OffspringLaw::FractionalAtom { gamma, .. } => 1.0 / (1.0 - gamma),
            OffspringLaw::Single => 0.0,
        }
    }

    pub fn pgf(&self, s: f64) -> f64 {
        assert!((0.0..=1.0).contains(&s), "pgf argument outside [0,1]");
        1.0 - self.one_minus_pgf(1.0 - s)
    }

    /// 1 - f(1 - w): the survival-complement form of the pgf, stable for
    /// arguments close to 1.
    pub fn one_minus_pgf(&self, w: f64) -> f64 {
        match *self {
            OffspringLaw::Geometric { q } => {
                let p = 1.0 - q;
                p * w / (q + p * w)
            }
            OffspringLaw::Poisson { lambda } => -(-lambda * w).exp_m1(),
            OffspringLaw::FractionalAtom { gamma, q } => {
                let p = 1.0 - q;
                (1.0 - gamma) * p * w / (q + p * w)
            }
            OffspringLaw::Single => w,
        }
    }

    /// Complement Moebius map [a, b, c, d] with w' = (a w + b)/(c w + d),
    /// available when the law is linear-fractional (or degenerate).
    pub fn complement_moebius(&self) -> Option<[f64; 4]> {
        match *self {
            OffspringLaw::Geometric { q } => Some([1.0 - q, 0.0, 1.0 - q, q]),
            OffspringLaw::FractionalAtom { gamma, q } => {
                Some([(1.0 - gamma) * (1.0 - q), 0.0, 1.0 - q, q])
            }
            OffspringLaw::Single => Some([1.0, 0.0, 0.0, 1.0]),
            OffspringLaw::Poisson { .. } => None,
        }
    }

    /// g(s) = 1/(1-f(s)) - 1/(f'(1)(1-s)) evaluated at s = 1 - w.
    ///
    /// For linear-fractional laws g is constant and equals eta; for Poisson
    /// the two terms diverge individually as w -> 0 and a series expansion
    /// takes over below the switch threshold. The bound 0 <= g <= 2 eta is
    /// asserted on every evaluation.
    pub fn g_complement(&self, w: f64) -> f64 {
        let val = match *self {
            OffspringLaw::Geometric { .. } | OffspringLaw::FractionalAtom { .. } => self.eta(),
            OffspringLaw::Single => 0.0,
            OffspringLaw::Poisson { lambda } => {
                let x = lambda * w;
                if x < 1e-4 {
                    // 1/(1-e^-x) - 1/x = 1/2 + x/12 - x^3/720 + ...
                    0.5 + x / 12.0 - x * x * x / 720.0
                } else {
                    1.0 / -(-x).exp_m1() - 1.0 / x
                }
            }
        };
        let eta = self.eta();
        assert!(
            val >= -1e-12 && val <= 2.0 * eta * (1.0 + 1e-12),
            "g out of [0, 2 eta]: g = {val}, eta = {eta}"
        );
        val.max(0.0)
    }

    /// g(s) in its natural argument.
    pub fn g(&self, s: f64) -> f64 {
        self.g_complement(1.0 - s)
    }

    /// Exact transition total: the next generation size given `z` current
    /// particles. Valid while z * mean stays below `EXACT_COUNT_LIMIT`.
    pub fn sample_total_exact<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> u64 {
        if z == 0 {
            return 0;
        }
        match *self {
            OffspringLaw::Geometric { q } => sample_neg_binomial(z, q, rng),
            OffspringLaw::Poisson { lambda } => {
                let total = lambda * z as f64;
                if total == 0.0 {
                    0
                } else {
                    Poisson::new(total).unwrap().sample(rng) as u64
                }
            }
            OffspringLaw::FractionalAtom { gamma, q } => {
                let survivors = Binomial::new(z, 1.0 - gamma).unwrap().sample(rng);
                sample_neg_binomial(survivors, q, rng)
            }
            OffspringLaw::Single => z,
        }
    }

    /// One individual's offspring count as f64, exact in distribution up to
    /// f64 rounding even for astronomically large means.
    pub fn sample_individual_f64<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            OffspringLaw::Geometric { q } => sample_geometric_f64(q, rng),
            OffspringLaw::Poisson { lambda } => {
                if lambda < 1e6 {
                    Poisson::new(lambda.max(f64::MIN_POSITIVE)).unwrap().sample(rng)
                } else {
                    // Normal limit; counts of this size are not representable
                    // exactly anyway.
                    (lambda + lambda.sqrt() * Normal::new(0.0, 1.0).unwrap().sample(rng)).round()
                }
            }
            OffspringLaw::FractionalAtom { gamma, q } => {
                if rng.gen::<f64>() < gamma {
                    0.0
                } else {
                    sample_geometric_f64(q, rng)
                }
            }
            OffspringLaw::Single => 1.0,
        }
    }

    /// Max offspring count over `z` independent individuals via inversion of
    /// P(max <= m) = F(m)^z.
    pub fn sample_max_f64<R: Rng + ?Sized>(&self, z: u64, rng: &mut R) -> f64 {
        assert!(z > 0);
        let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
        // ln t = ln(u)/z is the log of the target CDF value.
        let log_t = u.ln() / z as f64;
        // 1 - t, computed without cancellation.
        let one_minus_t = -log_t.exp_m1();
        match *self {
            OffspringLaw::Geometric { q } => geometric_max_quantile(q, one_minus_t),
            OffspringLaw::FractionalAtom { gamma, q } => {
                // F(m) = gamma + (1-gamma) F_geo(m): solve F_geo(m) >= adjusted target.
                let adj = one_minus_t / (1.0 - gamma);
                if adj >= 1.0 {
                    0.0
                } else {
                    geometric_max_quantile(q, adj)
                }
            }
            OffspringLaw::Poisson { lambda } => {
                if lambda < 1e6 {
                    poisson_quantile(lambda, log_t.exp())
                } else {
                    let nd = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
                    use statrs::distribution::ContinuousCDF;
                    (lambda + lambda.sqrt() * nd.inverse_cdf(log_t.exp())).round().max(0.0)
                }
            }
            OffspringLaw::Single => 1.0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            OffspringLaw::Geometric { q } => q > 0.0 && q < 1.0,
            OffspringLaw::Poisson { lambda } => lambda > 0.0 && lambda.is_finite(),
            OffspringLaw::FractionalAtom { gamma, q } => {
                (0.0..1.0).contains(&gamma) && q > 0.0 && q < 1.0
            }
            OffspringLaw::Single => true,
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidParameter(format!("{self:?}")))
        }
    }
}

/// Negative binomial (sum of `r` independent geometric counts with zero-mass
/// q) via the exact Gamma-Poisson mixture.
fn sample_neg_binomial<R: Rng + ?Sized>(r: u64, q: f64, rng: &mut R) -> u64 {
    if r == 0 {
        return 0;
    }
    let scale = (1.0 - q) / q;
    let lambda = Gamma::new(r as f64, scale).unwrap().sample(rng);
    if lambda <= 0.0 {
        0
    } else {
        Poisson::new(lambda).unwrap().sample(rng) as u64
    }
}

/// Geometric on {0,1,...} with pgf q/(1-ps) by CDF inversion; exact for any
/// q, returns f64 so that huge means are representable in magnitude.
fn sample_geometric_f64<R: Rng + ?Sized>(q: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    // P(X >= k) = p^k  =>  X = floor(ln u / ln p), with ln p = ln(1-q)
    let log_p = (-q).ln_1p();
    (u.ln() / log_p).floor().max(0.0)
}

/// Smallest m with 1 - p^{m+1} >= t, given 1 - t.
fn geometric_max_quantile(q: f64, one_minus_t: f64) -> f64 {
    if one_minus_t >= 1.0 {
        return 0.0;
    }
    let log_p = (-q).ln_1p();
    // p^{m+1} <= 1 - t
    let m = (one_minus_t.ln() / log_p).ceil() - 1.0;
    m.max(0.0)
}

fn poisson_quantile(lambda: f64, t: f64) -> f64 {
    use statrs::distribution::{DiscreteCDF, Poisson as PoissonDist};
    let d = PoissonDist::new(lambda).unwrap();
    let (mut lo, mut hi) = (0u64, (lambda + 20.0 * lambda.sqrt() + 20.0) as u64);
    while d.cdf(hi) < t {
        hi *= 2;
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if d.cdf(mid) >= t {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    lo as f64
}

/// Law of the limit variable gamma from the big-jump conditioning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaLaw {
    PointMassZero,
    Uniform { lo: f64, hi: f64 },
}

impl GammaLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            GammaLaw::PointMassZero => 0.0,
            GammaLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            GammaLaw::PointMassZero => 0.0,
            GammaLaw::Uniform { lo, hi } => {
                if hi > lo {
                    rng.gen_range(lo..hi)
                } else {
                    lo
                }
            }
        }
    }

    /// E[log(1-gamma)] in closed form.
    fn mean_log_one_minus(&self) -> f64 {
        match *self {
            GammaLaw::PointMassZero => 0.0,
            GammaLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    return (1.0 - lo).ln();
                }
                let f = |g: f64| -(1.0 - g) * (1.0 - g).ln() - g;
                (f(hi) - f(lo)) / (hi - lo)
            }
        }
    }

    /// E[log^2(1-gamma)] in closed form.
    fn second_moment_log_one_minus(&self) -> f64 {
        match *self {
            GammaLaw::PointMassZero => 0.0,
            GammaLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    let l = (1.0 - lo).ln();
                    return l * l;
                }
                // integral of ln^2(x) is x(ln^2 x - 2 ln x + 2)
                let f = |x: f64| x * (x.ln() * x.ln() - 2.0 * x.ln() + 2.0);
                (f(1.0 - lo) - f(1.0 - hi)) / (hi - lo)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    ParetoGeometric,
    ParetoPoisson,
    ParetoFractionalAtom,
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Family::ParetoGeometric => "pareto_geometric",
            Family::ParetoPoisson => "pareto_poisson",
            Family::ParetoFractionalAtom => "pareto_fractional_atom",
        };
        write!(f, "{s}")
    }
}

impl std::str::FromStr for Family {
    type Err = ModelError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pareto_geometric" => Ok(Family::ParetoGeometric),
            "pareto_poisson" => Ok(Family::ParetoPoisson),
            "pareto_fractional_atom" => Ok(Family::ParetoFractionalAtom),
            other => Err(ModelError::InvalidParameter(format!(
                "unknown family '{other}'"
            ))),
        }
    }
}

/// The i.i.d. law of the one-generation environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvironmentModel {
    pub family: Family,
    pub beta: f64,
    pub x_m: f64,
    pub shift_c: f64,
    pub gamma_law: GammaLaw,
    /// Drift magnitude a = -E[X], derived.
    pub a: f64,
    /// Var(X), derived.
    pub sigma2: f64,
}

impl EnvironmentModel {
    pub fn new(
        family: Family,
        beta: f64,
        x_m: f64,
        shift_c: f64,
        gamma_range: Option<(f64, f64)>,
    ) -> Result<Self, ModelError> {
        if !(beta > 2.0) {
            return Err(ModelError::InvalidParameter(format!(
                "beta must exceed 2 (finite variance), got {beta}"
            )));
        }
        if !(x_m > 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "x_m must be positive, got {x_m}"
            )));
        }
        let gamma_law = match (family, gamma_range) {
            (Family::ParetoFractionalAtom, Some((lo, hi))) => {
                if !(0.0..1.0).contains(&lo) || !(lo..1.0).contains(&hi) {
                    return Err(ModelError::InvalidParameter(format!(
                        "gamma range [{lo},{hi}] must sit inside [0,1)"
                    )));
                }
                GammaLaw::Uniform { lo, hi }
            }
            (Family::ParetoFractionalAtom, None) => GammaLaw::Uniform { lo: 0.0, hi: 0.5 },
            (_, _) => GammaLaw::PointMassZero,
        };
        let mean_t = beta * x_m / (beta - 1.0);
        let var_t = beta * x_m * x_m / ((beta - 1.0) * (beta - 1.0) * (beta - 2.0));
        let ml = gamma_law.mean_log_one_minus();
        let vl = gamma_law.second_moment_log_one_minus() - ml * ml;
        let mean_x = ml + mean_t - shift_c;
        if !(mean_x < 0.0) {
            return Err(ModelError::InvalidParameter(format!(
                "model is not subcritical: E[X] = {mean_x} >= 0"
            )));
        }
        Ok(EnvironmentModel {
            family,
            beta,
            x_m,
            shift_c,
            gamma_law,
            a: -mean_x,
            sigma2: var_t + vl,
        })
    }

    /// The default desk-scale model: beta=3, x_m=1, c=2 (a=0.5, sigma^2=0.75).
    pub fn default_geometric() -> Self {
        Self::new(Family::ParetoGeometric, 3.0, 1.0, 2.0, None).unwrap()
    }

    pub fn default_poisson() -> Self {
        Self::new(Family::ParetoPoisson, 3.0, 1.0, 2.0, None).unwrap()
    }

    /// Fractional-atom model with gamma ~ U[0, 0.5].
    pub fn default_fractional_atom() -> Self {
        Self::new(
            Family::ParetoFractionalAtom,
            3.0,
            1.0,
            2.0,
            Some((0.0, 0.5)),
        )
        .unwrap()
    }

    /// Essential infimum of X.
    pub fn x_infimum(&self) -> f64 {
        let g_hi = match self.gamma_law {
            GammaLaw::PointMassZero => 0.0,
            GammaLaw::Uniform { hi, .. } => hi,
        };
        (1.0 - g_hi).ln() + self.x_m - self.shift_c
    }

    /// Exact tail A(x) = P(X > x). Errors only for the fractional-atom family
    /// when the quadrature self-check fails.
    pub fn try_exact_tail(&self, x: f64) -> Result<f64, ModelError> {
        match self.gamma_law {
            GammaLaw::PointMassZero => Ok(pareto_tail(self.beta, self.x_m, x + self.shift_c)),
            GammaLaw::Uniform { lo, hi } => {
                if hi <= lo {
                    return Ok(pareto_tail(
                        self.beta,
                        self.x_m,
                        x + self.shift_c - (1.0 - lo).ln(),
                    ));
                }
                let f = |g: f64| {
                    pareto_tail(self.beta, self.x_m, x + self.shift_c - (1.0 - g).ln())
                };
                // The integrand has a kink where the inner argument crosses
                // x_m; below the kink the tail is exactly 1.
                let kink = 1.0 - (x + self.shift_c - self.x_m).exp();
                let (flat, a0) = if kink >= hi {
                    return Ok(1.0);
                } else if kink > lo {
                    ((kink - lo) / (hi - lo), kink)
                } else {
                    (0.0, lo)
                };
                let coarse = integrate(f, a0, hi, 48) / (hi - lo);
                let fine = integrate(f, a0, hi, 96) / (hi - lo);
                if (coarse - fine).abs() > 1e-10 {
                    return Err(ModelError::Quadrature(format!(
                        "tail quadrature at x={x}: 48 vs 96 nodes differ by {}",
                        (coarse - fine).abs()
                    )));
                }
                Ok(flat + fine)
            }
        }
    }

    pub fn exact_tail(&self, x: f64) -> f64 {
        self.try_exact_tail(x).expect("tail quadrature failed")
    }

    /// The exact law of the big-jump limit variable gamma.
    pub fn gamma_limit_law(&self) -> GammaLaw {
        self.gamma_law
    }

    /// One increment X of the associated random walk.
    pub fn sample_x<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let t = sample_pareto(self.beta, self.x_m, rng);
        let g = self.gamma_law.sample(rng);
        (1.0 - g).ln() + t - self.shift_c
    }

    /// Sample one offspring law from the environment.
    pub fn sample_law<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringLaw {
        let t = sample_pareto(self.beta, self.x_m, rng);
        self.law_from_parts(t, rng)
    }

    fn law_from_parts<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> OffspringLaw {
        // cap the log conditional mean so the law parameters stay in the
        // normal f64 range (q = sigmoid(-logit) underflows past ~745); jumps
        // this large are astronomically super-surviving either way, and every
        // reported statistic depends only on post-jump growth, so the cap is
        // observationally neutral
        let logit = (t - self.shift_c).min(690.0);
        match self.family {
            Family::ParetoGeometric => OffspringLaw::Geometric {
                q: sigmoid(-logit),
            },
            Family::ParetoPoisson => OffspringLaw::Poisson { lambda: logit.exp() },
            Family::ParetoFractionalAtom => OffspringLaw::FractionalAtom {
                gamma: self.gamma_law.sample(rng),
                q: sigmoid(-logit),
            },
        }
    }

    /// Sample an offspring law conditioned on a big jump X > x, by exact tail
    /// inversion (pure Pareto families) or rejection against the dominating
    /// pure-Pareto component (fractional atom).
    pub fn sample_law_tail<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> OffspringLaw {
        match self.family {
            Family::ParetoGeometric | Family::ParetoPoisson => {
                let t0 = (x + self.shift_c).max(self.x_m);
                let t = sample_pareto(self.beta, t0, rng);
                self.law_from_parts(t, rng)
            }
            Family::ParetoFractionalAtom => {
                let lo = match self.gamma_law {
                    GammaLaw::Uniform { lo, .. } => lo,
                    GammaLaw::PointMassZero => 0.0,
                };
                let bound = pareto_tail(
                    self.beta,
                    self.x_m,
                    x + self.shift_c - (1.0 - lo).ln(),
                );
                loop {
                    let g = self.gamma_law.sample(rng);
                    let t0 = x + self.shift_c - (1.0 - g).ln();
                    let acc = pareto_tail(self.beta, self.x_m, t0) / bound;
                    if rng.gen::<f64>() < acc {
                        let t = sample_pareto(self.beta, t0.max(self.x_m), rng);
                        let logit = t - self.shift_c;
                        return OffspringLaw::FractionalAtom {
                            gamma: g,
                            q: sigmoid(-logit),
                        };
                    }
                }
            }
        }
    }

    /// Sample a law conditioned on no big jump, X <= x (rejection; the
    /// acceptance probability is 1 - A(x), essentially 1 for the thresholds
    /// used in importance sampling).
    pub fn sample_law_capped<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> OffspringLaw {
        loop {
            let law = self.sample_law(rng);
            if law.log_mean() <= x {
                return law;
            }
        }
    }

    /// One walk increment conditioned on X > x.
    pub fn sample_x_tail<R: Rng + ?Sized>(&self, x: f64, rng: &mut R) -> f64 {
        self.sample_law_tail(x, rng).log_mean()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn pareto_tail(beta: f64, x_m: f64, t: f64) -> f64 {
    if t <= x_m {
        1.0
    } else {
        (x_m / t).powf(beta)
    }
}

fn sample_pareto<R: Rng + ?Sized>(beta: f64, x_m: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    x_m * u.powf(-1.0 / beta)
}

/// Anything that can hand out i.i.d. offspring laws; lets the Monte Carlo
/// estimators run against a frozen Galton-Watson environment in tests.
pub trait LawSampler {
    fn sample_law<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringLaw;
}

impl LawSampler for EnvironmentModel {
    fn sample_law<R: Rng + ?Sized>(&self, rng: &mut R) -> OffspringLaw {
        EnvironmentModel::sample_law(self, rng)
    }
}

/// Deterministic environment: the same offspring law every generation.
#[derive(Debug, Clone, Copy)]
pub struct FixedLaw(pub OffspringLaw);

impl LawSampler for FixedLaw {
    fn sample_law<R: Rng + ?Sized>(&self, _rng: &mut R) -> OffspringLaw {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::mean_stderr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn eta_values() {
        assert_eq!(OffspringLaw::Geometric { q: 0.63 }.eta(), 1.0);
        assert_eq!(OffspringLaw::Poisson { lambda: 4.2 }.eta(), 0.5);
        assert_eq!(OffspringLaw::Single.eta(), 0.0);
        let fa = OffspringLaw::FractionalAtom { gamma: 0.5, q: 0.7 };
        assert!((fa.eta() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn pgf_is_probability_generating() {
        let laws = [
            OffspringLaw::Geometric { q: 0.4 },
            OffspringLaw::Poisson { lambda: 1.7 },
            OffspringLaw::FractionalAtom { gamma: 0.25, q: 0.45 },
        ];
        for law in laws {
            assert!((law.pgf(1.0) - 1.0).abs() < 1e-15);
            // f'(1) == exp(log_mean) to relative 1e-12
            let m = law.mean();
            assert!((m - law.log_mean().exp()).abs() <= 1e-12 * m);
            // finite-difference derivative at 1 approximates the mean
            let h = 1e-7;
            let fd = (law.pgf(1.0) - law.pgf(1.0 - h)) / h;
            assert!((fd - m).abs() < 1e-4 * m.max(1.0));
        }
    }

    #[test]
    fn fractional_atom_with_zero_gamma_is_geometric() {
        let fa = OffspringLaw::FractionalAtom { gamma: 0.0, q: 0.6 };
        let ge = OffspringLaw::Geometric { q: 0.6 };
        for s in [0.0, 0.3, 0.9, 1.0] {
            assert!((fa.pgf(s) - ge.pgf(s)).abs() < 1e-15);
        }
        assert_eq!(fa.mean(), ge.mean());
    }

    #[test]
    fn default_model_moments() {
        let m = EnvironmentModel::default_geometric();
        assert!((m.a - 0.5).abs() < 1e-12);
        assert!((m.sigma2 - 0.75).abs() < 1e-12);
        // A(x) = (x+2)^-3 for x >= -1
        assert!((m.exact_tail(8.0) - 1e-3).abs() < 1e-15);
        assert!((m.exact_tail(28.0) - 1.0 / 27000.0).abs() < 1e-18);
        assert_eq!(m.exact_tail(-1.5), 1.0);
    }

    #[test]
    fn model_rejects_bad_parameters() {
        assert!(EnvironmentModel::new(Family::ParetoGeometric, 2.0, 1.0, 2.0, None).is_err());
        assert!(EnvironmentModel::new(Family::ParetoGeometric, 3.0, 1.0, 1.0, None).is_err());
        assert!(EnvironmentModel::new(
            Family::ParetoFractionalAtom,
            3.0,
            1.0,
            3.0,
            Some((0.2, 1.1))
        )
        .is_err());
    }

    #[test]
    fn sampled_laws_match_drift() {
        // Only the mean gets an MC check here: the jump variable has an
        // infinite third moment, so a sample-variance test would not settle
        // at any honest budget. The variance formula is covered by
        // `default_model_moments` and `gamma_log_moments_match_closed_form`.
        for model in [
            EnvironmentModel::default_geometric(),
            EnvironmentModel::default_fractional_atom(),
        ] {
            let mut r = rng(11);
            let n = 2_000_000usize;
            let mut sum = 0.0;
            for _ in 0..n {
                sum += model.sample_x(&mut r);
            }
            let mean = sum / n as f64;
            let se_mean = (model.sigma2 / n as f64).sqrt();
            assert!(
                (mean + model.a).abs() < 5.0 * se_mean,
                "family {:?}: mean {mean} vs -a {}",
                model.family,
                -model.a
            );
        }
    }

    #[test]
    fn gamma_log_moments_match_closed_form() {
        let law = GammaLaw::Uniform { lo: 0.0, hi: 0.5 };
        let mut r = rng(29);
        let n = 4_000_000usize;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..n {
            let l = (1.0 - law.sample(&mut r)).ln();
            s1 += l;
            s2 += l * l;
        }
        let (m1, m2) = (s1 / n as f64, s2 / n as f64);
        assert!((m1 - law.mean_log_one_minus()).abs() < 5e-4, "{m1}");
        assert!((m2 - law.second_moment_log_one_minus()).abs() < 5e-4, "{m2}");
        // spot value: E[log(1-gamma)] for U[0,1/2] is -ln 2^{-1} - 1 = ln 2 - 1
        let exact = std::f64::consts::LN_2 - 1.0;
        assert!((law.mean_log_one_minus() - exact).abs() < 1e-14);
    }

    #[test]
    fn sampled_law_log_mean_consistency() {
        let models = [
            EnvironmentModel::default_geometric(),
            EnvironmentModel::default_poisson(),
            EnvironmentModel::default_fractional_atom(),
        ];
        let mut r = rng(5);
        for model in &models {
            for _ in 0..10_000 {
                let law = model.sample_law(&mut r);
                let m = law.mean();
                assert!((m - law.log_mean().exp()).abs() <= 1e-12 * m);
                // Assumption 1(i): eta bounded across all sampled laws.
                assert!(law.eta() <= 2.0 + 1e-12);
            }
        }
    }

    #[test]
    fn exact_tail_monotone_and_pareto_limit() {
        let model = EnvironmentModel::default_geometric();
        let mut prev = 1.0;
        let mut x = -2.0;
        while x < 50.0 {
            let t = model.exact_tail(x);
            assert!(t <= prev + 1e-15);
            prev = t;
            x += 0.37;
        }
        for x in [1e2, 1e3, 1e4] {
            let lhs = model.exact_tail(x) * (x + model.shift_c).powf(model.beta);
            assert!((lhs - model.x_m.powf(model.beta)).abs() < 1e-9);
        }
    }

    #[test]
    fn remainder_increment_asymptotics() {
        let model = EnvironmentModel::default_geometric();
        for x in [50.0, 100.0, 200.0] {
            let lhs = (model.exact_tail(x + 1.0) - model.exact_tail(x)) * x
                / (-model.beta * model.exact_tail(x));
            assert!((lhs - 1.0).abs() <= 5.0 / x, "x={x}: {lhs}");
        }
    }

    #[test]
    fn fractional_atom_tail_against_monte_carlo() {
        let model = EnvironmentModel::default_fractional_atom();
        let x = 20.0;
        let exact = model.exact_tail(x);
        let mut r = rng(3);
        let n = 1_000_000usize;
        let hits: Vec<f64> = (0..n)
            .map(|_| if model.sample_x(&mut r) > x { 1.0 } else { 0.0 })
            .collect();
        let (freq, se) = mean_stderr(&hits);
        // The MC oracle has tiny absolute stderr at this depth; the exact
        // value must sit inside its 5-sigma band.
        assert!((freq - exact).abs() <= 5.0 * se + 1e-8);
    }

    #[test]
    fn tail_sampler_matches_conditional_tail() {
        for model in [
            EnvironmentModel::default_geometric(),
            EnvironmentModel::default_fractional_atom(),
        ] {
            let x = 25.0;
            let mut r = rng(7);
            let n = 200_000;
            let a_x = model.exact_tail(x);
            // P(X > y | X > x) should equal A(y)/A(x)
            let y = 40.0;
            let expected = model.exact_tail(y) / a_x;
            let hits: Vec<f64> = (0..n)
                .map(|_| {
                    let xv = model.sample_x_tail(x, &mut r);
                    assert!(xv > x - 1e-9);
                    if xv > y {
                        1.0
                    } else {
                        0.0
                    }
                })
                .collect();
            let (freq, se) = mean_stderr(&hits);
            assert!((freq - expected).abs() < 4.0 * se + 1e-4);
        }
    }

    #[test]
    fn gamma_limit_laws() {
        assert_eq!(
            EnvironmentModel::default_geometric().gamma_limit_law(),
            GammaLaw::PointMassZero
        );
        let fa = EnvironmentModel::default_fractional_atom();
        assert_eq!(fa.gamma_limit_law(), GammaLaw::Uniform { lo: 0.0, hi: 0.5 });
        assert!((fa.gamma_limit_law().mean() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn g_series_switch_is_continuous_for_poisson() {
        let law = OffspringLaw::Poisson { lambda: 2.0 };
        let above = law.g_complement(1.0001e-4 / 2.0);
        let below = law.g_complement(0.9999e-4 / 2.0);
        assert!((above - below).abs() < 1e-8);
        assert!((law.g_complement(1e-14) - 0.5).abs() < 1e-10);
        assert!((law.g(0.0) - (1.0 / (1.0 - (-2.0f64).exp()) - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn exact_total_sampler_matches_individual_sum() {
        // Two-sample KS between the closed-form transition and the naive sum
        // of individual draws.
        let laws = [
            OffspringLaw::Geometric { q: 0.45 },
            OffspringLaw::Poisson { lambda: 1.3 },
            OffspringLaw::FractionalAtom { gamma: 0.3, q: 0.5 },
        ];
        for law in laws {
            for z in [1u64, 10, 100] {
                let mut r = rng(17);
                let n = 100_000;
                let mut a: Vec<f64> = (0..n)
                    .map(|_| law.sample_total_exact(z, &mut r) as f64)
                    .collect();
                let mut b: Vec<f64> = (0..n)
                    .map(|_| {
                        (0..z)
                            .map(|_| law.sample_individual_f64(&mut r))
                            .sum::<f64>()
                    })
                    .collect();
                a.sort_by(|x, y| x.partial_cmp(y).unwrap());
                b.sort_by(|x, y| x.partial_cmp(y).unwrap());
                let ks = two_sample_ks(&a, &b);
                assert!(ks < 0.01, "law {law:?} z={z}: KS {ks}");
            }
        }
    }

    /// Two-sample KS on sorted data; ties are drained from both sides before
    /// the CDF gap is measured (the data here is integer-valued).
    fn two_sample_ks(a: &[f64], b: &[f64]) -> f64 {
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() || j < b.len() {
            let v = match (a.get(i), b.get(j)) {
                (Some(&x), Some(&y)) => x.min(y),
                (Some(&x), None) => x,
                (None, Some(&y)) => y,
                (None, None) => break,
            };
            while i < a.len() && a[i] <= v {
                i += 1;
            }
            while j < b.len() && b[j] <= v {
                j += 1;
            }
            let diff = (i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs();
            d = d.max(diff);
        }
        d
    }

    #[test]
    fn max_sampler_agrees_with_naive_max() {
        let law = OffspringLaw::Geometric { q: 0.3 };
        let mut r = rng(23);
        let z = 50u64;
        let n = 60_000;
        let mut a: Vec<f64> = (0..n).map(|_| law.sample_max_f64(z, &mut r)).collect();
        let mut b: Vec<f64> = (0..n)
            .map(|_| {
                (0..z)
                    .map(|_| law.sample_individual_f64(&mut r))
                    .fold(0.0f64, f64::max)
            })
            .collect();
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!(two_sample_ks(&a, &b) < 0.015);
    }
}
