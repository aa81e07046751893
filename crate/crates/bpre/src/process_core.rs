//! Exact simulation of the branching process together with its associated
//! random walk, generating-function composition, and the closed-form quenched
//! survival / second-moment formulas used as cross-checks.

use crate::env_models::{EnvironmentModel, LawSampler, OffspringLaw, EXACT_COUNT_LIMIT};
use crate::numeric::log_sum_exp;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Populations above this size stop being simulated particle-exactly and
/// switch to a CLT step in log space (flagged); below `DECAP_LIMIT` a
/// log-space population is rounded back to an integer and exact simulation
/// resumes, so extinction stays reachable.
const INDIVIDUAL_DRAW_LIMIT: u64 = 10_000;
const DECAP_LIMIT: f64 = 1e12;

/// Current population, either an exact count or a log-space value once the
/// exact representation has overflowed.
#[derive(Debug, Clone, Copy)]
pub enum Population {
    Exact(u64),
    Log(f64),
}

impl Population {
    pub fn is_extinct(&self) -> bool {
        matches!(self, Population::Exact(0))
    }

    pub fn is_capped(&self) -> bool {
        matches!(self, Population::Log(_))
    }

    /// ln Z (−inf when extinct).
    pub fn log_value(&self) -> f64 {
        match *self {
            Population::Exact(z) => (z as f64).ln(),
            Population::Log(l) => l,
        }
    }

    /// Saturating integer view.
    pub fn saturated(&self) -> u64 {
        match *self {
            Population::Exact(z) => z,
            Population::Log(l) => {
                if l >= (u64::MAX as f64).ln() {
                    u64::MAX
                } else {
                    l.exp().round() as u64
                }
            }
        }
    }

    /// One reproduction step under `law`. When `record_max` is set, the
    /// maximum single-particle offspring count is also returned; for small
    /// populations the individuals are drawn one by one so the recorded
    /// maximum and the new total are jointly consistent, for large ones the
    /// maximum comes from CDF inversion.
    pub fn advance<R: Rng + ?Sized>(
        &mut self,
        law: OffspringLaw,
        record_max: bool,
        rng: &mut R,
    ) -> Option<f64> {
        let mut max_out = None;
        *self = match *self {
            Population::Exact(0) => Population::Exact(0),
            Population::Exact(z) => {
                let m = law.mean();
                if record_max && z <= INDIVIDUAL_DRAW_LIMIT {
                    // joint draw: total is the sum of the recorded individuals
                    let mut sum = 0.0f64;
                    let mut mx = 0.0f64;
                    for _ in 0..z {
                        let c = law.sample_individual_f64(rng);
                        sum += c;
                        mx = mx.max(c);
                    }
                    max_out = Some(mx);
                    if sum < EXACT_COUNT_LIMIT {
                        Population::Exact(sum as u64)
                    } else {
                        Population::Log(sum.ln())
                    }
                } else if (z as f64) * m.max(1.0) < EXACT_COUNT_LIMIT / 10.0 {
                    let next = law.sample_total_exact(z, rng);
                    if record_max {
                        max_out = Some(law.sample_max_f64(z, rng).min(next as f64));
                    }
                    Population::Exact(next)
                } else if z <= INDIVIDUAL_DRAW_LIMIT {
                    let sum: f64 = (0..z).map(|_| law.sample_individual_f64(rng)).sum();
                    if record_max {
                        max_out = Some(law.sample_max_f64(z, rng).min(sum));
                    }
                    if sum == 0.0 {
                        Population::Exact(0)
                    } else if sum < EXACT_COUNT_LIMIT {
                        Population::Exact(sum as u64)
                    } else {
                        Population::Log(sum.ln())
                    }
                } else {
                    let next = clt_log_step((z as f64).ln(), law, rng);
                    if record_max {
                        max_out = Some(law.sample_max_f64(z, rng));
                    }
                    Population::Log(next)
                }
            }
            Population::Log(l) => {
                if l.exp() < DECAP_LIMIT {
                    let mut p = Population::Exact(l.exp().round().max(0.0) as u64);
                    max_out = p.advance(law, record_max, rng);
                    p
                } else {
                    if record_max {
                        let z_eff = l.exp().min(u64::MAX as f64) as u64;
                        max_out = Some(law.sample_max_f64(z_eff.max(1), rng));
                    }
                    Population::Log(clt_log_step(l, law, rng))
                }
            }
        };
        max_out
    }
}

/// log Z' = log Z + log m + log(1 + xi sqrt(v/Z)/m): the quenched CLT for the
/// sum of Z i.i.d. offspring counts, valid for the huge Z this branch sees.
fn clt_log_step<R: Rng + ?Sized>(log_z: f64, law: OffspringLaw, rng: &mut R) -> f64 {
    let m = law.mean();
    let v = law.variance().max(0.0);
    let xi: f64 = StandardNormal.sample(rng);
    let rel = xi * v.sqrt() / (m * (log_z / 2.0).exp());
    log_z + law.log_mean() + rel.max(-0.999_999).ln_1p()
}

/// A realized environment: the offspring laws of generations 0..n-1 and the
/// associated walk S_0..S_n.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EnvRealization {
    pub laws: Vec<OffspringLaw>,
    pub s: Vec<f64>,
}

impl EnvRealization {
    pub fn from_laws(laws: Vec<OffspringLaw>) -> Self {
        let mut s = Vec::with_capacity(laws.len() + 1);
        s.push(0.0);
        let mut acc = 0.0;
        for law in &laws {
            acc += law.log_mean();
            s.push(acc);
        }
        EnvRealization { laws, s }
    }

    pub fn sample<S: LawSampler, R: Rng + ?Sized>(sampler: &S, n: usize, rng: &mut R) -> Self {
        Self::from_laws((0..n).map(|_| sampler.sample_law(rng)).collect())
    }

    pub fn len(&self) -> usize {
        self.laws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.laws.is_empty()
    }
}

/// f_{k,n}(s) = f_k(f_{k+1}(... f_{n-1}(s)...)), with f_{n,n}(s) = s.
///
/// Linear-fractional runs compose in closed form through their Moebius
/// matrices; a Poisson law anywhere in the chain falls back to stable
/// iteration of the survival-complement maps (still innermost-first).
pub fn compose_pgf(env: &EnvRealization, k: usize, n: usize, s: f64) -> f64 {
    assert!((0.0..=1.0).contains(&s), "pgf argument outside [0,1]");
    1.0 - compose_pgf_complement(env, k, n, 1.0 - s)
}

/// 1 - f_{k,n}(1 - w): the same composition in the complement variable,
/// which is the numerically trustworthy form near w = 0.
pub fn compose_pgf_complement(env: &EnvRealization, k: usize, n: usize, w: f64) -> f64 {
    assert!(k <= n && n <= env.len(), "composition range out of bounds");
    let all_lf = env.laws[k..n]
        .iter()
        .all(|l| l.complement_moebius().is_some());
    if all_lf {
        // product M_k M_{k+1} ... M_{n-1}, outermost on the left
        let mut m = [1.0, 0.0, 0.0, 1.0];
        for law in &env.laws[k..n] {
            let f = law.complement_moebius().unwrap();
            m = [
                m[0] * f[0] + m[1] * f[2],
                m[0] * f[1] + m[1] * f[3],
                m[2] * f[0] + m[3] * f[2],
                m[2] * f[1] + m[3] * f[3],
            ];
            // entries are nonnegative; rescale to dodge under/overflow
            let scale = m[0].max(m[1]).max(m[2]).max(m[3]);
            if scale > 0.0 {
                for e in &mut m {
                    *e /= scale;
                }
            }
        }
        (m[0] * w + m[1]) / (m[2] * w + m[3])
    } else {
        let mut acc = w;
        for law in env.laws[k..n].iter().rev() {
            acc = law.one_minus_pgf(acc);
        }
        acc
    }
}

/// Quenched survival probability P_pi(Z_n > 0), both by direct pgf iteration
/// and by the reciprocal-sum identity
/// (e^{-S_n} + sum_k g_k(f_{k+1,n}(0)) e^{-S_k})^{-1}; the two are returned
/// for cross-validation. Z_0 = 1.
pub fn exact_survival_prob(env: &EnvRealization, n: usize) -> (f64, f64) {
    assert!(n >= 1 && n <= env.len());
    // suffix complements w[j] = 1 - f_{j,n}(0)
    let mut w = vec![0.0; n + 1];
    w[n] = 1.0;
    let mut min_s = env.s[n];
    for j in (0..n).rev() {
        w[j] = env.laws[j].one_minus_pgf(w[j + 1]);
        min_s = min_s.min(env.s[j]);
        // 1 - f_{j,n}(0) <= exp(min_{j<=i<=n} (S_i - S_j)): survival in a
        // quenched environment never beats the worst mean-growth prefix
        assert!(
            w[j] <= (min_s - env.s[j]).exp() * (1.0 + 1e-12),
            "survival complement exceeds the running-minimum bound"
        );
    }
    let direct = w[0];
    let mut denom = (-env.s[n]).exp();
    for k in 0..n {
        denom += env.laws[k].g_complement(w[k + 1]) * (-env.s[k]).exp();
    }
    let formula = 1.0 / denom;
    (direct, formula)
}

/// Quenched second moment E_pi[Z_n^2] with Z_0 = 1, returned as
/// (value, log-value); the value saturates to +inf when out of f64 range but
/// the log form is always finite.
pub fn second_moment(env: &EnvRealization, n: usize) -> (f64, f64) {
    assert!(n >= 1 && n <= env.len());
    let mut terms: Vec<f64> = Vec::with_capacity(n + 1);
    for k in 0..n {
        let eta = env.laws[k].eta();
        if eta > 0.0 {
            // 2 e^{2 S_n} eta(pi_k) e^{-S_k}; derived by telescoping the
            // one-step variance recursion, and pinned by the n=1 closed form
            terms.push(2f64.ln() + 2.0 * env.s[n] + eta.ln() - env.s[k]);
        }
    }
    terms.push(env.s[n]);
    let log_val = log_sum_exp(&terms);
    (log_val.exp(), log_val)
}

/// First-passage and extremum functionals of the realized walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WalkFunctionals {
    /// max_{1<=k<=n} S_k
    pub m_n: f64,
    /// min_{0<=k<=n} S_k
    pub l_n: f64,
    /// first index attaining the minimum
    pub tau_n: usize,
    /// first k >= 1 with S_k < 0 (strict), if any
    pub tau: Option<usize>,
    /// first j >= 1 with X_j > n a (strict), if any
    pub u_n: Option<usize>,
}

pub fn walk_functionals(s: &[f64], a: f64) -> WalkFunctionals {
    let n = s.len() - 1;
    assert!(n >= 1 && s[0] == 0.0);
    let mut m_n = f64::NEG_INFINITY;
    let mut l_n = s[0];
    let mut tau_n = 0usize;
    let mut tau = None;
    let mut u_n = None;
    let threshold = n as f64 * a;
    for k in 1..=n {
        m_n = m_n.max(s[k]);
        if s[k] < l_n {
            l_n = s[k];
            tau_n = k;
        }
        if tau.is_none() && s[k] < 0.0 {
            tau = Some(k);
        }
        if u_n.is_none() && s[k] - s[k - 1] > threshold {
            u_n = Some(k);
        }
    }
    WalkFunctionals {
        m_n,
        l_n,
        tau_n,
        tau,
        u_n,
    }
}

/// Walk-regularity and environment-regularity events whose probability tends
/// to one; reported as empirical frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiagnosticEvents {
    /// max_{1<=k<=n} |S_k + k a| < n^{2/3}
    pub g_n: bool,
    /// 1 + sum_{k=1}^n eta_k <= 2 n e^{n / log n}
    pub h_n: bool,
}

pub fn diagnostic_events(env: &EnvRealization, a: f64) -> DiagnosticEvents {
    let n = env.len();
    assert!(n >= 1);
    let band = (n as f64).powf(2.0 / 3.0);
    let g_n = (1..=n).all(|k| (env.s[k] + k as f64 * a).abs() < band);
    let eta_sum: f64 = env.laws.iter().map(|l| l.eta()).sum();
    // n = 1: n/log n = +inf makes the bound vacuous, as it should be
    let bound = 2.0 * n as f64 * (n as f64 / (n as f64).ln()).exp();
    let h_n = 1.0 + eta_sum <= bound;
    DiagnosticEvents { g_n, h_n }
}

/// Options for `simulate_path`.
#[derive(Debug, Clone, Copy)]
pub struct SimOpts {
    pub z0: u64,
    /// When set, the first generation whose walk increment exceeds this
    /// threshold has its maximum single-particle offspring count recorded.
    pub jump_threshold: Option<f64>,
}

impl Default for SimOpts {
    fn default() -> Self {
        SimOpts {
            z0: 1,
            jump_threshold: None,
        }
    }
}

/// A realized trajectory of the process and its environment.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathRecord {
    /// Z_0..Z_n, saturated where the capped flag is set
    pub z: Vec<u64>,
    /// ln Z_0..ln Z_n (authoritative for capped entries; -inf when extinct)
    pub log_z: Vec<f64>,
    /// per-entry flag: this value lives in log space
    pub capped: Vec<bool>,
    /// S_0..S_n
    pub s: Vec<f64>,
    pub laws: Vec<OffspringLaw>,
    /// N_{U_n}: max single-particle offspring count at the first big-jump
    /// generation, when a jump threshold was requested and the jump happened
    /// before extinction
    pub n_big_jump_offspring: Option<f64>,
    /// index of the first walk increment above the requested threshold
    pub u_n: Option<usize>,
}

impl PathRecord {
    pub fn n(&self) -> usize {
        self.z.len() - 1
    }

    pub fn survived(&self) -> bool {
        self.capped[self.n()] || self.z[self.n()] > 0
    }

    pub fn ever_capped(&self) -> bool {
        self.capped.iter().any(|&c| c)
    }
}

/// Simulate one path of length n, drawing the environment from `sampler`.
pub fn simulate_path<S: LawSampler, R: Rng + ?Sized>(
    sampler: &S,
    n: usize,
    opts: SimOpts,
    rng: &mut R,
) -> PathRecord {
    assert!(n >= 1);
    let laws: Vec<OffspringLaw> = (0..n).map(|_| sampler.sample_law(rng)).collect();
    simulate_path_in_env(&laws, opts, rng)
}

/// Simulate one path through a fixed, already-realized environment.
pub fn simulate_path_in_env<R: Rng + ?Sized>(
    laws: &[OffspringLaw],
    opts: SimOpts,
    rng: &mut R,
) -> PathRecord {
    let n = laws.len();
    let mut z = Vec::with_capacity(n + 1);
    let mut log_z = Vec::with_capacity(n + 1);
    let mut capped = Vec::with_capacity(n + 1);
    let mut s = Vec::with_capacity(n + 1);
    let mut pop = Population::Exact(opts.z0);
    let mut acc = 0.0;
    z.push(pop.saturated());
    log_z.push(pop.log_value());
    capped.push(false);
    s.push(0.0);
    let mut u_n = None;
    let mut n_big = None;
    for (k, law) in laws.iter().enumerate() {
        let x = law.log_mean();
        let is_jump = opts
            .jump_threshold
            .map(|t| u_n.is_none() && x > t)
            .unwrap_or(false);
        if is_jump {
            u_n = Some(k + 1);
        }
        let record = is_jump && !pop.is_extinct();
        let mx = pop.advance(*law, record, rng);
        if record {
            n_big = mx;
        }
        acc += x;
        z.push(pop.saturated());
        log_z.push(pop.log_value());
        capped.push(pop.is_capped());
        s.push(acc);
    }
    PathRecord {
        z,
        log_z,
        capped,
        s,
        laws: laws.to_vec(),
        n_big_jump_offspring: n_big,
        u_n,
    }
}

/// Quenched survival sampler driven by `EnvironmentModel` defaults.
pub fn sample_env<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    n: usize,
    rng: &mut R,
) -> EnvRealization {
    EnvRealization::sample(model, n, rng)
}
