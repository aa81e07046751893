//! Parallel Monte Carlo estimators: naive and big-jump importance-sampled
//! survival probabilities, conditional jump-position laws, explosion
//! statistics among survivors, and the functional-limit statistics.
//!
//! All operations are deterministic given the root seed: work is split into a
//! fixed number of logical shards, each with its own counter-derived stream,
//! and shard results are merged in shard order regardless of worker count.

use crate::env_models::{EnvironmentModel, LawSampler};
use crate::numeric::{mean_stderr, mix_seed};
use crate::process_core::Population;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Fixed logical shard count; results are independent of the worker count.
pub const SHARDS: usize = 64;

/// Run `f` once per shard, each with its own derived stream, across up to
/// `workers` OS threads; results come back in shard order.
pub fn run_sharded<T, F>(seed: u64, salt: u64, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, &mut ChaCha8Rng) -> T + Sync,
{
    let workers = workers.clamp(1, SHARDS);
    let next = AtomicUsize::new(0);
    let mut pairs: Vec<(usize, T)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let next = &next;
                let f = &f;
                scope.spawn(move || {
                    let mut out = Vec::new();
                    loop {
                        let shard = next.fetch_add(1, Ordering::Relaxed);
                        if shard >= SHARDS {
                            break;
                        }
                        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, salt));
                        rng.set_stream(shard as u64);
                        out.push((shard, f(shard, &mut rng)));
                    }
                    out
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("shard worker panicked"))
            .collect()
    });
    pairs.sort_by_key(|(i, _)| *i);
    pairs.into_iter().map(|(_, t)| t).collect()
}

/// Split `total` samples across the shards, front-loading the remainder.
pub fn shard_quota(total: usize, shard: usize) -> usize {
    total / SHARDS + usize::from(shard < total % SHARDS)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    Naive,
    BigJumpIs,
    Conditional,
}

/// A point estimate with uncertainty; mergeable through its sufficient
/// statistics.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Estimate {
    pub point: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub ci95: (f64, f64),
    pub method: Method,
}

/// Sufficient statistics of a sample mean; merge is exact pooling.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MeanAcc {
    pub n: u64,
    pub sum: f64,
    pub sumsq: f64,
}

impl MeanAcc {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        self.sum += x;
        self.sumsq += x * x;
    }

    pub fn merge(&self, other: &MeanAcc) -> MeanAcc {
        MeanAcc {
            n: self.n + other.n,
            sum: self.sum + other.sum,
            sumsq: self.sumsq + other.sumsq,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.n == 0 {
            f64::NAN
        } else {
            self.sum / self.n as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        let n = self.n as f64;
        let var = ((self.sumsq - self.sum * self.sum / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    pub fn to_estimate(&self, method: Method) -> Estimate {
        let point = self.mean();
        let se = self.stderr();
        Estimate {
            point,
            stderr: se,
            n_samples: self.n,
            ci95: (point - 1.96 * se, point + 1.96 * se),
            method,
        }
    }

    /// Estimate for indicator data with a Wilson 95% interval.
    pub fn to_binomial_estimate(&self, method: Method) -> Estimate {
        let n = self.n as f64;
        let p = self.mean();
        let se = (p * (1.0 - p) / n).sqrt();
        let z = 1.959_963_984_540_054f64;
        let denom = 1.0 + z * z / n;
        let center = (p + z * z / (2.0 * n)) / denom;
        let half = z * ((p * (1.0 - p) + z * z / (4.0 * n)) / n).sqrt() / denom;
        Estimate {
            point: p,
            stderr: se,
            n_samples: self.n,
            ci95: ((center - half).max(0.0), (center + half).min(1.0)),
            method,
        }
    }
}

/// Big-jump experiment knobs: forced jump positions 1..=j_max and the scale
/// sequences h_n = h_coeff * log n (jump-time allowance) and
/// delta_n = delta_coeff / log n (explosion threshold exponent offset).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BigJumpConfig {
    pub j_max: usize,
    pub h_coeff: f64,
    pub delta_coeff: f64,
}

impl Default for BigJumpConfig {
    fn default() -> Self {
        BigJumpConfig {
            j_max: 40,
            h_coeff: 1.0,
            delta_coeff: 3.0,
        }
    }
}

impl BigJumpConfig {
    pub fn h_n(&self, n: usize) -> f64 {
        self.h_coeff * (n as f64).ln()
    }

    pub fn delta_n(&self, n: usize) -> f64 {
        self.delta_coeff / (n as f64).ln()
    }

    /// Numerical check of the growth requirements h_n -> inf, h_n/n -> 0 and
    /// n (delta_n - 2/log n) -> inf over the experiment grid.
    pub fn validate_grid(&self, ns: &[usize]) -> Result<(), String> {
        if self.h_coeff <= 0.0 {
            return Err("h_n must grow".into());
        }
        if self.delta_coeff <= 2.0 {
            return Err(format!(
                "delta_n = {}/log n violates n(delta_n - 2/log n) -> inf",
                self.delta_coeff
            ));
        }
        let mut prev_h = 0.0;
        let mut prev_gap = 0.0;
        let mut prev_ratio = f64::INFINITY;
        let mut sorted: Vec<usize> = ns.to_vec();
        sorted.sort_unstable();
        for &n in &sorted {
            if n < 3 {
                return Err(format!("grid value n = {n} too small for h_n = log n"));
            }
            let h = self.h_n(n);
            let ratio = h / n as f64;
            let gap = n as f64 * (self.delta_n(n) - 2.0 / (n as f64).ln());
            if h < prev_h || ratio > prev_ratio + 1e-12 || gap < prev_gap {
                return Err(format!("growth conditions fail between grid points at n = {n}"));
            }
            prev_h = h;
            prev_gap = gap;
            prev_ratio = ratio;
        }
        Ok(())
    }
}

/// Survive-to-n indicator under a free environment; early exit on extinction
/// keeps the expected cost O(1) for subcritical models.
fn survives_free<S: LawSampler, R: Rng + ?Sized>(
    sampler: &S,
    n: usize,
    z0: u64,
    rng: &mut R,
) -> bool {
    let mut pop = Population::Exact(z0);
    for _ in 0..n {
        if pop.is_extinct() {
            return false;
        }
        let law = sampler.sample_law(rng);
        pop.advance(law, false, rng);
    }
    !pop.is_extinct()
}

/// Naive survival estimate with Wilson CI.
pub fn estimate_survival_naive<S: LawSampler + Sync>(
    sampler: &S,
    n: usize,
    z0: u64,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Estimate {
    if n == 0 {
        return Estimate {
            point: if z0 > 0 { 1.0 } else { 0.0 },
            stderr: 0.0,
            n_samples: samples as u64,
            ci95: (1.0, 1.0),
            method: Method::Naive,
        };
    }
    let accs = run_sharded(seed, 0x6e61_6976, workers, |shard, rng| {
        let mut acc = MeanAcc::default();
        for _ in 0..shard_quota(samples, shard) {
            acc.push(if survives_free(sampler, n, z0, rng) {
                1.0
            } else {
                0.0
            });
        }
        acc
    });
    let total = accs.iter().fold(MeanAcc::default(), |a, b| a.merge(b));
    total.to_binomial_estimate(Method::Naive)
}

/// One stratum of the big-jump decomposition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratumReport {
    /// forced jump position; 0 denotes the no-early-jump remainder stratum
    pub j: usize,
    /// analytic stratum weight
    pub weight: f64,
    /// conditional survival frequency inside the stratum
    pub p_hat: f64,
    pub stderr: f64,
    pub survivors: u64,
    pub samples: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurvivalIsReport {
    pub n: usize,
    pub per_j: Vec<StratumReport>,
    pub remainder: StratumReport,
    pub total: Estimate,
}

/// Survival indicator with the jump forced at position `j` (prefix laws
/// conditioned on X <= threshold); `j = 0` means no forced jump and a
/// conditioned prefix of length `prefix_len`.
fn survives_stratum<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    j: usize,
    prefix_len: usize,
    threshold: f64,
    rng: &mut R,
) -> bool {
    let mut pop = Population::Exact(z0);
    for k in 1..=n {
        if pop.is_extinct() {
            return false;
        }
        let law = if j > 0 && k == j {
            model.sample_law_tail(threshold, rng)
        } else if k <= prefix_len {
            model.sample_law_capped(threshold, rng)
        } else {
            model.sample_law(rng)
        };
        pop.advance(law, false, rng);
    }
    !pop.is_extinct()
}

/// Big-jump importance sampling for P(Z_n > 0): the survival event is
/// partitioned by the first jump position U_n. Strata j = 1..=j_max carry
/// analytic weight A(na)(1-A(na))^{j-1}; the leftover event {no jump before
/// j_max} is simulated as its own stratum with weight (1-A(na))^{j_max}, so
/// the estimator is unbiased with no neglected remainder.
pub fn estimate_survival_bigjump(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    cfg: &BigJumpConfig,
    per_j_samples: usize,
    remainder_samples: usize,
    seed: u64,
    workers: usize,
) -> SurvivalIsReport {
    let j_max = cfg.j_max.min(n);
    let threshold = n as f64 * model.a;
    let a_na = model.exact_tail(threshold);
    let log_keep = (-a_na).ln_1p();

    let mut per_j = Vec::with_capacity(j_max);
    let mut var_total = 0.0;
    let mut point_total = 0.0;
    for j in 1..=j_max {
        let weight = a_na * (log_keep * (j - 1) as f64).exp();
        let accs = run_sharded(seed, mix_seed(0x6a75_6d70, j as u64), workers, |shard, rng| {
            let mut acc = MeanAcc::default();
            for _ in 0..shard_quota(per_j_samples, shard) {
                acc.push(if survives_stratum(model, n, z0, j, j - 1, threshold, rng) {
                    1.0
                } else {
                    0.0
                });
            }
            acc
        });
        let acc = accs.iter().fold(MeanAcc::default(), |a, b| a.merge(b));
        let se = acc.stderr();
        point_total += weight * acc.mean();
        var_total += (weight * se).powi(2);
        per_j.push(StratumReport {
            j,
            weight,
            p_hat: acc.mean(),
            stderr: se,
            survivors: acc.sum as u64,
            samples: acc.n,
        });
    }

    let rem_weight = (log_keep * j_max as f64).exp();
    let rem_accs = run_sharded(seed, 0x7265_6d61, workers, |shard, rng| {
        let mut acc = MeanAcc::default();
        for _ in 0..shard_quota(remainder_samples, shard) {
            acc.push(if survives_stratum(model, n, z0, 0, j_max, threshold, rng) {
                1.0
            } else {
                0.0
            });
        }
        acc
    });
    let rem_acc = rem_accs.iter().fold(MeanAcc::default(), |a, b| a.merge(b));
    point_total += rem_weight * rem_acc.mean();
    var_total += (rem_weight * rem_acc.stderr()).powi(2);
    let remainder = StratumReport {
        j: 0,
        weight: rem_weight,
        p_hat: rem_acc.mean(),
        stderr: rem_acc.stderr(),
        survivors: rem_acc.sum as u64,
        samples: rem_acc.n,
    };

    let se = var_total.sqrt();
    let total = Estimate {
        point: point_total,
        stderr: se,
        n_samples: (per_j_samples * j_max + remainder_samples) as u64,
        ci95: (point_total - 1.96 * se, point_total + 1.96 * se),
        method: Method::BigJumpIs,
    };
    SurvivalIsReport {
        n,
        per_j,
        remainder,
        total,
    }
}

/// Walk-only analogue: P(tau > n) = P(L_n >= 0), big-jump stratified the same
/// way (the conditioning event depends only on the walk).
pub fn estimate_tau_tail_bigjump(
    model: &EnvironmentModel,
    n: usize,
    cfg: &BigJumpConfig,
    per_j_samples: usize,
    remainder_samples: usize,
    seed: u64,
    workers: usize,
) -> SurvivalIsReport {
    let j_max = cfg.j_max.min(n);
    let threshold = n as f64 * model.a;
    let a_na = model.exact_tail(threshold);
    let log_keep = (-a_na).ln_1p();

    let walk_event = |j: usize, prefix_len: usize, rng: &mut ChaCha8Rng| -> bool {
        let mut s = 0.0;
        for k in 1..=n {
            let x = if j > 0 && k == j {
                model.sample_x_tail(threshold, rng)
            } else if k <= prefix_len {
                // X | X <= threshold by rejection
                loop {
                    let x = model.sample_x(rng);
                    if x <= threshold {
                        break x;
                    }
                }
            } else {
                model.sample_x(rng)
            };
            s += x;
            if s < 0.0 {
                return false;
            }
        }
        true
    };

    let mut per_j = Vec::with_capacity(j_max);
    let mut var_total = 0.0;
    let mut point_total = 0.0;
    for j in 1..=j_max {
        let weight = a_na * (log_keep * (j - 1) as f64).exp();
        let accs = run_sharded(seed, mix_seed(0x7461_756a, j as u64), workers, |shard, rng| {
            let mut acc = MeanAcc::default();
            for _ in 0..shard_quota(per_j_samples, shard) {
                acc.push(if walk_event(j, j - 1, rng) { 1.0 } else { 0.0 });
            }
            acc
        });
        let acc = accs.iter().fold(MeanAcc::default(), |a, b| a.merge(b));
        point_total += weight * acc.mean();
        var_total += (weight * acc.stderr()).powi(2);
        per_j.push(StratumReport {
            j,
            weight,
            p_hat: acc.mean(),
            stderr: acc.stderr(),
            survivors: acc.sum as u64,
            samples: acc.n,
        });
    }
    let rem_weight = (log_keep * j_max as f64).exp();
    let rem_accs = run_sharded(seed, 0x7461_7572, workers, |shard, rng| {
        let mut acc = MeanAcc::default();
        for _ in 0..shard_quota(remainder_samples, shard) {
            acc.push(if walk_event(0, j_max, rng) { 1.0 } else { 0.0 });
        }
        acc
    });
    let rem_acc = rem_accs.iter().fold(MeanAcc::default(), |a, b| a.merge(b));
    point_total += rem_weight * rem_acc.mean();
    var_total += (rem_weight * rem_acc.stderr()).powi(2);
    let remainder = StratumReport {
        j: 0,
        weight: rem_weight,
        p_hat: rem_acc.mean(),
        stderr: rem_acc.stderr(),
        survivors: rem_acc.sum as u64,
        samples: rem_acc.n,
    };
    let se = var_total.sqrt();
    SurvivalIsReport {
        n,
        per_j,
        remainder,
        total: Estimate {
            point: point_total,
            stderr: se,
            n_samples: (per_j_samples * j_max + remainder_samples) as u64,
            ci95: (point_total - 1.96 * se, point_total + 1.96 * se),
            method: Method::BigJumpIs,
        },
    }
}

/// Naive estimate of E[e^{S_n}; S_n < 0] at a single n (the negative-side
/// exponential moment of the walk).
pub fn neg_exp_moment_naive(
    model: &EnvironmentModel,
    n: usize,
    samples: usize,
    seed: u64,
    workers: usize,
) -> Estimate {
    let accs = run_sharded(seed, 0x6e65_6731, workers, |shard, rng| {
        let mut acc = MeanAcc::default();
        for _ in 0..shard_quota(samples, shard) {
            let mut s = 0.0;
            for _ in 0..n {
                s += model.sample_x(rng);
            }
            acc.push(if s < 0.0 { s.exp() } else { 0.0 });
        }
        acc
    });
    accs.iter()
        .fold(MeanAcc::default(), |a, b| a.merge(b))
        .to_estimate(Method::Naive)
}

/// Empirical conditional law of the jump position.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct UnLawReport {
    pub n: usize,
    /// mass at j = 1.. (index 0 <-> j = 1)
    pub masses: Vec<f64>,
    pub mass_stderr: Vec<f64>,
    /// conditional mass of {U_n > j_cap or undefined}
    pub other_mass: f64,
    pub survivors: u64,
    /// the conditioning event's probability estimate
    pub total: Estimate,
}

/// Law of U_n given {Z_n > 0}, from the big-jump strata: stratum j survivors
/// have U_n = j by construction; remainder survivors are binned by their own
/// realized first jump (or "other" when it never happens).
pub fn conditional_un_given_survival(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    cfg: &BigJumpConfig,
    per_j_samples: usize,
    remainder_samples: usize,
    seed: u64,
    workers: usize,
) -> UnLawReport {
    let report = estimate_survival_bigjump(
        model,
        n,
        z0,
        cfg,
        per_j_samples,
        remainder_samples,
        seed,
        workers,
    );
    let j_cap = cfg.j_max.min(n);
    let p_total = report.total.point;
    let mut masses = vec![0.0; j_cap];
    let mut mass_se = vec![0.0; j_cap];
    let mut survivors = report.remainder.survivors;
    for s in &report.per_j {
        masses[s.j - 1] = s.weight * s.p_hat / p_total;
        mass_se[s.j - 1] = s.weight * s.stderr / p_total;
        survivors += s.survivors;
    }
    // remainder survivors have U_n > j_max (or none) by construction, so
    // their whole conditional mass lands in other_mass
    let rem_contrib = report.remainder.weight * report.remainder.p_hat / p_total;
    UnLawReport {
        n,
        masses,
        mass_stderr: mass_se,
        other_mass: rem_contrib,
        survivors,
        total: report.total,
    }
}

/// Law of U_n given {tau > n} (the walk never dips below zero), naive
/// early-exit sampling.
pub fn conditional_un_given_tau(
    model: &EnvironmentModel,
    n: usize,
    samples: usize,
    j_cap: usize,
    seed: u64,
    workers: usize,
) -> UnLawReport {
    let threshold = n as f64 * model.a;
    let shards = run_sharded(seed, 0x756e_7461, workers, |shard, rng| {
        let mut counts = vec![0u64; j_cap + 2]; // 1..=j_cap, [0] unused, last = other/none
        let mut total = 0u64;
        let mut acc = MeanAcc::default();
        for _ in 0..shard_quota(samples, shard) {
            let mut s = 0.0;
            let mut u_n = None;
            let mut ok = true;
            for k in 1..=n {
                let x = model.sample_x(rng);
                if u_n.is_none() && x > threshold {
                    u_n = Some(k);
                }
                s += x;
                if s < 0.0 {
                    ok = false;
                    break;
                }
            }
            acc.push(if ok { 1.0 } else { 0.0 });
            if ok {
                total += 1;
                match u_n {
                    Some(j) if j <= j_cap => counts[j] += 1,
                    _ => counts[j_cap + 1] += 1,
                }
            }
        }
        (counts, total, acc)
    });
    let mut counts = vec![0u64; j_cap + 2];
    let mut total = 0u64;
    let mut acc = MeanAcc::default();
    for (c, t, a) in shards {
        for (i, v) in c.iter().enumerate() {
            counts[i] += v;
        }
        total += t;
        acc = acc.merge(&a);
    }
    let tf = (total as f64).max(1.0);
    let masses: Vec<f64> = (1..=j_cap).map(|j| counts[j] as f64 / tf).collect();
    let mass_se: Vec<f64> = masses
        .iter()
        .map(|&p| (p * (1.0 - p) / tf).sqrt())
        .collect();
    UnLawReport {
        n,
        masses,
        mass_stderr: mass_se,
        other_mass: counts[j_cap + 1] as f64 / tf,
        survivors: total,
        total: acc.to_binomial_estimate(Method::Naive),
    }
}

/// Weighted frequencies of the big-jump/explosion events among survivors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExplosionReport {
    pub n: usize,
    /// P(U_n < h_n | Z_n > 0)
    pub early_jump: f64,
    /// P(N_{U_n} >= e^{n(a+delta_n)} | Z_n > 0)
    pub explosion: f64,
    /// joint frequency
    pub both: f64,
    /// TV distance between the U_n-law under the two conditionings
    pub tv_diagnostic: f64,
    pub survivors: u64,
    pub survival: Estimate,
}

/// One conditioned path for the explosion/FLT machinery: forced jump at `j`
/// (prefix no-jump), returns (survived, log N at jump, full log_z, full s)
/// when asked to keep the trajectory.
struct JumpPathOutcome {
    survived: bool,
    /// ln of the max single-family size at the jump generation
    log_n_max: f64,
    log_z: Vec<f64>,
    s: Vec<f64>,
    u_n: usize,
}

fn simulate_jump_path<R: Rng + ?Sized>(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    j: usize,
    threshold: f64,
    keep: bool,
    rng: &mut R,
) -> Option<JumpPathOutcome> {
    let mut pop = Population::Exact(z0);
    let mut log_z = Vec::new();
    let mut s_vec = Vec::new();
    let mut s = 0.0;
    let mut log_n_max = f64::NEG_INFINITY;
    if keep {
        log_z.push(pop.log_value());
        s_vec.push(0.0);
    }
    for k in 1..=n {
        if pop.is_extinct() {
            return None;
        }
        let law = if k == j {
            model.sample_law_tail(threshold, rng)
        } else if k < j {
            model.sample_law_capped(threshold, rng)
        } else {
            model.sample_law(rng)
        };
        let mx = pop.advance(law, k == j, rng);
        if k == j {
            log_n_max = mx.map(|m| m.max(1.0).ln()).unwrap_or(f64::NEG_INFINITY);
        }
        s += law.log_mean();
        if keep {
            log_z.push(pop.log_value());
            s_vec.push(s);
        }
    }
    Some(JumpPathOutcome {
        survived: !pop.is_extinct(),
        log_n_max,
        log_z,
        s: s_vec,
        u_n: j,
    })
}

pub fn explosion_statistics(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    cfg: &BigJumpConfig,
    per_j_samples: usize,
    remainder_samples: usize,
    seed: u64,
    workers: usize,
) -> ExplosionReport {
    let threshold = n as f64 * model.a;
    let a_na = model.exact_tail(threshold);
    let log_keep = (-a_na).ln_1p();
    let j_max = cfg.j_max.min(n);
    let h_n = cfg.h_n(n);
    let log_expl = n as f64 * (model.a + cfg.delta_n(n));

    // per stratum: survival freq and explosion freq among survivors
    let mut p_total = 0.0;
    let mut p_early = 0.0;
    let mut p_expl = 0.0;
    let mut p_both = 0.0;
    let mut survivors = 0u64;
    // U_n histograms (bucketed) under the two conditionings for the TV diagnostic
    let bucket = |j: usize| j.min(j_max + 1);
    let mut hist_surv = vec![0.0; j_max + 2];
    let mut hist_cond = vec![0.0; j_max + 2];

    for j in 1..=j_max {
        let weight = a_na * (log_keep * (j - 1) as f64).exp();
        let shards = run_sharded(seed, mix_seed(0x6578_706c, j as u64), workers, |shard, rng| {
            let (mut surv, mut expl, mut total) = (0u64, 0u64, 0u64);
            for _ in 0..shard_quota(per_j_samples, shard) {
                total += 1;
                if let Some(out) =
                    simulate_jump_path(model, n, z0, j, threshold, false, rng)
                {
                    if out.survived {
                        surv += 1;
                        if out.log_n_max >= log_expl {
                            expl += 1;
                        }
                    }
                }
            }
            (surv, expl, total)
        });
        let (surv, expl, total) = shards
            .iter()
            .fold((0u64, 0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
        let p_surv = surv as f64 / total as f64;
        let p_e = expl as f64 / total as f64;
        let early = (j as f64) < h_n;
        p_total += weight * p_surv;
        if early {
            p_early += weight * p_surv;
            p_both += weight * p_e;
        }
        p_expl += weight * p_e;
        survivors += surv;
        hist_surv[bucket(j)] += weight * p_surv;
        if early && p_e > 0.0 {
            hist_cond[bucket(j)] += weight * p_e;
        }
    }

    // remainder stratum: late or no jump; U_n >= j_max+1 never satisfies
    // {U_n < h_n} at the n used here (h_n = log n << j_max), and its N is
    // checked against the realized late jump when one happens
    let rem_weight = (log_keep * j_max as f64).exp();
    let shards = run_sharded(seed, 0x6578_7072, workers, |shard, rng| {
        let (mut surv, mut expl, mut total) = (0u64, 0u64, 0u64);
        for _ in 0..shard_quota(remainder_samples, shard) {
            total += 1;
            let mut pop = Population::Exact(z0);
            let mut u_n = None;
            let mut log_n_max = f64::NEG_INFINITY;
            let mut dead = false;
            for k in 1..=n {
                if pop.is_extinct() {
                    dead = true;
                    break;
                }
                let (law, is_jump) = if k <= j_max {
                    (model.sample_law_capped(threshold, rng), false)
                } else {
                    let law = model.sample_law(rng);
                    let jump = u_n.is_none() && law.log_mean() > threshold;
                    if jump {
                        u_n = Some(k);
                    }
                    (law, jump)
                };
                let mx = pop.advance(law, is_jump, rng);
                if is_jump {
                    log_n_max = mx.map(|m| m.max(1.0).ln()).unwrap_or(f64::NEG_INFINITY);
                }
            }
            if !dead && !pop.is_extinct() {
                surv += 1;
                if u_n.is_some() && log_n_max >= log_expl {
                    expl += 1;
                }
            }
        }
        (surv, expl, total)
    });
    let (surv, expl, total) = shards
        .iter()
        .fold((0u64, 0u64, 0u64), |a, b| (a.0 + b.0, a.1 + b.1, a.2 + b.2));
    let p_surv = surv as f64 / total as f64;
    p_total += rem_weight * p_surv;
    p_expl += rem_weight * (expl as f64 / total as f64);
    survivors += surv;
    hist_surv[j_max + 1] += rem_weight * p_surv;

    let norm_s: f64 = hist_surv.iter().sum();
    let norm_c: f64 = hist_cond.iter().sum::<f64>().max(f64::MIN_POSITIVE);
    let tv = 0.5
        * hist_surv
            .iter()
            .zip(&hist_cond)
            .map(|(a, b)| (a / norm_s - b / norm_c).abs())
            .sum::<f64>();

    ExplosionReport {
        n,
        early_jump: p_early / p_total,
        explosion: p_expl / p_total,
        both: p_both / p_total,
        tv_diagnostic: tv,
        survivors,
        survival: Estimate {
            point: p_total,
            stderr: f64::NAN,
            n_samples: (per_j_samples * j_max + remainder_samples) as u64,
            ci95: (f64::NAN, f64::NAN),
            method: Method::BigJumpIs,
        },
    }
}

/// Functional-limit statistics over conditioned survivors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FltReport {
    pub n: usize,
    pub grid: Vec<f64>,
    pub survivors: u64,
    pub attempted: u64,
    /// mean of the ratio statistic R(t) per grid time
    pub mean_r: Vec<f64>,
    pub stderr_r: Vec<f64>,
    /// KS of W(1) against N(0,1)
    pub ks_w1: f64,
    pub ks_w1_pvalue: f64,
    /// KS of W(1) - W(eps) against N(0, 1-eps)
    pub ks_increment: f64,
    pub increment_eps: f64,
    /// empirical corr(W(1/2), W(1))
    pub corr_half_one: f64,
    /// max over grid pairs of |cov(W(s),W(t)) - min(s,t)|
    pub max_cov_dev: f64,
    /// per-grid-time count of capped evaluations (flagged, excluded from R)
    pub capped_at_grid: Vec<u64>,
}

/// Draw conditioned survivors per the jump-explosion conditioning: jump
/// position j sampled from the truncated-geometric law of U_n restricted to
/// j < h_n, forced jump, explosion filter N_{U_n} >= e^{n(a+delta_n)}, and
/// survival to n; rejected attempts are discarded.
pub fn flt_suite(
    model: &EnvironmentModel,
    n: usize,
    z0: u64,
    target_survivors: usize,
    grid_points: usize,
    cfg: &BigJumpConfig,
    seed: u64,
    workers: usize,
) -> FltReport {
    let threshold = n as f64 * model.a;
    let a_na = model.exact_tail(threshold);
    let h_n = cfg.h_n(n);
    let j_hi = (h_n.ceil() as usize).clamp(1, n);
    let log_expl = n as f64 * (model.a + cfg.delta_n(n));
    let grid: Vec<f64> = (0..=grid_points)
        .map(|i| i as f64 / grid_points as f64)
        .collect();
    let sigma_sqrt_n = (model.sigma2 * n as f64).sqrt();

    // jump-position law restricted to {1..j_hi}: geometric(A(na)) truncated
    let mut jw: Vec<f64> = (0..j_hi)
        .map(|i| a_na * (1.0 - a_na).powi(i as i32))
        .collect();
    let z: f64 = jw.iter().sum();
    for w in &mut jw {
        *w /= z;
    }

    let per_shard_target = target_survivors / SHARDS + 1;
    let shard_results = run_sharded(seed, 0x666c_7421, workers, |_shard, rng| {
        let mut ws: Vec<Vec<f64>> = Vec::new();
        let mut rs: Vec<Vec<f64>> = Vec::new();
        let mut caps: Vec<Vec<bool>> = Vec::new();
        let mut attempted = 0u64;
        while ws.len() < per_shard_target {
            attempted += 1;
            assert!(
                attempted < 200_000 * per_shard_target as u64,
                "conditioned-survivor acceptance collapsed"
            );
            // sample j from the truncated law
            let u: f64 = rng.gen();
            let mut acc = 0.0;
            let mut j = j_hi;
            for (i, &w) in jw.iter().enumerate() {
                acc += w;
                if u <= acc {
                    j = i + 1;
                    break;
                }
            }
            let Some(out) = simulate_jump_path(model, n, z0, j, threshold, true, rng) else {
                continue;
            };
            if !out.survived || out.log_n_max < log_expl {
                continue;
            }
            let u_idx = out.u_n;
            let lz_u = out.log_z[u_idx];
            let s_u = out.s[u_idx];
            let mut wrow = Vec::with_capacity(grid.len());
            let mut rrow = Vec::with_capacity(grid.len());
            let mut crow = Vec::with_capacity(grid.len());
            for &t in &grid {
                let idx = ((n as f64 * t) as usize).max(u_idx).min(n);
                let lw = out.log_z[idx] - lz_u;
                wrow.push((lw + n as f64 * t * model.a) / sigma_sqrt_n);
                rrow.push((lw - (out.s[idx] - s_u)).exp());
                // log-space branch entries are flagged for the R statistic
                crow.push(!out.log_z[idx].is_finite());
            }
            ws.push(wrow);
            rs.push(rrow);
            caps.push(crow);
        }
        (ws, rs, caps, attempted)
    });

    let mut ws: Vec<Vec<f64>> = Vec::new();
    let mut rs: Vec<Vec<f64>> = Vec::new();
    let mut attempted = 0u64;
    let mut capped_at_grid = vec![0u64; grid.len()];
    for (w, r, c, att) in shard_results {
        for (row_i, row) in c.iter().enumerate() {
            for (gi, &flag) in row.iter().enumerate() {
                if flag {
                    capped_at_grid[gi] += 1;
                }
            }
            let _ = row_i;
        }
        ws.extend(w);
        rs.extend(r);
        attempted += att;
    }
    let m = ws.len();

    let mut mean_r = Vec::with_capacity(grid.len());
    let mut stderr_r = Vec::with_capacity(grid.len());
    for gi in 0..grid.len() {
        let col: Vec<f64> = rs.iter().map(|row| row[gi]).collect();
        let (mu, se) = mean_stderr(&col);
        mean_r.push(mu);
        stderr_r.push(se);
    }

    let w_at = |t: f64, row: &Vec<f64>| -> f64 {
        let gi = (t * grid_points as f64).round() as usize;
        row[gi]
    };
    let w1: Vec<f64> = ws.iter().map(|row| w_at(1.0, row)).collect();
    let (ks_w1, ks_p) = ks_statistic(&w1, |x| standard_normal_cdf(x));
    let eps = 0.2;
    let incr: Vec<f64> = ws.iter().map(|row| w_at(1.0, row) - w_at(eps, row)).collect();
    let sd_incr = (1.0 - eps).sqrt();
    let (ks_inc, _) = ks_statistic(&incr, |x| standard_normal_cdf(x / sd_incr));

    let wh: Vec<f64> = ws.iter().map(|row| w_at(0.5, row)).collect();
    let corr = correlation(&wh, &w1);

    // covariance over a coarse sub-grid vs min(s,t)
    let sub: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.0].to_vec();
    let mut max_dev = 0.0f64;
    for &s in &sub {
        for &t in &sub {
            let xs: Vec<f64> = ws.iter().map(|row| w_at(s, row)).collect();
            let ys: Vec<f64> = ws.iter().map(|row| w_at(t, row)).collect();
            let c = covariance(&xs, &ys);
            max_dev = max_dev.max((c - s.min(t)).abs());
        }
    }

    FltReport {
        n,
        grid,
        survivors: m as u64,
        attempted,
        mean_r,
        stderr_r,
        ks_w1,
        ks_w1_pvalue: ks_p,
        ks_increment: ks_inc,
        increment_eps: eps,
        corr_half_one: corr,
        max_cov_dev: max_dev,
        capped_at_grid,
    }
}

fn covariance(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    x.iter()
        .zip(y)
        .map(|(a, b)| (a - mx) * (b - my))
        .sum::<f64>()
        / (n - 1.0)
}

fn correlation(x: &[f64], y: &[f64]) -> f64 {
    covariance(x, y) / (covariance(x, x) * covariance(y, y)).sqrt()
}

pub fn standard_normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided one-sample Kolmogorov-Smirnov statistic with the asymptotic
/// p-value (Kolmogorov series with the standard finite-n argument scaling).
pub fn ks_statistic<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> (f64, f64) {
    assert!(samples.len() >= 8, "need at least 8 samples");
    assert!(
        samples.iter().all(|x| x.is_finite()),
        "KS input contains non-finite values"
    );
    let mut xs: Vec<f64> = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        let lo = i as f64 / n;
        let hi = (i + 1) as f64 / n;
        d = d.max((f - lo).abs()).max((hi - f).abs());
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut p = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = 2.0 * (-1.0f64).powi(k + 1) * (-2.0 * kf * kf * lambda * lambda).exp();
        p += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    (d, p.clamp(0.0, 1.0))
}
