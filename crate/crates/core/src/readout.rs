//! Photon-counting readout of the ancilla register.
//!
//! During a window of length T every trapped excited ancilla produces
//! detected counts at rate 1/T_photon until it is lost (rate 1/T_loss), and
//! every site collects background counts at rate 1/T_bg. The count
//! distributions follow in closed form; the discrete-time Markov process is
//! sampled for Monte Carlo comparisons and for the atom-resolved classifier.

use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::dynamics::{ExcitationDistributions, Logical};
use crate::error::{Error, Result};
use crate::seed;
use crate::stats;

/// Mass allowed beyond the cutoff of a base distribution.
pub const TAIL_TOLERANCE: f64 = 1e-14;
/// Mass a convolution may drop when trimming trailing bins.
const TRIM_TOLERANCE: f64 = 1e-15;
/// Mass below which a convolution term is skipped.
const CONV_FLOOR: f64 = 1e-300;
/// Log-likelihood floor for counts a model deems impossible.
pub const LN_FLOOR: f64 = -690.7755278982137;
/// Allowed normalization defect of an analytic pmf.
const NORMALIZATION_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReadoutParams {
    /// Mean time between fluorescence photons scattered by a trapped atom, µs.
    pub t_photon: f64,
    /// Mean time between background photons per site, µs.
    pub t_bg: f64,
    /// Mean trapping lifetime under imaging light, µs.
    pub t_loss: f64,
    /// Integration time, µs.
    pub t_meas: f64,
    /// Markov step, µs.
    pub dt: f64,
    /// Fraction of photons the camera registers. Scales both the fluorescence
    /// and the background rate; set to 1 when the time constants already
    /// describe detected counts.
    pub detection_fraction: f64,
}

impl Default for ReadoutParams {
    fn default() -> Self {
        Self {
            t_photon: 0.013,
            t_bg: 0.19,
            t_loss: 200.0,
            t_meas: 6.0,
            dt: 1e-3,
            detection_fraction: 7.96e-3,
        }
    }
}

impl ReadoutParams {
    pub fn with_t_meas(mut self, t_meas: f64) -> Self {
        self.t_meas = t_meas;
        self
    }

    /// Time constants may be infinite to switch a process off.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("t_photon", self.t_photon), ("t_bg", self.t_bg), ("t_loss", self.t_loss)] {
            if !(v > 0.0) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.t_meas >= 0.0) || !self.t_meas.is_finite() {
            return Err(Error::invalid(format!("t_meas must be finite and non-negative, got {}", self.t_meas)));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.detection_fraction > 0.0 && self.detection_fraction <= 1.0) {
            return Err(Error::invalid("detection fraction must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Mean time between detected fluorescence counts, µs.
    pub fn detected_photon_time(&self) -> f64 {
        self.t_photon / self.detection_fraction
    }

    /// Mean time between detected background counts per site, µs.
    pub fn detected_background_time(&self) -> f64 {
        self.t_bg / self.detection_fraction
    }

    /// Mean detected fluorescence counts of an atom that is never lost.
    pub fn photon_mean(&self) -> f64 {
        self.t_meas / self.detected_photon_time()
    }

    /// Mean detected background counts per site.
    pub fn background_mean(&self) -> f64 {
        self.t_meas / self.detected_background_time()
    }

    /// Markov steps covering the window.
    pub fn steps(&self) -> u64 {
        (self.t_meas / self.dt - 1e-9).ceil().max(0.0) as u64
    }
}

/// Pmf over counts 0..len with the mass beyond the cutoff kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountDistribution {
    pmf: Vec<f64>,
    tail: f64,
}

impl CountDistribution {
    pub fn new(pmf: Vec<f64>, tail: f64) -> Result<Self> {
        if pmf.is_empty() || pmf.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) || !(tail >= 0.0) {
            return Err(Error::invalid("pmf entries and tail must be finite and non-negative"));
        }
        let d = Self { pmf, tail };
        let total = d.total();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::Normalization { total });
        }
        Ok(d)
    }

    pub fn delta(k: usize) -> Self {
        let mut pmf = vec![0.0; k + 1];
        pmf[k] = 1.0;
        Self { pmf, tail: 0.0 }
    }

    /// Poisson pmf truncated once the remaining tail is below `eps`.
    ///
    /// Built by the ratio recurrence outward from the mode and normalized at
    /// the end, which keeps the total mass exact to rounding even for means
    /// in the thousands.
    pub fn poisson(mean: f64, eps: f64) -> Self {
        if mean == 0.0 {
            return Self::delta(0);
        }
        let mode = mean.floor() as usize;
        let p_mode = ln_poisson(mode as u64, mean).exp();
        let mut w = vec![0.0; mode + 1];
        w[mode] = 1.0;
        for k in (0..mode).rev() {
            w[k] = w[k + 1] * (k as f64 + 1.0) / mean;
        }
        let mut k = mode;
        let tail = loop {
            let next = w[k] * mean / (k as f64 + 1.0);
            let ratio = mean / (k as f64 + 2.0);
            let bound = p_mode * next / (1.0 - ratio);
            if ratio < 1.0 && bound < eps {
                break bound;
            }
            w.push(next);
            k += 1;
        };
        let scale = (1.0 - tail) / w.iter().sum::<f64>();
        w.iter_mut().for_each(|x| *x *= scale);
        Self { pmf: w, tail }
    }

    pub fn pmf(&self) -> &[f64] {
        &self.pmf
    }

    pub fn tail(&self) -> f64 {
        self.tail
    }

    pub fn len(&self) -> usize {
        self.pmf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pmf.is_empty()
    }

    pub fn get(&self, m: usize) -> f64 {
        self.pmf.get(m).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        self.pmf.iter().sum::<f64>() + self.tail
    }

    pub fn mean(&self) -> f64 {
        self.pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    /// P(count ≥ k), tail included.
    pub fn survival(&self, k: usize) -> f64 {
        self.pmf.iter().skip(k).sum::<f64>() + self.tail
    }

    /// Distribution of the sum of independent draws.
    pub fn convolve(&self, other: &CountDistribution) -> CountDistribution {
        let (a, b) = if self.len() >= other.len() { (self, other) } else { (other, self) };
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (j, &pb) in b.pmf.iter().enumerate() {
            if pb < CONV_FLOOR {
                continue;
            }
            for (o, &pa) in out[j..].iter_mut().zip(&a.pmf) {
                *o += pa * pb;
            }
        }
        let kept = (1.0 - a.tail) * (1.0 - b.tail);
        let mut d = CountDistribution {
            pmf: out,
            tail: 1.0 - kept,
        };
        d.trim(TRIM_TOLERANCE);
        d
    }

    /// Moves trailing bins holding less than `eps` in total into the tail.
    pub fn trim(&mut self, eps: f64) {
        let mut dropped = 0.0;
        while self.pmf.len() > 1 {
            let last = *self.pmf.last().unwrap();
            if dropped + last >= eps {
                break;
            }
            dropped += last;
            self.pmf.pop();
        }
        self.tail += dropped;
    }

    /// Mixture Σ wᵢ dᵢ.
    pub fn mixture(weights: &[f64], parts: &[CountDistribution]) -> CountDistribution {
        let len = parts.iter().map(|p| p.len()).max().unwrap_or(1);
        let mut pmf = vec![0.0; len];
        let mut tail = 0.0;
        for (w, d) in weights.iter().zip(parts) {
            if *w == 0.0 {
                continue;
            }
            for (o, p) in pmf.iter_mut().zip(&d.pmf) {
                *o += w * p;
            }
            tail += w * d.tail;
        }
        CountDistribution { pmf, tail }
    }
}

/// ln of e^{−μ} μ^k / k!.
pub fn ln_poisson(k: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if k == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    k as f64 * mean.ln() - mean - ln_gamma(k as f64 + 1.0)
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    values.into_iter().fold(f64::NEG_INFINITY, log_add)
}

/// ln P(a, x) for the regularized lower incomplete gamma function with
/// integer `a ≥ 1`: P(a, x) = Pr[Poisson(x) ≥ a].
pub fn ln_regularized_lower_gamma_int(a: u64, x: f64) -> f64 {
    assert!(a >= 1, "order must be positive");
    if x == 0.0 {
        return f64::NEG_INFINITY;
    }
    if x.is_infinite() {
        return 0.0;
    }
    if (a as f64) > x {
        // Σ_{j≥a} pois(j): terms shrink by x/(j+1) < 1
        let first = ln_poisson(a, x);
        let mut acc = 1.0;
        let mut term = 1.0;
        let mut j = a;
        loop {
            term *= x / (j as f64 + 1.0);
            acc += term;
            j += 1;
            if term < acc * 1e-17 {
                break;
            }
        }
        first + acc.ln()
    } else {
        // 1 − Σ_{j<a} pois(j), with the CDF below ½ or so
        let cdf = log_sum_exp((0..a).map(|j| ln_poisson(j, x))).exp();
        (-cdf).ln_1p()
    }
}

/// γ(a, x)/Γ(a) for integer `a ≥ 1`.
pub fn regularized_lower_gamma_int(a: u64, x: f64) -> f64 {
    ln_regularized_lower_gamma_int(a, x).exp()
}

/// γ(n+1, x) = n!·(1 − e^{−x} Σ_{k≤n} x^k/k!).
pub fn lower_incomplete_gamma_int(n_plus_1: u64, x: f64) -> f64 {
    (ln_gamma(n_plus_1 as f64) + ln_regularized_lower_gamma_int(n_plus_1, x)).exp()
}

/// Constants of the single-atom count law.
#[derive(Debug, Clone, Copy)]
struct AtomLaw {
    /// ln τ/(T_loss+τ), τ the detected photon time.
    ln_a: f64,
    /// ln T_loss/(T_loss+τ).
    ln_b: f64,
    /// λT with λ = 1/τ + 1/T_loss.
    lambda_t: f64,
    /// ln e^{−T/T_loss}.
    ln_survive: f64,
    photon_mean: f64,
}

impl AtomLaw {
    fn new(p: &ReadoutParams) -> Self {
        let tau = p.detected_photon_time();
        let ratio = tau / p.t_loss;
        Self {
            ln_a: (ratio / (1.0 + ratio)).ln(),
            ln_b: -ratio.ln_1p(),
            lambda_t: p.t_meas * (1.0 / tau + 1.0 / p.t_loss),
            ln_survive: -p.t_meas / p.t_loss,
            photon_mean: p.photon_mean(),
        }
    }

    fn ln_lost(&self, k: u64) -> f64 {
        if self.ln_a == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.ln_a + k as f64 * self.ln_b + ln_regularized_lower_gamma_int(k + 1, self.lambda_t)
    }

    fn ln_pmf(&self, k: u64) -> f64 {
        log_add(self.ln_lost(k), self.ln_survive + ln_poisson(k, self.photon_mean))
    }
}

/// ln P_atom(k) from the closed form, valid for any `k`.
pub fn ln_p_atom(params: &ReadoutParams, k: u64) -> f64 {
    AtomLaw::new(params).ln_pmf(k)
}

/// Detected fluorescence counts of one excited ancilla, marginalized over
/// its loss time.
pub fn p_atom_analytic(params: &ReadoutParams) -> Result<CountDistribution> {
    params.validate()?;
    if params.t_meas == 0.0 {
        return Ok(CountDistribution::delta(0));
    }
    let law = AtomLaw::new(params);
    // Poisson(λT) upper tails P(k+1, λT) from one reverse cumulative sum
    // carried far past the cutoff so that the reverse sums are accurate
    let pois = CountDistribution::poisson(law.lambda_t, 1e-40);
    let emit = CountDistribution::poisson(law.photon_mean, 1e-40);
    let mut upper = vec![0.0; pois.len()];
    let mut acc = 0.0;
    for k in (0..pois.len()).rev() {
        upper[k] = acc;
        acc += pois.pmf()[k];
    }
    let a = law.ln_a.exp();
    let survive = law.ln_survive.exp();
    let pmf: Vec<f64> = (0..pois.len())
        .map(|k| {
            let lost = if a == 0.0 { 0.0 } else { a * (k as f64 * law.ln_b).exp() * upper[k] };
            lost + survive * emit.get(k)
        })
        .collect();
    let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
    let mut d = CountDistribution::new(pmf, tail)?;
    d.trim(TRIM_TOLERANCE);
    Ok(d)
}

/// Background counts of one site.
pub fn background_distribution(params: &ReadoutParams, sites: usize) -> CountDistribution {
    CountDistribution::poisson(sites as f64 * params.background_mean(), TAIL_TOLERANCE)
}

/// (P, Q): counts of a site with an excited atom, and of an empty one.
pub fn site_distributions(params: &ReadoutParams) -> Result<(CountDistribution, CountDistribution)> {
    let atom = p_atom_analytic(params)?;
    let q = background_distribution(params, 1);
    Ok((atom.convolve(&q), q))
}

/// Total-count distributions conditioned on exactly n = 0..=n_max excited
/// ancillae among `sites`.
pub fn conditional_total_counts(params: &ReadoutParams, sites: usize, n_max: usize) -> Result<Vec<CountDistribution>> {
    let atom = p_atom_analytic(params)?;
    let mut out = Vec::with_capacity(n_max + 1);
    out.push(background_distribution(params, sites));
    for n in 1..=n_max {
        let next = out[n - 1].convolve(&atom);
        out.push(next);
    }
    Ok(out)
}

/// Total count over `p.len() − 1` sites when n ancillae are excited with
/// probability `p[n]`.
pub fn aggregated_distribution(p: &[f64], params: &ReadoutParams) -> Result<CountDistribution> {
    let sites = p.len().checked_sub(1).ok_or_else(|| Error::invalid("empty excitation distribution"))?;
    let last = p.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let parts = conditional_total_counts(params, sites, last)?;
    Ok(CountDistribution::mixture(&p[..=last], &parts))
}

/// (q^{|0⟩}, q^{|1⟩}) for both logical inputs.
pub fn aggregated_distributions(
    d: &ExcitationDistributions,
    params: &ReadoutParams,
) -> Result<(CountDistribution, CountDistribution)> {
    let sites = d.n_ancillae;
    let support = |p: &[f64]| p.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    let last = support(&d.p0).max(support(&d.p1));
    let parts = conditional_total_counts(params, sites, last)?;
    let q0 = CountDistribution::mixture(&d.p0[..=last], &parts);
    let q1 = CountDistribution::mixture(&d.p1[..=last], &parts);
    Ok((q0, q1))
}

/// ½ − ¼ Σ_m |q0_m − q1_m|.
pub fn measurement_infidelity(q0: &CountDistribution, q1: &CountDistribution) -> f64 {
    stats::tvd_infidelity(q0.pmf(), q1.pmf())
}

/// Error of the equal-prior decision that picks the likelier hypothesis for
/// every count.
pub fn optimal_decision_error(q0: &CountDistribution, q1: &CountDistribution) -> f64 {
    let len = q0.len().max(q1.len());
    0.5 * (0..len).map(|m| q0.get(m).min(q1.get(m))).sum::<f64>()
}

/// Aggregated measurement infidelity with its delta-method standard error
/// from the finite trajectory sample behind `d`.
pub fn aggregated_infidelity(d: &ExcitationDistributions, params: &ReadoutParams) -> Result<(f64, f64)> {
    let parts = conditional_total_counts(params, d.n_ancillae, d.n_ancillae)?;
    let q0 = CountDistribution::mixture(&d.p0, &parts);
    let q1 = CountDistribution::mixture(&d.p1, &parts);
    let value = measurement_infidelity(&q0, &q1);
    let se = if d.trajectories == 0 {
        0.0
    } else {
        stats::mixture_infidelity_stderr(&d.p0, &d.p1, q0.pmf(), q1.pmf(), |n| parts[n].pmf().to_vec(), d.trajectories)
    };
    Ok((value, se))
}

/// Per-site counts, excited sites first.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub counts: Vec<u64>,
}

impl MeasurementRecord {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Draws one record of the discrete-time Markov process.
///
/// Per step, a trapped excited ancilla emits a detected count with
/// probability ηdt/T_photon and is then lost with probability dt/T_loss; each
/// site independently registers a background count with probability
/// ηdt/T_bg, η the detection fraction. The per-site totals are drawn from their exact laws (binomial
/// counts over a geometric survival time), so the cost does not depend on
/// `dt`.
pub fn markov_sample<R: Rng>(
    n_excited: usize,
    n_sites: usize,
    params: &ReadoutParams,
    rng: &mut R,
) -> Result<MeasurementRecord> {
    if n_excited > n_sites {
        return Err(Error::invalid(format!("{n_excited} excited ancillae on {n_sites} sites")));
    }
    let steps = params.steps();
    let p_photon = step_probability(params.dt, params.detected_photon_time())?;
    let p_bg = step_probability(params.dt, params.detected_background_time())?;
    let p_loss = step_probability(params.dt, params.t_loss)?;
    let bg = Binomial::new(steps, p_bg).map_err(|e| Error::invalid(e.to_string()))?;
    let loss = if p_loss > 0.0 {
        Some(Geometric::new(p_loss).map_err(|e| Error::invalid(e.to_string()))?)
    } else {
        None
    };
    let counts = (0..n_sites)
        .map(|site| {
            let mut c = bg.sample(rng);
            if site < n_excited {
                // bright steps: up to and including the step of loss
                let bright = match &loss {
                    Some(g) => g.sample(rng).saturating_add(1).min(steps),
                    None => steps,
                };
                c += Binomial::new(bright, p_photon).expect("valid probability").sample(rng);
            }
            c
        })
        .collect();
    Ok(MeasurementRecord { counts })
}

fn step_probability(dt: f64, t: f64) -> Result<f64> {
    let p = dt / t;
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("step dt = {dt} exceeds time constant {t}")));
    }
    Ok(p)
}

/// Log-likelihoods of per-site counts, with closed-form fallbacks beyond
/// the truncated pmfs.
#[derive(Debug, Clone)]
pub struct SiteModel {
    params: ReadoutParams,
    law: AtomLaw,
    ln_p: Vec<f64>,
    ln_q: Vec<f64>,
}

impl SiteModel {
    pub fn new(params: &ReadoutParams) -> Result<Self> {
        let (p, q) = site_distributions(params)?;
        let ln = |d: &CountDistribution| d.pmf().iter().map(|&x| if x > CONV_FLOOR { x.ln() } else { f64::NAN }).collect();
        Ok(Self {
            params: *params,
            law: AtomLaw::new(params),
            ln_p: ln(&p),
            ln_q: ln(&q),
        })
    }

    pub fn ln_q(&self, m: u64) -> f64 {
        match self.ln_q.get(m as usize) {
            Some(v) if !v.is_nan() => *v,
            _ => ln_poisson(m, self.params.background_mean()),
        }
        .max(LN_FLOOR)
    }

    pub fn ln_p(&self, m: u64) -> f64 {
        match self.ln_p.get(m as usize) {
            Some(v) if !v.is_nan() => *v,
            _ => {
                let bg = self.params.background_mean();
                log_sum_exp((0..=m).map(|k| self.law.ln_pmf(k) + ln_poisson(m - k, bg)))
            }
        }
        .max(LN_FLOOR)
    }
}

/// e_k(r₁..r_N) for k = 0..=N by the product expansion Π(1 + rᵢx).
pub fn elementary_symmetric(r: &[f64]) -> Vec<f64> {
    let mut e = vec![0.0; r.len() + 1];
    e[0] = 1.0;
    for (i, &ri) in r.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] += ri * e[k - 1];
        }
    }
    e
}

/// ln e_k from ln rᵢ, without overflow.
pub fn ln_elementary_symmetric(ln_r: &[f64]) -> Vec<f64> {
    let mut e = vec![f64::NEG_INFINITY; ln_r.len() + 1];
    e[0] = 0.0;
    for (i, &lr) in ln_r.iter().enumerate() {
        for k in (1..=i + 1).rev() {
            e[k] = log_add(e[k], e[k - 1] + lr);
        }
    }
    e
}

fn ln_binomial(n: usize, k: usize) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MleDecision {
    pub state: Logical,
    pub ln_likelihood0: f64,
    pub ln_likelihood1: f64,
}

/// Full log-likelihood ln ℒ(m | s) = Σ ln Q(mᵢ) + ln Σ_n p_n e_n(r)/C(N, n).
pub fn ln_likelihood(record: &MeasurementRecord, p: &[f64], site: &SiteModel) -> f64 {
    let n = record.counts.len();
    let ln_q: Vec<f64> = record.counts.iter().map(|&m| site.ln_q(m)).collect();
    let ln_r: Vec<f64> = record.counts.iter().zip(&ln_q).map(|(&m, lq)| site.ln_p(m) - lq).collect();
    let e = ln_elementary_symmetric(&ln_r);
    let mix = log_sum_exp(
        p.iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(k, &w)| w.ln() + e[k] - ln_binomial(n, k)),
    );
    ln_q.iter().sum::<f64>() + mix
}

/// Maximum-likelihood estimate of the data state from per-site counts.
/// Exact ties resolve to |1⟩.
pub fn mle_classify(record: &MeasurementRecord, p0: &[f64], p1: &[f64], site: &SiteModel) -> Result<MleDecision> {
    if p0.len() != record.counts.len() + 1 || p1.len() != p0.len() {
        return Err(Error::invalid("distributions must cover 0..=N excited ancillae"));
    }
    if p0 == p1 {
        return Err(Error::DegenerateHypotheses);
    }
    let l0 = ln_likelihood(record, p0, site);
    let l1 = ln_likelihood(record, p1, site);
    Ok(MleDecision {
        state: if l1 >= l0 { Logical::One } else { Logical::Zero },
        ln_likelihood0: l0,
        ln_likelihood1: l1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MleEstimate {
    /// Mean of the two per-hypothesis error rates.
    pub infidelity: f64,
    pub stderr: f64,
    pub error0: f64,
    pub error1: f64,
    /// √(e(1−e)/n) per hypothesis.
    pub stderr0: f64,
    pub stderr1: f64,
    pub records: usize,
}

/// Monte Carlo error rate of the atom-resolved classifier: draws n from
/// p^{|s⟩}, samples a record and classifies it, for `n_records` per state.
pub fn mle_infidelity(
    p0: &[f64],
    p1: &[f64],
    params: &ReadoutParams,
    n_records: usize,
    seed: u64,
) -> Result<MleEstimate> {
    if n_records == 0 {
        return Err(Error::invalid("need at least one record"));
    }
    if p0 == p1 {
        return Err(Error::DegenerateHypotheses);
    }
    let n_sites = p0.len() - 1;
    let site = SiteModel::new(params)?;
    let rate = |s: Logical, p: &[f64]| -> Result<f64> {
        let errors: usize = (0..n_records)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng_from(seed::derive(seed, &[s as u64, i as u64]));
                let n = sample_index(p, &mut rng);
                let record = markov_sample(n, n_sites, params, &mut rng)?;
                Ok(usize::from(mle_classify(&record, p0, p1, &site)?.state != s))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .sum();
        Ok(errors as f64 / n_records as f64)
    };
    let e0 = rate(Logical::Zero, p0)?;
    let e1 = rate(Logical::One, p1)?;
    let se = |e: f64| (e * (1.0 - e) / n_records as f64).sqrt();
    Ok(MleEstimate {
        infidelity: 0.5 * (e0 + e1),
        stderr: 0.5 * (se(e0).powi(2) + se(e1).powi(2)).sqrt(),
        error0: e0,
        error1: e1,
        stderr0: se(e0),
        stderr1: se(e1),
        records: n_records,
    })
}

fn sample_index<R: Rng>(p: &[f64], rng: &mut R) -> usize {
    let total: f64 = p.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (k, &w) in p.iter().enumerate() {
        if u < w {
            return k;
        }
        u -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{Discrete, Poisson};

    /// Default time constants read as detected-count times.
    fn params(t: f64) -> ReadoutParams {
        ReadoutParams {
            detection_fraction: 1.0,
            ..ReadoutParams::default().with_t_meas(t)
        }
    }

    #[test]
    fn detection_fraction_scales_both_rates() {
        let p = ReadoutParams::default().with_t_meas(25.0);
        assert_relative_eq!(p.photon_mean(), 25.0 * 7.96e-3 / 0.013, max_relative = 1e-12);
        assert_relative_eq!(p.background_mean(), 25.0 * 7.96e-3 / 0.19, max_relative = 1e-12);
        let detected = ReadoutParams {
            t_photon: p.detected_photon_time(),
            t_bg: p.detected_background_time(),
            detection_fraction: 1.0,
            ..p
        };
        let (a, b) = (p_atom_analytic(&p).unwrap(), p_atom_analytic(&detected).unwrap());
        assert_eq!(a.len(), b.len());
        for k in 0..a.len() {
            assert_relative_eq!(a.get(k), b.get(k), max_relative = 1e-12, epsilon = 1e-300);
        }
    }

    #[test]
    fn incomplete_gamma_identities() {
        for x in [0.0, 0.3, 2.0, 17.5] {
            assert_relative_eq!(lower_incomplete_gamma_int(1, x), 1.0 - (-x).exp(), max_relative = 1e-12);
        }
        assert_eq!(lower_incomplete_gamma_int(4, 0.0), 0.0);
        assert_relative_eq!(lower_incomplete_gamma_int(6, 200.0), 120.0, max_relative = 1e-9);
    }

    #[test]
    fn incomplete_gamma_against_statrs() {
        for a in [1u64, 2, 5, 30, 400, 2000] {
            for x in [0.01, 1.0, 10.0, 350.0, 1990.0, 2100.0] {
                let ours = regularized_lower_gamma_int(a, x);
                let reference = statrs::function::gamma::gamma_lr(a as f64, x);
                assert!((ours - reference).abs() < 1e-10 * reference.max(1e-300) + 1e-13, "a={a} x={x}: {ours} vs {reference}");
            }
        }
    }

    #[test]
    fn poisson_pmf_matches_statrs() {
        let d = CountDistribution::poisson(31.6, TAIL_TOLERANCE);
        let reference = Poisson::new(31.6).unwrap();
        for (k, p) in d.pmf().iter().enumerate() {
            assert_relative_eq!(*p, reference.pmf(k as u64), max_relative = 1e-10, epsilon = 1e-300);
        }
        assert!(d.tail() < 1e-12);
    }

    #[test]
    fn p_atom_limits() {
        let zero = p_atom_analytic(&params(0.0)).unwrap();
        assert_eq!(zero.get(0), 1.0);
        let mut p = params(0.2);
        p.t_loss = f64::INFINITY;
        let d = p_atom_analytic(&p).unwrap();
        let reference = Poisson::new(0.2 / 0.013).unwrap();
        for k in 0..d.len() {
            assert_relative_eq!(d.get(k), reference.pmf(k as u64), max_relative = 1e-10, epsilon = 1e-300);
        }
    }

    #[test]
    fn p_atom_matches_pointwise_closed_form() {
        for t in [0.5, 6.0, 25.0] {
            let p = params(t);
            let d = p_atom_analytic(&p).unwrap();
            assert!((d.total() - 1.0).abs() < 1e-10);
            assert!(d.tail() < 1e-12);
            for k in [0usize, 1, 7, d.len() / 3, d.len() / 2, d.len() - 1] {
                let direct = ln_p_atom(&p, k as u64).exp();
                assert_relative_eq!(d.get(k), direct, max_relative = 1e-9, epsilon = 1e-290);
            }
        }
    }

    #[test]
    fn p_atom_direct_sum_for_small_window() {
        // lost-atom term as a plain series against the gamma form
        let p = ReadoutParams {
            t_photon: 0.5,
            t_loss: 1.3,
            detection_fraction: 1.0,
            ..params(2.0)
        };
        let d = p_atom_analytic(&p).unwrap();
        for n in 0..6u64 {
            // ∫₀ᵀ e^{−t/Tl}/Tl · e^{−t/Tp} (t/Tp)^n/n! dt by Simpson
            let f = |t: f64| (-t / p.t_loss).exp() / p.t_loss * (-t / p.t_photon).exp() * (t / p.t_photon).powi(n as i32) / (1..=n).product::<u64>().max(1) as f64;
            let lost = crate::schedule::simpson(f, 0.0, p.t_meas, 20_000);
            let survive = (-p.t_meas / p.t_loss).exp() * ln_poisson(n, p.t_meas / p.t_photon).exp();
            assert_relative_eq!(d.get(n as usize), lost + survive, max_relative = 1e-9);
        }
    }

    #[test]
    fn site_distribution_properties() {
        let p = params(6.0);
        let atom = p_atom_analytic(&p).unwrap();
        let (pd, q) = site_distributions(&p).unwrap();
        assert_relative_eq!(pd.mean(), atom.mean() + 6.0 / 0.19, max_relative = 1e-10);
        assert!((pd.total() - 1.0).abs() < 1e-10 && (q.total() - 1.0).abs() < 1e-10);
        for k in 0..pd.len() {
            assert!(pd.survival(k) >= q.survival(k) - 1e-12);
        }
        let mut off = p;
        off.t_bg = f64::INFINITY;
        let (pd, q) = site_distributions(&off).unwrap();
        assert_eq!(q.pmf(), &[1.0]);
        for k in 0..atom.len() {
            assert_relative_eq!(pd.get(k), atom.get(k), epsilon = 1e-15);
        }
    }

    #[test]
    fn background_only_total_is_poisson() {
        let p = params(1.0);
        let q = background_distribution(&p, 1);
        let mut conv = q.clone();
        for _ in 1..5 {
            conv = conv.convolve(&q);
        }
        let direct = background_distribution(&p, 5);
        for k in 0..direct.len().max(conv.len()) {
            assert!((conv.get(k) - direct.get(k)).abs() < 1e-13);
        }
        let agg = aggregated_distribution(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0], &p).unwrap();
        assert_eq!(agg.pmf(), direct.pmf());
    }

    #[test]
    fn single_site_aggregate_is_p() {
        let p = params(3.0);
        let (pd, _) = site_distributions(&p).unwrap();
        let agg = aggregated_distribution(&[0.0, 1.0], &p).unwrap();
        for k in 0..pd.len().max(agg.len()) {
            assert!((pd.get(k) - agg.get(k)).abs() < 1e-14);
        }
    }

    #[test]
    fn infidelity_two_ways() {
        let q0 = CountDistribution::poisson(1.0, TAIL_TOLERANCE);
        let q1 = CountDistribution::poisson(20.0, TAIL_TOLERANCE);
        let a = measurement_infidelity(&q0, &q1);
        let b = optimal_decision_error(&q0, &q1);
        assert!((a - b).abs() < 1e-12, "{a} {b}");
        assert_eq!(measurement_infidelity(&q0, &q0), 0.5);
        assert_eq!(measurement_infidelity(&CountDistribution::delta(0), &CountDistribution::delta(3)), 0.0);
    }

    #[test]
    fn zero_window_gives_no_information() {
        let d = ExcitationDistributions::ideal(3);
        let (q0, q1) = aggregated_distributions(&d, &params(0.0)).unwrap();
        assert_eq!(measurement_infidelity(&q0, &q1), 0.5);
    }

    #[test]
    fn infidelity_monotone_without_loss() {
        let d = ExcitationDistributions::with_binomial_errors(vec![0.97, 0.03, 0.0], vec![0.02, 0.08, 0.9], 100);
        let mut last = 0.5;
        for k in 1..30 {
            let mut p = params(0.05 * k as f64);
            p.t_loss = f64::INFINITY;
            let (q0, q1) = aggregated_distributions(&d, &p).unwrap();
            let v = measurement_infidelity(&q0, &q1);
            assert!(v <= last + 1e-12, "t={} {v} > {last}", p.t_meas);
            last = v;
        }
    }

    #[test]
    fn elementary_symmetric_generating_function() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for n in 1..9 {
            let r: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 5.0 + 1e-3).collect();
            let e = elementary_symmetric(&r);
            let lhs: f64 = e.iter().sum();
            let rhs: f64 = r.iter().map(|x| 1.0 + x).product();
            assert_relative_eq!(lhs, rhs, max_relative = 1e-9);
            let le = ln_elementary_symmetric(&r.iter().map(|x| x.ln()).collect::<Vec<_>>());
            for (a, b) in e.iter().zip(&le) {
                assert_relative_eq!(a.ln(), *b, max_relative = 1e-12, epsilon = 1e-12);
            }
        }
        assert_eq!(elementary_symmetric(&[1.0, 1.0, 1.0, 1.0]), vec![1.0, 4.0, 6.0, 4.0, 1.0]);
    }

    #[test]
    fn uninformative_record_cancels() {
        // r = 1 everywhere when P = Q, so e_n = C(N, n) and ℒ(m|s) = Π Q
        let mut p = params(1.0);
        p.t_photon = 1e300;
        let site = SiteModel::new(&p).unwrap();
        let rec = MeasurementRecord { counts: vec![3, 7, 0] };
        let a = ln_likelihood(&rec, &[0.7, 0.1, 0.1, 0.1], &site);
        let b = ln_likelihood(&rec, &[0.0, 0.0, 0.2, 0.8], &site);
        assert_relative_eq!(a, b, max_relative = 1e-12);
        let d = mle_classify(&rec, &[0.7, 0.1, 0.1, 0.1], &[0.0, 0.0, 0.2, 0.8], &site).unwrap();
        assert_eq!(d.state, Logical::One);
    }

    #[test]
    fn single_site_reduces_to_ratio_test() {
        let p = params(0.4);
        let site = SiteModel::new(&p).unwrap();
        let (pd, q) = site_distributions(&p).unwrap();
        let (p0, p1) = ([0.9, 0.1], [0.2, 0.8]);
        for m in 0..40u64 {
            let rec = MeasurementRecord { counts: vec![m] };
            let d = mle_classify(&rec, &p0, &p1, &site).unwrap();
            let l0 = p0[0] * q.get(m as usize) + p0[1] * pd.get(m as usize);
            let l1 = p1[0] * q.get(m as usize) + p1[1] * pd.get(m as usize);
            assert_relative_eq!(d.ln_likelihood0, l0.ln(), max_relative = 1e-10);
            assert_eq!(d.state == Logical::One, l1 >= l0);
        }
    }

    #[test]
    fn likelihood_matches_subset_sum() {
        let p = params(0.3);
        let site = SiteModel::new(&p).unwrap();
        let (pd, q) = site_distributions(&p).unwrap();
        let rec = MeasurementRecord { counts: vec![2, 9, 0, 5] };
        let w = [0.1, 0.2, 0.3, 0.25, 0.15];
        let mut total = 0.0;
        for mask in 0u32..16 {
            let k = mask.count_ones() as usize;
            let prod: f64 = (0..4)
                .map(|i| {
                    let m = rec.counts[i] as usize;
                    if mask & (1 << i) != 0 { pd.get(m) } else { q.get(m) }
                })
                .product();
            let binom = [1.0, 4.0, 6.0, 4.0, 1.0][k];
            total += w[k] * prod / binom;
        }
        assert_relative_eq!(ln_likelihood(&rec, &w, &site), total.ln(), max_relative = 1e-10);
    }

    #[test]
    fn far_tail_likelihoods_are_finite() {
        let site = SiteModel::new(&params(6.0)).unwrap();
        for m in [0u64, 10_000, 100_000] {
            assert!(site.ln_p(m).is_finite() && site.ln_q(m).is_finite());
        }
        assert!(site.ln_p(1000) > site.ln_q(1000));
    }

    #[test]
    fn degenerate_hypotheses_rejected() {
        let site = SiteModel::new(&params(1.0)).unwrap();
        let rec = MeasurementRecord { counts: vec![1] };
        assert!(matches!(mle_classify(&rec, &[0.5, 0.5], &[0.5, 0.5], &site), Err(Error::DegenerateHypotheses)));
    }

    #[test]
    fn markov_background_mean() {
        let mut p = params(0.19);
        p.dt = 1e-4;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 200_000;
        let mean = (0..n).map(|_| markov_sample(0, 1, &p, &mut rng).unwrap().total() as f64).sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        p.t_bg = f64::INFINITY;
        assert_eq!(markov_sample(0, 4, &p, &mut rng).unwrap().counts, vec![0; 4]);
        assert!(markov_sample(5, 4, &p, &mut rng).is_err());
    }

    #[test]
    fn markov_dt_halving_keeps_means() {
        let p = ReadoutParams::default().with_t_meas(6.0);
        let half = ReadoutParams { dt: p.dt / 2.0, ..p };
        let mean = |q: &ReadoutParams, seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..20_000).map(|_| markov_sample(1, 1, q, &mut rng).unwrap().total() as f64).sum::<f64>() / 20_000.0
        };
        let (a, b) = (mean(&p, 1), mean(&half, 2));
        assert!(((a - b) / b).abs() < 0.02, "{a} {b}");
    }

    #[test]
    fn perfect_readout_has_zero_mle_error() {
        let mut p = params(2.0);
        p.t_bg = f64::INFINITY;
        p.t_loss = f64::INFINITY;
        let e = mle_infidelity(&[1.0, 0.0, 0.0], &[0.0, 0.0, 1.0], &p, 500, 4).unwrap();
        assert_eq!(e.infidelity, 0.0);
        assert_eq!(e.stderr, 0.0);
    }

    #[test]
    fn mle_stderr_is_binomial() {
        let e = mle_infidelity(&[0.9, 0.1], &[0.1, 0.9], &params(1.0), 2000, 8).unwrap();
        assert_relative_eq!(e.stderr0, (e.error0 * (1.0 - e.error0) / 2000.0).sqrt());
        assert_relative_eq!(e.stderr1, (e.error1 * (1.0 - e.error1) / 2000.0).sqrt());
    }

    proptest::proptest! {
        #[test]
        fn distributions_normalize(t in 0.0f64..30.0, tp in 0.005f64..1.0, tb in 0.05f64..5.0, tl in 1.0f64..1000.0) {
            let p = ReadoutParams { t_photon: tp, t_bg: tb, t_loss: tl, t_meas: t, ..ReadoutParams::default() };
            let (pd, q) = site_distributions(&p).unwrap();
            proptest::prop_assert!((pd.total() - 1.0).abs() < 1e-10);
            proptest::prop_assert!((q.total() - 1.0).abs() < 1e-10);
            proptest::prop_assert!(pd.tail() < 1e-12 && q.tail() < 1e-12);
            proptest::prop_assert!(pd.pmf().iter().all(|&x| x >= 0.0));
        }
    }
}
