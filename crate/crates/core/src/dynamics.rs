//! Time integration and quantum-jump trajectories.
//!
//! Each pulse segment is split into equal RK4 steps no longer than
//! `1/(50·max(Ω₀, max|V_ij|, max γ))`. Decay is unravelled into loss jumps:
//! the state evolves under the non-Hermitian Hamiltonian until its squared
//! norm drops below a uniform threshold drawn in advance, at which point one
//! atom is moved from |R⟩ to |L⟩ with probability ∝ γ_a·P_a(R).
//!
//! Trajectories that never jump all follow the same deterministic path, so
//! [`excitation_distributions`] integrates that path once and replays it from
//! checkpoints for the few trajectories that do jump. The replay performs the
//! same floating-point operations as [`run_trajectory`], so ensemble members
//! are bit-identical to standalone runs with the same seed.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::{
    apply_loss_jump, levels_of, GateModel, Level, LevelSet, StateVector, SubspacePlan,
};
use crate::schedule::{PulseSegment, Schedule};
use crate::seed;
use crate::stats;

/// Steps per shortest dynamical time scale.
pub const STEPS_PER_TIMESCALE: f64 = 50.0;
/// Allowed growth of the squared norm before integration is declared unstable.
pub const NORM_GROWTH_TOLERANCE: f64 = 1e-6;
/// Default number of trajectories per logical state.
pub const DEFAULT_TRAJECTORIES: usize = 2000;

const CHECKPOINT_STRIDE: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Logical {
    Zero,
    One,
}

impl Logical {
    pub fn level(self) -> Level {
        match self {
            Logical::Zero => Level::Zero,
            Logical::One => Level::One,
        }
    }

    fn label(self) -> u64 {
        self as u64
    }
}

/// Largest RK4 step for a segment of peak amplitude `amplitude`.
pub fn max_step(model: &GateModel, amplitude: f64) -> f64 {
    let scale = amplitude
        .abs()
        .max(model.blockade.max_abs())
        .max(model.decay.max_rate());
    1.0 / (STEPS_PER_TIMESCALE * scale)
}

#[derive(Debug, Clone, Copy)]
struct Step {
    segment: usize,
    /// Start time within the segment.
    local_t0: f64,
    /// Start time within the schedule.
    t0: f64,
    h: f64,
}

fn step_grid(model: &GateModel, schedule: &Schedule) -> Vec<Step> {
    let mut steps = Vec::new();
    for (k, (seg, start)) in schedule.segments.iter().zip(schedule.start_times()).enumerate() {
        let n = (seg.duration / max_step(model, seg.amplitude)).ceil().max(1.0) as usize;
        let h = seg.duration / n as f64;
        for i in 0..n {
            let local_t0 = h * i as f64;
            steps.push(Step {
                segment: k,
                local_t0,
                t0: start + local_t0,
                h,
            });
        }
    }
    steps
}

struct Scratch {
    k1: Vec<Complex64>,
    k2: Vec<Complex64>,
    k3: Vec<Complex64>,
    k4: Vec<Complex64>,
    tmp: Vec<Complex64>,
}

impl Scratch {
    fn new(dim: usize) -> Self {
        let z = || vec![Complex64::new(0.0, 0.0); dim];
        Self {
            k1: z(),
            k2: z(),
            k3: z(),
            k4: z(),
            tmp: z(),
        }
    }
}

fn norm_sqr(psi: &[Complex64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}

fn rk4_step(
    plan: &SubspacePlan,
    seg: &PulseSegment,
    local_t0: f64,
    h: f64,
    psi: &mut [Complex64],
    s: &mut Scratch,
) {
    let t = seg.target;
    plan.derivative(t, seg.rabi(local_t0), psi, &mut s.k1);
    for ((o, y), k) in s.tmp.iter_mut().zip(psi.iter()).zip(&s.k1) {
        *o = y + k * (0.5 * h);
    }
    let mid = seg.rabi(local_t0 + 0.5 * h);
    plan.derivative(t, mid, &s.tmp, &mut s.k2);
    for ((o, y), k) in s.tmp.iter_mut().zip(psi.iter()).zip(&s.k2) {
        *o = y + k * (0.5 * h);
    }
    plan.derivative(t, mid, &s.tmp, &mut s.k3);
    for ((o, y), k) in s.tmp.iter_mut().zip(psi.iter()).zip(&s.k3) {
        *o = y + k * h;
    }
    plan.derivative(t, seg.rabi(local_t0 + h), &s.tmp, &mut s.k4);
    let w = h / 6.0;
    for (i, y) in psi.iter_mut().enumerate() {
        *y += (s.k1[i] + (s.k2[i] + s.k3[i]) * 2.0 + s.k4[i]) * w;
    }
}

/// Integrates one segment on the full 4^n space with steps no longer than
/// `dt_max`.
pub fn integrate_segment(
    model: &GateModel,
    state: &StateVector,
    segment: &PulseSegment,
    dt_max: f64,
) -> Result<StateVector> {
    if state.n_atoms() != model.n_atoms {
        return Err(Error::invalid("state does not match the model"));
    }
    if !(dt_max > 0.0) {
        return Err(Error::invalid("dt_max must be positive"));
    }
    let plan = SubspacePlan::full(model);
    let mut psi = plan.compress(state);
    let mut scratch = Scratch::new(plan.dim());
    let n = (segment.duration / dt_max).ceil().max(1.0) as usize;
    let h = segment.duration / n as f64;
    for i in 0..n {
        rk4_step(&plan, segment, h * i as f64, h, &mut psi, &mut scratch);
        let n2 = norm_sqr(&psi);
        if !(n2 <= 1.0 + NORM_GROWTH_TOLERANCE) {
            return Err(Error::IntegrationUnstable {
                time: h * (i + 1) as f64,
                norm_sqr: n2,
            });
        }
    }
    Ok(plan.expand(&psi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jump {
    pub atom: usize,
    /// Schedule time at the end of the step in which the jump fired, µs.
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryOutcome {
    /// Projectively sampled final level of every atom, data atom first.
    pub levels: Vec<Level>,
    /// Ancillae found in |1⟩.
    pub n_one: usize,
    pub jumps: Vec<Jump>,
}

/// Integrator state shared by every trajectory of one (model, schedule) pair.
struct Propagator<'a> {
    model: &'a GateModel,
    schedule: &'a Schedule,
    steps: Vec<Step>,
    lossy: bool,
}

impl<'a> Propagator<'a> {
    fn new(model: &'a GateModel, schedule: &'a Schedule) -> Result<Self> {
        if schedule.n_ancillae != model.n_ancillae() {
            return Err(Error::invalid(format!(
                "schedule is for {} ancillae, model has {}",
                schedule.n_ancillae,
                model.n_ancillae()
            )));
        }
        Ok(Self {
            model,
            schedule,
            steps: step_grid(model, schedule),
            lossy: !model.decay.is_lossless(),
        })
    }

    fn initial(&self, logical: Logical) -> (Vec<LevelSet>, SubspacePlan, Vec<Complex64>) {
        let n = self.model.n_atoms;
        let mut levels = vec![Level::Zero; n];
        levels[0] = logical.level();
        let allowed: Vec<LevelSet> = levels
            .iter()
            .enumerate()
            .map(|(a, &l)| LevelSet::reachable(a, l))
            .collect();
        let plan = SubspacePlan::new(self.model, &allowed);
        let psi = plan.compress(&StateVector::basis(&levels));
        (allowed, plan, psi)
    }

    fn advance(&self, plan: &SubspacePlan, psi: &mut [Complex64], k: usize, s: &mut Scratch) -> Result<f64> {
        let st = self.steps[k];
        let seg = &self.schedule.segments[st.segment];
        rk4_step(plan, seg, st.local_t0, st.h, psi, s);
        let n2 = norm_sqr(psi);
        if !(n2 <= 1.0 + NORM_GROWTH_TOLERANCE) {
            return Err(Error::IntegrationUnstable {
                time: st.t0 + st.h,
                norm_sqr: n2,
            });
        }
        Ok(n2)
    }

    /// Applies a loss jump after step `k`. Returns `None` when no atom has
    /// Rydberg population to lose.
    fn jump<R: Rng>(
        &self,
        allowed: &[LevelSet],
        plan: &SubspacePlan,
        psi: &[Complex64],
        k: usize,
        rng: &mut R,
        jumps: &mut Vec<Jump>,
    ) -> Option<(Vec<LevelSet>, SubspacePlan, Vec<Complex64>)> {
        let weights = plan.jump_weights(psi);
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut atom = weights.len() - 1;
        for (a, w) in weights.iter().enumerate() {
            if u < *w {
                atom = a;
                break;
            }
            u -= w;
        }
        let st = self.steps[k];
        jumps.push(Jump {
            atom,
            time: st.t0 + st.h,
        });
        let jumped = apply_loss_jump(&plan.expand(psi), atom);
        let mut allowed = allowed.to_vec();
        allowed[atom] = LevelSet::of(&[Level::Lost]);
        let plan = SubspacePlan::new(self.model, &allowed);
        let psi = plan.compress(&jumped);
        Some((allowed, plan, psi))
    }

    /// Evolves from step `from` to the end of the schedule, firing jumps.
    #[allow(clippy::too_many_arguments)]
    fn run_from<R: Rng>(
        &self,
        from: usize,
        mut allowed: Vec<LevelSet>,
        mut plan: SubspacePlan,
        mut psi: Vec<Complex64>,
        mut threshold: f64,
        rng: &mut R,
        mut jumps: Vec<Jump>,
    ) -> Result<TrajectoryOutcome> {
        let mut scratch = Scratch::new(plan.dim());
        for k in from..self.steps.len() {
            let n2 = self.advance(&plan, &mut psi, k, &mut scratch)?;
            if self.lossy && n2 <= threshold {
                if let Some((a, p, s)) = self.jump(&allowed, &plan, &psi, k, rng, &mut jumps) {
                    allowed = a;
                    plan = p;
                    psi = s;
                    scratch = Scratch::new(plan.dim());
                    threshold = rng.random();
                }
            }
        }
        Ok(sample_final(&plan, &psi, jumps, rng))
    }

    fn trajectory<R: Rng>(&self, logical: Logical, rng: &mut R) -> Result<TrajectoryOutcome> {
        let (allowed, plan, psi) = self.initial(logical);
        let threshold = rng.random();
        self.run_from(0, allowed, plan, psi, threshold, rng, Vec::new())
    }

    /// Deterministic evolution without jumps.
    fn no_jump_path(&self, logical: Logical) -> Result<NoJumpPath> {
        let (allowed, plan, mut psi) = self.initial(logical);
        let mut scratch = Scratch::new(plan.dim());
        let mut norms = Vec::with_capacity(self.steps.len());
        let mut checkpoints = Vec::with_capacity(self.steps.len() / CHECKPOINT_STRIDE + 1);
        for k in 0..self.steps.len() {
            if k % CHECKPOINT_STRIDE == 0 {
                checkpoints.push(psi.clone());
            }
            norms.push(self.advance(&plan, &mut psi, k, &mut scratch)?);
        }
        let min_norm = norms.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(NoJumpPath {
            allowed,
            plan,
            norms,
            checkpoints,
            final_psi: psi,
            min_norm,
        })
    }

    /// Same outcome as [`Propagator::trajectory`] for the same RNG, reusing
    /// the precomputed no-jump path.
    fn replay<R: Rng>(&self, path: &NoJumpPath, rng: &mut R) -> Result<TrajectoryOutcome> {
        let threshold: f64 = rng.random();
        let first = if self.lossy && threshold >= path.min_norm {
            path.norms.iter().position(|&n2| n2 <= threshold)
        } else {
            None
        };
        let Some(k) = first else {
            return Ok(sample_final(&path.plan, &path.final_psi, Vec::new(), rng));
        };
        let c = k / CHECKPOINT_STRIDE;
        let mut psi = path.checkpoints[c].clone();
        let mut scratch = Scratch::new(path.plan.dim());
        for j in c * CHECKPOINT_STRIDE..=k {
            self.advance(&path.plan, &mut psi, j, &mut scratch)?;
        }
        let mut jumps = Vec::new();
        match self.jump(&path.allowed, &path.plan, &psi, k, rng, &mut jumps) {
            Some((allowed, plan, psi)) => {
                let threshold = rng.random();
                self.run_from(k + 1, allowed, plan, psi, threshold, rng, jumps)
            }
            None => self.run_from(k + 1, path.allowed.clone(), path.plan.clone(), psi, threshold, rng, jumps),
        }
    }
}

struct NoJumpPath {
    allowed: Vec<LevelSet>,
    plan: SubspacePlan,
    norms: Vec<f64>,
    checkpoints: Vec<Vec<Complex64>>,
    final_psi: Vec<Complex64>,
    min_norm: f64,
}

fn sample_final<R: Rng>(plan: &SubspacePlan, psi: &[Complex64], jumps: Vec<Jump>, rng: &mut R) -> TrajectoryOutcome {
    let total = norm_sqr(psi);
    let mut u = rng.random::<f64>() * total;
    let mut chosen = psi.len() - 1;
    for (k, a) in psi.iter().enumerate() {
        let p = a.norm_sqr();
        if u < p {
            chosen = k;
            break;
        }
        u -= p;
    }
    let levels = levels_of(plan.full_index()[chosen], plan.n_atoms());
    let n_one = levels[1..].iter().filter(|&&l| l == Level::One).count();
    TrajectoryOutcome { levels, n_one, jumps }
}

/// One quantum-jump trajectory: data atom in `initial`, ancillae in |0⟩.
pub fn run_trajectory(
    model: &GateModel,
    schedule: &Schedule,
    initial: Logical,
    seed: u64,
) -> Result<TrajectoryOutcome> {
    let prop = Propagator::new(model, schedule)?;
    prop.trajectory(initial, &mut seed::rng_from(seed))
}

/// Seed of trajectory `index` for the given logical state under `root`.
pub fn trajectory_seed(root: u64, initial: Logical, index: usize) -> u64 {
    seed::derive(root, &[initial.label(), index as u64])
}

/// Final state of the jump-free evolution (unnormalized when lossy).
pub fn final_state(model: &GateModel, schedule: &Schedule, initial: Logical) -> Result<StateVector> {
    let prop = Propagator::new(model, schedule)?;
    let path = prop.no_jump_path(initial)?;
    Ok(path.plan.expand(&path.final_psi))
}

/// Exact n₁ distribution of the jump-free final state. Equals the
/// trajectory average when the model has no decay.
pub fn exact_one_distribution(model: &GateModel, schedule: &Schedule, initial: Logical) -> Result<Vec<f64>> {
    Ok(final_state(model, schedule, initial)?.ancilla_one_distribution())
}

/// Empirical distributions of n₁ for both logical inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcitationDistributions {
    pub n_ancillae: usize,
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
    pub stderr0: Vec<f64>,
    pub stderr1: Vec<f64>,
    pub trajectories: usize,
}

impl ExcitationDistributions {
    /// Histograms from n₁ counts.
    pub fn from_counts(counts0: &[usize], counts1: &[usize]) -> Result<Self> {
        if counts0.len() != counts1.len() || counts0.is_empty() {
            return Err(Error::invalid("count vectors must be non-empty and of equal length"));
        }
        let total0: usize = counts0.iter().sum();
        let total1: usize = counts1.iter().sum();
        if total0 == 0 || total0 != total1 {
            return Err(Error::invalid("both hypotheses need the same, nonzero trajectory count"));
        }
        let freq = |c: &[usize]| c.iter().map(|&k| k as f64 / total0 as f64).collect::<Vec<_>>();
        let p0 = freq(counts0);
        let p1 = freq(counts1);
        Ok(Self::with_binomial_errors(p0, p1, total0))
    }

    /// Distributions with binomial standard errors for `trajectories` samples.
    pub fn with_binomial_errors(p0: Vec<f64>, p1: Vec<f64>, trajectories: usize) -> Self {
        let se = |p: &[f64]| {
            p.iter()
                .map(|&x| (x * (1.0 - x) / trajectories as f64).sqrt())
                .collect::<Vec<_>>()
        };
        Self {
            n_ancillae: p0.len() - 1,
            stderr0: se(&p0),
            stderr1: se(&p1),
            p0,
            p1,
            trajectories,
        }
    }

    /// p₀^{|0⟩} = 1 and p_N^{|1⟩} = 1.
    pub fn ideal(n_ancillae: usize) -> Self {
        let mut p0 = vec![0.0; n_ancillae + 1];
        let mut p1 = vec![0.0; n_ancillae + 1];
        p0[0] = 1.0;
        p1[n_ancillae] = 1.0;
        Self {
            n_ancillae,
            stderr0: vec![0.0; n_ancillae + 1],
            stderr1: vec![0.0; n_ancillae + 1],
            p0,
            p1,
            trajectories: 0,
        }
    }

    pub fn for_logical(&self, s: Logical) -> &[f64] {
        match s {
            Logical::Zero => &self.p0,
            Logical::One => &self.p1,
        }
    }
}

/// Runs `n_trajectories` per logical state in parallel.
pub fn excitation_distributions(
    model: &GateModel,
    schedule: &Schedule,
    n_trajectories: usize,
    seed: u64,
) -> Result<ExcitationDistributions> {
    if n_trajectories == 0 {
        return Err(Error::invalid("need at least one trajectory"));
    }
    let prop = Propagator::new(model, schedule)?;
    let n = model.n_ancillae();
    let mut counts = [vec![0usize; n + 1], vec![0usize; n + 1]];
    for (slot, logical) in [Logical::Zero, Logical::One].into_iter().enumerate() {
        let path = prop.no_jump_path(logical)?;
        let outcomes: Vec<usize> = (0..n_trajectories)
            .into_par_iter()
            .map(|i| {
                let mut rng = seed::rng_from(trajectory_seed(seed, logical, i));
                prop.replay(&path, &mut rng).map(|o| o.n_one)
            })
            .collect::<Result<_>>()?;
        for k in outcomes {
            counts[slot][k] += 1;
        }
    }
    ExcitationDistributions::from_counts(&counts[0], &counts[1])
}

/// ½ − ¼ Σₙ |p_n^{|0⟩} − p_n^{|1⟩}|.
pub fn gate_infidelity(d: &ExcitationDistributions) -> f64 {
    stats::tvd_infidelity(&d.p0, &d.p1)
}

/// Delta-method standard error of [`gate_infidelity`].
pub fn gate_infidelity_stderr(d: &ExcitationDistributions) -> f64 {
    let id = |n: usize| {
        let mut v = vec![0.0; d.p0.len()];
        v[n] = 1.0;
        v
    };
    stats::mixture_infidelity_stderr(&d.p0, &d.p1, &d.p0, &d.p1, id, d.trajectories)
}
