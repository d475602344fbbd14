//! Bosonic three-mode model of the ancilla register.
//!
//! With a uniform pairwise blockade η the ancilla dynamics stay in the
//! permutation-symmetric sector, spanned by occupation-number states
//! |n₀; n₁; n_R⟩ with n₀ + n₁ + n_R = N. There the drives become
//! `Ω(a_g†a_R + a_R†a_g)` and the blockade `(η/2)(a_R†)²a_R²`. The ladder is
//! small enough to exponentiate exactly, which makes this module an
//! independent check of the product-space integrator.

use std::collections::HashMap;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::dynamics::{final_state, Logical};
use crate::error::{Error, Result};
use crate::hamiltonian::{digit, BlockadeOperator, DecayModel, GateModel, Level, StateVector};
use crate::schedule::{build_copy_schedule, Envelope, PulseSegment, Schedule, Transition};

/// Midpoint sub-steps per shaped segment.
pub const SHAPED_SUBSTEPS: usize = 4000;

pub fn default_rydberg_cap(n: usize) -> usize {
    n.min(3)
}

/// Occupation-number basis with at most `nr_max` Rydberg excitations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SymBasis {
    n: usize,
    nr_max: usize,
    states: Vec<(usize, usize, usize)>,
    index: HashMap<(usize, usize, usize), usize>,
}

impl SymBasis {
    pub fn new(n: usize, nr_max: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid("need at least one ancilla"));
        }
        if nr_max == 0 {
            return Err(Error::invalid("Rydberg cap must allow one excitation"));
        }
        let nr_max = nr_max.min(n);
        let mut states = Vec::new();
        for nr in 0..=nr_max {
            for n1 in 0..=(n - nr) {
                states.push((n - nr - n1, n1, nr));
            }
        }
        let index = states.iter().enumerate().map(|(i, &s)| (s, i)).collect();
        Ok(Self {
            n,
            nr_max,
            states,
            index,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nr_max(&self) -> usize {
        self.nr_max
    }

    pub fn dim(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[(usize, usize, usize)] {
        &self.states
    }

    pub fn index_of(&self, n0: usize, n1: usize, nr: usize) -> Option<usize> {
        self.index.get(&(n0, n1, nr)).copied()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymState {
    basis: SymBasis,
    amps: Vec<Complex64>,
}

impl SymState {
    /// |N; 0; 0⟩.
    pub fn ground(basis: SymBasis) -> Self {
        let mut amps = vec![Complex64::new(0.0, 0.0); basis.dim()];
        amps[basis.index_of(basis.n, 0, 0).expect("ground state is always present")] = Complex64::new(1.0, 0.0);
        Self { basis, amps }
    }

    pub fn basis(&self) -> &SymBasis {
        &self.basis
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitude(&self, n0: usize, n1: usize, nr: usize) -> Complex64 {
        self.basis
            .index_of(n0, n1, nr)
            .map_or(Complex64::new(0.0, 0.0), |i| self.amps[i])
    }

    pub fn population(&self, n0: usize, n1: usize, nr: usize) -> f64 {
        self.amplitude(n0, n1, nr).norm_sqr()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    /// Distribution of n₁.
    pub fn one_distribution(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.basis.n + 1];
        for (&(_, n1, _), a) in self.basis.states.iter().zip(&self.amps) {
            d[n1] += a.norm_sqr();
        }
        d
    }

    /// Total population with `nr` Rydberg excitations.
    pub fn rydberg_population(&self, nr: usize) -> f64 {
        self.basis
            .states
            .iter()
            .zip(&self.amps)
            .filter(|((_, _, r), _)| *r == nr)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }
}

/// Drive amplitude and uniform blockade, both in rad/µs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BosonicParams {
    pub omega: f64,
    pub eta: f64,
}

impl BosonicParams {
    pub fn new(omega: f64, eta: f64) -> Result<Self> {
        if !(eta >= 0.0) || !omega.is_finite() || !eta.is_finite() {
            return Err(Error::invalid("blockade must be finite and non-negative"));
        }
        Ok(Self { omega, eta })
    }
}

/// Real symmetric generator for a drive on the `lower ↔ R` pair of modes.
fn hamiltonian(basis: &SymBasis, lower: Level, omega: f64, eta: f64) -> DMatrix<f64> {
    let dim = basis.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for (k, &(n0, n1, nr)) in basis.states.iter().enumerate() {
        h[(k, k)] = 0.5 * eta * (nr * nr.saturating_sub(1)) as f64;
        if nr == 0 {
            continue;
        }
        // a_g† a_R: one Rydberg boson back to the lower mode
        let (target, ng) = match lower {
            Level::Zero => ((n0 + 1, n1, nr - 1), n0),
            Level::One => ((n0, n1 + 1, nr - 1), n1),
            _ => unreachable!("drives couple |0⟩ or |1⟩ to |R⟩"),
        };
        if let Some(j) = basis.index_of(target.0, target.1, target.2) {
            let el = omega * (nr as f64).sqrt() * ((ng + 1) as f64).sqrt();
            h[(j, k)] = el;
            h[(k, j)] = el;
        }
    }
    h
}

fn evolve(state: &mut SymState, h: DMatrix<f64>, dt: f64) {
    let eig = SymmetricEigen::new(h);
    let v = &eig.eigenvectors;
    let dim = state.amps.len();
    // ψ ← V e^{−iΛdt} Vᵀ ψ
    let mut proj = vec![Complex64::new(0.0, 0.0); dim];
    for (m, p) in proj.iter_mut().enumerate() {
        let mut acc = Complex64::new(0.0, 0.0);
        for (k, a) in state.amps.iter().enumerate() {
            acc += a * v[(k, m)];
        }
        *p = acc * Complex64::from_polar(1.0, -eig.eigenvalues[m] * dt);
    }
    for (k, a) in state.amps.iter_mut().enumerate() {
        *a = (0..dim).map(|m| proj[m] * v[(k, m)]).sum();
    }
}

/// Exact evolution for `dt` under Ω(a₀†a_R + h.c.) + (η/2)(a_R†)²a_R².
pub fn bosonic_step_h0(state: &SymState, params: BosonicParams, dt: f64) -> SymState {
    let mut out = state.clone();
    evolve(&mut out, hamiltonian(&state.basis, Level::Zero, params.omega, params.eta), dt);
    out
}

/// Exact evolution for `dt` under Ω(a₁†a_R + h.c.) + (η/2)(a_R†)²a_R².
pub fn bosonic_step_h1(state: &SymState, params: BosonicParams, dt: f64) -> SymState {
    let mut out = state.clone();
    evolve(&mut out, hamiltonian(&state.basis, Level::One, params.omega, params.eta), dt);
    out
}

/// Evolves through one ancilla segment. Square segments are exponentiated
/// exactly; shaped ones are split into midpoint sub-steps.
pub fn apply_segment(state: &mut SymState, seg: &PulseSegment, eta: f64) {
    let lower = match seg.target {
        Transition::AncillaZeroR => Level::Zero,
        Transition::AncillaOneR => Level::One,
        Transition::DataZeroR => return,
    };
    match seg.envelope {
        Envelope::Square => {
            let h = hamiltonian(&state.basis, lower, seg.rabi(0.0), eta);
            evolve(state, h, seg.duration);
        }
        Envelope::Shaped => {
            let h = seg.duration / SHAPED_SUBSTEPS as f64;
            for k in 0..SHAPED_SUBSTEPS {
                let omega = seg.rabi((k as f64 + 0.5) * h);
                evolve(state, hamiltonian(&state.basis, lower, omega, eta), h);
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SymmetricOutcome {
    pub state: SymState,
    /// Distribution of n₁.
    pub one_distribution: Vec<f64>,
}

/// Runs the ancilla pulses of `schedule` from |N; 0; 0⟩.
///
/// The data atom enters only through `blocked`: a data atom parked in |R⟩
/// shifts every ancilla Rydberg state out of resonance, so the ancilla
/// pulses are inert.
pub fn run_symmetric_protocol(schedule: &Schedule, eta: f64, nr_max: usize, blocked: bool) -> Result<SymmetricOutcome> {
    let basis = SymBasis::new(schedule.n_ancillae, nr_max)?;
    let mut state = SymState::ground(basis);
    if !blocked {
        for seg in schedule.ancilla_segments() {
            apply_segment(&mut state, seg, eta);
        }
    }
    let one_distribution = state.one_distribution();
    Ok(SymmetricOutcome { state, one_distribution })
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Populations of the normalized symmetric states
/// `√(n₀!n₁!n_R!/N!) Σ_perm |…⟩` in a product-space state, summed over the
/// data atom's level. Ancillae in |L⟩ are ignored.
pub fn symmetric_populations(state: &StateVector) -> HashMap<(usize, usize, usize), f64> {
    let n_atoms = state.n_atoms();
    let n = n_atoms - 1;
    let mut sums: HashMap<(usize, (usize, usize, usize)), Complex64> = HashMap::new();
    for (idx, a) in state.amplitudes().iter().enumerate() {
        if a.norm_sqr() == 0.0 {
            continue;
        }
        let mut counts = [0usize; 4];
        for atom in 1..n_atoms {
            counts[digit(idx, atom)] += 1;
        }
        if counts[Level::Lost as usize] > 0 {
            continue;
        }
        let key = (digit(idx, 0), (counts[0], counts[1], counts[2]));
        *sums.entry(key).or_default() += a;
    }
    let mut out = HashMap::new();
    for ((_, occ), amp) in sums {
        let norm = factorial(occ.0) * factorial(occ.1) * factorial(occ.2) / factorial(n);
        *out.entry(occ).or_insert(0.0) += amp.norm_sqr() * norm;
    }
    out
}

/// Max |p_full − p_sym| over the occupation basis after running `schedule`
/// on `model` with the data atom in |1⟩ and on the bosonic ladder with no
/// Rydberg cap.
pub fn compare_model_vs_symmetric(model: &GateModel, schedule: &Schedule, eta: f64) -> Result<f64> {
    let full = final_state(model, schedule, Logical::One)?;
    let pops = symmetric_populations(&full);
    let sym = run_symmetric_protocol(schedule, eta, schedule.n_ancillae, false)?;
    let mut worst = 0.0_f64;
    for &(n0, n1, nr) in sym.state.basis().states() {
        let pf = pops.get(&(n0, n1, nr)).copied().unwrap_or(0.0);
        worst = worst.max((pf - sym.state.population(n0, n1, nr)).abs());
    }
    Ok(worst)
}

/// Full model with uniform ancilla blockade `eta`, no decay and an inert data
/// atom, against the bosonic oracle, on a square-pulse copy schedule.
pub fn compare_full_vs_symmetric(n: usize, omega: f64, eta: f64) -> Result<f64> {
    let model = GateModel::new(BlockadeOperator::uniform_ancillae(n + 1, eta), DecayModel::none(n + 1))?;
    let schedule = build_copy_schedule(n, omega, Envelope::Square)?;
    compare_model_vs_symmetric(&model, &schedule, eta)
}
