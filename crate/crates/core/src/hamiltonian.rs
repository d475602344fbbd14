//! Product-space model of the data atom and ancillae.
//!
//! Every atom has four levels |0⟩, |1⟩, |R⟩ and an absorbing loss level |L⟩.
//! A basis index packs the levels as base-4 digits, two bits per atom, with
//! the data atom in the lowest digit. Operators act matrix-free through
//! index arithmetic on those digits.
//!
//! All `apply_*` functions accumulate the corresponding contribution to
//! `dψ/dt = −i H_eff ψ` into an output vector.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{pairwise_blockade, BlockadeMatrix, C6Table, Layout};
use crate::schedule::Transition;

pub const LEVELS: usize = 4;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    Zero = 0,
    One = 1,
    Rydberg = 2,
    Lost = 3,
}

impl Level {
    pub const ALL: [Level; 4] = [Level::Zero, Level::One, Level::Rydberg, Level::Lost];

    pub fn from_digit(d: usize) -> Level {
        Level::ALL[d & 3]
    }

    pub fn bit(self) -> u8 {
        1 << self as u8
    }
}

/// Level of `atom` in basis state `index`.
#[inline]
pub fn digit(index: usize, atom: usize) -> usize {
    (index >> (2 * atom)) & 3
}

#[inline]
fn with_digit(index: usize, atom: usize, level: usize) -> usize {
    (index & !(3 << (2 * atom))) | (level << (2 * atom))
}

pub fn basis_index(levels: &[Level]) -> usize {
    levels
        .iter()
        .enumerate()
        .fold(0, |acc, (a, &l)| acc | ((l as usize) << (2 * a)))
}

pub fn levels_of(index: usize, n_atoms: usize) -> Vec<Level> {
    (0..n_atoms).map(|a| Level::from_digit(digit(index, a))).collect()
}

fn rydberg_count(index: usize, n_atoms: usize) -> usize {
    (0..n_atoms)
        .filter(|&a| digit(index, a) == Level::Rydberg as usize)
        .count()
}

/// Amplitudes over the 4^(n_atoms) product basis.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    n_atoms: usize,
    amps: Vec<Complex64>,
}

impl StateVector {
    pub fn zeros(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            amps: vec![Complex64::new(0.0, 0.0); LEVELS.pow(n_atoms as u32)],
        }
    }

    pub fn basis(levels: &[Level]) -> Self {
        let mut s = Self::zeros(levels.len());
        s.amps[basis_index(levels)] = Complex64::new(1.0, 0.0);
        s
    }

    pub fn from_amplitudes(n_atoms: usize, amps: Vec<Complex64>) -> Result<Self> {
        if amps.len() != LEVELS.pow(n_atoms as u32) {
            return Err(Error::invalid(format!(
                "{} amplitudes do not match {} atoms",
                amps.len(),
                n_atoms
            )));
        }
        if amps.iter().any(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::invalid("state amplitudes must be finite"));
        }
        Ok(Self { n_atoms, amps })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn inner(&self, other: &StateVector) -> Complex64 {
        self.amps
            .iter()
            .zip(&other.amps)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    pub fn normalize(&mut self) {
        let n = self.norm_sqr().sqrt();
        if n > 0.0 {
            self.amps.iter_mut().for_each(|a| *a /= n);
        }
    }

    /// Unnormalized population of `level` on `atom`.
    pub fn level_population(&self, atom: usize, level: Level) -> f64 {
        self.amps
            .iter()
            .enumerate()
            .filter(|(i, _)| digit(*i, atom) == level as usize)
            .map(|(_, a)| a.norm_sqr())
            .sum()
    }

    /// Probability of finding exactly `n` ancillae (atoms 1..) in |1⟩,
    /// normalized by the state's norm.
    pub fn ancilla_one_distribution(&self) -> Vec<f64> {
        let n_anc = self.n_atoms.saturating_sub(1);
        let mut dist = vec![0.0; n_anc + 1];
        for (i, a) in self.amps.iter().enumerate() {
            let p = a.norm_sqr();
            if p == 0.0 {
                continue;
            }
            let k = (1..self.n_atoms)
                .filter(|&at| digit(i, at) == Level::One as usize)
                .count();
            dist[k] += p;
        }
        let total: f64 = dist.iter().sum();
        if total > 0.0 {
            dist.iter_mut().for_each(|p| *p /= total);
        }
        dist
    }
}

/// A global drive on one transition.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DriveOperator {
    pub transition: Transition,
    pub atoms: Vec<usize>,
}

impl DriveOperator {
    /// The data drive addresses atom 0 only; ancilla drives address atoms
    /// 1..n_atoms and never the data atom.
    pub fn new(transition: Transition, n_atoms: usize) -> Self {
        let atoms = match transition {
            Transition::DataZeroR => vec![0],
            Transition::AncillaZeroR | Transition::AncillaOneR => (1..n_atoms).collect(),
        };
        Self { transition, atoms }
    }

    /// Ground level coupled to |R⟩.
    pub fn lower_level(&self) -> Level {
        lower_level(self.transition)
    }
}

pub fn lower_level(t: Transition) -> Level {
    match t {
        Transition::DataZeroR | Transition::AncillaZeroR => Level::Zero,
        Transition::AncillaOneR => Level::One,
    }
}

fn transition_slot(t: Transition) -> usize {
    match t {
        Transition::DataZeroR => 0,
        Transition::AncillaZeroR => 1,
        Transition::AncillaOneR => 2,
    }
}

/// Pairwise Rydberg interaction, angular rates in rad/µs.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockadeOperator {
    n_atoms: usize,
    rates: Vec<f64>,
}

impl BlockadeOperator {
    /// Converts a blockade matrix in MHz into angular rates.
    pub fn from_matrix(m: &BlockadeMatrix) -> Self {
        let n = m.len();
        let mut rates = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                rates[i * n + j] = crate::mhz_to_angular(m.get(i, j));
            }
        }
        Self { n_atoms: n, rates }
    }

    pub fn zeros(n_atoms: usize) -> Self {
        Self {
            n_atoms,
            rates: vec![0.0; n_atoms * n_atoms],
        }
    }

    /// Uniform interaction `eta` (rad/µs) among the ancillae; the data atom
    /// does not interact.
    pub fn uniform_ancillae(n_atoms: usize, eta: f64) -> Self {
        let mut b = Self::zeros(n_atoms);
        for i in 1..n_atoms {
            for j in 1..n_atoms {
                if i != j {
                    b.rates[i * n_atoms + j] = eta;
                }
            }
        }
        b
    }

    pub fn set(&mut self, i: usize, j: usize, rate: f64) {
        assert!(i != j);
        self.rates[i * self.n_atoms + j] = rate;
        self.rates[j * self.n_atoms + i] = rate;
    }

    pub fn rate(&self, i: usize, j: usize) -> f64 {
        self.rates[i * self.n_atoms + j]
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn max_abs(&self) -> f64 {
        self.rates.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Σ_{i<j} V_ij [i ∈ R][j ∈ R] for a basis state.
    pub fn energy(&self, index: usize) -> f64 {
        let r = Level::Rydberg as usize;
        let mut e = 0.0;
        for i in 0..self.n_atoms {
            if digit(index, i) != r {
                continue;
            }
            for j in (i + 1)..self.n_atoms {
                if digit(index, j) == r {
                    e += self.rates[i * self.n_atoms + j];
                }
            }
        }
        e
    }
}

/// Per-atom R → L decay rates in µs⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayModel {
    rates: Vec<f64>,
}

impl DecayModel {
    pub fn new(rates: Vec<f64>) -> Result<Self> {
        if rates.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
            return Err(Error::invalid("decay rates must be finite and non-negative"));
        }
        Ok(Self { rates })
    }

    pub fn none(n_atoms: usize) -> Self {
        Self {
            rates: vec![0.0; n_atoms],
        }
    }

    pub fn rate(&self, atom: usize) -> f64 {
        self.rates[atom]
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn max_rate(&self) -> f64 {
        self.rates.iter().fold(0.0, |m, &g| m.max(g))
    }

    pub fn is_lossless(&self) -> bool {
        self.rates.iter().all(|&g| g == 0.0)
    }

    /// Total decay rate out of a basis state.
    pub fn total(&self, index: usize) -> f64 {
        self.rates
            .iter()
            .enumerate()
            .filter(|(a, _)| digit(index, *a) == Level::Rydberg as usize)
            .map(|(_, g)| g)
            .sum()
    }
}

/// Adds `−iΩ Σ_a (|g_a⟩⟨R_a| + |R_a⟩⟨g_a|) ψ` to `out`.
pub fn apply_drive(state: &StateVector, drive: &DriveOperator, omega: f64, out: &mut StateVector) {
    let g = drive.lower_level() as usize;
    let r = Level::Rydberg as usize;
    let c = -I * omega;
    for &atom in &drive.atoms {
        for (idx, amp) in state.amps.iter().enumerate() {
            let d = digit(idx, atom);
            if d == g {
                out.amps[with_digit(idx, atom, r)] += c * amp;
            } else if d == r {
                out.amps[with_digit(idx, atom, g)] += c * amp;
            }
        }
    }
}

/// Adds `−i E(config) ψ`.
pub fn apply_blockade(state: &StateVector, blockade: &BlockadeOperator, out: &mut StateVector) {
    for (idx, amp) in state.amps.iter().enumerate() {
        let e = blockade.energy(idx);
        if e != 0.0 {
            out.amps[idx] += -I * e * amp;
        }
    }
}

/// Adds `−(Σ γ_a/2) ψ` over atoms in |R⟩.
pub fn apply_decay_nonhermitian(state: &StateVector, decay: &DecayModel, out: &mut StateVector) {
    for (idx, amp) in state.amps.iter().enumerate() {
        let g = decay.total(idx);
        if g != 0.0 {
            out.amps[idx] += -0.5 * g * amp;
        }
    }
}

/// Interaction and decay parameters of a register, independent of the pulse
/// sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct GateModel {
    pub n_atoms: usize,
    pub blockade: BlockadeOperator,
    pub decay: DecayModel,
    /// Configurations with more Rydberg atoms than this are projected out
    /// (the infinite-blockade limit when set to 1).
    pub rydberg_cap: Option<usize>,
}

impl GateModel {
    pub fn new(blockade: BlockadeOperator, decay: DecayModel) -> Result<Self> {
        if blockade.n_atoms() != decay.rates().len() {
            return Err(Error::invalid("blockade and decay models disagree on the atom count"));
        }
        if blockade.n_atoms() < 2 {
            return Err(Error::invalid("need a data atom and at least one ancilla"));
        }
        Ok(Self {
            n_atoms: blockade.n_atoms(),
            blockade,
            decay,
            rydberg_cap: None,
        })
    }

    pub fn from_layout(layout: &Layout, c6: &C6Table) -> Result<Self> {
        let matrix = pairwise_blockade(layout, c6)?;
        Self::new(
            BlockadeOperator::from_matrix(&matrix),
            DecayModel::new(layout.decay_rates())?,
        )
    }

    pub fn with_rydberg_cap(mut self, cap: usize) -> Self {
        self.rydberg_cap = Some(cap);
        self
    }

    pub fn without_decay(mut self) -> Self {
        self.decay = DecayModel::none(self.n_atoms);
        self
    }

    pub fn n_ancillae(&self) -> usize {
        self.n_atoms - 1
    }

    /// Full-space derivative for a drive of amplitude `omega` on `transition`.
    pub fn derivative(&self, state: &StateVector, transition: Transition, omega: f64, out: &mut StateVector) {
        out.amps.iter_mut().for_each(|a| *a = Complex64::new(0.0, 0.0));
        apply_drive(state, &DriveOperator::new(transition, self.n_atoms), omega, out);
        apply_blockade(state, &self.blockade, out);
        apply_decay_nonhermitian(state, &self.decay, out);
        if let Some(cap) = self.rydberg_cap {
            for (idx, a) in out.amps.iter_mut().enumerate() {
                if rydberg_count(idx, self.n_atoms) > cap {
                    *a = Complex64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Set of levels an atom may occupy, as a bitmask over [`Level`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LevelSet(u8);

impl LevelSet {
    pub const ALL: LevelSet = LevelSet(0b1111);

    pub fn of(levels: &[Level]) -> Self {
        LevelSet(levels.iter().fold(0, |m, l| m | l.bit()))
    }

    pub fn contains(self, level: Level) -> bool {
        self.0 & level.bit() != 0
    }

    fn contains_digit(self, d: usize) -> bool {
        self.0 & (1 << d) != 0
    }

    /// Levels reachable from `start` under every drive that addresses
    /// `atom`. Loss is only entered through jumps.
    pub fn reachable(atom: usize, start: Level) -> Self {
        let ground: &[Level] = if atom == 0 {
            &[Level::Zero, Level::Rydberg]
        } else {
            &[Level::Zero, Level::One, Level::Rydberg]
        };
        if ground.contains(&start) {
            LevelSet::of(ground)
        } else {
            LevelSet::of(&[start])
        }
    }
}

/// A model restricted to a product of per-atom level sets, with the index
/// tables of every operator precomputed over the retained basis states.
///
/// Amplitudes outside the subspace stay exactly zero under the dynamics, so
/// evolving the compact vector is equivalent to evolving the full one.
#[derive(Debug, Clone)]
pub struct SubspacePlan {
    n_atoms: usize,
    full_index: Vec<usize>,
    /// −iE − Σγ/2 per retained basis state.
    diag: Vec<Complex64>,
    pairs: [Vec<(u32, u32)>; 3],
    /// Compact indices with atom `a` in |R⟩, per atom.
    rydberg_members: Vec<Vec<u32>>,
    decay_rates: Vec<f64>,
}

impl SubspacePlan {
    pub fn new(model: &GateModel, allowed: &[LevelSet]) -> Self {
        let n = model.n_atoms;
        assert_eq!(allowed.len(), n);
        let dim = LEVELS.pow(n as u32);
        let mut full_index = Vec::new();
        let mut compact = vec![u32::MAX; dim];
        for (idx, slot) in compact.iter_mut().enumerate() {
            let ok = (0..n).all(|a| allowed[a].contains_digit(digit(idx, a)))
                && model.rydberg_cap.is_none_or(|cap| rydberg_count(idx, n) <= cap);
            if ok {
                *slot = full_index.len() as u32;
                full_index.push(idx);
            }
        }
        let diag = full_index
            .iter()
            .map(|&idx| -I * model.blockade.energy(idx) - 0.5 * model.decay.total(idx))
            .collect();

        let r = Level::Rydberg as usize;
        let mut pairs: [Vec<(u32, u32)>; 3] = Default::default();
        for t in [Transition::DataZeroR, Transition::AncillaZeroR, Transition::AncillaOneR] {
            let drive = DriveOperator::new(t, n);
            let g = drive.lower_level() as usize;
            let list = &mut pairs[transition_slot(t)];
            for &atom in &drive.atoms {
                for (k, &idx) in full_index.iter().enumerate() {
                    if digit(idx, atom) == g {
                        let partner = compact[with_digit(idx, atom, r)];
                        if partner != u32::MAX {
                            list.push((k as u32, partner));
                        }
                    }
                }
            }
        }
        let rydberg_members = (0..n)
            .map(|a| {
                full_index
                    .iter()
                    .enumerate()
                    .filter(|(_, &idx)| digit(idx, a) == r)
                    .map(|(k, _)| k as u32)
                    .collect()
            })
            .collect();
        Self {
            n_atoms: n,
            full_index,
            diag,
            pairs,
            rydberg_members,
            decay_rates: model.decay.rates().to_vec(),
        }
    }

    /// The whole 4^n space.
    pub fn full(model: &GateModel) -> Self {
        Self::new(model, &vec![LevelSet::ALL; model.n_atoms])
    }

    pub fn dim(&self) -> usize {
        self.full_index.len()
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn full_index(&self) -> &[usize] {
        &self.full_index
    }

    /// `out = −i H_eff ψ` for a drive of amplitude `omega` on `transition`.
    pub fn derivative(&self, transition: Transition, omega: f64, psi: &[Complex64], out: &mut [Complex64]) {
        for ((o, d), p) in out.iter_mut().zip(&self.diag).zip(psi) {
            *o = d * p;
        }
        if omega != 0.0 {
            let c = -I * omega;
            for &(a, b) in &self.pairs[transition_slot(transition)] {
                let (a, b) = (a as usize, b as usize);
                out[a] += c * psi[b];
                out[b] += c * psi[a];
            }
        }
    }

    pub fn compress(&self, state: &StateVector) -> Vec<Complex64> {
        self.full_index.iter().map(|&i| state.amps[i]).collect()
    }

    pub fn expand(&self, psi: &[Complex64]) -> StateVector {
        let mut s = StateVector::zeros(self.n_atoms);
        for (&i, &a) in self.full_index.iter().zip(psi) {
            s.amps[i] = a;
        }
        s
    }

    /// γ_a · P_a(R) for every atom.
    pub fn jump_weights(&self, psi: &[Complex64]) -> Vec<f64> {
        self.rydberg_members
            .iter()
            .zip(&self.decay_rates)
            .map(|(members, &g)| {
                if g == 0.0 {
                    0.0
                } else {
                    g * members.iter().map(|&k| psi[k as usize].norm_sqr()).sum::<f64>()
                }
            })
            .collect()
    }
}

/// Moves atom `atom` from |R⟩ to |L⟩: keeps only components with the atom in
/// |R⟩, relabels them, and renormalizes.
pub fn apply_loss_jump(state: &StateVector, atom: usize) -> StateVector {
    let r = Level::Rydberg as usize;
    let mut out = StateVector::zeros(state.n_atoms);
    for (idx, a) in state.amps.iter().enumerate() {
        if digit(idx, atom) == r {
            out.amps[with_digit(idx, atom, Level::Lost as usize)] = *a;
        }
    }
    out.normalize();
    out
}
