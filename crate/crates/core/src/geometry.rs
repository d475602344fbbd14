//! Atom placement and van-der-Waals blockade energies.
//!
//! Positions are in µm and C6 coefficients in GHz·µm⁶. The only unit
//! conversion happens in [`pairwise_blockade`], which produces energies in MHz
//! (cyclic, E/h).

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Slack applied to separation checks so that atoms placed exactly at the
/// minimum distance are not rejected by rounding.
const SEPARATION_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpeciesKind {
    Cs,
    Rb,
}

impl fmt::Display for SpeciesKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SpeciesKind::Cs => write!(f, "Cs"),
            SpeciesKind::Rb => write!(f, "Rb"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Species {
    pub name: SpeciesKind,
    /// Rydberg-state lifetime in µs.
    pub rydberg_lifetime_t1: f64,
}

impl Species {
    pub fn new(name: SpeciesKind, rydberg_lifetime_t1: f64) -> Result<Self> {
        if !(rydberg_lifetime_t1 > 0.0) {
            return Err(Error::invalid(format!(
                "{name} Rydberg lifetime must be positive, got {rydberg_lifetime_t1}"
            )));
        }
        Ok(Self {
            name,
            rydberg_lifetime_t1,
        })
    }

    /// Cs in 77S₁/₂, T₁ = 176 µs.
    pub fn cesium() -> Self {
        Self {
            name: SpeciesKind::Cs,
            rydberg_lifetime_t1: 176.0,
        }
    }

    /// Rb in 78S₁/₂, T₁ = 190 µs.
    pub fn rubidium() -> Self {
        Self {
            name: SpeciesKind::Rb,
            rydberg_lifetime_t1: 190.0,
        }
    }

    /// Decay rate R → loss in µs⁻¹.
    pub fn decay_rate(&self) -> f64 {
        1.0 / self.rydberg_lifetime_t1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Data,
    Ancilla,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    pub species: Species,
    pub role: Role,
    /// In-plane position in µm.
    pub position: [f64; 2],
}

impl AtomSpec {
    pub fn distance(&self, other: &AtomSpec) -> f64 {
        let dx = self.position[0] - other.position[0];
        let dy = self.position[1] - other.position[1];
        dx.hypot(dy)
    }
}

/// An ordered set of atoms. The data atom is always at index 0 and the
/// ancillae follow; the rest of the crate relies on that ordering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layout {
    atoms: Vec<AtomSpec>,
    min_separation: f64,
}

impl Layout {
    pub fn new(atoms: Vec<AtomSpec>, min_separation: f64) -> Result<Self> {
        if !(min_separation > 0.0) {
            return Err(Error::invalid("minimum separation must be positive"));
        }
        let n_data = atoms.iter().filter(|a| a.role == Role::Data).count();
        if n_data != 1 {
            return Err(Error::invalid(format!(
                "layout needs exactly one data atom, found {n_data}"
            )));
        }
        if atoms[0].role != Role::Data {
            return Err(Error::invalid("the data atom must come first"));
        }
        for i in 0..atoms.len() {
            for j in (i + 1)..atoms.len() {
                let d = atoms[i].distance(&atoms[j]);
                if d < min_separation - SEPARATION_SLACK {
                    return Err(Error::SeparationViolation {
                        i,
                        j,
                        distance: d,
                        min: min_separation,
                    });
                }
            }
        }
        Ok(Self {
            atoms,
            min_separation,
        })
    }

    pub fn atoms(&self) -> &[AtomSpec] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn n_ancillae(&self) -> usize {
        self.atoms.len() - 1
    }

    pub fn min_separation(&self) -> f64 {
        self.min_separation
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.atoms[i].distance(&self.atoms[j])
    }

    /// Per-atom decay rates in µs⁻¹, in layout order.
    pub fn decay_rates(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.species.decay_rate()).collect()
    }
}

/// Data atom at the origin, `n` ancillae on a regular polygon of the given
/// radius. Ancilla `k` sits at angle 2πk/n.
pub fn ring_layout(
    n: usize,
    radius: f64,
    min_separation: f64,
    data: Species,
    ancilla: Species,
) -> Result<Layout> {
    if n == 0 {
        return Err(Error::invalid("ring layout needs at least one ancilla"));
    }
    if !(radius > 0.0) {
        return Err(Error::invalid("ring radius must be positive"));
    }
    let mut atoms = Vec::with_capacity(n + 1);
    atoms.push(AtomSpec {
        species: data,
        role: Role::Data,
        position: [0.0, 0.0],
    });
    for k in 0..n {
        let theta = std::f64::consts::TAU * k as f64 / n as f64;
        atoms.push(AtomSpec {
            species: ancilla,
            role: Role::Ancilla,
            position: [radius * theta.cos(), radius * theta.sin()],
        });
    }
    Layout::new(atoms, min_separation)
}

/// Van-der-Waals coefficients in GHz·µm⁶.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct C6Table {
    pub c6_cs_cs: f64,
    pub c6_cs_rb: f64,
}

impl Default for C6Table {
    /// Cs 77S / Rb 78S pair values.
    fn default() -> Self {
        Self {
            c6_cs_cs: -2.9,
            c6_cs_rb: -1.7,
        }
    }
}

impl C6Table {
    pub fn new(c6_cs_cs: f64, c6_cs_rb: f64) -> Result<Self> {
        if c6_cs_cs == 0.0 || c6_cs_rb == 0.0 || !c6_cs_cs.is_finite() || !c6_cs_rb.is_finite() {
            return Err(Error::invalid("C6 coefficients must be finite and nonzero"));
        }
        Ok(Self { c6_cs_cs, c6_cs_rb })
    }

    /// Coefficient for a species pair, GHz·µm⁶.
    pub fn coefficient(&self, a: SpeciesKind, b: SpeciesKind) -> Result<f64> {
        use SpeciesKind::*;
        match (a, b) {
            (Cs, Cs) => Ok(self.c6_cs_cs),
            (Cs, Rb) | (Rb, Cs) => Ok(self.c6_cs_rb),
            (Rb, Rb) => Err(Error::MissingC6(a.to_string(), b.to_string())),
        }
    }
}

/// Symmetric matrix of pairwise blockade energies in MHz with zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockadeMatrix {
    n: usize,
    values: Vec<f64>,
}

impl BlockadeMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// The same energy on every off-diagonal pair.
    pub fn uniform(n: usize, mhz: f64) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.values[i * n + j] = mhz;
                }
            }
        }
        m
    }

    pub fn set(&mut self, i: usize, j: usize, mhz: f64) {
        assert!(i != j, "blockade diagonal is fixed at zero");
        self.values[i * self.n + j] = mhz;
        self.values[j * self.n + i] = mhz;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// V_ij = C₆(species_i, species_j) / r_ij⁶, in MHz.
pub fn pairwise_blockade(layout: &Layout, c6: &C6Table) -> Result<BlockadeMatrix> {
    let n = layout.len();
    let mut m = BlockadeMatrix::zeros(n);
    let atoms = layout.atoms();
    for i in 0..n {
        for j in (i + 1)..n {
            let coeff_ghz = c6.coefficient(atoms[i].species.name, atoms[j].species.name)?;
            let r = layout.distance(i, j);
            m.set(i, j, coeff_ghz * 1e3 / r.powi(6));
        }
    }
    Ok(m)
}
