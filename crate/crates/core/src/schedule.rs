//! The copy-gate pulse sequence.
//!
//! Drive amplitudes are angular rates in rad/µs. Under a coupling
//! `Ω(|g⟩⟨R| + h.c.)` a full population transfer needs area `∫Ω dt = π/2`,
//! and a collective transition enhanced by `√n` needs `π/(2√n)`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Simpson intervals used for envelope areas.
const QUADRATURE_INTERVALS: usize = 1024;
const AREA_REL_TOL: f64 = 1e-9;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transition {
    /// Data atom |0⟩ ↔ |R⟩ (the U_d pulse).
    #[serde(rename = "data_0R")]
    DataZeroR,
    /// Every ancilla |0⟩ ↔ |R⟩ (H₀).
    #[serde(rename = "ancilla_0R")]
    AncillaZeroR,
    /// Every ancilla |1⟩ ↔ |R⟩ (H₁).
    #[serde(rename = "ancilla_1R")]
    AncillaOneR,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    Square,
    /// Ω(t) = Ω₀(1 − (1 − sin(πt/T))⁴)⁴.
    Shaped,
}

impl Envelope {
    /// Normalized amplitude at fractional time `s = t/T ∈ [0, 1]`.
    pub fn profile(self, s: f64) -> f64 {
        match self {
            Envelope::Square => 1.0,
            Envelope::Shaped => {
                let x = 1.0 - (PI * s).sin();
                let inner = 1.0 - x.powi(4);
                inner.powi(4)
            }
        }
    }

    /// ∫₀¹ profile(s) ds.
    pub fn mean(self) -> f64 {
        match self {
            Envelope::Square => 1.0,
            Envelope::Shaped => simpson(|s| self.profile(s), 0.0, 1.0, 8 * QUADRATURE_INTERVALS),
        }
    }
}

/// Composite Simpson rule with `intervals` (rounded up to even) panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + h * k as f64);
    }
    acc * h / 3.0
}

/// Neumaier-compensated sum.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSegment {
    pub target: Transition,
    /// Peak amplitude Ω₀ in rad/µs.
    pub amplitude: f64,
    /// Duration in µs.
    pub duration: f64,
    pub envelope: Envelope,
    /// +1, or −1 for the inverse data pulse.
    pub phase_sign: i8,
}

impl PulseSegment {
    /// Signed drive amplitude at local time `t ∈ [0, duration]`.
    pub fn rabi(&self, t: f64) -> f64 {
        f64::from(self.phase_sign) * self.amplitude * self.envelope.profile(t / self.duration)
    }

    /// ∫ |Ω(t)| dt over the segment.
    pub fn area(&self) -> f64 {
        match self.envelope {
            Envelope::Square => self.amplitude * self.duration,
            Envelope::Shaped => simpson(
                |t| self.amplitude * self.envelope.profile(t / self.duration),
                0.0,
                self.duration,
                QUADRATURE_INTERVALS,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub n_ancillae: usize,
    pub segments: Vec<PulseSegment>,
}

impl Schedule {
    pub fn total_time(&self) -> f64 {
        compensated_sum(self.segments.iter().map(|s| s.duration))
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration;
                start
            })
            .collect()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.segments.iter().fold(0.0, |m, s| m.max(s.amplitude))
    }

    /// Only the ancilla pulses, in order.
    pub fn ancilla_segments(&self) -> impl Iterator<Item = &PulseSegment> {
        self.segments.iter().filter(|s| s.target != Transition::DataZeroR)
    }
}

fn check_inputs(n: usize, omega: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("need at least one ancilla"));
    }
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::invalid(format!("drive amplitude must be positive, got {omega}")));
    }
    Ok(())
}

/// Square-pulse durations of the 2N ancilla pulses.
///
/// Step `2k` (H₀) starts from |N−k; k; 0⟩ with enhancement √(N−k); step
/// `2k+1` (H₁) starts from |N−k−1; k; 1⟩ with enhancement √(k+1).
pub fn pi_area_durations(n: usize, omega: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(2 * n);
    for k in 0..n {
        out.push(PI / (2.0 * omega * ((n - k) as f64).sqrt()));
        out.push(PI / (2.0 * omega * ((k + 1) as f64).sqrt()));
    }
    out
}

/// (π/Ω) Σₙ n^(−1/2) for the ancilla pulses plus π/Ω for the two data pulses.
pub fn exact_gate_time(n: usize, omega: f64) -> f64 {
    let harmonic = compensated_sum((1..=n).map(|k| 1.0 / (k as f64).sqrt()));
    PI / omega * (harmonic + 1.0)
}

/// Closed-form estimate (π/2Ω)(4√N − 1).
pub fn approx_gate_time(n: usize, omega: f64) -> f64 {
    PI / (2.0 * omega) * (4.0 * (n as f64).sqrt() - 1.0)
}

/// Stretch factor T_shaped / T_square for equal pulse area.
pub fn envelope_area_factor(envelope: Envelope) -> f64 {
    1.0 / envelope.mean()
}

/// Duration giving `target_area` for an envelope of peak `omega`, found by
/// bisection on the quadrature area.
fn stretched_duration(envelope: Envelope, omega: f64, target_area: f64) -> Result<f64> {
    let square = target_area / omega;
    if envelope == Envelope::Square {
        return Ok(square);
    }
    let area = |t: f64| {
        PulseSegment {
            target: Transition::AncillaZeroR,
            amplitude: omega,
            duration: t,
            envelope,
            phase_sign: 1,
        }
        .area()
    };
    let mut lo = square;
    let mut hi = 2.0 * square;
    let mut grow = 0;
    while area(hi) < target_area {
        lo = hi;
        hi *= 2.0;
        grow += 1;
        if grow > 60 {
            return Err(Error::AreaSolve { residual: f64::INFINITY });
        }
    }
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        let a = area(mid);
        if ((a - target_area) / target_area).abs() <= AREA_REL_TOL {
            return Ok(mid);
        }
        if a < target_area {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    Err(Error::AreaSolve {
        residual: ((area(mid) - target_area) / target_area).abs(),
    })
}

/// U_d, then alternating H₀/H₁ with π-transfer areas, then U_d⁻¹.
pub fn build_copy_schedule(n: usize, omega: f64, envelope: Envelope) -> Result<Schedule> {
    check_inputs(n, omega)?;
    let segment = |target, area: f64, phase_sign| -> Result<PulseSegment> {
        Ok(PulseSegment {
            target,
            amplitude: omega,
            duration: stretched_duration(envelope, omega, area)?,
            envelope,
            phase_sign,
        })
    };
    let mut segments = Vec::with_capacity(2 * n + 2);
    segments.push(segment(Transition::DataZeroR, PI / 2.0, 1)?);
    for (i, t) in pi_area_durations(n, omega).into_iter().enumerate() {
        let target = if i % 2 == 0 {
            Transition::AncillaZeroR
        } else {
            Transition::AncillaOneR
        };
        segments.push(segment(target, omega * t, 1)?);
    }
    segments.push(segment(Transition::DataZeroR, PI / 2.0, -1)?);
    Ok(Schedule {
        n_ancillae: n,
        segments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const OMEGA: f64 = 2.0 * PI * 7.0;

    #[test]
    fn single_ancilla_durations() {
        let d = pi_area_durations(1, OMEGA);
        assert_eq!(d.len(), 2);
        for t in d {
            assert_relative_eq!(t, PI / (2.0 * OMEGA), epsilon = 1e-15);
        }
    }

    #[test]
    fn first_pulse_is_enhanced() {
        let d = pi_area_durations(4, OMEGA);
        assert_relative_eq!(d[0], PI / (4.0 * OMEGA), epsilon = 1e-15);
    }

    #[test]
    fn five_ancilla_sum() {
        let s: f64 = pi_area_durations(5, 1.0).iter().sum();
        let direct = 1.0 + 0.5f64.sqrt() + (1.0 / 3.0f64).sqrt() + 0.5 + 0.2f64.sqrt();
        assert_relative_eq!(s, PI * direct, epsilon = 1e-14);
        assert_relative_eq!(direct, 3.2317, epsilon = 1e-4);
    }

    #[test]
    fn gate_time_examples() {
        assert_relative_eq!(exact_gate_time(1, OMEGA), 2.0 * PI / OMEGA, epsilon = 1e-14);
        assert_relative_eq!(exact_gate_time(5, 1.0) / PI, 4.2317, epsilon = 1e-4);
        assert_relative_eq!(approx_gate_time(1, OMEGA), 1.5 * PI / OMEGA, epsilon = 1e-14);
        assert_relative_eq!(approx_gate_time(4, OMEGA), 3.5 * PI / OMEGA, epsilon = 1e-14);
        // (4√5 − 1)/2
        assert_relative_eq!(approx_gate_time(5, 1.0) / PI, 3.97213595499958, epsilon = 1e-12);
    }

    #[test]
    fn large_n_gate_time_follows_square_root() {
        // Σ n^(-1/2) = 2√N + ζ(1/2) + O(N^(-1/2)), ζ(1/2) ≈ −1.4603545
        let n = 100;
        let direct: f64 = (1..=n).map(|k| 1.0 / (k as f64).sqrt()).sum();
        let em = 2.0 * (n as f64).sqrt() - 1.4603545088 + 0.5 / (n as f64).sqrt();
        assert!((direct - em).abs() < 1e-3);
        let exact = exact_gate_time(n, 1.0) / PI;
        let leading = 2.0 * (n as f64).sqrt() + 1.0 - 1.4603545088;
        assert!(((exact - leading) / leading).abs() < 0.02);
    }

    #[test]
    fn square_schedule_layout() {
        let s = build_copy_schedule(3, OMEGA, Envelope::Square).unwrap();
        assert_eq!(s.segments.len(), 8);
        assert_eq!(s.segments[0].target, Transition::DataZeroR);
        assert_eq!(s.segments[7].target, Transition::DataZeroR);
        assert_eq!(s.segments[7].phase_sign, -1);
        for (i, seg) in s.segments[1..7].iter().enumerate() {
            let expect = if i % 2 == 0 { Transition::AncillaZeroR } else { Transition::AncillaOneR };
            assert_eq!(seg.target, expect);
        }
        assert_relative_eq!(s.total_time(), exact_gate_time(3, OMEGA), max_relative = 1e-14);
    }

    #[test]
    fn single_ancilla_areas() {
        let s = build_copy_schedule(1, OMEGA, Envelope::Square).unwrap();
        let targets: Vec<_> = s.segments.iter().map(|x| x.target).collect();
        assert_eq!(
            targets,
            [Transition::DataZeroR, Transition::AncillaZeroR, Transition::AncillaOneR, Transition::DataZeroR]
        );
        for seg in &s.segments {
            assert_relative_eq!(seg.area(), PI / 2.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn shaped_schedule_is_four_thirds_longer() {
        for n in [1, 3, 5, 12] {
            let sq = build_copy_schedule(n, OMEGA, Envelope::Square).unwrap();
            let sh = build_copy_schedule(n, OMEGA, Envelope::Shaped).unwrap();
            let ratio = sh.total_time() / sq.total_time();
            assert!((ratio / (4.0 / 3.0) - 1.0).abs() < 0.02, "ratio {ratio}");
            for (a, b) in sq.segments.iter().zip(&sh.segments) {
                assert!((b.area() / a.area() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn area_factor() {
        assert_eq!(envelope_area_factor(Envelope::Square), 1.0);
        let f = envelope_area_factor(Envelope::Shaped);
        assert!((f - 4.0 / 3.0).abs() / (4.0 / 3.0) < 0.02, "{f}");
        // amplitude-invariant: stretch from two different peak amplitudes
        let a = stretched_duration(Envelope::Shaped, 1.0, 1.0).unwrap();
        let b = stretched_duration(Envelope::Shaped, 3.0, 3.0).unwrap();
        assert_relative_eq!(a, b, max_relative = 1e-8);
        assert_relative_eq!(a, f, max_relative = 1e-8);
    }

    #[test]
    fn envelope_endpoints_and_peak() {
        let e = Envelope::Shaped;
        assert_eq!(e.profile(0.0), 0.0);
        assert!(e.profile(1.0).abs() < 1e-30);
        assert_relative_eq!(e.profile(0.5), 1.0, epsilon = 1e-15);
        let peak = (0..=1000).map(|k| e.profile(k as f64 / 1000.0)).fold(0.0, f64::max);
        assert_relative_eq!(peak, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(build_copy_schedule(0, 1.0, Envelope::Square).is_err());
        assert!(build_copy_schedule(2, 0.0, Envelope::Shaped).is_err());
        assert!(build_copy_schedule(2, f64::NAN, Envelope::Shaped).is_err());
    }

    #[test]
    fn golden_record() {
        let s = build_copy_schedule(1, 1.0, Envelope::Square).unwrap();
        let json = serde_json::to_string(&s).unwrap();
        let d = PI / 2.0;
        let seg = |t: &str, sign: i8| {
            format!(
                r#"{{"target":"{t}","amplitude":1.0,"duration":{d},"envelope":"square","phase_sign":{sign}}}"#
            )
        };
        let expected = format!(
            r#"{{"n_ancillae":1,"segments":[{},{},{},{}]}}"#,
            seg("data_0R", 1),
            seg("ancilla_0R", 1),
            seg("ancilla_1R", 1),
            seg("data_0R", -1)
        );
        assert_eq!(json, expected);
    }

    proptest! {
        #[test]
        fn envelope_is_symmetric(s in 0.0f64..1.0) {
            let e = Envelope::Shaped;
            prop_assert!((e.profile(s) - e.profile(1.0 - s)).abs() < 1e-12);
        }

        #[test]
        fn exact_time_matches_duration_sum(n in 1usize..2000) {
            let s = build_copy_schedule(n, 1.0, Envelope::Square).unwrap();
            let rel = (s.total_time() - exact_gate_time(n, 1.0)).abs() / exact_gate_time(n, 1.0);
            prop_assert!(rel < 1e-12);
        }
    }
}
