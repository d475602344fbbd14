//! Distances between discrete distributions and their sampling errors.

/// ½ Σ |a − b|, shorter input padded with zeros.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().max(b.len());
    let at = |v: &[f64], i: usize| v.get(i).copied().unwrap_or(0.0);
    0.5 * (0..n).map(|i| (at(a, i) - at(b, i)).abs()).sum::<f64>()
}

/// ½ − ½ TVD: the equal-prior Bayes error of telling `a` from `b`.
pub fn tvd_infidelity(a: &[f64], b: &[f64]) -> f64 {
    0.5 - 0.5 * total_variation(a, b)
}

/// Delta-method standard error of `tvd_infidelity(q0, q1)` when the
/// mixture weights `p0`, `p1` are multinomial frequencies from `samples`
/// draws each, and `q_s = Σ_n p_s[n] · kernel(n)`.
pub fn mixture_infidelity_stderr(
    p0: &[f64],
    p1: &[f64],
    q0: &[f64],
    q1: &[f64],
    kernel: impl Fn(usize) -> Vec<f64>,
    samples: usize,
) -> f64 {
    if samples == 0 {
        return f64::NAN;
    }
    let len = q0.len().max(q1.len());
    let sign: Vec<f64> = (0..len)
        .map(|m| {
            let d = q0.get(m).copied().unwrap_or(0.0) - q1.get(m).copied().unwrap_or(0.0);
            if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
        .collect();
    // ∂IF/∂p0[n] = −¼ Σ_m sign_m K_n(m), ∂IF/∂p1[n] = +¼ Σ_m sign_m K_n(m)
    let grad: Vec<f64> = (0..p0.len().max(p1.len()))
        .map(|n| {
            let k = kernel(n);
            0.25 * k.iter().zip(&sign).map(|(a, s)| a * s).sum::<f64>()
        })
        .collect();
    let var = |p: &[f64]| {
        let m1: f64 = p.iter().zip(&grad).map(|(p, g)| p * g).sum();
        let m2: f64 = p.iter().zip(&grad).map(|(p, g)| p * g * g).sum();
        (m2 - m1 * m1).max(0.0) / samples as f64
    };
    (var(p0) + var(p1)).sqrt()
}

/// Empirical pmf of non-negative integer samples.
pub fn histogram(samples: &[u64]) -> Vec<f64> {
    let len = samples.iter().max().map_or(1, |&m| m as usize + 1);
    let mut h = vec![0.0; len];
    for &s in samples {
        h[s as usize] += 1.0;
    }
    let n = samples.len().max(1) as f64;
    h.iter_mut().for_each(|x| *x /= n);
    h
}

/// Sums consecutive groups of `width` bins.
pub fn coarse_grain(p: &[f64], width: usize) -> Vec<f64> {
    p.chunks(width.max(1)).map(|c| c.iter().sum()).collect()
}
