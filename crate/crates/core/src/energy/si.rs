use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{dot, energy, energy_ratio_db, MetricValue, CONDITION_LIMIT, EPS_ZERO};
use crate::error::{Error, Result};

/// Split of a mono estimate into scaled target, interference and artifact.
#[derive(Debug, Clone, PartialEq)]
pub struct SiDecomposition {
    pub alpha: f64,
    pub e_target: Vec<f64>,
    pub e_interference: Vec<f64>,
    pub e_artifact: Vec<f64>,
}

/// Energies of the three parts; everything the ratio metrics need.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiEnergies {
    pub target: f64,
    pub interference: f64,
    pub artifact: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SiScores {
    pub si_sdr: MetricValue,
    pub si_sir: MetricValue,
    pub si_sar: MetricValue,
    pub sd_sdr: MetricValue,
}

impl SiDecomposition {
    pub fn energies(&self) -> SiEnergies {
        SiEnergies {
            target: energy(&self.e_target),
            interference: energy(&self.e_interference),
            artifact: energy(&self.e_artifact),
        }
    }

    /// Projection of the estimate onto the reference span.
    pub fn projection(&self) -> Vec<f64> {
        self.e_target
            .iter()
            .zip(&self.e_interference)
            .map(|(t, i)| t + i)
            .collect()
    }
}

impl SiEnergies {
    pub fn si_sdr(&self) -> MetricValue {
        // Interference lies in the reference span and artifact is orthogonal
        // to it, so their energies add.
        energy_ratio_db(self.target, self.interference + self.artifact)
    }

    pub fn si_sir(&self) -> MetricValue {
        energy_ratio_db(self.target, self.interference)
    }

    pub fn si_sar(&self) -> MetricValue {
        energy_ratio_db(self.target, self.artifact)
    }

    /// Ratio with denominator `E_i^w · E_a^(1-w)`.
    pub fn reweighted(&self, w: f64) -> Result<MetricValue> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::Parameter(format!("weight {w} outside [0, 1]")));
        }
        let den = self.interference.powf(w) * self.artifact.powf(1.0 - w);
        Ok(energy_ratio_db(self.target, den))
    }
}

/// Decomposes `estimate` against `references`, with `references[target]` as
/// the true source.
pub fn si_decompose<R: AsRef<[f64]>>(
    estimate: &[f64],
    references: &[R],
    target: usize,
) -> Result<SiDecomposition> {
    let n = estimate.len();
    if n < 2 {
        return Err(Error::Parameter(format!("signals need at least 2 samples, got {n}")));
    }
    let refs: Vec<&[f64]> = references.iter().map(|r| r.as_ref()).collect();
    if target >= refs.len() {
        return Err(Error::Parameter(format!(
            "target index {target} out of range for {} references",
            refs.len()
        )));
    }
    if let Some(bad) = refs.iter().position(|r| r.len() != n) {
        return Err(Error::Parameter(format!(
            "reference {bad} has {} samples, estimate has {n}",
            refs[bad].len()
        )));
    }
    if estimate.iter().chain(refs.iter().flat_map(|r| r.iter())).any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite sample in input".into()));
    }

    let energies: Vec<f64> = refs.iter().map(|r| energy(r)).collect();
    let max_energy = energies.iter().cloned().fold(0.0, f64::max);
    let target_energy = energies[target];
    if !(target_energy > EPS_ZERO * max_energy) || target_energy == 0.0 {
        return Err(Error::DegenerateReference(format!(
            "target reference {target} has energy {target_energy:e}"
        )));
    }

    // Silent non-target references add nothing to the span.
    let span: Vec<&[f64]> = refs
        .iter()
        .zip(&energies)
        .enumerate()
        .filter(|&(j, (_, &e))| j == target || e > EPS_ZERO * max_energy)
        .map(|(_, (r, _))| *r)
        .collect();

    let k = span.len();
    let gram = DMatrix::from_fn(k, k, |i, j| dot(span[i], span[j]));
    if k > 1 {
        let eig = SymmetricEigen::new(gram.clone()).eigenvalues;
        let hi = eig.max();
        let lo = eig.min();
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > CONDITION_LIMIT {
            return Err(Error::DependentReferences {
                condition,
                limit: CONDITION_LIMIT,
            });
        }
    }
    let chol = gram.cholesky().ok_or(Error::DependentReferences {
        condition: f64::INFINITY,
        limit: CONDITION_LIMIT,
    })?;

    let synth = |coef: &DVector<f64>| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (r, &c) in span.iter().zip(coef.iter()) {
            for (o, &x) in out.iter_mut().zip(r.iter()) {
                *o += c * x;
            }
        }
        out
    };

    let rhs = DVector::from_iterator(k, span.iter().map(|r| dot(r, estimate)));
    let mut coef = chol.solve(&rhs);
    let mut projection = synth(&coef);
    // One refinement pass against the actual residual.
    let residual: Vec<f64> = estimate.iter().zip(&projection).map(|(e, p)| e - p).collect();
    let correction = chol.solve(&DVector::from_iterator(
        k,
        span.iter().map(|r| dot(r, &residual)),
    ));
    coef += correction;
    projection = synth(&coef);

    let s = refs[target];
    let alpha = dot(estimate, s) / target_energy;
    let e_target: Vec<f64> = s.iter().map(|&x| alpha * x).collect();
    let e_interference = projection.iter().zip(&e_target).map(|(p, t)| p - t).collect();
    let e_artifact = estimate.iter().zip(&projection).map(|(e, p)| e - p).collect();

    Ok(SiDecomposition {
        alpha,
        e_target,
        e_interference,
        e_artifact,
    })
}

/// SI-SDR, SI-SIR, SI-SAR and SD-SDR for a decomposition of `estimate`
/// against `s_target`.
pub fn si_metrics(d: &SiDecomposition, estimate: &[f64], s_target: &[f64]) -> SiScores {
    let target = energy(&d.e_target);
    let residual: f64 = d
        .e_interference
        .iter()
        .zip(&d.e_artifact)
        .map(|(i, a)| (i + a) * (i + a))
        .sum();
    let error: f64 = estimate
        .iter()
        .zip(s_target)
        .map(|(e, s)| (e - s) * (e - s))
        .sum();
    SiScores {
        si_sdr: energy_ratio_db(target, residual),
        si_sir: energy_ratio_db(target, energy(&d.e_interference)),
        si_sar: energy_ratio_db(target, energy(&d.e_artifact)),
        sd_sdr: energy_ratio_db(target, error),
    }
}

pub fn reweighted_si_sdr(d: &SiDecomposition, w: f64) -> Result<MetricValue> {
    d.energies().reweighted(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        (0..n)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn identity_estimate() {
        let s = noise(1, 64);
        let d = si_decompose(&s, &[s.clone()], 0).unwrap();
        assert!((d.alpha - 1.0).abs() < 1e-15);
        assert!(d.e_interference.iter().all(|v| v.abs() < 1e-14));
        assert!(d.e_artifact.iter().all(|v| v.abs() < 1e-14));
        let m = si_metrics(&d, &s, &s);
        assert!(m.si_sdr.is_perfect() && m.si_sir.is_perfect());
        assert!(m.si_sar.is_perfect() && m.sd_sdr.is_perfect());
    }

    #[test]
    fn doubled_estimate() {
        let s = noise(2, 64);
        let est: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        let d = si_decompose(&est, &[s.clone()], 0).unwrap();
        assert!((d.alpha - 2.0).abs() < 1e-14);
        assert!(d.e_artifact.iter().chain(&d.e_interference).all(|v| v.abs() < 1e-13));
        let m = si_metrics(&d, &est, &s);
        let expected = 10.0 * 4f64.log10();
        assert!((m.sd_sdr.as_f64() - expected).abs() < 1e-12);
        assert!((m.sd_sdr.as_f64() - 6.0206).abs() < 1e-4);
    }

    #[test]
    fn orthonormal_pair() {
        let s1 = vec![1.0, 0.0];
        let s2 = vec![0.0, 1.0];
        let est = vec![1.0, 1.0];
        let d = si_decompose(&est, &[s1.clone(), s2], 0).unwrap();
        assert_eq!(d.e_target, vec![1.0, 0.0]);
        assert_eq!(d.e_interference, vec![0.0, 1.0]);
        assert_eq!(d.e_artifact, vec![0.0, 0.0]);
        let m = si_metrics(&d, &est, &s1);
        assert_eq!(m.si_sir, MetricValue::Finite(0.0));
        assert_eq!(m.si_sdr, MetricValue::Finite(0.0));
        assert!(m.si_sar.is_perfect());
    }

    #[test]
    fn reweighted_endpoints_and_midpoint() {
        let s1 = noise(3, 200);
        let s2 = noise(4, 200);
        let art = noise(5, 200);
        let est: Vec<f64> = (0..200).map(|i| s1[i] + 0.3 * s2[i] + 0.2 * art[i]).collect();
        let d = si_decompose(&est, &[s1.clone(), s2], 0).unwrap();
        let m = si_metrics(&d, &est, &s1);
        assert_eq!(reweighted_si_sdr(&d, 1.0).unwrap(), m.si_sir);
        assert_eq!(reweighted_si_sdr(&d, 0.0).unwrap(), m.si_sar);
        let mid = reweighted_si_sdr(&d, 0.5).unwrap().as_f64();
        assert!((mid - (m.si_sir.as_f64() + m.si_sar.as_f64()) / 2.0).abs() < 1e-12);
        assert!(reweighted_si_sdr(&d, 1.5).is_err());
        assert!(reweighted_si_sdr(&d, -0.1).is_err());
        assert!(reweighted_si_sdr(&d, f64::NAN).is_err());
    }

    #[test]
    fn vanished_active_factor_is_perfect() {
        let e = SiEnergies {
            target: 1.0,
            interference: 0.0,
            artifact: 0.5,
        };
        assert!(e.reweighted(0.3).unwrap().is_perfect());
        assert!(e.reweighted(1.0).unwrap().is_perfect());
        assert!(!e.reweighted(0.0).unwrap().is_perfect());
    }

    #[test]
    fn degenerate_and_dependent_references() {
        let s = noise(6, 50);
        let zero = vec![0.0; 50];
        assert!(matches!(
            si_decompose(&s, &[zero.clone(), s.clone()], 0),
            Err(Error::DegenerateReference(_))
        ));
        // A silent interferer is dropped from the span, not an error.
        assert!(si_decompose(&s, &[s.clone(), zero], 0).is_ok());
        let twice: Vec<f64> = s.iter().map(|v| 2.0 * v).collect();
        assert!(matches!(
            si_decompose(&s, &[s.clone(), twice], 0),
            Err(Error::DependentReferences { .. })
        ));
    }

    #[test]
    fn input_validation() {
        assert!(si_decompose(&[1.0], &[vec![1.0]], 0).is_err());
        assert!(si_decompose(&[1.0, 2.0], &[vec![1.0, 2.0]], 1).is_err());
        assert!(si_decompose(&[1.0, 2.0], &[vec![1.0]], 0).is_err());
        assert!(si_decompose(&[1.0, f64::NAN], &[vec![1.0, 2.0]], 0).is_err());
    }

    #[test]
    fn silent_estimate_is_worst() {
        let s = noise(7, 32);
        let zero = vec![0.0; 32];
        let d = si_decompose(&zero, &[s.clone()], 0).unwrap();
        let m = si_metrics(&d, &zero, &s);
        assert_eq!(m.si_sdr, MetricValue::Finite(f64::NEG_INFINITY));
        assert_eq!(m.sd_sdr, MetricValue::Finite(f64::NEG_INFINITY));
    }
}
