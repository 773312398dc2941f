//! Single-site prior and channel measures with their log-partition functions.
//!
//! Both the replica and TAP modules consume only the three scalars
//! (log-partition, first derivative, second derivative), so new priors or
//! channels plug in here without touching the solvers.

use crate::error::{Error, Result};
use crate::quad::StdNormalRule;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

const LN_SQRT_2PI: f64 = 0.9189385332046727;

/// ln H(t) with H(t) = erfc(t/sqrt(2))/2, stable over the whole real line.
/// Log-domain erfc up to t = 20, then the standard asymptotic tail series.
pub fn ln_h(t: f64) -> f64 {
    if t <= 20.0 {
        (0.5 * libm::erfc(t / std::f64::consts::SQRT_2)).ln()
    } else {
        -0.5 * t * t - LN_SQRT_2PI - t.ln() + tail_series(t).ln()
    }
}

/// 1 - 1/t^2 + 3/t^4 - 15/t^6 + ... (odd double factorials)
fn tail_series(t: f64) -> f64 {
    let r = 1.0 / (t * t);
    let mut term = 1.0;
    let mut acc = 1.0;
    let mut k = 1.0;
    for _ in 0..8 {
        term *= -(2.0 * k - 1.0) * r;
        acc += term;
        k += 1.0;
    }
    acc
}

/// Inverse Mills ratio phi(t)/H(t).
pub fn mills_ratio(t: f64) -> f64 {
    if t <= 20.0 {
        let ln_phi = -0.5 * t * t - LN_SQRT_2PI;
        (ln_phi - ln_h(t)).exp()
    } else {
        t / tail_series(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureConvention {
    /// weight 1 per Ising state; the log-partition per element is the entropy
    Counting,
    /// probability measure (weight 1/2 per Ising state)
    Normalized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PriorModel {
    IsingPm1 { convention: MeasureConvention },
    GaussianUnit { variance: f64 },
}

impl PriorModel {
    pub fn ising() -> Self {
        PriorModel::IsingPm1 {
            convention: MeasureConvention::Counting,
        }
    }

    pub fn ising_normalized() -> Self {
        PriorModel::IsingPm1 {
            convention: MeasureConvention::Normalized,
        }
    }

    pub fn gaussian(variance: f64) -> Self {
        PriorModel::GaussianUnit { variance }
    }

    /// Same prior with a normalized measure (used wherever the generative
    /// model must integrate to one, e.g. mutual information).
    pub fn normalized(&self) -> Self {
        match *self {
            PriorModel::IsingPm1 { .. } => PriorModel::ising_normalized(),
            g => g,
        }
    }

    /// (ln Tr_w P(w) exp(-chi_hat w^2/2 + h w), d/dh, d^2/dh^2).
    /// The first derivative is the single-site mean, the second the variance.
    pub fn log_partition(&self, chi_hat: f64, h: f64) -> Result<(f64, f64, f64)> {
        match *self {
            PriorModel::IsingPm1 { convention } => {
                // Tr_w e^{-chi_hat/2 + h w} = 2 e^{-chi_hat/2} cosh(h) (counting)
                let base = match convention {
                    MeasureConvention::Counting => std::f64::consts::LN_2,
                    MeasureConvention::Normalized => 0.0,
                };
                let a = h.abs();
                let ln_cosh = a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p();
                let m = h.tanh();
                let sech = 2.0 * (-a).exp() / (1.0 + (-2.0 * a).exp());
                Ok((base - 0.5 * chi_hat + ln_cosh, m, sech * sech))
            }
            PriorModel::GaussianUnit { variance } => {
                let a = 1.0 / variance + chi_hat;
                if a <= 0.0 {
                    return Err(Error::DivergentPartition(format!(
                        "gaussian prior with chi_hat = {chi_hat} <= -1/variance"
                    )));
                }
                let log_z = -0.5 * (variance * a).ln() + h * h / (2.0 * a);
                Ok((log_z, h / a, 1.0 / a))
            }
        }
    }

    /// T_w = Tr_w w^2 Q(w) of the normalized measure.
    pub fn second_moment(&self) -> f64 {
        match *self {
            PriorModel::IsingPm1 { .. } => 1.0,
            PriorModel::GaussianUnit { variance } => variance,
        }
    }

    /// Discretization of the normalized prior for teacher averages:
    /// (w0, probability weight) pairs.
    pub fn teacher_points(&self, rule: &StdNormalRule) -> Vec<(f64, f64)> {
        match *self {
            PriorModel::IsingPm1 { .. } => vec![(1.0, 0.5), (-1.0, 0.5)],
            PriorModel::GaussianUnit { variance } => {
                let s = variance.sqrt();
                rule.z
                    .iter()
                    .zip(&rule.w)
                    .map(|(&z, &w)| (s * z, w))
                    .collect()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PriorModel::IsingPm1 { .. } => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            PriorModel::GaussianUnit { variance } => {
                let z: f64 = StandardNormal.sample(rng);
                variance.sqrt() * z
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, PriorModel::IsingPm1 { .. })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelModel {
    /// P(y|Delta) = 1 if y*Delta > 0 else 0, y in {+1,-1}
    PerceptronStep,
    /// P(y|Delta) = N(y; Delta, variance)
    GaussianNoise { variance: f64 },
    /// Q(y|Delta) = 1/2 for y in {+1,-1}, independent of Delta
    RandomLabel,
}

impl ChannelModel {
    /// ln Integral Dx P(y | sqrt(chi_hat_u) x + h) with its first two
    /// h-derivatives.
    ///
    /// perceptron_step: ln H(-y h / sqrt(chi_hat_u)); at chi_hat_u = 0 with
    /// y h <= 0 the result is the -inf sentinel (flagged to the caller by
    /// value, not by error).
    pub fn log_evidence(&self, chi_hat_u: f64, h: f64, y: f64) -> Result<(f64, f64, f64)> {
        if chi_hat_u < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "chi_hat_u = {chi_hat_u} must be non-negative"
            )));
        }
        match *self {
            ChannelModel::PerceptronStep => {
                if chi_hat_u == 0.0 {
                    return Ok(if y * h > 0.0 {
                        (0.0, 0.0, 0.0)
                    } else {
                        (f64::NEG_INFINITY, 0.0, 0.0)
                    });
                }
                let sq = chi_hat_u.sqrt();
                let t = -y * h / sq;
                let r = mills_ratio(t);
                let l1 = y * r / sq;
                let l2 = -r * (r - t) / chi_hat_u;
                Ok((ln_h(t), l1, l2))
            }
            ChannelModel::GaussianNoise { variance } => {
                let v = variance + chi_hat_u;
                let d = y - h;
                Ok((
                    -0.5 * (2.0 * std::f64::consts::PI * v).ln() - d * d / (2.0 * v),
                    d / v,
                    -1.0 / v,
                ))
            }
            ChannelModel::RandomLabel => Ok((-std::f64::consts::LN_2, 0.0, 0.0)),
        }
    }

    /// ln Integral Dx Q(y | sqrt(s2) x + mean): the channel smeared by a
    /// Gaussian of variance s2 (generative-side measure).
    pub fn smeared_log_density(&self, s2: f64, mean: f64, y: f64) -> f64 {
        match *self {
            ChannelModel::PerceptronStep => {
                if s2 <= 0.0 {
                    if y * mean > 0.0 {
                        0.0
                    } else {
                        f64::NEG_INFINITY
                    }
                } else {
                    ln_h(-y * mean / s2.sqrt())
                }
            }
            ChannelModel::GaussianNoise { variance } => {
                let v = variance + s2;
                let d = y - mean;
                -0.5 * (2.0 * std::f64::consts::PI * v).ln() - d * d / (2.0 * v)
            }
            ChannelModel::RandomLabel => -std::f64::consts::LN_2,
        }
    }

    /// d/d(mean) of the smeared density (not its log); used for the
    /// teacher-student overlap integrals.
    pub fn smeared_density_dmean(&self, s2: f64, mean: f64, y: f64) -> f64 {
        match *self {
            ChannelModel::PerceptronStep => {
                let s = s2.sqrt();
                let t = mean / s;
                (y / s) * (-0.5 * t * t - LN_SQRT_2PI).exp()
            }
            ChannelModel::GaussianNoise { variance } => {
                let v = variance + s2;
                let d = y - mean;
                let dens = (-d * d / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
                dens * d / v
            }
            ChannelModel::RandomLabel => 0.0,
        }
    }

    /// Output alphabet is {+1,-1}.
    pub fn is_discrete(&self) -> bool {
        matches!(
            self,
            ChannelModel::PerceptronStep | ChannelModel::RandomLabel
        )
    }

    pub fn sample_y<R: Rng + ?Sized>(&self, delta: f64, rng: &mut R) -> f64 {
        match *self {
            ChannelModel::PerceptronStep => {
                if delta > 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
            ChannelModel::GaussianNoise { variance } => {
                let z: f64 = StandardNormal.sample(rng);
                delta + variance.sqrt() * z
            }
            ChannelModel::RandomLabel => {
                if rng.gen::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// A prior/channel pair; the generative (Q) and recognition (P) sides of a
/// run are each one of these.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelPair {
    pub prior: PriorModel,
    pub channel: ChannelModel,
}

impl ModelPair {
    pub fn new(prior: PriorModel, channel: ChannelModel) -> Self {
        ModelPair { prior, channel }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::StdNormalRule;

    #[test]
    fn ising_symmetry_point() {
        let p = PriorModel::ising();
        let (_, m, v) = p.log_partition(0.7, 0.0).unwrap();
        assert_eq!(m, 0.0);
        assert!((v - 1.0).abs() < 1e-15);
    }

    #[test]
    fn ising_mean_is_tanh() {
        let p = PriorModel::ising();
        let (_, m, _) = p.log_partition(0.0, 1.2).unwrap();
        assert!((m - 0.8336546070121552).abs() < 1e-15);
    }

    #[test]
    fn gaussian_prior_closed_form() {
        let p = PriorModel::gaussian(1.0);
        let (_, m, v) = p.log_partition(1.0, 1.0).unwrap();
        assert!((m - 0.5).abs() < 1e-15);
        assert!((v - 0.5).abs() < 1e-15);
        assert!(p.log_partition(-2.0, 0.0).is_err());
    }

    #[test]
    fn second_moments() {
        assert_eq!(PriorModel::ising().second_moment(), 1.0);
        assert_eq!(PriorModel::gaussian(1.0).second_moment(), 1.0);
        assert_eq!(PriorModel::gaussian(2.5).second_moment(), 2.5);
    }

    #[test]
    fn step_channel_first_derivative_at_origin() {
        let c = ChannelModel::PerceptronStep;
        let (_, l1, _) = c.log_evidence(1.0, 0.0, 1.0).unwrap();
        // phi(0)/H(0) = 0.3989.../0.5
        assert!((l1 - 0.7978845608028654).abs() < 1e-12);
    }

    #[test]
    fn step_channel_tail_value() {
        let c = ChannelModel::PerceptronStep;
        let (l, _, _) = c.log_evidence(1.0, 3.0, 1.0).unwrap();
        // ln H(-3), frozen from a high-precision reference
        assert!((l - (-0.0013508099647481938)).abs() < 1e-12);
    }

    #[test]
    fn step_channel_zero_smear_sentinel() {
        let c = ChannelModel::PerceptronStep;
        let (l, _, _) = c.log_evidence(0.0, 1.0, 1.0).unwrap();
        assert_eq!(l, 0.0);
        let (l, _, _) = c.log_evidence(0.0, -1.0, 1.0).unwrap();
        assert!(l == f64::NEG_INFINITY);
    }

    #[test]
    fn ln_h_reference_values() {
        // frozen from a 30-digit erfc reference
        assert!((ln_h(3.0) - (-6.6077262215103495)).abs() < 1e-12);
        assert!((ln_h(8.0) - (-35.013437159914550)).abs() < 1e-10);
        assert!((ln_h(26.0) - (-342.17850892992783)).abs() < 1e-9);
        assert!((ln_h(30.0) - (-454.32124395634320)).abs() < 1e-9);
        assert!((ln_h(37.0) - (-689.03058557689059)).abs() < 1e-9);
        assert!((mills_ratio(8.0) - 8.1213681122361127).abs() < 1e-10);
        assert!((mills_ratio(-8.0) - 5.0522710835368954e-15).abs() < 1e-26);
    }

    #[test]
    fn ln_h_tail_finite_and_monotone() {
        // |t| = 8 and far beyond stays finite and decreasing
        let mut prev = ln_h(-8.0);
        for i in 1..200 {
            let t = -8.0 + 16.0 * (i as f64) / 100.0;
            let v = ln_h(t);
            assert!(v.is_finite());
            assert!(v < prev, "ln H must decrease, t={t}");
            prev = v;
        }
        assert!(ln_h(1e6).is_finite());
    }

    #[test]
    fn channel_normalization() {
        // step: sum over y = +-1 of exp(logL) = 1 exactly
        let c = ChannelModel::PerceptronStep;
        for &h in &[-2.0, 0.0, 1.3] {
            let (lp, _, _) = c.log_evidence(0.7, h, 1.0).unwrap();
            let (lm, _, _) = c.log_evidence(0.7, h, -1.0).unwrap();
            assert!((lp.exp() + lm.exp() - 1.0).abs() < 1e-14);
        }
        // gaussian: integral over y of exp(logL) = 1 by quadrature
        let c = ChannelModel::GaussianNoise { variance: 1.0 };
        let rule = StdNormalRule::new(96);
        let v_tot: f64 = 1.0 + 0.5; // chi_hat_u + sigma^2
        let h = 0.3;
        let int = rule.expect(|z| {
            // y = h + sqrt(v_tot) z parameterizes the Gaussian; weight cancels density
            let y = h + v_tot.sqrt() * z;
            let (l, _, _) = c.log_evidence(0.5, h, y).unwrap();
            l.exp() / ((-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI * v_tot).sqrt())
        });
        assert!((int - 1.0).abs() < 1e-8);
    }

    #[test]
    fn gaussian_channel_log_evidence() {
        let c = ChannelModel::GaussianNoise { variance: 1.0 };
        let (l, l1, _) = c.log_evidence(1.0, 0.0, 0.0).unwrap();
        // centered Gaussian of variance 2: logL = -ln(4 pi)/2
        assert!((l - (-0.5 * (4.0 * std::f64::consts::PI).ln())).abs() < 1e-14);
        assert_eq!(l1, 0.0);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        // first differences with a small step, second with a larger one
        // (roundoff in the second difference scales as eps/e^2)
        let e = 1e-6;
        let e2 = 1e-4;
        let cases: Vec<(ChannelModel, f64, f64, f64)> = vec![
            (ChannelModel::PerceptronStep, 0.8, 0.4, 1.0),
            (ChannelModel::PerceptronStep, 0.8, -2.0, -1.0),
            (ChannelModel::GaussianNoise { variance: 0.5 }, 1.2, 0.7, 0.2),
        ];
        for (c, chi, h, y) in cases {
            let (l0, l1, l2) = c.log_evidence(chi, h, y).unwrap();
            let lp = c.log_evidence(chi, h + e, y).unwrap().0;
            let lm = c.log_evidence(chi, h - e, y).unwrap().0;
            assert!((l1 - (lp - lm) / (2.0 * e)).abs() < 1e-7);
            let lp2 = c.log_evidence(chi, h + e2, y).unwrap().0;
            let lm2 = c.log_evidence(chi, h - e2, y).unwrap().0;
            assert!((l2 - (lp2 - 2.0 * l0 + lm2) / (e2 * e2)).abs() < 1e-6);
        }
        // prior side
        let cases: Vec<(PriorModel, f64, f64)> = vec![
            (PriorModel::ising(), 0.3, 0.9),
            (PriorModel::gaussian(1.5), 0.7, -0.4),
        ];
        for (p, chi, h) in cases {
            let (l0, m, v) = p.log_partition(chi, h).unwrap();
            let lp = p.log_partition(chi, h + e).unwrap().0;
            let lm = p.log_partition(chi, h - e).unwrap().0;
            assert!((m - (lp - lm) / (2.0 * e)).abs() < 1e-7);
            let lp2 = p.log_partition(chi, h + e2).unwrap().0;
            let lm2 = p.log_partition(chi, h - e2).unwrap().0;
            assert!((v - (lp2 - 2.0 * l0 + lm2) / (e2 * e2)).abs() < 1e-6);
        }
    }
}
