//! Asymptotic eigenvalue spectra of the cross-correlation matrix X^T X.
//!
//! A spectrum is a probability measure on [0, inf) stored as point masses plus
//! a pre-quadratured continuous part, so every downstream consumer works with
//! one discrete node set.

use crate::error::{Error, Result};
use crate::quad::gauss_legendre;
use serde::{Deserialize, Serialize};

pub const NORMALIZATION_TOL: f64 = 1e-12;
/// Default node count for continuous densities (validated by the
/// refinement-stability test below).
pub const DEFAULT_DENSITY_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpectrumLabel {
    MarchenkoPastur,
    RandomOrthogonal,
    SingleAtom,
    Empirical,
}

/// Eigenvalue distribution rho(lambda) of X^T X together with the pattern
/// ratio alpha = p/N. Immutable after construction.
#[derive(Debug, Clone, Serialize)]
pub struct SpectrumModel {
    pub label: SpectrumLabel,
    pub alpha: f64,
    /// discrete point masses (location, weight)
    pub atoms: Vec<(f64, f64)>,
    /// quadrature nodes of the continuous part (location, weight)
    pub nodes: Vec<(f64, f64)>,
}

impl<'de> Deserialize<'de> for SpectrumModel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            label: SpectrumLabel,
            alpha: f64,
            atoms: Vec<(f64, f64)>,
            nodes: Vec<(f64, f64)>,
        }
        let raw = Raw::deserialize(d)?;
        let spec = SpectrumModel {
            label: raw.label,
            alpha: raw.alpha,
            atoms: raw.atoms,
            nodes: raw.nodes,
        };
        spec.validate().map_err(serde::de::Error::custom)?;
        Ok(spec)
    }
}

impl SpectrumModel {
    fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        let mut mass = 0.0;
        for &(loc, w) in self.atoms.iter().chain(&self.nodes) {
            if loc < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "negative support location {loc}"
                )));
            }
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad weight {w}")));
            }
            mass += w;
        }
        if (mass - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(mass));
        }
        Ok(())
    }

    /// Marchenko-Pastur spectrum for IID entries of variance 1/N.
    ///
    /// The continuous density (2 pi)^-1 lambda^-1 sqrt([l-l-]+ [l+-l]+) is
    /// quadratured with Gauss-Legendre in the arccos-transformed variable
    /// lambda = l- + 2h cos^2(theta/2), which absorbs both square-root edges
    /// and keeps the normalization exact to machine precision.
    pub fn marchenko_pastur(alpha: f64, n_nodes: usize) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if n_nodes < 200 {
            return Err(Error::InvalidParameter(
                "marchenko_pastur requires at least 200 quadrature nodes".into(),
            ));
        }
        let sqrt_a = alpha.sqrt();
        let lam_minus = (sqrt_a - 1.0).powi(2);
        let h = 2.0 * sqrt_a; // (l+ - l-)/2
        let gl = gauss_legendre(n_nodes);
        let mut nodes = Vec::with_capacity(n_nodes);
        for (&t, &w) in gl.nodes.iter().zip(&gl.weights) {
            // theta in (0, pi), weight scaled by pi/2
            let theta = (t + 1.0) * std::f64::consts::FRAC_PI_2;
            let wt = w * std::f64::consts::FRAC_PI_2;
            let c = (theta / 2.0).cos();
            let lam = lam_minus + 2.0 * h * c * c;
            let s = theta.sin();
            let psi = h * h / (2.0 * std::f64::consts::PI) * wt * s * s / lam;
            nodes.push((lam, psi));
        }
        nodes.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut atoms = Vec::new();
        if alpha < 1.0 {
            atoms.push((0.0, 1.0 - alpha));
        }
        let spec = SpectrumModel {
            label: SpectrumLabel::MarchenkoPastur,
            alpha,
            atoms,
            nodes,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two-atom spectrum of random orthogonal patterns: (1-alpha) delta(l) + alpha delta(l-1).
    pub fn random_orthogonal(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidParameter(
                "random_orthogonal requires 0 < alpha < 1".into(),
            ));
        }
        Ok(SpectrumModel {
            label: SpectrumLabel::RandomOrthogonal,
            alpha,
            atoms: vec![(0.0, 1.0 - alpha), (1.0, alpha)],
            nodes: Vec::new(),
        })
    }

    /// Degenerate spectrum with all mass at one location.
    pub fn single_atom(alpha: f64, location: f64) -> Result<Self> {
        if !(alpha > 0.0) {
            return Err(Error::InvalidParameter("alpha must be positive".into()));
        }
        if location < 0.0 {
            return Err(Error::InvalidParameter(
                "atom location must be non-negative".into(),
            ));
        }
        Ok(SpectrumModel {
            label: SpectrumLabel::SingleAtom,
            alpha,
            atoms: vec![(location, 1.0)],
            nodes: Vec::new(),
        })
    }

    /// Empirical spectrum from the eigenvalues of an actual X^T X.
    ///
    /// Eigenvalues within 1e-10 of zero are merged into the zero atom so a
    /// numerically rank-deficient matrix reproduces the exact (1-alpha) delta
    /// weight; equal eigenvalues share one atom.
    pub fn empirical(eigenvalues: &[f64], n: usize, alpha: f64) -> Result<Self> {
        if eigenvalues.len() > n {
            return Err(Error::InvalidParameter(format!(
                "{} eigenvalues exceed N = {n}",
                eigenvalues.len()
            )));
        }
        let mut sorted: Vec<f64> = Vec::with_capacity(eigenvalues.len());
        let mut zero_count = n - eigenvalues.len();
        for &ev in eigenvalues {
            if ev < -1e-10 {
                return Err(Error::InvalidParameter(format!(
                    "negative eigenvalue {ev} beyond tolerance"
                )));
            }
            if ev.abs() <= 1e-10 {
                zero_count += 1;
            } else {
                sorted.push(ev);
            }
        }
        sorted.sort_by(|a, b| a.total_cmp(b));
        let unit = 1.0 / n as f64;
        let mut atoms: Vec<(f64, f64)> = Vec::new();
        if zero_count > 0 {
            atoms.push((0.0, zero_count as f64 * unit));
        }
        for ev in sorted {
            match atoms.last_mut() {
                Some(last) if last.0 == ev => last.1 += unit,
                _ => atoms.push((ev, unit)),
            }
        }
        if atoms.is_empty() {
            atoms.push((0.0, 1.0));
        }
        let spec = SpectrumModel {
            label: SpectrumLabel::Empirical,
            alpha,
            atoms,
            nodes: Vec::new(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Expectation of f over the spectrum; errors when f is non-finite at a
    /// support point (callers exclude the zero atom themselves when f
    /// diverges there).
    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> Result<f64> {
        let mut acc = 0.0;
        for &(loc, w) in self.atoms.iter().chain(&self.nodes) {
            let v = f(loc);
            if !v.is_finite() {
                return Err(Error::NonFiniteAtSupport(loc));
            }
            acc += w * v;
        }
        Ok(acc)
    }

    /// <lambda>
    pub fn mean(&self) -> f64 {
        self.atoms
            .iter()
            .chain(&self.nodes)
            .map(|&(l, w)| w * l)
            .sum()
    }

    /// <lambda^2>
    pub fn second_moment(&self) -> f64 {
        self.atoms
            .iter()
            .chain(&self.nodes)
            .map(|&(l, w)| w * l * l)
            .sum()
    }

    /// Weight of the atom at lambda = 0.
    pub fn zero_atom_weight(&self) -> f64 {
        self.atoms
            .iter()
            .filter(|&&(l, _)| l == 0.0)
            .map(|&(_, w)| w)
            .sum()
    }

    /// Strictly positive support as (location, weight) pairs, ascending.
    pub fn positive_support(&self) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = self
            .atoms
            .iter()
            .chain(&self.nodes)
            .filter(|&&(l, _)| l > 0.0)
            .copied()
            .collect();
        out.sort_by(|a, b| a.0.total_cmp(&b.0));
        out
    }

    pub fn max_support(&self) -> f64 {
        self.atoms
            .iter()
            .chain(&self.nodes)
            .map(|&(l, _)| l)
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Constructor dispatch for CLI/config use. Recognized params:
/// `nodes` (marchenko_pastur), `location` (single_atom).
pub fn make_spectrum(kind: &str, alpha: f64, params: &[(String, f64)]) -> Result<SpectrumModel> {
    let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|&(_, v)| v);
    match kind {
        "marchenko_pastur" => {
            let n = get("nodes").map(|v| v as usize).unwrap_or(DEFAULT_DENSITY_NODES);
            SpectrumModel::marchenko_pastur(alpha, n)
        }
        "random_orthogonal" => SpectrumModel::random_orthogonal(alpha),
        "single_atom" => SpectrumModel::single_atom(alpha, get("location").unwrap_or(1.0)),
        other => Err(Error::UnknownSpectrumKind(other.into())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_atoms() {
        let s = SpectrumModel::random_orthogonal(0.3).unwrap();
        assert_eq!(s.atoms, vec![(0.0, 0.7), (1.0, 0.3)]);
        assert!((s.mean() - 0.3).abs() < 1e-15);
        // two-atom sum: <ln(1+lambda)> = 0.3 ln 2
        let v = s.expect(|l| (1.0 + l).ln()).unwrap();
        assert!((v - 0.3 * std::f64::consts::LN_2).abs() < 1e-15);
        // <ln(1+lambda)> = 0.4 ln 2 at alpha = 0.4
        let s = SpectrumModel::random_orthogonal(0.4).unwrap();
        let v = s.expect(|l| (1.0 + l).ln()).unwrap();
        assert!((v - 0.2772588722239781).abs() < 1e-12);
    }

    #[test]
    fn orthogonal_rejects_alpha_ge_one() {
        assert!(SpectrumModel::random_orthogonal(1.0).is_err());
        assert!(SpectrumModel::random_orthogonal(1.5).is_err());
    }

    #[test]
    fn mp_normalization_and_mean() {
        for &alpha in &[0.25, 0.5, 1.0, 2.0] {
            let s = SpectrumModel::marchenko_pastur(alpha, 256).unwrap();
            let mass = s.expect(|_| 1.0).unwrap();
            assert!((mass - 1.0).abs() < 1e-12, "mass off at alpha={alpha}");
            assert!((s.mean() - alpha).abs() < 1e-8, "mean off at alpha={alpha}");
        }
    }

    #[test]
    fn mp_support_bounds() {
        let alpha = 0.5;
        let s = SpectrumModel::marchenko_pastur(alpha, 256).unwrap();
        let lo = (alpha.sqrt() - 1.0).powi(2);
        let hi = (alpha.sqrt() + 1.0).powi(2);
        for &(l, _) in &s.nodes {
            assert!(l >= lo - 1e-12 && l <= hi + 1e-12);
        }
        assert!((s.zero_atom_weight() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mp_refinement_stability() {
        // doubling the node count changes <ln(1+lambda)> by < 1e-8
        for &alpha in &[0.5, 1.0, 2.0] {
            let a = SpectrumModel::marchenko_pastur(alpha, 256).unwrap();
            let b = SpectrumModel::marchenko_pastur(alpha, 512).unwrap();
            let va = a.expect(|l| (1.0 + l).ln()).unwrap();
            let vb = b.expect(|l| (1.0 + l).ln()).unwrap();
            assert!((va - vb).abs() < 1e-8);
        }
    }

    #[test]
    fn single_atom_degenerate() {
        let s = SpectrumModel::single_atom(1.0, 1.0).unwrap();
        assert_eq!(s.atoms, vec![(1.0, 1.0)]);
        assert!((s.expect(|l| l).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_counts() {
        let s = SpectrumModel::empirical(&[1.0, 1.0], 4, 0.5).unwrap();
        assert_eq!(s.atoms, vec![(0.0, 0.5), (1.0, 0.5)]);
        // empty list
        let s = SpectrumModel::empirical(&[], 3, 0.1).unwrap();
        assert_eq!(s.atoms, vec![(0.0, 1.0)]);
        // near-zero merged into the zero atom
        let s = SpectrumModel::empirical(&[5e-11, 2.0], 2, 1.0).unwrap();
        assert_eq!(s.atoms.len(), 2);
        assert_eq!(s.atoms[0], (0.0, 0.5));
        // negative beyond tolerance rejected
        assert!(SpectrumModel::empirical(&[-1e-9], 2, 1.0).is_err());
    }

    #[test]
    fn expect_rejects_nonfinite() {
        let s = SpectrumModel::random_orthogonal(0.5).unwrap();
        assert!(s.expect(|l| l.ln()).is_err()); // ln(0) at the zero atom
    }

    #[test]
    fn json_round_trip() {
        let s = SpectrumModel::marchenko_pastur(0.5, 256).unwrap();
        let j = s.to_json().unwrap();
        let s2 = SpectrumModel::from_json(&j).unwrap();
        assert_eq!(s.atoms, s2.atoms);
        assert_eq!(s.nodes, s2.nodes);
        assert_eq!(s.label, s2.label);
    }

    #[test]
    fn make_spectrum_dispatch() {
        assert!(make_spectrum("marchenko_pastur", 0.5, &[]).is_ok());
        assert!(make_spectrum("random_orthogonal", 0.3, &[]).is_ok());
        assert!(make_spectrum("single_atom", 1.0, &[("location".into(), 2.0)]).is_ok());
        assert!(make_spectrum("bogus", 0.5, &[]).is_err());
        assert!(make_spectrum("random_orthogonal", 1.2, &[]).is_err());
    }
}
