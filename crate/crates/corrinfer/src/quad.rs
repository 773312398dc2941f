//! Gaussian quadrature rules via the Golub-Welsch eigenvalue method.

use nalgebra::DMatrix;
use std::sync::OnceLock;

/// Nodes and weights of a Gaussian quadrature rule, nodes ascending.
#[derive(Debug, Clone)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub-Welsch: eigen-decompose the symmetric tridiagonal Jacobi matrix with
/// zero diagonal and off-diagonal `offdiag`; weights are mu0 * (first eigenvector
/// component)^2.
fn golub_welsch(offdiag: &[f64], mu0: f64) -> QuadRule {
    let n = offdiag.len() + 1;
    let mut m = DMatrix::<f64>::zeros(n, n);
    for (k, &b) in offdiag.iter().enumerate() {
        m[(k, k + 1)] = b;
        m[(k + 1, k)] = b;
    }
    let eig = m.symmetric_eigen();
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], mu0 * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    QuadRule {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// Gauss-Hermite rule for integrals of e^(-t^2) f(t) over the real line.
pub fn gauss_hermite(n: usize) -> QuadRule {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n).map(|k| (k as f64 / 2.0).sqrt()).collect();
    golub_welsch(&offdiag, std::f64::consts::PI.sqrt())
}

/// Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> QuadRule {
    assert!(n >= 1);
    let offdiag: Vec<f64> = (1..n)
        .map(|k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        })
        .collect();
    golub_welsch(&offdiag, 2.0)
}

/// Expectation over z ~ N(0,1) via a Gauss-Hermite rule.
#[derive(Debug, Clone)]
pub struct StdNormalRule {
    /// z-nodes (already scaled by sqrt(2))
    pub z: Vec<f64>,
    /// probabilist weights, summing to 1
    pub w: Vec<f64>,
}

impl StdNormalRule {
    pub fn new(n: usize) -> Self {
        let gh = gauss_hermite(n);
        let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
        StdNormalRule {
            z: gh.nodes.iter().map(|t| t * std::f64::consts::SQRT_2).collect(),
            w: gh.weights.iter().map(|w| w * inv_sqrt_pi).collect(),
        }
    }

    pub fn expect(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.z
            .iter()
            .zip(&self.w)
            .map(|(&z, &w)| w * f(z))
            .sum()
    }
}

/// Shared 96-node rule; the replica module evaluates all Dz integrals with it.
pub fn std_normal_96() -> &'static StdNormalRule {
    static RULE: OnceLock<StdNormalRule> = OnceLock::new();
    RULE.get_or_init(|| StdNormalRule::new(96))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hermite_moments() {
        let r = StdNormalRule::new(96);
        let m0 = r.expect(|_| 1.0);
        let m2 = r.expect(|z| z * z);
        let m4 = r.expect(|z| z.powi(4));
        assert!((m0 - 1.0).abs() < 1e-13);
        assert!((m2 - 1.0).abs() < 1e-13);
        assert!((m4 - 3.0).abs() < 1e-12);
    }

    #[test]
    fn hermite_gaussian_expectation() {
        // E[cosh(z)] = e^{1/2}
        let r = StdNormalRule::new(96);
        let v = r.expect(|z| z.cosh());
        assert!((v - (0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn legendre_polynomials_exact() {
        let r = gauss_legendre(16);
        let int = |p: &dyn Fn(f64) -> f64| -> f64 {
            r.nodes.iter().zip(&r.weights).map(|(&x, &w)| w * p(x)).sum()
        };
        assert!((int(&|_| 1.0) - 2.0).abs() < 1e-14);
        assert!((int(&|x| x * x) - 2.0 / 3.0).abs() < 1e-14);
        assert!(int(&|x| x.powi(7)).abs() < 1e-14);
        assert!((int(&|x| x.powi(8)) - 2.0 / 9.0).abs() < 1e-13);
    }
}
