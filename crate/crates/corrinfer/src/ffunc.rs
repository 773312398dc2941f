//! The spectrum-dependent F-function and G-function.
//!
//! F(x,y) is the stationary value over (Lambda_x, Lambda_y) of
//!
//!   -1/2 <ln(Lx Ly + lambda)> - (alpha-1)/2 ln Ly + Lx x/2 + alpha Ly y/2
//!
//! minus 1/2 ln x + alpha/2 ln y + (1+alpha)/2, on the branch continuously
//! connected to the x,y -> 0+ limit where F -> 0.
//!
//! The two saddle equations collapse to one scalar equation in u = Lx*Ly.
//! With w0 the zero-atom weight, c0 = w0 + alpha - 1, and m_r(u) the
//! resolvent sum over the strictly positive support,
//!
//!   psi(u) = w0*c0/u + u*m_r(u)^2 + (w0+c0)*m_r(u) = alpha*x*y,
//!
//! and the saddle is recovered from M(u) = w0 + u*m_r(u) as Lx = M/x,
//! Ly = x*u/M. The zero-atom and (alpha-1) log terms are combined before
//! evaluation, which keeps the branch real through Ly or Lx sign changes
//! (the combined coefficients vanish exactly when w0 = [1-alpha]+).
//! The physical branch is the largest real root of psi; where it ceases to
//! exist (fold, or saddle colliding with the support edge) the evaluation
//! reports a domain error rather than jumping branches.

use crate::error::{Error, Result};
use crate::spectrum::SpectrumModel;
use serde::Serialize;

/// F(x,y) at a point: stationary value, saddle multipliers, first and second
/// partial derivatives.
#[derive(Debug, Clone, Serialize)]
pub struct FEvaluation {
    pub x: f64,
    pub y: f64,
    pub value: f64,
    pub lambda_x: f64,
    pub lambda_y: f64,
    pub df_dx: f64,
    pub df_dy: f64,
    pub d2f_dx2: f64,
    pub d2f_dxdy: f64,
    pub d2f_dy2: f64,
}

struct Support {
    alpha: f64,
    w0: f64,
    c0: f64,
    lam: Vec<f64>,
    wts: Vec<f64>,
    /// (smallest quadrature node, gap to the next) when the spectrum has a
    /// pre-quadratured continuous part; saddles inside one node-gap of that
    /// edge are resolution artifacts. Atoms are genuine poles and need no
    /// guard.
    node_edge: Option<(f64, f64)>,
}

impl Support {
    fn new(spec: &SpectrumModel) -> Result<Self> {
        let alpha = spec.alpha;
        let w0 = spec.zero_atom_weight();
        let mut c0 = w0 + alpha - 1.0;
        if c0 < -1e-9 {
            return Err(Error::InvalidParameter(format!(
                "zero-atom weight {w0} inconsistent with alpha {alpha} (needs w0 >= 1 - alpha)"
            )));
        }
        if c0.abs() < 1e-12 {
            c0 = 0.0;
        }
        let pos = spec.positive_support();
        let mut node_locs: Vec<f64> = spec.nodes.iter().map(|n| n.0).collect();
        node_locs.sort_by(|a, b| a.total_cmp(b));
        let node_edge = if node_locs.len() >= 2 {
            Some((node_locs[0], node_locs[1] - node_locs[0]))
        } else {
            None
        };
        Ok(Support {
            alpha,
            w0,
            c0,
            lam: pos.iter().map(|p| p.0).collect(),
            wts: pos.iter().map(|p| p.1).collect(),
            node_edge,
        })
    }

    fn resolvent(&self, u: f64) -> f64 {
        self.lam
            .iter()
            .zip(&self.wts)
            .map(|(&l, &w)| w / (u + l))
            .sum()
    }

    fn resolvent_prime(&self, u: f64) -> f64 {
        -self
            .lam
            .iter()
            .zip(&self.wts)
            .map(|(&l, &w)| w / ((u + l) * (u + l)))
            .sum::<f64>()
    }

    fn psi(&self, u: f64, target: f64) -> f64 {
        let m = self.resolvent(u);
        let mut v = u * m * m + (self.w0 + self.c0) * m - target;
        if self.w0 * self.c0 != 0.0 {
            v += self.w0 * self.c0 / u;
        }
        v
    }

    fn psi_prime(&self, u: f64) -> f64 {
        let m = self.resolvent(u);
        let mp = self.resolvent_prime(u);
        let mut v = m * m + 2.0 * u * m * mp + (self.w0 + self.c0) * mp;
        if self.w0 * self.c0 != 0.0 {
            v -= self.w0 * self.c0 / (u * u);
        }
        v
    }

    /// Lower end of the admissible u range (exclusive).
    fn u_floor(&self) -> f64 {
        let lam_min = self.lam.first().copied().unwrap_or(f64::INFINITY);
        if self.w0 * self.c0 != 0.0 {
            // branch confined to u > 0 by the w0*c0/u pole
            0.0
        } else if lam_min.is_finite() {
            -lam_min
        } else {
            0.0
        }
    }

    /// Solve psi(u) = target for the largest root (the branch connected to
    /// u -> +infinity as x*y -> 0).
    fn solve_u(&self, target: f64) -> Result<f64> {
        let lam_max = self.lam.last().copied().unwrap_or(0.0);
        let floor = self.u_floor();
        let mut hi = 10.0 * (self.alpha / target).max(lam_max).max(1.0);
        while self.psi(hi, target) >= 0.0 {
            hi *= 4.0;
            if hi > 1e300 {
                return Err(Error::SaddleNotConverged {
                    context: "no starting point with psi < 0".into(),
                    residual: f64::NAN,
                });
            }
        }
        // geometric walk toward the floor until psi changes sign
        let mut lo = hi;
        let mut found = false;
        loop {
            let next = floor + (lo - floor) * 0.5;
            if next - floor <= 1e-14 * (1.0 + floor.abs()) {
                break;
            }
            if self.psi(next, target) >= 0.0 {
                hi = lo;
                lo = next;
                found = true;
                break;
            }
            lo = next;
        }
        if !found {
            return Err(Error::DomainViolation(format!(
                "no real saddle: alpha*x*y = {target:.6} exceeds the branch fold"
            )));
        }
        // bisection: keep psi(lo) >= 0 > psi(hi)
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid == lo || mid == hi {
                break;
            }
            if self.psi(mid, target) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut u = 0.5 * (lo + hi);
        // Newton polish
        for _ in 0..8 {
            let f = self.psi(u, target);
            let fp = self.psi_prime(u);
            if fp == 0.0 {
                break;
            }
            let step = f / fp;
            let un = u - step;
            if un <= floor || un >= 2.0 * hi.max(1.0) + 1.0 {
                break;
            }
            u = un;
            if step.abs() < 1e-16 * (1.0 + u.abs()) {
                break;
            }
        }
        // reject saddles pinned at the discretized support edge: the
        // continuum saddle has left the real domain and the root is a
        // quadrature artifact
        if let Some((edge, gap)) = self.node_edge {
            if gap > 0.0 && u + edge < gap {
                return Err(Error::DomainViolation(
                    "saddle collides with the discretized spectrum edge".into(),
                ));
            }
        }
        Ok(u)
    }

    /// Track the root of psi(u) = target locally from a previous saddle
    /// coordinate (safeguarded Newton). Returns None when no nearby root is
    /// found, in which case the caller falls back to the cold solve.
    fn continue_u(&self, target: f64, u0: f64) -> Option<f64> {
        let floor = self.u_floor();
        if !(u0 > floor) {
            return None;
        }
        let mut u = u0;
        for _ in 0..200 {
            let f = self.psi(u, target);
            if f.abs() <= 1e-14 * (1.0 + target.abs()) {
                // same edge guard as the cold path
                if let Some((edge, gap)) = self.node_edge {
                    if gap > 0.0 && u + edge < gap {
                        return None;
                    }
                }
                return Some(u);
            }
            let fp = self.psi_prime(u);
            if fp == 0.0 || !fp.is_finite() {
                return None;
            }
            let mut step = -f / fp;
            // trust region: a capped step cannot skip across a fold to the
            // other branch
            let cap = 0.25 * (1.0 + u.abs());
            if step.abs() > cap {
                step = step.signum() * cap;
            }
            // keep the iterate inside the domain, damping toward the floor
            let mut un = u + step;
            let mut tries = 0;
            while un <= floor {
                step *= 0.5;
                un = u + step;
                tries += 1;
                if tries > 60 {
                    return None;
                }
            }
            if (un - u).abs() <= 1e-16 * (1.0 + u.abs()) {
                u = un;
                let f = self.psi(u, target);
                return if f.abs() <= 1e-11 * (1.0 + target.abs()) {
                    Some(u)
                } else {
                    None
                };
            }
            u = un;
        }
        None
    }
}

/// Evaluate F(x,y) with first and second derivatives, on the branch
/// connected to the small-xy limit.
pub fn evaluate_f(spec: &SpectrumModel, x: f64, y: f64) -> Result<FEvaluation> {
    evaluate_f_tracked(spec, x, y, None).map(|(fe, _)| fe)
}

/// Evaluate F(x,y) continuing the saddle from a previous scalar saddle
/// coordinate `u_prev` (returned as the second tuple element). Solvers that
/// sweep (x, y) carry this coordinate so the saddle is followed continuously
/// through folds where two real branches exchange; a cold call takes the
/// branch connected to x,y -> 0+.
pub fn evaluate_f_tracked(
    spec: &SpectrumModel,
    x: f64,
    y: f64,
    u_prev: Option<f64>,
) -> Result<(FEvaluation, f64)> {
    if !(x > 0.0) || !(y > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "evaluate_f requires x > 0 and y > 0, got ({x}, {y})"
        )));
    }
    let sup = Support::new(spec)?;
    let alpha = sup.alpha;
    let target = alpha * x * y;
    let u = match u_prev {
        None => sup.solve_u(target)?,
        Some(u0) => match sup.continue_u(target, u0) {
            Some(u) => u,
            None => {
                // cold fallback, accepted only when it lands near the
                // previous saddle (no silent branch jump)
                let u = sup.solve_u(target)?;
                if (u - u0).abs() > 0.5 * (u0.abs() + 1.0) {
                    return Err(Error::SaddleNotConverged {
                        context: format!("branch tracking lost at (x={x}, y={y})"),
                        residual: (u - u0).abs(),
                    });
                }
                u
            }
        },
    };

    let m = sup.resolvent(u);
    let big_m = sup.w0 + u * m;
    let lambda_x = big_m / x;
    let lambda_y = x * u / big_m;
    if sup.w0 > 0.0 && lambda_x <= 0.0 {
        return Err(Error::DomainViolation(
            "Lambda_x left the positive half-line with a zero atom present".into(),
        ));
    }
    if sup.c0 > 0.0 && lambda_y <= 0.0 {
        return Err(Error::DomainViolation(
            "Lambda_y left the positive half-line with alpha > 1".into(),
        ));
    }

    // stationary value with the zero-atom and (alpha-1) logs combined
    let mut value = lambda_x * x / 2.0 + alpha * lambda_y * y / 2.0;
    for (&l, &w) in sup.lam.iter().zip(&sup.wts) {
        let s = u + l;
        if s <= 0.0 {
            return Err(Error::DomainViolation(format!(
                "Lambda_x*Lambda_y + lambda = {s} <= 0 at lambda = {l}"
            )));
        }
        value -= 0.5 * w * s.ln();
    }
    if sup.w0 > 0.0 {
        value -= 0.5 * sup.w0 * lambda_x.ln();
    }
    if sup.c0 != 0.0 {
        value -= 0.5 * sup.c0 * lambda_y.ln();
    }
    value += -0.5 * x.ln() - 0.5 * alpha * y.ln() - 0.5 * (1.0 + alpha);

    let df_dx = 0.5 * lambda_x - 0.5 / x;
    let df_dy = 0.5 * alpha * lambda_y - 0.5 * alpha / y;

    // second derivatives by implicit differentiation of the saddle system
    let (mut j11, mut j12, mut j22) = (0.0, 0.0, 0.0);
    for (&l, &w) in sup.lam.iter().zip(&sup.wts) {
        let s = u + l;
        let s2 = s * s;
        j11 -= w * lambda_y * lambda_y / s2;
        j12 += w * l / s2;
        j22 -= w * lambda_x * lambda_x / s2;
    }
    if sup.w0 > 0.0 {
        j11 -= sup.w0 / (lambda_x * lambda_x);
    }
    if sup.c0 != 0.0 {
        j22 -= sup.c0 / (lambda_y * lambda_y);
    }
    let det = j11 * j22 - j12 * j12;
    let scale = j11.abs() * j22.abs() + j12 * j12;
    if !(det.abs() > 1e-10 * scale) {
        return Err(Error::SingularJacobian { x, y });
    }
    // J * dL/dx = (1, 0)^T ; J * dL/dy = (0, alpha)^T
    let dlx_dx = j22 / det;
    let dly_dx = -j12 / det;
    let dly_dy = alpha * j11 / det;
    let d2f_dx2 = 0.5 * dlx_dx + 0.5 / (x * x);
    let d2f_dxdy = 0.5 * alpha * (-j12 / det);
    let d2f_dy2 = 0.5 * alpha * dly_dy + 0.5 * alpha / (y * y);
    debug_assert!((d2f_dxdy - 0.5 * alpha * dly_dx).abs() <= 1e-8 * (1.0 + d2f_dxdy.abs()));

    Ok((
        FEvaluation {
            x,
            y,
            value,
            lambda_x,
            lambda_y,
            df_dx,
            df_dy,
            d2f_dx2,
            d2f_dxdy,
            d2f_dy2,
        },
        u,
    ))
}

/// Location of the saddle fold in the scalar coordinate u, when the spectrum
/// has one: the interior maximum of psi(u), where the two real saddle
/// branches merge. None when psi has no interior maximum (e.g. the
/// Marchenko-Pastur family, whose branch ends at the support edge instead).
pub fn fold_point(spec: &SpectrumModel) -> Option<f64> {
    let sup = Support::new(spec).ok()?;
    let floor = sup.u_floor();
    let scale = 1.0 + sup.lam.last().copied().unwrap_or(1.0);
    // bracket an interior sign change of psi'
    let mut grid = Vec::with_capacity(220);
    for k in 0..220 {
        let t = 10f64.powf(-8.0 + 12.0 * k as f64 / 219.0);
        grid.push(floor + t * scale);
    }
    let mut bracket = None;
    for w in grid.windows(2) {
        let (a, b) = (w[0], w[1]);
        if sup.psi_prime(a) > 0.0 && sup.psi_prime(b) <= 0.0 {
            bracket = Some((a, b));
            break;
        }
    }
    let (mut lo, mut hi) = bracket?;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if sup.psi_prime(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// The 2x2 symmetric matrix of second partials of F at (x, y).
pub fn second_derivatives(spec: &SpectrumModel, x: f64, y: f64) -> Result<[[f64; 2]; 2]> {
    let fe = evaluate_f(spec, x, y)?;
    Ok([
        [fe.d2f_dx2, fe.d2f_dxdy],
        [fe.d2f_dxdy, fe.d2f_dy2],
    ])
}

/// Residuals of the two saddle equations at an FEvaluation (diagnostic).
pub fn saddle_residuals(spec: &SpectrumModel, fe: &FEvaluation) -> Result<(f64, f64)> {
    let sup = Support::new(spec)?;
    let (lx, ly) = (fe.lambda_x, fe.lambda_y);
    let mut r1 = if sup.w0 > 0.0 { sup.w0 / lx } else { 0.0 };
    let mut r2 = if sup.c0 != 0.0 { sup.c0 / ly } else { 0.0 };
    for (&l, &w) in sup.lam.iter().zip(&sup.wts) {
        let s = lx * ly + l;
        r1 += w * ly / s;
        r2 += w * lx / s;
    }
    Ok((r1 - fe.x, r2 - sup.alpha * fe.y))
}

/// G(x) of the single-variable (Itzykson-Zuber) form with value, G', G'' and
/// the saddle Lambda.
#[derive(Debug, Clone, Serialize)]
pub struct GEvaluation {
    pub x: f64,
    pub value: f64,
    pub g_prime: f64,
    pub g_second: f64,
    pub lambda: f64,
}

/// Evaluate G(x) = Extr_L { -1/2 <ln(L - lambda)> + L x / 2 } - ln(x)/2 - 1/2.
///
/// Negative x is the Gaussian-channel use case (saddle below the support,
/// both logs of negative arguments combined into ln((L - lambda) x) > 0).
/// x must stay within the transform's domain; saddles pinned against the
/// discretized support edge are rejected.
pub fn evaluate_g(spec: &SpectrumModel, x: f64) -> Result<GEvaluation> {
    if x == 0.0 {
        return Ok(GEvaluation {
            x,
            value: 0.0,
            g_prime: 0.5 * spec.mean(),
            g_second: 0.25 * (spec.second_moment() - spec.mean() * spec.mean()) * 2.0,
            lambda: f64::INFINITY,
        });
    }
    let support: Vec<(f64, f64)> = spec
        .atoms
        .iter()
        .chain(&spec.nodes)
        .filter(|&&(_, w)| w > 0.0)
        .copied()
        .collect();
    let lam_min = support.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let lam_max = support.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let h = |lam: f64| -> f64 { support.iter().map(|&(l, w)| w / (lam - l)).sum() };
    let h_prime = |lam: f64| -> f64 {
        -support
            .iter()
            .map(|&(l, w)| w / ((lam - l) * (lam - l)))
            .sum::<f64>()
    };

    let span = (lam_max - lam_min).max(1.0);
    // bracket the saddle: h is decreasing on each side of the support
    let (mut lo, mut hi);
    if x > 0.0 {
        // Lambda in (lam_max, inf): h from +inf (or a finite edge value) to 0+
        let mut far = lam_max + span.max(1.0 / x);
        while h(far) > x {
            far = lam_max + (far - lam_max) * 4.0;
        }
        let mut near = lam_max + span * 1e-14;
        if h(near) < x {
            return Err(Error::DomainViolation(format!(
                "x = {x} exceeds the resolvent range above the support"
            )));
        }
        lo = near;
        hi = far;
        // enforce h(lo) >= x >= h(hi)
        while h(lo) < x {
            near = lam_max + (lo - lam_max) * 0.5;
            lo = near;
        }
    } else {
        // Lambda in (-inf, lam_min): h from 0- down to -inf (or a finite edge value)
        let mut far = lam_min - span.max(-1.0 / x);
        while h(far) < x {
            far = lam_min - (lam_min - far) * 4.0;
        }
        let near = lam_min - span * 1e-14;
        if h(near) > x {
            return Err(Error::DomainViolation(format!(
                "x = {x} exceeds the resolvent range below the support"
            )));
        }
        lo = far;
        hi = near;
    }
    // bisection on h(Lambda) - x (h decreasing)
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if h(mid) >= x {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..8 {
        let f = h(lambda) - x;
        let fp = h_prime(lambda);
        if fp == 0.0 {
            break;
        }
        let next = lambda - f / fp;
        if (x > 0.0 && next <= lam_max) || (x < 0.0 && next >= lam_min) {
            break;
        }
        lambda = next;
    }
    // edge-pinning guard against the quadrature nodes (atoms are genuine
    // poles and impose no resolution limit)
    let mut node_locs: Vec<f64> = spec.nodes.iter().map(|n| n.0).collect();
    node_locs.sort_by(|a, b| a.total_cmp(b));
    if node_locs.len() >= 2 {
        let n = node_locs.len();
        let (edge, gap, pinned) = if x > 0.0 {
            let e = node_locs[n - 1];
            (e, e - node_locs[n - 2], lambda > e)
        } else {
            let e = node_locs[0];
            (e, node_locs[1] - e, lambda < e)
        };
        if pinned && gap > 0.0 && (lambda - edge).abs() < gap {
            return Err(Error::DomainViolation(
                "G saddle collides with the discretized spectrum edge".into(),
            ));
        }
    }

    // value: -1/2 <ln((Lambda - lambda) x)> + Lambda x / 2 - 1/2
    let mut value = 0.0;
    for &(l, w) in &support {
        let arg = (lambda - l) * x;
        if arg <= 0.0 {
            return Err(Error::DomainViolation(format!(
                "(Lambda - lambda) x = {arg} <= 0 at lambda = {l}"
            )));
        }
        value -= 0.5 * w * arg.ln();
    }
    value += 0.5 * lambda * x - 0.5;
    let g_prime = 0.5 * lambda - 0.5 / x;
    let dlam_dx = 1.0 / h_prime(lambda);
    let g_second = 0.5 * dlam_dx + 0.5 / (x * x);
    Ok(GEvaluation {
        x,
        value,
        g_prime,
        g_second,
        lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectrum::SpectrumModel;

    // closed-form oracle for the single-atom spectrum at alpha = 1:
    // solve x y s^2 - s + 1 = 0 on the branch s = (1 + sqrt(1-4xy))/(2xy),
    // then F = -ln(s)/2 + 1 - 1/s - ln(x)/2 - ln(y)/2 - 1
    fn single_atom_oracle(x: f64, y: f64) -> f64 {
        let s = (1.0 + (1.0 - 4.0 * x * y).sqrt()) / (2.0 * x * y);
        -0.5 * s.ln() + 1.0 - 1.0 / s - 0.5 * x.ln() - 0.5 * y.ln() - 1.0
    }

    // closed-form oracle for the two-atom orthogonal spectrum:
    // x y t^2 - t + alpha = 0, t = (1 + sqrt(1-4 a x y))/(2xy),
    // Lx = y t, Ly = (t-1)/(y t)
    fn orthogonal_oracle(alpha: f64, x: f64, y: f64) -> f64 {
        let t = (1.0 + (1.0 - 4.0 * alpha * x * y).sqrt()) / (2.0 * x * y);
        let lx = y * t;
        let ly = (t - 1.0) / (y * t);
        -0.5 * ((1.0 - alpha) * (lx * ly).ln() + alpha * (lx * ly + 1.0).ln())
            - 0.5 * (alpha - 1.0) * ly.ln()
            + 0.5 * lx * x
            + 0.5 * alpha * ly * y
            - 0.5 * x.ln()
            - 0.5 * alpha * y.ln()
            - 0.5 * (1.0 + alpha)
    }

    #[test]
    fn single_atom_closed_form() {
        let spec = SpectrumModel::single_atom(1.0, 1.0).unwrap();
        let fe = evaluate_f(&spec, 0.4, 0.4).unwrap();
        // frozen from the quadratic oracle (s = 5)
        assert!((fe.value - (-0.0884282243428951)).abs() < 1e-12);
        assert!((fe.value - single_atom_oracle(0.4, 0.4)).abs() < 1e-12);
        assert!((fe.lambda_x * fe.lambda_y - 4.0).abs() < 1e-10);
    }

    #[test]
    fn orthogonal_closed_form() {
        let spec = SpectrumModel::random_orthogonal(0.5).unwrap();
        let fe = evaluate_f(&spec, 0.5, 0.5).unwrap();
        // frozen: t = 2 + sqrt(2), F = -0.0672730174965388
        assert!((fe.value - (-0.0672730174965388)).abs() < 1e-12);
        assert!((fe.value - orthogonal_oracle(0.5, 0.5, 0.5)).abs() < 1e-12);
        let t = fe.lambda_x * fe.lambda_y + 1.0;
        assert!((t - (2.0 + std::f64::consts::SQRT_2)).abs() < 1e-10);
        // saddle residuals
        let (r1, r2) = saddle_residuals(&spec, &fe).unwrap();
        assert!(r1.abs() < 1e-10 && r2.abs() < 1e-10);
    }

    #[test]
    fn orthogonal_oracle_grid() {
        for &alpha in &[0.2, 0.5, 0.8] {
            let spec = SpectrumModel::random_orthogonal(alpha).unwrap();
            for &(x, y) in &[(0.1, 0.1), (0.3, 0.6), (0.9, 0.2)] {
                if 4.0 * alpha * x * y >= 1.0 {
                    continue;
                }
                let fe = evaluate_f(&spec, x, y).unwrap();
                assert!(
                    (fe.value - orthogonal_oracle(alpha, x, y)).abs() < 1e-11,
                    "alpha={alpha} x={x} y={y}"
                );
            }
        }
    }

    #[test]
    fn mp_identity_interior() {
        // F = -(alpha/2) x y for the MP spectrum, on the real-saddle domain
        for &alpha in &[0.5, 1.0, 2.0] {
            let spec = SpectrumModel::marchenko_pastur(alpha, 256).unwrap();
            for &(x, y) in &[(0.1, 0.1), (0.1, 2.0), (0.5, 0.5), (0.5, 1.0), (2.0, 0.1)] {
                let fe = evaluate_f(&spec, x, y).unwrap();
                let target = -0.5 * alpha * x * y;
                assert!(
                    (fe.value - target).abs() < 1e-9,
                    "alpha={alpha} x={x} y={y}: {} vs {target}",
                    fe.value
                );
            }
        }
    }

    #[test]
    fn mp_second_derivatives() {
        // exact for F = -(alpha/2) x y: Fxy = -alpha/2, Fxx = Fyy = 0
        let alpha = 0.5;
        let spec = SpectrumModel::marchenko_pastur(alpha, 256).unwrap();
        let m = second_derivatives(&spec, 0.5, 0.5).unwrap();
        assert!(m[0][0].abs() < 1e-8);
        assert!(m[1][1].abs() < 1e-8);
        assert!((m[0][1] + 0.5 * alpha).abs() < 1e-8);
    }

    #[test]
    fn envelope_matches_finite_differences() {
        let spec = SpectrumModel::random_orthogonal(0.5).unwrap();
        let (x, y) = (0.5, 0.5);
        let e = 1e-5;
        let fe = evaluate_f(&spec, x, y).unwrap();
        let fdx = (evaluate_f(&spec, x + e, y).unwrap().value
            - evaluate_f(&spec, x - e, y).unwrap().value)
            / (2.0 * e);
        let fdy = (evaluate_f(&spec, x, y + e).unwrap().value
            - evaluate_f(&spec, x, y - e).unwrap().value)
            / (2.0 * e);
        assert!((fe.df_dx - fdx).abs() < 1e-8);
        assert!((fe.df_dy - fdy).abs() < 1e-8);
    }

    #[test]
    fn second_derivatives_match_finite_differences() {
        for spec in [
            SpectrumModel::random_orthogonal(0.5).unwrap(),
            SpectrumModel::single_atom(1.0, 1.0).unwrap(),
        ] {
            let (x, y) = (0.5, 0.4);
            let e = 1e-5;
            let fe = evaluate_f(&spec, x, y).unwrap();
            let fxp = evaluate_f(&spec, x + e, y).unwrap();
            let fxm = evaluate_f(&spec, x - e, y).unwrap();
            let fyp = evaluate_f(&spec, x, y + e).unwrap();
            let fym = evaluate_f(&spec, x, y - e).unwrap();
            let fxx = (fxp.df_dx - fxm.df_dx) / (2.0 * e);
            let fxy = (fyp.df_dx - fym.df_dx) / (2.0 * e);
            let fyy = (fyp.df_dy - fym.df_dy) / (2.0 * e);
            assert!((fe.d2f_dx2 - fxx).abs() < 1e-6);
            assert!((fe.d2f_dxdy - fxy).abs() < 1e-6);
            assert!((fe.d2f_dy2 - fyy).abs() < 1e-6);
        }
    }

    #[test]
    fn small_argument_law() {
        // F = -(<lambda>/2) x y + O((xy)^2)
        for spec in [
            SpectrumModel::random_orthogonal(0.3).unwrap(),
            SpectrumModel::marchenko_pastur(1.0, 256).unwrap(),
            SpectrumModel::single_atom(1.0, 2.0).unwrap(),
        ] {
            for &(x, y) in &[(1e-2, 1e-1), (0.03, 0.03), (1e-3, 0.5)] {
                let xy = x * y;
                if xy > 1e-3 {
                    continue;
                }
                let fe = evaluate_f(&spec, x, y).unwrap();
                let lead = -0.5 * spec.mean() * xy;
                assert!(
                    (fe.value - lead).abs() < 10.0 * xy * xy,
                    "spec={:?} x={x} y={y}",
                    spec.label
                );
            }
        }
    }

    #[test]
    fn scaling_covariance() {
        // scaling all eigenvalues by c maps F(x, y) -> F(c x, y)
        let c = 2.5;
        let base = SpectrumModel::single_atom(1.0, 1.0).unwrap();
        let scaled = SpectrumModel::single_atom(1.0, c).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.05, 0.5)] {
            let a = evaluate_f(&scaled, x, y).unwrap().value;
            let b = evaluate_f(&base, c * x, y).unwrap().value;
            assert!((a - b).abs() < 1e-11);
        }
        // and for a two-atom empirical spectrum
        let base = SpectrumModel::empirical(&[1.0, 2.0], 4, 0.5).unwrap();
        let scaled = SpectrumModel::empirical(&[c, 2.0 * c], 4, 0.5).unwrap();
        for &(x, y) in &[(0.1, 0.2), (0.3, 0.3)] {
            let a = evaluate_f(&scaled, x, y).unwrap().value;
            let b = evaluate_f(&base, c * x, y).unwrap().value;
            assert!((a - b).abs() < 1e-11);
        }
    }

    #[test]
    fn fold_reports_domain_error() {
        // single atom: no real saddle for x y > 1/4
        let spec = SpectrumModel::single_atom(1.0, 1.0).unwrap();
        match evaluate_f(&spec, 1.0, 1.0) {
            Err(Error::DomainViolation(_)) | Err(Error::SaddleNotConverged { .. }) => {}
            other => panic!("expected domain violation, got {other:?}"),
        }
    }

    #[test]
    fn g_single_atom_closed_form() {
        // G(x) = c x / 2 exactly, saddle Lambda = c + 1/x
        let c = 1.7;
        let spec = SpectrumModel::single_atom(1.0, c).unwrap();
        for &x in &[-3.0, -0.5, 0.2] {
            let g = evaluate_g(&spec, x).unwrap();
            assert!((g.value - 0.5 * c * x).abs() < 1e-12, "x={x}");
            assert!((g.lambda - (c + 1.0 / x)).abs() < 1e-9);
            assert!((g.g_prime - 0.5 * c).abs() < 1e-10);
            assert!(g.g_second.abs() < 1e-9);
        }
    }

    #[test]
    fn g_marchenko_pastur_r_transform() {
        // independent Stieltjes oracle: G(x) = -(alpha/2) ln(1 - x),
        // G'(x) = alpha / (2 (1 - x))
        for &alpha in &[0.5, 1.0, 2.0] {
            let spec = SpectrumModel::marchenko_pastur(alpha, 300).unwrap();
            for &x in &[-2.0, -1.0, -0.25, 0.1] {
                let g = evaluate_g(&spec, x).unwrap();
                let val = -0.5 * alpha * (1.0 - x).ln();
                let gp = 0.5 * alpha / (1.0 - x);
                assert!((g.value - val).abs() < 1e-8, "alpha={alpha} x={x}");
                assert!((g.g_prime - gp).abs() < 1e-8, "alpha={alpha} x={x}");
            }
        }
    }

    #[test]
    fn g_small_x_limit() {
        // G ~ <lambda> x / 2 as x -> 0, sign fixed by the single-atom case
        for spec in [
            SpectrumModel::random_orthogonal(0.4).unwrap(),
            SpectrumModel::marchenko_pastur(0.5, 256).unwrap(),
        ] {
            let x = -1e-6;
            let g = evaluate_g(&spec, x).unwrap();
            assert!((g.value - 0.5 * spec.mean() * x).abs() < 1e-6);
            assert!((g.value - 0.5 * spec.mean() * x).abs() < 1e-11);
        }
    }

    #[test]
    fn g_prime_matches_finite_differences() {
        let spec = SpectrumModel::random_orthogonal(0.5).unwrap();
        for &x in &[-1.0, -0.3] {
            let e = 1e-6;
            let g = evaluate_g(&spec, x).unwrap();
            let fd = (evaluate_g(&spec, x + e).unwrap().value
                - evaluate_g(&spec, x - e).unwrap().value)
                / (2.0 * e);
            assert!((g.g_prime - fd).abs() < 1e-7);
            let fd2 = (evaluate_g(&spec, x + e).unwrap().g_prime
                - evaluate_g(&spec, x - e).unwrap().g_prime)
                / (2.0 * e);
            assert!((g.g_second - fd2).abs() < 1e-6);
        }
    }
}
