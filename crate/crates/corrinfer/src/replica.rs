//! Replica-symmetric saddle-point solver.
//!
//! Solves the twelve coupled stationarity conditions of the RS free energy
//! for a given spectrum, generative model (Q-prior, Q-channel) and
//! recognition model (P-prior, P-channel): six order parameters
//! (chi_w, q_w, m_w, chi_u, q_u, m_u) and their conjugates. Conjugates come
//! from derivatives of F, order parameters from single-site Gaussian
//! averages; the scalar saddle coordinate of F is tracked across iterations
//! so the solution follows one branch through folds.

use crate::error::{Error, Result};
use crate::ffunc::{evaluate_f_tracked, FEvaluation};
use crate::models::{ChannelModel, ModelPair, PriorModel};
use crate::quad::{std_normal_96, StdNormalRule};
use crate::spectrum::SpectrumModel;
use serde::Serialize;

/// The RS macroscopic variables and their conjugates.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OrderParameterSet {
    pub chi_w: f64,
    pub q_w: f64,
    pub m_w: f64,
    pub chi_u: f64,
    pub q_u: f64,
    pub m_u: f64,
    pub chi_w_hat: f64,
    pub q_w_hat: f64,
    pub m_w_hat: f64,
    pub chi_u_hat: f64,
    pub q_u_hat: f64,
    pub m_u_hat: f64,
}

/// Converged output of `solve_rs`.
#[derive(Debug, Clone, Serialize)]
pub struct ReplicaSolution {
    pub params: OrderParameterSet,
    /// N^-1 [ln Z_P]
    pub free_energy: f64,
    /// per-element entropy under the counting-measure convention
    /// (identical to free_energy; the name matches its role for discrete
    /// priors with deterministic channels)
    pub entropy: f64,
    /// left side of the AT stability condition; negative = RS unstable
    pub at_margin: f64,
    pub chi_w2: f64,
    pub chi_u2: f64,
    pub kl: Option<f64>,
    pub mutual_info: Option<f64>,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub rs_unstable: bool,
    pub alpha: f64,
    /// saddle coordinate of F at the solution, reusable as a warm start
    pub u_saddle: f64,
    /// (mean, second moment) of the spectrum, for cross-run consistency checks
    pub spectrum_moments: (f64, f64),
}

#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// weight of the proposed update (0 < damping <= 1); automatically
    /// reduced when the iteration oscillates or leaves the F domain
    pub damping: f64,
    /// convergence threshold on the max undamped parameter change
    pub tol: f64,
    pub max_iter: usize,
    pub warm_start: Option<WarmStart>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            damping: 0.5,
            tol: 1e-10,
            max_iter: 200_000,
            warm_start: None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct WarmStart {
    pub chi_w: f64,
    pub q_w: f64,
    pub m_w: f64,
    pub chi_u: f64,
    pub q_u: f64,
    pub m_u: f64,
    pub u_saddle: f64,
}

impl From<&ReplicaSolution> for WarmStart {
    fn from(sol: &ReplicaSolution) -> Self {
        WarmStart {
            chi_w: sol.params.chi_w,
            q_w: sol.params.q_w,
            m_w: sol.params.m_w,
            chi_u: sol.params.chi_u,
            q_u: sol.params.q_u,
            m_u: sol.params.m_u,
            u_saddle: sol.u_saddle,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Theta {
    chi_w: f64,
    q_w: f64,
    m_w: f64,
    chi_u: f64,
    q_u: f64,
    m_u: f64,
}

impl Theta {
    fn to_array(self) -> [f64; 6] {
        [self.chi_w, self.q_w, self.m_w, self.chi_u, self.q_u, self.m_u]
    }

    fn from_array(v: [f64; 6]) -> Self {
        Theta {
            chi_w: v[0],
            q_w: v[1],
            m_w: v[2],
            chi_u: v[3],
            q_u: v[4],
            m_u: v[5],
        }
    }

    fn distance(&self, other: &Theta) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn relative_distance(&self, other: &Theta) -> f64 {
        let a = self.to_array();
        let b = other.to_array();
        a.iter()
            .zip(&b)
            .map(|(x, y)| (x - y).abs() / (x.abs() + 0.05))
            .fold(0.0, f64::max)
    }

    fn mix(&self, prop: &Theta, gamma: f64) -> Theta {
        let a = self.to_array();
        let b = prop.to_array();
        let mut out = [0.0; 6];
        for i in 0..6 {
            out[i] = gamma * b[i] + (1.0 - gamma) * a[i];
        }
        Theta::from_array(out)
    }
}

struct SolverCtx<'a> {
    spec: &'a SpectrumModel,
    generative: &'a ModelPair,
    recognition: &'a ModelPair,
    alpha: f64,
    t_w: f64,
    t_u_hat: f64,
    lam_mean: f64,
    rule: &'a StdNormalRule,
}

impl SolverCtx<'_> {
    /// One forward pass: conjugates from F at theta, then the single-site
    /// averages. Errors reject the state.
    fn propose(&self, theta: &Theta, fe: &FEvaluation) -> Result<Theta> {
        let hats = hats_from_f(theta, fe, self.alpha, self.t_w, self.lam_mean);
        let (chi_w_n, q_w_n, m_w_n, _, _) = w_side(
            &self.recognition.prior,
            &self.generative.prior,
            &hats,
            self.rule,
        )?;
        let (chi_u_n, q_u_n, m_u_n, _, _) = u_side(
            &self.recognition.channel,
            &self.generative.channel,
            &hats,
            self.t_u_hat,
            self.rule,
        )?;
        let prop = Theta {
            chi_w: chi_w_n,
            q_w: q_w_n,
            m_w: m_w_n,
            chi_u: chi_u_n,
            q_u: q_u_n,
            m_u: m_u_n,
        };
        let ok = prop.to_array().iter().all(|v| v.is_finite())
            && prop.chi_w > 0.0
            && prop.chi_u > 0.0;
        if !ok {
            return Err(Error::DomainViolation(
                "single-site update left the physical region".into(),
            ));
        }
        Ok(prop)
    }

    fn eval_and_propose(&self, theta: &Theta, u_hint: Option<f64>) -> Result<(FEvaluation, f64, Theta)> {
        if !(theta.chi_w > 0.0) || !(theta.chi_u > 0.0) {
            return Err(Error::DomainViolation("chi out of range".into()));
        }
        let (fe, u) = evaluate_f_tracked(self.spec, theta.chi_w, theta.chi_u, u_hint)?;
        let prop = self.propose(theta, &fe)?;
        Ok((fe, u, prop))
    }

    /// Levenberg-Marquardt on the residual R(theta) = propose(theta) - theta
    /// with a finite-difference Jacobian. The fixed-point map is violently
    /// stiff where the saddle grazes its fold; the damped-Newton step lands
    /// on roots the plain iteration can only circle, and the LM damping
    /// keeps steps useful when the Jacobian degenerates at the fold.
    fn newton_polish(
        &self,
        theta0: &Theta,
        u_hint: Option<f64>,
        tol: f64,
    ) -> Option<(Theta, FEvaluation, f64, Theta, f64)> {
        let mut theta = *theta0;
        let mut u = u_hint;
        let mut lm_lambda = 1e-3;
        let mut best: Option<(Theta, FEvaluation, f64, Theta, f64)> = None;
        for _ in 0..60 {
            let (fe, uu, prop) = self.eval_and_propose(&theta, u).ok()?;
            u = Some(uu);
            let base = theta.to_array();
            let r0: Vec<f64> = prop
                .to_array()
                .iter()
                .zip(&base)
                .map(|(p, t)| p - t)
                .collect();
            let rnorm = r0.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if best.as_ref().map_or(true, |b| rnorm < b.4) {
                best = Some((theta, fe.clone(), uu, prop, rnorm));
            }
            if rnorm < tol {
                return best;
            }
            // finite-difference Jacobian of R
            let mut jac = nalgebra::DMatrix::<f64>::zeros(6, 6);
            for j in 0..6 {
                let h = 1e-7 * (base[j].abs() + 1e-4);
                let mut pert = base;
                pert[j] += h;
                let th = Theta::from_array(pert);
                let (_, _, prop_j) = self.eval_and_propose(&th, u).ok()?;
                let rj = prop_j.to_array();
                for i in 0..6 {
                    let r_pert = rj[i] - pert[i];
                    jac[(i, j)] = (r_pert - r0[i]) / h;
                }
            }
            let try_step = |step: &nalgebra::DVector<f64>| -> Option<(Theta, f64)> {
                let mut cand = base;
                for i in 0..6 {
                    cand[i] += step[i];
                }
                let th = Theta::from_array(cand);
                let (_, _, prop_c) = self.eval_and_propose(&th, u).ok()?;
                let rn: f64 = prop_c
                    .to_array()
                    .iter()
                    .zip(&cand)
                    .map(|(p, t)| (p - t).abs())
                    .fold(0.0, f64::max);
                Some((th, rn))
            };
            let mut accepted = false;
            // full Newton step with a short line search first: the normal
            // equations square the condition number, which the fold region
            // cannot afford
            if let Some(newton_step) =
                jac.clone().lu().solve(&(-nalgebra::DVector::from_column_slice(&r0)))
            {
                let mut s = 1.0;
                for _ in 0..6 {
                    if let Some((th, rn)) = try_step(&(s * &newton_step)) {
                        if rn < rnorm {
                            theta = th;
                            accepted = true;
                            break;
                        }
                    }
                    s *= 0.5;
                }
            }
            if accepted {
                continue;
            }
            let jt = jac.transpose();
            let jtj = &jt * &jac;
            let jtr = &jt * nalgebra::DVector::from_column_slice(&r0);
            // LM fallback: raise the damping until a step reduces |R|
            for _ in 0..25 {
                let mut a = jtj.clone();
                for i in 0..6 {
                    a[(i, i)] += lm_lambda * (jtj[(i, i)].abs() + 1e-12);
                }
                let step = match a.lu().solve(&(-&jtr)) {
                    Some(s) => s,
                    None => {
                        lm_lambda *= 4.0;
                        continue;
                    }
                };
                if let Some((th, rn)) = try_step(&step) {
                    if rn < rnorm {
                        theta = th;
                        lm_lambda = (lm_lambda / 3.0).max(1e-12);
                        accepted = true;
                        break;
                    }
                }
                lm_lambda *= 4.0;
                if lm_lambda > 1e12 {
                    break;
                }
            }
            if !accepted {
                return best;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy)]
struct Hats {
    chi_w: f64,
    q_w: f64,
    m_w: f64,
    chi_u: f64,
    q_u: f64,
    m_u: f64,
}

/// Conjugate parameters from the F-derivatives at Theta (stationarity of the
/// free energy in the order parameters).
fn hats_from_f(theta: &Theta, fe: &FEvaluation, alpha: f64, t_w: f64, lam_mean: f64) -> Hats {
    let (fx, fy) = (fe.df_dx, fe.df_dy);
    let (fxx, fxy, fyy) = (fe.d2f_dx2, fe.d2f_dxdy, fe.d2f_dy2);
    let r = theta.m_u / theta.chi_u;
    let chi_w_hat = -2.0 * fx;
    let m_w_hat = -2.0 * r * fx;
    let q_w_hat =
        2.0 * (theta.q_w * fxx - theta.q_u * fxy + (t_w * r * r - 2.0 * theta.m_w * r) * fxx);
    let chi_u_hat = -(2.0 / alpha) * fy;
    // dA0/dchi_u including the m-sector
    let da0_dchu = fy + theta.q_w * fxy - theta.q_u * fyy
        + t_w
            * (-2.0 * theta.m_u * theta.m_u / theta.chi_u.powi(3)
                * (lam_mean * theta.chi_u / 2.0 + fx)
                + r * r * (lam_mean / 2.0 + fxy))
        - 2.0 * theta.m_w
            * (theta.m_u * fxy / theta.chi_u - theta.m_u * fx / (theta.chi_u * theta.chi_u));
    let q_u_hat = -chi_u_hat - (2.0 / alpha) * da0_dchu;
    let da0_dmu = 2.0 * t_w * theta.m_u / (theta.chi_u * theta.chi_u)
        * (lam_mean * theta.chi_u / 2.0 + fx)
        - 2.0 * theta.m_w * fx / theta.chi_u;
    let m_u_hat = da0_dmu / alpha;
    Hats {
        chi_w: chi_w_hat,
        q_w: q_w_hat.max(0.0),
        m_w: m_w_hat,
        chi_u: chi_u_hat,
        q_u: q_u_hat.max(0.0),
        m_u: m_u_hat,
    }
}

/// Single-site w-side averages: (chi_w, q_w, m_w, E[logZ_w], chi_w2).
fn w_side(
    recognition: &PriorModel,
    generative: &PriorModel,
    hats: &Hats,
    rule: &StdNormalRule,
) -> Result<(f64, f64, f64, f64, f64)> {
    let sq = hats.q_w.sqrt();
    if hats.m_w == 0.0 {
        // teacher decouples: single Gaussian average
        let (mut chi, mut q, mut e_logz, mut chi2) = (0.0, 0.0, 0.0, 0.0);
        for (&z, &wt) in rule.z.iter().zip(&rule.w) {
            let (lz, mean, var) = recognition.log_partition(hats.chi_w, sq * z)?;
            chi += wt * var;
            q += wt * mean * mean;
            e_logz += wt * lz;
            chi2 += wt * var * var;
        }
        return Ok((chi, q, 0.0, e_logz, chi2));
    }
    match *generative {
        PriorModel::GaussianUnit { variance } => {
            // h = sqrt(q_w_hat) z + m_w_hat w0 is Gaussian overall; the
            // teacher overlap follows from Stein's identity:
            // E[w0 <w>] = m_w_hat * T_w * E[var]
            let s_h = (hats.q_w + hats.m_w * hats.m_w * variance).sqrt();
            let (mut chi, mut q, mut e_logz, mut chi2) = (0.0, 0.0, 0.0, 0.0);
            for (&z, &wt) in rule.z.iter().zip(&rule.w) {
                let (lz, mean, var) = recognition.log_partition(hats.chi_w, s_h * z)?;
                chi += wt * var;
                q += wt * mean * mean;
                e_logz += wt * lz;
                chi2 += wt * var * var;
            }
            Ok((chi, q, hats.m_w * variance * chi, e_logz, chi2))
        }
        PriorModel::IsingPm1 { .. } => {
            let (mut chi, mut q, mut m, mut e_logz, mut chi2) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for &(w0, pw) in &[(1.0f64, 0.5f64), (-1.0, 0.5)] {
                for (&z, &wt) in rule.z.iter().zip(&rule.w) {
                    let (lz, mean, var) =
                        recognition.log_partition(hats.chi_w, sq * z + hats.m_w * w0)?;
                    let w = pw * wt;
                    chi += w * var;
                    q += w * mean * mean;
                    m += w * w0 * mean;
                    e_logz += w * lz;
                    chi2 += w * var * var;
                }
            }
            Ok((chi, q, m, e_logz, chi2))
        }
    }
}

/// Single-site u-side averages: (chi_u, q_u, m_u, E[log-evidence], chi_u2).
///
/// The generative measure couples y to the recognition field through the
/// shared Gaussian z: y ~ Q smeared by s^2 = T_u_hat - m_u_hat^2/q_u_hat
/// around the mean v z with v = m_u_hat / sqrt(q_u_hat).
fn u_side(
    recognition: &ChannelModel,
    generative: &ChannelModel,
    hats: &Hats,
    t_u_hat: f64,
    rule: &StdNormalRule,
) -> Result<(f64, f64, f64, f64, f64)> {
    let q_u_hat = hats.q_u.max(0.0);
    let sq = q_u_hat.sqrt();
    let (v, s2) = if q_u_hat > 0.0 && hats.m_u != 0.0 {
        let mut m_hat = hats.m_u;
        let bound = (q_u_hat * t_u_hat).sqrt();
        if m_hat.abs() > bound {
            m_hat = m_hat.signum() * bound;
        }
        (m_hat / sq, (t_u_hat - m_hat * m_hat / q_u_hat).max(0.0))
    } else {
        (0.0, t_u_hat)
    };

    match (recognition, generative) {
        (ChannelModel::GaussianNoise { variance: s2_p }, gen) => {
            let sig = s2_p + hats.chi_u;
            if sig <= 0.0 {
                return Err(Error::DivergentPartition(format!(
                    "gaussian channel with sigma^2 + chi_u_hat = {sig} <= 0"
                )));
            }
            match gen {
                ChannelModel::GaussianNoise { variance: s2_q } => {
                    // l' = (y - h)/sig with y - h = (v - sq) z + r,
                    // r ~ N(0, s2 + s2_q): everything closed form
                    let ed2 = (v - sq) * (v - sq) + s2 + s2_q;
                    let e_l = -0.5 * (2.0 * std::f64::consts::PI * sig).ln() - ed2 / (2.0 * sig);
                    Ok((1.0 / sig, ed2 / (sig * sig), 1.0 / sig, e_l, 1.0 / (sig * sig)))
                }
                ChannelModel::RandomLabel => {
                    // y = +-1 independent of the field
                    let ed2 = 1.0 + q_u_hat;
                    let e_l = -0.5 * (2.0 * std::f64::consts::PI * sig).ln() - ed2 / (2.0 * sig);
                    Ok((1.0 / sig, ed2 / (sig * sig), 0.0, e_l, 1.0 / (sig * sig)))
                }
                ChannelModel::PerceptronStep => {
                    // step teacher, Gaussian student
                    let s2g = s2.max(1e-300);
                    let (mut q, mut m, mut e_l) = (0.0, 0.0, 0.0);
                    for (&z, &wt) in rule.z.iter().zip(&rule.w) {
                        for &y in &[1.0f64, -1.0] {
                            let lq = generative.smeared_log_density(s2g, v * z, y);
                            let qy = lq.exp();
                            let d = y - sq * z;
                            if qy > 0.0 {
                                q += wt * qy * d * d;
                                e_l += wt
                                    * qy
                                    * (-0.5 * (2.0 * std::f64::consts::PI * sig).ln()
                                        - d * d / (2.0 * sig));
                            }
                            let dq = generative.smeared_density_dmean(s2g, v * z, y);
                            m += wt * dq * d;
                        }
                    }
                    Ok((1.0 / sig, q / (sig * sig), m / sig, e_l, 1.0 / (sig * sig)))
                }
            }
        }
        (ChannelModel::PerceptronStep, gen) => {
            if hats.chi_u <= 0.0 {
                return Err(Error::DomainViolation(format!(
                    "step channel needs chi_u_hat > 0, got {}",
                    hats.chi_u
                )));
            }
            let chi_u_hat = hats.chi_u;
            let sch = chi_u_hat.sqrt();
            let eval = |y: f64, z: f64| -> (f64, f64, f64) {
                let h = sq * z;
                let t = -y * h / sch;
                let r = crate::models::mills_ratio(t);
                let l = crate::models::ln_h(t);
                let l1 = y * r / sch;
                let l2 = -r * (r - t) / chi_u_hat;
                (l, l1, l2)
            };
            match gen {
                ChannelModel::RandomLabel => {
                    let (mut chi, mut q, mut e_l, mut chi2) = (0.0, 0.0, 0.0, 0.0);
                    for (&z, &wt) in rule.z.iter().zip(&rule.w) {
                        for &y in &[1.0f64, -1.0] {
                            let (l, l1, l2) = eval(y, z);
                            let w = 0.5 * wt;
                            chi += w * (-l2);
                            q += w * l1 * l1;
                            e_l += w * l;
                            chi2 += w * l2 * l2;
                        }
                    }
                    Ok((chi, q, 0.0, e_l, chi2))
                }
                ChannelModel::PerceptronStep => {
                    let s2g = s2.max(1e-300);
                    let (mut chi, mut q, mut m, mut e_l, mut chi2) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for (&z, &wt) in rule.z.iter().zip(&rule.w) {
                        for &y in &[1.0f64, -1.0] {
                            let (l, l1, l2) = eval(y, z);
                            let qy = generative.smeared_log_density(s2g, v * z, y).exp();
                            if qy > 0.0 {
                                chi += wt * qy * (-l2);
                                q += wt * qy * l1 * l1;
                                e_l += wt * qy * l;
                                chi2 += wt * qy * l2 * l2;
                            }
                            let dq = generative.smeared_density_dmean(s2g, v * z, y);
                            m += wt * dq * l1;
                        }
                    }
                    Ok((chi, q, m, e_l, chi2))
                }
                ChannelModel::GaussianNoise { .. } => Err(Error::UnsupportedModel(
                    "continuous generative labels with a step recognition channel".into(),
                )),
            }
        }
        (ChannelModel::RandomLabel, _) => Err(Error::UnsupportedModel(
            "random_label as a recognition channel is degenerate (chi_u = 0)".into(),
        )),
    }
}

struct Assembly {
    free_energy: f64,
    chi_w2: f64,
    chi_u2: f64,
    at_margin: f64,
    hats: Hats,
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    theta: &Theta,
    fe: &FEvaluation,
    generative: &ModelPair,
    recognition: &ModelPair,
    alpha: f64,
    t_w: f64,
    t_u_hat: f64,
    lam_mean: f64,
    rule: &StdNormalRule,
) -> Result<Assembly> {
    let hats = hats_from_f(theta, fe, alpha, t_w, lam_mean);
    let (_, _, _, e_logz, chi_w2) = w_side(&recognition.prior, &generative.prior, &hats, rule)?;
    let (_, _, _, e_ell, chi_u2) = u_side(
        &recognition.channel,
        &generative.channel,
        &hats,
        t_u_hat,
        rule,
    )?;
    let r = theta.m_u / theta.chi_u;
    let a0 = fe.value + theta.q_w * fe.df_dx - theta.q_u * fe.df_dy
        + t_w * r * r * (lam_mean * theta.chi_u / 2.0 + fe.df_dx)
        - 2.0 * theta.m_w * r * fe.df_dx;
    let a_w = 0.5 * hats.chi_w * (theta.chi_w + theta.q_w) - 0.5 * hats.q_w * theta.chi_w
        - hats.m_w * theta.m_w
        + e_logz;
    let a_u = 0.5 * hats.chi_u * (theta.chi_u - theta.q_u)
        + 0.5 * hats.q_u * theta.chi_u
        - hats.m_u * theta.m_u
        + e_ell;
    let free_energy = a0 + a_w + alpha * a_u;
    let at_margin = (1.0 - 2.0 * fe.d2f_dx2 * chi_w2) * (1.0 - 2.0 / alpha * fe.d2f_dy2 * chi_u2)
        - 4.0 / alpha * fe.d2f_dxdy * fe.d2f_dxdy * chi_w2 * chi_u2;
    Ok(Assembly {
        free_energy,
        chi_w2,
        chi_u2,
        at_margin,
        hats,
    })
}

struct RunOut {
    theta: Theta,
    fe: FEvaluation,
    u: f64,
    delta: f64,
    iterations: usize,
    converged: bool,
}

impl SolverCtx<'_> {
    /// Damped fixed-point iteration with saddle tracking, adaptive damping,
    /// relative step caps and periodic Newton acceleration.
    fn run_fp(
        &self,
        theta0: Theta,
        u_hint: Option<f64>,
        damping0: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<RunOut> {
        let mut theta = theta0;
        let mut u_saddle = u_hint;
        let mut damping = damping0.clamp(1e-6, 1.0);

        // project the starting point into the admissible region (a warm
        // start carried over from a different alpha may land just outside)
        let shrink = if u_hint.is_some() { 0.95 } else { 0.5 };
        let mut start = None;
        for _ in 0..400 {
            if let Ok((fe, u, p)) = self.eval_and_propose(&theta, u_saddle) {
                start = Some((fe, u, p));
                break;
            }
            theta.chi_u *= shrink;
        }
        let (mut fe_cur, u0, mut prop) = start.ok_or_else(|| {
            Error::DomainViolation("no admissible starting point for the F saddle".into())
        })?;
        u_saddle = Some(u0);

        let mut delta = f64::INFINITY;
        let mut best_delta = f64::INFINITY;
        let mut stall = 0usize;
        let mut iterations = 0usize;
        let mut gamma_prev: f64 = damping;
        let mut floored = 0usize;

        for it in 0..max_iter {
            iterations = it + 1;
            delta = theta.distance(&prop);
            if delta < tol {
                break;
            }
            if delta < best_delta {
                best_delta = delta;
                stall = 0;
            } else {
                stall += 1;
                if stall > 200 {
                    damping = (damping * 0.5).max(1e-4);
                    stall = 0;
                }
            }
            // pinned against the fold: steps only survive at microscopic
            // damping and make no progress; bail out instead of grinding
            if gamma_prev <= 1e-6 {
                floored += 1;
                if floored > 500 {
                    break;
                }
            } else {
                floored = 0;
            }
            // runaway state: residual exploding means the trajectory left
            // the physical basin; further iteration cannot recover it
            if !delta.is_finite() || delta > 1e6 {
                break;
            }
            // Newton on the fixed-point residual whenever the state is close
            // enough for its basin: the fold region makes the plain map
            // violently stiff and Newton lands where damped iteration can
            // only circle
            if delta < 0.5 && (it % 50 == 1 || it == 3) {
                if let Some((th, fe, u, pr, d)) = self.newton_polish(&theta, u_saddle, tol) {
                    if d < delta {
                        theta = th;
                        fe_cur = fe;
                        u_saddle = Some(u);
                        prop = pr;
                        delta = d;
                    }
                    if delta < tol {
                        break;
                    }
                }
            }
            // cap the relative motion per iteration so a stiff map cannot
            // throw the trajectory off the physical branch
            let rel = theta.relative_distance(&prop);
            let gamma0 = if rel > 0.0 { damping.min(0.2 / rel) } else { damping };
            // damped step; a candidate is accepted only if F and all
            // single-site updates evaluate cleanly there; start from twice
            // the last successful step to avoid re-walking the ladder
            let mut gamma = gamma0.min(gamma_prev * 2.0).max(1e-7);
            let mut stepped = false;
            for _ in 0..60 {
                let cand = theta.mix(&prop, gamma);
                if let Ok((fe, u, next_prop)) = self.eval_and_propose(&cand, u_saddle) {
                    theta = cand;
                    fe_cur = fe;
                    u_saddle = Some(u);
                    prop = next_prop;
                    stepped = true;
                    gamma_prev = gamma;
                    break;
                }
                gamma *= 0.5;
            }
            if !stepped {
                break;
            }
        }
        Ok(RunOut {
            theta,
            fe: fe_cur,
            u: u_saddle.unwrap_or(f64::NAN),
            delta,
            iterations,
            converged: delta < tol,
        })
    }
}

/// Solve the RS saddle-point equations by damped fixed-point iteration with
/// saddle tracking, adaptive damping and Newton acceleration. When a
/// warm-started run stalls against the saddle fold (the branch tangency at
/// which the AT margin changes sign), the run is retried once with the
/// saddle hint reflected across the fold so the solution can continue on
/// the second branch.
pub fn solve_rs(
    spec: &SpectrumModel,
    generative: &ModelPair,
    recognition: &ModelPair,
    opts: &SolveOptions,
) -> Result<ReplicaSolution> {
    let alpha = spec.alpha;
    let t_w = generative.prior.second_moment();
    let lam_mean = spec.mean();
    let t_u_hat = t_w * lam_mean / alpha;
    let rule = std_normal_96();

    let teacher_coupled = !matches!(generative.channel, ChannelModel::RandomLabel);
    let theta0 = match opts.warm_start {
        Some(w) => Theta {
            chi_w: w.chi_w,
            q_w: w.q_w,
            m_w: w.m_w,
            chi_u: w.chi_u,
            q_u: w.q_u,
            m_u: w.m_u,
        },
        None => Theta {
            chi_w: 0.5 * t_w,
            q_w: 0.5 * t_w,
            m_w: if teacher_coupled { 0.1 * t_w.sqrt() } else { 0.0 },
            chi_u: 0.5,
            q_u: 0.1,
            m_u: if teacher_coupled { 0.1 } else { 0.0 },
        },
    };
    let u_hint: Option<f64> = opts.warm_start.map(|w| w.u_saddle);

    let ctx = SolverCtx {
        spec,
        generative,
        recognition,
        alpha,
        t_w,
        t_u_hat,
        lam_mean,
        rule,
    };

    let mut run = ctx.run_fp(theta0, u_hint, opts.damping, opts.tol, opts.max_iter)?;
    if !run.converged {
        // the saddle may sit on the other side of its fold (the branches
        // exchange at the AT tangency): retry with hints reflected across
        // the fold point
        if let Some(u_star) = crate::ffunc::fold_point(spec) {
            let u_start = u_hint.unwrap_or(run.u);
            let mut hints = vec![2.0 * u_star - u_start];
            hints.push(u_star - 0.05 * (1.0 + u_star.abs()));
            hints.push(u_star - 0.25 * (1.0 + u_star.abs()));
            hints.push(u_star + 0.05 * (1.0 + u_star.abs()));
            for hint in hints {
                if let Ok(retry) = ctx.run_fp(theta0, Some(hint), opts.damping, opts.tol, opts.max_iter)
                {
                    if retry.converged {
                        run = retry;
                        break;
                    }
                    if retry.delta < run.delta {
                        run = retry;
                    }
                }
            }
        }
    }
    let (theta, fe_cur, u_saddle, delta, iterations, converged) = (
        run.theta,
        run.fe,
        run.u,
        run.delta,
        run.iterations,
        run.converged,
    );

    let asm = match assemble(
        &theta,
        &fe_cur,
        generative,
        recognition,
        alpha,
        t_w,
        t_u_hat,
        lam_mean,
        rule,
    ) {
        Ok(a) => a,
        Err(_) if !converged => {
            return Err(Error::NonConvergence {
                iterations,
                residual: delta,
            })
        }
        Err(e) => return Err(e),
    };

    let params = OrderParameterSet {
        chi_w: theta.chi_w,
        q_w: theta.q_w,
        m_w: theta.m_w,
        chi_u: theta.chi_u,
        q_u: theta.q_u,
        m_u: theta.m_u,
        chi_w_hat: asm.hats.chi_w,
        q_w_hat: asm.hats.q_w,
        m_w_hat: asm.hats.m_w,
        chi_u_hat: asm.hats.chi_u,
        q_u_hat: asm.hats.q_u,
        m_u_hat: asm.hats.m_u,
    };
    if converged {
        check_invariants(&params, recognition, t_w)?;
    }
    Ok(ReplicaSolution {
        params,
        free_energy: asm.free_energy,
        entropy: asm.free_energy,
        at_margin: asm.at_margin,
        chi_w2: asm.chi_w2,
        chi_u2: asm.chi_u2,
        kl: None,
        mutual_info: None,
        iterations,
        residual: delta,
        converged,
        rs_unstable: asm.at_margin < 0.0,
        alpha,
        u_saddle,
        spectrum_moments: (spec.mean(), spec.second_moment()),
    })
}

fn check_invariants(
    params: &OrderParameterSet,
    recognition: &ModelPair,
    t_w_gen: f64,
) -> Result<()> {
    let mut problems = Vec::new();
    if !(params.chi_w > 0.0) {
        problems.push(format!("chi_w = {} <= 0", params.chi_w));
    }
    if !(params.chi_u > 0.0) {
        problems.push(format!("chi_u = {} <= 0", params.chi_u));
    }
    if params.q_w < -1e-12 {
        problems.push(format!("q_w = {} < 0", params.q_w));
    }
    if params.q_u < -1e-12 {
        problems.push(format!("q_u = {} < 0", params.q_u));
    }
    if recognition.prior.is_bounded() {
        let t_w_rec = recognition.prior.second_moment();
        if params.q_w + params.chi_w > t_w_rec + 1e-9 {
            problems.push(format!(
                "self-overlap bound violated: q_w + chi_w = {} > T_w = {t_w_rec}",
                params.q_w + params.chi_w
            ));
        }
    }
    if params.q_w < params.m_w * params.m_w / t_w_gen - 1e-9 {
        problems.push(format!(
            "Cauchy-Schwarz violated: q_w = {} < m_w^2/T_w = {}",
            params.q_w,
            params.m_w * params.m_w / t_w_gen
        ));
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::InvariantViolation(problems.join("; ")))
    }
}

/// AT stability margin of a converged solution (positive = RS locally stable).
pub fn at_stability(
    sol: &ReplicaSolution,
    spec: &SpectrumModel,
    generative: &ModelPair,
    recognition: &ModelPair,
) -> Result<f64> {
    let (fe, _) = evaluate_f_tracked(spec, sol.params.chi_w, sol.params.chi_u, Some(sol.u_saddle))?;
    let rule = std_normal_96();
    let t_w = generative.prior.second_moment();
    let t_u_hat = t_w * spec.mean() / spec.alpha;
    let theta = Theta {
        chi_w: sol.params.chi_w,
        q_w: sol.params.q_w,
        m_w: sol.params.m_w,
        chi_u: sol.params.chi_u,
        q_u: sol.params.q_u,
        m_u: sol.params.m_u,
    };
    let asm = assemble(
        &theta,
        &fe,
        generative,
        recognition,
        spec.alpha,
        t_w,
        t_u_hat,
        spec.mean(),
        rule,
    )?;
    Ok(asm.at_margin)
}

/// KL divergence (per output) between generative and recognition models,
/// assembled from the matched run `sol_q` and the mismatched run `sol_p`.
pub fn kl_divergence(sol_p: &ReplicaSolution, sol_q: &ReplicaSolution, alpha: f64) -> Result<f64> {
    if (sol_p.alpha - sol_q.alpha).abs() > 1e-12 || (sol_p.alpha - alpha).abs() > 1e-12 {
        return Err(Error::MismatchedSolutions(format!(
            "alpha mismatch: {} vs {} vs {alpha}",
            sol_p.alpha, sol_q.alpha
        )));
    }
    let (m1p, m2p) = sol_p.spectrum_moments;
    let (m1q, m2q) = sol_q.spectrum_moments;
    if (m1p - m1q).abs() > 1e-9 || (m2p - m2q).abs() > 1e-9 {
        return Err(Error::MismatchedSolutions(
            "solutions come from different spectra".into(),
        ));
    }
    Ok((sol_q.free_energy - sol_p.free_energy) / alpha)
}

/// Typical mutual information (per output) between the parameters and the
/// outputs under the generative model: single-Gaussian output entropy term
/// minus the matched free-energy rate. The generative prior is normalized
/// internally so Z_Q integrates to one.
pub fn mutual_information(
    spec: &SpectrumModel,
    generative: &ModelPair,
    opts: &SolveOptions,
) -> Result<f64> {
    let alpha = spec.alpha;
    let gen_norm = ModelPair::new(generative.prior.normalized(), generative.channel);
    let sol_q = solve_rs(spec, &gen_norm, &gen_norm, opts)?;
    if !sol_q.converged {
        return Err(Error::NonConvergence {
            iterations: sol_q.iterations,
            residual: sol_q.residual,
        });
    }
    // Tr_y Int Dz Q(y|sqrt(T_u_hat) z) ln Q(y|sqrt(T_u_hat) z)
    let term1 = match gen_norm.channel {
        ChannelModel::GaussianNoise { variance } => {
            -0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln()
        }
        ChannelModel::RandomLabel => -std::f64::consts::LN_2,
        // Q ln Q = 0 pointwise for a deterministic 0/1 kernel
        ChannelModel::PerceptronStep => 0.0,
    };
    Ok(term1 - sol_q.free_energy / alpha)
}

/// Reduced free energy for a Gaussian recognition channel evaluated through
/// the G-function: an independent cross-check path for `solve_rs` on
/// Gaussian channels.
///
/// The teacher enters only through its second moment `t_w`; the overlap
/// sector treats the teacher as Gaussian, exact whenever the generative
/// prior is Gaussian.
pub fn gaussian_channel_free_energy(
    spec: &SpectrumModel,
    recognition_prior: &PriorModel,
    sigma2: f64,
    sigma02: f64,
    t_w: f64,
) -> Result<f64> {
    use crate::ffunc::evaluate_g;
    if sigma2 <= 0.0 {
        return Err(Error::InvalidParameter("sigma^2 must be positive".into()));
    }
    let alpha = spec.alpha;
    let rule = std_normal_96();
    let (mut chi_w, mut q_w, mut m_w) = (0.5 * t_w.max(1e-3), 0.1, 0.1);
    let damping = 0.5;
    let mut converged = false;
    let hats_of = |chi_w: f64, q_w: f64, m_w: f64| -> Result<(f64, f64, f64)> {
        let g = evaluate_g(spec, -chi_w / sigma2)?;
        let chi_w_hat = 2.0 * g.g_prime / sigma2;
        let b = -(t_w - 2.0 * m_w + q_w) / sigma2 + sigma02 * chi_w / (sigma2 * sigma2);
        let q_w_hat = (2.0 * sigma02 * g.g_prime / (sigma2 * sigma2)
            - 2.0 * b * g.g_second / sigma2)
            .max(0.0);
        Ok((chi_w_hat, q_w_hat, chi_w_hat))
    };
    for _ in 0..100_000 {
        let (chi_w_hat, q_w_hat, m_w_hat) = hats_of(chi_w, q_w, m_w)?;
        let s_h = (q_w_hat + m_w_hat * m_w_hat * t_w).sqrt();
        let (mut chi_n, mut q_n) = (0.0, 0.0);
        for (&z, &wt) in rule.z.iter().zip(&rule.w) {
            let (_, mean, var) = recognition_prior.log_partition(chi_w_hat, s_h * z)?;
            chi_n += wt * var;
            q_n += wt * mean * mean;
        }
        let m_n = m_w_hat * t_w * chi_n;
        let delta = (chi_n - chi_w)
            .abs()
            .max((q_n - q_w).abs())
            .max((m_n - m_w).abs());
        chi_w = damping * chi_n + (1.0 - damping) * chi_w;
        q_w = damping * q_n + (1.0 - damping) * q_w;
        m_w = damping * m_n + (1.0 - damping) * m_w;
        if delta < 1e-13 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: 100_000,
            residual: f64::NAN,
        });
    }
    let g = evaluate_g(spec, -chi_w / sigma2)?;
    let (chi_w_hat, q_w_hat, m_w_hat) = hats_of(chi_w, q_w, m_w)?;
    let b = -(t_w - 2.0 * m_w + q_w) / sigma2 + sigma02 * chi_w / (sigma2 * sigma2);
    let s_h = (q_w_hat + m_w_hat * m_w_hat * t_w).sqrt();
    let mut e_logz = 0.0;
    for (&z, &wt) in rule.z.iter().zip(&rule.w) {
        let (lz, _, _) = recognition_prior.log_partition(chi_w_hat, s_h * z)?;
        e_logz += wt * lz;
    }
    let a_w = 0.5 * chi_w_hat * (chi_w + q_w) - 0.5 * q_w_hat * chi_w - m_w_hat * m_w + e_logz;
    Ok(a_w + g.value + b * g.g_prime
        - 0.5 * alpha * ((2.0 * std::f64::consts::PI * sigma2).ln() + sigma02 / sigma2))
}
