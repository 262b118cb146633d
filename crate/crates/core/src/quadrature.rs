//! Gaussian quadrature for the radial measure `e^{-x} dx` on `[0, inf)`.
//!
//! Two node families are provided for the same measure:
//!
//! * [`GridFamily::Laguerre`] is classical Gauss-Laguerre in `x`. Order `Q`
//!   integrates `x^k` exactly for `k <= 2Q-1`.
//! * [`GridFamily::Radial`] is Gauss quadrature in `r = sqrt(x)` for the weight
//!   `2 r e^{-r^2}`. Order `Q` integrates `x^{j/2}` exactly for `j <= 2Q-1`,
//!   which covers the half-integer powers produced by displacement matrix
//!   elements. This is the default for phase-space work.

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest order accepted; beyond this the smallest weights underflow.
pub const MAX_ORDER: usize = 180;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridFamily {
    Laguerre,
    Radial,
}

impl GridFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            GridFamily::Laguerre => "laguerre",
            GridFamily::Radial => "radial",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            GridFamily::Laguerre => 0,
            GridFamily::Radial => 1,
        }
    }
}

impl std::str::FromStr for GridFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laguerre" => Ok(GridFamily::Laguerre),
            "radial" => Ok(GridFamily::Radial),
            other => Err(Error::OutOfRange(format!("unknown grid family '{other}'"))),
        }
    }
}

/// Nodes `x_q >= 0` and weights `w_q > 0` with `sum_q w_q f(x_q) ~ int f e^{-x} dx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureGrid {
    pub family: GridFamily,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    /// Classical Gauss-Laguerre rule of order `q`.
    pub fn laguerre(q: usize) -> Result<Self> {
        cached(GridFamily::Laguerre, q)
    }

    /// Gauss rule in `r = sqrt(x)`; see the module docs.
    pub fn radial(q: usize) -> Result<Self> {
        cached(GridFamily::Radial, q)
    }

    pub fn new(family: GridFamily, q: usize) -> Result<Self> {
        cached(family, q)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `sum_q w_q f(x_q)`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }

    /// Indices of nodes with `lo <= x_q < hi`.
    pub fn nodes_in(&self, lo: f64, hi: f64) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, &x)| x >= lo && x < hi)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn all_nodes(&self) -> Vec<usize> {
        (0..self.len()).collect()
    }
}

fn cache() -> &'static Mutex<HashMap<(GridFamily, usize), QuadratureGrid>> {
    static CACHE: OnceLock<Mutex<HashMap<(GridFamily, usize), QuadratureGrid>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn cached(family: GridFamily, q: usize) -> Result<QuadratureGrid> {
    if q == 0 || q > MAX_ORDER {
        return Err(Error::QuadratureOrder { order: q, required: MAX_ORDER });
    }
    if let Some(g) = cache().lock().expect("grid cache poisoned").get(&(family, q)) {
        return Ok(g.clone());
    }
    let grid = match family {
        GridFamily::Laguerre => build_laguerre(q),
        GridFamily::Radial => build_radial(q),
    };
    cache()
        .lock()
        .expect("grid cache poisoned")
        .insert((family, q), grid.clone());
    Ok(grid)
}

fn build_laguerre(q: usize) -> QuadratureGrid {
    let alpha: Vec<f64> = (0..q).map(|j| 2.0 * j as f64 + 1.0).collect();
    let beta: Vec<f64> = (0..q).map(|j| (j * j) as f64).collect();
    let rule = GaussRule::from_jacobi(&alpha, &beta, 1.0);
    QuadratureGrid {
        family: GridFamily::Laguerre,
        order: q,
        nodes: rule.nodes,
        weights: rule.weights,
    }
}

fn build_radial(q: usize) -> QuadratureGrid {
    let (alpha, beta) = radial_recurrence(q);
    let rule = GaussRule::from_jacobi(&alpha, &beta, 1.0);
    QuadratureGrid {
        family: GridFamily::Radial,
        order: q,
        nodes: rule.nodes.iter().map(|r| r * r).collect(),
        weights: rule.weights,
    }
}

/// A Gauss rule on the real line.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// Rule for the measure with monic recurrence
    /// `p_{j+1} = (x - alpha_j) p_j - beta_j p_{j-1}` and total mass `mu0`.
    ///
    /// Nodes start from the Jacobi-matrix eigenvalues and are polished by
    /// Newton steps on the orthonormal recurrence; weights use the
    /// Christoffel formula `1 / sum_j p_j(x)^2`.
    pub fn from_jacobi(alpha: &[f64], beta: &[f64], mu0: f64) -> Self {
        let n = alpha.len();
        let mut jac = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            jac[(i, i)] = alpha[i];
            if i + 1 < n {
                let b = beta[i + 1].sqrt();
                jac[(i, i + 1)] = b;
                jac[(i + 1, i)] = b;
            }
        }
        let mut nodes: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().copied().collect();
        nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalue"));

        let sb: Vec<f64> = beta.iter().map(|b| b.sqrt()).collect();
        let mut weights = Vec::with_capacity(n);
        for x in nodes.iter_mut() {
            for _ in 0..4 {
                let (p, dp, _) = orthonormal_eval(alpha, &sb, mu0, *x);
                if dp == 0.0 || !dp.is_finite() {
                    break;
                }
                let step = p / dp;
                *x -= step;
                if step.abs() <= 1e-15 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, _, inv_w) = orthonormal_eval(alpha, &sb, mu0, *x);
            weights.push(1.0 / inv_w);
        }
        GaussRule { nodes, weights }
    }
}

/// Returns `(p_n(x), p_n'(x), sum_{j<n} p_j(x)^2)` for the orthonormal family,
/// rescaling on the fly so large nodes do not overflow intermediate values.
fn orthonormal_eval(alpha: &[f64], sb: &[f64], mu0: f64, x: f64) -> (f64, f64, f64) {
    const BIG: f64 = 1e150;
    let n = alpha.len();
    let mut p_prev = 0.0;
    let mut p = 1.0 / mu0.sqrt();
    let mut d_prev = 0.0;
    let mut d = 0.0;
    let mut sum = 0.0;
    let mut scale_exp = 0i32;
    for j in 0..n {
        sum += p * p;
        let next_b = if j + 1 < n { sb[j + 1] } else { 1.0 };
        let prev_b = sb[j];
        let p_next = ((x - alpha[j]) * p - if j > 0 { prev_b * p_prev } else { 0.0 }) / next_b;
        let d_next =
            (p + (x - alpha[j]) * d - if j > 0 { prev_b * d_prev } else { 0.0 }) / next_b;
        p_prev = p;
        p = p_next;
        d_prev = d;
        d = d_next;
        if p.abs() > BIG {
            p /= BIG;
            p_prev /= BIG;
            d /= BIG;
            d_prev /= BIG;
            sum /= BIG * BIG;
            scale_exp += 1;
        }
    }
    // Newton only needs the ratio p/dp, so the common scale cancels there.
    let sum = sum * BIG.powi(2 * scale_exp);
    (p, d, sum)
}

/// Monic recurrence coefficients of `2 r e^{-r^2} dr` on `[0, inf)` by Lanczos
/// on a fine composite Gauss-Legendre discretization.
fn radial_recurrence(n: usize) -> (Vec<f64>, Vec<f64>) {
    let (pts, wts) = radial_discretization(n);
    let m = pts.len();

    // Lanczos in the inner product sum_i wts_i f_i g_i, with full
    // reorthogonalization against all earlier vectors.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut alpha = Vec::with_capacity(n);
    let mut beta: Vec<f64> = vec![1.0];

    let norm = |v: &[f64]| -> f64 { v.iter().zip(&wts).map(|(a, w)| w * a * a).sum::<f64>().sqrt() };
    let dot = |u: &[f64], v: &[f64]| -> f64 { u.iter().zip(v).zip(&wts).map(|((a, b), w)| w * a * b).sum() };

    let mut q: Vec<f64> = vec![1.0; m];
    let nq = norm(&q);
    q.iter_mut().for_each(|v| *v /= nq);
    for j in 0..n {
        let mut v: Vec<f64> = q.iter().zip(&pts).map(|(a, x)| a * x).collect();
        let a = dot(&q, &v);
        alpha.push(a);
        if j + 1 == n {
            break;
        }
        for (vi, (qi, _)) in v.iter_mut().zip(q.iter().zip(&pts)) {
            *vi -= a * qi;
        }
        if let Some(prev) = basis.last() {
            let b = beta[j].sqrt();
            for (vi, pi) in v.iter_mut().zip(prev.iter()) {
                *vi -= b * pi;
            }
        }
        basis.push(q.clone());
        for _ in 0..2 {
            for u in &basis {
                let c = dot(u, &v);
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= c * ui;
                }
            }
        }
        let b = norm(&v);
        beta.push(b * b);
        q = v.iter().map(|vi| vi / b).collect();
    }
    (alpha, beta)
}

fn radial_discretization(n: usize) -> (Vec<f64>, Vec<f64>) {
    const PANEL: f64 = 0.25;
    const PTS: usize = 20;
    let reach = (4.0 * n as f64).sqrt() + 12.0;
    let panels = (reach / PANEL).ceil() as usize;
    let leg = legendre_rule(PTS);
    let mut pts = Vec::with_capacity(panels * PTS);
    let mut wts = Vec::with_capacity(panels * PTS);
    for p in 0..panels {
        let lo = p as f64 * PANEL;
        for (t, w) in leg.nodes.iter().zip(&leg.weights) {
            let r = lo + 0.5 * PANEL * (t + 1.0);
            pts.push(r);
            wts.push(0.5 * PANEL * w * 2.0 * r * (-r * r).exp());
        }
    }
    (pts, wts)
}

/// Gauss-Legendre rule on `[-1, 1]`.
pub fn legendre_rule(n: usize) -> GaussRule {
    let alpha = vec![0.0; n];
    let beta: Vec<f64> = (0..n)
        .map(|j| {
            if j == 0 {
                2.0
            } else {
                let jf = j as f64;
                jf * jf / (4.0 * jf * jf - 1.0)
            }
        })
        .collect();
    GaussRule::from_jacobi(&alpha, &beta, 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::{laguerre, ln_gamma};

    #[test]
    fn laguerre_moments_exact() {
        for q in [8usize, 32, 64, 96] {
            let g = QuadratureGrid::laguerre(q).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((g.integrate(|x| x) - 1.0).abs() < 1e-10);
            let kmax = (2 * q - 1).min(120);
            for k in 0..=kmax {
                let exact = ln_gamma(k as f64 + 1.0);
                let got = g.integrate(|x| (k as f64 * x.ln() - exact).exp());
                assert!((got - 1.0).abs() < 1e-10, "Q={q} k={k}: {got}");
            }
        }
    }

    #[test]
    fn radial_half_moments_exact() {
        for q in [16usize, 64, 96, 128] {
            let g = QuadratureGrid::radial(q).unwrap();
            assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!((g.integrate(|x| x) - 1.0).abs() < 1e-10);
            for j in 0..=(2 * q - 1).min(150) {
                let s = j as f64 / 2.0;
                let exact = ln_gamma(1.0 + s);
                let got = g.integrate(|x| (s * x.ln() - exact).exp());
                assert!((got - 1.0).abs() < 1e-10, "Q={q} j={j}: {got}");
            }
        }
    }

    #[test]
    fn laguerre_orthogonality() {
        let g = QuadratureGrid::laguerre(32).unwrap();
        let v = g.integrate(|x| laguerre(2, x) * laguerre(3, x));
        assert!(v.abs() < 1e-12);
    }

    #[test]
    fn sqrt_moment_for_radial_grid() {
        let g = QuadratureGrid::radial(64).unwrap();
        let v = g.integrate(f64::sqrt);
        assert!((v - std::f64::consts::PI.sqrt() / 2.0).abs() < 1e-13);
    }

    #[test]
    fn nodes_sorted_and_positive() {
        for fam in [GridFamily::Laguerre, GridFamily::Radial] {
            let g = QuadratureGrid::new(fam, 160).unwrap();
            assert!(g.nodes.windows(2).all(|w| w[0] < w[1]));
            assert!(g.nodes[0] > 0.0);
            assert!(g.weights.iter().all(|&w| w > 0.0 && w.is_finite()));
        }
    }

    #[test]
    fn order_bounds() {
        assert!(QuadratureGrid::laguerre(0).is_err());
        assert!(QuadratureGrid::laguerre(MAX_ORDER + 1).is_err());
    }

    #[test]
    fn legendre_small() {
        let r = legendre_rule(2);
        let t = 1.0 / 3f64.sqrt();
        assert!((r.nodes[0] + t).abs() < 1e-15 && (r.nodes[1] - t).abs() < 1e-15);
        assert!((r.weights[0] - 1.0).abs() < 1e-14);
    }
}
