//! Gauss-Hermite quadrature.
//!
//! Nodes are the eigenvalues of the symmetric Jacobi matrix of the Hermite
//! recurrence (zero diagonal, off-diagonal `sqrt(k/2)`), found with implicit
//! QL iterations and then polished by Newton steps on the orthonormal
//! recurrence. Weights are carried in log form so that the "modified"
//! weights `w_i e^{x_i^2}` stay accurate far into the tails, which is what
//! lets [`GaussHermite::integrate_line`] handle integrands that carry their
//! own Gaussian factor.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{invalid, Error, Result};

/// Largest rule the cache will build.
pub const MAX_ORDER: usize = 1 << 12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    /// `ln w_i` for the weight function `e^{-x^2}`.
    log_weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Result<Self> {
        if order == 0 {
            return Err(invalid("quadrature order must be positive"));
        }
        if order > MAX_ORDER {
            return Err(Error::ResourceLimit(format!("quadrature order {order} exceeds {MAX_ORDER}")));
        }
        let mut nodes = jacobi_eigenvalues(order)?;
        nodes.sort_by(f64::total_cmp);
        let mut log_weights = Vec::with_capacity(order);
        for x in nodes.iter_mut() {
            let mut z = *x;
            let mut log_dp = 0.0;
            for _ in 0..3 {
                let (ratio, ldp) = newton_ratio(order, z);
                log_dp = ldp;
                z -= ratio;
                if ratio.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            *x = z;
            log_weights.push(std::f64::consts::LN_2 - 2.0 * log_dp);
        }
        Ok(GaussHermite { nodes, log_weights })
    }

    /// Shared, lazily built rule of the given order.
    pub fn cached(order: usize) -> Result<Arc<GaussHermite>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussHermite>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(rule) = cache.lock().expect("quadrature cache poisoned").get(&order) {
            return Ok(Arc::clone(rule));
        }
        let rule = Arc::new(GaussHermite::new(order)?);
        cache.lock().expect("quadrature cache poisoned").entry(order).or_insert_with(|| Arc::clone(&rule));
        Ok(rule)
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> impl Iterator<Item = f64> + '_ {
        self.log_weights.iter().map(|lw| lw.exp())
    }

    /// `∫ e^{-x^2} f(x) dx`
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.log_weights).map(|(&x, &lw)| lw.exp() * f(x)).sum()
    }

    /// `∫ f(t) dt` over the real line, sampling at `t = center + scale * x_i`.
    ///
    /// `f` must decay at least like a Gaussian of width comparable to `scale`.
    pub fn integrate_line<F: FnMut(f64) -> f64>(&self, center: f64, scale: f64, mut f: F) -> f64 {
        self.line_points(center, scale).map(|(t, w)| w * f(t)).sum()
    }

    /// Sample points `t_i` and weights `W_i` with `∫ f(t) dt ≈ Σ W_i f(t_i)`.
    pub fn line_points(&self, center: f64, scale: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().zip(&self.log_weights).filter_map(move |(&x, &lw)| {
            let w = (lw + x * x).exp() * scale;
            (w.is_finite() && w > 0.0).then_some((center + scale * x, w))
        })
    }
}

/// Newton correction `p_n / p_n'` at `z` and `ln |p_n'(z)|` for the
/// orthonormal Hermite polynomials, with rescaling against overflow.
fn newton_ratio(n: usize, z: f64) -> (f64, f64) {
    const BIG: f64 = 1e150;
    let mut p1 = std::f64::consts::PI.powf(-0.25);
    let mut p2 = 0.0;
    let mut log_scale = 0.0;
    for j in 0..n {
        let p3 = p2;
        p2 = p1;
        let jf = j as f64;
        p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
        if p1.abs() > BIG {
            p1 /= BIG;
            p2 /= BIG;
            log_scale += BIG.ln();
        }
    }
    let dp = (2.0 * n as f64).sqrt() * p2;
    (p1 / dp, dp.abs().ln() + log_scale)
}

/// Eigenvalues of the symmetric tridiagonal Jacobi matrix for the Hermite weight.
fn jacobi_eigenvalues(n: usize) -> Result<Vec<f64>> {
    let mut d = vec![0.0f64; n];
    let mut e: Vec<f64> = (1..=n).map(|k| if k < n { (k as f64 / 2.0).sqrt() } else { 0.0 }).collect();
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::Numerical(format!("QL iteration failed to converge for order {n}")));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0, 1.0, 0.0);
            let mut deflated = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    deflated = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
            }
            if deflated {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(d)
}
