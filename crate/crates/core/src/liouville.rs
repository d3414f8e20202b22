//! Hyperbolic uniformization: solve the Liouville equation
//! `d_z d_zbar log g = g` on the double cover for the metric density `g`
//! (area form `sqrt(-1) g dz ^ dzbar`), written as `g = ghat exp(2u)` for a
//! smooth positive background `ghat`.
//!
//! The background is the Fubini-Study pullback away from the ramification
//! points, plus a compactly supported bump inside each ramification disc so
//! that `ghat` stays bounded away from zero where the pullback degenerates.
//! The unknown `u` is then a single global scalar function, and the equation
//! becomes `2 d_z d_zbar u = ghat exp(2u) - rho_hat` with the pointwise
//! curvature load `rho_hat = d_z d_zbar log ghat`. Crucially `rho_hat` is
//! evaluated from closed forms per chart rather than by differencing nodal
//! values of `log ghat`: the log of a density is not a global function, and
//! its chart jumps carry the topological content (`integral rho_hat = -2 pi
//! chi` with this normalization).

use crate::disk::jet::{Jet, Var};
use crate::error::{Error, Result};
use crate::fem::cotan_stiffness;
use crate::mesh::{Chart, Realization};
use crate::sparse::{pcg, FnOp};
use crate::target::TargetMetric;
use crate::{c64, C64};

/// Background metric density and its curvature load.
pub struct Background {
    /// Nodal background density, own chart, `sqrt(-1) dz ^ dzbar` units.
    pub ghat: Vec<f64>,
    /// Nodal curvature density `rho_hat = d_z d_zbar log ghat` (diagnostics).
    pub rho_hat: Vec<f64>,
    /// Integrated load `integral phi_i rho_hat` against the hat basis,
    /// assembled with edge-midpoint quadrature. The curvature density swings
    /// rapidly inside the ramification discs, so nodal lumping is far too
    /// crude for it; midpoint quadrature is exact for quadratics and keeps
    /// the Gauss-Bonnet identity of the discrete system accurate.
    pub rho_load: Vec<f64>,
}

/// Bump profile `B(a) = (1 - a)^3` on `a = |t|^2 / tau^2 <= 1`, built as a
/// jet so the curvature load comes out of the same expression.
pub fn ram_background_jet(t0: C64, em: C64, tau: f64, bump: f64) -> (f64, f64) {
    let (z, zb) = Jet::var_pair(Var::Z, Var::Zb, t0);
    let w = &(&z * &z) + em;
    let wb = &(&zb * &zb) + em.conj();
    // Fubini-Study pullback density 4 t tbar * 2 / (1 + w wbar)^2.
    let denom = &(&w * &wb) + c64(1.0, 0.0);
    let recip = denom.recip();
    let fs = &(&(&z * &zb) * &(&recip * &recip)) * c64(8.0, 0.0);
    let a = &(&z * &zb) * c64(1.0 / (tau * tau), 0.0);
    let one_minus = &Jet::constant(c64(1.0, 0.0)) - &a;
    let b3 = &(&one_minus * &one_minus) * &one_minus;
    let ghat = &fs + &(&b3 * c64(bump, 0.0));
    let lg = ghat.ln();
    let rho = lg.d(Var::Z).d(Var::Zb).value();
    (ghat.value().re, rho.re)
}

pub fn background(real: &Realization, target: &TargetMetric) -> Background {
    let mesh = real.mesh;
    let tau = real.mesh.r_ram.sqrt();
    // The round reference metric is centered on the mean branch-point
    // displacement dbar, so that the background co-moves with the
    // configuration: under a common translation of all branch points every
    // nodal background value is unchanged, and the discrete uniformization
    // problem is exactly equivariant.  In the co-moving cap chart
    // zhat = 1/(x - dbar) the shifted round density takes the unshifted
    // closed form 2/(1 + |zhat|^2)^2.
    let dbar = real.dbar;
    let bump_of = |em: C64| 2.0 / (1.0 + (em - dbar).norm_sqr()).powi(2);
    // Curvature density at an arbitrary chart point, closed form.
    let rho_at = |chart: Chart, p: C64| -> f64 {
        match chart {
            Chart::Base => -target.epsilon * 2.0 / (1.0 + (p - dbar).norm_sqr()).powi(2),
            Chart::Cap => -target.epsilon * 2.0 / (1.0 + p.norm_sqr()).powi(2),
            Chart::Ram(m) => {
                let em = real.e[m];
                ram_background_jet(p, em - dbar, tau, bump_of(em)).1
            }
        }
    };
    let n = mesh.n_nodes();
    let mut ghat = vec![0.0; n];
    let mut rho_hat = vec![0.0; n];
    for i in 0..n {
        match mesh.nodes[i].chart {
            Chart::Base | Chart::Cap => {
                // Shifted round density in the node frame; d dbar log h = -h
                // pointwise for the epsilon = +1 sphere.
                let h = -rho_at(mesh.nodes[i].chart, real.pos[i]) / target.epsilon;
                ghat[i] = h;
                rho_hat[i] = -target.epsilon * h;
            }
            Chart::Ram(m) => {
                let em = real.e[m];
                let (g, r) =
                    ram_background_jet(mesh.nodes[i].z(), em - dbar, tau, bump_of(em));
                ghat[i] = g;
                rho_hat[i] = r;
            }
        }
    }
    // Load vector by the three-edge-midpoint rule: on each triangle the
    // measure is 2 * area in sqrt(-1) dz ^ dzbar units, each midpoint gets
    // 2A/3, and the hat function of each adjacent corner is 1/2 there.
    let mut rho_load = vec![0.0; n];
    for (ti, tri) in mesh.tris.iter().enumerate() {
        let c = real.corners[ti];
        let a3 = real.areas[ti] / 3.0;
        for k in 0..3 {
            let (i, j) = (k, (k + 1) % 3);
            let mid = 0.5 * (c[i] + c[j]);
            let v = a3 * rho_at(tri.chart, mid);
            rho_load[tri.v[i]] += v;
            rho_load[tri.v[j]] += v;
        }
    }
    Background { ghat, rho_hat, rho_load }
}

/// Result of the uniformization solve.
pub struct HyperbolicMetric {
    /// Conformal factor: `g = ghat exp(2u)`.
    pub u: Vec<f64>,
    /// Hyperbolic metric density at each node, own chart.
    pub g: Vec<f64>,
    pub background: Background,
    pub newton_iterations: usize,
    /// Final sup norm of the residual density.
    pub residual: f64,
}

impl HyperbolicMetric {
    pub fn total_area(&self, real: &Realization) -> f64 {
        real.integrate(&self.g)
    }

    /// `Gamma_z = d_z log g` at node `i`, given nodal values of `d_z u` and
    /// `d_z log ghat`; kept here for reference, derivative stencils live in
    /// the stencil module.
    pub fn density(&self, i: usize) -> f64 {
        self.g[i]
    }
}

pub struct LiouvilleOptions {
    pub tol: f64,
    pub max_newton: usize,
    pub initial: Option<Vec<f64>>,
}

impl Default for LiouvilleOptions {
    fn default() -> Self {
        LiouvilleOptions { tol: 1e-9, max_newton: 60, initial: None }
    }
}

pub fn solve_liouville(
    real: &Realization,
    target: &TargetMetric,
    opts: &LiouvilleOptions,
) -> Result<HyperbolicMetric> {
    let mesh = real.mesh;
    let n = mesh.n_nodes();
    let k = cotan_stiffness(real);
    let bg = background(real, target);
    let w = &real.weights;

    let mut u: Vec<f64> = opts.initial.clone().unwrap_or_else(|| vec![0.0; n]);
    let residual_vec = |u: &[f64]| -> Vec<f64> {
        let uc: Vec<C64> = u.iter().map(|&x| c64(x, 0.0)).collect();
        let ku = k.matvec(&uc);
        (0..n)
            .map(|i| ku[i].re + w[i] * bg.ghat[i] * (2.0 * u[i]).exp() - bg.rho_load[i])
            .collect()
    };
    // Sup norm in density units (divide out the quadrature weight).
    let density_sup = |f: &[f64]| -> f64 {
        f.iter()
            .zip(w.iter())
            .map(|(fi, wi)| (fi / wi).abs())
            .fold(0.0f64, f64::max)
    };

    let mut res = residual_vec(&u);
    let mut res_norm = density_sup(&res);
    let mut iters = 0usize;
    while res_norm > opts.tol && iters < opts.max_newton {
        // Jacobian: K + diag(2 W ghat exp(2u)), real symmetric positive
        // definite; solve with Jacobi-preconditioned CG.
        let diag: Vec<f64> = (0..n)
            .map(|i| 2.0 * w[i] * bg.ghat[i] * (2.0 * u[i]).exp())
            .collect();
        let kd = k.diagonal();
        let op = FnOp {
            n,
            f: |x: &[C64], y: &mut [C64]| {
                k.matvec_into(x, y);
                for i in 0..n {
                    y[i] += diag[i] * x[i];
                }
            },
        };
        let precond: Vec<f64> = (0..n).map(|i| kd[i].re + diag[i]).collect();
        let rhs: Vec<C64> = res.iter().map(|&r| c64(-r, 0.0)).collect();
        let (step, _stats) = pcg(&op, &rhs, &precond, 1e-12, 4 * n)?;
        // Damped update: backtrack until the residual decreases.
        let mut lambda = 1.0;
        let mut accepted = false;
        for _ in 0..25 {
            let cand: Vec<f64> = (0..n).map(|i| u[i] + lambda * step[i].re).collect();
            let cand_res = residual_vec(&cand);
            let cand_norm = density_sup(&cand_res);
            if cand_norm < res_norm {
                u = cand;
                res = cand_res;
                res_norm = cand_norm;
                accepted = true;
                break;
            }
            lambda *= 0.5;
        }
        iters += 1;
        if !accepted {
            return Err(Error::numerical(format!(
                "Liouville Newton stalled at residual {res_norm:.3e} after {iters} iterations"
            )));
        }
    }
    if res_norm > opts.tol {
        return Err(Error::numerical(format!(
            "Liouville Newton did not converge: residual {res_norm:.3e} after {iters} iterations"
        )));
    }
    let g: Vec<f64> = (0..n).map(|i| bg.ghat[i] * (2.0 * u[i]).exp()).collect();
    Ok(HyperbolicMetric { u, g, background: bg, newton_iterations: iters, residual: res_norm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BranchConfiguration;
    use crate::mesh::{build_mesh, MeshParams};

    fn solve_at(resolution: f64) -> f64 {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution, ..Default::default() };
        let mesh = build_mesh(&config, params).unwrap();
        let real = mesh.realize_reference().unwrap();
        let target = TargetMetric::sphere();
        let metric = solve_liouville(&real, &target, &LiouvilleOptions::default()).unwrap();
        metric.total_area(&real)
    }

    #[test]
    fn background_curvature_load_integrates_to_topology() {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution: 0.15, ..Default::default() };
        let mesh = build_mesh(&config, params).unwrap();
        let real = mesh.realize_reference().unwrap();
        let bg = background(&real, &TargetMetric::sphere());
        // integral of d dbar log ghat = -2 pi chi = 4 pi for chi = -2.
        let total: f64 = bg.rho_load.iter().sum();
        let expect = 4.0 * std::f64::consts::PI;
        assert!(
            (total - expect).abs() / expect < 0.01,
            "curvature load integral {total:.5} vs {expect:.5}"
        );
        assert!(bg.ghat.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn gauss_bonnet_area() {
        let area = solve_at(0.12);
        let expect = 4.0 * std::f64::consts::PI;
        let rel = (area - expect).abs() / expect;
        assert!(rel < 5e-3, "hyperbolic area {area:.6} vs {expect:.6} (rel {rel:.2e})");
    }

    #[test]
    fn refinement_improves_area() {
        let expect = 4.0 * std::f64::consts::PI;
        let e1 = (solve_at(0.24) - expect).abs();
        let e2 = (solve_at(0.12) - expect).abs();
        assert!(
            e2 < 0.55 * e1,
            "area error did not shrink under refinement: {e1:.3e} -> {e2:.3e}"
        );
    }
}
