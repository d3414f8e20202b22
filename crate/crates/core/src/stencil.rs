//! Nodal derivative stencils.
//!
//! For each node, a weighted least-squares polynomial fit over its two-ring
//! neighborhood yields linear functionals approximating `d_z` and `d_zbar`
//! in the node's own chart. Neighbor values must be supplied *in that
//! chart*; callers convert fields with the appropriate factor (tensor
//! weight, additive log-density shift, ...) via the closure they pass in.
//!
//! In ramification charts the basis is augmented with pure cubic and
//! quartic powers: pullbacks through `x = e + t^2` and sections carrying a
//! `zeta = 2t` factor have large low-order odd/even structure there, and the
//! augmented fit keeps the stencils second-order accurate across the disc.

use crate::error::{Error, Result};
use crate::mesh::{Chart, Realization};
use crate::{c64, C64};
use nalgebra::DMatrix;

pub struct Stencils {
    /// Neighborhood per node; entry 0 is the node itself.
    pub neigh: Vec<Vec<usize>>,
    /// Coefficients: `d_z f(i) = sum_k dz[i][k] * f(neigh[i][k])`.
    pub dz: Vec<Vec<C64>>,
    pub dzb: Vec<Vec<C64>>,
    /// Neighbor coordinates in the chart of the stencil's node.
    pub coords: Vec<Vec<C64>>,
}

impl Stencils {
    pub fn build(real: &Realization) -> Result<Stencils> {
        let mesh = real.mesh;
        let n = mesh.n_nodes();
        let mut neigh = Vec::with_capacity(n);
        let mut dz = Vec::with_capacity(n);
        let mut dzb = Vec::with_capacity(n);
        let mut coords = Vec::with_capacity(n);
        let compatible = |a: Chart, b: Chart| -> bool {
            match (a, b) {
                (x, y) if x == y => true,
                (Chart::Ram(_), Chart::Ram(_)) => false,
                (Chart::Ram(_), Chart::Cap) | (Chart::Cap, Chart::Ram(_)) => false,
                _ => true,
            }
        };
        for i in 0..n {
            let ci = mesh.nodes[i].chart;
            let mut ids = vec![i];
            // Two-rings can graze a neighboring ramification disc through a
            // base node in between; such nodes have no common chart with the
            // stencil's node and are dropped from the fit.
            ids.extend(
                mesh.two_ring(i)
                    .into_iter()
                    .filter(|&m| compatible(ci, mesh.nodes[m].chart)),
            );
            let zi = mesh.nodes[i].z();
            let deltas: Vec<C64> = ids
                .iter()
                .map(|&m| real.coord_in_chart_of(i, m) - zi)
                .collect();
            let quartic = matches!(mesh.nodes[i].chart, Chart::Ram(_));
            let (row_z, row_zb) = ls_derivative_rows(&deltas, quartic).map_err(|e| {
                Error::numerical(format!("stencil at node {i}: {e}"))
            })?;
            coords.push(deltas.iter().map(|d| zi + d).collect());
            neigh.push(ids);
            dz.push(row_z);
            dzb.push(row_zb);
        }
        Ok(Stencils { neigh, dz, dzb, coords })
    }

    /// Apply `d_z` at node `i`; `f(k, n)` must return the field value at
    /// node `n` (the `k`-th neighbor) expressed in the chart of node `i`.
    pub fn apply_dz(&self, i: usize, mut f: impl FnMut(usize, usize) -> C64) -> C64 {
        self.neigh[i]
            .iter()
            .enumerate()
            .map(|(k, &m)| self.dz[i][k] * f(k, m))
            .sum()
    }

    pub fn apply_dzb(&self, i: usize, mut f: impl FnMut(usize, usize) -> C64) -> C64 {
        self.neigh[i]
            .iter()
            .enumerate()
            .map(|(k, &m)| self.dzb[i][k] * f(k, m))
            .sum()
    }
}

/// Least-squares rows for first derivatives from scattered complex offsets
/// (one of which is 0). Basis: `1, d, dbar, d^2, d dbar, dbar^2`, plus
/// `d^3, dbar^3, d^4, dbar^4` when `quartic` is set.
fn ls_derivative_rows(deltas: &[C64], quartic: bool) -> std::result::Result<(Vec<C64>, Vec<C64>), String> {
    let m = deltas.len();
    let p = if quartic { 10 } else { 6 };
    if m < p + 2 {
        return Err(format!("{m} neighbors for a {p}-term basis"));
    }
    let scale = (deltas.iter().map(|d| d.norm_sqr()).sum::<f64>() / (m as f64 - 1.0)).sqrt();
    if !(scale > 0.0) {
        return Err("degenerate neighborhood".into());
    }
    let sigma2 = 2.0 * scale * scale;
    // Weighted basis matrix B (m x p) and weights.
    let mut b = DMatrix::<C64>::zeros(m, p);
    let mut w = vec![0.0f64; m];
    for (k, &dlt) in deltas.iter().enumerate() {
        let d = dlt / scale;
        let db = d.conj();
        w[k] = (-dlt.norm_sqr() / sigma2).exp();
        let row: [C64; 10] = [
            c64(1.0, 0.0),
            d,
            db,
            d * d,
            d * db,
            db * db,
            d * d * d,
            db * db * db,
            d * d * d * d,
            db * db * db * db,
        ];
        for j in 0..p {
            b[(k, j)] = row[j] * w[k];
        }
    }
    // Normal equations: coefficients c = (B^H B)^{-1} B^H (w .* f).
    let bh = b.adjoint();
    let mut gram = &bh * &b;
    let reg = 1e-13 * gram.trace().re.max(1.0);
    for j in 0..p {
        gram[(j, j)] += c64(reg, 0.0);
    }
    let inv = gram
        .try_inverse()
        .ok_or_else(|| "singular least-squares system".to_string())?;
    let pinv = inv * bh; // p x m, acts on (w .* f)
    let mut row_z = Vec::with_capacity(m);
    let mut row_zb = Vec::with_capacity(m);
    for k in 0..m {
        row_z.push(pinv[(1, k)] * w[k] / scale);
        row_zb.push(pinv[(2, k)] * w[k] / scale);
    }
    Ok((row_z, row_zb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BranchConfiguration;
    use crate::mesh::{build_mesh, MeshParams};

    fn fixture(resolution: f64) -> (crate::mesh::CoveringMesh, ) {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution, ..Default::default() };
        (build_mesh(&config, params).unwrap(),)
    }

    /// Globally smooth test scalar: `f = Re(w) / (1 + |w|^2)` pulled back
    /// through `beta`; the formula is invariant under `w -> 1/w`, so the
    /// same expression is valid in both target frames.
    fn f_of(w: C64) -> C64 {
        c64(w.re / (1.0 + w.norm_sqr()), 0.0)
    }
    fn df_dw(w: C64) -> C64 {
        // f = (w + wbar) / (2 (1 + w wbar))
        let d = 1.0 + w.norm_sqr();
        c64(0.5, 0.0) / d - (w + w.conj()) * w.conj() / (2.0 * d * d)
    }

    #[test]
    fn differentiates_global_scalar() {
        let (mesh,) = fixture(0.12);
        let real = mesh.realize_reference().unwrap();
        let st = Stencils::build(&real).unwrap();
        let n = mesh.n_nodes();
        let vals: Vec<C64> = (0..n).map(|i| f_of(real.beta[i])).collect();
        let mut worst = 0.0f64;
        for i in 0..n {
            let got = st.apply_dz(i, |_, m| vals[m]);
            // Chain rule: d_z f = f'(w) * zeta in the node's own frame.
            let expect = df_dw(real.beta[i]) * real.zeta[i];
            worst = worst.max((got - expect).norm());
        }
        assert!(worst < 0.02, "max d_z error {worst:.3e}");
        let mut worst_b = 0.0f64;
        for i in 0..n {
            let got = st.apply_dzb(i, |_, m| vals[m]);
            let expect = (df_dw(real.beta[i]) * real.zeta[i]).conj();
            worst_b = worst_b.max((got - expect).norm());
        }
        assert!(worst_b < 0.02, "max d_zbar error {worst_b:.3e}");
    }

    #[test]
    fn error_shrinks_under_refinement() {
        let err_at = |res: f64| -> f64 {
            let (mesh,) = fixture(res);
            let real = mesh.realize_reference().unwrap();
            let st = Stencils::build(&real).unwrap();
            let n = mesh.n_nodes();
            let vals: Vec<C64> = (0..n).map(|i| f_of(real.beta[i])).collect();
            let mut sum = 0.0;
            for i in 0..n {
                let got = st.apply_dz(i, |_, m| vals[m]);
                let expect = df_dw(real.beta[i]) * real.zeta[i];
                sum += (got - expect).norm_sqr() * real.weights[i];
            }
            sum.sqrt()
        };
        let e1 = err_at(0.24);
        let e2 = err_at(0.12);
        assert!(e2 < 0.45 * e1, "stencil L2 error {e1:.3e} -> {e2:.3e}");
    }

    #[test]
    fn kills_constants_and_is_exact_on_quadratics() {
        let (mesh,) = fixture(0.2);
        let real = mesh.realize_reference().unwrap();
        let st = Stencils::build(&real).unwrap();
        for i in (0..mesh.n_nodes()).step_by(37) {
            let zi = mesh.nodes[i].z();
            let dc = st.apply_dz(i, |_, _| c64(3.0, -1.0));
            assert!(dc.norm() < 1e-9, "constant leak {:.3e}", dc.norm());
            // quadratic in the own chart: q(z) = (z - z_i)^2 + 2 (z - z_i)
            let got = st.apply_dz(i, |k, _| {
                let d = st.coords[i][k] - zi;
                d * d + 2.0 * d
            });
            assert!((got - 2.0).norm() < 1e-7, "quadratic d_z {got}");
            let gotb = st.apply_dzb(i, |k, _| {
                let d = st.coords[i][k] - zi;
                d * d + 2.0 * d
            });
            assert!(gotb.norm() < 1e-7, "quadratic d_zbar {gotb}");
        }
    }
}
