//! Two-sheeted chart mesh of the hyperelliptic covering surface
//! `y^2 = prod_m (x - e_m)`, `beta = x`.
//!
//! Chart atlas:
//! * base chart `z = x` (two sheets), on an annulus-with-holes region
//!   `|x| <= R0` minus discs of radius `r_ram` around each branch point,
//! * one ramification chart per branch point, coordinate `t` with
//!   `x = e_m + t^2` (a single disc in `t` covers both sheets),
//! * a cap chart `zhat = 1/x` per sheet around `x = infinity`; target-frame
//!   sections are stored there in the `what = 1/w` frame.
//!
//! The base region is triangulated with a constrained Delaunay triangulation
//! whose constraint edges include straight branch cuts pairing the branch
//! points; the double cover is assembled by a union-find over triangle-corner
//! slots, with sheet flips across cut edges and per-edge `y`-value matching
//! along ramification-chart interfaces.

mod build;

pub use build::build_mesh;

use crate::config::BranchConfiguration;
use crate::error::{Error, Result};
use crate::target::TargetMetric;
use crate::{c64, C64};
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Chart {
    Base,
    Cap,
    Ram(usize),
}

impl Chart {
    fn rank(&self) -> usize {
        match self {
            Chart::Ram(m) => *m,
            Chart::Base => 100,
            Chart::Cap => 101,
        }
    }
}

/// Sheet tag: 0/1 for base and cap nodes; 2 marks nodes owned by a
/// ramification chart (which covers both sheets).
pub const SHEET_BOTH: u8 = 2;

#[derive(Debug, Clone, Serialize)]
pub struct MeshNode {
    pub chart: Chart,
    pub sheet: u8,
    /// Coordinate in the owning chart (`x`, `t`, or `zhat`).
    pub coord: [f64; 2],
}

impl MeshNode {
    pub fn z(&self) -> C64 {
        c64(self.coord[0], self.coord[1])
    }
}

/// How a triangle corner's coordinate (in the triangle's chart) depends on
/// the branch-point positions: fixed, or the base-chart image `e_m + t^2`
/// of a ramification-owned interface node.
#[derive(Debug, Clone, Copy)]
pub enum CornerSrc {
    Fixed(C64),
    FromRam { m: usize, t: C64 },
}

#[derive(Debug, Clone)]
pub struct MeshTriangle {
    pub chart: Chart,
    pub sheet: u8,
    pub v: [usize; 3],
    pub corner: [CornerSrc; 3],
}

#[derive(Debug, Clone, Copy)]
pub struct MeshParams {
    /// Target edge length, measured so that the Fubini-Study-graded base
    /// spacing is `resolution * (1 + |x|^2) / 2`.
    pub resolution: f64,
    /// Base/cap interface radius in the `x` chart.
    pub r0: f64,
    /// Optional override of the ramification-chart radius (in `x` units).
    pub r_ram: Option<f64>,
}

impl Default for MeshParams {
    fn default() -> Self {
        MeshParams { resolution: 0.08, r0: 3.0, r_ram: None }
    }
}

#[derive(Debug, Clone)]
pub struct CoveringMesh {
    pub config: BranchConfiguration,
    pub params: MeshParams,
    pub r_ram: f64,
    pub nodes: Vec<MeshNode>,
    pub tris: Vec<MeshTriangle>,
    /// Branch-point index pairs joined by cuts.
    pub cut_pairs: Vec<(usize, usize)>,
    pub euler_characteristic: i64,
    /// One-ring node adjacency.
    pub neighbors: Vec<Vec<usize>>,
}

impl CoveringMesh {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Two-ring neighborhood of a node (excluding the node itself).
    pub fn two_ring(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::new();
        for &n in &self.neighbors[i] {
            if n != i && !out.contains(&n) {
                out.push(n);
            }
            for &n2 in &self.neighbors[n] {
                if n2 != i && !out.contains(&n2) {
                    out.push(n2);
                }
            }
        }
        out.sort_unstable();
        out
    }

    /// Geometric realization at branch positions `e` (same combinatorics,
    /// possibly displaced branch points).
    pub fn realize(&self, e: &[C64]) -> Result<Realization<'_>> {
        Realization::new(self, e)
    }

    /// Radii of the blend bumps that carry base-region nodes along with the
    /// branch points: rigid out to `R1` (just past the ramification disc, so
    /// nodes adjacent to the interface move with it exactly) and zero from
    /// `R2` on (before any other branch point's disc, so foreign holes stay
    /// put).
    pub fn blend_radii(&self) -> (f64, f64) {
        let r1 = self.r_ram + 0.1;
        let max_e = self
            .config
            .branch_points
            .iter()
            .map(|e| e.norm())
            .fold(0.0, f64::max);
        let r2 = (self.config.min_separation - r1).min(CAP_CHART_RADIUS - max_e);
        (r1, r2)
    }

    /// Coefficients of the mesh blend field.  Moving branch points while the
    /// base-region nodes stay put distorts the triangulation at rate 1/h
    /// across the ramification interfaces, which ruins parameter derivatives
    /// of the discrete solution there.  Instead the whole base region is
    /// displaced by a smooth field `D(x) = mean + sum_k c_k p(|x - e0_k|)`
    /// with plateau profile `p` that interpolates the branch displacements
    /// exactly: `blend_coeffs` returns the mean displacement and solves the
    /// small interpolation system `sum_k c_k p_k(e0_j) = rhs_j - mean`.
    /// Splitting off the mean makes a common translation of all branch
    /// points displace the whole base region rigidly.
    pub fn blend_coeffs(&self, rhs: &[C64]) -> (C64, Vec<C64>) {
        let e0 = &self.config.branch_points;
        let b = e0.len();
        let mean = rhs.iter().sum::<C64>() / b as f64;
        let (r1, r2) = self.blend_radii();
        let m = nalgebra::DMatrix::<f64>::from_fn(b, b, |j, k| {
            blend_profile((e0[j] - e0[k]).norm(), r1, r2).0
        });
        let mut rhs_m = nalgebra::DMatrix::<f64>::zeros(b, 2);
        for (j, v) in rhs.iter().enumerate() {
            let v = v - mean;
            rhs_m[(j, 0)] = v.re;
            rhs_m[(j, 1)] = v.im;
        }
        let sol = m
            .lu()
            .solve(&rhs_m)
            .expect("blend interpolation system is singular");
        (mean, (0..b).map(|j| c64(sol[(j, 0)], sol[(j, 1)])).collect())
    }

    /// Blend field and its Wirtinger derivatives `(W, d_x W, d_xbar W)` at a
    /// base-chart point.
    pub fn blend_field(&self, mean: C64, c: &[C64], x: C64) -> (C64, C64, C64) {
        let e0 = &self.config.branch_points;
        let (r1, r2) = self.blend_radii();
        let mut w = mean;
        let mut wz = c64(0.0, 0.0);
        let mut wzb = c64(0.0, 0.0);
        for (ck, ek) in c.iter().zip(e0) {
            let d = x - ek;
            let r = d.norm();
            let (phi, dphi) = blend_profile(r, r1, r2);
            w += ck * phi;
            if dphi != 0.0 {
                // d_x r = dbar/(2r), d_xbar r = d/(2r).
                wz += ck * dphi * d.conj() / (2.0 * r);
                wzb += ck * dphi * d / (2.0 * r);
            }
        }
        (w, wz, wzb)
    }

    pub fn realize_reference(&self) -> Result<Realization<'_>> {
        self.realize(&self.config.branch_points)
    }

    /// JSON dump of nodes, cells and weights (golden-test format).
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Dump<'a> {
            nodes: &'a [MeshNode],
            cells: Vec<[usize; 3]>,
            weights: Vec<f64>,
            euler_characteristic: i64,
        }
        let realization = self.realize_reference()?;
        let dump = Dump {
            nodes: &self.nodes,
            cells: self.tris.iter().map(|t| t.v).collect(),
            weights: realization.weights.clone(),
            euler_characteristic: self.euler_characteristic,
        };
        Ok(serde_json::to_string_pretty(&dump)?)
    }
}

/// Geometry of the mesh for one assignment of branch-point positions.
pub struct Realization<'a> {
    pub mesh: &'a CoveringMesh,
    pub e: Vec<C64>,
    /// Mean branch-point displacement: the co-moving cap chart is
    /// `zhat = 1/(x - dbar)`.
    pub dbar: C64,
    /// Corner coordinates per triangle, in the triangle's chart.
    pub corners: Vec<[C64; 3]>,
    /// Euclidean triangle areas in the triangle's chart.
    pub areas: Vec<f64>,
    /// Lumped node quadrature weights in `sqrt(-1) dz ^ dzbar` units of the
    /// node's own chart: `integrate(f) = sum W_i f_i` for own-chart
    /// (1,1)-densities `f`.
    pub weights: Vec<f64>,
    /// Displaced node coordinate in the node's own chart: base/cap nodes are
    /// carried along with the branch points by the blend field, ram nodes
    /// keep their t coordinate.  Equals the stored node coordinate at the
    /// reference configuration.
    pub pos: Vec<C64>,
    /// `beta` at each node, expressed in the node's target frame
    /// (`w` for base/ram nodes, `what = 1/w` for cap nodes).
    pub beta: Vec<C64>,
    /// `zeta = d beta / d z` in the node's own chart and target frame.
    pub zeta: Vec<C64>,
}

impl<'a> Realization<'a> {
    fn new(mesh: &'a CoveringMesh, e: &[C64]) -> Result<Realization<'a>> {
        if e.len() != mesh.config.branch_points.len() {
            return Err(Error::config("realization: wrong number of branch points"));
        }
        let e = e.to_vec();
        // Smooth blend displacement carrying the base region along with the
        // branch points (see `CoveringMesh::blend_coeffs`).
        let delta: Vec<C64> = e
            .iter()
            .zip(&mesh.config.branch_points)
            .map(|(a, b)| a - b)
            .collect();
        let moving = delta.iter().any(|d| d.norm() > 0.0);
        let (dbar, coeffs) = if moving {
            mesh.blend_coeffs(&delta)
        } else {
            (c64(0.0, 0.0), vec![c64(0.0, 0.0); delta.len()])
        };
        let displace = |x: C64| -> C64 {
            if moving {
                x + mesh.blend_field(dbar, &coeffs, x).0
            } else {
                x
            }
        };
        // The cap chart co-moves with the branch points: zhat_s =
        // 1/(x - dbar).  Beyond the blend support the base region moves
        // rigidly by dbar, so every pure-cap node keeps its zhat coordinate
        // and the cap subsystem is exactly invariant under a common
        // translation of all branch points.
        let cap_coord = |zh0: C64| -> C64 {
            if !moving || zh0.norm() < 0.3 {
                // Blend bumps are identically zero beyond the cap seam, so
                // displace(x) = x + dbar there and the coordinate is static;
                // this branch also covers the chart center x = infinity.
                zh0
            } else {
                (displace(zh0.inv()) - dbar).inv()
            }
        };
        let mut corners = Vec::with_capacity(mesh.tris.len());
        let mut areas = Vec::with_capacity(mesh.tris.len());
        let mut weights = vec![0.0f64; mesh.nodes.len()];
        for tri in &mesh.tris {
            let c: Vec<C64> = tri
                .corner
                .iter()
                .map(|src| match src {
                    CornerSrc::Fixed(z) => match tri.chart {
                        Chart::Base => displace(*z),
                        Chart::Cap => cap_coord(*z),
                        Chart::Ram(_) => *z,
                    },
                    CornerSrc::FromRam { m, t } => e[*m] + t * t,
                })
                .collect();
            let c = [c[0], c[1], c[2]];
            let ar = signed_area(c);
            if ar <= 0.0 {
                return Err(Error::mesh(format!(
                    "triangle with non-positive area {ar:.3e} in chart {:?}",
                    tri.chart
                )));
            }
            corners.push(c);
            areas.push(ar);
        }
        let pos: Vec<C64> = mesh
            .nodes
            .iter()
            .map(|node| match node.chart {
                Chart::Base => displace(node.z()),
                // Pure-cap nodes are static in the co-moving cap chart.
                Chart::Cap => cap_coord(node.z()),
                Chart::Ram(_) => node.z(),
            })
            .collect();
        let mut r = Realization {
            mesh,
            e,
            dbar,
            corners,
            areas,
            weights,
            pos,
            beta: Vec::new(),
            zeta: Vec::new(),
        };
        // Lumped weights with chart conversion: the density value carried at
        // a node lives in the node's own chart; a triangle in chart `c`
        // contributes (2 area / 3) * |dz_own/dz_c|^2 evaluated at the node.
        weights = vec![0.0f64; mesh.nodes.len()];
        for (ti, tri) in mesh.tris.iter().enumerate() {
            for (k, &vi) in tri.v.iter().enumerate() {
                let jac = r.node_to_tri_jacobian(vi, tri, r.corners[ti][k]);
                weights[vi] += (2.0 * r.areas[ti] / 3.0) * jac.norm_sqr();
            }
        }
        r.weights = weights;
        // beta and zeta per node.
        let mut beta = Vec::with_capacity(mesh.nodes.len());
        let mut zeta = Vec::with_capacity(mesh.nodes.len());
        for (ni, node) in mesh.nodes.iter().enumerate() {
            let z = r.pos[ni];
            match node.chart {
                Chart::Base => {
                    beta.push(z);
                    zeta.push(c64(1.0, 0.0));
                }
                Chart::Cap => {
                    // what = 1/beta = 1/x with x = 1/zhat + dbar, so
                    // what = zhat/(1 + dbar zhat), d what/d zhat =
                    // 1/(1 + dbar zhat)^2.
                    let d = 1.0 + r.dbar * z;
                    beta.push(z / d);
                    zeta.push(1.0 / (d * d));
                }
                Chart::Ram(m) => {
                    beta.push(r.e[m] + z * z);
                    zeta.push(2.0 * z);
                }
            }
        }
        r.beta = beta;
        r.zeta = zeta;
        Ok(r)
    }

    /// `dz_own(node) / dz_chart(tri)` evaluated at the node, where the
    /// node's position in the triangle chart is `pos_in_tri`.
    fn node_to_tri_jacobian(&self, vi: usize, tri: &MeshTriangle, pos_in_tri: C64) -> C64 {
        let node = &self.mesh.nodes[vi];
        match (node.chart, tri.chart) {
            (a, b) if a == b => c64(1.0, 0.0),
            (Chart::Ram(_), Chart::Base) => {
                // dt/dx = 1/(2t) at the node.
                let t = node.z();
                1.0 / (2.0 * t)
            }
            (Chart::Base, Chart::Cap) => {
                // dx/dzhat = -1/zhat^2 at the node; zhat = pos_in_tri.
                -1.0 / (pos_in_tri * pos_in_tri)
            }
            (Chart::Cap, Chart::Base) => {
                // dzhat/dx = -1/(x - dbar)^2 at the node; x = pos_in_tri.
                let d = pos_in_tri - self.dbar;
                -1.0 / (d * d)
            }
            (a, b) => panic!("unexpected chart pairing node {a:?} / triangle {b:?}"),
        }
    }

    /// Coordinate of node `n` in the chart of node `i` (for stencils).
    /// Square-root branches are resolved toward the chart owner's position.
    pub fn coord_in_chart_of(&self, i: usize, n: usize) -> C64 {
        let ci = self.mesh.nodes[i].chart;
        self.coord_in_chart(ci, self.mesh.nodes[i].z(), n)
    }

    /// Coordinate of node `n` in chart `chart`; `near` resolves the branch
    /// of `t = sqrt(x - e_m)`.
    pub fn coord_in_chart(&self, chart: Chart, near: C64, n: usize) -> C64 {
        let node = &self.mesh.nodes[n];
        let zn = node.z();
        match (chart, node.chart) {
            (a, b) if a == b => zn,
            (Chart::Base, Chart::Ram(m)) => self.e[m] + zn * zn,
            (Chart::Base, Chart::Cap) => 1.0 / zn + self.dbar,
            (Chart::Ram(m), Chart::Base) => {
                let s = (zn - self.e[m]).sqrt();
                if (s - near).norm_sqr() <= (-s - near).norm_sqr() {
                    s
                } else {
                    -s
                }
            }
            (Chart::Cap, Chart::Base) => 1.0 / (zn - self.dbar),
            (a, b) => panic!("no overlap between charts {a:?} and {b:?}"),
        }
    }

    /// `dz_chart(i) / dz_chart(n)` at node `n`: converts (1,0)-components of
    /// node `n` into chart of node `i`.
    pub fn dz_factor(&self, i: usize, n: usize) -> C64 {
        let ci = self.mesh.nodes[i].chart;
        let cn = self.mesh.nodes[n].chart;
        let zn = self.mesh.nodes[n].z();
        match (ci, cn) {
            (a, b) if a == b => c64(1.0, 0.0),
            (Chart::Base, Chart::Ram(_)) => 2.0 * zn, // dx/dt
            (Chart::Ram(_), Chart::Base) => {
                let t = self.coord_in_chart_of(i, n);
                1.0 / (2.0 * t)
            }
            (Chart::Base, Chart::Cap) => -1.0 / (zn * zn), // dx/dzhat
            (Chart::Cap, Chart::Base) => -1.0 / (zn * zn), // dzhat/dx
            (a, b) => panic!("no overlap between charts {a:?} and {b:?}"),
        }
    }

    /// `dw_frame(i) / dw_frame(n)` at node `n`'s target point: converts
    /// target-frame section components of node `n` into the frame of `i`.
    pub fn dw_factor(&self, i: usize, n: usize) -> C64 {
        let fi = matches!(self.mesh.nodes[i].chart, Chart::Cap);
        let fn_ = matches!(self.mesh.nodes[n].chart, Chart::Cap);
        match (fi, fn_) {
            (a, b) if a == b => c64(1.0, 0.0),
            (true, false) => {
                // dwhat/dw = -1/w^2 at node n (beta stored in w frame).
                let w = self.beta[n];
                -1.0 / (w * w)
            }
            (false, true) => {
                // dw/dwhat = -1/what^2 at node n (beta stored in what frame).
                let wh = self.beta[n];
                -1.0 / (wh * wh)
            }
            _ => unreachable!(),
        }
    }

    /// Target metric density `h` at a node, in the node's own target frame
    /// (the Fubini-Study formula is frame-symmetric under `w -> 1/w`).
    pub fn h(&self, target: &TargetMetric, n: usize) -> f64 {
        target.h(self.beta[n])
    }

    /// Integrate an own-chart (1,1)-density sampled at nodes.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(v, w)| v * w).sum()
    }

    pub fn integrate_c(&self, f: &[C64]) -> C64 {
        f.iter().zip(&self.weights).map(|(v, &w)| v * w).sum()
    }
}

/// Base-chart radius beyond which nodes are reassigned to the cap chart
/// (`zhat = 1/(x - center)`): the Fubini-Study density in the x frame decays
/// like `|x|^{-4}` out there, which amplifies relative stencil errors of
/// density-valued fields by its inverse.
pub const CAP_CHART_RADIUS: f64 = 1.75;

/// Radial plateau profile of the blend bumps and its derivative: 1 for
/// r <= r1, a C^2 quintic-smoothstep descent to 0 at r = r2.
fn blend_profile(r: f64, r1: f64, r2: f64) -> (f64, f64) {
    if r <= r1 {
        (1.0, 0.0)
    } else if r >= r2 {
        (0.0, 0.0)
    } else {
        let t = (r - r1) / (r2 - r1);
        let st = t * t * t * (10.0 - 15.0 * t + 6.0 * t * t);
        let dst = 30.0 * t * t * (1.0 - t) * (1.0 - t) / (r2 - r1);
        (1.0 - st, -dst)
    }
}

pub(crate) fn signed_area(c: [C64; 3]) -> f64 {
    0.5 * ((c[1] - c[0]).re * (c[2] - c[0]).im - (c[1] - c[0]).im * (c[2] - c[0]).re)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BranchConfiguration;

    fn sixth_roots_mesh(resolution: f64) -> CoveringMesh {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution, ..Default::default() };
        build_mesh(&config, params).expect("mesh build")
    }

    #[test]
    fn euler_characteristic_is_minus_two() {
        let mesh = sixth_roots_mesh(0.18);
        assert_eq!(mesh.euler_characteristic, -2);
    }

    #[test]
    fn refinement_scales_node_count() {
        let coarse = sixth_roots_mesh(0.3);
        let fine = sixth_roots_mesh(0.15);
        let ratio = fine.n_nodes() as f64 / coarse.n_nodes() as f64;
        assert!(
            ratio > 2.5 && ratio < 6.0,
            "halving resolution should roughly quadruple nodes: {} -> {} (ratio {ratio:.2})",
            coarse.n_nodes(),
            fine.n_nodes()
        );
    }

    #[test]
    fn quadrature_covers_chart_regions() {
        let mesh = sixth_roots_mesh(0.15);
        let r = mesh.realize_reference().unwrap();
        // Total weight of ramification-chart nodes: at least the t-disc of
        // radius sqrt(r_ram) (area pi * r_ram, doubled in sqrt(-1)dz^dzbar
        // units). Interface-ring nodes are owned by the ramification chart
        // but also collect mass from adjacent base triangles on both sheets,
        // so the sum exceeds the bare disc by a boundary band.
        let mut ram_w = vec![0.0f64; 6];
        for (i, node) in mesh.nodes.iter().enumerate() {
            if let Chart::Ram(m) = node.chart {
                ram_w[m] += r.weights[i];
            }
        }
        let disc = 2.0 * std::f64::consts::PI * mesh.r_ram;
        for (m, w) in ram_w.iter().enumerate() {
            assert!(
                *w > 0.95 * disc && *w < 1.8 * disc,
                "ram chart {m}: weight {w:.4} vs disc {disc:.4}"
            );
        }
    }

    #[test]
    fn zeta_transforms_as_tensor() {
        let mesh = sixth_roots_mesh(0.18);
        let r = mesh.realize_reference().unwrap();
        // At ram-owned interface-adjacent nodes, convert zeta to the base
        // chart and compare with d beta/dx = 1.
        let mut checked = 0;
        for (i, node) in mesh.nodes.iter().enumerate() {
            if let Chart::Ram(_) = node.chart {
                let t = node.z();
                if t.norm() < 1e-12 {
                    continue;
                }
                // zeta in base chart: zeta_t * dt/dx = 2t * 1/(2t) = 1.
                let zeta_base = r.zeta[i] * (1.0 / (2.0 * t));
                assert!((zeta_base - c64(1.0, 0.0)).norm() < 1e-10);
                checked += 1;
            }
        }
        assert!(checked > 100);
    }

    #[test]
    fn total_area_matches_double_cover_of_sphere() {
        // integral of pullback FS density over X = 2 * 4pi (degree 2).
        let mesh = sixth_roots_mesh(0.15);
        let r = mesh.realize_reference().unwrap();
        let t = TargetMetric::sphere();
        let dens: Vec<f64> = (0..mesh.n_nodes())
            .map(|i| r.h(&t, i) * r.zeta[i].norm_sqr())
            .collect();
        let total = r.integrate(&dens);
        let expect = 2.0 * 4.0 * std::f64::consts::PI;
        let rel = (total - expect).abs() / expect;
        assert!(rel < 0.01, "pullback area {total:.4} vs {expect:.4} (rel {rel:.2e})");
    }

    #[test]
    fn deterministic_rebuild() {
        let a = sixth_roots_mesh(0.25);
        let b = sixth_roots_mesh(0.25);
        assert_eq!(a.n_nodes(), b.n_nodes());
        assert_eq!(a.tris.len(), b.tris.len());
        for (na, nb) in a.nodes.iter().zip(&b.nodes) {
            assert_eq!(na.coord, nb.coord);
            assert_eq!(na.chart, nb.chart);
        }
    }
}
