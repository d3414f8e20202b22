//! Mesh construction: base-region constrained Delaunay triangulation,
//! structured polar patches for ramification charts and the caps at
//! infinity, and the union-find gluing that assembles the double cover.

use super::{CAP_CHART_RADIUS, signed_area, Chart, CornerSrc, CoveringMesh, MeshNode, MeshParams, MeshTriangle, SHEET_BOTH};
use crate::config::BranchConfiguration;
use crate::error::{Error, Result};
use crate::{c64, C64};
use spade::{ConstrainedDelaunayTriangulation, Point2, Triangulation};
use std::collections::{HashMap, HashSet};

const GOLDEN_ANGLE: f64 = 2.399963229728653;


/// A patch: a locally triangulated piece in one chart, pre-gluing.
struct Patch {
    chart: Chart,
    sheet: u8,
    verts: Vec<C64>,
    tris: Vec<[usize; 3]>,
}

/// A boundary edge prepared for interface matching. `ends` and `mid` are in
/// the common comparison space (the `x` plane); `y` disambiguates sheets.
#[derive(Clone)]
struct IEdge {
    patch: usize,
    tri: usize,
    /// Corner positions (0..3) of the two endpoints, aligned with `ends`.
    corners: [usize; 2],
    ends: [C64; 2],
    mid: C64,
    y: C64,
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }
    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }
    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            // deterministic: smaller index wins
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}

fn dist_point_segment(p: C64, a: C64, b: C64) -> f64 {
    let ab = b - a;
    let denom = ab.norm_sqr();
    if denom == 0.0 {
        return (p - a).norm();
    }
    let t = ((p - a).re * ab.re + (p - a).im * ab.im) / denom;
    let t = t.clamp(0.0, 1.0);
    (p - (a + t * ab)).norm()
}

fn point_in_polygon(p: C64, poly: &[C64]) -> bool {
    // Ray casting along +x.
    let mut inside = false;
    let n = poly.len();
    for i in 0..n {
        let a = poly[i];
        let b = poly[(i + 1) % n];
        if (a.im > p.im) != (b.im > p.im) {
            let xint = a.re + (p.im - a.im) / (b.im - a.im) * (b.re - a.re);
            if xint > p.re {
                inside = !inside;
            }
        }
    }
    inside
}

/// Principal-branch reference value of `y = sqrt(prod (x - e_m))`, with
/// discontinuities exactly on the straight cut segments.
fn y_base(x: C64, e: &[C64], cuts: &[(usize, usize)]) -> C64 {
    let mut y = c64(1.0, 0.0);
    for &(p, q) in cuts {
        let mid = 0.5 * (e[p] + e[q]);
        let d = 0.5 * (e[q] - e[p]);
        let xi = (x - mid) / d;
        // d*sqrt(xi^2-1) with the branch cut on the segment xi in (-1,1).
        y *= d * xi * (c64(1.0, 0.0) - 1.0 / (xi * xi)).sqrt();
    }
    y
}

/// Continuous value of `y/t = sqrt(prod_{k != m}(e_m + t^2 - e_k))` on the
/// ramification disc (one of the two consistent global choices).
fn y_ram_over_t(t: C64, m: usize, e: &[C64]) -> C64 {
    let mut q = c64(1.0, 0.0);
    for (k, &ek) in e.iter().enumerate() {
        if k == m {
            continue;
        }
        let base = e[m] - ek;
        q *= base.sqrt() * (c64(1.0, 0.0) + t * t / base).sqrt();
    }
    q
}

/// Structured polar disc: center vertex, `n_r` rings of `n_theta` vertices,
/// angles `theta0 + 2 pi j / n_theta`, radii `r_max * i / n_r`. Returns the
/// patch-local vertices, triangles (counterclockwise), and the outer-ring
/// vertex ids in angular order.
fn polar_disc(r_max: f64, n_r: usize, n_theta: usize, theta0: f64) -> (Vec<C64>, Vec<[usize; 3]>, Vec<usize>) {
    let mut verts = vec![c64(0.0, 0.0)];
    for i in 1..=n_r {
        let r = r_max * i as f64 / n_r as f64;
        for j in 0..n_theta {
            let th = theta0 + 2.0 * std::f64::consts::PI * j as f64 / n_theta as f64;
            verts.push(c64(r * th.cos(), r * th.sin()));
        }
    }
    let ring = |i: usize, j: usize| 1 + (i - 1) * n_theta + (j % n_theta);
    let mut tris = Vec::new();
    for j in 0..n_theta {
        tris.push([0, ring(1, j), ring(1, j + 1)]);
    }
    for i in 1..n_r {
        for j in 0..n_theta {
            tris.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
            tris.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
        }
    }
    let outer: Vec<usize> = (0..n_theta).map(|j| ring(n_r, j)).collect();
    (verts, tris, outer)
}

/// Deterministic pairing of branch points into cuts: sort by angle around
/// the centroid and join consecutive pairs.
fn pair_cuts(e: &[C64]) -> Result<Vec<(usize, usize)>> {
    if e.len() % 2 != 0 {
        return Err(Error::config("branch count must be even"));
    }
    let centroid: C64 = e.iter().sum::<C64>() / e.len() as f64;
    let mut idx: Vec<usize> = (0..e.len()).collect();
    idx.sort_by(|&a, &b| {
        let (ta, tb) = ((e[a] - centroid).arg(), (e[b] - centroid).arg());
        ta.partial_cmp(&tb).unwrap().then(a.cmp(&b))
    });
    Ok(idx.chunks(2).map(|c| (c[0], c[1])).collect())
}

pub fn build_mesh(config: &BranchConfiguration, params: MeshParams) -> Result<CoveringMesh> {
    let ell = params.resolution;
    if !(ell > 0.0) {
        return Err(Error::config("resolution must be positive"));
    }
    let r0 = params.r0;
    let r_ram = params.r_ram.unwrap_or_else(|| config.r_ram());
    let e = config.branch_points.clone();
    let b = e.len();
    let ell_at = |x: C64| ell * (1.0 + x.norm_sqr()) / 2.0;

    // --- validation -------------------------------------------------------
    for (i, &ei) in e.iter().enumerate() {
        if ei.norm() + r_ram + 2.0 * ell_at(ei) > r0 {
            return Err(Error::mesh(format!(
                "branch point {i} too close to the cap interface radius {r0}"
            )));
        }
        for (j, &ej) in e.iter().enumerate().skip(i + 1) {
            if (ei - ej).norm() < 2.0 * r_ram + ell {
                return Err(Error::mesh(format!(
                    "branch points {i} and {j} too close for ramification radius {r_ram}"
                )));
            }
        }
    }
    let cuts = pair_cuts(&e)?;
    for (ci, &(p, q)) in cuts.iter().enumerate() {
        for (k, &ek) in e.iter().enumerate() {
            if k == p || k == q {
                continue;
            }
            if dist_point_segment(ek, e[p], e[q]) < r_ram + 2.0 * ell {
                return Err(Error::mesh(format!(
                    "cut between branch points {p} and {q} passes too close to branch point {k}"
                )));
            }
        }
        for &(p2, q2) in cuts.iter().skip(ci + 1) {
            let min_d = [
                dist_point_segment(e[p2], e[p], e[q]),
                dist_point_segment(e[q2], e[p], e[q]),
                dist_point_segment(e[p], e[p2], e[q2]),
                dist_point_segment(e[q], e[p2], e[q2]),
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            if min_d < 2.0 * r_ram {
                return Err(Error::mesh(format!(
                    "cuts ({p},{q}) and ({p2},{q2}) are too close to each other"
                )));
            }
        }
    }

    // --- base-chart point set ---------------------------------------------
    // Cut direction (unit) away from each branch point along its cut.
    let mut cut_dir: Vec<C64> = vec![c64(1.0, 0.0); b];
    for &(p, q) in &cuts {
        let u = (e[q] - e[p]) / (e[q] - e[p]).norm();
        cut_dir[p] = u;
        cut_dir[q] = -u;
    }

    let mut pts: Vec<C64> = Vec::new();
    // Hole polygons: the node at j = 0 sits exactly at the cut endpoint.
    let mut hole_start: Vec<usize> = Vec::new();
    let mut n_c: Vec<usize> = Vec::new();
    for m in 0..b {
        let nc = ((2.0 * std::f64::consts::PI * r_ram / ell_at(e[m])).ceil() as usize).max(10);
        hole_start.push(pts.len());
        n_c.push(nc);
        for j in 0..nc {
            let rot = C64::from_polar(1.0, 2.0 * std::f64::consts::PI * j as f64 / nc as f64);
            pts.push(e[m] + r_ram * cut_dir[m] * rot);
        }
    }
    // Outer polygon.
    let n_out = ((2.0 * std::f64::consts::PI * r0 / ell_at(c64(r0, 0.0))).ceil() as usize).max(16);
    let outer_start = pts.len();
    for j in 0..n_out {
        let th = 2.0 * std::f64::consts::PI * j as f64 / n_out as f64;
        pts.push(c64(r0 * th.cos(), r0 * th.sin()));
    }
    // Cut polylines: endpoints are the j = 0 hole nodes; interior points new.
    struct CutLine {
        ids: Vec<usize>, // point ids along the cut, endpoints included
    }
    let mut cut_lines: Vec<CutLine> = Vec::new();
    for &(p, q) in &cuts {
        let a = e[p] + r_ram * cut_dir[p];
        let bb = e[q] + r_ram * cut_dir[q];
        let len = (bb - a).norm();
        let k = ((len / ell_at(0.5 * (a + bb))).ceil() as usize).max(2);
        let mut ids = vec![hole_start[p]];
        for j in 1..k {
            let s = j as f64 / k as f64;
            ids.push(pts.len());
            pts.push(a + s * (bb - a));
        }
        ids.push(hole_start[q]);
        cut_lines.push(CutLine { ids });
    }
    // Interior cloud: concentric rings with Fubini-Study-graded spacing.
    let clearance_ok = |p: C64| -> bool {
        let margin = 0.5 * ell_at(p);
        if p.norm() > r0 - margin {
            return false;
        }
        for (m, &em) in e.iter().enumerate() {
            if (p - em).norm() < r_ram + 0.55 * ell_at(em) {
                let _ = m;
                return false;
            }
        }
        for &(cp, cq) in &cuts {
            let a = e[cp] + r_ram * cut_dir[cp];
            let bb = e[cq] + r_ram * cut_dir[cq];
            if dist_point_segment(p, a, bb) < 0.5 * margin.min(ell_at(p)).max(0.45 * ell_at(p)) {
                return false;
            }
        }
        true
    };
    if clearance_ok(c64(0.0, 0.0)) {
        pts.push(c64(0.0, 0.0));
    }
    let mut r = ell_at(c64(0.0, 0.0));
    let mut ring_idx = 0usize;
    while r < r0 {
        let count = ((2.0 * std::f64::consts::PI * r / ell_at(c64(r, 0.0))).round() as usize).max(6);
        let offset = GOLDEN_ANGLE * ring_idx as f64;
        for j in 0..count {
            let th = offset + 2.0 * std::f64::consts::PI * j as f64 / count as f64;
            let p = c64(r * th.cos(), r * th.sin());
            if clearance_ok(p) {
                pts.push(p);
            }
        }
        r += ell_at(c64(r, 0.0));
        ring_idx += 1;
    }

    // --- constrained Delaunay triangulation of the base region -------------
    let mut cdt: ConstrainedDelaunayTriangulation<Point2<f64>> =
        ConstrainedDelaunayTriangulation::new();
    for (i, p) in pts.iter().enumerate() {
        let h = cdt
            .insert(Point2::new(p.re, p.im))
            .map_err(|err| Error::mesh(format!("point insertion failed: {err:?}")))?;
        if h.index() != i {
            return Err(Error::mesh(format!(
                "duplicate base point near ({:.6}, {:.6})",
                p.re, p.im
            )));
        }
    }
    let handle = |i: usize| spade::handles::FixedVertexHandle::from_index(i);
    let constrain = |cdt: &mut ConstrainedDelaunayTriangulation<Point2<f64>>,
                         a: usize,
                         bnd: usize| {
        cdt.add_constraint(handle(a), handle(bnd));
    };
    let mut cut_edge_set: HashSet<(usize, usize)> = HashSet::new();
    let mut hole_edge_of: HashMap<(usize, usize), usize> = HashMap::new();
    let mut outer_edge_set: HashSet<(usize, usize)> = HashSet::new();
    let key = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    for m in 0..b {
        for j in 0..n_c[m] {
            let (a, bnd) = (hole_start[m] + j, hole_start[m] + (j + 1) % n_c[m]);
            constrain(&mut cdt, a, bnd);
            hole_edge_of.insert(key(a, bnd), m);
        }
    }
    for j in 0..n_out {
        let (a, bnd) = (outer_start + j, outer_start + (j + 1) % n_out);
        constrain(&mut cdt, a, bnd);
        outer_edge_set.insert(key(a, bnd));
    }
    for cl in &cut_lines {
        for w in cl.ids.windows(2) {
            constrain(&mut cdt, w[0], w[1]);
            cut_edge_set.insert(key(w[0], w[1]));
        }
    }

    // Keep faces inside the outer polygon and outside every hole polygon.
    let outer_poly: Vec<C64> = (0..n_out).map(|j| pts[outer_start + j]).collect();
    let hole_polys: Vec<Vec<C64>> = (0..b)
        .map(|m| (0..n_c[m]).map(|j| pts[hole_start[m] + j]).collect())
        .collect();
    let mut base_tris_raw: Vec<[usize; 3]> = Vec::new();
    for f in cdt.inner_faces() {
        let vs = f.vertices();
        let ids = [vs[0].fix().index(), vs[1].fix().index(), vs[2].fix().index()];
        let centroid = (pts[ids[0]] + pts[ids[1]] + pts[ids[2]]) / 3.0;
        if !point_in_polygon(centroid, &outer_poly) {
            continue;
        }
        if hole_polys.iter().any(|hp| point_in_polygon(centroid, hp)) {
            continue;
        }
        base_tris_raw.push(ids);
    }
    // Deterministic triangle order.
    base_tris_raw.sort_unstable();
    // Compact the vertex set to vertices actually used.
    let mut used: Vec<usize> = base_tris_raw.iter().flatten().copied().collect();
    used.sort_unstable();
    used.dedup();
    let mut remap: HashMap<usize, usize> = HashMap::new();
    for (new, &old) in used.iter().enumerate() {
        remap.insert(old, new);
    }
    let base_verts: Vec<C64> = used.iter().map(|&i| pts[i]).collect();
    let base_tris: Vec<[usize; 3]> = base_tris_raw
        .iter()
        .map(|t| [remap[&t[0]], remap[&t[1]], remap[&t[2]]])
        .collect();
    let rekey = |s: &HashSet<(usize, usize)>| -> HashSet<(usize, usize)> {
        s.iter()
            .filter_map(|&(a, bnd)| match (remap.get(&a), remap.get(&bnd)) {
                (Some(&x), Some(&y)) => Some(key(x, y)),
                _ => None,
            })
            .collect()
    };
    let cut_edges = rekey(&cut_edge_set);
    let outer_edges = rekey(&outer_edge_set);
    let hole_edges: HashMap<(usize, usize), usize> = hole_edge_of
        .iter()
        .filter_map(|(&(a, bnd), &m)| match (remap.get(&a), remap.get(&bnd)) {
            (Some(&x), Some(&y)) => Some((key(x, y), m)),
            _ => None,
        })
        .collect();

    // --- patches ------------------------------------------------------------
    let mut patches: Vec<Patch> = Vec::new();
    for sheet in 0..2u8 {
        patches.push(Patch {
            chart: Chart::Base,
            sheet,
            verts: base_verts.clone(),
            tris: base_tris.clone(),
        });
    }
    let t_max = r_ram.sqrt();
    let mut ram_outer_ring: Vec<Vec<usize>> = Vec::new();
    for m in 0..b {
        let n_r = ((2.0 * r_ram / ell_at(e[m])).ceil() as usize).max(3);
        let theta0 = cut_dir[m].arg() / 2.0;
        let (verts, tris, outer) = polar_disc(t_max, n_r, 2 * n_c[m], theta0);
        ram_outer_ring.push(outer);
        patches.push(Patch { chart: Chart::Ram(m), sheet: SHEET_BOTH, verts, tris });
    }
    let zhat_max = 1.0 / r0;
    let cap_rings = ((zhat_max / (0.5 * ell)).ceil() as usize).max(3);
    let (cap_verts, cap_tris, cap_outer) = polar_disc(zhat_max, cap_rings, n_out, 0.0);
    for sheet in 0..2u8 {
        patches.push(Patch {
            chart: Chart::Cap,
            sheet,
            verts: cap_verts.clone(),
            tris: cap_tris.clone(),
        });
    }
    let ram_patch = |m: usize| 2 + m;
    let cap_patch = |sheet: u8| 2 + b + sheet as usize;

    // --- union-find over triangle corner slots ------------------------------
    let mut slot_base: Vec<usize> = Vec::with_capacity(patches.len());
    let mut total = 0usize;
    for p in &patches {
        slot_base.push(total);
        total += 3 * p.tris.len();
    }
    let slot = |pi: usize, ti: usize, ci: usize, sb: &[usize]| sb[pi] + 3 * ti + ci;
    let mut uf = UnionFind::new(total);

    // Per-patch edge map: (sorted vertex pair) -> list of (tri, corner_a, corner_b)
    // where corner_a/corner_b are positions of the smaller/larger vertex id.
    type EdgeMap = HashMap<(usize, usize), Vec<(usize, usize, usize)>>;
    let edge_map = |p: &Patch| -> EdgeMap {
        let mut m: EdgeMap = HashMap::new();
        for (ti, t) in p.tris.iter().enumerate() {
            for k in 0..3 {
                let (va, vb) = (t[k], t[(k + 1) % 3]);
                let (ka, kb) = if va < vb { (k, (k + 1) % 3) } else { ((k + 1) % 3, k) };
                m.entry(key(va, vb)).or_default().push((ti, ka, kb));
            }
        }
        m
    };
    let maps: Vec<EdgeMap> = patches.iter().map(edge_map).collect();

    // (a) intra-patch gluing; base cut edges glue across sheets.
    for (pi, p) in patches.iter().enumerate() {
        for (ek, adj) in &maps[pi] {
            if adj.len() != 2 {
                continue;
            }
            let (t1, a1, b1) = adj[0];
            let (t2, a2, b2) = adj[1];
            let is_cut = p.chart == Chart::Base && cut_edges.contains(ek);
            if is_cut {
                if p.sheet == 0 {
                    // glue (sheet0, t1) ~ (sheet1, t2) and (sheet1, t1) ~ (sheet0, t2)
                    uf.union(slot(0, t1, a1, &slot_base), slot(1, t2, a2, &slot_base));
                    uf.union(slot(0, t1, b1, &slot_base), slot(1, t2, b2, &slot_base));
                    uf.union(slot(1, t1, a1, &slot_base), slot(0, t2, a2, &slot_base));
                    uf.union(slot(1, t1, b1, &slot_base), slot(0, t2, b2, &slot_base));
                }
                // sheet 1 handled together with sheet 0 above
            } else {
                uf.union(slot(pi, t1, a1, &slot_base), slot(pi, t2, a2, &slot_base));
                uf.union(slot(pi, t1, b1, &slot_base), slot(pi, t2, b2, &slot_base));
            }
        }
    }

    // (b) interface matching helper.
    let match_and_glue = |uf: &mut UnionFind, side_a: &[IEdge], side_b: &[IEdge], label: &str| -> Result<()> {
        if side_a.len() != side_b.len() {
            return Err(Error::mesh(format!(
                "{label}: interface edge counts differ ({} vs {})",
                side_a.len(),
                side_b.len()
            )));
        }
        let mut used_b = vec![false; side_b.len()];
        for ea in side_a {
            let mut best = (f64::INFINITY, usize::MAX);
            let mut second = f64::INFINITY;
            for (bi, eb) in side_b.iter().enumerate() {
                let d = (ea.mid - eb.mid).norm_sqr() + (ea.y - eb.y).norm_sqr();
                if d < best.0 {
                    second = best.0;
                    best = (d, bi);
                } else if d < second {
                    second = d;
                }
            }
            let bi = best.1;
            if used_b[bi] {
                return Err(Error::mesh(format!("{label}: ambiguous interface matching")));
            }
            if second.is_finite() && best.0 > 0.25 * second {
                return Err(Error::mesh(format!(
                    "{label}: interface match not well separated ({:.3e} vs {:.3e})",
                    best.0, second
                )));
            }
            used_b[bi] = true;
            let eb = &side_b[bi];
            // Align endpoints by proximity in the common space.
            let direct = (ea.ends[0] - eb.ends[0]).norm_sqr() + (ea.ends[1] - eb.ends[1]).norm_sqr();
            let crossed = (ea.ends[0] - eb.ends[1]).norm_sqr() + (ea.ends[1] - eb.ends[0]).norm_sqr();
            let perm = if direct <= crossed { [0, 1] } else { [1, 0] };
            for k in 0..2 {
                uf.union(
                    slot(ea.patch, ea.tri, ea.corners[k], &slot_base),
                    slot(eb.patch, eb.tri, eb.corners[perm[k]], &slot_base),
                );
            }
        }
        Ok(())
    };

    // Base-side boundary edges grouped by interface.
    let mut base_hole_edges: Vec<Vec<IEdge>> = vec![Vec::new(); b];
    let mut base_outer_edges: Vec<Vec<IEdge>> = vec![Vec::new(); 2];
    for sheet in 0..2usize {
        for (ek, adj) in &maps[sheet] {
            if adj.len() != 1 {
                continue;
            }
            let (ti, ka, kb) = adj[0];
            let (va, vb) = (patches[sheet].tris[ti][ka], patches[sheet].tris[ti][kb]);
            let (xa, xb) = (base_verts[va], base_verts[vb]);
            let mid = 0.5 * (xa + xb);
            if let Some(&m) = hole_edges.get(ek) {
                let sign = if sheet == 0 { 1.0 } else { -1.0 };
                base_hole_edges[m].push(IEdge {
                    patch: sheet,
                    tri: ti,
                    corners: [ka, kb],
                    ends: [xa, xb],
                    mid,
                    y: sign * y_base(mid, &e, &cuts),
                });
            } else if outer_edges.contains(ek) {
                base_outer_edges[sheet].push(IEdge {
                    patch: sheet,
                    tri: ti,
                    corners: [ka, kb],
                    ends: [xa, xb],
                    mid,
                    y: c64(0.0, 0.0),
                });
            } else {
                return Err(Error::mesh(
                    "base region has an untagged boundary edge (triangulation leak)",
                ));
            }
        }
    }

    // Ramification-side boundary edges, in the x comparison space.
    for m in 0..b {
        let pi = ram_patch(m);
        let p = &patches[pi];
        let ring = &ram_outer_ring[m];
        let mut side: Vec<IEdge> = Vec::new();
        for j in 0..ring.len() {
            let (va, vb) = (ring[j], ring[(j + 1) % ring.len()]);
            let adj = &maps[pi][&key(va, vb)];
            if adj.len() != 1 {
                return Err(Error::mesh("ramification ring edge is not a boundary edge"));
            }
            let (ti, ka, kb) = adj[0];
            let (sa, sb_) = (p.tris[ti][ka], p.tris[ti][kb]);
            let (ta, tb) = (p.verts[sa], p.verts[sb_]);
            let (xa, xb) = (e[m] + ta * ta, e[m] + tb * tb);
            let tm = 0.5 * (ta + tb);
            side.push(IEdge {
                patch: pi,
                tri: ti,
                corners: [ka, kb],
                ends: [xa, xb],
                mid: 0.5 * (xa + xb),
                y: tm * y_ram_over_t(tm, m, &e),
            });
        }
        match_and_glue(&mut uf, &side, &base_hole_edges[m], &format!("ram chart {m}"))?;
    }

    // Cap-side boundary edges, per sheet.
    for sheet in 0..2u8 {
        let pi = cap_patch(sheet);
        let p = &patches[pi];
        let mut side: Vec<IEdge> = Vec::new();
        for j in 0..cap_outer.len() {
            let (va, vb) = (cap_outer[j], cap_outer[(j + 1) % cap_outer.len()]);
            let adj = &maps[pi][&key(va, vb)];
            if adj.len() != 1 {
                return Err(Error::mesh("cap ring edge is not a boundary edge"));
            }
            let (ti, ka, kb) = adj[0];
            let (sa, sb_) = (p.tris[ti][ka], p.tris[ti][kb]);
            let (xa, xb) = (1.0 / p.verts[sa], 1.0 / p.verts[sb_]);
            side.push(IEdge {
                patch: pi,
                tri: ti,
                corners: [ka, kb],
                ends: [xa, xb],
                mid: 0.5 * (xa + xb),
                y: c64(0.0, 0.0),
            });
        }
        match_and_glue(&mut uf, &side, &base_outer_edges[sheet as usize], &format!("cap sheet {sheet}"))?;
    }

    // --- global nodes --------------------------------------------------------
    // Owner slot per root: highest chart priority (Ram < Base < Cap by rank),
    // then smallest slot index; this is deterministic.
    let slot_info = |s: usize| -> (usize, usize, usize) {
        // (patch, tri, corner)
        let pi = match slot_base.binary_search(&s) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let rel = s - slot_base[pi];
        (pi, rel / 3, rel % 3)
    };
    let mut root_owner: HashMap<usize, (usize, usize)> = HashMap::new(); // root -> (rank, slot)
    for s in 0..total {
        let r_ = uf.find(s);
        let (pi, _, _) = slot_info(s);
        let rank = patches[pi].chart.rank() * 4 + patches[pi].sheet as usize;
        let entry = root_owner.entry(r_).or_insert((usize::MAX, usize::MAX));
        if (rank, s) < *entry {
            *entry = (rank, s);
        }
    }
    // Deterministic node ordering: (chart rank, coordinate lex, owner slot),
    // with an order-preserving f64 -> u64 key so the sort is total.
    let f2u = |x: f64| -> u64 {
        let bt = x.to_bits();
        if bt >> 63 == 0 {
            bt | (1u64 << 63)
        } else {
            !bt
        }
    };
    let mut roots: Vec<(usize, u64, u64, usize, usize)> = Vec::new();
    for (&root, &(_, owner_slot)) in &root_owner {
        let (pi, ti, ci) = slot_info(owner_slot);
        let lv = patches[pi].tris[ti][ci];
        let z = patches[pi].verts[lv];
        roots.push((patches[pi].chart.rank(), f2u(z.re), f2u(z.im), owner_slot, root));
    }
    roots.sort_unstable();
    let mut root_to_node: HashMap<usize, usize> = HashMap::new();
    let mut nodes: Vec<MeshNode> = Vec::with_capacity(roots.len());
    for (ni, &(_, _, _, owner_slot, root)) in roots.iter().enumerate() {
        root_to_node.insert(root, ni);
        let (pi, ti, ci) = slot_info(owner_slot);
        let p = &patches[pi];
        let z = p.verts[p.tris[ti][ci]];
        nodes.push(MeshNode { chart: p.chart, sheet: p.sheet, coord: [z.re, z.im] });
    }

    // Reassign outer base nodes to the cap chart.  Beyond |x| ~ 1 the
    // Fubini-Study geometry is better scaled in zhat = 1/x (the hyperbolic
    // density in the x frame decays like |x|^{-4}, which amplifies
    // finite-difference noise in frame-dependent quantities), so nodes far
    // from the branch points carry cap-chart coordinates and frames.  The
    // threshold keeps a margin around the ramification discs, whose stencils
    // need base-chart neighbors.
    for node in nodes.iter_mut() {
        if node.chart == Chart::Base && node.z().norm() > CAP_CHART_RADIUS {
            let zh = node.z().inv();
            node.chart = Chart::Cap;
            node.coord = [zh.re, zh.im];
        }
    }

    // --- global triangles -----------------------------------------------------
    let mut tris: Vec<MeshTriangle> = Vec::new();
    for (pi, p) in patches.iter().enumerate() {
        for (ti, t) in p.tris.iter().enumerate() {
            let mut v = [0usize; 3];
            let mut corner = [CornerSrc::Fixed(c64(0.0, 0.0)); 3];
            for ci in 0..3 {
                let gid = root_to_node[&uf.find(slot(pi, ti, ci, &slot_base))];
                v[ci] = gid;
                let local = p.verts[t[ci]];
                corner[ci] = match (nodes[gid].chart, p.chart) {
                    (Chart::Ram(m), Chart::Base) => {
                        CornerSrc::FromRam { m, t: nodes[gid].z() }
                    }
                    (Chart::Ram(m2), Chart::Cap) => {
                        return Err(Error::mesh(format!(
                            "cap triangle touches ramification chart {m2}"
                        )))
                    }
                    _ => CornerSrc::Fixed(local),
                };
            }
            // Orientation sanity in the patch chart.
            let c0 = [p.verts[t[0]], p.verts[t[1]], p.verts[t[2]]];
            if signed_area(c0) <= 0.0 {
                return Err(Error::mesh("patch triangle is not counterclockwise"));
            }
            tris.push(MeshTriangle { chart: p.chart, sheet: p.sheet, v, corner });
        }
    }

    // --- topology checks --------------------------------------------------------
    let mut edges: HashSet<(usize, usize)> = HashSet::new();
    for t in &tris {
        for k in 0..3 {
            edges.insert(key(t.v[k], t.v[(k + 1) % 3]));
        }
    }
    let v = nodes.len() as i64;
    let ecount = edges.len() as i64;
    let f = tris.len() as i64;
    let chi = v - ecount + f;
    let expect_chi = 2 - 2 * config.genus as i64;
    if chi != expect_chi {
        return Err(Error::mesh(format!(
            "glued complex has Euler characteristic {chi}, expected {expect_chi}"
        )));
    }
    // Connectivity.
    let mut nuf = UnionFind::new(nodes.len());
    for &(a, bnd) in &edges {
        nuf.union(a, bnd);
    }
    let root0 = nuf.find(0);
    for i in 1..nodes.len() {
        if nuf.find(i) != root0 {
            return Err(Error::mesh("glued complex is disconnected"));
        }
    }

    let mut neighbors: Vec<Vec<usize>> = vec![Vec::new(); nodes.len()];
    for &(a, bnd) in &edges {
        neighbors[a].push(bnd);
        neighbors[bnd].push(a);
    }
    for nb in neighbors.iter_mut() {
        nb.sort_unstable();
        nb.dedup();
    }

    Ok(CoveringMesh {
        config: config.clone(),
        params,
        r_ram,
        nodes,
        tris,
        cut_pairs: cuts,
        euler_characteristic: chi,
        neighbors,
    })
}
