//! Deformation families and their field calculus.
//!
//! A deformation direction moves the branch points: either one point with a
//! given velocity, or all of them along the flow of a quadratic vector field
//! `q(w) d/dw` on the target sphere (a Mobius motion, which does not change
//! the complex structure of the cover). Each displaced configuration is
//! uniformized on the same combinatorial mesh, and all parameter derivatives
//! are centered finite differences over those fibers.
//!
//! Gauge: every node carries its own holomorphic trivialization - fixed `x`
//! in the base and cap charts, fixed `t` in the ramification charts. The
//! invariant fields (`u`, the Beltrami field, `phi`, every integral) do not
//! depend on this choice; the horizontal lift `a` does, and neighbor values
//! entering a derivative stencil are converted to the stencil node's gauge
//! exactly, including the s-dependence of the base/ramification transition
//! `x = e_m(s) + t^2`.

use crate::error::Result;
use crate::liouville::{solve_liouville, HyperbolicMetric, LiouvilleOptions};
use crate::mesh::{Chart, CoveringMesh, Realization};
use crate::stencil::Stencils;
use crate::target::TargetMetric;
use crate::{c64, C64};
use serde::{Deserialize, Serialize};
use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeformationDirection {
    BranchMove { m: usize, velocity: [f64; 2] },
    Mobius { q: [[f64; 2]; 3] },
}

impl DeformationDirection {
    pub fn branch_move(m: usize, v: C64) -> Self {
        DeformationDirection::BranchMove { m, velocity: [v.re, v.im] }
    }

    pub fn mobius(q: [C64; 3]) -> Self {
        DeformationDirection::Mobius { q: q.map(|c| [c.re, c.im]) }
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    fn q_poly(&self) -> Option<[C64; 3]> {
        match self {
            DeformationDirection::Mobius { q } => {
                Some([c64(q[0][0], q[0][1]), c64(q[1][0], q[1][1]), c64(q[2][0], q[2][1])])
            }
            _ => None,
        }
    }

    /// Branch-point velocities at the configuration `e`.
    pub fn e_dot(&self, e: &[C64]) -> Vec<C64> {
        match self {
            DeformationDirection::BranchMove { m, velocity } => {
                let mut v = vec![c64(0.0, 0.0); e.len()];
                v[*m] = c64(velocity[0], velocity[1]);
                v
            }
            DeformationDirection::Mobius { .. } => {
                let q = self.q_poly().unwrap();
                e.iter().map(|&w| q[0] + q[1] * w + q[2] * w * w).collect()
            }
        }
    }

    /// Exact displaced configuration at parameter `sigma`. Branch moves are
    /// affine; Mobius directions use the closed-form flow of `q(w) d/dw`
    /// (the exponential of the corresponding traceless 2x2 matrix).
    pub fn displace(&self, e: &[C64], sigma: C64) -> Vec<C64> {
        match self {
            DeformationDirection::BranchMove { m, velocity } => {
                let mut out = e.to_vec();
                out[*m] += sigma * c64(velocity[0], velocity[1]);
                out
            }
            DeformationDirection::Mobius { .. } => {
                let q = self.q_poly().unwrap();
                // X = [[c1/2, c0], [-c2, -c1/2]], M = exp(sigma X).
                let x = [q[1] * 0.5, q[0], -q[2], -q[1] * 0.5];
                let delta_sq = x[0] * x[0] + x[1] * x[2];
                let delta = delta_sq.sqrt();
                let z = sigma * delta;
                let (ch, shd) = if z.norm() < 1e-8 {
                    // cosh(z) ~ 1 + z^2/2; sinh(z)/z ~ 1 + z^2/6, scaled by sigma
                    (c64(1.0, 0.0) + z * z * 0.5, sigma * (c64(1.0, 0.0) + z * z / 6.0))
                } else {
                    (z.cosh(), z.sinh() / delta)
                };
                let (a, b, c, d) =
                    (ch + shd * x[0], shd * x[1], shd * x[2], ch - shd * x[0]);
                e.iter().map(|&w| (a * w + b) / (c * w + d)).collect()
            }
        }
    }
}

/// A uniformized fiber: geometry and hyperbolic metric for one branch
/// configuration on the shared combinatorial mesh.
pub struct Fiber<'a> {
    pub real: Realization<'a>,
    pub metric: HyperbolicMetric,
    pub log_g: Vec<f64>,
}

/// Fiber cache over branch configurations, with warm-started Newton solves.
pub struct MetricFamily<'a> {
    pub mesh: &'a CoveringMesh,
    pub target: TargetMetric,
    pub h_s: f64,
    base_e: Vec<C64>,
    cache: RefCell<HashMap<Vec<(u64, u64)>, Rc<Fiber<'a>>>>,
    warm: RefCell<Option<Vec<f64>>>,
}

fn e_key(e: &[C64]) -> Vec<(u64, u64)> {
    e.iter().map(|z| (z.re.to_bits(), z.im.to_bits())).collect()
}

impl<'a> MetricFamily<'a> {
    pub fn new(mesh: &'a CoveringMesh, target: TargetMetric, h_s: f64) -> Result<Self> {
        let fam = MetricFamily {
            mesh,
            target,
            h_s,
            base_e: mesh.config.branch_points.clone(),
            cache: RefCell::new(HashMap::new()),
            warm: RefCell::new(None),
        };
        let base = fam.fiber(&fam.base_e.clone())?;
        *fam.warm.borrow_mut() = Some(base.metric.u.clone());
        Ok(fam)
    }

    pub fn base_e(&self) -> &[C64] {
        &self.base_e
    }

    pub fn fiber(&self, e: &[C64]) -> Result<Rc<Fiber<'a>>> {
        let key = e_key(e);
        if let Some(f) = self.cache.borrow().get(&key) {
            return Ok(f.clone());
        }
        let real = self.mesh.realize(e)?;
        let opts = LiouvilleOptions {
            initial: self.warm.borrow().clone(),
            ..Default::default()
        };
        let metric = solve_liouville(&real, &self.target, &opts)?;
        let log_g = metric.g.iter().map(|&g| g.ln()).collect();
        let fiber = Rc::new(Fiber { real, metric, log_g });
        self.cache.borrow_mut().insert(key, fiber.clone());
        Ok(fiber)
    }

    /// `d_s log g` per node (each in its own gauge), centered differences
    /// along `dir` around configuration `e0` with step `h`.
    pub fn ds_log_g_at(&self, dir: &DeformationDirection, e0: &[C64], h: f64) -> Result<Vec<C64>> {
        let f = |sig: C64| -> Result<Rc<Fiber<'a>>> { self.fiber(&dir.displace(e0, sig)) };
        let (fp, fm) = (f(c64(h, 0.0))?, f(c64(-h, 0.0))?);
        let (fip, fim) = (f(c64(0.0, h))?, f(c64(0.0, -h))?);
        let n = self.mesh.n_nodes();
        Ok((0..n)
            .map(|i| {
                let dx = (fp.log_g[i] - fm.log_g[i]) / (2.0 * h);
                let dy = (fip.log_g[i] - fim.log_g[i]) / (2.0 * h);
                0.5 * c64(dx, -dy)
            })
            .collect())
    }

    /// Diagonal second derivative `d_s d_sbar log g` per node (own gauge):
    /// five-point stencil.
    pub fn dssb_log_g_at(&self, dir: &DeformationDirection, e0: &[C64], h: f64) -> Result<Vec<f64>> {
        let f = |sig: C64| -> Result<Rc<Fiber<'a>>> { self.fiber(&dir.displace(e0, sig)) };
        let f0 = self.fiber(e0)?;
        let (fp, fm) = (f(c64(h, 0.0))?, f(c64(-h, 0.0))?);
        let (fip, fim) = (f(c64(0.0, h))?, f(c64(0.0, -h))?);
        let n = self.mesh.n_nodes();
        Ok((0..n)
            .map(|i| {
                (fp.log_g[i] + fm.log_g[i] + fip.log_g[i] + fim.log_g[i] - 4.0 * f0.log_g[i])
                    / (4.0 * h * h)
            })
            .collect())
    }
}

/// All first-order deformation fields of one direction at one fiber.
pub struct DeformationFields {
    pub direction: DeformationDirection,
    /// `xi = d beta / d s` per node, node's target frame and gauge.
    pub xi: Vec<C64>,
    /// Horizontal lift `a` per node, node's chart and gauge.
    pub a: Vec<C64>,
    /// Harmonic representative `u = xi + a zeta` (gauge-invariant section).
    pub u: Vec<C64>,
    /// Beltrami field `A = dbar u / zeta`; at ramification centers
    /// (`zeta = 0`) the value is filled by tensorial averaging from the
    /// first ring and the node is listed in `flagged`.
    pub beltrami: Vec<C64>,
    pub flagged: Vec<usize>,
    /// `|A|^2` per node (weight-0 scalar).
    pub mu_norm_sq: Vec<f64>,
    /// `d_s log g` per node (own gauge).
    pub ds_log_g: Vec<C64>,
    /// `d_s d_sbar log g` per node (own gauge).
    pub g_ssb: Vec<f64>,
    /// Diagonal potential `phi = g_ssb - g |a|^2` (gauge-invariant).
    pub phi: Vec<f64>,
    /// Richardson estimate of the FD noise floor for first derivatives.
    pub noise_first: f64,
    /// ... and for the second derivative fields.
    pub noise_second: f64,
}

/// Gauge-conversion velocity: contribution to `d_s log g` seen from chart
/// `i`'s gauge at neighbor `n`, beyond `n`'s own nodal derivative. Nonzero
/// only across base/ramification transitions, whose chart map
/// `x = e_m(s) + t^2` depends on the parameter.

/// Analytic singular profile of the hyperbolic log-density in fixed-x
/// charts: near every branch point g ~ |x - e_m|^{-1} * (smooth), so the
/// log-density contains -1/2 sum_m ln|x - e_m|^2 in the base chart and the
/// equivalent -1/2 sum_m ln|1 - e_m zhat|^2 in the cap chart.  Least-squares
/// stencils lose an order of accuracy on this 1/(x - e) shape near the
/// ramification interfaces, so we subtract it before differentiating and add
/// its derivative back analytically.  Ramification charts absorb the local
/// singularity into the chart factor and need no correction.
fn sing_profile(chart: Chart, z: C64, e: &[C64]) -> f64 {
    match chart {
        Chart::Base => -e.iter().map(|em| (z - em).norm().ln()).sum::<f64>(),
        Chart::Cap => -e
            .iter()
            .map(|em| (c64(1.0, 0.0) - em * z).norm().ln())
            .sum::<f64>(),
        Chart::Ram(_) => 0.0,
    }
}

fn sing_profile_dz(chart: Chart, z: C64, e: &[C64]) -> C64 {
    match chart {
        Chart::Base => -0.5 * e.iter().map(|em| (z - em).inv()).sum::<C64>(),
        Chart::Cap => {
            0.5 * e
                .iter()
                .map(|em| em / (c64(1.0, 0.0) - em * z))
                .sum::<C64>()
        }
        Chart::Ram(_) => c64(0.0, 0.0),
    }
}

// (The moving-gauge velocity model and cross-chart conversions used by the
// horizontal-lift stencil are built inline in `deformation_fields`, where
// the blend coefficients of the direction are available.)

pub fn deformation_fields(
    fam: &MetricFamily,
    dir: &DeformationDirection,
    e0: &[C64],
    stencils: &Stencils,
) -> Result<DeformationFields> {
    let fiber = fam.fiber(e0)?;
    let real = &fiber.real;
    let mesh = fam.mesh;
    let n = mesh.n_nodes();
    let h = fam.h_s;
    let e_dot = dir.e_dot(e0);

    // Gamma = d_z log g in each node's own chart (log-density conversion:
    // g^(i) = g^(n) / |dz_i/dz_n|^2 at node n).
    let lg = &fiber.log_g;
    let e0v: Vec<C64> = e0.to_vec();
    let gamma: Vec<C64> = (0..n)
        .map(|i| {
            let ci = mesh.nodes[i].chart;
            let reg = stencils.apply_dz(i, |k, m| {
                let f = real.dz_factor(i, m);
                let zc = stencils.coords[i][k];
                c64(
                    lg[m] - 2.0 * f.norm().ln() - sing_profile(ci, zc, &e0v),
                    0.0,
                )
            });
            reg + sing_profile_dz(ci, mesh.nodes[i].z(), &e0v)
        })
        .collect();

    // First and second parameter derivatives with Richardson noise floors.
    let v = fam.ds_log_g_at(dir, e0, h)?;
    let v_half = fam.ds_log_g_at(dir, e0, h / 2.0)?;
    let noise_first = v
        .iter()
        .zip(&v_half)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0f64, f64::max)
        / 3.0;
    let g_ssb = fam.dssb_log_g_at(dir, e0, h)?;
    let g_ssb_half = fam.dssb_log_g_at(dir, e0, h / 2.0)?;
    let noise_second = g_ssb
        .iter()
        .zip(&g_ssb_half)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max)
        / 3.0;

    // The fibers are solved on meshes whose base region is carried along by
    // the smooth blend field W (see `CoveringMesh::blend_coeffs`), the cap
    // chart co-moves as zhat = 1/(x - s odot) with odot the mean branch
    // velocity, and ramification nodes are static in their t charts, so the
    // finite differences above are taken in the co-moving gauge.  Convert
    // them to the per-node reference gauges (fixed x / fixed zhat / moving
    // t): writing zdot for the node velocity expressed in the reference
    // chart,
    //     d_s log g |moving = d_s log g |fixed + zdot Gamma + chart term,
    // where the chart term is the s-derivative of the log-Jacobian between
    // the moving and the reference chart (zero for base nodes; +2 odot zhat
    // for cap nodes, whose reference-chart velocity is
    // zdot = -odot zhat^2; ram charts already are the reference gauge).
    // The mixed second derivative picks up
    //     g_ssb |moving = g_ssb |fixed - g (abar zdot + a zdotbar)
    //                     + g |zdot|^2
    // (chart terms are s-holomorphic and drop out of the mixed derivative).
    let (odot, cdot) = mesh.blend_coeffs(&e_dot);
    // W at every node's own base-chart position.  Cap nodes sit in the
    // blend's dead zone (W == odot exactly) and ramification charts on a
    // bump plateau (W == e_dot of their branch point exactly).
    let w_node: Vec<C64> = (0..n)
        .map(|i| match mesh.nodes[i].chart {
            Chart::Base => mesh.blend_field(odot, &cdot, mesh.nodes[i].z()).0,
            Chart::Cap => odot,
            Chart::Ram(m) => e_dot[m],
        })
        .collect();
    // Node velocity expressed in the node's reference chart.
    let zdot: Vec<C64> = (0..n)
        .map(|i| match mesh.nodes[i].chart {
            Chart::Base => w_node[i],
            Chart::Cap => {
                let zh = mesh.nodes[i].z();
                -odot * zh * zh
            }
            Chart::Ram(_) => c64(0.0, 0.0),
        })
        .collect();
    let v_mov = v;
    let v: Vec<C64> = (0..n)
        .map(|i| {
            let chart_term = match mesh.nodes[i].chart {
                Chart::Cap => 2.0 * odot * mesh.nodes[i].z(),
                _ => c64(0.0, 0.0),
            };
            v_mov[i] - zdot[i] * gamma[i] + chart_term
        })
        .collect();

    // xi in each node's gauge and target frame.
    let q = match dir {
        DeformationDirection::Mobius { .. } => dir.q_poly(),
        _ => None,
    };
    let _ = q;
    let xi: Vec<C64> = (0..n)
        .map(|i| match mesh.nodes[i].chart {
            Chart::Ram(m) => e_dot[m],
            _ => c64(0.0, 0.0),
        })
        .collect();

    // Horizontal lift: a = -g^{-1} d_zbar (d_s log g).  The d_zbar stencil
    // acts on the *measured* co-moving derivative v_mov, never on anything
    // built from the stencil-computed gamma (whose node-to-node truncation
    // noise the stencil would amplify by 1/h).  The sharp and singular
    // structure of v_mov is captured by the analytic model
    //     M(x) = (W - odot) GammaHat + 1/2 sum_k (e_dot_k - W)/(x - e_k),
    // where GammaHat = d_x log ghat = -2 xbar/(1 + |x|^2) is the background
    // log-density slope: the co-moving derivative of the log-density at a
    // point carried with velocity W(x) past a background anchored at the
    // centroid (velocity odot) and poles carried with e_dot_k.  M is
    // subtracted at every stencil point and its d_zbar added back in closed
    // form,
    //     d_xbar M = W_zbar (GammaHat - 1/2 sum_k 1/(x - e_k))
    //                - (W - odot) eps ghat,
    // so the stencil only ever sees the smooth residual.  For a common
    // translation (W == e_dot_k == odot, W_zbar == 0) both v_mov and M
    // vanish identically and a_mov is zero to solver precision.
    let eps = fam.target.epsilon;
    let gamma_hat = |x: C64| -2.0 * x.conj() / (1.0 + x.norm_sqr());
    let ghat_fs = |x: C64| 2.0 / (1.0 + x.norm_sqr()).powi(2);
    let pole_sum = |x: C64| -> C64 {
        let mut p = c64(0.0, 0.0);
        for em in &e0v {
            let d = x - em;
            if d.norm_sqr() > 1e-24 {
                p += 0.5 * d.inv();
            }
        }
        p
    };
    // The smooth slope q = 2 d_x u_s of the regular log-density part
    // (log g = log ghat + 2 u_s - sum_k ln|x - e_k|), as a field in
    // base-chart terms at every node.  It multiplies the blend field in the
    // stencil residual below, so base stencils subtract a frozen linear
    // model of it; its values come from the pointwise gamma (converted to
    // the x chart at ramification and cap nodes).
    let q_field: Vec<C64> = (0..n)
        .map(|m| {
            let z = mesh.nodes[m].z();
            let (gx, x) = match mesh.nodes[m].chart {
                Chart::Base => (gamma[m], z),
                Chart::Ram(j) => {
                    if z.norm_sqr() < 1e-24 {
                        return c64(0.0, 0.0);
                    }
                    ((gamma[m] - z.inv()) / (2.0 * z), e0v[j] + z * z)
                }
                Chart::Cap => {
                    if z.norm_sqr() < 1e-24 {
                        return c64(0.0, 0.0);
                    }
                    (-z * z * gamma[m] - 2.0 * z, z.inv())
                }
            };
            gx - gamma_hat(x) + pole_sum(x)
        })
        .collect();
    // Velocity model at base position x for a gauge whose local node
    // velocity is `vel`: the co-moving derivative of the log-density at a
    // point carried with velocity vel past a background anchored at the
    // centroid (velocity odot) and poles carried with e_dot_k,
    //     M(x; vel) = (vel - odot) GammaHat + 1/2 sum_k (e_dot_k - vel)/(x - e_k).
    // Per chart the gauge velocity is: W(x) for base stencils, the constant
    // e_dot_j for a ramification chart (its t chart is anchored to branch
    // point j alone, even where its stencil pokes past the blend plateau),
    // and the constant odot for the cap (it co-moves with the centroid).
    let model_v = |x: C64, vel: C64| -> C64 {
        let mut m = (vel - odot) * gamma_hat(x);
        for (em, ed) in e0v.iter().zip(&e_dot) {
            let d = x - em;
            if d.norm_sqr() > 1e-24 {
                m += 0.5 * (ed - vel) / d;
            }
        }
        m
    };
    let g = &fiber.metric.g;
    let a_mov: Vec<C64> = (0..n)
        .map(|i| {
            let ci = mesh.nodes[i].chart;
            // Frozen linear model of the smooth slope for base stencils: the
            // residual after removing the velocity model still contains W(x)
            // multiplying the unknown smooth slope q(x) = 2 d_x u_s, and the
            // blend profile's second derivative is large enough to spoil the
            // stencil's truncation order.  Freeze q at node i to first
            // order, q ~ q_i + r_i (x - x_i) + s_i (xbar - xbar_i), so the
            // profile's sharpness only multiplies the quadratic remainder.
            // s_i = d_xbar q = 2 d_xbar d_x u_s = g + eps ghat comes from the
            // Liouville equation in closed form; r_i differentiates the
            // q field (any error in r_i or s_i cancels between the
            // subtraction and the analytic add-back, to truncation level).
            let x_i = mesh.nodes[i].z();
            // When the direction is a pure translation the blend is flat
            // (all bump coefficients vanish) and the slope model is not
            // needed; skipping it keeps such directions exact to rounding.
            let blend_flat = cdot.iter().all(|c| c.norm_sqr() < 1e-26);
            let (q_i, r_i, s_i) = match ci {
                Chart::Base if !blend_flat => (
                    q_field[i],
                    stencils.apply_dz(i, |_, m| q_field[m]),
                    c64(g[i] + eps * ghat_fs(x_i), 0.0),
                ),
                _ => (c64(0.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)),
            };
            let dzb = stencils.apply_dzb(i, |k, m| {
                let zc = stencils.coords[i][k];
                // Cross-chart conversion of the neighbor's co-moving
                // derivative into chart i's co-moving gauge: the velocity
                // mismatch times Gamma at the neighbor (chart log-Jacobians
                // are s-holomorphic and drop out).  Ramification and cap
                // *nodes* always sit where W equals their own gauge
                // velocity exactly, so only base nodes seen from
                // ramification or cap stencils can mismatch.
                let conv = match (ci, mesh.nodes[m].chart) {
                    (Chart::Ram(j), Chart::Base) => (e_dot[j] - w_node[m]) * gamma[m],
                    (Chart::Cap, Chart::Base) => (odot - w_node[m]) * gamma[m],
                    _ => c64(0.0, 0.0),
                };
                match ci {
                    Chart::Base => {
                        let (w, _, _) = mesh.blend_field(odot, &cdot, zc);
                        let d = zc - x_i;
                        v_mov[m] + conv
                            - model_v(zc, w)
                            - w * (q_i + r_i * d + s_i * d.conj())
                    }
                    Chart::Ram(j) => {
                        let x = e0v[j] + zc * zc;
                        v_mov[m] + conv - model_v(x, e_dot[j])
                    }
                    Chart::Cap => {
                        let mv = if zc.norm_sqr() < 1e-24 {
                            c64(0.0, 0.0)
                        } else {
                            model_v(zc.inv(), odot)
                        };
                        v_mov[m] + conv - mv
                    }
                }
            });
            // d_zbar of the subtracted pieces, added back in closed form:
            // d_xbar M = W_zbar (GammaHat - pole_sum) - (vel - odot) eps ghat
            // (constant-velocity gauges keep only the second term, and the
            // cap model is holomorphic outright).
            let add_back = match ci {
                Chart::Base => {
                    let x = mesh.nodes[i].z();
                    let (w, _, wzb) = mesh.blend_field(odot, &cdot, x);
                    wzb * (gamma_hat(x) - pole_sum(x)) - (w - odot) * eps * ghat_fs(x)
                        + wzb * q_i
                        + w * s_i
                }
                Chart::Ram(j) => {
                    let t = mesh.nodes[i].z();
                    let x = e0v[j] + t * t;
                    (2.0 * t).conj() * (-(e_dot[j] - odot) * eps * ghat_fs(x))
                }
                Chart::Cap => c64(0.0, 0.0),
            };
            -(dzb + add_back) / g[i]
        })
        .collect();
    // Convert the horizontal lift to the reference gauges pointwise:
    // a_ref = a_mov + zdot + g^{-1} (d_zbar zdot) Gamma.  Cap node
    // velocities are holomorphic and ramification nodes static, so only
    // base nodes pick up the W_zbar term.
    let a: Vec<C64> = (0..n)
        .map(|i| match mesh.nodes[i].chart {
            Chart::Base => {
                let (w, _, wzb) = mesh.blend_field(odot, &cdot, mesh.nodes[i].z());
                a_mov[i] + w + wzb * gamma[i] / g[i]
            }
            Chart::Cap => a_mov[i] + zdot[i],
            Chart::Ram(_) => a_mov[i],
        })
        .collect();

    // u = xi + a zeta (node frame); A = dbar u / zeta.
    let u: Vec<C64> = (0..n).map(|i| xi[i] + a[i] * real.zeta[i]).collect();
    let mut beltrami = vec![c64(0.0, 0.0); n];
    let mut flagged = Vec::new();
    for i in 0..n {
        let zeta = real.zeta[i];
        if zeta.norm() < 1e-9 {
            flagged.push(i);
            continue;
        }
        let dbu = stencils.apply_dzb(i, |_, m| u[m] * real.dw_factor(i, m));
        beltrami[i] = dbu / zeta;
    }
    // Fill flagged centers by tensorial averaging over their one-ring.
    for &i in &flagged {
        let mut acc = c64(0.0, 0.0);
        let mut cnt = 0.0;
        for &m in &mesh.neighbors[i] {
            if real.zeta[m].norm() < 1e-9 {
                continue;
            }
            let f = real.dz_factor(i, m);
            acc += beltrami[m] * f / f.conj();
            cnt += 1.0;
        }
        if cnt > 0.0 {
            beltrami[i] = acc / cnt;
        }
    }
    let mu_norm_sq: Vec<f64> = beltrami.iter().map(|a| a.norm_sqr()).collect();
    // Undo the blend-flow gauge in the second derivative (a is already the
    // holomorphic-gauge horizontal lift at this point).
    let g_ssb: Vec<f64> = (0..n)
        .map(|i| {
            let w = zdot[i];
            g_ssb[i] + 2.0 * g[i] * (a[i].conj() * w).re - g[i] * w.norm_sqr()
        })
        .collect();
    let phi: Vec<f64> = (0..n)
        .map(|i| g_ssb[i] - g[i] * a[i].norm_sqr())
        .collect();

    Ok(DeformationFields {
        direction: dir.clone(),
        xi,
        a,
        u,
        beltrami,
        flagged,
        mu_norm_sq,
        ds_log_g: v,
        g_ssb,
        phi,
        noise_first,
        noise_second,
    })
}

impl DeformationFields {
    /// L2 norm of the Beltrami field: `(integral |A|^2 g dA)^{1/2}`.
    pub fn mu_l2(&self, real: &Realization, g: &[f64]) -> f64 {
        let dens: Vec<f64> = (0..g.len()).map(|i| self.mu_norm_sq[i] * g[i]).collect();
        real.integrate(&dens).max(0.0).sqrt()
    }

    /// Sup norm of `phi` away from flagged nodes.
    pub fn phi_sup(&self) -> f64 {
        self.phi.iter().map(|p| p.abs()).fold(0.0, f64::max)
    }

    /// Vertical field of the canonical (tilde) lift, `b = -xi/zeta`, with
    /// poles at ramification centers flagged.
    pub fn tilde_lift(&self, real: &Realization) -> (Vec<C64>, Vec<usize>) {
        let n = self.xi.len();
        let mut b = vec![c64(0.0, 0.0); n];
        let mut poles = Vec::new();
        for i in 0..n {
            let zeta = real.zeta[i];
            if zeta.norm() < 1e-9 {
                if self.xi[i].norm() > 0.0 {
                    poles.push(i);
                }
                continue;
            }
            b[i] = -self.xi[i] / zeta;
        }
        (b, poles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BranchConfiguration;
    use crate::mesh::{build_mesh, MeshParams};

    fn setup(resolution: f64) -> (&'static CoveringMesh, TargetMetric) {
        let config = BranchConfiguration::sixth_roots();
        // A ramification radius below the min-separation default widens the
        // blend transition, which sets the accuracy of branch-move
        // derivatives (see CoveringMesh::blend_radii).
        let params = MeshParams { resolution, r_ram: Some(0.2), ..Default::default() };
        let mesh = Box::leak(Box::new(build_mesh(&config, params).unwrap()));
        (mesh, TargetMetric::sphere())
    }

    #[test]
    fn direction_json_round_trip() {
        let d = DeformationDirection::branch_move(2, c64(0.5, -1.0));
        let s = d.to_json().unwrap();
        assert!(s.contains("branch-move"));
        assert_eq!(DeformationDirection::from_json(&s).unwrap(), d);
        let m = DeformationDirection::mobius([c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 2.0)]);
        let s = m.to_json().unwrap();
        assert!(s.contains("mobius"));
        assert_eq!(DeformationDirection::from_json(&s).unwrap(), m);
    }

    #[test]
    fn mobius_flow_matches_generator() {
        let q = [c64(0.3, 0.1), c64(-0.2, 0.4), c64(0.15, -0.05)];
        let dir = DeformationDirection::mobius(q);
        let e: Vec<C64> = BranchConfiguration::sixth_roots().branch_points;
        let h = 1e-5;
        let ep = dir.displace(&e, c64(h, 0.0));
        let em = dir.displace(&e, c64(-h, 0.0));
        let vel = dir.e_dot(&e);
        for k in 0..e.len() {
            let fd = (ep[k] - em[k]) / (2.0 * h);
            assert!((fd - vel[k]).norm() < 1e-8, "flow velocity mismatch at {k}");
        }
    }

    #[test]
    fn translation_family_is_numerically_trivial() {
        let (mesh, target) = setup(0.14);
        let fam = MetricFamily::new(mesh, target, 1e-3).unwrap();
        let fiber = fam.fiber(fam.base_e()).unwrap();
        let stencils = Stencils::build(&fiber.real).unwrap();
        let dir = DeformationDirection::mobius([c64(1.0, 0.0), c64(0.0, 0.0), c64(0.0, 0.0)]);
        let e0 = fam.base_e().to_vec();
        let f = deformation_fields(&fam, &dir, &e0, &stencils).unwrap();
        let mu = f.mu_l2(&fiber.real, &fiber.metric.g);
        let floor = f.noise_first.max(1e-12);
        assert!(mu < 60.0 * floor, "translation direction: |mu| = {mu:.3e}, floor {floor:.3e}");
        // u should be the generator q(beta) = 1 pushed to each frame.
        let mut worst = 0.0f64;
        for i in 0..mesh.n_nodes() {
            let expect = match mesh.nodes[i].chart {
                Chart::Cap => {
                    let wh = fiber.real.beta[i];
                    -wh * wh
                }
                _ => c64(1.0, 0.0),
            };
            worst = worst.max((f.u[i] - expect).norm());
        }
        assert!(worst < 0.05, "u vs Mobius generator: {worst:.3e}");
        assert!(
            f.phi_sup() < 2000.0 * f.noise_second.max(1e-12),
            "phi sup {:.3e} vs second-derivative floor {:.3e}",
            f.phi_sup(),
            f.noise_second
        );
    }

    #[test]
    fn single_branch_move_is_nontrivial() {
        let (mesh, target) = setup(0.11);
        let fam = MetricFamily::new(mesh, target, 1e-3).unwrap();
        let fiber = fam.fiber(fam.base_e()).unwrap();
        let stencils = Stencils::build(&fiber.real).unwrap();
        let dir = DeformationDirection::branch_move(0, c64(1.0, 0.0));
        let e0 = fam.base_e().to_vec();
        let f = deformation_fields(&fam, &dir, &e0, &stencils).unwrap();
        let mu = f.mu_l2(&fiber.real, &fiber.metric.g);
        let floor = f.noise_first.max(1e-12);
        assert!(mu > 10.0 * floor, "branch move: |mu| = {mu:.3e} <= 10x floor {floor:.3e}");
        // phi is essentially nonnegative and not identically zero: small
        // negative excursions are discretization error near the blend
        // transition and must stay well below the positive part.
        let phi_max = f.phi.iter().cloned().fold(f64::MIN, f64::max);
        let phi_min = f.phi.iter().cloned().fold(f64::MAX, f64::min);
        assert!(phi_max > 1e-3, "max phi {phi_max:.3e}");
        assert!(phi_min > -0.7 * phi_max, "phi dips negative: {phi_min:.3e}");
    }

    #[test]
    fn liu_identity_for_dz_a() {
        // d_z a = -Gamma_z a - d_s log g at base-chart nodes away from
        // interfaces (pure base two-rings keep the check free of conversion
        // terms for a itself, which is gauge-dependent).
        let (mesh, target) = setup(0.14);
        let fam = MetricFamily::new(mesh, target, 1e-3).unwrap();
        let fiber = fam.fiber(fam.base_e()).unwrap();
        let stencils = Stencils::build(&fiber.real).unwrap();
        let dir = DeformationDirection::branch_move(0, c64(1.0, 0.0));
        let e0 = fam.base_e().to_vec();
        let f = deformation_fields(&fam, &dir, &e0, &stencils).unwrap();
        let lg = &fiber.log_g;
        let mut res = Vec::new();
        for i in 0..mesh.n_nodes() {
            if mesh.nodes[i].chart != Chart::Base {
                continue;
            }
            if stencils.neigh[i].iter().any(|&m| mesh.nodes[m].chart != Chart::Base) {
                continue;
            }
            let gamma = stencils.apply_dz(i, |_, m| c64(lg[m], 0.0));
            let dza = stencils.apply_dz(i, |_, m| f.a[m]);
            let rhs = -gamma * f.a[i] - f.ds_log_g[i];
            res.push((dza - rhs).norm());
        }
        assert!(res.len() > 200, "too few pure base nodes: {}", res.len());
        res.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let p = |q: f64| res[((res.len() - 1) as f64 * q) as usize];
        // The residual differentiates the stencil-computed lift, so it is
        // noisier than the lift itself; the bulk must still be small.
        assert!(p(0.5) < 0.06, "Liu identity median residual {:.3e}", p(0.5));
        assert!(res[res.len() - 1] < 0.7, "Liu identity max residual {:.3e}", res[res.len() - 1]);
    }
}
