use hurwitz_wp::config::BranchConfiguration;
use hurwitz_wp::mesh::{build_mesh, Chart, MeshParams};
use hurwitz_wp::family::*;
use hurwitz_wp::stencil::Stencils;
use hurwitz_wp::target::TargetMetric;
use hurwitz_wp::c64;

fn main() {
    let config = BranchConfiguration::sixth_roots();
    let params = MeshParams { resolution: 0.14, ..Default::default() };
    let mesh = Box::leak(Box::new(build_mesh(&config, params).unwrap()));
    let fam = MetricFamily::new(mesh, TargetMetric::sphere(), 1e-3).unwrap();
    let fiber = fam.fiber(fam.base_e()).unwrap();
    let st = Stencils::build(&fiber.real).unwrap();
    let e0 = fam.base_e().to_vec();

    // Translation direction q(x) = 1: expect u = 1 in base frame, A = 0, phi = 0.
    let dir = DeformationDirection::mobius([c64(1.0,0.0), c64(0.0,0.0), c64(0.0,0.0)]);
    let f = deformation_fields(&fam, &dir, &e0, &st).unwrap();
    let mut worst = (0.0f64, 0usize);
    for i in 0..mesh.n_nodes() {
        let expect = match mesh.nodes[i].chart {
            Chart::Cap => {
                let zh = mesh.nodes[i].z();
                -zh * zh
            }
            _ => c64(1.0, 0.0),
        };
        let err = (f.u[i] - expect).norm();
        if err > worst.0 { worst = (err, i); }
    }
    println!("translation: |mu|_L2 {:.3e}  phi_sup {:.3e}  worst |u-expect| {:.3e} at node {} chart {:?} z {:?}",
        f.mu_l2(&fiber.real, &fiber.metric.g), f.phi_sup(), worst.0, worst.1,
        mesh.nodes[worst.1].chart, mesh.nodes[worst.1].z());
    println!("  noise floors: first {:.3e} second {:.3e}", f.noise_first, f.noise_second);

    // Single branch move: expect nontrivial mu.
    let dir2 = DeformationDirection::branch_move(0, c64(1.0, 0.0));
    let f2 = deformation_fields(&fam, &dir2, &e0, &st).unwrap();
    println!("branch move: |mu|_L2 {:.3e}  phi_sup {:.3e}", f2.mu_l2(&fiber.real, &fiber.metric.g), f2.phi_sup());

    // mu and phi mass breakdown for the translation direction.
    let mut contrib: Vec<(f64, usize)> = (0..mesh.n_nodes()).map(|i| {
        (f.beltrami[i].norm_sqr() * fiber.metric.g[i] * fiber.real.weights[i], i)
    }).collect();
    contrib.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(c, i) in contrib.iter().take(8) {
        println!("  mu mass {:.3e} node {} {:?} sh{} z ({:.3},{:.3}) |A| {:.3e} u ({:.3},{:.3}) a ({:.3},{:.3}) zeta {:.3e}",
            c, i, mesh.nodes[i].chart, mesh.nodes[i].sheet, mesh.nodes[i].z().re, mesh.nodes[i].z().im,
            f.beltrami[i].norm(), f.u[i].re, f.u[i].im, f.a[i].re, f.a[i].im, fiber.real.zeta[i].norm());
    }
    let mut phis: Vec<(f64, usize)> = (0..mesh.n_nodes()).map(|i| (f.phi[i].abs(), i)).collect();
    phis.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
    for &(c, i) in phis.iter().take(6) {
        println!("  |phi| {:.3e} node {} {:?} z ({:.3},{:.3}) g_ssb {:.3e} g|a|^2 {:.3e}",
            c, i, mesh.nodes[i].chart, mesh.nodes[i].z().re, mesh.nodes[i].z().im,
            f.g_ssb[i], fiber.metric.g[i] * f.a[i].norm_sqr());
    }
    // Blend displacement sanity: realize(e0 + h*edot) vs pos + h*W.
    {
        let h = 1e-3;
        let e1: Vec<_> = e0.iter().map(|z| z + hurwitz_wp::c64(h, 0.0)).collect();
        let r1 = mesh.realize(&e1).unwrap();
        let (odot, cdot) = mesh.blend_coeffs(&vec![hurwitz_wp::c64(1.0, 0.0); 6]);
        let mut worst_d = (0.0f64, 0usize);
        for i in 0..mesh.n_nodes() {
            let expect = match mesh.nodes[i].chart {
                Chart::Base => fiber.real.pos[i] + h * mesh.blend_field(odot, &cdot, fiber.real.pos[i]).0,
                _ => r1.pos[i],
            };
            let d = (r1.pos[i] - expect).norm();
            if d > worst_d.0 { worst_d = (d, i); }
        }
        println!("blend displacement check: worst |pos1 - (pos0 + h W)| = {:.3e} at {}", worst_d.0, worst_d.1);
    }
    // Global residual v + Gamma over base-chart nodes (translation: v_holo = -Gamma).
    {
        let e: Vec<hurwitz_wp::C64> = e0.clone();
        let sing = |z: hurwitz_wp::C64| -> f64 {
            -e.iter().map(|em| (z - em).norm().ln()).sum::<f64>()
        };
        let sing_dz = |z: hurwitz_wp::C64| -> hurwitz_wp::C64 {
            -0.5 * e.iter().map(|em| (z - em).inv()).sum::<hurwitz_wp::C64>()
        };
        let lg = &fiber.log_g;
        let mut rows: Vec<(f64, usize, hurwitz_wp::C64, hurwitz_wp::C64)> = Vec::new();
        for i in 0..mesh.n_nodes() {
            if mesh.nodes[i].chart != Chart::Base { continue; }
            let gam = st.apply_dz(i, |k, m| {
                let fz = fiber.real.dz_factor(i, m);
                c64(lg[m] - 2.0 * fz.norm().ln() - sing(st.coords[i][k]), 0.0)
            }) + sing_dz(mesh.nodes[i].z());
            let res = f.ds_log_g[i] + gam;
            rows.push((res.norm(), i, res, f.a[i]));
        }
        rows.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        println!("top |v + Gamma| residuals (base chart):");
        for &(r, i, res, a) in rows.iter().take(8) {
            let z = mesh.nodes[i].z();
            let dmin = e.iter().map(|em| (z - em).norm()).fold(f64::INFINITY, f64::min);
            println!("  |res| {:.3e} node {} z ({:.3},{:.3}) dmin {:.3} res ({:.4},{:.4}) a ({:.3},{:.3})",
                r, i, z.re, z.im, dmin, res.re, res.im, a.re, a.im);
        }
        let mut rows2: Vec<(f64, usize)> = (0..mesh.n_nodes())
            .filter(|&i| mesh.nodes[i].chart == Chart::Base)
            .map(|i| ((f.a[i] - c64(1.0, 0.0)).norm(), i)).collect();
        rows2.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        println!("top |a - 1| (base chart):");
        for &(r, i) in rows2.iter().take(8) {
            let z = mesh.nodes[i].z();
            let dmin = e.iter().map(|em| (z - em).norm()).fold(f64::INFINITY, f64::min);
            println!("  |a-1| {:.3e} node {} z ({:.3},{:.3}) dmin {:.3}", r, i, z.re, z.im, dmin);
        }
    }
}
