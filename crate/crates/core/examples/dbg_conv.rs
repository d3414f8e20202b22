use hurwitz_wp::c64;
use hurwitz_wp::config::BranchConfiguration;
use hurwitz_wp::family::*;
use hurwitz_wp::mesh::{build_mesh, MeshParams};
use hurwitz_wp::stencil::Stencils;
use hurwitz_wp::target::TargetMetric;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let r_ram: f64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(0.25);
    for &res in &[0.16f64, 0.12, 0.09] {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution: res, r_ram: Some(r_ram), ..Default::default() };
        let mesh = Box::leak(Box::new(build_mesh(&config, params).unwrap()));
        let fam = MetricFamily::new(mesh, TargetMetric::sphere(), 1e-3).unwrap();
        let fiber = fam.fiber(fam.base_e()).unwrap();
        let st = Stencils::build(&fiber.real).unwrap();
        let e0 = fam.base_e().to_vec();
        let dir = DeformationDirection::branch_move(0, c64(1.0, 0.0));
        let f = deformation_fields(&fam, &dir, &e0, &st).unwrap();
        let mu2 = {
            let g = &fiber.metric.g;
            let dens: Vec<f64> = (0..g.len()).map(|i| f.mu_norm_sq[i] * g[i]).collect();
            fiber.real.integrate(&dens)
        };
        println!(
            "r_ram {:.2} res {:.2} n {} : int|mu|^2 g dA {:.8e}  phi_sup {:.4e}",
            r_ram,
            res,
            mesh.n_nodes(),
            mu2,
            f.phi_sup()
        );
        let phi_min = f.phi.iter().cloned().fold(f64::MAX, f64::min);
        let phi_max = f.phi.iter().cloned().fold(f64::MIN, f64::max);
        let imin = (0..mesh.n_nodes()).min_by(|&a, &b| f.phi[a].partial_cmp(&f.phi[b]).unwrap()).unwrap();
        println!("   phi range [{:.3e}, {:.3e}] argmin node {} {:?} z ({:.3},{:.3})",
            phi_min, phi_max, imin, mesh.nodes[imin].chart, mesh.nodes[imin].z().re, mesh.nodes[imin].z().im);
        let mut contrib: Vec<(f64, usize)> = (0..mesh.n_nodes())
            .map(|i| (f.mu_norm_sq[i] * fiber.metric.g[i] * fiber.real.weights[i], i))
            .collect();
        contrib.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap());
        for &(c, i) in contrib.iter().take(6) {
            let z = mesh.nodes[i].z();
            let dmin = e0
                .iter()
                .map(|e| {
                    let x = match mesh.nodes[i].chart {
                        hurwitz_wp::mesh::Chart::Base => z,
                        hurwitz_wp::mesh::Chart::Ram(j) => e0[j] + z * z,
                        hurwitz_wp::mesh::Chart::Cap => z.inv(),
                    };
                    (x - e).norm()
                })
                .fold(f64::INFINITY, f64::min);
            println!(
                "   mass {:.3e} node {} {:?} sh{} z ({:.3},{:.3}) dmin {:.3} |mu| {:.3e} a ({:.2},{:.2}) u ({:.2},{:.2})",
                c,
                i,
                mesh.nodes[i].chart,
                mesh.nodes[i].sheet,
                z.re,
                z.im,
                dmin,
                f.mu_norm_sq[i].sqrt(),
                f.a[i].re,
                f.a[i].im,
                f.u[i].re,
                f.u[i].im
            );
        }
    }
}
// (appended diagnostics run via second binary would be overkill)
