//! Piecewise-linear finite-element stiffness matrix.
//!
//! The cotangent stiffness `K` represents the Dirichlet form
//! `(psi, u) -> integral grad psi . grad u dx dy`, assembled per triangle in
//! that triangle's own chart. The form is conformally invariant, so the
//! per-chart assembly glues into a well-defined operator on nodal scalars.
//! For the complex Laplacian this gives
//! `integral psi d_z d_zbar u * sqrt(-1) dz ^ dzbar = -1/2 psi^T K u`.

use crate::mesh::Realization;
use crate::sparse::Csr;
use crate::{c64, C64};

pub fn cotan_stiffness(real: &Realization) -> Csr {
    let n = real.mesh.n_nodes();
    let mut triplets: Vec<(usize, usize, C64)> = Vec::with_capacity(9 * real.mesh.tris.len());
    for (ti, tri) in real.mesh.tris.iter().enumerate() {
        let p = real.corners[ti];
        // Corner k contributes cot(angle at k)/2 on the opposite edge (i, j).
        for k in 0..3 {
            let (i, j) = ((k + 1) % 3, (k + 2) % 3);
            let u = p[i] - p[k];
            let v = p[j] - p[k];
            let cross = u.re * v.im - u.im * v.re;
            let dot = u.re * v.re + u.im * v.im;
            debug_assert!(cross > 0.0, "degenerate or flipped triangle {ti}");
            let w = 0.5 * dot / cross;
            let (gi, gj) = (tri.v[i], tri.v[j]);
            triplets.push((gi, gi, c64(w, 0.0)));
            triplets.push((gj, gj, c64(w, 0.0)));
            triplets.push((gi, gj, c64(-w, 0.0)));
            triplets.push((gj, gi, c64(-w, 0.0)));
        }
    }
    Csr::from_triplets(n, n, triplets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::BranchConfiguration;
    use crate::mesh::{build_mesh, MeshParams};
    use crate::sparse::dot;

    fn stiffness_fixture() -> (usize, Csr) {
        let config = BranchConfiguration::sixth_roots();
        let params = MeshParams { resolution: 0.2, ..Default::default() };
        let mesh = build_mesh(&config, params).unwrap();
        let real = mesh.realize_reference().unwrap();
        (mesh.n_nodes(), cotan_stiffness(&real))
    }

    #[test]
    fn annihilates_constants_and_is_symmetric() {
        let (n, k) = stiffness_fixture();
        let ones = vec![c64(1.0, 0.0); n];
        let k1 = k.matvec(&ones);
        let max = k1.iter().map(|v| v.norm()).fold(0.0f64, f64::max);
        assert!(max < 1e-10, "K * 1 = {max:.3e}");
        assert!(k.hermitian_defect() < 1e-12);
    }

    #[test]
    fn dirichlet_form_is_nonnegative() {
        let (n, k) = stiffness_fixture();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = move || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for _ in 0..10 {
            let v: Vec<C64> = (0..n).map(|_| c64(next(), next())).collect();
            let q = dot(&v, &k.matvec(&v)).re;
            assert!(q >= -1e-9, "quadratic form {q:.3e}");
        }
    }
}
