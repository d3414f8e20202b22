use crate::error::{Error, Result};
use crate::C64;
use serde::{Deserialize, Serialize};

/// Riemann-Hurwitz count of (simple) branch points: `b = 2n + 2g - 2`.
pub fn riemann_hurwitz(n: i64, genus: i64) -> Result<i64> {
    if n < 1 || genus < 0 {
        return Err(Error::config(format!(
            "invalid covering data n = {n}, genus = {genus}"
        )));
    }
    let b = 2 * n + 2 * genus - 2;
    if b < 0 {
        return Err(Error::config(format!(
            "no covering with n = {n}, genus = {genus}: b = {b} < 0"
        )));
    }
    Ok(b)
}

/// Branch data of a hyperelliptic covering `y^2 = prod (x - e_m)`, `beta = x`.
///
/// The reference implementation is restricted to degree `n = 2`; the genus is
/// then determined by the number of branch points through Riemann-Hurwitz.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchConfiguration {
    pub n: usize,
    pub genus: usize,
    pub branch_points: Vec<C64>,
    /// Minimal pairwise distance between branch points.
    pub min_separation: f64,
}

/// Serialized form: `{"n": int, "genus": int, "branch_points": [[re, im], ...]}`.
#[derive(Debug, Serialize, Deserialize)]
struct BranchConfigJson {
    n: usize,
    genus: usize,
    branch_points: Vec<[f64; 2]>,
}

impl BranchConfiguration {
    pub fn new(n: usize, genus: usize, branch_points: Vec<C64>) -> Result<Self> {
        if n != 2 {
            return Err(Error::config(format!(
                "only hyperelliptic coverings of degree n = 2 are supported (got n = {n})"
            )));
        }
        let b = riemann_hurwitz(n as i64, genus as i64)? as usize;
        if branch_points.len() != b {
            return Err(Error::config(format!(
                "branch_points has {} entries, Riemann-Hurwitz requires b = 2n + 2g - 2 = {b}",
                branch_points.len()
            )));
        }
        for p in &branch_points {
            if !p.re.is_finite() || !p.im.is_finite() {
                return Err(Error::config("branch point is not finite".to_string()));
            }
        }
        let mut min_sep = f64::INFINITY;
        for i in 0..branch_points.len() {
            for j in (i + 1)..branch_points.len() {
                let d = (branch_points[i] - branch_points[j]).norm();
                if d == 0.0 {
                    return Err(Error::config(format!(
                        "branch points {i} and {j} coincide"
                    )));
                }
                min_sep = min_sep.min(d);
            }
        }
        if !min_sep.is_finite() {
            min_sep = 1.0; // no pairs (b <= 1) cannot happen for n = 2, g >= 0 with b >= 2
        }
        Ok(BranchConfiguration {
            n,
            genus,
            branch_points,
            min_separation: min_sep,
        })
    }

    /// Number of branch points.
    pub fn b(&self) -> usize {
        self.branch_points.len()
    }

    /// `dim H^0(X, beta^* T_P1) = 2n - g + 1` (valid for `b > 4g - 4`).
    pub fn h0_dim(&self) -> usize {
        2 * self.n - self.genus + 1
    }

    /// Radius (in the base coordinate x) of the ramification charts.
    pub fn r_ram(&self) -> f64 {
        (self.min_separation / 3.0).min(0.5)
    }

    /// The sixth roots of unity configuration (n = 2, genus = 2) used as the
    /// default test case.
    pub fn sixth_roots() -> Self {
        let pts = (0..6)
            .map(|k| C64::from_polar(1.0, std::f64::consts::PI / 3.0 * k as f64))
            .collect();
        BranchConfiguration::new(2, 2, pts).expect("sixth roots configuration is valid")
    }

    /// Same configuration with every branch point displaced: `e_m + delta_m`.
    pub fn displaced(&self, delta: &[C64]) -> Result<Self> {
        assert_eq!(delta.len(), self.b());
        let pts = self
            .branch_points
            .iter()
            .zip(delta)
            .map(|(e, d)| e + d)
            .collect();
        BranchConfiguration::new(self.n, self.genus, pts)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: BranchConfigJson = serde_json::from_str(text)
            .map_err(|e| Error::config(format!("branch configuration: {e}")))?;
        let pts = raw.branch_points.iter().map(|p| C64::new(p[0], p[1])).collect();
        BranchConfiguration::new(raw.n, raw.genus, pts)
    }

    pub fn to_json(&self) -> String {
        let raw = BranchConfigJson {
            n: self.n,
            genus: self.genus,
            branch_points: self.branch_points.iter().map(|p| [p.re, p.im]).collect(),
        };
        serde_json::to_string_pretty(&raw).expect("serialization cannot fail")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn riemann_hurwitz_values() {
        assert_eq!(riemann_hurwitz(2, 2).unwrap(), 6);
        assert_eq!(riemann_hurwitz(3, 2).unwrap(), 8);
        assert_eq!(riemann_hurwitz(1, 0).unwrap(), 0);
        assert!(riemann_hurwitz(0, 0).is_err());
    }

    #[test]
    fn sixth_roots_config() {
        let cfg = BranchConfiguration::sixth_roots();
        assert_eq!(cfg.b(), 6);
        assert_eq!(cfg.h0_dim(), 3);
        assert!((cfg.min_separation - 1.0).abs() < 1e-12);
        assert!((cfg.r_ram() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip() {
        let cfg = BranchConfiguration::sixth_roots();
        let text = cfg.to_json();
        let back = BranchConfiguration::from_json(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_mismatched_branch_count() {
        let pts = vec![C64::new(0.0, 0.0), C64::new(1.0, 0.0)];
        assert!(BranchConfiguration::new(2, 2, pts).is_err());
    }
}
