//! Finite-difference oracle on uniform grids with zero Dirichlet data.
//!
//! The 5-point Dirichlet Laplacian is diagonalized exactly by the discrete
//! sine transform, so Poisson solves and the coupled control system reduce
//! to diagonal scalings in sine space. Every solution is checked against an
//! independent matrix-free stencil before it is returned.

use std::f64::consts::PI;
use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReferenceError {
    #[error("grid needs at least 9 nodes per axis, got {0}")]
    TooCoarse(usize),
    #[error("solver residual {0:e} exceeds tolerance")]
    NotConverged(f64),
    #[error("point {0:?} is outside the grid box")]
    OutOfBox(Vec<f64>),
    #[error("no finite-difference oracle for problem '{0}'")]
    Unsupported(String),
    #[error("expected {expected} parameter values, got {got}")]
    MuArity { expected: usize, got: usize },
}

const RESIDUAL_TOL: f64 = 1e-10;

/// Backward-error scale for a stencil residual: data size plus the size of
/// the stencil terms, bounded by `8 / h^2` times the operand.
fn residual_scale(data: f64, h: f64, operand: &[f64]) -> f64 {
    data.abs() + 8.0 / (h * h) * max_abs(operand.iter().copied())
}

/// Sign of the operator: `Laplacian w = f` or `-Laplacian w = f`.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

/// Node values on an `n x n` grid over `[lo, hi]^2`; index `i * n + j` is
/// the node `(lo + i h, lo + j h)`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridSolution {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub h: f64,
    pub names: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl GridSolution {
    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.hi
        } else {
            self.lo + i as f64 * self.h
        }
    }

    pub fn field(&self, name: &str) -> Option<&[f64]> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(&self.values[k])
    }

    /// Bilinear interpolation of every field at `x`.
    pub fn interpolate(&self, x: &[f64]) -> Result<Vec<f64>, ReferenceError> {
        let inside = x.len() == 2 && x.iter().all(|&c| c >= self.lo && c <= self.hi);
        if !inside {
            return Err(ReferenceError::OutOfBox(x.to_vec()));
        }
        let locate = |c: f64| {
            let s = (c - self.lo) / self.h;
            let i = (s.floor() as usize).min(self.n - 2);
            (i, s - i as f64)
        };
        let (i, a) = locate(x[0]);
        let (j, b) = locate(x[1]);
        let n = self.n;
        Ok(self
            .values
            .iter()
            .map(|v| {
                let at = |di: usize, dj: usize| v[(i + di) * n + j + dj];
                // an exact node returns its stored value
                if a == 0.0 && b == 0.0 {
                    return at(0, 0);
                }
                (1.0 - a) * ((1.0 - b) * at(0, 0) + b * at(0, 1))
                    + a * ((1.0 - b) * at(1, 0) + b * at(1, 1))
            })
            .collect())
    }

    /// `x0,x1,<fields>` for every node.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["x0".to_string(), "x1".to_string()];
        header.extend(self.names.iter().cloned());
        w.write_record(&header)?;
        for i in 0..self.n {
            for j in 0..self.n {
                let mut row = vec![self.node(i).to_string(), self.node(j).to_string()];
                row.extend(self.values.iter().map(|v| v[i * self.n + j].to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sine-space data for the interior of an `n`-node axis.
struct Sine {
    m: usize,
    /// `s[j * m + k] = sin(pi (j+1)(k+1) / (n-1))`; symmetric, and
    /// `s * s = (n-1)/2 * I`.
    s: Vec<f64>,
    /// Eigenvalues of the 1-D negative second difference.
    eig: Vec<f64>,
}

impl Sine {
    fn new(n: usize, h: f64) -> Self {
        let m = n - 2;
        let big = (n - 1) as f64;
        let mut s = vec![0.0; m * m];
        for j in 0..m {
            for k in 0..m {
                // reduce the angle index to keep arguments small
                let r = ((j + 1) * (k + 1)) % (2 * (n - 1));
                s[j * m + k] = (PI * r as f64 / big).sin();
            }
        }
        let eig = (0..m)
            .map(|k| {
                let t = (PI * (k + 1) as f64 / (2.0 * big)).sin();
                4.0 * t * t / (h * h)
            })
            .collect();
        Sine { m, s, eig }
    }

    /// `s * a * s` for an `m x m` row-major matrix `a`.
    fn sandwich(&self, a: &[f64]) -> Vec<f64> {
        let m = self.m;
        let mut tmp = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let sik = self.s[i * m + k];
                let row = &a[k * m..(k + 1) * m];
                let out = &mut tmp[i * m..(i + 1) * m];
                for (o, x) in out.iter_mut().zip(row) {
                    *o += sik * x;
                }
            }
        }
        let mut res = vec![0.0; m * m];
        for i in 0..m {
            for k in 0..m {
                let t = tmp[i * m + k];
                let srow = &self.s[k * m..(k + 1) * m];
                let out = &mut res[i * m..(i + 1) * m];
                for (o, x) in out.iter_mut().zip(srow) {
                    *o += t * x;
                }
            }
        }
        res
    }

    /// Solves `sum of diag(eig) terms` systems: `u = S^-1 (fhat / d) S^-1`
    /// with `d[j,k] = denom(eig_j + eig_k)`.
    fn solve(&self, f: &[f64], denom: impl Fn(f64) -> f64) -> Vec<f64> {
        let m = self.m;
        let scale = 2.0 / (m + 1) as f64;
        let mut hat = self.sandwich(f);
        for j in 0..m {
            for k in 0..m {
                hat[j * m + k] *= scale * scale / denom(self.eig[j] + self.eig[k]);
            }
        }
        self.sandwich(&hat)
    }
}

/// `-Laplacian_h` applied to interior values (zero outside), matrix-free.
fn neg_laplacian(u: &[f64], m: usize, h: f64) -> Vec<f64> {
    let at = |i: isize, j: isize| {
        if i < 0 || j < 0 || i >= m as isize || j >= m as isize {
            0.0
        } else {
            u[i as usize * m + j as usize]
        }
    };
    let mut out = vec![0.0; m * m];
    for i in 0..m as isize {
        for j in 0..m as isize {
            let c = at(i, j);
            let s = at(i - 1, j) + at(i + 1, j) + at(i, j - 1) + at(i, j + 1);
            out[i as usize * m + j as usize] = (4.0 * c - s) / (h * h);
        }
    }
    out
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Interior `m x m` values embedded in an `n x n` grid with zero boundary.
fn embed(inner: &[f64], n: usize) -> Vec<f64> {
    let m = n - 2;
    let mut out = vec![0.0; n * n];
    for i in 0..m {
        for j in 0..m {
            out[(i + 1) * n + j + 1] = inner[i * m + j];
        }
    }
    out
}

fn grid(n: usize, lo: f64, hi: f64) -> Result<(f64, Vec<f64>), ReferenceError> {
    if n < 9 {
        return Err(ReferenceError::TooCoarse(n));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let xs = (1..n - 1).map(|i| lo + i as f64 * h).collect();
    Ok((h, xs))
}

/// Solves `sign * Laplacian w = forcing` on `[lo, hi]^2` with `w = 0` on the
/// boundary, using `n` nodes per axis.
pub fn solve_poisson_fd(
    forcing: impl Fn(f64, f64) -> f64,
    sign: Sign,
    n: usize,
    lo: f64,
    hi: f64,
) -> Result<GridSolution, ReferenceError> {
    let (h, xs) = grid(n, lo, hi)?;
    let m = n - 2;
    // -Laplacian w = rhs
    let flip = match sign {
        Sign::Plus => -1.0,
        Sign::Minus => 1.0,
    };
    let rhs: Vec<f64> = xs
        .iter()
        .flat_map(|&x| xs.iter().map(move |&y| (x, y)))
        .map(|(x, y)| flip * forcing(x, y))
        .collect();
    let sine = Sine::new(n, h);
    let w = sine.solve(&rhs, |lam| lam);
    let residual = max_abs(neg_laplacian(&w, m, h).iter().zip(&rhs).map(|(a, b)| a - b));
    if residual > RESIDUAL_TOL * residual_scale(max_abs(rhs.iter().copied()), h, &w) {
        return Err(ReferenceError::NotConverged(residual));
    }
    Ok(GridSolution {
        n,
        lo,
        hi,
        h,
        names: vec!["w".into()],
        values: vec![embed(&w, n)],
    })
}

/// Solves the control system `y - Laplacian z = mu1`, `mu2 u = z`,
/// `-Laplacian y = u` on `[-1, 1]^2` with `y = z = 0` on the boundary.
/// Eliminating the control leaves `(I + mu2 A^2) y = mu1` with
/// `A = -Laplacian_h`; then `u = A y` and `z = mu2 u`.
pub fn solve_ocp_poisson_fd(mu1: f64, mu2: f64, n: usize) -> Result<GridSolution, ReferenceError> {
    let (lo, hi) = (-1.0, 1.0);
    let (h, _) = grid(n, lo, hi)?;
    let m = n - 2;
    let rhs = vec![mu1; m * m];
    let sine = Sine::new(n, h);
    let y = sine.solve(&rhs, |lam| 1.0 + mu2 * lam * lam);
    let u = neg_laplacian(&y, m, h);
    let z: Vec<f64> = u.iter().map(|v| mu2 * v).collect();
    let az = neg_laplacian(&z, m, h);
    let residual = max_abs(y.iter().zip(&az).map(|(a, b)| a + b - mu1));
    let scale = residual_scale(mu1, h, &z) + max_abs(y.iter().copied());
    if residual > RESIDUAL_TOL * scale {
        return Err(ReferenceError::NotConverged(residual));
    }
    Ok(GridSolution {
        n,
        lo,
        hi,
        h,
        names: vec!["y".into(), "u".into(), "z".into()],
        values: vec![embed(&y, n), embed(&u, n), embed(&z, n)],
    })
}

/// Grid nodes per axis used for every oracle comparison.
pub const ORACLE_NODES: usize = 129;

/// The oracle for a catalog problem at parameter `mu`, with `n` nodes per
/// axis. Forcing terms are written out here rather than taken from the
/// catalog, so the oracle does not share code with the residuals it checks.
pub fn oracle(problem: &str, mu: &[f64], n: usize) -> Result<GridSolution, ReferenceError> {
    let need = |k: usize| {
        if mu.len() == k {
            Ok(())
        } else {
            Err(ReferenceError::MuArity {
                expected: k,
                got: mu.len(),
            })
        }
    };
    match problem {
        "poisson1" => {
            need(0)?;
            solve_poisson_fd(
                |x, y| (PI * x).sin() * (PI * y).sin(),
                Sign::Plus,
                n,
                0.0,
                1.0,
            )
        }
        "poisson2" => {
            need(0)?;
            solve_poisson_fd(
                |x, y| -2.0 * (y * (1.0 - y) + x * (1.0 - x)),
                Sign::Plus,
                n,
                0.0,
                1.0,
            )
        }
        "poisson_param" => {
            need(2)?;
            let c = mu[0];
            solve_poisson_fd(
                move |x, y| (-2.0 * ((x - c).powi(2) + (y - c).powi(2))).exp(),
                Sign::Minus,
                n,
                -1.0,
                1.0,
            )
        }
        "ocp_poisson" => {
            need(2)?;
            solve_ocp_poisson_fd(mu[0], mu[1], n)
        }
        other => Err(ReferenceError::Unsupported(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn poisson1_exact(x: f64, y: f64) -> f64 {
        -(PI * x).sin() * (PI * y).sin() / (2.0 * PI * PI)
    }

    fn node_error(sol: &GridSolution, exact: impl Fn(f64, f64) -> f64) -> f64 {
        let n = sol.n;
        let mut e: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                e = e.max((sol.values[0][i * n + j] - exact(sol.node(i), sol.node(j))).abs());
            }
        }
        e
    }

    #[test]
    fn sine_matrix_is_its_own_inverse_up_to_scale() {
        let s = Sine::new(11, 0.1);
        let m = s.m;
        let mut id = vec![0.0; m * m];
        for i in 0..m {
            id[i * m + i] = 1.0;
        }
        let sq = s.sandwich(&id);
        // S^2 = (n-1)/2 I
        for i in 0..m {
            for k in 0..m {
                let got = sq[i * m + k];
                let expected = if i == k { 5.0 } else { 0.0 };
                assert!((got - expected).abs() < 1e-12, "{i},{k}: {got}");
            }
        }
    }

    #[test]
    fn poisson1_converges_at_second_order() {
        let coarse = oracle("poisson1", &[], 65).unwrap();
        let fine = oracle("poisson1", &[], 129).unwrap();
        let (e1, e2) = (
            node_error(&coarse, poisson1_exact),
            node_error(&fine, poisson1_exact),
        );
        assert!(e1 / e2 >= 3.5, "{e1} / {e2}");
        assert!(e2 < 1e-4);
    }

    #[test]
    fn poisson2_matches_its_closed_form() {
        let sol = oracle("poisson2", &[], 65).unwrap();
        let e = node_error(&sol, |x, y| x * (1.0 - x) * y * (1.0 - y));
        assert!(e < 1e-3);
        // the stencil is exact on quadratics, so only roundoff remains
        assert!(e < 1e-13, "{e}");
    }

    #[test]
    fn zero_forcing_gives_zero() {
        let sol = solve_poisson_fd(|_, _| 0.0, Sign::Minus, 17, 0.0, 1.0).unwrap();
        assert!(sol.values[0].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn too_coarse_grid_is_rejected() {
        assert_eq!(
            solve_poisson_fd(|_, _| 1.0, Sign::Minus, 8, 0.0, 1.0),
            Err(ReferenceError::TooCoarse(8))
        );
        assert!(matches!(
            oracle("burgers", &[], 65),
            Err(ReferenceError::Unsupported(_))
        ));
        assert!(matches!(
            oracle("ocp_poisson", &[1.0], 65),
            Err(ReferenceError::MuArity { .. })
        ));
    }

    #[test]
    fn single_signed_forcing_gives_single_signed_solution() {
        // -Laplacian w = positive  =>  w >= 0
        let sol = oracle("poisson_param", &[0.3, -0.5], 33).unwrap();
        assert!(sol.values[0].iter().all(|&v| v >= 0.0));
        assert!(sol.values[0].iter().any(|&v| v > 0.0));
        // Laplacian w = positive  =>  w <= 0
        let sol = oracle("poisson1", &[], 33).unwrap();
        assert!(sol.values[0].iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn heavy_penalty_kills_control_and_state() {
        let sol = solve_ocp_poisson_fd(3.0, 1e6, 65).unwrap();
        assert!(max_abs(sol.field("y").unwrap().iter().copied()) < 1e-4);
        assert!(max_abs(sol.field("u").unwrap().iter().copied()) < 1e-3);
    }

    #[test]
    fn control_relation_holds_on_the_grid() {
        for (m1, m2) in [(1.0, 1.0), (3.0, 0.01), (2.0, 0.1)] {
            let sol = solve_ocp_poisson_fd(m1, m2, 33).unwrap();
            let (u, z) = (sol.field("u").unwrap(), sol.field("z").unwrap());
            assert!(u.iter().zip(z).all(|(u, z)| m2 * u - z == 0.0));
        }
    }

    #[test]
    fn ocp_solution_converges_under_refinement() {
        // Cauchy differences at shared nodes shrink at second order
        let sols: Vec<GridSolution> = [33, 65, 129]
            .iter()
            .map(|&n| solve_ocp_poisson_fd(2.0, 0.1, n).unwrap())
            .collect();
        let gap = |a: &GridSolution, b: &GridSolution, f: &str| {
            let (va, vb) = (a.field(f).unwrap(), b.field(f).unwrap());
            let mut e: f64 = 0.0;
            for i in 0..a.n {
                for j in 0..a.n {
                    e = e.max((va[i * a.n + j] - vb[2 * i * b.n + 2 * j]).abs());
                }
            }
            e
        };
        for f in ["y", "u"] {
            let r = gap(&sols[0], &sols[1], f) / gap(&sols[1], &sols[2], f);
            assert!(r >= 3.5, "{f}: ratio {r}");
        }
    }

    #[test]
    fn interpolation_reproduces_nodes_and_bilinears() {
        let n = 9;
        let lo = -1.0;
        let h = 2.0 / 8.0;
        let mut lin = vec![0.0; n * n];
        let mut cst = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let (x, y) = (lo + i as f64 * h, lo + j as f64 * h);
                lin[i * n + j] = 1.0 + 2.0 * x - y + 0.5 * x * y;
                cst[i * n + j] = 4.2;
            }
        }
        let sol = GridSolution {
            n,
            lo,
            hi: 1.0,
            h,
            names: vec!["lin".into(), "cst".into()],
            values: vec![lin.clone(), cst],
        };
        assert_eq!(
            sol.interpolate(&[lo + 3.0 * h, lo + 5.0 * h]).unwrap()[0],
            lin[3 * n + 5]
        );
        let (x, y) = (lo + 2.5 * h, lo + 6.5 * h);
        let v = sol.interpolate(&[x, y]).unwrap();
        assert!((v[0] - (1.0 + 2.0 * x - y + 0.5 * x * y)).abs() < 1e-14);
        assert!((v[1] - 4.2).abs() < 1e-15);
        assert!(sol.interpolate(&[1.0, 1.0]).is_ok());
        assert!(matches!(
            sol.interpolate(&[1.1, 0.0]),
            Err(ReferenceError::OutOfBox(_))
        ));
    }

    #[test]
    fn csv_lists_every_node() {
        let sol = oracle("poisson1", &[], 9).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x0,x1,w\n"));
        assert_eq!(text.lines().count(), 82);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn stencil_residual_is_small(c in -1.0f64..1.0, n in 9usize..40) {
            let sol = oracle("poisson_param", &[c, 0.0], n).unwrap();
            let m = n - 2;
            let inner: Vec<f64> = (0..m)
                .flat_map(|i| (0..m).map(move |j| (i, j)))
                .map(|(i, j)| sol.values[0][(i + 1) * n + j + 1])
                .collect();
            let lap = neg_laplacian(&inner, m, sol.h);
            for (k, v) in lap.iter().enumerate() {
                let (x, y) = (sol.node(k / m + 1), sol.node(k % m + 1));
                let f = (-2.0 * ((x - c).powi(2) + (y - c).powi(2))).exp();
                prop_assert!((v - f).abs() < 1e-9);
            }
        }
    }
}
