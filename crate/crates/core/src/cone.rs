//! Dense primal-dual interior-point solver for small conic linear programs
//!
//! ```text
//! minimize    cᵀx
//! subject to  Gx + s = h,   s ∈ K
//! ```
//!
//! where `K` is a nonnegative orthant followed by second-order cones
//! `{(t, u) : t ≥ ‖u‖}`. The dual is `max -hᵀz  s.t. Gᵀz + c = 0, z ∈ K`.
//!
//! Newton directions use Nesterov-Todd scaling and a Mehrotra
//! predictor-corrector step; the reduced system `GᵀW⁻²G dx = r` is solved
//! by Cholesky. Problems here have a few dozen variables, so everything is
//! dense.

use nalgebra::{DMatrix, DVector};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Row layout of `s`: `nonneg` orthant rows, then one block per cone.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConeSpec {
    pub nonneg: usize,
    pub soc: Vec<usize>,
}

impl ConeSpec {
    pub fn dim(&self) -> usize {
        self.nonneg + self.soc.iter().sum::<usize>()
    }

    /// Barrier degree: one per orthant row, one per cone.
    pub fn degree(&self) -> usize {
        self.nonneg + self.soc.len()
    }

    fn soc_ranges(&self) -> impl Iterator<Item = std::ops::Range<usize>> + '_ {
        let mut start = self.nonneg;
        self.soc.iter().map(move |&d| {
            let r = start..start + d;
            start += d;
            r
        })
    }
}

#[derive(Debug, Clone)]
pub struct ConeProblem {
    pub c: Vector,
    pub g: Matrix,
    pub h: Vector,
    pub cones: ConeSpec,
}

#[derive(Debug, Clone, Copy)]
pub struct Settings {
    /// Bound on the scaled primal residual, dual residual and relative gap.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            tolerance: 1e-8,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConeStatus {
    Optimal,
    /// The caller's stop predicate accepted the current iterate.
    Stopped,
    MaxIterations,
    NumericalFailure,
}

#[derive(Debug, Clone)]
pub struct ConeSolution {
    pub status: ConeStatus,
    pub x: Vector,
    pub s: Vector,
    pub z: Vector,
    pub iterations: usize,
    /// `‖Gx + s - h‖ / max(1, ‖h‖)`.
    pub primal_residual: f64,
    /// `‖Gᵀz + c‖ / max(1, ‖c‖)`.
    pub dual_residual: f64,
    /// `sᵀz`.
    pub gap: f64,
    pub primal_objective: f64,
}

/// Smallest "eigenvalue" of `u` with respect to the cone: negative when
/// `u` lies outside.
pub fn min_eigenvalue(u: &Vector, cones: &ConeSpec) -> f64 {
    let mut m = f64::INFINITY;
    for i in 0..cones.nonneg {
        m = m.min(u[i]);
    }
    for r in cones.soc_ranges() {
        let t = u[r.start];
        let norm = u.rows(r.start + 1, r.len() - 1).norm();
        m = m.min(t - norm);
    }
    m
}

/// Identity element of the cone's Jordan algebra.
pub fn identity(cones: &ConeSpec) -> Vector {
    let mut e = Vector::zeros(cones.dim());
    for i in 0..cones.nonneg {
        e[i] = 1.0;
    }
    for r in cones.soc_ranges() {
        e[r.start] = 1.0;
    }
    e
}

/// Jordan product `u ∘ v`.
pub fn jordan_product(u: &Vector, v: &Vector, cones: &ConeSpec) -> Vector {
    let mut out = Vector::zeros(u.len());
    for i in 0..cones.nonneg {
        out[i] = u[i] * v[i];
    }
    for r in cones.soc_ranges() {
        let (u0, v0) = (u[r.start], v[r.start]);
        out[r.start] = u.rows(r.start, r.len()).dot(&v.rows(r.start, r.len()));
        for i in r.start + 1..r.end {
            out[i] = u0 * v[i] + v0 * u[i];
        }
    }
    out
}

/// Solves `λ ∘ w = r` for `w` (λ interior).
pub fn jordan_divide(lambda: &Vector, r: &Vector, cones: &ConeSpec) -> Vector {
    let mut out = Vector::zeros(r.len());
    for i in 0..cones.nonneg {
        out[i] = r[i] / lambda[i];
    }
    for rg in cones.soc_ranges() {
        let n = rg.len() - 1;
        let (l0, r0) = (lambda[rg.start], r[rg.start]);
        let l1 = lambda.rows(rg.start + 1, n);
        let r1 = r.rows(rg.start + 1, n);
        let det = l0 * l0 - l1.norm_squared();
        let w0 = (l0 * r0 - l1.dot(&r1)) / det;
        out[rg.start] = w0;
        for j in 0..n {
            out[rg.start + 1 + j] = (r1[j] - w0 * l1[j]) / l0;
        }
    }
    out
}

/// Jordan inverse `u⁻¹` (so that `u ∘ u⁻¹ = e`).
pub fn jordan_inverse(u: &Vector, cones: &ConeSpec) -> Vector {
    jordan_divide(u, &identity(cones), cones)
}

#[derive(Debug, Clone)]
struct SocScaling {
    eta: f64,
    v: Vector,
}

/// Nesterov-Todd scaling `W` with `W z = W⁻¹ s = λ`. Symmetric blockwise.
#[derive(Debug, Clone)]
pub struct NtScaling {
    diag: Vec<f64>,
    soc: Vec<SocScaling>,
    cones: ConeSpec,
}

fn jnorm(u: nalgebra::DVectorView<'_, f64>) -> f64 {
    let t = u[0];
    let rest = u.rows(1, u.len() - 1).norm_squared();
    ((t - rest.sqrt()) * (t + rest.sqrt())).sqrt()
}

impl NtScaling {
    pub fn new(s: &Vector, z: &Vector, cones: &ConeSpec) -> Self {
        let diag = (0..cones.nonneg).map(|i| (s[i] / z[i]).sqrt()).collect();
        let soc = cones
            .soc_ranges()
            .map(|r| {
                let sb = s.rows(r.start, r.len());
                let zb = z.rows(r.start, r.len());
                let (sn, zn) = (jnorm(sb), jnorm(zb));
                let s_bar = sb / sn;
                let z_bar = zb / zn;
                let gamma = ((1.0 + s_bar.dot(&z_bar)) / 2.0).sqrt();
                // scaling point w = (s̄ + J z̄) / 2γ, then v = (w + e) / sqrt(2(w₀ + 1))
                let mut v = s_bar.clone_owned();
                v[0] += z_bar[0];
                for i in 1..r.len() {
                    v[i] -= z_bar[i];
                }
                v /= 2.0 * gamma;
                v[0] += 1.0;
                v /= (2.0 * v[0]).sqrt();
                SocScaling {
                    eta: (sn / zn).sqrt(),
                    v,
                }
            })
            .collect();
        NtScaling {
            diag,
            soc,
            cones: cones.clone(),
        }
    }

    fn apply_impl(&self, x: &Vector, inverse: bool) -> Vector {
        let mut out = Vector::zeros(x.len());
        for (i, d) in self.diag.iter().enumerate() {
            out[i] = if inverse { x[i] / d } else { x[i] * d };
        }
        for (sc, r) in self.soc.iter().zip(self.cones.soc_ranges()) {
            let xb = x.rows(r.start, r.len());
            // J x
            let mut jx = xb.clone_owned();
            for i in 1..r.len() {
                jx[i] = -jx[i];
            }
            let block = if inverse {
                // (1/η)(2 J v vᵀ J x - J x)
                let mut jv = sc.v.clone();
                for i in 1..r.len() {
                    jv[i] = -jv[i];
                }
                (jv * (2.0 * sc.v.dot(&jx)) - jx) / sc.eta
            } else {
                // η(2 v vᵀ x - J x)
                (&sc.v * (2.0 * sc.v.dot(&xb)) - jx) * sc.eta
            };
            out.rows_mut(r.start, r.len()).copy_from(&block);
        }
        out
    }

    pub fn apply(&self, x: &Vector) -> Vector {
        self.apply_impl(x, false)
    }

    pub fn apply_inverse(&self, x: &Vector) -> Vector {
        self.apply_impl(x, true)
    }

    fn apply_inverse_columns(&self, g: &Matrix) -> Matrix {
        let mut out = g.clone();
        for j in 0..g.ncols() {
            let col = self.apply_inverse(&g.column(j).clone_owned());
            out.set_column(j, &col);
        }
        out
    }
}

/// Largest `α ≥ 0` with `u + α d` in the cone (`f64::INFINITY` if unbounded).
pub fn max_step(u: &Vector, d: &Vector, cones: &ConeSpec) -> f64 {
    let mut alpha = f64::INFINITY;
    for i in 0..cones.nonneg {
        if d[i] < 0.0 {
            alpha = alpha.min(-u[i] / d[i]);
        }
    }
    for r in cones.soc_ranges() {
        let n = r.len() - 1;
        let (u0, d0) = (u[r.start], d[r.start]);
        let u1 = u.rows(r.start + 1, n);
        let d1 = d.rows(r.start + 1, n);
        if d0 >= d1.norm() {
            continue;
        }
        let a = d0 * d0 - d1.norm_squared();
        let b = u0 * d0 - u1.dot(&d1);
        let c = (u0 - u1.norm()) * (u0 + u1.norm());
        let step = if a.abs() < 1e-300 {
            if b < 0.0 {
                -c / (2.0 * b)
            } else {
                f64::INFINITY
            }
        } else {
            let disc = (b * b - a * c).max(0.0);
            let q = -(b + b.signum() * disc.sqrt());
            let mut best = f64::INFINITY;
            for root in [q / a, if q != 0.0 { c / q } else { f64::NAN }] {
                if root.is_finite() && root > 0.0 && u0 + root * d0 >= 0.0 {
                    best = best.min(root);
                }
            }
            best
        };
        alpha = alpha.min(step.max(0.0));
    }
    alpha
}

/// Makes `u` strictly interior by adding a multiple of the identity.
fn push_inside(u: &mut Vector, cones: &ConeSpec) {
    let m = min_eigenvalue(u, cones);
    if m <= 1e-8 {
        let shift = 1.0 - m.min(0.0);
        *u += identity(cones) * shift;
    }
}

fn cholesky_solve(m: &Matrix, rhs: &Vector) -> Option<Vector> {
    let n = m.nrows();
    let mut reg = 0.0;
    let scale = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    for _ in 0..6 {
        let mut a = m.clone();
        for i in 0..n {
            a[(i, i)] += reg;
        }
        if let Some(ch) = a.clone().cholesky() {
            let mut x = ch.solve(rhs);
            // one step of refinement against the unregularized matrix
            let r = rhs - m * &x;
            x += ch.solve(&r);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        reg = if reg == 0.0 { 1e-14 * scale } else { reg * 100.0 };
    }
    None
}

struct Direction {
    dx: Vector,
    ds: Vector,
    dz: Vector,
}

/// Solves the linearized KKT system
///
/// ```text
/// Gᵀ dz            = -r_x
/// G dx + ds        = -r_z
/// λ ∘ (W⁻¹ds + W dz) = r_c
/// ```
fn newton_direction(
    problem: &ConeProblem,
    scaling: &NtScaling,
    g_scaled: &Matrix,
    normal: &Matrix,
    lambda: &Vector,
    r_x: &Vector,
    r_z: &Vector,
    r_c: &Vector,
) -> Option<Direction> {
    let cones = &problem.cones;
    let t = jordan_divide(lambda, r_c, cones);
    // dz = W⁻¹(W⁻¹G dx + W⁻¹r_z + t)
    let v = scaling.apply_inverse(r_z) + &t;
    let rhs = -r_x - g_scaled.tr_mul(&v);
    let dx = cholesky_solve(normal, &rhs)?;
    let wdz = g_scaled * &dx + v;
    let dz = scaling.apply_inverse(&wdz);
    // W⁻¹ds = t - W dz
    let ds = scaling.apply(&(t - wdz));
    Some(Direction { dx, ds, dz })
}

/// Runs the interior-point iteration from `x0` (or a least-squares point).
///
/// `stop` is checked on each iterate after the first step; returning
/// `true` ends the run with [`ConeStatus::Stopped`].
pub fn solve(
    problem: &ConeProblem,
    x0: Option<&Vector>,
    settings: &Settings,
    stop: Option<&dyn Fn(&Vector) -> bool>,
) -> ConeSolution {
    let cones = &problem.cones;
    let (g, h, c) = (&problem.g, &problem.h, &problem.c);
    let degree = cones.degree() as f64;
    let e = identity(cones);

    let gtg = g.tr_mul(g);
    let mut x = match x0 {
        Some(x) => x.clone(),
        None => cholesky_solve(&gtg, &g.tr_mul(h)).unwrap_or_else(|| Vector::zeros(g.ncols())),
    };
    let mut s = h - g * &x;
    push_inside(&mut s, cones);
    // least-norm solution of Gᵀz = -c, shifted into the cone
    let mut z = match cholesky_solve(&gtg, c) {
        Some(y) => -(g * y),
        None => jordan_inverse(&s, cones),
    };
    push_inside(&mut z, cones);

    let h_scale = h.norm().max(1.0);
    let c_scale = c.norm().max(1.0);
    let result = |status, x: &Vector, s: &Vector, z: &Vector, iterations| {
        let r_z = g * x + s - h;
        let r_x = g.tr_mul(z) + c;
        ConeSolution {
            status,
            primal_residual: r_z.norm() / h_scale,
            dual_residual: r_x.norm() / c_scale,
            gap: s.dot(z),
            primal_objective: c.dot(x),
            x: x.clone(),
            s: s.clone(),
            z: z.clone(),
            iterations,
        }
    };

    for iter in 0..settings.max_iterations {
        let r_x = g.tr_mul(&z) + c;
        let r_z = g * &x + &s - h;
        let gap = s.dot(&z);
        let pcost = c.dot(&x);
        let pres = r_z.norm() / h_scale;
        let dres = r_x.norm() / c_scale;
        if !(gap.is_finite() && pres.is_finite() && dres.is_finite()) {
            return result(ConeStatus::NumericalFailure, &x, &s, &z, iter);
        }
        if pres <= settings.tolerance
            && dres <= settings.tolerance
            && gap <= settings.tolerance * pcost.abs().max(1.0)
        {
            return result(ConeStatus::Optimal, &x, &s, &z, iter);
        }
        if iter > 0 {
            if let Some(stop) = stop {
                if stop(&x) {
                    return result(ConeStatus::Stopped, &x, &s, &z, iter);
                }
            }
        }

        let scaling = NtScaling::new(&s, &z, cones);
        let lambda = scaling.apply(&z);
        let g_scaled = scaling.apply_inverse_columns(g);
        let normal = g_scaled.tr_mul(&g_scaled);
        let mu = gap / degree;

        // predictor
        let r_c = -jordan_product(&lambda, &lambda, cones);
        let Some(aff) = newton_direction(problem, &scaling, &g_scaled, &normal, &lambda, &r_x, &r_z, &r_c)
        else {
            return result(ConeStatus::NumericalFailure, &x, &s, &z, iter);
        };
        let alpha_aff = max_step(&s, &aff.ds, cones)
            .min(max_step(&z, &aff.dz, cones))
            .min(1.0);
        let gap_aff = (&s + &aff.ds * alpha_aff).dot(&(&z + &aff.dz * alpha_aff));
        let sigma = (gap_aff.max(0.0) / gap).powi(3).clamp(0.0, 1.0);

        // corrector
        let second_order = jordan_product(
            &scaling.apply_inverse(&aff.ds),
            &scaling.apply(&aff.dz),
            cones,
        );
        let r_c = r_c - second_order + &e * (sigma * mu);
        let Some(dir) = newton_direction(problem, &scaling, &g_scaled, &normal, &lambda, &r_x, &r_z, &r_c)
        else {
            return result(ConeStatus::NumericalFailure, &x, &s, &z, iter);
        };
        let alpha_max = max_step(&s, &dir.ds, cones).min(max_step(&z, &dir.dz, cones));
        let alpha = (0.99 * alpha_max).min(1.0);
        if !(alpha > 1e-14) {
            return result(ConeStatus::NumericalFailure, &x, &s, &z, iter);
        }
        x += &dir.dx * alpha;
        s += &dir.ds * alpha;
        z += &dir.dz * alpha;
    }
    result(ConeStatus::MaxIterations, &x, &s, &z, settings.max_iterations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn soc3() -> ConeSpec {
        ConeSpec {
            nonneg: 0,
            soc: vec![3],
        }
    }

    #[test]
    fn nt_scaling_identities() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let cones = ConeSpec {
            nonneg: 3,
            soc: vec![3, 4],
        };
        for _ in 0..50 {
            let mut s = Vector::from_fn(cones.dim(), |_, _| rng.random_range(-1.0..1.0));
            let mut z = Vector::from_fn(cones.dim(), |_, _| rng.random_range(-1.0..1.0));
            push_inside(&mut s, &cones);
            push_inside(&mut z, &cones);
            let w = NtScaling::new(&s, &z, &cones);
            let a = w.apply(&z);
            let b = w.apply_inverse(&s);
            assert!((&a - &b).norm() < 1e-10 * a.norm());
            let x = Vector::from_fn(cones.dim(), |i, _| i as f64 - 2.0);
            assert!((w.apply_inverse(&w.apply(&x)) - &x).norm() < 1e-10 * x.norm());
            assert!(min_eigenvalue(&a, &cones) > 0.0);
        }
    }

    #[test]
    fn jordan_algebra() {
        let cones = ConeSpec {
            nonneg: 2,
            soc: vec![3],
        };
        let u = Vector::from_vec(vec![2.0, 0.5, 3.0, 1.0, -0.5]);
        let inv = jordan_inverse(&u, &cones);
        let prod = jordan_product(&u, &inv, &cones);
        assert!((prod - identity(&cones)).norm() < 1e-12);
        let r = Vector::from_vec(vec![1.0, -2.0, 0.3, 0.7, 0.1]);
        let w = jordan_divide(&u, &r, &cones);
        assert!((jordan_product(&u, &w, &cones) - r).norm() < 1e-12);
    }

    #[test]
    fn step_to_boundary() {
        let cones = soc3();
        let u = Vector::from_vec(vec![1.0, 0.0, 0.0]);
        let d = Vector::from_vec(vec![0.0, 1.0, 0.0]);
        assert!((max_step(&u, &d, &cones) - 1.0).abs() < 1e-12);
        let d = Vector::from_vec(vec![-1.0, 0.0, 0.0]);
        assert!((max_step(&u, &d, &cones) - 1.0).abs() < 1e-12);
        let d = Vector::from_vec(vec![1.0, 0.5, 0.0]);
        assert_eq!(max_step(&u, &d, &cones), f64::INFINITY);
        let lin = ConeSpec {
            nonneg: 2,
            soc: vec![],
        };
        let u = Vector::from_vec(vec![1.0, 2.0]);
        let d = Vector::from_vec(vec![-4.0, -1.0]);
        assert!((max_step(&u, &d, &lin) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn small_lp() {
        // min -x - y  s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0  → (1.6, 1.2)
        let problem = ConeProblem {
            c: Vector::from_vec(vec![-1.0, -1.0]),
            g: Matrix::from_row_slice(4, 2, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
            h: Vector::from_vec(vec![4.0, 6.0, 0.0, 0.0]),
            cones: ConeSpec {
                nonneg: 4,
                soc: vec![],
            },
        };
        let sol = solve(&problem, None, &Settings::default(), None);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.x[0] - 1.6).abs() < 1e-6 && (sol.x[1] - 1.2).abs() < 1e-6);
        assert!(sol.gap < 1e-7);
    }

    #[test]
    fn socp_projection() {
        // min t  s.t. ‖(x - 3, y + 4)‖ ≤ t  →  t = 5 at x = y = 0 with x, y ≤ 0 bounds
        // variables (t, x, y); orthant rows x ≤ 0, -y ≤ 0 i.e. y ≥ 0
        let problem = ConeProblem {
            c: Vector::from_vec(vec![1.0, 0.0, 0.0]),
            g: Matrix::from_row_slice(
                5,
                3,
                &[
                    0.0, 1.0, 0.0, //
                    0.0, 0.0, -1.0, //
                    -1.0, 0.0, 0.0, //
                    0.0, -1.0, 0.0, //
                    0.0, 0.0, -1.0,
                ],
            ),
            h: Vector::from_vec(vec![0.0, 0.0, 0.0, -3.0, 4.0]),
            cones: ConeSpec {
                nonneg: 2,
                soc: vec![3],
            },
        };
        let sol = solve(&problem, None, &Settings::default(), None);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.x[0] - 5.0).abs() < 1e-6, "{}", sol.x);
        assert!(sol.x[1].abs() < 1e-6 && sol.x[2].abs() < 1e-6);
    }

    #[test]
    fn rotated_cone_via_standard_cone() {
        // min x + y  s.t. x·y ≥ 1 written as ‖(2, x - y)‖ ≤ x + y  → x = y = 1
        let problem = ConeProblem {
            c: Vector::from_vec(vec![1.0, 1.0]),
            g: Matrix::from_row_slice(3, 2, &[-1.0, -1.0, -1.0, 1.0, 0.0, 0.0]),
            h: Vector::from_vec(vec![0.0, 0.0, 2.0]),
            cones: soc3(),
        };
        let sol = solve(&problem, None, &Settings::default(), None);
        assert_eq!(sol.status, ConeStatus::Optimal);
        assert!((sol.x[0] - 1.0).abs() < 1e-5 && (sol.x[1] - 1.0).abs() < 1e-5);
        assert!((sol.primal_objective - 2.0).abs() < 1e-7);
    }

    #[test]
    fn stop_predicate_ends_early() {
        let problem = ConeProblem {
            c: Vector::from_vec(vec![1.0]),
            g: Matrix::from_row_slice(2, 1, &[-1.0, 1.0]),
            h: Vector::from_vec(vec![1.0, 10.0]),
            cones: ConeSpec {
                nonneg: 2,
                soc: vec![],
            },
        };
        let stop = |x: &Vector| x[0] < 5.0;
        let sol = solve(&problem, Some(&Vector::from_vec(vec![9.0])), &Settings::default(), Some(&stop));
        assert_eq!(sol.status, ConeStatus::Stopped);
        assert!(sol.x[0] < 5.0 && sol.x[0] > -1.0);
    }

    proptest::proptest! {
        #[test]
        fn jordan_inverse_and_scaling(
            raw_s in proptest::collection::vec(-3.0f64..3.0, 8),
            raw_z in proptest::collection::vec(-3.0f64..3.0, 8),
        ) {
            let cones = ConeSpec { nonneg: 2, soc: vec![3, 3] };
            let mut s = Vector::from_vec(raw_s);
            let mut z = Vector::from_vec(raw_z);
            push_inside(&mut s, &cones);
            push_inside(&mut z, &cones);
            let prod = jordan_product(&s, &jordan_inverse(&s, &cones), &cones);
            proptest::prop_assert!((prod - identity(&cones)).norm() < 1e-9);
            let w = NtScaling::new(&s, &z, &cones);
            let lambda = w.apply(&z);
            proptest::prop_assert!((&lambda - w.apply_inverse(&s)).norm() < 1e-9 * lambda.norm().max(1.0));
            // λᵀλ = sᵀz
            proptest::prop_assert!((lambda.norm_squared() - s.dot(&z)).abs() < 1e-9 * s.dot(&z).max(1.0));
        }
    }
}
