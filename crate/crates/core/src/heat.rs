//! Heat semigroup and transition kernels for the half-generator.
//!
//! The kernel at duration h is `K(h) = exp(h * L/2)` with `L` the Dirichlet
//! form generator. Two routes are implemented: a spectral decomposition of
//! the m-symmetrized half-generator (the default; one factorization serves
//! every h) and Padé scaling-and-squaring of the generator matrix, kept as
//! an independent cross-check.

use nalgebra::DMatrix;

use crate::error::{CoreError, Result};
use crate::space::{Field, Space};
use crate::transport;

const ROW_SUM_TOL: f64 = 1e-10;
const NEGATIVE_ENTRY_TOL: f64 = 1e-12;

/// Transition kernel over a fixed duration. `entries[(x, y)]` is the
/// probability mass moved from x to {y}; rows are probability vectors and
/// the kernel is reversible with respect to m.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    h: f64,
    entries: DMatrix<f64>,
}

impl KernelMatrix {
    /// Wraps raw entries, clamping round-off negatives (within 1e-12) to
    /// zero and renormalizing rows whose sums are within 1e-10 of one.
    /// Larger violations are errors.
    pub fn new(h: f64, mut entries: DMatrix<f64>) -> Result<Self> {
        let n = entries.nrows();
        let mut worst_negative = 0.0_f64;
        for v in entries.iter_mut() {
            if *v < 0.0 {
                worst_negative = worst_negative.max(-*v);
                if -*v > NEGATIVE_ENTRY_TOL {
                    return Err(CoreError::InvalidKernel {
                        what: "nonnegative entries",
                        deviation: -*v,
                    });
                }
                *v = 0.0;
            }
        }
        let _ = worst_negative;
        for x in 0..n {
            let sum: f64 = entries.row(x).iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return Err(CoreError::InvalidKernel {
                    what: "unit row sums",
                    deviation: (sum - 1.0).abs(),
                });
            }
            for y in 0..n {
                entries[(x, y)] /= sum;
            }
        }
        Ok(Self { h, entries })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.entries[(x, y)]
    }

    /// Row as a probability mass vector.
    pub fn row_masses(&self, x: usize) -> Vec<f64> {
        self.entries.row(x).iter().copied().collect()
    }

    /// `(K f)(x) = sum_y K[x][y] f(y)`.
    pub fn apply(&self, f: &Field) -> Field {
        let n = self.n();
        debug_assert_eq!(f.len(), n);
        let v = f.values();
        Field::from_fn(n, |x| (0..n).map(|y| self.entries[(x, y)] * v[y]).sum())
    }

    /// Worst deviation from reversibility, `max |m(x)K[x][y] - m(y)K[y][x]|`.
    pub fn reversibility_defect(&self, measure: &[f64]) -> f64 {
        let n = self.n();
        let mut worst = 0.0_f64;
        for x in 0..n {
            for y in (x + 1)..n {
                worst = worst
                    .max((measure[x] * self.entries[(x, y)] - measure[y] * self.entries[(y, x)]).abs());
            }
        }
        worst
    }

    /// Worst deviation of a row sum from one.
    pub fn row_sum_defect(&self) -> f64 {
        (0..self.n())
            .map(|x| (self.entries.row(x).iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Spectral decomposition of the symmetrized half-generator. One
/// factorization produces kernels and semigroup actions at any duration.
#[derive(Clone, Debug)]
pub struct SpectralHeat {
    sqrt_m: Vec<f64>,
    inv_sqrt_m: Vec<f64>,
    /// eigenvalues of L/2, sorted descending (zero first)
    eigvals: Vec<f64>,
    /// orthonormal eigenbasis of the symmetrized operator, columns sorted
    /// to match `eigvals`
    basis: DMatrix<f64>,
}

impl SpectralHeat {
    pub fn new(s: &Space) -> Self {
        let n = s.n();
        let m = s.measure();
        let sqrt_m: Vec<f64> = m.iter().map(|&v| v.sqrt()).collect();
        let inv_sqrt_m: Vec<f64> = sqrt_m.iter().map(|&v| 1.0 / v).collect();
        // symmetrized half-generator: S = M^(1/2) (L/2) M^(-1/2)
        let mut sym = DMatrix::zeros(n, n);
        for x in 0..n {
            let mut diag = 0.0;
            for &(y, c) in s.neighbors(x) {
                sym[(x, y)] = c / (2.0 * sqrt_m[x] * sqrt_m[y]);
                diag += c;
            }
            sym[(x, x)] = -diag / (2.0 * m[x]);
        }
        // enforce exact symmetry against round-off before factorizing
        for x in 0..n {
            for y in (x + 1)..n {
                let avg = 0.5 * (sym[(x, y)] + sym[(y, x)]);
                sym[(x, y)] = avg;
                sym[(y, x)] = avg;
            }
        }
        let (raw_vals, raw_vecs) = jacobi_eigen(sym);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| raw_vals[b].total_cmp(&raw_vals[a]));
        let eigvals: Vec<f64> = order.iter().map(|&k| raw_vals[k]).collect();
        let basis = DMatrix::from_fn(n, n, |x, k| raw_vecs[(x, order[k])]);
        Self { sqrt_m, inv_sqrt_m, eigvals, basis }
    }

    pub fn n(&self) -> usize {
        self.eigvals.len()
    }

    /// Eigenvalues of the half-generator, descending; the first is zero on
    /// connected spaces.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigvals
    }

    /// k-th smoothest eigenvector of the generator, orthonormal in L^2(m).
    pub fn eigenfield(&self, k: usize) -> Field {
        let n = self.n();
        Field::from_fn(n, |x| self.inv_sqrt_m[x] * self.basis[(x, k)])
    }

    /// Kernel at duration h, `K = M^(-1/2) V e^(h Lambda) V^T M^(1/2)`.
    pub fn kernel(&self, h: f64) -> Result<KernelMatrix> {
        if h < 0.0 || !h.is_finite() {
            return Err(CoreError::InvalidArgument(format!("kernel duration h = {h}")));
        }
        let n = self.n();
        let weights: Vec<f64> = self.eigvals.iter().map(|&l| (h * l).exp()).collect();
        let mut entries = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += self.basis[(x, k)] * weights[k] * self.basis[(y, k)];
                }
                entries[(x, y)] = self.inv_sqrt_m[x] * acc * self.sqrt_m[y];
            }
        }
        KernelMatrix::new(h, entries)
    }

    /// Applies the semigroup without forming the kernel matrix.
    pub fn apply(&self, h: f64, f: &Field) -> Field {
        let n = self.n();
        debug_assert_eq!(f.len(), n);
        // coefficients of M^(1/2) f in the eigenbasis
        let v = f.values();
        let mut coeffs = vec![0.0; n];
        for k in 0..n {
            let mut acc = 0.0;
            for x in 0..n {
                acc += self.basis[(x, k)] * self.sqrt_m[x] * v[x];
            }
            coeffs[k] = acc * (h * self.eigvals[k]).exp();
        }
        Field::from_fn(n, |x| {
            let mut acc = 0.0;
            for k in 0..n {
                acc += self.basis[(x, k)] * coeffs[k];
            }
            self.inv_sqrt_m[x] * acc
        })
    }
}

/// Cyclic two-sided Jacobi eigendecomposition of a symmetric matrix.
/// Returns eigenvalues and an orthonormal eigenvector matrix (columns).
/// Quadratically convergent; residuals sit at n * eps * ||A|| even on the
/// clustered spectra of irregular graphs.
fn jacobi_eigen(mut a: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut v = DMatrix::<f64>::identity(n, n);
    if n <= 1 {
        return (vec![a[(0, 0)]; n.min(1)], v);
    }
    let frobenius = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = f64::EPSILON * frobenius.max(f64::MIN_POSITIVE);
    for _sweep in 0..60 {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| a[(p, q)] * a[(p, q)])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|k| a[(k, k)]).collect(), v)
}

/// Half-generator as a dense matrix, rows scaled by 1/m.
pub(crate) fn half_generator_matrix(s: &Space) -> DMatrix<f64> {
    let n = s.n();
    let mut a = DMatrix::zeros(n, n);
    for x in 0..n {
        let mut diag = 0.0;
        for &(y, c) in s.neighbors(x) {
            a[(x, y)] = c / (2.0 * s.measure()[x]);
            diag += c;
        }
        a[(x, x)] = -diag / (2.0 * s.measure()[x]);
    }
    a
}

/// Transition kernel over duration h via the spectral route.
pub fn heat_kernel(s: &Space, h: f64) -> Result<KernelMatrix> {
    SpectralHeat::new(s).kernel(h)
}

/// Same kernel via Padé scaling-and-squaring of the half-generator;
/// independent of the spectral route, used to cross-check it.
pub fn heat_kernel_expm(s: &Space, h: f64) -> Result<KernelMatrix> {
    if h < 0.0 || !h.is_finite() {
        return Err(CoreError::InvalidArgument(format!("kernel duration h = {h}")));
    }
    let a = half_generator_matrix(s) * h;
    KernelMatrix::new(h, expm(&a))
}

/// `P_h f`, the semigroup applied to a field.
pub fn semigroup_apply(s: &Space, h: f64, f: &Field) -> Result<Field> {
    s.check_field(f)?;
    if h < 0.0 || !h.is_finite() {
        return Err(CoreError::InvalidArgument(format!("semigroup duration h = {h}")));
    }
    Ok(SpectralHeat::new(s).apply(h, f))
}

/// Kernel regularity diagnostic: the worst ratio
/// `W2(p_h(x,.), p_h(y,.)) / d(x,y)` over conductance edges. Reported as a
/// curve in h; nothing is asserted about its decay rate.
pub fn kernel_lipschitz_diagnostic(s: &Space, h: f64) -> Result<f64> {
    if h <= 0.0 {
        return Err(CoreError::InvalidArgument("diagnostic needs h > 0".into()));
    }
    let kernel = heat_kernel(s, h)?;
    let mut worst = 0.0_f64;
    for &(x, y, _) in s.edges() {
        let w = transport::wasserstein2_masses(s, &kernel.row_masses(x), &kernel.row_masses(y))?;
        worst = worst.max(w / s.distance(x, y));
    }
    Ok(worst)
}

/// Matrix exponential by degree-13 Padé approximation with scaling and
/// squaring (Higham 2005).
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    const B: [f64; 14] = [
        64764752532480000.0,
        32382376266240000.0,
        7771770303897600.0,
        1187353796428800.0,
        129060195264000.0,
        10559470521600.0,
        670442572800.0,
        33522128640.0,
        1323241920.0,
        40840800.0,
        960960.0,
        16380.0,
        182.0,
        1.0,
    ];
    let n = a.nrows();
    let norm = a
        .column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0_f64, f64::max);
    let squarings = if norm > 5.371920351148152 {
        (norm / 5.371920351148152).log2().ceil() as u32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings as i32);

    let a2 = &scaled * &scaled;
    let a4 = &a2 * &a2;
    let a6 = &a2 * &a4;
    let ident = DMatrix::identity(n, n);

    let u_inner = &a6 * (B[13] * &a6 + B[11] * &a4 + B[9] * &a2)
        + B[7] * &a6
        + B[5] * &a4
        + B[3] * &a2
        + B[1] * &ident;
    let u = &scaled * u_inner;
    let v = &a6 * (B[12] * &a6 + B[10] * &a4 + B[8] * &a2)
        + B[6] * &a6
        + B[4] * &a4
        + B[2] * &a2
        + B[0] * &ident;

    let denom = &v - &u;
    let numer = &v + &u;
    let mut result = denom
        .lu()
        .solve(&numer)
        .expect("Padé denominator is invertible for finite matrices");
    for _ in 0..squarings {
        result = &result * &result;
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_space, two_point_space, SpaceKind, SpaceSpec};
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_duration_is_identity() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 6 })).unwrap();
        let k = heat_kernel(&s, 0.0).unwrap();
        for x in 0..6 {
            for y in 0..6 {
                let expected = if x == y { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(k.get(x, y), expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn two_point_kernel_by_hand() {
        // rates +-2 for the half-generator, so K[0][0] = (1 + e^(-2h)) / 2
        let s = two_point_space();
        for h in [0.1, 0.5, 2.0] {
            let k = heat_kernel(&s, h).unwrap();
            assert_abs_diff_eq!(k.get(0, 0), 0.5 * (1.0 + (-2.0 * h).exp()), epsilon = 1e-12);
            assert_abs_diff_eq!(k.get(0, 1), 0.5 * (1.0 - (-2.0 * h).exp()), epsilon = 1e-12);
        }
    }

    #[test]
    fn long_time_rows_converge_to_the_measure() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 8 })).unwrap();
        let k = heat_kernel(&s, 100.0).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                assert_abs_diff_eq!(k.get(x, y), s.measure()[y], epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn semigroup_law() {
        let s = crate::space::random_connected_space(12, 4).unwrap();
        let heat = SpectralHeat::new(&s);
        let k1 = heat.kernel(0.3).unwrap();
        let k2 = heat.kernel(0.7).unwrap();
        let k12 = heat.kernel(1.0).unwrap();
        let prod = k1.entries() * k2.entries();
        let defect = (&prod - k12.entries()).amax();
        assert!(defect <= 1e-8, "semigroup defect {defect}");
    }

    #[test]
    fn spectral_and_pade_routes_agree() {
        // sizes and seeds picked to include spectra that defeat textbook
        // QL implementations; the two routes must still agree
        for (n, seed) in [(10, 8), (24, 103), (28, 104), (48, 107)] {
            let s = crate::space::random_connected_space(n, seed).unwrap();
            for h in [0.01, 0.05, 0.4, 1.5] {
                let spectral = heat_kernel(&s, h).unwrap();
                let pade = heat_kernel_expm(&s, h).unwrap();
                let diff = (spectral.entries() - pade.entries()).amax();
                assert!(diff <= 1e-10, "routes differ by {diff} at h = {h}, n = {n}");
            }
        }
    }

    #[test]
    fn kernel_contract_properties_on_random_fields() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Gasket { level: 2 })).unwrap();
        let heat = SpectralHeat::new(&s);
        let k = heat.kernel(0.35).unwrap();
        assert!(k.row_sum_defect() <= 1e-12);
        assert!(k.reversibility_defect(s.measure()) <= 1e-10);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let f = Field::from_fn(s.n(), |_| rng.gen_range(-3.0..3.0));
            let pf = k.apply(&f);
            assert!(pf.norm_l2_m(s.measure()) <= f.norm_l2_m(s.measure()) + 1e-12);
            let pos = k.apply(&f.map(f64::abs));
            assert!(pos.min() >= -1e-12);
        }
        let ones = Field::constant(s.n(), 1.0);
        assert!(k.apply(&ones).sub(&ones).sup_norm() <= 1e-12);
    }

    #[test]
    fn generator_consistency_as_h_shrinks() {
        // (P_h f - f)/h approaches (L/2) f at first order in h
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 8 })).unwrap();
        let f = Field::from_fn(8, |x| (2.0 * std::f64::consts::PI * x as f64 / 8.0).sin());
        let lf_half = crate::space::generator_apply(&s, &f).scale(0.5);
        let heat = SpectralHeat::new(&s);
        let err_at = |h: f64| {
            heat.apply(h, &f)
                .sub(&f)
                .scale(1.0 / h)
                .sub(&lf_half)
                .sup_norm()
        };
        let e1 = err_at(1e-2);
        let e2 = err_at(5e-3);
        assert!(e2 <= 0.65 * e1, "first-order convergence: {e1} vs {e2}");
    }

    #[test]
    fn indicator_column_reads_the_kernel() {
        let s = two_point_space();
        let h = 0.4;
        let k = heat_kernel(&s, h).unwrap();
        let f = Field::indicator(2, 0);
        let pf = semigroup_apply(&s, h, &f).unwrap();
        assert_abs_diff_eq!(pf.get(0), k.get(0, 0), epsilon = 1e-12);
        assert_abs_diff_eq!(pf.get(1), k.get(1, 0), epsilon = 1e-12);
    }

    #[test]
    fn lipschitz_diagnostic_limits() {
        let s = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 8 })).unwrap();
        let tiny = kernel_lipschitz_diagnostic(&s, 1e-6).unwrap();
        assert_abs_diff_eq!(tiny, 1.0, epsilon = 1e-2);
        let long = kernel_lipschitz_diagnostic(&s, 50.0).unwrap();
        assert!(long <= 1e-6, "kernels should have merged, got {long}");
        // monotone decrease on a finer cycle
        let s16 = build_space(&SpaceSpec::new(SpaceKind::Cycle { n: 16 })).unwrap();
        let l: Vec<f64> = [0.01, 0.1, 1.0]
            .iter()
            .map(|&h| kernel_lipschitz_diagnostic(&s16, h).unwrap())
            .collect();
        assert!(l[0] > l[1] && l[1] > l[2], "diagnostic not decreasing: {l:?}");
    }

    #[test]
    fn expm_matches_scalar_and_nilpotent_cases() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&a);
        // exp of a nilpotent strictly upper matrix is I + A
        assert_abs_diff_eq!(e[(0, 0)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(0, 1)], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(e[(1, 1)], 1.0, epsilon = 1e-14);
        let b = DMatrix::from_row_slice(1, 1, &[-3.2]);
        assert_abs_diff_eq!(expm(&b)[(0, 0)], (-3.2_f64).exp(), epsilon = 1e-14);
    }
}
