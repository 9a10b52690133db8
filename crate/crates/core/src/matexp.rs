//! Dense small-matrix kernels: the matrix exponential, directional
//! derivatives of `exp(uA)` through block augmentation, and exact
//! convolution of `exp(As)·b` against a constant input.
//!
//! Everything here is a pure function of its arguments. Matrices are
//! expected to be small (tens of rows); no attempt is made to exploit
//! sparsity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense real matrix used throughout the crate.
pub type Mat = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Coefficients of the [13/13] Padé approximant to `exp`.
const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

/// Largest 1-norm for which the unscaled [13/13] approximant meets double
/// precision backward error.
const THETA13: f64 = 5.371_920_351_148_152;

fn check_square(m: &Mat, context: &'static str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::dimension(
            context,
            format!("expected a square matrix, got {}x{}", m.nrows(), m.ncols()),
        ));
    }
    Ok(m.nrows())
}

fn check_finite(m: &Mat, context: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{context}: matrix has non-finite entries")))
    }
}

fn one_norm(m: &Mat) -> f64 {
    m.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with a fixed [13/13] Padé
/// approximant.
pub fn expm(m: &Mat) -> Result<Mat> {
    let n = check_square(m, "expm")?;
    check_finite(m, "expm")?;
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    if n == 1 {
        return Ok(Mat::from_element(1, 1, m[(0, 0)].exp()));
    }

    let norm = one_norm(m);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil() as i32
    } else {
        0
    };
    let a = m * 2f64.powi(-squarings);

    let b = &PADE13;
    let ident = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let denom = &v - &u;
    let numer = &v + &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or_else(|| Error::Domain("expm: singular Padé denominator".into()))?;

    for _ in 0..squarings {
        r = &r * &r;
    }
    Ok(r)
}

/// Block upper-bidiagonal matrix with `a` on the diagonal and `v` on the
/// first superdiagonal, `order + 1` blocks per side.
pub fn build_block(a: &Mat, v: &Mat, order: usize) -> Result<Mat> {
    let k = check_square(a, "build_block")?;
    if v.shape() != a.shape() {
        return Err(Error::dimension(
            "build_block",
            format!("A is {k}x{k} but V is {}x{}", v.nrows(), v.ncols()),
        ));
    }
    let size = (order + 1) * k;
    let mut out = Mat::zeros(size, size);
    for j in 0..=order {
        out.view_mut((j * k, j * k), (k, k)).copy_from(a);
        if j < order {
            out.view_mut((j * k, (j + 1) * k), (k, k)).copy_from(v);
        }
    }
    Ok(out)
}

/// Directional derivatives `d^j/dh^j exp(u(A + hV))` at `h = 0`, for
/// `j = 0..=order`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirDerivStack {
    blocks: Vec<Mat>,
}

impl DirDerivStack {
    pub fn order(&self) -> usize {
        self.blocks.len() - 1
    }

    /// The `j`-th derivative; `block(0)` is `exp(uA)`.
    pub fn block(&self, j: usize) -> &Mat {
        &self.blocks[j]
    }

    pub fn blocks(&self) -> &[Mat] {
        &self.blocks
    }

    pub fn into_blocks(self) -> Vec<Mat> {
        self.blocks
    }
}

/// Reads the derivatives off the first block row of `exp(u·B_n)`, where
/// `B_n = build_block(A, V, n)`: block `j` of that row is `D_j / j!`.
pub fn directional_derivs(a: &Mat, v: &Mat, u: f64, order: usize) -> Result<DirDerivStack> {
    if !u.is_finite() {
        return Err(Error::Domain(format!("directional_derivs: scale u = {u} is not finite")));
    }
    let k = a.nrows();
    let big = build_block(a, v, order)?;
    let e = expm(&(big * u))?;
    let mut factorial = 1.0;
    let blocks = (0..=order)
        .map(|j| {
            if j > 0 {
                factorial *= j as f64;
            }
            e.view((0, j * k), (k, k)).into_owned() * factorial
        })
        .collect();
    Ok(DirDerivStack { blocks })
}

/// One step of exact input convolution over an interval of length `dt`
/// with constant unit input.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStep {
    /// `exp(A·dt)`.
    pub phi: Mat,
    /// `∫_0^dt exp(As) ds · b`.
    pub psi: Vector,
}

/// Computes `exp(A·dt)` and `∫_0^dt exp(As) ds · b` from the exponential of
/// the augmented matrix `[[A, b], [0, 0]]`. Works for singular `A`.
pub fn conv_step(a: &Mat, b: &Vector, dt: f64) -> Result<ConvStep> {
    let k = check_square(a, "conv_step")?;
    if b.len() != k {
        return Err(Error::dimension(
            "conv_step",
            format!("A is {k}x{k} but b has {} rows", b.len()),
        ));
    }
    if !(dt >= 0.0 && dt.is_finite()) {
        return Err(Error::Domain(format!("conv_step: dt = {dt} must be finite and >= 0")));
    }
    let mut aug = Mat::zeros(k + 1, k + 1);
    aug.view_mut((0, 0), (k, k)).copy_from(a);
    aug.view_mut((0, k), (k, 1)).copy_from(b);
    let e = expm(&(aug * dt))?;
    Ok(ConvStep {
        phi: e.view((0, 0), (k, k)).into_owned(),
        psi: e.view((0, k), (k, 1)).column(0).into_owned(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Truncated Taylor series with scaling and squaring, summed to
    /// convergence; used only as an independent check.
    fn taylor_expm(m: &Mat) -> Mat {
        let n = m.nrows();
        let norm = one_norm(m);
        let s = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
        let a = m * 2f64.powi(-s);
        let mut term = Mat::identity(n, n);
        let mut sum = term.clone();
        for j in 1..60 {
            term = &term * &a / j as f64;
            sum += &term;
        }
        for _ in 0..s {
            sum = &sum * &sum;
        }
        sum
    }

    fn rel_err(a: &Mat, b: &Mat) -> f64 {
        (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
    }

    fn random_mat(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Mat {
        Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0) * scale)
    }

    #[test]
    fn expm_of_zero_is_identity() {
        assert_eq!(expm(&Mat::zeros(2, 2)).unwrap(), Mat::identity(2, 2));
    }

    #[test]
    fn expm_diagonal() {
        let m = Mat::from_diagonal(&Vector::from_vec(vec![1.0, -1.0]));
        let e = expm(&m).unwrap();
        assert!((e[(0, 0)] / std::f64::consts::E - 1.0).abs() <= 1e-13);
        assert!((e[(1, 1)] * std::f64::consts::E - 1.0).abs() <= 1e-13);
        assert_eq!(e[(0, 1)], 0.0);
        assert_eq!(e[(1, 0)], 0.0);
    }

    #[test]
    fn expm_nilpotent() {
        let m = Mat::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let e = expm(&m).unwrap();
        let expect = Mat::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
        assert!((e - expect).amax() <= 1e-15);
    }

    #[test]
    fn expm_rejects_bad_input() {
        assert!(matches!(expm(&Mat::zeros(2, 3)), Err(Error::Dimension { .. })));
        let mut m = Mat::zeros(2, 2);
        m[(0, 1)] = f64::NAN;
        assert!(matches!(expm(&m), Err(Error::Domain(_))));
    }

    #[test]
    fn expm_matches_taylor_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for &(n, scale) in &[(3, 0.1), (4, 1.0), (6, 3.0), (8, 5.0)] {
            for _ in 0..10 {
                let m = random_mat(&mut rng, n, scale);
                let e = expm(&m).unwrap();
                assert!(rel_err(&e, &taylor_expm(&m)) <= 1e-12, "n={n} scale={scale}");
            }
        }
    }

    #[test]
    fn expm_large_norm_symmetric() {
        // Symmetric test matrix with eigenvalues in [-40, 10]: compare with
        // the eigen-decomposition route.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let q = random_mat(&mut rng, 5, 1.0).qr().q();
        let eig = Vector::from_vec(vec![-40.0, -12.5, -3.0, 0.5, 10.0]);
        let m = &q * Mat::from_diagonal(&eig) * q.transpose();
        let expect = &q * Mat::from_diagonal(&eig.map(f64::exp)) * q.transpose();
        assert!(rel_err(&expm(&m).unwrap(), &expect) <= 1e-12);
    }

    #[test]
    fn semigroup_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let a = random_mat(&mut rng, 4, 5.0 / 4.0);
            let s = rng.random_range(0.0..2.0);
            let t = rng.random_range(0.0..2.0);
            let whole = expm(&(&a * (s + t))).unwrap();
            let split = expm(&(&a * s)).unwrap() * expm(&(&a * t)).unwrap();
            assert!((&whole - split).norm() <= 1e-10 * whole.norm());
        }
    }

    #[test]
    fn build_block_shapes() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let v = Mat::from_row_slice(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(build_block(&a, &v, 0).unwrap(), a);
        let b1 = build_block(&a, &v, 1).unwrap();
        let expect = Mat::from_row_slice(
            4,
            4,
            &[1.0, 2.0, 5.0, 6.0, 3.0, 4.0, 7.0, 8.0, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 3.0, 4.0],
        );
        assert_eq!(b1, expect);

        let one = Mat::identity(1, 1);
        let b2 = build_block(&one, &one, 2).unwrap();
        let expect = Mat::from_row_slice(3, 3, &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0]);
        assert_eq!(b2, expect);

        assert!(build_block(&a, &Mat::zeros(3, 3), 1).is_err());
    }

    #[test]
    fn derivs_zero_direction() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.3, 0.2, -2.0]);
        let stack = directional_derivs(&a, &Mat::zeros(2, 2), 0.7, 3).unwrap();
        assert_eq!(stack.order(), 3);
        for j in 1..=3 {
            assert_eq!(stack.block(j).amax(), 0.0);
        }
    }

    #[test]
    fn derivs_scalar_case() {
        let (a, u) = (-0.4, 1.3);
        let stack = directional_derivs(&Mat::from_element(1, 1, a), &Mat::identity(1, 1), u, 2)
            .unwrap();
        let e = (u * a).exp();
        assert!((stack.block(0)[(0, 0)] - e).abs() <= 1e-15);
        assert!((stack.block(1)[(0, 0)] - u * e).abs() <= 1e-14);
        assert!((stack.block(2)[(0, 0)] - u * u * e).abs() <= 1e-14);
    }

    #[test]
    fn derivs_match_central_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = random_mat(&mut rng, 2, 1.0);
        let v = random_mat(&mut rng, 2, 1.0);
        let u = 0.8;
        let h = 1e-5;
        let fd = (expm(&((&a + &v * h) * u)).unwrap() - expm(&((&a - &v * h) * u)).unwrap())
            / (2.0 * h);
        let stack = directional_derivs(&a, &v, u, 1).unwrap();
        assert!(rel_err(stack.block(1), &fd) <= 1e-6);
        assert!(rel_err(stack.block(0), &expm(&(&a * u)).unwrap()) <= 1e-12);
    }

    #[test]
    fn derivs_order_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_mat(&mut rng, 3, 1.0);
        let v = random_mat(&mut rng, 3, 1.0);
        let lo = directional_derivs(&a, &v, 0.6, 1).unwrap();
        let hi = directional_derivs(&a, &v, 0.6, 2).unwrap();
        for j in 0..=1 {
            assert!(rel_err(hi.block(j), lo.block(j)) <= 1e-13);
        }
    }

    #[test]
    fn derivs_commuting_directions() {
        // V a polynomial in A commutes with A.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_mat(&mut rng, 3, 1.0);
        let v = &a * &a * 0.5 - &a * 0.3 + Mat::identity(3, 3);
        let u = 1.1;
        let stack = directional_derivs(&a, &v, u, 1).unwrap();
        let expect = &v * expm(&(&a * u)).unwrap() * u;
        assert!(rel_err(stack.block(1), &expect) <= 1e-10);
    }

    #[test]
    fn conv_step_empty_interval() {
        let a = Mat::from_row_slice(2, 2, &[-1.0, 0.5, 0.0, -3.0]);
        let b = Vector::from_vec(vec![1.0, 2.0]);
        let step = conv_step(&a, &b, 0.0).unwrap();
        assert_eq!(step.phi, Mat::identity(2, 2));
        assert_eq!(step.psi, Vector::zeros(2));
    }

    #[test]
    fn conv_step_scalar() {
        let t = 0.9;
        let step = conv_step(&Mat::identity(1, 1), &Vector::from_element(1, 1.0), t).unwrap();
        assert!((step.phi[(0, 0)] - t.exp()).abs() <= 1e-14);
        assert!((step.psi[0] - t.exp_m1()).abs() <= 1e-14);
    }

    #[test]
    fn conv_step_singular_matrix() {
        // A = 0: Psi = dt·b.
        let step = conv_step(&Mat::zeros(2, 2), &Vector::from_vec(vec![1.0, -2.0]), 0.25).unwrap();
        assert!((step.psi[0] - 0.25).abs() <= 1e-15);
        assert!((step.psi[1] + 0.5).abs() <= 1e-15);
    }

    #[test]
    fn conv_step_matches_riemann_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let a = random_mat(&mut rng, 3, 1.0) - Mat::identity(3, 3) * 2.0;
        let b = Vector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
        let dt = 0.7;
        let step = conv_step(&a, &b, dt).unwrap();

        // Midpoint rule, the integrand advanced by a fixed propagator.
        let panels = 1_000_000;
        let h = dt / panels as f64;
        let prop = taylor_expm(&(&a * h));
        let mut v = taylor_expm(&(&a * (h / 2.0))) * &b;
        let mut sum = Vector::zeros(3);
        for _ in 0..panels {
            sum += &v;
            v = &prop * v;
        }
        let quad = sum * h;
        assert!((&step.psi - &quad).norm() <= 1e-8 * quad.norm());
    }

    #[test]
    fn conv_step_additivity() {
        let a = Mat::from_row_slice(2, 2, &[-0.5, 1.0, -1.0, -0.2]);
        let b = Vector::from_vec(vec![0.3, 1.0]);
        let (d1, d2) = (0.4, 0.9);
        let whole = conv_step(&a, &b, d1 + d2).unwrap();
        let s1 = conv_step(&a, &b, d1).unwrap();
        let s2 = conv_step(&a, &b, d2).unwrap();
        let combined = &s2.phi * &s1.psi + &s2.psi;
        assert!((&whole.psi - &combined).norm() <= 1e-12 * whole.psi.norm());
    }

    #[test]
    fn conv_step_dimension_errors() {
        let a = Mat::identity(2, 2);
        assert!(conv_step(&a, &Vector::zeros(3), 1.0).is_err());
        assert!(conv_step(&a, &Vector::zeros(2), -1.0).is_err());
    }
}
