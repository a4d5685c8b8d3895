//! Matrix generating functions carried as (value, first derivative) pairs.
//!
//! A [`DualMatrix`] holds `Phi(z0)` and `Phi'(z0)` for one evaluation point `z0`,
//! normally `z0 = 1`. Products follow the product rule, geometric closures the
//! derivative of the inverse, so any expression built from branch gains `A z^n`
//! yields the mean of the underlying random variable after scalarization.

use std::ops::{Add, Mul};

use nalgebra::DVector;

use crate::channel::{Mat, Row};
use crate::error::{Error, Result};

/// Slack on the spectral-radius guard of geometric closures.
pub const RADIUS_SLACK: f64 = 1e-9;
/// Default max-norm tolerance for truncated series.
pub const DEFAULT_TOL: f64 = 1e-12;
/// Hard cap on the number of terms of a truncated series.
pub const MAX_TERMS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DualMatrix {
    pub val: Mat,
    pub der: Mat,
}

impl DualMatrix {
    pub fn new(val: Mat, der: Mat) -> Result<Self> {
        if val.shape() != der.shape() {
            return Err(Error::Dimension {
                left: val.shape(),
                right: der.shape(),
            });
        }
        Ok(DualMatrix { val, der })
    }

    /// `coeff * z^power` evaluated at `z`.
    pub fn term_at(coeff: &Mat, power: u32, z: f64) -> Self {
        let p = power as i32;
        let val = coeff * z.powi(p);
        let der = if power == 0 {
            Mat::zeros(coeff.nrows(), coeff.ncols())
        } else {
            coeff * (power as f64 * z.powi(p - 1))
        };
        DualMatrix { val, der }
    }

    pub fn constant(m: Mat) -> Self {
        let der = Mat::zeros(m.nrows(), m.ncols());
        DualMatrix { val: m, der }
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(Mat::identity(n, n))
    }

    pub fn zeros(n: usize) -> Self {
        Self::constant(Mat::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.val.nrows()
    }

    pub fn is_zero(&self) -> bool {
        self.val.iter().chain(self.der.iter()).all(|v| *v == 0.0)
    }

    /// Max-norm over both components.
    pub fn max_norm(&self) -> f64 {
        self.val
            .iter()
            .chain(self.der.iter())
            .fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    pub fn scale(&self, s: f64) -> Self {
        DualMatrix {
            val: &self.val * s,
            der: &self.der * s,
        }
    }

    /// `self^n` with `self^0 = I`.
    pub fn pow(&self, n: u32) -> Self {
        let mut out = DualMatrix::identity(self.dim());
        for _ in 0..n {
            out = &out * self;
        }
        out
    }

    /// `sum_{j=0}^{n-1} self^j`.
    pub fn partial_geo(&self, n: u32) -> Self {
        let mut acc = DualMatrix::zeros(self.dim());
        let mut p = DualMatrix::identity(self.dim());
        for _ in 0..n {
            acc = &acc + &p;
            p = &p * self;
        }
        acc
    }
}

/// `coeff * z^power` at `z = 1`.
pub fn dual_term(coeff: &Mat, power: u32) -> DualMatrix {
    DualMatrix::term_at(coeff, power, 1.0)
}

/// Product rule, path order left to right.
pub fn dual_mul(a: &DualMatrix, b: &DualMatrix) -> Result<DualMatrix> {
    if a.val.ncols() != b.val.nrows() {
        return Err(Error::Dimension {
            left: a.val.shape(),
            right: b.val.shape(),
        });
    }
    Ok(DualMatrix {
        val: &a.val * &b.val,
        der: &a.der * &b.val + &a.val * &b.der,
    })
}

pub fn dual_add(a: &DualMatrix, b: &DualMatrix) -> Result<DualMatrix> {
    if a.val.shape() != b.val.shape() {
        return Err(Error::Dimension {
            left: a.val.shape(),
            right: b.val.shape(),
        });
    }
    Ok(DualMatrix {
        val: &a.val + &b.val,
        der: &a.der + &b.der,
    })
}

impl Mul for &DualMatrix {
    type Output = DualMatrix;

    fn mul(self, rhs: &DualMatrix) -> DualMatrix {
        dual_mul(self, rhs).expect("dual matrix dimensions")
    }
}

impl Add for &DualMatrix {
    type Output = DualMatrix;

    fn add(self, rhs: &DualMatrix) -> DualMatrix {
        dual_add(self, rhs).expect("dual matrix dimensions")
    }
}

/// Spectral radius by repeated squaring, `rho = lim ||A^(2^j)||^(1/2^j)`.
pub fn spectral_radius(m: &Mat) -> f64 {
    let norm = |a: &Mat| {
        a.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0_f64, f64::max)
    };
    let n0 = norm(m);
    if n0 == 0.0 || !n0.is_finite() {
        return n0;
    }
    let mut b = m / n0;
    let mut log_rho = n0.ln();
    let mut weight = 1.0;
    for _ in 0..48 {
        let sq = &b * &b;
        let n = norm(&sq);
        if n == 0.0 {
            return 0.0;
        }
        weight *= 0.5;
        // log c_{j+1} / 2^{j+1} = log c_j / 2^j + log(n) / 2^{j+1}
        log_rho += weight * n.ln();
        b = sq / n;
    }
    log_rho.exp()
}

/// `sum_{j>=0} a^j = (I - a)^{-1}` with its derivative `V a' V`.
pub fn dual_geo(a: &DualMatrix) -> Result<DualMatrix> {
    let radius = spectral_radius(&a.val);
    if radius >= 1.0 - RADIUS_SLACK {
        return Err(Error::NonConvergent { radius });
    }
    let n = a.dim();
    let val = (Mat::identity(n, n) - &a.val)
        .try_inverse()
        .ok_or(Error::NonConvergent { radius })?;
    let der = &val * &a.der * &val;
    Ok(DualMatrix { val, der })
}

/// Accumulates terms until both the value and derivative increments fall below `tol`.
pub fn dual_sum_truncated<I>(terms: I, tol: f64) -> Result<DualMatrix>
where
    I: IntoIterator<Item = Result<DualMatrix>>,
{
    if tol <= 0.0 || tol.is_nan() {
        return Err(Error::Domain(format!("tolerance {tol} must be positive")));
    }
    let mut acc: Option<DualMatrix> = None;
    for (i, t) in terms.into_iter().enumerate() {
        if i >= MAX_TERMS {
            return Err(Error::Truncation {
                tol,
                terms: MAX_TERMS,
            });
        }
        let t = t?;
        let small = t.max_norm() < tol;
        let sum = match acc {
            None => t,
            Some(a) => dual_add(&a, &t)?,
        };
        if small {
            return Ok(sum);
        }
        acc = Some(sum);
    }
    // a finite sequence that runs out is summed exactly
    acc.ok_or(Error::Truncation { tol, terms: 0 })
}

/// `(pi Phi 1 / pi 1, pi Phi' 1 / pi 1)` without the normalization check.
pub fn scalarize_raw(pi: &Row, phi: &DualMatrix) -> Result<(f64, f64)> {
    if pi.len() != phi.dim() {
        return Err(Error::Dimension {
            left: (1, pi.len()),
            right: phi.val.shape(),
        });
    }
    let mass = pi.sum();
    if mass.is_nan() || mass <= 0.0 || pi.iter().any(|v| *v < 0.0) {
        return Err(Error::Domain("initial vector must be non-negative and non-zero".into()));
    }
    let ones = DVector::from_element(phi.dim(), 1.0);
    let val = (pi * &phi.val * &ones)[0] / mass;
    let der = (pi * &phi.der * &ones)[0] / mass;
    Ok((val, der))
}

/// Reduces a matrix MGF to `(phi(1), phi'(1))`; rejects improper MGFs.
pub fn scalarize(pi: &Row, phi: &DualMatrix) -> Result<(f64, f64)> {
    let (val, der) = scalarize_raw(pi, phi)?;
    if val.is_nan() || (val - 1.0).abs() > 1e-6 {
        return Err(Error::ImproperMgf { value: val });
    }
    Ok((val, der))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs(m: &Mat) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    fn m2(v: [f64; 4]) -> Mat {
        Mat::from_row_slice(2, 2, &v)
    }

    #[test]
    fn term_rules() {
        let i = Mat::identity(2, 2);
        let t = dual_term(&i, 0);
        assert_eq!(t.val, i);
        assert_eq!(max_abs(&t.der), 0.0);
        let a = m2([0.1, 0.2, 0.3, 0.4]);
        let t = dual_term(&a, 1);
        assert_eq!(t.der, a);
        let t = dual_term(&a, 4);
        assert!(max_abs(&(t.der - &a * 4.0)) < 1e-15);
    }

    #[test]
    fn product_rule() {
        let a = m2([0.1, 0.2, 0.3, 0.4]);
        let b = m2([0.5, -0.2, 0.0, 0.7]);
        let p = dual_mul(&dual_term(&a, 1), &dual_term(&b, 1)).unwrap();
        assert!(max_abs(&(&p.val - &a * &b)) < 1e-15);
        assert!(max_abs(&(&p.der - (&a * &b) * 2.0)) < 1e-15);
        let id = DualMatrix::identity(2);
        assert_eq!(dual_mul(&id, &dual_term(&b, 3)).unwrap(), dual_term(&b, 3));
        let x = DualMatrix::new(a.clone(), a.clone()).unwrap();
        let y = DualMatrix::constant(b.clone());
        let p = dual_mul(&x, &y).unwrap();
        assert!(max_abs(&(&p.val - &a * &b)) < 1e-15);
        assert!(max_abs(&(&p.der - &a * &b)) < 1e-15);
        let bad = DualMatrix::identity(3);
        assert!(matches!(dual_mul(&x, &bad), Err(Error::Dimension { .. })));
    }

    #[test]
    fn geometric_closure() {
        let z = dual_geo(&DualMatrix::zeros(2)).unwrap();
        assert_eq!(z, DualMatrix::identity(2));
        let half = Mat::identity(2, 2) * 0.5;
        let g = dual_geo(&DualMatrix::new(half.clone(), half.clone()).unwrap()).unwrap();
        assert!(max_abs(&(&g.val - Mat::identity(2, 2) * 2.0)) < 1e-14);
        assert!(max_abs(&(&g.der - Mat::identity(2, 2) * 2.0)) < 1e-14);
        assert!(dual_geo(&DualMatrix::identity(2)).is_err());
    }

    #[test]
    fn inverse_derivative_matches_difference() {
        let a = m2([0.2, 0.3, 0.1, 0.5]);
        let g = dual_geo(&dual_term(&a, 1)).unwrap();
        let h = 1e-6;
        let inv = |z: f64| (Mat::identity(2, 2) - &a * z).try_inverse().unwrap();
        let fd = (inv(1.0 + h) - inv(1.0 - h)) / (2.0 * h);
        assert!(max_abs(&(fd - &g.der)) < 1e-7);
    }

    #[test]
    fn spectral_radius_known() {
        assert!((spectral_radius(&m2([0.5, 0.0, 0.0, 0.25])) - 0.5).abs() < 1e-9);
        assert!((spectral_radius(&m2([0.0, 1.0, 0.0, 0.0]))).abs() < 1e-9);
        // stochastic matrix
        assert!((spectral_radius(&m2([0.7, 0.3, 0.4, 0.6])) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn truncated_sums() {
        let zero = dual_sum_truncated((0..).map(|_| Ok(DualMatrix::zeros(2))), 1e-12).unwrap();
        assert!(zero.is_zero());

        let a = m2([0.3, 0.2, 0.1, 0.4]);
        let step = dual_term(&a, 1);
        let mut p = DualMatrix::identity(2);
        let terms = std::iter::from_fn(move || {
            let out = p.clone();
            p = &p * &step;
            Some(Ok(out))
        });
        let s = dual_sum_truncated(terms, 1e-14).unwrap();
        let g = dual_geo(&dual_term(&a, 1)).unwrap();
        assert!(max_abs(&(&s.val - &g.val)) < 1e-12);
        assert!(max_abs(&(&s.der - &g.der)) < 1e-12);

        let never = dual_sum_truncated((0..).map(|_| Ok(DualMatrix::identity(1))), 1e-3);
        assert!(matches!(never, Err(Error::Truncation { .. })));
    }

    #[test]
    fn scalarize_deterministic_time() {
        let pi = Row::from_row_slice(&[0.2, 0.3, 0.5]);
        let i = Mat::identity(3, 3);
        let phi = DualMatrix::new(i.clone(), &i * 5.0).unwrap();
        let (v, m) = scalarize(&pi, &phi).unwrap();
        assert!((v - 1.0).abs() < 1e-15);
        assert!((m - 5.0).abs() < 1e-14);
        let bad = DualMatrix::constant(&i * 0.5);
        assert!(matches!(scalarize(&pi, &bad), Err(Error::ImproperMgf { .. })));
    }

    fn dual2() -> impl Strategy<Value = DualMatrix> {
        (proptest::array::uniform4(-1.0f64..1.0), proptest::array::uniform4(-1.0f64..1.0))
            .prop_map(|(v, d)| DualMatrix::new(m2(v), m2(d)).unwrap())
    }

    proptest! {
        #[test]
        fn associativity(a in dual2(), b in dual2(), c in dual2()) {
            let l = &(&a * &b) * &c;
            let r = &a * &(&b * &c);
            prop_assert!(max_abs(&(l.val - r.val)) < 1e-12);
            prop_assert!(max_abs(&(l.der - r.der)) < 1e-12);
        }

        #[test]
        fn geo_inverts(v in proptest::array::uniform4(0.0f64..0.45), d in proptest::array::uniform4(-1.0f64..1.0)) {
            let a = DualMatrix::new(m2(v), m2(d)).unwrap();
            let g = dual_geo(&a).unwrap();
            let check = (Mat::identity(2, 2) - &a.val) * &g.val;
            prop_assert!(max_abs(&(check - Mat::identity(2, 2))) < 1e-12);
        }
    }
}
