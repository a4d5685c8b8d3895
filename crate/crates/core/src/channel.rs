//! Gilbert-Elliott half channels and the joint forward/reverse composite channel.
//!
//! A half channel is a two-state (G, B) Markov chain whose rows are ordered G then B.
//! Observation matrices follow the hidden-Markov convention
//! `P_x[i][j] = P(S_t = j, X_t = x | S_{t-1} = i)`, so the erasure probability is that
//! of the destination state.
//!
//! The composite channel is indexed in Kronecker order `(G,G), (G,B), (B,G), (B,B)`
//! with the forward state first. Observation `xy` means forward bit `x`, reverse bit `y`.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;
pub type Row = RowDVector<f64>;

/// Tolerance used for every probability identity on these small matrices.
pub const PROB_TOL: f64 = 1e-12;

/// Two-state Gilbert-Elliott channel for a single direction.
#[derive(Debug, Clone, PartialEq)]
pub struct HalfChannel {
    /// B -> G transition probability.
    pub r: f64,
    /// G -> B transition probability.
    pub q: f64,
    pub eps_g: f64,
    pub eps_b: f64,
    /// Row-stochastic state transition matrix.
    pub transition: Mat,
    /// Success observation matrix `P diag(1 - eps)`.
    pub success: Mat,
    /// Error observation matrix `P diag(eps)`.
    pub error: Mat,
    pub stationary: Row,
    /// Aggregate block-error rate `pi_G eps_G + pi_B eps_B`.
    pub eps: f64,
}

fn check_prob(name: &str, v: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&v) || v.is_nan() {
        return Err(Error::Domain(format!("{name} = {v} is not a probability")));
    }
    Ok(())
}

/// Solves `pi P = pi`, `pi 1 = 1` by replacing one balance equation with the normalization row.
pub fn stationary(p: &Mat) -> Result<Row> {
    let n = p.nrows();
    if n == 0 || p.ncols() != n {
        return Err(Error::Dimension {
            left: p.shape(),
            right: (n, n),
        });
    }
    let mut a = p.transpose() - Mat::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.lu();
    let pi = lu
        .solve(&b)
        .ok_or_else(|| Error::DegenerateChain("stationary distribution is not unique".into()))?;
    if pi.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(Error::DegenerateChain(
            "stationary solve produced an invalid distribution".into(),
        ));
    }
    Ok(pi.transpose().map(|v| v.max(0.0)))
}

impl HalfChannel {
    /// Builds a channel from its transition probabilities and per-state error rates.
    pub fn from_transitions(r: f64, q: f64, eps_g: f64, eps_b: f64) -> Result<Self> {
        check_prob("r", r)?;
        check_prob("q", q)?;
        check_prob("eps_G", eps_g)?;
        check_prob("eps_B", eps_b)?;
        let transition = Mat::from_row_slice(2, 2, &[1.0 - q, q, r, 1.0 - r]);
        let stationary = stationary(&transition)?;
        Ok(Self::assemble(r, q, eps_g, eps_b, transition, stationary))
    }

    fn assemble(r: f64, q: f64, eps_g: f64, eps_b: f64, transition: Mat, stationary: Row) -> Self {
        let ok = Mat::from_diagonal(&DVector::from_vec(vec![1.0 - eps_g, 1.0 - eps_b]));
        let bad = Mat::from_diagonal(&DVector::from_vec(vec![eps_g, eps_b]));
        let success = &transition * ok;
        let error = &transition * bad;
        let eps = stationary[0] * eps_g + stationary[1] * eps_b;
        HalfChannel {
            r,
            q,
            eps_g,
            eps_b,
            transition,
            success,
            error,
            stationary,
            eps,
        }
    }

    /// Same state process with different per-state error rates.
    pub fn with_error_rates(&self, eps_g: f64, eps_b: f64) -> Result<Self> {
        check_prob("eps_G", eps_g)?;
        check_prob("eps_B", eps_b)?;
        Ok(Self::assemble(
            self.r,
            self.q,
            eps_g,
            eps_b,
            self.transition.clone(),
            self.stationary.clone(),
        ))
    }

    /// Observation matrix for bit `x` (0 = success, 1 = erasure).
    pub fn observe(&self, x: u8) -> &Mat {
        if x == 0 {
            &self.success
        } else {
            &self.error
        }
    }
}

/// Builds a half channel from `(r, eps_G, eps_B, eps)`, solving for `q`.
///
/// `q = r((eps_B - eps_G)/(eps_B - eps) - 1)`. When `eps_G == eps_B` the state is
/// irrelevant and `q = r` is used; when `r == 0` the bad state is absorbing, so the
/// channel is memoryless at rate `eps_B` and `eps` must equal it.
pub fn build_half_channel(r: f64, eps_g: f64, eps_b: f64, eps: f64) -> Result<HalfChannel> {
    check_prob("r", r)?;
    check_prob("eps_G", eps_g)?;
    check_prob("eps_B", eps_b)?;
    check_prob("eps", eps)?;
    if eps_g > eps_b {
        return Err(Error::Domain(format!(
            "eps_G = {eps_g} exceeds eps_B = {eps_b}"
        )));
    }
    if (eps_b - eps_g).abs() <= PROB_TOL {
        if (eps - eps_b).abs() > PROB_TOL {
            return Err(Error::Domain(format!(
                "state-independent channel needs eps = {eps_b}, got {eps}"
            )));
        }
        let q = if r > 0.0 { r } else { 1.0 };
        return HalfChannel::from_transitions(r, q, eps_g, eps_b);
    }
    if r == 0.0 {
        if (eps - eps_b).abs() > PROB_TOL {
            return Err(Error::Domain(format!(
                "r = 0 is memoryless at eps_B = {eps_b}, got eps = {eps}"
            )));
        }
        return HalfChannel::from_transitions(0.0, 1.0, eps_g, eps_b);
    }
    if eps < eps_g || eps >= eps_b {
        return Err(Error::Domain(format!(
            "need eps_G <= eps < eps_B, got eps = {eps} with [{eps_g}, {eps_b}]"
        )));
    }
    let mut q = r * ((eps_b - eps_g) / (eps_b - eps) - 1.0);
    if q > 1.0 && q <= 1.0 + PROB_TOL {
        q = 1.0;
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::Domain(format!(
            "derived q = {q} is not a probability (r = {r}, eps = {eps})"
        )));
    }
    HalfChannel::from_transitions(r, q, eps_g, eps_b)
}

/// Joint forward x reverse channel.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeChannel {
    pub forward: HalfChannel,
    pub reverse: HalfChannel,
    /// `p[x][y] = P_x(fwd) (x) P_y(rev)`.
    pub p: [[Mat; 2]; 2],
    /// Forward success marginal `P_00 + P_01`.
    pub p0x: Mat,
    /// Forward error marginal `P_10 + P_11`.
    pub p1x: Mat,
    /// Reverse success marginal `P_00 + P_10`.
    pub px0: Mat,
    /// Reverse error marginal `P_01 + P_11`.
    pub px1: Mat,
    /// Composite transition matrix.
    pub pc: Mat,
    pub stationary: Row,
    /// New-packet state vector `pi P_0x`, left unnormalized.
    pub pi_new: Row,
    /// Forward block-error rate.
    pub eps: f64,
}

impl CompositeChannel {
    pub fn p(&self, x: u8, y: u8) -> &Mat {
        &self.p[x as usize][y as usize]
    }

    pub fn dim(&self) -> usize {
        self.pc.nrows()
    }
}

/// Combines a forward and a reverse half channel.
pub fn build_composite(fwd: &HalfChannel, rev: &HalfChannel) -> Result<CompositeChannel> {
    let k = |a: &Mat, b: &Mat| a.kronecker(b);
    let p = [
        [k(&fwd.success, &rev.success), k(&fwd.success, &rev.error)],
        [k(&fwd.error, &rev.success), k(&fwd.error, &rev.error)],
    ];
    let p0x = &p[0][0] + &p[0][1];
    let p1x = &p[1][0] + &p[1][1];
    let px0 = &p[0][0] + &p[1][0];
    let px1 = &p[0][1] + &p[1][1];
    let pc = k(&fwd.transition, &rev.transition);
    let stationary = stationary(&pc)?;
    let pi_new = &stationary * &p0x;
    Ok(CompositeChannel {
        forward: fwd.clone(),
        reverse: rev.clone(),
        p,
        p0x,
        p1x,
        px0,
        px1,
        pc,
        stationary,
        pi_new,
        eps: fwd.eps,
    })
}

/// Composite channel whose forward direction uses the given per-state error rates while
/// keeping both state processes unchanged.
pub fn with_forward_errors(ch: &CompositeChannel, eps_g: f64, eps_b: f64) -> Result<CompositeChannel> {
    let fwd = ch.forward.with_error_rates(eps_g, eps_b)?;
    let mut out = build_composite(&fwd, &ch.reverse)?;
    // the new-packet law stays that of the base channel
    out.pi_new = ch.pi_new.clone();
    out.stationary = ch.stationary.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn max_abs(m: &Mat) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn symmetric_half_channel() {
        let h = build_half_channel(0.3, 0.0, 1.0, 0.5).unwrap();
        assert!((h.q - 0.3).abs() < 1e-15);
        assert!((h.stationary[0] - 0.5).abs() < 1e-12);
        assert!((h.stationary[1] - 0.5).abs() < 1e-12);
        assert!((h.eps - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_error_half_channel() {
        let h = build_half_channel(0.3, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(h.q, 0.0);
        assert!((h.stationary[0] - 1.0).abs() < 1e-12);
        // the bad state is transient but still erases
        assert!((&h.stationary * &h.error).amax() == 0.0);
        let clean = build_half_channel(0.3, 0.0, 0.0, 0.0).unwrap();
        assert!(max_abs(&(&clean.success - &clean.transition)) < 1e-15);
        assert!(max_abs(&clean.error) == 0.0);
    }

    #[test]
    fn memoryless_limit() {
        let h = build_half_channel(0.0, 0.2, 0.2, 0.2).unwrap();
        assert!((h.eps - 0.2).abs() < 1e-12);
        let h = build_half_channel(0.0, 0.0, 0.7, 0.7).unwrap();
        assert!((h.eps - 0.7).abs() < 1e-12);
        assert!(build_half_channel(0.0, 0.0, 0.7, 0.3).is_err());
    }

    #[test]
    fn domain_errors() {
        assert!(build_half_channel(0.3, 0.0, 0.5, 0.5).is_err());
        assert!(build_half_channel(0.3, 0.0, 1.0, 1.2).is_err());
        assert!(build_half_channel(-0.1, 0.0, 1.0, 0.2).is_err());
        // q = 0.9 * 0.6 / 0.4 > 1
        assert!(build_half_channel(0.9, 0.0, 1.0, 0.6).is_err());
        assert!(build_half_channel(0.3, 0.2, 1.0, 0.1).is_err());
    }

    #[test]
    fn composite_error_free() {
        let h = build_half_channel(0.3, 0.0, 0.0, 0.0).unwrap();
        let c = build_composite(&h, &h).unwrap();
        assert!(max_abs(&(c.p(0, 0) - &c.pc)) < 1e-15);
        for (x, y) in [(0, 1), (1, 0), (1, 1)] {
            assert_eq!(max_abs(c.p(x, y)), 0.0);
        }
    }

    #[test]
    fn composite_frozen_states() {
        let h = HalfChannel::from_transitions(0.0, 0.0, 0.0, 1.0);
        // identity chain has no unique stationary law
        assert!(matches!(h, Err(Error::DegenerateChain(_))));
        let i2 = Mat::identity(2, 2);
        assert_eq!(i2.kronecker(&i2), Mat::identity(4, 4));
    }

    #[test]
    fn composite_symmetric() {
        let h = build_half_channel(0.3, 0.0, 1.0, 0.5).unwrap();
        let c = build_composite(&h, &h).unwrap();
        for v in c.stationary.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
        let ones = DVector::from_element(4, 1.0);
        let e = (&c.stationary * &c.p1x * &ones)[0];
        assert!((e - 0.5).abs() < 1e-12);
    }

    #[test]
    fn q_monotone_in_eps() {
        let mut last = -1.0;
        for i in 0..60 {
            let eps = i as f64 * 0.01;
            let h = build_half_channel(0.3, 0.0, 1.0, eps).unwrap();
            assert!(h.q > last);
            last = h.q;
        }
    }

    fn rand2(v: [f64; 4]) -> Mat {
        Mat::from_row_slice(2, 2, &v)
    }

    proptest! {
        #[test]
        fn composite_invariants(r in 0.05f64..1.0, eps_f in 0.0f64..0.45, eps_r in 0.0f64..0.45, eg in 0.0f64..0.05) {
            let fwd = build_half_channel(r, eg.min(eps_f), 1.0, eps_f);
            let rev = build_half_channel(r, eg.min(eps_r), 1.0, eps_r);
            prop_assume!(fwd.is_ok() && rev.is_ok());
            let (fwd, rev) = (fwd.unwrap(), rev.unwrap());
            for h in [&fwd, &rev] {
                for i in 0..2 {
                    prop_assert!((h.transition.row(i).sum() - 1.0).abs() < PROB_TOL);
                }
                prop_assert!(max_abs(&(&h.success + &h.error - &h.transition)) < PROB_TOL);
                prop_assert!((&h.stationary * &h.transition - &h.stationary).amax() < PROB_TOL);
                prop_assert!((h.stationary.sum() - 1.0).abs() < PROB_TOL);
                let e = h.stationary[0] * h.eps_g + h.stationary[1] * h.eps_b;
                prop_assert!((h.eps - e).abs() < PROB_TOL);
            }
            let c = build_composite(&fwd, &rev).unwrap();
            for i in 0..4 {
                prop_assert!((c.pc.row(i).sum() - 1.0).abs() < PROB_TOL);
            }
            let total = c.p(0,0) + c.p(0,1) + c.p(1,0) + c.p(1,1);
            prop_assert!(max_abs(&(total - &c.pc)) < PROB_TOL);
            prop_assert!((&c.stationary * &c.pc - &c.stationary).amax() < PROB_TOL);
            let ones = DVector::from_element(4, 1.0);
            prop_assert!(((&c.stationary * &c.p1x * &ones)[0] - c.eps).abs() < PROB_TOL);
            prop_assert!((c.eps - fwd.eps).abs() < PROB_TOL);
        }

        #[test]
        fn kronecker_mixed_product(a in proptest::array::uniform4(-1.0f64..1.0), b in proptest::array::uniform4(-1.0f64..1.0),
                                   c in proptest::array::uniform4(-1.0f64..1.0), d in proptest::array::uniform4(-1.0f64..1.0)) {
            let (a, b, c, d) = (rand2(a), rand2(b), rand2(c), rand2(d));
            let lhs = a.kronecker(&b) * c.kronecker(&d);
            let rhs = (&a * &c).kronecker(&(&b * &d));
            prop_assert!(max_abs(&(lhs - rhs)) < 1e-12);
        }
    }
}
