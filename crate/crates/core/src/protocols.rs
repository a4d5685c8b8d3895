//! Transmission-time and delay generating functions for uncoded selective-repeat ARQ,
//! HARQ with soft combining and MDS-coded ARQ, reduced to throughput and mean delay.
//!
//! Timing model shared with the simulator: a packet sent in slot `s` has its feedback
//! delivered at the end of slot `s + k - 1`; an unacknowledged packet is retransmitted
//! in slot `s + T`; a feedback message arrives every slot and acknowledges cumulatively.
//! The composite chain step `u` pairs the forward slot `u - k + 1` with the reverse slot
//! `u`, which lets the forward outcome of a transmission and the reverse outcome of its
//! own feedback share one observation matrix `P_xy`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use crate::channel::{with_forward_errors, CompositeChannel, HalfChannel, Mat};
use crate::error::{Error, Result};
use crate::msfg::FlowGraph;
use crate::polyval::{dual_geo, dual_sum_truncated, scalarize, DualMatrix, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Scheme {
    Uncoded,
    Harq,
    Coded,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scheme::Uncoded => "uncoded",
            Scheme::Harq => "harq",
            Scheme::Coded => "coded",
        })
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "uncoded" | "arq" => Ok(Scheme::Uncoded),
            "harq" => Ok(Scheme::Harq),
            "coded" => Ok(Scheme::Coded),
            other => Err(Error::Domain(format!("unknown scheme {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolParams {
    /// Round-trip time in slots.
    pub k: u32,
    /// Retransmission timer in slots.
    pub timeout: u32,
    pub scheme: Scheme,
    /// Coded frame size `M`.
    pub frame_size: u32,
    /// Degrees of freedom `N` needed to decode a frame.
    pub dof: u32,
    /// HARQ SNR ratio `Gamma / rho`.
    pub gamma_over_rho: f64,
    /// Horizon of attempt-indexed series.
    pub max_attempts: u32,
}

impl ProtocolParams {
    pub fn uncoded(k: u32, timeout: u32) -> Self {
        ProtocolParams {
            k,
            timeout,
            scheme: Scheme::Uncoded,
            frame_size: 1,
            dof: 1,
            gamma_over_rho: 0.0,
            max_attempts: 100_000,
        }
    }

    pub fn harq(k: u32, timeout: u32, gamma_over_rho: f64) -> Self {
        ProtocolParams {
            scheme: Scheme::Harq,
            gamma_over_rho,
            ..Self::uncoded(k, timeout)
        }
    }

    pub fn coded(k: u32, timeout: u32, frame_size: u32, dof: u32) -> Self {
        ProtocolParams {
            scheme: Scheme::Coded,
            frame_size,
            dof,
            ..Self::uncoded(k, timeout)
        }
    }

    /// Residual timer after the first feedback, `d = T - k`.
    pub fn residual(&self) -> u32 {
        self.timeout - self.k
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if self.k == 0 {
            return bad("round-trip time k must be positive".into());
        }
        if self.timeout < self.k {
            return bad(format!("timeout T = {} below k = {}", self.timeout, self.k));
        }
        if self.dof == 0 || self.frame_size < self.dof {
            return bad(format!("need M >= N >= 1, got M = {}, N = {}", self.frame_size, self.dof));
        }
        if self.frame_size > self.k {
            return bad(format!("need k >= M, got k = {}, M = {}", self.k, self.frame_size));
        }
        if self.scheme != Scheme::Coded && (self.frame_size != 1 || self.dof != 1) {
            return bad(format!("{} scheme uses M = N = 1", self.scheme));
        }
        if self.gamma_over_rho.is_nan() || self.gamma_over_rho < 0.0 {
            return bad(format!("Gamma/rho = {} must be non-negative", self.gamma_over_rho));
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        Ok(())
    }
}

/// HARQ block-error rate in the bad state on attempt `m >= 1`.
pub fn harq_eps_b(gamma_over_rho: f64, m: u32) -> f64 {
    1.0 - (-gamma_over_rho / m as f64).exp()
}

/// Per-attempt forward error model.
#[derive(Clone)]
pub enum AttemptErrors {
    /// Every attempt sees the base channel.
    Base,
    /// `eps_G(m) = 0`, `eps_B(m) = 1 - exp(-Gamma/(m rho))`.
    Exponential { gamma_over_rho: f64 },
    /// `eps_G(m) = 0`, `eps_B(m) = seq[m-1]`; the last value repeats forever.
    Sequence(Vec<f64>),
    /// Arbitrary `m -> (eps_G, eps_B)`, never treated as constant.
    Custom(Arc<dyn Fn(u32) -> (f64, f64) + Send + Sync>),
}

impl fmt::Debug for AttemptErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttemptErrors::Base => f.write_str("Base"),
            AttemptErrors::Exponential { gamma_over_rho } => {
                write!(f, "Exponential({gamma_over_rho})")
            }
            AttemptErrors::Sequence(s) => write!(f, "Sequence({s:?})"),
            AttemptErrors::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl AttemptErrors {
    /// `(eps_G, eps_B)` on attempt `m >= 1`.
    pub fn rates(&self, base: &HalfChannel, m: u32) -> (f64, f64) {
        match self {
            AttemptErrors::Base => (base.eps_g, base.eps_b),
            AttemptErrors::Exponential { gamma_over_rho } => (0.0, harq_eps_b(*gamma_over_rho, m)),
            AttemptErrors::Sequence(seq) => {
                let i = (m as usize).saturating_sub(1).min(seq.len().saturating_sub(1));
                (0.0, seq.get(i).copied().unwrap_or(base.eps_b))
            }
            AttemptErrors::Custom(f) => f(m),
        }
    }

    /// First attempt from which the rates no longer change.
    pub fn constant_from(&self) -> Option<u32> {
        match self {
            AttemptErrors::Base => Some(1),
            AttemptErrors::Exponential { gamma_over_rho } if *gamma_over_rho == 0.0 => Some(1),
            AttemptErrors::Exponential { .. } | AttemptErrors::Custom(_) => None,
            AttemptErrors::Sequence(seq) => Some(seq.len().max(1) as u32),
        }
    }
}

/// Which HARQ generating functions to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HarqVariant {
    /// Soft combining lowers the forward error rate of the m-th transmission; the
    /// retransmission loop gain is `P_10(m) P^(k-1) z + P_11(m) P^(T-1) z`. Matches the simulator.
    #[default]
    AttemptIndexed,
    /// Literal closed forms: constant attempt-1 prefactor and attempt-indexed reverse
    /// matrices `P_x0(j)`, `P_x1(j)` with both directions scaled. Analytic only.
    Displayed,
}

/// Composite channels for attempts `1..=count`, with `P_x1(0) = I`.
#[derive(Debug, Clone)]
pub struct HarqAttemptChannels {
    pub channels: Vec<CompositeChannel>,
}

impl HarqAttemptChannels {
    pub fn build(base: &CompositeChannel, errors: &AttemptErrors, scale_reverse: bool, count: u32) -> Result<Self> {
        let channels = (1..=count)
            .map(|m| attempt_channel(base, errors, scale_reverse, m))
            .collect::<Result<Vec<_>>>()?;
        Ok(HarqAttemptChannels { channels })
    }

    /// Attempt `m >= 1`.
    pub fn get(&self, m: u32) -> &CompositeChannel {
        &self.channels[m as usize - 1]
    }

    pub fn px1(&self, m: u32) -> Mat {
        if m == 0 {
            let n = self.channels[0].dim();
            Mat::identity(n, n)
        } else {
            self.get(m).px1.clone()
        }
    }
}

fn attempt_channel(base: &CompositeChannel, errors: &AttemptErrors, scale_reverse: bool, m: u32) -> Result<CompositeChannel> {
    let (eg, eb) = errors.rates(&base.forward, m);
    if !scale_reverse {
        return with_forward_errors(base, eg, eb);
    }
    let fwd = base.forward.with_error_rates(eg, eb)?;
    let rev = base.reverse.with_error_rates(eg, eb)?;
    let mut out = crate::channel::build_composite(&fwd, &rev)?;
    out.pi_new = base.pi_new.clone();
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// Max-norm tolerance of truncated series.
    pub tol: f64,
    /// Overrides the scheme's attempt error model.
    pub attempts: Option<AttemptErrors>,
    pub harq_variant: HarqVariant,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        AnalysisOptions {
            tol: DEFAULT_TOL,
            attempts: None,
            harq_variant: HarqVariant::AttemptIndexed,
        }
    }
}

/// Matrix generating functions of the transmission count and of the delay.
#[derive(Debug, Clone)]
pub struct Mgfs {
    pub tau: DualMatrix,
    pub delay: DualMatrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    /// Mean transmissions per delivered packet.
    pub tau_mean: f64,
    /// `1 / tau_mean`.
    pub throughput: f64,
    /// Mean slots from first transmission to ACK receipt, per packet.
    pub delay_mean: f64,
    /// Frame-level transmission count (equals `tau_mean` for single-packet schemes).
    pub frame_tau_mean: f64,
    /// Frame-level delay (equals `delay_mean` for single-packet schemes).
    pub frame_delay_mean: f64,
    /// `phi_tau(1)`.
    pub mgf_tau: f64,
    /// `phi_D(1)`.
    pub mgf_delay: f64,
}

impl Metrics {
    /// Largest deviation of either generating function from 1 at `z = 1`.
    pub fn mgf_error(&self) -> f64 {
        (self.mgf_tau - 1.0).abs().max((self.mgf_delay - 1.0).abs())
    }
}

fn mpow(m: &Mat, n: u32) -> Mat {
    let mut out = Mat::identity(m.nrows(), m.ncols());
    for _ in 0..n {
        out = &out * m;
    }
    out
}

fn c(m: Mat) -> DualMatrix {
    DualMatrix::constant(m)
}

/// `entry * sum_{m>=1} L(1)...L(m-1) X(m)`, closing the tail geometrically once the
/// attempt model becomes constant.
fn attempt_series<F>(
    entry: &DualMatrix,
    step: F,
    constant_from: Option<u32>,
    max_attempts: u32,
    tol: f64,
) -> Result<DualMatrix>
where
    F: Fn(u32) -> Result<(DualMatrix, DualMatrix)>,
{
    let body = match constant_from {
        Some(m0) => {
            let mut acc: Option<DualMatrix> = None;
            let mut prefix: Option<DualMatrix> = None;
            for m in 1..m0 {
                let (l, x) = step(m)?;
                let term = match &prefix {
                    Some(p) => p * &x,
                    None => x,
                };
                acc = Some(match acc {
                    Some(a) => &a + &term,
                    None => term,
                });
                prefix = Some(match prefix {
                    Some(p) => &p * &l,
                    None => l,
                });
            }
            let (l, x) = step(m0)?;
            let tail = &dual_geo(&l)? * &x;
            let tail = match &prefix {
                Some(p) => p * &tail,
                None => tail,
            };
            match acc {
                Some(a) => &a + &tail,
                None => tail,
            }
        }
        None => {
            let mut prefix = DualMatrix::identity(entry.dim());
            let mut m = 0u32;
            let terms = std::iter::from_fn(|| {
                m += 1;
                if m > max_attempts {
                    return Some(Err(Error::Truncation {
                        tol,
                        terms: max_attempts as usize,
                    }));
                }
                Some(step(m).map(|(l, x)| {
                    let term = &prefix * &x;
                    prefix = &prefix * &l;
                    term
                }))
            });
            dual_sum_truncated(terms, tol)?
        }
    };
    Ok(entry * &body)
}

fn default_attempts(p: &ProtocolParams) -> AttemptErrors {
    match p.scheme {
        Scheme::Harq => AttemptErrors::Exponential {
            gamma_over_rho: p.gamma_over_rho,
        },
        _ => AttemptErrors::Base,
    }
}

/// Generating functions of the attempt-indexed single-packet model at `z`.
fn single_packet_mgfs(ch: &CompositeChannel, p: &ProtocolParams, errors: &AttemptErrors, tol: f64, z: f64) -> Result<Mgfs> {
    let (k, t, d) = (p.k, p.timeout, p.residual());
    let pk = mpow(&ch.pc, k - 1);
    let pt = mpow(&ch.pc, t - 1);
    let term = |m: &Mat, n: u32| DualMatrix::term_at(m, n, z);
    let px1 = c(ch.px1.clone());
    let px0 = c(ch.px0.clone());

    // feedback recovery after a lost ACK, counting timer retransmissions
    let early = &px1.partial_geo(d) * &px0;
    let window = &px1.partial_geo(t) * &px0;
    let late = &(&c(mpow(&ch.px1, d)) * &dual_geo(&term(&mpow(&ch.px1, t), 1))?)
        * &term(&window.val, 1);
    let recover_tau = &early + &late;
    // same recovery counted in slots
    let recover_delay = &(&term(&Mat::identity(ch.dim(), ch.dim()), 2) * &dual_geo(&term(&ch.px1, 1))?) * &px0;

    let constant_from = errors.constant_from();
    let attempt = |m: u32| attempt_channel(ch, errors, false, m);

    let tau = attempt_series(
        &term(&pk, 1),
        |m| {
            let a = attempt(m)?;
            let lp = &term(&(a.p(1, 0) * &pk), 1) + &term(&(a.p(1, 1) * &pt), 1);
            let x = &c(a.p(0, 0).clone()) + &(&c(a.p(0, 1).clone()) * &recover_tau);
            Ok((lp, x))
        },
        constant_from,
        p.max_attempts,
        tol,
    )?;
    let delay = attempt_series(
        &term(&pk, k - 1),
        |m| {
            let a = attempt(m)?;
            let lp = &term(&(a.p(1, 0) * &pk), k) + &term(&(a.p(1, 1) * &pt), t);
            let x = &term(a.p(0, 0), 1) + &(&c(a.p(0, 1).clone()) * &recover_delay);
            Ok((lp, x))
        },
        constant_from,
        p.max_attempts,
        tol,
    )?;
    Ok(Mgfs { tau, delay })
}

/// Literal HARQ closed forms with reverse matrices indexed by feedback count.
fn displayed_harq_mgfs(ch: &CompositeChannel, p: &ProtocolParams, errors: &AttemptErrors, tol: f64, z: f64) -> Result<Mgfs> {
    let (k, t, d) = (p.k, p.timeout, p.residual());
    let pk = mpow(&ch.pc, k - 1);
    let pt = mpow(&ch.pc, t - 1);
    let term = |m: &Mat, n: u32| DualMatrix::term_at(m, n, z);
    let horizon = t.max(1) + 1;
    let chans = HarqAttemptChannels::build(ch, errors, true, horizon)?;
    let a1 = chans.get(1);
    let n = ch.dim();

    // q[j] = P_x1(0) P_x1(1) ... P_x1(j)
    let mut q = vec![Mat::identity(n, n)];
    for j in 1..=t {
        let next = &q[j as usize - 1] * chans.get(j).px1.clone();
        q.push(next);
    }
    let early: Mat = (0..d).fold(Mat::zeros(n, n), |acc, j| acc + &q[j as usize] * &chans.get(j + 1).px0);
    let window: Mat = (0..t).fold(Mat::zeros(n, n), |acc, j| acc + &q[j as usize] * &chans.get(j + 1).px0);
    let late = &(&c(q[d as usize].clone()) * &dual_geo(&term(&q[t as usize], 1))?) * &term(&window, 1);
    let bracket = &c(a1.p(0, 0).clone()) + &(&c(a1.p(0, 1).clone()) * &(&c(early) + &late));
    let loop_tau = &term(&(a1.p(1, 0) * &pk), 1) + &term(&(a1.p(1, 1) * &pt), 1);
    let tau = &(&term(&pk, 1) * &dual_geo(&loop_tau)?) * &bracket;

    // sum_{j>=0} z^j P_x1(0..j) P_x0(j+1), extended lazily past the cached horizon
    let mut prod = Mat::identity(n, n);
    let mut j = 0u32;
    let terms = std::iter::from_fn(|| {
        if j > p.max_attempts {
            return Some(Err(Error::Truncation {
                tol,
                terms: p.max_attempts as usize,
            }));
        }
        let out = (|| {
            if j > 0 {
                prod = &prod * attempt_channel(ch, errors, true, j)?.px1;
            }
            let next = attempt_channel(ch, errors, true, j + 1)?;
            Ok(term(&(&prod * &next.px0), j))
        })();
        j += 1;
        Some(out)
    });
    let series = dual_sum_truncated(terms, tol)?;
    let exit = &term(a1.p(0, 0), 1) + &(&term(a1.p(0, 1), 2) * &series);
    let loop_delay = &term(&(a1.p(1, 0) * &pk), k) + &term(&(a1.p(1, 1) * &pt), t);
    let delay = &(&term(&pk, k - 1) * &dual_geo(&loop_delay)?) * &exit;
    Ok(Mgfs { tau, delay })
}

/// Outcome matrices of one batch of `size` consecutive forward transmissions whose
/// last slot is observed jointly with the batch's own feedback.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchKernel {
    pub size: u32,
    /// `outcomes[s][y]`: `s` forward successes, reverse bit `y` on the own feedback.
    pub outcomes: Vec<[Mat; 2]>,
}

/// Stage matrices of the coded protocol.
///
/// Stage `n` is the number of degrees of freedom the sender knows to be received. It
/// sends `M` packets while `n = 0` and `N - n` packets otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct CodedKernel {
    pub frame_size: u32,
    pub dof: u32,
    /// `P^(k-1)`, the wait between a round's start and its first observed slot.
    pub lead: Mat,
    pub batches: BTreeMap<u32, BatchKernel>,
    pub pc: Mat,
    pub px0: Mat,
    pub px1: Mat,
}

impl CodedKernel {
    pub fn batch_size(&self, known: u32) -> u32 {
        if known == 0 {
            self.frame_size
        } else {
            self.dof - known
        }
    }

    /// Every batch's outcomes must sum to `P^size`.
    pub fn check(&self) -> Result<()> {
        for known in 0..self.dof {
            let b = self.batch_size(known);
            let batch = self
                .batches
                .get(&b)
                .ok_or_else(|| Error::Domain(format!("kernel lacks batch size {b}")))?;
            if batch.outcomes.len() != b as usize + 1 {
                return Err(Error::Domain(format!("batch {b} has {} outcomes", batch.outcomes.len())));
            }
            let total = batch
                .outcomes
                .iter()
                .fold(Mat::zeros(self.pc.nrows(), self.pc.ncols()), |acc, o| acc + &o[0] + &o[1]);
            let dev = (total - mpow(&self.pc, b)).abs().max();
            if dev > 1e-12 {
                return Err(Error::Domain(format!(
                    "batch {b} outcomes deviate from the channel by {dev:e}"
                )));
            }
        }
        Ok(())
    }
}

/// Builds the stage matrices from the composite channel.
pub fn default_coded_kernel(ch: &CompositeChannel, p: &ProtocolParams) -> Result<CodedKernel> {
    p.validate()?;
    let n = ch.dim();
    let mut batches = BTreeMap::new();
    let sizes = std::iter::once(p.frame_size).chain((1..p.dof).map(|known| p.dof - known));
    for b in sizes {
        if batches.contains_key(&b) {
            continue;
        }
        // counts[s]: s successes over the unobserved-feedback slots so far
        let mut counts = vec![Mat::identity(n, n)];
        for _ in 1..b {
            let mut next = vec![Mat::zeros(n, n); counts.len() + 1];
            for (s, m) in counts.iter().enumerate() {
                next[s] += m * &ch.p1x;
                next[s + 1] += m * &ch.p0x;
            }
            counts = next;
        }
        let outcomes = (0..=b as usize)
            .map(|s| {
                let mut o = [Mat::zeros(n, n), Mat::zeros(n, n)];
                for y in 0..2u8 {
                    if s >= 1 {
                        o[y as usize] += &counts[s - 1] * ch.p(0, y);
                    }
                    if s < counts.len() {
                        o[y as usize] += &counts[s] * ch.p(1, y);
                    }
                }
                o
            })
            .collect();
        batches.insert(b, BatchKernel { size: b, outcomes });
    }
    Ok(CodedKernel {
        frame_size: p.frame_size,
        dof: p.dof,
        lead: mpow(&ch.pc, p.k - 1),
        batches,
        pc: ch.pc.clone(),
        px0: ch.px0.clone(),
        px1: ch.px1.clone(),
    })
}

fn round_node(known: u32, count: u32) -> String {
    format!("R{known:03}.{count:03}")
}

fn lost_node(known: u32, count: u32) -> String {
    format!("F{known:03}.{count:03}")
}

fn decoded_node(known: u32) -> String {
    format!("C{known:03}")
}

/// Flow graph of one coded frame. Nodes `R(n,c)` start a round with `n` DoF known to
/// the sender and `c` received; `F(n,c)` follow a lost own feedback; `C(n)` waits for
/// any feedback after decoding while the timer keeps resending batches.
/// With `delay` every slot carries a power of `z`, otherwise every transmission does.
pub fn coded_graph(kernel: &CodedKernel, k: u32, timeout: u32, z: f64, delay: bool) -> Result<FlowGraph> {
    let dim = kernel.pc.nrows();
    let big_n = kernel.dof;
    let d = timeout - k;
    let term = |m: &Mat, n: u32| DualMatrix::term_at(m, n, z);
    let px0 = c(kernel.px0.clone());
    let per_slot_px1 = term(&kernel.px1, 1);
    // successful feedback within `len` slots, first one ending the wait
    let listen = |len: u32, zpow: u32| -> DualMatrix {
        if delay {
            &per_slot_px1.partial_geo(len) * &term(&kernel.px0, 1)
        } else {
            &term(&c(kernel.px1.clone()).partial_geo(len).val, zpow) * &px0
        }
    };
    let wait = |m: &Mat, len: u32| term(m, if delay { len } else { 0 });

    let mut g = FlowGraph::new("I", "O", dim);
    g.connect("I", &round_node(0, 0), DualMatrix::identity(dim))?;
    for known in 0..big_n {
        let b = kernel.batch_size(known);
        let batch = &kernel.batches[&b];
        let zpow = if delay { k - 1 + b } else { b };
        for count in known..big_n {
            let from = round_node(known, count);
            for (s, o) in batch.outcomes.iter().enumerate() {
                let c2 = (count + s as u32).min(big_n);
                for (y, oy) in o.iter().enumerate() {
                    let m = &kernel.lead * oy;
                    if m.iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let to = match (y, c2 >= big_n) {
                        (0, true) => "O".to_string(),
                        (0, false) => round_node(c2, c2),
                        _ => lost_node(known, c2),
                    };
                    g.connect(&from, &to, term(&m, zpow))?;
                }
            }
        }
        for c2 in known..=big_n {
            let from = lost_node(known, c2);
            if g.find(&from).is_none() {
                continue;
            }
            if c2 > known {
                let ok = if c2 >= big_n { "O".to_string() } else { round_node(c2, c2) };
                g.connect(&from, &ok, listen(d, 0))?;
                let expire = if c2 >= big_n { decoded_node(known) } else { round_node(known, c2) };
                g.connect(&from, &expire, wait(&mpow(&kernel.px1, d), d))?;
            } else {
                g.connect(&from, &round_node(known, c2), wait(&mpow(&kernel.pc, d), d))?;
            }
        }
        let cnode = decoded_node(known);
        if g.find(&cnode).is_some() {
            let period = timeout + b - 1;
            let lp = if delay {
                term(&mpow(&kernel.px1, period), period)
            } else {
                term(&mpow(&kernel.px1, period), b)
            };
            g.connect(&cnode, &cnode, lp)?;
            g.connect(&cnode, "O", listen(period, b))?;
        }
    }
    Ok(g)
}

fn coded_mgfs(kernel: &CodedKernel, p: &ProtocolParams, z: f64) -> Result<Mgfs> {
    let tau = coded_graph(kernel, p.k, p.timeout, z, false)?.graph_gain()?;
    let delay = coded_graph(kernel, p.k, p.timeout, z, true)?.graph_gain()?;
    Ok(Mgfs { tau, delay })
}

/// Generating functions of any scheme at an arbitrary evaluation point.
pub fn mgfs_at(ch: &CompositeChannel, p: &ProtocolParams, opts: &AnalysisOptions, z: f64) -> Result<Mgfs> {
    p.validate()?;
    let errors = opts.attempts.clone().unwrap_or_else(|| default_attempts(p));
    match (p.scheme, opts.harq_variant) {
        (Scheme::Coded, _) => {
            let kernel = default_coded_kernel(ch, p)?;
            coded_mgfs(&kernel, p, z)
        }
        (Scheme::Harq, HarqVariant::Displayed) => displayed_harq_mgfs(ch, p, &errors, opts.tol, z),
        _ => single_packet_mgfs(ch, p, &errors, opts.tol, z),
    }
}

fn reduce(ch: &CompositeChannel, mgfs: &Mgfs, per_frame: u32) -> Result<Metrics> {
    let (mgf_tau, frame_tau) = scalarize(&ch.pi_new, &mgfs.tau)?;
    let (mgf_delay, frame_delay) = scalarize(&ch.pi_new, &mgfs.delay)?;
    let tau_mean = frame_tau / per_frame as f64;
    Ok(Metrics {
        tau_mean,
        throughput: 1.0 / tau_mean,
        delay_mean: frame_delay / per_frame as f64,
        frame_tau_mean: frame_tau,
        frame_delay_mean: frame_delay,
        mgf_tau,
        mgf_delay,
    })
}

/// Metrics of any scheme with explicit analysis options.
pub fn analyze(ch: &CompositeChannel, p: &ProtocolParams, opts: &AnalysisOptions) -> Result<Metrics> {
    let mgfs = mgfs_at(ch, p, opts, 1.0)?;
    let per_frame = if p.scheme == Scheme::Coded { p.frame_size } else { 1 };
    reduce(ch, &mgfs, per_frame)
}

pub fn uncoded_metrics(ch: &CompositeChannel, p: &ProtocolParams) -> Result<Metrics> {
    if p.scheme != Scheme::Uncoded {
        return Err(Error::Domain(format!("expected uncoded parameters, got {}", p.scheme)));
    }
    analyze(ch, p, &AnalysisOptions::default())
}

pub fn harq_metrics(ch: &CompositeChannel, p: &ProtocolParams) -> Result<Metrics> {
    harq_metrics_with(ch, p, &AnalysisOptions::default())
}

pub fn harq_metrics_with(ch: &CompositeChannel, p: &ProtocolParams, opts: &AnalysisOptions) -> Result<Metrics> {
    if p.scheme != Scheme::Harq {
        return Err(Error::Domain(format!("expected harq parameters, got {}", p.scheme)));
    }
    analyze(ch, p, opts)
}

/// Coded-frame metrics for a given kernel, reported per packet (frame values / M).
pub fn coded_metrics(ch: &CompositeChannel, p: &ProtocolParams, kernel: &CodedKernel) -> Result<Metrics> {
    if p.scheme != Scheme::Coded {
        return Err(Error::Domain(format!("expected coded parameters, got {}", p.scheme)));
    }
    p.validate()?;
    kernel.check()?;
    if (&kernel.pc - &ch.pc).abs().max() > 1e-12 {
        return Err(Error::Domain("kernel was built for a different channel".into()));
    }
    let mgfs = coded_mgfs(kernel, p, 1.0)?;
    reduce(ch, &mgfs, p.frame_size)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{build_composite, build_half_channel};

    fn channel(eps: f64) -> CompositeChannel {
        let h = build_half_channel(0.3, 0.0, 1.0, eps).unwrap();
        build_composite(&h, &h).unwrap()
    }

    fn max_abs(m: &Mat) -> f64 {
        m.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    #[test]
    fn params_validation() {
        assert!(ProtocolParams::uncoded(5, 4).validate().is_err());
        assert!(ProtocolParams::coded(5, 10, 6, 4).validate().is_err());
        assert!(ProtocolParams::coded(5, 10, 3, 4).validate().is_err());
        assert!(ProtocolParams::coded(5, 5, 5, 4).validate().is_ok());
        let mut p = ProtocolParams::uncoded(5, 10);
        p.frame_size = 2;
        assert!(p.validate().is_err());
        assert_eq!(ProtocolParams::uncoded(5, 10).residual(), 5);
        assert_eq!("HARQ".parse::<Scheme>().unwrap(), Scheme::Harq);
    }

    #[test]
    fn harq_error_model() {
        assert!((harq_eps_b(1.0, 1) - 0.632_120_558_828_557_7).abs() < 1e-15);
        assert!((harq_eps_b(1.0, 2) - 0.393_469_340_287_366_6).abs() < 1e-15);
        for m in 1..50 {
            assert!(harq_eps_b(3.0, m + 1) < harq_eps_b(3.0, m));
        }
    }

    #[test]
    fn attempt_channels_shrink() {
        let ch = channel(0.3);
        let errors = AttemptErrors::Exponential { gamma_over_rho: 3.0 };
        for scale_reverse in [false, true] {
            let a = HarqAttemptChannels::build(&ch, &errors, scale_reverse, 12).unwrap();
            assert_eq!(a.px1(0), Mat::identity(4, 4));
            for m in 1..=12 {
                let cm = a.get(m);
                assert!(max_abs(&(&cm.px0 + &cm.px1 - &ch.pc)) < 1e-12);
                if m > 1 {
                    let prev = a.get(m - 1);
                    assert!((&prev.p1x - &cm.p1x).iter().all(|v| *v >= -1e-15));
                    assert!((&prev.px1 - &cm.px1).iter().all(|v| *v >= -1e-15));
                }
            }
        }
    }

    #[test]
    fn error_free_uncoded() {
        let ch = channel(0.0);
        for t in [5, 7, 20] {
            let m = uncoded_metrics(&ch, &ProtocolParams::uncoded(5, t)).unwrap();
            assert!((m.tau_mean - 1.0).abs() < 1e-12);
            assert!((m.throughput - 1.0).abs() < 1e-12);
            assert!((m.delay_mean - 5.0).abs() < 1e-12);
        }
    }

    #[test]
    fn error_free_coded_frame() {
        let h = build_half_channel(0.3, 0.0, 0.0, 0.0).unwrap();
        let ch = build_composite(&h, &h).unwrap();
        for (m, n) in [(1, 1), (3, 3), (5, 5), (5, 4)] {
            let p = ProtocolParams::coded(5, 10, m, n);
            let kernel = default_coded_kernel(&ch, &p).unwrap();
            for batch in kernel.batches.values() {
                for o in &batch.outcomes[..batch.size as usize] {
                    assert_eq!(max_abs(&o[0]) + max_abs(&o[1]), 0.0);
                }
                assert_eq!(max_abs(&batch.outcomes[batch.size as usize][1]), 0.0);
            }
            let met = coded_metrics(&ch, &p, &kernel).unwrap();
            assert!((met.frame_delay_mean - (5 + m - 1) as f64).abs() < 1e-9);
            assert!((met.frame_tau_mean - m as f64).abs() < 1e-9);
            assert!((met.throughput - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn single_packet_kernel_is_composite() {
        let ch = channel(0.3);
        let kernel = default_coded_kernel(&ch, &ProtocolParams::coded(5, 10, 1, 1)).unwrap();
        let b = &kernel.batches[&1];
        for y in 0..2u8 {
            assert!(max_abs(&(&b.outcomes[1][y as usize] - ch.p(0, y))) < 1e-12);
            assert!(max_abs(&(&b.outcomes[0][y as usize] - ch.p(1, y))) < 1e-12);
        }
    }

    #[test]
    fn kernel_stage_sums() {
        let ch = channel(0.3);
        let kernel = default_coded_kernel(&ch, &ProtocolParams::coded(5, 10, 3, 2)).unwrap();
        kernel.check().unwrap();
        for batch in kernel.batches.values() {
            let total = batch.outcomes.iter().fold(Mat::zeros(4, 4), |a, o| a + &o[0] + &o[1]);
            for i in 0..4 {
                assert!((total.row(i).sum() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn coded_single_packet_equals_uncoded() {
        let ch = channel(0.3);
        let u = uncoded_metrics(&ch, &ProtocolParams::uncoded(5, 10)).unwrap();
        let p = ProtocolParams::coded(5, 10, 1, 1);
        let c = coded_metrics(&ch, &p, &default_coded_kernel(&ch, &p).unwrap()).unwrap();
        assert!((u.tau_mean - c.tau_mean).abs() < 1e-10);
        assert!((u.delay_mean - c.delay_mean).abs() < 1e-10);
    }

    #[test]
    fn constant_harq_is_uncoded() {
        let ch = channel(0.3);
        let u = uncoded_metrics(&ch, &ProtocolParams::uncoded(5, 10)).unwrap();
        let opts = AnalysisOptions {
            attempts: Some(AttemptErrors::Sequence(vec![1.0])),
            ..Default::default()
        };
        let h = harq_metrics_with(&ch, &ProtocolParams::harq(5, 10, 3.0), &opts).unwrap();
        assert!((u.tau_mean - h.tau_mean).abs() < 1e-12);
        assert!((u.delay_mean - h.delay_mean).abs() < 1e-12);
    }

    #[test]
    fn harq_variants_are_proper() {
        let ch = channel(0.3);
        let p = ProtocolParams::harq(5, 10, 3.0);
        for variant in [HarqVariant::AttemptIndexed, HarqVariant::Displayed] {
            let opts = AnalysisOptions {
                harq_variant: variant,
                ..Default::default()
            };
            let m = harq_metrics_with(&ch, &p, &opts).unwrap();
            assert!(m.mgf_error() < 1e-9, "{variant:?}: {}", m.mgf_error());
        }
    }

    #[test]
    fn kernel_for_other_channel_rejected() {
        let p = ProtocolParams::coded(5, 10, 3, 2);
        let kernel = default_coded_kernel(&channel(0.3), &p).unwrap();
        assert!(coded_metrics(&channel(0.2), &p, &kernel).is_err());
        assert!(uncoded_metrics(&channel(0.2), &p).is_err());
    }
}
