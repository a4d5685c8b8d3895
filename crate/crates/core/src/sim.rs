//! Slot-level Monte Carlo simulation of the three protocols.
//!
//! Each frame (a single packet for uncoded and HARQ) is followed from its first
//! transmission until the sender holds an acknowledgement. Lifecycles start afresh from
//! the new-packet state distribution, so frame samples are independent and identically
//! distributed. The forward state `k` slots before the first transmission is drawn
//! conditioned on a success there, the reverse state one slot before from stationarity.
//!
//! Sender rules, with `b(n) = M` for `n = 0` and `N - n` otherwise:
//! * a round sends `b(n)` packets in consecutive slots; its own feedback arrives `k - 1`
//!   slots after the last of them and reports the receiver's DoF count;
//! * own feedback delivered: done if the count reached `N`, otherwise a new round starts
//!   in the next slot with `n` set to the count;
//! * own feedback erased and the round added DoF: any delivered feedback in the next
//!   `T - k` slots acts as the own feedback; if none arrives the timer restarts a round
//!   with unchanged `n`, `T` slots after the last packet of the round;
//! * own feedback erased and nothing new received: the timer restarts the round;
//! * once the frame is decodable but unacknowledged, a round is resent every `T + b - 1`
//!   slots and the first delivered feedback ends the frame.
//!
//! Forward erasures of the `m`-th transmission of a packet use `eps(m)` from the attempt
//! error model; rounds are sent whole.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{build_half_channel, HalfChannel};
use crate::error::{Error, Result};
use crate::protocols::{AttemptErrors, ProtocolParams, Scheme};

/// Gilbert-Elliott parameters of one direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeParams {
    pub r: f64,
    pub eps_g: f64,
    pub eps_b: f64,
    pub eps: f64,
}

impl GeParams {
    pub fn build(&self) -> Result<HalfChannel> {
        build_half_channel(self.r, self.eps_g, self.eps_b, self.eps)
    }
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub forward: GeParams,
    pub reverse: GeParams,
    pub seed: u64,
    /// Delivered packets to accumulate.
    pub horizon: u64,
    /// Overrides the scheme's attempt error model.
    pub attempts: Option<AttemptErrors>,
}

impl SimConfig {
    pub fn new(params: ProtocolParams, channel: GeParams, seed: u64, horizon: u64) -> Self {
        SimConfig {
            params,
            forward: channel,
            reverse: channel,
            seed,
            horizon,
            attempts: None,
        }
    }
}

/// Running mean and variance.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Moments {
    pub n: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Moments) -> Moments {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let delta = other.mean - self.mean;
        Moments {
            n,
            mean: self.mean + delta * other.n as f64 / n as f64,
            m2: self.m2 + other.m2 + delta * delta * (self.n as f64 * other.n as f64) / n as f64,
        }
    }

    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            self.m2 / (self.n - 1) as f64
        }
    }

    pub fn stderr(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStats {
    /// Transmissions per packet, one sample per frame (divided by `M`).
    pub tau: Moments,
    /// Delay per packet in slots, one sample per frame (divided by `M`).
    pub delay: Moments,
    pub delivered: u64,
    pub slots_elapsed: u64,
}

impl SimStats {
    pub fn tau_mean_hat(&self) -> f64 {
        self.tau.mean
    }

    pub fn delay_mean_hat(&self) -> f64 {
        self.delay.mean
    }

    pub fn throughput_hat(&self) -> f64 {
        1.0 / self.tau.mean
    }

    /// Delta-method standard error of the throughput.
    pub fn throughput_stderr(&self) -> f64 {
        self.tau.stderr() / (self.tau.mean * self.tau.mean)
    }

    pub fn merge(&self, other: &SimStats) -> SimStats {
        SimStats {
            tau: self.tau.merge(&other.tau),
            delay: self.delay.merge(&other.delay),
            delivered: self.delivered + other.delivered,
            slots_elapsed: self.slots_elapsed + other.slots_elapsed,
        }
    }

    /// Pools independent runs.
    pub fn pool<'a>(runs: impl IntoIterator<Item = &'a SimStats>) -> Option<SimStats> {
        runs.into_iter().fold(None, |acc: Option<SimStats>, s| {
            Some(match acc {
                Some(a) => a.merge(s),
                None => s.clone(),
            })
        })
    }
}

pub const GOOD: usize = 0;
pub const BAD: usize = 1;

/// Next chain state for a uniform draw `u`.
pub fn ge_transition(ch: &HalfChannel, state: usize, u: f64) -> usize {
    let stay = ch.transition[(state, state)];
    if u < stay {
        state
    } else {
        1 - state
    }
}

/// One slot: move the chain, then erase with the new state's rate.
pub fn ge_step<R: Rng + ?Sized>(ch: &HalfChannel, state: usize, rng: &mut R) -> (usize, bool) {
    let next = ge_transition(ch, state, rng.random::<f64>());
    let rate = if next == GOOD { ch.eps_g } else { ch.eps_b };
    (next, rng.random::<f64>() < rate)
}

fn sample_state(weights: [f64; 2], u: f64) -> usize {
    let total = weights[0] + weights[1];
    if u * total < weights[0] {
        GOOD
    } else {
        BAD
    }
}

const FWD_STATE: u64 = 0;
const FWD_ERASURE: u64 = 1;
const REV_STATE: u64 = 2;
const REV_ERASURE: u64 = 3;
const START: u64 = 4;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Both directions evolving slot by slot.
struct Link<'a> {
    fwd: &'a HalfChannel,
    rev: &'a HalfChannel,
    fwd_state: usize,
    rev_state: usize,
    rev_erased: bool,
    slot: u64,
    fwd_rng: ChaCha8Rng,
    fwd_err_rng: ChaCha8Rng,
    rev_rng: ChaCha8Rng,
    rev_err_rng: ChaCha8Rng,
    start_rng: ChaCha8Rng,
}

impl<'a> Link<'a> {
    fn new(fwd: &'a HalfChannel, rev: &'a HalfChannel, seed: u64) -> Self {
        Link {
            fwd,
            rev,
            fwd_state: GOOD,
            rev_state: GOOD,
            rev_erased: false,
            slot: 0,
            fwd_rng: stream(seed, FWD_STATE),
            fwd_err_rng: stream(seed, FWD_ERASURE),
            rev_rng: stream(seed, REV_STATE),
            rev_err_rng: stream(seed, REV_ERASURE),
            start_rng: stream(seed, START),
        }
    }

    /// Places the link at slot 0 of a new lifecycle.
    fn restart(&mut self, k: u32) {
        let pi = &self.fwd.stationary;
        let p0 = &self.fwd.success;
        let w = [
            pi[0] * p0[(0, 0)] + pi[1] * p0[(1, 0)],
            pi[0] * p0[(0, 1)] + pi[1] * p0[(1, 1)],
        ];
        self.fwd_state = sample_state(w, self.start_rng.random());
        for _ in 0..k {
            self.fwd_state = ge_transition(self.fwd, self.fwd_state, self.fwd_rng.random());
        }
        let pr = &self.rev.stationary;
        self.rev_state = sample_state([pr[0], pr[1]], self.start_rng.random());
        self.slot = 0;
        self.enter_slot(false);
    }

    fn enter_slot(&mut self, move_forward: bool) {
        if move_forward {
            self.fwd_state = ge_transition(self.fwd, self.fwd_state, self.fwd_rng.random());
        }
        self.rev_state = ge_transition(self.rev, self.rev_state, self.rev_rng.random());
        let rate = if self.rev_state == GOOD { self.rev.eps_g } else { self.rev.eps_b };
        self.rev_erased = self.rev_err_rng.random::<f64>() < rate;
    }

    fn advance_to(&mut self, slot: u64) {
        while self.slot < slot {
            self.slot += 1;
            self.enter_slot(true);
        }
    }

    /// Forward transmission in the current slot with the given per-state rates.
    fn transmit(&mut self, (eps_g, eps_b): (f64, f64)) -> bool {
        let rate = if self.fwd_state == GOOD { eps_g } else { eps_b };
        self.fwd_err_rng.random::<f64>() >= rate
    }

    /// Slot of the first delivered feedback in `from..from + len`.
    fn first_feedback(&mut self, from: u64, len: u64) -> Option<u64> {
        for s in from..from + len {
            self.advance_to(s);
            if !self.rev_erased {
                return Some(s);
            }
        }
        None
    }
}

/// Transmissions and delay of one frame.
fn run_frame(link: &mut Link, p: &ProtocolParams, errors: &AttemptErrors) -> (u64, u64) {
    let (k, t) = (p.k as u64, p.timeout as u64);
    let (m_frame, n_dof) = (p.frame_size as u64, p.dof as u64);
    let batch = |known: u64| if known == 0 { m_frame } else { n_dof - known };
    link.restart(p.k);

    let mut known = 0u64;
    let mut received = 0u64;
    let mut attempts = 0u32;
    let mut sent = 0u64;
    let mut start = 0u64;
    loop {
        let b = batch(known);
        for i in 0..b {
            link.advance_to(start + i);
            attempts += 1;
            let rates = errors.rates(link.fwd, attempts);
            if link.transmit(rates) {
                received += 1;
            }
        }
        sent += b;
        let last = start + b - 1;
        let count = received.min(n_dof);
        let own = last + k - 1;
        link.advance_to(own);
        if !link.rev_erased {
            if count >= n_dof {
                return (sent, own + 1);
            }
            known = count;
            start = own + 1;
            continue;
        }
        if count > known {
            if let Some(s) = link.first_feedback(own + 1, t - k) {
                if count >= n_dof {
                    return (sent, s + 1);
                }
                known = count;
                start = s + 1;
                continue;
            }
            if count >= n_dof {
                // decodable, waiting for any feedback while the timer resends
                let mut u = last + t;
                loop {
                    let period = t + b - 1;
                    sent += b;
                    if let Some(s) = link.first_feedback(u, period) {
                        return (sent, s + 1);
                    }
                    u += period;
                }
            }
        }
        start = last + t;
    }
}

fn default_attempts(p: &ProtocolParams) -> AttemptErrors {
    match p.scheme {
        Scheme::Harq => AttemptErrors::Exponential {
            gamma_over_rho: p.gamma_over_rho,
        },
        _ => AttemptErrors::Base,
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimStats> {
    cfg.params.validate()?;
    if cfg.horizon == 0 {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    let fwd = cfg.forward.build()?;
    let rev = cfg.reverse.build()?;
    let errors = cfg.attempts.clone().unwrap_or_else(|| default_attempts(&cfg.params));
    let mut link = Link::new(&fwd, &rev, cfg.seed);
    let m = cfg.params.frame_size as u64;
    let frames = cfg.horizon.div_ceil(m);
    let mut stats = SimStats {
        tau: Moments::default(),
        delay: Moments::default(),
        delivered: 0,
        slots_elapsed: 0,
    };
    for _ in 0..frames {
        let (sent, delay) = run_frame(&mut link, &cfg.params, &errors);
        stats.tau.push(sent as f64 / m as f64);
        stats.delay.push(delay as f64 / m as f64);
        stats.delivered += m;
        stats.slots_elapsed += delay;
    }
    Ok(stats)
}
