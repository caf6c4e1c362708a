//! Event-driven simulation of the prelimit load-balancing system and its
//! diffusion-scaled processes.
//!
//! `N` servers each have a dedicated Poisson stream; one thin Poisson stream
//! (the load-balancing stream, LBS) is routed to the queue whose current
//! rank equals an independently sampled `θ ~ p`. Queues are served FIFO with
//! i.i.d. service times from a unit-mean law scaled by the server's rate.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ModelParams, Regime, ResidualRule};
use crate::rng::{stream_rng, Stream};
use crate::service::ServiceSampler;

/// Time-zero configuration of the queues.
///
/// Empty queues carry one fictitious job of zero length, so `X(0-) = 1`
/// there and the fictitious departure at `t = 0` leaves `X(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InitialCondition {
    pub x0_minus: Vec<u64>,
    pub z0: Vec<f64>,
    pub empty: Vec<usize>,
    pub nonempty: Vec<usize>,
}

impl InitialCondition {
    /// Realize the initial condition described by `mp.ic` for the `n`-th system.
    pub fn from_params(mp: &ModelParams, seed: u64) -> Self {
        let offset = mp.alpha_n().unwrap_or(0.0);
        let mut ic = InitialCondition {
            x0_minus: Vec::with_capacity(mp.servers()),
            z0: Vec::with_capacity(mp.servers()),
            empty: Vec::new(),
            nonempty: Vec::new(),
        };
        for i in 0..mp.servers() {
            let jobs = (offset + mp.sqrt_n() * mp.ic.x0[i]).round();
            if jobs < 1.0 {
                ic.x0_minus.push(1);
                ic.z0.push(0.0);
                ic.empty.push(i);
            } else {
                let z = match &mp.ic.residual {
                    ResidualRule::Fixed { z0 } => z0[i],
                    ResidualRule::Fresh => {
                        let mut rng = stream_rng(seed, Stream::Residual(i));
                        mp.service[i].sampler().sample(&mut rng) / mp.service_rate(i)
                    }
                };
                ic.x0_minus.push(jobs as u64);
                ic.z0.push(z);
                ic.nonempty.push(i);
            }
        }
        ic
    }

    pub fn validate(&self, servers: usize) -> Result<()> {
        if self.x0_minus.len() != servers || self.z0.len() != servers {
            return Err(Error::invalid("initial", format!("expected {servers} queues")));
        }
        let mut seen = vec![false; servers];
        for &i in &self.empty {
            if i >= servers || seen[i] || self.x0_minus[i] != 1 || self.z0[i] != 0.0 {
                return Err(Error::invalid(
                    format!("initial.empty[{i}]"),
                    "empty queues need X(0-)=1 and Z(0)=0",
                ));
            }
            seen[i] = true;
        }
        for &i in &self.nonempty {
            if i >= servers || seen[i] || self.x0_minus[i] < 1 || !(self.z0[i] > 0.0 && self.z0[i].is_finite()) {
                return Err(Error::invalid(
                    format!("initial.nonempty[{i}]"),
                    "nonempty queues need X(0-)>=1 and Z(0)>0",
                ));
            }
            seen[i] = true;
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::invalid(
                "initial",
                "empty and nonempty sets must partition the servers",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EventKind {
    Departure {
        server: usize,
    },
    DedicatedArrival {
        server: usize,
    },
    /// `theta` is the sampled rank (1-based), `server` the routed queue.
    LbsArrival {
        theta: usize,
        server: usize,
    },
}

impl EventKind {
    pub fn server(&self) -> usize {
        match *self {
            EventKind::Departure { server }
            | EventKind::DedicatedArrival { server }
            | EventKind::LbsArrival { server, .. } => server,
        }
    }
}

/// Live state of one simulation run.
pub struct Simulator<'a> {
    mp: &'a ModelParams,
    arrival_rate: Vec<f64>,
    lbs_rate: f64,
    service_rate: Vec<f64>,
    samplers: Vec<ServiceSampler>,
    arrival_rng: Vec<ChaCha8Rng>,
    service_rng: Vec<ChaCha8Rng>,
    lbs_rng: ChaCha8Rng,
    theta_rng: ChaCha8Rng,
    next_departure: Vec<f64>,
    next_arrival: Vec<f64>,
    next_lbs: f64,
    time: f64,
    x: Vec<u64>,
    e: Vec<u64>,
    a: Vec<u64>,
    d: Vec<u64>,
    a0: u64,
    busy: Vec<f64>,
    idle: Vec<f64>,
    rank_integral: Vec<f64>,
    ranks: Vec<usize>,
}

fn exp_gap(rng: &mut ChaCha8Rng, rate: f64) -> f64 {
    if rate > 0.0 {
        let e: f64 = Exp1.sample(rng);
        e / rate
    } else {
        f64::INFINITY
    }
}

fn fill_ranks(x: &[u64], ranks: &mut [usize]) {
    for i in 0..x.len() {
        let mut r = 0;
        for (j, &v) in x.iter().enumerate() {
            if v < x[i] || (v == x[i] && j <= i) {
                r += 1;
            }
        }
        ranks[i] = r;
    }
}

impl<'a> Simulator<'a> {
    pub fn new(mp: &'a ModelParams, seed: u64) -> Result<Self> {
        mp.validate()?;
        let ic = InitialCondition::from_params(mp, seed);
        Self::with_initial(mp, &ic, seed)
    }

    pub fn with_initial(mp: &'a ModelParams, ic: &InitialCondition, seed: u64) -> Result<Self> {
        mp.validate()?;
        let n_srv = mp.servers();
        ic.validate(n_srv)?;
        let arrival_rate: Vec<f64> = (0..n_srv).map(|i| mp.arrival_rate(i)).collect();
        let mut arrival_rng: Vec<ChaCha8Rng> = (0..n_srv)
            .map(|i| stream_rng(seed, Stream::DedicatedArrival(i)))
            .collect();
        let mut lbs_rng = stream_rng(seed, Stream::LbsArrival);
        let next_arrival = (0..n_srv)
            .map(|i| exp_gap(&mut arrival_rng[i], arrival_rate[i]))
            .collect();
        let lbs_rate = mp.lbs_rate();
        let next_lbs = exp_gap(&mut lbs_rng, lbs_rate);
        let mut sim = Simulator {
            mp,
            arrival_rate,
            lbs_rate,
            service_rate: (0..n_srv).map(|i| mp.service_rate(i)).collect(),
            samplers: mp.service.iter().map(|s| s.sampler()).collect(),
            arrival_rng,
            service_rng: (0..n_srv).map(|i| stream_rng(seed, Stream::Service(i))).collect(),
            lbs_rng,
            theta_rng: stream_rng(seed, Stream::Theta),
            next_departure: ic.z0.clone(),
            next_arrival,
            next_lbs,
            time: 0.0,
            x: ic.x0_minus.clone(),
            e: vec![0; n_srv],
            a: vec![0; n_srv],
            d: vec![0; n_srv],
            a0: 0,
            busy: vec![0.0; n_srv],
            idle: vec![0.0; n_srv],
            rank_integral: vec![0.0; n_srv],
            ranks: vec![0; n_srv],
        };
        fill_ranks(&sim.x, &mut sim.ranks);
        Ok(sim)
    }

    pub fn time(&self) -> f64 {
        self.time
    }
    pub fn queue(&self) -> &[u64] {
        &self.x
    }
    pub fn dedicated_arrivals(&self) -> &[u64] {
        &self.e
    }
    pub fn routed_arrivals(&self) -> &[u64] {
        &self.a
    }
    pub fn departures(&self) -> &[u64] {
        &self.d
    }
    pub fn lbs_arrivals(&self) -> u64 {
        self.a0
    }
    /// Cumulative busy time `T_i(t)`.
    pub fn busy_time(&self) -> &[f64] {
        &self.busy
    }
    /// Cumulative idle time `t − T_i(t)`, accumulated separately so it is
    /// exactly nondecreasing.
    pub fn idle_time(&self) -> &[f64] {
        &self.idle
    }
    /// `∫_0^t p_{R_i(s)} ds`.
    pub fn rank_integral(&self) -> &[f64] {
        &self.rank_integral
    }
    pub fn ranks(&self) -> &[usize] {
        &self.ranks
    }

    fn advance_to(&mut self, t: f64) {
        let dt = t - self.time;
        if dt > 0.0 {
            for i in 0..self.x.len() {
                if self.x[i] > 0 {
                    self.busy[i] += dt;
                } else {
                    self.idle[i] += dt;
                }
                self.rank_integral[i] += self.mp.p[self.ranks[i] - 1] * dt;
            }
        }
        self.time = t;
    }

    fn start_service(&mut self, i: usize) {
        let z = self.samplers[i].sample(&mut self.service_rng[i]) / self.service_rate[i];
        self.next_departure[i] = self.time + z;
    }

    fn arrive(&mut self, i: usize) {
        self.x[i] += 1;
        if self.x[i] == 1 {
            self.start_service(i);
        }
    }

    fn sample_theta(&mut self) -> usize {
        let u: f64 = self.theta_rng.random();
        let mut acc = 0.0;
        for (r, &q) in self.mp.p.iter().enumerate() {
            acc += q;
            if u < acc {
                return r + 1;
            }
        }
        // Rounding left u above the cumulative sum: last rank with mass.
        self.mp.p.iter().rposition(|&q| q > 0.0).expect("p sums to one") + 1
    }

    /// Apply the next event if it occurs no later than `horizon`; otherwise
    /// advance the clock to `horizon` and return `None`.
    pub fn step(&mut self, horizon: f64) -> Option<EventKind> {
        let n_srv = self.x.len();
        // Priority: departures, then dedicated arrivals, then LBS; index order within each.
        let mut best = f64::INFINITY;
        let mut which = usize::MAX;
        for (k, &t) in self
            .next_departure
            .iter()
            .chain(self.next_arrival.iter())
            .chain(std::iter::once(&self.next_lbs))
            .enumerate()
        {
            if t < best {
                best = t;
                which = k;
            }
        }
        if which == usize::MAX || best > horizon {
            if horizon > self.time {
                self.advance_to(horizon);
            }
            return None;
        }
        self.advance_to(best);
        let kind = if which < n_srv {
            let i = which;
            self.x[i] -= 1;
            self.d[i] += 1;
            if self.x[i] > 0 {
                self.start_service(i);
            } else {
                self.next_departure[i] = f64::INFINITY;
            }
            EventKind::Departure { server: i }
        } else if which < 2 * n_srv {
            let i = which - n_srv;
            self.e[i] += 1;
            self.arrive(i);
            self.next_arrival[i] = best + exp_gap(&mut self.arrival_rng[i], self.arrival_rate[i]);
            EventKind::DedicatedArrival { server: i }
        } else {
            let theta = self.sample_theta();
            let server = self
                .ranks
                .iter()
                .position(|&r| r == theta)
                .expect("ranks are a permutation");
            self.a0 += 1;
            self.a[server] += 1;
            self.arrive(server);
            self.next_lbs = best + exp_gap(&mut self.lbs_rng, self.lbs_rate);
            EventKind::LbsArrival { theta, server }
        };
        fill_ranks(&self.x, &mut self.ranks);
        Some(kind)
    }
}

/// Full trajectory of one run. Per-event state arrays are flat, row-major
/// by event (`N` entries per event).
#[derive(Debug, Clone, Serialize)]
pub struct EventLog {
    pub params: ModelParams,
    pub seed: u64,
    pub horizon: f64,
    pub initial: InitialCondition,
    pub times: Vec<f64>,
    pub kinds: Vec<EventKind>,
    pub x: Vec<u64>,
    pub e: Vec<u64>,
    pub a: Vec<u64>,
    pub d: Vec<u64>,
    pub busy: Vec<f64>,
    pub idle: Vec<f64>,
    pub rank_integral: Vec<f64>,
    /// Ranks *before* each event (those used for routing).
    pub ranks_before: Vec<usize>,
    pub a0: Vec<u64>,
    /// State at the horizon.
    pub terminal: Terminal,
}

/// Cumulative counters of a run at a fixed time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Terminal {
    pub time: f64,
    pub x: Vec<u64>,
    pub e: Vec<u64>,
    pub a: Vec<u64>,
    pub d: Vec<u64>,
    pub a0: u64,
    pub busy: Vec<f64>,
    pub idle: Vec<f64>,
    pub rank_integral: Vec<f64>,
}

impl Terminal {
    fn capture(sim: &Simulator) -> Self {
        Terminal {
            time: sim.time,
            x: sim.x.clone(),
            e: sim.e.clone(),
            a: sim.a.clone(),
            d: sim.d.clone(),
            a0: sim.a0,
            busy: sim.busy.clone(),
            idle: sim.idle.clone(),
            rank_integral: sim.rank_integral.clone(),
        }
    }
}

impl EventLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
    pub fn servers(&self) -> usize {
        self.initial.x0_minus.len()
    }
    /// Queue vector right after event `k`.
    pub fn queue_after(&self, k: usize) -> &[u64] {
        let n = self.servers();
        &self.x[k * n..(k + 1) * n]
    }
    pub fn ranks_before(&self, k: usize) -> &[usize] {
        let n = self.servers();
        &self.ranks_before[k * n..(k + 1) * n]
    }

    /// Write one row per event: `t,kind,server,theta,x_1..x_N`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let n = self.servers();
        let mut header = vec!["t".to_string(), "kind".into(), "server".into(), "theta".into()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for k in 0..self.len() {
            let (kind, theta) = match self.kinds[k] {
                EventKind::Departure { .. } => ("departure", String::new()),
                EventKind::DedicatedArrival { .. } => ("dedicated-arrival", String::new()),
                EventKind::LbsArrival { theta, .. } => ("lbs-arrival", theta.to_string()),
            };
            let mut row = vec![
                self.times[k].to_string(),
                kind.to_string(),
                (self.kinds[k].server() + 1).to_string(),
                theta,
            ];
            row.extend(self.queue_after(k).iter().map(|v| v.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate on `[0, horizon]`, recording every event.
pub fn simulate(mp: &ModelParams, horizon: f64, seed: u64) -> Result<EventLog> {
    mp.validate()?;
    let ic = InitialCondition::from_params(mp, seed);
    simulate_from(mp, &ic, horizon, seed)
}

/// As [`simulate`] with an explicit initial condition.
pub fn simulate_from(mp: &ModelParams, ic: &InitialCondition, horizon: f64, seed: u64) -> Result<EventLog> {
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::invalid("horizon", "must be finite and nonnegative"));
    }
    let mut sim = Simulator::with_initial(mp, ic, seed)?;
    let n = mp.servers();
    let mut log = EventLog {
        params: mp.clone(),
        seed,
        horizon,
        initial: ic.clone(),
        times: Vec::new(),
        kinds: Vec::new(),
        x: Vec::new(),
        e: Vec::new(),
        a: Vec::new(),
        d: Vec::new(),
        busy: Vec::new(),
        idle: Vec::new(),
        rank_integral: Vec::new(),
        ranks_before: Vec::new(),
        a0: Vec::new(),
        terminal: Terminal::capture(&sim),
    };
    let mut ranks = vec![0; n];
    loop {
        ranks.copy_from_slice(sim.ranks());
        let Some(kind) = sim.step(horizon) else { break };
        log.times.push(sim.time);
        log.kinds.push(kind);
        log.x.extend_from_slice(&sim.x);
        log.e.extend_from_slice(&sim.e);
        log.a.extend_from_slice(&sim.a);
        log.d.extend_from_slice(&sim.d);
        log.busy.extend_from_slice(&sim.busy);
        log.idle.extend_from_slice(&sim.idle);
        log.rank_integral.extend_from_slice(&sim.rank_integral);
        log.ranks_before.extend_from_slice(&ranks);
        log.a0.push(sim.a0);
    }
    log.terminal = Terminal::capture(&sim);
    Ok(log)
}

/// Run to `horizon` keeping only the terminal counters.
pub fn simulate_terminal(mp: &ModelParams, horizon: f64, seed: u64) -> Result<Terminal> {
    let mut sim = Simulator::new(mp, seed)?;
    while sim.step(horizon).is_some() {}
    Ok(Terminal::capture(&sim))
}

/// Scaled values of a run at its terminal time.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledTerminal {
    /// `X̂` under IC₀, `X̌` under IC_α.
    pub x: Vec<f64>,
    pub l_hat: Vec<f64>,
    /// `M̂_i = Â_i − λ̂₀ ∫ p_{R_i} ds`.
    pub martingale: Vec<f64>,
}

impl Terminal {
    pub fn scaled(&self, mp: &ModelParams) -> ScaledTerminal {
        let root = mp.sqrt_n();
        let offset = mp.alpha_n().unwrap_or(0.0);
        let lambda0_hat = mp.lbs_rate() / root;
        let n_srv = mp.servers();
        ScaledTerminal {
            x: self.x.iter().map(|&v| (v as f64 - offset) / root).collect(),
            l_hat: (0..n_srv).map(|i| mp.service_rate(i) * self.idle[i] / root).collect(),
            martingale: (0..n_srv)
                .map(|i| self.a[i] as f64 / root - lambda0_hat * self.rank_integral[i])
                .collect(),
        }
    }
}

/// Diffusion-scaled processes of one run, sampled on the event grid.
///
/// Per-server series are indexed `[server][grid point]`. Values are the
/// right-continuous values at each grid time; `u_left` carries the left
/// limits of `Û` (or `Ǔ`), which can differ at arrival and departure epochs.
#[derive(Debug, Clone, Serialize)]
pub struct ScaledPath {
    pub regime: Regime,
    pub n: u64,
    pub grid: Vec<f64>,
    pub x: Vec<Vec<u64>>,
    pub e: Vec<Vec<u64>>,
    pub a: Vec<Vec<u64>>,
    pub d: Vec<Vec<u64>>,
    pub busy: Vec<Vec<f64>>,
    /// `X̂(0-)` or `X̌(0-)`.
    pub x_initial: Vec<f64>,
    /// `X̂` under IC₀, `X̌` under IC_α.
    pub x_scaled: Vec<Vec<f64>>,
    pub l_hat: Vec<Vec<f64>>,
    pub e_hat: Vec<Vec<f64>>,
    /// `Ŝ_i(T_i(t)) = n^{-1/2}(D_i(t) − μ_i^n T_i(t))`.
    pub s_hat_busy: Vec<Vec<f64>>,
    pub a_hat: Vec<Vec<f64>>,
    pub a0_hat: Vec<f64>,
    pub p_hat: Vec<Vec<f64>>,
    pub martingale: Vec<Vec<f64>>,
    pub p_sharp: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub u_left: Vec<Vec<f64>>,
    pub m_hat: Vec<f64>,
}

/// Build the scaled processes of a logged run.
pub fn scaled_path(log: &EventLog, mp: &ModelParams, regime: &Regime) -> Result<ScaledPath> {
    if log.params != *mp {
        return Err(Error::invalid("mp", "parameters differ from those of the log"));
    }
    if std::mem::discriminant(regime) != std::mem::discriminant(&mp.ic.regime) {
        return Err(Error::invalid(
            "regime",
            "inconsistent with the model's initial-condition regime",
        ));
    }
    let n_srv = mp.servers();
    let root = mp.sqrt_n();
    let offset = mp.alpha_n().unwrap_or(0.0);
    let lambda0_hat = mp.lbs_rate() / root;
    let m_hat: Vec<f64> = (0..n_srv)
        .map(|i| {
            (mp.arrival_rate(i) - mp.n as f64 * mp.lambda[i]) / root
                - (mp.service_rate(i) - mp.n as f64 * mp.mu[i]) / root
        })
        .collect();
    let x_initial: Vec<f64> = log
        .initial
        .x0_minus
        .iter()
        .map(|&v| (v as f64 - offset) / root)
        .collect();

    // Grid: time 0, then each distinct event time, then the horizon.
    // Entry = index of the last event at that time, or None for "no event yet".
    let mut points: Vec<(f64, Option<usize>)> = vec![(0.0, None)];
    for k in 0..log.len() {
        let t = log.times[k];
        match points.last_mut() {
            Some(last) if last.0 == t => last.1 = Some(k),
            _ => points.push((t, Some(k))),
        }
    }
    let &(last_time, last_slot) = points.last().expect("grid starts at 0");
    if log.horizon > last_time {
        points.push((log.horizon, last_slot));
    }

    let mut path = ScaledPath {
        regime: regime.clone(),
        n: mp.n,
        grid: points.iter().map(|p| p.0).collect(),
        x: vec![Vec::with_capacity(points.len()); n_srv],
        e: vec![Vec::with_capacity(points.len()); n_srv],
        a: vec![Vec::with_capacity(points.len()); n_srv],
        d: vec![Vec::with_capacity(points.len()); n_srv],
        busy: vec![Vec::with_capacity(points.len()); n_srv],
        x_initial: x_initial.clone(),
        x_scaled: vec![Vec::with_capacity(points.len()); n_srv],
        l_hat: vec![Vec::with_capacity(points.len()); n_srv],
        e_hat: vec![Vec::with_capacity(points.len()); n_srv],
        s_hat_busy: vec![Vec::with_capacity(points.len()); n_srv],
        a_hat: vec![Vec::with_capacity(points.len()); n_srv],
        a0_hat: Vec::with_capacity(points.len()),
        p_hat: vec![Vec::with_capacity(points.len()); n_srv],
        martingale: vec![Vec::with_capacity(points.len()); n_srv],
        p_sharp: vec![Vec::with_capacity(points.len()); n_srv],
        u: vec![Vec::with_capacity(points.len()); n_srv],
        u_left: vec![Vec::with_capacity(points.len()); n_srv],
        m_hat: m_hat.clone(),
    };

    // Counters of the state before any event; busy/rank integrals are continuous.
    let counts_at = |slot: Option<usize>, i: usize| -> (u64, u64, u64, u64) {
        match slot {
            None => (log.initial.x0_minus[i], 0, 0, 0),
            Some(k) => (
                log.x[k * n_srv + i],
                log.e[k * n_srv + i],
                log.a[k * n_srv + i],
                log.d[k * n_srv + i],
            ),
        }
    };
    // Busy time and rank integral at grid time t, extrapolated from the last event.
    let continuous_at = |slot: Option<usize>, i: usize, t: f64| -> (f64, f64, f64) {
        let (t_prev, busy, idle, integ, x, rank) = match slot {
            None => {
                let mut ranks = vec![0; n_srv];
                fill_ranks(&log.initial.x0_minus, &mut ranks);
                (0.0, 0.0, 0.0, 0.0, log.initial.x0_minus[i], ranks[i])
            }
            Some(k) => {
                let mut ranks = vec![0; n_srv];
                fill_ranks(&log.x[k * n_srv..(k + 1) * n_srv], &mut ranks);
                let at = k * n_srv + i;
                (
                    log.times[k],
                    log.busy[at],
                    log.idle[at],
                    log.rank_integral[at],
                    log.x[at],
                    ranks[i],
                )
            }
        };
        let dt = t - t_prev;
        let (busy, idle) = if x > 0 { (busy + dt, idle) } else { (busy, idle + dt) };
        (busy, idle, integ + mp.p[rank - 1] * dt)
    };

    let mut prev_slot: Option<usize> = None;
    for (g, &(t, slot)) in points.iter().enumerate() {
        for i in 0..n_srv {
            let (x, e, a, d) = counts_at(slot, i);
            let (busy, idle, integ) = continuous_at(slot, i, t);
            let lam = mp.arrival_rate(i);
            let mu = mp.service_rate(i);
            let x_scaled = (x as f64 - offset) / root;
            let l_hat = mu * idle / root;
            let e_hat = (e as f64 - lam * t) / root;
            let s_hat = (d as f64 - mu * busy) / root;
            let a_hat = a as f64 / root;
            let u = x_initial[i] + e_hat + a_hat - s_hat + m_hat[i] * t;
            let u_left = if g == 0 {
                u
            } else {
                let (_, e_p, a_p, d_p) = counts_at(prev_slot, i);
                x_initial[i] + (e_p as f64 - lam * t) / root + a_p as f64 / root - (d_p as f64 - mu * busy) / root
                    + m_hat[i] * t
            };
            path.x[i].push(x);
            path.e[i].push(e);
            path.a[i].push(a);
            path.d[i].push(d);
            path.busy[i].push(busy);
            path.x_scaled[i].push(x_scaled);
            path.l_hat[i].push(l_hat);
            path.e_hat[i].push(e_hat);
            path.s_hat_busy[i].push(s_hat);
            path.a_hat[i].push(a_hat);
            path.p_hat[i].push(lambda0_hat * integ);
            path.martingale[i].push(a_hat - lambda0_hat * integ);
            path.p_sharp[i].push(mp.lambda0 * integ);
            path.u[i].push(u);
            path.u_left[i].push(u_left);
        }
        let a0 = slot.map_or(0, |k| log.a0[k]);
        path.a0_hat.push(a0 as f64 / root);
        prev_slot = slot;
    }
    Ok(path)
}

impl ScaledPath {
    pub fn servers(&self) -> usize {
        self.x.len()
    }

    /// Value of the continuous `L̂_i` at time `t` (linear between grid points).
    pub fn l_hat_at(&self, i: usize, t: f64) -> f64 {
        let k = self.grid.partition_point(|&g| g <= t);
        if k == 0 {
            return self.l_hat[i][0];
        }
        let k = k - 1;
        if k + 1 >= self.grid.len() {
            return self.l_hat[i][k];
        }
        let w = (t - self.grid[k]) / (self.grid[k + 1] - self.grid[k]);
        self.l_hat[i][k] + w * (self.l_hat[i][k + 1] - self.l_hat[i][k])
    }

    /// CSV with one row per (grid point, server):
    /// `t,i,X,Xhat_or_Xcheck,Lhat,E,A,D,T` (server index 1-based).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["t", "i", "X", "Xhat_or_Xcheck", "Lhat", "E", "A", "D", "T"])?;
        for k in 0..self.grid.len() {
            for i in 0..self.servers() {
                w.write_record(&[
                    self.grid[k].to_string(),
                    (i + 1).to_string(),
                    self.x[i][k].to_string(),
                    self.x_scaled[i][k].to_string(),
                    self.l_hat[i][k].to_string(),
                    self.e[i][k].to_string(),
                    self.a[i][k].to_string(),
                    self.d[i][k].to_string(),
                    self.busy[i][k].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Sidecar describing a queue run.
#[derive(Debug, Serialize)]
pub struct QueueSidecar<'a> {
    pub params: &'a ModelParams,
    pub seed: u64,
    pub horizon: f64,
    pub initial: &'a InitialCondition,
    pub events: usize,
}

pub fn write_sidecar(log: &EventLog, path: &Path) -> Result<()> {
    let sidecar = QueueSidecar {
        params: &log.params,
        seed: log.seed,
        horizon: log.horizon,
        initial: &log.initial,
        events: log.len(),
    };
    let mut f = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, &sidecar)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// `M̂_i` on the event grid together with its optional quadratic
/// variation `n^{-1} A_i(t)`.
#[derive(Debug, Clone)]
pub struct MartingaleResidual {
    pub grid: Vec<f64>,
    pub values: Vec<Vec<f64>>,
    pub quadratic_variation: Vec<Vec<f64>>,
}

pub fn martingale_residual(log: &EventLog, mp: &ModelParams) -> Result<MartingaleResidual> {
    let path = scaled_path(log, mp, &mp.ic.regime)?;
    let n = mp.n as f64;
    Ok(MartingaleResidual {
        quadratic_variation: path
            .a
            .iter()
            .map(|a| a.iter().map(|&v| v as f64 / n).collect())
            .collect(),
        values: path.martingale,
        grid: path.grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitialSpec;
    use crate::service::ServiceLaw;

    fn params(n: u64, p: Vec<f64>) -> ModelParams {
        let k = p.len();
        ModelParams {
            n,
            lambda: vec![1.0; k],
            lambda_hat: vec![0.0; k],
            lambda0: 1.0,
            mu: vec![1.0; k],
            mu_hat: vec![0.0; k],
            p,
            service: vec![ServiceLaw::Exponential; k],
            ic: InitialSpec {
                regime: Regime::Ic0,
                x0: vec![0.0; k],
                residual: ResidualRule::Fresh,
            },
        }
    }

    /// One server with every arrival stream switched off.
    fn silent_single_server() -> ModelParams {
        let mut mp = params(1, vec![1.0]);
        mp.lambda_hat = vec![-1.0];
        mp.lambda0 = 0.0;
        mp
    }

    #[test]
    fn single_departure_hand_trace() {
        let mp = silent_single_server();
        let ic = InitialCondition {
            x0_minus: vec![1],
            z0: vec![0.5],
            empty: vec![],
            nonempty: vec![0],
        };
        let log = simulate_from(&mp, &ic, 2.0, 3).unwrap();
        assert_eq!(log.len(), 1);
        assert_eq!(log.times[0], 0.5);
        assert_eq!(log.kinds[0], EventKind::Departure { server: 0 });
        assert_eq!(log.queue_after(0), &[0]);
        assert_eq!(log.terminal.busy, vec![0.5]);
        let path = scaled_path(&log, &mp, &Regime::Ic0).unwrap();
        for (&t, &busy) in path.grid.iter().zip(&path.busy[0]) {
            assert_eq!(busy, t.min(0.5));
        }
        assert!((path.l_hat_at(0, 1.5) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn horizon_zero_without_fictitious_jobs_is_empty() {
        let mp = silent_single_server();
        let ic = InitialCondition {
            x0_minus: vec![4],
            z0: vec![0.1],
            empty: vec![],
            nonempty: vec![0],
        };
        let log = simulate_from(&mp, &ic, 0.0, 1).unwrap();
        assert!(log.is_empty());
        assert_eq!(log.terminal.x, vec![4]);
    }

    #[test]
    fn fictitious_job_departs_at_zero() {
        let mp = params(100, vec![0.75, 0.25]);
        let log = simulate(&mp, 0.01, 9).unwrap();
        assert_eq!(log.initial.x0_minus, vec![1, 1]);
        assert_eq!(log.initial.empty, vec![0, 1]);
        assert_eq!(log.times[0], 0.0);
        assert_eq!(log.times[1], 0.0);
        assert_eq!(log.queue_after(1), &[0, 0]);
        let path = scaled_path(&log, &mp, &Regime::Ic0).unwrap();
        assert_eq!(path.grid[0], 0.0);
        assert_eq!(path.x[0][0], 0);
        assert_eq!(path.u[0][0], 0.0);
    }

    #[test]
    fn initial_condition_from_params() {
        let mut mp = params(100, vec![0.5, 0.5]);
        mp.ic.x0 = vec![0.0, 0.5];
        let ic = InitialCondition::from_params(&mp, 1);
        assert_eq!(ic.x0_minus, vec![1, 5]);
        assert_eq!(ic.empty, vec![0]);
        assert!(ic.z0[1] > 0.0);
        assert!(ic.validate(2).is_ok());
        mp.ic.regime = Regime::ic_alpha();
        mp.ic.x0 = vec![0.0, -0.5];
        let ic = InitialCondition::from_params(&mp, 1);
        let alpha = 100f64.powf(0.75);
        assert_eq!(ic.x0_minus, vec![alpha.round() as u64, (alpha - 5.0).round() as u64]);
        let bad = InitialCondition {
            x0_minus: vec![2, 1],
            z0: vec![0.0, 0.0],
            empty: vec![0, 1],
            nonempty: vec![],
        };
        assert!(bad.validate(2).is_err());
    }

    #[test]
    fn scaling_arithmetic() {
        let mp = params(4, vec![1.0]);
        let ic = InitialCondition {
            x0_minus: vec![6],
            z0: vec![10.0],
            empty: vec![],
            nonempty: vec![0],
        };
        // Server busy throughout, X(0)=6: X̂ = 3 at t = 0, L̂ = 0.
        let mut quiet = mp.clone();
        quiet.lambda_hat = vec![-2.0];
        quiet.lambda0 = 0.0;
        let log = simulate_from(&quiet, &ic, 1.0, 1).unwrap();
        let path = scaled_path(&log, &quiet, &Regime::Ic0).unwrap();
        assert_eq!(path.x_scaled[0][0], 3.0);
        assert!(path.l_hat[0].iter().all(|&l| l == 0.0));

        let mut alpha = quiet.clone();
        alpha.ic.regime = Regime::IcAlpha { alpha_exponent: 0.75 };
        // α_4 = 4^{3/4} = 2√2; check centering arithmetic against a direct formula.
        let log = simulate_from(&alpha, &ic, 1.0, 1).unwrap();
        let path = scaled_path(&log, &alpha, &alpha.ic.regime).unwrap();
        assert!((path.x_scaled[0][0] - (6.0 - 4f64.powf(0.75)) / 2.0).abs() < 1e-15);
        assert!(scaled_path(&log, &alpha, &Regime::Ic0).is_err());
    }

    #[test]
    fn terminal_summary_matches_log() {
        let mp = params(50, vec![0.6, 0.3, 0.1]);
        let log = simulate(&mp, 1.0, 17).unwrap();
        let term = simulate_terminal(&mp, 1.0, 17).unwrap();
        assert_eq!(log.terminal, term);
        let path = scaled_path(&log, &mp, &Regime::Ic0).unwrap();
        let scaled = term.scaled(&mp);
        let last = path.grid.len() - 1;
        for i in 0..3 {
            assert!((scaled.x[i] - path.x_scaled[i][last]).abs() < 1e-12);
            assert!((scaled.l_hat[i] - path.l_hat[i][last]).abs() < 1e-9);
            assert!((scaled.martingale[i] - path.martingale[i][last]).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let mp = params(30, vec![0.75, 0.25]);
        let a = simulate(&mp, 1.0, 5).unwrap();
        let b = simulate(&mp, 1.0, 5).unwrap();
        let c = simulate(&mp, 1.0, 6).unwrap();
        assert_eq!(a.times, b.times);
        assert_eq!(a.x, b.x);
        assert_ne!(a.times, c.times);
    }

    #[test]
    fn single_server_martingale_is_centred_poisson() {
        let mp = params(25, vec![1.0]);
        let log = simulate(&mp, 1.0, 2).unwrap();
        let res = martingale_residual(&log, &mp).unwrap();
        let path = scaled_path(&log, &mp, &Regime::Ic0).unwrap();
        for k in 0..res.grid.len() {
            let expect = path.a0_hat[k] - res.grid[k];
            assert!((res.values[0][k] - expect).abs() < 1e-12);
            assert_eq!(res.quadratic_variation[0][k], path.a[0][k] as f64 / 25.0);
        }
    }

    #[test]
    fn no_lbs_arrivals_gives_deterministic_negative_residual() {
        let mut mp = params(1, vec![0.75, 0.25]);
        mp.lambda0 = 0.05;
        let (log, seed) = (0..)
            .map(|seed| (simulate(&mp, 1.0, seed).unwrap(), seed))
            .find(|(log, _)| log.terminal.a0 == 0)
            .unwrap();
        let res = martingale_residual(&log, &mp).unwrap();
        let last = res.grid.len() - 1;
        let term = simulate_terminal(&mp, 1.0, seed).unwrap();
        for i in 0..2 {
            assert!(res.values[i][last] < 0.0);
            assert_eq!(res.values[i][last], -0.05 * term.rank_integral[i]);
        }
    }
}
