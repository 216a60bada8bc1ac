use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::distributions::{RngStream, Sampler, StreamPurpose};
use crate::error::SimError;
use crate::policies::Policy;

use super::{Packet, SystemConfig, SystemState, Trace};

/// Source of service times, drawn when a replica starts service.
/// `start_index` counts previous starts on the same server.
pub trait ServiceTimes {
    fn draw(&mut self, server: usize, start_index: u64) -> f64;
}

/// One independent stream per server, consumed in start order, so the
/// n-th service on a server gets the same draw under every policy.
#[derive(Debug, Clone)]
pub struct StreamServiceTimes {
    sampler: Sampler,
    streams: Vec<RngStream>,
}

impl StreamServiceTimes {
    pub fn new(config: &SystemConfig) -> Self {
        Self {
            sampler: config.service.sampler(),
            streams: (0..config.m)
                .map(|i| RngStream::new(config.seed, StreamPurpose::Service, i as u64))
                .collect(),
        }
    }
}

impl ServiceTimes for StreamServiceTimes {
    fn draw(&mut self, server: usize, start_index: u64) -> f64 {
        let stream = &mut self.streams[server];
        debug_assert_eq!(stream.draws(), start_index);
        self.sampler.draw(stream)
    }
}

impl<F: FnMut(usize, u64) -> f64> ServiceTimes for F {
    fn draw(&mut self, server: usize, start_index: u64) -> f64 {
        self(server, start_index)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pending {
    time: f64,
    server: usize,
    token: u64,
}

impl Eq for Pending {}

impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.server.cmp(&other.server))
            .then(self.token.cmp(&other.token))
    }
}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Keep the full event log in the trace. Packet times and counters are
    /// recorded regardless.
    pub log_events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { log_events: true }
    }
}

/// Runs `policy` over `workload` with per-server service streams seeded
/// from `config.seed`.
pub fn run_simulation(config: &SystemConfig, policy: &mut dyn Policy, workload: &[Packet]) -> Result<Trace, SimError> {
    let mut service = StreamServiceTimes::new(config);
    run_simulation_with(config, policy, workload, &mut service, RunOptions::default())
}

pub fn run_simulation_with(
    config: &SystemConfig,
    policy: &mut dyn Policy,
    workload: &[Packet],
    service: &mut dyn ServiceTimes,
    options: RunOptions,
) -> Result<Trace, SimError> {
    let config = config.clone().validated()?;
    for (i, p) in workload.iter().enumerate() {
        if p.id.index() != i {
            return Err(SimError::violation(
                0.0,
                format!("workload out of id order at {}", p.id),
            ));
        }
        if !(p.s >= 0.0 && p.a >= p.s) {
            return Err(SimError::violation(0.0, format!("packet {} has a < s or s < 0", p.id)));
        }
        if i > 0 && p.s < workload[i - 1].s {
            return Err(SimError::violation(
                0.0,
                format!("generation times decrease at {}", p.id),
            ));
        }
    }

    let mut arrivals: Vec<usize> = (0..workload.len()).collect();
    arrivals.sort_by(|&x, &y| workload[x].a.total_cmp(&workload[y].a).then(x.cmp(&y)));
    let mut next_arrival = arrivals.into_iter().peekable();

    let mut state = SystemState::new(config.m, config.r, workload.to_vec());
    state.set_event_logging(options.log_events);
    let mut starts = vec![0u64; config.m];
    let mut heap: BinaryHeap<Reverse<Pending>> = BinaryHeap::new();

    loop {
        while let Some(Reverse(top)) = heap.peek() {
            let live = state.token(top.server) == top.token && !state.servers()[top.server].is_idle();
            if live {
                break;
            }
            heap.pop();
        }
        let completion_at = heap.peek().map(|Reverse(p)| p.time);
        let arrival_at = next_arrival
            .peek()
            .map(|&i| workload[i].a)
            .filter(|&a| a <= config.horizon);
        let take_completion = match (completion_at, arrival_at) {
            (None, None) => break,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(c), Some(a)) => c <= a,
        };
        if take_completion {
            let Reverse(p) = heap.pop().expect("peeked");
            if p.time > config.horizon {
                break;
            }
            state.complete(policy, p.server, p.time)?;
        } else {
            let idx = next_arrival.next().expect("peeked");
            state.arrive(policy, workload[idx].id, workload[idx].a)?;
        }
        schedule(&mut state, &mut heap, &mut starts, service)?;
    }
    Ok(state.into_trace(config))
}

fn schedule(
    state: &mut SystemState,
    heap: &mut BinaryHeap<Reverse<Pending>>,
    starts: &mut [u64],
    service: &mut dyn ServiceTimes,
) -> Result<(), SimError> {
    for server in state.take_started() {
        let slot = &state.servers()[server];
        let Some(start) = slot.service_start else {
            // started then preempted within the same handler
            continue;
        };
        if slot.scheduled_completion.is_some() {
            continue;
        }
        let duration = service.draw(server, starts[server]);
        starts[server] += 1;
        if !(duration.is_finite() && duration >= 0.0) {
            return Err(SimError::violation(
                start,
                format!("service time {duration} on server {server}"),
            ));
        }
        let at = start + duration;
        state.set_scheduled_completion(server, at);
        heap.push(Reverse(Pending {
            time: at,
            server,
            token: state.token(server),
        }));
    }
    Ok(())
}
