//! Age trajectories and the functionals computed from them.
//!
//! Every integral is evaluated in closed form per linear segment. Because
//! the age grows with slope 1 between resets, `∫ h(Δ(t)) dt` over a
//! segment equals `∫ h(y) dy` between the segment's end values.

use std::io;

use serde::Serialize;

use crate::sim::{EventKind, Trace};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("exponential penalty overflows at age {age}")]
    Overflow { age: f64 },
    #[error("penalty threshold must be finite, got {0}")]
    InvalidThreshold(f64),
}

/// A strict downward jump of the age at `time`, from the left limit
/// `before` to `after`, when the freshest delivered generation time
/// becomes `freshest`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Reset {
    pub time: f64,
    pub before: f64,
    pub after: f64,
    pub freshest: f64,
}

/// Piecewise-linear age process on `[0, horizon]` starting at `Δ(0) = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeTrajectory {
    resets: Vec<Reset>,
    horizon: f64,
}

impl AgeTrajectory {
    /// Builds `Δ(t) = t − max{s : (time, s) delivered by t}` from
    /// `(time, s)` pairs in any order. Pairs after `horizon` are ignored.
    pub fn from_deliveries(deliveries: impl IntoIterator<Item = (f64, f64)>, horizon: f64) -> Self {
        let mut events: Vec<(f64, f64)> = deliveries.into_iter().filter(|&(t, _)| t <= horizon).collect();
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut resets: Vec<Reset> = Vec::new();
        let mut freshest = 0.0_f64;
        for (time, s) in events {
            if s <= freshest {
                continue;
            }
            match resets.last_mut() {
                Some(last) if last.time == time => {
                    last.after = time - s;
                    last.freshest = s;
                }
                _ => resets.push(Reset {
                    time,
                    before: time - freshest,
                    after: time - s,
                    freshest: s,
                }),
            }
            freshest = s;
        }
        Self { resets, horizon }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn resets(&self) -> &[Reset] {
        &self.resets
    }

    /// `(t, Δ(t))` just after each reset.
    pub fn breakpoints(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.resets.iter().map(|r| (r.time, r.after))
    }

    /// Right-continuous value `Δ(t)`.
    pub fn value_at(&self, t: f64) -> f64 {
        let k = self.resets.partition_point(|r| r.time <= t);
        match k {
            0 => t,
            _ => t - self.resets[k - 1].freshest,
        }
    }

    /// Linear pieces `(start, Δ at start, length)` covering `[0, horizon]`.
    pub fn segments(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        let starts = std::iter::once((0.0, 0.0)).chain(self.breakpoints());
        let ends = self.resets.iter().map(|r| r.time).chain(std::iter::once(self.horizon));
        starts
            .zip(ends)
            .map(|((t0, y0), t1)| (t0, y0, t1 - t0))
            .filter(|&(_, _, len)| len > 0.0)
    }

    /// Two-column CSV `t,age` with both sides of every reset and the end
    /// point of the horizon.
    pub fn write_csv<W: io::Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "age"])?;
        w.write_record(["0", "0"])?;
        for r in &self.resets {
            w.write_record([r.time.to_string(), r.before.to_string()])?;
            w.write_record([r.time.to_string(), r.after.to_string()])?;
        }
        w.write_record([self.horizon.to_string(), self.value_at(self.horizon).to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Age process of a trace: resets at delivery times `c`.
pub fn age_trajectory(trace: &Trace) -> AgeTrajectory {
    AgeTrajectory::from_deliveries(
        trace.packets.iter().filter_map(|p| p.c.map(|c| (c, p.s))),
        trace.horizon(),
    )
}

/// Lower-bound process: resets at first service start `v` instead of `c`.
pub fn lower_bound_trajectory(trace: &Trace) -> AgeTrajectory {
    AgeTrajectory::from_deliveries(
        trace.packets.iter().filter_map(|p| p.v.map(|v| (v, p.s))),
        trace.horizon(),
    )
}

fn segment_integral(y0: f64, len: f64) -> f64 {
    y0 * len + 0.5 * len * len
}

/// Time-average age `(1/T) ∫_0^T Δ(t) dt`.
pub fn time_average_age(traj: &AgeTrajectory) -> f64 {
    traj.segments()
        .map(|(_, y0, len)| segment_integral(y0, len))
        .sum::<f64>()
        / traj.horizon
}

/// Mean of the left limits at the resets within the horizon, `None` if
/// there are none.
pub fn average_peak_age(traj: &AgeTrajectory) -> Option<f64> {
    if traj.resets.is_empty() {
        return None;
    }
    Some(traj.resets.iter().map(|r| r.before).sum::<f64>() / traj.resets.len() as f64)
}

/// Non-decreasing penalty applied to the age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Penalty {
    Identity,
    Floor,
    Exp,
    /// `1(x > threshold)`
    Indicator {
        threshold: f64,
    },
}

impl Penalty {
    pub fn apply(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => x,
            Self::Floor => x.floor(),
            Self::Exp => x.exp(),
            Self::Indicator { threshold } => f64::from(u8::from(x > threshold)),
        }
    }

    /// `∫_{y0}^{y0+len} h(y) dy`.
    fn integral(&self, y0: f64, len: f64) -> Result<f64, MetricError> {
        let y1 = y0 + len;
        Ok(match *self {
            Self::Identity => segment_integral(y0, len),
            Self::Floor => floor_antiderivative(y1) - floor_antiderivative(y0),
            Self::Exp => {
                let v = y1.exp() - y0.exp();
                if !v.is_finite() {
                    return Err(MetricError::Overflow { age: y1 });
                }
                v
            }
            Self::Indicator { threshold } => (y1 - y0.max(threshold)).max(0.0),
        })
    }
}

/// `∫_0^y ⌊x⌋ dx` for `y ≥ 0`.
fn floor_antiderivative(y: f64) -> f64 {
    let n = y.floor();
    n * (n - 1.0) / 2.0 + n * (y - n)
}

/// Average age penalty `(1/T) ∫_0^T h(Δ(t)) dt`.
pub fn penalty_average(traj: &AgeTrajectory, h: Penalty) -> Result<f64, MetricError> {
    if let Penalty::Indicator { threshold } = h {
        if !threshold.is_finite() {
            return Err(MetricError::InvalidThreshold(threshold));
        }
    }
    let mut total = 0.0;
    for (_, y0, len) in traj.segments() {
        total += h.integral(y0, len)?;
    }
    Ok(total / traj.horizon)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AgeSummary {
    pub time_avg: f64,
    pub avg_peak: Option<f64>,
    pub peak_count: usize,
}

pub fn summarize(traj: &AgeTrajectory) -> AgeSummary {
    AgeSummary {
        time_avg: time_average_age(traj),
        avg_peak: average_peak_age(traj),
        peak_count: traj.resets.len(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputDelay {
    pub delivered_count: usize,
    /// Mean of `c − a` over delivered packets; `None` without deliveries.
    pub avg_delay: Option<f64>,
    /// `N(t)` as `(time, value from time on)`, starting at `(0, 0)`.
    pub n_t: Vec<(f64, usize)>,
    pub horizon: f64,
}

impl ThroughputDelay {
    pub fn throughput(&self) -> f64 {
        self.delivered_count as f64 / self.horizon
    }

    pub fn in_system_at(&self, t: f64) -> usize {
        let k = self.n_t.partition_point(|&(time, _)| time <= t);
        self.n_t[k.saturating_sub(1)].1
    }
}

pub fn throughput_delay(trace: &Trace) -> ThroughputDelay {
    let delays: Vec<f64> = trace.delivered().map(|p| p.c.unwrap() - p.a).collect();
    let avg_delay = (!delays.is_empty()).then(|| delays.iter().sum::<f64>() / delays.len() as f64);

    let mut n_t = vec![(0.0, 0usize)];
    let mut n = 0usize;
    for e in &trace.event_log {
        match e.kind {
            EventKind::Arrival { .. } => n += 1,
            EventKind::Completion { .. } | EventKind::Drop { .. } => n -= 1,
            EventKind::Cancellation { .. } => continue,
        }
        match n_t.last_mut() {
            Some(last) if last.0 == e.time => last.1 = n,
            _ => n_t.push((e.time, n)),
        }
    }
    ThroughputDelay {
        delivered_count: delays.len(),
        avg_delay,
        n_t,
        horizon: trace.horizon(),
    }
}
