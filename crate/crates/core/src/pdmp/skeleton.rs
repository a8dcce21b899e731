use std::path::Path;

use nalgebra::DVector;
use serde::Serialize;

use crate::error::{check_dim, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", content = "component", rename_all = "snake_case")]
pub enum EventKind {
    Initial,
    /// Zig-Zag velocity flip of a (zero-based) component.
    Flip(usize),
    Bounce,
    Refresh,
}

impl EventKind {
    pub fn label(&self) -> String {
        match self {
            Self::Initial => "initial".into(),
            Self::Flip(i) => format!("flip({})", i + 1),
            Self::Bounce => "bounce".into(),
            Self::Refresh => "refresh".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub position: DVector<f64>,
    pub velocity: DVector<f64>,
    pub kind: EventKind,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SamplerStats {
    /// Candidate events that reached the thinning test.
    pub candidates: u64,
    pub accepted: u64,
    pub corrections: u64,
    pub refreshes: u64,
    /// Largest correction count seen within a single attempt.
    pub max_corrections_per_attempt: u64,
    /// Largest `λ̃ / λ̄ᶜ` seen at a thinning test; at most 1 by construction.
    pub max_ratio: f64,
    pub aborted: Option<String>,
}

impl SamplerStats {
    pub fn acceptance_ratio(&self) -> f64 {
        if self.candidates == 0 {
            1.0
        } else {
            self.accepted as f64 / self.candidates as f64
        }
    }
}

/// A piecewise-linear trajectory: events plus the final time.
#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    pub events: Vec<Event>,
    pub final_time: f64,
    /// `(time, cumulative model evaluations)` after every committed advance.
    pub cost_trace: Vec<(f64, u64)>,
    pub stats: SamplerStats,
}

impl Skeleton {
    pub fn new(position: DVector<f64>, velocity: DVector<f64>) -> Self {
        Self {
            events: vec![Event {
                time: 0.0,
                position,
                velocity,
                kind: EventKind::Initial,
            }],
            final_time: 0.0,
            cost_trace: Vec::new(),
            stats: SamplerStats::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.events[0].position.len()
    }

    pub fn push(&mut self, time: f64, position: DVector<f64>, velocity: DVector<f64>, kind: EventKind) {
        self.events.push(Event {
            time,
            position,
            velocity,
            kind,
        });
    }

    /// Index of the segment active at `t`: the last event with `time ≤ t`.
    fn segment(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t).saturating_sub(1)
    }

    pub fn position_at(&self, t: f64) -> DVector<f64> {
        let e = &self.events[self.segment(t)];
        &e.position + &e.velocity * (t - e.time)
    }

    /// Exact time averages of `ξ` and `ξ²` over `[start, end]`; returns `(mean, variance)`.
    pub fn moments_between(&self, start: f64, end: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        if !(end > start) || start < 0.0 || end > self.final_time * (1.0 + 1e-12) + 1e-300 {
            return Err(Error::InvalidArgument(format!(
                "empty or invalid averaging window [{start}, {end}] for final time {}",
                self.final_time
            )));
        }
        let d = self.dim();
        let mut first = DVector::<f64>::zeros(d);
        let mut second = DVector::<f64>::zeros(d);
        let mut k = self.segment(start);
        loop {
            let e = &self.events[k];
            let t0 = e.time.max(start);
            let t1 = self.events.get(k + 1).map_or(end, |n| n.time.min(end));
            if t1 > t0 {
                let h = t1 - t0;
                for i in 0..d {
                    let a = e.position[i] + e.velocity[i] * (t0 - e.time);
                    let b = a + e.velocity[i] * h;
                    first[i] += 0.5 * h * (a + b);
                    second[i] += h * (a * a + a * b + b * b) / 3.0;
                }
            }
            if t1 >= end || k + 1 == self.events.len() {
                break;
            }
            k += 1;
        }
        let w = end - start;
        let mean = first / w;
        let var = DVector::from_fn(d, |i, _| (second[i] / w - mean[i] * mean[i]).max(0.0));
        Ok((mean, var))
    }

    pub fn moments(&self, burn_in: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        self.moments_between(burn_in, self.final_time)
    }

    /// Positions at `start + j (end − start)/n` for `j = 1..=n`.
    pub fn discretize_between(&self, n: usize, start: f64, end: f64) -> Result<Vec<DVector<f64>>> {
        if n == 0 {
            return Err(Error::InvalidArgument("need at least one sample".into()));
        }
        let h = (end - start) / n as f64;
        let mut out = Vec::with_capacity(n);
        let mut k = self.segment(start);
        for j in 1..=n {
            let t = if j == n { end } else { start + j as f64 * h };
            while k + 1 < self.events.len() && self.events[k + 1].time <= t {
                k += 1;
            }
            let e = &self.events[k];
            out.push(&e.position + &e.velocity * (t - e.time));
        }
        Ok(out)
    }

    pub fn discretize(&self, n: usize, burn_in: f64) -> Result<Vec<DVector<f64>>> {
        self.discretize_between(n, burn_in, self.final_time)
    }

    /// Time at which the cumulative evaluation count last stood at or below `evals`.
    pub fn time_at_evaluations(&self, evals: u64) -> f64 {
        let idx = self.cost_trace.partition_point(|&(_, n)| n <= evals);
        if idx == 0 {
            0.0
        } else {
            self.cost_trace[idx - 1].0
        }
    }

    /// CSV rows `k, t, kind, ξ_1..ξ_d, v_1..v_d`.
    pub fn write_csv<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        let d = self.dim();
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["k".to_string(), "t".into(), "kind".into()];
        header.extend((1..=d).map(|i| format!("xi_{i}")));
        header.extend((1..=d).map(|i| format!("v_{i}")));
        w.write_record(&header)?;
        for (k, e) in self.events.iter().enumerate() {
            check_dim(d, e.position.len())?;
            let mut row = vec![k.to_string(), format!("{:e}", e.time), e.kind.label()];
            row.extend(e.position.iter().map(|x| format!("{x:e}")));
            row.extend(e.velocity.iter().map(|x| format!("{x:e}")));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
