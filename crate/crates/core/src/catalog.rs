//! Event catalogs and the observation window they were recorded in.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single earthquake: occurrence time (days) and magnitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub magnitude: f64,
}

/// Time interval `[t_start, t_end]` and magnitude cutoff `m_cutoff`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub m_cutoff: f64,
}

impl ObservationWindow {
    pub fn new(t_start: f64, t_end: f64, m_cutoff: f64) -> Result<Self> {
        let window = Self {
            t_start,
            t_end,
            m_cutoff,
        };
        window.validate()?;
        Ok(window)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.m_cutoff.is_finite()) {
            return Err(Error::InvalidWindow("bounds must be finite".into()));
        }
        if self.t_start >= self.t_end {
            return Err(Error::InvalidWindow(format!(
                "t_start ({}) must be before t_end ({})",
                self.t_start, self.t_end
            )));
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    pub fn contains(&self, event: &Event) -> bool {
        event.time >= self.t_start && event.time <= self.t_end && event.magnitude >= self.m_cutoff
    }
}

/// How to treat events sharing the same time stamp.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum TiePolicy {
    #[default]
    Reject,
    /// Move the k-th member of a tie group back by `k * epsilon` days.
    Jitter(f64),
}

/// An immutable, time-ordered catalog of events inside its window.
///
/// Times are kept in the units they were supplied in; the window start acts
/// as the time origin for every integrated quantity.
#[derive(Debug, Clone, PartialEq)]
pub struct EventCatalog {
    events: Vec<Event>,
    window: ObservationWindow,
}

impl EventCatalog {
    /// Builds a catalog from events that must all lie inside `window`.
    /// Events are sorted; equal times are handled by `ties`.
    pub fn new(mut events: Vec<Event>, window: ObservationWindow, ties: TiePolicy) -> Result<Self> {
        window.validate()?;
        for e in &events {
            if !e.time.is_finite() || !e.magnitude.is_finite() {
                return Err(Error::Domain(format!("non-finite event {e:?}")));
            }
            if !window.contains(e) {
                return Err(Error::Domain(format!(
                    "event at t = {} with magnitude {} lies outside the window",
                    e.time, e.magnitude
                )));
            }
        }
        events.sort_by(|a, b| a.time.total_cmp(&b.time));
        resolve_ties(&mut events, ties, &window)?;
        Ok(Self { events, window })
    }

    /// An empty catalog (e.g. a simulation without immigrants).
    pub fn empty(window: ObservationWindow) -> Result<Self> {
        window.validate()?;
        Ok(Self {
            events: Vec::new(),
            window,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn window(&self) -> &ObservationWindow {
        &self.window
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    /// Events strictly before `t`, in time order.
    pub fn history_before(&self, t: f64) -> &[Event] {
        let end = self.events.partition_point(|e| e.time < t);
        &self.events[..end]
    }

    /// Delimited text with a `time,magnitude` header, readable by
    /// [`parse_catalog`]. Values use the shortest round-trip decimal form.
    pub fn to_delimited(&self) -> String {
        let mut out = String::with_capacity(24 * (self.events.len() + 1));
        out.push_str("time,magnitude\n");
        for e in &self.events {
            out.push_str(&format!("{},{}\n", e.time, e.magnitude));
        }
        out
    }
}

fn resolve_ties(events: &mut [Event], ties: TiePolicy, window: &ObservationWindow) -> Result<()> {
    let has_tie = events.windows(2).any(|w| w[0].time == w[1].time);
    if !has_tie {
        return Ok(());
    }
    let epsilon = match ties {
        TiePolicy::Reject => {
            let time = events
                .windows(2)
                .find(|w| w[0].time == w[1].time)
                .map(|w| w[0].time)
                .unwrap_or_default();
            return Err(Error::TiedTimes { time });
        }
        TiePolicy::Jitter(eps) if eps > 0.0 && eps.is_finite() => eps,
        TiePolicy::Jitter(eps) => {
            return Err(Error::InvalidParameter(format!("tie jitter must be positive, got {eps}")))
        }
    };
    let mut start = 0;
    while start < events.len() {
        let mut end = start + 1;
        while end < events.len() && events[end].time == events[start].time {
            end += 1;
        }
        for (rank, e) in events[start..end].iter_mut().enumerate() {
            e.time -= rank as f64 * epsilon;
        }
        start = end;
    }
    events.sort_by(|a, b| a.time.total_cmp(&b.time));
    if let Some(w) = events.windows(2).find(|w| w[0].time >= w[1].time) {
        return Err(Error::TiedTimes { time: w[0].time });
    }
    if events.first().is_some_and(|e| e.time < window.t_start) {
        return Err(Error::Domain("jitter moved an event before the window start".into()));
    }
    Ok(())
}

/// Result of [`parse_catalog`]: the catalog plus the number of rows dropped
/// for falling outside the window or below the magnitude cutoff.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedCatalog {
    pub catalog: EventCatalog,
    pub dropped: usize,
}

/// Parses a comma- or whitespace-delimited table whose header names `time`
/// and `magnitude` columns. Other columns are ignored and lines starting with
/// `#` are comments.
pub fn parse_catalog(text: &str, window: ObservationWindow, ties: TiePolicy) -> Result<ParsedCatalog> {
    window.validate()?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (header_line, header) = lines.next().ok_or(Error::EmptyCatalog)?;
    let comma = header.contains(',');
    let columns = split_fields(header, comma);
    let find = |name: &str| {
        columns
            .iter()
            .position(|c| c.trim_matches('"').eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Parse {
                line: header_line,
                message: format!("header has no `{name}` column"),
            })
    };
    let time_col = find("time")?;
    let mag_col = find("magnitude")?;

    let mut events = Vec::new();
    let mut dropped = 0;
    for (line_no, line) in lines {
        let values = split_fields(line, comma);
        let parse = |col: usize, name: &str| -> Result<f64> {
            let raw = values.get(col).ok_or_else(|| Error::Parse {
                line: line_no,
                message: format!("missing `{name}` field"),
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("`{name}` field {raw:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("`{name}` field {raw:?} is not finite"),
                });
            }
            Ok(v)
        };
        let event = Event {
            time: parse(time_col, "time")?,
            magnitude: parse(mag_col, "magnitude")?,
        };
        if window.contains(&event) {
            events.push(event);
        } else {
            dropped += 1;
        }
    }
    if events.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    Ok(ParsedCatalog {
        catalog: EventCatalog::new(events, window, ties)?,
        dropped,
    })
}

fn split_fields(line: &str, comma: bool) -> Vec<&str> {
    if comma {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}
