//! Event data model, stream formats, windowing, voxel grids and training-time
//! event corruption.

mod corrupt;
mod io;
mod voxel;

pub use corrupt::{degrade_online, OnlineDegradation, RectRanges};
pub use io::{parse_stream, read_stream, stream_to_csv, stream_to_evs1, write_stream, BINARY_MAGIC, CSV_HEADER};
pub use voxel::{to_voxel_grid, VoxelGrid, VoxelNormalization, DEFAULT_TIME_BINS};

use crate::error::{Error, Result};

/// Brightness change polarity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Positive => 1.0,
            Polarity::Negative => -1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Positive => 1,
            Polarity::Negative => -1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            1 => Some(Polarity::Positive),
            -1 => Some(Polarity::Negative),
            _ => None,
        }
    }

    pub fn flipped(self) -> Self {
        match self {
            Polarity::Positive => Polarity::Negative,
            Polarity::Negative => Polarity::Positive,
        }
    }
}

/// One polarity spike at pixel `(x, y)` and time `t` in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// Time-sorted events from a `width × height` sensor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    pub fn empty(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    /// Validates coordinates and stably sorts by timestamp.
    pub fn new(width: u16, height: u16, mut events: Vec<Event>) -> Result<Self> {
        if let Some((i, e)) = events
            .iter()
            .enumerate()
            .find(|(_, e)| e.x >= width || e.y >= height)
        {
            return Err(Error::invalid(format!(
                "event {i} at ({}, {}) outside {width}x{height} sensor",
                e.x, e.y
            )));
        }
        events.sort_by_key(|e| e.t);
        Ok(EventStream {
            width,
            height,
            events,
        })
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn first_time(&self) -> Option<u64> {
        self.events.first().map(|e| e.t)
    }

    pub fn last_time(&self) -> Option<u64> {
        self.events.last().map(|e| e.t)
    }

    /// Events with `t ∈ [t0, t0 + dt)`. Panics if `dt == 0`.
    pub fn window(&self, t0: u64, dt: u64) -> EventStream {
        assert!(dt > 0, "window duration must be positive");
        let t1 = t0.saturating_add(dt);
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = self.events.partition_point(|e| e.t < t1);
        EventStream {
            width: self.width,
            height: self.height,
            events: self.events[lo..hi].to_vec(),
        }
    }

    /// Consecutive `[t0 + i·dt, t0 + (i+1)·dt)` windows for `i < count`.
    pub fn windows(&self, t0: u64, dt: u64, count: usize) -> Vec<EventStream> {
        (0..count as u64).map(|i| self.window(t0 + i * dt, dt)).collect()
    }
}
