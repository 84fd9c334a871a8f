use std::io::Write;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Host: restore and stage the rows of the next view.
    Forward,
    /// Host: deferred update with the previous iteration's gradients.
    LazyUpdate,
    /// Device: forward and backward passes.
    Render,
    GeoUpdate,
    Cull,
    /// Device to host copy of the appearance gradients.
    Handoff,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Worker {
    Device,
    Host,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub iteration: u64,
    pub stage: Stage,
    pub worker: Worker,
    /// Microseconds since the engine started.
    pub start_us: f64,
    pub end_us: f64,
    pub bytes: usize,
    /// Gradient staging buffer involved, if any.
    pub buffer: Option<u8>,
}

/// Shared event log; cheap to clone into worker jobs.
#[derive(Debug, Clone)]
pub struct Timeline {
    origin: Instant,
    enabled: bool,
    events: Arc<Mutex<Vec<Event>>>,
}

impl Timeline {
    pub fn new(enabled: bool) -> Self {
        Self {
            origin: Instant::now(),
            enabled,
            events: Arc::default(),
        }
    }

    pub fn now_us(&self) -> f64 {
        self.origin.elapsed().as_secs_f64() * 1e6
    }

    /// Runs `f` and records it as one event.
    pub fn span<R>(&self, iteration: u64, stage: Stage, worker: Worker, buffer: Option<u8>, f: impl FnOnce() -> (R, usize)) -> R {
        let start = self.now_us();
        let (r, bytes) = f();
        if self.enabled {
            let end = self.now_us();
            self.events.lock().unwrap().push(Event {
                iteration,
                stage,
                worker,
                start_us: start,
                end_us: end,
                bytes,
                buffer,
            });
        }
        r
    }

    pub fn events(&self) -> Vec<Event> {
        let mut e = self.events.lock().unwrap().clone();
        e.sort_by(|a, b| a.start_us.total_cmp(&b.start_us));
        e
    }

    pub fn clear(&self) {
        self.events.lock().unwrap().clear();
    }

    pub fn write_csv(&self, out: impl Write) -> Result<()> {
        write_events_csv(&self.events(), out)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.events())?)
    }
}

/// One CSV row per event, with a header.
pub fn write_events_csv(events: &[Event], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for e in events {
        w.serialize(e).map_err(|e| Error::Output(format!("timeline csv: {e}")))?;
    }
    w.flush().map_err(|e| Error::Output(format!("timeline csv: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn records_spans_in_start_order() {
        let t = Timeline::new(true);
        let x = t.span(3, Stage::Render, Worker::Device, None, || (7, 128));
        t.span(3, Stage::Handoff, Worker::Device, Some(1), || ((), 64));
        assert_eq!(x, 7);
        let e = t.events();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].stage, Stage::Render);
        assert!(e[0].end_us >= e[0].start_us && e[1].start_us >= e[0].start_us);
        let mut csv = Vec::new();
        t.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 3);
        assert!(text.lines().next().unwrap().starts_with("iteration,stage,worker"));
    }

    #[test]
    fn disabled_timeline_records_nothing() {
        let t = Timeline::new(false);
        t.span(0, Stage::Cull, Worker::Device, None, || ((), 0));
        assert!(t.events().is_empty());
    }
}
