//! Per-job progress log with live fan-out. The log holds the current run's
//! events so late subscribers can replay them before following live.

use std::sync::Mutex;

use tokio::sync::broadcast;

use crate::job::ProgressEvent;

#[derive(Debug)]
pub struct EventHub {
    log: Mutex<(u64, Vec<ProgressEvent>)>,
    live: broadcast::Sender<ProgressEvent>,
}

impl Default for EventHub {
    fn default() -> Self {
        Self {
            log: Mutex::new((0, Vec::new())),
            live: broadcast::channel(1024).0,
        }
    }
}

impl EventHub {
    /// Clears the log for a new run.
    pub fn start_run(&self, run: u64) {
        let mut log = self.log.lock().expect("event log");
        *log = (run, Vec::new());
    }

    /// Appends to the log when `event` belongs to the current run. Events of
    /// a superseded run are still broadcast so its followers see the end.
    pub fn publish(&self, event: ProgressEvent) {
        let mut log = self.log.lock().expect("event log");
        if log.0 == event.run {
            log.1.push(event.clone());
        }
        let _ = self.live.send(event);
    }

    /// Current run, its events so far, and a receiver for what follows.
    /// Publishing and subscribing share the log lock, so nothing is missed
    /// or seen twice.
    pub fn subscribe(&self) -> (u64, Vec<ProgressEvent>, broadcast::Receiver<ProgressEvent>) {
        let log = self.log.lock().expect("event log");
        (log.0, log.1.clone(), self.live.subscribe())
    }
}
