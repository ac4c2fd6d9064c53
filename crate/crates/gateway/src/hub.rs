//! Fan-out of pipeline events to WebSocket subscribers.
//!
//! Each subscriber owns a queue. Spectrogram columns are the only events
//! that may be dropped: once a subscriber has `COLUMN_BACKLOG` columns
//! waiting, further columns are discarded and a single `delay_warning` is
//! queued until the subscriber catches up.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex, Weak};

use auris_core::pipeline::{EventSink, PipelineEvent};
use tokio::sync::Notify;

pub const COLUMN_BACKLOG: usize = 64;

#[derive(Default)]
struct Queue {
    events: VecDeque<PipelineEvent>,
    columns: usize,
    /// Set after the first dropped column, cleared on drain.
    lagging: bool,
    dropped: u64,
}

#[derive(Default)]
pub struct Subscriber {
    queue: Mutex<Queue>,
    notify: Notify,
}

impl Subscriber {
    fn push(&self, event: &PipelineEvent) {
        let mut q = self.queue.lock().unwrap();
        if let PipelineEvent::SpectrogramColumn(col) = event {
            if q.columns >= COLUMN_BACKLOG {
                q.dropped += 1;
                if !q.lagging {
                    q.lagging = true;
                    let oldest = q
                        .events
                        .iter()
                        .find_map(|e| match e {
                            PipelineEvent::SpectrogramColumn(c) => Some(c.timestamp),
                            _ => None,
                        })
                        .unwrap_or(col.timestamp);
                    q.events.push_back(PipelineEvent::DelayWarning {
                        timestamp: col.timestamp,
                        lag_ms: (col.timestamp - oldest) * 1000.0,
                    });
                }
                drop(q);
                self.notify.notify_one();
                return;
            }
            q.columns += 1;
        }
        q.events.push_back(event.clone());
        drop(q);
        self.notify.notify_one();
    }

    /// Everything queued so far, oldest first.
    pub fn drain(&self) -> Vec<PipelineEvent> {
        let mut q = self.queue.lock().unwrap();
        q.columns = 0;
        q.lagging = false;
        q.events.drain(..).collect()
    }

    /// Waits until at least one event may be queued.
    pub async fn ready(&self) {
        self.notify.notified().await
    }

    pub fn dropped_columns(&self) -> u64 {
        self.queue.lock().unwrap().dropped
    }
}

#[derive(Default)]
pub struct Hub {
    subscribers: Mutex<Vec<Weak<Subscriber>>>,
}

impl Hub {
    pub fn subscribe(&self) -> Arc<Subscriber> {
        let sub = Arc::new(Subscriber::default());
        self.subscribers.lock().unwrap().push(Arc::downgrade(&sub));
        sub
    }

    pub fn subscriber_count(&self) -> usize {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| s.strong_count() > 0);
        subs.len()
    }
}

impl EventSink for Hub {
    fn emit(&self, event: PipelineEvent) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| match s.upgrade() {
            Some(sub) => {
                sub.push(&event);
                true
            }
            None => false,
        });
    }
}
