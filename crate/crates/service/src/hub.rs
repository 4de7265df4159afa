use std::sync::Mutex;

use futures::stream::{self, Stream, StreamExt};
use gridarena_core::orchestrator::EventRecord;
use tokio::sync::broadcast;

/// An orchestrator event with its position in the service-wide stream.
#[derive(Debug, Clone, PartialEq)]
pub struct HubEvent {
    /// 1-based, gap-free across all experiments served by this process.
    pub seq: u64,
    pub record: EventRecord,
}

/// Fan-out of every experiment's events. The full history is retained so
/// any subscriber can resume from the last sequence number it saw; live
/// delivery goes through a bounded broadcast channel, and a subscriber that
/// falls behind it is cut off rather than slowing publishers down.
pub struct EventHub {
    log: Mutex<Vec<HubEvent>>,
    tx: broadcast::Sender<HubEvent>,
}

impl EventHub {
    pub fn new(capacity: usize) -> Self {
        Self {
            log: Mutex::new(Vec::new()),
            tx: broadcast::channel(capacity.max(1)).0,
        }
    }

    pub fn publish(&self, records: impl IntoIterator<Item = EventRecord>) {
        let mut log = self.log.lock().expect("event hub poisoned");
        for record in records {
            let ev = HubEvent {
                seq: log.len() as u64 + 1,
                record,
            };
            log.push(ev.clone());
            let _ = self.tx.send(ev);
        }
    }

    pub fn last_seq(&self) -> u64 {
        self.log.lock().expect("event hub poisoned").len() as u64
    }

    /// Events with `seq > since`, already recorded.
    pub fn since(&self, since: u64) -> Vec<HubEvent> {
        let log = self.log.lock().expect("event hub poisoned");
        log.get(since.min(log.len() as u64) as usize..)
            .unwrap_or_default()
            .to_vec()
    }

    /// Backlog after `since`, then live events. Ends if the subscriber lags
    /// past the channel capacity; reconnecting with the last seen `seq`
    /// loses nothing.
    pub fn subscribe(&self, since: u64) -> impl Stream<Item = HubEvent> + Send + 'static {
        let (backlog, rx) = {
            let log = self.log.lock().expect("event hub poisoned");
            let rx = self.tx.subscribe();
            let from = since.min(log.len() as u64) as usize;
            (log[from..].to_vec(), rx)
        };
        let last = backlog.last().map_or(since, |e| e.seq);
        let live = stream::unfold((rx, last), |(mut rx, last)| async move {
            loop {
                match rx.recv().await {
                    Ok(ev) if ev.seq <= last => continue,
                    Ok(ev) => {
                        let seq = ev.seq;
                        return Some((ev, (rx, seq)));
                    }
                    Err(broadcast::error::RecvError::Lagged(n)) => {
                        log::warn!(
                            "event subscriber dropped after lagging {n} events (cursor {last})"
                        );
                        return None;
                    }
                    Err(broadcast::error::RecvError::Closed) => return None,
                }
            }
        });
        stream::iter(backlog).chain(live)
    }
}
