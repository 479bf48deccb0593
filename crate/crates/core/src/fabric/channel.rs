use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::fabric::groups::{GroupMap, WorkerId};
use crate::fabric::ledger::{CommLedger, EpochTraffic, LinkKey, Tag};
use crate::fabric::message::Message;
use crate::real::Real;

pub const DEFAULT_WATCHDOG: Duration = Duration::from_secs(60);

struct State<T> {
    queues: HashMap<LinkKey, VecDeque<Message<T>>>,
    closed: Vec<bool>,
    waiting: BTreeMap<WorkerId, (WorkerId, Tag)>,
    ledger: CommLedger,
}

/// Message channels between all workers: one FIFO per `(src, dst, tag)`,
/// with every send and receive accounted in a shared ledger.
///
/// Usable from many threads (blocking [`Fabric::recv`]) or from a single
/// scheduler (non-blocking [`Fabric::try_recv`]).
pub struct Fabric<T> {
    groups: GroupMap,
    state: Mutex<State<T>>,
    arrived: Condvar,
    watchdog: Duration,
}

impl<T: Real> Fabric<T> {
    pub fn new(groups: GroupMap) -> Self {
        Self::with_watchdog(groups, DEFAULT_WATCHDOG)
    }

    pub fn with_watchdog(groups: GroupMap, watchdog: Duration) -> Self {
        let m = groups.num_workers();
        Self {
            groups,
            state: Mutex::new(State {
                queues: HashMap::new(),
                closed: vec![false; m],
                waiting: BTreeMap::new(),
                ledger: CommLedger::new(),
            }),
            arrived: Condvar::new(),
            watchdog,
        }
    }

    pub fn groups(&self) -> &GroupMap {
        &self.groups
    }

    pub fn num_workers(&self) -> usize {
        self.groups.num_workers()
    }

    fn lock(&self) -> MutexGuard<'_, State<T>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn send(&self, msg: Message<T>) -> Result<()> {
        let m = self.num_workers();
        if msg.src >= m || msg.dst >= m {
            return Err(Error::invalid(format!("worker id out of range: {} -> {}", msg.src, msg.dst)));
        }
        if msg.src == msg.dst {
            return Err(Error::invalid(format!("worker {} cannot send to itself", msg.src)));
        }
        let mut st = self.lock();
        if st.closed[msg.src] {
            return Err(Error::Closed(format!("worker {} already closed its channels", msg.src)));
        }
        let key = (msg.src, msg.dst, msg.tag);
        st.ledger.record_send(key, msg.data_bytes(), msg.framing_bytes());
        st.queues.entry(key).or_default().push_back(msg);
        drop(st);
        self.arrived.notify_all();
        Ok(())
    }

    fn pop(st: &mut State<T>, dst: WorkerId, src: WorkerId, tag: Tag) -> Result<Option<Message<T>>> {
        let key = (src, dst, tag);
        match st.queues.get_mut(&key).and_then(VecDeque::pop_front) {
            Some(msg) => {
                st.ledger.record_recv(key, msg.data_bytes(), msg.framing_bytes());
                Ok(Some(msg))
            }
            None if st.closed[src] => Err(Error::Closed(format!("{tag} from worker {src} to {dst}"))),
            None => Ok(None),
        }
    }

    /// Next message on `(src, dst, tag)` if one is queued.
    pub fn try_recv(&self, dst: WorkerId, src: WorkerId, tag: Tag) -> Result<Option<Message<T>>> {
        Self::pop(&mut self.lock(), dst, src, tag)
    }

    /// Blocks until a message arrives on `(src, dst, tag)`. Fails with
    /// [`Error::Closed`] once `src` has closed and the queue is drained,
    /// and with [`Error::Deadlock`] after the watchdog timeout.
    pub fn recv(&self, dst: WorkerId, src: WorkerId, tag: Tag) -> Result<Message<T>> {
        let deadline = Instant::now() + self.watchdog;
        let mut st = self.lock();
        loop {
            if let Some(msg) = Self::pop(&mut st, dst, src, tag)? {
                st.waiting.remove(&dst);
                return Ok(msg);
            }
            let now = Instant::now();
            if now >= deadline {
                let report = Self::describe_waiting(&st);
                st.waiting.remove(&dst);
                return Err(Error::Deadlock(format!(
                    "worker {dst} waited {:?} for {tag} from worker {src}; blocked: {report}",
                    self.watchdog
                )));
            }
            st.waiting.insert(dst, (src, tag));
            st = self
                .arrived
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    fn describe_waiting(st: &State<T>) -> String {
        if st.waiting.is_empty() {
            return "none".to_string();
        }
        st.waiting
            .iter()
            .map(|(w, (src, tag))| format!("worker {w} <- worker {src} ({tag})"))
            .collect::<Vec<_>>()
            .join(", ")
    }

    /// Marks `worker` as finished sending; receivers see end-of-stream once
    /// its queues drain.
    pub fn close(&self, worker: WorkerId) {
        self.lock().closed[worker] = true;
        self.arrived.notify_all();
    }

    pub fn begin_epoch(&self, epoch: u64) -> Result<()> {
        self.lock().ledger.begin_epoch(epoch)
    }

    /// Closes the ledger epoch, verifying conservation on every link.
    pub fn end_epoch(&self) -> Result<EpochTraffic> {
        self.lock().ledger.end_epoch().cloned()
    }

    pub fn ledger(&self) -> CommLedger {
        self.lock().ledger.clone()
    }

    /// Number of messages still queued anywhere.
    pub fn pending(&self) -> usize {
        self.lock().queues.values().map(VecDeque::len).sum()
    }
}
