//! Simulated multi-worker substrate: channels, byte accounting, worker
//! placement and simulated time.

pub mod channel;
pub mod groups;
pub mod ledger;
pub mod message;
pub mod time;

pub use channel::{Fabric, DEFAULT_WATCHDOG};
pub use groups::{assign_groups, GroupMap, WorkerId};
pub use ledger::{
    link_class, write_comm_reports, CommLedger, CommReport, CommReportRow, EpochTraffic, LinkClass, LinkCounters,
    Tag, GIB,
};
pub use message::{Message, ID_BYTES};
pub use time::{bubble_fraction, bubble_from_events, read_trace, write_trace, CostModel, EventKind, TraceEvent, WorkerClock};
