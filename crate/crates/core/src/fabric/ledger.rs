use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::groups::{GroupMap, WorkerId};

pub const GIB: f64 = (1u64 << 30) as f64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Tag {
    /// Stage-to-stage activations.
    ForwardEmb,
    /// Stage-to-stage gradients.
    BackwardGrad,
    /// Boundary embeddings between graph-parallel peers.
    GraphBoundaryFwd,
    /// Boundary gradients between graph-parallel peers.
    GraphBoundaryBwd,
    /// Barriers; never carries data.
    Control,
    /// Weight-gradient all-reduce.
    WeightSync,
}

impl Tag {
    pub const ALL: [Tag; 6] = [
        Tag::ForwardEmb,
        Tag::BackwardGrad,
        Tag::GraphBoundaryFwd,
        Tag::GraphBoundaryBwd,
        Tag::Control,
        Tag::WeightSync,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tag::ForwardEmb => "ForwardEmb",
            Tag::BackwardGrad => "BackwardGrad",
            Tag::GraphBoundaryFwd => "GraphBoundaryFwd",
            Tag::GraphBoundaryBwd => "GraphBoundaryBwd",
            Tag::Control => "Control",
            Tag::WeightSync => "WeightSync",
        }
    }

    pub fn is_pipeline(self) -> bool {
        matches!(self, Tag::ForwardEmb | Tag::BackwardGrad)
    }

    pub fn is_graph(self) -> bool {
        matches!(self, Tag::GraphBoundaryFwd | Tag::GraphBoundaryBwd)
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkClass {
    IntraNode,
    InterNode,
}

impl LinkClass {
    pub fn name(self) -> &'static str {
        match self {
            LinkClass::IntraNode => "intra",
            LinkClass::InterNode => "inter",
        }
    }
}

/// Traffic on one `(src, dst, tag)` link.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub messages_sent: u64,
    pub messages_received: u64,
    /// Payload bytes: 4 per value. This is the communication volume.
    pub data_sent: u64,
    pub data_received: u64,
    /// Vertex-id framing: 8 per id, kept apart from the volume.
    pub framing_sent: u64,
    pub framing_received: u64,
}

pub type LinkKey = (WorkerId, WorkerId, Tag);

/// Traffic of one closed epoch.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochTraffic {
    pub epoch: u64,
    pub links: BTreeMap<(WorkerId, WorkerId, Tag), LinkCounters>,
}

impl EpochTraffic {
    pub fn data_bytes(&self, tag: Tag) -> u64 {
        self.links
            .iter()
            .filter(|((_, _, t), _)| *t == tag)
            .map(|(_, c)| c.data_sent)
            .sum()
    }

    pub fn framing_bytes(&self) -> u64 {
        self.links.values().map(|c| c.framing_sent).sum()
    }

    pub fn total_data_bytes(&self) -> u64 {
        self.links.values().map(|c| c.data_sent).sum()
    }

    /// `ForwardEmb + BackwardGrad`.
    pub fn pipeline_bytes(&self) -> u64 {
        self.data_bytes(Tag::ForwardEmb) + self.data_bytes(Tag::BackwardGrad)
    }

    /// `GraphBoundaryFwd + GraphBoundaryBwd`.
    pub fn graph_bytes(&self) -> u64 {
        self.data_bytes(Tag::GraphBoundaryFwd) + self.data_bytes(Tag::GraphBoundaryBwd)
    }
}

/// Byte accounting for every link, with per-epoch snapshots.
#[derive(Clone, Debug, Default)]
pub struct CommLedger {
    open: Option<EpochTraffic>,
    closed: Vec<EpochTraffic>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_epoch(&mut self, epoch: u64) -> Result<()> {
        if let Some(o) = &self.open {
            return Err(Error::invalid(format!("epoch {} is still open", o.epoch)));
        }
        self.open = Some(EpochTraffic {
            epoch,
            links: BTreeMap::new(),
        });
        Ok(())
    }

    pub fn is_open(&self) -> bool {
        self.open.is_some()
    }

    fn entry(&mut self, key: LinkKey) -> &mut LinkCounters {
        // Traffic outside an epoch lands in an implicit epoch that is
        // closed like any other.
        let open = self.open.get_or_insert_with(EpochTraffic::default);
        open.links.entry(key).or_default()
    }

    pub(crate) fn record_send(&mut self, key: LinkKey, data: u64, framing: u64) {
        let c = self.entry(key);
        c.messages_sent += 1;
        c.data_sent += data;
        c.framing_sent += framing;
    }

    pub(crate) fn record_recv(&mut self, key: LinkKey, data: u64, framing: u64) {
        let c = self.entry(key);
        c.messages_received += 1;
        c.data_received += data;
        c.framing_received += framing;
    }

    /// Closes the open epoch after checking that everything sent on every
    /// link was also received.
    pub fn end_epoch(&mut self) -> Result<&EpochTraffic> {
        let open = self
            .open
            .take()
            .ok_or_else(|| Error::invalid("no open epoch to close"))?;
        for (&(src, dst, tag), c) in &open.links {
            if c.data_sent != c.data_received
                || c.framing_sent != c.framing_received
                || c.messages_sent != c.messages_received
            {
                let detail = format!(
                    "link {src}->{dst} {tag}: sent {} msgs / {} bytes, received {} msgs / {} bytes",
                    c.messages_sent, c.data_sent, c.messages_received, c.data_received
                );
                self.open = Some(open);
                return Err(Error::invalid(format!("conservation violated at epoch close: {detail}")));
            }
        }
        self.closed.push(open);
        Ok(self.closed.last().expect("just pushed"))
    }

    pub fn epochs(&self) -> &[EpochTraffic] {
        &self.closed
    }

    pub fn epoch(&self, epoch: u64) -> Option<&EpochTraffic> {
        self.closed.iter().find(|e| e.epoch == epoch)
    }

    /// Per-tag and per-link-class totals of a closed epoch.
    pub fn report(&self, epoch: u64, groups: &GroupMap) -> Result<CommReport> {
        if self.open.as_ref().is_some_and(|o| o.epoch == epoch) {
            return Err(Error::invalid(format!("epoch {epoch} is still open")));
        }
        let traffic = self
            .epoch(epoch)
            .ok_or_else(|| Error::invalid(format!("no closed epoch {epoch}")))?;
        Ok(CommReport::from_traffic(traffic, groups))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommReportRow {
    pub epoch: u64,
    pub tag: Tag,
    pub link_class: LinkClass,
    pub bytes: u64,
}

impl CommReportRow {
    pub fn gib(&self) -> f64 {
        self.bytes as f64 / GIB
    }
}

/// Data bytes of one epoch broken down by tag and link class; every
/// combination is listed, including zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommReport {
    pub epoch: u64,
    pub rows: Vec<CommReportRow>,
    pub framing_bytes: u64,
}

impl CommReport {
    pub fn from_traffic(traffic: &EpochTraffic, groups: &GroupMap) -> Self {
        let mut rows = Vec::new();
        for tag in Tag::ALL {
            for class in [LinkClass::IntraNode, LinkClass::InterNode] {
                let bytes = traffic
                    .links
                    .iter()
                    .filter(|((s, d, t), _)| *t == tag && link_class(groups, *s, *d) == class)
                    .map(|(_, c)| c.data_sent)
                    .sum();
                rows.push(CommReportRow {
                    epoch: traffic.epoch,
                    tag,
                    link_class: class,
                    bytes,
                });
            }
        }
        Self {
            epoch: traffic.epoch,
            rows,
            framing_bytes: traffic.framing_bytes(),
        }
    }

    pub fn total(&self) -> u64 {
        self.rows.iter().map(|r| r.bytes).sum()
    }

    pub fn by_tag(&self, tag: Tag) -> u64 {
        self.rows.iter().filter(|r| r.tag == tag).map(|r| r.bytes).sum()
    }

    pub fn by_class(&self, class: LinkClass) -> u64 {
        self.rows.iter().filter(|r| r.link_class == class).map(|r| r.bytes).sum()
    }

    /// Tag totals, link-class totals and the grand total agree.
    pub fn is_consistent(&self) -> bool {
        let t: u64 = Tag::ALL.iter().map(|&t| self.by_tag(t)).sum();
        let c = self.by_class(LinkClass::IntraNode) + self.by_class(LinkClass::InterNode);
        t == self.total() && c == self.total()
    }
}

pub fn link_class(groups: &GroupMap, src: WorkerId, dst: WorkerId) -> LinkClass {
    if groups.same_node(src, dst) {
        LinkClass::IntraNode
    } else {
        LinkClass::InterNode
    }
}

pub const COMM_REPORT_HEADER: &str = "epoch,tag,link_class,bytes,gib";

/// Writes reports as CSV: `epoch,tag,link_class,bytes,gib`.
pub fn write_comm_reports(path: &Path, reports: &[CommReport]) -> Result<()> {
    let mut out = String::new();
    out.push_str(COMM_REPORT_HEADER);
    out.push('\n');
    for rep in reports {
        for r in &rep.rows {
            out.push_str(&format!(
                "{},{},{},{},{:.9}\n",
                r.epoch,
                r.tag,
                r.link_class.name(),
                r.bytes,
                r.gib()
            ));
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
