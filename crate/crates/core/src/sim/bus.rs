//! Synchronous in-process message bus with a transcript of every send.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::Write;

use serde::{Serialize, Serializer};

use crate::data::{ItemId, UserId};
use crate::device::{GroupNotice, NeighborBroadcast};
use crate::error::{Error, Result};
use crate::metrics::LedgerRow;
use crate::numeric::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ActorId {
    Server,
    Device(UserId),
}

impl fmt::Display for ActorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActorId::Server => f.write_str("server"),
            ActorId::Device(u) => write!(f, "device:{u}"),
        }
    }
}

impl Serialize for ActorId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum MessageKind {
    EgoUpload,
    GroupNotify,
    NeighborBroadcast,
    ItemUpload,
    ItemFetch,
}

/// Transcript record of one delivered message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RoundMessage {
    pub round: u64,
    pub kind: MessageKind,
    pub src: ActorId,
    pub dst: ActorId,
    pub layer: Option<usize>,
    /// Number of embedding scalars carried.
    pub payload_params: usize,
}

/// Message contents. Item ids and rosters are metadata and carry no
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    ItemRequest(Vec<ItemId>),
    ItemRows(Vec<(ItemId, Embedding)>),
    Ego(Embedding),
    Notice(GroupNotice),
    Broadcast(NeighborBroadcast),
    /// Ego embedding and item embeddings, positives and fabricated merged.
    Upload { ego: Embedding, items: Vec<(ItemId, Embedding)> },
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Payload::ItemRequest(_) | Payload::ItemRows(_) => MessageKind::ItemFetch,
            Payload::Ego(_) => MessageKind::EgoUpload,
            Payload::Notice(_) => MessageKind::GroupNotify,
            Payload::Broadcast(_) => MessageKind::NeighborBroadcast,
            Payload::Upload { .. } => MessageKind::ItemUpload,
        }
    }

    pub fn scalar_count(&self) -> usize {
        let rows = |r: &[(ItemId, Embedding)]| r.iter().map(|(_, e)| e.dim()).sum::<usize>();
        match self {
            Payload::ItemRequest(_) => 0,
            Payload::ItemRows(r) => rows(r),
            Payload::Ego(e) => e.dim(),
            Payload::Notice(n) => rows(&n.fake_items),
            Payload::Broadcast(b) => b.vector.dim(),
            Payload::Upload { ego, items } => ego.dim() + rows(items),
        }
    }

    fn layer(&self) -> Option<usize> {
        match self {
            Payload::Broadcast(b) => Some(b.layer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Envelope {
    pub header: RoundMessage,
    pub payload: Payload,
}

#[derive(Debug, Default)]
pub struct Bus {
    round: u64,
    mailboxes: BTreeMap<ActorId, VecDeque<Envelope>>,
    transcript: Vec<RoundMessage>,
    sent: usize,
    received: usize,
}

impl Bus {
    pub fn new(round: u64) -> Self {
        Bus {
            round,
            ..Bus::default()
        }
    }

    pub fn send(&mut self, src: ActorId, dst: ActorId, payload: Payload) {
        let header = RoundMessage {
            round: self.round,
            kind: payload.kind(),
            src,
            dst,
            layer: payload.layer(),
            payload_params: payload.scalar_count(),
        };
        self.transcript.push(header.clone());
        self.sent += 1;
        self.mailboxes.entry(dst).or_default().push_back(Envelope { header, payload });
    }

    /// Takes every pending message for `dst`, in send order.
    pub fn drain(&mut self, dst: ActorId) -> Vec<Envelope> {
        let out: Vec<Envelope> = self.mailboxes.remove(&dst).map(Vec::from).unwrap_or_default();
        self.received += out.len();
        out
    }

    pub fn sent(&self) -> usize {
        self.sent
    }

    pub fn received(&self) -> usize {
        self.received
    }

    /// Fails unless every sent message has been received.
    pub fn finish(self) -> Result<Vec<RoundMessage>> {
        let pending: usize = self.mailboxes.values().map(VecDeque::len).sum();
        if pending > 0 || self.sent != self.received {
            return Err(Error::Protocol(format!(
                "{pending} undelivered messages at end of round {}",
                self.round
            )));
        }
        Ok(self.transcript)
    }
}

/// Per-round communication totals.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CommLedger {
    pub rows: Vec<LedgerRow>,
}

impl CommLedger {
    pub fn row_for(round: u64, messages: &[RoundMessage]) -> LedgerRow {
        let mut row = LedgerRow {
            round,
            ..LedgerRow::default()
        };
        for m in messages.iter().filter(|m| m.round == round) {
            let p = m.payload_params as u64;
            match (m.src, m.dst) {
                (ActorId::Device(_), ActorId::Server) => row.uplink += p,
                (ActorId::Server, ActorId::Device(_)) => row.downlink += p,
                (ActorId::Device(_), ActorId::Device(_)) => row.d2d += p,
                (ActorId::Server, ActorId::Server) => {}
            }
        }
        row
    }

    /// Rebuilds the ledger from a transcript.
    pub fn from_transcript(messages: &[RoundMessage]) -> Self {
        let rounds: std::collections::BTreeSet<u64> = messages.iter().map(|m| m.round).collect();
        CommLedger {
            rows: rounds.into_iter().map(|r| Self::row_for(r, messages)).collect(),
        }
    }

    pub fn push(&mut self, row: LedgerRow) {
        self.rows.push(row);
    }

    pub fn get(&self, round: u64) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.round == round)
    }

    pub fn write_csv(&self, mut out: impl Write) -> Result<()> {
        writeln!(out, "round,uplink,downlink,d2d")?;
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.round, r.uplink, r.downlink, r.d2d)?;
        }
        Ok(())
    }
}

pub fn write_transcript_jsonl(mut out: impl Write, messages: &[RoundMessage]) -> Result<()> {
    for m in messages {
        serde_json::to_writer(&mut out, m)?;
        writeln!(out)?;
    }
    Ok(())
}
