//! Messages exchanged between agents, their wire frames, and per-agent
//! inboxes.
//!
//! Frame layout (little endian): `kind: u8, src: u32, dst: u32,
//! layer: u32, rows: u64, cols: u64, payload_count: u8`, then
//! `payload_count` row-major `rows × cols` blocks of `f64`.

use std::collections::BTreeMap;
use std::io::{self, Read};

use serde::Serialize;

use crate::admm::problem::Community;
use crate::dense::DenseMatrix;
use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[repr(u8)]
pub enum MessageKind {
    /// `p_{l,r→m} = Ã_{m,r} Z_{l,r} W_{l+1}`.
    FirstOrder = 0,
    /// `[s¹, s²]` forwarded by `r` to `m`.
    SecondOrder = 1,
    WeightBroadcast = 2,
    ZReport = 3,
    /// First-order product of a trial activation during the line search.
    Probe = 4,
}

impl MessageKind {
    pub fn name(self) -> &'static str {
        match self {
            MessageKind::FirstOrder => "first-order",
            MessageKind::SecondOrder => "second-order",
            MessageKind::WeightBroadcast => "weight-broadcast",
            MessageKind::ZReport => "z-report",
            MessageKind::Probe => "probe",
        }
    }

    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            0 => MessageKind::FirstOrder,
            1 => MessageKind::SecondOrder,
            2 => MessageKind::WeightBroadcast,
            3 => MessageKind::ZReport,
            4 => MessageKind::Probe,
            other => return Err(Error::Frame(format!("unknown message kind {other}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Message {
    pub kind: MessageKind,
    pub src: usize,
    pub dst: usize,
    pub layer: usize,
    /// One or two blocks of identical shape.
    pub payload: Vec<DenseMatrix>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FrameHeader {
    pub kind: MessageKind,
    pub src: u32,
    pub dst: u32,
    pub layer: u32,
    pub rows: u64,
    pub cols: u64,
    pub payload_count: u8,
}

impl FrameHeader {
    pub fn payload_bytes(&self) -> usize {
        self.payload_count as usize * self.rows as usize * self.cols as usize * 8
    }

    fn parse(b: &[u8; HEADER_LEN]) -> Result<Self> {
        let u32_at = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().unwrap());
        Ok(Self {
            kind: MessageKind::from_u8(b[0])?,
            src: u32_at(1),
            dst: u32_at(5),
            layer: u32_at(9),
            rows: u64_at(13),
            cols: u64_at(21),
            payload_count: b[29],
        })
    }
}

fn narrow(v: usize, what: &str) -> Result<u32> {
    u32::try_from(v).map_err(|_| Error::Frame(format!("{what} {v} does not fit in 32 bits")))
}

impl Message {
    pub fn new(kind: MessageKind, src: usize, dst: usize, layer: usize, payload: Vec<DenseMatrix>) -> Self {
        Self {
            kind,
            src,
            dst,
            layer,
            payload,
        }
    }

    pub fn header(&self) -> Result<FrameHeader> {
        let first = self
            .payload
            .first()
            .ok_or_else(|| Error::Frame("message without payload".into()))?;
        if self.payload.iter().any(|p| p.shape() != first.shape()) {
            return Err(Error::Frame("payload blocks differ in shape".into()));
        }
        let payload_count = u8::try_from(self.payload.len())
            .map_err(|_| Error::Frame("too many payload blocks".into()))?;
        Ok(FrameHeader {
            kind: self.kind,
            src: narrow(self.src, "src")?,
            dst: narrow(self.dst, "dst")?,
            layer: narrow(self.layer, "layer")?,
            rows: first.rows() as u64,
            cols: first.cols() as u64,
            payload_count,
        })
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) -> Result<()> {
        let h = self.header()?;
        out.reserve(HEADER_LEN + h.payload_bytes());
        out.push(h.kind as u8);
        out.extend_from_slice(&h.src.to_le_bytes());
        out.extend_from_slice(&h.dst.to_le_bytes());
        out.extend_from_slice(&h.layer.to_le_bytes());
        out.extend_from_slice(&h.rows.to_le_bytes());
        out.extend_from_slice(&h.cols.to_le_bytes());
        out.push(h.payload_count);
        for p in &self.payload {
            for v in p.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(())
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.encode_into(&mut out)?;
        Ok(out)
    }

    /// Reads one frame. `Ok(None)` at a clean end of stream.
    pub fn decode(reader: &mut impl Read) -> Result<Option<Message>> {
        let mut head = [0u8; HEADER_LEN];
        match reader.read_exact(&mut head[..1]) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e.into()),
        }
        reader
            .read_exact(&mut head[1..])
            .map_err(|e| truncated(e, "header"))?;
        let h = FrameHeader::parse(&head)?;
        if h.payload_count == 0 {
            return Err(Error::Frame("frame without payload".into()));
        }
        let implausible = || Error::Frame(format!("implausible block size {}x{}", h.rows, h.cols));
        let rows = usize::try_from(h.rows).map_err(|_| implausible())?;
        let cols = usize::try_from(h.cols).map_err(|_| implausible())?;
        let bytes = h
            .rows
            .checked_mul(h.cols)
            .filter(|&n| n <= 1u64 << 40)
            .and_then(|n| usize::try_from(n * 8).ok())
            .ok_or_else(implausible)?;
        let mut payload = Vec::with_capacity(h.payload_count as usize);
        let mut buf = vec![0u8; bytes];
        for _ in 0..h.payload_count {
            reader.read_exact(&mut buf).map_err(|e| truncated(e, "payload"))?;
            let data = buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            payload.push(DenseMatrix::from_vec(rows, cols, data).map_err(|e| Error::Frame(e.to_string()))?);
        }
        Ok(Some(Message {
            kind: h.kind,
            src: h.src as usize,
            dst: h.dst as usize,
            layer: h.layer as usize,
            payload,
        }))
    }
}

fn truncated(e: io::Error, part: &str) -> Error {
    if e.kind() == io::ErrorKind::UnexpectedEof {
        Error::Frame(format!("truncated {part}"))
    } else {
        e.into()
    }
}

/// `p_{l,r→m} = Ã_{m,r} (Z_{l,r} W_{l+1})` built by the sender `r` from
/// its product `Z_{l,r}W_{l+1}`.
pub fn build_first_order(sender: &Community, layer: usize, dst: usize, product: &DenseMatrix) -> Result<Message> {
    if dst == sender.id {
        return Err(Error::ProtocolViolation(format!(
            "community {dst} does not message itself"
        )));
    }
    let block = sender.out_block(dst)?;
    Ok(Message::new(
        MessageKind::FirstOrder,
        sender.id,
        dst,
        layer,
        vec![block.spmm(product)?],
    ))
}

/// Second-order information forwarded by `sender` (community r) to `dst`
/// (community m). `received` holds `p_{l,r'→r}` for every linked `r'`,
/// including `r` itself.
///
/// Below the penultimate layer the payload is
/// `[Z_{l+1,r}, Σ_{r'≠m} p_{l,r'→r}]`; at layer L-1 it is
/// `[Z_{L,r} − Σ_{r'≠m} p_{L-1,r'→r}, U_r]`.
pub fn build_second_order(
    sender: &Community,
    layer: usize,
    layers: usize,
    dst: usize,
    z_next: &DenseMatrix,
    u: &DenseMatrix,
    received: &BTreeMap<usize, DenseMatrix>,
) -> Result<Message> {
    if !sender.neighbors.contains(&dst) {
        return Err(Error::ProtocolViolation(format!(
            "community {dst} is not a neighbour of {}",
            sender.id
        )));
    }
    if layer == 0 || layer >= layers {
        return Err(Error::ProtocolViolation(format!(
            "no second-order information at layer {layer}"
        )));
    }
    let mut sum = DenseMatrix::zeros(z_next.rows(), z_next.cols());
    for &r in sender.linked.iter().filter(|&&r| r != dst) {
        let p = received.get(&r).ok_or(Error::Protocol {
            kind: MessageKind::FirstOrder.name(),
            layer,
            src: r,
            dst: sender.id,
        })?;
        sum.add_assign(p);
    }
    let payload = if layer + 1 < layers {
        vec![z_next.clone(), sum]
    } else {
        vec![z_next.sub(&sum), u.clone()]
    };
    Ok(Message::new(MessageKind::SecondOrder, sender.id, dst, layer, payload))
}

/// Messages received by one agent during one phase, keyed by
/// `(kind, layer, src)`.
#[derive(Clone, Debug, Default)]
pub struct Inbox {
    owner: usize,
    entries: BTreeMap<(MessageKind, usize, usize), Vec<DenseMatrix>>,
}

impl Inbox {
    pub fn new(owner: usize) -> Self {
        Self {
            owner,
            entries: BTreeMap::new(),
        }
    }

    pub fn put(&mut self, msg: Message) -> Result<()> {
        if msg.dst != self.owner {
            return Err(Error::ProtocolViolation(format!(
                "message for {} delivered to {}",
                msg.dst, self.owner
            )));
        }
        self.insert(msg.kind, msg.layer, msg.src, msg.payload)
    }

    /// Stores a block the owner computed for itself.
    pub fn insert(&mut self, kind: MessageKind, layer: usize, src: usize, payload: Vec<DenseMatrix>) -> Result<()> {
        if self.entries.insert((kind, layer, src), payload).is_some() {
            return Err(Error::ProtocolViolation(format!(
                "duplicate {} message for layer {layer}, {src}→{}",
                kind.name(),
                self.owner
            )));
        }
        Ok(())
    }

    pub fn get(&self, kind: MessageKind, layer: usize, src: usize) -> Result<&[DenseMatrix]> {
        self.entries
            .get(&(kind, layer, src))
            .map(|v| v.as_slice())
            .ok_or(Error::Protocol {
                kind: kind.name(),
                layer,
                src,
                dst: self.owner,
            })
    }

    pub fn take(&mut self, kind: MessageKind, layer: usize, src: usize) -> Result<Vec<DenseMatrix>> {
        self.entries.remove(&(kind, layer, src)).ok_or(Error::Protocol {
            kind: kind.name(),
            layer,
            src,
            dst: self.owner,
        })
    }

    /// All first payloads of `kind` at `layer`, keyed by source.
    pub fn collect(&self, kind: MessageKind, layer: usize, sources: &[usize]) -> Result<BTreeMap<usize, DenseMatrix>> {
        sources
            .iter()
            .map(|&s| Ok((s, self.get(kind, layer, s)?[0].clone())))
            .collect()
    }

    pub fn clear(&mut self, kind: MessageKind) {
        self.entries.retain(|k, _| k.0 != kind);
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}
