//! Binary packet format shared by hosts, switches, and the controller.
//!
//! Every frame starts with a fixed routing header followed by a body whose
//! shape depends on the packet type. All multi-byte integers are big-endian.
//!
//! ```text
//! +----------+----------+------+-----------------------------------+
//! | src_node | dst_node | type | body                              |
//! | u16      | u16      | u8   | (layout depends on type)          |
//! +----------+----------+------+-----------------------------------+
//!
//! type 0  Launch       n_reducers u16, n_mappers u16,
//!                      reducer addrs (u16 each), mapper addrs (u16 each)
//! type 1  Configure    n_trees u16, then per tree:
//!                      tree_id u16, child_count u16
//! type 2  Ack toward master      (empty body)
//! type 3  Ack toward controller  (empty body)
//! type 4  Aggregation  tree_id u16, flags u8 (bit0 = end of task),
//!                      op u8 (0 SUM, 1 MAX, 2 MIN), num_pairs u16,
//!                      then per pair:
//!                      key_len u8, value_len u8 (always 4),
//!                      key bytes, value i32
//! ```
//!
//! Decoding is strict: a buffer is accepted only if it is byte-for-byte
//! something `encode` could have produced, so `encode(decode(b)) == b`
//! holds for every accepted input. Every decode error carries the byte
//! offset at which the problem was detected.

use std::fmt;

/// Bytes of routing header before the type-specific body.
pub const FRAME_HEADER_LEN: usize = 5;
/// Fixed bytes of an Aggregation body before the pair list.
pub const AGG_FIXED_LEN: usize = 6;
/// Per-pair bytes spent on the two length fields.
pub const PAIR_META_LEN: usize = 2;
/// Values are 32-bit signed integers on the wire.
pub const VALUE_LEN: usize = 4;
/// Longest key the pipeline accepts.
pub const MAX_KEY_LEN: usize = 64;
/// Default ceiling on an encoded frame.
pub const DEFAULT_MTU: usize = 1500;

/// Byte offset of the packet type field within a frame.
const TYPE_OFFSET: usize = 4;

const TYPE_LAUNCH: u8 = 0;
const TYPE_CONFIGURE: u8 = 1;
const TYPE_ACK_MASTER: u8 = 2;
const TYPE_ACK_CONTROLLER: u8 = 3;
const TYPE_AGGREGATION: u8 = 4;

/// Errors raised by [`encode`] and [`decode`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireError {
    /// Encoded frame would exceed the MTU handed to `encode`.
    Oversize { size: usize, mtu: usize },
    /// A field violates a structural invariant (bad key length, list longer
    /// than its u16 count field can express).
    Invariant(String),
    /// Input ended before the field starting at `offset` was complete.
    Truncated { offset: usize },
    /// Unknown packet type byte at `offset`.
    UnknownType { offset: usize, value: u8 },
    /// A length field at `offset` disagrees with the bytes that follow it.
    LengthMismatch { offset: usize },
}

impl fmt::Display for WireError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WireError::Oversize { size, mtu } => {
                write!(f, "encoded frame is {size} bytes, exceeds mtu {mtu}")
            }
            WireError::Invariant(msg) => write!(f, "invariant violated: {msg}"),
            WireError::Truncated { offset } => {
                write!(f, "input truncated at byte {offset}")
            }
            WireError::UnknownType { offset, value } => {
                write!(f, "unknown packet type {value} at byte {offset}")
            }
            WireError::LengthMismatch { offset } => {
                write!(f, "length field at byte {offset} disagrees with payload")
            }
        }
    }
}

impl std::error::Error for WireError {}

/// Aggregation operator carried in every Aggregation packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AggOp {
    Sum,
    Max,
    Min,
}

impl AggOp {
    pub fn code(self) -> u8 {
        match self {
            AggOp::Sum => 0,
            AggOp::Max => 1,
            AggOp::Min => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<AggOp> {
        match code {
            0 => Some(AggOp::Sum),
            1 => Some(AggOp::Max),
            2 => Some(AggOp::Min),
            _ => None,
        }
    }

    /// Folds `b` into `a`. SUM wraps on two's-complement overflow.
    pub fn fold(self, a: i32, b: i32) -> i32 {
        match self {
            AggOp::Sum => a.wrapping_add(b),
            AggOp::Max => a.max(b),
            AggOp::Min => a.min(b),
        }
    }
}

/// One key/value pair. The key is owned, 1..=64 bytes; values are always
/// 32-bit. The key is private so a constructed pair is valid by
/// construction.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct KeyValuePair {
    key: Vec<u8>,
    pub value: i32,
}

impl KeyValuePair {
    pub fn new(key: Vec<u8>, value: i32) -> Result<KeyValuePair, WireError> {
        if key.is_empty() || key.len() > MAX_KEY_LEN {
            return Err(WireError::Invariant(format!(
                "key length {} outside 1..={MAX_KEY_LEN}",
                key.len()
            )));
        }
        Ok(KeyValuePair { key, value })
    }

    pub fn key(&self) -> &[u8] {
        &self.key
    }

    pub fn key_len(&self) -> usize {
        self.key.len()
    }

    pub fn into_key(self) -> Vec<u8> {
        self.key
    }

    /// Bytes this pair occupies inside an Aggregation body.
    pub fn encoded_len(&self) -> usize {
        PAIR_META_LEN + self.key.len() + VALUE_LEN
    }
}

/// Body of a Launch packet: the master's description of a job.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LaunchBody {
    pub reducer_addrs: Vec<u16>,
    pub mapper_addrs: Vec<u16>,
}

/// One tree entry inside a Configure packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreeEntry {
    pub tree_id: u16,
    pub child_count: u16,
}

/// Body of a Configure packet sent by the controller to a switch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigureBody {
    pub trees: Vec<TreeEntry>,
}

/// Which hop an acknowledgement is aimed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckKind {
    /// Controller reporting job readiness to the master.
    ToMaster,
    /// Switch confirming a Configure to the controller.
    ToController,
}

/// Body of an Aggregation packet: the workhorse data frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AggregationPacket {
    pub tree_id: u16,
    /// End-of-task marker; the last packet of a stream sets this.
    pub eot: bool,
    pub op: AggOp,
    pub pairs: Vec<KeyValuePair>,
}

impl AggregationPacket {
    /// Bytes of the body (excludes the frame header).
    pub fn body_len(&self) -> usize {
        AGG_FIXED_LEN + self.pairs.iter().map(KeyValuePair::encoded_len).sum::<usize>()
    }

    /// Sum of the serialized sizes of the carried pairs. This is the
    /// quantity reduction ratios are computed over.
    pub fn pair_bytes(&self) -> usize {
        self.pairs.iter().map(KeyValuePair::encoded_len).sum()
    }
}

/// Type-specific payload of a frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PacketBody {
    Launch(LaunchBody),
    Configure(ConfigureBody),
    Ack(AckKind),
    Aggregation(AggregationPacket),
}

/// A complete frame as it travels a link.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub src_node: u16,
    pub dst_node: u16,
    pub body: PacketBody,
}

impl Packet {
    /// Exact length `encode` would produce.
    pub fn encoded_len(&self) -> usize {
        FRAME_HEADER_LEN
            + match &self.body {
                PacketBody::Launch(l) => {
                    4 + 2 * (l.reducer_addrs.len() + l.mapper_addrs.len())
                }
                PacketBody::Configure(c) => 2 + 4 * c.trees.len(),
                PacketBody::Ack(_) => 0,
                PacketBody::Aggregation(a) => a.body_len(),
            }
    }
}

fn check_u16_count(len: usize, what: &str) -> Result<u16, WireError> {
    u16::try_from(len)
        .map_err(|_| WireError::Invariant(format!("{what} count {len} exceeds u16 range")))
}

/// Serializes a frame. Fails if the result would exceed `mtu` or if a list
/// is too long for its count field.
pub fn encode(packet: &Packet, mtu: usize) -> Result<Vec<u8>, WireError> {
    let size = packet.encoded_len();
    if size > mtu {
        return Err(WireError::Oversize { size, mtu });
    }
    let mut out = Vec::with_capacity(size);
    out.extend_from_slice(&packet.src_node.to_be_bytes());
    out.extend_from_slice(&packet.dst_node.to_be_bytes());
    match &packet.body {
        PacketBody::Launch(l) => {
            out.push(TYPE_LAUNCH);
            let nr = check_u16_count(l.reducer_addrs.len(), "reducer addr")?;
            let nm = check_u16_count(l.mapper_addrs.len(), "mapper addr")?;
            out.extend_from_slice(&nr.to_be_bytes());
            out.extend_from_slice(&nm.to_be_bytes());
            for addr in l.reducer_addrs.iter().chain(&l.mapper_addrs) {
                out.extend_from_slice(&addr.to_be_bytes());
            }
        }
        PacketBody::Configure(c) => {
            out.push(TYPE_CONFIGURE);
            let n = check_u16_count(c.trees.len(), "tree entry")?;
            out.extend_from_slice(&n.to_be_bytes());
            for entry in &c.trees {
                out.extend_from_slice(&entry.tree_id.to_be_bytes());
                out.extend_from_slice(&entry.child_count.to_be_bytes());
            }
        }
        PacketBody::Ack(kind) => {
            out.push(match kind {
                AckKind::ToMaster => TYPE_ACK_MASTER,
                AckKind::ToController => TYPE_ACK_CONTROLLER,
            });
        }
        PacketBody::Aggregation(a) => {
            out.push(TYPE_AGGREGATION);
            out.extend_from_slice(&a.tree_id.to_be_bytes());
            out.push(if a.eot { 1 } else { 0 });
            out.push(a.op.code());
            let n = check_u16_count(a.pairs.len(), "pair")?;
            out.extend_from_slice(&n.to_be_bytes());
            for pair in &a.pairs {
                // The constructor bounds key length, but the struct can be
                // cloned around; re-check so a corrupted pair can't silently
                // produce an undecodable frame.
                if pair.key.is_empty() || pair.key.len() > MAX_KEY_LEN {
                    return Err(WireError::Invariant(format!(
                        "pair key length {} outside 1..={MAX_KEY_LEN}",
                        pair.key.len()
                    )));
                }
                out.push(pair.key.len() as u8);
                out.push(VALUE_LEN as u8);
                out.extend_from_slice(&pair.key);
                out.extend_from_slice(&pair.value.to_be_bytes());
            }
        }
    }
    debug_assert_eq!(out.len(), size);
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8]) -> Reader<'a> {
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], WireError> {
        if self.pos + n > self.buf.len() {
            return Err(WireError::Truncated { offset: self.pos });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, WireError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, WireError> {
        let s = self.take(2)?;
        Ok(u16::from_be_bytes([s[0], s[1]]))
    }

    fn i32(&mut self) -> Result<i32, WireError> {
        let s = self.take(4)?;
        Ok(i32::from_be_bytes([s[0], s[1], s[2], s[3]]))
    }
}

/// Parses one frame. The buffer must contain exactly one frame: trailing
/// bytes are a `LengthMismatch` at the offset where the frame ended.
pub fn decode(bytes: &[u8]) -> Result<Packet, WireError> {
    let mut r = Reader::new(bytes);
    let src_node = r.u16()?;
    let dst_node = r.u16()?;
    let ptype = r.u8()?;
    let body = match ptype {
        TYPE_LAUNCH => {
            let nr = r.u16()? as usize;
            let nm = r.u16()? as usize;
            let mut reducer_addrs = Vec::with_capacity(nr);
            for _ in 0..nr {
                reducer_addrs.push(r.u16()?);
            }
            let mut mapper_addrs = Vec::with_capacity(nm);
            for _ in 0..nm {
                mapper_addrs.push(r.u16()?);
            }
            PacketBody::Launch(LaunchBody { reducer_addrs, mapper_addrs })
        }
        TYPE_CONFIGURE => {
            let n = r.u16()? as usize;
            let mut trees = Vec::with_capacity(n);
            for _ in 0..n {
                let tree_id = r.u16()?;
                let child_count = r.u16()?;
                trees.push(TreeEntry { tree_id, child_count });
            }
            PacketBody::Configure(ConfigureBody { trees })
        }
        TYPE_ACK_MASTER => PacketBody::Ack(AckKind::ToMaster),
        TYPE_ACK_CONTROLLER => PacketBody::Ack(AckKind::ToController),
        TYPE_AGGREGATION => {
            let tree_id = r.u16()?;
            let flags_offset = r.pos;
            let flags = r.u8()?;
            if flags & !1 != 0 {
                // Undefined flag bits must be zero or round-tripping breaks.
                return Err(WireError::LengthMismatch { offset: flags_offset });
            }
            let op_offset = r.pos;
            let op_code = r.u8()?;
            let op = AggOp::from_code(op_code)
                .ok_or(WireError::UnknownType { offset: op_offset, value: op_code })?;
            let n = r.u16()? as usize;
            let mut pairs = Vec::with_capacity(n.min(4096));
            for _ in 0..n {
                let key_len_offset = r.pos;
                let key_len = r.u8()? as usize;
                if key_len == 0 || key_len > MAX_KEY_LEN {
                    return Err(WireError::LengthMismatch { offset: key_len_offset });
                }
                let value_len_offset = r.pos;
                let value_len = r.u8()? as usize;
                if value_len != VALUE_LEN {
                    return Err(WireError::LengthMismatch { offset: value_len_offset });
                }
                let key = r.take(key_len)?.to_vec();
                let value = r.i32()?;
                pairs.push(KeyValuePair { key, value });
            }
            PacketBody::Aggregation(AggregationPacket {
                tree_id,
                eot: flags & 1 != 0,
                op,
                pairs,
            })
        }
        other => {
            return Err(WireError::UnknownType { offset: TYPE_OFFSET, value: other });
        }
    };
    if r.pos != bytes.len() {
        return Err(WireError::LengthMismatch { offset: r.pos });
    }
    Ok(Packet { src_node, dst_node, body })
}
