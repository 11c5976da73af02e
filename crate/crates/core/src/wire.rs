//! Length-prefixed binary protocol shared by samplers, trainers and the
//! replay hub.
//!
//! ```text
//! frame   = "CRL1" | type u8 | payload length u64 | payload
//! vector  = length u32 | f32 entries
//! episode = tag u64 | terminal u8 | obs dim u32 | act dim u32 | steps u32
//!         | states f32[(steps+1)·obs] | actions f32[steps·act] | rewards f64[steps]
//! ```
//!
//! Every integer and float is little-endian. Decoders accept exactly one
//! frame and reject trailing bytes.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::algorithms::AlgoKind;
use crate::checkpoint::{read_layout, write_layout};
use crate::codec::{Reader, Writer};
use crate::error::Error;
use crate::mlp::{MlpLayout, MlpParams};
use crate::replay::{Episode, Transition};

pub const MAGIC: &[u8; 4] = b"CRL1";
pub const HEADER_LEN: usize = 13;
pub const MAX_PAYLOAD: u64 = 256 << 20;

/// Error codes carried by [`Message::Error`].
pub mod codes {
    pub const PROTOCOL: u16 = 1;
    pub const EMPTY_EPISODE: u16 = 2;
    pub const NOT_READY: u16 = 3;
    /// The hub holds no weights newer than the requested version.
    pub const NO_WEIGHTS: u16 = 4;
    pub const BAD_REQUEST: u16 = 5;
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte limit")]
    Oversize(u64),
    #[error("truncated frame: {0}")]
    Truncated(&'static str),
    #[error("malformed payload: {0}")]
    Payload(String),
    /// The peer closed the stream on a frame boundary.
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<Error> for WireError {
    fn from(e: Error) -> Self {
        WireError::Payload(e.to_string())
    }
}

type WResult<T> = std::result::Result<T, WireError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Hello = 1,
    PushEpisode = 2,
    WeightsRequest = 3,
    Weights = 4,
    SampleRequest = 5,
    SampleBatch = 6,
    StatsRequest = 7,
    Stats = 8,
    Error = 9,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<Self> {
        use MsgType::*;
        Some(match v {
            1 => Hello,
            2 => PushEpisode,
            3 => WeightsRequest,
            4 => Weights,
            5 => SampleRequest,
            6 => SampleBatch,
            7 => StatsRequest,
            8 => Stats,
            9 => Error,
            _ => return None,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum NodeRole {
    Sampler = 0,
    Trainer = 1,
    Hub = 2,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hello {
    pub role: NodeRole,
    pub node_id: u64,
    /// Set by the one trainer whose weights the hub serves.
    pub publisher: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PushEpisode {
    pub source_id: u64,
    pub eval: bool,
    pub weight_version: u64,
    pub episode_return: f64,
    pub episode: Episode,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkBlob {
    pub role: String,
    pub layout: MlpLayout,
    pub params: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightsSnapshot {
    pub version: u64,
    pub algo: AlgoKind,
    pub networks: Vec<NetworkBlob>,
}

impl WeightsSnapshot {
    pub fn from_params(version: u64, algo: AlgoKind, nets: &[(&str, &MlpParams)]) -> Self {
        WeightsSnapshot {
            version,
            algo,
            networks: nets
                .iter()
                .map(|(role, p)| NetworkBlob {
                    role: role.to_string(),
                    layout: p.layout().clone(),
                    params: p.as_slice().iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }

    /// Widens the named network back to f64 parameters.
    pub fn params(&self, role: &str) -> crate::Result<MlpParams> {
        let blob = self
            .networks
            .iter()
            .find(|n| n.role == role)
            .ok_or_else(|| Error::Format(format!("snapshot has no '{role}' network")))?;
        MlpParams::from_flat(blob.layout.clone(), blob.params.iter().map(|&v| v as f64).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleRequest {
    pub batch_size: u32,
    /// n-step profile the requester trains with; must match the hub's.
    pub n_step: u32,
    pub gamma: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceStats {
    pub source_id: u64,
    pub eval: bool,
    pub episodes: u64,
    pub transitions: u64,
    pub return_sum: f64,
    pub last_return: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct HubStats {
    pub size: u64,
    pub capacity: u64,
    pub pushed_transitions: u64,
    pub pushed_episodes: u64,
    pub sampled_transitions: u64,
    pub weight_version: u64,
    pub protocol_errors: u64,
    pub sources: Vec<SourceStats>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Message {
    Hello(Hello),
    PushEpisode(PushEpisode),
    /// Asks for weights newer than `have_version`.
    WeightsRequest { have_version: u64 },
    Weights(WeightsSnapshot),
    SampleRequest(SampleRequest),
    SampleBatch(Vec<Transition>),
    StatsRequest,
    Stats(HubStats),
    Error { code: u16, message: String },
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Hello(_) => MsgType::Hello,
            Message::PushEpisode(_) => MsgType::PushEpisode,
            Message::WeightsRequest { .. } => MsgType::WeightsRequest,
            Message::Weights(_) => MsgType::Weights,
            Message::SampleRequest(_) => MsgType::SampleRequest,
            Message::SampleBatch(_) => MsgType::SampleBatch,
            Message::StatsRequest => MsgType::StatsRequest,
            Message::Stats(_) => MsgType::Stats,
            Message::Error { .. } => MsgType::Error,
        }
    }

    pub fn error(code: u16, message: impl Into<String>) -> Self {
        Message::Error {
            code,
            message: message.into(),
        }
    }
}

fn write_episode(w: &mut Writer, e: &Episode) {
    w.u64(e.tag);
    w.u8(u8::from(e.terminal));
    w.u32(e.obs_dim as u32);
    w.u32(e.act_dim as u32);
    w.u32(e.rewards.len() as u32);
    w.f32s(&e.states);
    w.f32s(&e.actions);
    w.f64s(&e.rewards);
}

fn read_episode(r: &mut Reader<'_>) -> crate::Result<Episode> {
    let tag = r.u64()?;
    let terminal = r.bool()?;
    let obs_dim = r.u32()? as u64;
    let act_dim = r.u32()? as u64;
    let steps = r.u32()? as u64;
    // u32 · u32 products cannot overflow u64; the reader bounds them by the bytes left.
    let states = r.f32s((steps + 1) * obs_dim)?;
    let actions = r.f32s(steps * act_dim)?;
    let rewards = r.f64s(steps)?;
    Ok(Episode {
        tag,
        obs_dim: obs_dim as usize,
        act_dim: act_dim as usize,
        states,
        actions,
        rewards,
        terminal,
    })
}

fn write_transition(w: &mut Writer, t: &Transition) {
    w.u64(t.episode_tag);
    w.u32(t.step);
    w.f32_vec(&t.state);
    w.f32_vec(&t.action);
    w.f64(t.n_step_reward);
    w.f32_vec(&t.next_state);
    w.f64(t.discount_pow);
    w.u8(u8::from(t.done));
}

fn read_transition(r: &mut Reader<'_>) -> crate::Result<Transition> {
    Ok(Transition {
        episode_tag: r.u64()?,
        step: r.u32()?,
        state: r.f32_vec()?,
        action: r.f32_vec()?,
        n_step_reward: r.f64()?,
        next_state: r.f32_vec()?,
        discount_pow: r.f64()?,
        done: r.bool()?,
    })
}

fn encode_payload(msg: &Message, w: &mut Writer) {
    match msg {
        Message::Hello(h) => {
            w.u8(h.role as u8);
            w.u64(h.node_id);
            w.u8(u8::from(h.publisher));
        }
        Message::PushEpisode(p) => {
            w.u64(p.source_id);
            w.u8(u8::from(p.eval));
            w.u64(p.weight_version);
            w.f64(p.episode_return);
            write_episode(w, &p.episode);
        }
        Message::WeightsRequest { have_version } => w.u64(*have_version),
        Message::Weights(s) => {
            w.u64(s.version);
            w.u8(s.algo.tag());
            w.u32(s.networks.len() as u32);
            for n in &s.networks {
                w.str(&n.role);
                write_layout(w, &n.layout);
                w.u64(n.params.len() as u64);
                w.f32s(&n.params);
            }
        }
        Message::SampleRequest(q) => {
            w.u32(q.batch_size);
            w.u32(q.n_step);
            w.f64(q.gamma);
        }
        Message::SampleBatch(ts) => {
            w.u32(ts.len() as u32);
            for t in ts {
                write_transition(w, t);
            }
        }
        Message::StatsRequest => {}
        Message::Stats(s) => {
            for v in [
                s.size,
                s.capacity,
                s.pushed_transitions,
                s.pushed_episodes,
                s.sampled_transitions,
                s.weight_version,
                s.protocol_errors,
            ] {
                w.u64(v);
            }
            w.u32(s.sources.len() as u32);
            for src in &s.sources {
                w.u64(src.source_id);
                w.u8(u8::from(src.eval));
                w.u64(src.episodes);
                w.u64(src.transitions);
                w.f64(src.return_sum);
                w.f64(src.last_return);
            }
        }
        Message::Error { code, message } => {
            w.u16(*code);
            w.str(message);
        }
    }
}

fn decode_payload(ty: MsgType, payload: &[u8]) -> crate::Result<Message> {
    let mut r = Reader::new(payload);
    let msg = match ty {
        MsgType::Hello => {
            let role = match r.u8()? {
                0 => NodeRole::Sampler,
                1 => NodeRole::Trainer,
                2 => NodeRole::Hub,
                v => return Err(Error::Format(format!("unknown node role {v}"))),
            };
            Message::Hello(Hello {
                role,
                node_id: r.u64()?,
                publisher: r.bool()?,
            })
        }
        MsgType::PushEpisode => Message::PushEpisode(PushEpisode {
            source_id: r.u64()?,
            eval: r.bool()?,
            weight_version: r.u64()?,
            episode_return: r.f64()?,
            episode: read_episode(&mut r)?,
        }),
        MsgType::WeightsRequest => Message::WeightsRequest { have_version: r.u64()? },
        MsgType::Weights => {
            let version = r.u64()?;
            let tag = r.u8()?;
            let algo = AlgoKind::from_tag(tag)
                .ok_or_else(|| Error::Format(format!("unknown algorithm tag {tag}")))?;
            let count = r.u32()?;
            let mut networks = Vec::new();
            for _ in 0..count {
                let role = r.str()?;
                let layout = read_layout(&mut r)?;
                let n = r.u64()?;
                if n != layout.param_count() as u64 {
                    return Err(Error::Format(format!(
                        "network '{role}' carries {n} parameters, layout needs {}",
                        layout.param_count()
                    )));
                }
                let params = r.f32s(n)?;
                networks.push(NetworkBlob { role, layout, params });
            }
            Message::Weights(WeightsSnapshot {
                version,
                algo,
                networks,
            })
        }
        MsgType::SampleRequest => Message::SampleRequest(SampleRequest {
            batch_size: r.u32()?,
            n_step: r.u32()?,
            gamma: r.f64()?,
        }),
        MsgType::SampleBatch => {
            let n = r.u32()?;
            // Smallest transition is 41 bytes; refuse counts the payload cannot hold.
            if n as usize > r.remaining() / 41 {
                return Err(Error::Format(format!("batch of {n} cannot fit in the payload")));
            }
            let ts = (0..n).map(|_| read_transition(&mut r)).collect::<crate::Result<_>>()?;
            Message::SampleBatch(ts)
        }
        MsgType::StatsRequest => Message::StatsRequest,
        MsgType::Stats => {
            let mut c = [0u64; 7];
            for v in &mut c {
                *v = r.u64()?;
            }
            let n = r.u32()?;
            if n as usize > r.remaining() / 41 {
                return Err(Error::Format(format!("{n} sources cannot fit in the payload")));
            }
            let sources = (0..n)
                .map(|_| {
                    Ok(SourceStats {
                        source_id: r.u64()?,
                        eval: r.bool()?,
                        episodes: r.u64()?,
                        transitions: r.u64()?,
                        return_sum: r.f64()?,
                        last_return: r.f64()?,
                    })
                })
                .collect::<crate::Result<_>>()?;
            Message::Stats(HubStats {
                size: c[0],
                capacity: c[1],
                pushed_transitions: c[2],
                pushed_episodes: c[3],
                sampled_transitions: c[4],
                weight_version: c[5],
                protocol_errors: c[6],
                sources,
            })
        }
        MsgType::Error => Message::Error {
            code: r.u16()?,
            message: r.str()?,
        },
    };
    r.finish()?;
    Ok(msg)
}

pub fn encode_message(msg: &Message) -> Vec<u8> {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.u8(msg.msg_type() as u8);
    w.u64(0);
    encode_payload(msg, &mut w);
    let len = (w.buf.len() - HEADER_LEN) as u64;
    w.buf[5..HEADER_LEN].copy_from_slice(&len.to_le_bytes());
    w.buf
}

/// Validates as much of a header as `bytes` holds. Returns the type and
/// payload length once all 13 header bytes are present.
fn check_header(bytes: &[u8]) -> WResult<Option<(MsgType, usize)>> {
    let m = bytes.len().min(4);
    if bytes[..m] != MAGIC[..m] {
        let mut got = [0u8; 4];
        got[..m].copy_from_slice(&bytes[..m]);
        return Err(WireError::BadMagic(got));
    }
    if bytes.len() < 5 {
        return Ok(None);
    }
    let ty = MsgType::from_u8(bytes[4]).ok_or(WireError::UnknownType(bytes[4]))?;
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let len = u64::from_le_bytes(bytes[5..HEADER_LEN].try_into().expect("8 bytes"));
    if len > MAX_PAYLOAD {
        return Err(WireError::Oversize(len));
    }
    Ok(Some((ty, len as usize)))
}

/// Decodes exactly one complete frame.
pub fn decode_message(bytes: &[u8]) -> WResult<Message> {
    let (ty, len) = check_header(bytes)?.ok_or(WireError::Truncated("header"))?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < len {
        return Err(WireError::Truncated("payload"));
    }
    if body.len() > len {
        return Err(WireError::Payload(format!("{} bytes after the frame", body.len() - len)));
    }
    Ok(decode_payload(ty, body)?)
}

pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_message(msg))?;
    w.flush()
}

/// Blocking read of one frame. A stream that ends before the first header
/// byte yields [`WireError::Closed`]; one that ends mid-frame is truncated.
pub fn read_message<R: Read>(r: &mut R) -> WResult<Message> {
    let mut header = [0u8; HEADER_LEN];
    let mut got = 0;
    while got < HEADER_LEN {
        match r.read(&mut header[got..]) {
            Ok(0) if got == 0 => return Err(WireError::Closed),
            Ok(0) => return Err(WireError::Truncated("header")),
            Ok(n) => {
                got += n;
                check_header(&header[..got])?;
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let (ty, len) = check_header(&header)?.expect("full header");
    let mut payload = Vec::new();
    r.take(len as u64).read_to_end(&mut payload)?;
    if payload.len() < len {
        return Err(WireError::Truncated("payload"));
    }
    Ok(decode_payload(ty, &payload)?)
}

/// Incremental decoder for a byte stream arriving in arbitrary chunks.
/// After an error the decoder stays failed.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
    failed: bool,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn feed(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes held that do not yet form a complete frame.
    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn next_message(&mut self) -> WResult<Option<Message>> {
        if self.failed {
            return Err(WireError::Payload("decoder already failed".into()));
        }
        if self.buf.is_empty() {
            return Ok(None);
        }
        let res = match check_header(&self.buf) {
            Ok(Some((ty, len))) if self.buf.len() >= HEADER_LEN + len => {
                let msg = decode_payload(ty, &self.buf[HEADER_LEN..HEADER_LEN + len]);
                self.buf.drain(..HEADER_LEN + len);
                msg.map(Some).map_err(WireError::from)
            }
            Ok(_) => Ok(None),
            Err(e) => Err(e),
        };
        if res.is_err() {
            self.failed = true;
        }
        res
    }
}
