//! Wire protocol and runtime for the distributed identification: one
//! global processor and one process per area exchange consensus frames
//! over TCP. Framing is a 4-byte little-endian length prefix followed by
//! a UTF-8 JSON body with a `type` tag; floats are printed with 17
//! significant digits so every f64 round-trips exactly and the
//! distributed arithmetic is bit-identical to the in-process run.
//!
//! The rounds are synchronous barriers: the global processor collects
//! one denominator update from every area (any arrival order), averages,
//! and broadcasts; no frame of round j+1 is consumed before round j
//! completes. Denominator vectors on the wire are in the regression sign
//! convention, matching the module-internal ADMM state.

use std::collections::{HashMap, VecDeque};
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::admm::{a_update, dual_update, z_update, AdmmError, AreaState, ConsensusState};
use crate::modal::PairId;
use crate::sysid::{solve_b_given_a, ArxEstimate, RegressionBlock, SysidError};
use crate::wadc::WadcParams;

/// Transcript tag for a frame this process sent.
pub const DIR_SENT: u8 = b'>';
/// Transcript tag for a frame this process received.
pub const DIR_RECV: u8 = b'<';
/// Upper bound on a frame body; anything larger is a corrupt prefix.
pub const MAX_FRAME_LEN: u32 = 1 << 24;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("malformed frame body: {0}")]
    Json(#[from] serde_json::Error),
    #[error("frame length {0} exceeds the {MAX_FRAME_LEN}-byte cap")]
    FrameTooLarge(u32),
    #[error("peer closed the connection mid-frame")]
    ConnectionClosed,
    #[error("expected {expected} areas but only {got} connected within the timeout")]
    AcceptTimeout { expected: usize, got: usize },
    #[error("no frame from area(s) {missing:?} at iteration {iter} within the timeout")]
    BarrierTimeout { iter: usize, missing: Vec<usize> },
    #[error("expected a {expected} frame, got {got}")]
    UnexpectedMessage { expected: &'static str, got: String },
    #[error("area {area} declared k = {got}, session runs k = {expected}")]
    KMismatch {
        area: usize,
        expected: usize,
        got: usize,
    },
    #[error("duplicate Hello for area {0}")]
    DuplicateArea(usize),
    #[error("Hello from undeclared area {0}")]
    UnknownArea(usize),
    #[error("area {area} sent iteration {got} during barrier {expected}")]
    IterMismatch {
        area: usize,
        expected: usize,
        got: usize,
    },
    #[error("vector length {got} does not match declared k = {expected}")]
    BadVectorLength { expected: usize, got: usize },
    #[error("invalid session config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Admm(#[from] AdmmError),
    #[error(transparent)]
    Sysid(#[from] SysidError),
}

/// Protocol frames. Serialized with a `type` tag; denominator vectors
/// (`a`, `z`) are regression-convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    Hello {
        area_id: usize,
        k: usize,
        n_pairs: usize,
    },
    AUpdate {
        area_id: usize,
        iter: usize,
        a: Vec<f64>,
    },
    ZBroadcast {
        iter: usize,
        z: Vec<f64>,
        converged: bool,
        r_primal: f64,
        s_dual: f64,
    },
    BReport {
        area_id: usize,
        pair: PairId,
        b: Vec<f64>,
    },
    LoopSelection {
        tie: usize,
        gen: usize,
        #[serde(rename = "absR")]
        abs_r: f64,
        f: f64,
    },
    ControllerParams { params: WadcParams },
    Bye {},
}

impl Message {
    fn kind(&self) -> &'static str {
        match self {
            Message::Hello { .. } => "Hello",
            Message::AUpdate { .. } => "AUpdate",
            Message::ZBroadcast { .. } => "ZBroadcast",
            Message::BReport { .. } => "BReport",
            Message::LoopSelection { .. } => "LoopSelection",
            Message::ControllerParams { .. } => "ControllerParams",
            Message::Bye {} => "Bye",
        }
    }
}

/// JSON formatter printing every float as `{:.16e}` (17 significant
/// digits): enough for exact f64 round-trips, so reruns produce
/// byte-identical frames.
struct WireFormatter;

impl serde_json::ser::Formatter for WireFormatter {
    fn write_f64<W>(&mut self, writer: &mut W, value: f64) -> io::Result<()>
    where
        W: ?Sized + io::Write,
    {
        write!(writer, "{value:.16e}")
    }
}

/// Serializes a frame body (no length prefix).
pub fn encode(msg: &Message) -> Result<Vec<u8>, NetError> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, WireFormatter);
    msg.serialize(&mut ser)?;
    Ok(out)
}

/// Parses a frame body.
pub fn decode(body: &[u8]) -> Result<Message, NetError> {
    Ok(serde_json::from_slice(body)?)
}

/// Writes one length-prefixed frame; returns the body bytes for
/// transcript logging.
pub fn write_frame(stream: &mut impl Write, msg: &Message) -> Result<Vec<u8>, NetError> {
    let body = encode(msg)?;
    let len = u32::try_from(body.len()).map_err(|_| NetError::FrameTooLarge(u32::MAX))?;
    if len > MAX_FRAME_LEN {
        return Err(NetError::FrameTooLarge(len));
    }
    stream.write_all(&len.to_le_bytes())?;
    stream.write_all(&body)?;
    stream.flush()?;
    Ok(body)
}

/// Reads one length-prefixed frame; returns the parsed message and the
/// raw body bytes.
pub fn read_frame(stream: &mut impl Read) -> Result<(Message, Vec<u8>), NetError> {
    let mut len_buf = [0u8; 4];
    if let Err(e) = stream.read_exact(&mut len_buf) {
        return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
            NetError::ConnectionClosed
        } else {
            NetError::Io(e)
        });
    }
    let len = u32::from_le_bytes(len_buf);
    if len > MAX_FRAME_LEN {
        return Err(NetError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len as usize];
    if let Err(e) = stream.read_exact(&mut body) {
        return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
            NetError::ConnectionClosed
        } else {
            NetError::Io(e)
        });
    }
    let msg = decode(&body)?;
    Ok((msg, body))
}

/// Session transcript: `[dir tag][4-byte LE length][body]` per frame.
/// The global processor logs each barrier's frames sorted by area id so
/// the file is byte-stable regardless of socket arrival interleaving.
struct Transcript {
    out: io::BufWriter<std::fs::File>,
}

impl Transcript {
    fn create(path: &Path) -> Result<Self, NetError> {
        Ok(Self {
            out: io::BufWriter::new(std::fs::File::create(path)?),
        })
    }

    fn log(&mut self, dir: u8, body: &[u8]) -> Result<(), NetError> {
        self.out.write_all(&[dir])?;
        self.out
            .write_all(&u32::try_from(body.len()).unwrap().to_le_bytes())?;
        self.out.write_all(body)?;
        Ok(())
    }

    fn finish(mut self) -> Result<(), NetError> {
        self.out.flush()?;
        Ok(())
    }
}

fn maybe_log(t: &mut Option<Transcript>, dir: u8, body: &[u8]) -> Result<(), NetError> {
    if let Some(tr) = t.as_mut() {
        tr.log(dir, body)?;
    }
    Ok(())
}

/// Global processor session parameters. Mirrors the in-process consensus
/// settings so the two runtimes compute identical iterates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionConfig {
    /// Address the global processor binds (e.g. "127.0.0.1:7700").
    pub bind_addr: String,
    /// Expected area ids; a distributed session needs at least two.
    pub area_ids: Vec<usize>,
    /// Per-phase timeout for connects and barriers.
    pub timeout_ms: u64,
    pub max_iter: usize,
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    /// Sample period stamped into the assembled estimate.
    pub ts: f64,
    /// Optional transcript dump path.
    pub transcript: Option<PathBuf>,
}

/// Local processor session parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LocalConfig {
    pub area_id: usize,
    /// Address of the global processor.
    pub global_addr: String,
    pub timeout_ms: u64,
    pub max_iter: usize,
    pub rho: f64,
    /// Optional transcript dump path.
    pub transcript: Option<PathBuf>,
}

/// Result of a global session: the consensus estimate plus the residual
/// trace, and the count of duplicate frames that were rejected.
#[derive(Debug, Clone)]
pub struct GlobalOutcome {
    pub estimate: ArxEstimate,
    pub state: ConsensusState,
    pub converged: bool,
    pub trace: Vec<ConsensusState>,
    pub rejected_duplicates: usize,
}

/// Result of a local session; `a` is regression-convention.
#[derive(Debug, Clone)]
pub struct LocalOutcome {
    pub a: Vec<f64>,
    pub b: Vec<Vec<f64>>,
    pub converged: bool,
    pub iters: usize,
}

enum Inbound {
    Frame(usize, Message, Vec<u8>),
    Gone(usize),
}

/// Multiplexed frame source for the coordinator. Frames a connection
/// sends ahead of the current phase (a pipelined AUpdate racing another
/// area's Hello) are stashed and replayed before fresh reads, keeping
/// per-connection order intact.
struct Mailbox {
    pending: VecDeque<Inbound>,
    rx: mpsc::Receiver<Inbound>,
}

impl Mailbox {
    fn next(&mut self, remaining: Duration) -> Result<Inbound, mpsc::RecvTimeoutError> {
        if let Some(frame) = self.pending.pop_front() {
            return Ok(frame);
        }
        self.rx.recv_timeout(remaining)
    }
}

/// Binds the configured address and runs the global session.
pub fn serve_global(config: &SessionConfig) -> Result<GlobalOutcome, NetError> {
    let listener = TcpListener::bind(&config.bind_addr)?;
    serve_global_on(listener, config)
}

/// Runs the global session on an already-bound listener (lets callers
/// bind port 0 and learn the address first).
pub fn serve_global_on(
    listener: TcpListener,
    config: &SessionConfig,
) -> Result<GlobalOutcome, NetError> {
    if config.area_ids.is_empty() {
        return Err(NetError::BadConfig("no areas declared".into()));
    }
    if config.timeout_ms == 0 {
        return Err(NetError::BadConfig("timeout must be positive".into()));
    }
    let mut expected = config.area_ids.clone();
    expected.sort_unstable();
    expected.dedup();
    if expected.len() != config.area_ids.len() {
        return Err(NetError::BadConfig("duplicate area ids declared".into()));
    }
    let n_areas = expected.len();
    let timeout = Duration::from_millis(config.timeout_ms);
    let mut transcript = match &config.transcript {
        Some(p) => Some(Transcript::create(p)?),
        None => None,
    };

    // acceptor thread hands streams over so the accept phase can time out
    let (conn_tx, conn_rx) = mpsc::channel::<TcpStream>();
    let accept_handle = std::thread::spawn(move || {
        for _ in 0..n_areas {
            match listener.accept() {
                Ok((s, _)) => {
                    if conn_tx.send(s).is_err() {
                        return;
                    }
                }
                Err(_) => return,
            }
        }
    });

    let mut streams = Vec::with_capacity(n_areas);
    for got in 0..n_areas {
        match conn_rx.recv_timeout(timeout) {
            Ok(s) => streams.push(s),
            Err(_) => {
                return Err(NetError::AcceptTimeout {
                    expected: n_areas,
                    got,
                });
            }
        }
    }
    drop(accept_handle);

    // one reader thread per connection; coordinator keeps the write half
    let (tx, rx) = mpsc::channel::<Inbound>();
    let mut writers = Vec::with_capacity(n_areas);
    for (idx, stream) in streams.into_iter().enumerate() {
        stream.set_read_timeout(Some(timeout))?;
        let writer = stream.try_clone()?;
        writers.push(writer);
        let tx = tx.clone();
        let mut reader = stream;
        std::thread::spawn(move || loop {
            match read_frame(&mut reader) {
                Ok((msg, raw)) => {
                    let bye = matches!(msg, Message::Bye {});
                    if tx.send(Inbound::Frame(idx, msg, raw)).is_err() || bye {
                        return;
                    }
                }
                Err(_) => {
                    let _ = tx.send(Inbound::Gone(idx));
                    return;
                }
            }
        });
    }
    drop(tx);
    let mut mailbox = Mailbox {
        pending: VecDeque::new(),
        rx,
    };

    // Hello barrier: map connection index -> area id, validate k
    let mut hellos: HashMap<usize, (usize, usize, Vec<u8>)> = HashMap::new(); // conn -> (area, n_pairs, raw)
    let mut session_k: Option<usize> = None;
    let mut seen_areas: Vec<usize> = Vec::new();
    let mut early: Vec<Inbound> = Vec::new();
    let end = Instant::now() + timeout;
    while hellos.len() < n_areas {
        let remaining = end.saturating_duration_since(Instant::now());
        let inbound = mailbox.next(remaining).map_err(|_| {
            let missing: Vec<usize> = expected
                .iter()
                .copied()
                .filter(|id| !seen_areas.contains(id))
                .collect();
            NetError::BarrierTimeout { iter: 0, missing }
        })?;
        match inbound {
            Inbound::Frame(conn, Message::Hello { area_id, k, n_pairs }, raw) => {
                if !expected.contains(&area_id) {
                    return Err(NetError::UnknownArea(area_id));
                }
                if seen_areas.contains(&area_id) {
                    return Err(NetError::DuplicateArea(area_id));
                }
                match session_k {
                    None => session_k = Some(k),
                    Some(exp) if exp != k => {
                        return Err(NetError::KMismatch {
                            area: area_id,
                            expected: exp,
                            got: k,
                        });
                    }
                    _ => {}
                }
                seen_areas.push(area_id);
                hellos.insert(conn, (area_id, n_pairs, raw));
            }
            Inbound::Frame(conn, other, raw) if hellos.contains_key(&conn) => {
                // this connection is past its Hello and already pipelining
                // the next phase; hold the frame for the first barrier
                early.push(Inbound::Frame(conn, other, raw));
            }
            Inbound::Frame(_, other, _) => {
                return Err(NetError::UnexpectedMessage {
                    expected: "Hello",
                    got: other.kind().into(),
                });
            }
            Inbound::Gone(conn) => {
                let missing: Vec<usize> = if let Some((area, _, _)) = hellos.get(&conn) {
                    vec![*area]
                } else {
                    expected
                        .iter()
                        .copied()
                        .filter(|id| !seen_areas.contains(id))
                        .collect()
                };
                return Err(NetError::BarrierTimeout { iter: 0, missing });
            }
        }
    }
    mailbox.pending.extend(early);
    let k = session_k.expect("at least one Hello");

    // fixed processing order: connections sorted by area id
    let mut order: Vec<usize> = hellos.keys().copied().collect();
    order.sort_by_key(|conn| hellos[conn].0);
    let area_of_conn: HashMap<usize, usize> =
        hellos.iter().map(|(&c, &(a, _, _))| (c, a)).collect();
    for &conn in &order {
        maybe_log(&mut transcript, DIR_RECV, &hellos[&conn].2)?;
    }

    let mut rejected_duplicates = 0usize;

    // barrier-collect one AUpdate per area for iteration `iter`
    let collect_a = |mailbox: &mut Mailbox,
                     iter: usize,
                     rejected: &mut usize,
                     transcript: &mut Option<Transcript>|
     -> Result<HashMap<usize, (DVector<f64>, Vec<u8>)>, NetError> {
        let mut got: HashMap<usize, (DVector<f64>, Vec<u8>)> = HashMap::new();
        let end = Instant::now() + timeout;
        while got.len() < n_areas {
            let remaining = end.saturating_duration_since(Instant::now());
            let inbound = mailbox.next(remaining).map_err(|_| {
                let missing: Vec<usize> = expected
                    .iter()
                    .copied()
                    .filter(|id| !got.contains_key(id))
                    .collect();
                NetError::BarrierTimeout { iter, missing }
            })?;
            match inbound {
                Inbound::Frame(_, Message::AUpdate { area_id, iter: j, a }, raw) => {
                    if j > iter {
                        // a future iteration before this barrier completed
                        // means the peer skipped a round
                        return Err(NetError::IterMismatch {
                            area: area_id,
                            expected: iter,
                            got: j,
                        });
                    }
                    if a.len() != k {
                        return Err(NetError::BadVectorLength {
                            expected: k,
                            got: a.len(),
                        });
                    }
                    if j < iter || got.contains_key(&area_id) {
                        // idempotence rule: the first frame per iteration
                        // wins, retransmissions (even ones that slip past
                        // their own barrier) are dropped and counted
                        *rejected += 1;
                        eprintln!("global: rejected duplicate AUpdate from area {area_id} at iteration {j}");
                        continue;
                    }
                    got.insert(area_id, (DVector::from_vec(a), raw));
                }
                Inbound::Frame(_, other, _) => {
                    return Err(NetError::UnexpectedMessage {
                        expected: "AUpdate",
                        got: other.kind().into(),
                    });
                }
                Inbound::Gone(conn) => {
                    let missing = vec![area_of_conn[&conn]];
                    return Err(NetError::BarrierTimeout { iter, missing });
                }
            }
        }
        for id in &expected {
            maybe_log(transcript, DIR_RECV, &got[id].1)?;
        }
        Ok(got)
    };

    let broadcast = |msg: &Message,
                     writers: &mut [TcpStream],
                     transcript: &mut Option<Transcript>|
     -> Result<(), NetError> {
        let mut body = None;
        for &conn in &order {
            body = Some(write_frame(&mut writers[conn], msg)?);
        }
        // one logical broadcast: identical bytes to every area
        maybe_log(transcript, DIR_SENT, body.as_deref().unwrap_or_default())?;
        Ok(())
    };

    // iteration 0: init-mean exchange
    let a0 = collect_a(&mut mailbox, 0, &mut rejected_duplicates, &mut transcript)?;
    let a0_vecs: Vec<DVector<f64>> = expected.iter().map(|id| a0[id].0.clone()).collect();
    let mut z = z_update(&a0_vecs)?;
    let expose = |z: &DVector<f64>| -> Vec<f64> { z.iter().map(|v| -v).collect() };
    let r0 = a0_vecs.iter().map(|a| (a - &z).norm()).fold(0.0, f64::max);
    let mut trace = vec![ConsensusState {
        iter: 0,
        r_primal: r0,
        s_dual: 0.0,
        z: expose(&z),
    }];
    broadcast(
        &Message::ZBroadcast {
            iter: 0,
            z: z.iter().copied().collect(),
            converged: false,
            r_primal: r0,
            s_dual: 0.0,
        },
        &mut writers,
        &mut transcript,
    )?;

    // mirrored duals: pure arithmetic on broadcast data, so the global's
    // stopping rule sees exactly what the locals compute
    let mut w: HashMap<usize, DVector<f64>> = expected
        .iter()
        .map(|&id| (id, DVector::zeros(k)))
        .collect();

    let mut converged = false;
    let mut iter = 0;
    let sqrt_q = (n_areas as f64).sqrt();
    for j in 1..=config.max_iter {
        iter = j;
        let a_j = collect_a(&mut mailbox, j, &mut rejected_duplicates, &mut transcript)?;
        let a_vecs: Vec<DVector<f64>> = expected.iter().map(|id| a_j[id].0.clone()).collect();
        let z_prev = z.clone();
        z = z_update(&a_vecs)?;

        let r_primal = a_vecs.iter().map(|a| (a - &z).norm()).fold(0.0, f64::max);
        let s_dual = config.rho * (&z - &z_prev).norm() * sqrt_q;
        for id in &expected {
            let wi = w.get_mut(id).expect("dual for every area");
            *wi = dual_update(wi, &a_j[id].0, &z, config.rho);
        }

        let a_norm = a_vecs.iter().map(|a| a.norm()).fold(0.0, f64::max);
        let w_norm = w.values().map(|v| v.norm()).fold(0.0, f64::max);
        let eps_pri = (k as f64).sqrt() * config.eps_abs + config.eps_rel * a_norm.max(z.norm());
        let eps_dual = (k as f64).sqrt() * config.eps_abs + config.eps_rel * w_norm;
        converged = r_primal <= eps_pri && s_dual <= eps_dual;

        trace.push(ConsensusState {
            iter: j,
            r_primal,
            s_dual,
            z: expose(&z),
        });
        broadcast(
            &Message::ZBroadcast {
                iter: j,
                z: z.iter().copied().collect(),
                converged,
                r_primal,
                s_dual,
            },
            &mut writers,
            &mut transcript,
        )?;
        if converged {
            break;
        }
    }

    // collect BReports then Bye from every area
    let mut reports: HashMap<usize, Vec<(PairId, Vec<f64>, Vec<u8>)>> =
        expected.iter().map(|&id| (id, Vec::new())).collect();
    let mut bye_raw: HashMap<usize, Vec<u8>> = HashMap::new();
    let mut byes = 0usize;
    let n_pairs_of: HashMap<usize, usize> =
        hellos.values().map(|&(a, n, _)| (a, n)).collect();
    let end = Instant::now() + timeout;
    while byes < n_areas {
        let remaining = end.saturating_duration_since(Instant::now());
        let inbound = mailbox.next(remaining).map_err(|_| {
            let missing: Vec<usize> = expected
                .iter()
                .copied()
                .filter(|id| reports[id].len() < n_pairs_of[id])
                .collect();
            NetError::BarrierTimeout { iter, missing }
        })?;
        match inbound {
            Inbound::Frame(conn, Message::BReport { area_id, pair, b }, raw) => {
                if area_of_conn[&conn] != area_id {
                    return Err(NetError::UnknownArea(area_id));
                }
                if b.len() != k + 1 {
                    return Err(NetError::BadVectorLength {
                        expected: k + 1,
                        got: b.len(),
                    });
                }
                reports
                    .get_mut(&area_id)
                    .expect("declared area")
                    .push((pair, b, raw));
            }
            Inbound::Frame(conn, Message::Bye {}, raw) => {
                bye_raw.insert(area_of_conn[&conn], raw);
                byes += 1;
            }
            Inbound::Frame(_, Message::AUpdate { area_id, iter: j, .. }, _) if j <= iter => {
                // stale retransmission arriving after its barrier closed
                rejected_duplicates += 1;
                eprintln!(
                    "global: rejected duplicate AUpdate from area {area_id} at iteration {j}"
                );
            }
            Inbound::Frame(_, other, _) => {
                return Err(NetError::UnexpectedMessage {
                    expected: "BReport or Bye",
                    got: other.kind().into(),
                });
            }
            Inbound::Gone(conn) => {
                return Err(NetError::BarrierTimeout {
                    iter,
                    missing: vec![area_of_conn[&conn]],
                });
            }
        }
    }

    let mut pairs = Vec::new();
    let mut b = Vec::new();
    for id in &expected {
        for (pair, bh, raw) in &reports[id] {
            maybe_log(&mut transcript, DIR_RECV, raw)?;
            pairs.push(*pair);
            b.push(bh.clone());
        }
    }
    for id in &expected {
        if let Some(raw) = bye_raw.get(id) {
            maybe_log(&mut transcript, DIR_RECV, raw)?;
        }
    }
    if let Some(tr) = transcript.take() {
        tr.finish()?;
    }

    let state = trace.last().expect("trace has the init row").clone();
    Ok(GlobalOutcome {
        estimate: ArxEstimate {
            a: expose(&z),
            b,
            pairs,
            ts: config.ts,
        },
        state: ConsensusState { iter, ..state },
        converged,
        trace,
        rejected_duplicates,
    })
}

/// Connects with retries until the deadline (the global may bind late).
fn connect_with_retry(addr: &str, timeout: Duration) -> Result<TcpStream, NetError> {
    let deadline = Instant::now() + timeout;
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) => {
                if Instant::now() >= deadline {
                    return Err(NetError::Io(e));
                }
                std::thread::sleep(Duration::from_millis(20));
            }
        }
    }
}

/// Runs one area's local processor over TCP: initialize from the blocks,
/// then the lockstep a-update / z-wait / dual / b-refresh rounds until
/// the broadcast says converged or the iteration cap passes. Block
/// preparation (CSV windowing, scaling) happens upstream; this function
/// only speaks the protocol.
pub fn run_local(
    config: &LocalConfig,
    blocks: Vec<RegressionBlock>,
) -> Result<LocalOutcome, NetError> {
    if config.timeout_ms == 0 {
        return Err(NetError::BadConfig("timeout must be positive".into()));
    }
    let timeout = Duration::from_millis(config.timeout_ms);
    let mut transcript = match &config.transcript {
        Some(p) => Some(Transcript::create(p)?),
        None => None,
    };

    let mut area = AreaState::init(config.area_id, blocks, config.rho)?;
    let k = area.order();

    let mut stream = connect_with_retry(&config.global_addr, timeout)?;
    stream.set_read_timeout(Some(timeout))?;

    let send = |stream: &mut TcpStream,
                transcript: &mut Option<Transcript>,
                msg: &Message|
     -> Result<(), NetError> {
        let body = write_frame(stream, msg)?;
        maybe_log(transcript, DIR_SENT, &body)
    };
    let recv_z = |stream: &mut TcpStream,
                  transcript: &mut Option<Transcript>,
                  want_iter: usize|
     -> Result<(Vec<f64>, bool), NetError> {
        let (msg, raw) = read_frame(stream)?;
        match msg {
            Message::ZBroadcast {
                iter,
                z,
                converged,
                ..
            } => {
                if iter != want_iter {
                    return Err(NetError::IterMismatch {
                        area: 0,
                        expected: want_iter,
                        got: iter,
                    });
                }
                if z.len() != k {
                    return Err(NetError::BadVectorLength {
                        expected: k,
                        got: z.len(),
                    });
                }
                maybe_log(transcript, DIR_RECV, &raw)?;
                Ok((z, converged))
            }
            other => Err(NetError::UnexpectedMessage {
                expected: "ZBroadcast",
                got: other.kind().into(),
            }),
        }
    };

    send(
        &mut stream,
        &mut transcript,
        &Message::Hello {
            area_id: config.area_id,
            k,
            n_pairs: area.blocks.len(),
        },
    )?;

    // iteration 0: send the joint-LS init, receive the init mean
    send(
        &mut stream,
        &mut transcript,
        &Message::AUpdate {
            area_id: config.area_id,
            iter: 0,
            a: area.a.iter().copied().collect(),
        },
    )?;
    let (z0, _) = recv_z(&mut stream, &mut transcript, 0)?;
    let mut z = DVector::from_vec(z0);

    let mut converged = false;
    let mut iters = 0;
    for j in 1..=config.max_iter {
        iters = j;
        area.a = a_update(&area, &z)?;
        send(
            &mut stream,
            &mut transcript,
            &Message::AUpdate {
                area_id: config.area_id,
                iter: j,
                a: area.a.iter().copied().collect(),
            },
        )?;
        let (zj, conv) = recv_z(&mut stream, &mut transcript, j)?;
        z = DVector::from_vec(zj);
        area.w = dual_update(&area.w, &area.a, &z, config.rho);
        let a_exposed: Vec<f64> = area.a.iter().map(|v| -v).collect();
        for (h, bl) in area.blocks.iter().enumerate() {
            area.b[h] = solve_b_given_a(bl, &a_exposed)?;
        }
        if conv {
            converged = true;
            break;
        }
    }

    for (h, bl) in area.blocks.iter().enumerate() {
        send(
            &mut stream,
            &mut transcript,
            &Message::BReport {
                area_id: config.area_id,
                pair: bl.pair,
                b: area.b[h].clone(),
            },
        )?;
    }
    send(&mut stream, &mut transcript, &Message::Bye {})?;
    if let Some(tr) = transcript.take() {
        tr.finish()?;
    }

    Ok(LocalOutcome {
        a: area.a.iter().copied().collect(),
        b: area.b,
        converged,
        iters,
    })
}
