//! Deterministic network simulator with virtual clocks.
//!
//! Parties run as plain blocking code on OS threads, but time is virtual:
//! each party carries a local clock that only advances when a message is
//! received, to `max(local, send_time + one_way_delay + transfer_time)`,
//! with FIFO ordering per directed link. Because every reported quantity is a
//! pure function of per-party program order and per-link FIFO order, results
//! are bit-identical across runs regardless of OS scheduling.
//!
//! Every frame is also appended to a per-link transcript so tests can audit
//! exactly which bytes crossed the network.

use super::{Frame, Meter, MeterState, Net};
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::mpsc;
use std::sync::{Arc, Mutex};
use std::time::Duration;

/// How long a blocked receive waits before declaring the protocol dead.
const RECV_TIMEOUT: Duration = Duration::from_secs(60);

/// Link timing: a constant one-way delay plus an optional bandwidth term.
/// Jitter is fixed at zero so elapsed virtual time is reproducible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub one_way_ns: u64,
    pub bandwidth_bytes_per_sec: Option<u64>,
}

impl LatencyModel {
    /// Zero-delay, infinite-bandwidth loopback.
    pub fn ideal() -> LatencyModel {
        LatencyModel { one_way_ns: 0, bandwidth_bytes_per_sec: None }
    }

    pub fn from_ms(ms: u64) -> LatencyModel {
        LatencyModel { one_way_ns: ms * 1_000_000, bandwidth_bytes_per_sec: None }
    }

    pub fn with_bandwidth(mut self, bytes_per_sec: u64) -> LatencyModel {
        self.bandwidth_bytes_per_sec = Some(bytes_per_sec);
        self
    }

    /// Serialization time for `bytes`, rounded up to whole nanoseconds.
    pub fn transfer_ns(&self, bytes: u64) -> u64 {
        match self.bandwidth_bytes_per_sec {
            None => 0,
            Some(b) => {
                let num = bytes as u128 * 1_000_000_000u128;
                ((num + b as u128 - 1) / b as u128) as u64
            }
        }
    }
}

/// One recorded frame: its direction and exact wire bytes.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub from: usize,
    pub to: usize,
    pub bytes: Vec<u8>,
}

impl Envelope {
    pub fn frame(&self) -> Result<Frame> {
        Frame::decode(&self.bytes)
    }
}

type LinkLog = Arc<Mutex<Vec<Envelope>>>;

/// Handle onto all per-link transcripts of one simulated network.
#[derive(Clone)]
pub struct Transcript {
    n: usize,
    links: Vec<LinkLog>,
}

impl Transcript {
    /// All envelopes, ordered by (from, to, send sequence) — deterministic.
    pub fn collect(&self) -> Vec<Envelope> {
        let mut out = Vec::new();
        for from in 0..self.n {
            for to in 0..self.n {
                if from == to {
                    continue;
                }
                let log = self.links[from * self.n + to].lock().unwrap();
                out.extend(log.iter().cloned());
            }
        }
        out
    }

    pub fn total_bytes(&self) -> u64 {
        self.collect().iter().map(|e| e.bytes.len() as u64).sum()
    }

    /// True when any recorded frame carries `needle` as a contiguous byte
    /// run. Used by privacy checks scanning for plaintext leaks.
    pub fn contains(&self, needle: &[u8]) -> bool {
        !needle.is_empty()
            && self
                .collect()
                .iter()
                .any(|e| e.bytes.windows(needle.len()).any(|w| w == needle))
    }
}

struct Inbound {
    rx: mpsc::Receiver<(Vec<u8>, u64)>,
    last_delivery_ns: u64,
}

/// One party's endpoint in a simulated network.
pub struct SimParty {
    me: usize,
    n: usize,
    latency: LatencyModel,
    outs: Vec<Option<mpsc::Sender<(Vec<u8>, u64)>>>,
    ins: Vec<Option<Inbound>>,
    logs: Vec<Option<LinkLog>>,
    meter: MeterState,
    local_time_ns: u64,
}

impl SimParty {
    pub fn local_time_ns(&self) -> u64 {
        self.local_time_ns
    }
}

impl Net for SimParty {
    fn me(&self) -> usize {
        self.me
    }

    fn n_parties(&self) -> usize {
        self.n
    }

    fn send(&mut self, to: usize, frame: Frame) -> Result<()> {
        if to == self.me || to >= self.n {
            return Err(Error::Parameter(format!("party {} cannot send to {to}", self.me)));
        }
        let bytes = frame.encode();
        self.meter.on_send(bytes.len());
        if let Some(log) = &self.logs[to] {
            log.lock().unwrap().push(Envelope { from: self.me, to, bytes: bytes.clone() });
        }
        self.outs[to]
            .as_ref()
            .expect("sender exists for peer")
            .send((bytes, self.local_time_ns))
            .map_err(|_| Error::Transport(format!("link {} -> {to} closed", self.me)))
    }

    fn recv(&mut self, from: usize) -> Result<Frame> {
        if from == self.me || from >= self.n {
            return Err(Error::Parameter(format!("party {} cannot recv from {from}", self.me)));
        }
        let inbound = self.ins[from].as_mut().expect("receiver exists for peer");
        let (bytes, sent_at) = inbound.rx.recv_timeout(RECV_TIMEOUT).map_err(|e| {
            Error::Transport(format!("recv from {from} at party {}: {e}", self.me))
        })?;
        let arrival = sent_at + self.latency.one_way_ns + self.latency.transfer_ns(bytes.len() as u64);
        let delivery = arrival.max(inbound.last_delivery_ns);
        inbound.last_delivery_ns = delivery;
        self.local_time_ns = self.local_time_ns.max(delivery);
        self.meter.on_recv(bytes.len());
        Frame::decode(&bytes)
    }

    fn meter(&self) -> Meter {
        self.meter.snapshot()
    }
}

/// Build a fully connected simulated network of `n` parties.
pub fn sim_net(n: usize, latency: LatencyModel) -> (Vec<SimParty>, Transcript) {
    assert!(n >= 2, "a network needs at least two parties");
    let mut txs: Vec<Vec<Option<mpsc::Sender<(Vec<u8>, u64)>>>> = (0..n)
        .map(|_| (0..n).map(|_| None).collect())
        .collect();
    let mut rxs: Vec<Vec<Option<Inbound>>> = (0..n)
        .map(|_| (0..n).map(|_| None).collect())
        .collect();
    let mut links: Vec<LinkLog> = Vec::with_capacity(n * n);
    for from in 0..n {
        for to in 0..n {
            links.push(Arc::new(Mutex::new(Vec::new())));
            if from == to {
                continue;
            }
            let (tx, rx) = mpsc::channel();
            txs[from][to] = Some(tx);
            rxs[to][from] = Some(Inbound { rx, last_delivery_ns: 0 });
        }
    }
    let transcript = Transcript { n, links: links.clone() };
    let mut parties = Vec::with_capacity(n);
    for (me, (outs, ins)) in txs.into_iter().zip(rxs).enumerate() {
        let logs = (0..n)
            .map(|to| if to == me { None } else { Some(links[me * n + to].clone()) })
            .collect();
        parties.push(SimParty {
            me,
            n,
            latency,
            outs,
            ins,
            logs,
            meter: MeterState::default(),
            local_time_ns: 0,
        });
    }
    (parties, transcript)
}

/// Result of running every party of a simulated protocol to completion.
pub struct SimRun<R> {
    pub results: Vec<R>,
    pub meters: Vec<Meter>,
    pub local_times_ns: Vec<u64>,
    /// Protocol elapsed virtual time: the slowest party's clock.
    pub elapsed_ns: u64,
    pub transcript: Transcript,
}

/// Run one closure per party on its own thread and gather results, meters,
/// clocks, and the transcript. Any party error or panic fails the whole run.
pub fn run_sim<R, F>(latency: LatencyModel, fns: Vec<F>) -> Result<SimRun<R>>
where
    R: Send,
    F: FnOnce(&mut SimParty) -> Result<R> + Send,
{
    let n = fns.len();
    let (parties, transcript) = sim_net(n, latency);
    let mut outcomes: Vec<Option<(R, Meter, u64)>> = (0..n).map(|_| None).collect();
    let joined: Vec<std::thread::Result<Result<(R, Meter, u64)>>> = std::thread::scope(|s| {
        let handles: Vec<_> = fns
            .into_iter()
            .zip(parties)
            .map(|(f, mut party)| {
                s.spawn(move || {
                    let r = f(&mut party)?;
                    Ok((r, party.meter(), party.local_time_ns()))
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join()).collect()
    });
    for (i, j) in joined.into_iter().enumerate() {
        match j {
            Err(_) => return Err(Error::Protocol(format!("party {i} panicked"))),
            Ok(Err(e)) => return Err(e),
            Ok(Ok(v)) => outcomes[i] = Some(v),
        }
    }
    let mut results = Vec::with_capacity(n);
    let mut meters = Vec::with_capacity(n);
    let mut local_times_ns = Vec::with_capacity(n);
    for o in outcomes {
        let (r, m, t) = o.unwrap();
        results.push(r);
        meters.push(m);
        local_times_ns.push(t);
    }
    let elapsed_ns = local_times_ns.iter().copied().max().unwrap_or(0);
    Ok(SimRun { results, meters, local_times_ns, elapsed_ns, transcript })
}
