//! Line-delimited JSON wire protocol shared by `serve` (a remote trainer
//! drives the environment) and external policies (the simulator asks a
//! remote endpoint for actions). `PROTOCOL.md` documents every message.

use std::collections::{BTreeMap, HashMap};
use std::io::{self, BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::control::{Action, ConflictEvent};
use crate::demand::DemandSpec;
use crate::dynamics::VehicleId;
use crate::env::{obs_dim, AgentObs, Env, EpisodeConfig, DEFAULT_WAIT_NORMALIZER_S};
use crate::harness::MetricsFrame;
use crate::policies::{AllStop, Controller, FcfsController};
use crate::topology::{load_scenario, paper4, NetworkSpec};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("no reply within {0:?}")]
    Timeout(Duration),
    #[error("malformed message, field `{field}`: {message}")]
    Malformed { field: String, message: String },
    #[error("peer reported an error: {0}")]
    Remote(String),
    #[error("peer closed the connection")]
    Closed,
    #[error("bad endpoint {0:?}")]
    Endpoint(String),
}

fn malformed(field: impl Into<String>, message: impl Into<String>) -> ProtocolError {
    ProtocolError::Malformed { field: field.into(), message: message.into() }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetRequest {
    /// `paper4` for the bundled scenario, otherwise a scenario file path.
    pub scenario: String,
    pub seed: u64,
    pub rv_rate: f64,
    /// Episode length in ticks.
    pub horizon: u64,
    #[serde(default)]
    pub warmup: f64,
    #[serde(default = "one")]
    pub action_interval: u64,
    #[serde(default = "unit_dt")]
    pub dt: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// `fcfs` or `stop`.
    #[serde(default = "default_warmup_policy")]
    pub warmup_policy: String,
}

fn one() -> u64 {
    1
}
fn unit_dt() -> f64 {
    1.0
}
fn default_gamma() -> f64 {
    0.99
}
fn default_warmup_policy() -> String {
    "fcfs".into()
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TransitionInfo {
    pub frames: Vec<MetricsFrame>,
    pub conflicts: Vec<ConflictEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello { obs_dim: usize, scenario: String, seed: u64, rv_rate: f64 },
    Ready,
    Reset(ResetRequest),
    Obs { t: f64, obs_dim: usize, agents: Vec<AgentObs>, done: bool },
    Act { actions: BTreeMap<VehicleId, Action> },
    Transition { t: f64, obs: Vec<AgentObs>, rewards: BTreeMap<VehicleId, f64>, done: bool, info: TransitionInfo },
    Error { message: String },
    Close,
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialize");
        s.push('\n');
        s
    }
}

/// Parses one line, naming the offending field on failure.
pub fn decode(line: &str) -> Result<Message, ProtocolError> {
    let value: Value = serde_json::from_str(line).map_err(|e| malformed("<line>", e.to_string()))?;
    let obj = value.as_object().ok_or_else(|| malformed("<line>", "expected a JSON object"))?;
    let kind = obj.get("type").ok_or_else(|| malformed("type", "missing"))?;
    let kind = kind.as_str().ok_or_else(|| malformed("type", "expected a string"))?;
    if kind == "act" {
        return Ok(Message::Act { actions: decode_actions(obj.get("actions"))? });
    }
    serde_json::from_value(value.clone()).map_err(|e| {
        let msg = e.to_string();
        // serde names missing fields in backticks.
        let field = msg.split('`').nth(1).filter(|_| msg.contains("field")).unwrap_or("type");
        malformed(field, msg.clone())
    })
}

fn decode_actions(value: Option<&Value>) -> Result<BTreeMap<VehicleId, Action>, ProtocolError> {
    let map = value.ok_or_else(|| malformed("actions", "missing"))?;
    let map = map.as_object().ok_or_else(|| malformed("actions", "expected an object of id → \"Stop\"|\"Go\""))?;
    let mut out = BTreeMap::new();
    for (k, v) in map {
        let field = format!("actions.{k}");
        let id: u64 = k.parse().map_err(|_| malformed(&field, "agent id must be a decimal integer string"))?;
        let action = match v.as_str() {
            Some("Stop") => Action::Stop,
            Some("Go") => Action::Go,
            _ => return Err(malformed(&field, format!("expected \"Stop\" or \"Go\", got {v}"))),
        };
        out.insert(VehicleId(id), action);
    }
    Ok(out)
}

fn read_message(reader: &mut impl BufRead, timeout: Option<Duration>) -> Result<Message, ProtocolError> {
    let mut line = String::new();
    loop {
        line.clear();
        let n = reader.read_line(&mut line).map_err(|e| match e.kind() {
            io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => ProtocolError::Timeout(timeout.unwrap_or_default()),
            _ => ProtocolError::Io(e),
        })?;
        if n == 0 {
            return Err(ProtocolError::Closed);
        }
        if !line.trim().is_empty() {
            return decode(line.trim());
        }
    }
}

fn strip_scheme(endpoint: &str) -> Result<&str, ProtocolError> {
    let addr = endpoint.strip_prefix("tcp://").unwrap_or(endpoint);
    if addr.is_empty() || !addr.contains(':') {
        return Err(ProtocolError::Endpoint(endpoint.to_string()));
    }
    Ok(addr)
}

/// Connection to a remote policy endpoint.
pub struct PolicyClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    obs_dim: usize,
    timeout: Duration,
}

impl PolicyClient {
    /// Connects and performs the `hello`/`ready` handshake.
    pub fn connect(endpoint: &str, timeout: Duration, net: &NetworkSpec, seed: u64, rv_rate: f64) -> Result<Self, ProtocolError> {
        let addr = strip_scheme(endpoint)?.to_socket_addrs()?.next().ok_or_else(|| ProtocolError::Endpoint(endpoint.to_string()))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        let mut client = Self { reader: BufReader::new(stream.try_clone()?), writer: stream, obs_dim: obs_dim(net), timeout };
        client.send(&Message::Hello { obs_dim: client.obs_dim, scenario: net.name.clone(), seed, rv_rate })?;
        match client.receive()? {
            Message::Ready => Ok(client),
            Message::Error { message } => Err(ProtocolError::Remote(message)),
            other => Err(malformed("type", format!("expected ready, got {}", type_name(&other)))),
        }
    }

    fn send(&mut self, m: &Message) -> Result<(), ProtocolError> {
        self.writer.write_all(m.to_line().as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    fn receive(&mut self) -> Result<Message, ProtocolError> {
        read_message(&mut self.reader, Some(self.timeout))
    }

    /// Sends observations and waits for the matching `act`.
    pub fn query(&mut self, t: f64, agents: &[AgentObs]) -> Result<HashMap<VehicleId, Action>, ProtocolError> {
        self.send(&Message::Obs { t, obs_dim: self.obs_dim, agents: agents.to_vec(), done: false })?;
        match self.receive()? {
            Message::Act { actions } => Ok(actions.into_iter().collect()),
            Message::Error { message } => Err(ProtocolError::Remote(message)),
            other => Err(malformed("type", format!("expected act, got {}", type_name(&other)))),
        }
    }
}

impl Drop for PolicyClient {
    fn drop(&mut self) {
        let _ = self.send(&Message::Close);
    }
}

fn type_name(m: &Message) -> String {
    serde_json::to_value(m).ok().and_then(|v| v.get("type").and_then(Value::as_str).map(String::from)).unwrap_or_default()
}

/// Server side of one connection: owns at most one environment.
#[derive(Default)]
pub struct Session {
    env: Option<Env>,
}

impl Session {
    pub fn new() -> Self {
        Self::default()
    }

    /// Handles one request line. `None` means the peer asked to close.
    pub fn handle_line(&mut self, line: &str) -> Option<Message> {
        let reply = match decode(line) {
            Ok(Message::Close) => return None,
            Ok(Message::Reset(req)) => self.reset(req),
            Ok(Message::Act { actions }) => self.act(actions),
            Ok(other) => Err(format!("unexpected message type {:?}", type_name(&other))),
            Err(e) => Err(e.to_string()),
        };
        Some(reply.unwrap_or_else(|message| Message::Error { message }))
    }

    fn reset(&mut self, req: ResetRequest) -> Result<Message, String> {
        let net = if req.scenario == "paper4" { paper4() } else { load_scenario(&req.scenario).map_err(|e| e.to_string())? };
        let net = Arc::new(net);
        let demand = DemandSpec::from_network(&net, req.rv_rate, req.seed).map_err(|e| e.to_string())?;
        let config = EpisodeConfig {
            horizon_ticks: req.horizon,
            gamma: req.gamma,
            warmup_s: req.warmup,
            action_interval: req.action_interval,
            dt: req.dt,
            wait_normalizer_s: DEFAULT_WAIT_NORMALIZER_S,
        };
        let warmup: Box<dyn Controller + Send> = match req.warmup_policy.as_str() {
            "fcfs" => Box::new(FcfsController),
            "stop" => Box::new(AllStop),
            other => return Err(format!("field `warmup_policy`: unknown policy {other:?} (expected fcfs or stop)")),
        };
        let env = Env::new(net, demand, config, warmup).map_err(|e| e.to_string())?;
        let reply = Message::Obs { t: env.world().time_s(), obs_dim: env.obs_dim(), agents: env.observations(), done: env.done() };
        self.env = Some(env);
        Ok(reply)
    }

    fn act(&mut self, actions: BTreeMap<VehicleId, Action>) -> Result<Message, String> {
        let env = self.env.as_mut().ok_or("act before reset")?;
        let actions: HashMap<VehicleId, Action> = actions.into_iter().collect();
        let t = env.step(&actions).map_err(|e| e.to_string())?;
        Ok(Message::Transition {
            t: t.info.t_s,
            obs: t.observations,
            rewards: t.rewards.iter().map(|r| (r.id, r.terms.total)).collect(),
            done: t.done,
            info: TransitionInfo { frames: t.info.frames, conflicts: t.info.conflicts },
        })
    }
}

/// Runs one session over a reader/writer pair until `close` or end of input.
pub fn run_session(reader: impl BufRead, mut writer: impl Write) -> Result<(), ProtocolError> {
    let mut session = Session::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match session.handle_line(&line) {
            Some(reply) => {
                writer.write_all(reply.to_line().as_bytes())?;
                writer.flush()?;
            }
            None => break,
        }
    }
    Ok(())
}

/// Serves every accepted connection on its own thread, forever.
pub fn serve_on(listener: TcpListener) -> Result<(), ProtocolError> {
    for stream in listener.incoming() {
        let stream = stream?;
        std::thread::spawn(move || {
            let Ok(read_half) = stream.try_clone() else { return };
            let _ = stream.set_nodelay(true);
            let _ = run_session(BufReader::new(read_half), stream);
        });
    }
    Ok(())
}

/// `stdio` (or `-`) serves one session on standard streams; anything else is
/// a TCP address, optionally prefixed with `tcp://`.
pub fn serve(listen: &str) -> Result<(), ProtocolError> {
    if listen == "stdio" || listen == "-" {
        return run_session(io::stdin().lock(), io::stdout().lock());
    }
    let listener = TcpListener::bind(strip_scheme(listen)?)?;
    serve_on(listener)
}
