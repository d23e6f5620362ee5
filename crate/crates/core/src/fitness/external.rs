use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};

use crate::curve::ScaleSchedule;

use super::protocol::{to_line, Handshake, HandshakeReply, Request, Response};
use super::{AccuracyTriple, EvalError, Evaluator};

/// Where an external evaluator lives.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `host:port` of a TCP server.
    Tcp(String),
    /// Program and arguments of a subprocess speaking over stdin/stdout.
    Command(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = String;

    /// Accepts `tcp:<host:port>` / `<host:port>` or `cmd:<argv>`; argv is split on whitespace.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if let Some(argv) = s.strip_prefix("cmd:") {
            let parts: Vec<String> = argv.split_whitespace().map(str::to_string).collect();
            if parts.is_empty() {
                return Err("empty command".into());
            }
            return Ok(Self::Command(parts));
        }
        let addr = s.strip_prefix("tcp:").unwrap_or(s);
        if addr.is_empty() {
            return Err("empty address".into());
        }
        Ok(Self::Tcp(addr.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct ExternalOptions {
    pub timeout: Duration,
    /// Retries after the first failed attempt.
    pub retries: u32,
}

impl Default for ExternalOptions {
    fn default() -> Self {
        Self {
            timeout: Duration::from_secs(300),
            retries: 3,
        }
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    socket: Option<TcpStream>,
}

impl Connection {
    fn open(endpoint: &Endpoint) -> Result<Self, EvalError> {
        let transport = |e: std::io::Error| EvalError::Transport(e.to_string());
        let mut socket = None;
        let (reader, writer, child): (Box<dyn Read + Send>, Box<dyn Write + Send>, _) =
            match endpoint {
                Endpoint::Tcp(addr) => {
                    let stream = TcpStream::connect(addr).map_err(transport)?;
                    let _ = stream.set_nodelay(true);
                    let read_half = stream.try_clone().map_err(transport)?;
                    socket = Some(stream.try_clone().map_err(transport)?);
                    (Box::new(read_half), Box::new(stream), None)
                }
                Endpoint::Command(argv) => {
                    let mut child = Command::new(&argv[0])
                        .args(&argv[1..])
                        .stdin(Stdio::piped())
                        .stdout(Stdio::piped())
                        .stderr(Stdio::inherit())
                        .spawn()
                        .map_err(transport)?;
                    let stdin = child.stdin.take().expect("piped stdin");
                    let stdout = child.stdout.take().expect("piped stdout");
                    (Box::new(stdout), Box::new(stdin), Some(child))
                }
            };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                let stop = line.is_err();
                if tx.send(line).is_err() || stop {
                    break;
                }
            }
        });
        Ok(Self {
            writer,
            lines: rx,
            child,
            socket,
        })
    }

    fn send_line(&mut self, line: &str) -> Result<(), EvalError> {
        let io = |e: std::io::Error| EvalError::Transport(e.to_string());
        self.writer.write_all(line.as_bytes()).map_err(io)?;
        self.writer.write_all(b"\n").map_err(io)?;
        self.writer.flush().map_err(io)
    }

    fn recv_line(&self, timeout: Duration) -> Result<String, EvalError> {
        match self.lines.recv_timeout(timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(EvalError::Transport(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(EvalError::Timeout(timeout)),
            Err(RecvTimeoutError::Disconnected) => {
                Err(EvalError::Transport("evaluator closed the connection".into()))
            }
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(socket) = &self.socket {
            let _ = socket.shutdown(std::net::Shutdown::Both);
        }
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct ClientState {
    conn: Option<Connection>,
    next_id: u64,
}

/// Client for an evaluator process or server speaking the line protocol.
///
/// Requests are serialized over one connection. A request is retried on
/// timeouts, transport faults, protocol violations (including a response
/// whose id does not match) and server-reported errors. Any failure other
/// than a server-reported error drops the connection, and the next attempt
/// reconnects and repeats the handshake.
pub struct ExternalEvaluator {
    endpoint: Endpoint,
    handshake: Handshake,
    options: ExternalOptions,
    state: Mutex<ClientState>,
}

impl ExternalEvaluator {
    /// Connects and performs the handshake immediately.
    pub fn connect(
        endpoint: Endpoint,
        n_layers: usize,
        first_scaled_layer: usize,
        options: ExternalOptions,
    ) -> Result<Self, EvalError> {
        let this = Self {
            endpoint,
            handshake: Handshake::new(n_layers, first_scaled_layer),
            options,
            state: Mutex::new(ClientState {
                conn: None,
                next_id: 1,
            }),
        };
        {
            let mut state = this.state.lock().expect("fresh mutex");
            state.conn = Some(this.open_and_handshake()?);
        }
        Ok(this)
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn open_and_handshake(&self) -> Result<Connection, EvalError> {
        let mut conn = Connection::open(&self.endpoint)?;
        conn.send_line(&to_line(&self.handshake))?;
        let line = conn.recv_line(self.options.timeout)?;
        let reply: HandshakeReply = serde_json::from_str(&line)
            .map_err(|e| EvalError::Protocol(format!("bad handshake reply `{line}`: {e}")))?;
        if !reply.ok {
            return Err(EvalError::Handshake(
                reply.reason.unwrap_or_else(|| "no reason given".into()),
            ));
        }
        Ok(conn)
    }

    fn attempt(&self, state: &mut ClientState, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        if state.conn.is_none() {
            state.conn = Some(self.open_and_handshake()?);
        }
        let id = state.next_id;
        state.next_id += 1;
        let request = Request {
            id,
            scales: schedule.scales().to_vec(),
            first_scaled_layer: schedule.first_scaled_layer(),
        };
        let conn = state.conn.as_mut().expect("connected above");
        conn.send_line(&to_line(&request))?;
        let line = conn.recv_line(self.options.timeout)?;
        let response: Response = serde_json::from_str(&line)
            .map_err(|e| EvalError::Protocol(format!("unparseable response `{line}`: {e}")))?;
        response.into_triple(id)
    }
}

impl Evaluator for ExternalEvaluator {
    fn evaluate(&self, schedule: &ScaleSchedule) -> Result<AccuracyTriple, EvalError> {
        if schedule.len() != self.handshake.n_layers {
            return Err(EvalError::InvalidSchedule(format!(
                "handshake declared {} layers, schedule has {}",
                self.handshake.n_layers,
                schedule.len()
            )));
        }
        let mut state = self.state.lock().unwrap_or_else(|p| p.into_inner());
        let attempts = self.options.retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.attempt(&mut state, schedule) {
                Ok(triple) => return Ok(triple),
                Err(err) => {
                    warn!("external evaluator attempt {attempt}/{attempts} failed: {err}");
                    if matches!(err, EvalError::Handshake(_)) {
                        return Err(err);
                    }
                    if !matches!(err, EvalError::Remote { .. }) {
                        debug!("dropping connection to {:?}", self.endpoint);
                        state.conn = None;
                    }
                    last = Some(err);
                }
            }
        }
        Err(EvalError::Exhausted {
            attempts,
            last: Box::new(last.expect("at least one attempt")),
        })
    }

    fn describe(&self) -> String {
        match &self.endpoint {
            Endpoint::Tcp(addr) => format!("external(tcp:{addr})"),
            Endpoint::Command(argv) => format!("external(cmd:{})", argv.join(" ")),
        }
    }
}
