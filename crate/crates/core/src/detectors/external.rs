//! Client for out-of-process scorers.
//!
//! The protocol is line-oriented ASCII with LF terminators:
//!
//! ```text
//! client: DTWCERT 1
//! server: OK <name>
//! client: SCORE <T> <C> v_00 v_01 ... v_(T-1)(C-1)
//! server: R <score>        or        E <message>
//! ```
//!
//! Values are row-major and written in shortest round-trip form. A server
//! can be a child process talking over stdio or a TCP listener.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::Duration;

use super::{DetectorError, ScoreFn};
use crate::format::fmt_float;
use crate::series::Window;

pub const HANDSHAKE: &str = "DTWCERT 1";

/// Where to reach the scorer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Transport {
    /// Shell command spawned once per connection; speaks over stdin/stdout.
    Stdio(String),
    /// `host:port` of a listening scorer.
    Tcp(String),
}

#[derive(Clone, Debug)]
pub struct ExternalConfig {
    pub transport: Transport,
    /// Number of connections; more than one lets callers score concurrently.
    pub pool_size: usize,
    /// Per-response deadline.
    pub timeout: Duration,
}

impl ExternalConfig {
    pub fn stdio(command: &str) -> Self {
        Self {
            transport: Transport::Stdio(command.to_owned()),
            pool_size: 1,
            timeout: Duration::from_secs(30),
        }
    }

    pub fn tcp(address: &str) -> Self {
        Self {
            transport: Transport::Tcp(address.to_owned()),
            pool_size: 1,
            timeout: Duration::from_secs(30),
        }
    }
}

/// Encodes a window as a `SCORE` request line, without the terminator.
pub fn format_request(x: &Window) -> String {
    let mut line = format!("SCORE {} {}", x.len(), x.channels());
    for v in x.values() {
        line.push(' ');
        line.push_str(&fmt_float(*v));
    }
    line
}

/// Decodes one response line.
pub fn parse_response(line: &str) -> Result<f64, DetectorError> {
    let line = line.strip_suffix('\r').unwrap_or(line);
    if let Some(rest) = line.strip_prefix("R ") {
        let v: f64 = rest
            .parse()
            .map_err(|_| DetectorError::Protocol(format!("bad score in {line:?}")))?;
        if !v.is_finite() {
            return Err(DetectorError::NonFiniteScore);
        }
        Ok(v)
    } else if let Some(msg) = line.strip_prefix("E ") {
        Err(DetectorError::Remote(msg.to_owned()))
    } else if line == "E" {
        Err(DetectorError::Remote(String::new()))
    } else {
        Err(DetectorError::Protocol(format!("unexpected response {line:?}")))
    }
}

struct Connection {
    writer: Box<dyn Write + Send>,
    lines: Receiver<std::io::Result<String>>,
    child: Option<Child>,
    timeout: Duration,
}

impl Connection {
    fn open(cfg: &ExternalConfig) -> Result<(Self, String), DetectorError> {
        let (writer, reader, child): (Box<dyn Write + Send>, Box<dyn Read + Send>, Option<Child>) = match &cfg.transport {
            Transport::Stdio(cmd) => {
                let mut child = Command::new("sh")
                    .arg("-c")
                    .arg(cmd)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| DetectorError::ConnectFailure(format!("{cmd}: {e}")))?;
                let stdin: ChildStdin = child.stdin.take().expect("stdin is piped");
                let stdout = child.stdout.take().expect("stdout is piped");
                (Box::new(stdin), Box::new(stdout), Some(child))
            }
            Transport::Tcp(addr) => {
                let stream = TcpStream::connect(addr).map_err(|e| DetectorError::ConnectFailure(format!("{addr}: {e}")))?;
                let _ = stream.set_nodelay(true);
                let reader = stream
                    .try_clone()
                    .map_err(|e| DetectorError::ConnectFailure(format!("{addr}: {e}")))?;
                (Box::new(stream), Box::new(reader), None)
            }
        };
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            for line in BufReader::new(reader).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        let mut conn = Connection {
            writer,
            lines: rx,
            child,
            timeout: cfg.timeout,
        };
        conn.send(&[HANDSHAKE.to_owned()])?;
        let reply = conn.recv()?;
        let name = reply
            .strip_prefix("OK ")
            .map(|s| s.trim_end_matches('\r').to_owned())
            .ok_or_else(|| DetectorError::Protocol(format!("bad handshake reply {reply:?}")))?;
        Ok((conn, name))
    }

    fn send(&mut self, lines: &[String]) -> Result<(), DetectorError> {
        let mut buf = String::new();
        for l in lines {
            buf.push_str(l);
            buf.push('\n');
        }
        self.writer
            .write_all(buf.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| DetectorError::ConnectFailure(format!("write failed: {e}")))
    }

    fn recv(&mut self) -> Result<String, DetectorError> {
        match self.lines.recv_timeout(self.timeout) {
            Ok(Ok(line)) => Ok(line),
            Ok(Err(e)) => Err(DetectorError::ConnectFailure(format!("read failed: {e}"))),
            Err(RecvTimeoutError::Timeout) => Err(DetectorError::Timeout(self.timeout.as_millis() as u64)),
            Err(RecvTimeoutError::Disconnected) => Err(DetectorError::ConnectFailure("scorer closed the connection".into())),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

struct Pool {
    idle: Vec<Connection>,
    alive: usize,
}

/// A pool of protocol connections acting as one score function.
///
/// Each connection carries one request stream at a time. A connection that
/// fails or times out is discarded, since its stream position is unknown.
pub struct ExternalScorer {
    name: String,
    pool: Mutex<Pool>,
    ready: Condvar,
    size: usize,
}

impl ExternalScorer {
    pub fn connect(cfg: &ExternalConfig) -> Result<Self, DetectorError> {
        if cfg.pool_size == 0 {
            return Err(DetectorError::InvalidParam("pool size must be at least 1".into()));
        }
        let mut idle = Vec::with_capacity(cfg.pool_size);
        let mut name = String::new();
        for _ in 0..cfg.pool_size {
            let (conn, n) = Connection::open(cfg)?;
            name = n;
            idle.push(conn);
        }
        Ok(Self {
            name,
            pool: Mutex::new(Pool {
                idle,
                alive: cfg.pool_size,
            }),
            ready: Condvar::new(),
            size: cfg.pool_size,
        })
    }

    fn checkout(&self) -> Result<Connection, DetectorError> {
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        loop {
            if let Some(c) = pool.idle.pop() {
                return Ok(c);
            }
            if pool.alive == 0 {
                return Err(DetectorError::ConnectFailure("all scorer connections have failed".into()));
            }
            pool = self.ready.wait(pool).expect("pool lock poisoned");
        }
    }

    fn checkin(&self, conn: Option<Connection>) {
        let mut pool = self.pool.lock().expect("pool lock poisoned");
        match conn {
            Some(c) => pool.idle.push(c),
            None => pool.alive -= 1,
        }
        self.ready.notify_one();
    }

    /// Runs `f` on a pooled connection, dropping the connection on
    /// transport-level failures.
    fn with_connection<T>(&self, f: impl FnOnce(&mut Connection) -> Result<T, DetectorError>) -> Result<T, DetectorError> {
        let mut conn = self.checkout()?;
        let out = f(&mut conn);
        let healthy = !matches!(
            out,
            Err(DetectorError::Timeout(_) | DetectorError::ConnectFailure(_) | DetectorError::Protocol(_))
        );
        self.checkin(healthy.then_some(conn));
        out
    }
}

impl ScoreFn for ExternalScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn reentrant(&self) -> bool {
        self.size > 1
    }

    fn score(&self, x: &Window) -> Result<f64, DetectorError> {
        self.with_connection(|c| {
            c.send(&[format_request(x)])?;
            parse_response(&c.recv()?)
        })
    }

    /// Writes all requests before reading, so the round trips overlap.
    fn score_batch(&self, xs: &[Window]) -> Result<Vec<f64>, DetectorError> {
        if xs.is_empty() {
            return Ok(Vec::new());
        }
        self.with_connection(|c| {
            let requests: Vec<String> = xs.iter().map(format_request).collect();
            c.send(&requests)?;
            // read every response even after an error so the stream stays aligned
            let mut first_err = None;
            let mut out = Vec::with_capacity(xs.len());
            for _ in xs {
                let line = c.recv()?;
                match parse_response(&line) {
                    Ok(v) => out.push(v),
                    Err(e @ DetectorError::Protocol(_)) => return Err(e),
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            match first_err {
                Some(e) => Err(e),
                None => Ok(out),
            }
        })
    }
}
