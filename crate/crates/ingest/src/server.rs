use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::http::{self, BodyKind, ChunkedReader};
use crate::session::{read_line, run_session, Line, SessionReply};
use crate::store::Store;
use crate::IngestError;

/// How often blocked reads and the accept loop look at the shutdown flag.
const POLL: Duration = Duration::from_millis(50);
/// Longest wait for a client to finish sending after its session ended.
const DRAIN_LIMIT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub bind: String,
    pub storage_root: PathBuf,
    /// Sessions beyond this many in flight are refused.
    pub max_sessions: usize,
}

impl ServerConfig {
    pub const DEFAULT_BIND: &'static str = "127.0.0.1:7878";
    pub const DEFAULT_MAX_SESSIONS: usize = 64;

    pub fn new(storage_root: impl Into<PathBuf>) -> Self {
        ServerConfig {
            bind: Self::DEFAULT_BIND.into(),
            storage_root: storage_root.into(),
            max_sessions: Self::DEFAULT_MAX_SESSIONS,
        }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.max_sessions == 0 {
            return Err(IngestError::Config("max sessions must be at least 1".into()));
        }
        if self.bind.is_empty() {
            return Err(IngestError::Config("bind address is empty".into()));
        }
        Ok(())
    }
}

/// Sets the flag that stops the accept loop and flushes open sessions.
#[derive(Debug, Clone)]
pub struct ShutdownHandle(Arc<AtomicBool>);

impl ShutdownHandle {
    pub fn shutdown(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_shutdown(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }
}

struct Shared {
    store: Store,
    shutdown: Arc<AtomicBool>,
    active: AtomicUsize,
    max_sessions: usize,
}

/// Releases a session slot on drop.
struct Slot<'a>(&'a AtomicUsize);

impl Drop for Slot<'_> {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}

impl Shared {
    fn acquire(&self) -> Option<Slot<'_>> {
        self.active
            .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| (n < self.max_sessions).then_some(n + 1))
            .ok()
            .map(|_| Slot(&self.active))
    }

    fn session<R: BufRead>(&self, reader: &mut R) -> SessionReply {
        match self.acquire() {
            Some(_slot) => run_session(reader, &self.store, &self.shutdown),
            None => SessionReply::Error {
                error: format!("server busy: {} sessions in flight", self.max_sessions),
            },
        }
    }
}

pub struct Server {
    listener: TcpListener,
    shared: Arc<Shared>,
}

impl Server {
    pub fn bind(config: &ServerConfig) -> Result<Server, IngestError> {
        config.validate()?;
        let store = Store::open(&config.storage_root)?;
        let listener = TcpListener::bind(&config.bind)
            .map_err(|e| IngestError::Config(format!("cannot bind {}: {e}", config.bind)))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| IngestError::Config(format!("listener: {e}")))?;
        Ok(Server {
            listener,
            shared: Arc::new(Shared {
                store,
                shutdown: Arc::new(AtomicBool::new(false)),
                active: AtomicUsize::new(0),
                max_sessions: config.max_sessions,
            }),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.listener.local_addr().expect("bound listener has an address")
    }

    pub fn shutdown_handle(&self) -> ShutdownHandle {
        ShutdownHandle(self.shared.shutdown.clone())
    }

    /// Accepts connections until shutdown, then waits for every connection
    /// thread; sessions still open are persisted as truncated.
    pub fn run(self) -> Result<(), IngestError> {
        let mut workers: Vec<JoinHandle<()>> = Vec::new();
        while !self.shared.shutdown.load(Ordering::SeqCst) {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    let shared = self.shared.clone();
                    workers.push(thread::spawn(move || {
                        if let Err(e) = handle_connection(stream, &shared) {
                            log::debug!("connection {peer}: {e}");
                        }
                    }));
                    workers.retain(|w| !w.is_finished());
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(POLL),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => log::warn!("accept failed: {e}"),
            }
        }
        for w in workers {
            let _ = w.join();
        }
        log::info!("ingest server stopped");
        Ok(())
    }

    /// Runs the server on a background thread.
    pub fn spawn(self) -> RunningServer {
        let addr = self.local_addr();
        let handle = self.shutdown_handle();
        let thread = thread::spawn(move || self.run());
        RunningServer { addr, handle, thread }
    }
}

pub struct RunningServer {
    pub addr: SocketAddr,
    pub handle: ShutdownHandle,
    thread: JoinHandle<Result<(), IngestError>>,
}

impl RunningServer {
    /// Signals shutdown and waits for all sessions to be flushed.
    pub fn stop(self) -> Result<(), IngestError> {
        self.handle.shutdown();
        self.thread.join().unwrap_or_else(|_| Err(IngestError::Storage("server thread panicked".into())))
    }
}

/// Peeks the first non-whitespace byte: `{` starts a raw NDJSON session,
/// anything else is parsed as an HTTP request.
fn handle_connection(stream: TcpStream, shared: &Shared) -> io::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(POLL))?;
    let mut out = stream.try_clone()?;
    let mut reader = BufReader::new(stream);
    let first = loop {
        match reader.fill_buf() {
            Ok([]) => return Ok(()),
            Ok(buf) => match buf.iter().position(|b| !b.is_ascii_whitespace()) {
                Some(i) => {
                    let b = buf[i];
                    reader.consume(i);
                    break b;
                }
                None => {
                    let n = buf.len();
                    reader.consume(n);
                }
            },
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) => {
                if shared.shutdown.load(Ordering::SeqCst) {
                    return Ok(());
                }
            }
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    };
    if first == b'{' {
        let reply = shared.session(&mut reader);
        out.write_all(reply.to_line().as_bytes())?;
    } else {
        handle_http(&mut reader, &mut out, shared)?;
    }
    // Unread input at close would reset the connection before the client
    // sees the reply.
    out.shutdown(Shutdown::Write)?;
    drain(&mut reader, shared);
    Ok(())
}

/// Discards input until EOF, a read error, shutdown, or `DRAIN_LIMIT`.
fn drain<R: Read>(reader: &mut R, shared: &Shared) {
    let started = Instant::now();
    let mut buf = [0u8; 8192];
    while started.elapsed() < DRAIN_LIMIT && !shared.shutdown.load(Ordering::SeqCst) {
        match reader.read(&mut buf) {
            Ok(0) => return,
            Ok(_) => {}
            Err(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut | io::ErrorKind::Interrupted) => {}
            Err(_) => return,
        }
    }
}

fn handle_http<R: BufRead>(reader: &mut R, out: &mut TcpStream, shared: &Shared) -> io::Result<()> {
    let head = match http::read_head(reader, |r, buf| {
        read_line(r, buf, &shared.shutdown).map(|l| matches!(l, Line::Data))
    }) {
        Ok(h) => h,
        Err(e) => {
            return http::write_response(out, 400, "text/plain", format!("{e}\n").as_bytes());
        }
    };
    match (head.method.as_str(), head.path.as_str()) {
        ("GET", "/healthz") => http::write_response(out, 200, "text/plain", b"ok\n"),
        ("GET", "/v1/sessions") => {
            let mut body = serde_json::to_vec_pretty(&shared.store.manifest()).expect("manifest serializes");
            body.push(b'\n');
            http::write_response(out, 200, "application/json", &body)
        }
        ("POST", "/v1/stream") => {
            let reply = match head.body {
                BodyKind::Chunked => shared.session(&mut BufReader::new(ChunkedReader::new(reader))),
                BodyKind::Length(n) => shared.session(&mut reader.take(n)),
                BodyKind::None => SessionReply::Error {
                    error: "stream request needs Content-Length or chunked encoding".into(),
                },
            };
            let status = match &reply {
                SessionReply::Ok { .. } => 200,
                SessionReply::Error { error } if error.starts_with("server busy") => 503,
                SessionReply::Error { .. } => 400,
            };
            http::write_response(out, status, "application/json", reply.to_line().as_bytes())
        }
        (_, "/healthz" | "/v1/sessions" | "/v1/stream") => {
            http::write_response(out, 405, "text/plain", b"method not allowed\n")
        }
        _ => http::write_response(out, 404, "text/plain", b"not found\n"),
    }
}
