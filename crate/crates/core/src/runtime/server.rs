use std::convert::Infallible;
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use log::{debug, info, warn};

use crate::detector::{ArchConfig, Detector};
use crate::splitter::{build_module_graph, ModuleGraph};
use crate::tensor::TensorBundle;
use crate::wire::{
    bundle_encoded_len, read_message, write_message, Message, ReadError, ERR_ARCH_MISMATCH, ERR_MALFORMED,
    ERR_PROTOCOL, ERR_TAIL, ERR_UNKNOWN_SPLIT,
};

use super::timing::ms;
use super::{run_tail, RuntimeError, TimingReport};

/// Environment variable that overrides the bind address.
pub const BIND_ENV: &str = "VOXSPLIT_BIND";

/// Tail executor shared by all connections.
#[derive(Debug, Clone)]
pub struct Server {
    detector: Arc<Detector>,
    graph: Arc<ModuleGraph>,
}

/// A server running on a background thread; dropping it stops accepting.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
    }
}

enum Flow {
    Continue,
    Close,
}

impl Server {
    pub fn new(detector: Detector) -> Result<Self, RuntimeError> {
        let graph = build_module_graph(detector.arch())?;
        Ok(Self { detector: Arc::new(detector), graph: Arc::new(graph) })
    }

    pub fn detector(&self) -> &Detector {
        &self.detector
    }

    /// Binds `addr` and serves on a background thread.
    pub fn spawn(self, addr: impl ToSocketAddrs) -> Result<ServerHandle, RuntimeError> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        thread::spawn(move || self.accept_loop(listener, &flag));
        Ok(ServerHandle { addr, stop })
    }

    /// Accepts connections until `stop` is set, one thread per connection.
    pub fn accept_loop(&self, listener: TcpListener, stop: &AtomicBool) {
        for conn in listener.incoming() {
            if stop.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let server = self.clone();
                    thread::spawn(move || server.handle_connection(stream));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }

    /// Serves one connection until the peer closes it or a fatal error occurs.
    pub fn handle_connection(&self, stream: TcpStream) {
        let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_else(|_| "?".into());
        let _ = stream.set_nodelay(true);
        let mut writer = match stream.try_clone() {
            Ok(w) => w,
            Err(e) => {
                warn!("{peer}: {e}");
                return;
            }
        };
        let mut reader = BufReader::new(stream);
        let mut greeted = false;
        debug!("{peer}: connected");
        loop {
            let (msg, frame_len) = match read_message(&mut reader) {
                Ok(m) => m,
                Err(ReadError::Closed) => break,
                Err(ReadError::Wire(e)) => {
                    warn!("{peer}: bad frame: {e}");
                    let _ = write_message(&mut writer, &Message::Error { code: ERR_MALFORMED, text: e.to_string() });
                    break;
                }
                Err(ReadError::Io(e)) => {
                    warn!("{peer}: {e}");
                    break;
                }
            };
            let received = Instant::now();
            let flow = match msg {
                Message::Hello { seed, arch_hash } => {
                    if seed != self.detector.seed() || arch_hash != self.detector.arch_hash() {
                        let text = format!(
                            "server runs seed {} arch {:016x}, client sent seed {seed} arch {arch_hash:016x}",
                            self.detector.seed(),
                            self.detector.arch_hash()
                        );
                        warn!("{peer}: handshake rejected: {text}");
                        let _ = write_message(&mut writer, &Message::Error { code: ERR_ARCH_MISMATCH, text });
                        Flow::Close
                    } else {
                        greeted = true;
                        self.reply(&mut writer, &Message::Hello { seed, arch_hash })
                    }
                }
                Message::InferRequest { .. } if !greeted => {
                    let text = "INFER_REQUEST before HELLO".to_owned();
                    let _ = write_message(&mut writer, &Message::Error { code: ERR_PROTOCOL, text });
                    Flow::Close
                }
                Message::InferRequest { split_label, bundle } => {
                    self.infer(&mut writer, &split_label, bundle, frame_len, received)
                }
                other => {
                    let text = format!("unexpected {} from client", other.name());
                    let _ = write_message(&mut writer, &Message::Error { code: ERR_PROTOCOL, text });
                    Flow::Close
                }
            };
            if let Flow::Close = flow {
                break;
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
        debug!("{peer}: closed");
    }

    fn reply(&self, w: &mut TcpStream, m: &Message) -> Flow {
        match write_message(w, m) {
            Ok(_) => Flow::Continue,
            Err(e) => {
                warn!("write failed: {e}");
                Flow::Close
            }
        }
    }

    fn infer(&self, w: &mut TcpStream, label: &str, bundle: TensorBundle, frame_len: usize, received: Instant) -> Flow {
        let plan = match self.graph.split_by_label(label).and_then(|s| self.graph.partition(&s)) {
            Ok(p) if !p.is_monolithic() => p,
            Ok(_) => {
                let text = format!("split {label:?} leaves nothing for the server");
                return self.reply(w, &Message::Error { code: ERR_UNKNOWN_SPLIT, text });
            }
            Err(e) => return self.reply(w, &Message::Error { code: ERR_UNKNOWN_SPLIT, text: e.to_string() }),
        };
        let payload_bytes = bundle_encoded_len(&bundle) as u64;
        let detections = match run_tail(&self.detector, &plan, bundle) {
            Ok((d, _)) => d,
            Err(e) => {
                warn!("split={label} bytes={payload_bytes} tail failed: {e}");
                return self.reply(w, &Message::Error { code: ERR_TAIL, text: e.to_string() });
            }
        };
        let tail_ms = ms(received.elapsed());
        info!(
            "split={label} bytes={payload_bytes} frame_bytes={frame_len} tail_ms={tail_ms:.3} detections={}",
            detections.len()
        );
        if let Flow::Close = self.reply(w, &Message::Result(detections)) {
            return Flow::Close;
        }
        let timing = TimingReport {
            tail_compute_ms: tail_ms,
            payload_bytes,
            split_label: label.to_owned(),
            ..Default::default()
        };
        self.reply(w, &Message::Timing(timing))
    }
}

/// Binds and serves forever on the calling thread.
pub fn serve(bind_addr: &str, arch: ArchConfig, seed: u64) -> Result<Infallible, RuntimeError> {
    let server = Server::new(Detector::new(arch, seed)?)?;
    let listener = TcpListener::bind(bind_addr)?;
    info!(
        "listening on {} (seed {seed}, arch {:016x})",
        listener.local_addr()?,
        server.detector.arch_hash()
    );
    server.accept_loop(listener, &AtomicBool::new(false));
    Err(RuntimeError::Protocol("listener closed".into()))
}
