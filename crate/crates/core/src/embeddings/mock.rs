//! In-process mock of the embedding service, for tests.
//!
//! Speaks just enough HTTP/1.1 to serve `POST /embed`. Each connection
//! carries one request and is closed after the response.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde_json::json;

use super::feature_hash_embed;
use crate::corpus::Document;

#[derive(Debug, Clone, PartialEq)]
pub enum MockBehavior {
    /// All-zero matrix of the right shape.
    Zeros { dim: usize },
    /// The feature-hash embedding of the posted document.
    FeatureHash {
        dim: usize,
        window: usize,
        seed: u64,
    },
    /// Correct dim but one row short.
    DropRow { dim: usize },
    /// First entry sent as `null` (NaN on the wire).
    NaN { dim: usize },
    /// Sleeps before answering with zeros.
    Delay { dim: usize, ms: u64 },
    /// Replies with the given status and an empty body.
    Status(u16),
}

pub struct MockEmbeddingServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    requests: Arc<AtomicUsize>,
    handle: Option<JoinHandle<()>>,
}

impl MockEmbeddingServer {
    pub fn start(behavior: MockBehavior) -> std::io::Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let requests = Arc::new(AtomicUsize::new(0));
        let (stop2, req2) = (stop.clone(), requests.clone());
        let handle = thread::spawn(move || {
            for stream in listener.incoming() {
                if stop2.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let behavior = behavior.clone();
                let req = req2.clone();
                thread::spawn(move || {
                    let _ = serve(stream, &behavior, &req);
                });
            }
        });
        Ok(Self {
            addr,
            stop,
            requests,
            handle: Some(handle),
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Number of requests that reached the handler.
    pub fn requests(&self) -> usize {
        self.requests.load(Ordering::SeqCst)
    }
}

impl Drop for MockEmbeddingServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

fn serve(
    stream: TcpStream,
    behavior: &MockBehavior,
    requests: &AtomicUsize,
) -> std::io::Result<()> {
    stream.set_read_timeout(Some(Duration::from_secs(10)))?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut request_line = String::new();
    if reader.read_line(&mut request_line)? == 0 {
        return Ok(());
    }
    let mut content_length = 0usize;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line)?;
        let line = line.trim_end();
        if line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                content_length = v.trim().parse().unwrap_or(0);
            }
        }
    }
    let mut body = vec![0; content_length];
    reader.read_exact(&mut body)?;
    requests.fetch_add(1, Ordering::SeqCst);

    let mut out = stream;
    if !request_line.starts_with("POST /embed ") {
        return respond(&mut out, 404, "");
    }
    let Ok(doc) = serde_json::from_slice::<Document>(&body) else {
        return respond(&mut out, 400, "");
    };
    let n = doc.n_tokens();
    let payload = match *behavior {
        MockBehavior::Zeros { dim } => json!({"dim": dim, "rows": n, "data": vec![0.0; n * dim]}),
        MockBehavior::FeatureHash { dim, window, seed } => {
            match feature_hash_embed(&doc, dim, window, seed) {
                Ok(m) => {
                    json!({"dim": dim, "rows": n, "data": m.as_array().iter().collect::<Vec<_>>()})
                }
                Err(_) => return respond(&mut out, 500, ""),
            }
        }
        MockBehavior::DropRow { dim } => {
            let rows = n.saturating_sub(1);
            json!({"dim": dim, "rows": rows, "data": vec![0.0; rows * dim]})
        }
        MockBehavior::NaN { dim } => {
            let mut data: Vec<Option<f64>> = vec![Some(0.0); n * dim];
            if let Some(first) = data.first_mut() {
                *first = None;
            }
            json!({"dim": dim, "rows": n, "data": data})
        }
        MockBehavior::Delay { dim, ms } => {
            thread::sleep(Duration::from_millis(ms));
            json!({"dim": dim, "rows": n, "data": vec![0.0; n * dim]})
        }
        MockBehavior::Status(code) => return respond(&mut out, code, ""),
    };
    respond(&mut out, 200, &payload.to_string())
}

fn respond(out: &mut TcpStream, status: u16, body: &str) -> std::io::Result<()> {
    let reason = if status == 200 { "OK" } else { "Error" };
    write!(
        out,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )?;
    out.flush()?;
    let _ = out.shutdown(Shutdown::Write);
    Ok(())
}
