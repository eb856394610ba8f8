//! Line-delimited JSON prediction service over TCP.
//!
//! Each request line is an object `{"id": 7, "seq": [[...], ...]}` with an
//! optional `"temp"` field; `seq` holds one feature vector per timestep. The
//! reply line is `{"id": 7, "outputs": [[...], ...], "queries_used": n}` on
//! success or `{"id": ..., "error": "..."}` on failure, with `id` null when
//! the request could not be parsed. Connections persist across requests and
//! across errors.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;

use crate::error::{Error, Result};
use crate::ndcore::Matrix2;
use crate::oracle::Oracle;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct WireRequest {
    #[serde(default)]
    id: Option<i64>,
    seq: Vec<Vec<f64>>,
    #[serde(default)]
    temp: Option<f64>,
}

fn respond(oracle: &Oracle, line: &str) -> String {
    let req: WireRequest = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(_) => return json!({"id": null, "error": "parse"}).to_string(),
    };
    let id = req.id;
    match answer(oracle, &req) {
        Ok((outputs, queries_used)) => {
            json!({"id": id, "outputs": outputs, "queries_used": queries_used}).to_string()
        }
        Err(e) => json!({"id": id, "error": e.to_string()}).to_string(),
    }
}

fn answer(oracle: &Oracle, req: &WireRequest) -> Result<(Vec<Vec<f64>>, u64)> {
    let mut seq = Vec::with_capacity(req.seq.len());
    for (t, step) in req.seq.iter().enumerate() {
        if step.is_empty() {
            return Err(Error::Protocol(format!("timestep {t} is empty")));
        }
        seq.push(Matrix2::new(step.len(), 1, step.clone())?);
    }
    let ans = oracle.query_with_temperature(&seq, req.temp)?;
    let outputs = ans
        .outputs
        .iter()
        .map(|m| m.as_slice().to_vec())
        .collect();
    Ok((outputs, ans.queries_used))
}

fn serve_connection(oracle: &Oracle, stream: TcpStream) {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return,
    };
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    loop {
        line.clear();
        match reader.read_line(&mut line) {
            Ok(0) => return,
            Ok(_) => {
                if line.trim().is_empty() {
                    continue;
                }
                let reply = respond(oracle, line.trim());
                if writer
                    .write_all(reply.as_bytes())
                    .and_then(|_| writer.write_all(b"\n"))
                    .is_err()
                {
                    return;
                }
            }
            Err(_) => return,
        }
    }
}

/// A running prediction service; dropping it without `shutdown` leaves the
/// accept thread working until the process exits.
pub struct OracleServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept_handle: JoinHandle<()>,
}

impl OracleServer {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops accepting connections and waits for the accept loop. Connection
    /// threads end when their clients hang up.
    pub fn shutdown(self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = self.accept_handle.join();
    }
}

/// Binds `listen` (for example `127.0.0.1:0`) and serves `oracle` until
/// shutdown. The oracle's ledger is shared across all connections.
pub fn serve(oracle: Arc<Oracle>, listen: &str) -> Result<OracleServer> {
    let listener = TcpListener::bind(listen)
        .map_err(|e| Error::Protocol(format!("cannot bind {listen}: {e}")))?;
    let addr = listener
        .local_addr()
        .map_err(|e| Error::Protocol(format!("no local address: {e}")))?;
    listener
        .set_nonblocking(true)
        .map_err(|e| Error::Protocol(format!("cannot configure listener: {e}")))?;

    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = Arc::clone(&stop);
    let accept_handle = std::thread::spawn(move || loop {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let conn_oracle = Arc::clone(&oracle);
                std::thread::spawn(move || serve_connection(&conn_oracle, stream));
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if stop_flag.load(Ordering::SeqCst) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
            Err(_) => {
                if stop_flag.load(Ordering::SeqCst) {
                    return;
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    });
    Ok(OracleServer {
        addr,
        stop,
        accept_handle,
    })
}
