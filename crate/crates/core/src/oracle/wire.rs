//! Newline-delimited JSON oracle protocol, client and server side.
//!
//! ```text
//! {"op":"capabilities"}
//!   -> {"protocol":1,"labels":[...],"masked_forward":b,"word_gradient":b,"char_gradient":b,"attention_attribution":b}
//! {"op":"predict","id":N,"batch":[[tok,...],...]}          -> {"id":N,"probs":[[p,...],...]}
//! {"op":"masked_predict","id":N,"tokens":[...],"mask":[m,...]} -> {"id":N,"probs":[...]}
//! {"op":"grad","id":N,"tokens":[...],"target":label}        -> {"id":N,"grads":[[g,...],...]}
//! ```
//!
//! Extensions (all optional, advertised in the handshake): `"mode":"char"` on `grad`
//! returns `[token][char][symbol]` records and the handshake carries `"alphabet"`;
//! `fill_mask`, `vocab`, `embed` and `attention_attribution` ops; `na_label` in the
//! handshake. Failures are answered with `{"id":N,"error":"..."}`.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::process::{Child, Command, Stdio};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{CapabilitySet, GradientMode, GradientRecords, Handshake, Transport};
use crate::corpus::LabelSpace;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct CapabilitiesReply {
    protocol: u32,
    labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    na_label: Option<String>,
    #[serde(default)]
    masked_forward: bool,
    #[serde(default)]
    word_gradient: bool,
    #[serde(default)]
    char_gradient: bool,
    #[serde(default)]
    attention_attribution: bool,
    #[serde(default)]
    fill_mask: bool,
    #[serde(default)]
    embeddings: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alphabet: Option<String>,
}

impl CapabilitiesReply {
    fn from_handshake(h: &Handshake) -> Self {
        let c = &h.capabilities;
        CapabilitiesReply {
            protocol: h.protocol,
            labels: h.label_space.labels.clone(),
            na_label: h.label_space.na_label.clone(),
            masked_forward: c.masked_forward,
            word_gradient: c.word_gradient,
            char_gradient: c.char_gradient,
            attention_attribution: c.attention_attribution,
            fill_mask: c.fill_mask,
            embeddings: c.embeddings,
            alphabet: c.alphabet.as_ref().map(|a| a.iter().collect()),
        }
    }

    fn into_handshake(self) -> Result<Handshake> {
        Ok(Handshake {
            protocol: self.protocol,
            label_space: LabelSpace::new(self.labels, self.na_label)?,
            capabilities: CapabilitySet {
                predict: true,
                masked_forward: self.masked_forward,
                word_gradient: self.word_gradient,
                char_gradient: self.char_gradient,
                attention_attribution: self.attention_attribution,
                fill_mask: self.fill_mask,
                embeddings: self.embeddings,
                alphabet: self.alphabet.map(|a| a.chars().collect()),
            },
        })
    }
}

/// Parses a handshake reply line (exposed for protocol tests).
pub fn parse_handshake(line: &str) -> Result<Handshake> {
    let reply: Value = serde_json::from_str(line).map_err(|e| Error::Protocol(format!("bad handshake: {e}")))?;
    if let Some(err) = reply.get("error") {
        return Err(Error::Oracle(err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string())));
    }
    serde_json::from_value::<CapabilitiesReply>(reply)
        .map_err(|e| Error::Protocol(format!("bad handshake: {e}")))?
        .into_handshake()
}

struct Connection {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Connection {
    fn roundtrip(&mut self, request: &Value) -> Result<Value> {
        let mut line = serde_json::to_string(request)?;
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| Error::Transport(format!("write failed: {e}")))?;
        let mut reply = String::new();
        let n = self.reader.read_line(&mut reply).map_err(|e| Error::Transport(format!("read failed: {e}")))?;
        if n == 0 {
            return Err(Error::Transport("connection closed by oracle".into()));
        }
        let value: Value =
            serde_json::from_str(reply.trim_end()).map_err(|e| Error::Protocol(format!("unparseable reply: {e}")))?;
        if let Some(err) = value.get("error") {
            return Err(Error::Oracle(err.as_str().map(str::to_string).unwrap_or_else(|| err.to_string())));
        }
        if let Some(id) = request.get("id") {
            if value.get("id") != Some(id) {
                return Err(Error::Protocol(format!("reply id {:?} does not echo request id {id}", value.get("id"))));
            }
        }
        Ok(value)
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = self.child.as_mut() {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// A pool of protocol connections; each connection serves one request at a time.
pub struct WireClient {
    connections: Vec<Mutex<Connection>>,
    next_id: AtomicU64,
    cursor: AtomicUsize,
}

impl WireClient {
    /// Connects `pool` TCP sockets to `addr`. `timeout` bounds every read.
    pub fn connect_tcp(addr: &str, pool: usize, timeout: Option<Duration>) -> Result<Self> {
        let resolved: Vec<_> = addr
            .to_socket_addrs()
            .map_err(|e| Error::Transport(format!("cannot resolve {addr}: {e}")))?
            .collect();
        let mut connections = Vec::new();
        for _ in 0..pool.max(1) {
            let stream = TcpStream::connect(&resolved[..]).map_err(|e| Error::Transport(format!("connect {addr}: {e}")))?;
            stream.set_read_timeout(timeout).map_err(|e| Error::Transport(e.to_string()))?;
            stream.set_nodelay(true).ok();
            let reader = BufReader::new(stream.try_clone().map_err(|e| Error::Transport(e.to_string()))?);
            connections.push(Mutex::new(Connection { reader: Box::new(reader), writer: Box::new(stream), child: None }));
        }
        Ok(Self::from_connections(connections))
    }

    /// Spawns `pool` copies of `command` (run through `sh -c`) speaking the protocol on stdio.
    pub fn spawn(command: &str, pool: usize) -> Result<Self> {
        let mut connections = Vec::new();
        for _ in 0..pool.max(1) {
            let mut child = Command::new("sh")
                .arg("-c")
                .arg(command)
                .stdin(Stdio::piped())
                .stdout(Stdio::piped())
                .stderr(Stdio::inherit())
                .spawn()
                .map_err(|e| Error::Transport(format!("spawn `{command}`: {e}")))?;
            let stdin = child.stdin.take().expect("piped stdin");
            let stdout = child.stdout.take().expect("piped stdout");
            connections.push(Mutex::new(Connection {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(stdin),
                child: Some(child),
            }));
        }
        Ok(Self::from_connections(connections))
    }

    /// Wraps an arbitrary reader/writer pair (in-memory pipes in tests).
    pub fn from_streams(reader: impl Read + Send + 'static, writer: impl Write + Send + 'static) -> Self {
        Self::from_connections(vec![Mutex::new(Connection {
            reader: Box::new(BufReader::new(reader)),
            writer: Box::new(writer),
            child: None,
        })])
    }

    fn from_connections(connections: Vec<Mutex<Connection>>) -> Self {
        WireClient { connections, next_id: AtomicU64::new(1), cursor: AtomicUsize::new(0) }
    }

    pub fn pool_size(&self) -> usize {
        self.connections.len()
    }

    fn call(&self, mut request: Value) -> Result<Value> {
        if request.get("op") != Some(&json!("capabilities")) {
            request["id"] = json!(self.next_id.fetch_add(1, Ordering::Relaxed));
        }
        // prefer an idle connection, otherwise queue round-robin
        for conn in &self.connections {
            if let Ok(mut guard) = conn.try_lock() {
                return guard.roundtrip(&request);
            }
        }
        let idx = self.cursor.fetch_add(1, Ordering::Relaxed) % self.connections.len();
        let mut guard = self.connections[idx].lock().map_err(|_| Error::Transport("connection poisoned".into()))?;
        guard.roundtrip(&request)
    }
}

fn field<T: for<'de> Deserialize<'de>>(reply: &Value, key: &str) -> Result<T> {
    let v = reply.get(key).ok_or_else(|| Error::Protocol(format!("reply lacks `{key}`")))?;
    serde_json::from_value(v.clone()).map_err(|e| Error::Protocol(format!("bad `{key}`: {e}")))
}

impl Transport for WireClient {
    fn handshake(&self) -> Result<Handshake> {
        let reply = self.call(json!({"op": "capabilities"}))?;
        parse_handshake(&reply.to_string())
    }

    fn predict(&self, batch: &[Vec<String>]) -> Result<Vec<Vec<f64>>> {
        let reply = self.call(json!({"op": "predict", "batch": batch}))?;
        field(&reply, "probs")
    }

    fn masked_predict(&self, tokens: &[String], mask: &[f64]) -> Result<Vec<f64>> {
        let reply = self.call(json!({"op": "masked_predict", "tokens": tokens, "mask": mask}))?;
        field(&reply, "probs")
    }

    fn gradient(&self, tokens: &[String], target: &str, mode: GradientMode) -> Result<GradientRecords> {
        match mode {
            GradientMode::Word => {
                let reply = self.call(json!({"op": "grad", "tokens": tokens, "target": target}))?;
                Ok(GradientRecords::Word(field(&reply, "grads")?))
            }
            GradientMode::Char => {
                let reply = self.call(json!({"op": "grad", "tokens": tokens, "target": target, "mode": "char"}))?;
                Ok(GradientRecords::Char(field(&reply, "grads")?))
            }
        }
    }

    fn fill_mask(&self, tokens: &[String], position: usize, top: usize) -> Result<Vec<String>> {
        let reply = self.call(json!({"op": "fill_mask", "tokens": tokens, "position": position, "top": top}))?;
        field(&reply, "candidates")
    }

    fn vocabulary(&self) -> Result<Vec<String>> {
        let reply = self.call(json!({"op": "vocab"}))?;
        field(&reply, "tokens")
    }

    fn embed(&self, tokens: &[String]) -> Result<Vec<Vec<f64>>> {
        let reply = self.call(json!({"op": "embed", "tokens": tokens}))?;
        field(&reply, "vectors")
    }

    fn attention_attribution(&self, tokens: &[String], target: &str, steps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let reply = self.call(json!({"op": "attention_attribution", "tokens": tokens, "target": target, "steps": steps}))?;
        field(&reply, "heads")
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Request {
    Capabilities {
        #[serde(default)]
        id: Option<Value>,
    },
    Predict {
        id: Value,
        batch: Vec<Vec<String>>,
    },
    MaskedPredict {
        id: Value,
        tokens: Vec<String>,
        mask: Vec<f64>,
    },
    Grad {
        id: Value,
        tokens: Vec<String>,
        target: String,
        #[serde(default)]
        mode: Option<String>,
    },
    FillMask {
        id: Value,
        tokens: Vec<String>,
        position: usize,
        #[serde(default = "default_top")]
        top: usize,
    },
    Vocab {
        id: Value,
    },
    Embed {
        id: Value,
        tokens: Vec<String>,
    },
    AttentionAttribution {
        id: Value,
        tokens: Vec<String>,
        target: String,
        steps: usize,
    },
}

fn default_top() -> usize {
    2
}

fn error_reply(id: Option<&Value>, message: impl std::fmt::Display) -> Value {
    match id {
        Some(id) => json!({"id": id, "error": message.to_string()}),
        None => json!({"error": message.to_string()}),
    }
}

/// Answers one request line.
pub fn handle_request(transport: &dyn Transport, line: &str) -> Value {
    let raw: Value = match serde_json::from_str(line) {
        Ok(v) => v,
        Err(e) => return error_reply(None, format!("malformed request: {e}")),
    };
    let id = raw.get("id").cloned();
    let request: Request = match serde_json::from_value(raw.clone()) {
        Ok(r) => r,
        Err(e) => {
            let op = raw.get("op").and_then(Value::as_str).unwrap_or("<missing>");
            return error_reply(id.as_ref(), format!("unsupported or malformed `{op}` request: {e}"));
        }
    };
    let result: Result<Value> = (|| match request {
        Request::Capabilities { id } => {
            let mut v = serde_json::to_value(CapabilitiesReply::from_handshake(&transport.handshake()?))?;
            if let Some(id) = id {
                v["id"] = id;
            }
            Ok(v)
        }
        Request::Predict { id, batch } => Ok(json!({"id": id, "probs": transport.predict(&batch)?})),
        Request::MaskedPredict { id, tokens, mask } => {
            if tokens.len() != mask.len() {
                return Err(Error::LengthMismatch { expected: tokens.len(), actual: mask.len() });
            }
            Ok(json!({"id": id, "probs": transport.masked_predict(&tokens, &mask)?}))
        }
        Request::Grad { id, tokens, target, mode } => {
            let mode = match mode.as_deref() {
                None | Some("word") => GradientMode::Word,
                Some("char") => GradientMode::Char,
                Some(other) => return Err(Error::Protocol(format!("unknown gradient mode `{other}`"))),
            };
            match transport.gradient(&tokens, &target, mode)? {
                GradientRecords::Word(g) => Ok(json!({"id": id, "grads": g})),
                GradientRecords::Char(g) => Ok(json!({"id": id, "grads": g})),
            }
        }
        Request::FillMask { id, tokens, position, top } => {
            Ok(json!({"id": id, "candidates": transport.fill_mask(&tokens, position, top)?}))
        }
        Request::Vocab { id } => Ok(json!({"id": id, "tokens": transport.vocabulary()?})),
        Request::Embed { id, tokens } => Ok(json!({"id": id, "vectors": transport.embed(&tokens)?})),
        Request::AttentionAttribution { id, tokens, target, steps } => {
            Ok(json!({"id": id, "heads": transport.attention_attribution(&tokens, &target, steps)?}))
        }
    })();
    result.unwrap_or_else(|e| error_reply(id.as_ref(), e))
}

/// Serves requests line by line until the reader is exhausted.
pub fn serve_lines(transport: &dyn Transport, reader: impl BufRead, mut writer: impl Write) -> std::io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = handle_request(transport, &line);
        writeln!(writer, "{reply}")?;
        writer.flush()?;
    }
    Ok(())
}

/// Accepts TCP connections forever, one thread per connection.
pub fn serve_tcp(transport: Arc<dyn Transport>, listener: TcpListener) -> std::io::Result<()> {
    for stream in listener.incoming() {
        let stream = stream?;
        let transport = transport.clone();
        thread::spawn(move || {
            let reader = match stream.try_clone() {
                Ok(s) => BufReader::new(s),
                Err(e) => {
                    tracing::warn!(error = %e, "cannot clone client stream");
                    return;
                }
            };
            if let Err(e) = serve_lines(transport.as_ref(), reader, stream) {
                tracing::debug!(error = %e, "client disconnected");
            }
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::super::testing::{labels, ConstantOracle};
    use super::super::OracleHandle;
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn handshake_defaults_missing_flags_to_false() {
        let h = parse_handshake(r#"{"protocol":1,"labels":["a","b"]}"#).unwrap();
        assert!(!h.capabilities.masked_forward);
        assert!(!h.capabilities.word_gradient);
        assert!(!h.capabilities.char_gradient);
        assert!(!h.capabilities.attention_attribution);
        assert!(h.capabilities.predict);
        assert_eq!(h.label_space.labels, vec!["a", "b"]);
    }

    #[test]
    fn unknown_op_gets_error_reply_with_id() {
        let oracle = ConstantOracle { labels: labels(&["a"]), probs: vec![1.0] };
        let reply = handle_request(&oracle, r#"{"op":"dance","id":7}"#);
        assert_eq!(reply["id"], json!(7));
        assert!(reply["error"].as_str().unwrap().contains("dance"));
        let reply = handle_request(&oracle, "not json");
        assert!(reply.get("error").is_some());
    }

    #[test]
    fn requests_echo_ids() {
        let oracle = ConstantOracle { labels: labels(&["a", "b"]), probs: vec![0.5, 0.5] };
        let reply = handle_request(&oracle, r#"{"op":"predict","id":3,"batch":[["x"],["y","z"]]}"#);
        assert_eq!(reply["id"], json!(3));
        assert_eq!(reply["probs"].as_array().unwrap().len(), 2);
        let reply = handle_request(&oracle, r#"{"op":"masked_predict","id":4,"tokens":["x"],"mask":[1.0,0.0]}"#);
        assert!(reply["error"].as_str().unwrap().contains("length mismatch"));
    }

    #[test]
    fn tcp_round_trip_through_handle() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let oracle: Arc<dyn Transport> = Arc::new(ConstantOracle { labels: labels(&["a", "b"]), probs: vec![0.3, 0.7] });
        thread::spawn(move || serve_tcp(oracle, listener));
        let client = WireClient::connect_tcp(&addr, 2, Some(Duration::from_secs(10))).unwrap();
        assert_eq!(client.pool_size(), 2);
        let handle = OracleHandle::new(client);
        let caps = handle.capabilities().unwrap();
        assert!(caps.masked_forward && caps.word_gradient);
        assert_eq!(caps, handle.capabilities().unwrap());
        let preds = handle.predict_batch(&[toks("a b"), toks("c")]).unwrap();
        assert_eq!(preds[1].label, "b");
        assert_eq!(handle.queries(), 2);
        let g = handle.input_gradient(&toks("a b"), "a", GradientMode::Word).unwrap();
        assert_eq!(g.len(), 2);
        assert_eq!(handle.vocabulary().unwrap().len(), 3);
    }

    #[test]
    fn oracle_errors_surface_verbatim() {
        let oracle = ConstantOracle { labels: labels(&["a"]), probs: vec![1.0] };
        let reply = handle_request(&oracle, r#"{"op":"fill_mask","id":1,"tokens":["x"],"position":0}"#);
        assert_eq!(reply["error"], json!("oracle lacks capability `fill_mask`"));
    }
}
