//! Client side of the embedding bridge: a child process speaking
//! newline-delimited JSON on its standard streams.
//!
//! ```text
//! bridge → client   {"protocol":1,"model":"<tag>","dim":512}          (first line)
//! client → bridge   {"id":7,"kind":"image","payload":"<base64 PNG>"}
//! client → bridge   {"id":8,"kind":"text","payload":"a red bicycle"}
//! bridge → client   {"id":7,"status":"ok","embedding":[... 512 numbers ...]}
//! bridge → client   {"id":8,"status":"error","message":"..."}
//! ```
//!
//! One response per request, in order. Malformed requests are answered with
//! id −1.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{EmbedError, Embedding, EMBEDDING_DIM};
use crate::render::{encode_png, RasterImage};

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BridgeConfig {
    pub program: String,
    pub args: Vec<String>,
}

impl BridgeConfig {
    /// Splits a command line on whitespace; the first word is the program.
    pub fn from_command_line(line: &str) -> Result<Self, EmbedError> {
        let mut words = line.split_whitespace().map(str::to_string);
        let program = words
            .next()
            .ok_or_else(|| EmbedError::Unreachable("empty bridge command".into()))?;
        Ok(BridgeConfig {
            program,
            args: words.collect(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub protocol: u64,
    pub model: String,
    pub dim: usize,
}

impl Handshake {
    pub fn parse(line: &str) -> Result<Self, EmbedError> {
        let v: Json = serde_json::from_str(line.trim())
            .map_err(|e| EmbedError::Protocol(format!("handshake is not JSON: {e}")))?;
        let protocol = v
            .get("protocol")
            .and_then(Json::as_u64)
            .ok_or_else(|| EmbedError::Protocol("handshake lacks protocol".into()))?;
        if protocol != PROTOCOL_VERSION {
            return Err(EmbedError::ProtocolVersion(protocol));
        }
        let dim = v
            .get("dim")
            .and_then(Json::as_u64)
            .ok_or_else(|| EmbedError::Protocol("handshake lacks dim".into()))? as usize;
        if dim != EMBEDDING_DIM {
            return Err(EmbedError::Dimension(dim));
        }
        let model = v.get("model").and_then(Json::as_str).unwrap_or("").to_string();
        Ok(Handshake { protocol, model, dim })
    }
}

pub struct BridgeClient {
    child: Child,
    stdin: Option<ChildStdin>,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
    handshake: Handshake,
}

impl BridgeClient {
    pub fn spawn(cfg: &BridgeConfig) -> Result<Self, EmbedError> {
        let mut child = Command::new(&cfg.program)
            .args(&cfg.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| EmbedError::Unreachable(format!("cannot start {}: {e}", cfg.program)))?;
        let stdin = child.stdin.take();
        let stdout = BufReader::new(child.stdout.take().expect("stdout is piped"));
        let mut client = BridgeClient {
            child,
            stdin,
            stdout,
            next_id: 0,
            handshake: Handshake {
                protocol: 0,
                model: String::new(),
                dim: 0,
            },
        };
        let line = client.read_line()?;
        client.handshake = Handshake::parse(&line)?;
        log::debug!("bridge model {:?}", client.handshake.model);
        Ok(client)
    }

    pub fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn read_line(&mut self) -> Result<String, EmbedError> {
        let mut line = String::new();
        let n = self
            .stdout
            .read_line(&mut line)
            .map_err(|e| EmbedError::Unreachable(e.to_string()))?;
        if n == 0 {
            return Err(EmbedError::Unreachable("bridge closed its output".into()));
        }
        Ok(line)
    }

    fn request(&mut self, kind: &str, payload: String) -> Result<Embedding, EmbedError> {
        let id = self.next_id;
        self.next_id += 1;
        let mut msg = serde_json::to_string(&serde_json::json!({
            "id": id,
            "kind": kind,
            "payload": payload,
        }))
        .expect("plain JSON object");
        msg.push('\n');
        let stdin = self
            .stdin
            .as_mut()
            .ok_or_else(|| EmbedError::Unreachable("bridge input closed".into()))?;
        stdin
            .write_all(msg.as_bytes())
            .and_then(|_| stdin.flush())
            .map_err(|e| EmbedError::Unreachable(e.to_string()))?;
        let line = self.read_line()?;
        parse_response(&line, id)
    }

    pub fn embed_png(&mut self, png: &[u8]) -> Result<Embedding, EmbedError> {
        self.request("image", base64::engine::general_purpose::STANDARD.encode(png))
    }

    pub fn embed_image(&mut self, img: &RasterImage) -> Result<Embedding, EmbedError> {
        self.embed_png(&encode_png(img))
    }

    pub fn embed_text(&mut self, text: &str) -> Result<Embedding, EmbedError> {
        self.request("text", text.to_string())
    }
}

impl Drop for BridgeClient {
    fn drop(&mut self) {
        // closing stdin ends the bridge's request loop
        self.stdin.take();
        if !matches!(self.child.try_wait(), Ok(Some(_))) {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
    }
}

/// Validates one response line against the request id.
pub fn parse_response(line: &str, id: u64) -> Result<Embedding, EmbedError> {
    let v: Json =
        serde_json::from_str(line.trim()).map_err(|e| EmbedError::Protocol(format!("response is not JSON: {e}")))?;
    let got = v.get("id").and_then(Json::as_i64);
    if got != Some(id as i64) {
        return Err(EmbedError::Protocol(format!("expected id {id}, got {got:?}")));
    }
    match v.get("status").and_then(Json::as_str) {
        Some("ok") => {}
        Some("error") => {
            let message = v.get("message").and_then(Json::as_str).unwrap_or("").to_string();
            return Err(EmbedError::Remote { id, message });
        }
        other => return Err(EmbedError::Protocol(format!("bad status {other:?}"))),
    }
    let arr = v
        .get("embedding")
        .and_then(Json::as_array)
        .ok_or_else(|| EmbedError::Protocol("ok response without embedding".into()))?;
    if arr.len() != EMBEDDING_DIM {
        return Err(EmbedError::Dimension(arr.len()));
    }
    let values = arr
        .iter()
        .map(|x| x.as_f64().filter(|f| f.is_finite()).map(|f| f as f32))
        .collect::<Option<Vec<f32>>>()
        .ok_or_else(|| EmbedError::Protocol("embedding has non-numeric entries".into()))?;
    Ok(Embedding::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handshake_checks() {
        let ok = Handshake::parse(r#"{"protocol":1,"model":"m","dim":512}"#).unwrap();
        assert_eq!(ok.model, "m");
        assert!(matches!(
            Handshake::parse(r#"{"protocol":1,"model":"m","dim":768}"#),
            Err(EmbedError::Dimension(768))
        ));
        assert!(matches!(
            Handshake::parse(r#"{"protocol":2,"model":"m","dim":512}"#),
            Err(EmbedError::ProtocolVersion(2))
        ));
        assert!(matches!(Handshake::parse("hello"), Err(EmbedError::Protocol(_))));
    }

    #[test]
    fn response_checks() {
        let emb: Vec<String> = (0..512).map(|i| format!("{}", i as f32 / 1000.0)).collect();
        let line = format!(r#"{{"id":3,"status":"ok","embedding":[{}]}}"#, emb.join(","));
        assert_eq!(parse_response(&line, 3).unwrap().values()[2], 0.002);
        assert!(matches!(parse_response(&line, 4), Err(EmbedError::Protocol(_))));
        let err = r#"{"id":3,"status":"error","message":"bad png"}"#;
        assert!(matches!(parse_response(err, 3), Err(EmbedError::Remote { id: 3, .. })));
        let short = r#"{"id":3,"status":"ok","embedding":[1,2]}"#;
        assert!(matches!(parse_response(short, 3), Err(EmbedError::Dimension(2))));
    }

    #[test]
    fn missing_program_is_unreachable() {
        let cfg = BridgeConfig::from_command_line("/nonexistent/bridge --flag").unwrap();
        assert!(matches!(BridgeClient::spawn(&cfg), Err(EmbedError::Unreachable(_))));
    }
}
