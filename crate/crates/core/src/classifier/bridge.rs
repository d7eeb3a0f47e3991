//! Engine side of the external-classifier bridge.
//!
//! Newline-delimited JSON over the adapter's stdin/stdout. The engine opens
//! with `{"type":"hello","version":1}` and the adapter answers
//! `{"type":"ready","num_classes":K,"input_shape":[C,H,W]}`. Each request
//! carries a batch as base64-encoded little-endian `f32`:
//!
//! ```text
//! → {"type":"predict","id":7,"shape":[B,C,H,W],"dtype":"f32le","data":"..."}
//! ← {"type":"probs","id":7,"shape":[B,K],"dtype":"f32le","data":"..."}
//! ← {"type":"error","id":7,"message":"..."}
//! ```
//!
//! Requests are strictly sequential; one connection is never shared by
//! concurrent requests.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{check_batch_shapes, Classifier};
use crate::error::{Error, Result};
use crate::image::{ImageTensor, Shape};
use crate::prob::ProbVector;

pub const PROTOCOL_VERSION: u32 = 1;
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Message {
    Hello {
        version: u32,
    },
    Ready {
        num_classes: usize,
        input_shape: [usize; 3],
    },
    Predict {
        id: u64,
        shape: Vec<usize>,
        dtype: String,
        data: String,
    },
    Probs {
        id: u64,
        shape: Vec<usize>,
        dtype: String,
        data: String,
    },
    Error {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        id: Option<u64>,
        message: String,
    },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("message serializes");
        s.push('\n');
        s
    }
}

pub fn encode_f32le(values: impl IntoIterator<Item = f32>) -> String {
    let bytes: Vec<u8> = values.into_iter().flat_map(f32::to_le_bytes).collect();
    BASE64.encode(bytes)
}

pub fn decode_f32le(data: &str) -> Result<Vec<f32>> {
    let bytes = BASE64
        .decode(data)
        .map_err(|e| Error::Bridge(format!("invalid base64 payload: {e}")))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Bridge(format!(
            "payload of {} bytes is not a whole number of f32 values",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect())
}

struct BridgeIo {
    reader: Box<dyn BufRead + Send>,
    writer: Box<dyn Write + Send>,
    next_id: u64,
    child: Option<Child>,
}

impl BridgeIo {
    fn send(&mut self, msg: &Message) -> Result<()> {
        self.writer
            .write_all(msg.to_line().as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| {
                Error::Bridge(format!(
                    "writing to adapter failed: {e}{}",
                    self.exit_note()
                ))
            })
    }

    fn recv(&mut self) -> Result<Message> {
        let mut line = String::new();
        let n = self
            .reader
            .read_line(&mut line)
            .map_err(|e| Error::Bridge(format!("reading from adapter failed: {e}")))?;
        if n == 0 {
            return Err(Error::Bridge(format!(
                "adapter closed the connection{}",
                self.exit_note()
            )));
        }
        serde_json::from_str(line.trim_end()).map_err(|e| {
            Error::Bridge(format!(
                "malformed adapter message `{}`: {e}",
                line.trim_end()
            ))
        })
    }

    fn exit_note(&mut self) -> String {
        match self.child.as_mut().map(|c| c.try_wait()) {
            Some(Ok(Some(status))) => format!(" (adapter exited with {status})"),
            _ => String::new(),
        }
    }
}

impl Drop for BridgeIo {
    fn drop(&mut self) {
        // Closing stdin ends the adapter's request loop.
        self.writer = Box::new(std::io::sink());
        if let Some(mut child) = self.child.take() {
            let _ = child.wait();
        }
    }
}

pub struct BridgeClient {
    io: Mutex<BridgeIo>,
    num_classes: usize,
    input_shape: Shape,
    batch_size: usize,
    command: String,
}

impl BridgeClient {
    pub fn spawn(command: &str, batch_size: usize) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Bridge(format!("failed to start adapter `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(
            BridgeIo {
                reader: Box::new(BufReader::new(stdout)),
                writer: Box::new(stdin),
                next_id: 1,
                child: Some(child),
            },
            command.to_string(),
            batch_size,
        )
    }

    /// Runs the protocol over arbitrary streams.
    pub fn connect(
        reader: impl BufRead + Send + 'static,
        writer: impl Write + Send + 'static,
        label: &str,
        batch_size: usize,
    ) -> Result<Self> {
        Self::handshake(
            BridgeIo {
                reader: Box::new(reader),
                writer: Box::new(writer),
                next_id: 1,
                child: None,
            },
            label.to_string(),
            batch_size,
        )
    }

    fn handshake(mut io: BridgeIo, command: String, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::invalid("bridge batch size must be positive"));
        }
        io.send(&Message::Hello {
            version: PROTOCOL_VERSION,
        })?;
        match io.recv()? {
            Message::Ready {
                num_classes,
                input_shape: [c, h, w],
            } => {
                if num_classes < 2 || c == 0 || h == 0 || w == 0 {
                    return Err(Error::Bridge(format!(
                        "adapter declared unusable metadata: {num_classes} classes, shape [{c}, {h}, {w}]"
                    )));
                }
                Ok(BridgeClient {
                    io: Mutex::new(io),
                    num_classes,
                    input_shape: Shape::new(c, h, w),
                    batch_size,
                    command,
                })
            }
            Message::Error { message, .. } => Err(Error::Bridge(format!(
                "adapter refused handshake: {message}"
            ))),
            other => Err(Error::Bridge(format!(
                "expected ready message, got {}",
                other.to_line().trim_end()
            ))),
        }
    }

    pub fn command(&self) -> &str {
        &self.command
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_shape(&self) -> Shape {
        self.input_shape
    }

    fn request(&self, io: &mut BridgeIo, chunk: &[ImageTensor]) -> Result<Vec<ProbVector>> {
        let id = io.next_id;
        io.next_id += 1;
        let s = self.input_shape;
        io.send(&Message::Predict {
            id,
            shape: vec![chunk.len(), s.channels, s.height, s.width],
            dtype: DTYPE.into(),
            data: encode_f32le(chunk.iter().flat_map(|x| x.data().iter().copied())),
        })?;
        match io.recv()? {
            Message::Probs {
                id: rid,
                shape,
                dtype,
                data,
            } => {
                if rid != id {
                    return Err(Error::Bridge(format!(
                        "response id {rid} does not match request {id}"
                    )));
                }
                if dtype != DTYPE {
                    return Err(Error::Bridge(format!("unsupported dtype `{dtype}`")));
                }
                if shape != [chunk.len(), self.num_classes] {
                    return Err(Error::Bridge(format!(
                        "response shape {shape:?}, expected [{}, {}]",
                        chunk.len(),
                        self.num_classes
                    )));
                }
                let values = decode_f32le(&data)?;
                if values.len() != chunk.len() * self.num_classes {
                    return Err(Error::Bridge(format!(
                        "response carries {} values, expected {}",
                        values.len(),
                        chunk.len() * self.num_classes
                    )));
                }
                values
                    .chunks_exact(self.num_classes)
                    .enumerate()
                    .map(|(i, row)| {
                        ProbVector::from_f32(row).map_err(|e| {
                            Error::Bridge(format!(
                                "row {i} of response {id} is not a probability vector: {e}"
                            ))
                        })
                    })
                    .collect()
            }
            Message::Error { id: rid, message } => Err(Error::Bridge(format!(
                "adapter error for request {}: {message}",
                rid.map_or("?".to_string(), |r| r.to_string())
            ))),
            other => Err(Error::Bridge(format!(
                "unexpected message {}",
                other.to_line().trim_end()
            ))),
        }
    }
}

impl Classifier for BridgeClient {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> Shape {
        self.input_shape
    }

    fn predict_batch(&self, batch: &[ImageTensor]) -> Result<Vec<ProbVector>> {
        check_batch_shapes(self.input_shape, batch)?;
        let mut io = self
            .io
            .lock()
            .map_err(|_| Error::Bridge("bridge connection poisoned by an earlier panic".into()))?;
        let mut out = Vec::with_capacity(batch.len());
        for chunk in batch.chunks(self.batch_size) {
            out.extend(self.request(&mut io, chunk)?);
        }
        Ok(out)
    }
}
