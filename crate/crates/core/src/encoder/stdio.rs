//! Client side of the JSON-lines encoder protocol.
//!
//! Requests are `{"id": string, "path": string}`, responses are
//! `{"id": string, "dim": int, "values": [float, ...]}` or
//! `{"id": string, "error": string}`, one JSON object per line. The peer may
//! answer in any order; responses are matched back to requests by id. The
//! peer terminates when its stdin reaches EOF.
//!
//! Requests are written in windows small enough to sit in a pipe buffer, and
//! every window is drained before the next is sent, so neither side can block
//! on a full pipe while the other is also writing.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::encoder::{Embedding, Encoder, EncoderDescriptor, EncoderKind};
use crate::error::{Error, Result};
use crate::raster::ImageBuffer;

const WINDOW_BYTES: usize = 32 * 1024;
const WINDOW_REQUESTS: usize = 256;

#[derive(Serialize)]
struct Request<'a> {
    id: &'a str,
    path: &'a str,
}

#[derive(Deserialize)]
struct Response {
    id: String,
    #[serde(default)]
    dim: Option<usize>,
    #[serde(default)]
    values: Option<Vec<f64>>,
    #[serde(default)]
    error: Option<String>,
}

pub struct StdioClient<W, R> {
    writer: W,
    reader: R,
    dim: usize,
    issued: u64,
}

impl<W: Write, R: BufRead> StdioClient<W, R> {
    pub fn new(writer: W, reader: R, dim: usize) -> Self {
        Self {
            writer,
            reader,
            dim,
            issued: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Encodes each path, returning embeddings in request order.
    pub fn encode_paths(&mut self, paths: &[PathBuf]) -> Result<Vec<Embedding>> {
        Ok(self.exchange(paths)?.0)
    }

    /// Like [`encode_paths`](Self::encode_paths), also returning for each
    /// response (in arrival order) the index of the request it answered.
    pub fn exchange(&mut self, paths: &[PathBuf]) -> Result<(Vec<Embedding>, Vec<usize>)> {
        let mut results: Vec<Option<Embedding>> = vec![None; paths.len()];
        let mut arrival = Vec::with_capacity(paths.len());
        let mut start = 0;
        while start < paths.len() {
            let mut pending: HashMap<String, usize> = HashMap::new();
            let mut written = 0;
            let mut end = start;
            while end < paths.len() && written < WINDOW_BYTES && end - start < WINDOW_REQUESTS {
                let id = format!("q{}", self.issued);
                self.issued += 1;
                let path = paths[end].to_string_lossy();
                let mut line = serde_json::to_vec(&Request { id: &id, path: &path })?;
                line.push(b'\n');
                written += line.len();
                self.writer
                    .write_all(&line)
                    .map_err(|e| Error::ExternalUnavailable(format!("writing request: {e}")))?;
                pending.insert(id, end);
                end += 1;
            }
            self.writer
                .flush()
                .map_err(|e| Error::ExternalUnavailable(format!("flushing requests: {e}")))?;

            while !pending.is_empty() {
                let response = self.read_response()?;
                let Some(index) = pending.remove(&response.id) else {
                    return Err(Error::ProtocolViolation(format!(
                        "response for unknown or already answered id `{}`",
                        response.id
                    )));
                };
                if let Some(message) = response.error {
                    return Err(Error::ExternalEncoder {
                        id: paths[index].display().to_string(),
                        message,
                    });
                }
                let values = response.values.ok_or_else(|| {
                    Error::ProtocolViolation(format!("response `{}` has no values", response.id))
                })?;
                let declared = response.dim.unwrap_or(values.len());
                for found in [declared, values.len()] {
                    if found != self.dim {
                        return Err(Error::DimensionMismatch {
                            expected: self.dim,
                            found,
                        });
                    }
                }
                results[index] = Some(Embedding::from_f64(&values)?);
                arrival.push(index);
            }
            start = end;
        }
        Ok((results.into_iter().map(|e| e.unwrap()).collect(), arrival))
    }

    fn read_response(&mut self) -> Result<Response> {
        let mut line = String::new();
        loop {
            line.clear();
            let n = self
                .reader
                .read_line(&mut line)
                .map_err(|e| Error::ExternalUnavailable(format!("reading response: {e}")))?;
            if n == 0 {
                return Err(Error::ExternalUnavailable(
                    "peer closed its output before answering every request".into(),
                ));
            }
            if !line.trim().is_empty() {
                break;
            }
        }
        serde_json::from_str(line.trim())
            .map_err(|e| Error::ProtocolViolation(format!("malformed response line: {e}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceReport {
    pub requests: usize,
    pub responses: usize,
    /// Responses that arrived in a different position than their request.
    pub reordered: usize,
    pub bijective: bool,
    pub dim: usize,
}

/// Sends all `paths` as one pipelined batch and checks that responses map
/// one-to-one onto requests with the declared dimension.
pub fn check_protocol_conformance<W: Write, R: BufRead>(
    client: &mut StdioClient<W, R>,
    paths: &[PathBuf],
) -> Result<ConformanceReport> {
    let (embeddings, arrival) = client.exchange(paths)?;
    let mut hit = vec![false; paths.len()];
    for &i in &arrival {
        hit[i] = true;
    }
    Ok(ConformanceReport {
        requests: paths.len(),
        responses: arrival.len(),
        reordered: arrival.iter().enumerate().filter(|(pos, &i)| *pos != i).count(),
        bijective: arrival.len() == paths.len() && hit.iter().all(|&h| h),
        dim: embeddings.first().map_or(client.dim(), Embedding::dim),
    })
}

type ChildClient = StdioClient<ChildStdin, BufReader<ChildStdout>>;

/// An encoder backed by a child process speaking the stdio protocol.
/// Images passed to [`Encoder::encode`] are written to a scratch PNG first.
pub struct StdioEncoder {
    name: String,
    dim: usize,
    client: Mutex<Option<ChildClient>>,
    child: Mutex<Child>,
    scratch: tempfile::TempDir,
}

impl StdioEncoder {
    pub fn spawn(name: &str, dim: usize, command: &[String]) -> Result<Self> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| Error::Config("stdio encoder command is empty".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::ExternalUnavailable(format!("spawning `{program}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let scratch = tempfile::tempdir().map_err(|e| Error::io(std::env::temp_dir(), e))?;
        Ok(Self {
            name: name.to_owned(),
            dim,
            client: Mutex::new(Some(StdioClient::new(stdin, stdout, dim))),
            child: Mutex::new(child),
            scratch,
        })
    }

    pub fn stdio_encode(&self, paths: &[PathBuf]) -> Result<Vec<Embedding>> {
        let mut guard = self.client.lock().unwrap();
        let client = guard
            .as_mut()
            .ok_or_else(|| Error::ExternalUnavailable("encoder already shut down".into()))?;
        client.encode_paths(paths)
    }

    pub fn conformance(&self, paths: &[PathBuf]) -> Result<ConformanceReport> {
        let mut guard = self.client.lock().unwrap();
        let client = guard
            .as_mut()
            .ok_or_else(|| Error::ExternalUnavailable("encoder already shut down".into()))?;
        check_protocol_conformance(client, paths)
    }

    /// Writes each image to a scratch PNG and sends the whole batch pipelined.
    pub fn encode_batch(&self, images: &[&ImageBuffer]) -> Result<Vec<Embedding>> {
        let paths = images
            .iter()
            .map(|img| {
                let path = self.scratch_path(img);
                if !path.exists() {
                    img.save(&path)?;
                }
                Ok(path)
            })
            .collect::<Result<Vec<_>>>()?;
        self.stdio_encode(&paths)
    }

    fn scratch_path(&self, img: &ImageBuffer) -> PathBuf {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        img.hash(&mut h);
        self.scratch.path().join(format!("{:016x}.png", h.finish()))
    }
}

impl Encoder for StdioEncoder {
    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor {
            name: self.name.clone(),
            dim: self.dim,
            kind: EncoderKind::ExternalStdio,
        }
    }

    fn encode(&self, img: &ImageBuffer) -> Result<Embedding> {
        Ok(self.encode_batch(&[img])?.remove(0))
    }
}

impl Drop for StdioEncoder {
    fn drop(&mut self) {
        // Closing stdin is the shutdown signal.
        self.client.lock().unwrap().take();
        let _ = self.child.lock().unwrap().wait();
    }
}
