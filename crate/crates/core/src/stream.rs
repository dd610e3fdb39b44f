//! Real-time sliding-window detection over a framed codeword byte stream.
//!
//! Ingestion and inference run on separate threads joined by a bounded
//! queue of [`QUEUE_WINDOWS`] windows. A full queue blocks ingestion, so
//! frames are never dropped, and memory stays proportional to the window.

use std::collections::VecDeque;
use std::fs::File;
use std::io::{self, BufReader, Cursor, Read};
use std::net::{SocketAddr, TcpListener};
use std::path::PathBuf;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::codeword::{CodewordClip, CodewordFrame, CwstReader, StreamError, StreamHeader};
use crate::model::{decide, CswModel, ModelError};

pub const QUEUE_WINDOWS: usize = 4;
pub const DEFAULT_WINDOW: usize = 1000;
pub const DEFAULT_HOP: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum DetectError {
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("no data for {0:?}")]
    IdleTimeout(Duration),
    #[error("invalid detector setting: {0}")]
    Config(String),
}

/// Where frames come from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Stdin,
    /// Accept one connection on this address and read it to the end.
    Tcp(SocketAddr),
}

/// Reads in a helper thread so a silent source can be abandoned after
/// `timeout` instead of blocking forever.
struct IdleReader {
    chunks: Receiver<io::Result<Vec<u8>>>,
    pending: Cursor<Vec<u8>>,
    timeout: Duration,
    done: bool,
}

impl IdleReader {
    fn spawn(mut inner: Box<dyn Read + Send>, timeout: Duration) -> Self {
        let (tx, rx) = mpsc::sync_channel(1);
        thread::spawn(move || {
            let mut buf = vec![0u8; 8192];
            loop {
                let msg = match inner.read(&mut buf) {
                    Ok(0) => break,
                    Ok(n) => Ok(buf[..n].to_vec()),
                    Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                    Err(e) => Err(e),
                };
                let stop = msg.is_err();
                if tx.send(msg).is_err() || stop {
                    break;
                }
            }
        });
        Self {
            chunks: rx,
            pending: Cursor::new(Vec::new()),
            timeout,
            done: false,
        }
    }
}

impl Read for IdleReader {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            let n = self.pending.read(buf)?;
            if n > 0 || self.done || buf.is_empty() {
                return Ok(n);
            }
            match self.chunks.recv_timeout(self.timeout) {
                Ok(chunk) => self.pending = Cursor::new(chunk?),
                Err(RecvTimeoutError::Disconnected) => self.done = true,
                Err(RecvTimeoutError::Timeout) => {
                    return Err(io::Error::new(io::ErrorKind::TimedOut, "idle timeout"))
                }
            }
        }
    }
}

/// Validated frames in arrival order.
pub struct FrameSource {
    reader: Option<CwstReader<Box<dyn Read + Send>>>,
    timeout: Option<Duration>,
}

impl FrameSource {
    /// Wraps a byte stream. An input with no bytes at all is an empty
    /// source rather than a header error.
    pub fn from_reader(inner: Box<dyn Read + Send>, idle_timeout: Option<Duration>) -> Result<Self, DetectError> {
        let mut inner: Box<dyn Read + Send> = match idle_timeout {
            Some(t) => Box::new(IdleReader::spawn(inner, t)),
            None => inner,
        };
        let mut first = [0u8; 1];
        let n = loop {
            match inner.read(&mut first) {
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                r => break r.map_err(|e| map_io(e, idle_timeout))?,
            }
        };
        if n == 0 {
            return Ok(Self {
                reader: None,
                timeout: idle_timeout,
            });
        }
        let chained: Box<dyn Read + Send> = Box::new(Cursor::new(vec![first[0]]).chain(inner));
        let reader = CwstReader::new(chained).map_err(|e| map_stream(e, idle_timeout))?;
        Ok(Self {
            reader: Some(reader),
            timeout: idle_timeout,
        })
    }

    pub fn open(origin: &Origin, idle_timeout: Option<Duration>) -> Result<Self, DetectError> {
        let inner: Box<dyn Read + Send> = match origin {
            Origin::File(p) => Box::new(BufReader::new(File::open(p).map_err(StreamError::from)?)),
            Origin::Stdin => Box::new(io::stdin()),
            Origin::Tcp(addr) => {
                let listener = TcpListener::bind(addr).map_err(StreamError::from)?;
                let (conn, _) = listener.accept().map_err(StreamError::from)?;
                Box::new(BufReader::new(conn))
            }
        };
        Self::from_reader(inner, idle_timeout)
    }

    pub fn header(&self) -> Option<&StreamHeader> {
        self.reader.as_ref().map(|r| r.header())
    }

    pub fn codebook_sizes(&self) -> Option<[u16; 3]> {
        self.header().map(|h| h.codebook_sizes)
    }
}

fn map_io(e: io::Error, timeout: Option<Duration>) -> DetectError {
    match (e.kind(), timeout) {
        (io::ErrorKind::TimedOut, Some(t)) => DetectError::IdleTimeout(t),
        _ => DetectError::Stream(e.into()),
    }
}

fn map_stream(e: StreamError, timeout: Option<Duration>) -> DetectError {
    match e {
        StreamError::Io(io) => map_io(io, timeout),
        other => DetectError::Stream(other),
    }
}

impl Iterator for FrameSource {
    type Item = Result<CodewordFrame, DetectError>;

    fn next(&mut self) -> Option<Self::Item> {
        let timeout = self.timeout;
        self.reader
            .as_mut()?
            .next()
            .map(|r| r.map_err(|e| map_stream(e, timeout)))
    }
}

/// Ring of the most recent `window` frames, emitting a window every `hop`
/// frames once full.
#[derive(Clone, Debug)]
pub struct SlidingBuffer {
    window: usize,
    hop: usize,
    ring: VecDeque<CodewordFrame>,
    frames_seen: usize,
}

impl SlidingBuffer {
    pub fn new(window: usize, hop: usize) -> Result<Self, DetectError> {
        if window == 0 || hop == 0 {
            return Err(DetectError::Config("window and hop must be positive".into()));
        }
        Ok(Self {
            window,
            hop,
            ring: VecDeque::with_capacity(window),
            frames_seen: 0,
        })
    }

    pub fn frames_seen(&self) -> usize {
        self.frames_seen
    }

    /// Adds a frame; returns `(start, frames)` when a window is due.
    pub fn push(&mut self, frame: CodewordFrame) -> Option<(usize, Vec<CodewordFrame>)> {
        if self.ring.len() == self.window {
            self.ring.pop_front();
        }
        self.ring.push_back(frame);
        self.frames_seen += 1;
        let due = self.frames_seen >= self.window && (self.frames_seen - self.window) % self.hop == 0;
        due.then(|| (self.frames_seen - self.window, self.ring.iter().copied().collect()))
    }
}

/// Number of windows a stream of `frames` frames produces.
pub fn window_count(frames: usize, window: usize, hop: usize) -> usize {
    if frames < window {
        0
    } else {
        (frames - window) / hop + 1
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub start: usize,
    pub end: usize,
    pub p: f64,
    pub verdict: String,
    pub latency_ms: f64,
    /// Seconds since the Unix epoch when the verdict was produced.
    pub ts: f64,
}

#[derive(Clone, Debug)]
pub struct DetectorSettings {
    pub window: usize,
    pub hop: usize,
    pub threshold: f64,
}

impl Default for DetectorSettings {
    fn default() -> Self {
        Self {
            window: DEFAULT_WINDOW,
            hop: DEFAULT_HOP,
            threshold: 0.5,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DetectSummary {
    pub frames: usize,
    pub events: usize,
}

enum Message {
    Window(usize, Vec<CodewordFrame>),
    Failed(DetectError),
}

/// Classifies every due window of `frames` and hands events to `sink` in
/// window order. Ingestion errors end the stream after the windows that
/// were already complete have been reported.
pub fn sliding_detect<I>(
    frames: I,
    codebook_sizes: [u16; 3],
    model: &CswModel,
    settings: &DetectorSettings,
    mut sink: impl FnMut(DetectionEvent),
) -> Result<DetectSummary, DetectError>
where
    I: IntoIterator<Item = Result<CodewordFrame, DetectError>>,
    I::IntoIter: Send,
{
    let min = model.min_clip_len();
    if settings.window < min {
        return Err(ModelError::ClipTooShort {
            frames: settings.window,
            minimum: min,
        }
        .into());
    }
    if !(settings.threshold > 0.0 && settings.threshold < 1.0) {
        return Err(DetectError::Config(format!("threshold {} outside (0, 1)", settings.threshold)));
    }
    let mut buffer = SlidingBuffer::new(settings.window, settings.hop)?;
    let frames = frames.into_iter();
    let (tx, rx) = mpsc::sync_channel::<Message>(QUEUE_WINDOWS);
    thread::scope(|scope| {
        let ingest = scope.spawn(move || {
            for item in frames {
                match item {
                    Ok(frame) => {
                        if let Some((start, window)) = buffer.push(frame) {
                            if tx.send(Message::Window(start, window)).is_err() {
                                break;
                            }
                        }
                    }
                    Err(e) => {
                        let _ = tx.send(Message::Failed(e));
                        break;
                    }
                }
            }
            buffer.frames_seen()
        });
        let mut events = 0;
        let mut failure = None;
        for msg in rx {
            match msg {
                Message::Window(start, window) => {
                    let clip = CodewordClip {
                        frames: window,
                        codebook_sizes,
                        frame_duration_ms: crate::codeword::DEFAULT_FRAME_MS,
                    };
                    let t = Instant::now();
                    let p = model.probability(&model.input_for(&clip))?;
                    let latency_ms = t.elapsed().as_secs_f64() * 1e3;
                    sink(DetectionEvent {
                        start,
                        end: start + settings.window,
                        p,
                        verdict: decide(p, settings.threshold).as_str().into(),
                        latency_ms,
                        ts: SystemTime::now()
                            .duration_since(UNIX_EPOCH)
                            .map_or(0.0, |d| d.as_secs_f64()),
                    });
                    events += 1;
                }
                Message::Failed(e) => failure = Some(e),
            }
        }
        let frames = ingest.join().expect("ingestion thread panicked");
        match failure {
            Some(e) => Err(e),
            None => Ok(DetectSummary { frames, events }),
        }
    })
}

/// Runs the detector over a clip already in memory.
pub fn detect_clip(
    clip: &CodewordClip,
    model: &CswModel,
    settings: &DetectorSettings,
) -> Result<Vec<DetectionEvent>, DetectError> {
    let mut events = Vec::new();
    sliding_detect(
        clip.frames.iter().copied().map(Ok),
        clip.codebook_sizes,
        model,
        settings,
        |e| events.push(e),
    )?;
    Ok(events)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(i: usize) -> CodewordFrame {
        CodewordFrame([(i % 128) as u16, 0, 0])
    }

    #[test]
    fn emission_rule() {
        let mut b = SlidingBuffer::new(100, 50).unwrap();
        let starts: Vec<usize> = (0..1000).filter_map(|i| b.push(frame(i)).map(|(s, _)| s)).collect();
        assert_eq!(starts.len(), 19);
        assert_eq!(starts, (0..19).map(|k| 50 * k).collect::<Vec<_>>());
        assert_eq!(window_count(1000, 100, 50), 19);
    }

    #[test]
    fn window_holds_latest_frames() {
        let mut b = SlidingBuffer::new(3, 2).unwrap();
        let mut out = Vec::new();
        for i in 0..7 {
            if let Some(w) = b.push(frame(i)) {
                out.push(w);
            }
        }
        assert_eq!(out.len(), 3);
        assert_eq!(out[2].0, 4);
        assert_eq!(out[2].1, vec![frame(4), frame(5), frame(6)]);
    }

    #[test]
    fn single_window() {
        assert_eq!(window_count(1000, 1000, 1000), 1);
        assert_eq!(window_count(999, 1000, 1), 0);
    }

    #[test]
    fn empty_input_is_clean() {
        let mut src = FrameSource::from_reader(Box::new(io::empty()), None).unwrap();
        assert!(src.next().is_none());
        assert!(src.header().is_none());
    }

    #[test]
    fn silent_source_times_out() {
        struct Silent;
        impl Read for Silent {
            fn read(&mut self, _: &mut [u8]) -> io::Result<usize> {
                thread::sleep(Duration::from_secs(5));
                Ok(0)
            }
        }
        let r = FrameSource::from_reader(Box::new(Silent), Some(Duration::from_millis(50)));
        assert!(matches!(r, Err(DetectError::IdleTimeout(_))));
    }
}
