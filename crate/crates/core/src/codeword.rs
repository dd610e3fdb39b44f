//! Codeword streams: the 3×N matrix of quantizer indices that the detector
//! consumes, clip slicing, input scaling, and the `.cwst` container.
//!
//! # Container layout
//!
//! All integers little-endian.
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `CWST`                            |
//! | 4      | 2    | version (`1`)                           |
//! | 6      | 6    | codebook sizes, 3 × u16                 |
//! | 12     | 2    | frame duration in ms                    |
//! | 14     | 8    | frame count (`u64::MAX`: open-ended)    |
//! | 22     | 6·N  | frames, each 3 × u16 codeword indices   |
//!
//! An open-ended count marks a live stream that ends at the first clean EOF
//! on a record boundary. A JSON sidecar with the same basename and a `.json`
//! extension may carry free-form metadata.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::nn::Tensor2;

pub const MAGIC: [u8; 4] = *b"CWST";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 22;
pub const FRAME_LEN: usize = 6;
/// Frame count written for streams of unknown length.
pub const OPEN_ENDED: u64 = u64::MAX;

/// Default codebook sizes: 7-bit, 5-bit and 5-bit LSF stages.
pub const DEFAULT_CODEBOOK_SIZES: [u16; 3] = [128, 32, 32];
pub const DEFAULT_FRAME_MS: u16 = 10;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error("frame {frame} slot {slot}: index {value} out of range")]
    IndexOutOfRange { frame: usize, slot: usize, value: u16 },
    #[error("invalid codebook sizes {0:?}")]
    InvalidCodebookSizes([u16; 3]),
    #[error("empty stream")]
    EmptyStream,
    #[error("clip length must be at least one frame")]
    ZeroClipLength,
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },
    #[error("unsupported container version {found} (expected {VERSION})")]
    VersionMismatch { found: u16 },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("sidecar: {0}")]
    Sidecar(#[from] serde_json::Error),
}

/// Codeword indices of one frame, one per quantizer slot.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct CodewordFrame(pub [u16; 3]);

impl CodewordFrame {
    pub fn new(a1: u16, a2: u16, a3: u16) -> Self {
        Self([a1, a2, a3])
    }

    /// Index of the first slot whose codeword is not below its codebook size.
    pub fn first_violation(&self, sizes: &[u16; 3]) -> Option<usize> {
        (0..3).find(|&j| self.0[j] >= sizes[j])
    }
}

/// A run of frames quantized against fixed codebook sizes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodewordClip {
    pub frames: Vec<CodewordFrame>,
    pub codebook_sizes: [u16; 3],
    pub frame_duration_ms: u16,
}

impl CodewordClip {
    pub fn new(frames: Vec<CodewordFrame>, codebook_sizes: [u16; 3]) -> Result<Self, StreamError> {
        validate_clip(Self {
            frames,
            codebook_sizes,
            frame_duration_ms: DEFAULT_FRAME_MS,
        })
    }

    pub fn with_duration(mut self, frame_duration_ms: u16) -> Self {
        self.frame_duration_ms = frame_duration_ms;
        self
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn duration_ms(&self) -> u64 {
        self.frames.len() as u64 * self.frame_duration_ms as u64
    }

    pub fn validate(&self) -> Result<(), StreamError> {
        if self.codebook_sizes.contains(&0) || self.frame_duration_ms == 0 {
            return Err(StreamError::InvalidCodebookSizes(self.codebook_sizes));
        }
        for (i, f) in self.frames.iter().enumerate() {
            if let Some(slot) = f.first_violation(&self.codebook_sizes) {
                return Err(StreamError::IndexOutOfRange {
                    frame: i,
                    slot,
                    value: f.0[slot],
                });
            }
        }
        Ok(())
    }

    /// Frames `[start, end)` as a new clip.
    pub fn window(&self, start: usize, end: usize) -> CodewordClip {
        CodewordClip {
            frames: self.frames[start..end].to_vec(),
            codebook_sizes: self.codebook_sizes,
            frame_duration_ms: self.frame_duration_ms,
        }
    }
}

/// Returns the clip unchanged if every index is in range.
pub fn validate_clip(clip: CodewordClip) -> Result<CodewordClip, StreamError> {
    clip.validate()?;
    Ok(clip)
}

/// Successive, non-overlapping clips of `clip_len_frames`; a trailing
/// partial clip is dropped.
pub fn slice_clips(
    stream: &CodewordClip,
    clip_len_frames: usize,
) -> Result<Vec<CodewordClip>, StreamError> {
    if clip_len_frames == 0 {
        return Err(StreamError::ZeroClipLength);
    }
    if stream.is_empty() {
        return Err(StreamError::EmptyStream);
    }
    Ok(stream
        .frames
        .chunks_exact(clip_len_frames)
        .map(|c| CodewordClip {
            frames: c.to_vec(),
            codebook_sizes: stream.codebook_sizes,
            frame_duration_ms: stream.frame_duration_ms,
        })
        .collect())
}

/// How codeword indices are presented to the network.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// `a / (|L| - 1)`, in `[0, 1]`.
    #[default]
    Unit,
    /// Raw index values.
    Raw,
}

impl InputScaling {
    #[inline]
    pub fn scale(self, index: u16, size: u16) -> f64 {
        match self {
            InputScaling::Unit if size > 1 => index as f64 / (size - 1) as f64,
            InputScaling::Unit => 0.0,
            InputScaling::Raw => index as f64,
        }
    }
}

/// A clip as a 3×N real matrix (row j = slot j, column i = frame i).
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedClip {
    pub matrix: Tensor2,
}

impl NormalizedClip {
    pub fn frames(&self) -> usize {
        self.matrix.cols()
    }

    /// N×3 layout, one row per frame, as consumed by the convolution layers.
    pub fn time_major(&self) -> Tensor2 {
        self.matrix.transpose()
    }
}

pub fn normalize(clip: &CodewordClip) -> NormalizedClip {
    normalize_with(clip, InputScaling::Unit)
}

pub fn normalize_with(clip: &CodewordClip, scaling: InputScaling) -> NormalizedClip {
    let s = clip.codebook_sizes;
    NormalizedClip {
        matrix: Tensor2::from_fn(3, clip.len(), |j, i| scaling.scale(clip.frames[i].0[j], s[j])),
    }
}

/// Time-major (N×3) network input for a frame slice.
pub fn time_major_input(frames: &[CodewordFrame], sizes: [u16; 3], scaling: InputScaling) -> Tensor2 {
    Tensor2::from_fn(frames.len(), 3, |i, j| scaling.scale(frames[i].0[j], sizes[j]))
}

/// Container header fields.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub codebook_sizes: [u16; 3],
    pub frame_duration_ms: u16,
    pub frame_count: u64,
}

impl StreamHeader {
    pub fn to_bytes(&self) -> [u8; HEADER_LEN] {
        let mut b = [0u8; HEADER_LEN];
        b[0..4].copy_from_slice(&MAGIC);
        b[4..6].copy_from_slice(&VERSION.to_le_bytes());
        for j in 0..3 {
            b[6 + 2 * j..8 + 2 * j].copy_from_slice(&self.codebook_sizes[j].to_le_bytes());
        }
        b[12..14].copy_from_slice(&self.frame_duration_ms.to_le_bytes());
        b[14..22].copy_from_slice(&self.frame_count.to_le_bytes());
        b
    }

    /// Parses a header; `available` is how many bytes were actually read, so
    /// truncation is reported at the right offset.
    pub fn parse(bytes: &[u8]) -> Result<Self, StreamError> {
        let fmt = |offset: usize, reason: &str| StreamError::Format {
            offset: offset as u64,
            reason: reason.to_string(),
        };
        if bytes.len() < 4 || bytes[0..4] != MAGIC {
            return Err(fmt(0, "bad magic"));
        }
        if bytes.len() < 6 {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        let version = u16::from_le_bytes([bytes[4], bytes[5]]);
        if version != VERSION {
            return Err(StreamError::VersionMismatch { found: version });
        }
        if bytes.len() < HEADER_LEN {
            return Err(fmt(bytes.len(), "truncated header"));
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let codebook_sizes = [u16_at(6), u16_at(8), u16_at(10)];
        if let Some(j) = codebook_sizes.iter().position(|&s| s == 0) {
            return Err(fmt(6 + 2 * j, "zero codebook size"));
        }
        let frame_duration_ms = u16_at(12);
        if frame_duration_ms == 0 {
            return Err(fmt(12, "zero frame duration"));
        }
        let mut count = [0u8; 8];
        count.copy_from_slice(&bytes[14..22]);
        Ok(Self {
            codebook_sizes,
            frame_duration_ms,
            frame_count: u64::from_le_bytes(count),
        })
    }
}

pub fn encode_frame(frame: &CodewordFrame) -> [u8; FRAME_LEN] {
    let mut b = [0u8; FRAME_LEN];
    for j in 0..3 {
        b[2 * j..2 * j + 2].copy_from_slice(&frame.0[j].to_le_bytes());
    }
    b
}

/// Incremental `.cwst` decoder over any byte source. Frames are validated
/// as they arrive; the first malformed record ends the stream with an error.
pub struct CwstReader<R> {
    inner: R,
    header: StreamHeader,
    offset: u64,
    frames_read: u64,
    failed: bool,
}

/// Reads until `buf` is full or EOF; returns bytes read.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut n = 0;
    while n < buf.len() {
        match r.read(&mut buf[n..]) {
            Ok(0) => break,
            Ok(k) => n += k,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(n)
}

impl<R: Read> CwstReader<R> {
    pub fn new(mut inner: R) -> Result<Self, StreamError> {
        let mut buf = [0u8; HEADER_LEN];
        let n = read_full(&mut inner, &mut buf)?;
        let header = StreamHeader::parse(&buf[..n])?;
        Ok(Self {
            inner,
            header,
            offset: HEADER_LEN as u64,
            frames_read: 0,
            failed: false,
        })
    }

    pub fn header(&self) -> &StreamHeader {
        &self.header
    }

    /// Byte offset of the next record.
    pub fn offset(&self) -> u64 {
        self.offset
    }

    pub fn frames_read(&self) -> u64 {
        self.frames_read
    }

    pub fn next_frame(&mut self) -> Result<Option<CodewordFrame>, StreamError> {
        if self.failed {
            return Ok(None);
        }
        let r = self.next_inner();
        if r.is_err() {
            self.failed = true;
        }
        r
    }

    fn next_inner(&mut self) -> Result<Option<CodewordFrame>, StreamError> {
        let open = self.header.frame_count == OPEN_ENDED;
        let mut buf = [0u8; FRAME_LEN];
        if !open && self.frames_read == self.header.frame_count {
            // Declared length reached; anything more is garbage.
            let mut probe = [0u8; 1];
            return match read_full(&mut self.inner, &mut probe)? {
                0 => Ok(None),
                _ => Err(StreamError::Format {
                    offset: self.offset,
                    reason: "trailing bytes after last frame".into(),
                }),
            };
        }
        let n = read_full(&mut self.inner, &mut buf)?;
        if n == 0 && open {
            return Ok(None);
        }
        if n < FRAME_LEN {
            return Err(StreamError::Format {
                offset: self.offset + n as u64,
                reason: format!(
                    "truncated frame record {} ({n} of {FRAME_LEN} bytes)",
                    self.frames_read
                ),
            });
        }
        let frame = CodewordFrame([
            u16::from_le_bytes([buf[0], buf[1]]),
            u16::from_le_bytes([buf[2], buf[3]]),
            u16::from_le_bytes([buf[4], buf[5]]),
        ]);
        if let Some(slot) = frame.first_violation(&self.header.codebook_sizes) {
            return Err(StreamError::Format {
                offset: self.offset + 2 * slot as u64,
                reason: format!(
                    "frame {} slot {slot}: index {} >= codebook size {}",
                    self.frames_read,
                    frame.0[slot],
                    self.header.codebook_sizes[slot]
                ),
            });
        }
        self.offset += FRAME_LEN as u64;
        self.frames_read += 1;
        Ok(Some(frame))
    }
}

impl<R: Read> Iterator for CwstReader<R> {
    type Item = Result<CodewordFrame, StreamError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Serializes a clip into container bytes.
pub fn encode_container(clip: &CodewordClip) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + FRAME_LEN * clip.len());
    let header = StreamHeader {
        codebook_sizes: clip.codebook_sizes,
        frame_duration_ms: clip.frame_duration_ms,
        frame_count: clip.len() as u64,
    };
    out.extend_from_slice(&header.to_bytes());
    for f in &clip.frames {
        out.extend_from_slice(&encode_frame(f));
    }
    out
}

pub fn decode_container(bytes: &[u8]) -> Result<CodewordClip, StreamError> {
    read_from(bytes)
}

/// Reads a complete stream from any byte source.
pub fn read_from<R: Read>(source: R) -> Result<CodewordClip, StreamError> {
    let mut reader = CwstReader::new(source)?;
    let h = *reader.header();
    let mut frames = Vec::with_capacity(if h.frame_count == OPEN_ENDED {
        0
    } else {
        h.frame_count.min(1 << 24) as usize
    });
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    Ok(CodewordClip {
        frames,
        codebook_sizes: h.codebook_sizes,
        frame_duration_ms: h.frame_duration_ms,
    })
}

/// Writes a validated clip; returns the number of bytes written.
pub fn write_container(clip: &CodewordClip, path: impl AsRef<Path>) -> Result<u64, StreamError> {
    clip.validate()?;
    let bytes = encode_container(clip);
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(bytes.len() as u64)
}

/// Concatenates clips sharing codebook sizes and frame duration into one
/// stream and writes it.
pub fn write_clips(clips: &[CodewordClip], path: impl AsRef<Path>) -> Result<u64, StreamError> {
    let first = clips.first().ok_or(StreamError::EmptyStream)?;
    let mut stream = CodewordClip {
        frames: Vec::new(),
        codebook_sizes: first.codebook_sizes,
        frame_duration_ms: first.frame_duration_ms,
    };
    for c in clips {
        if c.codebook_sizes != stream.codebook_sizes
            || c.frame_duration_ms != stream.frame_duration_ms
        {
            return Err(StreamError::InvalidCodebookSizes(c.codebook_sizes));
        }
        stream.frames.extend_from_slice(&c.frames);
    }
    write_container(&stream, path)
}

pub fn read_container(path: impl AsRef<Path>) -> Result<CodewordClip, StreamError> {
    read_from(BufReader::new(File::open(path)?))
}

/// Free-form clip metadata stored next to a container.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClipMetadata {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

pub fn sidecar_path(container: impl AsRef<Path>) -> PathBuf {
    container.as_ref().with_extension("json")
}

pub fn write_sidecar(container: impl AsRef<Path>, meta: &ClipMetadata) -> Result<(), StreamError> {
    let text = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(container), text + "\n")?;
    Ok(())
}

/// Sidecar metadata, or `None` when there is no sidecar file.
pub fn read_sidecar(container: impl AsRef<Path>) -> Result<Option<ClipMetadata>, StreamError> {
    let p = sidecar_path(container);
    match std::fs::read_to_string(&p) {
        Ok(text) => Ok(Some(serde_json::from_str(&text)?)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(e.into()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn clip(frames: &[[u16; 3]]) -> CodewordClip {
        CodewordClip {
            frames: frames.iter().map(|&f| CodewordFrame(f)).collect(),
            codebook_sizes: DEFAULT_CODEBOOK_SIZES,
            frame_duration_ms: DEFAULT_FRAME_MS,
        }
    }

    fn ramp(n: usize) -> CodewordClip {
        clip(
            &(0..n)
                .map(|i| [(i % 128) as u16, (i % 32) as u16, ((i * 7) % 32) as u16])
                .collect::<Vec<_>>(),
        )
    }

    #[test]
    fn validation_bounds() {
        let zeros = clip(&[[0, 0, 0]; 4]);
        assert_eq!(validate_clip(zeros.clone()).unwrap(), zeros);
        assert!(validate_clip(clip(&[[127, 31, 31]])).is_ok());
        match validate_clip(clip(&[[0, 0, 0], [128, 0, 0]])) {
            Err(StreamError::IndexOutOfRange {
                frame: 1,
                slot: 0,
                value: 128,
            }) => {}
            other => panic!("{other:?}"),
        }
        match validate_clip(clip(&[[0, 0, 32]])) {
            Err(StreamError::IndexOutOfRange { slot: 2, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn slicing_drops_remainder() {
        let s = ramp(25);
        let clips = slice_clips(&s, 10).unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[0].frames, s.frames[0..10]);
        assert_eq!(clips[1].frames, s.frames[10..20]);

        let s10 = ramp(10);
        assert_eq!(slice_clips(&s10, 10).unwrap(), vec![s10.clone()]);
        assert!(slice_clips(&ramp(9), 10).unwrap().is_empty());
        assert!(matches!(slice_clips(&ramp(0), 10), Err(StreamError::EmptyStream)));
        assert!(matches!(slice_clips(&s10, 0), Err(StreamError::ZeroClipLength)));
    }

    #[test]
    fn normalization_examples() {
        let n = normalize(&clip(&[[0, 0, 0], [127, 31, 31], [64, 16, 8]]));
        assert_eq!(n.matrix.shape(), (3, 3));
        for j in 0..3 {
            assert_eq!(n.matrix.get(j, 0), 0.0);
            assert_eq!(n.matrix.get(j, 1), 1.0);
        }
        let expect = [64.0 / 127.0, 16.0 / 31.0, 8.0 / 31.0];
        for j in 0..3 {
            assert!((n.matrix.get(j, 2) - expect[j]).abs() < 1e-15);
        }
        let raw = normalize_with(&clip(&[[64, 16, 8]]), InputScaling::Raw);
        assert_eq!(raw.matrix.as_slice(), &[64.0, 16.0, 8.0]);
    }

    #[test]
    fn container_round_trip_and_magic() {
        let s = ramp(1000).with_duration(20);
        let bytes = encode_container(&s);
        assert_eq!(bytes.len(), HEADER_LEN + 6000);
        assert_eq!(decode_container(&bytes).unwrap(), s);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        match decode_container(&bad) {
            Err(StreamError::Format { offset: 0, .. }) => {}
            other => panic!("{other:?}"),
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            decode_container(&v2),
            Err(StreamError::VersionMismatch { found: 2 })
        ));
    }

    #[test]
    fn truncated_record_offset() {
        let bytes = encode_container(&ramp(3));
        let cut = HEADER_LEN + FRAME_LEN + 4;
        match decode_container(&bytes[..cut]) {
            Err(StreamError::Format { offset, .. }) => assert_eq!(offset, cut as u64),
            other => panic!("{other:?}"),
        }
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_container(&extra), Err(StreamError::Format { .. })));
    }

    #[test]
    fn open_ended_stream() {
        let s = ramp(5);
        let mut bytes = encode_container(&s);
        bytes[14..22].copy_from_slice(&OPEN_ENDED.to_le_bytes());
        assert_eq!(decode_container(&bytes).unwrap(), s);
    }

    #[test]
    fn sidecar_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.cwst");
        assert_eq!(read_sidecar(&p).unwrap(), None);
        let mut meta = ClipMetadata {
            label: Some("stego".into()),
            embedding_rate: Some(0.5),
            seed: Some(9),
            ..Default::default()
        };
        meta.extra.insert("note".into(), serde_json::json!("x"));
        write_sidecar(&p, &meta).unwrap();
        assert_eq!(read_sidecar(&p).unwrap(), Some(meta));
    }
}
