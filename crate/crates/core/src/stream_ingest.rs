//! Raw sensor streams: the binary encoder protocol and the text pose and
//! frame-index logs.
//!
//! Encoder frames are fixed-size, little-endian:
//!
//! | offset | size | field                                   |
//! |-------:|-----:|-----------------------------------------|
//! | 0      | 2    | magic `0xD5 0xE0`                       |
//! | 2      | 4    | `seq` (u32)                             |
//! | 6      | 8    | `t_us` (u64)                            |
//! | 14     | 12   | six u16 encoder counts                  |
//! | 26     | 2    | CRC-16/CCITT-FALSE over bytes 2..26     |

use std::fmt::Write as _;

use crc::{Crc, CRC_16_IBM_3740};
use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::FINGER_CHANNELS;

pub const MAGIC: [u8; 2] = [0xD5, 0xE0];
pub const FRAME_LEN: usize = 28;
const CRC_RANGE: std::ops::Range<usize> = 2..26;

/// Quaternions further than this from unit norm are renormalized on ingest.
pub const QUATERNION_NORM_TOL: f64 = 1e-6;

// CRC-16/CCITT-FALSE is catalogued as CRC-16/IBM-3740: poly 0x1021, init 0xFFFF.
const CCITT_FALSE: Crc<u16> = Crc::<u16>::new(&CRC_16_IBM_3740);

pub fn crc16_ccitt_false(bytes: &[u8]) -> u16 {
    CCITT_FALSE.checksum(bytes)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EncoderFrame {
    pub seq: u32,
    pub t_us: u64,
    pub values: [u16; FINGER_CHANNELS],
}

pub fn encode_encoder_frame(f: &EncoderFrame) -> [u8; FRAME_LEN] {
    let mut out = [0u8; FRAME_LEN];
    out[0..2].copy_from_slice(&MAGIC);
    out[2..6].copy_from_slice(&f.seq.to_le_bytes());
    out[6..14].copy_from_slice(&f.t_us.to_le_bytes());
    for (i, v) in f.values.iter().enumerate() {
        out[14 + 2 * i..16 + 2 * i].copy_from_slice(&v.to_le_bytes());
    }
    let crc = crc16_ccitt_false(&out[CRC_RANGE]);
    out[26..28].copy_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes one frame; `None` on a bad magic or checksum.
pub fn decode_encoder_frame(bytes: &[u8; FRAME_LEN]) -> Option<EncoderFrame> {
    if bytes[0..2] != MAGIC {
        return None;
    }
    let crc = u16::from_le_bytes([bytes[26], bytes[27]]);
    if crc != crc16_ccitt_false(&bytes[CRC_RANGE]) {
        return None;
    }
    let mut values = [0u16; FINGER_CHANNELS];
    for (i, v) in values.iter_mut().enumerate() {
        *v = u16::from_le_bytes([bytes[14 + 2 * i], bytes[15 + 2 * i]]);
    }
    Some(EncoderFrame {
        seq: u32::from_le_bytes(bytes[2..6].try_into().unwrap()),
        t_us: u64::from_le_bytes(bytes[6..14].try_into().unwrap()),
        values,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StreamDiagnostics {
    pub frames_ok: u64,
    pub crc_failures: u64,
    /// Runs of discarded bytes skipped while hunting for the next magic.
    pub resyncs: u64,
    /// Frames whose `seq` is not the successor of the previous good frame.
    pub seq_gaps: u64,
    /// Input ended inside a magic-led partial frame.
    pub truncated_tail: bool,
}

impl std::fmt::Display for StreamDiagnostics {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "frames_ok={} crc_failures={} resyncs={} seq_gaps={} truncated_tail={}",
            self.frames_ok, self.crc_failures, self.resyncs, self.seq_gaps, self.truncated_tail
        )
    }
}

/// Incremental frame scanner. Between calls it keeps at most one partial
/// frame (fewer than [`FRAME_LEN`] bytes starting at a magic prefix).
#[derive(Debug, Default)]
pub struct StreamScanner {
    pending: Vec<u8>,
    diag: StreamDiagnostics,
    last_seq: Option<u32>,
    discarding: bool,
}

impl StreamScanner {
    pub fn new() -> Self {
        Self::default()
    }

    fn discard(&mut self, n: usize) {
        if n > 0 && !self.discarding {
            self.discarding = true;
            self.diag.resyncs += 1;
        }
    }

    /// Consumes `bytes`, appending every complete valid frame to `out`.
    pub fn feed(&mut self, bytes: &[u8], out: &mut Vec<EncoderFrame>) {
        let mut buf = std::mem::take(&mut self.pending);
        buf.extend_from_slice(bytes);
        let mut i = 0;
        while i < buf.len() {
            let Some(off) = buf[i..].windows(2).position(|w| w == MAGIC) else {
                let keep = usize::from(buf.last() == Some(&MAGIC[0]));
                self.discard(buf.len() - i - keep);
                i = buf.len() - keep;
                break;
            };
            self.discard(off);
            i += off;
            if buf.len() - i < FRAME_LEN {
                break;
            }
            let candidate: &[u8; FRAME_LEN] = buf[i..i + FRAME_LEN].try_into().unwrap();
            match decode_encoder_frame(candidate) {
                Some(frame) => {
                    if let Some(prev) = self.last_seq {
                        if frame.seq != prev.wrapping_add(1) {
                            self.diag.seq_gaps += 1;
                        }
                    }
                    self.last_seq = Some(frame.seq);
                    self.diag.frames_ok += 1;
                    self.discarding = false;
                    out.push(frame);
                    i += FRAME_LEN;
                }
                None => {
                    self.diag.crc_failures += 1;
                    self.discard(1);
                    i += 1;
                }
            }
        }
        buf.drain(..i);
        self.pending = buf;
    }

    pub fn diagnostics(&self) -> StreamDiagnostics {
        self.diag
    }

    /// Ends the stream and reports whether it stopped inside a frame.
    pub fn finish(mut self) -> StreamDiagnostics {
        if self.pending.len() >= MAGIC.len() {
            self.diag.truncated_tail = true;
        } else {
            let n = self.pending.len();
            self.discard(n);
        }
        self.diag
    }
}

/// One-shot scan of a complete byte buffer. Never fails; problems are
/// reported through the diagnostics.
pub fn scan_stream(bytes: &[u8]) -> (Vec<EncoderFrame>, StreamDiagnostics) {
    let mut scanner = StreamScanner::new();
    let mut frames = Vec::new();
    scanner.feed(bytes, &mut frames);
    (frames, scanner.finish())
}

/// `seq t_us v0 .. v5` per line.
pub fn write_encoder_text(frames: &[EncoderFrame]) -> String {
    let mut out = String::new();
    for f in frames {
        let _ = write!(out, "{} {}", f.seq, f.t_us);
        for v in f.values {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LogError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: timestamp {t_us} precedes previous {prev}")]
    NonMonotone { line: usize, t_us: u64, prev: u64 },
    #[error("line {line}: frame number {frame_no} does not increase")]
    FrameOrder { line: usize, frame_no: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSample {
    pub t_us: u64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

impl PoseSample {
    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseLog {
    pub samples: Vec<PoseSample>,
    /// Rows whose quaternion norm was off by more than [`QUATERNION_NORM_TOL`].
    pub renormalized: usize,
}

fn data_rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("");
        let fields: Vec<&str> = body.split_whitespace().collect();
        (!fields.is_empty()).then_some((i + 1, fields))
    })
}

fn field<T: std::str::FromStr>(line: usize, s: &str, what: &str) -> Result<T, LogError> {
    s.parse().map_err(|_| LogError::Malformed {
        line,
        message: format!("bad {what} `{s}`"),
    })
}

/// Parses `t_us px py pz qw qx qy qz` rows (meters).
pub fn parse_pose_log(text: &str) -> Result<PoseLog, LogError> {
    let mut samples: Vec<PoseSample> = Vec::new();
    let mut renormalized = 0;
    for (line, f) in data_rows(text) {
        if f.len() != 8 {
            return Err(LogError::Malformed {
                line,
                message: format!("expected 8 fields, found {}", f.len()),
            });
        }
        let t_us: u64 = field(line, f[0], "timestamp")?;
        let mut v = [0.0f64; 7];
        for (slot, s) in v.iter_mut().zip(&f[1..]) {
            *slot = field(line, s, "number")?;
            if !slot.is_finite() {
                return Err(LogError::Malformed {
                    line,
                    message: format!("non-finite value `{s}`"),
                });
            }
        }
        if let Some(prev) = samples.last() {
            if t_us < prev.t_us {
                return Err(LogError::NonMonotone {
                    line,
                    t_us,
                    prev: prev.t_us,
                });
            }
        }
        let q = Quaternion::new(v[3], v[4], v[5], v[6]);
        let norm = q.norm();
        if !(norm > 1e-9) {
            return Err(LogError::Malformed {
                line,
                message: "zero quaternion".into(),
            });
        }
        let orientation = if (norm - 1.0).abs() > QUATERNION_NORM_TOL {
            renormalized += 1;
            UnitQuaternion::from_quaternion(q)
        } else {
            UnitQuaternion::new_unchecked(q)
        };
        samples.push(PoseSample {
            t_us,
            position: Vector3::new(v[0], v[1], v[2]),
            orientation,
        });
    }
    Ok(PoseLog {
        samples,
        renormalized,
    })
}

pub fn write_pose_log(samples: &[PoseSample]) -> String {
    let mut out = String::new();
    for s in samples {
        let q = s.wxyz();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            s.t_us, s.position.x, s.position.y, s.position.z, q[0], q[1], q[2], q[3]
        );
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameIndexEntry {
    pub frame_no: u32,
    pub t_us: u64,
}

/// Parses `frame_no t_us` rows.
pub fn parse_frame_index(text: &str) -> Result<Vec<FrameIndexEntry>, LogError> {
    let mut out: Vec<FrameIndexEntry> = Vec::new();
    for (line, f) in data_rows(text) {
        if f.len() != 2 {
            return Err(LogError::Malformed {
                line,
                message: format!("expected 2 fields, found {}", f.len()),
            });
        }
        let entry = FrameIndexEntry {
            frame_no: field(line, f[0], "frame number")?,
            t_us: field(line, f[1], "timestamp")?,
        };
        if let Some(prev) = out.last() {
            if entry.frame_no <= prev.frame_no {
                return Err(LogError::FrameOrder {
                    line,
                    frame_no: entry.frame_no,
                });
            }
            if entry.t_us < prev.t_us {
                return Err(LogError::NonMonotone {
                    line,
                    t_us: entry.t_us,
                    prev: prev.t_us,
                });
            }
        }
        out.push(entry);
    }
    Ok(out)
}

pub fn write_frame_index(entries: &[FrameIndexEntry]) -> String {
    let mut out = String::new();
    for e in entries {
        let _ = writeln!(out, "{} {}", e.frame_no, e.t_us);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(seq: u32) -> EncoderFrame {
        EncoderFrame {
            seq,
            t_us: 1000 * seq as u64,
            values: [1, 2, 3, 4, 5, 6],
        }
    }

    #[test]
    fn check_value() {
        assert_eq!(crc16_ccitt_false(b"123456789"), 0x29B1);
    }

    #[test]
    fn zero_frame() {
        let f = EncoderFrame {
            seq: 0,
            t_us: 0,
            values: [0; 6],
        };
        let bytes = encode_encoder_frame(&f);
        assert_eq!(bytes[..2], MAGIC);
        assert!(bytes[2..26].iter().all(|&b| b == 0));
        assert_eq!(decode_encoder_frame(&bytes), Some(f));
    }

    #[test]
    fn empty_input() {
        let (frames, diag) = scan_stream(&[]);
        assert!(frames.is_empty());
        assert_eq!(diag, StreamDiagnostics::default());
    }

    #[test]
    fn flipped_byte() {
        let mut bytes = encode_encoder_frame(&frame(3));
        bytes[10] ^= 0x40;
        let (frames, diag) = scan_stream(&bytes);
        assert!(frames.is_empty());
        assert_eq!(diag.crc_failures, 1);
        assert_eq!(diag.frames_ok, 0);
    }

    #[test]
    fn truncated_and_gaps() {
        let mut bytes = Vec::new();
        for s in [1, 2, 4] {
            bytes.extend_from_slice(&encode_encoder_frame(&frame(s)));
        }
        bytes.extend_from_slice(&encode_encoder_frame(&frame(5))[..10]);
        let (frames, diag) = scan_stream(&bytes);
        assert_eq!(frames.len(), 3);
        assert_eq!(diag.seq_gaps, 1);
        assert!(diag.truncated_tail);
        assert_eq!(diag.resyncs, 0);
    }

    #[test]
    fn byte_at_a_time_matches_one_shot() {
        let mut bytes = vec![0x11, 0xD5, 0x00, 0xD5];
        for s in 0..5 {
            bytes.extend_from_slice(&encode_encoder_frame(&frame(s)));
            bytes.push(0xD5);
        }
        let (expected, diag) = scan_stream(&bytes);
        let mut scanner = StreamScanner::new();
        let mut got = Vec::new();
        for b in &bytes {
            scanner.feed(std::slice::from_ref(b), &mut got);
            assert!(scanner.pending.len() < FRAME_LEN);
        }
        assert_eq!(got, expected);
        assert_eq!(scanner.finish(), diag);
        assert_eq!(expected.len(), 5);
    }

    #[test]
    fn pose_log_identity_row() {
        let log = parse_pose_log("0 0 0 0 1 0 0 0\n").unwrap();
        assert_eq!(log.samples.len(), 1);
        assert_eq!(log.samples[0].t_us, 0);
        assert_eq!(log.samples[0].orientation, UnitQuaternion::identity());
        assert_eq!(log.renormalized, 0);
    }

    #[test]
    fn pose_log_renormalizes() {
        let log = parse_pose_log("# comment\n5 0.1 0.2 0.3 1.0005 0 0 0\n").unwrap();
        assert_eq!(log.renormalized, 1);
        assert!((log.samples[0].orientation.quaternion().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn pose_log_errors() {
        assert_eq!(
            parse_pose_log("0 0 0 0 1 0 0 0\n1 0 0 0 1 0 0\n").unwrap_err(),
            LogError::Malformed {
                line: 2,
                message: "expected 8 fields, found 7".into()
            }
        );
        assert!(matches!(
            parse_pose_log("10 0 0 0 1 0 0 0\n5 0 0 0 1 0 0 0\n").unwrap_err(),
            LogError::NonMonotone { line: 2, .. }
        ));
        assert!(parse_pose_log("0 0 0 0 0 0 0 0\n").is_err());
        assert!(parse_pose_log("x 0 0 0 1 0 0 0\n").is_err());
    }

    #[test]
    fn frame_index() {
        let idx = parse_frame_index("0 0\n1 33333\n2 66667\n").unwrap();
        assert_eq!(idx[2], FrameIndexEntry { frame_no: 2, t_us: 66667 });
        assert_eq!(write_frame_index(&idx), "0 0\n1 33333\n2 66667\n");
        assert!(matches!(
            parse_frame_index("1 0\n1 10\n").unwrap_err(),
            LogError::FrameOrder { line: 2, .. }
        ));
        assert!(matches!(
            parse_frame_index("1 10\n2 5\n").unwrap_err(),
            LogError::NonMonotone { .. }
        ));
    }
}
