//! Pixel event records and per-pixel energy calibration.
//!
//! TPXE layout (little-endian):
//!
//! | offset | field                      |
//! |--------|----------------------------|
//! | 0      | magic `b"TPXE"`            |
//! | 4      | u32 version (= 1)          |
//! | 8      | u32 n_x                    |
//! | 12     | u32 n_y                    |
//! | 16     | u64 record count           |
//! | 24     | records, 16 bytes each     |
//!
//! A record is `u16 x, u16 y, u16 tot, u16 reserved (= 0), u64 toa`.

mod calibration;

pub use calibration::{
    apply_calibration, find_line_peak, fit_calibration, line_peaks, synthesize_line_events,
    tot_histograms, ApplyStats, CalibrationError, CalibrationMap, LineSet, PixelGains,
};

use std::fs;
use std::io::{self, Write};
use std::path::Path;

use thiserror::Error;

pub const TPXE_MAGIC: [u8; 4] = *b"TPXE";
pub const TPXE_VERSION: u32 = 1;
pub const TPXE_HEADER_LEN: usize = 24;
pub const TPXE_RECORD_LEN: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PixelEvent {
    pub x: u16,
    pub y: u16,
    pub tot: u16,
    pub toa: u64,
}

#[derive(Debug, Error)]
pub enum EventFormatError {
    #[error("bad magic {found:?} at byte 0")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported version {found} at byte 4 (expected {TPXE_VERSION})")]
    VersionMismatch { found: u32 },
    #[error("stream truncated at byte {offset}: need {needed} more bytes")]
    Truncated { offset: usize, needed: usize },
    #[error("{extra} unexpected bytes after the last record at byte {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("record {index} at byte {offset}: pixel ({x}, {y}) outside {n_x}×{n_y}")]
    PixelOutOfRange {
        index: u64,
        offset: usize,
        x: u16,
        y: u16,
        n_x: u32,
        n_y: u32,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl EventFormatError {
    /// Byte offset the error refers to, when it has one.
    pub fn offset(&self) -> Option<usize> {
        match self {
            Self::BadMagic { .. } => Some(0),
            Self::VersionMismatch { .. } => Some(4),
            Self::Truncated { offset, .. }
            | Self::TrailingBytes { offset, .. }
            | Self::PixelOutOfRange { offset, .. } => Some(*offset),
            Self::Io(_) => None,
        }
    }
}

/// Events together with the sensor dimensions they were recorded on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    pub n_x: u32,
    pub n_y: u32,
    pub events: Vec<PixelEvent>,
}

impl EventStream {
    pub fn new(n_x: u32, n_y: u32, events: Vec<PixelEvent>) -> Self {
        Self { n_x, n_y, events }
    }

    pub fn write<W: Write>(&self, out: W) -> Result<(), EventFormatError> {
        write_events(out, self.n_x, self.n_y, &self.events)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EventFormatError> {
        let mut buf = Vec::with_capacity(TPXE_HEADER_LEN + TPXE_RECORD_LEN * self.events.len());
        self.write(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EventFormatError> {
        parse_events(&fs::read(path)?)
    }
}

/// Serialize events. Pixels are not range-checked here; the reader rejects
/// records outside `n_x × n_y`.
pub fn write_events<W: Write>(
    mut out: W,
    n_x: u32,
    n_y: u32,
    events: &[PixelEvent],
) -> Result<(), EventFormatError> {
    let mut header = [0u8; TPXE_HEADER_LEN];
    header[0..4].copy_from_slice(&TPXE_MAGIC);
    header[4..8].copy_from_slice(&TPXE_VERSION.to_le_bytes());
    header[8..12].copy_from_slice(&n_x.to_le_bytes());
    header[12..16].copy_from_slice(&n_y.to_le_bytes());
    header[16..24].copy_from_slice(&(events.len() as u64).to_le_bytes());
    out.write_all(&header)?;
    let mut record = [0u8; TPXE_RECORD_LEN];
    for e in events {
        record[0..2].copy_from_slice(&e.x.to_le_bytes());
        record[2..4].copy_from_slice(&e.y.to_le_bytes());
        record[4..6].copy_from_slice(&e.tot.to_le_bytes());
        record[6..8].copy_from_slice(&0u16.to_le_bytes());
        record[8..16].copy_from_slice(&e.toa.to_le_bytes());
        out.write_all(&record)?;
    }
    Ok(())
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

/// Parse a complete TPXE byte stream.
pub fn parse_events(bytes: &[u8]) -> Result<EventStream, EventFormatError> {
    let need = |offset: usize, len: usize| -> Result<(), EventFormatError> {
        if bytes.len() < offset + len {
            Err(EventFormatError::Truncated {
                offset: bytes.len(),
                needed: offset + len - bytes.len(),
            })
        } else {
            Ok(())
        }
    };
    need(0, 4)?;
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != TPXE_MAGIC {
        return Err(EventFormatError::BadMagic { found: magic });
    }
    need(4, 4)?;
    let version = u32_at(bytes, 4);
    if version != TPXE_VERSION {
        return Err(EventFormatError::VersionMismatch { found: version });
    }
    need(8, TPXE_HEADER_LEN - 8)?;
    let n_x = u32_at(bytes, 8);
    let n_y = u32_at(bytes, 12);
    let count = u64_at(bytes, 16);

    let body = bytes.len() - TPXE_HEADER_LEN;
    let complete = (body / TPXE_RECORD_LEN) as u64;
    if complete < count {
        let offset = TPXE_HEADER_LEN + complete as usize * TPXE_RECORD_LEN;
        return Err(EventFormatError::Truncated {
            offset,
            needed: TPXE_RECORD_LEN - (bytes.len() - offset),
        });
    }
    let end = TPXE_HEADER_LEN + count as usize * TPXE_RECORD_LEN;
    if bytes.len() > end {
        return Err(EventFormatError::TrailingBytes {
            offset: end,
            extra: bytes.len() - end,
        });
    }

    let mut events = Vec::with_capacity(count as usize);
    for (index, rec) in bytes[TPXE_HEADER_LEN..]
        .chunks_exact(TPXE_RECORD_LEN)
        .enumerate()
    {
        let (x, y) = (u16_at(rec, 0), u16_at(rec, 2));
        if u32::from(x) >= n_x || u32::from(y) >= n_y {
            return Err(EventFormatError::PixelOutOfRange {
                index: index as u64,
                offset: TPXE_HEADER_LEN + index * TPXE_RECORD_LEN,
                x,
                y,
                n_x,
                n_y,
            });
        }
        events.push(PixelEvent {
            x,
            y,
            tot: u16_at(rec, 4),
            toa: u64_at(rec, 8),
        });
    }
    Ok(EventStream { n_x, n_y, events })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<PixelEvent> {
        (0..5u16)
            .map(|i| PixelEvent {
                x: i,
                y: 4 - i,
                tot: 100 + i,
                toa: u64::from(i) << 40,
            })
            .collect()
    }

    fn encode(events: &[PixelEvent]) -> Vec<u8> {
        let mut buf = Vec::new();
        write_events(&mut buf, 5, 5, events).unwrap();
        buf
    }

    #[test]
    fn layout_is_fixed() {
        let bytes = encode(&sample());
        assert_eq!(bytes.len(), 24 + 5 * 16);
        assert_eq!(&bytes[0..4], b"TPXE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[16..24], &5u64.to_le_bytes());
        // Second record: x=1, y=3, tot=101, reserved 0, toa = 1 << 40.
        assert_eq!(
            &bytes[40..56],
            &[1, 0, 3, 0, 101, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0]
        );
    }

    #[test]
    fn round_trip() {
        let events = sample();
        let parsed = parse_events(&encode(&events)).unwrap();
        assert_eq!(parsed, EventStream::new(5, 5, events));
    }

    #[test]
    fn empty_body() {
        let parsed = parse_events(&encode(&[])).unwrap();
        assert!(parsed.events.is_empty());
        assert_eq!((parsed.n_x, parsed.n_y), (5, 5));
    }

    #[test]
    fn truncated_mid_record() {
        let bytes = encode(&sample());
        let cut = &bytes[..24 + 2 * 16 + 7];
        match parse_events(cut) {
            Err(e @ EventFormatError::Truncated { .. }) => {
                assert_eq!(e.offset(), Some(56));
                assert!(e.to_string().contains("56"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_events(&bytes[..10]),
            Err(EventFormatError::Truncated { offset: 10, .. })
        ));
    }

    #[test]
    fn header_errors() {
        let mut bytes = encode(&sample());
        bytes[0] = b'X';
        assert!(matches!(
            parse_events(&bytes),
            Err(EventFormatError::BadMagic { .. })
        ));

        let mut bytes = encode(&sample());
        bytes[4] = 2;
        assert!(matches!(
            parse_events(&bytes),
            Err(EventFormatError::VersionMismatch { found: 2 })
        ));

        let mut bytes = encode(&sample());
        bytes.push(0);
        assert!(matches!(
            parse_events(&bytes),
            Err(EventFormatError::TrailingBytes {
                offset: 104,
                extra: 1
            })
        ));
    }

    #[test]
    fn out_of_range_pixel() {
        let mut events = sample();
        events[3].x = 5;
        let err = parse_events(&encode(&events)).unwrap_err();
        assert!(matches!(
            err,
            EventFormatError::PixelOutOfRange {
                index: 3,
                offset: 72,
                x: 5,
                ..
            }
        ));
    }
}
