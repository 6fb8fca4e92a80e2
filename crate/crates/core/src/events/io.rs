//! `EVS1` binary and `t,x,y,p` CSV event stream formats.
//!
//! Binary layout, little-endian: magic `EVS1`, `u16` width, `u16` height,
//! `u64` count, then `count` records of `u16 x, u16 y, u64 t, i8 p`.
//!
//! CSV needs the sensor size out of band, since the `t,x,y,p` header carries none.

use std::path::Path;

use super::{Event, EventStream, Polarity};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"EVS1";
pub const CSV_HEADER: &str = "t,x,y,p";
const HEADER_LEN: usize = 16;
const RECORD_LEN: usize = 13;

/// Parses either format. Binary is detected by its magic; anything else is
/// treated as CSV and requires `csv_size = Some((width, height))`.
pub fn parse_stream(bytes: &[u8], csv_size: Option<(u16, u16)>) -> Result<EventStream> {
    if bytes.starts_with(BINARY_MAGIC) {
        return parse_binary(bytes);
    }
    let (w, h) = csv_size.ok_or_else(|| Error::invalid("CSV event input needs the sensor width and height"))?;
    let text = std::str::from_utf8(bytes).map_err(|e| Error::parse(format!("byte {}", e.valid_up_to()), "not UTF-8"))?;
    parse_csv(text, w, h)
}

fn parse_binary(bytes: &[u8]) -> Result<EventStream> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::parse(format!("byte {}", bytes.len()), "truncated header"));
    }
    let width = u16::from_le_bytes([bytes[4], bytes[5]]);
    let height = u16::from_le_bytes([bytes[6], bytes[7]]);
    let count = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let mut events = Vec::with_capacity(count.min(1 << 24) as usize);
    for i in 0..count as usize {
        let off = HEADER_LEN + i * RECORD_LEN;
        let Some(r) = bytes.get(off..off + RECORD_LEN) else {
            return Err(Error::parse(
                format!("byte {off}"),
                format!("truncated record {i} of {count}"),
            ));
        };
        let x = u16::from_le_bytes([r[0], r[1]]);
        let y = u16::from_le_bytes([r[2], r[3]]);
        let t = u64::from_le_bytes(r[4..12].try_into().unwrap());
        let p = Polarity::from_i8(r[12] as i8)
            .ok_or_else(|| Error::parse(format!("byte {}", off + 12), format!("bad polarity {}", r[12] as i8)))?;
        if x >= width || y >= height {
            return Err(Error::parse(
                format!("byte {off}"),
                format!("coordinate ({x}, {y}) outside {width}x{height}"),
            ));
        }
        events.push(Event { x, y, t, p });
    }
    let end = HEADER_LEN + count as usize * RECORD_LEN;
    if bytes.len() != end {
        return Err(Error::parse(format!("byte {end}"), "trailing bytes after last record"));
    }
    EventStream::new(width, height, events)
}

fn parse_csv(text: &str, width: u16, height: u16) -> Result<EventStream> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || (i == 0 && line.replace(' ', "") == CSV_HEADER) {
            continue;
        }
        let at = || format!("line {}", i + 1);
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 4 {
            return Err(Error::parse(at(), format!("expected 4 fields, got {}", fields.len())));
        }
        let num = |s: &str, what: &str| -> Result<i64> {
            s.parse::<i64>().map_err(|_| Error::parse(at(), format!("bad {what} {s:?}")))
        };
        let t = num(fields[0], "timestamp")?;
        let x = num(fields[1], "x")?;
        let y = num(fields[2], "y")?;
        let p = num(fields[3], "polarity")?;
        if t < 0 {
            return Err(Error::parse(at(), "negative timestamp"));
        }
        if x < 0 || y < 0 || x >= width as i64 || y >= height as i64 {
            return Err(Error::parse(at(), format!("coordinate ({x}, {y}) outside {width}x{height}")));
        }
        let p = match p {
            1 => Polarity::Positive,
            -1 | 0 => Polarity::Negative,
            _ => return Err(Error::parse(at(), format!("bad polarity {p}"))),
        };
        events.push(Event::new(x as u16, y as u16, t as u64, p));
    }
    EventStream::new(width, height, events)
}

pub fn stream_to_evs1(stream: &EventStream) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + stream.len() * RECORD_LEN);
    out.extend_from_slice(BINARY_MAGIC);
    out.extend_from_slice(&stream.width().to_le_bytes());
    out.extend_from_slice(&stream.height().to_le_bytes());
    out.extend_from_slice(&(stream.len() as u64).to_le_bytes());
    for e in stream.events() {
        out.extend_from_slice(&e.x.to_le_bytes());
        out.extend_from_slice(&e.y.to_le_bytes());
        out.extend_from_slice(&e.t.to_le_bytes());
        out.push(e.p.as_i8() as u8);
    }
    out
}

pub fn stream_to_csv(stream: &EventStream) -> String {
    let mut out = String::with_capacity(16 * (stream.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in stream.events() {
        out.push_str(&format!("{},{},{},{}\n", e.t, e.x, e.y, e.p.as_i8()));
    }
    out
}

/// Reads a stream file; `.csv` files need `csv_size`.
pub fn read_stream(path: impl AsRef<Path>, csv_size: Option<(u16, u16)>) -> Result<EventStream> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_stream(&bytes, csv_size)
}

/// Writes CSV when the extension is `.csv`, `EVS1` otherwise.
pub fn write_stream(stream: &EventStream, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        stream_to_csv(stream).into_bytes()
    } else {
        stream_to_evs1(stream)
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
