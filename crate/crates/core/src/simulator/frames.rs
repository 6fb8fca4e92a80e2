use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::Image;

/// Gray intensity frames in `[0, 1]` with strictly increasing µs timestamps.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Image>,
    timestamps: Vec<u64>,
}

impl FrameSequence {
    /// Color frames are luma-converted.
    pub fn new(frames: Vec<Image>, timestamps: Vec<u64>) -> Result<Self> {
        if frames.len() < 2 || frames.len() != timestamps.len() {
            return Err(Error::invalid(format!(
                "need >= 2 frames with one timestamp each (got {} frames, {} timestamps)",
                frames.len(),
                timestamps.len()
            )));
        }
        if timestamps.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::invalid("frame timestamps must be strictly increasing"));
        }
        let frames: Vec<Image> = frames.into_iter().map(|f| f.to_gray()).collect();
        let (h, w) = (frames[0].height(), frames[0].width());
        if let Some(i) = frames.iter().position(|f| f.height() != h || f.width() != w) {
            return Err(Error::Shape {
                op: "frame sequence",
                lhs: vec![h, w],
                rhs: vec![frames[i].height(), frames[i].width()],
            });
        }
        Ok(FrameSequence { frames, timestamps })
    }

    pub fn frames(&self) -> &[Image] {
        &self.frames
    }

    pub fn timestamps(&self) -> &[u64] {
        &self.timestamps
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }
}

/// Parses `timestamp_us path` lines; relative paths resolve against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<FrameSequence> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut frames = Vec::new();
    let mut ts = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let at = format!("{}:{}", path.display(), i + 1);
        let (t, p) = line
            .split_once(char::is_whitespace)
            .ok_or_else(|| Error::parse(&at, "expected `timestamp_us path`"))?;
        let t: u64 = t
            .parse()
            .map_err(|_| Error::parse(&at, format!("bad timestamp {t:?}")))?;
        let p = PathBuf::from(p.trim());
        let p = if p.is_absolute() { p } else { base.join(p) };
        frames.push(Image::read_pnm(&p)?);
        ts.push(t);
    }
    FrameSequence::new(frames, ts)
}

/// Writes frames as `frame_NNNNN.pgm` next to a `manifest.txt`; returns the manifest path.
pub fn write_manifest(seq: &FrameSequence, dir: impl AsRef<Path>) -> Result<PathBuf> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut text = String::new();
    for (i, (f, t)) in seq.frames().iter().zip(seq.timestamps()).enumerate() {
        let name = format!("frame_{i:05}.pgm");
        f.write_pnm(dir.join(&name))?;
        text.push_str(&format!("{t} {name}\n"));
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}
