//! Paired low/high-quality corpora built with the degradation model.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::degrade::{apply_recipe, BlotchParams, DegradationRecipe, Factor};
use crate::error::{Error, Result};
use crate::image::{resize_area, resize_bilinear, Image};

/// Inclusive sampling ranges for per-image recipes.
#[derive(Clone, Debug, PartialEq)]
pub struct RecipeRanges {
    pub noise_sigma: (f64, f64),
    pub motion_length: (usize, usize),
    pub resize_scale: (f64, f64),
    pub edge_blur_sigma: (f64, f64),
    pub edge_break_prob: (f64, f64),
    pub blotch_count: (usize, usize),
    pub shuffle_order: bool,
}

impl Default for RecipeRanges {
    fn default() -> Self {
        RecipeRanges {
            noise_sigma: (0.0, 0.05),
            motion_length: (1, 5),
            resize_scale: (0.4, 1.0),
            edge_blur_sigma: (0.3, 1.5),
            edge_break_prob: (0.0, 0.5),
            blotch_count: (0, 4),
            shuffle_order: true,
        }
    }
}

fn pair_of<T: std::str::FromStr>(kv: &KeyValues, key: &str, default: (T, T)) -> Result<(T, T)> {
    let Some(raw) = kv.raw(key) else {
        return Ok(default);
    };
    let (a, b) = raw
        .split_once(',')
        .ok_or_else(|| Error::invalid(format!("{key}: expected `lo,hi`, got {raw:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<T>()
            .map_err(|_| Error::invalid(format!("{key}: bad bound {s:?}")))
    };
    Ok((parse(a)?, parse(b)?))
}

impl RecipeRanges {
    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        let pair = |a: &dyn std::fmt::Display, b: &dyn std::fmt::Display| format!("{a},{b}");
        kv.set("noise_sigma", pair(&self.noise_sigma.0, &self.noise_sigma.1));
        kv.set("motion_length", pair(&self.motion_length.0, &self.motion_length.1));
        kv.set("resize_scale", pair(&self.resize_scale.0, &self.resize_scale.1));
        kv.set("edge_blur_sigma", pair(&self.edge_blur_sigma.0, &self.edge_blur_sigma.1));
        kv.set("edge_break_prob", pair(&self.edge_break_prob.0, &self.edge_break_prob.1));
        kv.set("blotch_count", pair(&self.blotch_count.0, &self.blotch_count.1));
        kv.set("shuffle_order", self.shuffle_order);
        kv
    }

    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let d = RecipeRanges::default();
        let r = RecipeRanges {
            noise_sigma: pair_of(kv, "noise_sigma", d.noise_sigma)?,
            motion_length: pair_of(kv, "motion_length", d.motion_length)?,
            resize_scale: pair_of(kv, "resize_scale", d.resize_scale)?,
            edge_blur_sigma: pair_of(kv, "edge_blur_sigma", d.edge_blur_sigma)?,
            edge_break_prob: pair_of(kv, "edge_break_prob", d.edge_break_prob)?,
            blotch_count: pair_of(kv, "blotch_count", d.blotch_count)?,
            shuffle_order: kv.get_or("shuffle_order", d.shuffle_order)?,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        let ordered = [
            self.noise_sigma,
            self.resize_scale,
            self.edge_blur_sigma,
            self.edge_break_prob,
        ]
        .iter()
        .all(|(a, b)| a <= b && *a >= 0.0)
            && self.motion_length.0 <= self.motion_length.1
            && self.blotch_count.0 <= self.blotch_count.1;
        if !ordered || self.motion_length.0 == 0 {
            return Err(Error::invalid("recipe ranges must be ordered, non-negative, motion length >= 1"));
        }
        if self.resize_scale.0 <= 0.0 || self.resize_scale.1 > 1.0 || self.edge_break_prob.1 > 1.0 {
            return Err(Error::invalid("resize_scale must lie in (0, 1] and edge_break_prob in [0, 1]"));
        }
        Ok(())
    }

    /// The recipe for item `index`; a pure function of `(self, seed, index)`.
    pub fn sample(&self, seed: u64, index: u64) -> DegradationRecipe {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index);
        let mut u = |(a, b): (f64, f64)| if a == b { a } else { rng.random_range(a..=b) };
        let noise_sigma = u(self.noise_sigma);
        let resize_scale = u(self.resize_scale);
        let edge_blur_sigma = u(self.edge_blur_sigma);
        let edge_break_prob = u(self.edge_break_prob);
        let motion_angle = u((0.0, 180.0));
        let motion_length = rng.random_range(self.motion_length.0..=self.motion_length.1);
        let count = rng.random_range(self.blotch_count.0..=self.blotch_count.1);
        let mut order = Factor::ALL;
        if self.shuffle_order {
            order.shuffle(&mut rng);
        }
        DegradationRecipe {
            seed: rng.random(),
            order,
            blotch: BlotchParams {
                count_min: count,
                count_max: count,
                ..BlotchParams::default()
            },
            edge_blur_sigma,
            edge_break_prob,
            noise_sigma,
            motion_length,
            motion_angle,
            resize_scale,
            ..DegradationRecipe::default()
        }
    }
}

/// Centre crop to a square, then resample to `size×size`.
pub fn square_resize(img: &Image, size: usize) -> Image {
    let s = img.height().min(img.width());
    let sq = img.crop((img.height() - s) / 2, (img.width() - s) / 2, s, s);
    if s == size {
        sq
    } else if s > size {
        resize_area(&sq, size, size)
    } else {
        resize_bilinear(&sq, size, size)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusEntry {
    pub lq: PathBuf,
    pub hq: PathBuf,
    pub seed: u64,
}

#[derive(Clone, Debug, Default)]
pub struct CorpusReport {
    pub manifest: PathBuf,
    pub entries: Vec<CorpusEntry>,
    pub skipped: Vec<(PathBuf, String)>,
    /// Pairs already on disk with identical content, left untouched.
    pub unchanged: usize,
}

pub const MANIFEST_NAME: &str = "manifest.txt";

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<bool> {
    if std::fs::read(path).map(|old| old == bytes).unwrap_or(false) {
        return Ok(false);
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(true)
}

/// Degrades every image in `hq_dir` (sorted by file name) with the recipe of
/// its index and writes `hq/NNNNN.ppm`, `lq/NNNNN.pgm` and a manifest of
/// `lq_path hq_path seed` lines. Unreadable files are skipped and listed as
/// `# skipped` comments. Files whose content would not change are not rewritten.
pub fn build_surrogate_corpus(
    hq_dir: impl AsRef<Path>,
    ranges: &RecipeRanges,
    seed: u64,
    out_dir: impl AsRef<Path>,
    size: usize,
) -> Result<CorpusReport> {
    let (hq_dir, out_dir) = (hq_dir.as_ref(), out_dir.as_ref());
    ranges.validate()?;
    if size < 4 {
        return Err(Error::invalid("corpus image size must be at least 4"));
    }
    let mut inputs: Vec<PathBuf> = std::fs::read_dir(hq_dir)
        .map_err(|e| Error::io(hq_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::invalid(format!("no input images in {}", hq_dir.display())));
    }
    for sub in ["hq", "lq"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let mut report = CorpusReport::default();
    for (i, path) in inputs.iter().enumerate() {
        let img = match Image::read_pnm(path) {
            Ok(img) if img.height() > 0 && img.width() > 0 => img,
            Ok(_) => {
                log::warn!("skipping empty image {}", path.display());
                report.skipped.push((path.clone(), "empty image".into()));
                continue;
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                report.skipped.push((path.clone(), e.to_string()));
                continue;
            }
        };
        let hq = square_resize(&img, size).clamp01();
        let recipe = ranges.sample(seed, i as u64);
        let lq = apply_recipe(&hq, &recipe)?;
        let entry = CorpusEntry {
            lq: PathBuf::from(format!("lq/{i:05}.pgm")),
            hq: PathBuf::from(format!("hq/{i:05}.{}", if hq.channels() == 1 { "pgm" } else { "ppm" })),
            seed: recipe.seed,
        };
        let a = write_if_changed(&out_dir.join(&entry.hq), &hq.to_pnm_bytes()?)?;
        let b = write_if_changed(&out_dir.join(&entry.lq), &lq.to_pnm_bytes()?)?;
        if !a && !b {
            report.unchanged += 1;
        }
        report.entries.push(entry);
    }
    let mut text = String::new();
    for e in &report.entries {
        text.push_str(&format!("{} {} {}\n", e.lq.display(), e.hq.display(), e.seed));
    }
    for (p, why) in &report.skipped {
        text.push_str(&format!("# skipped {}: {}\n", p.display(), why.replace('\n', " ")));
    }
    report.manifest = out_dir.join(MANIFEST_NAME);
    write_if_changed(&report.manifest, text.as_bytes())?;
    Ok(report)
}

/// Reads `(lq, hq)` pairs listed in a corpus manifest; paths are relative to its directory.
pub fn read_corpus(manifest: impl AsRef<Path>) -> Result<Vec<(Image, Image)>> {
    let manifest = manifest.as_ref();
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 || parts[2].parse::<u64>().is_err() {
            return Err(Error::parse(
                format!("{}:{}", manifest.display(), i + 1),
                "expected `lq_path hq_path seed`",
            ));
        }
        out.push((Image::read_pnm(base.join(parts[0]))?, Image::read_pnm(base.join(parts[1]))?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::toy::toy_image;

    #[test]
    fn ranges_round_trip_and_sample_replay() {
        let r = RecipeRanges::default();
        let back = RecipeRanges::from_key_values(&KeyValues::parse(&r.to_key_values().render()).unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(r.sample(5, 3), r.sample(5, 3));
        assert_ne!(r.sample(5, 3), r.sample(5, 4));
        r.sample(1, 0).validate().unwrap();
        let mut kv = KeyValues::new();
        kv.set("resize_scale", "0.9,0.2");
        assert!(RecipeRanges::from_key_values(&kv).is_err());
    }

    #[test]
    fn square_resize_shapes() {
        let img = Image::filled(30, 50, 3, 0.4);
        assert_eq!(square_resize(&img, 16).shape(), [16, 16, 3]);
        assert_eq!(square_resize(&img, 40).shape(), [40, 40, 3]);
    }

    #[test]
    fn corpus_cardinality_skip_and_replay() {
        let src = tempfile::tempdir().unwrap();
        for i in 0..4 {
            toy_image(0, i, 40).write_pnm(src.path().join(format!("img{i}.ppm"))).unwrap();
        }
        std::fs::write(src.path().join("broken.ppm"), b"P6\n4 4\n255\nxx").unwrap();
        let a = tempfile::tempdir().unwrap();
        let r = build_surrogate_corpus(src.path(), &RecipeRanges::default(), 7, a.path(), 16).unwrap();
        assert_eq!(r.entries.len(), 4);
        assert_eq!(r.skipped.len(), 1);
        let text = std::fs::read_to_string(&r.manifest).unwrap();
        assert!(text.contains("# skipped"));
        let pairs = read_corpus(&r.manifest).unwrap();
        assert_eq!(pairs.len(), 4);
        assert!(pairs.iter().all(|(l, h)| l.shape() == [16, 16, 1] && h.shape() == [16, 16, 3]));

        let b = tempfile::tempdir().unwrap();
        build_surrogate_corpus(src.path(), &RecipeRanges::default(), 7, b.path(), 16).unwrap();
        for e in &r.entries {
            assert_eq!(std::fs::read(a.path().join(&e.lq)).unwrap(), std::fs::read(b.path().join(&e.lq)).unwrap());
        }
        let again = build_surrogate_corpus(src.path(), &RecipeRanges::default(), 7, a.path(), 16).unwrap();
        assert_eq!(again.unchanged, 4);
        assert!(build_surrogate_corpus(tempfile::tempdir().unwrap().path(), &RecipeRanges::default(), 7, b.path(), 16).is_err());
    }
}
