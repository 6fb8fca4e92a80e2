use super::EventStream;
use crate::numerics::Tensor;

pub const DEFAULT_TIME_BINS: usize = 5;

/// Dense `h × w × bins` temporal histogram of an event window.
#[derive(Clone, Debug, PartialEq)]
pub struct VoxelGrid {
    height: usize,
    width: usize,
    bins: usize,
    data: Vec<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum VoxelNormalization {
    /// Raw signed polarity mass.
    #[default]
    None,
    /// Divide by the largest absolute entry (no-op on an all-zero grid).
    MaxAbs,
}

impl VoxelNormalization {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Self::None),
            "maxabs" => Some(Self::MaxAbs),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::None => "none",
            Self::MaxAbs => "maxabs",
        }
    }
}

impl VoxelGrid {
    pub fn zeros(height: usize, width: usize, bins: usize) -> Self {
        VoxelGrid {
            height,
            width,
            bins,
            data: vec![0.0; height * width * bins],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, y: usize, x: usize, b: usize) -> f64 {
        self.data[(y * self.width + x) * self.bins + b]
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn normalized(mut self, norm: VoxelNormalization) -> Self {
        if norm == VoxelNormalization::MaxAbs {
            let m = self.data.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            if m > 0.0 {
                self.data.iter_mut().for_each(|v| *v /= m);
            }
        }
        self
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(&[self.height, self.width, self.bins], self.data.clone()).expect("voxel shape")
    }

    /// Elementwise sum of two grids of equal shape.
    pub fn added(&self, other: &VoxelGrid) -> Option<VoxelGrid> {
        if (self.height, self.width, self.bins) != (other.height, other.width, other.bins) {
            return None;
        }
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Some(VoxelGrid { data, ..*self })
    }
}

/// Accumulates `window` into `bins` temporal bins spanning `[t_start, t_end]`.
///
/// Each event's polarity is split linearly between the two bins whose centres
/// bracket its normalized time `(t - t_start) / (t_end - t_start) · (bins - 1)`.
/// A zero-length span puts everything in bin 0.
pub fn to_voxel_grid(window: &EventStream, t_start: u64, t_end: u64, bins: usize) -> VoxelGrid {
    assert!(bins >= 1, "need at least one temporal bin");
    let (h, w) = (window.height() as usize, window.width() as usize);
    let mut grid = VoxelGrid::zeros(h, w, bins);
    let span = t_end.saturating_sub(t_start) as f64;
    let last = (bins - 1) as f64;
    for e in window.events() {
        let tn = if span > 0.0 && bins > 1 {
            ((e.t as f64 - t_start as f64) / span * last).clamp(0.0, last)
        } else {
            0.0
        };
        let lo = tn.floor();
        let frac = tn - lo;
        let lo = lo as usize;
        let base = (e.y as usize * w + e.x as usize) * bins;
        let s = e.p.sign();
        grid.data[base + lo] += s * (1.0 - frac);
        if frac > 0.0 {
            grid.data[base + lo + 1] += s * frac;
        }
    }
    grid
}
