//! Core array types for dynamic emission reconstruction and the two data
//! fidelity functionals (Gaussian least squares and Poisson KL).
//!
//! The dynamic image is a dense `M x T` matrix: one column per time frame,
//! `M = width * height` pixels per frame. Projection data is kept per frame
//! together with the view angles that produced it.

use ndarray::{Array2, ArrayView1, ArrayViewMut1};

use crate::error::{ensure, Result};

/// Entries of a projected image below this floor are clamped before taking
/// logarithms in the KL fidelity and in EM-style ratio updates.
pub const KL_LOG_FLOOR: f64 = 1e-12;

/// Nonnegative activity over `M = width * height` pixels and `T` frames,
/// stored as an `M x T` matrix (one column per frame).
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicImage {
    pub data: Array2<f64>,
    pub width: usize,
    pub height: usize,
}

impl DynamicImage {
    pub fn new(data: Array2<f64>, width: usize, height: usize) -> Result<Self> {
        ensure!(
            data.nrows() == width * height,
            Dim,
            "image matrix has {} rows, expected width*height = {}",
            data.nrows(),
            width * height
        );
        ensure!(data.ncols() >= 1, Dim, "image needs at least one frame");
        Ok(Self { data, width, height })
    }

    pub fn zeros(width: usize, height: usize, frames: usize) -> Self {
        Self { data: Array2::zeros((width * height, frames)), width, height }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn frame(&self, t: usize) -> ArrayView1<'_, f64> {
        self.data.column(t)
    }

    pub fn frame_mut(&mut self, t: usize) -> ArrayViewMut1<'_, f64> {
        self.data.column_mut(t)
    }

    /// Clamp all entries to be nonnegative in place.
    pub fn clamp_nonneg(&mut self) {
        self.data.mapv_inplace(|v| v.max(0.0));
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Projection data for one frame: `angles_deg.len()` views of `bins` detector
/// bins each, concatenated view-major in `counts`.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramFrame {
    pub angles_deg: Vec<f64>,
    pub counts: Vec<f64>,
    pub bins: usize,
}

impl SinogramFrame {
    pub fn new(angles_deg: Vec<f64>, counts: Vec<f64>, bins: usize) -> Result<Self> {
        ensure!(
            counts.len() == angles_deg.len() * bins,
            Dim,
            "frame has {} counts, expected views*bins = {}",
            counts.len(),
            angles_deg.len() * bins
        );
        Ok(Self { angles_deg, counts, bins })
    }

    pub fn views(&self) -> usize {
        self.angles_deg.len()
    }

    /// Detector-bin values of one view.
    pub fn view(&self, v: usize) -> &[f64] {
        &self.counts[v * self.bins..(v + 1) * self.bins]
    }
}

/// A full acquisition: one `SinogramFrame` per time frame, all sharing the
/// same detector bin count.
#[derive(Debug, Clone, PartialEq)]
pub struct SinogramSet {
    pub frames: Vec<SinogramFrame>,
}

impl SinogramSet {
    pub fn new(frames: Vec<SinogramFrame>) -> Result<Self> {
        ensure!(!frames.is_empty(), Dim, "sinogram set needs at least one frame");
        let bins = frames[0].bins;
        ensure!(
            frames.iter().all(|f| f.bins == bins),
            Dim,
            "all frames must share the same bin count"
        );
        Ok(Self { frames })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn bins(&self) -> usize {
        self.frames[0].bins
    }

    pub fn total_counts(&self) -> f64 {
        self.frames.iter().map(|f| f.counts.iter().sum::<f64>()).sum()
    }

    pub fn max_count(&self) -> f64 {
        self.frames
            .iter()
            .flat_map(|f| f.counts.iter().copied())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.frames.iter().all(|f| f.counts.iter().all(|v| v.is_finite()))
    }

    /// Zero-valued sinogram with the same shape and angles as `self`.
    pub fn zeros_like(&self) -> Self {
        Self {
            frames: self
                .frames
                .iter()
                .map(|f| SinogramFrame {
                    angles_deg: f.angles_deg.clone(),
                    counts: vec![0.0; f.counts.len()],
                    bins: f.bins,
                })
                .collect(),
        }
    }

    fn check_same_shape(&self, other: &SinogramSet) -> Result<()> {
        ensure!(
            self.num_frames() == other.num_frames(),
            Dim,
            "frame count mismatch: {} vs {}",
            self.num_frames(),
            other.num_frames()
        );
        for (t, (a, b)) in self.frames.iter().zip(&other.frames).enumerate() {
            ensure!(
                a.counts.len() == b.counts.len() && a.bins == b.bins,
                Dim,
                "frame {t}: shape mismatch ({} vs {} counts)",
                a.counts.len(),
                b.counts.len()
            );
        }
        Ok(())
    }
}

/// Mixing coefficients: `M x K`, one column per temporal basis element.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    pub data: Array2<f64>,
}

impl CoefficientMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        ensure!(data.ncols() >= 1, Dim, "coefficient matrix needs K >= 1");
        Ok(Self { data })
    }

    pub fn num_basis(&self) -> usize {
        self.data.ncols()
    }
}

/// Temporal basis (time activity curves): `T x K`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub data: Array2<f64>,
}

impl BasisMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        ensure!(data.ncols() >= 1, Dim, "basis matrix needs K >= 1");
        Ok(Self { data })
    }

    pub fn num_basis(&self) -> usize {
        self.data.ncols()
    }
}

/// Noise regime of an acquisition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    /// Additive white Gaussian noise; `level` is the std as a fraction of the
    /// sinogram RMS, in (0, 1].
    Gaussian { level: f64 },
    /// Poisson counts after rescaling the sinogram so its maximum is `scale`.
    Poisson { scale: f64 },
    /// Event-level acquisition; events per frame scale with `events_factor`.
    MonteCarlo { events_factor: f64 },
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseModel::Gaussian { level } => {
                ensure!(
                    level > 0.0 && level <= 1.0,
                    Config,
                    "gaussian noise level must be in (0, 1], got {level}"
                );
            }
            NoiseModel::Poisson { scale } => {
                ensure!(scale > 0.0, Config, "poisson scale must be positive, got {scale}");
            }
            NoiseModel::MonteCarlo { events_factor } => {
                ensure!(
                    events_factor > 0.0,
                    Config,
                    "events factor must be positive, got {events_factor}"
                );
            }
        }
        Ok(())
    }

    /// True for models whose data are counts (KL fidelity applies).
    pub fn is_poisson_like(&self) -> bool {
        matches!(self, NoiseModel::Poisson { .. } | NoiseModel::MonteCarlo { .. })
    }
}

/// Gaussian data fidelity of one frame: `1/2 * sum((proj - sino)^2)`.
pub fn gaussian_fidelity_frame(sino: &SinogramFrame, proj: &SinogramFrame) -> f64 {
    0.5 * sino
        .counts
        .iter()
        .zip(&proj.counts)
        .map(|(s, p)| (p - s) * (p - s))
        .sum::<f64>()
}

/// Gaussian data fidelity `1/2 * ||proj - sino||_F^2`, summed frame by frame.
pub fn gaussian_fidelity(sino: &SinogramSet, proj: &SinogramSet) -> Result<f64> {
    sino.check_same_shape(proj)?;
    Ok(sino
        .frames
        .iter()
        .zip(&proj.frames)
        .map(|(s, p)| gaussian_fidelity_frame(s, p))
        .sum())
}

/// KL data fidelity of one frame: `sum(proj - sino * log(proj))` with the
/// projection clamped at [`KL_LOG_FLOOR`] inside the logarithm.
pub fn kl_fidelity_frame(sino: &SinogramFrame, proj: &SinogramFrame) -> f64 {
    sino.counts
        .iter()
        .zip(&proj.counts)
        .map(|(s, p)| p - s * p.max(KL_LOG_FLOOR).ln())
        .sum::<f64>()
}

/// KL data fidelity `<proj, 1> - <sino, log(proj)>`, summed frame by frame.
///
/// Projection entries below [`KL_LOG_FLOOR`] are clamped before the log, so
/// the value is finite for any finite nonnegative data.
pub fn kl_fidelity(sino: &SinogramSet, proj: &SinogramSet) -> Result<f64> {
    sino.check_same_shape(proj)?;
    ensure!(
        sino.frames.iter().all(|f| f.counts.iter().all(|&v| v >= 0.0)),
        Data,
        "KL fidelity requires nonnegative measured counts"
    );
    Ok(sino
        .frames
        .iter()
        .zip(&proj.frames)
        .map(|(s, p)| kl_fidelity_frame(s, p))
        .sum())
}
