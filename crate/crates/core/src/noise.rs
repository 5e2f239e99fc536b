//! Projection-domain noise: additive Gaussian, rescaled Poisson counts, and
//! event-level Monte Carlo acquisition with a rotating multi-head camera.
//!
//! Every frame draws from its own RNG stream derived from `(seed, frame)`,
//! so parallel and serial execution produce bitwise identical data.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;

use crate::error::{ensure, Result};
use crate::model::{DynamicImage, SinogramFrame, SinogramSet};
use crate::projector::{AngleSchedule, ProjectorGeometry};

fn frame_rng(seed: u64, frame: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(frame as u64 + 1);
    rng
}

/// Add white Gaussian noise with standard deviation `level * RMS(sino)`.
pub fn add_gaussian_noise(sino: &SinogramSet, level: f64, seed: u64) -> Result<SinogramSet> {
    ensure!(level > 0.0, Config, "noise level must be positive, got {level}");
    let n: usize = sino.frames.iter().map(|f| f.counts.len()).sum();
    let rms = (sino
        .frames
        .iter()
        .flat_map(|f| f.counts.iter())
        .map(|v| v * v)
        .sum::<f64>()
        / n as f64)
        .sqrt();
    let sigma = level * rms;
    let frames: Vec<SinogramFrame> = sino
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let mut rng = frame_rng(seed, t);
            let counts = f
                .counts
                .iter()
                .map(|&v| v + sigma * rng.sample::<f64, _>(StandardNormal))
                .collect();
            SinogramFrame { angles_deg: f.angles_deg.clone(), counts, bins: f.bins }
        })
        .collect();
    Ok(SinogramSet { frames })
}

/// Rescale the sinogram so its maximum is `scale`, draw Poisson counts, and
/// rescale back. Zero bins stay exactly zero.
pub fn add_poisson_noise(sino: &SinogramSet, scale: f64, seed: u64) -> Result<SinogramSet> {
    ensure!(scale > 0.0, Config, "poisson scale must be positive, got {scale}");
    ensure!(
        sino.frames.iter().all(|f| f.counts.iter().all(|&v| v >= 0.0)),
        Data,
        "poisson noise requires nonnegative projections"
    );
    let max = sino.max_count();
    if max <= 0.0 {
        return Ok(sino.clone());
    }
    let frames: Vec<SinogramFrame> = sino
        .frames
        .par_iter()
        .enumerate()
        .map(|(t, f)| {
            let mut rng = frame_rng(seed, t);
            let counts = f
                .counts
                .iter()
                .map(|&v| {
                    let lambda = scale * v / max;
                    if lambda <= 0.0 {
                        0.0
                    } else {
                        let k: f64 = Poisson::new(lambda).expect("positive rate").sample(&mut rng);
                        k * max / scale
                    }
                })
                .collect();
            SinogramFrame { angles_deg: f.angles_deg.clone(), counts, bins: f.bins }
        })
        .collect();
    Ok(SinogramSet { frames })
}

/// One detected decay event.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventRecord {
    pub frame: usize,
    pub bin: usize,
    pub head: usize,
}

/// Cumulative mass over the pixels of one frame, for categorical sampling.
pub struct PixelSampler {
    cumulative: Vec<f64>,
    total: f64,
}

impl PixelSampler {
    pub fn new(frame: &[f64]) -> Self {
        let mut cumulative = Vec::with_capacity(frame.len());
        let mut acc = 0.0;
        for &v in frame {
            acc += v.max(0.0);
            cumulative.push(acc);
        }
        Self { cumulative, total: acc }
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    /// Draw one pixel index with probability proportional to its activity.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let r = rng.gen_range(0.0..self.total);
        self.cumulative.partition_point(|&c| c <= r).min(self.cumulative.len() - 1)
    }
}

/// Events per frame: `events_factor` times the mean activity over the
/// frame's active (positive) pixels, rounded.
pub fn events_for_frame(frame: &[f64], events_factor: f64) -> usize {
    let (sum, active) = frame
        .iter()
        .filter(|&&v| v > 0.0)
        .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
    if active == 0 {
        return 0;
    }
    (events_factor * sum / active as f64).round() as usize
}

/// Nearest detector bin for a pixel center seen at `angle_deg`.
fn nearest_bin(pixel: usize, angle_deg: f64, geom: &ProjectorGeometry) -> usize {
    let n = geom.image_size;
    let half = (n as f64 - 1.0) / 2.0;
    let (x, y) = ((pixel % n) as f64 - half, (pixel / n) as f64 - half);
    let (sin_t, cos_t) = angle_deg.to_radians().sin_cos();
    let s = x * cos_t + y * sin_t;
    let c = s / geom.bin_spacing + (geom.bins as f64 - 1.0) / 2.0;
    (c.round().max(0.0) as usize).min(geom.bins - 1)
}

/// Event-level acquisition: per frame, draw the event count, sample each
/// event's source pixel from the activity distribution, assign it to a
/// uniformly chosen head, and count it at the nearest detector bin.
pub fn monte_carlo_acquire(
    u: &DynamicImage,
    sched: &AngleSchedule,
    geom: &ProjectorGeometry,
    events_factor: f64,
    seed: u64,
) -> Result<SinogramSet> {
    ensure!(events_factor > 0.0, Config, "events factor must be positive");
    ensure!(
        u.data.iter().all(|&v| v >= 0.0),
        Data,
        "monte carlo acquisition requires nonnegative activity"
    );
    ensure!(u.frames() == sched.frames, Dim, "schedule frame count must match image");
    let frames: Vec<SinogramFrame> = (0..u.frames())
        .into_par_iter()
        .map(|t| {
            let angles = sched.angles_for_frame(t).expect("frame in range");
            let image: Vec<f64> = u.frame(t).to_vec();
            let mut counts = vec![0.0; angles.len() * geom.bins];
            let n_events = events_for_frame(&image, events_factor);
            if n_events > 0 {
                let sampler = PixelSampler::new(&image);
                let mut rng = frame_rng(seed, t);
                for _ in 0..n_events {
                    let pixel = sampler.sample(&mut rng);
                    let head = rng.gen_range(0..angles.len());
                    let bin = nearest_bin(pixel, angles[head], geom);
                    counts[head * geom.bins + bin] += 1.0;
                }
            }
            SinogramFrame { angles_deg: angles, counts, bins: geom.bins }
        })
        .collect();
    SinogramSet::new(frames)
}

/// Same acquisition, returning the individual events (test-scale helper).
pub fn monte_carlo_events(
    u: &DynamicImage,
    sched: &AngleSchedule,
    geom: &ProjectorGeometry,
    events_factor: f64,
    seed: u64,
) -> Result<Vec<EventRecord>> {
    ensure!(events_factor > 0.0, Config, "events factor must be positive");
    let mut out = Vec::new();
    for t in 0..u.frames() {
        let angles = sched.angles_for_frame(t)?;
        let image: Vec<f64> = u.frame(t).to_vec();
        let n_events = events_for_frame(&image, events_factor);
        if n_events == 0 {
            continue;
        }
        let sampler = PixelSampler::new(&image);
        let mut rng = frame_rng(seed, t);
        for _ in 0..n_events {
            let pixel = sampler.sample(&mut rng);
            let head = rng.gen_range(0..angles.len());
            let bin = nearest_bin(pixel, angles[head], geom);
            out.push(EventRecord { frame: t, bin, head });
        }
    }
    Ok(out)
}

/// Expected bin distribution of the event generator for one frame: the
/// nearest-bin projection of the normalized activity, averaged over heads.
pub fn expected_event_distribution(
    image: &[f64],
    angles_deg: &[f64],
    geom: &ProjectorGeometry,
) -> Vec<f64> {
    let mut probs = vec![0.0; angles_deg.len() * geom.bins];
    let total: f64 = image.iter().filter(|&&v| v > 0.0).sum();
    if total <= 0.0 {
        return probs;
    }
    let head_prob = 1.0 / angles_deg.len() as f64;
    for (head, &angle) in angles_deg.iter().enumerate() {
        for (p, &v) in image.iter().enumerate() {
            if v > 0.0 {
                let bin = nearest_bin(p, angle, geom);
                probs[head * geom.bins + bin] += head_prob * v / total;
            }
        }
    }
    probs
}
