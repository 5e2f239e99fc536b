//! Difference operators, total variation, Bregman-TV distances, the
//! infimal-convolution edge-correlation term, group-sparsity and temporal
//! penalties, and evaluation of the full variational objective.
//!
//! Gradients are forward differences with Neumann boundaries (last row and
//! column of each component are structurally zero). `grad_transpose` is the
//! exact adjoint of `spatial_gradient` under the flat inner products; the
//! primal-dual solver relies on that identity, not on any continuum
//! divergence convention.

use ndarray::Array2;

use crate::error::{ensure, Result};
use crate::model::{
    gaussian_fidelity, kl_fidelity, BasisMatrix, CoefficientMatrix, DynamicImage, SinogramSet,
};

/// Per-pixel gradient 2-vectors for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub width: usize,
    pub height: usize,
}

impl GradientField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self { gx: vec![0.0; width * height], gy: vec![0.0; width * height], width, height }
    }

    pub fn len(&self) -> usize {
        self.gx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gx.is_empty()
    }

    /// Largest per-pixel Euclidean magnitude.
    pub fn max_magnitude(&self) -> f64 {
        self.gx
            .iter()
            .zip(&self.gy)
            .map(|(x, y)| x.hypot(*y))
            .fold(0.0, f64::max)
    }

    pub fn dot(&self, other: &GradientField) -> f64 {
        self.gx
            .iter()
            .zip(&other.gx)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + self.gy.iter().zip(&other.gy).map(|(a, b)| a * b).sum::<f64>()
    }

    /// Clamp every 2-vector into the unit Euclidean ball.
    pub fn clamp_unit(&mut self) {
        for (x, y) in self.gx.iter_mut().zip(self.gy.iter_mut()) {
            let m = x.hypot(*y);
            if m > 1.0 {
                *x /= m;
                *y /= m;
            }
        }
    }
}

/// Forward-difference gradient of one frame.
pub fn spatial_gradient(frame: &[f64], width: usize, height: usize) -> GradientField {
    debug_assert_eq!(frame.len(), width * height);
    let mut g = GradientField::zeros(width, height);
    for y in 0..height {
        for x in 0..width {
            let p = y * width + x;
            if x + 1 < width {
                g.gx[p] = frame[p + 1] - frame[p];
            }
            if y + 1 < height {
                g.gy[p] = frame[p + width] - frame[p];
            }
        }
    }
    g
}

/// Exact adjoint of [`spatial_gradient`]: `<grad u, g> = <u, grad_transpose g>`.
///
/// Entries of `g` sitting on the structural-zero boundary of the gradient
/// range are never read.
pub fn grad_transpose(g: &GradientField) -> Vec<f64> {
    let (w, h) = (g.width, g.height);
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let mut v = 0.0;
            if x >= 1 {
                v += g.gx[p - 1];
            }
            if x + 1 < w {
                v -= g.gx[p];
            }
            if y >= 1 {
                v += g.gy[p - w];
            }
            if y + 1 < h {
                v -= g.gy[p];
            }
            out[p] = v;
        }
    }
    out
}

/// Discrete divergence, the negative adjoint of the gradient:
/// `<grad u, g> = -<u, divergence(g)>`.
pub fn divergence(g: &GradientField) -> Vec<f64> {
    let mut out = grad_transpose(g);
    for v in &mut out {
        *v = -*v;
    }
    out
}

/// Isotropic total variation: sum over pixels of the gradient magnitude.
pub fn tv(frame: &[f64], width: usize, height: usize) -> f64 {
    let g = spatial_gradient(frame, width, height);
    g.gx.iter().zip(&g.gy).map(|(x, y)| x.hypot(*y)).sum()
}

/// TV Bregman distance against a reference subgradient field:
/// `tv(u) - <q_ref, grad u>`. Nonnegative whenever every `q_ref` 2-vector
/// lies in the unit ball (Cauchy-Schwarz).
pub fn bregman_tv(frame: &[f64], width: usize, height: usize, q_ref: &GradientField) -> Result<f64> {
    ensure!(
        q_ref.max_magnitude() <= 1.0 + 1e-9,
        Data,
        "reference field magnitude {} exceeds the unit ball",
        q_ref.max_magnitude()
    );
    let g = spatial_gradient(frame, width, height);
    let total: f64 = g
        .gx
        .iter()
        .zip(&g.gy)
        .zip(q_ref.gx.iter().zip(&q_ref.gy))
        .map(|((gx, gy), (qx, qy))| gx.hypot(*gy) - (gx * qx + gy * qy))
        .sum();
    Ok(total)
}

/// Relative distance between two 2-vectors: `|p| (1 - p_hat . q_hat)`.
/// For `q = 0` the limit convention `|p|` applies.
pub fn relative_distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    let np = p[0].hypot(p[1]);
    let nq = q[0].hypot(q[1]);
    if nq == 0.0 || np == 0.0 {
        return np;
    }
    np - (p[0] * q[0] + p[1] * q[1]) / nq
}

/// Direction-symmetric variant: `|p| (1 - |p_hat . q_hat|)`. Vanishes for
/// parallel vectors regardless of orientation.
pub fn symmetric_distance(p: [f64; 2], q: [f64; 2]) -> f64 {
    let np = p[0].hypot(p[1]);
    let nq = q[0].hypot(q[1]);
    if nq == 0.0 || np == 0.0 {
        return np;
    }
    np - (p[0] * q[0] + p[1] * q[1]).abs() / nq
}

/// One row of the temporal correlation weights: uniform over a clipped
/// window of frames, summing to one exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    /// First frame index of the support (0-based).
    pub start: usize,
    pub weights: Vec<f64>,
}

impl WeightRow {
    pub fn end(&self) -> usize {
        self.start + self.weights.len()
    }

    pub fn weight(&self, j: usize) -> f64 {
        if j >= self.start && j < self.end() {
            self.weights[j - self.start]
        } else {
            0.0
        }
    }

    /// Support indices paired with their weights.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.weights.iter().enumerate().map(|(k, &w)| (self.start + k, w))
    }
}

/// Row `frame` (0-based) of the weight matrix for `t` frames: uniform
/// weights over `{frame-halfwidth, ..., frame+halfwidth}` clipped to range.
/// The last entry absorbs rounding so the row sums to 1.0 exactly.
pub fn weight_window(frame: usize, t: usize, halfwidth: usize) -> WeightRow {
    assert!(frame < t, "frame index {frame} out of range for {t} frames");
    let start = frame.saturating_sub(halfwidth);
    let end = (frame + halfwidth + 1).min(t);
    let n = end - start;
    let base = 1.0 / n as f64;
    let mut weights = Vec::with_capacity(n);
    let mut acc = 0.0;
    for _ in 0..n - 1 {
        weights.push(base);
        acc += base;
    }
    // acc is in [0.5, 1) for n >= 2, so 1 - acc is exact by Sterbenz.
    weights.push(1.0 - acc);
    WeightRow { start, weights }
}

/// All weight rows for a sequence of `t` frames.
pub fn build_windows(t: usize, halfwidth: usize) -> Vec<WeightRow> {
    (0..t).map(|i| weight_window(i, t, halfwidth)).collect()
}

/// Per-frame TV subgradient fields tracked across outer iterations.
#[derive(Debug, Clone)]
pub struct EdgeSubgradientState {
    pub q: Vec<GradientField>,
}

impl EdgeSubgradientState {
    pub fn zeros(frames: usize, width: usize, height: usize) -> Self {
        Self { q: (0..frames).map(|_| GradientField::zeros(width, height)).collect() }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, f) in self.q.iter().enumerate() {
            ensure!(
                f.max_magnitude() <= 1.0 + 1e-9,
                Data,
                "subgradient field {i} leaves the unit ball ({})",
                f.max_magnitude()
            );
        }
        Ok(())
    }
}

/// Auxiliary split images `z_ij`, one per ordered in-window pair `(i, j)`,
/// `j != i`. Entries are grouped by `i` and sorted by `j`.
#[derive(Debug, Clone)]
pub struct AuxiliaryImages {
    pub by_frame: Vec<Vec<(usize, Vec<f64>)>>,
}

impl AuxiliaryImages {
    pub fn zeros(windows: &[WeightRow], pixels: usize) -> Self {
        let by_frame = windows
            .iter()
            .enumerate()
            .map(|(i, row)| {
                row.iter()
                    .filter(|&(j, _)| j != i)
                    .map(|(j, _)| (j, vec![0.0; pixels]))
                    .collect()
            })
            .collect();
        Self { by_frame }
    }

    pub fn num_pairs(&self) -> usize {
        self.by_frame.iter().map(Vec::len).sum()
    }
}

/// Value of the edge-correlation surrogate for frame `i`:
/// `w_ii B(u_i, q_i) + sum_j w_ij [B(u_i - z_ij, q_j) + B(z_ij, -q_j)]`
/// where `B` is the TV Bregman distance.
pub fn edge_regularizer_value(
    frame_idx: usize,
    u_i: &[f64],
    width: usize,
    height: usize,
    z_row: &[(usize, Vec<f64>)],
    q: &EdgeSubgradientState,
    w_row: &WeightRow,
) -> Result<f64> {
    let mut total = w_row.weight(frame_idx)
        * bregman_tv(u_i, width, height, &q.q[frame_idx])?;
    let mut diff = vec![0.0; u_i.len()];
    for (j, z) in z_row {
        let w_ij = w_row.weight(*j);
        if w_ij == 0.0 {
            continue;
        }
        for (d, (&a, &b)) in diff.iter_mut().zip(u_i.iter().zip(z.iter())) {
            *d = a - b;
        }
        let mut neg_q = q.q[*j].clone();
        neg_q.gx.iter_mut().for_each(|v| *v = -*v);
        neg_q.gy.iter_mut().for_each(|v| *v = -*v);
        total += w_ij
            * (bregman_tv(&diff, width, height, &q.q[*j])?
                + bregman_tv(z, width, height, &neg_q)?);
    }
    Ok(total)
}

/// Column-sparsity norm: sum over columns of the max absolute entry.
pub fn l1_inf_norm(alpha: &Array2<f64>) -> f64 {
    alpha
        .columns()
        .into_iter()
        .map(|c| c.iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .sum()
}

/// Sum of squared forward temporal differences over all pixels.
pub fn temporal_penalty(u: &DynamicImage) -> f64 {
    let t = u.frames();
    if t < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..t - 1 {
        let cur = u.frame(i);
        let next = u.frame(i + 1);
        total += cur
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (b - a) * (b - a))
            .sum::<f64>();
    }
    total
}

/// Which data fidelity the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FidelityKind {
    Gaussian,
    KullbackLeibler,
}

/// Model weights entering the objective (the continuation-scaled gamma is
/// passed per call).
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveWeights {
    pub gamma: f64,
    pub beta: f64,
    pub eta: f64,
    pub lambda: f64,
}

/// Full objective value. `proj` must be the forward projection of `u`
/// under the same operator that produced `sino`.
#[allow(clippy::too_many_arguments)]
pub fn objective_eval(
    u: &DynamicImage,
    alpha: &CoefficientMatrix,
    basis: &BasisMatrix,
    z: &AuxiliaryImages,
    q: &EdgeSubgradientState,
    sino: &SinogramSet,
    proj: &SinogramSet,
    weights: &ObjectiveWeights,
    windows: &[WeightRow],
    fidelity: FidelityKind,
) -> Result<f64> {
    let data_term = match fidelity {
        FidelityKind::Gaussian => gaussian_fidelity(sino, proj)?,
        FidelityKind::KullbackLeibler => kl_fidelity(sino, proj)?,
    };
    let factors = alpha.data.dot(&basis.data.t());
    let coupling: f64 = u
        .data
        .iter()
        .zip(factors.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let mut value = data_term
        + 0.5 * weights.gamma * coupling
        + weights.beta * l1_inf_norm(&alpha.data)
        + 0.5 * weights.eta * temporal_penalty(u);
    if weights.lambda != 0.0 {
        for i in 0..u.frames() {
            let frame: Vec<f64> = u.frame(i).to_vec();
            value += weights.lambda
                * edge_regularizer_value(
                    i,
                    &frame,
                    u.width,
                    u.height,
                    &z.by_frame[i],
                    q,
                    &windows[i],
                )?;
        }
    }
    Ok(value)
}
