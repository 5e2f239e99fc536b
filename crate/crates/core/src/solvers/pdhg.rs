//! Primal-dual (PDHG) solver for the image subproblem.
//!
//! Saddle-point form: the primal variables are the image `U` and the split
//! images `z_ij`; the duals are `g` (data), `b` (temporal differences),
//! and the gradient-shaped `d_ii`, `d+_ij`, `d-_ij` edge duals. The linear
//! operator stacks the per-frame projectors, the temporal forward
//! difference, and the gradient blocks `grad u_i`, `grad (u_i - z_ij)`,
//! `grad z_ij`.

use ndarray::Array2;
use rayon::prelude::*;
use std::io::Write;

use crate::error::{ensure, Result};
use crate::model::{DynamicImage, SinogramSet};
use crate::projector::{operator_norm_estimate, SystemOperator};
use crate::regularization::{
    grad_transpose, spatial_gradient, AuxiliaryImages, EdgeSubgradientState, FidelityKind,
    GradientField, WeightRow,
};
use crate::solvers::prox::{
    dual_update_edge, prox_gaussian_dual, prox_kl_dual, prox_l2_dual,
};

/// Step and stopping parameters for one PDHG solve.
#[derive(Debug, Clone)]
pub struct PdhgConfig {
    pub sigma: f64,
    pub tau: f64,
    pub theta: f64,
    /// Estimate of the stacked operator norm, used to validate the steps.
    pub norm_bound: f64,
    pub max_iters: usize,
    pub tol: f64,
    pub paper_literal_signs: bool,
    /// Optional CSV trace of per-iteration diagnostics.
    pub trace: Option<std::path::PathBuf>,
}

impl PdhgConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.sigma > 0.0 && self.tau > 0.0,
            Config,
            "PDHG steps must be positive (sigma {}, tau {})",
            self.sigma,
            self.tau
        );
        ensure!(
            (0.0..=1.0).contains(&self.theta),
            Config,
            "relaxation theta must lie in [0, 1], got {}",
            self.theta
        );
        let product = self.sigma * self.tau * self.norm_bound * self.norm_bound;
        ensure!(
            product <= 1.0 + 1e-9,
            Config,
            "step sizes violate sigma*tau*||K||^2 <= 1 (got {product})"
        );
        Ok(())
    }
}

/// Model weights seen by the image subproblem.
#[derive(Debug, Clone, Copy)]
pub struct PdhgWeights {
    pub gamma: f64,
    pub eta: f64,
    pub lambda: f64,
}

/// Dual and split variables, kept across outer iterations as a warm start.
#[derive(Debug, Clone)]
pub struct PdhgWorkspace {
    pub z: AuxiliaryImages,
    /// Per-frame data-fidelity dual, sinogram shaped.
    pub g: Vec<Vec<f64>>,
    /// Temporal-difference dual, `T - 1` columns of `M` pixels.
    pub b: Vec<Vec<f64>>,
    pub d_self: Vec<GradientField>,
    pub d_plus: Vec<Vec<(usize, GradientField)>>,
    pub d_minus: Vec<Vec<(usize, GradientField)>>,
}

impl PdhgWorkspace {
    pub fn new(op: &SystemOperator, windows: &[WeightRow], width: usize, height: usize) -> Self {
        let t = op.num_frames();
        let m = width * height;
        let pair_fields = |_: usize| -> Vec<Vec<(usize, GradientField)>> {
            windows
                .iter()
                .enumerate()
                .map(|(i, row)| {
                    row.iter()
                        .filter(|&(j, _)| j != i)
                        .map(|(j, _)| (j, GradientField::zeros(width, height)))
                        .collect()
                })
                .collect()
        };
        Self {
            z: AuxiliaryImages::zeros(windows, m),
            g: (0..t).map(|i| vec![0.0; op.counts_len(i)]).collect(),
            b: (0..t.saturating_sub(1)).map(|_| vec![0.0; m]).collect(),
            d_self: (0..t).map(|_| GradientField::zeros(width, height)).collect(),
            d_plus: pair_fields(0),
            d_minus: pair_fields(1),
        }
    }
}

/// Result of one PDHG solve. The converged `d_self` duals stay in the
/// workspace for the outer subgradient update.
#[derive(Debug)]
pub struct PdhgOutcome {
    pub u: DynamicImage,
    pub iterations: usize,
    pub final_change: f64,
}

struct FrameInputs<'a> {
    op: &'a SystemOperator,
    sino: &'a SinogramSet,
    fidelity: FidelityKind,
    q: &'a EdgeSubgradientState,
    windows: &'a [WeightRow],
    weights: PdhgWeights,
}

fn sub_frames(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Run the PDHG iteration for the image subproblem starting from `u0`.
#[allow(clippy::too_many_arguments)]
pub fn pdhg_solve_u(
    u0: &DynamicImage,
    op: &SystemOperator,
    sino: &SinogramSet,
    fidelity: FidelityKind,
    coupling: &Array2<f64>,
    q: &EdgeSubgradientState,
    windows: &[WeightRow],
    weights: PdhgWeights,
    ws: &mut PdhgWorkspace,
    cfg: &PdhgConfig,
) -> Result<PdhgOutcome> {
    cfg.validate()?;
    let t = u0.frames();
    let m = u0.pixels();
    let (w, h) = (u0.width, u0.height);
    ensure!(op.num_frames() == t, Dim, "operator frame count mismatch");
    ensure!(coupling.dim() == (m, t), Dim, "coupling matrix has wrong shape");
    let lambda = weights.lambda;
    let eta = weights.eta;
    let (sigma, tau, theta) = (cfg.sigma, cfg.tau, cfg.theta);

    let inputs = FrameInputs { op, sino, fidelity, q, windows, weights };

    let mut u: Vec<Vec<f64>> = (0..t).map(|i| u0.frame(i).to_vec()).collect();
    let mut u_bar = u.clone();
    let mut z_bar = ws.z.clone();

    let mut trace = match &cfg.trace {
        Some(path) => {
            let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
            writeln!(f, "iter,primal_change,max_data_dual,max_edge_excess")?;
            Some(f)
        }
        None => None,
    };

    let mut iterations = 0;
    let mut change = f64::INFINITY;
    for k in 0..cfg.max_iters {
        iterations = k + 1;

        // -- dual updates from the relaxed primals --
        let new_g: Vec<Vec<f64>> = (0..t)
            .into_par_iter()
            .map(|i| {
                let proj = inputs.op.forward_frame(i, &u_bar[i]);
                let g_tilde: Vec<f64> = ws.g[i]
                    .iter()
                    .zip(&proj)
                    .map(|(g, p)| g + sigma * p)
                    .collect();
                match inputs.fidelity {
                    FidelityKind::KullbackLeibler => {
                        prox_kl_dual(&g_tilde, &inputs.sino.frames[i].counts, sigma)
                    }
                    FidelityKind::Gaussian => {
                        prox_gaussian_dual(&g_tilde, &inputs.sino.frames[i].counts, sigma)
                    }
                }
            })
            .collect();
        ws.g = new_g;

        if eta > 0.0 {
            let new_b: Vec<Vec<f64>> = (0..t - 1)
                .into_par_iter()
                .map(|i| {
                    let b_tilde: Vec<f64> = ws.b[i]
                        .iter()
                        .zip(u_bar[i + 1].iter().zip(&u_bar[i]))
                        .map(|(b, (next, cur))| b + sigma * (next - cur))
                        .collect();
                    prox_l2_dual(&b_tilde, eta, sigma)
                })
                .collect();
            ws.b = new_b;
        }

        if lambda > 0.0 {
            let new_self: Vec<GradientField> = (0..t)
                .into_par_iter()
                .map(|i| {
                    let c = lambda * inputs.windows[i].weight(i);
                    let grad = spatial_gradient(&u_bar[i], w, h);
                    let mut d_tilde = ws.d_self[i].clone();
                    for p in 0..m {
                        d_tilde.gx[p] += sigma * grad.gx[p];
                        d_tilde.gy[p] += sigma * grad.gy[p];
                    }
                    dual_update_edge(&d_tilde, &inputs.q.q[i], c, 1.0, cfg.paper_literal_signs)
                })
                .collect();
            ws.d_self = new_self;

            let pairs: Vec<(usize, usize)> = (0..t)
                .flat_map(|i| (0..ws.d_plus[i].len()).map(move |k| (i, k)))
                .collect();
            let updated: Vec<(GradientField, GradientField)> = pairs
                .par_iter()
                .map(|&(i, k)| {
                    let (j, ref dp) = ws.d_plus[i][k];
                    let dm = &ws.d_minus[i][k].1;
                    let zb = &z_bar.by_frame[i][k].1;
                    let c = lambda * inputs.windows[i].weight(j);
                    let diff = sub_frames(&u_bar[i], zb);
                    let grad_diff = spatial_gradient(&diff, w, h);
                    let grad_z = spatial_gradient(zb, w, h);
                    let mut dp_tilde = dp.clone();
                    let mut dm_tilde = dm.clone();
                    for p in 0..m {
                        dp_tilde.gx[p] += sigma * grad_diff.gx[p];
                        dp_tilde.gy[p] += sigma * grad_diff.gy[p];
                        dm_tilde.gx[p] += sigma * grad_z.gx[p];
                        dm_tilde.gy[p] += sigma * grad_z.gy[p];
                    }
                    (
                        dual_update_edge(&dp_tilde, &inputs.q.q[j], c, 1.0, cfg.paper_literal_signs),
                        dual_update_edge(&dm_tilde, &inputs.q.q[j], c, -1.0, cfg.paper_literal_signs),
                    )
                })
                .collect();
            for (&(i, k), (dp, dm)) in pairs.iter().zip(updated) {
                ws.d_plus[i][k].1 = dp;
                ws.d_minus[i][k].1 = dm;
            }
        }

        // -- primal updates --
        let gamma = inputs.weights.gamma;
        let denom = gamma + 1.0 / tau;
        let new_u: Vec<Vec<f64>> = (0..t)
            .into_par_iter()
            .map(|i| {
                let mut r = inputs.op.adjoint_frame(i, &ws.g[i]);
                if eta > 0.0 {
                    if i >= 1 {
                        for (rv, bv) in r.iter_mut().zip(&ws.b[i - 1]) {
                            *rv += bv;
                        }
                    }
                    if i + 1 < t {
                        for (rv, bv) in r.iter_mut().zip(&ws.b[i]) {
                            *rv -= bv;
                        }
                    }
                }
                if lambda > 0.0 {
                    let mut sum = ws.d_self[i].clone();
                    for (_, dp) in &ws.d_plus[i] {
                        for p in 0..m {
                            sum.gx[p] += dp.gx[p];
                            sum.gy[p] += dp.gy[p];
                        }
                    }
                    let gt = grad_transpose(&sum);
                    for (rv, gv) in r.iter_mut().zip(&gt) {
                        *rv += gv;
                    }
                }
                let mut col = Vec::with_capacity(m);
                for p in 0..m {
                    let u_prime = u[i][p] - tau * r[p];
                    col.push(((gamma * coupling[[p, i]] + u_prime / tau) / denom).max(0.0));
                }
                col
            })
            .collect();

        if lambda > 0.0 {
            let pairs: Vec<(usize, usize)> = (0..t)
                .flat_map(|i| (0..ws.z.by_frame[i].len()).map(move |k| (i, k)))
                .collect();
            let new_z: Vec<Vec<f64>> = pairs
                .par_iter()
                .map(|&(i, k)| {
                    let dp = &ws.d_plus[i][k].1;
                    let dm = &ws.d_minus[i][k].1;
                    let mut diff = dm.clone();
                    for p in 0..m {
                        diff.gx[p] -= dp.gx[p];
                        diff.gy[p] -= dp.gy[p];
                    }
                    let gt = grad_transpose(&diff);
                    ws.z.by_frame[i][k]
                        .1
                        .iter()
                        .zip(&gt)
                        .map(|(zv, gv)| zv - tau * gv)
                        .collect()
                })
                .collect();
            for (&(i, k), znew) in pairs.iter().zip(new_z) {
                let old = std::mem::replace(&mut ws.z.by_frame[i][k].1, znew);
                let zb = &mut z_bar.by_frame[i][k].1;
                for p in 0..m {
                    let fresh = ws.z.by_frame[i][k].1[p];
                    zb[p] = fresh + theta * (fresh - old[p]);
                }
            }
        }

        // -- relaxation and convergence --
        let mut diff_sq = 0.0;
        let mut new_sq = 0.0;
        for i in 0..t {
            for p in 0..m {
                let d = new_u[i][p] - u[i][p];
                diff_sq += d * d;
                new_sq += new_u[i][p] * new_u[i][p];
                u_bar[i][p] = new_u[i][p] + theta * (new_u[i][p] - u[i][p]);
            }
        }
        u = new_u;
        change = if new_sq > 0.0 { (diff_sq / new_sq).sqrt() } else { 0.0 };

        if let Some(f) = trace.as_mut() {
            let max_g = ws
                .g
                .iter()
                .flat_map(|g| g.iter().copied())
                .fold(f64::NEG_INFINITY, f64::max);
            let max_edge = edge_feasibility_excess(ws, q, windows, lambda);
            writeln!(f, "{},{:e},{:e},{:e}", k + 1, change, max_g, max_edge)?;
        }

        if change < cfg.tol {
            break;
        }
    }

    let mut out = DynamicImage::zeros(w, h, t);
    for (i, col) in u.iter().enumerate() {
        out.frame_mut(i).iter_mut().zip(col).for_each(|(dst, &v)| *dst = v);
    }
    ensure!(out.is_finite(), Numeric, "PDHG produced non-finite values");
    Ok(PdhgOutcome { u: out, iterations, final_change: change })
}

/// Worst per-pixel violation of the shifted-ball feasibility over all edge
/// duals (negative values mean strictly feasible).
fn edge_feasibility_excess(
    ws: &PdhgWorkspace,
    q: &EdgeSubgradientState,
    windows: &[WeightRow],
    lambda: f64,
) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mut worst = f64::NEG_INFINITY;
    let mut check = |d: &GradientField, qf: &GradientField, c: f64, sign: f64| {
        for p in 0..d.len() {
            let x = d.gx[p] / c + sign * qf.gx[p];
            let y = d.gy[p] / c + sign * qf.gy[p];
            worst = worst.max(x.hypot(y) - 1.0);
        }
    };
    for (i, d) in ws.d_self.iter().enumerate() {
        let c = lambda * windows[i].weight(i);
        if c > 0.0 {
            check(d, &q.q[i], c, 1.0);
        }
    }
    for i in 0..ws.d_plus.len() {
        for ((j, dp), (_, dm)) in ws.d_plus[i].iter().zip(&ws.d_minus[i]) {
            let c = lambda * windows[i].weight(*j);
            if c > 0.0 {
                check(dp, &q.q[*j], c, 1.0);
                check(dm, &q.q[*j], c, -1.0);
            }
        }
    }
    worst
}

/// The full stacked linear operator `K` of the saddle-point problem, in
/// flattened-vector form for norm estimation and adjoint testing.
pub struct StackedOperator<'a> {
    op: &'a SystemOperator,
    width: usize,
    height: usize,
    eta_active: bool,
    lambda_active: bool,
    pair_list: Vec<(usize, usize)>,
}

impl<'a> StackedOperator<'a> {
    pub fn new(
        op: &'a SystemOperator,
        windows: &[WeightRow],
        width: usize,
        height: usize,
        eta_active: bool,
        lambda_active: bool,
    ) -> Self {
        let pair_list = if lambda_active {
            windows
                .iter()
                .enumerate()
                .flat_map(|(i, row)| {
                    row.iter()
                        .filter(move |&(j, _)| j != i)
                        .map(move |(j, _)| (i, j))
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { op, width, height, eta_active, lambda_active, pair_list }
    }

    pub fn primal_dim(&self) -> usize {
        let m = self.width * self.height;
        m * self.op.num_frames() + self.pair_list.len() * m
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let t = self.op.num_frames();
        let m = self.width * self.height;
        let (u_flat, z_flat) = x.split_at(m * t);
        let mut out = Vec::new();
        for i in 0..t {
            out.extend(self.op.forward_frame(i, &u_flat[i * m..(i + 1) * m]));
        }
        if self.eta_active {
            for i in 0..t - 1 {
                for p in 0..m {
                    out.push(u_flat[(i + 1) * m + p] - u_flat[i * m + p]);
                }
            }
        }
        if self.lambda_active {
            for i in 0..t {
                let g = spatial_gradient(&u_flat[i * m..(i + 1) * m], self.width, self.height);
                out.extend(g.gx);
                out.extend(g.gy);
            }
            for (k, &(i, _)) in self.pair_list.iter().enumerate() {
                let z = &z_flat[k * m..(k + 1) * m];
                let diff: Vec<f64> = u_flat[i * m..(i + 1) * m]
                    .iter()
                    .zip(z)
                    .map(|(a, b)| a - b)
                    .collect();
                let gd = spatial_gradient(&diff, self.width, self.height);
                out.extend(gd.gx);
                out.extend(gd.gy);
                let gz = spatial_gradient(z, self.width, self.height);
                out.extend(gz.gx);
                out.extend(gz.gy);
            }
        }
        out
    }

    pub fn apply_adjoint(&self, y: &[f64]) -> Vec<f64> {
        let t = self.op.num_frames();
        let m = self.width * self.height;
        let mut x = vec![0.0; self.primal_dim()];
        let mut pos = 0usize;
        for i in 0..t {
            let len = self.op.counts_len(i);
            let back = self.op.adjoint_frame(i, &y[pos..pos + len]);
            for p in 0..m {
                x[i * m + p] += back[p];
            }
            pos += len;
        }
        if self.eta_active {
            for i in 0..t - 1 {
                for p in 0..m {
                    let b = y[pos + p];
                    x[(i + 1) * m + p] += b;
                    x[i * m + p] -= b;
                }
                pos += m;
            }
        }
        if self.lambda_active {
            let take_field = |pos: &mut usize| {
                let mut g = GradientField::zeros(self.width, self.height);
                g.gx.copy_from_slice(&y[*pos..*pos + m]);
                g.gy.copy_from_slice(&y[*pos + m..*pos + 2 * m]);
                *pos += 2 * m;
                g
            };
            for i in 0..t {
                let g = take_field(&mut pos);
                let gt = grad_transpose(&g);
                for p in 0..m {
                    x[i * m + p] += gt[p];
                }
            }
            for (k, &(i, _)) in self.pair_list.iter().enumerate() {
                let gp = take_field(&mut pos);
                let gm = take_field(&mut pos);
                let gpt = grad_transpose(&gp);
                let gmt = grad_transpose(&gm);
                for p in 0..m {
                    x[i * m + p] += gpt[p];
                    x[m * t + k * m + p] += gmt[p] - gpt[p];
                }
            }
        }
        x
    }

    /// Power-iteration norm estimate, converged to 1e-3 relative.
    pub fn norm_estimate(&self, seed: u64) -> f64 {
        operator_norm_estimate(
            |x| self.apply(x),
            |y| self.apply_adjoint(y),
            self.primal_dim(),
            seed,
            1e-3,
            300,
        )
    }
}

/// Power-iteration estimate of the stacked operator norm
/// `||(A, d_t, grad-blocks)||` for the given window structure.
pub fn stacked_operator_norm(
    op: &SystemOperator,
    windows: &[WeightRow],
    width: usize,
    height: usize,
    eta_active: bool,
    lambda_active: bool,
    seed: u64,
) -> f64 {
    StackedOperator::new(op, windows, width, height, eta_active, lambda_active).norm_estimate(seed)
}
