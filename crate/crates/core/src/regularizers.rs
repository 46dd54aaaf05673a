//! Representation regularizers over hidden activations plus the two parameter
//! norms. Each returns (value, gradient) for one layer; the trainer sums the
//! per-layer calls, which is exact because the penalties are additive.
//!
//! Pair sums run over unordered pairs counted once, so dR/dh_j = Σ_{k≠j} h_k
//! holds without a factor 2; constant factors live in λ.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::{GradientSet, Network, ParamBlock};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegKind {
    Sni,
    Snid,
    Slni,
    Slnid,
    L1Rep,
    Decov,
    L1Param,
    L2Wd,
}

impl RegKind {
    pub fn acts_on_activations(self) -> bool {
        !matches!(self, RegKind::L1Param | RegKind::L2Wd)
    }

    pub fn uses_neuron_importance(self) -> bool {
        matches!(self, RegKind::Snid | RegKind::Slnid)
    }

    pub fn uses_locality(self) -> bool {
        matches!(self, RegKind::Slni | RegKind::Slnid)
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegConfig {
    pub kind: RegKind,
    /// λ_SCL in the combined objective.
    pub lambda: f64,
    /// σ as a fraction of the layer width.
    #[serde(default = "default_sigma_scale")]
    pub sigma_scale: f64,
}

fn default_sigma_scale() -> f64 {
    1.0 / 6.0
}

pub fn gaussian_weight(j: usize, k: usize, sigma: f64) -> f64 {
    assert!(sigma > 0.0);
    let d = j as f64 - k as f64;
    (-d * d / (2.0 * sigma * sigma)).exp()
}

/// (1/N) Σ_{j<k} Σ_n h_j h_k with gradient (1/N) Σ_{k≠j} h_k.
pub fn sni(h: &Matrix) -> (f64, Matrix) {
    let n = h.rows() as f64;
    let mut value = 0.0;
    let mut grad = Matrix::zeros(h.rows(), h.cols());
    for r in 0..h.rows() {
        let row = h.row(r);
        let s: f64 = row.iter().sum();
        let sq: f64 = row.iter().map(|v| v * v).sum();
        value += (s * s - sq) / 2.0;
        for (g, &v) in grad.row_mut(r).iter_mut().zip(row) {
            *g = s - v;
        }
    }
    grad.scale_assign(1.0 / n);
    (value / n, grad)
}

// Symmetric zero-diagonal pair kernel; value = (1/2N) Σ_n h_nᵀ K h_n,
// gradient = (1/N) H K.
fn kernel_reg(h: &Matrix, kernel: &Matrix) -> (f64, Matrix) {
    let n = h.rows() as f64;
    let hk = h.matmul(kernel);
    let mut value = 0.0;
    for r in 0..h.rows() {
        for (&a, &b) in h.row(r).iter().zip(hk.row(r)) {
            value += a * b;
        }
    }
    let mut grad = hk;
    grad.scale_assign(1.0 / n);
    (value / (2.0 * n), grad)
}

fn pair_kernel(j_dim: usize, alpha: Option<&[f64]>, sigma: Option<f64>) -> Matrix {
    Matrix::from_fn(j_dim, j_dim, |j, k| {
        if j == k {
            return 0.0;
        }
        let mut w = 1.0;
        if let Some(s) = sigma {
            w *= gaussian_weight(j, k, s);
        }
        if let Some(a) = alpha {
            w *= (-(a[j] + a[k])).exp();
        }
        w
    })
}

/// SNI with each pair weighted by exp(−(j−k)²/2σ²).
pub fn slni(h: &Matrix, sigma: f64) -> (f64, Matrix) {
    kernel_reg(h, &pair_kernel(h.cols(), None, Some(sigma)))
}

/// SNI with each pair additionally weighted by exp(−(α_j+α_k)).
pub fn snid(h: &Matrix, alpha: &[f64]) -> Result<(f64, Matrix)> {
    if alpha.len() != h.cols() {
        return Err(Error::Shape(format!("{} alphas for {} neurons", alpha.len(), h.cols())));
    }
    Ok(kernel_reg(h, &pair_kernel(h.cols(), Some(alpha), None)))
}

/// Full regularizer: locality and importance discounting together.
pub fn slnid(h: &Matrix, alpha: &[f64], sigma: f64) -> Result<(f64, Matrix)> {
    if alpha.len() != h.cols() {
        return Err(Error::Shape(format!("{} alphas for {} neurons", alpha.len(), h.cols())));
    }
    Ok(kernel_reg(h, &pair_kernel(h.cols(), Some(alpha), Some(sigma))))
}

/// Σ_{j≠k} C_jk² over the batch covariance C (ordered pairs, both counted).
/// The centering means carry no gradient: their contributions cancel exactly
/// because Σ_n (h_k^n − μ_k) = 0.
pub fn decov(h: &Matrix) -> (f64, Matrix) {
    let n = h.rows() as f64;
    let mu = h.col_means();
    let mut hc = h.clone();
    for r in 0..hc.rows() {
        for (v, &m) in hc.row_mut(r).iter_mut().zip(&mu) {
            *v -= m;
        }
    }
    let mut cov = hc.matmul_at(&hc);
    cov.scale_assign(1.0 / n);
    let mut value = 0.0;
    for j in 0..cov.rows() {
        for k in 0..cov.cols() {
            if j != k {
                let c = cov.get(j, k);
                value += c * c;
            }
        }
        cov.set(j, j, 0.0);
    }
    let mut grad = hc.matmul(&cov);
    grad.scale_assign(4.0 / n);
    (value, grad)
}

/// (1/N) Σ |h|; subgradient at 0 is 0.
pub fn l1_rep(h: &Matrix) -> (f64, Matrix) {
    let n = h.rows() as f64;
    let value: f64 = h.data().iter().map(|v| v.abs()).sum::<f64>() / n;
    let grad = h.map(|v| {
        if v > 0.0 {
            1.0 / n
        } else if v < 0.0 {
            -1.0 / n
        } else {
            0.0
        }
    });
    (value, grad)
}

// Parameter-space penalties cover the trunk and the active head: inactive
// heads receive no data gradient either, and decaying them would destroy
// finished tasks for nothing.
fn param_norm(
    net: &Network,
    head: usize,
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
) -> (f64, GradientSet) {
    let mut value = 0.0;
    let mut grads = GradientSet {
        trunk: Vec::with_capacity(net.trunk.len()),
        heads: net.heads.iter().map(|_| None).collect(),
        trunk_pre: vec![],
    };
    for layer in &net.trunk {
        let mut g = ParamBlock::zeros_like(layer);
        for ((gv, &th), _) in g.w.data_mut().iter_mut().zip(layer.w.data()).zip(0..) {
            value += f(th);
            *gv = df(th);
        }
        for (gb, &th) in g.b.iter_mut().zip(&layer.b) {
            value += f(th);
            *gb = df(th);
        }
        grads.trunk.push(g);
    }
    if let Some(layer) = net.heads.get(head) {
        let mut g = ParamBlock::zeros_like(layer);
        for (gv, &th) in g.w.data_mut().iter_mut().zip(layer.w.data()) {
            value += f(th);
            *gv = df(th);
        }
        for (gb, &th) in g.b.iter_mut().zip(&layer.b) {
            value += f(th);
            *gb = df(th);
        }
        grads.heads[head] = Some(g);
    }
    (value, grads)
}

/// Σ|θ| over trunk + active head.
pub fn l1_param(net: &Network, head: usize) -> (f64, GradientSet) {
    param_norm(net, head, f64::abs, |t| {
        if t > 0.0 {
            1.0
        } else if t < 0.0 {
            -1.0
        } else {
            0.0
        }
    })
}

/// ½Σθ² over trunk + active head.
pub fn l2_wd(net: &Network, head: usize) -> (f64, GradientSet) {
    param_norm(net, head, |t| 0.5 * t * t, |t| t)
}

/// Dispatches an activation-space regularizer for one hidden layer.
/// σ defaults to sigma_scale × layer width; α defaults to zeros.
pub fn activation_penalty(
    cfg: &RegConfig,
    h: &Matrix,
    alpha: Option<&[f64]>,
) -> Result<(f64, Matrix)> {
    let sigma = cfg.sigma_scale * h.cols() as f64;
    let zeros;
    let alpha = match alpha {
        Some(a) => a,
        None => {
            zeros = vec![0.0; h.cols()];
            &zeros
        }
    };
    match cfg.kind {
        RegKind::Sni => Ok(sni(h)),
        RegKind::Snid => snid(h, alpha),
        RegKind::Slni => Ok(slni(h, sigma)),
        RegKind::Slnid => slnid(h, alpha, sigma),
        RegKind::L1Rep => Ok(l1_rep(h)),
        RegKind::Decov => Ok(decov(h)),
        RegKind::L1Param | RegKind::L2Wd => {
            Err(Error::InvalidArg("parameter penalty dispatched as activation penalty".into()))
        }
    }
}
