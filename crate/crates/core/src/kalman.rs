//! Kalman filtering and RTS smoothing of the amplitude chain restricted to
//! a fixed support, in information form on the active Gram matrix.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::field::Scalar;
use crate::model::ModelParams;

/// Noise variance substituted for `sigma_e^2 = 0`.
pub const NOISE_JITTER: f64 = 1e-12;

/// Data of one frame restricted to the active columns: `G = A_S^H A_S`,
/// `b = A_S^H y`, `||y||^2` and the number of measurements.
#[derive(Debug, Clone)]
pub struct FrameData<T: Scalar> {
    pub gram: DMatrix<T>,
    pub aty: DVector<T>,
    pub yty: f64,
    pub m: usize,
}

impl<T: Scalar> FrameData<T> {
    pub fn from_columns(a_s: &DMatrix<T>, y: &DVector<T>) -> Self {
        Self {
            gram: a_s.ad_mul(a_s),
            aty: a_s.ad_mul(y),
            yty: y.norm_squared(),
            m: y.len(),
        }
    }

    /// Restriction of full-support data to the indices in `idx`.
    pub fn restrict(&self, idx: &[usize]) -> Self {
        let k = idx.len();
        Self {
            gram: DMatrix::from_fn(k, k, |r, c| self.gram[(idx[r], idx[c])]),
            aty: DVector::from_fn(k, |r, _| self.aty[idx[r]]),
            yty: self.yty,
            m: self.m,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChainResult<T: Scalar> {
    /// Smoothed (or filtered, without smoothing) means per frame.
    pub means: Vec<DVector<T>>,
    pub vars: Vec<DVector<f64>>,
    pub filtered_vars: Vec<DVector<f64>>,
    /// `log p(y^(1..T) | support)`.
    pub log_evidence: f64,
    /// Set when a jitter had to be added to keep a factorization positive
    /// definite or `sigma_e^2 = 0` was replaced.
    pub regularized: bool,
}

struct Factor<T: Scalar> {
    chol: Cholesky<T, Dyn>,
    logdet: f64,
}

fn factor<T: Scalar>(mut m: DMatrix<T>, regularized: &mut bool) -> Factor<T> {
    let k = m.nrows();
    let mut jitter = 0.0;
    loop {
        if let Some(chol) = Cholesky::new(m.clone()) {
            let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.re().ln()).sum::<f64>();
            return Factor { chol, logdet };
        }
        *regularized = true;
        let scale = (0..k).map(|i| m[(i, i)].re().abs()).fold(0.0, f64::max).max(1.0);
        let add = if jitter == 0.0 { 1e-12 * scale } else { jitter * 10.0 };
        for i in 0..k {
            m[(i, i)] += T::from_real(add - jitter);
        }
        jitter = add;
    }
}

fn diag_re<T: Scalar>(m: &DMatrix<T>) -> DVector<f64> {
    DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|v| v.re()))
}

/// Filters (and optionally smooths) the chain
/// `theta^(t) = (1 - alpha) theta^(t-1) + alpha zeta + alpha w`,
/// `y^(t) = A_S theta^(t) + e` over the frames in `frames`.
pub fn chain_smoother<T: Scalar>(
    frames: &[FrameData<T>],
    params: &ModelParams<T>,
    smooth: bool,
) -> ChainResult<T> {
    let h = T::GAUSS_SCALE;
    let log_norm = (std::f64::consts::PI / h).ln();
    let mut regularized = false;
    let mut s2 = params.sigma_e2;
    if !(s2 > 0.0) {
        s2 = NOISE_JITTER;
        regularized = true;
    }
    let k = frames.first().map_or(0, |f| f.gram.nrows());
    let g = 1.0 - params.alpha;
    let q = params.transition_variance();
    let sigma2 = params.sigma2();

    let nf = frames.len();
    let mut m_pred: Vec<DVector<T>> = Vec::with_capacity(nf);
    let mut p_pred_inv: Vec<DMatrix<T>> = Vec::with_capacity(nf);
    let mut p_pred: Vec<DMatrix<T>> = Vec::with_capacity(nf);
    let mut m_filt: Vec<DVector<T>> = Vec::with_capacity(nf);
    let mut p_filt: Vec<DMatrix<T>> = Vec::with_capacity(nf);
    let mut log_ev = 0.0;

    for (t, f) in frames.iter().enumerate() {
        let (mp, pp) = if t == 0 {
            (
                DVector::from_element(k, params.zeta),
                DMatrix::from_diagonal_element(k, k, T::from_real(sigma2)),
            )
        } else {
            let mf = &m_filt[t - 1];
            let pf = &p_filt[t - 1];
            let mut pp = pf * T::from_real(g * g);
            for i in 0..k {
                pp[(i, i)] += T::from_real(q);
            }
            (
                mf.map(|v| v.scaled(g) + params.zeta.scaled(params.alpha)),
                pp,
            )
        };

        let fp = factor(pp.clone(), &mut regularized);
        let pp_inv = fp.chol.inverse();
        let lam = &pp_inv + &f.gram * T::from_real(1.0 / s2);
        let fl = factor(lam, &mut regularized);
        let info = &pp_inv * &mp + &f.aty * T::from_real(1.0 / s2);
        let mean = fl.chol.solve(&info);
        let cov = fl.chol.inverse();

        // evidence of y^(t) given the past, via the determinant lemma
        let gm = &f.gram * &mp;
        let r2 = f.yty - 2.0 * mp.dotc(&f.aty).re() + mp.dotc(&gm).re();
        let u = &f.aty - &gm;
        let lu = fl.chol.solve(&u);
        let quad = r2 / s2 - u.dotc(&lu).re() / (s2 * s2);
        let logdet = f.m as f64 * s2.ln() + fp.logdet + fl.logdet;
        log_ev += -h * (quad + logdet + f.m as f64 * log_norm);

        m_pred.push(mp);
        p_pred.push(pp);
        p_pred_inv.push(pp_inv);
        m_filt.push(mean);
        p_filt.push(cov);
    }

    let filtered_vars: Vec<DVector<f64>> = p_filt.iter().map(diag_re).collect();
    if !smooth || nf == 0 {
        return ChainResult {
            vars: filtered_vars.clone(),
            means: m_filt,
            filtered_vars,
            log_evidence: log_ev,
            regularized,
        };
    }

    let mut m_s = m_filt.clone();
    let mut p_s = p_filt.clone();
    for t in (0..nf - 1).rev() {
        let j = (&p_filt[t] * &p_pred_inv[t + 1]) * T::from_real(g);
        let dm = &m_s[t + 1] - &m_pred[t + 1];
        m_s[t] = &m_filt[t] + &j * dm;
        let dp = &p_s[t + 1] - &p_pred[t + 1];
        p_s[t] = &p_filt[t] + &j * dp * j.adjoint();
    }
    ChainResult {
        vars: p_s.iter().map(diag_re).collect(),
        means: m_s,
        filtered_vars,
        log_evidence: log_ev,
        regularized,
    }
}

/// Reusable buffers for [`chain_log_evidence`].
#[derive(Debug, Clone, Default)]
pub struct EvidenceWorkspace<T: Scalar> {
    gram: Vec<T>,
    aty: Vec<T>,
    p: Vec<T>,
    l: Vec<T>,
    tmp: Vec<T>,
    l2: Vec<T>,
    x: Vec<T>,
    mean: Vec<T>,
    mp: Vec<T>,
    u: Vec<T>,
    w: Vec<T>,
    // per-frame history for the smoothing pass
    hist_l: Vec<T>,
    hist_p: Vec<T>,
    hist_mp: Vec<T>,
    hist_mf: Vec<T>,
}

/// In-place lower Cholesky of a row-major Hermitian `k x k` matrix; `false`
/// when it is not numerically positive definite.
fn cholesky_flat<T: Scalar>(a: &mut [T], k: usize) -> bool {
    for j in 0..k {
        let mut d = a[j * k + j].re();
        for p in 0..j {
            d -= a[j * k + p].abs2();
        }
        if !(d > 0.0) || !d.is_finite() {
            return false;
        }
        let ljj = d.sqrt();
        a[j * k + j] = T::from_real(ljj);
        for i in j + 1..k {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= a[i * k + p] * a[j * k + p].conj();
            }
            a[i * k + j] = s.scaled(1.0 / ljj);
        }
        for i in 0..j {
            a[i * k + j] = T::zero();
        }
    }
    true
}

/// `log p(y | support)` of the chain for the active indices `idx`, reading
/// `G` and `A^H y` from full-support frame data. Allocation-free once the
/// workspace has grown; returns `None` when a factorization fails so the
/// caller can fall back to [`chain_smoother`].
pub fn chain_log_evidence<T: Scalar>(
    full: &[FrameData<T>],
    idx: &[usize],
    params: &ModelParams<T>,
    ws: &mut EvidenceWorkspace<T>,
) -> Option<f64> {
    chain_flat(full, idx, params, ws, None)
}

/// As [`chain_log_evidence`], additionally writing the smoothed means into
/// `means` (frame-major, `T x |idx|`).
pub fn chain_smoothed_means<T: Scalar>(
    full: &[FrameData<T>],
    idx: &[usize],
    params: &ModelParams<T>,
    ws: &mut EvidenceWorkspace<T>,
    means: &mut Vec<T>,
) -> Option<f64> {
    chain_flat(full, idx, params, ws, Some(means))
}

fn chain_flat<T: Scalar>(
    full: &[FrameData<T>],
    idx: &[usize],
    params: &ModelParams<T>,
    ws: &mut EvidenceWorkspace<T>,
    mut smoothed: Option<&mut Vec<T>>,
) -> Option<f64> {
    let keep = smoothed.is_some();
    let nf = full.len();
    let h = T::GAUSS_SCALE;
    let log_norm = (std::f64::consts::PI / h).ln();
    let s2 = if params.sigma_e2 > 0.0 { params.sigma_e2 } else { NOISE_JITTER };
    let k = idx.len();
    let g = 1.0 - params.alpha;
    let q = params.transition_variance();
    let sigma2 = params.sigma2();
    let kk = k * k;
    for buf in [&mut ws.gram, &mut ws.p, &mut ws.l, &mut ws.tmp, &mut ws.l2, &mut ws.x] {
        buf.clear();
        buf.resize(kk, T::zero());
    }
    for buf in [&mut ws.aty, &mut ws.mean, &mut ws.mp, &mut ws.u, &mut ws.w] {
        buf.clear();
        buf.resize(k, T::zero());
    }
    if keep {
        for buf in [&mut ws.hist_l, &mut ws.hist_p] {
            buf.clear();
            buf.resize(nf * kk, T::zero());
        }
        for buf in [&mut ws.hist_mp, &mut ws.hist_mf] {
            buf.clear();
            buf.resize(nf * k, T::zero());
        }
    }

    let mut log_ev = 0.0;
    for (t, f) in full.iter().enumerate() {
        for (r, &ir) in idx.iter().enumerate() {
            ws.aty[r] = f.aty[ir];
            for (c, &ic) in idx.iter().enumerate() {
                ws.gram[r * k + c] = f.gram[(ir, ic)];
            }
        }
        // predicted moments
        if t == 0 {
            for i in 0..k {
                ws.mp[i] = params.zeta;
                for j in 0..k {
                    ws.l[i * k + j] = if i == j { T::from_real(sigma2) } else { T::zero() };
                }
            }
        } else {
            for i in 0..k {
                ws.mp[i] = ws.mean[i].scaled(g) + params.zeta.scaled(params.alpha);
                for j in 0..k {
                    let mut v = ws.p[i * k + j].scaled(g * g);
                    if i == j {
                        v += T::from_real(q);
                    }
                    ws.l[i * k + j] = v;
                }
            }
        }
        if !cholesky_flat(&mut ws.l, k) {
            return None;
        }
        // tmp = G L
        for i in 0..k {
            for j in 0..k {
                let mut s = T::zero();
                for p in j..k {
                    s += ws.gram[i * k + p] * ws.l[p * k + j];
                }
                ws.tmp[i * k + j] = s;
            }
        }
        // l2 = I + L^H G L / s2
        for i in 0..k {
            for j in 0..k {
                let mut s = T::zero();
                for p in i..k {
                    s += ws.l[p * k + i].conj() * ws.tmp[p * k + j];
                }
                let mut v = s.scaled(1.0 / s2);
                if i == j {
                    v = T::from_real(1.0 + v.re());
                }
                ws.l2[i * k + j] = v;
            }
        }
        if !cholesky_flat(&mut ws.l2, k) {
            return None;
        }
        // u = b - G m^-,  r2 = ||y - A m^-||^2
        let mut r2 = f.yty;
        for i in 0..k {
            let mut gm = T::zero();
            for j in 0..k {
                gm += ws.gram[i * k + j] * ws.mp[j];
            }
            ws.u[i] = ws.aty[i] - gm;
            r2 += -2.0 * (ws.mp[i].conj() * ws.aty[i]).re() + (ws.mp[i].conj() * gm).re();
        }
        // w = L^H u, then solve (L2 L2^H) z = w in place
        for i in 0..k {
            let mut s = T::zero();
            for p in i..k {
                s += ws.l[p * k + i].conj() * ws.u[p];
            }
            ws.w[i] = s;
        }
        let mut wv = 0.0;
        for i in 0..k {
            let mut s = ws.w[i];
            for p in 0..i {
                s -= ws.l2[i * k + p] * ws.w[p];
            }
            ws.w[i] = s.scaled(1.0 / ws.l2[i * k + i].re());
            wv += ws.w[i].abs2();
        }
        for i in (0..k).rev() {
            let mut s = ws.w[i];
            for p in i + 1..k {
                s -= ws.l2[p * k + i].conj() * ws.w[p];
            }
            ws.w[i] = s.scaled(1.0 / ws.l2[i * k + i].re());
        }
        let logdet_l2: f64 = 2.0 * (0..k).map(|i| ws.l2[i * k + i].re().ln()).sum::<f64>();
        let quad = r2 / s2 - wv / (s2 * s2);
        log_ev += -h * (quad + f.m as f64 * s2.ln() + logdet_l2 + f.m as f64 * log_norm);

        if t + 1 == nf && !keep {
            break;
        }
        // filtered mean m^- + L z / s2
        for i in 0..k {
            let mut s = T::zero();
            for p in 0..=i {
                s += ws.l[i * k + p] * ws.w[p];
            }
            ws.mean[i] = ws.mp[i] + s.scaled(1.0 / s2);
        }
        if keep {
            ws.hist_l[t * kk..(t + 1) * kk].copy_from_slice(&ws.l);
            ws.hist_mp[t * k..(t + 1) * k].copy_from_slice(&ws.mp);
            ws.hist_mf[t * k..(t + 1) * k].copy_from_slice(&ws.mean);
            if t + 1 == nf {
                break;
            }
        }
        // X = L2^{-1} L^H, filtered covariance X^H X
        for c in 0..k {
            for i in 0..k {
                let mut s = ws.l[c * k + i].conj();
                for p in 0..i {
                    s -= ws.l2[i * k + p] * ws.x[p * k + c];
                }
                ws.x[i * k + c] = s.scaled(1.0 / ws.l2[i * k + i].re());
            }
        }
        for i in 0..k {
            for j in 0..k {
                let mut s = T::zero();
                for p in 0..k {
                    s += ws.x[p * k + i].conj() * ws.x[p * k + j];
                }
                ws.p[i * k + j] = s;
            }
        }
        if keep {
            ws.hist_p[t * kk..(t + 1) * kk].copy_from_slice(&ws.p);
        }
    }

    if let Some(out) = smoothed.as_mut() {
        out.clear();
        out.resize(nf * k, T::zero());
        out[(nf - 1) * k..].copy_from_slice(&ws.hist_mf[(nf - 1) * k..]);
        // m_s[t] = m_f[t] + g P_f[t] (P^-[t+1])^{-1} (m_s[t+1] - m^-[t+1])
        for t in (0..nf.saturating_sub(1)).rev() {
            let l = &ws.hist_l[(t + 1) * kk..(t + 2) * kk];
            for i in 0..k {
                ws.w[i] = out[(t + 1) * k + i] - ws.hist_mp[(t + 1) * k + i];
            }
            for i in 0..k {
                let mut s = ws.w[i];
                for p in 0..i {
                    s -= l[i * k + p] * ws.w[p];
                }
                ws.w[i] = s.scaled(1.0 / l[i * k + i].re());
            }
            for i in (0..k).rev() {
                let mut s = ws.w[i];
                for p in i + 1..k {
                    s -= l[p * k + i].conj() * ws.w[p];
                }
                ws.w[i] = s.scaled(1.0 / l[i * k + i].re());
            }
            let pf = &ws.hist_p[t * kk..(t + 1) * kk];
            for i in 0..k {
                let mut s = T::zero();
                for p in 0..k {
                    s += pf[i * k + p] * ws.w[p];
                }
                out[t * k + i] = ws.hist_mf[t * k + i] + s.scaled(g);
            }
        }
    }
    Some(log_ev)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{generate_instance, GenConfig, MatrixKind};
    use crate::sks::active_columns;
    use num_complex::Complex64;

    fn check<T: Scalar>(seed: u64) {
        let inst = generate_instance(&GenConfig {
            params: ModelParams::with_stationary_variance(0.3, T::from_parts(0.4, -0.3), 0.2, 1.5, 0.0),
            n: 10,
            m: 6,
            t: 4,
            snr_db: Some(12.0),
            beta: 0.5,
            matrix_kind: MatrixKind::IidGaussianUnitColumns,
            seed,
        })
        .unwrap();
        let all: Vec<usize> = (0..10).collect();
        let full: Vec<FrameData<T>> = (0..4)
            .map(|t| FrameData::from_columns(&active_columns(inst.problem.operator(t), &all), inst.problem.observation(t)))
            .collect();
        let mut ws = EvidenceWorkspace::default();
        for pattern in [0usize, 1, 0b1010_0110, 0b11_1111_1111, 0b10_0000_0001] {
            let idx: Vec<usize> = (0..10).filter(|&i| pattern >> i & 1 == 1).collect();
            let sub: Vec<FrameData<T>> = full.iter().map(|f| f.restrict(&idx)).collect();
            let reference = chain_smoother(&sub, &inst.params, true);
            let ev = chain_log_evidence(&full, &idx, &inst.params, &mut ws).unwrap();
            assert!((ev - reference.log_evidence).abs() < 1e-9 * (1.0 + ev.abs()));
            let mut means = Vec::new();
            let ev2 = chain_smoothed_means(&full, &idx, &inst.params, &mut ws, &mut means).unwrap();
            assert_eq!(ev, ev2);
            let k = idx.len();
            assert_eq!(means.len(), 4 * k);
            for t in 0..4 {
                for j in 0..k {
                    assert!((means[t * k + j] - reference.means[t][j]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn flat_kernel_matches_the_smoother() {
        for seed in 0..4 {
            check::<f64>(seed);
            check::<Complex64>(seed);
        }
    }

    #[test]
    fn empty_support_evidence_is_pure_noise() {
        let y = DVector::from_vec(vec![0.3, -1.2, 0.5]);
        let a = DMatrix::<f64>::zeros(3, 0);
        let frames = vec![FrameData::from_columns(&a, &y)];
        let params = ModelParams::with_stationary_variance(0.3, 0.0, 0.5, 1.0, 0.7);
        let r = chain_smoother(&frames, &params, true);
        let expected = -0.5 * (y.norm_squared() / 0.7 + 3.0 * (2.0 * std::f64::consts::PI * 0.7).ln());
        assert!((r.log_evidence - expected).abs() < 1e-12);
    }
}
