//! Log marginal likelihood and its gradient with respect to every flat
//! parameter (kernel, coregionalization, mean network, encoder, noise).
//!
//! Observations are stacked output-major: entry `a * n + i` is output `a` at
//! training point `i`. The covariance of the stacked vector is
//! `sum_q B_q (x) K_q + noise * I`.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use super::kernel::Smoothness;
use super::layout::Layout;
use crate::nn::tanh_backward;
use crate::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

pub(crate) struct Evaluation {
    pub lml: f64,
    pub grad: Option<Vec<f64>>,
    /// Latent training inputs, `n x l`.
    pub z: Vec<f64>,
    /// Lower Cholesky factor of the training covariance (`n x n` for the
    /// shared-kernel flavors, `nm x nm` for LCM).
    pub factor: DMatrix<f64>,
    /// `K^-1 (y - mu)`, output-major.
    pub alpha: Vec<f64>,
}

/// Latent inputs divided elementwise by the lengthscales of one GP.
pub(crate) fn scaled(z: &[f64], lengthscales: &[f64]) -> Vec<f64> {
    let l = lengthscales.len();
    z.chunks(l)
        .flat_map(|row| row.iter().zip(lengthscales).map(|(v, s)| v / s))
        .collect()
}

#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn correlation(zs: &[f64], n: usize, l: usize, nu: Smoothness) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = nu.value(sq_dist(&zs[i * l..(i + 1) * l], &zs[j * l..(j + 1) * l]));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

pub(crate) fn lengthscales(layout: &Layout, p: &[f64], g: usize) -> Vec<f64> {
    let o = layout.log_lengthscale[g];
    p[o..o + layout.l].iter().map(|v| libm::exp(*v)).collect()
}

pub(crate) fn evaluate(
    layout: &Layout,
    p: &[f64],
    xs: &[f64],
    ys: &[f64],
    n: usize,
    floor: f64,
    nu: Smoothness,
    want_grad: bool,
) -> Result<Evaluation> {
    let (m, l, q) = (layout.m, layout.l, layout.q);
    let nm = n * m;
    let (hidden, z) = layout.encode(p, xs, n);
    let (u, mu) = layout.mean(p, &z, n);
    let noise = layout.noise_variance(p, floor);
    let coreg = layout.coregionalization(p);
    let ls: Vec<Vec<f64>> = (0..q).map(|g| lengthscales(layout, p, g)).collect();
    let corr: Vec<Vec<f64>> = ls
        .iter()
        .map(|s| correlation(&scaled(&z, s), n, l, nu))
        .collect();

    let mut resid = vec![0.0; nm];
    for i in 0..n {
        for a in 0..m {
            resid[a * n + i] = ys[i * m + a] - mu[i * m + a];
        }
    }

    let shared = layout.log_scale.is_some();
    let mut grad = want_grad.then(|| vec![0.0; layout.len]);
    // dL/dK_q for each latent GP, n x n.
    let mut dk: Vec<Vec<f64>> = Vec::new();
    let (lml, factor, alpha);

    if shared {
        let s2 = coreg[0][0];
        let c = DMatrix::from_fn(n, n, |i, k| s2 * corr[0][i * n + k] + if i == k { noise } else { 0.0 });
        let chol = c.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let r = DMatrix::from_fn(n, m, |i, a| resid[a * n + i]);
        let a_mat = chol.solve(&r);
        let log_det: f64 = (0..n).map(|i| libm::log(chol.l_dirty()[(i, i)])).sum();
        let quad: f64 = r.iter().zip(a_mat.iter()).map(|(x, y)| x * y).sum();
        lml = -0.5 * quad - m as f64 * log_det - 0.5 * nm as f64 * LN_2PI;
        alpha = a_mat.iter().copied().collect::<Vec<f64>>(); // column-major == output-major
        if let Some(g) = grad.as_mut() {
            let inv = chol.inverse();
            let mut gk = vec![0.0; n * n];
            let mut trace = 0.0;
            let mut dlog_scale = 0.0;
            for i in 0..n {
                for k in 0..n {
                    let outer: f64 = (0..m).map(|a| alpha[a * n + i] * alpha[a * n + k]).sum();
                    let gik = 0.5 * outer - 0.5 * m as f64 * inv[(i, k)];
                    if i == k {
                        trace += gik;
                    }
                    dlog_scale += gik * s2 * corr[0][i * n + k];
                    gk[i * n + k] = gik * s2;
                }
            }
            g[layout.noise_raw] += trace * (noise - floor);
            g[layout.log_scale.unwrap()] += dlog_scale;
            dk.push(gk);
        }
        factor = chol.unpack();
    } else {
        let big = DMatrix::from_fn(nm, nm, |r, c| {
            let (a, i) = (r / n, r % n);
            let (b, k) = (c / n, c % n);
            let mut v: f64 = (0..q).map(|g| coreg[g][a * m + b] * corr[g][i * n + k]).sum();
            if r == c {
                v += noise;
            }
            v
        });
        let chol = big.cholesky().ok_or(Error::NotPositiveDefinite)?;
        let r = DVector::from_vec(resid.clone());
        let a_vec = chol.solve(&r);
        let log_det: f64 = (0..nm).map(|i| libm::log(chol.l_dirty()[(i, i)])).sum();
        lml = -0.5 * r.dot(&a_vec) - log_det - 0.5 * nm as f64 * LN_2PI;
        alpha = a_vec.iter().copied().collect::<Vec<f64>>();
        if let Some(g) = grad.as_mut() {
            let inv = chol.inverse();
            // G = (alpha alpha^T - K^-1) / 2, symmetric.
            let gm = DMatrix::from_fn(nm, nm, |r, c| 0.5 * (alpha[r] * alpha[c] - inv[(r, c)]));
            g[layout.noise_raw] += gm.trace() * (noise - floor);
            for gp in 0..q {
                let mut gk = vec![0.0; n * n];
                let mut db = vec![0.0; m * m];
                for a in 0..m {
                    for b in 0..m {
                        let bab = coreg[gp][a * m + b];
                        let mut acc = 0.0;
                        for i in 0..n {
                            for k in 0..n {
                                let gv = gm[(a * n + i, b * n + k)];
                                gk[i * n + k] += gv * bab;
                                acc += gv * corr[gp][i * n + k];
                            }
                        }
                        db[a * m + b] = acc;
                    }
                }
                let mix = layout.mixing[gp];
                let kap = layout.log_kappa[gp];
                for a in 0..m {
                    let dw: f64 = (0..m).map(|b| (db[a * m + b] + db[b * m + a]) * p[mix + b]).sum();
                    g[mix + a] += dw;
                    g[kap + a] += db[a * m + a] * libm::exp(p[kap + a]);
                }
                dk.push(gk);
            }
        }
        factor = chol.unpack();
    }

    if let Some(g) = grad.as_mut() {
        let need_dz = layout.encoder.is_some();
        let mut dz = vec![0.0; n * l];
        for (gp, gk) in dk.iter().enumerate() {
            let s = &ls[gp];
            let o = layout.log_lengthscale[gp];
            for i in 0..n {
                for k in 0..i {
                    let zi = &z[i * l..(i + 1) * l];
                    let zk = &z[k * l..(k + 1) * l];
                    let r2: f64 = (0..l).map(|t| { let v = (zi[t] - zk[t]) / s[t]; v * v }).sum();
                    let (_, dr2) = nu.eval(r2);
                    let w = (gk[i * n + k] + gk[k * n + i]) * dr2;
                    if w == 0.0 {
                        continue;
                    }
                    for t in 0..l {
                        let delta = zi[t] - zk[t];
                        let inv2 = 1.0 / (s[t] * s[t]);
                        g[o + t] -= 2.0 * w * delta * delta * inv2;
                        if need_dz {
                            dz[i * l + t] += 2.0 * w * delta * inv2;
                            dz[k * l + t] -= 2.0 * w * delta * inv2;
                        }
                    }
                }
            }
        }
        if let Some((to_latent, to_outputs)) = &layout.mean {
            let k = to_latent.n_out;
            let mut dmu = vec![0.0; m];
            let mut du = vec![0.0; k];
            for i in 0..n {
                for a in 0..m {
                    dmu[a] = alpha[a * n + i];
                }
                du.iter_mut().for_each(|v| *v = 0.0);
                let ui = &u[i * k..(i + 1) * k];
                to_outputs.backward(p, ui, &dmu, g, Some(&mut du));
                tanh_backward(ui, &mut du);
                let zi = &z[i * l..(i + 1) * l];
                let dzi = if need_dz { Some(&mut dz[i * l..(i + 1) * l]) } else { None };
                to_latent.backward(p, zi, &du, g, dzi);
            }
        }
        if let Some((hid, out)) = &layout.encoder {
            let hw = hid.n_out;
            let mut dh = vec![0.0; hw];
            for i in 0..n {
                dh.iter_mut().for_each(|v| *v = 0.0);
                let hi = &hidden[i * hw..(i + 1) * hw];
                out.backward(p, hi, &dz[i * l..(i + 1) * l], g, Some(&mut dh));
                tanh_backward(hi, &mut dh);
                hid.backward(p, &xs[i * layout.d..(i + 1) * layout.d], &dh, g, None);
            }
        }
    }

    if !lml.is_finite() {
        return Err(Error::NotPositiveDefinite);
    }
    Ok(Evaluation {
        lml,
        grad,
        z,
        factor,
        alpha,
    })
}
