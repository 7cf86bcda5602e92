//! Test-only oracles. Nothing here calls into the closed forms it checks.

#![allow(dead_code)]

use nalgebra::{DMatrix, SymmetricEigen};

fn g(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (x + 1.0) * (x + 1.0).log2() - x * x.log2()
    }
}

/// Block-diagonal symplectic form for `n` modes in (x, p) ordering.
fn omega(n: usize) -> DMatrix<f64> {
    let mut w = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        w[(2 * i, 2 * i + 1)] = 1.0;
        w[(2 * i + 1, 2 * i)] = -1.0;
    }
    w
}

fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let d = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * d * e.eigenvectors.transpose()
}

/// Symplectic spectrum (ascending, one value per mode) from the
/// eigenvalues of `sqrt(s) W^T s W sqrt(s)`.
pub fn symplectic_spectrum(s: &DMatrix<f64>) -> Vec<f64> {
    let n = s.nrows() / 2;
    let w = omega(n);
    let r = sqrt_psd(s);
    let k = &r * w.transpose() * s * &w * &r;
    let k = (&k + k.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(k)
        .eigenvalues
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    ev.sort_by(|a, b| a.partial_cmp(b).unwrap());
    ev.chunks(2).map(|c| 0.5 * (c[0] + c[1])).collect()
}

pub fn von_neumann_bits(s: &DMatrix<f64>) -> f64 {
    symplectic_spectrum(s).iter().map(|nu| g((nu - 1.0) / 2.0)).sum()
}

fn two_mode_block(s: &mut DMatrix<f64>, i: usize, j: usize, vi: f64, vj: f64, c: f64) {
    for q in 0..2 {
        s[(2 * i + q, 2 * i + q)] = vi;
        s[(2 * j + q, 2 * j + q)] = vj;
    }
    s[(2 * i, 2 * j)] = c;
    s[(2 * j, 2 * i)] = c;
    s[(2 * i + 1, 2 * j + 1)] = -c;
    s[(2 * j + 1, 2 * i + 1)] = -c;
}

/// Entanglement-based picture with modes (A, B, F, G): Alice's EPR half,
/// Bob's mode after the channel, and the EPR pair modelling the trusted
/// detector noise. Returns the covariance after Bob's efficiency beam
/// splitter has mixed B with F.
pub fn trusted_detector_covariance(va: f64, t: f64, eps: f64, eta: f64, v_el: f64) -> DMatrix<f64> {
    let v = va + 1.0;
    let mut s = DMatrix::zeros(8, 8);
    two_mode_block(
        &mut s,
        0,
        1,
        v,
        t * (v - 1.0) + 1.0 + t * eps,
        (t * (v * v - 1.0)).sqrt(),
    );
    let nv = if eta < 1.0 { 1.0 + v_el / (1.0 - eta) } else { 1.0 };
    two_mode_block(&mut s, 2, 3, nv, nv, (nv * nv - 1.0).max(0.0).sqrt());

    let mut bs = DMatrix::identity(8, 8);
    let (ce, se) = (eta.sqrt(), (1.0 - eta).sqrt());
    for q in 0..2 {
        let (b, f) = (2 + q, 4 + q);
        bs[(b, b)] = ce;
        bs[(b, f)] = se;
        bs[(f, b)] = -se;
        bs[(f, f)] = ce;
    }
    &bs * s * bs.transpose()
}

/// `S(AB) - S(A F G | x_B)` from the assembled covariance.
pub fn holevo_from_covariance(va: f64, t: f64, eps: f64, eta: f64, v_el: f64) -> f64 {
    let v = va + 1.0;
    // Eve purifies AB before detection
    let mut ab = DMatrix::zeros(4, 4);
    two_mode_block(
        &mut ab,
        0,
        1,
        v,
        t * (v - 1.0) + 1.0 + t * eps,
        (t * (v * v - 1.0)).sqrt(),
    );
    let s_ab = von_neumann_bits(&ab);

    let full = trusted_detector_covariance(va, t, eps, eta, v_el);
    let rest: Vec<usize> = vec![0, 1, 4, 5, 6, 7];
    let xb = 2;
    let sigma_r = DMatrix::from_fn(6, 6, |i, j| full[(rest[i], rest[j])]);
    let c = DMatrix::from_fn(6, 1, |i, _| full[(rest[i], xb)]);
    let cond = sigma_r - &c * c.transpose() / full[(xb, xb)];
    s_ab - von_neumann_bits(&cond)
}

/// Joint and conditional symplectic spectra, for comparing eigenvalues
/// one by one.
pub fn spectra(va: f64, t: f64, eps: f64, eta: f64, v_el: f64) -> (Vec<f64>, Vec<f64>) {
    let v = va + 1.0;
    let mut ab = DMatrix::zeros(4, 4);
    two_mode_block(
        &mut ab,
        0,
        1,
        v,
        t * (v - 1.0) + 1.0 + t * eps,
        (t * (v * v - 1.0)).sqrt(),
    );
    let full = trusted_detector_covariance(va, t, eps, eta, v_el);
    let rest: Vec<usize> = vec![0, 1, 4, 5, 6, 7];
    let sigma_r = DMatrix::from_fn(6, 6, |i, j| full[(rest[i], rest[j])]);
    let c = DMatrix::from_fn(6, 1, |i, _| full[(rest[i], 2)]);
    let cond = sigma_r - &c * c.transpose() / full[(2, 2)];
    (symplectic_spectrum(&ab), symplectic_spectrum(&cond))
}

/// Mutual information between Alice's modulation value and Bob's outcome
/// from the prepare-and-measure 2x2 covariance.
pub fn mutual_information_from_covariance(va: f64, t: f64, eps: f64, eta: f64, v_el: f64) -> f64 {
    let gain2 = eta * t;
    // Bob: sqrt(eta T) x_A + shot noise through loss, excess noise,
    // detector vacuum and electronic noise
    let noise = eta * (t + (1.0 - t) + t * eps) + (1.0 - eta) + v_el;
    let vb = gain2 * va + noise;
    let cov = gain2.sqrt() * va;
    let det = va * vb - cov * cov;
    0.5 * (va * vb / det).log2()
}

/// Histogram estimate of the differential entropy in bits.
pub fn histogram_entropy_bits(samples: &[f64], bin_width: f64) -> f64 {
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut counts = std::collections::HashMap::new();
    for &x in samples {
        *counts.entry(((x - lo) / bin_width).floor() as i64).or_insert(0u64) += 1;
    }
    let n = samples.len() as f64;
    counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * (p / bin_width).log2()
        })
        .sum()
}
