//! Finite-blocklength link math: channel generation, SINR, dispersion and
//! rate, the MMSE receive beamformer, and the per-instance constants of the
//! power-allocation problem.
//!
//! Complex channels stay outside the autodiff tape. Everything the tape needs
//! from them (SINR gain coefficients, adjacency entries) is reduced to real
//! constants first.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, Var};
use crate::proj::OptVector;
use crate::{Error, Result};

pub type C64 = Complex64;

/// Row-major complex matrix, used for channel and beamformer blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct CMat {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMat {
    pub fn new(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Contract(format!(
                "CMat {rows}x{cols} wants {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(CMat { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMat {
            rows,
            cols,
            data: vec![C64::new(0.0, 0.0); rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[C64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [C64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn data(&self) -> &[C64] {
        &self.data
    }

    /// Rows reordered so that output row `j` is input row `perm[j]`.
    pub fn permute_rows(&self, perm: &[usize]) -> CMat {
        assert_eq!(perm.len(), self.rows);
        let mut out = CMat::zeros(self.rows, self.cols);
        for (j, &src) in perm.iter().enumerate() {
            out.row_mut(j).copy_from_slice(self.row(src));
        }
        out
    }
}

/// System constants of one downlink configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    /// Number of user terminals.
    pub k: usize,
    /// Number of transmit antennas.
    pub n_t: usize,
    /// Total power budget (linear scale).
    pub p_max: f64,
    /// Per-user noise standard deviation (shared by all users).
    pub noise_std: f64,
    /// Blocklength in symbols.
    pub blocklength: u32,
    /// Payload in bits.
    pub payload_bits: f64,
    /// Target decoding error probability.
    pub err_prob: f64,
    /// Per-user weights, length `k`.
    pub weights: Vec<f64>,
}

impl SystemParams {
    /// Uniform-weight configuration with the power budget given as an SNR in
    /// dB relative to unit noise power.
    pub fn from_snr_db(
        k: usize,
        n_t: usize,
        snr_db: f64,
        blocklength: u32,
        payload_bits: f64,
        err_prob: f64,
    ) -> Result<Self> {
        let sys = SystemParams {
            k,
            n_t,
            p_max: 10f64.powf(snr_db / 10.0),
            noise_std: 1.0,
            blocklength,
            payload_bits,
            err_prob,
            weights: vec![1.0 / k as f64; k],
        };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.n_t == 0 {
            return Err(Error::Contract("k and n_t must be >= 1".into()));
        }
        if !(self.p_max > 0.0) || !(self.noise_std > 0.0) {
            return Err(Error::Contract("p_max and noise_std must be > 0".into()));
        }
        if !(self.err_prob > 0.0 && self.err_prob < 0.5) {
            return Err(Error::Contract("err_prob must lie in (0, 0.5)".into()));
        }
        if self.blocklength == 0 {
            return Err(Error::Contract("blocklength must be >= 1".into()));
        }
        if self.payload_bits < 0.0 {
            return Err(Error::Contract("payload_bits must be >= 0".into()));
        }
        if self.weights.len() != self.k || self.weights.iter().any(|&a| a < 0.0) {
            return Err(Error::Contract(
                "weights must be nonnegative with one entry per user".into(),
            ));
        }
        Ok(())
    }

    /// Dispersion penalty coefficient `Q^{-1}(err_prob) / sqrt(n)`.
    pub fn theta_coeff(&self) -> Result<f64> {
        Ok(qfunc_inv(self.err_prob)? / (self.blocklength as f64).sqrt())
    }

    /// Per-symbol rate target `(D / n) ln 2` in nats.
    pub fn rate_target(&self) -> f64 {
        self.payload_bits / self.blocklength as f64 * std::f64::consts::LN_2
    }
}

/// Cell geometry for user placement and path loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    /// Reference distance for the path-loss knee (meters).
    pub d0: f64,
    /// Path-loss (fading) exponent.
    pub path_loss_exp: f64,
    /// Minimum base-station-to-user distance (meters).
    pub d_min: f64,
    /// Cell radius (meters).
    pub d_max: f64,
}

impl Geometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.d0 > 0.0) {
            return Err(Error::Contract("d0 must be > 0".into()));
        }
        if !(self.d_min > 0.0 && self.d_min <= self.d_max) {
            return Err(Error::Contract("need 0 < d_min <= d_max".into()));
        }
        Ok(())
    }
}

/// One problem instance: channel rows `h_k^H` plus the system constants and
/// the seed that generated it.
#[derive(Clone, Debug, PartialEq)]
pub struct Realization {
    pub h: CMat,
    pub sys: SystemParams,
    pub seed: u64,
}

impl Realization {
    /// Noise-normalized channel row `h_k / sigma`.
    pub fn hbar_row(&self, k: usize) -> Vec<C64> {
        let s = 1.0 / self.sys.noise_std;
        self.h.row(k).iter().map(|&c| c * s).collect()
    }

    /// All users permuted: output row `j` is user `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Realization {
        let mut sys = self.sys.clone();
        sys.weights = perm.iter().map(|&s| self.sys.weights[s]).collect();
        Realization {
            h: self.h.permute_rows(perm),
            sys,
            seed: self.seed,
        }
    }
}

/// Unit-norm receive/transmit beamformer rows, one per user.
#[derive(Clone, Debug, PartialEq)]
pub struct Beamformers {
    pub w: CMat,
}

impl Beamformers {
    /// Checks every row has Euclidean norm 1 within `tol`.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.w.rows())
            .map(|k| {
                let n: f64 = self.w.row(k).iter().map(|c| c.norm_sqr()).sum();
                (n.sqrt() - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    pub fn permute(&self, perm: &[usize]) -> Beamformers {
        Beamformers {
            w: self.w.permute_rows(perm),
        }
    }
}

// --- Gaussian tail function and its inverse ---------------------------------

const FRAC_2_SQRT_PI: f64 = 1.1283791670955126;

/// Complementary error function, accurate to near machine precision.
///
/// Series with all-positive terms below the crossover, Lentz continued
/// fraction above it.
fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x < 2.0 {
        // erf(x) = 2x e^{-x^2}/sqrt(pi) * sum_n (2x^2)^n / (1*3*...*(2n+1)),
        // an all-positive series, so no cancellation below the crossover.
        let x2 = x * x;
        let mut term = 1.0;
        let mut sum = 1.0;
        let mut n = 1.0;
        loop {
            term *= 2.0 * x2 / (2.0 * n + 1.0);
            sum += term;
            n += 1.0;
            if term < sum * 1e-18 || n > 200.0 {
                break;
            }
        }
        1.0 - FRAC_2_SQRT_PI * x * (-x2).exp() * sum
    } else {
        // erfc(x) = e^{-x^2}/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
        // evaluated by the modified Lentz method.
        let tiny = 1e-300;
        let mut f = x;
        let mut c = f;
        let mut d = 0.0;
        for i in 1..300 {
            let a = 0.5 * i as f64;
            d = x + a * d;
            if d == 0.0 {
                d = tiny;
            }
            c = x + a / c;
            if c == 0.0 {
                c = tiny;
            }
            d = 1.0 / d;
            let delta = c * d;
            f *= delta;
            if (delta - 1.0).abs() < 1e-17 {
                break;
            }
        }
        (-x * x).exp() / (std::f64::consts::PI.sqrt() * f)
    }
}

/// Gaussian tail probability `Q(z) = P(N(0,1) > z)`.
pub fn qfunc(z: f64) -> f64 {
    0.5 * erfc(z / std::f64::consts::SQRT_2)
}

/// Inverse Gaussian tail function: the `z` with `Q(z) = p`.
pub fn qfunc_inv(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::Domain(format!("qfunc_inv needs p in (0,1), got {p}")));
    }
    if p == 0.5 {
        return Ok(0.0);
    }
    if p > 0.5 {
        return Ok(-qfunc_inv(1.0 - p)?);
    }
    // Q is strictly decreasing; bracket on [0, hi] then bisect.
    let mut lo = 0.0f64;
    let mut hi = 1.0f64;
    while qfunc(hi) > p {
        hi *= 2.0;
        if hi > 1e3 {
            return Err(Error::Numeric {
                node: 0,
                msg: format!("qfunc_inv bracket failed for p = {p}"),
            });
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if qfunc(mid) > p {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * hi.max(1.0) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

// --- Rate model --------------------------------------------------------------

/// Channel dispersion `V(gamma) = 1 - (1 + gamma)^{-2}`, in `[0, 1)`.
pub fn dispersion(gamma: f64) -> Result<f64> {
    if gamma < 0.0 {
        return Err(Error::Domain(format!("dispersion needs gamma >= 0, got {gamma}")));
    }
    let u = 1.0 + gamma;
    Ok(1.0 - 1.0 / (u * u))
}

/// Finite-blocklength rate `ln(1 + gamma) - theta * sqrt(V(gamma))` in
/// nats per symbol.
pub fn fbl_rate(gamma: f64, theta: f64) -> Result<f64> {
    Ok((1.0 + gamma).ln() - theta * dispersion(gamma)?.sqrt())
}

fn fbl_rate_derivative(gamma: f64, theta: f64) -> f64 {
    let u = 1.0 + gamma;
    let mut d = 1.0 / u;
    if theta != 0.0 {
        let v = 1.0 - 1.0 / (u * u);
        if v > 0.0 {
            // V'(gamma) = 2 / (1 + gamma)^3
            d -= theta * (1.0 / (u * u * u)) / v.sqrt();
        }
    }
    d
}

/// Smallest SINR on the increasing branch of the rate curve at which the
/// per-user rate target is met.
pub fn nu3(sys: &SystemParams) -> Result<f64> {
    nu3_with(sys.theta_coeff()?, sys.rate_target())
}

/// Root solve behind [`nu3`] for an explicit penalty coefficient and target.
pub fn nu3_with(theta: f64, target: f64) -> Result<f64> {
    let rate = |g: f64| fbl_rate(g, theta).expect("gamma >= 0 on scan");

    // Coarse geometric scan to locate the interior minimum, then the first
    // point at or above the target on the increasing branch.
    let mut grid = vec![0.0f64];
    let mut g = 1e-8;
    while g <= 1e9 {
        grid.push(g);
        g *= 1.15;
    }
    let mut min_idx = 0;
    let mut min_val = f64::INFINITY;
    for (i, &gv) in grid.iter().enumerate() {
        let r = rate(gv);
        if r < min_val {
            min_val = r;
            min_idx = i;
        }
    }
    let mut bracket = None;
    for i in min_idx..grid.len() {
        if rate(grid[i]) >= target {
            bracket = Some((if i == 0 { 0.0 } else { grid[i - 1] }, grid[i]));
            break;
        }
    }
    let (mut lo, mut hi) = bracket.ok_or_else(|| {
        Error::Infeasible(format!(
            "rate target {target:.6} unreachable (max scanned rate {:.6})",
            rate(1e9)
        ))
    })?;

    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo < 1e-13 * hi.max(1.0) {
            break;
        }
    }
    // Newton polish for machine-precision residual.
    let mut root = 0.5 * (lo + hi);
    for _ in 0..4 {
        let d = fbl_rate_derivative(root, theta);
        if d <= 0.0 {
            break;
        }
        let next = root - (rate(root) - target) / d;
        if next.is_finite() && next >= lo - (hi - lo) && next <= hi + (hi - lo) && next >= 0.0 {
            root = next;
        } else {
            break;
        }
    }
    let residual = (rate(root) - target).abs();
    if residual > 1e-10 {
        return Err(Error::Numeric {
            node: 0,
            msg: format!("nu3 residual {residual:e} exceeds 1e-10"),
        });
    }
    Ok(root)
}

/// Per-user full-power SNR bound `P * ||h_k||^2 / sigma^2`.
pub fn gamma_tilde(real: &Realization) -> Vec<f64> {
    let s2 = real.sys.noise_std * real.sys.noise_std;
    (0..real.sys.k)
        .map(|k| {
            let n: f64 = real.h.row(k).iter().map(|c| c.norm_sqr()).sum();
            real.sys.p_max * n / s2
        })
        .collect()
}

// --- SINR and beamforming ----------------------------------------------------

/// Cross-gain matrix `a[l][k] = |hbar_l^H w_k|^2`, the real constants the
/// SINR needs from the complex domain.
pub fn sinr_gains(real: &Realization, w: &Beamformers) -> Tensor {
    let k = real.sys.k;
    let mut data = vec![0.0; k * k];
    for l in 0..k {
        let hl = real.hbar_row(l);
        for j in 0..k {
            let dot: C64 = hl
                .iter()
                .zip(w.w.row(j))
                .map(|(&h, &wv)| h.conj() * wv)
                .sum();
            data[l * k + j] = dot.norm_sqr();
        }
    }
    Tensor::matrix(k, k, data).expect("square by construction")
}

/// Uplink-dual SINR per user for powers `q` and beamformers `w`.
pub fn sinr(q: &[f64], w: &Beamformers, real: &Realization) -> Vec<f64> {
    let gains = sinr_gains(real, w);
    sinr_from_gains(q, &gains)
}

/// SINR evaluated from a precomputed gain matrix.
pub fn sinr_from_gains(q: &[f64], gains: &Tensor) -> Vec<f64> {
    let k = gains.shape()[0];
    (0..k)
        .map(|j| {
            let own = q[j] * gains.data()[j * k + j];
            let mut interference = 0.0;
            for l in 0..k {
                if l != j {
                    interference += q[l] * gains.data()[l * k + j];
                }
            }
            own / (interference + 1.0)
        })
        .collect()
}

/// SINR as tape nodes, differentiable with respect to the power vector.
pub fn sinr_tape(tape: &mut Tape, q: Var, gains: &Tensor) -> Var {
    let k = gains.shape()[0];
    let diag = Tensor::from_vec((0..k).map(|j| gains.data()[j * k + j]).collect());
    let diag = tape.leaf(diag);
    let numer = tape.mul(q, diag);
    let gains_leaf = tape.leaf(gains.clone());
    let q_row = tape.reshape(q, vec![1, k]);
    let total = tape.matmul(q_row, gains_leaf);
    let total = tape.reshape(total, vec![k]);
    let interference = tape.sub(total, numer);
    let denom = tape.add_const(interference, 1.0);
    tape.div(numer, denom)
}

/// MMSE receive beamformer rows, unit-normalized.
pub fn mmse_beamformer(q: &[f64], real: &Realization) -> Result<Beamformers> {
    let (k, n_t) = (real.sys.k, real.sys.n_t);
    if q.len() != k {
        return Err(Error::Contract(format!("expected {k} powers, got {}", q.len())));
    }
    if let Some(bad) = q.iter().find(|&&v| v < 0.0) {
        return Err(Error::Contract(format!("negative power {bad} in mmse input")));
    }
    // B = I + sum_l q_l hbar_l hbar_l^H
    let mut b = CMat::zeros(n_t, n_t);
    for i in 0..n_t {
        b.row_mut(i)[i] = C64::new(1.0, 0.0);
    }
    for l in 0..k {
        let hl = real.hbar_row(l);
        for i in 0..n_t {
            let hi = hl[i];
            for j in 0..n_t {
                b.row_mut(i)[j] += q[l] * hi * hl[j].conj();
            }
        }
    }
    let chol = cholesky(&b)?;
    let mut w = CMat::zeros(k, n_t);
    for kk in 0..k {
        let rhs = real.hbar_row(kk);
        let sol = chol_solve(&chol, &rhs);
        let norm: f64 = sol.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        if norm < 1e-300 {
            return Err(Error::Numeric {
                node: kk,
                msg: "beamformer norm underflow".into(),
            });
        }
        for (dst, &s) in w.row_mut(kk).iter_mut().zip(&sol) {
            *dst = s / norm;
        }
    }
    Ok(Beamformers { w })
}

/// Lower-triangular Cholesky factor of a Hermitian positive-definite matrix.
fn cholesky(a: &CMat) -> Result<CMat> {
    let n = a.rows();
    let mut l = CMat::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a.row(i)[j];
            for p in 0..j {
                s -= l.row(i)[p] * l.row(j)[p].conj();
            }
            if i == j {
                let d = s.re;
                if d <= 0.0 || s.im.abs() > 1e-9 * d.abs().max(1.0) {
                    return Err(Error::Numeric {
                        node: i,
                        msg: "matrix not positive definite".into(),
                    });
                }
                l.row_mut(i)[j] = C64::new(d.sqrt(), 0.0);
            } else {
                l.row_mut(i)[j] = s / l.row(j)[j];
            }
        }
    }
    Ok(l)
}

/// Solves `L L^H x = b` given the Cholesky factor.
fn chol_solve(l: &CMat, b: &[C64]) -> Vec<C64> {
    let n = l.rows();
    let mut y = b.to_vec();
    for i in 0..n {
        for j in 0..i {
            let lij = l.row(i)[j];
            let yj = y[j];
            y[i] -= lij * yj;
        }
        y[i] /= l.row(i)[i];
    }
    for i in (0..n).rev() {
        for j in (i + 1)..n {
            let lji = l.row(j)[i].conj();
            let yj = y[j];
            y[i] -= lji * yj;
        }
        y[i] /= l.row(i)[i];
    }
    y
}

// --- Channel generation --------------------------------------------------------

/// Draws one channel realization. Deterministic per seed: distances first
/// (area-uniform radii over the annulus), then channel rows in user order.
pub fn channel_gen(seed: u64, sys: &SystemParams, geo: &Geometry) -> Result<Realization> {
    sys.validate()?;
    geo.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rho = Vec::with_capacity(sys.k);
    for _ in 0..sys.k {
        let u: f64 = rng.gen();
        let d2 = geo.d_min * geo.d_min + u * (geo.d_max * geo.d_max - geo.d_min * geo.d_min);
        let d = d2.sqrt();
        rho.push(1.0 / (1.0 + (d / geo.d0).powf(geo.path_loss_exp)));
    }
    let mut h = CMat::zeros(sys.k, sys.n_t);
    for k in 0..sys.k {
        let amp = rho[k].sqrt();
        for j in 0..sys.n_t {
            let (z0, z1) = standard_normal_pair(&mut rng);
            // CN(0,1): independent real/imag parts with variance 1/2.
            h.row_mut(k)[j] = C64::new(z0, z1) * std::f64::consts::FRAC_1_SQRT_2 * amp;
        }
    }
    Ok(Realization {
        h,
        sys: sys.clone(),
        seed,
    })
}

fn standard_normal_pair(rng: &mut impl Rng) -> (f64, f64) {
    let u1: f64 = 1.0 - rng.gen::<f64>(); // (0, 1]
    let u2: f64 = rng.gen();
    let r = (-2.0 * u1.ln()).sqrt();
    let a = 2.0 * std::f64::consts::PI * u2;
    (r * a.cos(), r * a.sin())
}

// --- Objective ----------------------------------------------------------------

/// Weighted sum rate surrogate `sum_k alpha_k (ln(1 + phi_k) - theta * t_k)`
/// over the rate-bound and dispersion-root blocks of `x`.
pub fn wsr(x: &OptVector, sys: &SystemParams) -> Result<f64> {
    let theta = sys.theta_coeff()?;
    let mut total = 0.0;
    for k in 0..sys.k {
        let phi = x.sinr_lb()[k];
        if phi <= -1.0 {
            return Err(Error::Domain(format!("ln(1 + phi) undefined for phi = {phi}")));
        }
        total += sys.weights[k] * ((1.0 + phi).ln() - theta * x.disp_root()[k]);
    }
    Ok(total)
}

/// Tape version of [`wsr`] over the rate-bound block `phi` and the
/// dispersion-root block `t`.
pub fn wsr_tape(tape: &mut Tape, phi: Var, t: Var, sys: &SystemParams) -> Result<Var> {
    let theta = sys.theta_coeff()?;
    let alpha = tape.leaf(Tensor::from_vec(sys.weights.clone()));
    let alpha_theta = tape.leaf(Tensor::from_vec(
        sys.weights.iter().map(|a| a * theta).collect(),
    ));
    let shifted = tape.add_const(phi, 1.0);
    let logs = tape.ln(shifted);
    let weighted = tape.mul(logs, alpha);
    let s1 = tape.sum(weighted);
    let penalty = tape.mul(t, alpha_theta);
    let s2 = tape.sum(penalty);
    Ok(tape.sub(s1, s2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn test_sys(k: usize, n_t: usize) -> SystemParams {
        SystemParams::from_snr_db(k, n_t, 15.0, 128, 256.0, 1e-5).unwrap()
    }

    #[test]
    fn qfunc_inv_median_is_zero() {
        assert_eq!(qfunc_inv(0.5).unwrap(), 0.0);
    }

    #[test]
    fn qfunc_inv_symmetry() {
        let a = qfunc_inv(0.9).unwrap();
        let b = qfunc_inv(0.1).unwrap();
        assert!((a + b).abs() < 1e-12, "{a} vs {b}");
    }

    #[test]
    fn qfunc_inv_tail_value() {
        // High-precision reference for Q^{-1}(1e-5).
        let z = qfunc_inv(1e-5).unwrap();
        assert!((z - 4.264890793922825).abs() < 1e-9, "{z}");
    }

    #[test]
    fn qfunc_inv_residuals_are_tight() {
        for &p in &[1e-9, 1e-5, 1e-3, 0.1, 0.25, 0.4999, 0.7, 0.999] {
            let z = qfunc_inv(p).unwrap();
            assert!((qfunc(z) - p).abs() <= 1e-10, "p = {p}");
        }
    }

    #[test]
    fn qfunc_inv_rejects_out_of_domain() {
        assert!(qfunc_inv(0.0).is_err());
        assert!(qfunc_inv(1.0).is_err());
        assert!(qfunc_inv(-0.1).is_err());
    }

    #[test]
    fn dispersion_known_points() {
        assert_eq!(dispersion(0.0).unwrap(), 0.0);
        assert!((dispersion(1.0).unwrap() - 0.75).abs() < 1e-15);
        assert!((dispersion(3.0).unwrap() - 0.9375).abs() < 1e-15);
        assert!(dispersion(-0.5).is_err());
    }

    #[test]
    fn dispersion_monotone_and_bounded() {
        let mut prev = -1.0;
        let mut g = 0.0;
        while g < 1e6 {
            let v = dispersion(g).unwrap();
            assert!(v > prev && (0.0..1.0).contains(&v));
            prev = v;
            g = g * 1.7 + 0.01;
        }
    }

    #[test]
    fn rate_at_zero_gamma_is_zero() {
        assert_eq!(fbl_rate(0.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn rate_without_penalty_is_shannon() {
        let g = std::f64::consts::E - 1.0;
        assert!((fbl_rate(g, 0.0).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rate_composes_with_qfunc_inv() {
        let theta = qfunc_inv(1e-5).unwrap() / 128f64.sqrt();
        let r = fbl_rate(3.0, theta).unwrap();
        let expect = 4f64.ln() - theta * 0.9375f64.sqrt();
        assert!((r - expect).abs() < 1e-14);
    }

    #[test]
    fn nu3_closed_form_when_theta_zero() {
        // With no dispersion penalty the root is 2^(D/n) - 1 exactly.
        let root = nu3_with(0.0, std::f64::consts::LN_2).unwrap();
        assert!((root - 1.0).abs() < 1e-12, "{root}");
        let root = nu3_with(0.0, 2.0 * std::f64::consts::LN_2).unwrap();
        assert!((root - 3.0).abs() < 1e-12, "{root}");
        for dn in [0.25f64, 0.5, 1.5, 3.0] {
            let root = nu3_with(0.0, dn * std::f64::consts::LN_2).unwrap();
            let closed = 2f64.powf(dn) - 1.0;
            assert!((root - closed).abs() < 1e-12, "D/n = {dn}: {root} vs {closed}");
        }
    }

    #[test]
    fn nu3_meets_target_residual() {
        let sys = test_sys(2, 4); // D = 256, n = 128, eps = 1e-5
        let root = nu3(&sys).unwrap();
        let theta = sys.theta_coeff().unwrap();
        let residual = (fbl_rate(root, theta).unwrap() - sys.rate_target()).abs();
        assert!(residual <= 1e-10, "residual {residual:e}");
        // Reference root from a high-precision offline solve.
        assert!((root - 4.798579664249887).abs() < 1e-8, "{root}");
    }

    #[test]
    fn nu3_unreachable_target_errors() {
        let mut sys = test_sys(1, 1);
        sys.payload_bits = 1e9;
        assert!(matches!(nu3(&sys), Err(Error::Infeasible(_))));
    }

    #[test]
    fn gamma_tilde_matches_direct_computation() {
        let sys = test_sys(3, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let real = channel_gen(42, &sys, &geo).unwrap();
        let gt = gamma_tilde(&real);
        for k in 0..3 {
            let n: f64 = real.h.row(k).iter().map(|c| c.norm_sqr()).sum();
            let expect = sys.p_max * n / (sys.noise_std * sys.noise_std);
            assert!((gt[k] - expect).abs() < 1e-12 * expect.max(1.0));
        }
        // p_max = 0 forces all-zero bounds.
        let mut real0 = real.clone();
        real0.sys.p_max = 0.0;
        assert!(gamma_tilde(&real0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sinr_single_user_has_no_interference() {
        let sys = test_sys(1, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let real = channel_gen(7, &sys, &geo).unwrap();
        let w = mmse_beamformer(&[0.0], &real).unwrap();
        let q = 2.5;
        let got = sinr(&[q], &w, &real)[0];
        let hn: f64 = real.hbar_row(0).iter().map(|c| c.norm_sqr()).sum();
        assert!((got - q * hn).abs() < 1e-10 * (1.0 + q * hn));
    }

    #[test]
    fn sinr_orthogonal_matched_filters_decouple() {
        // Two orthogonal channels with matched-filter rows: cross terms vanish.
        let sys = test_sys(2, 2);
        let h = CMat::new(
            2,
            2,
            vec![
                C64::new(2.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 3.0),
            ],
        )
        .unwrap();
        let real = Realization {
            h,
            sys,
            seed: 0,
        };
        let w = CMat::new(
            2,
            2,
            vec![
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 0.0),
                C64::new(0.0, 1.0),
            ],
        )
        .unwrap();
        let w = Beamformers { w };
        let q = [1.5, 0.75];
        let got = sinr(&q, &w, &real);
        assert!((got[0] - q[0] * 4.0).abs() < 1e-12);
        assert!((got[1] - q[1] * 9.0).abs() < 1e-12);
    }

    #[test]
    fn sinr_phase_rotation_invariance() {
        let sys = test_sys(3, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let mut real = channel_gen(11, &sys, &geo).unwrap();
        let w = mmse_beamformer(&[1.0, 2.0, 0.5], &real).unwrap();
        let q = [1.0, 2.0, 0.5];
        let base = sinr(&q, &w, &real);
        let phase = C64::from_polar(1.0, 1.234);
        for v in real.h.row_mut(1) {
            *v *= phase;
        }
        let rotated = sinr(&q, &w, &real);
        for (a, b) in base.iter().zip(&rotated) {
            assert!((a - b).abs() < 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn mmse_single_user_is_matched_filter() {
        let sys = test_sys(1, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let real = channel_gen(5, &sys, &geo).unwrap();
        for q in [0.0, 1.0, 17.5] {
            let w = mmse_beamformer(&[q], &real).unwrap();
            let h = real.hbar_row(0);
            let hn: f64 = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            // Same direction up to a global complex scalar of modulus 1: check
            // |<w, h/||h||>| = 1.
            let dot: C64 = h
                .iter()
                .zip(w.w.row(0))
                .map(|(&hv, &wv)| hv.conj() * wv)
                .sum();
            assert!((dot.norm() / hn - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn mmse_zero_power_returns_normalized_channels() {
        let sys = test_sys(3, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let real = channel_gen(9, &sys, &geo).unwrap();
        let w = mmse_beamformer(&[0.0, 0.0, 0.0], &real).unwrap();
        for k in 0..3 {
            let h = real.hbar_row(k);
            let hn: f64 = h.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
            for (a, &b) in w.w.row(k).iter().zip(&h) {
                assert!((a - b / hn).norm() < 1e-12);
            }
        }
        assert!(w.max_norm_deviation() < 1e-12);
    }

    #[test]
    fn mmse_rejects_negative_power() {
        let sys = test_sys(2, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let real = channel_gen(3, &sys, &geo).unwrap();
        assert!(matches!(
            mmse_beamformer(&[1.0, -0.5], &real),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mmse_rows_stay_unit_norm() {
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let sys = test_sys(4, 8);
        for seed in 0..1000 {
            let real = channel_gen(seed, &sys, &geo).unwrap();
            let q: Vec<f64> = (0..4).map(|i| (seed % 7 + i) as f64 * 0.37).collect();
            let w = mmse_beamformer(&q, &real).unwrap();
            assert!(w.max_norm_deviation() < 1e-12, "seed {seed}");
        }
    }

    #[test]
    fn channel_power_at_reference_distance() {
        // (d/d0)^rho = 1 at the reference distance, so the channel power
        // factor is exactly one half; exponent zero gives the same value.
        let rho = |d: f64, d0: f64, e: f64| 1.0 / (1.0 + (d / d0).powf(e));
        assert_eq!(rho(50.0, 50.0, 3.0), 0.5);
        assert_eq!(rho(123.0, 50.0, 0.0), 0.5);
    }

    #[test]
    fn channel_gen_is_reproducible() {
        let sys = test_sys(3, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 3.0,
            d_min: 120.0,
            d_max: 140.0,
        };
        let a = channel_gen(1234, &sys, &geo).unwrap();
        let b = channel_gen(1234, &sys, &geo).unwrap();
        assert_eq!(a, b);
        let c = channel_gen(1235, &sys, &geo).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn channel_gen_second_moment() {
        // Mean of ||h_tilde||^2 over many draws should approach n_t.
        let sys = test_sys(1, 4);
        let geo = Geometry {
            d0: 50.0,
            path_loss_exp: 0.0, // rho = 0.5 regardless of distance
            d_min: 120.0,
            d_max: 140.0,
        };
        let mut acc = 0.0;
        let n = 10_000;
        for seed in 0..n {
            let real = channel_gen(seed, &sys, &geo).unwrap();
            let p: f64 = real.h.row(0).iter().map(|c| c.norm_sqr()).sum();
            acc += p / 0.5; // divide out the path-loss factor
        }
        let mean = acc / n as f64;
        let rel = (mean - sys.n_t as f64).abs() / sys.n_t as f64;
        assert!(rel < 0.03, "mean {mean}");
    }

    #[test]
    fn wsr_known_values() {
        let mut sys = test_sys(1, 2);
        sys.weights = vec![1.0];
        let theta = sys.theta_coeff().unwrap();
        let mut x = OptVector::zeros(1);
        x.sinr_lb_mut()[0] = std::f64::consts::E - 1.0;
        x.disp_root_mut()[0] = 0.0;
        assert!((wsr(&x, &sys).unwrap() - 1.0).abs() < 1e-12);

        x.sinr_lb_mut()[0] = 0.0;
        assert_eq!(wsr(&x, &sys).unwrap(), 0.0);

        x.sinr_lb_mut()[0] = -1.5;
        assert!(matches!(wsr(&x, &sys), Err(Error::Domain(_))));

        x.sinr_lb_mut()[0] = 0.5;
        x.disp_root_mut()[0] = 2.0;
        let expect = 1.5f64.ln() - theta * 2.0;
        assert!((wsr(&x, &sys).unwrap() - expect).abs() < 1e-12);
    }
}
