//! Observation model: cyclic masking of a signal at a random start location
//! drawn from a categorical PMF, plus white Gaussian noise.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg, Result};
use crate::linalg::softmax_into;
use crate::relaxation::gumbel_sample;
use crate::rng::Streams;

/// The unknown length-`d` signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    values: Vec<f64>,
}

impl Signal {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return arg("signal must have length >= 1");
        }
        if values.iter().any(|v| !v.is_finite()) {
            return arg("signal entries must be finite");
        }
        Ok(Self { values })
    }

    pub fn d(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
}

/// Categorical distribution over the `d` segment start locations, stored as
/// logits so that it always lies strictly inside the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentPmf {
    logits: Vec<f64>,
}

impl SegmentPmf {
    pub fn from_logits(logits: Vec<f64>) -> Result<Self> {
        if logits.is_empty() {
            return arg("pmf must have length >= 1");
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return arg("pmf logits must be finite");
        }
        Ok(Self { logits })
    }

    pub fn uniform(d: usize) -> Result<Self> {
        Self::from_logits(vec![0.0; d])
    }

    /// Builds logits `ln p`. Zero entries are mapped to the smallest positive
    /// normal float, which keeps every probability strictly positive.
    pub fn from_probs(probs: &[f64]) -> Result<Self> {
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return arg("probabilities must be finite and non-negative");
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return arg("probabilities must have positive mass");
        }
        Self::from_logits(
            probs
                .iter()
                .map(|&p| (p / total).max(f64::MIN_POSITIVE).ln())
                .collect(),
        )
    }

    pub fn one_hot(d: usize, s: usize) -> Result<Self> {
        if s >= d {
            return arg(format!("one-hot index {s} out of range for d={d}"));
        }
        let mut p = vec![0.0; d];
        p[s] = 1.0;
        Self::from_probs(&p)
    }

    pub fn d(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn logits_mut(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn probs(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.d()];
        softmax_into(&self.logits, 1.0, &mut out);
        out
    }

    /// `ln p[s]`, computed from the logits without forming `p`.
    pub fn log_probs(&self) -> Vec<f64> {
        let lse = crate::linalg::logsumexp(&self.logits);
        self.logits.iter().map(|&t| t - lse).collect()
    }
}

/// `N` noisy segments of length `m`, stored row-major, plus generation metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSet {
    data: Vec<f64>,
    n: usize,
    m: usize,
    d: usize,
    sigma: f64,
    seed: u64,
    snr: f64,
    true_locations: Option<Vec<usize>>,
}

impl MeasurementSet {
    pub fn new(data: Vec<f64>, n: usize, m: usize, d: usize, sigma: f64, seed: u64, snr: f64) -> Result<Self> {
        if n == 0 {
            return arg("measurement set needs N >= 1");
        }
        if m == 0 || m > d {
            return arg(format!("segment length m={m} must satisfy 1 <= m <= d={d}"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return arg("sigma must be finite and >= 0");
        }
        if data.len() != n * m {
            return arg(format!("data has {} entries, expected N*m = {}", data.len(), n * m));
        }
        Ok(Self { data, n, m, d, sigma, seed, snr, true_locations: None })
    }

    pub fn with_true_locations(mut self, locations: Vec<usize>) -> Result<Self> {
        if locations.len() != self.n || locations.iter().any(|&s| s >= self.d) {
            return arg("true locations must have length N and lie in [0, d)");
        }
        self.true_locations = Some(locations);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn d(&self) -> usize {
        self.d
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    pub fn seed(&self) -> u64 {
        self.seed
    }
    /// SNR recorded at generation time (`inf` for noiseless data).
    pub fn snr(&self) -> f64 {
        self.snr
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.m..(j + 1) * self.m]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.m)
    }

    /// Ground-truth segment locations. Diagnostics only: no solver reads these.
    pub fn diagnostic_locations(&self) -> Option<&[usize]> {
        self.true_locations.as_deref()
    }
}

fn check_shift(d: usize, s: usize, m: usize) -> Result<()> {
    if s >= d {
        return arg(format!("shift s={s} out of range [0, {d})"));
    }
    if m == 0 || m > d {
        return arg(format!("segment length m={m} out of range [1, {d}]"));
    }
    Ok(())
}

/// `(M_s x)[n] = x[(n + s) mod d]` for `n < m`.
pub fn mask(x: &Signal, s: usize, m: usize) -> Result<Vec<f64>> {
    check_shift(x.d(), s, m)?;
    let mut out = vec![0.0; m];
    mask_into(x.values(), s, &mut out);
    Ok(out)
}

pub(crate) fn mask_into(x: &[f64], s: usize, out: &mut [f64]) {
    let d = x.len();
    for (n, o) in out.iter_mut().enumerate() {
        *o = x[(n + s) % d];
    }
}

/// Adjoint of [`mask`]: scatters `y` back onto the positions it was read from.
pub fn mask_adjoint(y: &[f64], s: usize, d: usize) -> Result<Vec<f64>> {
    check_shift(d, s, y.len())?;
    let mut out = vec![0.0; d];
    mask_adjoint_add(y, s, &mut out);
    Ok(out)
}

/// `out += M_s^T y`.
pub(crate) fn mask_adjoint_add(y: &[f64], s: usize, out: &mut [f64]) {
    let d = out.len();
    for (n, &v) in y.iter().enumerate() {
        out[(n + s) % d] += v;
    }
}

/// Gumbel-Max draw: `argmax_s (g_s + log p[s])`.
pub fn sample_location<R: Rng + ?Sized>(p: &SegmentPmf, rng: &mut R) -> usize {
    // Logits differ from log p by a per-row constant, which leaves the argmax unchanged.
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (s, &t) in p.logits().iter().enumerate() {
        let v = gumbel_sample(rng) + t;
        if v > best_val {
            best_val = v;
            best = s;
        }
    }
    best
}

/// Coverage weight of each signal entry: the probability that a uniformly
/// chosen entry of a segment drawn under `p` reads position `k`.
fn entry_weights(p: &[f64], m: usize) -> Vec<f64> {
    let d = p.len();
    let mut w = vec![0.0; d];
    for (s, &ps) in p.iter().enumerate() {
        for n in 0..m {
            w[(n + s) % d] += ps / m as f64;
        }
    }
    w
}

/// Expected pooled variance of the entries of clean segments under `(x, p)`.
pub fn clean_variance(x: &Signal, p: &SegmentPmf, m: usize) -> Result<f64> {
    if p.d() != x.d() {
        return arg("signal and pmf lengths differ");
    }
    check_shift(x.d(), 0, m)?;
    let w = entry_weights(&p.probs(), m);
    let mean: f64 = w.iter().zip(x.values()).map(|(w, v)| w * v).sum();
    Ok(w.iter().zip(x.values()).map(|(w, v)| w * (v - mean).powi(2)).sum())
}

/// Population variance of the realized noiseless segment matrix.
pub fn realized_clean_variance(x: &Signal, locations: &[usize], m: usize) -> Result<f64> {
    if locations.is_empty() {
        return arg("no locations");
    }
    let mut seg = vec![0.0; m];
    let (mut sum, mut sum_sq) = (0.0, 0.0);
    for &s in locations {
        check_shift(x.d(), s, m)?;
        mask_into(x.values(), s, &mut seg);
        sum += seg.iter().sum::<f64>();
        sum_sq += seg.iter().map(|v| v * v).sum::<f64>();
    }
    let count = (locations.len() * m) as f64;
    let mean = sum / count;
    Ok((sum_sq / count - mean * mean).max(0.0))
}

/// Noise standard deviation giving the requested SNR (`inf` gives 0).
pub fn sigma_from_snr(x: &Signal, p: &SegmentPmf, m: usize, snr: f64) -> Result<f64> {
    if snr.is_nan() || snr <= 0.0 {
        return arg(format!("snr must be positive, got {snr}"));
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    Ok((clean_variance(x, p, m)? / snr).sqrt())
}

/// Draws `n` measurements `M_{s_j} x + eps_j` with `s_j ~ p`, `eps_j ~ N(0, sigma^2 I)`.
///
/// Locations and noise come from separate streams of `seed`.
pub fn synthesize(x: &Signal, p: &SegmentPmf, m: usize, sigma: f64, n: usize, seed: u64) -> Result<MeasurementSet> {
    if p.d() != x.d() {
        return arg("signal and pmf lengths differ");
    }
    check_shift(x.d(), 0, m)?;
    if n == 0 {
        return arg("N must be >= 1");
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return arg("sigma must be finite and >= 0");
    }
    let streams = Streams::new(seed);
    let mut loc_rng = streams.stream("data-locations");
    let mut noise_rng = streams.stream("data-noise");
    let mut data = vec![0.0; n * m];
    let mut locations = Vec::with_capacity(n);
    for row in data.chunks_exact_mut(m) {
        let s = sample_location(p, &mut loc_rng);
        locations.push(s);
        mask_into(x.values(), s, row);
        if sigma > 0.0 {
            for v in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut noise_rng);
                *v += sigma * z;
            }
        }
    }
    let snr = if sigma == 0.0 {
        f64::INFINITY
    } else {
        clean_variance(x, p, m)? / (sigma * sigma)
    };
    MeasurementSet::new(data, n, m, x.d(), sigma, seed, snr)?.with_true_locations(locations)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::dot;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sig(v: &[f64]) -> Signal {
        Signal::new(v.to_vec()).unwrap()
    }

    #[test]
    fn mask_examples() {
        let x = sig(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(mask(&x, 0, 2).unwrap(), vec![1.0, 2.0]);
        assert_eq!(mask(&x, 3, 3).unwrap(), vec![4.0, 1.0, 2.0]);
        assert_eq!(mask(&x, 2, 4).unwrap(), vec![3.0, 4.0, 1.0, 2.0]);
        assert!(mask(&x, 4, 2).is_err());
        assert!(mask(&x, 0, 5).is_err());
        assert!(mask(&x, 0, 0).is_err());
    }

    #[test]
    fn mask_adjoint_examples() {
        let (a, b) = (1.5, -2.0);
        assert_eq!(mask_adjoint(&[a, b], 3, 4).unwrap(), vec![b, 0.0, 0.0, a]);
        let x = sig(&[0.3, -1.0, 2.0, 5.0, 0.1]);
        for s in 0..5 {
            let y = mask(&x, s, 5).unwrap();
            assert_eq!(mask_adjoint(&y, s, 5).unwrap(), x.values());
        }
        assert!(mask_adjoint(&[1.0], 5, 4).is_err());
    }

    #[test]
    fn adjoint_identity_random_triples() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let d = rng.random_range(1..20);
            let m = rng.random_range(1..=d);
            let s = rng.random_range(0..d);
            let x = sig(&(0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
            let y: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
            let lhs = dot(&mask(&x, s, m).unwrap(), &y);
            let rhs = dot(x.values(), &mask_adjoint(&y, s, d).unwrap());
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn one_hot_pmf_always_samples_its_index() {
        let p = SegmentPmf::one_hot(5, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..10_000).all(|_| sample_location(&p, &mut rng) == 2));
    }

    #[test]
    fn sample_location_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 100_000;
        let p = SegmentPmf::uniform(8).unwrap();
        let mut counts = [0usize; 8];
        for _ in 0..draws {
            counts[sample_location(&p, &mut rng)] += 1;
        }
        let tv: f64 = counts.iter().map(|&c| (c as f64 / draws as f64 - 0.125).abs()).sum::<f64>() / 2.0;
        assert!(tv < 0.02, "tv = {tv}");

        let p = SegmentPmf::from_probs(&[0.9, 0.1]).unwrap();
        let hits = (0..draws).filter(|_| sample_location(&p, &mut rng) == 0).count();
        let f = hits as f64 / draws as f64;
        assert!((0.89..=0.91).contains(&f), "freq = {f}");
    }

    #[test]
    fn sigma_from_snr_examples() {
        let x = sig(&[1.0, -1.0, 3.0, 0.5]);
        let p = SegmentPmf::uniform(4).unwrap();
        assert_eq!(sigma_from_snr(&x, &p, 2, f64::INFINITY).unwrap(), 0.0);
        assert!(sigma_from_snr(&x, &p, 2, 0.0).is_err());
        assert!(sigma_from_snr(&x, &p, 2, -1.0).is_err());

        // A two-valued signal with variance 2: entries +-sqrt(2) around 0.
        let r = 2f64.sqrt();
        let x2 = sig(&[r, -r, r, -r]);
        let s = sigma_from_snr(&x2, &p, 4, 1.0).unwrap();
        assert!((s - r).abs() < 1e-12);

        // m = d with uniform p covers every entry equally: population variance of x.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v: Vec<f64> = (0..13).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mean = v.iter().sum::<f64>() / 13.0;
        let var = v.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 13.0;
        let x3 = sig(&v);
        let s = sigma_from_snr(&x3, &SegmentPmf::uniform(13).unwrap(), 13, 4.0).unwrap();
        assert!((s - (var / 4.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn synthesize_degenerate_and_shape() {
        let x = sig(&[1.0, 2.0, 3.0, 4.0, 5.0]);
        let p = SegmentPmf::one_hot(5, 3).unwrap();
        let ms = synthesize(&x, &p, 3, 0.0, 17, 1).unwrap();
        assert_eq!((ms.n(), ms.m(), ms.data().len()), (17, 3, 51));
        let want = mask(&x, 3, 3).unwrap();
        assert!(ms.rows().all(|r| r == want.as_slice()));
        assert!(ms.snr().is_infinite());
    }

    #[test]
    fn synthesize_noise_variance() {
        let x = sig(&[0.2, -1.0, 0.7, 1.4, 0.0, -0.3]);
        let p = SegmentPmf::from_probs(&[0.1, 0.3, 0.2, 0.1, 0.2, 0.1]).unwrap();
        let ms = synthesize(&x, &p, 4, 0.5, 20_000, 42).unwrap();
        let locs = ms.diagnostic_locations().unwrap();
        let mut acc = 0.0;
        for (row, &s) in ms.rows().zip(locs) {
            let clean = mask(&x, s, 4).unwrap();
            acc += row.iter().zip(&clean).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let var = acc / (20_000.0 * 4.0);
        assert!((var / 0.25 - 1.0).abs() < 0.05, "var = {var}");
    }

    #[test]
    fn synthesize_is_deterministic() {
        let x = sig(&[0.2, -1.0, 0.7, 1.4]);
        let p = SegmentPmf::uniform(4).unwrap();
        let a = synthesize(&x, &p, 2, 0.3, 100, 8).unwrap();
        let b = synthesize(&x, &p, 2, 0.3, 100, 8).unwrap();
        assert_eq!(a, b);
        let c = synthesize(&x, &p, 2, 0.3, 100, 9).unwrap();
        assert_ne!(a.data(), c.data());
    }

    #[test]
    fn pmf_invariants() {
        let p = SegmentPmf::from_probs(&[0.0, 0.25, 0.75]).unwrap();
        let probs = p.probs();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(probs.iter().all(|&v| v > 0.0));
        assert!((probs[2] - 0.75).abs() < 1e-12);
        assert!(SegmentPmf::from_logits(vec![]).is_err());
        assert!(SegmentPmf::from_probs(&[0.0, 0.0]).is_err());
        assert!(Signal::new(vec![f64::NAN]).is_err());
    }
}
