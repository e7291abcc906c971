//! Sample-based distances and summary statistics.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// `n` samples of dimension `d`, stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleSet {
    dim: usize,
    data: Vec<f64>,
}

impl SampleSet {
    pub fn from_flat(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 || !data.len().is_multiple_of(dim) {
            return Err(Error::invalid(format!("{} values do not form rows of width {dim}", data.len())));
        }
        if let Some(x) = data.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("sample value {x}")));
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(1, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::invalid("sample rows differ in width"));
        }
        Self::from_flat(dim, rows.concat())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.data.chunks_exact(self.dim).map(|r| r[j]).collect()
    }

    pub fn project(&self, direction: &[f64]) -> Vec<f64> {
        self.data
            .chunks_exact(self.dim)
            .map(|r| r.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect()
    }
}

/// Exact 1-Wasserstein distance between two empirical distributions on ℝ.
///
/// For equal sizes this is the mean absolute gap between order statistics.
/// For unequal sizes the two empirical c.d.f.s are integrated against each
/// other exactly, which is the same quantity without resampling.
pub fn wasserstein1_1d(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::invalid("wasserstein1_1d needs non-empty samples"));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("sample value {v}")));
    }
    let mut xs = x.to_vec();
    let mut ys = y.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    if xs.len() == ys.len() {
        let total: f64 = xs.iter().zip(&ys).map(|(a, b)| (a - b).abs()).sum();
        return Ok(total / xs.len() as f64);
    }
    let (n, m) = (xs.len() as f64, ys.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = xs[0].min(ys[0]);
    let mut total = 0.0;
    while i < xs.len() || j < ys.len() {
        let next = match (xs.get(i), ys.get(j)) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) => a,
            (None, Some(&b)) => b,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / n - j as f64 / m).abs() * (next - prev);
        while i < xs.len() && xs[i] == next {
            i += 1;
        }
        while j < ys.len() && ys[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Mean 1-D Wasserstein distance over `projections` random unit directions.
pub fn sliced_wasserstein<R: Rng + ?Sized>(
    x: &SampleSet,
    y: &SampleSet,
    projections: usize,
    rng: &mut R,
) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch {
            op: "sliced_wasserstein",
            expected: vec![x.dim()],
            actual: vec![y.dim()],
        });
    }
    if projections == 0 {
        return Err(Error::invalid("sliced_wasserstein needs at least one projection"));
    }
    let mut total = 0.0;
    for _ in 0..projections {
        let dir = random_direction(x.dim(), rng);
        total += wasserstein1_1d(&x.project(&dir), &y.project(&dir))?;
    }
    Ok(total / projections as f64)
}

pub fn random_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|a| a / norm).collect();
        }
    }
}

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Sample standard deviation (divisor `n − 1`); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

/// Pearson correlation. Zero when either input is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::invalid("correlation needs two equal-length inputs of length ≥ 2"));
    }
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

/// One-sample Kolmogorov–Smirnov test against U[0, 1].
pub fn ks_uniform(samples: &[f64]) -> Result<KsResult> {
    if samples.is_empty() {
        return Err(Error::invalid("ks_uniform needs samples"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = x.clamp(0.0, 1.0);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sqrt_n = n.sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    Ok(KsResult { statistic: d, p_value: kolmogorov_survival(lambda) })
}

/// `P(K > λ)` for the Kolmogorov distribution.
fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    #[test]
    fn w1_trivial_cases() {
        let x = [0.3, -1.0, 2.0];
        assert_eq!(wasserstein1_1d(&x, &x).unwrap(), 0.0);
        assert_eq!(wasserstein1_1d(&[0.0; 5], &[1.0; 5]).unwrap(), 1.0);
        assert!(wasserstein1_1d(&[], &[1.0]).is_err());
    }

    #[test]
    fn w1_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>()).collect();
        let y: Vec<f64> = (0..10_000).map(|_| rng.random::<f64>() + 0.5).collect();
        let w = wasserstein1_1d(&x, &y).unwrap();
        assert!((w - 0.5).abs() < 0.02, "{w}");
    }

    #[test]
    fn w1_unequal_sizes_match_replication() {
        // Replicating every sample k times leaves the empirical measure
        // unchanged, so the equal-size formula on replicated sets is an oracle.
        let x = [0.1, 0.7, -0.4];
        let y = [1.0, 0.2];
        let xr: Vec<f64> = x.iter().flat_map(|&v| [v, v]).collect();
        let yr: Vec<f64> = y.iter().flat_map(|&v| [v, v, v]).collect();
        let exact = wasserstein1_1d(&x, &y).unwrap();
        let oracle = wasserstein1_1d(&xr, &yr).unwrap();
        assert!((exact - oracle).abs() < 1e-12, "{exact} vs {oracle}");
    }

    #[test]
    fn w1_shrinks_with_sample_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let avg = |n: usize, rng: &mut ChaCha8Rng| {
            (0..20)
                .map(|_| {
                    let x: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                    let y: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                    wasserstein1_1d(&x, &y).unwrap()
                })
                .sum::<f64>()
                / 20.0
        };
        let w = [avg(100, &mut rng), avg(1000, &mut rng), avg(10_000, &mut rng)];
        assert!(w[0] > w[1] && w[1] > w[2], "{w:?}");
    }

    proptest! {
        #[test]
        fn w1_symmetric_and_triangle(
            x in prop::collection::vec(-5.0f64..5.0, 1..40),
            y in prop::collection::vec(-5.0f64..5.0, 1..40),
            z in prop::collection::vec(-5.0f64..5.0, 1..40),
        ) {
            let xy = wasserstein1_1d(&x, &y).unwrap();
            prop_assert_eq!(xy, wasserstein1_1d(&y, &x).unwrap());
            let yz = wasserstein1_1d(&y, &z).unwrap();
            let xz = wasserstein1_1d(&x, &z).unwrap();
            prop_assert!(xz <= xy + yz + 1e-12);
        }
    }

    fn independent_sliced(x: &[[f64; 2]], y: &[[f64; 2]], p: usize, seed: u64) -> f64 {
        // Directions by angle, projections sorted independently.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut total = 0.0;
        for _ in 0..p {
            let theta = rng.random::<f64>() * std::f64::consts::TAU;
            let (c, s) = (theta.cos(), theta.sin());
            let mut px: Vec<f64> = x.iter().map(|v| c * v[0] + s * v[1]).collect();
            let mut py: Vec<f64> = y.iter().map(|v| c * v[0] + s * v[1]).collect();
            px.sort_by(f64::total_cmp);
            py.sort_by(f64::total_cmp);
            total += px.iter().zip(&py).map(|(a, b)| (a - b).abs()).sum::<f64>() / px.len() as f64;
        }
        total / p as f64
    }

    #[test]
    fn sliced_translation_matches_independent_estimator() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<[f64; 2]> = (0..2000).map(|_| [rng.random(), rng.random()]).collect();
        let t = 0.7;
        let y: Vec<[f64; 2]> = x.iter().map(|v| [v[0] + t, v[1]]).collect();
        let xs = SampleSet::from_flat(2, x.concat()).unwrap();
        let ys = SampleSet::from_flat(2, y.concat()).unwrap();
        let ours = sliced_wasserstein(&xs, &ys, 4096, &mut rng).unwrap();
        let theirs = independent_sliced(&x, &y, 4096, 99);
        // A pure translation projects to a pure shift: W₁ = |t·u₁|,
        // and E|u₁| over the unit circle is 2/π.
        let closed = t * 2.0 / std::f64::consts::PI;
        assert!((ours - closed).abs() < 0.02, "{ours} vs {closed}");
        assert!((theirs - closed).abs() < 0.02, "{theirs} vs {closed}");
    }

    #[test]
    fn sliced_identity_and_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x: Vec<f64> = (0..1000).flat_map(|_| [rng.random::<f64>(), 2.0 * rng.random::<f64>()]).collect();
        let y: Vec<f64> = (0..1000).flat_map(|_| [rng.random::<f64>() + 0.3, rng.random::<f64>()]).collect();
        let xs = SampleSet::from_flat(2, x.clone()).unwrap();
        let ys = SampleSet::from_flat(2, y.clone()).unwrap();
        assert_eq!(sliced_wasserstein(&xs, &xs, 16, &mut rng).unwrap(), 0.0);

        let (c, s) = (0.6f64, 0.8f64);
        let rot = |v: &[f64]| -> Vec<f64> { v.chunks(2).flat_map(|p| [c * p[0] - s * p[1], s * p[0] + c * p[1]]).collect() };
        let xr = SampleSet::from_flat(2, rot(&x)).unwrap();
        let yr = SampleSet::from_flat(2, rot(&y)).unwrap();
        let before = sliced_wasserstein(&xs, &ys, 2048, &mut rng).unwrap();
        let after = sliced_wasserstein(&xr, &yr, 2048, &mut rng).unwrap();
        assert!((before - after).abs() / before < 0.05, "{before} vs {after}");
    }

    #[test]
    fn sliced_dimension_mismatch() {
        let a = SampleSet::from_flat(2, vec![0.0; 4]).unwrap();
        let b = SampleSet::from_flat(1, vec![0.0; 4]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(sliced_wasserstein(&a, &b, 4, &mut rng).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(mean(&[1.0, 3.0]), 2.0);
        assert!((std_dev(&[1.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
        let x = [1.0, 2.0, 3.0, 4.0];
        assert!((correlation(&x, &[2.0, 4.0, 6.0, 8.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((correlation(&x, &[-1.0, -2.0, -3.0, -4.0]).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn ks_accepts_uniform_rejects_skewed() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let u: Vec<f64> = (0..5000).map(|_| rng.random::<f64>()).collect();
        assert!(ks_uniform(&u).unwrap().p_value > 0.01);
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        assert!(ks_uniform(&sq).unwrap().p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_known_quantile() {
        // λ = 1.358 is the classic 5% critical value.
        assert!((kolmogorov_survival(1.358) - 0.05).abs() < 1e-3);
    }
}
