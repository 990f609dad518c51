//! Exact-in-law sampling of `d`-dimensional fractional Brownian motion.
//!
//! Coordinates are independent, each with covariance
//! `C(s, t) = ½(t^{2H} + s^{2H} - |t - s|^{2H})`. Paths are drawn on the
//! fine grid (`steps * oversample` intervals) by a Cholesky factor computed
//! once per sampler. For `H = 1/2` the factor is the cumulative-sum matrix,
//! so independent Gaussian increments are used instead.
//!
//! Every path owns its own ChaCha stream (`seed`, stream = path index), so
//! output does not depend on how paths are scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid_path::{GridPath, TimeGrid};

pub const DEFAULT_OVERSAMPLE: usize = 16;

/// Relative diagonal jitter tried once when the plain factorization fails.
pub const JITTER: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbmParams {
    pub hurst: f64,
    pub dim: usize,
    /// Coarse grid; samples live on its `oversample`-fold refinement.
    pub grid: TimeGrid,
    pub seed: u64,
    pub oversample: usize,
}

impl FbmParams {
    pub fn new(hurst: f64, dim: usize, grid: TimeGrid, seed: u64) -> Self {
        Self {
            hurst,
            dim,
            grid,
            seed,
            oversample: DEFAULT_OVERSAMPLE,
        }
    }

    pub fn with_oversample(mut self, oversample: usize) -> Self {
        self.oversample = oversample;
        self
    }

    pub fn fine_grid(&self) -> TimeGrid {
        self.grid.refined(self.oversample)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hurst > 1.0 / 3.0 && self.hurst <= 0.5) {
            return Err(Error::InvalidParameter {
                name: "hurst",
                reason: format!("{} outside (1/3, 1/2]", self.hurst),
            });
        }
        if self.dim == 0 {
            return Err(Error::InvalidParameter {
                name: "dim",
                reason: "must be at least 1".into(),
            });
        }
        if self.oversample == 0 {
            return Err(Error::InvalidParameter {
                name: "oversample",
                reason: "must be at least 1".into(),
            });
        }
        if self.grid.steps() == 0 {
            return Err(Error::DegenerateGrid);
        }
        Ok(())
    }
}

/// Scalar fBm covariance `E[B_s B_t]`.
pub fn covariance(hurst: f64, s: f64, t: f64) -> Result<f64> {
    if s < 0.0 || t < 0.0 {
        return Err(Error::InvalidParameter {
            name: "time",
            reason: format!("negative time in covariance({s}, {t})"),
        });
    }
    let h2 = 2.0 * hurst;
    Ok(0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2)))
}

enum Factor {
    /// Standard Brownian motion: increments are i.i.d. `N(0, h)`.
    Increments { scale: f64 },
    /// Packed row-major lower-triangular Cholesky factor of the covariance
    /// at `t_1, ..., t_N`.
    Cholesky { rows: Vec<f64> },
}

/// Reusable sampler; the factorization is shared read-only across paths.
pub struct FbmSampler {
    params: FbmParams,
    fine: TimeGrid,
    factor: Factor,
}

impl FbmSampler {
    pub fn new(params: FbmParams) -> Result<Self> {
        params.validate()?;
        let fine = params.fine_grid();
        let factor = if params.hurst == 0.5 {
            Factor::Increments {
                scale: fine.step().sqrt(),
            }
        } else {
            Factor::Cholesky {
                rows: cholesky_rows(params.hurst, &fine)?,
            }
        };
        Ok(Self {
            params,
            fine,
            factor,
        })
    }

    /// Same law, but always through the dense Cholesky factor.
    pub fn new_dense(params: FbmParams) -> Result<Self> {
        params.validate()?;
        let fine = params.fine_grid();
        let rows = cholesky_rows(params.hurst, &fine)?;
        Ok(Self {
            params,
            fine,
            factor: Factor::Cholesky { rows },
        })
    }

    pub fn params(&self) -> &FbmParams {
        &self.params
    }

    pub fn fine_grid(&self) -> &TimeGrid {
        &self.fine
    }

    /// Path number `index`; deterministic in `(seed, index)`.
    pub fn sample(&self, index: u64) -> GridPath {
        let n = self.fine.steps();
        let d = self.params.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        rng.set_stream(index);
        let mut values = vec![0.0; (n + 1) * d];
        let mut z = vec![0.0; n];
        for k in 0..d {
            z.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
            match &self.factor {
                Factor::Increments { scale } => {
                    let mut acc = 0.0;
                    for (i, zi) in z.iter().enumerate() {
                        acc += scale * zi;
                        values[(i + 1) * d + k] = acc;
                    }
                }
                Factor::Cholesky { rows } => {
                    let mut offset = 0;
                    for i in 0..n {
                        let row = &rows[offset..offset + i + 1];
                        values[(i + 1) * d + k] =
                            row.iter().zip(&z[..=i]).map(|(l, x)| l * x).sum();
                        offset += i + 1;
                    }
                }
            }
        }
        GridPath::new(self.fine, d, values).expect("sampled values are finite")
    }

    /// Paths `0..count`, sampled in parallel, returned in index order.
    pub fn sample_many(&self, count: usize) -> Vec<GridPath> {
        (0..count as u64)
            .into_par_iter()
            .map(|k| self.sample(k))
            .collect()
    }
}

fn cholesky_rows(hurst: f64, fine: &TimeGrid) -> Result<Vec<f64>> {
    let n = fine.steps();
    let cov = DMatrix::from_fn(n, n, |i, j| {
        covariance(hurst, fine.point(i + 1), fine.point(j + 1)).expect("grid times are nonnegative")
    });
    let chol = match cov.clone().cholesky() {
        Some(c) => c,
        None => {
            let mut jittered = cov;
            for i in 0..n {
                jittered[(i, i)] *= 1.0 + JITTER;
            }
            jittered
                .cholesky()
                .ok_or(Error::IllConditioned { steps: n, hurst })?
        }
    };
    let l = chol.l();
    let mut rows = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            rows.push(l[(i, j)]);
        }
    }
    Ok(rows)
}

/// `count` independent paths on the fine grid of `params`.
pub fn sample_paths(params: &FbmParams, count: usize) -> Result<Vec<GridPath>> {
    Ok(FbmSampler::new(*params)?.sample_many(count))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::mean_variance;

    fn params(hurst: f64, steps: usize, oversample: usize) -> FbmParams {
        FbmParams::new(hurst, 1, TimeGrid::new(1.0, steps).unwrap(), 7).with_oversample(oversample)
    }

    #[test]
    fn covariance_values() {
        assert!((covariance(0.5, 1.0, 2.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((covariance(0.4, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let t: f64 = 0.7;
        for h in [0.35, 0.4, 0.5] {
            assert!((covariance(h, t, t).unwrap() - t.powf(2.0 * h)).abs() < 1e-15);
        }
        assert!(covariance(0.4, -1.0, 1.0).is_err());
    }

    #[test]
    fn hurst_range_enforced() {
        for h in [0.3, 1.0 / 3.0, 0.51, 0.7] {
            assert!(FbmSampler::new(params(h, 4, 2)).is_err(), "H = {h}");
        }
        assert!(FbmSampler::new(params(0.5, 4, 2)).is_ok());
    }

    #[test]
    fn paths_start_at_origin_and_are_reproducible() {
        let p = FbmParams::new(0.4, 2, TimeGrid::new(1.0, 8).unwrap(), 99).with_oversample(4);
        let s = FbmSampler::new(p).unwrap();
        let a = s.sample_many(5);
        for path in &a {
            assert_eq!(path.steps(), 32);
            assert_eq!(path.value(0), &[0.0, 0.0]);
        }
        assert_eq!(a[3], s.sample(3));
        assert_ne!(a[0], a[1]);
        let other_seed = FbmSampler::new(FbmParams { seed: 100, ..p }).unwrap();
        assert_ne!(other_seed.sample(0), a[0]);

        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let b = single.install(|| s.sample_many(5));
        assert_eq!(a, b);
    }

    #[test]
    fn brownian_fast_path_has_the_same_law_as_cholesky() {
        let p = params(0.5, 4, 4);
        let fast = FbmSampler::new(p).unwrap().sample_many(4000);
        let dense = FbmSampler::new_dense(p).unwrap().sample_many(4000);
        for paths in [&fast, &dense] {
            let ends: Vec<f64> = paths.iter().map(|w| w.value(16)[0]).collect();
            let (_, var) = mean_variance(&ends);
            let se = var * (2.0 / 3999.0f64).sqrt();
            assert!((var - 1.0).abs() < 3.0 * se, "var {var}");
        }
    }

    #[test]
    fn brownian_increments_are_uncorrelated() {
        let n_paths = 10_000;
        let paths = FbmSampler::new(params(0.5, 2, 8))
            .unwrap()
            .sample_many(n_paths);
        let a: Vec<f64> = paths.iter().map(|w| w.value(8)[0]).collect();
        let b: Vec<f64> = paths
            .iter()
            .map(|w| w.value(16)[0] - w.value(8)[0])
            .collect();
        let (ma, va) = mean_variance(&a);
        let (mb, vb) = mean_variance(&b);
        let cov: f64 = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / (n_paths as f64 - 1.0);
        let corr = cov / (va * vb).sqrt();
        assert!(corr.abs() < 3.0 / (n_paths as f64).sqrt(), "corr {corr}");
    }

    #[test]
    fn terminal_variance_matches_covariance() {
        let n_paths = 10_000;
        for h in [0.35, 0.45] {
            let paths = FbmSampler::new(params(h, 8, 4))
                .unwrap()
                .sample_many(n_paths);
            let ends: Vec<f64> = paths.iter().map(|w| w.value(32)[0]).collect();
            let (_, var) = mean_variance(&ends);
            let se = var * (2.0 / (n_paths as f64 - 1.0)).sqrt();
            assert!((var - 1.0).abs() < 3.0 * se, "H={h}: var {var}");
        }
    }

    #[test]
    fn empirical_covariance_converges_at_root_n() {
        let p = params(0.4, 4, 2);
        let sampler = FbmSampler::new(p).unwrap();
        let coarse = [2usize, 4, 6, 8];
        let max_err = |count: usize| -> f64 {
            let paths = sampler.sample_many(count);
            let mut worst: f64 = 0.0;
            for &i in &coarse {
                for &j in &coarse {
                    let emp: f64 = paths
                        .iter()
                        .map(|w| w.value(i)[0] * w.value(j)[0])
                        .sum::<f64>()
                        / count as f64;
                    let exact = covariance(
                        0.4,
                        sampler.fine_grid().point(i),
                        sampler.fine_grid().point(j),
                    )
                    .unwrap();
                    worst = worst.max((emp - exact).abs());
                }
            }
            worst
        };
        let e3 = max_err(1_000);
        let e4 = max_err(10_000);
        // entries have variance at most 2 (t <= 1); 4 sigma envelopes
        assert!(e3 < 4.0 * (2.0f64 / 1e3).sqrt());
        assert!(e4 < 4.0 * (2.0f64 / 1e4).sqrt());
    }

    #[test]
    fn self_similarity_of_terminal_law() {
        // W(c)/c^H has the law of W(1): compare second and fourth moments
        let h = 0.4;
        let c: f64 = 2.5;
        let n_paths = 8_000;
        let unit = FbmSampler::new(params(h, 8, 2))
            .unwrap()
            .sample_many(n_paths);
        let scaled = FbmSampler::new(FbmParams {
            grid: TimeGrid::new(c, 8).unwrap(),
            seed: 1234,
            ..params(h, 8, 2)
        })
        .unwrap()
        .sample_many(n_paths);
        let m2 = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64;
        let a: Vec<f64> = unit.iter().map(|w| w.value(16)[0]).collect();
        let b: Vec<f64> = scaled.iter().map(|w| w.value(16)[0] / c.powf(h)).collect();
        let (ma, mb) = (m2(&a), m2(&b));
        // each second moment has standard error sqrt(2 / N)
        assert!(
            (ma - mb).abs() < 3.0 * (4.0 / n_paths as f64).sqrt(),
            "{ma} vs {mb}"
        );
    }
}
