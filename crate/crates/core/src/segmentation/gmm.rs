//! One-dimensional Gaussian mixture fitted to pixel intensities by EM.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegmentationError;
use crate::scalar::{compensated_sum, Real};

/// Lower bound on every component variance, in intensity².
pub const VARIANCE_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component<T> {
    pub weight: T,
    pub mean: T,
    pub variance: T,
}

impl<T: Real> Component<T> {
    /// `ln N(x; mean, variance)`.
    pub fn log_density(&self, x: T) -> T {
        let two_pi = T::lit(std::f64::consts::TAU);
        let d = x - self.mean;
        -T::lit(0.5) * (two_pi * self.variance).ln() - d * d / (T::two() * self.variance)
    }

    /// `ln(weight · N(x))`.
    pub fn log_weighted(&self, x: T) -> T {
        self.weight.ln() + self.log_density(x)
    }
}

/// Mixture parameters. Weights sum to one; components are ordered by mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmParams<T> {
    pub components: Vec<Component<T>>,
}

impl<T: Real> GmmParams<T> {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    pub fn weight_sum(&self) -> T {
        self.components.iter().map(|c| c.weight).fold(T::zero(), |a, b| a + b)
    }

    /// `ln Σₖ πₖ N(x; μₖ, σ²ₖ)`.
    pub fn log_mixture_density(&self, x: T) -> T {
        log_sum_exp(self.components.iter().map(|c| c.log_weighted(x)))
    }

    /// Posterior membership probabilities of `x`.
    pub fn responsibilities(&self, x: T) -> Vec<T> {
        let logs: Vec<T> = self.components.iter().map(|c| c.log_weighted(x)).collect();
        let lse = log_sum_exp(logs.iter().copied());
        logs.into_iter().map(|l| (l - lse).exp()).collect()
    }

    /// Index of the component with the largest weighted density; ties go to
    /// the lower index.
    pub fn most_likely(&self, x: T) -> usize {
        let mut best = 0;
        let mut best_v = T::neg_infinity();
        for (i, c) in self.components.iter().enumerate() {
            let v = c.log_weighted(x);
            if v > best_v {
                best = i;
                best_v = v;
            }
        }
        best
    }
}

fn log_sum_exp<T: Real>(values: impl Iterator<Item = T> + Clone) -> T {
    let max = values.clone().fold(T::neg_infinity(), |a, b| a.max(b));
    if max == T::neg_infinity() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).fold(T::zero(), |a, b| a + b).ln()
}

/// `Σᵢ ln Σₖ πₖ N(xᵢ; μₖ, σ²ₖ)`; zero for an empty sequence.
pub fn log_likelihood<T: Real>(data: &[T], params: &GmmParams<T>) -> T {
    compensated_sum(data.iter().map(|&x| params.log_mixture_density(x)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmOptions<T> {
    pub max_iter: usize,
    /// Stop once an iteration gains less than this much log-likelihood.
    pub tol: T,
    /// Only used to break ties between coinciding initial means.
    pub seed: u64,
}

impl<T: Real> Default for EmOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: T::lit(1e-6),
            seed: 0,
        }
    }
}

/// Requested component count exceeded the number of distinct values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DegenerateInput {
    pub requested: usize,
    pub fitted: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit<T> {
    pub params: GmmParams<T>,
    pub log_likelihood: T,
    pub iterations: usize,
    /// Log-likelihood at initialization followed by one entry per iteration.
    pub history: Vec<T>,
    pub degenerate: Option<DegenerateInput>,
}

/// Distinct sorted values with their multiplicities.
struct Weighted<T> {
    values: Vec<T>,
    counts: Vec<T>,
    raw_counts: Vec<usize>,
    n: usize,
}

impl<T: Real> Weighted<T> {
    fn from_data(data: &[T]) -> Self {
        let mut sorted = data.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut values: Vec<T> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for x in sorted {
            if values.last() == Some(&x) {
                *counts.last_mut().unwrap() += 1;
            } else {
                values.push(x);
                counts.push(1);
            }
        }
        Self::new(values, &counts)
    }

    fn new(values: Vec<T>, counts: &[usize]) -> Self {
        Self {
            n: counts.iter().sum(),
            counts: counts.iter().map(|&c| T::from_count(c)).collect(),
            raw_counts: counts.to_vec(),
            values,
        }
    }

    /// Value at sorted position `q`.
    fn at_rank(&self, q: usize) -> T {
        let mut seen = 0;
        for (v, c) in self.values.iter().zip(&self.raw_counts) {
            seen += c;
            if q < seen {
                return *v;
            }
        }
        *self.values.last().unwrap()
    }

    fn log_likelihood(&self, params: &GmmParams<T>) -> T {
        compensated_sum(
            self.values
                .iter()
                .zip(&self.counts)
                .map(|(&x, &c)| c * params.log_mixture_density(x)),
        )
    }
}

fn initial_params<T: Real>(w: &Weighted<T>, k: usize, seed: u64) -> GmmParams<T> {
    let n = w.n;
    let mut means: Vec<T> = (0..k).map(|j| w.at_rank((2 * j + 1) * n / (2 * k))).collect();

    // coinciding quantiles: swap duplicates for unused distinct values
    let mut used: Vec<T> = Vec::with_capacity(k);
    let mut dup_slots = Vec::new();
    for (i, m) in means.iter().enumerate() {
        if used.contains(m) {
            dup_slots.push(i);
        } else {
            used.push(*m);
        }
    }
    if !dup_slots.is_empty() {
        let mut spare: Vec<T> = w.values.iter().copied().filter(|v| !used.contains(v)).collect();
        spare.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        for (slot, v) in dup_slots.into_iter().zip(spare) {
            means[slot] = v;
        }
    }
    means.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let nf = T::from_count(n);
    let pairs = || w.values.iter().copied().zip(w.counts.iter().copied());
    let mean = compensated_sum(pairs().map(|(x, c)| c * x)) / nf;
    let var = compensated_sum(pairs().map(|(x, c)| c * (x - mean) * (x - mean))) / nf;
    let variance = var.max(T::lit(VARIANCE_FLOOR));
    let weight = T::one() / T::from_count(k);
    GmmParams {
        components: means
            .into_iter()
            .map(|mean| Component { weight, mean, variance })
            .collect(),
    }
}

/// One EM iteration over weighted points. Returns updated parameters.
fn em_step<T: Real>(w: &Weighted<T>, params: &GmmParams<T>, resp: &mut [T]) -> GmmParams<T> {
    let k = params.k();
    let m = w.values.len();
    for (i, &x) in w.values.iter().enumerate() {
        let row = &mut resp[i * k..(i + 1) * k];
        for (r, c) in row.iter_mut().zip(&params.components) {
            *r = c.log_weighted(x);
        }
        let lse = log_sum_exp(row.iter().copied());
        for r in row.iter_mut() {
            *r = (*r - lse).exp();
        }
    }

    let floor = T::lit(VARIANCE_FLOOR);
    let resp: &[T] = resp;
    let mut next = params.clone();
    for (j, comp) in next.components.iter_mut().enumerate() {
        // count-weighted responsibilities of component j
        let col = || (0..m).map(move |i| resp[i * k + j] * w.counts[i]);
        let nk = compensated_sum(col());
        comp.weight = nk / T::from_count(w.n);
        if nk <= T::min_positive_value() {
            // starved component keeps its location
            continue;
        }
        let mean = compensated_sum(col().zip(&w.values).map(|(r, &x)| r * x)) / nk;
        let var = compensated_sum(col().zip(&w.values).map(|(r, &x)| r * (x - mean) * (x - mean))) / nk;
        comp.mean = mean;
        comp.variance = var.max(floor);
    }
    let total = next.weight_sum();
    for c in &mut next.components {
        c.weight = c.weight / total;
    }
    next
}

/// Fit a `k`-component mixture by expectation-maximization.
///
/// Means start at `k` evenly spaced quantiles of the data, variances at the
/// sample variance, weights at `1/k`. Iteration stops when the
/// log-likelihood gain drops below `opts.tol` or after `opts.max_iter`
/// iterations. When the data holds fewer distinct values than `k`, the fit
/// uses that many components and records a [`DegenerateInput`].
///
/// Repeated values are folded into weighted points, so cost scales with
/// the number of distinct values.
pub fn fit_gmm<T: Real>(data: &[T], k: usize, opts: &EmOptions<T>) -> Result<GmmFit<T>, SegmentationError> {
    if k == 0 || k > 255 {
        return Err(SegmentationError::InvalidComponentCount(k));
    }
    if data.len() < k {
        return Err(SegmentationError::InsufficientData { len: data.len(), k });
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(SegmentationError::NonFinite);
    }
    fit_weighted(Weighted::from_data(data), k, opts)
}

/// [`fit_gmm`] on 8-bit intensities given as a 256-bin histogram.
pub fn fit_gmm_histogram<T: Real>(
    hist: &[u64; 256],
    k: usize,
    opts: &EmOptions<T>,
) -> Result<GmmFit<T>, SegmentationError> {
    if k == 0 || k > 255 {
        return Err(SegmentationError::InvalidComponentCount(k));
    }
    let n: u64 = hist.iter().sum();
    if (n as usize) < k {
        return Err(SegmentationError::InsufficientData { len: n as usize, k });
    }
    let (values, counts): (Vec<T>, Vec<usize>) = (0..256)
        .filter(|&v| hist[v] > 0)
        .map(|v| (T::from_count(v), hist[v] as usize))
        .unzip();
    fit_weighted(Weighted::new(values, &counts), k, opts)
}

fn fit_weighted<T: Real>(w: Weighted<T>, k: usize, opts: &EmOptions<T>) -> Result<GmmFit<T>, SegmentationError> {
    let (k_fit, degenerate) = if w.values.len() < k {
        (
            w.values.len(),
            Some(DegenerateInput {
                requested: k,
                fitted: w.values.len(),
            }),
        )
    } else {
        (k, None)
    };

    let mut params = initial_params(&w, k_fit, opts.seed);
    let mut ll = w.log_likelihood(&params);
    let mut history = vec![ll];
    let mut resp = vec![T::zero(); w.values.len() * k_fit];
    let mut iterations = 0;
    while iterations < opts.max_iter {
        let next = em_step(&w, &params, &mut resp);
        let next_ll = w.log_likelihood(&next);
        iterations += 1;
        history.push(next_ll);
        let gain = next_ll - ll;
        params = next;
        ll = next_ll;
        if gain < opts.tol {
            break;
        }
    }
    Ok(GmmFit {
        params,
        log_likelihood: ll,
        iterations,
        history,
        degenerate,
    })
}
