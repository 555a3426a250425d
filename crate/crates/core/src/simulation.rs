//! Simulation studies: data generation from the model, adjusted Rand index,
//! label alignment against the truth and a replicate runner reporting ARI
//! and MSE summaries.

use std::collections::HashMap;

use itertools::Itertools;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{fit, relabel, Relabeling};
use crate::error::{Error, Result};
use crate::model::{mixing_weights, CovariateMatrix, IncidenceMatrix, ModelConfig, ModelParams};
use crate::scalar::logistic;

/// Largest G or D for exhaustive permutation alignment.
pub const ALIGNMENT_CAP: usize = 8;

/// How receiving nodes are split into segments in the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SegmentLayout {
    /// D contiguous, balanced blocks of columns, identical in every component.
    #[default]
    SharedBlocks,
    /// Independent uniform segment labels per component (every segment used).
    PerComponentRandom,
}

/// One Gaussian covariate next to the intercept.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub mean: f64,
    pub variance: f64,
}

impl Default for CovariateSpec {
    fn default() -> Self {
        Self { mean: 1.0, variance: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub n_sending: usize,
    pub n_receiving: usize,
    pub components: usize,
    pub segments: usize,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    /// (G - 1) rows of `[intercept, slope]`.
    pub beta: Vec<Vec<f64>>,
    pub n_replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub covariates: CovariateSpec,
    #[serde(default)]
    pub layout: SegmentLayout,
}

impl Scenario {
    /// Three components and two segments with the reference simulation
    /// parameters.
    pub fn three_by_two(n_sending: usize, n_receiving: usize) -> Self {
        Self {
            n_sending,
            n_receiving,
            components: 3,
            segments: 2,
            b: vec![-1.7, 0.0, 1.7],
            mu: vec![-2.0, 0.5],
            beta: vec![vec![1.0, -0.4], vec![1.5, -0.9]],
            n_replicates: 100,
            seed: 1,
            covariates: CovariateSpec::default(),
            layout: SegmentLayout::SharedBlocks,
        }
    }

    /// Four components and three segments with the reference simulation
    /// parameters.
    pub fn four_by_three(n_sending: usize, n_receiving: usize) -> Self {
        Self {
            n_sending,
            n_receiving,
            components: 4,
            segments: 3,
            b: vec![-1.7, 0.0, 1.7, 0.7],
            mu: vec![-2.0, 0.5, 1.5],
            beta: vec![vec![1.0, -0.4], vec![1.5, -0.9], vec![2.0, -1.3]],
            n_replicates: 100,
            seed: 1,
            covariates: CovariateSpec::default(),
            layout: SegmentLayout::SharedBlocks,
        }
    }

    pub fn with_replicates(mut self, n: usize) -> Self {
        self.n_replicates = n;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (g, d) = (self.components, self.segments);
        if g == 0 || d == 0 || self.n_sending == 0 {
            return Err(Error::InvalidArgument("scenario needs N, G, D >= 1".into()));
        }
        if d > self.n_receiving {
            return Err(Error::InvalidArgument(format!("D = {d} exceeds R = {}", self.n_receiving)));
        }
        if self.b.len() != g || self.mu.len() != d {
            return Err(Error::Dimension(format!(
                "b has {} entries and mu {}, expected G = {g} and D = {d}",
                self.b.len(),
                self.mu.len()
            )));
        }
        if self.beta.len() != g - 1 || self.beta.iter().any(|row| row.len() != 2) {
            return Err(Error::Dimension("beta must have G - 1 rows of [intercept, slope]".into()));
        }
        if !(self.covariates.variance >= 0.0) {
            return Err(Error::InvalidArgument("covariate variance must be non-negative".into()));
        }
        Ok(())
    }

    pub fn beta_matrix(&self) -> Array2<f64> {
        let mut beta = Array2::zeros((self.components - 1, 2));
        for (c, row) in self.beta.iter().enumerate() {
            beta[[c, 0]] = row[0];
            beta[[c, 1]] = row[1];
        }
        beta
    }

    /// Segment of each receiving node under the shared block layout.
    pub fn block_labels(&self) -> Vec<usize> {
        (0..self.n_receiving).map(|k| k * self.segments / self.n_receiving).collect()
    }
}

/// One simulated network with its ground truth.
#[derive(Debug, Clone)]
pub struct SimulatedData {
    pub y: IncidenceMatrix,
    pub x: CovariateMatrix<f64>,
    pub z: Vec<usize>,
    pub assignments: Array2<usize>,
    pub u: Array2<f64>,
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64);
    rng
}

fn categorical<R: Rng + ?Sized>(probs: &Array1<f64>, rng: &mut R) -> usize {
    let draw: f64 = rng.random();
    let mut acc = 0.0;
    for (c, &p) in probs.iter().enumerate() {
        acc += p;
        if draw < acc {
            return c;
        }
    }
    probs.len() - 1
}

/// Draws one replicate; deterministic in `(scenario.seed, replicate)`.
pub fn generate(scenario: &Scenario, replicate: usize) -> Result<SimulatedData> {
    scenario.validate()?;
    let (n, r, g, d) = (scenario.n_sending, scenario.n_receiving, scenario.components, scenario.segments);
    let mut rng = replicate_rng(scenario.seed, replicate);

    let assignments = match scenario.layout {
        SegmentLayout::SharedBlocks => {
            let blocks = scenario.block_labels();
            Array2::from_shape_fn((g, r), |(_, k)| blocks[k])
        }
        SegmentLayout::PerComponentRandom => {
            let mut a = Array2::zeros((g, r));
            for c in 0..g {
                // a shuffled block layout keeps every segment populated
                let mut labels = scenario.block_labels();
                for k in (1..r).rev() {
                    let swap = rng.random_range(0..=k);
                    labels.swap(k, swap);
                }
                for k in 0..r {
                    a[[c, k]] = labels[k];
                }
            }
            a
        }
    };

    let cov =
        Normal::new(scenario.covariates.mean, scenario.covariates.variance.sqrt()).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let raw = Array2::from_shape_fn((n, 1), |_| cov.sample(&mut rng));
    let x = CovariateMatrix::with_intercept(raw, vec!["x1".into()])?;

    let beta = scenario.beta_matrix();
    let z: Vec<usize> = (0..n).map(|i| categorical(&mixing_weights(&beta, x.row(i)), &mut rng)).collect();
    let u = Array2::from_shape_fn((n, d), |_| rng.sample::<f64, _>(StandardNormal));

    let mut data = Array2::<u8>::zeros((n, r));
    for i in 0..n {
        let c = z[i];
        for k in 0..r {
            let s = assignments[[c, k]];
            let p = logistic(scenario.b[c] + scenario.mu[s] + u[[i, s]]);
            data[[i, k]] = u8::from(rng.random::<f64>() < p);
        }
    }
    Ok(SimulatedData {
        y: IncidenceMatrix::from_array(data)?,
        x,
        z,
        assignments,
        u,
    })
}

fn pairs(n: u64) -> f64 {
    (n * n.saturating_sub(1)) as f64 / 2.0
}

/// Pair-counting adjusted Rand index. Two trivial partitions of the same
/// kind (both a single cluster, or both all singletons) score 1.
pub fn adjusted_rand_index(labels_a: &[usize], labels_b: &[usize]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::InvalidArgument(format!(
            "label vectors differ in length: {} vs {}",
            labels_a.len(),
            labels_b.len()
        )));
    }
    if labels_a.len() < 2 {
        return Err(Error::InvalidArgument("ARI needs at least two items".into()));
    }
    let mut table: HashMap<(usize, usize), u64> = HashMap::new();
    let mut rows: HashMap<usize, u64> = HashMap::new();
    let mut cols: HashMap<usize, u64> = HashMap::new();
    for (&a, &b) in labels_a.iter().zip(labels_b) {
        *table.entry((a, b)).or_default() += 1;
        *rows.entry(a).or_default() += 1;
        *cols.entry(b).or_default() += 1;
    }
    let index: f64 = table.values().map(|&v| pairs(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| pairs(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| pairs(v)).sum();
    let total = pairs(labels_a.len() as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        return Ok(1.0);
    }
    Ok((index - expected) / (max - expected))
}

/// Ground truth a fit is compared against.
#[derive(Debug, Clone)]
pub struct Truth {
    pub z: Vec<usize>,
    pub assignments: Array2<usize>,
    pub b: Array1<f64>,
    pub mu: Array1<f64>,
}

impl Truth {
    pub fn from_simulation(scenario: &Scenario, data: &SimulatedData) -> Self {
        Self {
            z: data.z.clone(),
            assignments: data.assignments.clone(),
            b: Array1::from(scenario.b.clone()),
            mu: Array1::from(scenario.mu.clone()),
        }
    }
}

/// `components[fitted] = true` and `segments[fitted] = true`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alignment {
    pub components: Vec<usize>,
    pub segments: Vec<usize>,
}

impl Alignment {
    /// The relabeling that puts fitted parameters in true label order.
    pub fn relabeling(&self) -> Relabeling {
        Relabeling {
            components: invert(&self.components),
            segments: invert(&self.segments),
        }
    }
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (from, &to) in perm.iter().enumerate() {
        inv[to] = from;
    }
    inv
}

fn squared_error(fitted: &Array1<f64>, truth: &Array1<f64>, perm: &[usize]) -> f64 {
    fitted.iter().enumerate().map(|(f, &v)| (v - truth[perm[f]]).powi(2)).sum()
}

/// Picks the component permutation with the most sending nodes matched to
/// their true component (ties: smallest squared error in `b`), then the
/// segment permutation with the most receiving labels matched across
/// components (ties: smallest squared error in `mu`).
pub fn align_labels(params: &ModelParams<f64>, sending: &[usize], truth: &Truth) -> Result<Alignment> {
    let (g, d) = (params.n_components(), params.n_segments());
    if g != truth.b.len() || d != truth.mu.len() {
        return Err(Error::Dimension("fitted and true G, D differ".into()));
    }
    if g > ALIGNMENT_CAP {
        return Err(Error::SearchCap {
            what: "G",
            value: g,
            cap: ALIGNMENT_CAP,
        });
    }
    if d > ALIGNMENT_CAP {
        return Err(Error::SearchCap {
            what: "D",
            value: d,
            cap: ALIGNMENT_CAP,
        });
    }
    if sending.len() != truth.z.len() {
        return Err(Error::Dimension("sending label vectors differ in length".into()));
    }

    let mut confusion = Array2::<usize>::zeros((g, g));
    for (&f, &t) in sending.iter().zip(&truth.z) {
        confusion[[f, t]] += 1;
    }
    let components = best_permutation(g, |perm| {
        let agree: usize = (0..g).map(|f| confusion[[f, perm[f]]]).sum();
        (agree, squared_error(&params.b, &truth.b, perm))
    });

    let r = params.n_receiving();
    let mut seg_confusion = Array2::<usize>::zeros((d, d));
    for c in 0..g {
        for k in 0..r {
            seg_confusion[[params.assignments[[c, k]], truth.assignments[[components[c], k]]]] += 1;
        }
    }
    let segments = best_permutation(d, |perm| {
        let agree: usize = (0..d).map(|f| seg_confusion[[f, perm[f]]]).sum();
        (agree, squared_error(&params.mu, &truth.mu, perm))
    });
    Ok(Alignment { components, segments })
}

fn best_permutation(n: usize, score: impl Fn(&[usize]) -> (usize, f64)) -> Vec<usize> {
    let mut best: Option<(Vec<usize>, usize, f64)> = None;
    for perm in (0..n).permutations(n) {
        let (agree, err) = score(&perm);
        let better = match &best {
            None => true,
            Some((_, a, e)) => agree > *a || (agree == *a && err < *e),
        };
        if better {
            best = Some((perm, agree, err));
        }
    }
    best.map(|(p, _, _)| p).unwrap_or_default()
}

/// Outcome of one replicate. Parameter estimates are aligned to the true
/// labels; `b` and `mu` follow the fit's convention that intercepts sum to
/// zero.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub replicate: usize,
    pub sending_ari: f64,
    pub receiving_ari: f64,
    pub receiving_ari_unaligned: f64,
    pub b: Vec<f64>,
    pub mu: Vec<f64>,
    pub beta: Vec<f64>,
    pub log_likelihood: f64,
    pub converged: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyReport {
    pub scenario: Scenario,
    pub replicates: Vec<ReplicateOutcome>,
    pub sending_ari_mean: f64,
    pub sending_ari_median: f64,
    pub receiving_ari_mean: f64,
    pub receiving_ari_median: f64,
    /// Per-entry mean squared error over successful replicates.
    pub mse_b: Vec<f64>,
    pub mse_mu: Vec<f64>,
    /// Flattened in (component, covariate) order.
    pub mse_beta: Vec<f64>,
    pub failures: usize,
}

/// True `(b, mu)` moved to the intercepts-sum-to-zero convention the fit
/// reports; every `b_g + mu_d` is unchanged.
pub fn identified_truth(b: &[f64], mu: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let shift = b.iter().sum::<f64>() / b.len() as f64;
    (b.iter().map(|v| v - shift).collect(), mu.iter().map(|v| v + shift).collect())
}

/// Fits and scores replicate `replicate` of `scenario`.
pub fn run_replicate(scenario: &Scenario, replicate: usize, fit_config: &ModelConfig) -> ReplicateOutcome {
    match try_replicate(scenario, replicate, fit_config) {
        Ok(outcome) => outcome,
        Err(e) => ReplicateOutcome {
            replicate,
            sending_ari: f64::NAN,
            receiving_ari: f64::NAN,
            receiving_ari_unaligned: f64::NAN,
            b: vec![],
            mu: vec![],
            beta: vec![],
            log_likelihood: f64::NAN,
            converged: false,
            error: Some(e.to_string()),
        },
    }
}

fn mean_row_ari(fitted: &Array2<usize>, truth: &Array2<usize>, component_of: impl Fn(usize) -> usize) -> Result<f64> {
    let g = fitted.nrows();
    let mut total = 0.0;
    for c in 0..g {
        let f = fitted.row(c).to_vec();
        let t = truth.row(component_of(c)).to_vec();
        total += adjusted_rand_index(&f, &t)?;
    }
    Ok(total / g as f64)
}

fn try_replicate(scenario: &Scenario, replicate: usize, fit_config: &ModelConfig) -> Result<ReplicateOutcome> {
    let data = generate(scenario, replicate)?;
    let config = ModelConfig {
        components: scenario.components,
        segments: scenario.segments,
        seed: fit_seed(fit_config.seed, replicate),
        ..fit_config.clone()
    };
    let fitted = fit(&data.y, &data.x, &config)?;
    let truth = Truth::from_simulation(scenario, &data);
    let alignment = align_labels(&fitted.params, &fitted.sending_assignment, &truth)?;
    let aligned = relabel(&fitted.params, &alignment.relabeling());

    let sending_ari = adjusted_rand_index(&fitted.sending_assignment, &data.z)?;
    let receiving_ari = mean_row_ari(&aligned.assignments, &data.assignments, |c| c)?;
    let receiving_ari_unaligned = mean_row_ari(&fitted.params.assignments, &data.assignments, |c| c)?;
    Ok(ReplicateOutcome {
        replicate,
        sending_ari,
        receiving_ari,
        receiving_ari_unaligned,
        b: aligned.b.to_vec(),
        mu: aligned.mu.to_vec(),
        beta: aligned.beta.iter().copied().collect(),
        log_likelihood: fitted.log_likelihood,
        converged: fitted.converged,
        error: None,
    })
}

/// Seed for the fit of one replicate (splitmix64 of the base seed and index).
pub fn fit_seed(base: u64, replicate: usize) -> u64 {
    let mut z = base.wrapping_add((replicate as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let mid = sorted.len() / 2;
    if sorted.len().is_multiple_of(2) {
        0.5 * (sorted[mid - 1] + sorted[mid])
    } else {
        sorted[mid]
    }
}

fn mse(estimates: &[&[f64]], truth: &[f64]) -> Vec<f64> {
    (0..truth.len())
        .map(|p| mean(&estimates.iter().map(|e| (e[p] - truth[p]).powi(2)).collect::<Vec<_>>()))
        .collect()
}

/// Runs every replicate of `scenario` (in parallel, aggregated in replicate
/// order). `fit_config` supplies the estimation settings; its G and D are
/// replaced by the scenario's and its seed is mixed with the replicate index.
pub fn run_study(scenario: &Scenario, fit_config: &ModelConfig) -> Result<StudyReport> {
    scenario.validate()?;
    let replicates: Vec<ReplicateOutcome> = (0..scenario.n_replicates)
        .into_par_iter()
        .map(|rep| run_replicate(scenario, rep, fit_config))
        .collect();
    Ok(summarize(scenario, replicates))
}

pub fn summarize(scenario: &Scenario, replicates: Vec<ReplicateOutcome>) -> StudyReport {
    let ok: Vec<&ReplicateOutcome> = replicates.iter().filter(|r| r.error.is_none()).collect();
    let sending: Vec<f64> = ok.iter().map(|r| r.sending_ari).collect();
    let receiving: Vec<f64> = ok.iter().map(|r| r.receiving_ari).collect();
    let (b_true, mu_true) = identified_truth(&scenario.b, &scenario.mu);
    let beta_true: Vec<f64> = scenario.beta.iter().flatten().copied().collect();
    StudyReport {
        scenario: scenario.clone(),
        sending_ari_mean: mean(&sending),
        sending_ari_median: median(&sending),
        receiving_ari_mean: mean(&receiving),
        receiving_ari_median: median(&receiving),
        mse_b: mse(&ok.iter().map(|r| r.b.as_slice()).collect::<Vec<_>>(), &b_true),
        mse_mu: mse(&ok.iter().map(|r| r.mu.as_slice()).collect::<Vec<_>>(), &mu_true),
        mse_beta: mse(&ok.iter().map(|r| r.beta.as_slice()).collect::<Vec<_>>(), &beta_true),
        failures: replicates.len() - ok.len(),
        replicates,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ari_examples() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[1, 1, 2, 2], &[2, 2, 1, 1]).unwrap(), 1.0);
        assert!(adjusted_rand_index(&[1, 2], &[1]).is_err());
        assert!(adjusted_rand_index(&[1], &[1]).is_err());
    }

    #[test]
    fn ari_matches_pair_count_oracle() {
        // (1,1,1,2) vs (1,2,1,2): enumerate all 6 pairs directly
        let a = [1, 1, 1, 2];
        let b = [1, 2, 1, 2];
        let (mut both, mut only_a, mut only_b, mut neither) = (0.0, 0.0, 0.0, 0.0);
        for i in 0..4 {
            for j in (i + 1)..4 {
                match (a[i] == a[j], b[i] == b[j]) {
                    (true, true) => both += 1.0,
                    (true, false) => only_a += 1.0,
                    (false, true) => only_b += 1.0,
                    (false, false) => neither += 1.0,
                }
            }
        }
        let n = both + only_a + only_b + neither;
        let expected = (both + only_a) * (both + only_b) / n;
        let max = 0.5 * ((both + only_a) + (both + only_b));
        let oracle = (both - expected) / (max - expected);
        let ari = adjusted_rand_index(&a, &b).unwrap();
        assert!((ari - oracle).abs() < 1e-15);
        assert!(ari.abs() < 1e-15);
    }

    #[test]
    fn trivial_partitions() {
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[5, 5, 5]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 1, 2], &[2, 0, 1]).unwrap(), 1.0);
        assert_eq!(adjusted_rand_index(&[0, 0, 0], &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn balanced_blocks() {
        let s = Scenario::four_by_three(10, 20);
        let labels = s.block_labels();
        let counts: Vec<usize> = (0..3).map(|d| labels.iter().filter(|&&l| l == d).count()).collect();
        assert_eq!(counts, vec![7, 7, 6]);
        assert!(labels.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn identified_truth_keeps_sums() {
        let (b, mu) = identified_truth(&[-1.7, 0.0, 1.7, 0.7], &[-2.0, 0.5, 1.5]);
        assert!(b.iter().sum::<f64>().abs() < 1e-12);
        assert!((b[0] + mu[0] - (-3.7)).abs() < 1e-12);
        let (b, mu) = identified_truth(&[-1.7, 0.0, 1.7], &[-2.0, 0.5]);
        assert_eq!(b, vec![-1.7, 0.0, 1.7]);
        assert_eq!(mu, vec![-2.0, 0.5]);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
