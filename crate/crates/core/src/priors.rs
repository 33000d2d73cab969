//! Fixed structural priors: Pearson correlation for the functional view and
//! a discrete plug-in transfer-entropy estimator for the effective view.
//! Both stay constant through optimization.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signals::BoldMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Pearson,
    TransferEntropy,
}

/// An N x N structural prior. For the transfer-entropy kind, `values[i][j]`
/// measures information flow from region `j` into region `i`.
#[derive(Debug, Clone)]
pub struct PriorMatrix {
    values: Array2<f64>,
    kind: PriorKind,
    bins: Option<usize>,
    lag: Option<usize>,
}

impl PriorMatrix {
    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn bins(&self) -> Option<usize> {
        self.bins
    }

    pub fn lag(&self) -> Option<usize> {
        self.lag
    }

    /// Wrap a raw matrix as a prior; used by tests and the gradcheck
    /// harness to build instances with chosen entries.
    pub fn from_raw(values: Array2<f64>, kind: PriorKind) -> Self {
        PriorMatrix {
            values,
            kind,
            bins: None,
            lag: None,
        }
    }
}

/// Sample Pearson correlation of two equal-length series. Series with zero
/// variance correlate 0 with everything by convention.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "series length mismatch");
    let t = x.len() as f64;
    let mean_x = x.iter().sum::<f64>() / t;
    let mean_y = y.iter().sum::<f64>() / t;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for (&a, &b) in x.iter().zip(y) {
        let dx = a - mean_x;
        let dy = b - mean_y;
        cov += dx * dy;
        var_x += dx * dx;
        var_y += dy * dy;
    }
    if var_x <= 0.0 || var_y <= 0.0 {
        return 0.0;
    }
    cov / (var_x * var_y).sqrt()
}

/// Pairwise Pearson correlation; symmetric with unit diagonal.
pub fn pearson_matrix(bold: &BoldMatrix) -> PriorMatrix {
    let n = bold.n_regions();
    let values = bold.values();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        out[[i, i]] = 1.0;
        for j in (i + 1)..n {
            let r = pearson(
                values.row(i).as_slice().expect("row contiguous"),
                values.row(j).as_slice().expect("row contiguous"),
            );
            out[[i, j]] = r;
            out[[j, i]] = r;
        }
    }
    PriorMatrix {
        values: out,
        kind: PriorKind::Pearson,
        bins: None,
        lag: None,
    }
}

/// Equal-frequency discretization into `bins` levels. Ranks come from a
/// stable sort on (value, time index), so ties resolve deterministically.
pub fn equal_frequency_bins(series: &[f64], bins: usize) -> Vec<usize> {
    let t = series.len();
    let mut order: Vec<usize> = (0..t).collect();
    order.sort_by(|&a, &b| {
        series[a]
            .partial_cmp(&series[b])
            .expect("finite values")
            .then(a.cmp(&b))
    });
    let mut assignment = vec![0usize; t];
    for (rank, &idx) in order.iter().enumerate() {
        assignment[idx] = rank * bins / t;
    }
    assignment
}

/// Plug-in transfer entropy from `source` into `dest`, in bits.
///
/// Both series are discretized by equal-frequency binning; the estimate is
///
/// ```text
/// TE = sum p(y+, y, x) log2[ p(y+ | y, x) / p(y+ | y) ]
/// ```
///
/// over triples `y+ = dest[t+lag]`, `y = dest[t]`, `x = source[t]`.
/// Zero-count cells contribute nothing and the result is clamped at 0,
/// since rounding can push the plug-in estimate microscopically negative.
pub fn transfer_entropy(source: &[f64], dest: &[f64], bins: usize, lag: usize) -> Result<f64> {
    let t = source.len();
    if dest.len() != t {
        return Err(Error::Config("series length mismatch".into()));
    }
    if bins < 2 {
        return Err(Error::Config("bins must be >= 2".into()));
    }
    if bins > t {
        return Err(Error::Config(format!("bins {bins} > series length {t}")));
    }
    if lag < 1 {
        return Err(Error::Config("lag must be >= 1".into()));
    }
    if t < lag + 4 {
        return Err(Error::Config(format!(
            "series length {t} too short for lag {lag}"
        )));
    }
    if source.iter().chain(dest).any(|v| !v.is_finite()) {
        return Err(Error::Config("non-finite value in series".into()));
    }

    let x_bins = equal_frequency_bins(source, bins);
    let y_bins = equal_frequency_bins(dest, bins);
    let m = t - lag;

    let mut joint: BTreeMap<(usize, usize, usize), f64> = BTreeMap::new();
    let mut past_pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut future_pair: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let mut past: BTreeMap<usize, f64> = BTreeMap::new();
    for t0 in 0..m {
        let yf = y_bins[t0 + lag];
        let yp = y_bins[t0];
        let xp = x_bins[t0];
        *joint.entry((yf, yp, xp)).or_insert(0.0) += 1.0;
        *past_pair.entry((yp, xp)).or_insert(0.0) += 1.0;
        *future_pair.entry((yf, yp)).or_insert(0.0) += 1.0;
        *past.entry(yp).or_insert(0.0) += 1.0;
    }

    let m = m as f64;
    let mut te = 0.0;
    for (&(yf, yp, xp), &c_joint) in &joint {
        let c_past_pair = past_pair[&(yp, xp)];
        let c_future_pair = future_pair[&(yf, yp)];
        let c_past = past[&yp];
        te += (c_joint / m) * ((c_joint * c_past) / (c_past_pair * c_future_pair)).log2();
    }
    Ok(te.max(0.0))
}

/// Pairwise transfer entropy with zero diagonal. `values[i][j]` is the flow
/// from region `j` into region `i`.
pub fn transfer_entropy_matrix(bold: &BoldMatrix, bins: usize, lag: usize) -> Result<PriorMatrix> {
    let n = bold.n_regions();
    let values = bold.values();
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            out[[i, j]] = transfer_entropy(
                values.row(j).as_slice().expect("row contiguous"),
                values.row(i).as_slice().expect("row contiguous"),
                bins,
                lag,
            )?;
        }
    }
    Ok(PriorMatrix {
        values: out,
        kind: PriorKind::TransferEntropy,
        bins: Some(bins),
        lag: Some(lag),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_self_and_flip() {
        let x = [0.3, -1.2, 0.7, 2.0, -0.4, 0.1, 1.5, -2.2];
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x) - 1.0).abs() < 1e-12);
        assert!((pearson(&x, &neg) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn pearson_hand_value() {
        // cov*T = 6.5, sqrt(Sxx*Syy) = sqrt(43.75)
        let r = pearson(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 5.0]);
        assert!((r - 6.5 / 43.75f64.sqrt()).abs() < 1e-12);
        assert!((r - 0.9827).abs() < 1e-4);
    }

    #[test]
    fn pearson_matrix_symmetric_bounded() {
        let d = crate::signals::synth_generate(1, 6, 64, 1, 0.5, 1.0, 9).unwrap();
        let p = pearson_matrix(&d.subjects[0].bold);
        let v = p.values();
        for i in 0..6 {
            assert_eq!(v[[i, i]], 1.0);
            for j in 0..6 {
                assert!((v[[i, j]] - v[[j, i]]).abs() < 1e-12);
                assert!(v[[i, j]] >= -1.0 - 1e-12 && v[[i, j]] <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn constant_row_correlates_zero() {
        let values = Array2::from_shape_vec(
            (2, 8),
            vec![3.0; 8]
                .into_iter()
                .chain([1.0, 2.0, 1.5, 3.0, 0.5, 2.5, 1.0, 2.0])
                .collect(),
        )
        .unwrap();
        let bold = BoldMatrix::from_values(values).unwrap();
        let p = pearson_matrix(&bold);
        assert_eq!(p.values()[[0, 1]], 0.0);
        assert_eq!(p.values()[[0, 0]], 1.0);
    }

    #[test]
    fn equal_frequency_bins_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let series: Vec<f64> = (0..103).map(|_| rng.random::<f64>()).collect();
        let assignment = equal_frequency_bins(&series, 8);
        let mut counts = [0usize; 8];
        for &b in &assignment {
            counts[b] += 1;
        }
        let min = counts.iter().min().unwrap();
        let max = counts.iter().max().unwrap();
        assert!(max - min <= 1, "{counts:?}");
    }

    #[test]
    fn equal_frequency_ties_are_stable() {
        let series = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        assert_eq!(equal_frequency_bins(&series, 2), vec![0, 0, 0, 1, 1, 1]);
    }

    fn binary_series(rng: &mut ChaCha8Rng, t: usize) -> Vec<f64> {
        (0..t).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn te_deterministic_copy_approaches_one_bit() {
        // y[t+1] = x[t]: one full bit flows x -> y, none the other way.
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let t = 2000;
        let x = binary_series(&mut rng, t);
        let mut y = vec![0.0; t];
        y[0] = if rng.random::<bool>() { 1.0 } else { 0.0 };
        for i in 1..t {
            y[i] = x[i - 1];
        }
        let forward = transfer_entropy(&x, &y, 2, 1).unwrap();
        let backward = transfer_entropy(&y, &x, 2, 1).unwrap();
        assert!(forward >= 0.95, "forward {forward}");
        assert!(backward <= 0.05, "backward {backward}");
    }

    #[test]
    fn te_independent_series_near_zero() {
        let mut hits = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
            let x: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
            let y: Vec<f64> = (0..2000).map(|_| rng.random::<f64>()).collect();
            if transfer_entropy(&x, &y, 2, 1).unwrap() < 0.01 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "only {hits}/100 under the bias bound");
    }

    #[test]
    fn te_nonnegative_zero_diagonal() {
        let d = crate::signals::synth_generate(1, 5, 100, 1, 0.5, 1.0, 21).unwrap();
        let te = transfer_entropy_matrix(&d.subjects[0].bold, 4, 1).unwrap();
        for i in 0..5 {
            assert_eq!(te.values()[[i, i]], 0.0);
            for j in 0..5 {
                assert!(te.values()[[i, j]] >= 0.0);
            }
        }
    }

    #[test]
    fn te_directionality_on_coupled_process() {
        // With a single directed edge j -> i, flow j -> i should dominate
        // in nearly every seeded trial.
        let mut wins = 0;
        for seed in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = 400;
            let mut x = vec![0.0f64; t];
            let mut y = vec![0.0f64; t];
            x[0] = rng.random::<f64>() - 0.5;
            y[0] = rng.random::<f64>() - 0.5;
            for i in 1..t {
                let nx: f64 = rng.random::<f64>() - 0.5;
                let ny: f64 = rng.random::<f64>() - 0.5;
                x[i] = nx;
                y[i] = 0.8 * x[i - 1] + 0.5 * ny;
            }
            let fwd = transfer_entropy(&x, &y, 8, 1).unwrap();
            let bwd = transfer_entropy(&y, &x, 8, 1).unwrap();
            if fwd > bwd {
                wins += 1;
            }
        }
        assert!(wins >= 95, "direction won {wins}/100");
    }

    #[test]
    fn te_class_templates_show_up() {
        // An edge present only in class 1 carries more flow there.
        let config = crate::signals::SynthConfig {
            n_subjects: 20,
            n_regions: 8,
            n_timepoints: 400,
            n_classes: 2,
            coupling_strength: 0.6,
            noise_std: 1.0,
            seed: 13,
        };
        let templates = config.templates();
        let (mut ti, mut tj) = (usize::MAX, usize::MAX);
        'outer: for i in 0..8 {
            for j in 0..8 {
                if templates[1][[i, j]] > 0.0 && templates[0][[i, j]] == 0.0 {
                    ti = i;
                    tj = j;
                    break 'outer;
                }
            }
        }
        assert!(ti != usize::MAX, "no class-1-only edge found");
        let dataset = config.generate().unwrap();
        let mut mean = [0.0f64; 2];
        let mut count = [0usize; 2];
        for s in &dataset.subjects {
            let te = transfer_entropy_matrix(&s.bold, 8, 1).unwrap();
            let k = s.label.unwrap() as usize;
            mean[k] += te.values()[[ti, tj]];
            count[k] += 1;
        }
        let m0 = mean[0] / count[0] as f64;
        let m1 = mean[1] / count[1] as f64;
        assert!(m1 > m0, "class1 {m1} <= class0 {m0}");
    }

    #[test]
    fn priors_permutation_equivariant() {
        let d = crate::signals::synth_generate(1, 5, 80, 1, 0.5, 1.0, 30).unwrap();
        let bold = &d.subjects[0].bold;
        let perm = [3usize, 0, 4, 1, 2];
        let mut permuted = Array2::<f64>::zeros((5, 80));
        for (new_i, &old_i) in perm.iter().enumerate() {
            permuted.row_mut(new_i).assign(&bold.values().row(old_i));
        }
        let permuted = BoldMatrix::from_values(permuted).unwrap();

        let p0 = pearson_matrix(bold);
        let p1 = pearson_matrix(&permuted);
        let t0 = transfer_entropy_matrix(bold, 4, 1).unwrap();
        let t1 = transfer_entropy_matrix(&permuted, 4, 1).unwrap();
        for new_i in 0..5 {
            for new_j in 0..5 {
                let (old_i, old_j) = (perm[new_i], perm[new_j]);
                assert_eq!(p1.values()[[new_i, new_j]], p0.values()[[old_i, old_j]]);
                assert_eq!(t1.values()[[new_i, new_j]], t0.values()[[old_i, old_j]]);
            }
        }
    }

    #[test]
    fn te_rejects_bad_parameters() {
        let x = vec![0.0; 16];
        assert!(transfer_entropy(&x, &x, 20, 1).is_err()); // bins > T
        assert!(transfer_entropy(&x, &x, 1, 1).is_err());
        assert!(transfer_entropy(&x, &x, 2, 0).is_err());
        assert!(transfer_entropy(&x[..4], &x[..4], 2, 1).is_err());
    }
}
