//! Statistical screening of the feature matrix: Pearson correlations of
//! features against process parameters with t-distribution p-values,
//! average-linkage clustering of the feature correlation matrix, and PCA
//! with explained-variance reporting.

use nalgebra::DMatrix;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Product-moment correlation. Inputs must have equal length ≥ 3 and
/// nonzero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimMismatch(format!(
            "pearson inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "pearson needs ≥ 3 samples, got {}",
            x.len()
        )));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ConstantSeries(
            "pearson input column has zero variance".into(),
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-sided p-value for r under the null, via t = r·√((n−2)/(1−r²)) with
/// n − 2 degrees of freedom. No multiple-testing adjustment is applied.
pub fn pearson_p_value(r: f64, n: usize) -> Result<f64> {
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "p-value needs n ≥ 3, got {n}"
        )));
    }
    let df = (n - 2) as f64;
    let denom = 1.0 - r * r;
    if denom <= 0.0 {
        return Ok(0.0);
    }
    let t = r.abs() * (df / denom).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| Error::InvalidArgument(format!("t-distribution: {e}")))?;
    Ok((2.0 * (1.0 - dist.cdf(t))).clamp(0.0, 1.0))
}

#[derive(Debug, Clone)]
pub struct FlaggedPair {
    pub parameter: String,
    pub feature: String,
    pub r: f64,
    pub p: f64,
}

/// Feature-against-parameter correlation screen. `r` and `p` are
/// features × parameters; entries involving a constant column are NaN and
/// the column is listed in `skipped`.
#[derive(Debug, Clone)]
pub struct CorrelationReport {
    pub feature_ids: Vec<String>,
    pub param_ids: Vec<String>,
    pub r: DMatrix<f64>,
    pub p: DMatrix<f64>,
    pub threshold: f64,
    /// |r| > threshold, sorted by |r| descending.
    pub flagged: Vec<FlaggedPair>,
    pub skipped: Vec<String>,
}

impl CorrelationReport {
    /// All finite pairs sorted by |r| descending:
    /// `parameter,feature,r,p,flagged`.
    pub fn csv_string(&self) -> String {
        let mut rows: Vec<(usize, usize)> = (0..self.feature_ids.len())
            .flat_map(|i| (0..self.param_ids.len()).map(move |j| (i, j)))
            .filter(|&(i, j)| self.r[(i, j)].is_finite())
            .collect();
        rows.sort_by(|&(ai, aj), &(bi, bj)| {
            self.r[(bi, bj)]
                .abs()
                .partial_cmp(&self.r[(ai, aj)].abs())
                .unwrap()
                .then(ai.cmp(&bi))
                .then(aj.cmp(&bj))
        });
        let mut out = String::from("parameter,feature,r,p,flagged\n");
        for (i, j) in rows {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.param_ids[j],
                self.feature_ids[i],
                self.r[(i, j)],
                self.p[(i, j)],
                self.r[(i, j)].abs() > self.threshold
            ));
        }
        out
    }
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|&x| x == v[0])
}

/// Correlates every feature column against every parameter column. Constant
/// columns are skipped with a warning entry rather than failing the screen.
pub fn correlation_screen(
    features: &DMatrix<f64>,
    feature_ids: &[String],
    params: &DMatrix<f64>,
    param_ids: &[String],
    threshold: f64,
) -> Result<CorrelationReport> {
    if features.ncols() != feature_ids.len() || params.ncols() != param_ids.len() {
        return Err(Error::DimMismatch(
            "column count does not match id count".into(),
        ));
    }
    if features.nrows() != params.nrows() {
        return Err(Error::DimMismatch(format!(
            "feature rows {} vs parameter rows {}",
            features.nrows(),
            params.nrows()
        )));
    }
    if features.nrows() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation screen needs ≥ 3 rows, got {}",
            features.nrows()
        )));
    }
    let n = features.nrows();
    let fcols: Vec<Vec<f64>> = (0..features.ncols()).map(|j| column(features, j)).collect();
    let pcols: Vec<Vec<f64>> = (0..params.ncols()).map(|j| column(params, j)).collect();

    let mut skipped: Vec<String> = Vec::new();
    for (j, col) in fcols.iter().enumerate() {
        if is_constant(col) {
            skipped.push(feature_ids[j].clone());
        }
    }
    for (j, col) in pcols.iter().enumerate() {
        if is_constant(col) {
            skipped.push(param_ids[j].clone());
        }
    }

    let rows: Vec<Vec<(f64, f64)>> = fcols
        .par_iter()
        .map(|f| {
            pcols
                .iter()
                .map(|p| {
                    if is_constant(f) || is_constant(p) {
                        (f64::NAN, f64::NAN)
                    } else {
                        let r = pearson(f, p).expect("non-constant columns");
                        let pv = pearson_p_value(r, n).expect("n checked above");
                        (r, pv)
                    }
                })
                .collect()
        })
        .collect();

    let mut r = DMatrix::zeros(fcols.len(), pcols.len());
    let mut p = DMatrix::zeros(fcols.len(), pcols.len());
    for (i, row) in rows.iter().enumerate() {
        for (j, &(rv, pv)) in row.iter().enumerate() {
            r[(i, j)] = rv;
            p[(i, j)] = pv;
        }
    }

    let mut flagged: Vec<(usize, usize)> = (0..fcols.len())
        .flat_map(|i| (0..pcols.len()).map(move |j| (i, j)))
        .filter(|&(i, j)| r[(i, j)].is_finite() && r[(i, j)].abs() > threshold)
        .collect();
    flagged.sort_by(|&(ai, aj), &(bi, bj)| {
        r[(bi, bj)]
            .abs()
            .partial_cmp(&r[(ai, aj)].abs())
            .unwrap()
            .then(ai.cmp(&bi))
            .then(aj.cmp(&bj))
    });
    let flagged = flagged
        .into_iter()
        .map(|(i, j)| FlaggedPair {
            parameter: param_ids[j].clone(),
            feature: feature_ids[i].clone(),
            r: r[(i, j)],
            p: p[(i, j)],
        })
        .collect();

    Ok(CorrelationReport {
        feature_ids: feature_ids.to_vec(),
        param_ids: param_ids.to_vec(),
        r,
        p,
        threshold,
        flagged,
        skipped,
    })
}

/// Binary dendrogram from agglomerative clustering.
#[derive(Debug, Clone)]
pub enum DendrogramNode {
    Leaf(usize),
    Merge {
        left: Box<DendrogramNode>,
        right: Box<DendrogramNode>,
        height: f64,
    },
}

impl DendrogramNode {
    pub fn leaves(&self) -> Vec<usize> {
        match self {
            DendrogramNode::Leaf(i) => vec![*i],
            DendrogramNode::Merge { left, right, .. } => {
                let mut v = left.leaves();
                v.extend(right.leaves());
                v
            }
        }
    }

    pub fn height(&self) -> f64 {
        match self {
            DendrogramNode::Leaf(_) => 0.0,
            DendrogramNode::Merge { height, .. } => *height,
        }
    }

    /// All merge heights, ascending.
    pub fn merge_heights(&self) -> Vec<f64> {
        let mut out = Vec::new();
        fn walk(n: &DendrogramNode, out: &mut Vec<f64>) {
            if let DendrogramNode::Merge { left, right, height } = n {
                walk(left, out);
                walk(right, out);
                out.push(*height);
            }
        }
        walk(self, &mut out);
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    /// Every merge at least as high as its children (no inversions).
    pub fn heights_monotone(&self) -> bool {
        match self {
            DendrogramNode::Leaf(_) => true,
            DendrogramNode::Merge { left, right, height } => {
                *height >= left.height() - 1e-12
                    && *height >= right.height() - 1e-12
                    && left.heights_monotone()
                    && right.heights_monotone()
            }
        }
    }

    /// Parenthesized text rendering with merge heights, named by
    /// `labels[leaf]`.
    pub fn to_text(&self, labels: &[String]) -> String {
        match self {
            DendrogramNode::Leaf(i) => labels[*i].clone(),
            DendrogramNode::Merge { left, right, height } => format!(
                "({},{}):{:.6}",
                left.to_text(labels),
                right.to_text(labels),
                height
            ),
        }
    }

    /// Cuts the tree into k clusters by repeatedly splitting the subtree
    /// with the largest merge height. Clusters are sorted by smallest member
    /// and internally ascending.
    pub fn cut(&self, k: usize) -> Result<Vec<Vec<usize>>> {
        let n = self.leaves().len();
        if k == 0 || k > n {
            return Err(Error::InvalidArgument(format!(
                "cannot cut {n} leaves into {k} clusters"
            )));
        }
        let mut parts: Vec<&DendrogramNode> = vec![self];
        while parts.len() < k {
            let (idx, _) = parts
                .iter()
                .enumerate()
                .filter(|(_, n)| matches!(n, DendrogramNode::Merge { .. }))
                .max_by(|(ai, a), (bi, b)| {
                    a.height()
                        .partial_cmp(&b.height())
                        .unwrap()
                        .then(bi.cmp(ai))
                })
                .expect("k ≤ leaf count ensures a splittable node");
            let DendrogramNode::Merge { left, right, .. } = parts.remove(idx) else {
                unreachable!()
            };
            parts.push(left);
            parts.push(right);
        }
        let mut clusters: Vec<Vec<usize>> = parts
            .into_iter()
            .map(|p| {
                let mut l = p.leaves();
                l.sort_unstable();
                l
            })
            .collect();
        clusters.sort_by_key(|c| c[0]);
        Ok(clusters)
    }
}

/// Average-linkage agglomerative clustering of a feature correlation matrix
/// on dissimilarity 1 − |r|. Ties break toward the pair with the lowest
/// feature indices.
pub fn cluster_features(corr: &DMatrix<f64>) -> Result<DendrogramNode> {
    let n = corr.nrows();
    if n == 0 {
        return Err(Error::Empty("correlation matrix".into()));
    }
    if corr.ncols() != n {
        return Err(Error::DimMismatch(format!(
            "correlation matrix is {}×{}",
            n,
            corr.ncols()
        )));
    }
    for i in 0..n {
        if (corr[(i, i)] - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "correlation diagonal entry {i} is {}, expected 1",
                corr[(i, i)]
            )));
        }
        for j in (i + 1)..n {
            if (corr[(i, j)] - corr[(j, i)]).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "correlation matrix not symmetric at ({i},{j})"
                )));
            }
        }
    }

    // Active clusters: (lowest member index for tie-breaks, size, node).
    struct Cluster {
        key: usize,
        size: usize,
        node: DendrogramNode,
    }
    let mut clusters: Vec<Cluster> = (0..n)
        .map(|i| Cluster { key: i, size: 1, node: DendrogramNode::Leaf(i) })
        .collect();
    // dist[a][b]: average pairwise dissimilarity between clusters a and b.
    let mut dist: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| 1.0 - corr[(i, j)].abs()).collect())
        .collect();

    while clusters.len() > 1 {
        let m = clusters.len();
        let (mut bi, mut bj, mut bd) = (0usize, 1usize, f64::INFINITY);
        for i in 0..m {
            for j in (i + 1)..m {
                let d = dist[i][j];
                let better = d < bd
                    || (d == bd
                        && (clusters[i].key, clusters[j].key)
                            < (clusters[bi].key, clusters[bj].key));
                if better {
                    bi = i;
                    bj = j;
                    bd = d;
                }
            }
        }
        // Lance-Williams update for average linkage.
        let (si, sj) = (clusters[bi].size as f64, clusters[bj].size as f64);
        let merged_dist: Vec<f64> = (0..m)
            .filter(|&k| k != bi && k != bj)
            .map(|k| (si * dist[bi][k] + sj * dist[bj][k]) / (si + sj))
            .collect();

        let right = clusters.remove(bj);
        let left = clusters.remove(bi);
        // Lower-key child on the left for a canonical rendering.
        let (left, right) = if left.key <= right.key { (left, right) } else { (right, left) };
        let node = DendrogramNode::Merge {
            left: Box::new(left.node),
            right: Box::new(right.node),
            height: bd,
        };
        clusters.push(Cluster {
            key: left.key.min(right.key),
            size: left.size + right.size,
            node,
        });

        for row in dist.iter_mut() {
            row.remove(bj);
            row.remove(bi);
        }
        dist.remove(bj);
        dist.remove(bi);
        let mut new_row = merged_dist;
        new_row.push(0.0);
        for (k, row) in dist.iter_mut().enumerate() {
            row.push(new_row[k]);
        }
        dist.push(new_row);
    }
    Ok(clusters.pop().expect("n ≥ 1").node)
}

/// PCA of a component × feature matrix.
#[derive(Debug, Clone)]
pub struct PcaResult {
    /// Orthonormal loadings, one column per component, descending variance.
    pub loadings: DMatrix<f64>,
    pub explained_ratio: Vec<f64>,
    pub cumulative_ratio: Vec<f64>,
    /// Column means of the input, and the scale divisors used (1s when not
    /// standardizing); needed to project new data consistently.
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl PcaResult {
    /// Components needed to reach a cumulative explained-variance target.
    pub fn components_for(&self, target: f64) -> usize {
        self.cumulative_ratio
            .iter()
            .position(|&c| c >= target)
            .map(|i| i + 1)
            .unwrap_or(self.cumulative_ratio.len())
    }

    /// `component,ratio,cumulative` scree table.
    pub fn scree_csv(&self) -> String {
        let mut out = String::from("component,ratio,cumulative\n");
        for (i, (r, c)) in self.explained_ratio.iter().zip(&self.cumulative_ratio).enumerate() {
            out.push_str(&format!("{},{},{}\n", i + 1, r, c));
        }
        out
    }

    /// Centered/standardized copy of a matrix using the fit's means and
    /// scales.
    pub fn transform_input(&self, m: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = m.clone();
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] = (out[(i, j)] - self.means[j]) / self.scales[j];
            }
        }
        out
    }

    /// Projection onto the first k components.
    pub fn project(&self, m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
        let x = self.transform_input(m);
        x * self.loadings.columns(0, k)
    }
}

/// Eigen-decomposition of the (optionally standardized) covariance matrix.
/// Standardization treats zero-variance columns as scale 1 so they stay
/// zero after centering instead of dividing by zero.
pub fn pca(features: &DMatrix<f64>, standardize: bool) -> Result<PcaResult> {
    let n = features.nrows();
    let d = features.ncols();
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "pca needs ≥ 2 rows, got {n}"
        )));
    }
    if d == 0 {
        return Err(Error::Empty("pca input has no columns".into()));
    }
    let mut means = vec![0.0; d];
    let mut scales = vec![1.0; d];
    for j in 0..d {
        means[j] = features.column(j).iter().sum::<f64>() / n as f64;
        if standardize {
            let ss: f64 = features.column(j).iter().map(|x| (x - means[j]).powi(2)).sum();
            let sd = (ss / (n - 1) as f64).sqrt();
            if sd > 0.0 {
                scales[j] = sd;
            }
        }
    }
    let mut x = features.clone();
    for j in 0..d {
        for i in 0..n {
            x[(i, j)] = (x[(i, j)] - means[j]) / scales[j];
        }
    }
    let cov = x.transpose() * &x / (n - 1) as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let total: f64 = eig.eigenvalues.iter().map(|&l| l.max(0.0)).sum();
    if total <= 0.0 {
        return Err(Error::ConstantSeries("pca input has zero total variance".into()));
    }
    let mut loadings = DMatrix::zeros(d, d);
    let mut ratios = Vec::with_capacity(d);
    for (k, &idx) in order.iter().enumerate() {
        let mut col: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = (0..d)
            .max_by(|&a, &b| col[a].abs().partial_cmp(&col[b].abs()).unwrap())
            .unwrap();
        if col[pivot] < 0.0 {
            col.iter_mut().for_each(|v| *v = -*v);
        }
        for (i, v) in col.iter().enumerate() {
            loadings[(i, k)] = *v;
        }
        ratios.push(eig.eigenvalues[idx].max(0.0) / total);
    }
    let mut cumulative = Vec::with_capacity(d);
    let mut acc = 0.0;
    for r in &ratios {
        acc += r;
        cumulative.push(acc);
    }
    Ok(PcaResult { loadings, explained_ratio: ratios, cumulative_ratio: cumulative, means, scales })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pearson_identity_and_affine() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -2.0 * v + 7.0).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn pearson_hand_computed() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [2.0, 1.0, 4.0, 3.0];
        assert!((pearson(&x, &y).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn pearson_errors() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::ConstantSeries(_))
        ));
        assert!(matches!(
            pearson(&[1.0, 2.0], &[1.0, 2.0, 3.0]),
            Err(Error::DimMismatch(_))
        ));
        assert!(pearson(&[1.0, 2.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn p_value_extremes_and_table_row() {
        assert!((pearson_p_value(0.0, 20).unwrap() - 1.0).abs() < 1e-12);
        assert!(pearson_p_value(1.0, 20).unwrap() < 1e-15);
        // n=20, r=0.5 → t = 2.449 on 18 df, between the 0.05 and 0.02
        // two-sided critical values (2.101, 2.552).
        let p = pearson_p_value(0.5, 20).unwrap();
        assert!(p > 0.02 && p < 0.05, "p = {p}");
    }

    #[test]
    fn p_value_null_calibration() {
        // Under the null, p < 0.05 should fire ~5% of the time.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let trials = 2000;
        let mut hits = 0;
        for _ in 0..trials {
            let x: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = pearson(&x, &y).unwrap();
            if pearson_p_value(r, 12).unwrap() < 0.05 {
                hits += 1;
            }
        }
        let rate = hits as f64 / trials as f64;
        assert!((rate - 0.05).abs() < 0.02, "false-positive rate {rate}");
    }

    fn named(ids: &[&str]) -> Vec<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn screen_flags_planted_negative_link() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 60;
        let speed: Vec<f64> = (0..n).map(|_| rng.gen_range(50.0..150.0)).collect();
        let rough: Vec<f64> = speed
            .iter()
            .map(|s| 2.0 - 0.01 * s + rng.gen_range(-0.1..0.1))
            .collect();
        let indep: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let features = DMatrix::from_vec(n, 2, [rough, indep].concat());
        let params = DMatrix::from_vec(n, 1, speed);
        let report = correlation_screen(
            &features,
            &named(&["ra_top", "noise"]),
            &params,
            &named(&["cutting_speed"]),
            0.3,
        )
        .unwrap();
        assert!(!report.flagged.is_empty());
        let top = &report.flagged[0];
        assert_eq!(top.feature, "ra_top");
        assert!(top.r < -0.3, "r = {}", top.r);
        assert!(top.p < 0.001);
        // Sorted by |r| descending.
        for w in report.flagged.windows(2) {
            assert!(w[0].r.abs() >= w[1].r.abs());
        }
    }

    #[test]
    fn screen_null_rarely_flags() {
        let mut false_seeds = 0;
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = 200;
            let f: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let p: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let report = correlation_screen(
                &DMatrix::from_vec(n, 1, f),
                &named(&["f"]),
                &DMatrix::from_vec(n, 1, p),
                &named(&["p"]),
                0.3,
            )
            .unwrap();
            if !report.flagged.is_empty() {
                false_seeds += 1;
            }
        }
        assert!(false_seeds <= 2, "{false_seeds}/20 null seeds flagged");
    }

    #[test]
    fn screen_skips_constant_column() {
        let n = 10;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let features = DMatrix::from_vec(n, 1, vec![3.5; n]);
        let params = DMatrix::from_vec(n, 1, xs);
        let report = correlation_screen(
            &features,
            &named(&["flat"]),
            &params,
            &named(&["p"]),
            0.3,
        )
        .unwrap();
        assert_eq!(report.skipped, vec!["flat".to_string()]);
        assert!(report.r[(0, 0)].is_nan());
        assert!(report.flagged.is_empty());
        let csv = report.csv_string();
        assert_eq!(csv, "parameter,feature,r,p,flagged\n");
    }

    #[test]
    fn screen_csv_has_expected_shape() {
        let n = 12;
        let xs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let report = correlation_screen(
            &DMatrix::from_vec(n, 1, ys),
            &named(&["feat"]),
            &DMatrix::from_vec(n, 1, xs),
            &named(&["param"]),
            0.3,
        )
        .unwrap();
        let csv = report.csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("parameter,feature,r,p,flagged"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("param,feat,1,"), "{row}");
        assert!(row.ends_with(",true"));
    }

    fn block_corr(blocks: &[Vec<usize>], n: usize, within: f64, across: f64) -> DMatrix<f64> {
        let mut m = DMatrix::from_element(n, n, across);
        for b in blocks {
            for &i in b {
                for &j in b {
                    m[(i, j)] = within;
                }
            }
        }
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    #[test]
    fn duplicated_features_merge_at_zero() {
        // Features 0 and 2 perfectly correlated.
        let mut m = block_corr(&[], 3, 0.0, 0.1);
        m[(0, 2)] = 1.0;
        m[(2, 0)] = 1.0;
        let tree = cluster_features(&m).unwrap();
        let heights = tree.merge_heights();
        assert!(heights[0].abs() < 1e-12);
        let clusters = tree.cut(2).unwrap();
        assert_eq!(clusters, vec![vec![0, 2], vec![1]]);
    }

    #[test]
    fn two_planted_blocks_recovered_at_k2() {
        let blocks = vec![vec![0, 1, 2], vec![3, 4, 5, 6]];
        let m = block_corr(&blocks, 7, 0.85, 0.05);
        let tree = cluster_features(&m).unwrap();
        assert_eq!(tree.cut(2).unwrap(), vec![vec![0, 1, 2], vec![3, 4, 5, 6]]);
    }

    #[test]
    fn five_planted_blocks_recovered_at_k5() {
        let blocks: Vec<Vec<usize>> =
            vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7, 8], vec![9, 10], vec![11, 12, 13]];
        let m = block_corr(&blocks, 14, 0.9, 0.08);
        let tree = cluster_features(&m).unwrap();
        assert_eq!(tree.cut(5).unwrap(), blocks);
    }

    #[test]
    fn anticorrelated_features_cluster_together() {
        // |r| metric: strong negative correlation is similarity.
        let mut m = block_corr(&[], 3, 0.0, 0.05);
        m[(0, 1)] = -0.95;
        m[(1, 0)] = -0.95;
        let tree = cluster_features(&m).unwrap();
        assert_eq!(tree.cut(2).unwrap(), vec![vec![0, 1], vec![2]]);
    }

    #[test]
    fn cluster_rejects_bad_input() {
        let mut m = block_corr(&[], 3, 0.0, 0.2);
        m[(0, 1)] = 0.5;
        assert!(cluster_features(&m).is_err());
        let mut d = block_corr(&[], 3, 0.0, 0.2);
        d[(1, 1)] = 0.7;
        assert!(cluster_features(&d).is_err());
    }

    #[test]
    fn dendrogram_text_is_deterministic() {
        let m = block_corr(&[vec![0, 1]], 3, 0.8, 0.1);
        let tree = cluster_features(&m).unwrap();
        let labels = named(&["a", "b", "c"]);
        let text = tree.to_text(&labels);
        assert_eq!(text, "((a,b):0.200000,c):0.900000");
    }

    #[test]
    fn pca_rank_one_line() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dir = [1.0, -2.0, 0.5];
        let rows: Vec<f64> = (0..50)
            .flat_map(|_| {
                let t: f64 = rng.gen_range(-1.0..1.0);
                dir.iter().map(move |d| d * t)
            })
            .collect();
        let m = DMatrix::from_row_slice(50, 3, &rows);
        let res = pca(&m, true).unwrap();
        assert!(res.explained_ratio[0] >= 0.9999);
    }

    #[test]
    fn pca_isotropic_two_dee() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 10_000;
        let mut rows = Vec::with_capacity(2 * n);
        for _ in 0..n {
            // Sum of 12 uniforms: near-Gaussian, variance 1.
            let g = |rng: &mut ChaCha8Rng| {
                (0..12).map(|_| rng.gen_range(0.0..1.0)).sum::<f64>() - 6.0
            };
            rows.push(g(&mut rng));
            rows.push(g(&mut rng));
        }
        let m = DMatrix::from_row_slice(n, 2, &rows);
        let res = pca(&m, false).unwrap();
        assert!((res.explained_ratio[0] - 0.5).abs() < 0.02);
        assert!((res.explained_ratio[1] - 0.5).abs() < 0.02);
    }

    #[test]
    fn pca_ratio_invariants_and_scree() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<f64> = (0..40 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = DMatrix::from_row_slice(40, 4, &rows);
        let res = pca(&m, true).unwrap();
        let sum: f64 = res.explained_ratio.iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        for w in res.explained_ratio.windows(2) {
            assert!(w[0] >= w[1] - 1e-12);
        }
        assert!((res.cumulative_ratio.last().unwrap() - 1.0).abs() < 1e-9);
        let csv = res.scree_csv();
        assert!(csv.starts_with("component,ratio,cumulative\n1,"));
        assert_eq!(csv.lines().count(), 5);
        assert_eq!(res.components_for(1.0), 4);
    }

    #[test]
    fn pca_loadings_orthonormal_and_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let rows: Vec<f64> = (0..30 * 5)
            .map(|_| rng.gen_range(-2.0..2.0))
            .collect();
        let m = DMatrix::from_row_slice(30, 5, &rows);
        let res = pca(&m, true).unwrap();
        let gram = res.loadings.transpose() * &res.loadings;
        assert!((gram - DMatrix::identity(5, 5)).abs().max() < 1e-9);
        // Full-rank projection reconstructs the standardized matrix.
        let xs = res.transform_input(&m);
        let recon = res.project(&m, 5) * res.loadings.transpose();
        assert!((recon - xs).abs().max() < 1e-9);
    }

    #[test]
    fn pca_rejects_degenerate_input() {
        assert!(pca(&DMatrix::from_vec(1, 2, vec![1.0, 2.0]), true).is_err());
        assert!(matches!(
            pca(&DMatrix::from_element(5, 2, 3.0), true),
            Err(Error::ConstantSeries(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn pearson_symmetric_scale_invariant_bounded(
            seed in 0u64..1000,
            a in prop_oneof![(-5.0f64..-0.01), (0.01f64..5.0)],
            b in -10.0f64..10.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..20).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = pearson(&x, &y).unwrap();
            prop_assert!((-1.0..=1.0).contains(&r));
            prop_assert!((r - pearson(&y, &x).unwrap()).abs() < 1e-12);
            let xs: Vec<f64> = x.iter().map(|v| a * v + b).collect();
            let rs = pearson(&xs, &y).unwrap();
            prop_assert!((rs - a.signum() * r).abs() < 1e-9);
        }

        #[test]
        fn merge_heights_monotone(seed in 0u64..1000, n in 3usize..12) {
            // Random correlation matrix from random data: PSD and symmetric.
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let rows = n + 5;
            let data: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let m = DMatrix::from_row_slice(rows, n, &data);
            let mut corr = DMatrix::identity(n, n);
            for i in 0..n {
                for j in (i + 1)..n {
                    let x: Vec<f64> = m.column(i).iter().copied().collect();
                    let y: Vec<f64> = m.column(j).iter().copied().collect();
                    let r = pearson(&x, &y).unwrap();
                    corr[(i, j)] = r;
                    corr[(j, i)] = r;
                }
            }
            let tree = cluster_features(&corr).unwrap();
            prop_assert_eq!(tree.merge_heights().len(), n - 1);
            prop_assert!(tree.heights_monotone());
            // Every k-cut partitions the full index set.
            for k in 1..=n {
                let cut = tree.cut(k).unwrap();
                let mut all: Vec<usize> = cut.into_iter().flatten().collect();
                all.sort_unstable();
                prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
            }
        }
    }
}
