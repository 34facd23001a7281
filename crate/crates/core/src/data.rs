//! Point and pair datasets: CSV ingestion, pair sampling, SD label noise,
//! prior derivation, synthetic Gaussians and k-fold splits.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::{NoiseSpec, Priors};
use crate::rng::Rng;

/// De-noised similar-pair prior may undershoot 0.5 by this much before
/// class-prior estimation gives up.
pub const SD_PRIOR_CLAMP_TOL: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct PointDataset {
    features: Vec<Vec<f64>>,
    labels: Vec<i8>,
    feature_names: Option<Vec<String>>,
}

impl PointDataset {
    pub fn new(features: Vec<Vec<f64>>, labels: Vec<i8>) -> Result<Self> {
        Self::with_names(features, labels, None)
    }

    pub fn with_names(
        features: Vec<Vec<f64>>,
        labels: Vec<i8>,
        feature_names: Option<Vec<String>>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} feature rows but {} labels",
                features.len(),
                labels.len()
            )));
        }
        if features.len() < 2 {
            return Err(Error::Data("a point dataset needs at least two rows".into()));
        }
        let d = features[0].len();
        if d == 0 {
            return Err(Error::Data("points need at least one feature".into()));
        }
        for (r, row) in features.iter().enumerate() {
            if row.len() != d {
                return Err(Error::Data(format!("row {r} has {} features, expected {d}", row.len())));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::Data(format!("row {r} has a non-finite feature")));
            }
        }
        if let Some(&bad) = labels.iter().find(|&&y| y != 1 && y != -1) {
            return Err(Error::Data(format!("labels must be +1 or -1, found {bad}")));
        }
        if let Some(names) = &feature_names {
            if names.len() != d {
                return Err(Error::Data(format!("{} feature names for {d} features", names.len())));
            }
        }
        Ok(Self {
            features,
            labels,
            feature_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features[0].len()
    }

    pub fn features(&self) -> &[Vec<f64>] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i]
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn positive_fraction(&self) -> f64 {
        self.labels.iter().filter(|&&y| y > 0).count() as f64 / self.len() as f64
    }

    pub fn has_both_classes(&self) -> bool {
        let pos = self.labels.iter().filter(|&&y| y > 0).count();
        pos > 0 && pos < self.len()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::Data(format!("index {bad} out of range for {} rows", self.len())));
        }
        Self::with_names(
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.labels[i]).collect(),
            self.feature_names.clone(),
        )
    }

    pub fn map_features(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Result<Self> {
        Self::with_names(
            self.features.iter().map(|r| f(r)).collect(),
            self.labels.clone(),
            self.feature_names.clone(),
        )
    }
}

/// Reads a headered CSV of numeric features and one label column.
///
/// Rows whose label equals `positive_label_token` become +1. The dataset may
/// contain exactly one other label token, which becomes −1.
pub fn load_csv(path: &Path, label_column: &str, positive_label_token: &str) -> Result<PointDataset> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_points_csv(file, label_column, positive_label_token)
}

pub fn read_points_csv(
    reader: impl std::io::Read,
    label_column: &str,
    positive_label_token: &str,
) -> Result<PointDataset> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse { row: 1, message: e.to_string() })?
        .clone();
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Parse {
            row: 1,
            message: format!("label column `{label_column}` not found in header"),
        })?;
    if headers.len() < 2 {
        return Err(Error::Parse {
            row: 1,
            message: "need at least one feature column besides the label".into(),
        });
    }
    let names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != label_idx)
        .map(|(_, h)| h.to_string())
        .collect();

    let mut features = Vec::new();
    let mut labels = Vec::new();
    let mut negative_token: Option<String> = None;
    for (k, record) in rdr.records().enumerate() {
        // Header is line 1.
        let line = k + 2;
        let record = record.map_err(|e| Error::Parse { row: line, message: e.to_string() })?;
        let token = &record[label_idx];
        let y = if token == positive_label_token {
            1
        } else {
            match &negative_token {
                None => {
                    negative_token = Some(token.to_string());
                    -1
                }
                Some(neg) if neg == token => -1,
                Some(neg) => {
                    return Err(Error::Parse {
                        row: line,
                        message: format!(
                            "unknown label token `{token}` (positive `{positive_label_token}`, negative `{neg}`)"
                        ),
                    })
                }
            }
        };
        let mut row = Vec::with_capacity(names.len());
        for (i, field) in record.iter().enumerate() {
            if i == label_idx {
                continue;
            }
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                row: line,
                message: format!("non-numeric feature `{field}` in column `{}`", &headers[i]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row: line,
                    message: format!("non-finite feature in column `{}`", &headers[i]),
                });
            }
            row.push(v);
        }
        features.push(row);
        labels.push(y);
    }
    if !labels.iter().any(|&y| y > 0) {
        return Err(Error::Parse {
            row: 1,
            message: format!("positive label token `{positive_label_token}` never occurs"),
        });
    }
    PointDataset::with_names(features, labels, Some(names))
}

/// Per-column min-max scaling fitted on one dataset and applied to others.
#[derive(Clone, Debug, PartialEq)]
pub struct MinMaxScaler {
    mins: Vec<f64>,
    maxs: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(points: &PointDataset) -> Self {
        let d = points.dim();
        let mut mins = vec![f64::INFINITY; d];
        let mut maxs = vec![f64::NEG_INFINITY; d];
        for row in points.features() {
            for (c, &v) in row.iter().enumerate() {
                mins[c] = mins[c].min(v);
                maxs[c] = maxs[c].max(v);
            }
        }
        Self { mins, maxs }
    }

    /// Constant columns map to 0.
    pub fn transform(&self, points: &PointDataset) -> Result<PointDataset> {
        if points.dim() != self.mins.len() {
            return Err(Error::Shape(format!(
                "scaler fitted on {} columns, data has {}",
                self.mins.len(),
                points.dim()
            )));
        }
        points.map_features(|row| {
            row.iter()
                .enumerate()
                .map(|(c, &v)| {
                    let span = self.maxs[c] - self.mins[c];
                    if span > 0.0 {
                        (v - self.mins[c]) / span
                    } else {
                        0.0
                    }
                })
                .collect()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Pair {
    pub i: usize,
    pub j: usize,
    pub tau: i8,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDataset {
    pub pairs: Vec<Pair>,
    /// Number of rows in the point dataset the indices refer to.
    pub n_points: usize,
    pub noise_applied: NoiseSpec,
    pub seed: u64,
    pub noise_seed: Option<u64>,
    pub warnings: Vec<String>,
}

impl PairDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_noisy(&self) -> bool {
        !self.noise_applied.is_none()
    }

    /// Empirical fraction of pairs labelled similar.
    pub fn similar_fraction(&self) -> f64 {
        if self.pairs.is_empty() {
            return 0.0;
        }
        self.pairs.iter().filter(|p| p.tau > 0).count() as f64 / self.len() as f64
    }

    pub fn check_against(&self, points: &PointDataset) -> Result<()> {
        if self.n_points != points.len() {
            return Err(Error::Data(format!(
                "pairs index {} points, dataset has {}",
                self.n_points,
                points.len()
            )));
        }
        for (k, p) in self.pairs.iter().enumerate() {
            if p.i >= points.len() || p.j >= points.len() || p.i == p.j {
                return Err(Error::Data(format!("pair {k} has invalid indices ({}, {})", p.i, p.j)));
            }
        }
        Ok(())
    }

    /// CSV with header `i,j,tau` and `tau` written as `+1` or `-1`.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.pairs.len() * 12 + 8);
        out.push_str("i,j,tau\n");
        for p in &self.pairs {
            let _ = writeln!(out, "{},{},{}", p.i, p.j, if p.tau > 0 { "+1" } else { "-1" });
        }
        out
    }

    pub fn checksum(&self) -> String {
        let digest = Sha256::digest(self.to_csv_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }

    /// Reads an `i,j,tau` file. Provenance fields come from `meta` when
    /// given, else the pairs are treated as clean with unknown seed.
    pub fn read_csv(path: &Path, n_points: usize, meta: Option<&PairMetadata>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let pairs = parse_pair_csv(&text)?;
        if let Some(k) = pairs.iter().position(|p| p.i >= n_points || p.j >= n_points || p.i == p.j) {
            return Err(Error::Parse {
                row: k + 2,
                message: format!("pair indices out of range for {n_points} points or equal"),
            });
        }
        Ok(Self {
            pairs,
            n_points,
            noise_applied: meta.map_or(NoiseSpec::None, |m| m.noise),
            seed: meta.map_or(0, |m| m.seed),
            noise_seed: meta.and_then(|m| m.noise_seed),
            warnings: meta.map_or_else(Vec::new, |m| m.warnings.clone()),
        })
    }

    pub fn metadata(&self) -> PairMetadata {
        PairMetadata {
            n_points: self.n_points,
            n_pairs: self.len(),
            seed: self.seed,
            noise: self.noise_applied,
            noise_seed: self.noise_seed,
            warnings: self.warnings.clone(),
            sha256: self.checksum(),
        }
    }
}

pub fn parse_pair_csv(text: &str) -> Result<Vec<Pair>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == "i,j,tau" => {}
        _ => {
            return Err(Error::Parse {
                row: 1,
                message: "expected header `i,j,tau`".into(),
            })
        }
    }
    let mut pairs = Vec::new();
    for (k, line) in lines.enumerate() {
        let row = k + 2;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                row,
                message: format!("expected 3 fields, got {}", fields.len()),
            });
        }
        let idx = |s: &str| {
            s.parse::<usize>().map_err(|_| Error::Parse {
                row,
                message: format!("bad index `{s}`"),
            })
        };
        let tau = match fields[2] {
            "+1" | "1" => 1,
            "-1" => -1,
            other => {
                return Err(Error::Parse {
                    row,
                    message: format!("tau must be +1 or -1, got `{other}`"),
                })
            }
        };
        pairs.push(Pair {
            i: idx(fields[0])?,
            j: idx(fields[1])?,
            tau,
        });
    }
    Ok(pairs)
}

/// Sidecar record written next to a pair file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairMetadata {
    pub n_points: usize,
    pub n_pairs: usize,
    pub seed: u64,
    pub noise: NoiseSpec,
    pub noise_seed: Option<u64>,
    pub warnings: Vec<String>,
    pub sha256: String,
}

/// Draws `n_pairs` index pairs uniformly over `i ≠ j`, with replacement
/// across pairs; `τ = +1` exactly when the two labels agree.
pub fn generate_pairs(points: &PointDataset, n_pairs: usize, seed: u64) -> Result<PairDataset> {
    if n_pairs == 0 {
        return Err(Error::Config("n_pairs must be at least 1".into()));
    }
    let n = points.len();
    let mut rng = Rng::new(seed);
    let labels = points.labels();
    let pairs = (0..n_pairs)
        .map(|_| {
            let i = rng.index(n);
            let mut j = rng.index(n - 1);
            if j >= i {
                j += 1;
            }
            Pair {
                i,
                j,
                tau: if labels[i] == labels[j] { 1 } else { -1 },
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if !points.has_both_classes() {
        warnings.push("single-class dataset: every pair is similar and the class priors are degenerate".into());
    }
    Ok(PairDataset {
        pairs,
        n_points: n,
        noise_applied: NoiseSpec::None,
        seed,
        noise_seed: None,
        warnings,
    })
}

/// Flips each clean label independently: rate `η_S` for similar pairs and
/// `η_D` for dissimilar ones.
pub fn inject_noise(pairs: &PairDataset, noise: &NoiseSpec, seed: u64) -> Result<PairDataset> {
    noise.validate()?;
    if pairs.is_noisy() {
        return Err(Error::State(format!(
            "pairs already carry noise {}; inject into clean pairs only",
            pairs.noise_applied
        )));
    }
    let noise = noise.normalized();
    let mut out = pairs.clone();
    if noise.is_none() {
        return Ok(out);
    }
    let mut rng = Rng::new(seed);
    for p in &mut out.pairs {
        if rng.bernoulli(noise.flip_rate(p.tau)) {
            p.tau = -p.tau;
        }
    }
    out.noise_applied = noise;
    out.noise_seed = Some(seed);
    Ok(out)
}

/// Class and SD priors for independently drawn pairs.
pub fn derive_priors(pi_plus: f64, noise: &NoiseSpec) -> Result<Priors> {
    Priors::derive(pi_plus, noise)
}

/// Recovers `π₊` from the observed similar fraction, assuming `π₊ ≥ π₋`.
pub fn estimate_pi_plus_from_sd(pairs: &PairDataset, noise: &NoiseSpec) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("no pairs to estimate priors from".into()));
    }
    noise.validate()?;
    let (eta_s, eta_d) = noise.rates();
    let noisy_s = pairs.similar_fraction();
    let pi_s = (noisy_s - eta_d) / (1.0 - eta_s - eta_d);
    pi_plus_from_similar_prior(pi_s)
}

pub fn pi_plus_from_similar_prior(pi_s: f64) -> Result<f64> {
    if pi_s < 0.5 - SD_PRIOR_CLAMP_TOL {
        return Err(Error::Estimation(format!(
            "similar-pair prior {pi_s:.4} is below 0.5; labels are inconsistent with independent pairs"
        )));
    }
    let disc = (2.0 * pi_s - 1.0).clamp(0.0, 1.0);
    Ok((1.0 + disc.sqrt()) / 2.0)
}

/// Two isotropic unit-variance Gaussians centred at `±mean_sep/2` along the
/// first axis; each label is +1 with probability `pi_plus`.
pub fn synth_gaussians(n: usize, d: usize, pi_plus: f64, mean_sep: f64, seed: u64) -> Result<PointDataset> {
    if !(mean_sep.is_finite() && mean_sep > 0.0) {
        return Err(Error::Config(format!("mean_sep must be positive, got {mean_sep}")));
    }
    if d == 0 || n < 2 {
        return Err(Error::Config(format!("need n >= 2 and d >= 1, got n={n}, d={d}")));
    }
    if !(0.0..=1.0).contains(&pi_plus) {
        return Err(Error::Config(format!("pi_plus must lie in [0, 1], got {pi_plus}")));
    }
    let mut rng = Rng::new(seed);
    let half = mean_sep / 2.0;
    let mut features = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let y: i8 = if rng.bernoulli(pi_plus) { 1 } else { -1 };
        let mut x: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        x[0] += f64::from(y) * half;
        features.push(x);
        labels.push(y);
    }
    PointDataset::new(features, labels)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Shuffled partition into `k` test folds whose sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if k > n {
        return Err(Error::Config(format!("k = {k} exceeds the {n} available rows")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    Rng::new(seed).shuffle(&mut order);
    let base = n / k;
    let extra = n % k;
    let mut folds = Vec::with_capacity(k);
    let mut start = 0;
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let test: Vec<usize> = order[start..start + size].to_vec();
        let train: Vec<usize> = order[..start].iter().chain(&order[start + size..]).copied().collect();
        folds.push(Fold { train, test });
        start += size;
    }
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> PointDataset {
        PointDataset::new(vec![vec![0.0], vec![1.0], vec![2.0]], vec![1, 1, -1]).unwrap()
    }

    #[test]
    fn loads_three_row_csv() {
        let csv = "f1,f2,label\n1.0,2.0,a\n3.0,4.0,a\n5.0,6.0,b\n";
        let p = read_points_csv(csv.as_bytes(), "label", "a").unwrap();
        assert_eq!(p.labels(), &[1, 1, -1]);
        assert_eq!(p.row(2), &[5.0, 6.0]);
        assert_eq!(p.feature_names().unwrap(), &["f1".to_string(), "f2".to_string()]);
    }

    #[test]
    fn csv_errors_name_the_problem() {
        let missing = read_points_csv("f1,y\n1,a\n2,b\n".as_bytes(), "label", "a").unwrap_err();
        assert!(missing.to_string().contains("label"), "{missing}");

        let ragged = read_points_csv("f1,f2,y\n1,2,a\n3,b\n".as_bytes(), "y", "a").unwrap_err();
        assert!(matches!(ragged, Error::Parse { row: 3, .. }), "{ragged}");

        let text = read_points_csv("f1,y\n1,a\nx,b\n".as_bytes(), "y", "a").unwrap_err();
        assert!(matches!(text, Error::Parse { row: 3, .. }), "{text}");

        let third = read_points_csv("f1,y\n1,a\n2,b\n3,c\n".as_bytes(), "y", "a").unwrap_err();
        assert!(matches!(third, Error::Parse { row: 4, .. }), "{third}");
    }

    #[test]
    fn pair_labels_follow_label_equality() {
        let points = PointDataset::new(
            (0..6).map(|i| vec![i as f64]).collect(),
            vec![1, -1, 1, 1, -1, -1],
        )
        .unwrap();
        let pairs = generate_pairs(&points, 500, 3).unwrap();
        for p in &pairs.pairs {
            assert_ne!(p.i, p.j);
            let same = points.labels()[p.i] == points.labels()[p.j];
            assert_eq!(p.tau == 1, same);
        }
        assert!(pairs.warnings.is_empty());
    }

    #[test]
    fn tiny_pair_rule() {
        let points = tiny();
        let tau = |i: usize, j: usize| if points.labels()[i] == points.labels()[j] { 1 } else { -1 };
        assert_eq!(tau(0, 1), 1);
        assert_eq!(tau(0, 2), -1);
        let pairs = generate_pairs(&points, 50, 1).unwrap();
        assert!(pairs.pairs.iter().all(|p| p.tau == tau(p.i, p.j)));
    }

    #[test]
    fn single_class_pairs_are_flagged() {
        let points = PointDataset::new(vec![vec![0.0], vec![1.0]], vec![1, 1]).unwrap();
        let pairs = generate_pairs(&points, 4, 0).unwrap();
        assert_eq!(pairs.warnings.len(), 1);
        assert!(pairs.pairs.iter().all(|p| p.tau == 1));
    }

    #[test]
    fn generation_is_seeded() {
        let points = tiny();
        assert_eq!(generate_pairs(&points, 20, 5).unwrap(), generate_pairs(&points, 20, 5).unwrap());
        assert!(generate_pairs(&points, 0, 5).is_err());
    }

    #[test]
    fn similar_prior_matches_closed_form() {
        let n = 10_000;
        let labels: Vec<i8> = (0..n).map(|i| if i < 7_000 { 1 } else { -1 }).collect();
        let points = PointDataset::new((0..n).map(|i| vec![i as f64]).collect(), labels).unwrap();
        let pairs = generate_pairs(&points, 100_000, 17).unwrap();
        // Without replacement inside a pair the exact value is slightly below
        // 0.58: (7000·6999 + 3000·2999) / (10000·9999).
        let exact = (7000.0 * 6999.0 + 3000.0 * 2999.0) / (10_000.0 * 9_999.0);
        let sigma = (exact * (1.0 - exact) / 100_000.0_f64).sqrt();
        assert!((exact - 0.58).abs() < 1e-4);
        assert!((pairs.similar_fraction() - exact).abs() <= 3.0 * sigma);
    }

    #[test]
    fn zero_noise_is_identity() {
        let pairs = generate_pairs(&tiny(), 30, 2).unwrap();
        let out = inject_noise(&pairs, &NoiseSpec::Uniform { eta: 0.0 }, 9).unwrap();
        assert_eq!(out, pairs);
        assert_eq!(out.noise_applied, NoiseSpec::None);
    }

    #[test]
    fn renoising_is_rejected() {
        let pairs = generate_pairs(&tiny(), 30, 2).unwrap();
        let noisy = inject_noise(&pairs, &NoiseSpec::Uniform { eta: 0.2 }, 9).unwrap();
        assert!(matches!(
            inject_noise(&noisy, &NoiseSpec::Uniform { eta: 0.2 }, 9),
            Err(Error::State(_))
        ));
        assert!(inject_noise(&pairs, &NoiseSpec::Uniform { eta: 1.0 }, 9).is_err());
    }

    #[test]
    fn conditional_flip_rates() {
        let n = 2_000;
        let labels: Vec<i8> = (0..n).map(|i| if i % 10 < 7 { 1 } else { -1 }).collect();
        let points = PointDataset::new((0..n).map(|i| vec![i as f64]).collect(), labels).unwrap();
        let clean = generate_pairs(&points, 100_000, 4).unwrap();
        let noisy = inject_noise(&clean, &NoiseSpec::Conditional { eta_s: 0.2, eta_d: 0.1 }, 8).unwrap();
        let (mut s, mut s_flip, mut d, mut d_flip) = (0.0, 0.0, 0.0, 0.0);
        for (c, z) in clean.pairs.iter().zip(&noisy.pairs) {
            if c.tau > 0 {
                s += 1.0;
                if z.tau < 0 {
                    s_flip += 1.0;
                }
            } else {
                d += 1.0;
                if z.tau > 0 {
                    d_flip += 1.0;
                }
            }
        }
        let check = |flips: f64, total: f64, rate: f64| {
            let sigma = (rate * (1.0 - rate) / total).sqrt();
            assert!((flips / total - rate).abs() <= 3.0 * sigma, "{} vs {rate}", flips / total);
        };
        check(s_flip, s, 0.2);
        check(d_flip, d, 0.1);
        assert_eq!(noisy.noise_seed, Some(8));
    }

    #[test]
    fn derive_priors_hand_values() {
        let p = derive_priors(0.7, &NoiseSpec::None).unwrap();
        assert!((p.pi_s - 0.58).abs() < 1e-12);
        assert!((p.pi_d - 0.42).abs() < 1e-12);
        assert_eq!(p.pi_s_eta, p.pi_s);
        let q = derive_priors(0.7, &NoiseSpec::Conditional { eta_s: 0.2, eta_d: 0.1 }).unwrap();
        assert!((q.pi_s_eta - 0.506).abs() < 1e-12);
        assert!(matches!(derive_priors(0.5, &NoiseSpec::None), Err(Error::DegeneratePrior(_))));
    }

    #[test]
    fn pi_plus_inversion() {
        assert!((pi_plus_from_similar_prior(0.58).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(pi_plus_from_similar_prior(0.5).unwrap(), 0.5);
        assert_eq!(pi_plus_from_similar_prior(0.49).unwrap(), 0.5);
        assert!(matches!(pi_plus_from_similar_prior(0.45), Err(Error::Estimation(_))));
    }

    #[test]
    fn pi_plus_estimate_under_noise() {
        let n = 10_000;
        let labels: Vec<i8> = (0..n).map(|i| if i < 7_000 { 1 } else { -1 }).collect();
        let points = PointDataset::new((0..n).map(|i| vec![i as f64]).collect(), labels).unwrap();
        let clean = generate_pairs(&points, 100_000, 1).unwrap();
        let noise = NoiseSpec::Uniform { eta: 0.2 };
        let noisy = inject_noise(&clean, &noise, 2).unwrap();
        let est = estimate_pi_plus_from_sd(&noisy, &noise).unwrap();
        assert!((est - 0.7).abs() <= 0.02, "{est}");
    }

    #[test]
    fn synthetic_gaussians_are_seeded_and_separated() {
        let a = synth_gaussians(500, 2, 0.7, 8.0, 3).unwrap();
        assert_eq!(a, synth_gaussians(500, 2, 0.7, 8.0, 3).unwrap());
        let correct = a
            .features()
            .iter()
            .zip(a.labels())
            .filter(|(x, &y)| (x[0] >= 0.0) == (y > 0))
            .count();
        assert!(correct as f64 / 500.0 > 0.99);
        assert!(synth_gaussians(10, 2, 0.7, 0.0, 3).is_err());
        assert!(!synth_gaussians(10, 2, 1.0, 4.0, 3).unwrap().has_both_classes());
    }

    #[test]
    fn kfold_partitions() {
        let folds = kfold_split(10, 10, 0).unwrap();
        assert!(folds.iter().all(|f| f.test.len() == 1 && f.train.len() == 9));

        let folds = kfold_split(103, 10, 7).unwrap();
        let mut all: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        all.sort_unstable();
        assert_eq!(all, (0..103).collect::<Vec<_>>());
        let sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
        assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        for f in &folds {
            assert_eq!(f.train.len() + f.test.len(), 103);
            assert!(f.test.iter().all(|t| !f.train.contains(t)));
        }
        assert_eq!(folds, kfold_split(103, 10, 7).unwrap());
        assert!(matches!(kfold_split(5, 10, 0), Err(Error::Config(_))));
    }

    #[test]
    fn pair_csv_format() {
        let pairs = generate_pairs(&tiny(), 5, 0).unwrap();
        let text = pairs.to_csv_string();
        assert!(text.starts_with("i,j,tau\n"));
        assert!(text.lines().skip(1).all(|l| l.ends_with(",+1") || l.ends_with(",-1")));
        assert_eq!(parse_pair_csv(&text).unwrap(), pairs.pairs);
        assert!(parse_pair_csv("a,b,c\n").is_err());
        assert!(parse_pair_csv("i,j,tau\n0,1,2\n").is_err());
    }

    #[test]
    fn scaler_maps_train_range_to_unit() {
        let p = PointDataset::new(vec![vec![1.0, 5.0], vec![3.0, 5.0], vec![2.0, 5.0]], vec![1, -1, 1])
            .unwrap();
        let s = MinMaxScaler::fit(&p);
        let t = s.transform(&p).unwrap();
        assert_eq!(t.row(0), &[0.0, 0.0]);
        assert_eq!(t.row(1), &[1.0, 0.0]);
        assert_eq!(t.row(2), &[0.5, 0.0]);
    }
}
