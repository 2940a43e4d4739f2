//! Evaluation metric kernels: paired feature distances, recall@K retrieval,
//! row-normalized confusion matrices, Pearson correlation with a Student-t
//! significance test, and craniofacial measures computed from a data-driven
//! landmark formula table.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// feature distances
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Metric {
    CosineDeg,
    L2,
    L1,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::CosineDeg, Metric::L2, Metric::L1];
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::CosineDeg => "cos",
            Metric::L2 => "l2",
            Metric::L1 => "l1",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cos" | "cosine" => Ok(Metric::CosineDeg),
            "l2" => Ok(Metric::L2),
            "l1" => Ok(Metric::L1),
            other => Err(Error::InvalidConfig(format!("unknown metric {other:?} (use cos, l2 or l1)"))),
        }
    }
}

/// Angle between two vectors in degrees: `acos(clamp(a.b / (|a||b|)))`.
pub fn cosine_angle_deg(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_angle", format!("{} vs {}", a.len(), b.len())));
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNormFeature);
    }
    let c = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
    Ok(c.acos().to_degrees())
}

pub fn distance(metric: Metric, a: &[f64], b: &[f64]) -> Result<f64> {
    match metric {
        Metric::CosineDeg => cosine_angle_deg(a, b),
        Metric::L2 => Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()),
        Metric::L1 => Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()),
    }
}

/// Mean and sample standard deviation of paired distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub metric: Metric,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

pub fn similarity_stats(pred: &[Vec<f64>], target: &[Vec<f64>], metric: Metric) -> Result<DistanceStats> {
    if pred.len() != target.len() {
        return Err(Error::shape(
            "similarity_stats",
            format!("{} predictions vs {} targets", pred.len(), target.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput);
    }
    let dists: Vec<f64> = pred
        .iter()
        .zip(target)
        .map(|(p, t)| distance(metric, p, t))
        .collect::<Result<_>>()?;
    let n = dists.len();
    let mean = dists.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (dists.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(DistanceStats { metric, mean, std, n })
}

// ---------------------------------------------------------------------------
// retrieval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallReport {
    pub metric: Metric,
    pub ks: Vec<usize>,
    pub recall_percent: Vec<f64>,
    pub gallery_size: usize,
    /// `100 * K / N` per K.
    pub random_baseline_percent: Vec<f64>,
}

/// Rank the gallery by ascending distance per query (ties broken by gallery
/// index) and report the percentage of queries whose true item lands in the
/// top K.
pub fn recall_at_k(
    queries: &[Vec<f64>],
    gallery: &[Vec<f64>],
    true_index: &[usize],
    metric: Metric,
    ks: &[usize],
) -> Result<RecallReport> {
    let n = gallery.len();
    if queries.len() != true_index.len() || queries.is_empty() {
        return Err(Error::shape(
            "recall_at_k",
            format!("{} queries vs {} true indices", queries.len(), true_index.len()),
        ));
    }
    if let Some(&bad) = ks.iter().find(|&&k| k == 0 || k > n) {
        return Err(Error::InvalidConfig(format!(
            "recall K = {bad} outside gallery size {n}"
        )));
    }
    if let Some(&bad) = true_index.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidConfig(format!("true index {bad} outside gallery")));
    }
    let ranks = crate::parallel::try_par_map(queries.len(), |qi| {
        let q = &queries[qi];
        let t = true_index[qi];
        let d_true = distance(metric, q, &gallery[t])?;
        let mut rank = 1usize;
        for (j, item) in gallery.iter().enumerate() {
            if j == t {
                continue;
            }
            let d = distance(metric, q, item)?;
            if d < d_true || (d == d_true && j < t) {
                rank += 1;
            }
        }
        Ok::<usize, Error>(rank)
    })?;
    let recall_percent = ks
        .iter()
        .map(|&k| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64)
        .collect();
    Ok(RecallReport {
        metric,
        ks: ks.to_vec(),
        recall_percent,
        gallery_size: n,
        random_baseline_percent: ks.iter().map(|&k| 100.0 * k as f64 / n as f64).collect(),
    })
}

// ---------------------------------------------------------------------------
// confusion matrices
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// `counts[i][j]`: rows are true labels, columns predicted.
    pub counts: Vec<Vec<usize>>,
    /// Rows scaled to sum to one (rows with zero count stay zero).
    pub row_normalized: Vec<Vec<f64>>,
}

pub fn confusion(true_labels: &[&str], predicted_labels: &[&str], label_set: &[&str]) -> Result<ConfusionMatrix> {
    if true_labels.len() != predicted_labels.len() {
        return Err(Error::shape(
            "confusion",
            format!("{} true vs {} predicted", true_labels.len(), predicted_labels.len()),
        ));
    }
    let index: BTreeMap<&str, usize> = label_set.iter().enumerate().map(|(i, &l)| (l, i)).collect();
    let l = label_set.len();
    let mut counts = vec![vec![0usize; l]; l];
    for (t, p) in true_labels.iter().zip(predicted_labels) {
        let ti = *index
            .get(t)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown label {t:?}")))?;
        let pi = *index
            .get(p)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown label {p:?}")))?;
        counts[ti][pi] += 1;
    }
    let row_normalized = counts
        .iter()
        .map(|row| {
            let s: usize = row.iter().sum();
            if s == 0 {
                vec![0.0; l]
            } else {
                row.iter().map(|&c| c as f64 / s as f64).collect()
            }
        })
        .collect();
    Ok(ConfusionMatrix {
        labels: label_set.iter().map(|s| s.to_string()).collect(),
        counts,
        row_normalized,
    })
}

/// Nearest-centroid classifier over reference features grouped by label.
pub struct CentroidClassifier {
    labels: Vec<String>,
    centroids: Vec<Vec<f64>>,
}

impl CentroidClassifier {
    pub fn fit(features: &[Vec<f64>], labels: &[&str]) -> Result<Self> {
        if features.len() != labels.len() || features.is_empty() {
            return Err(Error::EmptyInput);
        }
        let mut by_label: BTreeMap<&str, (Vec<f64>, usize)> = BTreeMap::new();
        for (f, &l) in features.iter().zip(labels) {
            let entry = by_label.entry(l).or_insert_with(|| (vec![0.0; f.len()], 0));
            for (a, b) in entry.0.iter_mut().zip(f) {
                *a += b;
            }
            entry.1 += 1;
        }
        let mut names = Vec::new();
        let mut centroids = Vec::new();
        for (label, (mut sum, count)) in by_label {
            sum.iter_mut().for_each(|v| *v /= count as f64);
            names.push(label.to_string());
            centroids.push(sum);
        }
        Ok(CentroidClassifier { labels: names, centroids })
    }

    pub fn classify(&self, feature: &[f64]) -> &str {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, c) in self.centroids.iter().enumerate() {
            let d: f64 = feature.iter().zip(c).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        &self.labels[best]
    }
}

// ---------------------------------------------------------------------------
// Pearson correlation with significance
// ---------------------------------------------------------------------------

/// Natural log of the gamma function (Lanczos approximation).
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 6] = [
        76.18009172947146,
        -86.50532032941677,
        24.01409824083091,
        -1.231739572450155,
        0.1208650973866179e-2,
        -0.5395239384953e-5,
    ];
    let mut y = x;
    let tmp = x + 5.5 - (x + 0.5) * (x + 5.5).ln();
    let mut ser = 1.000000000190015;
    for c in COEF {
        y += 1.0;
        ser += c / y;
    }
    -tmp + (2.5066282746310005 * ser / x).ln()
}

/// Regularized incomplete beta `I_x(a, b)` via Lentz's continued fraction.
fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let symmetric = x >= (a + 1.0) / (a + b + 2.0);
    let (a, b, x) = if symmetric { (b, a, 1.0 - x) } else { (a, b, x) };

    const TINY: f64 = 1e-300;
    let mut c = 1.0;
    let mut d = 1.0 - (a + b) * x / (a + 1.0);
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..200 {
        let m_f = m as f64;
        let num = m_f * (b - m_f) * x / ((a + 2.0 * m_f - 1.0) * (a + 2.0 * m_f));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let num = -(a + m_f) * (a + b + m_f) * x / ((a + 2.0 * m_f) * (a + 2.0 * m_f + 1.0));
        d = 1.0 + num * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + num / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < 1e-15 {
            break;
        }
    }
    let value = front * h / a;
    if symmetric {
        1.0 - value
    } else {
        value
    }
}

/// Two-sided p-value of the t statistic for Pearson r at sample size n.
pub fn pearson_p_value(r: f64, n: usize) -> f64 {
    let df = (n - 2) as f64;
    let r2 = r * r;
    if r2 >= 1.0 {
        return 0.0;
    }
    let t2 = r2 * df / (1.0 - r2);
    beta_inc(df / 2.0, 0.5, df / (df + t2))
}

/// Sample Pearson correlation with a two-sided significance test through the
/// t transform `t = r sqrt((n-2)/(1-r^2))`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() {
        return Err(Error::shape("pearson", format!("{} vs {}", x.len(), y.len())));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidConfig(format!("pearson needs n >= 3, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in x.iter().zip(y) {
        cov += (a - mx) * (b - my);
        vx += (a - mx) * (a - mx);
        vy += (b - my) * (b - my);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let r = (cov / (vx.sqrt() * vy.sqrt())).clamp(-1.0, 1.0);
    Ok((r, pearson_p_value(r, n)))
}

// ---------------------------------------------------------------------------
// craniofacial measures
// ---------------------------------------------------------------------------

pub const LANDMARK_COUNT: usize = 68;

/// Default measure definitions over the 68-point layout; swap by supplying a
/// different table file with the same grammar.
pub const DEFAULT_MEASURE_TABLE: &str = include_str!("../assets/craniofacial_measures.txt");

#[derive(Debug, Clone, PartialEq)]
enum PointRef {
    Landmark(usize),
    Midpoint(usize, usize),
}

#[derive(Debug, Clone, PartialEq)]
enum MeasureDef {
    Dist(PointRef, PointRef),
    Index(String, String),
    Area(Vec<usize>),
    Mean(Vec<String>),
}

/// A parsed, ordered measure table. Names starting with `_` are helpers and
/// excluded from reports.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureTable {
    entries: Vec<(String, MeasureDef)>,
}

fn parse_point(tok: &str, line: usize) -> Result<PointRef> {
    let fail = |d: String| Error::format("measure table", format!("line {line}: {d}"));
    if let Some(rest) = tok.strip_prefix("mid:") {
        let (a, b) = rest
            .split_once(',')
            .ok_or_else(|| fail(format!("midpoint {tok:?} needs mid:i,j")))?;
        let pa: usize = a.parse().map_err(|_| fail(format!("bad index {a:?}")))?;
        let pb: usize = b.parse().map_err(|_| fail(format!("bad index {b:?}")))?;
        if pa >= LANDMARK_COUNT || pb >= LANDMARK_COUNT {
            return Err(fail(format!("midpoint index out of range in {tok:?}")));
        }
        Ok(PointRef::Midpoint(pa, pb))
    } else {
        let p: usize = tok.parse().map_err(|_| fail(format!("bad landmark index {tok:?}")))?;
        if p >= LANDMARK_COUNT {
            return Err(fail(format!("landmark index {p} out of range")));
        }
        Ok(PointRef::Landmark(p))
    }
}

impl MeasureTable {
    pub fn parse(text: &str) -> Result<MeasureTable> {
        let mut entries: Vec<(String, MeasureDef)> = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let fail = |d: String| Error::format("measure table", format!("line {}: {d}", lineno + 1));
            if toks.len() < 3 {
                return Err(fail("expected: name kind args...".into()));
            }
            let name = toks[0].to_string();
            if entries.iter().any(|(n, _)| *n == name) {
                return Err(fail(format!("duplicate measure {name:?}")));
            }
            let def = match toks[1] {
                "dist" => {
                    if toks.len() != 4 {
                        return Err(fail("dist needs two points".into()));
                    }
                    MeasureDef::Dist(parse_point(toks[2], lineno + 1)?, parse_point(toks[3], lineno + 1)?)
                }
                "index" => {
                    if toks.len() != 4 {
                        return Err(fail("index needs two measure names".into()));
                    }
                    for t in &toks[2..4] {
                        if !entries.iter().any(|(n, _)| n == t) {
                            return Err(fail(format!("index references undefined measure {t:?}")));
                        }
                    }
                    MeasureDef::Index(toks[2].into(), toks[3].into())
                }
                "area" => {
                    let pts: Vec<usize> = toks[2]
                        .split(',')
                        .map(|t| {
                            t.parse::<usize>()
                                .map_err(|_| fail(format!("bad area index {t:?}")))
                        })
                        .collect::<Result<_>>()?;
                    if pts.len() < 3 || pts.iter().any(|&p| p >= LANDMARK_COUNT) {
                        return Err(fail("area needs >= 3 in-range landmark indices".into()));
                    }
                    MeasureDef::Area(pts)
                }
                "mean" => {
                    let names: Vec<String> = toks[2..].iter().map(|s| s.to_string()).collect();
                    for t in &names {
                        if !entries.iter().any(|(n, _)| n == t) {
                            return Err(fail(format!("mean references undefined measure {t:?}")));
                        }
                    }
                    MeasureDef::Mean(names)
                }
                other => return Err(fail(format!("unknown measure kind {other:?}"))),
            };
            entries.push((name, def));
        }
        if entries.is_empty() {
            return Err(Error::format("measure table", "no measures defined"));
        }
        Ok(MeasureTable { entries })
    }

    pub fn default_table() -> MeasureTable {
        MeasureTable::parse(DEFAULT_MEASURE_TABLE).expect("embedded table parses")
    }

    /// Reported (non-helper) measure names in table order.
    pub fn reported_names(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|(n, _)| !n.starts_with('_'))
            .map(|(n, _)| n.as_str())
            .collect()
    }

    /// Evaluate all measures for one landmark set; returns reported measures
    /// in table order.
    pub fn evaluate(&self, landmarks: &[(f64, f64)]) -> Result<Vec<(String, f64)>> {
        if landmarks.len() != LANDMARK_COUNT {
            return Err(Error::shape(
                "craniofacial",
                format!("need {LANDMARK_COUNT} landmarks, got {}", landmarks.len()),
            ));
        }
        if landmarks.iter().any(|p| !p.0.is_finite() || !p.1.is_finite()) {
            return Err(Error::NonFinite("landmark set".into()));
        }
        let point = |p: &PointRef| -> (f64, f64) {
            match p {
                PointRef::Landmark(i) => landmarks[*i],
                PointRef::Midpoint(i, j) => (
                    (landmarks[*i].0 + landmarks[*j].0) / 2.0,
                    (landmarks[*i].1 + landmarks[*j].1) / 2.0,
                ),
            }
        };
        let mut values: BTreeMap<&str, f64> = BTreeMap::new();
        let mut out = Vec::new();
        for (name, def) in &self.entries {
            let v = match def {
                MeasureDef::Dist(a, b) => {
                    let (ax, ay) = point(a);
                    let (bx, by) = point(b);
                    ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
                }
                MeasureDef::Index(num, den) => {
                    let n = values[num.as_str()];
                    let d = values[den.as_str()];
                    if d == 0.0 {
                        return Err(Error::InvalidConfig(format!(
                            "degenerate geometry: {den} is zero in {name}"
                        )));
                    }
                    100.0 * n / d
                }
                MeasureDef::Area(pts) => {
                    let mut s = 0.0;
                    for i in 0..pts.len() {
                        let (x1, y1) = landmarks[pts[i]];
                        let (x2, y2) = landmarks[pts[(i + 1) % pts.len()]];
                        s += x1 * y2 - x2 * y1;
                    }
                    s.abs() / 2.0
                }
                MeasureDef::Mean(names) => {
                    names.iter().map(|n| values[n.as_str()]).sum::<f64>() / names.len() as f64
                }
            };
            values.insert(name.as_str(), v);
            if !name.starts_with('_') {
                out.push((name.clone(), v));
            }
        }
        Ok(out)
    }
}

/// Convenience: evaluate the default table.
pub fn craniofacial_measures(landmarks: &[(f64, f64)]) -> Result<Vec<(String, f64)>> {
    MeasureTable::default_table().evaluate(landmarks)
}
