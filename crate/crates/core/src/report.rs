//! End-to-end evaluation protocol: run a trained encoder over the held-out
//! gallery and emit feature-similarity, retrieval, attribute-confusion and
//! craniofacial-correlation reports, plus the duration ablation and the
//! feature-spread collapse diagnostic.

use std::io::Write as _;
use std::path::Path;

use crate::audio::{load_spectrogram, preprocess, CompressedSpectrogram, SpectrogramConfig};
use crate::encoder::{self, batch_from_spectrograms, EncoderParams, Mode};
use crate::error::{Error, Result};
use crate::eval::{
    confusion, cosine_angle_deg, pearson, recall_at_k, similarity_stats, CentroidClassifier,
    ConfusionMatrix, DistanceStats, MeasureTable, Metric, RecallReport,
};
use crate::synth::{spectrogram_name, Corpus};

pub const EVAL_BATCH: usize = 8;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub metrics: Vec<Metric>,
    /// Crop lengths (seconds) evaluated; `[3, 6]` reproduces the ablation.
    pub durations: Vec<f64>,
    /// Identities entering the pairwise feature-spread diagnostic.
    pub spread_identities: usize,
    pub spectrogram: SpectrogramConfig,
    pub measure_table: MeasureTable,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            ks: vec![1, 2, 5, 10],
            metrics: Metric::ALL.to_vec(),
            durations: vec![3.0, 6.0],
            spread_identities: 50,
            spectrogram: SpectrogramConfig::default(),
            measure_table: MeasureTable::default_table(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DurationEval {
    pub duration_s: f64,
    pub similarity: Vec<DistanceStats>,
    pub recall: Vec<RecallReport>,
}

#[derive(Debug, Clone)]
pub struct CraniofacialEntry {
    pub name: String,
    pub r: f64,
    pub p: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub gallery_size: usize,
    pub config_hash: String,
    pub durations: Vec<DurationEval>,
    pub confusion: Vec<(String, ConfusionMatrix)>,
    pub craniofacial: Vec<CraniofacialEntry>,
    pub craniofacial_random_baseline: CraniofacialEntry,
    /// Mean pairwise cosine angle (degrees) among predicted features of
    /// distinct identities; collapse shows up as a small value.
    pub feature_spread_deg: f64,
    pub spread_identities: usize,
}

impl EvalReport {
    pub fn duration(&self, seconds: f64) -> Option<&DurationEval> {
        self.durations.iter().find(|d| d.duration_s == seconds)
    }
}

fn predict(params: &mut EncoderParams, specs: &[CompressedSpectrogram]) -> Result<Vec<Vec<f64>>> {
    let dim = params.config.feature_dim();
    let mut out = Vec::with_capacity(specs.len());
    for chunk in specs.chunks(EVAL_BATCH) {
        let refs: Vec<&CompressedSpectrogram> = chunk.iter().collect();
        let batch = batch_from_spectrograms(&refs)?;
        let v = encoder::forward(params, &batch, Mode::Eval)?;
        for row in 0..chunk.len() {
            out.push(v.data()[row * dim..(row + 1) * dim].to_vec());
        }
    }
    Ok(out)
}

/// Spectrograms of the gallery clips at a crop length. Full-length (6 s)
/// crops come from the preprocess cache when available (config hash checked);
/// other crops are computed from the WAVs without padding.
fn gallery_spectrograms(
    corpus: &Corpus,
    cache_dir: Option<&Path>,
    expected_hash: &str,
    cfg: &SpectrogramConfig,
    duration_s: f64,
) -> Result<Vec<CompressedSpectrogram>> {
    let ids = &corpus.manifest.splits.gallery;
    let full_clip = duration_s >= corpus.manifest.clip_seconds;
    crate::parallel::try_par_map(ids.len(), |i| {
        let id = ids[i];
        if full_clip {
            if let Some(cache) = cache_dir {
                let path = cache.join(spectrogram_name(id, 0));
                let (spec, hash) = load_spectrogram(&path)?;
                if hash != expected_hash {
                    return Err(Error::ConfigHashMismatch(format!(
                        "{} carries hash {hash}, checkpoint expects {expected_hash}",
                        path.display()
                    )));
                }
                return Ok(spec);
            }
        }
        let w = corpus.waveform(id, 0)?.crop_front(duration_s);
        let cfg = SpectrogramConfig {
            target_duration_s: 0.0,
            ..cfg.clone()
        };
        preprocess(&w, &cfg)
    })
}

/// Run the full evaluation protocol over the corpus gallery.
pub fn evaluate(
    params: &mut EncoderParams,
    corpus: &Corpus,
    cache_dir: Option<&Path>,
    config_hash: &str,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    let ids = &corpus.manifest.splits.gallery;
    if ids.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = ids.len();
    if let Some(&bad) = opts.ks.iter().find(|&&k| k > n) {
        return Err(Error::InvalidConfig(format!("recall K = {bad} exceeds gallery size {n}")));
    }

    let targets: Vec<Vec<f64>> = crate::parallel::try_par_map(n, |i| corpus.feature(ids[i]))?;

    let mut durations = Vec::new();
    let mut six_second_preds: Option<Vec<Vec<f64>>> = None;
    for &dur in &opts.durations {
        let specs = gallery_spectrograms(corpus, cache_dir, config_hash, &opts.spectrogram, dur)?;
        let preds = predict(params, &specs)?;
        let mut similarity = Vec::new();
        let mut recall = Vec::new();
        for &m in &opts.metrics {
            similarity.push(similarity_stats(&preds, &targets, m)?);
            let truth: Vec<usize> = (0..n).collect();
            recall.push(recall_at_k(&preds, &targets, &truth, m, &opts.ks)?);
        }
        if dur >= corpus.manifest.clip_seconds {
            six_second_preds = Some(preds.clone());
        }
        durations.push(DurationEval { duration_s: dur, similarity, recall });
    }
    // attribute/craniofacial protocols run on the longest-duration predictions
    let preds = match six_second_preds {
        Some(p) => p,
        None => {
            let specs = gallery_spectrograms(
                corpus,
                cache_dir,
                config_hash,
                &opts.spectrogram,
                corpus.manifest.clip_seconds,
            )?;
            predict(params, &specs)?
        }
    };

    // nearest-centroid attribute confusion (rows: labels from targets)
    let mut confusion_out = Vec::new();
    let latents: Vec<_> = ids.iter().map(|&id| corpus.latent(id)).collect();
    for (attr, label_of) in [
        ("group", Box::new(|i: usize| latents[i].group()) as Box<dyn Fn(usize) -> &'static str>),
        ("age_band", Box::new(|i: usize| latents[i].age_band())),
    ] {
        let labels: Vec<&str> = (0..n).map(&label_of).collect();
        let clf = CentroidClassifier::fit(&targets, &labels)?;
        let from_target: Vec<&str> = (0..n).map(|i| clf.classify(&targets[i])).collect();
        let from_pred: Vec<&str> = (0..n).map(|i| clf.classify(&preds[i])).collect();
        let mut label_set: Vec<&str> = labels.to_vec();
        label_set.sort_unstable();
        label_set.dedup();
        confusion_out.push((attr.to_string(), confusion(&from_target, &from_pred, &label_set)?));
    }

    // craniofacial correlations: measures from file landmarks vs measures from
    // landmarks reconstructed out of the predicted features
    let maps = corpus.maps();
    let measure_names: Vec<String> = opts
        .measure_table
        .reported_names()
        .iter()
        .map(|s| s.to_string())
        .collect();
    let mut true_vals: Vec<Vec<f64>> = vec![Vec::with_capacity(n); measure_names.len()];
    let mut pred_vals: Vec<Vec<f64>> = vec![Vec::with_capacity(n); measure_names.len()];
    for (i, &id) in ids.iter().enumerate() {
        let lm_true = corpus.landmarks(id)?;
        let m_true = opts.measure_table.evaluate(&lm_true)?;
        let z_hat = maps.recover_latent(&preds[i])?;
        let lm_pred = maps.landmarks(&z_hat);
        let m_pred = opts.measure_table.evaluate(&lm_pred)?;
        for (j, ((_, tv), (_, pv))) in m_true.iter().zip(&m_pred).enumerate() {
            true_vals[j].push(*tv);
            pred_vals[j].push(*pv);
        }
    }
    let mut craniofacial = Vec::new();
    for (j, name) in measure_names.iter().enumerate() {
        let (r, p) = pearson(&true_vals[j], &pred_vals[j])?;
        craniofacial.push(CraniofacialEntry { name: name.clone(), r, p, n });
    }
    // random-pairing baseline on the nasal index (shift the pairing by one)
    let nasal = measure_names
        .iter()
        .position(|m| m == "nasal_index")
        .unwrap_or(0);
    let shifted: Vec<f64> = (0..n).map(|i| pred_vals[nasal][(i + 1) % n]).collect();
    let (r0, p0) = pearson(&true_vals[nasal], &shifted)?;
    let craniofacial_random_baseline = CraniofacialEntry {
        name: format!("random_baseline({})", measure_names[nasal]),
        r: r0,
        p: p0,
        n,
    };

    // pairwise feature-spread diagnostic over distinct identities
    let k = opts.spread_identities.min(n);
    let mut spread = 0.0;
    let mut pairs = 0usize;
    for i in 0..k {
        for j in i + 1..k {
            spread += cosine_angle_deg(&preds[i], &preds[j])?;
            pairs += 1;
        }
    }
    let feature_spread_deg = if pairs > 0 { spread / pairs as f64 } else { 0.0 };

    Ok(EvalReport {
        gallery_size: n,
        config_hash: config_hash.to_string(),
        durations,
        confusion: confusion_out,
        craniofacial,
        craniofacial_random_baseline,
        feature_spread_deg,
        spread_identities: k,
    })
}

/// The 3 s vs 6 s protocol on its own.
pub fn duration_ablation(
    params: &mut EncoderParams,
    corpus: &Corpus,
    cache_dir: Option<&Path>,
    config_hash: &str,
) -> Result<(DurationEval, DurationEval)> {
    let report = evaluate(params, corpus, cache_dir, config_hash, &EvalOptions::default())?;
    let three = report.duration(3.0).cloned().ok_or_else(|| Error::EmptyInput)?;
    let six = report.duration(6.0).cloned().ok_or_else(|| Error::EmptyInput)?;
    Ok((three, six))
}

// ---------------------------------------------------------------------------
// report files
// ---------------------------------------------------------------------------

/// Write the machine-readable CSVs plus a human-readable text table.
pub fn write_report(dir: &Path, report: &EvalReport) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let hash = &report.config_hash;

    let mut sim = format!("# config {hash}\nduration_s,metric,mean,std,n\n");
    let mut rec = format!("# config {hash}\nduration_s,metric,k,recall_percent,random_percent\n");
    for d in &report.durations {
        for s in &d.similarity {
            sim.push_str(&format!("{},{},{},{},{}\n", d.duration_s, s.metric, s.mean, s.std, s.n));
        }
        for r in &d.recall {
            for (i, &k) in r.ks.iter().enumerate() {
                rec.push_str(&format!(
                    "{},{},{},{},{}\n",
                    d.duration_s, r.metric, k, r.recall_percent[i], r.random_baseline_percent[i]
                ));
            }
        }
    }
    std::fs::write(dir.join("eval_similarity.csv"), sim)?;
    std::fs::write(dir.join("eval_recall.csv"), rec)?;

    for (attr, m) in &report.confusion {
        let mut csv = format!("# config {hash}\n# rows: labels from targets, cols: labels from predictions\ntrue\\pred");
        for l in &m.labels {
            csv.push_str(&format!(",{l}"));
        }
        csv.push('\n');
        for (i, l) in m.labels.iter().enumerate() {
            csv.push_str(l);
            for j in 0..m.labels.len() {
                csv.push_str(&format!(",{}", m.row_normalized[i][j]));
            }
            csv.push('\n');
        }
        std::fs::write(dir.join(format!("eval_confusion_{attr}.csv")), csv)?;
    }

    let mut cf = format!("# config {hash}\nmeasure,r,p,n\n");
    for e in report
        .craniofacial
        .iter()
        .chain(std::iter::once(&report.craniofacial_random_baseline))
    {
        cf.push_str(&format!("{},{},{},{}\n", e.name, e.r, e.p, e.n));
    }
    std::fs::write(dir.join("eval_craniofacial.csv"), cf)?;

    let mut f = std::io::BufWriter::new(std::fs::File::create(dir.join("eval_report.txt"))?);
    writeln!(f, "evaluation report  (config {hash})")?;
    writeln!(f, "gallery: {} held-out identities, one clip each\n", report.gallery_size)?;
    writeln!(f, "== feature similarity (prediction vs target) ==")?;
    writeln!(f, "{:<10} {:<8} {:>12} {:>12} {:>6}", "duration", "metric", "mean", "std", "n")?;
    for d in &report.durations {
        for s in &d.similarity {
            writeln!(
                f,
                "{:<10} {:<8} {:>12.4} {:>12.4} {:>6}",
                format!("{} s", d.duration_s),
                s.metric.to_string(),
                s.mean,
                s.std,
                s.n
            )?;
        }
    }
    writeln!(f, "\n== retrieval recall@K (%) ==")?;
    if let Some(d0) = report.durations.first() {
        if let Some(r0) = d0.recall.first() {
            let ks: Vec<String> = r0.ks.iter().map(|k| format!("R@{k}")).collect();
            writeln!(f, "{:<10} {:<8} {}", "duration", "metric", ks.join("  "))?;
        }
    }
    for d in &report.durations {
        for r in &d.recall {
            let vals: Vec<String> = r.recall_percent.iter().map(|v| format!("{v:.2}")).collect();
            writeln!(
                f,
                "{:<10} {:<8} {}",
                format!("{} s", d.duration_s),
                r.metric.to_string(),
                vals.join("  ")
            )?;
        }
    }
    if let Some(d0) = report.durations.first() {
        if let Some(r0) = d0.recall.first() {
            let vals: Vec<String> = r0.random_baseline_percent.iter().map(|v| format!("{v:.2}")).collect();
            writeln!(f, "{:<10} {:<8} {}", "random", "-", vals.join("  "))?;
        }
    }
    for (attr, m) in &report.confusion {
        writeln!(f, "\n== attribute confusion: {attr} (row-normalized; rows = target labels) ==")?;
        write!(f, "{:<10}", "")?;
        for l in &m.labels {
            write!(f, "{l:>10}")?;
        }
        writeln!(f)?;
        for (i, l) in m.labels.iter().enumerate() {
            write!(f, "{l:<10}")?;
            for j in 0..m.labels.len() {
                write!(f, "{:>10.3}", m.row_normalized[i][j])?;
            }
            writeln!(f)?;
        }
    }
    writeln!(f, "\n== craniofacial correlations (measures from file landmarks vs predicted) ==")?;
    writeln!(f, "{:<30} {:>8} {:>12} {:>6}", "measure", "r", "p", "n")?;
    for e in report
        .craniofacial
        .iter()
        .chain(std::iter::once(&report.craniofacial_random_baseline))
    {
        writeln!(f, "{:<30} {:>8.3} {:>12.3e} {:>6}", e.name, e.r, e.p, e.n)?;
    }
    writeln!(
        f,
        "\n== feature spread ==\nmean pairwise cosine angle over {} identities: {:.3} deg",
        report.spread_identities, report.feature_spread_deg
    )?;
    f.flush()?;
    Ok(())
}
