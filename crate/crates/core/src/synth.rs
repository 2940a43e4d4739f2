//! Synthetic paired corpus: voices, target face features, landmarks and
//! attributes all derive from a shared 16-D identity latent, so cross-modal
//! learnability is verifiable by construction.
//!
//! Eleven latent dimensions are audible: the fundamental (z0), overall gain
//! (z1), eight per-harmonic residual amplitudes (z2..z9) and the noise tilt
//! (z10). The remaining five influence only the targets, bounding how much of
//! the feature variance any listener can recover. A built-in ridge regression
//! from time-averaged spectrogram magnitudes certifies that the planted signal
//! is recoverable by a shallow independent method before the deep model is
//! ever blamed for a failure.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::audio::{
    preprocess, read_wav, write_wav_pcm16, CompressedSpectrogram, SpectrogramConfig, Waveform,
};
use crate::encoder::{FaceFeature, FACE_FEATURE_DIM};
use crate::error::{Error, Result};
use crate::io::{TensorFile, TensorRecord};
use crate::linalg;
use crate::parallel;
use crate::rng;

pub const LATENT_DIM: usize = 16;
/// Latent dimensions the renderer exposes acoustically.
pub const AUDIBLE_DIMS: usize = 11;
pub const LANDMARK_COUNT: usize = 68;
pub const HARMONICS: usize = 8;

/// Tertile boundary of the standard normal (for the 3-way age-band attribute).
const AGE_TERTILE: f64 = 0.430_727_299_295_457_56;

/// Identity latent plus its deterministic attribute labels.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityLatent {
    pub id: u64,
    pub z: Vec<f64>,
}

impl IdentityLatent {
    pub fn group(&self) -> &'static str {
        if self.z[0] >= 0.0 {
            "A"
        } else {
            "B"
        }
    }

    pub fn age_band(&self) -> &'static str {
        if self.z[1] < -AGE_TERTILE {
            "band0"
        } else if self.z[1] < AGE_TERTILE {
            "band1"
        } else {
            "band2"
        }
    }
}

pub fn identity_latent(corpus_seed: u64, id: u64) -> IdentityLatent {
    let mut stream = rng::stream(corpus_seed, "identity", &[id]);
    IdentityLatent {
        id,
        z: (0..LATENT_DIM).map(|_| stream.sample(StandardNormal)).collect(),
    }
}

/// Fixed seeded maps from latent to feature and landmarks.
#[derive(Debug, Clone)]
pub struct CorpusMaps {
    /// `[LATENT_DIM, 4096]` row-major; `v_f = z W + b`.
    pub feature_w: Vec<f64>,
    pub feature_b: Vec<f64>,
    /// `[LATENT_DIM, 136]`; landmarks = template + z L (xy interleaved).
    pub landmark_w: Vec<f64>,
    pub template: Vec<(f64, f64)>,
}

/// Background weight scales: audible latents load stronger on the feature map
/// than inaudible ones, and every latent gets a dedicated spiked feature
/// column (column k for latent k) so planted correlations are easy to audit.
const AUDIBLE_W_STD: f64 = 0.28;
const INAUDIBLE_W_STD: f64 = 0.12;
const SPIKE_WEIGHT: f64 = 3.0;

pub fn corpus_maps(corpus_seed: u64) -> CorpusMaps {
    let mut wstream = rng::stream(corpus_seed, "map.feature.w", &[]);
    let mut feature_w = vec![0.0; LATENT_DIM * FACE_FEATURE_DIM];
    for k in 0..LATENT_DIM {
        let std = if k < AUDIBLE_DIMS { AUDIBLE_W_STD } else { INAUDIBLE_W_STD };
        for j in 0..FACE_FEATURE_DIM {
            let g: f64 = wstream.sample(StandardNormal);
            feature_w[k * FACE_FEATURE_DIM + j] = g * std;
        }
        feature_w[k * FACE_FEATURE_DIM + k] += SPIKE_WEIGHT;
    }
    let mut bstream = rng::stream(corpus_seed, "map.feature.b", &[]);
    let feature_b: Vec<f64> = (0..FACE_FEATURE_DIM)
        .map(|_| {
            let g: f64 = bstream.sample(StandardNormal);
            g * 0.5
        })
        .collect();

    let mut lstream = rng::stream(corpus_seed, "map.landmark.w", &[]);
    let mut landmark_w = vec![0.0; LATENT_DIM * 2 * LANDMARK_COUNT];
    for k in 0..LATENT_DIM {
        let std = if k < AUDIBLE_DIMS { 2.5 } else { 1.0 };
        for j in 0..2 * LANDMARK_COUNT {
            let g: f64 = lstream.sample(StandardNormal);
            landmark_w[k * 2 * LANDMARK_COUNT + j] = g * std / (LATENT_DIM as f64).sqrt();
        }
    }

    CorpusMaps {
        feature_w,
        feature_b,
        landmark_w,
        template: canonical_template(),
    }
}

impl CorpusMaps {
    pub fn target_feature(&self, z: &[f64]) -> FaceFeature {
        let mut v = self.feature_b.clone();
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                let row = &self.feature_w[k * FACE_FEATURE_DIM..(k + 1) * FACE_FEATURE_DIM];
                for (vj, wj) in v.iter_mut().zip(row) {
                    *vj += zk * wj;
                }
            }
        }
        FaceFeature::new(v).expect("feature dims fixed")
    }

    pub fn landmarks(&self, z: &[f64]) -> Vec<(f64, f64)> {
        let mut pts: Vec<(f64, f64)> = self.template.clone();
        for (k, &zk) in z.iter().enumerate() {
            if zk != 0.0 {
                let row = &self.landmark_w[k * 2 * LANDMARK_COUNT..(k + 1) * 2 * LANDMARK_COUNT];
                for (j, p) in pts.iter_mut().enumerate() {
                    p.0 += zk * row[2 * j];
                    p.1 += zk * row[2 * j + 1];
                }
            }
        }
        pts
    }

    /// Recover the latent behind a (possibly predicted) feature by least
    /// squares through the fixed feature map.
    pub fn recover_latent(&self, feature: &[f64]) -> Result<Vec<f64>> {
        // Solve z from v = z W + b: rows of the design are W columns.
        let rows = FACE_FEATURE_DIM;
        let cols = LATENT_DIM;
        let mut a = vec![0.0; rows * cols];
        for k in 0..cols {
            for j in 0..rows {
                a[j * cols + k] = self.feature_w[k * FACE_FEATURE_DIM + j];
            }
        }
        let b: Vec<f64> = feature
            .iter()
            .zip(&self.feature_b)
            .map(|(v, off)| v - off)
            .collect();
        linalg::lstsq(rows, cols, &a, &b, 1e-9)
    }
}

/// A plausible frontal 68-point landmark layout in a 224 x 224 frame
/// (x right, y down): jawline 0-16, brows 17-26, nose 27-35, eyes 36-47,
/// outer lips 48-59, inner lips 60-67.
pub fn canonical_template() -> Vec<(f64, f64)> {
    let mut pts = Vec::with_capacity(LANDMARK_COUNT);
    for i in 0..17 {
        let phi = std::f64::consts::PI * i as f64 / 16.0;
        pts.push((112.0 - 82.0 * phi.cos(), 86.0 + 122.0 * phi.sin()));
    }
    pts.extend([
        (48.0, 70.0), (60.0, 62.0), (74.0, 58.0), (88.0, 60.0), (100.0, 64.0), // 17-21
        (124.0, 64.0), (136.0, 60.0), (150.0, 58.0), (164.0, 62.0), (176.0, 70.0), // 22-26
    ]);
    pts.extend([(112.0, 84.0), (112.0, 98.0), (112.0, 112.0), (112.0, 126.0)]); // 27-30
    pts.extend([(94.0, 140.0), (103.0, 143.0), (112.0, 145.0), (121.0, 143.0), (130.0, 140.0)]); // 31-35
    pts.extend([
        (58.0, 84.0), (68.0, 79.0), (80.0, 79.0), (92.0, 84.0), (80.0, 89.0), (68.0, 89.0), // 36-41
        (132.0, 84.0), (144.0, 79.0), (156.0, 79.0), (166.0, 84.0), (156.0, 89.0), (144.0, 89.0), // 42-47
    ]);
    pts.extend([
        (76.0, 170.0), (88.0, 163.0), (100.0, 159.0), (112.0, 161.0), (124.0, 159.0),
        (136.0, 163.0), (148.0, 170.0), (136.0, 179.0), (124.0, 184.0), (112.0, 185.0),
        (100.0, 184.0), (88.0, 179.0), // 48-59
    ]);
    pts.extend([
        (84.0, 170.0), (100.0, 168.0), (112.0, 169.0), (124.0, 168.0),
        (140.0, 170.0), (124.0, 174.0), (112.0, 175.0), (100.0, 174.0), // 60-67
    ]);
    debug_assert_eq!(pts.len(), LANDMARK_COUNT);
    pts
}

struct VoiceControls {
    f0: f64,
    gain: f64,
    amps: [f64; HARMONICS],
    noise_tilt: f64,
}

/// The fundamental frequency the renderer assigns to a latent.
pub fn fundamental_hz(z: &[f64]) -> f64 {
    190.0 + 5.5 * (0.7 * z[0]).tanh()
}

fn controls_from(z: &[f64]) -> VoiceControls {
    let mut amps = [0.0; HARMONICS];
    for (h, a) in amps.iter_mut().enumerate() {
        *a = (-0.35 * h as f64 + 0.8 * z[2 + h].tanh()).exp();
    }
    // Narrow fundamental range: harmonics stay near fixed spectrogram bins, so
    // pitch reads as coherent sub-bin leakage shifts rather than bin migration.
    VoiceControls {
        f0: fundamental_hz(z),
        gain: (0.5 * z[1].tanh()).exp(),
        amps,
        noise_tilt: 0.85 * z[10].tanh(),
    }
}

const BASE_AMPLITUDE: f64 = 0.06;
const SNR_POWER_RATIO: f64 = 100.0; // 20 dB

/// Render one clip: eight harmonics whose fundamental, gain and envelope are
/// smooth functions of the latent, amplitude-modulated and noised per clip.
/// Same `(z, clip stream)` twice gives a bitwise-identical waveform.
pub fn render_voice(
    corpus_seed: u64,
    latent: &IdentityLatent,
    clip: u64,
    sample_rate_hz: u32,
    seconds: f64,
) -> Waveform {
    let n = (seconds * sample_rate_hz as f64).round() as usize;
    let c = controls_from(&latent.z);
    let mut clip_rng = rng::stream(corpus_seed, "clip", &[latent.id, clip]);
    let two_pi = 2.0 * std::f64::consts::PI;

    // per-clip phases and amplitude modulation
    let phases: Vec<f64> = (0..HARMONICS).map(|_| clip_rng.gen_range(0.0..two_pi)).collect();
    let am_depth = clip_rng.gen_range(0.25..0.45);
    let am_freq = clip_rng.gen_range(0.8..2.2);
    let am_phase = clip_rng.gen_range(0.0..two_pi);

    // harmonic oscillators as complex rotations
    let mut osc: Vec<(f64, f64, f64, f64)> = (0..HARMONICS)
        .map(|h| {
            let w = two_pi * (h + 1) as f64 * c.f0 / sample_rate_hz as f64;
            (phases[h].cos(), phases[h].sin(), w.cos(), w.sin())
        })
        .collect();

    let mut signal = vec![0.0; n];
    let am_w = two_pi * am_freq / sample_rate_hz as f64;
    for (t, s) in signal.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (h, o) in osc.iter_mut().enumerate() {
            acc += c.amps[h] * o.1; // sin component
            let (cos_p, sin_p, cw, sw) = *o;
            o.0 = cos_p * cw - sin_p * sw;
            o.1 = cos_p * sw + sin_p * cw;
        }
        let am = 1.0 + am_depth * (am_w * t as f64 + am_phase).sin();
        *s = BASE_AMPLITUDE * c.gain * am * acc;
    }

    let signal_power = signal.iter().map(|v| v * v).sum::<f64>() / n as f64;

    // identity-tilted noise at fixed SNR
    let mut prev = 0.0;
    let mut noise = vec![0.0; n];
    for v in noise.iter_mut() {
        let w: f64 = clip_rng.sample(StandardNormal);
        *v = w + c.noise_tilt * prev;
        prev = w;
    }
    let noise_power = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let scale = (signal_power / SNR_POWER_RATIO / noise_power.max(1e-300)).sqrt();
    for (s, nv) in signal.iter_mut().zip(&noise) {
        *s += scale * nv;
    }

    Waveform::new(signal, sample_rate_hz).expect("non-empty synthetic clip")
}

// ---------------------------------------------------------------------------
// corpus on disk
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplits {
    pub train: Vec<u64>,
    pub val: Vec<u64>,
    pub test: Vec<u64>,
    /// Extra held-out identities (one clip each) for retrieval galleries.
    pub gallery: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub format_version: u32,
    pub seed: u64,
    pub n_identities: usize,
    pub clips_per_identity: usize,
    pub gallery_identities: usize,
    pub sample_rate_hz: u32,
    pub clip_seconds: f64,
    pub splits: CorpusSplits,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub dir: PathBuf,
    pub manifest: CorpusManifest,
}

pub fn wav_name(identity: u64, clip: u64) -> String {
    format!("wav/id{identity:05}_c{clip:02}.wav")
}

pub fn feature_name(identity: u64) -> String {
    format!("features/id{identity:05}.tsr")
}

pub fn landmarks_name(identity: u64) -> String {
    format!("landmarks/id{identity:05}.csv")
}

pub fn spectrogram_name(identity: u64, clip: u64) -> String {
    format!("spec/id{identity:05}_c{clip:02}.tsr")
}

/// Generate and write the full corpus. Identities `0..n` carry
/// `clips_per_identity` clips and are split 80/10/10 by identity; identities
/// `n..n+gallery` get one clip each and form the held-out gallery.
pub fn build_corpus(
    seed: u64,
    n_identities: usize,
    clips_per_identity: usize,
    gallery_identities: usize,
    out_dir: &Path,
) -> Result<Corpus> {
    if n_identities < 3 {
        return Err(Error::InvalidConfig("need at least 3 identities".into()));
    }
    if clips_per_identity == 0 {
        return Err(Error::InvalidConfig("need at least one clip per identity".into()));
    }
    for sub in ["wav", "features", "landmarks"] {
        std::fs::create_dir_all(out_dir.join(sub))?;
    }
    let maps = corpus_maps(seed);
    let sample_rate = 16_000u32;
    let clip_seconds = 6.0;

    // identity-disjoint 80/10/10 split
    let mut split_rng = rng::stream(seed, "split", &[]);
    let order = rng::permutation(&mut split_rng, n_identities);
    let n_train = (n_identities * 8) / 10;
    let n_val = n_identities / 10;
    let mut train: Vec<u64> = order[..n_train].iter().map(|&i| i as u64).collect();
    let mut val: Vec<u64> = order[n_train..n_train + n_val].iter().map(|&i| i as u64).collect();
    let mut test: Vec<u64> = order[n_train + n_val..].iter().map(|&i| i as u64).collect();
    train.sort_unstable();
    val.sort_unstable();
    test.sort_unstable();
    let gallery: Vec<u64> = (n_identities as u64..(n_identities + gallery_identities) as u64).collect();

    let total = n_identities + gallery_identities;
    parallel::try_par_map(total, |idx| -> Result<()> {
        let id = idx as u64;
        let latent = identity_latent(seed, id);
        let clips = if idx < n_identities { clips_per_identity } else { 1 };
        for clip in 0..clips as u64 {
            let w = render_voice(seed, &latent, clip, sample_rate, clip_seconds);
            write_wav_pcm16(&out_dir.join(wav_name(id, clip)), &w)?;
        }
        let feature = maps.target_feature(&latent.z);
        let mut tf = TensorFile::new(crate::io::NO_CONFIG_HASH);
        tf.push(TensorRecord::f64("v_f", &[FACE_FEATURE_DIM], feature.values().to_vec()));
        tf.save(&out_dir.join(feature_name(id)))?;
        let pts = maps.landmarks(&latent.z);
        let mut csv = String::with_capacity(LANDMARK_COUNT * 24);
        for (x, y) in &pts {
            csv.push_str(&format!("{x},{y}\n"));
        }
        std::fs::write(out_dir.join(landmarks_name(id)), csv)?;
        Ok(())
    })?;

    let mut attrs = String::from("identity,group,age_band\n");
    for id in 0..total as u64 {
        let latent = identity_latent(seed, id);
        attrs.push_str(&format!("{id},{},{}\n", latent.group(), latent.age_band()));
    }
    std::fs::write(out_dir.join("attributes.csv"), attrs)?;

    let manifest = CorpusManifest {
        format_version: 1,
        seed,
        n_identities,
        clips_per_identity,
        gallery_identities,
        sample_rate_hz: sample_rate,
        clip_seconds,
        splits: CorpusSplits { train, val, test, gallery },
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join("manifest.json"))?);
    serde_json::to_writer_pretty(&mut f, &manifest)
        .map_err(|e| Error::format("manifest.json", e.to_string()))?;
    f.write_all(b"\n")?;
    f.flush()?;

    Ok(Corpus {
        dir: out_dir.to_path_buf(),
        manifest,
    })
}

impl Corpus {
    pub fn load(dir: &Path) -> Result<Corpus> {
        let path = dir.join("manifest.json");
        let bytes = std::fs::read(&path)?;
        let manifest: CorpusManifest = serde_json::from_slice(&bytes)
            .map_err(|e| Error::format(path.display().to_string(), e.to_string()))?;
        if manifest.format_version != 1 {
            return Err(Error::format(
                path.display().to_string(),
                format!("unsupported corpus version {}", manifest.format_version),
            ));
        }
        Ok(Corpus { dir: dir.to_path_buf(), manifest })
    }

    pub fn maps(&self) -> CorpusMaps {
        corpus_maps(self.manifest.seed)
    }

    pub fn latent(&self, id: u64) -> IdentityLatent {
        identity_latent(self.manifest.seed, id)
    }

    pub fn wav_path(&self, id: u64, clip: u64) -> PathBuf {
        self.dir.join(wav_name(id, clip))
    }

    pub fn waveform(&self, id: u64, clip: u64) -> Result<Waveform> {
        read_wav(&self.wav_path(id, clip))
    }

    pub fn feature(&self, id: u64) -> Result<Vec<f64>> {
        let path = self.dir.join(feature_name(id));
        let tf = TensorFile::load(&path)?;
        let rec = tf
            .find("v_f")
            .ok_or_else(|| Error::format(path.display().to_string(), "no v_f record"))?;
        Ok(rec.data.clone())
    }

    pub fn landmarks(&self, id: u64) -> Result<Vec<(f64, f64)>> {
        let path = self.dir.join(landmarks_name(id));
        let text = std::fs::read_to_string(&path)?;
        let mut pts = Vec::with_capacity(LANDMARK_COUNT);
        for (i, line) in text.lines().enumerate() {
            let (x, y) = line
                .split_once(',')
                .ok_or_else(|| Error::format(path.display().to_string(), format!("line {i}: expected x,y")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(path.display().to_string(), format!("line {i}: {e}")))
            };
            pts.push((parse(x)?, parse(y)?));
        }
        if pts.len() != LANDMARK_COUNT {
            return Err(Error::format(
                path.display().to_string(),
                format!("expected {LANDMARK_COUNT} landmarks, got {}", pts.len()),
            ));
        }
        Ok(pts)
    }
}

// ---------------------------------------------------------------------------
// built-in learnability oracle
// ---------------------------------------------------------------------------

/// Time-averaged magnitude per (bin, channel): the shallow feature for the
/// ridge oracle.
pub fn time_avg_magnitude(spec: &CompressedSpectrogram) -> Vec<f64> {
    let (t, f) = (spec.frames, spec.bins);
    let mut out = vec![0.0; 2 * f];
    for ti in 0..t {
        for fi in 0..f {
            out[2 * fi] += spec.data[(ti * f + fi) * 2].abs();
            out[2 * fi + 1] += spec.data[(ti * f + fi) * 2 + 1].abs();
        }
    }
    let inv = 1.0 / t as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    out
}

/// Fit ridge regression from time-averaged spectrogram magnitudes to the
/// target features on the train split; return validation R^2. This is the
/// module's independent recoverability certificate.
pub fn ridge_learnability(corpus: &Corpus, cfg: &SpectrogramConfig) -> Result<f64> {
    ridge_learnability_with(corpus, cfg, RIDGE_SCALE)
}

const RIDGE_SCALE: f64 = 1e-3;

#[doc(hidden)]
pub fn ridge_learnability_with(corpus: &Corpus, cfg: &SpectrogramConfig, ridge_scale: f64) -> Result<f64> {
    let collect = |ids: &[u64]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let clips = corpus.manifest.clips_per_identity as u64;
        let pairs: Vec<(u64, u64)> = ids
            .iter()
            .flat_map(|&id| (0..clips).map(move |c| (id, c)))
            .collect();
        let xs = parallel::try_par_map(pairs.len(), |i| {
            let (id, clip) = pairs[i];
            let w = corpus.waveform(id, clip)?;
            let spec = preprocess(&w, cfg)?;
            let mut feats = time_avg_magnitude(&spec);
            feats.push(1.0); // bias column
            Ok::<Vec<f64>, Error>(feats)
        })?;
        let ys = parallel::try_par_map(ids.len(), |i| corpus.feature(ids[i]))?;
        let mut y_rows = Vec::with_capacity(pairs.len());
        for (i, _) in pairs.iter().enumerate() {
            y_rows.push(ys[i / clips as usize].clone());
        }
        Ok((xs, y_rows))
    };

    let (x_train, y_train) = collect(&corpus.manifest.splits.train)?;
    let (x_val, y_val) = collect(&corpus.manifest.splits.val)?;
    if x_train.is_empty() || x_val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let d = x_train[0].len();
    let ydim = y_train[0].len();

    // normal equations
    let mut xtx = vec![0.0; d * d];
    for row in &x_train {
        for i in 0..d {
            let xi = row[i];
            if xi == 0.0 {
                continue;
            }
            for (j, &xj) in row.iter().enumerate() {
                xtx[i * d + j] += xi * xj;
            }
        }
    }
    let trace: f64 = (0..d).map(|i| xtx[i * d + i]).sum();
    let ridge = ridge_scale * trace / d as f64;
    for i in 0..d {
        xtx[i * d + i] += ridge;
    }
    let mut xty = vec![0.0; d * ydim];
    for (row, y) in x_train.iter().zip(&y_train) {
        for i in 0..d {
            let xi = row[i];
            if xi != 0.0 {
                let dst = &mut xty[i * ydim..(i + 1) * ydim];
                for (dv, yv) in dst.iter_mut().zip(y) {
                    *dv += xi * yv;
                }
            }
        }
    }
    let w = linalg::solve_spd(d, &xtx, &xty)?;

    // train-mean baseline for the R^2 denominator
    let mut y_mean = vec![0.0; ydim];
    for y in &y_train {
        for (m, v) in y_mean.iter_mut().zip(y) {
            *m += v;
        }
    }
    y_mean.iter_mut().for_each(|m| *m /= y_train.len() as f64);

    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (row, y) in x_val.iter().zip(&y_val) {
        for j in 0..ydim {
            let mut pred = 0.0;
            for i in 0..d {
                pred += row[i] * w[i * ydim + j];
            }
            let r = y[j] - pred;
            ss_res += r * r;
            let c = y[j] - y_mean[j];
            ss_tot += c * c;
        }
    }
    Ok(1.0 - ss_res / ss_tot)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_are_deterministic_and_clip_varied() {
        let latent = identity_latent(5, 3);
        let a = render_voice(5, &latent, 0, 16_000, 1.0);
        let b = render_voice(5, &latent, 0, 16_000, 1.0);
        assert_eq!(a.samples(), b.samples());
        let c = render_voice(5, &latent, 1, 16_000, 1.0);
        assert_ne!(a.samples(), c.samples());
        assert!(a.samples().iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn spectral_peak_lands_at_the_mapped_fundamental() {
        // maximal fundamental control, flat residuals
        let latent = IdentityLatent { id: 0, z: { let mut z = vec![0.0; LATENT_DIM]; z[0] = 3.0; z } };
        let f0 = fundamental_hz(&latent.z);
        let w = render_voice(9, &latent, 0, 16_000, 6.0);
        let cfg = SpectrogramConfig::default();
        let (frames, bins, data) = crate::audio::stft(&w, &cfg).unwrap();
        let mut mag = vec![0.0; bins];
        for t in 0..frames {
            for f in 0..bins {
                let re = data[(t * bins + f) * 2];
                let im = data[(t * bins + f) * 2 + 1];
                mag[f] += (re * re + im * im).sqrt();
            }
        }
        let peak = mag
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        let expected = (f0 / (16_000.0 / 512.0)).round() as usize;
        assert!(
            peak.abs_diff(expected) <= 1,
            "peak bin {peak}, expected {expected} +-1 (f0 {f0:.1} Hz)"
        );
    }

    #[test]
    fn identity_determines_target_feature_exactly() {
        let maps = corpus_maps(77);
        let latent = identity_latent(77, 4);
        let f1 = maps.target_feature(&latent.z);
        let f2 = maps.target_feature(&latent.z);
        assert_eq!(f1.values(), f2.values());
    }

    #[test]
    fn latent_recovery_inverts_the_feature_map() {
        let maps = corpus_maps(13);
        let latent = identity_latent(13, 8);
        let v = maps.target_feature(&latent.z);
        let z = maps.recover_latent(v.values()).unwrap();
        for (a, b) in latent.z.iter().zip(&z) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn planted_correlation_exceeds_point_nine() {
        let maps = corpus_maps(21);
        // feature column most driven by z0
        let row0 = &maps.feature_w[..FACE_FEATURE_DIM];
        let j_star = row0
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().partial_cmp(&b.1.abs()).unwrap())
            .unwrap()
            .0;
        let n = 160;
        let mut z0s = Vec::with_capacity(n);
        let mut fs = Vec::with_capacity(n);
        for id in 0..n as u64 {
            let latent = identity_latent(21, id);
            z0s.push(latent.z[0]);
            fs.push(maps.target_feature(&latent.z).values()[j_star]);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let (mx, my) = (mean(&z0s), mean(&fs));
        let mut c = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for i in 0..n {
            c += (z0s[i] - mx) * (fs[i] - my);
            vx += (z0s[i] - mx).powi(2);
            vy += (fs[i] - my).powi(2);
        }
        let r = c / (vx.sqrt() * vy.sqrt());
        assert!(r > 0.9, "planted correlation r = {r}");
    }

    #[test]
    fn corpus_build_is_reproducible_and_split_disjoint() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let c1 = build_corpus(3, 10, 2, 4, d1.path()).unwrap();
        let _c2 = build_corpus(3, 10, 2, 4, d2.path()).unwrap();
        let m1 = std::fs::read(d1.path().join("manifest.json")).unwrap();
        let m2 = std::fs::read(d2.path().join("manifest.json")).unwrap();
        assert_eq!(m1, m2);
        let w1 = std::fs::read(d1.path().join(wav_name(7, 1))).unwrap();
        let w2 = std::fs::read(d2.path().join(wav_name(7, 1))).unwrap();
        assert_eq!(w1, w2);

        let s = &c1.manifest.splits;
        assert_eq!(s.train.len(), 8);
        assert_eq!(s.val.len(), 1);
        assert_eq!(s.test.len(), 1);
        assert_eq!(s.gallery.len(), 4);
        let mut all: Vec<u64> = s.train.iter().chain(&s.val).chain(&s.test).chain(&s.gallery).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 14);

        // clips of one identity share the target feature; waveforms differ
        let f = c1.feature(7).unwrap();
        let latent = c1.latent(7);
        assert_eq!(f, c1.maps().target_feature(&latent.z).values());
        let a = c1.waveform(7, 0).unwrap();
        let b = c1.waveform(7, 1).unwrap();
        assert_ne!(a.samples(), b.samples());
    }

    #[test]
    fn landmarks_roundtrip_through_csv() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = build_corpus(11, 4, 1, 0, dir.path()).unwrap();
        let from_file = corpus.landmarks(2).unwrap();
        let direct = corpus.maps().landmarks(&corpus.latent(2).z);
        assert_eq!(from_file.len(), LANDMARK_COUNT);
        for (a, b) in from_file.iter().zip(&direct) {
            assert_eq!(a, b); // shortest-roundtrip float formatting is exact
        }
    }

    #[test]
    fn ridge_oracle_clears_the_learnability_floor() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = build_corpus(42, 60, 3, 0, dir.path()).unwrap();
        // smaller FFT keeps this unit-sized; the planted cues sit well below 4 kHz
        let cfg = SpectrogramConfig {
            fft_size: 128,
            window_ms: 8.0,
            hop_ms: 20.0,
            ..SpectrogramConfig::default()
        };
        let r2 = ridge_learnability(&corpus, &cfg).unwrap();
        assert!(r2 > 0.5, "validation R^2 = {r2}");
    }
}
