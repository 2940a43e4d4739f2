//! Waveform ingestion and the compressed complex spectrogram frontend.
//!
//! The chain is: mono select -> linear resample to 16 kHz -> cyclic pad to the
//! target duration -> Hann-windowed STFT (25 ms window, 10 ms hop, 512-point
//! FFT, bins 0..=256 kept) -> signed power-law compression with exponent 0.3
//! applied to the real and imaginary channels independently. A 6-second clip
//! maps to a `[598, 257, 2]` tensor.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{TensorFile, TensorRecord};
use crate::parallel;

/// Mono audio samples with their sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    samples: Vec<f64>,
    sample_rate_hz: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyInput);
        }
        if sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample rate must be positive".into()));
        }
        Ok(Waveform { samples, sample_rate_hz })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate_hz(&self) -> u32 {
        self.sample_rate_hz
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        false // non-empty by construction
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// The first `seconds` of the clip; the whole clip if shorter.
    pub fn crop_front(&self, seconds: f64) -> Waveform {
        let n = ((seconds * self.sample_rate_hz as f64).round() as usize)
            .min(self.samples.len())
            .max(1);
        Waveform {
            samples: self.samples[..n].to_vec(),
            sample_rate_hz: self.sample_rate_hz,
        }
    }
}

/// STFT frontend parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrogramConfig {
    pub sample_rate_hz: u32,
    pub window_ms: f64,
    pub hop_ms: f64,
    pub fft_size: usize,
    pub compression_exponent: f64,
    pub target_duration_s: f64,
}

impl Default for SpectrogramConfig {
    fn default() -> Self {
        SpectrogramConfig {
            sample_rate_hz: 16_000,
            window_ms: 25.0,
            hop_ms: 10.0,
            fft_size: 512,
            compression_exponent: 0.3,
            target_duration_s: 6.0,
        }
    }
}

impl SpectrogramConfig {
    pub fn window_samples(&self) -> usize {
        (self.window_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn hop_samples(&self) -> usize {
        (self.hop_ms * self.sample_rate_hz as f64 / 1000.0).round() as usize
    }

    pub fn freq_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_rate_hz == 0 {
            return Err(Error::InvalidConfig("sample_rate_hz must be positive".into()));
        }
        if self.window_samples() == 0 || self.window_samples() > self.fft_size {
            return Err(Error::InvalidConfig(format!(
                "window of {} samples must be in 1..=fft_size ({})",
                self.window_samples(),
                self.fft_size
            )));
        }
        if self.hop_samples() < 1 {
            return Err(Error::InvalidConfig("hop must be at least one sample".into()));
        }
        if !(self.compression_exponent > 0.0 && self.compression_exponent <= 1.0) {
            return Err(Error::InvalidConfig(
                "compression_exponent must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Power-law-compressed complex STFT, laid out `[T, F, 2]` (real, imaginary).
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSpectrogram {
    pub frames: usize,
    pub bins: usize,
    /// Row-major `[T, F, 2]`.
    pub data: Vec<f64>,
}

impl CompressedSpectrogram {
    pub fn shape(&self) -> [usize; 3] {
        [self.frames, self.bins, 2]
    }

    pub fn to_record(&self, name: &str, f32_storage: bool) -> TensorRecord {
        let dims = [self.frames, self.bins, 2];
        if f32_storage {
            TensorRecord::f32(name, &dims, self.data.clone())
        } else {
            TensorRecord::f64(name, &dims, self.data.clone())
        }
    }

    pub fn from_record(rec: &TensorRecord, origin: &str) -> Result<Self> {
        if rec.dims.len() != 3 || rec.dims[2] != 2 {
            return Err(Error::format(
                origin,
                format!("spectrogram record must be [T, F, 2], got {:?}", rec.dims),
            ));
        }
        Ok(CompressedSpectrogram {
            frames: rec.dims[0] as usize,
            bins: rec.dims[1] as usize,
            data: rec.data.clone(),
        })
    }
}

/// Cyclically repeat `w` until it reaches `target_duration_s`; longer inputs
/// pass through untouched.
pub fn loop_pad(w: &Waveform, target_duration_s: f64) -> Waveform {
    let target = (target_duration_s * w.sample_rate_hz as f64).ceil() as usize;
    if w.samples.len() >= target {
        return w.clone();
    }
    let src = &w.samples;
    let samples = (0..target).map(|i| src[i % src.len()]).collect();
    Waveform {
        samples,
        sample_rate_hz: w.sample_rate_hz,
    }
}

/// Linear-interpolation resampling. Identity when the rates already match.
pub fn resample_linear(w: &Waveform, target_rate_hz: u32) -> Result<Waveform> {
    if target_rate_hz == 0 {
        return Err(Error::InvalidConfig("target rate must be positive".into()));
    }
    if target_rate_hz == w.sample_rate_hz {
        return Ok(w.clone());
    }
    let ratio = target_rate_hz as f64 / w.sample_rate_hz as f64;
    let out_len = ((w.samples.len() as f64) * ratio).round().max(1.0) as usize;
    let src = &w.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 / ratio;
            let i0 = pos.floor() as usize;
            if i0 + 1 >= src.len() {
                src[src.len() - 1]
            } else {
                let frac = pos - i0 as f64;
                src[i0] * (1.0 - frac) + src[i0 + 1] * frac
            }
        })
        .collect();
    Ok(Waveform {
        samples,
        sample_rate_hz: target_rate_hz,
    })
}

/// Symmetric Hann window: `0.5 * (1 - cos(2 pi n / (W - 1)))`.
pub fn hann_window(len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![0.0];
    }
    (0..len)
        .map(|n| 0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / (len - 1) as f64).cos()))
        .collect()
}

/// Complex STFT of `w`. Frames are left-aligned (no centering), Hann-windowed,
/// zero-padded from the window length up to `fft_size`; bins `0..=fft_size/2`
/// are kept. Returns `(frames, bins, interleaved re/im)` laid out `[T, F, 2]`.
pub fn stft(w: &Waveform, cfg: &SpectrogramConfig) -> Result<(usize, usize, Vec<f64>)> {
    cfg.validate()?;
    let win = cfg.window_samples();
    let hop = cfg.hop_samples();
    if w.samples.len() < win {
        return Err(Error::TooShortForFrame {
            len: w.samples.len(),
            window: win,
        });
    }
    let frames = 1 + (w.samples.len() - win) / hop;
    let bins = cfg.freq_bins();
    let window = hann_window(win);
    let fft_size = cfg.fft_size;

    let rows = parallel::par_map(frames, |t| {
        let start = t * hop;
        let mut re = vec![0.0; fft_size];
        let mut im = vec![0.0; fft_size];
        for (i, (&s, &h)) in w.samples[start..start + win].iter().zip(&window).enumerate() {
            re[i] = s * h;
        }
        fft_in_place(&mut re, &mut im);
        let mut row = Vec::with_capacity(bins * 2);
        for f in 0..bins {
            row.push(re[f]);
            row.push(im[f]);
        }
        row
    });

    let mut data = Vec::with_capacity(frames * bins * 2);
    for row in rows {
        data.extend_from_slice(&row);
    }
    Ok((frames, bins, data))
}

/// In-place complex DFT. Radix-2 iterative when the length is a power of two,
/// otherwise a direct O(N^2) evaluation.
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    assert_eq!(n, im.len());
    if n <= 1 {
        return;
    }
    if !n.is_power_of_two() {
        let (mut ore, mut oim) = (vec![0.0; n], vec![0.0; n]);
        for (k, (or, oi)) in ore.iter_mut().zip(oim.iter_mut()).enumerate() {
            let mut sr = 0.0;
            let mut si = 0.0;
            for j in 0..n {
                let ang = -2.0 * std::f64::consts::PI * (k * j % n) as f64 / n as f64;
                let (s, c) = ang.sin_cos();
                sr += re[j] * c - im[j] * s;
                si += re[j] * s + im[j] * c;
            }
            *or = sr;
            *oi = si;
        }
        re.copy_from_slice(&ore);
        im.copy_from_slice(&oim);
        return;
    }
    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = (i.reverse_bits() >> (usize::BITS - bits)) as usize;
        if j > i {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        for start in (0..n).step_by(len) {
            let mut cr = 1.0;
            let mut ci = 0.0;
            for k in 0..len / 2 {
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
        }
        len <<= 1;
    }
}

/// Signed power-law compression applied elementwise: `sgn(x) * |x|^exponent`.
pub fn power_compress_value(x: f64, exponent: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(exponent)
    }
}

/// Compress an interleaved complex spectrogram into a [`CompressedSpectrogram`];
/// real and imaginary channels are compressed independently.
pub fn power_compress(frames: usize, bins: usize, data: &[f64], exponent: f64) -> Result<CompressedSpectrogram> {
    if !(exponent > 0.0 && exponent <= 1.0) {
        return Err(Error::InvalidConfig("compression exponent must lie in (0, 1]".into()));
    }
    if data.len() != frames * bins * 2 {
        return Err(Error::shape(
            "power_compress",
            format!("expected {} values for [{frames}, {bins}, 2], got {}", frames * bins * 2, data.len()),
        ));
    }
    Ok(CompressedSpectrogram {
        frames,
        bins,
        data: data.iter().map(|&x| power_compress_value(x, exponent)).collect(),
    })
}

/// Full frontend chain: resample, cyclic pad, STFT, power compression.
pub fn preprocess(w: &Waveform, cfg: &SpectrogramConfig) -> Result<CompressedSpectrogram> {
    cfg.validate()?;
    let resampled = resample_linear(w, cfg.sample_rate_hz)?;
    let padded = if cfg.target_duration_s > 0.0 {
        loop_pad(&resampled, cfg.target_duration_s)
    } else {
        resampled
    };
    let (frames, bins, spec) = stft(&padded, cfg)?;
    let out = power_compress(frames, bins, &spec, cfg.compression_exponent)?;
    for &v in &out.data {
        if !v.is_finite() {
            return Err(Error::NonFinite("compressed spectrogram".into()));
        }
    }
    Ok(out)
}

/// Read a WAV file: 16-bit signed PCM or 32-bit float, channel 0 of
/// multi-channel content.
pub fn read_wav(path: &Path) -> Result<Waveform> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Wav(format!("{}: zero channels", path.display())));
    }
    let samples: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .step_by(channels)
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?,
        (fmt, bits) => {
            return Err(Error::Wav(format!(
                "{}: unsupported subtype {fmt:?}/{bits}-bit (need 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    Waveform::new(samples, spec.sample_rate)
}

/// Write a mono 16-bit PCM WAV. Values are clamped to [-1, 1] and rounded.
pub fn write_wav_pcm16(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in w.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Write a mono 32-bit float WAV (exact round-trip for f32 values).
pub fn write_wav_f32(path: &Path, w: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: w.sample_rate_hz,
        bits_per_sample: 32,
        sample_format: hound::SampleFormat::Float,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    for &s in w.samples() {
        writer.write_sample(s as f32).map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    }
    writer.finalize().map_err(|e| Error::Wav(format!("{}: {e}", path.display())))?;
    Ok(())
}

/// Cache a spectrogram to a tensor file with the run's config hash.
pub fn save_spectrogram(path: &Path, spec: &CompressedSpectrogram, config_hash: &str) -> Result<()> {
    let mut tf = TensorFile::new(config_hash);
    tf.push(spec.to_record("spectrogram", true));
    tf.save(path)
}

/// Load a cached spectrogram, returning it with the file's config hash.
pub fn load_spectrogram(path: &Path) -> Result<(CompressedSpectrogram, String)> {
    let tf = TensorFile::load(path)?;
    let rec = tf
        .find("spectrogram")
        .ok_or_else(|| Error::format(path.display().to_string(), "no spectrogram record"))?;
    Ok((
        CompressedSpectrogram::from_record(rec, &path.display().to_string())?,
        tf.config_hash,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, seconds: f64) -> Waveform {
        let n = (seconds * rate as f64).round() as usize;
        Waveform::new(
            (0..n)
                .map(|i| (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
                .collect(),
            rate,
        )
        .unwrap()
    }

    #[test]
    fn loop_pad_identity_when_long_enough() {
        let w = Waveform::new(vec![0.1; 96_000], 16_000).unwrap();
        let out = loop_pad(&w, 6.0);
        assert_eq!(out.len(), 96_000);
        assert_eq!(out.samples(), w.samples());
    }

    #[test]
    fn loop_pad_wraps_cyclically() {
        let src: Vec<f64> = (0..40_000).map(|i| (i % 997) as f64 / 997.0).collect();
        let w = Waveform::new(src.clone(), 16_000).unwrap();
        let out = loop_pad(&w, 6.0);
        assert_eq!(out.len(), 96_000);
        for i in (0..96_000).step_by(377) {
            assert_eq!(out.samples()[i], src[i % 40_000], "index {i}");
        }
        assert_eq!(out.samples()[40_000], src[0]);
    }

    #[test]
    fn loop_pad_constant_signal() {
        let w = Waveform::new(vec![0.5], 16_000).unwrap();
        let out = loop_pad(&w, 6.0);
        assert_eq!(out.len(), 96_000);
        assert!(out.samples().iter().all(|&s| s == 0.5));
    }

    #[test]
    fn loop_pad_keeps_longer_inputs_whole() {
        let w = Waveform::new(vec![0.25; 120_000], 16_000).unwrap();
        assert_eq!(loop_pad(&w, 6.0).len(), 120_000);
    }

    #[test]
    fn empty_waveform_is_rejected() {
        assert!(matches!(Waveform::new(vec![], 16_000), Err(Error::EmptyInput)));
    }

    #[test]
    fn resample_identity_at_matching_rate() {
        let w = sine(100.0, 16_000, 0.5);
        let out = resample_linear(&w, 16_000).unwrap();
        assert_eq!(out.samples(), w.samples());
    }

    #[test]
    fn resample_constant_stays_constant() {
        let w = Waveform::new(vec![0.3; 8_000], 8_000).unwrap();
        let out = resample_linear(&w, 16_000).unwrap();
        assert_eq!(out.len(), 16_000);
        assert!(out.samples().iter().all(|&s| (s - 0.3).abs() < 1e-12));
    }

    #[test]
    fn resample_sine_tracks_analytic_signal() {
        let w = sine(100.0, 48_000, 1.0);
        let out = resample_linear(&w, 16_000).unwrap();
        assert_eq!(out.len(), 16_000);
        for (i, &s) in out.samples().iter().enumerate().take(out.len() - 1) {
            let expect = (2.0 * std::f64::consts::PI * 100.0 * i as f64 / 16_000.0).sin();
            assert!((s - expect).abs() < 1e-3, "sample {i}: {s} vs {expect}");
        }
    }

    #[test]
    fn stft_six_seconds_is_598_by_257() {
        let w = sine(220.0, 16_000, 6.0);
        let cfg = SpectrogramConfig::default();
        let (frames, bins, _) = stft(&w, &cfg).unwrap();
        assert_eq!((frames, bins), (598, 257));
    }

    #[test]
    fn stft_zero_input_is_zero() {
        let w = Waveform::new(vec![0.0; 16_000], 16_000).unwrap();
        let (_, _, data) = stft(&w, &SpectrogramConfig::default()).unwrap();
        assert!(data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stft_too_short_errors() {
        let w = Waveform::new(vec![1.0; 399], 16_000).unwrap();
        let err = stft(&w, &SpectrogramConfig::default()).unwrap_err();
        assert!(err.to_string().contains("too short for one frame"));
    }

    /// Direct O(N^2) DFT of one windowed, zero-padded frame.
    fn naive_frame_dft(frame: &[f64], fft_size: usize, bins: usize) -> Vec<(f64, f64)> {
        (0..bins)
            .map(|k| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (j, &x) in frame.iter().enumerate() {
                    let ang = -2.0 * std::f64::consts::PI * (k * j) as f64 / fft_size as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                (re, im)
            })
            .collect()
    }

    #[test]
    fn stft_matches_naive_dft_oracle() {
        use rand::Rng;
        let cfg = SpectrogramConfig::default();
        let win = cfg.window_samples();
        let hop = cfg.hop_samples();
        let window = hann_window(win);
        let mut rng = crate::rng::stream(11, "stft-oracle", &[]);
        for trial in 0..5 {
            let n = win + 2 * hop + trial * 13; // 3 frames
            let samples: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Waveform::new(samples.clone(), 16_000).unwrap();
            let (frames, bins, data) = stft(&w, &cfg).unwrap();
            assert_eq!(frames, 1 + (n - win) / hop);
            for t in 0..frames {
                let windowed: Vec<f64> = samples[t * hop..t * hop + win]
                    .iter()
                    .zip(&window)
                    .map(|(&s, &h)| s * h)
                    .collect();
                let oracle = naive_frame_dft(&windowed, cfg.fft_size, bins);
                for f in 0..bins {
                    let re = data[(t * bins + f) * 2];
                    let im = data[(t * bins + f) * 2 + 1];
                    assert!(
                        (re - oracle[f].0).abs() < 1e-9 && (im - oracle[f].1).abs() < 1e-9,
                        "frame {t} bin {f}: ({re},{im}) vs {:?}",
                        oracle[f]
                    );
                }
            }
        }
    }

    #[test]
    fn stft_is_linear() {
        use rand::Rng;
        let cfg = SpectrogramConfig::default();
        let n = cfg.window_samples() + 3 * cfg.hop_samples();
        let mut rng = crate::rng::stream(12, "stft-linear", &[]);
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let (a, b) = (0.7, -1.3);
        let mix: Vec<f64> = x.iter().zip(&y).map(|(&xi, &yi)| a * xi + b * yi).collect();
        let (_, _, sx) = stft(&Waveform::new(x, 16_000).unwrap(), &cfg).unwrap();
        let (_, _, sy) = stft(&Waveform::new(y, 16_000).unwrap(), &cfg).unwrap();
        let (_, _, sm) = stft(&Waveform::new(mix, 16_000).unwrap(), &cfg).unwrap();
        for i in 0..sm.len() {
            assert!((sm[i] - (a * sx[i] + b * sy[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn power_compress_pinned_values() {
        assert_eq!(power_compress_value(0.0, 0.3), 0.0);
        assert_eq!(power_compress_value(1.0, 0.3), 1.0);
        assert_eq!(power_compress_value(-1.0, 0.3), -1.0);
        assert!((power_compress_value(8.0, 0.3) - 1.8660659830736148).abs() < 1e-14);
        assert!((power_compress_value(-0.001, 0.3) + 0.12589254117941672).abs() < 1e-14);
    }

    #[test]
    fn power_compress_is_odd_and_monotone() {
        let xs: Vec<f64> = (-50..=50).map(|i| i as f64 / 10.0).collect();
        let mut prev = f64::NEG_INFINITY;
        for &x in &xs {
            let y = power_compress_value(x, 0.3);
            assert_eq!(y, -power_compress_value(-x, 0.3));
            assert!(y >= prev);
            prev = y;
        }
    }

    #[test]
    fn preprocess_six_second_zero_clip_shape() {
        let w = Waveform::new(vec![0.0; 96_000], 16_000).unwrap();
        let out = preprocess(&w, &SpectrogramConfig::default()).unwrap();
        assert_eq!(out.shape(), [598, 257, 2]);
        assert!(out.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_three_seconds_without_padding() {
        let w = sine(150.0, 16_000, 3.0);
        let cfg = SpectrogramConfig {
            target_duration_s: 0.0,
            ..SpectrogramConfig::default()
        };
        let out = preprocess(&w, &cfg).unwrap();
        assert_eq!(out.shape(), [298, 257, 2]);
    }

    #[test]
    fn preprocess_pads_two_second_clip_to_full_length() {
        let w = sine(150.0, 16_000, 2.0);
        let out = preprocess(&w, &SpectrogramConfig::default()).unwrap();
        assert_eq!(out.shape(), [598, 257, 2]);
    }

    #[test]
    fn preprocess_is_deterministic() {
        let w = sine(137.0, 16_000, 2.5);
        let a = preprocess(&w, &SpectrogramConfig::default()).unwrap();
        let b = preprocess(&w, &SpectrogramConfig::default()).unwrap();
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn wav_pcm16_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = sine(100.0, 16_000, 0.25);
        write_wav_pcm16(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.sample_rate_hz(), 16_000);
        assert_eq!(back.len(), w.len());
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert!((a - b).abs() < 1.0 / 32000.0);
        }
    }

    #[test]
    fn wav_f32_roundtrip_is_exact_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let w = sine(100.0, 16_000, 0.1);
        write_wav_f32(&path, &w).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in w.samples().iter().zip(back.samples()) {
            assert_eq!(*a as f32 as f64, *b);
        }
    }

    #[test]
    fn spectrogram_cache_roundtrip_preserves_hash() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.tsr");
        let w = sine(200.0, 16_000, 1.0);
        let cfg = SpectrogramConfig {
            target_duration_s: 0.0,
            ..SpectrogramConfig::default()
        };
        let spec = preprocess(&w, &cfg).unwrap();
        save_spectrogram(&path, &spec, "feedc0defeedc0de").unwrap();
        let (back, hash) = load_spectrogram(&path).unwrap();
        assert_eq!(hash, "feedc0defeedc0de");
        assert_eq!(back.shape(), spec.shape());
        for (a, b) in spec.data.iter().zip(&back.data) {
            assert_eq!(*a as f32 as f64, *b); // f32 cache storage
        }
    }
}
