// temporary scratch: sweep ridge strength
fn main() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = facevox_core::synth::build_corpus(42, 60, 3, 0, dir.path()).unwrap();
    let cfg = facevox_core::audio::SpectrogramConfig {
        fft_size: 128, window_ms: 8.0, hop_ms: 20.0,
        ..facevox_core::audio::SpectrogramConfig::default()
    };
    for scale in [1e-6f64, 1e-4, 1e-3, 1e-2, 1e-1, 1.0] {
        let r2 = facevox_core::synth::ridge_learnability_with(&corpus, &cfg, scale).unwrap();
        println!("ridge scale {scale:e}: R^2 = {r2:.4}");
    }
}
