use scatsim_core::audio::AudioClip;
use scatsim_core::scattering::{ScatteringConfig, ScatteringNetwork, Variant};
use scatsim_core::synth;

const SR: f64 = 8000.0;

fn config(multirate: bool, oversampling: u32) -> ScatteringConfig {
    ScatteringConfig {
        sample_rate: SR,
        octaves: 5,
        min_center_frequency: 100.0,
        time_constant: 0.25,
        multirate,
        oversampling,
        ..Default::default()
    }
}

fn suite() -> Vec<AudioClip> {
    let d = 0.5;
    let mut am = synth::harmonic_tone(220.0, 5, d, SR);
    synth::amplitude_modulate(&mut am, 7.0, 0.8, 0.3, SR);
    let signals = vec![
        synth::white_noise(4000, 1),
        synth::am_tone(440.0, 6.0, d, SR),
        synth::am_tone(440.0, 12.0, d, SR),
        synth::chirp(200.0, 4.0, 1, d, SR),
        synth::chirp(800.0, -4.0, 3, d, SR),
        synth::harmonic_tone(261.6, 8, d, SR),
        synth::impulse_train(8.0, d, SR),
        synth::tone_burst(660.0, 0.2, 0.1, d, SR),
        am,
        synth::white_noise(2500, 2),
    ];
    signals
        .into_iter()
        .enumerate()
        .map(|(i, x)| AudioClip::new(format!("clip{i}"), x, SR))
        .collect()
}

#[test]
fn multirate_matches_dense_per_path() {
    let dense = ScatteringNetwork::new(&config(false, 0), Variant::Joint).unwrap();
    let multi = ScatteringNetwork::new(&config(true, ScatteringConfig::default().oversampling), Variant::Joint).unwrap();
    let mut worst = (0.0, String::new());
    for clip in suite() {
        let a = dense.transform(&clip).unwrap();
        let b = multi.transform(&clip).unwrap();
        // Coefficients a thousand times below the clip's largest one are
        // compared against that floor.
        let floor = 1e-3 * a.values.iter().cloned().fold(0.0, f64::max);
        for ((p, x), y) in a.paths.iter().zip(&a.values).zip(&b.values) {
            let err = (x - y).abs() / x.abs().max(floor);
            if err > worst.0 {
                worst = (err, format!("{} {p}", clip.id));
            }
        }
    }
    assert!(worst.0 < 0.01, "{:.4} at {}", worst.0, worst.1);
}
