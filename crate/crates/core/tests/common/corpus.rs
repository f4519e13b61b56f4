use emg2artic_core::corpus::{Split, Utterance};
use emg2artic_core::signal_prep::{preprocess_recording, PreprocessConfig};
use emg2artic_core::synth_data::{gen_utterance, SynthConfig};

/// Preprocessed synthetic utterances built in memory.
pub fn synthetic(cfg: &SynthConfig, split: Split, n: usize) -> Vec<Utterance> {
    let prep = PreprocessConfig::default();
    (0..n)
        .map(|i| {
            let s = gen_utterance(cfg, split, i).unwrap();
            let p = preprocess_recording(&s.recording, &prep).unwrap();
            Utterance::from_parts(&p, &s.targets, &s.phonemes).unwrap()
        })
        .collect()
}
