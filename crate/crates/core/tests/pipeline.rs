use std::path::Path;

use emgspeech::features::{FeatureConfig, FeatureKind, FeatureStore};
use emgspeech::io::SplitPart;
use emgspeech::lm::train_ngram;
use emgspeech::neural::{Checkpoint, TrainConfig};
use emgspeech::pipeline::{
    check_compatible, decode_store, featurize_dir, preprocess_corpus, train_store, DecodeMode, DecodeOptions,
    Decoded,
};
use emgspeech::preprocess::BandpassSpec;
use emgspeech::testkit::{generate_corpus, SyntheticSpec};

fn small_run(root: &Path) -> Checkpoint {
    let spec = SyntheticSpec {
        n_train: 12,
        n_val: 3,
        n_test: 5,
        seed: 21,
        ..SyntheticSpec::default()
    };
    generate_corpus(&spec, &root.join("corpus")).unwrap();
    preprocess_corpus(&root.join("corpus"), &root.join("pre"), &BandpassSpec::default(), 1).unwrap();
    for kind in [FeatureKind::Spd, FeatureKind::Spectrogram] {
        let cfg = FeatureConfig {
            kind,
            ..FeatureConfig::default()
        };
        featurize_dir(&root.join("pre"), &root.join(kind.as_str()), &cfg, 1).unwrap();
    }
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    train_store(&root.join("spd"), 1, 6, &cfg, 1, |_| {}).unwrap().0
}

fn tokens(decoded: &[Decoded]) -> Vec<String> {
    decoded
        .iter()
        .flat_map(|d| d.hypothesis.split_whitespace().map(str::to_string))
        .collect()
}

#[test]
fn decode_checks_store_and_fuses_a_phoneme_lm() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let ckpt = small_run(root);

    let spd = FeatureStore::open(&root.join("spd")).unwrap();
    check_compatible(&ckpt, &spd).unwrap();
    let spectrogram = FeatureStore::open(&root.join("spectrogram")).unwrap();
    assert!(matches!(check_compatible(&ckpt, &spectrogram), Err(emgspeech::Error::Data(_))));

    let plain = decode_store(&ckpt, &spd, SplitPart::Test, &DecodeOptions::default(), 1).unwrap();
    assert_eq!(plain.len(), 5);
    assert!(plain.iter().all(|d| !d.reference.is_empty()));

    // an LM that has only ever seen "aa" leaves nothing else affordable
    let lm = train_ngram(&[vec!["aa".to_string(); 4]], 2, 0.75).unwrap();
    let arpa = root.join("aa.arpa");
    lm.save_arpa(&arpa).unwrap();
    let fused = |weight: f64| {
        let opts = DecodeOptions {
            lm: Some(arpa.clone()),
            lm_weight: weight,
            ..DecodeOptions::default()
        };
        decode_store(&ckpt, &spd, SplitPart::Test, &opts, 1).unwrap()
    };
    assert_eq!(fused(0.0), plain);
    let biased = tokens(&fused(1.0));
    assert!(biased.iter().all(|t| t == "aa"), "{biased:?}");

    let words = DecodeOptions {
        mode: DecodeMode::Wer,
        lexicon: Some(root.join("corpus/lexicon.txt")),
        ..DecodeOptions::default()
    };
    let decoded = decode_store(&ckpt, &spd, SplitPart::Test, &words, 1).unwrap();
    assert!(tokens(&decoded).iter().all(|w| w.starts_with('w')));
}
