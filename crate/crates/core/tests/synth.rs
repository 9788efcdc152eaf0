use std::path::Path;

use did_core::eval::Bucket;
use did_core::features::{fbank, read_manifest, read_wav, FeatureMatrix, FrontendConfig};
use did_core::rng::derive_rng;
use did_core::synth::{
    class_mean_spread, generate, lag_oracle, synthesize, window_oracle, SynthSpec,
};

fn load(manifest: &Path, classes: &[String], cmvn: bool) -> Vec<(FeatureMatrix, usize)> {
    let fe = FrontendConfig {
        cmvn,
        ..FrontendConfig::default()
    };
    read_manifest(manifest)
        .unwrap()
        .iter()
        .map(|e| {
            let audio = read_wav(&e.path).unwrap();
            let label = classes.iter().position(|c| *c == e.label).unwrap();
            (fbank(&audio, &fe).unwrap(), label)
        })
        .collect()
}

#[test]
fn manifest_counts_and_buckets() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec {
        train_per_class: 50,
        dev_per_class: 0,
        test_per_class: 0,
        lags: vec![20, 30, 40, 50],
        bands: vec![(1.0, 1.5), (5.0, 6.0), (20.1, 20.3)],
        sample_rate: 8000,
        ..SynthSpec::default()
    };
    let corpus = generate(&spec, dir.path()).unwrap();
    assert_eq!(corpus.utterances, 600);
    let text = std::fs::read_to_string(&corpus.train).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 600);

    let entries = read_manifest(&corpus.train).unwrap();
    let mut seen = [0usize; 3];
    for e in &entries {
        let b = Bucket::of(e.duration);
        seen[b as usize] += 1;
        // Header duration agrees with the manifest.
        let audio = read_wav(&e.path).unwrap();
        assert!(
            (audio.duration_seconds() - e.duration).abs() <= 0.010,
            "{}",
            e.utt_id
        );
    }
    assert_eq!(seen, [200, 200, 200]);
}

#[test]
fn same_seed_same_bytes() {
    let spec = SynthSpec {
        train_per_class: 1,
        dev_per_class: 1,
        test_per_class: 1,
        bands: vec![(3.0, 3.5)],
        lags: vec![20, 30, 40, 50],
        ..SynthSpec::default()
    };
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let ca = generate(&spec, a.path()).unwrap();
    let cb = generate(&spec, b.path()).unwrap();
    for (ma, mb) in [
        (&ca.train, &cb.train),
        (&ca.dev, &cb.dev),
        (&ca.test, &cb.test),
    ] {
        let ea = read_manifest(ma).unwrap();
        let eb = read_manifest(mb).unwrap();
        assert_eq!(ea.len(), eb.len());
        for (x, y) in ea.iter().zip(&eb) {
            assert_eq!(x.utt_id, y.utt_id);
            assert_eq!(x.label, y.label);
            assert_eq!(
                std::fs::read(&x.path).unwrap(),
                std::fs::read(&y.path).unwrap()
            );
        }
    }

    let other = SynthSpec { seed: 1, ..spec };
    let c = tempfile::tempdir().unwrap();
    let cc = generate(&other, c.path()).unwrap();
    let first = |m: &Path| read_manifest(m).unwrap()[0].path.clone();
    assert_ne!(
        std::fs::read(first(&ca.train)).unwrap(),
        std::fs::read(first(&cc.train)).unwrap()
    );
}

#[test]
fn frames_repeat_at_the_class_lag() {
    let spec = SynthSpec::default();
    let fe = FrontendConfig {
        cmvn: false,
        ..FrontendConfig::default()
    };
    for class in 0..spec.num_classes {
        let mut rng = derive_rng(3, "lag");
        let audio = synthesize(&spec, class, 16000 * 6, &mut rng).unwrap();
        let feats = fbank(&audio, &fe).unwrap();
        let oracle = lag_oracle(&spec.lags);
        assert_eq!(oracle.predict(&feats), class);
    }
}

#[test]
fn default_corpus_has_signal_only_at_long_range() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SynthSpec::default();
    let corpus = generate(&spec, dir.path()).unwrap();
    let classes = &corpus.classes;

    let raw = load(&corpus.train, classes, false);
    let refs: Vec<_> = raw.iter().map(|(f, l)| (f, *l)).collect();
    let spread = class_mean_spread(&refs, spec.num_classes).unwrap();
    assert!(spread <= 0.1, "class mean spread {spread}");

    let train = load(&corpus.train, classes, true);
    let test = load(&corpus.test, classes, true);
    let accuracy = |pred: &dyn Fn(&FeatureMatrix) -> usize| {
        test.iter().filter(|(f, l)| pred(f) == *l).count() as f64 / test.len() as f64
    };

    let lag = lag_oracle(&spec.lags);
    let lag_acc = accuracy(&|f| lag.predict(f));
    assert!(lag_acc >= 0.95, "lag oracle {lag_acc}");

    let refs: Vec<_> = train.iter().map(|(f, l)| (f, *l)).collect();
    let window = window_oracle(&refs, spec.num_classes, 13).unwrap();
    let win_acc = accuracy(&|f| window.predict(f).unwrap());
    let bound = 1.0 / spec.num_classes as f64 + 0.15;
    assert!(win_acc <= bound, "window oracle {win_acc} > {bound}");
}

#[test]
fn invalid_specs_are_rejected() {
    let base = SynthSpec::default();
    let bad = [
        SynthSpec {
            lags: vec![50, 70, 90],
            ..base.clone()
        },
        SynthSpec {
            lags: vec![50, 50, 90, 110],
            ..base.clone()
        },
        SynthSpec {
            lags: vec![55, 70, 90, 110],
            ..base.clone()
        },
        SynthSpec {
            signs: vec![1, 2, 1, 1],
            ..base.clone()
        },
        SynthSpec {
            bands: vec![(1.0, 2.0)],
            ..base.clone()
        },
        SynthSpec {
            num_classes: 1,
            lags: vec![50],
            signs: vec![1],
            ..base.clone()
        },
    ];
    for spec in bad {
        assert!(spec.validate().is_err(), "{spec:?}");
    }
    assert!(base.validate().is_ok());
}
