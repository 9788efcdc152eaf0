use did_core::config::{RawConfig, RunConfig};
use did_core::models::Pooling;

#[test]
fn defaults_follow_the_reference_hyperparameters() {
    let c = RunConfig::default();
    assert_eq!(c.frontend.n_mels, 80);
    assert_eq!(
        (c.frontend.stack_factor, c.frontend.downsample_factor),
        (4, 3)
    );
    assert_eq!(c.transformer.num_layers, 4);
    assert_eq!(c.transformer.num_heads, 8);
    assert_eq!(c.transformer.d_model, 512);
    assert_eq!(c.transformer.d_inner, 2048);
    assert_eq!(c.transformer.input_dim, 320);
    assert_eq!(c.transformer.pooling, Pooling::MeanStd);
    assert_eq!(c.train.learning_rate, 0.001);
    assert_eq!(c.train.momentum, 0.8);
    assert_eq!(c.train.batch_size, 10);
    assert_eq!(c.transformer.dropout, 0.0);
    assert!(c.validate().is_ok());
}

#[test]
fn dump_round_trips() {
    let mut raw =
        RawConfig::parse("[train]\nlearning_rate = 0.0125\n[synth]\nbands = 3-4.5,21-22\n")
            .unwrap();
    raw.set_dotted("transformer.pooling", "mean").unwrap();
    raw.set_dotted("cnn.kernels", "5,5,3,3").unwrap();
    let cfg = raw.build().unwrap();
    assert_eq!(cfg.train.learning_rate, 0.0125);
    assert_eq!(cfg.transformer.pooling, Pooling::Mean);
    assert_eq!(cfg.synth.bands, vec![(3.0, 4.5), (21.0, 22.0)]);
    let text = cfg.to_text();
    assert_eq!(RunConfig::parse(&text).unwrap(), cfg);
    assert_eq!(RunConfig::parse(&text).unwrap().to_text(), text);
}

#[test]
fn overrides_win_over_the_file() {
    let mut raw = RawConfig::parse("[train]\nepochs = 3\n").unwrap();
    raw.set_dotted("train.epochs", "7").unwrap();
    assert_eq!(raw.build().unwrap().train.epochs, 7);
}

#[test]
fn rejects_unknown_and_malformed_entries() {
    for text in [
        "[train]\nepoch = 3\n",
        "[nonsense]\nx = 1\n",
        "epochs = 3\n",
        "[train]\nepochs 3\n",
        "[train]\nepochs = three\n",
        "[frontend]\ncmvn = maybe\n",
        "[transformer]\nd_model = 500\nnum_heads = 8\n",
        "[frontend]\nstack_factor = 2\n",
    ] {
        let err = RunConfig::parse(text).unwrap_err();
        assert_eq!(err.kind(), "config", "{text:?}: {err}");
    }
    let mut raw = RawConfig::default();
    assert!(raw.set_dotted("train", "1").is_err());
    assert!(raw.set_dotted("bogus.key", "1").is_err());
}

#[test]
fn comments_and_blank_lines_are_ignored() {
    let cfg = RunConfig::parse("# run\n\n[eval]\n  repetitions = 3  \n# done\n").unwrap();
    assert_eq!(cfg.eval.repetitions, 3);
}
