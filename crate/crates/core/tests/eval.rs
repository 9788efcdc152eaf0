#![allow(clippy::needless_range_loop)]

use did_core::eval::complexity::{instrumented_attention, instrumented_convolution};
use did_core::eval::{
    argmax, evaluate, fuse, op_count, rtf_benchmark, Bucket, ComplexityParams, LayerType,
    ScoreMatrix,
};
use did_core::features::FrontendConfig;
use did_core::models::{Classifier, Stacking, TransformerConfig};
use did_core::rng::derive_rng;
use did_core::DidError;
use proptest::prelude::*;
use rand::Rng;

fn classes(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("d{i}")).collect()
}

fn normalized(rng: &mut impl Rng, c: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..c).map(|_| rng.random_range(0.01..1.0)).collect();
    let z: f64 = raw.iter().sum();
    raw.iter().map(|v| v / z).collect()
}

fn random_matrix(seed: u64, rows: usize, c: usize) -> ScoreMatrix {
    let mut rng = derive_rng(seed, "scores");
    let mut m = ScoreMatrix::new(classes(c)).unwrap();
    for i in 0..rows {
        let label = rng.random_range(0..c);
        let duration = match i % 5 {
            0 => 5.0,
            1 => 20.0,
            _ => rng.random_range(0.5..30.0),
        };
        m.push(
            &format!("u{i:04}"),
            duration,
            Some(label),
            normalized(&mut rng, c),
        )
        .unwrap();
    }
    m
}

#[test]
fn fuse_averages_rows() {
    let mut a = ScoreMatrix::new(classes(2)).unwrap();
    a.push("x", 3.0, Some(1), vec![0.6, 0.4]).unwrap();
    let mut b = ScoreMatrix::new(classes(2)).unwrap();
    b.push("x", 3.0, Some(1), vec![0.2, 0.8]).unwrap();
    let f = fuse(&a, &b).unwrap();
    assert!((f.rows()[0][0] - 0.4).abs() < 1e-15 && (f.rows()[0][1] - 0.6).abs() < 1e-15);
    assert_eq!(fuse(&a, &a).unwrap(), a);
}

#[test]
fn fuse_aligns_by_id_and_reports_mismatches() {
    let a = random_matrix(1, 50, 4);
    let mut shuffled = ScoreMatrix::new(classes(4)).unwrap();
    for i in (0..50).rev() {
        shuffled
            .push(
                &a.utt_ids()[i],
                a.durations()[i],
                a.labels()[i],
                a.rows()[i].clone(),
            )
            .unwrap();
    }
    assert_eq!(fuse(&a, &shuffled).unwrap(), a);

    let mut other = ScoreMatrix::new(classes(4)).unwrap();
    other.push("u0000", 5.0, None, vec![0.25; 4]).unwrap();
    other.push("zz", 5.0, None, vec![0.25; 4]).unwrap();
    let mut small = ScoreMatrix::new(classes(4)).unwrap();
    small.push("u0000", 5.0, None, vec![0.25; 4]).unwrap();
    small.push("yy", 5.0, None, vec![0.25; 4]).unwrap();
    match fuse(&small, &other) {
        Err(DidError::Alignment(msg)) => assert!(msg.contains("yy") && msg.contains("zz"), "{msg}"),
        other => panic!("expected alignment error, got {other:?}"),
    }
}

#[test]
fn fused_rows_stay_normalized() {
    let a = random_matrix(2, 1000, 6);
    let other = random_matrix(3, 1000, 6);
    let mut b = ScoreMatrix::new(classes(6)).unwrap();
    for i in 0..1000 {
        b.push(
            &a.utt_ids()[i],
            a.durations()[i],
            a.labels()[i],
            other.rows()[i].clone(),
        )
        .unwrap();
    }
    let f = fuse(&a, &b).unwrap();
    let g = fuse(&b, &a).unwrap();
    for i in 0..1000 {
        assert!((f.rows()[i].iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        for k in 0..6 {
            let mean = (a.rows()[i][k] + b.rows()[i][k]) / 2.0;
            assert!((f.rows()[i][k] - mean).abs() <= 1e-12);
            assert!((f.rows()[i][k] - g.rows()[i][k]).abs() <= 1e-15);
        }
    }
}

#[test]
fn evaluate_examples() {
    let mut m = ScoreMatrix::new(classes(2)).unwrap();
    m.push("a", 3.0, Some(0), vec![0.9, 0.1]).unwrap();
    m.push("b", 10.0, Some(1), vec![0.2, 0.8]).unwrap();
    m.push("c", 25.0, Some(0), vec![0.3, 0.7]).unwrap();
    m.push("d", 4.0, Some(1), vec![0.6, 0.4]).unwrap();
    let r = evaluate(&m).unwrap();
    assert_eq!(r.overall.accuracy, Some(50.0));
    assert_eq!(
        (
            r.buckets.short.count,
            r.buckets.medium.count,
            r.buckets.long.count
        ),
        (2, 1, 1)
    );
    assert!(r.to_table().contains("50.00%"));
    assert_eq!(Bucket::of(3.0), Bucket::Short);
    assert_eq!(Bucket::of(5.0), Bucket::Medium);
    assert_eq!(Bucket::of(20.0), Bucket::Medium);
    assert_eq!(Bucket::of(20.000001), Bucket::Long);
    assert_eq!(Bucket::of(4.999999), Bucket::Short);
}

#[test]
fn perfect_scores_give_identity_confusion() {
    let mut m = ScoreMatrix::new(classes(3)).unwrap();
    for i in 0..9 {
        let mut row = vec![0.0; 3];
        row[i % 3] = 1.0;
        m.push(&format!("u{i}"), 1.0 + i as f64 * 3.0, Some(i % 3), row)
            .unwrap();
    }
    let r = evaluate(&m).unwrap();
    assert_eq!(r.overall.accuracy, Some(100.0));
    for (k, row) in r.confusion.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert_eq!(*v, if j == k { 100.0 } else { 0.0 });
        }
    }
    assert!(r.per_class.iter().all(|c| c.tally.accuracy == Some(100.0)));
}

#[test]
fn missing_labels_are_a_contract_error() {
    let mut m = ScoreMatrix::new(classes(2)).unwrap();
    m.push("a", 3.0, None, vec![0.5, 0.5]).unwrap();
    assert!(matches!(evaluate(&m), Err(DidError::Contract(_))));
}

#[test]
fn ties_go_to_the_lowest_index() {
    assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
    assert_eq!(argmax(&[0.1, 0.45, 0.45]), 1);
}

#[test]
fn evaluate_matches_brute_force_tally() {
    let m = random_matrix(9, 1000, 5);
    let r = evaluate(&m).unwrap();
    let mut confusion = [[0usize; 5]; 5];
    let mut buckets = [(0usize, 0usize); 3];
    for i in 0..1000 {
        let row = &m.rows()[i];
        let mut pred = 0;
        for k in 0..5 {
            if row[k] > row[pred] {
                pred = k;
            }
        }
        let truth = m.labels()[i].unwrap();
        confusion[truth][pred] += 1;
        let d = m.durations()[i];
        let b = if d < 5.0 {
            0
        } else if d <= 20.0 {
            1
        } else {
            2
        };
        buckets[b].0 += 1;
        buckets[b].1 += usize::from(pred == truth);
    }
    let correct: usize = (0..5).map(|k| confusion[k][k]).sum();
    assert_eq!(r.overall.correct, correct);
    assert_eq!(r.overall.count, 1000);
    for (b, t) in Bucket::ALL.iter().zip(&buckets) {
        assert_eq!((r.buckets.get(*b).count, r.buckets.get(*b).correct), *t);
    }
    let bucket_correct: usize = buckets.iter().map(|b| b.1).sum();
    assert_eq!(bucket_correct, r.overall.correct);
    for k in 0..5 {
        let n: usize = confusion[k].iter().sum();
        assert_eq!(r.per_class[k].tally.count, n);
        for j in 0..5 {
            assert_eq!(r.confusion[k][j], 100.0 * confusion[k][j] as f64 / n as f64);
        }
        assert!((r.confusion[k].iter().sum::<f64>() - 100.0).abs() <= 0.01);
    }
}

proptest! {
    #[test]
    fn report_depends_only_on_argmax(seed in 0u64..1000, power in 1.5f64..4.0) {
        let m = random_matrix(seed, 40, 4);
        let mut t = ScoreMatrix::new(classes(4)).unwrap();
        for i in 0..m.len() {
            let raw: Vec<f64> = m.rows()[i].iter().map(|v| v.powf(power)).collect();
            let z: f64 = raw.iter().sum();
            t.push(&m.utt_ids()[i], m.durations()[i], m.labels()[i], raw.iter().map(|v| v / z).collect()).unwrap();
        }
        prop_assert_eq!(evaluate(&m).unwrap(), evaluate(&t).unwrap());
    }
}

#[test]
fn score_file_round_trip() {
    let mut m = random_matrix(4, 20, 3);
    m.push("nolabel", 7.5, None, vec![0.2, 0.3, 0.5]).unwrap();
    let text = m.to_tsv();
    assert!(text.starts_with("#classes: d0,d1,d2\n"));
    assert!(text.contains("nolabel\t7.5\t-\t0.2\t0.3\t0.5\n"));
    let back = ScoreMatrix::from_tsv(&text).unwrap();
    assert_eq!(back, m);
    assert_eq!(back.to_tsv(), text);
    assert!(matches!(
        ScoreMatrix::from_tsv("u\t1\t-\t0.5\t0.5\n"),
        Err(DidError::Format(_))
    ));
}

fn params(n: u64, d: u64, k: u64) -> ComplexityParams {
    ComplexityParams { n, d, k }
}

#[test]
fn op_count_examples() {
    let p = params(1000, 512, 3);
    assert_eq!(op_count(LayerType::SelfAttention, p).unwrap(), 512_000_000);
    assert_eq!(op_count(LayerType::Convolution, p).unwrap(), 786_432_000);
    for n in [1u64, 7, 1000, 12345] {
        let a = op_count(LayerType::SelfAttention, params(n, 64, 3)).unwrap();
        let a2 = op_count(LayerType::SelfAttention, params(2 * n, 64, 3)).unwrap();
        let c = op_count(LayerType::Convolution, params(n, 64, 3)).unwrap();
        let c2 = op_count(LayerType::Convolution, params(2 * n, 64, 3)).unwrap();
        assert_eq!(a2, 4 * a);
        assert_eq!(c2, 2 * c);
    }
    let full = op_count(LayerType::SelfAttention, params(999, 512, 3)).unwrap();
    let reduced = op_count(LayerType::SelfAttention, params(333, 512, 3)).unwrap();
    assert_eq!(full, 9 * reduced);
    assert!(matches!(
        "pooling".parse::<LayerType>(),
        Err(DidError::Contract(_))
    ));
    assert!(op_count(LayerType::Convolution, params(0, 1, 1)).is_err());
}

#[test]
fn op_count_tracks_instrumented_loops() {
    let (d, k) = (16usize, 3usize);
    let mut rng = derive_rng(0, "complexity");
    let mut attn_ratio = Vec::new();
    let mut conv_ratio = Vec::new();
    for n in [64usize, 128, 256] {
        let x: Vec<f64> = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..k * d * d)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        let p = params(n as u64, d as u64, k as u64);
        let (_, a) = instrumented_attention(&x, n, d);
        let (_, c) = instrumented_convolution(&x, &w, n, d, k);
        attn_ratio.push(a as f64 / op_count(LayerType::SelfAttention, p).unwrap() as f64);
        conv_ratio.push(c as f64 / op_count(LayerType::Convolution, p).unwrap() as f64);
    }
    for r in attn_ratio.iter().chain(&conv_ratio) {
        assert!((r / attn_ratio[0] - 1.0).abs() < 1e-12 || (r / conv_ratio[0] - 1.0).abs() < 1e-12);
    }
    assert!(attn_ratio.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
    assert!(conv_ratio.windows(2).all(|w| (w[0] - w[1]).abs() < 1e-12));
}

#[test]
fn benchmark_downsampling_shortens_encoder_input() {
    let cfg = TransformerConfig {
        num_layers: 1,
        num_heads: 2,
        d_model: 16,
        d_inner: 32,
        num_classes: 2,
        ..TransformerConfig::default()
    };
    let stacking = Stacking {
        stack_factor: 4,
        downsample_factor: 3,
    };
    let model =
        Classifier::transformer(cfg, stacking, classes(2), &mut derive_rng(0, "i")).unwrap();
    let fe = FrontendConfig::default();
    let on = rtf_benchmark(&model, &fe, 2.0, true, 3).unwrap();
    let off = rtf_benchmark(&model, &fe, 2.0, false, 3).unwrap();
    assert_eq!(off.encoder_frames, 198);
    assert_eq!(on.encoder_frames, 198usize.div_ceil(3));
    assert!((on.rtf - on.wall_seconds / 2.0).abs() < 1e-15);
}
