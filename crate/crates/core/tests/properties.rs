//! Property tests across the public core API.

use proptest::prelude::*;
use robofi_core::align::{align_streams, AlignConfig};
use robofi_core::autodiff::{attention, Graph, Tensor};
use robofi_core::capture::{encode_capture, parse_capture, RawPacket};
use robofi_core::models::predict;
use robofi_core::preprocess::{amplitude, downsample, downsample_index, downsampled_rows, patchify, unpatchify};
use robofi_core::train::{compute_metrics, mc_splits, SplitSpec};
use robofi_core::types::RAW_SUBCARRIERS;
use robofi_core::{ActivityLabel, AmplitudeWindow, ComplexValue, CsiMatrix, SnifferId, NUM_CLASSES};

fn label() -> impl Strategy<Value = ActivityLabel> {
    (0..NUM_CLASSES).prop_map(|i| ActivityLabel::from_index(i).unwrap())
}

fn window(max_rows: usize, max_cols: usize) -> impl Strategy<Value = AmplitudeWindow> {
    (1..=max_rows, 1..=max_cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-1e3f64..1e3, r * c).prop_map(move |d| AmplitudeWindow::new(r, c, d, 30).unwrap())
    })
}

fn packet() -> impl Strategy<Value = RawPacket> {
    (any::<bool>(), -1e6f64..1e6, prop::collection::vec((-1e4f32..1e4, -1e4f32..1e4), RAW_SUBCARRIERS)).prop_map(
        |(s2, t, sc)| {
            let sniffer = if s2 { SnifferId::S2 } else { SnifferId::S1 };
            let sc = sc.into_iter().map(|(re, im)| ComplexValue::new(re as f64, im as f64)).collect();
            RawPacket::new(sniffer, t, sc).unwrap()
        },
    )
}

/// Softmax-weighted average computed directly from the definition.
fn attention_oracle(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * d];
    for i in 0..n {
        let s: Vec<f64> = (0..n).map(|j| (0..d).map(|t| q[i * d + t] * k[j * d + t]).sum::<f64>() / (d as f64).sqrt()).collect();
        let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = s.iter().map(|x| (x - m).exp()).sum();
        for j in 0..n {
            let w = (s[j] - m).exp() / z;
            for t in 0..d {
                out[i * d + t] += w * v[j * d + t];
            }
        }
    }
    out
}

fn run_attention(q: &[f64], k: &[f64], v: &[f64], n: usize, d: usize) -> Vec<f64> {
    let mut g = Graph::<f64>::new();
    let t = |x: &[f64]| Tensor::new(vec![n, d], x.to_vec()).unwrap();
    let (qv, kv, vv) = (g.input_owned(t(q)), g.input_owned(t(k)), g.input_owned(t(v)));
    let out = attention(&mut g, qv, kv, vv).unwrap();
    g.value(out).to_vec()
}

fn qkv() -> impl Strategy<Value = (usize, usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>)> {
    (2usize..=6, 2usize..=8).prop_flat_map(|(n, d)| {
        let m = move || prop::collection::vec(-3.0f64..3.0, n * d);
        (Just(n), Just(d), m(), m(), m(), Just((0..n).collect::<Vec<_>>()).prop_shuffle())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn capture_encoding_round_trips(packets in prop::collection::vec(packet(), 0..4)) {
        let decoded = parse_capture(&encode_capture(&packets)).unwrap();
        prop_assert_eq!(decoded, packets);
    }

    #[test]
    fn truncated_capture_is_rejected(packets in prop::collection::vec(packet(), 1..3), cut in 1usize..2048) {
        let bytes = encode_capture(&packets);
        let cut = cut.min(bytes.len() - 7);
        prop_assert!(parse_capture(&bytes[..bytes.len() - cut]).is_err());
    }

    #[test]
    fn amplitude_ignores_phase(mags in prop::collection::vec(0.0f64..100.0, 12), phases in prop::collection::vec(-3.2f64..3.2, 12)) {
        let rotated: Vec<ComplexValue> = mags.iter().zip(&phases).map(|(m, p)| ComplexValue::from_polar(*m, *p)).collect();
        let real: Vec<ComplexValue> = mags.iter().map(|m| ComplexValue::new(*m, 0.0)).collect();
        let ts: Vec<f64> = (0..3).map(|k| k as f64).collect();
        let a = amplitude(&CsiMatrix::new(3, 4, rotated, ts.clone(), SnifferId::S1).unwrap(), 30);
        let b = amplitude(&CsiMatrix::new(3, 4, real, ts, SnifferId::S1).unwrap(), 30);
        for (x, y) in a.data().iter().zip(b.data()) {
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + y));
        }
    }

    #[test]
    fn downsample_selects_mapped_rows(w in window(400, 3), to in prop::sample::select(vec![30u32, 25, 20, 15, 10])) {
        let out = downsample(&w, to).unwrap();
        let rows = ((w.rows() * to as usize) as f64 / 30.0 + 0.5).floor() as usize;
        prop_assert_eq!(out.rows(), rows);
        prop_assert_eq!(downsampled_rows(w.rows(), 30, to), rows);
        prop_assert_eq!(out.rate_hz(), to);
        for k in 0..out.rows() {
            let src = (k * 30 / to as usize).min(w.rows() - 1);
            prop_assert_eq!(downsample_index(k, 30, to), k * 30 / to as usize);
            prop_assert_eq!(out.row(k), w.row(src));
        }
    }

    #[test]
    fn patchify_round_trips(w in window(50, 50), p in 1usize..16) {
        let patches = patchify(&w, p).unwrap();
        prop_assert_eq!(patches.patch_len(), p * p);
        prop_assert_eq!(patches.count(), w.rows().div_ceil(p) * w.cols().div_ceil(p));
        prop_assert_eq!(unpatchify(&patches).unwrap(), w);
    }

    #[test]
    fn attention_matches_oracle_and_ignores_key_order((n, d, q, k, v, order) in qkv()) {
        let out = run_attention(&q, &k, &v, n, d);
        let want = attention_oracle(&q, &k, &v, n, d);
        for (a, b) in out.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        let permute = |x: &[f64]| order.iter().flat_map(|&r| x[r * d..(r + 1) * d].to_vec()).collect::<Vec<_>>();
        let shuffled = run_attention(&q, &permute(&k), &permute(&v), n, d);
        for (a, b) in out.iter().zip(&shuffled) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn metric_identities(pairs in prop::collection::vec((label(), label()), 1..300)) {
        let (preds, truth): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let m = compute_metrics(&preds, &truth).unwrap();
        prop_assert_eq!(m.total(), preds.len() as u64);
        let diag: u64 = (0..NUM_CLASSES).map(|c| m.confusion[c][c]).sum();
        prop_assert_eq!(m.accuracy, diag as f64 / preds.len() as f64);
        for c in 0..NUM_CLASSES {
            let (p, r, f) = (m.per_class_precision[c], m.per_class_recall[c], m.per_class_f1[c]);
            prop_assert!((0.0..=1.0).contains(&p) && (0.0..=1.0).contains(&r));
            let want = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            prop_assert!((f - want).abs() < 1e-15);
        }
        let macro_f1 = m.per_class_f1.iter().sum::<f64>() / NUM_CLASSES as f64;
        prop_assert!((m.macro_f1 - macro_f1).abs() < 1e-15);
    }

    #[test]
    fn prediction_ignores_logit_shift(logits in prop::collection::vec(-50.0f64..50.0, NUM_CLASSES), shift in -1e3f64..1e3) {
        let shifted: Vec<f64> = logits.iter().map(|l| l + shift).collect();
        let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        // a shift can merge logits that differ by less than one ulp of the shift
        prop_assume!(logits.iter().filter(|l| top - **l < 1e-9).count() == 1);
        prop_assert_eq!(predict(&logits).unwrap(), predict(&shifted).unwrap());
    }

    #[test]
    fn monte_carlo_folds_partition_the_data(labels in prop::collection::vec(label(), 10..120), seed in any::<u64>()) {
        let spec = SplitSpec::default();
        for split in mc_splits(&labels, &spec, seed).unwrap() {
            let mut all: Vec<usize> = split.train.iter().chain(&split.val).chain(&split.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        }
        prop_assert_eq!(mc_splits(&labels, &spec, seed).unwrap(), mc_splits(&labels, &spec, seed).unwrap());
    }

    #[test]
    fn aligned_grid_respects_skew_bound(jitter in prop::collection::vec(-0.005f64..0.005, 40), start in 0usize..300) {
        // packets sit on the 30 Hz lattice up to jitter, so every tick has a
        // packet within half a period
        let offset = start as f64 / 30.0;
        let stream = |sniffer, shift: f64| -> Vec<RawPacket> {
            jitter.iter().enumerate().map(|(k, j)| {
                let sc = vec![ComplexValue::new(k as f64, 0.0); RAW_SUBCARRIERS];
                RawPacket::new(sniffer, shift + k as f64 / 30.0 + j, sc).unwrap()
            }).collect()
        };
        let a = stream(SnifferId::S1, offset);
        let b = stream(SnifferId::S2, offset + 0.003);
        let cfg = AlignConfig::new(30, 1.0);
        let pair = align_streams(&a, &b, &cfg).unwrap();
        prop_assert_eq!(pair.m1.rows(), 30);
        prop_assert_eq!(pair.m2.rows(), 30);
        prop_assert!(pair.max_abs_skew() <= cfg.max_skew_s + 1e-12);
        for w in pair.grid_timestamps.windows(2) {
            prop_assert!(w[1] > w[0]);
        }
    }
}
