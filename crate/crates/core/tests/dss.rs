use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dss_core::dss::{
    batch_norm, decode_banks, encode_bank, scale_correlate_with, BankShape, BatchNormState, BnMode,
    FilterBank, ForwardOptions, Network, NetworkSpec, NetworkWeights, ScaleBoundary,
};
use dss_core::equivariance::scale_receptive_depth;
use dss_core::kernels::SpatialBoundary;
use dss_core::scalespace::ScaleSpaceStack;
use dss_core::Error;

fn random_stack(rng: &mut ChaCha8Rng, levels: usize, h: usize, w: usize, c: usize) -> ScaleSpaceStack {
    let data = (0..levels * h * w * c).map(|_| rng.gen_range(-1.0..1.0)).collect();
    ScaleSpaceStack::new(levels, h, w, c, 0.25, data).unwrap()
}

/// `g_k(x) = f_{k+1}(2x)`: the stack of the image at half resolution.
fn shift_up(f: &ScaleSpaceStack) -> ScaleSpaceStack {
    let (h, w, c) = (f.height() / 2, f.width() / 2, f.channels());
    let mut data = Vec::new();
    for k in 0..f.levels() - 1 {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(f.get(k + 1, 2 * y, 2 * x, ch));
                }
            }
        }
    }
    ScaleSpaceStack::new(f.levels() - 1, h, w, c, 0.25, data).unwrap()
}

fn assert_shift_equivariant(out_f: &ScaleSpaceStack, out_g: &ScaleSpaceStack) {
    assert_eq!(out_g.levels(), out_f.levels() - 1);
    for k in 0..out_g.levels() {
        for y in 0..out_g.height() {
            for x in 0..out_g.width() {
                for o in 0..out_g.channels() {
                    assert_eq!(
                        out_g.get(k, y, x, o).to_bits(),
                        out_f.get(k + 1, 2 * y, 2 * x, o).to_bits(),
                        "k={k} y={y} x={x} o={o}"
                    );
                }
            }
        }
    }
}

fn roll_stack(s: &ScaleSpaceStack, dy: usize, dx: usize) -> ScaleSpaceStack {
    let (h, w, c) = (s.height(), s.width(), s.channels());
    let mut data = Vec::new();
    for k in 0..s.levels() {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    data.push(s.get(k, (y + h - dy) % h, (x + w - dx) % w, ch));
                }
            }
        }
    }
    ScaleSpaceStack::new(s.levels(), h, w, c, 0.25, data).unwrap()
}

/// Direct evaluation of the correlation sum, without any of the library's
/// indexing helpers.
fn correlate_oracle(
    f: &ScaleSpaceStack,
    bank: &FilterBank,
    boundary: ScaleBoundary,
    spatial: SpatialBoundary,
) -> Vec<f64> {
    let s = bank.shape();
    let (levels, h, w) = (f.levels() as i64, f.height() as i64, f.width() as i64);
    let mut out = Vec::new();
    for k in 0..levels {
        for zy in 0..h {
            for zx in 0..w {
                for o in 0..s.cout {
                    let mut acc = 0.0;
                    for l in 0..s.ks as i64 {
                        let mut lev = l + k;
                        if lev >= levels {
                            match boundary {
                                ScaleBoundary::Zero => continue,
                                ScaleBoundary::Replicate => lev = levels - 1,
                            }
                        }
                        for r in 0..s.kh as i64 {
                            for col in 0..s.kw as i64 {
                                let step = 1i64 << k;
                                let mut sy = zy + step * (r - s.kh as i64 / 2);
                                let mut sx = zx + step * (col - s.kw as i64 / 2);
                                match spatial {
                                    SpatialBoundary::Zero => {
                                        if sy < 0 || sy >= h || sx < 0 || sx >= w {
                                            continue;
                                        }
                                    }
                                    SpatialBoundary::Periodic => {
                                        sy = sy.rem_euclid(h);
                                        sx = sx.rem_euclid(w);
                                    }
                                }
                                for i in 0..s.cin {
                                    acc += bank.get(l as usize, r as usize, col as usize, i, o)
                                        * f.get(lev as usize, sy as usize, sx as usize, i);
                                }
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    out
}

fn boundaries() -> impl Strategy<Value = (ScaleBoundary, SpatialBoundary)> {
    (any::<bool>(), any::<bool>()).prop_map(|(a, b)| {
        (
            if a { ScaleBoundary::Replicate } else { ScaleBoundary::Zero },
            if b { SpatialBoundary::Periodic } else { SpatialBoundary::Zero },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_correlation_matches_oracle(
        seed in any::<u64>(),
        ks in 1usize..3,
        kh in prop::sample::select(vec![1usize, 3, 5]),
        cin in 1usize..3,
        cout in 1usize..3,
        (scale_b, spatial_b) in boundaries(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_stack(&mut rng, 3, 7, 6, cin);
        let bank = FilterBank::random_normal(BankShape::new(ks, kh, 3, cin, cout).unwrap(), 1.0, &mut rng).unwrap();
        let got = scale_correlate_with(&f, &bank, scale_b, spatial_b).unwrap();
        let want = correlate_oracle(&f, &bank, scale_b, spatial_b);
        for (a, b) in got.data().iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn prop_correlation_commutes_with_scale_shift(
        seed in any::<u64>(),
        ks in 1usize..3,
        half in 3usize..7,
        levels in 2usize..5,
        (scale_b, spatial_b) in boundaries(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_stack(&mut rng, levels, 2 * half, 2 * half + 2, 2);
        let bank = FilterBank::random_normal(BankShape::new(ks, 3, 3, 2, 3).unwrap(), 1.0, &mut rng).unwrap();
        let out_f = scale_correlate_with(&f, &bank, scale_b, spatial_b).unwrap();
        let out_g = scale_correlate_with(&shift_up(&f), &bank, scale_b, spatial_b).unwrap();
        assert_shift_equivariant(&out_f, &out_g);
    }

    #[test]
    fn prop_periodic_correlation_commutes_with_translation(
        seed in any::<u64>(),
        dy in 0usize..8,
        dx in 0usize..8,
        scale_b in prop::sample::select(vec![ScaleBoundary::Zero, ScaleBoundary::Replicate]),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let f = random_stack(&mut rng, 3, 8, 8, 2);
        let bank = FilterBank::random_normal(BankShape::new(2, 3, 3, 2, 2).unwrap(), 1.0, &mut rng).unwrap();
        let a = scale_correlate_with(&roll_stack(&f, dy, dx), &bank, scale_b, SpatialBoundary::Periodic).unwrap();
        let b = roll_stack(&scale_correlate_with(&f, &bank, scale_b, SpatialBoundary::Periodic).unwrap(), dy, dx);
        prop_assert_eq!(a.data(), b.data());
    }

    #[test]
    fn prop_train_batch_norm_standardizes(seed in any::<u64>(), spread in 0.5f64..20.0, offset in -50.0f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let batch: Vec<ScaleSpaceStack> = (0..3)
            .map(|_| {
                let s = random_stack(&mut rng, 2, 5, 4, 2);
                let data = s.data().iter().map(|v| offset + spread * v).collect();
                s.with_data(2, data).unwrap()
            })
            .collect();
        // Two-pass statistics as the oracle.
        let vals = |c: usize| batch.iter().flat_map(|s| s.data().iter().skip(c).step_by(2).copied()).collect::<Vec<f64>>();
        let out = batch_norm(&batch, &BatchNormState::new(2), BnMode::Train).unwrap();
        for c in 0..2 {
            let x = vals(c);
            let n = x.len() as f64;
            let mean = x.iter().sum::<f64>() / n;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            let y: Vec<f64> = out.iter().flat_map(|s| s.data().iter().skip(c).step_by(2).copied()).collect();
            let ym = y.iter().sum::<f64>() / n;
            let yv = y.iter().map(|v| (v - ym).powi(2)).sum::<f64>() / n;
            prop_assert!(ym.abs() < 1e-10);
            prop_assert!((yv - var / (var + 1e-5)).abs() < 1e-10);
        }
    }

    #[test]
    fn prop_spec_text_roundtrip(layers in prop::collection::vec(layer_line(), 1..8)) {
        let spec = NetworkSpec::parse(&layers.join("\n")).unwrap();
        let again: NetworkSpec = spec.to_string().parse().unwrap();
        prop_assert_eq!(&again, &spec);
        prop_assert_eq!(again.to_string(), spec.to_string());
    }
}

fn layer_line() -> impl Strategy<Value = String> {
    let odd = prop::sample::select(vec![1usize, 3, 5, 7]);
    let bnd = prop::sample::select(vec!["", " boundary=zero", " boundary=replicate"]);
    prop_oneof![
        (1usize..3, odd.clone(), odd.clone(), 1usize..9, 1usize..9, bnd.clone())
            .prop_map(|(ks, kh, kw, cin, cout, b)| format!("corr ks={ks} kh={kh} kw={kw} cin={cin} cout={cout}{b}")),
        Just("relu".to_string()),
        (1usize..9).prop_map(|c| format!("bn c={c}  # norm")),
        Just("scalepool".to_string()),
        Just("avgpool".to_string()),
        (1usize..3, 1usize..5, 0usize..5, bnd.clone())
            .prop_map(|(ks, cin, extra, b)| format!("residual ks={ks} cin={cin} cout={}{b}", cin + extra)),
        (1usize..4, 1usize..6, 1usize..3, 1usize..5, bnd)
            .prop_map(|(n, g, ks, cin, b)| format!("dense n={n} growth={g} ks={ks} cin={cin}{b}")),
    ]
}

#[test]
fn test_network_commutes_with_scale_shift() {
    let spec = NetworkSpec::parse(
        "corr ks=2 cin=1 cout=4\nbn c=4\nrelu\nresidual ks=2 cin=4 cout=6 boundary=replicate\ndense n=2 growth=3 ks=2 cin=6\ncorr ks=2 cin=12 cout=2",
    )
    .unwrap();
    let mut weights = NetworkWeights::he_normal(&spec, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for n in &mut weights.norms {
        n.running_mean.iter_mut().for_each(|m| *m = rng.gen_range(-0.5..0.5));
        n.running_var.iter_mut().for_each(|v| *v = rng.gen_range(0.5..2.0));
        n.gamma.iter_mut().for_each(|g| *g = rng.gen_range(0.5..1.5));
        n.beta.iter_mut().for_each(|b| *b = rng.gen_range(-0.5..0.5));
    }
    let net = Network::new(spec, weights).unwrap();
    let f = random_stack(&mut rng, 5, 16, 12, 1);
    for spatial in [SpatialBoundary::Zero, SpatialBoundary::Periodic] {
        let opts = ForwardOptions { bn_mode: BnMode::Eval, spatial };
        let out_f = net.forward(&f, opts).unwrap();
        let out_g = net.forward(&shift_up(&f), opts).unwrap();
        assert_shift_equivariant(&out_f, &out_g);
    }
}

#[test]
fn test_scale_depth_matches_traced_support() {
    // Positive weights on a non-negative input cannot cancel, so a level of
    // the output is non-zero exactly when it reads the lit input level.
    let spec = NetworkSpec::parse("corr ks=2 cin=1 cout=2\nrelu\ncorr ks=2 cin=2 cout=2\nrelu\ncorr ks=2 cin=2 cout=1").unwrap();
    let depth = scale_receptive_depth(&spec);
    assert_eq!(depth, 3);
    let mut weights = NetworkWeights::he_normal(&spec, 1).unwrap();
    for b in &mut weights.banks {
        b.weights_mut().iter_mut().for_each(|w| *w = w.abs() + 0.01);
    }
    let net = Network::new(spec, weights).unwrap();
    let levels = 7;
    for lit in 0..levels {
        let data = (0..levels * 36).map(|j| if j / 36 == lit { 1.0 } else { 0.0 }).collect();
        let f = ScaleSpaceStack::new(levels, 6, 6, 1, 0.25, data).unwrap();
        let out = net.forward(&f, ForwardOptions::default()).unwrap();
        for k in 0..levels {
            let nonzero = out.level(k).iter().any(|&v| v != 0.0);
            assert_eq!(nonzero, (k..=k + depth).contains(&lit), "lit={lit} k={k}");
        }
    }
}

#[test]
fn test_scale_depth_examples() {
    let depth = |t: &str| scale_receptive_depth(&NetworkSpec::parse(t).unwrap());
    assert_eq!(depth("corr ks=1 cin=1 cout=2\nrelu\ncorr ks=1 cin=2 cout=2"), 0);
    assert_eq!(depth("corr ks=2 cin=1 cout=2"), 1);
    assert_eq!(depth("corr ks=2 cin=1 cout=2\ncorr ks=2 cin=2 cout=2\ncorr ks=2 cin=2 cout=2"), 3);
    assert_eq!(depth("residual ks=2 cin=1 cout=2"), 1);
    assert_eq!(depth("dense n=3 growth=2 ks=2 cin=1"), 3);
}

#[test]
fn test_block_shapes() {
    let spec = NetworkSpec::parse("residual ks=2 cin=3 cout=8\ndense n=3 growth=12 ks=2 cin=8\navgpool\nscalepool").unwrap();
    assert_eq!(spec.check_channels(3).unwrap(), 8 + 36);
    let net = Network::new(spec.clone(), NetworkWeights::he_normal(&spec, 0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let out = net.forward(&random_stack(&mut rng, 3, 8, 6, 3), ForwardOptions::default()).unwrap();
    assert_eq!((out.levels(), out.height(), out.width(), out.channels()), (1, 4, 3, 44));

    let dense = NetworkSpec::parse("dense n=3 growth=12 cin=3").unwrap();
    assert_eq!(dense.check_channels(3).unwrap(), 39);
}

#[test]
fn test_channel_mismatch_names_layer() {
    let spec = NetworkSpec::parse("corr cin=3 cout=8\nrelu\ncorr cin=4 cout=2").unwrap();
    match spec.check_channels(3) {
        Err(Error::ChannelMismatch { layer, expected, found }) => assert_eq!((layer, expected, found), (2, 4, 8)),
        other => panic!("{other:?}"),
    }
    let net = Network::new(spec.clone(), NetworkWeights::he_normal(&spec, 0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = net.forward(&random_stack(&mut rng, 2, 4, 4, 1), ForwardOptions::default()).unwrap_err();
    assert!(matches!(err, Error::ChannelMismatch { layer: 0, expected: 3, found: 1 }));
}

#[test]
fn test_parse_errors_carry_line_numbers() {
    let line_of = |t: &str| match NetworkSpec::parse(t) {
        Err(Error::Parse { line, .. }) => line,
        other => panic!("{t:?}: {other:?}"),
    };
    assert_eq!(line_of("relu\n\ncorr cin=1 cout=1 colour=red"), 3);
    assert_eq!(line_of("corr cin=1 cin=2 cout=1"), 1);
    assert_eq!(line_of("# header\ncorr kh=4 cin=1 cout=1"), 2);
    assert_eq!(line_of("corr ks=3 cin=1 cout=1"), 1);
    assert_eq!(line_of("relu\nconv cin=1 cout=1"), 2);
    assert_eq!(line_of("corr cin=1"), 1);
    assert_eq!(line_of("corr cin=1 cout=1 boundary=mirror"), 1);
    assert_eq!(line_of("residual cin=4 cout=2"), 1);
}

#[test]
fn test_weights_file_roundtrip() {
    let spec = NetworkSpec::parse("corr ks=2 cin=1 cout=4\nrelu\nresidual ks=2 cin=4 cout=4").unwrap();
    let w = NetworkWeights::he_normal(&spec, 11).unwrap();
    let mut buf = Vec::new();
    for b in &w.banks {
        encode_bank(&mut buf, b).unwrap();
    }
    let back = decode_banks(&mut &buf[..]).unwrap();
    assert_eq!(back, w.banks);
    assert!(decode_banks(&mut &buf[..buf.len() - 3]).is_err());
    assert!(NetworkWeights::from_banks(&spec, back[..2].to_vec()).is_err());
}

#[test]
fn test_identity_network_passes_nonnegative_input() {
    let spec = NetworkSpec::parse("corr ks=2 cin=2 cout=2\nrelu\ncorr ks=1 kh=5 kw=5 cin=2 cout=2").unwrap();
    let net = Network::new(spec.clone(), NetworkWeights::identity(&spec, 0.0, 0).unwrap()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let f = random_stack(&mut rng, 3, 5, 5, 2);
    let pos = f.with_data(2, f.data().iter().map(|v| v.abs()).collect()).unwrap();
    assert_eq!(net.forward(&pos, ForwardOptions::default()).unwrap().data(), pos.data());
}

#[test]
fn test_batch_norm_rejects_wrong_width() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = random_stack(&mut rng, 1, 2, 2, 3);
    assert!(matches!(batch_norm(&[s], &BatchNormState::new(2), BnMode::Eval), Err(Error::ShapeMismatch(_))));
}
