use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fgsim::calib::{estimate_gain, flicker_split};
use fgsim::denoise::{am_update, run_causal, AmState, LeakageScale, PipelineConfig};
use fgsim::flow::{estimate_flow, occlusion_mask, warp, FlowField};
use fgsim::frameio::{load_sequence, save_sequence, FrameFormat};
use fgsim::leakage::{fit_predictor, AffineCoeffs, LeakagePredictor, PredictorKind};
use fgsim::metrics::{fit_m_lll, psnr, ssim, PSNR_CAP_DB};
use fgsim::noise::{quantize, sample_training_params, simulate_frame, NoiseParams};
use fgsim::rng::RngStream;
use fgsim::{ChannelTag, Frame, VideoSequence};

fn frame(w: usize, h: usize) -> impl Strategy<Value = Frame> {
    prop::collection::vec(0.0..=1.0f64, w * h).prop_map(move |v| Frame::from_vec(w, h, v).unwrap())
}

fn sized_frame() -> impl Strategy<Value = Frame> {
    (1usize..12, 1usize..12).prop_flat_map(|(w, h)| frame(w, h))
}

fn pair(w: usize, h: usize) -> impl Strategy<Value = (Frame, Frame)> {
    (frame(w, h), frame(w, h))
}

fn video(
    w: usize,
    h: usize,
    n: usize,
    seed: u64,
    f: impl Fn(&mut ChaCha8Rng) -> f64,
) -> VideoSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let frames = (0..n)
        .map(|_| Frame::from_fn(w, h, |_, _| f(&mut rng)))
        .collect();
    VideoSequence::new(frames, 30.0, ChannelTag::NoisyFv).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn quantize_lands_on_the_clipped_lattice(x in -2.0..3.0f64, bits in 1u32..=16) {
        let q = quantize(x, bits);
        let levels = f64::from(1u32 << bits);
        prop_assert!((0.0..=1.0).contains(&q));
        prop_assert_eq!((q * levels).fract(), 0.0);
        prop_assert_eq!(quantize(q, bits), q);
        prop_assert!((q - x.clamp(0.0, 1.0)).abs() <= 0.5 / levels);
    }

    #[test]
    fn quantize_is_monotone(a in -0.5..1.5f64, b in -0.5..1.5f64, bits in 1u32..=16) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(quantize(lo, bits) <= quantize(hi, bits));
    }

    #[test]
    fn streams_replay_and_separate(seed: u64, id: u64, t in 0u64..1000) {
        let a: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(seed, id, t).rng();
            move |_| r.random()
        }).collect();
        let b: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(seed, id, t).rng();
            move |_| r.random()
        }).collect();
        let c: Vec<u64> = (0..8).map({
            let mut r = RngStream::new(seed, id, t + 1).rng();
            move |_| r.random()
        }).collect();
        prop_assert_eq!(&a, &b);
        prop_assert_ne!(&a, &c);
    }

    #[test]
    fn training_params_are_valid(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..50 {
            let p = sample_training_params(&mut rng);
            prop_assert!(p.validate().is_ok());
            prop_assert!((1200.0..=2400.0).contains(&p.inv_k()));
            prop_assert!(p.s_m >= 10.0 && p.s_m <= p.inv_k() / 2.0);
            prop_assert!(p.l_m >= 0.0 && p.l_m <= p.s_m);
            prop_assert!((4.0..=8.0).contains(&p.r_m));
        }
    }

    #[test]
    fn simulated_frames_are_finite_lattice_values(
        (s, l) in pair(6, 5),
        s_m in 1.0..500.0f64,
        l_m in 0.0..100.0f64,
        seed: u64,
    ) {
        let p = NoiseParams::paper_test(s_m, l_m).unwrap();
        let stream = RngStream::new(seed, 3, 0);
        let a = simulate_frame(&s, &l, None, &p, stream).unwrap();
        let b = simulate_frame(&s, &l, None, &p, stream).unwrap();
        prop_assert_eq!(&a, &b);
        let scale = p.k * p.s_m * 4096.0;
        for &v in a.data() {
            prop_assert!(v.is_finite() && v >= 0.0);
            prop_assert!(v <= 1.0 / (p.k * p.s_m) + 1e-9);
            let level = v * scale;
            prop_assert!((level - level.round()).abs() < 1e-6 * level.max(1.0));
        }
    }

    #[test]
    fn gain_mean_matches_per_pixel_values(seed: u64) {
        let v = video(5, 4, 12, seed, |r| r.random_range(0.1..0.9));
        let mask = Frame::from_fn(5, 4, |x, y| f64::from(u8::from((x + y) % 3 != 0)));
        let g = estimate_gain(&v, &mask).unwrap();
        let used: Vec<f64> = g.per_pixel_k.data().iter().copied().filter(|&k| k > 0.0).collect();
        prop_assert_eq!(used.len(), g.roi_count);
        let mean = used.iter().sum::<f64>() / used.len() as f64;
        prop_assert!((g.k_mean - mean).abs() <= 1e-12 * mean);
        prop_assert!(g.k_mean > 0.0);
    }

    #[test]
    fn gain_scales_with_intensity(seed: u64, c in 0.05..1.0f64) {
        // Var/Mean is homogeneous of degree one in the intensity scale.
        let v = video(4, 4, 10, seed, |r| r.random_range(0.2..1.0));
        let scaled = VideoSequence::new(
            v.iter().map(|f| f.map(|x| c * x)).collect(),
            30.0,
            ChannelTag::NoisyFv,
        ).unwrap();
        let mask = Frame::filled(4, 4, 1.0);
        let a = estimate_gain(&v, &mask).unwrap();
        let b = estimate_gain(&scaled, &mask).unwrap();
        prop_assert!((b.k_mean / a.k_mean - c).abs() <= 1e-9 * c);
    }

    #[test]
    fn flicker_centres_order_and_assignment(means in prop::collection::vec(-0.05..0.05f64, 4..40)) {
        let frames = means.iter().map(|&m| Frame::filled(3, 2, m)).collect();
        let dark = VideoSequence::new(frames, 30.0, ChannelTag::ReadNoise).unwrap();
        let rep = flicker_split(&dark).unwrap();
        let [lo, hi] = rep.centers;
        prop_assert!(lo <= hi);
        for (m, &a) in rep.per_frame_means.iter().zip(&rep.assignments) {
            let (dl, dh) = ((m - lo).abs(), (m - hi).abs());
            if a == 0 { prop_assert!(dl <= dh) } else { prop_assert!(dh < dl) }
        }
    }

    #[test]
    fn flicker_ignores_frame_order(means in prop::collection::vec(-0.05..0.05f64, 4..40), seed: u64) {
        let build = |m: &[f64]| {
            let frames = m.iter().map(|&v| Frame::filled(2, 2, v)).collect();
            flicker_split(&VideoSequence::new(frames, 30.0, ChannelTag::ReadNoise).unwrap()).unwrap()
        };
        let mut shuffled = means.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for i in (1..shuffled.len()).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let (a, b) = (build(&means), build(&shuffled));
        for k in 0..2 {
            prop_assert!((a.centers[k] - b.centers[k]).abs() <= 1e-12);
        }
    }

    #[test]
    fn predictions_stay_in_unit_range(
        r in frame(16, 16),
        gain in -3.0..3.0f64,
        offset in -1.0..1.0f64,
        cells in prop::collection::vec((-3.0..3.0f64, -1.0..1.0f64), 4),
    ) {
        let affine = LeakagePredictor::Affine { gain, offset };
        let patch = LeakagePredictor::PatchAffine {
            grid: 2,
            coeffs: cells.iter().map(|&(gain, offset)| AffineCoeffs { gain, offset }).collect(),
        };
        for p in [affine, patch, LeakagePredictor::zero()] {
            let out = p.predict(&r, None).unwrap();
            prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn affine_fit_recovers_exact_relation(r in frame(12, 12), gain in 0.1..0.9f64, offset in 0.0..0.1f64) {
        prop_assume!(r.min_max().1 - r.min_max().0 > 0.2);
        let l = r.map(|v| gain * v + offset);
        match fit_predictor(&[(r, l)], PredictorKind::Affine).unwrap() {
            LeakagePredictor::Affine { gain: g, offset: o } => {
                prop_assert!((g - gain).abs() < 1e-6, "gain {} vs {}", g, gain);
                prop_assert!((o - offset).abs() < 1e-6);
            }
            other => prop_assert!(false, "unexpected {:?}", other),
        }
    }

    #[test]
    fn flow_is_bounded_and_finite((a, b) in pair(16, 16)) {
        let f = estimate_flow(&a, &b).unwrap();
        for d in f.u.data().iter().chain(f.v.data()) {
            prop_assert!(d.is_finite() && d.abs() <= 32.0);
        }
        let m = occlusion_mask(&a, &b, &f, 0.08).unwrap();
        prop_assert!(m.mask.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn identical_frames_give_zero_flow(a in frame(16, 16)) {
        prop_assert!(estimate_flow(&a, &a).unwrap().is_zero());
    }

    #[test]
    fn zero_warp_is_identity(a in sized_frame()) {
        let (w, h) = a.shape();
        prop_assert_eq!(warp(&a, &FlowField::zeros(w, h)).unwrap(), a);
    }

    #[test]
    fn warp_is_linear(a in frame(9, 7), b in frame(9, 7), u in -3.0..3.0f64, v in -3.0..3.0f64, c in -2.0..2.0f64) {
        let f = FlowField::constant(9, 7, u, v);
        let lhs = warp(&a.zip_map(&b, |x, y| x + c * y).unwrap(), &f).unwrap();
        let (wa, wb) = (warp(&a, &f).unwrap(), warp(&b, &f).unwrap());
        for i in 0..lhs.len() {
            prop_assert!((lhs.data()[i] - (wa.data()[i] + c * wb.data()[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn integer_warp_shifts_interior(a in frame(10, 10), dx in -3i32..=3, dy in -3i32..=3) {
        let w = warp(&a, &FlowField::constant(10, 10, f64::from(dx), f64::from(dy))).unwrap();
        for y in 3..7usize {
            for x in 3..7usize {
                let (sx, sy) = ((x as i32 - dx) as usize, (y as i32 - dy) as usize);
                prop_assert_eq!(w.get(x, y), a.get(sx, sy));
            }
        }
    }

    #[test]
    fn am_counts_stay_within_cap(frames in prop::collection::vec(frame(16, 16), 2..8), n_max in 1.0..6.0f64) {
        let cfg = PipelineConfig { n_max, ..PipelineConfig::default() };
        let mut st = AmState::new(16, 16);
        let reference = Frame::from_fn(16, 16, |x, y| ((x * 7 + y * 3) % 11) as f64 / 11.0);
        for f in &frames {
            let out = am_update(&mut st, f, &reference, &reference, &cfg).unwrap();
            prop_assert!(out.data().iter().all(|v| v.is_finite()));
            prop_assert!(st.count().data().iter().all(|&c| (0.0..=n_max.max(1.0) + 1e-12).contains(&c)));
        }
    }

    #[test]
    fn static_merge_is_arithmetic_mean(frames in prop::collection::vec(frame(12, 12), 1..10)) {
        let noisy = VideoSequence::new(frames.clone(), 30.0, ChannelTag::NoisyFv).unwrap();
        let reference = VideoSequence::new(vec![Frame::filled(12, 12, 0.3); frames.len()], 30.0, ChannelTag::Reference).unwrap();
        let cfg = PipelineConfig { leakage_scale: LeakageScale::Fixed(0.0), ..PipelineConfig::default() };
        let out = run_causal(&noisy, &reference, Some(&reference), &cfg, None).unwrap();
        for n in 1..=frames.len() {
            for i in 0..144 {
                let mean = frames[..n].iter().map(|f| f.data()[i]).sum::<f64>() / n as f64;
                prop_assert!((out.frame(n - 1).data()[i] - mean.max(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn psnr_is_symmetric_and_capped((a, b) in pair(8, 8)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        prop_assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP_DB);
        prop_assert!(psnr(&a, &b).unwrap() <= PSNR_CAP_DB);
    }

    #[test]
    fn psnr_tracks_error_scaling(a in frame(8, 8), e in frame(8, 8), c in 0.1..1.0f64) {
        // Scaling the error by c shifts PSNR by exactly -20 log10(c).
        let e = e.map(|v| 0.01 + 0.1 * v);
        let b1 = a.zip_map(&e, |x, d| x + d).unwrap();
        let b2 = a.zip_map(&e, |x, d| x + c * d).unwrap();
        let shift = psnr(&a, &b2).unwrap() - psnr(&a, &b1).unwrap();
        prop_assert!((shift + 20.0 * c.log10()).abs() < 1e-9);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded((a, b) in pair(14, 13)) {
        let (s1, s2) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        prop_assert!((s1 - s2).abs() < 1e-12);
        prop_assert!((-1.0..=1.0).contains(&s1));
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn line_fit_is_exact_on_lines(m in -20.0..20.0f64, b in -50.0..50.0f64, xs in prop::collection::btree_set(0i32..100, 2..8)) {
        let pts: Vec<(f64, f64)> = xs.iter().map(|&x| { let x = f64::from(x) / 100.0; (x, m * x + b) }).collect();
        let f = fit_m_lll(&pts).unwrap();
        prop_assert!((f.m_lll - m).abs() < 1e-9 * m.abs().max(1.0));
        prop_assert!((f.b_lll - b).abs() < 1e-9 * b.abs().max(1.0));
        prop_assert!((0.0..=1.0).contains(&f.r_squared));
    }

    #[test]
    fn r_squared_stays_in_unit_range(pts in prop::collection::vec((0.0..1.0f64, -50.0..50.0f64), 2..12)) {
        prop_assume!(pts.iter().any(|p| p.0 != pts[0].0));
        let f = fit_m_lll(&pts).unwrap();
        prop_assert!((0.0..=1.0).contains(&f.r_squared));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn raw_round_trip_is_exact(frames in prop::collection::vec(frame(5, 3), 1..4)) {
        let frames: Vec<Frame> = frames.iter().map(|f| f.map(|v| f64::from(v as f32))).collect();
        let seq = VideoSequence::new(frames, 30.0, ChannelTag::Denoised).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path(), FrameFormat::RawF32).unwrap();
        let back = load_sequence(dir.path(), ChannelTag::Denoised).unwrap();
        prop_assert_eq!(back.frames(), seq.frames());
    }

    #[test]
    fn png16_round_trip_within_half_level(frames in prop::collection::vec(frame(4, 6), 1..4)) {
        let seq = VideoSequence::new(frames, 30.0, ChannelTag::FluorescenceClean).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_sequence(&seq, dir.path(), FrameFormat::Png16).unwrap();
        let back = load_sequence(dir.path(), ChannelTag::FluorescenceClean).unwrap();
        prop_assert_eq!(back.len(), seq.len());
        for (a, b) in back.iter().zip(seq.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 0.5 / 65535.0 + 1e-12);
            }
        }
    }
}
