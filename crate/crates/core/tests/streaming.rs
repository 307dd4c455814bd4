mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamta_core::search::{Always, CtcPrefixSearch, JointCtcTaSearch, Never, SearchStrategy};
use streamta_core::{
    recognize, DecodeParams, DecodeResult, FeatureMatrix, LookAhead, ModelParams, SearchContext, Session,
    StreamConfig, UniformLm,
};

use common::*;

fn ctx<'a>(model: &'a ModelParams, lm: &'a UniformLm, eps_dec: usize) -> SearchContext<'a> {
    SearchContext {
        params: DecodeParams {
            eps_dec,
            k_size: 20,
            p_size: 6,
            ..DecodeParams::default()
        },
        lm,
        decoder: Some(&model.decoder),
        dcond: &Never,
        acond: &Always,
    }
}

fn stream(
    model: &ModelParams,
    strategy: &dyn SearchStrategy,
    ctx: SearchContext<'_>,
    cfg: StreamConfig,
    x: &FeatureMatrix,
    cuts: &[usize],
) -> (DecodeResult, Vec<Vec<u32>>) {
    let mut s = Session::new(model, strategy, ctx, cfg).unwrap();
    let mut partials = Vec::new();
    let mut start = 0;
    for &end in cuts.iter().chain(std::iter::once(&x.len())) {
        if end > start {
            let chunk = FeatureMatrix::new(x.frames.slice_rows(start, end), x.frame_shift_ms);
            if let Some(p) = s.push(&chunk).unwrap() {
                partials.push(p);
            }
            start = end;
        }
    }
    (s.finalize().unwrap(), partials)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_chunking_matches_offline(seed in 0u64..1000, t in 4usize..48, eps_enc in 0usize..3, eps_dec in 0usize..4, mut cuts in prop::collection::vec(0usize..48, 0..8)) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = tiny_model(&mut rng, 2);
        let x = random_features(&mut rng, t, 5);
        let lm = UniformLm::new(3).unwrap();
        let cfg = StreamConfig { eps_enc: LookAhead::Frames(eps_enc), eps_dec, frame_shift_ms: 10.0 };
        cuts.retain(|&c| c < t);
        cuts.sort_unstable();
        let c = ctx(&model, &lm, eps_dec);
        let offline = recognize(&model, &x, cfg.eps_enc, &JointCtcTaSearch, c).unwrap();
        let (online, _) = stream(&model, &JointCtcTaSearch, c, cfg, &x, &cuts);
        prop_assert_eq!(offline.labels, online.labels);
        prop_assert_eq!(offline.score.to_bits(), online.score.to_bits());
        prop_assert_eq!(offline.trace, online.trace);
    }
}

#[test]
fn partial_hypotheses_ignore_future_frames() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = tiny_model(&mut rng, 2);
    let lm = UniformLm::new(3).unwrap();
    let cfg = StreamConfig {
        eps_enc: LookAhead::Frames(1),
        eps_dec: 1,
        frame_shift_ms: 10.0,
    };
    let x = random_features(&mut rng, 48, 5);
    for t in [8usize, 17, 30] {
        // Same first t frames, then sentinel frames of very different values.
        let mut y = x.clone();
        for r in t..y.len() {
            for c in 0..5 {
                y.frames.set(r, c, if rng.gen_bool(0.5) { 1e3 } else { -1e3 });
            }
        }
        let mut a = Session::new(&model, &JointCtcTaSearch, ctx(&model, &lm, 1), cfg).unwrap();
        let mut b = Session::new(&model, &JointCtcTaSearch, ctx(&model, &lm, 1), cfg).unwrap();
        a.push(&FeatureMatrix::new(x.frames.slice_rows(0, t), 10.0)).unwrap();
        b.push(&FeatureMatrix::new(y.frames.slice_rows(0, t), 10.0)).unwrap();
        assert_eq!(a.partial(), b.partial());
        assert_eq!(a.frames_decoded(), b.frames_decoded());
    }
}

#[test]
fn ctc_prefix_strategy_streams_without_decoder_delay() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let model = tiny_model(&mut rng, 1);
    let lm = UniformLm::new(3).unwrap();
    let x = random_features(&mut rng, 40, 5);
    let cfg = StreamConfig {
        eps_enc: LookAhead::Frames(0),
        eps_dec: 5,
        frame_shift_ms: 10.0,
    };
    let c = ctx(&model, &lm, 5);
    let offline = recognize(&model, &x, cfg.eps_enc, &CtcPrefixSearch, c).unwrap();
    let cuts: Vec<usize> = (1..40).collect();
    let (online, _) = stream(&model, &CtcPrefixSearch, c, cfg, &x, &cuts);
    assert_eq!(offline, online);

    let mut s = Session::new(&model, &CtcPrefixSearch, c, cfg).unwrap();
    s.push(&FeatureMatrix::new(x.frames.slice_rows(0, 8), 10.0)).unwrap();
    assert_eq!(s.encoder_frames(), 2);
    assert_eq!(s.frames_decoded(), 2);
}

#[test]
fn unbounded_encoder_matches_offline() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let model = tiny_model(&mut rng, 2);
    let lm = UniformLm::new(3).unwrap();
    let x = random_features(&mut rng, 33, 5);
    let cfg = StreamConfig {
        eps_enc: LookAhead::Unbounded,
        eps_dec: 2,
        frame_shift_ms: 10.0,
    };
    let c = ctx(&model, &lm, 2);
    let offline = recognize(&model, &x, LookAhead::Unbounded, &JointCtcTaSearch, c).unwrap();
    let (online, partials) = stream(&model, &JointCtcTaSearch, c, cfg, &x, &[5, 11, 20]);
    assert!(partials.is_empty());
    assert_eq!(offline, online);
}
