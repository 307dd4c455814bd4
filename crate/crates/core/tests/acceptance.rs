//! Acceptance gate. Each criterion runs at its stated tolerance and prints
//! one PASS/FAIL line; the process exits non-zero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamta_core::attention::AttentionMask;
use streamta_core::ctc::PrefixMap;
use streamta_core::decoder::decoder_posterior;
use streamta_core::encoder::{encoder_forward, encoder_forward_masked};
use streamta_core::numcore::{softmax_in_place, Matrix};
use streamta_core::search::{Always, JointCtcTaSearch, Never};
use streamta_core::streaming::encoder_latency_ms;
use streamta_core::{
    ctc_forward_logprob, ctc_prefix_search, ctc_prefix_step, ctc_viterbi_align, decode, joint_loss, recognize,
    ta_prefix_score, theoretical_latency_ms, DecodeParams, DecodeResult, EncoderMemory, EncoderStates,
    LanguageModel, LookAhead, LossParams, NgramLm, PrefixScores, SearchContext, Session, StreamConfig,
    UniformLm,
};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    check(elapsed < limit, || format!("took {elapsed:.2?}, limit {limit:?}"))
}

/// Prefix search without pruning and the forward trellis against brute-force
/// path enumeration.
fn ctc_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(1..=6);
        let v = rng.gen_range(1..=3);
        let post = random_post(&mut rng, n, v);
        let oracle = brute_marginals(&post);

        let mut hyps = PrefixMap::new();
        hyps.insert(Vec::new(), PrefixScores::ROOT);
        for t in 0..n {
            hyps = ctc_prefix_step(post.row(t), &hyps, 0.0);
        }
        let got: BTreeMap<&Vec<u32>, f64> = hyps.iter().map(|(k, s)| (k, s.total())).collect();
        check(got.len() == oracle.len(), || {
            format!("case {case}: {} prefixes, oracle {}", got.len(), oracle.len())
        })?;
        for (y, &want) in &oracle {
            let p = got.get(y).copied().ok_or_else(|| format!("case {case}: prefix {y:?} missing"))?;
            worst = worst.max((p - want).abs());
            check((p - want).abs() <= 1e-10, || format!("case {case}: prefix {y:?} {p} vs {want}"))?;
            if !y.is_empty() {
                let f = ctc_forward_logprob(&post, y).map_err(|e| e.to_string())?;
                worst = worst.max((f - want).abs());
                check((f - want).abs() <= 1e-10, || format!("case {case}: forward {y:?} {f} vs {want}"))?;
            }
        }
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(10))?;
    Ok(format!("200 instances, max |err| {worst:.1e}, {elapsed:.2?}"))
}

/// Argmax of the joint score over every label sequence reachable in `N`
/// frames, with each decoder position triggered at the frame where its
/// prefix first becomes reachable.
fn exhaustive_argmax(
    model: &streamta_core::ModelParams,
    enc: &EncoderStates,
    post: &streamta_core::Posteriorgram,
    p: &DecodeParams,
) -> (Vec<u32>, f64) {
    let n = post.frames();
    let labels = post.labels() as u32 - 1;
    let marginals = brute_marginals(post);
    let log_uniform = (1.0f64 / labels as f64).ln();
    let mut best: Option<(Vec<u32>, f64)> = None;
    for (y, &ctc) in &marginals {
        if y.iter().any(|&l| l >= labels) {
            continue;
        }
        let nus: Vec<usize> = (1..=y.len()).map(|l| (min_frames(&y[..l]) + p.eps_dec).min(n)).collect();
        let ta = ta_prefix_score(enc, y, &nus, &model.decoder).unwrap();
        let lm = y.len() as f64 * log_uniform;
        let score = p.lambda * ctc + (1.0 - p.lambda) * ta + p.alpha * lm + p.beta * y.len() as f64;
        let better = match &best {
            None => true,
            Some((b, s)) => score > *s || (score == *s && (y.len(), y) < (b.len(), b)),
        };
        if better {
            best = Some((y.clone(), score));
        }
    }
    best.expect("the empty sequence is always reachable")
}

fn search_exactness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let lm = UniformLm::new(3).unwrap();
    let (mut hits, mut nonempty) = (0, 0usize);
    for case in 0..100 {
        let model = tiny_model(&mut rng, 2);
        let n = rng.gen_range(1..=4);
        let t = rng.gen_range(4 * n - 3..=4 * n);
        let x = random_features(&mut rng, t, 5);
        let eps_enc = LookAhead::Frames(rng.gen_range(0..=2));
        let enc = model.encode(&x, eps_enc).unwrap();
        let post = model.ctc_posteriorgram(&enc).unwrap();
        let p = DecodeParams {
            lambda: rng.gen_range(0.0..1.0),
            alpha: rng.gen_range(0.0..1.0),
            beta: rng.gen_range(-2.0..3.0),
            eps_dec: rng.gen_range(0..=3),
            ..DecodeParams::exhaustive()
        };
        let got = decode(&enc, &mut post.clone(), &lm, &model.decoder, &p).map_err(|e| e.to_string())?;
        let (want, score) = exhaustive_argmax(&model, &enc, &post, &p);
        check(got.labels == want, || {
            format!("case {case}: search {:?} ({}), oracle {want:?} ({score})", got.labels, got.score)
        })?;
        hits += 1;
        nonempty += usize::from(!want.is_empty());
    }
    let elapsed = start.elapsed();
    within(elapsed, Duration::from_secs(120))?;
    Ok(format!("{hits}/100 argmax matches ({nonempty} non-empty), {elapsed:.2?}"))
}

fn random_bigram(rng: &mut ChaCha8Rng) -> NgramLm {
    let mut counts = Vec::new();
    for a in [streamta_core::lm::BOS, 0, 1, 2] {
        for b in 0..3u32 {
            counts.push(((a, b), rng.gen_range(1..20u64)));
        }
    }
    NgramLm::from_bigram_counts(&counts).unwrap()
}

fn reduction() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nonempty = 0;
    for case in 0..100 {
        let model = tiny_model(&mut rng, 2);
        let t = rng.gen_range(8..64);
        let x = random_features(&mut rng, t, 5);
        let enc = model.encode(&x, LookAhead::Frames(rng.gen_range(0..3))).unwrap();
        let post = model.ctc_posteriorgram(&enc).unwrap();
        let alpha = rng.gen_range(0.0..1.5);
        let k = rng.gen_range(2..12);
        let p = DecodeParams {
            lambda: 1.0,
            alpha0: alpha,
            alpha,
            beta: rng.gen_range(-1.0..3.0),
            k_size: k,
            p_size: rng.gen_range(1..=k),
            theta1: rng.gen_range(2.0..20.0),
            theta2: rng.gen_range(1.0..8.0),
            eps_dec: rng.gen_range(0..4),
            ..DecodeParams::default()
        };
        let lm: Box<dyn LanguageModel> = if case % 2 == 0 {
            Box::new(UniformLm::new(3).unwrap())
        } else {
            Box::new(random_bigram(&mut rng))
        };
        let joint = decode(&enc, &mut post.clone(), lm.as_ref(), &model.decoder, &p).map_err(|e| e.to_string())?;
        let ctc = ctc_prefix_search(&mut post.clone(), lm.as_ref(), &p).map_err(|e| e.to_string())?;
        check(joint.labels == ctc.labels, || {
            format!("case {case}: joint {:?} vs ctc {:?}", joint.labels, ctc.labels)
        })?;
        nonempty += usize::from(!ctc.labels.is_empty());
    }
    Ok(format!("100/100 identical sequences ({nonempty} non-empty)"))
}

fn same_bits(a: &DecodeResult, b: &DecodeResult) -> bool {
    a.labels == b.labels
        && a.score.to_bits() == b.score.to_bits()
        && a.trace.len() == b.trace.len()
        && a.trace.iter().zip(&b.trace).all(|(x, y)| {
            x.frame == y.frame
                && x.beam == y.beam
                && x.best == y.best
                && x.prefix_score.to_bits() == y.prefix_score.to_bits()
                && x.joint_score.to_bits() == y.joint_score.to_bits()
        })
}

fn streaming_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lm = UniformLm::new(3).unwrap();
    let mut runs = 0;
    for case in 0..50 {
        let model = tiny_model(&mut rng, 2);
        let t = rng.gen_range(12..64);
        let x = random_features(&mut rng, t, 5);
        for eps_enc in 0..=2 {
            for eps_dec in [2, 4] {
                let cfg = StreamConfig {
                    eps_enc: LookAhead::Frames(eps_enc),
                    eps_dec,
                    frame_shift_ms: 10.0,
                };
                let ctx = SearchContext {
                    params: DecodeParams {
                        eps_dec,
                        ..DecodeParams::default()
                    },
                    lm: &lm,
                    decoder: Some(&model.decoder),
                    dcond: &Never,
                    acond: &Always,
                };
                let offline = recognize(&model, &x, cfg.eps_enc, &JointCtcTaSearch, ctx).map_err(|e| e.to_string())?;
                let mut session = Session::new(&model, &JointCtcTaSearch, ctx, cfg).map_err(|e| e.to_string())?;
                for i in 0..x.len() {
                    let chunk = streamta_core::FeatureMatrix::new(x.frames.slice_rows(i, i + 1), 10.0);
                    session.push(&chunk).map_err(|e| e.to_string())?;
                }
                let online = session.finalize().map_err(|e| e.to_string())?;
                check(same_bits(&offline, &online), || {
                    format!("case {case} eps_enc={eps_enc} eps_dec={eps_dec}: {offline:?} vs {online:?}")
                })?;
                runs += 1;
            }
        }
    }
    Ok(format!("{runs} runs bit-identical"))
}

fn encoder_causality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows = 24;
    let mut probes = 0;
    for e in [1usize, 2, 12] {
        for eps in 0..=3usize {
            for m in 0..20 {
                let model = tiny_model(&mut rng, e);
                let params = &model.encoder;
                let x0 = random_matrix(&mut rng, rows, 8);
                let base = encoder_forward(&x0, params, LookAhead::Frames(eps)).unwrap();
                for _ in 0..3 {
                    let n = rng.gen_range(0..rows);
                    let horizon = n + e * eps;
                    if horizon + 1 >= rows {
                        continue;
                    }
                    let mut probe = x0.clone();
                    for r in horizon + 1..rows {
                        for c in 0..8 {
                            probe.set(r, c, rng.gen_range(-5.0..5.0));
                        }
                    }
                    let out = encoder_forward(&probe, params, LookAhead::Frames(eps)).unwrap();
                    let a: Vec<u32> = base.states.row(n).iter().map(|v| v.to_bits()).collect();
                    let b: Vec<u32> = out.states.row(n).iter().map(|v| v.to_bits()).collect();
                    check(a == b, || format!("E={e} eps={eps} model {m}: row {n} changed"))?;
                    probes += 1;
                }
                let unbounded = encoder_forward(&x0, params, LookAhead::Unbounded).unwrap();
                let full = encoder_forward_masked(&x0, params, &AttentionMask::full(rows, rows)).unwrap();
                check(bits(&unbounded.states) == bits(&full.states), || {
                    format!("E={e} model {m}: unbounded differs from unmasked")
                })?;
            }
        }
    }
    Ok(format!("{probes} perturbation probes bit-invariant, unbounded == unmasked"))
}

fn triggered_truncation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let frames = 8;
    let mut worst = 0.0f64;
    for probe in 0..50 {
        let model = tiny_model(&mut rng, 1);
        let enc = EncoderStates::new(random_matrix(&mut rng, frames, 8), 40.0);
        let len = rng.gen_range(0..4);
        let prefix: Vec<u32> = (0..len).map(|_| rng.gen_range(0..3)).collect();
        let nu = rng.gen_range(1..frames);
        let a = decoder_posterior(&enc, nu, &prefix, &model.decoder).unwrap();
        let mut perturbed = enc.clone();
        for r in nu..frames {
            for c in 0..8 {
                perturbed.states.set(r, c, rng.gen_range(-5.0..5.0));
            }
        }
        let b = decoder_posterior(&perturbed, nu, &prefix, &model.decoder).unwrap();
        check(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()), || {
            format!("probe {probe}: posterior at nu={nu} depends on later rows")
        })?;

        // Full-context score through the incremental route.
        let labels: Vec<u32> = (0..rng.gen_range(1..5)).map(|_| rng.gen_range(0..3)).collect();
        let nus = vec![frames; labels.len()];
        let batch = ta_prefix_score(&enc, &labels, &nus, &model.decoder).unwrap();
        let memory = EncoderMemory::from_states(&model.decoder, &enc.states);
        let mut state = model.decoder.initial_state();
        for &y in &labels {
            let step = model.decoder.step(&state, &memory, frames).unwrap();
            state = state.extend(&step, y);
        }
        let full = state.log_prob();
        worst = worst.max((batch - full).abs());
        check((batch - full).abs() <= 1e-10, || format!("probe {probe}: {batch} vs {full}"))?;
    }
    Ok(format!("50 probes bit-invariant, full-context max |err| {worst:.1e}"))
}

fn latency() -> Outcome {
    let cfg = |eps: usize, dec: usize| StreamConfig {
        eps_enc: LookAhead::Frames(eps),
        eps_dec: dec,
        frame_shift_ms: 10.0,
    };
    let total_3 = theoretical_latency_ms(&cfg(3, 18), 12);
    let total_1 = theoretical_latency_ms(&cfg(1, 18), 12);
    check(total_3 == 2190.0, || format!("eps_enc=3: {total_3}"))?;
    check(total_1 == 1230.0, || format!("eps_enc=1: {total_1}"))?;
    let enc: Vec<f64> = (0..=3).map(|e| encoder_latency_ms(&cfg(e, 18), 12)).collect();
    check(enc == [0.0, 480.0, 960.0, 1440.0], || format!("encoder latencies {enc:?}"))?;
    Ok(format!("{total_3} ms, {total_1} ms, encoder {enc:?} ms"))
}

fn forced_alignment() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut worst = 0.0f64;
    for case in 0..200 {
        let n = rng.gen_range(1..=6);
        let v = rng.gen_range(1..=3);
        let post = random_post(&mut rng, n, v);
        let y = loop {
            let l = rng.gen_range(1..=3);
            let y: Vec<u32> = (0..l).map(|_| rng.gen_range(0..v as u32)).collect();
            if min_frames(&y) <= n {
                break y;
            }
        };
        let eps = rng.gen_range(0..4);
        let got = ctc_viterbi_align(&post, &y, eps).map_err(|e| e.to_string())?;
        let (_, want) = brute_viterbi(&post, &y).expect("reachable");
        worst = worst.max((got.log_prob - want).abs());
        check((got.log_prob - want).abs() <= 1e-10, || {
            format!("case {case}: viterbi {} vs oracle {want}", got.log_prob)
        })?;
        check(collapse(&got.path) == y, || format!("case {case}: path does not collapse to {y:?}"))?;
        check(got.path.len() == n, || format!("case {case}: path length {}", got.path.len()))?;
        let path_lp: f64 = got
            .path
            .iter()
            .enumerate()
            .map(|(t, s)| post.row(t)[s.map_or(0, |y| y as usize + 1)])
            .sum();
        check((path_lp - got.log_prob).abs() <= 1e-10, || format!("case {case}: path score mismatch"))?;
        check(got.first_occurrence.windows(2).all(|w| w[0] < w[1]), || {
            format!("case {case}: first occurrences {:?} not increasing", got.first_occurrence)
        })?;
        check(got.nu.iter().zip(&got.first_occurrence).all(|(a, b)| *a == b + eps), || {
            format!("case {case}: triggers {:?}", got.nu)
        })?;
    }
    Ok(format!("200 instances, max |err| {worst:.1e}"))
}

fn loss_limits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let model = tiny_model(&mut rng, 2);
        let t = rng.gen_range(12..40);
        let x = random_features(&mut rng, t, 5);
        let enc = model.encode(&x, LookAhead::Frames(1)).unwrap();
        let post = model.ctc_posteriorgram(&enc).unwrap();
        let y = loop {
            let y: Vec<u32> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(0..3)).collect();
            if min_frames(&y) <= post.frames() {
                break y;
            }
        };
        let align = ctc_viterbi_align(&post, &y, rng.gen_range(0..3)).unwrap();
        let ctc = ctc_forward_logprob(&post, &y).unwrap();
        let ta = ta_prefix_score(&enc, &y, &align.nu, &model.decoder).unwrap();
        let loss = |gamma: f64| joint_loss(&post, &enc, &y, &align, &model.decoder, &LossParams { gamma }).unwrap();
        let (l1, l0, lm) = (loss(1.0), loss(0.0), loss(0.3));
        check((l1 + ctc).abs() <= 1e-12, || format!("case {case}: gamma=1 {l1} vs {}", -ctc))?;
        check((l0 + ta).abs() <= 1e-12, || format!("case {case}: gamma=0 {l0} vs {}", -ta))?;
        let hand = -0.3 * ctc - 0.7 * ta;
        worst = worst.max((lm - hand).abs());
        check((lm - hand).abs() <= 1e-10, || format!("case {case}: gamma=0.3 {lm} vs {hand}"))?;
    }
    Ok(format!("50 instances, mixed max |err| {worst:.1e}"))
}

fn normalization() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = [0.0f64; 5];
    for case in 0..1000 {
        // Row softmax with occasional -inf entries.
        let len = rng.gen_range(1..40);
        let mut row: Vec<f32> = (0..len).map(|_| rng.gen_range(-30.0..30.0)).collect();
        for v in row.iter_mut().skip(1) {
            if rng.gen_bool(0.1) {
                *v = f32::NEG_INFINITY;
            }
        }
        softmax_in_place(&mut row).unwrap();
        let s: f64 = row.iter().map(|&v| f64::from(v)).sum();
        worst[0] = worst[0].max((s - 1.0).abs());
        check((s - 1.0).abs() <= 1e-6 && row.iter().all(|&v| v >= 0.0), || {
            format!("case {case}: softmax sums to {s}")
        })?;

        // CTC and decoder posteriors of a random model.
        let model = tiny_model(&mut rng, 1);
        let enc_row: Vec<f32> = (0..8).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let ctc: f64 = model.ctc_row(&enc_row).iter().map(|v| v.exp()).sum();
        worst[1] = worst[1].max((ctc - 1.0).abs());
        check((ctc - 1.0).abs() <= 1e-5, || format!("case {case}: CTC row sums to {ctc}"))?;

        let frames = rng.gen_range(1..6);
        let enc = Matrix::from_rows(&vec![enc_row; 1], 8).unwrap();
        let mut states = random_matrix(&mut rng, frames, 8);
        for c in 0..8 {
            states.set(0, c, enc.get(0, c));
        }
        let memory = EncoderMemory::from_states(&model.decoder, &states);
        let mut state = model.decoder.initial_state();
        for _ in 0..rng.gen_range(0..3) {
            let step = model.decoder.step(&state, &memory, frames).unwrap();
            state = state.extend(&step, rng.gen_range(0..3));
        }
        let step = model.decoder.step(&state, &memory, rng.gen_range(1..=frames)).unwrap();
        let dec: f64 = step.log_probs.iter().map(|v| v.exp()).sum();
        worst[2] = worst[2].max((dec - 1.0).abs());
        check((dec - 1.0).abs() <= 1e-6, || format!("case {case}: decoder posterior sums to {dec}"))?;

        // Language models over their label sets.
        let labels = rng.gen_range(1..50);
        let uni = UniformLm::new(labels).unwrap();
        let u: f64 = (0..labels as u32).map(|y| uni.score_extend(&uni.start(), y).1.exp()).sum();
        worst[3] = worst[3].max((u - 1.0).abs());
        check((u - 1.0).abs() <= 1e-12, || format!("case {case}: uniform LM sums to {u}"))?;

        let bigram = random_bigram(&mut rng);
        let words = bigram.words();
        let mut state = bigram.start();
        for _ in 0..3 {
            let total: f64 = words.iter().map(|&w| bigram.score_extend(&state, w).1.exp()).sum();
            worst[4] = worst[4].max((total - 1.0).abs());
            check((total - 1.0).abs() <= 1e-12, || format!("case {case}: bigram LM sums to {total}"))?;
            state = bigram.score_extend(&state, words[rng.gen_range(0..words.len())]).0;
        }
    }
    Ok(format!(
        "1000 cases; max |sum-1|: softmax {:.1e}, ctc {:.1e}, decoder {:.1e}, uniform {:.1e}, bigram {:.1e}",
        worst[0], worst[1], worst[2], worst[3], worst[4]
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("CTC exactness", ctc_exactness),
        ("joint search exactness", search_exactness),
        ("reduction to CTC prefix search", reduction),
        ("streaming/offline equivalence", streaming_equivalence),
        ("encoder causality", encoder_causality),
        ("triggered truncation", triggered_truncation),
        ("latency arithmetic", latency),
        ("forced alignment", forced_alignment),
        ("loss limits", loss_limits),
        ("normalization suite", normalization),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {:>2} FAIL {name}: {detail}", i + 1);
            }
        }
    }
    if failed == 0 {
        println!("acceptance: all 10 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} of 10 criteria failed");
        ExitCode::FAILURE
    }
}
