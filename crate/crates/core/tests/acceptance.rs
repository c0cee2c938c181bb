//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any
//! failure.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use polynas::config::NetworkConfig;
use polynas::nnet::{backward, fisher_channel, fisher_decision, fisher_layer, fisher_potential, forward, Batch, Network};
use polynas::search::{candidate_from_sequences, evaluate, run_search, Origin, SearchConfig, Status};
use polynas::transforms::{
    sequence1_steps, sequence2_steps, sequence3_steps, spatial_bottleneck, Seq1Params, Seq2Params, Seq3Params,
};
use polynas::{check_semantic_legality, conv_nest, count_macs, Caps, ConvSpec, Tensor, TransformSequence, Verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

/// Random specs with their random semantic sequences, shared by 1 and 2.
fn semantic_cases() -> Vec<(ConvSpec, polynas::LoopNest, TransformSequence, polynas::LoopNest)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..240)
        .map(|_| {
            let spec = common::random_spec(&mut rng, &[1, 2, 4], &[1, 2, 4], &[1, 3]);
            let base = conv_nest(&spec).unwrap();
            let (seq, out) = common::random_semantic_sequence(&base, &mut rng, 5);
            (spec, base, seq, out)
        })
        .collect()
}

fn oracle_equivalence() -> Outcome {
    let t = Instant::now();
    let cases = semantic_cases();
    let mut kinds = std::collections::BTreeSet::new();
    for (i, (spec, _, seq, nest)) in cases.iter().enumerate() {
        kinds.extend(seq.kinds());
        let (got, want) = common::run_both(spec, nest, i as u64);
        ensure(got == want, || format!("case {i}: `{seq}` on {spec:?} differs from the reference"))?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 60.0, || format!("took {secs:.1}s"))?;
    ensure(kinds.len() == 6, || format!("only kinds {kinds:?} were exercised"))?;
    Ok(format!("{} cases, kinds {:?}, {secs:.1}s", cases.len(), kinds))
}

fn legality_soundness() -> Outcome {
    let cases = semantic_cases();
    for (i, (_, base, seq, nest)) in cases.iter().enumerate() {
        let v = check_semantic_legality(base, nest, Caps::default()).map_err(|e| e.to_string())?;
        ensure(v.is_legal(), || format!("case {i}: `{seq}` judged {v}"))?;
    }
    let bad = common::illegal_rewrites();
    for (name, orig, rewritten) in &bad {
        let v = check_semantic_legality(orig, rewritten, Caps::default()).map_err(|e| e.to_string())?;
        ensure(matches!(v, Verdict::Illegal(_)), || format!("`{name}` judged {v}"))?;
    }
    Ok(format!("{} legal sequences, {} illegal rewrites", cases.len(), bad.len()))
}

fn reduction_factors() -> Outcome {
    let spec = ConvSpec::new(8, 16, 8, 8, 3, 3).with_pad(1);
    let nest = conv_nest(&spec).unwrap();
    let base = count_macs(&nest).unwrap();
    let macs = |dsl: &str, n: &polynas::LoopNest| -> Result<u64, String> {
        let t = TransformSequence::parse(dsl).map_err(|e| e.to_string())?;
        count_macs(&t.apply(n).map_err(|e| e.to_string())?).map_err(|e| e.to_string())
    };
    for g in [2u64, 4, 8] {
        let m = macs(&format!("group(co,ci,{g})"), &nest)?;
        ensure(m * g == base, || format!("group {g}: {m} vs {base}"))?;
    }
    for b in [2u64, 4] {
        let m = macs(&format!("bottleneck(co,{b})"), &nest)?;
        ensure(m * b == base, || format!("bottleneck {b}: {m} vs {base}"))?;
    }
    let square = conv_nest(&ConvSpec::new(8, 8, 8, 8, 3, 3).with_pad(1)).unwrap();
    let sbase = count_macs(&square).unwrap();
    let m = macs("depthwise", &square)?;
    ensure(m * 8 == sbase, || format!("depthwise: {m} vs {sbase}"))?;
    Ok(format!("base {base} MACs; group, bottleneck and depthwise factors exact"))
}

fn spatial_composition() -> Outcome {
    for spec in [ConvSpec::new(4, 4, 8, 8, 3, 3).with_pad(1), ConvSpec::new(2, 3, 8, 8, 1, 1)] {
        let nest = conv_nest(&spec).unwrap();
        for b in [2usize, 4] {
            let composed = spatial_bottleneck(&nest, b as i64).map_err(|e| e.to_string())?;
            let direct = conv_nest(&spec.clone().with_spatial_bottleneck(b)).unwrap();
            ensure(composed.to_string() == direct.to_string(), || {
                format!("b={b}:\n{composed}\nvs\n{direct}")
            })?;
        }
    }
    Ok("b in {2,4} on 8x8 matches direct construction".into())
}

/// Channel error written out directly from its definition.
fn channel_error_by_hand(a: &[f64], g: &[f64], n: usize) -> f64 {
    let per = a.len() / n;
    let mut total = 0.0;
    for i in 0..n {
        let mut s = 0.0;
        for k in 0..per {
            s += a[i * per + k] * g[i * per + k];
        }
        total += (-s) * (-s);
    }
    total / (2.0 * n as f64)
}

fn rel_norm(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    diff / scale.max(1e-300)
}

fn fisher_and_gradients() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_fisher = 0.0f64;
    for trial in 0..20 {
        let shape = [1 + trial % 4, 2 + trial % 3, 3];
        let a = Tensor::random_normal(&shape, 1.0, &mut rng);
        let g = Tensor::random_normal(&shape, 1.0, &mut rng);
        let got = fisher_channel(&a, &g).map_err(|e| e.to_string())?;
        let want = channel_error_by_hand(&a.to_f64_vec(), &g.to_f64_vec(), shape[0]);
        worst_fisher = worst_fisher.max((got - want).abs() / want.abs().max(1e-300));
    }
    ensure(worst_fisher <= 1e-10, || format!("channel error off by {worst_fisher:e}"))?;

    let net = Network::from_specs(
        &[
            (ConvSpec::new(2, 3, 4, 4, 3, 3).with_pad(1), true),
            (ConvSpec::new(3, 4, 4, 4, 3, 3).with_pad(1).with_groups(1), true),
            (ConvSpec::new(4, 2, 4, 4, 1, 1), false),
        ],
        3,
        11,
    )
    .map_err(|e| e.to_string())?;
    let batch = Batch::synthetic(&[2, 4, 4], 3, 3, 12).map_err(|e| e.to_string())?;
    let scalars: usize = net.layers.iter().map(|l| l.weights.len()).sum::<usize>() + net.head_w.len();
    ensure(scalars <= 1000, || format!("{scalars} parameters"))?;
    let grads = backward(&net, &batch).map_err(|e| e.to_string())?;
    let eps = 1e-5;

    let mut worst = 0.0f64;
    for l in 0..net.layers.len() {
        let mut fd = Vec::new();
        for k in 0..net.layers[l].weights.len() {
            let mut p = net.clone();
            p.layers[l].weights[k] += eps;
            let up = forward(&p, &batch).map_err(|e| e.to_string())?.0;
            p.layers[l].weights[k] -= 2.0 * eps;
            let down = forward(&p, &batch).map_err(|e| e.to_string())?.0;
            fd.push((up - down) / (2.0 * eps));
        }
        worst = worst.max(rel_norm(&fd, &grads.weight_grads[l]));

        let acts = grads.activations[l].to_f64_vec();
        let mut fd = Vec::new();
        for k in 0..acts.len() {
            let mut a = acts.clone();
            a[k] += eps;
            let up = net.loss_from_layer(&batch, l, &a).map_err(|e| e.to_string())?;
            a[k] -= 2.0 * eps;
            let down = net.loss_from_layer(&batch, l, &a).map_err(|e| e.to_string())?;
            fd.push((up - down) / (2.0 * eps));
        }
        worst = worst.max(rel_norm(&fd, &grads.activation_grads[l].to_f64_vec()));
    }
    let mut fd = Vec::new();
    for k in 0..net.head_w.len() {
        let mut p = net.clone();
        p.head_w[k] += eps;
        let up = forward(&p, &batch).map_err(|e| e.to_string())?.0;
        p.head_w[k] -= 2.0 * eps;
        let down = forward(&p, &batch).map_err(|e| e.to_string())?.0;
        fd.push((up - down) / (2.0 * eps));
    }
    worst = worst.max(rel_norm(&fd, &grads.head_w_grad));
    ensure(worst <= 1e-4, || format!("finite differences off by {worst:e}"))?;

    // Layer score is the channel sum of the definition.
    for (a, g) in grads.activations.iter().zip(&grads.activation_grads) {
        let (n, c) = (a.shape()[0], a.shape()[1]);
        let (av, gv) = (a.to_f64_vec(), g.to_f64_vec());
        let per = av.len() / n / c;
        let mut by_hand = 0.0;
        for ch in 0..c {
            let pick = |v: &[f64]| -> Vec<f64> {
                (0..n).flat_map(|i| v[(i * c + ch) * per..(i * c + ch + 1) * per].to_vec()).collect()
            };
            by_hand += channel_error_by_hand(&pick(&av), &pick(&gv), n);
        }
        let got = fisher_layer(a, g).map_err(|e| e.to_string())?;
        ensure((got - by_hand).abs() <= 1e-10 * by_hand.abs().max(1e-300), || {
            format!("layer score {got} vs {by_hand}")
        })?;
    }
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 30.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "channel error within {worst_fisher:.1e}, gradients within {worst:.1e} ({scalars} parameters), {secs:.1}s"
    ))
}

fn rejection_filter() -> Outcome {
    let t = Instant::now();
    let cfg = SearchConfig::default();
    let (mut degenerate_rejected, mut identity_accepted) = (0, 0);
    let seeds = 50;
    for seed in 0..seeds {
        let net = NetworkConfig { seed, ..NetworkConfig::toy() };
        let batch = net.build_batch(None).map_err(|e| e.to_string())?;
        let origin = Origin::new(&net, batch).map_err(|e| e.to_string())?;

        let collapse: Vec<TransformSequence> = net
            .layers
            .iter()
            .map(|l| TransformSequence::parse(&format!("bottleneck(co,{})", l.conv.co)).unwrap())
            .collect();
        let c = candidate_from_sequences(&origin, 0, &collapse).map_err(|e| e.to_string())?;
        let row = evaluate(&c, &origin, &cfg).map_err(|e| e.to_string())?;
        if row.status == Status::RejectedFisher {
            degenerate_rejected += 1;
        }

        let none = vec![TransformSequence::parse("").unwrap(); net.layers.len()];
        let c = candidate_from_sequences(&origin, 1, &none).map_err(|e| e.to_string())?;
        let row = evaluate(&c, &origin, &cfg).map_err(|e| e.to_string())?;
        // Score the identity network from scratch as well.
        let nests = c.layers.iter().map(|l| (l.final_nest().clone(), l.relu)).collect();
        let rebuilt = Network::from_nests(nests, net.num_classes, net.seed).map_err(|e| e.to_string())?;
        let fresh = fisher_potential(&rebuilt, &origin.batch).map_err(|e| e.to_string())?;
        if row.status == Status::Survived && fisher_decision(&origin.fisher, &fresh, None).accepted() {
            identity_accepted += 1;
        }
    }
    let rate = degenerate_rejected as f64 / seeds as f64;
    ensure(rate >= 0.9, || format!("degenerate rejected in {degenerate_rejected}/{seeds}"))?;
    ensure(identity_accepted == seeds, || format!("identity accepted in {identity_accepted}/{seeds}"))?;

    let report = run_search(
        &SearchConfig { candidate_count: 40, ..SearchConfig::default() },
        &NetworkConfig::toy(),
        None,
        None,
    )
    .map_err(|e| e.to_string())?;
    let json: serde_json::Value = serde_json::from_str(&report.to_json()).map_err(|e| e.to_string())?;
    ensure(json["stats"]["rejection_rate"].is_number(), || "rejection rate missing from report".into())?;
    let secs = t.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "degenerate rejected {degenerate_rejected}/{seeds}, identity accepted {identity_accepted}/{seeds}, \
         search rejection rate {:.3}, {secs:.1}s",
        report.stats.rejection_rate
    ))
}

fn search_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let cfg = SearchConfig { candidate_count: 1000, seed: 7, ..SearchConfig::default() };
    let net = NetworkConfig::toy();
    let mut outputs = Vec::new();
    let mut times = Vec::new();
    for run in 0..2 {
        let path = dir.path().join(format!("run{run}.json"));
        let t = Instant::now();
        let report = run_search(&cfg, &net, Some(&path), None).map_err(|e| e.to_string())?;
        times.push(t.elapsed());
        ensure(report.candidates.len() == 1000, || format!("{} candidates", report.candidates.len()))?;
        let csv = std::fs::read_to_string(path.with_extension("csv")).map_err(|e| e.to_string())?;
        outputs.push((report.body_json(), csv, report.stats.clone()));
    }
    let budget = Duration::from_secs(300);
    ensure(times.iter().all(|t| *t < budget), || format!("run times {times:?}"))?;
    ensure(outputs[0].0 == outputs[1].0, || "reports differ outside timing".into())?;
    ensure(outputs[0].1 == outputs[1].1, || "CSV files differ".into())?;
    let s = &outputs[0].2;
    Ok(format!(
        "1000 candidates in {:.1}s and {:.1}s, identical reports; {} survivors, rejection rate {:.3}",
        times[0].as_secs_f64(),
        times[1].as_secs_f64(),
        s.survivors,
        s.rejection_rate
    ))
}

fn named_sequences() -> Outcome {
    let spec = ConvSpec::new(32, 32, 8, 8, 3, 3).with_pad(1);
    let nest = conv_nest(&spec).unwrap();
    let checks: [(&str, TransformSequence, &[&str]); 3] = [
        (
            "sequence1",
            sequence1_steps(&nest, &Seq1Params::default()).map_err(|e| e.to_string())?,
            &["split", "interchange", "group", "interchange", "fuse"],
        ),
        (
            "sequence2",
            sequence2_steps(&nest, &Seq2Params::default()).map_err(|e| e.to_string())?,
            &["unroll", "group", "interchange"],
        ),
        (
            "sequence3",
            sequence3_steps(&nest, &Seq3Params::default()).map_err(|e| e.to_string())?,
            &["split", "group", "interchange", "group"],
        ),
    ];
    for (name, seq, want) in &checks {
        ensure(seq.kinds() == *want, || format!("{name} lists {:?}", seq.kinds()))?;
        seq.apply(&nest).map_err(|e| format!("{name}: {e}"))?;
        let reparsed = TransformSequence::parse(&seq.to_string()).map_err(|e| e.to_string())?;
        ensure(reparsed.steps == seq.steps, || format!("{name} does not round-trip"))?;
    }
    Ok(checks.iter().map(|(n, s, _)| format!("{n}: {s}")).collect::<Vec<_>>().join("; "))
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("semantic transforms match the reference convolution", oracle_equivalence),
        ("dependence check accepts legal and rejects illegal rewrites", legality_soundness),
        ("group, bottleneck and depthwise reduce MACs exactly", reduction_factors),
        ("spatial bottleneck composition equals direct construction", spatial_composition),
        ("Fisher Potential and gradients match independent computations", fisher_and_gradients),
        ("rejection filter rejects collapse and accepts identity", rejection_filter),
        ("1000-candidate search is fast and reproducible", search_determinism),
        ("named sequences list their documented steps", named_sequences),
    ];
    let mut failed = 0;
    for (i, (title, check)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into());
            Err(msg)
        });
        match outcome {
            Ok(detail) => println!("PASS {} {title}: {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL {} {title}: {reason}", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
