//! Interpreter runs of generated and transformed nests against the direct
//! convolution formula.

mod common;

use polynas::{conv_nest, count_macs, ConvSpec, TransformSequence};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn generated_nests_match_reference_across_groups_bottlenecks_kernels() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut seen = std::collections::BTreeSet::new();
    for case in 0..240 {
        let spec = common::random_spec(&mut rng, &[1, 2, 4], &[1, 2, 4], &[1, 3]);
        seen.insert((spec.groups, spec.bottleneck_out, spec.kh));
        let nest = conv_nest(&spec).unwrap();
        assert_eq!(count_macs(&nest).unwrap(), spec.macs(), "{spec:?}");
        let (got, want) = common::run_both(&spec, &nest, case);
        assert_eq!(got, want, "{spec:?}");
    }
    // G = B = 4 needs more than 8 output channels.
    for (case, spec) in [
        ConvSpec::new(4, 16, 4, 4, 3, 3).with_pad(1).with_groups(4).with_bottleneck(4),
        ConvSpec::new(8, 16, 5, 5, 1, 1).with_groups(4).with_bottleneck(4).with_stride(2),
    ]
    .into_iter()
    .enumerate()
    {
        seen.insert((spec.groups, spec.bottleneck_out, spec.kh));
        let (got, want) = common::run_both(&spec, &conv_nest(&spec).unwrap(), case as u64);
        assert_eq!(got, want, "{spec:?}");
    }
    assert_eq!(seen.len(), 18, "{seen:?}");
}

#[test]
fn neural_transforms_match_the_reference_of_their_derived_spec() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for case in 0..200u64 {
        let pick = |rng: &mut ChaCha8Rng, xs: &[usize]| xs[rng.random_range(0..xs.len())];
        let k = pick(&mut rng, &[1, 3]);
        let c = pick(&mut rng, &[4, 8]);
        let spec = ConvSpec::new(c, c * pick(&mut rng, &[1, 2]), pick(&mut rng, &[4, 8]), pick(&mut rng, &[4, 8]), k, k)
            .with_pad(k / 2);
        let nest = conv_nest(&spec).unwrap();
        let f = [2i64, 4][rng.random_range(0..2)];
        let dsl = match rng.random_range(0..4) {
            0 => format!("group(co,ci,{f})"),
            1 => format!("bottleneck(co,{f})"),
            2 => format!("bottleneck(h,{f})"),
            _ => "depthwise".to_string(),
        };
        let Ok(out) = TransformSequence::parse(&dsl).unwrap().apply(&nest) else {
            continue;
        };
        let derived = out.provenance.clone().expect("neural transforms keep a conv spec");
        let (got, want) = common::run_both(&derived, &out, case);
        assert_eq!(got, want, "`{dsl}` on {spec:?}");
        checked += 1;
    }
    assert!(checked >= 150, "only {checked} cases applied");
}

#[test]
fn semantic_sequences_after_neural_steps_keep_the_derived_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for case in 0..60u64 {
        let spec = common::random_spec(&mut rng, &[1], &[1], &[1, 3]).with_groups(1);
        let spec = ConvSpec { ci: spec.ci * 2, co: spec.co * 2, ..spec };
        let grouped = TransformSequence::parse("group(co,ci,2)").unwrap().apply(&conv_nest(&spec).unwrap()).unwrap();
        let (_, out) = common::random_semantic_sequence(&grouped, &mut rng, 4);
        let derived = grouped.provenance.clone().unwrap();
        let (got, want) = common::run_both(&derived, &out, case);
        assert_eq!(got, want, "case {case}");
    }
}
