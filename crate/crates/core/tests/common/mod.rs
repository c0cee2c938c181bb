//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use std::collections::HashMap;

use polynas::expr::Affine;
use polynas::ir::{AccessMap, AccessMode, IterRole, IterVar, Loop, Node, Statement, StmtKind, TensorDecl, TensorRole};
use polynas::transforms::trip_count;
use polynas::{
    conv_nest, execute, reference_conv, ConvSpec, ElementMode, ExecEnv, LoopNest, Tensor, Transform,
    TransformSequence,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Seeded integer input and weight tensors shaped for `spec`.
pub fn int_inputs(spec: &ConvSpec, seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::random_i64(&spec.input_shape(), -8, 8, &mut rng);
    let w = Tensor::random_i64(&spec.weight_shape(), -8, 8, &mut rng);
    (x, w)
}

/// Executes `nest` and the direct convolution formula on the same inputs.
pub fn run_both(spec: &ConvSpec, nest: &LoopNest, seed: u64) -> (Tensor, Tensor) {
    let (x, w) = int_inputs(spec, seed);
    let env = ExecEnv::new(ElementMode::Int64).bind("I", x.clone()).bind("W", w.clone());
    let got = execute(nest, &env).expect("nest executes");
    let want = reference_conv(spec, &x, &w).expect("reference runs");
    (got, want)
}

/// A random convolution with every bound at most 8. Group, bottleneck and
/// kernel sizes are drawn from the given menus; invalid combinations are
/// redrawn.
pub fn random_spec(rng: &mut ChaCha8Rng, groups: &[usize], bottlenecks: &[usize], kernels: &[usize]) -> ConvSpec {
    loop {
        let g = groups[rng.random_range(0..groups.len())];
        let b = bottlenecks[rng.random_range(0..bottlenecks.len())];
        let k = kernels[rng.random_range(0..kernels.len())];
        let ci = g * rng.random_range(1..=(8 / g).max(1));
        let co = g * rng.random_range(1..=(8 / g).max(1));
        let spec = ConvSpec::new(ci, co, rng.random_range(2..=8), rng.random_range(2..=8), k, k)
            .with_pad(rng.random_range(0..=k / 2))
            .with_stride(rng.random_range(1..=2))
            .with_groups(g)
            .with_bottleneck(b);
        if spec.validate().is_ok() {
            return spec;
        }
    }
}

/// A random semantic step that applies to `nest`, if one is found quickly.
pub fn random_semantic_step(nest: &LoopNest, rng: &mut ChaCha8Rng) -> Option<Transform> {
    let names = nest.loop_names();
    for _ in 0..30 {
        let a = names[rng.random_range(0..names.len())].clone();
        let b = names[rng.random_range(0..names.len())].clone();
        let f = [1i64, 2, 3, 4][rng.random_range(0..4)];
        let t = match rng.random_range(0..6) {
            0 => Transform::Interchange(vec![a, b]),
            1 => Transform::StripMine { iter: a, factor: f },
            2 => Transform::Tile { iter: a, factor: f },
            3 => Transform::Unroll { iter: a, factor: f },
            4 => Transform::Fuse { outer: a, inner: b },
            _ => {
                let n = trip_count(nest, &a).unwrap_or(0);
                if n < 2 {
                    continue;
                }
                let k = rng.random_range(1..n);
                Transform::Split { iter: a, parts: vec![k, n - k] }
            }
        };
        if t.apply(nest).is_ok() {
            return Some(t);
        }
    }
    None
}

/// A random semantic sequence of up to `max_len` steps applied to `nest`.
pub fn random_semantic_sequence(nest: &LoopNest, rng: &mut ChaCha8Rng, max_len: usize) -> (TransformSequence, LoopNest) {
    let mut cur = nest.clone();
    let mut steps = Vec::new();
    for _ in 0..rng.random_range(1..=max_len) {
        if let Some(t) = random_semantic_step(&cur, rng) {
            cur = t.apply(&cur).expect("step was checked");
            steps.push(t);
        }
    }
    (TransformSequence::new(steps, "random"), cur)
}

fn keep_only(nodes: &[Node], id: &str) -> Vec<Node> {
    nodes
        .iter()
        .filter_map(|n| match n {
            Node::Stmt(s) => (s.id == id).then(|| n.clone()),
            Node::Loop(l) => {
                let body = keep_only(&l.body, id);
                (!body.is_empty()).then(|| Node::Loop(Loop { var: l.var.clone(), body }))
            }
        })
        .collect()
}

/// Named rewrites that reorder dependent statement instances, each paired
/// with the nest it rewrites.
pub fn illegal_rewrites() -> Vec<(&'static str, LoopNest, LoopNest)> {
    let mut out = Vec::new();

    // The init statement runs after the accumulation into the same cell.
    let conv = conv_nest(&ConvSpec::new(2, 3, 3, 3, 1, 1)).unwrap();
    let mut bad = conv.clone();
    let w = bad.find_loop("w").unwrap();
    bad.body_mut(&w).reverse();
    out.push(("init after use", conv.clone(), bad));

    let spec = ConvSpec::new(4, 2, 3, 3, 3, 3).with_pad(1);
    let conv3 = conv_nest(&spec).unwrap();
    // Tiling distributes the init into its own nest ahead of the hoisted
    // strip loop; swapping the two nests runs every init last.
    let mut bad = TransformSequence::parse("tile(ci,2)").unwrap().apply(&conv3).unwrap();
    bad.body.reverse();
    out.push(("init nest after tiled use", conv3, bad));

    // Fission that places the init nest after the accumulation nest.
    let mut bad = conv.clone();
    let mut init = keep_only(&conv.body, "S1");
    let renames: HashMap<String, String> =
        ["co", "h", "w"].iter().map(|n| (n.to_string(), format!("{n}_init"))).collect();
    init.iter_mut().for_each(|n| n.rename(&renames));
    bad.body = keep_only(&conv.body, "S2");
    bad.body.extend(init);
    out.push(("init fissioned after accumulation", conv.clone(), bad));

    // O[i] += O[i-1] * W[0] executed with i reversed.
    let fwd = recurrence(Affine::var("i"), Affine::var("i") - 1);
    let rev = recurrence(Affine::constant(6) - Affine::var("i"), Affine::constant(5) - Affine::var("i"));
    out.push(("reversed flow recurrence", fwd, rev));

    // O[i][j] += O[i-1][j+1] * W[0]; the dependence distance (1,-1) turns
    // negative under interchange.
    let wave = wavefront();
    let swapped = Transform::interchange("i", "j").apply(&wave).unwrap();
    out.push(("wavefront interchange", wave, swapped));

    // O[i] += O[i+1] * W[0]; running the upper half first overwrites O[i+1]
    // before instance i reads it.
    let anti = recurrence(Affine::var("i"), Affine::var("i") + 1);
    let mut bad = TransformSequence::parse("split(i,[2,3])").unwrap().apply(&anti).unwrap();
    bad.body.reverse();
    out.push(("anti-dependence fission swap", anti, bad));

    out
}

fn mac(origin: Vec<(&str, Affine)>, target: Vec<Affine>, source: Vec<Affine>) -> Statement {
    Statement {
        id: "S".into(),
        kind: StmtKind::Mac,
        accesses: vec![
            AccessMap::new("O", target.clone(), AccessMode::ReadWrite),
            AccessMap::new("O", source, AccessMode::Read),
            AccessMap::new("W", vec![Affine::constant(0)], AccessMode::Read),
        ],
        origin: origin.into_iter().map(|(n, e)| (n.to_string(), e)).collect(),
    }
}

/// `for i in [1, 6): O[target] += O[source] * W[0]`, origin `i = target`.
fn recurrence(target: Affine, source: Affine) -> LoopNest {
    LoopNest {
        tensors: vec![
            TensorDecl::new("W", vec![1], TensorRole::Weight),
            TensorDecl::new("O", vec![7], TensorRole::Output),
        ],
        body: vec![Node::Loop(Loop {
            var: IterVar::new("i", 1, 6, IterRole::Other),
            body: vec![Node::Stmt(mac(vec![("i", target.clone())], vec![target], vec![source]))],
        })],
        provenance: None,
    }
}

fn wavefront() -> LoopNest {
    let (i, j) = (Affine::var("i"), Affine::var("j"));
    let s = mac(
        vec![("i", i.clone()), ("j", j.clone())],
        vec![i.clone(), j.clone()],
        vec![i - 1, j + 1],
    );
    LoopNest {
        tensors: vec![
            TensorDecl::new("W", vec![1], TensorRole::Weight),
            TensorDecl::new("O", vec![4, 5], TensorRole::Output),
        ],
        body: vec![Node::Loop(Loop {
            var: IterVar::new("i", 1, 4, IterRole::Other),
            body: vec![Node::Loop(Loop {
                var: IterVar::new("j", 0, 4, IterRole::Other),
                body: vec![Node::Stmt(s)],
            })],
        })],
        provenance: None,
    }
}
