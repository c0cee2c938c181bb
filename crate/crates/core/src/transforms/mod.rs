//! Loop-nest rewrites: the classical program transformations and the neural
//! architecture operations expressed as schedule/domain changes.
//!
//! Every transformation is a pure function from a nest to a new nest. After
//! each rewrite the nest is simplified, tensor shapes are re-inferred and the
//! structural invariants are validated.

mod dsl;
mod legality;
mod sequences;

use std::collections::{HashMap, HashSet};
use std::fmt;

use thiserror::Error;

use crate::conv::ConvSpec;
use crate::expr::Affine;
use crate::ir::{
    fresh_name, IrError, IterRole, IterVar, Loop, LoopNest, Node, NodePath, Statement, TensorRole,
};

pub use dsl::ParseError;
pub use legality::{check_semantic_legality, Verdict};
pub use sequences::{
    sequence1, sequence1_steps, sequence2, sequence2_steps, sequence3, sequence3_steps,
    spatial_bottleneck, spatial_bottleneck_steps, Seq1Params, Seq2Params, Seq3Params, SpatialAxis,
};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TransformError {
    #[error("unknown iterator `{0}`")]
    UnknownIterator(String),
    #[error("not permutable: {0}")]
    NotPermutable(String),
    #[error("trip count {trip} of `{iter}` is not divisible by {factor}")]
    NonDivisible { iter: String, trip: i64, factor: i64 },
    #[error("not adjacent: {0}")]
    NotAdjacent(String),
    #[error("bad partition: {0}")]
    BadPartition(String),
    #[error("`{0}` is a kernel axis and cannot be bottlenecked")]
    KernelAxis(String),
    #[error("depthwise needs equal channel trip counts, got co={co} and ci={ci}")]
    ChannelMismatch { co: i64, ci: i64 },
    #[error("`{0}` does not have a constant trip count")]
    NonConstantBounds(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error("step {index} (`{step}`): {source}")]
    Step {
        index: usize,
        step: String,
        source: Box<TransformError>,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformClass {
    /// Preserves computed values; checked by dependence preservation.
    Semantic,
    /// Changes the operator; checked by Fisher Potential.
    Neural,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Transform {
    /// Cyclic permutation of perfectly nested loops: each listed loop takes
    /// the schedule slot of the next one, the last takes the first's slot.
    /// With two loops this is a plain swap.
    Interchange(Vec<String>),
    StripMine { iter: String, factor: i64 },
    Tile { iter: String, factor: i64 },
    Unroll { iter: String, factor: i64 },
    Fuse { outer: String, inner: String },
    Split { iter: String, parts: Vec<i64> },
    Bottleneck { iter: String, factor: i64 },
    Group { a: String, b: String, factor: i64 },
    Depthwise,
}

impl Transform {
    pub fn interchange(a: &str, b: &str) -> Self {
        Transform::Interchange(vec![a.to_string(), b.to_string()])
    }

    pub fn class(&self) -> TransformClass {
        match self {
            Transform::Bottleneck { .. } | Transform::Group { .. } | Transform::Depthwise => {
                TransformClass::Neural
            }
            _ => TransformClass::Semantic,
        }
    }

    /// DSL keyword of the transformation.
    pub fn kind(&self) -> &'static str {
        match self {
            Transform::Interchange(_) => "interchange",
            Transform::StripMine { .. } => "strip_mine",
            Transform::Tile { .. } => "tile",
            Transform::Unroll { .. } => "unroll",
            Transform::Fuse { .. } => "fuse",
            Transform::Split { .. } => "split",
            Transform::Bottleneck { .. } => "bottleneck",
            Transform::Group { .. } => "group",
            Transform::Depthwise => "depthwise",
        }
    }

    pub fn apply(&self, nest: &LoopNest) -> Result<LoopNest, TransformError> {
        let mut out = match self {
            Transform::Interchange(names) => interchange(nest, names)?,
            Transform::StripMine { iter, factor } => strip_mine(nest, iter, *factor)?.0,
            Transform::Tile { iter, factor } => tile(nest, iter, *factor)?,
            Transform::Unroll { iter, factor } => unroll(nest, iter, *factor)?,
            Transform::Fuse { outer, inner } => fuse(nest, outer, inner)?,
            Transform::Split { iter, parts } => split(nest, iter, parts)?,
            Transform::Bottleneck { iter, factor } => bottleneck(nest, iter, *factor)?,
            Transform::Group { a, b, factor } => group(nest, a, b, *factor)?,
            Transform::Depthwise => depthwise(nest)?,
        };
        out.simplify();
        out.infer_shapes()?;
        out.validate()?;
        out.provenance = updated_provenance(nest, self);
        Ok(out)
    }
}

impl fmt::Display for Transform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Transform::Interchange(names) => write!(f, "interchange({})", names.join(",")),
            Transform::StripMine { iter, factor }
            | Transform::Tile { iter, factor }
            | Transform::Unroll { iter, factor }
            | Transform::Bottleneck { iter, factor } => {
                write!(f, "{}({iter},{factor})", self.kind())
            }
            Transform::Fuse { outer, inner } => write!(f, "fuse({outer},{inner})"),
            Transform::Split { iter, parts } => {
                let parts: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
                write!(f, "split({iter},[{}])", parts.join(","))
            }
            Transform::Group { a, b, factor } => write!(f, "group({a},{b},{factor})"),
            Transform::Depthwise => write!(f, "depthwise"),
        }
    }
}

/// An ordered list of transformations with a free-text label.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TransformSequence {
    pub steps: Vec<Transform>,
    pub label: String,
}

impl TransformSequence {
    pub fn new(steps: Vec<Transform>, label: impl Into<String>) -> Self {
        TransformSequence {
            steps,
            label: label.into(),
        }
    }

    /// Builds a sequence and checks that every step applies to `origin`.
    pub fn validated(
        steps: Vec<Transform>,
        label: impl Into<String>,
        origin: &LoopNest,
    ) -> Result<Self, TransformError> {
        let seq = TransformSequence::new(steps, label);
        seq.apply(origin)?;
        Ok(seq)
    }

    pub fn parse(text: &str) -> Result<Self, ParseError> {
        Ok(TransformSequence::new(dsl::parse_sequence(text)?, ""))
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Step keywords in order, e.g. `["split", "interchange", ...]`.
    pub fn kinds(&self) -> Vec<&'static str> {
        self.steps.iter().map(Transform::kind).collect()
    }

    pub fn is_semantic(&self) -> bool {
        self.steps.iter().all(|s| s.class() == TransformClass::Semantic)
    }

    pub fn apply(&self, nest: &LoopNest) -> Result<LoopNest, TransformError> {
        let mut cur = nest.clone();
        for (index, step) in self.steps.iter().enumerate() {
            cur = step.apply(&cur).map_err(|e| TransformError::Step {
                index,
                step: step.to_string(),
                source: Box::new(e),
            })?;
        }
        Ok(cur)
    }

    /// Every intermediate nest, starting with the input.
    pub fn trace(&self, nest: &LoopNest) -> Result<Vec<LoopNest>, TransformError> {
        let mut out = vec![nest.clone()];
        for (index, step) in self.steps.iter().enumerate() {
            let next = step.apply(out.last().expect("non-empty")).map_err(|e| {
                TransformError::Step {
                    index,
                    step: step.to_string(),
                    source: Box::new(e),
                }
            })?;
            out.push(next);
        }
        Ok(out)
    }
}

impl fmt::Display for TransformSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.steps.iter().map(|s| s.to_string()).collect();
        f.write_str(&parts.join(" | "))
    }
}

impl std::str::FromStr for TransformSequence {
    type Err = ParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TransformSequence::parse(s)
    }
}

/// Path and constant trip count of a loop.
pub(crate) fn loop_info(nest: &LoopNest, name: &str) -> Result<(NodePath, i64), TransformError> {
    let path = nest
        .find_loop(name)
        .ok_or_else(|| TransformError::UnknownIterator(name.to_string()))?;
    let var = &nest.loop_at(&path).var;
    if var.step != 1 {
        return Err(TransformError::InvalidArgument(format!(
            "`{name}` has step {}",
            var.step
        )));
    }
    let trip = (var.upper.clone() - var.lower.clone())
        .as_const()
        .ok_or_else(|| TransformError::NonConstantBounds(name.to_string()))?;
    Ok((path, trip))
}

/// Constant trip count of a loop, if it has one.
pub fn trip_count(nest: &LoopNest, name: &str) -> Option<i64> {
    loop_info(nest, name).ok().map(|(_, t)| t)
}

fn wrap(vars: Vec<IterVar>, body: Vec<Node>) -> Node {
    let mut nodes = body;
    for var in vars.into_iter().rev() {
        nodes = vec![Node::Loop(Loop { var, body: nodes })];
    }
    nodes.pop().expect("at least one loop")
}

fn interchange(nest: &LoopNest, names: &[String]) -> Result<LoopNest, TransformError> {
    if names.is_empty() {
        return Err(TransformError::InvalidArgument("interchange needs iterators".into()));
    }
    let mut uniq: Vec<&String> = Vec::new();
    for n in names {
        if !uniq.contains(&n) {
            uniq.push(n);
        }
    }
    let paths = names
        .iter()
        .map(|n| {
            nest.find_loop(n)
                .ok_or_else(|| TransformError::UnknownIterator(n.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    if uniq.len() == 1 {
        return Ok(nest.clone());
    }
    if uniq.len() != names.len() {
        return Err(TransformError::InvalidArgument(format!(
            "interchange lists an iterator twice: {}",
            names.join(",")
        )));
    }
    let deepest = paths.iter().max_by_key(|p| p.len()).expect("non-empty").clone();
    let top_len = paths.iter().map(|p| p.len()).min().expect("non-empty");
    for (p, n) in paths.iter().zip(names) {
        if !deepest.starts_with(p) {
            return Err(TransformError::NotPermutable(format!(
                "`{n}` does not enclose the other interchanged loops"
            )));
        }
    }
    for k in top_len..deepest.len() {
        let l = nest.loop_at(&deepest[..k]);
        if l.body.len() != 1 {
            return Err(TransformError::NotPermutable(format!(
                "loop `{}` has {} children; interchanged loops must be perfectly nested",
                l.var.name,
                l.body.len()
            )));
        }
    }
    let chain: Vec<IterVar> = (top_len..=deepest.len())
        .map(|k| nest.loop_at(&deepest[..k]).var.clone())
        .collect();
    let chain_names: HashSet<&str> = chain.iter().map(|v| v.name.as_str()).collect();
    for v in &chain {
        for dep in v.lower.vars().into_iter().chain(v.upper.vars()) {
            if chain_names.contains(dep.as_str()) {
                return Err(TransformError::NotPermutable(format!(
                    "bounds of `{}` depend on `{dep}`",
                    v.name
                )));
            }
        }
    }
    let pos: Vec<usize> = names
        .iter()
        .map(|n| chain.iter().position(|v| &v.name == n).expect("on chain"))
        .collect();
    let mut permuted = chain.clone();
    for i in 0..pos.len() {
        permuted[pos[(i + 1) % pos.len()]] = chain[pos[i]].clone();
    }
    let inner = nest.loop_at(&deepest).body.clone();
    let mut out = nest.clone();
    *out.node_mut(&deepest[..top_len]) = wrap(permuted, inner);
    Ok(out)
}

fn strip_mine(
    nest: &LoopNest,
    name: &str,
    factor: i64,
) -> Result<(LoopNest, String), TransformError> {
    let (path, n) = loop_info(nest, name)?;
    if factor < 1 {
        return Err(TransformError::InvalidArgument(format!("factor {factor} must be positive")));
    }
    if n % factor != 0 {
        return Err(TransformError::NonDivisible {
            iter: name.to_string(),
            trip: n,
            factor,
        });
    }
    let mut taken = nest.taken_names();
    let outer = fresh_name(&taken, &format!("{name}_o"));
    taken.insert(outer.clone());
    let inner = fresh_name(&taken, &format!("{name}_i"));
    let old = nest.loop_at(&path).clone();
    let value = old.var.lower.clone() + Affine::var(outer.clone()) * factor + Affine::var(inner.clone());
    let map: HashMap<String, Affine> = [(name.to_string(), value)].into_iter().collect();
    let mut body = old.body;
    for node in &mut body {
        node.substitute(&map);
    }
    let role = old.var.role;
    let mut inner_var = IterVar::new(inner, 0, factor, role);
    if old.var.unroll > 1 && factor % old.var.unroll == 0 {
        inner_var.unroll = old.var.unroll;
    }
    let node = wrap(
        vec![IterVar::new(outer.clone(), 0, n / factor, role), inner_var],
        body,
    );
    let mut out = nest.clone();
    *out.node_mut(&path) = node;
    Ok((out, outer))
}

/// Splits the parent of the loop at `path` so that the loop becomes its only
/// child. Siblings before and after move into copies of the parent with
/// fresh iterator names.
fn distribute(nest: &mut LoopNest, path: &[usize]) {
    let (&idx, parent_path) = path.split_last().expect("nested loop");
    let parent = nest.loop_at(parent_path).clone();
    let mut taken = nest.taken_names();
    let copy = |children: &[Node], taken: &mut HashSet<String>| -> Option<Node> {
        if children.is_empty() {
            return None;
        }
        let mut node = Node::Loop(Loop {
            var: parent.var.clone(),
            body: children.to_vec(),
        });
        // Only the parent is duplicated; moved children keep their names.
        let fresh = fresh_name(taken, &parent.var.name);
        taken.insert(fresh.clone());
        node.rename(&HashMap::from([(parent.var.name.clone(), fresh)]));
        Some(node)
    };
    let before = copy(&parent.body[..idx], &mut taken);
    let after = copy(&parent.body[idx + 1..], &mut taken);
    let mid = Node::Loop(Loop {
        var: parent.var.clone(),
        body: vec![parent.body[idx].clone()],
    });
    let (&pidx, grand) = parent_path.split_last().expect("parent exists");
    let siblings = nest.body_mut(grand);
    let replacement: Vec<Node> = before.into_iter().chain([mid]).chain(after).collect();
    siblings.splice(pidx..=pidx, replacement);
}

fn tile(nest: &LoopNest, name: &str, factor: i64) -> Result<LoopNest, TransformError> {
    let (mut cur, outer) = strip_mine(nest, name, factor)?;
    loop {
        let path = cur.find_loop(&outer).expect("strip loop exists");
        if path.len() == 1 {
            return Ok(cur);
        }
        let parent_path = &path[..path.len() - 1];
        if cur.loop_at(parent_path).body.len() > 1 {
            distribute(&mut cur, &path);
        }
        let path = cur.find_loop(&outer).expect("strip loop exists");
        let parent = cur.loop_at(&path[..path.len() - 1]).var.name.clone();
        cur = interchange(&cur, &[parent, outer.clone()])?;
    }
}

fn unroll(nest: &LoopNest, name: &str, factor: i64) -> Result<LoopNest, TransformError> {
    let (path, n) = loop_info(nest, name)?;
    if factor < 1 {
        return Err(TransformError::InvalidArgument(format!("factor {factor} must be positive")));
    }
    if n % factor != 0 {
        return Err(TransformError::NonDivisible {
            iter: name.to_string(),
            trip: n,
            factor,
        });
    }
    let mut out = nest.clone();
    out.loop_at_mut(&path).var.unroll = factor;
    Ok(out)
}

fn fused_role(a: IterRole, b: IterRole) -> IterRole {
    match (a, b) {
        (IterRole::Group, other) | (other, IterRole::Group) => other,
        (x, y) if x == y => x,
        _ => IterRole::Other,
    }
}

fn fuse(nest: &LoopNest, a: &str, b: &str) -> Result<LoopNest, TransformError> {
    let (pa, na) = loop_info(nest, a)?;
    let (pb, nb) = loop_info(nest, b)?;
    let outer = nest.loop_at(&pa);
    let adjacent = outer.body.len() == 1 && pb.len() == pa.len() + 1 && pb.starts_with(&pa);
    if !adjacent {
        return Err(TransformError::NotAdjacent(format!(
            "`{b}` must be the only child of `{a}`"
        )));
    }
    if outer.var.lower.as_const().is_none() {
        return Err(TransformError::NonConstantBounds(a.to_string()));
    }
    let inner = nest.loop_at(&pb);
    let name = fresh_name(&nest.taken_names(), &format!("{a}_{b}"));
    let f = Affine::var(name.clone());
    let a_val = outer.var.lower.clone() + f.floor_div(nb);
    let b_val = inner.var.lower.substitute(a, &a_val) + f.modulo(nb);
    let map: HashMap<String, Affine> = [(a.to_string(), a_val), (b.to_string(), b_val)]
        .into_iter()
        .collect();
    let mut body = inner.body.clone();
    for node in &mut body {
        node.substitute(&map);
    }
    let var = IterVar::new(name, 0, na * nb, fused_role(outer.var.role, inner.var.role));
    let mut out = nest.clone();
    *out.node_mut(&pa) = wrap(vec![var], body);
    Ok(out)
}

fn split(nest: &LoopNest, name: &str, parts: &[i64]) -> Result<LoopNest, TransformError> {
    let (path, n) = loop_info(nest, name)?;
    if parts.is_empty() || parts.iter().any(|&p| p < 1) {
        return Err(TransformError::BadPartition(format!(
            "parts {parts:?} must be non-empty positive lengths"
        )));
    }
    let total: i64 = parts.iter().sum();
    if total != n {
        return Err(TransformError::BadPartition(format!(
            "parts {parts:?} sum to {total}, but `{name}` has trip count {n}"
        )));
    }
    if parts.len() == 1 {
        return Ok(nest.clone());
    }
    let original = nest.loop_at(&path).clone();
    let mut taken = nest.taken_names();
    let mut copies = Vec::with_capacity(parts.len());
    let mut offset = 0;
    for (k, &len) in parts.iter().enumerate() {
        let mut node = Node::Loop(original.clone());
        let mut names = Vec::new();
        node.loop_names(&mut names);
        let mut map = HashMap::new();
        for n in names {
            let fresh = fresh_name(&taken, &format!("{n}_{k}"));
            taken.insert(fresh.clone());
            map.insert(n, fresh);
        }
        node.rename(&map);
        let l = node.as_loop_mut().expect("loop");
        l.var.lower = original.var.lower.clone() + offset;
        l.var.upper = original.var.lower.clone() + (offset + len);
        if l.var.unroll > 1 && len % l.var.unroll != 0 {
            l.var.unroll = 1;
        }
        offset += len;
        copies.push(node);
    }
    let mut out = nest.clone();
    let (&idx, parent) = path.split_last().expect("non-empty path");
    out.body_mut(parent).splice(idx..=idx, copies);
    Ok(out)
}

fn bottleneck(nest: &LoopNest, name: &str, factor: i64) -> Result<LoopNest, TransformError> {
    let (path, n) = loop_info(nest, name)?;
    if nest.loop_at(&path).var.role == IterRole::Kernel {
        return Err(TransformError::KernelAxis(name.to_string()));
    }
    if factor < 1 {
        return Err(TransformError::InvalidArgument(format!("factor {factor} must be positive")));
    }
    if n % factor != 0 {
        return Err(TransformError::NonDivisible {
            iter: name.to_string(),
            trip: n,
            factor,
        });
    }
    let mut out = nest.clone();
    let var = &mut out.loop_at_mut(&path).var;
    var.upper = var.lower.clone() + n / factor;
    if var.unroll > 1 && (n / factor) % var.unroll != 0 {
        var.unroll = 1;
    }
    Ok(out)
}

fn statements_mut(node: &mut Node, f: &mut dyn FnMut(&mut Statement)) {
    match node {
        Node::Loop(l) => {
            for child in &mut l.body {
                statements_mut(child, f);
            }
        }
        Node::Stmt(s) => f(s),
    }
}

fn statement_paths(node: &Node, path: &mut NodePath, out: &mut Vec<NodePath>) {
    match node {
        Node::Loop(l) => {
            for (i, child) in l.body.iter().enumerate() {
                path.push(i);
                statement_paths(child, path, out);
                path.pop();
            }
        }
        Node::Stmt(_) => out.push(path.clone()),
    }
}

fn group(nest: &LoopNest, a: &str, b: &str, factor: i64) -> Result<LoopNest, TransformError> {
    if a == b {
        return Err(TransformError::InvalidArgument(format!(
            "group needs two distinct iterators, got `{a}` twice"
        )));
    }
    let (pa, na) = loop_info(nest, a)?;
    let (pb, nb) = loop_info(nest, b)?;
    if factor < 1 {
        return Err(TransformError::InvalidArgument(format!("factor {factor} must be positive")));
    }
    for (name, n) in [(a, na), (b, nb)] {
        if n % factor != 0 {
            return Err(TransformError::NonDivisible {
                iter: name.to_string(),
                trip: n,
                factor,
            });
        }
    }
    let root = pa[0];
    if pb[0] != root {
        return Err(TransformError::InvalidArgument(format!(
            "`{a}` and `{b}` belong to different sub-nests"
        )));
    }
    let mut stmts = Vec::new();
    statement_paths(&nest.body[root], &mut vec![root], &mut stmts);
    if let Some(p) = stmts.iter().find(|p| !p.starts_with(&pa) && !p.starts_with(&pb)) {
        let id = match nest.node(p) {
            Node::Stmt(s) => s.id.clone(),
            Node::Loop(_) => unreachable!("statement path"),
        };
        return Err(TransformError::InvalidArgument(format!(
            "statement {id} is enclosed by neither `{a}` nor `{b}`"
        )));
    }
    let outputs: HashSet<&str> = nest
        .tensors
        .iter()
        .filter(|t| t.role == TensorRole::Output)
        .map(|t| t.name.as_str())
        .collect();
    let weights: HashSet<String> = nest
        .tensors
        .iter()
        .filter(|t| t.role == TensorRole::Weight)
        .map(|t| t.name.clone())
        .collect();
    let mut indexes_output = HashSet::new();
    {
        let mut probe = nest.body[root].clone();
        statements_mut(&mut probe, &mut |s| {
            for acc in s.accesses.iter().filter(|x| outputs.contains(x.tensor.as_str())) {
                for idx in &acc.indices {
                    for x in [a, b] {
                        if idx.mentions(x) {
                            indexes_output.insert(x.to_string());
                        }
                    }
                }
            }
        });
    }
    let g_name = fresh_name(&nest.taken_names(), "g");
    let g = Affine::var(g_name.clone());
    let mut out = nest.clone();
    let mut weight_map = HashMap::new();
    for (name, path, n) in [(a, &pa, na), (b, &pb, nb)] {
        let slice = n / factor;
        let var = &mut out.loop_at_mut(path).var;
        let lo = var.lower.clone();
        var.lower = lo.clone() + g.clone() * slice;
        var.upper = lo + g.clone() * slice + slice;
        if var.unroll > 1 && slice % var.unroll != 0 {
            var.unroll = 1;
        }
        if !indexes_output.contains(name) {
            weight_map.insert(name.to_string(), Affine::var(name) - g.clone() * slice);
        }
    }
    let mut sub = out.body[root].clone();
    if !weight_map.is_empty() {
        statements_mut(&mut sub, &mut |s| {
            for acc in s.accesses.iter_mut().filter(|x| weights.contains(&x.tensor)) {
                for idx in &mut acc.indices {
                    *idx = idx.substitute_all(&weight_map);
                }
            }
        });
    }
    out.body[root] = wrap(vec![IterVar::new(g_name, 0, factor, IterRole::Group)], vec![sub]);
    Ok(out)
}

/// Removes channel loops (output or input channel role) whose trip count is
/// one, substituting their single value into the body.
pub fn simplify_unit_loops(nest: &LoopNest) -> LoopNest {
    fn go(nodes: &mut Vec<Node>) {
        let mut i = 0;
        while i < nodes.len() {
            let unit = match &nodes[i] {
                Node::Loop(l) => {
                    matches!(l.var.role, IterRole::OutChannel | IterRole::InChannel)
                        && (l.var.upper.clone() - l.var.lower.clone()).as_const() == Some(1)
                }
                Node::Stmt(_) => false,
            };
            if unit {
                let Node::Loop(l) = nodes.remove(i) else { unreachable!() };
                let map: HashMap<String, Affine> =
                    [(l.var.name.clone(), l.var.lower.clone())].into_iter().collect();
                let mut body = l.body;
                for node in &mut body {
                    node.substitute(&map);
                }
                nodes.splice(i..i, body);
                continue;
            }
            if let Node::Loop(l) = &mut nodes[i] {
                go(&mut l.body);
            }
            i += 1;
        }
    }
    let mut out = nest.clone();
    go(&mut out.body);
    out.simplify();
    out
}

fn depthwise(nest: &LoopNest) -> Result<LoopNest, TransformError> {
    let (_, nco) = loop_info(nest, "co")?;
    let (_, nci) = loop_info(nest, "ci")?;
    if nco != nci {
        return Err(TransformError::ChannelMismatch { co: nco, ci: nci });
    }
    if nco == 1 {
        return Ok(nest.clone());
    }
    let grouped = group(nest, "co", "ci", nco)?;
    Ok(simplify_unit_loops(&grouped))
}

/// Tracks the convolution a nest realizes through a transformation, when
/// the result is still expressible as a [`ConvSpec`].
fn updated_provenance(before: &LoopNest, t: &Transform) -> Option<ConvSpec> {
    let spec = before.provenance.clone()?;
    let trip = |n: &str| trip_count(before, n);
    let dense_channels = spec.channel_splits.is_empty();
    match t {
        Transform::Split { iter, parts } if iter == "co" && parts.len() > 1 => {
            let plain = dense_channels && spec.groups == 1 && spec.bottleneck_out == 1;
            if plain && trip("co") == Some(spec.co as i64) {
                let mut s = spec;
                let mut start = 0;
                for &len in parts {
                    s.channel_splits.push(crate::conv::ChannelSplit {
                        start,
                        end: start + len as usize,
                        groups: 1,
                    });
                    start += len as usize;
                }
                Some(s)
            } else {
                Some(spec)
            }
        }
        _ if t.class() == TransformClass::Semantic => Some(spec),
        Transform::Bottleneck { iter, factor } => {
            let b = *factor as usize;
            let mut s = spec;
            match iter.as_str() {
                "co" if dense_channels
                    && s.groups == 1
                    && trip("co") == Some(s.out_channels() as i64) =>
                {
                    s.bottleneck_out *= b;
                }
                "h" if trip("h") == Some(s.out_h() as i64) => s.bottleneck_h *= b,
                "w" if trip("w") == Some(s.out_w() as i64) => s.bottleneck_w *= b,
                _ => return None,
            }
            (s.validate().is_ok()).then_some(s)
        }
        Transform::Group { a, b, factor } => {
            let g = *factor as usize;
            let mut s = spec;
            if a == "co" && b == "ci" && dense_channels {
                let ok = trip("co") == Some((s.out_channels() / s.groups) as i64)
                    && trip("ci") == Some((s.ci / s.groups) as i64);
                if !ok {
                    return None;
                }
                s.groups *= g;
            } else {
                let k: usize = a.strip_prefix("co_")?.parse().ok()?;
                if b != &format!("ci_{k}") || k >= s.channel_splits.len() {
                    return None;
                }
                let part = &s.channel_splits[k];
                let ok = trip(a) == Some(((part.end - part.start) / part.groups) as i64)
                    && trip(b) == Some((s.ci / part.groups) as i64);
                if !ok {
                    return None;
                }
                s.channel_splits[k].groups *= g;
            }
            (s.validate().is_ok()).then_some(s)
        }
        Transform::Depthwise => {
            let n = trip("co")? as usize;
            let mut s = spec;
            if !dense_channels
                || trip("co") != Some((s.out_channels() / s.groups) as i64)
                || trip("ci") != Some((s.ci / s.groups) as i64)
            {
                return None;
            }
            s.groups *= n;
            (s.validate().is_ok()).then_some(s)
        }
        _ => None,
    }
}
