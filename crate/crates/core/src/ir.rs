//! Affine loop-nest representation of tensor convolutions.
//!
//! A [`LoopNest`] is a tree of counted loops with statements at the leaves.
//! Each statement instance is identified by its statement id plus its
//! *origin* coordinate: the value of the original domain iterators
//! (`co, h, w, ci, kh, kw`) expressed in terms of the current loop
//! iterators. Transformations rewrite the tree while keeping origin
//! expressions up to date, which is what lets the legality checker compare a
//! transformed schedule against the schedule it came from.
//!
//! The schedule of a statement instance is the classic `2d + 1` timestamp
//! `(b0, i0, b1, i1, ..., bd)`, where `bk` is the position of the enclosing
//! node among its siblings and `ik` the enclosing iterator value.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::ConvSpec;
use crate::expr::{Affine, CompiledAffine, Interval};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IrError {
    #[error("unbounded: `{0}` is not an enclosing iterator")]
    Unbounded(String),
    #[error("brute-force cap exceeded: {what} count {count} > cap {cap}")]
    CapExceeded { what: &'static str, count: u64, cap: u64 },
    #[error("duplicate iterator name `{0}`")]
    DuplicateIterator(String),
    #[error("unknown tensor `{0}`")]
    UnknownTensor(String),
    #[error("tensor `{tensor}` has rank {expected} but is accessed with {got} indices")]
    RankMismatch { tensor: String, expected: usize, got: usize },
    #[error("statement {id}: {reason}")]
    InvalidStatement { id: String, reason: String },
    #[error("index {index:?} out of range for tensor `{tensor}` of shape {shape:?}")]
    IndexOutOfRange { tensor: String, index: Vec<i64>, shape: Vec<usize> },
    #[error("iterator `{0}` has a non-positive step")]
    BadStep(String),
    #[error("tensor `{tensor}` is indexed below zero along dimension {dim}")]
    NegativeExtent { tensor: String, dim: usize },
}

/// Brute-force limits for enumeration-based analyses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Caps {
    pub instances: u64,
    pub pairs: u64,
}

impl Default for Caps {
    fn default() -> Self {
        Caps {
            instances: 1_000_000,
            pairs: 50_000_000,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum IterRole {
    OutChannel,
    InChannel,
    Spatial,
    Kernel,
    Group,
    Other,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IterVar {
    pub name: String,
    pub lower: Affine,
    /// Exclusive.
    pub upper: Affine,
    pub step: i64,
    /// Unroll factor annotation; 1 means not unrolled.
    pub unroll: i64,
    pub role: IterRole,
}

impl IterVar {
    pub fn new(name: impl Into<String>, lower: i64, upper: i64, role: IterRole) -> Self {
        IterVar {
            name: name.into(),
            lower: Affine::constant(lower),
            upper: Affine::constant(upper),
            step: 1,
            unroll: 1,
            role,
        }
    }

    pub fn const_bounds(&self) -> Option<(i64, i64)> {
        Some((self.lower.as_const()?, self.upper.as_const()?))
    }

    /// Trip count when both bounds are constant.
    pub fn trip_count(&self) -> Option<i64> {
        let (lo, hi) = self.const_bounds()?;
        Some(trip(lo, hi, self.step))
    }
}

fn trip(lo: i64, hi: i64, step: i64) -> i64 {
    if hi <= lo {
        0
    } else {
        (hi - lo + step - 1) / step
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AccessMode {
    Read,
    Write,
    ReadWrite,
}

impl AccessMode {
    pub fn writes(self) -> bool {
        !matches!(self, AccessMode::Read)
    }

    fn tag(self) -> &'static str {
        match self {
            AccessMode::Read => "r",
            AccessMode::Write => "w",
            AccessMode::ReadWrite => "rw",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AccessMap {
    pub tensor: String,
    pub indices: Vec<Affine>,
    pub mode: AccessMode,
}

impl AccessMap {
    pub fn new(tensor: impl Into<String>, indices: Vec<Affine>, mode: AccessMode) -> Self {
        AccessMap {
            tensor: tensor.into(),
            indices,
            mode,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StmtKind {
    /// Zero-initialises its single written cell.
    Init,
    /// `target += product(reads)`.
    Mac,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Statement {
    pub id: String,
    pub kind: StmtKind,
    pub accesses: Vec<AccessMap>,
    /// Original-domain coordinate of an instance as a function of the
    /// current enclosing iterators.
    pub origin: Vec<(String, Affine)>,
}

impl Statement {
    pub fn check(&self) -> Result<(), IrError> {
        let bad = |reason: &str| IrError::InvalidStatement {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        match self.kind {
            StmtKind::Init => {
                let writes = self.accesses.iter().filter(|a| a.mode == AccessMode::Write).count();
                if writes != 1 || self.accesses.len() != 1 {
                    return Err(bad("init statements write exactly one cell"));
                }
            }
            StmtKind::Mac => {
                let rmw = self
                    .accesses
                    .iter()
                    .filter(|a| a.mode == AccessMode::ReadWrite)
                    .count();
                let reads = self.accesses.iter().filter(|a| a.mode == AccessMode::Read).count();
                if rmw != 1 || reads < 2 || rmw + reads != self.accesses.len() {
                    return Err(bad(
                        "multiply-accumulate statements need one read-modify-write access and at least two reads",
                    ));
                }
            }
        }
        Ok(())
    }

    fn substitute(&mut self, map: &HashMap<String, Affine>) {
        for access in &mut self.accesses {
            for idx in &mut access.indices {
                *idx = idx.substitute_all(map);
            }
        }
        for (_, e) in &mut self.origin {
            *e = e.substitute_all(map);
        }
    }

    fn simplify(&mut self, ranges: &HashMap<String, Interval>) {
        for access in &mut self.accesses {
            for idx in &mut access.indices {
                *idx = idx.simplify(ranges);
            }
        }
        for (_, e) in &mut self.origin {
            *e = e.simplify(ranges);
        }
    }

    /// The read-modify-write (or plain write) target access.
    pub fn target(&self) -> &AccessMap {
        self.accesses
            .iter()
            .find(|a| a.mode.writes())
            .expect("checked statement has a write")
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Loop {
    pub var: IterVar,
    pub body: Vec<Node>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Node {
    Loop(Loop),
    Stmt(Statement),
}

impl Node {
    pub fn as_loop(&self) -> Option<&Loop> {
        match self {
            Node::Loop(l) => Some(l),
            Node::Stmt(_) => None,
        }
    }

    pub fn as_loop_mut(&mut self) -> Option<&mut Loop> {
        match self {
            Node::Loop(l) => Some(l),
            Node::Stmt(_) => None,
        }
    }

    /// Substitutes iterator names in every expression of the subtree. Loop
    /// names themselves are untouched.
    pub fn substitute(&mut self, map: &HashMap<String, Affine>) {
        match self {
            Node::Loop(l) => {
                l.var.lower = l.var.lower.substitute_all(map);
                l.var.upper = l.var.upper.substitute_all(map);
                for child in &mut l.body {
                    child.substitute(map);
                }
            }
            Node::Stmt(s) => s.substitute(map),
        }
    }

    /// Renames loops and every reference to them.
    pub fn rename(&mut self, names: &HashMap<String, String>) {
        let map: HashMap<String, Affine> = names
            .iter()
            .map(|(k, v)| (k.clone(), Affine::var(v.clone())))
            .collect();
        self.rename_inner(names, &map);
    }

    fn rename_inner(&mut self, names: &HashMap<String, String>, map: &HashMap<String, Affine>) {
        match self {
            Node::Loop(l) => {
                if let Some(n) = names.get(&l.var.name) {
                    l.var.name = n.clone();
                }
                l.var.lower = l.var.lower.substitute_all(map);
                l.var.upper = l.var.upper.substitute_all(map);
                for child in &mut l.body {
                    child.rename_inner(names, map);
                }
            }
            Node::Stmt(s) => s.substitute(map),
        }
    }

    pub fn loop_names(&self, out: &mut Vec<String>) {
        if let Node::Loop(l) = self {
            out.push(l.var.name.clone());
            for child in &l.body {
                child.loop_names(out);
            }
        }
    }

    pub fn statements<'a>(&'a self, out: &mut Vec<&'a Statement>) {
        match self {
            Node::Loop(l) => {
                for child in &l.body {
                    child.statements(out);
                }
            }
            Node::Stmt(s) => out.push(s),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TensorRole {
    Input,
    Weight,
    Output,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorDecl {
    pub name: String,
    pub shape: Vec<usize>,
    pub role: TensorRole,
    /// Out-of-range reads yield zero (convolution padding).
    pub zero_extend: bool,
}

impl TensorDecl {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, role: TensorRole) -> Self {
        TensorDecl {
            name: name.into(),
            shape,
            role,
            zero_extend: false,
        }
    }
}

/// Path of indices from the root body to a node.
pub type NodePath = Vec<usize>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LoopNest {
    pub tensors: Vec<TensorDecl>,
    pub body: Vec<Node>,
    /// The convolution this nest realizes, when it is expressible as one.
    pub provenance: Option<ConvSpec>,
}

/// A single statement instance.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub stmt: String,
    /// Values of the enclosing iterators, outermost first.
    pub coord: Vec<i64>,
    /// Original-domain coordinate.
    pub origin: Vec<i64>,
    pub timestamp: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct InstanceRef {
    pub stmt: String,
    pub coord: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Dependence {
    pub source: InstanceRef,
    pub sink: InstanceRef,
}

/// Dependences between statement instances, keyed by origin coordinates.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependenceSet {
    pub pairs: Vec<Dependence>,
}

impl DependenceSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

impl LoopNest {
    pub fn tensor(&self, name: &str) -> Option<&TensorDecl> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn tensor_index(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }

    pub fn output(&self) -> Option<&TensorDecl> {
        self.tensors.iter().find(|t| t.role == TensorRole::Output)
    }

    pub fn loop_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for n in &self.body {
            n.loop_names(&mut out);
        }
        out
    }

    pub fn statements(&self) -> Vec<&Statement> {
        let mut out = Vec::new();
        for n in &self.body {
            n.statements(&mut out);
        }
        out
    }

    pub fn find_loop(&self, name: &str) -> Option<NodePath> {
        fn go(nodes: &[Node], name: &str, path: &mut NodePath) -> bool {
            for (i, n) in nodes.iter().enumerate() {
                if let Node::Loop(l) = n {
                    path.push(i);
                    if l.var.name == name || go(&l.body, name, path) {
                        return true;
                    }
                    path.pop();
                }
            }
            false
        }
        let mut path = Vec::new();
        go(&self.body, name, &mut path).then_some(path)
    }

    pub fn node(&self, path: &[usize]) -> &Node {
        let mut nodes = &self.body;
        let (last, prefix) = path.split_last().expect("non-empty path");
        for &i in prefix {
            nodes = &nodes[i].as_loop().expect("path through loops").body;
        }
        &nodes[*last]
    }

    pub fn node_mut(&mut self, path: &[usize]) -> &mut Node {
        let (last, prefix) = path.split_last().expect("non-empty path");
        let nodes = self.body_mut(prefix);
        &mut nodes[*last]
    }

    /// The child list addressed by `path` (the root body for an empty path).
    pub fn body_mut(&mut self, path: &[usize]) -> &mut Vec<Node> {
        let mut nodes = &mut self.body;
        for &i in path {
            nodes = &mut nodes[i].as_loop_mut().expect("path through loops").body;
        }
        nodes
    }

    pub fn loop_at(&self, path: &[usize]) -> &Loop {
        self.node(path).as_loop().expect("path addresses a loop")
    }

    pub fn loop_at_mut(&mut self, path: &[usize]) -> &mut Loop {
        self.node_mut(path).as_loop_mut().expect("path addresses a loop")
    }

    /// Iterator variables enclosing the node at `path`, outermost first.
    pub fn enclosing(&self, path: &[usize]) -> Vec<&IterVar> {
        let mut out = Vec::new();
        let mut nodes = &self.body;
        for &i in &path[..path.len().saturating_sub(1)] {
            let l = nodes[i].as_loop().expect("path through loops");
            out.push(&l.var);
            nodes = &l.body;
        }
        out
    }

    /// Inclusive value ranges of every loop with resolvable bounds.
    pub fn iterator_ranges(&self) -> HashMap<String, Interval> {
        fn go(nodes: &[Node], ranges: &mut HashMap<String, Interval>) {
            for n in nodes {
                if let Node::Loop(l) = n {
                    let lo = l.var.lower.range(ranges);
                    let hi = l.var.upper.range(ranges);
                    if let (Some((lo, _)), Some((_, hi))) = (lo, hi) {
                        if hi > lo {
                            ranges.insert(l.var.name.clone(), (lo, hi - 1));
                        }
                    }
                    go(&l.body, ranges);
                }
            }
        }
        let mut ranges = HashMap::new();
        go(&self.body, &mut ranges);
        ranges
    }

    /// Checks structural invariants.
    pub fn validate(&self) -> Result<(), IrError> {
        fn go(
            nest: &LoopNest,
            nodes: &[Node],
            scope: &mut Vec<String>,
            seen: &mut HashSet<String>,
        ) -> Result<(), IrError> {
            for n in nodes {
                match n {
                    Node::Loop(l) => {
                        if !seen.insert(l.var.name.clone()) {
                            return Err(IrError::DuplicateIterator(l.var.name.clone()));
                        }
                        if l.var.step <= 0 {
                            return Err(IrError::BadStep(l.var.name.clone()));
                        }
                        for v in l.var.lower.vars().into_iter().chain(l.var.upper.vars()) {
                            if !scope.contains(&v) {
                                return Err(IrError::Unbounded(v));
                            }
                        }
                        scope.push(l.var.name.clone());
                        go(nest, &l.body, scope, seen)?;
                        scope.pop();
                    }
                    Node::Stmt(s) => {
                        s.check()?;
                        for a in &s.accesses {
                            let t = nest
                                .tensor(&a.tensor)
                                .ok_or_else(|| IrError::UnknownTensor(a.tensor.clone()))?;
                            if t.shape.len() != a.indices.len() {
                                return Err(IrError::RankMismatch {
                                    tensor: a.tensor.clone(),
                                    expected: t.shape.len(),
                                    got: a.indices.len(),
                                });
                            }
                            for idx in &a.indices {
                                for v in idx.vars() {
                                    if !scope.contains(&v) {
                                        return Err(IrError::InvalidStatement {
                                            id: s.id.clone(),
                                            reason: format!("references `{v}` outside its loops"),
                                        });
                                    }
                                }
                            }
                        }
                        for (_, e) in &s.origin {
                            for v in e.vars() {
                                if !scope.contains(&v) {
                                    return Err(IrError::InvalidStatement {
                                        id: s.id.clone(),
                                        reason: format!("origin references `{v}` outside its loops"),
                                    });
                                }
                            }
                        }
                    }
                }
            }
            Ok(())
        }
        go(self, &self.body, &mut Vec::new(), &mut HashSet::new())
    }

    /// Recomputes the shapes of weight and output tensors as the bounding box
    /// of every access to them. Input shapes are data and stay fixed.
    pub fn infer_shapes(&mut self) -> Result<(), IrError> {
        let mut extents: HashMap<String, Vec<(i64, i64)>> = HashMap::new();
        fn go<'a>(
            nodes: &'a [Node],
            ranges: &mut HashMap<String, Interval>,
            scope: &mut Vec<&'a IterVar>,
            extents: &mut HashMap<String, Vec<(i64, i64)>>,
        ) -> Result<(), IrError> {
            for n in nodes {
                match n {
                    Node::Loop(l) => {
                        let lo = l.var.lower.range(ranges);
                        let hi = l.var.upper.range(ranges);
                        let (Some((lo, _)), Some((_, hi))) = (lo, hi) else {
                            return Err(IrError::Unbounded(l.var.name.clone()));
                        };
                        if hi <= lo {
                            // Empty loop: its statements never execute.
                            continue;
                        }
                        ranges.insert(l.var.name.clone(), (lo, hi - 1));
                        scope.push(&l.var);
                        go(&l.body, ranges, scope, extents)?;
                        scope.pop();
                        ranges.remove(&l.var.name);
                    }
                    Node::Stmt(s) => {
                        for a in &s.accesses {
                            let entry = extents
                                .entry(a.tensor.clone())
                                .or_insert_with(|| vec![(i64::MAX, i64::MIN); a.indices.len()]);
                            for (d, idx) in a.indices.iter().enumerate() {
                                let (lo, hi) = scoped_range(idx, scope, ranges)
                                    .ok_or_else(|| IrError::Unbounded(idx.to_string()))?;
                                if let Some(e) = entry.get_mut(d) {
                                    e.0 = e.0.min(lo);
                                    e.1 = e.1.max(hi);
                                }
                            }
                        }
                    }
                }
            }
            Ok(())
        }
        go(&self.body, &mut HashMap::new(), &mut Vec::new(), &mut extents)?;
        for t in &mut self.tensors {
            if t.role == TensorRole::Input {
                continue;
            }
            if let Some(ext) = extents.get(&t.name) {
                let mut shape = Vec::with_capacity(ext.len());
                for (d, &(lo, hi)) in ext.iter().enumerate() {
                    if lo < 0 {
                        return Err(IrError::NegativeExtent {
                            tensor: t.name.clone(),
                            dim: d,
                        });
                    }
                    shape.push((hi + 1).max(1) as usize);
                }
                t.shape = shape;
            }
        }
        Ok(())
    }

    pub(crate) fn compile(&self) -> Result<CompiledNest, IrError> {
        CompiledNest::build(self)
    }

    /// Every statement instance in schedule order.
    pub fn enumerate_instances(&self) -> Result<Vec<Instance>, IrError> {
        let c = self.compile()?;
        let mut out = Vec::new();
        c.walk(&mut |sid, env, ts| {
            let s = &c.stmts[sid];
            out.push(Instance {
                stmt: s.id.clone(),
                coord: s.enclosing.iter().map(|&slot| env[slot]).collect(),
                origin: s.origin.iter().map(|e| e.eval(env)).collect(),
                timestamp: ts.to_vec(),
            });
            Ok::<(), IrError>(())
        })?;
        Ok(out)
    }

    /// Instance counts per statement position (tree order).
    pub fn instance_counts(&self) -> Result<Vec<(String, StmtKind, u64)>, IrError> {
        self.validate()?;
        let mut out = Vec::new();
        fn count_nodes(
            nodes: &[Node],
            env: &mut HashMap<String, i64>,
            mult: u64,
            out: &mut Vec<(String, StmtKind, u64)>,
            index: &mut usize,
            first: bool,
        ) {
            for n in nodes {
                match n {
                    Node::Stmt(s) => {
                        if first {
                            out.push((s.id.clone(), s.kind, 0));
                        }
                        out[*index].2 += mult;
                        *index += 1;
                    }
                    Node::Loop(l) => {
                        let lookup = |name: &str| env.get(name).copied();
                        let lo = l.var.lower.eval_with(&lookup).expect("validated bounds");
                        let hi = l.var.upper.eval_with(&lookup).expect("validated bounds");
                        let t = trip(lo, hi, l.var.step) as u64;
                        if t == 0 {
                            let start = *index;
                            count_nodes(&l.body, env, 0, out, index, first);
                            debug_assert!(*index >= start);
                            continue;
                        }
                        if !subtree_mentions(&l.body, &l.var.name) {
                            count_nodes(&l.body, env, mult * t, out, index, first);
                        } else {
                            let start = *index;
                            let mut v = lo;
                            let mut it = 0;
                            while v < hi {
                                *index = start;
                                env.insert(l.var.name.clone(), v);
                                count_nodes(&l.body, env, mult, out, index, first && it == 0);
                                v += l.var.step;
                                it += 1;
                            }
                            env.remove(&l.var.name);
                        }
                    }
                }
            }
        }
        let mut index = 0;
        count_nodes(&self.body, &mut HashMap::new(), 1, &mut out, &mut index, true);
        Ok(out)
    }

    /// Brute-force dependence computation: every ordered pair of instances
    /// touching the same memory cell where at least one access writes.
    pub fn compute_dependences(&self, caps: Caps) -> Result<DependenceSet, IrError> {
        let c = self.compile()?;
        let total: u64 = self.instance_counts()?.iter().map(|x| x.2).sum();
        if total > caps.instances {
            return Err(IrError::CapExceeded {
                what: "instance",
                count: total,
                cap: caps.instances,
            });
        }
        let cells = c.cell_accesses(self)?;
        let mut pairs = Vec::new();
        let mut npairs: u64 = 0;
        for accesses in cells.values() {
            for (j, b) in accesses.iter().enumerate() {
                for a in &accesses[..j] {
                    if !(a.mode.writes() || b.mode.writes()) || a.instance == b.instance {
                        continue;
                    }
                    npairs += 1;
                    if npairs > caps.pairs {
                        return Err(IrError::CapExceeded {
                            what: "dependence pair",
                            count: npairs,
                            cap: caps.pairs,
                        });
                    }
                    pairs.push((a.instance, b.instance));
                }
            }
        }
        // One pair per instance pair even if they collide on several cells.
        pairs.sort_unstable();
        pairs.dedup();
        let instances = c.instance_table()?;
        Ok(DependenceSet {
            pairs: pairs
                .into_iter()
                .map(|(a, b)| Dependence {
                    source: instances[a].clone(),
                    sink: instances[b].clone(),
                })
                .collect(),
        })
    }

    /// Names in use anywhere in the nest (loops and tensors).
    pub fn taken_names(&self) -> HashSet<String> {
        let mut out: HashSet<String> = self.loop_names().into_iter().collect();
        out.extend(self.tensors.iter().map(|t| t.name.clone()));
        out
    }

    /// Simplifies every expression using loop ranges.
    pub fn simplify(&mut self) {
        fn go(nodes: &mut [Node], ranges: &mut HashMap<String, Interval>) {
            for n in nodes {
                match n {
                    Node::Loop(l) => {
                        l.var.lower = l.var.lower.simplify(ranges);
                        l.var.upper = l.var.upper.simplify(ranges);
                        let lo = l.var.lower.range(ranges);
                        let hi = l.var.upper.range(ranges);
                        let known = match (lo, hi) {
                            (Some((lo, _)), Some((_, hi))) if hi > lo => {
                                ranges.insert(l.var.name.clone(), (lo, hi - 1));
                                true
                            }
                            _ => false,
                        };
                        go(&mut l.body, ranges);
                        if known {
                            ranges.remove(&l.var.name);
                        }
                    }
                    Node::Stmt(s) => s.simplify(ranges),
                }
            }
        }
        go(&mut self.body, &mut HashMap::new());
    }
}

pub(crate) fn subtree_mentions(nodes: &[Node], name: &str) -> bool {
    nodes.iter().any(|n| match n {
        Node::Loop(l) => {
            l.var.lower.mentions(name) || l.var.upper.mentions(name) || subtree_mentions(&l.body, name)
        }
        Node::Stmt(_) => false,
    })
}

/// Unused name derived from `base`: `base` itself, else `base_1`, `base_2`, ...
pub fn fresh_name(taken: &HashSet<String>, base: &str) -> String {
    if !taken.contains(base) {
        return base.to_string();
    }
    (1..)
        .map(|i| format!("{base}_{i}"))
        .find(|n| !taken.contains(n))
        .expect("unbounded search")
}

pub(crate) struct CAccess {
    pub tensor: usize,
    pub indices: Vec<CompiledAffine>,
    pub mode: AccessMode,
}

pub(crate) struct CStmt {
    pub id: String,
    pub kind: StmtKind,
    pub accesses: Vec<CAccess>,
    pub origin: Vec<CompiledAffine>,
    pub enclosing: Vec<usize>,
}

enum CNode {
    Loop {
        slot: usize,
        lower: CompiledAffine,
        upper: CompiledAffine,
        step: i64,
        body: Vec<CNode>,
    },
    Stmt(usize),
}

/// Callback receiving a statement index, its iterator environment and its
/// timestamp.
pub(crate) type InstanceVisitor<'a, E> = dyn FnMut(usize, &[i64], &[i64]) -> Result<(), E> + 'a;

/// Slot-resolved nest for fast brute-force traversal.
pub(crate) struct CompiledNest {
    pub n_slots: usize,
    nodes: Vec<CNode>,
    pub stmts: Vec<CStmt>,
    pub shapes: Vec<Vec<usize>>,
    pub zero_extend: Vec<bool>,
    pub names: Vec<String>,
}

/// One access of one instance to a resolved memory cell.
#[derive(Clone, Copy, Debug)]
pub(crate) struct CellAccess {
    pub instance: usize,
    pub mode: AccessMode,
}

impl CompiledNest {
    fn build(nest: &LoopNest) -> Result<Self, IrError> {
        nest.validate()?;
        let mut out = CompiledNest {
            n_slots: 0,
            nodes: Vec::new(),
            stmts: Vec::new(),
            shapes: nest.tensors.iter().map(|t| t.shape.clone()).collect(),
            zero_extend: nest.tensors.iter().map(|t| t.zero_extend).collect(),
            names: nest.tensors.iter().map(|t| t.name.clone()).collect(),
        };
        let mut scope = HashMap::new();
        let mut enclosing = Vec::new();
        out.nodes = out.build_nodes(nest, &nest.body, &mut scope, &mut enclosing)?;
        Ok(out)
    }

    fn build_nodes(
        &mut self,
        nest: &LoopNest,
        nodes: &[Node],
        scope: &mut HashMap<String, usize>,
        enclosing: &mut Vec<usize>,
    ) -> Result<Vec<CNode>, IrError> {
        let mut out = Vec::with_capacity(nodes.len());
        for n in nodes {
            match n {
                Node::Loop(l) => {
                    let lower = l.var.lower.compile(scope).map_err(IrError::Unbounded)?;
                    let upper = l.var.upper.compile(scope).map_err(IrError::Unbounded)?;
                    let slot = self.n_slots;
                    self.n_slots += 1;
                    scope.insert(l.var.name.clone(), slot);
                    enclosing.push(slot);
                    let body = self.build_nodes(nest, &l.body, scope, enclosing)?;
                    enclosing.pop();
                    scope.remove(&l.var.name);
                    out.push(CNode::Loop {
                        slot,
                        lower,
                        upper,
                        step: l.var.step,
                        body,
                    });
                }
                Node::Stmt(s) => {
                    let mut accesses = Vec::with_capacity(s.accesses.len());
                    for a in &s.accesses {
                        let tensor = nest
                            .tensor_index(&a.tensor)
                            .ok_or_else(|| IrError::UnknownTensor(a.tensor.clone()))?;
                        let indices = a
                            .indices
                            .iter()
                            .map(|e| e.compile(scope).map_err(IrError::Unbounded))
                            .collect::<Result<_, _>>()?;
                        accesses.push(CAccess {
                            tensor,
                            indices,
                            mode: a.mode,
                        });
                    }
                    let origin = s
                        .origin
                        .iter()
                        .map(|(_, e)| e.compile(scope).map_err(IrError::Unbounded))
                        .collect::<Result<_, _>>()?;
                    self.stmts.push(CStmt {
                        id: s.id.clone(),
                        kind: s.kind,
                        accesses,
                        origin,
                        enclosing: enclosing.clone(),
                    });
                    out.push(CNode::Stmt(self.stmts.len() - 1));
                }
            }
        }
        Ok(out)
    }

    /// Visits every instance in schedule order with its iterator environment
    /// and `2d + 1` timestamp.
    pub fn walk<E>(
        &self,
        f: &mut InstanceVisitor<'_, E>,
    ) -> Result<(), E> {
        let mut env = vec![0i64; self.n_slots];
        let mut ts = Vec::with_capacity(2 * self.n_slots + 1);
        Self::walk_nodes(&self.nodes, &mut env, &mut ts, f)
    }

    fn walk_nodes<E>(
        nodes: &[CNode],
        env: &mut [i64],
        ts: &mut Vec<i64>,
        f: &mut InstanceVisitor<'_, E>,
    ) -> Result<(), E> {
        for (beta, n) in nodes.iter().enumerate() {
            ts.push(beta as i64);
            match n {
                CNode::Stmt(sid) => f(*sid, env, ts)?,
                CNode::Loop {
                    slot,
                    lower,
                    upper,
                    step,
                    body,
                } => {
                    let lo = lower.eval(env);
                    let hi = upper.eval(env);
                    let mut v = lo;
                    while v < hi {
                        env[*slot] = v;
                        ts.push(v);
                        Self::walk_nodes(body, env, ts, f)?;
                        ts.pop();
                        v += step;
                    }
                }
            }
            ts.pop();
        }
        Ok(())
    }

    /// Resolves an access to a flat cell index. `Ok(None)` for a
    /// zero-extended read outside the tensor.
    #[inline]
    pub fn resolve(&self, access: &CAccess, env: &[i64]) -> Result<Option<usize>, IrError> {
        let shape = &self.shapes[access.tensor];
        let mut flat = 0usize;
        let mut oob = false;
        for (d, idx) in access.indices.iter().enumerate() {
            let i = idx.eval(env);
            if i < 0 || i as usize >= shape[d] {
                oob = true;
            }
            flat = flat.wrapping_mul(shape[d]).wrapping_add(i as usize);
        }
        if !oob {
            return Ok(Some(flat));
        }
        if self.zero_extend[access.tensor] && access.mode == AccessMode::Read {
            return Ok(None);
        }
        Err(IrError::IndexOutOfRange {
            tensor: self.names[access.tensor].clone(),
            index: access.indices.iter().map(|e| e.eval(env)).collect(),
            shape: shape.clone(),
        })
    }

    /// Groups accesses by memory cell, restricted to tensors that are written
    /// somewhere. Accesses within a cell are in schedule order.
    pub fn cell_accesses(
        &self,
        _nest: &LoopNest,
    ) -> Result<HashMap<(usize, usize), Vec<CellAccess>>, IrError> {
        let written: BTreeSet<usize> = self
            .stmts
            .iter()
            .flat_map(|s| s.accesses.iter().filter(|a| a.mode.writes()).map(|a| a.tensor))
            .collect();
        let mut cells: HashMap<(usize, usize), Vec<CellAccess>> = HashMap::new();
        let mut instance = 0usize;
        self.walk(&mut |sid, env, _| {
            for a in &self.stmts[sid].accesses {
                if !written.contains(&a.tensor) {
                    continue;
                }
                if let Some(flat) = self.resolve(a, env)? {
                    cells.entry((a.tensor, flat)).or_default().push(CellAccess {
                        instance,
                        mode: a.mode,
                    });
                }
            }
            instance += 1;
            Ok(())
        })?;
        Ok(cells)
    }

    pub fn instance_table(&self) -> Result<Vec<InstanceRef>, IrError> {
        let mut out = Vec::new();
        self.walk(&mut |sid, env, _| {
            let s = &self.stmts[sid];
            out.push(InstanceRef {
                stmt: s.id.clone(),
                coord: s.origin.iter().map(|e| e.eval(env)).collect(),
            });
            Ok::<(), IrError>(())
        })?;
        Ok(out)
    }
}

impl fmt::Display for LoopNest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tensors {
            write!(f, "tensor {}", t.name)?;
            for d in &t.shape {
                write!(f, "[{d}]")?;
            }
            let role = match t.role {
                TensorRole::Input => "input",
                TensorRole::Weight => "weight",
                TensorRole::Output => "output",
            };
            write!(f, " {role}")?;
            if t.zero_extend {
                write!(f, " zero-extended")?;
            }
            writeln!(f)?;
        }
        fn go(f: &mut fmt::Formatter<'_>, nodes: &[Node], depth: usize) -> fmt::Result {
            for n in nodes {
                let pad = "  ".repeat(depth);
                match n {
                    Node::Loop(l) => {
                        let v = &l.var;
                        write!(f, "{pad}{} in [{}, {}) step {}", v.name, v.lower, v.upper, v.step)?;
                        if v.unroll > 1 {
                            write!(f, " unroll {}", v.unroll)?;
                        }
                        writeln!(f)?;
                        go(f, &l.body, depth + 1)?;
                    }
                    Node::Stmt(s) => {
                        let kind = match s.kind {
                            StmtKind::Init => "init",
                            StmtKind::Mac => "mac",
                        };
                        write!(f, "{pad}{} {kind}:", s.id)?;
                        for (i, a) in s.accesses.iter().enumerate() {
                            let sep = if i == 0 { " " } else { "; " };
                            write!(f, "{sep}{} {}", a.mode.tag(), a.tensor)?;
                            for idx in &a.indices {
                                write!(f, "[{idx}]")?;
                            }
                        }
                        writeln!(f)?;
                    }
                }
            }
            Ok(())
        }
        go(f, &self.body, 0)
    }
}

/// Range of `e` inside the loops `scope` (outermost first). Constant-trip
/// iterators are rewritten as `lower + step * t` with `t` in `[0, trip)`,
/// innermost first, so that bound expressions shared by a loop and an index
/// cancel before interval arithmetic.
fn scoped_range(e: &Affine, scope: &[&IterVar], ranges: &HashMap<String, Interval>) -> Option<Interval> {
    let mut e = e.clone();
    let mut local = ranges.clone();
    for (k, var) in scope.iter().enumerate().rev() {
        if !e.mentions(&var.name) {
            continue;
        }
        let Some(extent) = (var.upper.clone() - var.lower.clone()).as_const() else {
            continue;
        };
        let trip = (extent + var.step - 1) / var.step;
        if trip <= 0 {
            continue;
        }
        let t = format!("#{k}");
        local.insert(t.clone(), (0, trip - 1));
        let map: HashMap<String, Affine> =
            [(var.name.clone(), var.lower.clone() + Affine::var(t) * var.step)].into_iter().collect();
        e = e.substitute_all(&map);
    }
    e.range(&local)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::{conv_nest, ConvSpec};

    fn algorithm1(co: usize, h: usize, w: usize, ci: usize) -> LoopNest {
        conv_nest(&ConvSpec::new(ci, co, h, w, 1, 1)).unwrap()
    }

    #[test]
    fn single_point_nest_has_one_instance_per_statement() {
        let nest = algorithm1(1, 1, 1, 1);
        let inst = nest.enumerate_instances().unwrap();
        let got: Vec<(String, Vec<i64>)> =
            inst.iter().map(|i| (i.stmt.clone(), i.coord.clone())).collect();
        assert_eq!(
            got,
            vec![("S1".to_string(), vec![0, 0, 0]), ("S2".to_string(), vec![0, 0, 0, 0])]
        );
    }

    #[test]
    fn algorithm1_all_twos() {
        let nest = algorithm1(2, 2, 2, 2);
        let inst = nest.enumerate_instances().unwrap();
        assert_eq!(inst.iter().filter(|i| i.stmt == "S1").count(), 8);
        assert_eq!(inst.iter().filter(|i| i.stmt == "S2").count(), 16);
        // schedule order means strictly increasing timestamps
        for pair in inst.windows(2) {
            assert!(pair[0].timestamp < pair[1].timestamp);
        }
    }

    #[test]
    fn grouped_nest_instance_count() {
        let spec = ConvSpec::new(4, 4, 1, 1, 1, 1).with_groups(2);
        let nest = conv_nest(&spec).unwrap();
        let inst = nest.enumerate_instances().unwrap();
        assert_eq!(inst.iter().filter(|i| i.stmt == "S2").count(), 8);
    }

    #[test]
    fn counts_match_enumeration() {
        let spec = ConvSpec::new(2, 4, 3, 3, 3, 3).with_pad(1);
        let nest = conv_nest(&spec).unwrap();
        let counts = nest.instance_counts().unwrap();
        let inst = nest.enumerate_instances().unwrap();
        for (id, _, n) in counts {
            assert_eq!(inst.iter().filter(|i| i.stmt == id).count() as u64, n);
        }
    }

    #[test]
    fn accumulation_chain_dependences() {
        // One output cell, ci of length 3.
        let nest = algorithm1(1, 1, 1, 3);
        let deps = nest.compute_dependences(Caps::default()).unwrap();
        let s2s2 = deps.pairs.iter().filter(|d| d.source.stmt == "S2" && d.sink.stmt == "S2").count();
        let s1s2 = deps.pairs.iter().filter(|d| d.source.stmt == "S1" && d.sink.stmt == "S2").count();
        assert_eq!(s2s2, 3);
        assert_eq!(s1s2, 3);
        assert_eq!(deps.len(), 6);
    }

    #[test]
    fn dependences_are_oriented_and_follow_schedule() {
        let spec = ConvSpec::new(2, 2, 2, 2, 2, 2);
        let nest = conv_nest(&spec).unwrap();
        let deps = nest.compute_dependences(Caps::default()).unwrap();
        let inst = nest.enumerate_instances().unwrap();
        let ts: HashMap<InstanceRef, Vec<i64>> = inst
            .iter()
            .map(|i| {
                (
                    InstanceRef {
                        stmt: i.stmt.clone(),
                        coord: i.origin.clone(),
                    },
                    i.timestamp.clone(),
                )
            })
            .collect();
        let set: HashSet<(InstanceRef, InstanceRef)> = deps
            .pairs
            .iter()
            .map(|d| (d.source.clone(), d.sink.clone()))
            .collect();
        for d in &deps.pairs {
            assert!(ts[&d.source] < ts[&d.sink]);
            assert!(!set.contains(&(d.sink.clone(), d.source.clone())));
        }
    }

    #[test]
    fn every_s1_feeds_matching_s2() {
        let nest = algorithm1(2, 2, 2, 3);
        let deps = nest.compute_dependences(Caps::default()).unwrap();
        for inst in nest.enumerate_instances().unwrap() {
            if inst.stmt != "S2" {
                continue;
            }
            let src = InstanceRef {
                stmt: "S1".into(),
                coord: inst.origin[..3].to_vec(),
            };
            assert!(deps
                .pairs
                .iter()
                .any(|d| d.source == src && d.sink.coord == inst.origin && d.sink.stmt == "S2"));
        }
    }

    #[test]
    fn cap_is_enforced() {
        let nest = algorithm1(4, 4, 4, 4);
        let err = nest
            .compute_dependences(Caps {
                instances: 10,
                pairs: 10,
            })
            .unwrap_err();
        assert!(matches!(err, IrError::CapExceeded { .. }));
    }

    #[test]
    fn unbound_symbol_in_bound_is_reported() {
        let mut nest = algorithm1(1, 1, 1, 1);
        nest.loop_at_mut(&[0]).var.upper = Affine::var("N");
        assert_eq!(nest.enumerate_instances().unwrap_err(), IrError::Unbounded("N".into()));
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut nest = algorithm1(1, 1, 1, 1);
        nest.loop_at_mut(&[0, 0]).var.name = "co".into();
        assert!(matches!(nest.validate(), Err(IrError::DuplicateIterator(_))));
    }

    #[test]
    fn fresh_names_skip_taken() {
        let taken: HashSet<String> = ["g", "g_1"].iter().map(|s| s.to_string()).collect();
        assert_eq!(fresh_name(&taken, "g"), "g_2");
        assert_eq!(fresh_name(&taken, "h"), "h");
    }
}
