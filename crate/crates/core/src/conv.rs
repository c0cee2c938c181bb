//! Convolution descriptors and their canonical loop nests.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::Affine;
use crate::ir::{
    AccessMap, AccessMode, IterRole, IterVar, Loop, LoopNest, Node, Statement, StmtKind,
    TensorDecl, TensorRole,
};
use crate::transforms::{self, Transform};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConvError {
    #[error("invalid convolution spec: {0}")]
    InvalidSpec(String),
}

/// A contiguous range of output channels convolved with its own group factor.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelSplit {
    pub start: usize,
    pub end: usize,
    #[serde(default = "one")]
    pub groups: usize,
}

fn one() -> usize {
    1
}

/// Semantic descriptor of a convolution variant.
///
/// The output-channel bottleneck is applied first, then grouping partitions
/// the remaining `co / bottleneck_out` channels. Spatial bottlenecks divide
/// the output extent.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvSpec {
    pub ci: usize,
    pub co: usize,
    pub h: usize,
    pub w: usize,
    #[serde(default = "one")]
    pub kh: usize,
    #[serde(default = "one")]
    pub kw: usize,
    #[serde(default = "one")]
    pub stride: usize,
    #[serde(default)]
    pub pad: usize,
    #[serde(default = "one")]
    pub groups: usize,
    #[serde(default = "one")]
    pub bottleneck_out: usize,
    #[serde(default = "one")]
    pub bottleneck_h: usize,
    #[serde(default = "one")]
    pub bottleneck_w: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub channel_splits: Vec<ChannelSplit>,
}

impl ConvSpec {
    pub fn new(ci: usize, co: usize, h: usize, w: usize, kh: usize, kw: usize) -> Self {
        ConvSpec {
            ci,
            co,
            h,
            w,
            kh,
            kw,
            stride: 1,
            pad: 0,
            groups: 1,
            bottleneck_out: 1,
            bottleneck_h: 1,
            bottleneck_w: 1,
            channel_splits: Vec::new(),
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_pad(mut self, pad: usize) -> Self {
        self.pad = pad;
        self
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_bottleneck(mut self, b: usize) -> Self {
        self.bottleneck_out = b;
        self
    }

    pub fn with_spatial_bottleneck(mut self, b: usize) -> Self {
        self.bottleneck_h = b;
        self.bottleneck_w = b;
        self
    }

    pub fn with_splits(mut self, splits: Vec<ChannelSplit>) -> Self {
        self.channel_splits = splits;
        self
    }

    /// Full (unbottlenecked) output height.
    pub fn full_out_h(&self) -> usize {
        (self.h + 2 * self.pad).saturating_sub(self.kh) / self.stride.max(1) + 1
    }

    pub fn full_out_w(&self) -> usize {
        (self.w + 2 * self.pad).saturating_sub(self.kw) / self.stride.max(1) + 1
    }

    pub fn out_h(&self) -> usize {
        self.full_out_h() / self.bottleneck_h.max(1)
    }

    pub fn out_w(&self) -> usize {
        self.full_out_w() / self.bottleneck_w.max(1)
    }

    pub fn out_channels(&self) -> usize {
        self.co / self.bottleneck_out.max(1)
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![self.ci, self.h, self.w]
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.out_channels(), self.out_h(), self.out_w()]
    }

    /// `(co / B, ci / G_min, kh, kw)`; with channel splits the second
    /// dimension is the widest per-split input slice.
    pub fn weight_shape(&self) -> Vec<usize> {
        let ci_slice = if self.channel_splits.is_empty() {
            self.ci / self.groups
        } else {
            self.channel_splits
                .iter()
                .map(|s| self.ci / s.groups)
                .max()
                .unwrap_or(self.ci)
        };
        vec![self.out_channels(), ci_slice, self.kh, self.kw]
    }

    /// Input channel range and group-local offset for output channel `co`.
    pub fn input_range(&self, co: usize) -> (usize, usize) {
        let (start, len, groups) = match self.channel_splits.iter().find(|s| s.start <= co && co < s.end) {
            Some(s) => (s.start, s.end - s.start, s.groups),
            None => (0, self.out_channels(), self.groups),
        };
        let g = (co - start) / (len / groups);
        let slice = self.ci / groups;
        (g * slice, slice)
    }

    pub fn macs(&self) -> u64 {
        let per_out: u64 = (0..self.out_channels())
            .map(|co| self.input_range(co).1 as u64)
            .sum();
        per_out * (self.out_h() * self.out_w() * self.kh * self.kw) as u64
    }

    pub fn is_depthwise(&self) -> bool {
        self.channel_splits.is_empty()
            && self.bottleneck_out == 1
            && self.groups == self.ci
            && self.groups == self.co
    }

    pub fn validate(&self) -> Result<(), ConvError> {
        let bad = |m: String| Err(ConvError::InvalidSpec(m));
        for (name, v) in [
            ("ci", self.ci),
            ("co", self.co),
            ("h", self.h),
            ("w", self.w),
            ("kh", self.kh),
            ("kw", self.kw),
            ("stride", self.stride),
            ("groups", self.groups),
            ("bottleneck_out", self.bottleneck_out),
            ("bottleneck_h", self.bottleneck_h),
            ("bottleneck_w", self.bottleneck_w),
        ] {
            if v == 0 {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.h + 2 * self.pad < self.kh || self.w + 2 * self.pad < self.kw {
            return bad("kernel larger than padded input".into());
        }
        if !self.co.is_multiple_of(self.bottleneck_out) {
            return bad(format!(
                "co={} not divisible by bottleneck_out={}",
                self.co, self.bottleneck_out
            ));
        }
        if !self.full_out_h().is_multiple_of(self.bottleneck_h) || !self.full_out_w().is_multiple_of(self.bottleneck_w) {
            return bad(format!(
                "output extent {}x{} not divisible by spatial bottleneck {}x{}",
                self.full_out_h(),
                self.full_out_w(),
                self.bottleneck_h,
                self.bottleneck_w
            ));
        }
        if !self.ci.is_multiple_of(self.groups) || !self.co.is_multiple_of(self.groups) {
            return bad(format!(
                "ci={} and co={} must both be divisible by groups={}",
                self.ci, self.co, self.groups
            ));
        }
        if !self.out_channels().is_multiple_of(self.groups) {
            return bad(format!(
                "bottlenecked output channels {} not divisible by groups={}",
                self.out_channels(),
                self.groups
            ));
        }
        if !self.channel_splits.is_empty() {
            if self.groups != 1 || self.bottleneck_out != 1 {
                return bad("channel_splits carry their own group factors; use groups = 1 and bottleneck_out = 1".into());
            }
            let mut next = 0;
            for s in &self.channel_splits {
                if s.start != next || s.end <= s.start {
                    return bad("channel_splits must be non-empty, contiguous and ordered".into());
                }
                let len = s.end - s.start;
                if s.groups == 0 || len % s.groups != 0 || !self.ci.is_multiple_of(s.groups) {
                    return bad(format!(
                        "split [{}, {}) with groups={} violates divisibility",
                        s.start, s.end, s.groups
                    ));
                }
                next = s.end;
            }
            if next != self.co {
                return bad(format!("channel_splits cover [0, {next}) instead of [0, {})", self.co));
            }
        }
        Ok(())
    }
}

fn tensors(spec: &ConvSpec) -> Vec<TensorDecl> {
    vec![
        TensorDecl {
            name: "I".into(),
            shape: spec.input_shape(),
            role: TensorRole::Input,
            zero_extend: spec.pad > 0,
        },
        TensorDecl {
            name: "W".into(),
            shape: spec.weight_shape(),
            role: TensorRole::Weight,
            zero_extend: false,
        },
        TensorDecl {
            name: "O".into(),
            shape: spec.output_shape(),
            role: TensorRole::Output,
            zero_extend: false,
        },
    ]
}

/// Loop variables of the ungrouped domain in canonical order. Unit kernel
/// loops are omitted, so a 1×1 convolution has the four-deep accumulation
/// domain `(co, h, w, ci)`.
fn domain(spec: &ConvSpec) -> Vec<IterVar> {
    let mut vars = vec![
        IterVar::new("co", 0, spec.out_channels() as i64, IterRole::OutChannel),
        IterVar::new("h", 0, spec.out_h() as i64, IterRole::Spatial),
        IterVar::new("w", 0, spec.out_w() as i64, IterRole::Spatial),
        IterVar::new("ci", 0, spec.ci as i64, IterRole::InChannel),
    ];
    if spec.kh > 1 {
        vars.push(IterVar::new("kh", 0, spec.kh as i64, IterRole::Kernel));
    }
    if spec.kw > 1 {
        vars.push(IterVar::new("kw", 0, spec.kw as i64, IterRole::Kernel));
    }
    vars
}

fn var_or_zero(vars: &[IterVar], name: &str) -> Affine {
    if vars.iter().any(|v| v.name == name) {
        Affine::var(name)
    } else {
        Affine::constant(0)
    }
}

fn mac_statement(spec: &ConvSpec, vars: &[IterVar]) -> Statement {
    let v = Affine::var;
    let s = spec.stride as i64;
    let p = spec.pad as i64;
    let kh = var_or_zero(vars, "kh");
    let kw = var_or_zero(vars, "kw");
    Statement {
        id: "S2".into(),
        kind: StmtKind::Mac,
        accesses: vec![
            AccessMap::new("O", vec![v("co"), v("h"), v("w")], AccessMode::ReadWrite),
            AccessMap::new(
                "I",
                vec![v("ci"), v("h") * s + kh.clone() - p, v("w") * s + kw.clone() - p],
                AccessMode::Read,
            ),
            AccessMap::new("W", vec![v("co"), v("ci"), kh, kw], AccessMode::Read),
        ],
        origin: vars.iter().map(|x| (x.name.clone(), v(&x.name))).collect(),
    }
}

fn init_statement() -> Statement {
    let v = Affine::var;
    Statement {
        id: "S1".into(),
        kind: StmtKind::Init,
        accesses: vec![AccessMap::new("O", vec![v("co"), v("h"), v("w")], AccessMode::Write)],
        origin: ["co", "h", "w"].iter().map(|n| (n.to_string(), v(n))).collect(),
    }
}

fn wrap(vars: Vec<IterVar>, innermost: Vec<Node>) -> Vec<Node> {
    vars.into_iter().rev().fold(innermost, |body, var| vec![Node::Loop(Loop { var, body })])
}

/// Canonical nest: `co, h, w` enclosing the init statement and the
/// accumulation loops `ci, kh, kw`. Grouping and channel splits are realized
/// by applying the corresponding transformations to the dense nest.
pub fn conv_nest(spec: &ConvSpec) -> Result<LoopNest, ConvError> {
    spec.validate()?;
    let vars = domain(spec);
    let mac = mac_statement(spec, &vars);
    let (outer, inner) = vars.split_at(3);
    let mut inner_body = wrap(inner.to_vec(), vec![Node::Stmt(mac)]);
    inner_body.insert(0, Node::Stmt(init_statement()));
    let body = wrap(outer.to_vec(), inner_body);
    let mut dense = spec.clone();
    dense.groups = 1;
    dense.channel_splits.clear();
    let mut nest = LoopNest {
        tensors: tensors(&dense),
        body,
        provenance: None,
    };
    let fail = |e: transforms::TransformError| ConvError::InvalidSpec(e.to_string());
    if !spec.channel_splits.is_empty() {
        let parts = spec.channel_splits.iter().map(|s| (s.end - s.start) as i64).collect();
        nest = Transform::Split {
            iter: "co".into(),
            parts,
        }
        .apply(&nest)
        .map_err(fail)?;
        if spec.channel_splits.len() > 1 {
            for (k, s) in spec.channel_splits.iter().enumerate() {
                if s.groups > 1 {
                    nest = Transform::Group {
                        a: format!("co_{k}"),
                        b: format!("ci_{k}"),
                        factor: s.groups as i64,
                    }
                    .apply(&nest)
                    .map_err(fail)?;
                }
            }
        } else if spec.channel_splits[0].groups > 1 {
            nest = Transform::Group {
                a: "co".into(),
                b: "ci".into(),
                factor: spec.channel_splits[0].groups as i64,
            }
            .apply(&nest)
            .map_err(fail)?;
        }
    } else if spec.groups > 1 {
        nest = Transform::Group {
            a: "co".into(),
            b: "ci".into(),
            factor: spec.groups as i64,
        }
        .apply(&nest)
        .map_err(fail)?;
    }
    nest.infer_shapes().map_err(|e| ConvError::InvalidSpec(e.to_string()))?;
    nest.provenance = Some(spec.clone());
    Ok(nest)
}

/// Accumulation-only nest (no init statement; the output starts zeroed) with
/// the loops in a caller-chosen order. Only dense convolutions are supported.
pub fn accumulate_nest(spec: &ConvSpec, order: &[&str]) -> Result<LoopNest, ConvError> {
    spec.validate()?;
    if spec.groups != 1 || !spec.channel_splits.is_empty() {
        return Err(ConvError::InvalidSpec(
            "accumulation nests are built for dense convolutions only".into(),
        ));
    }
    let vars = domain(spec);
    let mut names: Vec<&str> = vars.iter().map(|v| v.name.as_str()).collect();
    let mut wanted: Vec<&str> = order.to_vec();
    names.sort_unstable();
    wanted.sort_unstable();
    if names != wanted {
        return Err(ConvError::InvalidSpec(format!(
            "loop order {order:?} is not a permutation of {names:?}"
        )));
    }
    let mac = mac_statement(spec, &vars);
    let ordered: Vec<IterVar> = order
        .iter()
        .map(|n| vars.iter().find(|v| v.name == *n).cloned().expect("checked"))
        .collect();
    Ok(LoopNest {
        tensors: tensors(spec),
        body: wrap(ordered, vec![Node::Stmt(mac)]),
        provenance: Some(spec.clone()),
    })
}
