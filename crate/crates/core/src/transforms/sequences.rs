//! Named transformation compositions.

use serde::{Deserialize, Serialize};

use super::{loop_info, Transform, TransformError, TransformSequence};
use crate::ir::LoopNest;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialAxis {
    H,
    W,
}

/// Spatial grouping: split one spatial axis, group the channels of the first
/// spatial part, and fold the group loop back into the output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq1Params {
    pub axis: SpatialAxis,
    pub parts: usize,
    pub groups: i64,
}

impl Default for Seq1Params {
    fn default() -> Self {
        Seq1Params {
            axis: SpatialAxis::W,
            parts: 2,
            groups: 2,
        }
    }
}

/// Unrolled output channels followed by channel grouping.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq2Params {
    pub unroll: i64,
    pub groups: i64,
}

impl Default for Seq2Params {
    fn default() -> Self {
        Seq2Params { unroll: 16, groups: 2 }
    }
}

/// Output channels split in two halves with different group factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seq3Params {
    pub first_groups: i64,
    pub second_groups: i64,
}

impl Default for Seq3Params {
    fn default() -> Self {
        Seq3Params {
            first_groups: 2,
            second_groups: 4,
        }
    }
}

fn equal_parts(nest: &LoopNest, name: &str, parts: usize) -> Result<Vec<i64>, TransformError> {
    let (_, n) = loop_info(nest, name)?;
    if parts < 2 || n % parts as i64 != 0 {
        return Err(TransformError::BadPartition(format!(
            "cannot split `{name}` of trip count {n} into {parts} equal parts"
        )));
    }
    Ok(vec![n / parts as i64; parts])
}

fn sx(a: &str, b: &str) -> Transform {
    Transform::interchange(a, b)
}

pub fn sequence1_steps(nest: &LoopNest, p: &Seq1Params) -> Result<TransformSequence, TransformError> {
    let steps = match p.axis {
        SpatialAxis::W => vec![
            Transform::Split {
                iter: "w".into(),
                parts: equal_parts(nest, "w", p.parts)?,
            },
            sx("co", "h"),
            Transform::Group {
                a: "co".into(),
                b: "ci_0".into(),
                factor: p.groups,
            },
            sx("h", "co"),
            Transform::Fuse {
                outer: "g".into(),
                inner: "co".into(),
            },
        ],
        SpatialAxis::H => vec![
            Transform::Split {
                iter: "h".into(),
                parts: equal_parts(nest, "h", p.parts)?,
            },
            sx("h_0", "w_0"),
            Transform::Group {
                a: "co".into(),
                b: "ci_0".into(),
                factor: p.groups,
            },
            sx("w_0", "h_0"),
            Transform::Fuse {
                outer: "g".into(),
                inner: "co".into(),
            },
        ],
    };
    Ok(TransformSequence::new(steps, "sequence1"))
}

pub fn sequence2_steps(_nest: &LoopNest, p: &Seq2Params) -> Result<TransformSequence, TransformError> {
    Ok(TransformSequence::new(
        vec![
            Transform::Unroll {
                iter: "co".into(),
                factor: p.unroll,
            },
            Transform::Group {
                a: "co".into(),
                b: "ci".into(),
                factor: p.groups,
            },
            sx("co", "h"),
        ],
        "sequence2",
    ))
}

pub fn sequence3_steps(nest: &LoopNest, p: &Seq3Params) -> Result<TransformSequence, TransformError> {
    Ok(TransformSequence::new(
        vec![
            Transform::Split {
                iter: "co".into(),
                parts: equal_parts(nest, "co", 2)?,
            },
            Transform::Group {
                a: "co_0".into(),
                b: "ci_0".into(),
                factor: p.first_groups,
            },
            sx("h_0", "w_0"),
            Transform::Group {
                a: "co_1".into(),
                b: "ci_1".into(),
                factor: p.second_groups,
            },
        ],
        "sequence3",
    ))
}

pub fn sequence1(nest: &LoopNest, p: &Seq1Params) -> Result<LoopNest, TransformError> {
    sequence1_steps(nest, p)?.apply(nest)
}

pub fn sequence2(nest: &LoopNest, p: &Seq2Params) -> Result<LoopNest, TransformError> {
    sequence2_steps(nest, p)?.apply(nest)
}

pub fn sequence3(nest: &LoopNest, p: &Seq3Params) -> Result<LoopNest, TransformError> {
    sequence3_steps(nest, p)?.apply(nest)
}

/// Spatial bottleneck by `b` on both output axes, built from interchanges and
/// channel-style bottlenecks: move `h, w` outermost, shrink `h`, rotate `w`
/// outermost, shrink `w`, restore the canonical order.
pub fn spatial_bottleneck_steps(b: i64) -> TransformSequence {
    let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect::<Vec<_>>();
    TransformSequence::new(
        vec![
            Transform::Interchange(names(&["co", "w", "h"])),
            Transform::Bottleneck {
                iter: "h".into(),
                factor: b,
            },
            sx("h", "w"),
            Transform::Bottleneck {
                iter: "w".into(),
                factor: b,
            },
            sx("w", "co"),
        ],
        "spatial_bottleneck",
    )
}

pub fn spatial_bottleneck(nest: &LoopNest, b: i64) -> Result<LoopNest, TransformError> {
    spatial_bottleneck_steps(b).apply(nest)
}
