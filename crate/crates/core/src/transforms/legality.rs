//! Brute-force dependence-preservation check.
//!
//! Instances of the two nests are matched through their origin coordinates.
//! For every memory cell, the accesses made under the original schedule are
//! scanned in order; each access must execute, under the transformed
//! schedule, after every earlier access it depends on. Two read-modify-write
//! accesses of multiply-accumulate statements never depend on each other:
//! accumulation chains may be reordered.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ir::{AccessMode, Caps, IrError, LoopNest, StmtKind};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "verdict", content = "reason", rename_all = "snake_case")]
pub enum Verdict {
    Legal,
    Illegal(String),
    /// The nests do not execute the same instances, so dependence
    /// preservation is not the right question (neural transformations).
    NotApplicable(String),
}

impl Verdict {
    pub fn is_legal(&self) -> bool {
        matches!(self, Verdict::Legal)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::Legal => "legal",
            Verdict::Illegal(_) => "illegal",
            Verdict::NotApplicable(_) => "not-applicable",
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Legal => f.write_str("legal"),
            Verdict::Illegal(r) => write!(f, "illegal: {r}"),
            Verdict::NotApplicable(r) => write!(f, "not-applicable: {r}"),
        }
    }
}

const MAX_ORIGIN: usize = 8;
type Key = [i64; MAX_ORIGIN + 2];

fn describe(k: &Key, ids: &[String]) -> String {
    let n = k[1] as usize;
    let coords: Vec<String> = k[2..2 + n].iter().map(|v| v.to_string()).collect();
    format!("{}({})", ids[k[0] as usize], coords.join(","))
}

#[inline]
fn mix(h: u64, v: u64) -> u64 {
    (h ^ v).wrapping_mul(0x0100_0000_01b3).rotate_left(23)
}

/// Which dependences an access participates in.
#[derive(Clone, Copy, PartialEq, Eq)]
enum AccessClass {
    /// Read-modify-write of a multiply-accumulate statement.
    Accumulate,
    OtherWrite,
    Read,
}

fn total_instances(nest: &LoopNest) -> Result<u64, IrError> {
    Ok(nest.instance_counts()?.iter().map(|c| c.2).sum())
}

/// Origin length, base offset, per-coordinate minimum and extent.
type IdBox = (usize, usize, Vec<i64>, Vec<i64>);
/// Origin length, per-coordinate minimum and maximum.
type IdBounds = (usize, Vec<i64>, Vec<i64>);

/// Dense numbering of origin keys: one mixed-radix box per statement id,
/// bounded by the coordinates the original nest produces.
struct KeySpace {
    /// Per statement id; `None` for ids the original nest never executes.
    boxes: Vec<Option<IdBox>>,
    volume: usize,
}

impl KeySpace {
    fn new(keys: &[Key], n_ids: usize) -> Option<KeySpace> {
        let mut bounds: Vec<Option<IdBounds>> = vec![None; n_ids];
        for k in keys {
            let (id, len) = (k[0] as usize, k[1] as usize);
            let c = &k[2..2 + len];
            match &mut bounds[id] {
                None => bounds[id] = Some((len, c.to_vec(), c.to_vec())),
                Some((l, lo, hi)) => {
                    if *l != len {
                        return None;
                    }
                    for d in 0..len {
                        lo[d] = lo[d].min(c[d]);
                        hi[d] = hi[d].max(c[d]);
                    }
                }
            }
        }
        let mut volume = 0usize;
        let mut boxes = Vec::with_capacity(n_ids);
        for b in bounds {
            boxes.push(b.map(|(len, lo, hi)| {
                let ext: Vec<i64> = lo.iter().zip(&hi).map(|(a, b)| b - a + 1).collect();
                let base = volume;
                volume = volume.saturating_add(ext.iter().product::<i64>() as usize);
                (len, base, lo, ext)
            }));
        }
        Some(KeySpace { boxes, volume })
    }

    #[inline]
    fn index(&self, k: &Key) -> Option<usize> {
        let (len, base, lo, ext) = self.boxes.get(k[0] as usize)?.as_ref()?;
        if k[1] as usize != *len {
            return None;
        }
        let mut idx = 0i64;
        for d in 0..*len {
            let v = k[2 + d] - lo[d];
            if v < 0 || v >= ext[d] {
                return None;
            }
            idx = idx * ext[d] + v;
        }
        Some(base + idx as usize)
    }
}

const UNSET: u32 = u32::MAX;

/// Dependence-preservation verdict for `transformed` against `original`.
pub fn check_semantic_legality(
    original: &LoopNest,
    transformed: &LoopNest,
    caps: Caps,
) -> Result<Verdict, IrError> {
    let n_orig = total_instances(original)?;
    let n_new = total_instances(transformed)?;
    let largest = n_orig.max(n_new);
    if largest > caps.instances {
        return Err(IrError::CapExceeded {
            what: "instance",
            count: largest,
            cap: caps.instances,
        });
    }
    if n_orig != n_new {
        return Ok(Verdict::NotApplicable(format!(
            "instance counts differ ({n_orig} vs {n_new})"
        )));
    }
    let co = original.compile()?;
    let ct = transformed.compile()?;

    let mut ids: Vec<String> = Vec::new();
    let mut id_of = |name: &str| -> u32 {
        match ids.iter().position(|x| x == name) {
            Some(i) => i as u32,
            None => {
                ids.push(name.to_string());
                (ids.len() - 1) as u32
            }
        }
    };
    let orig_stmt_ids: Vec<u32> = co.stmts.iter().map(|s| id_of(&s.id)).collect();
    let new_stmt_ids: Vec<u32> = ct.stmts.iter().map(|s| id_of(&s.id)).collect();
    let tensor_of_new: Vec<Option<usize>> = ct
        .names
        .iter()
        .map(|n| co.names.iter().position(|m| m == n))
        .collect();
    if let Some(t) = tensor_of_new.iter().position(Option::is_none) {
        return Ok(Verdict::NotApplicable(format!(
            "tensor `{}` does not exist in the original nest",
            ct.names[t]
        )));
    }
    let too_long = |id: &str| IrError::InvalidStatement {
        id: id.to_string(),
        reason: "origin has too many coordinates".into(),
    };

    // Original schedule: keys, access fingerprints and per-cell accesses.
    let written: Vec<bool> = (0..co.names.len())
        .map(|t| {
            co.stmts
                .iter()
                .any(|s| s.accesses.iter().any(|a| a.tensor == t && a.mode.writes()))
        })
        .collect();
    let mut cell_base = vec![0usize; co.names.len()];
    let mut n_cells = 0usize;
    for t in 0..co.names.len() {
        cell_base[t] = n_cells;
        if written[t] {
            n_cells += co.shapes[t].iter().product::<usize>();
        }
    }
    let mut keys: Vec<Key> = Vec::with_capacity(n_orig as usize);
    let mut fps: Vec<u64> = Vec::with_capacity(n_orig as usize);
    let mut entries: Vec<(u32, u32, AccessClass)> = Vec::new();
    let mut ordinal = 0u32;
    co.walk(&mut |sid, env, _| {
        let s = &co.stmts[sid];
        let mut k = [0i64; MAX_ORIGIN + 2];
        if s.origin.len() > MAX_ORIGIN {
            return Err(too_long(&s.id));
        }
        k[0] = orig_stmt_ids[sid] as i64;
        k[1] = s.origin.len() as i64;
        for (d, e) in s.origin.iter().enumerate() {
            k[2 + d] = e.eval(env);
        }
        let mut fp = 0u64;
        for a in &s.accesses {
            fp = mix(fp, a.tensor as u64);
            for idx in &a.indices {
                fp = mix(fp, idx.eval(env) as u64);
            }
            if !written[a.tensor] {
                continue;
            }
            if let Some(flat) = co.resolve(a, env)? {
                let class = match (s.kind, a.mode) {
                    (StmtKind::Mac, AccessMode::ReadWrite) => AccessClass::Accumulate,
                    (_, AccessMode::Read) => AccessClass::Read,
                    _ => AccessClass::OtherWrite,
                };
                entries.push(((cell_base[a.tensor] + flat) as u32, ordinal, class));
            }
        }
        keys.push(k);
        fps.push(fp);
        ordinal += 1;
        Ok::<(), IrError>(())
    })?;

    let space = match KeySpace::new(&keys, ids.len()) {
        Some(s) if (s.volume as u64) <= 64 * n_orig + (1 << 20) => s,
        Some(s) => {
            return Err(IrError::CapExceeded {
                what: "origin box",
                count: s.volume as u64,
                cap: 64 * n_orig + (1 << 20),
            })
        }
        None => {
            return Ok(Verdict::NotApplicable(
                "a statement has origins of different lengths".into(),
            ))
        }
    };

    // Transformed schedule: position and fingerprint per dense key.
    let mut pos_of = vec![UNSET; space.volume];
    let mut fp_of = vec![0u64; space.volume];
    let mut position = 0u32;
    let mut problem: Option<Verdict> = None;
    ct.walk(&mut |sid, env, _| {
        let s = &ct.stmts[sid];
        let mut k = [0i64; MAX_ORIGIN + 2];
        if s.origin.len() > MAX_ORIGIN {
            return Err(too_long(&s.id));
        }
        k[0] = new_stmt_ids[sid] as i64;
        k[1] = s.origin.len() as i64;
        for (d, e) in s.origin.iter().enumerate() {
            k[2 + d] = e.eval(env);
        }
        let Some(idx) = space.index(&k) else {
            problem.get_or_insert(Verdict::NotApplicable(format!(
                "{} is not executed by the original nest",
                describe(&k, &ids)
            )));
            position += 1;
            return Ok(());
        };
        let mut fp = 0u64;
        for a in &s.accesses {
            fp = mix(fp, tensor_of_new[a.tensor].expect("checked") as u64);
            for e in &a.indices {
                fp = mix(fp, e.eval(env) as u64);
            }
        }
        if pos_of[idx] != UNSET {
            problem.get_or_insert(Verdict::NotApplicable(format!(
                "{} executes more than once",
                describe(&k, &ids)
            )));
        }
        pos_of[idx] = position;
        fp_of[idx] = fp;
        position += 1;
        Ok::<(), IrError>(())
    })?;
    if let Some(v) = problem {
        return Ok(v);
    }

    let mut new_pos: Vec<u32> = Vec::with_capacity(keys.len());
    for (k, fp) in keys.iter().zip(&fps) {
        let idx = space.index(k).expect("original keys lie in their box");
        if pos_of[idx] == UNSET {
            return Ok(Verdict::NotApplicable(format!(
                "{} is not executed by the transformed nest",
                describe(k, &ids)
            )));
        }
        if fp_of[idx] != *fp {
            return Ok(Verdict::Illegal(format!(
                "{} accesses different memory after the rewrite",
                describe(k, &ids)
            )));
        }
        new_pos.push(pos_of[idx]);
    }

    // Group accesses by cell, keeping original order within each cell.
    let mut start = vec![0u32; n_cells + 1];
    for &(c, _, _) in &entries {
        start[c as usize + 1] += 1;
    }
    for i in 0..n_cells {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut sorted = vec![(0u32, AccessClass::Read); entries.len()];
    for &(c, inst, class) in &entries {
        sorted[fill[c as usize] as usize] = (inst, class);
        fill[c as usize] += 1;
    }

    for cell in 0..n_cells {
        let list = &sorted[start[cell] as usize..start[cell + 1] as usize];
        // Latest new-schedule position (and its instance) among earlier
        // accesses: non-accumulating accesses, writes, and all accesses.
        let mut max_non_acc: Option<(u32, u32)> = None;
        let mut max_write: Option<(u32, u32)> = None;
        let mut max_all: Option<(u32, u32)> = None;
        for &(inst, class) in list {
            let pos = new_pos[inst as usize];
            let bound = match class {
                AccessClass::Accumulate => max_non_acc,
                AccessClass::OtherWrite => max_all,
                AccessClass::Read => max_write,
            };
            if let Some((p, src)) = bound {
                if src != inst && p > pos {
                    return Ok(Verdict::Illegal(format!(
                        "{} would execute before its dependence source {}",
                        describe(&keys[inst as usize], &ids),
                        describe(&keys[src as usize], &ids)
                    )));
                }
            }
            let upd = |m: &mut Option<(u32, u32)>| {
                if m.is_none_or(|(p, _)| pos > p) {
                    *m = Some((pos, inst));
                }
            };
            upd(&mut max_all);
            if class != AccessClass::Accumulate {
                upd(&mut max_non_acc);
            }
            if class != AccessClass::Read {
                upd(&mut max_write);
            }
        }
    }
    Ok(Verdict::Legal)
}
