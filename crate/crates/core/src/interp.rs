//! Reference interpreter, direct convolution oracle and MAC cost model.

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::conv::ConvSpec;
use crate::ir::{AccessMode, IrError, LoopNest, StmtKind, TensorRole};

#[derive(Debug, Error)]
pub enum InterpError {
    #[error("tensor `{0}` is not bound")]
    UnboundTensor(String),
    #[error("tensor `{tensor}` is declared with rank {expected} but bound with rank {got}")]
    RankMismatch { tensor: String, expected: usize, got: usize },
    #[error("index {index:?} out of range for tensor `{tensor}` of shape {shape:?}")]
    IndexOutOfRange { tensor: String, index: Vec<i64>, shape: Vec<usize> },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("element mode mismatch: {0}")]
    ModeMismatch(String),
    #[error("unsupported nest: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Ir(IrError),
    #[error("tensor file {path}: {reason}")]
    Format { path: String, reason: String },
    #[error("tensor file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl From<IrError> for InterpError {
    fn from(e: IrError) -> Self {
        match e {
            IrError::IndexOutOfRange { tensor, index, shape } => {
                InterpError::IndexOutOfRange { tensor, index, shape }
            }
            other => InterpError::Ir(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ElementMode {
    /// Exact integer arithmetic (wrapping on overflow).
    Int64,
    Float64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    I64(Vec<i64>),
    F64(Vec<f64>),
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: TensorData,
}

fn volume(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn zeros(shape: &[usize], mode: ElementMode) -> Self {
        let n = volume(shape);
        let data = match mode {
            ElementMode::Int64 => TensorData::I64(vec![0; n]),
            ElementMode::Float64 => TensorData::F64(vec![0.0; n]),
        };
        Tensor {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn from_i64(shape: &[usize], data: Vec<i64>) -> Result<Self, InterpError> {
        Self::check_len(shape, data.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: TensorData::I64(data),
        })
    }

    pub fn from_f64(shape: &[usize], data: Vec<f64>) -> Result<Self, InterpError> {
        Self::check_len(shape, data.len())?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data: TensorData::F64(data),
        })
    }

    fn check_len(shape: &[usize], len: usize) -> Result<(), InterpError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(InterpError::ShapeMismatch(format!(
                "shape {shape:?} must have positive dimensions"
            )));
        }
        if volume(shape) != len {
            return Err(InterpError::ShapeMismatch(format!(
                "shape {shape:?} needs {} elements, got {len}",
                volume(shape)
            )));
        }
        Ok(())
    }

    /// Uniform integers in `[lo, hi]`.
    pub fn random_i64(shape: &[usize], lo: i64, hi: i64, rng: &mut impl Rng) -> Self {
        let data = (0..volume(shape)).map(|_| rng.random_range(lo..=hi)).collect();
        Tensor {
            shape: shape.to_vec(),
            data: TensorData::I64(data),
        }
    }

    /// Standard normal samples scaled by `std`.
    pub fn random_normal(shape: &[usize], std: f64, rng: &mut impl Rng) -> Self {
        let data = (0..volume(shape))
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Tensor {
            shape: shape.to_vec(),
            data: TensorData::F64(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        volume(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn mode(&self) -> ElementMode {
        match self.data {
            TensorData::I64(_) => ElementMode::Int64,
            TensorData::F64(_) => ElementMode::Float64,
        }
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn as_i64(&self) -> Option<&[i64]> {
        match &self.data {
            TensorData::I64(v) => Some(v),
            TensorData::F64(_) => None,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::F64(v) => Some(v),
            TensorData::I64(_) => None,
        }
    }

    pub fn as_f64_mut(&mut self) -> Option<&mut [f64]> {
        match &mut self.data {
            TensorData::F64(v) => Some(v),
            TensorData::I64(_) => None,
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F64(v) => v.clone(),
            TensorData::I64(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    /// Converts to the given mode. Float-to-integer conversion is refused.
    pub fn to_mode(&self, mode: ElementMode) -> Result<Tensor, InterpError> {
        match (&self.data, mode) {
            (TensorData::I64(_), ElementMode::Int64) | (TensorData::F64(_), ElementMode::Float64) => {
                Ok(self.clone())
            }
            (TensorData::I64(v), ElementMode::Float64) => Ok(Tensor {
                shape: self.shape.clone(),
                data: TensorData::F64(v.iter().map(|&x| x as f64).collect()),
            }),
            (TensorData::F64(_), ElementMode::Int64) => Err(InterpError::ModeMismatch(
                "a float tensor cannot be used in int64 mode".into(),
            )),
        }
    }

    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &d) in index.iter().zip(&self.shape) {
            if i >= d {
                return None;
            }
            flat = flat * d + i;
        }
        Some(flat)
    }

    /// Binary form: rank and dims as little-endian `u64`, a mode byte
    /// (0 = int64, 1 = float64), then little-endian 8-byte elements.
    pub fn write_binary(&self, w: &mut impl Write) -> std::io::Result<()> {
        w.write_all(&(self.shape.len() as u64).to_le_bytes())?;
        for &d in &self.shape {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        match &self.data {
            TensorData::I64(v) => {
                w.write_all(&[0])?;
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
            TensorData::F64(v) => {
                w.write_all(&[1])?;
                for x in v {
                    w.write_all(&x.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<Tensor, String> {
        let mut word = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<u64, String> {
            r.read_exact(&mut word).map_err(|e| e.to_string())?;
            Ok(u64::from_le_bytes(word))
        };
        let rank = next(r)?;
        if rank == 0 || rank > 16 {
            return Err(format!("unsupported rank {rank}"));
        }
        let mut shape = Vec::new();
        for _ in 0..rank {
            shape.push(next(r)? as usize);
        }
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag).map_err(|e| e.to_string())?;
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or("shape overflows")?;
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| e.to_string())?;
        if bytes.len() != n * 8 {
            return Err(format!("expected {} payload bytes, found {}", n * 8, bytes.len()));
        }
        let words = bytes.chunks_exact(8).map(|c| c.try_into().expect("8 bytes"));
        let t = match tag[0] {
            0 => Tensor::from_i64(&shape, words.map(i64::from_le_bytes).collect()),
            1 => Tensor::from_f64(&shape, words.map(f64::from_le_bytes).collect()),
            t => return Err(format!("unknown element mode tag {t}")),
        };
        t.map_err(|e| e.to_string())
    }

    /// Text form: a header line `i64|f64 d0 d1 ...` followed by the elements
    /// separated by whitespace.
    pub fn to_text(&self) -> String {
        let mode = match self.mode() {
            ElementMode::Int64 => "i64",
            ElementMode::Float64 => "f64",
        };
        let dims: Vec<String> = self.shape.iter().map(|d| d.to_string()).collect();
        let mut out = format!("{mode} {}\n", dims.join(" "));
        let row = *self.shape.last().expect("rank >= 1");
        let values: Vec<String> = match &self.data {
            TensorData::I64(v) => v.iter().map(|x| x.to_string()).collect(),
            TensorData::F64(v) => v.iter().map(|x| format!("{x:?}")).collect(),
        };
        for chunk in values.chunks(row) {
            out.push_str(&chunk.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Tensor, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'));
        let header = lines.next().ok_or("empty tensor text")?;
        let mut head = header.split_whitespace();
        let mode = head.next().ok_or("missing element mode")?;
        let shape = head
            .map(|d| d.parse::<usize>().map_err(|_| format!("bad dimension `{d}`")))
            .collect::<Result<Vec<_>, _>>()?;
        let values: Vec<&str> = lines.flat_map(|l| l.split_whitespace()).collect();
        let t = match mode {
            "i64" => Tensor::from_i64(
                &shape,
                values
                    .iter()
                    .map(|v| v.parse().map_err(|_| format!("bad integer `{v}`")))
                    .collect::<Result<_, _>>()?,
            ),
            "f64" => Tensor::from_f64(
                &shape,
                values
                    .iter()
                    .map(|v| v.parse().map_err(|_| format!("bad float `{v}`")))
                    .collect::<Result<_, _>>()?,
            ),
            other => return Err(format!("unknown element mode `{other}`")),
        };
        t.map_err(|e| e.to_string())
    }

    /// Loads a tensor; `.txt` files use the text form, anything else binary.
    pub fn load(path: &Path) -> Result<Tensor, InterpError> {
        let p = path.display().to_string();
        let bytes = std::fs::read(path).map_err(|source| InterpError::Io {
            path: p.clone(),
            source,
        })?;
        let parsed = if path.extension().is_some_and(|e| e == "txt") {
            Tensor::from_text(&String::from_utf8_lossy(&bytes))
        } else {
            Tensor::read_binary(&mut bytes.as_slice())
        };
        parsed.map_err(|reason| InterpError::Format { path: p, reason })
    }

    pub fn save(&self, path: &Path) -> Result<(), InterpError> {
        let p = path.display().to_string();
        let io = |source| InterpError::Io {
            path: p.clone(),
            source,
        };
        if path.extension().is_some_and(|e| e == "txt") {
            std::fs::write(path, self.to_text()).map_err(io)
        } else {
            let mut buf = Vec::new();
            self.write_binary(&mut buf).map_err(io)?;
            std::fs::write(path, buf).map_err(io)
        }
    }
}

impl fmt::Display for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_text())
    }
}

/// Tensor bindings and arithmetic mode for one execution.
#[derive(Clone, Debug)]
pub struct ExecEnv {
    pub bindings: HashMap<String, Tensor>,
    pub mode: ElementMode,
}

impl ExecEnv {
    pub fn new(mode: ElementMode) -> Self {
        ExecEnv {
            bindings: HashMap::new(),
            mode,
        }
    }

    pub fn bind(mut self, name: &str, t: Tensor) -> Self {
        self.bindings.insert(name.to_string(), t);
        self
    }
}

trait Elem: Copy {
    const ZERO: Self;
    const ONE: Self;
    fn add(self, o: Self) -> Self;
    fn mul(self, o: Self) -> Self;
}

impl Elem for i64 {
    const ZERO: Self = 0;
    const ONE: Self = 1;
    fn add(self, o: Self) -> Self {
        self.wrapping_add(o)
    }
    fn mul(self, o: Self) -> Self {
        self.wrapping_mul(o)
    }
}

impl Elem for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
    fn add(self, o: Self) -> Self {
        self + o
    }
    fn mul(self, o: Self) -> Self {
        self * o
    }
}

fn run<T: Elem>(
    nest: &LoopNest,
    mut bufs: Vec<Vec<T>>,
    shapes: Vec<Vec<usize>>,
) -> Result<Vec<Vec<T>>, InterpError> {
    let mut c = nest.compile()?;
    c.shapes = shapes;
    c.walk(&mut |sid, env, _| {
        let s = &c.stmts[sid];
        match s.kind {
            StmtKind::Init => {
                for a in s.accesses.iter().filter(|a| a.mode.writes()) {
                    let flat = c.resolve(a, env)?.expect("writes are never zero-extended");
                    bufs[a.tensor][flat] = T::ZERO;
                }
            }
            StmtKind::Mac => {
                let mut prod = T::ONE;
                let mut target = None;
                for a in &s.accesses {
                    match a.mode {
                        AccessMode::Read => match c.resolve(a, env)? {
                            Some(flat) => prod = prod.mul(bufs[a.tensor][flat]),
                            None => prod = T::ZERO,
                        },
                        _ => {
                            let flat = c.resolve(a, env)?.expect("writes are never zero-extended");
                            target = Some((a.tensor, flat));
                        }
                    }
                }
                let (t, flat) = target.expect("checked statement has a target");
                bufs[t][flat] = bufs[t][flat].add(prod);
            }
        }
        Ok::<(), InterpError>(())
    })?;
    Ok(bufs)
}

/// Executes every statement instance in schedule order. Output tensors start
/// zeroed; the first declared output is returned.
pub fn execute(nest: &LoopNest, env: &ExecEnv) -> Result<Tensor, InterpError> {
    let mut shapes = Vec::new();
    let mut inputs = Vec::new();
    for t in &nest.tensors {
        if t.role == TensorRole::Output {
            shapes.push(t.shape.clone());
            inputs.push(Tensor::zeros(&t.shape, env.mode));
            continue;
        }
        let bound = env
            .bindings
            .get(&t.name)
            .ok_or_else(|| InterpError::UnboundTensor(t.name.clone()))?;
        if bound.shape.len() != t.shape.len() {
            return Err(InterpError::RankMismatch {
                tensor: t.name.clone(),
                expected: t.shape.len(),
                got: bound.shape.len(),
            });
        }
        shapes.push(bound.shape.clone());
        inputs.push(bound.to_mode(env.mode)?);
    }
    let out_idx = nest
        .tensors
        .iter()
        .position(|t| t.role == TensorRole::Output)
        .ok_or_else(|| InterpError::Unsupported("nest declares no output tensor".into()))?;
    let out_shape = shapes[out_idx].clone();
    match env.mode {
        ElementMode::Int64 => {
            let bufs = inputs
                .into_iter()
                .map(|t| t.as_i64().expect("converted").to_vec())
                .collect();
            let mut res = run::<i64>(nest, bufs, shapes)?;
            Tensor::from_i64(&out_shape, res.swap_remove(out_idx))
        }
        ElementMode::Float64 => {
            let bufs = inputs
                .into_iter()
                .map(|t| t.as_f64().expect("converted").to_vec())
                .collect();
            let mut res = run::<f64>(nest, bufs, shapes)?;
            Tensor::from_f64(&out_shape, res.swap_remove(out_idx))
        }
    }
}

fn reference_impl<T: Elem>(spec: &ConvSpec, input: &[T], weights: &[T]) -> Vec<T> {
    let (oh_n, ow_n) = (spec.out_h(), spec.out_w());
    let (h, w, kh_n, kw_n) = (spec.h as i64, spec.w as i64, spec.kh, spec.kw);
    let wshape = spec.weight_shape();
    let (s, p) = (spec.stride as i64, spec.pad as i64);
    let mut out = vec![T::ZERO; spec.out_channels() * oh_n * ow_n];
    for co in 0..spec.out_channels() {
        let (ci_start, slice) = spec.input_range(co);
        for oh in 0..oh_n {
            for ow in 0..ow_n {
                let mut acc = T::ZERO;
                for cl in 0..slice {
                    for kh in 0..kh_n {
                        for kw in 0..kw_n {
                            let ih = oh as i64 * s + kh as i64 - p;
                            let iw = ow as i64 * s + kw as i64 - p;
                            if ih < 0 || iw < 0 || ih >= h || iw >= w {
                                continue;
                            }
                            let x = input[((ci_start + cl) * spec.h + ih as usize) * spec.w + iw as usize];
                            let k = weights[((co * wshape[1] + cl) * kh_n + kh) * kw_n + kw];
                            acc = acc.add(x.mul(k));
                        }
                    }
                }
                out[(co * oh_n + oh) * ow_n + ow] = acc;
            }
        }
    }
    out
}

/// Direct evaluation of the convolution a [`ConvSpec`] describes, written
/// independently of the loop-nest machinery. Output channel `co` reads the
/// input channels of its group; weights are indexed by the group-local input
/// channel.
pub fn reference_conv(spec: &ConvSpec, input: &Tensor, weights: &Tensor) -> Result<Tensor, InterpError> {
    spec.validate()
        .map_err(|e| InterpError::ShapeMismatch(e.to_string()))?;
    if input.shape != spec.input_shape() {
        return Err(InterpError::ShapeMismatch(format!(
            "input shape {:?}, spec expects {:?}",
            input.shape,
            spec.input_shape()
        )));
    }
    if weights.shape != spec.weight_shape() {
        return Err(InterpError::ShapeMismatch(format!(
            "weight shape {:?}, spec expects {:?}",
            weights.shape,
            spec.weight_shape()
        )));
    }
    let shape = spec.output_shape();
    match (&input.data, &weights.data) {
        (TensorData::I64(x), TensorData::I64(k)) => Tensor::from_i64(&shape, reference_impl(spec, x, k)),
        (TensorData::F64(x), TensorData::F64(k)) => Tensor::from_f64(&shape, reference_impl(spec, x, k)),
        _ => Err(InterpError::ModeMismatch(
            "input and weights must share an element mode".into(),
        )),
    }
}

/// Number of multiply-accumulate statement instances.
pub fn count_macs(nest: &LoopNest) -> Result<u64, IrError> {
    Ok(nest
        .instance_counts()?
        .iter()
        .filter(|c| c.1 == StmtKind::Mac)
        .map(|c| c.2)
        .sum())
}

/// Sum of the trip counts of every loop execution, a rough loop-overhead
/// measure reported next to MACs.
pub fn count_loop_iterations(nest: &LoopNest) -> Result<u64, IrError> {
    let c = nest.compile()?;
    let mut n = 0u64;
    c.walk(&mut |_, _, _| {
        n += 1;
        Ok::<(), IrError>(())
    })?;
    Ok(n)
}

/// One flattened operation of a convolution-shaped nest.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MacOp {
    /// Zero an output cell.
    Zero(u32),
    /// `out[o] += input[i] * weight[w]`.
    Mac { o: u32, i: u32, w: u32 },
}

/// Input index used for zero-extended (padding) reads during compilation.
const PAD: u32 = u32::MAX;

/// A nest with one input, one weight and one output tensor, flattened into
/// its schedule-ordered list of operations. Used by the network engine,
/// which runs the same nest many times.
#[derive(Clone, Debug)]
pub struct MacProgram {
    pub input_shape: Vec<usize>,
    pub weight_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    /// Padding reads are dropped from `ops` but still counted here.
    pub macs: usize,
    pub ops: Vec<MacOp>,
}

impl MacProgram {
    pub fn compile(nest: &LoopNest) -> Result<MacProgram, InterpError> {
        let find = |role: TensorRole| -> Result<usize, InterpError> {
            let idx: Vec<usize> = nest
                .tensors
                .iter()
                .enumerate()
                .filter(|(_, t)| t.role == role)
                .map(|(i, _)| i)
                .collect();
            match idx.as_slice() {
                [i] => Ok(*i),
                _ => Err(InterpError::Unsupported(format!(
                    "expected exactly one {role:?} tensor"
                ))),
            }
        };
        let (ti, tw, to) = (
            find(TensorRole::Input)?,
            find(TensorRole::Weight)?,
            find(TensorRole::Output)?,
        );
        let c = nest.compile()?;
        for s in &c.stmts {
            if s.kind == StmtKind::Mac {
                let reads: Vec<usize> = s
                    .accesses
                    .iter()
                    .filter(|a| a.mode == AccessMode::Read)
                    .map(|a| a.tensor)
                    .collect();
                let mut sorted = reads.clone();
                sorted.sort_unstable();
                let mut want = vec![ti, tw];
                want.sort_unstable();
                let target = s.accesses.iter().find(|a| a.mode.writes()).map(|a| a.tensor);
                if sorted != want || target != Some(to) {
                    return Err(InterpError::Unsupported(format!(
                        "statement {} is not an input-times-weight accumulation",
                        s.id
                    )));
                }
            }
        }
        let volume_of = |t: usize| volume(&c.shapes[t]);
        if [ti, tw, to].iter().any(|&t| volume_of(t) >= PAD as usize) {
            return Err(InterpError::Unsupported("tensor too large".into()));
        }
        let mut ops = Vec::new();
        let mut macs = 0usize;
        c.walk(&mut |sid, env, _| {
            let s = &c.stmts[sid];
            match s.kind {
                StmtKind::Init => {
                    let a = s.accesses.iter().find(|a| a.mode.writes()).expect("write");
                    if a.tensor == to {
                        ops.push(MacOp::Zero(c.resolve(a, env)?.expect("in range") as u32));
                    }
                }
                StmtKind::Mac => {
                    let (mut o, mut i, mut w) = (0, PAD, 0);
                    for a in &s.accesses {
                        let flat = c.resolve(a, env)?;
                        if a.tensor == to {
                            o = flat.expect("in range") as u32;
                        } else if a.tensor == ti {
                            i = flat.map_or(PAD, |f| f as u32);
                        } else {
                            match flat {
                                Some(f) => w = f as u32,
                                None => i = PAD,
                            }
                        }
                    }
                    macs += 1;
                    if i != PAD {
                        ops.push(MacOp::Mac { o, i, w });
                    }
                }
            }
            Ok::<(), InterpError>(())
        })?;
        Ok(MacProgram {
            input_shape: c.shapes[ti].clone(),
            weight_shape: c.shapes[tw].clone(),
            output_shape: c.shapes[to].clone(),
            macs,
            ops,
        })
    }

    pub fn input_len(&self) -> usize {
        volume(&self.input_shape)
    }

    pub fn weight_len(&self) -> usize {
        volume(&self.weight_shape)
    }

    pub fn output_len(&self) -> usize {
        volume(&self.output_shape)
    }

    pub fn mac_count(&self) -> usize {
        self.macs
    }

    /// `out = conv(x, w)` for one example. `out` is zeroed first.
    pub fn forward(&self, x: &[f64], w: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for op in &self.ops {
            match *op {
                MacOp::Zero(o) => out[o as usize] = 0.0,
                MacOp::Mac { o, i, w: k } => out[o as usize] += x[i as usize] * w[k as usize],
            }
        }
    }

    /// Accumulates `dx += dconv/dx * dout` and `dw += dconv/dw * dout`.
    /// Cells zeroed by an init after being accumulated into lose their earlier
    /// contributions, so the reverse pass walks the operations backwards and
    /// stops propagating through a zeroed cell.
    pub fn backward(&self, x: &[f64], w: &[f64], dout: &[f64], dx: &mut [f64], dw: &mut [f64]) {
        let mut live = dout.to_vec();
        for op in self.ops.iter().rev() {
            match *op {
                MacOp::Zero(o) => live[o as usize] = 0.0,
                MacOp::Mac { o, i, w: k } => {
                    let g = live[o as usize];
                    dx[i as usize] += w[k as usize] * g;
                    dw[k as usize] += x[i as usize] * g;
                }
            }
        }
    }
}
