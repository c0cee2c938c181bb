//! Random transformation-sequence search with legality screening.
//!
//! Every candidate carries one transformation sequence per layer. Semantic
//! steps are checked by dependence preservation, candidates with neural
//! steps by Fisher Potential against the original network, and survivors
//! are ranked by MAC count (ascending), then Fisher Potential (descending).

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, NetworkConfig, SCHEMA_VERSION};
use crate::conv::{conv_nest, ConvError, ConvSpec};
use crate::interp::count_macs;
use crate::ir::{Caps, IterRole, LoopNest};
use crate::nnet::{derive_seed, fisher_decision, fisher_potential, Batch, FisherReport, Network, NnetError};
use crate::transforms::{
    check_semantic_legality, trip_count, Transform, TransformClass, TransformError, TransformSequence, Verdict,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("no valid transformation can be drawn for layer {layer}")]
    Exhausted { layer: usize },
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Conv(#[from] ConvError),
    #[error(transparent)]
    Nnet(#[from] NnetError),
    #[error("layer {layer}: {source}")]
    Transform {
        layer: usize,
        source: TransformError,
    },
    #[error("layer {layer}: {source}")]
    Ir {
        layer: usize,
        source: crate::ir::IrError,
    },
    #[error("cannot write `{path}`: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const ALL_KINDS: [&str; 9] = [
    "interchange",
    "strip_mine",
    "tile",
    "unroll",
    "fuse",
    "split",
    "bottleneck",
    "group",
    "depthwise",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub candidate_count: usize,
    /// Per-layer sequence lengths are drawn uniformly from `0..=max_len`.
    pub max_len: usize,
    pub seed: u64,
    pub kinds: Vec<String>,
    pub bottleneck_factors: Vec<i64>,
    pub group_factors: Vec<i64>,
    pub tile_factors: Vec<i64>,
    pub unroll_factors: Vec<i64>,
    /// Which layers may be transformed; empty means all.
    pub modifiable: Vec<bool>,
    /// Optional per-layer veto: reject when any layer's potential falls below
    /// this fraction of the original layer's potential.
    pub layer_veto: Option<f64>,
    pub caps: Caps,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            candidate_count: 1000,
            max_len: 6,
            seed: 0,
            kinds: ALL_KINDS.iter().map(|s| s.to_string()).collect(),
            bottleneck_factors: vec![2, 4],
            group_factors: vec![2, 4, 8],
            tile_factors: vec![2, 4, 8],
            unroll_factors: vec![2, 4, 8, 16],
            modifiable: Vec::new(),
            layer_veto: None,
            caps: Caps::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |m: String| Err(SearchError::InvalidConfig(m));
        for k in &self.kinds {
            if !ALL_KINDS.contains(&k.as_str()) {
                return bad(format!("unknown transformation kind `{k}`"));
            }
        }
        for (name, fs) in [
            ("bottleneck_factors", &self.bottleneck_factors),
            ("group_factors", &self.group_factors),
            ("tile_factors", &self.tile_factors),
            ("unroll_factors", &self.unroll_factors),
        ] {
            if fs.iter().any(|&f| f < 1) {
                return bad(format!("{name} must be positive"));
            }
        }
        if let Some(v) = self.layer_veto {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("layer_veto {v} outside [0, 1]"));
            }
        }
        Ok(())
    }

    fn layer_modifiable(&self, layer: usize) -> bool {
        self.modifiable.get(layer).copied().unwrap_or(true)
    }
}

/// One layer of a candidate: the nest the sequence starts from and every
/// intermediate nest (`trace[0]` is the start, `trace[k + 1]` follows step `k`).
#[derive(Clone, Debug)]
pub struct LayerDraw {
    pub relu: bool,
    pub sequence: TransformSequence,
    pub trace: Vec<LoopNest>,
}

impl LayerDraw {
    pub fn final_nest(&self) -> &LoopNest {
        self.trace.last().expect("trace starts with the base nest")
    }
}

#[derive(Clone, Debug)]
pub struct Candidate {
    pub id: usize,
    pub layers: Vec<LayerDraw>,
}

impl Candidate {
    pub fn is_semantic(&self) -> bool {
        self.layers.iter().all(|l| l.sequence.is_semantic())
    }

    pub fn sequences(&self) -> Vec<String> {
        self.layers.iter().map(|l| l.sequence.to_string()).collect()
    }

    /// Per-layer sequences in one line: `L0: ... ; L1: ...`.
    pub fn dsl(&self) -> String {
        self.layers
            .iter()
            .enumerate()
            .map(|(i, l)| format!("L{i}: {}", l.sequence))
            .collect::<Vec<_>>()
            .join(" ; ")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Survived,
    RejectedSemantic,
    RejectedFisher,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Survived => "survived",
            Status::RejectedSemantic => "rejected_semantic",
            Status::RejectedFisher => "rejected_fisher",
        })
    }
}

/// Verdict for one maximal run of consecutive semantic steps of a layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunVerdict {
    pub layer: usize,
    pub steps: String,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateRow {
    pub id: usize,
    pub sequences: Vec<String>,
    pub neural: bool,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
    pub verdicts: Vec<RunVerdict>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fisher: Option<FisherReport>,
    /// Pure-semantic candidates compute the same values as the original, so
    /// its score is reused instead of recomputed.
    pub fisher_reused: bool,
    pub fisher_delta: Vec<f64>,
    pub macs_per_layer: Vec<u64>,
    pub macs_total: u64,
}

impl CandidateRow {
    pub fn fisher_total(&self) -> Option<f64> {
        self.fisher.as_ref().map(|f| f.total)
    }

    fn dsl(&self) -> String {
        self.sequences
            .iter()
            .enumerate()
            .map(|(i, s)| format!("L{i}: {s}"))
            .collect::<Vec<_>>()
            .join(" ; ")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankedRow {
    pub rank: usize,
    pub id: usize,
    pub dsl: String,
    pub macs_total: u64,
    pub fisher_total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub candidate_count: usize,
    pub survivors: usize,
    pub rejected_semantic: usize,
    pub rejected_fisher: usize,
    pub neural_candidates: usize,
    /// Rejected fraction of all candidates.
    pub rejection_rate: f64,
    /// Fisher-rejected fraction of candidates containing a neural step.
    pub fisher_rejection_rate: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OriginSummary {
    pub macs_per_layer: Vec<u64>,
    pub macs_total: u64,
    pub fisher: FisherReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub draw_seconds: f64,
    pub evaluate_seconds: f64,
    pub rank_seconds: f64,
    pub total_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchReport {
    pub schema_version: u32,
    pub config: SearchConfig,
    pub network: NetworkConfig,
    pub batch_seed: u64,
    pub origin: OriginSummary,
    pub candidates: Vec<CandidateRow>,
    pub ranked: Vec<RankedRow>,
    pub stats: SearchStats,
    /// Wall-clock fields; the only part that varies between identical runs.
    pub timing: Timing,
}

impl SearchReport {
    pub fn best(&self) -> Option<&RankedRow> {
        self.ranked.first()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without its timing object.
    pub fn body_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut().expect("object").remove("timing");
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "id",
            "status",
            "neural",
            "macs_total",
            "fisher_total",
            "reason",
            "sequences",
        ])
        .expect("in-memory write");
        for r in &self.candidates {
            w.write_record([
                r.id.to_string(),
                r.status.to_string(),
                r.neural.to_string(),
                r.macs_total.to_string(),
                r.fisher_total().map(|f| format!("{f:e}")).unwrap_or_default(),
                r.reason.clone().unwrap_or_default(),
                r.dsl(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Writes `<path>` (JSON) and the same path with a `.csv` extension.
    pub fn write(&self, path: &Path) -> Result<PathBuf, SearchError> {
        let io = |p: &Path| {
            let p = p.to_path_buf();
            move |source| SearchError::Io { path: p, source }
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(io(dir))?;
        }
        std::fs::write(path, self.to_json() + "\n").map_err(io(path))?;
        let csv_path = path.with_extension("csv");
        std::fs::write(&csv_path, self.to_csv()).map_err(io(&csv_path))?;
        Ok(csv_path)
    }
}

/// Origin network state shared by every candidate evaluation.
pub struct Origin {
    pub specs: Vec<(ConvSpec, bool)>,
    pub network: Network,
    pub batch: Batch,
    pub fisher: FisherReport,
    pub macs_per_layer: Vec<u64>,
}

impl Origin {
    pub fn new(net: &NetworkConfig, batch: Batch) -> Result<Origin, SearchError> {
        let network = net.build_network()?;
        let fisher = fisher_potential(&network, &batch)?;
        let macs_per_layer = network.layers.iter().map(|l| l.program.mac_count() as u64).collect();
        Ok(Origin {
            specs: net.specs(),
            network,
            batch,
            fisher,
            macs_per_layer,
        })
    }

    pub fn macs_total(&self) -> u64 {
        self.macs_per_layer.iter().sum()
    }
}

/// All parameterizations of `kind` worth trying on `nest`.
fn options(kind: &str, nest: &LoopNest, cfg: &SearchConfig) -> Vec<Transform> {
    let names = nest.loop_names();
    let role = |n: &str| nest.find_loop(n).map(|p| nest.loop_at(&p).var.role);
    let mut out = Vec::new();
    match kind {
        "interchange" => {
            for (i, a) in names.iter().enumerate() {
                for b in &names[i + 1..] {
                    out.push(Transform::interchange(a, b));
                }
            }
        }
        "strip_mine" | "tile" => {
            for n in &names {
                for &f in &cfg.tile_factors {
                    out.push(if kind == "tile" {
                        Transform::Tile { iter: n.clone(), factor: f }
                    } else {
                        Transform::StripMine { iter: n.clone(), factor: f }
                    });
                }
            }
        }
        "unroll" => {
            for n in &names {
                for &f in &cfg.unroll_factors {
                    out.push(Transform::Unroll { iter: n.clone(), factor: f });
                }
            }
        }
        "fuse" => {
            for p in names.windows(2) {
                out.push(Transform::Fuse {
                    outer: p[0].clone(),
                    inner: p[1].clone(),
                });
            }
        }
        "split" => {
            for n in &names {
                if let Some(t) = trip_count(nest, n) {
                    for k in 1..t {
                        out.push(Transform::Split {
                            iter: n.clone(),
                            parts: vec![k, t - k],
                        });
                    }
                }
            }
        }
        "bottleneck" => {
            for n in &names {
                if matches!(role(n), Some(IterRole::OutChannel | IterRole::InChannel | IterRole::Spatial)) {
                    for &f in &cfg.bottleneck_factors {
                        out.push(Transform::Bottleneck { iter: n.clone(), factor: f });
                    }
                }
            }
        }
        "group" => {
            for a in names.iter().filter(|n| role(n) == Some(IterRole::OutChannel)) {
                for b in names.iter().filter(|n| role(n) == Some(IterRole::InChannel)) {
                    for &f in &cfg.group_factors {
                        out.push(Transform::Group {
                            a: a.clone(),
                            b: b.clone(),
                            factor: f,
                        });
                    }
                }
            }
        }
        "depthwise" => out.push(Transform::Depthwise),
        _ => {}
    }
    out
}

/// Draws one applicable step: a kind uniformly among kinds that still have an
/// applicable parameterization, then a parameterization uniformly among the
/// applicable ones (rejection sampling without replacement).
fn draw_step(
    nest: &LoopNest,
    cfg: &SearchConfig,
    rng: &mut ChaCha8Rng,
) -> Option<(Transform, LoopNest)> {
    let mut kinds: Vec<&str> = cfg.kinds.iter().map(String::as_str).collect();
    while !kinds.is_empty() {
        let k = kinds.swap_remove(rng.random_range(0..kinds.len()));
        let mut opts = options(k, nest, cfg);
        opts.shuffle(rng);
        for t in opts {
            if let Ok(next) = t.apply(nest) {
                return Some((t, next));
            }
        }
    }
    None
}

/// The layer spec adjusted to the actual input produced by the previous layer.
fn adjusted_spec(spec: &ConvSpec, input: &[usize]) -> ConvSpec {
    let mut s = spec.clone();
    s.ci = input[0];
    s.h = input[1];
    s.w = input[2];
    s
}

/// Draws one candidate from its own seeded stream.
pub fn draw_candidate(origin: &Origin, cfg: &SearchConfig, id: usize) -> Result<Candidate, SearchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, id as u64));
    let mut layers = Vec::with_capacity(origin.specs.len());
    let mut input: Vec<usize> = origin.specs[0].0.input_shape();
    for (l, (spec, relu)) in origin.specs.iter().enumerate() {
        let spec = adjusted_spec(spec, &input);
        spec.validate()?;
        let base = conv_nest(&spec)?;
        let mut trace = vec![base];
        let mut steps = Vec::new();
        if cfg.layer_modifiable(l) && !cfg.kinds.is_empty() {
            let len = rng.random_range(0..=cfg.max_len);
            for k in 0..len {
                match draw_step(trace.last().expect("non-empty"), cfg, &mut rng) {
                    Some((t, next)) => {
                        steps.push(t);
                        trace.push(next);
                    }
                    None if k == 0 => return Err(SearchError::Exhausted { layer: l }),
                    None => break,
                }
            }
        }
        let last = trace.last().expect("non-empty");
        input = last.output().expect("conv nests have an output").shape.clone();
        layers.push(LayerDraw {
            relu: *relu,
            sequence: TransformSequence::new(steps, format!("layer{l}")),
            trace,
        });
    }
    Ok(Candidate { id, layers })
}

/// A candidate with the given per-layer sequences. Each layer starts from its
/// spec adjusted to the previous layer's output, as in [`draw_candidate`].
pub fn candidate_from_sequences(
    origin: &Origin,
    id: usize,
    sequences: &[TransformSequence],
) -> Result<Candidate, SearchError> {
    if sequences.len() != origin.specs.len() {
        return Err(SearchError::InvalidConfig(format!(
            "{} sequences for {} layers",
            sequences.len(),
            origin.specs.len()
        )));
    }
    let mut layers = Vec::with_capacity(sequences.len());
    let mut input: Vec<usize> = origin.specs[0].0.input_shape();
    for (l, ((spec, relu), seq)) in origin.specs.iter().zip(sequences).enumerate() {
        let spec = adjusted_spec(spec, &input);
        spec.validate()?;
        let trace = seq
            .trace(&conv_nest(&spec)?)
            .map_err(|source| SearchError::Transform { layer: l, source })?;
        let last = trace.last().expect("non-empty");
        input = last.output().expect("conv nests have an output").shape.clone();
        layers.push(LayerDraw {
            relu: *relu,
            sequence: seq.clone(),
            trace,
        });
    }
    Ok(Candidate { id, layers })
}

/// Exactly `cfg.candidate_count` candidates, reproducible from `cfg.seed`
/// regardless of thread count.
pub fn draw_candidates(origin: &Origin, cfg: &SearchConfig) -> Result<Vec<Candidate>, SearchError> {
    (0..cfg.candidate_count)
        .into_par_iter()
        .map(|id| draw_candidate(origin, cfg, id))
        .collect()
}

/// Checks each maximal run of consecutive semantic steps of every layer.
fn semantic_verdicts(c: &Candidate, caps: Caps) -> Vec<RunVerdict> {
    let mut out = Vec::new();
    for (l, layer) in c.layers.iter().enumerate() {
        let steps = &layer.sequence.steps;
        let mut k = 0;
        while k < steps.len() {
            if steps[k].class() != TransformClass::Semantic {
                k += 1;
                continue;
            }
            let start = k;
            while k < steps.len() && steps[k].class() == TransformClass::Semantic {
                k += 1;
            }
            let text = TransformSequence::new(steps[start..k].to_vec(), "").to_string();
            let verdict = match check_semantic_legality(&layer.trace[start], &layer.trace[k], caps) {
                Ok(v) => v,
                Err(e) => Verdict::Illegal(format!("not checkable: {e}")),
            };
            out.push(RunVerdict {
                layer: l,
                steps: text,
                verdict,
            });
        }
    }
    out
}

/// Verifies, scores and classifies one candidate.
pub fn evaluate(c: &Candidate, origin: &Origin, cfg: &SearchConfig) -> Result<CandidateRow, SearchError> {
    let verdicts = semantic_verdicts(c, cfg.caps);
    let neural = !c.is_semantic();
    let macs_per_layer = c
        .layers
        .iter()
        .enumerate()
        .map(|(l, d)| count_macs(d.final_nest()).map_err(|source| SearchError::Ir { layer: l, source }))
        .collect::<Result<Vec<u64>, _>>()?;
    let mut row = CandidateRow {
        id: c.id,
        sequences: c.sequences(),
        neural,
        status: Status::Survived,
        reason: None,
        verdicts,
        fisher: None,
        fisher_reused: false,
        fisher_delta: Vec::new(),
        macs_total: macs_per_layer.iter().sum(),
        macs_per_layer,
    };
    if let Some(bad) = row.verdicts.iter().find(|v| !v.verdict.is_legal()) {
        row.status = Status::RejectedSemantic;
        row.reason = Some(format!("layer {} `{}`: {}", bad.layer, bad.steps, bad.verdict));
        return Ok(row);
    }
    let report = if neural {
        let nests = c
            .layers
            .iter()
            .map(|d| (d.final_nest().clone(), d.relu))
            .collect();
        let net = Network::from_nests(nests, origin.network.num_classes, origin.network.seed)?;
        fisher_potential(&net, &origin.batch)?
    } else {
        row.fisher_reused = true;
        origin.fisher.clone()
    };
    row.fisher_delta = report
        .per_layer
        .iter()
        .zip(&origin.fisher.per_layer)
        .map(|(c, o)| c - o)
        .collect();
    let decision = fisher_decision(&origin.fisher, &report, cfg.layer_veto);
    row.fisher = Some(report);
    if let crate::nnet::FisherDecision::Reject(reason) = decision {
        row.status = Status::RejectedFisher;
        row.reason = Some(reason);
    }
    Ok(row)
}

/// Survivors ordered by MACs ascending, Fisher total descending, then the
/// sequence text and id, so the order is total and independent of the
/// input order.
pub fn rank(rows: &[CandidateRow]) -> Vec<RankedRow> {
    let mut survivors: Vec<&CandidateRow> = rows.iter().filter(|r| r.status == Status::Survived).collect();
    survivors.sort_by(|a, b| {
        let fa = a.fisher_total().unwrap_or(0.0);
        let fb = b.fisher_total().unwrap_or(0.0);
        a.macs_total
            .cmp(&b.macs_total)
            .then(fb.total_cmp(&fa))
            .then_with(|| a.dsl().cmp(&b.dsl()))
            .then(a.id.cmp(&b.id))
    });
    survivors
        .into_iter()
        .enumerate()
        .map(|(i, r)| RankedRow {
            rank: i + 1,
            id: r.id,
            dsl: r.dsl(),
            macs_total: r.macs_total,
            fisher_total: r.fisher_total().unwrap_or(0.0),
        })
        .collect()
}

pub fn stats(rows: &[CandidateRow]) -> SearchStats {
    let count = |s: Status| rows.iter().filter(|r| r.status == s).count();
    let n = rows.len();
    let neural = rows.iter().filter(|r| r.neural).count();
    let rejected_fisher = count(Status::RejectedFisher);
    let rejected_semantic = count(Status::RejectedSemantic);
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    SearchStats {
        candidate_count: n,
        survivors: count(Status::Survived),
        rejected_semantic,
        rejected_fisher,
        neural_candidates: neural,
        rejection_rate: ratio(rejected_fisher + rejected_semantic, n),
        fisher_rejection_rate: ratio(rejected_fisher, neural),
    }
}

/// Evaluates every candidate and ranks the survivors.
pub fn filter_and_score(
    cands: &[Candidate],
    origin: &Origin,
    cfg: &SearchConfig,
) -> Result<(Vec<CandidateRow>, Vec<RankedRow>), SearchError> {
    let rows = cands
        .par_iter()
        .map(|c| evaluate(c, origin, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    let ranked = rank(&rows);
    Ok((rows, ranked))
}

/// End-to-end search. Writes the JSON report and CSV rows when `out` is
/// given. `batch_base` resolves relative batch file paths.
pub fn run_search(
    cfg: &SearchConfig,
    net: &NetworkConfig,
    out: Option<&Path>,
    batch_base: Option<&Path>,
) -> Result<SearchReport, SearchError> {
    cfg.validate()?;
    net.validate()?;
    let t0 = Instant::now();
    let batch = net.build_batch(batch_base)?;
    let origin = Origin::new(net, batch)?;
    let cands = draw_candidates(&origin, cfg)?;
    let t1 = Instant::now();
    let rows = cands
        .par_iter()
        .map(|c| evaluate(c, &origin, cfg))
        .collect::<Result<Vec<_>, _>>()?;
    drop(cands);
    let t2 = Instant::now();
    let ranked = rank(&rows);
    let stats = stats(&rows);
    let t3 = Instant::now();
    let report = SearchReport {
        schema_version: SCHEMA_VERSION,
        config: cfg.clone(),
        network: net.clone(),
        batch_seed: net.seed,
        origin: OriginSummary {
            macs_total: origin.macs_total(),
            macs_per_layer: origin.macs_per_layer.clone(),
            fisher: origin.fisher.clone(),
        },
        candidates: rows,
        ranked,
        stats,
        timing: Timing {
            draw_seconds: (t1 - t0).as_secs_f64(),
            evaluate_seconds: (t2 - t1).as_secs_f64(),
            rank_seconds: (t3 - t2).as_secs_f64(),
            total_seconds: (t3 - t0).as_secs_f64(),
        },
    };
    if let Some(path) = out {
        report.write(path)?;
    }
    Ok(report)
}
