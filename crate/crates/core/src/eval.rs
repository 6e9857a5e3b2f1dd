//! Evaluation harness: passage accuracy, log-probability drop against the
//! random and oracle baselines, hyperparameter sweeps, sentence-level
//! citation output and per-span latency.

use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{argmax_lowest, Tau};
use crate::error::{Error, Result};
use crate::fixtures::SpanRecord;
use crate::interchange::{DropEntry, DropTable};
use crate::methods::{Dataset, Method, MethodParams};
use crate::span::Span;

/// Version tag written in the first column of every report row.
pub const REPORT_SCHEMA: &str = "finegrain-report/1";

/// Seeds of the three random-baseline runs.
pub const RANDOM_SEEDS: [u64; 3] = [0, 1, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub instance_id: String,
    pub span: [usize; 2],
    pub method: Method,
    pub predicted: Option<usize>,
    pub citations: Vec<usize>,
    pub gold: Option<usize>,
    /// Log-probability drop of the predicted passage, when a drop table
    /// covers this span and a passage was predicted.
    pub drop: Option<f64>,
}

/// Percentage of records whose prediction equals the gold passage.
pub fn accuracy(records: &[EvalRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("accuracy of zero records".into()));
    }
    let mut correct = 0usize;
    for r in records {
        let gold = r.gold.ok_or_else(|| {
            Error::InvalidArgument(format!("record {} {:?} has no gold passage", r.instance_id, r.span))
        })?;
        if r.predicted == Some(gold) {
            correct += 1;
        }
    }
    Ok(100.0 * correct as f64 / records.len() as f64)
}

/// `log p_full - log p_ablated[passage]`.
pub fn log_prob_drop(entry: &DropEntry, passage: usize) -> Result<f64> {
    entry.drop_for(passage).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "drop table for {} {:?} has {} passages, asked for {passage}",
            entry.instance_id,
            entry.span,
            entry.log_p_ablated.len()
        ))
    })
}

/// Passage with the largest drop (lowest index on ties) and that drop.
pub fn oracle_drop(entry: &DropEntry) -> Result<(usize, f64)> {
    let drops: Vec<f64> = entry.drops().collect();
    let best = argmax_lowest(&drops).ok_or_else(|| {
        Error::InvalidArgument(format!("drop table for {} has no passages", entry.instance_id))
    })?;
    Ok((best, drops[best]))
}

/// Mean drop when each record's passage is drawn uniformly at random, one
/// run per seed, averaged over the runs.
pub fn random_drop(entries: &[DropEntry], seeds: &[u64]) -> Result<f64> {
    if entries.is_empty() || seeds.is_empty() {
        return Err(Error::InvalidArgument("random drop needs records and seeds".into()));
    }
    let mut total = 0.0;
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut run = 0.0;
        for e in entries {
            let p = e.log_p_ablated.len();
            if p == 0 {
                return Err(Error::InvalidArgument(format!("drop table for {} has no passages", e.instance_id)));
            }
            run += log_prob_drop(e, rng.gen_range(0..p))?;
        }
        total += run / entries.len() as f64;
    }
    Ok(total / seeds.len() as f64)
}

/// Expectation of [`random_drop`]: per record, the mean drop over passages.
pub fn expected_random_drop(entries: &[DropEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("random drop needs records".into()));
    }
    let mut total = 0.0;
    for e in entries {
        if e.log_p_ablated.is_empty() {
            return Err(Error::InvalidArgument(format!("drop table for {} has no passages", e.instance_id)));
        }
        total += e.drops().sum::<f64>() / e.log_p_ablated.len() as f64;
    }
    Ok(total / entries.len() as f64)
}

/// Mean oracle drop over entries.
pub fn mean_oracle_drop(entries: &[DropEntry]) -> Result<f64> {
    if entries.is_empty() {
        return Err(Error::InvalidArgument("oracle drop needs records".into()));
    }
    let mut total = 0.0;
    for e in entries {
        total += oracle_drop(e)?.1;
    }
    Ok(total / entries.len() as f64)
}

/// Runs `method` on every span record.
pub fn evaluate(
    dataset: &Dataset,
    records: &[SpanRecord],
    method: Method,
    params: &MethodParams,
    drops: Option<&DropTable>,
) -> Result<Vec<EvalRecord>> {
    records
        .iter()
        .map(|r| {
            let bundle = dataset
                .get(&r.instance_id)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown instance {}", r.instance_id)))?;
            if let Some(g) = r.gold {
                if g >= bundle.instance.num_passages() {
                    return Err(Error::Validation(format!(
                        "gold passage {g} of {} {:?} out of range",
                        r.instance_id, r.span
                    )));
                }
            }
            let out = bundle.run(method, &Span::from_range(r.span[0]..r.span[1]), params)?;
            let drop = match (drops.and_then(|d| d.find(&r.instance_id, r.span)), out.predicted_passage) {
                (Some(entry), Some(p)) => Some(log_prob_drop(entry, p)?),
                _ => None,
            };
            Ok(EvalRecord {
                instance_id: r.instance_id.clone(),
                span: r.span,
                method,
                predicted: out.predicted_passage,
                citations: out.citations,
                gold: r.gold,
                drop,
            })
        })
        .collect()
}

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub method: String,
    pub k: Option<usize>,
    pub tau: Option<Tau>,
    pub layer: Option<usize>,
    pub window: Option<usize>,
    pub n_records: usize,
    pub accuracy: Option<f64>,
    pub mean_drop: Option<f64>,
}

impl ReportRow {
    /// Summarizes evaluated records of one method run.
    pub fn from_records(method: Method, params: &MethodParams, records: &[EvalRecord]) -> Self {
        let with_gold: Vec<EvalRecord> = records.iter().filter(|r| r.gold.is_some()).cloned().collect();
        // records without a drop entry or without a prediction are left out
        let drops: Vec<f64> = records.iter().filter_map(|r| r.drop).collect();
        ReportRow {
            method: method.name().to_string(),
            k: Some(params.engine.k),
            tau: Some(params.engine.tau),
            layer: params.layer,
            window: Some(params.window),
            n_records: records.len(),
            accuracy: accuracy(&with_gold).ok(),
            mean_drop: (!drops.is_empty()).then(|| drops.iter().sum::<f64>() / drops.len() as f64),
        }
    }

    fn baseline(name: &str, n_records: usize, mean_drop: f64) -> Self {
        ReportRow {
            method: name.to_string(),
            k: None,
            tau: None,
            layer: None,
            window: None,
            n_records,
            accuracy: None,
            mean_drop: Some(mean_drop),
        }
    }
}

/// Drop-table baselines for the spans in `records`: seeded random (mean of
/// three runs), its exact expectation, and the oracle.
pub fn baseline_rows(records: &[SpanRecord], drops: &DropTable) -> Result<Vec<ReportRow>> {
    let entries: Vec<DropEntry> = records
        .iter()
        .filter_map(|r| drops.find(&r.instance_id, r.span).cloned())
        .collect();
    if entries.is_empty() {
        return Ok(Vec::new());
    }
    Ok(vec![
        ReportRow::baseline("random", entries.len(), random_drop(&entries, &RANDOM_SEEDS)?),
        ReportRow::baseline("random-expected", entries.len(), expected_random_drop(&entries)?),
        ReportRow::baseline("oracle", entries.len(), mean_oracle_drop(&entries)?),
    ])
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(ToString::to_string).unwrap_or_default()
}

pub const REPORT_HEADER: &str = "schema,method,k,tau,layer,window,n_records,accuracy,mean_drop";

/// Renders rows as CSV with [`REPORT_HEADER`].
pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{REPORT_SCHEMA},{},{},{},{},{},{},{},{}",
            r.method,
            opt(&r.k),
            opt(&r.tau),
            opt(&r.layer),
            opt(&r.window),
            r.n_records,
            opt(&r.accuracy),
            opt(&r.mean_drop)
        );
    }
    out
}

/// Hyperparameter grid. Cells are enumerated with `k` outermost, then `tau`,
/// `layer`, `window`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub k: Vec<usize>,
    pub tau: Vec<Tau>,
    pub layer: Vec<Option<usize>>,
    pub window: Vec<usize>,
}

impl SweepGrid {
    /// A one-cell grid holding `params`.
    pub fn single(params: &MethodParams) -> Self {
        SweepGrid {
            k: vec![params.engine.k],
            tau: vec![params.engine.tau],
            layer: vec![params.layer],
            window: vec![params.window],
        }
    }

    pub fn cells(&self, base: &MethodParams) -> Vec<MethodParams> {
        let mut out = Vec::new();
        for &k in &self.k {
            for &tau in &self.tau {
                for &layer in &self.layer {
                    for &window in &self.window {
                        let mut p = *base;
                        p.engine.k = k;
                        p.engine.tau = tau;
                        p.layer = layer;
                        p.window = window;
                        out.push(p);
                    }
                }
            }
        }
        out
    }
}

/// One report row per grid cell, in grid order.
pub fn sweep(
    dataset: &Dataset,
    records: &[SpanRecord],
    method: Method,
    base: &MethodParams,
    grid: &SweepGrid,
    drops: Option<&DropTable>,
) -> Result<Vec<ReportRow>> {
    grid.cells(base)
        .iter()
        .map(|p| {
            let evaluated = evaluate(dataset, records, method, p, drops)?;
            Ok(ReportRow::from_records(method, p, &evaluated))
        })
        .collect()
}

/// One ALCE-style citation line: a response sentence and the passages cited for it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CitationLine {
    pub instance_id: String,
    pub statement: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    pub citations: Vec<usize>,
}

/// Sentence-level citations for every instance of the dataset.
pub fn citations(dataset: &Dataset, method: Method, params: &MethodParams) -> Result<Vec<CitationLine>> {
    let mut out = Vec::new();
    for bundle in dataset.bundles() {
        let inst = &bundle.instance;
        for (s, range) in inst.response_sentences.iter().enumerate() {
            if range.is_empty() {
                continue;
            }
            let run = bundle.run(method, &Span::from_range(range.clone()), params)?;
            let text = match (&inst.response_text, &inst.response_char_spans) {
                (Some(t), Some(spans)) => t.get(spans[range.start].start..spans[range.end - 1].end).map(str::to_string),
                _ => None,
            };
            out.push(CitationLine {
                instance_id: inst.instance_id.clone(),
                statement: s,
                text,
                citations: run.citations,
            });
        }
    }
    Ok(out)
}

pub fn citations_jsonl(lines: &[CitationLine]) -> String {
    lines
        .iter()
        .map(|l| serde_json::to_string(l).expect("citation serializes") + "\n")
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyRow {
    pub method: String,
    pub spans: usize,
    /// Mean per span with a freshly loaded matrix and empty caches.
    pub cold_ms: f64,
    /// Mean per span against caches already populated by earlier spans.
    pub warm_ms: f64,
}

/// Per-method mean wall-clock time per target span. Model forward passes are
/// not part of this measurement; matrix loading is part of the cold path.
pub fn latency_report(
    dataset: &Dataset,
    records: &[SpanRecord],
    methods: &[Method],
    params: &MethodParams,
) -> Result<Vec<LatencyRow>> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("latency needs at least one span".into()));
    }
    let lookup = |r: &SpanRecord| {
        dataset
            .get(&r.instance_id)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown instance {}", r.instance_id)))
    };
    let mut rows = Vec::new();
    for &method in methods {
        let mut cold = 0.0;
        for r in records {
            let span = Span::from_range(r.span[0]..r.span[1]);
            let start = Instant::now();
            let fresh = lookup(r)?.cold_copy(method)?;
            fresh.run(method, &span, params)?;
            cold += start.elapsed().as_secs_f64();
        }
        // populate the shared caches, then time the reuse path
        for r in records {
            lookup(r)?.run(method, &Span::from_range(r.span[0]..r.span[1]), params)?;
        }
        let mut warm = 0.0;
        for r in records {
            let span = Span::from_range(r.span[0]..r.span[1]);
            let bundle = lookup(r)?;
            let start = Instant::now();
            bundle.run(method, &span, params)?;
            warm += start.elapsed().as_secs_f64();
        }
        let n = records.len() as f64;
        rows.push(LatencyRow {
            method: method.name().to_string(),
            spans: records.len(),
            cold_ms: 1e3 * cold / n,
            warm_ms: 1e3 * warm / n,
        });
    }
    Ok(rows)
}

pub fn latency_csv(rows: &[LatencyRow]) -> String {
    let mut out = String::from("schema,method,spans,cold_ms,warm_ms\n");
    for r in rows {
        let _ = writeln!(out, "{REPORT_SCHEMA},{},{},{:.4},{:.4}", r.method, r.spans, r.cold_ms, r.warm_ms);
    }
    out
}
