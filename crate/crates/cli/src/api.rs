//! JSON request and response types and the attribution entry point shared by
//! the CLI and the HTTP service.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use finegrain_core::baselines::WindowScore;
use finegrain_core::methods::{Dataset, InstanceBundle, Method};
use finegrain_core::{Error as CoreError, Span};

use crate::config::{Overrides, Settings};

/// Target span: exactly one of a token range or a character range over the
/// response text, both half-open.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpanSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tokens: Option<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chars: Option<[usize; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttributeRequest {
    /// Optional over HTTP, where the path names the instance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance_id: Option<String>,
    pub span: SpanSpec,
    pub method: String,
    #[serde(default)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceToken {
    /// Flattened document token index.
    pub token: usize,
    pub passage: Option<usize>,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeResponse {
    pub instance_id: String,
    pub method: Method,
    /// Resolved response token range.
    pub span: [usize; 2],
    pub params: Settings,
    pub evidence: Vec<EvidenceToken>,
    pub passage_scores: Vec<f64>,
    pub predicted_passage: Option<usize>,
    pub citations: Vec<usize>,
    /// Best window, for the sliding-window methods.
    pub window: Option<WindowScore>,
    /// Response tokens whose evidence was added, for augmenting methods.
    pub augmentation_tokens: Option<Vec<usize>>,
}

/// The one serialization of a response, used by every front end.
pub fn render(resp: &AttributeResponse) -> String {
    serde_json::to_string(resp).expect("response serializes")
}

#[derive(Debug, Error)]
pub enum ApiError {
    #[error("unknown instance `{0}`")]
    NotFound(String),
    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
    #[error(transparent)]
    Engine(#[from] CoreError),
}

impl ApiError {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        ApiError::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn status(&self) -> u16 {
        match self {
            ApiError::NotFound(_) => 404,
            ApiError::Invalid { .. } => 422,
            ApiError::Engine(
                CoreError::InvalidArgument(_)
                | CoreError::EmptySpan
                | CoreError::SpanOutOfRange { .. }
                | CoreError::ZeroNorm { .. },
            ) => 422,
            ApiError::Engine(_) => 500,
        }
    }

    pub fn body(&self) -> serde_json::Value {
        let field = match self {
            ApiError::Invalid { field, .. } => Some(field.as_str()),
            _ => None,
        };
        let message = match self {
            ApiError::Invalid { message, .. } => message.clone(),
            other => other.to_string(),
        };
        serde_json::json!({ "error": { "field": field, "message": message } })
    }
}

/// Resolves a span spec to a token range of `bundle`'s response. Character
/// ranges map to the minimal run of tokens overlapping them.
pub fn resolve_span(bundle: &InstanceBundle, spec: &SpanSpec) -> Result<Range<usize>, ApiError> {
    let inst = &bundle.instance;
    let n = inst.num_response_tokens();
    match (spec.tokens, spec.chars) {
        (Some(_), Some(_)) => Err(ApiError::invalid("span", "give either `tokens` or `chars`, not both")),
        (None, None) => Err(ApiError::invalid("span", "one of `tokens` or `chars` is required")),
        (Some([s, e]), None) => {
            if s >= e || e > n {
                return Err(ApiError::invalid(
                    "span.tokens",
                    format!("[{s}, {e}) is not a nonempty range within [0, {n})"),
                ));
            }
            Ok(s..e)
        }
        (None, Some([s, e])) => {
            let spans = inst
                .response_char_spans
                .as_ref()
                .ok_or_else(|| ApiError::invalid("span.chars", "instance has no response character spans"))?;
            let len = inst.response_text.as_ref().map_or(usize::MAX, String::len);
            if s >= e || e > len {
                return Err(ApiError::invalid(
                    "span.chars",
                    format!("[{s}, {e}) is not a nonempty range within the response text"),
                ));
            }
            let hit: Vec<usize> = spans
                .iter()
                .enumerate()
                .filter(|(_, t)| t.start < e && s < t.end)
                .map(|(i, _)| i)
                .collect();
            match (hit.first(), hit.last()) {
                (Some(&a), Some(&b)) => Ok(a..b + 1),
                _ => Err(ApiError::invalid("span.chars", format!("[{s}, {e}) covers no token"))),
            }
        }
    }
}

fn check_inputs(bundle: &InstanceBundle, method: Method, settings: &Settings) -> Result<(), ApiError> {
    let missing = |what: &str| ApiError::invalid("method", format!("{method} needs {what}, which instance {} lacks", bundle.id()));
    if method.needs_parse() && bundle.parse.is_none() {
        return Err(missing("a dependency parse"));
    }
    if method.needs_hidden() && bundle.hidden.is_none() {
        return Err(missing("hidden states"));
    }
    if method == Method::AugmentByAttn && bundle.response_attention.is_none() {
        return Err(missing("response-to-response attention"));
    }
    if !method.needs_hidden() {
        match settings.layer {
            Some(l) if !bundle.layers.contains_key(&l) => {
                return Err(ApiError::invalid(
                    "overrides.layer",
                    format!("instance {} has no attention for layer {l}", bundle.id()),
                ));
            }
            None if bundle.attention.is_none() => return Err(missing("an attention matrix")),
            _ => {}
        }
    }
    Ok(())
}

/// Runs `req` against the instance `instance_id` of `dataset`, with request
/// overrides applied on top of `base`.
pub fn attribute(
    dataset: &Dataset,
    instance_id: &str,
    req: &AttributeRequest,
    base: &Settings,
) -> Result<AttributeResponse, ApiError> {
    if let Some(id) = &req.instance_id {
        if id != instance_id {
            return Err(ApiError::invalid(
                "instance_id",
                format!("body names `{id}` but the request targets `{instance_id}`"),
            ));
        }
    }
    let bundle = dataset
        .get(instance_id)
        .ok_or_else(|| ApiError::NotFound(instance_id.to_string()))?;
    let method: Method = req.method.parse().map_err(|e: CoreError| ApiError::invalid("method", e.to_string()))?;
    let settings = base.apply(&req.overrides);
    if let Some((field, message)) = settings.check() {
        return Err(ApiError::invalid(format!("overrides.{field}"), message));
    }
    let range = resolve_span(bundle, &req.span)?;
    check_inputs(bundle, method, &settings)?;
    let out = bundle.run(method, &Span::from_range(range.clone()), &settings.params())?;
    let inst = &bundle.instance;
    let (evidence, passage_scores) = match &out.evidence {
        Some(ev) => (
            ev.evidence
                .iter()
                .map(|(&token, &score)| EvidenceToken {
                    token,
                    passage: inst.passage_of(token),
                    score,
                })
                .collect(),
            ev.passage_scores.clone(),
        ),
        None => (Vec::new(), Vec::new()),
    };
    Ok(AttributeResponse {
        instance_id: instance_id.to_string(),
        method,
        span: [range.start, range.end],
        params: settings,
        evidence,
        passage_scores,
        predicted_passage: out.predicted_passage,
        citations: out.citations,
        window: out.window.map(|w| w.window),
        augmentation_tokens: out.augmentation_tokens,
    })
}

/// Entry of `GET /instances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub instance_id: String,
    pub num_passages: usize,
    pub num_doc_tokens: usize,
    pub num_question_tokens: usize,
    pub num_response_tokens: usize,
    pub doc_offset: usize,
    pub layers: Vec<usize>,
    pub has_parse: bool,
    pub has_hidden: bool,
    pub has_response_attention: bool,
    /// Methods whose inputs are all present.
    pub methods: Vec<Method>,
}

pub fn summarize(bundle: &InstanceBundle) -> InstanceSummary {
    let inst = &bundle.instance;
    let settings = Settings::default();
    InstanceSummary {
        instance_id: inst.instance_id.clone(),
        num_passages: inst.num_passages(),
        num_doc_tokens: inst.num_doc_tokens(),
        num_question_tokens: inst.num_question_tokens(),
        num_response_tokens: inst.num_response_tokens(),
        doc_offset: inst.doc_offset,
        layers: bundle.layers.keys().copied().collect(),
        has_parse: bundle.parse.is_some(),
        has_hidden: bundle.hidden.is_some(),
        has_response_attention: bundle.response_attention.is_some(),
        methods: Method::ALL
            .into_iter()
            .filter(|&m| check_inputs(bundle, m, &settings).is_ok())
            .collect(),
    }
}

/// Body of `GET /instances/{id}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceDetail {
    pub instance_id: String,
    pub doc_tokens: Vec<String>,
    pub passages: Vec<[usize; 2]>,
    pub question_tokens: Vec<String>,
    pub response_tokens: Vec<String>,
    pub response_sentences: Vec<[usize; 2]>,
    pub doc_offset: usize,
    pub response_text: Option<String>,
    pub response_char_spans: Option<Vec<[usize; 2]>>,
    pub summary: InstanceSummary,
}

fn pairs(v: &[Range<usize>]) -> Vec<[usize; 2]> {
    v.iter().map(|r| [r.start, r.end]).collect()
}

pub fn detail(bundle: &InstanceBundle) -> InstanceDetail {
    let inst = &bundle.instance;
    InstanceDetail {
        instance_id: inst.instance_id.clone(),
        doc_tokens: inst.doc_tokens.clone(),
        passages: pairs(&inst.passages),
        question_tokens: inst.question_tokens.clone(),
        response_tokens: inst.response_tokens.clone(),
        response_sentences: pairs(&inst.response_sentences),
        doc_offset: inst.doc_offset,
        response_text: inst.response_text.clone(),
        response_char_spans: inst.response_char_spans.as_deref().map(pairs),
        summary: summarize(bundle),
    }
}

/// Evidence scores keyed by document token, for comparisons in tests.
pub fn evidence_map(resp: &AttributeResponse) -> BTreeMap<usize, f64> {
    resp.evidence.iter().map(|e| (e.token, e.score)).collect()
}
