//! Named attribution methods over a loaded instance bundle, with the
//! per-instance caches that let many spans share token-wise work.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionEngine, EngineConfig, EvidenceSet};
use crate::baselines::{self, AttnAugmenter, AttnVariant, HssResult};
use crate::depaug::{AtomicFactSet, VerbTags};
use crate::error::{Error, Result};
use crate::interchange::{
    load_depparse, load_instance, load_matrix, ColumnSpace, DepParse, HiddenStates, LoadedMatrix,
    SimilarityMatrix, TokenizedInstance,
};
use crate::similarity::attention_average;
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    AttnUnion,
    AttnUnionDep,
    HssAvg,
    HssAvgDep,
    HssUnion,
    SentComp,
    AugmentByAttn,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::AttnUnion,
        Method::AttnUnionDep,
        Method::HssAvg,
        Method::HssAvgDep,
        Method::HssUnion,
        Method::SentComp,
        Method::AugmentByAttn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::AttnUnion => "attn-union",
            Method::AttnUnionDep => "attn-union-dep",
            Method::HssAvg => "hss-avg",
            Method::HssAvgDep => "hss-avg-dep",
            Method::HssUnion => "hss-union",
            Method::SentComp => "sent-comp",
            Method::AugmentByAttn => "augment-by-attn",
        }
    }

    pub fn needs_parse(self) -> bool {
        matches!(self, Method::AttnUnionDep | Method::HssAvgDep)
    }

    pub fn needs_hidden(self) -> bool {
        matches!(self, Method::HssAvg | Method::HssAvgDep | Method::HssUnion)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Method::ALL.iter().map(|m| m.name()).collect();
                Error::InvalidArgument(format!("unknown method `{s}`; expected one of {}", known.join(", ")))
            })
    }
}

/// Hyperparameters for one method run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub engine: EngineConfig,
    /// Sliding-window width for the hidden-state window methods.
    pub window: usize,
    pub variant: AttnVariant,
    /// Attention layer to use; `None` picks the instance's default matrix.
    pub layer: Option<usize>,
}

impl Default for MethodParams {
    fn default() -> Self {
        MethodParams {
            engine: EngineConfig::default(),
            window: 8,
            variant: AttnVariant::Full,
            layer: None,
        }
    }
}

/// Result of one method on one span.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodOutput {
    pub evidence: Option<EvidenceSet>,
    pub window: Option<HssResult>,
    pub predicted_passage: Option<usize>,
    pub citations: Vec<usize>,
    /// Response tokens whose evidence was folded in by augmentation.
    pub augmentation_tokens: Option<Vec<usize>>,
}

/// Everything known about one instance, plus its compute-once caches.
#[derive(Debug)]
pub struct InstanceBundle {
    pub dir: Option<PathBuf>,
    pub instance: Arc<TokenizedInstance>,
    /// Default response-to-prompt attention similarity.
    pub attention: Option<Arc<SimilarityMatrix>>,
    /// Attention similarity per layer, for sweeps.
    pub layers: BTreeMap<usize, Arc<SimilarityMatrix>>,
    pub hidden: Option<Arc<HiddenStates>>,
    pub response_attention: Option<Arc<SimilarityMatrix>>,
    pub parse: Option<Arc<DepParse>>,
    engines: Mutex<HashMap<(Option<usize>, usize), Arc<AttributionEngine>>>,
    hidden_engines: Mutex<HashMap<usize, Arc<AttributionEngine>>>,
    facts: OnceLock<Arc<AtomicFactSet>>,
}

fn similarity_from(m: LoadedMatrix, path: &Path) -> Result<SimilarityMatrix> {
    match m {
        LoadedMatrix::Similarity(s) => Ok(s),
        LoadedMatrix::Stack(st) => Ok(attention_average(&st)),
        LoadedMatrix::Hidden(_) => Err(Error::Validation(format!(
            "{} holds hidden states where a similarity matrix was expected",
            path.display()
        ))),
    }
}

impl InstanceBundle {
    pub fn new(instance: TokenizedInstance) -> Self {
        InstanceBundle {
            dir: None,
            instance: Arc::new(instance),
            attention: None,
            layers: BTreeMap::new(),
            hidden: None,
            response_attention: None,
            parse: None,
            engines: Mutex::new(HashMap::new()),
            hidden_engines: Mutex::new(HashMap::new()),
            facts: OnceLock::new(),
        }
    }

    pub fn with_attention(mut self, s: SimilarityMatrix) -> Result<Self> {
        s.check_against(&self.instance)?;
        let s = Arc::new(s);
        if let Some(l) = s.provenance.layer {
            self.layers.insert(l, s.clone());
        }
        self.attention = Some(s);
        Ok(self)
    }

    pub fn with_layer(mut self, layer: usize, s: SimilarityMatrix) -> Result<Self> {
        s.check_against(&self.instance)?;
        self.layers.insert(layer, Arc::new(s));
        Ok(self)
    }

    pub fn with_hidden(mut self, h: HiddenStates) -> Result<Self> {
        h.check_against(&self.instance)?;
        self.hidden = Some(Arc::new(h));
        Ok(self)
    }

    pub fn with_response_attention(mut self, s: SimilarityMatrix) -> Result<Self> {
        let s = s.with_columns(ColumnSpace::Response);
        s.check_against(&self.instance)?;
        self.response_attention = Some(Arc::new(s));
        Ok(self)
    }

    pub fn with_parse(mut self, p: DepParse) -> Result<Self> {
        p.check_against(&self.instance)?;
        self.parse = Some(Arc::new(p));
        Ok(self)
    }

    /// Loads an instance directory: `instance.json`, optional `depparse.json`,
    /// and every `*.f32` matrix next to them. `attn` is the default attention,
    /// `hidden` the hidden states, `attn_resp` the response-to-response
    /// attention; any other attention file with a layer joins the sweep set.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let instance = load_instance(&dir.join("instance.json"))?;
        let mut bundle = InstanceBundle::new(instance);
        bundle.dir = Some(dir.to_path_buf());
        let parse_path = dir.join("depparse.json");
        if parse_path.exists() {
            bundle = bundle.with_parse(load_depparse(&parse_path)?)?;
        }
        let mut payloads: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "f32"))
            .collect();
        payloads.sort();
        for path in payloads {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let loaded = load_matrix(&path, &bundle.instance)?;
            match (stem.as_str(), loaded) {
                ("hidden", LoadedMatrix::Hidden(h)) => bundle = bundle.with_hidden(h)?,
                ("attn_resp", m) => {
                    let s = similarity_from(m, &path)?;
                    bundle = bundle.with_response_attention(s)?;
                }
                ("attn", m) => {
                    let s = similarity_from(m, &path)?;
                    bundle = bundle.with_attention(s)?;
                }
                (_, LoadedMatrix::Hidden(_)) => {}
                (_, m) => {
                    let s = similarity_from(m, &path)?;
                    if let Some(l) = s.provenance.layer {
                        bundle.layers.entry(l).or_insert_with(|| Arc::new(s));
                    }
                }
            }
        }
        Ok(bundle)
    }

    /// A copy sharing the loaded data but none of the caches. When the bundle
    /// came from disk, the matrix `method` reads is loaded again.
    pub fn cold_copy(&self, method: Method) -> Result<InstanceBundle> {
        let mut copy = InstanceBundle {
            dir: self.dir.clone(),
            instance: self.instance.clone(),
            attention: self.attention.clone(),
            layers: self.layers.clone(),
            hidden: self.hidden.clone(),
            response_attention: self.response_attention.clone(),
            parse: self.parse.clone(),
            engines: Mutex::new(HashMap::new()),
            hidden_engines: Mutex::new(HashMap::new()),
            facts: OnceLock::new(),
        };
        let Some(dir) = &self.dir else {
            return Ok(copy);
        };
        if method.needs_hidden() {
            let path = dir.join("hidden.f32");
            if let LoadedMatrix::Hidden(h) = load_matrix(&path, &self.instance)? {
                copy.hidden = Some(Arc::new(h));
            }
        } else {
            let path = dir.join("attn.f32");
            if path.exists() {
                let s = similarity_from(load_matrix(&path, &self.instance)?, &path)?;
                copy.attention = Some(Arc::new(s));
            }
        }
        Ok(copy)
    }

    pub fn id(&self) -> &str {
        &self.instance.instance_id
    }

    fn attention_for(&self, layer: Option<usize>) -> Result<Arc<SimilarityMatrix>> {
        match layer {
            None => self.attention.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("instance {} has no attention matrix", self.id()))
            }),
            Some(l) => self.layers.get(&l).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!("instance {} has no attention for layer {l}", self.id()))
            }),
        }
    }

    /// Shared engine for the attention of `layer` at evidence size `k`.
    pub fn engine(&self, layer: Option<usize>, k: usize) -> Result<Arc<AttributionEngine>> {
        let mut engines = self.engines.lock().expect("engine table poisoned");
        if let Some(e) = engines.get(&(layer, k)) {
            return Ok(e.clone());
        }
        let e = Arc::new(AttributionEngine::new(self.instance.clone(), self.attention_for(layer)?, k)?);
        engines.insert((layer, k), e.clone());
        Ok(e)
    }

    fn hidden_engine(&self, k: usize) -> Result<Arc<AttributionEngine>> {
        let mut engines = self.hidden_engines.lock().expect("engine table poisoned");
        if let Some(e) = engines.get(&k) {
            return Ok(e.clone());
        }
        let s = crate::similarity::hidden_cosine(self.require_hidden()?)?;
        let e = Arc::new(AttributionEngine::new(self.instance.clone(), Arc::new(s), k)?);
        engines.insert(k, e.clone());
        Ok(e)
    }

    fn require_hidden(&self) -> Result<&HiddenStates> {
        self.hidden
            .as_deref()
            .ok_or_else(|| Error::InvalidArgument(format!("instance {} has no hidden states", self.id())))
    }

    pub fn facts(&self) -> Result<Arc<AtomicFactSet>> {
        let parse = self.parse.clone().ok_or_else(|| {
            Error::InvalidArgument(format!("instance {} has no dependency parse", self.id()))
        })?;
        Ok(self
            .facts
            .get_or_init(|| Arc::new(AtomicFactSet::new(parse, VerbTags::default())))
            .clone())
    }

    /// Runs `method` on `span`.
    pub fn run(&self, method: Method, span: &Span, params: &MethodParams) -> Result<MethodOutput> {
        params.engine.validate()?;
        span.check_within(self.instance.num_response_tokens())?;
        let cfg = &params.engine;
        let from_evidence = |evidence: EvidenceSet, augmentation_tokens: Option<Vec<usize>>| MethodOutput {
            predicted_passage: evidence.predict_passage(),
            citations: evidence.cite_passages(cfg.citation_threshold),
            evidence: Some(evidence),
            window: None,
            augmentation_tokens,
        };
        let from_window = |w: HssResult, augmentation_tokens: Option<Vec<usize>>| MethodOutput {
            evidence: None,
            window: Some(w),
            predicted_passage: Some(w.passage),
            citations: vec![w.passage],
            augmentation_tokens,
        };
        match method {
            Method::AttnUnion => {
                let e = self.engine(params.layer, cfg.k)?;
                Ok(from_evidence(e.attribute_span(span, cfg.tau, None)?, None))
            }
            Method::AttnUnionDep => {
                let facts = self.facts()?;
                let e = self.engine(params.layer, cfg.k)?;
                let ev = e.attribute_span(span, cfg.tau, Some(facts.as_ref()))?;
                let aug = facts.expand(span.iter())?.into_iter().collect();
                Ok(from_evidence(ev, Some(aug)))
            }
            Method::SentComp => {
                let e = self.engine(params.layer, cfg.k)?;
                Ok(from_evidence(baselines::sent_comp(&e, span, cfg.tau)?, None))
            }
            Method::AugmentByAttn => {
                let resp = self.response_attention.clone().ok_or_else(|| {
                    Error::InvalidArgument(format!(
                        "instance {} has no response-to-response attention",
                        self.id()
                    ))
                })?;
                let aug = AttnAugmenter::new(&self.instance, resp, cfg.k, params.variant)?;
                let e = self.engine(params.layer, cfg.k)?;
                let ev = baselines::augment_by_attn(&e, &aug, span, cfg.tau)?;
                let mut tokens: Vec<usize> = span.iter().flat_map(|i| aug.picked(i)).chain(span.iter()).collect();
                tokens.sort_unstable();
                tokens.dedup();
                Ok(from_evidence(ev, Some(tokens)))
            }
            Method::HssUnion => {
                let e = self.hidden_engine(cfg.k)?;
                Ok(from_evidence(e.attribute_span(span, cfg.tau, None)?, None))
            }
            Method::HssAvg => {
                let w = baselines::hss_avg(&self.instance, self.require_hidden()?, span, params.window)?;
                Ok(from_window(w, None))
            }
            Method::HssAvgDep => {
                let facts = self.facts()?;
                let w = baselines::hss_avg_dep(
                    &self.instance,
                    self.require_hidden()?,
                    span,
                    params.window,
                    &facts,
                )?;
                let aug = facts.expand(span.iter())?.into_iter().collect();
                Ok(from_window(w, Some(aug)))
            }
        }
    }
}

/// A directory of instance directories, loaded eagerly and read-only.
#[derive(Debug, Default)]
pub struct Dataset {
    pub root: PathBuf,
    bundles: BTreeMap<String, Arc<InstanceBundle>>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)
            .map_err(|e| Error::io(root, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("instance.json").is_file())
            .collect();
        dirs.sort();
        let mut bundles = BTreeMap::new();
        for d in dirs {
            let b = InstanceBundle::load_dir(&d)?;
            let id = b.id().to_string();
            if bundles.insert(id.clone(), Arc::new(b)).is_some() {
                return Err(Error::Validation(format!("duplicate instance id {id} under {}", root.display())));
            }
        }
        Ok(Dataset {
            root: root.to_path_buf(),
            bundles,
        })
    }

    pub fn from_bundles<I: IntoIterator<Item = InstanceBundle>>(bundles: I) -> Self {
        Dataset {
            root: PathBuf::new(),
            bundles: bundles
                .into_iter()
                .map(|b| (b.id().to_string(), Arc::new(b)))
                .collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&Arc<InstanceBundle>> {
        self.bundles.get(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.bundles.keys().map(String::as_str)
    }

    pub fn bundles(&self) -> impl Iterator<Item = &Arc<InstanceBundle>> {
        self.bundles.values()
    }

    pub fn len(&self) -> usize {
        self.bundles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }
}
