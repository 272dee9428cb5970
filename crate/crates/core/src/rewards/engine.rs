use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use parking_lot::{Mutex, RwLock};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::{cache_key, AuditLog, AuditRecord, RewardCache};
use super::claims::{extract_claims, ClaimLabel};
use super::{
    conflict_only_value, threshold_value, veriscore_value, DegenerateReason, RewardError, RewardKind,
    RewardResult,
};
use crate::config::{ConfigError, EngineConfig};
use crate::datastore::{PrecacheEntry, PromptSet};
use crate::digest::sha256_hex;
use crate::retrieval::{Bm25Index, ChunkId, EvidenceSet, RetrievalConfig, RetrievalError, TokenCounter};
use crate::verification::{
    verify, BackendError, BackendTask, Limiter, Verdict, VerdictKind, VerificationError, VerifierBackend,
    VerifierRequest, VerifyMode,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub prompt_id: String,
    pub response: String,
}

impl ScoreItem {
    pub fn new(prompt_id: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            prompt_id: prompt_id.into(),
            response: response.into(),
        }
    }
}

/// Holds a permit of the global limiter for the duration of each call.
struct LimitedBackend {
    inner: Arc<dyn VerifierBackend>,
    limiter: Limiter,
}

impl VerifierBackend for LimitedBackend {
    fn call(&self, task: BackendTask<'_>, prompt: Option<&str>) -> Result<String, BackendError> {
        let _permit = self.limiter.acquire();
        self.inner.call(task, prompt)
    }
    fn needs_rendered_prompt(&self) -> bool {
        self.inner.needs_rendered_prompt()
    }
    fn fingerprint(&self) -> String {
        self.inner.fingerprint()
    }
    fn is_ready(&self) -> bool {
        self.inner.is_ready()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Scope {
    Response,
    Claim,
}

const LATENCY_WINDOW: usize = 1 << 16;

#[derive(Default)]
struct Counters {
    scored: AtomicU64,
    cache_hits: AtomicU64,
    errors: AtomicU64,
    calls: Mutex<BTreeMap<&'static str, u64>>,
    latencies: Mutex<(Vec<f64>, usize)>,
}

impl Counters {
    fn record_latency(&self, ms: f64) {
        let mut guard = self.latencies.lock();
        let (samples, next) = &mut *guard;
        if samples.len() < LATENCY_WINDOW {
            samples.push(ms);
        } else {
            samples[*next] = ms;
            *next = (*next + 1) % LATENCY_WINDOW;
        }
    }
}

/// Counters since the engine was created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineStats {
    pub scored: u64,
    pub cache_hits: u64,
    pub cache_hit_rate: f64,
    pub errors: u64,
    /// Backend calls per reward kind, retries included.
    pub verifier_calls: BTreeMap<String, u64>,
    pub latency_p50_ms: Option<f64>,
    pub latency_p95_ms: Option<f64>,
}

/// Nearest-rank percentile.
fn percentile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

/// Scores responses against a loaded prompt set. Shared freely across
/// threads; `score_batch` fans out over items and over the claims of each
/// item, with backend calls capped by `verifier.max_inflight`.
pub struct RewardEngine {
    config: EngineConfig,
    promptset: RwLock<Arc<PromptSet>>,
    backend: LimitedBackend,
    tokenizer: Arc<dyn TokenCounter>,
    config_digest: String,
    indices: Mutex<HashMap<(String, String, Scope), Arc<Bm25Index>>>,
    cache: RewardCache,
    audit: Option<AuditLog>,
    pool: rayon::ThreadPool,
    counters: Counters,
}

impl std::fmt::Debug for RewardEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RewardEngine")
            .field("backend", &self.backend.fingerprint())
            .field("prompts", &self.promptset.read().len())
            .field("config_digest", &self.config_digest)
            .finish()
    }
}

struct ClaimOutcome {
    label: ClaimLabel,
    verdict: Verdict,
    evidence: Vec<ChunkId>,
    undecidable: bool,
}

impl RewardEngine {
    pub fn new(
        config: EngineConfig,
        promptset: PromptSet,
        backend: Arc<dyn VerifierBackend>,
    ) -> Result<Self, ConfigError> {
        config.validate()?;
        let tokenizer = config.build_tokenizer()?;
        let io_err = |path: &std::path::Path| {
            let path = path.to_path_buf();
            move |source| ConfigError::Io { path, source }
        };
        let cache = match &config.rewards.cache_path {
            Some(p) => RewardCache::open(p).map_err(io_err(p))?,
            None => RewardCache::in_memory(),
        };
        let audit = match &config.rewards.audit_log {
            Some(p) => Some(AuditLog::open(p).map_err(io_err(p))?),
            None => None,
        };
        let config_digest = config.scoring_digest(backend.as_ref(), tokenizer.as_ref());
        let threads = config.verifier.max_inflight.max(1);
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .thread_name(|i| format!("reward-{i}"))
            .build()
            .map_err(|e| ConfigError::Invalid(format!("thread pool: {e}")))?;
        Ok(Self {
            backend: LimitedBackend {
                inner: backend,
                limiter: Limiter::new(threads),
            },
            config,
            promptset: RwLock::new(Arc::new(promptset)),
            tokenizer,
            config_digest,
            indices: Mutex::new(HashMap::new()),
            cache,
            audit,
            pool,
            counters: Counters::default(),
        })
    }

    /// Build the backend from `config.verifier` as well.
    pub fn from_config(config: EngineConfig, promptset: PromptSet) -> Result<Self, ConfigError> {
        let backend = config.build_backend()?;
        Self::new(config, promptset, backend)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn config_digest(&self) -> &str {
        &self.config_digest
    }

    pub fn promptset(&self) -> Arc<PromptSet> {
        self.promptset.read().clone()
    }

    pub fn replace_promptset(&self, set: PromptSet) {
        *self.promptset.write() = Arc::new(set);
    }

    pub fn backend_ready(&self) -> bool {
        self.backend.is_ready()
    }

    /// Highest number of backend calls that were in flight at once.
    pub fn peak_inflight(&self) -> usize {
        self.backend.limiter.peak()
    }

    fn index(&self, entry: &PrecacheEntry, scope: Scope) -> Result<Arc<Bm25Index>, RewardError> {
        let key = (entry.prompt_id.clone(), entry.version_hash.clone(), scope);
        if let Some(idx) = self.indices.lock().get(&key) {
            return Ok(idx.clone());
        }
        let cfg = self.retrieval_config(scope);
        let built = Arc::new(Bm25Index::build(entry, cfg, self.tokenizer.as_ref())?);
        Ok(self.indices.lock().entry(key).or_insert(built).clone())
    }

    fn retrieval_config(&self, scope: Scope) -> &RetrievalConfig {
        match scope {
            Scope::Response => &self.config.retrieval,
            Scope::Claim => &self.config.claim_retrieval,
        }
    }

    /// Top-k chunks for `query`. A query that shares no term with the corpus
    /// gets the leading chunks so that the verifier still sees evidence.
    fn evidence(&self, entry: &PrecacheEntry, scope: Scope, query: &str) -> Result<EvidenceSet, RewardError> {
        let idx = self.index(entry, scope)?;
        let cfg = self.retrieval_config(scope);
        match idx.search(query, cfg) {
            Ok(ev) => Ok(ev),
            Err(RetrievalError::EmptyQuery) => Ok(idx.leading_chunks(cfg.top_k)),
            Err(e) => Err(e.into()),
        }
    }

    fn verify(&self, req: &VerifierRequest) -> Result<Verdict, VerificationError> {
        verify(
            req,
            &self.backend,
            &self.config.verifier.prompt,
            self.config.verifier.retry_limit,
        )
    }

    fn score_whole(&self, entry: &PrecacheEntry, response: &str, kind: RewardKind) -> Result<RewardResult, RewardError> {
        let (mode, default) = match kind {
            RewardKind::RatingRar => (VerifyMode::WholeResponseRating, 0.5),
            _ => (VerifyMode::WholeResponseBinary, 1.0),
        };
        let evidence = self.evidence(entry, Scope::Response, response)?;
        let req = VerifierRequest::whole_response(mode, &entry.prompt_text, response, evidence);
        let mut result = RewardResult::new(kind, default);
        result.evidence_used = req.evidence.chunk_ids();
        match self.verify(&req) {
            Ok(v) => {
                result.value = match v.kind {
                    VerdictKind::NoContradiction => 1.0,
                    VerdictKind::Contradiction => 0.0,
                    VerdictKind::Rating(r) => f64::from(r) / 10.0,
                    other => unreachable!("parser returned {other:?} for {mode:?}"),
                };
                result.verifier_calls = v.attempts;
                result.verdicts.push(v);
            }
            Err(VerificationError::VerdictUndecidable { attempts, reason }) => {
                tracing::warn!(prompt_id = %entry.prompt_id, %reason, "verdict undecidable, default reward applied");
                result.verifier_calls = attempts;
                result.mark_degenerate(DegenerateReason::Undecidable);
            }
            Err(e) => return Err(map_verification_error(e)),
        }
        Ok(result)
    }

    fn verify_claim(&self, entry: &PrecacheEntry, response: &str, claim: &str) -> Result<ClaimOutcome, RewardError> {
        let evidence = self.evidence(entry, Scope::Claim, claim)?;
        let req = VerifierRequest::per_claim(&entry.prompt_text, response, claim, evidence);
        let evidence = req.evidence.chunk_ids();
        match self.verify(&req) {
            Ok(v) => Ok(ClaimOutcome {
                label: ClaimLabel::from_verdict(v.kind).expect("per-claim parser yields claim labels"),
                verdict: v,
                evidence,
                undecidable: false,
            }),
            Err(VerificationError::VerdictUndecidable { attempts, reason }) => {
                let mut verdict = Verdict::new(VerdictKind::Inconclusive, format!("undecidable: {reason}"), "");
                verdict.attempts = attempts;
                Ok(ClaimOutcome {
                    label: ClaimLabel::Inconclusive,
                    verdict,
                    evidence,
                    undecidable: true,
                })
            }
            Err(e) => Err(map_verification_error(e)),
        }
    }

    fn score_claims(&self, entry: &PrecacheEntry, response: &str, kind: RewardKind) -> Result<RewardResult, RewardError> {
        let retry = self.config.verifier.retry_limit;
        let (mut claims, extraction_calls) = extract_claims(&entry.prompt_text, response, &self.backend, retry)?;
        let outcomes = self.pool.install(|| {
            claims
                .par_iter()
                .map(|c| self.verify_claim(entry, response, &c.text))
                .collect::<Result<Vec<_>, _>>()
        })?;

        let mut result = RewardResult::new(kind, 0.0);
        result.verifier_calls = extraction_calls;
        for (claim, outcome) in claims.iter_mut().zip(outcomes) {
            claim.verdict = Some(outcome.label);
            result.verifier_calls += outcome.verdict.attempts;
            for id in outcome.evidence {
                if !result.evidence_used.contains(&id) {
                    result.evidence_used.push(id);
                }
            }
            if outcome.undecidable {
                result.mark_degenerate(DegenerateReason::Undecidable);
            }
            result.verdicts.push(outcome.verdict);
        }
        let total = claims.len();
        let count = |l| claims.iter().filter(|c| c.verdict == Some(l)).count();
        let supported = count(ClaimLabel::Supported);
        let contradicted = count(ClaimLabel::Contradicted);
        result.value = match kind {
            RewardKind::VeriScore => veriscore_value(supported, total),
            RewardKind::BinaryVeriScore { threshold } => threshold_value(veriscore_value(supported, total), threshold),
            RewardKind::ConflictOnlyVeriScore => conflict_only_value(contradicted, total),
            _ => unreachable!("not a claim-level kind"),
        };
        if total == 0 {
            result.mark_degenerate(DegenerateReason::NoClaims);
        }
        result.claims = Some(claims);
        Ok(result)
    }

    /// Score one response against `entry`, bypassing the cache and counters.
    pub fn score_entry(&self, entry: &PrecacheEntry, response: &str, kind: RewardKind) -> Result<RewardResult, RewardError> {
        let start = Instant::now();
        let mut result = if kind.uses_claims() {
            self.score_claims(entry, response, kind)?
        } else {
            self.score_whole(entry, response, kind)?
        };
        result.latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        Ok(result)
    }

    pub fn score_binary_rar(&self, entry: &PrecacheEntry, response: &str) -> Result<RewardResult, RewardError> {
        self.score_entry(entry, response, RewardKind::BinaryRar)
    }

    pub fn score_veriscore(&self, entry: &PrecacheEntry, response: &str) -> Result<RewardResult, RewardError> {
        self.score_entry(entry, response, RewardKind::VeriScore)
    }

    pub fn score_conflict_only(&self, entry: &PrecacheEntry, response: &str) -> Result<RewardResult, RewardError> {
        self.score_entry(entry, response, RewardKind::ConflictOnlyVeriScore)
    }

    pub fn score_binary_veriscore(
        &self,
        entry: &PrecacheEntry,
        response: &str,
        threshold: f64,
    ) -> Result<RewardResult, RewardError> {
        self.score_entry(entry, response, RewardKind::binary_veriscore(threshold)?)
    }

    pub fn score_rating_rar(&self, entry: &PrecacheEntry, response: &str) -> Result<RewardResult, RewardError> {
        self.score_entry(entry, response, RewardKind::RatingRar)
    }

    /// Score by prompt id, consulting the cache, updating the counters and
    /// writing an audit record.
    pub fn score(&self, prompt_id: &str, response: &str, kind: RewardKind) -> Result<RewardResult, RewardError> {
        let start = Instant::now();
        let outcome = self.score_uncounted(prompt_id, response, kind);
        let latency_ms = start.elapsed().as_secs_f64() * 1000.0;
        match &outcome {
            Ok(r) => {
                self.counters.scored.fetch_add(1, Ordering::Relaxed);
                if r.cache_hit {
                    self.counters.cache_hits.fetch_add(1, Ordering::Relaxed);
                }
                *self.counters.calls.lock().entry(kind.stat_label()).or_default() += u64::from(r.verifier_calls);
                self.counters.record_latency(latency_ms);
                if let Some(audit) = &self.audit {
                    audit.record(&AuditRecord {
                        prompt_id: prompt_id.to_string(),
                        response_digest: sha256_hex(response),
                        kind,
                        value: r.value,
                        degenerate: r.degenerate,
                        attempts: r.verifier_calls,
                        latency_ms,
                        cache_hit: r.cache_hit,
                    });
                }
            }
            Err(_) => {
                self.counters.errors.fetch_add(1, Ordering::Relaxed);
            }
        }
        outcome.map(|mut r| {
            r.latency_ms = latency_ms;
            r
        })
    }

    fn score_uncounted(&self, prompt_id: &str, response: &str, kind: RewardKind) -> Result<RewardResult, RewardError> {
        let set = self.promptset();
        let entry = set
            .get(prompt_id)
            .ok_or_else(|| RewardError::UnknownPrompt(prompt_id.to_string()))?;
        let key = cache_key(kind, prompt_id, response, &entry.version_hash, &self.config_digest);
        if let Some(mut hit) = self.cache.get(&key) {
            hit.cache_hit = true;
            hit.verifier_calls = 0;
            return Ok(hit);
        }
        let result = self.score_entry(entry, response, kind)?;
        // Undecidable defaults are not cached: a later call may well decide.
        if result.degenerate_reason != Some(DegenerateReason::Undecidable) {
            self.cache.insert(key, &result);
        }
        Ok(result)
    }

    /// Results in input order; a failing item does not affect the others.
    pub fn score_batch(&self, items: &[ScoreItem], kind: RewardKind) -> Vec<Result<RewardResult, RewardError>> {
        self.pool.install(|| {
            items
                .par_iter()
                .map(|item| self.score(&item.prompt_id, &item.response, kind))
                .collect()
        })
    }

    pub fn stats(&self) -> EngineStats {
        let scored = self.counters.scored.load(Ordering::Relaxed);
        let cache_hits = self.counters.cache_hits.load(Ordering::Relaxed);
        let mut sorted = self.counters.latencies.lock().0.clone();
        sorted.sort_by(f64::total_cmp);
        let mut verifier_calls: BTreeMap<String, u64> = RewardKind::ALL_NAMES
            .iter()
            .map(|n| (n.parse::<RewardKind>().expect("known name").stat_label().to_string(), 0))
            .collect();
        for (label, n) in self.counters.calls.lock().iter() {
            verifier_calls.insert(label.to_string(), *n);
        }
        EngineStats {
            scored,
            cache_hits,
            cache_hit_rate: if scored == 0 { 0.0 } else { cache_hits as f64 / scored as f64 },
            errors: self.counters.errors.load(Ordering::Relaxed),
            verifier_calls,
            latency_p50_ms: percentile(&sorted, 50.0),
            latency_p95_ms: percentile(&sorted, 95.0),
        }
    }
}

fn map_verification_error(e: VerificationError) -> RewardError {
    match e {
        VerificationError::VerifierUnavailable(m) => RewardError::VerifierUnavailable(m),
        other => RewardError::InvalidRequest(other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_rank_percentiles() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(percentile(&v, 50.0), Some(10.0));
        assert_eq!(percentile(&v, 95.0), Some(19.0));
        assert_eq!(percentile(&[], 50.0), None);
        assert_eq!(percentile(&[3.0], 95.0), Some(3.0));
    }
}
