//! The assembled pipeline behind one façade.
//!
//! `MemoryEngine` owns the stores, the per-user dialogue buffers and the
//! gateway, and sequences one turn end to end: plan, retrieve, answer,
//! remember. The long-term graph is published as an immutable snapshot
//! behind an `Arc`, so consolidation works on a private clone and commits
//! by swapping the pointer; queries in flight keep reading the old graph
//! and are never blocked for longer than that swap.
//!
//! Lock order, where two are ever held: the cycle-state lock is outermost,
//! store locks innermost, and no store lock is held across a gateway call
//! except the MTM lock during its own coarse search.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};

use crate::consolidator::{run_cycle_on_batch, select_batch, ConsolidationConfig, CycleReport};
use crate::embedding::{embed, EmbeddingConfig};
use crate::error::{Error, Result};
use crate::gateway::{DegradationEvent, Gateway};
use crate::metrics::latency_percentiles;
use crate::persistence::{load_snapshot, save_snapshot};
use crate::planner::{build_plan, PlannerConfig};
use crate::retrieval::{build_prompt, stage1_coarse, stage2_filter, RetrievedSet, Stage2Mode};
use crate::stm::StmBuffer;
use crate::store::{LtmGraph, MtmStore};
use crate::types::{DialogueTurn, MemoryItem, NodeKind, UserId};
use crate::writer::{summarize_turn, write_mtm, MtmConfig, WriteOutcome};

/// Answer used when retrieval comes back empty. Deterministic on purpose.
pub const NO_MEMORY_ANSWER: &str = "no stored memory covers this yet.";

/// Wall-clock for serving, logical for anything that must replay exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClockMode {
    System,
    Logical { start_ms: i64, step_ms: i64 },
}

impl ClockMode {
    pub fn logical() -> Self {
        ClockMode::Logical {
            start_ms: 0,
            step_ms: 1_000,
        }
    }
}

#[derive(Debug)]
struct EngineClock {
    mode: ClockMode,
    logical_now: Mutex<i64>,
}

impl EngineClock {
    fn new(mode: ClockMode) -> Self {
        let start = match mode {
            ClockMode::System => 0,
            ClockMode::Logical { start_ms, .. } => start_ms,
        };
        Self {
            mode,
            logical_now: Mutex::new(start),
        }
    }

    fn wall_ms() -> i64 {
        SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis() as i64)
            .unwrap_or(0)
    }

    fn now(&self) -> i64 {
        match self.mode {
            ClockMode::System => Self::wall_ms(),
            ClockMode::Logical { .. } => *self.logical_now.lock(),
        }
    }

    /// Timestamp for a new turn; logical mode steps forward per call.
    fn now_and_advance(&self) -> i64 {
        match self.mode {
            ClockMode::System => Self::wall_ms(),
            ClockMode::Logical { step_ms, .. } => {
                let mut now = self.logical_now.lock();
                let at = *now;
                *now += step_ms;
                at
            }
        }
    }

    fn tick(&self, ms: i64) {
        if let ClockMode::Logical { .. } = self.mode {
            *self.logical_now.lock() += ms;
        }
    }
}

/// One query's latency accounting. Retrieval covers planning through prompt
/// assembly; end-to-end adds answer generation and always contains it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyRecord {
    pub query_id: String,
    pub retrieval_ms: f64,
    pub end_to_end_ms: f64,
    pub timestamp_ms: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub count: usize,
    pub retrieval_p50_ms: f64,
    pub retrieval_p95_ms: f64,
    pub end_to_end_p50_ms: f64,
    pub end_to_end_p95_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResponse {
    pub query_id: String,
    pub answer: String,
    pub prompt: String,
    pub retrieved: RetrievedSet,
    pub latency: LatencyRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LtmStats {
    pub node_count: usize,
    pub edge_count: usize,
    pub entity_count: usize,
    pub concept_count: usize,
    pub relation_counts: BTreeMap<String, usize>,
    pub mean_confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MtmPage {
    pub user_id: String,
    pub total: usize,
    pub offset: usize,
    pub items: Vec<MemoryItem>,
}

/// What one consolidation call did. `ran` is false for an empty batch,
/// which leaves every store bit for bit untouched.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsolidateOutcome {
    pub ran: bool,
    pub report: CycleReport,
    pub commit_micros: u128,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub embedding: EmbeddingConfig,
    pub planner: PlannerConfig,
    pub mtm: MtmConfig,
    pub consolidation: ConsolidationConfig,
    pub stage2: Stage2Mode,
    pub stm_max_turns: usize,
    pub stm_max_tokens: usize,
    pub clock: ClockMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            embedding: EmbeddingConfig::default(),
            planner: PlannerConfig::default(),
            mtm: MtmConfig::default(),
            consolidation: ConsolidationConfig::default(),
            stage2: Stage2Mode::Model,
            stm_max_turns: crate::stm::DEFAULT_MAX_TURNS,
            stm_max_tokens: crate::stm::DEFAULT_MAX_TOKENS,
            clock: ClockMode::System,
        }
    }
}

impl EngineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding.dimension == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        if self.planner.k == 0 {
            return Err(Error::Config("k must be positive".into()));
        }
        if self.planner.max_hqs == 0 {
            return Err(Error::Config("max_hqs must be positive".into()));
        }
        if self.stm_max_turns == 0 || self.stm_max_tokens == 0 {
            return Err(Error::Config("stm limits must be positive".into()));
        }
        self.mtm.validate()?;
        self.consolidation.validate()?;
        if let ClockMode::Logical { step_ms, .. } = self.clock {
            if step_ms <= 0 {
                return Err(Error::Config("logical clock step must be positive".into()));
            }
        }
        Ok(())
    }

    /// Small-dimension logical-clock setup used across tests and benches.
    pub fn deterministic(dimension: usize) -> Self {
        Self {
            embedding: EmbeddingConfig::mock(dimension),
            clock: ClockMode::logical(),
            ..Self::default()
        }
    }
}

#[derive(Debug)]
struct UserSession {
    stm: StmBuffer,
    next_turn: u64,
}

#[derive(Debug, Default)]
struct CycleState {
    turns_since_cycle: u32,
    cycles_run: u64,
}

#[derive(Debug)]
pub struct MemoryEngine {
    config: EngineConfig,
    gateway: Gateway,
    mtm: RwLock<MtmStore>,
    ltm: RwLock<Arc<LtmGraph>>,
    sessions: Mutex<BTreeMap<UserId, UserSession>>,
    latency_log: Mutex<Vec<LatencyRecord>>,
    degradations: Mutex<Vec<DegradationEvent>>,
    cycle_state: Mutex<CycleState>,
    clock: EngineClock,
    query_seq: AtomicU64,
}

impl MemoryEngine {
    pub fn new(config: EngineConfig, gateway: Gateway) -> Result<Self> {
        config.validate()?;
        let dimension = config.embedding.dimension;
        Ok(Self {
            clock: EngineClock::new(config.clock),
            mtm: RwLock::new(MtmStore::new(dimension)),
            ltm: RwLock::new(Arc::new(LtmGraph::new(dimension))),
            sessions: Mutex::new(BTreeMap::new()),
            latency_log: Mutex::new(Vec::new()),
            degradations: Mutex::new(Vec::new()),
            cycle_state: Mutex::new(CycleState::default()),
            query_seq: AtomicU64::new(0),
            config,
            gateway,
        })
    }

    /// Rebuilds an engine from a snapshot directory. Dialogue buffers and
    /// the metrics log start fresh; only the stores are durable.
    pub fn load(dir: &Path, config: EngineConfig, gateway: Gateway) -> Result<Self> {
        let (mtm, ltm) = load_snapshot(dir)?;
        if mtm.dimension() != config.embedding.dimension {
            return Err(Error::Config(format!(
                "snapshot dimension {} does not match configured dimension {}",
                mtm.dimension(),
                config.embedding.dimension
            )));
        }
        let engine = Self::new(config, gateway)?;
        *engine.mtm.write() = mtm;
        *engine.ltm.write() = Arc::new(ltm);
        Ok(engine)
    }

    pub fn snapshot(&self, dir: &Path) -> Result<()> {
        let mtm = self.mtm.read();
        let ltm = self.ltm.read().clone();
        save_snapshot(dir, &mtm, &ltm)
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn now_ms(&self) -> i64 {
        self.clock.now()
    }

    /// Advances the logical clock; no effect on the system clock.
    pub fn tick(&self, ms: i64) {
        self.clock.tick(ms);
    }

    pub fn mtm_len(&self) -> usize {
        self.mtm.read().len()
    }

    pub fn user_len(&self, user_id: &str) -> usize {
        self.mtm.read().user_len(&UserId::from(user_id))
    }

    pub fn handoff_len(&self) -> usize {
        self.mtm.read().handoff_len()
    }

    /// Current published graph snapshot.
    pub fn ltm(&self) -> Arc<LtmGraph> {
        self.ltm.read().clone()
    }

    pub fn cycles_run(&self) -> u64 {
        self.cycle_state.lock().cycles_run
    }

    pub fn latency_records(&self) -> Vec<LatencyRecord> {
        self.latency_log.lock().clone()
    }

    pub fn degradation_events(&self) -> Vec<DegradationEvent> {
        self.degradations.lock().clone()
    }

    fn record_events(&self, events: impl IntoIterator<Item = DegradationEvent>) {
        let mut log = self.degradations.lock();
        log.extend(events);
    }

    fn record_failure(&self, component: &str, reason: &str, detail: String, at_ms: i64) {
        self.record_events([DegradationEvent {
            component: component.into(),
            reason: reason.into(),
            detail,
            at_ms,
        }]);
    }

    /// One dialogue turn: plan, retrieve, answer, log latency, then remember
    /// the exchange. The memory write runs after the answer is fixed, so its
    /// cost never shows up in `end_to_end_ms`; a crash in between loses at
    /// most this turn's memory.
    pub fn handle_query(&self, user_id: &str, text: &str) -> Result<QueryResponse> {
        if text.trim().is_empty() {
            return Err(Error::EmptyText);
        }
        let user = UserId::from(user_id);
        let started = Instant::now();
        let now_ms = self.clock.now_and_advance();
        let query_id = format!("q{:06}", self.query_seq.fetch_add(1, Ordering::Relaxed) + 1);

        let context = {
            let mut sessions = self.sessions.lock();
            sessions
                .entry(user.clone())
                .or_insert_with(|| self.new_session(&user))
                .stm
                .window()
        };

        let retrieval_start = Instant::now();
        let (plan, mut events) = build_plan(
            text,
            &context,
            &user,
            now_ms,
            &self.config.planner,
            &self.gateway,
            &self.config.embedding,
        )?;
        let ltm = self.ltm.read().clone();
        let pool = {
            let mut mtm = self.mtm.write();
            stage1_coarse(&plan, &mut mtm, &ltm, now_ms)?
        };
        let (retrieved, stage2_events) =
            stage2_filter(&plan, &pool, self.config.stage2, &self.gateway, now_ms)?;
        events.extend(stage2_events);
        let memories = build_prompt(&retrieved);
        let retrieval_micros = retrieval_start.elapsed().as_micros();

        let answer = retrieved
            .entries
            .first()
            .map(|entry| entry.summary.clone())
            .unwrap_or_else(|| NO_MEMORY_ANSWER.to_string());
        let prompt = compose_prompt(&context, &memories, text);
        let end_to_end_micros = started.elapsed().as_micros();

        let latency = LatencyRecord {
            query_id: query_id.clone(),
            retrieval_ms: retrieval_micros as f64 / 1_000.0,
            end_to_end_ms: end_to_end_micros as f64 / 1_000.0,
            timestamp_ms: now_ms,
        };
        self.latency_log.lock().push(latency.clone());
        self.record_events(events);

        let turn = {
            let mut sessions = self.sessions.lock();
            let session = sessions
                .entry(user.clone())
                .or_insert_with(|| self.new_session(&user));
            let turn = DialogueTurn {
                user_id: user.clone(),
                turn_index: session.next_turn,
                input_text: text.to_string(),
                response_text: Some(answer.clone()),
                timestamp_ms: now_ms,
            };
            session.next_turn += 1;
            session
                .stm
                .append(turn.clone())
                .expect("engine issues strictly increasing turn indexes");
            turn
        };
        self.run_writer(&turn, &context, now_ms);
        self.after_turn(now_ms);

        Ok(QueryResponse {
            query_id,
            answer,
            prompt,
            retrieved,
            latency,
        })
    }

    fn new_session(&self, user: &UserId) -> UserSession {
        UserSession {
            stm: StmBuffer::new(
                user.clone(),
                self.config.stm_max_turns,
                self.config.stm_max_tokens,
            )
            .expect("validated stm limits"),
            next_turn: 0,
        }
    }

    fn run_writer(&self, turn: &DialogueTurn, context: &str, now_ms: i64) {
        match summarize_turn(turn, context, &self.gateway) {
            Ok((summaries, events)) => {
                self.record_events(events);
                for summary in summaries {
                    if let Err(err) = self.write_summary(&turn.user_id, &summary, now_ms) {
                        self.record_failure("writer", "write failed", err.to_string(), now_ms);
                    }
                }
            }
            Err(err) => {
                self.record_failure("writer", "backend failure", err.to_string(), now_ms);
            }
        }
    }

    fn write_summary(&self, user: &UserId, summary: &str, now_ms: i64) -> Result<WriteOutcome> {
        let vector = embed(summary, &self.config.embedding)?;
        let mut mtm = self.mtm.write();
        let id = mtm.allocate_id();
        let item = MemoryItem::new(id, user.clone(), summary, vector, now_ms);
        write_mtm(&mut mtm, item, &self.config.mtm)
    }

    /// Inserts one memory without a dialogue turn. Corpus loading for
    /// benchmarks; runs the same maintenance as the dialogue path.
    pub fn seed_memory(&self, user_id: &str, summary: &str) -> Result<WriteOutcome> {
        let now_ms = self.clock.now_and_advance();
        self.write_summary(&UserId::from(user_id), summary, now_ms)
    }

    fn after_turn(&self, now_ms: i64) {
        let interval = self.config.consolidation.trigger_interval_turns;
        let due = {
            let mut state = self.cycle_state.lock();
            state.turns_since_cycle += 1;
            state.turns_since_cycle >= interval
        };
        let pressured = self.mtm.read().handoff_len() >= self.config.mtm.eviction_batch;
        if due || pressured {
            if let Err(err) = self.consolidate() {
                self.record_failure("consolidator", "cycle failed", err.to_string(), now_ms);
            }
        }
    }

    /// One offline cycle. The batch is lifted out under a short store lock,
    /// the heavy work runs on a private graph clone, and the publish is a
    /// pointer swap timed in `commit_micros`.
    pub fn consolidate(&self) -> Result<ConsolidateOutcome> {
        let mut state = self.cycle_state.lock();
        let now_ms = self.clock.now();
        let batch = {
            let mut mtm = self.mtm.write();
            select_batch(&mut mtm)
        };
        let outcome = if batch.is_empty() {
            ConsolidateOutcome {
                ran: false,
                report: CycleReport::default(),
                commit_micros: 0,
            }
        } else {
            let snapshot = self.ltm.read().clone();
            let (next, report) = run_cycle_on_batch(
                &batch,
                &snapshot,
                &self.gateway,
                &self.config.consolidation,
                &self.config.embedding,
                now_ms,
            )?;
            let commit_start = Instant::now();
            *self.ltm.write() = Arc::new(next);
            let commit_micros = commit_start.elapsed().as_micros();
            self.record_events(report.events.clone());
            ConsolidateOutcome {
                ran: true,
                report,
                commit_micros,
            }
        };
        state.turns_since_cycle = 0;
        state.cycles_run += 1;
        Ok(outcome)
    }

    /// Stable page over one user's items, insertion order.
    pub fn list_mtm(&self, user_id: &str, offset: usize, limit: usize) -> MtmPage {
        let mtm = self.mtm.read();
        let items = mtm.user_items(&UserId::from(user_id));
        let page = items
            .iter()
            .skip(offset)
            .take(limit)
            .cloned()
            .collect();
        MtmPage {
            user_id: user_id.to_string(),
            total: items.len(),
            offset,
            items: page,
        }
    }

    pub fn ltm_stats(&self) -> LtmStats {
        let graph = self.ltm.read().clone();
        let mut relation_counts = BTreeMap::new();
        for edge in graph.edges() {
            *relation_counts
                .entry(edge.relation.as_str().to_string())
                .or_insert(0) += 1;
        }
        let entity_count = graph
            .nodes()
            .iter()
            .filter(|n| n.kind == NodeKind::Entity)
            .count();
        let mean_confidence = if graph.is_empty() {
            0.0
        } else {
            graph.nodes().iter().map(|n| n.confidence).sum::<f64>() / graph.len() as f64
        };
        LtmStats {
            node_count: graph.len(),
            edge_count: graph.edge_len(),
            entity_count,
            concept_count: graph.len() - entity_count,
            relation_counts,
            mean_confidence,
        }
    }

    pub fn latency_report(&self) -> LatencyReport {
        let log = self.latency_log.lock();
        if log.is_empty() {
            return LatencyReport {
                count: 0,
                retrieval_p50_ms: 0.0,
                retrieval_p95_ms: 0.0,
                end_to_end_p50_ms: 0.0,
                end_to_end_p95_ms: 0.0,
            };
        }
        let retrieval: Vec<f64> = log.iter().map(|r| r.retrieval_ms).collect();
        let end_to_end: Vec<f64> = log.iter().map(|r| r.end_to_end_ms).collect();
        let r = latency_percentiles(&retrieval).expect("log is non-empty");
        let e = latency_percentiles(&end_to_end).expect("log is non-empty");
        LatencyReport {
            count: log.len(),
            retrieval_p50_ms: r.p50,
            retrieval_p95_ms: r.p95,
            end_to_end_p50_ms: e.p50,
            end_to_end_p95_ms: e.p95,
        }
    }
}

fn compose_prompt(context: &str, memories: &str, text: &str) -> String {
    let mut out = String::new();
    if !context.is_empty() {
        out.push_str(context);
        out.push('\n');
    }
    out.push_str(memories);
    out.push('\n');
    out.push_str("user: ");
    out.push_str(text);
    out
}
