use std::collections::{BTreeMap, BTreeSet, VecDeque};

use sha2::{Digest, Sha256};
use tracing::{debug, info};

use super::{
    BackendChoice, CommandChannel, DecisionPolicy, Gate, GateKind, Mode, Phase, Session, SessionConfig, SessionError,
    SessionEvent, SessionReport, SessionState, StepOutcome, TaskOutcome, MAX_BACKEND_RETRIES,
};
use crate::ids::{AgentId, Cell, TaskId};
use crate::knowledge::{IngestReceipt, KnowledgeBase};
use crate::messaging::{
    assignment_line, parse_mentions, summarize, Channel, ChatMessage, ChatRoom, Decision, DirectPeer, Mention,
    MessageKind, RoutingError, Sender,
};
use crate::planner::{
    allocate, estimate_cost, plan_task, reveal_evidence, validate_backend_output, verify, Allocation, AllocationInput,
    Assignment, BackendRequest, CommandBackend, PlannerBackend, ProposedAssignment, RecordedBackend, RejectReason,
    RobotBrief, TaskBrief, TaskPlan, TaskSpec, TaskState, Verdict, BACKEND_SCHEMA,
};
use crate::robot::{ActionCommand, RobotProfile};
use crate::world::{check_goal, Scenario, WorldState};

/// Builds a message whose body the session generated itself.
fn message(sender: Sender, channel: Channel, kind: MessageKind, body: impl Into<String>) -> ChatMessage {
    ChatMessage::new(sender, channel, kind, body).expect("generated bodies carry well-formed mentions")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes).as_slice())
}

/// Validates `config`, instantiates `scenario` for the configured seed and
/// starts the run: manuals ingested, task description posted, first
/// allocation pending.
pub fn start_session(config: SessionConfig, scenario: &Scenario) -> Result<Session, SessionError> {
    let mut session = Session::new(config, scenario)?;
    session.start()?;
    Ok(session)
}

impl Session {
    /// A session in [`Phase::Init`]; robots may still be added.
    pub fn new(config: SessionConfig, scenario: &Scenario) -> Result<Self, SessionError> {
        config.validate()?;
        let world = scenario.instantiate(config.seed);
        let mut unrevealed = BTreeMap::new();
        let mut published = BTreeMap::new();
        for hidden in &scenario.hidden {
            let truth = world.terrain.get(hidden.at).copied();
            let shown = scenario.world.terrain.get(hidden.at).copied();
            if let (Some(truth), Some(shown)) = (truth, shown) {
                if truth != shown {
                    unrevealed.insert(hidden.at, truth);
                    published.insert(hidden.at, shown);
                }
            }
        }
        let roster: Vec<AgentId> = world.profiles.keys().cloned().collect();
        let mut tasks = scenario.tasks.clone();
        for task in &mut tasks {
            task.state = TaskState::Pending;
        }
        let state = SessionState {
            scenario: scenario.name.clone(),
            description: scenario.description.clone(),
            phase: Phase::Init,
            step_count: 0,
            decisions: 0,
            infeasible_actions: 0,
            room: ChatRoom::new(roster),
            summary: Default::default(),
            max_ticks: config.max_ticks.unwrap_or(scenario.max_ticks),
            world,
            tasks,
            knowledge: KnowledgeBase::new(),
            manuals: scenario
                .manuals
                .iter()
                .map(|m| (m.agent.clone(), m.path.clone(), m.text.clone()))
                .collect(),
            unrevealed,
            published,
            live: BTreeMap::new(),
            plans: BTreeMap::new(),
            legs: BTreeMap::new(),
            in_flight: BTreeMap::new(),
            commands: BTreeMap::new(),
            exclusions: BTreeSet::new(),
            held: BTreeMap::new(),
            retry_gated: BTreeSet::new(),
            gates: VecDeque::new(),
            hard_faults: BTreeSet::new(),
            instructions: Vec::new(),
            decision_cursor: 0,
            backend_cursor: 0,
            last_decision: None,
            needs_planning: false,
            realloc: false,
        };
        Ok(Self {
            config,
            scenario_hash: scenario.content_hash(),
            state,
            events: Vec::new(),
        })
    }

    pub(super) fn from_parts(config: SessionConfig, scenario_hash: String, state: SessionState) -> Self {
        Self {
            config,
            scenario_hash,
            state,
            events: Vec::new(),
        }
    }

    /// Adds a robot before the session starts.
    pub fn add_robot(&mut self, profile: RobotProfile, at: Cell) -> Result<(), SessionError> {
        if self.state.phase != Phase::Init {
            return Err(SessionError::NotInInit);
        }
        let mut problems = profile.violations();
        if self.state.world.profiles.contains_key(&profile.id) {
            problems.push(format!("robot `{}` already in the roster", profile.id));
        }
        if !self.state.world.terrain.in_bounds(at) {
            problems.push(format!("{at} is outside the map"));
        }
        if !problems.is_empty() {
            return Err(SessionError::Config(problems.join("; ")));
        }
        self.state.world.add_robot(profile, at);
        self.state.room = ChatRoom::new(self.state.world.profiles.keys().cloned());
        Ok(())
    }

    /// Ingests a manual into `agent`'s private knowledge base.
    pub fn upload_manual(&mut self, agent: &AgentId, text: &str, name: &str) -> Result<IngestReceipt, SessionError> {
        if !self.state.world.profiles.contains_key(agent) {
            return Err(SessionError::UnknownAgent(agent.to_string()));
        }
        let receipt = self.state.knowledge.ingest_manual(agent, text, name)?;
        if self.state.phase != Phase::Init {
            self.post(message(
                Sender::Assistant,
                Channel::Group,
                MessageKind::Info,
                format!(
                    "manual {} v{} ingested for {agent} ({} chunks)",
                    receipt.doc_id, receipt.version, receipt.chunks
                ),
            ));
        }
        Ok(receipt)
    }

    /// Leaves Init: ingests scenario manuals, posts the task description and
    /// queues the first allocation round.
    pub fn start(&mut self) -> Result<(), SessionError> {
        if self.state.phase != Phase::Init {
            return Err(SessionError::NotInInit);
        }
        // Ingest everything first so a bad manual leaves no partial session.
        let mut knowledge = self.state.knowledge.clone();
        let mut receipts = Vec::new();
        for (agent, name, text) in &self.state.manuals {
            receipts.push((agent.clone(), knowledge.ingest_manual(agent, text, name)?));
        }
        let description = if self.state.description.trim().is_empty() {
            let ids: Vec<&str> = self.state.tasks.iter().map(|t| t.id.as_str()).collect();
            format!("tasks: {}", ids.join(", "))
        } else {
            self.state.description.clone()
        };
        let opening = ChatMessage::new(Sender::Human, Channel::Group, MessageKind::Info, description)?;
        self.state.knowledge = knowledge;
        self.state.manuals.clear();
        self.post(opening);
        for (agent, receipt) in receipts {
            self.post(message(
                Sender::Assistant,
                Channel::Group,
                MessageKind::Info,
                format!(
                    "manual {} ingested for {agent} ({} chunks)",
                    receipt.doc_id, receipt.chunks
                ),
            ));
        }
        for idx in 0..self.state.tasks.len() {
            if self.goals_hold(&self.state.tasks[idx].goals) {
                let id = self.state.tasks[idx].id.clone();
                self.set_state(&id, TaskState::Done);
                self.post_task_status(Sender::Assistant, None, &id, TaskState::Done, "already satisfied");
            }
        }
        self.set_phase(Phase::Allocating);
        self.state.needs_planning = true;
        info!(scenario = %self.state.scenario, mode = %self.config.mode, seed = self.config.seed, "session started");
        self.check_termination();
        Ok(())
    }

    /// Advances the session by one planning opportunity and one tick.
    pub fn step(&mut self) -> StepOutcome {
        match self.state.phase {
            Phase::Init => return StepOutcome::NotStarted,
            p if p.is_terminal() => return StepOutcome::Finished,
            _ => {}
        }
        if !self.state.gates.is_empty() {
            return StepOutcome::AwaitingDecision;
        }
        if self.state.needs_planning {
            self.plan_round();
            if !self.state.gates.is_empty() {
                return StepOutcome::AwaitingDecision;
            }
        }
        if self.check_termination() {
            return StepOutcome::Finished;
        }
        self.exec_tick();
        self.after_tick();
        if self.check_termination() {
            return StepOutcome::Finished;
        }
        StepOutcome::Ticked
    }

    /// Steps until finished or blocked on a decision.
    pub fn run_until_blocked(&mut self) -> StepOutcome {
        loop {
            match self.step() {
                StepOutcome::Ticked => {}
                other => return other,
            }
        }
    }

    /// Runs to the end. Gates nobody answers time out to yes.
    pub fn run_to_completion(&mut self) -> SessionReport {
        if self.state.phase == Phase::Init {
            if let Err(err) = self.start() {
                debug!(%err, "start failed");
            }
        }
        while self.run_until_blocked() == StepOutcome::AwaitingDecision {
            self.time_out_gate();
        }
        self.report()
    }

    /// Answers the oldest pending gate.
    pub fn decide(&mut self, decision: Decision) -> Result<(), SessionError> {
        if self.state.phase.is_terminal() {
            return Err(SessionError::SessionClosed);
        }
        let gate = self.state.gates.pop_front().ok_or(SessionError::NoPendingDecision)?;
        self.record_decision(decision);
        self.resolve_gate(gate.kind, decision, true);
        Ok(())
    }

    /// Posts a human command. Robot-executable payloads (`climb_up`,
    /// `move_to 3,4`, `stop`, ...) are queued for each addressed robot; every
    /// addressed robot acknowledges. Returns the acknowledgement seqs.
    pub fn human_command(&mut self, text: &str, channel: CommandChannel) -> Result<Vec<u64>, SessionError> {
        match self.state.phase {
            Phase::Init => return Err(SessionError::NotStarted),
            p if p.is_terminal() => return Err(SessionError::SessionClosed),
            _ => {}
        }
        let (mentions, payload) = parse_mentions(text)?;
        let channel = match channel {
            CommandChannel::Group => Channel::Group,
            CommandChannel::Direct(target) => Channel::Direct {
                peer: DirectPeer::Human,
                target,
            },
        };
        let msg = ChatMessage::new(Sender::Human, channel.clone(), MessageKind::HumanCommand, text)?
            .at_tick(self.state.world.tick);
        match self.state.room.post(msg) {
            Ok(seq) => self.emit_posted(seq),
            Err(RoutingError::UnknownAgent(a)) => return Err(SessionError::UnknownAgent(a)),
        }
        let recipients: Vec<AgentId> = match &channel {
            Channel::Direct { target, .. } => vec![target.clone()],
            Channel::Group if mentions.contains(&Mention::Broadcast) => {
                self.state.world.profiles.keys().cloned().collect()
            }
            Channel::Group => mentions
                .iter()
                .filter_map(|m| match m {
                    Mention::Agent(a) => Some(a.clone()),
                    _ => None,
                })
                .collect(),
        };
        if channel == Channel::Group && !payload.is_empty() {
            self.state.instructions.push(payload.clone());
        }
        let action = ActionCommand::parse(&payload);
        let mut acks = Vec::new();
        for agent in recipients {
            let body = match &action {
                Some(a) => {
                    self.state
                        .commands
                        .entry(agent.clone())
                        .or_default()
                        .push_back(a.clone());
                    format!("ack: queued {a}")
                }
                None => "ack: noted".to_string(),
            };
            let ack_channel = match &channel {
                Channel::Group => Channel::Group,
                Channel::Direct { .. } => Channel::Direct {
                    peer: DirectPeer::Human,
                    target: agent.clone(),
                },
            };
            acks.push(self.post(message(Sender::Robot(agent), ack_channel, MessageKind::Info, body)));
        }
        Ok(acks)
    }

    pub fn report(&self) -> SessionReport {
        let log = self.state.room.log().clone();
        let outcomes: Vec<TaskOutcome> = self
            .state
            .tasks
            .iter()
            .map(|t| TaskOutcome {
                task: t.id.clone(),
                state: t.state,
            })
            .collect();
        SessionReport {
            scenario: self.state.scenario.clone(),
            scenario_hash: self.scenario_hash.clone(),
            mode: self.config.mode,
            seed: self.config.seed,
            phase: self.state.phase,
            success: outcomes.iter().all(|o| o.state == TaskState::Done),
            outcomes,
            step_count: self.state.step_count,
            tick_count: self.state.world.tick,
            decisions: self.state.decisions,
            infeasible_actions: self.state.infeasible_actions,
            log_sha256: sha256_hex(log.to_ndjson().as_bytes()),
            world_sha256: self.state.world.state_hash(),
            log,
        }
    }

    /// The assistant's picture of the world: truth with every unseen
    /// hidden cell shown as published.
    pub fn belief(&self) -> WorldState {
        let mut view = self.state.world.clone();
        for (cell, shown) in &self.state.published {
            if self.state.unrevealed.contains_key(cell) {
                view.terrain.set(*cell, *shown);
            }
        }
        view
    }

    // ---------------------------------------------------------------------
    // Posting and bookkeeping

    /// Stamps `msg` with the current tick and appends it.
    fn post(&mut self, msg: ChatMessage) -> u64 {
        let tick = self.state.world.tick;
        self.post_stamped(msg.at_tick(tick))
    }

    fn post_stamped(&mut self, msg: ChatMessage) -> u64 {
        let seq = self
            .state
            .room
            .post(msg)
            .expect("session messages reference roster agents only");
        self.emit_posted(seq);
        seq
    }

    fn emit_posted(&mut self, seq: u64) {
        if let Some(msg) = self.state.room.log().get(seq) {
            self.events.push(SessionEvent::Message(msg.clone()));
        }
    }

    fn set_phase(&mut self, to: Phase) {
        let from = self.state.phase;
        if from != to {
            debug!(%from, %to, "phase");
            self.state.phase = to;
            self.events.push(SessionEvent::PhaseChange { from, to });
        }
    }

    fn task(&self, id: &TaskId) -> &TaskSpec {
        self.state.tasks.iter().find(|t| &t.id == id).expect("known task")
    }

    fn set_state(&mut self, id: &TaskId, to: TaskState) {
        let task = self.state.tasks.iter_mut().find(|t| &t.id == id).expect("known task");
        if let Err(err) = task.transition(to) {
            panic!("session bug: {err} for task {id}");
        }
    }

    fn post_task_status(
        &mut self,
        sender: Sender,
        agent: Option<&AgentId>,
        task: &TaskId,
        state: TaskState,
        note: &str,
    ) {
        let body = if note.is_empty() {
            format!("{task}: {state}")
        } else {
            format!("{task}: {state} ({note})")
        };
        self.post(message(
            sender,
            Channel::Group,
            MessageKind::StatusUpdate {
                agent: agent.cloned(),
                robot: None,
                task: Some(task.clone()),
                state: Some(state),
            },
            body,
        ));
    }

    fn goals_hold(&self, goals: &[crate::world::Predicate]) -> bool {
        check_goal(&self.state.world, goals).is_ok_and(|c| c.satisfied)
    }

    fn roster(&self) -> Vec<AgentId> {
        self.state.world.profiles.keys().cloned().collect()
    }

    fn agent_task(&self, agent: &AgentId) -> Option<TaskId> {
        self.state
            .live
            .iter()
            .find(|(_, a)| &a.agent == agent)
            .map(|(t, _)| t.clone())
    }

    fn fail_task(&mut self, task: &TaskId, why: &str) {
        self.set_state(task, TaskState::Failed);
        self.post_task_status(Sender::Assistant, None, task, TaskState::Failed, why);
    }

    // ---------------------------------------------------------------------
    // Planning

    fn open_tasks(&self) -> Vec<TaskSpec> {
        let gated: BTreeSet<&TaskId> = self.state.gates.iter().map(|g| g.kind.task()).collect();
        self.state
            .tasks
            .iter()
            .filter(|t| matches!(t.state, TaskState::Pending | TaskState::Reassigning))
            .filter(|t| !self.state.held.contains_key(&t.id) && !gated.contains(&t.id))
            .cloned()
            .collect()
    }

    fn busy(&self) -> BTreeSet<AgentId> {
        self.state
            .live
            .values()
            .map(|a| a.agent.clone())
            .chain(self.state.held.values().cloned())
            .collect()
    }

    fn candidates(&self) -> Vec<AgentId> {
        self.roster()
            .into_iter()
            .filter(|a| !self.state.hard_faults.contains(a))
            .collect()
    }

    /// Doors some unfinished task will open.
    fn assume_open(&self) -> BTreeSet<Cell> {
        self.state
            .tasks
            .iter()
            .filter(|t| !t.state.is_terminal())
            .flat_map(|t| t.doors_opened())
            .collect()
    }

    /// Allocation rounds until a fixpoint: assign, verify, and on any
    /// rejection refresh statuses and reallocate.
    fn plan_round(&mut self) {
        loop {
            self.state.needs_planning = false;
            self.set_phase(if self.state.realloc {
                Phase::Reallocating
            } else {
                Phase::Allocating
            });
            self.state.summary = summarize(self.state.room.log());
            let open = self.open_tasks();
            if open.is_empty() {
                break;
            }
            let view = self.belief();
            let assume_open = self.assume_open();
            let allocation = self.propose(&open, &view, &assume_open);

            for task in &allocation.unassignable {
                if self.config.mode.human_gates() {
                    if !self.state.retry_gated.contains(task) {
                        self.open_gate(GateKind::Unassignable { task: task.clone() });
                    }
                } else {
                    self.fail_task(task, "no capable robot");
                }
            }
            if allocation.assignments.is_empty() {
                if self.state.needs_planning {
                    continue;
                }
                break;
            }

            let mut fresh: Vec<(TaskId, AgentId)> = Vec::new();
            for (task, agent, rationale) in allocation
                .assignments
                .iter()
                .map(|(t, a, c)| (t.clone(), a.clone(), format!("estimated cost {c}")))
            {
                self.commit_assignment(&task, &agent, rationale);
                fresh.push((task, agent));
            }
            fresh.sort_by(|a, b| a.1.cmp(&b.1));

            let mut rejected = false;
            if self.config.mode.verifies() {
                self.set_phase(Phase::Verifying);
                for (task, agent) in fresh {
                    rejected |= !self.verify_and_start(&task, &agent);
                }
            } else {
                for (task, agent) in fresh {
                    let profile = self.state.world.profiles[&agent].clone();
                    let status = self.state.world.robots[&agent].clone();
                    let goals = self.task(&task).goals.clone();
                    let plan = plan_task(&profile, &status, &goals, &view, &assume_open);
                    self.start_execution(&task, &agent, plan);
                }
            }
            if rejected || self.state.needs_planning {
                self.refresh_round();
                self.state.realloc = true;
                continue;
            }
            break;
        }
        self.state.realloc = false;
        self.state.needs_planning = false;
        self.set_phase(Phase::Executing);
    }

    fn commit_assignment(&mut self, task: &TaskId, agent: &AgentId, rationale: String) {
        self.set_state(task, TaskState::Assigned);
        let seq = self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::TaskAssignment {
                task: task.clone(),
                agent: agent.clone(),
            },
            assignment_line(agent, task),
        ));
        self.state.live.insert(
            task.clone(),
            Assignment {
                task: task.clone(),
                agent: agent.clone(),
                rationale,
                created_at: seq,
            },
        );
    }

    /// The robot checks the assignment on its own view. Returns false on a
    /// rejection.
    fn verify_and_start(&mut self, task: &TaskId, agent: &AgentId) -> bool {
        let profile = self.state.world.profiles[agent].clone();
        let status = self.state.world.robots[agent].clone();
        let spec = self.task(task).clone();
        let (verdict, plan) = verify(&profile, &status, &spec, &self.state.world);
        self.post_verdict(task, agent, &verdict);
        match verdict {
            Verdict::Accept => {
                self.set_state(task, TaskState::Verified);
                self.start_execution(task, agent, plan);
                true
            }
            Verdict::Reject { reason } => {
                self.set_state(task, TaskState::Reassigning);
                self.state.live.remove(task);
                let disputed = reason == RejectReason::NoTraversablePath && self.disputes(&profile, agent, &spec);
                if disputed && self.config.mode.human_gates() {
                    self.open_gate(GateKind::Disagreement {
                        task: task.clone(),
                        agent: agent.clone(),
                    });
                } else {
                    self.state.exclusions.insert((task.clone(), agent.clone()));
                }
                false
            }
        }
    }

    fn post_verdict(&mut self, task: &TaskId, agent: &AgentId, verdict: &Verdict) {
        let body = match verdict {
            Verdict::Accept => format!("accept {task}"),
            Verdict::Reject { reason } => format!("reject {task}: {reason}"),
        };
        self.post(message(
            Sender::Robot(agent.clone()),
            Channel::Group,
            MessageKind::VerificationVerdict {
                task: task.clone(),
                agent: agent.clone(),
                verdict: verdict.clone(),
            },
            body,
        ));
    }

    /// After a no-path rejection the robot shares what it sees along the
    /// assistant's route; true when the assistant still rates the pair
    /// feasible.
    fn disputes(&mut self, profile: &RobotProfile, agent: &AgentId, task: &TaskSpec) -> bool {
        let assume_open = self.assume_open();
        let status = self.state.world.robots[agent].clone();
        let mut revealed = Vec::new();
        loop {
            let view = self.belief();
            let nominal = plan_task(profile, &status, &task.goals, &view, &assume_open);
            let cells = reveal_evidence(&mut self.state.unrevealed, &nominal);
            if cells.is_empty() {
                break;
            }
            revealed.extend(cells);
        }
        if !revealed.is_empty() {
            let cells: Vec<String> = revealed.iter().map(Cell::to_string).collect();
            self.post(message(
                Sender::Robot(agent.clone()),
                Channel::Group,
                MessageKind::Info,
                format!("terrain differs from the map at {}", cells.join(" ")),
            ));
        }
        estimate_cost(profile, &status, task, &self.belief(), &assume_open).is_some()
    }

    fn start_execution(&mut self, task: &TaskId, agent: &AgentId, plan: TaskPlan) {
        self.set_state(task, TaskState::Executing);
        let n = plan.actions.len();
        self.state.plans.insert(agent.clone(), plan.actions.into());
        self.state.legs.insert(agent.clone(), plan.legs);
        if let Some(status) = self.state.world.robots.get_mut(agent) {
            status.set_task(Some(task.clone()));
        }
        self.post_task_status(
            Sender::Robot(agent.clone()),
            Some(agent),
            task,
            TaskState::Executing,
            &format!("{n} actions planned"),
        );
    }

    fn propose(&mut self, open: &[TaskSpec], view: &WorldState, assume_open: &BTreeSet<Cell>) -> Allocation {
        let candidates = self.candidates();
        let busy = self.busy();
        let input = AllocationInput {
            tasks: open,
            view,
            candidates: &candidates,
            busy: &busy,
            assume_open,
            exclusions: &self.state.exclusions,
        };
        let rule = allocate(&input);
        if self.config.backend == BackendChoice::RuleBased {
            return rule;
        }
        let request = self.backend_request(open, &busy);
        let roster = self.roster();
        let open_ids: Vec<TaskId> = open.iter().map(|t| t.id.clone()).collect();
        for attempt in 0..=MAX_BACKEND_RETRIES {
            match self.call_backend(&request) {
                Ok(raw) => match validate_backend_output(&raw, &roster, &open_ids) {
                    Ok(proposals) => return self.adopt(proposals, rule, open, &busy),
                    Err(violation) => {
                        self.post(message(
                            Sender::Assistant,
                            Channel::Group,
                            MessageKind::Info,
                            format!("planner proposal {} rejected: {violation}", attempt + 1),
                        ));
                    }
                },
                Err(err) => {
                    self.post(message(
                        Sender::Assistant,
                        Channel::Group,
                        MessageKind::Info,
                        format!("planner backend unavailable: {err}"),
                    ));
                    break;
                }
            }
        }
        self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::Info,
            "falling back to the rule-based allocator",
        ));
        rule
    }

    fn call_backend(&mut self, request: &BackendRequest) -> Result<serde_json::Value, crate::planner::BackendError> {
        match &self.config.backend {
            BackendChoice::RuleBased => unreachable!("rule-based allocation never calls a backend"),
            BackendChoice::Recorded { responses } => {
                let mut backend = RecordedBackend::new(responses.clone());
                backend.cursor = self.state.backend_cursor;
                let out = backend.propose_allocation(request);
                self.state.backend_cursor = backend.cursor;
                out
            }
            BackendChoice::External { program, args } => CommandBackend {
                program: program.clone(),
                args: args.clone(),
            }
            .propose_allocation(request),
        }
    }

    fn backend_request(&self, open: &[TaskSpec], busy: &BTreeSet<AgentId>) -> BackendRequest {
        BackendRequest {
            schema: BACKEND_SCHEMA.to_string(),
            tasks: open
                .iter()
                .map(|t| TaskBrief {
                    id: t.id.clone(),
                    description: t.description.clone(),
                    requires: t.required_capabilities.iter().map(|c| c.to_string()).collect(),
                    goals: t.goals.iter().map(|g| g.to_string()).collect(),
                })
                .collect(),
            robots: self
                .state
                .world
                .profiles
                .values()
                .map(|p| {
                    let status = &self.state.world.robots[&p.id];
                    RobotBrief {
                        id: p.id.clone(),
                        kind: p.kind,
                        capabilities: p.capabilities.iter().map(|c| c.to_string()).collect(),
                        battery_pct: status.battery_pct,
                        position: status.position,
                        busy: busy.contains(&p.id) || !status.health.is_ok(),
                    }
                })
                .collect(),
            summary: self.state.summary.clone(),
            last_decision: self.state.last_decision,
            excluded: self.state.exclusions.iter().cloned().collect(),
            instructions: self.state.instructions.clone(),
        }
    }

    /// Keeps validated backend proposals that are still placeable: free,
    /// healthy robot and a pair that was never excluded.
    fn adopt(
        &mut self,
        proposals: Vec<ProposedAssignment>,
        rule: Allocation,
        open: &[TaskSpec],
        busy: &BTreeSet<AgentId>,
    ) -> Allocation {
        let mut taken = BTreeSet::new();
        let mut assignments = Vec::new();
        let mut dropped = Vec::new();
        for p in proposals {
            let healthy =
                self.state.world.robots[&p.agent].health.is_ok() && !self.state.hard_faults.contains(&p.agent);
            let excluded = self.state.exclusions.contains(&(p.task.clone(), p.agent.clone()));
            if busy.contains(&p.agent) || !healthy || excluded || !taken.insert(p.agent.clone()) {
                dropped.push(format!("{}->{}", p.task, p.agent));
                continue;
            }
            let spec = open.iter().find(|t| t.id == p.task).expect("validated task");
            let view = self.belief();
            let cost = estimate_cost(
                &self.state.world.profiles[&p.agent],
                &self.state.world.robots[&p.agent],
                spec,
                &view,
                &self.assume_open(),
            )
            .unwrap_or(0);
            assignments.push((p.task, p.agent, cost));
        }
        if !dropped.is_empty() {
            self.post(message(
                Sender::Assistant,
                Channel::Group,
                MessageKind::Info,
                format!("planner proposals not placeable: {}", dropped.join(", ")),
            ));
        }
        let order = |t: &TaskId| open.iter().position(|o| &o.id == t).unwrap_or(usize::MAX);
        assignments.sort_by_key(|(t, _, _)| order(t));
        let unassignable = rule
            .unassignable
            .into_iter()
            .filter(|t| !assignments.iter().any(|(a, _, _)| a == t))
            .collect();
        Allocation {
            assignments,
            unassignable,
        }
    }

    // ---------------------------------------------------------------------
    // Human gates

    fn open_gate(&mut self, kind: GateKind) {
        if self.config.decision_policy == DecisionPolicy::AutoProceed {
            self.resolve_gate(kind, Decision::Yes, false);
            return;
        }
        let question = match &kind {
            GateKind::Disagreement { task, agent } => format!(
                "@human {agent} reports no traversable path for {task}, but the plan expects the route to open. \
                 Hold {task} for {agent}? yes/no"
            ),
            GateKind::Unassignable { task } => {
                format!("@human no robot can take {task} now. Keep it open for a later round? yes/no")
            }
        };
        let (task, agent) = match &kind {
            GateKind::Disagreement { task, agent } => (task.clone(), Some(agent.clone())),
            GateKind::Unassignable { task } => (task.clone(), None),
        };
        let request_seq = self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::DecisionRequest {
                task: Some(task),
                agent,
            },
            question,
        ));
        match self.config.decision_policy.clone() {
            DecisionPolicy::Interactive => self.state.gates.push_back(Gate { kind, request_seq }),
            DecisionPolicy::Scripted(script) => match script.get(self.state.decision_cursor) {
                Some(&d) => {
                    self.state.decision_cursor += 1;
                    self.record_decision(d);
                    self.resolve_gate(kind, d, false);
                }
                None => {
                    self.post_timeout();
                    self.resolve_gate(kind, Decision::Yes, false);
                }
            },
            DecisionPolicy::AutoYes => {
                self.record_decision(Decision::Yes);
                self.resolve_gate(kind, Decision::Yes, false);
            }
            DecisionPolicy::AutoProceed => unreachable!("handled above"),
        }
    }

    fn record_decision(&mut self, decision: Decision) {
        self.post(message(
            Sender::Human,
            Channel::Group,
            MessageKind::HumanDecision { decision },
            decision.as_str(),
        ));
        self.state.step_count += 1;
        self.state.decisions += 1;
        self.state.last_decision = Some(decision);
    }

    fn post_timeout(&mut self) {
        self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::Info,
            "no decision received; proceeding with yes",
        ));
    }

    fn time_out_gate(&mut self) {
        if let Some(gate) = self.state.gates.pop_front() {
            self.post_timeout();
            self.resolve_gate(gate.kind, Decision::Yes, true);
        }
    }

    /// `out_of_round` is set when the answer arrives after the planning
    /// round that raised the gate has finished.
    fn resolve_gate(&mut self, kind: GateKind, decision: Decision, out_of_round: bool) {
        match (kind, decision) {
            (GateKind::Disagreement { task, agent }, Decision::Yes) => {
                self.state.held.insert(task, agent);
            }
            (GateKind::Disagreement { task, agent }, Decision::No) => {
                self.state.exclusions.insert((task, agent));
                if out_of_round {
                    self.trigger_reallocation();
                } else {
                    self.state.needs_planning = true;
                }
            }
            (GateKind::Unassignable { task }, Decision::Yes) => {
                self.state.retry_gated.insert(task);
            }
            (GateKind::Unassignable { task }, Decision::No) => {
                self.fail_task(&task, "dropped by the operator");
            }
        }
        if out_of_round {
            self.check_termination();
        }
    }

    // ---------------------------------------------------------------------
    // Execution

    fn exec_tick(&mut self) {
        let mut actions: BTreeMap<AgentId, ActionCommand> = BTreeMap::new();
        for agent in self.roster() {
            let moving = self.state.world.is_moving(&agent);
            let has_command = self.state.commands.get(&agent).is_some_and(|q| !q.is_empty());
            let action = if has_command && (!moving || self.config.interrupt_on_command) {
                if moving {
                    if let (Some(ActionCommand::MoveTo(c)), Some(plan)) =
                        (self.state.in_flight.get(&agent), self.state.plans.get_mut(&agent))
                    {
                        plan.push_front(ActionCommand::MoveTo(*c));
                    }
                }
                self.state.commands.get_mut(&agent).and_then(VecDeque::pop_front)
            } else if !moving {
                self.state.plans.get_mut(&agent).and_then(VecDeque::pop_front)
            } else {
                None
            };
            if let Some(action) = action {
                let task = self.state.world.robots[&agent].current_task.clone();
                self.post(message(
                    Sender::Robot(agent.clone()),
                    Channel::Group,
                    MessageKind::Action {
                        agent: agent.clone(),
                        task,
                        action: action.clone(),
                    },
                    action.to_string(),
                ));
                self.state.step_count += 1;
                self.state.in_flight.insert(agent.clone(), action.clone());
                actions.insert(agent, action);
            }
        }
        let produced = self.state.world.tick(&actions);
        let mut failures = Vec::new();
        for msg in produced {
            if let MessageKind::Exception { agent, exception, .. } = &msg.kind {
                failures.push((agent.clone(), *exception));
            }
            self.post_stamped(msg);
        }
        if failures.is_empty() {
            return;
        }
        for (agent, kind) in failures {
            if kind.is_action_failure() {
                self.state.infeasible_actions += 1;
                // The robot reports what it found along its route.
                if let Some(legs) = self.state.legs.get(&agent) {
                    let plan = TaskPlan {
                        legs: legs.clone(),
                        ..TaskPlan::default()
                    };
                    reveal_evidence(&mut self.state.unrevealed, &plan);
                }
            }
            if kind == crate::messaging::ExceptionKind::Fault {
                self.state.hard_faults.insert(agent.clone());
            }
            self.abandon(&agent, kind.as_str());
        }
        self.trigger_reallocation();
    }

    /// Takes the robot off its task; the pair is never tried again.
    fn abandon(&mut self, agent: &AgentId, why: &str) {
        if let Some(task) = self.agent_task(agent) {
            self.set_state(&task, TaskState::Reassigning);
            self.state.live.remove(&task);
            self.state.exclusions.insert((task.clone(), agent.clone()));
            self.post_task_status(Sender::Assistant, Some(agent), &task, TaskState::Reassigning, why);
        }
        self.state.plans.remove(agent);
        self.state.legs.remove(agent);
        self.state.in_flight.remove(agent);
        self.state.world.motion.remove(agent);
        self.state.world.release_objects(agent);
        if let Some(status) = self.state.world.robots.get_mut(agent) {
            status.set_task(None);
        }
    }

    /// Asks every robot for its status, then clears recoverable faults.
    fn refresh_round(&mut self) {
        self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::Info,
            "@all report battery, position and task progress",
        ));
        for agent in self.roster() {
            let status = self.state.world.robots[&agent].clone();
            let state = status.current_task.as_ref().map(|t| self.task(t).state);
            let body = format!(
                "battery {:.1}%, at {}, task {}, progress {:.0}%{}",
                status.battery_pct,
                status.position,
                status.current_task.as_ref().map_or("-", TaskId::as_str),
                status.progress * 100.0,
                match &status.health {
                    crate::robot::Health::Ok => String::new(),
                    crate::robot::Health::Fault { reason } => format!(", fault: {reason}"),
                }
            );
            self.post(message(
                Sender::Robot(agent.clone()),
                Channel::Group,
                MessageKind::StatusUpdate {
                    agent: Some(agent.clone()),
                    task: status.current_task.clone(),
                    robot: Some(status),
                    state,
                },
                body,
            ));
        }
        for agent in self.roster() {
            if !self.state.hard_faults.contains(&agent) {
                self.state.world.clear_fault(&agent);
            }
        }
    }

    fn trigger_reallocation(&mut self) {
        self.refresh_round();
        self.state.realloc = true;
        self.state.needs_planning = true;
    }

    fn after_tick(&mut self) {
        let mut freed = false;
        let live: Vec<(TaskId, AgentId)> = self
            .state
            .live
            .iter()
            .filter(|(t, _)| self.task(t).state == TaskState::Executing)
            .map(|(t, a)| (t.clone(), a.agent.clone()))
            .collect();
        let mut stalled = Vec::new();
        for (task, agent) in live {
            let goals = self.task(&task).goals.clone();
            let check = check_goal(&self.state.world, &goals).ok();
            if let Some(status) = self.state.world.robots.get_mut(&agent) {
                status.set_progress(check.as_ref().map_or(0.0, |c| c.fraction()));
            }
            if check.as_ref().is_some_and(|c| c.satisfied) {
                self.set_state(&task, TaskState::Done);
                self.state.live.remove(&task);
                self.state.plans.remove(&agent);
                self.state.legs.remove(&agent);
                if let Some(status) = self.state.world.robots.get_mut(&agent) {
                    status.set_task(None);
                }
                self.post_task_status(Sender::Robot(agent.clone()), Some(&agent), &task, TaskState::Done, "");
                freed = true;
                continue;
            }
            let idle = self.state.plans.get(&agent).is_none_or(VecDeque::is_empty)
                && !self.state.world.is_moving(&agent)
                && self.state.commands.get(&agent).is_none_or(VecDeque::is_empty);
            if idle {
                stalled.push(agent);
            }
        }
        for agent in &stalled {
            self.abandon(agent, "plan finished without reaching the goal");
        }

        // Tasks satisfied as a side effect of other work.
        let waiting: Vec<TaskId> = self
            .state
            .tasks
            .iter()
            .filter(|t| matches!(t.state, TaskState::Pending | TaskState::Reassigning))
            .filter(|t| self.goals_hold(&t.goals))
            .map(|t| t.id.clone())
            .collect();
        for task in waiting {
            self.state.held.remove(&task);
            self.set_state(&task, TaskState::Done);
            self.post_task_status(Sender::Assistant, None, &task, TaskState::Done, "goals already hold");
        }

        self.retry_held();

        if !stalled.is_empty() {
            self.trigger_reallocation();
        } else if freed && !self.open_tasks().is_empty() {
            self.state.needs_planning = true;
        }
    }

    /// Re-verifies held tasks; releases them when nothing could still
    /// change the robot's mind.
    fn retry_held(&mut self) {
        for (task, agent) in self.state.held.clone() {
            if self.agent_task(&agent).is_some() {
                continue;
            }
            let profile = self.state.world.profiles[&agent].clone();
            let status = self.state.world.robots[&agent].clone();
            if !status.health.is_ok() {
                continue;
            }
            let spec = self.task(&task).clone();
            let (verdict, plan) = verify(&profile, &status, &spec, &self.state.world);
            if verdict.is_accept() {
                self.state.held.remove(&task);
                self.commit_assignment(&task, &agent, "held for this robot by the operator".into());
                self.post_verdict(&task, &agent, &verdict);
                self.set_state(&task, TaskState::Verified);
                self.start_execution(&task, &agent, plan);
            }
        }
        let stuck = !self.state.held.is_empty()
            && !self.state.needs_planning
            && self.state.live.is_empty()
            && self.state.world.motion.is_empty()
            && self.state.commands.values().all(VecDeque::is_empty);
        if stuck {
            for (task, agent) in std::mem::take(&mut self.state.held) {
                self.state.exclusions.insert((task.clone(), agent.clone()));
                self.post(message(
                    Sender::Assistant,
                    Channel::Group,
                    MessageKind::Info,
                    format!("releasing {task} from {agent}: nothing left can open its route"),
                ));
            }
            self.trigger_reallocation();
        }
    }

    /// Ends the session when every task is terminal, the tick budget is
    /// spent, or nothing can make further progress.
    fn check_termination(&mut self) -> bool {
        if self.state.phase.is_terminal() {
            return true;
        }
        if self.state.phase == Phase::Init {
            return false;
        }
        let all_terminal = self.state.tasks.iter().all(|t| t.state.is_terminal());
        if !all_terminal {
            let reason = if self.state.world.tick >= self.state.max_ticks {
                Some("tick budget exhausted")
            } else if self.is_idle() {
                Some("no robot can make progress")
            } else {
                None
            };
            let Some(reason) = reason else { return false };
            let unfinished: Vec<TaskId> = self
                .state
                .tasks
                .iter()
                .filter(|t| !t.state.is_terminal())
                .map(|t| t.id.clone())
                .collect();
            for task in unfinished {
                if self.task(&task).state == TaskState::Executing
                    || self.task(&task).state == TaskState::Assigned
                    || self.task(&task).state == TaskState::Verified
                {
                    if let Some(a) = self.state.live.remove(&task) {
                        self.state.plans.remove(&a.agent);
                    }
                    if matches!(self.task(&task).state, TaskState::Assigned | TaskState::Verified) {
                        self.set_state(&task, TaskState::Reassigning);
                    }
                }
                self.fail_task(&task, reason);
            }
        }
        self.state.gates.clear();
        self.state.held.clear();
        self.state.summary = summarize(self.state.room.log());
        let success = self.state.tasks.iter().all(|t| t.state == TaskState::Done);
        let phase = if success { Phase::Completed } else { Phase::Failed };
        self.post(message(
            Sender::Assistant,
            Channel::Group,
            MessageKind::Info,
            format!("session {phase}: {}", self.state.summary.digest),
        ));
        self.state.summary = summarize(self.state.room.log());
        self.set_phase(phase);
        info!(scenario = %self.state.scenario, mode = %self.config.mode, %phase, steps = self.state.step_count, "session finished");
        true
    }

    fn is_idle(&self) -> bool {
        !self.state.needs_planning
            && self.state.gates.is_empty()
            && self.state.live.is_empty()
            && self.state.held.is_empty()
            && self.state.world.motion.is_empty()
            && self.state.commands.values().all(VecDeque::is_empty)
    }
}

impl Mode {
    /// Short label used in tables.
    pub fn label(self) -> &'static str {
        match self {
            Mode::Full => "Full",
            Mode::NoHuman => "NoHuman",
            Mode::NoHumanNoVerify => "NoHumanNoVerify",
        }
    }
}
