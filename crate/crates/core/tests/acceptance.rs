//! Acceptance suite. Runs without the libtest harness so that each
//! criterion prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use itertools::Itertools;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fleet_core::bench::{ablation_compare, run_suite, run_suite_with, SuiteSummary};
use fleet_core::messaging::{summarize, ChatRoom, DirectPeer, MessageLog};
use fleet_core::planner::{assign_min_cost, CostMatrix, RejectReason};
use fleet_core::scenes::bundled_scenes;
use fleet_core::session::{recount_steps, DecisionPolicy};
use fleet_core::world::{load_scenario, min_steps, DEFAULT_SEARCH_BUDGET};
use fleet_core::{
    start_session, AgentId, Channel, ChatMessage, Decision, ExceptionKind, MessageKind, Mode, Scenario, Sender,
    Session, SessionConfig, TaskId, TaskState, Verdict,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scene_dir(sub: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenes").join(sub)
}

fn load_dir(sub: &str) -> Vec<Scenario> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(scene_dir(sub))
        .expect("scene directory exists")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_scenario(p).expect("scene loads")).collect()
}

fn id(name: &str) -> AgentId {
    AgentId::new(name).unwrap()
}

fn task_id(name: &str) -> TaskId {
    TaskId::new(name).unwrap()
}

// ---------------------------------------------------------------------------
// 1. Routing isolation
// ---------------------------------------------------------------------------

const POOL: [&str; 8] = ["Rover1", "Rover2", "Dog1", "Dog2", "Drone1", "Arm1", "Rover3", "Dog3"];

/// Independent statement of the delivery rules, in terms of the generator's
/// own choices rather than the parsed message.
fn expected_delivery(
    sender: &Option<String>,
    direct: &Option<(DirectPeer, String)>,
    mentions: &[String],
    roster: &BTreeSet<String>,
) -> (BTreeSet<String>, BTreeSet<String>, bool) {
    let (display, mut context, assistant) = match direct {
        Some((peer, target)) => {
            let only: BTreeSet<String> = [target.clone()].into();
            (only.clone(), only, *peer == DirectPeer::Assistant)
        }
        None => {
            let context = if mentions.iter().any(|m| m == "all") {
                roster.clone()
            } else {
                mentions.iter().cloned().collect()
            };
            (roster.clone(), context, true)
        }
    };
    if let Some(own) = sender {
        context.remove(own);
    }
    (display, context, assistant)
}

fn routing_fuzz() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let mut violations = 0usize;
    let mut delivered = 0usize;
    let mut rejected = 0usize;
    for _ in 0..1000 {
        let roster: BTreeSet<String> = POOL.choose_multiple(&mut rng, 5).map(|s| s.to_string()).collect();
        let mut room = ChatRoom::new(roster.iter().map(|n| id(n)));
        let mut want_context: BTreeMap<String, Vec<u64>> = roster.iter().map(|a| (a.clone(), vec![])).collect();
        let mut want_display = want_context.clone();
        let mut want_assistant = Vec::new();

        for _ in 0..rng.random_range(10..40) {
            let pick = |rng: &mut ChaCha8Rng| POOL.choose(rng).unwrap().to_string();
            let direct = rng.random_bool(0.3).then(|| {
                (
                    if rng.random_bool(0.5) {
                        DirectPeer::Human
                    } else {
                        DirectPeer::Assistant
                    },
                    pick(&mut rng),
                )
            });
            let robot_sender = match &direct {
                Some((_, target)) if rng.random_bool(0.3) => Some(target.clone()),
                Some(_) => None,
                None => rng.random_bool(0.5).then(|| pick(&mut rng)),
            };
            let sender = match (&robot_sender, &direct) {
                (Some(r), _) => Sender::Robot(id(r)),
                (None, Some((DirectPeer::Assistant, _))) => Sender::Assistant,
                (None, Some((DirectPeer::Human, _))) => Sender::Human,
                (None, None) if rng.random_bool(0.5) => Sender::Human,
                (None, None) => Sender::Assistant,
            };
            let mentions: Vec<String> = (0..rng.random_range(0..4))
                .map(|_| {
                    if rng.random_bool(0.15) {
                        "all".to_string()
                    } else {
                        pick(&mut rng)
                    }
                })
                .collect();
            let body = mentions.iter().map(|m| format!("@{m} ")).collect::<String>() + "status please";
            let channel = match &direct {
                Some((peer, target)) => Channel::Direct {
                    peer: *peer,
                    target: id(target),
                },
                None => Channel::Group,
            };
            let msg = ChatMessage::new(sender, channel, MessageKind::Info, body).unwrap();

            let known = |n: &String| roster.contains(n);
            let valid = robot_sender.iter().all(known)
                && direct.iter().all(|(_, t)| known(t))
                && mentions.iter().all(|m| m == "all" || known(m));
            let before = room.log().len();
            match room.post(msg) {
                Ok(seq) if valid => {
                    delivered += 1;
                    let (display, context, assistant) = expected_delivery(&robot_sender, &direct, &mentions, &roster);
                    for a in &display {
                        want_display.get_mut(a).unwrap().push(seq);
                    }
                    for a in &context {
                        want_context.get_mut(a).unwrap().push(seq);
                    }
                    if assistant {
                        want_assistant.push(seq);
                    }
                }
                Err(_) if !valid => {
                    rejected += 1;
                    if room.log().len() != before {
                        violations += 1;
                    }
                }
                _ => violations += 1,
            }
        }
        for agent in &roster {
            if room.context_of(&id(agent)) != want_context[agent].as_slice() {
                violations += 1;
            }
            if room.display_of(&id(agent)) != want_display[agent].as_slice() {
                violations += 1;
            }
        }
        if room.assistant_context() != want_assistant.as_slice() {
            violations += 1;
        }
        for outsider in POOL.iter().filter(|p| !roster.contains(**p)) {
            if !room.context_of(&id(outsider)).is_empty() || !room.display_of(&id(outsider)).is_empty() {
                violations += 1;
            }
        }
    }
    outcome(
        violations == 0,
        format!("1000 sequences, {delivered} delivered, {rejected} rejected, {violations} isolation violations"),
    )
}

// ---------------------------------------------------------------------------
// 2. Infeasible actions
// ---------------------------------------------------------------------------

fn infeasible_suite() -> Outcome {
    let scenes = load_dir("infeasible");
    let full = run_suite(&scenes, &SessionConfig::new(Mode::Full, 1), 10).unwrap();
    let nhnv = run_suite(&scenes, &SessionConfig::new(Mode::NoHumanNoVerify, 1), 10).unwrap();
    let full_actions: u64 = full.runs.iter().map(|r| r.infeasible_actions).sum();
    let hit = nhnv.runs.iter().filter(|r| r.infeasible_actions > 0).count();
    let share = hit as f64 / nhnv.runs.len() as f64;
    outcome(
        scenes.len() == 20 && full.runs.len() == 200 && full_actions == 0 && share >= 0.5,
        format!(
            "{} scenes x 10 seeds: Full {full_actions} infeasible actions; NoHumanNoVerify infeasible in {hit}/{} runs ({:.0}%)",
            scenes.len(),
            nhnv.runs.len(),
            share * 100.0
        ),
    )
}

// ---------------------------------------------------------------------------
// 3. Ablation ordering
// ---------------------------------------------------------------------------

fn ablation() -> Outcome {
    let scenes = bundled_scenes();
    let suites: BTreeMap<Mode, SuiteSummary> = Mode::ALL
        .into_iter()
        .map(|m| (m, run_suite(&scenes, &SessionConfig::new(m, 1), 10).unwrap().summary))
        .collect();
    let report = ablation_compare(&suites).unwrap();
    let sr = |m: Mode| suites[&m].average_success_rate().unwrap_or(0.0);
    outcome(
        report.direction_pass() && report.strict_pass(),
        format!(
            "S1-S5 x 10 reps: SR {:.3} / {:.3} / {:.3}; ordering {}, strict on exception scenes {}",
            sr(Mode::Full),
            sr(Mode::NoHuman),
            sr(Mode::NoHumanNoVerify),
            report.direction_pass(),
            report.strict_pass()
        ),
    )
}

// ---------------------------------------------------------------------------
// 4. Allocator optimality
// ---------------------------------------------------------------------------

/// Best (assigned count, cost) over every injective partial task->robot map.
fn brute_force(costs: &CostMatrix) -> (usize, u64) {
    let robots = costs.first().map_or(0, Vec::len);
    let mut best = (0, 0);
    let options: Vec<Vec<Option<usize>>> = costs
        .iter()
        .map(|row| {
            std::iter::once(None)
                .chain((0..robots).filter(|r| row[*r].is_some()).map(Some))
                .collect()
        })
        .collect();
    for choice in options.iter().multi_cartesian_product() {
        let used: Vec<usize> = choice.iter().filter_map(|c| **c).collect();
        if used.iter().collect::<BTreeSet<_>>().len() != used.len() {
            continue;
        }
        let cost: u64 = choice
            .iter()
            .enumerate()
            .filter_map(|(t, c)| c.map(|r| u64::from(costs[t][r].unwrap())))
            .sum();
        if used.len() > best.0 || (used.len() == best.0 && cost < best.1) {
            best = (used.len(), cost);
        }
    }
    best
}

fn evaluate(costs: &CostMatrix, choice: &[Option<usize>]) -> Option<(usize, u64)> {
    let mut seen = BTreeSet::new();
    let mut cost = 0u64;
    for (t, c) in choice.iter().enumerate() {
        if let Some(r) = c {
            if !seen.insert(*r) {
                return None;
            }
            cost += u64::from(costs[t][*r]?);
        }
    }
    Some((seen.len(), cost))
}

fn allocator_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0004);
    let mut mismatches = 0;
    let instances = 600;
    for _ in 0..instances {
        let tasks = rng.random_range(1..=4);
        let robots = rng.random_range(1..=4);
        let costs: CostMatrix = (0..tasks)
            .map(|_| {
                (0..robots)
                    .map(|_| rng.random_bool(0.8).then(|| rng.random_range(0..30)))
                    .collect()
            })
            .collect();
        if evaluate(&costs, &assign_min_cost(&costs)) != Some(brute_force(&costs)) {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0,
        format!("{instances} random instances up to 4x4, {mismatches} differ from brute force"),
    )
}

// ---------------------------------------------------------------------------
// 5. Summary completeness
// ---------------------------------------------------------------------------

const TASKS: [&str; 6] = ["T1", "T2", "T3", "T4", "T5", "T6"];
const AGENTS: [&str; 4] = ["Rover1", "Rover2", "Dog1", "Drone1"];
const STATES: [TaskState; 7] = [
    TaskState::Pending,
    TaskState::Assigned,
    TaskState::Verified,
    TaskState::Executing,
    TaskState::Done,
    TaskState::Failed,
    TaskState::Reassigning,
];

fn record(kind: u8, t: usize, a: usize, s: usize) -> ChatMessage {
    let task = task_id(TASKS[t]);
    let agent = id(AGENTS[a]);
    let (sender, kind, body) = match kind {
        0 => (
            Sender::Assistant,
            MessageKind::TaskAssignment {
                task,
                agent: agent.clone(),
            },
            format!("@{agent} Your task is {}. EOF", TASKS[t]),
        ),
        1 => (
            Sender::Robot(agent.clone()),
            MessageKind::VerificationVerdict {
                task,
                agent,
                verdict: Verdict::Accept,
            },
            "ok".into(),
        ),
        2 => (
            Sender::Robot(agent.clone()),
            MessageKind::VerificationVerdict {
                task,
                agent,
                verdict: Verdict::Reject {
                    reason: RejectReason::NoTraversablePath,
                },
            },
            "no path".into(),
        ),
        3 => (
            Sender::Robot(agent.clone()),
            MessageKind::StatusUpdate {
                agent: Some(agent),
                robot: None,
                task: Some(task),
                state: Some(STATES[s]),
            },
            "progress".into(),
        ),
        4 => (
            Sender::Assistant,
            MessageKind::StatusUpdate {
                agent: None,
                robot: None,
                task: Some(task),
                state: Some(STATES[s]),
            },
            "update".into(),
        ),
        5 => (
            Sender::Robot(agent.clone()),
            MessageKind::Exception {
                agent,
                task: Some(task),
                exception: ExceptionKind::TerrainBlock,
            },
            "blocked".into(),
        ),
        // Free text naming a task never counts.
        _ => (
            Sender::Human,
            MessageKind::Info,
            format!("how is {} going? assign it to {agent}", TASKS[t]),
        ),
    };
    ChatMessage::new(sender, Channel::Group, kind, body).unwrap()
}

/// Full-replay oracle, scanning backwards: a task's status is set by the
/// latest record that states one; its agent by the latest record naming one.
fn replay_oracle(log: &MessageLog) -> BTreeMap<TaskId, (Option<AgentId>, TaskState)> {
    let mut out = BTreeMap::new();
    for name in TASKS {
        let t = task_id(name);
        let stated = |m: &ChatMessage| -> Option<(Option<AgentId>, TaskState)> {
            match &m.kind {
                MessageKind::TaskAssignment { task, agent } if *task == t => {
                    Some((Some(agent.clone()), TaskState::Assigned))
                }
                MessageKind::VerificationVerdict { task, agent, verdict } if *task == t => Some((
                    Some(agent.clone()),
                    if verdict.is_accept() {
                        TaskState::Verified
                    } else {
                        TaskState::Reassigning
                    },
                )),
                MessageKind::StatusUpdate {
                    agent,
                    task: Some(task),
                    state: Some(s),
                    ..
                } if *task == t => Some((agent.clone(), *s)),
                _ => None,
            }
        };
        let entries: Vec<_> = log.entries().iter().filter_map(stated).collect();
        let Some((_, status)) = entries.last() else { continue };
        let agent = entries.iter().rev().find_map(|(a, _)| a.clone());
        out.insert(t, (agent, *status));
    }
    out
}

fn summary_completeness() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 256,
        failure_persistence: None,
        ..Config::default()
    });
    let strategy = prop::collection::vec((0u8..8, 0..TASKS.len(), 0..AGENTS.len(), 0..STATES.len()), 200);
    let result = runner.run(&strategy, |records| {
        let mut log = MessageLog::new();
        for (k, t, a, s) in records {
            log.append(record(k, t, a, s));
        }
        prop_assert_eq!(log.len(), 200);
        let summary = summarize(&log);
        let ids: Vec<&TaskId> = summary.assignments.iter().map(|e| &e.task).collect();
        prop_assert_eq!(
            ids.len(),
            ids.iter().collect::<BTreeSet<_>>().len(),
            "a task appears twice"
        );
        let got: BTreeMap<TaskId, (Option<AgentId>, TaskState)> = summary
            .assignments
            .iter()
            .map(|e| (e.task.clone(), (e.agent.clone(), e.status)))
            .collect();
        prop_assert_eq!(got, replay_oracle(&log));
        prop_assert_eq!(summary.as_of_seq, 200);
        Ok(())
    });
    match result {
        Ok(()) => outcome(true, "256 random 200-message logs match the full-replay oracle"),
        Err(e) => outcome(false, format!("counterexample: {e}")),
    }
}

// ---------------------------------------------------------------------------
// 6. Determinism
// ---------------------------------------------------------------------------

fn determinism() -> Outcome {
    let scenes = bundled_scenes();
    let mut compared = 0;
    let mut differing = Vec::new();
    for scenario in &scenes {
        for mode in Mode::ALL {
            for seed in 1..=3 {
                let config = SessionConfig::new(mode, seed);
                let a = start_session(config.clone(), scenario)
                    .unwrap()
                    .run_to_completion()
                    .to_json();
                let b = start_session(config.clone(), scenario)
                    .unwrap()
                    .run_to_completion()
                    .to_json();
                compared += 1;
                if a != b {
                    differing.push(format!("{}/{mode}/{seed} rerun", scenario.name));
                }
                for cut in [0, 3, 7] {
                    let mut session = start_session(config.clone(), scenario).unwrap();
                    for _ in 0..cut {
                        session.step();
                    }
                    let text = session.checkpoint();
                    let mut resumed = Session::resume(&text).unwrap();
                    compared += 1;
                    if resumed.checkpoint() != text || resumed.run_to_completion().to_json() != a {
                        differing.push(format!("{}/{mode}/{seed} resume@{cut}", scenario.name));
                    }
                }
            }
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{compared} report comparisons, {} differ {:?}",
            differing.len(),
            differing
        ),
    )
}

// ---------------------------------------------------------------------------
// 7. Step accounting
// ---------------------------------------------------------------------------

fn step_accounting() -> Outcome {
    let mut scenes = bundled_scenes();
    scenes.extend(load_dir("gates"));
    scenes.extend(load_dir("infeasible"));

    // Recount from the log against the summed numerator.
    let mut recount_errors = 0;
    for mode in Mode::ALL {
        let mut recounted: BTreeMap<String, (u64, u64)> = BTreeMap::new();
        let suite = run_suite_with(&scenes, &SessionConfig::new(mode, 1), 3, |s, report| {
            let entry = recounted.entry(s.name.clone()).or_default();
            let steps = recount_steps(&report.log);
            if steps != report.step_count {
                recount_errors += 1;
            }
            entry.1 += steps;
            if report.success {
                entry.0 += steps;
            }
        })
        .unwrap();
        for stats in &suite.summary.scenes {
            if recounted[&stats.scenario] != (stats.steps_successful, stats.steps_all) {
                recount_errors += 1;
            }
        }
    }

    // Scripted decisions against the silent twin.
    let gates = load_dir("gates");
    let reps = 5;
    let silent = run_suite(
        &gates,
        &SessionConfig::new(Mode::Full, 1).with_policy(DecisionPolicy::AutoProceed),
        reps,
    )
    .unwrap()
    .summary;
    let scripted = run_suite(
        &gates,
        &SessionConfig::new(Mode::Full, 1).with_policy(DecisionPolicy::Scripted(vec![Decision::Yes; 4])),
        reps,
    )
    .unwrap()
    .summary;
    let mut twin_errors = Vec::new();
    let mut total_d = 0;
    for (a, b) in silent.scenes.iter().zip(&scripted.scenes) {
        let d = b.decisions;
        total_d += d;
        let runs = f64::from(b.runs);
        let delta = b.average_steps().unwrap_or(f64::NAN) - a.average_steps().unwrap_or(f64::NAN);
        let ok = a.decisions == 0
            && d > 0
            && a.successes == a.runs
            && b.successes == b.runs
            && b.steps_all == a.steps_all + d
            && (delta - d as f64 / runs).abs() < 1e-9;
        if !ok {
            twin_errors.push(format!("{}: d={d} dAS={delta:.3}", b.scenario));
        }
    }
    outcome(
        recount_errors == 0 && twin_errors.is_empty(),
        format!(
            "{} scenes x 3 modes recounted ({recount_errors} mismatches); {total_d} scripted decisions over {} gate runs, twin deltas {}",
            scenes.len(),
            gates.len() * reps as usize,
            if twin_errors.is_empty() { "exact".to_string() } else { twin_errors.join(", ") }
        ),
    )
}

// ---------------------------------------------------------------------------
// 8. Scene difficulty ordering
// ---------------------------------------------------------------------------

fn min_steps_ordering() -> Outcome {
    let scenes = bundled_scenes();
    let computed: Vec<u32> = scenes
        .iter()
        .map(|s| min_steps(s, DEFAULT_SEARCH_BUDGET).unwrap())
        .collect();
    let declared: Vec<u32> = scenes.iter().map(|s| s.min_steps).collect();
    let names = scenes.iter().map(|s| s.name.as_str()).join(", ");
    outcome(
        computed == declared && computed.windows(2).all(|w| w[0] <= w[1]),
        format!("{names}: computed {computed:?}, declared {declared:?}"),
    )
}

type Criterion = (&'static str, fn() -> Outcome, Duration);

fn main() {
    let criteria: [Criterion; 8] = [
        ("routing isolation fuzz", routing_fuzz, Duration::from_secs(10)),
        (
            "no infeasible actions under Full",
            infeasible_suite,
            Duration::from_secs(60),
        ),
        ("ablation ordering", ablation, Duration::from_secs(300)),
        ("allocator matches brute force", allocator_optimality, Duration::MAX),
        ("summary completeness", summary_completeness, Duration::MAX),
        ("determinism and resume", determinism, Duration::MAX),
        ("step accounting", step_accounting, Duration::MAX),
        ("min_steps nondecreasing", min_steps_ordering, Duration::MAX),
    ];
    let mut failed = 0;
    for (n, (name, check, limit)) in criteria.into_iter().enumerate() {
        let started = Instant::now();
        let result = check();
        let elapsed = started.elapsed();
        let in_time = elapsed <= limit;
        let pass = result.pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget = if limit == Duration::MAX {
            String::new()
        } else {
            format!(", limit {}s", limit.as_secs())
        };
        println!(
            "criterion {}: {} {name} — {} ({:.2}s{budget})",
            n + 1,
            if pass { "PASS" } else { "FAIL" },
            result.detail,
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
