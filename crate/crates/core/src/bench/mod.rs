//! Suite runner and success-rate / average-step metrics.
//!
//! Every statistic is kept as integer counts so a summary recomputed from
//! persisted run reports is exactly equal to the one built while running.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::session::{start_session, Mode, SessionConfig, SessionError, SessionReport, TaskOutcome};
use crate::world::Scenario;

mod reference;

pub use reference::{reference_direction, ReferenceRow, REFERENCE_ABLATION};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("unsupported report format `{0}` (expected table, csv or jsonl)")]
    UnsupportedFormat(String),
    #[error("suites are not comparable: {0}")]
    IncomparableSuites(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// One seeded run, without its log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub exception_bearing: bool,
    pub mode: Mode,
    pub seed: u64,
    pub outcomes: Vec<TaskOutcome>,
    pub step_count: u64,
    pub tick_count: u64,
    pub decisions: u64,
    pub infeasible_actions: u64,
    pub success: bool,
    pub log_sha256: String,
}

impl RunReport {
    pub fn from_session(report: &SessionReport, exception_bearing: bool) -> Self {
        Self {
            scenario: report.scenario.clone(),
            exception_bearing,
            mode: report.mode,
            seed: report.seed,
            outcomes: report.outcomes.clone(),
            step_count: report.step_count,
            tick_count: report.tick_count,
            decisions: report.decisions,
            infeasible_actions: report.infeasible_actions,
            success: report.success,
            log_sha256: report.log_sha256.clone(),
        }
    }
}

/// Counts for one scene under one mode.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneStats {
    pub scenario: String,
    pub exception_bearing: bool,
    pub runs: u32,
    pub successes: u32,
    /// Summed step counts of successful runs.
    pub steps_successful: u64,
    pub steps_all: u64,
    pub decisions: u64,
    /// Runs with at least one infeasible action.
    pub infeasible_runs: u32,
    pub infeasible_actions: u64,
}

impl SceneStats {
    pub fn new(scenario: &str, exception_bearing: bool) -> Self {
        Self {
            scenario: scenario.to_string(),
            exception_bearing,
            ..Self::default()
        }
    }

    pub fn add(&mut self, run: &RunReport) {
        self.runs += 1;
        self.steps_all += run.step_count;
        self.decisions += run.decisions;
        self.infeasible_actions += run.infeasible_actions;
        if run.infeasible_actions > 0 {
            self.infeasible_runs += 1;
        }
        if run.success {
            self.successes += 1;
            self.steps_successful += run.step_count;
        }
    }

    pub fn success_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            f64::from(self.successes) / f64::from(self.runs)
        }
    }

    /// Mean steps over successful runs; undefined when none succeeded.
    pub fn average_steps(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.steps_successful as f64 / f64::from(self.successes))
    }

    pub fn average_steps_all(&self) -> Option<f64> {
        (self.runs > 0).then(|| self.steps_all as f64 / f64::from(self.runs))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub mode: Mode,
    pub base_seed: u64,
    pub repetitions: u32,
    pub scenes: Vec<SceneStats>,
}

impl SuiteSummary {
    /// Rebuilds a summary from run reports, scenes in first-seen order.
    pub fn from_runs(mode: Mode, base_seed: u64, repetitions: u32, runs: &[RunReport]) -> Self {
        let mut scenes: Vec<SceneStats> = Vec::new();
        for run in runs {
            let idx = match scenes.iter().position(|s| s.scenario == run.scenario) {
                Some(i) => i,
                None => {
                    scenes.push(SceneStats::new(&run.scenario, run.exception_bearing));
                    scenes.len() - 1
                }
            };
            scenes[idx].add(run);
        }
        Self {
            mode,
            base_seed,
            repetitions,
            scenes,
        }
    }

    /// Arithmetic mean of per-scene SR.
    pub fn average_success_rate(&self) -> Option<f64> {
        mean(self.scenes.iter().map(SceneStats::success_rate))
    }

    /// Arithmetic mean of per-scene AS over the scenes where it is defined.
    pub fn average_steps(&self) -> Option<f64> {
        mean(self.scenes.iter().filter_map(SceneStats::average_steps))
    }

    pub fn average_steps_all(&self) -> Option<f64> {
        mean(self.scenes.iter().filter_map(SceneStats::average_steps_all))
    }

    pub fn scene(&self, name: &str) -> Option<&SceneStats> {
        self.scenes.iter().find(|s| s.scenario == name)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0u32), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / f64::from(n))
}

/// All runs of one suite plus their summary.
#[derive(Debug, Clone)]
pub struct SuiteRun {
    pub summary: SuiteSummary,
    pub runs: Vec<RunReport>,
}

/// Runs each scenario `repetitions` times with seeds `config.seed + i`.
pub fn run_suite(scenarios: &[Scenario], config: &SessionConfig, repetitions: u32) -> Result<SuiteRun, BenchError> {
    run_suite_with(scenarios, config, repetitions, |_, _| {})
}

/// [`run_suite`] with an observer that sees every full session report,
/// e.g. to persist replay bundles.
pub fn run_suite_with(
    scenarios: &[Scenario],
    config: &SessionConfig,
    repetitions: u32,
    mut observe: impl FnMut(&Scenario, &SessionReport),
) -> Result<SuiteRun, BenchError> {
    if repetitions == 0 {
        return Err(BenchError::NoRepetitions);
    }
    config.validate()?;
    let mut runs = Vec::with_capacity(scenarios.len() * repetitions as usize);
    let mut summary = SuiteSummary {
        mode: config.mode,
        base_seed: config.seed,
        repetitions,
        scenes: Vec::new(),
    };
    for scenario in scenarios {
        let mut stats = SceneStats::new(&scenario.name, scenario.has_exceptions());
        for rep in 0..repetitions {
            let mut run_config = config.clone();
            run_config.seed = config.seed.wrapping_add(u64::from(rep));
            let mut session = start_session(run_config, scenario)?;
            let report = session.run_to_completion();
            observe(scenario, &report);
            let run = RunReport::from_session(&report, scenario.has_exceptions());
            stats.add(&run);
            tracing::debug!(scenario = %scenario.name, seed = run.seed, success = run.success, steps = run.step_count, "run finished");
            runs.push(run);
        }
        summary.scenes.push(stats);
    }
    Ok(SuiteRun { summary, runs })
}

// ---------------------------------------------------------------------------
// Ablation
// ---------------------------------------------------------------------------

/// SR and AS of one row across Full, NoHuman, NoHumanNoVerify.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub scenario: String,
    pub exception_bearing: bool,
    pub success_rate: [f64; 3],
    pub average_steps: [Option<f64>; 3],
    pub sr_ordered: bool,
    pub as_ordered: bool,
    /// SR(Full) > SR(NoHumanNoVerify); only demanded on exception-bearing scenes.
    pub strict_sr: bool,
}

impl AblationRow {
    pub fn direction_ok(&self) -> bool {
        self.sr_ordered && self.as_ordered
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub average: AblationRow,
}

impl AblationReport {
    /// SR non-increasing and AS non-decreasing from Full to NoHumanNoVerify,
    /// per scene and on average.
    pub fn direction_pass(&self) -> bool {
        self.rows.iter().all(AblationRow::direction_ok) && self.average.direction_ok()
    }

    /// Strict SR(Full) > SR(NoHumanNoVerify) on every exception-bearing scene.
    pub fn strict_pass(&self) -> bool {
        self.rows.iter().filter(|r| r.exception_bearing).all(|r| r.strict_sr)
    }
}

const EPS: f64 = 1e-9;

/// Undefined AS (no successful run) orders after every defined value.
fn as_le(a: Option<f64>, b: Option<f64>) -> bool {
    match (a, b) {
        (_, None) => true,
        (None, Some(_)) => false,
        (Some(x), Some(y)) => x <= y + EPS,
    }
}

/// Direction check on one row of SR/AS values.
pub fn ordered(sr: [f64; 3], avg: [Option<f64>; 3]) -> (bool, bool) {
    let sr_ok = sr[0] + EPS >= sr[1] && sr[1] + EPS >= sr[2];
    let as_ok = as_le(avg[0], avg[1]) && as_le(avg[1], avg[2]);
    (sr_ok, as_ok)
}

fn row(scenario: &str, exception_bearing: bool, sr: [f64; 3], avg: [Option<f64>; 3]) -> AblationRow {
    let (sr_ordered, as_ordered) = ordered(sr, avg);
    AblationRow {
        scenario: scenario.to_string(),
        exception_bearing,
        success_rate: sr,
        average_steps: avg,
        sr_ordered,
        as_ordered,
        strict_sr: sr[0] > sr[2] + EPS,
    }
}

/// Compares the three mode suites scene by scene. The suites must cover the
/// same scenes with the same seeds and repetitions.
pub fn ablation_compare(suites: &BTreeMap<Mode, SuiteSummary>) -> Result<AblationReport, BenchError> {
    let get = |m: Mode| {
        suites
            .get(&m)
            .ok_or_else(|| BenchError::IncomparableSuites(format!("missing {} suite", m.label())))
    };
    let [full, nh, nhnv] = [get(Mode::Full)?, get(Mode::NoHuman)?, get(Mode::NoHumanNoVerify)?];
    for other in [nh, nhnv] {
        if other.base_seed != full.base_seed || other.repetitions != full.repetitions {
            return Err(BenchError::IncomparableSuites(format!(
                "{} used seed {} × {} reps, {} used seed {} × {}",
                full.mode.label(),
                full.base_seed,
                full.repetitions,
                other.mode.label(),
                other.base_seed,
                other.repetitions
            )));
        }
        let names = |s: &SuiteSummary| s.scenes.iter().map(|x| x.scenario.clone()).collect::<Vec<_>>();
        if names(other) != names(full) {
            return Err(BenchError::IncomparableSuites(format!(
                "scene lists differ: {:?} vs {:?}",
                names(full),
                names(other)
            )));
        }
    }
    let rows = full
        .scenes
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let scenes = [f, &nh.scenes[i], &nhnv.scenes[i]];
            row(
                &f.scenario,
                f.exception_bearing,
                scenes.map(SceneStats::success_rate),
                scenes.map(SceneStats::average_steps),
            )
        })
        .collect();
    let all = [full, nh, nhnv];
    let average = row(
        "Average",
        false,
        all.map(|s| s.average_success_rate().unwrap_or(0.0)),
        all.map(SuiteSummary::average_steps),
    );
    Ok(AblationReport { rows, average })
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Table,
    Csv,
    JsonLines,
}

impl FromStr for ReportFormat {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "jsonl" | "json-lines" => Ok(ReportFormat::JsonLines),
            other => Err(BenchError::UnsupportedFormat(other.to_string())),
        }
    }
}

fn fmt_sr(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_else(|| "-".into())
}

fn fmt_as(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.2}")).unwrap_or_else(|| "-".into())
}

/// Renders one summary. Output is byte-stable for a fixed summary.
pub fn emit_report(summary: &SuiteSummary, format: ReportFormat) -> String {
    match format {
        ReportFormat::Table => emit_table(&[summary], &[]),
        ReportFormat::Csv => emit_csv(summary),
        ReportFormat::JsonLines => emit_jsonl(summary),
    }
}

/// One row per summary: SR and AS for each scene, then the averages.
/// Reference rows are appended for display only.
pub fn emit_table(summaries: &[&SuiteSummary], reference: &[ReferenceRow]) -> String {
    let scene_names: Vec<&str> = summaries
        .first()
        .map(|s| s.scenes.iter().map(|x| x.scenario.as_str()).collect())
        .unwrap_or_default();
    let mut header = vec!["Model".to_string()];
    for name in &scene_names {
        header.push(format!("{name} SR"));
        header.push(format!("{name} AS"));
    }
    header.extend([
        "Average SR".to_string(),
        "Average AS".to_string(),
        "AS (all runs)".to_string(),
    ]);

    let mut rows: Vec<Vec<String>> = Vec::new();
    for summary in summaries.iter().filter(|s| !s.scenes.is_empty()) {
        let mut r = vec![summary.mode.label().to_string()];
        for scene in &summary.scenes {
            r.push(fmt_sr(Some(scene.success_rate())));
            r.push(fmt_as(scene.average_steps()));
        }
        r.push(fmt_sr(summary.average_success_rate()));
        r.push(fmt_as(summary.average_steps()));
        r.push(fmt_as(summary.average_steps_all()));
        rows.push(r);
    }
    for reference in reference {
        let mut r = vec![format!("{} (reference)", reference.label)];
        for (i, _) in scene_names.iter().enumerate() {
            let cell = reference.scenes.get(i);
            r.push(fmt_sr(cell.map(|c| c.0)));
            r.push(fmt_as(cell.map(|c| c.1)));
        }
        r.push(fmt_sr(Some(reference.average.0)));
        r.push(fmt_as(Some(reference.average.1)));
        r.push("-".into());
        rows.push(r);
    }

    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(&header);
    out.push('\n');
    for r in &rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

const CSV_HEADER: [&str; 15] = [
    "mode",
    "base_seed",
    "repetitions",
    "scenario",
    "exception_bearing",
    "runs",
    "successes",
    "steps_successful",
    "steps_all",
    "decisions",
    "infeasible_runs",
    "infeasible_actions",
    "sr",
    "as",
    "as_all",
];

fn emit_csv(summary: &SuiteSummary) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for s in &summary.scenes {
        w.write_record([
            summary.mode.as_str().to_string(),
            summary.base_seed.to_string(),
            summary.repetitions.to_string(),
            s.scenario.clone(),
            s.exception_bearing.to_string(),
            s.runs.to_string(),
            s.successes.to_string(),
            s.steps_successful.to_string(),
            s.steps_all.to_string(),
            s.decisions.to_string(),
            s.infeasible_runs.to_string(),
            s.infeasible_actions.to_string(),
            fmt_sr(Some(s.success_rate())),
            fmt_as(s.average_steps()),
            fmt_as(s.average_steps_all()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is UTF-8")
}

/// Reads a summary back from [`emit_report`]'s CSV. Derived columns are
/// recomputed, not trusted.
pub fn parse_csv(text: &str) -> Result<SuiteSummary, BenchError> {
    let bad = |m: String| BenchError::MalformedReport(m);
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| bad(e.to_string()))?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let mut mode = None;
    let mut base_seed = 0;
    let mut repetitions = 0;
    let mut scenes = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| bad(e.to_string()))?;
        let field = |c: usize| record.get(c).unwrap_or_default();
        let num = |c: usize| -> Result<u64, BenchError> {
            field(c)
                .parse()
                .map_err(|_| bad(format!("row {}: column {} is not a number", i + 1, CSV_HEADER[c])))
        };
        let small = |c: usize| -> Result<u32, BenchError> {
            u32::try_from(num(c)?).map_err(|_| bad(format!("row {}: column {} too large", i + 1, CSV_HEADER[c])))
        };
        mode = Some(field(0).parse::<Mode>().map_err(bad)?);
        base_seed = num(1)?;
        repetitions = small(2)?;
        scenes.push(SceneStats {
            scenario: field(3).to_string(),
            exception_bearing: field(4)
                .parse()
                .map_err(|_| bad(format!("row {}: exception_bearing is not a bool", i + 1)))?,
            runs: small(5)?,
            successes: small(6)?,
            steps_successful: num(7)?,
            steps_all: num(8)?,
            decisions: num(9)?,
            infeasible_runs: small(10)?,
            infeasible_actions: num(11)?,
        });
    }
    Ok(SuiteSummary {
        mode: mode.ok_or_else(|| bad("no rows".into()))?,
        base_seed,
        repetitions,
        scenes,
    })
}

#[derive(Serialize)]
struct JsonLine<'a> {
    mode: &'a str,
    scenario: &'a str,
    runs: u32,
    successes: u32,
    sr: String,
    #[serde(rename = "as")]
    avg_steps: String,
    as_all: String,
}

fn emit_jsonl(summary: &SuiteSummary) -> String {
    let mut out = String::new();
    for s in &summary.scenes {
        let line = JsonLine {
            mode: summary.mode.as_str(),
            scenario: &s.scenario,
            runs: s.runs,
            successes: s.successes,
            sr: fmt_sr(Some(s.success_rate())),
            avg_steps: fmt_as(s.average_steps()),
            as_all: fmt_as(s.average_steps_all()),
        };
        let _ = writeln!(out, "{}", serde_json::to_string(&line).expect("plain struct"));
    }
    let total_runs = summary.scenes.iter().map(|s| s.runs).sum();
    let total_successes = summary.scenes.iter().map(|s| s.successes).sum();
    let average = JsonLine {
        mode: summary.mode.as_str(),
        scenario: "Average",
        runs: total_runs,
        successes: total_successes,
        sr: fmt_sr(summary.average_success_rate()),
        avg_steps: fmt_as(summary.average_steps()),
        as_all: fmt_as(summary.average_steps_all()),
    };
    let _ = writeln!(out, "{}", serde_json::to_string(&average).expect("plain struct"));
    out
}

/// Human-readable ablation verdict, one line per scene plus the average.
pub fn emit_ablation(report: &AblationReport) -> String {
    let mut out = String::new();
    let verdict = |b: bool| if b { "ok" } else { "FAIL" };
    for r in report.rows.iter().chain([&report.average]) {
        let _ = writeln!(
            out,
            "{:<12} SR {} ≥ {} ≥ {} [{}]  AS {} ≤ {} ≤ {} [{}]{}",
            r.scenario,
            fmt_sr(Some(r.success_rate[0])),
            fmt_sr(Some(r.success_rate[1])),
            fmt_sr(Some(r.success_rate[2])),
            verdict(r.sr_ordered),
            fmt_as(r.average_steps[0]),
            fmt_as(r.average_steps[1]),
            fmt_as(r.average_steps[2]),
            verdict(r.as_ordered),
            if r.exception_bearing {
                format!("  strict [{}]", verdict(r.strict_sr))
            } else {
                String::new()
            }
        );
    }
    out
}
