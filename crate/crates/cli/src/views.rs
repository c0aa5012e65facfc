//! Read-only summaries of a project, shared by `status` and the HTTP API.

use serde::Serialize;
use stagecheck_core::{Project, StepKind, StepState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CheckSummary {
    pub passed: usize,
    pub total: usize,
}

/// One row of the status table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepView {
    pub name: String,
    pub kind: StepKind,
    pub state: StepState,
    pub latest_run_id: Option<String>,
    pub stale: bool,
    pub check_summary: CheckSummary,
}

/// Step views in project order. Check counts come from the latest run, or
/// `0/<declared checks>` when the step never ran.
pub fn step_views(project: &Project) -> Vec<StepView> {
    let states = project.step_states();
    project
        .manifest()
        .steps
        .iter()
        .map(|step| {
            let latest = project.latest_run(&step.name);
            let state = states[&step.name];
            StepView {
                name: step.name.clone(),
                kind: step.kind,
                state,
                latest_run_id: latest.map(|r| r.run_id.to_string()),
                stale: state == StepState::Stale,
                check_summary: match latest {
                    Some(run) => CheckSummary {
                        passed: run.checks_passed(),
                        total: run.check_outcomes.len(),
                    },
                    None => CheckSummary {
                        passed: 0,
                        total: step.checks.len(),
                    },
                },
            }
        })
        .collect()
}

/// Fixed-width text table of `views`.
pub fn render_table(views: &[StepView]) -> String {
    let headers = ["STEP", "KIND", "STATE", "CHECKS", "LATEST RUN"];
    let rows: Vec<[String; 5]> = views
        .iter()
        .map(|v| {
            [
                v.name.clone(),
                v.kind.to_string(),
                v.state.to_string(),
                format!("{}/{}", v.check_summary.passed, v.check_summary.total),
                v.latest_run_id.clone().unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths = headers.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        padded.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = line(&headers);
    for row in &rows {
        out += &line(&row.each_ref().map(String::as_str));
    }
    out
}
