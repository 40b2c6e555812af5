//! Text and CSV rendering of evaluation results.

use std::cmp::Ordering;
use std::fmt::Write as _;

use crate::metrics::EvalReport;
use crate::sampler::Strategy;

/// Rounds a percentage half-up to two decimals.
///
/// Inputs are nudged by a tolerance far below display precision so values
/// such as `62.215` (stored as `62.21499…`) still round up.
pub fn round_half_up_2(x: f64) -> f64 {
    let scaled = x * 100.0;
    (scaled + 0.5 + 1e-7 * scaled.abs().max(1.0)).floor() / 100.0
}

/// Formats a fraction in `[0, 1]` as a two-decimal percentage.
pub fn pct(fraction: f64) -> String {
    format!("{:.2}", round_half_up_2(fraction * 100.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeaderboardRow {
    pub team: String,
    pub jf: f64,
    pub j: f64,
    pub f: f64,
}

/// Rows sorted by J&F descending; equal J&F falls back to team name.
pub fn leaderboard_rows(entries: &[(String, EvalReport)]) -> Vec<LeaderboardRow> {
    let mut rows: Vec<LeaderboardRow> = entries
        .iter()
        .map(|(team, r)| LeaderboardRow {
            team: team.clone(),
            jf: r.aggregate_jf(),
            j: r.aggregate_j,
            f: r.aggregate_f,
        })
        .collect();
    rows.sort_by(|a, b| {
        b.jf.partial_cmp(&a.jf)
            .unwrap_or(Ordering::Equal)
            .then_with(|| a.team.cmp(&b.team))
    });
    rows
}

fn render_table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    // numeric columns are right-aligned, text columns left-aligned
    let numeric: Vec<bool> = (0..headers.len())
        .map(|i| !rows.is_empty() && rows.iter().all(|r| r.get(i).is_some_and(|c| c.parse::<f64>().is_ok())))
        .collect();
    let line = |cells: &[String]| {
        let mut s = String::new();
        for (i, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if i > 0 {
                s.push_str(" | ");
            }
            let pad = w - cell.chars().count();
            if !numeric[i] {
                s.push_str(cell);
                s.extend(std::iter::repeat_n(' ', pad));
            } else {
                s.extend(std::iter::repeat_n(' ', pad));
                s.push_str(cell);
            }
        }
        s.trim_end().to_string()
    };
    let mut out = String::new();
    let header: Vec<String> = headers.iter().map(|h| h.to_string()).collect();
    out.push_str(&line(&header));
    out.push('\n');
    let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
    out.push_str(&line(&rule).replace(" | ", "-+-"));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row));
        out.push('\n');
    }
    out
}

fn csv_escape(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Plain-text leaderboard with columns Team, J&F, J, F.
pub fn render_leaderboard(entries: &[(String, EvalReport)]) -> String {
    let rows: Vec<Vec<String>> = leaderboard_rows(entries)
        .into_iter()
        .map(|r| vec![r.team, pct(r.jf), pct(r.j), pct(r.f)])
        .collect();
    render_table(&["Team", "J&F", "J", "F"], &rows)
}

pub fn render_leaderboard_csv(entries: &[(String, EvalReport)]) -> String {
    let mut out = String::from("Team,J&F,J,F\n");
    for r in leaderboard_rows(entries) {
        let _ = writeln!(out, "{},{},{},{}", csv_escape(&r.team), pct(r.jf), pct(r.j), pct(r.f));
    }
    out
}

/// One-line aggregate summary.
pub fn render_summary(report: &EvalReport) -> String {
    format!(
        "J&F {}  J {}  F {}",
        pct(report.aggregate_jf()),
        pct(report.aggregate_j),
        pct(report.aggregate_f)
    )
}

/// Per-expression CSV: `expression,J,F,J&F`.
pub fn render_report_csv(report: &EvalReport) -> String {
    let mut out = String::from("expression,J,F,J&F\n");
    for (key, s) in &report.per_expression {
        let _ = writeln!(out, "{},{},{},{}", csv_escape(key), pct(s.j), pct(s.f), pct(s.jf()));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub vlc: bool,
    pub strategy: Strategy,
    pub number: usize,
    pub report: EvalReport,
}

/// Table with columns VLC, KFS, Number, J&F in input order.
pub fn render_ablation(rows: &[AblationRow]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                if r.vlc { "✓" } else { "×" }.to_string(),
                r.strategy.to_string(),
                r.number.to_string(),
                pct(r.report.aggregate_jf()),
            ]
        })
        .collect();
    render_table(&["VLC", "KFS", "Number", "J&F"], &cells)
}

pub fn render_ablation_csv(rows: &[AblationRow]) -> String {
    let mut out = String::from("VLC,KFS,Number,J&F,J,F\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.vlc,
            r.strategy,
            r.number,
            pct(r.report.aggregate_jf()),
            pct(r.report.aggregate_j),
            pct(r.report.aggregate_f)
        );
    }
    out
}
