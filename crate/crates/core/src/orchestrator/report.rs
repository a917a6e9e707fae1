//! Plain-text result tables.

use super::{AblationReport, RandomSearchResult, SearchState, SizeSweepRow};

/// Changes smaller than this many percentage points print as `→`.
pub const TREND_THRESHOLD_PP: f64 = 1.0;

/// Accuracy in `[0, 1]` as a percentage with one decimal.
pub fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Trend arrow from `prev` to `cur`, compared at the printed precision.
pub fn trend(prev: f64, cur: f64) -> char {
    let tenths = |x: f64| (1000.0 * x).round() as i64;
    let d = tenths(cur) - tenths(prev);
    let t = (10.0 * TREND_THRESHOLD_PP).round() as i64;
    if d >= t {
        '↑'
    } else if d <= -t {
        '↓'
    } else {
        '→'
    }
}

/// Count with a `K`, `M` or `G` suffix.
pub fn si(n: u64) -> String {
    let x = n as f64;
    if x >= 1e9 {
        format!("{:.2}G", x / 1e9)
    } else if x >= 1e6 {
        format!("{:.2}M", x / 1e6)
    } else if x >= 1e3 {
        format!("{:.2}K", x / 1e3)
    } else {
        n.to_string()
    }
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

fn layout(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| format!("{s}{}", " ".repeat(widths[c] - s.chars().count())))
            .collect();
        out.push_str(line.join("   ").trim_end());
        out.push('\n');
    }
    out
}

/// Per-cycle mean rollout accuracy and argmax Top-1 with trend arrows; `*` marks a run's best Top-1.
pub fn search_table(runs: &[&SearchState]) -> String {
    let cycles = runs.iter().map(|s| s.cycles.len()).max().unwrap_or(0);
    let mut head = vec!["Rollouts".to_string(), "Top-1".to_string()];
    let mut sub = vec![String::new(), String::new()];
    for k in 1..=cycles {
        head.push(format!("{} update", ordinal(k)));
        sub.push("Avg. - Top-1".to_string());
    }
    let mut rows = vec![head, sub];
    for s in runs {
        let best = s.cycles.iter().map(|c| c.argmax.test.point).fold(f64::NEG_INFINITY, f64::max);
        let mut row = vec![s.config.rollouts.to_string(), if s.cycles.is_empty() { "--".into() } else { pct(best) }];
        for k in 0..cycles {
            let Some(c) = s.cycles.get(k) else {
                row.push("--".into());
                continue;
            };
            let (avg, top) = (c.mean_rollout_accuracy, c.argmax.test.point);
            let star = if top == best { "*" } else { "" };
            let cell = match k.checked_sub(1).and_then(|j| s.cycles.get(j)) {
                Some(p) => format!(
                    "{} {} - {}{star} {}",
                    pct(avg),
                    trend(p.mean_rollout_accuracy, avg),
                    pct(top),
                    trend(p.argmax.test.point, top)
                ),
                None => format!("{} - {}{star}", pct(avg), pct(top)),
            };
            row.push(cell);
        }
        rows.push(row);
    }
    layout(&rows)
}

/// Random search against the controller search: best Top-1 and the student trainings it took.
pub fn comparison_table(protocol: &str, random: &RandomSearchResult, search: &SearchState) -> String {
    let best = search.best.as_ref().map_or(0.0, |b| b.accuracy);
    layout(&[
        vec![String::new(), protocol.to_string()],
        vec![
            "Random search".into(),
            format!("{} - {} iterations", pct(random.retrained.test.point), random.iterations()),
        ],
        vec![
            "Controller search".into(),
            format!("{} - {} iterations", pct(best), search.iterations_to_best()),
        ],
    ])
}

/// Winner size and accuracy for each searched space.
pub fn size_table(rows: &[SizeSweepRow]) -> String {
    let mut out = vec![vec!["Model".into(), "FLOPs".into(), "Parameters".into(), "Top-1".into()]];
    for r in rows {
        out.push(vec![r.label.clone(), si(r.flops), si(r.parameters as u64), pct(r.top1)]);
    }
    layout(&out)
}

/// Feature-bundle ablation with 95% intervals and the z-test.
pub fn ablation_table(report: &AblationReport) -> String {
    let mut out = vec![vec![
        "Input".into(),
        "Top-1".into(),
        "lo".into(),
        "hi".into(),
        "z".into(),
        "p".into(),
    ]];
    for r in &report.rows {
        out.push(vec![
            r.input.clone(),
            format!("{} ± {}", pct(r.test.point), pct(r.test.half_width())),
            pct(r.test.lo),
            pct(r.test.hi),
            format!("{:.3}", r.z),
            format!("{:.4}", r.p),
        ]);
    }
    layout(&out)
}
