//! Charts and markdown tables from learning-curve and summary CSVs.

use std::fmt::Write;

use serde::Deserialize;

use crate::svg::{Chart, Point, Series};

#[derive(Debug, Deserialize)]
struct CurveRecord {
    method: String,
    step: u64,
    eval_final_mae_mean: f64,
    eval_final_mae_std: f64,
}

#[derive(Debug, Deserialize)]
struct SummaryRecord {
    method: String,
    alpha: f64,
    budget: f64,
    n_agents: usize,
    final_mae_mean: Option<f64>,
    ci95_low: Option<f64>,
    ci95_high: Option<f64>,
    n_seeds: usize,
}

/// What a CSV file holds, decided by its header.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportKind {
    LearningCurve,
    Summary,
}

#[derive(Debug)]
pub struct Rendered {
    pub kind: ReportKind,
    pub svg: String,
    pub markdown: String,
    /// Number of data rows read.
    pub rows: usize,
}

fn read_rows<T: for<'de> Deserialize<'de>>(text: &str) -> Result<Vec<T>, String> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.deserialize().enumerate() {
        // Row 1 is the header.
        rows.push(rec.map_err(|e| format!("malformed CSV at row {}: {e}", i + 2))?);
    }
    Ok(rows)
}

pub fn detect(text: &str) -> Result<ReportKind, String> {
    let header = text.lines().next().unwrap_or("").trim();
    let cols: Vec<&str> = header.split(',').collect();
    if cols.contains(&"eval_final_mae_mean") && cols.contains(&"step") && !cols.contains(&"alpha") {
        Ok(ReportKind::LearningCurve)
    } else if cols.contains(&"final_mae_mean") && cols.contains(&"ci95_low") {
        Ok(ReportKind::Summary)
    } else {
        Err(format!("unrecognized CSV header '{header}'; expected a learning_curve.csv or summary.csv"))
    }
}

pub fn render(text: &str) -> Result<Rendered, String> {
    match detect(text)? {
        ReportKind::LearningCurve => learning_curve(text),
        ReportKind::Summary => summary(text),
    }
}

/// Groups preserving first-appearance order.
fn group_by<T, K: PartialEq + Clone>(items: impl IntoIterator<Item = T>, key: impl Fn(&T) -> K) -> Vec<(K, Vec<T>)> {
    let mut groups: Vec<(K, Vec<T>)> = Vec::new();
    for item in items {
        let k = key(&item);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(item),
            None => groups.push((k, vec![item])),
        }
    }
    groups
}

/// Mean over seeds of the per-seed means; spread pools within-seed and
/// between-seed variance, i.e. the std over seeds x evaluation episodes.
fn pooled(rows: &[&CurveRecord]) -> Option<(f64, f64)> {
    let ok: Vec<_> = rows.iter().filter(|r| r.eval_final_mae_mean.is_finite()).collect();
    if ok.is_empty() {
        return None;
    }
    let n = ok.len() as f64;
    let mean = ok.iter().map(|r| r.eval_final_mae_mean).sum::<f64>() / n;
    let within = ok.iter().map(|r| r.eval_final_mae_std.powi(2)).sum::<f64>() / n;
    let between = ok.iter().map(|r| (r.eval_final_mae_mean - mean).powi(2)).sum::<f64>() / n;
    Some((mean, (within + between).sqrt()))
}

fn learning_curve(text: &str) -> Result<Rendered, String> {
    let rows: Vec<CurveRecord> = read_rows(text)?;
    let by_method = group_by(rows.iter(), |r| r.method.clone());
    let mut series = Vec::new();
    let mut md = String::from("| method | step | final MAE mean | final MAE std | seeds |\n|---|---|---|---|---|\n");
    for (method, rows) in &by_method {
        let mut by_step = group_by(rows.iter().copied(), |r| r.step);
        by_step.sort_by_key(|(s, _)| *s);
        let points: Vec<Point> = by_step
            .iter()
            .filter_map(|(step, rs)| {
                pooled(rs).map(|(y, sd)| Point { x: *step as f64, y, lo: y - sd, hi: y + sd })
            })
            .collect();
        if let Some((step, rs)) = by_step.last() {
            let seeds = rs.iter().filter(|r| r.eval_final_mae_mean.is_finite()).count();
            match pooled(rs) {
                Some((m, sd)) => {
                    let _ = writeln!(md, "| {method} | {step} | {m:.4} | {sd:.4} | {seeds} |");
                }
                None => {
                    let _ = writeln!(md, "| {method} | {step} | – | – | 0 |");
                }
            }
        }
        series.push(Series { name: method.clone(), points });
    }
    let chart = Chart {
        title: "Evaluation final-step MAE (mean ± std)".into(),
        x_label: "training step".into(),
        y_label: "MAE (ppm)".into(),
        log_y: false,
        series,
    };
    Ok(Rendered { kind: ReportKind::LearningCurve, svg: chart.render()?, markdown: md, rows: rows.len() })
}

fn summary(text: &str) -> Result<Rendered, String> {
    let rows: Vec<SummaryRecord> = read_rows(text)?;
    let fmt = |v: Option<f64>| v.map_or_else(|| "–".to_string(), |v| format!("{v:.4}"));
    let mut md = String::from(
        "| method | alpha | budget (m) | agents | final MAE mean | 95% CI (Student-t) | seeds |\n|---|---|---|---|---|---|---|\n",
    );
    for r in &rows {
        let ci = match (r.ci95_low, r.ci95_high) {
            (Some(lo), Some(hi)) => format!("[{lo:.4}, {hi:.4}]"),
            _ => "–".into(),
        };
        let _ = writeln!(
            md,
            "| {} | {} | {} | {} | {} | {ci} | {} |",
            r.method,
            r.alpha,
            r.budget,
            r.n_agents,
            fmt(r.final_mae_mean),
            r.n_seeds
        );
    }
    let groups = group_by(rows.iter(), |r| (r.method.clone(), r.alpha.to_bits(), r.n_agents));
    let multi_alpha = groups.iter().map(|((_, a, _), _)| *a).collect::<std::collections::BTreeSet<_>>().len() > 1;
    let multi_n = groups.iter().map(|((_, _, n), _)| *n).collect::<std::collections::BTreeSet<_>>().len() > 1;
    let mut series = Vec::new();
    for ((method, alpha, n), rs) in &groups {
        let mut name = method.clone();
        if multi_alpha {
            let _ = write!(name, " α={}", f64::from_bits(*alpha));
        }
        if multi_n {
            let _ = write!(name, " N={n}");
        }
        let mut points: Vec<Point> = rs
            .iter()
            .filter_map(|r| {
                let y = r.final_mae_mean?;
                Some(Point { x: r.budget, y, lo: r.ci95_low.unwrap_or(y), hi: r.ci95_high.unwrap_or(y) })
            })
            .collect();
        points.sort_by(|a, b| a.x.total_cmp(&b.x));
        series.push(Series { name, points });
    }
    let chart = Chart {
        title: "Final MAE vs flight budget (95% CI)".into(),
        x_label: "budget per drone (m)".into(),
        y_label: "final MAE (ppm, log scale)".into(),
        log_y: true,
        series,
    };
    Ok(Rendered { kind: ReportKind::Summary, svg: chart.render()?, markdown: md, rows: rows.len() })
}
