use std::fmt::Write;

use super::crossval::CrossvalReport;

const HEADER: [&str; 5] = ["Features", "Model", "F1", "Recall", "Precision"];

fn rows(report: &CrossvalReport) -> Vec<[String; 5]> {
    report
        .models
        .iter()
        .map(|m| {
            let x = m.pooled.metrics;
            [
                m.model.features().to_string(),
                m.model.model_name().to_string(),
                format!("{:.2}", x.f1),
                format!("{:.2}", x.recall),
                format!("{:.2}", x.precision),
            ]
        })
        .collect()
}

/// Aligned plain-text table of the pooled metrics.
pub fn render_table(report: &CrossvalReport) -> String {
    let rows = rows(report);
    let mut widths = HEADER.map(str::len);
    for r in &rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.len());
        }
    }
    let line = |cells: &[&str]| {
        let mut out = String::new();
        for (i, (c, w)) in cells.iter().zip(widths).enumerate() {
            if i > 0 {
                out.push_str(" | ");
            }
            if i < 2 {
                let _ = write!(out, "{c:<w$}");
            } else {
                let _ = write!(out, "{c:>w$}");
            }
        }
        out.trim_end().to_string() + "\n"
    };
    let mut out = line(&HEADER);
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-|-"));
    out.push('\n');
    for r in &rows {
        out.push_str(&line(&r.each_ref().map(String::as_str)));
    }
    out
}

/// Per-fold and pooled metrics as CSV, full precision.
pub fn render_csv(report: &CrossvalReport) -> String {
    let mut out = String::from("model,fold,tp,fp,tn,fn,f1,recall,precision\n");
    for m in &report.models {
        let name = serde_json::to_value(m.model).expect("serializable").as_str().unwrap_or_default().to_string();
        for f in m.folds.iter().chain(std::iter::once(&m.pooled)) {
            let fold = if f.fold == m.folds.len() { "pooled".to_string() } else { f.fold.to_string() };
            let c = f.confusion;
            let x = f.metrics;
            let _ = writeln!(out, "{name},{fold},{},{},{},{},{},{},{}", c.tp, c.fp, c.tn, c.fn_, x.f1, x.recall, x.precision);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ClassCounts, CorpusKind, Label};
    use crate::eval::crossval::{model_reports, CrossvalConfig, ModelKind, PredictionRecord};

    fn report() -> CrossvalReport {
        let mut predictions = Vec::new();
        let counts = [(Label::Depressed, Label::Depressed, 11), (Label::NonDepressed, Label::Depressed, 3), (Label::Depressed, Label::NonDepressed, 1), (Label::NonDepressed, Label::NonDepressed, 20)];
        for (truth, predicted, n) in counts {
            for i in 0..n {
                for (fold, model) in [(0, ModelKind::Fusion), (1, ModelKind::Baseline)] {
                    predictions.push(PredictionRecord { participant: format!("{truth:?}{predicted:?}{i}"), fold, model, truth, predicted, p_depressed: 0.5 });
                }
            }
        }
        CrossvalReport {
            kind: CorpusKind::ThreeResponse,
            config: CrossvalConfig::default(),
            participants: ClassCounts::from_labels([Label::Depressed; 12].into_iter().chain([Label::NonDepressed; 23])),
            folds: Vec::new(),
            models: model_reports(&predictions, 2),
            predictions,
        }
    }

    #[test]
    fn table_rows_are_aligned_with_two_decimals() {
        let table = render_table(&report());
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "Features     | Model                  |   F1 | Recall | Precision");
        assert!(lines.contains(&"Audio + Text | Modal-attention fusion | 0.85 |   0.92 |      0.79"), "{table}");
        assert!(lines.iter().skip(2).all(|l| l.len() == lines[0].len()));
    }

    #[test]
    fn csv_has_a_pooled_row_per_model() {
        let csv = render_csv(&report());
        let pooled: Vec<&str> = csv.lines().filter(|l| l.contains(",pooled,")).collect();
        assert_eq!(pooled.len(), 2);
        assert!(csv.lines().any(|l| l.starts_with("fusion,0,11,3,20,1,")), "{csv}");
    }
}
