//! Evaluation quantities for the incremental protocol: per-session accuracy,
//! running average, base/new split with harmonic mean, and the base-vs-new
//! binary error rates.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmpError};

/// One evaluated sample: what it was, what we said, and which session its
/// true class was introduced in (0 = base).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfusionRecord {
    pub true_class: usize,
    pub predicted_class: usize,
    pub true_session: usize,
    pub predicted_session: usize,
}

/// Top-1 accuracy over a record set.
pub fn session_accuracy(records: &[ConfusionRecord]) -> Result<f64> {
    if records.is_empty() {
        return Err(SmpError::Input("no records to score".into()));
    }
    let correct = records.iter().filter(|r| r.true_class == r.predicted_class).count();
    Ok(correct as f64 / records.len() as f64)
}

/// Arithmetic mean of the per-session accuracies.
pub fn average_accuracy(a_t: &[f64]) -> Result<f64> {
    if a_t.is_empty() {
        return Err(SmpError::Input("no per-session accuracies".into()));
    }
    Ok(a_t.iter().sum::<f64>() / a_t.len() as f64)
}

/// Harmonic mean of base and new accuracy; 0 when both are 0 by convention.
pub fn harmonic_accuracy(a_o: f64, a_n: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a_o) || !(0.0..=1.0).contains(&a_n) {
        return Err(SmpError::Input(format!("accuracies out of [0,1]: ({a_o}, {a_n})")));
    }
    if a_o == 0.0 && a_n == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * a_o * a_n / (a_o + a_n))
}

/// Binarize by session of the true and predicted class: base classes
/// (session 0) are the positive group, everything newer is negative.
/// FNR = FN/(TP+FN), FPR = FP/(FP+TN).
pub fn fnr_fpr(records: &[ConfusionRecord]) -> Result<(f64, f64)> {
    let mut tp = 0usize;
    let mut fn_ = 0usize;
    let mut fp = 0usize;
    let mut tn = 0usize;
    for r in records {
        let true_base = r.true_session == 0;
        let pred_base = r.predicted_session == 0;
        match (true_base, pred_base) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    if tp + fn_ == 0 || fp + tn == 0 {
        return Err(SmpError::Input(
            "need at least one base-class and one new-class sample".into(),
        ));
    }
    Ok((fn_ as f64 / (tp + fn_) as f64, fp as f64 / (fp + tn) as f64))
}

/// Final run summary. Accuracies are fractions in [0,1]; the renderers below
/// convert to percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub a_t: Vec<f64>,
    pub a_avg: f64,
    pub a_final: f64,
    pub a_base: f64,
    pub a_new: f64,
    pub hacc: f64,
    pub fnr: f64,
    pub fpr: f64,
    pub seed: u64,
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if self.a_t.is_empty() {
            return Err(SmpError::Input("report has no sessions".into()));
        }
        let mean = average_accuracy(&self.a_t)?;
        if (self.a_avg - mean).abs() > 1e-12 {
            return Err(SmpError::Input(format!(
                "a_avg {} is not the mean of a_t ({mean})",
                self.a_avg
            )));
        }
        if (self.a_final - *self.a_t.last().unwrap()).abs() > 1e-12 {
            return Err(SmpError::Input("a_final differs from last a_t".into()));
        }
        Ok(())
    }

    fn percent(x: f64) -> String {
        format!("{:.1}", 100.0 * x)
    }

    /// One header line and one value line, one A_t column per session plus
    /// the aggregate columns.
    pub fn render_table(&self) -> String {
        let mut header: Vec<String> = (0..self.a_t.len()).map(|t| format!("A_{t}")).collect();
        header.extend(["A_avg", "A_base", "A_new", "HAcc", "FNR", "FPR"].map(String::from));
        let mut values: Vec<String> = self.a_t.iter().map(|a| Self::percent(*a)).collect();
        values.extend([
            Self::percent(self.a_avg),
            Self::percent(self.a_base),
            Self::percent(self.a_new),
            Self::percent(self.hacc),
            Self::percent(self.fnr),
            Self::percent(self.fpr),
        ]);
        let widths: Vec<usize> = header
            .iter()
            .zip(&values)
            .map(|(h, v)| h.len().max(v.len()))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        format!("{}\n{}\n", line(&header), line(&values))
    }

    /// Header row and value row with full-precision numbers.
    pub fn render_csv(&self) -> String {
        let mut header: Vec<String> = (0..self.a_t.len()).map(|t| format!("a_{t}")).collect();
        header.extend(["a_avg", "a_base", "a_new", "hacc", "fnr", "fpr", "seed"].map(String::from));
        let mut values: Vec<String> = self.a_t.iter().map(|a| format!("{a}")).collect();
        values.extend([
            format!("{}", self.a_avg),
            format!("{}", self.a_base),
            format!("{}", self.a_new),
            format!("{}", self.hacc),
            format!("{}", self.fnr),
            format!("{}", self.fpr),
            format!("{}", self.seed),
        ]);
        format!("{}\n{}\n", header.join(","), values.join(","))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeededRng;

    fn rec(t: usize, p: usize, ts: usize, ps: usize) -> ConfusionRecord {
        ConfusionRecord { true_class: t, predicted_class: p, true_session: ts, predicted_session: ps }
    }

    #[test]
    fn accuracy_basics() {
        let all = vec![rec(0, 0, 0, 0), rec(1, 1, 0, 0)];
        assert_eq!(session_accuracy(&all).unwrap(), 1.0);
        let none = vec![rec(0, 1, 0, 0), rec(1, 0, 0, 0)];
        assert_eq!(session_accuracy(&none).unwrap(), 0.0);
        let three_of_four = vec![rec(0, 0, 0, 0), rec(1, 1, 0, 0), rec(2, 2, 1, 1), rec(3, 0, 1, 0)];
        assert_eq!(session_accuracy(&three_of_four).unwrap(), 0.75);
        assert!(session_accuracy(&[]).is_err());
    }

    #[test]
    fn average_accuracy_is_mean() {
        assert!((average_accuracy(&[0.9, 0.8, 0.7]).unwrap() - 0.8).abs() < 1e-15);
        assert_eq!(average_accuracy(&[0.42]).unwrap(), 0.42);
        assert_eq!(average_accuracy(&[0.5, 0.5, 0.5, 0.5]).unwrap(), 0.5);
        assert!(average_accuracy(&[]).is_err());
    }

    #[test]
    fn harmonic_accuracy_values() {
        assert_eq!(harmonic_accuracy(0.6, 0.6).unwrap(), 0.6);
        let h = harmonic_accuracy(0.9, 0.8).unwrap();
        assert!((h - 2.0 * 0.9 * 0.8 / 1.7).abs() < 1e-15);
        assert!((h - 0.8470588235294118).abs() < 1e-12);
        assert_eq!(harmonic_accuracy(0.7, 0.0).unwrap(), 0.0);
        assert_eq!(harmonic_accuracy(0.0, 0.0).unwrap(), 0.0);
        assert!(harmonic_accuracy(1.2, 0.5).is_err());
    }

    #[test]
    fn harmonic_bounds_on_random_pairs() {
        let mut rng = SeededRng::new(7);
        for _ in 0..200 {
            let a = rng.next_f64();
            let b = rng.next_f64();
            let h = harmonic_accuracy(a, b).unwrap();
            let g = (a * b).sqrt();
            let m = 0.5 * (a + b);
            assert!(h <= g + 1e-12, "harmonic {h} > geometric {g}");
            assert!(g <= m + 1e-12, "geometric {g} > arithmetic {m}");
        }
    }

    #[test]
    fn fnr_fpr_hand_confusion() {
        // TP=90, FN=10, FP=20, TN=80.
        let mut records = Vec::new();
        for _ in 0..90 {
            records.push(rec(0, 0, 0, 0));
        }
        for _ in 0..10 {
            records.push(rec(0, 21, 0, 1));
        }
        for _ in 0..20 {
            records.push(rec(21, 0, 1, 0));
        }
        for _ in 0..80 {
            records.push(rec(21, 22, 1, 1));
        }
        let (fnr, fpr) = fnr_fpr(&records).unwrap();
        assert_eq!(fnr, 0.10);
        assert_eq!(fpr, 0.20);
    }

    #[test]
    fn fnr_fpr_edges() {
        let perfect = vec![rec(0, 0, 0, 0), rec(5, 5, 1, 1)];
        assert_eq!(fnr_fpr(&perfect).unwrap(), (0.0, 0.0));
        let all_new_as_base = vec![rec(0, 0, 0, 0), rec(5, 1, 1, 0), rec(6, 2, 1, 0)];
        assert_eq!(fnr_fpr(&all_new_as_base).unwrap().1, 1.0);
        // Only one group present.
        assert!(fnr_fpr(&[rec(0, 0, 0, 0)]).is_err());
    }

    fn sample_report() -> RunReport {
        RunReport {
            a_t: vec![0.9, 0.8, 0.7],
            a_avg: 0.7999999999999999,
            a_final: 0.7,
            a_base: 0.75,
            a_new: 0.6,
            hacc: 2.0 * 0.75 * 0.6 / 1.35,
            fnr: 0.1,
            fpr: 0.2,
            seed: 42,
            config: serde_json::json!({"seed": 42}),
        }
    }

    #[test]
    fn report_validate_and_json_keys() {
        let report = sample_report();
        report.validate().unwrap();
        let json = serde_json::to_value(&report).unwrap();
        let obj = json.as_object().unwrap();
        let mut keys: Vec<&str> = obj.keys().map(|k| k.as_str()).collect();
        keys.sort_unstable();
        assert_eq!(
            keys,
            ["a_avg", "a_base", "a_final", "a_new", "a_t", "config", "fnr", "fpr", "hacc", "seed"]
        );
        let back: RunReport = serde_json::from_value(json).unwrap();
        assert_eq!(back, report);

        let mut bad = report.clone();
        bad.a_avg = 0.5;
        assert!(bad.validate().is_err());
        bad = report;
        bad.a_final = 0.9;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn renderers() {
        let report = sample_report();
        let table = report.render_table();
        assert!(table.contains("A_0") && table.contains("A_2"));
        assert!(table.contains("A_avg") && table.contains("HAcc"));
        assert!(table.contains("90.0") && table.contains("70.0"));

        let csv = report.render_csv();
        let mut lines = csv.lines();
        let header: Vec<&str> = lines.next().unwrap().split(',').collect();
        let values: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(header.len(), values.len());
        let i = header.iter().position(|h| *h == "a_avg").unwrap();
        let parsed: f64 = values[i].parse().unwrap();
        assert_eq!(parsed, report.a_avg);
    }
}
