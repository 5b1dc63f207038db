//! Fine-tuning diagnostics over train/validation loss logs (metric version v1).
//!
//! - gap: `val - train` at steps where both losses were logged
//! - ratio: `val / train` at the same steps, with an informational [1.0, 3.0] band
//! - derivatives: forward differences `Δloss / Δstep`
//! - area between curves: signed trapezoidal integral of the gap over steps
//! - plateau: first step from which the relative change stays below a tolerance
//!   for a whole window
//! - overfit spikes: gap exceeding the rolling median of the preceding window

mod plot;

use std::io::BufRead;

use serde::{Deserialize, Serialize};
use serde_json::Value;

pub use plot::render_svg;

pub const METRIC_VERSION: &str = "v1";

/// Loss ratios observed during healthy fine-tuning; outside it a step is flagged.
pub const RATIO_BAND: (f64, f64) = (1.0, 3.0);

#[derive(Debug, thiserror::Error)]
pub enum AnalyticsError {
    #[error("step {0} does not increase over the previous step")]
    NonMonotonicSteps(u64),
    #[error("non-positive or non-finite loss at step {0}")]
    NonPositiveLoss(u64),
    #[error("line {0}: malformed loss log entry")]
    MalformedLine(usize),
    #[error("no step has both a train and a validation loss")]
    NoSharedSteps,
    #[error("series too short for this metric")]
    TooShort,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEntry {
    pub step: u64,
    pub train_loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_reserved_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub used_gb: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub entries: Vec<LossEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_meta: Option<RunMeta>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub step: u64,
    pub value: f64,
}

impl LossLog {
    /// Validates ordering and positivity; nothing is repaired.
    pub fn new(entries: Vec<LossEntry>, run_meta: Option<RunMeta>) -> Result<Self, AnalyticsError> {
        let mut prev: Option<u64> = None;
        for e in &entries {
            if prev.is_some_and(|p| e.step <= p) {
                return Err(AnalyticsError::NonMonotonicSteps(e.step));
            }
            let bad = |x: f64| !(x.is_finite() && x > 0.0);
            if bad(e.train_loss) || e.val_loss.is_some_and(bad) {
                return Err(AnalyticsError::NonPositiveLoss(e.step));
            }
            prev = Some(e.step);
        }
        Ok(LossLog { entries, run_meta })
    }

    pub fn train_series(&self) -> Vec<SeriesPoint> {
        self.entries.iter().map(|e| SeriesPoint { step: e.step, value: e.train_loss }).collect()
    }

    pub fn val_series(&self) -> Vec<SeriesPoint> {
        self.entries
            .iter()
            .filter_map(|e| e.val_loss.map(|v| SeriesPoint { step: e.step, value: v }))
            .collect()
    }

    /// `(step, train, val)` at steps where both losses exist.
    pub fn shared(&self) -> impl Iterator<Item = (u64, f64, f64)> + '_ {
        self.entries.iter().filter_map(|e| e.val_loss.map(|v| (e.step, e.train_loss, v)))
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(meta) = &self.run_meta {
            out.push_str(&serde_json::json!({ "meta": meta }).to_string());
            out.push('\n');
        }
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("entry serializes"));
            out.push('\n');
        }
        out
    }
}

/// Reads the line-delimited loss log: an optional leading `{"meta": {...}}`
/// line, then one `{"step", "train_loss", "val_loss"?}` object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn parse_loss_log<R: BufRead>(src: R) -> Result<LossLog, AnalyticsError> {
    let mut entries: Vec<LossEntry> = Vec::new();
    let mut run_meta = None;
    let mut seen_content = false;
    for (idx, line) in src.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|_| AnalyticsError::MalformedLine(line_no))?;
        if let Some(meta) = value.get("meta") {
            if seen_content {
                return Err(AnalyticsError::MalformedLine(line_no));
            }
            run_meta = Some(
                serde_json::from_value::<RunMeta>(meta.clone())
                    .map_err(|_| AnalyticsError::MalformedLine(line_no))?,
            );
            seen_content = true;
            continue;
        }
        seen_content = true;
        let entry: LossEntry =
            serde_json::from_value(value).map_err(|_| AnalyticsError::MalformedLine(line_no))?;
        if entries.last().is_some_and(|p| entry.step <= p.step) {
            return Err(AnalyticsError::NonMonotonicSteps(entry.step));
        }
        let bad = |x: f64| !(x.is_finite() && x > 0.0);
        if bad(entry.train_loss) || entry.val_loss.is_some_and(bad) {
            return Err(AnalyticsError::NonPositiveLoss(entry.step));
        }
        entries.push(entry);
    }
    Ok(LossLog { entries, run_meta })
}

pub fn loss_difference(log: &LossLog) -> Result<Vec<SeriesPoint>, AnalyticsError> {
    let gap: Vec<_> = log.shared().map(|(step, t, v)| SeriesPoint { step, value: v - t }).collect();
    if gap.is_empty() {
        Err(AnalyticsError::NoSharedSteps)
    } else {
        Ok(gap)
    }
}

pub fn loss_ratio(log: &LossLog) -> Result<Vec<SeriesPoint>, AnalyticsError> {
    let ratio: Vec<_> = log.shared().map(|(step, t, v)| SeriesPoint { step, value: v / t }).collect();
    if ratio.is_empty() {
        Err(AnalyticsError::NoSharedSteps)
    } else {
        Ok(ratio)
    }
}

/// Steps whose ratio lies outside [`RATIO_BAND`].
pub fn ratio_band_flags(ratio: &[SeriesPoint]) -> Vec<u64> {
    ratio
        .iter()
        .filter(|p| p.value < RATIO_BAND.0 || p.value > RATIO_BAND.1)
        .map(|p| p.step)
        .collect()
}

/// Forward differences; one value per point except the last.
pub fn loss_derivative(series: &[SeriesPoint]) -> Result<Vec<SeriesPoint>, AnalyticsError> {
    if series.len() < 2 {
        return Err(AnalyticsError::TooShort);
    }
    Ok(series
        .windows(2)
        .map(|w| SeriesPoint {
            step: w[0].step,
            value: (w[1].value - w[0].value) / (w[1].step - w[0].step) as f64,
        })
        .collect())
}

/// Signed trapezoidal integral of a series over its step axis.
pub fn trapezoid(series: &[SeriesPoint]) -> Result<f64, AnalyticsError> {
    if series.len() < 2 {
        return Err(AnalyticsError::TooShort);
    }
    Ok(series
        .windows(2)
        .map(|w| 0.5 * (w[0].value + w[1].value) * (w[1].step - w[0].step) as f64)
        .sum())
}

pub fn area_between_curves(log: &LossLog) -> Result<f64, AnalyticsError> {
    let gap = loss_difference(log).map_err(|_| AnalyticsError::TooShort)?;
    trapezoid(&gap)
}

fn relative_change(from: f64, to: f64) -> f64 {
    let diff = (to - from).abs();
    if diff == 0.0 {
        0.0
    } else {
        diff / from.abs()
    }
}

/// First step `s` such that every consecutive relative change within the
/// `window + 1` points starting at `s` is below `rel_tol`. `None` if never, or
/// if `window < 2`.
pub fn detect_plateau(series: &[SeriesPoint], window: usize, rel_tol: f64) -> Option<u64> {
    if window < 2 || series.len() <= window {
        return None;
    }
    let changes: Vec<f64> = series.windows(2).map(|w| relative_change(w[0].value, w[1].value)).collect();
    (0..=series.len() - 1 - window)
        .find(|&i| changes[i..i + window].iter().all(|&c| c < rel_tol))
        .map(|i| series[i].step)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Steps where the gap exceeds the median of the preceding `window` gap values
/// by more than `threshold`. Points without a full preceding window are skipped.
pub fn overfit_spikes(gap: &[SeriesPoint], window: usize, threshold: f64) -> Vec<u64> {
    if window == 0 {
        return Vec::new();
    }
    let mut buf = Vec::with_capacity(window);
    (window..gap.len())
        .filter(|&i| {
            buf.clear();
            buf.extend(gap[i - window..i].iter().map(|p| p.value));
            gap[i].value - median(&mut buf) > threshold
        })
        .map(|i| gap[i].step)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub plateau_window: usize,
    pub plateau_rel_tol: f64,
    pub spike_window: usize,
    pub spike_threshold: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions { plateau_window: 5, plateau_rel_tol: 1e-3, spike_window: 5, spike_threshold: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub metric_version: String,
    pub gap: Vec<SeriesPoint>,
    pub ratio: Vec<SeriesPoint>,
    /// Steps whose ratio falls outside the [1.0, 3.0] band. Informational.
    pub ratio_out_of_band: Vec<u64>,
    pub d_train: Vec<SeriesPoint>,
    pub d_val: Vec<SeriesPoint>,
    pub abc: f64,
    /// Plateau of the validation curve (training curve if no validation losses).
    pub plateau_step: Option<u64>,
    pub overfit_steps: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_meta: Option<RunMeta>,
}

pub fn loss_report(log: &LossLog, options: &ReportOptions) -> Result<LossReport, AnalyticsError> {
    let gap = loss_difference(log)?;
    let ratio = loss_ratio(log)?;
    let abc = trapezoid(&gap)?;
    let train = log.train_series();
    let val = log.val_series();
    let d_train = loss_derivative(&train).unwrap_or_default();
    let d_val = loss_derivative(&val).unwrap_or_default();
    let plateau_series = if val.is_empty() { &train } else { &val };
    Ok(LossReport {
        metric_version: METRIC_VERSION.to_string(),
        ratio_out_of_band: ratio_band_flags(&ratio),
        plateau_step: detect_plateau(plateau_series, options.plateau_window, options.plateau_rel_tol),
        overfit_steps: overfit_spikes(&gap, options.spike_window, options.spike_threshold),
        gap,
        ratio,
        d_train,
        d_val,
        abc,
        run_meta: log.run_meta.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log(rows: &[(u64, f64, Option<f64>)]) -> LossLog {
        LossLog::new(
            rows.iter().map(|&(step, t, v)| LossEntry { step, train_loss: t, val_loss: v }).collect(),
            None,
        )
        .unwrap()
    }

    fn series(values: &[f64]) -> Vec<SeriesPoint> {
        values.iter().enumerate().map(|(i, &v)| SeriesPoint { step: i as u64, value: v }).collect()
    }

    #[test]
    fn parse_errors() {
        let dup = "{\"step\":4,\"train_loss\":1.0}\n{\"step\":5,\"train_loss\":1.0}\n{\"step\":5,\"train_loss\":0.9}\n";
        assert!(matches!(parse_loss_log(dup.as_bytes()), Err(AnalyticsError::NonMonotonicSteps(5))));
        let zero = "{\"step\":1,\"train_loss\":0.0}\n";
        assert!(matches!(parse_loss_log(zero.as_bytes()), Err(AnalyticsError::NonPositiveLoss(1))));
        let neg_val = "{\"step\":1,\"train_loss\":1.0,\"val_loss\":-2}\n";
        assert!(matches!(parse_loss_log(neg_val.as_bytes()), Err(AnalyticsError::NonPositiveLoss(1))));
        let bad = "{\"step\":1,\"train_loss\":1.0}\n{oops\n";
        assert!(matches!(parse_loss_log(bad.as_bytes()), Err(AnalyticsError::MalformedLine(2))));
        let late_meta = "{\"step\":1,\"train_loss\":1.0}\n{\"meta\":{}}\n";
        assert!(matches!(parse_loss_log(late_meta.as_bytes()), Err(AnalyticsError::MalformedLine(2))));
    }

    #[test]
    fn parse_meta_and_entries() {
        let text = "{\"meta\":{\"duration_s\":1627.0,\"peak_reserved_gb\":14.605,\"used_gb\":5.853}}\n\
                    {\"step\":0,\"train_loss\":2.0,\"val_loss\":2.4}\n\n{\"step\":1,\"train_loss\":1.5}\n";
        let log = parse_loss_log(text.as_bytes()).unwrap();
        assert_eq!(log.entries.len(), 2);
        assert_eq!(log.run_meta.as_ref().unwrap().peak_reserved_gb, Some(14.605));
        assert_eq!(parse_loss_log(log.to_jsonl().as_bytes()).unwrap(), log);
    }

    #[test]
    fn difference_and_ratio() {
        let l = log(&[(0, 1.0, Some(1.4)), (1, 0.8, None), (2, 0.5, Some(2.0))]);
        let gap = loss_difference(&l).unwrap();
        assert_eq!(gap.len(), 2);
        assert!((gap[0].value - 0.4).abs() < 1e-15);
        let ratio = loss_ratio(&l).unwrap();
        assert_eq!(ratio[1].value, 4.0);
        assert_eq!(ratio_band_flags(&ratio), vec![2]);

        let l = log(&[(0, 1.0, Some(2.5))]);
        assert_eq!(loss_ratio(&l).unwrap()[0].value, 2.5);
        assert!(ratio_band_flags(&loss_ratio(&l).unwrap()).is_empty());

        let train_only = log(&[(0, 1.0, None)]);
        assert!(matches!(loss_difference(&train_only), Err(AnalyticsError::NoSharedSteps)));
        assert!(matches!(loss_ratio(&train_only), Err(AnalyticsError::NoSharedSteps)));
    }

    #[test]
    fn identical_curves() {
        let l = log(&[(0, 1.0, Some(1.0)), (3, 0.7, Some(0.7))]);
        assert!(loss_difference(&l).unwrap().iter().all(|p| p.value == 0.0));
        assert!(loss_ratio(&l).unwrap().iter().all(|p| p.value == 1.0));
        assert_eq!(area_between_curves(&l).unwrap(), 0.0);
    }

    #[test]
    fn derivative_examples() {
        let two = [SeriesPoint { step: 0, value: 2.0 }, SeriesPoint { step: 10, value: 1.0 }];
        let d = loss_derivative(&two).unwrap();
        assert_eq!(d.len(), 1);
        assert!((d[0].value + 0.1).abs() < 1e-15);
        let linear = series(&[1.0, 0.9, 0.8, 0.7, 0.6]);
        assert!(loss_derivative(&linear).unwrap().iter().all(|p| (p.value + 0.1).abs() < 1e-12));
        assert!(matches!(loss_derivative(&two[..1]), Err(AnalyticsError::TooShort)));
    }

    #[test]
    fn area_examples() {
        let rect = log(&(0..=10).map(|s| (s, 1.0, Some(1.5))).collect::<Vec<_>>());
        assert!((area_between_curves(&rect).unwrap() - 5.0).abs() < 1e-12);
        let hand = log(&[(0, 1.0, Some(1.2)), (1, 1.0, Some(1.4)), (2, 1.0, Some(1.6))]);
        assert!((area_between_curves(&hand).unwrap() - 0.8).abs() < 1e-12);
        let one = log(&[(0, 1.0, Some(1.2))]);
        assert!(matches!(area_between_curves(&one), Err(AnalyticsError::TooShort)));
    }

    #[test]
    fn plateau_examples() {
        let decreasing = series(&(0..50).map(|i| 10.0 - 0.1 * i as f64).collect::<Vec<_>>());
        assert_eq!(detect_plateau(&decreasing, 5, 0.0), None);
        let constant = series(&[0.7; 12]);
        assert_eq!(detect_plateau(&constant, 5, 1e-3), Some(0));
        assert_eq!(detect_plateau(&constant, 1, 1e-3), None);
        assert_eq!(detect_plateau(&constant[..5], 5, 1e-3), None);
    }

    #[test]
    fn spike_examples() {
        let mut flat = vec![0.1; 20];
        flat[12] = 0.9;
        assert_eq!(overfit_spikes(&series(&flat), 5, 0.5), vec![12]);
        assert!(overfit_spikes(&series(&[0.1, 0.9, 0.1]), 5, 0.5).is_empty());
        let gentle: Vec<f64> = (0..40).map(|i| 0.1 + 0.001 * i as f64).collect();
        assert!(overfit_spikes(&series(&gentle), 5, 0.05).is_empty());
    }

    #[test]
    fn report_uses_val_plateau() {
        let rows: Vec<_> = (0..40u64)
            .map(|s| {
                let v = if s < 25 { 1.0 + 0.01 * (25 - s) as f64 } else { 1.0 };
                (s, 0.5 + 0.2 / (s + 1) as f64, Some(v))
            })
            .collect();
        let report = loss_report(&log(&rows), &ReportOptions::default()).unwrap();
        assert_eq!(report.plateau_step, Some(25));
        assert_eq!(report.gap.len(), 40);
        assert_eq!(report.d_train.len(), 39);
        assert_eq!(report.metric_version, "v1");
    }
}
