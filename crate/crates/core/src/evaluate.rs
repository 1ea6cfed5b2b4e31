//! Test-time rescaled prediction and classification metrics.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{domain, shape, Result};
use crate::loss::{self, LossKind};
use crate::model::Predictor;

pub const ECE_BINS: usize = 15;
pub const HISTOGRAM_BINS: usize = 20;

/// Training-set statistics frozen for the rescaled predictor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaleParams {
    pub x_mean: Vec<f64>,
    pub y_mean: Vec<f64>,
    pub theta_bar: f64,
}

impl RescaleParams {
    pub fn from_training(train: &Dataset, theta_bar: f64) -> Result<Self> {
        check_theta_bar(theta_bar)?;
        let s = train.stats();
        Ok(Self {
            x_mean: s.x_mean.iter().copied().collect(),
            y_mean: s.y_mean.iter().copied().collect(),
            theta_bar,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum PredictionMode {
    #[default]
    Raw,
    Rescaled(RescaleParams),
}

impl PredictionMode {
    pub fn name(&self) -> &'static str {
        match self {
            PredictionMode::Raw => "raw",
            PredictionMode::Rescaled(_) => "rescaled",
        }
    }
}

fn check_theta_bar(theta_bar: f64) -> Result<()> {
    if !(0.5..=1.0).contains(&theta_bar) {
        return domain(format!("theta_bar must lie in [1/2, 1] (got {theta_bar})"));
    }
    Ok(())
}

/// `ȳ(1 − 1/θ̄) + f(θ̄x + (1 − θ̄)x̄)/θ̄`. For classifiers this acts on logits.
pub fn rescaled_predict<P: Predictor + ?Sized>(
    model: &P,
    x: &DVector<f64>,
    xbar: &DVector<f64>,
    ybar: &DVector<f64>,
    theta_bar: f64,
) -> Result<DVector<f64>> {
    check_theta_bar(theta_bar)?;
    if xbar.len() != x.len() || ybar.len() != model.output_dim() {
        return shape("rescaling statistics do not match the model dimensions");
    }
    let shrunk = x * theta_bar + xbar * (1.0 - theta_bar);
    Ok(ybar * (1.0 - 1.0 / theta_bar) + model.predict(&shrunk) / theta_bar)
}

pub fn predict<P: Predictor + ?Sized>(model: &P, x: &DVector<f64>, mode: &PredictionMode) -> Result<DVector<f64>> {
    match mode {
        PredictionMode::Raw => Ok(model.predict(x)),
        PredictionMode::Rescaled(r) => rescaled_predict(
            model,
            x,
            &DVector::from_column_slice(&r.x_mean),
            &DVector::from_column_slice(&r.y_mean),
            r.theta_bar,
        ),
    }
}

/// Binned expected calibration error over equal-width, right-closed bins on
/// `(0, 1]`; a confidence of exactly 0 falls in the first bin.
pub fn ece(confidences: &[f64], correct: &[bool], n_bins: usize) -> Result<f64> {
    if confidences.len() != correct.len() {
        return shape("confidences and correctness flags differ in length");
    }
    if n_bins == 0 {
        return domain("need at least one bin");
    }
    if let Some(c) = confidences.iter().find(|c| !(0.0..=1.0).contains(*c)) {
        return domain(format!("confidence {c} outside [0, 1]"));
    }
    if confidences.is_empty() {
        return Ok(0.0);
    }
    let mut count = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0; n_bins];
    let mut hits = vec![0usize; n_bins];
    for (&c, &ok) in confidences.iter().zip(correct) {
        let b = ((c * n_bins as f64).ceil() as usize).clamp(1, n_bins) - 1;
        count[b] += 1;
        conf_sum[b] += c;
        hits[b] += usize::from(ok);
    }
    let n = confidences.len() as f64;
    Ok((0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / n * (hits[b] as f64 / nb - conf_sum[b] / nb).abs()
        })
        .sum())
}

/// 20 equal-width bins on `[0, 1]`, the last one closed.
pub fn confidence_histogram(confidences: &[f64]) -> Vec<usize> {
    let mut h = vec![0usize; HISTOGRAM_BINS];
    for &c in confidences {
        let b = ((c * HISTOGRAM_BINS as f64).floor() as usize).min(HISTOGRAM_BINS - 1);
        h[b] += 1;
    }
    h
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub accuracy: f64,
    pub ce_loss: f64,
    pub ece: f64,
    pub mean_entropy: f64,
    pub mean_confidence: f64,
    pub confidence_histogram: Vec<usize>,
}

impl MetricsRow {
    pub const CSV_HEADER: &'static str = "accuracy,ce_loss,ece,mean_entropy,mean_confidence";

    pub fn csv_fields(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?}",
            self.accuracy, self.ce_loss, self.ece, self.mean_entropy, self.mean_confidence
        )
    }

    /// `bin_left,bin_right,count` lines with header.
    pub fn histogram_csv(&self) -> String {
        let nb = self.confidence_histogram.len() as f64;
        let mut s = String::from("bin_left,bin_right,count\n");
        for (b, c) in self.confidence_histogram.iter().enumerate() {
            s.push_str(&format!("{:?},{:?},{c}\n", b as f64 / nb, (b + 1) as f64 / nb));
        }
        s
    }
}

/// Cross-entropy of a prediction against a class label: softmax for vector
/// outputs, the logistic loss for a scalar logit.
pub fn label_loss(u: &DVector<f64>, label: usize) -> Result<f64> {
    if u.len() == 1 {
        loss::value(LossKind::Logistic, &DVector::from_element(1, label as f64), u)
    } else {
        if label >= u.len() {
            return shape(format!("label {label} out of range for {} classes", u.len()));
        }
        Ok(loss::log_sum_exp(u) - u[label])
    }
}

fn argmax(p: &DVector<f64>) -> usize {
    p.argmax().0
}

pub fn metrics<P: Predictor + ?Sized>(model: &P, ds_test: &Dataset, mode: &PredictionMode) -> Result<MetricsRow> {
    metrics_with_bins(model, ds_test, mode, ECE_BINS)
}

pub fn metrics_with_bins<P: Predictor + ?Sized>(
    model: &P,
    ds_test: &Dataset,
    mode: &PredictionMode,
    ece_bins: usize,
) -> Result<MetricsRow> {
    if ds_test.is_empty() {
        return domain("empty test set");
    }
    let labels = ds_test.labels();
    let mut conf = Vec::with_capacity(labels.len());
    let mut correct = Vec::with_capacity(labels.len());
    let (mut ce, mut ent) = (0.0, 0.0);
    for (i, &lab) in labels.iter().enumerate() {
        let u = predict(model, &ds_test.x(i), mode)?;
        let p = loss::probabilities(&u);
        let k = argmax(&p);
        conf.push(p[k]);
        correct.push(k == lab);
        ce += label_loss(&u, lab)?;
        ent += loss::entropy(&p)?;
    }
    let n = labels.len() as f64;
    Ok(MetricsRow {
        accuracy: correct.iter().filter(|&&c| c).count() as f64 / n,
        ce_loss: ce / n,
        ece: ece(&conf, &correct, ece_bins)?,
        mean_entropy: ent / n,
        mean_confidence: conf.iter().sum::<f64>() / n,
        confidence_histogram: confidence_histogram(&conf),
    })
}

/// Accuracy only, without the other metrics.
pub fn accuracy<P: Predictor + ?Sized>(model: &P, ds: &Dataset) -> f64 {
    let labels = ds.labels();
    let hits = labels
        .iter()
        .enumerate()
        .filter(|&(i, &lab)| argmax(&loss::probabilities(&model.predict(&ds.x(i)))) == lab)
        .count();
    hits as f64 / labels.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinearModel;
    use nalgebra::DMatrix;

    #[test]
    fn ece_hand_cases() {
        assert_eq!(ece(&[1.0; 4], &[true; 4], 15).unwrap(), 0.0);
        assert!((ece(&[1.0; 4], &[true, false, true, false], 15).unwrap() - 0.5).abs() < 1e-15);
        let v = ece(&[0.6, 0.6, 0.9, 0.9], &[true, false, true, true], 3).unwrap();
        assert!((v - 0.10).abs() < 1e-12, "{v}");
        assert!(ece(&[1.2], &[true], 15).is_err());
        assert!(ece(&[-0.1], &[true], 15).is_err());
    }

    #[test]
    fn rescaled_identity_cases() {
        let m = LinearModel::new(DMatrix::from_row_slice(2, 2, &[1.0, -3.0, 0.5, 2.0]), DVector::from_vec(vec![0.2, -1.0]))
            .unwrap();
        let x = DVector::from_vec(vec![0.3, 0.9]);
        let xbar = DVector::from_vec(vec![1.0, -2.0]);
        let ybar = DVector::from_vec(vec![0.4, 0.6]);
        assert_eq!(rescaled_predict(&m, &x, &xbar, &ybar, 1.0).unwrap(), m.predict(&x));
        assert!(rescaled_predict(&m, &x, &xbar, &ybar, 0.4).is_err());
        let m0 = LinearModel::new(m.w.clone(), DVector::zeros(2)).unwrap();
        let z = DVector::zeros(2);
        let r = rescaled_predict(&m0, &x, &z, &z, 0.75).unwrap();
        assert!((r - m0.predict(&x)).abs().max() < 1e-15);
    }

    #[test]
    fn uniform_predictor_metrics() {
        let x = DMatrix::from_fn(6, 1, |i, _| i as f64);
        let ds = Dataset::from_labels(x, &[0, 1, 0, 1, 0, 1], 2).unwrap();
        let m = LinearModel::zeros(1, 2);
        let r = metrics(&m, &ds, &PredictionMode::Raw).unwrap();
        assert!((r.mean_entropy - 2f64.ln()).abs() < 1e-15);
        assert_eq!(r.confidence_histogram.iter().sum::<usize>(), 6);
        assert!((r.ce_loss - 2f64.ln()).abs() < 1e-15);
    }
}
