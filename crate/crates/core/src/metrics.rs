//! Regression error metrics.
//!
//! MAE, RMSE and RMSPE over all samples and per cohort. RMSPE is reported as
//! the dimensionless ratio and, separately, multiplied by 100; it is undefined
//! (not silently skipped) for any group containing a zero target.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::annotation::Cohort;
use crate::error::{shape_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub rmspe: Option<f64>,
    pub rmspe_percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(flatten)]
    pub overall: GroupMetrics,
    pub per_cohort: BTreeMap<Cohort, GroupMetrics>,
}

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(shape_err!("{} targets vs {} predictions", y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(shape_err!("metrics need at least one sample"));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

/// When all absolute errors are equal, rounding can leave the computed root
/// mean square a few ulps below the mean; the result is clamped to MAE so the
/// power-mean bound holds exactly.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    let mae = mae(y, yhat)?;
    let rms = (y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
    Ok(rms.max(mae))
}

/// Root mean squared relative error; a zero target is a domain error.
pub fn rmspe(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    if y.contains(&0.0) {
        return Err(Error::Domain("RMSPE is undefined for a zero target".into()));
    }
    Ok((y.iter().zip(yhat).map(|(a, b)| ((a - b) / a).powi(2)).sum::<f64>() / y.len() as f64).sqrt())
}

fn group(y: &[f64], yhat: &[f64]) -> Result<GroupMetrics> {
    let rmspe = match rmspe(y, yhat) {
        Ok(v) => Some(v),
        Err(Error::Domain(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(GroupMetrics {
        n: y.len(),
        mae: mae(y, yhat)?,
        rmse: rmse(y, yhat)?,
        rmspe,
        rmspe_percent: rmspe.map(|r| 100.0 * r),
    })
}

pub fn compute(y: &[f64], yhat: &[f64], cohorts: &[Cohort]) -> Result<MetricsReport> {
    check(y, yhat)?;
    if cohorts.len() != y.len() {
        return Err(shape_err!("{} cohort labels for {} samples", cohorts.len(), y.len()));
    }
    let mut split: BTreeMap<Cohort, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for ((&a, &b), &c) in y.iter().zip(yhat).zip(cohorts) {
        let entry = split.entry(c).or_default();
        entry.0.push(a);
        entry.1.push(b);
    }
    let per_cohort = split
        .into_iter()
        .map(|(c, (a, b))| Ok((c, group(&a, &b)?)))
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        overall: group(y, yhat)?,
        per_cohort,
    })
}

impl MetricsReport {
    /// Pretty JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("metrics serialize");
        let mut s = serde_json::to_string_pretty(&v).expect("JSON values always serialize");
        s.push('\n');
        s
    }

    /// Fixed-width table, one row per group.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<8} {:>6} {:>10} {:>10} {:>10} {:>8}\n",
            "cohort", "n", "MAE", "RMSE", "RMSPE", "RMSPE%"
        );
        let rows = std::iter::once(("all", &self.overall)).chain(self.per_cohort.iter().map(|(c, g)| (c.as_str(), g)));
        for (name, g) in rows {
            let ratio = g.rmspe.map_or("undefined".to_string(), |v| format!("{v:.5}"));
            let pct = g.rmspe_percent.map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10.4} {:>10.4} {:>10} {:>8}",
                name, g.n, g.mae, g.rmse, ratio, pct
            );
        }
        out
    }
}

/// Plot-ready CSV with columns `actual,predicted,cohort` in input order.
pub fn scatter_export(y: &[f64], yhat: &[f64], cohorts: &[Cohort]) -> Result<String> {
    if y.len() != yhat.len() || y.len() != cohorts.len() {
        return Err(shape_err!("scatter columns differ in length"));
    }
    let mut out = String::from("actual,predicted,cohort\n");
    for ((a, p), c) in y.iter().zip(yhat).zip(cohorts) {
        let _ = writeln!(out, "{a},{p},{c}");
    }
    Ok(out)
}
