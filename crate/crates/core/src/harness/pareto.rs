//! Loss calibration against the two single-objective anchors, and dominance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAT_ANCHOR: &str = "no_ads";
pub const ADS_ANCHOR: &str = "max_ads";

/// Slack allowed outside [0, 100] before a calibrated loss is reported as
/// suspicious.
const LOSS_TOLERANCE_PCT: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueSource {
    TrueValue,
    DrEstimate,
}

/// One policy's objective values, before calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyPoint {
    pub name: String,
    pub beta: Option<f64>,
    pub v_sat: f64,
    pub v_ads: f64,
}

impl PolicyPoint {
    pub fn new(name: impl Into<String>, beta: Option<f64>, v_sat: f64, v_ads: f64) -> Self {
        Self {
            name: name.into(),
            beta,
            v_sat,
            v_ads,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParetoRow {
    pub policy_name: String,
    pub beta: Option<f64>,
    pub sat_loss_pct: f64,
    pub ads_loss_pct: f64,
    pub v_sat: f64,
    pub v_ads: f64,
    pub source: ValueSource,
}

/// Percentage losses relative to the anchors: `no_ads` maps to (0, 100)
/// and `max_ads` to (100, 0).
pub fn pareto_losses(points: &[PolicyPoint], source: ValueSource) -> Result<Vec<ParetoRow>> {
    let find = |name: &str| {
        points
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::Argument(format!("anchor policy {name} missing")))
    };
    let sat_best = find(SAT_ANCHOR)?;
    let ads_best = find(ADS_ANCHOR)?;
    let sat_span = sat_best.v_sat - ads_best.v_sat;
    let ads_span = ads_best.v_ads - sat_best.v_ads;
    if !(sat_span.abs() > 0.0 && ads_span.abs() > 0.0) {
        return Err(Error::Degenerate(format!(
            "anchors do not separate the objectives (sat span {sat_span}, ads span {ads_span})"
        )));
    }
    let rows: Vec<ParetoRow> = points
        .iter()
        .map(|p| ParetoRow {
            policy_name: p.name.clone(),
            beta: p.beta,
            sat_loss_pct: 100.0 * (sat_best.v_sat - p.v_sat) / sat_span,
            ads_loss_pct: 100.0 * (ads_best.v_ads - p.v_ads) / ads_span,
            v_sat: p.v_sat,
            v_ads: p.v_ads,
            source,
        })
        .collect();
    for r in &rows {
        let out = |x: f64| !(-LOSS_TOLERANCE_PCT..=100.0 + LOSS_TOLERANCE_PCT).contains(&x);
        if out(r.sat_loss_pct) || out(r.ads_loss_pct) {
            log::warn!(
                "{} has losses ({:.2}, {:.2}) outside the anchor range",
                r.policy_name,
                r.sat_loss_pct,
                r.ads_loss_pct
            );
        }
    }
    Ok(rows)
}

/// `a` dominates `b` when it is at least as good on both objectives and
/// strictly better on one (both maximized).
pub fn dominates(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 >= b.0 && a.1 >= b.1 && (a.0 > b.0 || a.1 > b.1)
}

/// Indices of points not dominated by any other point.
pub fn non_dominated(values: &[(f64, f64)]) -> Vec<usize> {
    (0..values.len())
        .filter(|&i| !values.iter().any(|&v| dominates(v, values[i])))
        .collect()
}

/// Non-dominated rows, judged on calibrated losses (both minimized).
pub fn front_by_losses(rows: &[ParetoRow]) -> Vec<usize> {
    let v: Vec<(f64, f64)> = rows.iter().map(|r| (-r.sat_loss_pct, -r.ads_loss_pct)).collect();
    non_dominated(&v)
}

/// Non-dominated rows, judged on raw values.
pub fn front_by_values(rows: &[ParetoRow]) -> Vec<usize> {
    let v: Vec<(f64, f64)> = rows.iter().map(|r| (r.v_sat, r.v_ads)).collect();
    non_dominated(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn anchors() -> Vec<PolicyPoint> {
        vec![
            PolicyPoint::new("no_ads", None, 2.0, 0.0),
            PolicyPoint::new("max_ads", None, 1.0, 0.4),
        ]
    }

    #[test]
    fn anchors_and_midpoint() {
        let mut pts = anchors();
        pts.push(PolicyPoint::new("mid", Some(0.8), 1.5, 0.2));
        let rows = pareto_losses(&pts, ValueSource::TrueValue).unwrap();
        assert_eq!((rows[0].sat_loss_pct, rows[0].ads_loss_pct), (0.0, 100.0));
        assert_eq!((rows[1].sat_loss_pct, rows[1].ads_loss_pct), (100.0, 0.0));
        assert!((rows[2].sat_loss_pct - 50.0).abs() < 1e-12);
        assert!((rows[2].ads_loss_pct - 50.0).abs() < 1e-12);
        assert_eq!(rows[2].beta, Some(0.8));
    }

    #[test]
    fn degenerate_or_missing_anchors() {
        let pts = vec![
            PolicyPoint::new("no_ads", None, 1.0, 0.0),
            PolicyPoint::new("max_ads", None, 1.0, 0.3),
        ];
        assert!(matches!(pareto_losses(&pts, ValueSource::TrueValue), Err(Error::Degenerate(_))));
        assert!(matches!(
            pareto_losses(&anchors()[..1], ValueSource::TrueValue),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn dominance_basics() {
        assert!(dominates((1.0, 1.0), (1.0, 0.5)));
        assert!(!dominates((1.0, 1.0), (1.0, 1.0)));
        assert!(!dominates((2.0, 0.0), (1.0, 1.0)));
        assert_eq!(non_dominated(&[(1.0, 1.0), (0.5, 0.5), (2.0, 0.0), (1.0, 1.0)]), vec![0, 2, 3]);
    }

    fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
        prop::collection::vec((1.0..2.0f64, 0.0..0.4f64), 0..8)
    }

    proptest! {
        #[test]
        fn affine_rescaling_leaves_losses_unchanged(
            extra in points(), a in 0.1..10.0f64, b in -5.0..5.0f64, c in 0.1..10.0f64, d in -5.0..5.0f64,
        ) {
            let mut pts = anchors();
            pts.extend(extra.iter().enumerate().map(|(i, &(s, x))| PolicyPoint::new(format!("p{i}"), None, s, x)));
            let scaled: Vec<PolicyPoint> = pts
                .iter()
                .map(|p| PolicyPoint::new(p.name.clone(), None, a * p.v_sat + b, c * p.v_ads + d))
                .collect();
            let r1 = pareto_losses(&pts, ValueSource::TrueValue).unwrap();
            let r2 = pareto_losses(&scaled, ValueSource::TrueValue).unwrap();
            for (x, y) in r1.iter().zip(&r2) {
                prop_assert!((x.sat_loss_pct - y.sat_loss_pct).abs() < 1e-8);
                prop_assert!((x.ads_loss_pct - y.ads_loss_pct).abs() < 1e-8);
            }
        }

        #[test]
        fn front_is_the_same_on_values_and_losses(extra in points()) {
            let mut pts = anchors();
            pts.extend(extra.iter().enumerate().map(|(i, &(s, x))| PolicyPoint::new(format!("p{i}"), None, s, x)));
            let rows = pareto_losses(&pts, ValueSource::TrueValue).unwrap();
            prop_assert_eq!(front_by_values(&rows), front_by_losses(&rows));
        }
    }
}
