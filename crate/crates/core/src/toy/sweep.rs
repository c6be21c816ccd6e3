//! Dose-response sweeps over the MRP weight and the per-layer virtual-margin scan.

use serde::{Deserialize, Serialize};

use super::model::ToyLm;
use super::train::{audit_tokens, audit_windows, evaluate_ce, train, TrainConfig};
use crate::audit::{churn_report, ChurnReport};
use crate::autodiff::{softmax_in_place, Tape};
use crate::error::{Error, Result};
use crate::margin::{fit_gap_curve, margin_quantiles, spearman, top_two, GapFit, GridSpec, MarginRecord};
use crate::objectives::Objective;

/// Summary of one fp32 audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub positions: usize,
    pub accuracy: f64,
    pub ce: f64,
    pub median_margin: f64,
    pub pr_below_half: f64,
    pub gap_fit: GapFit,
}

pub fn summarize_audit(model: &ToyLm, tokens: &[u32], audit: &[MarginRecord]) -> Result<AuditSummary> {
    let margins: Vec<f64> = audit.iter().map(|r| r.margin).collect();
    let q = margin_quantiles(&margins)?;
    Ok(AuditSummary {
        positions: audit.len(),
        accuracy: audit.iter().filter(|r| r.correct).count() as f64 / audit.len() as f64,
        ce: evaluate_ce(model, tokens)?,
        median_margin: q.median,
        pr_below_half: q.pr_below_half,
        gap_fit: fit_gap_curve(&margins, &GridSpec::default())?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseRow {
    pub lambda_mrp: f64,
    pub objective: Objective,
    pub summary: AuditSummary,
    /// Against the audit of the base checkpoint.
    pub churn: ChurnReport,
}

#[derive(Debug, Clone)]
pub struct DoseResponse {
    pub baseline: AuditSummary,
    pub baseline_audit: Vec<MarginRecord>,
    pub rows: Vec<DoseRow>,
    /// Final models, one per row.
    pub models: Vec<ToyLm>,
    pub audits: Vec<Vec<MarginRecord>>,
}

/// Trains from `base` once per λ with the same seed and data order, then
/// audits each result on `audit_tokens`.
pub fn dose_response(
    base: &ToyLm,
    train_tokens: &[u32],
    audit_tokens_: &[u32],
    lambdas: &[f64],
    objective: Objective,
    config: &TrainConfig,
) -> Result<DoseResponse> {
    if lambdas.is_empty() {
        return Err(Error::usage("dose-response needs at least one lambda"));
    }
    if lambdas.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::usage("lambda list must be strictly ascending"));
    }
    let baseline_audit = audit_tokens(base, audit_tokens_)?;
    let baseline = summarize_audit(base, audit_tokens_, &baseline_audit)?;
    let mut out = DoseResponse { baseline, baseline_audit, rows: vec![], models: vec![], audits: vec![] };
    for &lambda in lambdas {
        let mut cfg = *config;
        cfg.mrp.objective = objective;
        cfg.mrp.lambda_mrp = lambda;
        let model = train(base, train_tokens, &cfg)?.model;
        let audit = audit_tokens(&model, audit_tokens_)?;
        out.rows.push(DoseRow {
            lambda_mrp: lambda,
            objective,
            summary: summarize_audit(&model, audit_tokens_, &audit)?,
            churn: churn_report(&out.baseline_audit, &audit)?,
        });
        out.models.push(model);
        out.audits.push(audit);
    }
    Ok(out)
}

pub const DOSE_HEADER: &str =
    "lambda_mrp,objective,positions,accuracy,ce,median_margin,pr_below_half,beta,alpha_constrained,r2,churned,w2r,r2w,flip_ratio,net_corrected";

pub fn dose_csv(rows: &[DoseRow]) -> String {
    let mut s = format!("{DOSE_HEADER}\n");
    for r in rows {
        let (m, c) = (&r.summary, &r.churn);
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.lambda_mrp,
            r.objective,
            m.positions,
            m.accuracy,
            m.ce,
            m.median_margin,
            m.pr_below_half,
            m.gap_fit.beta,
            m.gap_fit.alpha_constrained,
            m.gap_fit.r2,
            c.churned,
            c.w2r,
            c.r2w,
            c.flip_ratio.map(|v| v.to_string()).unwrap_or_default(),
            c.net_corrected
        ));
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerScanRow {
    pub layer_index: usize,
    /// Spearman ρ between final CE and the virtual penalty; `None` when undefined.
    pub spearman_ce_mrp: Option<f64>,
}

pub const LAYER_SCAN_HEADER: &str = "layer_index,spearman_ce_mrp";

pub fn layer_scan_csv(rows: &[LayerScanRow]) -> String {
    let mut s = format!("{LAYER_SCAN_HEADER}\n");
    for r in rows {
        let rho = r.spearman_ce_mrp.map(|v| v.to_string()).unwrap_or_default();
        s.push_str(&format!("{},{rho}\n", r.layer_index));
    }
    s
}

/// Per-position virtual penalties `max(0, tau − margin)` for every layer and
/// the final per-position CE, pooled over all windows of `tokens`.
pub fn layer_penalties(model: &ToyLm, tokens: &[u32], tau: f64) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    if tokens.len() < 2 {
        return Err(Error::data("corpus needs at least 2 tokens"));
    }
    let layers = model.config.layers;
    let mut penalties = vec![Vec::new(); layers];
    let mut ce = Vec::new();
    for (start, len) in audit_windows(tokens.len(), model.config.context) {
        let window = &tokens[start..start + len];
        let mut tape = Tape::new();
        let f = model.record(&mut tape, window, false)?;
        for (l, &h) in f.hidden.iter().enumerate() {
            let virt = model.project(&mut tape, h, f.final_norm, f.unembedding)?;
            let v = tape.value(virt);
            for t in 0..len - 1 {
                let row = v.row(t);
                let (a, b) = top_two(row);
                penalties[l].push((tau - (row[a] - row[b])).max(0.0));
            }
        }
        let logits = tape.value(f.logits);
        for t in 0..len - 1 {
            let mut p = logits.row(t).to_vec();
            softmax_in_place(&mut p);
            ce.push(-p[window[t + 1] as usize].ln());
        }
    }
    Ok((penalties, ce))
}

/// Spearman ρ per layer between final-layer CE and the virtual margin deficit.
pub fn layer_scan(model: &ToyLm, tokens: &[u32], tau: f64) -> Result<Vec<LayerScanRow>> {
    let (penalties, ce) = layer_penalties(model, tokens, tau)?;
    penalties
        .iter()
        .enumerate()
        .map(|(layer_index, pen)| {
            let rho = match spearman(&ce, pen) {
                Ok(r) => Some(r),
                Err(Error::Numerical(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(LayerScanRow { layer_index, spearman_ce_mrp: rho })
        })
        .collect()
}
