//! Recall on ordinary weeks versus the same weeks with concealing records.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EvalError, Metric};
use crate::analysis::generate_analysis;
use crate::cohort::{Outcome, UserPortrait, WeeklyBundle};
use crate::gateway::Gateway;
use crate::report::FormatSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub bundle: WeeklyBundle,
    pub portrait: UserPortrait,
    pub label: Outcome,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetRecall {
    pub recall: Metric,
    pub positives: usize,
    pub detected: usize,
    /// Analyses whose outcome could not be read; counted as predicting 0.
    pub unparseable: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustnessReport {
    pub general: SetRecall,
    pub counterfactual: SetRecall,
    /// `(recall_general - recall_cf) / recall_general`.
    pub relative_drop: Metric,
}

/// Predicted outcomes for each case; `None` marks an unparseable analysis.
pub fn predict_cases(cases: &[LabeledCase], spec: &FormatSpec, gateway: &Gateway) -> Result<Vec<Option<Outcome>>, EvalError> {
    cases
        .par_iter()
        .map(|c| match generate_analysis(&c.bundle, &c.portrait, spec, gateway) {
            Ok(r) => Ok(Some(r.outcome)),
            Err(crate::analysis::AnalysisError::Unparseable { .. }) => Ok(None),
            Err(e) => Err(EvalError::Analysis(e)),
        })
        .collect()
}

pub fn set_recall(cases: &[LabeledCase], predictions: &[Option<Outcome>]) -> SetRecall {
    let mut out = SetRecall {
        recall: Metric::UNDEFINED,
        positives: 0,
        detected: 0,
        unparseable: predictions.iter().filter(|p| p.is_none()).count(),
    };
    for (c, p) in cases.iter().zip(predictions) {
        if c.label.is_at_risk() {
            out.positives += 1;
            if *p == Some(Outcome::AtRisk) {
                out.detected += 1;
            }
        }
    }
    if out.positives > 0 {
        out.recall = Metric::of(out.detected as f64 / out.positives as f64);
    }
    out
}

pub fn relative_drop(general: Metric, counterfactual: Metric) -> Metric {
    match (general.get(), counterfactual.get()) {
        (Some(g), Some(c)) if g > 0.0 => Metric::of((g - c) / g),
        _ => Metric::UNDEFINED,
    }
}

/// `cf_cases[i]` must be the counterfactual sibling of `cases[i]`.
pub fn counterfactual_robustness(
    gateway: &Gateway,
    cases: &[LabeledCase],
    cf_cases: &[LabeledCase],
    spec: &FormatSpec,
) -> Result<RobustnessReport, EvalError> {
    if cases.len() != cf_cases.len() {
        return Err(EvalError::LengthMismatch {
            left: cases.len(),
            right: cf_cases.len(),
        });
    }
    if let Some((a, b)) = cases.iter().zip(cf_cases).find(|(a, b)| a.label != b.label) {
        return Err(EvalError::Unpaired(format!(
            "{}#{} and {}#{} carry different labels",
            a.bundle.participant_id, a.bundle.week_index, b.bundle.participant_id, b.bundle.week_index
        )));
    }
    let general = set_recall(cases, &predict_cases(cases, spec, gateway)?);
    let counterfactual = set_recall(cf_cases, &predict_cases(cf_cases, spec, gateway)?);
    Ok(RobustnessReport {
        general,
        counterfactual,
        relative_drop: relative_drop(general.recall, counterfactual.recall),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::compose_report;
    use crate::gateway::FnBackend;
    use crate::synth::{generate, inject_counterfactual, CfLabel, SynthConfig};

    fn cases() -> (Vec<LabeledCase>, Vec<LabeledCase>) {
        let cohort = generate(&SynthConfig {
            n_participants: 6,
            weeks_per_participant: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let mut a = Vec::new();
        let mut b = Vec::new();
        // Every case positive so recall is defined on both sides.
        let label = Outcome::AtRisk;
        for bundle in &cohort.bundles {
            let portrait = UserPortrait::anonymous(&bundle.participant_id);
            let mut cf = inject_counterfactual(bundle, CfLabel::Stigma).unwrap().bundle;
            cf.participant_id = format!("cf-{}", bundle.participant_id);
            let cf_portrait = UserPortrait::anonymous(&cf.participant_id);
            a.push(LabeledCase { bundle: bundle.clone(), portrait, label });
            b.push(LabeledCase { bundle: cf, portrait: cf_portrait, label });
        }
        (a, b)
    }

    fn backend(cf_answer: Outcome) -> Gateway {
        Gateway::new(FnBackend::chat("scripted", move |p| {
            let o = if p.contains("Participant cf-") { cf_answer } else { Outcome::AtRisk };
            compose_report(["a", "b", "c", "d"], o)
        }))
    }

    #[test]
    fn extremes() {
        let (a, b) = cases();
        let spec = FormatSpec::default();
        let r = counterfactual_robustness(&backend(Outcome::NoRisk), &a, &b, &spec).unwrap();
        assert_eq!(r.relative_drop.get(), Some(1.0));
        let r = counterfactual_robustness(&backend(Outcome::AtRisk), &a, &b, &spec).unwrap();
        assert_eq!(r.relative_drop.get(), Some(0.0));
    }

    #[test]
    fn unparseable_counts_as_zero() {
        let (a, b) = cases();
        let g = Gateway::new(FnBackend::chat("s", |p| {
            if p.contains("Participant cf-") {
                "no structure".into()
            } else {
                compose_report(["a", "b", "c", "d"], Outcome::AtRisk)
            }
        }));
        let r = counterfactual_robustness(&g, &a, &b, &FormatSpec::default()).unwrap();
        assert_eq!(r.counterfactual.unparseable, b.len());
        assert_eq!(r.counterfactual.recall.get(), Some(0.0));
    }
}
