//! Turn control: decide after each answer whether to stop or trigger another
//! retrieval round.
//!
//! The stopping threshold grows geometrically with the turn index,
//! `theta_t = theta0 * (c / (1 + e^(1 - theta0)))^t`, so later turns accept
//! progressively weaker evidence instead of iterating forever. A hard turn
//! cap applies regardless of score.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kge::Reliability;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSchedule {
    /// Base threshold; depends on the answering model and dataset.
    pub theta0: f64,
    /// Growth constant of the schedule.
    pub schedule_c: f64,
    /// Hard cap on the turn index (answers are forced out at this turn).
    pub max_turns: usize,
}

impl ThresholdSchedule {
    pub fn new(theta0: f64, schedule_c: f64, max_turns: usize) -> Result<Self> {
        let sched = ThresholdSchedule {
            theta0,
            schedule_c,
            max_turns,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.theta0 > 0.0) {
            return Err(Error::Config("theta0 must be > 0".into()));
        }
        let ratio = self.growth_ratio();
        if !ratio.is_finite() || ratio <= 0.0 {
            return Err(Error::Config(
                "schedule growth ratio must be finite and positive".into(),
            ));
        }
        Ok(())
    }

    pub fn growth_ratio(&self) -> f64 {
        self.schedule_c / (1.0 + (1.0 - self.theta0).exp())
    }

    /// Threshold at turn `t`: `theta0 * growth_ratio^t`.
    pub fn threshold_at(&self, t: usize) -> f64 {
        self.theta0 * self.growth_ratio().powi(t as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// Verified evidence scored below the turn's threshold: answer accepted.
    BelowThreshold,
    /// Turn cap reached: answer forced out.
    MaxTurns,
    /// No verifiable evidence; such answers never pass the threshold test.
    NoEvidencePolicy,
    /// Evidence scored at or above the threshold: retrieval continues.
    AboveThreshold,
}

impl DecisionReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            DecisionReason::BelowThreshold => "below_threshold",
            DecisionReason::MaxTurns => "max_turns",
            DecisionReason::NoEvidencePolicy => "no_evidence_policy",
            DecisionReason::AboveThreshold => "above_threshold",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopDecision {
    pub stop: bool,
    pub reason: DecisionReason,
    pub s_t: f64,
    pub theta_t: f64,
}

/// Decide whether to emit the current answer (stop) or retrieve again.
///
/// An answer stops early only when it has at least one verified triple and
/// its reliability score is below the threshold; answers with no verifiable
/// evidence ride until the turn cap.
pub fn decide(sched: &ThresholdSchedule, t: usize, reliability: &Reliability) -> Result<StopDecision> {
    if t > sched.max_turns {
        return Err(Error::InvalidInput(format!(
            "turn {t} exceeds max_turns {}",
            sched.max_turns
        )));
    }
    let theta_t = sched.threshold_at(t);
    let s_t = reliability.score;
    let (stop, reason) = if reliability.verified > 0 && s_t < theta_t {
        (true, DecisionReason::BelowThreshold)
    } else if t == sched.max_turns {
        (true, DecisionReason::MaxTurns)
    } else if reliability.verified == 0 {
        (false, DecisionReason::NoEvidencePolicy)
    } else {
        (false, DecisionReason::AboveThreshold)
    };
    Ok(StopDecision {
        stop,
        reason,
        s_t,
        theta_t,
    })
}

/// Base thresholds per (answering model, dataset) pair. Keys are
/// case-insensitive; unknown pairs require an explicit configuration value.
pub fn default_theta0(qa_model: &str, dataset: &str) -> Option<f64> {
    let model = qa_model.to_lowercase();
    let dataset = dataset.to_lowercase();
    let by_model = |glm: f64, qwen: f64, gpt: f64| match model.as_str() {
        "glm4-9b" => Some(glm),
        "qwen2.5-32b" => Some(qwen),
        "gpt4o-mini" | "gpt-4o-mini" => Some(gpt),
        _ => None,
    };
    match dataset.as_str() {
        "hotpotqa" => by_model(10.0, 1.0, 13.0),
        "2wikimultihopqa" => by_model(2.0, 0.2, 2.0),
        "popqa" => by_model(0.1, 0.02, 0.01),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(score: f64, verified: usize, unverifiable: usize) -> Reliability {
        Reliability {
            score,
            verified,
            unverifiable,
        }
    }

    #[test]
    fn threshold_at_zero_is_theta0() {
        for theta0 in [0.01, 0.1, 1.0, 10.0, 13.0] {
            let s = ThresholdSchedule::new(theta0, 128.0, 2).unwrap();
            assert_eq!(s.threshold_at(0), theta0);
        }
    }

    #[test]
    fn threshold_matches_closed_form_values() {
        // theta0=10, c=128, t=1: 10 * 128 / (1 + e^-9)
        let s = ThresholdSchedule::new(10.0, 128.0, 2).unwrap();
        let expected = 10.0 * 128.0 / (1.0 + (-9.0f64).exp());
        assert!((s.threshold_at(1) - expected).abs() < 1e-9);
        assert!((s.threshold_at(1) - 1279.842).abs() < 1e-3);

        // theta0=0.1, c=128, t=1: 0.1 * 128 / (1 + e^0.9)
        let s = ThresholdSchedule::new(0.1, 128.0, 2).unwrap();
        let expected = 0.1 * 128.0 / (1.0 + 0.9f64.exp());
        assert!((s.threshold_at(1) - expected).abs() < 1e-9);
        assert!((s.threshold_at(1) - 3.700).abs() < 1e-3);
    }

    #[test]
    fn threshold_strictly_increases_when_ratio_exceeds_one() {
        for theta0 in [0.01, 0.02, 0.1, 0.2, 1.0, 2.0, 10.0, 13.0] {
            let s = ThresholdSchedule::new(theta0, 128.0, 4).unwrap();
            assert!(s.growth_ratio() > 1.0);
            for t in 0..4 {
                assert!(s.threshold_at(t + 1) > s.threshold_at(t));
            }
        }
    }

    #[test]
    fn decide_below_threshold() {
        let s = ThresholdSchedule::new(10.0, 128.0, 2).unwrap();
        let d = decide(&s, 0, &rel(0.5, 2, 0)).unwrap();
        assert!(d.stop);
        assert_eq!(d.reason, DecisionReason::BelowThreshold);
        assert_eq!(d.s_t, 0.5);
        assert_eq!(d.theta_t, 10.0);
    }

    #[test]
    fn decide_max_turns_overrides_high_score() {
        // Flat schedule keeps theta near 10 at every turn, so s=99 never
        // passes the threshold test and the cap forces the answer out.
        let s = ThresholdSchedule::new(10.0, 1.0, 2).unwrap();
        assert!(s.threshold_at(2) < 99.0);
        let d = decide(&s, 2, &rel(99.0, 3, 0)).unwrap();
        assert!(d.stop);
        assert_eq!(d.reason, DecisionReason::MaxTurns);
    }

    #[test]
    fn decide_no_evidence_continues() {
        let s = ThresholdSchedule::new(10.0, 128.0, 2).unwrap();
        let d = decide(&s, 0, &rel(0.0, 0, 3)).unwrap();
        assert!(!d.stop);
        assert_eq!(d.reason, DecisionReason::NoEvidencePolicy);
        // Same policy for answers with no extracted triples at all.
        let d = decide(&s, 0, &rel(0.0, 0, 0)).unwrap();
        assert!(!d.stop);
        assert_eq!(d.reason, DecisionReason::NoEvidencePolicy);
    }

    #[test]
    fn decide_exhaustive_branch_oracle() {
        // Enumerate every decision branch and compare against a direct
        // restatement of the rules.
        let s = ThresholdSchedule::new(1.0, 128.0, 2).unwrap();
        for t in 0..=2usize {
            for verified in [0usize, 1, 3] {
                for unverifiable in [0usize, 2] {
                    for score in [0.0, 0.5, 5.0] {
                        let r = rel(score, verified, unverifiable);
                        let d = decide(&s, t, &r).unwrap();
                        let theta = s.threshold_at(t);
                        let expect_stop =
                            (verified > 0 && score < theta) || t == s.max_turns;
                        assert_eq!(d.stop, expect_stop, "t={t} r={r:?}");
                        match d.reason {
                            DecisionReason::BelowThreshold => {
                                assert!(verified > 0 && score < theta && d.stop)
                            }
                            DecisionReason::MaxTurns => assert!(t == 2 && d.stop),
                            DecisionReason::NoEvidencePolicy => {
                                assert!(verified == 0 && !d.stop)
                            }
                            DecisionReason::AboveThreshold => {
                                assert!(verified > 0 && score >= theta && !d.stop)
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn decide_monotone_in_score() {
        let s = ThresholdSchedule::new(1.0, 128.0, 3).unwrap();
        for t in 0..=3usize {
            let mut prev_stop = true;
            // Sweep scores upward: stop can only flip from true to false.
            for score in [0.0, 0.5, 0.9, 1.0, 1.1, 10.0, 1e6] {
                let d = decide(&s, t, &rel(score, 1, 0)).unwrap();
                if !prev_stop {
                    assert!(!d.stop || t == s.max_turns);
                }
                prev_stop = d.stop;
            }
        }
    }

    #[test]
    fn decide_rejects_turn_past_cap() {
        let s = ThresholdSchedule::new(1.0, 128.0, 2).unwrap();
        assert!(decide(&s, 3, &rel(0.0, 1, 0)).is_err());
    }

    #[test]
    fn invalid_schedules_are_rejected() {
        assert!(ThresholdSchedule::new(0.0, 128.0, 2).is_err());
        assert!(ThresholdSchedule::new(-1.0, 128.0, 2).is_err());
        assert!(ThresholdSchedule::new(1.0, f64::INFINITY, 2).is_err());
    }

    #[test]
    fn theta0_table_lookup() {
        assert_eq!(default_theta0("GLM4-9b", "HotpotQA"), Some(10.0));
        assert_eq!(default_theta0("glm4-9b", "popqa"), Some(0.1));
        assert_eq!(default_theta0("Qwen2.5-32b", "2WikiMultiHopQA"), Some(0.2));
        assert_eq!(default_theta0("GPT4o-mini", "PopQA"), Some(0.01));
        assert_eq!(default_theta0("mystery-model", "hotpotqa"), None);
        assert_eq!(default_theta0("glm4-9b", "mystery-data"), None);
    }
}
