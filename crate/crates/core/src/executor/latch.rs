use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::graph::{DsId, PartId};
use crate::switcher::Prediction;

/// Vote tally of the current decision window plus the run of consecutive
/// anomalous frames.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Tally {
    pub cluster: Option<DsId>,
    pub votes: BTreeMap<PartId, u32>,
    pub committed: Option<PartId>,
    pub consecutive_anomalies: u32,
}

impl Tally {
    pub fn reset_window(&mut self, cluster: Option<DsId>) {
        self.cluster = cluster;
        self.votes.clear();
        self.committed = None;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatchDecision {
    None,
    Commit(PartId),
    Anomaly,
}

/// Votes by which a part must lead every alternative to commit. A lead of
/// one would let strictly alternating predictions commit on their fifth frame.
pub const LEAD_MARGIN: u32 = 2;

/// Adds one frame. `m` consecutive anomalous frames commit an anomaly, which
/// takes precedence over the vote. Otherwise every window frame votes, and a
/// part commits once it has at least `m` votes and leads every other part by
/// [`LEAD_MARGIN`]; after that the window is decided.
pub fn latch_update(tally: &mut Tally, prediction: &Prediction, m: u32) -> LatchDecision {
    if prediction.anomalous {
        tally.consecutive_anomalies += 1;
        if tally.consecutive_anomalies >= m {
            tally.consecutive_anomalies = 0;
            return LatchDecision::Anomaly;
        }
    } else {
        tally.consecutive_anomalies = 0;
    }
    if prediction.cluster.is_none() || tally.committed.is_some() {
        return LatchDecision::None;
    }
    let count = {
        let c = tally.votes.entry(prediction.part).or_insert(0);
        *c += 1;
        *c
    };
    let leads = tally.votes.iter().all(|(p, &v)| *p == prediction.part || v + LEAD_MARGIN <= count);
    if count >= m && leads {
        tally.committed = Some(prediction.part);
        return LatchDecision::Commit(prediction.part);
    }
    LatchDecision::None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(part: u32, anomalous: bool) -> Prediction {
        Prediction {
            part: PartId(part),
            anomalous,
            anomaly_score: 0.9,
            threshold: 0.5,
            scores: vec![],
            cluster: Some(DsId(0)),
        }
    }

    fn outside(anomalous: bool) -> Prediction {
        Prediction { cluster: None, ..pred(0, anomalous) }
    }

    fn run(seq: &[u32]) -> Vec<LatchDecision> {
        let mut t = Tally::default();
        seq.iter().map(|&p| latch_update(&mut t, &pred(p, false), 3)).collect()
    }

    #[test]
    fn three_agreeing_frames_commit() {
        assert_eq!(run(&[1, 1, 1])[2], LatchDecision::Commit(PartId(1)));
    }

    #[test]
    fn alternating_never_commits() {
        let out = run(&[1, 2, 1, 2, 1, 2, 1, 2, 1, 2, 1]);
        assert!(out.iter().all(|d| *d == LatchDecision::None));
    }

    #[test]
    fn outlier_delays_commit() {
        let out = run(&[1, 2, 1, 1]);
        assert_eq!(
            out,
            vec![LatchDecision::None, LatchDecision::None, LatchDecision::None, LatchDecision::Commit(PartId(1))]
        );
    }

    #[test]
    fn consecutive_anomalies_commit_and_reset() {
        let mut t = Tally::default();
        assert_eq!(latch_update(&mut t, &outside(true), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &outside(false), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &outside(true), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &outside(true), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &outside(true), 3), LatchDecision::Anomaly);
        assert_eq!(t.consecutive_anomalies, 0);
    }

    #[test]
    fn anomalous_frames_still_vote() {
        let mut t = Tally::default();
        assert_eq!(latch_update(&mut t, &pred(2, false), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &pred(2, false), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &pred(2, true), 3), LatchDecision::Commit(PartId(2)));
    }

    #[test]
    fn anomaly_run_beats_the_vote() {
        let mut t = Tally::default();
        assert_eq!(latch_update(&mut t, &pred(1, true), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &pred(1, true), 3), LatchDecision::None);
        assert_eq!(latch_update(&mut t, &pred(1, true), 3), LatchDecision::Anomaly);
    }
}
