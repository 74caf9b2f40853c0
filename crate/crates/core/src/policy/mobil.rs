use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MobilParams {
    pub politeness: f64,
    pub accel_threshold: f64,
    pub safe_decel: f64,
}

impl Default for MobilParams {
    fn default() -> Self {
        MobilParams {
            politeness: 0.3,
            accel_threshold: 0.2,
            safe_decel: 4.0,
        }
    }
}

impl MobilParams {
    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.politeness) && self.accel_threshold > 0.0 && self.safe_decel > 0.0
    }
}

/// Accelerations before and after a prospective change.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct AccelPair {
    pub before: f64,
    pub after: f64,
}

impl AccelPair {
    pub fn new(before: f64, after: f64) -> Self {
        AccelPair { before, after }
    }

    fn delta(&self) -> f64 {
        self.after - self.before
    }
}

/// Inputs of one MOBIL evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MobilInput {
    pub own: AccelPair,
    /// Follower in the target lane, if any.
    pub new_follower: Option<AccelPair>,
    /// Follower in the current lane, if any.
    pub old_follower: Option<AccelPair>,
}

/// Returns the incentive when the change is safe and worthwhile.
pub fn mobil_incentive(input: &MobilInput, params: &MobilParams) -> Option<f64> {
    if let Some(nf) = input.new_follower {
        if nf.after < -params.safe_decel {
            return None;
        }
    }
    let others = input.new_follower.map_or(0.0, |f| f.delta()) + input.old_follower.map_or(0.0, |f| f.delta());
    let incentive = input.own.delta() + params.politeness * others;
    (incentive > params.accel_threshold).then_some(incentive)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::idm::{idm_accel, IdmParams, Leader};
    use proptest::prelude::*;

    #[test]
    fn slow_leader_free_lane_changes() {
        let idm = IdmParams::default();
        let before = idm_accel(15.0, Some(Leader::new(5.0, 20.0)), &idm);
        let after = idm_accel(15.0, None, &idm);
        let input = MobilInput {
            own: AccelPair::new(before, after),
            ..Default::default()
        };
        let inc = mobil_incentive(&input, &MobilParams::default()).unwrap();
        assert_eq!(inc, after - before);
    }

    #[test]
    fn unsafe_follower_blocks() {
        let input = MobilInput {
            own: AccelPair::new(-3.0, 2.0),
            new_follower: Some(AccelPair::new(0.0, -4.5)),
            old_follower: None,
        };
        assert_eq!(mobil_incentive(&input, &MobilParams::default()), None);
    }

    proptest! {
        #[test]
        fn never_violates_safety(own_b in -7.0..5.0f64, own_a in -7.0..5.0f64,
                                 nf in proptest::option::of((-7.0..5.0f64, -7.0..5.0f64)),
                                 of in proptest::option::of((-7.0..5.0f64, -7.0..5.0f64))) {
            let p = MobilParams::default();
            let input = MobilInput {
                own: AccelPair::new(own_b, own_a),
                new_follower: nf.map(|(b, a)| AccelPair::new(b, a)),
                old_follower: of.map(|(b, a)| AccelPair::new(b, a)),
            };
            if mobil_incentive(&input, &p).is_some() {
                if let Some(f) = input.new_follower {
                    prop_assert!(f.after >= -p.safe_decel);
                }
            }
        }
    }
}
