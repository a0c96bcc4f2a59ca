use serde::{Deserialize, Serialize};

use super::Session;
use crate::body::{camera_pose, Event};

/// Points per active arc before decimation.
const ACTIVE_SAMPLES: usize = 24;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pressures {
    pub p_body: f64,
    pub p1: f64,
    pub p2: f64,
    pub p3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MotorTelemetry {
    pub omega_d: f64,
    pub omega: f64,
    pub u: f64,
    /// cm/s, negative while retracting.
    pub growth_rate: f64,
    /// cm/s leaving the spool.
    pub unspool_rate: f64,
    pub tension: bool,
}

/// Camera frame at the tip; orientation as `[w, x, y, z]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraPose {
    pub position: [f64; 3],
    pub orientation: [f64; 4],
}

/// What clients see after a tick.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub tick: u64,
    pub time_s: f64,
    pub total_length: f64,
    pub backbone: Vec<[f64; 3]>,
    pub camera: CameraPose,
    pub pressures: Pressures,
    pub motor: MotorTelemetry,
    pub events: Vec<Event>,
    pub saturated: bool,
    pub estop: bool,
    pub state_hash: String,
}

impl Snapshot {
    pub(super) fn capture(session: &Session, events: Vec<Event>) -> Self {
        let body = session.body();
        let g = session.growth_state();
        let p = session.pressures();
        let points: Vec<[f64; 3]> = body
            .backbone(ACTIVE_SAMPLES)
            .iter()
            .map(|v| [v.x, v.y, v.z])
            .collect();
        let cam = camera_pose(body);
        let q = cam.orientation.quaternion();
        Snapshot {
            tick: session.tick_count(),
            time_s: session.time(),
            total_length: body.total_length,
            backbone: decimate(&points, session.max_backbone_points()),
            camera: CameraPose {
                position: [cam.position.x, cam.position.y, cam.position.z],
                orientation: [q.w, q.i, q.j, q.k],
            },
            pressures: Pressures {
                p_body: g.p_body,
                p1: p.p1,
                p2: p.p2,
                p3: p.p3,
            },
            motor: MotorTelemetry {
                omega_d: g.omega_d,
                omega: g.omega,
                u: g.u,
                growth_rate: session.growth_rate(),
                unspool_rate: session.unspool_rate(),
                tension: g.tension,
            },
            events,
            saturated: session.saturated(),
            estop: session.estop_latched(),
            state_hash: session.state_hash(),
        }
    }
}

/// Evenly thins `points` to at most `max` (at least 2), keeping both ends.
pub fn decimate<T: Copy>(points: &[T], max: usize) -> Vec<T> {
    let max = max.max(2);
    let n = points.len();
    if n <= max {
        return points.to_vec();
    }
    (0..max)
        .map(|i| points[(i * (n - 1) + (max - 1) / 2) / (max - 1)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn short_lists_pass_through() {
        assert_eq!(decimate(&[1, 2, 3], 5), vec![1, 2, 3]);
        assert_eq!(decimate(&[1, 2, 3], 2), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn decimation_keeps_ends_and_order(n in 2usize..2000, max in 2usize..300) {
            let pts: Vec<usize> = (0..n).collect();
            let out = decimate(&pts, max);
            prop_assert_eq!(out.len(), n.min(max));
            prop_assert_eq!(out[0], 0);
            prop_assert_eq!(*out.last().unwrap(), n - 1);
            prop_assert!(out.windows(2).all(|w| w[0] < w[1]));
        }
    }
}
