//! Agent-centred views of a scenario.

use super::Scenario;
use crate::error::Result;
use crate::geometry::RigidTransform;

/// Radius (m) of the local scene context gathered around an agent.
pub const DEFAULT_CONTEXT_RADIUS: f64 = 50.0;

pub fn local_frame(scn: &Scenario, agent_id: u32) -> Result<Scenario> {
    local_frame_with_radius(scn, agent_id, DEFAULT_CONTEXT_RADIUS)
}

/// Re-expresses the scene in the target agent's pose at the current instant
/// and keeps only agents within `radius` of it (current positions) and
/// polylines with a waypoint within `radius`. The target becomes `ego_index`.
pub fn local_frame_with_radius(scn: &Scenario, agent_id: u32, radius: f64) -> Result<Scenario> {
    let target = scn.agent_index(agent_id)?;
    let pose = scn.agents[target].current();
    let t = RigidTransform::to_local(pose.position, pose.yaw);
    let moved = scn.transformed(&t);
    let mut out = Scenario { agents: Vec::new(), map: Vec::new(), ..moved.clone() };
    for (i, a) in moved.agents.into_iter().enumerate() {
        if i == target {
            out.ego_index = out.agents.len();
            out.agents.push(a);
        } else if a.current().position.norm() <= radius {
            out.agents.push(a);
        }
    }
    out.map = moved.map.into_iter().filter(|p| p.waypoints.iter().any(|w| w.norm() <= radius)).collect();
    // pin the target exactly at the origin despite rounding
    let ego = &mut out.agents[out.ego_index];
    let last = ego.states.last_mut().expect("validated history");
    last.x = 0.0;
    last.y = 0.0;
    last.yaw = 0.0;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{relative_encoding, Vec2};
    use crate::scene::{generate_scenario, Template};

    #[test]
    fn target_at_origin_with_zero_yaw() {
        let scn = generate_scenario(Template::LeftTurn, 5, 3);
        let loc = local_frame(&scn, 2).unwrap();
        let me = loc.agents[loc.ego_index].current();
        assert_eq!(loc.agents[loc.ego_index].id, 2);
        assert_eq!(me.position, Vec2::ZERO);
        assert_eq!(me.yaw, 0.0);
    }

    #[test]
    fn distances_and_encodings_preserved() {
        let scn = generate_scenario(Template::Merge, 6, 9);
        let loc = local_frame_with_radius(&scn, 0, 1e9).unwrap();
        assert_eq!(loc.num_agents(), scn.num_agents());
        let (a, b) = (scn.current_states(), loc.current_states());
        for i in 0..a.len() {
            for j in 0..a.len() {
                let (ea, eb) = (relative_encoding(&a[i], &a[j]).to_array(), relative_encoding(&b[i], &b[j]).to_array());
                for (x, y) in ea.iter().zip(&eb) {
                    assert!((x - y).abs() < 1e-9, "{i} {j}: {ea:?} vs {eb:?}");
                }
            }
        }
    }

    #[test]
    fn far_agents_dropped() {
        let mut scn = generate_scenario(Template::Straight, 2, 1);
        let offset = scn.agents[0].current().position + Vec2::new(80.0, 0.0) - scn.agents[1].current().position;
        for s in &mut scn.agents[1].states {
            s.x += offset.x;
            s.y += offset.y;
        }
        let loc = local_frame(&scn, 0).unwrap();
        assert_eq!(loc.num_agents(), 1);
        assert!(local_frame(&scn, 42).is_err());
    }
}
