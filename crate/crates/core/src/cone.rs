//! Haptic cone geometry: which circle to present for a given hand position.
//!
//! The cone has its base (radius `R`) at the start point and its apex at the
//! goal. The progress parameter `k` is 1 at the start and 0 at the goal and
//! scales the presented radius, clamped below by `r_min`. When start and goal
//! differ in height, `k` follows the hand's height and the circle is rendered
//! in the hand's plane (vertical or oblique cone). When they share a height,
//! `k` follows the horizontal distance to the goal and the circle stays in the
//! start plane (projected cone).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::{Vec2, Vec3};

/// Start/goal height difference (mm) above which the height branch of `k`
/// is used.
/// Separations below this (mm) count as coincident.
const GEOMETRY_EPS: f64 = 1e-6;

pub const HEIGHT_BRANCH_THRESHOLD: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum ConeError {
    #[error("start and goal coincide")]
    Degenerate,
    #[error("start and goal share a plane but have no horizontal separation")]
    NoHorizontalSeparation,
    #[error("need base radius > min radius >= 0, got R = {base}, r_min = {min}")]
    InvalidRadii { base: f64, min: f64 },
    #[error("direction is not aligned with the start-to-goal path")]
    Misaligned,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KBranch {
    /// `k` from height; circle in the hand plane.
    Height,
    /// `k` from horizontal distance; circle in the start plane.
    Planar,
}

/// Cone radii shared across goals.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConeParams {
    pub base_radius: f64,
    pub min_radius: f64,
}

impl Default for ConeParams {
    fn default() -> Self {
        Self {
            base_radius: 30.0,
            min_radius: 5.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuidanceCone {
    start: Vec3,
    goal: Vec3,
    base_radius: f64,
    min_radius: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossSection {
    pub k: f64,
    pub center: Vec2,
    pub plane_z: f64,
    pub radius: f64,
}

impl GuidanceCone {
    pub fn new(start: Vec3, goal: Vec3, params: ConeParams) -> Result<Self, ConeError> {
        let ConeParams {
            base_radius,
            min_radius,
        } = params;
        if !(min_radius >= 0.0 && base_radius > min_radius && base_radius.is_finite()) {
            return Err(ConeError::InvalidRadii {
                base: base_radius,
                min: min_radius,
            });
        }
        if (goal - start).norm() <= GEOMETRY_EPS {
            return Err(ConeError::Degenerate);
        }
        let cone = Self {
            start,
            goal,
            base_radius,
            min_radius,
        };
        if cone.branch() == KBranch::Planar && cone.horizontal_span() <= GEOMETRY_EPS {
            return Err(ConeError::NoHorizontalSeparation);
        }
        Ok(cone)
    }

    pub fn start(&self) -> Vec3 {
        self.start
    }

    pub fn goal(&self) -> Vec3 {
        self.goal
    }

    pub fn base_radius(&self) -> f64 {
        self.base_radius
    }

    pub fn min_radius(&self) -> f64 {
        self.min_radius
    }

    pub fn params(&self) -> ConeParams {
        ConeParams {
            base_radius: self.base_radius,
            min_radius: self.min_radius,
        }
    }

    pub fn branch(&self) -> KBranch {
        if (self.start.z - self.goal.z).abs() > HEIGHT_BRANCH_THRESHOLD {
            KBranch::Height
        } else {
            KBranch::Planar
        }
    }

    pub fn path_length(&self) -> f64 {
        (self.goal - self.start).norm()
    }

    fn horizontal_span(&self) -> f64 {
        (self.goal.xy() - self.start.xy()).norm()
    }

    /// Progress parameter; exceeds 1 beyond the start.
    pub fn compute_k(&self, hand: Vec3) -> f64 {
        match self.branch() {
            KBranch::Height => (self.goal.z - hand.z).abs() / (self.goal.z - self.start.z).abs(),
            KBranch::Planar => (self.goal.xy() - hand.xy()).norm() / self.horizontal_span(),
        }
    }

    pub fn radius_for_k(&self, k: f64) -> f64 {
        (k * self.base_radius).max(self.min_radius)
    }

    /// Circle presented to a hand at `hand`. The centre interpolates from the
    /// start (`k = 1`) to the goal (`k = 0`).
    pub fn cross_section(&self, hand: Vec3) -> CrossSection {
        let k = self.compute_k(hand);
        let center = self.start.xy() * k + self.goal.xy() * (1.0 - k);
        let plane_z = match self.branch() {
            KBranch::Height => hand.z,
            KBranch::Planar => self.start.z,
        };
        CrossSection {
            k,
            center,
            plane_z,
            radius: self.radius_for_k(k),
        }
    }

    /// Distance from the goal, along the straight path, inside which the
    /// radius is pinned at `r_min`.
    pub fn dead_zone_extent(&self, direction: Vec3) -> Result<f64, ConeError> {
        let path = self.goal - self.start;
        let len = path.norm();
        let dn = direction.norm();
        if !(dn > 0.0) || direction.dot(&path) / (dn * len) < 1.0 - 1e-6 {
            return Err(ConeError::Misaligned);
        }
        Ok(self.min_radius / self.base_radius * len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cone(start: [f64; 3], goal: [f64; 3]) -> GuidanceCone {
        GuidanceCone::new(Vec3::from(start), Vec3::from(goal), ConeParams::default()).unwrap()
    }

    #[test]
    fn k_at_anchors() {
        let c = cone([0.0, 0.0, 400.0], [0.0, 0.0, 250.0]);
        assert_eq!(c.compute_k(c.start()), 1.0);
        assert_eq!(c.compute_k(c.goal()), 0.0);
        assert_eq!(c.compute_k(Vec3::new(0.0, 0.0, 325.0)), 0.5);
        assert!((c.compute_k(Vec3::new(0.0, 0.0, 450.0)) - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn vertical_midpoint_and_clamp() {
        let c = cone([0.0, 0.0, 400.0], [0.0, 0.0, 250.0]);
        let cs = c.cross_section(Vec3::new(0.0, 0.0, 325.0));
        assert_eq!(cs.center, Vec2::zeros());
        assert_eq!(cs.radius, 15.0);
        assert_eq!(cs.plane_z, 325.0);
        let near = c.cross_section(Vec3::new(0.0, 0.0, 260.0));
        assert!((near.k - 1.0 / 15.0).abs() < 1e-15);
        assert!((near.k * 30.0 - 2.0).abs() < 1e-12);
        assert_eq!(near.radius, 5.0);
        // Beyond the start the circle keeps growing.
        assert!((c.cross_section(Vec3::new(0.0, 0.0, 450.0)).radius - 40.0).abs() < 1e-12);
    }

    #[test]
    fn oblique_cone_center() {
        let c = cone([0.0, 0.0, 400.0], [150.0, 0.0, 250.0]);
        assert_eq!(c.branch(), KBranch::Height);
        let cs = c.cross_section(Vec3::new(0.0, 0.0, 325.0));
        assert_eq!(cs.k, 0.5);
        assert!((cs.center - Vec2::new(75.0, 0.0)).norm() < 1e-12);
        assert_eq!(cs.radius, 15.0);
        assert_eq!(cs.plane_z, 325.0);
    }

    #[test]
    fn projected_cone_stays_in_start_plane() {
        let c = cone([0.0, 0.0, 400.0], [150.0, 0.0, 400.0]);
        assert_eq!(c.branch(), KBranch::Planar);
        let cs = c.cross_section(Vec3::new(75.0, 0.0, 430.0));
        assert_eq!(cs.plane_z, 400.0);
        assert_eq!(cs.k, 0.5);
        // Along the path the centre follows the hand.
        assert!((cs.center - Vec2::new(75.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn near_level_goal_uses_planar_branch() {
        let c = cone([0.0, 0.0, 400.0], [150.0, 0.0, 400.8]);
        assert_eq!(c.branch(), KBranch::Planar);
        let c = cone([0.0, 0.0, 400.0], [150.0, 0.0, 401.2]);
        assert_eq!(c.branch(), KBranch::Height);
    }

    #[test]
    fn degenerate_cones_are_rejected() {
        let p = ConeParams::default();
        let s = Vec3::new(0.0, 0.0, 400.0);
        assert_eq!(GuidanceCone::new(s, s, p), Err(ConeError::Degenerate));
        assert_eq!(
            GuidanceCone::new(s, s + Vec3::new(0.0, 0.0, 0.5), p),
            Err(ConeError::NoHorizontalSeparation)
        );
        let bad = ConeParams {
            base_radius: 5.0,
            min_radius: 5.0,
        };
        assert!(matches!(
            GuidanceCone::new(s, Vec3::zeros() + Vec3::new(0.0, 0.0, 250.0), bad),
            Err(ConeError::InvalidRadii { .. })
        ));
    }

    #[test]
    fn dead_zone_examples() {
        let v = cone([0.0, 0.0, 400.0], [0.0, 0.0, 250.0]);
        assert!((v.dead_zone_extent(-Vec3::z()).unwrap() - 25.0).abs() < 1e-12);
        let d = cone([0.0, 0.0, 400.0], [150.0, 0.0, 250.0]);
        let dir = Vec3::new(1.0, 0.0, -1.0).normalize();
        let ext = d.dead_zone_extent(dir).unwrap();
        assert!((ext - 25.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((ext - 35.0).abs() < 0.5);
        let nozone = GuidanceCone::new(
            Vec3::new(0.0, 0.0, 400.0),
            Vec3::new(0.0, 0.0, 250.0),
            ConeParams {
                base_radius: 30.0,
                min_radius: 0.0,
            },
        )
        .unwrap();
        assert_eq!(nozone.dead_zone_extent(-Vec3::z()).unwrap(), 0.0);
        assert_eq!(v.dead_zone_extent(Vec3::x()), Err(ConeError::Misaligned));
    }

    #[test]
    fn radius_at_64_mm_from_apex() {
        let c = cone([0.0, 0.0, 400.0], [0.0, 0.0, 250.0]);
        let r = c.cross_section(Vec3::new(0.0, 0.0, 250.0 + 64.0)).radius;
        assert!((r - 12.8).abs() < 1e-12);
        assert!((r - c.min_radius() - 7.8).abs() < 1e-12);
    }

    fn arb_cone() -> impl Strategy<Value = GuidanceCone> {
        (
            prop::array::uniform3(-300.0f64..300.0),
            prop::array::uniform3(-300.0f64..300.0),
            1.0f64..60.0,
            0.0f64..0.9,
            any::<bool>(),
        )
            .prop_filter_map("degenerate", |(s, g, r, frac, level)| {
                let s = Vec3::new(s[0], s[1], s[2] + 400.0);
                let mut g = Vec3::new(g[0], g[1], g[2] + 400.0);
                if level {
                    g.z = s.z;
                }
                GuidanceCone::new(
                    s,
                    g,
                    ConeParams {
                        base_radius: r,
                        min_radius: r * frac,
                    },
                )
                .ok()
            })
    }

    proptest! {
        #[test]
        fn endpoints_anchor_the_cone(c in arb_cone()) {
            let at_start = c.cross_section(c.start());
            prop_assert!((at_start.k - 1.0).abs() < 1e-12);
            prop_assert!((at_start.center - c.start().xy()).norm() < 1e-9);
            prop_assert!((at_start.radius - c.base_radius()).abs() < 1e-9);
            let at_goal = c.cross_section(c.goal());
            prop_assert_eq!(at_goal.k, 0.0);
            prop_assert!((at_goal.center - c.goal().xy()).norm() < 1e-9);
            prop_assert_eq!(at_goal.radius, c.min_radius());
        }

        #[test]
        fn radius_shrinks_along_path(c in arb_cone(), steps in 10usize..200) {
            let dz = c.dead_zone_extent(c.goal() - c.start()).unwrap();
            let len = c.path_length();
            let mut prev = f64::INFINITY;
            for i in 0..=steps {
                let s = i as f64 / steps as f64;
                let p = c.start() + (c.goal() - c.start()) * s;
                let cs = c.cross_section(p);
                prop_assert!(cs.radius <= prev + 1e-9);
                prev = cs.radius;
                let to_goal = (1.0 - s) * len;
                if to_goal < dz - 1e-9 {
                    prop_assert_eq!(cs.radius, c.min_radius());
                }
                if c.branch() == KBranch::Height {
                    prop_assert_eq!(cs.plane_z, p.z);
                }
            }
        }
    }
}
