//! GeoEnvironment: agent positions on a spherical earth and proximity queries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agr::{AgentId, EnvId, World};

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Slack for the latitude lower bound, absorbing rounding in the bound itself.
const BOUND_SLACK_M: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid coordinate lat={lat} lon={lon}")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("agent {agent} is not a member of environment {env}")]
    NotAMember { agent: AgentId, env: EnvId },
    #[error("candidate set is empty")]
    EmptyCandidateSet,
    #[error("candidate {0} has no position")]
    UnplacedCandidate(AgentId),
}

/// WGS84 position in degrees. lat in [-90, 90], lon in [-180, 180).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPoint {
    lat: f64,
    lon: f64,
}

impl GeoPoint {
    pub fn new(lat: f64, lon: f64) -> Result<Self, GeoError> {
        let valid =
            lat.is_finite() && lon.is_finite() && (-90.0..=90.0).contains(&lat) && (-180.0..180.0).contains(&lon);
        if valid {
            Ok(Self { lat, lon })
        } else {
            Err(GeoError::InvalidCoordinate { lat, lon })
        }
    }

    pub fn lat(&self) -> f64 {
        self.lat
    }

    pub fn lon(&self) -> f64 {
        self.lon
    }
}

/// Great-circle distance in meters (haversine, R = 6,371 km).
///
/// The arguments are put in a canonical order first so the result is
/// bit-for-bit symmetric.
pub fn haversine_distance(a: GeoPoint, b: GeoPoint) -> f64 {
    let (p, q) = if (a.lat, a.lon) <= (b.lat, b.lon) {
        (a, b)
    } else {
        (b, a)
    };
    let (phi1, phi2) = (p.lat.to_radians(), q.lat.to_radians());
    let dphi = phi2 - phi1;
    let dlambda = (q.lon - p.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * h.sqrt().min(1.0).asin()
}

/// Lower bound on the distance between any two points whose latitudes
/// differ by `dlat_deg`: the meridian arc.
fn meridian_bound(dlat_deg: f64) -> f64 {
    EARTH_RADIUS_M * dlat_deg.abs().to_radians()
}

/// Points sorted by latitude. Queries sweep outwards from the origin's
/// latitude and stop once the meridian-arc lower bound exceeds the best
/// distance found, so every candidate that could win is evaluated with the
/// same [`haversine_distance`] an exhaustive scan would use.
#[derive(Debug, Clone, Default)]
pub struct GeoIndex {
    by_lat: Vec<(f64, AgentId, GeoPoint)>,
}

impl GeoIndex {
    pub fn new(entries: impl IntoIterator<Item = (AgentId, GeoPoint)>) -> Self {
        let mut by_lat: Vec<_> = entries.into_iter().map(|(id, p)| (p.lat, id, p)).collect();
        by_lat.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        by_lat.dedup_by_key(|e| e.1);
        Self { by_lat }
    }

    pub fn len(&self) -> usize {
        self.by_lat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_lat.is_empty()
    }

    /// Closest entry; ties go to the lowest id.
    pub fn nearest(&self, origin: GeoPoint) -> Option<(AgentId, f64)> {
        let start = self.by_lat.partition_point(|e| e.0 < origin.lat);
        let mut best: Option<(f64, AgentId)> = None;
        let consider = |best: &mut Option<(f64, AgentId)>, entry: &(f64, AgentId, GeoPoint)| {
            let d = haversine_distance(origin, entry.2);
            if best.is_none_or(|b| (d, entry.1) < b) {
                *best = Some((d, entry.1));
            }
        };
        let (mut up, mut down) = (start, start);
        loop {
            let bound = best.map_or(f64::INFINITY, |b| b.0 + BOUND_SLACK_M);
            let up_ok = up < self.by_lat.len() && meridian_bound(self.by_lat[up].0 - origin.lat) <= bound;
            let down_ok = down > 0 && meridian_bound(self.by_lat[down - 1].0 - origin.lat) <= bound;
            if !up_ok && !down_ok {
                break;
            }
            if up_ok {
                consider(&mut best, &self.by_lat[up]);
                up += 1;
            }
            if down_ok {
                down -= 1;
                consider(&mut best, &self.by_lat[down]);
            }
        }
        best.map(|(d, id)| (id, d))
    }

    /// All entries within `radius_m`, sorted by distance then id.
    pub fn within_radius(&self, origin: GeoPoint, radius_m: f64) -> Vec<(AgentId, f64)> {
        if radius_m.is_nan() || radius_m < 0.0 {
            return Vec::new();
        }
        let reach = (radius_m + BOUND_SLACK_M) / EARTH_RADIUS_M;
        let (lo, hi) = if reach.is_finite() && reach < std::f64::consts::PI {
            let span = reach.to_degrees();
            (origin.lat - span, origin.lat + span)
        } else {
            (f64::NEG_INFINITY, f64::INFINITY)
        };
        let from = self.by_lat.partition_point(|e| e.0 < lo);
        let to = self.by_lat.partition_point(|e| e.0 <= hi);
        let mut hits: Vec<_> = self.by_lat[from..to]
            .iter()
            .map(|e| (e.1, haversine_distance(origin, e.2)))
            .filter(|&(_, d)| d <= radius_m)
            .collect();
        hits.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        hits
    }
}

/// Positions of the members of one geo environment.
#[derive(Debug, Clone)]
pub struct GeoEnvironment {
    env: EnvId,
    positions: BTreeMap<AgentId, GeoPoint>,
}

impl GeoEnvironment {
    pub fn new(env: EnvId) -> Self {
        Self {
            env,
            positions: BTreeMap::new(),
        }
    }

    pub fn env_id(&self) -> EnvId {
        self.env
    }

    /// Places (or moves) `agent`. The agent must already be a member of the environment.
    pub fn place(&mut self, world: &World, agent: AgentId, point: GeoPoint) -> Result<(), GeoError> {
        if !world.is_member(self.env, agent) {
            return Err(GeoError::NotAMember { agent, env: self.env });
        }
        self.positions.insert(agent, point);
        Ok(())
    }

    pub fn position(&self, agent: AgentId) -> Option<GeoPoint> {
        self.positions.get(&agent).copied()
    }

    pub fn positions(&self) -> &BTreeMap<AgentId, GeoPoint> {
        &self.positions
    }

    fn placed(&self, candidates: &[AgentId]) -> Result<Vec<(AgentId, GeoPoint)>, GeoError> {
        candidates
            .iter()
            .map(|&c| self.position(c).map(|p| (c, p)).ok_or(GeoError::UnplacedCandidate(c)))
            .collect()
    }

    /// Candidate closest to `origin`, lowest id on ties.
    pub fn nearest(&self, origin: GeoPoint, candidates: &[AgentId]) -> Result<AgentId, GeoError> {
        if candidates.is_empty() {
            return Err(GeoError::EmptyCandidateSet);
        }
        let index = GeoIndex::new(self.placed(candidates)?);
        Ok(index.nearest(origin).expect("non-empty index").0)
    }

    pub fn within_radius(
        &self,
        origin: GeoPoint,
        radius_m: f64,
        candidates: &[AgentId],
    ) -> Result<Vec<AgentId>, GeoError> {
        let index = GeoIndex::new(self.placed(candidates)?);
        Ok(index
            .within_radius(origin, radius_m)
            .into_iter()
            .map(|(id, _)| id)
            .collect())
    }

    /// Index over a subset of placed members, for repeated queries.
    pub fn index(&self, candidates: &[AgentId]) -> Result<GeoIndex, GeoError> {
        Ok(GeoIndex::new(self.placed(candidates)?))
    }
}
