//! Walker constellation topology and circular-orbit geometry.
//!
//! Builds the satellite-level graph with the standard 4-ISL pattern (two
//! intra-plane ring neighbors, two inter-plane counterparts), propagates
//! sub-satellite points for the traffic generator, and derives the average
//! per-hop propagation delay used by the end-to-end delay metric.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph;

/// Speed of light, km/s.
pub const SPEED_OF_LIGHT_KM_S: f64 = 299_792.458;
/// Earth rotation rate, rad/s.
pub const EARTH_ROTATION_RAD_S: f64 = 7.292_115_9e-5;
/// Earth gravitational parameter, km^3/s^2.
pub const EARTH_MU_KM3_S2: f64 = 398_600.4418;

/// RAAN spread convention: star spaces planes over 180 degrees, delta over
/// 360.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WalkerPattern {
    Star,
    Delta,
}

/// Walker constellation parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstellationConfig {
    /// Number of orbital planes P.
    pub num_planes: usize,
    /// Satellites per plane S.
    pub sats_per_plane: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    /// Walker phasing factor F (inter-plane slot offset numerator).
    pub phasing_factor: usize,
    pub pattern: WalkerPattern,
    pub earth_radius_km: f64,
    /// Gravitational parameter, km^3/s^2.
    pub mu: f64,
}

impl Default for ConstellationConfig {
    fn default() -> Self {
        ConstellationConfig {
            num_planes: 6,
            sats_per_plane: 8,
            altitude_km: 1450.0,
            inclination_deg: 89.0,
            phasing_factor: 1,
            pattern: WalkerPattern::Star,
            earth_radius_km: 6371.0,
            mu: EARTH_MU_KM3_S2,
        }
    }
}

impl ConstellationConfig {
    pub fn num_sats(&self) -> usize {
        self.num_planes * self.sats_per_plane
    }

    /// Orbit radius (Earth radius + altitude), km.
    pub fn orbit_radius_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    /// Mean motion, rad/s.
    pub fn angular_rate(&self) -> f64 {
        let r = self.orbit_radius_km();
        (self.mu / (r * r * r)).sqrt()
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_planes < 2 {
            return Err(Error::InvalidConfig(
                "num_planes must be >= 2 for a 4-ISL grid".into(),
            ));
        }
        if self.sats_per_plane < 3 {
            return Err(Error::InvalidConfig(
                "sats_per_plane must be >= 3 for a 4-ISL grid".into(),
            ));
        }
        if self.altitude_km <= 0.0 || self.earth_radius_km <= 0.0 || self.mu <= 0.0 {
            return Err(Error::InvalidConfig(
                "altitude, earth radius and mu must be positive".into(),
            ));
        }
        if !(0.0 < self.inclination_deg && self.inclination_deg < 180.0) {
            return Err(Error::InvalidConfig(
                "inclination must lie in (0, 180) degrees".into(),
            ));
        }
        Ok(())
    }
}

/// Satellite-level topology: nodes indexed plane-major (`i = p*S + s`) with
/// a collapsed undirected edge set and per-node orbital phase geometry.
#[derive(Debug, Clone)]
pub struct SatGraph {
    num_nodes: usize,
    num_planes: usize,
    sats_per_plane: usize,
    /// Undirected edges, stored (a, b) with a < b, sorted.
    edges: Vec<(usize, usize)>,
    adj: Vec<Vec<usize>>,
    /// Plane RAAN, radians, indexed by plane.
    raan: Vec<f64>,
    /// In-plane phase at epoch, radians, indexed by node.
    phase0: Vec<f64>,
}

impl SatGraph {
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_planes(&self) -> usize {
        self.num_planes
    }

    pub fn sats_per_plane(&self) -> usize {
        self.sats_per_plane
    }

    pub fn plane_of(&self, node: usize) -> usize {
        node / self.sats_per_plane
    }

    pub fn slot_of(&self, node: usize) -> usize {
        node % self.sats_per_plane
    }

    pub fn node_index(&self, plane: usize, slot: usize) -> usize {
        plane * self.sats_per_plane + slot
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.adj[node]
    }

    pub fn adjacency(&self) -> &[Vec<usize>] {
        &self.adj
    }

    pub fn degree(&self, node: usize) -> usize {
        self.adj[node].len()
    }

    pub fn raan_of(&self, node: usize) -> f64 {
        self.raan[self.plane_of(node)]
    }

    pub fn phase0_of(&self, node: usize) -> f64 {
        self.phase0[node]
    }

    /// The two same-plane ring neighbors of `node`.
    pub fn intra_plane_neighbors(&self, node: usize) -> [usize; 2] {
        let s = self.sats_per_plane;
        let p = self.plane_of(node);
        let slot = self.slot_of(node);
        [
            self.node_index(p, (slot + 1) % s),
            self.node_index(p, (slot + s - 1) % s),
        ]
    }

    /// Edge-list text export: `# N P S` header then one `i j` pair per line.
    pub fn write_edge_list<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(
            w,
            "# {} {} {}",
            self.num_nodes, self.num_planes, self.sats_per_plane
        )?;
        for &(a, b) in &self.edges {
            writeln!(w, "{} {}", a, b)?;
        }
        Ok(())
    }
}

/// Build the 4-ISL Walker grid torus.
///
/// Intra-plane edges close each plane into a ring; inter-plane edges join
/// same-slot satellites of adjacent planes, wrapping p = P-1 back to p = 0.
/// Parallel edges arising at P = 2 are collapsed, so that degenerate (but
/// accepted) configuration yields effective degree 3.
pub fn build_walker(cfg: &ConstellationConfig) -> Result<SatGraph> {
    cfg.validate()?;
    let planes = cfg.num_planes;
    let per_plane = cfg.sats_per_plane;
    let n = cfg.num_sats();

    let mut edge_set = std::collections::BTreeSet::new();
    for p in 0..planes {
        for s in 0..per_plane {
            let i = p * per_plane + s;
            let intra = p * per_plane + (s + 1) % per_plane;
            let inter = ((p + 1) % planes) * per_plane + s;
            edge_set.insert((i.min(intra), i.max(intra)));
            edge_set.insert((i.min(inter), i.max(inter)));
        }
    }
    let edges: Vec<(usize, usize)> = edge_set.into_iter().collect();
    let adj = graph::adjacency(n, &edges);
    debug_assert!(graph::is_connected(n, &adj));

    let raan_step = match cfg.pattern {
        WalkerPattern::Star => std::f64::consts::PI / planes as f64,
        WalkerPattern::Delta => 2.0 * std::f64::consts::PI / planes as f64,
    };
    let raan: Vec<f64> = (0..planes).map(|p| p as f64 * raan_step).collect();
    let tau = 2.0 * std::f64::consts::PI;
    let phase0: Vec<f64> = (0..n)
        .map(|i| {
            let p = i / per_plane;
            let s = i % per_plane;
            tau * s as f64 / per_plane as f64 + tau * cfg.phasing_factor as f64 * p as f64 / n as f64
        })
        .collect();

    Ok(SatGraph {
        num_nodes: n,
        num_planes: planes,
        sats_per_plane: per_plane,
        edges,
        adj,
        raan,
        phase0,
    })
}

/// Sub-satellite latitude/longitude per node at one time step.
#[derive(Debug, Clone)]
pub struct GroundTrack {
    pub lat_deg: Vec<f64>,
    pub lon_deg: Vec<f64>,
}

impl GroundTrack {
    pub fn len(&self) -> usize {
        self.lat_deg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lat_deg.is_empty()
    }
}

fn wrap_lon_deg(lon: f64) -> f64 {
    let mut x = lon % 360.0;
    if x < -180.0 {
        x += 360.0;
    } else if x >= 180.0 {
        x -= 360.0;
    }
    x
}

/// Circular-orbit ground tracks at `t_step * step_seconds` past epoch.
///
/// u(t) = u0 + w*t, lat = asin(sin i * sin u),
/// lon = RAAN + atan2(cos i * sin u, cos u) - w_earth * t.
pub fn ground_track(
    g: &SatGraph,
    cfg: &ConstellationConfig,
    t_step: usize,
    step_seconds: f64,
) -> GroundTrack {
    let t = t_step as f64 * step_seconds;
    let omega = cfg.angular_rate();
    let inc = cfg.inclination_deg.to_radians();
    let (sin_i, cos_i) = inc.sin_cos();
    let earth_spin = EARTH_ROTATION_RAD_S * t;

    let mut lat = Vec::with_capacity(g.num_nodes());
    let mut lon = Vec::with_capacity(g.num_nodes());
    for node in 0..g.num_nodes() {
        let u = g.phase0_of(node) + omega * t;
        let (sin_u, cos_u) = u.sin_cos();
        lat.push((sin_i * sin_u).asin().to_degrees());
        let lon_rad = g.raan_of(node) + (cos_i * sin_u).atan2(cos_u) - earth_spin;
        lon.push(wrap_lon_deg(lon_rad.to_degrees()));
    }
    GroundTrack {
        lat_deg: lat,
        lon_deg: lon,
    }
}

/// Average per-hop propagation delay in milliseconds.
///
/// Averages the intra-plane chord `2r sin(pi/S)` and the inter-plane chord at
/// the equator `2r sin(pi/(2P))` with equal weight, divided by the speed of
/// light.
pub fn per_hop_delay_ms(cfg: &ConstellationConfig) -> f64 {
    let r = cfg.orbit_radius_km();
    let intra = 2.0 * r * (std::f64::consts::PI / cfg.sats_per_plane as f64).sin();
    let inter = 2.0 * r * (std::f64::consts::PI / (2.0 * cfg.num_planes as f64)).sin();
    let mean_chord_km = 0.5 * (intra + inter);
    mean_chord_km / SPEED_OF_LIGHT_KM_S * 1000.0
}
