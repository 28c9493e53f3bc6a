//! Diurnal gravity-model traffic, surge amplification, and domain load
//! aggregation.
//!
//! Per-node weights combine a base intensity with Gaussian geographic
//! hotspots modulated by a cosine daily pattern evaluated at each hotspot's
//! local hour; demand between two satellites is proportional to the product
//! of their weights, normalized to the configured total volume.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constellation::GroundTrack;
use crate::domain::DomainGraph;
use crate::error::{Error, Result};
use crate::partition::DomainPartition;

/// A geographic demand center.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeoHotspot {
    pub lat_deg: f64,
    pub lon_deg: f64,
    /// Peak weight contribution at zero distance.
    pub amplitude: f64,
    /// Gaussian spatial spread, degrees of arc.
    pub sigma_deg: f64,
}

/// Traffic generator parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct TrafficConfig {
    pub hotspots: Vec<GeoHotspot>,
    pub base_intensity: f64,
    /// Total matrix volume before surge amplification.
    pub total_volume: f64,
    /// Local hour of peak demand.
    pub peak_hour: f64,
    /// Multiplicative uniform noise amplitude; 0 disables.
    pub noise: f64,
    /// Surge amplification factor mu (>= 1).
    pub surge_multiplier: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        // Five major-population hotspots; amplitude 10x base, sigma 15 deg.
        let city = |lat_deg: f64, lon_deg: f64| GeoHotspot {
            lat_deg,
            lon_deg,
            amplitude: 10.0,
            sigma_deg: 15.0,
        };
        TrafficConfig {
            hotspots: vec![
                city(40.7, -74.0),  // New York
                city(51.5, -0.1),   // London
                city(35.7, 139.7),  // Tokyo
                city(31.2, 121.5),  // Shanghai
                city(-23.6, -46.6), // Sao Paulo
            ],
            base_intensity: 1.0,
            total_volume: 1000.0,
            peak_hour: 20.0,
            noise: 0.1,
            surge_multiplier: 5.0,
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hotspots.is_empty() {
            return Err(Error::InvalidConfig("at least one hotspot required".into()));
        }
        if self.hotspots.iter().any(|h| h.sigma_deg <= 0.0) {
            return Err(Error::InvalidConfig("hotspot sigma must be positive".into()));
        }
        if self.total_volume <= 0.0 {
            return Err(Error::InvalidConfig("total volume must be positive".into()));
        }
        if self.surge_multiplier < 1.0 {
            return Err(Error::InvalidConfig("surge multiplier must be >= 1".into()));
        }
        if !(0.0..24.0).contains(&self.peak_hour) {
            return Err(Error::InvalidConfig("peak hour must lie in [0, 24)".into()));
        }
        Ok(())
    }
}

/// N x N non-negative demand matrix with a zero diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct TrafficMatrix {
    m: Array2<f64>,
}

impl TrafficMatrix {
    pub fn from_array(m: Array2<f64>) -> Self {
        debug_assert_eq!(m.nrows(), m.ncols());
        TrafficMatrix { m }
    }

    pub fn zeros(n: usize) -> Self {
        TrafficMatrix {
            m: Array2::zeros((n, n)),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.m.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.m[(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.m[(i, j)] = v;
    }

    pub fn total(&self) -> f64 {
        self.m.sum()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.m
    }

    /// Element-wise mean of several matrices (used for the day-averaged
    /// partitioner input).
    pub fn mean_of(mats: &[TrafficMatrix]) -> TrafficMatrix {
        assert!(!mats.is_empty());
        let mut acc = mats[0].m.clone();
        for t in &mats[1..] {
            acc += &t.m;
        }
        acc /= mats.len() as f64;
        TrafficMatrix { m: acc }
    }

    /// Dense CSV, one row per source node.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> std::io::Result<()> {
        for i in 0..self.num_nodes() {
            let row: Vec<String> = (0..self.num_nodes())
                .map(|j| format!("{}", self.m[(i, j)]))
                .collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Great-circle angular distance in degrees.
fn great_circle_deg(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (p1, p2) = (lat1.to_radians(), lat2.to_radians());
    let dl = (lon1 - lon2).to_radians();
    let cos_d = p1.sin() * p2.sin() + p1.cos() * p2.cos() * dl.cos();
    cos_d.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Cosine daily modulation in [0, 1], peaking at `peak_hour`.
fn diurnal(local_hour: f64, peak_hour: f64) -> f64 {
    0.5 + 0.5 * (2.0 * std::f64::consts::PI * (local_hour - peak_hour) / 24.0).cos()
}

fn local_hour(lon_deg: f64, utc_hours: f64) -> f64 {
    (utc_hours + lon_deg / 15.0).rem_euclid(24.0)
}

/// Per-node attraction weights; exposed for oracle checks.
pub fn node_weights(
    cfg: &TrafficConfig,
    tracks: &GroundTrack,
    t_step: usize,
    step_seconds: f64,
) -> Vec<f64> {
    let utc_hours = (t_step as f64 * step_seconds / 3600.0).rem_euclid(24.0);
    (0..tracks.len())
        .map(|i| {
            let mut w = cfg.base_intensity;
            for h in &cfg.hotspots {
                let d = great_circle_deg(tracks.lat_deg[i], tracks.lon_deg[i], h.lat_deg, h.lon_deg);
                let spatial = (-d * d / (2.0 * h.sigma_deg * h.sigma_deg)).exp();
                w += h.amplitude * spatial * diurnal(local_hour(h.lon_deg, utc_hours), cfg.peak_hour);
            }
            w
        })
        .collect()
}

/// Generate the satellite-level traffic matrix for one time step.
///
/// T_ij = V * w_i w_j / sum_{a != b} w_a w_b for i != j, perturbed by
/// (1 + noise * U(-1,1)) per entry and renormalized to V. Falls back to a
/// uniform matrix when all weights vanish.
pub fn generate_traffic(
    cfg: &TrafficConfig,
    tracks: &GroundTrack,
    t_step: usize,
    step_seconds: f64,
    rng: &mut ChaCha8Rng,
) -> TrafficMatrix {
    let n = tracks.len();
    let w = node_weights(cfg, tracks, t_step, step_seconds);
    let sum_w: f64 = w.iter().sum();
    let sum_w2: f64 = w.iter().map(|x| x * x).sum();
    let denom = sum_w * sum_w - sum_w2;

    let mut m = Array2::zeros((n, n));
    if denom > 0.0 {
        let scale = cfg.total_volume / denom;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = scale * w[i] * w[j];
                }
            }
        }
    } else {
        let uniform = cfg.total_volume / (n * (n - 1)) as f64;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m[(i, j)] = uniform;
                }
            }
        }
    }

    if cfg.noise > 0.0 {
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    let u: f64 = rng.gen_range(-1.0..1.0);
                    m[(i, j)] *= 1.0 + cfg.noise * u;
                }
            }
        }
        let sum = m.sum();
        if sum > 0.0 {
            m *= cfg.total_volume / sum;
        }
    }
    TrafficMatrix { m }
}

/// The surge region: an inter-domain edge and every satellite of its two
/// endpoint domains.
#[derive(Debug, Clone)]
pub struct SurgeHotspot {
    pub edge_index: usize,
    pub domains: (usize, usize),
    pub affected: Vec<usize>,
}

/// Pick a uniformly random inter-domain edge as the surge hotspot.
pub fn select_hotspot(
    dg: &DomainGraph,
    part: &DomainPartition,
    rng: &mut ChaCha8Rng,
) -> Result<SurgeHotspot> {
    if dg.num_edges() == 0 {
        return Err(Error::EdgelessDomainGraph);
    }
    let edge_index = rng.gen_range(0..dg.num_edges());
    let (a, b) = dg.edge_endpoints(edge_index);
    let mut affected: Vec<usize> = part.members(a).to_vec();
    affected.extend_from_slice(part.members(b));
    affected.sort_unstable();
    Ok(SurgeHotspot {
        edge_index,
        domains: (a, b),
        affected,
    })
}

/// Multiply every entry touching the affected set by mu. No renormalization:
/// a surge adds load.
pub fn apply_surge(t: &TrafficMatrix, hotspot: &SurgeHotspot, mu: f64) -> TrafficMatrix {
    debug_assert!(mu >= 1.0);
    let n = t.num_nodes();
    let mut hit = vec![false; n];
    for &i in &hotspot.affected {
        hit[i] = true;
    }
    let mut m = t.m.clone();
    for i in 0..n {
        for j in 0..n {
            if hit[i] || hit[j] {
                m[(i, j)] *= mu;
            }
        }
    }
    TrafficMatrix { m }
}

/// Row + column sums per node: the total traffic a node sources or sinks.
pub fn node_strengths(t: &TrafficMatrix) -> Vec<f64> {
    let n = t.num_nodes();
    let mut s = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            let v = t.get(i, j);
            s[i] += v;
            s[j] += v;
        }
    }
    s
}

/// Aggregated bidirectional load of every domain.
pub fn domain_loads(t: &TrafficMatrix, part: &DomainPartition) -> Vec<f64> {
    domain_loads_from_strengths(&node_strengths(t), part)
}

/// Domain loads from precomputed node strengths.
pub fn domain_loads_from_strengths(strengths: &[f64], part: &DomainPartition) -> Vec<f64> {
    let mut loads = vec![0.0; part.num_domains()];
    for (node, &s) in strengths.iter().enumerate() {
        loads[part.label(node)] += s;
    }
    loads
}

/// Aggregated bidirectional load of domain `k` (Eq.-style definition:
/// outgoing plus incoming over all members).
pub fn domain_load(t: &TrafficMatrix, part: &DomainPartition, k: usize) -> f64 {
    let n = t.num_nodes();
    let mut load = 0.0;
    for &i in part.members(k) {
        for j in 0..n {
            load += t.get(i, j) + t.get(j, i);
        }
    }
    load
}
