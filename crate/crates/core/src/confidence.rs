//! Confidence widths and per-episode interval bands around the GLM estimates.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{ModelEstimates, SufficientStats};
use crate::glm::{slope_floors, FeatureMaps, LinkFunction};
use crate::mdp::LayeredTopology;

/// `κ = √(3 + 2 log(1 + 2·bound²))`.
pub fn kappa(x_norm_bound: f64) -> f64 {
    (3.0 + 2.0 * (1.0 + 2.0 * x_norm_bound * x_norm_bound).ln()).sqrt()
}

/// Smallest episode index for which [`beta_width`] is defined.
pub fn min_episode(feature_dim: usize) -> f64 {
    1.0 + feature_dim.max(2) as f64
}

/// `(2 k_σ κ / c) √(2 dim log t log(dim/δ))`.
pub fn beta_width(
    t: f64,
    delta: f64,
    feature_dim: usize,
    lipschitz: f64,
    slope_floor: f64,
    kappa: f64,
) -> Result<f64> {
    let dim = feature_dim as f64;
    if feature_dim == 0 {
        return Err(Error::InvalidArgument("feature dimension must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0 && delta <= dim / std::f64::consts::E) {
        return Err(Error::InvalidArgument(format!(
            "delta {delta} outside (0, 1) or above {dim}/e"
        )));
    }
    if t < min_episode(feature_dim) {
        return Err(Error::InvalidArgument(format!(
            "episode {t} below 1 + max({feature_dim}, 2)"
        )));
    }
    if slope_floor <= 0.0 {
        return Err(Error::InvalidArgument("slope floor must be positive".into()));
    }
    Ok(2.0 * lipschitz * kappa / slope_floor * (2.0 * dim * t.ln() * (dim / delta).ln()).sqrt())
}

/// Everything needed to turn an episode index into band radii `ρ_t`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WidthSchedule {
    pub delta: f64,
    /// Multiplier on the theoretical widths.
    pub rho_scale: f64,
    pub lipschitz: f64,
    pub kappa: f64,
    pub transition_slope: f64,
    pub reward_slope: f64,
    pub n: usize,
    pub m: usize,
}

impl WidthSchedule {
    pub fn new(link: LinkFunction, maps: &FeatureMaps, bound: f64, delta: f64, rho_scale: f64) -> Result<Self> {
        let (transition_slope, reward_slope) = slope_floors(link, maps, bound);
        let schedule = Self {
            delta,
            rho_scale,
            lipschitz: link.lipschitz(),
            kappa: kappa(maps.x_max),
            transition_slope,
            reward_slope,
            n: maps.n(),
            m: maps.m(),
        };
        // surface configuration errors up front
        schedule.radii(1)?;
        Ok(schedule)
    }

    /// `(ρ^r_t, ρ^P_t)`, with `t` clamped up to the smallest valid index.
    pub fn radii(&self, t: usize) -> Result<(f64, f64)> {
        let t_min = min_episode(self.n.max(self.m));
        let t = (t as f64).max(t_min);
        let reward = beta_width(t, self.delta, self.m, self.lipschitz, self.reward_slope, self.kappa)?;
        let transition = beta_width(t, self.delta, self.n, self.lipschitz, self.transition_slope, self.kappa)?;
        Ok((self.rho_scale * reward, self.rho_scale * transition))
    }
}

/// Reward and transition intervals for one side-information vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceBands {
    pub topology: Arc<LayeredTopology>,
    pub episode: usize,
    pub delta: f64,
    pub reward_rho: f64,
    pub transition_rho: f64,
    /// Per pair.
    pub reward_center: Vec<f64>,
    pub reward_lo: Vec<f64>,
    pub reward_hi: Vec<f64>,
    /// Per triple.
    pub transition_center: Vec<f64>,
    pub transition_lo: Vec<f64>,
    pub transition_hi: Vec<f64>,
}

fn interval(center: f64, half_width: f64) -> (f64, f64) {
    ((center - half_width).max(0.0), (center + half_width).min(1.0))
}

impl ConfidenceBands {
    /// Point bands with the given centers.
    pub fn degenerate(topology: Arc<LayeredTopology>, reward: Vec<f64>, transition: Vec<f64>) -> Result<Self> {
        Self::from_centers(topology, reward, transition, 0.0, 0.0)
    }

    /// Bands of fixed half-width around the given centers, clipped to `[0, 1]`.
    pub fn from_centers(
        topology: Arc<LayeredTopology>,
        reward: Vec<f64>,
        transition: Vec<f64>,
        reward_half_width: f64,
        transition_half_width: f64,
    ) -> Result<Self> {
        if reward.len() != topology.num_pairs() {
            return Err(Error::DimensionMismatch { expected: topology.num_pairs(), actual: reward.len() });
        }
        if transition.len() != topology.num_triples() {
            return Err(Error::DimensionMismatch { expected: topology.num_triples(), actual: transition.len() });
        }
        let (reward_lo, reward_hi) = reward.iter().map(|&c| interval(c, reward_half_width)).unzip();
        let (transition_lo, transition_hi) =
            transition.iter().map(|&c| interval(c, transition_half_width)).unzip();
        Ok(Self {
            topology,
            episode: 0,
            delta: 0.0,
            reward_rho: reward_half_width,
            transition_rho: transition_half_width,
            reward_center: reward,
            reward_lo,
            reward_hi,
            transition_center: transition,
            transition_lo,
            transition_hi,
        })
    }

    pub fn transition_contains(&self, triple: usize, p: f64) -> bool {
        self.transition_lo[triple] <= p && p <= self.transition_hi[triple]
    }

    pub fn reward_contains(&self, pair: usize, r: f64) -> bool {
        self.reward_lo[pair] <= r && r <= self.reward_hi[pair]
    }

    pub fn rows(&self) -> Vec<BandRow> {
        let t = &self.topology;
        let mut rows = Vec::with_capacity(t.num_pairs() + t.num_triples());
        for pair in 0..t.num_pairs() {
            let (s, a) = t.pair(pair);
            let (layer, state) = (t.layer_of(s), t.local_index(s));
            rows.push(BandRow {
                layer,
                state,
                action: a,
                successor: None,
                center: self.reward_center[pair],
                lo: self.reward_lo[pair],
                hi: self.reward_hi[pair],
            });
            for (triple, &next) in t.row(pair).zip(t.pair_successors(pair)) {
                rows.push(BandRow {
                    layer,
                    state,
                    action: a,
                    successor: Some(t.local_index(next)),
                    center: self.transition_center[triple],
                    lo: self.transition_lo[triple],
                    hi: self.transition_hi[triple],
                });
            }
        }
        rows
    }

    /// One line per interval: `layer,state,action,successor,center,lo,hi`;
    /// reward rows leave the successor empty.
    pub fn write_dump(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# episode {}", self.episode)?;
        writeln!(out, "layer,state,action,successor,center,lo,hi")?;
        for row in self.rows() {
            let succ = row.successor.map(|s| s.to_string()).unwrap_or_default();
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                row.layer, row.state, row.action, succ, row.center, row.lo, row.hi
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandRow {
    pub layer: usize,
    pub state: usize,
    pub action: usize,
    pub successor: Option<usize>,
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
}

/// Builds the bands for side information `x` at episode `t`. Rows with a
/// single successor are deterministic by construction and get `[1, 1]`.
pub fn build_bands(
    x: &[f64],
    estimates: &ModelEstimates,
    stats: &SufficientStats,
    link: LinkFunction,
    widths: &WidthSchedule,
    t: usize,
) -> Result<ConfidenceBands> {
    estimates.check_solved(stats)?;
    let topology = stats.topology().clone();
    let maps = stats.maps();
    let (reward_rho, transition_rho) = widths.radii(t)?;
    let psi = maps.psi(x)?;
    let phi = maps.phi(x)?;

    let pairs = topology.num_pairs();
    let triples = topology.num_triples();
    let mut bands = ConfidenceBands {
        topology: topology.clone(),
        episode: t,
        delta: widths.delta,
        reward_rho,
        transition_rho,
        reward_center: Vec::with_capacity(pairs),
        reward_lo: Vec::with_capacity(pairs),
        reward_hi: Vec::with_capacity(pairs),
        transition_center: Vec::with_capacity(triples),
        transition_lo: Vec::with_capacity(triples),
        transition_hi: Vec::with_capacity(triples),
    };
    for pair in 0..pairs {
        let center = link.value(psi.dot(&estimates.params.lambda[pair]));
        let half = reward_rho * stats.reward_design(pair).mahalanobis_norm(psi.as_slice())?;
        let (lo, hi) = interval(center, half);
        bands.reward_center.push(center);
        bands.reward_lo.push(lo);
        bands.reward_hi.push(hi);

        let row = topology.row(pair);
        if row.len() == 1 {
            bands.transition_center.push(1.0);
            bands.transition_lo.push(1.0);
            bands.transition_hi.push(1.0);
            continue;
        }
        for triple in row {
            let center = link.value(phi.dot(&estimates.params.theta[triple]));
            let half = transition_rho * stats.transition_design(triple).mahalanobis_norm(phi.as_slice())?;
            let (lo, hi) = interval(center, half);
            bands.transition_center.push(center);
            bands.transition_lo.push(lo);
            bands.transition_hi.push(hi);
        }
    }
    Ok(bands)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::FeatureMap;

    #[test]
    fn kappa_reference_values() {
        assert!((kappa(0.0) - 3f64.sqrt()).abs() < 1e-15);
        assert!((kappa(1.0) - (3.0 + 2.0 * 3f64.ln()).sqrt()).abs() < 1e-15);
        assert!((kappa(1.0) - 2.27974).abs() < 1e-5);
        assert!(kappa(2.0) > kappa(1.0));
    }

    #[test]
    fn beta_reference_value() {
        let e = std::f64::consts::E;
        let b = beta_width(e * e, 1.0 / e, 1, 1.0, 1.0, 1.0).unwrap();
        assert!((b - 4.0).abs() < 1e-12);
    }

    #[test]
    fn beta_monotonicity() {
        let w = |t: f64, dim: usize| beta_width(t, 0.1, dim, 0.25, 0.2, kappa(1.0)).unwrap();
        assert!(w(200.0, 2) > w(100.0, 2));
        assert!(w(100.0, 4) > w(100.0, 1));
    }

    #[test]
    fn beta_rejects_bad_ranges() {
        assert!(beta_width(2.0, 0.1, 1, 0.25, 0.2, 1.0).is_err());
        assert!(beta_width(10.0, 0.5, 1, 0.25, 0.2, 1.0).is_err());
        assert!(beta_width(10.0, 1.0, 3, 0.25, 0.2, 1.0).is_err());
        assert!(beta_width(10.0, 0.0, 3, 0.25, 0.2, 1.0).is_err());
        assert!(beta_width(10.0, 0.1, 3, 0.25, 0.0, 1.0).is_err());
    }

    fn setup() -> (SufficientStats, ModelEstimates, FeatureMaps) {
        let topology = Arc::new(LayeredTopology::full(&[1, 2, 1], 2).unwrap());
        let maps = FeatureMaps {
            side_dim: 2,
            transition: FeatureMap::new(2, true),
            reward: FeatureMap::new(2, true),
            x_max: 1.0,
        };
        let stats = SufficientStats::new(topology.clone(), maps);
        let estimates = ModelEstimates::new(&topology, &maps, 10.0);
        (stats, estimates, maps)
    }

    #[test]
    fn initial_bands_center_on_half() {
        let (stats, estimates, maps) = setup();
        let link = LinkFunction::Logistic;
        let widths = WidthSchedule::new(link, &maps, 1.0, 0.1, 0.01).unwrap();
        let x = [0.3, -0.4];
        let bands = build_bands(&x, &estimates, &stats, link, &widths, 1).unwrap();
        let (rho_r, rho_p) = widths.radii(1).unwrap();
        let feat_norm = (0.09f64 + 0.16 + 1.0).sqrt();
        for pair in 0..stats.topology().num_pairs() {
            assert_eq!(bands.reward_center[pair], 0.5);
            assert!(bands.reward_contains(pair, 0.5));
            let expect = (0.5 - rho_r * feat_norm).max(0.0);
            assert!((bands.reward_lo[pair] - expect).abs() < 1e-14);
        }
        // first layer branches into two states
        for triple in stats.topology().row(0) {
            assert_eq!(bands.transition_center[triple], 0.5);
            let expect = (0.5 + rho_p * feat_norm).min(1.0);
            assert!((bands.transition_hi[triple] - expect).abs() < 1e-14);
        }
        // second layer rows are structural
        let last = stats.topology().row(stats.topology().pair_index(1, 0));
        assert_eq!(bands.transition_lo[last.start], 1.0);
    }

    #[test]
    fn zero_radius_gives_point_bands() {
        let (stats, estimates, maps) = setup();
        let link = LinkFunction::Logistic;
        let widths = WidthSchedule::new(link, &maps, 1.0, 0.1, 0.0).unwrap();
        let bands = build_bands(&[0.1, 0.1], &estimates, &stats, link, &widths, 40).unwrap();
        assert_eq!(bands.reward_lo, bands.reward_center);
        assert_eq!(bands.reward_hi, bands.reward_center);
        assert_eq!(bands.transition_lo, bands.transition_center);
    }

    #[test]
    fn unsolved_estimates_are_an_error() {
        let (mut stats, estimates, maps) = setup();
        stats
            .record_episode(&crate::mdp::Trajectory {
                episode: 1,
                side_info: vec![0.0, 0.0],
                states: vec![0, 1, 3],
                actions: vec![0, 0],
                rewards: vec![1.0, 0.0],
            })
            .unwrap();
        let link = LinkFunction::Logistic;
        let widths = WidthSchedule::new(link, &maps, 1.0, 0.1, 1.0).unwrap();
        assert!(matches!(
            build_bands(&[0.0, 0.0], &estimates, &stats, link, &widths, 2),
            Err(Error::UnsolvedEstimates { .. })
        ));
    }

    #[test]
    fn dump_has_one_line_per_interval() {
        let (stats, estimates, maps) = setup();
        let link = LinkFunction::Logistic;
        let widths = WidthSchedule::new(link, &maps, 1.0, 0.1, 1.0).unwrap();
        let bands = build_bands(&[0.0, 0.0], &estimates, &stats, link, &widths, 1).unwrap();
        let mut buf = Vec::new();
        bands.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let t = stats.topology();
        assert_eq!(text.lines().count(), 2 + t.num_pairs() + t.num_triples());
    }
}
