//! Physical layout of the cooperating clusters and the candidate eavesdropper
//! locations, plus the normalized path-loss gains derived from it.
//!
//! Every gain is a ratio `(d_ref / d)^alpha`, so the path loss at unit
//! distance never appears.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RandomSource;

/// A point in the plane, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const ORIGIN: Point = Point { x: 0.0, y: 0.0 };

    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Rotates the point by `angle` radians about `center`.
    pub fn rotated_about(&self, center: &Point, angle: f64) -> Point {
        let (s, c) = angle.sin_cos();
        let dx = self.x - center.x;
        let dy = self.y - center.y;
        Point::new(center.x + c * dx - s * dy, center.y + s * dx + c * dy)
    }
}

/// Where the candidate eavesdropper locations come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub enum EvePlacement {
    /// `l_locs` points evenly spaced on the circle of radius `d_e` around the
    /// transmit head, the first at angle zero.
    #[default]
    Ring,
    /// An explicit list of candidate coordinates.
    Explicit(Vec<Point>),
}

/// Geometry, node counts and SNR parameters of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    /// Transmit nodes K.
    pub k_tx: usize,
    /// Receive nodes N.
    pub n_rx: usize,
    /// Eavesdropper antennas M.
    pub m_eve: usize,
    /// Candidate eavesdropper locations L.
    pub l_locs: usize,
    /// Transmit cluster radius (m).
    pub r_t: f64,
    /// Receive cluster radius (m).
    pub r_r: f64,
    /// Head-to-head distance (m).
    pub d_b: f64,
    /// Transmit head to eavesdropper reference distance (m).
    pub d_e: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// `P g_B / N0`, linear.
    pub gamma_b: f64,
    /// `P g_E / N0`, linear.
    pub gamma_e: f64,
    pub seed: u64,
    #[serde(default)]
    pub eve_placement: EvePlacement,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("k_tx", self.k_tx),
            ("n_rx", self.n_rx),
            ("m_eve", self.m_eve),
            ("l_locs", self.l_locs),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        let lengths = [
            ("r_t", self.r_t),
            ("r_r", self.r_r),
            ("d_b", self.d_b),
            ("d_e", self.d_e),
        ];
        for (name, v) in lengths {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a positive distance, got {v}")));
            }
        }
        if !(self.alpha >= 2.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 2, got {}", self.alpha)));
        }
        for (name, v) in [("gamma_b", self.gamma_b), ("gamma_e", self.gamma_e)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be > 0, got {v}")));
            }
        }
        if let EvePlacement::Explicit(points) = &self.eve_placement {
            if points.len() != self.l_locs {
                return Err(Error::Config(format!(
                    "l_locs = {} but {} explicit eavesdropper positions given",
                    self.l_locs,
                    points.len()
                )));
            }
        }
        Ok(())
    }
}

/// Node positions. Heads are element 0 of `tx` and `rx`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeLayout {
    pub tx: Vec<Point>,
    pub rx: Vec<Point>,
    pub eve: Vec<Point>,
}

impl NodeLayout {
    pub fn tx_head(&self) -> Point {
        self.tx[0]
    }

    pub fn rx_head(&self) -> Point {
        self.rx[0]
    }

    /// Checks the layout against the counts of `scenario`.
    pub fn check_counts(&self, scenario: &Scenario) -> Result<()> {
        if self.tx.len() != scenario.k_tx
            || self.rx.len() != scenario.n_rx
            || self.eve.len() != scenario.l_locs
        {
            return Err(Error::Precondition(format!(
                "layout has {}/{}/{} tx/rx/eve points, scenario expects {}/{}/{}",
                self.tx.len(),
                self.rx.len(),
                self.eve.len(),
                scenario.k_tx,
                scenario.n_rx,
                scenario.l_locs
            )));
        }
        Ok(())
    }
}

/// Ring of `count` points at `radius` around `center`, first at angle zero.
pub fn ring_positions(center: Point, radius: f64, count: usize) -> Vec<Point> {
    (0..count)
        .map(|i| {
            let theta = 2.0 * std::f64::consts::PI * i as f64 / count as f64;
            Point::new(center.x + radius * theta.cos(), center.y + radius * theta.sin())
        })
        .collect()
}

fn uniform_in_disc(center: Point, radius: f64, rng: &mut RandomSource) -> Point {
    let u: f64 = rng.random();
    let theta: f64 = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
    let r = radius * u.sqrt();
    Point::new(center.x + r * theta.cos(), center.y + r * theta.sin())
}

/// Places the heads at `(0, 0)` and `(d_b, 0)`, scatters the assisting nodes
/// uniformly over their cluster discs and lays out the eavesdropper
/// candidates.
pub fn sample_layout(scenario: &Scenario, rng: &mut RandomSource) -> Result<NodeLayout> {
    scenario.validate()?;
    let tx_head = Point::ORIGIN;
    let rx_head = Point::new(scenario.d_b, 0.0);
    let mut tx = vec![tx_head];
    for _ in 1..scenario.k_tx {
        tx.push(uniform_in_disc(tx_head, scenario.r_t, rng));
    }
    let mut rx = vec![rx_head];
    for _ in 1..scenario.n_rx {
        rx.push(uniform_in_disc(rx_head, scenario.r_r, rng));
    }
    let eve = match &scenario.eve_placement {
        EvePlacement::Ring => ring_positions(tx_head, scenario.d_e, scenario.l_locs),
        EvePlacement::Explicit(points) => points.clone(),
    };
    Ok(NodeLayout { tx, rx, eve })
}

/// Normalized path gain `(d_ref / d)^alpha`.
pub fn path_gain(d: f64, d_ref: f64, alpha: f64) -> Result<f64> {
    if !(d > 0.0) {
        return Err(Error::Domain(format!(
            "path gain at distance {d}: nodes are collocated"
        )));
    }
    if !(d_ref > 0.0) {
        return Err(Error::Domain(format!("reference distance must be > 0, got {d_ref}")));
    }
    Ok((d_ref / d).powf(alpha))
}

/// Average main-channel gains `beta[(n, k)]` normalized to the head distance.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaProfile {
    pub beta: DMatrix<f64>,
}

/// Average eavesdropper gains `sigma[(i, k)]` for location `i`, node `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct EveGainProfile {
    pub sigma: DMatrix<f64>,
}

impl EveGainProfile {
    pub fn locations(&self) -> usize {
        self.sigma.nrows()
    }

    /// Gains of all transmit nodes towards location `i`.
    pub fn row(&self, i: usize) -> Vec<f64> {
        self.sigma.row(i).iter().copied().collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.locations()).map(|i| self.row(i)).collect()
    }

    /// Keeps only the listed locations.
    pub fn select(&self, locations: &[usize]) -> EveGainProfile {
        EveGainProfile {
            sigma: DMatrix::from_fn(locations.len(), self.sigma.ncols(), |i, k| {
                self.sigma[(locations[i], k)]
            }),
        }
    }
}

/// Computes `beta` from transmit/receive distances and `sigma` from
/// transmit/eavesdropper distances.
pub fn gains_from_layout(
    layout: &NodeLayout,
    scenario: &Scenario,
) -> Result<(BetaProfile, EveGainProfile)> {
    layout.check_counts(scenario)?;
    let mut beta = DMatrix::zeros(layout.rx.len(), layout.tx.len());
    for (n, r) in layout.rx.iter().enumerate() {
        for (k, t) in layout.tx.iter().enumerate() {
            beta[(n, k)] = path_gain(r.distance(t), scenario.d_b, scenario.alpha)?;
        }
    }
    let mut sigma = DMatrix::zeros(layout.eve.len(), layout.tx.len());
    for (i, e) in layout.eve.iter().enumerate() {
        for (k, t) in layout.tx.iter().enumerate() {
            sigma[(i, k)] = path_gain(e.distance(t), scenario.d_e, scenario.alpha)?;
        }
    }
    Ok((BetaProfile { beta }, EveGainProfile { sigma }))
}
