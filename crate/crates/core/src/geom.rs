use serde::{Deserialize, Serialize};

/// A position in grid units.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    fn sub(self, rhs: Point) -> Point {
        Point::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Point {
    type Output = Point;

    fn add(self, rhs: Point) -> Point {
        Point::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl std::ops::Mul<f64> for Point {
    type Output = Point;

    fn mul(self, k: f64) -> Point {
        Point::new(self.x * k, self.y * k)
    }
}

/// How a state's footprint is measured against an agent position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistanceMode {
    /// Distance from the state's center point.
    #[default]
    Center,
    /// Distance from the nearest point of the state's square footprint.
    NearestPoint,
}

/// Planar embedding of POMDP states. States without a position (such as an
/// absorbing terminal) are never close to anything.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateGeometry {
    positions: Vec<Option<Point>>,
    half_extent: f64,
}

impl StateGeometry {
    pub fn new(positions: Vec<Option<Point>>, half_extent: f64) -> Self {
        Self {
            positions,
            half_extent,
        }
    }

    pub fn num_states(&self) -> usize {
        self.positions.len()
    }

    pub fn position(&self, s: usize) -> Option<Point> {
        self.positions[s]
    }

    pub fn distance(&self, s: usize, p: &Point, mode: DistanceMode) -> Option<f64> {
        let c = self.positions[s]?;
        Some(match mode {
            DistanceMode::Center => c.distance(p),
            DistanceMode::NearestPoint => {
                let dx = ((p.x - c.x).abs() - self.half_extent).max(0.0);
                let dy = ((p.y - c.y).abs() - self.half_extent).max(0.0);
                dx.hypot(dy)
            }
        })
    }

    /// `min_i ‖s − X_i‖`; `+∞` when there are no agents or `s` has no position.
    pub fn min_distance<'a>(
        &self,
        s: usize,
        agents: impl IntoIterator<Item = &'a Point>,
        mode: DistanceMode,
    ) -> f64 {
        if self.positions[s].is_none() {
            return f64::INFINITY;
        }
        agents
            .into_iter()
            .filter_map(|p| self.distance(s, p, mode))
            .fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nearest_point_never_exceeds_center() {
        let g = StateGeometry::new(vec![Some(Point::new(2.0, 3.0)), None], 0.5);
        for p in [Point::new(2.2, 3.1), Point::new(5.0, -1.0), Point::new(2.0, 9.0)] {
            let c = g.distance(0, &p, DistanceMode::Center).unwrap();
            let n = g.distance(0, &p, DistanceMode::NearestPoint).unwrap();
            assert!(n <= c);
        }
        assert_eq!(g.distance(0, &Point::new(2.4, 3.4), DistanceMode::NearestPoint), Some(0.0));
        assert_eq!(g.distance(0, &Point::new(4.5, 3.0), DistanceMode::NearestPoint), Some(2.0));
    }

    #[test]
    fn empty_agent_set_is_infinitely_far() {
        let g = StateGeometry::new(vec![Some(Point::new(0.0, 0.0)), None], 0.5);
        assert_eq!(g.min_distance(0, [], DistanceMode::Center), f64::INFINITY);
        assert_eq!(
            g.min_distance(1, [&Point::new(0.0, 0.0)], DistanceMode::Center),
            f64::INFINITY
        );
    }
}
