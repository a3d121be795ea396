//! Routing instances: city coordinates, depots, travel days.
//!
//! A [`ProblemInstance`] is the ground truth every later stage derives from.
//! Distances are always recomputed from coordinates here and never accepted
//! from outside (model output, prompt text, files).

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Instances larger than this still validate, but carry a scale warning.
pub const SCALE_WARNING_CITIES: usize = 20;

#[derive(Debug, Error)]
pub enum InstanceError {
    #[error("city {city} has a non-finite coordinate")]
    NonFiniteCoordinate { city: usize },
    #[error("failed to read instance file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed instance JSON: {0}")]
    Json(#[from] serde_json::Error),
}

/// A planar location in abstract distance units.
///
/// Serializes as a two-element `[x, y]` array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Point2D {
    pub x: f64,
    pub y: f64,
}

impl Point2D {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl From<[f64; 2]> for Point2D {
    fn from([x, y]: [f64; 2]) -> Self {
        Self { x, y }
    }
}

impl From<Point2D> for [f64; 2] {
    fn from(p: Point2D) -> Self {
        [p.x, p.y]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ProblemType {
    /// One closed tour from a single depot.
    TspSingle,
    /// Several daily tours sharing one depot.
    MultiDaySingleDepot,
    /// Several daily tours, each day with its own depot.
    MultiDayDepotPerDay,
    /// Anything else; constraints live in the request text.
    Novel,
}

impl ProblemType {
    pub const ALL: [ProblemType; 4] = [
        ProblemType::TspSingle,
        ProblemType::MultiDaySingleDepot,
        ProblemType::MultiDayDepotPerDay,
        ProblemType::Novel,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ProblemType::TspSingle => "TSP_SINGLE",
            ProblemType::MultiDaySingleDepot => "MULTI_DAY_SINGLE_DEPOT",
            ProblemType::MultiDayDepotPerDay => "MULTI_DAY_DEPOT_PER_DAY",
            ProblemType::Novel => "NOVEL",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.tag().eq_ignore_ascii_case(tag.trim()))
    }

    /// 1-based row number used in metric tables.
    pub fn number(self) -> u8 {
        match self {
            ProblemType::TspSingle => 1,
            ProblemType::MultiDaySingleDepot => 2,
            ProblemType::MultiDayDepotPerDay => 3,
            ProblemType::Novel => 4,
        }
    }
}

impl fmt::Display for ProblemType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// A routing instance as read from an instance file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemInstance {
    pub cities: Vec<Point2D>,
    pub problem_type: ProblemType,
    pub depots: Vec<usize>,
    pub days: usize,
    pub request_text: String,
}

impl ProblemInstance {
    pub fn from_json_str(s: &str) -> Result<Self, InstanceError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, InstanceError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| InstanceError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json_str(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serialization is infallible")
    }

    pub fn city_count(&self) -> usize {
        self.cities.len()
    }

    /// Depot a given day's route must start and end at, for the library types.
    pub fn depot_for_day(&self, day: usize) -> Option<usize> {
        match self.problem_type {
            ProblemType::TspSingle | ProblemType::MultiDaySingleDepot => self.depots.first().copied(),
            ProblemType::MultiDayDepotPerDay => self.depots.get(day).copied(),
            ProblemType::Novel => None,
        }
    }

    pub fn is_depot(&self, city: usize) -> bool {
        self.depots.contains(&city)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Defect {
    NonFiniteCoordinate { city: usize },
    DepotOutOfRange { depot: usize, cities: usize },
    ZeroDays,
    /// A single-route problem declared with more than one day.
    DaysMismatch { expected: usize, found: usize },
    DepotCountMismatch { expected: usize, found: usize },
    DuplicateDepot { depot: usize },
    TooFewCities { cities: usize, required: usize },
    /// Non-fatal: models degrade badly past this size.
    ScaleWarning { cities: usize },
}

impl Defect {
    pub fn is_fatal(&self) -> bool {
        !matches!(self, Defect::ScaleWarning { .. })
    }
}

impl fmt::Display for Defect {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Defect::NonFiniteCoordinate { city } => write!(f, "city {city} has a non-finite coordinate"),
            Defect::DepotOutOfRange { depot, cities } => {
                write!(f, "depot index {depot} is out of range for {cities} cities")
            }
            Defect::ZeroDays => f.write_str("days must be at least 1"),
            Defect::DaysMismatch { expected, found } => {
                write!(f, "problem type requires {expected} day(s), found {found}")
            }
            Defect::DepotCountMismatch { expected, found } => {
                write!(f, "expected {expected} depot(s), found {found}")
            }
            Defect::DuplicateDepot { depot } => write!(f, "depot {depot} is assigned to more than one day"),
            Defect::TooFewCities { cities, required } => {
                write!(f, "{cities} cities given, at least {required} required")
            }
            Defect::ScaleWarning { cities } => write!(
                f,
                "{cities} cities exceeds {SCALE_WARNING_CITIES}; model-generated routes often degrade at this size"
            ),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Validation {
    pub defects: Vec<Defect>,
}

impl Validation {
    /// True when no fatal defect is present. Warnings do not count.
    pub fn is_ok(&self) -> bool {
        !self.defects.iter().any(Defect::is_fatal)
    }

    pub fn has(&self, pred: impl Fn(&Defect) -> bool) -> bool {
        self.defects.iter().any(pred)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Defect> {
        self.defects.iter().filter(|d| !d.is_fatal())
    }
}

/// Lists every violated instance invariant. Never fails.
pub fn validate_instance(instance: &ProblemInstance) -> Validation {
    let mut defects = Vec::new();
    let n = instance.cities.len();

    for (city, p) in instance.cities.iter().enumerate() {
        if !p.is_finite() {
            defects.push(Defect::NonFiniteCoordinate { city });
        }
    }
    for &depot in &instance.depots {
        if depot >= n {
            defects.push(Defect::DepotOutOfRange { depot, cities: n });
        }
    }
    if instance.days == 0 {
        defects.push(Defect::ZeroDays);
    }
    match instance.problem_type {
        ProblemType::TspSingle => {
            if instance.days != 1 && instance.days != 0 {
                defects.push(Defect::DaysMismatch { expected: 1, found: instance.days });
            }
            if instance.depots.len() != 1 {
                defects.push(Defect::DepotCountMismatch { expected: 1, found: instance.depots.len() });
            }
        }
        ProblemType::MultiDaySingleDepot => {
            if instance.depots.len() != 1 {
                defects.push(Defect::DepotCountMismatch { expected: 1, found: instance.depots.len() });
            }
        }
        ProblemType::MultiDayDepotPerDay => {
            if instance.depots.len() != instance.days {
                defects.push(Defect::DepotCountMismatch {
                    expected: instance.days,
                    found: instance.depots.len(),
                });
            }
            let mut seen = Vec::new();
            for &depot in &instance.depots {
                if seen.contains(&depot) {
                    if !defects.contains(&Defect::DuplicateDepot { depot }) {
                        defects.push(Defect::DuplicateDepot { depot });
                    }
                } else {
                    seen.push(depot);
                }
            }
        }
        ProblemType::Novel => {}
    }
    let required = instance.days + 1;
    if n < required {
        defects.push(Defect::TooFewCities { cities: n, required });
    }
    if n > SCALE_WARNING_CITIES {
        defects.push(Defect::ScaleWarning { cities: n });
    }
    Validation { defects }
}

pub fn euclidean_distance(a: Point2D, b: Point2D) -> f64 {
    (a.x - b.x).hypot(a.y - b.y)
}

/// Dense symmetric matrix of pairwise Euclidean distances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_points(points: &[Point2D]) -> Result<Self, InstanceError> {
        if let Some(city) = points.iter().position(|p| !p.is_finite()) {
            return Err(InstanceError::NonFiniteCoordinate { city });
        }
        let n = points.len();
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in (i + 1)..n {
                let dist = euclidean_distance(points[i], points[j]);
                d[i * n + j] = dist;
                d[j * n + i] = dist;
            }
        }
        Ok(Self { n, d })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.d[i * self.n..(i + 1) * self.n]
    }

    /// Cost of walking the given city sequence in order.
    pub fn path_cost(&self, path: &[usize]) -> f64 {
        path.windows(2).map(|w| self.get(w[0], w[1])).sum()
    }
}

pub fn build_distance_matrix(instance: &ProblemInstance) -> Result<DistanceMatrix, InstanceError> {
    DistanceMatrix::from_points(&instance.cities)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(cities: &[(f64, f64)], problem_type: ProblemType, depots: &[usize], days: usize) -> ProblemInstance {
        ProblemInstance {
            cities: cities.iter().map(|&(x, y)| Point2D::new(x, y)).collect(),
            problem_type,
            depots: depots.to_vec(),
            days,
            request_text: String::new(),
        }
    }

    fn square_plus_apex() -> ProblemInstance {
        instance(
            &[(0.0, 0.0), (4.0, 0.0), (4.0, 3.0), (0.0, 3.0), (2.0, 5.0)],
            ProblemType::TspSingle,
            &[0],
            1,
        )
    }

    #[test]
    fn distance_examples() {
        assert_eq!(euclidean_distance(Point2D::new(0.0, 0.0), Point2D::new(3.0, 4.0)), 5.0);
        assert_eq!(euclidean_distance(Point2D::new(2.0, 7.0), Point2D::new(2.0, 7.0)), 0.0);
        let d = euclidean_distance(Point2D::new(4.0, 3.0), Point2D::new(2.0, 5.0));
        assert!((d - 8f64.sqrt()).abs() < 1e-15);
        assert!((d - 2.828_427_1).abs() < 1e-7);
    }

    #[test]
    fn matrix_examples() {
        let m = DistanceMatrix::from_points(&[Point2D::new(0.0, 0.0), Point2D::new(1.0, 0.0)]).unwrap();
        assert_eq!(m.row(0), &[0.0, 1.0]);
        assert_eq!(m.row(1), &[1.0, 0.0]);

        let m = DistanceMatrix::from_points(&[Point2D::new(5.0, 5.0)]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.get(0, 0), 0.0);

        let m = build_distance_matrix(&square_plus_apex()).unwrap();
        assert!((m.get(2, 4) - 8f64.sqrt()).abs() < 1e-15);
        assert_eq!(m.get(2, 4), m.get(4, 2));
    }

    #[test]
    fn matrix_rejects_non_finite() {
        let err = DistanceMatrix::from_points(&[Point2D::new(0.0, 0.0), Point2D::new(f64::NAN, 1.0)]).unwrap_err();
        assert!(matches!(err, InstanceError::NonFiniteCoordinate { city: 1 }));
    }

    #[test]
    fn validate_examples() {
        assert_eq!(validate_instance(&square_plus_apex()), Validation::default());

        let bad = instance(
            &[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (3.0, 0.0)],
            ProblemType::MultiDayDepotPerDay,
            &[0, 1],
            3,
        );
        let v = validate_instance(&bad);
        assert!(!v.is_ok());
        assert!(v.has(|d| matches!(d, Defect::DepotCountMismatch { expected: 3, found: 2 })));

        let big: Vec<(f64, f64)> = (0..25).map(|i| (i as f64, (i * i) as f64)).collect();
        let v = validate_instance(&instance(&big, ProblemType::TspSingle, &[0], 1));
        assert!(v.is_ok());
        assert_eq!(v.defects, vec![Defect::ScaleWarning { cities: 25 }]);
    }

    #[test]
    fn validate_lists_every_defect() {
        let bad = instance(&[(0.0, f64::INFINITY), (1.0, 0.0)], ProblemType::MultiDayDepotPerDay, &[1, 1, 7], 3);
        let v = validate_instance(&bad);
        assert!(v.has(|d| matches!(d, Defect::NonFiniteCoordinate { city: 0 })));
        assert!(v.has(|d| matches!(d, Defect::DepotOutOfRange { depot: 7, .. })));
        assert!(v.has(|d| matches!(d, Defect::DuplicateDepot { depot: 1 })));
        assert!(v.has(|d| matches!(d, Defect::TooFewCities { cities: 2, required: 4 })));

        let v = validate_instance(&instance(&[(0.0, 0.0), (1.0, 1.0)], ProblemType::TspSingle, &[0], 2));
        assert!(v.has(|d| matches!(d, Defect::DaysMismatch { expected: 1, found: 2 })));
        let v = validate_instance(&instance(&[(0.0, 0.0), (1.0, 1.0)], ProblemType::TspSingle, &[0], 0));
        assert!(v.has(|d| matches!(d, Defect::ZeroDays)));
    }

    #[test]
    fn instance_json_is_strict() {
        let ok = r#"{"cities": [[0, 0], [1.5, 2]], "problem_type": "TSP_SINGLE", "depots": [0], "days": 1, "request_text": "tour"}"#;
        let inst = ProblemInstance::from_json_str(ok).unwrap();
        assert_eq!(inst.cities[1], Point2D::new(1.5, 2.0));

        let extra = r#"{"cities": [], "problem_type": "TSP_SINGLE", "depots": [0], "days": 1, "request_text": "", "matrix": []}"#;
        assert!(ProblemInstance::from_json_str(extra).is_err());
        let bad_tag = r#"{"cities": [], "problem_type": "TSP", "depots": [0], "days": 1, "request_text": ""}"#;
        assert!(ProblemInstance::from_json_str(bad_tag).is_err());
    }

    #[test]
    fn problem_type_tags() {
        for t in ProblemType::ALL {
            assert_eq!(ProblemType::from_tag(t.tag()), Some(t));
            assert_eq!(serde_json::to_string(&t).unwrap(), format!("\"{}\"", t.tag()));
        }
        assert_eq!(ProblemType::from_tag(" tsp_single "), Some(ProblemType::TspSingle));
    }
}
