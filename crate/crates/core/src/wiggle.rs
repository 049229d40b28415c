//! Covariance-ellipsoid summary of a measured wiggle-space point cloud.
//!
//! The ellipsoid is centered on the sample mean with principal axes along the
//! eigenvectors of the unbiased sample covariance and semi-axes
//! `a_i = k·√λ_i`.

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::keyvalue::KeyValues;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum WiggleError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("scale k must be positive, got {0}")]
    BadScale(f64),
    #[error("timestamps: {0}")]
    Timestamps(String),
    #[error("point {0} is not finite")]
    NonFinite(usize),
    #[error("eigen-decomposition failed")]
    EigenFailure,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vector3<f64>>,
    timestamps: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>) -> Result<Self, WiggleError> {
        Self::with_timestamps(points, None)
    }

    pub fn with_timestamps(
        points: Vec<Vector3<f64>>,
        timestamps: Option<Vec<f64>>,
    ) -> Result<Self, WiggleError> {
        if points.is_empty() {
            return Err(WiggleError::TooFewPoints { needed: 1, got: 0 });
        }
        if let Some(i) = points.iter().position(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(WiggleError::NonFinite(i));
        }
        if let Some(ts) = &timestamps {
            if ts.len() != points.len() {
                return Err(WiggleError::Timestamps(format!(
                    "{} timestamps for {} points",
                    ts.len(),
                    points.len()
                )));
            }
            if ts.windows(2).any(|w| !(w[1] >= w[0])) {
                return Err(WiggleError::Timestamps("not non-decreasing".into()));
            }
        }
        Ok(Self { points, timestamps })
    }

    pub fn points(&self) -> &[Vector3<f64>] {
        &self.points
    }

    pub fn timestamps(&self) -> Option<&[f64]> {
        self.timestamps.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Vector3<f64> {
        self.points.iter().sum::<Vector3<f64>>() / self.points.len() as f64
    }

    /// Parses the point-cloud text format: a `# units=mm|m` header followed by
    /// `x y z` or `t x y z` rows (seconds, then the declared length unit).
    /// Points are returned in meters.
    pub fn parse(text: &str) -> Result<Self, WiggleError> {
        let mut scale = None;
        let mut points = Vec::new();
        let mut times = Vec::new();
        let mut columns = None;
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if let Some(comment) = trimmed.strip_prefix('#') {
                if let Some(unit) = comment.trim().strip_prefix("units=") {
                    scale = Some(match unit.trim() {
                        "mm" => 1e-3,
                        "m" => 1.0,
                        other => {
                            return Err(WiggleError::Parse {
                                line,
                                message: format!("unknown unit `{other}`"),
                            })
                        }
                    });
                }
                continue;
            }
            if trimmed.is_empty() {
                continue;
            }
            let Some(scale) = scale else {
                return Err(WiggleError::Parse {
                    line,
                    message: "data before `# units=` header".into(),
                });
            };
            let values: Vec<f64> = trimmed
                .split_whitespace()
                .map(|s| s.parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| WiggleError::Parse {
                    line,
                    message: e.to_string(),
                })?;
            if !matches!(values.len(), 3 | 4) || columns.is_some_and(|c| c != values.len()) {
                return Err(WiggleError::Parse {
                    line,
                    message: format!("expected a consistent 3 or 4 columns, got {}", values.len()),
                });
            }
            columns = Some(values.len());
            let xyz = &values[values.len() - 3..];
            if values.len() == 4 {
                times.push(values[0]);
            }
            points.push(Vector3::new(xyz[0], xyz[1], xyz[2]) * scale);
        }
        let timestamps = (columns == Some(4)).then_some(times);
        Self::with_timestamps(points, timestamps)
    }
}

/// Unbiased (N−1) sample covariance.
pub fn covariance(cloud: &PointCloud) -> Result<Matrix3<f64>, WiggleError> {
    let n = cloud.len();
    if n < 2 {
        return Err(WiggleError::TooFewPoints { needed: 2, got: n });
    }
    let mean = cloud.mean();
    let mut acc = Matrix3::zeros();
    for p in cloud.points() {
        let d = p - mean;
        acc += d * d.transpose();
    }
    let cov = acc / (n - 1) as f64;
    Ok((cov + cov.transpose()) * 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ellipsoid {
    pub center: Vector3<f64>,
    /// Descending.
    pub semi_axes: Vector3<f64>,
    /// Unit principal directions as columns, matching `semi_axes`.
    pub axes: Matrix3<f64>,
    pub k: f64,
}

impl Ellipsoid {
    pub fn volume(&self) -> f64 {
        ellipsoid_volume(self)
    }

    /// `Σ_j (q_j / a_j)²` for the point in the principal frame. Zero-length
    /// axes only admit points with an exactly zero coordinate along them.
    pub fn normalized_radius_sq(&self, p: &Vector3<f64>) -> f64 {
        let q = self.axes.transpose() * (p - self.center);
        q.iter()
            .zip(self.semi_axes.iter())
            .map(|(&qj, &aj)| match (aj > 0.0, qj == 0.0) {
                (true, _) => (qj / aj).powi(2),
                (false, true) => 0.0,
                (false, false) => f64::INFINITY,
            })
            .sum()
    }

    /// Key-value report; `coverage` is included when given.
    pub fn report(&self, coverage: Option<f64>) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.insert("center", self.center.iter());
        kv.insert("semi_axes", self.semi_axes.iter());
        for i in 0..3 {
            kv.insert(&format!("axis_{i}"), self.axes.column(i).iter());
        }
        kv.insert("k", [self.k]);
        kv.insert("volume", [self.volume()]);
        if let Some(c) = coverage {
            kv.insert("coverage", [c]);
        }
        kv
    }
}

pub fn fit_ellipsoid(cloud: &PointCloud, k: f64) -> Result<Ellipsoid, WiggleError> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(WiggleError::BadScale(k));
    }
    if cloud.len() < 4 {
        return Err(WiggleError::TooFewPoints {
            needed: 4,
            got: cloud.len(),
        });
    }
    let cov = covariance(cloud)?;
    let eig = SymmetricEigen::try_new(cov, f64::EPSILON, 0).ok_or(WiggleError::EigenFailure)?;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut axes = Matrix3::zeros();
    let mut semi_axes = Vector3::zeros();
    for (slot, &i) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(i).normalize();
        if let Some(first) = v.iter().find(|c| **c != 0.0) {
            if *first < 0.0 {
                v = -v;
            }
        }
        axes.set_column(slot, &v);
        semi_axes[slot] = k * eig.eigenvalues[i].max(0.0).sqrt();
    }
    Ok(Ellipsoid {
        center: cloud.mean(),
        semi_axes,
        axes,
        k,
    })
}

/// Fraction of points with normalized ellipsoid radius at most one.
pub fn coverage_fraction(cloud: &PointCloud, e: &Ellipsoid) -> f64 {
    let inside = cloud
        .points()
        .iter()
        .filter(|p| e.normalized_radius_sq(p) <= 1.0)
        .count();
    inside as f64 / cloud.len() as f64
}

/// `(4/3)·π·a₁a₂a₃`.
pub fn ellipsoid_volume(e: &Ellipsoid) -> f64 {
    4.0 / 3.0 * PI * e.semi_axes.iter().product::<f64>()
}

/// Writes a cloud in the text format accepted by [`PointCloud::parse`], in meters.
pub fn write_cloud(cloud: &PointCloud) -> String {
    let mut out = String::from("# units=m\n");
    for (i, p) in cloud.points().iter().enumerate() {
        if let Some(ts) = cloud.timestamps() {
            let _ = write!(out, "{} ", ts[i]);
        }
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}
