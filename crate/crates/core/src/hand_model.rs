//! Passive-hand kinematic chain and the thumb attachment points it carries.
//!
//! A chain is a tree of revolute joints, each with a fixed origin transform
//! relative to its parent. Markers are points rigidly attached to a joint's
//! child link. The passive thumb is described by three joints with fixed
//! role names: [`THETA2_JOINT`] (IP flexion), [`THETA3_JOINT`] (mechanically
//! coupled to the IP joint through a [`CouplingFunction`]) and
//! [`THETA4_JOINT`] (TM abduction/adduction). The distal and metacarpal
//! linkages attach at the markers [`DISTAL_MARKER`] and [`METACARPAL_MARKER`].
//!
//! Text format, one record per line:
//!
//! ```text
//! joint <name> parent=<name|base> origin=<x> <y> <z> <qw> <qx> <qy> <qz> axis=<ax> <ay> <az> limits=<lo> <hi>
//! marker <name> joint=<name> offset=<x> <y> <z>
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use nalgebra::{Matrix3x2, UnitQuaternion, Vector3};

use crate::pose::{Pose, PoseError, UNIT_NORM_TOL};

pub const THETA2_JOINT: &str = "theta2";
pub const THETA3_JOINT: &str = "theta3";
pub const THETA4_JOINT: &str = "theta4";
pub const DISTAL_MARKER: &str = "distal";
pub const METACARPAL_MARKER: &str = "metacarpal";

const BASE: &str = "base";

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("joint `{joint}` references unknown parent `{parent}`")]
    UnknownParent { joint: String, parent: String },
    #[error("duplicate joint name `{0}`")]
    DuplicateJoint(String),
    #[error("duplicate marker name `{0}`")]
    DuplicateMarker(String),
    #[error("cycle detected through joint `{0}`")]
    Cycle(String),
    #[error("joint `{joint}` axis has norm {norm}, expected 1")]
    NonUnitAxis { joint: String, norm: f64 },
    #[error("joint `{joint}` origin: {source}")]
    BadOrigin { joint: String, source: PoseError },
    #[error("joint `{joint}` limits [{lo}, {hi}] are invalid")]
    BadLimits { joint: String, lo: f64, hi: f64 },
    #[error("marker `{marker}` references unknown joint `{joint}`")]
    UnknownMarkerJoint { marker: String, joint: String },
    #[error("chain has no joint named `{0}`")]
    MissingJoint(String),
    #[error("chain has no marker named `{0}`")]
    MissingMarker(String),
    #[error("joint `{joint}` angle {value} outside limits [{lo}, {hi}]")]
    OutOfLimits {
        joint: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("expected {expected} joint angles, got {actual}")]
    AngleCount { expected: usize, actual: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    /// `None` when the joint hangs off the palm base frame.
    pub parent: Option<String>,
    pub origin: Pose,
    pub axis: Vector3<f64>,
    pub limits: (f64, f64),
}

impl JointSpec {
    fn validate(&self) -> Result<(), ChainError> {
        let norm = self.axis.norm();
        if !((norm - 1.0).abs() <= UNIT_NORM_TOL) {
            return Err(ChainError::NonUnitAxis {
                joint: self.name.clone(),
                norm,
            });
        }
        let (lo, hi) = self.limits;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(ChainError::BadLimits {
                joint: self.name.clone(),
                lo,
                hi,
            });
        }
        Ok(())
    }

    fn rotation_at(&self, angle: f64) -> UnitQuaternion<f64> {
        UnitQuaternion::from_scaled_axis(self.axis * angle)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub name: String,
    pub joint: String,
    pub offset: Vector3<f64>,
}

/// Validated chain. Joints are stored parent-before-child.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicChain {
    joints: Vec<JointSpec>,
    parents: Vec<Option<usize>>,
    markers: Vec<Marker>,
    marker_joint: Vec<usize>,
}

impl KinematicChain {
    pub fn new(joints: Vec<JointSpec>, markers: Vec<Marker>) -> Result<Self, ChainError> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (i, j) in joints.iter().enumerate() {
            if j.name == BASE || index.insert(j.name.as_str(), i).is_some() {
                return Err(ChainError::DuplicateJoint(j.name.clone()));
            }
            j.validate()?;
        }
        let mut raw_parent = Vec::with_capacity(joints.len());
        for j in &joints {
            raw_parent.push(match &j.parent {
                None => None,
                Some(p) => Some(*index.get(p.as_str()).ok_or_else(|| {
                    ChainError::UnknownParent {
                        joint: j.name.clone(),
                        parent: p.clone(),
                    }
                })?),
            });
        }
        for start in 0..joints.len() {
            let mut cur = raw_parent[start];
            let mut steps = 0;
            while let Some(p) = cur {
                steps += 1;
                if p == start || steps > joints.len() {
                    return Err(ChainError::Cycle(joints[start].name.clone()));
                }
                cur = raw_parent[p];
            }
        }

        // Stable topological order: repeatedly emit joints whose parent is placed.
        let mut order = Vec::with_capacity(joints.len());
        let mut placed = vec![false; joints.len()];
        while order.len() < joints.len() {
            for i in 0..joints.len() {
                if !placed[i] && raw_parent[i].is_none_or(|p| placed[p]) {
                    placed[i] = true;
                    order.push(i);
                }
            }
        }
        let mut new_index = vec![0; joints.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old] = new;
        }
        let parents = order
            .iter()
            .map(|&old| raw_parent[old].map(|p| new_index[p]))
            .collect();
        let mut slots: Vec<Option<JointSpec>> = joints.into_iter().map(Some).collect();
        let joints: Vec<JointSpec> = order.iter().map(|&old| slots[old].take().unwrap()).collect();

        let mut marker_joint = Vec::with_capacity(markers.len());
        for (i, m) in markers.iter().enumerate() {
            if markers[..i].iter().any(|o| o.name == m.name) {
                return Err(ChainError::DuplicateMarker(m.name.clone()));
            }
            let j = joints.iter().position(|j| j.name == m.joint).ok_or_else(|| {
                ChainError::UnknownMarkerJoint {
                    marker: m.name.clone(),
                    joint: m.joint.clone(),
                }
            })?;
            marker_joint.push(j);
        }

        Ok(Self {
            joints,
            parents,
            markers,
            marker_joint,
        })
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn markers(&self) -> &[Marker] {
        &self.markers
    }

    pub fn joint_index(&self, name: &str) -> Result<usize, ChainError> {
        self.joints
            .iter()
            .position(|j| j.name == name)
            .ok_or_else(|| ChainError::MissingJoint(name.to_string()))
    }

    pub fn marker_index(&self, name: &str) -> Result<usize, ChainError> {
        self.markers
            .iter()
            .position(|m| m.name == name)
            .ok_or_else(|| ChainError::MissingMarker(name.to_string()))
    }

    pub fn joint_limits(&self, name: &str) -> Result<(f64, f64), ChainError> {
        Ok(self.joints[self.joint_index(name)?].limits)
    }

    /// Sum of every origin translation length and marker offset length; an
    /// upper bound on any marker's distance from any joint axis origin.
    pub fn total_link_length(&self) -> f64 {
        self.joints
            .iter()
            .map(|j| j.origin.translation().norm())
            .chain(self.markers.iter().map(|m| m.offset.norm()))
            .sum()
    }

    /// Base-frame pose of every joint's child link, indexed like [`Self::joints`].
    pub fn link_poses(&self, angles: &[f64]) -> Result<Vec<Pose>, ChainError> {
        if angles.len() != self.joints.len() {
            return Err(ChainError::AngleCount {
                expected: self.joints.len(),
                actual: angles.len(),
            });
        }
        let mut out: Vec<Pose> = Vec::with_capacity(self.joints.len());
        for (i, joint) in self.joints.iter().enumerate() {
            let local = joint
                .origin
                .compose(&Pose::new(joint.rotation_at(angles[i]), Vector3::zeros()));
            let world = match self.parents[i] {
                Some(p) => out[p].compose(&local),
                None => local,
            };
            out.push(world);
        }
        Ok(out)
    }

    pub fn marker_position(&self, marker: &str, angles: &[f64]) -> Result<Vector3<f64>, ChainError> {
        let m = self.marker_index(marker)?;
        let links = self.link_poses(angles)?;
        Ok(links[self.marker_joint[m]].transform_point(&self.markers[m].offset))
    }

    fn is_ancestor_or_self(&self, ancestor: usize, mut joint: usize) -> bool {
        loop {
            if joint == ancestor {
                return true;
            }
            match self.parents[joint] {
                Some(p) => joint = p,
                None => return false,
            }
        }
    }

    /// Base-frame derivative of a marker position with respect to one joint angle.
    fn marker_derivative(&self, links: &[Pose], marker: usize, joint: usize) -> Vector3<f64> {
        let owner = self.marker_joint[marker];
        if !self.is_ancestor_or_self(joint, owner) {
            return Vector3::zeros();
        }
        let point = links[owner].transform_point(&self.markers[marker].offset);
        let axis = links[joint].rotation() * self.joints[joint].axis;
        axis.cross(&(point - links[joint].translation()))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for j in &self.joints {
            let t = j.origin.translation();
            let q = j.origin.wxyz();
            let _ = writeln!(
                out,
                "joint {} parent={} origin={} {} {} {} {} {} {} axis={} {} {} limits={} {}",
                j.name,
                j.parent.as_deref().unwrap_or(BASE),
                t.x,
                t.y,
                t.z,
                q[0],
                q[1],
                q[2],
                q[3],
                j.axis.x,
                j.axis.y,
                j.axis.z,
                j.limits.0,
                j.limits.1
            );
        }
        for m in &self.markers {
            let _ = writeln!(
                out,
                "marker {} joint={} offset={} {} {}",
                m.name, m.joint, m.offset.x, m.offset.y, m.offset.z
            );
        }
        out
    }
}

pub fn serialize_chain(chain: &KinematicChain) -> String {
    chain.to_text()
}

struct Token<'a> {
    text: &'a str,
    column: usize,
}

fn tokenize(line: &str) -> Vec<Token<'_>> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in line.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(Token {
                    text: &line[s..i],
                    column: line[..s].chars().count() + 1,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            text: &line[s..],
            column: line[..s].chars().count() + 1,
        });
    }
    tokens
}

struct Field<'a> {
    column: usize,
    values: Vec<Token<'a>>,
}

struct Record<'a> {
    line: usize,
    kind: Token<'a>,
    name: Token<'a>,
    fields: Vec<(&'a str, Field<'a>)>,
}

impl<'a> Record<'a> {
    fn syntax(&self, column: usize, message: impl Into<String>) -> ChainError {
        ChainError::Syntax {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    fn field(&self, key: &str) -> Result<&Field<'a>, ChainError> {
        self.fields
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, f)| f)
            .ok_or_else(|| self.syntax(self.kind.column, format!("missing `{key}=`")))
    }

    fn numbers<const N: usize>(&self, key: &str) -> Result<[f64; N], ChainError> {
        let field = self.field(key)?;
        if field.values.len() != N {
            return Err(self.syntax(
                field.column,
                format!("`{key}` expects {N} numbers, found {}", field.values.len()),
            ));
        }
        let mut out = [0.0; N];
        for (slot, tok) in out.iter_mut().zip(&field.values) {
            *slot = tok
                .text
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| self.syntax(tok.column, format!("`{}` is not a finite number", tok.text)))?;
        }
        Ok(out)
    }

    fn word(&self, key: &str) -> Result<&'a str, ChainError> {
        let field = self.field(key)?;
        match field.values.as_slice() {
            [one] => Ok(one.text),
            _ => Err(self.syntax(field.column, format!("`{key}` expects one name"))),
        }
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<(), ChainError> {
        for (i, (key, field)) in self.fields.iter().enumerate() {
            if !allowed.contains(key) {
                return Err(self.syntax(field.column, format!("unknown field `{key}`")));
            }
            if self.fields[..i].iter().any(|(k, _)| k == key) {
                return Err(self.syntax(field.column, format!("repeated field `{key}`")));
            }
        }
        Ok(())
    }
}

fn split_record(line: usize, text: &str) -> Result<Option<Record<'_>>, ChainError> {
    let body = text.split('#').next().unwrap_or("");
    let mut tokens = tokenize(body).into_iter();
    let Some(kind) = tokens.next() else {
        return Ok(None);
    };
    let name = tokens.next().ok_or_else(|| ChainError::Syntax {
        line,
        column: kind.column + kind.text.chars().count(),
        message: "expected a name".into(),
    })?;
    if name.text.contains('=') {
        return Err(ChainError::Syntax {
            line,
            column: name.column,
            message: "expected a name before fields".into(),
        });
    }
    let mut fields: Vec<(&str, Field)> = Vec::new();
    for tok in tokens {
        if let Some((key, rest)) = tok.text.split_once('=') {
            if key.is_empty() || rest.contains('=') {
                return Err(ChainError::Syntax {
                    line,
                    column: tok.column,
                    message: format!("malformed field `{}`", tok.text),
                });
            }
            let mut values = Vec::new();
            if !rest.is_empty() {
                values.push(Token {
                    text: rest,
                    column: tok.column + key.chars().count() + 1,
                });
            }
            fields.push((
                key,
                Field {
                    column: tok.column,
                    values,
                },
            ));
        } else if let Some((_, field)) = fields.last_mut() {
            field.values.push(tok);
        } else {
            return Err(ChainError::Syntax {
                line,
                column: tok.column,
                message: format!("unexpected `{}`", tok.text),
            });
        }
    }
    Ok(Some(Record {
        line,
        kind,
        name,
        fields,
    }))
}

pub fn parse_chain(text: &str) -> Result<KinematicChain, ChainError> {
    let mut joints = Vec::new();
    let mut markers = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let Some(rec) = split_record(idx + 1, raw)? else {
            continue;
        };
        match rec.kind.text {
            "joint" => {
                rec.check_keys(&["parent", "origin", "axis", "limits"])?;
                let parent = rec.word("parent")?;
                let o = rec.numbers::<7>("origin")?;
                let a = rec.numbers::<3>("axis")?;
                let l = rec.numbers::<2>("limits")?;
                let name = rec.name.text.to_string();
                let origin = Pose::from_wxyz(Vector3::new(o[0], o[1], o[2]), [o[3], o[4], o[5], o[6]])
                    .map_err(|source| ChainError::BadOrigin {
                        joint: name.clone(),
                        source,
                    })?;
                joints.push(JointSpec {
                    name,
                    parent: (parent != BASE).then(|| parent.to_string()),
                    origin,
                    axis: Vector3::new(a[0], a[1], a[2]),
                    limits: (l[0], l[1]),
                });
            }
            "marker" => {
                rec.check_keys(&["joint", "offset"])?;
                let joint = rec.word("joint")?.to_string();
                let o = rec.numbers::<3>("offset")?;
                markers.push(Marker {
                    name: rec.name.text.to_string(),
                    joint,
                    offset: Vector3::new(o[0], o[1], o[2]),
                });
            }
            other => {
                return Err(rec.syntax(rec.kind.column, format!("unknown record `{other}`")));
            }
        }
    }
    KinematicChain::new(joints, markers)
}

/// Piecewise-linear map `θ₃ = f(θ₂)` standing in for the mechanical IP coupling.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingFunction {
    waypoints: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CouplingError {
    #[error("coupling needs at least two waypoints, got {0}")]
    TooFewWaypoints(usize),
    #[error("coupling abscissae must be strictly increasing (waypoint {0})")]
    NotIncreasing(usize),
    #[error("coupling waypoint {0} is not finite")]
    NonFinite(usize),
}

impl CouplingFunction {
    pub fn new(waypoints: Vec<(f64, f64)>) -> Result<Self, CouplingError> {
        if waypoints.len() < 2 {
            return Err(CouplingError::TooFewWaypoints(waypoints.len()));
        }
        for (i, &(x, y)) in waypoints.iter().enumerate() {
            if !(x.is_finite() && y.is_finite()) {
                return Err(CouplingError::NonFinite(i));
            }
            if i > 0 && x <= waypoints[i - 1].0 {
                return Err(CouplingError::NotIncreasing(i));
            }
        }
        Ok(Self { waypoints })
    }

    /// `θ₃ = θ₂` over `[lo, hi]`.
    pub fn identity(lo: f64, hi: f64) -> Self {
        Self::new(vec![(lo, lo), (hi, hi)]).expect("identity coupling over an empty interval")
    }

    pub fn waypoints(&self) -> &[(f64, f64)] {
        &self.waypoints
    }

    /// Index of the segment used for `x`, or `None` when `x` is clamped.
    fn segment(&self, x: f64) -> Option<usize> {
        let w = &self.waypoints;
        if x < w[0].0 || x >= w[w.len() - 1].0 {
            return None;
        }
        Some(w.partition_point(|p| p.0 <= x) - 1)
    }

    pub fn eval(&self, theta2: f64) -> f64 {
        let w = &self.waypoints;
        match self.segment(theta2) {
            Some(i) => {
                let (x0, y0) = w[i];
                let (x1, y1) = w[i + 1];
                y0 + (y1 - y0) * ((theta2 - x0) / (x1 - x0))
            }
            None if theta2 < w[0].0 => w[0].1,
            None => w[w.len() - 1].1,
        }
    }

    /// Slope of the active segment; zero in the clamped regions.
    pub fn slope(&self, theta2: f64) -> f64 {
        match self.segment(theta2) {
            Some(i) => {
                let (x0, y0) = self.waypoints[i];
                let (x1, y1) = self.waypoints[i + 1];
                (y1 - y0) / (x1 - x0)
            }
            None => 0.0,
        }
    }
}

pub fn coupling_theta3(f: &CouplingFunction, theta2: f64) -> f64 {
    f.eval(theta2)
}

/// Passive thumb configuration `q_p = [θ₂, θ₄]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PassiveThumbConfig {
    pub theta2: f64,
    pub theta4: f64,
}

impl PassiveThumbConfig {
    pub fn new(theta2: f64, theta4: f64) -> Self {
        Self { theta2, theta4 }
    }
}

/// Indices of the passive-thumb joints and attachment markers inside a chain.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ThumbLayout {
    pub theta2: usize,
    pub theta3: usize,
    pub theta4: usize,
    pub distal: usize,
    pub metacarpal: usize,
}

impl ThumbLayout {
    pub fn of(chain: &KinematicChain) -> Result<Self, ChainError> {
        Ok(Self {
            theta2: chain.joint_index(THETA2_JOINT)?,
            theta3: chain.joint_index(THETA3_JOINT)?,
            theta4: chain.joint_index(THETA4_JOINT)?,
            distal: chain.marker_index(DISTAL_MARKER)?,
            metacarpal: chain.marker_index(METACARPAL_MARKER)?,
        })
    }
}

pub(crate) fn check_limits(chain: &KinematicChain, q: &PassiveThumbConfig) -> Result<(), ChainError> {
    for (name, value) in [(THETA2_JOINT, q.theta2), (THETA4_JOINT, q.theta4)] {
        let (lo, hi) = chain.joint_limits(name)?;
        if !(lo..=hi).contains(&value) {
            return Err(ChainError::OutOfLimits {
                joint: name.to_string(),
                value,
                lo,
                hi,
            });
        }
    }
    Ok(())
}

/// Joint-angle vector for the chain with θ₃ driven by the coupling and every
/// joint outside the thumb set held at zero.
pub(crate) fn thumb_angles(
    chain: &KinematicChain,
    layout: &ThumbLayout,
    f: &CouplingFunction,
    q: &PassiveThumbConfig,
) -> Vec<f64> {
    let mut angles = vec![0.0; chain.joints().len()];
    angles[layout.theta2] = q.theta2;
    angles[layout.theta3] = f.eval(q.theta2);
    angles[layout.theta4] = q.theta4;
    angles
}

/// Distal and metacarpal attachment points `(r_d, r_m)` in the palm-base frame.
pub fn fk_attachment_points(
    chain: &KinematicChain,
    f: &CouplingFunction,
    q: &PassiveThumbConfig,
) -> Result<(Vector3<f64>, Vector3<f64>), ChainError> {
    let layout = ThumbLayout::of(chain)?;
    check_limits(chain, q)?;
    Ok(attachment_points_unchecked(chain, &layout, f, q))
}

pub(crate) fn attachment_points_unchecked(
    chain: &KinematicChain,
    layout: &ThumbLayout,
    f: &CouplingFunction,
    q: &PassiveThumbConfig,
) -> (Vector3<f64>, Vector3<f64>) {
    let links = chain
        .link_poses(&thumb_angles(chain, layout, f, q))
        .expect("angle vector sized from chain");
    let at = |m: usize| links[chain.marker_joint[m]].transform_point(&chain.markers[m].offset);
    (at(layout.distal), at(layout.metacarpal))
}

/// Derivatives of `(r_d, r_m)` with respect to `[θ₂, θ₄]`, with θ₃ following
/// the coupling slope.
pub(crate) fn attachment_jacobians(
    chain: &KinematicChain,
    layout: &ThumbLayout,
    f: &CouplingFunction,
    q: &PassiveThumbConfig,
) -> (Matrix3x2<f64>, Matrix3x2<f64>) {
    let links = chain
        .link_poses(&thumb_angles(chain, layout, f, q))
        .expect("angle vector sized from chain");
    let slope = f.slope(q.theta2);
    let jac = |m: usize| {
        let d2 = chain.marker_derivative(&links, m, layout.theta2)
            + chain.marker_derivative(&links, m, layout.theta3) * slope;
        let d4 = chain.marker_derivative(&links, m, layout.theta4);
        Matrix3x2::from_columns(&[d2, d4])
    };
    (jac(layout.distal), jac(layout.metacarpal))
}
