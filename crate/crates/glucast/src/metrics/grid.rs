//! Clinical error grids: five ordinal risk zones A-E partitioning the
//! (reference, predicted) quadrant, with boundaries loaded from a
//! plain-text file of piecewise-linear curves.
//!
//! Classification walks every boundary curve applicable at the point's
//! reference value; each curve the point lies strictly beyond (away from
//! the diagonal) promotes the zone to the curve's outer label. Points on
//! a boundary are therefore assigned to the lower-risk side, and the
//! diagonal always falls in zone A.

use std::path::Path;

use crate::error::MetricError;

/// Ordinal clinical risk: A (none) through E (extreme).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
pub enum RiskZone {
    A,
    B,
    C,
    D,
    E,
}

impl RiskZone {
    /// Ordinal encoding 1-5 used by the rank correlations.
    pub fn ordinal(&self) -> u8 {
        match self {
            RiskZone::A => 1,
            RiskZone::B => 2,
            RiskZone::C => 3,
            RiskZone::D => 4,
            RiskZone::E => 5,
        }
    }

    pub fn label(&self) -> char {
        match self {
            RiskZone::A => 'A',
            RiskZone::B => 'B',
            RiskZone::C => 'C',
            RiskZone::D => 'D',
            RiskZone::E => 'E',
        }
    }

    fn parse(c: char) -> Option<RiskZone> {
        match c {
            'A' => Some(RiskZone::A),
            'B' => Some(RiskZone::B),
            'C' => Some(RiskZone::C),
            'D' => Some(RiskZone::D),
            'E' => Some(RiskZone::E),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Upper,
    Lower,
}

#[derive(Debug, Clone)]
struct BoundaryCurve {
    side: Side,
    inner: RiskZone,
    outer: RiskZone,
    /// (reference, predicted) vertices with strictly increasing reference.
    vertices: Vec<(f64, f64)>,
}

impl BoundaryCurve {
    fn first_ref(&self) -> f64 {
        self.vertices[0].0
    }

    fn last_ref(&self) -> f64 {
        self.vertices[self.vertices.len() - 1].0
    }

    /// Piecewise-linear boundary height at reference `r`, extrapolating
    /// the edge segments only where the curve reaches the grid domain.
    fn eval(&self, r: f64, domain: (f64, f64)) -> Option<f64> {
        let (first, last) = (self.first_ref(), self.last_ref());
        if r < first {
            if first > domain.0 {
                return None;
            }
        } else if r > last && last < domain.1 {
            return None;
        }
        let segment = |a: (f64, f64), b: (f64, f64)| -> f64 {
            if b.0 == a.0 {
                a.1
            } else {
                a.1 + (r - a.0) / (b.0 - a.0) * (b.1 - a.1)
            }
        };
        for pair in self.vertices.windows(2) {
            if r <= pair[1].0 {
                return Some(segment(pair[0], pair[1]));
            }
        }
        // beyond the last vertex: extend the final segment
        let n = self.vertices.len();
        Some(segment(self.vertices[n - 2], self.vertices[n - 1]))
    }
}

/// A named grid specification, validated on load.
#[derive(Debug, Clone)]
pub struct ErrorGridSpec {
    name: String,
    domain: (f64, f64),
    curves: Vec<BoundaryCurve>,
}

impl ErrorGridSpec {
    /// The Clarke grid shipped with the crate.
    pub fn clarke() -> ErrorGridSpec {
        Self::parse(include_str!("../../grids/clarke.txt"))
            .expect("bundled clarke grid must validate")
    }

    /// The DTS consensus grid transcription shipped with the crate.
    pub fn dts() -> ErrorGridSpec {
        Self::parse(include_str!("../../grids/dts.txt"))
            .expect("bundled dts grid must validate")
    }

    /// Resolve a config value: a built-in name or a file path.
    pub fn by_name_or_path(which: &str) -> Result<ErrorGridSpec, MetricError> {
        match which {
            "clarke" => Ok(Self::clarke()),
            "dts" => Ok(Self::dts()),
            path => Self::load(Path::new(path)),
        }
    }

    pub fn load(path: &Path) -> Result<ErrorGridSpec, MetricError> {
        let text = std::fs::read_to_string(path).map_err(|e| MetricError::GridSpec {
            name: path.display().to_string(),
            reason: e.to_string(),
        })?;
        Self::parse(&text)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> (f64, f64) {
        self.domain
    }

    /// Parse and validate the plain-text format: one `curve side I|O
    /// r:p r:p ...` line per boundary, plus `grid <name>` and
    /// `domain <lo> <hi>` headers. `#` starts a comment.
    pub fn parse(text: &str) -> Result<ErrorGridSpec, MetricError> {
        let mut name = String::new();
        let mut domain = (0.0, 600.0);
        let mut curves = Vec::new();
        let fail = |name: &str, reason: String| MetricError::GridSpec {
            name: name.to_string(),
            reason,
        };
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("grid") => {
                    name = parts
                        .next()
                        .ok_or_else(|| fail(&name, format!("line {}: grid needs a name", lineno + 1)))?
                        .to_string();
                }
                Some("domain") => {
                    let lo: f64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| fail(&name, format!("line {}: bad domain", lineno + 1)))?;
                    let hi: f64 = parts
                        .next()
                        .and_then(|v| v.parse().ok())
                        .ok_or_else(|| fail(&name, format!("line {}: bad domain", lineno + 1)))?;
                    domain = (lo, hi);
                }
                Some("curve") => {
                    let side = match parts.next() {
                        Some("upper") => Side::Upper,
                        Some("lower") => Side::Lower,
                        other => {
                            return Err(fail(
                                &name,
                                format!("line {}: bad side {:?}", lineno + 1, other),
                            ))
                        }
                    };
                    let label = parts
                        .next()
                        .ok_or_else(|| fail(&name, format!("line {}: missing zone pair", lineno + 1)))?;
                    let (inner, outer) = parse_zone_pair(label).ok_or_else(|| {
                        fail(&name, format!("line {}: bad zone pair `{label}`", lineno + 1))
                    })?;
                    let mut vertices = Vec::new();
                    for v in parts {
                        let (r, p) = v.split_once(':').ok_or_else(|| {
                            fail(&name, format!("line {}: bad vertex `{v}`", lineno + 1))
                        })?;
                        let r: f64 = r.parse().map_err(|_| {
                            fail(&name, format!("line {}: bad vertex `{v}`", lineno + 1))
                        })?;
                        let p: f64 = p.parse().map_err(|_| {
                            fail(&name, format!("line {}: bad vertex `{v}`", lineno + 1))
                        })?;
                        vertices.push((r, p));
                    }
                    if vertices.len() < 2 {
                        return Err(fail(
                            &name,
                            format!("line {}: a curve needs at least two vertices", lineno + 1),
                        ));
                    }
                    curves.push(BoundaryCurve {
                        side,
                        inner,
                        outer,
                        vertices,
                    });
                }
                Some(other) => {
                    return Err(fail(
                        &name,
                        format!("line {}: unknown directive `{other}`", lineno + 1),
                    ))
                }
                None => unreachable!(),
            }
        }
        if name.is_empty() {
            return Err(fail("<unnamed>", "missing `grid <name>` header".into()));
        }
        if curves.is_empty() {
            return Err(fail(&name, "no boundary curves".into()));
        }
        let spec = ErrorGridSpec {
            name,
            domain,
            curves,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Structural checks plus a sampled partition audit: at every sampled
    /// reference the applicable curves on each side must chain outward
    /// from zone A with monotone boundaries, and the A band must bracket
    /// the diagonal.
    fn validate(&self) -> Result<(), MetricError> {
        let fail = |reason: String| MetricError::GridSpec {
            name: self.name.clone(),
            reason,
        };
        for c in &self.curves {
            if !c
                .vertices
                .iter()
                .all(|(r, p)| r.is_finite() && p.is_finite())
            {
                return Err(fail("non-finite vertex".into()));
            }
            if c.vertices.windows(2).any(|w| w[1].0 <= w[0].0) {
                return Err(fail(format!(
                    "curve {}|{} vertices must have strictly increasing reference",
                    c.inner.label(),
                    c.outer.label()
                )));
            }
            if c.inner.ordinal() >= c.outer.ordinal() {
                return Err(fail(format!(
                    "curve {}|{} must point outward to higher risk",
                    c.inner.label(),
                    c.outer.label()
                )));
            }
        }
        // Sample references at cell midpoints to stay off corner seams.
        let steps = 1200;
        let width = (self.domain.1 - self.domain.0) / steps as f64;
        for k in 0..steps {
            let r = self.domain.0 + (k as f64 + 0.5) * width;
            for side in [Side::Upper, Side::Lower] {
                let mut active: Vec<(&BoundaryCurve, f64)> = self
                    .curves
                    .iter()
                    .filter(|c| c.side == side)
                    .filter_map(|c| c.eval(r, self.domain).map(|f| (c, f)))
                    .collect();
                match side {
                    Side::Upper => active.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap()),
                    Side::Lower => active.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap()),
                }
                let mut expected_inner = RiskZone::A;
                for (c, f) in &active {
                    if c.inner != expected_inner {
                        return Err(fail(format!(
                            "at reference {r:.1} the {}-side chain breaks: curve {}|{} \
                             follows zone {}",
                            if side == Side::Upper { "upper" } else { "lower" },
                            c.inner.label(),
                            c.outer.label(),
                            expected_inner.label()
                        )));
                    }
                    let diagonal_ok = match side {
                        Side::Upper => *f >= r,
                        Side::Lower => *f <= r,
                    };
                    if expected_inner == RiskZone::A && !diagonal_ok {
                        return Err(fail(format!(
                            "at reference {r:.1} the A band does not contain the diagonal"
                        )));
                    }
                    expected_inner = c.outer;
                }
            }
        }
        Ok(())
    }

    /// Zone of one (reference, predicted) pair. Boundary ties resolve to
    /// the lower-risk zone.
    pub fn classify(&self, reference: f64, predicted: f64) -> Result<RiskZone, MetricError> {
        if !(reference > 0.0 && predicted > 0.0) || !reference.is_finite() || !predicted.is_finite()
        {
            return Err(MetricError::Domain(format!(
                "grid points need positive finite coordinates, got ({reference}, {predicted})"
            )));
        }
        let mut zone = RiskZone::A;
        for c in &self.curves {
            if let Some(boundary) = c.eval(reference, self.domain) {
                let beyond = match c.side {
                    Side::Upper => predicted > boundary,
                    Side::Lower => predicted < boundary,
                };
                if beyond && c.outer.ordinal() > zone.ordinal() {
                    zone = c.outer;
                }
            }
        }
        Ok(zone)
    }

    pub fn classify_all(
        &self,
        reference: &[f64],
        predicted: &[f64],
    ) -> Result<Vec<RiskZone>, MetricError> {
        if reference.len() != predicted.len() {
            return Err(MetricError::Domain(format!(
                "length mismatch: {} references vs {} predictions",
                reference.len(),
                predicted.len()
            )));
        }
        reference
            .iter()
            .zip(predicted)
            .map(|(&r, &p)| self.classify(r, p))
            .collect()
    }
}

fn parse_zone_pair(label: &str) -> Option<(RiskZone, RiskZone)> {
    let (a, b) = label.split_once('|')?;
    if a.len() != 1 || b.len() != 1 {
        return None;
    }
    Some((
        RiskZone::parse(a.chars().next()?)?,
        RiskZone::parse(b.chars().next()?)?,
    ))
}

/// Percentage of points classified into zone A.
pub fn zone_a_fraction(zones: &[RiskZone]) -> Result<f64, MetricError> {
    if zones.is_empty() {
        return Err(MetricError::Empty("zone_a_fraction"));
    }
    let a = zones.iter().filter(|z| **z == RiskZone::A).count();
    Ok(100.0 * a as f64 / zones.len() as f64)
}
