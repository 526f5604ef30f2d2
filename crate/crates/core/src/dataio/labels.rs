//! Polygon label files.
//!
//! Accepted layouts: a top-level object with `features` as a list, or the
//! xBD layout with `features.xy` as the list. Each feature gives its
//! geometry as a WKT string (`wkt`, or `geometry` when it is a string) or
//! as nested coordinate arrays (`geometry.coordinates` or `coordinates`).
//! The subtype is read from `properties.subtype`.

use serde_json::Value;

use crate::error::{Error, Result};

/// Damage subtype of a building.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Subtype {
    NoDamage,
    MinorDamage,
    MajorDamage,
    Destroyed,
    Unclassified,
}

impl Subtype {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "no-damage" => Subtype::NoDamage,
            "minor-damage" => Subtype::MinorDamage,
            "major-damage" => Subtype::MajorDamage,
            "destroyed" => Subtype::Destroyed,
            "un-classified" => Subtype::Unclassified,
            _ => return None,
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subtype::NoDamage => "no-damage",
            Subtype::MinorDamage => "minor-damage",
            Subtype::MajorDamage => "major-damage",
            Subtype::Destroyed => "destroyed",
            Subtype::Unclassified => "un-classified",
        }
    }

    /// Damage mask value. Unclassified buildings count as undamaged.
    pub fn level(self) -> u8 {
        match self {
            Subtype::NoDamage | Subtype::Unclassified => 1,
            Subtype::MinorDamage => 2,
            Subtype::MajorDamage => 3,
            Subtype::Destroyed => 4,
        }
    }

    pub fn from_level(level: u8) -> Option<Self> {
        Some(match level {
            1 => Subtype::NoDamage,
            2 => Subtype::MinorDamage,
            3 => Subtype::MajorDamage,
            4 => Subtype::Destroyed,
            _ => return None,
        })
    }
}

pub type Point = (f64, f64);

/// One annotated building in pixel coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct BuildingPolygon {
    /// Outer ring, closure implicit.
    pub ring: Vec<Point>,
    /// Interior rings; filled by the even-odd rule together with `ring`.
    pub holes: Vec<Vec<Point>>,
    pub subtype: Subtype,
}

impl BuildingPolygon {
    pub fn new(ring: Vec<Point>, subtype: Subtype) -> Self {
        BuildingPolygon {
            ring,
            holes: Vec::new(),
            subtype,
        }
    }

    pub fn rings(&self) -> impl Iterator<Item = &[Point]> {
        std::iter::once(self.ring.as_slice()).chain(self.holes.iter().map(Vec::as_slice))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let shift = |r: &Vec<Point>| r.iter().map(|&(x, y)| (x + dx, y + dy)).collect();
        BuildingPolygon {
            ring: shift(&self.ring),
            holes: self.holes.iter().map(shift).collect(),
            subtype: self.subtype,
        }
    }
}

fn close_ring(mut ring: Vec<Point>, index: usize) -> Result<Vec<Point>> {
    if ring.len() > 1 && ring.first() == ring.last() {
        ring.pop();
    }
    if ring.len() < 3 {
        return Err(Error::Parse {
            index,
            message: format!("ring has {} distinct vertices, need at least 3", ring.len()),
        });
    }
    if ring.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Parse {
            index,
            message: "non-finite vertex".into(),
        });
    }
    Ok(ring)
}

/// Parses `POLYGON ((x y, ...), (x y, ...))` into rings.
pub fn parse_wkt(text: &str, index: usize) -> Result<Vec<Vec<Point>>> {
    let err = |m: &str| Error::Parse {
        index,
        message: format!("{m} in WKT {:?}", text.chars().take(60).collect::<String>()),
    };
    let t = text.trim();
    let body = t
        .get(..7)
        .filter(|p| p.eq_ignore_ascii_case("POLYGON"))
        .map(|_| t[7..].trim())
        .ok_or_else(|| err("expected POLYGON"))?;
    let inner = body
        .strip_prefix('(')
        .and_then(|b| b.strip_suffix(')'))
        .ok_or_else(|| err("unbalanced parentheses"))?;
    let mut rings = Vec::new();
    let mut rest = inner.trim();
    while !rest.is_empty() {
        let open = rest.strip_prefix('(').ok_or_else(|| err("expected '('"))?;
        let close = open.find(')').ok_or_else(|| err("unterminated ring"))?;
        let mut ring = Vec::new();
        for pair in open[..close].split(',') {
            let mut nums = pair.split_whitespace().map(str::parse::<f64>);
            match (nums.next(), nums.next(), nums.next()) {
                (Some(Ok(x)), Some(Ok(y)), None) => ring.push((x, y)),
                _ => return Err(err(&format!("bad vertex {:?}", pair.trim()))),
            }
        }
        rings.push(close_ring(ring, index)?);
        rest = open[close + 1..].trim_start();
        if let Some(r) = rest.strip_prefix(',') {
            rest = r.trim_start();
        } else if !rest.is_empty() {
            return Err(err("expected ',' between rings"));
        }
    }
    if rings.is_empty() {
        return Err(err("no rings"));
    }
    Ok(rings)
}

fn array_rings(v: &Value, index: usize) -> Result<Vec<Vec<Point>>> {
    let err = |m: &str| Error::Parse {
        index,
        message: m.to_string(),
    };
    let arr = v.as_array().ok_or_else(|| err("coordinates must be an array"))?;
    let as_point = |p: &Value| -> Option<Point> {
        let p = p.as_array()?;
        match p.as_slice() {
            [x, y] => Some((x.as_f64()?, y.as_f64()?)),
            _ => None,
        }
    };
    // A bare ring `[[x, y], ...]` or a list of rings `[[[x, y], ...], ...]`.
    let nested = arr.first().and_then(|f| f.as_array()).and_then(|f| f.first()).is_some_and(Value::is_array);
    let ring_values: Vec<&Value> = if nested { arr.iter().collect() } else { vec![v] };
    let mut rings = Vec::new();
    for r in ring_values {
        let pts = r
            .as_array()
            .ok_or_else(|| err("ring must be an array"))?
            .iter()
            .map(|p| as_point(p).ok_or_else(|| err("vertex must be [x, y]")))
            .collect::<Result<Vec<_>>>()?;
        rings.push(close_ring(pts, index)?);
    }
    if rings.is_empty() {
        return Err(err("no rings"));
    }
    Ok(rings)
}

fn feature_rings(f: &Value, index: usize) -> Result<Vec<Vec<Point>>> {
    if let Some(w) = f.get("wkt").and_then(Value::as_str) {
        return parse_wkt(w, index);
    }
    match f.get("geometry") {
        Some(Value::String(w)) => return parse_wkt(w, index),
        Some(g @ Value::Object(_)) => {
            if let Some(c) = g.get("coordinates") {
                return array_rings(c, index);
            }
        }
        _ => {}
    }
    if let Some(c) = f.get("coordinates") {
        return array_rings(c, index);
    }
    Err(Error::Parse {
        index,
        message: "feature has no geometry".into(),
    })
}

fn feature_subtype(f: &Value, index: usize) -> Result<Subtype> {
    match f.get("properties").and_then(|p| p.get("subtype")) {
        None | Some(Value::Null) => Ok(Subtype::NoDamage),
        Some(Value::String(s)) => Subtype::parse(s).ok_or_else(|| Error::Parse {
            index,
            message: format!("unknown subtype {s:?}"),
        }),
        Some(other) => Err(Error::Parse {
            index,
            message: format!("subtype must be a string, got {other}"),
        }),
    }
}

/// Parses a label document into building polygons in file order.
pub fn parse_labels(text: &[u8]) -> Result<Vec<BuildingPolygon>> {
    let doc: Value = serde_json::from_slice(text).map_err(|e| Error::Document(e.to_string()))?;
    let features = match doc.get("features") {
        Some(Value::Array(a)) => a,
        Some(Value::Object(o)) => match o.get("xy") {
            Some(Value::Array(a)) => a,
            _ => return Err(Error::Document("features object has no `xy` list".into())),
        },
        _ => return Err(Error::Document("missing `features` list".into())),
    };
    features
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let mut rings = feature_rings(f, i)?.into_iter();
            let ring = rings.next().expect("at least one ring");
            Ok(BuildingPolygon {
                ring,
                holes: rings.collect(),
                subtype: feature_subtype(f, i)?,
            })
        })
        .collect()
}

/// Serializes polygons as a label document with WKT geometry.
pub fn labels_to_json(polys: &[BuildingPolygon]) -> String {
    let ring_wkt = |r: &[Point]| {
        let mut pts: Vec<String> = r.iter().map(|(x, y)| format!("{x} {y}")).collect();
        if let Some(first) = pts.first().cloned() {
            pts.push(first);
        }
        format!("({})", pts.join(", "))
    };
    let features: Vec<Value> = polys
        .iter()
        .map(|p| {
            let rings: Vec<String> = p.rings().map(ring_wkt).collect();
            serde_json::json!({
                "properties": { "feature_type": "building", "subtype": p.subtype.as_str() },
                "wkt": format!("POLYGON ({})", rings.join(", ")),
            })
        })
        .collect();
    serde_json::to_string_pretty(&serde_json::json!({ "features": features })).expect("json")
}
