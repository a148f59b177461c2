//! Residential and educational infrastructure files.
//!
//! Canonical format is UTF-8 CSV with a header row:
//!
//! * buildings: `id,building_type,dwelling_units,lat,lon`
//! * schools: `id,name,kind,lat,lon,g1,g2,...,g13`
//!
//! Files ending in `.geojson` (or `.json`) are read as a FeatureCollection of
//! Point features whose properties carry the same fields; coordinates come
//! from the geometry as `[lon, lat]`. Line numbers in errors are 1-based file
//! lines for CSV (header is line 1) and 1-based feature positions for GeoJSON.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::geo::GeoPoint;

pub const GRADES: std::ops::RangeInclusive<u8> = 1..=13;

const BUILDING_HEADER: [&str; 5] = ["id", "building_type", "dwelling_units", "lat", "lon"];

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: unknown building type {value:?}")]
    UnknownBuildingType { line: u64, value: String },
    #[error("line {line}: missing coordinate")]
    MissingCoordinate { line: u64 },
    #[error("line {line}: coordinate out of range")]
    InvalidCoordinate { line: u64 },
    #[error("line {line}: grade {grade} has a negative pupil count")]
    NegativePupilCount { line: u64, grade: u8 },
    #[error("line {line}: {kind} school has pupils in grade {grade}")]
    GradeKindMismatch { line: u64, kind: SchoolKind, grade: u8 },
    #[error("line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
}

impl IngestError {
    fn malformed(line: u64, reason: impl Into<String>) -> Self {
        IngestError::MalformedRow {
            line,
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildingType {
    StudioApartment,
    DetachedHouse,
    RowHouse,
    ApartmentComplex,
    Cabin,
    Garage,
}

impl BuildingType {
    pub const ALL: [BuildingType; 6] = [
        BuildingType::StudioApartment,
        BuildingType::DetachedHouse,
        BuildingType::RowHouse,
        BuildingType::ApartmentComplex,
        BuildingType::Cabin,
        BuildingType::Garage,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            BuildingType::StudioApartment => "studio_apartment",
            BuildingType::DetachedHouse => "detached_house",
            BuildingType::RowHouse => "row_house",
            BuildingType::ApartmentComplex => "apartment_complex",
            BuildingType::Cabin => "cabin",
            BuildingType::Garage => "garage",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.as_str() == s)
    }

    pub fn is_residential(self) -> bool {
        !matches!(self, BuildingType::Cabin | BuildingType::Garage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: u64,
    pub building_type: BuildingType,
    /// Unit count as recorded in the source; `None` when the field was empty.
    pub recorded_units: Option<u32>,
    pub location: GeoPoint,
}

/// Cabins and garages never count as homes.
pub fn residential_filter(building: &Building) -> bool {
    building.building_type.is_residential()
}

/// Effective number of homes in `building`. Residential buildings with no
/// (or zero) recorded units count as a single dwelling.
pub fn dwelling_units(building: &Building) -> u32 {
    if !residential_filter(building) {
        return 0;
    }
    match building.recorded_units {
        Some(n) if n > 0 => n,
        _ => 1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchoolKind {
    Compulsory,
    HighSchool,
}

impl SchoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SchoolKind::Compulsory => "compulsory",
            SchoolKind::HighSchool => "high_school",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "compulsory" => Some(SchoolKind::Compulsory),
            "high_school" => Some(SchoolKind::HighSchool),
            _ => None,
        }
    }

    /// Grades this kind of school may enroll.
    pub fn grades(self) -> std::ops::RangeInclusive<u8> {
        match self {
            SchoolKind::Compulsory => 1..=10,
            SchoolKind::HighSchool => 11..=13,
        }
    }
}

impl std::fmt::Display for SchoolKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct School {
    pub id: u64,
    pub name: String,
    pub kind: SchoolKind,
    pub location: GeoPoint,
    /// Pupils in grades 1 through 13, index 0 is grade 1.
    pub pupils_per_grade: [u32; 13],
}

impl School {
    pub fn pupils(&self, grade: u8) -> u32 {
        if GRADES.contains(&grade) {
            self.pupils_per_grade[usize::from(grade - 1)]
        } else {
            0
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.display().to_string(),
        source,
    }
}

fn is_geojson(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("geojson" | "json")
    )
}

fn read_to_string(path: &Path) -> Result<String, IngestError> {
    let mut s = String::new();
    File::open(path)
        .and_then(|mut f| f.read_to_string(&mut s))
        .map_err(io_err(path))?;
    Ok(s)
}

pub fn load_buildings(path: impl AsRef<Path>) -> Result<Vec<Building>, IngestError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    if is_geojson(path) {
        parse_buildings_geojson(&text)
    } else {
        parse_buildings_csv(&text)
    }
}

pub fn load_schools(path: impl AsRef<Path>) -> Result<Vec<School>, IngestError> {
    let path = path.as_ref();
    let text = read_to_string(path)?;
    if is_geojson(path) {
        parse_schools_geojson(&text)
    } else {
        parse_schools_csv(&text)
    }
}

fn csv_records(text: &str, expected: &[String]) -> Result<Vec<(u64, csv::StringRecord)>, IngestError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| IngestError::malformed(1, e.to_string()))?
        .clone();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(IngestError::malformed(
            1,
            format!("expected header {}", expected.join(",")),
        ));
    }
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            IngestError::malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        out.push((line, record));
    }
    Ok(out)
}

fn parse_id(line: u64, raw: &str) -> Result<u64, IngestError> {
    raw.parse()
        .map_err(|_| IngestError::malformed(line, format!("invalid id {raw:?}")))
}

fn parse_location(line: u64, lat: &str, lon: &str) -> Result<GeoPoint, IngestError> {
    if lat.is_empty() || lon.is_empty() {
        return Err(IngestError::MissingCoordinate { line });
    }
    let lat: f64 = lat
        .parse()
        .map_err(|_| IngestError::malformed(line, format!("invalid latitude {lat:?}")))?;
    let lon: f64 = lon
        .parse()
        .map_err(|_| IngestError::malformed(line, format!("invalid longitude {lon:?}")))?;
    GeoPoint::new(lat, lon).map_err(|_| IngestError::InvalidCoordinate { line })
}

fn make_building(
    line: u64,
    id: u64,
    building_type: &str,
    units: Option<i64>,
    location: GeoPoint,
) -> Result<Building, IngestError> {
    let building_type = BuildingType::parse(building_type).ok_or_else(|| IngestError::UnknownBuildingType {
        line,
        value: building_type.to_owned(),
    })?;
    let recorded_units = match units {
        None => None,
        Some(n) if n < 0 => {
            return Err(IngestError::malformed(line, format!("negative dwelling_units {n}")));
        }
        Some(n) => Some(u32::try_from(n).map_err(|_| IngestError::malformed(line, "dwelling_units too large"))?),
    };
    if !building_type.is_residential() && recorded_units.is_some_and(|n| n > 0) {
        return Err(IngestError::malformed(
            line,
            format!("{} cannot hold dwelling units", building_type.as_str()),
        ));
    }
    Ok(Building {
        id,
        building_type,
        recorded_units,
        location,
    })
}

pub fn parse_buildings_csv(text: &str) -> Result<Vec<Building>, IngestError> {
    let header: Vec<String> = BUILDING_HEADER.iter().map(|s| s.to_string()).collect();
    csv_records(text, &header)?
        .into_iter()
        .map(|(line, r)| {
            if r.len() != 5 {
                return Err(IngestError::malformed(
                    line,
                    format!("expected 5 fields, got {}", r.len()),
                ));
            }
            let id = parse_id(line, &r[0])?;
            let location = parse_location(line, &r[3], &r[4])?;
            let units = if r[2].is_empty() {
                None
            } else {
                Some(
                    r[2].parse::<i64>()
                        .map_err(|_| IngestError::malformed(line, format!("invalid dwelling_units {:?}", &r[2])))?,
                )
            };
            make_building(line, id, &r[1], units, location)
        })
        .collect()
}

fn school_header() -> Vec<String> {
    ["id", "name", "kind", "lat", "lon"]
        .into_iter()
        .map(String::from)
        .chain(GRADES.map(|g| format!("g{g}")))
        .collect()
}

fn make_school(
    line: u64,
    id: u64,
    name: &str,
    kind: &str,
    location: GeoPoint,
    counts: &[i64],
) -> Result<School, IngestError> {
    if name.trim().is_empty() {
        return Err(IngestError::malformed(line, "empty school name"));
    }
    let kind =
        SchoolKind::parse(kind).ok_or_else(|| IngestError::malformed(line, format!("unknown school kind {kind:?}")))?;
    let mut pupils = [0u32; 13];
    for (grade, (&n, slot)) in GRADES.zip(counts.iter().zip(pupils.iter_mut())) {
        if n < 0 {
            return Err(IngestError::NegativePupilCount { line, grade });
        }
        *slot = u32::try_from(n).map_err(|_| IngestError::malformed(line, "pupil count too large"))?;
    }
    let mut grades = GRADES;
    if let Some(grade) = grades.find(|g| !kind.grades().contains(g) && pupils[usize::from(g - 1)] > 0) {
        return Err(IngestError::GradeKindMismatch { line, kind, grade });
    }
    Ok(School {
        id,
        name: name.to_owned(),
        kind,
        location,
        pupils_per_grade: pupils,
    })
}

pub fn parse_schools_csv(text: &str) -> Result<Vec<School>, IngestError> {
    csv_records(text, &school_header())?
        .into_iter()
        .map(|(line, r)| {
            if r.len() != 18 {
                return Err(IngestError::malformed(
                    line,
                    format!("expected 18 fields, got {}", r.len()),
                ));
            }
            let id = parse_id(line, &r[0])?;
            let location = parse_location(line, &r[3], &r[4])?;
            let counts = (5..18)
                .map(|i| {
                    r[i].parse::<i64>().map_err(|_| {
                        IngestError::malformed(line, format!("invalid pupil count {:?} in g{}", &r[i], i - 4))
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            make_school(line, id, &r[1], &r[2], location, &counts)
        })
        .collect()
}

fn geojson_features(text: &str) -> Result<Vec<Value>, IngestError> {
    let doc: Value = serde_json::from_str(text).map_err(|e| IngestError::malformed(e.line() as u64, e.to_string()))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(IngestError::malformed(0, "expected a FeatureCollection"));
    }
    doc.get("features")
        .and_then(Value::as_array)
        .cloned()
        .ok_or_else(|| IngestError::malformed(0, "missing features array"))
}

fn feature_location(line: u64, feature: &Value) -> Result<GeoPoint, IngestError> {
    let geometry = feature.get("geometry").filter(|g| !g.is_null());
    let Some(geometry) = geometry else {
        return Err(IngestError::MissingCoordinate { line });
    };
    if geometry.get("type").and_then(Value::as_str) != Some("Point") {
        return Err(IngestError::malformed(line, "geometry must be a Point"));
    }
    let coords = geometry
        .get("coordinates")
        .and_then(Value::as_array)
        .ok_or(IngestError::MissingCoordinate { line })?;
    match (
        coords.first().and_then(Value::as_f64),
        coords.get(1).and_then(Value::as_f64),
    ) {
        (Some(lon), Some(lat)) => GeoPoint::new(lat, lon).map_err(|_| IngestError::InvalidCoordinate { line }),
        _ => Err(IngestError::MissingCoordinate { line }),
    }
}

fn prop<'a>(line: u64, props: &'a Value, key: &str) -> Result<&'a Value, IngestError> {
    props
        .get(key)
        .ok_or_else(|| IngestError::malformed(line, format!("missing property {key}")))
}

fn prop_u64(line: u64, props: &Value, key: &str) -> Result<u64, IngestError> {
    prop(line, props, key)?
        .as_u64()
        .ok_or_else(|| IngestError::malformed(line, format!("property {key} must be a non-negative integer")))
}

fn prop_str<'a>(line: u64, props: &'a Value, key: &str) -> Result<&'a str, IngestError> {
    prop(line, props, key)?
        .as_str()
        .ok_or_else(|| IngestError::malformed(line, format!("property {key} must be a string")))
}

pub fn parse_buildings_geojson(text: &str) -> Result<Vec<Building>, IngestError> {
    geojson_features(text)?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let line = i as u64 + 1;
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let id = prop_u64(line, &props, "id")?;
            let building_type = prop_str(line, &props, "building_type")?;
            let units = match props.get("dwelling_units") {
                None | Some(Value::Null) => None,
                Some(v) => Some(
                    v.as_i64()
                        .ok_or_else(|| IngestError::malformed(line, "property dwelling_units must be an integer"))?,
                ),
            };
            // Building type is checked before the geometry, as in the CSV reader.
            BuildingType::parse(building_type).ok_or_else(|| IngestError::UnknownBuildingType {
                line,
                value: building_type.to_owned(),
            })?;
            let location = feature_location(line, f)?;
            make_building(line, id, building_type, units, location)
        })
        .collect()
}

pub fn parse_schools_geojson(text: &str) -> Result<Vec<School>, IngestError> {
    geojson_features(text)?
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let line = i as u64 + 1;
            let props = f.get("properties").cloned().unwrap_or(Value::Null);
            let id = prop_u64(line, &props, "id")?;
            let name = prop_str(line, &props, "name")?;
            let kind = prop_str(line, &props, "kind")?;
            let location = feature_location(line, f)?;
            let counts = GRADES
                .map(|g| match props.get(format!("g{g}")) {
                    None | Some(Value::Null) => Ok(0),
                    Some(v) => v
                        .as_i64()
                        .ok_or_else(|| IngestError::malformed(line, format!("property g{g} must be an integer"))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            make_school(line, id, name, kind, location, &counts)
        })
        .collect()
}

pub fn write_buildings_csv<W: Write>(out: W, buildings: &[Building]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(BUILDING_HEADER)?;
    for b in buildings {
        w.write_record([
            b.id.to_string(),
            b.building_type.as_str().to_owned(),
            b.recorded_units.map(|n| n.to_string()).unwrap_or_default(),
            b.location.lat().to_string(),
            b.location.lon().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_schools_csv<W: Write>(out: W, schools: &[School]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(school_header())?;
    for s in schools {
        let mut row = vec![
            s.id.to_string(),
            s.name.clone(),
            s.kind.as_str().to_owned(),
            s.location.lat().to_string(),
            s.location.lon().to_string(),
        ];
        row.extend(s.pupils_per_grade.iter().map(u32::to_string));
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Ids that occur more than once, for callers that need unique keys.
pub fn duplicate_ids(ids: impl IntoIterator<Item = u64>) -> Vec<u64> {
    let mut seen = BTreeSet::new();
    let mut dups = BTreeSet::new();
    for id in ids {
        if !seen.insert(id) {
            dups.insert(id);
        }
    }
    dups.into_iter().collect()
}
