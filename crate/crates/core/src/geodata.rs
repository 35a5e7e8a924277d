//! Parcel geometries, crop metadata, application events and observation
//! windows.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::grid::GridSpec;

/// Default half-width of the observation window, in days.
pub const WINDOW_DAYS: i64 = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CropCategory {
    Cereals,
    Cotton,
    IndustrialCrops,
    LeguminousCrops,
}

impl CropCategory {
    /// One-hot order.
    pub const ALL: [CropCategory; 4] = [
        CropCategory::Cereals,
        CropCategory::Cotton,
        CropCategory::IndustrialCrops,
        CropCategory::LeguminousCrops,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CropCategory::Cereals => "Cereals",
            CropCategory::Cotton => "Cotton",
            CropCategory::IndustrialCrops => "IndustrialCrops",
            CropCategory::LeguminousCrops => "LeguminousCrops",
        }
    }

    /// Human-facing label used in reports.
    pub fn label(self) -> &'static str {
        match self {
            CropCategory::Cereals => "Cereals",
            CropCategory::Cotton => "Cotton",
            CropCategory::IndustrialCrops => "Industrial Crops",
            CropCategory::LeguminousCrops => "Leguminous Crops",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for CropCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CropCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != '_')
            .flat_map(char::to_lowercase)
            .collect();
        match key.as_str() {
            "cereals" => Ok(CropCategory::Cereals),
            "cotton" => Ok(CropCategory::Cotton),
            "industrialcrops" => Ok(CropCategory::IndustrialCrops),
            "leguminouscrops" => Ok(CropCategory::LeguminousCrops),
            _ => Err(Error::Validation(format!("unknown crop_category {s:?}"))),
        }
    }
}

/// Fixed-order one-hot encoding of the crop category.
pub fn one_hot_crop(category: CropCategory) -> [f64; 4] {
    let mut v = [0.0; 4];
    v[category.index()] = 1.0;
    v
}

/// A closed ring of `[x, y]` vertices (first == last).
pub type Ring = Vec<[f64; 2]>;

/// Polygon as exterior ring followed by any holes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polygon {
    pub rings: Vec<Ring>,
}

impl Polygon {
    pub fn new(rings: Vec<Ring>) -> Self {
        Self { rings }
    }

    /// Axis-aligned rectangle, counter-clockwise.
    pub fn rect(min_x: f64, min_y: f64, max_x: f64, max_y: f64) -> Self {
        Self::new(vec![vec![
            [min_x, min_y],
            [max_x, min_y],
            [max_x, max_y],
            [min_x, max_y],
            [min_x, min_y],
        ]])
    }

    /// Even-odd test over every ring, so holes are excluded.
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let mut inside = false;
        for ring in &self.rings {
            for edge in ring.windows(2) {
                let [xi, yi] = edge[0];
                let [xj, yj] = edge[1];
                if (yi > y) != (yj > y) {
                    // Relative form keeps the test exact under translation for
                    // integer coordinates.
                    let cross = (xj - xi) * (y - yi) / (yj - yi);
                    if x - xi < cross {
                        inside = !inside;
                    }
                }
            }
        }
        inside
    }

    fn validate(&self) -> std::result::Result<(), String> {
        if self.rings.is_empty() {
            return Err("polygon has no rings".into());
        }
        for (i, ring) in self.rings.iter().enumerate() {
            if ring.len() < 4 {
                return Err(format!("ring {i} has {} points, need at least 4", ring.len()));
            }
            if ring.first() != ring.last() {
                return Err(format!("ring {i} is not closed"));
            }
            if ring.iter().flatten().any(|c| !c.is_finite()) {
                return Err(format!("ring {i} has non-finite coordinates"));
            }
        }
        Ok(())
    }
}

/// Parcel footprint; multi-polygons are handled as the union of parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub polygons: Vec<Polygon>,
}

impl Geometry {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        self.polygons.iter().any(|p| p.contains(x, y))
    }

    /// `(min_x, min_y, max_x, max_y)` over every vertex.
    pub fn bbox(&self) -> (f64, f64, f64, f64) {
        let mut b = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
        for [x, y] in self.polygons.iter().flat_map(|p| p.rings.iter().flatten()) {
            b.0 = b.0.min(*x);
            b.1 = b.1.min(*y);
            b.2 = b.2.max(*x);
            b.3 = b.3.max(*y);
        }
        b
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let polygons = self
            .polygons
            .iter()
            .map(|p| {
                Polygon::new(
                    p.rings
                        .iter()
                        .map(|r| r.iter().map(|[x, y]| [x + dx, y + dy]).collect())
                        .collect(),
                )
            })
            .collect();
        Geometry { polygons }
    }

    fn to_geojson(&self) -> Value {
        let rings = |p: &Polygon| -> Value { json!(p.rings) };
        if self.polygons.len() == 1 {
            json!({ "type": "Polygon", "coordinates": rings(&self.polygons[0]) })
        } else {
            let parts: Vec<Value> = self.polygons.iter().map(rings).collect();
            json!({ "type": "MultiPolygon", "coordinates": parts })
        }
    }
}

impl From<Polygon> for Geometry {
    fn from(p: Polygon) -> Self {
        Geometry { polygons: vec![p] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Parcel {
    pub parcel_id: String,
    pub geometry: Geometry,
    pub crop_code: String,
    pub crop_category: CropCategory,
    pub treated: bool,
}

impl Parcel {
    pub fn label(&self) -> u8 {
        u8::from(self.treated)
    }
}

/// Parcels in file order with unique ids.
#[derive(Debug, Clone, Default)]
pub struct ParcelSet {
    parcels: Vec<Parcel>,
    by_id: BTreeMap<String, usize>,
}

impl ParcelSet {
    pub fn new(parcels: Vec<Parcel>) -> Result<Self> {
        let mut by_id = BTreeMap::new();
        for (i, p) in parcels.iter().enumerate() {
            if by_id.insert(p.parcel_id.clone(), i).is_some() {
                return Err(Error::DuplicateParcel(p.parcel_id.clone()));
            }
        }
        Ok(Self { parcels, by_id })
    }

    pub fn len(&self) -> usize {
        self.parcels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parcels.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parcel> {
        self.parcels.iter()
    }

    pub fn get(&self, id: &str) -> Option<&Parcel> {
        self.by_id.get(id).map(|&i| &self.parcels[i])
    }

    pub fn treated_count(&self) -> usize {
        self.parcels.iter().filter(|p| p.treated).count()
    }

    /// Parcels ordered by id.
    pub fn sorted(&self) -> impl Iterator<Item = &Parcel> {
        self.by_id.values().map(|&i| &self.parcels[i])
    }

    pub fn as_slice(&self) -> &[Parcel] {
        &self.parcels
    }
}

fn parse_ring(v: &Value) -> Option<Ring> {
    v.as_array()?
        .iter()
        .map(|pt| {
            let c = pt.as_array()?;
            if c.len() < 2 {
                return None;
            }
            Some([c[0].as_f64()?, c[1].as_f64()?])
        })
        .collect()
}

fn parse_polygon(v: &Value) -> Option<Polygon> {
    let rings = v.as_array()?.iter().map(parse_ring).collect::<Option<Vec<_>>>()?;
    Some(Polygon::new(rings))
}

fn parse_geometry(v: &Value) -> std::result::Result<Geometry, String> {
    let kind = v.get("type").and_then(Value::as_str).ok_or("geometry has no type")?;
    let coords = v.get("coordinates").ok_or("geometry has no coordinates")?;
    let polygons = match kind {
        "Polygon" => vec![parse_polygon(coords).ok_or("malformed Polygon coordinates")?],
        "MultiPolygon" => coords
            .as_array()
            .ok_or("malformed MultiPolygon coordinates")?
            .iter()
            .map(|p| parse_polygon(p).ok_or("malformed MultiPolygon part"))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        other => return Err(format!("unsupported geometry type {other}")),
    };
    if polygons.is_empty() {
        return Err("geometry has no polygons".into());
    }
    for p in &polygons {
        p.validate()?;
    }
    Ok(Geometry { polygons })
}

fn property_string(props: &Value, key: &str) -> Option<String> {
    match props.get(key)? {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

fn property_flag(props: &Value, key: &str) -> Option<bool> {
    match props.get(key)? {
        Value::Bool(b) => Some(*b),
        Value::Number(n) => match n.as_u64() {
            Some(0) => Some(false),
            Some(1) => Some(true),
            _ => None,
        },
        _ => None,
    }
}

/// Parse a GeoJSON FeatureCollection of parcels.
pub fn parse_parcels(text: &str) -> Result<ParcelSet> {
    let doc: Value = serde_json::from_str(text).map_err(|e| Error::parse("parcel file", e))?;
    if doc.get("type").and_then(Value::as_str) != Some("FeatureCollection") {
        return Err(Error::parse("parcel file", "not a FeatureCollection"));
    }
    let features = doc
        .get("features")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::parse("parcel file", "missing features array"))?;

    let mut parcels = Vec::with_capacity(features.len());
    for (i, feature) in features.iter().enumerate() {
        let props = feature.get("properties").cloned().unwrap_or(Value::Null);
        let name = property_string(&props, "parcel_id").unwrap_or_else(|| format!("#{i}"));
        let context = format!("feature {name}");
        let parcel_id = property_string(&props, "parcel_id")
            .ok_or_else(|| Error::parse(&context, "missing parcel_id"))?;
        let geometry = feature
            .get("geometry")
            .ok_or_else(|| Error::parse(&context, "missing geometry"))
            .and_then(|g| parse_geometry(g).map_err(|m| Error::parse(&context, m)))?;
        let crop_code = property_string(&props, "crop_code")
            .ok_or_else(|| Error::parse(&context, "missing crop_code"))?;
        let crop_category = props
            .get("crop_category")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::parse(&context, "missing crop_category"))?
            .parse::<CropCategory>()
            .map_err(|e| Error::Validation(format!("{context}: {e}")))?;
        let treated = property_flag(&props, "treated")
            .ok_or_else(|| Error::parse(&context, "treated must be 0/1 or boolean"))?;
        parcels.push(Parcel {
            parcel_id,
            geometry,
            crop_code,
            crop_category,
            treated,
        });
    }
    ParcelSet::new(parcels)
}

pub fn load_parcels(path: impl AsRef<Path>) -> Result<ParcelSet> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parcels(&text)
}

pub fn parcels_to_geojson(parcels: &[Parcel]) -> Value {
    let features: Vec<Value> = parcels
        .iter()
        .map(|p| {
            json!({
                "type": "Feature",
                "properties": {
                    "parcel_id": p.parcel_id,
                    "crop_code": p.crop_code,
                    "crop_category": p.crop_category.as_str(),
                    "treated": p.label(),
                },
                "geometry": p.geometry.to_geojson(),
            })
        })
        .collect();
    json!({ "type": "FeatureCollection", "features": features })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplicationEvent {
    pub parcel_id: String,
    pub application_date: NaiveDate,
    pub quantity: f64,
}

/// Events grouped by parcel, each group sorted by date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EventSet {
    by_parcel: BTreeMap<String, Vec<ApplicationEvent>>,
}

impl EventSet {
    pub fn new(events: impl IntoIterator<Item = ApplicationEvent>) -> Result<Self> {
        let mut by_parcel: BTreeMap<String, Vec<ApplicationEvent>> = BTreeMap::new();
        for e in events {
            if !(e.quantity >= 0.0) || !e.quantity.is_finite() {
                return Err(Error::Validation(format!(
                    "event for {} has invalid quantity {}",
                    e.parcel_id, e.quantity
                )));
            }
            by_parcel.entry(e.parcel_id.clone()).or_default().push(e);
        }
        for list in by_parcel.values_mut() {
            list.sort_by_key(|e| e.application_date);
        }
        Ok(Self { by_parcel })
    }

    pub fn for_parcel(&self, parcel_id: &str) -> &[ApplicationEvent] {
        self.by_parcel.get(parcel_id).map_or(&[], Vec::as_slice)
    }

    pub fn latest(&self, parcel_id: &str) -> Option<NaiveDate> {
        self.for_parcel(parcel_id).last().map(|e| e.application_date)
    }

    pub fn len(&self) -> usize {
        self.by_parcel.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.by_parcel.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &ApplicationEvent> {
        self.by_parcel.values().flatten()
    }

    /// Every event must reference a known parcel.
    pub fn validate_against(&self, parcels: &ParcelSet) -> Result<()> {
        match self.by_parcel.keys().find(|id| parcels.get(id).is_none()) {
            Some(id) => Err(Error::Consistency(format!("event references unknown parcel {id:?}"))),
            None => Ok(()),
        }
    }
}

#[derive(Debug, Deserialize)]
struct EventRow {
    parcel_id: String,
    application_date: String,
    quantity: String,
}

pub fn parse_events(reader: impl std::io::Read) -> Result<EventSet> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::parse("event file", e))?.clone();
    let expected = ["parcel_id", "application_date", "quantity"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(Error::parse(
            "event file",
            format!("header must be {}", expected.join(",")),
        ));
    }
    let mut events = Vec::new();
    for (i, row) in rdr.deserialize::<EventRow>().enumerate() {
        let context = format!("event row {}", i + 2);
        let row = row.map_err(|e| Error::parse(&context, e))?;
        let application_date = NaiveDate::parse_from_str(&row.application_date, "%Y-%m-%d")
            .map_err(|e| Error::parse(&context, format!("bad date {:?}: {e}", row.application_date)))?;
        let quantity: f64 = row
            .quantity
            .parse()
            .map_err(|e| Error::parse(&context, format!("bad quantity {:?}: {e}", row.quantity)))?;
        if !(quantity >= 0.0) {
            return Err(Error::Validation(format!("{context}: negative quantity {quantity}")));
        }
        events.push(ApplicationEvent {
            parcel_id: row.parcel_id,
            application_date,
            quantity,
        });
    }
    EventSet::new(events)
}

pub fn load_events(path: impl AsRef<Path>) -> Result<EventSet> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(file)
}

pub fn write_events(path: impl AsRef<Path>, events: &EventSet) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse("event file", e))?;
    w.write_record(["parcel_id", "application_date", "quantity"])
        .map_err(|e| Error::parse("event file", e))?;
    for e in events.iter() {
        w.write_record([
            e.parcel_id.as_str(),
            &e.application_date.format("%Y-%m-%d").to_string(),
            &e.quantity.to_string(),
        ])
        .map_err(|e| Error::parse("event file", e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObservationWindow {
    pub parcel_id: String,
    pub anchor_date: NaiveDate,
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl ObservationWindow {
    pub fn around(parcel_id: impl Into<String>, anchor: NaiveDate, half_days: i64) -> Self {
        Self {
            parcel_id: parcel_id.into(),
            anchor_date: anchor,
            start: anchor - Duration::days(half_days),
            end: anchor + Duration::days(half_days),
        }
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

/// Median treatment anchor per crop category, used as the pseudo-anchor for
/// control parcels.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CategoryMedians(pub BTreeMap<CropCategory, NaiveDate>);

fn median_date(mut dates: Vec<NaiveDate>) -> Option<NaiveDate> {
    if dates.is_empty() {
        return None;
    }
    dates.sort();
    let n = dates.len();
    if n % 2 == 1 {
        return Some(dates[n / 2]);
    }
    // Midpoint of the two central dates, rounded toward the earlier day.
    let a = dates[n / 2 - 1];
    let b = dates[n / 2];
    Some(a + Duration::days((b - a).num_days() / 2))
}

impl CategoryMedians {
    /// Median over the latest application date of each treated parcel.
    /// Categories with no treated parcels fall back to the overall median.
    pub fn compute(parcels: &ParcelSet, events: &EventSet) -> Self {
        let mut per_cat: BTreeMap<CropCategory, Vec<NaiveDate>> = BTreeMap::new();
        let mut all = Vec::new();
        for p in parcels.iter().filter(|p| p.treated) {
            if let Some(d) = events.latest(&p.parcel_id) {
                per_cat.entry(p.crop_category).or_default().push(d);
                all.push(d);
            }
        }
        let overall = median_date(all);
        let mut out = BTreeMap::new();
        for cat in CropCategory::ALL {
            let m = per_cat.remove(&cat).and_then(median_date).or(overall);
            if let Some(m) = m {
                out.insert(cat, m);
            }
        }
        CategoryMedians(out)
    }

    pub fn get(&self, cat: CropCategory) -> Option<NaiveDate> {
        self.0.get(&cat).copied()
    }
}

/// Treated parcels anchor at their latest application; controls at the
/// median anchor of their crop category.
pub fn assign_window(
    parcel: &Parcel,
    events: &EventSet,
    medians: &CategoryMedians,
    half_days: i64,
) -> Result<ObservationWindow> {
    let anchor = if parcel.treated {
        events.latest(&parcel.parcel_id).ok_or_else(|| {
            Error::Consistency(format!(
                "treated parcel {} has no application events",
                parcel.parcel_id
            ))
        })?
    } else {
        medians.get(parcel.crop_category).ok_or_else(|| {
            Error::Consistency(format!(
                "no median treatment date for category {} (control parcel {})",
                parcel.crop_category, parcel.parcel_id
            ))
        })?
    };
    Ok(ObservationWindow::around(&parcel.parcel_id, anchor, half_days))
}

/// Pixel membership bitmap of one parcel on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMask {
    pub spec: GridSpec,
    pub bits: Vec<bool>,
    pub pixel_count: usize,
    /// Row-major indices of the set pixels.
    pixels: Vec<usize>,
}

impl PixelMask {
    pub fn from_bits(spec: GridSpec, bits: Vec<bool>) -> Self {
        assert_eq!(spec.len(), bits.len());
        let pixels: Vec<usize> = bits
            .iter()
            .enumerate()
            .filter_map(|(i, b)| b.then_some(i))
            .collect();
        Self {
            spec,
            bits,
            pixel_count: pixels.len(),
            pixels,
        }
    }

    pub fn pixels(&self) -> &[usize] {
        &self.pixels
    }

    #[inline]
    pub fn is_set(&self, row: usize, col: usize) -> bool {
        self.bits[self.spec.index(row, col)]
    }

    /// Row/column bounds `(row0, col0, row1, col1)` (exclusive end) of set
    /// pixels, or `None` for an empty mask.
    pub fn pixel_bounds(&self) -> Option<(usize, usize, usize, usize)> {
        let mut b: Option<(usize, usize, usize, usize)> = None;
        for row in 0..self.spec.height {
            for col in 0..self.spec.width {
                if self.is_set(row, col) {
                    b = Some(match b {
                        None => (row, col, row + 1, col + 1),
                        Some((r0, c0, r1, c1)) => (r0.min(row), c0.min(col), r1.max(row + 1), c1.max(col + 1)),
                    });
                }
            }
        }
        b
    }
}

/// Mark every pixel whose centre lies inside the parcel footprint.
pub fn rasterize_parcel(parcel: &Parcel, grid: &GridSpec) -> Result<PixelMask> {
    if !(grid.pixel_size > 0.0) {
        return Err(Error::Validation(format!("pixel size must be positive, got {}", grid.pixel_size)));
    }
    let (min_x, min_y, max_x, max_y) = parcel.geometry.bbox();
    let ps = grid.pixel_size;
    // Candidate pixel range from the bbox, clamped to the grid.
    let col0 = ((min_x - grid.origin_x) / ps - 0.5).floor().max(0.0);
    let col1 = ((max_x - grid.origin_x) / ps + 0.5).ceil().min(grid.width as f64);
    let row0 = ((grid.origin_y - max_y) / ps - 0.5).floor().max(0.0);
    let row1 = ((grid.origin_y - min_y) / ps + 0.5).ceil().min(grid.height as f64);

    let mut bits = vec![false; grid.len()];
    if col0 < col1 && row0 < row1 {
        for row in row0 as usize..row1 as usize {
            for col in col0 as usize..col1 as usize {
                let (x, y) = grid.pixel_center(row, col);
                if parcel.geometry.contains(x, y) {
                    bits[grid.index(row, col)] = true;
                }
            }
        }
    }
    let mask = PixelMask::from_bits(*grid, bits);
    if mask.pixel_count == 0 {
        return Err(Error::EmptyMask(parcel.parcel_id.clone()));
    }
    Ok(mask)
}
