use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean earth radius in kilometres.
pub const EARTH_RADIUS_KM: f64 = 6371.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub latitude: f64,
    pub longitude: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<u32>,
}

impl Location {
    pub fn new(latitude: f64, longitude: f64) -> Result<Self> {
        let loc = Location {
            latitude,
            longitude,
            block: None,
        };
        loc.validate()?;
        Ok(loc)
    }

    pub fn with_block(mut self, block: u32) -> Self {
        self.block = Some(block);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !self.latitude.is_finite() || !(-90.0..=90.0).contains(&self.latitude) {
            return Err(Error::Location(format!(
                "latitude {} outside [-90, 90]",
                self.latitude
            )));
        }
        if !self.longitude.is_finite() || !(-180.0..=180.0).contains(&self.longitude) {
            return Err(Error::Location(format!(
                "longitude {} outside [-180, 180]",
                self.longitude
            )));
        }
        Ok(())
    }
}

/// Great-circle distance in kilometres.
pub fn haversine(a: &Location, b: &Location) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlat = lat2 - lat1;
    let dlon = (b.longitude - a.longitude).to_radians();
    let h = (dlat / 2.0).sin().powi(2) + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_KM * h.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `a` to `b`, degrees in `[0, 360)`.
pub fn initial_bearing(a: &Location, b: &Location) -> f64 {
    let (lat1, lat2) = (a.latitude.to_radians(), b.latitude.to_radians());
    let dlon = (b.longitude - a.longitude).to_radians();
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x).to_degrees().rem_euclid(360.0)
}

/// Point reached after travelling `distance_km` from `from` along the great
/// circle with initial bearing `bearing_deg`. Block id is carried over.
pub fn destination(from: &Location, bearing_deg: f64, distance_km: f64) -> Location {
    let delta = distance_km / EARTH_RADIUS_KM;
    let theta = bearing_deg.to_radians();
    let lat1 = from.latitude.to_radians();
    let lon1 = from.longitude.to_radians();
    let lat2 = (lat1.sin() * delta.cos() + lat1.cos() * delta.sin() * theta.cos())
        .clamp(-1.0, 1.0)
        .asin();
    let lon2 = lon1
        + (theta.sin() * delta.sin() * lat1.cos()).atan2(delta.cos() - lat1.sin() * lat2.sin());
    let mut longitude = lon2.to_degrees();
    if !(-180.0..=180.0).contains(&longitude) {
        longitude = (longitude + 540.0).rem_euclid(360.0) - 180.0;
    }
    Location {
        latitude: lat2.to_degrees(),
        longitude,
        block: from.block,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RowError {
    /// 1-based line number in the source, header is line 1.
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Default)]
pub struct ParsedLocations {
    pub locations: BTreeMap<u32, Location>,
    pub rejected: Vec<RowError>,
    pub warnings: Vec<String>,
}

pub const NODE_CSV_HEADER: [&str; 4] = ["id", "latitude", "longitude", "block"];

/// Reads `id,latitude,longitude,block` rows. Header problems are fatal;
/// bad rows are collected in `rejected` with their line numbers.
pub fn parse_locations<R: Read>(source: R) -> Result<ParsedLocations> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(source);
    let headers = reader.headers()?.clone();
    let column = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or_else(|| Error::Location(format!("missing column '{name}' in header")))
    };
    let (id_col, lat_col, lon_col) = (column("id")?, column("latitude")?, column("longitude")?);
    let block_col = column("block").ok();

    let mut out = ParsedLocations::default();
    for (i, record) in reader.records().enumerate() {
        let line = record
            .as_ref()
            .ok()
            .and_then(|r| r.position().map(|p| p.line()))
            .unwrap_or(i as u64 + 2);
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejected.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let field = |col: usize| record.get(col).unwrap_or("");
        let parsed = (|| -> std::result::Result<(u32, Location), String> {
            let id: u32 = field(id_col)
                .parse()
                .map_err(|_| format!("id '{}' is not a non-negative integer", field(id_col)))?;
            let lat: f64 = field(lat_col)
                .parse()
                .map_err(|_| format!("latitude '{}' is not numeric", field(lat_col)))?;
            let lon: f64 = field(lon_col)
                .parse()
                .map_err(|_| format!("longitude '{}' is not numeric", field(lon_col)))?;
            let mut loc = Location::new(lat, lon).map_err(|e| e.to_string())?;
            if let Some(col) = block_col {
                let raw = field(col);
                if !raw.is_empty() {
                    loc.block = Some(
                        raw.parse()
                            .map_err(|_| format!("block '{raw}' is not an integer"))?,
                    );
                }
            }
            Ok((id, loc))
        })();
        match parsed {
            Ok((id, loc)) => {
                if out.locations.insert(id, loc).is_some() {
                    out.warnings
                        .push(format!("line {line}: duplicate id {id}, later row wins"));
                }
            }
            Err(message) => out.rejected.push(RowError {
                line,
                message: format!("line {line}: {message}"),
            }),
        }
    }
    if out.locations.is_empty() && out.rejected.is_empty() {
        out.warnings.push("location file has no data rows".into());
        log::warn!("location file has no data rows");
    }
    Ok(out)
}

pub fn write_locations<W: std::io::Write>(
    sink: W,
    rows: impl IntoIterator<Item = (u32, Location)>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(NODE_CSV_HEADER)?;
    for (id, loc) in rows {
        w.write_record([
            id.to_string(),
            format!("{:.7}", loc.latitude),
            format!("{:.7}", loc.longitude),
            loc.block.map(|b| b.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
