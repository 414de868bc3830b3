//! Mobility traces and the directional / random-waypoint / random-walk
//! generators.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::location::{destination, haversine, initial_bearing, Location};
use crate::engine::{RngStream, SimTime};
use crate::error::{Error, Result};
use crate::infrastructure::EntityId;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub time: SimTime,
    pub location: Location,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityTrace {
    pub entity: EntityId,
    pub samples: Vec<TraceSample>,
}

impl MobilityTrace {
    pub fn stationary(entity: EntityId, at: Location) -> Self {
        MobilityTrace {
            entity,
            samples: vec![TraceSample {
                time: SimTime::ZERO,
                location: at,
            }],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::Mobility(format!("trace of {} is empty", self.entity)));
        }
        for w in self.samples.windows(2) {
            if w[1].time <= w[0].time {
                return Err(Error::Mobility(format!(
                    "trace of {} not strictly increasing at {} ms",
                    self.entity, w[1].time
                )));
            }
        }
        Ok(())
    }

    /// Latest sample at or before `t`; the first sample before the trace
    /// starts.
    pub fn location_at(&self, t: SimTime) -> Location {
        let idx = self.samples.partition_point(|s| s.time <= t);
        self.samples[idx.saturating_sub(1)].location
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Total great-circle length of the sampled path in km.
    pub fn path_length_km(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| haversine(&w[0].location, &w[1].location))
            .sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MobilityKind {
    Directional,
    RandomWaypoint,
    RandomWalk,
}

/// Travel speed in m/s, fixed or drawn uniformly from a range.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Speed {
    Fixed(f64),
    Range { min: f64, max: f64 },
}

impl Speed {
    pub fn mean(&self) -> f64 {
        match *self {
            Speed::Fixed(v) => v,
            Speed::Range { min, max } => 0.5 * (min + max),
        }
    }

    fn draw(&self, rng: &mut RngStream) -> f64 {
        match *self {
            Speed::Fixed(v) => v,
            Speed::Range { min, max } => rng.uniform(min, max),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Speed::Fixed(v) => v > 0.0 && v.is_finite(),
            Speed::Range { min, max } => min > 0.0 && max >= min && max.is_finite(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Mobility(format!("speed must be positive, got {self:?}")))
        }
    }
}

/// Latitude/longitude bounding box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Roi {
    pub min_lat: f64,
    pub max_lat: f64,
    pub min_lon: f64,
    pub max_lon: f64,
}

impl Roi {
    /// Melbourne CBD.
    pub const MELBOURNE_CBD: Roi = Roi {
        min_lat: -37.8226,
        max_lat: -37.8080,
        min_lon: 144.9510,
        max_lon: 144.9740,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.min_lat, self.max_lat, self.min_lon, self.max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.max_lat <= self.min_lat || self.max_lon <= self.min_lon {
            return Err(Error::Mobility(format!("degenerate region of interest {self:?}")));
        }
        Location::new(self.min_lat, self.min_lon)?;
        Location::new(self.max_lat, self.max_lon)?;
        Ok(())
    }

    pub fn contains(&self, loc: &Location) -> bool {
        (self.min_lat..=self.max_lat).contains(&loc.latitude)
            && (self.min_lon..=self.max_lon).contains(&loc.longitude)
    }

    pub fn center(&self) -> Location {
        Location {
            latitude: 0.5 * (self.min_lat + self.max_lat),
            longitude: 0.5 * (self.min_lon + self.max_lon),
            block: None,
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> Location {
        Location {
            latitude: rng.uniform(self.min_lat, self.max_lat),
            longitude: rng.uniform(self.min_lon, self.max_lon),
            block: None,
        }
    }

    fn clamp(&self, loc: Location) -> Location {
        Location {
            latitude: loc.latitude.clamp(self.min_lat, self.max_lat),
            longitude: loc.longitude.clamp(self.min_lon, self.max_lon),
            block: loc.block,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobilityModelParams {
    pub kind: MobilityKind,
    pub speed: Speed,
    /// Milliseconds between samples.
    pub interval_ms: f64,
    /// Dwell at each waypoint, milliseconds.
    #[serde(default)]
    pub pause_ms: f64,
    pub roi: Roi,
    pub duration_ms: f64,
    pub seed: u64,
    /// Start position; drawn uniformly in the region when absent.
    #[serde(default)]
    pub start: Option<Location>,
}

impl MobilityModelParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.interval_ms > 0.0 && self.interval_ms.is_finite()) {
            return Err(Error::Mobility(format!(
                "sample interval must be positive, got {}",
                self.interval_ms
            )));
        }
        if !(self.duration_ms >= 0.0 && self.duration_ms.is_finite()) {
            return Err(Error::Mobility("duration must be non-negative".into()));
        }
        if !(self.pause_ms >= 0.0) {
            return Err(Error::Mobility("pause must be non-negative".into()));
        }
        self.speed.validate()?;
        self.roi.validate()
    }

    /// Samples a trace of this length holds: one at t=0 plus one per whole
    /// interval that fits in the duration.
    pub fn sample_count(&self) -> usize {
        (self.duration_ms / self.interval_ms + 1e-9).floor() as usize + 1
    }

    fn sample_times(&self) -> impl Iterator<Item = SimTime> + '_ {
        (0..self.sample_count()).map(|k| SimTime::from_ms(k as f64 * self.interval_ms))
    }
}

/// Fixed-speed straight-line movement along a great circle.
pub fn generate_directional_trace(
    entity: EntityId,
    start: Location,
    heading_deg: f64,
    params: &MobilityModelParams,
) -> Result<MobilityTrace> {
    if params.kind != MobilityKind::Directional {
        return Err(Error::Mobility(format!(
            "directional generator called with {:?}",
            params.kind
        )));
    }
    if !(0.0..360.0).contains(&heading_deg) {
        return Err(Error::Mobility(format!(
            "heading {heading_deg} outside [0, 360)"
        )));
    }
    params.validate()?;
    start.validate()?;
    let Speed::Fixed(speed) = params.speed else {
        return Err(Error::Mobility("directional movement needs a fixed speed".into()));
    };
    let step_km = speed * params.interval_ms / 1000.0 / 1000.0;
    let samples = params
        .sample_times()
        .enumerate()
        .map(|(k, time)| TraceSample {
            time,
            location: destination(&start, heading_deg, step_km * k as f64),
        })
        .collect();
    Ok(MobilityTrace { entity, samples })
}

/// Random waypoint (straight legs to uniform targets with pauses) or random
/// walk (fresh heading every interval, reflecting at the region boundary).
pub fn generate_random_trace(entity: EntityId, params: &MobilityModelParams) -> Result<MobilityTrace> {
    params.validate()?;
    let mut rng = RngStream::new(params.seed, &format!("trace/{}", entity.0));
    let start = match params.start {
        Some(s) => params.roi.clamp(s),
        None => params.roi.sample(&mut rng),
    };
    let samples = match params.kind {
        MobilityKind::RandomWaypoint => waypoint_samples(params, start, &mut rng),
        MobilityKind::RandomWalk => walk_samples(params, start, &mut rng),
        MobilityKind::Directional => {
            return Err(Error::Mobility(
                "random generator called with DIRECTIONAL".into(),
            ))
        }
    };
    Ok(MobilityTrace { entity, samples })
}

fn waypoint_samples(params: &MobilityModelParams, start: Location, rng: &mut RngStream) -> Vec<TraceSample> {
    let roi = params.roi;
    let mut pos = start;
    let mut target = roi.sample(rng);
    let mut speed = params.speed.draw(rng);
    let mut pause_left: f64 = 0.0;
    let mut out = Vec::with_capacity(params.sample_count());
    for (k, time) in params.sample_times().enumerate() {
        if k > 0 {
            let mut budget_ms = params.interval_ms;
            while budget_ms > 1e-9 {
                if pause_left > 0.0 {
                    let used = pause_left.min(budget_ms);
                    pause_left -= used;
                    budget_ms -= used;
                    continue;
                }
                let remaining_km = haversine(&pos, &target);
                let reach_km = speed * budget_ms / 1e6;
                if reach_km >= remaining_km {
                    budget_ms -= remaining_km / speed * 1e6;
                    pos = target;
                    pause_left = params.pause_ms;
                    target = roi.sample(rng);
                    speed = params.speed.draw(rng);
                } else {
                    let bearing = initial_bearing(&pos, &target);
                    pos = destination(&pos, bearing, reach_km);
                    budget_ms = 0.0;
                }
            }
        }
        out.push(TraceSample {
            time,
            location: roi.clamp(pos),
        });
    }
    out
}

fn walk_samples(params: &MobilityModelParams, start: Location, rng: &mut RngStream) -> Vec<TraceSample> {
    let roi = params.roi;
    let mut pos = start;
    let mut out = Vec::with_capacity(params.sample_count());
    for (k, time) in params.sample_times().enumerate() {
        if k > 0 {
            let heading = rng.uniform(0.0, 360.0);
            let speed = params.speed.draw(rng);
            let step_km = speed * params.interval_ms / 1e6;
            let mut next = destination(&pos, heading, step_km);
            // fold back across each violated edge
            if next.latitude > roi.max_lat {
                next.latitude = 2.0 * roi.max_lat - next.latitude;
            } else if next.latitude < roi.min_lat {
                next.latitude = 2.0 * roi.min_lat - next.latitude;
            }
            if next.longitude > roi.max_lon {
                next.longitude = 2.0 * roi.max_lon - next.longitude;
            } else if next.longitude < roi.min_lon {
                next.longitude = 2.0 * roi.min_lon - next.longitude;
            }
            pos = roi.clamp(next);
        }
        out.push(TraceSample { time, location: pos });
    }
    out
}

pub const TRACE_CSV_HEADER: [&str; 4] = ["entity", "time_ms", "latitude", "longitude"];

pub fn write_traces<'a, W: Write>(sink: W, traces: impl IntoIterator<Item = &'a MobilityTrace>) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(TRACE_CSV_HEADER)?;
    for trace in traces {
        for s in &trace.samples {
            w.write_record([
                trace.entity.0.to_string(),
                format!("{:.3}", s.time.ms()),
                format!("{:.8}", s.location.latitude),
                format!("{:.8}", s.location.longitude),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses a trace file; rows may interleave entities but each entity's
/// timestamps must be strictly increasing.
pub fn parse_traces<R: Read>(source: R) -> Result<BTreeMap<EntityId, MobilityTrace>> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(source);
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != TRACE_CSV_HEADER {
        return Err(Error::Mobility(format!(
            "trace header must be {}, got {}",
            TRACE_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut traces: BTreeMap<EntityId, MobilityTrace> = BTreeMap::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let line = i + 2;
        let num = |col: usize| -> Result<f64> {
            record
                .get(col)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Mobility(format!("line {line}: column {} not numeric", TRACE_CSV_HEADER[col])))
        };
        let entity = EntityId(
            record
                .get(0)
                .unwrap_or("")
                .parse()
                .map_err(|_| Error::Mobility(format!("line {line}: bad entity id")))?,
        );
        let time = num(1)?;
        if !(time >= 0.0 && time.is_finite()) {
            return Err(Error::Mobility(format!("line {line}: negative time")));
        }
        let location = Location::new(num(2)?, num(3)?)
            .map_err(|e| Error::Mobility(format!("line {line}: {e}")))?;
        traces
            .entry(entity)
            .or_insert_with(|| MobilityTrace {
                entity,
                samples: Vec::new(),
            })
            .samples
            .push(TraceSample {
                time: SimTime::from_ms(time),
                location,
            });
    }
    for trace in traces.values() {
        trace.validate()?;
    }
    Ok(traces)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(kind: MobilityKind, speed: Speed) -> MobilityModelParams {
        MobilityModelParams {
            kind,
            speed,
            interval_ms: 10_000.0,
            pause_ms: 0.0,
            roi: Roi::MELBOURNE_CBD,
            duration_ms: 500_000.0,
            seed: 11,
            start: None,
        }
    }

    #[test]
    fn directional_steps_are_equal() {
        let p = params(MobilityKind::Directional, Speed::Fixed(1.5));
        let t = generate_directional_trace(EntityId(0), Roi::MELBOURNE_CBD.center(), 75.0, &p).unwrap();
        assert_eq!(t.len(), 51);
        for w in t.samples.windows(2) {
            let d_m = haversine(&w[0].location, &w[1].location) * 1000.0;
            assert_relative_eq!(d_m, 15.0, max_relative = 1e-6);
            assert_eq!(w[1].time.ms() - w[0].time.ms(), 10_000.0);
        }
    }

    #[test]
    fn directional_short_horizon_is_a_single_sample() {
        let mut p = params(MobilityKind::Directional, Speed::Fixed(1.5));
        p.duration_ms = 5_000.0;
        let start = Roi::MELBOURNE_CBD.center();
        let t = generate_directional_trace(EntityId(0), start, 10.0, &p).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.samples[0].location, start);
    }

    #[test]
    fn due_north_trace_keeps_longitude() {
        let p = params(MobilityKind::Directional, Speed::Fixed(3.0));
        let t = generate_directional_trace(EntityId(0), Roi::MELBOURNE_CBD.center(), 0.0, &p).unwrap();
        let lon0 = t.samples[0].location.longitude;
        assert!(t.samples.iter().all(|s| (s.location.longitude - lon0).abs() < 1e-9));
    }

    #[test]
    fn directional_rejects_bad_heading() {
        let p = params(MobilityKind::Directional, Speed::Fixed(1.0));
        assert!(generate_directional_trace(EntityId(0), Roi::MELBOURNE_CBD.center(), 360.0, &p).is_err());
        assert!(generate_directional_trace(EntityId(0), Roi::MELBOURNE_CBD.center(), -1.0, &p).is_err());
    }

    #[test]
    fn random_traces_are_seeded() {
        for kind in [MobilityKind::RandomWaypoint, MobilityKind::RandomWalk] {
            let p = params(kind, Speed::Range { min: 1.0, max: 2.0 });
            let a = generate_random_trace(EntityId(3), &p).unwrap();
            let b = generate_random_trace(EntityId(3), &p).unwrap();
            assert_eq!(a, b);
            let mut q = p.clone();
            q.seed += 1;
            assert_ne!(a, generate_random_trace(EntityId(3), &q).unwrap());
        }
    }

    #[test]
    fn random_traces_stay_in_region() {
        for kind in [MobilityKind::RandomWaypoint, MobilityKind::RandomWalk] {
            let mut p = params(kind, Speed::Range { min: 5.0, max: 15.0 });
            p.interval_ms = 1_000.0;
            p.duration_ms = 2_000_000.0;
            let t = generate_random_trace(EntityId(0), &p).unwrap();
            assert!(t.samples.iter().all(|s| p.roi.contains(&s.location)));
        }
    }

    #[test]
    fn degenerate_region_is_rejected() {
        let mut p = params(MobilityKind::RandomWalk, Speed::Fixed(1.0));
        p.roi.max_lat = p.roi.min_lat;
        assert!(generate_random_trace(EntityId(0), &p).is_err());
    }

    #[test]
    fn location_lookup_is_piecewise_constant() {
        let p = params(MobilityKind::Directional, Speed::Fixed(1.0));
        let t = generate_directional_trace(EntityId(0), Roi::MELBOURNE_CBD.center(), 45.0, &p).unwrap();
        assert_eq!(t.location_at(SimTime::from_ms(15_000.0)), t.samples[1].location);
        assert_eq!(t.location_at(SimTime::from_ms(20_000.0)), t.samples[2].location);
    }

    #[test]
    fn trace_csv_round_trip() {
        let p = params(MobilityKind::RandomWalk, Speed::Fixed(1.0));
        let a = generate_random_trace(EntityId(1), &p).unwrap();
        let b = generate_random_trace(EntityId(2), &p).unwrap();
        let mut buf = Vec::new();
        write_traces(&mut buf, [&a, &b]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("entity,time_ms,latitude,longitude\n"));
        let parsed = parse_traces(buf.as_slice()).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[&EntityId(1)].len(), a.len());
    }

    #[test]
    fn non_increasing_trace_file_is_rejected() {
        let data = "entity,time_ms,latitude,longitude\n0,10,-37.8,144.9\n0,10,-37.8,144.9\n";
        assert!(parse_traces(data.as_bytes()).is_err());
    }
}
