//! Synthetic substation failure logs.
//!
//! Substations sit in a few geographic clusters. Daily failure occurrence
//! follows a log-rate model with a seasonal term, a per-substation frailty
//! a propagation term proportional to the share of neighbouring substations
//! that had a primary failure the previous day, and a persistence term for
//! the substation's own primary failure the previous day. A failure is
//! primary when it would have happened without either term; induced
//! failures do not excite anything, so the process cannot lock into
//! cluster-wide failure runs. The intercept is calibrated so the realized
//! share of failure days matches `base_rate`.

use std::io::{Read, Write};

use chrono::{Datelike, Days, NaiveDate, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use super::{column_index, DailySeries, EventRecord, IngestError};
use crate::graph::{GridGraph, LatLon};

pub const VOLTAGE_CLASSES: [u32; 3] = [69, 138, 345];

const CAUSES: [&str; 5] = ["weather", "equipment", "vegetation", "animal", "unknown"];
const EQUIPMENT: [&str; 4] = ["breaker", "transformer", "line", "relay"];
const KM_PER_DEGREE: f64 = 111.195;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_substations: usize,
    pub years: u32,
    pub start_year: i32,
    pub seed: u64,
    /// Log-rate increase when every neighbour had a primary failure the
    /// previous day.
    pub propagation_strength: f64,
    /// Log-rate increase after the substation's own primary failure the
    /// previous day.
    pub persistence: f64,
    /// Target share of substation-days with at least one failure.
    pub base_rate: f64,
    pub seasonal_amplitude: f64,
    pub frailty_sd: f64,
    /// Mean number of extra events logged on a failure day.
    pub burst_mean: f64,
    /// Proximity threshold defining who propagates to whom.
    pub tau_km: f64,
    pub center_lat: f64,
    pub center_lon: f64,
    pub cluster_radius_km: f64,
    pub cluster_spacing_km: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_substations: 10,
            years: 3,
            start_year: 2020,
            seed: 0,
            propagation_strength: 10.0,
            persistence: 4.0,
            base_rate: 0.05,
            seasonal_amplitude: 0.5,
            frailty_sd: 0.3,
            burst_mean: 2.0,
            tau_km: 50.0,
            center_lat: 35.5,
            center_lon: -97.5,
            cluster_radius_km: 32.0,
            cluster_spacing_km: 90.0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::Config(m.to_string()));
        if self.n_substations < 5 {
            return bad("n_substations must be at least 5");
        }
        if self.years < 1 {
            return bad("years must be at least 1");
        }
        if !(self.base_rate > 0.0 && self.base_rate < 1.0) {
            return bad("base_rate must lie in (0, 1)");
        }
        if !(self.propagation_strength >= 0.0 && self.persistence >= 0.0)
            || !self.propagation_strength.is_finite()
            || !self.persistence.is_finite()
        {
            return bad("propagation_strength and persistence must be finite and non-negative");
        }
        if !(self.frailty_sd >= 0.0 && self.burst_mean >= 0.0 && self.tau_km > 0.0) {
            return bad("frailty_sd, burst_mean must be non-negative and tau_km positive");
        }
        Ok(())
    }

    pub fn start_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.start_year, 1, 1).expect("valid year")
    }

    pub fn end_date(&self) -> NaiveDate {
        NaiveDate::from_ymd_opt(self.start_year + self.years as i32 - 1, 12, 31).expect("valid year")
    }
}

/// Static description of a substation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteMeta {
    pub substation_id: String,
    pub lat: f64,
    pub lon: f64,
    pub voltage_class: u32,
    pub connection_count: u32,
}

impl SiteMeta {
    pub fn coord(&self) -> LatLon {
        LatLon { lat: self.lat, lon: self.lon }
    }
}

#[derive(Clone, Debug)]
pub struct SynthDataset {
    pub sites: Vec<SiteMeta>,
    pub events: Vec<EventRecord>,
    /// Ground-truth daily counts over the full study period.
    pub daily: Vec<DailySeries>,
    /// Per site and day, the probability of at least one failure.
    pub occurrence_prob: Vec<Vec<f64>>,
    pub intercept: f64,
    pub positive_rate: f64,
}

fn place_sites(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<(f64, f64)> {
    let n_clusters = cfg.n_substations.div_ceil(5);
    let centers: Vec<(f64, f64)> = (0..n_clusters)
        .map(|c| {
            let angle = std::f64::consts::TAU * c as f64 / n_clusters as f64;
            let r = if n_clusters == 1 { 0.0 } else { cfg.cluster_spacing_km / 2.0 / (std::f64::consts::PI / n_clusters as f64).sin().max(0.5) };
            (r * angle.cos(), r * angle.sin())
        })
        .collect();
    (0..cfg.n_substations)
        .map(|i| {
            let (cx, cy) = centers[i % n_clusters];
            let radius = cfg.cluster_radius_km * rng.gen::<f64>().sqrt();
            let theta = rng.gen_range(0.0..std::f64::consts::TAU);
            let (x, y) = (cx + radius * theta.cos(), cy + radius * theta.sin());
            let lat = cfg.center_lat + y / KM_PER_DEGREE;
            let lon = cfg.center_lon + x / (KM_PER_DEGREE * cfg.center_lat.to_radians().cos());
            (lat, lon)
        })
        .collect()
}

/// Runs the occurrence process with pre-drawn uniforms and returns the
/// failure indicators, occurrence probabilities and realized positive rate.
#[allow(clippy::too_many_arguments)]
fn simulate(
    intercept: f64,
    offsets: &[Vec<f64>],
    neighbors: &[Vec<usize>],
    strength: f64,
    persistence: f64,
    uniforms: &[Vec<f64>],
) -> (Vec<Vec<bool>>, Vec<Vec<f64>>, f64) {
    let n = offsets.len();
    let days = offsets[0].len();
    let mut fail = vec![vec![false; days]; n];
    let mut primary = vec![vec![false; days]; n];
    let mut prob = vec![vec![0.0; days]; n];
    let mut positives = 0usize;
    for t in 0..days {
        for s in 0..n {
            let excitation = if t == 0 || neighbors[s].is_empty() {
                0.0
            } else {
                neighbors[s].iter().filter(|&&j| primary[j][t - 1]).count() as f64 / neighbors[s].len() as f64
            };
            let base = intercept + offsets[s][t];
            let own = if t > 0 && primary[s][t - 1] { persistence } else { 0.0 };
            let p = -(-(base + strength * excitation + own).exp()).exp_m1();
            prob[s][t] = p;
            if uniforms[s][t] < p {
                fail[s][t] = true;
                primary[s][t] = uniforms[s][t] < -(-base.exp()).exp_m1();
                positives += 1;
            }
        }
    }
    (fail, prob, positives as f64 / (n * days) as f64)
}

/// Generates a deterministic synthetic dataset for `cfg`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthDataset, IngestError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.n_substations;
    let start = cfg.start_date();
    let days = (cfg.end_date() - start).num_days() as usize + 1;

    let positions = place_sites(cfg, &mut rng);
    let coords: Vec<LatLon> = positions.iter().map(|&(lat, lon)| LatLon { lat, lon }).collect();
    let graph = GridGraph::build(coords, cfg.tau_km).map_err(|e| IngestError::Config(e.to_string()))?;
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| graph.adjacency.neighbors(i).collect()).collect();

    let voltage: Vec<u32> = (0..n).map(|_| VOLTAGE_CLASSES[rng.gen_range(0..3)]).collect();
    let frailty_noise = Normal::new(0.0, cfg.frailty_sd.max(1e-12)).expect("valid sd");
    let frailty: Vec<f64> = voltage
        .iter()
        .map(|&v| {
            let class_effect = match v {
                69 => 0.25,
                345 => -0.25,
                _ => 0.0,
            };
            class_effect + if cfg.frailty_sd > 0.0 { frailty_noise.sample(&mut rng) } else { 0.0 }
        })
        .collect();
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);
    let offsets: Vec<Vec<f64>> = (0..n)
        .map(|s| {
            (0..days)
                .map(|t| {
                    let doy = (start + Days::new(t as u64)).ordinal() as f64;
                    frailty[s] + cfg.seasonal_amplitude * (std::f64::consts::TAU * doy / 365.25 + phase).sin()
                })
                .collect()
        })
        .collect();
    let uniforms: Vec<Vec<f64>> = (0..n).map(|_| (0..days).map(|_| rng.gen::<f64>()).collect()).collect();

    // Common random numbers make the realized rate monotone in the intercept.
    let (mut lo, mut hi) = (-15.0f64, 3.0f64);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        let (_, _, rate) = simulate(mid, &offsets, &neighbors, cfg.propagation_strength, cfg.persistence, &uniforms);
        if rate < cfg.base_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let (fail, occurrence_prob, positive_rate) =
        simulate(intercept, &offsets, &neighbors, cfg.propagation_strength, cfg.persistence, &uniforms);

    let burst = Poisson::new(cfg.burst_mean.max(1e-12)).expect("positive mean");
    let ids: Vec<String> = (0..n).map(|i| format!("SUB{:03}", i + 1)).collect();
    let mut daily = Vec::with_capacity(n);
    let mut events = Vec::new();
    for s in 0..n {
        let mut counts = vec![0u32; days];
        for t in 0..days {
            if !fail[s][t] {
                continue;
            }
            let extra = if cfg.burst_mean > 0.0 { burst.sample(&mut rng) as u32 } else { 0 };
            counts[t] = 1 + extra;
            let day = start + Days::new(t as u64);
            for _ in 0..counts[t] {
                let secs = rng.gen_range(0..86_400u32);
                let ts = day.and_hms_opt(secs / 3600, (secs / 60) % 60, secs % 60).expect("valid time");
                events.push(EventRecord {
                    substation_id: ids[s].clone(),
                    timestamp: Utc.from_utc_datetime(&ts),
                    cause: Some(CAUSES[rng.gen_range(0..CAUSES.len())].to_string()),
                    equipment: Some(EQUIPMENT[rng.gen_range(0..EQUIPMENT.len())].to_string()),
                });
            }
        }
        daily.push(DailySeries { substation_id: ids[s].clone(), start, counts });
    }
    events.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.substation_id.cmp(&b.substation_id)));

    let sites = (0..n)
        .map(|s| SiteMeta {
            substation_id: ids[s].clone(),
            lat: positions[s].0,
            lon: positions[s].1,
            voltage_class: voltage[s],
            connection_count: neighbors[s].len() as u32 + rng.gen_range(0..3),
        })
        .collect();

    Ok(SynthDataset { sites, events, daily, occurrence_prob, intercept, positive_rate })
}

pub fn write_sites_csv<W: Write>(sites: &[SiteMeta], out: W) -> Result<(), IngestError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["substation_id", "lat", "lon", "voltage_class", "connection_count"])?;
    for s in sites {
        w.write_record([
            s.substation_id.clone(),
            format!("{:.6}", s.lat),
            format!("{:.6}", s.lon),
            s.voltage_class.to_string(),
            s.connection_count.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `substation_id,lat,lon,voltage_class,connection_count`.
pub fn read_sites_csv<R: Read>(input: R) -> Result<Vec<SiteMeta>, IngestError> {
    let mut reader = csv::Reader::from_reader(input);
    let headers = reader.headers()?.clone();
    let cols = ["substation_id", "lat", "lon", "voltage_class", "connection_count"]
        .map(|c| column_index(&headers, c));
    let [id, lat, lon, volt, conn] = cols;
    let (id, lat, lon, volt, conn) = (id?, lat?, lon?, volt?, conn?);
    let mut out = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let rec = row?;
        let line = i as u64 + 2;
        let field = |c: usize, name: &str| -> Result<&str, IngestError> {
            rec.get(c).map(str::trim).ok_or_else(|| IngestError::BadRow { line, reason: format!("missing {name}") })
        };
        let parse_err = |name: &str| IngestError::BadRow { line, reason: format!("unparseable {name}") };
        let site = SiteMeta {
            substation_id: field(id, "substation_id")?.to_string(),
            lat: field(lat, "lat")?.parse().map_err(|_| parse_err("lat"))?,
            lon: field(lon, "lon")?.parse().map_err(|_| parse_err("lon"))?,
            voltage_class: field(volt, "voltage_class")?.parse().map_err(|_| parse_err("voltage_class"))?,
            connection_count: field(conn, "connection_count")?.parse().map_err(|_| parse_err("connection_count"))?,
        };
        LatLon::new(site.lat, site.lon).map_err(|e| IngestError::BadRow { line, reason: e.to_string() })?;
        out.push(site);
    }
    Ok(out)
}
