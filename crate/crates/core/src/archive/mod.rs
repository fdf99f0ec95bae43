//! Archive planning: one pointing per disc, per-disc description files,
//! a survey-wide index and the media cost comparison.

pub mod coords;

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::beamio::{BeamPosition, PointingMeta, BEAMS_PER_POINTING};
pub use coords::{equatorial_to_galactic, format_dec_dms, format_ra_hms, galactic_to_equatorial};

/// Raw data in the survey, GB.
pub const SURVEY_TOTAL_GB: f64 = 573.7;
pub const SURVEY_DVD_UNITS: u32 = 233;
pub const SURVEY_DLT_UNITS: u32 = 22;
pub const SURVEY_BEAMS: usize = 3016;
pub const SURVEY_BEAM_BYTES: u64 = 194_800_000;

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("PointingTooLarge: pointing {pointing_id} needs {bytes} bytes, {media} holds {capacity}")]
    PointingTooLarge {
        pointing_id: String,
        bytes: u64,
        capacity: u64,
        media: String,
    },
    #[error("InvalidPointing: {0}")]
    InvalidPointing(String),
    #[error("InvalidMedia: {0}")]
    InvalidMedia(String),
    #[error("InvalidInput: {0}")]
    InvalidInput(String),
    #[error("IoError: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct MediaSpec {
    pub name: String,
    pub capacity_gb: f64,
    pub unit_cost: f64,
    pub writer_cost: f64,
    pub other_costs: f64,
}

impl MediaSpec {
    /// Single-layer DVD-R, June 2003 prices; "other" is the storage case.
    pub fn dvd_2003() -> Self {
        MediaSpec {
            name: "DVD".into(),
            capacity_gb: 4.7,
            unit_cost: 1.36,
            writer_cost: 400.0,
            other_costs: 45.0,
        }
    }

    /// DLT-IV tape, June 2003 prices.
    pub fn dlt4_2003() -> Self {
        MediaSpec {
            name: "DLT-IV".into(),
            capacity_gb: 35.0,
            unit_cost: 65.0,
            writer_cost: 2300.0,
            other_costs: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ArchiveError> {
        if !(self.capacity_gb > 0.0 && self.capacity_gb.is_finite()) {
            return Err(ArchiveError::InvalidMedia(format!("{}: capacity must be positive", self.name)));
        }
        if [self.unit_cost, self.writer_cost, self.other_costs]
            .iter()
            .any(|c| !(*c >= 0.0 && c.is_finite()))
        {
            return Err(ArchiveError::InvalidMedia(format!("{}: costs must be non-negative", self.name)));
        }
        Ok(())
    }

    /// Capacity in bytes (decimal gigabytes, as media are sold).
    pub fn capacity_bytes(&self) -> u64 {
        (self.capacity_gb * 1e9).round() as u64
    }

    fn disc_prefix(&self) -> String {
        let p: String = self.name.chars().filter(|c| c.is_ascii_alphanumeric()).collect();
        if p.is_empty() {
            "DISC".into()
        } else {
            p.to_ascii_uppercase()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscManifest {
    pub disc_id: String,
    pub pointing: PointingMeta,
    pub bytes_used: u64,
    pub fill_fraction: f64,
}

/// One disc per pointing, in input order.
pub fn plan_discs(pointings: &[PointingMeta], media: &MediaSpec) -> Result<Vec<DiscManifest>, ArchiveError> {
    media.validate()?;
    let capacity = media.capacity_bytes();
    let prefix = media.disc_prefix();
    pointings
        .iter()
        .enumerate()
        .map(|(i, p)| {
            p.validate()
                .map_err(|e| ArchiveError::InvalidPointing(e.to_string()))?;
            let bytes = p.payload_bytes();
            if bytes > capacity {
                return Err(ArchiveError::PointingTooLarge {
                    pointing_id: p.pointing_id.clone(),
                    bytes,
                    capacity,
                    media: media.name.clone(),
                });
            }
            Ok(DiscManifest {
                disc_id: format!("{prefix}{:04}", i + 1),
                pointing: p.clone(),
                bytes_used: bytes,
                fill_fraction: bytes as f64 / capacity as f64,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub media: MediaSpec,
    pub n_units: u32,
    pub total_data_gb: f64,
    pub cost_per_gb_max: f64,
    pub cost_per_gb_actual: f64,
    pub fill_fraction: f64,
    pub total_cost: f64,
}

pub fn cost_report(total_data_gb: f64, n_units: u32, media: &MediaSpec) -> Result<CostReport, ArchiveError> {
    media.validate()?;
    if !(total_data_gb > 0.0 && total_data_gb.is_finite()) || n_units == 0 {
        return Err(ArchiveError::InvalidInput(
            "data volume and unit count must be positive".into(),
        ));
    }
    let media_cost = n_units as f64 * media.unit_cost;
    Ok(CostReport {
        media: media.clone(),
        n_units,
        total_data_gb,
        cost_per_gb_max: media.unit_cost / media.capacity_gb,
        cost_per_gb_actual: media_cost / total_data_gb,
        fill_fraction: total_data_gb / (n_units as f64 * media.capacity_gb),
        total_cost: media_cost + media.writer_cost + media.other_costs,
    })
}

/// Side-by-side comparison of two media as TSV, with an a/b ratio column.
/// The ratio is blank where the denominator is zero.
pub fn cost_table(a: &CostReport, b: &CostReport) -> String {
    let mut out = format!("quantity\t{}\t{}\t{}/{}\n", a.media.name, b.media.name, a.media.name, b.media.name);
    let rows: [(&str, f64, f64, usize); 9] = [
        ("units", a.n_units as f64, b.n_units as f64, 0),
        ("cost_per_unit_usd", a.media.unit_cost, b.media.unit_cost, 2),
        ("writer_cost_usd", a.media.writer_cost, b.media.writer_cost, 2),
        ("other_costs_usd", a.media.other_costs, b.media.other_costs, 2),
        ("capacity_gb", a.media.capacity_gb, b.media.capacity_gb, 2),
        ("fill_fraction", a.fill_fraction, b.fill_fraction, 3),
        ("cost_per_gb_max_usd", a.cost_per_gb_max, b.cost_per_gb_max, 2),
        ("cost_per_gb_actual_usd", a.cost_per_gb_actual, b.cost_per_gb_actual, 2),
        ("total_cost_usd", a.total_cost, b.total_cost, 2),
    ];
    for (name, x, y, prec) in rows {
        let ratio = if y != 0.0 { format!("{:.2}", x / y) } else { String::new() };
        let _ = writeln!(out, "{name}\t{x:.prec$}\t{y:.prec$}\t{ratio}");
    }
    out
}

/// The survey's DVD vs DLT-IV comparison with the shipped 2003 prices.
pub fn default_cost_table() -> String {
    let dvd = cost_report(SURVEY_TOTAL_GB, SURVEY_DVD_UNITS, &MediaSpec::dvd_2003())
        .expect("built-in media are valid");
    let dlt = cost_report(SURVEY_TOTAL_GB, SURVEY_DLT_UNITS, &MediaSpec::dlt4_2003())
        .expect("built-in media are valid");
    cost_table(&dvd, &dlt)
}

/// Plain-text description written alongside each disc's data.
pub fn write_description(manifest: &DiscManifest) -> String {
    let p = &manifest.pointing;
    let mut out = String::new();
    let _ = writeln!(out, "DISC {}", manifest.disc_id);
    let _ = writeln!(out, "POINTING {}", p.pointing_id);
    let _ = writeln!(out, "SOURCE {}", p.source_name);
    let _ = writeln!(out, "DATE {}", p.observation_date);
    let _ = writeln!(out, "BYTES {}", manifest.bytes_used);
    out.push('\n');
    for (i, b) in p.beams.iter().enumerate() {
        let _ = writeln!(
            out,
            "B{:02} {} {} {:08.4} {:+08.4}",
            i + 1,
            format_ra_hms(b.ra_deg),
            format_dec_dms(b.dec_deg),
            b.l_deg,
            b.b_deg
        );
    }
    out
}

pub const INDEX_HEADER: &str = "disc_id,pointing_id,source,beam_id,ra_deg,dec_deg,l_deg,b_deg";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn html_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One row per beam across all discs.
pub fn build_index(manifests: &[DiscManifest]) -> String {
    let mut out = format!("{INDEX_HEADER}\n");
    for m in manifests {
        for b in &m.pointing.beams {
            let _ = writeln!(
                out,
                "{},{},{},{},{:.6},{:.6},{:.6},{:.6}",
                csv_field(&m.disc_id),
                csv_field(&m.pointing.pointing_id),
                csv_field(&m.pointing.source_name),
                csv_field(&b.beam_id),
                b.ra_deg,
                b.dec_deg,
                b.l_deg,
                b.b_deg
            );
        }
    }
    out
}

pub fn build_index_html(manifests: &[DiscManifest]) -> String {
    let mut out = String::from(
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Archive index</title></head><body>\n<table>\n<tr>",
    );
    for h in INDEX_HEADER.split(',') {
        let _ = write!(out, "<th>{h}</th>");
    }
    out.push_str("</tr>\n");
    for m in manifests {
        for b in &m.pointing.beams {
            let cells = [
                html_escape(&m.disc_id),
                html_escape(&m.pointing.pointing_id),
                html_escape(&m.pointing.source_name),
                html_escape(&b.beam_id),
                format!("{} ({:.6})", format_ra_hms(b.ra_deg), b.ra_deg),
                format!("{} ({:.6})", format_dec_dms(b.dec_deg), b.dec_deg),
                format!("{:.6}", b.l_deg),
                format!("{:.6}", b.b_deg),
            ];
            out.push_str("<tr>");
            for c in cells {
                let _ = write!(out, "<td>{c}</td>");
            }
            out.push_str("</tr>\n");
        }
    }
    out.push_str("</table>\n</body></html>\n");
    out
}

/// Write `<disc>.txt` for every disc plus `index.csv` and `index.html`.
pub fn write_archive(dir: &Path, manifests: &[DiscManifest]) -> Result<(), ArchiveError> {
    fs::create_dir_all(dir)?;
    for m in manifests {
        fs::write(dir.join(format!("{}.txt", m.disc_id)), write_description(m))?;
    }
    fs::write(dir.join("index.csv"), build_index(manifests))?;
    fs::write(dir.join("index.html"), build_index_html(manifests))?;
    Ok(())
}

pub fn beam_position(beam_id: &str, ra_deg: f64, dec_deg: f64) -> BeamPosition {
    let (l_deg, b_deg) = equatorial_to_galactic(ra_deg, dec_deg);
    BeamPosition {
        beam_id: beam_id.to_string(),
        ra_deg,
        dec_deg,
        l_deg,
        b_deg,
    }
}

/// Multibeam footprint: a central beam, an inner ring of six and an outer
/// ring of six offset by 30 degrees, as (x, y) offsets in beam spacings.
fn hex_offsets() -> [(f64, f64); BEAMS_PER_POINTING] {
    let mut out = [(0.0, 0.0); BEAMS_PER_POINTING];
    for k in 0..6 {
        let a = (60.0 * k as f64).to_radians();
        out[1 + k] = (a.cos(), a.sin());
        let a = (60.0 * k as f64 + 30.0).to_radians();
        out[7 + k] = (3f64.sqrt() * a.cos(), 3f64.sqrt() * a.sin());
    }
    out
}

/// Days since 1970-01-01 to a proleptic Gregorian date.
fn civil_from_days(z: i64) -> (i64, u32, u32) {
    let z = z + 719_468;
    let era = z.div_euclid(146_097);
    let doe = z.rem_euclid(146_097);
    let yoe = (doe - doe / 1460 + doe / 36_524 - doe / 146_096) / 365;
    let doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
    let mp = (5 * doy + 2) / 153;
    let d = (doy - (153 * mp + 2) / 5 + 1) as u32;
    let m = if mp < 10 { mp + 3 } else { mp - 9 } as u32;
    let y = yoe + era * 400 + if m <= 2 { 1 } else { 0 };
    (y, m, d)
}

/// Source name in the `Jhhmm+ddmm` style from a position.
fn source_name(ra_deg: f64, dec_deg: f64) -> String {
    let ra = format_ra_hms(ra_deg);
    let dec = format_dec_dms(dec_deg);
    format!("J{}{}{}{}", &ra[0..2], &ra[3..5], &dec[0..3], &dec[4..6])
}

/// A reproducible survey of `n_pointings` 13-beam pointings.
pub fn synthetic_survey(n_pointings: usize, bytes_per_beam: u64, seed: u64) -> Vec<PointingMeta> {
    const SPACING_DEG: f64 = 0.48;
    // 2000-06-01
    const FIRST_DAY: i64 = 11_109;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let offsets = hex_offsets();
    (0..n_pointings)
        .map(|i| {
            let ra0: f64 = rng.gen_range(0.0..360.0);
            let dec0: f64 = rng.gen_range(-40.0..40.0);
            let beams = offsets
                .iter()
                .enumerate()
                .map(|(k, &(dx, dy))| {
                    let dec = (dec0 + dy * SPACING_DEG).clamp(-90.0, 90.0);
                    let ra = (ra0 + dx * SPACING_DEG / dec0.to_radians().cos()).rem_euclid(360.0);
                    beam_position(&format!("P{:04}B{:02}", i + 1, k + 1), ra, dec)
                })
                .collect();
            let (y, m, d) = civil_from_days(FIRST_DAY + (i as i64) / 8);
            PointingMeta {
                pointing_id: format!("P{:04}", i + 1),
                source_name: source_name(ra0, dec0),
                observation_date: format!("{y:04}-{m:02}-{d:02}"),
                beams,
                bytes_per_beam,
            }
        })
        .collect()
}

/// Pointings from CSV rows `pointing_id,source,date,beam_id,ra_deg,dec_deg,bytes`,
/// grouped by consecutive pointing id.
pub fn parse_pointings(text: &str) -> Result<Vec<PointingMeta>, ArchiveError> {
    let mut out: Vec<PointingMeta> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("pointing_id,")) {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        let bad = |m: &str| ArchiveError::InvalidInput(format!("line {}: {m}", i + 1));
        if f.len() != 7 {
            return Err(bad("expected 7 fields"));
        }
        let ra: f64 = f[4].parse().map_err(|_| bad("bad ra_deg"))?;
        let dec: f64 = f[5].parse().map_err(|_| bad("bad dec_deg"))?;
        let bytes: u64 = f[6].parse().map_err(|_| bad("bad bytes"))?;
        if !(0.0..360.0).contains(&ra) || !(-90.0..=90.0).contains(&dec) {
            return Err(bad("position out of range"));
        }
        let beam = beam_position(f[3], ra, dec);
        match out.last_mut() {
            Some(p) if p.pointing_id == f[0] => {
                if p.bytes_per_beam != bytes {
                    return Err(bad("beams of one pointing must share a size"));
                }
                p.beams.push(beam);
            }
            _ => out.push(PointingMeta {
                pointing_id: f[0].to_string(),
                source_name: f[1].to_string(),
                observation_date: f[2].to_string(),
                beams: vec![beam],
                bytes_per_beam: bytes,
            }),
        }
    }
    Ok(out)
}
