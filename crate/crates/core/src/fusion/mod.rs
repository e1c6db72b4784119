//! Stream fusion: load environmental and phenotype CSVs, align them onto a
//! regular UTC grid, impute gaps with a not-a-knot cubic spline, select the
//! modality combination, normalize, and cut training windows.

mod spline;
mod window;

pub use spline::CubicSpline;
pub use window::{count_windows, make_windows, WindowSet};

use chrono::{DateTime, Duration, Utc};
use thiserror::Error;

use crate::pheno::PhenotypeRecord;
use crate::timefmt::{format_utc, parse_utc};

use std::io::Write;
use std::path::Path;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("schema mismatch: expected header `{expected}`, got `{got}`")]
    SchemaMismatch { expected: String, got: String },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("duplicate timestamp {timestamp}")]
    NonMonotonic { timestamp: String },
    #[error("streams do not overlap in time")]
    NoOverlap,
    #[error("channel {channel}: {have} observed points, need at least 2")]
    TooFewPoints { channel: String, have: usize },
    #[error("missing channel {0}")]
    MissingChannel(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One timestamped row of sensor readings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvRecord {
    pub timestamp: DateTime<Utc>,
    pub temp_c: f64,
    pub rh_pct: f64,
    pub light: f64,
    pub voc_ppb: f64,
    pub co2_ppm: f64,
    pub pm25_ugm3: f64,
}

/// Exact header of the environmental CSV.
pub const ENV_CSV_HEADER: &str = "timestamp,temp_c,rh_pct,light,voc_ppb,co2_ppm,pm25_ugm3";

/// Forecast target channel: the green mean is the water-stress proxy.
pub const TARGET_CHANNEL: &str = "mean_g";

/// Channel order produced by [`align_streams`].
pub const FULL_CHANNELS: [&str; 14] = [
    "mean_r",
    "mean_g",
    "mean_b",
    "mask_area",
    "mask_height",
    "mask_width",
    "area_to_height",
    "height_to_width",
    "temp_c",
    "rh_pct",
    "light",
    "voc_ppb",
    "co2_ppm",
    "pm25_ugm3",
];

const ENV_CHANNELS: [&str; 6] = ["temp_c", "rh_pct", "light", "voc_ppb", "co2_ppm", "pm25_ugm3"];
const RATIO_CHANNELS: [&str; 2] = ["area_to_height", "height_to_width"];
const RGB_CHANNELS: [&str; 3] = ["mean_r", "mean_g", "mean_b"];

/// Per-channel normalization statistics (population standard deviation).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormStats {
    pub mean: f64,
    pub std: f64,
}

/// One named value series with observation flags and optional norm stats.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub name: String,
    pub values: Vec<f64>,
    pub missing: Vec<bool>,
    pub stats: Option<NormStats>,
}

impl Channel {
    fn new(name: impl Into<String>, len: usize) -> Self {
        Self {
            name: name.into(),
            values: vec![f64::NAN; len],
            missing: vec![true; len],
            stats: None,
        }
    }
}

/// A regular-grid multivariate series with named channels.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedSeries {
    pub start: DateTime<Utc>,
    pub step_seconds: u64,
    pub channels: Vec<Channel>,
}

impl FusedSeries {
    /// Grid length (every channel has this many values).
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.values.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn timestamp(&self, i: usize) -> DateTime<Utc> {
        self.start + Duration::seconds((i as u64 * self.step_seconds) as i64)
    }

    pub fn channel(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name.as_str()).collect()
    }

    /// Target channel plus covariate channels (all others, in order).
    pub fn target_and_covariates(&self) -> Result<(&Channel, Vec<&Channel>), FusionError> {
        let target = self
            .channel(TARGET_CHANNEL)
            .ok_or_else(|| FusionError::MissingChannel(TARGET_CHANNEL.into()))?;
        let covs = self
            .channels
            .iter()
            .filter(|c| c.name != TARGET_CHANNEL)
            .collect();
        Ok((target, covs))
    }

    /// Contiguous sub-series over grid indices [from, to).
    pub fn slice(&self, from: usize, to: usize) -> FusedSeries {
        FusedSeries {
            start: self.timestamp(from),
            step_seconds: self.step_seconds,
            channels: self
                .channels
                .iter()
                .map(|c| Channel {
                    name: c.name.clone(),
                    values: c.values[from..to].to_vec(),
                    missing: c.missing[from..to].to_vec(),
                    stats: c.stats,
                })
                .collect(),
        }
    }

    #[cfg(test)]
    pub(crate) fn synthetic_for_tests(n: usize) -> FusedSeries {
        FusedSeries {
            start: DateTime::<Utc>::UNIX_EPOCH,
            step_seconds: 60,
            channels: vec![Channel {
                name: TARGET_CHANNEL.into(),
                values: (0..n).map(|i| i as f64).collect(),
                missing: vec![false; n],
                stats: None,
            }],
        }
    }
}

/// The four modality combinations of the ablation grid.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize,
)]
pub enum FeatureCombo {
    Rgb,
    RgbRatios,
    RgbEnv,
    RgbRatiosEnv,
}

impl FeatureCombo {
    pub const ALL: [FeatureCombo; 4] = [
        FeatureCombo::Rgb,
        FeatureCombo::RgbRatios,
        FeatureCombo::RgbEnv,
        FeatureCombo::RgbRatiosEnv,
    ];

    /// CLI tag.
    pub fn tag(&self) -> &'static str {
        match self {
            FeatureCombo::Rgb => "RGB",
            FeatureCombo::RgbRatios => "RGB_RATIOS",
            FeatureCombo::RgbEnv => "RGB_ENV",
            FeatureCombo::RgbRatiosEnv => "RGB_RATIOS_ENV",
        }
    }

    pub fn parse_tag(s: &str) -> Option<FeatureCombo> {
        Self::ALL.iter().copied().find(|c| c.tag() == s)
    }

    /// Human-readable report label.
    pub fn label(&self) -> &'static str {
        match self {
            FeatureCombo::Rgb => "RGB",
            FeatureCombo::RgbRatios => "RGB with ratios",
            FeatureCombo::RgbEnv => "RGB with environmental data",
            FeatureCombo::RgbRatiosEnv => "RGB with ratios and environmental data",
        }
    }

    /// Channel names this combo retains, in output order.
    pub fn retained_channels(&self) -> Vec<&'static str> {
        let mut names: Vec<&'static str> = RGB_CHANNELS.to_vec();
        if matches!(self, FeatureCombo::RgbRatios | FeatureCombo::RgbRatiosEnv) {
            names.extend(RATIO_CHANNELS);
        }
        if matches!(self, FeatureCombo::RgbEnv | FeatureCombo::RgbRatiosEnv) {
            names.extend(ENV_CHANNELS);
        }
        names
    }
}

fn split_line(line: &str) -> Vec<&str> {
    line.trim_end_matches('\r').split(',').collect()
}

fn parse_field<T: std::str::FromStr>(s: &str, line: usize, field: &str) -> Result<T, FusionError>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| FusionError::Parse {
        line,
        msg: format!("field {field}: {e} (value `{s}`)"),
    })
}

fn parse_timestamp(s: &str, line: usize) -> Result<DateTime<Utc>, FusionError> {
    parse_utc(s).ok_or_else(|| FusionError::Parse {
        line,
        msg: format!("bad timestamp `{s}`"),
    })
}

fn check_range(
    value: f64,
    lo: f64,
    hi: f64,
    line: usize,
    field: &str,
) -> Result<(), FusionError> {
    if value < lo || value > hi {
        return Err(FusionError::Parse {
            line,
            msg: format!("field {field}: value {value} outside [{lo}, {hi}]"),
        });
    }
    Ok(())
}

fn sort_and_check_unique<T>(
    rows: &mut Vec<(DateTime<Utc>, T)>,
) -> Result<(), FusionError> {
    rows.sort_by_key(|(t, _)| *t);
    for pair in rows.windows(2) {
        if pair[0].0 == pair[1].0 {
            return Err(FusionError::NonMonotonic {
                timestamp: format_utc(pair[0].0),
            });
        }
    }
    Ok(())
}

/// Reads the environmental CSV with strict schema and range checks.
pub fn read_env_csv(path: &Path) -> Result<Vec<EnvRecord>, FusionError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| FusionError::SchemaMismatch {
        expected: ENV_CSV_HEADER.into(),
        got: "<empty file>".into(),
    })?;
    if header.trim_end_matches('\r') != ENV_CSV_HEADER {
        return Err(FusionError::SchemaMismatch {
            expected: ENV_CSV_HEADER.into(),
            got: header.to_string(),
        });
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = split_line(raw);
        if f.len() != 7 {
            return Err(FusionError::Parse {
                line,
                msg: format!("expected 7 fields, got {}", f.len()),
            });
        }
        let timestamp = parse_timestamp(f[0], line)?;
        let rec = EnvRecord {
            timestamp,
            temp_c: parse_field(f[1], line, "temp_c")?,
            rh_pct: parse_field(f[2], line, "rh_pct")?,
            light: parse_field(f[3], line, "light")?,
            voc_ppb: parse_field(f[4], line, "voc_ppb")?,
            co2_ppm: parse_field(f[5], line, "co2_ppm")?,
            pm25_ugm3: parse_field(f[6], line, "pm25_ugm3")?,
        };
        check_range(rec.rh_pct, 0.0, 100.0, line, "rh_pct")?;
        check_range(rec.voc_ppb, 0.0, f64::INFINITY, line, "voc_ppb")?;
        check_range(rec.co2_ppm, 0.0, f64::INFINITY, line, "co2_ppm")?;
        check_range(rec.pm25_ugm3, 0.0, f64::INFINITY, line, "pm25_ugm3")?;
        rows.push((timestamp, rec));
    }
    sort_and_check_unique(&mut rows)?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Writes environmental records in the documented schema.
pub fn write_env_csv<W: Write>(records: &[EnvRecord], mut w: W) -> Result<(), FusionError> {
    writeln!(w, "{ENV_CSV_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
            format_utc(r.timestamp),
            r.temp_c,
            r.rh_pct,
            r.light,
            r.voc_ppb,
            r.co2_ppm,
            r.pm25_ugm3
        )?;
    }
    Ok(())
}

/// Reads the phenotype CSV emitted by the extraction stage.
pub fn read_pheno_csv(path: &Path) -> Result<Vec<PhenotypeRecord>, FusionError> {
    let expected = crate::pheno::PHENO_CSV_HEADER;
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| FusionError::SchemaMismatch {
        expected: expected.into(),
        got: "<empty file>".into(),
    })?;
    if header.trim_end_matches('\r') != expected {
        return Err(FusionError::SchemaMismatch {
            expected: expected.into(),
            got: header.to_string(),
        });
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = split_line(raw);
        if f.len() != 10 {
            return Err(FusionError::Parse {
                line,
                msg: format!("expected 10 fields, got {}", f.len()),
            });
        }
        let timestamp = parse_timestamp(f[0], line)?;
        let rec = PhenotypeRecord {
            timestamp,
            object_id: parse_field(f[1], line, "object_id")?,
            mean_r: parse_field(f[2], line, "mean_r")?,
            mean_g: parse_field(f[3], line, "mean_g")?,
            mean_b: parse_field(f[4], line, "mean_b")?,
            mask_area: parse_field(f[5], line, "mask_area")?,
            mask_height: parse_field(f[6], line, "mask_height")?,
            mask_width: parse_field(f[7], line, "mask_width")?,
            area_to_height: parse_field(f[8], line, "area_to_height")?,
            height_to_width: parse_field(f[9], line, "height_to_width")?,
        };
        for (name, v) in [
            ("mean_r", rec.mean_r),
            ("mean_g", rec.mean_g),
            ("mean_b", rec.mean_b),
        ] {
            check_range(v, 0.0, 255.0, line, name)?;
        }
        if rec.mask_area < 1 || rec.mask_height < 1 || rec.mask_width < 1 {
            return Err(FusionError::Parse {
                line,
                msg: "mask_area, mask_height, mask_width must be >= 1".into(),
            });
        }
        if rec.mask_area > rec.mask_height as u64 * rec.mask_width as u64 {
            return Err(FusionError::Parse {
                line,
                msg: "mask_area exceeds bounding box".into(),
            });
        }
        rows.push((timestamp, rec));
    }
    sort_and_check_unique(&mut rows)?;
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

/// Loads both input streams with strict typing and sorted, duplicate-free
/// timestamps.
pub fn load_streams(
    env_path: &Path,
    pheno_path: &Path,
) -> Result<(Vec<EnvRecord>, Vec<PhenotypeRecord>), FusionError> {
    Ok((read_env_csv(env_path)?, read_pheno_csv(pheno_path)?))
}

/// Aligns both streams onto a regular grid spanning their time intersection.
/// Phenotype channels take the in-bucket mean of samples in [t, t+step);
/// environment channels take the nearest sample within 1.5 grid steps, else
/// are marked missing.
pub fn align_streams(
    env: &[EnvRecord],
    pheno: &[PhenotypeRecord],
    step_seconds: u64,
) -> Result<FusedSeries, FusionError> {
    assert!(step_seconds > 0);
    if env.is_empty() || pheno.is_empty() {
        return Err(FusionError::NoOverlap);
    }
    let start = env[0].timestamp.max(pheno[0].timestamp);
    let end = env[env.len() - 1]
        .timestamp
        .min(pheno[pheno.len() - 1].timestamp);
    if end < start {
        return Err(FusionError::NoOverlap);
    }
    let n = ((end - start).num_seconds() as u64 / step_seconds) as usize + 1;

    let mut channels: Vec<Channel> = FULL_CHANNELS
        .iter()
        .map(|name| Channel::new(*name, n))
        .collect();

    // phenotype: in-bucket means over 8 derived fields
    let mut sums = vec![[0.0f64; 8]; n];
    let mut counts = vec![0u32; n];
    for r in pheno {
        if r.timestamp < start {
            continue;
        }
        let offset = (r.timestamp - start).num_seconds() as u64;
        let bucket = (offset / step_seconds) as usize;
        if bucket >= n {
            continue;
        }
        let fields = [
            r.mean_r,
            r.mean_g,
            r.mean_b,
            r.mask_area as f64,
            r.mask_height as f64,
            r.mask_width as f64,
            r.area_to_height,
            r.height_to_width,
        ];
        for (s, f) in sums[bucket].iter_mut().zip(fields) {
            *s += f;
        }
        counts[bucket] += 1;
    }
    for i in 0..n {
        if counts[i] == 0 {
            continue;
        }
        for (ch, sum) in channels[..8].iter_mut().zip(sums[i]) {
            ch.values[i] = sum / counts[i] as f64;
            ch.missing[i] = false;
        }
    }

    // environment: nearest sample within tolerance
    let tolerance = 1.5 * step_seconds as f64;
    let env_times: Vec<i64> = env.iter().map(|r| r.timestamp.timestamp()).collect();
    for i in 0..n {
        let t = start.timestamp() + (i as u64 * step_seconds) as i64;
        let p = env_times.partition_point(|&et| et < t);
        let mut best: Option<(f64, usize)> = None;
        for cand in [p.wrapping_sub(1), p] {
            if cand < env.len() {
                let dist = (env_times[cand] - t).abs() as f64;
                // strictly-closer wins; ties keep the earlier sample
                if best.map_or(true, |(bd, _)| dist < bd) {
                    best = Some((dist, cand));
                }
            }
        }
        if let Some((dist, idx)) = best {
            if dist <= tolerance {
                let r = &env[idx];
                let fields = [r.temp_c, r.rh_pct, r.light, r.voc_ppb, r.co2_ppm, r.pm25_ugm3];
                for (ch, f) in channels[8..].iter_mut().zip(fields) {
                    ch.values[i] = f;
                    ch.missing[i] = false;
                }
            }
        }
    }

    Ok(FusedSeries {
        start,
        step_seconds,
        channels,
    })
}

/// Fills interior gaps with a not-a-knot cubic spline per channel; leading and
/// trailing gaps hold the nearest observed value. Observed values are
/// untouched and all missing flags are cleared.
pub fn impute_spline(series: &FusedSeries) -> Result<FusedSeries, FusionError> {
    let imputed = crate::exec::try_map_collect(
        series.channels.clone(),
        |ch| -> Result<Channel, FusionError> {
            if !ch.missing.iter().any(|&m| m) {
                return Ok(ch);
            }
            let observed: Vec<(usize, f64)> = ch
                .missing
                .iter()
                .enumerate()
                .filter(|(_, &m)| !m)
                .map(|(i, _)| (i, ch.values[i]))
                .collect();
            if observed.len() < 2 {
                return Err(FusionError::TooFewPoints {
                    channel: ch.name.clone(),
                    have: observed.len(),
                });
            }
            let xs: Vec<f64> = observed.iter().map(|(i, _)| *i as f64).collect();
            let ys: Vec<f64> = observed.iter().map(|(_, v)| *v).collect();
            let spline = CubicSpline::fit(&xs, &ys)?;
            let first_obs = observed[0].0;
            let last_obs = observed[observed.len() - 1].0;

            let mut values = ch.values.clone();
            for (i, v) in values.iter_mut().enumerate() {
                if !ch.missing[i] {
                    continue;
                }
                *v = if i < first_obs {
                    observed[0].1
                } else if i > last_obs {
                    observed[observed.len() - 1].1
                } else {
                    spline.eval(i as f64)
                };
            }
            Ok(Channel {
                name: ch.name,
                values,
                missing: vec![false; ch.missing.len()],
                stats: ch.stats,
            })
        },
    )?;
    Ok(FusedSeries {
        start: series.start,
        step_seconds: series.step_seconds,
        channels: imputed,
    })
}

/// Drops the raw size channels and keeps the combo's channel selection.
/// mean_g stays as the forecast target; everything else retained becomes a
/// covariate.
pub fn engineer_features(
    series: &FusedSeries,
    combo: FeatureCombo,
) -> Result<FusedSeries, FusionError> {
    let retained = combo.retained_channels();
    let channels = retained
        .iter()
        .map(|name| {
            series
                .channel(name)
                .cloned()
                .ok_or_else(|| FusionError::MissingChannel((*name).to_string()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(FusedSeries {
        start: series.start,
        step_seconds: series.step_seconds,
        channels,
    })
}

/// Per-channel z-score. With `stats` supplied (validation/test), they are
/// applied unchanged; otherwise population statistics are computed from the
/// series itself. Constant channels map to zero with std recorded as 1.
pub fn normalize(
    series: &FusedSeries,
    stats: Option<&[NormStats]>,
) -> Result<FusedSeries, FusionError> {
    if let Some(s) = stats {
        if s.len() != series.channels.len() {
            return Err(FusionError::MissingChannel(format!(
                "normalization stats for {} channels, series has {}",
                s.len(),
                series.channels.len()
            )));
        }
    }
    let channels = series
        .channels
        .iter()
        .enumerate()
        .map(|(idx, ch)| {
            let st = match stats {
                Some(s) => s[idx],
                None => {
                    let n = ch.values.len() as f64;
                    let mean = ch.values.iter().sum::<f64>() / n;
                    let var = ch.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                    let std = var.sqrt();
                    NormStats {
                        mean,
                        std: if std == 0.0 { 1.0 } else { std },
                    }
                }
            };
            Channel {
                name: ch.name.clone(),
                values: ch.values.iter().map(|v| (v - st.mean) / st.std).collect(),
                missing: ch.missing.clone(),
                stats: Some(st),
            }
        })
        .collect();
    Ok(FusedSeries {
        start: series.start,
        step_seconds: series.step_seconds,
        channels,
    })
}

/// Contiguous 70/15/15 split by time, no shuffling.
pub fn split_series(series: &FusedSeries) -> (FusedSeries, FusedSeries, FusedSeries) {
    let n = series.len();
    let t = n * 70 / 100;
    let v = n * 85 / 100;
    (series.slice(0, t), series.slice(t, v), series.slice(v, n))
}

/// Writes the fused series as CSV: `timestamp` then the channel names.
pub fn write_fused_csv<W: Write>(series: &FusedSeries, mut w: W) -> Result<(), FusionError> {
    debug_assert!(
        series
            .channels
            .iter()
            .all(|c| !c.missing.iter().any(|&m| m)),
        "write after imputation"
    );
    let names = series.channel_names().join(",");
    writeln!(w, "timestamp,{names}")?;
    for i in 0..series.len() {
        write!(w, "{}", format_utc(series.timestamp(i)))?;
        for ch in &series.channels {
            write!(w, ",{:.6}", ch.values[i])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Reads a fused CSV back into a series (no missing values, no stats). The
/// grid step is inferred from the first two rows and must be uniform.
pub fn read_fused_csv(path: &Path) -> Result<FusedSeries, FusionError> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| FusionError::SchemaMismatch {
        expected: "timestamp,<channels>".into(),
        got: "<empty file>".into(),
    })?;
    let head_fields = split_line(header);
    if head_fields.first() != Some(&"timestamp") || head_fields.len() < 2 {
        return Err(FusionError::SchemaMismatch {
            expected: "timestamp,<channels>".into(),
            got: header.to_string(),
        });
    }
    let names: Vec<String> = head_fields[1..].iter().map(|s| s.to_string()).collect();
    let mut times: Vec<DateTime<Utc>> = Vec::new();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for (idx, raw) in lines {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = split_line(raw);
        if f.len() != names.len() + 1 {
            return Err(FusionError::Parse {
                line,
                msg: format!("expected {} fields, got {}", names.len() + 1, f.len()),
            });
        }
        times.push(parse_timestamp(f[0], line)?);
        for (col, v) in columns.iter_mut().zip(&f[1..]) {
            col.push(parse_field(v, line, "value")?);
        }
    }
    if times.len() < 2 {
        return Err(FusionError::Parse {
            line: 0,
            msg: "need at least 2 rows to infer the grid step".into(),
        });
    }
    let step = (times[1] - times[0]).num_seconds();
    if step <= 0 {
        return Err(FusionError::NonMonotonic {
            timestamp: format_utc(times[1]),
        });
    }
    for (i, pair) in times.windows(2).enumerate() {
        if (pair[1] - pair[0]).num_seconds() != step {
            return Err(FusionError::Parse {
                line: i + 3,
                msg: "grid step is not uniform".into(),
            });
        }
    }
    let n = times.len();
    Ok(FusedSeries {
        start: times[0],
        step_seconds: step as u64,
        channels: names
            .into_iter()
            .zip(columns)
            .map(|(name, values)| Channel {
                name,
                values,
                missing: vec![false; n],
                stats: None,
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap()
    }

    fn env_at(seconds: i64, temp: f64) -> EnvRecord {
        EnvRecord {
            timestamp: t0() + Duration::seconds(seconds),
            temp_c: temp,
            rh_pct: 50.0,
            light: 300.0,
            voc_ppb: 100.0,
            co2_ppm: 600.0,
            pm25_ugm3: 5.0,
        }
    }

    fn pheno_at(seconds: i64, g: f64) -> PhenotypeRecord {
        PhenotypeRecord {
            timestamp: t0() + Duration::seconds(seconds),
            object_id: 0,
            mean_r: 80.0,
            mean_g: g,
            mean_b: 60.0,
            mask_area: 100,
            mask_height: 20,
            mask_width: 10,
            area_to_height: 5.0,
            height_to_width: 2.0,
        }
    }

    #[test]
    fn header_only_files_load_empty() {
        let dir = tempfile::tempdir().unwrap();
        let env = dir.path().join("env.csv");
        let ph = dir.path().join("pheno.csv");
        std::fs::write(&env, format!("{ENV_CSV_HEADER}\n")).unwrap();
        std::fs::write(&ph, format!("{}\n", crate::pheno::PHENO_CSV_HEADER)).unwrap();
        let (e, p) = load_streams(&env, &ph).unwrap();
        assert!(e.is_empty() && p.is_empty());
    }

    #[test]
    fn humidity_range_violation_is_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let env = dir.path().join("env.csv");
        std::fs::write(
            &env,
            format!("{ENV_CSV_HEADER}\n2024-01-01T00:00:00Z,20.0,150.0,1.0,1.0,1.0,1.0\n"),
        )
        .unwrap();
        match read_env_csv(&env) {
            Err(FusionError::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("rh_pct"), "{msg}");
            }
            other => panic!("expected range parse error, got {other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_schema_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let env = dir.path().join("env.csv");
        std::fs::write(&env, "time,temp\n").unwrap();
        assert!(matches!(
            read_env_csv(&env),
            Err(FusionError::SchemaMismatch { .. })
        ));
    }

    #[test]
    fn duplicate_timestamps_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let env = dir.path().join("env.csv");
        let row = "2024-01-01T00:00:00Z,20.0,50.0,1.0,1.0,1.0,1.0";
        std::fs::write(&env, format!("{ENV_CSV_HEADER}\n{row}\n{row}\n")).unwrap();
        assert!(matches!(
            read_env_csv(&env),
            Err(FusionError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn pheno_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pheno.csv");
        let records: Vec<PhenotypeRecord> = (0..1000)
            .map(|i| {
                let mut r = pheno_at(i * 10, 120.0 + (i as f64 * 0.321).sin() * 40.0);
                r.mean_r = 10.0 + (i as f64 * 0.17).cos().abs() * 200.0;
                r.mask_area = 50 + (i as u64 % 140);
                r.mask_height = 14 + (i % 7) as u32;
                r.mask_width = 15 + (i % 5) as u32;
                let (ah, hw) =
                    crate::pheno::derive_ratios(r.mask_area, r.mask_height, r.mask_width).unwrap();
                r.area_to_height = ah;
                r.height_to_width = hw;
                r
            })
            .collect();
        crate::pheno::write_pheno_csv_file(&records, &path).unwrap();
        let back = read_pheno_csv(&path).unwrap();
        assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            assert_eq!(a.timestamp, b.timestamp);
            assert_eq!(a.mask_area, b.mask_area);
            assert!((a.mean_r - b.mean_r).abs() < 1e-6);
            assert!((a.mean_g - b.mean_g).abs() < 1e-6);
            assert!((a.area_to_height - b.area_to_height).abs() < 1e-6);
            assert!((a.height_to_width - b.height_to_width).abs() < 1e-6);
        }
    }

    #[test]
    fn bucket_mean_of_ten_second_samples() {
        // mean_g = 1..6 at 00:00:00 +10s ... +50s on a 60 s grid -> 3.5
        let pheno: Vec<PhenotypeRecord> = (0..6)
            .map(|i| pheno_at(i * 10, (i + 1) as f64))
            .collect();
        let env = vec![env_at(0, 20.0), env_at(60, 21.0)];
        let fused = align_streams(&env, &pheno, 60).unwrap();
        let g = fused.channel("mean_g").unwrap();
        assert_eq!(g.values[0], 3.5);
        assert!(!g.missing[0]);
    }

    #[test]
    fn env_sample_on_grid_instant_taken_verbatim() {
        let env = vec![env_at(0, 23.75), env_at(60, 19.5)];
        let pheno = vec![pheno_at(0, 100.0), pheno_at(60, 110.0)];
        let fused = align_streams(&env, &pheno, 60).unwrap();
        let temp = fused.channel("temp_c").unwrap();
        assert_eq!(temp.values[0], 23.75);
        assert_eq!(temp.values[1], 19.5);
    }

    #[test]
    fn env_gap_marks_consecutive_missing() {
        // env samples at 0 and 660 s; 60 s grid; tolerance 90 s
        // -> instants 120..=540 s (indices 2..=9) unmatched
        let env = vec![env_at(0, 20.0), env_at(660, 25.0)];
        let pheno: Vec<PhenotypeRecord> = (0..12).map(|i| pheno_at(i * 60, 100.0)).collect();
        let fused = align_streams(&env, &pheno, 60).unwrap();
        let temp = fused.channel("temp_c").unwrap();
        let missing_count = temp.missing.iter().filter(|&&m| m).count();
        assert_eq!(missing_count, 8);
        assert!(!temp.missing[0] && !temp.missing[1]);
        assert!(!temp.missing[10] && !temp.missing[11]);
        assert!(temp.missing[2] && temp.missing[9]);
    }

    #[test]
    fn no_overlap_is_an_error() {
        let env = vec![env_at(0, 20.0)];
        let pheno = vec![pheno_at(86_400, 100.0)];
        assert!(matches!(
            align_streams(&env, &pheno, 60),
            Err(FusionError::NoOverlap)
        ));
    }

    fn series_with_gaps(values: &[f64], missing_at: &[usize]) -> FusedSeries {
        let n = values.len();
        let mut missing = vec![false; n];
        for &i in missing_at {
            missing[i] = true;
        }
        FusedSeries {
            start: t0(),
            step_seconds: 60,
            channels: vec![Channel {
                name: "mean_g".into(),
                values: values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| if missing[i] { f64::NAN } else { v })
                    .collect(),
                missing,
                stats: None,
            }],
        }
    }

    #[test]
    fn spline_fills_linear_gap_exactly() {
        let values: Vec<f64> = (0..8).map(|t| 2.0 * t as f64 + 1.0).collect();
        let series = series_with_gaps(&values, &[3]);
        let imputed = impute_spline(&series).unwrap();
        let ch = imputed.channel("mean_g").unwrap();
        assert!((ch.values[3] - 7.0).abs() < 1e-12);
        assert!(!ch.missing.iter().any(|&m| m));
    }

    #[test]
    fn spline_fills_cubic_gap_within_tolerance() {
        let f = |t: f64| t * t * t;
        let values: Vec<f64> = (0..9).map(|t| f(t as f64)).collect();
        let series = series_with_gaps(&values, &[4]);
        let imputed = impute_spline(&series).unwrap();
        assert!((imputed.channel("mean_g").unwrap().values[4] - f(4.0)).abs() < 1e-9);
    }

    #[test]
    fn observed_values_bit_unchanged_and_identity_without_gaps() {
        let values: Vec<f64> = (0..10).map(|t| (t as f64 * 0.7).sin() * 13.0).collect();
        let series = series_with_gaps(&values, &[]);
        let imputed = impute_spline(&series).unwrap();
        assert_eq!(imputed, series);

        let gappy = series_with_gaps(&values, &[2, 7]);
        let filled = impute_spline(&gappy).unwrap();
        for i in [0usize, 1, 3, 4, 5, 6, 8, 9] {
            assert_eq!(
                filled.channel("mean_g").unwrap().values[i].to_bits(),
                values[i].to_bits()
            );
        }
    }

    #[test]
    fn edge_gaps_hold_nearest_value() {
        let values = [f64::NAN, 5.0, 6.0, 7.0, 8.0, f64::NAN, f64::NAN];
        let series = series_with_gaps(&values, &[0, 5, 6]);
        let imputed = impute_spline(&series).unwrap();
        let ch = imputed.channel("mean_g").unwrap();
        assert_eq!(ch.values[0], 5.0);
        assert_eq!(ch.values[5], 8.0);
        assert_eq!(ch.values[6], 8.0);
    }

    #[test]
    fn too_few_points_is_an_error() {
        let values = [1.0, f64::NAN, f64::NAN, f64::NAN];
        let series = series_with_gaps(&values, &[1, 2, 3]);
        assert!(matches!(
            impute_spline(&series),
            Err(FusionError::TooFewPoints { .. })
        ));
    }

    fn full_series(n: usize) -> FusedSeries {
        FusedSeries {
            start: t0(),
            step_seconds: 60,
            channels: FULL_CHANNELS
                .iter()
                .enumerate()
                .map(|(k, name)| Channel {
                    name: (*name).into(),
                    values: (0..n).map(|i| (i + k) as f64).collect(),
                    missing: vec![false; n],
                    stats: None,
                })
                .collect(),
        }
    }

    #[test]
    fn combo_channel_counts() {
        let series = full_series(5);
        assert_eq!(
            engineer_features(&series, FeatureCombo::Rgb).unwrap().channels.len(),
            3
        );
        assert_eq!(
            engineer_features(&series, FeatureCombo::RgbRatios).unwrap().channels.len(),
            5
        );
        assert_eq!(
            engineer_features(&series, FeatureCombo::RgbEnv).unwrap().channels.len(),
            9
        );
        let all = engineer_features(&series, FeatureCombo::RgbRatiosEnv).unwrap();
        assert_eq!(all.channels.len(), 11);
        // raw size channels always dropped
        assert!(all.channel("mask_area").is_none());
        assert!(all.channel("mask_height").is_none());
        assert!(all.channel("mask_width").is_none());
    }

    #[test]
    fn rgb_channels_are_subset_of_full_combo() {
        let series = full_series(4);
        let rgb = engineer_features(&series, FeatureCombo::Rgb).unwrap();
        let full = engineer_features(&series, FeatureCombo::RgbRatiosEnv).unwrap();
        for name in rgb.channel_names() {
            assert!(full.channel(name).is_some());
        }
    }

    #[test]
    fn missing_channel_guard() {
        let mut series = full_series(4);
        series.channels.retain(|c| c.name != "voc_ppb");
        assert!(matches!(
            engineer_features(&series, FeatureCombo::RgbEnv),
            Err(FusionError::MissingChannel(name)) if name == "voc_ppb"
        ));
    }

    #[test]
    fn normalize_z_scores() {
        let series = series_with_gaps(&[1.0, 2.0, 3.0], &[]);
        let normed = normalize(&series, None).unwrap();
        let ch = normed.channel("mean_g").unwrap();
        let r = 1.224_744_871_391_589;
        assert!((ch.values[0] + r).abs() < 1e-12);
        assert!(ch.values[1].abs() < 1e-12);
        assert!((ch.values[2] - r).abs() < 1e-12);
        let st = ch.stats.unwrap();
        assert_eq!(st.mean, 2.0);
        assert!((st.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn constant_channel_maps_to_zero_with_unit_std() {
        let series = series_with_gaps(&[5.0, 5.0, 5.0], &[]);
        let normed = normalize(&series, None).unwrap();
        let ch = normed.channel("mean_g").unwrap();
        assert_eq!(ch.values, vec![0.0, 0.0, 0.0]);
        assert_eq!(ch.stats.unwrap().std, 1.0);
    }

    #[test]
    fn normalize_inverse_round_trip() {
        let vals: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin() * 7.0 + 42.0).collect();
        let series = series_with_gaps(&vals, &[]);
        let normed = normalize(&series, None).unwrap();
        let ch = normed.channel("mean_g").unwrap();
        let st = ch.stats.unwrap();
        for (norm, orig) in ch.values.iter().zip(&vals) {
            assert!((norm * st.std + st.mean - orig).abs() < 1e-12);
        }
        // training stats on non-constant channels give mean 0, std 1
        let n = ch.values.len() as f64;
        let mean = ch.values.iter().sum::<f64>() / n;
        let var = ch.values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-9);
        assert!((var.sqrt() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn supplied_stats_are_applied_unchanged() {
        let series = series_with_gaps(&[10.0, 20.0], &[]);
        let stats = [NormStats { mean: 10.0, std: 5.0 }];
        let normed = normalize(&series, Some(&stats)).unwrap();
        assert_eq!(normed.channel("mean_g").unwrap().values, vec![0.0, 2.0]);
    }

    #[test]
    fn pipeline_is_deterministic() {
        let env: Vec<EnvRecord> = (0..30).map(|i| env_at(i * 60, 20.0 + (i % 5) as f64)).collect();
        let pheno: Vec<PhenotypeRecord> =
            (0..170).map(|i| pheno_at(i * 10, 100.0 + (i % 13) as f64)).collect();
        let run = || {
            let aligned = align_streams(&env, &pheno, 60).unwrap();
            let imputed = impute_spline(&aligned).unwrap();
            let eng = engineer_features(&imputed, FeatureCombo::RgbRatiosEnv).unwrap();
            normalize(&eng, None).unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        for ch in &a.channels {
            for (x, y) in ch.values.iter().zip(&b.channel(&ch.name).unwrap().values) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn split_proportions_and_continuity() {
        let series = full_series(100);
        let (train, val, test) = split_series(&series);
        assert_eq!(train.len(), 70);
        assert_eq!(val.len(), 15);
        assert_eq!(test.len(), 15);
        assert_eq!(val.start, train.timestamp(70));
    }

    #[test]
    fn fused_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("fused.csv");
        let series = full_series(7);
        let eng = engineer_features(&series, FeatureCombo::RgbRatios).unwrap();
        let mut buf = Vec::new();
        write_fused_csv(&eng, &mut buf).unwrap();
        std::fs::write(&path, &buf).unwrap();
        let back = read_fused_csv(&path).unwrap();
        assert_eq!(back.channel_names(), eng.channel_names());
        assert_eq!(back.len(), eng.len());
        assert_eq!(back.step_seconds, 60);
        for (a, b) in back.channels.iter().zip(&eng.channels) {
            for (x, y) in a.values.iter().zip(&b.values) {
                assert!((x - y).abs() < 1e-6);
            }
        }
    }
}
