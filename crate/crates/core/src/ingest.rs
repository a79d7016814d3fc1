//! Observation files, births tables, VR variances and incomplete-VR
//! selection.
//!
//! The observation CSV has the header
//!
//! ```text
//! country_code,ref_year,u5mr,series_id,source_type,survey_year,reported_se,vr_status,births,deaths
//! ```
//!
//! Optional columns may be left empty. `source_type` takes the labels of
//! [`SourceType`] plus `svr` for sample vital registration.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Observation, SeriesMeta, SourceType, VrStatus};

pub const COLUMNS: [&str; 10] = [
    "country_code",
    "ref_year",
    "u5mr",
    "series_id",
    "source_type",
    "survey_year",
    "reported_se",
    "vr_status",
    "births",
    "deaths",
];

/// Minimum stochastic standard error for VR observations.
pub const VR_SD_FLOOR: f64 = 0.025;
/// Standard error for sample registration without sampled-birth counts.
pub const SVR_DEFAULT_SD: f64 = 0.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SchemaConfig {
    pub delimiter: char,
    /// Reject repeated-source rows without a survey date.
    pub require_survey_year: bool,
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self {
            delimiter: ',',
            require_survey_year: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RejectReason {
    Malformed { column: &'static str, value: String },
    MissingField(&'static str),
    NonpositiveRate,
    UnknownSourceType(String),
    UnknownVrStatus(String),
    DuplicateReference { series: String, year: f64 },
    SurveyBeforeReference,
    VrStatusWithoutVr,
    MissingSurveyYear,
    InconsistentSeries(String),
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RejectReason::Malformed { column, value } => {
                write!(f, "malformed numeric field `{column}`: `{value}`")
            }
            RejectReason::MissingField(c) => write!(f, "missing required field `{c}`"),
            RejectReason::NonpositiveRate => f.write_str("nonpositive rate"),
            RejectReason::UnknownSourceType(s) => write!(f, "unknown source_type `{s}`"),
            RejectReason::UnknownVrStatus(s) => write!(f, "unknown vr_status `{s}`"),
            RejectReason::DuplicateReference { series, year } => {
                write!(f, "duplicate reference year {year} in series `{series}`")
            }
            RejectReason::SurveyBeforeReference => f.write_str("survey_year before ref_year"),
            RejectReason::VrStatusWithoutVr => f.write_str("vr_status complete/incomplete on a non-VR source"),
            RejectReason::MissingSurveyYear => f.write_str("repeated-source observation without survey_year"),
            RejectReason::InconsistentSeries(s) => {
                write!(f, "series `{s}` mixes countries or source types")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rejection {
    /// Line number in the file (header is line 1).
    pub line: usize,
    pub reason: RejectReason,
}

#[derive(Debug, Clone, Default)]
pub struct ParsedData {
    pub observations: Vec<Observation>,
    pub series: Vec<SeriesMeta>,
    pub rejections: Vec<Rejection>,
}

pub fn parse_observations(path: &Path, schema: &SchemaConfig) -> Result<ParsedData> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_observations_from(file, path, schema)
}

pub fn parse_observations_from<R: Read>(reader: R, path: &Path, schema: &SchemaConfig) -> Result<ParsedData> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(schema.delimiter as u8)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| Error::csv(path, e))?.clone();
    let mut col = HashMap::new();
    for name in COLUMNS {
        match headers.iter().position(|h| h == name) {
            Some(i) => {
                col.insert(name, i);
            }
            None => {
                return Err(Error::Header {
                    path: path.to_path_buf(),
                    column: name.to_string(),
                })
            }
        }
    }

    let mut out = ParsedData::default();
    let mut seen: HashSet<(String, u64)> = HashSet::new();
    let mut series: HashMap<String, (String, SourceType)> = HashMap::new();

    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| Error::csv(path, e))?;
        let field = |name: &str| rec.get(col[name]).unwrap_or("").trim();
        match parse_row(&field, schema) {
            Ok(obs) => {
                let key = (obs.series_id.clone(), obs.ref_year.to_bits());
                if seen.contains(&key) {
                    out.rejections.push(Rejection {
                        line,
                        reason: RejectReason::DuplicateReference {
                            series: obs.series_id.clone(),
                            year: obs.ref_year,
                        },
                    });
                    continue;
                }
                let consistent = match series.get(&obs.series_id) {
                    Some((c, d)) => *c == obs.country && *d == obs.source_type,
                    None => true,
                };
                if !consistent {
                    out.rejections.push(Rejection {
                        line,
                        reason: RejectReason::InconsistentSeries(obs.series_id.clone()),
                    });
                    continue;
                }
                seen.insert(key);
                series
                    .entry(obs.series_id.clone())
                    .or_insert((obs.country.clone(), obs.source_type));
                out.observations.push(obs);
            }
            Err(reason) => out.rejections.push(Rejection { line, reason }),
        }
    }

    out.series = series_meta(&out.observations);
    Ok(out)
}

/// Series metadata derived from observations, sorted by series id. A DHS,
/// Other DHS or MICS series counts as "with reported sampling errors" when
/// every one of its observations carries a standard error.
pub fn series_meta(observations: &[Observation]) -> Vec<SeriesMeta> {
    let mut series: BTreeMap<&str, (&str, SourceType, bool)> = BTreeMap::new();
    for o in observations {
        let e = series
            .entry(o.series_id.as_str())
            .or_insert((o.country.as_str(), o.source_type, true));
        e.2 &= o.reported_se.is_some();
    }
    series
        .into_iter()
        .map(|(id, (country, d, all_se))| SeriesMeta {
            series_id: id.to_string(),
            country: country.to_string(),
            source_type: d,
            subtype: d.subtype(all_se),
            repeated: d.is_repeated(),
        })
        .collect()
}

fn parse_row<'a>(
    field: &impl Fn(&str) -> &'a str,
    schema: &SchemaConfig,
) -> std::result::Result<Observation, RejectReason> {
    fn req<'a>(v: &'a str, name: &'static str) -> std::result::Result<&'a str, RejectReason> {
        if v.is_empty() {
            Err(RejectReason::MissingField(name))
        } else {
            Ok(v)
        }
    }
    fn num(v: &str, name: &'static str) -> std::result::Result<f64, RejectReason> {
        v.parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or(RejectReason::Malformed {
                column: name,
                value: v.to_string(),
            })
    }
    fn opt(v: &str, name: &'static str) -> std::result::Result<Option<f64>, RejectReason> {
        if v.is_empty() || v.eq_ignore_ascii_case("na") {
            Ok(None)
        } else {
            num(v, name).map(Some)
        }
    }

    let country = req(field("country_code"), "country_code")?.to_string();
    let ref_year = num(req(field("ref_year"), "ref_year")?, "ref_year")?;
    let u5mr = num(req(field("u5mr"), "u5mr")?, "u5mr")?;
    if u5mr <= 0.0 {
        return Err(RejectReason::NonpositiveRate);
    }
    let series_id = req(field("series_id"), "series_id")?.to_string();
    let st = req(field("source_type"), "source_type")?;
    let (source_type, sample_vr) = if st == "svr" {
        (SourceType::Vr, true)
    } else {
        let d = st
            .parse::<SourceType>()
            .map_err(|_| RejectReason::UnknownSourceType(st.to_string()))?;
        (d, false)
    };
    let survey_year = opt(field("survey_year"), "survey_year")?;
    let reported_se = opt(field("reported_se"), "reported_se")?;
    let vr_raw = field("vr_status");
    let vr_status = if vr_raw.is_empty() {
        if source_type == SourceType::Vr {
            VrStatus::Complete
        } else {
            VrStatus::NotVr
        }
    } else {
        vr_raw
            .parse::<VrStatus>()
            .map_err(|_| RejectReason::UnknownVrStatus(vr_raw.to_string()))?
    };
    if vr_status != VrStatus::NotVr && source_type != SourceType::Vr {
        return Err(RejectReason::VrStatusWithoutVr);
    }
    let vr_status = if source_type == SourceType::Vr && vr_status == VrStatus::NotVr {
        VrStatus::Complete
    } else {
        vr_status
    };
    if let Some(s) = survey_year {
        if s < ref_year {
            return Err(RejectReason::SurveyBeforeReference);
        }
    }
    if schema.require_survey_year && source_type.is_repeated() && survey_year.is_none() {
        return Err(RejectReason::MissingSurveyYear);
    }
    let births = opt(field("births"), "births")?;
    let deaths = opt(field("deaths"), "deaths")?;
    Ok(Observation {
        country,
        ref_year,
        u5mr,
        log_u5mr: u5mr.ln(),
        series_id,
        source_type,
        sample_vr,
        survey_year,
        reported_se,
        vr_status,
        births,
        deaths,
    })
}

pub fn write_observations<W: Write>(w: W, observations: &[Observation]) -> Result<()> {
    let path = Path::new("<writer>");
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(COLUMNS).map_err(|e| Error::csv(path, e))?;
    let opt = |x: Option<f64>| x.map(|v| format!("{v}")).unwrap_or_default();
    for o in observations {
        let st = if o.sample_vr {
            "svr".to_string()
        } else {
            o.source_type.to_string()
        };
        wtr.write_record([
            o.country.clone(),
            format!("{}", o.ref_year),
            format!("{}", o.u5mr),
            o.series_id.clone(),
            st,
            opt(o.survey_year),
            opt(o.reported_se),
            o.vr_status.to_string(),
            opt(o.births),
            opt(o.deaths),
        ])
        .map_err(|e| Error::csv(path, e))?;
    }
    wtr.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Live births by (country, calendar year).
#[derive(Debug, Clone, Default)]
pub struct BirthsTable {
    births: HashMap<(String, i32), f64>,
}

impl BirthsTable {
    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            country: String,
            year: i32,
            births: f64,
        }
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::csv(path, e))?;
        let mut births = HashMap::new();
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| Error::csv(path, e))?;
            if !(row.births > 0.0) {
                return Err(Error::Data(format!(
                    "nonpositive births for {} {}",
                    row.country, row.year
                )));
            }
            births.insert((row.country, row.year), row.births);
        }
        Ok(Self { births })
    }

    pub fn insert(&mut self, country: &str, year: i32, births: f64) {
        self.births.insert((country.to_string(), year), births);
    }

    pub fn get(&self, country: &str, year: i32) -> Option<f64> {
        self.births.get(&(country.to_string(), year)).copied()
    }

    /// Fill missing births on VR observations from the table.
    pub fn attach(&self, observations: &mut [Observation]) {
        for o in observations.iter_mut().filter(|o| o.is_vr() && o.births.is_none()) {
            o.births = self.get(&o.country, o.ref_year.floor() as i32);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VrSystem {
    Registration,
    SampleRegistration,
}

/// Stochastic standard deviation of a VR observation on the log scale.
///
/// With births known this is the delta-method Poisson approximation
/// `1/sqrt(deaths)`, using expected deaths `births·u5mr/1000` when the
/// deaths count is absent, floored at [`VR_SD_FLOOR`]. Sample registration
/// without births uses [`SVR_DEFAULT_SD`].
pub fn vr_stochastic_sd(
    births: Option<f64>,
    deaths: Option<f64>,
    u5mr: f64,
    system: VrSystem,
    reported_se: Option<f64>,
) -> Result<f64> {
    if let Some(b) = births.filter(|b| *b > 0.0) {
        let d = deaths.filter(|d| *d > 0.0).unwrap_or(b * u5mr / 1000.0);
        return Ok((1.0 / d.sqrt()).max(VR_SD_FLOOR));
    }
    if let Some(se) = reported_se {
        return Ok(se.max(VR_SD_FLOOR));
    }
    match system {
        VrSystem::SampleRegistration => Ok(SVR_DEFAULT_SD),
        VrSystem::Registration => Err(Error::Data("missing births".into())),
    }
}

pub fn observation_vr_sd(o: &Observation) -> Result<f64> {
    let system = if o.sample_vr {
        VrSystem::SampleRegistration
    } else {
        VrSystem::Registration
    };
    vr_stochastic_sd(o.births, o.deaths, o.u5mr, system, o.reported_se).map_err(|_| Error::MissingBirths {
        series: o.series_id.clone(),
        year: o.ref_year,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatedVr {
    pub observation: Observation,
    pub years: usize,
    pub cv: f64,
    /// Residual period whose coefficient of variation stays above threshold.
    pub above_threshold: bool,
}

fn deaths_of(o: &Observation) -> Option<f64> {
    let b = o.births?;
    Some(o.deaths.unwrap_or(b * o.u5mr / 1000.0))
}

/// Merge consecutive single-year VR observations of one series, greedily
/// left to right, until each period's coefficient of variation
/// `1/sqrt(deaths)` is at most `cv_threshold`. Observations without births
/// pass through untouched.
pub fn aggregate_vr_periods(observations: &[Observation], cv_threshold: f64) -> Vec<AggregatedVr> {
    let mut sorted: Vec<&Observation> = observations.iter().collect();
    sorted.sort_by(|a, b| a.ref_year.total_cmp(&b.ref_year));

    let mut out = Vec::new();
    let mut group: Vec<&Observation> = Vec::new();

    let flush = |group: &mut Vec<&Observation>, out: &mut Vec<AggregatedVr>| {
        if group.is_empty() {
            return;
        }
        let births: f64 = group.iter().filter_map(|o| o.births).sum();
        let deaths: f64 = group.iter().filter_map(|o| deaths_of(o)).sum();
        let cv = 1.0 / deaths.sqrt();
        let observation = if group.len() == 1 {
            group[0].clone()
        } else {
            let first = group[0];
            let last = group[group.len() - 1];
            let u5mr = 1000.0 * deaths / births;
            Observation {
                ref_year: 0.5 * (first.ref_year + last.ref_year),
                u5mr,
                log_u5mr: u5mr.ln(),
                survey_year: group.iter().filter_map(|o| o.survey_year).reduce(f64::max),
                reported_se: None,
                births: Some(births),
                deaths: Some(deaths),
                ..first.clone()
            }
        };
        out.push(AggregatedVr {
            observation,
            years: group.len(),
            cv,
            above_threshold: cv > cv_threshold,
        });
        group.clear();
    };

    for o in sorted {
        if deaths_of(o).is_none() {
            flush(&mut group, &mut out);
            out.push(AggregatedVr {
                observation: o.clone(),
                years: 1,
                cv: f64::NAN,
                above_threshold: false,
            });
            continue;
        }
        if let Some(prev) = group.last() {
            if o.ref_year - prev.ref_year > 1.0 + 1e-9 {
                flush(&mut group, &mut out);
            }
        }
        group.push(o);
        let deaths: f64 = group.iter().filter_map(|o| deaths_of(o)).sum();
        if 1.0 / deaths.sqrt() <= cv_threshold {
            flush(&mut group, &mut out);
        }
    }
    flush(&mut group, &mut out);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSpec {
    /// Minimum completeness `m` of the VR data; adds the upper bound
    /// `L − log m`.
    pub min_completeness: Option<f64>,
    /// Reference years of the bound observations. Defaults to the most
    /// recent incomplete VR observation.
    pub years: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IncompleteVrConfig {
    pub countries: Vec<String>,
    pub trend_year: f64,
    pub trend_window: (f64, f64),
    pub bounds: BTreeMap<String, BoundSpec>,
}

impl Default for IncompleteVrConfig {
    fn default() -> Self {
        Self {
            countries: ["ARM", "AZE", "GEO", "KAZ", "KGZ", "MDA", "TJK", "TKM", "UKR", "UZB"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            trend_year: 1990.0,
            trend_window: (1991.0, 1995.0),
            bounds: BTreeMap::new(),
        }
    }
}

impl IncompleteVrConfig {
    pub fn is_flagged(&self, country: &str) -> bool {
        self.countries.iter().any(|c| c == country)
    }

    pub fn validate(&self) -> Result<()> {
        for (c, b) in &self.bounds {
            if let Some(m) = b.min_completeness {
                if !(m > 0.0 && m <= 1.0) {
                    return Err(Error::Config(format!(
                        "min_completeness for {c} must be in (0, 1], got {m}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct IncompleteVrSelection {
    /// Indices into the country's observation slice.
    pub trend_obs: Vec<usize>,
    pub bound_obs: Vec<usize>,
    /// Per bound observation; `None` (or `m = 1`) gives a lower bound only.
    pub min_completeness: Vec<Option<f64>>,
    pub warnings: Vec<String>,
}

/// Pick the trend and bound observations among a flagged country's
/// incomplete VR data. `observations` holds one country's records.
pub fn select_incomplete_vr(observations: &[Observation], config: &IncompleteVrConfig) -> IncompleteVrSelection {
    let mut sel = IncompleteVrSelection::default();
    let Some(country) = observations.first().map(|o| o.country.as_str()) else {
        return sel;
    };
    if !config.is_flagged(country) {
        return sel;
    }
    let vr: Vec<usize> = observations
        .iter()
        .enumerate()
        .filter(|(_, o)| o.vr_status == VrStatus::Incomplete)
        .map(|(i, _)| i)
        .collect();

    let year = |i: usize| observations[i].ref_year;
    let in_year = |i: usize, y: f64| year(i).floor() == y.floor();

    // Several candidates in the anchor year: keep the midpoint closest to it.
    let anchor = vr
        .iter()
        .copied()
        .filter(|&i| in_year(i, config.trend_year))
        .min_by(|&a, &b| {
            (year(a) - config.trend_year)
                .abs()
                .total_cmp(&(year(b) - config.trend_year).abs())
        });
    let (w0, w1) = config.trend_window;
    let peak = vr
        .iter()
        .copied()
        .filter(|&i| year(i).floor() >= w0.floor() && year(i).floor() <= w1.floor())
        .max_by(|&a, &b| observations[a].u5mr.total_cmp(&observations[b].u5mr));
    sel.trend_obs.extend(anchor);
    sel.trend_obs.extend(peak);
    if sel.trend_obs.is_empty() {
        sel.warnings.push(format!(
            "{country}: flagged incomplete-VR country without VR data in {}-{}",
            config.trend_year, w1
        ));
    }

    if let Some(spec) = config.bounds.get(country) {
        let candidates: Vec<usize> = vr.iter().copied().filter(|i| !sel.trend_obs.contains(i)).collect();
        let chosen: Vec<usize> = match &spec.years {
            Some(years) => years
                .iter()
                .filter_map(|&y| {
                    candidates
                        .iter()
                        .copied()
                        .filter(|&i| (year(i) - y).abs() <= 1.0)
                        .min_by(|&a, &b| (year(a) - y).abs().total_cmp(&(year(b) - y).abs()))
                })
                .collect(),
            None => candidates
                .iter()
                .copied()
                .max_by(|&a, &b| year(a).total_cmp(&year(b)))
                .into_iter()
                .collect(),
        };
        if chosen.is_empty() {
            sel.warnings
                .push(format!("{country}: no incomplete VR observation for bounds"));
        }
        for i in chosen {
            if !sel.bound_obs.contains(&i) {
                sel.bound_obs.push(i);
                sel.min_completeness.push(spec.min_completeness);
            }
        }
    }
    sel
}
