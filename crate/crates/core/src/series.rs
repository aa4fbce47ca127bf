//! Weekly wastewater series: CSV ingestion, missingness and unit conversion.
//!
//! A [`WeeklySeries`] holds one slot per calendar week starting at
//! `start_date`. Weeks that were not sampled, rows with an empty value, zero
//! values and rows flagged below the limit of detection all become `None`.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scale factor between liters-per-day times gc/L and billions of gc/day.
pub const BILLION_INV: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Unit {
    /// Concentration, genome copies per liter.
    GcPerLiter,
    /// Load, billions of genome copies per day.
    BGcPerDay,
    Log10GcPerLiter,
    Log10BGcPerDay,
}

impl Unit {
    pub fn is_log10(self) -> bool {
        matches!(self, Unit::Log10GcPerLiter | Unit::Log10BGcPerDay)
    }

    pub fn log10(self) -> Unit {
        match self {
            Unit::GcPerLiter | Unit::Log10GcPerLiter => Unit::Log10GcPerLiter,
            Unit::BGcPerDay | Unit::Log10BGcPerDay => Unit::Log10BGcPerDay,
        }
    }

    pub fn linear(self) -> Unit {
        match self {
            Unit::GcPerLiter | Unit::Log10GcPerLiter => Unit::GcPerLiter,
            Unit::BGcPerDay | Unit::Log10BGcPerDay => Unit::BGcPerDay,
        }
    }
}

impl fmt::Display for Unit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Unit::GcPerLiter => "gc/L",
            Unit::BGcPerDay => "B gc/day",
            Unit::Log10GcPerLiter => "log10 gc/L",
            Unit::Log10BGcPerDay => "log10 B gc/day",
        };
        f.write_str(s)
    }
}

/// Median daily influent flow of a plant, liters per day.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    median_flow: f64,
}

impl FlowSpec {
    pub fn new(median_flow: f64) -> Result<Self> {
        if !(median_flow > 0.0 && median_flow.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "median flow must be positive, got {median_flow}"
            )));
        }
        Ok(Self { median_flow })
    }

    pub fn median_flow(&self) -> f64 {
        self.median_flow
    }

    /// Multiplier taking gc/L to B gc/day.
    pub fn load_factor(&self) -> f64 {
        self.median_flow * BILLION_INV
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeeklySeries {
    start_date: NaiveDate,
    values: Vec<Option<f64>>,
    unit: Unit,
    obs_sd: Option<Vec<f64>>,
}

impl WeeklySeries {
    /// Builds a series, enforcing the value invariants. Zero values become
    /// missing; negative or non-finite values are rejected.
    pub fn new(start_date: NaiveDate, values: Vec<Option<f64>>, unit: Unit) -> Result<Self> {
        let mut clean = Vec::with_capacity(values.len());
        for (week, v) in values.into_iter().enumerate() {
            clean.push(match v {
                None => None,
                Some(x) if unit.is_log10() => {
                    if !x.is_finite() {
                        return Err(Error::InvalidParameter(format!(
                            "non-finite log10 value at week {week}"
                        )));
                    }
                    Some(x)
                }
                Some(0.0) => None,
                Some(x) if x > 0.0 && x.is_finite() => Some(x),
                Some(x) => return Err(Error::NonPositive { week, value: x }),
            });
        }
        Ok(Self {
            start_date,
            values: clean,
            unit,
            obs_sd: None,
        })
    }

    /// Attaches per-week natural-log observation SDs.
    pub fn with_obs_sd(mut self, obs_sd: Vec<f64>) -> Result<Self> {
        if obs_sd.len() != self.values.len() {
            return Err(Error::Dimension(format!(
                "obs_sd has {} entries for {} weeks",
                obs_sd.len(),
                self.values.len()
            )));
        }
        if let Some((week, &s)) = obs_sd
            .iter()
            .enumerate()
            .find(|(_, s)| !(**s > 0.0 && s.is_finite()))
        {
            return Err(Error::NonPositive { week, value: s });
        }
        self.obs_sd = Some(obs_sd);
        Ok(self)
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn obs_sd(&self) -> Option<&[f64]> {
        self.obs_sd.as_deref()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn n_present(&self) -> usize {
        self.values.iter().filter(|v| v.is_some()).count()
    }

    pub fn date(&self, week: usize) -> NaiveDate {
        self.start_date + Duration::weeks(week as i64)
    }

    pub fn missing_weeks(&self) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.is_none().then_some(i))
            .collect()
    }

    /// Same dates and missingness, values multiplied by `factor` (> 0).
    pub fn scaled(&self, factor: f64, unit: Unit) -> Result<Self> {
        if !(factor > 0.0 && factor.is_finite()) || self.unit.is_log10() {
            return Err(Error::InvalidParameter(format!(
                "cannot rescale a {} series by {factor}",
                self.unit
            )));
        }
        Ok(Self {
            start_date: self.start_date,
            values: self.values.iter().map(|v| v.map(|x| x * factor)).collect(),
            unit,
            obs_sd: self.obs_sd.clone(),
        })
    }

    /// Concentration (gc/L) to load (B gc/day): `y = C * F * 1e-9`.
    pub fn to_load(&self, flow: &FlowSpec) -> Result<Self> {
        if self.unit != Unit::GcPerLiter {
            return Err(Error::UnitMismatch {
                expected: Unit::GcPerLiter,
                found: self.unit,
            });
        }
        self.scaled(flow.load_factor(), Unit::BGcPerDay)
    }

    pub fn to_log10(&self) -> Result<Self> {
        if self.unit.is_log10() {
            return Err(Error::UnitMismatch {
                expected: self.unit.linear(),
                found: self.unit,
            });
        }
        let mut values = Vec::with_capacity(self.values.len());
        for (week, v) in self.values.iter().enumerate() {
            values.push(match *v {
                None => None,
                Some(x) if x > 0.0 => Some(x.log10()),
                Some(x) => return Err(Error::NonPositive { week, value: x }),
            });
        }
        Ok(Self {
            start_date: self.start_date,
            values,
            unit: self.unit.log10(),
            obs_sd: self.obs_sd.clone(),
        })
    }

    pub fn from_log10(&self) -> Result<Self> {
        if !self.unit.is_log10() {
            return Err(Error::UnitMismatch {
                expected: self.unit.log10(),
                found: self.unit,
            });
        }
        Ok(Self {
            start_date: self.start_date,
            values: self.values.iter().map(|v| v.map(|x| 10f64.powf(x))).collect(),
            unit: self.unit.linear(),
            obs_sd: self.obs_sd.clone(),
        })
    }

    /// Writes `date,value[,obs_sd]`; missing weeks get an empty value cell.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        match &self.obs_sd {
            Some(_) => w.write_record(["date", "value", "obs_sd"])?,
            None => w.write_record(["date", "value"])?,
        }
        for (week, v) in self.values.iter().enumerate() {
            let date = self.date(week).format("%Y-%m-%d").to_string();
            let value = v.map(|x| x.to_string()).unwrap_or_default();
            match &self.obs_sd {
                Some(sd) => w.write_record([date, value, sd[week].to_string()])?,
                None => w.write_record([date, value])?,
            }
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv writer>".into(),
            source,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

/// Column mapping for [`load_csv`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub date: String,
    pub value: String,
    pub below_lod: Option<String>,
    pub flow: Option<String>,
    pub obs_sd: Option<String>,
    /// Unit of the value column.
    pub unit: Unit,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            date: "date".into(),
            value: "value".into(),
            below_lod: Some("below_lod".into()),
            flow: Some("flow_l_per_day".into()),
            obs_sd: Some("obs_sd".into()),
            unit: Unit::GcPerLiter,
        }
    }
}

impl CsvSchema {
    pub fn with_unit(unit: Unit) -> Self {
        Self {
            unit,
            ..Self::default()
        }
    }
}

pub fn load_csv(path: &Path, schema: &CsvSchema) -> Result<WeeklySeries> {
    let file = std::fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, schema)
}

struct Row {
    value: Option<f64>,
    obs_sd: Option<f64>,
}

pub fn read_csv<R: Read>(reader: R, schema: &CsvSchema) -> Result<WeeklySeries> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let date_col = find(&schema.date).ok_or_else(|| Error::MissingColumn(schema.date.clone()))?;
    let value_col =
        find(&schema.value).ok_or_else(|| Error::MissingColumn(schema.value.clone()))?;
    let lod_col = schema.below_lod.as_deref().and_then(find);
    let sd_col = schema.obs_sd.as_deref().and_then(find);
    if schema.flow.as_deref().and_then(find).is_some() {
        log::warn!("ignoring weekly flow column; a single median flow is used per plant");
    }

    let mut rows: BTreeMap<NaiveDate, Row> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let raw_date = record.get(date_col).unwrap_or("");
        let date = NaiveDate::parse_from_str(raw_date, "%Y-%m-%d").map_err(|_| Error::Parse {
            line,
            field: "date",
            raw: raw_date.to_string(),
        })?;
        let raw_value = record.get(value_col).unwrap_or("");
        let mut value = if raw_value.is_empty() {
            None
        } else {
            let v: f64 = raw_value.parse().map_err(|_| Error::Parse {
                line,
                field: "value",
                raw: raw_value.to_string(),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    field: "value",
                    raw: raw_value.to_string(),
                });
            }
            if v < 0.0 && !schema.unit.is_log10() {
                return Err(Error::NegativeValue { date, value: v });
            }
            Some(v)
        };
        if let Some(col) = lod_col {
            match record.get(col).unwrap_or("") {
                "" | "0" => {}
                "1" => value = None,
                raw => {
                    return Err(Error::Parse {
                        line,
                        field: "below_lod",
                        raw: raw.to_string(),
                    })
                }
            }
        }
        let obs_sd = match sd_col.map(|c| record.get(c).unwrap_or("")) {
            None | Some("") => None,
            Some(raw) => Some(raw.parse::<f64>().map_err(|_| Error::Parse {
                line,
                field: "obs_sd",
                raw: raw.to_string(),
            })?),
        };
        if rows.insert(date, Row { value, obs_sd }).is_some() {
            return Err(Error::DuplicateWeek(date));
        }
    }

    let Some((&start, _)) = rows.iter().next() else {
        return Err(Error::TooShort("CSV has no data rows".into()));
    };
    let mut values = Vec::new();
    let mut sds = Vec::new();
    let mut prev: Option<NaiveDate> = None;
    for (&date, row) in &rows {
        if let Some(p) = prev {
            let days = (date - p).num_days();
            if days % 7 != 0 {
                return Err(Error::Cadence { from: p, to: date, days });
            }
            for _ in 1..days / 7 {
                values.push(None);
                sds.push(None);
            }
        }
        values.push(row.value);
        sds.push(row.obs_sd);
        prev = Some(date);
    }

    let series = WeeklySeries::new(start, values, schema.unit)?;
    if sds.iter().all(Option::is_none) {
        return Ok(series);
    }
    let sds: Option<Vec<f64>> = sds.into_iter().collect();
    match sds {
        Some(sds) => series.with_obs_sd(sds),
        None => Err(Error::InvalidParameter(
            "obs_sd column must be filled on every week, with no gaps in the dates".into(),
        )),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn parse(text: &str) -> Result<WeeklySeries> {
        read_csv(text.as_bytes(), &CsvSchema::default())
    }

    #[test]
    fn inserts_missing_week_for_gap() {
        let s = parse("date,value\n2023-01-02,10\n2023-01-09,20\n2023-01-23,40\n").unwrap();
        assert_eq!(s.len(), 4);
        assert_eq!(s.values(), &[Some(10.0), Some(20.0), None, Some(40.0)]);
        assert_eq!(s.start_date(), date("2023-01-02"));
    }

    #[test]
    fn unsorted_rows_are_sorted() {
        let s = parse("date,value\n2023-01-16,3\n2023-01-02,1\n2023-01-09,2\n").unwrap();
        assert_eq!(s.values(), &[Some(1.0), Some(2.0), Some(3.0)]);
    }

    #[test]
    fn below_lod_and_zero_become_missing() {
        let s = parse(
            "date,value,below_lod\n2023-01-02,0,1\n2023-01-09,5,0\n2023-01-16,0,\n2023-01-23,,\n",
        )
        .unwrap();
        assert_eq!(s.values(), &[None, Some(5.0), None, None]);
    }

    #[test]
    fn ten_day_gap_is_rejected() {
        let err = parse("date,value\n2023-01-02,1\n2023-01-12,2\n").unwrap_err();
        assert!(matches!(err, Error::Cadence { days: 10, .. }));
    }

    #[test]
    fn duplicate_week_is_rejected() {
        let err = parse("date,value\n2023-01-02,1\n2023-01-02,2\n").unwrap_err();
        assert!(matches!(err, Error::DuplicateWeek(d) if d == date("2023-01-02")));
    }

    #[test]
    fn negative_value_is_rejected() {
        let err = parse("date,value\n2023-01-02,-1\n").unwrap_err();
        assert!(matches!(err, Error::NegativeValue { .. }));
    }

    #[test]
    fn flow_column_is_ignored() {
        let s = parse("date,value,flow_l_per_day\n2023-01-02,1,3e8\n").unwrap();
        assert_eq!(s.values(), &[Some(1.0)]);
    }

    #[test]
    fn obs_sd_column_round_trips() {
        let s = parse("date,value,obs_sd\n2023-01-02,1.5,0.2\n2023-01-09,2.5,0.3\n").unwrap();
        assert_eq!(s.obs_sd(), Some(&[0.2, 0.3][..]));
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), s);
    }

    #[test]
    fn obs_sd_with_gap_is_rejected() {
        assert!(parse("date,value,obs_sd\n2023-01-02,1.5,0.2\n2023-01-16,2.5,0.3\n").is_err());
    }

    #[test]
    fn load_conversion_examples() {
        let s = WeeklySeries::new(
            date("2023-01-02"),
            vec![Some(1000.0), None],
            Unit::GcPerLiter,
        )
        .unwrap();
        // 1000 gc/L * 1e9 L/day = 1e12 gc/day = 1000 B gc/day
        let load = s.to_load(&FlowSpec::new(1e9).unwrap()).unwrap();
        assert_eq!(load.values()[0], Some(1000.0));
        assert_eq!(load.values()[1], None);
        assert_eq!(load.unit(), Unit::BGcPerDay);

        let s = WeeklySeries::new(date("2023-01-02"), vec![Some(2500.0)], Unit::GcPerLiter)
            .unwrap();
        let load = s.to_load(&FlowSpec::new(2e8).unwrap()).unwrap();
        approx::assert_relative_eq!(load.values()[0].unwrap(), 2500.0 * 2e8 / 1e9);
        approx::assert_relative_eq!(load.values()[0].unwrap(), 500.0, max_relative = 1e-15);
    }

    #[test]
    fn to_load_rejects_wrong_unit() {
        let s = WeeklySeries::new(date("2023-01-02"), vec![Some(1.0)], Unit::BGcPerDay).unwrap();
        assert!(matches!(
            s.to_load(&FlowSpec::new(1e8).unwrap()),
            Err(Error::UnitMismatch { .. })
        ));
        assert!(FlowSpec::new(0.0).is_err());
    }

    #[test]
    fn log10_examples() {
        let s = WeeklySeries::new(
            date("2023-01-02"),
            vec![Some(100.0), None],
            Unit::BGcPerDay,
        )
        .unwrap();
        let l = s.to_log10().unwrap();
        assert_eq!(l.values(), &[Some(2.0), None]);
        assert_eq!(l.unit(), Unit::Log10BGcPerDay);
        let back = l.from_log10().unwrap();
        assert_eq!(back.unit(), Unit::BGcPerDay);
        assert!(l.to_log10().is_err());
        assert!(s.from_log10().is_err());
    }

    #[test]
    fn non_positive_values_rejected_on_construction() {
        assert!(WeeklySeries::new(date("2023-01-02"), vec![Some(-2.0)], Unit::GcPerLiter).is_err());
        let s = WeeklySeries::new(date("2023-01-02"), vec![Some(0.0)], Unit::GcPerLiter).unwrap();
        assert_eq!(s.values(), &[None]);
    }
}
