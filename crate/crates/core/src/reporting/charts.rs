//! Growth-chart percentiles and gestational-age inversion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::TaskKind;

pub const INVERSION_TOLERANCE_MM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChartMeasure {
    Hc,
    Ac,
}

impl ChartMeasure {
    pub fn for_task(task: TaskKind) -> Option<Self> {
        match task {
            TaskKind::Hc => Some(ChartMeasure::Hc),
            TaskKind::Ac => Some(ChartMeasure::Ac),
            _ => None,
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hc" => Some(ChartMeasure::Hc),
            "ac" => Some(ChartMeasure::Ac),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChartRow {
    pub ga_weeks: f64,
    pub mean_mm: f64,
    pub sd_mm: f64,
}

/// Normative mean and SD per gestational week, piecewise linear in between.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthChart {
    pub measure: ChartMeasure,
    rows: Vec<ChartRow>,
    pub source: String,
}

#[derive(Debug, Deserialize)]
struct CsvRow {
    measure: String,
    ga_weeks: f64,
    mean_mm: f64,
    sd_mm: f64,
}

/// Standard normal CDF, Abramowitz and Stegun 26.2.17 (|error| < 7.5e-8).
pub fn normal_cdf(z: f64) -> f64 {
    const P: f64 = 0.231_641_9;
    const B: [f64; 5] = [0.319_381_530, -0.356_563_782, 1.781_477_937, -1.821_255_978, 1.330_274_429];
    let x = z.abs();
    let t = 1.0 / (1.0 + P * x);
    let poly = t * (B[0] + t * (B[1] + t * (B[2] + t * (B[3] + t * B[4]))));
    let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let upper = pdf * poly;
    if z >= 0.0 {
        1.0 - upper
    } else {
        upper
    }
}

impl GrowthChart {
    pub fn new(measure: ChartMeasure, rows: Vec<ChartRow>, source: impl Into<String>) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::invalid("a growth chart needs at least two rows"));
        }
        for r in &rows {
            if !(r.ga_weeks.is_finite() && r.mean_mm.is_finite() && r.sd_mm.is_finite()) || r.sd_mm <= 0.0 {
                return Err(Error::invalid("chart rows must be finite with sd > 0"));
            }
        }
        for w in rows.windows(2) {
            if w[1].ga_weeks <= w[0].ga_weeks {
                return Err(Error::invalid("chart ga must be strictly increasing"));
            }
            if w[1].mean_mm <= w[0].mean_mm {
                return Err(Error::invalid("chart mean must be strictly increasing in ga"));
            }
        }
        Ok(Self {
            measure,
            rows,
            source: source.into(),
        })
    }

    pub fn rows(&self) -> &[ChartRow] {
        &self.rows
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.rows[0].ga_weeks, self.rows[self.rows.len() - 1].ga_weeks)
    }

    pub fn value_range(&self) -> (f64, f64) {
        (self.rows[0].mean_mm, self.rows[self.rows.len() - 1].mean_mm)
    }

    fn check_domain(&self, ga: f64) -> Result<()> {
        let (min, max) = self.domain();
        if !(ga >= min && ga <= max) {
            return Err(Error::OutOfDomain { ga, min, max });
        }
        Ok(())
    }

    /// Interpolated (mean, sd) at `ga`.
    pub fn at(&self, ga: f64) -> Result<(f64, f64)> {
        self.check_domain(ga)?;
        let i = self
            .rows
            .windows(2)
            .position(|w| ga <= w[1].ga_weeks)
            .unwrap_or(self.rows.len() - 2);
        let (a, b) = (self.rows[i], self.rows[i + 1]);
        let t = (ga - a.ga_weeks) / (b.ga_weeks - a.ga_weeks);
        Ok((a.mean_mm + t * (b.mean_mm - a.mean_mm), a.sd_mm + t * (b.sd_mm - a.sd_mm)))
    }

    pub fn mean_at(&self, ga: f64) -> Result<f64> {
        self.at(ga).map(|(m, _)| m)
    }
}

/// Percentile of `value` among fetuses at `ga` weeks.
pub fn percentile_lookup(chart: &GrowthChart, ga: f64, value: f64) -> Result<f64> {
    let (mean, sd) = chart.at(ga)?;
    Ok(100.0 * normal_cdf((value - mean) / sd))
}

/// Gestational age whose chart mean equals `value`, by bisection.
pub fn invert_growth_curve(chart: &GrowthChart, value: f64) -> Result<f64> {
    let (vmin, vmax) = chart.value_range();
    if !(value >= vmin && value <= vmax) {
        return Err(Error::OutOfRange {
            value,
            min: vmin,
            max: vmax,
        });
    }
    let (mut lo, mut hi) = chart.domain();
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let f = chart.mean_at(mid)?;
        if (f - value).abs() <= INVERSION_TOLERANCE_MM {
            break;
        }
        if f < value {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(mid)
}

/// Charts keyed by measure, loaded from `measure,ga_weeks,mean_mm,sd_mm` CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GrowthCharts {
    charts: BTreeMap<ChartMeasure, GrowthChart>,
}

impl GrowthCharts {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, chart: GrowthChart) {
        self.charts.insert(chart.measure, chart);
    }

    pub fn get(&self, measure: ChartMeasure) -> Option<&GrowthChart> {
        self.charts.get(&measure)
    }

    pub fn for_task(&self, task: TaskKind) -> Option<&GrowthChart> {
        ChartMeasure::for_task(task).and_then(|m| self.get(m))
    }

    pub fn is_empty(&self) -> bool {
        self.charts.is_empty()
    }

    pub fn parse_csv(text: &str, source: &str) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let mut rows: BTreeMap<ChartMeasure, Vec<ChartRow>> = BTreeMap::new();
        for rec in rdr.deserialize::<CsvRow>() {
            let r = rec.map_err(|e| Error::Config(format!("chart {source}: {e}")))?;
            let m = ChartMeasure::parse(&r.measure)
                .ok_or_else(|| Error::Config(format!("chart {source}: unknown measure {:?}", r.measure)))?;
            rows.entry(m).or_default().push(ChartRow {
                ga_weeks: r.ga_weeks,
                mean_mm: r.mean_mm,
                sd_mm: r.sd_mm,
            });
        }
        let mut out = Self::new();
        for (m, r) in rows {
            out.insert(GrowthChart::new(m, r, source)?);
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_csv(&text, &path.display().to_string())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("measure,ga_weeks,mean_mm,sd_mm\n");
        for c in self.charts.values() {
            let name = match c.measure {
                ChartMeasure::Hc => "hc",
                ChartMeasure::Ac => "ac",
            };
            for r in &c.rows {
                s.push_str(&format!("{name},{},{},{}\n", r.ga_weeks, r.mean_mm, r.sd_mm));
            }
        }
        s
    }
}
