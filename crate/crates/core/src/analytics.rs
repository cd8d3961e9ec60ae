//! Aggregations behind the visualizer charts.

use std::collections::BTreeMap;

use chrono::{Datelike, Months, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::farm::{Dataset, FarmRecord, FarmType};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    pub product_type: Option<String>,
    pub location: Option<String>,
    pub farm_type: Option<FarmType>,
    /// Inclusive on both ends.
    pub date_range: Option<(NaiveDate, NaiveDate)>,
}

impl Filter {
    pub fn matches(&self, r: &FarmRecord) -> bool {
        self.product_type
            .as_ref()
            .is_none_or(|p| *p == r.product_type)
            && self.location.as_ref().is_none_or(|l| *l == r.location)
            && self.farm_type.is_none_or(|t| t == r.farm_type)
            && self
                .date_range
                .is_none_or(|(a, b)| a <= r.date && r.date <= b)
    }
}

pub fn apply_filter(ds: &Dataset, f: &Filter) -> Dataset {
    Dataset::new(
        ds.records
            .iter()
            .filter(|r| f.matches(r))
            .cloned()
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bucket {
    Day,
    Month,
    Year,
}

impl Bucket {
    pub fn start_of(self, d: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => d,
            Bucket::Month => d.with_day(1).expect("day 1 exists"),
            Bucket::Year => NaiveDate::from_ymd_opt(d.year(), 1, 1).expect("jan 1 exists"),
        }
    }

    fn next(self, start: NaiveDate) -> NaiveDate {
        match self {
            Bucket::Day => start.succ_opt().expect("date in range"),
            Bucket::Month => start + Months::new(1),
            Bucket::Year => start + Months::new(12),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Resource {
    WaterL,
    ElectricityKwh,
    FertilizerKg,
}

impl Resource {
    pub fn of(self, r: &FarmRecord) -> f64 {
        match self {
            Resource::WaterL => r.water_l,
            Resource::ElectricityKwh => r.electricity_kwh,
            Resource::FertilizerKg => r.fertilizer_kg,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    FarmType,
    ProductType,
    Location,
}

impl GroupBy {
    pub fn label(self, r: &FarmRecord) -> String {
        match self {
            GroupBy::FarmType => r.farm_type.to_string(),
            GroupBy::ProductType => r.product_type.clone(),
            GroupBy::Location => r.location.clone(),
        }
    }
}

/// Pairwise summation: error grows with log n rather than n.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BASE: usize = 32;
    if xs.len() <= BASE {
        return xs.iter().sum();
    }
    let (a, b) = xs.split_at(xs.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Point {
    pub bucket_start: NaiveDate,
    pub value: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Series {
    pub points: Vec<Point>,
}

/// Total yield per calendar bucket, zero-filled between the first and last
/// filtered date.
pub fn yield_over_time(ds: &Dataset, f: &Filter, bucket: Bucket) -> Series {
    let mut sums: BTreeMap<NaiveDate, Vec<f64>> = BTreeMap::new();
    for r in ds.records.iter().filter(|r| f.matches(r)) {
        sums.entry(bucket.start_of(r.date))
            .or_default()
            .push(r.yield_kg);
    }
    let (Some(&first), Some(&last)) = (sums.keys().next(), sums.keys().next_back()) else {
        return Series::default();
    };
    let mut points = Vec::new();
    let mut at = first;
    while at <= last {
        let value = sums.get(&at).map_or(0.0, |v| pairwise_sum(v));
        points.push(Point {
            bucket_start: at,
            value,
        });
        at = bucket.next(at);
    }
    Series { points }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares; `None` with fewer than two distinct x values.
pub fn linear_fit(points: &[(f64, f64)]) -> Option<LinearFit> {
    let first = points.first()?.0;
    if points.iter().all(|p| p.0 == first) {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
    let mx = pairwise_sum(&xs) / n;
    let my = pairwise_sum(&ys) / n;
    let sxy: Vec<f64> = points.iter().map(|(x, y)| (x - mx) * (y - my)).collect();
    let sxx: Vec<f64> = xs.iter().map(|x| (x - mx) * (x - mx)).collect();
    let slope = pairwise_sum(&sxy) / pairwise_sum(&sxx);
    let intercept = my - slope * mx;
    let res: Vec<f64> = points
        .iter()
        .map(|(x, y)| (y - (slope * x + intercept)).powi(2))
        .collect();
    let tot: Vec<f64> = ys.iter().map(|y| (y - my).powi(2)).collect();
    let (ss_res, ss_tot) = (pairwise_sum(&res), pairwise_sum(&tot));
    let r2 = if ss_tot == 0.0 {
        if ss_res == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LinearFit {
        slope,
        intercept,
        r2: r2.clamp(0.0, 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Group {
    /// (resource amount, yield_kg) in dataset order.
    pub points: Vec<(f64, f64)>,
    pub fit: Option<LinearFit>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GroupedScatter {
    pub groups: BTreeMap<String, Group>,
}

pub fn yield_vs_resource(
    ds: &Dataset,
    f: &Filter,
    resource: Resource,
    group_by: GroupBy,
) -> GroupedScatter {
    let mut pts: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for r in ds.records.iter().filter(|r| f.matches(r)) {
        pts.entry(group_by.label(r))
            .or_default()
            .push((resource.of(r), r.yield_kg));
    }
    let groups = pts
        .into_iter()
        .map(|(label, points)| {
            let fit = linear_fit(&points);
            (label, Group { points, fit })
        })
        .collect();
    GroupedScatter { groups }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Summary {
    pub yield_kg: f64,
    pub water_l: f64,
    pub electricity_kwh: f64,
    pub fertilizer_kg: f64,
    pub record_count: usize,
}

pub fn summary(ds: &Dataset, f: &Filter) -> Summary {
    let rows: Vec<&FarmRecord> = ds.records.iter().filter(|r| f.matches(r)).collect();
    let total =
        |g: fn(&FarmRecord) -> f64| pairwise_sum(&rows.iter().map(|r| g(r)).collect::<Vec<_>>());
    Summary {
        yield_kg: total(|r| r.yield_kg),
        water_l: total(|r| r.water_l),
        electricity_kwh: total(|r| r.electricity_kwh),
        fertilizer_kg: total(|r| r.fertilizer_kg),
        record_count: rows.len(),
    }
}
