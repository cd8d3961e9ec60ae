mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use chrono::{Datelike, NaiveDate};
use common::synth;
use farmledger::analytics::{
    apply_filter, summary, yield_over_time, yield_vs_resource, Bucket, Filter, GroupBy, Resource,
};
use farmledger::farm::FarmType;
use farmledger::{
    build_dag, canonicalize, parse_csv, upload_dataset, Cid, Dataset, SimConfig, Simulation,
    UploadReceipt,
};

fn root_of(bytes: &[u8]) -> Cid {
    build_dag(bytes).unwrap().root
}

fn decode_qr(png: &[u8]) -> String {
    let img = image::load_from_memory(png).unwrap().to_luma8();
    let mut prepared = rqrr::PreparedImage::prepare(img);
    let grids = prepared.detect_grids();
    assert_eq!(grids.len(), 1);
    grids[0].decode().unwrap().1
}

#[test]
fn permutations_share_one_cid() {
    let rows = synth::rows(500, 1);
    let expected = root_of(&canonicalize(&parse_csv(&synth::csv(&rows)).unwrap()));
    for seed in 0..50 {
        let ds = parse_csv(&synth::csv(&synth::shuffled(&rows, seed))).unwrap();
        assert_eq!(root_of(&canonicalize(&ds)), expected, "shuffle {seed}");
    }
}

#[test]
fn receipt_qr_decodes_to_link() {
    let base = "http://127.0.0.1:8080";
    for i in 0..5 {
        let cid = Cid::from_bytes(&[i]);
        let r = UploadReceipt::new(cid, base).unwrap();
        let link = decode_qr(&r.qr_png);
        assert_eq!(link, r.visualizer_link);
        assert!(link.contains(&cid.to_string()));
    }
}

#[test]
fn upload_round_trips_through_network() {
    let mut sim = Simulation::build(SimConfig::new(20, 42));
    let rows = synth::rows(200, 2);
    let ds = parse_csv(&synth::csv(&rows)).unwrap();
    let receipt = upload_dataset(&ds, &mut sim, 0, "http://viz.example").unwrap();
    let again = upload_dataset(&ds, &mut sim, 0, "http://viz.example").unwrap();
    assert_eq!(receipt, again);
    let fetched = sim.cat(11, &receipt.cid, Duration::from_secs(30)).unwrap();
    let parsed = Dataset::from_canonical(&fetched).unwrap();
    assert_eq!(root_of(&canonicalize(&parsed)), receipt.cid);
    assert_eq!(decode_qr(&receipt.qr_png), receipt.visualizer_link);
}

fn dataset() -> Dataset {
    parse_csv(&synth::csv(&synth::rows(1000, 3))).unwrap()
}

fn filters() -> Vec<Filter> {
    let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
    vec![
        Filter::default(),
        Filter {
            product_type: Some("tomato".into()),
            ..Filter::default()
        },
        Filter {
            location: Some("Perth, WA".into()),
            farm_type: Some(FarmType::Vertical),
            ..Filter::default()
        },
        Filter {
            product_type: Some("wheat".into()),
            location: Some("Sydney".into()),
            farm_type: Some(FarmType::Conventional),
            date_range: Some((d("2022-02-10"), d("2023-06-30"))),
        },
        Filter {
            product_type: Some("durian".into()),
            ..Filter::default()
        },
    ]
}

fn brute_match(f: &Filter, r: &farmledger::FarmRecord) -> bool {
    if let Some(p) = &f.product_type {
        if &r.product_type != p {
            return false;
        }
    }
    if let Some(l) = &f.location {
        if &r.location != l {
            return false;
        }
    }
    if let Some(t) = f.farm_type {
        if r.farm_type != t {
            return false;
        }
    }
    if let Some((a, b)) = f.date_range {
        if r.date < a || r.date > b {
            return false;
        }
    }
    true
}

#[test]
fn filter_matches_row_scan() {
    let ds = dataset();
    for f in filters() {
        let mut expected = Vec::new();
        for r in &ds.records {
            if brute_match(&f, r) {
                expected.push(r.clone());
            }
        }
        assert_eq!(apply_filter(&ds, &f).records, expected);
    }
}

#[test]
fn filter_monotonic() {
    let ds = dataset();
    let all = summary(&ds, &Filter::default()).record_count;
    let one = summary(
        &ds,
        &Filter {
            product_type: Some("basil".into()),
            ..Filter::default()
        },
    )
    .record_count;
    let two = summary(
        &ds,
        &Filter {
            product_type: Some("basil".into()),
            location: Some("Hobart".into()),
            ..Filter::default()
        },
    )
    .record_count;
    assert!(all >= one && one >= two);
}

#[test]
fn time_series_matches_accumulation() {
    let ds = dataset();
    for f in filters() {
        for bucket in [Bucket::Day, Bucket::Month, Bucket::Year] {
            let mut acc: BTreeMap<(i32, u32, u32), f64> = BTreeMap::new();
            for r in ds.records.iter().filter(|r| brute_match(&f, r)) {
                let k = match bucket {
                    Bucket::Day => (r.date.year(), r.date.month(), r.date.day()),
                    Bucket::Month => (r.date.year(), r.date.month(), 1),
                    Bucket::Year => (r.date.year(), 1, 1),
                };
                *acc.entry(k).or_default() += r.yield_kg;
            }
            let series = yield_over_time(&ds, &f, bucket);
            for p in &series.points {
                let k = (
                    p.bucket_start.year(),
                    p.bucket_start.month(),
                    p.bucket_start.day(),
                );
                assert_eq!(p.value, acc.get(&k).copied().unwrap_or(0.0));
            }
            let nonzero = series
                .points
                .iter()
                .filter(|p| {
                    acc.contains_key(&(
                        p.bucket_start.year(),
                        p.bucket_start.month(),
                        p.bucket_start.day(),
                    ))
                })
                .count();
            assert_eq!(nonzero, acc.len());
            for w in series.points.windows(2) {
                assert!(w[0].bucket_start < w[1].bucket_start);
            }
            let total: f64 = series.points.iter().map(|p| p.value).sum();
            assert_eq!(total, summary(&ds, &f).yield_kg);
        }
    }
}

#[test]
fn scatter_groups_match_scan() {
    let ds = dataset();
    for f in filters() {
        for resource in [
            Resource::WaterL,
            Resource::ElectricityKwh,
            Resource::FertilizerKg,
        ] {
            for group_by in [GroupBy::FarmType, GroupBy::ProductType, GroupBy::Location] {
                let mut expected: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
                for r in ds.records.iter().filter(|r| brute_match(&f, r)) {
                    let label = match group_by {
                        GroupBy::FarmType => r.farm_type.as_str().to_string(),
                        GroupBy::ProductType => r.product_type.clone(),
                        GroupBy::Location => r.location.clone(),
                    };
                    let x = match resource {
                        Resource::WaterL => r.water_l,
                        Resource::ElectricityKwh => r.electricity_kwh,
                        Resource::FertilizerKg => r.fertilizer_kg,
                    };
                    expected.entry(label).or_default().push((x, r.yield_kg));
                }
                let got = yield_vs_resource(&ds, &f, resource, group_by);
                let got_points: BTreeMap<String, Vec<(f64, f64)>> = got
                    .groups
                    .iter()
                    .map(|(k, g)| (k.clone(), g.points.clone()))
                    .collect();
                assert_eq!(got_points, expected);
                let count: usize = got.groups.values().map(|g| g.points.len()).sum();
                assert_eq!(count, summary(&ds, &f).record_count);
            }
        }
    }
}

#[test]
fn summary_matches_scan() {
    let ds = dataset();
    for f in filters() {
        let (mut y, mut w, mut e, mut fe, mut n) = (0.0, 0.0, 0.0, 0.0, 0);
        for r in ds.records.iter().filter(|r| brute_match(&f, r)) {
            y += r.yield_kg;
            w += r.water_l;
            e += r.electricity_kwh;
            fe += r.fertilizer_kg;
            n += 1;
        }
        let s = summary(&ds, &f);
        assert_eq!(
            (
                s.yield_kg,
                s.water_l,
                s.electricity_kwh,
                s.fertilizer_kg,
                s.record_count
            ),
            (y, w, e, fe, n)
        );
    }
}
