//! Synthetic farm datasets. Quantities are multiples of 0.5 so that sums
//! are exact in binary floating point regardless of order.
#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub const PRODUCTS: [&str; 4] = ["tomato", "lettuce", "wheat", "basil"];
pub const LOCATIONS: [&str; 3] = ["Sydney", "Perth, WA", "Hobart"];
pub const TYPES: [&str; 2] = ["conventional", "vertical"];

pub fn half(rng: &mut impl Rng, max: u32) -> String {
    let v = rng.gen_range(0..=max * 2);
    if v % 2 == 0 {
        format!("{}", v / 2)
    } else {
        format!("{}.5", v / 2)
    }
}

/// CSV rows (without header) for `n` records spread over three years.
pub fn rows(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let y = rng.gen_range(2021..=2023);
            let m = rng.gen_range(1..=12);
            let d = rng.gen_range(1..=28);
            format!(
                "{y}-{m:02}-{d:02},farm{},\"{}\",{},{},{},{},{},{}",
                i % 17,
                LOCATIONS.choose(&mut rng).unwrap(),
                TYPES.choose(&mut rng).unwrap(),
                PRODUCTS.choose(&mut rng).unwrap(),
                half(&mut rng, 500),
                half(&mut rng, 10_000),
                half(&mut rng, 800),
                half(&mut rng, 60),
            )
        })
        .collect()
}

pub const HEADER: &str =
    "date,farm_id,location,farm_type,product_type,yield_kg,water_l,electricity_kwh,fertilizer_kg";

pub fn csv(rows: &[String]) -> String {
    let mut s = String::from(HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(r);
        s.push('\n');
    }
    s
}

pub fn shuffled(rows: &[String], seed: u64) -> Vec<String> {
    let mut v = rows.to_vec();
    v.shuffle(&mut Xoshiro256PlusPlus::seed_from_u64(seed));
    v
}
