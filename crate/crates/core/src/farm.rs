//! Farm environmental records: CSV intake, canonical JSON, upload receipts.

use std::fmt;
use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use chrono::NaiveDate;
use image::{GrayImage, ImageFormat, Luma};
use qrcode::{Color, EcLevel, QrCode};
use serde::{Deserialize, Serialize};

use crate::cid::Cid;
use crate::sim::{NodeIdx, SimError, Simulation};

pub const CSV_HEADER: [&str; 9] = [
    "date",
    "farm_id",
    "location",
    "farm_type",
    "product_type",
    "yield_kg",
    "water_l",
    "electricity_kwh",
    "fertilizer_kg",
];

const QR_SCALE: u32 = 8;
const QR_QUIET_ZONE: u32 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FarmType {
    Conventional,
    Vertical,
}

impl FarmType {
    pub fn as_str(self) -> &'static str {
        match self {
            FarmType::Conventional => "conventional",
            FarmType::Vertical => "vertical",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conventional" => Some(FarmType::Conventional),
            "vertical" => Some(FarmType::Vertical),
            _ => None,
        }
    }
}

impl fmt::Display for FarmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One observation. Quantities are kilograms, liters and kilowatt-hours.
#[derive(Debug, Clone, PartialEq)]
pub struct FarmRecord {
    pub date: NaiveDate,
    pub farm_id: String,
    pub location: String,
    pub farm_type: FarmType,
    pub product_type: String,
    pub yield_kg: f64,
    pub water_l: f64,
    pub electricity_kwh: f64,
    pub fertilizer_kg: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FarmError {
    #[error("header mismatch: expected {expected:?}, found {found:?}")]
    HeaderMismatch { expected: String, found: String },
    #[error("line {line}, field {field}: {reason}")]
    RowError {
        line: u64,
        field: String,
        reason: String,
    },
    #[error("not a canonical farm dataset: {0}")]
    NotCanonical(String),
    #[error("qr encoding failed: {0}")]
    Qr(String),
}

fn row_error(line: u64, field: &str, reason: impl Into<String>) -> FarmError {
    FarmError::RowError {
        line,
        field: field.to_string(),
        reason: reason.into(),
    }
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    let d = NaiveDate::parse_from_str(s, "%Y-%m-%d").ok()?;
    (d.format("%Y-%m-%d").to_string() == s).then_some(d)
}

/// Plain decimal: digits with an optional fraction, no sign or exponent
/// besides a leading minus (reported as negative).
fn parse_quantity(s: &str) -> Result<f64, &'static str> {
    let body = s.strip_prefix('-').unwrap_or(s);
    let (int, frac) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    let digits = |t: &str| !t.is_empty() && t.bytes().all(|b| b.is_ascii_digit());
    if !digits(int) || frac.is_some_and(|f| !digits(f)) {
        return Err("not a decimal number");
    }
    let v: f64 = s.parse().map_err(|_| "not a decimal number")?;
    if !v.is_finite() {
        return Err("not finite");
    }
    if v < 0.0 {
        return Err("must be non-negative");
    }
    Ok(v + 0.0)
}

impl FarmRecord {
    /// Validates one row given as header-ordered fields.
    pub fn from_fields(fields: &[&str], line: u64) -> Result<Self, FarmError> {
        if fields.len() != CSV_HEADER.len() {
            return Err(row_error(
                line,
                "*",
                format!(
                    "expected {} fields, found {}",
                    CSV_HEADER.len(),
                    fields.len()
                ),
            ));
        }
        let text = |i: usize| -> Result<String, FarmError> {
            let v = fields[i];
            if v.trim().is_empty() {
                return Err(row_error(line, CSV_HEADER[i], "must not be empty"));
            }
            Ok(v.to_string())
        };
        let qty =
            |i: usize| parse_quantity(fields[i]).map_err(|r| row_error(line, CSV_HEADER[i], r));

        let date =
            parse_date(fields[0]).ok_or_else(|| row_error(line, "date", "not an ISO-8601 date"))?;
        let farm_id = text(1)?;
        if farm_id.chars().any(char::is_whitespace) {
            return Err(row_error(line, "farm_id", "must not contain whitespace"));
        }
        let location = text(2)?;
        let farm_type = FarmType::parse(fields[3])
            .ok_or_else(|| row_error(line, "farm_type", "must be conventional or vertical"))?;
        let product_type = text(4)?;
        Ok(FarmRecord {
            date,
            farm_id,
            location,
            farm_type,
            product_type,
            yield_kg: qty(5)?,
            water_l: qty(6)?,
            electricity_kwh: qty(7)?,
            fertilizer_kg: qty(8)?,
        })
    }

    fn canonical_json(&self) -> String {
        let s = |v: &str| serde_json::to_string(v).expect("string serializes");
        format!(
            r#"{{"date":"{}","farm_id":{},"location":{},"farm_type":"{}","product_type":{},"yield_kg":{},"water_l":{},"electricity_kwh":{},"fertilizer_kg":{}}}"#,
            self.date.format("%Y-%m-%d"),
            s(&self.farm_id),
            s(&self.location),
            self.farm_type,
            s(&self.product_type),
            render_number(self.yield_kg),
            render_number(self.water_l),
            render_number(self.electricity_kwh),
            render_number(self.fertilizer_kg),
        )
    }
}

/// Shortest round-trip decimal, never in exponent form.
pub fn render_number(v: f64) -> String {
    format!("{}", v + 0.0)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    pub records: Vec<FarmRecord>,
}

impl Dataset {
    pub fn new(records: Vec<FarmRecord>) -> Self {
        Dataset { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        canonicalize(self)
    }

    /// Parses content produced by [`canonicalize`], rejecting anything that
    /// would not re-serialize to the same bytes.
    pub fn from_canonical(bytes: &[u8]) -> Result<Self, FarmError> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Doc {
            records: Vec<Raw>,
        }
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            date: String,
            farm_id: String,
            location: String,
            farm_type: String,
            product_type: String,
            yield_kg: f64,
            water_l: f64,
            electricity_kwh: f64,
            fertilizer_kg: f64,
        }
        let doc: Doc =
            serde_json::from_slice(bytes).map_err(|e| FarmError::NotCanonical(e.to_string()))?;
        let mut records = Vec::with_capacity(doc.records.len());
        for (i, r) in doc.records.into_iter().enumerate() {
            let nums =
                [r.yield_kg, r.water_l, r.electricity_kwh, r.fertilizer_kg].map(render_number);
            let fields = [
                r.date.as_str(),
                &r.farm_id,
                &r.location,
                &r.farm_type,
                &r.product_type,
                &nums[0],
                &nums[1],
                &nums[2],
                &nums[3],
            ];
            let rec = FarmRecord::from_fields(&fields, i as u64 + 1)
                .map_err(|e| FarmError::NotCanonical(format!("record {}: {e}", i + 1)))?;
            records.push(rec);
        }
        let ds = Dataset { records };
        if canonicalize(&ds) != bytes {
            return Err(FarmError::NotCanonical(
                "bytes are not in canonical form".into(),
            ));
        }
        Ok(ds)
    }
}

/// Parses farmer CSV. Line numbers in errors are 1-based file lines.
pub fn parse_csv(text: &str) -> Result<Dataset, FarmError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| FarmError::HeaderMismatch {
        expected: CSV_HEADER.join(","),
        found: e.to_string(),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(FarmError::HeaderMismatch {
            expected: CSV_HEADER.join(","),
            found: header.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            row_error(line, "*", e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let fields: Vec<&str> = row.iter().collect();
        records.push(FarmRecord::from_fields(&fields, line)?);
    }
    Ok(Dataset { records })
}

/// Records with their canonical JSON, sorted by date, farm and product,
/// then by full content.
fn sorted(ds: &Dataset) -> Vec<(String, &FarmRecord)> {
    let mut rows: Vec<(String, &FarmRecord)> =
        ds.records.iter().map(|r| (r.canonical_json(), r)).collect();
    rows.sort_by(|(ja, a), (jb, b)| {
        (a.date, &a.farm_id, &a.product_type, ja).cmp(&(b.date, &b.farm_id, &b.product_type, jb))
    });
    rows
}

/// Compact JSON `{"records":[...]}` in canonical order, fields in CSV
/// header order.
pub fn canonicalize(ds: &Dataset) -> Vec<u8> {
    let rows = sorted(ds);
    let mut out = String::from(r#"{"records":["#);
    for (i, (json, _)) in rows.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        out.push_str(json);
    }
    out.push_str("]}");
    out.into_bytes()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UploadReceipt {
    pub cid: Cid,
    pub visualizer_link: String,
    qr_width: usize,
    qr_modules: Vec<bool>,
    pub qr_png: Vec<u8>,
}

impl UploadReceipt {
    /// Builds the link and its QR symbol (error correction level M).
    pub fn new(cid: Cid, visualizer_base: &str) -> Result<Self, FarmError> {
        let visualizer_link = format!(
            "{}/visualize?cid={}",
            visualizer_base.trim_end_matches('/'),
            cid
        );
        let code = QrCode::with_error_correction_level(visualizer_link.as_bytes(), EcLevel::M)
            .map_err(|e| FarmError::Qr(e.to_string()))?;
        let qr_width = code.width();
        let qr_modules: Vec<bool> = code
            .to_colors()
            .into_iter()
            .map(|c| c == Color::Dark)
            .collect();
        let qr_png = render_png(qr_width, &qr_modules);
        Ok(UploadReceipt {
            cid,
            visualizer_link,
            qr_width,
            qr_modules,
            qr_png,
        })
    }

    /// Dark modules, row-major, `width` × `width`.
    pub fn qr_matrix(&self) -> (usize, &[bool]) {
        (self.qr_width, &self.qr_modules)
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "cid": self.cid.to_string(),
            "visualizer_link": self.visualizer_link,
            "qr_png": STANDARD.encode(&self.qr_png),
        })
    }
}

fn render_png(width: usize, modules: &[bool]) -> Vec<u8> {
    let side = (width as u32 + 2 * QR_QUIET_ZONE) * QR_SCALE;
    let img = GrayImage::from_fn(side, side, |x, y| {
        let mx = (x / QR_SCALE) as i64 - QR_QUIET_ZONE as i64;
        let my = (y / QR_SCALE) as i64 - QR_QUIET_ZONE as i64;
        let w = width as i64;
        let dark = (0..w).contains(&mx) && (0..w).contains(&my) && modules[(my * w + mx) as usize];
        Luma([if dark { 0 } else { 255 }])
    });
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .expect("png encoding to memory");
    out.into_inner()
}

#[derive(Debug, thiserror::Error)]
pub enum UploadError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Farm(#[from] FarmError),
}

/// Adds the canonical bytes on `node` and returns the receipt.
pub fn upload_dataset(
    ds: &Dataset,
    sim: &mut Simulation,
    node: NodeIdx,
    visualizer_base: &str,
) -> Result<UploadReceipt, UploadError> {
    let cid = sim.add(node, &canonicalize(ds))?;
    Ok(UploadReceipt::new(cid, visualizer_base)?)
}

/// Renders a dataset back to CSV in canonical order.
pub fn to_csv(ds: &Dataset) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for (_, r) in sorted(ds) {
        let nums = [r.yield_kg, r.water_l, r.electricity_kwh, r.fertilizer_kg].map(render_number);
        let date = r.date.format("%Y-%m-%d").to_string();
        w.write_record([
            date.as_str(),
            &r.farm_id,
            &r.location,
            r.farm_type.as_str(),
            &r.product_type,
            &nums[0],
            &nums[1],
            &nums[2],
            &nums[3],
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("fields are utf-8")
}
