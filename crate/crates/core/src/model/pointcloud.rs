use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use super::distribution::{DataDistribution, DeltaMixture};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PointCloudFormat {
    Csv,
    Json,
}

/// Loads a point cloud as a [`DeltaMixture`] with normalized weights.
///
/// CSV: one point per row. An optional header row is allowed; if its last
/// field is `weight`, the last column holds (unnormalized) weights.
/// JSON: `{"points": [[...], ...], "weights": [...]}` with `weights` optional.
pub fn load_pointcloud(path: impl AsRef<Path>, format: PointCloudFormat) -> Result<DataDistribution> {
    let text = std::fs::read_to_string(path)?;
    match format {
        PointCloudFormat::Csv => parse_pointcloud_csv(&text),
        PointCloudFormat::Json => parse_pointcloud_json(&text),
    }
}

pub fn parse_pointcloud_csv(text: &str) -> Result<DataDistribution> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());

    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut has_weight: Option<bool> = None;
    let mut width: Option<usize> = None;

    for (idx, record) in reader.records().enumerate() {
        let record = record?;
        let row = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(idx + 1);
        let fields: Vec<&str> = record.iter().collect();
        if fields.iter().all(|f| f.is_empty()) {
            continue;
        }
        let is_header = has_weight.is_none()
            && fields
                .iter()
                .any(|f| f.parse::<f64>().is_err() && !f.eq_ignore_ascii_case("nan"));
        if is_header {
            has_weight = Some(fields.last().is_some_and(|f| f.eq_ignore_ascii_case("weight")));
            width = Some(fields.len());
            continue;
        }
        let has_w = *has_weight.get_or_insert(false);
        let expected = *width.get_or_insert(fields.len());
        if fields.len() != expected {
            return Err(Error::Parse {
                row,
                reason: format!("expected {expected} fields, found {}", fields.len()),
            });
        }
        let mut values = Vec::with_capacity(fields.len());
        for f in &fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                row,
                reason: format!("not a number: {f:?}"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    reason: format!("non-finite value {f:?}"),
                });
            }
            values.push(v);
        }
        if has_w {
            let w = values.pop().expect("at least one field");
            if w <= 0.0 {
                return Err(Error::Parse {
                    row,
                    reason: "weights must be positive".into(),
                });
            }
            weights.push(w);
        }
        if values.is_empty() {
            return Err(Error::Parse {
                row,
                reason: "row has no coordinates".into(),
            });
        }
        points.push(DVector::from_vec(values));
    }

    if points.is_empty() {
        return Err(Error::Parse {
            row: 0,
            reason: "no data rows".into(),
        });
    }
    let mix = if weights.is_empty() {
        DeltaMixture::uniform(points)?
    } else {
        DeltaMixture::new(points, weights)?
    };
    Ok(mix.into())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonCloud {
    points: Vec<Vec<f64>>,
    #[serde(default)]
    weights: Option<Vec<f64>>,
}

pub fn parse_pointcloud_json(text: &str) -> Result<DataDistribution> {
    // serde_json rejects NaN/inf literals, which covers the non-finite case.
    let cloud: JsonCloud = serde_json::from_str(text).map_err(|e| Error::Parse {
        row: e.line(),
        reason: e.to_string(),
    })?;
    if cloud.points.is_empty() {
        return Err(Error::Parse {
            row: 0,
            reason: "no points".into(),
        });
    }
    let d = cloud.points[0].len();
    for (i, p) in cloud.points.iter().enumerate() {
        if p.len() != d || d == 0 {
            return Err(Error::Parse {
                row: i + 1,
                reason: format!("point has {} coordinates, expected {d}", p.len()),
            });
        }
    }
    let points = cloud.points.into_iter().map(DVector::from_vec).collect();
    let mix = match cloud.weights {
        Some(w) => DeltaMixture::new(points, w)?,
        None => DeltaMixture::uniform(points)?,
    };
    Ok(mix.into())
}
