//! Campaign aggregation, input-transformation robustness and transferability.

use std::io::Cursor;

use image::codecs::jpeg::JpegEncoder;
use image::{ExtendedColorType, ImageFormat};
use serde::{Deserialize, Serialize};

use crate::attacks::{AttackOutcome, Goal};
use crate::classifier::{is_adversarial, Model};
use crate::colorspace::ImageTensor;
use crate::error::{Error, Result};

pub const DEFAULT_BIT_DEPTHS: [u8; 5] = [7, 6, 5, 4, 3];
pub const DEFAULT_JPEG_QUALITIES: [u8; 5] = [90, 70, 50, 30, 10];

/// One image's result within a campaign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub id: String,
    pub label: usize,
    pub target: Option<usize>,
    pub success: bool,
    pub iterations: usize,
    pub l2: f64,
    pub linf: f64,
    pub c2: f64,
    pub margin: f64,
}

impl OutcomeRecord {
    pub fn new(id: impl Into<String>, goal: Goal, outcome: &AttackOutcome) -> Self {
        Self {
            id: id.into(),
            label: goal.label,
            target: goal.target,
            success: outcome.success,
            iterations: outcome.iterations,
            l2: outcome.metrics.l2,
            linf: outcome.metrics.linf,
            c2: outcome.metrics.c2,
            margin: outcome.margin,
        }
    }
}

/// Success rate over all images; mean sizes over successful images only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub images: usize,
    pub successes: usize,
    /// Percent.
    pub success_rate: f64,
    pub mean_l2: Option<f64>,
    pub mean_linf: Option<f64>,
    pub mean_c2: Option<f64>,
    pub mean_iterations: f64,
}

pub fn aggregate(records: &[OutcomeRecord]) -> Result<Summary> {
    if records.is_empty() {
        return Err(Error::EmptyOutcomes);
    }
    let wins: Vec<&OutcomeRecord> = records.iter().filter(|r| r.success).collect();
    let mean = |f: fn(&OutcomeRecord) -> f64| {
        if wins.is_empty() {
            None
        } else {
            Some(wins.iter().map(|r| f(r)).sum::<f64>() / wins.len() as f64)
        }
    };
    Ok(Summary {
        images: records.len(),
        successes: wins.len(),
        success_rate: 100.0 * wins.len() as f64 / records.len() as f64,
        mean_l2: mean(|r| r.l2),
        mean_linf: mean(|r| r.linf),
        mean_c2: mean(|r| r.c2),
        mean_iterations: records.iter().map(|r| r.iterations as f64).sum::<f64>() / records.len() as f64,
    })
}

/// Each component rounded to the nearest of `2^bits` uniform levels on `[0, 1]`.
pub fn bit_depth_reduce(x: &ImageTensor, bits: u8) -> Result<ImageTensor> {
    if !(1..=8).contains(&bits) {
        return Err(Error::BitDepth(bits));
    }
    let levels = ((1u32 << bits) - 1) as f64;
    let data = x.data().iter().map(|v| (v * levels).round_ties_even() / levels).collect();
    ImageTensor::new(x.height(), x.width(), data)
}

/// Baseline JPEG encode/decode of the 8-bit image at `quality`.
pub fn jpeg_roundtrip(x: &ImageTensor, quality: u8) -> Result<ImageTensor> {
    if !(1..=100).contains(&quality) {
        return Err(Error::JpegQuality(quality));
    }
    let (h, w) = x.dims();
    let mut buf = Vec::new();
    JpegEncoder::new_with_quality(&mut buf, quality)
        .encode(&x.to_u8(), w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::Transform(e.to_string()))?;
    let decoded = image::load(Cursor::new(buf), ImageFormat::Jpeg)
        .map_err(|e| Error::Transform(e.to_string()))?
        .to_rgb8();
    if decoded.dimensions() != (w as u32, h as u32) {
        return Err(Error::Transform("decoded JPEG has different dimensions".into()));
    }
    ImageTensor::from_u8(h, w, decoded.as_raw())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformKind {
    Identity,
    BitDepth,
    Jpeg,
}

impl TransformKind {
    pub fn apply(self, x: &ImageTensor, param: u8) -> Result<ImageTensor> {
        match self {
            TransformKind::Identity => Ok(x.clone()),
            TransformKind::BitDepth => bit_depth_reduce(x, param),
            TransformKind::Jpeg => jpeg_roundtrip(x, param),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "identity",
            TransformKind::BitDepth => "bit_depth",
            TransformKind::Jpeg => "jpeg",
        }
    }
}

/// An attacked image with its clean original.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialExample {
    pub original: ImageTensor,
    pub adversarial: ImageTensor,
    pub goal: Goal,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobustnessCurve {
    pub transform: TransformKind,
    pub grid: Vec<u8>,
    /// Percent of all attacked images that were successful and stay adversarial after the transform.
    pub rates: Vec<f64>,
}

/// Survival of successful examples under `transform` at every grid point,
/// judged by the plain (κ = 0) predicate of each example's mode.
pub fn robustness_eval(
    model: &Model,
    examples: &[AdversarialExample],
    transform: TransformKind,
    grid: &[u8],
) -> Result<RobustnessCurve> {
    let mut rates = Vec::with_capacity(grid.len());
    for &p in grid {
        let mut kept = 0usize;
        for e in examples.iter().filter(|e| e.success) {
            let t = transform.apply(&e.adversarial, p)?;
            if is_adversarial(&model.forward(&t)?, e.goal.label, e.goal.target, 0.0)? {
                kept += 1;
            }
        }
        rates.push(if examples.is_empty() {
            0.0
        } else {
            100.0 * kept as f64 / examples.len() as f64
        });
    }
    Ok(RobustnessCurve {
        transform,
        grid: grid.to_vec(),
        rates,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    /// Images the target model classifies correctly when clean.
    pub filtered: usize,
    pub transferred: usize,
    /// Percent of `filtered`.
    pub rate: f64,
}

/// Untargeted misclassification of `target` on successful source examples,
/// restricted to images `target` gets right when clean.
pub fn transfer_eval(examples: &[AdversarialExample], target: &Model) -> Result<TransferResult> {
    let mut filtered = 0usize;
    let mut transferred = 0usize;
    for e in examples {
        if target.predict(&e.original)? != e.goal.label {
            continue;
        }
        filtered += 1;
        if e.success && target.predict(&e.adversarial)? != e.goal.label {
            transferred += 1;
        }
    }
    if filtered == 0 {
        return Err(Error::EmptySuite);
    }
    Ok(TransferResult {
        filtered,
        transferred,
        rate: 100.0 * transferred as f64 / filtered as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(success: bool, l2: f64) -> OutcomeRecord {
        OutcomeRecord {
            id: "a".into(),
            label: 0,
            target: None,
            success,
            iterations: 10,
            l2,
            linf: 1.0,
            c2: 2.0 * l2,
            margin: 0.5,
        }
    }

    #[test]
    fn all_failures_have_no_means() {
        let s = aggregate(&[record(false, 1.0), record(false, 3.0)]).unwrap();
        assert_eq!(s.success_rate, 0.0);
        assert_eq!(s.mean_l2, None);
        assert_eq!(s.mean_c2, None);
    }

    #[test]
    fn single_success_mean() {
        let s = aggregate(&[record(true, 2.0)]).unwrap();
        assert_eq!(s.mean_l2, Some(2.0));
        assert_eq!(s.success_rate, 100.0);
    }

    #[test]
    fn means_skip_failures() {
        let s = aggregate(&[record(true, 2.0), record(false, 100.0), record(true, 4.0)]).unwrap();
        assert_eq!(s.mean_l2, Some(3.0));
        assert!((s.success_rate - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn empty_aggregate_is_an_error() {
        assert!(matches!(aggregate(&[]), Err(Error::EmptyOutcomes)));
    }

    #[test]
    fn bit_depth_edges() {
        let x = ImageTensor::new(1, 2, vec![0.0, 0.2, 0.49, 0.51, 0.8, 1.0]).unwrap();
        let one = bit_depth_reduce(&x, 1).unwrap();
        assert_eq!(one.data(), &[0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
        let q = x.quantize();
        assert_eq!(bit_depth_reduce(&q, 8).unwrap(), q);
        assert!(matches!(bit_depth_reduce(&x, 0), Err(Error::BitDepth(0))));
        assert!(matches!(bit_depth_reduce(&x, 9), Err(Error::BitDepth(9))));
    }

    #[test]
    fn jpeg_rejects_bad_quality() {
        let x = ImageTensor::filled(8, 8, [0.5; 3]).unwrap();
        assert!(matches!(jpeg_roundtrip(&x, 0), Err(Error::JpegQuality(0))));
        assert!(matches!(jpeg_roundtrip(&x, 101), Err(Error::JpegQuality(101))));
        let y = jpeg_roundtrip(&x, 50).unwrap();
        assert_eq!(y.dims(), (8, 8));
    }
}
