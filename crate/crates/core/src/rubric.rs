//! Red–yellow–green photo-characteristics table as an executable rule set.
//!
//! Each characteristic (colour, peri-wound, size, depth) maps to a severity
//! on its own. The table gives no combination rule; [`stratify`] takes the
//! most severe of the four verdicts (worst case). That aggregation is an
//! engineering choice, not part of the clinical table.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SeverityClass;

#[derive(Debug, Error, PartialEq)]
pub enum RubricError {
    #[error("{what} must be a finite, non-negative length in cm, got {value}")]
    NegativeMeasurement { what: &'static str, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WoundColor {
    /// Red 100%
    Red100,
    /// Yellow-grey under 50%
    YellowGreyUnder50,
    /// Yellow-grey 50–100%
    YellowGrey50To100,
    BlackBrown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Periwound {
    Normal,
    Callus,
    RedUnder1cm,
    RedOver1cm,
    Maceration,
    MacerationAndBreakdown,
}

impl Periwound {
    /// Classifies a peri-wound redness band by its width. The table leaves
    /// exactly 1 cm unassigned; it is placed with the milder `RedUnder1cm`.
    pub fn from_redness_extent(cm: f64) -> Result<Self, RubricError> {
        check_length("peri-wound redness", cm)?;
        Ok(if cm <= 1.0 { Self::RedUnder1cm } else { Self::RedOver1cm })
    }
}

/// Wound depth: either the minimal/none marker or a measured depth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Depth {
    Marker(DepthMarker),
    Cm(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthMarker {
    MinimalNone,
}

impl Depth {
    pub const MINIMAL_NONE: Depth = Depth::Marker(DepthMarker::MinimalNone);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RubricInput {
    pub color: WoundColor,
    pub periwound: Periwound,
    /// Longest dimension in cm.
    pub size_cm: f64,
    pub depth: Depth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Characteristic {
    Color,
    Periwound,
    Size,
    Depth,
}

impl fmt::Display for Characteristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Color => "color",
            Self::Periwound => "peri-wound",
            Self::Size => "size",
            Self::Depth => "depth",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CharacteristicVerdict {
    pub characteristic: Characteristic,
    pub verdict: SeverityClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Stratification {
    pub aggregate: SeverityClass,
    pub verdicts: Vec<CharacteristicVerdict>,
}

fn check_length(what: &'static str, value: f64) -> Result<(), RubricError> {
    if value.is_finite() && value >= 0.0 {
        Ok(())
    } else {
        Err(RubricError::NegativeMeasurement { what, value })
    }
}

pub fn verdict_color(color: WoundColor) -> SeverityClass {
    match color {
        WoundColor::Red100 => SeverityClass::Green,
        WoundColor::YellowGreyUnder50 => SeverityClass::Yellow,
        WoundColor::YellowGrey50To100 | WoundColor::BlackBrown => SeverityClass::Red,
    }
}

pub fn verdict_periwound(periwound: Periwound) -> SeverityClass {
    match periwound {
        Periwound::Normal => SeverityClass::Green,
        Periwound::Callus | Periwound::RedUnder1cm | Periwound::Maceration => SeverityClass::Yellow,
        Periwound::RedOver1cm | Periwound::MacerationAndBreakdown => SeverityClass::Red,
    }
}

/// `[0, 2]` green, `(2, 5]` yellow, `(5, ∞)` red.
pub fn verdict_size(size_cm: f64) -> Result<SeverityClass, RubricError> {
    check_length("size", size_cm)?;
    Ok(if size_cm <= 2.0 {
        SeverityClass::Green
    } else if size_cm <= 5.0 {
        SeverityClass::Yellow
    } else {
        SeverityClass::Red
    })
}

/// Minimal/none green, measured `[0, 1]` yellow, `(1, ∞)` red.
pub fn verdict_depth(depth: Depth) -> Result<SeverityClass, RubricError> {
    match depth {
        Depth::Marker(DepthMarker::MinimalNone) => Ok(SeverityClass::Green),
        Depth::Cm(cm) => {
            check_length("depth", cm)?;
            Ok(if cm <= 1.0 { SeverityClass::Yellow } else { SeverityClass::Red })
        }
    }
}

pub fn stratify(input: &RubricInput) -> Result<Stratification, RubricError> {
    let verdicts = vec![
        CharacteristicVerdict { characteristic: Characteristic::Color, verdict: verdict_color(input.color) },
        CharacteristicVerdict { characteristic: Characteristic::Periwound, verdict: verdict_periwound(input.periwound) },
        CharacteristicVerdict { characteristic: Characteristic::Size, verdict: verdict_size(input.size_cm)? },
        CharacteristicVerdict { characteristic: Characteristic::Depth, verdict: verdict_depth(input.depth)? },
    ];
    let aggregate = verdicts.iter().map(|v| v.verdict).max().expect("four verdicts");
    Ok(Stratification { aggregate, verdicts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use SeverityClass::*;

    #[test]
    fn color_rows() {
        assert_eq!(verdict_color(WoundColor::Red100), Green);
        assert_eq!(verdict_color(WoundColor::YellowGreyUnder50), Yellow);
        assert_eq!(verdict_color(WoundColor::YellowGrey50To100), Red);
        assert_eq!(verdict_color(WoundColor::BlackBrown), Red);
    }

    #[test]
    fn size_and_depth_boundaries() {
        assert_eq!(verdict_size(0.0), Ok(Green));
        assert_eq!(verdict_size(2.0), Ok(Green));
        assert_eq!(verdict_size(2.0001), Ok(Yellow));
        assert_eq!(verdict_size(5.0), Ok(Yellow));
        assert_eq!(verdict_size(5.1), Ok(Red));
        assert!(verdict_size(-0.1).is_err());
        assert!(verdict_size(f64::NAN).is_err());

        assert_eq!(verdict_depth(Depth::MINIMAL_NONE), Ok(Green));
        assert_eq!(verdict_depth(Depth::Cm(1.0)), Ok(Yellow));
        assert_eq!(verdict_depth(Depth::Cm(1.5)), Ok(Red));
        assert!(verdict_depth(Depth::Cm(-2.0)).is_err());
    }

    #[test]
    fn periwound_extent_boundary() {
        assert_eq!(Periwound::from_redness_extent(1.0), Ok(Periwound::RedUnder1cm));
        assert_eq!(Periwound::from_redness_extent(1.01), Ok(Periwound::RedOver1cm));
        assert_eq!(verdict_periwound(Periwound::from_redness_extent(1.0).unwrap()), Yellow);
    }

    #[test]
    fn stratify_examples() {
        let all_green = RubricInput {
            color: WoundColor::Red100,
            periwound: Periwound::Normal,
            size_cm: 1.5,
            depth: Depth::MINIMAL_NONE,
        };
        let s = stratify(&all_green).unwrap();
        assert_eq!(s.aggregate, Green);
        assert!(s.verdicts.iter().all(|v| v.verdict == Green));

        let deep = RubricInput { depth: Depth::Cm(1.5), ..all_green };
        let s = stratify(&deep).unwrap();
        assert_eq!(s.verdicts.iter().map(|v| v.verdict).collect::<Vec<_>>(), vec![Green, Green, Green, Red]);
        assert_eq!(s.aggregate, Red);

        let yellow = RubricInput {
            color: WoundColor::YellowGreyUnder50,
            periwound: Periwound::Callus,
            size_cm: 3.0,
            depth: Depth::Cm(0.5),
        };
        assert_eq!(stratify(&yellow).unwrap().aggregate, Yellow);
    }

    #[test]
    fn depth_deserializes_from_marker_or_number() {
        #[derive(Deserialize)]
        struct W {
            d: Depth,
        }
        let m: W = serde_json::from_str(r#"{"d":"minimal-none"}"#).unwrap();
        assert_eq!(m.d, Depth::MINIMAL_NONE);
        let n: W = serde_json::from_str(r#"{"d":0.7}"#).unwrap();
        assert_eq!(n.d, Depth::Cm(0.7));
    }

    fn arb_input() -> impl Strategy<Value = RubricInput> {
        (
            prop::sample::select(vec![WoundColor::Red100, WoundColor::YellowGreyUnder50, WoundColor::YellowGrey50To100, WoundColor::BlackBrown]),
            prop::sample::select(vec![
                Periwound::Normal,
                Periwound::Callus,
                Periwound::RedUnder1cm,
                Periwound::RedOver1cm,
                Periwound::Maceration,
                Periwound::MacerationAndBreakdown,
            ]),
            0.0f64..20.0,
            prop::option::of(0.0f64..5.0),
        )
            .prop_map(|(color, periwound, size_cm, depth)| RubricInput {
                color,
                periwound,
                size_cm,
                depth: depth.map(Depth::Cm).unwrap_or(Depth::MINIMAL_NONE),
            })
    }

    proptest! {
        #[test]
        fn aggregate_dominates(input in arb_input()) {
            let s = stratify(&input).unwrap();
            prop_assert!(s.verdicts.iter().all(|v| v.verdict <= s.aggregate));
            prop_assert!(s.verdicts.iter().any(|v| v.verdict == s.aggregate));
        }
    }
}
