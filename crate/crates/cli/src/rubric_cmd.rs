//! Observation file → per-characteristic verdicts.
//!
//! ```toml
//! color = "red100"            # yellow-grey-under50, yellow-grey50-to100, black-brown
//! periwound = "normal"        # callus, red-under1cm, red-over1cm, maceration, maceration-and-breakdown
//! size_cm = 1.5
//! depth = "minimal-none"      # or a depth in cm, e.g. 0.5
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use woundsev::rubric::{stratify, RubricInput, Stratification};

use crate::config::toml_error;
use crate::error::{CliError, Result};

pub fn parse_observation(path: &Path, text: &str) -> Result<RubricInput> {
    toml::from_str(text).map_err(|e| toml_error(path, text, &e))
}

pub fn render(result: &Stratification) -> String {
    let mut out = String::new();
    for v in &result.verdicts {
        let _ = writeln!(out, "{:<11} {}", v.characteristic.to_string(), v.verdict.as_str().to_uppercase());
    }
    let _ = writeln!(out, "{:<11} {}", "aggregate", result.aggregate.as_str().to_uppercase());
    out
}

pub fn cmd_rubric(path: &Path) -> Result<(Stratification, String)> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    let input = parse_observation(path, &text)?;
    let result = stratify(&input)?;
    let rendered = render(&result);
    Ok((result, rendered))
}

#[cfg(test)]
mod tests {
    use super::*;
    use woundsev::SeverityClass;

    fn run(text: &str) -> Result<(Stratification, String)> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("obs.toml");
        fs::write(&path, text).unwrap();
        cmd_rubric(&path)
    }

    #[test]
    fn unanimous_green() {
        let (s, out) = run("color = \"red100\"\nperiwound = \"normal\"\nsize_cm = 1.5\ndepth = \"minimal-none\"\n").unwrap();
        assert_eq!(s.aggregate, SeverityClass::Green);
        assert_eq!(out.lines().count(), 5);
        assert!(out.lines().take(4).all(|l| l.ends_with("GREEN")));
        assert!(out.ends_with("aggregate   GREEN\n"));
    }

    #[test]
    fn deep_wound_is_red() {
        let (s, out) = run("color = \"red100\"\nperiwound = \"normal\"\nsize_cm = 1\ndepth = 2\n").unwrap();
        assert_eq!(s.aggregate, SeverityClass::Red);
        assert!(out.contains("depth       RED"));
    }

    #[test]
    fn malformed_reports_line() {
        let err = run("color = \"red100\"\nperiwound = \"normal\"\nsize_cm = \"big\"\ndepth = 1\n").unwrap_err();
        assert!(matches!(err, CliError::Parse { line: 3, .. }), "{err}");
        let err = run("color = \"red100\"\nperiwound = \"normal\"\nsize_cm = -1\ndepth = 1\n").unwrap_err();
        assert_eq!(err.exit_code(), crate::error::exit::DATA);
    }
}
