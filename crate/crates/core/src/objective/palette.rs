//! Printable color sets.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Palette {
    colors: Vec<[f64; 3]>,
}

impl Palette {
    /// Non-empty list of distinct colors in `[0, 1]`.
    pub fn new(colors: Vec<[f64; 3]>) -> Result<Self> {
        if colors.is_empty() {
            return Err(Error::Contract("empty palette".into()));
        }
        for (i, c) in colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Input(format!("palette color {c:?} outside [0,1]")));
            }
            if colors[..i].contains(c) {
                return Err(Error::Input(format!("duplicate palette color {c:?}")));
            }
        }
        Ok(Self { colors })
    }

    /// 32 colors on a 4 × 4 × 2 lattice (red and green at four levels,
    /// blue at two).
    pub fn lattice() -> Self {
        let mut colors = Vec::with_capacity(32);
        for r in 0..4 {
            for g in 0..4 {
                for b in 0..2 {
                    colors.push([r as f64 / 3.0, g as f64 / 3.0, b as f64]);
                }
            }
        }
        Self { colors }
    }

    /// One triplet per line, separated by whitespace or commas; `#` starts a
    /// comment. Values above 1 anywhere switch the whole file to 0–255.
    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Input(format!("palette line {}: {e}", lineno + 1)))?;
            if vals.len() != 3 {
                return Err(Error::Input(format!(
                    "palette line {}: expected 3 values, got {}",
                    lineno + 1,
                    vals.len()
                )));
            }
            rows.push([vals[0], vals[1], vals[2]]);
        }
        let bytes = rows.iter().flatten().any(|&v| v > 1.0);
        if bytes {
            rows.iter_mut().for_each(|r| *r = r.map(|v| v / 255.0));
        }
        Self::new(rows)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn colors(&self) -> &[[f64; 3]] {
        &self.colors
    }

    pub fn len(&self) -> usize {
        self.colors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.colors.is_empty()
    }
}

impl Default for Palette {
    fn default() -> Self {
        Self::lattice()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lattice_has_32_distinct_colors() {
        let p = Palette::lattice();
        assert_eq!(p.len(), 32);
        assert!(Palette::new(p.colors().to_vec()).is_ok());
    }

    #[test]
    fn byte_scale_is_detected() {
        let p = Palette::parse("255 0 0\n# comment\n0, 128, 255\n").unwrap();
        assert_eq!(p.colors()[0], [1.0, 0.0, 0.0]);
        assert!((p.colors()[1][1] - 128.0 / 255.0).abs() < 1e-12);
    }

    #[test]
    fn unit_scale_is_kept() {
        let p = Palette::parse("1 0 0\n0 0.5 1\n").unwrap();
        assert_eq!(p.colors()[1], [0.0, 0.5, 1.0]);
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(Palette::parse("1 0\n").is_err());
        assert!(Palette::parse("").is_err());
        assert!(Palette::parse("1 0 0\n1 0 0\n").is_err());
    }
}
