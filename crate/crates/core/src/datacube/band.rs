use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the eight co-registered layers of a datacube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Band {
    #[serde(rename = "VV")]
    Vv,
    #[serde(rename = "VH")]
    Vh,
    #[serde(rename = "R")]
    Red,
    #[serde(rename = "G")]
    Green,
    #[serde(rename = "B")]
    Blue,
    #[serde(rename = "NIR")]
    Nir,
    #[serde(rename = "SLOPE")]
    Slope,
    #[serde(rename = "ELEVATION")]
    Elevation,
}

impl Band {
    /// Canonical band order used by freshly built cubes.
    pub const ALL: [Band; 8] = [
        Band::Vv,
        Band::Vh,
        Band::Red,
        Band::Green,
        Band::Blue,
        Band::Nir,
        Band::Slope,
        Band::Elevation,
    ];

    pub const SAR: [Band; 2] = [Band::Vv, Band::Vh];
    pub const OPTICAL: [Band; 4] = [Band::Red, Band::Green, Band::Blue, Band::Nir];
    pub const STATIC: [Band; 2] = [Band::Slope, Band::Elevation];

    pub fn name(self) -> &'static str {
        match self {
            Band::Vv => "VV",
            Band::Vh => "VH",
            Band::Red => "R",
            Band::Green => "G",
            Band::Blue => "B",
            Band::Nir => "NIR",
            Band::Slope => "SLOPE",
            Band::Elevation => "ELEVATION",
        }
    }

    /// Ordinal in the canonical order.
    pub fn ordinal(self) -> usize {
        Band::ALL.iter().position(|b| *b == self).unwrap()
    }

    pub fn is_static(self) -> bool {
        matches!(self, Band::Slope | Band::Elevation)
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Band {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Band::ALL
            .into_iter()
            .find(|b| b.name() == s)
            .ok_or_else(|| Error::UnknownBand(s.to_string()))
    }
}

/// Checks that `bands` is a permutation of all eight bands.
pub fn validate_band_table(bands: &[Band]) -> Result<()> {
    if bands.len() != Band::ALL.len() {
        return Err(Error::BandTable(format!(
            "expected {} bands, found {}",
            Band::ALL.len(),
            bands.len()
        )));
    }
    for (i, b) in bands.iter().enumerate() {
        if bands[..i].contains(b) {
            return Err(Error::BandTable(format!("duplicate band {b}")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for b in Band::ALL {
            assert_eq!(b.name().parse::<Band>().unwrap(), b);
        }
        assert!(matches!("SWIR".parse::<Band>(), Err(Error::UnknownBand(_))));
    }

    #[test]
    fn ordinals_are_a_permutation() {
        let mut ords: Vec<usize> = Band::ALL.iter().map(|b| b.ordinal()).collect();
        ords.sort();
        assert_eq!(ords, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn band_table_rejects_duplicates_and_short_tables() {
        assert!(validate_band_table(&Band::ALL).is_ok());
        let mut dup = Band::ALL;
        dup[7] = Band::Vv;
        assert!(validate_band_table(&dup).is_err());
        assert!(validate_band_table(&Band::ALL[..7]).is_err());
    }

    #[test]
    fn serde_uses_short_names() {
        let json = serde_json::to_string(&Band::Elevation).unwrap();
        assert_eq!(json, "\"ELEVATION\"");
        let back: Band = serde_json::from_str("\"NIR\"").unwrap();
        assert_eq!(back, Band::Nir);
    }
}
