//! Qualitative material descriptors and their mapping to elastic parameters.
//!
//! The mapping is hierarchical: composition fixes density, base stiffness and
//! Poisson ratio; the bounce label scales stiffness and sets per-step velocity
//! retention; roughness fixes the friction coefficient. All values are
//! engineering defaults and can be replaced with a table file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on metric Young's modulus used by the explicit integrator (Pa).
/// Stiffer materials are simulated at this value, i.e. quasi-rigidly.
pub const MAX_METRIC_YOUNGS: f64 = 5e8;

macro_rules! label_enum {
    ($name:ident, $field:literal, { $($variant:ident => $s:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name { $($variant),+ }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),+ }
            }
        }

        impl FromStr for $name {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s.trim().to_ascii_lowercase().as_str() {
                    $($s => Ok($name::$variant),)+
                    _ => Err(Error::UnknownLabel { field: $field, label: s.to_string() }),
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }
    };
}

label_enum!(Composition, "composition", {
    Rubber => "rubber",
    Wood => "wood",
    Metal => "metal",
    Plastic => "plastic",
    Plush => "plush",
    Ceramic => "ceramic",
    Foam => "foam",
});

label_enum!(Bounce, "bounce", {
    High => "high",
    Medium => "medium",
    Low => "low",
});

label_enum!(Roughness, "roughness", {
    Smooth => "smooth",
    Medium => "medium",
    Rough => "rough",
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MaterialDescriptor {
    pub composition: Composition,
    pub bounce: Bounce,
    pub roughness: Roughness,
}

impl MaterialDescriptor {
    pub fn new(composition: Composition, bounce: Bounce, roughness: Roughness) -> Self {
        MaterialDescriptor {
            composition,
            bounce,
            roughness,
        }
    }

    pub fn parse(composition: &str, bounce: &str, roughness: &str) -> Result<Self> {
        Ok(MaterialDescriptor {
            composition: composition.parse()?,
            bounce: bounce.parse()?,
            roughness: roughness.parse()?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// kg/m^3 (numerically unchanged in simulation units).
    pub density: f64,
    /// Pa in metric space; scaled by S^2 in simulation space.
    pub youngs: f64,
    pub poisson: f64,
    pub friction: f64,
    /// Fraction of velocity retained per nominal simulation step.
    pub damping: f64,
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::validation(format!("material parameters: {m}")));
        if !(self.density > 0.0 && self.density.is_finite()) {
            return bad("density must be > 0");
        }
        if !(self.youngs > 0.0 && self.youngs.is_finite()) {
            return bad("Young's modulus must be > 0");
        }
        if !(0.0..0.5).contains(&self.poisson) {
            return bad("Poisson ratio must lie in [0, 0.5)");
        }
        if !(self.friction >= 0.0 && self.friction.is_finite()) {
            return bad("friction must be >= 0");
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return bad("damping must lie in (0, 1]");
        }
        Ok(())
    }

    /// Lamé parameters `(mu, lambda)`.
    pub fn lame(&self) -> (f64, f64) {
        let (e, nu) = (self.youngs, self.poisson);
        (e / (2.0 * (1.0 + nu)), e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu)))
    }

    /// Dilatational wave speed `sqrt((lambda + 2 mu) / rho)` used by the CFL bound.
    pub fn wave_speed(&self) -> f64 {
        let (mu, lambda) = self.lame();
        ((lambda + 2.0 * mu) / self.density).sqrt()
    }
}

/// Maps metric parameters into simulation units for scale `s` (sim-units per meter).
///
/// Time stays in seconds and density stays numerically fixed, so specific
/// stiffness `E / rho` (m^2/s^2) picks up a factor `s^2`.
pub fn rescale_material(params: &MaterialParams, s: f64) -> MaterialParams {
    assert!(s > 0.0, "scale must be positive");
    MaterialParams {
        youngs: params.youngs * s * s,
        ..*params
    }
}

/// Applies the quasi-rigid stiffness ceiling in simulation units.
pub fn clamp_sim_youngs(params: &MaterialParams, s: f64) -> MaterialParams {
    MaterialParams {
        youngs: params.youngs.min(MAX_METRIC_YOUNGS * s * s),
        ..*params
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompositionRow {
    pub composition: Composition,
    pub density: f64,
    pub youngs: f64,
    pub poisson: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BounceRow {
    pub label: Bounce,
    pub youngs_scale: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoughnessRow {
    pub label: Roughness,
    pub friction: f64,
}

/// On-disk table layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialTableFile {
    pub compositions: Vec<CompositionRow>,
    #[serde(default)]
    pub bounce: Vec<BounceRow>,
    #[serde(default)]
    pub roughness: Vec<RoughnessRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaterialTable {
    compositions: BTreeMap<Composition, CompositionRow>,
    bounce: BTreeMap<Bounce, BounceRow>,
    roughness: BTreeMap<Roughness, RoughnessRow>,
}

impl Default for MaterialTable {
    fn default() -> Self {
        use Composition::*;
        let comp = |composition, density, youngs, poisson| CompositionRow {
            composition,
            density,
            youngs,
            poisson,
        };
        let compositions = [
            comp(Rubber, 1100.0, 1e6, 0.47),
            comp(Wood, 700.0, 1e9, 0.35),
            comp(Metal, 7800.0, 1e11, 0.30),
            comp(Plastic, 1000.0, 2e9, 0.35),
            comp(Plush, 150.0, 5e4, 0.30),
            comp(Ceramic, 2500.0, 7e10, 0.25),
            comp(Foam, 80.0, 1e5, 0.30),
        ];
        let bounce = [
            BounceRow { label: Bounce::High, youngs_scale: 1.0, damping: 1.0 },
            BounceRow { label: Bounce::Medium, youngs_scale: 1.0, damping: 0.999 },
            BounceRow { label: Bounce::Low, youngs_scale: 0.5, damping: 0.995 },
        ];
        let roughness = [
            RoughnessRow { label: Roughness::Smooth, friction: 0.1 },
            RoughnessRow { label: Roughness::Medium, friction: 0.3 },
            RoughnessRow { label: Roughness::Rough, friction: 0.6 },
        ];
        MaterialTable {
            compositions: compositions.into_iter().map(|r| (r.composition, r)).collect(),
            bounce: bounce.into_iter().map(|r| (r.label, r)).collect(),
            roughness: roughness.into_iter().map(|r| (r.label, r)).collect(),
        }
    }
}

impl MaterialTable {
    pub fn map_descriptor(&self, d: &MaterialDescriptor) -> MaterialParams {
        let c = &self.compositions[&d.composition];
        let b = &self.bounce[&d.bounce];
        let r = &self.roughness[&d.roughness];
        MaterialParams {
            density: c.density,
            youngs: c.youngs * b.youngs_scale,
            poisson: c.poisson,
            friction: r.friction,
            damping: b.damping,
        }
    }

    /// Builds a table from its file form. Rows override the built-in defaults;
    /// labels not mentioned keep their default values.
    pub fn from_file_form(file: &MaterialTableFile) -> Result<Self> {
        let mut table = MaterialTable::default();
        for row in &file.compositions {
            let probe = MaterialParams {
                density: row.density,
                youngs: row.youngs,
                poisson: row.poisson,
                friction: 0.0,
                damping: 1.0,
            };
            probe.validate().map_err(|e| {
                Error::validation(format!("composition {}: {e}", row.composition))
            })?;
            table.compositions.insert(row.composition, *row);
        }
        for row in &file.bounce {
            if !(row.youngs_scale > 0.0 && row.youngs_scale.is_finite()) {
                return Err(Error::validation(format!(
                    "bounce {}: youngs_scale must be > 0",
                    row.label
                )));
            }
            if !(row.damping > 0.0 && row.damping <= 1.0) {
                return Err(Error::validation(format!(
                    "bounce {}: damping must lie in (0, 1]",
                    row.label
                )));
            }
            table.bounce.insert(row.label, *row);
        }
        for row in &file.roughness {
            if !(row.friction >= 0.0 && row.friction.is_finite()) {
                return Err(Error::validation(format!(
                    "roughness {}: friction must be >= 0",
                    row.label
                )));
            }
            table.roughness.insert(row.label, *row);
        }
        Ok(table)
    }

    pub fn to_file_form(&self) -> MaterialTableFile {
        MaterialTableFile {
            compositions: self.compositions.values().copied().collect(),
            bounce: self.bounce.values().copied().collect(),
            roughness: self.roughness.values().copied().collect(),
        }
    }

    pub fn parse_json(text: &str) -> Result<Self> {
        let file: MaterialTableFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            message: e.to_string(),
        })?;
        Self::from_file_form(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_json(&text)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.to_file_form()).map_err(|source| {
            Error::Json {
                path: path.to_path_buf(),
                source,
            }
        })?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Maps a descriptor through the built-in table.
pub fn map_descriptor(d: &MaterialDescriptor) -> MaterialParams {
    MaterialTable::default().map_descriptor(d)
}
