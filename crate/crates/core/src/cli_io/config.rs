//! TOML run configuration. `[cell]` is required; every other section and
//! key falls back to its default. Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::boundary_noise::{KLNoise, NoiseOperators};
use crate::cell_geometry::{HoleShape, HoleSpec};
use crate::darcy_macro::{Forcing, SpatialForcing};
use crate::error::{Error, Result};
use crate::linalg::Vec2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub cell: CellSection,
    #[serde(default)]
    pub noise: NoiseSection,
    #[serde(default, rename = "macro")]
    pub macro_: MacroSection,
    #[serde(default)]
    pub micro: MicroSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CellSection {
    pub hole: HoleShape,
    pub center: [f64; 2],
    pub radius: f64,
    pub h: f64,
    pub nu: f64,
    pub alpha: f64,
    pub dt: f64,
    pub horizon: f64,
}

impl Default for CellSection {
    fn default() -> Self {
        CellSection {
            hole: HoleShape::Disk,
            center: [0.5, 0.5],
            radius: 0.25,
            h: 0.05,
            nu: 1.0,
            alpha: 1.0,
            dt: 0.01,
            horizon: 2.0,
        }
    }
}

impl CellSection {
    pub fn hole_spec(&self) -> HoleSpec {
        match self.hole {
            HoleShape::Disk => HoleSpec::disk(Vec2::new(self.center[0], self.center[1]), self.radius),
            HoleShape::None => HoleSpec::none(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSection {
    /// Number of Karhunen–Loève modes `J`.
    pub modes: usize,
    /// `λ_j = (j+1)^(−decay)`.
    pub decay: f64,
    pub seed: u64,
    pub g1: f64,
    pub g21: f64,
    pub g22: f64,
}

impl Default for NoiseSection {
    fn default() -> Self {
        NoiseSection {
            modes: 4,
            decay: 2.0,
            seed: 0,
            g1: 0.0,
            g21: 0.0,
            g22: 0.0,
        }
    }
}

impl NoiseSection {
    pub fn spec(&self) -> Result<KLNoise> {
        KLNoise::power_law(self.modes, self.decay, self.seed)
    }

    pub fn operators(&self) -> NoiseOperators {
        NoiseOperators::with_gains(self.modes, self.g1, self.g21, self.g22)
    }

    pub fn is_zero(&self) -> bool {
        self.g1 == 0.0 && self.g21 == 0.0 && self.g22 == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForcingSpec {
    None,
    Uniform { value: [f64; 2] },
    Stream { amplitude: f64 },
}

impl ForcingSpec {
    pub fn forcing(&self) -> Forcing {
        match self {
            ForcingSpec::None => Forcing::none(),
            ForcingSpec::Uniform { value } => {
                Forcing::steady(SpatialForcing::Uniform(Vec2::new(value[0], value[1])))
            }
            ForcingSpec::Stream { amplitude } => Forcing::steady(SpatialForcing::Stream {
                amplitude: *amplitude,
            }),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MacroSection {
    pub n: usize,
    pub dt: f64,
    pub horizon: f64,
    pub forcing: ForcingSpec,
}

impl Default for MacroSection {
    fn default() -> Self {
        MacroSection {
            n: 32,
            dt: 0.01,
            horizon: 1.0,
            forcing: ForcingSpec::Stream { amplitude: 1.0 },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MicroSection {
    pub eps: Vec<f64>,
    pub beta: f64,
    /// Cell mesh size used for the tiled micro meshes.
    pub h: f64,
    /// Allow ε below 1/4.
    pub fine: bool,
}

impl Default for MicroSection {
    fn default() -> Self {
        MicroSection {
            eps: vec![0.5, 0.25],
            beta: 2.0,
            h: 0.1,
            fine: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub directory: PathBuf,
    /// Write a field snapshot every this many macro steps; 0 keeps only
    /// the final one.
    pub snapshot_every: usize,
    pub svg: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
            snapshot_every: 0,
            svg: false,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Default configuration with the given `[cell]` overrides applied.
    pub fn with_cell(cell: CellSection) -> Self {
        RunConfig {
            cell,
            noise: NoiseSection::default(),
            macro_: MacroSection::default(),
            micro: MicroSection::default(),
            output: OutputSection::default(),
        }
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let c = &self.cell;
        for (name, v) in [("cell.h", c.h), ("cell.nu", c.nu), ("cell.alpha", c.alpha), ("cell.dt", c.dt)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} = {v} must be positive"));
            }
        }
        if !(c.horizon >= c.dt) {
            return bad(format!("cell.horizon = {} must be at least cell.dt", c.horizon));
        }
        if self.noise.modes == 0 {
            return bad("noise.modes must be positive".into());
        }
        let m = &self.macro_;
        if m.n < 2 {
            return bad(format!("macro.n = {} must be at least 2", m.n));
        }
        if !(m.dt > 0.0) || !(m.horizon >= m.dt) {
            return bad("macro.dt must be positive and macro.horizon at least macro.dt".into());
        }
        if self.micro.eps.is_empty() {
            return bad("micro.eps must list at least one value".into());
        }
        if !(self.micro.beta > 1.0) {
            return bad(format!("micro.beta = {} must exceed 1", self.micro.beta));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }
}
