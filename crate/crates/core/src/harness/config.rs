//! Run configuration: a TOML file with top-level `kind`, `seed`, `preset`,
//! `out` and one flat section per module. Missing keys come from the preset.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetic::GridSpec;
use crate::model::DispersionModel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Constants,
    Charfn,
    Rates,
    KineticSolve,
    Semigroup,
    LatticeSim,
    VerifyAll,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Constants => "constants",
            Kind::Charfn => "charfn",
            Kind::Rates => "rates",
            Kind::KineticSolve => "kinetic-solve",
            Kind::Semigroup => "semigroup",
            Kind::LatticeSim => "lattice-sim",
            Kind::VerifyAll => "verify-all",
        }
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// CI scale.
    Quick,
    /// Desk scale, hours on one machine.
    Paper,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quick" => Ok(Preset::Quick),
            "paper" => Ok(Preset::Paper),
            _ => Err(Error::config("preset", format!("expected quick or paper, got `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ModelSpec {
    UnpinnedNn,
    PinnedNn {
        pinning_mass: f64,
    },
    /// Finite-range potential `alpha_0, alpha_1, ...`.
    Potential {
        coefficients: Vec<f64>,
    },
    /// Two-column CSV `k, omega`.
    Table {
        path: PathBuf,
    },
}

impl ModelSpec {
    pub fn build(&self) -> Result<DispersionModel> {
        let m = match self {
            ModelSpec::UnpinnedNn => Ok(DispersionModel::unpinned_nn()),
            ModelSpec::PinnedNn { pinning_mass } => DispersionModel::pinned_nn(*pinning_mass),
            ModelSpec::Potential { coefficients } => DispersionModel::from_potential(coefficients.clone()),
            ModelSpec::Table { path } => DispersionModel::from_table_csv(path),
        };
        m.map_err(|e| Error::config("model", e.to_string()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalsConfig {
    /// Scale `N` of the characteristic-function experiments.
    pub n: u64,
    /// `N` ladder of the rate sweeps; empty disables them.
    pub ladder: Vec<u64>,
    pub p_grid_stable: Vec<f64>,
    pub p_grid_gaussian: Vec<f64>,
    pub t: f64,
    pub n_paths: usize,
    pub kappa: f64,
    pub tail_ladder: Vec<u64>,
    pub tail_paths: usize,
    /// Pinning mass of the model used by the Gaussian checks.
    pub pinning_mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KineticConfig {
    pub panels_per_side: usize,
    pub order: usize,
    pub k_min: f64,
    pub dt: f64,
    pub mc_paths: usize,
    pub decay_dt: f64,
}

impl KineticConfig {
    pub fn grid(&self) -> GridSpec {
        GridSpec::Graded {
            panels_per_side: self.panels_per_side,
            order: self.order,
            k_min: self.k_min,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub l: usize,
    pub eps: f64,
    /// Second, smaller `eps` for the convergence trend; 0 disables it.
    pub eps_trend: f64,
    pub members: usize,
    pub h: f64,
    pub times: Vec<f64>,
    pub kinetic_dt: f64,
    pub p_max: f64,
    pub scale: f64,
    pub conservation_steps: u64,
    pub drift_draws: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub kind: Kind,
    pub seed: u64,
    pub preset: Preset,
    pub out: PathBuf,
    pub model: ModelSpec,
    pub functionals: FunctionalsConfig,
    pub kinetic: KineticConfig,
    pub lattice: LatticeConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub kind: Option<Kind>,
    pub seed: Option<u64>,
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    /// Complete configuration for `kind` at `preset` scale.
    pub fn preset(kind: Kind, preset: Preset, seed: u64) -> Self {
        let paper = preset == Preset::Paper;
        Self {
            kind,
            seed,
            preset,
            out: PathBuf::from("runs").join(kind.name()),
            model: ModelSpec::UnpinnedNn,
            functionals: FunctionalsConfig {
                n: if paper { 1_000_000 } else { 10_000 },
                ladder: if paper {
                    vec![1_000, 10_000, 100_000, 1_000_000]
                } else {
                    vec![1_000, 3_000, 10_000, 30_000]
                },
                p_grid_stable: vec![0.5, 1.0, 2.0],
                p_grid_gaussian: vec![0.25, 0.5, 1.0],
                t: 1.0,
                n_paths: if paper { 100_000 } else { 10_000 },
                kappa: 0.2,
                tail_ladder: if paper {
                    vec![100, 1_000, 10_000, 100_000]
                } else {
                    vec![100, 1_000, 10_000]
                },
                tail_paths: if paper { 100_000 } else { 10_000 },
                pinning_mass: 1.0,
            },
            kinetic: KineticConfig {
                panels_per_side: 256,
                order: 8,
                k_min: 1e-7,
                dt: 0.01,
                mc_paths: 20_000,
                decay_dt: 0.1,
            },
            lattice: LatticeConfig {
                l: if paper { 4096 } else { 1024 },
                eps: 0.1,
                eps_trend: 0.05,
                members: if paper { 200 } else { 32 },
                h: 0.05,
                times: vec![0.25, 0.5, 1.0],
                kinetic_dt: 0.005,
                p_max: 0.5,
                scale: 2.0,
                conservation_steps: 100_000,
                drift_draws: 1_000_000,
            },
        }
    }

    pub fn from_path(path: &Path, overrides: &Overrides) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn from_toml_str(text: &str, overrides: &Overrides) -> Result<Self> {
        let mut user: toml::Table = text.parse()?;
        let file_kind = match user.remove("kind") {
            Some(v) => Some(Kind::deserialize(v).map_err(|e| Error::config("kind", e.to_string()))?),
            None => None,
        };
        let kind = match (overrides.kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return Err(Error::config("kind", format!("file says `{b}`, command says `{a}`")))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => return Err(Error::config("kind", "missing")),
        };
        let seed = match (overrides.seed, user.remove("seed")) {
            (Some(s), _) => s,
            (None, Some(toml::Value::Integer(s))) if s >= 0 => s as u64,
            (None, Some(v)) => {
                return Err(Error::config(
                    "seed",
                    format!("expected a nonnegative integer, got {v}"),
                ))
            }
            (None, None) => return Err(Error::config("seed", "mandatory; set it in the file or with --seed")),
        };
        if seed > i64::MAX as u64 {
            return Err(Error::config("seed", format!("must not exceed {}", i64::MAX)));
        }
        let preset = match (overrides.preset, user.remove("preset")) {
            (Some(p), _) => p,
            (None, Some(toml::Value::String(s))) => s.parse()?,
            (None, Some(v)) => return Err(Error::config("preset", format!("expected a string, got {v}"))),
            (None, None) => Preset::Quick,
        };
        let mut base = toml::Table::try_from(Self::preset(kind, preset, seed))
            .map_err(|e| Error::config("preset", e.to_string()))?;
        for (key, value) in user {
            match (base.get_mut(&key), value) {
                (Some(toml::Value::Table(section)), toml::Value::Table(over)) if key != "model" => {
                    for (k, v) in over {
                        if !section.contains_key(&k) {
                            return Err(Error::config(format!("{key}.{k}"), "unknown key"));
                        }
                        section.insert(k, v);
                    }
                }
                (Some(_), v) => {
                    base.insert(key, v);
                }
                (None, _) => return Err(Error::config(key, "unknown key")),
            }
        }
        if let Some(out) = &overrides.out {
            base.insert("out".into(), toml::Value::String(out.to_string_lossy().into_owned()));
        }
        let cfg: RunConfig = base
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("config", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, reason: String| Err(Error::config(field, reason));
        self.model.build()?;
        let f = &self.functionals;
        if f.n < 1 {
            return bad("functionals.n", "must be at least 1".into());
        }
        if !(f.t > 0.0 && f.t.is_finite()) {
            return bad("functionals.t", format!("must be positive, got {}", f.t));
        }
        for (name, grid) in [
            ("functionals.p_grid_stable", &f.p_grid_stable),
            ("functionals.p_grid_gaussian", &f.p_grid_gaussian),
        ] {
            if grid.is_empty() || grid.iter().any(|p| !p.is_finite() || *p <= 0.0) {
                return bad(name, "needs one or more positive finite values".into());
            }
        }
        if f.n_paths < 1000 {
            return bad("functionals.n_paths", format!("needs 1000 or more, got {}", f.n_paths));
        }
        if !f.ladder.is_empty() && (f.ladder.len() < 4 || f.ladder.windows(2).any(|w| w[1] <= w[0])) {
            return bad(
                "functionals.ladder",
                "must be empty or 4 or more strictly increasing values".into(),
            );
        }
        if f.tail_ladder.len() < 3 || f.tail_ladder.windows(2).any(|w| w[1] <= w[0]) {
            return bad(
                "functionals.tail_ladder",
                "needs 3 or more strictly increasing values".into(),
            );
        }
        if !(f.kappa > 0.0 && f.kappa < 1.0) {
            return bad("functionals.kappa", format!("must lie in (0, 1), got {}", f.kappa));
        }
        if f.tail_paths < 1000 {
            return bad(
                "functionals.tail_paths",
                format!("needs 1000 or more, got {}", f.tail_paths),
            );
        }
        if !(f.pinning_mass > 0.0 && f.pinning_mass.is_finite()) {
            return bad(
                "functionals.pinning_mass",
                format!("must be positive, got {}", f.pinning_mass),
            );
        }
        let k = &self.kinetic;
        k.grid()
            .validate()
            .map_err(|e| Error::config("kinetic", e.to_string()))?;
        if !(k.dt > 0.0 && k.dt <= 1.0) {
            return bad("kinetic.dt", format!("must lie in (0, 1], got {}", k.dt));
        }
        if !(k.decay_dt > 0.0 && k.decay_dt <= 1.0) {
            return bad("kinetic.decay_dt", format!("must lie in (0, 1], got {}", k.decay_dt));
        }
        if k.mc_paths < 1000 {
            return bad("kinetic.mc_paths", format!("needs 1000 or more, got {}", k.mc_paths));
        }
        let l = &self.lattice;
        if !l.l.is_power_of_two() || l.l < 4 {
            return bad("lattice.l", format!("must be a power of two, at least 4, got {}", l.l));
        }
        if !(l.eps > 0.0 && l.eps <= 1.0) {
            return bad("lattice.eps", format!("must lie in (0, 1], got {}", l.eps));
        }
        if !(l.eps_trend == 0.0 || (l.eps_trend > 0.0 && l.eps_trend < l.eps)) {
            return bad(
                "lattice.eps_trend",
                format!("must be 0 or lie in (0, eps), got {}", l.eps_trend),
            );
        }
        if l.members < 2 {
            return bad("lattice.members", format!("needs 2 or more, got {}", l.members));
        }
        if !(l.h > 0.0 && l.h <= 1.0) {
            return bad("lattice.h", format!("must lie in (0, 1], got {}", l.h));
        }
        if l.times.is_empty() || l.times[0] <= 0.0 || l.times.windows(2).any(|w| w[1] <= w[0]) {
            return bad("lattice.times", "needs positive strictly increasing values".into());
        }
        if !(l.kinetic_dt > 0.0 && l.kinetic_dt <= 1.0) {
            return bad(
                "lattice.kinetic_dt",
                format!("must lie in (0, 1], got {}", l.kinetic_dt),
            );
        }
        if !(l.p_max > 0.0 && l.scale > 0.0) {
            return bad("lattice.p_max", "p_max and scale must be positive".into());
        }
        if l.conservation_steps < 1 || l.drift_draws < 1000 {
            return bad(
                "lattice.conservation_steps",
                "needs 1 or more steps and 1000 or more drift draws".into(),
            );
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(e: Error) -> String {
        match e {
            Error::Config { field, .. } => field,
            other => panic!("expected a config error, got {other}"),
        }
    }

    #[test]
    fn preset_round_trips() {
        for p in [Preset::Quick, Preset::Paper] {
            let c = RunConfig::preset(Kind::VerifyAll, p, 3);
            c.validate().unwrap();
            let back = RunConfig::from_toml_str(&c.to_toml(), &Overrides::default()).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn sections_override_preset_keys() {
        let text = "kind = \"lattice-sim\"\nseed = 9\npreset = \"paper\"\n[lattice]\nmembers = 10\n[model]\nfamily = \"pinned-nn\"\npinning_mass = 0.5\n";
        let c = RunConfig::from_toml_str(text, &Overrides::default()).unwrap();
        assert_eq!(c.lattice.members, 10);
        assert_eq!(c.lattice.l, 4096);
        assert_eq!(c.model, ModelSpec::PinnedNn { pinning_mass: 0.5 });
        let o = Overrides {
            seed: Some(4),
            preset: Some(Preset::Quick),
            ..Default::default()
        };
        let c = RunConfig::from_toml_str(text, &o).unwrap();
        assert_eq!((c.seed, c.lattice.l), (4, 1024));
    }

    #[test]
    fn validation_names_the_field() {
        let no_seed = RunConfig::from_toml_str("kind = \"constants\"\n", &Overrides::default());
        assert_eq!(field_of(no_seed.unwrap_err()), "seed");
        let cases = [
            ("[lattice]\nl = 1000\n", "lattice.l"),
            ("[lattice]\neps = 0.0\n", "lattice.eps"),
            ("[functionals]\nladder = [10, 5, 20, 30]\n", "functionals.ladder"),
            ("[functionals]\nkappa = 1.5\n", "functionals.kappa"),
            ("[kinetic]\nmc_paths = 10\n", "kinetic.mc_paths"),
            ("[kinetic]\nbogus = 1\n", "kinetic.bogus"),
            ("[model]\nfamily = \"pinned-nn\"\npinning_mass = -1.0\n", "model"),
        ];
        for (body, field) in cases {
            let text = format!("kind = \"charfn\"\nseed = 1\n{body}");
            let e = RunConfig::from_toml_str(&text, &Overrides::default()).unwrap_err();
            assert_eq!(field_of(e), field, "{body}");
        }
        let clash = Overrides {
            kind: Some(Kind::Rates),
            ..Default::default()
        };
        let e = RunConfig::from_toml_str("kind = \"charfn\"\nseed = 1\n", &clash).unwrap_err();
        assert_eq!(field_of(e), "kind");
    }
}
