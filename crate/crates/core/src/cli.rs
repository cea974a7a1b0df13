//! Run configuration and the experiment driver behind the command-line tool.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::analysis::{
    layers_for_H, sweep_H, sweep_J, sweep_m, Experiment, LayerChoice, MediumSpec, StudyConfig, StudyTable,
};
use crate::cem::{block_basis, build_multiscale_space};
use crate::error::{Error, Result};
use crate::export::{eigenvalue_csv, split_displacement, vtk_string, write_state_vtk};
use crate::fem::TimeGrid;
use crate::medium::{PhysicsConstants, RNG_ALGORITHM};
use crate::mesh::{CoarsePartition, FineMesh};
use crate::spectral::{AuxiliarySpaces, Family, PartitionOfUnity, WeightFields};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Reference,
    Multiscale,
    SweepH,
    SweepM,
    SweepJ,
    ExportBasis,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Reference => "reference",
            Mode::Multiscale => "multiscale",
            Mode::SweepH => "sweep-H",
            Mode::SweepM => "sweep-m",
            Mode::SweepJ => "sweep-J",
            Mode::ExportBasis => "export-basis",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        [
            Mode::Reference,
            Mode::Multiscale,
            Mode::SweepH,
            Mode::SweepM,
            Mode::SweepJ,
            Mode::ExportBasis,
        ]
        .into_iter()
        .find(|m| m.name() == s)
        .ok_or_else(|| Error::config("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layers {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub mode: Mode,
    pub fine_n: usize,
    pub coarse_n: usize,
    pub layers: Layers,
    pub basis_j: usize,
    pub tau: f64,
    pub final_time: f64,
    pub medium: MediumSpec,
    pub seed: u64,
    pub consts: PhysicsConstants,
    pub source: f64,
    pub out: PathBuf,
    pub threads: Option<usize>,
    pub coarse_n_list: Vec<usize>,
    pub layers_list: Vec<usize>,
    pub basis_j_list: Vec<usize>,
    pub export_block: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Multiscale,
            fine_n: 80,
            coarse_n: 8,
            layers: Layers::Auto,
            basis_j: 4,
            tau: 5.0,
            final_time: 100.0,
            medium: MediumSpec::Channel { contrast: 1e4 },
            seed: 0,
            consts: PhysicsConstants::default(),
            source: 1.0,
            out: PathBuf::from("out"),
            threads: None,
            coarse_n_list: vec![4, 8, 16],
            layers_list: (1..=6).collect(),
            basis_j_list: (1..=8).collect(),
            export_block: 0,
        }
    }
}

/// Keys accepted in config files; flags map onto the same keys.
pub const KEYS: &[&str] = &[
    "mode", "fine_n", "coarse_N", "layers", "basis_J", "tau", "T", "medium", "contrast", "seed", "M", "nu",
    "nu_p", "f", "out", "threads", "coarse_N_list", "layers_list", "basis_J_list", "export_block",
];

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (no, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::config(format!("line {}", no + 1), "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{v}`")))
}

fn list(key: &str, v: &str) -> Result<Vec<usize>> {
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| num(key, s))
        .collect()
}

impl RunConfig {
    /// Applies `pairs` in order over the defaults and validates the result.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut c = RunConfig::default();
        let mut medium_name = "channel".to_string();
        let mut contrast = 1e4;
        for (k, v) in pairs {
            match k.as_str() {
                "mode" => c.mode = Mode::parse(v)?,
                "fine_n" => c.fine_n = num(k, v)?,
                "coarse_N" => c.coarse_n = num(k, v)?,
                "layers" => {
                    c.layers = if v == "auto" { Layers::Auto } else { Layers::Fixed(num(k, v)?) }
                }
                "basis_J" => c.basis_j = num(k, v)?,
                "tau" => c.tau = num(k, v)?,
                "T" => c.final_time = num(k, v)?,
                "medium" => medium_name = v.clone(),
                "contrast" => contrast = num(k, v)?,
                "seed" => c.seed = num(k, v)?,
                "M" => c.consts.biot_modulus = num(k, v)?,
                "nu" => c.consts.viscosity = num(k, v)?,
                "nu_p" => c.consts.poisson_ratio = num(k, v)?,
                "f" => c.source = num(k, v)?,
                "out" => c.out = PathBuf::from(v),
                "threads" => c.threads = Some(num(k, v)?),
                "coarse_N_list" => c.coarse_n_list = list(k, v)?,
                "layers_list" => c.layers_list = list(k, v)?,
                "basis_J_list" => c.basis_j_list = list(k, v)?,
                "export_block" => c.export_block = num(k, v)?,
                other => return Err(Error::config(other, "unknown key")),
            }
        }
        c.medium = match medium_name.as_str() {
            "channel" => MediumSpec::Channel { contrast },
            "fracture" => MediumSpec::Fracture { contrast },
            "homogeneous" => MediumSpec::Homogeneous { young: 1.0, kappa: 1.0, alpha: 1.0 },
            path => MediumSpec::File(PathBuf::from(path)),
        };
        if !(contrast >= 1.0) {
            return Err(Error::config("contrast", format!("must be >= 1, got {contrast}")));
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        TimeGrid::new(self.tau, self.final_time).map_err(|e| Error::config("tau", e.to_string()))?;
        if self.fine_n < 2 {
            return Err(Error::config("fine_n", "must be at least 2"));
        }
        let ns: Vec<usize> = match self.mode {
            Mode::SweepH => self.coarse_n_list.clone(),
            _ => vec![self.coarse_n],
        };
        if ns.is_empty() {
            return Err(Error::config("coarse_N_list", "at least one value is required"));
        }
        for n in ns {
            if n == 0 || self.fine_n % n != 0 {
                let field = if self.mode == Mode::SweepH { "coarse_N_list" } else { "coarse_N" };
                return Err(Error::config(
                    field,
                    format!("{n} does not divide fine_n = {}", self.fine_n),
                ));
            }
        }
        if self.threads == Some(0) {
            return Err(Error::config("threads", "must be positive"));
        }
        if self.mode == Mode::ExportBasis && self.export_block >= self.coarse_n * self.coarse_n {
            return Err(Error::config("export_block", "block index out of range"));
        }
        if !(self.consts.biot_modulus > 0.0) {
            return Err(Error::config("M", "must be positive"));
        }
        if !(self.consts.viscosity > 0.0) {
            return Err(Error::config("nu", "must be positive"));
        }
        if !(self.consts.poisson_ratio > -1.0 && self.consts.poisson_ratio < 0.5) {
            return Err(Error::config("nu_p", "must lie in (-1, 1/2)"));
        }
        Ok(())
    }

    /// Layer count at coarse size `N`.
    pub fn layers_at(&self, coarse_n: usize) -> Result<usize> {
        match self.layers {
            Layers::Fixed(m) => Ok(m),
            Layers::Auto => layers_for_H(std::f64::consts::SQRT_2 / coarse_n as f64),
        }
    }

    /// Effective configuration as `key = value` lines, parseable by [`parse_pairs`].
    pub fn echo(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let (medium, contrast) = match &self.medium {
            MediumSpec::Channel { contrast } => ("channel".to_string(), *contrast),
            MediumSpec::Fracture { contrast } => ("fracture".to_string(), *contrast),
            MediumSpec::Homogeneous { .. } => ("homogeneous".to_string(), 1.0),
            MediumSpec::File(p) => (p.display().to_string(), 1.0),
        };
        let layers = match self.layers {
            Layers::Auto => "auto".to_string(),
            Layers::Fixed(m) => m.to_string(),
        };
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("mode", self.mode.name().into());
        kv("fine_n", self.fine_n.to_string());
        kv("coarse_N", self.coarse_n.to_string());
        kv("layers", layers);
        kv("basis_J", self.basis_j.to_string());
        kv("tau", format!("{:?}", self.tau));
        kv("T", format!("{:?}", self.final_time));
        kv("medium", medium);
        kv("contrast", format!("{contrast:?}"));
        kv("seed", self.seed.to_string());
        kv("M", format!("{:?}", self.consts.biot_modulus));
        kv("nu", format!("{:?}", self.consts.viscosity));
        kv("nu_p", format!("{:?}", self.consts.poisson_ratio));
        kv("f", format!("{:?}", self.source));
        kv("out", self.out.display().to_string());
        if let Some(t) = self.threads {
            kv("threads", t.to_string());
        }
        kv("coarse_N_list", join(&self.coarse_n_list));
        kv("layers_list", join(&self.layers_list));
        kv("basis_J_list", join(&self.basis_j_list));
        kv("export_block", self.export_block.to_string());
        s
    }

    fn study(&self) -> Result<StudyConfig> {
        let (ns, layers, js) = match self.mode {
            Mode::SweepH => (
                self.coarse_n_list.clone(),
                match self.layers {
                    Layers::Auto => LayerChoice::Auto,
                    Layers::Fixed(m) => LayerChoice::List(vec![m]),
                },
                vec![self.basis_j],
            ),
            Mode::SweepM => (
                vec![self.coarse_n],
                LayerChoice::List(self.layers_list.clone()),
                vec![self.basis_j],
            ),
            Mode::SweepJ => (
                vec![self.coarse_n],
                LayerChoice::List(vec![self.layers_at(self.coarse_n)?]),
                self.basis_j_list.clone(),
            ),
            _ => (
                vec![self.coarse_n],
                LayerChoice::List(vec![self.layers_at(self.coarse_n)?]),
                vec![self.basis_j],
            ),
        };
        Ok(StudyConfig {
            fine_n: self.fine_n,
            medium: self.medium.clone(),
            seed: self.seed,
            consts: self.consts,
            tau: self.tau,
            final_time: self.final_time,
            source: self.source,
            coarse_ns: ns,
            layers,
            basis_js: js,
        })
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    program: &'a str,
    version: &'a str,
    mode: &'a str,
    config: Vec<(String, String)>,
    rng: &'a str,
    threads: usize,
    outputs: Vec<String>,
    wall_time_seconds: f64,
}

/// Files written by a run, relative to the output directory.
#[derive(Debug, Clone, Default)]
pub struct RunSummary {
    pub outputs: Vec<String>,
    pub table: Option<StudyTable>,
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<()> {
    std::fs::write(dir.join(name), contents)?;
    outputs.push(name.to_string());
    Ok(())
}

/// Runs one configured experiment and writes its artifacts plus `manifest.json`.
pub fn run(config: &RunConfig) -> Result<RunSummary> {
    let start = Instant::now();
    let dir = &config.out;
    std::fs::create_dir_all(dir)?;
    let mut outputs = Vec::new();
    let echo = config.echo();
    write(dir, "config.txt", &echo, &mut outputs)?;
    let study = config.study()?;
    let mut table = None;
    match config.mode {
        Mode::Reference => {
            let exp = Experiment::new(&study, config.coarse_n)?;
            let name = "reference_final.vtk";
            write_state_vtk(&dir.join(name), &exp.mesh, "fine reference", &exp.reference.u, &exp.reference.p)?;
            outputs.push(name.into());
        }
        Mode::Multiscale => {
            let exp = Experiment::new(&study, config.coarse_n)?;
            let m = config.layers_at(config.coarse_n)?;
            let ms = exp.multiscale_final(config.coarse_n, m, config.basis_j)?;
            let mut report = crate::analysis::compute_errors(&exp.norms, &exp.reference, &ms)?;
            report.h_coarse = std::f64::consts::SQRT_2 / config.coarse_n as f64;
            report.layers = m;
            report.basis_j = config.basis_j;
            report.seed = config.seed;
            let mut t = StudyTable::default();
            t.push(config.coarse_n, report)?;
            write(dir, "errors.csv", &t.to_csv(), &mut outputs)?;
            for (name, title, s) in [
                ("reference_final.vtk", "fine reference", &exp.reference),
                ("multiscale_final.vtk", "multiscale solution", &ms),
            ] {
                write_state_vtk(&dir.join(name), &exp.mesh, title, &s.u, &s.p)?;
                outputs.push(name.into());
            }
            table = Some(t);
        }
        Mode::SweepH | Mode::SweepM | Mode::SweepJ => {
            let (t, name) = match config.mode {
                Mode::SweepH => (sweep_H(&study)?, "sweep_H.csv"),
                Mode::SweepM => (sweep_m(&study)?, "sweep_m.csv"),
                _ => (sweep_J(&study)?, "sweep_J.csv"),
            };
            write(dir, name, &t.to_csv(), &mut outputs)?;
            table = Some(t);
        }
        Mode::ExportBasis => {
            let mesh = FineMesh::new(config.fine_n)?;
            let part = CoarsePartition::new(&mesh, config.coarse_n)?;
            let medium = study.medium.build(&mesh, config.coarse_n, config.seed, config.consts)?;
            let ops = crate::fem::OperatorSet::assemble(&mesh, &medium)?;
            let weights = WeightFields::new(&PartitionOfUnity::new(&mesh, &part), &medium);
            let aux = AuxiliarySpaces::build(&mesh, &medium, &part, &weights, config.basis_j, config.basis_j)?;
            write(dir, "eigenvalues.csv", &eigenvalue_csv(&aux), &mut outputs)?;
            let m = config.layers_at(config.coarse_n)?;
            let space = build_multiscale_space(&ops, &aux, &part, m)?;
            let bu = block_basis(&space, Family::Displacement, config.export_block);
            let bp = block_basis(&space, Family::Pressure, config.export_block);
            for j in 0..bu.ncols().min(bp.ncols()) {
                let u: Vec<f64> = (0..bu.nrows()).map(|r| bu[(r, j)]).collect();
                let p: Vec<f64> = (0..bp.nrows()).map(|r| bp[(r, j)]).collect();
                let (u1, u2) = split_displacement(&u);
                let s = vtk_string(
                    &mesh,
                    &format!("basis block {} j {j} m {m}", config.export_block),
                    &[("psi_u1", &u1), ("psi_u2", &u2), ("phi_p", &p)],
                )?;
                write(dir, &format!("basis_block{}_j{j}.vtk", config.export_block), &s, &mut outputs)?;
            }
        }
    }
    let manifest = Manifest {
        program: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        mode: config.mode.name(),
        config: parse_pairs(&echo)?,
        rng: RNG_ALGORITHM,
        threads: rayon::current_num_threads(),
        outputs: outputs.clone(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join("manifest.json"), json)?;
    outputs.push("manifest.json".into());
    Ok(RunSummary { outputs, table })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs(s: &str) -> Vec<(String, String)> {
        parse_pairs(s).unwrap()
    }

    #[test]
    fn empty_config_gives_defaults() {
        let c = RunConfig::from_pairs(&[]).unwrap();
        assert_eq!(c.final_time, 100.0);
        assert_eq!(c.tau, 5.0);
        assert_eq!(c.consts, PhysicsConstants { biot_modulus: 1.0, viscosity: 1.0, poisson_ratio: 0.2 });
        assert_eq!(c.source, 1.0);
    }

    #[test]
    fn invariants_are_checked() {
        let err = RunConfig::from_pairs(&pairs("tau = 7\nT = 100")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "tau"), "{err}");
        let err = RunConfig::from_pairs(&pairs("fine_n = 30\ncoarse_N = 8")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "coarse_N"));
        let err = RunConfig::from_pairs(&pairs("contrast = 0.5")).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "contrast"));
        assert!(RunConfig::from_pairs(&pairs("bogus = 1")).is_err());
        assert!(parse_pairs("no equals sign").is_err());
    }

    #[test]
    fn auto_layers() {
        let c = RunConfig::from_pairs(&pairs("layers = auto\ncoarse_N = 10")).unwrap();
        assert_eq!(c.layers_at(10).unwrap(), 4);
    }

    #[test]
    fn echo_round_trips() {
        let c = RunConfig::from_pairs(&pairs("mode = sweep-m\nseed = 7 # comment\nlayers_list = 1,3")).unwrap();
        let again = RunConfig::from_pairs(&parse_pairs(&c.echo()).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
