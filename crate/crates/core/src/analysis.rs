//! Relative error metrics, the layer rule `m(H)` and convergence studies over
//! coarse size, oversampling layers and basis count.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::cem::build_multiscale_space;
use crate::error::{Error, Result};
use crate::fem::{
    assemble_weighted_mass, assemble_weighted_vector_mass, project_initial_pressure, run_fine_from,
    OperatorSet, PoroState, TimeGrid,
};
use crate::linalg::{self, SpMat};
use crate::medium::{
    generate_channel_medium, generate_fracture_medium, load_medium, FractureConfig, Medium, PhysicsConstants,
};
use crate::mesh::{CoarsePartition, FineMesh};
use crate::ms_solver::{init_ms_pressure, reduce_operators, run_ms_solver};
use crate::spectral::{AuxiliarySpaces, PartitionOfUnity, WeightFields};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ErrorReport {
    pub e_u_l2: f64,
    pub e_u_a: f64,
    pub e_p_l2: f64,
    pub e_p_b: f64,
    pub h_coarse: f64,
    pub layers: usize,
    pub basis_j: usize,
    pub seed: u64,
    pub medium_id: String,
    pub final_time: f64,
    pub tau: f64,
}

/// Norm matrices for the four relative errors.
///
/// Weighted L² norms put the weight inside the norm, `‖w e‖`, so their mass
/// matrices carry the squared weight.
#[derive(Debug, Clone)]
pub struct ErrorNorms {
    pub weighted_mass_u: SpMat,
    pub weighted_mass_p: SpMat,
    pub a: SpMat,
    pub b: SpMat,
}

impl ErrorNorms {
    pub fn new(mesh: &FineMesh, medium: &Medium, ops: &OperatorSet) -> Self {
        let wu: Vec<f64> = medium.p_wave_modulus().iter().map(|w| w * w).collect();
        let wp: Vec<f64> = medium.mobility().iter().map(|w| w * w).collect();
        Self {
            weighted_mass_u: assemble_weighted_vector_mass(mesh, &wu),
            weighted_mass_p: assemble_weighted_mass(mesh, &wp),
            a: ops.a.clone(),
            b: ops.b.clone(),
        }
    }
}

fn relative(m: &SpMat, reference: &[f64], approx: &[f64], name: &str) -> Result<f64> {
    let den = linalg::quad_form(m, reference);
    if !(den > 0.0) {
        return Err(Error::UndefinedMetric(format!("{name}: reference field has zero norm")));
    }
    let diff: Vec<f64> = reference.iter().zip(approx).map(|(r, a)| r - a).collect();
    Ok((linalg::quad_form(m, &diff).max(0.0) / den).sqrt())
}

/// Relative weighted L² and energy errors of `approx` against `reference`.
pub fn compute_errors(norms: &ErrorNorms, reference: &PoroState, approx: &PoroState) -> Result<ErrorReport> {
    Ok(ErrorReport {
        e_u_l2: relative(&norms.weighted_mass_u, &reference.u, &approx.u, "e_u_L2")?,
        e_u_a: relative(&norms.a, &reference.u, &approx.u, "e_u_a")?,
        e_p_l2: relative(&norms.weighted_mass_p, &reference.p, &approx.p, "e_p_L2")?,
        e_p_b: relative(&norms.b, &reference.p, &approx.p, "e_p_b")?,
        final_time: reference.t,
        ..Default::default()
    })
}

/// Oversampling layers for coarse size `H`: `⌊4 ln H / ln(√2/10)⌋`.
#[allow(non_snake_case)]
pub fn layers_for_H(h: f64) -> Result<usize> {
    if !(h > 0.0 && h < 1.0) {
        return Err(Error::invalid(format!("coarse size H must lie in (0, 1), got {h}")));
    }
    let x = 4.0 * h.ln() / (std::f64::consts::SQRT_2 / 10.0).ln();
    Ok((x + 1e-9).floor() as usize)
}

/// Seven-point degree-5 rule on the reference triangle: barycentric points and weights (summing to 1).
const QUAD7: [([f64; 3], f64); 7] = {
    const A1: f64 = 0.059_715_871_789_769_82;
    const B1: f64 = 0.470_142_064_105_115_1;
    const W1: f64 = 0.132_394_152_788_506_16;
    const A2: f64 = 0.797_426_985_353_087_3;
    const B2: f64 = 0.101_286_507_323_456_34;
    const W2: f64 = 0.125_939_180_544_827_14;
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 0.225),
        ([A1, B1, B1], W1),
        ([B1, A1, B1], W1),
        ([B1, B1, A1], W1),
        ([A2, B2, B2], W2),
        ([B2, A2, B2], W2),
        ([B2, B2, A2], W2),
    ]
};

/// Squared L² and H¹-seminorm errors of a P1 field against a smooth function
/// given with its gradient.
pub fn p1_error_squared(
    mesh: &FineMesh,
    nodal: impl Fn(usize) -> f64,
    exact: impl Fn([f64; 2]) -> (f64, [f64; 2]),
) -> (f64, f64) {
    let (mut l2, mut h1) = (0.0, 0.0);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let (g, area) = mesh.barycentric_gradients(t);
        let vals = tri.map(&nodal);
        let p = tri.map(|v| mesh.vertices[v]);
        let grad = [
            vals[0] * g[0][0] + vals[1] * g[1][0] + vals[2] * g[2][0],
            vals[0] * g[0][1] + vals[1] * g[1][1] + vals[2] * g[2][1],
        ];
        for (bary, w) in QUAD7 {
            let x = [
                bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0],
                bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1],
            ];
            let uh = bary[0] * vals[0] + bary[1] * vals[1] + bary[2] * vals[2];
            let (u, du) = exact(x);
            l2 += w * area * (u - uh).powi(2);
            h1 += w * area * ((du[0] - grad[0]).powi(2) + (du[1] - grad[1]).powi(2));
        }
    }
    (l2, h1)
}

/// Observed rate between two refinement levels.
pub fn observed_rate(h_coarse: f64, e_coarse: f64, h_fine: f64, e_fine: f64) -> f64 {
    (e_coarse / e_fine).ln() / (h_coarse / h_fine).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyRow {
    pub coarse_n: usize,
    pub report: ErrorReport,
    pub rate_u_a: Option<f64>,
    pub rate_p_b: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct StudyTable {
    pub rows: Vec<StudyRow>,
}

pub const CSV_HEADER: &str = "H,N,m,J,seed,e_u_L2,e_u_a,e_p_L2,e_p_b,rate_u_a,rate_p_b";

impl StudyTable {
    /// Appends a row; `(H, m, J, seed)` must be new.
    pub fn push(&mut self, coarse_n: usize, report: ErrorReport) -> Result<()> {
        let key = |r: &ErrorReport| (r.h_coarse.to_bits(), r.layers, r.basis_j, r.seed);
        if self.rows.iter().any(|row| key(&row.report) == key(&report)) {
            return Err(Error::invalid(format!(
                "duplicate study row H={} m={} J={} seed={}",
                report.h_coarse, report.layers, report.basis_j, report.seed
            )));
        }
        self.rows.push(StudyRow {
            coarse_n,
            report,
            rate_u_a: None,
            rate_p_b: None,
        });
        Ok(())
    }

    /// Rates between consecutive rows, which must be ordered by decreasing H.
    pub fn compute_rates(&mut self) {
        for k in 1..self.rows.len() {
            let (prev, cur) = (&self.rows[k - 1].report, &self.rows[k].report);
            let ru = observed_rate(prev.h_coarse, prev.e_u_a, cur.h_coarse, cur.e_u_a);
            let rp = observed_rate(prev.h_coarse, prev.e_p_b, cur.h_coarse, cur.e_p_b);
            self.rows[k].rate_u_a = Some(ru);
            self.rows[k].rate_p_b = Some(rp);
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        let opt = |x: Option<f64>| x.map(|v| format!("{v:e}")).unwrap_or_default();
        for row in &self.rows {
            let r = &row.report;
            let _ = writeln!(
                s,
                "{},{},{},{},{},{:e},{:e},{:e},{:e},{},{}",
                r.h_coarse,
                row.coarse_n,
                r.layers,
                r.basis_j,
                r.seed,
                r.e_u_l2,
                r.e_u_a,
                r.e_p_l2,
                r.e_p_b,
                opt(row.rate_u_a),
                opt(row.rate_p_b)
            );
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MediumSpec {
    Homogeneous { young: f64, kappa: f64, alpha: f64 },
    Channel { contrast: f64 },
    Fracture { contrast: f64 },
    File(PathBuf),
}

impl MediumSpec {
    pub fn id(&self) -> String {
        match self {
            MediumSpec::Homogeneous { .. } => "homogeneous".into(),
            MediumSpec::Channel { contrast } => format!("channel-{contrast:e}"),
            MediumSpec::Fracture { contrast } => format!("fracture-{contrast:e}"),
            MediumSpec::File(p) => p.display().to_string(),
        }
    }

    /// Builds the medium; random `α` is drawn per block of an `alpha_n × alpha_n` partition.
    pub fn build(&self, mesh: &FineMesh, alpha_n: usize, seed: u64, consts: PhysicsConstants) -> Result<Medium> {
        match self {
            MediumSpec::Homogeneous { young, kappa, alpha } => {
                Medium::homogeneous(mesh, *young, *kappa, *alpha, consts)
            }
            MediumSpec::Channel { contrast } => {
                let part = CoarsePartition::new(mesh, alpha_n)?;
                Ok(generate_channel_medium(mesh, &part, *contrast, seed, consts)?.0)
            }
            MediumSpec::Fracture { contrast } => {
                let part = CoarsePartition::new(mesh, alpha_n)?;
                Ok(generate_fracture_medium(mesh, &part, *contrast, seed, FractureConfig::default(), consts)?.0)
            }
            MediumSpec::File(path) => {
                let m = load_medium(path)?;
                m.check_mesh(mesh)?;
                Ok(m)
            }
        }
    }
}

/// Which oversampling layer counts to use.
#[derive(Debug, Clone, PartialEq)]
pub enum LayerChoice {
    /// `layers_for_H` at every coarse size.
    Auto,
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyConfig {
    pub fine_n: usize,
    pub medium: MediumSpec,
    pub seed: u64,
    pub consts: PhysicsConstants,
    pub tau: f64,
    pub final_time: f64,
    /// Constant source value `f`.
    pub source: f64,
    pub coarse_ns: Vec<usize>,
    pub layers: LayerChoice,
    pub basis_js: Vec<usize>,
}

/// Initial pressure used by every study: `x(1-x)y(1-y)`.
pub fn default_initial_pressure(x: [f64; 2]) -> f64 {
    x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1])
}

/// Fine reference on a fixed medium, shared by all multiscale evaluations.
pub struct Experiment {
    pub mesh: FineMesh,
    pub medium: Medium,
    pub ops: OperatorSet,
    pub grid: TimeGrid,
    pub p_init: Vec<f64>,
    pub reference: PoroState,
    pub norms: ErrorNorms,
    pub source: f64,
    pub seed: u64,
    pub medium_id: String,
}

impl Experiment {
    /// `alpha_n` is the coarse size on which random `α` is drawn.
    pub fn new(config: &StudyConfig, alpha_n: usize) -> Result<Self> {
        let mesh = FineMesh::new(config.fine_n)?;
        let medium = config.medium.build(&mesh, alpha_n, config.seed, config.consts)?;
        Self::with_medium(mesh, medium, config)
    }

    pub fn with_medium(mesh: FineMesh, medium: Medium, config: &StudyConfig) -> Result<Self> {
        let grid = TimeGrid::new(config.tau, config.final_time)?;
        let ops = OperatorSet::assemble(&mesh, &medium)?;
        let p_init = project_initial_pressure(&mesh, &ops, default_initial_pressure)?;
        let src = config.source;
        let f = move |_t: f64, _x: [f64; 2]| src;
        log::info!("fine reference: n = {}, {} steps", mesh.n, grid.steps);
        let states = run_fine_from(&mesh, &ops, grid, &f, p_init.clone())?;
        let reference = states.into_iter().last().expect("at least the initial state");
        let norms = ErrorNorms::new(&mesh, &medium, &ops);
        Ok(Self {
            mesh,
            medium,
            ops,
            grid,
            p_init,
            reference,
            norms,
            source: src,
            seed: config.seed,
            medium_id: config.medium.id(),
        })
    }

    /// Multiscale solution at the final time for coarse size `N`, `m` layers and `J` eigenfunctions per family.
    pub fn multiscale_final(&self, coarse_n: usize, m: usize, j: usize) -> Result<PoroState> {
        let part = CoarsePartition::new(&self.mesh, coarse_n)?;
        let weights = WeightFields::new(&PartitionOfUnity::new(&self.mesh, &part), &self.medium);
        let aux = AuxiliarySpaces::build(&self.mesh, &self.medium, &part, &weights, j, j)?;
        let space = build_multiscale_space(&self.ops, &aux, &part, m)?;
        let reduced = reduce_operators(&self.ops, &space)?;
        let p0 = init_ms_pressure(&self.ops, &space, &reduced, &self.p_init)?;
        let src = self.source;
        let f = move |_t: f64, _x: [f64; 2]| src;
        let run = run_ms_solver(&self.mesh, &reduced, &space, self.grid, &f, p0)?;
        Ok(run.fine.into_iter().last().expect("at least the initial state"))
    }

    pub fn evaluate(&self, coarse_n: usize, m: usize, j: usize) -> Result<ErrorReport> {
        log::info!("multiscale: N = {coarse_n}, m = {m}, J = {j}");
        let ms = self.multiscale_final(coarse_n, m, j)?;
        let mut report = compute_errors(&self.norms, &self.reference, &ms)?;
        report.h_coarse = std::f64::consts::SQRT_2 / coarse_n as f64;
        report.layers = m;
        report.basis_j = j;
        report.seed = self.seed;
        report.medium_id = self.medium_id.clone();
        report.tau = self.grid.tau;
        Ok(report)
    }
}

fn first<T: Copy>(v: &[T], name: &str) -> Result<T> {
    v.first().copied().ok_or_else(|| Error::config(name, "at least one value is required"))
}

fn layers_at(choice: &LayerChoice, coarse_n: usize) -> Result<Vec<usize>> {
    match choice {
        LayerChoice::Auto => Ok(vec![layers_for_H(std::f64::consts::SQRT_2 / coarse_n as f64)?]),
        LayerChoice::List(l) if !l.is_empty() => Ok(l.clone()),
        LayerChoice::List(_) => Err(Error::config("layers", "at least one value is required")),
    }
}

/// Coarse-size study at fixed `J`; `α` is drawn on the finest coarse grid of the sweep.
#[allow(non_snake_case)]
pub fn sweep_H(config: &StudyConfig) -> Result<StudyTable> {
    let ns: Vec<usize> = config.coarse_ns.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    let finest = *ns.last().ok_or_else(|| Error::config("coarse_N", "at least one value is required"))?;
    let j = first(&config.basis_js, "basis_J")?;
    let exp = Experiment::new(config, finest)?;
    let mut table = StudyTable::default();
    for &n in &ns {
        let m = layers_at(&config.layers, n)?[0];
        table.push(n, exp.evaluate(n, m, j)?)?;
    }
    table.compute_rates();
    Ok(table)
}

/// Oversampling study at the first coarse size and basis count.
pub fn sweep_m(config: &StudyConfig) -> Result<StudyTable> {
    let n = first(&config.coarse_ns, "coarse_N")?;
    let j = first(&config.basis_js, "basis_J")?;
    let exp = Experiment::new(config, n)?;
    let mut table = StudyTable::default();
    for m in layers_at(&config.layers, n)? {
        table.push(n, exp.evaluate(n, m, j)?)?;
    }
    Ok(table)
}

/// Basis-count study at the first coarse size and layer count.
#[allow(non_snake_case)]
pub fn sweep_J(config: &StudyConfig) -> Result<StudyTable> {
    let n = first(&config.coarse_ns, "coarse_N")?;
    let m = layers_at(&config.layers, n)?[0];
    let exp = Experiment::new(config, n)?;
    let mut table = StudyTable::default();
    for &j in &config.basis_js {
        table.push(n, exp.evaluate(n, m, j)?)?;
    }
    Ok(table)
}
