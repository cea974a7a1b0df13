//! Heterogeneous coefficient fields on the fine triangulation.
//!
//! All fields are piecewise constant per fine triangle. Generated media use a
//! two-subdomain layout: background `Omega1` with `kappa = E = 1` and
//! inclusions `Omega2` with `kappa = E = contrast`.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mesh::{CoarsePartition, FineMesh};

/// Name written into medium files for the generator used by [`generate_channel_medium`]
/// and [`generate_fracture_medium`].
pub const RNG_ALGORITHM: &str = "ChaCha8";

const ALPHA_STREAM: u64 = 0;
const FRACTURE_STREAM: u64 = 1;

/// Scalar physics constants shared by every element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicsConstants {
    /// Biot modulus `M`.
    pub biot_modulus: f64,
    /// Fluid viscosity `nu`.
    pub viscosity: f64,
    /// Poisson ratio used to derive Lamé parameters from Young's modulus.
    pub poisson_ratio: f64,
}

impl Default for PhysicsConstants {
    fn default() -> Self {
        Self {
            biot_modulus: 1.0,
            viscosity: 1.0,
            poisson_ratio: 0.2,
        }
    }
}

/// Lamé parameters `(lambda, mu)` from Young's modulus and Poisson ratio.
pub fn lame_from_young(e: f64, nu_p: f64) -> Result<(f64, f64)> {
    if !(nu_p > -1.0 && nu_p < 0.5) {
        return Err(Error::invalid(format!(
            "Poisson ratio must lie in (-1, 1/2), got {nu_p}"
        )));
    }
    if !(e > 0.0) {
        return Err(Error::invalid(format!(
            "Young's modulus must be positive, got {e}"
        )));
    }
    let lambda = nu_p * e / ((1.0 - 2.0 * nu_p) * (1.0 + nu_p));
    let mu = e / (2.0 * (1.0 + nu_p));
    Ok((lambda, mu))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subdomain {
    Omega1,
    Omega2,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubdomainMask {
    pub labels: Vec<Subdomain>,
}

impl SubdomainMask {
    pub fn omega2_fraction(&self) -> f64 {
        let c = self
            .labels
            .iter()
            .filter(|&&l| l == Subdomain::Omega2)
            .count();
        c as f64 / self.labels.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Medium {
    pub fine_n: usize,
    pub mu: Vec<f64>,
    pub lambda: Vec<f64>,
    pub kappa: Vec<f64>,
    pub alpha: Vec<f64>,
    pub biot_modulus: f64,
    pub viscosity: f64,
    /// Free-form `key=value` provenance carried through files (contrast, seed, ...).
    pub metadata: Vec<(String, String)>,
}

impl Medium {
    /// Constant coefficients everywhere.
    pub fn homogeneous(
        mesh: &FineMesh,
        young: f64,
        kappa: f64,
        alpha: f64,
        consts: PhysicsConstants,
    ) -> Result<Self> {
        let (lambda, mu) = lame_from_young(young, consts.poisson_ratio)?;
        let nt = mesh.num_triangles();
        Ok(Self {
            fine_n: mesh.n,
            mu: vec![mu; nt],
            lambda: vec![lambda; nt],
            kappa: vec![kappa; nt],
            alpha: vec![alpha; nt],
            biot_modulus: consts.biot_modulus,
            viscosity: consts.viscosity,
            metadata: vec![("generator".into(), "homogeneous".into())],
        })
    }

    pub fn num_triangles(&self) -> usize {
        self.mu.len()
    }

    pub fn meta(&self, key: &str) -> Option<&str> {
        self.metadata
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn check_mesh(&self, mesh: &FineMesh) -> Result<()> {
        let nt = mesh.num_triangles();
        let ok = self.fine_n == mesh.n
            && [&self.mu, &self.lambda, &self.kappa, &self.alpha]
                .iter()
                .all(|f| f.len() == nt);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "medium sized for n={} ({} triangles) does not match mesh n={} ({nt} triangles)",
                self.fine_n,
                self.num_triangles(),
                mesh.n
            )))
        }
    }

    /// Young's modulus recovered from `mu` and the Poisson ratio.
    pub fn young_modulus(&self, nu_p: f64) -> Vec<f64> {
        self.mu.iter().map(|m| 2.0 * (1.0 + nu_p) * m).collect()
    }

    /// `lambda + 2 mu` per triangle.
    pub fn p_wave_modulus(&self) -> Vec<f64> {
        self.lambda
            .iter()
            .zip(&self.mu)
            .map(|(l, m)| l + 2.0 * m)
            .collect()
    }

    /// `kappa / nu` per triangle.
    pub fn mobility(&self) -> Vec<f64> {
        self.kappa.iter().map(|k| k / self.viscosity).collect()
    }

    fn from_mask(
        mesh: &FineMesh,
        part: &CoarsePartition,
        mask: &SubdomainMask,
        contrast: f64,
        seed: u64,
        consts: PhysicsConstants,
        generator: &str,
    ) -> Result<Self> {
        if !(contrast >= 1.0) {
            return Err(Error::invalid(format!("contrast must be >= 1, got {contrast}")));
        }
        let (l1, m1) = lame_from_young(1.0, consts.poisson_ratio)?;
        let (l2, m2) = lame_from_young(contrast, consts.poisson_ratio)?;
        let pick = |l: Subdomain, a: f64, b: f64| if l == Subdomain::Omega1 { a } else { b };
        Ok(Self {
            fine_n: mesh.n,
            mu: mask.labels.iter().map(|&l| pick(l, m1, m2)).collect(),
            lambda: mask.labels.iter().map(|&l| pick(l, l1, l2)).collect(),
            kappa: mask.labels.iter().map(|&l| pick(l, 1.0, contrast)).collect(),
            alpha: alpha_per_block(part, seed),
            biot_modulus: consts.biot_modulus,
            viscosity: consts.viscosity,
            metadata: vec![
                ("generator".into(), generator.into()),
                ("contrast".into(), format!("{contrast:?}")),
                ("rng".into(), RNG_ALGORITHM.into()),
                ("seed".into(), seed.to_string()),
                ("alpha_blocks".into(), part.coarse_n.to_string()),
            ],
        })
    }
}

/// Biot-Willis coefficient drawn once per coarse block from U[0.5, 1].
pub fn alpha_per_block(part: &CoarsePartition, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ALPHA_STREAM);
    let per_block: Vec<f64> = (0..part.num_blocks())
        .map(|_| rng.random_range(0.5..=1.0))
        .collect();
    part.block_of_triangle
        .iter()
        .map(|&b| per_block[b])
        .collect()
}

/// Axis-aligned bar in unit-square coordinates; `thickness` is added along
/// the short side.
struct Bar {
    horizontal: bool,
    /// Position of the bar's lower (or left) edge.
    offset: f64,
    from: f64,
    to: f64,
}

const CHANNELS: &[Bar] = &[
    Bar { horizontal: true, offset: 0.15, from: 0.05, to: 0.70 },
    Bar { horizontal: true, offset: 0.45, from: 0.30, to: 0.95 },
    Bar { horizontal: true, offset: 0.80, from: 0.05, to: 0.55 },
    Bar { horizontal: true, offset: 0.65, from: 0.20, to: 0.45 },
    Bar { horizontal: true, offset: 0.30, from: 0.70, to: 0.90 },
    Bar { horizontal: false, offset: 0.85, from: 0.60, to: 0.90 },
    Bar { horizontal: false, offset: 0.15, from: 0.25, to: 0.38 },
    Bar { horizontal: false, offset: 0.55, from: 0.22, to: 0.38 },
];

/// Medium with isolated long and short high-contrast channels.
///
/// Channels are 1/40 of the domain thick (at least one fine cell) and
/// several coarse blocks long at the usual coarse sizes.
pub fn generate_channel_medium(
    mesh: &FineMesh,
    part: &CoarsePartition,
    contrast: f64,
    seed: u64,
    consts: PhysicsConstants,
) -> Result<(Medium, SubdomainMask)> {
    let n = mesh.n as f64;
    let thickness = (1.0 / 40.0f64).max(1.0 / n);
    let labels = (0..mesh.num_triangles())
        .map(|t| {
            let (ci, cj) = mesh.cell_of_triangle(t);
            let (cx, cy) = ((ci as f64 + 0.5) / n, (cj as f64 + 0.5) / n);
            let hit = CHANNELS.iter().any(|bar| {
                let (along, across) = if bar.horizontal { (cx, cy) } else { (cy, cx) };
                along >= bar.from
                    && along <= bar.to
                    && across >= bar.offset
                    && across <= bar.offset + thickness
            });
            if hit {
                Subdomain::Omega2
            } else {
                Subdomain::Omega1
            }
        })
        .collect();
    let mask = SubdomainMask { labels };
    let medium = Medium::from_mask(mesh, part, &mask, contrast, seed, consts, "channel")?;
    Ok((medium, mask))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FractureConfig {
    pub count: usize,
    /// Fracture length range as fractions of the domain side.
    pub min_length: f64,
    pub max_length: f64,
}

impl Default for FractureConfig {
    fn default() -> Self {
        Self {
            count: 16,
            min_length: 0.1,
            max_length: 0.35,
        }
    }
}

/// Medium with randomly placed one-cell-wide fractures, horizontal,
/// vertical or diagonal.
pub fn generate_fracture_medium(
    mesh: &FineMesh,
    part: &CoarsePartition,
    contrast: f64,
    seed: u64,
    fractures: FractureConfig,
    consts: PhysicsConstants,
) -> Result<(Medium, SubdomainMask)> {
    let n = mesh.n;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(FRACTURE_STREAM);
    let mut cell_hit = vec![false; n * n];
    for _ in 0..fractures.count {
        let ci = rng.random_range(0..n) as i64;
        let cj = rng.random_range(0..n) as i64;
        let len = rng.random_range(fractures.min_length..=fractures.max_length);
        let cells = ((len * n as f64).round() as i64).max(1);
        let (di, dj): (i64, i64) = match rng.random_range(0..4u8) {
            0 => (1, 0),
            1 => (0, 1),
            2 => (1, 1),
            _ => (1, -1),
        };
        for k in 0..cells {
            let (i, j) = (ci + k * di, cj + k * dj);
            if i < 0 || j < 0 || i >= n as i64 || j >= n as i64 {
                break;
            }
            cell_hit[j as usize * n + i as usize] = true;
        }
    }
    let labels = (0..mesh.num_triangles())
        .map(|t| {
            if cell_hit[t / 2] {
                Subdomain::Omega2
            } else {
                Subdomain::Omega1
            }
        })
        .collect();
    let mask = SubdomainMask { labels };
    let mut medium = Medium::from_mask(mesh, part, &mask, contrast, seed, consts, "fracture")?;
    medium
        .metadata
        .push(("fractures".into(), fractures.count.to_string()));
    Ok((medium, mask))
}

const HEADER_MAGIC: &str = "poro-medium";
const HEADER_VERSION: &str = "v1";
const HEADER_FIELDS: &str = "mu,lambda,kappa,alpha";

pub fn save_medium(medium: &Medium, path: &Path) -> Result<()> {
    std::fs::write(path, medium_to_string(medium))?;
    Ok(())
}

pub fn medium_to_string(medium: &Medium) -> String {
    let mut s = String::with_capacity(medium.num_triangles() * 80);
    // `{:?}` on f64 prints the shortest representation that round-trips.
    write!(
        s,
        "{HEADER_MAGIC} {HEADER_VERSION} n={} fields={HEADER_FIELDS} M={:?} nu={:?}",
        medium.fine_n, medium.biot_modulus, medium.viscosity
    )
    .unwrap();
    for (k, v) in &medium.metadata {
        write!(s, " {k}={v}").unwrap();
    }
    s.push('\n');
    for t in 0..medium.num_triangles() {
        writeln!(
            s,
            "{:?} {:?} {:?} {:?}",
            medium.mu[t], medium.lambda[t], medium.kappa[t], medium.alpha[t]
        )
        .unwrap();
    }
    s
}

pub fn load_medium(path: &Path) -> Result<Medium> {
    let text = std::fs::read_to_string(path)?;
    parse_medium(&text)
}

pub fn parse_medium(text: &str) -> Result<Medium> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty medium file".into()))?;
    let mut tokens = header.split_whitespace();
    if tokens.next() != Some(HEADER_MAGIC) || tokens.next() != Some(HEADER_VERSION) {
        return Err(Error::Format(format!(
            "expected `{HEADER_MAGIC} {HEADER_VERSION}` header, got `{header}`"
        )));
    }
    let mut n = None;
    let mut m_biot = None;
    let mut nu = None;
    let mut metadata = Vec::new();
    for tok in tokens {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Format(format!("malformed header token `{tok}`")))?;
        let bad = |_| Error::Format(format!("bad value for `{k}`: `{v}`"));
        match k {
            "n" => n = Some(v.parse::<usize>().map_err(|e| bad(e.to_string()))?),
            "fields" if v != HEADER_FIELDS => {
                return Err(Error::Format(format!("unsupported field list `{v}`")))
            }
            "fields" => {}
            "M" => m_biot = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            "nu" => nu = Some(v.parse::<f64>().map_err(|e| bad(e.to_string()))?),
            _ => metadata.push((k.to_string(), v.to_string())),
        }
    }
    let missing = |what: &str| Error::Format(format!("header lacks `{what}`"));
    let n = n.ok_or_else(|| missing("n"))?;
    let biot_modulus = m_biot.ok_or_else(|| missing("M"))?;
    let viscosity = nu.ok_or_else(|| missing("nu"))?;

    let nt = 2 * n * n;
    let mut fields: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(nt));
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut count = 0;
        for (k, tok) in line.split_whitespace().enumerate() {
            if k >= 4 {
                count = 5;
                break;
            }
            let v: f64 = tok.parse().map_err(|_| {
                Error::Format(format!("line {}: bad number `{tok}`", lineno + 2))
            })?;
            if !(v.is_finite()) {
                return Err(Error::Format(format!("line {}: non-finite value", lineno + 2)));
            }
            fields[k].push(v);
            count += 1;
        }
        if count != 4 {
            return Err(Error::Format(format!(
                "line {}: expected 4 values",
                lineno + 2
            )));
        }
    }
    if fields[0].len() != nt {
        return Err(Error::Format(format!(
            "expected {nt} triangle rows for n={n}, found {}",
            fields[0].len()
        )));
    }
    let [mu, lambda, kappa, alpha] = fields;
    if mu.iter().chain(&kappa).any(|&v| v <= 0.0) || lambda.iter().any(|&v| v < 0.0) {
        return Err(Error::Format("coefficients must be positive".into()));
    }
    Ok(Medium {
        fine_n: n,
        mu,
        lambda,
        kappa,
        alpha,
        biot_modulus,
        viscosity,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize, nc: usize) -> (FineMesh, CoarsePartition) {
        let m = FineMesh::new(n).unwrap();
        let p = CoarsePartition::new(&m, nc).unwrap();
        (m, p)
    }

    #[test]
    fn lame_values() {
        let (l, m) = lame_from_young(1.0, 0.2).unwrap();
        assert!((l - 0.2 / (0.6 * 1.2)).abs() < 1e-15);
        assert!((l - 0.277_777_777_777_777_8).abs() < 1e-15);
        assert!((m - 0.416_666_666_666_666_7).abs() < 1e-15);
        let (l4, m4) = lame_from_young(1e4, 0.2).unwrap();
        assert!((l4 / l - 1e4).abs() < 1e-9);
        assert!((m4 / m - 1e4).abs() < 1e-9);
        assert!(lame_from_young(1.0, 0.5).is_err());
        assert!(lame_from_young(1.0, -1.0).is_err());
    }

    #[test]
    fn channel_contrast_and_fields() {
        let (mesh, part) = grid(40, 5);
        let consts = PhysicsConstants::default();
        let (med, mask) = generate_channel_medium(&mesh, &part, 1e4, 7, consts).unwrap();
        let kmax = med.kappa.iter().cloned().fold(f64::MIN, f64::max);
        let kmin = med.kappa.iter().cloned().fold(f64::MAX, f64::min);
        assert_eq!(kmax / kmin, 1e4);
        let f = mask.omega2_fraction();
        assert!(f > 0.0 && f < 1.0);
        // E equals kappa, Lamé parameters follow from E.
        for t in 0..med.num_triangles() {
            let e = med.kappa[t];
            let (l, m) = lame_from_young(e, 0.2).unwrap();
            assert_eq!(med.lambda[t], l);
            assert_eq!(med.mu[t], m);
            assert!((0.5..=1.0).contains(&med.alpha[t]));
        }
    }

    #[test]
    fn unit_contrast_is_homogeneous_with_nontrivial_mask() {
        let (mesh, part) = grid(40, 5);
        let (med, mask) =
            generate_channel_medium(&mesh, &part, 1.0, 1, PhysicsConstants::default()).unwrap();
        assert!(med.kappa.iter().all(|&k| k == 1.0));
        assert!(mask.omega2_fraction() > 0.0);
    }

    #[test]
    fn alpha_is_blockwise_constant_and_seeded() {
        let (mesh, part) = grid(20, 4);
        let c = PhysicsConstants::default();
        let (a, _) = generate_channel_medium(&mesh, &part, 10.0, 3, c).unwrap();
        let (b, _) = generate_channel_medium(&mesh, &part, 10.0, 3, c).unwrap();
        assert_eq!(a.alpha, b.alpha);
        for tris in &part.blocks {
            let v = a.alpha[tris[0]];
            assert!(tris.iter().all(|&t| a.alpha[t] == v));
        }
        let (d, _) = generate_channel_medium(&mesh, &part, 10.0, 4, c).unwrap();
        assert_ne!(a.alpha, d.alpha);
    }

    #[test]
    fn fracture_media() {
        let (mesh, part) = grid(40, 5);
        let c = PhysicsConstants::default();
        let cfg = FractureConfig::default();
        let (med, mask_a) = generate_fracture_medium(&mesh, &part, 1e4, 11, cfg, c).unwrap();
        let mut distinct: Vec<f64> = med.kappa.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        assert_eq!(distinct, vec![1.0, 1e4]);
        let (_, mask_b) = generate_fracture_medium(&mesh, &part, 1e4, 12, cfg, c).unwrap();
        assert_ne!(mask_a, mask_b);
        let (_, again) = generate_fracture_medium(&mesh, &part, 1e4, 11, cfg, c).unwrap();
        assert_eq!(mask_a, again);

        let none = FractureConfig { count: 0, ..cfg };
        let (_, empty) = generate_fracture_medium(&mesh, &part, 1e4, 11, none, c).unwrap();
        assert!(empty.labels.iter().all(|&l| l == Subdomain::Omega1));
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (mesh, part) = grid(20, 4);
        let (med, _) =
            generate_channel_medium(&mesh, &part, 1e4, 99, PhysicsConstants::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save_medium(&med, &path).unwrap();
        let back = load_medium(&path).unwrap();
        assert_eq!(back, med);
        assert_eq!(back.meta("contrast"), Some("10000.0"));
        assert_eq!(back.meta("rng"), Some(RNG_ALGORITHM));
    }

    #[test]
    fn malformed_files_rejected() {
        let (mesh, _) = grid(2, 1);
        let med = Medium::homogeneous(&mesh, 1.0, 1.0, 1.0, PhysicsConstants::default()).unwrap();
        let good = medium_to_string(&med);
        assert!(parse_medium(&good).is_ok());

        let short: String = good.lines().take(5).collect::<Vec<_>>().join("\n");
        assert!(matches!(parse_medium(&short), Err(Error::Format(_))));
        let bad_header = good.replacen("poro-medium", "medium", 1);
        assert!(matches!(parse_medium(&bad_header), Err(Error::Format(_))));
        let bad_value = good.replacen("\n", "\nx 1 1 1\n", 1);
        assert!(matches!(parse_medium(&bad_value), Err(Error::Format(_))));
        assert!(matches!(parse_medium(""), Err(Error::Format(_))));
    }

    #[test]
    fn medium_mesh_mismatch() {
        let (mesh, _) = grid(4, 2);
        let other = FineMesh::new(6).unwrap();
        let med = Medium::homogeneous(&mesh, 1.0, 1.0, 1.0, PhysicsConstants::default()).unwrap();
        assert!(med.check_mesh(&mesh).is_ok());
        assert!(med.check_mesh(&other).is_err());
    }
}
