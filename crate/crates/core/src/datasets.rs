//! Reproducible point distributions and the point file formats.
//!
//! Every point draws from its own ChaCha8 stream keyed by `(seed, stage, index)`,
//! so output does not depend on generation order.

use std::f64::consts::PI;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{Source, Vec3};
use crate::{FmmError, Result};

pub const POINT_MAGIC: &[u8; 4] = b"FMM3";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GalaxyParams {
    pub seeds: usize,
    pub depth: u32,
    pub r_inner: f64,
    pub r_outer: f64,
    /// Points spawned per point at each recursion.
    pub factor: usize,
    /// Major axis ratio between consecutive stages.
    pub shrink: f64,
    /// Minor over major axis.
    pub axis_ratio: f64,
}

impl Default for GalaxyParams {
    fn default() -> Self {
        Self { seeds: 1000, depth: 3, r_inner: 6000.0, r_outer: 18000.0, factor: 10, shrink: 2.0 / 3.0, axis_ratio: 0.1 }
    }
}

impl GalaxyParams {
    /// Seed count and depth with `seeds * factor^depth = n`, preferring the deepest recursion
    /// that keeps at least `min_seeds` seeds.
    pub fn for_count(n: usize, min_seeds: usize) -> Result<Self> {
        let base = Self::default();
        let mut best = None;
        let (mut seeds, mut depth) = (n, 0u32);
        while seeds >= min_seeds.max(1) {
            best = Some((seeds, depth));
            if seeds % base.factor != 0 {
                break;
            }
            seeds /= base.factor;
            depth += 1;
        }
        let (seeds, depth) =
            best.ok_or_else(|| FmmError::InvalidParameter(format!("galaxy point count {n} below {min_seeds} seeds")))?;
        Ok(Self { seeds, depth, ..base })
    }

    pub fn count(&self) -> Option<usize> {
        let mut n = self.seeds;
        for _ in 0..self.depth {
            n = n.checked_mul(self.factor)?;
        }
        Some(n)
    }

    /// Major semi-axis of the spheroids used at recursion `stage` (0-based).
    pub fn major_axis(&self, stage: u32) -> f64 {
        self.shrink.powi(stage as i32) * self.r_outer / 20.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Distribution {
    UniformCube,
    Gaussian { sigma: f64 },
    Shell { radius: f64, jitter: f64 },
    Helix { turns: f64, radius: f64, height: f64, jitter: f64 },
    Galaxy(GalaxyParams),
}

impl Distribution {
    pub fn gaussian() -> Self {
        Self::Gaussian { sigma: 0.25 }
    }

    pub fn shell() -> Self {
        Self::Shell { radius: 1.0, jitter: 0.01 }
    }

    pub fn helix() -> Self {
        Self::Helix { turns: 3.0, radius: 1.0, height: 4.0, jitter: 0.02 }
    }

    /// Looks up a distribution by name with default parameters.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "uniform" | "uniform-cube" | "random" => Ok(Self::UniformCube),
            "gaussian" => Ok(Self::gaussian()),
            "shell" => Ok(Self::shell()),
            "helix" => Ok(Self::helix()),
            "galaxy" => Ok(Self::Galaxy(GalaxyParams::default())),
            other => Err(FmmError::InvalidParameter(format!("unknown distribution '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub distribution: Distribution,
    pub n: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn new(distribution: Distribution, n: usize, seed: u64) -> Self {
        Self { distribution, n, seed }
    }
}

fn point_rng(seed: u64, stage: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ stage.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

fn unit_ball(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let p: Vec3 = [rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)];
        if p[0] * p[0] + p[1] * p[1] + p[2] * p[2] <= 1.0 {
            return p;
        }
    }
}

fn unit_sphere(rng: &mut ChaCha8Rng) -> Vec3 {
    loop {
        let p: Vec3 = [rng.sample(StandardNormal), rng.sample(StandardNormal), rng.sample(StandardNormal)];
        let r = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
        if r > 1e-12 {
            return [p[0] / r, p[1] / r, p[2] / r];
        }
    }
}

fn unit_masses(points: Vec<Vec3>) -> Vec<Source> {
    points
        .into_iter()
        .enumerate()
        .map(|(i, position)| Source { position, mass: 1.0, global_id: i as u64 })
        .collect()
}

/// Unit-mass sources with ids `0..n`.
pub fn generate(spec: &GeneratorSpec) -> Result<Vec<Source>> {
    if spec.n == 0 {
        return Err(FmmError::EmptyInput("point count"));
    }
    let each = |f: &dyn Fn(&mut ChaCha8Rng) -> Vec3| -> Vec<Vec3> {
        (0..spec.n as u64).map(|i| f(&mut point_rng(spec.seed, 0, i))).collect()
    };
    let points = match spec.distribution {
        Distribution::UniformCube => each(&|r| [r.random::<f64>(), r.random::<f64>(), r.random::<f64>()]),
        Distribution::Gaussian { sigma } => {
            check_positive("sigma", sigma)?;
            each(&|r| {
                [sigma * r.sample::<f64, _>(StandardNormal), sigma * r.sample::<f64, _>(StandardNormal), sigma * r.sample::<f64, _>(StandardNormal)]
            })
        }
        Distribution::Shell { radius, jitter } => {
            check_positive("radius", radius)?;
            each(&|r| {
                let u = unit_sphere(r);
                let s = radius + jitter * r.random_range(-1.0..=1.0);
                [s * u[0], s * u[1], s * u[2]]
            })
        }
        Distribution::Helix { turns, radius, height, jitter } => {
            check_positive("radius", radius)?;
            each(&|r| helix_point(r, turns, radius, height, jitter))
        }
        Distribution::Galaxy(params) => {
            if params.count() != Some(spec.n) {
                return Err(FmmError::InvalidParameter(format!(
                    "galaxy with {} seeds and depth {} yields {:?} points, not {}",
                    params.seeds,
                    params.depth,
                    params.count(),
                    spec.n
                )));
            }
            return generate_galaxy(&params, spec.seed);
        }
    };
    Ok(unit_masses(points))
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(FmmError::InvalidParameter(format!("{name} must be positive, got {v}")))
    }
}

fn helix_point(r: &mut ChaCha8Rng, turns: f64, radius: f64, height: f64, jitter: f64) -> Vec3 {
    let t: f64 = r.random();
    let a = 2.0 * PI * turns * t;
    let (s, c) = a.sin_cos();
    let center = [radius * c, radius * s, height * (t - 0.5)];
    // tangent (-R s ω, R c ω, h) with ω = 2π turns; normal points at the axis
    let w = 2.0 * PI * turns;
    let tan = [-radius * s * w, radius * c * w, height];
    let tl = (tan[0] * tan[0] + tan[1] * tan[1] + tan[2] * tan[2]).sqrt();
    let tan = [tan[0] / tl, tan[1] / tl, tan[2] / tl];
    let nrm = [c, s, 0.0];
    let bin = [tan[1] * nrm[2] - tan[2] * nrm[1], tan[2] * nrm[0] - tan[0] * nrm[2], tan[0] * nrm[1] - tan[1] * nrm[0]];
    let (u, v) = loop {
        let u: f64 = r.random_range(-1.0..=1.0);
        let v: f64 = r.random_range(-1.0..=1.0);
        if u * u + v * v <= 1.0 {
            break (u, v);
        }
    };
    std::array::from_fn(|k| center[k] + jitter * (u * nrm[k] + v * bin[k]))
}

/// Torus seeding followed by `depth` rounds of spheroid fragmentation.
pub fn generate_galaxy(params: &GalaxyParams, seed: u64) -> Result<Vec<Source>> {
    let n = params
        .count()
        .ok_or_else(|| FmmError::InvalidParameter("galaxy point count overflows".into()))?;
    if params.seeds == 0 || params.factor == 0 {
        return Err(FmmError::EmptyInput("galaxy seeds"));
    }
    if !(params.r_inner >= 0.0 && params.r_outer > params.r_inner) {
        return Err(FmmError::InvalidParameter(format!(
            "galaxy radii need 0 <= r_inner < r_outer, got {} and {}",
            params.r_inner, params.r_outer
        )));
    }
    let r0 = params.major_axis(0) * params.axis_ratio;
    let mut points: Vec<Vec3> = (0..params.seeds as u64)
        .map(|i| {
            let mut r = point_rng(seed, 0, i);
            let angle = r.random_range(0.0..2.0 * PI);
            let radius = r.random_range(params.r_inner..=params.r_outer);
            let z = r.random_range(-r0..=r0);
            [radius * angle.cos(), radius * angle.sin(), z]
        })
        .collect();
    for stage in 0..params.depth {
        let major = params.major_axis(stage);
        let minor = major * params.axis_ratio;
        let mut next = Vec::with_capacity(points.len() * params.factor);
        for (i, p) in points.iter().enumerate() {
            let mut r = point_rng(seed, stage as u64 + 1, i as u64);
            for _ in 0..params.factor {
                let u = unit_ball(&mut r);
                next.push([p[0] + major * u[0], p[1] + major * u[1], p[2] + minor * u[2]]);
            }
        }
        points = next;
    }
    debug_assert_eq!(points.len(), n);
    Ok(unit_masses(points))
}

/// Writes `[FMM3][u64 N]` then `N x [x, y, z, mass]`, little-endian.
pub fn write_points(path: &Path, sources: &[Source]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(POINT_MAGIC)?;
    w.write_all(&(sources.len() as u64).to_le_bytes())?;
    for s in sources {
        for v in [s.position[0], s.position[1], s.position[2], s.mass] {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary point file; ids are file positions.
pub fn read_points(path: &Path) -> Result<Vec<Source>> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != POINT_MAGIC {
        return Err(FmmError::Decode(format!("{} is not a point file", path.display())));
    }
    let mut word = [0u8; 8];
    r.read_exact(&mut word)?;
    let n = u64::from_le_bytes(word) as usize;
    let mut out = Vec::with_capacity(n.min(1 << 26));
    let mut rec = [0u8; 32];
    for i in 0..n {
        r.read_exact(&mut rec).map_err(|e| FmmError::Decode(format!("point {i} of {n}: {e}")))?;
        let f = |k: usize| f64::from_le_bytes(rec[8 * k..8 * k + 8].try_into().unwrap());
        out.push(Source::new([f(0), f(1), f(2)], f(3), i as u64)?);
    }
    if r.read(&mut word)? != 0 {
        return Err(FmmError::Decode(format!("trailing bytes after {n} points")));
    }
    Ok(out)
}

/// Writes `x,y,z,mass` rows under a header.
pub fn write_points_csv(path: &Path, sources: &[Source]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    w.write_record(["x", "y", "z", "mass"]).map_err(csv_error)?;
    for s in sources {
        w.serialize((s.position[0], s.position[1], s.position[2], s.mass)).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `x,y,z[,mass]` rows; a non-numeric first row is taken as a header and
/// a missing mass defaults to 1.
pub fn read_points_csv(path: &Path) -> Result<Vec<Source>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;
    let mut out = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record.map_err(csv_error)?;
        let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if row == 0 => continue,
            Err(e) => return Err(FmmError::Decode(format!("row {}: {e}", row + 1))),
        };
        let mass = match values.len() {
            3 => 1.0,
            4 => values[3],
            k => return Err(FmmError::Decode(format!("row {}: expected 3 or 4 fields, got {k}", row + 1))),
        };
        let id = out.len() as u64;
        out.push(Source::new([values[0], values[1], values[2]], mass, id)?);
    }
    Ok(out)
}

pub(crate) fn csv_error(e: csv::Error) -> FmmError {
    FmmError::Decode(e.to_string())
}

/// Picks the format from the extension: `.csv` is text, anything else binary.
pub fn load_points(path: &Path) -> Result<Vec<Source>> {
    if is_csv(path) {
        read_points_csv(path)
    } else {
        read_points(path)
    }
}

pub fn save_points(path: &Path, sources: &[Source]) -> Result<()> {
    if is_csv(path) {
        write_points_csv(path, sources)
    } else {
        write_points(path, sources)
    }
}

pub(crate) fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn norm(p: Vec3) -> f64 {
        (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt()
    }

    #[test]
    fn uniform_cube_in_unit_cube() {
        let pts = generate(&GeneratorSpec::new(Distribution::UniformCube, 100_000, 3)).unwrap();
        assert_eq!(pts.len(), 100_000);
        assert!(pts.iter().all(|s| s.position.iter().all(|&c| (0.0..=1.0).contains(&c)) && s.mass == 1.0));
        let mean: f64 = pts.iter().map(|s| s.position[0]).sum::<f64>() / pts.len() as f64;
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn shell_within_jitter() {
        let pts = generate(&GeneratorSpec::new(Distribution::shell(), 1000, 9)).unwrap();
        assert!(pts.iter().all(|s| (norm(s.position) - 1.0).abs() <= 0.01 + 1e-12));
    }

    #[test]
    fn gaussian_spread() {
        let pts = generate(&GeneratorSpec::new(Distribution::gaussian(), 20_000, 5)).unwrap();
        let var: f64 = pts.iter().map(|s| s.position[2] * s.position[2]).sum::<f64>() / pts.len() as f64;
        assert!((var.sqrt() - 0.25).abs() < 0.01, "sigma {}", var.sqrt());
    }

    #[test]
    fn helix_near_curve() {
        let pts = generate(&GeneratorSpec::new(Distribution::helix(), 2000, 1)).unwrap();
        for s in &pts {
            let p = s.position;
            assert!(p[2].abs() <= 2.0 + 0.02);
            let planar = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((planar - 1.0).abs() <= 0.02 + 1e-12);
        }
    }

    #[test]
    fn same_generator_same_points() {
        for d in [Distribution::UniformCube, Distribution::gaussian(), Distribution::shell(), Distribution::helix()] {
            let spec = GeneratorSpec::new(d, 500, 77);
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
        let a = generate(&GeneratorSpec::new(Distribution::UniformCube, 500, 1)).unwrap();
        let b = generate(&GeneratorSpec::new(Distribution::UniformCube, 500, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn prefix_independent_of_count() {
        let a = generate(&GeneratorSpec::new(Distribution::UniformCube, 100, 4)).unwrap();
        let b = generate(&GeneratorSpec::new(Distribution::UniformCube, 300, 4)).unwrap();
        assert_eq!(a[..], b[..100]);
    }

    #[test]
    fn galaxy_torus_only() {
        let params = GalaxyParams { seeds: 2000, depth: 0, ..Default::default() };
        let pts = generate_galaxy(&params, 1).unwrap();
        assert_eq!(pts.len(), 2000);
        for s in &pts {
            let planar = (s.position[0].powi(2) + s.position[1].powi(2)).sqrt();
            assert!((6000.0 - 1e-6..=18000.0 + 1e-6).contains(&planar));
            assert!(s.position[2].abs() <= 90.0);
        }
    }

    #[test]
    fn galaxy_descendants_stay_near_their_seed() {
        let params = GalaxyParams { seeds: 100, depth: 3, ..Default::default() };
        let pts = generate(&GeneratorSpec::new(Distribution::Galaxy(params), 100_000, 8)).unwrap();
        assert_eq!(pts.len(), 100_000);
        assert!(pts.iter().all(|s| s.mass == 1.0));
        let seeds = generate_galaxy(&GalaxyParams { depth: 0, ..params }, 8).unwrap();
        let reach: f64 = (0..3).map(|j| params.major_axis(j)).sum();
        // children keep parent order, so point i descends from seed i / 1000
        for (i, s) in pts.iter().enumerate() {
            let c = seeds[i / 1000].position;
            let d = norm([s.position[0] - c[0], s.position[1] - c[1], s.position[2] - c[2]]);
            assert!(d <= reach + 1e-9, "point {i} at {d} > {reach}");
        }
    }

    #[test]
    fn galaxy_count_mismatch_is_rejected() {
        let params = GalaxyParams { seeds: 10, depth: 2, ..Default::default() };
        assert!(generate(&GeneratorSpec::new(Distribution::Galaxy(params), 999, 1)).is_err());
        let p = GalaxyParams::for_count(1_000_000, 1000).unwrap();
        assert_eq!((p.seeds, p.depth), (1000, 3));
        let p = GalaxyParams::for_count(5000, 1000).unwrap();
        assert_eq!((p.seeds, p.depth), (5000, 0));
    }

    #[test]
    fn unknown_name_is_rejected() {
        assert!(Distribution::by_name("spiral").is_err());
        assert_eq!(Distribution::by_name("uniform").unwrap(), Distribution::UniformCube);
    }

    #[test]
    fn binary_and_csv_round_trip() {
        let dir = std::env::temp_dir().join(format!("balfmm-points-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let pts = generate(&GeneratorSpec::new(Distribution::gaussian(), 257, 2)).unwrap();
        let bin = dir.join("p.fmm3");
        save_points(&bin, &pts).unwrap();
        assert_eq!(load_points(&bin).unwrap(), pts);
        let bytes = std::fs::read(&bin).unwrap();
        assert_eq!(&bytes[..4], b"FMM3");
        assert_eq!(bytes.len(), 12 + 32 * 257);
        let csv = dir.join("p.csv");
        save_points(&csv, &pts).unwrap();
        assert_eq!(load_points(&csv).unwrap(), pts);
        std::fs::write(&bin, &bytes[..bytes.len() - 5]).unwrap();
        assert!(load_points(&bin).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
