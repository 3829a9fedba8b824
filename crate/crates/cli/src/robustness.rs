//! Noise and sparsity sweeps: perturb → upsample → evaluate, one CSV row
//! per (file, perturbation, level, rate, seed) cell.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use splatup::metrics::{add_noise, sparsify, SparsifyMode};
use splatup::rng;
use splatup::io::{read_cloud, read_mesh};
use splatup::{normalize_to_unit_sphere, upsample, Backend, MetricReport, PointCloud, TriangleMesh, UpsampleConfig};

use crate::args::{RobustnessArgs, SparsifyArg};
use crate::commands::{build_config, config_hash};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Perturbation {
    /// Gaussian noise with standard deviation τ times the input radius.
    Noise(f64),
    /// Random or FPS subset of this many points.
    Sparsity(usize),
}

impl Perturbation {
    pub fn kind(&self) -> &'static str {
        match self {
            Perturbation::Noise(_) => "noise",
            Perturbation::Sparsity(_) => "sparsity",
        }
    }

    pub fn level(&self) -> String {
        match self {
            Perturbation::Noise(t) => format!("{t}"),
            Perturbation::Sparsity(m) => m.to_string(),
        }
    }

    fn key_words(&self) -> [u64; 2] {
        match self {
            Perturbation::Noise(t) => [1, t.to_bits()],
            Perturbation::Sparsity(m) => [2, *m as u64],
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Sweep {
    pub noise: Vec<f64>,
    pub sparsity: Vec<usize>,
    pub rates: Vec<usize>,
    pub seeds: Vec<u64>,
    #[serde(skip)]
    pub sparsify_mode: SparsifyMode,
    pub base: UpsampleConfig,
    pub use_patches: bool,
}

impl Sweep {
    pub fn perturbations(&self) -> Vec<Perturbation> {
        self.noise
            .iter()
            .map(|&t| Perturbation::Noise(t))
            .chain(self.sparsity.iter().map(|&m| Perturbation::Sparsity(m)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.noise.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            anyhow::bail!("noise levels must be finite and nonnegative");
        }
        if self.sparsity.contains(&0) {
            anyhow::bail!("sparsity levels must be positive");
        }
        if self.rates.is_empty() || self.seeds.is_empty() {
            anyhow::bail!("at least one rate and one seed are required");
        }
        Ok(())
    }
}

/// A cloud to perturb plus what it is judged against.
#[derive(Debug, Clone)]
pub struct Subject {
    pub name: String,
    pub input: PointCloud,
    pub gt: PointCloud,
    pub mesh: Option<TriangleMesh>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Row {
    pub file: String,
    pub perturbation_kind: String,
    pub level: String,
    pub rate: usize,
    pub seed: u64,
    pub cd: Option<f64>,
    pub hd: Option<f64>,
    pub p2f: Option<f64>,
    pub wall_ms: u128,
    pub status: String,
}

fn name_key(name: &str) -> u64 {
    let d = Sha256::digest(name.as_bytes());
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

/// Seed of the upsampling run in a cell. It ignores the perturbation so a
/// zero-noise cell reproduces the unperturbed run exactly.
pub fn upsample_seed(seed: u64, file: &str, rate: usize) -> u64 {
    rng::key(&[seed, name_key(file), rate as u64])
}

/// Seed of the perturbation in a cell; shared across rates.
pub fn perturbation_seed(seed: u64, file: &str, p: &Perturbation) -> u64 {
    let [kind, level] = p.key_words();
    rng::key(&[seed, name_key(file), kind, level])
}

pub fn perturb(input: &PointCloud, p: &Perturbation, mode: SparsifyMode, seed: u64) -> splatup::Result<PointCloud> {
    match *p {
        Perturbation::Noise(t) => add_noise(input, t * input.radius(), seed),
        Perturbation::Sparsity(m) => sparsify(input, m, mode, seed),
    }
}

/// Upsamples `input` and scores it against the subject's ground truth in
/// the ground truth's unit-sphere frame.
pub fn upsample_and_score(subject: &Subject, input: &PointCloud, cfg: &UpsampleConfig, use_patches: bool) -> splatup::Result<MetricReport> {
    let dense = (cfg.backend == Backend::Optimize).then_some(&subject.gt);
    let out = upsample(input, dense, cfg, use_patches)?;
    let (gt, t) = normalize_to_unit_sphere(&subject.gt)?;
    let pred = out.cloud.map(|p| t.apply(p))?;
    let mesh = subject
        .mesh
        .as_ref()
        .map(|m| TriangleMesh::new(m.vertices().iter().map(|v| t.apply(v)).collect(), m.triangles().to_vec()))
        .transpose()?;
    MetricReport::compute(&pred, &gt, mesh.as_ref())
}

fn run_cell(subject: &Subject, sweep: &Sweep, p: &Perturbation, rate: usize, seed: u64) -> Row {
    let start = Instant::now();
    let result = perturb(&subject.input, p, sweep.sparsify_mode, perturbation_seed(seed, &subject.name, p)).and_then(|input| {
        let cfg = UpsampleConfig {
            rate,
            seed: upsample_seed(seed, &subject.name, rate),
            ..sweep.base.clone()
        };
        upsample_and_score(subject, &input, &cfg, sweep.use_patches)
    });
    let (cd, hd, p2f, status) = match result {
        Ok(r) => (Some(r.cd), Some(r.hd), r.p2f, "ok".to_string()),
        Err(e) => (None, None, None, format!("error: {e}")),
    };
    Row {
        file: subject.name.clone(),
        perturbation_kind: p.kind().into(),
        level: p.level(),
        rate,
        seed,
        cd,
        hd,
        p2f,
        wall_ms: start.elapsed().as_millis(),
        status,
    }
}

/// Runs every cell in parallel and returns rows sorted by
/// (file, kind, level, rate, seed).
pub fn run_sweep(subjects: &[Subject], sweep: &Sweep) -> Result<Vec<Row>> {
    sweep.validate()?;
    let perturbations = sweep.perturbations();
    let mut jobs = Vec::new();
    for s in subjects {
        for p in &perturbations {
            for &rate in &sweep.rates {
                for &seed in &sweep.seeds {
                    jobs.push((s, *p, rate, seed));
                }
            }
        }
    }
    let mut rows: Vec<(usize, Row)> = jobs
        .par_iter()
        .enumerate()
        .map(|(i, (s, p, rate, seed))| (i, run_cell(s, sweep, p, *rate, *seed)))
        .collect();
    rows.sort_by_key(|(i, _)| *i);
    Ok(rows.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct Group {
    pub perturbation_kind: String,
    pub level: String,
    pub rate: usize,
    pub rows: usize,
    pub failed: usize,
    pub mean_cd: Option<f64>,
    pub mean_hd: Option<f64>,
    pub mean_p2f: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Aggregate {
    pub schema_version: u32,
    pub config_hash: String,
    pub groups: Vec<Group>,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-(kind, level, rate) means over files and seeds, in row order.
pub fn aggregate(rows: &[Row]) -> Vec<Group> {
    let mut groups: BTreeMap<(String, String, usize), Vec<&Row>> = BTreeMap::new();
    let mut order = Vec::new();
    for r in rows {
        let key = (r.perturbation_kind.clone(), r.level.clone(), r.rate);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            Group {
                perturbation_kind: key.0.clone(),
                level: key.1.clone(),
                rate: key.2,
                rows: members.len(),
                failed: members.iter().filter(|r| r.status != "ok").count(),
                mean_cd: mean(members.iter().map(|r| r.cd)),
                mean_hd: mean(members.iter().map(|r| r.hd)),
                mean_p2f: mean(members.iter().map(|r| r.p2f)),
            }
        })
        .collect()
}

pub fn write_csv(rows: &[Row], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn cloud_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("xyz" | "txt" | "pts" | "ply" | "off")
                )
        })
        .collect();
    files.sort();
    Ok(files)
}

fn load_subject(path: &Path, a: &RobustnessArgs) -> Result<Subject> {
    let name = path.file_name().and_then(|n| n.to_str()).context("non-UTF-8 file name")?.to_string();
    let input = read_cloud(path).with_context(|| format!("reading {}", path.display()))?;
    let gt = match &a.gt_dir {
        Some(dir) => read_cloud(dir.join(&name)).with_context(|| format!("reading ground truth for {name}"))?,
        None => input.clone(),
    };
    let mesh = match &a.mesh_dir {
        Some(dir) => {
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let candidate = ["off", "ply"]
                .iter()
                .map(|ext| dir.join(format!("{stem}.{ext}")))
                .find(|p| p.is_file())
                .with_context(|| format!("no mesh for {name} in {}", dir.display()))?;
            Some(read_mesh(&candidate)?)
        }
        None => None,
    };
    Ok(Subject { name, input, gt, mesh })
}

pub struct Outcome {
    pub rows: usize,
    pub failed: usize,
}

pub fn cmd_robustness(a: &RobustnessArgs) -> Result<Outcome> {
    let files = cloud_files(&a.input_dir)?;
    if files.is_empty() {
        anyhow::bail!("no point clouds found in {}", a.input_dir.display());
    }
    let subjects = files.iter().map(|f| load_subject(f, a)).collect::<Result<Vec<_>>>()?;
    let sweep = Sweep {
        noise: a.noise.clone(),
        sparsity: a.sparsity.clone(),
        rates: a.rates.clone(),
        seeds: a.seeds.clone(),
        sparsify_mode: match a.sparsify {
            SparsifyArg::Random => SparsifyMode::Random,
            SparsifyArg::Fps => SparsifyMode::Fps,
        },
        base: build_config(&a.pipeline, 4, 0),
        use_patches: !a.pipeline.no_patching,
    };
    let rows = run_sweep(&subjects, &sweep)?;
    write_csv(&rows, &a.csv)?;
    let hash = {
        let mut v = serde_json::to_value(&sweep)?;
        v["sparsify"] = format!("{:?}", a.sparsify).into();
        v["base_hash"] = config_hash(&sweep.base, sweep.use_patches).into();
        hex::encode(Sha256::digest(serde_json::to_string(&v)?.as_bytes()))
    };
    let agg = Aggregate {
        schema_version: 1,
        config_hash: hash,
        groups: aggregate(&rows),
    };
    fs::write(&a.json, serde_json::to_string_pretty(&agg)? + "\n").with_context(|| format!("writing {}", a.json.display()))?;
    for r in rows.iter().filter(|r| r.status != "ok") {
        eprintln!("{} {} {} r={} seed={}: {}", r.file, r.perturbation_kind, r.level, r.rate, r.seed, r.status);
    }
    Ok(Outcome {
        rows: rows.len(),
        failed: rows.iter().filter(|r| r.status != "ok").count(),
    })
}
