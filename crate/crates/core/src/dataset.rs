//! Simulated dataset trees.
//!
//! ```text
//! <root>/manifest.json
//! <root>/<split>/<surface-id>/surface.f32r
//! <root>/<split>/<surface-id>/f<freq>/n<step>.pgm      (n<step>.f32r when unquantized)
//! <root>/<split>/<surface-id>/f<freq>/phase_gt.f32r
//! ```
//!
//! Steps are numbered from zero. Everything except `created_unix` is a pure
//! function of the dataset spec, so two builds with equal specs produce the
//! same `content_checksum`.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fringe::{restricted_depth_sim, FringeImage, FringeSet, RenderParams};
use crate::nn::{Sample, Variant, VariantKind};
use crate::raster::{self, FloatRaster};
use crate::rng::derive_seed;
use crate::surface::{add_noise, generate_surface, render_scene, Surface, SurfaceGenConfig};

pub const GENERATOR: &str = concat!("phaseforge ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Regime {
    /// Depth confined to one period of the highest frequency.
    Restricted,
    Unrestricted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Validation, Split::Test];

    pub fn tag(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitCounts {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: 30,
            validation: 5,
            test: 5,
        }
    }
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Validation => self.validation,
            Split::Test => self.test,
        }
    }
}

/// Everything that determines a dataset tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub regime: Regime,
    pub splits: SplitCounts,
    /// Per-surface generation template; its `seed` is replaced per surface.
    pub surface: SurfaceGenConfig,
    pub render: RenderParams,
    /// Frequencies usable as network inputs.
    pub frequencies: Vec<f64>,
    /// Additional frequencies rendered only as targets.
    pub ground_truth_frequencies: Vec<f64>,
    pub phase_steps: usize,
    pub quantize: bool,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn all_frequencies(&self) -> Vec<f64> {
        let mut all = self.frequencies.clone();
        for f in &self.ground_truth_frequencies {
            if !all.contains(f) {
                all.push(*f);
            }
        }
        all
    }

    pub fn highest_frequency(&self) -> f64 {
        self.all_frequencies().into_iter().fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        self.surface.validate()?;
        self.render.validate()?;
        if self.frequencies.is_empty() {
            return Err(Error::invalid("dataset needs at least one input frequency"));
        }
        if self.all_frequencies().iter().any(|f| !(*f > 0.0 && f.is_finite())) {
            return Err(Error::invalid("dataset frequencies must be positive"));
        }
        if self.phase_steps < 3 {
            return Err(Error::invalid(format!(
                "dataset needs N >= 3 phase steps, got {}",
                self.phase_steps
            )));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::invalid("noise sigma must be nonnegative"));
        }
        let z_th = restricted_depth_sim(&self.render, self.highest_frequency())?;
        let (lo, hi) = self.surface.depth_range;
        match self.regime {
            Regime::Restricted if lo < 0.0 || hi > z_th + 1e-9 => Err(Error::invalid(format!(
                "restricted regime needs depth within [0, {z_th:.4}], configured [{lo}, {hi}]"
            ))),
            Regime::Unrestricted if hi - lo <= z_th => Err(Error::invalid(format!(
                "unrestricted regime needs a depth span above {z_th:.4}, configured [{lo}, {hi}]"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurfaceEntry {
    pub id: String,
    pub seed: u64,
    pub files: Vec<FileEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntry {
    pub count: usize,
    pub surfaces: Vec<SurfaceEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitListing {
    pub train: SplitEntry,
    pub validation: SplitEntry,
    pub test: SplitEntry,
}

impl SplitListing {
    pub fn get(&self, split: Split) -> &SplitEntry {
        match split {
            Split::Train => &self.train,
            Split::Validation => &self.validation,
            Split::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub generator: String,
    /// Excluded from `content_checksum`.
    pub created_unix: u64,
    pub spec: DatasetSpec,
    pub splits: SplitListing,
    pub content_checksum: String,
}

impl Manifest {
    /// SHA-256 of the manifest with its timestamp and checksum fields blanked.
    pub fn compute_checksum(&self) -> String {
        let mut m = self.clone();
        m.created_unix = 0;
        m.content_checksum.clear();
        raster::sha256_hex(&serde_json::to_vec(&m).expect("manifest serializes"))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn frequency_tag(f: f64) -> String {
    if f.fract() == 0.0 && f.abs() < 1e15 {
        format!("f{}", f as i64)
    } else {
        format!("f{f}")
    }
}

fn surface_id(index: usize) -> String {
    format!("s{index:04}")
}

fn relative(parts: &[&str]) -> String {
    parts.join("/")
}

fn write_tracked(root: &Path, rel: String, bytes: &[u8], files: &mut Vec<FileEntry>) -> Result<()> {
    raster::write_bytes(&root.join(&rel), bytes)?;
    files.push(FileEntry {
        path: rel,
        sha256: raster::sha256_hex(bytes),
    });
    Ok(())
}

fn write_surface(spec: &DatasetSpec, root: &Path, split: Split, index: usize) -> Result<SurfaceEntry> {
    let seed = derive_seed(spec.seed, split.tag(), index as u64);
    let id = surface_id(index);
    let surface = generate_surface(&SurfaceGenConfig {
        seed,
        ..spec.surface.clone()
    })?;
    let sets = render_scene(&surface, &spec.all_frequencies(), spec.phase_steps, &spec.render)?;
    let (w, h) = (surface.width(), surface.height());
    let mut files = Vec::new();
    let base = [split.tag(), id.as_str()];
    write_tracked(
        root,
        relative(&[&base[..], &["surface.f32r"]].concat()),
        &FloatRaster::from_f64(w, h, surface.depth()).encode(),
        &mut files,
    )?;
    for set in &sets {
        let ftag = frequency_tag(set.frequency());
        for (k, image) in set.images().iter().enumerate() {
            let image = add_noise(image, spec.noise_sigma, derive_seed(seed, &format!("noise/{ftag}"), k as u64))?;
            let (name, bytes) = if spec.quantize {
                let px: Vec<u8> = image.data().iter().map(|v| raster::quantize(*v)).collect();
                (format!("n{k}.pgm"), raster::encode_pgm(w, h, &px))
            } else {
                (format!("n{k}.f32r"), FloatRaster::from_f64(w, h, image.data()).encode())
            };
            write_tracked(root, relative(&[&base[..], &[ftag.as_str(), name.as_str()]].concat()), &bytes, &mut files)?;
        }
        let phase: Vec<f64> = (0..h)
            .flat_map(|y| (0..w).map(move |x| (x, y)))
            .map(|(x, y)| spec.render.phase_at(surface.get(x, y), set.frequency(), x, w))
            .collect();
        write_tracked(
            root,
            relative(&[&base[..], &[ftag.as_str(), "phase_gt.f32r"]].concat()),
            &FloatRaster::from_f64(w, h, &phase).encode(),
            &mut files,
        )?;
    }
    Ok(SurfaceEntry { id, seed, files })
}

/// Generates every split of the dataset under `out` and writes `manifest.json`.
pub fn build_dataset(spec: &DatasetSpec, out: &Path) -> Result<Manifest> {
    spec.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut entries = Vec::with_capacity(3);
    for split in Split::ALL {
        let count = spec.splits.get(split);
        let surfaces = (0..count)
            .into_par_iter()
            .map(|i| write_surface(spec, out, split, i))
            .collect::<Result<Vec<_>>>()?;
        entries.push(SplitEntry { count, surfaces });
    }
    let mut it = entries.into_iter();
    let splits = SplitListing {
        train: it.next().expect("three splits"),
        validation: it.next().expect("three splits"),
        test: it.next().expect("three splits"),
    };
    let created_unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut manifest = Manifest {
        generator: GENERATOR.to_string(),
        created_unix,
        spec: spec.clone(),
        splits,
        content_checksum: String::new(),
    };
    manifest.content_checksum = manifest.compute_checksum();
    let path = out.join("manifest.json");
    let json = serde_json::to_vec_pretty(&manifest)?;
    raster::write_bytes(&path, &json)?;
    Ok(manifest)
}

/// A fully loaded surface and its fringe sets.
#[derive(Debug, Clone)]
pub struct Scene {
    pub id: String,
    pub surface: Surface,
    pub sets: Vec<FringeSet>,
}

impl Scene {
    pub fn set(&self, frequency: f64) -> Option<&FringeSet> {
        self.sets.iter().find(|s| s.frequency() == frequency)
    }
}

/// An opened dataset tree.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub manifest: Manifest,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        let manifest = Manifest::read(&root.join("manifest.json"))?;
        if manifest.compute_checksum() != manifest.content_checksum {
            return Err(Error::Checksum(root.join("manifest.json")));
        }
        Ok(Self {
            root: root.to_path_buf(),
            manifest,
        })
    }

    /// Re-hashes every listed file.
    pub fn verify(&self) -> Result<()> {
        for split in Split::ALL {
            for s in &self.manifest.splits.get(split).surfaces {
                for f in &s.files {
                    let path = self.root.join(&f.path);
                    if raster::file_sha256(&path)? != f.sha256 {
                        return Err(Error::Checksum(path));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        self.manifest.splits.get(split).surfaces.len()
    }

    pub fn load_scene(&self, split: Split, index: usize) -> Result<Scene> {
        let entry = self
            .manifest
            .splits
            .get(split)
            .surfaces
            .get(index)
            .ok_or_else(|| Error::invalid(format!("{} has no surface {index}", split.tag())))?;
        let dir = self.root.join(split.tag()).join(&entry.id);
        let raster = FloatRaster::read(&dir.join("surface.f32r"))?;
        let surface = Surface::from_depth(raster.width, raster.height, raster.to_f64())?;
        let spec = &self.manifest.spec;
        let sets = spec
            .all_frequencies()
            .into_iter()
            .map(|f| load_set(&dir.join(frequency_tag(f)), f, spec.phase_steps))
            .collect::<Result<Vec<_>>>()?;
        Ok(Scene {
            id: entry.id.clone(),
            surface,
            sets,
        })
    }

    /// Checks that the dataset carries every fringe `variant` consumes or produces.
    pub fn check_variant(&self, variant: &Variant) -> Result<()> {
        variant.validate()?;
        let spec = &self.manifest.spec;
        if variant.kind == VariantKind::UI && spec.regime != Regime::Restricted {
            return Err(Error::invalid(
                "the single-input unwrapping variant needs a RESTRICTED dataset",
            ));
        }
        for f in &variant.input_frequencies {
            if !spec.frequencies.contains(f) {
                return Err(Error::invalid(format!(
                    "dataset has no input fringes at frequency {f} (available: {:?})",
                    spec.frequencies
                )));
            }
        }
        let all = spec.all_frequencies();
        for stack in &variant.output_plan {
            if !all.contains(&stack.frequency) {
                return Err(Error::invalid(format!(
                    "dataset has no target fringes at frequency {}",
                    stack.frequency
                )));
            }
            if stack.phase_steps != spec.phase_steps {
                return Err(Error::invalid(format!(
                    "variant wants {} phase steps, dataset has {}",
                    stack.phase_steps, spec.phase_steps
                )));
            }
        }
        Ok(())
    }

    /// Training pairs for `variant`: first phase step of each input frequency in,
    /// every output stack out.
    pub fn samples(&self, split: Split, variant: &Variant) -> Result<Vec<Sample>> {
        self.check_variant(variant)?;
        (0..self.count(split))
            .map(|i| scene_sample(&self.load_scene(split, i)?, variant))
            .collect()
    }
}

/// Builds one training pair from a loaded scene.
pub fn scene_sample(scene: &Scene, variant: &Variant) -> Result<Sample> {
    let lookup = |f: f64| {
        scene
            .set(f)
            .ok_or_else(|| Error::invalid(format!("scene {} lacks frequency {f}", scene.id)))
    };
    let inputs = variant
        .input_frequencies
        .iter()
        .map(|f| lookup(*f).map(|s| &s.images()[0]))
        .collect::<Result<Vec<_>>>()?;
    let input = crate::nn::train::images_to_tensor(&inputs)?;
    let targets: Vec<&FringeImage> = variant
        .output_plan
        .iter()
        .map(|stack| lookup(stack.frequency).map(|s| s.images().iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let target = crate::nn::train::images_to_tensor(&targets)?;
    Ok(Sample { input, target })
}

/// Reads `n0..n{N-1}` from a frequency directory as PGM or F32R.
pub fn load_set(dir: &Path, frequency: f64, phase_steps: usize) -> Result<FringeSet> {
    let images = (0..phase_steps)
        .map(|k| {
            let pgm = dir.join(format!("n{k}.pgm"));
            if pgm.exists() {
                raster::read_pgm(&pgm)
            } else {
                let r = FloatRaster::read(&dir.join(format!("n{k}.f32r")))?;
                FringeImage::from_clamped(r.width, r.height, r.to_f64())
            }
        })
        .collect::<Result<Vec<_>>>()?;
    FringeSet::new(frequency, images)
}
