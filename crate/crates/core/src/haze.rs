//! Synthetic haze from the atmospheric scattering model.
//!
//! A clear image `J`, a depth map `d`, a scattering coefficient `β` and an
//! airlight colour `A` give the hazy image
//!
//! ```text
//! t = exp(−β·d)
//! I = J·t + A·(1 − t)
//! ```
//!
//! Clear images are procedural (a colour gradient with rectangles and disks
//! on top); depth maps are ramps or steps spanning `[0, 500]`.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Error, Result};
use crate::imaging::{Image, ImageError};

/// The nine scattering coefficients the generator samples from.
pub const BETAS: [f64; 9] = [0.004, 0.006, 0.008, 0.010, 0.012, 0.014, 0.016, 0.018, 0.020];
pub const MAX_DEPTH: f64 = 500.0;
pub const MANIFEST: &str = "manifest.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct HazeScene {
    pub clear: Image,
    /// Row-major `H × W` depths.
    pub depth: Vec<f64>,
    pub beta: f64,
    pub airlight: [f64; 3],
    /// Optional per-pixel multiplier on the transmission.
    pub density: Option<Vec<f64>>,
}

impl HazeScene {
    pub fn validate(&self) -> Result<()> {
        let n = self.clear.height() * self.clear.width();
        if self.clear.channels() != 3 {
            return Err(config("haze scenes need a colour image"));
        }
        if self.depth.len() != n || self.density.as_ref().is_some_and(|d| d.len() != n) {
            return Err(config("depth map does not match the image"));
        }
        if self.beta.is_nan() || self.beta < 0.0 {
            return Err(config(format!("scattering coefficient {} is negative", self.beta)));
        }
        if self.airlight.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(config("airlight must lie in [0,1]"));
        }
        Ok(())
    }

    /// Transmission including the optional density field, clamped to `[0,1]`.
    pub fn effective_transmission(&self) -> Result<Vec<f64>> {
        let mut t = transmission(&self.depth, self.beta)?;
        if let Some(field) = &self.density {
            for (t, f) in t.iter_mut().zip(field) {
                *t = (*t * f).clamp(0.0, 1.0);
            }
        }
        Ok(t)
    }
}

/// `exp(−β·d)` per pixel.
pub fn transmission(depth: &[f64], beta: f64) -> Result<Vec<f64>> {
    if beta.is_nan() || beta < 0.0 {
        return Err(config(format!("scattering coefficient {beta} is negative")));
    }
    if let Some(d) = depth.iter().find(|d| !(d.is_finite() && **d >= 0.0)) {
        return Err(config(format!("depth {d} is not a finite nonnegative value")));
    }
    Ok(depth.iter().map(|d| (-beta * d).exp()).collect())
}

/// `J·t + A·(1−t)`, clamped to `[0,1]`.
pub fn synthesize(scene: &HazeScene) -> Result<Image> {
    scene.validate()?;
    let t = scene.effective_transmission()?;
    let n = t.len();
    let data = scene
        .clear
        .data()
        .iter()
        .enumerate()
        .map(|(i, &j)| {
            let (c, p) = (i / n, i % n);
            (j as f64 * t[p] + scene.airlight[c] * (1.0 - t[p])).clamp(0.0, 1.0) as f32
        })
        .collect();
    Ok(Image::new(3, scene.clear.height(), scene.clear.width(), data)?)
}

#[derive(Clone, Debug, PartialEq)]
pub struct HazePair {
    pub hazy: Image,
    pub clear: Image,
    pub beta: f64,
    pub scene: HazeScene,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SynthOptions {
    pub count: usize,
    pub size: usize,
    pub seed: u64,
    pub nonhomogeneous: bool,
}

/// Generates `count` pairs of `size × size` images. Sample `i` draws from
/// its own ChaCha stream, so the result is a pure function of the options.
pub fn make_dataset(opts: SynthOptions) -> Result<Vec<HazePair>> {
    if opts.count == 0 || opts.size < 4 {
        return Err(config("dataset needs at least one image of side 4 or more"));
    }
    (0..opts.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            rng.set_stream(i as u64);
            let scene = random_scene(&mut rng, opts.size, opts.nonhomogeneous)?;
            let hazy = synthesize(&scene)?;
            Ok(HazePair {
                hazy,
                clear: scene.clear.clone(),
                beta: scene.beta,
                scene,
            })
        })
        .collect()
}

fn random_scene(rng: &mut ChaCha8Rng, size: usize, nonhomogeneous: bool) -> Result<HazeScene> {
    let clear = procedural_image(rng, size)?;
    let depth = procedural_depth(rng, size);
    let beta = BETAS[rng.gen_range(0..BETAS.len())];
    let a = rng.gen_range(0.7..=1.0);
    let density = nonhomogeneous.then(|| smooth_field(rng, size));
    Ok(HazeScene {
        clear,
        depth,
        beta,
        airlight: [a; 3],
        density,
    })
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

fn procedural_image(rng: &mut ChaCha8Rng, size: usize) -> Result<Image> {
    let n = size * size;
    let mut data = vec![0.0f32; 3 * n];
    let (from, to) = (random_colour(rng), random_colour(rng));
    let angle: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    for y in 0..size {
        for x in 0..size {
            let u = ((x as f32 - size as f32 / 2.0) * dx + (y as f32 - size as f32 / 2.0) * dy) / size as f32 + 0.5;
            let u = u.clamp(0.0, 1.0);
            for c in 0..3 {
                data[c * n + y * size + x] = from[c] + (to[c] - from[c]) * u;
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let colour = random_colour(rng);
        let (x0, y0) = (rng.gen_range(0..size), rng.gen_range(0..size));
        let (w, h) = (rng.gen_range(size / 8..=size / 2), rng.gen_range(size / 8..=size / 2));
        for y in y0..(y0 + h).min(size) {
            for x in x0..(x0 + w).min(size) {
                for c in 0..3 {
                    data[c * n + y * size + x] = colour[c];
                }
            }
        }
    }
    for _ in 0..rng.gen_range(1..=3) {
        let colour = random_colour(rng);
        let (cx, cy) = (rng.gen_range(0.0..size as f32), rng.gen_range(0.0..size as f32));
        let r = rng.gen_range(size as f32 / 10.0..=size as f32 / 4.0);
        for y in 0..size {
            for x in 0..size {
                if (x as f32 - cx).powi(2) + (y as f32 - cy).powi(2) <= r * r {
                    for c in 0..3 {
                        data[c * n + y * size + x] = colour[c];
                    }
                }
            }
        }
    }
    Ok(Image::new(3, size, size, data)?)
}

fn procedural_depth(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let near = rng.gen_range(0.0..MAX_DEPTH / 2.0);
    let far = rng.gen_range(near..=MAX_DEPTH);
    let vertical = rng.gen_bool(0.5);
    let along = |y: usize, x: usize| if vertical { y } else { x } as f64 / (size - 1) as f64;
    if rng.gen_bool(0.5) {
        (0..size * size)
            .map(|i| near + (far - near) * along(i / size, i % size))
            .collect()
    } else {
        let split = rng.gen_range(0.2..0.8);
        (0..size * size)
            .map(|i| if along(i / size, i % size) < split { near } else { far })
            .collect()
    }
}

/// Bilinear upsampling of a random 4×4 grid into `[0.5, 1.5]`.
fn smooth_field(rng: &mut ChaCha8Rng, size: usize) -> Vec<f64> {
    let grid: Vec<f64> = (0..16).map(|_| rng.gen_range(0.5..=1.5)).collect();
    let at = |gy: usize, gx: usize| grid[gy.min(3) * 4 + gx.min(3)];
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let fy = y as f64 * 3.0 / (size - 1) as f64;
            let fx = x as f64 * 3.0 / (size - 1) as f64;
            let (iy, ix) = (fy.floor() as usize, fx.floor() as usize);
            let (ty, tx) = (fy - iy as f64, fx - ix as f64);
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push((top * (1.0 - ty) + bottom * ty).clamp(0.5, 1.5));
        }
    }
    out
}

/// One manifest line, paths resolved against the dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub clear: PathBuf,
    pub hazy: PathBuf,
    pub beta: f64,
}

/// Writes `clear_NNNN.ppm`, `hazy_NNNN.ppm` and the manifest into `dir`.
pub fn write_dataset(dir: &Path, pairs: &[HazePair]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let mut manifest = String::new();
    for (i, pair) in pairs.iter().enumerate() {
        let (clear, hazy) = (format!("clear_{i:04}.ppm"), format!("hazy_{i:04}.ppm"));
        pair.clear.save(dir.join(&clear))?;
        pair.hazy.save(dir.join(&hazy))?;
        manifest.push_str(&format!("{clear} {hazy} {}\n", pair.beta));
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| io_error(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestEntry>> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
    let mut entries = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = || ImageError::Invalid(format!("{}:{}: expected `clear hazy beta`", path.display(), n + 1));
        let [clear, hazy, beta] = parts[..] else {
            return Err(bad().into());
        };
        let beta: f64 = beta.parse().map_err(|_| bad())?;
        entries.push(ManifestEntry {
            clear: dir.join(clear),
            hazy: dir.join(hazy),
            beta,
        });
    }
    if entries.is_empty() {
        return Err(ImageError::Invalid(format!("{} lists no pairs", path.display())).into());
    }
    Ok(entries)
}

/// Loads every `(hazy, clear, beta)` listed in the manifest.
pub fn load_dataset(dir: &Path) -> Result<Vec<(Image, Image, f64)>> {
    read_manifest(dir)?
        .into_iter()
        .map(|e| Ok((Image::load(&e.hazy)?, Image::load(&e.clear)?, e.beta)))
        .collect()
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    ImageError::Io {
        path: path.display().to_string(),
        source,
    }
    .into()
}
