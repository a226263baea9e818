//! Procedural object scenes paired with ground-truth hand layouts.
//!
//! Each scene is a grayscale crop of one object: a body (disk, rounded
//! rectangle or ellipse) with a brighter handle stub sticking out of it.
//! The ground-truth hand grabs the handle from outside: palm centered one
//! palm radius beyond the handle tip, approaching along the inward handle
//! axis, palm scale proportional to the handle width.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::Layout;
use crate::grid::{pixel_center, pixel_of, Grid};
use crate::image::{quantize, read_pgm, write_pgm};

/// Palm scale `s = a²` per unit of handle width.
pub const PALM_PER_HANDLE_WIDTH: f64 = 2.0;
const BACKGROUND: f64 = 0.12;
const INSTANCE_SALT: u64 = 0x6a09_e667_f3bc_c909;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Category {
    Disk,
    RoundedRect,
    Ellipse,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Disk, Category::RoundedRect, Category::Ellipse];

    pub fn name(self) -> &'static str {
        match self {
            Category::Disk => "disk",
            Category::RoundedRect => "rounded-rect",
            Category::Ellipse => "ellipse",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Category {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Category::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown category {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorConfig {
    pub size: usize,
    pub n_instances: usize,
    pub categories: Vec<Category>,
    /// Std of the per-pixel texture noise.
    pub texture_noise: f64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            size: 32,
            n_instances: 20,
            categories: Category::ALL.to_vec(),
            texture_noise: 0.03,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size < 8 {
            return Err(Error::Config(format!("scene size must be >= 8, got {}", self.size)));
        }
        if self.n_instances == 0 {
            return Err(Error::Config("n_instances must be positive".into()));
        }
        if self.categories.is_empty() {
            return Err(Error::Config("at least one category is required".into()));
        }
        if !(self.texture_noise >= 0.0 && self.texture_noise < 0.5) {
            return Err(Error::Config(format!(
                "texture_noise out of range: {}",
                self.texture_noise
            )));
        }
        Ok(())
    }
}

/// Shape parameters shared by every scene of one instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceShape {
    pub category: Category,
    pub half_extent: [f64; 2],
    pub corner_radius: f64,
    pub body_intensity: f64,
    pub handle_length: f64,
    pub handle_width: f64,
    pub handle_intensity: f64,
}

/// Deterministic shape of `instance_id`; independent of any scene seed.
pub fn instance_shape(instance_id: usize, cfg: &GeneratorConfig) -> InstanceShape {
    let mut rng = ChaCha8Rng::seed_from_u64(INSTANCE_SALT ^ (instance_id as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let category = cfg.categories[instance_id % cfg.categories.len()];
    let (half_extent, corner_radius) = match category {
        Category::Disk => {
            let r = rng.random_range(0.26..0.36);
            ([r, r], 0.0)
        }
        Category::RoundedRect => ([rng.random_range(0.2..0.3), rng.random_range(0.2..0.3)], 0.08),
        Category::Ellipse => ([rng.random_range(0.26..0.36), rng.random_range(0.18..0.28)], 0.0),
    };
    InstanceShape {
        category,
        half_extent,
        corner_radius,
        body_intensity: rng.random_range(0.35..0.6),
        handle_length: rng.random_range(0.1..0.16),
        handle_width: rng.random_range(0.1..0.14),
        handle_intensity: rng.random_range(0.85..1.0),
    }
}

impl InstanceShape {
    /// Inside test in the body frame.
    fn body_contains(&self, p: [f64; 2]) -> bool {
        let [hx, hy] = self.half_extent;
        match self.category {
            Category::Disk | Category::Ellipse => (p[0] / hx).powi(2) + (p[1] / hy).powi(2) <= 1.0,
            Category::RoundedRect => {
                let r = self.corner_radius;
                let qx = (p[0].abs() - hx + r).max(0.0);
                let qy = (p[1].abs() - hy + r).max(0.0);
                p[0].abs() <= hx && p[1].abs() <= hy && qx.hypot(qy) <= r
            }
        }
    }

    /// Distance from the body center to its boundary along body-frame
    /// direction `u`.
    fn boundary_distance(&self, u: [f64; 2]) -> f64 {
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.body_contains([mid * u[0], mid * u[1]]) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSample {
    pub object_grid: Grid,
    pub object_mask: Grid,
    pub gt_layout: Layout,
    pub instance_id: usize,
    pub category: Category,
    /// Handle tip in normalized coordinates.
    pub handle_point: [f64; 2],
    pub handle_width: f64,
}

/// Hand grabbing a handle whose tip is `handle_point` and whose axis points
/// outward along unit `outward`.
pub fn ground_truth_layout(handle_point: [f64; 2], outward: [f64; 2], handle_width: f64) -> Layout {
    let s = PALM_PER_HANDLE_WIDTH * handle_width;
    Layout::new(
        s.sqrt(),
        handle_point[0] + s * outward[0],
        handle_point[1] + s * outward[1],
        -outward[0],
        -outward[1],
    )
}

fn rotate(p: [f64; 2], angle: f64) -> [f64; 2] {
    let (sn, cs) = angle.sin_cos();
    [cs * p[0] - sn * p[1], sn * p[0] + cs * p[1]]
}

/// One scene drawn from `rng`.
pub fn generate_scene<R: Rng + ?Sized>(rng: &mut R, cfg: &GeneratorConfig) -> Result<SceneSample> {
    cfg.validate()?;
    let instance_id = rng.random_range(0..cfg.n_instances);
    let shape = instance_shape(instance_id, cfg);
    let body_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let handle_angle = rng.random_range(0.0..std::f64::consts::TAU);
    let center = [rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05)];

    let outward = [handle_angle.cos(), handle_angle.sin()];
    let reach = shape.boundary_distance(rotate(outward, -body_angle));
    let base = [center[0] + reach * outward[0], center[1] + reach * outward[1]];
    let tip = [
        base[0] + shape.handle_length * outward[0],
        base[1] + shape.handle_length * outward[1],
    ];

    let n = cfg.size;
    let noise = Normal::new(0.0, cfg.texture_noise.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut object = Grid::zeros(n, n);
    let mut mask = Grid::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let p = pixel_center(i, j, n, n);
            let d = [p[0] - base[0], p[1] - base[1]];
            let along = d[0] * outward[0] + d[1] * outward[1];
            let across = -d[0] * outward[1] + d[1] * outward[0];
            // capsule around the handle axis, starting slightly inside the body
            let clamped = along.clamp(-0.03, shape.handle_length);
            let in_handle = (along - clamped).hypot(across) <= 0.5 * shape.handle_width;
            let local = rotate([p[0] - center[0], p[1] - center[1]], -body_angle);
            let in_body = shape.body_contains(local);
            let tone = if in_handle {
                shape.handle_intensity
            } else if in_body {
                shape.body_intensity
            } else {
                BACKGROUND
            };
            let texture = if cfg.texture_noise > 0.0 {
                noise.sample(rng)
            } else {
                0.0
            };
            object.set(i, j, (tone + texture).clamp(0.0, 1.0));
            if in_handle || in_body {
                mask.set(i, j, 1.0);
            }
        }
    }
    Ok(SceneSample {
        object_grid: quantize(&object),
        object_mask: mask,
        gt_layout: ground_truth_layout(tip, outward, shape.handle_width),
        instance_id,
        category: shape.category,
        handle_point: tip,
        handle_width: shape.handle_width,
    })
}

/// `n` scenes; scene `k` uses stream `k` of the seeded generator, so any
/// prefix is independent of `n`.
pub fn generate_scenes(cfg: &GeneratorConfig, n: usize, seed: u64) -> Result<Vec<SceneSample>> {
    (0..n)
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            generate_scene(&mut rng, cfg)
        })
        .collect()
}

/// Checks the construction invariants of a generated scene.
pub fn check_scene_invariants(s: &SceneSample) -> std::result::Result<(), String> {
    let l = &s.gt_layout;
    let c = l.center();
    let dist = (c[0] - s.handle_point[0]).hypot(c[1] - s.handle_point[1]);
    if dist > 2.0 * l.scale() + 1e-12 {
        return Err(format!("palm center {dist} from the handle, scale {}", l.scale()));
    }
    // approach direction points from the palm toward the handle
    let to_handle = [s.handle_point[0] - c[0], s.handle_point[1] - c[1]];
    if l.b1 * to_handle[0] + l.b2 * to_handle[1] <= 0.0 {
        return Err("approach direction points away from the handle".into());
    }
    if !s.object_mask.values().iter().any(|&v| v > 0.0) {
        return Err("empty object mask".into());
    }
    let (i, j) = pixel_of(s.handle_point, s.object_mask.width(), s.object_mask.height());
    let near_handle = (i.saturating_sub(1)..=(i + 1).min(s.object_mask.width() - 1)).any(|ii| {
        (j.saturating_sub(1)..=(j + 1).min(s.object_mask.height() - 1)).any(|jj| s.object_mask.get(ii, jj) > 0.0)
    });
    if !near_handle {
        return Err("handle tip is not covered by the object mask".into());
    }
    Ok(())
}

/// Normalized Gaussian bump at the handle tip (`sigma` in normalized
/// units). `sigma <= 0` gives a point mass on the tip pixel.
pub fn heatmap_for_scene(sample: &SceneSample, sigma: f64) -> Grid {
    let (w, h) = (sample.object_grid.width(), sample.object_grid.height());
    let hp = sample.handle_point;
    let mut g = if sigma > 0.0 {
        Grid::from_fn(w, h, |i, j| {
            let p = pixel_center(i, j, w, h);
            let d2 = (p[0] - hp[0]).powi(2) + (p[1] - hp[1]).powi(2);
            (-d2 / (2.0 * sigma * sigma)).exp()
        })
    } else {
        Grid::zeros(w, h)
    };
    let total = g.sum();
    if !(total > 0.0) || !total.is_finite() {
        let (i, j) = pixel_of(hp, w, h);
        g = Grid::zeros(w, h);
        g.set(i, j, 1.0);
        return g;
    }
    for v in g.values_mut() {
        *v /= total;
    }
    g
}

/// Shannon entropy in nats of a grid read as a distribution.
pub fn entropy(g: &Grid) -> f64 {
    g.values().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleRecord {
    pub id: usize,
    pub instance_id: usize,
    pub category: Category,
    /// Directory under the dataset root holding the sample files.
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: String,
    pub records: Vec<SampleRecord>,
}

pub const MANIFEST_FILE: &str = "manifest.txt";
const MANIFEST_MAGIC: &str = "handlayout-dataset 1";

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn instance_ids(&self) -> BTreeSet<usize> {
        self.records.iter().map(|r| r.instance_id).collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MANIFEST_MAGIC}\nsplit {}\ncount {}\n", self.split, self.records.len());
        for r in &self.records {
            out.push_str(&format!("sample {} {} {} {}\n", r.id, r.instance_id, r.category, r.dir));
        }
        out
    }

    /// Writes the manifest as `file_name` inside its root.
    pub fn save(&self, file_name: &str) -> Result<PathBuf> {
        let path = self.root.join(file_name);
        fs::write(&path, self.to_text()).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Reads a manifest file; its directory becomes the root.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |msg: String| Error::Dataset(format!("{}: {msg}", path.display()));
        let mut lines = text.lines();
        if lines.next() != Some(MANIFEST_MAGIC) {
            return Err(bad("missing manifest header".into()));
        }
        let split = lines
            .next()
            .and_then(|l| l.strip_prefix("split "))
            .ok_or_else(|| bad("missing split line".into()))?
            .to_string();
        let count: usize = lines
            .next()
            .and_then(|l| l.strip_prefix("count "))
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("missing count line".into()))?;
        let mut records = Vec::with_capacity(count);
        let mut seen = BTreeSet::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split_whitespace().collect();
            let rec = match f.as_slice() {
                ["sample", id, inst, cat, dir] => SampleRecord {
                    id: id.parse().map_err(|_| bad(format!("bad id in {line:?}")))?,
                    instance_id: inst.parse().map_err(|_| bad(format!("bad instance in {line:?}")))?,
                    category: cat.parse()?,
                    dir: dir.to_string(),
                },
                _ => return Err(bad(format!("bad record {line:?}"))),
            };
            if !seen.insert(rec.id) {
                return Err(bad(format!("duplicate sample id {}", rec.id)));
            }
            records.push(rec);
        }
        if records.len() != count {
            return Err(bad(format!("count says {count} but {} records follow", records.len())));
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, split, records })
    }
}

fn layout_text(s: &SceneSample) -> String {
    format!(
        "{}\ninstance_id {}\ncategory {}\nhandle_point {} {}\nhandle_width {}\n",
        s.gt_layout.to_line(),
        s.instance_id,
        s.category,
        s.handle_point[0],
        s.handle_point[1],
        s.handle_width
    )
}

/// Writes every sample into `root/sample_NNNNN/` plus `root/manifest.txt`.
pub fn write_dataset(samples: &[SceneSample], root: &Path) -> Result<DatasetManifest> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let mut records = Vec::with_capacity(samples.len());
    for (id, s) in samples.iter().enumerate() {
        let dir = format!("sample_{id:05}");
        let path = root.join(&dir);
        fs::create_dir_all(&path).map_err(|e| Error::io(&path, e))?;
        write_pgm(&s.object_grid, &path.join("object.pgm"))?;
        write_pgm(&s.object_mask, &path.join("objmask.pgm"))?;
        let lp = path.join("layout.txt");
        fs::write(&lp, layout_text(s)).map_err(|e| Error::io(&lp, e))?;
        records.push(SampleRecord {
            id,
            instance_id: s.instance_id,
            category: s.category,
            dir,
        });
    }
    let manifest = DatasetManifest {
        root: root.to_path_buf(),
        split: "all".into(),
        records,
    };
    manifest.save(MANIFEST_FILE)?;
    Ok(manifest)
}

fn parse_layout_file(text: &str) -> std::result::Result<(Layout, usize, Category, [f64; 2], f64), String> {
    let mut lines = text.lines();
    let layout: Layout = lines
        .next()
        .ok_or("empty layout file")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    let mut field = |key: &str| -> std::result::Result<Vec<String>, String> {
        let line = lines.next().ok_or_else(|| format!("missing {key} line"))?;
        let rest = line
            .strip_prefix(key)
            .and_then(|r| r.strip_prefix(' '))
            .ok_or_else(|| format!("expected {key}, found {line:?}"))?;
        Ok(rest.split_whitespace().map(str::to_string).collect())
    };
    let num = |v: &str| v.parse::<f64>().map_err(|_| format!("bad number {v:?}"));
    let inst = field("instance_id")?;
    let instance_id = inst.first().and_then(|v| v.parse().ok()).ok_or("bad instance_id")?;
    let category = field("category")?
        .first()
        .ok_or("missing category")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    let hp = field("handle_point")?;
    if hp.len() != 2 {
        return Err("handle_point needs two values".into());
    }
    let handle_point = [num(&hp[0])?, num(&hp[1])?];
    let hw = field("handle_width")?;
    let handle_width = num(hw.first().ok_or("missing handle_width")?)?;
    Ok((layout, instance_id, category, handle_point, handle_width))
}

/// Loads one sample directory (`object.pgm`, `objmask.pgm`, `layout.txt`).
pub fn load_sample_dir(dir: &Path) -> std::result::Result<SceneSample, String> {
    let object_grid = read_pgm(&dir.join("object.pgm")).map_err(|e| e.to_string())?;
    let object_mask = read_pgm(&dir.join("objmask.pgm")).map_err(|e| e.to_string())?;
    object_grid.same_shape(&object_mask).map_err(|e| e.to_string())?;
    let lp = dir.join("layout.txt");
    let text = fs::read_to_string(&lp).map_err(|e| format!("{}: {e}", lp.display()))?;
    let (gt_layout, instance_id, category, handle_point, handle_width) =
        parse_layout_file(&text).map_err(|e| format!("layout.txt: {e}"))?;
    Ok(SceneSample {
        object_grid,
        object_mask,
        gt_layout,
        instance_id,
        category,
        handle_point,
        handle_width,
    })
}

/// Loads the samples listed in `manifest`, in manifest order.
pub fn read_samples(manifest: &DatasetManifest) -> Result<Vec<SceneSample>> {
    manifest
        .records
        .iter()
        .map(|r| {
            let err = |reason: String| Error::Sample { id: r.id, reason };
            let s = load_sample_dir(&manifest.root.join(&r.dir)).map_err(err)?;
            if s.instance_id != r.instance_id || s.category != r.category {
                return Err(err("layout.txt disagrees with the manifest".into()));
            }
            Ok(s)
        })
        .collect()
}

/// Reads `root/manifest.txt` and every sample it lists.
pub fn read_dataset(root: &Path) -> Result<Vec<SceneSample>> {
    read_samples(&DatasetManifest::load(&root.join(MANIFEST_FILE))?)
}

/// Picks `held_out` of the distinct `ids` at random.
pub fn choose_held_out<R: Rng + ?Sized>(
    ids: &BTreeSet<usize>,
    held_out: usize,
    rng: &mut R,
) -> Result<BTreeSet<usize>> {
    if held_out >= ids.len() {
        return Err(Error::HeldOutTooLarge {
            held_out,
            instances: ids.len(),
        });
    }
    let mut shuffled: Vec<usize> = ids.iter().copied().collect();
    shuffled.shuffle(rng);
    Ok(shuffled[..held_out].iter().copied().collect())
}

/// Holds out all samples of `held_out` randomly chosen instances.
pub fn split_by_instance<R: Rng + ?Sized>(
    manifest: &DatasetManifest,
    held_out: usize,
    rng: &mut R,
) -> Result<(DatasetManifest, DatasetManifest)> {
    let test_ids = choose_held_out(&manifest.instance_ids(), held_out, rng)?;
    let (test, train): (Vec<_>, Vec<_>) = manifest
        .records
        .iter()
        .cloned()
        .partition(|r| test_ids.contains(&r.instance_id));
    let part = |split: &str, records| DatasetManifest {
        root: manifest.root.clone(),
        split: split.into(),
        records,
    };
    Ok((part("train", train), part("test", test)))
}

/// In-memory counterpart of [`split_by_instance`]; the same seed picks the
/// same instances.
pub fn split_samples_by_instance<R: Rng + ?Sized>(
    samples: Vec<SceneSample>,
    held_out: usize,
    rng: &mut R,
) -> Result<(Vec<SceneSample>, Vec<SceneSample>)> {
    let ids = samples.iter().map(|s| s.instance_id).collect();
    let test_ids = choose_held_out(&ids, held_out, rng)?;
    let (test, train) = samples.into_iter().partition(|s| test_ids.contains(&s.instance_id));
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn handle_on_the_right_is_approached_leftward() {
        let l = ground_truth_layout([0.6, 0.0], [1.0, 0.0], 0.1);
        assert!(l.b1 < 0.0);
        assert!(l.x > 0.6);
    }

    #[test]
    fn doubling_handle_width_doubles_scale() {
        let l1 = ground_truth_layout([0.2, 0.3], [0.6, 0.8], 0.05);
        let l2 = ground_truth_layout([0.2, 0.3], [0.6, 0.8], 0.1);
        assert!((l2.scale() / l1.scale() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn generation_is_a_pure_function_of_seed() {
        let cfg = GeneratorConfig::default();
        let a = generate_scenes(&cfg, 5, 11).unwrap();
        let b = generate_scenes(&cfg, 3, 11).unwrap();
        assert_eq!(&a[..3], &b[..]);
        assert_ne!(a[0], generate_scenes(&cfg, 1, 12).unwrap()[0]);
    }

    #[test]
    fn instances_keep_their_shape() {
        let cfg = GeneratorConfig::default();
        assert_eq!(instance_shape(4, &cfg), instance_shape(4, &cfg));
        assert_ne!(instance_shape(4, &cfg), instance_shape(5, &cfg));
    }

    #[test]
    fn heatmap_examples() {
        let cfg = GeneratorConfig::default();
        let s = &generate_scenes(&cfg, 1, 3).unwrap()[0];
        let h1 = heatmap_for_scene(s, 0.1);
        assert!((h1.sum() - 1.0).abs() < 1e-9);
        assert_eq!(h1.argmax(), pixel_of(s.handle_point, 32, 32));
        let h2 = heatmap_for_scene(s, 0.2);
        assert!(entropy(&h2) > entropy(&h1));
        let point = heatmap_for_scene(s, 0.0);
        assert_eq!(point.max(), 1.0);
    }

    #[test]
    fn category_names_round_trip() {
        for c in Category::ALL {
            assert_eq!(c.name().parse::<Category>().unwrap(), c);
        }
        assert!("teapot".parse::<Category>().is_err());
    }
}
