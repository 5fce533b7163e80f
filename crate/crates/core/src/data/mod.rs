//! Datasets on disk, training triplets, match files and analytic synthetic scenes.

mod matches;
mod synthetic;

pub use matches::{parse_matches, read_matches, write_matches, MatchBlock, MatchTriple};
pub use synthetic::{
    preset, toy_match, GroundTruthSample, GroundTruthView, Preset, PresetScene, Primitive, Shape, SyntheticScene, Texture,
    PRESET_SIZE,
};

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::Vector3;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{fundamental_matrix_between, read_poses, relative_pose, write_poses, Intrinsics, Pose, PoseRecord};
use crate::imaging::{mask_rect_from_matches, read_pfm, read_png, write_pfm, write_png, DepthMap, Image, MaskRect};

/// Fewest matches a triplet may have.
pub const MIN_TRIPLET_MATCHES: usize = 8;
/// Largest point-to-epipolar-line distance, in pixels, of a consistent match.
pub const CONSISTENCY_PX: f64 = 1.0;

/// `true` for held-out image indices: every 8th image in sorted order.
pub fn is_test_index(k: usize) -> bool {
    k % 8 == 7
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str, path: &Path) -> Result<Vec<(usize, String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                msg: format!("expected key=value, found {line:?}"),
            });
        };
        out.push((i + 1, k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub(crate) fn parse_value<T: std::str::FromStr>(path: &Path, line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e: T::Err| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: format!("{key}: {e}"),
    })
}

/// Contents of `scene.cfg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SceneConfig {
    pub near: f64,
    pub far: f64,
    pub patch_size: Option<usize>,
    pub seed: Option<u64>,
}

impl SceneConfig {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let (mut near, mut far, mut patch_size, mut seed) = (None, None, None, None);
        for (line, k, v) in parse_key_values(&text, path)? {
            match k.as_str() {
                "near" => near = Some(parse_value(path, line, &k, &v)?),
                "far" => far = Some(parse_value(path, line, &k, &v)?),
                "patch_size" => patch_size = Some(parse_value(path, line, &k, &v)?),
                "seed" => seed = Some(parse_value(path, line, &k, &v)?),
                _ => {
                    return Err(Error::Parse {
                        path: path.to_path_buf(),
                        line,
                        msg: format!("unknown key {k:?}"),
                    })
                }
            }
        }
        let missing = |k: &str| Error::Dataset(format!("{}: missing {k}", path.display()));
        let cfg = Self {
            near: near.ok_or_else(|| missing("near"))?,
            far: far.ok_or_else(|| missing("far"))?,
            patch_size,
            seed,
        };
        if !(cfg.near >= 0.0 && cfg.far > cfg.near) {
            return Err(Error::Dataset(format!("{}: need 0 <= near < far", path.display())));
        }
        Ok(cfg)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut s = format!("near = {}\nfar = {}\n", self.near, self.far);
        if let Some(p) = self.patch_size {
            s += &format!("patch_size = {p}\n");
        }
        if let Some(seed) = self.seed {
            s += &format!("seed = {seed}\n");
        }
        std::fs::write(path, s)?;
        Ok(())
    }
}

/// Images with cameras, bounds, split and optional ground truth.
#[derive(Clone, Debug)]
pub struct SceneDataset {
    pub names: Vec<String>,
    pub images: Vec<Arc<Image>>,
    pub cameras: Vec<(Intrinsics, Pose)>,
    pub config: SceneConfig,
    pub depths: Option<Vec<DepthMap>>,
    pub match_blocks: Vec<MatchBlock>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl SceneDataset {
    pub fn new(
        names: Vec<String>,
        images: Vec<Image>,
        cameras: Vec<(Intrinsics, Pose)>,
        config: SceneConfig,
        depths: Option<Vec<DepthMap>>,
        match_blocks: Vec<MatchBlock>,
    ) -> Result<Self> {
        let n = names.len();
        if images.len() != n || cameras.len() != n || depths.as_ref().is_some_and(|d| d.len() != n) {
            return Err(Error::Dataset("names, images, cameras and depths differ in length".into()));
        }
        if n == 0 {
            return Err(Error::Dataset("no images".into()));
        }
        for (k, (img, (cam, _))) in images.iter().zip(&cameras).enumerate() {
            if img.width() != cam.width || img.height() != cam.height {
                return Err(Error::Dataset(format!("{}: image size does not match camera", names[k])));
            }
            if img.channels() != 3 {
                return Err(Error::Dataset(format!("{}: expected RGB", names[k])));
            }
            if let Some(d) = depths.as_ref().map(|d| &d[k]) {
                if d.width != img.width() || d.height != img.height() {
                    return Err(Error::Dataset(format!("{}: depth size does not match image", names[k])));
                }
            }
        }
        let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|k| is_test_index(*k));
        Ok(Self {
            names,
            images: images.into_iter().map(Arc::new).collect(),
            cameras,
            config,
            depths,
            match_blocks,
            train,
            test,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Writes the on-disk layout read by [`load_dataset`].
    pub fn write(&self, root: &Path) -> Result<()> {
        std::fs::create_dir_all(root.join("images"))?;
        let mut records = Vec::with_capacity(self.len());
        for (k, name) in self.names.iter().enumerate() {
            write_png(&root.join("images").join(name), &self.images[k])?;
            let (cam, pose) = &self.cameras[k];
            records.push(PoseRecord {
                name: name.clone(),
                pose: *pose,
                fx: cam.fx,
                fy: cam.fy,
                cx: cam.cx,
                cy: cam.cy,
            });
        }
        write_poses(&root.join("poses.txt"), &records)?;
        self.config.write(&root.join("scene.cfg"))?;
        if !self.match_blocks.is_empty() {
            write_matches(&root.join("matches.txt"), &self.match_blocks)?;
        }
        if let Some(depths) = &self.depths {
            std::fs::create_dir_all(root.join("depth"))?;
            for (name, d) in self.names.iter().zip(depths) {
                write_pfm(&depth_path(root, name), d.width, d.height, 1, &d.data)?;
            }
        }
        Ok(())
    }
}

fn depth_path(root: &Path, name: &str) -> PathBuf {
    let stem = Path::new(name).file_stem().and_then(|s| s.to_str()).unwrap_or(name);
    root.join("depth").join(format!("{stem}.pfm"))
}

fn to_rgb(img: Image) -> Result<Image> {
    match img.channels() {
        3 => Ok(img),
        1 => {
            let data = img.data().iter().flat_map(|v| [*v; 3]).collect();
            Image::new(img.width(), img.height(), 3, data)
        }
        c => Err(Error::Dataset(format!("unsupported channel count {c}"))),
    }
}

/// Loads `images/*.png`, `poses.txt`, `scene.cfg` and, when present,
/// `matches.txt` and `depth/*.pfm`.
pub fn load_dataset(root: &Path) -> Result<SceneDataset> {
    let img_dir = root.join("images");
    let mut names: Vec<String> = std::fs::read_dir(&img_dir)
        .map_err(|e| Error::Dataset(format!("{}: {e}", img_dir.display())))?
        .filter_map(|e| e.ok())
        .filter_map(|e| e.file_name().into_string().ok())
        .filter(|n| n.to_ascii_lowercase().ends_with(".png"))
        .collect();
    names.sort();
    if names.is_empty() {
        return Err(Error::Dataset(format!("no PNG images in {}", img_dir.display())));
    }
    let pose_path = root.join("poses.txt");
    if !pose_path.exists() {
        return Err(Error::Dataset(format!("missing {}", pose_path.display())));
    }
    let records: HashMap<String, PoseRecord> = read_poses(&pose_path)?.into_iter().map(|r| (r.name.clone(), r)).collect();
    let config = SceneConfig::read(&root.join("scene.cfg"))?;

    let mut images = Vec::with_capacity(names.len());
    let mut cameras = Vec::with_capacity(names.len());
    for name in &names {
        let img = read_png(&img_dir.join(name)).map_err(|e| Error::Dataset(format!("{name}: {e}")))?;
        let img = to_rgb(img)?;
        let rec = records
            .get(name)
            .ok_or_else(|| Error::Dataset(format!("{name}: no entry in poses.txt")))?;
        let cam = Intrinsics::new(rec.fx, rec.fy, rec.cx, rec.cy, img.width(), img.height())?;
        cameras.push((cam, rec.pose));
        images.push(img);
    }

    let depths = if root.join("depth").is_dir() {
        let mut out = Vec::with_capacity(names.len());
        for name in &names {
            let p = read_pfm(&depth_path(root, name))?;
            if p.channels != 1 {
                return Err(Error::Dataset(format!("{name}: depth must have one channel")));
            }
            out.push(DepthMap::new(p.width, p.height, p.data.iter().map(|v| *v as f64).collect())?);
        }
        Some(out)
    } else {
        None
    };

    let match_path = root.join("matches.txt");
    let blocks = if match_path.exists() {
        let sizes: HashMap<&str, (usize, usize)> = names
            .iter()
            .zip(&images)
            .map(|(n, i)| (n.as_str(), (i.width(), i.height())))
            .collect();
        read_matches(&match_path, |n| sizes.get(n).copied())?
    } else {
        Vec::new()
    };
    SceneDataset::new(names, images, cameras, config, depths, blocks)
}

/// A reference image, two overlapping images and their three-view matches.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainTriplet {
    pub ref_index: usize,
    pub i_index: usize,
    pub j_index: usize,
    pub matches: Vec<MatchTriple>,
    pub mask_rect: MaskRect,
}

impl TrainTriplet {
    pub fn indices(&self) -> [usize; 3] {
        [self.ref_index, self.i_index, self.j_index]
    }
}

fn line_distance(f: &nalgebra::Matrix3<f64>, a: [f64; 2], b: [f64; 2]) -> f64 {
    let l = f * Vector3::new(a[0], a[1], 1.0);
    let n = (l.x * l.x + l.y * l.y).sqrt();
    if n == 0.0 {
        return f64::INFINITY;
    }
    (l.x * b[0] + l.y * b[1] + l.z).abs() / n
}

/// Matches of `block` whose three pairs all lie within [`CONSISTENCY_PX`]
/// of each other's epipolar lines. Pairs without a baseline are not tested.
pub fn consistent_matches(ds: &SceneDataset, idx: [usize; 3], matches: &[MatchTriple]) -> Vec<MatchTriple> {
    let mut fs = Vec::new();
    for (a, b) in [(0, 1), (0, 2), (1, 2)] {
        let (ca, pa) = &ds.cameras[idx[a]];
        let (cb, pb) = &ds.cameras[idx[b]];
        let f = relative_pose(pa, pb).and_then(|rel| fundamental_matrix_between(ca, cb, &rel));
        if let Ok(f) = f {
            fs.push((a, b, f));
        }
    }
    matches
        .iter()
        .filter(|m| fs.iter().all(|(a, b, f)| line_distance(f, m[*a], m[*b]) <= CONSISTENCY_PX))
        .copied()
        .collect()
}

/// For every training image, the match block naming it as reference whose two
/// other (training) images share the most consistent matches. References
/// without a block of at least [`MIN_TRIPLET_MATCHES`] matches are skipped
/// with a warning.
pub fn build_triplets(ds: &SceneDataset, blocks: &[MatchBlock]) -> (Vec<TrainTriplet>, Vec<String>) {
    let mut triplets = Vec::new();
    let mut warnings = Vec::new();
    for &r in &ds.train {
        let mut best: Option<TrainTriplet> = None;
        for b in blocks.iter().filter(|b| b.names[0] == ds.names[r]) {
            let (Some(i), Some(j)) = (ds.index_of(&b.names[1]), ds.index_of(&b.names[2])) else {
                continue;
            };
            if i == r || j == r || i == j || !ds.train.contains(&i) || !ds.train.contains(&j) {
                continue;
            }
            let good = consistent_matches(ds, [r, i, j], &b.matches);
            if good.len() < MIN_TRIPLET_MATCHES || best.as_ref().is_some_and(|t| t.matches.len() >= good.len()) {
                continue;
            }
            let refs: Vec<[f64; 2]> = good.iter().map(|m| m[0]).collect();
            let img = &ds.images[r];
            let Ok(mask_rect) = mask_rect_from_matches(&refs, img.width(), img.height()) else {
                continue;
            };
            best = Some(TrainTriplet {
                ref_index: r,
                i_index: i,
                j_index: j,
                matches: good,
                mask_rect,
            });
        }
        match best {
            Some(t) => triplets.push(t),
            None => warnings.push(format!("{}: no triplet with {MIN_TRIPLET_MATCHES} or more matches", ds.names[r])),
        }
    }
    (triplets, warnings)
}

/// Rounds colors to the 8-bit levels a PNG stores.
fn quantize_u8(img: &Image) -> Image {
    let data = img.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0).collect();
    Image::new(img.width(), img.height(), img.channels(), data).expect("same shape")
}

/// Points sampled per candidate triplet when generating match files.
pub const SYNTHETIC_MATCH_POINTS: usize = 300;

/// Ground-truth images, depths and toy matches for every ordered training
/// reference and unordered pair of other training images.
pub fn synthesize(p: Preset, seed: u64) -> Result<(SceneDataset, SyntheticScene)> {
    let ps = preset(p)?;
    let n = ps.cameras.len();
    let names: Vec<String> = (0..n).map(|k| format!("img_{k:03}.png")).collect();
    let mut images = Vec::with_capacity(n);
    let mut depths = Vec::with_capacity(n);
    for (cam, pose) in &ps.cameras {
        let gt = ps.scene.render_ground_truth(cam, pose)?;
        images.push(quantize_u8(&gt.image));
        // f32 like the PFM files, so memory and disk agree
        let d = gt.depth.data.iter().map(|v| *v as f32 as f64).collect();
        depths.push(DepthMap::new(gt.depth.width, gt.depth.height, d)?);
    }
    let train: Vec<usize> = (0..n).filter(|k| !is_test_index(*k)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut blocks = Vec::new();
    for &r in &train {
        for (a, &i) in train.iter().enumerate() {
            for &j in &train[a + 1..] {
                if i == r || j == r {
                    continue;
                }
                let cams = [ps.cameras[r], ps.cameras[i], ps.cameras[j]];
                let matches = toy_match(&ps.scene, &cams, SYNTHETIC_MATCH_POINTS, 0.0, &mut rng);
                blocks.push(MatchBlock {
                    names: [names[r].clone(), names[i].clone(), names[j].clone()],
                    matches,
                });
            }
        }
    }
    let config = SceneConfig {
        near: ps.scene.near,
        far: ps.scene.far,
        patch_size: Some(8),
        seed: Some(seed),
    };
    let ds = SceneDataset::new(names, images, ps.cameras.clone(), config, Some(depths), blocks)?;
    Ok((ds, ps.scene))
}
