//! TUM RGB-D sequence directories: file lists, timestamp association,
//! 16-bit depth images and ground truth.

use std::fs;
use std::path::{Path, PathBuf};

use image::{ColorType, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::evaluation::{parse_pose_fields, Trajectory};
use crate::geometry::{CameraIntrinsics, PoseSE3};
use crate::imaging::{to_gray, DepthImage, GrayImage};
use crate::sequence::FrameSource;
use crate::tracker::Frame;

/// Raw depth units per meter in TUM depth PNGs.
pub const TUM_DEPTH_SCALE: f64 = 5000.0;

/// Default maximum timestamp difference for association, in seconds.
pub const DEFAULT_MAX_DIFFERENCE: f64 = 0.02;

/// Parsed file lists of a sequence directory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SequenceIndex {
    pub root: PathBuf,
    pub rgb: Vec<(f64, PathBuf)>,
    pub depth: Vec<(f64, PathBuf)>,
    pub groundtruth: Option<Trajectory>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssociatedFrame {
    pub rgb_timestamp: f64,
    pub depth_timestamp: f64,
    pub rgb_path: PathBuf,
    pub depth_path: PathBuf,
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines().enumerate().filter_map(|(n, line)| {
        let content = line.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then_some((n + 1, content))
    })
}

fn read_text(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses a `timestamp path` list, resolving paths against `root`.
pub fn parse_file_list(text: &str, path: &Path, root: &Path) -> Result<Vec<(f64, PathBuf)>> {
    let mut entries: Vec<(f64, PathBuf)> = Vec::new();
    for (line, content) in content_lines(text) {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(err(format!("expected 'timestamp path', found {} fields", fields.len())));
        }
        let t: f64 = fields[0]
            .parse()
            .ok()
            .filter(|t: &f64| t.is_finite())
            .ok_or_else(|| err(format!("invalid timestamp '{}'", fields[0])))?;
        if let Some((last, _)) = entries.last() {
            if !(t > *last) {
                return Err(err(format!("timestamp {t} does not increase past {last}")));
            }
        }
        entries.push((t, root.join(fields[1])));
    }
    Ok(entries)
}

/// Parses `timestamp tx ty tz qx qy qz qw` ground truth; quaternions are
/// normalized.
pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Trajectory> {
    let mut traj = Trajectory::default();
    for (line, content) in content_lines(text) {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let fields: Vec<&str> = content.split_whitespace().collect();
        let (t, pose) = parse_pose_fields(&fields).map_err(err)?;
        traj.push(t, pose).map_err(|e| err(e.to_string()))?;
    }
    Ok(traj)
}

/// Reads `rgb.txt`, `depth.txt` and, if present, `groundtruth.txt`.
pub fn parse_sequence(dir: &Path) -> Result<SequenceIndex> {
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let list = |name: &str| -> Result<Vec<(f64, PathBuf)>> {
        let path = dir.join(name);
        parse_file_list(&read_text(&path)?, &path, dir)
    };
    let gt_path = dir.join("groundtruth.txt");
    let groundtruth = if gt_path.is_file() {
        Some(parse_groundtruth(&read_text(&gt_path)?, &gt_path)?)
    } else {
        None
    };
    Ok(SequenceIndex {
        root: dir.to_path_buf(),
        rgb: list("rgb.txt")?,
        depth: list("depth.txt")?,
        groundtruth,
    })
}

/// Greedy matching on timestamp difference: candidate pairs within
/// `max_difference` are taken in order of increasing difference, each
/// entry at most once. Returned pairs are `(index in a, index in b)`
/// sorted by the first index. Both inputs must be sorted ascending.
pub fn associate_timestamps(a: &[f64], b: &[f64], max_difference: f64) -> Vec<(usize, usize)> {
    let mut candidates = Vec::new();
    let mut start = 0;
    for (i, &ta) in a.iter().enumerate() {
        while start < b.len() && ta - b[start] > max_difference {
            start += 1;
        }
        for (j, &tb) in b.iter().enumerate().skip(start) {
            if tb - ta > max_difference {
                break;
            }
            let diff = (ta - tb).abs();
            if diff <= max_difference {
                candidates.push((diff, ta + tb, i, j));
            }
        }
    }
    // The secondary key only depends on the two timestamps, so swapping the
    // roles of `a` and `b` selects the same pairs even under ties.
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut pairs = Vec::new();
    for (_, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            pairs.push((i, j));
        }
    }
    pairs.sort_unstable();
    pairs
}

/// Pairs RGB and depth images by timestamp.
pub fn associate(index: &SequenceIndex, max_difference: f64) -> Result<Vec<AssociatedFrame>> {
    if !(max_difference > 0.0) {
        return Err(Error::InvalidArgument("max_difference must be > 0".into()));
    }
    let rgb_t: Vec<f64> = index.rgb.iter().map(|e| e.0).collect();
    let depth_t: Vec<f64> = index.depth.iter().map(|e| e.0).collect();
    let pairs = associate_timestamps(&rgb_t, &depth_t, max_difference);
    if pairs.is_empty() {
        return Err(Error::NoOverlap);
    }
    Ok(pairs
        .into_iter()
        .map(|(i, j)| AssociatedFrame {
            rgb_timestamp: index.rgb[i].0,
            depth_timestamp: index.depth[j].0,
            rgb_path: index.rgb[i].1.clone(),
            depth_path: index.depth[j].1.clone(),
        })
        .collect())
}

/// Nearest ground-truth pose within `max_difference` of `t`.
pub fn groundtruth_pose_at(index: &SequenceIndex, t: f64, max_difference: f64) -> Option<PoseSE3> {
    let entries = index.groundtruth.as_ref()?.entries();
    let pos = entries.partition_point(|e| e.0 < t);
    [pos.checked_sub(1), (pos < entries.len()).then_some(pos)]
        .into_iter()
        .flatten()
        .map(|i| entries[i])
        .filter(|e| (e.0 - t).abs() <= max_difference)
        .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
        .map(|e| e.1)
}

fn open_image(path: &Path) -> Result<image::DynamicImage> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    image::open(path).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })
}

/// Raw 16-bit depth value to meters; 0 stays 0 (invalid).
pub fn decode_depth(raw: u16, scale: f64) -> f64 {
    raw as f64 / scale
}

/// Meters to the nearest raw 16-bit value, saturating.
pub fn encode_depth(meters: f64, scale: f64) -> u16 {
    if !(meters > 0.0) {
        return 0;
    }
    (meters * scale).round().clamp(0.0, u16::MAX as f64) as u16
}

/// Reads a 16-bit single-channel depth PNG, dividing raw values by `scale`.
pub fn read_depth_scaled(path: &Path, scale: f64) -> Result<DepthImage> {
    let img = open_image(path)?;
    if img.color() != ColorType::L16 {
        return Err(Error::ImageFormat {
            path: path.to_path_buf(),
            message: format!("expected 16-bit single-channel depth, found {:?}", img.color()),
        });
    }
    let buf = img.into_luma16();
    let (w, h) = (buf.width() as usize, buf.height() as usize);
    DepthImage::new(w, h, buf.into_raw().into_iter().map(|r| decode_depth(r, scale)).collect())
}

pub fn read_depth(path: &Path) -> Result<DepthImage> {
    read_depth_scaled(path, TUM_DEPTH_SCALE)
}

pub fn write_depth_scaled(depth: &DepthImage, path: &Path, scale: f64) -> Result<()> {
    let (w, h) = depth.dims();
    let raw: Vec<u16> = depth.data().iter().map(|&z| encode_depth(z, scale)).collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(w as u32, h as u32, raw).expect("buffer length matches dimensions");
    buf.save(path).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_depth(depth: &DepthImage, path: &Path) -> Result<()> {
    write_depth_scaled(depth, path, TUM_DEPTH_SCALE)
}

/// Reads a color or grayscale image as luminance in [0, 1].
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let rgb = open_image(path)?.into_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    to_gray(w, h, rgb.as_raw())
}

/// Parses `camera.txt`: whitespace-separated `key value` lines with keys
/// `fx fy cx cy width height`.
pub fn parse_camera_file(text: &str, path: &Path) -> Result<CameraIntrinsics> {
    let mut k = CameraIntrinsics::tum_default();
    for (line, content) in content_lines(text) {
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            message,
        };
        let (key, value) = content
            .split_once(|c: char| c.is_whitespace() || c == '=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err("expected 'key value'".into()))?;
        let num: f64 = value.parse().map_err(|_| err(format!("invalid number '{value}'")))?;
        match key {
            "fx" => k.fx = num,
            "fy" => k.fy = num,
            "cx" => k.cx = num,
            "cy" => k.cy = num,
            "width" => k.width = num as usize,
            "height" => k.height = num as usize,
            other => return Err(err(format!("unknown key '{other}'"))),
        }
    }
    k.validate()?;
    Ok(k)
}

pub fn format_camera_file(k: &CameraIntrinsics) -> String {
    format!(
        "fx {}\nfy {}\ncx {}\ncy {}\nwidth {}\nheight {}\n",
        k.fx, k.fy, k.cx, k.cy, k.width, k.height
    )
}

/// Intrinsics for a sequence directory: `camera.txt` if present, else the
/// calibrated preset matching a `freiburgN` directory name, else the
/// generic default.
pub fn detect_intrinsics(dir: &Path) -> Result<CameraIntrinsics> {
    let camera = dir.join("camera.txt");
    if camera.is_file() {
        return parse_camera_file(&read_text(&camera)?, &camera);
    }
    let name = dir
        .canonicalize()
        .unwrap_or_else(|_| dir.to_path_buf())
        .file_name()
        .map(|n| n.to_string_lossy().to_lowercase())
        .unwrap_or_default();
    Ok(if name.contains("freiburg1") || name.contains("fr1") {
        CameraIntrinsics::tum_freiburg1()
    } else if name.contains("freiburg2") || name.contains("fr2") {
        CameraIntrinsics::tum_freiburg2()
    } else if name.contains("freiburg3") || name.contains("fr3") {
        CameraIntrinsics::tum_freiburg3()
    } else {
        CameraIntrinsics::tum_default()
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetOptions {
    pub max_difference: f64,
    pub depth_scale: f64,
    /// Overrides intrinsics detection.
    pub intrinsics: Option<CameraIntrinsics>,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        Self {
            max_difference: DEFAULT_MAX_DIFFERENCE,
            depth_scale: TUM_DEPTH_SCALE,
            intrinsics: None,
        }
    }
}

/// A sequence directory opened for tracking; images load on demand.
#[derive(Debug, Clone)]
pub struct TumSequence {
    pub index: SequenceIndex,
    pub frames: Vec<AssociatedFrame>,
    pub intrinsics: CameraIntrinsics,
    pub depth_scale: f64,
}

impl TumSequence {
    pub fn open(dir: &Path, options: &DatasetOptions) -> Result<Self> {
        let index = parse_sequence(dir)?;
        let frames = associate(&index, options.max_difference)?;
        let intrinsics = match options.intrinsics {
            Some(k) => k,
            None => detect_intrinsics(dir)?,
        };
        Ok(Self {
            index,
            frames,
            intrinsics,
            depth_scale: options.depth_scale,
        })
    }
}

impl FrameSource for TumSequence {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn intrinsics(&self) -> CameraIntrinsics {
        self.intrinsics
    }

    fn timestamp(&self, index: usize) -> f64 {
        self.frames[index].rgb_timestamp
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let entry = self
            .frames
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("frame index {index} out of range")))?;
        let gray = read_gray(&entry.rgb_path)?;
        let depth = read_depth_scaled(&entry.depth_path, self.depth_scale)?;
        Frame::new(entry.rgb_timestamp, gray, depth)
    }

    fn groundtruth(&self) -> Option<&Trajectory> {
        self.index.groundtruth.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use proptest::prelude::*;

    /// All-pairs oracle for the greedy association.
    fn brute_force(a: &[f64], b: &[f64], max: f64) -> Vec<(usize, usize)> {
        let mut all: Vec<(f64, f64, usize, usize)> = Vec::new();
        for (i, ta) in a.iter().enumerate() {
            for (j, tb) in b.iter().enumerate() {
                if (ta - tb).abs() <= max {
                    all.push(((ta - tb).abs(), ta + tb, i, j));
                }
            }
        }
        all.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));
        let mut out = Vec::new();
        for (_, _, i, j) in all {
            if out.iter().all(|&(a, b)| a != i && b != j) {
                out.push((i, j));
            }
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn association_examples() {
        let t = [0.0, 0.1, 0.2];
        assert_eq!(associate_timestamps(&t, &t, 0.02), vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(associate_timestamps(&[0.0, 0.033], &[0.01, 0.04], 0.02), vec![(0, 0), (1, 1)]);
        assert!(associate_timestamps(&[0.0], &[0.5], 0.02).is_empty());
    }

    #[test]
    fn associate_reports_no_overlap() {
        let index = SequenceIndex {
            rgb: vec![(0.0, "a.png".into())],
            depth: vec![(0.5, "b.png".into())],
            ..Default::default()
        };
        assert!(matches!(associate(&index, 0.02), Err(Error::NoOverlap)));
    }

    fn sorted_times(v: Vec<u16>) -> Vec<f64> {
        let mut v: Vec<u16> = v;
        v.sort_unstable();
        v.dedup();
        v.into_iter().map(|x| x as f64 * 0.005).collect()
    }

    proptest! {
        #[test]
        fn association_matches_oracle_and_is_symmetric(
            a in prop::collection::vec(0u16..400, 0..40),
            b in prop::collection::vec(0u16..400, 0..40),
        ) {
            let (a, b) = (sorted_times(a), sorted_times(b));
            let ab = associate_timestamps(&a, &b, 0.02);
            prop_assert_eq!(&ab, &brute_force(&a, &b, 0.02));
            let mut ba: Vec<(usize, usize)> =
                associate_timestamps(&b, &a, 0.02).into_iter().map(|(j, i)| (i, j)).collect();
            ba.sort_unstable();
            prop_assert_eq!(&ab, &ba);
            for (i, j) in ab {
                prop_assert!((a[i] - b[j]).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn file_list_parsing() {
        let root = Path::new("/data/seq");
        let list = parse_file_list("# only comments\n# here\n", Path::new("rgb.txt"), root).unwrap();
        assert!(list.is_empty());
        let list = parse_file_list(
            "# color images\n1305031102.175304 rgb/1305031102.175304.png\n",
            Path::new("rgb.txt"),
            root,
        )
        .unwrap();
        assert_eq!(list, vec![(1305031102.175304, root.join("rgb/1305031102.175304.png"))]);

        let bad = parse_file_list("1.0 a.png\nfoo b.png\n", Path::new("rgb.txt"), root);
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
        let bad = parse_file_list("2.0 a.png\n1.0 b.png\n", Path::new("rgb.txt"), root);
        assert!(matches!(bad, Err(Error::Parse { line: 2, .. })));
        let bad = parse_file_list("1.0\n", Path::new("rgb.txt"), root);
        assert!(matches!(bad, Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn groundtruth_quaternion_is_normalized() {
        let s = 0.999f64.sqrt() / 2f64.sqrt();
        let text = format!("1.0 0.1 0.2 0.3 {s} 0 0 {s}\n");
        let traj = parse_groundtruth(&text, Path::new("gt.txt")).unwrap();
        let r = traj.entries()[0].1.rotation;
        assert!((r.transpose() * r - nalgebra::Matrix3::identity()).amax() < 1e-12);
        let q = traj.entries()[0].1.quaternion();
        let norm = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn groundtruth_lookup() {
        let traj = Trajectory::new(
            [0.0, 0.01, 0.02, 1.0, 1.01]
                .iter()
                .map(|&t| (t, PoseSE3::from_translation(Vector3::new(t, 0.0, 0.0))))
                .collect(),
        )
        .unwrap();
        let index = SequenceIndex {
            groundtruth: Some(traj.clone()),
            ..Default::default()
        };
        assert_eq!(groundtruth_pose_at(&index, 0.01, 0.02).unwrap().translation.x, 0.01);
        assert!(groundtruth_pose_at(&index, 0.5, 0.02).is_none());
        // Linear scan oracle for points between entries.
        for k in 0..120 {
            let t = k as f64 * 0.0093;
            let want = traj
                .entries()
                .iter()
                .filter(|e| (e.0 - t).abs() <= 0.02)
                .min_by(|a, b| (a.0 - t).abs().total_cmp(&(b.0 - t).abs()))
                .map(|e| e.1);
            assert_eq!(groundtruth_pose_at(&index, t, 0.02), want);
        }
        assert!(groundtruth_pose_at(&SequenceIndex::default(), 0.0, 0.02).is_none());
    }

    #[test]
    fn depth_decoding_constants() {
        assert_eq!(decode_depth(5000, TUM_DEPTH_SCALE), 1.0);
        assert_eq!(decode_depth(0, TUM_DEPTH_SCALE), 0.0);
        assert!((decode_depth(65535, TUM_DEPTH_SCALE) - 13.107).abs() < 1e-12);
        for raw in 0..=u16::MAX {
            assert_eq!(encode_depth(decode_depth(raw, TUM_DEPTH_SCALE), TUM_DEPTH_SCALE), raw);
        }
    }

    #[test]
    fn depth_png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.png");
        let raw: Vec<u16> = (0..64u32 * 48).map(|i| (i * 21 % 65536) as u16).collect();
        let depth = DepthImage::new(64, 48, raw.iter().map(|&r| decode_depth(r, TUM_DEPTH_SCALE)).collect()).unwrap();
        write_depth(&depth, &path).unwrap();
        let back = read_depth(&path).unwrap();
        assert_eq!(back, depth);

        let rgb_path = dir.path().join("c.png");
        image::RgbImage::from_pixel(4, 4, image::Rgb([255, 0, 0])).save(&rgb_path).unwrap();
        assert!(matches!(read_depth(&rgb_path), Err(Error::ImageFormat { .. })));
        let gray = read_gray(&rgb_path).unwrap();
        assert!((gray.get(0, 0) - 0.299).abs() < 1e-12);
        assert!(matches!(read_depth(&dir.path().join("none.png")), Err(Error::MissingFile(_))));
    }

    #[test]
    fn camera_file_and_detection() {
        let dir = tempfile::tempdir().unwrap();
        let seq = dir.path().join("rgbd_dataset_freiburg1_xyz");
        fs::create_dir(&seq).unwrap();
        assert_eq!(detect_intrinsics(&seq).unwrap(), CameraIntrinsics::tum_freiburg1());
        assert_eq!(detect_intrinsics(dir.path()).unwrap(), CameraIntrinsics::tum_default());
        let k = CameraIntrinsics::new(100.0, 101.0, 79.5, 59.5, 160, 120).unwrap();
        fs::write(seq.join("camera.txt"), format_camera_file(&k)).unwrap();
        assert_eq!(detect_intrinsics(&seq).unwrap(), k);
        assert!(parse_camera_file("fx abc\n", Path::new("camera.txt")).is_err());
        assert!(parse_camera_file("zoom 3\n", Path::new("camera.txt")).is_err());
    }

    #[test]
    fn missing_lists_are_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(parse_sequence(dir.path()), Err(Error::MissingFile(_))));
        assert!(matches!(parse_sequence(&dir.path().join("nope")), Err(Error::MissingFile(_))));
    }
}
