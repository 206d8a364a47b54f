//! Readers and writers for KITTI-layout files plus the dims-augmented 2D
//! detection input format.
//!
//! * velodyne `.bin`: packed little-endian `f32` quadruples `(x, y, z, reflectance)`
//! * calib `.txt`: `KEY: v1 v2 ...` rows; `P2`, `R0_rect` and `Tr_velo_to_cam` are required
//! * label / result `.txt`: `type trunc occ alpha u1 v1 u2 v2 h w l x y z ry [score]`
//! * 2D detection input `.txt`: `u_min v_min u_max v_max confidence h l w`
//!
//! Floats are written with six decimals.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::detection::Detection;
use crate::geometry::{wrap_angle, Box2, Box3, Calibration, GeometryError, PointCloud, Vec3};

#[derive(Debug, Error)]
pub enum KittiError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: size {len} is not a multiple of 16 bytes")]
    TruncatedFile { path: PathBuf, len: usize },
    #[error("missing calibration key {0}")]
    MissingKey(String),
    #[error("line {line}: malformed number {token:?}")]
    MalformedNumber { line: usize, token: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    FieldCountMismatch { line: usize, expected: usize, found: usize },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> KittiError + '_ {
    move |source| KittiError::Io { path: path.to_path_buf(), source }
}

fn parse_num(tok: &str, line: usize) -> Result<f64, KittiError> {
    tok.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| KittiError::MalformedNumber { line, token: tok.to_string() })
}

/// Decode packed velodyne bytes.
pub fn decode_velodyne(bytes: &[u8]) -> Option<PointCloud> {
    if !bytes.len().is_multiple_of(16) {
        return None;
    }
    let mut cloud = PointCloud::new();
    cloud.points.reserve(bytes.len() / 16);
    for chunk in bytes.chunks_exact(16) {
        let f = |i: usize| f32::from_le_bytes([chunk[i], chunk[i + 1], chunk[i + 2], chunk[i + 3]]) as f64;
        cloud.push(Vec3::new(f(0), f(4), f(8)), f(12));
    }
    Some(cloud)
}

pub fn encode_velodyne(cloud: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(cloud.len() * 16);
    for p in &cloud.points {
        for v in [p.pos.x, p.pos.y, p.pos.z, p.reflectance] {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

/// Non-finite values decode as-is; callers that need finite coordinates filter with
/// [`PointCloud::positions`] and [`Vec3::is_finite`].
pub fn load_velodyne(path: impl AsRef<Path>) -> Result<PointCloud, KittiError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_velodyne(&bytes).ok_or(KittiError::TruncatedFile { path: path.to_path_buf(), len: bytes.len() })
}

pub fn write_velodyne(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<(), KittiError> {
    let path = path.as_ref();
    fs::write(path, encode_velodyne(cloud)).map_err(io_err(path))
}

pub fn parse_calib(text: &str) -> Result<Calibration, KittiError> {
    let mut rows: HashMap<&str, Vec<f64>> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let Some((key, rest)) = line.split_once(':') else { continue };
        let vals = rest.split_whitespace().map(|t| parse_num(t, i + 1)).collect::<Result<Vec<_>, _>>()?;
        rows.insert(key.trim(), vals);
    }
    let take = |key: &str, n: usize| -> Result<Vec<f64>, KittiError> {
        let v = rows.get(key).ok_or_else(|| KittiError::MissingKey(key.to_string()))?;
        if v.len() != n {
            return Err(KittiError::FieldCountMismatch { line: 0, expected: n, found: v.len() });
        }
        Ok(v.clone())
    };
    let p = take("P2", 12)?;
    let r0 = take("R0_rect", 9)?;
    let tr = take("Tr_velo_to_cam", 12)?;
    let proj = [
        [p[0], p[1], p[2], p[3]],
        [p[4], p[5], p[6], p[7]],
        [p[8], p[9], p[10], p[11]],
    ];
    let rect = [[r0[0], r0[1], r0[2]], [r0[3], r0[4], r0[5]], [r0[6], r0[7], r0[8]]];
    let rot = [[tr[0], tr[1], tr[2]], [tr[4], tr[5], tr[6]], [tr[8], tr[9], tr[10]]];
    let t = Vec3::new(tr[3], tr[7], tr[11]);
    Ok(Calibration::new(proj, rot, t, rect)?)
}

pub fn load_calib(path: impl AsRef<Path>) -> Result<Calibration, KittiError> {
    let path = path.as_ref();
    parse_calib(&fs::read_to_string(path).map_err(io_err(path))?)
}

fn join_row(vals: &[f64]) -> String {
    vals.iter().map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
}

pub fn format_calib(c: &Calibration) -> String {
    let p: Vec<f64> = c.cam_projection.iter().flatten().copied().collect();
    let r0: Vec<f64> = c.rectification.iter().flatten().copied().collect();
    let t = [c.translation.x, c.translation.y, c.translation.z];
    let tr: Vec<f64> = (0..3).flat_map(|r| [c.rotation[r][0], c.rotation[r][1], c.rotation[r][2], t[r]]).collect();
    format!("P2: {}\nR0_rect: {}\nTr_velo_to_cam: {}\n", join_row(&p), join_row(&r0), join_row(&tr))
}

pub fn write_calib(path: impl AsRef<Path>, c: &Calibration) -> Result<(), KittiError> {
    let path = path.as_ref();
    fs::write(path, format_calib(c)).map_err(io_err(path))
}

/// One KITTI label or result line. `location` is the bottom-face center in the
/// rectified camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelRecord {
    pub class: String,
    pub truncation: f64,
    pub occlusion: i32,
    pub alpha: f64,
    pub box2: Box2,
    pub h: f64,
    pub l: f64,
    pub w: f64,
    pub location: Vec3,
    pub rotation_y: f64,
    pub score: Option<f64>,
}

impl LabelRecord {
    /// Box in a gravity-aligned frame derived from the camera frame alone
    /// (`x` = cam x, `y` = cam z, `z` = −cam y). IoU is frame-invariant, so evaluation uses this.
    pub fn to_eval_box(&self) -> Result<Box3, GeometryError> {
        let c = Vec3::new(self.location.x, self.location.z, -self.location.y + 0.5 * self.h);
        Box3::new(c, self.h, self.l, self.w, -self.rotation_y)
    }

    /// Box in the LiDAR frame of `calib`.
    pub fn to_lidar_box(&self, calib: &Calibration) -> Result<Box3, GeometryError> {
        let center_rect = self.location + Vec3::new(0.0, -0.5 * self.h, 0.0);
        let center = calib.rect_to_lidar(center_rect);
        let d = calib.rect_dir_to_lidar(Vec3::new(self.rotation_y.cos(), 0.0, -self.rotation_y.sin()));
        Box3::new(center, self.h, self.l, self.w, d.y.atan2(d.x))
    }

    /// Build a record from a LiDAR-frame box; `box2` is the projected tight box.
    pub fn from_lidar_box(class: &str, b: &Box3, calib: &Calibration, score: Option<f64>) -> Result<Self, GeometryError> {
        let center_rect = calib.lidar_to_rect(b.center);
        let location = center_rect + Vec3::new(0.0, 0.5 * b.h, 0.0);
        let d = calib.lidar_dir_to_rect(b.heading());
        let rotation_y = wrap_angle((-d.z).atan2(d.x));
        let alpha = wrap_angle(rotation_y - location.x.atan2(location.z));
        let box2 = calib
            .project_box(b)
            .ok_or(GeometryError::BehindCamera(center_rect.z))?;
        Ok(Self {
            class: class.to_string(),
            truncation: 0.0,
            occlusion: 0,
            alpha,
            box2,
            h: b.h,
            l: b.l,
            w: b.w,
            location,
            rotation_y,
            score,
        })
    }
}

pub fn parse_labels(text: &str) -> Result<Vec<LabelRecord>, KittiError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let n = i + 1;
        if toks.len() != 15 && toks.len() != 16 {
            return Err(KittiError::FieldCountMismatch { line: n, expected: 15, found: toks.len() });
        }
        let f = |k: usize| parse_num(toks[k], n);
        let occlusion = toks[2]
            .parse::<i32>()
            .map_err(|_| KittiError::MalformedNumber { line: n, token: toks[2].to_string() })?;
        out.push(LabelRecord {
            class: toks[0].to_string(),
            truncation: f(1)?,
            occlusion,
            alpha: f(3)?,
            box2: Box2 { u_min: f(4)?, v_min: f(5)?, u_max: f(6)?, v_max: f(7)? },
            h: f(8)?,
            w: f(9)?,
            l: f(10)?,
            location: Vec3::new(f(11)?, f(12)?, f(13)?),
            rotation_y: f(14)?,
            score: if toks.len() == 16 { Some(f(15)?) } else { None },
        });
    }
    Ok(out)
}

pub fn format_labels(records: &[LabelRecord]) -> String {
    let mut s = String::new();
    for r in records {
        let _ = write!(
            s,
            "{} {:.6} {} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            r.class,
            r.truncation,
            r.occlusion,
            r.alpha,
            r.box2.u_min,
            r.box2.v_min,
            r.box2.u_max,
            r.box2.v_max,
            r.h,
            r.w,
            r.l,
            r.location.x,
            r.location.y,
            r.location.z,
            r.rotation_y
        );
        if let Some(sc) = r.score {
            let _ = write!(s, " {sc:.6}");
        }
        s.push('\n');
    }
    s
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<Vec<LabelRecord>, KittiError> {
    let path = path.as_ref();
    parse_labels(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_labels(path: impl AsRef<Path>, records: &[LabelRecord]) -> Result<(), KittiError> {
    let path = path.as_ref();
    fs::write(path, format_labels(records)).map_err(io_err(path))
}

/// KITTI result lines for `dets`; every detection is reported as class `Car`.
pub fn detections_to_records(dets: &[Detection], calib: &Calibration) -> Result<Vec<LabelRecord>, KittiError> {
    dets.iter()
        .map(|d| LabelRecord::from_lidar_box("Car", &d.bbox, calib, Some(d.score)).map_err(KittiError::from))
        .collect()
}

pub fn write_detections(path: impl AsRef<Path>, dets: &[Detection], calib: &Calibration) -> Result<(), KittiError> {
    write_labels(path, &detections_to_records(dets, calib)?)
}

/// A 2D detection carrying decoded dimension estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection2DInput {
    pub box2: Box2,
    pub confidence: f64,
    pub dims: [f64; 3],
}

pub fn parse_detections(text: &str) -> Result<Vec<Detection2DInput>, KittiError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        let n = i + 1;
        if toks.len() != 8 {
            return Err(KittiError::FieldCountMismatch { line: n, expected: 8, found: toks.len() });
        }
        let v = toks.iter().map(|t| parse_num(t, n)).collect::<Result<Vec<_>, _>>()?;
        let box2 = Box2::new(v[0], v[1], v[2], v[3])?;
        if !(0.0..=1.0).contains(&v[4]) {
            return Err(KittiError::MalformedNumber { line: n, token: toks[4].to_string() });
        }
        if v[5..].iter().any(|d| *d <= 0.0) {
            return Err(GeometryError::InvalidBox(format!("line {n}: dimensions must be positive")).into());
        }
        out.push(Detection2DInput { box2, confidence: v[4], dims: [v[5], v[6], v[7]] });
    }
    Ok(out)
}

pub fn format_detections_2d(dets: &[Detection2DInput]) -> String {
    let mut s = String::new();
    for d in dets {
        let _ = writeln!(
            s,
            "{:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6} {:.6}",
            d.box2.u_min, d.box2.v_min, d.box2.u_max, d.box2.v_max, d.confidence, d.dims[0], d.dims[1], d.dims[2]
        );
    }
    s
}

pub fn load_detections(path: impl AsRef<Path>) -> Result<Vec<Detection2DInput>, KittiError> {
    let path = path.as_ref();
    parse_detections(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub fn write_detections_2d(path: impl AsRef<Path>, dets: &[Detection2DInput]) -> Result<(), KittiError> {
    let path = path.as_ref();
    fs::write(path, format_detections_2d(dets)).map_err(io_err(path))
}

/// Scene ids listed one per line; blank lines and `#` comments are skipped.
pub fn load_split(path: impl AsRef<Path>) -> Result<Vec<String>, KittiError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const GOLDEN: &str = "P0: 7.215377e+02 0.000000e+00 6.095593e+02 0.000000e+00 0.000000e+00 7.215377e+02 1.728540e+02 0.000000e+00 0.000000e+00 0.000000e+00 1.000000e+00 0.000000e+00
P2: 7.215377e+02 0.000000e+00 6.095593e+02 4.485728e+01 0.000000e+00 7.215377e+02 1.728540e+02 2.163791e-01 0.000000e+00 0.000000e+00 1.000000e+00 2.745884e-03
R0_rect: 1 0 0 0 1 0 0 0 1
Tr_velo_to_cam: 0 -1 0 -4.069766e-03 0 0 -1 -7.631618e-02 1 0 0 -2.717806e-01
";

    #[test]
    fn velodyne_hand_bytes() {
        // 1.0 = 0x3f800000, 2.0 = 0x40000000, 3.0 = 0x40400000, 0.5 = 0x3f000000
        let bytes = [
            0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0x40, 0x00, 0x00, 0x40, 0x40, 0x00, 0x00, 0x00, 0x3f,
        ];
        let c = decode_velodyne(&bytes).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c.points[0].pos, Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(c.points[0].reflectance, 0.5);
        assert!(decode_velodyne(&[]).unwrap().is_empty());
    }

    #[test]
    fn velodyne_truncated_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        fs::write(&p, [0u8; 20]).unwrap();
        assert!(matches!(load_velodyne(&p), Err(KittiError::TruncatedFile { len: 20, .. })));
        fs::write(&p, []).unwrap();
        assert!(load_velodyne(&p).unwrap().is_empty());
    }

    #[test]
    fn calib_golden_parse() {
        let c = parse_calib(GOLDEN).unwrap();
        assert_eq!(c.cam_projection[0], [721.5377, 0.0, 609.5593, 44.85728]);
        assert_eq!(c.cam_projection[2][3], 2.745884e-03);
        assert_eq!(c.rotation[2], [1.0, 0.0, 0.0]);
        assert_eq!(c.translation, Vec3::new(-4.069766e-03, -7.631618e-02, -2.717806e-01));
    }

    #[test]
    fn calib_identity_and_missing() {
        let txt = "P2: 1 0 0 0 0 1 0 0 0 0 1 0\nR0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        let c = parse_calib(txt).unwrap();
        let p = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(c.lidar_to_rect(p), p);
        let missing = "R0_rect: 1 0 0 0 1 0 0 0 1\nTr_velo_to_cam: 1 0 0 0 0 1 0 0 0 0 1 0\n";
        assert!(matches!(parse_calib(missing), Err(KittiError::MissingKey(k)) if k == "P2"));
        let bad = txt.replace("P2: 1", "P2: x");
        assert!(matches!(parse_calib(&bad), Err(KittiError::MalformedNumber { .. })));
    }

    #[test]
    fn calib_format_round_trip() {
        let c = parse_calib(GOLDEN).unwrap();
        assert_eq!(parse_calib(&format_calib(&c)).unwrap(), c);
    }

    #[test]
    fn labels_field_count() {
        assert!(parse_labels("").unwrap().is_empty());
        let line = "Car 0.00 0 -1.58 587.01 173.33 614.12 200.12 1.65 1.67 3.64 -0.65 1.71 46.70 -1.59";
        let r = parse_labels(line).unwrap();
        assert_eq!(r[0].h, 1.65);
        assert_eq!(r[0].w, 1.67);
        assert_eq!(r[0].l, 3.64);
        let short = line.rsplit_once(' ').unwrap().0;
        assert!(matches!(
            parse_labels(short),
            Err(KittiError::FieldCountMismatch { found: 14, .. })
        ));
    }

    #[test]
    fn lidar_box_round_trip_through_record() {
        let calib = parse_calib(GOLDEN).unwrap();
        let b = Box3::new(Vec3::new(15.0, 2.0, -0.9), 1.5, 4.2, 1.8, 0.4).unwrap();
        let r = LabelRecord::from_lidar_box("Car", &b, &calib, None).unwrap();
        let back = r.to_lidar_box(&calib).unwrap();
        assert!((back.center - b.center).norm() < 1e-9);
        assert!(wrap_angle(back.yaw - b.yaw).abs() < 1e-9);
    }

    fn arb_record() -> impl Strategy<Value = LabelRecord> {
        (
            (0.0..1.0f64, 0..4i32, -3.1..3.1f64),
            (0.0..600.0f64, 0.0..200.0f64, 1.0..300.0f64, 1.0..100.0f64),
            (0.5..3.0f64, 0.5..6.0f64, 0.5..3.0f64),
            (-20.0..20.0f64, -2.0..3.0f64, 1.0..60.0f64, -3.1..3.1f64, 0.0..1.0f64),
        )
            .prop_map(|((t, o, a), (u, v, du, dv), (h, l, w), (x, y, z, ry, s))| LabelRecord {
                class: "Car".into(),
                truncation: t,
                occlusion: o,
                alpha: a,
                box2: Box2 { u_min: u, v_min: v, u_max: u + du, v_max: v + dv },
                h,
                l,
                w,
                location: Vec3::new(x, y, z),
                rotation_y: ry,
                score: Some(s),
            })
    }

    proptest! {
        #[test]
        fn label_round_trip(recs in proptest::collection::vec(arb_record(), 0..10)) {
            let txt = format_labels(&recs);
            let back = parse_labels(&txt).unwrap();
            prop_assert_eq!(back.len(), recs.len());
            for (a, b) in recs.iter().zip(&back) {
                let fa = [a.truncation, a.alpha, a.box2.u_min, a.box2.v_max, a.h, a.l, a.w, a.location.z, a.rotation_y, a.score.unwrap()];
                let fb = [b.truncation, b.alpha, b.box2.u_min, b.box2.v_max, b.h, b.l, b.w, b.location.z, b.rotation_y, b.score.unwrap()];
                for (x, y) in fa.iter().zip(fb) {
                    prop_assert!((x - y).abs() <= 1e-6);
                }
            }
            prop_assert_eq!(format_labels(&back), txt);
        }

        #[test]
        fn velodyne_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..4096usize)) {
            let n = bytes.len() / 16 * 16;
            let c = decode_velodyne(&bytes[..n]).unwrap();
            prop_assert_eq!(c.len(), n / 16);
        }
    }

    #[test]
    fn velodyne_16k_arbitrary_content() {
        let bytes: Vec<u8> = (0..16384u32).map(|i| (i.wrapping_mul(2654435761) >> 13) as u8).collect();
        assert_eq!(decode_velodyne(&bytes).unwrap().len(), 1024);
    }

    #[test]
    fn detections_2d_round_trip() {
        let d = Detection2DInput {
            box2: Box2::new(10.0, 20.0, 110.5, 80.25).unwrap(),
            confidence: 0.9,
            dims: [1.5, 3.9, 1.6],
        };
        let txt = format_detections_2d(&[d]);
        assert_eq!(parse_detections(&txt).unwrap(), vec![d]);
        assert!(parse_detections("1 2 3 4 0.5 1 1").is_err());
        assert!(parse_detections("1 2 3 4 1.5 1 1 1").is_err());
    }
}
