use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::appearance::PointCloudRGB;
use crate::error::{Error, Result};
use crate::gauss::Camera;
use crate::scenegen::{generate_points, generate_view, SceneModel, SceneSpec};

/// A fully loaded scene directory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: SceneSpec,
    pub cameras: Vec<Camera>,
    /// per view, (3,h,w) planar in [0,1]
    pub images: Vec<Vec<f64>>,
    /// per view, (h,w) in meters
    pub depths: Vec<Vec<f64>>,
    /// per view, (h,w) in [0,1]; 1 = static
    pub masks: Vec<Vec<f64>>,
    pub points: PointCloudRGB,
}

#[derive(Serialize, Deserialize)]
struct CameraJson {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    w: usize,
    h: usize,
    world_to_camera: Vec<f64>,
}

impl CameraJson {
    fn from_camera(c: &Camera) -> Self {
        let mut m = vec![0.0; 16];
        for r in 0..3 {
            for col in 0..3 {
                m[r * 4 + col] = c.rot[r * 3 + col];
            }
            m[r * 4 + 3] = c.trans[r];
        }
        m[15] = 1.0;
        CameraJson { fx: c.fx, fy: c.fy, cx: c.cx, cy: c.cy, w: c.width, h: c.height, world_to_camera: m }
    }

    fn to_camera(&self, path: &Path) -> Result<Camera> {
        if self.world_to_camera.len() != 16 {
            return Err(Error::parse(path, "world_to_camera must have 16 entries"));
        }
        let m = &self.world_to_camera;
        let mut rot = [0.0; 9];
        let mut trans = [0.0; 3];
        for r in 0..3 {
            for col in 0..3 {
                rot[r * 3 + col] = m[r * 4 + col];
            }
            trans[r] = m[r * 4 + 3];
        }
        let cam = Camera {
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.w,
            height: self.h,
            rot,
            trans,
        };
        cam.validate().map_err(|e| Error::parse(path, format!("invalid camera: {e}")))?;
        Ok(cam)
    }
}

/// Fixed deterministic split: every sixth view, starting at zero, is held
/// out. The occluder schedule never touches these views.
pub fn train_test_split(n_views: usize) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for v in 0..n_views {
        if v % 6 == 0 {
            test.push(v);
        } else {
            train.push(v);
        }
    }
    (train, test)
}

/// Planar [0,1] floats to interleaved 8-bit, round half up.
pub fn image_to_rgb8(img: &[f64], w: usize, h: usize) -> Vec<u8> {
    assert_eq!(img.len(), 3 * w * h);
    let mut out = Vec::with_capacity(3 * w * h);
    for pix in 0..w * h {
        for c in 0..3 {
            out.push(quant8(img[c * w * h + pix]));
        }
    }
    out
}

pub fn image_from_rgb8(bytes: &[u8], w: usize, h: usize) -> Vec<f64> {
    assert_eq!(bytes.len(), 3 * w * h);
    let mut out = vec![0.0; 3 * w * h];
    for pix in 0..w * h {
        for c in 0..3 {
            out[c * w * h + pix] = bytes[pix * 3 + c] as f64 / 255.0;
        }
    }
    out
}

fn quant8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// 16-bit binary PGM (P5, maxval 65535, big-endian samples per the format),
/// storing depth in millimeters.
pub fn depth_to_pgm(depth: &[f64], w: usize, h: usize) -> Vec<u8> {
    assert_eq!(depth.len(), w * h);
    let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for &d in depth {
        let mm = (d * 1000.0 + 0.5).floor().clamp(0.0, 65535.0) as u16;
        out.extend_from_slice(&mm.to_be_bytes());
    }
    out
}

pub fn depth_from_pgm(bytes: &[u8], path: &Path) -> Result<(Vec<f64>, usize, usize)> {
    // header: three whitespace-separated tokens after the magic
    let header_err = |m: &str| Error::parse(path, m.to_string());
    if !bytes.starts_with(b"P5") {
        return Err(header_err("not a P5 pgm"));
    }
    let mut pos = 2;
    let mut tokens = Vec::new();
    while tokens.len() < 3 && pos < bytes.len() {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start < pos {
            tokens.push(
                std::str::from_utf8(&bytes[start..pos])
                    .map_err(|_| header_err("bad header"))?
                    .to_string(),
            );
        }
    }
    if tokens.len() != 3 {
        return Err(header_err("truncated header"));
    }
    let w: usize = tokens[0].parse().map_err(|_| header_err("bad width"))?;
    let h: usize = tokens[1].parse().map_err(|_| header_err("bad height"))?;
    if tokens[2] != "65535" {
        return Err(header_err("expected 16-bit maxval"));
    }
    pos += 1; // single whitespace after maxval
    let need = 2 * w * h;
    if bytes.len() < pos + need {
        return Err(header_err("truncated payload"));
    }
    let depth = bytes[pos..pos + need]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]) as f64 / 1000.0)
        .collect();
    Ok((depth, w, h))
}

pub fn gray_from_png_bytes(img: &image::GrayImage) -> Vec<f64> {
    img.pixels().map(|p| p.0[0] as f64 / 255.0).collect()
}

fn write_png_rgb(path: &Path, data: &[u8], w: usize, h: usize) -> Result<()> {
    image::save_buffer(path, data, w as u32, h as u32, image::ColorType::Rgb8)
        .map_err(|e| Error::parse(path, format!("png write failed: {e}")))
}

fn write_png_gray(path: &Path, data: &[u8], w: usize, h: usize) -> Result<()> {
    image::save_buffer(path, data, w as u32, h as u32, image::ColorType::L8)
        .map_err(|e| Error::parse(path, format!("png write failed: {e}")))
}

/// Generates the full scene to disk. Same spec, same bytes.
pub fn write_dataset(spec: &SceneSpec, dir: &Path) -> Result<()> {
    spec.validate()?;
    let model = SceneModel::from_seed(spec.seed);
    for sub in ["images", "depth", "gt_masks"] {
        fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(&dir.join(sub), e))?;
    }
    let mut cameras = Vec::with_capacity(spec.views);
    for v in 0..spec.views {
        let vd = generate_view(spec, &model, v);
        let name = format!("{v:03}");
        write_png_rgb(
            &dir.join("images").join(format!("{name}.png")),
            &image_to_rgb8(&vd.image, spec.width, spec.height),
            spec.width,
            spec.height,
        )?;
        let pgm = depth_to_pgm(&vd.depth, spec.width, spec.height);
        let dpath = dir.join("depth").join(format!("{name}.pgm"));
        fs::write(&dpath, pgm).map_err(|e| Error::io(&dpath, e))?;
        let mask8: Vec<u8> = vd.mask.iter().map(|&m| quant8(m)).collect();
        write_png_gray(
            &dir.join("gt_masks").join(format!("{name}.png")),
            &mask8,
            spec.width,
            spec.height,
        )?;
        cameras.push(CameraJson::from_camera(&vd.camera));
    }
    let cpath = dir.join("cameras.json");
    let cjson = serde_json::to_string_pretty(&cameras).expect("camera serialization");
    fs::write(&cpath, cjson).map_err(|e| Error::io(&cpath, e))?;

    let points = generate_points(spec, &model);
    let mut txt = String::new();
    for i in 0..points.len() {
        let p = &points.positions[i * 3..i * 3 + 3];
        let c = &points.colors[i * 3..i * 3 + 3];
        txt.push_str(&format!("{} {} {} {} {} {}\n", p[0], p[1], p[2], c[0], c[1], c[2]));
    }
    let ppath = dir.join("points.txt");
    fs::write(&ppath, txt).map_err(|e| Error::io(&ppath, e))?;

    let spath = dir.join("spec.json");
    let sjson = serde_json::to_string_pretty(spec).expect("spec serialization");
    fs::write(&spath, sjson).map_err(|e| Error::io(&spath, e))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let spec: SceneSpec = read_json(&dir.join("spec.json"))?;
    spec.validate()?;
    let cjson: Vec<CameraJson> = read_json(&dir.join("cameras.json"))?;
    if cjson.len() != spec.views {
        return Err(Error::parse(
            &dir.join("cameras.json"),
            format!("expected {} cameras, found {}", spec.views, cjson.len()),
        ));
    }
    let mut cameras = Vec::with_capacity(spec.views);
    let mut images = Vec::with_capacity(spec.views);
    let mut depths = Vec::with_capacity(spec.views);
    let mut masks = Vec::with_capacity(spec.views);
    for (v, cj) in cjson.iter().enumerate() {
        cameras.push(cj.to_camera(&dir.join("cameras.json"))?);
        let name = format!("{v:03}");

        let ipath = dir.join("images").join(format!("{name}.png"));
        let img = image::open(&ipath).map_err(|e| Error::parse(&ipath, e.to_string()))?.to_rgb8();
        if (img.width() as usize, img.height() as usize) != (spec.width, spec.height) {
            return Err(Error::parse(&ipath, "image extent does not match spec"));
        }
        images.push(image_from_rgb8(img.as_raw(), spec.width, spec.height));

        let dpath = dir.join("depth").join(format!("{name}.pgm"));
        let bytes = fs::read(&dpath).map_err(|e| Error::io(&dpath, e))?;
        let (depth, w, h) = depth_from_pgm(&bytes, &dpath)?;
        if (w, h) != (spec.width, spec.height) {
            return Err(Error::parse(&dpath, "depth extent does not match spec"));
        }
        depths.push(depth);

        let mpath = dir.join("gt_masks").join(format!("{name}.png"));
        let m = image::open(&mpath).map_err(|e| Error::parse(&mpath, e.to_string()))?.to_luma8();
        if (m.width() as usize, m.height() as usize) != (spec.width, spec.height) {
            return Err(Error::parse(&mpath, "mask extent does not match spec"));
        }
        masks.push(gray_from_png_bytes(&m));
    }
    let points = load_points(&dir.join("points.txt"))?;
    Ok(Dataset { spec, cameras, images, depths, masks, points })
}

fn load_points(path: &Path) -> Result<PointCloudRGB> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut pc = PointCloudRGB::default();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(path, format!("line {}: bad number", ln + 1)))?;
        if vals.len() != 6 {
            return Err(Error::parse(path, format!("line {}: expected 6 fields", ln + 1)));
        }
        pc.positions.extend_from_slice(&vals[..3]);
        pc.colors.extend_from_slice(&vals[3..]);
    }
    if pc.is_empty() {
        return Err(Error::parse(path, "no points"));
    }
    Ok(pc)
}

/// Convenience used by tests and the cli: output paths for a view index.
pub fn view_paths(dir: &Path, view: usize) -> (PathBuf, PathBuf, PathBuf) {
    let name = format!("{view:03}");
    (
        dir.join("images").join(format!("{name}.png")),
        dir.join("depth").join(format!("{name}.pgm")),
        dir.join("gt_masks").join(format!("{name}.png")),
    )
}
