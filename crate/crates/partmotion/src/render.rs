//! Orthographic stick-figure rendering of motion sequences to PNG frames.
//!
//! Projection bounds are computed over the whole sequence (or both
//! sequences for a pair), so the camera never jitters between frames and a
//! numbered frame sequence plays back as a steady video.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::motion::{forward_kinematics, MotionSequence, Skeleton};

const BACKGROUND: Rgb<u8> = Rgb([255, 255, 255]);
const BONE: Rgb<u8> = Rgb([32, 32, 32]);
const JOINT: Rgb<u8> = Rgb([200, 48, 48]);
const GROUND: Rgb<u8> = Rgb([208, 208, 208]);
const DIVIDER: Rgb<u8> = Rgb([160, 160, 160]);

/// Orthographic view axis. `Front` looks along x (image = y/z plane),
/// `Side` along y (x/z), `Top` down z (x/y).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Front,
    Side,
    Top,
}

impl View {
    fn project(self, p: &Vector3<f64>) -> (f64, f64) {
        match self {
            View::Front => (p.y, p.z),
            View::Side => (p.x, p.z),
            View::Top => (p.x, p.y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub width: u32,
    pub height: u32,
    pub view: View,
    /// Viewport margin in pixels around the figure's bounding box.
    pub margin: u32,
}

impl Default for RenderOptions {
    fn default() -> Self {
        RenderOptions {
            width: 320,
            height: 320,
            view: View::Side,
            margin: 24,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("frame {frame} out of range for a {num_frames}-frame motion")]
    FrameOutOfRange { frame: usize, num_frames: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("image: {0}")]
    Image(#[from] image::ImageError),
}

/// World-to-pixel mapping fixed for a whole render job.
#[derive(Debug, Clone, Copy)]
struct Viewport {
    view: View,
    scale: f64,
    center_u: f64,
    center_v: f64,
    width: u32,
    height: u32,
}

impl Viewport {
    /// Fits the projected bounds of every frame of every motion, preserving
    /// aspect ratio.
    fn fit(motions: &[&MotionSequence], skel: &Skeleton, opts: &RenderOptions) -> Viewport {
        let (mut min_u, mut max_u) = (f64::INFINITY, f64::NEG_INFINITY);
        let (mut min_v, mut max_v) = (f64::INFINITY, f64::NEG_INFINITY);
        for motion in motions {
            for frame in 0..motion.num_frames() {
                for p in frame_positions(motion, skel, frame) {
                    let (u, v) = opts.view.project(&p);
                    min_u = min_u.min(u);
                    max_u = max_u.max(u);
                    min_v = min_v.min(v);
                    max_v = max_v.max(v);
                }
            }
        }
        let span_u = (max_u - min_u).max(1e-6);
        let span_v = (max_v - min_v).max(1e-6);
        let usable_w = opts.width.saturating_sub(2 * opts.margin).max(1) as f64;
        let usable_h = opts.height.saturating_sub(2 * opts.margin).max(1) as f64;
        Viewport {
            view: opts.view,
            scale: (usable_w / span_u).min(usable_h / span_v),
            center_u: (min_u + max_u) / 2.0,
            center_v: (min_v + max_v) / 2.0,
            width: opts.width,
            height: opts.height,
        }
    }

    fn to_pixel(&self, p: &Vector3<f64>) -> (i64, i64) {
        let (u, v) = self.view.project(p);
        let x = self.width as f64 / 2.0 + (u - self.center_u) * self.scale;
        let y = self.height as f64 / 2.0 - (v - self.center_v) * self.scale;
        (x.round() as i64, y.round() as i64)
    }

    /// Pixel row of world height 0, if it lands inside the image.
    fn ground_row(&self) -> Option<u32> {
        let y = (self.height as f64 / 2.0 + self.center_v * self.scale).round() as i64;
        (0..self.height as i64).contains(&y).then_some(y as u32)
    }
}

fn frame_positions(motion: &MotionSequence, skel: &Skeleton, frame: usize) -> Vec<Vector3<f64>> {
    forward_kinematics(
        skel,
        Vector3::from(motion.root_pos[frame]),
        &motion.root_rot[frame],
        &motion.joint_rot[frame],
    )
}

fn put(img: &mut RgbImage, x: i64, y: i64, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

/// Bresenham segment, endpoints included.
fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), color: Rgb<u8>) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if (x, y) == b {
            return;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

fn draw_dot(img: &mut RgbImage, (x, y): (i64, i64), color: Rgb<u8>) {
    for dx in -1..=1 {
        for dy in -1..=1 {
            put(img, x + dx, y + dy, color);
        }
    }
}

fn draw_skeleton(img: &mut RgbImage, vp: &Viewport, skel: &Skeleton, pos: &[Vector3<f64>]) {
    if let Some(row) = vp.ground_row() {
        for x in 0..img.width() {
            img.put_pixel(x, row, GROUND);
        }
    }
    let pixels: Vec<(i64, i64)> = pos.iter().map(|p| vp.to_pixel(p)).collect();
    for joint in 1..skel.num_joints() {
        let parent = skel.parent(joint).expect("non-root joints have parents");
        draw_line(img, pixels[parent], pixels[joint], BONE);
    }
    for &px in &pixels {
        draw_dot(img, px, JOINT);
    }
}

/// Renders one frame with a viewport fitted to the whole motion.
pub fn render_frame(
    motion: &MotionSequence,
    skel: &Skeleton,
    frame: usize,
    opts: &RenderOptions,
) -> Result<RgbImage, RenderError> {
    if frame >= motion.num_frames() {
        return Err(RenderError::FrameOutOfRange {
            frame,
            num_frames: motion.num_frames(),
        });
    }
    let vp = Viewport::fit(&[motion], skel, opts);
    let mut img = RgbImage::from_pixel(opts.width, opts.height, BACKGROUND);
    draw_skeleton(&mut img, &vp, skel, &frame_positions(motion, skel, frame));
    Ok(img)
}

/// Renders two motions side by side at the same frame index, sharing one
/// world scale so sizes are comparable. Either panel goes blank past its
/// motion's end.
pub fn render_frame_pair(
    left: &MotionSequence,
    right: &MotionSequence,
    skel: &Skeleton,
    frame: usize,
    opts: &RenderOptions,
) -> RgbImage {
    let vp = Viewport::fit(&[left, right], skel, opts);
    let mut img = RgbImage::from_pixel(2 * opts.width + 1, opts.height, BACKGROUND);
    for (slot, motion) in [left, right].into_iter().enumerate() {
        if frame >= motion.num_frames() {
            continue;
        }
        let mut panel = RgbImage::from_pixel(opts.width, opts.height, BACKGROUND);
        draw_skeleton(&mut panel, &vp, skel, &frame_positions(motion, skel, frame));
        let x0 = slot as u32 * (opts.width + 1);
        for (x, y, &px) in panel.enumerate_pixels() {
            img.put_pixel(x0 + x, y, px);
        }
    }
    for y in 0..opts.height {
        img.put_pixel(opts.width, y, DIVIDER);
    }
    img
}

/// Renders every `stride`-th frame to `dir` as `{stem}_f{frame:05}.png`,
/// returning the paths written. The numbered sequence is the video.
pub fn render_motion(
    motion: &MotionSequence,
    skel: &Skeleton,
    opts: &RenderOptions,
    stride: usize,
    dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>, RenderError> {
    assert!(stride >= 1);
    std::fs::create_dir_all(dir)?;
    let vp = Viewport::fit(&[motion], skel, opts);
    let frames: Vec<usize> = (0..motion.num_frames()).step_by(stride).collect();
    let images = crate::exec::par_map(&frames, |&frame| {
        let mut img = RgbImage::from_pixel(opts.width, opts.height, BACKGROUND);
        draw_skeleton(&mut img, &vp, skel, &frame_positions(motion, skel, frame));
        (frame, img)
    });
    let mut paths = Vec::with_capacity(images.len());
    for (frame, img) in images {
        let path = dir.join(format!("{stem}_f{frame:05}.png"));
        img.save(&path)?;
        paths.push(path);
    }
    Ok(paths)
}
