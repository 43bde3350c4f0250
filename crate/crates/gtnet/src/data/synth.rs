//! Deterministic synthetic moving-object video generator.
//!
//! Each sequence renders a textured background, one dominantly moving salient
//! shape (ellipse or regular polygon), optionally a static high-contrast
//! distractor drawn from the same shape/color family, and optionally drifting
//! low-contrast background clutter. Ground truth marks only the mover. Flow
//! images encode the known analytic displacement field; movers reflect their
//! velocity before stepping, so the per-frame displacement magnitude always
//! equals the speed and stays above the clutter speeds.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GtError, Result};

use super::flow::encode_flow;
use super::io::{save_gray, save_rgb};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_sequences: usize,
    pub frames_per_sequence: usize,
    pub canvas_size: usize,
    /// Mover speed range in pixels per frame.
    pub object_speed: [f64; 2],
    /// Mover area range as a fraction of the canvas.
    pub object_area: [f64; 2],
    /// Add a static salient-looking shape that is absent from ground truth.
    pub static_distractor: bool,
    /// Add drifting low-contrast background blobs.
    pub moving_noise: bool,
    pub noise_blobs: [usize; 2],
    pub noise_speed: [f64; 2],
    pub flow_max_mag: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_sequences: 8,
            frames_per_sequence: 16,
            canvas_size: 64,
            object_speed: [2.2, 3.2],
            object_area: [0.04, 0.16],
            static_distractor: true,
            moving_noise: true,
            noise_blobs: [3, 5],
            noise_speed: [0.8, 1.4],
            flow_max_mag: 8.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_sequences == 0 {
            return Err(GtError::Config("num_sequences must be positive".into()));
        }
        if self.frames_per_sequence < 2 {
            return Err(GtError::Config("frames_per_sequence must be at least 2".into()));
        }
        if self.canvas_size < 16 {
            return Err(GtError::Config("canvas_size must be at least 16".into()));
        }
        let bound = self.canvas_size as f64 / 8.0;
        for (name, range) in [("object_speed", self.object_speed), ("noise_speed", self.noise_speed)] {
            if range[0] <= 0.0 || range[0] > range[1] {
                return Err(GtError::Config(format!("{name} range {range:?} is not ordered-positive")));
            }
            if range[1] > bound {
                return Err(GtError::Config(format!(
                    "{name} max {} exceeds canvas/8 = {bound}",
                    range[1]
                )));
            }
        }
        if self.object_area[0] < 0.02 || self.object_area[1] > 0.30 || self.object_area[0] > self.object_area[1] {
            return Err(GtError::Config(format!(
                "object_area {:?} must lie within [0.02, 0.30]",
                self.object_area
            )));
        }
        if self.noise_blobs[0] > self.noise_blobs[1] {
            return Err(GtError::Config("noise_blobs range is reversed".into()));
        }
        if self.flow_max_mag <= 0.0 {
            return Err(GtError::Config("flow_max_mag must be positive".into()));
        }
        if self.flow_max_mag < self.object_speed[1] {
            return Err(GtError::Config(
                "flow_max_mag must cover the object speed or flow saturates".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceEntry {
    pub id: String,
    pub frames: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthManifest {
    pub sequences: Vec<SequenceEntry>,
    pub spec: SynthSpec,
}

#[derive(Debug, Clone)]
enum ShapeKind {
    Ellipse { a: f64, b: f64 },
    Polygon { radius: f64, sides: usize },
}

#[derive(Debug, Clone)]
struct Shape {
    kind: ShapeKind,
    rot: f64,
    color: [f64; 3],
}

impl Shape {
    fn extent(&self) -> f64 {
        match self.kind {
            ShapeKind::Ellipse { a, b } => a.max(b),
            ShapeKind::Polygon { radius, .. } => radius,
        }
    }

    fn contains(&self, dx: f64, dy: f64) -> bool {
        let (cos, sin) = (self.rot.cos(), self.rot.sin());
        let u = dx * cos + dy * sin;
        let v = -dx * sin + dy * cos;
        match self.kind {
            ShapeKind::Ellipse { a, b } => (u / a).powi(2) + (v / b).powi(2) <= 1.0,
            ShapeKind::Polygon { radius, sides } => {
                let k = sides as f64;
                for i in 0..sides {
                    let a0 = 2.0 * std::f64::consts::PI * i as f64 / k;
                    let a1 = 2.0 * std::f64::consts::PI * (i + 1) as f64 / k;
                    let (x0, y0) = (radius * a0.cos(), radius * a0.sin());
                    let (x1, y1) = (radius * a1.cos(), radius * a1.sin());
                    // outside if on the outer side of any edge
                    if (x1 - x0) * (v - y0) - (y1 - y0) * (u - x0) < 0.0 {
                        return false;
                    }
                }
                true
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Mover {
    shape: Shape,
    pos: [f64; 2],
    vel: [f64; 2],
    /// Displacement actually taken on the last step.
    last_step: [f64; 2],
}

impl Mover {
    /// Reflect the velocity off the walls first, then take a full step, so
    /// the displacement magnitude equals the speed on every frame.
    fn step(&mut self, canvas: f64) {
        let ext = self.shape.extent();
        for axis in 0..2 {
            let next = self.pos[axis] + self.vel[axis];
            if next - ext < 0.0 || next + ext > canvas {
                self.vel[axis] = -self.vel[axis];
            }
            self.pos[axis] += self.vel[axis];
            self.last_step[axis] = self.vel[axis];
        }
    }
}

struct Scene {
    bg_base: [f64; 3],
    bg_freq: [f64; 2],
    bg_phase: [f64; 2],
    bg_amp: f64,
    object: Mover,
    distractor: Option<Shape>,
    distractor_pos: [f64; 2],
    noise: Vec<Mover>,
}

const PALETTE: [[f64; 3]; 6] = [
    [0.95, 0.08, 0.08],
    [0.08, 0.90, 0.10],
    [0.10, 0.15, 0.95],
    [0.95, 0.90, 0.05],
    [0.92, 0.08, 0.90],
    [0.06, 0.90, 0.92],
];

fn sample_salient_shape(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Shape {
    let canvas = spec.canvas_size as f64;
    let area = rng.gen_range(spec.object_area[0]..=spec.object_area[1]) * canvas * canvas;
    let color_base = PALETTE[rng.gen_range(0..PALETTE.len())];
    let mut color = [0.0; 3];
    for (c, base) in color.iter_mut().zip(color_base) {
        *c = (base + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0);
    }
    let rot = rng.gen_range(0.0..std::f64::consts::PI);
    if rng.gen_bool(0.5) {
        let aspect = rng.gen_range(0.55..1.0);
        let b = (area * aspect / std::f64::consts::PI).sqrt();
        let a = area / (std::f64::consts::PI * b);
        Shape { kind: ShapeKind::Ellipse { a, b }, rot, color }
    } else {
        let sides = rng.gen_range(3..=6);
        let k = sides as f64;
        let radius = (2.0 * area / (k * (2.0 * std::f64::consts::PI / k).sin())).sqrt();
        Shape { kind: ShapeKind::Polygon { radius, sides }, rot, color }
    }
}

fn place_inside(rng: &mut ChaCha8Rng, canvas: f64, ext: f64) -> [f64; 2] {
    [
        rng.gen_range(ext..canvas - ext),
        rng.gen_range(ext..canvas - ext),
    ]
}

fn sample_velocity(rng: &mut ChaCha8Rng, speed_range: [f64; 2]) -> [f64; 2] {
    let speed = rng.gen_range(speed_range[0]..=speed_range[1]);
    let angle = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
    [speed * angle.cos(), speed * angle.sin()]
}

fn build_scene(rng: &mut ChaCha8Rng, spec: &SynthSpec) -> Scene {
    let canvas = spec.canvas_size as f64;
    let bg_base = [
        rng.gen_range(0.35..0.55),
        rng.gen_range(0.35..0.55),
        rng.gen_range(0.35..0.55),
    ];
    let bg_freq = [rng.gen_range(2.0..6.0) / canvas, rng.gen_range(2.0..6.0) / canvas];
    let bg_phase = [rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU)];
    let bg_amp = rng.gen_range(0.04..0.06);

    let shape = sample_salient_shape(rng, spec);
    let pos = place_inside(rng, canvas, shape.extent());
    let vel = sample_velocity(rng, spec.object_speed);
    let object = Mover { shape, pos, vel, last_step: [0.0, 0.0] };

    let (distractor, distractor_pos) = if spec.static_distractor {
        let shape = sample_salient_shape(rng, spec);
        let pos = place_inside(rng, canvas, shape.extent());
        (Some(shape), pos)
    } else {
        (None, [0.0, 0.0])
    };

    let noise = if spec.moving_noise {
        let count = rng.gen_range(spec.noise_blobs[0]..=spec.noise_blobs[1]);
        (0..count)
            .map(|_| {
                let r = rng.gen_range(0.015..0.03) * canvas;
                let mut color = [0.0f64; 3];
                for (c, base) in color.iter_mut().zip(bg_base) {
                    *c = (base + rng.gen_range(-0.09..0.09f64)).clamp(0.0, 1.0);
                }
                let shape = Shape {
                    kind: ShapeKind::Ellipse { a: r * rng.gen_range(0.8..1.2), b: r },
                    rot: rng.gen_range(0.0..std::f64::consts::PI),
                    color,
                };
                let pos = place_inside(rng, canvas, shape.extent());
                let vel = sample_velocity(rng, spec.noise_speed);
                Mover { shape, pos, vel, last_step: [0.0, 0.0] }
            })
            .collect()
    } else {
        Vec::new()
    };

    Scene { bg_base, bg_freq, bg_phase, bg_amp, object, distractor, distractor_pos, noise }
}

/// Rendered maps of one time step.
pub struct RenderedFrame {
    pub frame: Array3<f64>,
    pub gt: Array2<bool>,
    /// Analytic displacement field (dx, dy); `None` on the first frame.
    pub flow: Option<(Array2<f64>, Array2<f64>)>,
}

fn render(scene: &Scene, spec: &SynthSpec, with_flow: bool) -> RenderedFrame {
    let s = spec.canvas_size;
    let mut frame = Array3::<f64>::zeros((3, s, s));
    let mut gt = Array2::<bool>::from_elem((s, s), false);
    let mut dx = Array2::<f64>::zeros((s, s));
    let mut dy = Array2::<f64>::zeros((s, s));

    for y in 0..s {
        for x in 0..s {
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            let tex = scene.bg_amp
                * ((std::f64::consts::TAU * (scene.bg_freq[0] * xf) + scene.bg_phase[0]).sin()
                    + (std::f64::consts::TAU * (scene.bg_freq[1] * yf) + scene.bg_phase[1]).sin());
            let mut color = [
                (scene.bg_base[0] + tex).clamp(0.0, 1.0),
                (scene.bg_base[1] + tex).clamp(0.0, 1.0),
                (scene.bg_base[2] + tex).clamp(0.0, 1.0),
            ];
            if let Some(d) = &scene.distractor {
                if d.contains(xf - scene.distractor_pos[0], yf - scene.distractor_pos[1]) {
                    color = d.color;
                }
            }
            for blob in &scene.noise {
                if blob.shape.contains(xf - blob.pos[0], yf - blob.pos[1]) {
                    color = blob.shape.color;
                    if with_flow {
                        dx[(y, x)] = blob.last_step[0];
                        dy[(y, x)] = blob.last_step[1];
                    }
                }
            }
            let obj = &scene.object;
            if obj.shape.contains(xf - obj.pos[0], yf - obj.pos[1]) {
                color = obj.shape.color;
                gt[(y, x)] = true;
                if with_flow {
                    dx[(y, x)] = obj.last_step[0];
                    dy[(y, x)] = obj.last_step[1];
                }
            }
            for (c, v) in color.iter().enumerate() {
                frame[(c, y, x)] = *v;
            }
        }
    }
    RenderedFrame { frame, gt, flow: with_flow.then_some((dx, dy)) }
}

/// Render one whole sequence in memory.
pub fn render_sequence(spec: &SynthSpec, sub_seed: u64) -> Vec<RenderedFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed);
    let mut scene = build_scene(&mut rng, spec);
    let canvas = spec.canvas_size as f64;
    let mut frames = Vec::with_capacity(spec.frames_per_sequence);
    for t in 1..=spec.frames_per_sequence {
        if t > 1 {
            scene.object.step(canvas);
            for blob in &mut scene.noise {
                blob.step(canvas);
            }
        }
        frames.push(render(&scene, spec, t > 1));
    }
    frames
}

/// Render the whole dataset directly into samples, skipping the filesystem.
/// Maps go through the same 8-bit quantization as the PNG path, so training
/// on this is bit-identical to training on a generated-then-loaded tree.
pub fn render_dataset(spec: &SynthSpec) -> Result<Vec<(String, Vec<super::VideoSample>)>> {
    spec.validate()?;
    let quantize = |a: &Array3<f64>| a.mapv(|v| f64::from((v.clamp(0.0, 1.0) * 255.0).round() as u8) / 255.0);
    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::new();
    for s in 0..spec.num_sequences {
        let id = format!("seq_{s:03}");
        let sub_seed: u64 = master.gen();
        let frames = render_sequence(spec, sub_seed);
        let mut samples = Vec::new();
        for (i, rendered) in frames.iter().enumerate() {
            let t = i + 1;
            let Some((dx, dy)) = &rendered.flow else { continue };
            let img = encode_flow(dx, dy, spec.flow_max_mag)?;
            let (h, w) = dx.dim();
            let mut flow_arr = Array3::<f64>::zeros((3, h, w));
            for (x, y, p) in img.enumerate_pixels() {
                for c in 0..3 {
                    flow_arr[(c, y as usize, x as usize)] = f64::from(p[c]) / 255.0;
                }
            }
            samples.push(super::VideoSample {
                frame: quantize(&rendered.frame),
                flow: flow_arr,
                gt: rendered.gt.clone(),
                t,
                sequence_id: id.clone(),
            });
        }
        out.push((id, samples));
    }
    Ok(out)
}

/// Generate the dataset tree:
/// `out/<seq>/frames/%04d.png`, `gt/%04d.png`, `flow/%04d.png` (flow from 0002)
/// plus `out/manifest.json`. Refuses to write into a non-empty directory.
pub fn synth_generate(spec: &SynthSpec, out: &Path) -> Result<SynthManifest> {
    spec.validate()?;
    if out.exists() && out.read_dir()?.next().is_some() {
        return Err(GtError::Config(format!(
            "output directory {} is not empty; refusing to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(out)?;

    let mut master = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sequences = Vec::new();
    for s in 0..spec.num_sequences {
        let id = format!("seq_{s:03}");
        let sub_seed: u64 = master.gen();
        let frames = render_sequence(spec, sub_seed);
        let dir = out.join(&id);
        fs::create_dir_all(dir.join("frames"))?;
        fs::create_dir_all(dir.join("gt"))?;
        fs::create_dir_all(dir.join("flow"))?;
        for (i, rendered) in frames.iter().enumerate() {
            let t = i + 1;
            save_rgb(&dir.join("frames").join(format!("{t:04}.png")), &rendered.frame)?;
            save_gray(&dir.join("gt").join(format!("{t:04}.png")), &rendered.gt)?;
            if let Some((dx, dy)) = &rendered.flow {
                let img = encode_flow(dx, dy, spec.flow_max_mag)?;
                img.save(dir.join("flow").join(format!("{t:04}.png")))?;
            }
        }
        sequences.push(SequenceEntry { id, frames: spec.frames_per_sequence });
    }

    let manifest = SynthManifest { sequences, spec: spec.clone() };
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}
