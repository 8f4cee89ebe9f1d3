//! Procedural physics clips with exact trajectories, analytic flow and captions,
//! plus deterministic violation injectors and a corpus builder.
//!
//! Coordinates are in pixels with the origin at the centre of the top-left
//! pixel and `y` pointing down. One simulation step is one frame.

mod corpus;
mod violation;

pub use corpus::{
    build_corpus, corpus_entries, load_corpus_manifest, render_entry, CorpusConfig, CorpusEntry, Label, Split,
};
pub use violation::{compatible_violations, inject_violation, ViolationKind, ViolationSpec};

use ndarray::{Array3, Array4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::benchmark::Category;
use crate::optflow::smooth_texture;
use crate::video::{FlowField, FrameSequence, ResolutionTag, DEFAULT_FPS};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    GravityDrop,
    Bounce,
    Projectile,
    Pendulum,
    Rotation,
    FrictionSlide,
}

impl Scenario {
    pub const ALL: [Scenario; 6] = [
        Scenario::GravityDrop,
        Scenario::Bounce,
        Scenario::Projectile,
        Scenario::Pendulum,
        Scenario::Rotation,
        Scenario::FrictionSlide,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::GravityDrop => "gravity_drop",
            Scenario::Bounce => "bounce",
            Scenario::Projectile => "projectile",
            Scenario::Pendulum => "pendulum",
            Scenario::Rotation => "rotation",
            Scenario::FrictionSlide => "friction_slide",
        }
    }

    pub fn category(self) -> Category {
        match self {
            Scenario::GravityDrop => Category::Gravity,
            Scenario::Bounce => Category::Collision,
            Scenario::Projectile => Category::ProjectileMotion,
            Scenario::Pendulum => Category::Vibration,
            Scenario::Rotation => Category::Rotation,
            Scenario::FrictionSlide => Category::Friction,
        }
    }
}

/// Physical and visual parameters. Fields a scenario does not use are ignored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// px/frame², positive is downward. For the pendulum, `gravity / length` is the squared angular frequency.
    pub gravity: f32,
    pub restitution: f32,
    /// Initial centre `(x, y)`.
    pub position: [f32; 2],
    /// Initial velocity, px/frame.
    pub velocity: [f32; 2],
    /// rad/frame; positive turns clockwise on screen.
    pub angular_velocity: f32,
    /// Sliding deceleration, px/frame².
    pub friction: f32,
    pub radius: f32,
    pub length: f32,
    /// Initial pendulum angle from vertical, rad; positive starts on the right.
    pub amplitude: f32,
    pub color: [f32; 3],
    pub color_name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub scenario: Scenario,
    pub params: SceneParams,
    /// Background texture seed.
    pub seed: u64,
    pub n_frames: usize,
    pub height: usize,
    pub width: usize,
}

/// Object pose in one frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectState {
    pub x: f32,
    pub y: f32,
    pub angle: f32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RenderedClip {
    pub frames: FrameSequence,
    /// Analytic backward flow at native resolution.
    pub flow: FlowField,
    pub caption: String,
    pub states: Vec<ObjectState>,
}

const PALETTE: [(&str, [f32; 3]); 5] = [
    ("red", [0.9, 0.15, 0.1]),
    ("blue", [0.1, 0.3, 0.95]),
    ("yellow", [0.95, 0.85, 0.1]),
    ("green", [0.1, 0.8, 0.2]),
    ("white", [0.97, 0.97, 0.97]),
];

/// Top of the ground band drawn for scenarios with a floor.
pub fn floor_y(height: usize) -> f32 {
    height as f32 - 4.0
}

fn side(v: f32) -> &'static str {
    if v >= 0.0 {
        "right"
    } else {
        "left"
    }
}

impl SceneSpec {
    /// Draws parameters for `scenario` from the generator ranges.
    pub fn sample(scenario: Scenario, seed: u64, n_frames: usize, height: usize, width: usize) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (h, w) = (height as f32, width as f32);
        let (color_name, color) = PALETTE[rng.gen_range(0..PALETTE.len())];
        let dir: f32 = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        let mut p = SceneParams {
            gravity: 0.0,
            restitution: 0.0,
            position: [w / 2.0, h / 2.0],
            velocity: [0.0, 0.0],
            angular_velocity: 0.0,
            friction: 0.0,
            radius: rng.gen_range(3.0..4.5),
            length: 0.0,
            amplitude: 0.0,
            color,
            color_name: color_name.to_string(),
        };
        let ground = floor_y(height) - p.radius;
        match scenario {
            Scenario::GravityDrop => {
                p.gravity = rng.gen_range(0.15..0.25);
                p.position = [rng.gen_range(12.0..w - 12.0), rng.gen_range(p.radius + 2.0..12.0)];
            }
            Scenario::Bounce => {
                p.gravity = rng.gen_range(0.3..0.5);
                p.restitution = rng.gen_range(0.7..0.9);
                // impact between frames tb and tb + 1
                let tb = rng.gen_range(5..9) as f32;
                let drop = p.gravity * tb * (tb + 1.0) / 2.0 + rng.gen_range(0.0..p.gravity * (tb + 1.0));
                p.position = [rng.gen_range(16.0..w - 16.0), ground - drop];
                p.velocity = [rng.gen_range(-0.6..0.6), 0.0];
            }
            Scenario::Projectile => {
                p.gravity = rng.gen_range(0.15..0.25);
                p.velocity = [dir * rng.gen_range(1.2..2.0), -rng.gen_range(1.6..2.4)];
                let x = rng.gen_range(8.0..14.0);
                p.position = [
                    if dir > 0.0 { x } else { w - 1.0 - x },
                    rng.gen_range(h - 24.0..h - 16.0),
                ];
            }
            Scenario::Pendulum => {
                p.length = rng.gen_range(0.4 * h..0.55 * h);
                p.gravity = rng.gen_range(0.12..0.2) * p.length;
                p.amplitude = dir * rng.gen_range(0.35..0.6);
                p.position = [w / 2.0, 4.0];
            }
            Scenario::Rotation => {
                p.radius = rng.gen_range(0.22 * h..0.3 * h);
                p.angular_velocity = dir * rng.gen_range(0.06..0.14);
                p.position = [w / 2.0 + rng.gen_range(-4.0..4.0), h / 2.0 + rng.gen_range(-4.0..4.0)];
            }
            Scenario::FrictionSlide => {
                p.friction = rng.gen_range(0.12..0.25);
                p.velocity = [dir * rng.gen_range(1.8..2.8), 0.0];
                let x = rng.gen_range(10.0..16.0);
                p.position = [if dir > 0.0 { x } else { w - 1.0 - x }, ground];
            }
        }
        SceneSpec {
            scenario,
            params: p,
            seed,
            n_frames,
            height,
            width,
        }
    }

    pub fn caption(&self) -> String {
        let p = &self.params;
        let c = &p.color_name;
        match self.scenario {
            Scenario::GravityDrop => format!("A {c} ball falls straight down from rest."),
            Scenario::Bounce => format!("A {c} ball falls and bounces on the ground."),
            Scenario::Projectile => {
                format!(
                    "A {c} ball is thrown to the {} and flies in an arc.",
                    side(p.velocity[0])
                )
            }
            Scenario::Pendulum => format!("A {c} pendulum bob swings, starting from the {}.", side(p.amplitude)),
            Scenario::Rotation => {
                let d = if p.angular_velocity >= 0.0 {
                    "clockwise"
                } else {
                    "counterclockwise"
                };
                format!("A {c} wheel spins {d} in place.")
            }
            Scenario::FrictionSlide => {
                format!("A {c} puck slides to the {} and slows to a stop.", side(p.velocity[0]))
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.params;
        let finite = [
            p.gravity,
            p.restitution,
            p.angular_velocity,
            p.friction,
            p.radius,
            p.length,
            p.amplitude,
        ]
        .iter()
        .chain(&p.position)
        .chain(&p.velocity)
        .chain(&p.color)
        .all(|v| v.is_finite());
        let ok = finite
            && self.n_frames >= 2
            && self.height >= 16
            && self.width >= 16
            && p.radius > 0.5
            && (0.0..=1.5).contains(&p.restitution)
            && p.gravity.abs() <= 8.0
            && p.friction >= 0.0
            && p.color.iter().all(|c| (0.0..=1.0).contains(c))
            && (self.scenario != Scenario::Pendulum || p.length > p.radius);
        if !ok {
            return Err(Error::Scene(format!(
                "parameters out of range for {}",
                self.scenario.as_str()
            )));
        }
        Ok(())
    }

    /// Integrates the trajectory with semi-implicit Euler, `dt = 1` frame.
    pub fn simulate(&self) -> Result<Vec<ObjectState>> {
        self.validate()?;
        let p = &self.params;
        self.simulate_with(p.gravity, p.restitution)
    }

    pub(crate) fn simulate_with(&self, gravity: f32, restitution: f32) -> Result<Vec<ObjectState>> {
        let p = &self.params;
        let ground = floor_y(self.height) - p.radius;
        let mut out = Vec::with_capacity(self.n_frames);
        let [mut x, mut y] = p.position;
        let [mut vx, mut vy] = p.velocity;
        let (mut theta, mut omega) = (p.amplitude, 0.0f32);
        let mut angle = 0.0f32;
        for t in 0..self.n_frames {
            if t > 0 {
                match self.scenario {
                    Scenario::GravityDrop | Scenario::Projectile => {
                        vy += gravity;
                        x += vx;
                        y += vy;
                    }
                    Scenario::Bounce => {
                        vy += gravity;
                        x += vx;
                        y += vy;
                        if y > ground {
                            y = ground - restitution * (y - ground);
                            vy = -restitution * vy;
                        }
                    }
                    Scenario::Pendulum => {
                        omega -= gravity / p.length * theta.sin();
                        theta += omega;
                    }
                    Scenario::Rotation => angle += p.angular_velocity,
                    Scenario::FrictionSlide => {
                        let speed = (vx.abs() - p.friction).max(0.0);
                        vx = speed * vx.signum();
                        x += vx;
                    }
                }
            }
            let (sx, sy) = match self.scenario {
                Scenario::Pendulum => (
                    p.position[0] + p.length * theta.sin(),
                    p.position[1] + p.length * theta.cos(),
                ),
                _ => (x, y),
            };
            out.push(ObjectState { x: sx, y: sy, angle });
        }
        self.check_in_frame(&out)?;
        Ok(out)
    }

    pub(crate) fn check_in_frame(&self, states: &[ObjectState]) -> Result<()> {
        let r = self.params.radius;
        let (w, h) = (self.width as f32 - 1.0, self.height as f32 - 1.0);
        for (t, s) in states.iter().enumerate() {
            if s.x - r < 0.0 || s.y - r < 0.0 || s.x + r > w || s.y + r > h || !s.x.is_finite() || !s.y.is_finite() {
                return Err(Error::Scene(format!(
                    "{} object leaves the frame at frame {t} ({:.1}, {:.1})",
                    self.scenario.as_str(),
                    s.x,
                    s.y
                )));
            }
        }
        Ok(())
    }

    fn has_floor(&self) -> bool {
        matches!(self.scenario, Scenario::Bounce | Scenario::FrictionSlide)
    }

    /// Static background: low-contrast seeded texture plus the ground band where relevant.
    pub fn background(&self) -> Array3<f32> {
        let tex = smooth_texture(self.height, self.width, self.seed ^ 0xb4c6);
        let floor = floor_y(self.height);
        let has_floor = self.has_floor();
        Array3::from_shape_fn((3, self.height, self.width), |(c, y, x)| {
            if has_floor && y as f32 >= floor + 0.5 {
                [0.3, 0.24, 0.18][c]
            } else {
                0.32 + 0.3 * (tex[[c, y, x]] - 0.5)
            }
        })
    }

    /// Fraction of pixel `(px, py)` covered by the object.
    fn coverage(&self, s: &ObjectState, px: f32, py: f32) -> f32 {
        let d = ((px - s.x).powi(2) + (py - s.y).powi(2)).sqrt();
        (self.params.radius + 0.5 - d).clamp(0.0, 1.0)
    }

    /// Object colour at `(px, py)`; the wheel carries an angular pattern that turns with it.
    fn object_color(&self, s: &ObjectState, px: f32, py: f32, c: usize) -> f32 {
        let base = self.params.color[c];
        if self.scenario != Scenario::Rotation {
            return base;
        }
        let phi = (py - s.y).atan2(px - s.x) - s.angle;
        let rho = ((px - s.x).powi(2) + (py - s.y).powi(2)).sqrt() / self.params.radius;
        let shade = 0.55 + 0.35 * (3.0 * phi).cos() * rho.min(1.0) + 0.1 * (1.0 - rho).max(0.0);
        (base * shade).clamp(0.0, 1.0)
    }

    pub fn render_state(&self, background: &Array3<f32>, s: &ObjectState) -> Array3<f32> {
        let mut img = background.clone();
        let r = self.params.radius + 1.0;
        let (y0, y1) = (
            ((s.y - r).floor().max(0.0)) as usize,
            ((s.y + r).ceil() as usize).min(self.height - 1),
        );
        let (x0, x1) = (
            ((s.x - r).floor().max(0.0)) as usize,
            ((s.x + r).ceil() as usize).min(self.width - 1),
        );
        for y in y0..=y1 {
            for x in x0..=x1 {
                let a = self.coverage(s, x as f32, y as f32);
                if a > 0.0 {
                    for c in 0..3 {
                        let v = self.object_color(s, x as f32, y as f32, c);
                        img[[c, y, x]] = (1.0 - a) * img[[c, y, x]] + a * v;
                    }
                }
            }
        }
        img
    }

    pub fn render_states(&self, states: &[ObjectState]) -> Result<FrameSequence> {
        let bg = self.background();
        let frames: Vec<Array3<f32>> = states.iter().map(|s| self.render_state(&bg, s)).collect();
        let views: Vec<_> = frames.iter().map(|f| f.view()).collect();
        let data = ndarray::stack(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))?;
        FrameSequence::new(data, DEFAULT_FPS, format!("{}-{}", self.scenario.as_str(), self.seed))
    }

    /// Backward flow of object pixels (coverage above one half); zero elsewhere and in frame 0.
    pub fn truth_flow(&self, states: &[ObjectState]) -> Result<FlowField> {
        let (h, w) = (self.height, self.width);
        let mut data = Array4::zeros((states.len(), 2, h, w));
        for i in 1..states.len() {
            let (prev, cur) = (states[i - 1], states[i]);
            let da = cur.angle - prev.angle;
            let (sin, cos) = (-da).sin_cos();
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f32, y as f32);
                    if self.coverage(&cur, px, py) <= 0.5 {
                        continue;
                    }
                    // source point in the previous frame
                    let (dx, dy) = (px - cur.x, py - cur.y);
                    let qx = prev.x + cos * dx - sin * dy;
                    let qy = prev.y + sin * dx + cos * dy;
                    data[[i, 0, y, x]] = px - qx;
                    data[[i, 1, y, x]] = py - qy;
                }
            }
        }
        FlowField::new(data, ResolutionTag::Native)
    }

    fn finish(&self, states: Vec<ObjectState>) -> Result<RenderedClip> {
        Ok(RenderedClip {
            frames: self.render_states(&states)?,
            flow: self.truth_flow(&states)?,
            caption: self.caption(),
            states,
        })
    }
}

/// Simulates and renders a scene.
pub fn render_scene(spec: &SceneSpec) -> Result<RenderedClip> {
    let states = spec.simulate()?;
    spec.finish(states)
}

/// Samples parameters for `scenario`, retrying with derived seeds until the object stays in frame.
pub fn sample_scene(scenario: Scenario, seed: u64, n_frames: usize, height: usize, width: usize) -> Result<SceneSpec> {
    let mut last = None;
    for attempt in 0..64u64 {
        let spec = SceneSpec::sample(
            scenario,
            splitmix64(seed ^ attempt.wrapping_mul(0x9e37_79b9)),
            n_frames,
            height,
            width,
        );
        match spec.simulate() {
            Ok(_) => return Ok(spec),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::Scene("no valid scene".into())))
}

/// SplitMix64 finaliser; a bijection on `u64`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
