use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ObjectState, RenderedClip, Scenario, SceneSpec};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    None,
    TimeReverse,
    GravityFlip,
    Teleport,
    EnergyGainBounce,
    FreezeJump,
}

impl ViolationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ViolationKind::None => "none",
            ViolationKind::TimeReverse => "time_reverse",
            ViolationKind::GravityFlip => "gravity_flip",
            ViolationKind::Teleport => "teleport",
            ViolationKind::EnergyGainBounce => "energy_gain_bounce",
            ViolationKind::FreezeJump => "freeze_jump",
        }
    }
}

/// A violation and the seed that fixes its magnitudes:
/// teleport jumps `U(8, 10) * radius` at a frame in `[3, N-3)`; energy gain uses
/// restitution `U(1.3, 1.5)`; freeze-jump holds a frame in `[2, N-6)` for 2 to 4 frames.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationSpec {
    pub kind: ViolationKind,
    pub seed: u64,
}

impl ViolationSpec {
    pub fn none() -> Self {
        Self {
            kind: ViolationKind::None,
            seed: 0,
        }
    }
}

/// Violations that break a law the scenario actually exhibits.
pub fn compatible_violations(s: Scenario) -> &'static [ViolationKind] {
    use ViolationKind::*;
    match s {
        Scenario::GravityDrop => &[TimeReverse, GravityFlip, Teleport, FreezeJump],
        Scenario::Bounce => &[TimeReverse, GravityFlip, Teleport, EnergyGainBounce, FreezeJump],
        Scenario::Projectile => &[TimeReverse, GravityFlip, Teleport, FreezeJump],
        Scenario::Pendulum => &[Teleport, FreezeJump],
        Scenario::Rotation => &[FreezeJump],
        Scenario::FrictionSlide => &[TimeReverse, Teleport, FreezeJump],
    }
}

fn teleport(spec: &SceneSpec, states: &[ObjectState], rng: &mut ChaCha8Rng) -> Result<Vec<ObjectState>> {
    let n = states.len();
    if n < 7 {
        return Err(Error::Scene("teleport needs at least 7 frames".into()));
    }
    let k = rng.gen_range(3..n - 3);
    let dist = rng.gen_range(8.0..10.0) * spec.params.radius;
    let phase = rng.gen_range(0.0..std::f32::consts::TAU);
    for j in 0..32 {
        let a = phase + std::f32::consts::TAU * j as f32 / 32.0;
        let (dx, dy) = (dist * a.cos(), dist * a.sin());
        let moved: Vec<ObjectState> = states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if i >= k {
                    ObjectState {
                        x: s.x + dx,
                        y: s.y + dy,
                        ..*s
                    }
                } else {
                    *s
                }
            })
            .collect();
        if spec.check_in_frame(&moved).is_ok() {
            return Ok(moved);
        }
    }
    Err(Error::Scene(format!("no room to teleport {dist:.1} px")))
}

/// Tampers with a rendered clip. The result is re-rendered from its modified
/// trajectory (or reordered frames) and carries matching analytic flow.
pub fn inject_violation(spec: &SceneSpec, clip: &RenderedClip, v: &ViolationSpec) -> Result<RenderedClip> {
    if v.kind != ViolationKind::None && !compatible_violations(spec.scenario).contains(&v.kind) {
        return Err(Error::IncompatibleViolation {
            scenario: spec.scenario.as_str().into(),
            violation: v.kind.as_str().into(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(v.seed);
    let n = clip.states.len();
    let out = |states: Vec<ObjectState>, frames| -> Result<RenderedClip> {
        Ok(RenderedClip {
            flow: spec.truth_flow(&states)?,
            frames,
            caption: clip.caption.clone(),
            states,
        })
    };
    match v.kind {
        ViolationKind::None => Ok(clip.clone()),
        ViolationKind::TimeReverse => {
            let states: Vec<_> = clip.states.iter().rev().copied().collect();
            out(states, clip.frames.reversed())
        }
        ViolationKind::GravityFlip => {
            let top = spec.height as f32 - 1.0;
            let states: Vec<_> = clip.states.iter().map(|s| ObjectState { y: top - s.y, ..*s }).collect();
            spec.check_in_frame(&states)?;
            let frames = spec.render_states(&states)?;
            out(states, frames)
        }
        ViolationKind::Teleport => {
            let states = teleport(spec, &clip.states, &mut rng)?;
            let frames = spec.render_states(&states)?;
            out(states, frames)
        }
        ViolationKind::EnergyGainBounce => {
            let e = rng.gen_range(1.3..1.5);
            let states = spec.simulate_with(spec.params.gravity, e)?;
            let frames = spec.render_states(&states)?;
            out(states, frames)
        }
        ViolationKind::FreezeJump => {
            if n < 8 {
                return Err(Error::Scene("freeze-jump needs at least 8 frames".into()));
            }
            let k = rng.gen_range(2..n - 6);
            let hold = rng.gen_range(2..=4);
            // frames k..k+hold show frame k, then playback resumes at its true time
            let index: Vec<usize> = (0..n).map(|i| if i > k && i < k + hold { k } else { i }).collect();
            let states: Vec<_> = index.iter().map(|&i| clip.states[i]).collect();
            let frames = spec.render_states(&states)?;
            out(states, frames)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::{render_scene, sample_scene};
    use super::*;
    use crate::optflow::{estimate_flow, FlowEstimatorConfig};

    fn clip(s: Scenario, seed: u64) -> (SceneSpec, RenderedClip) {
        let spec = sample_scene(s, seed, 16, 64, 64).unwrap();
        let c = render_scene(&spec).unwrap();
        (spec, c)
    }

    #[test]
    fn none_is_identity_and_reverse_is_involution() {
        let (spec, c) = clip(Scenario::Bounce, 1);
        assert_eq!(inject_violation(&spec, &c, &ViolationSpec::none()).unwrap(), c);
        let tr = ViolationSpec {
            kind: ViolationKind::TimeReverse,
            seed: 0,
        };
        let once = inject_violation(&spec, &c, &tr).unwrap();
        assert_ne!(once.frames, c.frames);
        let twice = inject_violation(&spec, &once, &tr).unwrap();
        assert_eq!(twice.frames.data(), c.frames.data());
        assert_eq!(twice.flow, c.flow);
    }

    #[test]
    fn incompatible_pairs_are_rejected() {
        let (spec, c) = clip(Scenario::Rotation, 2);
        let v = ViolationSpec {
            kind: ViolationKind::EnergyGainBounce,
            seed: 0,
        };
        assert!(matches!(
            inject_violation(&spec, &c, &v),
            Err(Error::IncompatibleViolation { .. })
        ));
    }

    #[test]
    fn every_compatible_violation_applies() {
        for s in Scenario::ALL {
            for &kind in compatible_violations(s) {
                let ok = (0..10).any(|seed| {
                    let (spec, c) = clip(s, seed);
                    inject_violation(&spec, &c, &ViolationSpec { kind, seed })
                        .map(|v| v.frames != c.frames)
                        .unwrap_or(false)
                });
                assert!(ok, "{s:?} {kind:?}");
            }
        }
    }

    /// Estimated flow magnitude at the jump frame over the clip median.
    fn jump_ratio(s: Scenario, seed: u64) -> Option<f32> {
        let (spec, c) = clip(s, seed);
        let t = inject_violation(
            &spec,
            &c,
            &ViolationSpec {
                kind: ViolationKind::Teleport,
                seed,
            },
        )
        .ok()?;
        let step = |i: usize| (t.states[i].x - t.states[i - 1].x).hypot(t.states[i].y - t.states[i - 1].y);
        let jump = (1..16).max_by(|&a, &b| step(a).total_cmp(&step(b)))?;
        let est = estimate_flow(&t.frames, &FlowEstimatorConfig::default()).unwrap();
        let mut mags: Vec<f32> = (1..16).map(|i| est.mean_magnitude(i)).collect();
        mags.sort_by(f32::total_cmp);
        Some(est.mean_magnitude(jump) / mags[mags.len() / 2])
    }

    #[test]
    fn teleport_jump_stands_out_in_estimated_flow() {
        let ratios: Vec<f32> = Scenario::ALL
            .into_iter()
            .filter(|s| compatible_violations(*s).contains(&ViolationKind::Teleport))
            .flat_map(|s| (0..8).filter_map(move |seed| jump_ratio(s, seed)))
            .collect();
        let above = ratios.iter().filter(|r| **r > 3.0).count();
        eprintln!("teleport jump above 3x median flow on {above}/{} clips", ratios.len());
        // jumps of 24 to 45 px exceed the pyramid search range, so some clips miss
        assert!(above * 2 > ratios.len(), "{ratios:?}");
        let mut sorted = ratios.clone();
        sorted.sort_by(f32::total_cmp);
        assert!(sorted[sorted.len() / 2] > 3.0);
    }

    #[test]
    fn freeze_jump_holds_then_skips() {
        let (spec, c) = clip(Scenario::FrictionSlide, 4);
        let v = ViolationSpec {
            kind: ViolationKind::FreezeJump,
            seed: 9,
        };
        let f = inject_violation(&spec, &c, &v).unwrap();
        let held = (1..16).filter(|&i| f.states[i] == f.states[i - 1]).count();
        assert!(held >= 1);
        assert_eq!(f.states[0], c.states[0]);
        assert_eq!(f.states[15], c.states[15]);
    }

    #[test]
    fn gravity_flip_mirrors_motion() {
        let (spec, c) = clip(Scenario::GravityDrop, 6);
        let v = ViolationSpec {
            kind: ViolationKind::GravityFlip,
            seed: 0,
        };
        let f = inject_violation(&spec, &c, &v).unwrap();
        assert!(f.states[15].y < f.states[0].y);
        assert!(c.states[15].y > c.states[0].y);
    }
}
