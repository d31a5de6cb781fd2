//! Motion compensation of buffered actions.
//!
//! An action generated while the platform sat at `p_gen` and executed when
//! it sits at `p_exec` is corrected by
//! `δ = E⁻¹ ∘ (Δp_gen⁻¹ ∘ Δp*_exec)⁻¹ ∘ E`, where both relative poses are
//! taken w.r.t. the latest pose sample `p0` and `E` is the arm base pose in
//! the sensor frame. `Δp_gen⁻¹ ∘ Δp*_exec = p_gen⁻¹ ∘ p_exec`, so `δ` undoes
//! the platform motion between generation and execution, seen from the arm.
//!
//! Frame indices: the generation pose sits `⌈Δt_τ·f⌉` frames before `p0`
//! (`Δt_τ = t0 - t_gen`; a negative lag reads the predicted segment), the
//! execution pose `⌊Δt·f⌋` frames after it.

use serde::{Deserialize, Serialize};

use crate::action::{bracket, Action, ActionBuffer, BufferEntry};
use crate::error::{Error, Result};
use crate::geometry::{Extrinsics, Pose};
use crate::history::PoseHistory;
use crate::predictor::{build_input, MotionPredictor, RelativePoseSeq};

const INDEX_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CompensationContext {
    pub extrinsics: Extrinsics,
    /// Total latency `Δt` from pose sample to action taking effect.
    pub latency: f64,
    pub pose_frequency: f64,
    /// `Δt_τ`: time from the action's generation to the reference pose `p0`.
    pub generation_lag: f64,
}

/// Rigid correction applied to an arm-frame action.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Offset {
    pub delta: Pose,
}

impl Offset {
    pub fn identity() -> Self {
        Self {
            delta: Pose::identity(),
        }
    }
}

/// Frame index of the execution pose, `⌊Δt·f⌋ ≥ 0`.
pub fn execution_index(latency: f64, frequency: f64) -> i64 {
    (latency * frequency + INDEX_EPS).floor().max(0.0) as i64
}

/// Frame index of the generation pose: `-⌈Δt_τ·f⌉` for a non-negative lag,
/// `⌊-Δt_τ·f⌋` (a predicted frame) otherwise.
pub fn generation_index(generation_lag: f64, frequency: f64) -> i64 {
    if generation_lag >= 0.0 {
        -((generation_lag * frequency - INDEX_EPS).ceil().max(0.0) as i64)
    } else {
        (-generation_lag * frequency + INDEX_EPS).floor() as i64
    }
}

/// `E⁻¹ ∘ (gen⁻¹ ∘ exec)⁻¹ ∘ E`.
pub fn offset_between(extrinsics: &Extrinsics, generation: &Pose, execution: &Pose) -> Offset {
    let motion = generation.relative(execution);
    Offset {
        delta: extrinsics.conjugate(&motion.inverse()),
    }
}

fn lookup(index: i64, past: &RelativePoseSeq, predicted: &RelativePoseSeq) -> Result<Pose> {
    let seq = if index < 0 { past } else { predicted };
    seq.at_index(index).ok_or(Error::IndexOutOfRange {
        index,
        len: seq.len(),
    })
}

/// Offset for one action, reading both relative poses from the current
/// prediction window (past segment plus predicted segment).
pub fn compute_offset(
    ctx: &CompensationContext,
    past: &RelativePoseSeq,
    predicted: &RelativePoseSeq,
) -> Result<Offset> {
    let gen = lookup(generation_index(ctx.generation_lag, ctx.pose_frequency), past, predicted)?;
    let exec = lookup(execution_index(ctx.latency, ctx.pose_frequency), past, predicted)?;
    Ok(offset_between(&ctx.extrinsics, &gen, &exec))
}

/// `A' = δ · A`; the gripper channel passes through untouched.
pub fn compensate(a: &Action, off: &Offset) -> Action {
    Action {
        position: off.delta.transform_point(&a.position),
        gripper: a.gripper,
    }
}

/// Where the generation-time relative pose comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GenerationPose {
    /// Look the generation pose up in the logged pose history.
    #[default]
    Logged,
    /// Read it from the predictor's input window only; fails once the
    /// action is older than the window.
    Window,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stabilizer {
    pub extrinsics: Extrinsics,
    pub latency: f64,
    pub pose_frequency: f64,
    pub generation: GenerationPose,
}

/// One control tick's output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilizedAction {
    /// Interpolated buffer action before compensation.
    pub raw: Action,
    pub compensated: Action,
    /// Offset applied to the contribution with the largest share.
    pub offset: Offset,
    /// Time of the reference pose `p0`.
    pub reference_time: f64,
    /// Predicted sensor pose at execution, `p0 ∘ Δp*_exec`.
    pub predicted_pose: Pose,
}

impl Stabilizer {
    /// Interpolates the buffer at `tau` and compensates every contribution
    /// for the platform motion between its generation and execution.
    ///
    /// Buffered values can mix actions generated at different times, so
    /// each contribution gets its own offset and the compensated points are
    /// blended with the same coefficients as the raw ones. When every
    /// contribution shares one generation time this is `δ · interpolate(tau)`.
    pub fn stabilized_action(
        &self,
        buf: &ActionBuffer,
        tau: f64,
        history: &PoseHistory,
        predictor: &dyn MotionPredictor,
    ) -> Result<StabilizedAction> {
        let br = bracket(buf, tau)?;
        let raw = br.action();
        let p0 = *history
            .latest()
            .ok_or_else(|| Error::InsufficientHistory("no pose samples yet".into()))?;
        let f = self.pose_frequency;
        let past = build_input(history, p0.time, predictor.input_frames(), f)?;
        let exec_idx = execution_index(self.latency, f);

        let mut predicted: Option<RelativePoseSeq> = None;
        let predicted_at = |idx: i64,
                                predicted: &mut Option<RelativePoseSeq>|
         -> Result<Pose> {
            if idx == 0 {
                return Ok(Pose::identity());
            }
            if predicted.is_none() {
                let out = predictor.predict(&past)?;
                if out.len() != predictor.output_frames() {
                    return Err(Error::DimensionMismatch {
                        expected: predictor.output_frames(),
                        got: out.len(),
                    });
                }
                *predicted = Some(out);
            }
            let seq = predicted.as_ref().unwrap();
            seq.at_index(idx).ok_or(Error::IndexOutOfRange {
                index: idx,
                len: seq.len(),
            })
        };
        let exec_rel = predicted_at(exec_idx, &mut predicted)?;

        let p0_inv = p0.pose.inverse();
        let mut offsets: Vec<(f64, Offset)> = Vec::new();
        let mut position = crate::geometry::Vec3::zeros();
        let mut dominant = (f64::NEG_INFINITY, Offset::identity());

        let mut entries: Vec<(&BufferEntry, f64)> = vec![(br.lower, 1.0 - br.lambda)];
        if let Some(upper) = br.upper {
            if br.lambda > 0.0 {
                entries.push((upper, br.lambda));
            }
        }
        for (entry, share) in entries {
            let fallback;
            let contributions = if entry.contributions.is_empty() {
                fallback = [crate::action::Contribution {
                    generated_at: p0.time,
                    coefficient: 1.0,
                    action: entry.action,
                }];
                &fallback[..]
            } else {
                &entry.contributions[..]
            };
            for c in contributions {
                let off = match offsets.iter().find(|(t, _)| *t == c.generated_at) {
                    Some((_, off)) => *off,
                    None => {
                        let lag = p0.time - c.generated_at;
                        let gen_idx = generation_index(lag, f);
                        let gen_rel = if gen_idx > 0 {
                            predicted_at(gen_idx, &mut predicted)?
                        } else if gen_idx == 0 {
                            Pose::identity()
                        } else {
                            match self.generation {
                                GenerationPose::Window => past.at_index(gen_idx).ok_or(
                                    Error::IndexOutOfRange {
                                        index: gen_idx,
                                        len: past.len(),
                                    },
                                )?,
                                GenerationPose::Logged => {
                                    let t = p0.time + gen_idx as f64 / f;
                                    let s = history.nearest_within(t, 0.5 / f + 1e-9)?;
                                    p0_inv.compose(&s.pose)
                                }
                            }
                        };
                        let off = offset_between(&self.extrinsics, &gen_rel, &exec_rel);
                        offsets.push((c.generated_at, off));
                        off
                    }
                };
                let weight = share * c.coefficient;
                position += compensate(&c.action, &off).position * weight;
                if weight > dominant.0 {
                    dominant = (weight, off);
                }
            }
        }
        Ok(StabilizedAction {
            raw,
            compensated: Action {
                position,
                gripper: raw.gripper,
            },
            offset: dominant.1,
            reference_time: p0.time,
            predicted_pose: p0.pose.compose(&exec_rel),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Vec3, ATOMIC_TOL};
    use std::f64::consts::FRAC_PI_2;

    fn ctx(extrinsics: Extrinsics, latency: f64, lag: f64) -> CompensationContext {
        CompensationContext {
            extrinsics,
            latency,
            pose_frequency: 200.0,
            generation_lag: lag,
        }
    }

    #[test]
    fn index_conventions() {
        assert_eq!(execution_index(0.15, 200.0), 30);
        assert_eq!(execution_index(0.0, 200.0), 0);
        assert_eq!(generation_index(0.2, 200.0), -40);
        assert_eq!(generation_index(0.0, 200.0), 0);
        assert_eq!(generation_index(-0.05, 200.0), 10);
        // a lag that is not a whole number of frames rounds away from p0
        assert_eq!(generation_index(0.0121, 200.0), -3);
    }

    #[test]
    fn no_motion_is_identity() {
        let past = RelativePoseSeq::past(0.0, 200.0, vec![Pose::identity(); 40]);
        let pred = RelativePoseSeq::future(0.0, 200.0, vec![Pose::identity(); 100]);
        let off = compute_offset(&ctx(Extrinsics::identity(), 0.1, 0.1), &past, &pred).unwrap();
        assert!(off.delta.approx_eq(&Pose::identity(), ATOMIC_TOL));
    }

    fn moving_windows() -> (RelativePoseSeq, RelativePoseSeq) {
        // the platform sits still in the past and has moved +0.02 m in x
        // by predicted frame 20
        let past = RelativePoseSeq::past(0.0, 200.0, vec![Pose::identity(); 40]);
        let pred = RelativePoseSeq::future(
            0.0,
            200.0,
            (1..=100)
                .map(|i| Pose::from_translation(0.001 * (i.min(20)) as f64, 0.0, 0.0))
                .collect(),
        );
        (past, pred)
    }

    #[test]
    fn translation_undone_identity_extrinsics() {
        let (past, pred) = moving_windows();
        let off = compute_offset(&ctx(Extrinsics::identity(), 0.1, 0.1), &past, &pred).unwrap();
        assert!(off.delta.approx_eq(&Pose::from_translation(-0.02, 0.0, 0.0), ATOMIC_TOL));
    }

    #[test]
    fn translation_undone_rotated_extrinsics() {
        let (past, pred) = moving_windows();
        let e = Extrinsics(Pose::from_axis_angle(Vec3::z(), FRAC_PI_2, Vec3::new(0.1, 0.0, -0.05)));
        let off = compute_offset(&ctx(e, 0.1, 0.1), &past, &pred).unwrap();
        // homogeneous-matrix oracle: E⁻¹ M⁻¹ E
        let m = Pose::from_translation(0.02, 0.0, 0.0).to_homogeneous();
        let em = e.0.to_homogeneous();
        let oracle = em.try_inverse().unwrap() * m.try_inverse().unwrap() * em;
        assert!((off.delta.to_homogeneous() - oracle).abs().max() < ATOMIC_TOL);
        // sensor +x motion shows up along arm -y; the correction is +y
        assert!(off.delta.approx_eq(&Pose::from_translation(0.0, 0.02, 0.0), ATOMIC_TOL));
    }

    #[test]
    fn out_of_window_indices() {
        let (past, pred) = moving_windows();
        let e = Extrinsics::identity();
        assert!(matches!(
            compute_offset(&ctx(e, 0.6, 0.0), &past, &pred),
            Err(Error::IndexOutOfRange { index: 120, .. })
        ));
        assert!(matches!(
            compute_offset(&ctx(e, 0.1, 0.5), &past, &pred),
            Err(Error::IndexOutOfRange { index: -100, .. })
        ));
    }

    #[test]
    fn compensate_cases() {
        let a = Action::at(0.3, 0.0, 0.1).with_gripper(0.7);
        assert_eq!(compensate(&a, &Offset::identity()), a);
        let shifted = compensate(
            &a,
            &Offset {
                delta: Pose::from_translation(-0.02, 0.0, 0.0),
            },
        );
        assert!((shifted.position - Vec3::new(0.28, 0.0, 0.1)).norm() < 1e-15);
        assert_eq!(shifted.gripper.to_bits(), a.gripper.to_bits());
        let rot = Offset {
            delta: Pose::from_axis_angle(Vec3::z(), 0.3, Vec3::new(0.01, 0.0, 0.0)),
        };
        let c = compensate(&a, &rot);
        assert_eq!(c.position, rot.delta.transform_point(&a.position));
    }
}
