//! Forward-kinematic motion families on the synthetic skeleton.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::Tensor;

pub const JOINT_NAMES: [&str; 15] = [
    "pelvis",
    "spine",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_hand",
    "right_shoulder",
    "right_elbow",
    "right_hand",
    "left_hip",
    "left_knee",
    "left_foot",
    "right_hip",
    "right_knee",
    "right_foot",
];

pub const PART_NAMES: [&str; 5] = ["torso", "left_arm", "right_arm", "left_leg", "right_leg"];

const PARENT: [usize; 15] = [0, 0, 1, 1, 3, 4, 1, 6, 7, 0, 9, 10, 0, 12, 13];

/// Rest-pose offset of each joint from its parent; y up, x toward the left side.
const OFFSET: [[f64; 3]; 15] = [
    [0.0, 1.0, 0.0],
    [0.0, 0.3, 0.0],
    [0.0, 0.3, 0.0],
    [0.2, 0.15, 0.0],
    [0.0, -0.28, 0.0],
    [0.0, -0.25, 0.0],
    [-0.2, 0.15, 0.0],
    [0.0, -0.28, 0.0],
    [0.0, -0.25, 0.0],
    [0.1, 0.0, 0.0],
    [0.0, -0.45, 0.0],
    [0.0, -0.45, 0.0],
    [-0.1, 0.0, 0.0],
    [0.0, -0.45, 0.0],
    [0.0, -0.45, 0.0],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum MotionClass {
    ArmRaise = 0,
    Wave = 1,
    Squat = 2,
    Jump = 3,
    Lean = 4,
    Kick = 5,
}

impl MotionClass {
    pub const ALL: [MotionClass; 6] = [
        MotionClass::ArmRaise,
        MotionClass::Wave,
        MotionClass::Squat,
        MotionClass::Jump,
        MotionClass::Lean,
        MotionClass::Kick,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MotionClass::ArmRaise => "arm-raise",
            MotionClass::Wave => "wave",
            MotionClass::Squat => "squat",
            MotionClass::Jump => "jump",
            MotionClass::Lean => "lean",
            MotionClass::Kick => "kick",
        }
    }
}

/// Per-subject body scale, tempo and range of motion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectStyle {
    pub scale: f64,
    pub cycles: f64,
    pub amplitude: f64,
}

impl Default for SubjectStyle {
    fn default() -> Self {
        Self {
            scale: 1.0,
            cycles: 1.5,
            amplitude: 1.0,
        }
    }
}

impl SubjectStyle {
    pub fn draw(rng: &mut impl Rng) -> Self {
        Self {
            scale: rng.random_range(0.85..1.15),
            cycles: rng.random_range(1.0..2.0),
            amplitude: rng.random_range(0.8..1.2),
        }
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// Rotation in the frontal (x-y) plane.
fn rot_z(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]
}

/// Rotation in the sagittal (y-z) plane.
fn rot_x(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]
}

/// Rotation about the vertical axis.
fn rot_y(a: f64) -> Mat3 {
    let (s, c) = a.sin_cos();
    [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]
}

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn apply(m: &Mat3, v: &[f64; 3]) -> [f64; 3] {
    [0, 1, 2].map(|i| m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2])
}

/// Local joint rotations and root displacement for one frame, `u` in `[0, 1]`.
fn pose(class: MotionClass, u: f64, osc: f64, amp: f64) -> ([Mat3; 15], [f64; 3]) {
    let mut local = [IDENTITY; 15];
    let mut root = [0.0; 3];
    match class {
        MotionClass::ArmRaise => {
            local[6] = rot_z(-2.5 * amp * u);
        }
        MotionClass::Wave => {
            local[6] = rot_z(-2.2);
            local[7] = rot_z(0.7 * amp * osc);
        }
        MotionClass::Squat => {
            root[1] = -0.35 * amp * u;
            local[9] = rot_x(-1.2 * amp * u);
            local[12] = rot_x(-1.2 * amp * u);
            local[10] = rot_x(2.0 * amp * u);
            local[13] = rot_x(2.0 * amp * u);
            local[1] = rot_x(-0.4 * amp * u);
        }
        MotionClass::Jump => {
            root[1] = 0.3 * amp * u;
            local[3] = rot_z(1.2 * amp * u);
            local[6] = rot_z(-1.2 * amp * u);
            local[10] = rot_x(0.8 * amp * u);
            local[13] = rot_x(0.8 * amp * u);
        }
        MotionClass::Lean => {
            local[1] = rot_z(0.6 * amp * u);
            local[2] = rot_z(0.3 * amp * u);
        }
        MotionClass::Kick => {
            local[12] = rot_x(-1.4 * amp * u);
            local[13] = rot_x(0.3 * amp * u);
        }
    }
    (local, root)
}

/// Joint positions `[3, T, V, M]` of a motion seen from camera `view` (1-based).
///
/// Identical arguments always yield identical tensors.
pub fn render_motion(
    class: MotionClass,
    style: &SubjectStyle,
    phase: f64,
    view: u32,
    frames: usize,
    persons: usize,
) -> Tensor<f64> {
    let yaw = match view {
        1 => 0.0,
        2 => -PI / 4.0,
        3 => PI / 4.0,
        v => (v as f64) * PI / 6.0,
    };
    let camera = rot_y(yaw);
    let (v_n, m_n) = (JOINT_NAMES.len(), persons);
    let mut out = Tensor::zeros(&[3, frames, v_n, m_n]);
    let data = out.data_mut();
    for t in 0..frames {
        for m in 0..m_n {
            let w = TAU * style.cycles * t as f64 / frames as f64 + phase + m as f64 * 0.5;
            let u = 0.5 * (1.0 - w.cos());
            let osc = (3.0 * w).sin();
            let (local, root) = pose(class, u, osc, style.amplitude);
            let mut pos = [[0.0; 3]; 15];
            let mut glob = [IDENTITY; 15];
            for j in 0..v_n {
                let p = PARENT[j];
                let off = OFFSET[j].map(|x| x * style.scale);
                if j == 0 {
                    pos[0] = [
                        off[0] + root[0] + m as f64,
                        off[1] + root[1] * style.scale,
                        off[2] + root[2],
                    ];
                    glob[0] = local[0];
                } else {
                    let d = apply(&glob[p], &off);
                    pos[j] = [pos[p][0] + d[0], pos[p][1] + d[1], pos[p][2] + d[2]];
                    glob[j] = mul(&glob[p], &local[j]);
                }
            }
            for (j, p) in pos.iter().enumerate() {
                let q = apply(&camera, p);
                for c in 0..3 {
                    data[((c * frames + t) * v_n + j) * m_n + m] = q[c];
                }
            }
        }
    }
    out
}
