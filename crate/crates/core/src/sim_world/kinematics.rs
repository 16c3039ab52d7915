use crate::rl_core::ActionId;

/// Positions (rad) and last commanded deltas (rad/step) of joints 3 and 4.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct JointConfig {
    pub theta3: f64,
    pub theta4: f64,
    pub vel3: f64,
    pub vel4: f64,
}

impl JointConfig {
    pub fn at(theta3: f64, theta4: f64) -> Self {
        Self {
            theta3,
            theta4,
            vel3: 0.0,
            vel4: 0.0,
        }
    }
}

/// Symmetric position limits shared by both joints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLimits {
    pub min: f64,
    pub max: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self { min: -2.0, max: 2.0 }
    }
}

impl JointLimits {
    pub fn magnitude(&self) -> f64 {
        self.min.abs().max(self.max.abs())
    }

    pub fn contains(&self, theta: f64) -> bool {
        (self.min..=self.max).contains(&theta)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ArmGeometry {
    pub l1: f64,
    pub l2: f64,
    pub base: [f64; 2],
}

impl Default for ArmGeometry {
    fn default() -> Self {
        Self {
            l1: 0.2,
            l2: 0.2,
            base: [0.0, 0.14],
        }
    }
}

/// Sensor tip position (m) and the direction the sensor face points (rad).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SensorPose {
    pub tip: [f64; 2],
    pub orientation: f64,
}

pub fn forward_kinematics(joints: &JointConfig, geom: &ArmGeometry) -> SensorPose {
    let a1 = joints.theta3;
    let a2 = joints.theta3 + joints.theta4;
    SensorPose {
        tip: [
            geom.base[0] + geom.l1 * a1.cos() + geom.l2 * a2.cos(),
            geom.base[1] + geom.l1 * a1.sin() + geom.l2 * a2.sin(),
        ],
        orientation: a2,
    }
}

/// Result of executing one action on the joints.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ActionOutcome {
    pub joints: JointConfig,
    pub clamped3: bool,
    pub clamped4: bool,
}

impl ActionOutcome {
    pub fn clamped(&self) -> bool {
        self.clamped3 || self.clamped4
    }
}

pub fn apply_action(joints: &JointConfig, a: ActionId, delta: f64, limits: &JointLimits) -> ActionOutcome {
    let (d3, d4) = a.deltas();
    let cmd3 = d3 as f64 * delta;
    let cmd4 = d4 as f64 * delta;
    let (theta3, clamped3) = clamp(joints.theta3 + cmd3, limits);
    let (theta4, clamped4) = clamp(joints.theta4 + cmd4, limits);
    ActionOutcome {
        joints: JointConfig {
            theta3,
            theta4,
            vel3: cmd3,
            vel4: cmd4,
        },
        clamped3,
        clamped4,
    }
}

fn clamp(theta: f64, limits: &JointLimits) -> (f64, bool) {
    if theta < limits.min {
        (limits.min, true)
    } else if theta > limits.max {
        (limits.max, true)
    } else {
        (theta, false)
    }
}
