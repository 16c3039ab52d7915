//! RL formalization: state, the 9-action space, the band reward, and the
//! increase/decrease/unchanged classification of actions that drives both the
//! behavior policy and the good-action metric.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::sim_world::JointConfig;
use crate::tactile_image::{ContactRate, TactileImage};

pub const NUM_ACTIONS: usize = 9;

/// One of the nine joint-delta commands.
///
/// Index `i` moves joint 3 by `i / 3 - 1` and joint 4 by `i % 3 - 1` steps,
/// so index 4 is the null action.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ActionId(u8);

impl ActionId {
    pub const NULL: ActionId = ActionId(4);

    pub const ALL: [ActionId; NUM_ACTIONS] = [
        ActionId(0),
        ActionId(1),
        ActionId(2),
        ActionId(3),
        ActionId(4),
        ActionId(5),
        ActionId(6),
        ActionId(7),
        ActionId(8),
    ];

    pub fn new(index: u8) -> Option<Self> {
        (index < NUM_ACTIONS as u8).then_some(ActionId(index))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    /// Direction multipliers `(d3, d4)` in `{-1, 0, 1}²`.
    pub fn deltas(self) -> (i8, i8) {
        let i = self.0 as i8;
        (i / 3 - 1, i % 3 - 1)
    }

    pub fn from_deltas(d3: i8, d4: i8) -> Option<Self> {
        if !(-1..=1).contains(&d3) || !(-1..=1).contains(&d4) {
            return None;
        }
        Some(ActionId(((d3 + 1) * 3 + (d4 + 1)) as u8))
    }
}

impl fmt::Display for ActionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// RL state: the preprocessed tactile frame plus the two controlled joints.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub image: TactileImage,
    pub joints: JointConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Reward(f64);

impl Reward {
    pub const IN_BAND: Reward = Reward(10.0);
    pub const NONE: Reward = Reward(0.0);

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn from_value(v: f64) -> Option<Self> {
        if v == 10.0 {
            Some(Self::IN_BAND)
        } else if v == 0.0 {
            Some(Self::NONE)
        } else {
            None
        }
    }
}

/// Desired ContactRate interval (closed).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactBand {
    pub cr_min: f64,
    pub cr_max: f64,
}

impl Default for ContactBand {
    fn default() -> Self {
        Self {
            cr_min: 20.0,
            cr_max: 40.0,
        }
    }
}

impl ContactBand {
    pub fn new(cr_min: f64, cr_max: f64) -> Result<Self> {
        if !(cr_min < cr_max) || cr_min < 0.0 || cr_max > 1000.0 {
            return Err(Error::Config(format!("invalid contact band [{cr_min}, {cr_max}]")));
        }
        Ok(Self { cr_min, cr_max })
    }

    pub fn ideal(&self) -> f64 {
        (self.cr_min + self.cr_max) / 2.0
    }

    pub fn contains(&self, cr: ContactRate) -> bool {
        (self.cr_min..=self.cr_max).contains(&cr.value())
    }

    pub fn regime(&self, cr: ContactRate) -> ContactRegime {
        if cr.value() < self.cr_min {
            ContactRegime::Low
        } else if cr.value() > self.cr_max {
            ContactRegime::High
        } else {
            ContactRegime::InBand
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ContactRegime {
    Low,
    InBand,
    High,
}

pub fn reward(cr: ContactRate, band: &ContactBand) -> Reward {
    if band.contains(cr) {
        Reward::IN_BAND
    } else {
        Reward::NONE
    }
}

/// Effect of an action on the ContactRate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionEffectClass {
    Increase,
    Decrease,
    Unchanged,
}

impl ActionEffectClass {
    pub fn tag(self) -> &'static str {
        match self {
            ActionEffectClass::Increase => "IC",
            ActionEffectClass::Decrease => "DC",
            ActionEffectClass::Unchanged => "UC",
        }
    }
}

impl FromStr for ActionEffectClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "IC" => Ok(ActionEffectClass::Increase),
            "DC" => Ok(ActionEffectClass::Decrease),
            "UC" => Ok(ActionEffectClass::Unchanged),
            other => Err(Error::Config(format!("unknown action class {other:?}"))),
        }
    }
}

/// Total map from the nine actions to their effect class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ActionClasses([ActionEffectClass; NUM_ACTIONS]);

impl ActionClasses {
    /// Builds a map, requiring the null action to be unchanged and both the
    /// increasing and decreasing subsets to be nonempty.
    pub fn new(classes: [ActionEffectClass; NUM_ACTIONS]) -> Result<Self> {
        if classes[ActionId::NULL.index()] != ActionEffectClass::Unchanged {
            return Err(Error::Classification("null action must be UC".into()));
        }
        for c in [ActionEffectClass::Increase, ActionEffectClass::Decrease] {
            if !classes.contains(&c) {
                return Err(Error::Classification(format!("no action in {}", c.tag())));
            }
        }
        Ok(Self(classes))
    }

    pub fn class_of(&self, a: ActionId) -> ActionEffectClass {
        self.0[a.index()]
    }

    pub fn subset(&self, class: ActionEffectClass) -> Vec<ActionId> {
        ActionId::ALL
            .into_iter()
            .filter(|a| self.class_of(*a) == class)
            .collect()
    }

    pub fn subset_excluding(&self, class: ActionEffectClass) -> Vec<ActionId> {
        ActionId::ALL
            .into_iter()
            .filter(|a| self.class_of(*a) != class)
            .collect()
    }

    /// Audit table: one `actionId class` line per action.
    pub fn to_table(&self) -> String {
        ActionId::ALL
            .iter()
            .map(|a| format!("{} {}\n", a, self.class_of(*a).tag()))
            .collect()
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut classes = [None; NUM_ACTIONS];
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let mut parts = line.split_whitespace();
            let (Some(id), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::Config(format!("malformed class line {line:?}")));
            };
            let id: u8 = id
                .parse()
                .map_err(|_| Error::Config(format!("bad action id {id:?}")))?;
            let a = ActionId::new(id).ok_or_else(|| Error::Config(format!("action id {id} out of range")))?;
            classes[a.index()] = Some(tag.parse()?);
        }
        let mut out = [ActionEffectClass::Unchanged; NUM_ACTIONS];
        for (i, c) in classes.iter().enumerate() {
            out[i] = c.ok_or_else(|| Error::Config(format!("missing class for action {i}")))?;
        }
        Self::new(out)
    }
}

/// Measures ContactRate changes caused by single actions from a fixed
/// in-contact reference pose.
pub trait ContactProbe {
    fn reference_rate(&mut self) -> Result<ContactRate>;
    fn rate_after(&mut self, a: ActionId) -> Result<ContactRate>;
}

/// Default UC tolerance in ContactRate units.
pub const DEFAULT_CLASS_EPSILON: f64 = 5.0;

/// Classifies every action by its measured effect on the ContactRate.
pub fn classify_actions<P: ContactProbe + ?Sized>(probe: &mut P, epsilon: f64) -> Result<ActionClasses> {
    let reference = probe.reference_rate()?;
    if reference.value() <= 0.0 {
        return Err(Error::Classification("probe pose is not in contact".into()));
    }
    let mut classes = [ActionEffectClass::Unchanged; NUM_ACTIONS];
    for a in ActionId::ALL {
        if a == ActionId::NULL {
            continue;
        }
        let delta = probe.rate_after(a)?.value() - reference.value();
        classes[a.index()] = if delta > epsilon {
            ActionEffectClass::Increase
        } else if delta < -epsilon {
            ActionEffectClass::Decrease
        } else {
            ActionEffectClass::Unchanged
        };
    }
    ActionClasses::new(classes)
}

/// Actions that move toward (or, in band, keep) the desired contact status.
pub fn good_actions(cr: ContactRate, band: &ContactBand, classes: &ActionClasses) -> Vec<ActionId> {
    classes.subset(good_class(cr, band))
}

pub fn good_class(cr: ContactRate, band: &ContactBand) -> ActionEffectClass {
    match band.regime(cr) {
        ContactRegime::Low => ActionEffectClass::Increase,
        ContactRegime::InBand => ActionEffectClass::Unchanged,
        ContactRegime::High => ActionEffectClass::Decrease,
    }
}
