//! Scenario files: a map, a start pose, robot parameters, optional
//! disinfection targets and a timed script of operator actions.
//!
//! ```yaml
//! seed: 7
//! map: { file: ward.yaml }        # or { fixture: two_rooms } / { walled_room: [6, 4] }
//! start: [1.0, 2.0, 0.0]
//! lamps: { count: 1 }
//! targets: { required_dose: 100, points: [[3.0, 2.0]] }
//! script:
//!   - { at: 0.0, lamp: true }
//!   - { at: 1.0, autonomy: autonomous }
//!   - { at: 1.0, goal: { x: 4.0, y: 2.0 } }
//!   - { at: 1.0, wait_goal: { timeout: 60 } }
//! duration: 120
//! ```

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::de::{self, DeserializeSeed, Deserializer, IgnoredAny, MapAccess, SeqAccess, Visitor};
use serde::Deserialize;
use uvbot_core::disinfection::{DisinfectionTarget, DoseError, LampArray};
use uvbot_core::fixtures;
use uvbot_core::navigation::AssistParams;
use uvbot_core::world::WorldError;
use uvbot_core::{AutonomyLevel, CellIndex, OccupancyGrid, Point2, Pose2D, SimConfig, Twist};

use crate::mapio::{self, MapError};

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    /// Location is 1-based when known.
    #[error("{path}:{}: {message}", .line.map_or("?".to_string(), |(l, c)| format!("{l}:{c}")))]
    Parse { path: PathBuf, line: Option<(usize, usize)>, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("bad target: {0}")]
    Target(#[from] DoseError),
}

impl ScenarioError {
    fn parse(path: &Path, e: serde_yaml::Error) -> Self {
        ScenarioError::Parse {
            path: path.to_path_buf(),
            line: e.location().map(|l| (l.line(), l.column())),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "MapSpec")]
pub enum MapSource {
    /// Metadata file of a PGM map, relative to the scenario file.
    File(PathBuf),
    Fixture(Fixture),
    WalledRoom([f64; 2]),
}

/// Exactly one of the keys; a plain struct keeps the YAML free of tags.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MapSpec {
    file: Option<PathBuf>,
    fixture: Option<Fixture>,
    walled_room: Option<[f64; 2]>,
}

impl TryFrom<MapSpec> for MapSource {
    type Error = String;

    fn try_from(m: MapSpec) -> Result<Self, String> {
        match (m.file, m.fixture, m.walled_room) {
            (Some(f), None, None) => Ok(MapSource::File(f)),
            (None, Some(f), None) => Ok(MapSource::Fixture(f)),
            (None, None, Some(s)) => Ok(MapSource::WalledRoom(s)),
            _ => Err("map needs exactly one of `file`, `fixture` or `walled_room`".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    TwoRooms,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LampSpec {
    pub uvc_power: Option<f64>,
    pub count: Option<usize>,
    pub arc_radius: Option<f64>,
}

impl LampSpec {
    pub fn build(&self) -> LampArray {
        let d = LampArray::default();
        let count = self.count.unwrap_or(d.lamp_count);
        LampArray {
            uvc_power: self.uvc_power.unwrap_or(d.uvc_power),
            lamp_count: count,
            // A lone tube sits on the robot center unless told otherwise.
            arc_radius: self.arc_radius.unwrap_or(if count == 1 { 0.0 } else { d.arc_radius }),
            ..d
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssistSpec {
    pub d_stop: Option<f64>,
    pub d_slow: Option<f64>,
    pub cone_half_angle: Option<f64>,
    pub d_influence: Option<f64>,
    pub k_steer: Option<f64>,
    pub w_max: Option<f64>,
}

impl AssistSpec {
    pub fn build(&self) -> AssistParams {
        let d = AssistParams::default();
        AssistParams {
            d_stop: self.d_stop.unwrap_or(d.d_stop),
            d_slow: self.d_slow.unwrap_or(d.d_slow),
            cone_half_angle: self.cone_half_angle.unwrap_or(d.cone_half_angle),
            d_influence: self.d_influence.unwrap_or(d.d_influence),
            k_steer: self.k_steer.unwrap_or(d.k_steer),
            w_max: self.w_max.unwrap_or(d.w_max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LidarSpec {
    pub beams: Option<usize>,
    pub noise: Option<f64>,
    pub range_max: Option<f64>,
}

/// Which cells to disinfect and to what dose. Give either `required_dose`
/// (J/m²) or `log_reduction` together with the pathogen's `d90`.
#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSpec {
    pub required_dose: Option<f64>,
    pub log_reduction: Option<f64>,
    pub d90: Option<f64>,
    #[serde(default)]
    pub cells: Vec<[usize; 2]>,
    /// World points; each selects the cell containing it.
    #[serde(default)]
    pub points: Vec<[f64; 2]>,
    /// `[x_min, y_min, x_max, y_max]`; selects cells whose centers lie inside.
    #[serde(default)]
    pub rects: Vec<[f64; 4]>,
    /// Adds the fixture map's own target list.
    #[serde(default)]
    pub fixture_targets: bool,
}

impl TargetSpec {
    pub fn is_empty(&self) -> bool {
        self.cells.is_empty() && self.points.is_empty() && self.rects.is_empty() && !self.fixture_targets
    }

    pub fn resolve(
        &self,
        grid: &OccupancyGrid,
        fixture_cells: &[CellIndex],
    ) -> Result<DisinfectionTarget, ScenarioError> {
        let mut cells = Vec::new();
        for &[col, row] in &self.cells {
            if col >= grid.width() || row >= grid.height() {
                return Err(DoseError::TargetOutOfBounds { col, row }.into());
            }
            cells.push(CellIndex::new(col, row));
        }
        for &[x, y] in &self.points {
            let c = grid.world_to_cell(Point2::new(x, y)).ok_or(DoseError::World(WorldError::OutOfBounds { x, y }))?;
            cells.push(c);
        }
        for &[x0, y0, x1, y1] in &self.rects {
            for i in 0..grid.len() {
                let c = grid.cell_at_index(i);
                let p = grid.cell_center(c);
                if p.x >= x0 && p.x <= x1 && p.y >= y0 && p.y <= y1 {
                    cells.push(c);
                }
            }
        }
        if self.fixture_targets {
            if fixture_cells.is_empty() {
                return Err(ScenarioError::Invalid("fixture_targets needs a fixture map that has targets".into()));
            }
            cells.extend_from_slice(fixture_cells);
        }
        let target = match (self.required_dose, self.log_reduction, self.d90) {
            (Some(d), None, None) => DisinfectionTarget::new(cells, d)?,
            (None, Some(logs), Some(d90)) => DisinfectionTarget::from_log_reduction(cells, logs, d90)?,
            _ => {
                return Err(ScenarioError::Invalid(
                    "targets need either required_dose or both log_reduction and d90".into(),
                ))
            }
        };
        Ok(target)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Action {
    Lamp(bool),
    Velocity(Twist),
    /// Robot frame.
    ManualTarget(Point2),
    /// Map frame.
    Goal {
        target: Point2,
        heading: Option<f64>,
    },
    Autonomy(AutonomyLevel),
    Stop,
    /// The operator link drops: heartbeats stop and the session closes.
    Disconnect,
    Reconnect,
    /// Holds the script until the active goal finishes, at most `timeout` s.
    WaitGoal {
        timeout: f64,
    },
    /// Plans and executes disinfection of the scenario targets.
    Disinfect {
        spacing: f64,
        max_rounds: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Step {
    pub at: f64,
    pub action: Action,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct XY {
    x: f64,
    y: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VW {
    v: f64,
    w: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalSpec {
    x: f64,
    y: f64,
    theta: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WaitSpec {
    timeout: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DisinfectSpec {
    #[serde(default = "default_spacing")]
    spacing: f64,
    #[serde(default = "default_rounds")]
    max_rounds: usize,
}

fn default_spacing() -> f64 {
    0.5
}

fn default_rounds() -> usize {
    3
}

const ACTIONS: &[&str] = &[
    "lamp",
    "velocity",
    "manual_target",
    "goal",
    "autonomy",
    "stop",
    "disconnect",
    "reconnect",
    "wait_goal",
    "disinfect",
];

fn parse_level<E: de::Error>(s: &str) -> Result<AutonomyLevel, E> {
    s.parse()
        .map_err(|_| E::invalid_value(de::Unexpected::Str(s), &"manual, assisted_decel, assisted_steer or autonomous"))
}

/// Time of the previous step, so ordering is checked inside the step.
struct StepSeed(Option<f64>);

// Hand-written so that every error is raised while the parser still sits on
// the offending entry, which keeps line numbers in the messages.
impl<'de> DeserializeSeed<'de> for StepSeed {
    type Value = Step;

    fn deserialize<D: Deserializer<'de>>(self, d: D) -> Result<Step, D::Error> {
        struct StepVisitor(Option<f64>);

        impl<'de> Visitor<'de> for StepVisitor {
            type Value = Step;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a script step with `at` and one action")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Step, A::Error> {
                let mut at = None;
                let mut action = None;
                while let Some(key) = map.next_key::<String>()? {
                    if key == "at" {
                        let t: f64 = map.next_value()?;
                        if !(t >= 0.0) || !t.is_finite() {
                            return Err(de::Error::custom(format!("step time must be finite and >= 0, got {t}")));
                        }
                        if let Some(prev) = self.0.filter(|p| t < *p) {
                            return Err(de::Error::custom(format!(
                                "script times must be non-decreasing: {t} follows {prev}"
                            )));
                        }
                        at = Some(t);
                        continue;
                    }
                    if action.is_some() {
                        return Err(de::Error::custom(format!("step has a second action `{key}`")));
                    }
                    action = Some(match key.as_str() {
                        "lamp" => Action::Lamp(map.next_value()?),
                        "velocity" => {
                            let v: VW = map.next_value()?;
                            Action::Velocity(Twist::new(v.v, v.w))
                        }
                        "manual_target" => {
                            let p: XY = map.next_value()?;
                            Action::ManualTarget(Point2::new(p.x, p.y))
                        }
                        "goal" => {
                            let g: GoalSpec = map.next_value()?;
                            Action::Goal { target: Point2::new(g.x, g.y), heading: g.theta }
                        }
                        "autonomy" => Action::Autonomy(map.next_value::<Level>()?.0),
                        "stop" | "disconnect" | "reconnect" => {
                            map.next_value::<IgnoredAny>()?;
                            match key.as_str() {
                                "stop" => Action::Stop,
                                "disconnect" => Action::Disconnect,
                                _ => Action::Reconnect,
                            }
                        }
                        "wait_goal" => {
                            let w: WaitSpec = map.next_value()?;
                            if !(w.timeout > 0.0) {
                                return Err(de::Error::custom("wait_goal timeout must be positive"));
                            }
                            Action::WaitGoal { timeout: w.timeout }
                        }
                        "disinfect" => {
                            let s: Option<DisinfectSpec> = map.next_value()?;
                            let s =
                                s.unwrap_or(DisinfectSpec { spacing: default_spacing(), max_rounds: default_rounds() });
                            if !(s.spacing > 0.0) {
                                return Err(de::Error::custom("disinfect spacing must be positive"));
                            }
                            Action::Disinfect { spacing: s.spacing, max_rounds: s.max_rounds }
                        }
                        other => return Err(de::Error::unknown_field(other, ACTIONS)),
                    });
                }
                let at = at.ok_or_else(|| de::Error::missing_field("at"))?;
                let action = action.ok_or_else(|| de::Error::custom("step has no action"))?;
                Ok(Step { at, action })
            }
        }

        d.deserialize_map(StepVisitor(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Script(pub Vec<Step>);

impl<'de> Deserialize<'de> for Script {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        struct ScriptVisitor;

        impl<'de> Visitor<'de> for ScriptVisitor {
            type Value = Script;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of script steps")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<Script, A::Error> {
                let mut steps: Vec<Step> = Vec::new();
                while let Some(step) = seq.next_element_seed(StepSeed(steps.last().map(|s| s.at)))? {
                    steps.push(step);
                }
                Ok(Script(steps))
            }
        }

        d.deserialize_seq(ScriptVisitor)
    }
}

/// Reads the level inside the visitor so a bad name keeps its position.
struct LevelVisitor;

impl Visitor<'_> for LevelVisitor {
    type Value = AutonomyLevel;

    fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
        f.write_str("an autonomy level")
    }

    fn visit_str<E: de::Error>(self, s: &str) -> Result<AutonomyLevel, E> {
        parse_level(s)
    }
}

fn deserialize_level<'de, D: Deserializer<'de>>(d: D) -> Result<AutonomyLevel, D::Error> {
    d.deserialize_str(LevelVisitor)
}

struct Level(AutonomyLevel);

impl<'de> Deserialize<'de> for Level {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        deserialize_level(d).map(Level)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub seed: u64,
    pub map: MapSource,
    /// `[x, y, theta]`; fixtures supply their own when omitted.
    pub start: Option<[f64; 3]>,
    #[serde(default, deserialize_with = "deserialize_level")]
    pub autonomy: AutonomyLevel,
    #[serde(default)]
    pub lamps: LampSpec,
    #[serde(default)]
    pub assist: AssistSpec,
    #[serde(default)]
    pub lidar: LidarSpec,
    /// Initial battery charge, Wh; full when omitted.
    pub battery_wh: Option<f64>,
    pub targets: Option<TargetSpec>,
    #[serde(default)]
    pub script: Script,
    /// Minimum simulated time to run; the run also lasts until the last step.
    pub duration: Option<f64>,
    /// Directory relative paths resolve against; set by [`Scenario::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
}

/// Everything a run needs, with files read and targets resolved.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub grid: OccupancyGrid,
    pub start: Pose2D,
    pub config: SimConfig,
    pub target: Option<DisinfectionTarget>,
    /// Pathogen D90 when targets were given as a log reduction.
    pub d90: Option<f64>,
}

impl Scenario {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ScenarioError> {
        let mut s: Scenario = serde_yaml::from_str(text).map_err(|e| ScenarioError::parse(path, e))?;
        s.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(s)
    }

    /// Reads and checks a scenario, including that the map file exists.
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.to_path_buf(), source })?;
        let s = Self::parse(&text, path)?;
        if let MapSource::File(f) = &s.map {
            let p = s.base_dir.join(f);
            if !p.is_file() {
                return Err(ScenarioError::Io {
                    path: p,
                    source: io::Error::new(io::ErrorKind::NotFound, "map file does not exist"),
                });
            }
        }
        Ok(s)
    }

    pub fn end_time(&self) -> f64 {
        let last = self.script.0.last().map_or(0.0, |s| s.at);
        self.duration.unwrap_or(0.0).max(last)
    }

    pub fn resolve(&self) -> Result<Resolved, ScenarioError> {
        let (grid, fixture_start, fixture_cells) = match &self.map {
            MapSource::File(f) => (mapio::load_map_meta(&self.base_dir.join(f))?, None, Vec::new()),
            MapSource::Fixture(Fixture::TwoRooms) => {
                let f = fixtures::two_rooms();
                (f.grid, Some(f.start), f.targets)
            }
            MapSource::WalledRoom([w, h]) => {
                if !(*w >= 1.0 && *h >= 1.0) {
                    return Err(ScenarioError::Invalid("walled_room needs sides of at least 1 m".into()));
                }
                (fixtures::walled_room(*w, *h), None, Vec::new())
            }
        };
        let start = match (self.start, fixture_start) {
            (Some([x, y, th]), _) => Pose2D::new(x, y, th),
            (None, Some(p)) => p,
            (None, None) => return Err(ScenarioError::Invalid("`start` is required for this map".into())),
        };

        let mut config = SimConfig::default();
        config.lamps = self.lamps.build();
        config.power.lamp_load_w = config.lamps.electrical_load();
        config.assist = self.assist.build();
        if let Some(n) = self.lidar.beams {
            config.lidar.beam_count = n;
        }
        if let Some(s) = self.lidar.noise {
            config.lidar.noise_sigma = s;
        }
        if let Some(r) = self.lidar.range_max {
            config.lidar.range_max = r;
        }
        if config.lamps.lamp_count == 0 || !(config.lamps.uvc_power > 0.0) {
            return Err(ScenarioError::Invalid("lamps need count >= 1 and positive uvc_power".into()));
        }
        if config.lidar.beam_count == 0 || config.lidar.noise_sigma < 0.0 {
            return Err(ScenarioError::Invalid("lidar needs beams >= 1 and noise >= 0".into()));
        }
        if let Some(wh) = self.battery_wh {
            if !(0.0..=config.battery_capacity_wh).contains(&wh) {
                return Err(ScenarioError::Invalid(format!(
                    "battery_wh must lie in [0, {}]",
                    config.battery_capacity_wh
                )));
            }
        }

        let target = match &self.targets {
            Some(t) if t.is_empty() => return Err(ScenarioError::Invalid("targets select no cells".into())),
            Some(t) => Some(t.resolve(&grid, &fixture_cells)?),
            None => None,
        };
        let uses_targets = self.script.0.iter().any(|s| matches!(s.action, Action::Disinfect { .. }));
        if uses_targets && target.is_none() {
            return Err(ScenarioError::Invalid("a disinfect step needs `targets`".into()));
        }
        Ok(Resolved {
            grid,
            start,
            config,
            target,
            d90: self.targets.as_ref().and_then(|t| t.log_reduction.and(t.d90)),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Scenario, ScenarioError> {
        Scenario::parse(text, Path::new("s.yaml"))
    }

    #[test]
    fn full_example() {
        let s = parse(
            "seed: 3\nmap: { walled_room: [6, 4] }\nstart: [1, 2, 0]\nautonomy: assisted_steer\n\
             lamps: { count: 1 }\ntargets: { required_dose: 50, points: [[3, 2]] }\nscript:\n\
             \x20 - { at: 0, lamp: true }\n  - { at: 0.5, velocity: { v: 0.2, w: 0 } }\n\
             \x20 - { at: 1, stop: null }\n  - { at: 1, disinfect: { spacing: 0.4 } }\n",
        )
        .unwrap();
        assert_eq!(s.autonomy, AutonomyLevel::AssistedSteer);
        assert_eq!(s.script.0.len(), 4);
        assert_eq!(s.script.0[3].action, Action::Disinfect { spacing: 0.4, max_rounds: 3 });
        let r = s.resolve().unwrap();
        assert_eq!(r.config.lamps.lamp_count, 1);
        assert_eq!(r.config.lamps.arc_radius, 0.0);
        assert_eq!(r.target.unwrap().cells.len(), 1);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "map: { walled_room: [6, 4] }\nstart: [1, 2, 0]\nscript:\n  - { at: 2, lamp: true }\n  - { at: 1, lamp: false }\n";
        match parse(text) {
            Err(ScenarioError::Parse { line: Some((l, _)), message, .. }) => {
                assert_eq!(l, 5, "{message}");
                assert!(message.contains("non-decreasing"));
            }
            other => panic!("{other:?}"),
        }
        let text = "map: { walled_room: [6, 4] }\nscript:\n  - { at: 0, lamp: true }\n  - at: 1\n    warp: 9\n";
        match parse(text) {
            Err(ScenarioError::Parse { line: Some((l, _)), .. }) => assert_eq!(l, 4),
            other => panic!("{other:?}"),
        }
        let text = "map: { walled_room: [6, 4] }\nautonomy: turbo\n";
        let err = parse(text).unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: Some((2, _)), .. }), "{err}");
    }

    #[test]
    fn target_forms() {
        let s = parse("map: { fixture: two_rooms }\ntargets: { log_reduction: 2, d90: 25, fixture_targets: true }\n")
            .unwrap();
        let r = s.resolve().unwrap();
        assert_eq!(r.target.unwrap().required_dose, 50.0);
        assert_eq!(r.d90, Some(25.0));
        let s = parse("map: { fixture: two_rooms }\ntargets: { required_dose: 5 }\n").unwrap();
        assert!(matches!(s.resolve(), Err(ScenarioError::Invalid(_))));
        let s = parse("map: { fixture: two_rooms }\ntargets: { required_dose: 5, d90: 3, cells: [[1, 1]] }\n").unwrap();
        assert!(matches!(s.resolve(), Err(ScenarioError::Invalid(_))));
        let s = parse("map: { fixture: two_rooms }\ntargets: { required_dose: 5, cells: [[999, 1]] }\n").unwrap();
        assert!(matches!(s.resolve(), Err(ScenarioError::Target(DoseError::TargetOutOfBounds { .. }))));
    }
}
