//! The school-dropout experiment.
//!
//! Students attend the nearest school of the kind their age calls for. A
//! high-school student with no high school within `rural_radius_m` of home is
//! rural and commutes. Absences on school days (weekdays 0-4) extend a streak,
//! presence resets it, and a streak longer than the threshold makes the
//! student a dropout for the rest of the run.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agr::{
    AgentId, AgentKind, AgrError, Behavior, Engine, EnvId, EnvKind, EventLogEntry, RoleData, RoleName, RoleValue, World,
};
use crate::geo::{GeoEnvironment, GeoError, GeoIndex, GeoPoint};
use crate::ingest::{self, dwelling_units, Building, IngestError, School, SchoolKind};
use crate::population::{self, MarginalSpec, PersonAttributes, PopulationError};

pub const TWINNER_NAME: &str = "Social Digital Twinner";
pub const TWINNER_ENV_NAME: &str = "SocialDigitalTwinner";
pub const GEO_ENV_NAME: &str = "GeoEnvironment";

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    InvalidConfig(String),
    #[error("cannot read scenario {path}: {source}")]
    ConfigIo {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse scenario {path}: {source}")]
    ConfigJson {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("infeasible scenario: {0}")]
    InfeasibleScenario(String),
    #[error("no {0} school exists")]
    NoSchoolOfKind(SchoolKind),
    #[error("age {0} is outside every school age range")]
    AgeOutOfRange(u8),
    #[error("person {0} has already dropped out")]
    AlreadyDroppedOut(u64),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Population(#[from] PopulationError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Agr(#[from] AgrError),
}

fn default_start_weekday() -> u8 {
    0
}
fn default_rural_radius() -> f64 {
    5_000.0
}
fn default_threshold() -> u32 {
    10
}
fn default_compulsory() -> [u8; 2] {
    [6, 15]
}
fn default_high_school() -> [u8; 2] {
    [16, 18]
}
fn default_interlocutors() -> Vec<AgentKind> {
    AgentKind::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub buildings_path: PathBuf,
    pub schools_path: PathBuf,
    pub marginals_path: PathBuf,
    pub seed: u64,
    pub days: u32,
    #[serde(default = "default_start_weekday")]
    pub start_weekday: u8,
    #[serde(default = "default_rural_radius")]
    pub rural_radius_m: f64,
    #[serde(default = "default_threshold")]
    pub dropout_threshold_days: u32,
    #[serde(default)]
    pub demo_force_rural_absence: bool,
    #[serde(default = "default_compulsory")]
    pub compulsory_age_range: [u8; 2],
    #[serde(default = "default_high_school")]
    pub high_school_age_range: [u8; 2],
    /// Number of synthetic adults. Defaults to the total dwelling-unit count.
    #[serde(default)]
    pub population_size: Option<usize>,
    /// Agent kinds that receive the interlocutor role.
    #[serde(default = "default_interlocutors")]
    pub interlocutor_kinds: Vec<AgentKind>,
}

impl ScenarioConfig {
    /// Parses and validates a scenario. Relative data paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self, ScenarioError> {
        let mut config: ScenarioConfig = serde_json::from_str(text).map_err(|source| ScenarioError::ConfigJson {
            path: "<request>".into(),
            source,
        })?;
        if let Some(base) = base {
            config.resolve_paths(base);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::ConfigIo {
            path: path.display().to_string(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, Some(base)).map_err(|e| match e {
            ScenarioError::ConfigJson { source, .. } => ScenarioError::ConfigJson {
                path: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        for p in [
            &mut self.buildings_path,
            &mut self.schools_path,
            &mut self.marginals_path,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |msg: String| Err(ScenarioError::InvalidConfig(msg));
        if !(self.rural_radius_m.is_finite() && self.rural_radius_m > 0.0) {
            return bad(format!("rural_radius_m must be positive, got {}", self.rural_radius_m));
        }
        if self.dropout_threshold_days < 1 {
            return bad("dropout_threshold_days must be at least 1".into());
        }
        if self.start_weekday > 6 {
            return bad(format!("start_weekday must be 0-6, got {}", self.start_weekday));
        }
        let [c0, c1] = self.compulsory_age_range;
        let [h0, h1] = self.high_school_age_range;
        if c0 > c1 || h0 > h1 {
            return bad("age ranges must be [min, max] with min <= max".into());
        }
        if c1 >= h0 {
            return bad(format!(
                "compulsory_age_range [{c0}, {c1}] must end before high_school_age_range [{h0}, {h1}] starts"
            ));
        }
        Ok(())
    }

    /// The school kind a student of `age` attends, if any.
    pub fn school_kind_for(&self, age: u8) -> Option<SchoolKind> {
        let within = |[lo, hi]: [u8; 2]| (lo..=hi).contains(&age);
        if within(self.compulsory_age_range) {
            Some(SchoolKind::Compulsory)
        } else if within(self.high_school_age_range) {
            Some(SchoolKind::HighSchool)
        } else {
            None
        }
    }
}

/// Spatial indexes over school agents, one per school kind.
#[derive(Debug, Clone, Default)]
pub struct SchoolDirectory {
    by_kind: BTreeMap<SchoolKind, GeoIndex>,
}

impl SchoolDirectory {
    pub fn new(schools: impl IntoIterator<Item = (AgentId, SchoolKind, GeoPoint)>) -> Self {
        let mut grouped: BTreeMap<SchoolKind, Vec<(AgentId, GeoPoint)>> = BTreeMap::new();
        for (id, kind, at) in schools {
            grouped.entry(kind).or_default().push((id, at));
        }
        Self {
            by_kind: grouped.into_iter().map(|(k, v)| (k, GeoIndex::new(v))).collect(),
        }
    }

    pub fn index(&self, kind: SchoolKind) -> Option<&GeoIndex> {
        self.by_kind.get(&kind).filter(|i| !i.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub school: AgentId,
    pub distance_m: f64,
    pub is_rural: bool,
    pub commuter: bool,
}

/// Nearest school of the kind the student's age requires.
pub fn assign_school(
    age: u8,
    home: GeoPoint,
    schools: &SchoolDirectory,
    config: &ScenarioConfig,
) -> Result<Assignment, ScenarioError> {
    let kind = config.school_kind_for(age).ok_or(ScenarioError::AgeOutOfRange(age))?;
    let (school, distance_m) = schools
        .index(kind)
        .and_then(|i| i.nearest(home))
        .ok_or(ScenarioError::NoSchoolOfKind(kind))?;
    let is_rural = kind == SchoolKind::HighSchool && distance_m > config.rural_radius_m;
    Ok(Assignment {
        school,
        distance_m,
        is_rural,
        commuter: is_rural,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StudentState {
    pub person_id: u64,
    pub agent_id: AgentId,
    /// Agent id of the assigned school.
    pub assigned_school_id: AgentId,
    pub is_rural: bool,
    pub commuter: bool,
    pub consecutive_absences: u32,
    pub dropped_out: bool,
    pub dropout_day: Option<u32>,
}

pub fn is_school_day(weekday: u8) -> bool {
    weekday < 5
}

pub fn classify_dropout(consecutive_absences: u32, threshold: u32) -> bool {
    consecutive_absences > threshold
}

/// Applies one day's attendance to `state`.
pub fn record_attendance(
    state: &StudentState,
    day: u32,
    weekday: u8,
    present: bool,
    threshold: u32,
) -> Result<StudentState, ScenarioError> {
    if state.dropped_out {
        return Err(ScenarioError::AlreadyDroppedOut(state.person_id));
    }
    let mut next = state.clone();
    if is_school_day(weekday) {
        next.consecutive_absences = if present { 0 } else { state.consecutive_absences + 1 };
    }
    if classify_dropout(next.consecutive_absences, threshold) {
        next.dropped_out = true;
        next.dropout_day = Some(day);
    }
    Ok(next)
}

/// Daily attendance for every enrolled student.
#[derive(Debug, Clone)]
pub struct DropoutBehavior {
    geo_env: EnvId,
    threshold: u32,
    force_rural_absence: bool,
    students: BTreeMap<AgentId, StudentState>,
}

impl DropoutBehavior {
    pub fn students(&self) -> &BTreeMap<AgentId, StudentState> {
        &self.students
    }

    fn present(&self, state: &StudentState) -> bool {
        !(self.force_rural_absence && state.is_rural)
    }
}

fn student_role_data(base: &RoleData, s: &StudentState) -> RoleData {
    let mut d = base.clone();
    d.insert("consecutive_absences".into(), s.consecutive_absences.into());
    d.insert("dropped_out".into(), s.dropped_out.into());
    match s.dropout_day {
        Some(day) => d.insert("dropout_day".into(), day.into()),
        None => d.remove("dropout_day"),
    };
    d
}

fn bump(world: &mut World, agent: AgentId, env: EnvId, role: RoleName, key: &str) -> Result<(), AgrError> {
    let mut data = world
        .binding(agent, env, role)
        .ok_or(AgrError::UnknownBinding { agent, env, role })?
        .role_data;
    let n = data.get(key).and_then(RoleValue::as_i64).unwrap_or(0);
    data.insert(key.into(), (n + 1).into());
    world.update_role_data(agent, env, role, data)
}

impl Behavior for DropoutBehavior {
    fn actors(&self, _: &World) -> Vec<AgentId> {
        self.students
            .iter()
            .filter(|(_, s)| !s.dropped_out)
            .map(|(id, _)| *id)
            .collect()
    }

    fn act(&mut self, agent: AgentId, world: &mut World) -> Result<(), AgrError> {
        let Some(state) = self.students.get(&agent) else {
            return Ok(());
        };
        let (day, weekday) = (world.clock().day(), world.clock().weekday());
        if !is_school_day(weekday) {
            return Ok(());
        }
        let present = self.present(state);
        let next = record_attendance(state, day, weekday, present, self.threshold)
            .expect("actors never include dropped-out students");
        if !present {
            world.log_event(agent, "absent", format!("consecutive {}", next.consecutive_absences));
        } else if state.consecutive_absences > 0 {
            world.log_event(
                agent,
                "attendance_reset",
                format!("after {}", state.consecutive_absences),
            );
        }
        if next.dropped_out {
            world.log_event(
                agent,
                "dropped_out",
                format!("after {} consecutive school-day absences", next.consecutive_absences),
            );
            let payload = RoleData::from([
                ("event".to_string(), RoleValue::from("dropped_out")),
                ("day".to_string(), day.into()),
            ]);
            world.send_message(agent, next.assigned_school_id, payload)?;
            bump(
                world,
                next.assigned_school_id,
                self.geo_env,
                RoleName::School,
                "dropouts",
            )?;
        }
        if next != *state {
            let base = world
                .binding(agent, self.geo_env, RoleName::Student)
                .ok_or(AgrError::UnknownBinding {
                    agent,
                    env: self.geo_env,
                    role: RoleName::Student,
                })?
                .role_data;
            world.update_role_data(agent, self.geo_env, RoleName::Student, student_role_data(&base, &next))?;
        }
        self.students.insert(agent, next);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub students: usize,
    pub dropouts: usize,
    pub dropout_rate: f64,
}

impl GroupMetrics {
    fn of<'a>(students: impl Iterator<Item = &'a StudentState>) -> Self {
        let (mut n, mut d) = (0, 0);
        for s in students {
            n += 1;
            d += usize::from(s.dropped_out);
        }
        Self {
            students: n,
            dropouts: d,
            dropout_rate: rate(d, n),
        }
    }
}

fn rate(dropouts: usize, students: usize) -> f64 {
    if students == 0 {
        0.0
    } else {
        dropouts as f64 / students as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchoolMetrics {
    pub agent_id: AgentId,
    pub school_id: u64,
    pub name: String,
    pub kind: SchoolKind,
    pub students: usize,
    pub rural_students: usize,
    pub dropouts: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub day: u32,
    pub students: usize,
    pub dropouts: usize,
    pub dropout_rate: f64,
    pub rural: GroupMetrics,
    pub urban: GroupMetrics,
    pub per_school: Vec<SchoolMetrics>,
}

pub fn compute_metrics<'a>(
    day: u32,
    students: impl IntoIterator<Item = &'a StudentState> + Clone,
    schools: &[(AgentId, &School)],
) -> MetricsReport {
    let all = GroupMetrics::of(students.clone().into_iter());
    let mut per_school: Vec<SchoolMetrics> = schools
        .iter()
        .map(|(id, s)| SchoolMetrics {
            agent_id: *id,
            school_id: s.id,
            name: s.name.clone(),
            kind: s.kind,
            students: 0,
            rural_students: 0,
            dropouts: 0,
        })
        .collect();
    per_school.sort_by_key(|m| m.agent_id);
    for s in students.clone() {
        if let Ok(i) = per_school.binary_search_by_key(&s.assigned_school_id, |m| m.agent_id) {
            per_school[i].students += 1;
            per_school[i].rural_students += usize::from(s.is_rural);
            per_school[i].dropouts += usize::from(s.dropped_out);
        }
    }
    MetricsReport {
        day,
        students: all.students,
        dropouts: all.dropouts,
        dropout_rate: all.dropout_rate,
        rural: GroupMetrics::of(students.clone().into_iter().filter(|s| s.is_rural)),
        urban: GroupMetrics::of(students.into_iter().filter(|s| !s.is_rural)),
        per_school,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Census {
    pub agents: usize,
    pub environments: usize,
    pub persons: usize,
    pub adults: usize,
    pub children: usize,
    pub households: usize,
    pub residential_buildings: usize,
    pub skipped_buildings: usize,
    pub schools: usize,
    pub students: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentFlags {
    pub is_rural: bool,
    pub dropped_out: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSummary {
    pub id: AgentId,
    pub name: String,
    pub kind: AgentKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lon: Option<f64>,
    pub roles: Vec<RoleName>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flags: Option<AgentFlags>,
}

/// Input data for a twin, already loaded.
#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub buildings: Vec<Building>,
    pub schools: Vec<School>,
    pub marginals: MarginalSpec,
}

impl ScenarioData {
    pub fn load(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        Ok(Self {
            buildings: ingest::load_buildings(&config.buildings_path)?,
            schools: ingest::load_schools(&config.schools_path)?,
            marginals: MarginalSpec::from_file(&config.marginals_path)?,
        })
    }
}

/// A populated, steppable scenario.
#[derive(Debug, Clone)]
pub struct Twin {
    config: ScenarioConfig,
    engine: Engine<DropoutBehavior>,
    geo: GeoEnvironment,
    schools: Vec<(AgentId, School)>,
    census: Census,
}

impl Twin {
    pub fn build(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        config.validate()?;
        let data = ScenarioData::load(config)?;
        Self::from_data(config, data)
    }

    pub fn from_data(config: &ScenarioConfig, data: ScenarioData) -> Result<Self, ScenarioError> {
        config.validate()?;
        if data.schools.is_empty() {
            return Err(ScenarioError::InfeasibleScenario(
                "the school file lists no schools".into(),
            ));
        }
        let dup = ingest::duplicate_ids(data.buildings.iter().map(|b| b.id));
        if !dup.is_empty() {
            return Err(ScenarioError::InvalidConfig(format!("duplicate building ids {dup:?}")));
        }
        let residential: Vec<&Building> = data.buildings.iter().filter(|b| dwelling_units(b) > 0).collect();
        let capacity: usize = residential.iter().map(|b| dwelling_units(b) as usize).sum();
        let n_adults = config.population_size.unwrap_or(capacity);

        let adults = population::sample_adults(&data.marginals, n_adults, config.seed)?;
        let synthesis = population::build_households(&adults, &data.marginals, config.seed)?;
        let allocation = population::allocate_households(&synthesis.households, &data.buildings, config.seed)?;

        let mut world = World::new(config.start_weekday);
        let twin_env = world.create_environment(TWINNER_ENV_NAME, EnvKind::Twinner)?;
        let geo_env = world.create_environment(GEO_ENV_NAME, EnvKind::Geo)?;
        let mut geo = GeoEnvironment::new(geo_env);
        let interlocutor = |k: AgentKind| config.interlocutor_kinds.contains(&k);

        let twinner = world.create_agent(TWINNER_NAME, AgentKind::Twinner)?;
        world.assume_role(twinner, twin_env, RoleName::Experimenter, experimenter_data(config))?;

        let mut school_agents = Vec::with_capacity(data.schools.len());
        for s in &data.schools {
            let id = world.create_agent(&s.name, AgentKind::Building)?;
            world.assume_role(id, geo_env, RoleName::School, school_data(s))?;
            geo.place(&world, id, s.location)?;
            school_agents.push((id, s.clone()));
        }

        let mut households_in: BTreeMap<u64, usize> = BTreeMap::new();
        for b in allocation.values() {
            *households_in.entry(*b).or_default() += 1;
        }
        let mut building_agents: BTreeMap<u64, AgentId> = BTreeMap::new();
        for b in &residential {
            let id = world.create_agent(&format!("Building {}", b.id), AgentKind::Building)?;
            let data = RoleData::from([
                ("building_id".to_string(), b.id.into()),
                ("building_type".to_string(), b.building_type.as_str().into()),
                ("dwelling_units".to_string(), dwelling_units(b).into()),
                (
                    "households".to_string(),
                    households_in.get(&b.id).copied().unwrap_or(0).into(),
                ),
            ]);
            world.assume_role(id, geo_env, RoleName::Residence, data)?;
            geo.place(&world, id, b.location)?;
            building_agents.insert(b.id, id);
        }
        let locations: BTreeMap<u64, GeoPoint> = residential.iter().map(|b| (b.id, b.location)).collect();

        let mut home: BTreeMap<u64, (u64, u64)> = BTreeMap::new();
        for h in &synthesis.households {
            let building = allocation[&h.household_id];
            for p in h.members() {
                home.insert(p, (h.household_id, building));
            }
        }

        let directory = SchoolDirectory::new(school_agents.iter().map(|(id, s)| (*id, s.kind, s.location)));
        let persons: Vec<&PersonAttributes> = adults.iter().chain(&synthesis.children).collect();
        let mut person_agents: BTreeMap<u64, AgentId> = BTreeMap::new();
        let mut students = BTreeMap::new();
        let mut assigned: BTreeMap<AgentId, i64> = BTreeMap::new();
        for p in &persons {
            let (household_id, building_id) = home[&p.person_id];
            let id = world.create_agent(&format!("Person {}", p.person_id), AgentKind::Person)?;
            world.assume_role(
                id,
                geo_env,
                RoleName::Resident,
                person_data(p, household_id, building_id),
            )?;
            let at = locations[&building_id];
            geo.place(&world, id, at)?;
            person_agents.insert(p.person_id, id);

            if config.school_kind_for(p.age).is_some() {
                let a = assign_school(p.age, at, &directory, config)?;
                let school = &school_agents
                    .iter()
                    .find(|(sid, _)| *sid == a.school)
                    .expect("directory only holds school agents")
                    .1;
                let state = StudentState {
                    person_id: p.person_id,
                    agent_id: id,
                    assigned_school_id: a.school,
                    is_rural: a.is_rural,
                    commuter: a.commuter,
                    consecutive_absences: 0,
                    dropped_out: false,
                    dropout_day: None,
                };
                let base = RoleData::from([
                    ("school".to_string(), school.name.as_str().into()),
                    ("school_agent_id".to_string(), a.school.0.into()),
                    ("school_kind".to_string(), school.kind.as_str().into()),
                    ("school_distance_m".to_string(), (a.distance_m.round() as i64).into()),
                    ("is_rural".to_string(), a.is_rural.into()),
                    ("commuter".to_string(), a.commuter.into()),
                ]);
                world.assume_role(id, geo_env, RoleName::Student, student_role_data(&base, &state))?;
                *assigned.entry(a.school).or_default() += 1;
                students.insert(id, state);
            }
        }
        for (school, n) in &assigned {
            let mut d = world
                .binding(*school, geo_env, RoleName::School)
                .expect("school bound above")
                .role_data;
            d.insert("assigned_students".into(), (*n).into());
            world.update_role_data(*school, geo_env, RoleName::School, d)?;
        }

        for h in &synthesis.households {
            let env = world.create_environment(&format!("Household {}", h.household_id), EnvKind::Network)?;
            for p in h.members() {
                let data = RoleData::from([("household_id".to_string(), h.household_id.into())]);
                world.assume_role(person_agents[&p], env, RoleName::Resident, data)?;
            }
        }

        let ids: Vec<AgentId> = world
            .agents()
            .map(|a| (a.id, a.kind))
            .filter(|(_, k)| interlocutor(*k))
            .map(|(id, _)| id)
            .collect();
        for id in ids {
            world.assume_role(id, twin_env, RoleName::Interlocutor, RoleData::new())?;
        }

        let census = Census {
            agents: world.agent_count(),
            environments: world.environments().count(),
            persons: persons.len(),
            adults: adults.len(),
            children: synthesis.children.len(),
            households: synthesis.households.len(),
            residential_buildings: residential.len(),
            skipped_buildings: data.buildings.len() - residential.len(),
            schools: school_agents.len(),
            students: students.len(),
        };
        let mut engine = Engine::with_world(world);
        engine.load(DropoutBehavior {
            geo_env,
            threshold: config.dropout_threshold_days,
            force_rural_absence: config.demo_force_rural_absence,
            students,
        });
        Ok(Self {
            config: config.clone(),
            engine,
            geo,
            schools: school_agents,
            census,
        })
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        self.engine.world()
    }

    pub fn geo(&self) -> &GeoEnvironment {
        &self.geo
    }

    pub fn census(&self) -> &Census {
        &self.census
    }

    pub fn day(&self) -> u32 {
        self.world().clock().day()
    }

    pub fn schools(&self) -> &[(AgentId, School)] {
        &self.schools
    }

    pub fn students(&self) -> &BTreeMap<AgentId, StudentState> {
        self.engine.behavior().expect("behavior loaded at build").students()
    }

    pub fn step(&mut self) -> Result<Vec<EventLogEntry>, ScenarioError> {
        Ok(self.engine.step()?)
    }

    /// Advances `days` ticks and returns the number of new log entries.
    pub fn step_days(&mut self, days: u32) -> Result<usize, ScenarioError> {
        let mut n = 0;
        for _ in 0..days {
            n += self.step()?.len();
        }
        Ok(n)
    }

    pub fn metrics(&self) -> MetricsReport {
        let schools: Vec<(AgentId, &School)> = self.schools.iter().map(|(id, s)| (*id, s)).collect();
        compute_metrics(self.day(), self.students().values(), &schools)
    }

    pub fn agent_summary(&self, id: AgentId) -> Option<AgentSummary> {
        let world = self.world();
        let record = world.agent(id)?;
        let mut roles: Vec<RoleName> = world.bindings_of(id).iter().map(|b| b.role_name).collect();
        roles.sort();
        roles.dedup();
        let at = self.geo.position(id);
        let flags = self.students().get(&id).map(|s| AgentFlags {
            is_rural: s.is_rural,
            dropped_out: s.dropped_out,
        });
        Some(AgentSummary {
            id,
            name: record.name.clone(),
            kind: record.kind,
            lat: at.map(|p| p.lat()),
            lon: at.map(|p| p.lon()),
            roles,
            flags,
        })
    }

    pub fn agent_summaries(&self) -> Vec<AgentSummary> {
        self.world().agents().filter_map(|a| self.agent_summary(a.id)).collect()
    }

    pub fn into_result(self) -> ExperimentResult {
        let metrics = self.metrics();
        ExperimentResult {
            seed: self.config.seed,
            days: self.day(),
            census: self.census.clone(),
            metrics,
            students: self.students().values().cloned().collect(),
            events: self.engine.world().event_log().to_vec(),
        }
    }
}

fn experimenter_data(config: &ScenarioConfig) -> RoleData {
    RoleData::from([
        ("use_case".to_string(), "SchoolDropOutExperimenter".into()),
        ("seed".to_string(), config.seed.into()),
        ("rural_radius_m".to_string(), config.rural_radius_m.into()),
        (
            "dropout_threshold_days".to_string(),
            config.dropout_threshold_days.into(),
        ),
        (
            "demo_force_rural_absence".to_string(),
            config.demo_force_rural_absence.into(),
        ),
    ])
}

fn school_data(s: &School) -> RoleData {
    let mut d = RoleData::from([
        ("school_id".to_string(), s.id.into()),
        ("kind".to_string(), s.kind.as_str().into()),
        ("assigned_students".to_string(), 0i64.into()),
        ("dropouts".to_string(), 0i64.into()),
    ]);
    for g in s.kind.grades() {
        d.insert(format!("g{g}"), s.pupils(g).into());
    }
    d
}

fn person_data(p: &PersonAttributes, household_id: u64, building_id: u64) -> RoleData {
    RoleData::from([
        ("person_id".to_string(), p.person_id.into()),
        ("age".to_string(), p.age.into()),
        ("sex".to_string(), p.sex.as_str().into()),
        ("economic_status".to_string(), p.economic_status.as_str().into()),
        ("education_level".to_string(), p.education_level.as_str().into()),
        (
            "self_perceived_health".to_string(),
            p.self_perceived_health.as_str().into(),
        ),
        ("household_id".to_string(), household_id.into()),
        ("building_id".to_string(), building_id.into()),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub seed: u64,
    pub days: u32,
    pub census: Census,
    pub metrics: MetricsReport,
    pub students: Vec<StudentState>,
    /// Exported separately as CSV.
    #[serde(skip)]
    pub events: Vec<EventLogEntry>,
}

pub fn run_experiment(config: &ScenarioConfig) -> Result<ExperimentResult, ScenarioError> {
    let mut twin = Twin::build(config)?;
    twin.step_days(config.days)?;
    Ok(twin.into_result())
}

pub fn run_with_data(config: &ScenarioConfig, data: ScenarioData) -> Result<ExperimentResult, ScenarioError> {
    let mut twin = Twin::from_data(config, data)?;
    twin.step_days(config.days)?;
    Ok(twin.into_result())
}

/// Writes `day,agent_id,event_type,detail`.
pub fn write_events_csv<W: Write>(out: W, events: &[EventLogEntry]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["day", "agent_id", "event_type", "detail"])?;
    for e in events {
        w.write_record([
            e.day.to_string(),
            e.agent_id.to_string(),
            e.event_type.clone(),
            e.detail.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::haversine_distance;
    use crate::ingest::BuildingType;
    use proptest::prelude::*;

    fn config() -> ScenarioConfig {
        serde_json::from_str(
            r#"{"buildings_path": "b.csv", "schools_path": "s.csv", "marginals_path": "m.json", "seed": 7, "days": 21}"#,
        )
        .unwrap()
    }

    fn state() -> StudentState {
        StudentState {
            person_id: 1,
            agent_id: AgentId(5),
            assigned_school_id: AgentId(2),
            is_rural: true,
            commuter: true,
            consecutive_absences: 0,
            dropped_out: false,
            dropout_day: None,
        }
    }

    fn pt(lat: f64, lon: f64) -> GeoPoint {
        GeoPoint::new(lat, lon).unwrap()
    }

    /// Point `metres` due north of `origin`.
    fn north(origin: GeoPoint, metres: f64) -> GeoPoint {
        pt(
            origin.lat() + (metres / crate::geo::EARTH_RADIUS_M).to_degrees(),
            origin.lon(),
        )
    }

    #[test]
    fn config_defaults() {
        let c = config();
        assert_eq!(c.start_weekday, 0);
        assert_eq!(c.rural_radius_m, 5_000.0);
        assert_eq!(c.dropout_threshold_days, 10);
        assert!(!c.demo_force_rural_absence);
        assert_eq!(c.compulsory_age_range, [6, 15]);
        assert_eq!(c.high_school_age_range, [16, 18]);
        assert_eq!(c.interlocutor_kinds, AgentKind::ALL.to_vec());
        c.validate().unwrap();
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut c = config();
        c.rural_radius_m = 0.0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.dropout_threshold_days = 0;
        assert!(c.validate().is_err());
        let mut c = config();
        c.high_school_age_range = [15, 18];
        assert!(c.validate().is_err());
        let mut c = config();
        c.compulsory_age_range = [10, 6];
        assert!(c.validate().is_err());
        let err = ScenarioConfig::from_json(
            r#"{"buildings_path": "b", "marginals_path": "m", "seed": 1, "days": 1}"#,
            None,
        )
        .unwrap_err();
        assert!(err.to_string().contains("schools_path"), "{err}");
        assert!(ScenarioConfig::from_json(
            r#"{"buildings_path": "b", "schools_path": "s", "marginals_path": "m", "seed": 1, "days": 1, "typo": 1}"#,
            None
        )
        .is_err());
    }

    #[test]
    fn relative_paths_resolve_against_base() {
        let c = ScenarioConfig::from_json(
            r#"{"buildings_path": "b.csv", "schools_path": "/abs/s.csv", "marginals_path": "m.json", "seed": 1, "days": 1}"#,
            Some(Path::new("/data/kragero")),
        )
        .unwrap();
        assert_eq!(c.buildings_path, Path::new("/data/kragero/b.csv"));
        assert_eq!(c.schools_path, Path::new("/abs/s.csv"));
    }

    fn directory(compulsory: &[GeoPoint], high: &[GeoPoint]) -> SchoolDirectory {
        let mut n = 0;
        let mut next = || {
            n += 1;
            AgentId(n)
        };
        let mut v = Vec::new();
        for p in compulsory {
            v.push((next(), SchoolKind::Compulsory, *p));
        }
        for p in high {
            v.push((next(), SchoolKind::HighSchool, *p));
        }
        SchoolDirectory::new(v)
    }

    #[test]
    fn nearest_compulsory_school() {
        let home = pt(58.87, 9.41);
        let dir = directory(&[north(home, 2_100.0), north(home, 800.0)], &[north(home, 1_000.0)]);
        let a = assign_school(10, home, &dir, &config()).unwrap();
        assert_eq!(a.school, AgentId(2));
        assert!(!a.is_rural && !a.commuter);
    }

    #[test]
    fn distant_high_school_makes_student_rural() {
        let home = pt(58.87, 9.41);
        let dir = directory(&[home], &[north(home, 12_000.0)]);
        let a = assign_school(17, home, &dir, &config()).unwrap();
        assert_eq!(a.school, AgentId(2));
        assert!(a.is_rural && a.commuter);
        assert!((a.distance_m - 12_000.0).abs() < 1.0);

        let dir = directory(&[], &[north(home, 1_000.0)]);
        let a = assign_school(17, home, &dir, &config()).unwrap();
        assert!(!a.is_rural);
    }

    #[test]
    fn assignment_errors() {
        let home = pt(58.87, 9.41);
        let dir = directory(&[home], &[]);
        assert!(matches!(
            assign_school(17, home, &dir, &config()),
            Err(ScenarioError::NoSchoolOfKind(SchoolKind::HighSchool))
        ));
        assert!(matches!(
            assign_school(30, home, &dir, &config()),
            Err(ScenarioError::AgeOutOfRange(30))
        ));
        assert!(matches!(
            assign_school(3, home, &dir, &config()),
            Err(ScenarioError::AgeOutOfRange(3))
        ));
    }

    #[test]
    fn eleventh_absence_drops_out() {
        let s = StudentState {
            consecutive_absences: 10,
            ..state()
        };
        let next = record_attendance(&s, 14, 0, false, 10).unwrap();
        assert_eq!(next.consecutive_absences, 11);
        assert!(next.dropped_out);
        assert_eq!(next.dropout_day, Some(14));
        assert!(matches!(
            record_attendance(&next, 15, 1, true, 10),
            Err(ScenarioError::AlreadyDroppedOut(1))
        ));
    }

    #[test]
    fn weekends_leave_streak_alone() {
        let s = StudentState {
            consecutive_absences: 10,
            ..state()
        };
        for weekday in [5, 6] {
            let next = record_attendance(&s, 5, weekday, false, 10).unwrap();
            assert_eq!(next.consecutive_absences, 10);
            assert!(!next.dropped_out);
            assert_eq!(
                record_attendance(&s, 5, weekday, true, 10)
                    .unwrap()
                    .consecutive_absences,
                10
            );
        }
    }

    #[test]
    fn presence_resets_streak() {
        let mut s = state();
        let pattern = [false; 6]
            .iter()
            .chain(&[true])
            .chain(&[false; 6])
            .copied()
            .collect::<Vec<_>>();
        for (day, present) in pattern.into_iter().enumerate() {
            s = record_attendance(&s, day as u32, 0, present, 10).unwrap();
        }
        assert_eq!(s.consecutive_absences, 6);
        assert!(!s.dropped_out);
    }

    #[test]
    fn classification_is_strict() {
        assert!(!classify_dropout(10, 10));
        assert!(classify_dropout(11, 10));
        assert!(!classify_dropout(0, 10));
    }

    /// Independent replay: does any school-day absence streak exceed `t`,
    /// and on which day does it first do so.
    fn replay(start: u8, attendance: &[bool], t: u32) -> Option<u32> {
        let mut streak = 0;
        for (day, present) in attendance.iter().enumerate() {
            let weekday = (start as usize + day) % 7;
            if weekday >= 5 {
                continue;
            }
            streak = if *present { 0 } else { streak + 1 };
            if streak > t {
                return Some(day as u32);
            }
        }
        None
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn attendance_matches_replay(
            start in 0u8..7,
            t in 1u32..15,
            attendance in proptest::collection::vec(proptest::bool::weighted(0.8).prop_map(|a| !a), 0..60),
        ) {
            let mut s = state();
            let mut seen = None;
            for (day, present) in attendance.iter().enumerate() {
                if s.dropped_out {
                    break;
                }
                let weekday = crate::agr::weekday_of(start, day as u32);
                s = record_attendance(&s, day as u32, weekday, *present, t).unwrap();
                if s.dropped_out {
                    seen = s.dropout_day;
                }
            }
            prop_assert_eq!(seen, replay(start, &attendance, t));
            prop_assert_eq!(s.dropped_out, s.dropout_day.is_some());
        }
    }

    fn school(id: u64, name: &str, kind: SchoolKind, at: GeoPoint) -> School {
        let mut pupils = [0; 13];
        for g in kind.grades() {
            pupils[usize::from(g - 1)] = 10 + u32::from(g);
        }
        School {
            id,
            name: name.into(),
            kind,
            location: at,
            pupils_per_grade: pupils,
        }
    }

    /// Town with one high school and a village 12 km away.
    fn data(village_units: u32) -> ScenarioData {
        let town = pt(58.869, 9.4148);
        let village = north(town, 12_000.0);
        let mut buildings: Vec<Building> = (0..40)
            .map(|i| Building {
                id: i + 1,
                building_type: BuildingType::DetachedHouse,
                recorded_units: Some(1),
                location: north(town, 50.0 * i as f64),
            })
            .collect();
        buildings.push(Building {
            id: 100,
            building_type: BuildingType::ApartmentComplex,
            recorded_units: Some(village_units),
            location: village,
        });
        buildings.push(Building {
            id: 200,
            building_type: BuildingType::Garage,
            recorded_units: None,
            location: town,
        });
        let mut marginals = crate::population::tests::spec();
        marginals.age_bands = vec![
            crate::population::AgeBand {
                min: 16,
                max: 18,
                p: 0.5,
            },
            crate::population::AgeBand {
                min: 30,
                max: 50,
                p: 0.5,
            },
        ];
        ScenarioData {
            buildings,
            schools: vec![
                school(1, "Town School", SchoolKind::Compulsory, town),
                school(2, "Village School", SchoolKind::Compulsory, village),
                school(3, "Town High", SchoolKind::HighSchool, north(town, 300.0)),
            ],
            marginals,
        }
    }

    fn demo() -> ScenarioConfig {
        ScenarioConfig {
            demo_force_rural_absence: true,
            population_size: Some(70),
            ..config()
        }
    }

    #[test]
    fn demo_drops_every_rural_student_on_day_14() {
        let r = run_with_data(&demo(), data(30)).unwrap();
        let rural: Vec<_> = r.students.iter().filter(|s| s.is_rural).collect();
        assert!(!rural.is_empty());
        assert!(rural.iter().all(|s| s.dropped_out && s.dropout_day == Some(14)));
        assert!(r.students.iter().filter(|s| !s.is_rural).all(|s| !s.dropped_out));
        assert_eq!(r.metrics.rural.dropout_rate, 1.0);
        assert_eq!(r.metrics.dropouts, rural.len());
        let per_school: usize = r.metrics.per_school.iter().map(|s| s.dropouts).sum();
        assert_eq!(per_school, r.metrics.dropouts);
        assert_eq!(r.days, 21);
    }

    #[test]
    fn dropouts_notify_their_school() {
        let mut twin = Twin::from_data(&demo(), data(30)).unwrap();
        twin.step_days(21).unwrap();
        let high = twin
            .schools()
            .iter()
            .find(|(_, s)| s.kind == SchoolKind::HighSchool)
            .unwrap()
            .0;
        let geo = twin.geo().env_id();
        let d = twin.world().binding(high, geo, RoleName::School).unwrap().role_data;
        let n = twin.metrics().rural.dropouts;
        assert_eq!(d["dropouts"].as_i64(), Some(n as i64));
        assert_eq!(twin.world().inbox(high).len(), n);
        let dropped = twin.students().values().find(|s| s.dropped_out).unwrap();
        let sd = twin
            .world()
            .binding(dropped.agent_id, geo, RoleName::Student)
            .unwrap()
            .role_data;
        assert_eq!(sd["dropped_out"], RoleValue::Bool(true));
        assert_eq!(sd["dropout_day"].as_i64(), Some(14));
        assert!(twin.world().recent_events(dropped.agent_id, 1)[0].event_type == "dropped_out");
    }

    #[test]
    fn baseline_has_no_dropouts() {
        let r = run_with_data(
            &ScenarioConfig {
                population_size: Some(70),
                ..config()
            },
            data(30),
        )
        .unwrap();
        assert!(r.metrics.students > 0);
        assert_eq!(r.metrics.dropouts, 0);
        assert_eq!(r.metrics.dropout_rate, 0.0);
    }

    #[test]
    fn no_high_school_age_students_means_no_dropouts() {
        let mut d = data(30);
        d.marginals.age_bands = vec![crate::population::AgeBand {
            min: 30,
            max: 50,
            p: 1.0,
        }];
        d.marginals.household.child_probability = 0.0;
        let r = run_with_data(&demo(), d).unwrap();
        assert_eq!(r.metrics.dropouts, 0);
    }

    #[test]
    fn same_seed_same_result() {
        let a = run_with_data(&demo(), data(30)).unwrap();
        let b = run_with_data(&demo(), data(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.events, b.events);
    }

    #[test]
    fn zero_schools_is_infeasible() {
        let mut d = data(30);
        d.schools.clear();
        assert!(matches!(
            Twin::from_data(&demo(), d),
            Err(ScenarioError::InfeasibleScenario(_))
        ));
    }

    #[test]
    fn too_few_homes_propagates() {
        let cfg = ScenarioConfig {
            population_size: Some(500),
            ..demo()
        };
        assert!(matches!(
            Twin::from_data(&cfg, data(1)),
            Err(ScenarioError::Population(PopulationError::InsufficientCapacity { .. }))
        ));
    }

    #[test]
    fn agents_and_roles_are_wired() {
        let twin = Twin::from_data(&demo(), data(30)).unwrap();
        let w = twin.world();
        let census = twin.census();
        assert_eq!(census.agents, w.agent_count());
        assert_eq!(census.agents, 1 + 3 + 41 + census.persons);
        assert_eq!(census.skipped_buildings, 1);
        let first = twin.agent_summary(AgentId(1)).unwrap();
        assert_eq!(first.name, TWINNER_NAME);
        assert_eq!(first.roles, vec![RoleName::Experimenter, RoleName::Interlocutor]);
        assert!(first.lat.is_none());
        for s in twin.agent_summaries() {
            assert!(s.roles.contains(&RoleName::Interlocutor));
            assert_eq!(s.lat.is_some(), twin.geo().position(s.id).is_some());
            assert_eq!(s.flags.is_some(), s.roles.contains(&RoleName::Student));
        }
        // household members can reach each other through their household
        let student = twin.students().values().next().unwrap();
        assert!(w.environments_of(student.agent_id).len() >= 3);
    }

    #[test]
    fn students_get_exhaustive_nearest_school() {
        let twin = Twin::from_data(&demo(), data(30)).unwrap();
        let cfg = demo();
        for s in twin.students().values() {
            let home = twin.geo().position(s.agent_id).unwrap();
            let age = twin
                .world()
                .binding(s.agent_id, twin.geo().env_id(), RoleName::Resident)
                .unwrap()
                .role_data["age"]
                .as_i64()
                .unwrap() as u8;
            let kind = cfg.school_kind_for(age).unwrap();
            let best = twin
                .schools()
                .iter()
                .filter(|(_, sc)| sc.kind == kind)
                .map(|(id, sc)| (haversine_distance(home, sc.location), *id))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .unwrap();
            assert_eq!(s.assigned_school_id, best.1);
            assert_eq!(
                s.is_rural,
                kind == SchoolKind::HighSchool && best.0 > cfg.rural_radius_m
            );
        }
    }

    #[test]
    fn metrics_arithmetic() {
        let mut students: Vec<StudentState> = (0..40)
            .map(|i| StudentState {
                person_id: i,
                agent_id: AgentId(100 + i),
                is_rural: i < 10,
                ..state()
            })
            .collect();
        let s = school(1, "A", SchoolKind::HighSchool, pt(0.0, 0.0));
        let m = compute_metrics(3, &students, &[(AgentId(2), &s)]);
        assert_eq!(m.dropout_rate, 0.0);
        for s in students.iter_mut().take(8) {
            s.dropped_out = true;
            s.dropout_day = Some(1);
        }
        let m = compute_metrics(3, &students, &[(AgentId(2), &s)]);
        assert_eq!(m.dropout_rate, 0.2);
        assert_eq!(m.rural.dropouts + m.urban.dropouts, 8);
        assert_eq!(m.rural.students + m.urban.students, 40);
        assert_eq!(m.per_school[0].dropouts, 8);
    }

    #[test]
    fn events_csv_layout() {
        let events = vec![EventLogEntry {
            day: 3,
            agent_id: AgentId(9),
            event_type: "absent".into(),
            detail: "a, b".into(),
        }];
        let mut out = Vec::new();
        write_events_csv(&mut out, &events).unwrap();
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "day,agent_id,event_type,detail\n3,9,absent,\"a, b\"\n"
        );
    }
}
