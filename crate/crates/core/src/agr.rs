//! Agent/Group/Role base model.
//!
//! Agents play roles inside environments (groups). Two agents may exchange
//! messages only while they share at least one environment. Time advances in
//! whole calendar days; each [`Engine::step`] runs the loaded [`Behavior`] for
//! every acting agent in ascending id order and then advances the clock.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identity reserved for the engine itself. Never issued to an agent.
pub const SYSTEM_ID: AgentId = AgentId(0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u64);

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EnvId(pub u64);

impl fmt::Display for EnvId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Person,
    Building,
    Twinner,
}

impl AgentKind {
    pub const ALL: [AgentKind; 3] = [AgentKind::Person, AgentKind::Building, AgentKind::Twinner];

    pub fn as_str(self) -> &'static str {
        match self {
            AgentKind::Person => "person",
            AgentKind::Building => "building",
            AgentKind::Twinner => "twinner",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Geo,
    Network,
    Twinner,
}

/// The fixed set of roles an agent can play.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleName {
    Resident,
    School,
    Residence,
    Experimenter,
    Interlocutor,
    Student,
}

impl RoleName {
    pub const ALL: [RoleName; 6] = [
        RoleName::Resident,
        RoleName::School,
        RoleName::Residence,
        RoleName::Experimenter,
        RoleName::Interlocutor,
        RoleName::Student,
    ];

    /// Wire name, as used in JSON and query strings.
    pub fn as_str(self) -> &'static str {
        match self {
            RoleName::Resident => "resident",
            RoleName::School => "school",
            RoleName::Residence => "residence",
            RoleName::Experimenter => "experimenter",
            RoleName::Interlocutor => "interlocutor",
            RoleName::Student => "student",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.as_str() == s)
    }
}

impl fmt::Display for RoleName {
    /// Human-facing name, e.g. `School`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RoleName::Resident => "Resident",
            RoleName::School => "School",
            RoleName::Residence => "Residence",
            RoleName::Experimenter => "Experimenter",
            RoleName::Interlocutor => "Interlocutor",
            RoleName::Student => "Student",
        };
        f.write_str(s)
    }
}

/// A scalar or list value stored in role data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RoleValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Text(String),
    List(Vec<RoleValue>),
}

impl RoleValue {
    pub fn as_i64(&self) -> Option<i64> {
        match self {
            RoleValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            RoleValue::Bool(v) => Some(*v),
            _ => None,
        }
    }
}

impl fmt::Display for RoleValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RoleValue::Bool(v) => write!(f, "{v}"),
            RoleValue::Int(v) => write!(f, "{v}"),
            RoleValue::Float(v) => write!(f, "{v}"),
            RoleValue::Text(v) => f.write_str(v),
            RoleValue::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
        }
    }
}

macro_rules! role_value_from {
    ($($t:ty => $variant:ident),* $(,)?) => {
        $(impl From<$t> for RoleValue {
            fn from(v: $t) -> Self {
                RoleValue::$variant(v.into())
            }
        })*
    };
}

role_value_from!(
    bool => Bool,
    i64 => Int,
    i32 => Int,
    u32 => Int,
    u8 => Int,
    f64 => Float,
    String => Text,
    &str => Text,
);

impl From<u64> for RoleValue {
    fn from(v: u64) -> Self {
        RoleValue::Int(i64::try_from(v).unwrap_or(i64::MAX))
    }
}

impl From<usize> for RoleValue {
    fn from(v: usize) -> Self {
        RoleValue::Int(i64::try_from(v).unwrap_or(i64::MAX))
    }
}

impl From<Vec<RoleValue>> for RoleValue {
    fn from(v: Vec<RoleValue>) -> Self {
        RoleValue::List(v)
    }
}

/// Opaque keyed record attached to a role binding.
pub type RoleData = BTreeMap<String, RoleValue>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRecord {
    pub id: AgentId,
    pub name: String,
    pub kind: AgentKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentRecord {
    pub id: EnvId,
    pub name: String,
    pub kind: EnvKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoleBinding {
    pub agent_id: AgentId,
    pub environment_id: EnvId,
    pub role_name: RoleName,
    pub role_data: RoleData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub sender_id: AgentId,
    pub receiver_id: AgentId,
    pub payload: RoleData,
    pub tick: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeliveryReceipt {
    pub sender_id: AgentId,
    pub receiver_id: AgentId,
    /// Lowest-id environment the two agents share.
    pub via_environment: EnvId,
    pub tick: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimClock {
    day: u32,
    start_weekday: u8,
}

impl SimClock {
    /// `start_weekday` is taken modulo 7; 0 is Monday.
    pub fn new(start_weekday: u8) -> Self {
        Self {
            day: 0,
            start_weekday: start_weekday % 7,
        }
    }

    pub fn day(&self) -> u32 {
        self.day
    }

    pub fn start_weekday(&self) -> u8 {
        self.start_weekday
    }

    pub fn weekday(&self) -> u8 {
        weekday_of(self.start_weekday, self.day)
    }

    fn advance(&mut self) {
        self.day += 1;
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new(0)
    }
}

/// Weekday (0..=6) of calendar day `day` when day 0 falls on `start_weekday`.
pub fn weekday_of(start_weekday: u8, day: u32) -> u8 {
    ((u64::from(start_weekday % 7) + u64::from(day)) % 7) as u8
}

/// One line of the append-only action log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventLogEntry {
    pub day: u32,
    pub agent_id: AgentId,
    pub event_type: String,
    pub detail: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AgrError {
    #[error("agent name must not be empty")]
    EmptyName,
    #[error("unknown agent {0}")]
    UnknownAgent(AgentId),
    #[error("unknown environment {0}")]
    UnknownEnvironment(EnvId),
    #[error("agent {agent} already plays {role:?} in environment {env}")]
    DuplicateBinding { agent: AgentId, env: EnvId, role: RoleName },
    #[error("agent {agent} does not play {role:?} in environment {env}")]
    UnknownBinding { agent: AgentId, env: EnvId, role: RoleName },
    #[error("agents {sender} and {receiver} share no environment")]
    NoSharedEnvironment { sender: AgentId, receiver: AgentId },
    #[error("the system id 0 cannot send messages")]
    ReservedSender,
    #[error("no scenario loaded")]
    NoScenarioLoaded,
}

/// All organizational state: agents, environments, bindings, inboxes, clock and log.
#[derive(Debug, Clone, Default)]
pub struct World {
    agents: BTreeMap<AgentId, AgentRecord>,
    environments: BTreeMap<EnvId, EnvironmentRecord>,
    members: BTreeMap<EnvId, BTreeSet<AgentId>>,
    bindings: BTreeMap<(AgentId, EnvId, RoleName), RoleData>,
    agent_envs: BTreeMap<AgentId, BTreeSet<EnvId>>,
    inboxes: BTreeMap<AgentId, Vec<Message>>,
    clock: SimClock,
    log: Vec<EventLogEntry>,
    log_by_agent: BTreeMap<AgentId, Vec<usize>>,
    next_agent: u64,
    next_env: u64,
}

impl World {
    pub fn new(start_weekday: u8) -> Self {
        Self {
            clock: SimClock::new(start_weekday),
            ..Self::default()
        }
    }

    pub fn create_agent(&mut self, name: &str, kind: AgentKind) -> Result<AgentId, AgrError> {
        if name.trim().is_empty() {
            return Err(AgrError::EmptyName);
        }
        self.next_agent += 1;
        let id = AgentId(self.next_agent);
        self.agents.insert(
            id,
            AgentRecord {
                id,
                name: name.to_owned(),
                kind,
            },
        );
        Ok(id)
    }

    pub fn create_environment(&mut self, name: &str, kind: EnvKind) -> Result<EnvId, AgrError> {
        if name.trim().is_empty() {
            return Err(AgrError::EmptyName);
        }
        self.next_env += 1;
        let id = EnvId(self.next_env);
        self.environments.insert(
            id,
            EnvironmentRecord {
                id,
                name: name.to_owned(),
                kind,
            },
        );
        self.members.insert(id, BTreeSet::new());
        Ok(id)
    }

    pub fn assume_role(
        &mut self,
        agent: AgentId,
        env: EnvId,
        role: RoleName,
        role_data: RoleData,
    ) -> Result<RoleBinding, AgrError> {
        self.require_agent(agent)?;
        self.require_env(env)?;
        let key = (agent, env, role);
        if self.bindings.contains_key(&key) {
            return Err(AgrError::DuplicateBinding { agent, env, role });
        }
        self.bindings.insert(key, role_data.clone());
        self.members.entry(env).or_default().insert(agent);
        self.agent_envs.entry(agent).or_default().insert(env);
        self.log_event(
            agent,
            "role_assumed",
            format!("{} in {}", role.as_str(), self.environments[&env].name),
        );
        Ok(RoleBinding {
            agent_id: agent,
            environment_id: env,
            role_name: role,
            role_data,
        })
    }

    pub fn leave_role(&mut self, agent: AgentId, env: EnvId, role: RoleName) -> Result<RoleBinding, AgrError> {
        let role_data = self
            .bindings
            .remove(&(agent, env, role))
            .ok_or(AgrError::UnknownBinding { agent, env, role })?;
        let still_member = self
            .bindings
            .range((agent, env, RoleName::ALL[0])..=(agent, env, RoleName::ALL[5]))
            .next()
            .is_some();
        if !still_member {
            if let Some(m) = self.members.get_mut(&env) {
                m.remove(&agent);
            }
            if let Some(e) = self.agent_envs.get_mut(&agent) {
                e.remove(&env);
            }
        }
        self.log_event(
            agent,
            "role_left",
            format!("{} in {}", role.as_str(), self.environments[&env].name),
        );
        Ok(RoleBinding {
            agent_id: agent,
            environment_id: env,
            role_name: role,
            role_data,
        })
    }

    /// Replaces the data of an existing binding.
    pub fn update_role_data(
        &mut self,
        agent: AgentId,
        env: EnvId,
        role: RoleName,
        role_data: RoleData,
    ) -> Result<(), AgrError> {
        let slot = self
            .bindings
            .get_mut(&(agent, env, role))
            .ok_or(AgrError::UnknownBinding { agent, env, role })?;
        *slot = role_data;
        Ok(())
    }

    pub fn send_message(
        &mut self,
        sender: AgentId,
        receiver: AgentId,
        payload: RoleData,
    ) -> Result<DeliveryReceipt, AgrError> {
        if sender == SYSTEM_ID {
            return Err(AgrError::ReservedSender);
        }
        self.require_agent(sender)?;
        self.require_agent(receiver)?;
        let via = self
            .shared_environment(sender, receiver)
            .ok_or(AgrError::NoSharedEnvironment { sender, receiver })?;
        let tick = self.clock.day();
        self.inboxes.entry(receiver).or_default().push(Message {
            sender_id: sender,
            receiver_id: receiver,
            payload,
            tick,
        });
        self.log_event(receiver, "message_received", format!("from {sender}"));
        Ok(DeliveryReceipt {
            sender_id: sender,
            receiver_id: receiver,
            via_environment: via,
            tick,
        })
    }

    /// Lowest-id environment both agents belong to.
    pub fn shared_environment(&self, a: AgentId, b: AgentId) -> Option<EnvId> {
        let (ea, eb) = (self.agent_envs.get(&a)?, self.agent_envs.get(&b)?);
        ea.intersection(eb).next().copied()
    }

    pub fn agents_in_environment(&self, env: EnvId) -> Result<Vec<AgentId>, AgrError> {
        self.members
            .get(&env)
            .map(|m| m.iter().copied().collect())
            .ok_or(AgrError::UnknownEnvironment(env))
    }

    pub fn is_member(&self, env: EnvId, agent: AgentId) -> bool {
        self.members.get(&env).is_some_and(|m| m.contains(&agent))
    }

    pub fn environments_of(&self, agent: AgentId) -> Vec<EnvId> {
        self.agent_envs
            .get(&agent)
            .map(|e| e.iter().copied().collect())
            .unwrap_or_default()
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentRecord> {
        self.agents.get(&id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentRecord> {
        self.agents.values()
    }

    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    pub fn environment(&self, id: EnvId) -> Option<&EnvironmentRecord> {
        self.environments.get(&id)
    }

    pub fn environments(&self) -> impl Iterator<Item = &EnvironmentRecord> {
        self.environments.values()
    }

    pub fn binding(&self, agent: AgentId, env: EnvId, role: RoleName) -> Option<RoleBinding> {
        self.bindings.get(&(agent, env, role)).map(|data| RoleBinding {
            agent_id: agent,
            environment_id: env,
            role_name: role,
            role_data: data.clone(),
        })
    }

    /// Every binding of `agent`, ordered by (environment, role).
    pub fn bindings_of(&self, agent: AgentId) -> Vec<RoleBinding> {
        let lo = (agent, EnvId(0), RoleName::ALL[0]);
        let hi = (agent, EnvId(u64::MAX), RoleName::ALL[5]);
        self.bindings
            .range(lo..=hi)
            .map(|(&(a, e, r), data)| RoleBinding {
                agent_id: a,
                environment_id: e,
                role_name: r,
                role_data: data.clone(),
            })
            .collect()
    }

    pub fn has_role(&self, agent: AgentId, role: RoleName) -> bool {
        self.agent_envs
            .get(&agent)
            .is_some_and(|envs| envs.iter().any(|&e| self.bindings.contains_key(&(agent, e, role))))
    }

    pub fn inbox(&self, agent: AgentId) -> &[Message] {
        self.inboxes.get(&agent).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    /// Appends an entry stamped with the current day.
    pub fn log_event(&mut self, agent: AgentId, event_type: &str, detail: impl Into<String>) {
        let idx = self.log.len();
        self.log.push(EventLogEntry {
            day: self.clock.day(),
            agent_id: agent,
            event_type: event_type.to_owned(),
            detail: detail.into(),
        });
        self.log_by_agent.entry(agent).or_default().push(idx);
    }

    pub fn event_log(&self) -> &[EventLogEntry] {
        &self.log
    }

    /// Up to `max` entries for `agent`, newest first.
    pub fn recent_events(&self, agent: AgentId, max: usize) -> Vec<&EventLogEntry> {
        self.log_by_agent
            .get(&agent)
            .map(|idx| idx.iter().rev().take(max).map(|&i| &self.log[i]).collect())
            .unwrap_or_default()
    }

    fn require_agent(&self, id: AgentId) -> Result<(), AgrError> {
        if self.agents.contains_key(&id) {
            Ok(())
        } else {
            Err(AgrError::UnknownAgent(id))
        }
    }

    fn require_env(&self, id: EnvId) -> Result<(), AgrError> {
        if self.environments.contains_key(&id) {
            Ok(())
        } else {
            Err(AgrError::UnknownEnvironment(id))
        }
    }
}

/// Day-level activity attached to an engine.
pub trait Behavior {
    /// Agents that act today. Order is irrelevant; the engine sorts and dedups.
    fn actors(&self, world: &World) -> Vec<AgentId>;

    /// Runs one agent's activity for the current day.
    fn act(&mut self, agent: AgentId, world: &mut World) -> Result<(), AgrError>;
}

/// A [`World`] plus the behavior that drives it.
#[derive(Debug, Clone)]
pub struct Engine<B> {
    world: World,
    behavior: Option<B>,
}

impl<B: Behavior> Engine<B> {
    pub fn new(start_weekday: u8) -> Self {
        Self {
            world: World::new(start_weekday),
            behavior: None,
        }
    }

    pub fn with_world(world: World) -> Self {
        Self { world, behavior: None }
    }

    pub fn load(&mut self, behavior: B) {
        self.behavior = Some(behavior);
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn world_mut(&mut self) -> &mut World {
        &mut self.world
    }

    pub fn behavior(&self) -> Option<&B> {
        self.behavior.as_ref()
    }

    /// Executes the current day and advances the clock by one.
    ///
    /// Returns the entries appended to the log during this day.
    pub fn step(&mut self) -> Result<Vec<EventLogEntry>, AgrError> {
        let behavior = self.behavior.as_mut().ok_or(AgrError::NoScenarioLoaded)?;
        let start = self.world.log.len();
        let mut actors = behavior.actors(&self.world);
        actors.sort_unstable();
        actors.dedup();
        for agent in actors {
            behavior.act(agent, &mut self.world)?;
        }
        self.world.clock.advance();
        Ok(self.world.log[start..].to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Recorder {
        order: Vec<AgentId>,
        actors: Vec<AgentId>,
    }

    impl Behavior for Recorder {
        fn actors(&self, _: &World) -> Vec<AgentId> {
            self.actors.clone()
        }

        fn act(&mut self, agent: AgentId, world: &mut World) -> Result<(), AgrError> {
            self.order.push(agent);
            world.log_event(agent, "acted", "");
            Ok(())
        }
    }

    fn geo_world() -> (World, EnvId) {
        let mut w = World::new(0);
        let env = w.create_environment("GeoEnvironment", EnvKind::Geo).unwrap();
        (w, env)
    }

    #[test]
    fn first_id_is_one_and_ids_increase() {
        let mut w = World::new(0);
        let a = w.create_agent("Per", AgentKind::Person).unwrap();
        let b = w.create_agent("Kari", AgentKind::Person).unwrap();
        assert_eq!(a, AgentId(1));
        assert!(b > a);
        assert_eq!(w.create_agent("", AgentKind::Person), Err(AgrError::EmptyName));
    }

    #[test]
    fn assume_role_joins_environment() {
        let (mut w, env) = geo_world();
        let per = w.create_agent("Per", AgentKind::Person).unwrap();
        let school = w.create_agent("Kragerø skole", AgentKind::Building).unwrap();
        w.assume_role(per, env, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(school, env, RoleName::School, RoleData::new()).unwrap();
        assert_eq!(w.agents_in_environment(env).unwrap(), vec![per, school]);
        assert!(w.binding(school, env, RoleName::School).is_some());
        assert_eq!(
            w.assume_role(per, env, RoleName::Resident, RoleData::new()),
            Err(AgrError::DuplicateBinding {
                agent: per,
                env,
                role: RoleName::Resident
            })
        );
        assert_eq!(
            w.assume_role(AgentId(99), env, RoleName::Resident, RoleData::new()),
            Err(AgrError::UnknownAgent(AgentId(99)))
        );
        assert_eq!(
            w.assume_role(per, EnvId(42), RoleName::Resident, RoleData::new()),
            Err(AgrError::UnknownEnvironment(EnvId(42)))
        );
    }

    #[test]
    fn members_are_sorted() {
        let (mut w, env) = geo_world();
        let ids: Vec<_> = (0..5)
            .map(|i| w.create_agent(&format!("a{i}"), AgentKind::Person).unwrap())
            .collect();
        w.assume_role(ids[4], env, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(ids[1], env, RoleName::Resident, RoleData::new()).unwrap();
        assert_eq!(w.agents_in_environment(env).unwrap(), vec![ids[1], ids[4]]);
        let fresh = w.create_environment("net", EnvKind::Network).unwrap();
        assert!(w.agents_in_environment(fresh).unwrap().is_empty());
        assert_eq!(
            w.agents_in_environment(EnvId(77)),
            Err(AgrError::UnknownEnvironment(EnvId(77)))
        );
    }

    #[test]
    fn leave_role_keeps_membership_while_other_roles_remain() {
        let (mut w, env) = geo_world();
        let a = w.create_agent("Per", AgentKind::Person).unwrap();
        w.assume_role(a, env, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(a, env, RoleName::Student, RoleData::new()).unwrap();
        w.leave_role(a, env, RoleName::Student).unwrap();
        assert_eq!(w.agents_in_environment(env).unwrap(), vec![a]);
        w.leave_role(a, env, RoleName::Resident).unwrap();
        assert!(w.agents_in_environment(env).unwrap().is_empty());
        assert!(matches!(
            w.leave_role(a, env, RoleName::Resident),
            Err(AgrError::UnknownBinding { .. })
        ));
    }

    #[test]
    fn messaging_requires_shared_environment() {
        let (mut w, geo) = geo_world();
        let net = w.create_environment("net", EnvKind::Network).unwrap();
        let a = w.create_agent("a", AgentKind::Person).unwrap();
        let b = w.create_agent("b", AgentKind::Person).unwrap();
        let c = w.create_agent("c", AgentKind::Person).unwrap();
        w.assume_role(a, geo, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(b, geo, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(c, net, RoleName::Resident, RoleData::new()).unwrap();

        let receipt = w.send_message(a, b, RoleData::new()).unwrap();
        assert_eq!(receipt.via_environment, geo);
        assert_eq!(w.inbox(b).len(), 1);
        assert_eq!(
            w.send_message(a, c, RoleData::new()),
            Err(AgrError::NoSharedEnvironment { sender: a, receiver: c })
        );
        assert!(w.send_message(a, a, RoleData::new()).is_ok());
        assert_eq!(
            w.send_message(SYSTEM_ID, a, RoleData::new()),
            Err(AgrError::ReservedSender)
        );
        assert_eq!(
            w.send_message(a, AgentId(50), RoleData::new()),
            Err(AgrError::UnknownAgent(AgentId(50)))
        );
    }

    #[test]
    fn inbox_preserves_send_order() {
        let (mut w, geo) = geo_world();
        let a = w.create_agent("a", AgentKind::Person).unwrap();
        let b = w.create_agent("b", AgentKind::Person).unwrap();
        w.assume_role(a, geo, RoleName::Resident, RoleData::new()).unwrap();
        w.assume_role(b, geo, RoleName::Resident, RoleData::new()).unwrap();
        for i in 0..3i64 {
            let mut p = RoleData::new();
            p.insert("n".into(), i.into());
            w.send_message(a, b, p).unwrap();
        }
        let seen: Vec<_> = w.inbox(b).iter().map(|m| m.payload["n"].as_i64().unwrap()).collect();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn step_activates_in_id_order_and_advances_clock() {
        let mut engine: Engine<Recorder> = Engine::new(0);
        assert_eq!(engine.step(), Err(AgrError::NoScenarioLoaded));
        let ids: Vec<_> = (0..3)
            .map(|i| {
                engine
                    .world_mut()
                    .create_agent(&format!("a{i}"), AgentKind::Person)
                    .unwrap()
            })
            .collect();
        engine.load(Recorder {
            order: vec![],
            actors: vec![ids[2], ids[0], ids[1]],
        });
        assert_eq!(engine.world().clock().day(), 0);
        let events = engine.step().unwrap();
        assert_eq!(engine.world().clock().day(), 1);
        assert_eq!(
            engine.behavior().unwrap().order,
            vec![AgentId(1), AgentId(2), AgentId(3)]
        );
        assert_eq!(events.len(), 3);
    }

    #[test]
    fn step_without_actors_still_advances() {
        let mut engine: Engine<Recorder> = Engine::new(3);
        engine.load(Recorder {
            order: vec![],
            actors: vec![],
        });
        assert!(engine.step().unwrap().is_empty());
        assert_eq!(engine.world().clock().day(), 1);
        assert_eq!(engine.world().clock().weekday(), 4);
    }

    #[test]
    fn weekday_wraps() {
        assert_eq!(weekday_of(0, 14), 0);
        assert_eq!(weekday_of(5, 2), 0);
        assert_eq!(weekday_of(6, 0), 6);
    }

    #[test]
    fn recent_events_are_newest_first() {
        let mut w = World::new(0);
        let a = w.create_agent("a", AgentKind::Person).unwrap();
        for i in 0..5 {
            w.log_event(a, "tick", format!("{i}"));
        }
        let recent: Vec<_> = w.recent_events(a, 3).iter().map(|e| e.detail.clone()).collect();
        assert_eq!(recent, vec!["4", "3", "2"]);
    }
}
