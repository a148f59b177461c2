//! Synthetic population: adults drawn from categorical marginals, households
//! with generated children, and random allocation of households to homes.
//!
//! Attributes are drawn independently of each other; joint structure between
//! attributes is not modelled. [`FitReport`] states this alongside the fit.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{dwelling_units, Building};

pub const ADULT_MIN_AGE: u8 = 16;
pub const CHILD_MAX_AGE: u8 = 15;
const SUM_TOLERANCE: f64 = 1e-9;

// Independent streams so the same seed can drive every stage.
const ADULT_STREAM: u64 = 1;
const HOUSEHOLD_STREAM: u64 = 2;
const ALLOCATION_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum PopulationError {
    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),
    #[error("insufficient capacity: {households} households but only {capacity} dwelling units")]
    InsufficientCapacity { households: usize, capacity: u64 },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

macro_rules! category_enum {
    ($name:ident { $($variant:ident => $s:literal),* $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(rename_all = "snake_case")]
        pub enum $name { $($variant),* }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self { $($name::$variant => $s),* }
            }
        }
    };
}

category_enum!(Sex { Female => "female", Male => "male" });
category_enum!(EconomicStatus {
    Employed => "employed",
    Unemployed => "unemployed",
    Student => "student",
    Inactive => "inactive",
});
category_enum!(EducationLevel {
    Primary => "primary",
    Secondary => "secondary",
    Tertiary => "tertiary",
});
category_enum!(Health {
    VeryGood => "very_good",
    Good => "good",
    Fair => "fair",
    Bad => "bad",
    VeryBad => "very_bad",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonAttributes {
    pub person_id: u64,
    pub age: u8,
    pub sex: Sex,
    pub economic_status: EconomicStatus,
    pub education_level: EducationLevel,
    pub self_perceived_health: Health,
}

impl PersonAttributes {
    pub fn is_adult(&self) -> bool {
        self.age >= ADULT_MIN_AGE
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Household {
    pub household_id: u64,
    pub adult_ids: Vec<u64>,
    pub child_ids: Vec<u64>,
    pub residence_building_id: Option<u64>,
}

impl Household {
    pub fn members(&self) -> impl Iterator<Item = u64> + '_ {
        self.adult_ids.iter().chain(&self.child_ids).copied()
    }
}

/// Inclusive age band with its probability mass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgeBand {
    pub min: u8,
    pub max: u8,
    pub p: f64,
}

impl AgeBand {
    pub fn label(&self) -> String {
        format!("{}-{}", self.min, self.max)
    }

    pub fn contains(&self, age: u8) -> bool {
        (self.min..=self.max).contains(&age)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HouseholdSpec {
    /// Number of adults per household → probability. Keys are ≥ 1.
    pub adult_count: BTreeMap<u32, f64>,
    pub child_probability: f64,
    /// Number of children in a household that has children → probability.
    pub child_count: BTreeMap<u32, f64>,
    /// Child age bands (ages 0–15). Uniform over 0–15 when omitted.
    #[serde(default = "default_child_age_bands")]
    pub child_age_bands: Vec<AgeBand>,
}

fn default_child_age_bands() -> Vec<AgeBand> {
    vec![AgeBand {
        min: 0,
        max: CHILD_MAX_AGE,
        p: 1.0,
    }]
}

/// Target marginal distributions, one per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginalSpec {
    pub age_bands: Vec<AgeBand>,
    pub sex: BTreeMap<Sex, f64>,
    pub economic_status: BTreeMap<EconomicStatus, f64>,
    pub education_level: BTreeMap<EducationLevel, f64>,
    pub self_perceived_health: BTreeMap<Health, f64>,
    pub household: HouseholdSpec,
}

fn check_distribution<'a>(name: &str, probs: impl IntoIterator<Item = &'a f64>) -> Result<(), PopulationError> {
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(PopulationError::InvalidMarginals(format!(
                "{name}: probability {p} is not a finite non-negative number"
            )));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(PopulationError::InvalidMarginals(format!(
            "{name}: probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

fn check_bands(name: &str, bands: &[AgeBand], lo: u8, hi: u8) -> Result<(), PopulationError> {
    if bands.is_empty() {
        return Err(PopulationError::InvalidMarginals(format!("{name}: no bands")));
    }
    for b in bands {
        if b.min > b.max || b.min < lo || b.max > hi {
            return Err(PopulationError::InvalidMarginals(format!(
                "{name}: band {} outside {lo}-{hi}",
                b.label()
            )));
        }
    }
    let mut sorted: Vec<_> = bands.iter().collect();
    sorted.sort_by_key(|b| b.min);
    if sorted.windows(2).any(|w| w[1].min <= w[0].max) {
        return Err(PopulationError::InvalidMarginals(format!("{name}: bands overlap")));
    }
    check_distribution(name, bands.iter().map(|b| &b.p))
}

impl MarginalSpec {
    pub fn validate(&self) -> Result<(), PopulationError> {
        check_bands("age_bands", &self.age_bands, ADULT_MIN_AGE, u8::MAX)?;
        check_distribution("sex", self.sex.values())?;
        check_distribution("economic_status", self.economic_status.values())?;
        check_distribution("education_level", self.education_level.values())?;
        check_distribution("self_perceived_health", self.self_perceived_health.values())?;
        let h = &self.household;
        if h.adult_count.contains_key(&0) || h.child_count.contains_key(&0) {
            return Err(PopulationError::InvalidMarginals(
                "household counts must be at least 1".into(),
            ));
        }
        check_distribution("household.adult_count", h.adult_count.values())?;
        if !(0.0..=1.0).contains(&h.child_probability) {
            return Err(PopulationError::InvalidMarginals(format!(
                "household.child_probability {} outside [0, 1]",
                h.child_probability
            )));
        }
        if h.child_probability > 0.0 {
            check_distribution("household.child_count", h.child_count.values())?;
            check_bands("household.child_age_bands", &h.child_age_bands, 0, CHILD_MAX_AGE)?;
        }
        Ok(())
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, PopulationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| PopulationError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let spec: MarginalSpec = serde_json::from_str(&text).map_err(|source| PopulationError::Json {
            path: path.display().to_string(),
            source,
        })?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Categorical sampler over the keys of a probability map.
struct Categorical<T> {
    values: Vec<T>,
    index: WeightedIndex<f64>,
}

impl<T: Copy> Categorical<T> {
    fn new<'a>(name: &str, entries: impl IntoIterator<Item = (&'a T, &'a f64)>) -> Result<Self, PopulationError>
    where
        T: 'a,
    {
        let (values, weights): (Vec<T>, Vec<f64>) = entries.into_iter().map(|(v, p)| (*v, *p)).unzip();
        let index =
            WeightedIndex::new(&weights).map_err(|e| PopulationError::InvalidMarginals(format!("{name}: {e}")))?;
        Ok(Self { values, index })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> T {
        self.values[self.index.sample(rng)]
    }
}

struct BandSampler {
    bands: Vec<(u8, u8)>,
    index: WeightedIndex<f64>,
}

impl BandSampler {
    fn new(name: &str, bands: &[AgeBand]) -> Result<Self, PopulationError> {
        let index = WeightedIndex::new(bands.iter().map(|b| b.p))
            .map_err(|e| PopulationError::InvalidMarginals(format!("{name}: {e}")))?;
        Ok(Self {
            bands: bands.iter().map(|b| (b.min, b.max)).collect(),
            index,
        })
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> u8 {
        let (lo, hi) = self.bands[self.index.sample(rng)];
        rng.gen_range(lo..=hi)
    }
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` adults with ids `1..=n`.
pub fn sample_adults(marginals: &MarginalSpec, n: usize, seed: u64) -> Result<Vec<PersonAttributes>, PopulationError> {
    marginals.validate()?;
    let ages = BandSampler::new("age_bands", &marginals.age_bands)?;
    let sex = Categorical::new("sex", &marginals.sex)?;
    let econ = Categorical::new("economic_status", &marginals.economic_status)?;
    let edu = Categorical::new("education_level", &marginals.education_level)?;
    let health = Categorical::new("self_perceived_health", &marginals.self_perceived_health)?;
    let mut rng = stream_rng(seed, ADULT_STREAM);
    Ok((1..=n as u64)
        .map(|person_id| PersonAttributes {
            person_id,
            age: ages.sample(&mut rng),
            sex: sex.sample(&mut rng),
            economic_status: econ.sample(&mut rng),
            education_level: edu.sample(&mut rng),
            self_perceived_health: health.sample(&mut rng),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HouseholdSynthesis {
    pub households: Vec<Household>,
    /// Newly generated children, ids continuing after the highest adult id.
    pub children: Vec<PersonAttributes>,
}

/// Groups adults into households and adds generated children.
///
/// Adults are shuffled, then consumed in runs whose length is drawn from the
/// adult-count distribution (the last household takes whatever remains).
pub fn build_households(
    adults: &[PersonAttributes],
    marginals: &MarginalSpec,
    seed: u64,
) -> Result<HouseholdSynthesis, PopulationError> {
    marginals.validate()?;
    let h = &marginals.household;
    let adult_count = Categorical::new("household.adult_count", &h.adult_count)?;
    let kids = if h.child_probability > 0.0 {
        Some((
            Categorical::new("household.child_count", &h.child_count)?,
            BandSampler::new("household.child_age_bands", &h.child_age_bands)?,
        ))
    } else {
        None
    };
    let sex = Categorical::new("sex", &marginals.sex)?;
    let health = Categorical::new("self_perceived_health", &marginals.self_perceived_health)?;

    let mut rng = stream_rng(seed, HOUSEHOLD_STREAM);
    let mut order: Vec<u64> = adults.iter().map(|a| a.person_id).collect();
    order.shuffle(&mut rng);

    let mut next_person = adults.iter().map(|a| a.person_id).max().unwrap_or(0) + 1;
    let mut households = Vec::new();
    let mut children = Vec::new();
    let mut rest = order.as_slice();
    while !rest.is_empty() {
        let take = (adult_count.sample(&mut rng) as usize).min(rest.len());
        let (members, tail) = rest.split_at(take);
        rest = tail;
        let mut child_ids = Vec::new();
        if let Some((count, ages)) = &kids {
            if rng.gen_bool(h.child_probability) {
                for _ in 0..count.sample(&mut rng) {
                    let child = PersonAttributes {
                        person_id: next_person,
                        age: ages.sample(&mut rng),
                        sex: sex.sample(&mut rng),
                        economic_status: EconomicStatus::Student,
                        education_level: EducationLevel::Primary,
                        self_perceived_health: health.sample(&mut rng),
                    };
                    next_person += 1;
                    child_ids.push(child.person_id);
                    children.push(child);
                }
            }
        }
        households.push(Household {
            household_id: households.len() as u64 + 1,
            adult_ids: members.to_vec(),
            child_ids,
            residence_building_id: None,
        });
    }
    Ok(HouseholdSynthesis { households, children })
}

/// household_id → building id.
pub type Allocation = BTreeMap<u64, u64>;

/// Assigns every household to a home.
///
/// Each residential building contributes one slot per dwelling unit; the slot
/// list is shuffled and household `i` (in input order) takes slot `i`.
pub fn allocate_households(
    households: &[Household],
    buildings: &[Building],
    seed: u64,
) -> Result<Allocation, PopulationError> {
    let mut slots: Vec<u64> = buildings
        .iter()
        .flat_map(|b| std::iter::repeat_n(b.id, dwelling_units(b) as usize))
        .collect();
    if slots.len() < households.len() {
        return Err(PopulationError::InsufficientCapacity {
            households: households.len(),
            capacity: slots.len() as u64,
        });
    }
    let mut rng = stream_rng(seed, ALLOCATION_STREAM);
    slots.shuffle(&mut rng);
    Ok(households.iter().zip(slots).map(|(h, b)| (h.household_id, b)).collect())
}

/// Fit of one attribute's empirical distribution to its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFit {
    pub attribute: String,
    pub target: BTreeMap<String, f64>,
    pub empirical: BTreeMap<String, f64>,
    /// Sum of absolute differences over the union of categories; in [0, 2].
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub sample_size: usize,
    pub attributes: Vec<AttributeFit>,
    pub threshold: f64,
    pub passed: bool,
    pub assumption: String,
}

impl FitReport {
    pub fn attribute(&self, name: &str) -> Option<&AttributeFit> {
        self.attributes.iter().find(|a| a.attribute == name)
    }
}

/// Label for `age` under the given bands, or `"unbanded"`.
pub fn age_band_label(bands: &[AgeBand], age: u8) -> String {
    bands
        .iter()
        .find(|b| b.contains(age))
        .map_or_else(|| "unbanded".to_owned(), AgeBand::label)
}

fn l1_fit(attribute: &str, target: BTreeMap<String, f64>, labels: impl Iterator<Item = String>) -> AttributeFit {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    let mut n = 0usize;
    for label in labels {
        *counts.entry(label).or_default() += 1;
        n += 1;
    }
    let empirical: BTreeMap<String, f64> = counts.into_iter().map(|(k, c)| (k, c as f64 / n as f64)).collect();
    let mut keys: Vec<&String> = target.keys().chain(empirical.keys()).collect();
    keys.sort();
    keys.dedup();
    let l1 = keys
        .iter()
        .map(|k| (empirical.get(*k).unwrap_or(&0.0) - target.get(*k).unwrap_or(&0.0)).abs())
        .sum();
    AttributeFit {
        attribute: attribute.to_owned(),
        target,
        empirical,
        l1,
    }
}

fn named<T: Copy>(map: &BTreeMap<T, f64>, name: impl Fn(T) -> &'static str) -> BTreeMap<String, f64> {
    map.iter().map(|(k, p)| (name(*k).to_owned(), *p)).collect()
}

/// Per-attribute L1 distance between `sample` and the target marginals.
/// Passes when every attribute's L1 is at most `threshold`.
pub fn validate_population(sample: &[PersonAttributes], marginals: &MarginalSpec, threshold: f64) -> FitReport {
    let bands = &marginals.age_bands;
    let attributes = vec![
        l1_fit(
            "age_band",
            bands.iter().map(|b| (b.label(), b.p)).collect(),
            sample.iter().map(|p| age_band_label(bands, p.age)),
        ),
        l1_fit(
            "sex",
            named(&marginals.sex, Sex::as_str),
            sample.iter().map(|p| p.sex.as_str().to_owned()),
        ),
        l1_fit(
            "economic_status",
            named(&marginals.economic_status, EconomicStatus::as_str),
            sample.iter().map(|p| p.economic_status.as_str().to_owned()),
        ),
        l1_fit(
            "education_level",
            named(&marginals.education_level, EducationLevel::as_str),
            sample.iter().map(|p| p.education_level.as_str().to_owned()),
        ),
        l1_fit(
            "self_perceived_health",
            named(&marginals.self_perceived_health, Health::as_str),
            sample.iter().map(|p| p.self_perceived_health.as_str().to_owned()),
        ),
    ];
    let passed = !sample.is_empty() && attributes.iter().all(|a| a.l1 <= threshold);
    FitReport {
        sample_size: sample.len(),
        attributes,
        threshold,
        passed,
        assumption: "attributes sampled independently per marginal; joint structure not modelled".to_owned(),
    }
}

/// Writes `person_id,household_id,age,sex,economic_status,education_level,self_perceived_health,building_id`.
///
/// Rows follow person id order. `building_id` is empty for unallocated households.
pub fn write_population_csv<W: Write>(
    out: W,
    persons: &[PersonAttributes],
    households: &[Household],
    allocation: &Allocation,
) -> csv::Result<()> {
    let home: BTreeMap<u64, u64> = households
        .iter()
        .flat_map(|h| h.members().map(move |p| (p, h.household_id)))
        .collect();
    let mut sorted: Vec<&PersonAttributes> = persons.iter().collect();
    sorted.sort_by_key(|p| p.person_id);
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "person_id",
        "household_id",
        "age",
        "sex",
        "economic_status",
        "education_level",
        "self_perceived_health",
        "building_id",
    ])?;
    for p in sorted {
        let hh = home.get(&p.person_id);
        let building = hh.and_then(|h| allocation.get(h));
        w.write_record([
            p.person_id.to_string(),
            hh.map(u64::to_string).unwrap_or_default(),
            p.age.to_string(),
            p.sex.as_str().to_owned(),
            p.economic_status.as_str().to_owned(),
            p.education_level.as_str().to_owned(),
            p.self_perceived_health.as_str().to_owned(),
            building.map(u64::to_string).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
