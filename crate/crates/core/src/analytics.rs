//! Annotator demographics: location by continent, age group and gender,
//! compared with a reference population distribution.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{AgeBucket, AnnotatorId, AnnotatorProfile, Gender};

const COUNTRY_TABLE: &str = include_str!("../data/country_continents.csv");
const WORLD_POPULATION: &str = include_str!("../data/world_population.jsonl");

/// Label of the bucket holding profiles whose country code is not in the table.
pub const UNKNOWN_REGION: &str = "Unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Continent {
    Africa,
    Asia,
    Europe,
    NorthAmerica,
    SouthAmerica,
    Oceania,
}

impl Continent {
    pub const ALL: [Continent; 6] = [
        Continent::Africa,
        Continent::Asia,
        Continent::Europe,
        Continent::NorthAmerica,
        Continent::SouthAmerica,
        Continent::Oceania,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Continent::Africa => "Africa",
            Continent::Asia => "Asia",
            Continent::Europe => "Europe",
            Continent::NorthAmerica => "NorthAmerica",
            Continent::SouthAmerica => "SouthAmerica",
            Continent::Oceania => "Oceania",
        }
    }
}

impl fmt::Display for Continent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Continent {
    type Err = AnalyticsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Continent::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| AnalyticsError::InvalidReference(format!("unknown continent {s:?}")))
    }
}

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("unknown country code {0:?}")]
    UnknownCountry(String),
    #[error("invalid reference distribution: {0}")]
    InvalidReference(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

fn country_table() -> &'static HashMap<String, Continent> {
    static TABLE: OnceLock<HashMap<String, Continent>> = OnceLock::new();
    TABLE.get_or_init(|| {
        COUNTRY_TABLE
            .lines()
            .skip(1)
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (code, continent) = l.split_once(',').expect("country table row");
                (code.to_string(), continent.parse().expect("country table continent"))
            })
            .collect()
    })
}

/// Maps an ISO-3166 alpha-2 code (any case) to its continent.
pub fn country_to_continent(code: &str) -> Result<Continent, AnalyticsError> {
    country_table()
        .get(&code.trim().to_ascii_uppercase())
        .copied()
        .ok_or_else(|| AnalyticsError::UnknownCountry(code.to_string()))
}

/// Reference shares per continent, summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceDistribution {
    shares: BTreeMap<Continent, f64>,
}

#[derive(Deserialize)]
struct ReferenceLine {
    continent: Continent,
    share: f64,
}

impl ReferenceDistribution {
    /// Continents not listed get share 0.
    pub fn new(shares: BTreeMap<Continent, f64>) -> Result<Self, AnalyticsError> {
        if let Some((c, s)) = shares.iter().find(|(_, s)| !s.is_finite() || **s < 0.0) {
            return Err(AnalyticsError::InvalidReference(format!("share of {c} is {s}")));
        }
        let total: f64 = shares.values().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(AnalyticsError::InvalidReference(format!("shares sum to {total}, not 1")));
        }
        let mut full: BTreeMap<Continent, f64> = Continent::ALL.iter().map(|c| (*c, 0.0)).collect();
        full.extend(shares);
        Ok(ReferenceDistribution { shares: full })
    }

    /// Reads `{"continent": .., "share": ..}` lines.
    pub fn from_jsonl<R: BufRead>(reader: R) -> Result<Self, AnalyticsError> {
        let mut shares = BTreeMap::new();
        for (k, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReferenceLine = serde_json::from_str(&line).map_err(|e| AnalyticsError::Parse {
                line: k + 1,
                message: e.to_string(),
            })?;
            if shares.insert(entry.continent, entry.share).is_some() {
                return Err(AnalyticsError::Parse {
                    line: k + 1,
                    message: format!("{} listed twice", entry.continent),
                });
            }
        }
        ReferenceDistribution::new(shares)
    }

    /// The bundled world-population shares.
    pub fn world_population() -> Self {
        ReferenceDistribution::from_jsonl(WORLD_POPULATION.as_bytes()).expect("bundled reference is valid")
    }

    pub fn share(&self, continent: Continent) -> f64 {
        self.shares[&continent]
    }

    pub fn shares(&self) -> &BTreeMap<Continent, f64> {
        &self.shares
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemographicsReport {
    pub participants: usize,
    pub countries_represented: usize,
    /// Every continent, plus `Unknown` when some country code did not map.
    pub continent_shares: BTreeMap<String, f64>,
    pub age_shares: BTreeMap<String, f64>,
    pub gender_shares: BTreeMap<String, f64>,
    /// Observed minus reference share, per continent.
    pub world_reference_deltas: BTreeMap<String, f64>,
    /// Distinct codes that did not map, in sorted order.
    pub unknown_countries: Vec<String>,
}

/// Builds the report over distinct annotators. When one annotator appears
/// with differing demographics the smallest record is used, so the result
/// does not depend on input order.
pub fn demographics_report<'a>(
    profiles: impl IntoIterator<Item = &'a AnnotatorProfile>,
    reference: &ReferenceDistribution,
) -> DemographicsReport {
    type Key = (String, AgeBucket, Gender);
    let mut distinct: BTreeMap<&AnnotatorId, Key> = BTreeMap::new();
    for p in profiles {
        let key = (p.country_code.trim().to_ascii_uppercase(), p.age_bucket, p.gender);
        distinct
            .entry(&p.annotator_id)
            .and_modify(|k| {
                if key < *k {
                    *k = key.clone();
                }
            })
            .or_insert(key);
    }

    let n = distinct.len();
    let mut continents: BTreeMap<String, usize> = Continent::ALL.iter().map(|c| (c.to_string(), 0)).collect();
    let mut ages: BTreeMap<String, usize> = AgeBucket::ALL.iter().map(|a| (a.label().to_string(), 0)).collect();
    let mut genders: BTreeMap<String, usize> = [Gender::Male, Gender::Female, Gender::Other, Gender::Undisclosed]
        .iter()
        .map(|g| (g.label().to_string(), 0))
        .collect();
    let mut countries = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    for (country, age, gender) in distinct.values() {
        match country_to_continent(country) {
            Ok(c) => {
                countries.insert(country.clone());
                *continents.get_mut(c.as_str()).unwrap() += 1;
            }
            Err(_) => {
                unknown.insert(country.clone());
                *continents.entry(UNKNOWN_REGION.to_string()).or_default() += 1;
            }
        }
        *ages.get_mut(age.label()).unwrap() += 1;
        *genders.get_mut(gender.label()).unwrap() += 1;
    }
    if !unknown.is_empty() {
        tracing::warn!(codes = ?unknown, "annotators with unknown country codes counted as {UNKNOWN_REGION}");
    }

    let share = |counts: BTreeMap<String, usize>| -> BTreeMap<String, f64> {
        counts
            .into_iter()
            .map(|(k, v)| (k, if n == 0 { 0.0 } else { v as f64 / n as f64 }))
            .collect()
    };
    let continent_shares = share(continents);
    let world_reference_deltas = Continent::ALL
        .iter()
        .map(|c| (c.to_string(), continent_shares[c.as_str()] - reference.share(*c)))
        .collect();
    DemographicsReport {
        participants: n,
        countries_represented: countries.len(),
        age_shares: share(ages),
        gender_shares: share(genders),
        continent_shares,
        world_reference_deltas,
        unknown_countries: unknown.into_iter().collect(),
    }
}
