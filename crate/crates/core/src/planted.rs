//! Synthetic dirty datasets with known entities.
//!
//! Each entity gets a clean base value per attribute; each of its records is
//! a copy where every character is independently corrupted with the given
//! probability, half the time by substitution and half by deletion. Records
//! are shuffled so duplicates are not adjacent.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::records::{Dataset, GroundTruth, Record};
use crate::rng::{stream_rng, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub entities: usize,
    /// Records per entity, cycled over entities.
    pub sizes: Vec<usize>,
    /// Per-character corruption probability, in `[0, 1)`.
    pub corruption: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            entities: 60,
            sizes: vec![5],
            corruption: 0.1,
            seed: 0,
        }
    }
}

impl PlantedConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.corruption) {
            return Err(Error::Config(format!(
                "corruption rate must be in [0, 1), got {}",
                self.corruption
            )));
        }
        if self.entities == 0 {
            return Err(Error::Config("need at least one entity".into()));
        }
        if self.sizes.is_empty() || self.sizes.contains(&0) {
            return Err(Error::Config("entity sizes must be >= 1".into()));
        }
        Ok(())
    }

    pub fn record_count(&self) -> usize {
        (0..self.entities).map(|e| self.sizes[e % self.sizes.len()]).sum()
    }
}

#[derive(Debug, Clone)]
pub struct Planted {
    pub dataset: Dataset,
    pub truth: GroundTruth,
    /// Clean attribute values per entity, in entity order.
    pub bases: Vec<Vec<(String, String)>>,
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvwz";
const VOWELS: &[u8] = b"aeiou";
const STREETS: &[&str] = &["st", "ave", "rd", "ln", "blvd", "way"];

fn word(rng: &mut ChaCha8Rng, syllables: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(syllables);
    let mut s = String::with_capacity(n * 2);
    for _ in 0..n {
        s.push(CONSONANTS[rng.random_range(0..CONSONANTS.len())] as char);
        s.push(VOWELS[rng.random_range(0..VOWELS.len())] as char);
    }
    s
}

fn base_entity(rng: &mut ChaCha8Rng) -> Vec<(String, String)> {
    let name = format!("{} {}", word(rng, 2..=3), word(rng, 2..=4));
    let street = format!(
        "{} {} {}",
        rng.random_range(1..=999),
        word(rng, 2..=3),
        STREETS[rng.random_range(0..STREETS.len())]
    );
    let city = word(rng, 2..=4);
    let phone = format!("{:03}-{:04}", rng.random_range(0..1000), rng.random_range(0..10000));
    vec![
        ("name".into(), name),
        ("address".into(), street),
        ("city".into(), city),
        ("phone".into(), phone),
    ]
}

/// Corrupt each character with probability `rate`: substitute a different
/// character of the same class, or drop it.
pub fn corrupt(text: &str, rate: f64, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        if rate > 0.0 && rng.random_bool(rate) {
            if rng.random_bool(0.5) {
                continue;
            }
            out.push(substitute(c, rng));
        } else {
            out.push(c);
        }
    }
    out
}

fn substitute(c: char, rng: &mut ChaCha8Rng) -> char {
    let pool: &[u8] = if c.is_ascii_digit() {
        b"0123456789"
    } else {
        b"abcdefghijklmnopqrstuvwxyz"
    };
    loop {
        let r = pool[rng.random_range(0..pool.len())] as char;
        if r != c {
            return r;
        }
    }
}

pub fn generate(cfg: &PlantedConfig) -> Result<Planted> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, Stream::Planted);
    let bases: Vec<_> = (0..cfg.entities).map(|_| base_entity(&mut rng)).collect();

    let mut rows: Vec<(usize, Vec<(String, String)>)> = Vec::with_capacity(cfg.record_count());
    for (e, base) in bases.iter().enumerate() {
        for _ in 0..cfg.sizes[e % cfg.sizes.len()] {
            let attrs = base
                .iter()
                .map(|(k, v)| (k.clone(), corrupt(v, cfg.corruption, &mut rng)))
                .collect();
            rows.push((e, attrs));
        }
    }
    rows.shuffle(&mut rng);

    let rw = rows.len().to_string().len();
    let ew = cfg.entities.to_string().len();
    let mut records = Vec::with_capacity(rows.len());
    let mut pairs = Vec::with_capacity(rows.len());
    for (i, (e, attrs)) in rows.into_iter().enumerate() {
        let id = format!("r{i:0rw$}");
        pairs.push((id.clone(), format!("e{e:0ew$}")));
        records.push(Record {
            id,
            attributes: attrs,
        });
    }
    Ok(Planted {
        dataset: Dataset::new(records)?,
        truth: GroundTruth::from_pairs(pairs)?,
        bases,
    })
}
