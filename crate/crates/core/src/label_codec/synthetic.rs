//! Seeded generator of plausible list pages and multi-page registers.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{CodecError, LabelCodec, DEFAULT_TOKEN_BUDGET};
use crate::domain::{EntityTag, PageTranscript, PersonRecord};

const SURNAMES: &[&str] = &[
    "Gendre",
    "Paraud",
    "Martin",
    "Joyoz",
    "Bernard",
    "Dubois",
    "Thomas",
    "Robert",
    "Richard",
    "Petit",
    "Durand",
    "Leroy",
    "Moreau",
    "Simon",
    "Laurent",
    "Lefebvre",
    "Michel",
    "Garcia",
    "David",
    "Bertrand",
    "Roux",
    "Vincent",
    "Fournier",
    "Morel",
    "Girard",
    "André",
    "Mercier",
    "Dupont",
    "Lambert",
    "Bonnet",
    "François",
    "Martinez",
    "Aubert",
    "Chevalier",
    "Perrin",
];
const MALE_NAMES: &[&str] = &[
    "Pierre",
    "Jean",
    "Louis",
    "Joseph",
    "François",
    "Antoine",
    "Claude",
    "Gilbert",
    "Jacques",
    "Étienne",
    "Charles",
    "Henri",
    "Jean Baptiste",
    "Marcel",
    "Paul",
];
const FEMALE_NAMES: &[&str] = &[
    "Marie",
    "Suzanne",
    "Jeanne",
    "Anne",
    "Marguerite",
    "Louise",
    "Catherine",
    "Françoise",
    "Claudine",
    "Madeleine",
    "Antoinette",
    "Marie Louise",
    "Jeanne Marie",
];
const OCCUPATIONS: &[&str] = &[
    "cultivateur",
    "métayer",
    "journalier",
    "domestique",
    "tisserand",
    "forgeron",
    "meunier",
    "cordonnier",
    "maçon",
    "charpentier",
    "propriétaire",
    "rentier",
    "menuisier",
    "boulanger",
];
const SECOND_LINKS: &[&str] = &[
    "épouse",
    "mère",
    "père",
    "frère",
    "soeur",
    "beau-père",
    "belle-mère",
];
const LATER_LINKS: &[&str] = &[
    "fils",
    "fille",
    "fils",
    "fille",
    "petit-fils",
    "neveu",
    "nièce",
    "domestique",
    "pensionnaire",
];
const NATIONALITIES: &[&str] = &[
    "française",
    "idem",
    "idem",
    "idem",
    "italienne",
    "espagnole",
];
const CIVIL: &[&str] = &["marié", "mariée", "veuf", "veuve", "célibataire"];
const PLACES: &[&str] = &[
    "Moulins",
    "Neuilly-le-Réal",
    "Vichy",
    "Montluçon",
    "idem",
    "Gannat",
    "Souvigny",
    "Lapalisse",
];
const OBSERVATIONS: &[&str] = &["absent", "militaire", "en nourrice", "aliéné"];

/// Parameters of the synthetic page distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticProfile {
    /// Inclusive row-count range per page.
    pub rows: (usize, usize),
    /// Mean household size; sizes are 1 + Poisson(mean - 1).
    pub household_size_mean: f64,
    /// Presence probability of each field, indexed by [`EntityTag::index`].
    /// Surname entries apply to non-head members; heads always carry one.
    pub field_presence: [f64; 12],
    pub token_budget: usize,
}

impl Default for SyntheticProfile {
    fn default() -> Self {
        let mut field_presence = [0.0; 12];
        for (tag, p) in [
            (EntityTag::SurnameHead, 1.0),
            (EntityTag::Surname, 0.95),
            (EntityTag::Firstname, 0.97),
            (EntityTag::Occupation, 0.7),
            (EntityTag::Link, 0.85),
            (EntityTag::Employer, 0.3),
            (EntityTag::Age, 0.9),
            (EntityTag::Nationality, 0.6),
            (EntityTag::BirthDate, 0.2),
            (EntityTag::CivilStatus, 0.3),
            (EntityTag::Lob, 0.25),
            (EntityTag::Observation, 0.01),
        ] {
            field_presence[tag.index()] = p;
        }
        Self {
            rows: (25, 36),
            household_size_mean: 4.0,
            field_presence,
            token_budget: DEFAULT_TOKEN_BUDGET,
        }
    }
}

impl SyntheticProfile {
    pub fn validate(&self) -> Result<(), CodecError> {
        let bad = |m: String| Err(CodecError::InvalidProfile(m));
        if self.rows.0 > self.rows.1 {
            return bad(format!("row range {:?} is empty", self.rows));
        }
        if !self.household_size_mean.is_finite() || self.household_size_mean < 1.0 {
            return bad(format!(
                "household size mean {} must be >= 1",
                self.household_size_mean
            ));
        }
        if let Some(p) = self
            .field_presence
            .iter()
            .find(|p| !(0.0..=1.0).contains(*p))
        {
            return bad(format!("presence probability {p} outside [0, 1]"));
        }
        Ok(())
    }
}

/// Pages of one register plus the household sizes used to fill them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticRegister {
    pub pages: Vec<PageTranscript>,
    /// Sizes of the households in reading order. The final one may be cut
    /// short by the end of the register.
    pub household_sizes: Vec<usize>,
}

pub fn generate_synthetic_page(
    seed: u64,
    profile: &SyntheticProfile,
) -> Result<PageTranscript, CodecError> {
    let mut reg = generate_synthetic_register(seed, profile, 1)?;
    Ok(reg.pages.remove(0))
}

/// Generates `n_pages` consecutive list pages from one stream of households,
/// so households routinely continue across page boundaries. The first page
/// opens with a household head.
pub fn generate_synthetic_register(
    seed: u64,
    profile: &SyntheticProfile,
    n_pages: usize,
) -> Result<SyntheticRegister, CodecError> {
    profile.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = profile.household_size_mean - 1.0;
    let poisson = if extra > 0.0 {
        Some(Poisson::new(extra).map_err(|e| CodecError::InvalidProfile(e.to_string()))?)
    } else {
        None
    };

    let row_counts: Vec<usize> = (0..n_pages)
        .map(|_| rng.random_range(profile.rows.0..=profile.rows.1))
        .collect();
    let total: usize = row_counts.iter().sum();

    let mut people = Vec::with_capacity(total);
    let mut household_sizes = Vec::new();
    while people.len() < total {
        let size = 1 + poisson.as_ref().map_or(0, |d| d.sample(&mut rng) as usize);
        let size = size.min(total - people.len());
        household_sizes.push(size);
        people.extend(household(&mut rng, size, profile));
    }

    let codec = LabelCodec::new(Default::default(), profile.token_budget);
    let mut pages = Vec::with_capacity(n_pages);
    let mut rest = people.into_iter();
    for (index, rows) in row_counts.into_iter().enumerate() {
        let mut page = PageTranscript::new(
            format!("page-{index:04}"),
            index,
            rest.by_ref().take(rows).collect(),
        );
        fit_to_budget(&mut page, &codec)?;
        pages.push(page);
    }
    Ok(SyntheticRegister {
        pages,
        household_sizes,
    })
}

/// Optional fields dropped, in this order, when a page overflows the budget.
const SHEDDABLE: [EntityTag; 8] = [
    EntityTag::Observation,
    EntityTag::Lob,
    EntityTag::CivilStatus,
    EntityTag::BirthDate,
    EntityTag::Employer,
    EntityTag::Nationality,
    EntityTag::Occupation,
    EntityTag::Link,
];

fn fit_to_budget(page: &mut PageTranscript, codec: &LabelCodec) -> Result<(), CodecError> {
    let budget = codec.token_budget.unwrap_or(DEFAULT_TOKEN_BUDGET);
    for tag in SHEDDABLE {
        if codec.token_count(page) <= budget {
            return Ok(());
        }
        for i in (0..page.records.len()).rev() {
            let record = &mut page.records[i];
            if record.fields.len() > 1 {
                record.fields.remove(&tag);
            }
            if codec.token_count(page) <= budget {
                return Ok(());
            }
        }
    }
    if codec.token_count(page) <= budget {
        Ok(())
    } else {
        Err(CodecError::InvalidProfile(format!(
            "token budget {budget} too small for {} rows",
            page.records.len()
        )))
    }
}

fn household(rng: &mut ChaCha8Rng, size: usize, profile: &SyntheticProfile) -> Vec<PersonRecord> {
    let family = *SURNAMES.choose(rng).unwrap();
    let head_male = rng.random_bool(0.8);
    let head_age: u32 = rng.random_range(25..80);
    let mut out = Vec::with_capacity(size);
    for k in 0..size {
        let (male, link, age) = match k {
            0 => (head_male, "chef", head_age),
            1 => {
                let link = *SECOND_LINKS.choose(rng).unwrap();
                let male = matches!(link, "père" | "frère" | "beau-père")
                    || (link == "épouse" && !head_male);
                (
                    male,
                    link,
                    head_age.saturating_sub(5) + rng.random_range(0..10),
                )
            }
            _ => {
                let link = *LATER_LINKS.choose(rng).unwrap();
                let male = matches!(link, "fils" | "petit-fils" | "neveu") || rng.random_bool(0.5);
                (male, link, rng.random_range(0..head_age.clamp(1, 40)))
            }
        };
        let present = |rng: &mut ChaCha8Rng, tag: EntityTag| {
            rng.random_bool(profile.field_presence[tag.index()])
        };
        let mut fields: Vec<(EntityTag, String)> = Vec::new();

        if k == 0 {
            fields.push((EntityTag::SurnameHead, family.to_string()));
        } else if present(rng, EntityTag::Surname) {
            let name = if link == "épouse" || link == "domestique" || rng.random_bool(0.1) {
                *SURNAMES.choose(rng).unwrap()
            } else {
                family
            };
            fields.push((EntityTag::Surname, name.to_string()));
        }
        let pools: [(EntityTag, &[&str]); 5] = [
            (
                EntityTag::Firstname,
                if male { MALE_NAMES } else { FEMALE_NAMES },
            ),
            (EntityTag::Nationality, NATIONALITIES),
            (EntityTag::CivilStatus, CIVIL),
            (EntityTag::Lob, PLACES),
            (EntityTag::Observation, OBSERVATIONS),
        ];
        for (tag, pool) in pools {
            if present(rng, tag) {
                fields.push((tag, pool.choose(rng).unwrap().to_string()));
            }
        }
        if present(rng, EntityTag::Occupation) {
            let occ = if k == 0 || age >= 14 {
                *OCCUPATIONS.choose(rng).unwrap()
            } else {
                "néant"
            };
            fields.push((EntityTag::Occupation, occ.to_string()));
        }
        if present(rng, EntityTag::Link) {
            fields.push((EntityTag::Link, link.to_string()));
        }
        if present(rng, EntityTag::Employer) {
            fields.push((
                EntityTag::Employer,
                if k == 0 { "patron" } else { "néant" }.to_string(),
            ));
        }
        if present(rng, EntityTag::Age) {
            fields.push((EntityTag::Age, age.to_string()));
        }
        if present(rng, EntityTag::BirthDate) {
            fields.push((EntityTag::BirthDate, (1901 - age).to_string()));
        }
        if fields.is_empty() {
            fields.push((EntityTag::Age, age.to_string()));
        }
        out.push(PersonRecord::from_fields(fields));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_record;

    #[test]
    fn same_seed_same_page() {
        let p = SyntheticProfile::default();
        let a = generate_synthetic_page(1, &p).unwrap();
        assert_eq!(a, generate_synthetic_page(1, &p).unwrap());
        assert_ne!(a, generate_synthetic_page(2, &p).unwrap());
        assert!((25..=36).contains(&a.records.len()));
        assert!(a.records[0].is_head);
        assert!(a.records.iter().all(|r| validate_record(r).is_empty()));
    }

    #[test]
    fn fixed_row_count() {
        let p = SyntheticProfile {
            rows: (30, 30),
            ..Default::default()
        };
        for seed in 0..20 {
            assert_eq!(generate_synthetic_page(seed, &p).unwrap().records.len(), 30);
        }
    }

    #[test]
    fn rejects_bad_profiles() {
        let mut p = SyntheticProfile {
            rows: (5, 4),
            ..Default::default()
        };
        assert!(generate_synthetic_page(0, &p).is_err());
        p.rows = (1, 4);
        p.household_size_mean = 0.5;
        assert!(generate_synthetic_page(0, &p).is_err());
        p.household_size_mean = f64::NAN;
        assert!(generate_synthetic_page(0, &p).is_err());
        p.household_size_mean = 1.0;
        p.field_presence[3] = 1.5;
        assert!(matches!(
            generate_synthetic_page(0, &p),
            Err(CodecError::InvalidProfile(_))
        ));
    }

    #[test]
    fn single_person_households() {
        let p = SyntheticProfile {
            household_size_mean: 1.0,
            ..Default::default()
        };
        let page = generate_synthetic_page(3, &p).unwrap();
        assert!(page.records.iter().all(|r| r.is_head));
    }

    #[test]
    fn pages_fit_a_tight_budget() {
        let p = SyntheticProfile {
            token_budget: 900,
            ..Default::default()
        };
        let codec = LabelCodec::new(Default::default(), 900);
        for seed in 0..10 {
            let page = generate_synthetic_page(seed, &p).unwrap();
            assert!(codec.encode(&page).is_ok());
        }
    }

    #[test]
    fn register_sizes_cover_all_rows() {
        let reg = generate_synthetic_register(9, &SyntheticProfile::default(), 5).unwrap();
        let rows: usize = reg.pages.iter().map(|p| p.records.len()).sum();
        assert_eq!(reg.household_sizes.iter().sum::<usize>(), rows);
        let heads = reg
            .pages
            .iter()
            .flat_map(|p| &p.records)
            .filter(|r| r.is_head)
            .count();
        assert_eq!(heads, reg.household_sizes.len());
    }
}
