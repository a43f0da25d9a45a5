//! The sixteen-category bias frame and the label-vector algebra shared by
//! every stage of the pipeline.
//!
//! The first nine categories are the OATH framing categories; the remaining
//! seven capture discourse acts (questions, claims, observations, opinions)
//! and racism. Categories are independent bits: one document may carry any
//! subset of them.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Number of categories in the frame.
pub const NUM_CATEGORIES: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaxonomyError {
    #[error("unknown category name {0:?}")]
    UnknownCategory(String),
    #[error("unknown category names: {}", .0.join(", "))]
    UnknownCategories(Vec<String>),
}

/// One category of the bias frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Category {
    MoneyAidAllocation,
    GovernmentCritique,
    SocietalCritique,
    SolutionsInterventions,
    PersonalInteraction,
    MediaPortrayal,
    NotInMyBackyard,
    HarmfulGeneralization,
    DeservingUndeserving,
    AskGenuineQuestion,
    AskRhetoricalQuestion,
    ProvideFactOrClaim,
    ProvideObservation,
    ExpressTheirOpinion,
    ExpressOthersOpinions,
    Racist,
}

impl Category {
    pub const ALL: [Category; NUM_CATEGORIES] = [
        Category::MoneyAidAllocation,
        Category::GovernmentCritique,
        Category::SocietalCritique,
        Category::SolutionsInterventions,
        Category::PersonalInteraction,
        Category::MediaPortrayal,
        Category::NotInMyBackyard,
        Category::HarmfulGeneralization,
        Category::DeservingUndeserving,
        Category::AskGenuineQuestion,
        Category::AskRhetoricalQuestion,
        Category::ProvideFactOrClaim,
        Category::ProvideObservation,
        Category::ExpressTheirOpinion,
        Category::ExpressOthersOpinions,
        Category::Racist,
    ];

    /// Position of the category in [`Category::ALL`] and in every label vector.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Category> {
        Self::ALL.get(index).copied()
    }

    /// Canonical snake_case identifier; the on-disk and wire vocabulary.
    pub fn id(self) -> &'static str {
        match self {
            Category::MoneyAidAllocation => "money_aid_allocation",
            Category::GovernmentCritique => "government_critique",
            Category::SocietalCritique => "societal_critique",
            Category::SolutionsInterventions => "solutions_interventions",
            Category::PersonalInteraction => "personal_interaction",
            Category::MediaPortrayal => "media_portrayal",
            Category::NotInMyBackyard => "not_in_my_backyard",
            Category::HarmfulGeneralization => "harmful_generalization",
            Category::DeservingUndeserving => "deserving_undeserving",
            Category::AskGenuineQuestion => "ask_genuine_question",
            Category::AskRhetoricalQuestion => "ask_rhetorical_question",
            Category::ProvideFactOrClaim => "provide_fact_or_claim",
            Category::ProvideObservation => "provide_observation",
            Category::ExpressTheirOpinion => "express_their_opinion",
            Category::ExpressOthersOpinions => "express_others_opinions",
            Category::Racist => "racist",
        }
    }

    /// Human-facing name as used in annotation guidelines and tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::MoneyAidAllocation => "money aid allocation",
            Category::GovernmentCritique => "government critique",
            Category::SocietalCritique => "societal critique",
            Category::SolutionsInterventions => "solutions/interventions",
            Category::PersonalInteraction => "personal interaction",
            Category::MediaPortrayal => "media portrayal",
            Category::NotInMyBackyard => "not in my backyard",
            Category::HarmfulGeneralization => "harmful generalization",
            Category::DeservingUndeserving => "deserving/undeserving",
            Category::AskGenuineQuestion => "ask a genuine question",
            Category::AskRhetoricalQuestion => "ask a rhetorical question",
            Category::ProvideFactOrClaim => "provide a fact or claim",
            Category::ProvideObservation => "provide an observation",
            Category::ExpressTheirOpinion => "express their opinion",
            Category::ExpressOthersOpinions => "express others' opinions",
            Category::Racist => "racist",
        }
    }

    /// Short title-case label for table rows and figure axes.
    pub fn short_label(self) -> &'static str {
        match self {
            Category::MoneyAidAllocation => "Money Aid Allocation",
            Category::GovernmentCritique => "Government Critique",
            Category::SocietalCritique => "Societal Critique",
            Category::SolutionsInterventions => "Solutions/Interventions",
            Category::PersonalInteraction => "Personal Interaction",
            Category::MediaPortrayal => "Media Portrayal",
            Category::NotInMyBackyard => "Not in My Backyard",
            Category::HarmfulGeneralization => "Harmful Generalization",
            Category::DeservingUndeserving => "Deserving/Undeserving",
            Category::AskGenuineQuestion => "Ask Genuine Question",
            Category::AskRhetoricalQuestion => "Ask Rhetorical Question",
            Category::ProvideFactOrClaim => "Provide Fact/Claim",
            Category::ProvideObservation => "Provide Observation",
            Category::ExpressTheirOpinion => "Express Opinion",
            Category::ExpressOthersOpinions => "Express Others Opinions",
            Category::Racist => "Racist",
        }
    }

    /// Annotation guideline text for the category. Shipped with the toolkit
    /// and embedded in prompts; written for this project.
    pub fn guideline(self) -> &'static str {
        match self {
            Category::MoneyAidAllocation => {
                "discusses how money, funding, or material aid for homelessness is or should be spent"
            }
            Category::GovernmentCritique => {
                "criticizes government bodies, officials, or policies over their handling of homelessness"
            }
            Category::SocietalCritique => {
                "criticizes society, the economy, or social norms as causes of or obstacles to ending homelessness"
            }
            Category::SolutionsInterventions => {
                "proposes, describes, or evaluates concrete solutions or interventions such as shelters or housing programs"
            }
            Category::PersonalInteraction => {
                "recounts a direct personal encounter with someone experiencing homelessness"
            }
            Category::MediaPortrayal => {
                "comments on how news or media outlets portray homelessness or people experiencing it"
            }
            Category::NotInMyBackyard => {
                "opposes services, shelters, or people experiencing homelessness being located nearby"
            }
            Category::HarmfulGeneralization => {
                "attributes negative traits such as crime, addiction, or laziness to people experiencing homelessness as a group"
            }
            Category::DeservingUndeserving => {
                "judges whether people experiencing homelessness deserve help, sympathy, or their situation"
            }
            Category::AskGenuineQuestion => "asks a question that seeks information or an answer",
            Category::AskRhetoricalQuestion => {
                "asks a question meant to make a point rather than to obtain an answer"
            }
            Category::ProvideFactOrClaim => "states a fact or a checkable claim",
            Category::ProvideObservation => {
                "reports something the author personally observed, without necessarily interacting"
            }
            Category::ExpressTheirOpinion => "expresses the author's own opinion",
            Category::ExpressOthersOpinions => {
                "reports or paraphrases the opinions of other people or groups"
            }
            Category::Racist => "expresses racism or racial prejudice",
        }
    }

    /// Resolves a display string, identifier, or table label to a category.
    ///
    /// Matching ignores case, whitespace, and punctuation.
    pub fn parse(name: &str) -> Result<Category, TaxonomyError> {
        let key = normalize_name(name);
        if key.is_empty() {
            return Err(TaxonomyError::UnknownCategory(name.to_string()));
        }
        Category::ALL
            .iter()
            .copied()
            .find(|c| {
                normalize_name(c.id()) == key
                    || normalize_name(c.display_name()) == key
                    || normalize_name(c.short_label()) == key
                    || c.extra_aliases().iter().any(|a| *a == key)
            })
            .ok_or_else(|| TaxonomyError::UnknownCategory(name.to_string()))
    }

    fn extra_aliases(self) -> &'static [&'static str] {
        match self {
            Category::NotInMyBackyard => &["nimby"],
            Category::ProvideFactOrClaim => &["providefactorclaim", "factclaim", "factorclaim"],
            Category::ExpressTheirOpinion => &["expresstheiropinions", "expressopinions"],
            Category::ExpressOthersOpinions => &["expressothersopinion", "expressotheropinions"],
            Category::AskGenuineQuestion => &["genuinequestion"],
            Category::AskRhetoricalQuestion => &["rhetoricalquestion"],
            Category::SolutionsInterventions => &["solutionsandinterventions", "solutionintervention"],
            _ => &[],
        }
    }
}

/// Lowercase alphanumerics only.
pub(crate) fn normalize_name(name: &str) -> String {
    name.chars()
        .filter(|c| c.is_alphanumeric())
        .flat_map(char::to_lowercase)
        .collect()
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Category {
    type Err = TaxonomyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Category::parse(s)
    }
}

impl Serialize for Category {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.id())
    }
}

impl<'de> Deserialize<'de> for Category {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Category::parse(&s).map_err(de::Error::custom)
    }
}

/// Sixteen independent category bits. Absence is `false`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct LabelVector(u16);

impl LabelVector {
    pub const EMPTY: LabelVector = LabelVector(0);
    pub const FULL: LabelVector = LabelVector(u16::MAX);

    pub fn from_bits(bits: u16) -> Self {
        LabelVector(bits)
    }

    pub fn bits(self) -> u16 {
        self.0
    }

    pub fn get(self, category: Category) -> bool {
        self.0 & (1 << category.index()) != 0
    }

    pub fn set(&mut self, category: Category, value: bool) {
        if value {
            self.0 |= 1 << category.index();
        } else {
            self.0 &= !(1 << category.index());
        }
    }

    pub fn with(mut self, category: Category) -> Self {
        self.set(category, true);
        self
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Categories set in this vector, in canonical order.
    pub fn categories(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| self.get(*c))
    }

    pub fn to_bools(self) -> [bool; NUM_CATEGORIES] {
        let mut out = [false; NUM_CATEGORIES];
        for c in Category::ALL {
            out[c.index()] = self.get(c);
        }
        out
    }

    pub fn from_bools(bools: &[bool; NUM_CATEGORIES]) -> Self {
        let mut v = LabelVector::EMPTY;
        for c in Category::ALL {
            v.set(c, bools[c.index()]);
        }
        v
    }

    /// Builds a vector from category names; every unparseable name is
    /// reported in the error.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self, TaxonomyError> {
        let mut v = LabelVector::EMPTY;
        let mut bad = Vec::new();
        for name in names {
            match Category::parse(name.as_ref()) {
                Ok(c) => v.set(c, true),
                Err(_) => bad.push(name.as_ref().to_string()),
            }
        }
        if bad.is_empty() {
            Ok(v)
        } else {
            Err(TaxonomyError::UnknownCategories(bad))
        }
    }

    /// Canonical identifiers of the set categories.
    pub fn names(self) -> Vec<&'static str> {
        self.categories().map(Category::id).collect()
    }

    /// The documented wire format: one object with a boolean per identifier,
    /// keys in canonical order.
    pub fn to_json_object(self) -> String {
        serde_json::to_string(&self).expect("label vector serialization is infallible")
    }
}

impl fmt::Display for LabelVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}]", self.names().join(", "))
    }
}

impl Serialize for LabelVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(NUM_CATEGORIES))?;
        for c in Category::ALL {
            map.serialize_entry(c.id(), &self.get(c))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for LabelVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LabelVisitor;

        impl<'de> Visitor<'de> for LabelVisitor {
            type Value = LabelVector;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object with one boolean per category identifier")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<LabelVector, A::Error> {
                let mut seen: BTreeMap<Category, bool> = BTreeMap::new();
                while let Some(key) = access.next_key::<String>()? {
                    let cat = Category::parse(&key).map_err(de::Error::custom)?;
                    let value: bool = access.next_value()?;
                    if seen.insert(cat, value).is_some() {
                        return Err(de::Error::custom(format!("duplicate category {key:?}")));
                    }
                }
                if seen.len() != NUM_CATEGORIES {
                    let missing: Vec<_> = Category::ALL
                        .iter()
                        .filter(|c| !seen.contains_key(c))
                        .map(|c| c.id())
                        .collect();
                    return Err(de::Error::custom(format!(
                        "incomplete label vector, missing: {}",
                        missing.join(", ")
                    )));
                }
                let mut v = LabelVector::EMPTY;
                for (c, b) in seen {
                    v.set(c, b);
                }
                Ok(v)
            }
        }

        deserializer.deserialize_map(LabelVisitor)
    }
}
