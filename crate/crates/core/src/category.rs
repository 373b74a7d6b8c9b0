use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Topical news category. The first seven are the classifier's classes;
/// `Unclassified` covers headlines no class claims with enough confidence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Category {
    Business,
    Entertainment,
    Health,
    SciTech,
    Sport,
    Us,
    World,
    Unclassified,
}

impl Category {
    /// All categories in table order.
    pub const ALL: [Category; 8] = [
        Category::Business,
        Category::Entertainment,
        Category::Health,
        Category::SciTech,
        Category::Sport,
        Category::Us,
        Category::World,
        Category::Unclassified,
    ];

    /// The seven classes a categorizer scores.
    pub const TOPICAL: [Category; 7] = [
        Category::Business,
        Category::Entertainment,
        Category::Health,
        Category::SciTech,
        Category::Sport,
        Category::Us,
        Category::World,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Category> {
        Category::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Business => "business",
            Category::Entertainment => "entertainment",
            Category::Health => "health",
            Category::SciTech => "sci-tech",
            Category::Sport => "sport",
            Category::Us => "us",
            Category::World => "world",
            Category::Unclassified => "unclassified",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = Error;

    /// Accepts the canonical names plus a few common spellings
    /// (`sports`, `sci_tech`, `scitech`), case-insensitively.
    fn from_str(s: &str) -> Result<Self, Error> {
        let lower = s.trim().to_ascii_lowercase();
        Ok(match lower.as_str() {
            "business" => Category::Business,
            "entertainment" => Category::Entertainment,
            "health" => Category::Health,
            "sci-tech" | "sci_tech" | "scitech" => Category::SciTech,
            "sport" | "sports" => Category::Sport,
            "us" | "u.s." => Category::Us,
            "world" => Category::World,
            "unclassified" => Category::Unclassified,
            _ => return Err(Error::UnknownCategory(s.to_string())),
        })
    }
}

impl TryFrom<String> for Category {
    type Error = Error;

    fn try_from(s: String) -> Result<Self, Error> {
        s.parse()
    }
}

impl From<Category> for String {
    fn from(c: Category) -> String {
        c.as_str().to_string()
    }
}
