//! The SDOH perturbation taxonomy: 21 categories over four axes.

use serde::{Deserialize, Serialize};

/// Axis a category perturbs along.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Base,
    Sex,
    Race,
    Sdoh,
}

/// Perturbation category. `Base` is the neutral (unperturbed) column; the
/// remaining 20 are the attributes injected into counterfactual variants.
///
/// The declaration order here is the fixed report column order: Base first,
/// then sex, race, and SDOH categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Base,
    Male,
    Female,
    White,
    Black,
    Hispanic,
    Asian,
    NativeAmerican,
    PacificIslander,
    MixedRace,
    MiddleEastern,
    Indigenous,
    AfricanAmerican,
    SouthAsian,
    EastAsian,
    Lgbt,
    LowIncome,
    Unemployed,
    Disabled,
    Illiterate,
    Homeless,
}

pub const ALL_CATEGORIES: [Category; 21] = [
    Category::Base,
    Category::Male,
    Category::Female,
    Category::White,
    Category::Black,
    Category::Hispanic,
    Category::Asian,
    Category::NativeAmerican,
    Category::PacificIslander,
    Category::MixedRace,
    Category::MiddleEastern,
    Category::Indigenous,
    Category::AfricanAmerican,
    Category::SouthAsian,
    Category::EastAsian,
    Category::Lgbt,
    Category::LowIncome,
    Category::Unemployed,
    Category::Disabled,
    Category::Illiterate,
    Category::Homeless,
];

impl Category {
    pub fn axis(self) -> Axis {
        use Category::*;
        match self {
            Base => Axis::Base,
            Male | Female => Axis::Sex,
            White | Black | Hispanic | Asian | NativeAmerican | PacificIslander | MixedRace
            | MiddleEastern | Indigenous | AfricanAmerican | SouthAsian | EastAsian => Axis::Race,
            Lgbt | LowIncome | Unemployed | Disabled | Illiterate | Homeless => Axis::Sdoh,
        }
    }

    /// Stable identifier used in config files, JSON keys, and CSV headers.
    pub fn key(self) -> &'static str {
        use Category::*;
        match self {
            Base => "base",
            Male => "male",
            Female => "female",
            White => "white",
            Black => "black",
            Hispanic => "hispanic",
            Asian => "asian",
            NativeAmerican => "native_american",
            PacificIslander => "pacific_islander",
            MixedRace => "mixed_race",
            MiddleEastern => "middle_eastern",
            Indigenous => "indigenous",
            AfricanAmerican => "african_american",
            SouthAsian => "south_asian",
            EastAsian => "east_asian",
            Lgbt => "lgbt",
            LowIncome => "low_income",
            Unemployed => "unemployed",
            Disabled => "disabled",
            Illiterate => "illiterate",
            Homeless => "homeless",
        }
    }

    /// Human-readable label used in report tables and figures.
    pub fn label(self) -> &'static str {
        use Category::*;
        match self {
            Base => "Base",
            Male => "Male",
            Female => "Female",
            White => "White",
            Black => "Black",
            Hispanic => "Hispanic",
            Asian => "Asian",
            NativeAmerican => "Native American",
            PacificIslander => "Pacific Islander",
            MixedRace => "Mixed Race",
            MiddleEastern => "Middle Eastern",
            Indigenous => "Indigenous",
            AfricanAmerican => "African American",
            SouthAsian => "South Asian",
            EastAsian => "East Asian",
            Lgbt => "LGBT+",
            LowIncome => "Low Income",
            Unemployed => "Unemployed",
            Disabled => "Disabled",
            Illiterate => "Illiterate",
            Homeless => "Homeless",
        }
    }

    pub fn from_key(key: &str) -> Option<Category> {
        ALL_CATEGORIES.iter().copied().find(|c| c.key() == key)
    }

    /// All non-Base categories in report order.
    pub fn non_base() -> impl Iterator<Item = Category> {
        ALL_CATEGORIES.iter().copied().filter(|c| *c != Category::Base)
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key())
    }
}
