//! Cohort baskets and association rules.

mod apriori;
mod basket;
mod cohort;
mod select;

pub use apriori::{mine_rules, read_rules_csv, rule_order, write_rules_csv, MiningParams, Rule, RULES_CSV_HEADER};
pub use basket::{build_baskets, classifier_for, AdvertFilter, Basket, BasketBuild, BasketDb, Dimension, Item};
pub use cohort::{app_count_class, time_of_day_class, AppClassifier, AppCountClass, Class4From, TimeOfDay};
pub use select::{select_rule_set, Selection};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MiningError {
    #[error("basket database is empty")]
    EmptyDatabase,
    #[error("advert {0:?} is not in the registry")]
    UnregisteredAdvert(String),
    #[error("{0} distinct items exceed the 128-item limit")]
    TooManyItems(usize),
    #[error("{0}")]
    InvalidParameter(String),
    #[error("no rules to select from")]
    NoRules,
    #[error("no rule set with mean lift above 1 (best {mean_lift})")]
    NoQualifyingSet { mean_lift: f64 },
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
}
