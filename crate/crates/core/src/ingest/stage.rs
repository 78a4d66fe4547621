use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Position of an event in the advert interaction funnel.
///
/// The derived ordering follows the funnel, so `Impression < Tap < ... <
/// VideoComplete`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Stage {
    Impression = 0,
    Tap = 1,
    LoadVideo = 2,
    PlayVideo = 3,
    Video25 = 4,
    Video50 = 5,
    Video75 = 6,
    VideoComplete = 7,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Impression,
        Stage::Tap,
        Stage::LoadVideo,
        Stage::PlayVideo,
        Stage::Video25,
        Stage::Video50,
        Stage::Video75,
        Stage::VideoComplete,
    ];

    /// Every stage after the impression, in funnel order.
    pub const INTERACTIONS: [Stage; 7] = [
        Stage::Tap,
        Stage::LoadVideo,
        Stage::PlayVideo,
        Stage::Video25,
        Stage::Video50,
        Stage::Video75,
        Stage::VideoComplete,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<Stage> {
        Stage::ALL.get(ordinal).copied()
    }

    /// Canonical name used in logs and reports.
    pub fn name(self) -> &'static str {
        match self {
            Stage::Impression => "impression",
            Stage::Tap => "tap",
            Stage::LoadVideo => "loadvideo",
            Stage::PlayVideo => "playvideo",
            Stage::Video25 => "video25",
            Stage::Video50 => "video50",
            Stage::Video75 => "video75",
            Stage::VideoComplete => "videocomplete",
        }
    }

    /// Item name used inside rule-mining baskets.
    pub fn item_name(self) -> &'static str {
        match self {
            Stage::VideoComplete => "video100",
            other => other.name(),
        }
    }

    pub fn next(self) -> Option<Stage> {
        Stage::from_ordinal(self.ordinal() + 1)
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown interaction stage {0:?}")]
pub struct UnknownStage(pub String);

impl FromStr for Stage {
    type Err = UnknownStage;

    /// Case-insensitive. Spaces, underscores, hyphens and `%` are ignored so
    /// that log spellings such as `Load Video` or `25% Video` are accepted.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String =
            s.chars().filter(|c| !matches!(c, ' ' | '_' | '-' | '%')).flat_map(char::to_lowercase).collect();
        let stage = match key.as_str() {
            "impression" => Stage::Impression,
            "tap" => Stage::Tap,
            "loadvideo" => Stage::LoadVideo,
            "playvideo" => Stage::PlayVideo,
            "video25" | "25video" => Stage::Video25,
            "video50" | "50video" => Stage::Video50,
            "video75" | "75video" => Stage::Video75,
            "videocomplete" | "completevideo" | "video100" | "100video" => Stage::VideoComplete,
            _ => return Err(UnknownStage(s.to_string())),
        };
        Ok(stage)
    }
}

impl From<Stage> for String {
    fn from(stage: Stage) -> String {
        stage.name().to_string()
    }
}

impl TryFrom<String> for Stage {
    type Error = UnknownStage;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

/// Advert genre. Every registered advert belongs to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Genre {
    Finance,
    Lifestyle,
    Entertainment,
}

impl Genre {
    pub const ALL: [Genre; 3] = [Genre::Finance, Genre::Lifestyle, Genre::Entertainment];

    pub fn name(self) -> &'static str {
        match self {
            Genre::Finance => "finance",
            Genre::Lifestyle => "lifestyle",
            Genre::Entertainment => "entertainment",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown genre {0:?} (expected finance, lifestyle or entertainment)")]
pub struct UnknownGenre(pub String);

impl FromStr for Genre {
    type Err = UnknownGenre;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "finance" => Ok(Genre::Finance),
            "lifestyle" | "lifestyles" => Ok(Genre::Lifestyle),
            "entertainment" => Ok(Genre::Entertainment),
            _ => Err(UnknownGenre(s.to_string())),
        }
    }
}
