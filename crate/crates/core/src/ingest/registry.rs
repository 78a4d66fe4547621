use std::collections::BTreeMap;

use super::stage::Genre;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RegistryError {
    #[error("registry line {line}: expected `advert<TAB>genre`")]
    Malformed { line: usize },
    #[error("registry line {line}: unknown genre {genre:?}")]
    UnknownGenre { line: usize, genre: String },
    #[error("registry line {line}: advert {advert:?} already registered as {previous}")]
    ConflictingGenre { line: usize, advert: String, previous: Genre },
}

/// Advert id to genre lookup, loaded from a two-column TSV file.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AdvertRegistry {
    genres: BTreeMap<String, Genre>,
}

impl AdvertRegistry {
    pub fn parse(text: &str) -> Result<Self, RegistryError> {
        let mut genres: BTreeMap<String, Genre> = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut cols = raw.split('\t');
            let (Some(advert), Some(genre), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(RegistryError::Malformed { line });
            };
            let advert = advert.trim();
            if advert.is_empty() {
                return Err(RegistryError::Malformed { line });
            }
            let genre: Genre =
                genre.parse().map_err(|_| RegistryError::UnknownGenre { line, genre: genre.trim().to_string() })?;
            match genres.get(advert) {
                Some(prev) if *prev != genre => {
                    return Err(RegistryError::ConflictingGenre { line, advert: advert.to_string(), previous: *prev })
                }
                _ => {
                    genres.insert(advert.to_string(), genre);
                }
            }
        }
        Ok(AdvertRegistry { genres })
    }

    pub fn insert(&mut self, advert: impl Into<String>, genre: Genre) {
        self.genres.insert(advert.into(), genre);
    }

    pub fn genre(&self, advert: &str) -> Option<Genre> {
        self.genres.get(advert).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Genre)> {
        self.genres.iter().map(|(a, g)| (a.as_str(), *g))
    }

    pub fn adverts_in(&self, genre: Genre) -> Vec<&str> {
        self.iter().filter(|(_, g)| *g == genre).map(|(a, _)| a).collect()
    }

    pub fn len(&self) -> usize {
        self.genres.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genres.is_empty()
    }

    pub fn to_tsv(&self) -> String {
        self.genres.iter().map(|(a, g)| format!("{a}\t{g}\n")).collect()
    }
}

impl FromIterator<(String, Genre)> for AdvertRegistry {
    fn from_iter<T: IntoIterator<Item = (String, Genre)>>(iter: T) -> Self {
        AdvertRegistry { genres: iter.into_iter().collect() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_tsv() {
        let reg = AdvertRegistry::parse("# adverts\nAdvert1\tfinance\nAdvert4\tEntertainment\n\n").unwrap();
        assert_eq!(reg.len(), 2);
        assert_eq!(reg.genre("Advert4"), Some(Genre::Entertainment));
        assert_eq!(reg.genre("Advert9"), None);
        assert_eq!(AdvertRegistry::parse(&reg.to_tsv()).unwrap(), reg);
    }

    #[test]
    fn rejects_bad_rows() {
        assert_eq!(AdvertRegistry::parse("Advert1 finance").unwrap_err(), RegistryError::Malformed { line: 1 });
        assert!(matches!(
            AdvertRegistry::parse("Advert1\tsports").unwrap_err(),
            RegistryError::UnknownGenre { line: 1, .. }
        ));
        assert!(matches!(
            AdvertRegistry::parse("A\tfinance\nA\tlifestyle").unwrap_err(),
            RegistryError::ConflictingGenre { line: 2, .. }
        ));
        assert!(AdvertRegistry::parse("A\tfinance\nA\tfinance").is_ok());
    }
}
