use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Deserializer, Serialize};

/// One photo and its social metadata.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhotoRecord {
    pub photo_id: String,
    pub uploader_id: String,
    #[serde(default)]
    pub title: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub comments: Vec<String>,
    #[serde(default, deserialize_with = "unique_set")]
    pub tags: BTreeSet<String>,
    #[serde(default, deserialize_with = "unique_set")]
    pub groups: BTreeSet<String>,
    /// Collections created by the uploader.
    #[serde(default, deserialize_with = "unique_set")]
    pub sets: BTreeSet<String>,
    /// Galleries curated by other users.
    #[serde(default, deserialize_with = "unique_set")]
    pub galleries: BTreeSet<String>,
    #[serde(default)]
    pub location_id: Option<String>,
    #[serde(default)]
    pub timestamp: Option<i64>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UserRecord {
    pub user_id: String,
    #[serde(default, deserialize_with = "unique_set")]
    pub contact_ids: BTreeSet<String>,
}

fn unique_set<'de, D>(de: D) -> Result<BTreeSet<String>, D::Error>
where
    D: Deserializer<'de>,
{
    let items = Vec::<String>::deserialize(de)?;
    let n = items.len();
    let set: BTreeSet<String> = items.into_iter().collect();
    if set.len() != n {
        return Err(serde::de::Error::custom("duplicate id in set"));
    }
    Ok(set)
}

/// Users keyed by id.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct UserTable {
    users: BTreeMap<String, UserRecord>,
}

impl UserTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous record if the id was already present.
    pub fn insert(&mut self, user: UserRecord) -> Option<UserRecord> {
        self.users.insert(user.user_id.clone(), user)
    }

    pub fn get(&self, id: &str) -> Option<&UserRecord> {
        self.users.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.users.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserRecord> {
        self.users.values()
    }

    /// Whether either user lists the other as a contact.
    pub fn are_contacts(&self, a: &str, b: &str) -> bool {
        let lists = |x: &str, y: &str| self.get(x).is_some_and(|u| u.contact_ids.contains(y));
        lists(a, b) || lists(b, a)
    }
}

impl FromIterator<UserRecord> for UserTable {
    fn from_iter<I: IntoIterator<Item = UserRecord>>(iter: I) -> Self {
        let mut t = Self::new();
        for u in iter {
            t.insert(u);
        }
        t
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_tags_rejected() {
        let line = r#"{"photo_id":"p","uploader_id":"u","tags":["a","a"]}"#;
        assert!(serde_json::from_str::<PhotoRecord>(line).is_err());
        let line = r#"{"photo_id":"p","uploader_id":"u","tags":["b","a"]}"#;
        let p: PhotoRecord = serde_json::from_str(line).unwrap();
        assert_eq!(p.tags.len(), 2);
        assert!(p.location_id.is_none());
    }

    #[test]
    fn contacts_are_checked_both_ways() {
        let users: UserTable = [
            UserRecord {
                user_id: "a".into(),
                contact_ids: ["b".to_string()].into(),
            },
            UserRecord {
                user_id: "b".into(),
                contact_ids: BTreeSet::new(),
            },
        ]
        .into_iter()
        .collect();
        assert!(users.are_contacts("a", "b"));
        assert!(users.are_contacts("b", "a"));
        assert!(!users.are_contacts("a", "c"));
    }
}
