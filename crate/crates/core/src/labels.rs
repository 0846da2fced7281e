use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a label within a [`LabelSet`].
pub type LabelId = usize;

/// An ordered set of distinct label names.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct LabelSet {
    names: Vec<String>,
    index: HashMap<String, LabelId>,
}

impl LabelSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::structural("label set must not be empty"));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::structural(format!("duplicate label `{name}`")));
            }
        }
        Ok(LabelSet { names, index })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index(&self, name: &str) -> Option<LabelId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: LabelId) -> Option<&str> {
        self.names.get(id).map(String::as_str)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Resolves every name, failing on the first unknown one.
    pub fn encode<S: AsRef<str>>(&self, names: &[S]) -> Result<Vec<LabelId>> {
        names
            .iter()
            .map(|n| {
                self.index(n.as_ref())
                    .ok_or_else(|| Error::structural(format!("unknown label `{}`", n.as_ref())))
            })
            .collect()
    }
}

impl TryFrom<Vec<String>> for LabelSet {
    type Error = Error;

    fn try_from(names: Vec<String>) -> Result<Self> {
        LabelSet::new(names)
    }
}

impl From<LabelSet> for Vec<String> {
    fn from(set: LabelSet) -> Self {
        set.names
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_and_name_are_inverse() {
        let set = LabelSet::new(["O", "B-PER", "I-PER"]).unwrap();
        for i in 0..set.len() {
            assert_eq!(set.index(set.name(i).unwrap()), Some(i));
        }
        assert_eq!(set.index("B-LOC"), None);
        assert_eq!(set.name(3), None);
    }

    #[test]
    fn rejects_empty_and_duplicates() {
        assert!(LabelSet::new(Vec::<String>::new()).is_err());
        assert!(LabelSet::new(["A", "B", "A"]).is_err());
    }

    #[test]
    fn serde_as_plain_list() {
        let set = LabelSet::new(["x", "y"]).unwrap();
        let json = serde_json::to_string(&set).unwrap();
        assert_eq!(json, r#"["x","y"]"#);
        let back: LabelSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, set);
        assert!(serde_json::from_str::<LabelSet>(r#"["x","x"]"#).is_err());
    }
}
