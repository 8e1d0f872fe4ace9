//! Ordered name → number mappings.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// An insertion-ordered mapping from names to numbers. Serializes as a JSON
/// object whose keys keep their order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NamedValues {
    entries: Vec<(String, f64)>,
}

/// Concrete values for a run's variable design parameters.
pub type DesignPoint = NamedValues;

impl NamedValues {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds from parallel name and value slices.
    pub fn from_pairs<S: AsRef<str>>(names: &[S], values: &[f64]) -> Self {
        Self {
            entries: names
                .iter()
                .zip(values)
                .map(|(n, v)| (n.as_ref().to_string(), *v))
                .collect(),
        }
    }

    /// Inserts or overwrites. New names go to the end.
    pub fn set(&mut self, name: &str, value: f64) {
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(entry) => entry.1 = value,
            None => self.entries.push((name.to_string(), value)),
        }
    }

    pub fn with(mut self, name: &str, value: f64) -> Self {
        self.set(name, value);
        self
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> + '_ {
        self.entries.iter().map(|(n, v)| (n.as_str(), *v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    /// Values for `names` in that order; `None` if any is missing.
    pub fn select<S: AsRef<str>>(&self, names: &[S]) -> Option<Vec<f64>> {
        names.iter().map(|n| self.get(n.as_ref())).collect()
    }
}

impl Serialize for NamedValues {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.entries.len()))?;
        for (name, value) in &self.entries {
            map.serialize_entry(name, value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for NamedValues {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct OrderedVisitor;

        impl<'de> Visitor<'de> for OrderedVisitor {
            type Value = NamedValues;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of numbers")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<NamedValues, A::Error> {
                let mut out = NamedValues::new();
                while let Some((name, value)) = access.next_entry::<String, f64>()? {
                    if out.contains(&name) {
                        return Err(serde::de::Error::custom(alloc::format!("duplicate key {name}")));
                    }
                    out.entries.push((name, value));
                }
                Ok(out)
            }
        }

        deserializer.deserialize_map(OrderedVisitor)
    }
}

impl FromIterator<(String, f64)> for NamedValues {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        let mut out = NamedValues::new();
        for (n, v) in iter {
            out.set(&n, v);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_keeps_key_order() {
        let v = NamedValues::new().with("p", 250.0).with("Fr", 0.1).with("D", 1.2);
        let text = serde_json::to_string(&v).unwrap();
        assert_eq!(text, r#"{"p":250.0,"Fr":0.1,"D":1.2}"#);
        let back: NamedValues = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        assert!(serde_json::from_str::<NamedValues>(r#"{"p":1,"p":2}"#).is_err());
    }
}
