//! `key = value...` text blocks used for geometry, slider parameters,
//! episode manifests and analysis reports.
//!
//! One entry per line, values separated by whitespace, `#` starts a comment.

use std::fmt::Write as _;

use nalgebra::Vector3;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KeyValueError {
    #[error("line {line}: expected `key = value`")]
    Syntax { line: usize },
    #[error("line {line}: duplicate key `{key}`")]
    Duplicate { line: usize, key: String },
    #[error("missing key `{0}`")]
    Missing(String),
    #[error("key `{key}`: {message}")]
    BadValue { key: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, Vec<String>)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self, KeyValueError> {
        let mut kv = Self::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let (key, value) = body.split_once('=').ok_or(KeyValueError::Syntax { line })?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(KeyValueError::Syntax { line });
            }
            if kv.get(key).is_some() {
                return Err(KeyValueError::Duplicate {
                    line,
                    key: key.to_string(),
                });
            }
            let values = value.split_whitespace().map(str::to_string).collect();
            kv.entries.push((key.to_string(), values));
        }
        Ok(kv)
    }

    pub fn get(&self, key: &str) -> Option<&[String]> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_slice())
    }

    pub fn insert<I, S>(&mut self, key: &str, values: I)
    where
        I: IntoIterator<Item = S>,
        S: ToString,
    {
        let values: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(entry) => entry.1 = values,
            None => self.entries.push((key.to_string(), values)),
        }
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _)| k.as_str())
    }

    fn required(&self, key: &str) -> Result<&[String], KeyValueError> {
        self.get(key)
            .ok_or_else(|| KeyValueError::Missing(key.to_string()))
    }

    pub fn str(&self, key: &str) -> Result<&str, KeyValueError> {
        match self.required(key)? {
            [one] => Ok(one),
            _ => Err(bad(key, "expected a single value")),
        }
    }

    pub fn f64s(&self, key: &str) -> Result<Vec<f64>, KeyValueError> {
        self.required(key)?
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| bad(key, &format!("`{s}` is not a finite number")))
            })
            .collect()
    }

    pub fn f64(&self, key: &str) -> Result<f64, KeyValueError> {
        match self.f64s(key)?.as_slice() {
            [v] => Ok(*v),
            _ => Err(bad(key, "expected a single number")),
        }
    }

    pub fn u64(&self, key: &str) -> Result<u64, KeyValueError> {
        let s = self.str(key)?;
        s.parse()
            .map_err(|_| bad(key, &format!("`{s}` is not an unsigned integer")))
    }

    pub fn vec3(&self, key: &str) -> Result<Vector3<f64>, KeyValueError> {
        match self.f64s(key)?.as_slice() {
            [x, y, z] => Ok(Vector3::new(*x, *y, *z)),
            _ => Err(bad(key, "expected three numbers")),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {}", v.join(" "));
        }
        out
    }
}

fn bad(key: &str, message: &str) -> KeyValueError {
    KeyValueError::BadValue {
        key: key.to_string(),
        message: message.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_vectors() {
        let kv = KeyValues::parse("# geometry\nr_bar_d = 0.01 0.02 0.03  # tip\nL_d=0.04\n").unwrap();
        assert_eq!(kv.vec3("r_bar_d").unwrap(), Vector3::new(0.01, 0.02, 0.03));
        assert_eq!(kv.f64("L_d").unwrap(), 0.04);
    }

    #[test]
    fn errors() {
        assert_eq!(
            KeyValues::parse("a = 1\nnonsense\n").unwrap_err(),
            KeyValueError::Syntax { line: 2 }
        );
        assert!(matches!(
            KeyValues::parse("a = 1\na = 2").unwrap_err(),
            KeyValueError::Duplicate { line: 2, .. }
        ));
        let kv = KeyValues::parse("a = x").unwrap();
        assert!(matches!(kv.f64("a"), Err(KeyValueError::BadValue { .. })));
        assert!(matches!(kv.f64("b"), Err(KeyValueError::Missing(_))));
    }

    #[test]
    fn text_round_trip() {
        let mut kv = KeyValues::new();
        kv.insert("center", [0.5, -1.25, 3.0]);
        kv.insert("k", [2]);
        assert_eq!(KeyValues::parse(&kv.to_text()).unwrap(), kv);
    }
}
