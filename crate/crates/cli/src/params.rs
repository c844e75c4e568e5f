//! Typed access to the `parameters` map of a config.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::CliError;

pub(crate) struct Params<'a> {
    experiment: &'a str,
    map: &'a BTreeMap<String, Value>,
}

fn bad(experiment: &str, name: &str, want: &str) -> CliError {
    CliError::Config(format!("{experiment}: parameter `{name}` must be {want}"))
}

impl<'a> Params<'a> {
    /// Rejects unknown names and reports every missing required one.
    pub(crate) fn new(
        experiment: &'a str,
        map: &'a BTreeMap<String, Value>,
        required: &[&str],
        optional: &[&str],
    ) -> Result<Self, CliError> {
        let unknown: Vec<&str> = map
            .keys()
            .map(String::as_str)
            .filter(|k| !required.contains(k) && !optional.contains(k) && !crate::experiments::SHARED.contains(k))
            .collect();
        if !unknown.is_empty() {
            return Err(CliError::Config(format!("{experiment}: unknown parameters: {}", unknown.join(", "))));
        }
        let missing: Vec<&str> = required.iter().copied().filter(|k| !map.contains_key(*k)).collect();
        if !missing.is_empty() {
            return Err(CliError::Config(format!("{experiment}: missing parameters: {}", missing.join(", "))));
        }
        Ok(Self { experiment, map })
    }

    fn get(&self, name: &str) -> Option<&Value> {
        self.map.get(name)
    }

    pub(crate) fn f64(&self, name: &str) -> Result<f64, CliError> {
        let v = self.get(name).ok_or_else(|| bad(self.experiment, name, "present"))?;
        v.as_f64().ok_or_else(|| bad(self.experiment, name, "a number"))
    }

    pub(crate) fn f64_or(&self, name: &str, default: f64) -> Result<f64, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v.as_f64().ok_or_else(|| bad(self.experiment, name, "a number")),
        }
    }

    pub(crate) fn opt_f64(&self, name: &str) -> Result<Option<f64>, CliError> {
        self.get(name).map(|v| v.as_f64().ok_or_else(|| bad(self.experiment, name, "a number"))).transpose()
    }

    pub(crate) fn usize(&self, name: &str) -> Result<usize, CliError> {
        let v = self.get(name).ok_or_else(|| bad(self.experiment, name, "present"))?;
        v.as_u64().map(|u| u as usize).ok_or_else(|| bad(self.experiment, name, "a nonnegative integer"))
    }

    pub(crate) fn usize_or(&self, name: &str, default: usize) -> Result<usize, CliError> {
        if self.get(name).is_some() {
            self.usize(name)
        } else {
            Ok(default)
        }
    }

    pub(crate) fn opt_usize(&self, name: &str) -> Result<Option<usize>, CliError> {
        self.get(name).map(|_| self.usize(name)).transpose()
    }

    pub(crate) fn bool_or(&self, name: &str, default: bool) -> Result<bool, CliError> {
        match self.get(name) {
            None => Ok(default),
            Some(v) => v.as_bool().ok_or_else(|| bad(self.experiment, name, "true or false")),
        }
    }

    pub(crate) fn str_or(&self, name: &str, default: &'a str) -> Result<&'a str, CliError> {
        match self.map.get(name) {
            None => Ok(default),
            Some(v) => v.as_str().ok_or_else(|| bad(self.experiment, name, "a string")),
        }
    }

    /// A number or a list of numbers.
    pub(crate) fn f64_list(&self, name: &str) -> Result<Vec<f64>, CliError> {
        let v = self.get(name).ok_or_else(|| bad(self.experiment, name, "present"))?;
        let want = "a number or a list of numbers";
        match v {
            Value::Array(items) => {
                items.iter().map(|x| x.as_f64().ok_or_else(|| bad(self.experiment, name, want))).collect()
            }
            other => Ok(vec![other.as_f64().ok_or_else(|| bad(self.experiment, name, want))?]),
        }
    }

    /// An integer, a list of integers, or `{"from": a, "to": b}` inclusive.
    pub(crate) fn usize_list(&self, name: &str) -> Result<Vec<usize>, CliError> {
        let v = self.get(name).ok_or_else(|| bad(self.experiment, name, "present"))?;
        let want = "an integer, a list of integers or {\"from\": a, \"to\": b}";
        let int = |x: &Value| x.as_u64().map(|u| u as usize).ok_or_else(|| bad(self.experiment, name, want));
        match v {
            Value::Array(items) => items.iter().map(int).collect(),
            Value::Object(range) => {
                let from = int(range.get("from").ok_or_else(|| bad(self.experiment, name, want))?)?;
                let to = int(range.get("to").ok_or_else(|| bad(self.experiment, name, want))?)?;
                if range.len() != 2 || from > to {
                    return Err(bad(self.experiment, name, want));
                }
                Ok((from..=to).collect())
            }
            other => Ok(vec![int(other)?]),
        }
    }

    pub(crate) fn opt_f64_list(&self, name: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.get(name).map(|_| self.f64_list(name)).transpose()
    }

    pub(crate) fn opt_usize_list(&self, name: &str) -> Result<Option<Vec<usize>>, CliError> {
        self.get(name).map(|_| self.usize_list(name)).transpose()
    }

    pub(crate) fn u64_list(&self, name: &str) -> Result<Vec<u64>, CliError> {
        Ok(self.usize_list(name)?.into_iter().map(|v| v as u64).collect())
    }

    pub(crate) fn u64_or(&self, name: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.usize_or(name, default as usize)? as u64)
    }
}
