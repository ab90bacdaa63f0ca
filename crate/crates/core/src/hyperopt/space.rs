//! Hyperparameter search spaces and their `[0, 1]` encodings.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    Continuous { lo: f64, hi: f64 },
    LogContinuous { lo: f64, hi: f64 },
    Integer { lo: i64, hi: i64 },
    Categorical { choices: Vec<String> },
}

impl ParamKind {
    fn encoded_width(&self) -> usize {
        match self {
            ParamKind::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: ParamKind::Continuous { lo, hi } }
    }

    pub fn log(name: &str, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), kind: ParamKind::LogContinuous { lo, hi } }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self { name: name.into(), kind: ParamKind::Integer { lo, hi } }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        Self {
            name: name.into(),
            kind: ParamKind::Categorical {
                choices: choices.iter().map(|c| c.to_string()).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Int(i64),
    Real(f64),
    Cat(String),
}

/// One point in the search space, keyed by parameter name.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HyperParams(pub BTreeMap<String, ParamValue>);

impl HyperParams {
    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.0.get(name)
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        match self.0.get(name)? {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Cat(_) => None,
        }
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        match self.0.get(name)? {
            ParamValue::Int(v) => Some(*v),
            ParamValue::Real(v) => Some(v.round() as i64),
            ParamValue::Cat(_) => None,
        }
    }

    pub fn cat(&self, name: &str) -> Option<&str> {
        match self.0.get(name)? {
            ParamValue::Cat(v) => Some(v),
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, v: ParamValue) {
        self.0.insert(name.to_string(), v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub params: Vec<ParamSpec>,
}

impl SearchSpace {
    pub fn new(params: Vec<ParamSpec>) -> Result<Self> {
        let s = Self { params };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.params.is_empty() {
            return Err(Error::Domain("search space is empty".into()));
        }
        for p in &self.params {
            let ok = match &p.kind {
                ParamKind::Continuous { lo, hi } => lo.is_finite() && hi.is_finite() && lo <= hi,
                ParamKind::LogContinuous { lo, hi } => {
                    lo.is_finite() && hi.is_finite() && *lo > 0.0 && lo <= hi
                }
                ParamKind::Integer { lo, hi } => lo <= hi,
                ParamKind::Categorical { choices } => !choices.is_empty(),
            };
            if !ok {
                return Err(Error::Domain(format!("invalid bounds for `{}`", p.name)));
            }
        }
        Ok(())
    }

    /// Width of the encoded vector (categoricals are one-hot).
    pub fn encoded_dim(&self) -> usize {
        self.params.iter().map(|p| p.kind.encoded_width()).sum()
    }

    pub fn encode(&self, hp: &HyperParams) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        for p in &self.params {
            let missing = || Error::Domain(format!("missing hyperparameter `{}`", p.name));
            match &p.kind {
                ParamKind::Continuous { lo, hi } => {
                    let v = hp.real(&p.name).ok_or_else(missing)?;
                    out.push(if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 });
                }
                ParamKind::LogContinuous { lo, hi } => {
                    let v = hp.real(&p.name).ok_or_else(missing)?;
                    out.push(if hi > lo {
                        ((v.ln() - lo.ln()) / (hi.ln() - lo.ln())).clamp(0.0, 1.0)
                    } else {
                        0.0
                    });
                }
                ParamKind::Integer { lo, hi } => {
                    let v = hp.int(&p.name).ok_or_else(missing)?;
                    out.push(if hi > lo {
                        ((v - lo) as f64 / (hi - lo) as f64).clamp(0.0, 1.0)
                    } else {
                        0.0
                    });
                }
                ParamKind::Categorical { choices } => {
                    let v = hp.cat(&p.name).ok_or_else(missing)?;
                    let idx = choices.iter().position(|c| c == v).ok_or_else(|| {
                        Error::Domain(format!("`{v}` is not a choice of `{}`", p.name))
                    })?;
                    out.extend((0..choices.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode). Coordinates are clamped to
    /// `[0, 1]`; endpoints decode to the exact bounds; integers round and
    /// categoricals take the largest one-hot coordinate.
    pub fn decode(&self, x: &[f64]) -> Result<HyperParams> {
        if x.len() != self.encoded_dim() {
            return Err(Error::Shape {
                op: "decode hyperparameters",
                left: (x.len(), 1),
                right: (self.encoded_dim(), 1),
            });
        }
        let mut hp = HyperParams::default();
        let mut at = 0;
        for p in &self.params {
            match &p.kind {
                ParamKind::Continuous { lo, hi } => {
                    let t = x[at].clamp(0.0, 1.0);
                    let v = endpoint(t, *lo, *hi).unwrap_or(lo + t * (hi - lo));
                    hp.set(&p.name, ParamValue::Real(v));
                }
                ParamKind::LogContinuous { lo, hi } => {
                    let t = x[at].clamp(0.0, 1.0);
                    let v = endpoint(t, *lo, *hi)
                        .unwrap_or_else(|| (lo.ln() + t * (hi.ln() - lo.ln())).exp().clamp(*lo, *hi));
                    hp.set(&p.name, ParamValue::Real(v));
                }
                ParamKind::Integer { lo, hi } => {
                    let t = x[at].clamp(0.0, 1.0);
                    let v = (*lo as f64 + t * (hi - lo) as f64).round() as i64;
                    hp.set(&p.name, ParamValue::Int(v.clamp(*lo, *hi)));
                }
                ParamKind::Categorical { choices } => {
                    let slice = &x[at..at + choices.len()];
                    let mut best = 0;
                    for (i, v) in slice.iter().enumerate() {
                        if *v > slice[best] {
                            best = i;
                        }
                    }
                    hp.set(&p.name, ParamValue::Cat(choices[best].clone()));
                }
            }
            at += p.kind.encoded_width();
        }
        Ok(hp)
    }

    /// Uniform draw from the space, returned in canonical encoded form.
    pub fn sample_encoded(&self, rng: &mut impl Rng) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.encoded_dim());
        for p in &self.params {
            match &p.kind {
                ParamKind::Continuous { .. } | ParamKind::LogContinuous { .. } => {
                    out.push(rng.random::<f64>())
                }
                ParamKind::Integer { lo, hi } => {
                    let v = rng.random_range(*lo..=*hi);
                    out.push(if hi > lo { (v - lo) as f64 / (hi - lo) as f64 } else { 0.0 });
                }
                ParamKind::Categorical { choices } => {
                    let idx = rng.random_range(0..choices.len());
                    out.extend((0..choices.len()).map(|i| if i == idx { 1.0 } else { 0.0 }));
                }
            }
        }
        out
    }
}

fn endpoint(t: f64, lo: f64, hi: f64) -> Option<f64> {
    if t <= 0.0 {
        Some(lo)
    } else if t >= 1.0 {
        Some(hi)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_for;
    use proptest::prelude::*;

    fn space() -> SearchSpace {
        SearchSpace::new(vec![
            ParamSpec::log("learning_rate", 1e-5, 1e-2),
            ParamSpec::continuous("f_k", 0.1, 0.9),
            ParamSpec::integer("k", 2, 40),
            ParamSpec::categorical("activation", &["tanh", "relu", "sigmoid"]),
        ])
        .unwrap()
    }

    #[test]
    fn log_bounds_round_trip_exactly() {
        let s = space();
        let lo = s.decode(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        let hi = s.decode(&[1.0, 1.0, 1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(lo.real("learning_rate"), Some(1e-5));
        assert_eq!(hi.real("learning_rate"), Some(1e-2));
        assert_eq!(lo.int("k"), Some(2));
        assert_eq!(hi.int("k"), Some(40));
        assert_eq!(hi.cat("activation"), Some("sigmoid"));
        assert_eq!(s.encode(&lo).unwrap(), vec![0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn invalid_spaces_are_rejected() {
        assert!(SearchSpace::new(vec![]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::log("x", 0.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::continuous("x", 2.0, 1.0)]).is_err());
        assert!(SearchSpace::new(vec![ParamSpec::categorical("x", &[])]).is_err());
    }

    proptest! {
        #[test]
        fn samples_decode_and_reencode(seed in 0u64..500) {
            let s = space();
            let mut rng = rng_for(seed, 0);
            let x = s.sample_encoded(&mut rng);
            prop_assert!(x.iter().all(|v| (0.0..=1.0).contains(v)));
            let hp = s.decode(&x).unwrap();
            let again = s.encode(&hp).unwrap();
            for (a, b) in x.iter().zip(&again) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            let k = hp.int("k").unwrap();
            prop_assert!((2..=40).contains(&k));
        }
    }
}
