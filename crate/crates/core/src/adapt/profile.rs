//! Per-dataset default hyper-parameters.

use serde::Serialize;

use super::FinetuneConfig;
use crate::nn::OptimizerKind;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Profile {
    pub name: &'static str,
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub weight_decay: f64,
    pub walk_steps: usize,
    pub restart_rate: f64,
    pub threshold: f64,
}

const fn p(
    name: &'static str,
    epochs: usize,
    learning_rate: f64,
    optimizer: OptimizerKind,
    weight_decay: f64,
    restart_rate: f64,
    threshold: f64,
) -> Profile {
    Profile {
        name,
        epochs,
        learning_rate,
        optimizer,
        weight_decay,
        walk_steps: 256,
        restart_rate,
        threshold,
    }
}

use OptimizerKind::{Adam, AdamW, Sgd};

pub const PROFILES: [Profile; 8] = [
    p("Cora_ML", 100, 0.5, AdamW, 5e-4, 0.8, 0.17),
    p("Amazon-Photo", 100, 0.5, AdamW, 5e-4, 0.8, 0.2),
    p("DBLP", 100, 0.1, Adam, 5e-4, 0.8, 0.3),
    p("Physics", 100, 0.01, Adam, 1e-2, 0.8, 0.15),
    p("USA", 100, 0.3, Sgd, 1e-3, 0.5, 0.15),
    p("Europe", 100, 0.2, Sgd, 5e-4, 0.5, 0.15),
    p("Brazil", 400, 0.1, Sgd, 1e-3, 0.3, 0.3),
    p("H-index", 100, 0.1, Sgd, 5e-4, 0.5, 0.17),
];

fn normalize(name: &str) -> String {
    let s: String = name.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
    match s.as_str() {
        "photo" | "amazonphoto" => "amazonphoto".into(),
        "coauthorphysics" | "physics" => "physics".into(),
        _ => s.strip_suffix("airport").unwrap_or(&s).to_string(),
    }
}

/// Profile of a dataset name, ignoring case, punctuation and an
/// `-Airport` suffix.
pub fn profile(name: &str) -> Option<Profile> {
    let key = normalize(name);
    PROFILES.iter().copied().find(|p| normalize(p.name) == key)
}

impl Profile {
    pub fn apply(&self, config: &mut FinetuneConfig) {
        config.epochs = self.epochs;
        config.learning_rate = self.learning_rate;
        config.optimizer = self.optimizer;
        config.weight_decay = self.weight_decay;
        config.walk_steps = self.walk_steps;
        config.restart_rate = self.restart_rate;
        config.threshold = self.threshold;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lookup_ignores_spelling() {
        assert_eq!(profile("cora_ml").unwrap().name, "Cora_ML");
        assert_eq!(profile("Europe-Airport").unwrap().name, "Europe");
        assert_eq!(profile("usa_airport").unwrap().name, "USA");
        assert_eq!(profile("hindex").unwrap().name, "H-index");
        assert_eq!(profile("Amazon Photo").unwrap().name, "Amazon-Photo");
        assert!(profile("citeseer").is_none());
    }

    #[test]
    fn cora_defaults() {
        let mut c = FinetuneConfig::default();
        profile("Cora_ML").unwrap().apply(&mut c);
        assert_eq!((c.epochs, c.learning_rate, c.optimizer), (100, 0.5, AdamW));
        assert_eq!((c.weight_decay, c.walk_steps, c.restart_rate, c.threshold), (5e-4, 256, 0.8, 0.17));
        assert_eq!(profile("Brazil").unwrap().epochs, 400);
    }
}
