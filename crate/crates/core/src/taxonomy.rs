//! Actor and action class vocabularies plus the set of valid actor-action pairs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serialized form of a [`Taxonomy`]; validated on conversion.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyDef {
    pub actor_names: Vec<String>,
    pub action_names: Vec<String>,
    pub valid_pairs: Vec<(usize, usize)>,
    pub background_actor_index: usize,
    pub background_action_index: usize,
}

/// Class taxonomy. Valid pairs are kept sorted so that the joint index of a
/// pair is its rank in lexicographic (actor, action) order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaxonomyDef", into = "TaxonomyDef")]
pub struct Taxonomy {
    actor_names: Vec<String>,
    action_names: Vec<String>,
    valid_pairs: Vec<(usize, usize)>,
    background_actor: usize,
    background_action: usize,
    // Dense (actor, action) -> joint index table.
    lookup: Vec<Option<usize>>,
}

impl TryFrom<TaxonomyDef> for Taxonomy {
    type Error = Error;

    fn try_from(def: TaxonomyDef) -> Result<Self> {
        Taxonomy::new(
            def.actor_names,
            def.action_names,
            def.valid_pairs,
            def.background_actor_index,
            def.background_action_index,
        )
    }
}

impl From<Taxonomy> for TaxonomyDef {
    fn from(t: Taxonomy) -> Self {
        TaxonomyDef {
            actor_names: t.actor_names,
            action_names: t.action_names,
            valid_pairs: t.valid_pairs,
            background_actor_index: t.background_actor,
            background_action_index: t.background_action,
        }
    }
}

impl Taxonomy {
    pub fn new(
        actor_names: Vec<String>,
        action_names: Vec<String>,
        valid_pairs: Vec<(usize, usize)>,
        background_actor: usize,
        background_action: usize,
    ) -> Result<Self> {
        let (ka, kc) = (actor_names.len(), action_names.len());
        if ka < 2 || kc < 2 {
            return Err(Error::InvalidTaxonomy(format!(
                "need at least 2 actor and 2 action classes, got {ka} and {kc}"
            )));
        }
        if background_actor >= ka || background_action >= kc {
            return Err(Error::InvalidTaxonomy(
                "background index out of range".into(),
            ));
        }
        let mut pairs = valid_pairs;
        pairs.sort_unstable();
        pairs.dedup();
        if pairs.is_empty() {
            return Err(Error::InvalidTaxonomy("no valid pairs".into()));
        }
        if let Some(&(a, c)) = pairs.iter().find(|&&(a, c)| a >= ka || c >= kc) {
            return Err(Error::InvalidTaxonomy(format!(
                "valid pair ({a}, {c}) out of range"
            )));
        }
        if pairs.binary_search(&(background_actor, background_action)).is_err() {
            return Err(Error::InvalidTaxonomy(
                "background pair must be a valid pair".into(),
            ));
        }
        let mut lookup = vec![None; ka * kc];
        for (i, &(a, c)) in pairs.iter().enumerate() {
            lookup[a * kc + c] = Some(i);
        }
        Ok(Self {
            actor_names,
            action_names,
            valid_pairs: pairs,
            background_actor,
            background_action,
            lookup,
        })
    }

    /// The A2D vocabulary: 7 actors and 9 actions (including "none"), each
    /// with an explicit background class, and the 43 valid actor-action
    /// combinations plus the background pair.
    pub fn a2d() -> Self {
        let actors = [
            "background", "adult", "baby", "ball", "bird", "car", "cat", "dog",
        ];
        let actions = [
            "background", "climbing", "crawling", "eating", "flying", "jumping", "rolling",
            "running", "walking", "none",
        ];
        let per_actor: [(&str, &[&str]); 7] = [
            (
                "adult",
                &[
                    "climbing", "crawling", "eating", "jumping", "rolling", "running", "walking",
                    "none",
                ],
            ),
            ("baby", &["climbing", "crawling", "rolling", "walking", "none"]),
            ("ball", &["flying", "jumping", "rolling", "none"]),
            (
                "bird",
                &["climbing", "eating", "flying", "jumping", "rolling", "walking", "none"],
            ),
            ("car", &["flying", "jumping", "rolling", "running", "none"]),
            (
                "cat",
                &["climbing", "eating", "jumping", "rolling", "running", "walking", "none"],
            ),
            (
                "dog",
                &["crawling", "eating", "jumping", "rolling", "running", "walking", "none"],
            ),
        ];
        let idx = |names: &[&str], n: &str| names.iter().position(|&x| x == n).unwrap();
        let mut pairs = vec![(0, 0)];
        for (actor, acts) in per_actor {
            for act in acts {
                pairs.push((idx(&actors, actor), idx(&actions, act)));
            }
        }
        Self::new(
            actors.iter().map(|s| s.to_string()).collect(),
            actions.iter().map(|s| s.to_string()).collect(),
            pairs,
            0,
            0,
        )
        .expect("a2d taxonomy is well formed")
    }

    /// Small fully-crossed taxonomy used by the default synthetic scenes:
    /// 3 actors and 4 actions, every real actor can perform every action.
    pub fn synthetic() -> Self {
        let actors = ["background", "adult", "bird", "dog"];
        let actions = ["background", "jumping", "rolling", "running", "walking"];
        let mut pairs = vec![(0, 0)];
        for a in 1..actors.len() {
            for c in 1..actions.len() {
                pairs.push((a, c));
            }
        }
        Self::new(
            actors.iter().map(|s| s.to_string()).collect(),
            actions.iter().map(|s| s.to_string()).collect(),
            pairs,
            0,
            0,
        )
        .expect("synthetic taxonomy is well formed")
    }

    pub fn num_actors(&self) -> usize {
        self.actor_names.len()
    }

    pub fn num_actions(&self) -> usize {
        self.action_names.len()
    }

    pub fn num_pairs(&self) -> usize {
        self.valid_pairs.len()
    }

    pub fn actor_names(&self) -> &[String] {
        &self.actor_names
    }

    pub fn action_names(&self) -> &[String] {
        &self.action_names
    }

    pub fn valid_pairs(&self) -> &[(usize, usize)] {
        &self.valid_pairs
    }

    pub fn background_actor(&self) -> usize {
        self.background_actor
    }

    pub fn background_action(&self) -> usize {
        self.background_action
    }

    pub fn is_valid_pair(&self, actor: usize, action: usize) -> bool {
        matches!(self.pair_index(actor, action), Ok(Some(_)))
    }

    /// Dense joint index of a valid pair, `None` for pairs outside the valid set.
    pub fn pair_index(&self, actor: usize, action: usize) -> Result<Option<usize>> {
        if actor >= self.num_actors() || action >= self.num_actions() {
            return Err(Error::OutOfRange(format!(
                "pair ({actor}, {action}) outside {}x{}",
                self.num_actors(),
                self.num_actions()
            )));
        }
        Ok(self.lookup[actor * self.num_actions() + action])
    }

    pub fn pair(&self, index: usize) -> Option<(usize, usize)> {
        self.valid_pairs.get(index).copied()
    }

    /// Display name of a joint class: "BG" for the background pair,
    /// otherwise "actor-action".
    pub fn pair_name(&self, index: usize) -> Option<String> {
        let (a, c) = self.pair(index)?;
        if (a, c) == (self.background_actor, self.background_action) {
            Some("BG".to_string())
        } else {
            Some(format!("{}-{}", self.actor_names[a], self.action_names[c]))
        }
    }
}
