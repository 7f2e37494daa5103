//! Synthetic 200-node graph and templated definition corpus.
//!
//! Places sit in regions, regions in countries, and some places point at
//! their country directly. Those are the relations the corpus is written
//! from. Every place is also named after a person whose nationality is the
//! place's country, which gives each (place, country) pair a distractor
//! path over relations the corpus never mentions.

use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relmod_core::encode::{encode_path, EncodedInput};
use relmod_core::kg::{EntityId, KgBuilder, KnowledgeGraph, RelationId};
use relmod_core::pathfind::{PathStep, ReasoningPath, StepDir};

pub const N_COUNTRIES: usize = 12;
pub const N_REGIONS: usize = 26;
pub const N_PERSONS: usize = N_COUNTRIES;
pub const N_PLACES: usize = 150;
pub const NOUNS: [&str; 3] = ["town", "village", "commune"];

const SYLLABLES: [&str; 24] = [
    "al", "bar", "cor", "dun", "el", "fen", "gar", "hol", "ir", "jor", "kel", "lin", "mor", "nes", "or",
    "pel", "quin", "ros", "sel", "tor", "ul", "ven", "wal", "zen",
];

pub struct Synth {
    pub graph: KnowledgeGraph,
    pub places: Vec<EntityId>,
    pub region_of: HashMap<EntityId, EntityId>,
    pub country_of: HashMap<EntityId, EntityId>,
    /// Relations the corpus is written from.
    pub seen_relations: HashSet<RelationId>,
    pub corpus: Vec<(EncodedInput, String)>,
    /// Places that head at least one corpus example.
    pub seen_places: Vec<EntityId>,
}

fn names(rng: &mut ChaCha8Rng, n: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let k = rng.gen_range(2..=3);
        let w: String = (0..k).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        let mut c = w.chars();
        let w = c.next().unwrap().to_uppercase().chain(c).collect::<String>();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn step(relation: RelationId, node: EntityId) -> PathStep {
    PathStep { relation, node, dir: StepDir::Forward }
}

pub fn build(seed: u64, n_examples: usize) -> Synth {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut label = names(&mut rng, N_COUNTRIES + N_REGIONS + N_PERSONS + N_PLACES).into_iter();
    let mut b = KgBuilder::new();
    let country = b.add_relation("P17", "country").unwrap();
    let region = b.add_relation("P131", "region").unwrap();
    let named_after = b.add_relation("P138", "named after").unwrap();
    let nationality = b.add_relation("P27", "nationality").unwrap();
    let mut ent = |prefix: &str, i: usize| b.add_entity(&format!("{prefix}{i}"), &label.next().unwrap()).unwrap();
    let countries: Vec<_> = (0..N_COUNTRIES).map(|i| ent("C", i)).collect();
    let regions: Vec<_> = (0..N_REGIONS).map(|i| ent("R", i)).collect();
    let persons: Vec<_> = (0..N_PERSONS).map(|i| ent("H", i)).collect();
    let places: Vec<_> = (0..N_PLACES).map(|i| ent("P", i)).collect();

    let mut region_country = HashMap::new();
    for (i, &r) in regions.iter().enumerate() {
        // every country gets at least one region
        let c = if i < N_COUNTRIES { countries[i] } else { *countries.choose(&mut rng).unwrap() };
        region_country.insert(r, c);
        b.add_triple(r, country, c).unwrap();
    }
    for (&p, &c) in persons.iter().zip(&countries) {
        b.add_triple(p, nationality, c).unwrap();
    }
    let mut region_of = HashMap::new();
    let mut country_of = HashMap::new();
    let mut direct = HashSet::new();
    for &p in &places {
        let r = *regions.choose(&mut rng).unwrap();
        let c = region_country[&r];
        region_of.insert(p, r);
        country_of.insert(p, c);
        b.add_triple(p, region, r).unwrap();
        if rng.gen_bool(0.3) {
            b.add_triple(p, country, c).unwrap();
            direct.insert(p);
        }
        let person = persons[countries.iter().position(|&x| x == c).unwrap()];
        b.add_triple(p, named_after, person).unwrap();
    }
    let graph = b.build().0;
    let name = |e: EntityId| graph.entity_label(e).unwrap().to_string();

    let mut corpus = Vec::with_capacity(n_examples);
    let mut seen = HashSet::new();
    for _ in 0..n_examples {
        let p = *places.choose(&mut rng).unwrap();
        let (r, c) = (region_of[&p], country_of[&p]);
        let noun = NOUNS.choose(&mut rng).unwrap();
        let (path, target) = if rng.gen_bool(0.5) {
            (ReasoningPath::new(p, vec![step(region, r)]), format!("{} is a {noun} in {}.", name(p), name(r)))
        } else if direct.contains(&p) {
            (ReasoningPath::new(p, vec![step(country, c)]), format!("{} is a {noun} in {}.", name(p), name(c)))
        } else {
            (
                ReasoningPath::new(p, vec![step(region, r), step(country, c)]),
                format!("{} is a {noun} in {}, {}.", name(p), name(r), name(c)),
            )
        };
        seen.insert(p);
        corpus.push((encode_path(&path, &graph).unwrap(), target));
    }
    let seen_places = places.iter().copied().filter(|p| seen.contains(p)).collect();
    Synth {
        graph,
        places,
        region_of,
        country_of,
        seen_relations: HashSet::from([country, region]),
        corpus,
        seen_places,
    }
}

impl Synth {
    /// Every sentence the corpus templates can produce for `place`.
    pub fn templates(&self, place: EntityId) -> Vec<String> {
        let name = |e: EntityId| self.graph.entity_label(e).unwrap();
        let (p, r, c) = (name(place), name(self.region_of[&place]), name(self.country_of[&place]));
        NOUNS
            .iter()
            .flat_map(|n| {
                [format!("{p} is a {n} in {r}."), format!("{p} is a {n} in {c}."), format!("{p} is a {n} in {r}, {c}.")]
            })
            .collect()
    }

    pub fn in_distribution(&self, path: &ReasoningPath) -> bool {
        path.steps().iter().all(|s| self.seen_relations.contains(&s.relation))
    }
}
