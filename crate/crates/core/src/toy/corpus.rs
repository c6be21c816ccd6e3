//! Seeded generator for the bundled training text.
//!
//! Paragraphs stick to one topic, so nouns and verbs are partly predictable
//! from context, while names, places, and numbers stay hard to guess.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// The corpus shipped with the crate: `generate_corpus(BUNDLED_SEED, BUNDLED_PARAGRAPHS)`.
pub const BUNDLED_CORPUS: &str = include_str!("../../data/corpus.txt");
pub const BUNDLED_SEED: u64 = 0;
pub const BUNDLED_PARAGRAPHS: usize = 900;

struct Topic {
    nouns: &'static [(&'static str, &'static str)],
    verbs: &'static [(&'static str, &'static str)],
    adjectives: &'static [&'static str],
}

const TOPICS: &[Topic] = &[
    Topic {
        nouns: &[
            ("river", "rivers"), ("bridge", "bridges"), ("road", "roads"), ("harbor", "harbors"),
            ("boat", "boats"), ("mill", "mills"), ("canal", "canals"), ("valley", "valleys"),
            ("field", "fields"), ("farm", "farms"), ("barn", "barns"), ("well", "wells"),
        ],
        verbs: &[
            ("build", "built"), ("cross", "crossed"), ("repair", "repaired"), ("flood", "flooded"),
            ("dig", "dug"), ("plant", "planted"), ("drain", "drained"), ("sail", "sailed"),
        ],
        adjectives: &["wide", "narrow", "muddy", "stone", "wooden", "deep", "shallow", "green"],
    },
    Topic {
        nouns: &[
            ("king", "kings"), ("army", "armies"), ("castle", "castles"), ("war", "wars"),
            ("treaty", "treaties"), ("soldier", "soldiers"), ("battle", "battles"), ("crown", "crowns"),
            ("council", "councils"), ("border", "borders"), ("siege", "sieges"), ("fleet", "fleets"),
        ],
        verbs: &[
            ("defend", "defended"), ("attack", "attacked"), ("sign", "signed"), ("rule", "ruled"),
            ("win", "won"), ("lose", "lost"), ("capture", "captured"), ("march", "marched"),
        ],
        adjectives: &["royal", "ancient", "brave", "bitter", "loyal", "northern", "southern", "powerful"],
    },
    Topic {
        nouns: &[
            ("song", "songs"), ("poem", "poems"), ("painting", "paintings"), ("theater", "theaters"),
            ("actor", "actors"), ("novel", "novels"), ("stage", "stages"), ("choir", "choirs"),
            ("piano", "pianos"), ("museum", "museums"), ("artist", "artists"), ("story", "stories"),
        ],
        verbs: &[
            ("write", "wrote"), ("paint", "painted"), ("sing", "sang"), ("perform", "performed"),
            ("publish", "published"), ("praise", "praised"), ("compose", "composed"), ("read", "read"),
        ],
        adjectives: &["famous", "beautiful", "strange", "popular", "quiet", "modern", "early", "lost"],
    },
    Topic {
        nouns: &[
            ("star", "stars"), ("planet", "planets"), ("cell", "cells"), ("metal", "metals"),
            ("experiment", "experiments"), ("theory", "theories"), ("engine", "engines"), ("atom", "atoms"),
            ("telescope", "telescopes"), ("sample", "samples"), ("crystal", "crystals"), ("wave", "waves"),
        ],
        verbs: &[
            ("measure", "measured"), ("observe", "observed"), ("test", "tested"), ("heat", "heated"),
            ("discover", "discovered"), ("explain", "explained"), ("predict", "predicted"), ("cool", "cooled"),
        ],
        adjectives: &["bright", "heavy", "small", "cold", "hot", "rare", "stable", "precise"],
    },
    Topic {
        nouns: &[
            ("market", "markets"), ("coin", "coins"), ("bank", "banks"), ("price", "prices"),
            ("trade", "trades"), ("merchant", "merchants"), ("tax", "taxes"), ("debt", "debts"),
            ("ship", "ships"), ("factory", "factories"), ("wage", "wages"), ("loan", "loans"),
        ],
        verbs: &[
            ("sell", "sold"), ("buy", "bought"), ("pay", "paid"), ("borrow", "borrowed"),
            ("raise", "raised"), ("lower", "lowered"), ("export", "exported"), ("import", "imported"),
        ],
        adjectives: &["rich", "poor", "cheap", "costly", "foreign", "local", "new", "busy"],
    },
    Topic {
        nouns: &[
            ("forest", "forests"), ("wolf", "wolves"), ("bird", "birds"), ("tree", "trees"),
            ("flower", "flowers"), ("mountain", "mountains"), ("lake", "lakes"), ("storm", "storms"),
            ("island", "islands"), ("fox", "foxes"), ("seed", "seeds"), ("leaf", "leaves"),
        ],
        verbs: &[
            ("grow", "grew"), ("hunt", "hunted"), ("climb", "climbed"), ("burn", "burned"),
            ("protect", "protected"), ("study", "studied"), ("count", "counted"), ("follow", "followed"),
        ],
        adjectives: &["wild", "tall", "dark", "snowy", "old", "young", "silent", "dense"],
    },
];

const NAMES: &[&str] = &[
    "Ada", "Bruno", "Clara", "Dmitri", "Elena", "Felix", "Greta", "Hugo", "Irene", "Jonas",
    "Karl", "Lena", "Marta", "Nils", "Olga", "Pavel", "Rosa", "Stefan", "Tomas", "Vera",
    "Walter", "Yusuf", "Zora", "Anton", "Beatrix", "Conrad", "Dora", "Emil", "Frieda", "Gustav",
];

const PLACES: &[&str] = &[
    "Paris", "Vienna", "Lisbon", "Prague", "Oslo", "Dublin", "Krakow", "Seville", "Bergen", "Turin",
    "Ghent", "Riga", "Porto", "Lyon", "Bremen", "Naples", "Geneva", "Utrecht", "Bologna", "Tallinn",
];

const ACRONYMS: &[&str] = &["UN", "NATO", "BBC", "IBM", "NASA", "USA", "EU", "NLP"];

const ADVERBS: &[&str] = &[
    "slowly", "quickly", "often", "rarely", "later", "soon", "again", "finally", "never", "always",
    "carefully", "openly",
];

const PRONOUNS: &[&str] = &["he", "she", "they", "we", "it"];

fn numbers(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..4) {
        0 => format!("{}", 1700 + 10 * rng.random_range(0..25)),
        1 => format!("{}%", rng.random_range(1..20) * 5),
        2 => format!("{}.5", rng.random_range(1..10)),
        _ => format!("{}", rng.random_range(2..13)),
    }
}

fn pick<T: Copy>(rng: &mut ChaCha8Rng, items: &[T]) -> T {
    *items.choose(rng).expect("non-empty list")
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn sentence(rng: &mut ChaCha8Rng, topic: &Topic) -> String {
    let (n1, n1s) = pick(rng, topic.nouns);
    let (n2, n2s) = pick(rng, topic.nouns);
    let (v, vp) = pick(rng, topic.verbs);
    let (_, vp2) = pick(rng, topic.verbs);
    let adj = pick(rng, topic.adjectives);
    let adj2 = pick(rng, topic.adjectives);
    let name = pick(rng, NAMES);
    let name2 = pick(rng, NAMES);
    let place = pick(rng, PLACES);
    let pron = pick(rng, PRONOUNS);
    let adv = pick(rng, ADVERBS);
    let num = numbers(rng);
    let s = match rng.random_range(0..14) {
        0 => format!("The {adj} {n1} {vp} the {n2} ."),
        1 => format!("{name} {vp} the {n1} of {place} in {num} ."),
        2 => format!("In {num} , {name} and {name2} {vp} a {adj} {n1} near {place} ."),
        3 => format!("About {num} of the {n1s} in {place} were {adj} ."),
        4 => format!("{name} said that the {n1} was {adj} , and {pron} {vp} it {adv} ."),
        5 => format!("It is {adj} to {v} the {n1} of {place} ; few {n2s} remain ."),
        6 => format!("The {n1s} of {place} ( {adj} and {adj2} ) were {vp} by {name} ."),
        7 => format!("{pron} {vp} the {n1} {adv} , but the {n2s} {vp2} too ."),
        8 => format!("\" The {n1} is {adj} , \" {name} wrote in {num} ."),
        9 => format!("Reports from the {} said {num} {n1s} had been {vp} .", pick(rng, ACRONYMS)),
        10 => format!("Why did {name} {v} the {adj} {n1} ? No one knows ."),
        11 => format!("There were {num} {n1s} and a {adj} {n2} at {place} ."),
        12 => format!("After the {n1} , {name} could not {v} any {n2s} : {pron} {vp2} them {adv} ."),
        _ => format!("Most {adj} {n1s} have a {n2} , which {pron} {vp} {adv} ."),
    };
    capitalize(&s)
}

/// Paragraphs of 3–8 sentences each, separated by blank lines.
pub fn generate_corpus(seed: u64, paragraphs: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::new();
    for p in 0..paragraphs {
        if p > 0 {
            out.push('\n');
        }
        let topic = &TOPICS[rng.random_range(0..TOPICS.len())];
        let n = rng.random_range(3..9);
        let sentences: Vec<String> = (0..n).map(|_| sentence(&mut rng, topic)).collect();
        out.push_str(&sentences.join(" "));
        out.push('\n');
    }
    out
}
