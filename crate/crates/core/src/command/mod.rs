//! Closed command grammar: vocabulary, tokenizer, parser and the synthetic
//! episode generator.

mod generate;

pub use generate::*;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt;
use thiserror::Error;

use crate::worldsim::{ColorTag, SideTag};

/// Maximum number of tokens fed to the grounder.
pub const MAX_TOKENS: usize = 20;
pub const MAX_MANEUVERS: usize = 3;
pub const UNK_ID: u32 = 0;
pub const PAD_ID: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManeuverKind {
    Turn,
    LaneChange,
    GoStraight,
    Park,
    Stop,
}

impl ManeuverKind {
    pub fn is_halt(self) -> bool {
        matches!(self, ManeuverKind::Park | ManeuverKind::Stop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Near,
    Behind,
    InFrontOf,
    Beside,
    Between,
    At,
}

impl Relation {
    pub fn phrase(self) -> &'static str {
        match self {
            Relation::Near => "near",
            Relation::Behind => "behind",
            Relation::InFrontOf => "in front of",
            Relation::Beside => "beside",
            Relation::Between => "between",
            Relation::At => "at",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferentClass {
    Vehicle,
    BusStop,
    TrafficLight,
    Building,
    Intersection,
    Pedestrian,
}

impl ReferentClass {
    /// Canonical surface form.
    pub fn phrase(self) -> &'static str {
        match self {
            ReferentClass::Vehicle => "car",
            ReferentClass::BusStop => "bus stop",
            ReferentClass::TrafficLight => "traffic light",
            ReferentClass::Building => "building",
            ReferentClass::Intersection => "intersection",
            ReferentClass::Pedestrian => "pedestrian",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Referent {
    pub class: ReferentClass,
    pub color: Option<ColorTag>,
    pub side: Option<SideTag>,
}

impl Referent {
    pub fn new(class: ReferentClass) -> Self {
        Self {
            class,
            color: None,
            side: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Maneuver {
    pub kind: ManeuverKind,
    pub direction: Option<SideTag>,
    pub relation: Option<Relation>,
    /// One referent, or two for `between`.
    pub referents: Vec<Referent>,
}

impl Maneuver {
    pub fn turn(direction: SideTag) -> Self {
        Self {
            kind: ManeuverKind::Turn,
            direction: Some(direction),
            relation: None,
            referents: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManeuverPlan {
    pub maneuvers: Vec<Maneuver>,
    pub raw_text: String,
    pub token_count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at token {index}: {message}")]
pub struct ParseError {
    pub index: usize,
    pub message: String,
}

const WORDS: &[&str] = &[
    "a", "the", "and", "then", "to", "of", "at", "from", "on", "in", "until", "with", "next",
    "take", "turn", "change", "go", "straight", "park", "stop", "pull", "drive", "keep",
    "left", "right", "near", "behind", "front", "beside", "between", "after", "before",
    "opposite", "car", "cars", "vehicle", "vehicles", "truck", "bus", "traffic", "light",
    "lights", "building", "intersection", "junction", "pedestrian", "lane", "road", "corner",
    "two", "black", "white", "red", "blue", "green", "yellow", "gray", "first", "second", "over",
];

/// Word list with stable ids: UNK = 0, PAD = 1, word `i` of the list = `i + 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    index: HashMap<String, u32>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(WORDS.iter().map(|w| w.to_string()).collect())
    }
}

impl Vocabulary {
    pub fn from_words(words: Vec<String>) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32 + 2))
            .collect();
        Self { words, index }
    }

    /// Parses the one-word-per-line file format.
    pub fn from_file_text(text: &str) -> Self {
        Self::from_words(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn to_file_text(&self) -> String {
        let mut s = self.words.join("\n");
        s.push('\n');
        s
    }

    /// Number of ids including UNK and PAD.
    pub fn size(&self) -> usize {
        self.words.len() + 2
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn word(&self, id: u32) -> Option<&str> {
        match id {
            UNK_ID => Some("<unk>"),
            PAD_ID => Some("<pad>"),
            _ => self.words.get(id as usize - 2).map(String::as_str),
        }
    }

    /// Hex SHA-256 of the file form, recorded next to trained weights.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_file_text().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split_whitespace()
        .map(String::from)
        .collect()
}

/// Token ids padded or truncated to [`MAX_TOKENS`], plus a validity mask.
pub fn encode_tokens(text: &str, vocab: &Vocabulary) -> (Vec<u32>, Vec<bool>) {
    let mut ids: Vec<u32> = tokenize(text)
        .iter()
        .take(MAX_TOKENS)
        .map(|w| vocab.id(w))
        .collect();
    let mut mask = vec![true; ids.len()];
    ids.resize(MAX_TOKENS, PAD_ID);
    mask.resize(MAX_TOKENS, false);
    (ids, mask)
}

struct Parser<'a> {
    toks: &'a [String],
    pos: usize,
    vocab: Vocabulary,
}

impl<'a> Parser<'a> {
    fn err<T>(&self, message: impl Into<String>) -> Result<T, ParseError> {
        Err(ParseError {
            index: self.pos,
            message: message.into(),
        })
    }

    fn peek(&self) -> Option<&str> {
        self.toks.get(self.pos).map(String::as_str)
    }

    fn peek_at(&self, k: usize) -> Option<&str> {
        self.toks.get(self.pos + k).map(String::as_str)
    }

    fn accept(&mut self, w: &str) -> bool {
        if self.peek() == Some(w) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, w: &str) -> Result<(), ParseError> {
        if self.accept(w) {
            Ok(())
        } else {
            self.err(format!("expected '{w}'"))
        }
    }

    fn side(&mut self) -> Result<SideTag, ParseError> {
        if self.accept("left") {
            Ok(SideTag::Left)
        } else if self.accept("right") {
            Ok(SideTag::Right)
        } else {
            self.err("expected 'left' or 'right'")
        }
    }

    /// OBJ starting at offset `k` from the cursor: (class, word count).
    fn object_at(&self, k: usize) -> Option<(ReferentClass, usize)> {
        let w = self.peek_at(k)?;
        let class = match w {
            "car" | "vehicle" | "truck" => ReferentClass::Vehicle,
            "building" => ReferentClass::Building,
            "intersection" | "junction" => ReferentClass::Intersection,
            "pedestrian" => ReferentClass::Pedestrian,
            "bus" if self.peek_at(k + 1) == Some("stop") => return Some((ReferentClass::BusStop, 2)),
            "traffic" if self.peek_at(k + 1) == Some("light") => {
                return Some((ReferentClass::TrafficLight, 2))
            }
            _ => return None,
        };
        Some((class, 1))
    }

    fn referent(&mut self) -> Result<Referent, ParseError> {
        if let Some((class, n)) = self.object_at(0) {
            self.pos += n;
            return Ok(Referent::new(class));
        }
        let Some(w) = self.peek() else {
            return self.err("expected an object");
        };
        let color = ColorTag::from_word(w);
        // A colour, or an out-of-vocabulary modifier, may precede the object.
        if color.is_some() || self.vocab.id(w) == UNK_ID {
            if let Some((class, n)) = self.object_at(1) {
                self.pos += 1 + n;
                return Ok(Referent {
                    class,
                    color,
                    side: None,
                });
            }
            self.pos += 1;
        }
        self.err("expected an object")
    }

    fn relation(&mut self) -> Option<Relation> {
        let r = match self.peek()? {
            "near" => Relation::Near,
            "behind" => Relation::Behind,
            "beside" => Relation::Beside,
            "in" if self.peek_at(1) == Some("front") && self.peek_at(2) == Some("of") => {
                self.pos += 3;
                return Some(Relation::InFrontOf);
            }
            _ => return None,
        };
        self.pos += 1;
        Some(r)
    }

    fn turn_tail(&mut self, m: &mut Maneuver) -> Result<(), ParseError> {
        if self.accept("at") {
            self.expect("the")?;
            m.relation = Some(Relation::At);
            m.referents.push(self.referent()?);
        } else if self.peek() == Some("from") {
            self.pos += 1;
            self.expect("the")?;
            self.expect("intersection")?;
            m.relation = Some(Relation::At);
            m.referents.push(Referent::new(ReferentClass::Intersection));
        }
        Ok(())
    }

    fn clause(&mut self) -> Result<Maneuver, ParseError> {
        match self.peek() {
            Some("take") => {
                self.pos += 1;
                self.expect("a")?;
                let mut m = Maneuver::turn(self.side()?);
                self.accept("turn");
                self.turn_tail(&mut m)?;
                Ok(m)
            }
            Some("turn") => {
                self.pos += 1;
                let mut m = Maneuver::turn(self.side()?);
                self.accept("turn");
                self.turn_tail(&mut m)?;
                Ok(m)
            }
            Some("change") => {
                self.pos += 1;
                self.expect("to")?;
                self.expect("the")?;
                let dir = self.side()?;
                self.expect("lane")?;
                Ok(Maneuver {
                    kind: ManeuverKind::LaneChange,
                    direction: Some(dir),
                    relation: None,
                    referents: Vec::new(),
                })
            }
            Some("go") => {
                self.pos += 1;
                self.expect("straight")?;
                let mut m = Maneuver {
                    kind: ManeuverKind::GoStraight,
                    direction: None,
                    relation: None,
                    referents: Vec::new(),
                };
                if self.accept("until") {
                    self.expect("the")?;
                    m.referents.push(self.referent()?);
                }
                Ok(m)
            }
            Some(w @ ("park" | "stop")) => {
                let kind = if w == "park" {
                    ManeuverKind::Park
                } else {
                    ManeuverKind::Stop
                };
                self.pos += 1;
                let mut m = Maneuver {
                    kind,
                    direction: None,
                    relation: None,
                    referents: Vec::new(),
                };
                if let Some(rel) = self.relation() {
                    self.expect("the")?;
                    let mut r = self.referent()?;
                    if self.peek() == Some("on") {
                        self.pos += 1;
                        self.expect("the")?;
                        r.side = Some(self.side()?);
                    }
                    m.relation = Some(rel);
                    m.referents.push(r);
                } else if self.accept("on") {
                    self.expect("the")?;
                    m.direction = Some(self.side()?);
                } else if self.accept("between") {
                    self.expect("the")?;
                    self.expect("two")?;
                    match self.peek() {
                        Some("cars" | "vehicles") => self.pos += 1,
                        _ => return self.err("expected 'cars'"),
                    }
                    m.relation = Some(Relation::Between);
                    m.referents = vec![Referent::new(ReferentClass::Vehicle); 2];
                } else {
                    return self.err("expected a relation, 'on' or 'between'");
                }
                Ok(m)
            }
            _ => self.err("expected the start of a manoeuvre"),
        }
    }
}

/// Parses a command against the closed grammar.
pub fn parse_command(text: &str) -> Result<ManeuverPlan, ParseError> {
    let toks = tokenize(text);
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        vocab: Vocabulary::default(),
    };
    let mut maneuvers = vec![p.clause()?];
    while p.pos < toks.len() {
        if maneuvers.last().is_some_and(|m| m.kind.is_halt()) {
            return p.err("nothing may follow park/stop");
        }
        if maneuvers.len() == MAX_MANEUVERS {
            return p.err("at most three manoeuvres");
        }
        p.expect("and")?;
        maneuvers.push(p.clause()?);
    }
    Ok(ManeuverPlan {
        maneuvers,
        raw_text: text.to_string(),
        token_count: toks.len(),
    })
}

impl fmt::Display for ManeuverPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.raw_text)
    }
}
