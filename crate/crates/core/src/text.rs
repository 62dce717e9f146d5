//! Devanagari and WX text handling: normalisation, the WX codec, character
//! vocabularies, output post-processing and the error taxonomy.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};
use crate::metrics::{edit_script, EditOp};

/// Code points of `s` after NFC normalisation.
pub fn graphemes(s: &str) -> Vec<char> {
    s.nfc().collect()
}

pub fn nfc(s: &str) -> String {
    s.nfc().collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Script {
    Devanagari,
    Wx,
    Raw,
}

impl Script {
    /// Devanagari if any code point lies in the Devanagari block, WX if every
    /// character belongs to the WX alphabet, raw otherwise.
    pub fn detect(s: &str) -> Script {
        if s.chars().any(is_devanagari) {
            Script::Devanagari
        } else if !s.is_empty() && s.chars().all(|c| wx_table().is_wx_char(c)) {
            Script::Wx
        } else {
            Script::Raw
        }
    }
}

impl std::str::FromStr for Script {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "devanagari" | "dev" => Ok(Script::Devanagari),
            "wx" => Ok(Script::Wx),
            "raw" => Ok(Script::Raw),
            other => Err(Error::InvalidArgument(format!("unknown script `{other}`"))),
        }
    }
}

fn is_devanagari(c: char) -> bool {
    ('\u{0900}'..='\u{097F}').contains(&c)
}

/// A word as NFC code points tagged with its script.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GraphemeString {
    units: Vec<char>,
    script: Script,
}

impl GraphemeString {
    /// Normalises `s`; WX strings must stay within the WX alphabet.
    pub fn new(s: &str, script: Script) -> Result<Self> {
        let units = graphemes(s);
        if script == Script::Wx {
            if let Some((offset, &symbol)) = units
                .iter()
                .enumerate()
                .find(|(_, &c)| !wx_table().is_wx_char(c))
            {
                return Err(Error::UnmappedSymbol { symbol, offset });
            }
        }
        Ok(GraphemeString { units, script })
    }

    pub fn from_units(units: Vec<char>, script: Script) -> Self {
        GraphemeString { units, script }
    }

    pub fn units(&self) -> &[char] {
        &self.units
    }

    pub fn script(&self) -> Script {
        self.script
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }
}

impl fmt::Display for GraphemeString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.units.iter().try_for_each(|c| write!(f, "{c}"))
    }
}

const VIRAMA: char = '\u{094D}';
const NUKTA: char = '\u{093C}';
const ANUSVARA: char = '\u{0902}';
const CHANDRABINDU: char = '\u{0901}';
const NA: char = 'न';
const RA: char = 'र';
const AA_SIGN: char = 'ा';

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Class {
    Vowel,
    VowelSign,
    Consonant,
    Virama,
    Nukta,
    Sign,
}

fn class_of(c: char) -> Option<Class> {
    match c as u32 {
        0x0904..=0x0914 | 0x0960 | 0x0961 => Some(Class::Vowel),
        0x093E..=0x094C | 0x0962 | 0x0963 => Some(Class::VowelSign),
        0x0915..=0x0939 | 0x0958..=0x095F => Some(Class::Consonant),
        0x094D => Some(Class::Virama),
        0x093C => Some(Class::Nukta),
        0x0900..=0x0903 => Some(Class::Sign),
        _ => None,
    }
}

fn is_vowelish(c: char) -> bool {
    matches!(class_of(c), Some(Class::Vowel | Class::VowelSign))
}

/// Table-driven WX transliteration.
#[derive(Debug, Clone)]
pub struct WxTable {
    to_wx: HashMap<char, String>,
    consonants: HashMap<char, char>,
    vowels: HashMap<char, char>,
    vowel_signs: HashMap<char, char>,
    signs: HashMap<char, char>,
}

static WX_TABLE: OnceLock<WxTable> = OnceLock::new();

/// The bundled WX table.
pub fn wx_table() -> &'static WxTable {
    WX_TABLE.get_or_init(|| {
        WxTable::from_tsv(include_str!("../data/wx.tsv")).expect("bundled WX table parses")
    })
}

impl WxTable {
    /// Parses lines `U+XXXX<TAB>wx`; `#` starts a comment. The virama maps to
    /// the empty string.
    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut t = WxTable {
            to_wx: HashMap::new(),
            consonants: HashMap::new(),
            vowels: HashMap::new(),
            vowel_signs: HashMap::new(),
            signs: HashMap::new(),
        };
        for (no, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let parse_err = |message: &str| Error::Parse {
                line: no + 1,
                message: message.to_string(),
            };
            let (cp, wx) = line
                .split_once('\t')
                .ok_or_else(|| parse_err("expected code point<TAB>wx"))?;
            let hex = cp
                .trim()
                .strip_prefix("U+")
                .ok_or_else(|| parse_err("code point must start with U+"))?;
            let dev = u32::from_str_radix(hex, 16)
                .ok()
                .and_then(char::from_u32)
                .ok_or_else(|| parse_err("bad code point"))?;
            let class =
                class_of(dev).ok_or_else(|| parse_err("not a Devanagari letter or sign"))?;
            let mut wx_chars = wx.chars();
            let latin = match (wx_chars.next(), wx_chars.next()) {
                (None, _) if class == Class::Virama => None,
                (Some(c), None) if class != Class::Virama => Some(c),
                _ => return Err(parse_err("expected a single WX letter")),
            };
            t.to_wx.insert(dev, wx.to_string());
            if let Some(l) = latin {
                let slot = match class {
                    Class::Consonant => &mut t.consonants,
                    Class::Vowel => &mut t.vowels,
                    Class::VowelSign => &mut t.vowel_signs,
                    _ => &mut t.signs,
                };
                if slot.insert(l, dev).is_some() {
                    return Err(parse_err("duplicate WX letter"));
                }
            }
        }
        Ok(t)
    }

    pub fn is_wx_char(&self, c: char) -> bool {
        self.consonants.contains_key(&c)
            || self.vowels.contains_key(&c)
            || self.signs.contains_key(&c)
    }

    fn wx_of(&self, c: char, offset: usize) -> Result<&str> {
        self.to_wx
            .get(&c)
            .map(String::as_str)
            .ok_or(Error::UnmappedSymbol { symbol: c, offset })
    }

    /// Devanagari to WX. Consonants carry an inherent `a` unless followed by
    /// a vowel sign or virama.
    pub fn encode(&self, dev: &str) -> Result<String> {
        let cs = graphemes(dev);
        let mut out = String::with_capacity(cs.len() * 2);
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            let ill_formed = |offset| {
                Err(Error::UnmappedSymbol {
                    symbol: cs[offset],
                    offset,
                })
            };
            match class_of(c) {
                Some(Class::Consonant) => {
                    out.push_str(self.wx_of(c, i)?);
                    i += 1;
                    if cs.get(i) == Some(&NUKTA) {
                        out.push_str(self.wx_of(NUKTA, i)?);
                        i += 1;
                    }
                    match cs.get(i).copied().and_then(class_of) {
                        Some(Class::VowelSign) => {
                            out.push_str(self.wx_of(cs[i], i)?);
                            i += 1;
                        }
                        Some(Class::Virama) => {
                            i += 1;
                            if matches!(cs.get(i).copied().and_then(class_of), Some(Class::Vowel)) {
                                return ill_formed(i);
                            }
                        }
                        _ => out.push('a'),
                    }
                }
                Some(Class::Vowel | Class::Sign) => {
                    out.push_str(self.wx_of(c, i)?);
                    i += 1;
                }
                _ => return ill_formed(i),
            }
        }
        Ok(out)
    }

    /// WX to Devanagari. A consonant not followed by a vowel letter gets a
    /// virama.
    pub fn decode(&self, wx: &str) -> Result<String> {
        let cs: Vec<char> = wx.chars().collect();
        let mut out = String::with_capacity(cs.len() * 3);
        let mut i = 0;
        while i < cs.len() {
            let c = cs[i];
            if let Some(&dev) = self.consonants.get(&c) {
                out.push(dev);
                i += 1;
                if cs.get(i) == Some(&'Z') {
                    out.push(NUKTA);
                    i += 1;
                }
                match cs.get(i) {
                    Some('a') => i += 1,
                    Some(v) if self.vowel_signs.contains_key(v) => {
                        out.push(self.vowel_signs[v]);
                        i += 1;
                    }
                    _ => out.push(VIRAMA),
                }
            } else if let Some(&dev) = self.vowels.get(&c) {
                out.push(dev);
                i += 1;
            } else if let Some(&dev) = self.signs.get(&c).filter(|&&d| d != NUKTA) {
                out.push(dev);
                i += 1;
            } else {
                return Err(Error::UnmappedSymbol {
                    symbol: c,
                    offset: i,
                });
            }
        }
        Ok(out)
    }
}

pub fn wx_encode(dev: &str) -> Result<String> {
    wx_table().encode(dev)
}

pub fn wx_decode(wx: &str) -> Result<String> {
    wx_table().decode(wx)
}

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;

/// Symbol ↔ id map. Ids 0..4 are PAD, BOS, EOS, UNK; the remaining ids
/// follow the sorted symbol set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<char>", into = "Vec<char>")]
pub struct CharVocab {
    symbols: Vec<char>,
    index: HashMap<char, usize>,
}

impl From<Vec<char>> for CharVocab {
    fn from(symbols: Vec<char>) -> Self {
        CharVocab::from_symbols(symbols)
    }
}

impl From<CharVocab> for Vec<char> {
    fn from(v: CharVocab) -> Self {
        v.symbols
    }
}

impl CharVocab {
    pub fn from_symbols<I: IntoIterator<Item = char>>(symbols: I) -> Self {
        let set: BTreeSet<char> = symbols.into_iter().collect();
        let symbols: Vec<char> = set.into_iter().collect();
        let index = symbols
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + NUM_SPECIALS))
            .collect();
        CharVocab { symbols, index }
    }

    /// Vocabulary over every code point of every source and target word.
    pub fn build<S: AsRef<str>>(pairs: &[(S, S)]) -> Self {
        Self::from_symbols(pairs.iter().flat_map(|(s, t)| {
            graphemes(s.as_ref())
                .into_iter()
                .chain(graphemes(t.as_ref()))
        }))
    }

    pub fn len(&self) -> usize {
        self.symbols.len() + NUM_SPECIALS
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn id(&self, c: char) -> usize {
        self.index.get(&c).copied().unwrap_or(UNK)
    }

    pub fn symbol(&self, id: usize) -> Option<char> {
        id.checked_sub(NUM_SPECIALS)
            .and_then(|i| self.symbols.get(i).copied())
    }

    /// Ids of `word` without BOS/EOS; unknown characters map to UNK.
    pub fn encode(&self, word: &str) -> Vec<usize> {
        graphemes(word).into_iter().map(|c| self.id(c)).collect()
    }

    /// Characters of `ids`, skipping special symbols.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter().filter_map(|&i| self.symbol(i)).collect()
    }

    /// Name of a special id, for reports.
    pub fn special_name(id: usize) -> Option<&'static str> {
        ["<pad>", "<s>", "</s>", "<unk>"].get(id).copied()
    }
}

/// Drops the final code point while it equals its predecessor.
pub fn strip_trailing_repeats_units(units: &[char]) -> Vec<char> {
    let mut end = units.len();
    while end >= 2 && units[end - 1] == units[end - 2] {
        end -= 1;
    }
    units[..end].to_vec()
}

/// Collapses a run of identical trailing characters to one. WX input is
/// stripped in Devanagari, so `Jatatatata` (झटटटट) becomes `Jata`.
pub fn strip_trailing_repeats(word: &str, script: Script) -> String {
    if script == Script::Wx {
        if let Ok(dev) = wx_decode(word) {
            let stripped: String = strip_trailing_repeats_units(&graphemes(&dev))
                .into_iter()
                .collect();
            if let Ok(wx) = wx_encode(&stripped) {
                return wx;
            }
        }
    }
    strip_trailing_repeats_units(&graphemes(word))
        .into_iter()
        .collect()
}

/// Error categories for a wrong transduction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorTag {
    Halant,
    Anusvara,
    VowelQuality,
    ConjunctKRaJFa,
    RephDiacritic,
    VowelLength,
    LongWord,
    IdenticalExpected,
    InvalidSequence,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 9] = [
        ErrorTag::Halant,
        ErrorTag::Anusvara,
        ErrorTag::VowelQuality,
        ErrorTag::ConjunctKRaJFa,
        ErrorTag::RephDiacritic,
        ErrorTag::VowelLength,
        ErrorTag::LongWord,
        ErrorTag::IdenticalExpected,
        ErrorTag::InvalidSequence,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ErrorTag::Halant => "halant",
            ErrorTag::Anusvara => "anusvara",
            ErrorTag::VowelQuality => "vowel-quality",
            ErrorTag::ConjunctKRaJFa => "conjunct-kra-jfa",
            ErrorTag::RephDiacritic => "reph",
            ErrorTag::VowelLength => "vowel-length",
            ErrorTag::LongWord => "long-word",
            ErrorTag::IdenticalExpected => "identical-expected",
            ErrorTag::InvalidSequence => "invalid-sequence",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Words longer than this many code points count as long.
pub const LONG_WORD: usize = 6;

const LENGTH_PAIRS: [(char, char); 8] = [
    ('ि', 'ी'),
    ('ु', 'ू'),
    ('ृ', 'ॄ'),
    ('इ', 'ई'),
    ('उ', 'ऊ'),
    ('ऋ', 'ॠ'),
    ('अ', 'आ'),
    ('ऌ', 'ॡ'),
];

fn is_length_pair(x: char, y: char) -> bool {
    LENGTH_PAIRS
        .iter()
        .any(|&(s, l)| (x, y) == (s, l) || (x, y) == (l, s))
}

/// Structural problems: a combining sign with nothing to attach to, a
/// doubled virama, stacked vowel signs and the like.
pub fn script_violations(word: &str) -> Vec<usize> {
    let cs = graphemes(word);
    let mut bad = Vec::new();
    for (i, &c) in cs.iter().enumerate() {
        let prev = i.checked_sub(1).and_then(|j| class_of(cs[j]));
        let ok = match class_of(c) {
            Some(Class::VowelSign) | Some(Class::Virama) => {
                matches!(prev, Some(Class::Consonant | Class::Nukta))
            }
            Some(Class::Nukta) => prev == Some(Class::Consonant),
            Some(Class::Sign) => matches!(
                prev,
                Some(Class::Consonant | Class::Nukta | Class::Vowel | Class::VowelSign)
            ),
            _ => true,
        };
        if !ok {
            bad.push(i);
        }
    }
    bad
}

/// Index ranges of `क्ष` / `ज्ञ` clusters and of reph (`र्` before a consonant).
fn cluster_spans(cs: &[char]) -> (Vec<std::ops::Range<usize>>, Vec<std::ops::Range<usize>>) {
    let mut conj = Vec::new();
    let mut reph = Vec::new();
    for i in 0..cs.len().saturating_sub(2) {
        if cs[i + 1] != VIRAMA {
            continue;
        }
        if matches!((cs[i], cs[i + 2]), ('क', 'ष') | ('ज', 'ञ')) {
            conj.push(i..i + 3);
        }
        if cs[i] == RA
            && class_of(cs[i + 2]) == Some(Class::Consonant)
            && (i == 0 || cs[i - 1] != VIRAMA)
        {
            reph.push(i..i + 2);
        }
    }
    (conj, reph)
}

fn has_reph(cs: &[char]) -> bool {
    !cluster_spans(cs).1.is_empty()
}

/// Tags why `prediction` differs from `gold`. All three strings must share a
/// script; WX input is analysed in Devanagari. Empty when the prediction is
/// correct.
pub fn classify_errors(source: &str, gold: &str, prediction: &str) -> Result<Vec<ErrorTag>> {
    let (s, g, p) = (nfc(source), nfc(gold), nfc(prediction));
    if p == g {
        return Ok(Vec::new());
    }
    let dev = |x: &str| x.chars().any(is_devanagari);
    if dev(&s) != dev(&g) || (!p.is_empty() && dev(&p) != dev(&g)) {
        return Err(Error::InvalidArgument(
            "source, gold and prediction use different scripts".into(),
        ));
    }
    let mut tags = BTreeSet::new();
    if graphemes(&g).len() > LONG_WORD {
        tags.insert(ErrorTag::LongWord);
    }
    if s == g {
        tags.insert(ErrorTag::IdenticalExpected);
    }

    let wx_mode = !dev(&g) && Script::detect(&g) == Script::Wx && Script::detect(&s) == Script::Wx;
    let (s, g, p) = if dev(&g) {
        (s, g, Some(p))
    } else if wx_mode {
        (wx_decode(&s)?, wx_decode(&g)?, wx_decode(&p).ok())
    } else {
        return Ok(tags.into_iter().collect());
    };
    let Some(p) = p else {
        tags.insert(ErrorTag::InvalidSequence);
        return Ok(tags.into_iter().collect());
    };
    if !script_violations(&p).is_empty() || p.contains("\u{094D}\u{094D}") {
        tags.insert(ErrorTag::InvalidSequence);
    }
    let (sc, gc, pc) = (graphemes(&s), graphemes(&g), graphemes(&p));
    let source_nasal = sc.contains(&ANUSVARA) || gc.contains(&ANUSVARA);
    let (g_conj, g_reph) = cluster_spans(&gc);
    let (p_conj, p_reph) = cluster_spans(&pc);
    let in_any = |spans: &[std::ops::Range<usize>], i: usize| spans.iter().any(|r| r.contains(&i));

    let ops = edit_script(&gc, &pc);
    // gold / prediction indices that take part in an edit
    let mut g_hit = vec![false; gc.len()];
    let mut p_hit = vec![false; pc.len()];
    for op in &ops {
        match *op {
            EditOp::Substitute { a, b } => {
                g_hit[a] = true;
                p_hit[b] = true;
            }
            EditOp::Delete { a } => g_hit[a] = true,
            EditOp::Insert { b, .. } => p_hit[b] = true,
            EditOp::Keep { .. } => {}
        }
    }
    let changed = |cs: &[char], hit: &[bool], i: usize, c: char| hit[i] && cs[i] == c;
    let na_changed = (0..gc.len()).any(|i| changed(&gc, &g_hit, i, NA))
        || (0..pc.len()).any(|i| changed(&pc, &p_hit, i, NA));

    // a virama that is part of a changed nasal `न्` cluster belongs to the anusvara rule
    let nasal_virama = |cs: &[char], hit: &[bool], i: usize| {
        source_nasal && i > 0 && cs[i - 1] == NA && hit[i - 1]
    };
    let halant = (0..gc.len())
        .any(|i| changed(&gc, &g_hit, i, VIRAMA) && !nasal_virama(&gc, &g_hit, i))
        || (0..pc.len()).any(|i| changed(&pc, &p_hit, i, VIRAMA) && !nasal_virama(&pc, &p_hit, i));
    if halant {
        tags.insert(ErrorTag::Halant);
    }

    let nasal_sign = |cs: &[char], hit: &[bool]| {
        (0..cs.len()).any(|i| hit[i] && matches!(cs[i], ANUSVARA | CHANDRABINDU))
    };
    if nasal_sign(&gc, &g_hit) || nasal_sign(&pc, &p_hit) || (source_nasal && na_changed) {
        tags.insert(ErrorTag::Anusvara);
    }

    for op in &ops {
        let (gch, pch) = match *op {
            EditOp::Substitute { a, b } => (Some(gc[a]), Some(pc[b])),
            EditOp::Delete { a } => (Some(gc[a]), None),
            EditOp::Insert { b, .. } => (None, Some(pc[b])),
            EditOp::Keep { .. } => continue,
        };
        let after_consonant =
            |cs: &[char], i: usize| i > 0 && class_of(cs[i - 1]) == Some(Class::Consonant);
        let length = match (*op, gch, pch) {
            (_, Some(x), Some(y)) => is_length_pair(x, y),
            (EditOp::Delete { a }, Some(AA_SIGN), None) => after_consonant(&gc, a),
            (EditOp::Insert { b, .. }, None, Some(AA_SIGN)) => after_consonant(&pc, b),
            _ => false,
        };
        if length {
            tags.insert(ErrorTag::VowelLength);
        } else if gch.is_some_and(is_vowelish) || pch.is_some_and(is_vowelish) {
            tags.insert(ErrorTag::VowelQuality);
        }
    }

    if (0..gc.len()).any(|i| g_hit[i] && in_any(&g_conj, i))
        || (0..pc.len()).any(|i| p_hit[i] && in_any(&p_conj, i))
    {
        tags.insert(ErrorTag::ConjunctKRaJFa);
    }
    let reph_touched = (0..gc.len()).any(|i| g_hit[i] && in_any(&g_reph, i))
        || (0..pc.len()).any(|i| p_hit[i] && in_any(&p_reph, i));
    let ra_changed = (0..gc.len()).any(|i| changed(&gc, &g_hit, i, RA))
        || (0..pc.len()).any(|i| changed(&pc, &p_hit, i, RA));
    if reph_touched || (has_reph(&sc) && ra_changed) {
        tags.insert(ErrorTag::RephDiacritic);
    }
    Ok(tags.into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wx_letters_and_anusvara() {
        assert_eq!(wx_encode("अ").unwrap(), "a");
        assert_eq!(wx_encode("आ").unwrap(), "A");
        assert_eq!(wx_encode("का").unwrap(), "kA");
        assert_eq!(wx_encode("भेंट").unwrap(), "BeMta");
        assert_eq!(wx_encode("झटटटट").unwrap(), "Jatatatata");
        assert_eq!(wx_encode("क्षमा").unwrap(), "kRamA");
        assert_eq!(wx_decode("BeMta").unwrap(), "भेंट");
        assert_eq!(wx_decode("Benta").unwrap(), "भेन्ट");
    }

    #[test]
    fn wx_rejects_unmapped_and_ill_formed() {
        assert!(matches!(
            wx_encode("aक"),
            Err(Error::UnmappedSymbol {
                symbol: 'a',
                offset: 0
            })
        ));
        assert!(matches!(
            wx_encode("ि"),
            Err(Error::UnmappedSymbol { offset: 0, .. })
        ));
        assert!(matches!(
            wx_encode("क्इ"),
            Err(Error::UnmappedSymbol { offset: 2, .. })
        ));
        assert!(matches!(
            wx_decode("ka1"),
            Err(Error::UnmappedSymbol {
                symbol: '1',
                offset: 2
            })
        ));
    }

    #[test]
    fn nukta_round_trip() {
        let w = "क़िला";
        assert_eq!(wx_decode(&wx_encode(w).unwrap()).unwrap(), nfc(w));
    }

    #[test]
    fn vocab_examples() {
        let v = CharVocab::build(&[("ab", "ba")]);
        assert_eq!(v.len(), 6);
        assert_eq!(v.id('a'), 4);
        assert_eq!(v.id('b'), 5);
        assert_eq!(v.id('z'), UNK);
        assert_eq!(v.decode(&[BOS, 5, 4, EOS, PAD]), "ba");
        let w = CharVocab::build(&[("ab", "xy")]);
        assert_eq!(w.symbols(), &['a', 'b', 'x', 'y']);
        assert_eq!(CharVocab::build(&[("ab", "ba")]), v);
    }

    #[test]
    fn strip_examples() {
        assert_eq!(strip_trailing_repeats("Jatatatata", Script::Wx), "Jata");
        assert_eq!(strip_trailing_repeats("Jata", Script::Wx), "Jata");
        assert_eq!(strip_trailing_repeats("abbb", Script::Raw), "ab");
        assert_eq!(strip_trailing_repeats("", Script::Raw), "");
        assert_eq!(strip_trailing_repeats("झटटटट", Script::Devanagari), "झट");
    }

    #[test]
    fn nasal_cluster_is_anusvara_only() {
        assert_eq!(
            classify_errors("भेंट", "भेट", "भेन्ट").unwrap(),
            vec![ErrorTag::Anusvara]
        );
        assert_eq!(
            classify_errors("BeMta", "Beta", "Benta").unwrap(),
            vec![ErrorTag::Anusvara]
        );
    }

    #[test]
    fn correct_prediction_has_no_tags() {
        assert!(classify_errors("abc", "xyz", "xyz").unwrap().is_empty());
    }

    #[test]
    fn long_word_with_vowel_length_swap() {
        let gold = "बलकनमरसिक";
        let pred = "बलकनमरसीक";
        assert_eq!(graphemes(gold).len(), 9);
        let tags = classify_errors("बलकनमरस", gold, pred).unwrap();
        assert_eq!(tags, vec![ErrorTag::VowelLength, ErrorTag::LongWord]);
    }

    #[test]
    fn other_categories() {
        assert_eq!(
            classify_errors("पत्ता", "पत्ता", "पता").unwrap(),
            vec![ErrorTag::Halant, ErrorTag::IdenticalExpected]
        );
        assert!(classify_errors("कम", "काम", "कोम")
            .unwrap()
            .contains(&ErrorTag::VowelQuality));
        assert!(classify_errors("कम", "काम", "कम")
            .unwrap()
            .contains(&ErrorTag::VowelLength));
        assert!(classify_errors("क्षमा", "छमा", "क्षमा")
            .unwrap()
            .contains(&ErrorTag::ConjunctKRaJFa));
        assert!(classify_errors("धर्म", "धरम", "धर्म")
            .unwrap()
            .contains(&ErrorTag::RephDiacritic));
        assert!(classify_errors("कल", "कल", "्कल")
            .unwrap()
            .contains(&ErrorTag::InvalidSequence));
        assert!(matches!(
            classify_errors("कल", "kala", "kalA"),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn violations() {
        assert!(script_violations("कमल").is_empty());
        assert_eq!(script_violations("िक"), vec![0]);
        assert_eq!(script_violations("क््"), vec![2]);
        assert_eq!(script_violations("काे"), vec![2]);
    }
}
