//! Meta-audio sets, merge rules, pronunciation lexica and the mapping from
//! transcripts to meta-audio sequences.
//!
//! Three plain-text formats are read here:
//!
//! * meta-audio set: one label per line, `#` comments and blank lines ignored;
//! * merge rules: `alias<TAB>canonical` per line;
//! * lexicon: optional `#tokenize=char|space` first line, then
//!   `grapheme<TAB>label[ label...]` per line.
//!
//! Lexicon labels are passed through the merge rules before they are resolved
//! to ids, so the same lexicon can serve a toned and a tone-merged set.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use indexmap::IndexMap;
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Dense index of a meta audio inside its [`MetaAudioSet`].
pub type MetaId = u32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LexiconError {
    #[error("meta-audio set is empty")]
    EmptySet,
    #[error("line {line}: duplicate label {label:?}")]
    DuplicateLabel { line: usize, label: String },
    #[error("line {line}: label {label:?} contains whitespace")]
    InvalidLabel { line: usize, label: String },
    #[error("line {line}: expected two tab-separated fields")]
    MalformedLine { line: usize },
    #[error("line {line}: merge target {label:?} is not in the meta-audio set")]
    UnknownCanonical { line: usize, label: String },
    #[error("line {line}: merge target {label:?} is itself an alias")]
    AliasChain { line: usize, label: String },
    #[error("line {line}: alias {alias:?} defined twice")]
    DuplicateAlias { line: usize, alias: String },
    #[error("line {line}: unknown label {label:?}")]
    UnknownLabel { line: usize, label: String },
    #[error("line {line}: empty pronunciation for {grapheme:?}")]
    EmptyPronunciation { line: usize, grapheme: String },
    #[error("line {line}: grapheme {grapheme:?} is not a single {mode} token")]
    InvalidGrapheme {
        line: usize,
        grapheme: String,
        mode: Tokenization,
    },
    #[error("line 1: unknown tokenization {0:?}")]
    UnknownTokenization(String),
    #[error("grapheme {grapheme:?} at position {position} is not in the lexicon")]
    Oov { grapheme: String, position: usize },
    #[error("transcript {0:?} maps to an empty meta-audio sequence")]
    EmptySequence(String),
    #[error("meta id {id} out of range for a set of {k} labels")]
    IdOutOfRange { id: MetaId, k: usize },
}

/// SHA-256 of a meta-audio set file, used to pair emissions and databases
/// with the label inventory they were produced against.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct MetaSetHash(pub [u8; 32]);

impl MetaSetHash {
    pub fn of_bytes(bytes: &[u8]) -> Self {
        MetaSetHash(Sha256::digest(bytes).into())
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s.trim()).ok()?;
        Some(MetaSetHash(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for MetaSetHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "MetaSetHash({})", self.to_hex())
    }
}

impl fmt::Display for MetaSetHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

/// The alphabet of meta audios, ids assigned in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetaAudioSet {
    labels: Vec<String>,
    index: HashMap<String, MetaId>,
    hash: MetaSetHash,
}

impl MetaAudioSet {
    pub fn parse(text: &str) -> Result<Self, LexiconError> {
        let mut labels = Vec::new();
        let mut index = HashMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let lineno = lineno + 1;
            if line.chars().any(char::is_whitespace) {
                return Err(LexiconError::InvalidLabel {
                    line: lineno,
                    label: line.to_string(),
                });
            }
            if index.contains_key(line) {
                return Err(LexiconError::DuplicateLabel {
                    line: lineno,
                    label: line.to_string(),
                });
            }
            index.insert(line.to_string(), labels.len() as MetaId);
            labels.push(line.to_string());
        }
        if labels.is_empty() {
            return Err(LexiconError::EmptySet);
        }
        Ok(MetaAudioSet {
            labels,
            index,
            hash: MetaSetHash::of_bytes(text.as_bytes()),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn id(&self, label: &str) -> Option<MetaId> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: MetaId) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    /// Hash of the exact bytes this set was parsed from.
    pub fn hash(&self) -> MetaSetHash {
        self.hash
    }

    /// Resolves a whitespace-separated list of labels to a sequence.
    pub fn sequence_from_labels(&self, labels: &str) -> Result<MetaSequence, LexiconError> {
        let ids = labels
            .split_whitespace()
            .map(|l| {
                self.id(l).ok_or_else(|| LexiconError::UnknownLabel {
                    line: 1,
                    label: l.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        MetaSequence::new(ids).ok_or_else(|| LexiconError::EmptySequence(labels.to_string()))
    }
}

/// A non-empty sequence of meta-audio ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaSequence(Vec<MetaId>);

impl MetaSequence {
    pub fn new(ids: Vec<MetaId>) -> Option<Self> {
        if ids.is_empty() {
            None
        } else {
            Some(MetaSequence(ids))
        }
    }

    pub fn ids(&self) -> &[MetaId] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Fails if any id is not below `k`.
    pub fn check_range(&self, k: usize) -> Result<(), LexiconError> {
        match self.0.iter().find(|&&id| id as usize >= k) {
            Some(&id) => Err(LexiconError::IdOutOfRange { id, k }),
            None => Ok(()),
        }
    }
}

/// Alias to canonical label rewrites, applied before id lookup.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeRules {
    map: BTreeMap<String, String>,
}

impl MergeRules {
    pub fn parse(text: &str, set: &MetaAudioSet) -> Result<Self, LexiconError> {
        let mut map = BTreeMap::new();
        let mut lines = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut fields = line.split('\t');
            let (alias, canonical) = match (fields.next(), fields.next(), fields.next()) {
                (Some(a), Some(c), None) if !a.trim().is_empty() && !c.trim().is_empty() => {
                    (a.trim().to_string(), c.trim().to_string())
                }
                _ => return Err(LexiconError::MalformedLine { line: lineno }),
            };
            if set.id(&canonical).is_none() {
                return Err(LexiconError::UnknownCanonical {
                    line: lineno,
                    label: canonical,
                });
            }
            if map.contains_key(&alias) {
                return Err(LexiconError::DuplicateAlias {
                    line: lineno,
                    alias,
                });
            }
            lines.push((lineno, canonical.clone()));
            map.insert(alias, canonical);
        }
        // a target may not be an alias defined anywhere in the file
        for (lineno, canonical) in lines {
            if map.contains_key(&canonical) {
                return Err(LexiconError::AliasChain {
                    line: lineno,
                    label: canonical,
                });
            }
        }
        Ok(MergeRules { map })
    }

    pub fn apply<'a>(&'a self, label: &'a str) -> &'a str {
        self.map.get(label).map(String::as_str).unwrap_or(label)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// How transcripts are split into graphemes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Tokenization {
    /// One Unicode scalar per grapheme; whitespace is skipped.
    #[default]
    Char,
    /// Whitespace-separated tokens.
    Space,
}

impl Tokenization {
    fn as_str(self) -> &'static str {
        match self {
            Tokenization::Char => "char",
            Tokenization::Space => "space",
        }
    }

    pub fn tokens(self, text: &str) -> Vec<&str> {
        match self {
            Tokenization::Space => text.split_whitespace().collect(),
            Tokenization::Char => text
                .char_indices()
                .filter(|(_, c)| !c.is_whitespace())
                .map(|(i, c)| &text[i..i + c.len_utf8()])
                .collect(),
        }
    }

    fn is_single_token(self, grapheme: &str) -> bool {
        let mut toks = self.tokens(grapheme).into_iter();
        matches!((toks.next(), toks.next()), (Some(t), None) if t == grapheme)
    }
}

impl fmt::Display for Tokenization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OovPolicy {
    #[default]
    Error,
    Skip,
}

/// Result of mapping one transcript.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mapping {
    pub sequence: MetaSequence,
    /// Graphemes dropped under [`OovPolicy::Skip`], with counts.
    pub oov: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageReport {
    pub oov: BTreeMap<String, usize>,
    pub total: usize,
    pub mappable: usize,
}

impl CoverageReport {
    /// Fraction of grapheme occurrences with a pronunciation; 1.0 when there
    /// are no occurrences at all.
    pub fn mappable_fraction(&self) -> f64 {
        if self.total == 0 {
            1.0
        } else {
            self.mappable as f64 / self.total as f64
        }
    }
}

/// Grapheme to pronunciation table. Graphemes keep file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    tokenization: Tokenization,
    entries: IndexMap<String, Vec<MetaSequence>>,
}

impl Lexicon {
    pub fn parse(text: &str, set: &MetaAudioSet, rules: &MergeRules) -> Result<Self, LexiconError> {
        let mut tokenization = Tokenization::default();
        let mut entries: IndexMap<String, Vec<MetaSequence>> = IndexMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let lineno = lineno + 1;
            let line = raw.trim_end_matches('\r');
            if lineno == 1 {
                if let Some(mode) = line.strip_prefix("#tokenize=") {
                    tokenization = match mode.trim() {
                        "char" => Tokenization::Char,
                        "space" => Tokenization::Space,
                        other => return Err(LexiconError::UnknownTokenization(other.to_string())),
                    };
                    continue;
                }
            }
            if line.trim().is_empty() || (line.starts_with('#') && !line.contains('\t')) {
                continue;
            }
            let (grapheme, pron) = line
                .split_once('\t')
                .ok_or(LexiconError::MalformedLine { line: lineno })?;
            if !tokenization.is_single_token(grapheme) {
                return Err(LexiconError::InvalidGrapheme {
                    line: lineno,
                    grapheme: grapheme.to_string(),
                    mode: tokenization,
                });
            }
            let ids = pron
                .split_whitespace()
                .map(|raw_label| {
                    let label = rules.apply(raw_label);
                    set.id(label).ok_or_else(|| LexiconError::UnknownLabel {
                        line: lineno,
                        label: raw_label.to_string(),
                    })
                })
                .collect::<Result<Vec<_>, _>>()?;
            let seq = MetaSequence::new(ids).ok_or_else(|| LexiconError::EmptyPronunciation {
                line: lineno,
                grapheme: grapheme.to_string(),
            })?;
            entries.entry(grapheme.to_string()).or_default().push(seq);
        }
        Ok(Lexicon {
            tokenization,
            entries,
        })
    }

    pub fn tokenization(&self) -> Tokenization {
        self.tokenization
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// All alternatives for a grapheme, in file order.
    pub fn pronunciations(&self, grapheme: &str) -> Option<&[MetaSequence]> {
        self.entries.get(grapheme).map(Vec::as_slice)
    }

    pub fn graphemes(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Maps a transcript by concatenating the first listed pronunciation of
    /// each grapheme.
    pub fn map_transcript(&self, text: &str, policy: OovPolicy) -> Result<Mapping, LexiconError> {
        let mut ids = Vec::new();
        let mut oov = BTreeMap::new();
        for (pos, tok) in self.tokenization.tokens(text).into_iter().enumerate() {
            match self.entries.get(tok) {
                Some(prons) => ids.extend_from_slice(prons[0].ids()),
                None => match policy {
                    OovPolicy::Error => {
                        return Err(LexiconError::Oov {
                            grapheme: tok.to_string(),
                            position: pos + 1,
                        })
                    }
                    OovPolicy::Skip => *oov.entry(tok.to_string()).or_insert(0) += 1,
                },
            }
        }
        let sequence =
            MetaSequence::new(ids).ok_or_else(|| LexiconError::EmptySequence(text.to_string()))?;
        Ok(Mapping { sequence, oov })
    }

    pub fn coverage_report<S: AsRef<str>>(&self, texts: &[S]) -> CoverageReport {
        let mut report = CoverageReport {
            oov: BTreeMap::new(),
            total: 0,
            mappable: 0,
        };
        for text in texts {
            for tok in self.tokenization.tokens(text.as_ref()) {
                report.total += 1;
                if self.entries.contains_key(tok) {
                    report.mappable += 1;
                } else {
                    *report.oov.entry(tok.to_string()).or_insert(0) += 1;
                }
            }
        }
        report
    }

    /// Serializes back to the lexicon file format using canonical labels.
    pub fn to_file_string(&self, set: &MetaAudioSet) -> String {
        let mut out = format!("#tokenize={}\n", self.tokenization);
        for (grapheme, prons) in &self.entries {
            for pron in prons {
                let labels: Vec<&str> = pron
                    .ids()
                    .iter()
                    .map(|&id| set.label(id).expect("lexicon ids are validated on parse"))
                    .collect();
                out.push_str(grapheme);
                out.push('\t');
                out.push_str(&labels.join(" "));
                out.push('\n');
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cat_set() -> MetaAudioSet {
        MetaAudioSet::parse("K\nAE\nT").unwrap()
    }

    fn cat_lexicon() -> Lexicon {
        Lexicon::parse("c\tK\na\tAE\nt\tT", &cat_set(), &MergeRules::default()).unwrap()
    }

    #[test]
    fn meta_set_ids_follow_file_order() {
        let set = cat_set();
        assert_eq!(set.labels(), ["K", "AE", "T"]);
        assert_eq!(set.id("K"), Some(0));
        assert_eq!(set.id("AE"), Some(1));
        assert_eq!(set.id("T"), Some(2));
    }

    #[test]
    fn meta_set_duplicate_reports_line() {
        assert_eq!(
            MetaAudioSet::parse("K\n#c\nK"),
            Err(LexiconError::DuplicateLabel {
                line: 3,
                label: "K".into()
            })
        );
    }

    #[test]
    fn meta_set_empty() {
        assert_eq!(MetaAudioSet::parse(""), Err(LexiconError::EmptySet));
        assert_eq!(
            MetaAudioSet::parse("# only\n\n"),
            Err(LexiconError::EmptySet)
        );
    }

    #[test]
    fn meta_set_rejects_inner_whitespace() {
        assert!(matches!(
            MetaAudioSet::parse("a b\n"),
            Err(LexiconError::InvalidLabel { line: 1, .. })
        ));
    }

    #[test]
    fn lexicon_direct_lookup() {
        let lex = cat_lexicon();
        assert_eq!(lex.pronunciations("c").unwrap()[0].ids(), [0]);
        assert_eq!(lex.pronunciations("a").unwrap()[0].ids(), [1]);
        assert_eq!(lex.pronunciations("t").unwrap()[0].ids(), [2]);
    }

    #[test]
    fn merged_tones_share_an_id() {
        let set = MetaAudioSet::parse("haa\nnei\n").unwrap();
        let rules = MergeRules::parse("haa4\thaa\nhaa6\thaa\n", &set).unwrap();
        let lex = Lexicon::parse("行\thaa4\n下\thaa6\n", &set, &rules).unwrap();
        let haa = set.id("haa").unwrap();
        assert_eq!(lex.pronunciations("行").unwrap()[0].ids(), [haa]);
        assert_eq!(lex.pronunciations("下").unwrap()[0].ids(), [haa]);
    }

    #[test]
    fn unknown_label_reports_line() {
        let err = Lexicon::parse("c\tK\nx\tQQ", &cat_set(), &MergeRules::default()).unwrap_err();
        assert_eq!(
            err,
            LexiconError::UnknownLabel {
                line: 2,
                label: "QQ".into()
            }
        );
    }

    #[test]
    fn empty_pronunciation_rejected() {
        let err = Lexicon::parse("c\t  ", &cat_set(), &MergeRules::default()).unwrap_err();
        assert!(matches!(
            err,
            LexiconError::EmptyPronunciation { line: 1, .. }
        ));
    }

    #[test]
    fn merge_rules_reject_chains_and_unknown_targets() {
        let set = MetaAudioSet::parse("haa\nhaa4\n").unwrap();
        assert!(matches!(
            MergeRules::parse("haa6\thaa4\nhaa4\thaa\n", &set),
            Err(LexiconError::AliasChain { line: 1, .. })
        ));
        assert!(matches!(
            MergeRules::parse("x\tzzz\n", &set),
            Err(LexiconError::UnknownCanonical { line: 1, .. })
        ));
        assert!(matches!(
            MergeRules::parse("x\n", &set),
            Err(LexiconError::MalformedLine { line: 1 })
        ));
    }

    #[test]
    fn repeated_graphemes_become_alternatives() {
        let lex = Lexicon::parse("c\tK\nc\tT\n", &cat_set(), &MergeRules::default()).unwrap();
        let prons = lex.pronunciations("c").unwrap();
        assert_eq!(prons.len(), 2);
        // first listed wins
        assert_eq!(
            lex.map_transcript("c", OovPolicy::Error)
                .unwrap()
                .sequence
                .ids(),
            [0]
        );
    }

    #[test]
    fn map_cat() {
        let m = cat_lexicon()
            .map_transcript("cat", OovPolicy::Error)
            .unwrap();
        assert_eq!(m.sequence.ids(), [0, 1, 2]);
        assert!(m.oov.is_empty());
    }

    #[test]
    fn map_skip_reports_oov() {
        let m = cat_lexicon()
            .map_transcript("cxt", OovPolicy::Skip)
            .unwrap();
        assert_eq!(m.sequence.ids(), [0, 2]);
        assert_eq!(m.oov, BTreeMap::from([("x".to_string(), 1)]));
    }

    #[test]
    fn map_error_names_position() {
        let err = cat_lexicon()
            .map_transcript("cxt", OovPolicy::Error)
            .unwrap_err();
        assert_eq!(
            err,
            LexiconError::Oov {
                grapheme: "x".into(),
                position: 2
            }
        );
    }

    #[test]
    fn fully_oov_is_empty_sequence() {
        let err = cat_lexicon()
            .map_transcript("xyz", OovPolicy::Skip)
            .unwrap_err();
        assert!(matches!(err, LexiconError::EmptySequence(_)));
    }

    #[test]
    fn space_tokenization() {
        let set = MetaAudioSet::parse("K\nAE\nT\nD\nAO\nG").unwrap();
        let lex = Lexicon::parse(
            "#tokenize=space\ncat\tK AE T\ndog\tD AO G\n",
            &set,
            &MergeRules::default(),
        )
        .unwrap();
        assert_eq!(lex.tokenization(), Tokenization::Space);
        let m = lex.map_transcript("cat  dog", OovPolicy::Error).unwrap();
        assert_eq!(m.sequence.ids(), [0, 1, 2, 3, 4, 5]);
        assert!(matches!(
            Lexicon::parse("#tokenize=space\nhot dog\tD", &set, &MergeRules::default()),
            Err(LexiconError::MalformedLine { .. }) | Err(LexiconError::InvalidGrapheme { .. })
        ));
    }

    #[test]
    fn char_mode_rejects_multichar_grapheme() {
        assert!(matches!(
            Lexicon::parse("ca\tK", &cat_set(), &MergeRules::default()),
            Err(LexiconError::InvalidGrapheme { line: 1, .. })
        ));
    }

    #[test]
    fn coverage_examples() {
        let lex = cat_lexicon();
        let r = lex.coverage_report(&["cat", "cat"]);
        assert!(r.oov.is_empty());
        assert_eq!(r.mappable_fraction(), 1.0);

        let r = lex.coverage_report(&["cxt"]);
        assert_eq!(r.oov, BTreeMap::from([("x".to_string(), 1)]));
        assert!((r.mappable_fraction() - 2.0 / 3.0).abs() < 1e-15);

        let r = lex.coverage_report::<&str>(&[]);
        assert_eq!(r.total, 0);
        assert_eq!(r.mappable_fraction(), 1.0);
    }

    fn toy_parts() -> (MetaAudioSet, MergeRules, Lexicon) {
        let set = MetaAudioSet::parse("nei\nhou\nsik\nfaan\nhaa\n").unwrap();
        let rules = MergeRules::parse("haa1\thaa\nhaa6\thaa\nnei5\tnei\n", &set).unwrap();
        let lex = Lexicon::parse(
            "#tokenize=char\n你\tnei5\n好\thou\n食\tsik\n飯\tfaan\n蝦\thaa1\n下\thaa6\n下\thou\n",
            &set,
            &rules,
        )
        .unwrap();
        (set, rules, lex)
    }

    proptest! {
        #[test]
        fn mapping_factorizes_per_grapheme(idx in proptest::collection::vec(0usize..6, 1..12)) {
            let (_, _, lex) = toy_parts();
            let graphemes: Vec<&str> = lex.graphemes().collect();
            let text: String = idx.iter().map(|&i| graphemes[i]).collect();
            let whole = lex.map_transcript(&text, OovPolicy::Error).unwrap();
            let parts: Vec<MetaId> = idx
                .iter()
                .flat_map(|&i| {
                    lex.map_transcript(graphemes[i], OovPolicy::Error)
                        .unwrap()
                        .sequence
                        .ids()
                        .to_vec()
                })
                .collect();
            prop_assert_eq!(whole.sequence.ids(), parts.as_slice());
        }

        #[test]
        fn merge_is_idempotent(label in "(haa1|haa6|nei5|nei|hou|xyz)") {
            let (_, rules, _) = toy_parts();
            let once = rules.apply(&label);
            prop_assert_eq!(rules.apply(once), once);
        }
    }

    #[test]
    fn lexicon_round_trips_through_file_format() {
        let (set, rules, lex) = toy_parts();
        let text = lex.to_file_string(&set);
        let reparsed = Lexicon::parse(&text, &set, &rules).unwrap();
        assert_eq!(reparsed, lex);
        let plain = Lexicon::parse(&text, &set, &MergeRules::default()).unwrap();
        assert_eq!(plain, lex);
    }
}
