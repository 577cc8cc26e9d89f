//! Shared byte-level BPE vocabulary with the special-token inventory used
//! by the noiser and decoder.
//!
//! Text is pre-split so that every chunk starts at a space: `"a  b"` becomes
//! `[" a", " ", " b"]`. The leading space byte doubles as the word-boundary
//! marker, so a token is word-initial exactly when its bytes start with
//! `0x20`. Merges never cross chunks.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::corpus::{CorpusCollection, LanguageCode};
use crate::error::{Error, Result};

pub type TokenId = u32;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
pub const EOS: TokenId = 3;
pub const BOS: TokenId = 4;
const FIXED_SPECIALS: usize = 5;

const HEADER: &str = "mdenoise-vocab 1";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SpecialTokens {
    pub pad: TokenId,
    pub unk: TokenId,
    pub mask: TokenId,
    pub eos: TokenId,
    pub bos: TokenId,
    pub lid: BTreeMap<LanguageCode, TokenId>,
    /// Reserved language-id slots not yet bound to a language.
    pub spare: Vec<TokenId>,
}

impl SpecialTokens {
    pub fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < FIXED_SPECIALS + self.lid.len() + self.spare.len()
    }

    pub fn is_lid(&self, id: TokenId) -> bool {
        self.lid.values().any(|&l| l == id)
    }

    fn count(&self) -> usize {
        FIXED_SPECIALS + self.lid.len() + self.spare.len()
    }
}

/// Which raw bytes get a base token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Alphabet {
    /// Only bytes seen in training; other bytes encode to `<unk>`.
    #[default]
    Observed,
    /// All 256 bytes; no input ever maps to `<unk>`.
    Full,
}

#[derive(Clone, Debug)]
pub struct VocabConfig {
    pub target_size: usize,
    pub spare_lids: usize,
    pub alphabet: Alphabet,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            target_size: 1000,
            spare_lids: 2,
            alphabet: Alphabet::Observed,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Vocabulary {
    pub specials: SpecialTokens,
    /// Byte strings of the non-special tokens, indexed by `id - specials.count()`.
    pieces: Vec<Vec<u8>>,
    alphabet: Vec<u8>,
    /// Merge rules in learned order.
    merges: Vec<(TokenId, TokenId)>,
    merge_rank: HashMap<(TokenId, TokenId), (usize, TokenId)>,
    byte_ids: [Option<TokenId>; 256],
}

impl PartialEq for Vocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.specials == other.specials
            && self.pieces == other.pieces
            && self.alphabet == other.alphabet
            && self.merges == other.merges
    }
}

/// Splits at every space after the first byte.
fn chunks(text: &str) -> Vec<&[u8]> {
    if text.is_empty() {
        return Vec::new();
    }
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..bytes.len() {
        if bytes[i] == b' ' {
            out.push(&bytes[start..i]);
            start = i;
        }
    }
    out.push(&bytes[start..]);
    out
}

fn chunk_bytes(text: &str) -> Vec<Vec<u8>> {
    if text.is_empty() {
        return Vec::new();
    }
    let spaced = format!(" {text}");
    chunks(&spaced).into_iter().map(<[u8]>::to_vec).collect()
}

impl Vocabulary {
    fn empty(langs: &[LanguageCode], spare_lids: usize, alphabet: Vec<u8>) -> Self {
        let mut lid = BTreeMap::new();
        let mut next = FIXED_SPECIALS as TokenId;
        for l in langs {
            lid.insert(l.clone(), next);
            next += 1;
        }
        let spare = (0..spare_lids).map(|i| next + i as TokenId).collect();
        let specials = SpecialTokens {
            pad: PAD,
            unk: UNK,
            mask: MASK,
            eos: EOS,
            bos: BOS,
            lid,
            spare,
        };
        let mut v = Vocabulary {
            specials,
            pieces: Vec::new(),
            alphabet: Vec::new(),
            merges: Vec::new(),
            merge_rank: HashMap::new(),
            byte_ids: [None; 256],
        };
        for b in alphabet {
            let id = v.push_piece(vec![b]);
            v.byte_ids[b as usize] = Some(id);
            v.alphabet.push(b);
        }
        v
    }

    fn push_piece(&mut self, bytes: Vec<u8>) -> TokenId {
        let id = (self.specials.count() + self.pieces.len()) as TokenId;
        self.pieces.push(bytes);
        id
    }

    fn find_piece(&self, bytes: &[u8]) -> Option<TokenId> {
        self.pieces
            .iter()
            .position(|p| p == bytes)
            .map(|i| (i + self.specials.count()) as TokenId)
    }

    fn add_merge(&mut self, left: TokenId, right: TokenId) -> TokenId {
        let mut joined = self.piece(left).expect("raw token").to_vec();
        joined.extend_from_slice(self.piece(right).expect("raw token"));
        let id = match self.find_piece(&joined) {
            Some(id) => id,
            None => self.push_piece(joined),
        };
        self.merge_rank
            .insert((left, right), (self.merges.len(), id));
        self.merges.push((left, right));
        id
    }

    pub fn size(&self) -> usize {
        self.specials.count() + self.pieces.len()
    }

    pub fn merges(&self) -> &[(TokenId, TokenId)] {
        &self.merges
    }

    /// Bytes of a non-special token.
    pub fn piece(&self, id: TokenId) -> Option<&[u8]> {
        let idx = (id as usize).checked_sub(self.specials.count())?;
        self.pieces.get(idx).map(Vec::as_slice)
    }

    pub fn lid(&self, lang: &LanguageCode) -> Result<TokenId> {
        self.specials
            .lid
            .get(lang)
            .copied()
            .ok_or_else(|| Error::UnknownLanguage(lang.to_string()))
    }

    /// Binds a spare language-id slot to `lang`. Ids of existing tokens are unchanged.
    pub fn bind_language(&self, lang: LanguageCode) -> Result<Vocabulary> {
        if self.specials.lid.contains_key(&lang) {
            return Ok(self.clone());
        }
        let mut v = self.clone();
        if v.specials.spare.is_empty() {
            return Err(Error::Config(format!(
                "no spare language-id slot left for {lang}"
            )));
        }
        let slot = v.specials.spare.remove(0);
        v.specials.lid.insert(lang, slot);
        Ok(v)
    }

    /// Whether the token starts a new word.
    pub fn is_word_start(&self, id: TokenId) -> bool {
        self.piece(id).is_some_and(|p| p.first() == Some(&b' '))
    }

    pub fn encode(&self, text: &str) -> Vec<TokenId> {
        let mut out = Vec::new();
        for chunk in chunk_bytes(text) {
            let mut seq: Vec<TokenId> = chunk
                .iter()
                .map(|&b| self.byte_ids[b as usize].unwrap_or(self.specials.unk))
                .collect();
            self.apply_merges(&mut seq);
            out.extend(seq);
        }
        out
    }

    fn apply_merges(&self, seq: &mut Vec<TokenId>) {
        loop {
            let best = seq
                .windows(2)
                .filter_map(|w| {
                    self.merge_rank
                        .get(&(w[0], w[1]))
                        .map(|&(r, id)| (r, w[0], w[1], id))
                })
                .min_by_key(|&(r, ..)| r);
            let Some((_, left, right, merged)) = best else {
                return;
            };
            let mut out = Vec::with_capacity(seq.len());
            let mut i = 0;
            while i < seq.len() {
                if i + 1 < seq.len() && seq[i] == left && seq[i + 1] == right {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(seq[i]);
                    i += 1;
                }
            }
            *seq = out;
        }
    }

    /// Visible rendering of a special token, `None` for raw pieces.
    pub fn special_name(&self, id: TokenId) -> Option<String> {
        let s = &self.specials;
        if id == s.pad {
            return Some("<pad>".into());
        }
        if id == s.unk {
            return Some("<unk>".into());
        }
        if id == s.mask {
            return Some("<mask>".into());
        }
        if id == s.eos {
            return Some("</S>".into());
        }
        if id == s.bos {
            return Some("<s>".into());
        }
        if let Some((l, _)) = s.lid.iter().find(|(_, &v)| v == id) {
            return Some(format!("[{l}_XX]"));
        }
        if let Some(i) = s.spare.iter().position(|&v| v == id) {
            return Some(format!("<lid_spare_{i}>"));
        }
        None
    }

    /// Renders ids; specials appear as sentinels such as `<mask>`, `</S>` or `[en_XX]`.
    pub fn decode(&self, ids: &[TokenId]) -> Result<String> {
        self.render(ids, true)
    }

    /// Like [`Vocabulary::decode`] but drops special tokens.
    pub fn decode_text(&self, ids: &[TokenId]) -> Result<String> {
        self.render(ids, false)
    }

    fn render(&self, ids: &[TokenId], show_specials: bool) -> Result<String> {
        let mut bytes = Vec::new();
        for &id in ids {
            if id as usize >= self.size() {
                return Err(Error::TokenOutOfRange {
                    id,
                    size: self.size(),
                });
            }
            match self.piece(id) {
                Some(p) => bytes.extend_from_slice(p),
                None if show_specials => {
                    bytes.extend_from_slice(self.special_name(id).unwrap_or_default().as_bytes())
                }
                None => {}
            }
        }
        if bytes.first() == Some(&b' ') {
            bytes.remove(0);
        }
        Ok(String::from_utf8_lossy(&bytes).into_owned())
    }

    /// Human-readable form of a single token (space shown as `▁`).
    pub fn token_str(&self, id: TokenId) -> String {
        match self.piece(id) {
            Some(p) => String::from_utf8_lossy(p).replace(' ', "\u{2581}"),
            None => self.special_name(id).unwrap_or_else(|| format!("<{id}>")),
        }
    }

    pub fn to_text(&self) -> String {
        let s = &self.specials;
        let lids: Vec<String> = s.lid.iter().map(|(l, id)| format!("{l}:{id}")).collect();
        let spare: Vec<String> = s.spare.iter().map(u32::to_string).collect();
        let alphabet: Vec<String> = self.alphabet.iter().map(|b| format!("{b:02x}")).collect();
        let mut out = format!(
            "{HEADER}\nsize={} pad={} unk={} mask={} eos={} bos={} lid={} spare={} alphabet={}\n",
            self.size(),
            s.pad,
            s.unk,
            s.mask,
            s.eos,
            s.bos,
            lids.join(","),
            spare.join(","),
            alphabet.join(",")
        );
        for &(l, r) in &self.merges {
            let _ = writeln!(
                out,
                "{} {}",
                hex(self.piece(l).expect("raw")),
                hex(self.piece(r).expect("raw"))
            );
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocabulary::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |d: &str| Error::format("vocabulary file", d.to_string());
        let mut lines = text.lines();
        if lines.next() != Some(HEADER) {
            return Err(bad("missing header"));
        }
        let fields: HashMap<&str, &str> = lines
            .next()
            .ok_or_else(|| bad("missing size line"))?
            .split(' ')
            .filter_map(|kv| kv.split_once('='))
            .collect();
        let get = |k: &str| {
            fields
                .get(k)
                .copied()
                .ok_or_else(|| bad(&format!("missing {k}")))
        };
        let num =
            |k: &str| -> Result<u32> { get(k)?.parse().map_err(|_| bad(&format!("bad {k}"))) };
        if (
            num("pad")?,
            num("unk")?,
            num("mask")?,
            num("eos")?,
            num("bos")?,
        ) != (PAD, UNK, MASK, EOS, BOS)
        {
            return Err(bad("unexpected fixed special ids"));
        }
        let mut lids: Vec<(LanguageCode, TokenId)> = Vec::new();
        for item in get("lid")?.split(',').filter(|s| !s.is_empty()) {
            let (l, id) = item.split_once(':').ok_or_else(|| bad("bad lid entry"))?;
            lids.push((
                LanguageCode::new(l)?,
                id.parse().map_err(|_| bad("bad lid id"))?,
            ));
        }
        let spare: Vec<TokenId> = get("spare")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| s.parse().map_err(|_| bad("bad spare id")))
            .collect::<Result<_>>()?;
        let alphabet: Vec<u8> = get("alphabet")?
            .split(',')
            .filter(|s| !s.is_empty())
            .map(|s| u8::from_str_radix(s, 16).map_err(|_| bad("bad alphabet byte")))
            .collect::<Result<_>>()?;

        // Language slots are laid out contiguously after the fixed specials;
        // rebuild with the original slot assignment.
        let n_slots = lids.len() + spare.len();
        let mut v = Vocabulary::empty(&[], n_slots, alphabet);
        let mut slots = v.specials.spare.clone();
        for (l, id) in lids {
            if !slots.contains(&id) {
                return Err(bad("lid id outside the language slots"));
            }
            slots.retain(|&s| s != id);
            v.specials.lid.insert(l, id);
        }
        if slots != spare {
            return Err(bad("spare slots do not match"));
        }
        v.specials.spare = slots;

        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (l, r) = line.split_once(' ').ok_or_else(|| bad("bad merge line"))?;
            let (l, r) = (
                unhex(l).ok_or_else(|| bad("bad hex"))?,
                unhex(r).ok_or_else(|| bad("bad hex"))?,
            );
            let li = v
                .find_piece(&l)
                .ok_or_else(|| bad("merge references unknown piece"))?;
            let ri = v
                .find_piece(&r)
                .ok_or_else(|| bad("merge references unknown piece"))?;
            v.add_merge(li, ri);
        }
        if num("size")? as usize != v.size() {
            return Err(bad("size does not match contents"));
        }
        Ok(v)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) || s.is_empty() {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(&s[i..i + 2], 16).ok())
        .collect()
}

/// Learns merges over every sentence of every language until the
/// vocabulary reaches `cfg.target_size` (or no pair is left). The most
/// frequent adjacent pair is merged first; ties go to the lexicographically
/// smallest `(left bytes, right bytes)`.
pub fn train_vocab(collection: &CorpusCollection, cfg: &VocabConfig) -> Result<Vocabulary> {
    let mut word_freq: BTreeMap<Vec<u8>, u64> = BTreeMap::new();
    for corpus in collection.corpora.values() {
        for s in corpus.sentences() {
            for c in chunk_bytes(s) {
                *word_freq.entry(c).or_default() += 1;
            }
        }
    }
    let alphabet: Vec<u8> = match cfg.alphabet {
        Alphabet::Full => (0..=255).collect(),
        Alphabet::Observed => {
            let mut seen = [false; 256];
            for w in word_freq.keys() {
                for &b in w {
                    seen[b as usize] = true;
                }
            }
            (0..=255u8).filter(|&b| seen[b as usize]).collect()
        }
    };
    let langs: Vec<LanguageCode> = collection.languages().cloned().collect();
    let mut v = Vocabulary::empty(&langs, cfg.spare_lids, alphabet);
    if cfg.target_size < v.size() {
        return Err(Error::VocabTooSmall {
            target: cfg.target_size,
            minimum: v.size(),
        });
    }

    let mut words: Vec<(Vec<TokenId>, u64)> = word_freq
        .into_iter()
        .map(|(w, f)| {
            let ids = w
                .iter()
                .map(|&b| v.byte_ids[b as usize].expect("observed"))
                .collect();
            (ids, f)
        })
        .collect();

    while v.size() < cfg.target_size {
        let mut counts: HashMap<(TokenId, TokenId), u64> = HashMap::new();
        for (ids, f) in &words {
            for w in ids.windows(2) {
                *counts.entry((w[0], w[1])).or_default() += f;
            }
        }
        let best = counts.into_iter().max_by(|(pa, ca), (pb, cb)| {
            ca.cmp(cb).then_with(|| {
                let ka = (v.piece(pa.0), v.piece(pa.1));
                let kb = (v.piece(pb.0), v.piece(pb.1));
                kb.cmp(&ka)
            })
        });
        let Some(((l, r), _)) = best else { break };
        let merged = v.add_merge(l, r);
        for (ids, _) in &mut words {
            if ids.len() < 2 {
                continue;
            }
            let mut out = Vec::with_capacity(ids.len());
            let mut i = 0;
            while i < ids.len() {
                if i + 1 < ids.len() && ids[i] == l && ids[i + 1] == r {
                    out.push(merged);
                    i += 2;
                } else {
                    out.push(ids[i]);
                    i += 1;
                }
            }
            *ids = out;
        }
    }
    Ok(v)
}
