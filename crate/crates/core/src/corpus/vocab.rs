use std::collections::HashMap;

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;

const PAD_TOKEN: &str = "<pad>";
const UNK_TOKEN: &str = "<unk>";

/// Lowercases, splits on Unicode whitespace and strips leading/trailing
/// non-alphanumeric characters from each piece. Pieces that are pure
/// punctuation vanish.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

/// Token ↔ id map with `0 = <pad>` and `1 = <unk>`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Rebuilds a vocabulary from its id-ordered token list (ids 0 and 1 must
    /// be the reserved tokens).
    pub fn from_tokens(tokens: Vec<String>) -> Option<Self> {
        if tokens.len() < 2 || tokens[0] != PAD_TOKEN || tokens[1] != UNK_TOKEN {
            return None;
        }
        let index: HashMap<String, u32> = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        if index.len() != tokens.len() {
            return None;
        }
        Some(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn get(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        tokenize(text).iter().map(|t| self.id(t)).collect()
    }

    /// Maps ids back to tokens, skipping `<pad>`.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id != PAD_ID)
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }
}

/// Builds a vocabulary ordered by descending frequency, ties alphabetical.
/// Tokens seen fewer than `min_freq` times are left out (and encode as UNK).
pub fn build_vocab<'a>(texts: impl IntoIterator<Item = &'a str>, min_freq: usize) -> Vocab {
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in texts {
        for t in tokenize(text) {
            *counts.entry(t).or_default() += 1;
        }
    }
    let mut entries: Vec<(String, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_freq.max(1) && t != PAD_TOKEN && t != UNK_TOKEN)
        .collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
        .into_iter()
        .chain(entries.into_iter().map(|(t, _)| t))
        .collect();
    Vocab::from_tokens(tokens).expect("reserved tokens in place")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenizer_rule() {
        assert_eq!(tokenize("Love it!! It's  GREAT... (really)"), vec!["love", "it", "it's", "great", "really"]);
        assert!(tokenize(" -- !! ").is_empty());
    }

    #[test]
    fn frequency_then_alphabetical() {
        let v = build_vocab(["a b", "a"], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "a", "b"]);
        assert_eq!(v.id("a"), 2);
        assert_eq!(v.id("b"), 3);
        let v = build_vocab(["b c", "c b", "a"], 1);
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "c", "a"]);
    }

    #[test]
    fn min_freq_maps_rare_to_unk() {
        let v = build_vocab(["a b", "a"], 2);
        assert_eq!(v.id("b"), UNK_ID);
        assert_eq!(v.len(), 3);
    }

    #[test]
    fn from_tokens_requires_reserved_prefix() {
        assert!(Vocab::from_tokens(vec!["a".into(), "b".into()]).is_none());
        assert!(Vocab::from_tokens(vec!["<pad>".into(), "<unk>".into(), "x".into(), "x".into()]).is_none());
    }

    proptest! {
        #[test]
        fn encode_decode_round_trip(words in proptest::collection::vec("[A-Za-z]{1,6}[.,!]?", 1..20)) {
            let text = words.join(" ");
            let vocab = build_vocab([text.as_str()], 1);
            let ids = vocab.encode(&text);
            prop_assert!(ids.iter().all(|&i| i > UNK_ID));
            prop_assert_eq!(vocab.decode(&ids), tokenize(&text));
        }
    }
}
