//! Hard negative caption construction, mirroring the two families the
//! choice-task benchmarks use: attribute swapping between two attributed
//! objects, and order perturbations (unigram, trigram, adjective/noun).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::EvalError;

/// Exchange the attributes of the two objects in a caption of the fixture
/// grammar `the A1 O1 and the A2 O2`. Applying the swap twice restores the
/// input. Captions with equal attributes are rejected since the swap would
/// be a no-op.
pub fn make_attribute_swap_negative(caption: &str) -> Result<String, EvalError> {
    let tokens: Vec<&str> = caption.split_whitespace().collect();
    if tokens.len() != 7 {
        return Err(EvalError::UnparseableCaption(format!(
            "expected `the A1 O1 and the A2 O2` (7 words), got {} words",
            tokens.len()
        )));
    }
    if !tokens[0].eq_ignore_ascii_case("the")
        || !tokens[3].eq_ignore_ascii_case("and")
        || !tokens[4].eq_ignore_ascii_case("the")
    {
        return Err(EvalError::UnparseableCaption(
            "caption does not follow `the A1 O1 and the A2 O2`".into(),
        ));
    }
    let (a1, o1, a2, o2) = (tokens[1], tokens[2], tokens[5], tokens[6]);
    if a1.eq_ignore_ascii_case(a2) {
        return Err(EvalError::UnparseableCaption(format!(
            "attributes `{a1}` and `{a2}` are equal; the swap would change nothing"
        )));
    }
    Ok(format!(
        "{} {a2} {o1} {} {} {a1} {o2}",
        tokens[0], tokens[3], tokens[4]
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OrderNegativeMode {
    UnigramShuffle,
    TrigramShuffle,
    AdjNounSwap,
}

/// Fixture part-of-speech lexicon for the adjective/noun mode. Desk-scale
/// test sets are built from controlled vocabulary, so a word list stands in
/// for a tagger.
#[derive(Debug, Clone, Default)]
pub struct PosLexicon {
    pub adjectives: Vec<String>,
    pub nouns: Vec<String>,
}

impl PosLexicon {
    pub fn tags(&self, token: &str) -> bool {
        self.adjectives.iter().any(|a| a.eq_ignore_ascii_case(token))
            || self.nouns.iter().any(|n| n.eq_ignore_ascii_case(token))
    }
}

/// Produce a seed-deterministic order perturbation of the caption that is
/// guaranteed to differ from the input. Unigram and trigram modes permute
/// whole tokens / blocks of three tokens; the adjective/noun mode permutes
/// only words the lexicon tags. The token multiset is always preserved.
pub fn make_order_negatives(
    caption: &str,
    mode: OrderNegativeMode,
    seed: u64,
    lexicon: &PosLexicon,
) -> Result<String, EvalError> {
    let tokens: Vec<&str> = caption.split_whitespace().collect();
    if tokens.len() < 2 {
        return Err(EvalError::TooShort(format!(
            "need at least 2 tokens, got {}",
            tokens.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        OrderNegativeMode::UnigramShuffle => {
            shuffle_until_different(tokens.clone(), &mut rng).map(|t| t.join(" "))
        }
        OrderNegativeMode::TrigramShuffle => {
            let blocks: Vec<Vec<&str>> = tokens.chunks(3).map(|c| c.to_vec()).collect();
            if blocks.len() < 2 {
                return Err(EvalError::TooShort(format!(
                    "trigram mode needs at least 2 blocks, got {}",
                    blocks.len()
                )));
            }
            let shuffled = shuffle_until_different(blocks, &mut rng)?;
            Ok(shuffled
                .into_iter()
                .flatten()
                .collect::<Vec<&str>>()
                .join(" "))
        }
        OrderNegativeMode::AdjNounSwap => {
            let positions: Vec<usize> = tokens
                .iter()
                .enumerate()
                .filter(|(_, t)| lexicon.tags(t))
                .map(|(i, _)| i)
                .collect();
            if positions.len() < 2 {
                return Err(EvalError::TooShort(format!(
                    "adjective/noun mode needs at least 2 tagged tokens, got {}",
                    positions.len()
                )));
            }
            let tagged: Vec<&str> = positions.iter().map(|&i| tokens[i]).collect();
            let shuffled = shuffle_until_different(tagged, &mut rng)?;
            let mut out = tokens.clone();
            for (slot, word) in positions.iter().zip(shuffled) {
                out[*slot] = word;
            }
            Ok(out.join(" "))
        }
    }
}

/// Fisher-Yates until the value sequence differs from the input. When every
/// element is identical no differing permutation exists.
fn shuffle_until_different<T: Clone + PartialEq>(
    items: Vec<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<T>, EvalError> {
    if items.iter().all(|v| *v == items[0]) {
        return Err(EvalError::TooShort(
            "all elements are identical; no differing permutation exists".into(),
        ));
    }
    let mut shuffled = items.clone();
    loop {
        shuffled.shuffle(rng);
        if shuffled != items {
            return Ok(shuffled);
        }
    }
}
