use crate::error::{Error, Result};
use crate::store::{EntityId, RelationId, Slot, Statement};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Token {
    Entity(EntityId),
    Relation(RelationId),
    Mask,
    Pad,
}

/// A flattened statement `[h, r, t, qr1, qe1, …, pad…]` with one entity
/// replaced by the mask token.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    tokens: Vec<Token>,
    mask_index: usize,
}

impl TokenSequence {
    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn mask_index(&self) -> usize {
        self.mask_index
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of non-pad tokens.
    pub fn content_len(&self) -> usize {
        self.tokens.iter().take_while(|t| **t != Token::Pad).count()
    }
}

/// Position of the masked entity once flattened.
pub fn mask_position(slot: Slot) -> usize {
    match slot {
        Slot::Head => 0,
        Slot::Tail => 2,
        Slot::QualifierEntity(i) => 4 + 2 * i,
    }
}

/// Flattens `statement` to length `max_len`, masking `slot`.
pub fn flatten(statement: &Statement, slot: Slot, max_len: usize) -> Result<TokenSequence> {
    let len = statement.token_len();
    if len > max_len {
        return Err(Error::SequenceTooLong {
            statement: statement.to_string(),
            len,
            max: max_len,
        });
    }
    if let Slot::QualifierEntity(i) = slot {
        if i >= statement.n_qualifiers() {
            return Err(Error::Config(format!(
                "qualifier slot {i} on a statement with {} qualifiers",
                statement.n_qualifiers()
            )));
        }
    }
    let mut tokens = Vec::with_capacity(max_len);
    tokens.push(Token::Entity(statement.head));
    tokens.push(Token::Relation(statement.relation));
    tokens.push(Token::Entity(statement.tail));
    for q in &statement.qualifiers {
        tokens.push(Token::Relation(q.relation));
        tokens.push(Token::Entity(q.entity));
    }
    let mask_index = mask_position(slot);
    tokens[mask_index] = Token::Mask;
    tokens.resize(max_len, Token::Pad);
    Ok(TokenSequence { tokens, mask_index })
}
