//! Fixed prompt vocabulary and the unique-identifier prompt template.
//!
//! Layout of the id space:
//!
//! | ids        | tokens                                   |
//! |------------|------------------------------------------|
//! | 0..4       | `<pad>`, `a`, `view`, `of`                |
//! | 4..18      | class nouns, one per [`ObjectId`]         |
//! | 18..50     | view words, one per [`ViewId`]            |
//! | 50..114    | reserved rare identifiers `uid00..uid63`  |

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::scene::{ObjectId, ViewId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Token(pub u32);

pub const PAD: Token = Token(0);
pub const A: Token = Token(1);
pub const VIEW: Token = Token(2);
pub const OF: Token = Token(3);

const CLASS_BASE: u32 = 4;
const VIEW_WORD_BASE: u32 = CLASS_BASE + ObjectId::ALL.len() as u32;
const UID_BASE: u32 = VIEW_WORD_BASE + ViewId::COUNT as u32;
pub const UID_POOL: u32 = 64;
pub const VOCAB_SIZE: usize = (UID_BASE + UID_POOL) as usize;
/// Longest prompt the template produces.
pub const MAX_PROMPT_LEN: usize = 6;

impl Token {
    pub fn class(object: ObjectId) -> Token {
        Token(CLASS_BASE + object.index() as u32)
    }

    pub fn view_word(view: ViewId) -> Token {
        Token(VIEW_WORD_BASE + view.index() as u32)
    }

    /// The `k`-th reserved identifier.
    pub fn uid(k: u32) -> Result<Token> {
        if k >= UID_POOL {
            return Err(Error::Token(format!("uid index {k} outside reserved pool of {UID_POOL}")));
        }
        Ok(Token(UID_BASE + k))
    }

    pub fn is_uid(self) -> bool {
        (UID_BASE..UID_BASE + UID_POOL).contains(&self.0)
    }

    pub fn as_class(self) -> Option<ObjectId> {
        (CLASS_BASE..VIEW_WORD_BASE)
            .contains(&self.0)
            .then(|| ObjectId::ALL[(self.0 - CLASS_BASE) as usize])
    }

    pub fn as_view_word(self) -> Option<ViewId> {
        (VIEW_WORD_BASE..UID_BASE)
            .contains(&self.0)
            .then(|| ViewId::from_index((self.0 - VIEW_WORD_BASE) as usize).expect("in range"))
    }

    pub fn text(self) -> String {
        match self {
            PAD => "<pad>".into(),
            A => "a".into(),
            VIEW => "view".into(),
            OF => "of".into(),
            t if t.is_uid() => format!("uid{:02}", t.0 - UID_BASE),
            t => match (t.as_class(), t.as_view_word()) {
                (Some(o), _) => o.name().into(),
                (_, Some(v)) => v.name(),
                _ => format!("<unk{}>", t.0),
            },
        }
    }

    pub fn parse(word: &str) -> Result<Token> {
        let t = match word {
            "<pad>" => PAD,
            "a" | "A" => A,
            "view" => VIEW,
            "of" => OF,
            w if w.starts_with("uid") => {
                let k: u32 = w[3..].parse().map_err(|_| Error::Token(format!("bad uid `{w}`")))?;
                Token::uid(k)?
            }
            w => {
                if let Some(o) = ObjectId::from_name(w) {
                    Token::class(o)
                } else if let Ok(v) = ViewId::parse(w) {
                    Token::view_word(v)
                } else {
                    return Err(Error::Token(format!("unknown word `{w}`")));
                }
            }
        };
        Ok(t)
    }
}

/// Token-id sequence for one prompt.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptTokens(pub Vec<Token>);

impl PromptTokens {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Ids right-padded with `<pad>` to `len`.
    pub fn padded_ids(&self, len: usize) -> Result<Vec<usize>> {
        if self.0.len() > len {
            return Err(Error::Token(format!("prompt of {} tokens exceeds {len}", self.0.len())));
        }
        let mut ids: Vec<usize> = self.0.iter().map(|t| t.0 as usize).collect();
        ids.resize(len, PAD.0 as usize);
        Ok(ids)
    }

    pub fn all_padding(len: usize) -> PromptTokens {
        PromptTokens(vec![PAD; len])
    }
}

impl fmt::Display for PromptTokens {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let words: Vec<String> = self.0.iter().map(|t| t.text()).collect();
        f.write_str(&words.join(" "))
    }
}

/// Structured form of a unique-identifier prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Prompt {
    pub view_uid: Option<Token>,
    pub object_uid: Token,
    pub class: ObjectId,
}

/// `a <view-uid> view of <object-uid> <class>`, or `a of <object-uid> <class>`
/// when there is no view identifier.
pub fn tokenize_prompt(view_uid: Option<Token>, object_uid: Token, class: Token) -> Result<PromptTokens> {
    let Some(_) = class.as_class() else {
        return Err(Error::Token(format!("`{}` is not a class noun", class.text())));
    };
    for uid in view_uid.iter().chain(std::iter::once(&object_uid)) {
        if !uid.is_uid() {
            return Err(Error::Token(format!(
                "identifier `{}` is not from the reserved pool",
                uid.text()
            )));
        }
    }
    if view_uid == Some(object_uid) {
        return Err(Error::Token("view and object identifiers must differ".into()));
    }
    Ok(PromptTokens(match view_uid {
        Some(v) => vec![A, v, VIEW, OF, object_uid, class],
        None => vec![A, OF, object_uid, class],
    }))
}

pub fn tokenize(prompt: &Prompt) -> Result<PromptTokens> {
    tokenize_prompt(prompt.view_uid, prompt.object_uid, Token::class(prompt.class))
}

pub fn detokenize(tokens: &PromptTokens) -> Result<Prompt> {
    let bad = || Error::Token(format!("`{tokens}` does not follow the prompt template"));
    let (view_uid, object_uid, class) = match tokens.0.as_slice() {
        [a, v, view, of, o, c] if *a == A && *view == VIEW && *of == OF => (Some(*v), *o, *c),
        [a, of, o, c] if *a == A && *of == OF => (None, *o, *c),
        _ => return Err(bad()),
    };
    let class = class.as_class().ok_or_else(bad)?;
    let prompt = Prompt { view_uid, object_uid, class };
    tokenize(&prompt)?;
    Ok(prompt)
}

/// Caption for base-model pretraining: `a <view-word> view of <class>` or `a <class>`.
pub fn describe(view: Option<ViewId>, object: ObjectId) -> PromptTokens {
    PromptTokens(match view {
        Some(v) => vec![A, Token::view_word(v), VIEW, OF, Token::class(object)],
        None => vec![A, Token::class(object)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_token_template() {
        let v1 = Token::uid(1).unwrap();
        let o7 = Token::uid(7).unwrap();
        let p = tokenize_prompt(Some(v1), o7, Token::class(ObjectId::Square)).unwrap();
        assert_eq!(p.0, vec![A, v1, VIEW, OF, o7, Token::class(ObjectId::Square)]);
        assert_eq!(p.to_string(), "a uid01 view of uid07 square");
    }

    #[test]
    fn four_token_template_without_view() {
        let o7 = Token::uid(7).unwrap();
        let p = tokenize_prompt(None, o7, Token::class(ObjectId::Square)).unwrap();
        assert_eq!(p.len(), 4);
    }

    #[test]
    fn round_trip() {
        let prompt = Prompt { view_uid: Some(Token::uid(3).unwrap()), object_uid: Token::uid(9).unwrap(), class: ObjectId::Ring };
        assert_eq!(detokenize(&tokenize(&prompt).unwrap()).unwrap(), prompt);
        let prompt = Prompt { view_uid: None, ..prompt };
        assert_eq!(detokenize(&tokenize(&prompt).unwrap()).unwrap(), prompt);
    }

    #[test]
    fn uid_collisions_rejected() {
        let square = Token::class(ObjectId::Square);
        assert!(matches!(tokenize_prompt(None, square, square), Err(Error::Token(_))));
        let u = Token::uid(0).unwrap();
        assert!(matches!(tokenize_prompt(Some(u), u, square), Err(Error::Token(_))));
        assert!(matches!(tokenize_prompt(None, u, u), Err(Error::Token(_))));
    }

    #[test]
    fn every_word_parses_back() {
        for id in 0..VOCAB_SIZE as u32 {
            let t = Token(id);
            assert_eq!(Token::parse(&t.text()).unwrap(), t);
        }
    }
}
