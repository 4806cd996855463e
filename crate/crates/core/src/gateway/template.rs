//! Prompt templates with `{name}` slots.
//!
//! `{{` and `}}` escape literal braces. Rendering is total: every slot must
//! be bound or rendering fails, so a rendered prompt can never leak an
//! unfilled marker.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Segment {
    Literal(String),
    Slot(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    segments: Vec<Segment>,
}

impl PromptTemplate {
    pub fn parse(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut literal = String::new();
        let mut chars = text.chars().peekable();
        while let Some(c) = chars.next() {
            match c {
                '{' => {
                    if chars.peek() == Some(&'{') {
                        chars.next();
                        literal.push('{');
                        continue;
                    }
                    let mut name = String::new();
                    loop {
                        match chars.next() {
                            Some('}') => break,
                            Some(c) if c.is_ascii_alphanumeric() || c == '_' => name.push(c),
                            Some(c) => {
                                return Err(Error::Template(format!(
                                    "invalid character {c:?} in slot name"
                                )))
                            }
                            None => {
                                return Err(Error::Template("unterminated slot".into()))
                            }
                        }
                    }
                    if name.is_empty() {
                        return Err(Error::Template("empty slot name".into()));
                    }
                    if !literal.is_empty() {
                        segments.push(Segment::Literal(std::mem::take(&mut literal)));
                    }
                    segments.push(Segment::Slot(name));
                }
                '}' => {
                    if chars.peek() == Some(&'}') {
                        chars.next();
                        literal.push('}');
                    } else {
                        return Err(Error::Template("unescaped '}'".into()));
                    }
                }
                c => literal.push(c),
            }
        }
        if !literal.is_empty() {
            segments.push(Segment::Literal(literal));
        }
        Ok(PromptTemplate { segments })
    }

    pub fn slot_names(&self) -> Vec<&str> {
        self.segments
            .iter()
            .filter_map(|s| match s {
                Segment::Slot(n) => Some(n.as_str()),
                Segment::Literal(_) => None,
            })
            .collect()
    }

    /// Substitute every slot; unbound slots are an error.
    pub fn render(&self, slots: &[(&str, &str)]) -> Result<String> {
        let mut out = String::new();
        for seg in &self.segments {
            match seg {
                Segment::Literal(s) => out.push_str(s),
                Segment::Slot(name) => {
                    let Some((_, value)) = slots.iter().find(|(n, _)| n == name) else {
                        return Err(Error::Template(format!("unfilled slot {{{name}}}")));
                    };
                    out.push_str(value);
                }
            }
        }
        Ok(out)
    }
}
