//! Minimal XML plumbing shared by every document the platform persists.
//!
//! Writing is done by hand so that attribute order and indentation are fixed
//! and the output is byte-stable. Reading goes through `quick-xml` into a
//! small owned element tree that the typed parsers walk.

use std::fmt::Write as _;
use std::str::FromStr;

use quick_xml::events::Event;
use quick_xml::{Reader, XmlVersion};

#[derive(Debug, thiserror::Error)]
pub enum XmlError {
    #[error("malformed xml: {0}")]
    Syntax(String),
    #[error("expected element <{expected}>, found <{found}>")]
    UnexpectedElement { expected: String, found: String },
    #[error("element <{element}> is missing attribute `{attr}`")]
    MissingAttribute { element: String, attr: String },
    #[error("element <{element}> attribute `{attr}` has invalid value {value:?}")]
    InvalidAttribute {
        element: String,
        attr: String,
        value: String,
    },
    #[error("element <{parent}> is missing child <{child}>")]
    MissingChild { parent: String, child: String },
}

pub const DECLARATION: &str = "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";

pub fn escape(raw: &str, out: &mut String) {
    for ch in raw.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\n' => out.push_str("&#10;"),
            '\r' => out.push_str("&#13;"),
            '\t' => out.push_str("&#9;"),
            c => out.push(c),
        }
    }
}

/// Streaming writer with two-space indentation. Every document starts with
/// the XML declaration; attribute values and text are escaped.
pub struct XmlWriter {
    buf: String,
    depth: usize,
}

impl XmlWriter {
    pub fn new() -> Self {
        Self {
            buf: DECLARATION.to_string(),
            depth: 0,
        }
    }

    fn start_tag(&mut self, name: &str, attrs: &[(&str, String)]) {
        for _ in 0..self.depth {
            self.buf.push_str("  ");
        }
        self.buf.push('<');
        self.buf.push_str(name);
        for (key, value) in attrs {
            let _ = write!(self.buf, " {key}=\"");
            escape(value, &mut self.buf);
            self.buf.push('"');
        }
    }

    pub fn open(&mut self, name: &str, attrs: &[(&str, String)]) {
        self.start_tag(name, attrs);
        self.buf.push_str(">\n");
        self.depth += 1;
    }

    pub fn empty(&mut self, name: &str, attrs: &[(&str, String)]) {
        self.start_tag(name, attrs);
        self.buf.push_str("/>\n");
    }

    pub fn text(&mut self, name: &str, attrs: &[(&str, String)], text: &str) {
        self.start_tag(name, attrs);
        self.buf.push('>');
        escape(text, &mut self.buf);
        let _ = writeln!(self.buf, "</{name}>");
    }

    pub fn close(&mut self, name: &str) {
        self.depth -= 1;
        for _ in 0..self.depth {
            self.buf.push_str("  ");
        }
        let _ = writeln!(self.buf, "</{name}>");
    }

    pub fn finish(self) -> String {
        debug_assert_eq!(self.depth, 0, "unbalanced xml writer");
        self.buf
    }
}

impl Default for XmlWriter {
    fn default() -> Self {
        Self::new()
    }
}

/// Owned element tree produced by [`parse`].
#[derive(Debug, Clone, PartialEq)]
pub struct Element {
    pub name: String,
    pub attrs: Vec<(String, String)>,
    pub children: Vec<Element>,
    pub text: String,
}

impl Element {
    pub fn expect_name(&self, name: &str) -> Result<(), XmlError> {
        if self.name == name {
            Ok(())
        } else {
            Err(XmlError::UnexpectedElement {
                expected: name.to_string(),
                found: self.name.clone(),
            })
        }
    }

    pub fn attr_opt(&self, key: &str) -> Option<&str> {
        self.attrs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn attr(&self, key: &str) -> Result<&str, XmlError> {
        self.attr_opt(key)
            .ok_or_else(|| XmlError::MissingAttribute {
                element: self.name.clone(),
                attr: key.to_string(),
            })
    }

    pub fn parse_attr<T: FromStr>(&self, key: &str) -> Result<T, XmlError> {
        let raw = self.attr(key)?;
        raw.parse().map_err(|_| self.invalid(key, raw))
    }

    pub fn parse_attr_opt<T: FromStr>(&self, key: &str) -> Result<Option<T>, XmlError> {
        match self.attr_opt(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| self.invalid(key, raw)),
        }
    }

    pub fn invalid(&self, key: &str, value: &str) -> XmlError {
        XmlError::InvalidAttribute {
            element: self.name.clone(),
            attr: key.to_string(),
            value: value.to_string(),
        }
    }

    pub fn child(&self, name: &str) -> Result<&Element, XmlError> {
        self.children
            .iter()
            .find(|c| c.name == name)
            .ok_or_else(|| XmlError::MissingChild {
                parent: self.name.clone(),
                child: name.to_string(),
            })
    }

    pub fn children_named<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a Element> + 'a {
        self.children.iter().filter(move |c| c.name == name)
    }
}

fn resolve_entity(name: &str) -> Option<char> {
    match name {
        "lt" => Some('<'),
        "gt" => Some('>'),
        "amp" => Some('&'),
        "quot" => Some('"'),
        "apos" => Some('\''),
        _ => None,
    }
}

fn open_element(e: &quick_xml::events::BytesStart<'_>) -> Result<Element, XmlError> {
    let name = e.name().as_ref().to_string();
    let mut attrs = Vec::new();
    for attr in e.attributes() {
        let attr = attr.map_err(|err| XmlError::Syntax(err.to_string()))?;
        let key = attr.key.as_ref().to_string();
        let value = attr
            .normalized_value(XmlVersion::Implicit1_0)
            .map_err(|err| XmlError::Syntax(err.to_string()))?
            .into_owned();
        attrs.push((key, value));
    }
    Ok(Element {
        name,
        attrs,
        children: Vec::new(),
        text: String::new(),
    })
}

/// Parses a document and returns its root element.
pub fn parse(input: &str) -> Result<Element, XmlError> {
    let mut reader = Reader::from_str(input);
    let mut stack: Vec<Element> = Vec::new();
    let mut root: Option<Element> = None;

    loop {
        let event = reader
            .read_event()
            .map_err(|err| XmlError::Syntax(err.to_string()))?;
        match event {
            Event::Start(e) => stack.push(open_element(&e)?),
            Event::Empty(e) => {
                let el = open_element(&e)?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(XmlError::Syntax("multiple root elements".into())),
                }
            }
            Event::End(_) => {
                let el = stack
                    .pop()
                    .ok_or_else(|| XmlError::Syntax("unbalanced end tag".into()))?;
                match stack.last_mut() {
                    Some(parent) => parent.children.push(el),
                    None if root.is_none() => root = Some(el),
                    None => return Err(XmlError::Syntax("multiple root elements".into())),
                }
            }
            Event::Text(t) => {
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&t.xml10_content());
                }
            }
            Event::CData(c) => {
                if let Some(top) = stack.last_mut() {
                    top.text.push_str(&c.into_inner());
                }
            }
            Event::GeneralRef(r) => {
                let ch = if r.is_char_ref() {
                    r.resolve_char_ref()
                        .map_err(|err| XmlError::Syntax(err.to_string()))?
                } else {
                    resolve_entity(&r.xml10_content())
                };
                let ch = ch.ok_or_else(|| {
                    XmlError::Syntax(format!("unknown entity &{};", r.xml10_content()))
                })?;
                if let Some(top) = stack.last_mut() {
                    top.text.push(ch);
                }
            }
            Event::Eof => break,
            Event::Decl(_) | Event::Comment(_) | Event::PI(_) | Event::DocType(_) => {}
        }
    }
    if !stack.is_empty() {
        return Err(XmlError::Syntax("unexpected end of document".into()));
    }
    root.ok_or_else(|| XmlError::Syntax("empty document".into()))
}

/// Shortest decimal representation that round-trips exactly.
pub fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_survive_a_round_trip() {
        let mut w = XmlWriter::new();
        w.open("root", &[("name", "a<b & \"c\"\n\td".to_string())]);
        w.text("body", &[], "x < y && z > w\nline");
        w.close("root");
        let doc = w.finish();
        let root = parse(&doc).unwrap();
        assert_eq!(root.attr("name").unwrap(), "a<b & \"c\"\n\td");
        assert_eq!(root.child("body").unwrap().text, "x < y && z > w\nline");
    }

    #[test]
    fn rejects_truncated_documents() {
        assert!(parse("<a><b/>").is_err());
        assert!(parse("").is_err());
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.0, 0.1, 1.0 / 3.0, 1e-300, 63.0, 123456.789] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
    }
}
