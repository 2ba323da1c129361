//! Deterministic numeric formatting for artifact files.
//!
//! Every CSV/JSON artifact is written with 17 significant digits so that
//! identical runs produce byte-identical files and every f64 round-trips.

use std::io::{self, Write};

/// 17 significant digits, scientific notation.
pub fn f64_repr(x: f64) -> String {
    if x.is_finite() {
        format!("{:.16e}", x)
    } else {
        // Non-finite values only ever appear in report-style fields.
        format!("{}", x)
    }
}

/// Minimal JSON value with order-preserving objects and the 17-digit float
/// policy above. serde_json prints floats with shortest-round-trip digits,
/// which is lossless but not the fixed width the artifact format pins down.
#[derive(Debug, Clone)]
pub enum Json {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Array(Vec<Json>),
    Object(Vec<(String, Json)>),
}

impl Json {
    pub fn write<W: Write>(&self, w: &mut W) -> io::Result<()> {
        self.write_indented(w, 0)?;
        writeln!(w)
    }

    fn write_indented<W: Write>(&self, w: &mut W, depth: usize) -> io::Result<()> {
        match self {
            Json::Null => write!(w, "null"),
            Json::Bool(b) => write!(w, "{}", b),
            Json::Int(i) => write!(w, "{}", i),
            Json::Float(x) => {
                if x.is_finite() {
                    write!(w, "{}", f64_repr(*x))
                } else {
                    write!(w, "null")
                }
            }
            Json::Str(s) => write_escaped(w, s),
            Json::Array(items) => {
                if items.is_empty() {
                    return write!(w, "[]");
                }
                writeln!(w, "[")?;
                for (i, item) in items.iter().enumerate() {
                    indent(w, depth + 1)?;
                    item.write_indented(w, depth + 1)?;
                    if i + 1 < items.len() {
                        write!(w, ",")?;
                    }
                    writeln!(w)?;
                }
                indent(w, depth)?;
                write!(w, "]")
            }
            Json::Object(fields) => {
                if fields.is_empty() {
                    return write!(w, "{{}}");
                }
                writeln!(w, "{{")?;
                for (i, (key, value)) in fields.iter().enumerate() {
                    indent(w, depth + 1)?;
                    write_escaped(w, key)?;
                    write!(w, ": ")?;
                    value.write_indented(w, depth + 1)?;
                    if i + 1 < fields.len() {
                        write!(w, ",")?;
                    }
                    writeln!(w)?;
                }
                indent(w, depth)?;
                write!(w, "}}")
            }
        }
    }

    pub fn render(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("json output is utf-8")
    }
}

fn indent<W: Write>(w: &mut W, depth: usize) -> io::Result<()> {
    for _ in 0..depth {
        write!(w, "  ")?;
    }
    Ok(())
}

fn write_escaped<W: Write>(w: &mut W, s: &str) -> io::Result<()> {
    write!(w, "\"")?;
    for ch in s.chars() {
        match ch {
            '"' => write!(w, "\\\"")?,
            '\\' => write!(w, "\\\\")?,
            '\n' => write!(w, "\\n")?,
            '\r' => write!(w, "\\r")?,
            '\t' => write!(w, "\\t")?,
            c if (c as u32) < 0x20 => write!(w, "\\u{:04x}", c as u32)?,
            c => write!(w, "{}", c)?,
        }
    }
    write!(w, "\"")
}
