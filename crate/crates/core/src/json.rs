//! JSON output with plain decimal numbers.
//!
//! `serde_json` prints some floats in exponent form (`1e-7`). Every JSON
//! document this crate emits goes through [`DecimalFormatter`] instead, which
//! writes floats with `f64`'s `Display` (shortest round-trip digits, never an
//! exponent).

use std::io::{self, Write};

use serde::Serialize;
use serde_json::ser::{CharEscape, CompactFormatter, Formatter, PrettyFormatter};

pub struct DecimalFormatter<F>(F);

macro_rules! delegate {
    ($($name:ident),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
                self.0.$name(w)
            }
        )*
    };
}

macro_rules! delegate_first {
    ($($name:ident),* $(,)?) => {
        $(
            fn $name<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
                self.0.$name(w, first)
            }
        )*
    };
}

impl<F: Formatter> Formatter for DecimalFormatter<F> {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        if value.fract() == 0.0 && value.abs() < 1e15 {
            // keep a trailing ".0" so integral floats stay floats on re-read
            write!(w, "{value:.1}")
        } else {
            write!(w, "{value}")
        }
    }

    fn write_f32<W: ?Sized + Write>(&mut self, w: &mut W, value: f32) -> io::Result<()> {
        self.write_f64(w, value as f64)
    }

    fn write_char_escape<W: ?Sized + Write>(&mut self, w: &mut W, char_escape: CharEscape) -> io::Result<()> {
        self.0.write_char_escape(w, char_escape)
    }

    delegate!(
        begin_array,
        end_array,
        end_array_value,
        begin_object,
        end_object,
        begin_object_value,
        end_object_value
    );
    delegate_first!(begin_array_value, begin_object_key);
}

fn write_with<F: Formatter, T: Serialize + ?Sized>(value: &T, fmt: F) -> serde_json::Result<String> {
    let mut out = Vec::with_capacity(256);
    let mut ser = serde_json::Serializer::with_formatter(&mut out, DecimalFormatter(fmt));
    value.serialize(&mut ser)?;
    // serde_json only emits valid UTF-8
    Ok(String::from_utf8(out).expect("serde_json produced invalid utf-8"))
}

pub fn to_string<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    write_with(value, CompactFormatter)
}

pub fn to_string_pretty<T: Serialize + ?Sized>(value: &T) -> serde_json::Result<String> {
    write_with(value, PrettyFormatter::new())
}
