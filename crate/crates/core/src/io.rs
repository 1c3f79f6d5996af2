//! Structured-text persistence with exact floats.
//!
//! Artifacts are JSON documents in which every floating-point value is
//! written as a C99 hex-float string (`"0x1.8p+1"`). Integers and strings are
//! left alone. Reading an artifact back restores every float bit-for-bit.

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Number, Value};

use crate::error::{Error, Result};

/// Format a float as a hex-float literal.
pub fn format_hex(x: f64) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let bits = x.to_bits();
    let sign = if bits >> 63 == 1 { "-" } else { "" };
    let exp_bits = ((bits >> 52) & 0x7ff) as i64;
    let mantissa = bits & ((1u64 << 52) - 1);
    if exp_bits == 0 && mantissa == 0 {
        return format!("{sign}0x0p+0");
    }
    let (lead, exp) = if exp_bits == 0 { (0, -1022) } else { (1, exp_bits - 1023) };
    let mut frac = format!("{mantissa:013x}");
    while frac.ends_with('0') {
        frac.pop();
    }
    let exp_sign = if exp >= 0 { "+" } else { "" };
    if frac.is_empty() {
        format!("{sign}0x{lead}p{exp_sign}{exp}")
    } else {
        format!("{sign}0x{lead}.{frac}p{exp_sign}{exp}")
    }
}

fn pow2(mut k: i64) -> f64 {
    let mut out = 1.0;
    while k > 1023 {
        out *= f64::from_bits(2046u64 << 52);
        k -= 1023;
    }
    while k < -1022 {
        out *= f64::from_bits(1u64 << 52);
        k += 1022;
    }
    out * f64::from_bits(((k + 1023) as u64) << 52)
}

/// Parse a hex-float literal. Accepts exactly what [`format_hex`] emits plus
/// any literal whose significand fits in 64 bits.
pub fn parse_hex(s: &str) -> Option<f64> {
    match s {
        "nan" => return Some(f64::NAN),
        "inf" => return Some(f64::INFINITY),
        "-inf" => return Some(f64::NEG_INFINITY),
        _ => {}
    }
    let (negative, rest) = match s.strip_prefix('-') {
        Some(r) => (true, r),
        None => (false, s),
    };
    let rest = rest.strip_prefix("0x")?;
    let (significand, exponent) = rest.split_once('p')?;
    let exponent: i64 = exponent.parse().ok()?;
    let (int_part, frac_part) = significand.split_once('.').unwrap_or((significand, ""));
    if int_part.is_empty() || int_part.len() + frac_part.len() > 16 {
        return None;
    }
    let mut mantissa: u64 = 0;
    for c in int_part.chars().chain(frac_part.chars()) {
        mantissa = (mantissa << 4) | c.to_digit(16)? as u64;
    }
    if mantissa >= 1u64 << 53 {
        return None;
    }
    let value = mantissa as f64 * pow2(exponent - 4 * frac_part.len() as i64);
    Some(if negative { -value } else { value })
}

fn encode(value: &mut Value) {
    match value {
        Value::Number(n) if n.is_f64() => {
            let x = n.as_f64().unwrap_or(f64::NAN);
            *value = Value::String(format_hex(x));
        }
        Value::Array(items) => items.iter_mut().for_each(encode),
        Value::Object(map) => map.values_mut().for_each(encode),
        _ => {}
    }
}

fn decode(value: &mut Value) -> Result<()> {
    match value {
        Value::String(s) if s.starts_with("0x") || s.starts_with("-0x") => {
            let x = parse_hex(s).ok_or_else(|| Error::Parse(format!("bad hex float {s:?}")))?;
            let n = Number::from_f64(x)
                .ok_or_else(|| Error::Parse(format!("non-finite value {s:?}")))?;
            *value = Value::Number(n);
        }
        Value::Array(items) => {
            for v in items {
                decode(v)?;
            }
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                decode(v)?;
            }
        }
        _ => {}
    }
    Ok(())
}

/// Serialize to the hex-float JSON form.
pub fn to_text<T: Serialize>(value: &T) -> Result<String> {
    let mut v = serde_json::to_value(value)?;
    encode(&mut v);
    Ok(serde_json::to_string_pretty(&v)?)
}

/// Inverse of [`to_text`].
pub fn from_text<T: DeserializeOwned>(text: &str) -> Result<T> {
    let mut v: Value = serde_json::from_str(text)?;
    decode(&mut v)?;
    Ok(serde_json::from_value(v)?)
}

pub fn save<T: Serialize>(value: &T, path: &std::path::Path) -> Result<()> {
    std::fs::write(path, to_text(value)?)?;
    Ok(())
}

pub fn load<T: DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    from_text(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn known_literals() {
        assert_eq!(format_hex(1.0), "0x1p+0");
        assert_eq!(format_hex(3.0), "0x1.8p+1");
        assert_eq!(format_hex(-0.5), "-0x1p-1");
        assert_eq!(format_hex(0.0), "0x0p+0");
        assert_eq!(parse_hex("0x1.8p+1"), Some(3.0));
        assert_eq!(parse_hex("0x10p-4"), Some(1.0));
        assert_eq!(parse_hex("garbage"), None);
        let tiny = f64::from_bits(1);
        assert_eq!(parse_hex(&format_hex(tiny)), Some(tiny));
        assert_eq!(parse_hex(&format_hex(f64::MAX)), Some(f64::MAX));
    }

    proptest! {
        #[test]
        fn hex_round_trip_is_bit_exact(bits in any::<u64>()) {
            let x = f64::from_bits(bits);
            prop_assume!(x.is_finite());
            let back = parse_hex(&format_hex(x)).unwrap();
            prop_assert_eq!(back.to_bits(), x.to_bits());
        }
    }
}
