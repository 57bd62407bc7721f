//! Touchstone v1.0 two-port files and CSV export.
//!
//! Grammar accepted:
//!
//! ```text
//! ! comment
//! # <HZ|KHZ|MHZ|GHZ> S <RI|MA|DB> R <z0>
//! f  S11a S11b  S21a S21b  S12a S12b  S22a S22b
//! ```
//!
//! Option-line tokens are case-insensitive and may appear in any order;
//! missing tokens take the Touchstone defaults (GHZ, MA, 50 Ω). Only the
//! first option line counts. Each data row carries exactly nine numbers.
//! Text after `!` on any line is ignored.

use std::fmt::Write as _;

use num_complex::Complex64;

use super::{DataFormat, FrequencyTrace, TraceError};

/// Header of the CSV export.
pub const CSV_HEADER: &str = "freq_hz,s21_re,s21_im,s21_db";

const VALUES_PER_ROW: usize = 9;

struct OptionLine {
    scale: f64,
    format: DataFormat,
    z0: f64,
}

fn parse_err(line: usize, message: impl Into<String>) -> TraceError {
    TraceError::Parse {
        line,
        message: message.into(),
    }
}

fn parse_option_line(body: &str, line: usize) -> Result<OptionLine, TraceError> {
    let mut opt = OptionLine {
        scale: 1e9,
        format: DataFormat::MA,
        z0: 50.0,
    };
    let mut tokens = body.split_whitespace();
    while let Some(tok) = tokens.next() {
        match tok.to_ascii_uppercase().as_str() {
            "HZ" => opt.scale = 1.0,
            "KHZ" => opt.scale = 1e3,
            "MHZ" => opt.scale = 1e6,
            "GHZ" => opt.scale = 1e9,
            "S" => {}
            p @ ("Y" | "Z" | "H" | "G") => {
                return Err(parse_err(
                    line,
                    format!("unsupported parameter type '{p}', only S is accepted"),
                ));
            }
            "RI" => opt.format = DataFormat::RI,
            "MA" => opt.format = DataFormat::MA,
            "DB" => opt.format = DataFormat::DB,
            "R" => {
                let value = tokens
                    .next()
                    .ok_or_else(|| parse_err(line, "option 'R' needs a reference impedance"))?;
                let z0: f64 = value
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid reference impedance '{value}'")))?;
                if !(z0.is_finite() && z0 > 0.0) {
                    return Err(parse_err(
                        line,
                        format!("reference impedance must be positive, got {value}"),
                    ));
                }
                opt.z0 = z0;
            }
            _ => return Err(parse_err(line, format!("unknown option token '{tok}'"))),
        }
    }
    Ok(opt)
}

fn to_complex(a: f64, b: f64, format: DataFormat) -> Complex64 {
    match format {
        DataFormat::RI => Complex64::new(a, b),
        DataFormat::MA => Complex64::from_polar(a, b.to_radians()),
        DataFormat::DB => Complex64::from_polar(10f64.powf(a / 20.0), b.to_radians()),
    }
}

/// Parse a Touchstone v1.0 `.s2p` file.
pub fn parse_touchstone(bytes: &[u8]) -> Result<FrequencyTrace, TraceError> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        let line = bytes[..e.valid_up_to()].iter().filter(|&&b| b == b'\n').count() + 1;
        parse_err(line, "file is not valid UTF-8")
    })?;

    let mut option: Option<OptionLine> = None;
    let mut freqs = Vec::new();
    let mut s11 = Vec::new();
    let mut s21 = Vec::new();
    let mut last_line = 0;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        last_line = line;
        let body = raw.split('!').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if body.starts_with('[') {
            return Err(parse_err(
                line,
                format!("Touchstone v2 keyword '{body}' is not supported; only v1.0 files are accepted"),
            ));
        }
        if let Some(rest) = body.strip_prefix('#') {
            if option.is_none() {
                option = Some(parse_option_line(rest, line)?);
            }
            continue;
        }
        let opt = option
            .as_ref()
            .ok_or_else(|| parse_err(line, "missing option line before first data row"))?;

        let mut values = [0.0f64; VALUES_PER_ROW];
        let mut count = 0;
        for tok in body.split_whitespace() {
            if count < VALUES_PER_ROW {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| parse_err(line, format!("invalid number '{tok}'")))?;
                if !v.is_finite() {
                    return Err(parse_err(line, format!("non-finite value '{tok}'")));
                }
                values[count] = v;
            }
            count += 1;
        }
        if count != VALUES_PER_ROW {
            return Err(parse_err(
                line,
                format!("expected {VALUES_PER_ROW} values in a two-port data row, found {count}"),
            ));
        }
        let f = values[0] * opt.scale;
        if let Some(&prev) = freqs.last() {
            if f <= prev {
                return Err(parse_err(
                    line,
                    format!("frequency {f} Hz is not greater than the previous {prev} Hz"),
                ));
            }
        }
        freqs.push(f);
        s11.push(to_complex(values[1], values[2], opt.format));
        s21.push(to_complex(values[3], values[4], opt.format));
    }

    let opt = option.ok_or_else(|| parse_err(last_line.max(1), "missing option line"))?;
    if freqs.is_empty() {
        return Err(parse_err(last_line.max(1), "no data rows"));
    }
    let mut trace = FrequencyTrace::new(freqs, s21, Some(s11)).map_err(|e| parse_err(last_line, e.to_string()))?;
    trace.z0 = opt.z0;
    trace.format = opt.format;
    Ok(trace)
}

fn push_pair(out: &mut String, v: Complex64, format: DataFormat) {
    let (a, b) = match format {
        DataFormat::RI => (v.re, v.im),
        DataFormat::MA => (v.norm(), v.arg().to_degrees()),
        DataFormat::DB => {
            // exact zeros have no dB value; the smallest normal magnitude stands in
            let mag = v.norm().max(f64::MIN_POSITIVE);
            (20.0 * mag.log10(), v.arg().to_degrees())
        }
    };
    let _ = write!(out, " {a:.16e} {b:.16e}");
}

/// Serialize a trace as Touchstone v1.0 with frequencies in hertz and 17
/// significant digits.
///
/// The trace only holds `S11` and `S21`; `S12` and `S22` are written as
/// copies of `S21` and `S11` (symmetric reciprocal two-port).
pub fn write_touchstone(trace: &FrequencyTrace, format: DataFormat) -> Vec<u8> {
    let mut out = String::with_capacity(trace.len() * 200 + 256);
    if !trace.source.is_empty() {
        for l in trace.source.lines() {
            let _ = writeln!(out, "! {l}");
        }
    }
    if trace.s11().is_none() {
        out.push_str("! s11 synthesized as zero\n");
    }
    out.push_str("! s12 = s21 and s22 = s11 (symmetric reciprocal two-port)\n");
    let _ = writeln!(out, "# HZ S {} R {}", format.as_str(), trace.z0);
    let zero = Complex64::new(0.0, 0.0);
    for (i, (&f, &s21)) in trace.freqs().iter().zip(trace.s21()).enumerate() {
        let s11 = trace.s11().map_or(zero, |s| s[i]);
        let _ = write!(out, "{f:.16e}");
        push_pair(&mut out, s11, format);
        push_pair(&mut out, s21, format);
        push_pair(&mut out, s21, format);
        push_pair(&mut out, s11, format);
        out.push('\n');
    }
    out.into_bytes()
}

/// CSV export, one row per point, `\n` line endings.
pub fn to_csv(trace: &FrequencyTrace) -> String {
    let mut out = String::with_capacity(trace.len() * 80 + CSV_HEADER.len() + 1);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (&f, s) in trace.freqs().iter().zip(trace.s21()) {
        let db = 20.0 * s.norm().log10();
        let _ = writeln!(out, "{f},{},{},{db}", s.re, s.im);
    }
    out
}
