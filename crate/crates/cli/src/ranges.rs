//! Parsers for list-or-range flag values such as `0-5`, `0,2,4` or `0.0-0.5`.

use tsvmorph_core::arch::ArchId;

/// `a-b` (inclusive) or a comma list of integers.
pub fn parse_int_list(s: &str) -> Result<Vec<u8>, String> {
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (u8, u8) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part}"));
                }
                out.extend(a..=b);
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

/// `a-b` stepped by `step` (inclusive of both ends), or a comma list.
pub fn parse_float_list(s: &str, step: f64) -> Result<Vec<f64>, String> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(format!("step {step} must be positive"));
    }
    let mut out = Vec::new();
    for part in s.split(',').map(str::trim) {
        match part.split_once('-') {
            Some((a, b)) => {
                let (a, b): (f64, f64) = (num(a)?, num(b)?);
                if a > b {
                    return Err(format!("empty range {part}"));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                // round away accumulated binary noise so 0.1 * 3 prints as 0.3
                out.extend((0..=n).map(|i| ((a + i as f64 * step) * 1e9).round() / 1e9));
            }
            None => out.push(num(part)?),
        }
    }
    Ok(out)
}

pub fn parse_archs(s: &str) -> Result<Vec<ArchId>, String> {
    if s.trim().eq_ignore_ascii_case("all") {
        return Ok(ArchId::ALL.to_vec());
    }
    s.split(',').map(|a| a.trim().parse::<ArchId>().map_err(|e| e.to_string())).collect()
}

fn num<T: std::str::FromStr>(s: &str) -> Result<T, String> {
    s.trim().parse().map_err(|_| format!("not a number: {s:?}"))
}
