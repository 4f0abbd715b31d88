//! Numeric flag values with symbolic multiples of π: `pi/32`, `2pi`, `0.5*pi`.

use std::f64::consts::PI;

/// Parses a plain float or `[coef][*]pi[/denominator]`.
pub fn parse_real(text: &str) -> Result<f64, String> {
    let s: String = text.chars().filter(|c| !c.is_whitespace()).collect();
    let lower = s.to_ascii_lowercase();
    let Some(idx) = lower.find("pi") else {
        return lower
            .parse::<f64>()
            .map_err(|e| format!("invalid number '{text}': {e}"));
    };
    let coef = lower[..idx].trim_end_matches('*');
    let rest = &lower[idx + 2..];
    let coef = match coef {
        "" => 1.0,
        "-" => -1.0,
        c => c
            .parse::<f64>()
            .map_err(|e| format!("invalid coefficient in '{text}': {e}"))?,
    };
    let den = match rest {
        "" => 1.0,
        r => {
            let d = r
                .strip_prefix('/')
                .ok_or_else(|| format!("unexpected '{r}' after pi in '{text}'"))?;
            d.parse::<f64>()
                .map_err(|e| format!("invalid denominator in '{text}': {e}"))?
        }
    };
    if den == 0.0 {
        return Err(format!("zero denominator in '{text}'"));
    }
    // π/den rather than (1/den)·π keeps ε = π/k bit-identical to BOX_SIDE / k
    Ok(coef * PI / den)
}

/// `400x400` or a single `400`.
pub fn parse_grid(text: &str) -> Result<(usize, usize), String> {
    let lower = text.to_ascii_lowercase();
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|e| format!("invalid grid '{text}': {e}"))
    };
    match lower.split_once('x') {
        Some((a, b)) => Ok((parse(a)?, parse(b)?)),
        None => {
            let n = parse(&lower)?;
            Ok((n, n))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbolic_values() {
        assert_eq!(parse_real("pi/32").unwrap(), PI / 32.0);
        assert_eq!(parse_real("2pi").unwrap(), 2.0 * PI);
        assert_eq!(parse_real("pi").unwrap(), PI);
        assert_eq!(parse_real("0.5*pi").unwrap(), 0.5 * PI);
        assert_eq!(parse_real("3pi/4").unwrap(), 3.0 * PI / 4.0);
        assert_eq!(parse_real("1.25").unwrap(), 1.25);
        assert_eq!(parse_real("-pi").unwrap(), -PI);
        assert!(parse_real("pi/0").is_err());
        assert!(parse_real("pix").is_err());
        assert!(parse_real("abc").is_err());
    }

    #[test]
    fn epsilon_divides_box_exactly() {
        let eps = parse_real("pi/32").unwrap();
        assert_eq!(PI / eps, 32.0);
    }

    #[test]
    fn grids() {
        assert_eq!(parse_grid("400x400").unwrap(), (400, 400));
        assert_eq!(parse_grid("200").unwrap(), (200, 200));
        assert_eq!(parse_grid("10X20").unwrap(), (10, 20));
        assert!(parse_grid("ax3").is_err());
    }
}
