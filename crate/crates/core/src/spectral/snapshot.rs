//! Plain-text coefficient snapshots.
//!
//! ```text
//! grid 64 64 6.283185307179586 200 ordering=lex
//! 0 0 0.6283185307179586
//! -1 0 0
//! ...
//! ```

use std::fmt::Write as _;
use std::sync::Arc;

use super::{Basis, SpectralField};
use crate::error::{Error, Result};

pub fn write_snapshot(field: &SpectralField) -> String {
    let basis = field.basis();
    let g = basis.grid();
    let mut out = String::new();
    let _ = writeln!(out, "grid {} {} {} {} ordering=lex", g.nx, g.ny, g.side, basis.len());
    for (m, c) in basis.modes().iter().zip(&field.coeffs) {
        let _ = writeln!(out, "{} {} {}", m.j, m.k, c);
    }
    out
}

/// Parse a snapshot written against a basis with identical grid and `K`.
pub fn read_snapshot(basis: &Arc<Basis>, text: &str) -> Result<SpectralField> {
    let bad = |msg: &str| Error::InvalidArgument(format!("snapshot: {msg}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty file"))?.split_whitespace().collect();
    if header.len() != 6 || header[0] != "grid" || header[5] != "ordering=lex" {
        return Err(bad("malformed header"));
    }
    let g = basis.grid();
    let nx: usize = header[1].parse().map_err(|_| bad("nx"))?;
    let ny: usize = header[2].parse().map_err(|_| bad("ny"))?;
    let side: f64 = header[3].parse().map_err(|_| bad("side"))?;
    let k: usize = header[4].parse().map_err(|_| bad("K"))?;
    if nx != g.nx || ny != g.ny || side != g.side || k != basis.len() {
        return Err(bad("grid or K differs from the target basis"));
    }
    let mut coeffs = Vec::with_capacity(k);
    for (m, line) in basis.modes().iter().zip(lines.by_ref()) {
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 3 {
            return Err(bad("expected `j k coeff`"));
        }
        let j: i32 = parts[0].parse().map_err(|_| bad("j"))?;
        let kk: i32 = parts[1].parse().map_err(|_| bad("k"))?;
        if (j, kk) != (m.j, m.k) {
            return Err(bad("mode order differs"));
        }
        coeffs.push(parts[2].parse().map_err(|_| bad("coefficient"))?);
    }
    if coeffs.len() != k || lines.any(|l| !l.trim().is_empty()) {
        return Err(Error::SizeMismatch { expected: k, got: coeffs.len() });
    }
    SpectralField::from_coeffs(basis, coeffs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::Grid;

    #[test]
    fn round_trip_is_exact() {
        let b = Basis::new(Grid::square(8).unwrap(), 20).unwrap();
        let coeffs: Vec<f64> = (0..20).map(|i| (i as f64 * 0.77).sin() / 3.0).collect();
        let f = SpectralField::from_coeffs(&b, coeffs).unwrap();
        let text = write_snapshot(&f);
        assert!(text.starts_with("grid 8 8 6.283185307179586 20 ordering=lex\n0 0 0\n"));
        assert_eq!(read_snapshot(&b, &text).unwrap(), f);
        let other = Basis::new(Grid::square(8).unwrap(), 21).unwrap();
        assert!(read_snapshot(&other, &text).is_err());
    }
}
