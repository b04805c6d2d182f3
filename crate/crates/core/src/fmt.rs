//! Text formatting shared by the CSV and plan writers.

/// Formats `x` with 17 significant digits, enough to round-trip any `f64`.
pub fn sig17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trips_awkward_values() {
        for x in [0.1, 1.0 / 3.0, 5e-324, f64::MAX, -2.5e-17, 0.0, 1.0] {
            let s = sig17(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(sig17(0.1), "1.0000000000000001e-1");
    }
}
