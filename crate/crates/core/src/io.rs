//! Plain-text output helpers shared by every writer in the crate.
//!
//! Numbers are printed with the shortest representation that round-trips
//! through `f64`, `.` as decimal separator and `\n` line endings, so identical
//! inputs produce byte-identical files.

use std::fmt::Write as _;

/// Shortest round-trip decimal; falls back to exponent notation outside
/// `[1e-5, 1e15)`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let a = x.abs();
    if x == 0.0 {
        "0".into()
    } else if (1e-5..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

/// Minimal CSV builder; fields are never quoted because no field contains a comma.
#[derive(Debug, Default, Clone)]
pub struct Csv {
    buf: String,
}

impl Csv {
    pub fn with_header<S: AsRef<str>>(cols: &[S]) -> Self {
        let mut c = Self::default();
        c.row_str(cols);
        c
    }

    pub fn row_str<S: AsRef<str>>(&mut self, fields: &[S]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(f.as_ref());
        }
        self.buf.push('\n');
    }

    pub fn row_nums(&mut self, fields: &[f64]) {
        for (i, f) in fields.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{}", fmt_num(*f));
        }
        self.buf.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.buf
    }

    pub fn into_string(self) -> String {
        self.buf
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting_round_trips() {
        for x in [0.1, -0.28125, 1.0 / 3.0, 1.9635e-14, 7.9976e15, 123456.789, 1e-5, -2.5e-7] {
            let s = fmt_num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            assert!(!s.contains(' '));
        }
        assert_eq!(fmt_num(0.5), "0.5");
        assert_eq!(fmt_num(0.0), "0");
        assert_eq!(fmt_num(1.9635e-14), "1.9635e-14");
    }

    #[test]
    fn csv_layout() {
        let mut c = Csv::with_header(&["t", "V"]);
        c.row_nums(&[0.0, -0.25]);
        assert_eq!(c.as_str(), "t,V\n0,-0.25\n");
    }

    proptest::proptest! {
        #[test]
        fn any_finite_number_round_trips(x in proptest::num::f64::NORMAL | proptest::num::f64::SUBNORMAL | proptest::num::f64::ZERO) {
            let s = fmt_num(x);
            proptest::prop_assert_eq!(s.parse::<f64>().unwrap(), x);
            proptest::prop_assert!(!s.contains(','));
        }
    }
}
