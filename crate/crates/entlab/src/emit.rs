//! Deterministic text emission: floats at full round-trip precision,
//! stable content hashes, and CSV assembly. Every tabular artifact goes
//! through these helpers so identical inputs yield identical bytes.

use ndarray::Array2;

/// Formats with 17 significant digits, enough to round-trip any `f64`.
/// Non-finite values print as their literal names.
pub fn g17(v: f64) -> String {
    if v.is_nan() {
        return "nan".to_string();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    format!("{v:.16e}")
}

/// FNV-1a over a byte stream; stable across platforms and runs.
#[derive(Debug, Clone, Copy)]
pub struct StableHash(u64);

impl StableHash {
    pub fn new() -> Self {
        StableHash(0xcbf2_9ce4_8422_2325)
    }

    pub fn write_bytes(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_f64(&mut self, v: f64) {
        self.write_bytes(&v.to_bits().to_le_bytes());
    }

    pub fn write_u64(&mut self, v: u64) {
        self.write_bytes(&v.to_le_bytes());
    }

    pub fn write_slice(&mut self, vs: &[f64]) {
        for &v in vs {
            self.write_f64(v);
        }
    }

    pub fn write_array(&mut self, a: &Array2<f64>) {
        self.write_u64(a.nrows() as u64);
        self.write_u64(a.ncols() as u64);
        for &v in a.iter() {
            self.write_f64(v);
        }
    }

    pub fn finish(&self) -> u64 {
        self.0
    }

    pub fn hex(&self) -> String {
        format!("{:016x}", self.0)
    }
}

impl Default for StableHash {
    fn default() -> Self {
        Self::new()
    }
}

/// Joins one CSV record; fields are assumed free of commas and newlines.
pub fn csv_line(fields: &[String]) -> String {
    let mut line = fields.join(",");
    line.push('\n');
    line
}
