//! Small string helpers shared across modules.

use sha2::{Digest, Sha256};

pub const TRUNCATION_MARKER: &str = "[... truncated]";

/// Cuts `s` to at most `max` characters. When text is removed the result
/// ends with a truncation marker, still within `max`.
pub fn truncate_chars(s: &str, max: usize) -> String {
    if s.chars().count() <= max {
        return s.to_string();
    }
    let marker = format!("\n{TRUNCATION_MARKER}");
    let marker_len = marker.chars().count();
    if max <= marker_len {
        return s.chars().take(max).collect();
    }
    let mut out: String = s.chars().take(max - marker_len).collect();
    out.push_str(&marker);
    out
}

/// Byte-budget variant of [`truncate_chars`], cutting on a char boundary.
pub fn truncate_bytes(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let marker = format!("\n{TRUNCATION_MARKER}");
    let room = max.saturating_sub(marker.len());
    let mut end = room.min(s.len());
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    let mut out = s[..end].to_string();
    if max >= marker.len() {
        out.push_str(&marker);
    }
    out
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}
