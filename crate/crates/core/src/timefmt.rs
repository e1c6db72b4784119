//! UTC timestamp parsing and formatting shared by all CSV schemas.

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};

/// Parses an ISO-8601 UTC timestamp. Accepts RFC 3339 (`2024-01-01T00:00:00Z`)
/// and the compact filename-safe form `20240101T000000Z`.
pub fn parse_utc(s: &str) -> Option<DateTime<Utc>> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    if let Ok(naive) = NaiveDateTime::parse_from_str(s, "%Y%m%dT%H%M%SZ") {
        return Some(Utc.from_utc_datetime(&naive));
    }
    None
}

/// Formats a timestamp as `YYYY-MM-DDTHH:MM:SSZ`.
pub fn format_utc(t: DateTime<Utc>) -> String {
    t.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let t = parse_utc("2024-03-05T12:34:56Z").unwrap();
        assert_eq!(format_utc(t), "2024-03-05T12:34:56Z");
        let c = parse_utc("20240305T123456Z").unwrap();
        assert_eq!(c, t);
    }

    #[test]
    fn rejects_garbage() {
        assert!(parse_utc("yesterday").is_none());
        assert!(parse_utc("2024-13-01T00:00:00Z").is_none());
    }
}
