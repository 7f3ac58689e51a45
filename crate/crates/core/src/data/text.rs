const NUM: &str = "NUM";

/// Lowercases, replaces each run of digits with `NUM`, drops every character
/// that is neither alphanumeric nor whitespace, and splits on whitespace.
///
/// An existing uppercase `NUM` is kept as is, so preprocessing is idempotent.
pub fn preprocess(raw: &str) -> Vec<String> {
    let mut lowered = String::with_capacity(raw.len());
    let mut rest = raw;
    while let Some(pos) = rest.find(NUM) {
        lowered.extend(rest[..pos].chars().flat_map(char::to_lowercase));
        lowered.push_str(NUM);
        rest = &rest[pos + NUM.len()..];
    }
    lowered.extend(rest.chars().flat_map(char::to_lowercase));

    let mut cleaned = String::with_capacity(lowered.len());
    let mut in_digits = false;
    for ch in lowered.chars() {
        if ch.is_ascii_digit() {
            if !in_digits {
                cleaned.push_str(NUM);
            }
            in_digits = true;
            continue;
        }
        in_digits = false;
        if ch.is_alphanumeric() || ch.is_whitespace() {
            cleaned.push(ch);
        }
    }
    cleaned.split_whitespace().map(str::to_string).collect()
}
