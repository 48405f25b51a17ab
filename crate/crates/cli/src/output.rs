use serde::Serialize;

pub fn print_json<T: Serialize>(value: &T) {
    let bytes = attestrep::canonical::to_canonical_vec(value).expect("output serializes");
    println!("{}", String::from_utf8(bytes).expect("canonical JSON is UTF-8"));
}

/// Two aligned columns.
pub fn print_pairs(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}
