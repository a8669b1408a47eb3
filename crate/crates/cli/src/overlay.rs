//! `--config` files: `key = value` TOML merged over a bundled preset.

use std::path::Path;

use toml::Table;

type BoxError = Box<dyn std::error::Error + Send + Sync>;

/// Recursively replace entries of `base` with those of `over`.
pub fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Parse `preset`, apply the file at `path` on top and hand the merged text
/// to the config's own validating parser.
pub fn load<T, E>(preset: &str, path: Option<&Path>, parse: impl Fn(&str) -> Result<T, E>) -> Result<T, BoxError>
where
    E: std::error::Error + Send + Sync + 'static,
{
    let Some(path) = path else {
        return Ok(parse(preset)?);
    };
    let mut base: Table = preset.parse()?;
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let over: Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    merge(&mut base, over);
    Ok(parse(&toml::to_string(&base)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_tables_merge_per_key() {
        let mut base: Table = "a = 1\n[t]\nx = 1\ny = 2\n".parse().unwrap();
        merge(&mut base, "b = 3\n[t]\ny = 5\n".parse().unwrap());
        assert_eq!(base.to_string(), "a = 1\nb = 3\n\n[t]\nx = 1\ny = 5\n");
    }
}
