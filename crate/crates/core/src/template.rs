//! `{{name}}` placeholder substitution for the text assets under `prompts/`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("template placeholder `{{{{{0}}}}}` was not supplied")]
pub struct MissingPlaceholder(pub String);

/// Replace every `{{key}}`; any placeholder left over is an error.
pub fn render(template: &str, values: &[(&str, &str)]) -> Result<String, MissingPlaceholder> {
    let mut out = template.to_string();
    for (k, v) in values {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    if let Some(start) = out.find("{{") {
        if let Some(len) = out[start..].find("}}") {
            return Err(MissingPlaceholder(out[start + 2..start + len].to_string()));
        }
    }
    Ok(out)
}
