use std::time::Duration;

use serde_json::Value;

/// POSTs `body` as JSON and returns the decoded JSON reply. Any transport
/// failure or non-200 status is an error carrying a short description.
pub fn post_json(url: &str, body: &Value, timeout: Duration) -> Result<Value, String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .http_status_as_error(false)
        .build()
        .into();
    let mut response = agent
        .post(url)
        .send_json(body)
        .map_err(|e| format!("{url}: {e}"))?;
    let status = response.status().as_u16();
    if status != 200 {
        return Err(format!("{url}: status {status}"));
    }
    response
        .body_mut()
        .read_json::<Value>()
        .map_err(|e| format!("{url}: bad JSON reply: {e}"))
}

/// Joins a base URL and a route without doubling slashes.
pub fn join(base: &str, route: &str) -> String {
    format!(
        "{}/{}",
        base.trim_end_matches('/'),
        route.trim_start_matches('/')
    )
}
