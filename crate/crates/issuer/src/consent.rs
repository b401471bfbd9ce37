use crate::http::AuthorizeQuery;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

fn hidden(name: &str, value: Option<&str>) -> String {
    match value {
        Some(v) => format!(
            "<input type=\"hidden\" name=\"{name}\" value=\"{}\">\n",
            escape(v)
        ),
        None => String::new(),
    }
}

/// The static approve/deny form.
pub fn consent_page(issuer: &str, q: &AuthorizeQuery) -> String {
    let mut fields = String::new();
    fields.push_str(&hidden("client_id", Some(&q.client_id)));
    fields.push_str(&hidden("redirect_uri", q.redirect_uri.as_deref()));
    fields.push_str(&hidden("state", q.state.as_deref()));
    fields.push_str(&hidden("experiment", Some(&q.experiment)));
    fields.push_str(&hidden("role", Some(&q.role)));
    format!(
        "<!doctype html>\n<html><head><title>Authorize {client}</title></head><body>\n\
         <h1>{issuer}</h1>\n\
         <p><b>{client}</b> requests a token for <b>{exp}/{role}</b>.</p>\n\
         <form method=\"post\" action=\"authorize\">\n{fields}\
         <label>User <input name=\"login\" value=\"{login}\"></label>\n\
         <button name=\"decision\" value=\"approve\">Approve</button>\n\
         <button name=\"decision\" value=\"deny\">Deny</button>\n\
         </form></body></html>\n",
        issuer = escape(issuer),
        client = escape(&q.client_id),
        exp = escape(&q.experiment),
        role = escape(&q.role),
        login = escape(q.login_hint.as_deref().unwrap_or("")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn page_escapes_input() {
        let q = AuthorizeQuery {
            response_type: None,
            client_id: "c<script>".into(),
            redirect_uri: Some("http://x/cb?a=1&b=\"2\"".into()),
            state: None,
            experiment: "dune".into(),
            role: "production".into(),
            login_hint: None,
        };
        let page = consent_page("dune", &q);
        assert!(!page.contains("<script>"));
        assert!(page.contains("&amp;b=&quot;2&quot;"));
        assert!(page.contains("value=\"approve\""));
    }
}
