use std::collections::HashSet;
use std::path::Path;

use url::Url;

use crate::{Error, Result};

/// Public suffixes with two labels; the registered domain under these keeps
/// three labels.
const TWO_LEVEL_SUFFIXES: [&str; 16] = [
    "co.uk", "org.uk", "ac.uk", "gov.uk", "com.au", "net.au", "org.au", "co.nz", "co.jp", "ne.jp",
    "com.br", "com.cn", "co.in", "co.za", "com.mx", "com.tr",
];

fn parse(url: &str) -> Option<Url> {
    let u = Url::parse(url).or_else(|_| Url::parse(&format!("http://{url}"))).ok()?;
    u.host_str()?;
    Some(u)
}

/// Registered domain of a URL or bare host name: the last two labels, or
/// three under a known two-level suffix, with any "www." dropped.
pub fn registered_domain(url: &str) -> Option<String> {
    let u = parse(url.trim())?;
    let host = u.host_str()?.trim_end_matches('.').to_string();
    if u.domain().is_none() {
        return Some(host);
    }
    let labels: Vec<&str> = host.split('.').collect();
    let tail2 = labels[labels.len().saturating_sub(2)..].join(".");
    let keep = if TWO_LEVEL_SUFFIXES.contains(&tail2.as_str()) { 3 } else { 2 };
    Some(labels[labels.len().saturating_sub(keep)..].join("."))
}

/// URL with scheme, fragment and trailing slash removed and host lowercased.
pub fn normalize_url(url: &str) -> Option<String> {
    let u = parse(url.trim())?;
    let mut out = u.host_str()?.trim_start_matches("www.").to_string();
    if let Some(p) = u.port() {
        out.push_str(&format!(":{p}"));
    }
    out.push_str(u.path().trim_end_matches('/'));
    if let Some(q) = u.query() {
        out.push('?');
        out.push_str(q);
    }
    Some(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub enum DomainFilter {
    #[default]
    None,
    /// Keep pages whose registered domain is listed.
    DomainAllowlist(HashSet<String>),
    /// Keep pages whose normalized URL is listed.
    UrlAllowlist(HashSet<String>),
}

fn entries(text: &str) -> impl Iterator<Item = &str> {
    text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'))
}

impl DomainFilter {
    pub fn domains<I: IntoIterator<Item = S>, S: AsRef<str>>(list: I) -> Self {
        DomainFilter::DomainAllowlist(
            list.into_iter().filter_map(|d| registered_domain(d.as_ref())).collect(),
        )
    }

    pub fn urls<I: IntoIterator<Item = S>, S: AsRef<str>>(list: I) -> Self {
        DomainFilter::UrlAllowlist(list.into_iter().filter_map(|u| normalize_url(u.as_ref())).collect())
    }

    /// Reads an allowlist file for `mode` ("none", "domain" or "url").
    pub fn load(mode: &str, path: Option<&Path>) -> Result<Self> {
        let read = || -> Result<String> {
            let path = path.ok_or_else(|| Error::Config(format!("domain filter '{mode}' needs a list file")))?;
            std::fs::read_to_string(path)
                .map_err(|e| Error::Config(format!("cannot read allowlist {}: {e}", path.display())))
        };
        match mode {
            "none" => Ok(DomainFilter::None),
            "domain" => Ok(DomainFilter::domains(entries(&read()?))),
            "url" => Ok(DomainFilter::urls(entries(&read()?))),
            other => Err(Error::Config(format!("unknown domain filter mode '{other}'"))),
        }
    }

    pub fn keeps(&self, url: &str) -> bool {
        match self {
            DomainFilter::None => true,
            DomainFilter::DomainAllowlist(set) => registered_domain(url).is_some_and(|d| set.contains(&d)),
            DomainFilter::UrlAllowlist(set) => normalize_url(url).is_some_and(|u| set.contains(&u)),
        }
    }
}
