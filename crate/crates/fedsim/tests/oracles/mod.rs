//! Reference answers computed without the code under test.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;

// ---- permissions -----------------------------------------------------------

pub const TENANTS: [&str; 2] = ["tacc", "dev"];
pub const OPS: [&str; 3] = ["read", "modify", "exec"];
pub const SYSTEMS: [&str; 3] = ["s1", "s2", "s3"];
pub const PATHS: [&str; 7] = ["/", "/a", "/a/b", "/a/b/c", "/ab", "/b", "/b/a"];
/// Stands for every value the pools above do not name.
const OTHER: &str = "zz-other";

/// A permission in the bounded grammar: schema, up to three restricting
/// parts (None is `*`), and for files an optional path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Perm {
    pub schema: &'static str,
    pub parts: Vec<Option<BTreeSet<&'static str>>>,
    pub path: Option<&'static str>,
}

impl Perm {
    pub fn render(&self) -> String {
        let mut out = self.schema.to_string();
        for p in &self.parts {
            out.push(':');
            match p {
                None => out.push('*'),
                Some(set) => out.push_str(&set.iter().copied().collect::<Vec<_>>().join(",")),
            }
        }
        if let Some(path) = self.path {
            out.push(':');
            out.push_str(path);
        }
        out
    }

    /// Every fully specified request this permission names, over the pools
    /// plus one stand-in for unnamed values. Missing parts are unrestricted.
    fn expand(&self) -> Vec<Vec<&'static str>> {
        let pools: [&[&'static str]; 3] = [&TENANTS, &OPS, &SYSTEMS];
        let mut rows: Vec<Vec<&'static str>> = vec![vec![]];
        for (i, pool) in pools.iter().enumerate() {
            let choices: Vec<&'static str> = match self.parts.get(i) {
                Some(Some(set)) => set.iter().copied().collect(),
                _ => pool.iter().copied().chain([OTHER]).collect(),
            };
            rows = rows.into_iter().flat_map(|r| choices.iter().map(move |c| [r.clone(), vec![*c]].concat())).collect();
        }
        if self.schema == "files" {
            let paths: Vec<&'static str> = match self.path {
                Some(p) => universe_paths().into_iter().filter(|q| under(p, q)).collect(),
                None => universe_paths(),
            };
            rows = rows.into_iter().flat_map(|r| paths.iter().map(move |p| [r.clone(), vec![*p]].concat())).collect();
        }
        rows
    }
}

fn universe_paths() -> Vec<&'static str> {
    PATHS.iter().copied().chain(["/a/b/c/zz", "/zz", "/a/zz", "/abc"]).collect()
}

/// Path subtree membership by segment.
fn under(root: &str, p: &str) -> bool {
    root == "/" || p == root || p.strip_prefix(root).is_some_and(|rest| rest.starts_with('/'))
}

fn literal_covers(granted: &Option<BTreeSet<&'static str>>, value: &str) -> bool {
    granted.as_ref().is_none_or(|set| set.contains(value))
}

fn grant_covers_row(g: &Perm, schema: &str, row: &[&str]) -> bool {
    if g.schema != schema {
        return false;
    }
    for (i, value) in row.iter().take(3).enumerate() {
        if let Some(part) = g.parts.get(i) {
            if !literal_covers(part, value) {
                return false;
            }
        }
    }
    match (schema, g.path) {
        ("files", Some(root)) => under(root, row[3]),
        _ => true,
    }
}

/// Brute force: `granted` implies `required` iff every request `required`
/// names is named by `granted`.
pub fn brute_implies(granted: &Perm, required: &Perm) -> bool {
    required.expand().iter().all(|row| grant_covers_row(granted, required.schema, row))
}

fn random_part(rng: &mut StdRng, pool: &[&'static str], concrete: bool) -> Option<BTreeSet<&'static str>> {
    let roll: f64 = rng.gen();
    if !concrete && roll < 0.2 {
        None
    } else if !concrete && roll < 0.4 {
        let n = rng.gen_range(2..=pool.len());
        Some(pool.choose_multiple(rng, n).copied().collect())
    } else {
        Some(BTreeSet::from([*pool.choose(rng).unwrap()]))
    }
}

/// A random permission. Concrete ones name every part with one literal.
pub fn random_perm(rng: &mut StdRng, concrete: bool) -> Perm {
    let schema = if rng.gen_bool(0.5) { "systems" } else { "files" };
    let pools: [&[&'static str]; 3] = [&TENANTS, &OPS, &SYSTEMS];
    let len = if concrete { 3 } else { rng.gen_range(0..=3) };
    let parts = pools.iter().take(len).map(|p| random_part(rng, p, concrete)).collect::<Vec<_>>();
    let path = (schema == "files" && len == 3 && (concrete || rng.gen_bool(0.7))).then(|| *PATHS.choose(rng).unwrap());
    Perm { schema, parts, path }
}

// ---- role graphs -----------------------------------------------------------

/// Roles reachable from `from` (inclusive) along parent -> child edges.
pub fn reachable(edges: &[(usize, usize)], from: usize) -> BTreeSet<usize> {
    let mut seen = BTreeSet::from([from]);
    let mut frontier = vec![from];
    while let Some(n) = frontier.pop() {
        for (p, c) in edges {
            if *p == n && seen.insert(*c) {
                frontier.push(*c);
            }
        }
    }
    seen
}

// ---- validation table ------------------------------------------------------

/// The canonical two-site topology as plain facts.
pub fn owner(tenant: &str) -> &'static str {
    match tenant {
        "primary-admin" | "tacc" | "dev" => "primary",
        "assoc1-admin" | "tenant1" => "assoc1",
        _ => "",
    }
}

pub fn admin_tenant(site: &str) -> &'static str {
    match site {
        "primary" => "primary-admin",
        "assoc1" => "assoc1-admin",
        _ => "",
    }
}

pub fn runs(site: &str, service: &str) -> bool {
    match site {
        "primary" => true,
        "assoc1" => matches!(service, "tokens" | "authenticator" | "security-kernel" | "systems"),
        _ => false,
    }
}

/// One request of the matrix, described independently of the simulator.
pub struct Request<'a> {
    pub user_token: bool,
    pub tenant: &'a str,
    pub forged: bool,
    pub receiving: &'a str,
    pub target: &'a str,
    pub obo_tenant: Option<&'a str>,
    pub target_site: Option<&'a str>,
    pub sending_service: &'a str,
}

/// First listed condition the request breaks.
pub fn first_broken(r: &Request) -> Option<&'static str> {
    let admin = r.tenant == "primary-admin" || r.tenant == "assoc1-admin";
    let sender = owner(r.tenant);
    // 1: signature, and a token carrying target_site exactly when it is a service token
    if r.forged || r.user_token == r.target_site.is_some() {
        return Some("1");
    }
    if !runs(r.receiving, r.target) {
        return Some("2");
    }
    if (r.target == "security-kernel" || r.target == "tokens") && sender != r.receiving {
        return Some("3");
    }
    if r.receiving == "primary" && sender == "assoc1" && runs("assoc1", r.target) {
        return Some("4");
    }
    if r.receiving != "primary" && sender != "primary" && sender != r.receiving {
        return Some("5");
    }
    if r.user_token {
        if r.obo_tenant.is_some() {
            return Some("6a");
        }
        if admin {
            return Some("6b");
        }
        return None;
    }
    let Some(obo_tenant) = r.obo_tenant else {
        return Some("7a");
    };
    if r.target_site != Some(r.receiving) {
        return Some("7b");
    }
    let home = owner(obo_tenant);
    if r.tenant != admin_tenant(home) || !runs(home, r.sending_service) {
        return Some("7c");
    }
    None
}

pub fn status_for(rule: Option<&str>) -> u16 {
    match rule {
        None => 200,
        Some("1") => 401,
        Some(_) => 403,
    }
}

/// Summary counts by verdict, for the acceptance report.
pub fn tally<'a>(verdicts: impl Iterator<Item = Option<&'a str>>) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for v in verdicts {
        *out.entry(v.unwrap_or("accepted").to_string()).or_default() += 1;
    }
    out
}
