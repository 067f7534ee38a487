//! Canonical vertex addresses.
//!
//! A vertex is named relative to a base vertex: the root of a rooted tree or
//! the anchor `ω` of an unrooted one. An address is a number of ancestor hops
//! `up` from the base followed by a path of child indices descending from
//! `parent^up(base)`. Rooted trees always use `up = 0`.
//!
//! On unrooted trees the spine child of every ancestor (the branch that leads
//! back to the anchor) is child index `0`, so an address with `up > 0` and a
//! non-empty path must not start with `0`; [`VertexAddress::canonical`]
//! rewrites such addresses.
//!
//! Text form: `*` is the base vertex, `0.1` is a descent path from the base,
//! `^3` is `parent^3(ω)` and `^3/1.0` descends from it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::Error;

/// Child index of the spine branch at every ancestor of the anchor.
pub const SPINE_CHILD: u32 = 0;

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VertexAddress {
    up: u32,
    path: Vec<u32>,
}

impl VertexAddress {
    /// The root of a rooted tree, or the anchor of an unrooted one.
    pub fn base() -> Self {
        VertexAddress::default()
    }

    pub fn from_path(path: Vec<u32>) -> Self {
        VertexAddress { up: 0, path }
    }

    /// `parent^up(ω)`.
    pub fn ancestor_of_base(up: u32) -> Self {
        VertexAddress { up, path: Vec::new() }
    }

    /// Builds `(up, path)` and rewrites it into canonical form.
    pub fn new(up: u32, path: Vec<u32>) -> Self {
        VertexAddress { up, path }.canonical()
    }

    pub fn canonical(mut self) -> Self {
        let mut skip = 0;
        while self.up > 0 && self.path.get(skip) == Some(&SPINE_CHILD) {
            self.up -= 1;
            skip += 1;
        }
        if skip > 0 {
            self.path.drain(..skip);
        }
        self
    }

    pub fn up(&self) -> u32 {
        self.up
    }

    pub fn path(&self) -> &[u32] {
        &self.path
    }

    pub fn is_base(&self) -> bool {
        self.up == 0 && self.path.is_empty()
    }

    /// Generation relative to the base: `path.len() - up`. On rooted trees
    /// this is the distance `|v|` from the root.
    pub fn level(&self) -> i64 {
        self.path.len() as i64 - self.up as i64
    }

    /// Child `index` of this vertex, in canonical form.
    pub fn child(&self, index: u32) -> Self {
        if self.path.is_empty() && self.up > 0 && index == SPINE_CHILD {
            VertexAddress::ancestor_of_base(self.up - 1)
        } else {
            let mut path = self.path.clone();
            path.push(index);
            VertexAddress { up: self.up, path }
        }
    }

    /// Parent in an unrooted tree (always exists) or a rooted one (absent at
    /// the root). `rooted` selects which.
    pub fn parent(&self, rooted: bool) -> Option<Self> {
        if let Some((_, head)) = self.path.split_last() {
            Some(VertexAddress { up: self.up, path: head.to_vec() })
        } else if rooted {
            None
        } else {
            Some(VertexAddress::ancestor_of_base(self.up + 1))
        }
    }

    /// Path from `parent^top(ω)` down to this vertex, for `top >= up`.
    fn path_from(&self, top: u32) -> impl Iterator<Item = u32> + '_ {
        std::iter::repeat(SPINE_CHILD).take((top - self.up) as usize).chain(self.path.iter().copied())
    }

    /// True if `self` is `other` or one of its descendants.
    pub fn descends_from(&self, other: &VertexAddress) -> bool {
        let top = self.up.max(other.up);
        let mine: Vec<u32> = self.path_from(top).collect();
        let theirs: Vec<u32> = other.path_from(top).collect();
        mine.len() >= theirs.len() && mine[..theirs.len()] == theirs[..]
    }
}

impl fmt::Display for VertexAddress {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = self.path.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(".");
        match (self.up, self.path.is_empty()) {
            (0, true) => write!(f, "*"),
            (0, false) => write!(f, "{path}"),
            (up, true) => write!(f, "^{up}"),
            (up, false) => write!(f, "^{up}/{path}"),
        }
    }
}

fn parse_path(input: &str, text: &str) -> Result<Vec<u32>, Error> {
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split('.')
        .map(|part| {
            part.trim().parse::<u32>().map_err(|e| Error::MalformedAddress {
                input: input.to_string(),
                reason: format!("bad child index {part:?}: {e}"),
            })
        })
        .collect()
}

impl FromStr for VertexAddress {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim();
        if text.is_empty() || text == "*" || text == "root" {
            return Ok(VertexAddress::base());
        }
        if let Some(rest) = text.strip_prefix('^') {
            let (hops, path) = match rest.split_once('/') {
                Some((h, p)) => (h, p),
                None => (rest, ""),
            };
            let up = hops.trim().parse::<u32>().map_err(|e| Error::MalformedAddress {
                input: s.to_string(),
                reason: format!("bad ancestor hop count {hops:?}: {e}"),
            })?;
            let path = parse_path(s, path)?;
            let addr = VertexAddress { up, path };
            if addr.clone().canonical() != addr {
                return Err(Error::MalformedAddress {
                    input: s.to_string(),
                    reason: "descent re-enters the spine branch; use the canonical form".into(),
                });
            }
            return Ok(addr);
        }
        Ok(VertexAddress::from_path(parse_path(s, text)?))
    }
}

impl Serialize for VertexAddress {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for VertexAddress {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}
