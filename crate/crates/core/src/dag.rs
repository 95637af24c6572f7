//! Dependency staging for skill execution.
//!
//! Nodes are grouped into topological levels: a node's stage is one past the
//! deepest stage among its selected dependencies, so everything in a stage
//! can run concurrently. Dependencies on unselected nodes are ignored.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DagError {
    #[error("dependency cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
}

/// Splits `nodes` into ordered stages. Each stage is sorted by name.
pub fn execution_stages<'a, F, D>(nodes: &[&'a str], deps_of: F) -> Result<Vec<Vec<String>>, DagError>
where
    F: Fn(&str) -> D,
    D: IntoIterator<Item = &'a str>,
{
    let selected: BTreeSet<&str> = nodes.iter().copied().collect();
    let deps: BTreeMap<&str, BTreeSet<&str>> = selected
        .iter()
        .map(|&n| {
            let d = deps_of(n)
                .into_iter()
                .filter(|d| selected.contains(d) && *d != n)
                .collect();
            (n, d)
        })
        .collect();
    // a node depending on itself is a cycle of length one
    for &n in &selected {
        if deps_of(n).into_iter().any(|d| d == n) {
            return Err(DagError::Cycle(alloc::vec![n.into(), n.into()]));
        }
    }

    let mut level: BTreeMap<&str, usize> = BTreeMap::new();
    let mut remaining: BTreeSet<&str> = selected.clone();
    while !remaining.is_empty() {
        let ready: Vec<&str> = remaining
            .iter()
            .copied()
            .filter(|n| deps[n].iter().all(|d| level.contains_key(d)))
            .collect();
        if ready.is_empty() {
            return Err(DagError::Cycle(find_cycle(&remaining, &deps)));
        }
        for n in ready {
            let l = deps[n].iter().map(|d| level[d] + 1).max().unwrap_or(0);
            level.insert(n, l);
            remaining.remove(n);
        }
    }

    let depth = level.values().copied().max().map_or(0, |m| m + 1);
    let mut stages: Vec<Vec<String>> = (0..depth).map(|_| Vec::new()).collect();
    // BTreeMap iteration keeps each stage name-sorted
    for (n, l) in level {
        stages[l].push(n.into());
    }
    Ok(stages)
}

fn find_cycle(remaining: &BTreeSet<&str>, deps: &BTreeMap<&str, BTreeSet<&str>>) -> Vec<String> {
    // Every remaining node has an unresolved dependency inside `remaining`,
    // so walking dependencies must revisit a node.
    let start = *remaining.iter().next().expect("nonempty");
    let mut path: Vec<&str> = alloc::vec![start];
    loop {
        let cur = *path.last().unwrap();
        let next = deps[cur]
            .iter()
            .copied()
            .find(|d| remaining.contains(d))
            .expect("stalled node has a pending dependency");
        if let Some(pos) = path.iter().position(|&p| p == next) {
            let mut cycle: Vec<String> = path[pos..].iter().map(|s| String::from(*s)).collect();
            cycle.push(next.into());
            // reported in execution direction: dependency first
            cycle.reverse();
            return cycle;
        }
        path.push(next);
    }
}
