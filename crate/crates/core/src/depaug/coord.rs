//! Coordinating structures: detection, tree reforming and pruning of
//! constituents unrelated to the target word.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::interchange::check_tree;

/// Words joined as coordinated constituents. `members[0]` is the leader.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Coordination {
    pub members: Vec<usize>,
}

impl Coordination {
    pub fn leader(&self) -> usize {
        self.members[0]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// Enumerates candidate leaders left to right. A later word joins leader `j`
/// when `j` is its head and it either shares `j`'s label or is labelled
/// `conj`. Words already grouped are not tried as leaders, and the last word
/// is never a leader.
pub fn find_coordinations(head: &[Option<usize>], label: &[String]) -> Vec<Coordination> {
    let n = head.len();
    let mut grouped = vec![false; n];
    let mut out = Vec::new();
    for j in 0..n.saturating_sub(1) {
        if grouped[j] {
            continue;
        }
        let mut members = vec![j];
        members.extend(
            (j + 1..n).filter(|&k| head[k] == Some(j) && (label[k] == label[j] || label[k] == "conj")),
        );
        if members.len() > 1 {
            for &m in &members {
                grouped[m] = true;
            }
            out.push(Coordination { members });
        }
    }
    out
}

/// Re-heads the non-leader constituents of every group onto the leader's
/// head. Other children of the leader keep their head when they precede the
/// first non-leader constituent and move to the leader's head otherwise.
///
/// Groups whose leader is the sentence root are left as they are, since
/// there is no head to move onto.
pub fn reform_tree(head: &[Option<usize>], coordinations: &[Coordination]) -> Result<Vec<Option<usize>>> {
    let mut out = head.to_vec();
    for g in coordinations {
        let leader = g.leader();
        let Some(leader_head) = out[leader] else {
            continue;
        };
        let first_other = g.members[1];
        let movable: Vec<usize> = (0..out.len())
            .filter(|&w| out[w] == Some(leader) && !g.members.contains(&w) && w > first_other)
            .collect();
        for &m in &g.members[1..] {
            out[m] = Some(leader_head);
        }
        for w in movable {
            out[w] = Some(leader_head);
        }
    }
    check_tree(&out).map_err(|m| Error::Internal(format!("reformed tree is not a tree: {m}")))?;
    Ok(out)
}

/// Marks constituents to drop given the verb-to-target path on the reformed
/// tree. A `true` entry removes that word together with its subtree.
///
/// Groups touched by the path keep only the touched constituents. Every
/// other group looks for a parallel group (same number of constituents) that
/// already has a single retained constituent: the nearest one to its left,
/// else the nearest one to its right. When found, only the constituent at
/// the same position survives; otherwise the group stays whole.
pub fn prune_coordinations(word_count: usize, path: &[usize], coordinations: &[Coordination]) -> Vec<bool> {
    let mut removed = vec![false; word_count];
    let mut retained: Vec<Option<usize>> = vec![None; coordinations.len()];
    let mut intersecting = vec![false; coordinations.len()];

    for (gi, g) in coordinations.iter().enumerate() {
        let hits: Vec<usize> = (0..g.len()).filter(|&p| path.contains(&g.members[p])).collect();
        if hits.is_empty() {
            continue;
        }
        intersecting[gi] = true;
        for (p, &m) in g.members.iter().enumerate() {
            if !hits.contains(&p) {
                removed[m] = true;
            }
        }
        if let [only] = hits[..] {
            retained[gi] = Some(only);
        }
    }

    for gi in 0..coordinations.len() {
        if intersecting[gi] {
            continue;
        }
        let size = coordinations[gi].len();
        let parallel = |gj: &usize| retained[*gj].is_some() && coordinations[*gj].len() == size;
        let source = (0..gi)
            .rev()
            .find(parallel)
            .or_else(|| (gi + 1..coordinations.len()).find(parallel));
        if let Some(gj) = source {
            let keep = retained[gj].expect("parallel group has a retained constituent");
            for (p, &m) in coordinations[gi].members.iter().enumerate() {
                if p != keep {
                    removed[m] = true;
                }
            }
            retained[gi] = Some(keep);
        }
    }
    removed
}
