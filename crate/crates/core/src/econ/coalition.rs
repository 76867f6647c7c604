use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};

pub const MAX_PARTITION_AGENTS: usize = 10;

/// A set partition of agents `0..n` into coalitions.
///
/// Blocks are kept in canonical form: each block sorted, blocks ordered by
/// their smallest member.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<usize>>", into = "Vec<Vec<usize>>")]
pub struct CoalitionStructure {
    blocks: Vec<Vec<usize>>,
}

impl CoalitionStructure {
    pub fn new(mut blocks: Vec<Vec<usize>>) -> Result<Self> {
        for b in &mut blocks {
            if b.is_empty() {
                return input_err("coalition blocks must be non-empty");
            }
            b.sort_unstable();
        }
        blocks.sort_unstable_by_key(|b| b[0]);
        let mut members: Vec<usize> = blocks.iter().flatten().copied().collect();
        members.sort_unstable();
        if members != (0..members.len()).collect::<Vec<_>>() {
            return input_err(format!("coalition blocks {blocks:?} do not partition 0..{}", members.len()));
        }
        Ok(Self { blocks })
    }

    /// Every agent alone: each maximizes its own NPV.
    pub fn singletons(n: usize) -> Self {
        Self { blocks: (0..n).map(|i| vec![i]).collect() }
    }

    /// One block with everyone: all maximize the team NPV.
    pub fn grand(n: usize) -> Self {
        Self { blocks: vec![(0..n).collect()] }
    }

    /// From a restricted-growth string (`rgs[i]` is agent `i`'s block label).
    pub fn from_rgs(rgs: &[usize]) -> Self {
        let k = rgs.iter().copied().max().map_or(0, |m| m + 1);
        let mut blocks = vec![Vec::new(); k];
        for (agent, &b) in rgs.iter().enumerate() {
            blocks[b].push(agent);
        }
        Self { blocks }
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    pub fn n_agents(&self) -> usize {
        self.blocks.iter().map(Vec::len).sum()
    }

    /// Index of the block containing `agent`.
    pub fn block_of(&self, agent: usize) -> Option<usize> {
        self.blocks.iter().position(|b| b.contains(&agent))
    }
}

impl TryFrom<Vec<Vec<usize>>> for CoalitionStructure {
    type Error = crate::Error;
    fn try_from(blocks: Vec<Vec<usize>>) -> Result<Self> {
        Self::new(blocks)
    }
}

impl From<CoalitionStructure> for Vec<Vec<usize>> {
    fn from(c: CoalitionStructure) -> Self {
        c.blocks
    }
}

fn agent_label(i: usize) -> String {
    if i < 26 {
        char::from(b'A' + i as u8).to_string()
    } else {
        format!("#{i}")
    }
}

impl fmt::Display for CoalitionStructure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.blocks {
            let names: Vec<String> = b.iter().map(|&i| agent_label(i)).collect();
            write!(f, "{{{}}}", names.join(","))?;
        }
        Ok(())
    }
}

/// Replaces each agent's value by the sum over its coalition.
pub fn coalition_rewards(raw: &[f64], structure: &CoalitionStructure) -> Result<Vec<f64>> {
    if structure.n_agents() != raw.len() {
        return input_err(format!(
            "coalition covers {} agents but {} values were given",
            structure.n_agents(),
            raw.len()
        ));
    }
    let mut out = vec![0.0; raw.len()];
    for block in structure.blocks() {
        let total: f64 = block.iter().map(|&i| raw[i]).sum();
        for &i in block {
            out[i] = total;
        }
    }
    Ok(out)
}

/// All set partitions of `n` agents, in lexicographic order of their
/// restricted-growth strings.
pub fn enumerate_partitions(n: usize) -> Result<Vec<CoalitionStructure>> {
    if !(1..=MAX_PARTITION_AGENTS).contains(&n) {
        return input_err(format!("partition enumeration supports 1..={MAX_PARTITION_AGENTS} agents, got {n}"));
    }
    let mut out = Vec::new();
    let mut rgs = vec![0usize; n];
    // max_prefix[i] = max(rgs[0..i])
    let mut max_prefix = vec![0usize; n];
    loop {
        out.push(CoalitionStructure::from_rgs(&rgs));
        // Rightmost position that can still grow.
        let mut i = n - 1;
        loop {
            if i == 0 {
                return Ok(out);
            }
            if rgs[i] <= max_prefix[i] {
                break;
            }
            i -= 1;
        }
        rgs[i] += 1;
        for k in i + 1..n {
            rgs[k] = 0;
            max_prefix[k] = max_prefix[k - 1].max(rgs[k - 1]);
        }
    }
}

/// Bell number via the Bell triangle.
pub fn bell_number(n: usize) -> u128 {
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for v in &row {
            let last = *next.last().unwrap();
            next.push(last + v);
        }
        row = next;
    }
    row[0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn singleton_and_grand_rewards() {
        let raw = [1.0, 2.0, 3.0];
        assert_eq!(coalition_rewards(&raw, &CoalitionStructure::singletons(3)).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(coalition_rewards(&raw, &CoalitionStructure::grand(3)).unwrap(), vec![6.0, 6.0, 6.0]);
        let ab_c = CoalitionStructure::new(vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(coalition_rewards(&raw, &ab_c).unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn malformed_partitions_rejected() {
        assert!(CoalitionStructure::new(vec![vec![0, 1], vec![1, 2]]).is_err());
        assert!(CoalitionStructure::new(vec![vec![0], vec![2]]).is_err());
        assert!(CoalitionStructure::new(vec![vec![0], vec![]]).is_err());
        let two = CoalitionStructure::grand(2);
        assert!(coalition_rewards(&[1.0, 2.0, 3.0], &two).is_err());
    }

    #[test]
    fn three_agents_have_five_structures_in_rgs_order() {
        let parts = enumerate_partitions(3).unwrap();
        let shown: Vec<String> = parts.iter().map(|p| p.to_string()).collect();
        assert_eq!(shown, vec!["{A,B,C}", "{A,B}{C}", "{A,C}{B}", "{A}{B,C}", "{A}{B}{C}"]);
    }

    #[test]
    fn counts_follow_bell_recurrence() {
        // B(n+1) = Σ_k C(n,k) B(k)
        let mut bell = vec![1u128];
        for n in 0..10usize {
            let mut binom = 1u128;
            let mut next = 0u128;
            for k in 0..=n {
                next += binom * bell[k];
                binom = binom * (n - k) as u128 / (k + 1) as u128;
            }
            bell.push(next);
        }
        for n in 1..=8 {
            assert_eq!(enumerate_partitions(n).unwrap().len() as u128, bell[n], "n={n}");
            assert_eq!(bell_number(n), bell[n]);
        }
        assert_eq!(enumerate_partitions(1).unwrap(), vec![CoalitionStructure::grand(1)]);
        assert_eq!(enumerate_partitions(4).unwrap().len(), 15);
    }

    #[test]
    fn enumeration_range_checked() {
        assert!(enumerate_partitions(0).is_err());
        assert!(enumerate_partitions(11).is_err());
    }

    #[test]
    fn serde_uses_block_lists() {
        let c: CoalitionStructure = serde_json::from_str("[[2],[1,0]]").unwrap();
        assert_eq!(c.blocks(), &[vec![0, 1], vec![2]]);
        assert!(serde_json::from_str::<CoalitionStructure>("[[0],[0]]").is_err());
    }
}
