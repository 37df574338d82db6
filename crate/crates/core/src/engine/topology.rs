//! Node-local and global communicators.

use crate::comm::{CommError, Communicator, Link, Seat};

/// A rank's view of the two-level hierarchy.
pub struct Topology<C> {
    /// Ranks on the same node; the node leader is local rank 0.
    pub local: C,
    /// Leaders of all nodes. `None` on non-leaders.
    pub global: Option<C>,
}

impl<C: Communicator> Topology<C> {
    pub fn is_leader(&self) -> bool {
        self.global.is_some()
    }

    /// Sums `data` over every rank of `world` into world rank 0: a blocking
    /// local reduction, then a blocking global reduction among leaders.
    /// Requires world rank 0 to be the leader of global rank 0, which holds
    /// whenever locals and leaders are ordered by world rank.
    pub fn reduce_sum_blocking(&mut self, data: &[u64], seat: &Seat) -> Result<Option<Vec<u64>>, CommError> {
        let local = self.local.reduce_sum_blocking(data, 0, seat)?;
        match (&mut self.global, local) {
            (Some(global), Some(sum)) => global.reduce_sum_blocking(&sum, 0, seat),
            _ => Ok(None),
        }
    }
}

/// Splits `world` by node, then gathers the first rank of every node into
/// the global communicator. `node_of` maps world ranks to node ids.
pub fn hierarchical_topology<C: Communicator>(
    world: &mut C,
    node_of: impl Fn(usize) -> usize,
    seat: &Seat,
) -> Result<Topology<C>, CommError> {
    let node = node_of(world.rank()) as u64;
    let local = world.split(node, Link::IntraNode, seat)?;
    let leader = local.rank() == 0;
    let global = world.split(leader as u64, Link::Network, seat)?;
    Ok(Topology {
        local,
        global: leader.then_some(global),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::comm::{Pacer, SimCluster, SimNetConfig, WorkerId};

    fn sizes(ranks: usize, node_of: fn(usize) -> usize) -> Vec<(usize, Option<usize>)> {
        let pacer = Pacer::free();
        let comms = SimCluster::new(ranks, SimNetConfig::default(), pacer.clone());
        std::thread::scope(|s| {
            let hs: Vec<_> = comms
                .into_iter()
                .enumerate()
                .map(|(r, mut c)| {
                    let pacer = pacer.clone();
                    s.spawn(move || {
                        let seat = pacer.seat(WorkerId::new(r, 0));
                        let t = hierarchical_topology(&mut c, node_of, &seat).unwrap();
                        (t.local.size(), t.global.as_ref().map(|g| g.size()))
                    })
                })
                .collect();
            hs.into_iter().map(|h| h.join().unwrap()).collect()
        })
    }

    #[test]
    fn one_rank_per_node() {
        let s = sizes(3, |r| r);
        assert_eq!(s, vec![(1, Some(3)); 3]);
    }

    #[test]
    fn two_nodes_of_two() {
        let s = sizes(4, |r| r / 2);
        assert_eq!(s, vec![(2, Some(2)), (2, None), (2, Some(2)), (2, None)]);
    }

    #[test]
    fn interleaved_nodes() {
        let s = sizes(5, |r| r % 2);
        assert_eq!(s, vec![(3, Some(2)), (2, Some(2)), (3, None), (2, None), (3, None)]);
    }
}
