/// Bus/line adjacency used for connectivity checks on switched topologies.
#[derive(Debug, Clone)]
pub struct Topology {
    n_bus: usize,
    // (neighbor, line) pairs per bus
    adj: Vec<Vec<(usize, usize)>>,
}

impl Topology {
    pub fn new(n_bus: usize, from: &[usize], to: &[usize]) -> Self {
        let mut adj = vec![Vec::new(); n_bus];
        for (l, (&f, &t)) in from.iter().zip(to).enumerate() {
            adj[f].push((t, l));
            adj[t].push((f, l));
        }
        Self { n_bus, adj }
    }

    pub fn of(case: &super::GridCase) -> Self {
        Self::new(case.n_bus(), &case.line_from, &case.line_to)
    }

    /// Marks buses reachable from `root` through lines with `closed[l]`.
    pub fn reachable(&self, root: usize, closed: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.n_bus];
        let mut stack = vec![root];
        seen[root] = true;
        while let Some(b) = stack.pop() {
            for &(nbr, l) in &self.adj[b] {
                if closed[l] && !seen[nbr] {
                    seen[nbr] = true;
                    stack.push(nbr);
                }
            }
        }
        seen
    }

    pub fn unreachable_from(&self, root: usize, closed: &[bool]) -> Vec<usize> {
        self.reachable(root, closed)
            .iter()
            .enumerate()
            .filter(|(_, &r)| !r)
            .map(|(b, _)| b)
            .collect()
    }

    /// True when every bus with nonzero demand lies in the reference bus's
    /// island.
    pub fn serves_all_load(&self, slack: usize, closed: &[bool], demand: &[f64]) -> bool {
        let seen = self.reachable(slack, closed);
        demand
            .iter()
            .zip(&seen)
            .all(|(&d, &reached)| reached || d == 0.0)
    }
}
