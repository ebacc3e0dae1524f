use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::net::Ipv4Addr;

use super::SimError;
use crate::discovery::Micros;

/// Default one-way latency per link.
pub const DEFAULT_LINK_LATENCY: Micros = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeKind {
    Host,
    Switch,
    Resolver,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    /// Hosts and the resolver have an address; switches do not.
    pub address: Option<Ipv4Addr>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Link {
    pub a: usize,
    pub b: usize,
    pub latency: Micros,
}

/// Hosts, switches and one resolver joined by links. Path latency is the
/// sum of link latencies along the cheapest path.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Topology {
    nodes: Vec<Node>,
    links: Vec<Link>,
    by_name: BTreeMap<String, usize>,
    dist: Vec<Vec<Micros>>,
}

impl Topology {
    pub fn new() -> Self {
        Self::default()
    }

    fn add(&mut self, name: &str, kind: NodeKind) -> Result<usize, SimError> {
        if self.by_name.contains_key(name) {
            return Err(SimError::Topology(format!("duplicate node {name:?}")));
        }
        let hosts = self
            .nodes
            .iter()
            .filter(|n| n.kind == NodeKind::Host)
            .count();
        let address = match kind {
            NodeKind::Host => {
                let k = hosts + 1;
                if k > 250 * 250 {
                    return Err(SimError::Topology("too many hosts".into()));
                }
                Some(Ipv4Addr::new(10, 0, (k / 250) as u8, (k % 250) as u8))
            }
            NodeKind::Resolver => Some(Ipv4Addr::new(10, 0, 255, 53)),
            NodeKind::Switch => None,
        };
        let idx = self.nodes.len();
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            address,
        });
        self.by_name.insert(name.to_string(), idx);
        self.dist.clear();
        Ok(idx)
    }

    pub fn add_host(&mut self, name: &str) -> Result<usize, SimError> {
        self.add(name, NodeKind::Host)
    }

    pub fn add_switch(&mut self, name: &str) -> Result<usize, SimError> {
        self.add(name, NodeKind::Switch)
    }

    pub fn add_resolver(&mut self, name: &str) -> Result<usize, SimError> {
        if self.resolver().is_some() {
            return Err(SimError::Topology("only one resolver is supported".into()));
        }
        self.add(name, NodeKind::Resolver)
    }

    pub fn link(&mut self, a: usize, b: usize, latency: Micros) -> Result<(), SimError> {
        if a >= self.nodes.len() || b >= self.nodes.len() || a == b {
            return Err(SimError::Topology(format!("bad link {a}-{b}")));
        }
        self.links.push(Link { a, b, latency });
        self.dist.clear();
        Ok(())
    }

    pub fn link_by_name(&mut self, a: &str, b: &str, latency: Micros) -> Result<(), SimError> {
        let a = self
            .index(a)
            .ok_or_else(|| SimError::Topology(format!("unknown node {a:?}")))?;
        let b = self
            .index(b)
            .ok_or_else(|| SimError::Topology(format!("unknown node {b:?}")))?;
        self.link(a, b, latency)
    }

    /// A core switch with `edges` edge switches; hosts are attached to the
    /// edge switches in turn and the resolver to the core.
    pub fn star<S: AsRef<str>>(
        edges: usize,
        hosts: &[S],
        latency: Micros,
    ) -> Result<Self, SimError> {
        let mut t = Topology::new();
        let core = t.add_switch("sw-core")?;
        let mut edge_ids = Vec::new();
        for i in 0..edges.max(1) {
            let e = t.add_switch(&format!("sw-{}", i + 1))?;
            t.link(core, e, latency)?;
            edge_ids.push(e);
        }
        for (i, h) in hosts.iter().enumerate() {
            let id = t.add_host(h.as_ref())?;
            t.link(edge_ids[i % edge_ids.len()], id, latency)?;
        }
        let r = t.add_resolver("dns")?;
        t.link(core, r, latency)?;
        t.finalize()?;
        Ok(t)
    }

    /// Computes path latencies; fails if the graph is not connected.
    pub fn finalize(&mut self) -> Result<(), SimError> {
        let n = self.nodes.len();
        let mut adj: Vec<Vec<(usize, Micros)>> = vec![Vec::new(); n];
        for l in &self.links {
            adj[l.a].push((l.b, l.latency));
            adj[l.b].push((l.a, l.latency));
        }
        let mut dist = Vec::with_capacity(n);
        for src in 0..n {
            let mut d = vec![Micros::MAX; n];
            d[src] = 0;
            let mut heap = BinaryHeap::from([Reverse((0, src))]);
            while let Some(Reverse((cost, u))) = heap.pop() {
                if cost > d[u] {
                    continue;
                }
                for &(v, w) in &adj[u] {
                    if cost + w < d[v] {
                        d[v] = cost + w;
                        heap.push(Reverse((d[v], v)));
                    }
                }
            }
            if let Some(v) = d.iter().position(|&x| x == Micros::MAX) {
                return Err(SimError::Topology(format!(
                    "{:?} is unreachable from {:?}",
                    self.nodes[v].name, self.nodes[src].name
                )));
            }
            dist.push(d);
        }
        self.dist = dist;
        Ok(())
    }

    pub fn is_finalized(&self) -> bool {
        self.dist.len() == self.nodes.len() && !self.nodes.is_empty()
    }

    /// One-way latency between two nodes.
    ///
    /// # Panics
    ///
    /// Panics if [`Topology::finalize`] has not succeeded since the last
    /// change.
    pub fn latency(&self, a: usize, b: usize) -> Micros {
        self.dist[a][b]
    }

    pub fn index(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn node(&self, idx: usize) -> &Node {
        &self.nodes[idx]
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn hosts(&self) -> impl Iterator<Item = (usize, &Node)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.kind == NodeKind::Host)
    }

    pub fn resolver(&self) -> Option<usize> {
        self.nodes.iter().position(|n| n.kind == NodeKind::Resolver)
    }

    pub fn address(&self, idx: usize) -> Option<Ipv4Addr> {
        self.nodes[idx].address
    }
}
