//! Network topology, global parameters, per-slot exogenous state and the
//! queue dynamics shared by the policy and the simulator.
//!
//! Vertices are addressed through *agents*: sensor `i` is agent `i` and the
//! sink is agent `N`. The collector, which only exists in side-information
//! mode, has no queue or battery and is therefore not an agent.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Base of every logarithm used for capacities, entropies and the rate region.
pub const LOG_BASE: f64 = std::f64::consts::E;

/// Logarithm in [`LOG_BASE`].
#[inline]
pub fn log(x: f64) -> f64 {
    if LOG_BASE == std::f64::consts::E {
        x.ln()
    } else {
        x.ln() / LOG_BASE.ln()
    }
}

/// Inverse of [`log`].
#[inline]
pub fn exp(x: f64) -> f64 {
    if LOG_BASE == std::f64::consts::E {
        x.exp()
    } else {
        LOG_BASE.powf(x)
    }
}

/// Endpoint of a directed link.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Vertex {
    /// Sensor node, zero-based.
    Sensor(usize),
    Sink,
    Collector,
}

impl std::fmt::Display for Vertex {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Vertex::Sensor(i) => write!(f, "{}", i + 1),
            Vertex::Sink => write!(f, "d"),
            Vertex::Collector => write!(f, "c"),
        }
    }
}

impl std::str::FromStr for Vertex {
    type Err = Error;

    /// Parses the one-based labels `1`, `2`, ... and the names `d` and `c`.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "d" => Ok(Vertex::Sink),
            "c" => Ok(Vertex::Collector),
            other => match other.parse::<usize>() {
                Ok(k) if k >= 1 => Ok(Vertex::Sensor(k - 1)),
                _ => Err(Error::Topology(format!("bad vertex label '{other}'"))),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Link {
    pub from: Vertex,
    pub to: Vertex,
}

impl Link {
    pub fn new(from: Vertex, to: Vertex) -> Self {
        Self { from, to }
    }
}

/// Directed topology over sensors, the sink and an optional collector.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    num_sensors: usize,
    measuring: Vec<bool>,
    links: Vec<Link>,
    side_info: bool,
    out_links: Vec<Vec<usize>>,
    in_links: Vec<Vec<usize>>,
    l_max: usize,
}

impl NetworkGraph {
    /// Builds and validates a graph. `measuring` lists the zero-based sensors
    /// that observe a source; the rest act as relays. Side-information mode is
    /// enabled when the collector appears in the link list.
    pub fn new(num_sensors: usize, measuring: &[usize], links: Vec<Link>) -> Result<Self> {
        if num_sensors == 0 {
            return Err(Error::Topology("at least one sensor is required".into()));
        }
        let mut is_measuring = vec![false; num_sensors];
        for &m in measuring {
            if m >= num_sensors {
                return Err(Error::Topology(format!("measuring node {} is not declared", m + 1)));
            }
            is_measuring[m] = true;
        }
        if !is_measuring.iter().any(|&b| b) {
            return Err(Error::Topology("no measuring node".into()));
        }
        if measuring.len() > 16 {
            return Err(Error::TooLarge("at most 16 measuring nodes are supported".into()));
        }
        let side_info = links.iter().any(|l| l.from == Vertex::Collector || l.to == Vertex::Collector);
        let agents = num_sensors + 1;
        let mut out_links = vec![Vec::new(); agents];
        let mut in_links = vec![Vec::new(); agents];
        let mut collector_links = 0;
        for (id, l) in links.iter().enumerate() {
            if l.from == l.to {
                return Err(Error::Topology(format!("self-loop at {}", l.from)));
            }
            for v in [l.from, l.to] {
                if let Vertex::Sensor(i) = v {
                    if i >= num_sensors {
                        return Err(Error::Topology(format!("link endpoint {v} is not declared")));
                    }
                }
            }
            if links[..id].contains(l) {
                return Err(Error::Topology(format!("duplicate link {}->{}", l.from, l.to)));
            }
            match (l.from, l.to) {
                (Vertex::Collector, _) => {
                    return Err(Error::Topology("the collector cannot transmit".into()))
                }
                (Vertex::Sink, Vertex::Collector) => collector_links += 1,
                (_, Vertex::Collector) => {
                    return Err(Error::Topology("only the sink may link to the collector".into()))
                }
                (Vertex::Sink, _) => {
                    return Err(Error::Topology("the sink may only transmit to the collector".into()))
                }
                _ => {}
            }
            let from = agent_index(num_sensors, l.from).expect("transmitter is an agent");
            out_links[from].push(id);
            if let Some(to) = agent_index(num_sensors, l.to) {
                in_links[to].push(id);
            }
        }
        if side_info && collector_links != 1 {
            return Err(Error::Topology("side-information mode needs exactly one sink->collector link".into()));
        }
        let l_max = out_links
            .iter()
            .zip(&in_links)
            .map(|(o, i)| o.len().max(i.len()))
            .max()
            .unwrap_or(0)
            .max(1);
        Ok(Self { num_sensors, measuring: is_measuring, links, side_info, out_links, in_links, l_max })
    }

    /// The default five-node relay topology:
    /// sensors 1-3 measure, 4 and 5 relay to the sink. With `side_info` the
    /// sink additionally reports to the collector.
    pub fn relay_five(side_info: bool) -> Self {
        let s = Vertex::Sensor;
        let mut links = vec![
            Link::new(s(0), s(3)),
            Link::new(s(1), s(3)),
            Link::new(s(1), s(4)),
            Link::new(s(2), s(4)),
            Link::new(s(3), Vertex::Sink),
            Link::new(s(4), Vertex::Sink),
        ];
        if side_info {
            links.push(Link::new(Vertex::Sink, Vertex::Collector));
        }
        Self::new(5, &[0, 1, 2], links).expect("built-in topology is valid")
    }

    pub fn num_sensors(&self) -> usize {
        self.num_sensors
    }

    /// Sensors plus the sink.
    pub fn num_agents(&self) -> usize {
        self.num_sensors + 1
    }

    pub fn sink_agent(&self) -> usize {
        self.num_sensors
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, id: usize) -> Result<&Link> {
        self.links.get(id).ok_or(Error::UnknownLink(id))
    }

    pub fn is_side_info(&self) -> bool {
        self.side_info
    }

    pub fn is_measuring(&self, sensor: usize) -> bool {
        self.measuring.get(sensor).copied().unwrap_or(false)
    }

    /// Zero-based indices of measuring sensors in ascending order.
    pub fn measuring_nodes(&self) -> Vec<usize> {
        (0..self.num_sensors).filter(|&i| self.measuring[i]).collect()
    }

    pub fn num_measuring(&self) -> usize {
        self.measuring.iter().filter(|&&b| b).count()
    }

    /// Link ids leaving an agent, in ascending order.
    pub fn out_links(&self, agent: usize) -> &[usize] {
        &self.out_links[agent]
    }

    /// Link ids entering an agent, in ascending order.
    pub fn in_links(&self, agent: usize) -> &[usize] {
        &self.in_links[agent]
    }

    /// Agents that hold a data queue and a battery in the current mode.
    pub fn active_agents(&self) -> usize {
        if self.side_info {
            self.num_agents()
        } else {
            self.num_sensors
        }
    }

    /// Largest number of links incident to one agent, counting incoming and
    /// outgoing links separately.
    pub fn l_max(&self) -> usize {
        self.l_max
    }

    pub fn agent_of(&self, v: Vertex) -> Option<usize> {
        agent_index(self.num_sensors, v)
    }

    pub fn from_agent(&self, link: usize) -> usize {
        self.agent_of(self.links[link].from).expect("transmitter is an agent")
    }

    pub fn to_agent(&self, link: usize) -> Option<usize> {
        self.agent_of(self.links[link].to)
    }
}

fn agent_index(num_sensors: usize, v: Vertex) -> Option<usize> {
    match v {
        Vertex::Sensor(i) => Some(i),
        Vertex::Sink => Some(num_sensors),
        Vertex::Collector => None,
    }
}

/// Bounds and coefficients shared by every slot.
///
/// `alpha` and `h_max` are indexed by agent; the sink entry is only used in
/// side-information mode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalParams {
    pub p_max: f64,
    pub r_max: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub h_max: Vec<f64>,
    pub mu_max: f64,
    /// Channel uses per source sample.
    pub b: f64,
    pub alpha: Vec<f64>,
    /// Slope constant with `C(P, S) <= xi * P` for every admissible gain.
    pub xi: f64,
}

impl GlobalParams {
    pub fn validate(&self, graph: &NetworkGraph) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Parameter(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("p_max", self.p_max)?;
        pos("r_max", self.r_max)?;
        pos("d_min", self.d_min)?;
        pos("mu_max", self.mu_max)?;
        pos("b", self.b)?;
        pos("xi", self.xi)?;
        if !(self.d_max >= self.d_min && self.d_max.is_finite()) {
            return Err(Error::Parameter("need d_min <= d_max < inf".into()));
        }
        let n = graph.num_agents();
        if self.alpha.len() != n || self.h_max.len() != n {
            return Err(Error::Parameter(format!("alpha and h_max need {n} entries")));
        }
        if self.alpha.iter().any(|&a| !(a >= 0.0 && a.is_finite())) {
            return Err(Error::Parameter("alpha must be nonnegative".into()));
        }
        for a in 0..graph.active_agents() {
            pos("h_max", self.h_max[a])?;
        }
        Ok(())
    }

    /// `min(alpha, 1)`, the coefficient linking rate cost to energy in the
    /// perturbation weight.
    pub fn beta(&self, agent: usize) -> f64 {
        self.alpha[agent].min(1.0)
    }

    /// Offset subtracted from backlog differentials in the link weights.
    pub fn delta(&self, graph: &NetworkGraph) -> f64 {
        graph.l_max() as f64 * self.mu_max + self.r_max / self.b
    }
}

/// Exogenous randomness of one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct SlotState {
    /// Channel power gain per link id.
    pub gains: Vec<f64>,
    /// Source correlation over measuring nodes, in measuring order.
    pub correlation: DMatrix<f64>,
    /// Harvestable energy per agent.
    pub harvest: Vec<f64>,
}

impl SlotState {
    pub fn validate(&self, graph: &NetworkGraph, params: &GlobalParams) -> Result<()> {
        if self.gains.len() != graph.links().len() || self.gains.iter().any(|&g| !(g >= 0.0)) {
            return Err(Error::OutOfRange("channel gains must be nonnegative, one per link".into()));
        }
        if self.harvest.len() != graph.num_agents() {
            return Err(Error::OutOfRange("one harvest entry per agent required".into()));
        }
        for (a, &h) in self.harvest.iter().enumerate() {
            if !(h >= 0.0 && h <= params.h_max[a] + 1e-12) {
                return Err(Error::OutOfRange(format!("harvest {h} outside [0, H_max] at agent {a}")));
            }
        }
        let k = graph.num_measuring();
        let o = &self.correlation;
        if o.nrows() != k || o.ncols() != k {
            return Err(Error::OutOfRange("correlation size must match measuring nodes".into()));
        }
        for i in 0..k {
            if (o[(i, i)] - 1.0).abs() > 1e-9 {
                return Err(Error::OutOfRange("correlation needs a unit diagonal".into()));
            }
            for j in 0..i {
                if (o[(i, j)] - o[(j, i)]).abs() > 1e-12 {
                    return Err(Error::OutOfRange("correlation must be symmetric".into()));
                }
            }
        }
        Ok(())
    }
}

/// Data backlogs and battery levels per agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub backlog: Vec<f64>,
    pub battery: Vec<f64>,
}

impl QueueState {
    pub fn new(backlog: Vec<f64>, battery: Vec<f64>) -> Self {
        Self { backlog, battery }
    }

    /// Sum of sensor backlogs.
    pub fn network_queue(&self, graph: &NetworkGraph) -> f64 {
        self.backlog[..graph.num_sensors()].iter().sum()
    }
}

/// Everything the controller chooses in one slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotDecision {
    /// Compression rate per sensor (zero for relays).
    pub rates: Vec<f64>,
    /// Distortion per sensor (`d_max` for relays).
    pub distortions: Vec<f64>,
    /// Harvested energy per agent.
    pub harvested: Vec<f64>,
    /// Transmit power per link id.
    pub powers: Vec<f64>,
    /// Side-information acquisition rate at the sink.
    pub side_rate: f64,
}

impl SlotDecision {
    pub fn idle(graph: &NetworkGraph, params: &GlobalParams) -> Self {
        Self {
            rates: vec![0.0; graph.num_sensors()],
            distortions: vec![params.d_max; graph.num_sensors()],
            harvested: vec![0.0; graph.num_agents()],
            powers: vec![0.0; graph.links().len()],
            side_rate: 0.0,
        }
    }

    /// Energy an agent spends on transmission and compression this slot.
    pub fn spending(&self, graph: &NetworkGraph, params: &GlobalParams, agent: usize) -> f64 {
        let tx: f64 = graph.out_links(agent).iter().map(|&l| self.powers[l]).sum();
        let rate = if agent == graph.sink_agent() { self.side_rate } else { self.rates[agent] };
        tx + params.alpha[agent] * rate
    }
}

/// Interference-free link capacity `min(log(1 + p s), mu_max)`.
#[inline]
pub fn link_capacity(p: f64, s: f64, mu_max: f64) -> f64 {
    log(1.0 + p * s).min(mu_max)
}

/// Capacity of one link under a full power vector.
pub fn capacity(graph: &NetworkGraph, powers: &[f64], gains: &[f64], link: usize, mu_max: f64) -> Result<f64> {
    graph.link(link)?;
    Ok(link_capacity(powers[link], gains[link], mu_max))
}

/// Capacity treating concurrent transmissions into the same receiver as
/// noise. Provided for evaluation only; the allocator uses [`link_capacity`].
pub fn capacity_with_interference(
    graph: &NetworkGraph,
    powers: &[f64],
    gains: &[f64],
    link: usize,
    noise: f64,
    mu_max: f64,
) -> Result<f64> {
    let target = *graph.link(link)?;
    let interference: f64 = graph
        .links()
        .iter()
        .enumerate()
        .filter(|(id, l)| *id != link && l.to == target.to && l.from != target.from)
        .map(|(id, _)| powers[id] * gains[id])
        .sum();
    Ok(log(1.0 + powers[link] * gains[link] / (noise + interference)).min(mu_max))
}

/// Capacity of every link under the interference-free model.
pub fn link_rates(powers: &[f64], gains: &[f64], mu_max: f64) -> Vec<f64> {
    powers.iter().zip(gains).map(|(&p, &s)| link_capacity(p, s, mu_max)).collect()
}

pub fn total_out_rate(graph: &NetworkGraph, agent: usize, rates: &[f64]) -> f64 {
    graph.out_links(agent).iter().map(|&l| rates[l]).sum()
}

pub fn total_in_rate(graph: &NetworkGraph, agent: usize, rates: &[f64]) -> f64 {
    graph.in_links(agent).iter().map(|&l| rates[l]).sum()
}

/// Energy spent compressing at rate `r`.
pub fn compression_power(params: &GlobalParams, agent: usize, r: f64) -> Result<f64> {
    if !(0.0..=params.r_max * (1.0 + 1e-12)).contains(&r) {
        return Err(Error::OutOfRange(format!("rate {r} outside [0, R_max]")));
    }
    Ok(params.alpha[agent] * r)
}

/// One battery update. Spending more than the stored energy is an error.
pub fn energy_queue_step(agent: usize, battery: f64, power: f64, compression: f64, harvested: f64) -> Result<f64> {
    let spend = power + compression;
    if spend > battery * (1.0 + 1e-12) + 1e-12 {
        return Err(Error::EnergyCausality { agent, spend, battery });
    }
    Ok((battery - spend).max(0.0) + harvested)
}

/// Result of moving data through the network for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowOutcome {
    pub backlog: Vec<f64>,
    /// Bits actually carried on each link.
    pub carried: Vec<f64>,
    /// Bits that left the queued part of the network (into the sink in plain
    /// mode, into the collector in side-information mode).
    pub delivered: f64,
}

/// Advances data backlogs. Each agent sends `min(remaining backlog, capacity)`
/// on its outgoing links in ascending link-id order, using only the backlog
/// present at the start of the slot. Receivers enqueue exactly the carried
/// bits, and each sensor also enqueues `rate / b` freshly compressed bits.
/// In plain mode the sink keeps no backlog.
pub fn data_queue_step(
    graph: &NetworkGraph,
    backlog: &[f64],
    rates: &[f64],
    capacities: &[f64],
    b: f64,
) -> FlowOutcome {
    let mut next = backlog.to_vec();
    let mut carried = vec![0.0; graph.links().len()];
    let mut delivered = 0.0;
    for agent in 0..graph.num_agents() {
        let mut remaining = backlog[agent];
        for &l in graph.out_links(agent) {
            let sent = remaining.min(capacities[l]).max(0.0);
            remaining -= sent;
            carried[l] = sent;
        }
        next[agent] = remaining;
    }
    for (l, &bits) in carried.iter().enumerate() {
        match graph.to_agent(l) {
            Some(a) if a == graph.sink_agent() && !graph.is_side_info() => delivered += bits,
            Some(a) => next[a] += bits,
            None => delivered += bits,
        }
    }
    for (n, &r) in rates.iter().enumerate() {
        next[n] += r / b;
    }
    if !graph.is_side_info() {
        next[graph.sink_agent()] = 0.0;
    }
    FlowOutcome { backlog: next, carried, delivered }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain() -> NetworkGraph {
        NetworkGraph::new(
            2,
            &[0],
            vec![
                Link::new(Vertex::Sensor(0), Vertex::Sensor(1)),
                Link::new(Vertex::Sensor(1), Vertex::Sink),
            ],
        )
        .unwrap()
    }

    #[test]
    fn capacity_values() {
        assert_eq!(link_capacity(0.0, 3.0, 10.0), 0.0);
        assert!((link_capacity(1.0, 1.0, 10.0) - 2f64.ln()).abs() < 1e-15);
        assert_eq!(link_capacity(1e9, 1.0, 2.0), 2.0);
    }

    #[test]
    fn unknown_link_is_error() {
        let g = chain();
        assert_eq!(capacity(&g, &[0.0; 2], &[1.0; 2], 7, 1.0), Err(Error::UnknownLink(7)));
    }

    #[test]
    fn out_and_in_rates_sum() {
        let g = NetworkGraph::new(
            3,
            &[0, 1, 2],
            vec![
                Link::new(Vertex::Sensor(0), Vertex::Sink),
                Link::new(Vertex::Sensor(1), Vertex::Sink),
                Link::new(Vertex::Sensor(2), Vertex::Sink),
                Link::new(Vertex::Sensor(0), Vertex::Sensor(1)),
            ],
        )
        .unwrap();
        let rates = [0.5, 0.2, 0.3, 0.25];
        assert!((total_out_rate(&g, 0, &rates) - 0.75).abs() < 1e-15);
        assert!((total_in_rate(&g, g.sink_agent(), &rates) - 1.0).abs() < 1e-15);
        assert_eq!(total_out_rate(&g, 2, &[0.0; 4]), 0.0);
        assert_eq!(g.l_max(), 3);
    }

    #[test]
    fn graph_validation() {
        let s = Vertex::Sensor;
        assert!(NetworkGraph::new(2, &[0], vec![Link::new(s(0), s(0))]).is_err());
        assert!(NetworkGraph::new(2, &[0], vec![Link::new(s(0), s(5))]).is_err());
        assert!(NetworkGraph::new(2, &[0], vec![Link::new(s(0), Vertex::Collector)]).is_err());
        assert!(NetworkGraph::new(2, &[0], vec![Link::new(Vertex::Sink, s(0))]).is_err());
        let g = NetworkGraph::relay_five(true);
        assert!(g.is_side_info());
        assert_eq!(g.l_max(), 2);
        assert_eq!("d".parse::<Vertex>().unwrap(), Vertex::Sink);
        assert_eq!("3".parse::<Vertex>().unwrap(), Vertex::Sensor(2));
        assert!("0".parse::<Vertex>().is_err());
    }

    #[test]
    fn compression_and_energy_steps() {
        let g = chain();
        let p = GlobalParams {
            p_max: 1.0,
            r_max: 5.0,
            d_min: 0.1,
            d_max: 1.0,
            h_max: vec![1.0; 3],
            mu_max: 1.0,
            b: 1.0,
            alpha: vec![1.0, 0.5, 0.0],
            xi: 1.0,
        };
        assert_eq!(compression_power(&p, 0, 0.0).unwrap(), 0.0);
        assert_eq!(compression_power(&p, 0, 3.0).unwrap(), 3.0);
        assert_eq!(compression_power(&p, 1, 2.0).unwrap(), 1.0);
        assert!(compression_power(&p, 0, 6.0).is_err());
        assert_eq!(energy_queue_step(0, 5.0, 1.0, 1.0, 0.0).unwrap(), 3.0);
        assert_eq!(energy_queue_step(0, 5.0, 0.0, 0.0, 2.0).unwrap(), 7.0);
        assert!(energy_queue_step(0, 1.0, 1.0, 0.5, 0.0).is_err());
        assert!(p.validate(&g).is_ok());
    }

    #[test]
    fn min_rule_caps_forwarded_bits() {
        let g = chain();
        let out = data_queue_step(&g, &[1.0, 0.0, 0.0], &[0.0, 0.0], &[5.0, 0.0], 1.0);
        assert_eq!(out.backlog[0], 0.0);
        assert_eq!(out.backlog[1], 1.0);
        assert_eq!(out.carried[0], 1.0);
        let idle = data_queue_step(&g, &[0.0; 3], &[0.0, 0.0], &[0.0, 0.0], 1.0);
        assert_eq!(idle.backlog, vec![0.0; 3]);
    }

    #[test]
    fn chain_hand_trace() {
        // Slot 1: node 1 compresses 2 bits, nothing to forward yet.
        // Slot 2: node 1 forwards 1.5 of 2, node 2 has nothing queued.
        // Slot 3: node 1 forwards 0.5, node 2 forwards 1 of 1.5 to the sink.
        let g = chain();
        let mut u = vec![0.0; 3];
        let plan = [([2.0, 0.0], [1.0, 1.0]), ([0.0, 0.0], [1.5, 1.0]), ([0.0, 0.0], [3.0, 1.0])];
        let mut delivered = 0.0;
        let mut trace = Vec::new();
        for (rates, caps) in plan {
            let out = data_queue_step(&g, &u, &rates, &caps, 1.0);
            delivered += out.delivered;
            u = out.backlog;
            trace.push((u[0], u[1]));
        }
        assert_eq!(trace, vec![(2.0, 0.0), (0.5, 1.5), (0.0, 1.0)]);
        assert_eq!(delivered, 1.0);
    }

    #[test]
    fn interference_never_helps() {
        let g = NetworkGraph::new(
            2,
            &[0, 1],
            vec![Link::new(Vertex::Sensor(0), Vertex::Sink), Link::new(Vertex::Sensor(1), Vertex::Sink)],
        )
        .unwrap();
        let gains = [1.0, 2.0];
        let with = capacity_with_interference(&g, &[1.0, 1.0], &gains, 0, 1.0, 10.0).unwrap();
        let without = capacity_with_interference(&g, &[1.0, 0.0], &gains, 0, 1.0, 10.0).unwrap();
        assert!(with <= without);
        assert!((without - 2f64.ln()).abs() < 1e-15);
    }
}
