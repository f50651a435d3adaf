//! Independent integer-arithmetic model of the environment rules, shared by
//! the oracle tests and the acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use specseek::env::Scheme;
use specseek::harness::{GraphEdge, GraphNode};

/// Brute-force model working in integer Hz. Depth is tracked as the ladder
/// index rather than derived from a logarithm.
pub struct Brute {
    pub fc_min: i64,
    pub fc_max: i64,
    pub bw_max: i64,
    pub levels: u32,
    pub scheme: Scheme,
    pub signals: Vec<i64>,
}

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord)]
struct BState {
    fc: i64,
    level: u32,
    found: Vec<bool>,
    credit: Vec<u32>,
    depth_at: Vec<u32>,
}

impl Brute {
    /// The 100–200 MHz band with a 20 MHz window and two halvings.
    pub fn tiny(scheme: Scheme, signals_mhz: &[i64]) -> Self {
        Self {
            fc_min: 100_000_000,
            fc_max: 200_000_000,
            bw_max: 20_000_000,
            levels: 2,
            scheme,
            signals: signals_mhz.iter().map(|m| m * 1_000_000).collect(),
        }
    }


    fn bw(&self, level: u32) -> i64 {
        self.bw_max >> level
    }

    fn clamp(&self, fc: i64, bw: i64) -> i64 {
        fc.max(self.fc_min + bw / 2).min(self.fc_max - bw / 2)
    }

    fn inside(&self, fc: i64, bw: i64, f: i64) -> bool {
        2 * (f - fc).abs() <= bw
    }

    fn node(&self, s: &BState) -> GraphNode {
        GraphNode {
            fc_hz: s.fc,
            bw_hz: self.bw(s.level),
            found: s.found.clone(),
            zoom_credit: s.credit.clone(),
            detect_depths: s.depth_at.clone(),
        }
    }

    fn step(&self, s: &BState, code: usize) -> (BState, &'static str, i64) {
        let mut n = s.clone();
        let bw = self.bw(s.level);
        let mut event = "Move";
        match code {
            0 => n.fc = self.clamp(s.fc - bw / 2, bw),
            1 => n.fc = self.clamp(s.fc + bw / 2, bw),
            2 | 3 => {
                n.level = (s.level + 1).min(self.levels);
                let nb = self.bw(n.level);
                let moved = if code == 2 { s.fc - nb / 2 } else { s.fc + nb / 2 };
                n.fc = self.clamp(moved, nb);
                event = "BwFalse";
                for i in 0..self.signals.len() {
                    if !n.found[i] && self.inside(n.fc, nb, self.signals[i]) && n.level > n.credit[i] {
                        n.credit[i] = n.level;
                        event = "BwTrue";
                    }
                }
            }
            4 => {
                n.level = 0;
                n.fc = self.clamp(s.fc, self.bw_max);
            }
            5 => {
                event = "DetectFalse";
                if let Some(i) = (0..self.signals.len()).find(|&i| !s.found[i] && self.inside(s.fc, bw, self.signals[i])) {
                    n.found[i] = true;
                    n.depth_at[i] = s.level;
                    event = "DetectTrue";
                }
            }
            6 => event = if s.found.iter().all(|&f| f) { "FinishTrue" } else { "FinishFalse" },
            _ => unreachable!(),
        }
        let reward = match (self.scheme, event) {
            (Scheme::C, "FinishTrue") => 1000 * n.depth_at.iter().map(|&d| d as i64).sum::<i64>(),
            (Scheme::C, _) => 0,
            (_, "DetectTrue" | "BwTrue" | "FinishTrue") => 1000,
            (Scheme::B, "DetectFalse" | "FinishFalse") => -1000,
            _ => 0,
        };
        (n, event, reward)
    }

    pub fn graph(&self) -> Vec<GraphEdge> {
        let k = self.signals.len();
        let start = BState {
            fc: (self.fc_min + self.fc_max) / 2,
            level: 0,
            found: vec![false; k],
            credit: vec![0; k],
            depth_at: vec![0; k],
        };
        let mut seen = BTreeSet::new();
        seen.insert(start.clone());
        let mut queue = VecDeque::from([start]);
        let mut edges = Vec::new();
        while let Some(s) = queue.pop_front() {
            for code in 0..7 {
                let (n, event, reward) = self.step(&s, code);
                let to = if code == 6 {
                    None
                } else {
                    if seen.insert(n.clone()) {
                        queue.push_back(n.clone());
                    }
                    Some(self.node(&n))
                };
                edges.push(GraphEdge { from: self.node(&s), action: code, to, event: event.into(), reward_milli: reward });
            }
        }
        edges.sort();
        edges
    }
}

/// Shortest FinishTrue path in the brute-force model.
pub fn brute_shortest(brute: &Brute) -> usize {
    let mut by_node: BTreeMap<GraphNode, Vec<GraphEdge>> = BTreeMap::new();
    for e in brute.graph() {
        by_node.entry(e.from.clone()).or_default().push(e);
    }
    let k = brute.signals.len();
    let start = GraphNode {
        fc_hz: (brute.fc_min + brute.fc_max) / 2,
        bw_hz: brute.bw_max,
        found: vec![false; k],
        zoom_credit: vec![0; k],
        detect_depths: vec![0; k],
    };
    let mut dist = BTreeMap::new();
    dist.insert(start.clone(), 0usize);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        let d = dist[&n];
        for e in &by_node[&n] {
            if e.event == "FinishTrue" {
                return d + 1;
            }
            if let Some(to) = &e.to {
                if !dist.contains_key(to) {
                    dist.insert(to.clone(), d + 1);
                    queue.push_back(to.clone());
                }
            }
        }
    }
    usize::MAX
}

