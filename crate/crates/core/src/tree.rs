//! Interconnect tree model: geometry, currents and material constants of a
//! multi-segment wire tree, plus the synthetic generator and the `emtree v1`
//! text format.

use std::collections::VecDeque;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{EmError, Result};

/// Tolerance between a segment's stated length and its endpoint distance.
pub const LENGTH_TOLERANCE_M: f64 = 1e-9;

/// Physical constants shared by every segment of a tree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    /// Effective atomic diffusivity D_a (m²/s).
    pub diffusivity_base: f64,
    /// Effective bulk modulus B (Pa).
    pub bulk_modulus: f64,
    /// Atomic volume Ω (m³).
    pub atomic_volume: f64,
    /// Boltzmann constant k_B (J/K).
    pub boltzmann: f64,
    /// Absolute temperature T (K).
    pub temperature: f64,
    /// Elementary charge e (C).
    pub electron_charge: f64,
    /// Copper resistivity ρ (Ω·m).
    pub resistivity_cu: f64,
    /// Effective charge number Z* (dimensionless).
    pub effective_charge: f64,
    /// Barrier (Ta/TaN) resistivity (Ω·m).
    pub resistivity_ta: f64,
    /// Barrier thickness (m).
    pub barrier_thickness: f64,
    /// Effective void thickness δ used by the Robin condition (m).
    pub void_thickness: f64,
    /// Critical nucleation stress (Pa).
    pub critical_stress: f64,
    /// Critical void volume (m³). `None` means W²·H of the voided segment.
    pub critical_void_volume: Option<f64>,
}

impl Default for MaterialParams {
    fn default() -> Self {
        Self {
            diffusivity_base: 5.0e-17,
            bulk_modulus: 1.0e11,
            atomic_volume: 1.18e-29,
            boltzmann: 1.380649e-23,
            temperature: 373.15,
            electron_charge: 1.602176634e-19,
            resistivity_cu: 2.25e-8,
            effective_charge: 1.0,
            resistivity_ta: 2.0e-6,
            barrier_thickness: 5.0e-9,
            void_thickness: 1.0e-9,
            critical_stress: 1.0e8,
            critical_void_volume: None,
        }
    }
}

/// Parameter names in file order. `critical_void_volume` is optional.
const PARAM_NAMES: [&str; 13] = [
    "diffusivity_base",
    "bulk_modulus",
    "atomic_volume",
    "boltzmann",
    "temperature",
    "electron_charge",
    "resistivity_cu",
    "effective_charge",
    "resistivity_ta",
    "barrier_thickness",
    "void_thickness",
    "critical_stress",
    "critical_void_volume",
];

impl MaterialParams {
    fn slot(&mut self, name: &str) -> Option<&mut f64> {
        Some(match name {
            "diffusivity_base" => &mut self.diffusivity_base,
            "bulk_modulus" => &mut self.bulk_modulus,
            "atomic_volume" => &mut self.atomic_volume,
            "boltzmann" => &mut self.boltzmann,
            "temperature" => &mut self.temperature,
            "electron_charge" => &mut self.electron_charge,
            "resistivity_cu" => &mut self.resistivity_cu,
            "effective_charge" => &mut self.effective_charge,
            "resistivity_ta" => &mut self.resistivity_ta,
            "barrier_thickness" => &mut self.barrier_thickness,
            "void_thickness" => &mut self.void_thickness,
            "critical_stress" => &mut self.critical_stress,
            _ => return None,
        })
    }

    fn entries(&self) -> Vec<(&'static str, f64)> {
        let mut out = vec![
            (PARAM_NAMES[0], self.diffusivity_base),
            (PARAM_NAMES[1], self.bulk_modulus),
            (PARAM_NAMES[2], self.atomic_volume),
            (PARAM_NAMES[3], self.boltzmann),
            (PARAM_NAMES[4], self.temperature),
            (PARAM_NAMES[5], self.electron_charge),
            (PARAM_NAMES[6], self.resistivity_cu),
            (PARAM_NAMES[7], self.effective_charge),
            (PARAM_NAMES[8], self.resistivity_ta),
            (PARAM_NAMES[9], self.barrier_thickness),
            (PARAM_NAMES[10], self.void_thickness),
            (PARAM_NAMES[11], self.critical_stress),
        ];
        if let Some(v) = self.critical_void_volume {
            out.push((PARAM_NAMES[12], v));
        }
        out
    }

    /// Every constant must be finite and strictly positive.
    pub fn validate(&self) -> Result<()> {
        for (name, value) in self.entries() {
            if !(value.is_finite() && value > 0.0) {
                return Err(EmError::Semantic(format!(
                    "material parameter {name} must be finite and > 0, got {value}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    /// Blocking wire end (degree 1).
    Terminal,
    /// Point where three or more segments meet.
    Junction,
    /// Series connection of exactly two segments.
    Interior,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Terminal => "terminal",
            NodeKind::Junction => "junction",
            NodeKind::Interior => "interior",
        }
    }

    fn parse(token: &str) -> Option<Self> {
        match token {
            "terminal" | "terminal-boundary" => Some(NodeKind::Terminal),
            "junction" => Some(NodeKind::Junction),
            "interior" => Some(NodeKind::Interior),
            _ => None,
        }
    }

    pub fn for_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => NodeKind::Terminal,
            2 => NodeKind::Interior,
            _ => NodeKind::Junction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub id: usize,
    /// (x, y) in metres.
    pub position: (f64, f64),
    pub kind: NodeKind,
}

/// A straight wire piece between two tree nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub id: usize,
    pub node_a: usize,
    pub node_b: usize,
    /// Length (m).
    pub length: f64,
    /// Width (m).
    pub width: f64,
    /// Thickness (m).
    pub height: f64,
    /// Current density (A/m²), positive along node_a → node_b.
    pub current_density: f64,
}

impl Segment {
    pub fn cross_section(&self) -> f64 {
        self.width * self.height
    }

    pub fn other_end(&self, node: usize) -> usize {
        if node == self.node_a {
            self.node_b
        } else {
            self.node_a
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterconnectTree {
    nodes: Vec<TreeNode>,
    segments: Vec<Segment>,
    materials: MaterialParams,
}

/// Summary lengths used by the shift-time estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeStats {
    /// Mean segment length (m).
    pub l_avg: f64,
    /// Longest node-to-node path length (m).
    pub l_max: f64,
    pub n_segments: usize,
    pub n_nodes: usize,
}

impl InterconnectTree {
    /// Validates and builds a tree. Nodes and segments may be given in any
    /// order; they are stored sorted by id.
    pub fn new(
        mut nodes: Vec<TreeNode>,
        mut segments: Vec<Segment>,
        materials: MaterialParams,
    ) -> Result<Self> {
        materials.validate()?;
        nodes.sort_by_key(|n| n.id);
        segments.sort_by_key(|s| s.id);

        for pair in nodes.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(EmError::Semantic(format!("duplicate node id {}", pair[0].id)));
            }
        }
        for (idx, node) in nodes.iter().enumerate() {
            if node.id != idx {
                return Err(EmError::Semantic(format!(
                    "node ids must be dense 0..{}; id {} is missing",
                    nodes.len(),
                    idx
                )));
            }
            if !(node.position.0.is_finite() && node.position.1.is_finite()) {
                return Err(EmError::Semantic(format!("node {} has a non-finite position", node.id)));
            }
        }
        for pair in segments.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(EmError::Semantic(format!("duplicate segment id {}", pair[0].id)));
            }
        }
        for (idx, seg) in segments.iter().enumerate() {
            if seg.id != idx {
                return Err(EmError::Semantic(format!(
                    "segment ids must be dense 0..{}; id {} is missing",
                    segments.len(),
                    idx
                )));
            }
        }
        if segments.is_empty() {
            return Err(EmError::Semantic("tree has no segments".into()));
        }

        let n = nodes.len();
        let mut degree = vec![0usize; n];
        let mut dsu = DisjointSet::new(n);
        for seg in &segments {
            for end in [seg.node_a, seg.node_b] {
                if end >= n {
                    return Err(EmError::Semantic(format!(
                        "segment {} references undefined node {}",
                        seg.id, end
                    )));
                }
            }
            if seg.node_a == seg.node_b {
                return Err(EmError::Semantic(format!(
                    "segment {} connects node {} to itself",
                    seg.id, seg.node_a
                )));
            }
            for (name, value) in [("length", seg.length), ("width", seg.width), ("height", seg.height)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(EmError::Semantic(format!(
                        "segment {} has nonpositive {name} {value}",
                        seg.id
                    )));
                }
            }
            if !seg.current_density.is_finite() {
                return Err(EmError::Semantic(format!(
                    "segment {} has a non-finite current density",
                    seg.id
                )));
            }
            let (pa, pb) = (nodes[seg.node_a].position, nodes[seg.node_b].position);
            let dist = (pa.0 - pb.0).hypot(pa.1 - pb.1);
            if (dist - seg.length).abs() > LENGTH_TOLERANCE_M {
                return Err(EmError::Semantic(format!(
                    "segment {} length {:e} m disagrees with endpoint distance {:e} m",
                    seg.id, seg.length, dist
                )));
            }
            if !dsu.union(seg.node_a, seg.node_b) {
                return Err(EmError::Semantic(format!(
                    "segment {} closes a cycle between nodes {} and {}",
                    seg.id, seg.node_a, seg.node_b
                )));
            }
            degree[seg.node_a] += 1;
            degree[seg.node_b] += 1;
        }
        if segments.len() + 1 != n {
            return Err(EmError::Semantic(format!(
                "tree is disconnected: {} nodes but {} segments",
                n,
                segments.len()
            )));
        }
        for node in &nodes {
            let expected = NodeKind::for_degree(degree[node.id]);
            if node.kind != expected {
                return Err(EmError::Semantic(format!(
                    "node {} is declared {} but has degree {}",
                    node.id,
                    node.kind.as_str(),
                    degree[node.id]
                )));
            }
        }

        Ok(Self { nodes, segments, materials })
    }

    /// Builds a tree by growing one segment per spec from an existing node.
    /// Node 0 sits at the origin; spec `i` creates node `i + 1`.
    pub fn grow(specs: &[SegmentSpec], materials: MaterialParams) -> Result<Self> {
        let mut positions = vec![(0.0f64, 0.0f64)];
        let mut segments = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            if spec.parent >= positions.len() {
                return Err(EmError::Parameter(format!(
                    "segment spec {i} attaches to node {} which does not exist yet",
                    spec.parent
                )));
            }
            let (px, py) = positions[spec.parent];
            let (dx, dy) = spec.direction.unit();
            positions.push((px + dx * spec.length, py + dy * spec.length));
            segments.push(Segment {
                id: i,
                node_a: spec.parent,
                node_b: i + 1,
                length: spec.length,
                width: spec.width,
                height: spec.height,
                current_density: spec.current_density,
            });
        }
        let mut degree = vec![0usize; positions.len()];
        for s in &segments {
            degree[s.node_a] += 1;
            degree[s.node_b] += 1;
        }
        let nodes = positions
            .into_iter()
            .enumerate()
            .map(|(id, position)| TreeNode { id, position, kind: NodeKind::for_degree(degree[id]) })
            .collect();
        Self::new(nodes, segments, materials)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn materials(&self) -> &MaterialParams {
        &self.materials
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_segments(&self) -> usize {
        self.segments.len()
    }

    /// Returns a copy with different material constants.
    pub fn with_materials(&self, materials: MaterialParams) -> Result<Self> {
        materials.validate()?;
        Ok(Self { materials, ..self.clone() })
    }

    /// Segment ids incident to each node, in increasing id order.
    pub fn incidence(&self) -> Vec<Vec<usize>> {
        let mut inc = vec![Vec::new(); self.nodes.len()];
        for s in &self.segments {
            inc[s.node_a].push(s.id);
            inc[s.node_b].push(s.id);
        }
        inc
    }

    /// Non-fatal modelling concerns (the tree is still usable).
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let l_min = self.segments.iter().map(|s| s.length).fold(f64::INFINITY, f64::min);
        if self.materials.void_thickness > l_min / 100.0 {
            out.push(format!(
                "void thickness {:e} m exceeds 1% of the shortest segment ({:e} m)",
                self.materials.void_thickness, l_min
            ));
        }
        out
    }

    /// Canonical `emtree v1` text.
    pub fn to_text(&self) -> String {
        let mut out = String::from("emtree v1\n");
        for (name, value) in self.materials.entries() {
            let _ = writeln!(out, "param {name} {}", fmt_float(value));
        }
        for n in &self.nodes {
            let _ = writeln!(
                out,
                "node {} {} {} {}",
                n.id,
                fmt_float(n.position.0),
                fmt_float(n.position.1),
                n.kind.as_str()
            );
        }
        for s in &self.segments {
            let _ = writeln!(
                out,
                "seg {} {} {} {} {} {} {}",
                s.id,
                s.node_a,
                s.node_b,
                fmt_float(s.length),
                fmt_float(s.width),
                fmt_float(s.height),
                fmt_float(s.current_density)
            );
        }
        out
    }
}

/// Seventeen significant digits: exact round trip through text.
pub fn fmt_float(x: f64) -> String {
    format!("{x:.16e}")
}

/// Manhattan growth direction used when laying out generated trees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    East,
    North,
    West,
    South,
}

impl Direction {
    const ALL: [Direction; 4] = [Direction::East, Direction::North, Direction::West, Direction::South];

    fn unit(self) -> (f64, f64) {
        match self {
            Direction::East => (1.0, 0.0),
            Direction::North => (0.0, 1.0),
            Direction::West => (-1.0, 0.0),
            Direction::South => (0.0, -1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentSpec {
    pub parent: usize,
    pub direction: Direction,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub current_density: f64,
}

impl SegmentSpec {
    pub fn new(parent: usize, length: f64, width: f64, height: f64, current_density: f64) -> Self {
        Self { parent, direction: Direction::East, length, width, height, current_density }
    }

    pub fn towards(mut self, direction: Direction) -> Self {
        self.direction = direction;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Topology {
    /// Each new segment hangs off a uniformly chosen existing node.
    RandomAttachment,
    /// A single straight chain of segments (a multi-segment wire).
    Path,
}

/// Closed sampling interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        if self.min == self.max {
            self.min
        } else {
            rng.random_range(self.min..=self.max)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub n_segments: usize,
    pub seed: u64,
    pub topology: Topology,
    /// Segment length (m).
    pub length: Range,
    /// Segment width (m).
    pub width: Range,
    /// Segment thickness (m).
    pub height: Range,
    /// Current density (A/m²). With `random_sign` this is the magnitude range.
    pub current_density: Range,
    pub random_sign: bool,
    pub materials: MaterialParams,
}

impl GeneratorConfig {
    pub fn new(n_segments: usize, seed: u64) -> Self {
        Self {
            n_segments,
            seed,
            topology: Topology::RandomAttachment,
            length: Range::new(10e-6, 100e-6),
            width: Range::new(0.1e-6, 1.0e-6),
            height: Range::new(0.2e-6, 0.2e-6),
            current_density: Range::new(1e9, 5e10),
            random_sign: true,
            materials: MaterialParams::default(),
        }
    }

    pub fn path(mut self) -> Self {
        self.topology = Topology::Path;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.n_segments == 0 {
            return Err(EmError::Parameter("n_segments must be at least 1".into()));
        }
        for (name, r, positive) in [
            ("length", self.length, true),
            ("width", self.width, true),
            ("height", self.height, true),
            ("current_density", self.current_density, self.random_sign),
        ] {
            if !(r.min.is_finite() && r.max.is_finite()) || r.min > r.max {
                return Err(EmError::Parameter(format!(
                    "{name} range [{}, {}] is invalid (min > max or non-finite)",
                    r.min, r.max
                )));
            }
            if positive && name != "current_density" && r.min <= 0.0 {
                return Err(EmError::Parameter(format!("{name} range must be positive")));
            }
            if positive && name == "current_density" && r.min < 0.0 {
                return Err(EmError::Parameter(
                    "current-density magnitude range must be nonnegative when signs are random".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Random tree with `n_segments` segments, reproducible for a fixed seed.
pub fn generate_synthetic_tree(cfg: &GeneratorConfig) -> Result<InterconnectTree> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut specs = Vec::with_capacity(cfg.n_segments);
    for i in 0..cfg.n_segments {
        let parent = match cfg.topology {
            Topology::RandomAttachment => rng.random_range(0..=i),
            Topology::Path => i,
        };
        let direction = match cfg.topology {
            Topology::RandomAttachment => Direction::ALL[rng.random_range(0..4)],
            Topology::Path => Direction::East,
        };
        let length = cfg.length.sample(&mut rng);
        let width = cfg.width.sample(&mut rng);
        let height = cfg.height.sample(&mut rng);
        let mut current_density = cfg.current_density.sample(&mut rng);
        if cfg.random_sign && rng.random_bool(0.5) {
            current_density = -current_density;
        }
        specs.push(SegmentSpec { parent, direction, length, width, height, current_density });
    }
    InterconnectTree::grow(&specs, cfg.materials)
}

/// L_avg and the weighted diameter L_max (two farthest-node sweeps).
pub fn tree_stats(tree: &InterconnectTree) -> TreeStats {
    let n_segments = tree.n_segments();
    let l_avg = tree.segments.iter().map(|s| s.length).sum::<f64>() / n_segments as f64;
    let (far, _) = farthest_from(tree, 0);
    let (_, l_max) = farthest_from(tree, far);
    TreeStats { l_avg, l_max, n_segments, n_nodes: tree.n_nodes() }
}

fn farthest_from(tree: &InterconnectTree, start: usize) -> (usize, f64) {
    let inc = tree.incidence();
    let mut dist = vec![f64::NAN; tree.n_nodes()];
    dist[start] = 0.0;
    let mut queue = VecDeque::from([start]);
    let mut best = (start, 0.0);
    while let Some(u) = queue.pop_front() {
        for &sid in &inc[u] {
            let seg = &tree.segments[sid];
            let v = seg.other_end(u);
            if dist[v].is_nan() {
                dist[v] = dist[u] + seg.length;
                if dist[v] > best.1 {
                    best = (v, dist[v]);
                }
                queue.push_back(v);
            }
        }
    }
    best
}

/// Parses `emtree v1` text into a validated tree.
pub fn parse_tree(text: &str) -> Result<InterconnectTree> {
    let mut materials = MaterialParams::default();
    let mut nodes = Vec::new();
    let mut segments = Vec::new();
    let mut seen_header = false;

    for (lineno, raw) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let content = raw.split('#').next().unwrap_or("");
        let tokens = tokenize(content);
        let Some(&(first_col, keyword)) = tokens.first() else {
            continue;
        };
        let syntax = |column: usize, message: String| EmError::Syntax { line: line_no, column, message };

        if !seen_header {
            if keyword == "emtree" && tokens.len() == 2 && tokens[1].1 == "v1" {
                seen_header = true;
                continue;
            }
            return Err(syntax(first_col, "expected header `emtree v1`".into()));
        }

        let expect_len = |n: usize| -> Result<()> {
            if tokens.len() != n {
                let col = tokens.get(n).map(|t| t.0).unwrap_or(content.trim_end().len() + 1);
                return Err(syntax(col, format!("`{keyword}` expects {} fields, found {}", n - 1, tokens.len() - 1)));
            }
            Ok(())
        };
        let int_at = |i: usize| -> Result<usize> {
            let (col, tok) = tokens[i];
            tok.parse::<usize>()
                .map_err(|_| syntax(col, format!("expected a nonnegative integer, found `{tok}`")))
        };
        let float_at = |i: usize| -> Result<f64> {
            let (col, tok) = tokens[i];
            tok.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| syntax(col, format!("expected a finite number, found `{tok}`")))
        };

        match keyword {
            "emtree" => return Err(syntax(first_col, "duplicate header".into())),
            "param" => {
                expect_len(3)?;
                let (col, name) = tokens[1];
                let value = float_at(2)?;
                if name == "critical_void_volume" {
                    materials.critical_void_volume = Some(value);
                } else if let Some(slot) = materials.slot(name) {
                    *slot = value;
                } else {
                    return Err(syntax(col, format!("unknown parameter `{name}`")));
                }
            }
            "node" => {
                expect_len(5)?;
                let id = int_at(1)?;
                let x = float_at(2)?;
                let y = float_at(3)?;
                let (col, kind_tok) = tokens[4];
                let kind = NodeKind::parse(kind_tok)
                    .ok_or_else(|| syntax(col, format!("unknown node kind `{kind_tok}`")))?;
                nodes.push(TreeNode { id, position: (x, y), kind });
            }
            "seg" => {
                expect_len(8)?;
                segments.push(Segment {
                    id: int_at(1)?,
                    node_a: int_at(2)?,
                    node_b: int_at(3)?,
                    length: float_at(4)?,
                    width: float_at(5)?,
                    height: float_at(6)?,
                    current_density: float_at(7)?,
                });
            }
            other => return Err(syntax(first_col, format!("unknown record `{other}`"))),
        }
    }
    if !seen_header {
        return Err(EmError::Syntax { line: 1, column: 1, message: "missing header `emtree v1`".into() });
    }
    InterconnectTree::new(nodes, segments, materials)
}

/// Whitespace tokens with their 1-based byte columns.
fn tokenize(line: &str) -> Vec<(usize, &str)> {
    let mut out = Vec::new();
    let mut start = None;
    for (i, ch) in line.char_indices() {
        if ch.is_whitespace() {
            if let Some(s) = start.take() {
                out.push((s + 1, &line[s..i]));
            }
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push((s + 1, &line[s..]));
    }
    out
}

struct DisjointSet {
    parent: Vec<usize>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns false when both elements were already joined.
    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra] = rb;
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const UM: f64 = 1e-6;

    fn chain(lengths: &[f64]) -> InterconnectTree {
        let specs: Vec<_> = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| SegmentSpec::new(i, l, 0.5 * UM, 0.2 * UM, 1e10))
            .collect();
        InterconnectTree::grow(&specs, MaterialParams::default()).unwrap()
    }

    fn brute_force_diameter(tree: &InterconnectTree) -> f64 {
        (0..tree.n_nodes()).map(|s| farthest_all(tree, s)).fold(0.0, f64::max)
    }

    // Plain DFS distances, independent of the BFS used by tree_stats.
    fn farthest_all(tree: &InterconnectTree, start: usize) -> f64 {
        let inc = tree.incidence();
        let mut stack = vec![(start, usize::MAX, 0.0)];
        let mut best = 0.0f64;
        while let Some((u, from, d)) = stack.pop() {
            best = best.max(d);
            for &sid in &inc[u] {
                let s = &tree.segments()[sid];
                let v = s.other_end(u);
                if v != from {
                    stack.push((v, u, d + s.length));
                }
            }
        }
        best
    }

    #[test]
    fn single_segment_generation() {
        let t = generate_synthetic_tree(&GeneratorConfig::new(1, 42)).unwrap();
        assert_eq!(t.n_nodes(), 2);
        assert_eq!(t.n_segments(), 1);
        assert!(t.nodes().iter().all(|n| n.kind == NodeKind::Terminal));
    }

    #[test]
    fn hundred_segments_form_a_tree() {
        let t = generate_synthetic_tree(&GeneratorConfig::new(100, 7)).unwrap();
        assert_eq!(t.n_segments(), 100);
        assert_eq!(t.n_nodes(), 101);
        let mut dsu = DisjointSet::new(t.n_nodes());
        for s in t.segments() {
            assert!(dsu.union(s.node_a, s.node_b));
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_tree(&GeneratorConfig::new(100, 7)).unwrap().to_text();
        let b = generate_synthetic_tree(&GeneratorConfig::new(100, 7)).unwrap().to_text();
        assert_eq!(a, b);
        let c = generate_synthetic_tree(&GeneratorConfig::new(100, 8)).unwrap().to_text();
        assert_ne!(a, c);
    }

    #[test]
    fn generated_parameters_respect_ranges() {
        let cfg = GeneratorConfig::new(200, 3);
        let t = generate_synthetic_tree(&cfg).unwrap();
        for s in t.segments() {
            assert!((cfg.length.min..=cfg.length.max).contains(&s.length));
            assert!((cfg.width.min..=cfg.width.max).contains(&s.width));
            assert_eq!(s.height, 0.2 * UM);
            let j = s.current_density.abs();
            assert!((cfg.current_density.min..=cfg.current_density.max).contains(&j));
        }
        assert!(t.segments().iter().any(|s| s.current_density < 0.0));
        assert!(t.segments().iter().any(|s| s.current_density > 0.0));
    }

    #[test]
    fn invalid_range_is_a_parameter_error() {
        let mut cfg = GeneratorConfig::new(5, 1);
        cfg.length = Range::new(2e-5, 1e-5);
        assert!(matches!(generate_synthetic_tree(&cfg), Err(EmError::Parameter(_))));
        let zero = GeneratorConfig::new(0, 1);
        assert!(matches!(generate_synthetic_tree(&zero), Err(EmError::Parameter(_))));
    }

    #[test]
    fn signed_current_range_without_random_sign() {
        let mut cfg = GeneratorConfig::new(50, 11);
        cfg.random_sign = false;
        cfg.current_density = Range::new(-1e10, 2e10);
        let t = generate_synthetic_tree(&cfg).unwrap();
        assert!(t.segments().iter().all(|s| (-1e10..=2e10).contains(&s.current_density)));
    }

    #[test]
    fn path_topology_is_a_chain() {
        let t = generate_synthetic_tree(&GeneratorConfig::new(10, 5).path()).unwrap();
        let terminals = t.nodes().iter().filter(|n| n.kind == NodeKind::Terminal).count();
        assert_eq!(terminals, 2);
        let stats = tree_stats(&t);
        let total: f64 = t.segments().iter().map(|s| s.length).sum();
        assert!((stats.l_max - total).abs() < 1e-15);
    }

    #[test]
    fn stats_single_segment() {
        let s = tree_stats(&chain(&[10.0 * UM]));
        assert!((s.l_avg - 10.0 * UM).abs() < 1e-18);
        assert!((s.l_max - 10.0 * UM).abs() < 1e-18);
    }

    #[test]
    fn stats_path_of_three() {
        let s = tree_stats(&chain(&[5.0 * UM; 3]));
        assert!((s.l_avg - 5.0 * UM).abs() < 1e-18);
        assert!((s.l_max - 15.0 * UM).abs() < 1e-17);
    }

    #[test]
    fn stats_star_matches_brute_force() {
        let specs = [
            SegmentSpec::new(0, 2.0 * UM, 0.5 * UM, 0.2 * UM, 0.0),
            SegmentSpec::new(0, 3.0 * UM, 0.5 * UM, 0.2 * UM, 0.0).towards(Direction::North),
            SegmentSpec::new(0, 7.0 * UM, 0.5 * UM, 0.2 * UM, 0.0).towards(Direction::West),
        ];
        let t = InterconnectTree::grow(&specs, MaterialParams::default()).unwrap();
        let s = tree_stats(&t);
        assert!((s.l_avg - 4.0 * UM).abs() < 1e-18);
        assert!((s.l_max - 10.0 * UM).abs() < 1e-17);
        assert!((brute_force_diameter(&t) - 10.0 * UM).abs() < 1e-17);
        assert_eq!(t.nodes()[0].kind, NodeKind::Junction);
    }

    #[test]
    fn two_pass_diameter_matches_all_pairs() {
        for seed in 0..40 {
            let n = 1 + (seed as usize * 7) % 49;
            let t = generate_synthetic_tree(&GeneratorConfig::new(n, seed)).unwrap();
            let s = tree_stats(&t);
            let brute = brute_force_diameter(&t);
            assert!((s.l_max - brute).abs() <= 1e-12 * brute, "seed {seed}");
            assert!(s.l_max >= s.l_avg);
        }
    }

    #[test]
    fn minimal_file_parses_like_generated_tree() {
        let text = "emtree v1\n# one wire\nnode 0 0 0 terminal\nnode 1 1e-5 0 terminal\nseg 0 0 1 1e-5 5e-7 2e-7 1e10\n";
        let parsed = parse_tree(text).unwrap();
        let generated = generate_synthetic_tree(&GeneratorConfig::new(1, 42)).unwrap();
        assert_eq!(parsed.n_nodes(), generated.n_nodes());
        assert_eq!(parsed.n_segments(), generated.n_segments());
        assert_eq!(
            parsed.nodes().iter().map(|n| n.kind).collect::<Vec<_>>(),
            generated.nodes().iter().map(|n| n.kind).collect::<Vec<_>>()
        );
    }

    #[test]
    fn duplicate_node_id_is_named() {
        let text = "emtree v1\nnode 0 0 0 terminal\nnode 0 1e-5 0 terminal\nseg 0 0 1 1e-5 5e-7 2e-7 1e10\n";
        match parse_tree(text) {
            Err(EmError::Semantic(msg)) => assert!(msg.contains("duplicate node id 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn syntax_errors_report_position() {
        let text = "emtree v1\nnode 0 0 0 terminal\nnode 1 abc 0 terminal\n";
        match parse_tree(text) {
            Err(EmError::Syntax { line, column, .. }) => assert_eq!((line, column), (3, 8)),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_tree("node 0 0 0 terminal\n"), Err(EmError::Syntax { line: 1, .. })));
        assert!(matches!(
            parse_tree("emtree v1\nwire 0\n"),
            Err(EmError::Syntax { line: 2, column: 1, .. })
        ));
        assert!(matches!(
            parse_tree("emtree v1\nparam colour 3\n"),
            Err(EmError::Syntax { line: 2, column: 7, .. })
        ));
    }

    #[test]
    fn semantic_errors() {
        let cycle = "emtree v1\nnode 0 0 0 interior\nnode 1 1e-5 0 interior\nnode 2 1e-5 1e-5 interior\n\
                     seg 0 0 1 1e-5 5e-7 2e-7 1\nseg 1 1 2 1e-5 5e-7 2e-7 1\nseg 2 2 0 1.4142135623730951e-5 5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(cycle), Err(EmError::Semantic(m)) if m.contains("cycle")));
        let dangling = "emtree v1\nnode 0 0 0 terminal\nnode 1 1e-5 0 terminal\nseg 0 0 4 1e-5 5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(dangling), Err(EmError::Semantic(m)) if m.contains("undefined node 4")));
        let negative = "emtree v1\nnode 0 0 0 terminal\nnode 1 1e-5 0 terminal\nseg 0 0 1 1e-5 -5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(negative), Err(EmError::Semantic(m)) if m.contains("width")));
        let mislabeled = "emtree v1\nnode 0 0 0 junction\nnode 1 1e-5 0 terminal\nseg 0 0 1 1e-5 5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(mislabeled), Err(EmError::Semantic(_))));
        let disconnected = "emtree v1\nnode 0 0 0 terminal\nnode 1 1e-5 0 terminal\nnode 2 5 5 terminal\nseg 0 0 1 1e-5 5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(disconnected), Err(EmError::Semantic(m)) if m.contains("disconnected")));
        let bad_length = "emtree v1\nnode 0 0 0 terminal\nnode 1 1e-5 0 terminal\nseg 0 0 1 2e-5 5e-7 2e-7 1\n";
        assert!(matches!(parse_tree(bad_length), Err(EmError::Semantic(m)) if m.contains("length")));
    }

    #[test]
    fn params_override_defaults() {
        let text = "emtree v1\nparam temperature 400\nparam critical_void_volume 1e-20\n\
                    node 0 0 0 terminal\nnode 1 1e-5 0 terminal\nseg 0 0 1 1e-5 5e-7 2e-7 1e10\n";
        let t = parse_tree(text).unwrap();
        assert_eq!(t.materials().temperature, 400.0);
        assert_eq!(t.materials().critical_void_volume, Some(1e-20));
        assert!(parse_tree(&text.replace("400", "-1")).is_err());
    }

    #[test]
    fn void_thickness_warning() {
        let mut mat = MaterialParams::default();
        mat.void_thickness = 1e-6;
        let t = chain(&[10.0 * UM]).with_materials(mat).unwrap();
        assert_eq!(t.warnings().len(), 1);
        assert!(chain(&[10.0 * UM]).warnings().is_empty());
    }
}
