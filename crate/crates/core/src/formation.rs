//! Reference configuration, communication graph and the formation matrices.
//!
//! Agents are stored in configuration order but every matrix uses the
//! leaders-first ordering: the three leaders in the order they appear in the
//! configuration, followed by the followers in configuration order.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;

use nalgebra::linalg::Schur;
use nalgebra::{Complex, DMatrix, Matrix3, Vector2, Vector3};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Barycentric coordinates at or below this value count as "on the boundary".
pub const CONTAINMENT_THRESHOLD: f64 = 1e-9;

/// Allowed drift of a solved triple's sum away from 1 before renormalization.
pub const PARTITION_TOLERANCE: f64 = 1e-12;

/// Maximum entry deviation accepted between `H` and `-W⁻¹L`.
pub const IDENTITY_TOLERANCE: f64 = 1e-9;

const SINGULAR_RELATIVE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Leader,
    Follower,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    pub role: Role,
    pub x: f64,
    pub y: f64,
}

impl AgentSpec {
    pub fn new(id: impl Into<String>, role: Role, x: f64, y: f64) -> Self {
        Self { id: id.into(), role, x, y }
    }

    pub fn planar(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }
}

/// Initial planar layout of the team plus the follower in-neighbor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceConfig {
    pub agents: Vec<AgentSpec>,
    /// Altitude of the deformation plane.
    pub altitude: f64,
    /// follower id -> in-neighbor ids, in the order the weights are reported.
    pub in_neighbors: BTreeMap<String, Vec<String>>,
}

impl ReferenceConfig {
    /// Indices into `agents`, leaders first then followers.
    pub fn ordering(&self) -> Vec<usize> {
        let leaders = self.agents.iter().enumerate().filter(|(_, a)| a.role == Role::Leader);
        let followers = self.agents.iter().enumerate().filter(|(_, a)| a.role == Role::Follower);
        leaders.chain(followers).map(|(i, _)| i).collect()
    }

    pub fn ordered_ids(&self) -> Vec<String> {
        self.ordering().into_iter().map(|i| self.agents[i].id.clone()).collect()
    }

    pub fn leaders(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(|a| a.role == Role::Leader)
    }

    pub fn followers(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.iter().filter(|a| a.role == Role::Follower)
    }

    pub fn agent(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// The reference position `a_i = (X_i, Y_i, Z)`.
    pub fn reference_position(&self, id: &str) -> Option<Vector3<f64>> {
        self.agent(id).map(|a| Vector3::new(a.x, a.y, self.altitude))
    }

    /// Reference positions in matrix ordering.
    pub fn ordered_positions(&self) -> Vec<Vector3<f64>> {
        self.ordering()
            .into_iter()
            .map(|i| Vector3::new(self.agents[i].x, self.agents[i].y, self.altitude))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    DuplicateId { id: String },
    LeaderCount { found: usize },
    LeaderHasNeighbors { leader: String },
    UnknownAgent { follower: String, neighbor: String },
    NeighborCount { follower: String, found: usize },
    SelfNeighbor { follower: String },
    RepeatedNeighbor { follower: String, neighbor: String },
    CollinearLeaders,
    CollinearNeighbors { follower: String },
    NotContained { follower: String, min_coordinate: f64 },
    Unreachable { leader: String, follower: String },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::DuplicateId { id } => write!(f, "agent id `{id}` appears more than once"),
            Violation::LeaderCount { found } => write!(f, "expected exactly 3 leaders, found {found}"),
            Violation::LeaderHasNeighbors { leader } => {
                write!(f, "leader `{leader}` has in-neighbors; leaders must move independently")
            }
            Violation::UnknownAgent { follower, neighbor } => {
                write!(f, "`{follower}` lists unknown neighbor `{neighbor}`")
            }
            Violation::NeighborCount { follower, found } => {
                write!(f, "follower `{follower}` has {found} in-neighbors, expected 3")
            }
            Violation::SelfNeighbor { follower } => write!(f, "follower `{follower}` lists itself as a neighbor"),
            Violation::RepeatedNeighbor { follower, neighbor } => {
                write!(f, "follower `{follower}` lists neighbor `{neighbor}` twice")
            }
            Violation::CollinearLeaders => write!(f, "leader positions are collinear"),
            Violation::CollinearNeighbors { follower } => {
                write!(f, "in-neighbors of `{follower}` are collinear")
            }
            Violation::NotContained { follower, min_coordinate } => write!(
                f,
                "follower `{follower}` is not strictly inside its neighbor triangle (min barycentric coordinate {min_coordinate:e})"
            ),
            Violation::Unreachable { leader, follower } => {
                write!(f, "no directed path from leader `{leader}` to follower `{follower}`")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return write!(f, "configuration is valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "- {v}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum FormationError {
    #[error("invalid reference configuration:\n{0}")]
    Invalid(ValidationReport),
    #[error("leader positions are collinear; barycentric system is singular")]
    CollinearLeaders,
    #[error("in-neighbors of `{follower}` are collinear; weight system is singular")]
    CollinearNeighbors { follower: String },
    #[error("follower `{follower}` is not strictly inside its neighbor triangle (weights {weights:?})")]
    NotContained { follower: String, weights: [f64; 3] },
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("coefficients of `{follower}` sum to {sum}, not 1")]
    PartitionOfUnity { follower: String, sum: f64 },
    #[error("theorem-2 check failed: {reason}")]
    Theorem2 { reason: String, report: SpectralReport },
}

/// Solves `[[X1 X2 X3], [Y1 Y2 Y3], [1 1 1]] c = [X, Y, 1]` for the
/// barycentric coordinates of `p` in the triangle `tri`.
///
/// Returns `None` when the triangle is degenerate.
pub fn barycentric(p: Vector2<f64>, tri: [Vector2<f64>; 3]) -> Option<[f64; 3]> {
    let m = Matrix3::new(
        tri[0].x, tri[1].x, tri[2].x, //
        tri[0].y, tri[1].y, tri[2].y, //
        1.0, 1.0, 1.0,
    );
    let scale = [(tri[1] - tri[0]), (tri[2] - tri[1]), (tri[0] - tri[2])]
        .iter()
        .map(|e| e.norm_squared())
        .fold(0.0, f64::max);
    if scale == 0.0 || m.determinant().abs() <= SINGULAR_RELATIVE * scale {
        return None;
    }
    let c = m.lu().solve(&Vector3::new(p.x, p.y, 1.0))?;
    Some([c[0], c[1], c[2]])
}

/// Runs every structural and geometric check and collects all violations.
pub fn validate_config(cfg: &ReferenceConfig) -> ValidationReport {
    let mut violations = Vec::new();

    let mut seen = BTreeSet::new();
    for a in &cfg.agents {
        if !seen.insert(a.id.as_str()) {
            violations.push(Violation::DuplicateId { id: a.id.clone() });
        }
    }

    let leaders: Vec<&AgentSpec> = cfg.leaders().collect();
    if leaders.len() != 3 {
        violations.push(Violation::LeaderCount { found: leaders.len() });
    }

    for (id, nbrs) in &cfg.in_neighbors {
        match cfg.agent(id) {
            None => violations.push(Violation::UnknownAgent { follower: id.clone(), neighbor: id.clone() }),
            Some(a) if a.role == Role::Leader && !nbrs.is_empty() => {
                violations.push(Violation::LeaderHasNeighbors { leader: id.clone() })
            }
            _ => {}
        }
    }

    if leaders.len() == 3 {
        let tri = [leaders[0].planar(), leaders[1].planar(), leaders[2].planar()];
        if barycentric(tri[0], tri).is_none() {
            violations.push(Violation::CollinearLeaders);
        }
    }

    let empty = Vec::new();
    for f in cfg.followers() {
        let nbrs = cfg.in_neighbors.get(&f.id).unwrap_or(&empty);
        if nbrs.len() != 3 {
            violations.push(Violation::NeighborCount { follower: f.id.clone(), found: nbrs.len() });
        }
        let mut structural_ok = nbrs.len() == 3;
        let mut listed = BTreeSet::new();
        for n in nbrs {
            if n == &f.id {
                violations.push(Violation::SelfNeighbor { follower: f.id.clone() });
                structural_ok = false;
            } else if cfg.agent(n).is_none() {
                violations.push(Violation::UnknownAgent { follower: f.id.clone(), neighbor: n.clone() });
                structural_ok = false;
            }
            if !listed.insert(n.as_str()) {
                violations.push(Violation::RepeatedNeighbor { follower: f.id.clone(), neighbor: n.clone() });
                structural_ok = false;
            }
        }
        if !structural_ok {
            continue;
        }
        let tri = [0, 1, 2].map(|k| cfg.agent(&nbrs[k]).map(AgentSpec::planar).unwrap_or_default());
        match barycentric(f.planar(), tri) {
            None => violations.push(Violation::CollinearNeighbors { follower: f.id.clone() }),
            Some(c) => {
                let min = c.iter().copied().fold(f64::INFINITY, f64::min);
                if min <= CONTAINMENT_THRESHOLD {
                    violations.push(Violation::NotContained { follower: f.id.clone(), min_coordinate: min });
                }
            }
        }
    }

    for (leader, follower) in unreachable_pairs(cfg) {
        violations.push(Violation::Unreachable { leader, follower });
    }

    ValidationReport { violations }
}

/// (leader, follower) pairs with no directed path from the leader to the follower.
fn unreachable_pairs(cfg: &ReferenceConfig) -> Vec<(String, String)> {
    // edge j -> i whenever j is an in-neighbor of i
    let mut out: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (i, nbrs) in &cfg.in_neighbors {
        for j in nbrs {
            out.entry(j.as_str()).or_default().push(i.as_str());
        }
    }
    let mut pairs = Vec::new();
    for leader in cfg.leaders() {
        let mut reached = BTreeSet::from([leader.id.as_str()]);
        let mut queue = VecDeque::from([leader.id.as_str()]);
        while let Some(u) = queue.pop_front() {
            for &v in out.get(u).map(Vec::as_slice).unwrap_or_default() {
                if reached.insert(v) {
                    queue.push_back(v);
                }
            }
        }
        for f in cfg.followers() {
            if !reached.contains(f.id.as_str()) {
                pairs.push((leader.id.clone(), f.id.clone()));
            }
        }
    }
    pairs
}

/// A per-follower coefficient triple together with the agents it refers to.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coefficients {
    pub follower: String,
    pub agents: [String; 3],
    pub values: [f64; 3],
}

fn renormalize(follower: &str, values: [f64; 3]) -> Result<[f64; 3], FormationError> {
    let sum: f64 = values.iter().sum();
    if (sum - 1.0).abs() > PARTITION_TOLERANCE {
        return Err(FormationError::PartitionOfUnity { follower: follower.to_owned(), sum });
    }
    Ok(values.map(|v| v / sum))
}

fn leader_triangle(cfg: &ReferenceConfig) -> Result<([String; 3], [Vector2<f64>; 3]), FormationError> {
    let leaders: Vec<&AgentSpec> = cfg.leaders().collect();
    if leaders.len() != 3 {
        return Err(FormationError::Invalid(ValidationReport {
            violations: vec![Violation::LeaderCount { found: leaders.len() }],
        }));
    }
    let ids = [0, 1, 2].map(|k| leaders[k].id.clone());
    let tri = [0, 1, 2].map(|k| leaders[k].planar());
    Ok((ids, tri))
}

/// Barycentric coefficients of every follower with respect to the leader
/// triangle, in follower order.
pub fn compute_alpha(cfg: &ReferenceConfig) -> Result<Vec<Coefficients>, FormationError> {
    let (ids, tri) = leader_triangle(cfg)?;
    cfg.followers()
        .map(|f| {
            let raw = barycentric(f.planar(), tri).ok_or(FormationError::CollinearLeaders)?;
            Ok(Coefficients { follower: f.id.clone(), agents: ids.clone(), values: renormalize(&f.id, raw)? })
        })
        .collect()
}

fn neighbor_triple(cfg: &ReferenceConfig, follower: &AgentSpec) -> Result<([String; 3], [Vector2<f64>; 3]), FormationError> {
    let nbrs = cfg.in_neighbors.get(&follower.id).map(Vec::as_slice).unwrap_or_default();
    if nbrs.len() != 3 {
        return Err(FormationError::Invalid(ValidationReport {
            violations: vec![Violation::NeighborCount { follower: follower.id.clone(), found: nbrs.len() }],
        }));
    }
    let mut tri = [Vector2::zeros(); 3];
    for (k, n) in nbrs.iter().enumerate() {
        tri[k] = cfg.agent(n).ok_or_else(|| FormationError::UnknownAgent(n.clone()))?.planar();
    }
    Ok(([nbrs[0].clone(), nbrs[1].clone(), nbrs[2].clone()], tri))
}

/// Solves the communication-weight system without the positivity check.
///
/// Used for diagnosing graphs that fail validation; the weights may be zero
/// or negative and are not renormalized.
pub fn solve_follower_weights(cfg: &ReferenceConfig) -> Result<Vec<Coefficients>, FormationError> {
    cfg.followers()
        .map(|f| {
            let (agents, tri) = neighbor_triple(cfg, f)?;
            let values = barycentric(f.planar(), tri)
                .ok_or_else(|| FormationError::CollinearNeighbors { follower: f.id.clone() })?;
            Ok(Coefficients { follower: f.id.clone(), agents, values })
        })
        .collect()
}

/// Fixed communication weights of every follower, strictly positive and
/// summing to one.
pub fn compute_follower_weights(cfg: &ReferenceConfig) -> Result<Vec<Coefficients>, FormationError> {
    solve_follower_weights(cfg)?
        .into_iter()
        .map(|c| {
            if c.values.iter().any(|&w| w <= CONTAINMENT_THRESHOLD) {
                return Err(FormationError::NotContained { follower: c.follower, weights: c.values });
            }
            let values = renormalize(&c.follower, c.values)?;
            Ok(Coefficients { values, ..c })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FormationMatrices {
    /// Agent ids in matrix ordering.
    pub order: Vec<String>,
    pub alpha: Vec<Coefficients>,
    pub weights: Vec<Coefficients>,
    /// Weighted Laplacian, N×N.
    pub w: DMatrix<f64>,
    /// Leader selector `[I₃ 0]ᵀ`, N×3.
    pub l: DMatrix<f64>,
    /// Containment matrix, N×3.
    pub h: DMatrix<f64>,
}

impl FormationMatrices {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.order.iter().position(|o| o == id)
    }

    /// `H · x_L` for a stacked 3-vector per leader: the steady-state position of every agent.
    pub fn steady_state(&self, leaders: &[Vector3<f64>; 3]) -> Vec<Vector3<f64>> {
        (0..self.h.nrows())
            .map(|i| (0..3).map(|j| leaders[j] * self.h[(i, j)]).sum())
            .collect()
    }
}

/// Assembles `W`, `L` and `H` in leaders-first ordering.
pub fn build_matrices(
    cfg: &ReferenceConfig,
    weights: &[Coefficients],
    alpha: &[Coefficients],
) -> Result<FormationMatrices, FormationError> {
    let order = cfg.ordered_ids();
    let n = order.len();
    let index: BTreeMap<&str, usize> = order.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let lookup = |id: &str| index.get(id).copied().ok_or_else(|| FormationError::UnknownAgent(id.to_owned()));

    let mut w = -DMatrix::<f64>::identity(n, n);
    for c in weights {
        let row = lookup(&c.follower)?;
        for (agent, &value) in c.agents.iter().zip(&c.values) {
            w[(row, lookup(agent)?)] = value;
        }
    }

    let mut l = DMatrix::<f64>::zeros(n, 3);
    let mut h = DMatrix::<f64>::zeros(n, 3);
    for k in 0..n.min(3) {
        l[(k, k)] = 1.0;
        h[(k, k)] = 1.0;
    }
    for c in alpha {
        let row = lookup(&c.follower)?;
        for j in 0..3 {
            h[(row, j)] = c.values[j];
        }
    }

    Ok(FormationMatrices { order, alpha: alpha.to_vec(), weights: weights.to_vec(), w, l, h })
}

/// Validates the configuration and builds all formation matrices.
pub fn build_formation(cfg: &ReferenceConfig) -> Result<FormationMatrices, FormationError> {
    let report = validate_config(cfg);
    if !report.is_valid() {
        return Err(FormationError::Invalid(report));
    }
    let alpha = compute_alpha(cfg)?;
    let weights = compute_follower_weights(cfg)?;
    build_matrices(cfg, &weights, &alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Eigenvalue {
    pub re: f64,
    pub im: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralReport {
    pub eigenvalues: Vec<Eigenvalue>,
    pub max_real_part: f64,
    pub hurwitz: bool,
    /// `max |H - (-W⁻¹L)|`, absent when `W` is singular.
    pub deviation: Option<f64>,
    pub passed: bool,
}

const SCHUR_ITERATIONS_PER_ROW: usize = 1000;

/// Eigenvalues of `W` computed block by block over the strongly connected
/// components of its sparsity pattern. An acyclic graph reduces to the
/// diagonal, which the QR iteration handles poorly as one defective matrix.
fn w_eigenvalues(w: &DMatrix<f64>) -> Option<Vec<Complex<f64>>> {
    let n = w.nrows();
    let mut graph = DiGraph::<(), ()>::with_capacity(n, 3 * n);
    let nodes: Vec<_> = (0..n).map(|_| graph.add_node(())).collect();
    for i in 0..n {
        for j in 0..n {
            if i != j && w[(i, j)] != 0.0 {
                graph.add_edge(nodes[i], nodes[j], ());
            }
        }
    }
    let mut out = Vec::with_capacity(n);
    for component in tarjan_scc(&graph) {
        let mut idx: Vec<usize> = component.iter().map(|v| v.index()).collect();
        idx.sort_unstable();
        if let [i] = idx[..] {
            out.push(Complex::new(w[(i, i)], 0.0));
            continue;
        }
        let block = w.select_rows(&idx).select_columns(&idx);
        let schur = Schur::try_new(block, f64::EPSILON, SCHUR_ITERATIONS_PER_ROW * idx.len())?;
        out.extend(schur.complex_eigenvalues().iter().copied());
    }
    Some(out)
}

/// Spectrum of `W` and the deviation between `H` and `-W⁻¹L`, without judging them.
pub fn spectral_report(m: &FormationMatrices) -> SpectralReport {
    let (eigenvalues, max_real_part, hurwitz) = match w_eigenvalues(&m.w) {
        Some(z) => {
            let eigenvalues: Vec<Eigenvalue> = z.iter().map(|z| Eigenvalue { re: z.re, im: z.im }).collect();
            let max_real_part = eigenvalues.iter().map(|e| e.re).fold(f64::NEG_INFINITY, f64::max);
            let hurwitz = eigenvalues.iter().all(|e| e.re < 0.0 && e.re.is_finite());
            (eigenvalues, max_real_part, hurwitz)
        }
        None => {
            log::warn!("Schur iteration on W did not converge");
            (Vec::new(), f64::NAN, false)
        }
    };

    let deviation = m.w.clone().lu().solve(&m.l).and_then(|x| {
        let d = (&m.h + x).amax();
        d.is_finite().then_some(d)
    });
    let passed = hurwitz && deviation.is_some_and(|d| d <= IDENTITY_TOLERANCE);
    SpectralReport { eigenvalues, max_real_part, hurwitz, deviation, passed }
}

/// Checks that `W` is Hurwitz and that `H = -W⁻¹L` holds to [`IDENTITY_TOLERANCE`].
pub fn verify_theorem2(m: &FormationMatrices) -> Result<SpectralReport, FormationError> {
    let report = spectral_report(m);
    if report.passed {
        return Ok(report);
    }
    let reason = if !report.hurwitz {
        format!("W is not Hurwitz (max real part {:e})", report.max_real_part)
    } else {
        match report.deviation {
            None => "W is singular".to_owned(),
            Some(d) => format!("|H + W^-1 L| = {d:e} exceeds {IDENTITY_TOLERANCE:e}"),
        }
    };
    Err(FormationError::Theorem2 { reason, report })
}

/// Configuration of the six-agent experiment with the default communication graph.
pub fn table_one_config() -> ReferenceConfig {
    use Role::*;
    let agents = vec![
        AgentSpec::new("cf1", Leader, 0.0, 0.75),
        AgentSpec::new("cf2", Follower, 0.0, 0.25),
        AgentSpec::new("cf3", Follower, -0.25, -0.25),
        AgentSpec::new("cf4", Follower, 0.25, -0.25),
        AgentSpec::new("cf5", Leader, -0.5, -0.75),
        AgentSpec::new("cf6", Leader, 0.5, -0.75),
    ];
    let graph = [("cf2", ["cf1", "cf3", "cf4"]), ("cf3", ["cf1", "cf4", "cf5"]), ("cf4", ["cf1", "cf3", "cf6"])];
    ReferenceConfig {
        agents,
        altitude: 1.0,
        in_neighbors: graph
            .into_iter()
            .map(|(f, n)| (f.to_owned(), n.iter().map(|s| s.to_string()).collect()))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn cramer(p: [f64; 2], tri: [[f64; 2]; 3]) -> [f64; 3] {
        // independent oracle: signed sub-triangle areas
        let area = |a: [f64; 2], b: [f64; 2], c: [f64; 2]| (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]);
        let total = area(tri[0], tri[1], tri[2]);
        [
            area(p, tri[1], tri[2]) / total,
            area(tri[0], p, tri[2]) / total,
            area(tri[0], tri[1], p) / total,
        ]
    }

    fn with_graph(graph: &[(&str, [&str; 3])]) -> ReferenceConfig {
        let mut cfg = table_one_config();
        cfg.in_neighbors = graph
            .iter()
            .map(|(f, n)| (f.to_string(), n.iter().map(|s| s.to_string()).collect()))
            .collect();
        cfg
    }

    #[test]
    fn default_config_is_valid() {
        let report = validate_config(&table_one_config());
        assert!(report.is_valid(), "{report}");
    }

    #[test]
    fn follower_on_neighbor_segment_is_rejected() {
        // cf3 lies on the segment cf2-cf5, so this graph has a zero weight
        let cfg = with_graph(&[
            ("cf2", ["cf1", "cf3", "cf4"]),
            ("cf3", ["cf2", "cf4", "cf5"]),
            ("cf4", ["cf2", "cf3", "cf6"]),
        ]);
        let report = validate_config(&cfg);
        let flagged: Vec<_> = report
            .violations
            .iter()
            .filter_map(|v| match v {
                Violation::NotContained { follower, .. } => Some(follower.as_str()),
                _ => None,
            })
            .collect();
        assert_eq!(flagged, ["cf3", "cf4"]);
    }

    #[test]
    fn follower_at_vertex_is_rejected() {
        let mut cfg = table_one_config();
        cfg.agents[1].x = 0.0;
        cfg.agents[1].y = 0.75;
        let report = validate_config(&cfg);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::NotContained { follower, .. } if follower == "cf2")));
    }

    #[test]
    fn collinear_leaders_are_rejected() {
        let cfg = ReferenceConfig {
            agents: vec![
                AgentSpec::new("a", Role::Leader, 0.0, 0.0),
                AgentSpec::new("b", Role::Leader, 1.0, 0.0),
                AgentSpec::new("c", Role::Leader, 2.0, 0.0),
            ],
            altitude: 1.0,
            in_neighbors: BTreeMap::new(),
        };
        assert_eq!(validate_config(&cfg).violations, vec![Violation::CollinearLeaders]);

        let mut with_follower = cfg.clone();
        with_follower.agents.push(AgentSpec::new("f", Role::Follower, 1.0, 0.5));
        assert!(matches!(compute_alpha(&with_follower), Err(FormationError::CollinearLeaders)));
    }

    #[test]
    fn structural_violations_are_all_listed() {
        let mut cfg = table_one_config();
        cfg.agents[1].role = Role::Leader;
        cfg.in_neighbors.insert("cf3".into(), vec!["cf1".into(), "cf3".into()]);
        cfg.in_neighbors.insert("cf1".into(), vec!["cf2".into()]);
        let report = validate_config(&cfg);
        assert!(report.violations.contains(&Violation::LeaderCount { found: 4 }));
        assert!(report.violations.contains(&Violation::LeaderHasNeighbors { leader: "cf1".into() }));
        assert!(report.violations.contains(&Violation::LeaderHasNeighbors { leader: "cf2".into() }));
        assert!(report.violations.contains(&Violation::NeighborCount { follower: "cf3".into(), found: 2 }));
        assert!(report.violations.contains(&Violation::SelfNeighbor { follower: "cf3".into() }));
    }

    #[test]
    fn alpha_matches_area_oracle() {
        let cfg = table_one_config();
        let alpha = compute_alpha(&cfg).unwrap();
        let leaders = [[0.0, 0.75], [-0.5, -0.75], [0.5, -0.75]];
        for c in &alpha {
            let f = cfg.agent(&c.follower).unwrap();
            let expected = cramer([f.x, f.y], leaders);
            for k in 0..3 {
                assert_abs_diff_eq!(c.values[k], expected[k], epsilon = 1e-14);
            }
        }
        // cf2: (2/3, 1/6, 1/6)
        assert_abs_diff_eq!(alpha[0].values[0], 2.0 / 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(alpha[0].values[1], 1.0 / 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(alpha[0].values[2], 1.0 / 6.0, epsilon = 1e-14);
    }

    #[test]
    fn alpha_vertex_and_centroid() {
        let tri = [Vector2::new(0.0, 0.75), Vector2::new(-0.5, -0.75), Vector2::new(0.5, -0.75)];
        let at_vertex = barycentric(tri[0], tri).unwrap();
        assert_abs_diff_eq!(at_vertex[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(at_vertex[1], 0.0, epsilon = 1e-15);
        let centroid = (tri[0] + tri[1] + tri[2]) / 3.0;
        for c in barycentric(centroid, tri).unwrap() {
            assert_abs_diff_eq!(c, 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn weights_of_default_graph() {
        let w = compute_follower_weights(&table_one_config()).unwrap();
        assert_eq!(w[0].agents, ["cf1", "cf3", "cf4"]);
        for (got, want) in w[0].values.iter().zip([0.5, 0.25, 0.25]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        // cf3 <- (cf1, cf4, cf5): (2/7, 1/7, 4/7)
        for (got, want) in w[1].values.iter().zip([2.0 / 7.0, 1.0 / 7.0, 4.0 / 7.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-14);
        }
        for c in &w {
            assert_eq!(c.values.iter().sum::<f64>(), 1.0);
        }
    }

    #[test]
    fn midpoint_follower_has_zero_weight() {
        let mut cfg = table_one_config();
        // midpoint of cf1 and cf3
        cfg.agents[1].x = -0.125;
        cfg.agents[1].y = 0.25;
        let err = compute_follower_weights(&cfg).unwrap_err();
        match err {
            FormationError::NotContained { follower, weights } => {
                assert_eq!(follower, "cf2");
                assert_abs_diff_eq!(weights[2], 0.0, epsilon = 1e-15);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn leaders_only_matrices() {
        let cfg = ReferenceConfig {
            agents: vec![
                AgentSpec::new("a", Role::Leader, 0.0, 1.0),
                AgentSpec::new("b", Role::Leader, -1.0, 0.0),
                AgentSpec::new("c", Role::Leader, 1.0, 0.0),
            ],
            altitude: 1.0,
            in_neighbors: BTreeMap::new(),
        };
        let m = build_formation(&cfg).unwrap();
        assert_eq!(m.w, -DMatrix::<f64>::identity(3, 3));
        assert_eq!(m.h, DMatrix::<f64>::identity(3, 3));
        let report = verify_theorem2(&m).unwrap();
        assert!(report.eigenvalues.iter().all(|e| e.re == -1.0 && e.im == 0.0));
        assert_eq!(report.deviation, Some(0.0));
    }

    #[test]
    fn default_matrices_structure() {
        let cfg = table_one_config();
        let m = build_formation(&cfg).unwrap();
        assert_eq!(m.order, ["cf1", "cf5", "cf6", "cf2", "cf3", "cf4"]);
        for i in 0..6 {
            assert_eq!(m.w[(i, i)], -1.0);
            assert_abs_diff_eq!(m.h.row(i).sum(), 1.0, epsilon = 1e-15);
        }
        assert_eq!(m.h.view((0, 0), (3, 3)).clone_owned(), DMatrix::<f64>::identity(3, 3));
        // cf2 row: 0.5 on cf1, 0.25 on cf3 and cf4
        assert_eq!(m.w[(3, 0)], 0.5);
        assert_eq!(m.w[(3, 4)], 0.25);
        assert_eq!(m.w[(3, 5)], 0.25);
        assert_eq!(m.w[(3, 1)], 0.0);
        let report = verify_theorem2(&m).unwrap();
        assert!(report.max_real_part < 0.0);
    }

    #[test]
    fn follower_cycle_without_leader_input_fails_theorem2() {
        // four followers, one of them inside the others' triangle; f1..f3 read only followers
        let mut cfg = ReferenceConfig {
            agents: vec![
                AgentSpec::new("u1", Role::Leader, 0.0, 3.0),
                AgentSpec::new("u2", Role::Leader, -3.0, -2.0),
                AgentSpec::new("u3", Role::Leader, 3.0, -2.0),
                AgentSpec::new("f1", Role::Follower, 0.0, 1.0),
                AgentSpec::new("f2", Role::Follower, -1.0, -0.5),
                AgentSpec::new("f3", Role::Follower, 1.0, -0.5),
                AgentSpec::new("f4", Role::Follower, 0.0, 0.0),
            ],
            altitude: 1.0,
            in_neighbors: BTreeMap::new(),
        };
        for (f, n) in [("f1", ["f2", "f3", "f4"]), ("f2", ["f1", "f3", "f4"]), ("f3", ["f1", "f2", "f4"]), ("f4", ["f1", "f2", "f3"])] {
            cfg.in_neighbors.insert(f.into(), n.iter().map(|s| s.to_string()).collect());
        }
        let report = validate_config(&cfg);
        assert!(report.violations.iter().any(|v| matches!(v, Violation::Unreachable { .. })));

        let alpha = compute_alpha(&cfg).unwrap();
        let weights = solve_follower_weights(&cfg).unwrap();
        let m = build_matrices(&cfg, &weights, &alpha).unwrap();
        let err = verify_theorem2(&m).unwrap_err();
        let FormationError::Theorem2 { report, .. } = err else { panic!() };
        assert!(!report.hurwitz);
        // follower block rows sum to one, so 0 is an eigenvalue
        assert!(report.max_real_part.abs() < 1e-9);
    }
}
