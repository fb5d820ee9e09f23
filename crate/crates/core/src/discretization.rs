//! Finite-volume discretization of the stress equation on a wire tree.
//!
//! Grid numbering: tree nodes first (index = node id), then the interior
//! points of every segment in segment order, each run ordered from `node_a`
//! towards `node_b`. Rows are `dσ_i/dt = (1/V_i)·Σ_j K_ij (σ_j − σ_i) + b_i`
//! with `V_i` the cross-section weighted control volume, so `A = V⁻¹K` with
//! `K` symmetric.

use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};

use crate::error::{EmError, Result};
use crate::sparse::{CsrMatrix, SparseLu, SymbolicLu};
use crate::tree::{InterconnectTree, MaterialParams, Segment};

pub const DEFAULT_POINTS_PER_SEGMENT: usize = 11;

/// Stress diffusivity κ = D_a·B·Ω/(k_B·T) in m²/s.
pub fn diffusivity(_segment: &Segment, mat: &MaterialParams) -> f64 {
    mat.diffusivity_base * mat.bulk_modulus * mat.atomic_volume / (mat.boltzmann * mat.temperature)
}

/// EM driving force G = e·ρ·J·Z*/Ω in Pa/m.
pub fn drive_force(segment: &Segment, mat: &MaterialParams) -> f64 {
    mat.electron_charge * mat.resistivity_cu * segment.current_density * mat.effective_charge
        / mat.atomic_volume
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Nucleation,
    PostVoid { void_index: usize },
}

/// What a grid unknown represents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GridPoint {
    /// A tree node (shared by all incident segments).
    Node(usize),
    /// A point inside a segment, `position` metres from its `node_a`.
    Interior { segment: usize, position: f64 },
}

#[derive(Debug, Clone)]
pub struct LtiSystem {
    pub phase: Phase,
    /// System matrix (1/s).
    pub a: CsrMatrix,
    /// Input matrix, one sparse column per segment: (row, coefficient).
    pub b_columns: Vec<Vec<(usize, f64)>>,
    /// Per-segment drive magnitudes G (Pa/m).
    pub u: Vec<f64>,
    /// Initial stress (Pa).
    pub x0: Vec<f64>,
    pub node_map: Vec<GridPoint>,
    /// Grid spacing per segment (m).
    pub dx: Vec<f64>,
    /// Control volume of every unknown (m³). Left null vector of the
    /// nucleation-phase A.
    pub control_volume: Vec<f64>,
    pub points_per_segment: usize,
    pub n_tree_nodes: usize,
    /// Off-diagonal couplings per row: (column, segment carrying the edge).
    edges: Vec<Vec<(usize, usize)>>,
    symbolic: OnceLock<Arc<SymbolicLu>>,
}

impl LtiSystem {
    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn n_inputs(&self) -> usize {
        self.u.len()
    }

    /// Whether A carries the constant nullspace of fully blocked boundaries.
    pub fn is_singular(&self) -> bool {
        matches!(self.phase, Phase::Nucleation)
    }

    /// The constant drive vector b = B·u.
    pub fn drive(&self) -> Vec<f64> {
        let mut b = vec![0.0; self.n()];
        for (col, &g) in self.b_columns.iter().zip(&self.u) {
            for &(row, coef) in col {
                b[row] += coef * g;
            }
        }
        b
    }

    /// Dense copy of B (n × segments).
    pub fn input_matrix_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.n(), self.n_inputs());
        for (s, col) in self.b_columns.iter().enumerate() {
            for &(row, coef) in col {
                m[(row, s)] += coef;
            }
        }
        m
    }

    /// Symbolic LU shared by every shifted copy of A.
    pub fn symbolic(&self) -> Arc<SymbolicLu> {
        Arc::clone(self.symbolic.get_or_init(|| Arc::new(SymbolicLu::analyze(&self.a))))
    }

    /// Factorization of `alpha·A + beta·I`.
    pub fn factor(&self, alpha: f64, beta: f64) -> Result<SparseLu> {
        self.symbolic().factor(&self.a, alpha, beta)
    }

    /// Solver for `(A − σI)·x = v`. At σ = 0 on the singular nucleation
    /// operator the solve is deflated: v is projected onto range(A) along the
    /// constant vector and the answer is normalized to zero weighted mean.
    pub fn shift_invert(&self, sigma: f64) -> Result<ShiftInvert> {
        if sigma == 0.0 && self.is_singular() {
            let ground = 0;
            let mut grounded = self.a.clone();
            grounded.clear_row(ground);
            *grounded.entry_mut(ground, ground).unwrap() = 1.0;
            for &(nb, _) in &self.edges[ground] {
                if let Some(v) = grounded.entry_mut(nb, ground) {
                    *v = 0.0;
                }
            }
            let lu = self.symbolic().factor(&grounded, 1.0, 0.0)?;
            let w_sum = self.control_volume.iter().sum();
            Ok(ShiftInvert { lu, deflation: Some((self.control_volume.clone(), w_sum, ground)) })
        } else {
            Ok(ShiftInvert { lu: self.factor(1.0, -sigma)?, deflation: None })
        }
    }

    /// f = A⁻¹·rhs, checked so that ‖A·f − rhs‖ ≤ 1e-8·‖rhs‖.
    pub fn solve_operator(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self.shift_invert(0.0)?.solve(rhs);
        let r = self.a.mul_vec(&f);
        let num = r.iter().zip(rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let den = rhs.iter().map(|v| v * v).sum::<f64>().sqrt();
        if num > 1e-8 * den {
            return Err(EmError::ConservationViolation { relative_residual: num / den.max(1e-300) });
        }
        Ok(f)
    }

    /// Grid index of tree node `id`.
    pub fn node_index(&self, id: usize) -> usize {
        debug_assert!(id < self.n_tree_nodes);
        id
    }

    /// Grid index of point `p` (0 = node_a, points−1 = node_b) on a segment.
    pub fn segment_point(&self, segment: &Segment, p: usize) -> usize {
        let pts = self.points_per_segment;
        if p == 0 {
            segment.node_a
        } else if p == pts - 1 {
            segment.node_b
        } else {
            self.n_tree_nodes + segment.id * (pts - 2) + (p - 1)
        }
    }

    /// Replace the initial state.
    pub fn with_x0(mut self, x0: Vec<f64>) -> Self {
        assert_eq!(x0.len(), self.n());
        self.x0 = x0;
        self
    }

    /// Replace the drive magnitudes.
    pub fn with_inputs(mut self, u: Vec<f64>) -> Self {
        assert_eq!(u.len(), self.n_inputs());
        self.u = u;
        self
    }
}

/// Prepared solves with `A − σI`.
#[derive(Debug, Clone)]
pub struct ShiftInvert {
    lu: SparseLu,
    /// (weights w, Σw, grounded index) for the deflated singular case.
    deflation: Option<(Vec<f64>, f64, usize)>,
}

impl ShiftInvert {
    pub fn is_deflated(&self) -> bool {
        self.deflation.is_some()
    }

    pub fn solve(&self, v: &[f64]) -> Vec<f64> {
        match &self.deflation {
            None => self.lu.solve(v),
            Some((w, w_sum, ground)) => {
                let shift = dot(w, v) / w_sum;
                let mut rhs: Vec<f64> = v.iter().map(|x| x - shift).collect();
                rhs[*ground] = 0.0;
                let mut x = self.lu.solve(&rhs);
                let mean = dot(w, &x) / w_sum;
                for xi in &mut x {
                    *xi -= mean;
                }
                x
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Nucleation-phase system: blocking terminals, flux-conserving junctions.
pub fn assemble_nucleation(tree: &InterconnectTree, n_points_per_segment: usize) -> Result<LtiSystem> {
    if n_points_per_segment < 2 {
        return Err(EmError::Parameter(format!(
            "each segment needs at least 2 grid points, got {n_points_per_segment}"
        )));
    }
    let pts = n_points_per_segment;
    let mat = tree.materials();
    let n_nodes = tree.n_nodes();
    let n = n_nodes + tree.n_segments() * (pts - 2);

    let mut node_map: Vec<GridPoint> = (0..n_nodes).map(GridPoint::Node).collect();
    let mut volume = vec![0.0; n];
    let mut dx = Vec::with_capacity(tree.n_segments());
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    // Symmetric conductances K_ij = A_s·κ_s/Δx_s per edge.
    let mut conductances = Vec::new();
    let mut b_columns = Vec::with_capacity(tree.n_segments());
    let mut u = Vec::with_capacity(tree.n_segments());

    for seg in tree.segments() {
        let h = seg.length / (pts - 1) as f64;
        dx.push(h);
        let area = seg.cross_section();
        let kappa = diffusivity(seg, mat);
        let index = |p: usize| -> usize {
            if p == 0 {
                seg.node_a
            } else if p == pts - 1 {
                seg.node_b
            } else {
                n_nodes + seg.id * (pts - 2) + (p - 1)
            }
        };
        for p in 1..pts - 1 {
            node_map.push(GridPoint::Interior { segment: seg.id, position: p as f64 * h });
            volume[index(p)] += area * h;
        }
        volume[seg.node_a] += area * h / 2.0;
        volume[seg.node_b] += area * h / 2.0;
        for p in 0..pts - 1 {
            let (i, j) = (index(p), index(p + 1));
            conductances.push((i, j, area * kappa / h));
            edges[i].push((j, seg.id));
            edges[j].push((i, seg.id));
        }
        // Boundary flux A·κ·G enters node_a and leaves node_b.
        b_columns.push(vec![(seg.node_a, area * kappa), (seg.node_b, -area * kappa)]);
        u.push(drive_force(seg, mat));
    }

    let mut triplets = Vec::with_capacity(4 * conductances.len());
    for &(i, j, c) in &conductances {
        triplets.push((i, j, c / volume[i]));
        triplets.push((j, i, c / volume[j]));
        triplets.push((i, i, -c / volume[i]));
        triplets.push((j, j, -c / volume[j]));
    }
    for col in &mut b_columns {
        for entry in col.iter_mut() {
            entry.1 /= volume[entry.0];
        }
    }
    debug_assert_eq!(node_map.len(), n);

    Ok(LtiSystem {
        phase: Phase::Nucleation,
        a: CsrMatrix::from_triplets(n, &triplets),
        b_columns,
        u,
        x0: vec![0.0; n],
        node_map,
        dx,
        control_volume: volume,
        points_per_segment: pts,
        n_tree_nodes: n_nodes,
        edges,
        symbolic: OnceLock::new(),
    })
}

/// Post-void system: the void row becomes a Robin condition with the
/// effective void thickness δ, and the drive no longer enters that row.
pub fn assemble_postvoid(
    base: &LtiSystem,
    nucleation_grid_point: usize,
    mat: &MaterialParams,
    stress_at_tnuc: &[f64],
) -> Result<LtiSystem> {
    if base.phase != Phase::Nucleation {
        return Err(EmError::Parameter("post-void assembly needs a nucleation-phase system".into()));
    }
    let v = nucleation_grid_point;
    if v >= base.n() {
        return Err(EmError::Parameter(format!(
            "void grid index {v} out of range for {} unknowns",
            base.n()
        )));
    }
    if stress_at_tnuc.len() != base.n() {
        return Err(EmError::Parameter(format!(
            "initial stress has {} entries, system has {}",
            stress_at_tnuc.len(),
            base.n()
        )));
    }
    let mut sys = base.clone();
    sys.phase = Phase::PostVoid { void_index: v };
    // Each coupling c = K/V_v contributes c·Δx/δ of interface loss.
    let mut loss = 0.0;
    for &(nb, seg) in &base.edges[v] {
        loss += base.a.get(v, nb) * base.dx[seg] / mat.void_thickness;
    }
    *sys.a.entry_mut(v, v).expect("diagonal is stored") -= loss;
    for col in &mut sys.b_columns {
        col.retain(|&(row, _)| row != v);
    }
    sys.x0 = stress_at_tnuc.to_vec();
    Ok(sys)
}
