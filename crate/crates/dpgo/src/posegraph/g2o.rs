use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, Rotation3, UnitQuaternion};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{rot2, Pose, PoseGraph, RelativeMeasurement};
use crate::error::{Error, Result};

/// How an edge information matrix is reduced to the isotropic pair (κ, τ).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfoReduction {
    /// κ = mean rotational diagonal, τ = mean translational diagonal.
    #[default]
    MeanDiagonal,
    /// τ = d / tr(Σ_t), κ = d / (2 tr(Σ_R)) in 3D and the θθ entry in 2D,
    /// where Σ are the inverses of the information blocks.
    CovarianceTrace,
}

struct Vertex {
    dim: usize,
    pose: Pose,
}

fn numbers(tokens: &[&str], line: usize, want: usize, tag: &str) -> Result<Vec<f64>> {
    if tokens.len() != want {
        return Err(Error::Parse {
            line,
            msg: format!("{tag} expects {want} fields, found {}", tokens.len()),
        });
    }
    tokens
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::Parse { line, msg: format!("{tag}: cannot parse number '{t}'") })
        })
        .collect()
}

fn index(tok: &str, line: usize) -> Result<usize> {
    tok.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("bad vertex id '{tok}'") })
}

fn quat_rotation(q: &[f64]) -> DMatrix<f64> {
    let uq = UnitQuaternion::from_quaternion(Quaternion::new(q[3], q[0], q[1], q[2]));
    let m = uq.to_rotation_matrix();
    DMatrix::from_column_slice(3, 3, m.matrix().as_slice())
}

fn upper_to_full(n: usize, upper: &[f64]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for i in 0..n {
        for j in i..n {
            m[(i, j)] = upper[k];
            m[(j, i)] = upper[k];
            k += 1;
        }
    }
    m
}

fn reduce_info(info: &DMatrix<f64>, d: usize, how: InfoReduction, line: usize) -> Result<(f64, f64)> {
    let dt = d;
    let dr = if d == 2 { 1 } else { 3 };
    let tblock = info.view((0, 0), (dt, dt)).into_owned();
    let rblock = info.view((dt, dt), (dr, dr)).into_owned();
    let (kappa, tau) = match how {
        InfoReduction::MeanDiagonal => (rblock.diagonal().mean(), tblock.diagonal().mean()),
        InfoReduction::CovarianceTrace => {
            let inv = |m: DMatrix<f64>| {
                m.try_inverse().ok_or(Error::Parse { line, msg: "singular information block".into() })
            };
            let tau = dt as f64 / inv(tblock)?.trace();
            let kappa = if d == 2 { rblock[(0, 0)] } else { 3.0 / (2.0 * inv(rblock)?.trace()) };
            (kappa, tau)
        }
    };
    if !(kappa > 0.0 && tau > 0.0) {
        return Err(Error::Parse { line, msg: "information matrix yields non-positive precision".into() });
    }
    Ok((kappa, tau))
}

/// Parses g2o text with the default information reduction. All poses are
/// owned by robot 0; use [`PoseGraph::with_contiguous_ownership`] to split.
pub fn parse_g2o(text: &str) -> Result<PoseGraph> {
    parse_g2o_with(text, InfoReduction::default()).map(|(g, _)| g)
}

/// Parses g2o text, also returning the vertex estimates in index order.
pub fn parse_g2o_with(text: &str, how: InfoReduction) -> Result<(PoseGraph, Vec<Pose>)> {
    let (graph, poses) = scan(text, how, true)?;
    Ok((graph.expect("edges requested"), poses))
}

/// Vertex estimates only; edge records are skipped unparsed.
pub fn parse_vertices(text: &str) -> Result<Vec<Pose>> {
    scan(text, InfoReduction::default(), false).map(|(_, p)| p)
}

pub fn read_vertices_file(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_vertices(&text)
}

fn scan(text: &str, how: InfoReduction, with_edges: bool) -> Result<(Option<PoseGraph>, Vec<Pose>)> {
    let mut vertices: BTreeMap<usize, Vertex> = BTreeMap::new();
    let mut raw_edges: Vec<(usize, usize, usize, Pose, f64, f64, usize)> = Vec::new();
    let mut dim: Option<(usize, usize)> = None;
    let mut check_dim = |d: usize, line: usize| -> Result<()> {
        match dim {
            None => {
                dim = Some((d, line));
                Ok(())
            }
            Some((d0, l0)) if d0 != d => Err(Error::Format(format!(
                "line {line}: {d}D record in a {d0}D file (first {d0}D record on line {l0})"
            ))),
            _ => Ok(()),
        }
    };
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let tokens: Vec<&str> = raw.split_whitespace().collect();
        let Some(&tag) = tokens.first() else { continue };
        if tag.starts_with('#') {
            continue;
        }
        let rest = &tokens[1..];
        if !with_edges && tag.starts_with("EDGE_") {
            continue;
        }
        match tag {
            "VERTEX_SE2" => {
                check_dim(2, line)?;
                let v = numbers(rest, line, 4, tag)?;
                let id = index(rest[0], line)?;
                let pose = Pose { rotation: rot2(v[3]), translation: DVector::from_vec(vec![v[1], v[2]]) };
                vertices.insert(id, Vertex { dim: 2, pose });
            }
            "VERTEX_SE3:QUAT" => {
                check_dim(3, line)?;
                let v = numbers(rest, line, 8, tag)?;
                let id = index(rest[0], line)?;
                let pose = Pose { rotation: quat_rotation(&v[4..8]), translation: DVector::from_vec(v[1..4].to_vec()) };
                vertices.insert(id, Vertex { dim: 3, pose });
            }
            "EDGE_SE2" => {
                check_dim(2, line)?;
                let v = numbers(rest, line, 11, tag)?;
                let (i, j) = (index(rest[0], line)?, index(rest[1], line)?);
                let info = upper_to_full(3, &v[5..11]);
                let (kappa, tau) = reduce_info(&info, 2, how, line)?;
                let pose = Pose { rotation: rot2(v[4]), translation: DVector::from_vec(vec![v[2], v[3]]) };
                raw_edges.push((line, i, j, pose, kappa, tau, 2));
            }
            "EDGE_SE3:QUAT" => {
                check_dim(3, line)?;
                let v = numbers(rest, line, 30, tag)?;
                let (i, j) = (index(rest[0], line)?, index(rest[1], line)?);
                let info = upper_to_full(6, &v[9..30]);
                let (kappa, tau) = reduce_info(&info, 3, how, line)?;
                let pose = Pose { rotation: quat_rotation(&v[5..9]), translation: DVector::from_vec(v[2..5].to_vec()) };
                raw_edges.push((line, i, j, pose, kappa, tau, 3));
            }
            "FIX" | "PARAMS_SE2OFFSET" | "PARAMS_SE3OFFSET" => continue,
            other => {
                return Err(Error::Parse { line, msg: format!("unknown record type '{other}'") });
            }
        }
    }
    let (d, _) = dim.ok_or_else(|| Error::Format("no VERTEX/EDGE records found".into()))?;
    let n = vertices.len();
    // dense ids 0..n-1 are required
    for (k, (&id, v)) in vertices.iter().enumerate() {
        if id != k {
            return Err(Error::Validation(format!("vertex ids are not dense: expected {k}, found {id}")));
        }
        debug_assert_eq!(v.dim, d);
    }
    if !with_edges {
        if n == 0 {
            return Err(Error::Format("no VERTEX records found".into()));
        }
        return Ok((None, vertices.into_values().map(|v| v.pose).collect()));
    }
    let mut edges = Vec::with_capacity(raw_edges.len());
    for (line, i, j, pose, kappa, tau, _) in raw_edges {
        for id in [i, j] {
            if !vertices.contains_key(&id) {
                return Err(Error::Parse { line, msg: format!("edge references undeclared vertex {id}") });
            }
        }
        if i == j {
            return Err(Error::Parse { line, msg: format!("self loop on vertex {i}") });
        }
        edges.push(RelativeMeasurement { i, j, rotation: pose.rotation, translation: pose.translation, kappa, tau });
    }
    let graph = PoseGraph::new(d, n, edges, vec![0; n])?;
    let poses = vertices.into_values().map(|v| v.pose).collect();
    Ok((Some(graph), poses))
}

pub fn read_g2o_file(path: impl AsRef<Path>, how: InfoReduction) -> Result<(PoseGraph, Vec<Pose>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_g2o_with(&text, how)
}

fn angle(r: &DMatrix<f64>) -> f64 {
    r[(1, 0)].atan2(r[(0, 0)])
}

fn quat(r: &DMatrix<f64>) -> [f64; 4] {
    let m = Matrix3::from_iterator(r.iter().copied());
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(m));
    [q.i, q.j, q.k, q.w]
}

/// `VERTEX_*` lines for `poses`.
pub fn write_vertices(poses: &[Pose]) -> String {
    let mut s = String::new();
    for (id, p) in poses.iter().enumerate() {
        let t = &p.translation;
        if p.dim() == 2 {
            writeln!(s, "VERTEX_SE2 {id} {:.17e} {:.17e} {:.17e}", t[0], t[1], angle(&p.rotation)).unwrap();
        } else {
            let q = quat(&p.rotation);
            writeln!(
                s,
                "VERTEX_SE3:QUAT {id} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e}",
                t[0], t[1], t[2], q[0], q[1], q[2], q[3]
            )
            .unwrap();
        }
    }
    s
}

/// Serializes a graph (and vertex estimates) as g2o text. The information
/// matrix is written diagonal so that parsing with `how` recovers κ and τ.
pub fn write_g2o(graph: &PoseGraph, poses: &[Pose], how: InfoReduction) -> String {
    let mut s = write_vertices(poses);
    for e in &graph.edges {
        let t = &e.translation;
        let omega_r = match (how, graph.dimension) {
            (InfoReduction::CovarianceTrace, 3) => 2.0 * e.kappa,
            _ => e.kappa,
        };
        if graph.dimension == 2 {
            writeln!(
                s,
                "EDGE_SE2 {} {} {:.17e} {:.17e} {:.17e} {:.17e} 0 0 {:.17e} 0 {:.17e}",
                e.i, e.j, t[0], t[1], angle(&e.rotation), e.tau, e.tau, omega_r
            )
            .unwrap();
        } else {
            let q = quat(&e.rotation);
            let mut info = DMatrix::<f64>::zeros(6, 6);
            for k in 0..3 {
                info[(k, k)] = e.tau;
                info[(k + 3, k + 3)] = omega_r;
            }
            let mut upper = Vec::with_capacity(21);
            for i in 0..6 {
                for j in i..6 {
                    upper.push(format!("{:.17e}", info[(i, j)]));
                }
            }
            writeln!(
                s,
                "EDGE_SE3:QUAT {} {} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {:.17e} {}",
                e.i,
                e.j,
                t[0],
                t[1],
                t[2],
                q[0],
                q[1],
                q[2],
                q[3],
                upper.join(" ")
            )
            .unwrap();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    const CHAIN: &str = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 0 0 0 1 0 0 1 0 1\n";

    #[test]
    fn identity_chain() {
        let g = parse_g2o(CHAIN).unwrap();
        assert_eq!((g.num_poses, g.dimension, g.edges.len()), (2, 2, 1));
        assert_eq!((g.edges[0].kappa, g.edges[0].tau), (1.0, 1.0));
    }

    #[test]
    fn undeclared_vertex_reports_line() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 7 0 0 0 1 0 0 1 0 1\n";
        match parse_g2o(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn malformed_number_reports_line() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 x 0 0\n";
        assert!(matches!(parse_g2o(text), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn mixed_dimensions_rejected() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE3:QUAT 1 0 0 0 0 0 0 1\n";
        assert!(matches!(parse_g2o(text), Err(Error::Format(_))));
    }

    #[test]
    fn disconnected_rejected() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nVERTEX_SE2 2 1 0 0\nEDGE_SE2 0 1 0 0 0 1 0 0 1 0 1\n";
        assert!(matches!(parse_g2o(text), Err(Error::Validation(_))));
    }

    #[test]
    fn covariance_trace_reduction() {
        // 3D edge with translational info 4·I and rotational info 10·I
        let mut info = vec![];
        for i in 0..6 {
            for j in i..6 {
                info.push(if i != j { 0.0 } else if i < 3 { 4.0 } else { 10.0 });
            }
        }
        let info: Vec<String> = info.iter().map(|x| x.to_string()).collect();
        let text = format!(
            "VERTEX_SE3:QUAT 0 0 0 0 0 0 0 1\nVERTEX_SE3:QUAT 1 1 0 0 0 0 0 1\nEDGE_SE3:QUAT 0 1 1 0 0 0 0 0 1 {}\n",
            info.join(" ")
        );
        let (g, _) = parse_g2o_with(&text, InfoReduction::CovarianceTrace).unwrap();
        assert!((g.edges[0].tau - 4.0).abs() < 1e-12);
        assert!((g.edges[0].kappa - 5.0).abs() < 1e-12);
        let (g, _) = parse_g2o_with(&text, InfoReduction::MeanDiagonal).unwrap();
        assert!((g.edges[0].kappa - 10.0).abs() < 1e-12);
    }

    #[test]
    fn vertices_without_edges() {
        let text = "VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 2 0.5\nEDGE_SE2 0 1 garbage\n";
        let poses = parse_vertices(text).unwrap();
        assert_eq!(poses.len(), 2);
        assert_eq!(poses[1].translation.as_slice(), &[1.0, 2.0]);
        let back = parse_vertices(&write_vertices(&poses)).unwrap();
        assert!((&back[1].rotation - &poses[1].rotation).norm() < 1e-15);
    }
}
