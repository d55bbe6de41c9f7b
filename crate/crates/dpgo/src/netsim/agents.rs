use nalgebra::DMatrix;
use rayon::prelude::*;
use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};

use super::message::{AggregateTag, Control, Message, Slot};
use super::network::{Phase, RoundScheduler};
use crate::certify::{
    init_random, min_eig, round_pose, spanning_tree_plan, tree_step, CertifyBackend, ChordalSystem, EigenResult,
    InitMethod, PowerConfig, SolveConfig,
};
use crate::error::{Error, Result};
use crate::manifold::{block_sym_product, LiftedState};
use crate::objective::{robot_cost, robot_grad_norm_sq, CertificateOperator, ReducedProblem, SymmetricOperator};
use crate::posegraph::{Pose, PoseGraph};
use crate::rbcd::{block_update, ordered_sum, Backend, Problem, SolverConfig};

/// Spanning tree of the robot dependency graph.
#[derive(Clone, Debug)]
struct Tree {
    root: usize,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
}

impl Tree {
    fn bfs(neighbors: &[Vec<usize>], root: usize) -> Result<Tree> {
        let n = neighbors.len();
        let mut parent = vec![None; n];
        let mut seen = vec![false; n];
        let mut children = vec![Vec::new(); n];
        let mut queue = std::collections::VecDeque::from([root]);
        seen[root] = true;
        while let Some(u) = queue.pop_front() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    parent[v] = Some(u);
                    children[u].push(v);
                    queue.push_back(v);
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Validation("robot dependency graph is disconnected".into()));
        }
        Ok(Tree { root, parent, children })
    }
}

struct State {
    net: RoundScheduler,
    /// Each robot's view of a slot: its own columns, received public
    /// columns, NaN everywhere else.
    views: Vec<HashMap<Slot, DMatrix<f64>>>,
    /// Last values sent per `(slot, pose)`, as bit patterns.
    sent: Vec<HashMap<(Slot, usize), Vec<u64>>>,
    eig_views: Vec<Vec<f64>>,
}

/// Robots as message-passing agents. Every per-robot computation reads the
/// robot's own view, so a value it never received is NaN and would poison the
/// result.
pub struct NetBackend<'g> {
    problem: Problem,
    graph: &'g PoseGraph,
    /// Per pose: the other robots that share an edge with it.
    recipients: Vec<Vec<usize>>,
    tree: Tree,
    state: RefCell<State>,
}

impl<'g> NetBackend<'g> {
    pub fn new(graph: &'g PoseGraph, strict_privacy: bool) -> Result<Self> {
        let problem = Problem::new(graph)?;
        let part = &problem.part;
        let mut recipients = vec![Vec::new(); graph.num_poses];
        for e in &graph.edges {
            let (a, b) = (part.robot_of[e.i], part.robot_of[e.j]);
            if a != b {
                recipients[e.i].push(b);
                recipients[e.j].push(a);
            }
        }
        for r in &mut recipients {
            r.sort_unstable();
            r.dedup();
        }
        let tree = Tree::bfs(&part.neighbors, 0)?;
        let state = State {
            net: RoundScheduler::new(part, strict_privacy),
            views: vec![HashMap::new(); part.num_robots],
            sent: vec![HashMap::new(); part.num_robots],
            eig_views: vec![Vec::new(); part.num_robots],
        };
        Ok(NetBackend { problem, graph, recipients, tree, state: RefCell::new(state) })
    }

    pub fn scheduler(&self) -> std::cell::Ref<'_, RoundScheduler> {
        std::cell::Ref::map(self.state.borrow(), |s| &s.net)
    }

    fn robots(&self) -> usize {
        self.problem.part.num_robots
    }

    fn set_phase(&self, p: Phase) {
        self.state.borrow_mut().net.phase = p;
    }

    /// Owners send changed public columns (width `w` per pose) to the robots
    /// that need them; afterwards every view holds the owner's current values.
    fn sync(&self, slot: Slot, x: &DMatrix<f64>, w: usize) {
        let part = &self.problem.part;
        let mut st = self.state.borrow_mut();
        let st = &mut *st;
        let stale = st.views.iter().any(|v| v.get(&slot).is_none_or(|m| m.shape() != x.shape()));
        if stale {
            for b in 0..self.robots() {
                st.views[b].insert(slot, DMatrix::from_element(x.nrows(), x.ncols(), f64::NAN));
                st.sent[b].retain(|k, _| k.0 != slot);
            }
        }
        let r = x.nrows();
        for (b, poses) in part.poses_of.iter().enumerate() {
            for &i in poses {
                if !part.public[i] || self.recipients[i].is_empty() {
                    continue;
                }
                let vals = &x.as_slice()[i * w * r..(i + 1) * w * r];
                let bits: Vec<u64> = vals.iter().map(|v| v.to_bits()).collect();
                if st.sent[b].get(&(slot, i)) == Some(&bits) {
                    continue;
                }
                for &to in &self.recipients[i] {
                    st.net.send(b, to, Message::PublicPoseUpdate { robot: b, pose: i, slot, values: vals.to_vec() });
                }
                st.sent[b].insert((slot, i), bits);
            }
        }
        st.net.advance();
        for b in 0..self.robots() {
            let view = st.views[b].get_mut(&slot).expect("view allocated");
            for env in st.net.take_inbox(b) {
                if let Message::PublicPoseUpdate { pose, values, slot: s, .. } = env.msg {
                    debug_assert_eq!(s, slot);
                    view.as_mut_slice()[pose * w * r..(pose + 1) * w * r].copy_from_slice(&values);
                }
            }
            for &i in &part.poses_of[b] {
                let span = i * w * r..(i + 1) * w * r;
                view.as_mut_slice()[span.clone()].copy_from_slice(&x.as_slice()[span]);
            }
        }
    }

    fn view(&self, b: usize, slot: Slot) -> DMatrix<f64> {
        self.state.borrow().views[b][&slot].clone()
    }

    /// Convergecast of per-robot values to the tree root, which sums them in
    /// robot order and sends the total back down.
    fn aggregate(&self, tag: AggregateTag, partials: &[f64]) -> f64 {
        let n = self.robots();
        if n == 1 {
            return ordered_sum(partials.iter().copied());
        }
        let mut st = self.state.borrow_mut();
        let mut collected: Vec<Vec<(usize, f64)>> = (0..n).map(|b| vec![(b, partials[b])]).collect();
        let mut waiting: Vec<usize> = self.tree.children.iter().map(Vec::len).collect();
        let mut reported = vec![false; n];
        while waiting[self.tree.root] > 0 {
            for b in 0..n {
                if let Some(p) = self.tree.parent[b] {
                    if !reported[b] && waiting[b] == 0 {
                        reported[b] = true;
                        let entries = std::mem::take(&mut collected[b]);
                        st.net.send(b, p, Message::ScalarAggregate { tag, entries });
                    }
                }
            }
            st.net.advance();
            for b in 0..n {
                for env in st.net.take_inbox(b) {
                    if let Message::ScalarAggregate { entries, .. } = env.msg {
                        collected[b].extend(entries);
                        waiting[b] -= 1;
                    }
                }
            }
        }
        let mut all = std::mem::take(&mut collected[self.tree.root]);
        all.sort_by_key(|e| e.0);
        let total = ordered_sum(all.iter().map(|e| e.1));
        let mut known = vec![None; n];
        known[self.tree.root] = Some(total);
        let mut frontier = vec![self.tree.root];
        while !frontier.is_empty() {
            for &u in &frontier {
                for &c in &self.tree.children[u] {
                    st.net.send(u, c, Message::ScalarAggregate { tag, entries: vec![(self.tree.root, known[u].unwrap())] });
                }
            }
            st.net.advance();
            let mut next = Vec::new();
            for b in 0..n {
                for env in st.net.take_inbox(b) {
                    if let Message::ScalarAggregate { entries, .. } = env.msg {
                        known[b] = Some(entries[0].1);
                        next.push(b);
                    }
                }
            }
            frontier = next;
        }
        debug_assert!(known.iter().all(|k| k.map(f64::to_bits) == Some(total.to_bits())));
        total
    }

    /// Every robot floods its value until all robots know all values.
    fn flood(&self, values: &[f64]) -> Vec<f64> {
        let n = self.robots();
        let part = &self.problem.part;
        let mut st = self.state.borrow_mut();
        let mut known: Vec<BTreeMap<usize, f64>> = (0..n).map(|b| BTreeMap::from([(b, values[b])])).collect();
        let mut fresh: Vec<Vec<usize>> = (0..n).map(|b| vec![b]).collect();
        while known.iter().any(|k| k.len() < n) {
            for b in 0..n {
                for &o in &fresh[b] {
                    for &nb in &part.neighbors[b] {
                        st.net.send(b, nb, Message::GradNormShare { robot: o, value: known[b][&o] });
                    }
                }
            }
            if !st.net.advance() {
                break;
            }
            for b in 0..n {
                fresh[b].clear();
                for env in st.net.take_inbox(b) {
                    if let Message::GradNormShare { robot, value } = env.msg {
                        if let std::collections::btree_map::Entry::Vacant(e) = known[b].entry(robot) {
                            e.insert(value);
                            fresh[b].push(robot);
                        }
                    }
                }
                fresh[b].sort_unstable();
            }
        }
        let out: Vec<f64> = known[0].values().copied().collect();
        debug_assert!(known.iter().all(|k| k.values().copied().collect::<Vec<_>>() == out));
        out
    }

    /// Sends a control signal down the aggregation tree.
    fn broadcast(&self, c: Control) {
        let mut st = self.state.borrow_mut();
        let mut frontier = vec![self.tree.root];
        while !frontier.is_empty() {
            let mut next = Vec::new();
            for &u in &frontier {
                for &ch in &self.tree.children[u] {
                    st.net.send(u, ch, Message::ControlSignal(c));
                    next.push(ch);
                }
            }
            st.net.advance();
            for &b in &next {
                st.net.take_inbox(b);
            }
            frontier = next;
        }
    }

    fn spanning_tree(&self) -> Result<Vec<Pose>> {
        let g = self.graph;
        let d = g.dimension;
        let k = d + 1;
        let part = &self.problem.part;
        let plan = spanning_tree_plan(g)?;
        let mut level = vec![0usize; g.num_poses];
        for &(v, parent, _) in &plan {
            level[v] = level[parent] + 1;
        }
        let mut t = DMatrix::from_element(d, k * g.num_poses, f64::NAN);
        t.columns_mut(0, k).copy_from(&LiftedState::from_poses(&[Pose::identity(d)]).x);
        let mut start = 0;
        while start < plan.len() {
            let lv = level[plan[start].0];
            let end = start + plan[start..].iter().take_while(|p| level[p.0] == lv).count();
            self.sync(Slot::TreePose, &t, k);
            for &(v, parent, edge) in &plan[start..end] {
                let view = self.view(part.robot_of[v], Slot::TreePose);
                let pp = LiftedState::new(d, view.clone());
                let parent_pose = Pose { rotation: pp.y(parent), translation: pp.p(parent) };
                let pose = tree_step(g, &parent_pose, parent, edge);
                t.columns_mut(v * k, d).copy_from(&pose.rotation);
                t.column_mut(v * k + d).copy_from(&pose.translation);
            }
            start = end;
        }
        let s = LiftedState::new(d, t);
        Ok((0..g.num_poses).map(|i| Pose { rotation: s.y(i), translation: s.p(i) }).collect())
    }

    fn chordal(&self, sweeps: usize) -> Result<Vec<Pose>> {
        let g = self.graph;
        let part = &self.problem.part;
        let sys = ChordalSystem::new(g, part)?;
        let d = sys.d;
        let mut w = sys.initial_rotations();
        for _ in 0..sweeps {
            for c in 0..part.num_colors {
                self.sync(Slot::ChordalRotation, &w, d);
                for b in part.robots_of_color(c) {
                    let mut view = self.view(b, Slot::ChordalRotation);
                    sys.rot_blocks[b].solve(&mut view, None);
                    for &u in &sys.rot_blocks[b].unknowns {
                        w.column_mut(u).copy_from(&view.column(u));
                    }
                }
            }
        }
        let mut rots = DMatrix::from_element(d, d * sys.n, f64::NAN);
        for poses in &part.poses_of {
            for &i in poses {
                rots.columns_mut(i * d, d).copy_from(&sys.rotation_of(&w, i));
            }
        }
        self.sync(Slot::Rotation, &rots, d);
        let rhs: Vec<DMatrix<f64>> = (0..part.num_robots)
            .map(|b| {
                let view = self.view(b, Slot::Rotation);
                let rv: Vec<DMatrix<f64>> = (0..sys.n).map(|i| view.columns(i * d, d).into_owned()).collect();
                sys.translation_rhs(g, &rv)
            })
            .collect();
        let mut t = DMatrix::zeros(d, sys.n);
        for _ in 0..sweeps {
            for c in 0..part.num_colors {
                self.sync(Slot::ChordalTranslation, &t, 1);
                for b in part.robots_of_color(c) {
                    let mut view = self.view(b, Slot::ChordalTranslation);
                    sys.trans_blocks[b].solve(&mut view, Some(&rhs[b]));
                    for &u in &sys.trans_blocks[b].unknowns {
                        t.column_mut(u).copy_from(&view.column(u));
                    }
                }
            }
        }
        Ok((0..sys.n)
            .map(|i| Pose { rotation: rots.columns(i * d, d).into_owned(), translation: t.column(i).into_owned() })
            .collect())
    }
}

impl Backend for NetBackend<'_> {
    fn problem(&self) -> &Problem {
        &self.problem
    }

    fn cost(&self, x: &DMatrix<f64>) -> f64 {
        self.set_phase(Phase::LocalSearch);
        self.sync(Slot::Primal, x, self.problem.d() + 1);
        let partials: Vec<f64> = (0..self.robots())
            .map(|b| robot_cost(&self.problem.q, &self.view(b, Slot::Primal), &self.problem.part, b))
            .collect();
        self.aggregate(AggregateTag::Cost, &partials)
    }

    fn grad_norms_sq(&self, x: &DMatrix<f64>) -> Vec<f64> {
        self.set_phase(Phase::LocalSearch);
        self.sync(Slot::Primal, x, self.problem.d() + 1);
        let local: Vec<f64> = (0..self.robots())
            .map(|b| robot_grad_norm_sq(&self.problem.q, &self.view(b, Slot::Primal), &self.problem.part, b))
            .collect();
        self.flood(&local)
    }

    fn update(&self, base: &DMatrix<f64>, robots: &[usize], cfg: &SolverConfig) -> Result<DMatrix<f64>> {
        self.set_phase(Phase::LocalSearch);
        let d = self.problem.d();
        self.sync(Slot::Primal, base, d + 1);
        let mut out = base.clone();
        let views: Vec<DMatrix<f64>> = robots.iter().map(|&b| self.view(b, Slot::Primal)).collect();
        let problem = &self.problem;
        let outcomes: Vec<_> = robots
            .par_iter()
            .zip(views.par_iter())
            .map(|(&b, view)| {
                let bs = &problem.blocks[b];
                let rp = ReducedProblem::local(bs, view, d);
                let x_b = bs.gather(view);
                let pre = cfg.precondition.then(|| &problem.precons[b]);
                block_update(&rp, &x_b, pre, cfg)
            })
            .collect();
        for (&b, o) in robots.iter().zip(outcomes) {
            let o = o?;
            if o.accepted {
                self.problem.blocks[b].scatter(&o.x_b, &mut out);
            }
        }
        Ok(out)
    }
}

/// `S(X)` with rows owned by robots: products exchange public slices with
/// neighbors, inner products are aggregated over the tree.
struct NetCertificate<'a, 'g> {
    backend: &'a NetBackend<'g>,
    ops: Vec<CertificateOperator<'a>>,
}

impl SymmetricOperator for NetCertificate<'_, '_> {
    fn dim(&self) -> usize {
        self.backend.problem.q.dim()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let be = self.backend;
        let part = &be.problem.part;
        let k = be.problem.d() + 1;
        {
            let mut st = be.state.borrow_mut();
            let st = &mut *st;
            for (b, poses) in part.poses_of.iter().enumerate() {
                let v = &mut st.eig_views[b];
                if v.len() != x.len() {
                    *v = vec![f64::NAN; x.len()];
                }
                for &i in poses {
                    v[i * k..(i + 1) * k].copy_from_slice(&x[i * k..(i + 1) * k]);
                    if part.public[i] {
                        for &to in &be.recipients[i] {
                            let values = x[i * k..(i + 1) * k].to_vec();
                            st.net.send(b, to, Message::EigSegment { robot: b, pose: i, values });
                        }
                    }
                }
            }
            st.net.advance();
            for b in 0..part.num_robots {
                for env in st.net.take_inbox(b) {
                    if let Message::EigSegment { pose, values, .. } = env.msg {
                        st.eig_views[b][pose * k..(pose + 1) * k].copy_from_slice(&values);
                    }
                }
            }
        }
        let st = be.state.borrow();
        for (b, poses) in part.poses_of.iter().enumerate() {
            let v = &st.eig_views[b];
            for &i in poses {
                for c in i * k..(i + 1) * k {
                    y[c] = self.ops[b].apply_row(v, c);
                }
            }
        }
    }

    fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        let be = self.backend;
        let part = &be.problem.part;
        let k = be.problem.d() + 1;
        let partials: Vec<f64> = part
            .poses_of
            .iter()
            .map(|poses| {
                let mut s = 0.0;
                for &i in poses {
                    for c in i * k..(i + 1) * k {
                        s += a[c] * b[c];
                    }
                }
                s
            })
            .collect();
        be.aggregate(AggregateTag::EigDot, &partials)
    }
}

impl CertifyBackend for NetBackend<'_> {
    fn min_eig(&self, x: &LiftedState, cfg: &PowerConfig, init: Option<&[f64]>, seed: u64) -> EigenResult {
        self.set_phase(Phase::Certification);
        let q = &self.problem.q;
        let d = q.d;
        let k = d + 1;
        let r = x.r();
        self.sync(Slot::Primal, &x.x, k);
        let ops = (0..self.robots())
            .map(|b| {
                let view = self.view(b, Slot::Primal);
                let mut xq = DMatrix::from_element(r, q.dim(), f64::NAN);
                let mut lambda = vec![DMatrix::from_element(d, d, f64::NAN); q.n];
                for &i in &self.problem.part.poses_of[b] {
                    for c in i * k..(i + 1) * k {
                        q.matrix.right_mul_column(&view, c, &mut xq.as_mut_slice()[c * r..(c + 1) * r]);
                    }
                    lambda[i] = block_sym_product(&view, &xq, d, i);
                }
                CertificateOperator::from_lambda(q, lambda)
            })
            .collect();
        let op = NetCertificate { backend: self, ops };
        min_eig(&op, cfg, init, seed)
    }

    fn initial_poses(&self, graph: &PoseGraph, cfg: &SolveConfig) -> Result<Vec<Pose>> {
        self.set_phase(Phase::Initialization);
        match cfg.init {
            InitMethod::Random => Ok(init_random(graph, cfg.seed)),
            InitMethod::SpanningTree => self.spanning_tree(),
            InitMethod::Chordal => self.chordal(cfg.chordal_sweeps),
        }
    }

    fn round(&self, x: &LiftedState) -> Result<Vec<Pose>> {
        self.set_phase(Phase::Rounding);
        let part = &self.problem.part;
        let holder = part.robot_of[0];
        let tree = Tree::bfs(&part.neighbors, holder)?;
        let y1 = x.y(0);
        let mut known: Vec<Option<DMatrix<f64>>> = vec![None; self.robots()];
        known[holder] = Some(y1.clone());
        {
            let mut st = self.state.borrow_mut();
            let mut frontier = vec![holder];
            while !frontier.is_empty() {
                for &u in &frontier {
                    for &c in &tree.children[u] {
                        let values = known[u].as_ref().unwrap().as_slice().to_vec();
                        st.net.send(u, c, Message::FrameRelay { values });
                    }
                }
                st.net.advance();
                let mut next = Vec::new();
                for b in 0..self.robots() {
                    for env in st.net.take_inbox(b) {
                        if let Message::FrameRelay { values } = env.msg {
                            known[b] = Some(DMatrix::from_column_slice(y1.nrows(), y1.ncols(), &values));
                            next.push(b);
                        }
                    }
                }
                frontier = next;
            }
        }
        let mut poses = vec![None; x.n()];
        for (b, ps) in part.poses_of.iter().enumerate() {
            let y1t = known[b].as_ref().expect("frame reached every robot").transpose();
            for &i in ps {
                poses[i] = Some(round_pose(&y1t, x, i)?);
            }
        }
        Ok(poses.into_iter().map(Option::unwrap).collect())
    }

    fn rank_transition(&self, rank: usize) {
        self.set_phase(Phase::Control);
        self.broadcast(Control::RankTransition(rank));
    }
}
