use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::Serialize;

use crate::pomdp::{ActionId, BeliefSupport, ObsId, PomdpModel};

/// Index of an interned belief support.
pub type SupportId = usize;

/// Observation-labelled successors of one `(Θ, q, a)`, sorted by observation.
pub type Post = Vec<(ObsId, SupportId)>;

/// The layered belief-support transition system reachable from a root support
/// in at most `H` steps.
#[derive(Debug, Clone, Serialize)]
pub struct Bsts {
    horizon: usize,
    num_actions: usize,
    root: SupportId,
    supports: Vec<BeliefSupport>,
    #[serde(skip)]
    index: HashMap<BeliefSupport, SupportId>,
    /// `layers[q]` lists the supports reachable in exactly `q` steps.
    layers: Vec<Vec<SupportId>>,
    #[serde(skip)]
    nodes: HashSet<(SupportId, usize)>,
    #[serde(skip)]
    post: HashMap<(SupportId, usize), Vec<Post>>,
}

/// Observation-partitioned one-step successors of `support` under `a`.
pub fn successor_supports(
    model: &PomdpModel,
    support: &BeliefSupport,
    a: ActionId,
) -> BTreeMap<ObsId, BTreeSet<usize>> {
    let mut groups: BTreeMap<ObsId, BTreeSet<usize>> = BTreeMap::new();
    for &s in support.states() {
        for (next, _) in model.successors(s, a) {
            for (o, _) in model.observations(next, a) {
                groups.entry(o).or_default().insert(next);
            }
        }
    }
    groups
}

impl Bsts {
    /// Breadth-first closure of `root` to depth `horizon`.
    pub fn build(model: &PomdpModel, root: &BeliefSupport, horizon: usize) -> Self {
        let mut bsts = Bsts {
            horizon,
            num_actions: model.num_actions(),
            root: 0,
            supports: Vec::new(),
            index: HashMap::new(),
            layers: vec![Vec::new(); horizon + 1],
            nodes: HashSet::new(),
            post: HashMap::new(),
        };
        bsts.root = bsts.intern(root.clone());
        bsts.layers[0].push(bsts.root);
        bsts.nodes.insert((bsts.root, 0));
        for q in 0..horizon {
            let mut next_layer: BTreeSet<SupportId> = BTreeSet::new();
            let mut seen_order = Vec::new();
            for i in 0..bsts.layers[q].len() {
                let id = bsts.layers[q][i];
                let mut per_action = Vec::with_capacity(bsts.num_actions);
                for a in 0..bsts.num_actions {
                    let groups = successor_supports(model, &bsts.supports[id], a);
                    let post: Post = groups
                        .into_iter()
                        .map(|(o, set)| (o, bsts.intern(BeliefSupport::from_set(&set))))
                        .collect();
                    for &(_, child) in &post {
                        if next_layer.insert(child) {
                            seen_order.push(child);
                            bsts.nodes.insert((child, q + 1));
                        }
                    }
                    per_action.push(post);
                }
                bsts.post.insert((id, q), per_action);
            }
            bsts.layers[q + 1] = seen_order;
        }
        bsts
    }

    fn intern(&mut self, support: BeliefSupport) -> SupportId {
        if let Some(&id) = self.index.get(&support) {
            return id;
        }
        let id = self.supports.len();
        self.index.insert(support.clone(), id);
        self.supports.push(support);
        id
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn root(&self) -> SupportId {
        self.root
    }

    pub fn support(&self, id: SupportId) -> &BeliefSupport {
        &self.supports[id]
    }

    pub fn id_of(&self, support: &BeliefSupport) -> Option<SupportId> {
        self.index.get(support).copied()
    }

    /// Supports reachable in exactly `q` steps, in discovery order.
    pub fn layer(&self, q: usize) -> &[SupportId] {
        self.layers.get(q).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn is_node(&self, id: SupportId, q: usize) -> bool {
        self.nodes.contains(&(id, q))
    }

    /// Number of `(Θ, q)` nodes.
    pub fn num_nodes(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    /// Number of distinct supports across all layers.
    pub fn num_supports(&self) -> usize {
        self.supports.len()
    }

    /// `post((Θ, q), a)` with observation labels; `None` unless `q < H` and
    /// `(Θ, q)` is a node.
    pub fn post(&self, id: SupportId, q: usize, a: ActionId) -> Option<&[(ObsId, SupportId)]> {
        self.post.get(&(id, q)).map(|p| p[a].as_slice())
    }

    /// The support reached from `(Θ, q)` by `a` and observation `o`.
    pub fn child(&self, id: SupportId, q: usize, a: ActionId, o: ObsId) -> Option<SupportId> {
        let post = self.post(id, q, a)?;
        post.binary_search_by_key(&o, |&(obs, _)| obs)
            .ok()
            .map(|i| post[i].1)
    }
}
