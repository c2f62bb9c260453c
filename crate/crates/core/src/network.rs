//! Static layered network compiled from the recursion.
//!
//! Everything in a recursion step except the shifts is independent of `t`, and the
//! shifts are affine in the coordinates already consumed. Unrolling the recursion
//! symbolically therefore gives a fixed `M`-layer network: a node at layer `m`
//! computes `mult · act(t_m − a₁(t₁..t_{m−1})) · Σ children`, and the terminal layer
//! has no children. Identical subtrees (same layer, activation, affine map,
//! multiplier and children) are stored once, which is what lets the volume head and
//! the `N` moment heads share most of their structure.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};

use rustc_hash::FxHashMap;

use serde::{Deserialize, Serialize};
use serde_json::error::Category;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exp_poly::{DdMat, RootKey, VertexGroups};
use crate::ilt::{activation, expand_rows, image_box, outside_box, Evaluation, Sides};
use crate::measurement::{MeasurementSystem, Perturbation};
use crate::numeric::{f64_from_hex, f64_to_hex, factorial, frexp, Dd, Wide};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Activation {
    /// `1_+(u)`, with value 1/2 on the boundary band.
    Threshold,
    /// `(u)_+`.
    Relu,
    /// `(u)_+^d`, evaluated natively.
    Rep(u32),
    /// `(u)_+^d` written as a ReLU followed by a power.
    ReluPow(u32),
}

impl Activation {
    pub fn for_degree(d: u32) -> Activation {
        match d {
            0 => Activation::Threshold,
            1 => Activation::Relu,
            d => Activation::Rep(d),
        }
    }

    pub fn degree(self) -> u32 {
        match self {
            Activation::Threshold => 0,
            Activation::Relu => 1,
            Activation::Rep(d) | Activation::ReluPow(d) => d,
        }
    }

    pub fn apply(self, u: Dd) -> Dd {
        match self {
            Activation::ReluPow(d) => {
                let r = if u.hi > 0.0 { u } else { Dd::ZERO };
                if d == 0 {
                    activation(0, u)
                } else {
                    r.powi(d)
                }
            }
            other => activation(other.degree(), u),
        }
    }

    /// Activation of a layer whose inversion is closed on the left.
    pub fn apply_reflected(self, u: Dd) -> Dd {
        let v = self.apply(-u);
        if self.degree() % 2 == 0 {
            -v
        } else {
            v
        }
    }

    fn kind(self) -> &'static str {
        match self {
            Activation::Threshold => "threshold",
            Activation::Relu => "relu",
            Activation::Rep(_) => "rep",
            Activation::ReluPow(_) => "relu_pow",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkNode {
    pub id: usize,
    /// 1-based layer.
    pub layer: usize,
    pub activation: Activation,
    /// `[c₀, c₁, …, c_M]` of the pre-activation `c₀ + Σ c_j t_j`; `c_layer = 1` and
    /// `c_j = 0` for `j > layer`.
    pub affine: Vec<Dd>,
    pub multiplier: Wide,
    pub children: Vec<usize>,
}

impl NetworkNode {
    pub fn pre_activation(&self, t: &[f64]) -> Dd {
        let mut u = self.affine[0];
        for j in 1..=self.layer {
            let c = self.affine[j];
            if !c.is_zero() {
                u += c * Dd::from_f64(t[j - 1]);
            }
        }
        u
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadEdge {
    pub node: usize,
    pub weight: Wide,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Heads {
    pub volume: Vec<HeadEdge>,
    /// One head per coordinate, 0-based.
    pub moments: Vec<Vec<HeadEdge>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkMeta {
    /// SHA-256 of the bits of `V_s` (row-major).
    pub basis_hash: String,
    pub perturbation: Option<Perturbation>,
    /// Left empty by [`compile`] so that artifacts are byte-reproducible.
    pub build_timestamp: Option<String>,
    /// Node count per layer before hash-consing.
    pub layer_sizes_before_dedup: Vec<usize>,
    /// Vertex groups of coinciding projections that were merged (empty if none).
    #[serde(default)]
    pub merged_vertices: Vec<Vec<usize>>,
    /// Range of each measurement coordinate over the simplex; outside it every
    /// head is exactly zero. Empty disables the gate.
    #[serde(default)]
    pub image_box: Vec<[f64; 2]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkSpec {
    pub n: usize,
    pub m: usize,
    pub nodes: Vec<NetworkNode>,
    pub heads: Heads,
    pub meta: NetworkMeta,
}

fn dd_bits(x: Dd) -> (u64, u64) {
    (x.hi.to_bits(), x.lo.to_bits())
}

fn wide_bits(x: Wide) -> (u64, u64, i64) {
    let (h, l) = dd_bits(x.mantissa());
    (h, l, x.exponent())
}

/// Affine functional `[c₀, c₁, …, c_M]`.
type Affine = Vec<Dd>;

/// Hash-consing table: nodes are compared exactly (bit patterns of every field);
/// the hash only selects a chain of candidates.
struct Builder {
    m: usize,
    nodes: Vec<NetworkNode>,
    heads: HashMap<u64, usize>,
    next_in_chain: Vec<Option<usize>>,
    created: Vec<usize>,
}

fn node_hash(layer: usize, act: Activation, affine: &[Dd], mult: Wide, children: &[usize]) -> u64 {
    let mut h = DefaultHasher::new();
    (layer, act).hash(&mut h);
    for x in affine {
        dd_bits(*x).hash(&mut h);
    }
    wide_bits(mult).hash(&mut h);
    children.hash(&mut h);
    h.finish()
}

fn same_bits(node: &NetworkNode, layer: usize, act: Activation, affine: &[Dd], mult: Wide, children: &[usize]) -> bool {
    node.layer == layer
        && node.activation == act
        && wide_bits(node.multiplier) == wide_bits(mult)
        && node.children == children
        && node.affine.iter().zip(affine).all(|(x, y)| dd_bits(*x) == dd_bits(*y))
}

impl Builder {
    fn intern(&mut self, layer: usize, act: Activation, affine: Affine, mult: Wide, children: Vec<usize>) -> usize {
        self.created[layer - 1] += 1;
        let h = node_hash(layer, act, &affine, mult, &children);
        let mut cur = self.heads.get(&h).copied();
        while let Some(id) = cur {
            if same_bits(&self.nodes[id], layer, act, &affine, mult, &children) {
                return id;
            }
            cur = self.next_in_chain[id];
        }
        let id = self.nodes.len();
        self.next_in_chain.push(self.heads.insert(h, id));
        self.nodes.push(NetworkNode {
            id,
            layer,
            activation: act,
            affine,
            multiplier: mult,
            children,
        });
        id
    }

    /// Nodes (one per activation degree) computing `phi ·` the inverse transform of
    /// the term with affine shift `a` and rows `b`, entered at `layer`.
    fn build(&mut self, a: &[Affine], b: &DdMat, phi: Wide, layer: usize) -> Result<Vec<usize>> {
        let mut tau: Affine = a[0].iter().map(|x| -*x).collect();
        tau[layer] += Dd::ONE;
        if a.len() == 1 {
            let r = b.rows();
            if r == 0 {
                return Err(Error::UnhandledPoleOrder {
                    layer,
                    detail: "terminal term without denominator rows".into(),
                });
            }
            let mut prod = Wide::ONE;
            for i in 0..r {
                let x = b.get(i, 0);
                if x.is_zero() {
                    return Err(Error::ZeroColumnEntry);
                }
                prod = prod * Wide::from_dd(x);
            }
            let deg = (r - 1) as u32;
            let mult = phi / (factorial(deg) * prod);
            return Ok(vec![self.intern(layer, Activation::for_degree(deg), tau, mult, Vec::new())]);
        }
        let exp = expand_rows(b, layer)?;
        let mult = phi * exp.inv_p;
        let mut by_degree: Vec<(u32, Vec<usize>)> = Vec::new();
        for ch in &exp.children {
            let shift: Vec<Affine> = a[1..]
                .iter()
                .zip(&ch.direction)
                .map(|(ai, c)| ai.iter().zip(&tau).map(|(x, y)| *x + *c * *y).collect())
                .collect();
            let ids = self.build(&shift, &ch.rows, ch.factor, layer + 1)?;
            match by_degree.iter_mut().find(|(d, _)| *d == ch.degree) {
                Some((_, v)) => v.extend(ids),
                None => by_degree.push((ch.degree, ids)),
            }
        }
        by_degree.sort_by_key(|(d, _)| *d);
        Ok(by_degree
            .into_iter()
            .map(|(d, children)| self.intern(layer, Activation::for_degree(d), tau.clone(), mult, children))
            .collect())
    }
}

/// SHA-256 of the bits of `V_s`, row-major; ties a network to the basis it was compiled from.
pub fn basis_hash(sys: &MeasurementSystem) -> String {
    let mut h = Sha256::new();
    for x in sys.v_s().data() {
        h.update(x.to_bits().to_le_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Unroll the recursion for the volume and all moment heads.
pub fn compile(sys: &MeasurementSystem) -> Result<NetworkSpec> {
    let (n, m) = (sys.n(), sys.m());
    let p = sys.vertex_projections();
    let groups = VertexGroups::new(&p);
    let mut builder = Builder {
        m,
        nodes: Vec::new(),
        heads: HashMap::new(),
        next_in_chain: Vec::new(),
        created: vec![0; m],
    };
    let mut root_nodes: HashMap<RootKey, Vec<usize>> = HashMap::new();
    let mut head = |builder: &mut Builder, roots: Vec<(Wide, RootKey)>| -> Result<Vec<HeadEdge>> {
        let mut edges = Vec::new();
        for (w, key) in roots {
            if !root_nodes.contains_key(&key) {
                let term = groups.root_term(&key);
                let a: Vec<Affine> = term
                    .a
                    .iter()
                    .map(|x| {
                        let mut v = vec![Dd::ZERO; builder.m + 1];
                        v[0] = *x;
                        v
                    })
                    .collect();
                let ids = builder.build(&a, &term.b, Wide::ONE, 1)?;
                root_nodes.insert(key.clone(), ids);
            }
            for &id in &root_nodes[&key] {
                edges.push(HeadEdge { node: id, weight: w });
            }
        }
        Ok(edges)
    };
    let volume = head(&mut builder, groups.volume_roots())?;
    let mut moments = Vec::with_capacity(n);
    for k in 0..n {
        moments.push(head(&mut builder, groups.moment_roots(k))?);
    }
    let merged_vertices = (0..groups.len())
        .map(|g| groups.members(g).to_vec())
        .filter(|v| v.len() > 1)
        .collect();
    Ok(NetworkSpec {
        n,
        m,
        nodes: builder.nodes,
        heads: Heads { volume, moments },
        meta: NetworkMeta {
            basis_hash: basis_hash(sys),
            perturbation: sys.perturbation(),
            build_timestamp: None,
            layer_sizes_before_dedup: builder.created,
            merged_vertices,
            image_box: image_box(&p),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LayerActivity {
    pub evaluated: usize,
    pub live: usize,
}

impl LayerActivity {
    pub fn live_fraction(&self) -> f64 {
        if self.evaluated == 0 {
            0.0
        } else {
            self.live as f64 / self.evaluated as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardOutput {
    pub evaluation: Evaluation,
    /// Per layer: nodes reached and nodes with a nonzero activation.
    pub activity: Vec<LayerActivity>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkStats {
    pub nodes_per_layer: Vec<usize>,
    pub nodes_per_layer_before_dedup: Vec<usize>,
    pub edges: usize,
    pub head_edges: usize,
    /// Nodes after hash-consing over nodes before.
    pub dedup_ratio: f64,
    /// `N^M`, the growth rate of the unshared tree.
    pub worst_case_bound: f64,
}

struct Forward<'a> {
    net: &'a NetworkSpec,
    t: &'a [f64],
    sides: Sides,
    /// Value and sum of absolute leaf-path contributions.
    /// Sparse: at larger M most nodes sit below a pruned parent and are never reached.
    memo: FxHashMap<usize, (Wide, Wide)>,
    activity: Vec<LayerActivity>,
}

impl Forward<'_> {
    fn value(&mut self, id: usize) -> (Wide, Wide) {
        if let Some(&v) = self.memo.get(&id) {
            return v;
        }
        let node = &self.net.nodes[id];
        let u = node.pre_activation(self.t);
        let act = if self.sides.is_left(node.layer) {
            node.activation.apply_reflected(u)
        } else {
            node.activation.apply(u)
        };
        let stats = &mut self.activity[node.layer - 1];
        stats.evaluated += 1;
        let v = if act.is_zero() {
            (Wide::ZERO, Wide::ZERO)
        } else {
            stats.live += 1;
            let (sum, mass) = if node.children.is_empty() {
                (Wide::ONE, Wide::ONE)
            } else {
                let mut acc = Wide::ZERO;
                let mut mass = Wide::ZERO;
                for &c in &node.children {
                    let (v, m) = self.value(c);
                    acc += v;
                    mass += m;
                }
                (acc, mass)
            };
            let scale = node.multiplier * Wide::from_dd(act);
            (scale * sum, scale.abs() * mass)
        };
        self.memo.insert(id, v);
        v
    }

    fn head(&mut self, edges: &[HeadEdge]) -> (Wide, Wide) {
        let mut acc = Wide::ZERO;
        let mut mass = Wide::ZERO;
        for e in edges {
            let (v, m) = self.value(e.node);
            acc += e.weight * v;
            mass += e.weight.abs() * m;
        }
        (acc, mass)
    }
}

impl NetworkSpec {
    /// Layered evaluation of every head at `t`; each node is evaluated at most once.
    pub fn forward(&self, t: &[f64]) -> Result<ForwardOutput> {
        self.forward_on(t, Sides::RIGHT)
    }

    /// Forward pass with the given closing side per layer; see [`Sides`].
    pub fn forward_on(&self, t: &[f64], sides: Sides) -> Result<ForwardOutput> {
        if t.len() != self.m {
            return Err(Error::ShapeError(format!("t has {} entries, network has M = {}", t.len(), self.m)));
        }
        if outside_box(&self.meta.image_box, t) {
            return Ok(ForwardOutput {
                evaluation: Evaluation {
                    volume: Wide::ZERO,
                    moments: vec![Wide::ZERO; self.n],
                    mass: Wide::ZERO,
                },
                activity: vec![LayerActivity::default(); self.m],
            });
        }
        let mut f = Forward {
            net: self,
            t,
            sides,
            memo: FxHashMap::default(),
            activity: vec![LayerActivity::default(); self.m],
        };
        let (volume, mut mass) = f.head(&self.heads.volume);
        let mut moments = Vec::with_capacity(self.n);
        for h in &self.heads.moments {
            let (v, m) = f.head(h);
            moments.push(v);
            if m > mass {
                mass = m;
            }
        }
        Ok(ForwardOutput {
            evaluation: Evaluation { volume, moments, mass },
            activity: f.activity,
        })
    }

    pub fn stats(&self) -> NetworkStats {
        let mut per_layer = vec![0; self.m];
        let mut edges = 0;
        for node in &self.nodes {
            per_layer[node.layer - 1] += 1;
            edges += node.children.len();
        }
        let head_edges = self.heads.volume.len() + self.heads.moments.iter().map(Vec::len).sum::<usize>();
        let before: usize = self.meta.layer_sizes_before_dedup.iter().sum();
        NetworkStats {
            nodes_per_layer: per_layer,
            nodes_per_layer_before_dedup: self.meta.layer_sizes_before_dedup.clone(),
            edges,
            head_edges,
            dedup_ratio: if before == 0 { 1.0 } else { self.nodes.len() as f64 / before as f64 },
            worst_case_bound: (self.n as f64).powi(self.m as i32),
        }
    }

    /// Rewrites every rectified-polynomial unit as a ReLU followed by a power.
    pub fn lower_rep(&self) -> NetworkSpec {
        let mut out = self.clone();
        for node in &mut out.nodes {
            if let Activation::Rep(d) = node.activation {
                node.activation = Activation::ReluPow(d);
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&NetworkDoc::from_spec(self)).expect("document is serialisable")
    }

    pub fn from_json(s: &str) -> Result<NetworkSpec> {
        let doc: NetworkDoc = serde_json::from_str(s).map_err(|e| match e.classify() {
            Category::Data => Error::SchemaMismatch(e.to_string()),
            Category::Io | Category::Syntax | Category::Eof => Error::CorruptDocument(e.to_string()),
        })?;
        doc.into_spec()
    }
}

// ---- JSON document ----

#[derive(Serialize, Deserialize)]
struct ScalarDoc {
    sign: i8,
    /// Natural log of the magnitude; absent for zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log: Option<f64>,
    /// Exact encoding `mant_hi:mant_lo:exp2`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hex: Option<String>,
}

impl ScalarDoc {
    fn from_wide(x: Wide) -> ScalarDoc {
        let m = x.mantissa();
        ScalarDoc {
            sign: x.signum(),
            log: (!x.is_zero()).then(|| x.ln_abs()),
            hex: Some(format!("{}:{}:{}", f64_to_hex(m.hi), f64_to_hex(m.lo), x.exponent())),
        }
    }

    fn to_wide(&self) -> Result<Wide> {
        if let Some(h) = &self.hex {
            let parts: Vec<&str> = h.split(':').collect();
            let bad = || Error::SchemaMismatch(format!("malformed scalar hex {h:?}"));
            if parts.len() != 3 {
                return Err(bad());
            }
            let hi = f64_from_hex(parts[0]).ok_or_else(bad)?;
            let lo = f64_from_hex(parts[1]).ok_or_else(bad)?;
            let e: i64 = parts[2].parse().map_err(|_| bad())?;
            return Ok(Wide::from_raw(Dd::from_parts(hi, lo), e));
        }
        match (self.sign, self.log) {
            (0, _) => Ok(Wide::ZERO),
            (s, Some(l)) if l.is_finite() && (s == 1 || s == -1) => {
                let l2 = l / std::f64::consts::LN_2;
                let e = l2.floor();
                let mant = ((l2 - e) * std::f64::consts::LN_2).exp() * s as f64;
                let (f, k) = frexp(mant);
                Ok(Wide::from_raw(Dd::from_f64(f), e as i64 + k as i64))
            }
            _ => Err(Error::SchemaMismatch("scalar needs sign ±1 with a finite log, or sign 0".into())),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct ActDoc {
    kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    degree: Option<u32>,
}

#[derive(Serialize, Deserialize)]
struct NodeDoc {
    id: usize,
    layer: usize,
    act: ActDoc,
    affine: Vec<f64>,
    /// Exact `hi:lo` encoding of each affine coefficient.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    affine_hex: Option<Vec<String>>,
    mult: ScalarDoc,
    children: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct EdgeDoc {
    node: usize,
    weight: ScalarDoc,
}

#[derive(Serialize, Deserialize)]
struct HeadsDoc {
    volume: Vec<EdgeDoc>,
    moments: Vec<Vec<EdgeDoc>>,
}

#[derive(Serialize, Deserialize)]
struct NetworkDoc {
    version: u32,
    #[serde(rename = "N")]
    n: usize,
    #[serde(rename = "M")]
    m: usize,
    nodes: Vec<NodeDoc>,
    heads: HeadsDoc,
    #[serde(default)]
    meta: Option<NetworkMeta>,
}

fn edges_doc(edges: &[HeadEdge]) -> Vec<EdgeDoc> {
    edges
        .iter()
        .map(|e| EdgeDoc {
            node: e.node,
            weight: ScalarDoc::from_wide(e.weight),
        })
        .collect()
}

fn edges_spec(edges: &[EdgeDoc]) -> Result<Vec<HeadEdge>> {
    edges
        .iter()
        .map(|e| {
            Ok(HeadEdge {
                node: e.node,
                weight: e.weight.to_wide()?,
            })
        })
        .collect()
}

impl NetworkDoc {
    fn from_spec(net: &NetworkSpec) -> NetworkDoc {
        let nodes = net
            .nodes
            .iter()
            .map(|nd| NodeDoc {
                id: nd.id,
                layer: nd.layer,
                act: ActDoc {
                    kind: nd.activation.kind().into(),
                    degree: match nd.activation {
                        Activation::Rep(d) | Activation::ReluPow(d) => Some(d),
                        _ => None,
                    },
                },
                affine: nd.affine.iter().map(|x| x.to_f64()).collect(),
                affine_hex: Some(
                    nd.affine
                        .iter()
                        .map(|x| format!("{}:{}", f64_to_hex(x.hi), f64_to_hex(x.lo)))
                        .collect(),
                ),
                mult: ScalarDoc::from_wide(nd.multiplier),
                children: nd.children.clone(),
            })
            .collect();
        NetworkDoc {
            version: SCHEMA_VERSION,
            n: net.n,
            m: net.m,
            nodes,
            heads: HeadsDoc {
                volume: edges_doc(&net.heads.volume),
                moments: net.heads.moments.iter().map(|h| edges_doc(h)).collect(),
            },
            meta: Some(net.meta.clone()),
        }
    }

    fn into_spec(self) -> Result<NetworkSpec> {
        let schema = |msg: String| Error::SchemaMismatch(msg);
        if self.version != SCHEMA_VERSION {
            return Err(schema(format!("version {} (expected {SCHEMA_VERSION})", self.version)));
        }
        let (n, m) = (self.n, self.m);
        if m == 0 || m > n {
            return Err(schema(format!("invalid dimensions N = {n}, M = {m}")));
        }
        let count = self.nodes.len();
        let mut nodes = Vec::with_capacity(count);
        for (i, nd) in self.nodes.into_iter().enumerate() {
            if nd.id != i {
                return Err(schema(format!("node {i} carries id {}", nd.id)));
            }
            if nd.layer == 0 || nd.layer > m {
                return Err(schema(format!("node {i} has layer {}", nd.layer)));
            }
            let activation = match (nd.act.kind.as_str(), nd.act.degree) {
                ("threshold", None | Some(0)) => Activation::Threshold,
                ("relu", None | Some(1)) => Activation::Relu,
                ("rep", Some(d)) => Activation::Rep(d),
                ("relu_pow", Some(d)) => Activation::ReluPow(d),
                (k, d) => return Err(schema(format!("node {i}: unknown activation {k} / {d:?}"))),
            };
            if nd.affine.len() != m + 1 {
                return Err(schema(format!("node {i}: affine map needs {} coefficients", m + 1)));
            }
            let affine: Vec<Dd> = match &nd.affine_hex {
                Some(hex) => {
                    if hex.len() != m + 1 {
                        return Err(schema(format!("node {i}: affine_hex length")));
                    }
                    hex.iter()
                        .map(|s| {
                            let (h, l) = s.split_once(':').unwrap_or((s.as_str(), "0x0"));
                            match (f64_from_hex(h), f64_from_hex(l)) {
                                (Some(h), Some(l)) => Ok(Dd::from_parts(h, l)),
                                _ => Err(schema(format!("node {i}: malformed affine hex {s:?}"))),
                            }
                        })
                        .collect::<Result<_>>()?
                }
                None => nd.affine.iter().map(|&x| Dd::from_f64(x)).collect(),
            };
            if affine.iter().any(|x| !x.is_finite()) {
                return Err(schema(format!("node {i}: non-finite affine coefficient")));
            }
            for &c in &nd.children {
                if c >= count {
                    return Err(schema(format!("node {i}: child {c} out of range")));
                }
            }
            if nd.layer == m && !nd.children.is_empty() {
                return Err(schema(format!("terminal node {i} has children")));
            }
            if nd.layer < m && nd.children.is_empty() {
                return Err(schema(format!("inner node {i} has no children")));
            }
            nodes.push(NetworkNode {
                id: i,
                layer: nd.layer,
                activation,
                affine,
                multiplier: nd.mult.to_wide()?,
                children: nd.children,
            });
        }
        for nd in &nodes {
            if nd.children.iter().any(|&c| nodes[c].layer != nd.layer + 1) {
                return Err(schema(format!("node {}: edge skips or reverses a layer", nd.id)));
            }
        }
        let volume = edges_spec(&self.heads.volume)?;
        let moments = self.heads.moments.iter().map(|h| edges_spec(h)).collect::<Result<Vec<_>>>()?;
        if moments.len() != n {
            return Err(schema(format!("{} moment heads for N = {n}", moments.len())));
        }
        for e in volume.iter().chain(moments.iter().flatten()) {
            if e.node >= count || nodes[e.node].layer != 1 {
                return Err(schema(format!("head edge to node {} is not a first-layer node", e.node)));
            }
        }
        let meta = self.meta.unwrap_or_else(|| {
            let mut sizes = vec![0; m];
            for nd in &nodes {
                sizes[nd.layer - 1] += 1;
            }
            NetworkMeta {
                basis_hash: String::new(),
                perturbation: None,
                build_timestamp: None,
                layer_sizes_before_dedup: sizes,
                merged_vertices: Vec::new(),
                image_box: Vec::new(),
            }
        });
        Ok(NetworkSpec {
            n,
            m,
            nodes,
            heads: Heads { volume, moments },
            meta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ilt::evaluate_all;
    use crate::linalg::Matrix;

    fn worked() -> MeasurementSystem {
        let a = Matrix::from_rows(&[vec![0.0, 0.0, 1.0], vec![0.5, 0.866, 0.0]]).unwrap();
        MeasurementSystem::decompose(&a).unwrap()
    }

    #[test]
    fn worked_example_forward() {
        let net = compile(&worked()).unwrap();
        let out = net.forward(&[0.5, 0.0933]).unwrap();
        assert!((out.evaluation.volume.to_f64() - 0.2155).abs() < 1e-4);
        assert_eq!(out.activity.len(), 2);
    }

    #[test]
    fn worked_example_layer_sizes() {
        let sys = worked();
        let mut b = Builder {
            m: 2,
            nodes: Vec::new(),
            heads: HashMap::new(),
            next_in_chain: Vec::new(),
            created: vec![0; 2],
        };
        let groups = VertexGroups::new(&sys.vertex_projections());
        for (_, key) in groups.volume_roots() {
            let term = groups.root_term(&key);
            let a: Vec<Affine> = term.a.iter().map(|x| vec![*x, Dd::ZERO, Dd::ZERO]).collect();
            b.build(&a, &term.b, Wide::ONE, 1).unwrap();
        }
        assert_eq!(b.created, vec![4, 6]);
    }

    #[test]
    fn single_layer_is_lasserre_shape() {
        let v = Matrix::from_columns(&[vec![0.48, 0.6, 0.64]]).unwrap();
        let sys = MeasurementSystem::from_orthonormal_basis(&v).unwrap();
        let net = compile(&sys).unwrap();
        let s = net.stats();
        assert!(s.nodes_per_layer[0] >= 4);
        let vol_nodes: Vec<&NetworkNode> = net.heads.volume.iter().map(|e| &net.nodes[e.node]).collect();
        assert_eq!(vol_nodes.len(), 4);
        for nd in vol_nodes {
            assert_eq!(nd.activation, Activation::Rep(2));
            assert!(nd.children.is_empty());
        }
        assert!(s.dedup_ratio <= 1.0);
    }

    #[test]
    fn matches_engine_and_round_trips() {
        let sys = worked();
        let net = compile(&sys).unwrap();
        for t in [[0.5, 0.0933], [0.2, 0.3], [0.9, 0.01], [0.0, 0.0]] {
            let e = evaluate_all(&sys, &t).unwrap();
            let f = net.forward(&t).unwrap().evaluation;
            let close = |x: Wide, y: Wide| (x - y).abs().to_f64() <= 1e-12 * x.abs().to_f64().max(1e-300);
            assert!(close(e.volume, f.volume) || e.volume.is_zero() && f.volume.is_zero());
            for (a, b) in e.moments.iter().zip(&f.moments) {
                assert!(close(*a, *b) || a.is_zero() && b.is_zero());
            }
        }
        let back = NetworkSpec::from_json(&net.to_json()).unwrap();
        assert_eq!(back, net);
        assert_eq!(back.to_json(), net.to_json());
    }

    #[test]
    fn lowering_preserves_outputs() {
        let v = Matrix::from_columns(&[vec![0.48, 0.6, 0.64]]).unwrap();
        let net = compile(&MeasurementSystem::from_orthonormal_basis(&v).unwrap()).unwrap();
        let low = net.lower_rep();
        assert!(low.nodes.iter().all(|n| !matches!(n.activation, Activation::Rep(_))));
        let a = net.forward(&[0.7]).unwrap().evaluation;
        let b = low.forward(&[0.7]).unwrap().evaluation;
        assert_eq!(a, b);
    }

    #[test]
    fn reflected_layers_match_engine() {
        let a = Matrix::from_rows(&[vec![0.3, -1.2, 0.7, 2.0, 0.1], vec![1.1, 0.4, -0.5, 0.2, 0.9]]).unwrap();
        let sys = MeasurementSystem::decompose(&a).unwrap();
        let net = compile(&sys).unwrap();
        let low = net.lower_rep();
        let t = sys.equivalent_measurement(&a.matvec(&[0.1, 0.2, 0.05, 0.3, 0.15])).unwrap();
        let p = sys.vertex_projections();
        for mask in 0..4 {
            let e = crate::ilt::evaluate_projections_on(&p, &t, Sides(mask)).unwrap();
            for n in [&net, &low] {
                let f = n.forward_on(&t, Sides(mask)).unwrap().evaluation;
                let tol = 1e-12 * e.volume.to_f64();
                assert!((e.volume - f.volume).abs().to_f64() < tol, "mask {mask}");
                for (x, y) in e.moments.iter().zip(&f.moments) {
                    assert!((*x - *y).abs().to_f64() < tol, "mask {mask}");
                }
            }
        }
    }

    #[test]
    fn below_all_shifts_is_zero() {
        let net = compile(&worked()).unwrap();
        let out = net.forward(&[-0.5, -0.5]).unwrap();
        assert!(out.evaluation.volume.is_zero());
        assert!(out.evaluation.moments.iter().all(|m| m.is_zero()));
        assert_eq!(out.activity[1].evaluated, 0);
    }

    #[test]
    fn document_errors() {
        let json = compile(&worked()).unwrap().to_json();
        assert!(matches!(NetworkSpec::from_json(&json[..json.len() / 2]), Err(Error::CorruptDocument(_))));
        let wrong = json.replacen("\"version\": 1", "\"version\": 7", 1);
        assert!(matches!(NetworkSpec::from_json(&wrong), Err(Error::SchemaMismatch(_))));
        assert!(matches!(NetworkSpec::from_json("{\"version\": \"x\"}"), Err(Error::SchemaMismatch(_))));
    }
}
